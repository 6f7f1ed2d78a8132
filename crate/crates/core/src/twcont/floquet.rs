//! Floquet spectra of traveling waves.
//!
//! A wave returns to itself after `t_per = 1/|c|` up to relabeling cars by
//! one index, so the monodromy is `P Y(t_per)` with `Y` the fundamental
//! matrix of the variational equations and `P` the relabeling.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::wave::{microstate_from_wave, TravelingWave};
use crate::error::{Error, Result};
use crate::model::{ModelParams, TrafficSystem};
use crate::ode::{Dopri5, Integrator, OdeSystem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FloquetSettings {
    /// Exponents with modulus at or below this count as zero.
    pub zero_tol: f64,
    /// Tolerance of the variational integration.
    pub integration_tol: f64,
}

impl Default for FloquetSettings {
    fn default() -> Self {
        Self {
            zero_tol: 1e-5,
            integration_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloquetReport {
    pub t_per: f64,
    /// `[re, im]`, sorted by decreasing real part of the exponent.
    pub multipliers: Vec<[f64; 2]>,
    /// Principal `ln(mu) / t_per`, same order as `multipliers`.
    pub exponents: Vec<[f64; 2]>,
    pub zero_tol: f64,
    pub zero_multiplicity: usize,
    /// Smallest modulus among the nonzero exponents.
    pub gap: f64,
}

impl FloquetReport {
    fn nonzero(&self) -> impl Iterator<Item = &[f64; 2]> {
        self.exponents
            .iter()
            .filter(move |e| e[0].hypot(e[1]) > self.zero_tol)
    }

    /// Every nonzero exponent has negative real part.
    pub fn is_stable(&self) -> bool {
        self.nonzero().all(|e| e[0] < 0.0)
    }

    /// Largest real part among the nonzero exponents.
    pub fn leading_rate(&self) -> f64 {
        self.nonzero().map(|e| e[0]).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// State plus one tangent vector, `[x, y, dx, dy]`.
struct Tangent<'a> {
    base: &'a TrafficSystem,
}

impl OdeSystem for Tangent<'_> {
    fn dim(&self) -> usize {
        2 * self.base.dim()
    }

    fn rhs(&self, t: f64, s: &[f64], out: &mut [f64]) {
        let p = self.base.params();
        let n = p.n_cars;
        let m = 2 * n;
        self.base.rhs(t, &s[..m], &mut out[..m]);
        let (x, dx, dy) = (&s[..n], &s[m..m + n], &s[m + n..]);
        for i in 0..n {
            let next = (i + 1) % n;
            let gap = (x[next] - x[i]).rem_euclid(p.road_length);
            let slope = crate::model::optimal_velocity_slope(gap, p);
            out[m + i] = dy[i];
            out[m + n + i] = p.inv_tau * (slope * (dx[next] - dx[i]) - dy[i]);
        }
    }
}

/// Fundamental matrix of the variational equations along the trajectory
/// from `state` over time `t`.
pub fn fundamental_matrix(
    state: &[f64],
    params: &ModelParams,
    t: f64,
    integrator: &dyn Integrator,
) -> Result<DMatrix<f64>> {
    let m = state.len();
    if m != 2 * params.n_cars {
        return Err(Error::DimensionMismatch {
            expected: 2 * params.n_cars,
            got: m,
        });
    }
    let base = TrafficSystem::new(*params);
    let cols: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let sys = Tangent { base: &base };
            let mut y = vec![0.0; 2 * m];
            y[..m].copy_from_slice(state);
            y[m + i] = 1.0;
            integrator.integrate(&sys, 0.0, t, &mut y)?;
            Ok(y[m..].to_vec())
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(m, m, |r, c| cols[c][r]))
}

/// Row permutation taking car `n` of the result from car `n + shift`.
fn relabel_rows(y: &DMatrix<f64>, n: usize, shift: isize) -> DMatrix<f64> {
    DMatrix::from_fn(y.nrows(), y.ncols(), |r, c| {
        let block = r / n * n;
        let car = ((r % n) as isize + shift).rem_euclid(n as isize) as usize;
        y[(block + car, c)]
    })
}

pub fn floquet_spectrum(
    wave: &TravelingWave,
    params: &ModelParams,
    settings: &FloquetSettings,
) -> Result<FloquetReport> {
    if wave.c.abs() < 1e-8 {
        return Err(Error::invalid(format!(
            "wave speed {:.3e} gives no finite relabeling period",
            wave.c
        )));
    }
    let p = wave.params(params);
    let t_per = 1.0 / wave.c.abs();
    let state = microstate_from_wave(wave, params)?;
    let mut flat = state.to_flat();
    // unwrap positions so the tangent system sees monotone cars
    for i in 1..p.n_cars {
        while flat[i] < flat[i - 1] {
            flat[i] += p.road_length;
        }
    }
    let integrator = Dopri5::with_tolerance(settings.integration_tol);
    let y = fundamental_matrix(&flat, &p, t_per, &integrator)?;
    // h_n(t_per) = u(n - c t_per) = h_{n - sign(c)}(0)
    let shift = if wave.c < 0.0 { -1 } else { 1 };
    let monodromy = relabel_rows(&y, p.n_cars, shift);
    Ok(report_from_multipliers(
        monodromy.complex_eigenvalues().iter().map(|z| [z.re, z.im]),
        t_per,
        settings.zero_tol,
    ))
}

pub fn report_from_multipliers(
    multipliers: impl IntoIterator<Item = [f64; 2]>,
    t_per: f64,
    zero_tol: f64,
) -> FloquetReport {
    let mut pairs: Vec<([f64; 2], [f64; 2])> = multipliers
        .into_iter()
        .map(|mu| {
            let r = mu[0].hypot(mu[1]);
            let e = [r.ln() / t_per, mu[1].atan2(mu[0]) / t_per];
            (mu, e)
        })
        .collect();
    pairs.sort_by(|a, b| b.1[0].total_cmp(&a.1[0]).then(b.1[1].total_cmp(&a.1[1])));
    let modulus = |e: &[f64; 2]| e[0].hypot(e[1]);
    let zero_multiplicity = pairs.iter().filter(|(_, e)| modulus(e) <= zero_tol).count();
    let gap = pairs
        .iter()
        .map(|(_, e)| modulus(e))
        .filter(|&m| m > zero_tol)
        .fold(f64::INFINITY, f64::min);
    FloquetReport {
        t_per,
        multipliers: pairs.iter().map(|p| p.0).collect(),
        exponents: pairs.iter().map(|p| p.1).collect(),
        zero_tol,
        zero_multiplicity,
        gap,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Complex;
    use std::f64::consts::PI;

    #[test]
    fn relabeling_moves_rows_within_blocks() {
        let y = DMatrix::from_fn(6, 1, |r, _| r as f64);
        let out = relabel_rows(&y, 3, -1);
        assert_eq!(out.column(0).as_slice(), &[2.0, 0.0, 1.0, 5.0, 3.0, 4.0]);
    }

    /// Free flow linearizes to a circulant system; mode `e^{i theta n}` has
    /// `lambda^2 + k lambda - k V' (e^{i theta} - 1) = 0`.
    #[test]
    fn free_flow_matches_circulant_eigenvalues() {
        let p = ModelParams {
            n_cars: 8,
            road_length: 16.0,
            v0: 0.9,
            ..Default::default()
        };
        let wave = TravelingWave::constant(&p, 4, -0.8);
        let report = floquet_spectrum(&wave, &p, &FloquetSettings::default()).unwrap();
        let k = p.inv_tau;
        let slope = crate::model::optimal_velocity_slope(p.mean_headway(), &p);
        let mut expected = Vec::new();
        for m in 0..p.n_cars {
            let th = 2.0 * PI * m as f64 / p.n_cars as f64;
            let q = Complex::new(th.cos() - 1.0, th.sin()) * (k * slope);
            let disc = (Complex::new(k * k, 0.0) + q * 4.0).sqrt();
            for s in [1.0, -1.0] {
                expected.push(((disc * s - k) * 0.5).re);
            }
        }
        expected.sort_by(|a, b| b.total_cmp(a));
        let got: Vec<f64> = report.exponents.iter().map(|e| e[0]).collect();
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-8, "{g} vs {e}");
        }
        assert_eq!(report.zero_multiplicity, 1);
        assert!(report.is_stable());
    }
}
