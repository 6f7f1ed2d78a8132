//! The traveling-wave functional and its continuation problem.
//!
//! Headways of a wave are `h_n(t) = u(n - c t)` for an `N`-periodic profile
//! `u`. Substituting into the model gives
//! `c^2 tau u'' - c u' - V(u(xi + 1)) + V(u(xi)) + d = 0`, bordered by the
//! mass condition `L - sum_n u(n) = 0` and a phase condition against an
//! anchor profile `u_*`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::spectral::{fourier_coefficients, tail_energy_fraction, wavenumber, Grid};
use crate::continuation::{newton_fixed_parameter, ContinuationProblem};
use crate::error::{Error, Result};
use crate::model::{
    self, optimal_velocity, optimal_velocity_slope, HeadwayProfile, MicroState, ModelParams,
};
use crate::ode::Integrator;

/// Energy share of the top third of the spectrum of `V(u)` above which the
/// grid is considered under-resolved.
pub const ALIASING_LIMIT: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TravelingWave {
    pub n_cars: usize,
    pub points_per_car: usize,
    /// Profile on the grid `xi_j = j / points_per_car`.
    pub u: Vec<f64>,
    pub c: f64,
    pub d: f64,
    pub v0: f64,
}

impl TravelingWave {
    /// Constant profile `L / N`: free flow viewed as a wave of speed `c`.
    pub fn constant(params: &ModelParams, points_per_car: usize, c: f64) -> Self {
        Self {
            n_cars: params.n_cars,
            points_per_car,
            u: vec![params.mean_headway(); params.n_cars * points_per_car],
            c,
            d: 0.0,
            v0: params.v0,
        }
    }

    pub fn u_hat(&self) -> Vec<[f64; 2]> {
        fourier_coefficients(&self.u)
            .iter()
            .map(|z| [z.re, z.im])
            .collect()
    }

    pub fn at_integers(&self) -> Vec<f64> {
        self.u.iter().step_by(self.points_per_car).copied().collect()
    }

    /// Standard deviation of the headways at integer `xi`.
    pub fn sigma(&self) -> f64 {
        model::sigma(&HeadwayProfile::new(self.at_integers()))
    }

    /// Unknown vector `[u..., c, d, v0]`.
    pub fn to_unknowns(&self) -> Vec<f64> {
        let mut z = self.u.clone();
        z.extend_from_slice(&[self.c, self.d, self.v0]);
        z
    }

    pub fn from_unknowns(z: &[f64], n_cars: usize, points_per_car: usize) -> Result<Self> {
        let g = n_cars * points_per_car;
        if z.len() != g + 3 {
            return Err(Error::DimensionMismatch {
                expected: g + 3,
                got: z.len(),
            });
        }
        Ok(Self {
            n_cars,
            points_per_car,
            u: z[..g].to_vec(),
            c: z[g],
            d: z[g + 1],
            v0: z[g + 2],
        })
    }

    pub fn params(&self, base: &ModelParams) -> ModelParams {
        base.with_v0(self.v0)
    }
}

/// Continuation problem for `F^tw` in the unknowns `[u..., c, d, v0]`.
#[derive(Debug, Clone)]
pub struct WaveProblem {
    pub params: ModelParams,
    pub grid: Grid,
    /// Phase anchor `u_*`; moved to each accepted profile.
    pub anchor: Vec<f64>,
    /// Branch ends once `sigma` drops below this value.
    pub sigma_floor: f64,
    /// Judges stability of accepted points with a Floquet computation.
    pub stability: Option<super::floquet::FloquetSettings>,
    aliasing_warned: bool,
}

impl WaveProblem {
    pub fn new(params: ModelParams, points_per_car: usize, anchor: Vec<f64>) -> Result<Self> {
        params.validate()?;
        let grid = Grid::new(params.n_cars, points_per_car)?;
        if anchor.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: anchor.len(),
            });
        }
        Ok(Self {
            params,
            grid,
            anchor,
            sigma_floor: 0.0,
            stability: None,
            aliasing_warned: false,
        })
    }

    fn wave(&self, z: &[f64]) -> TravelingWave {
        TravelingWave {
            n_cars: self.grid.n_cars,
            points_per_car: self.grid.points_per_car,
            u: z[..self.grid.len()].to_vec(),
            c: z[self.grid.len()],
            d: z[self.grid.len() + 1],
            v0: z[self.grid.len() + 2],
        }
    }

    /// Component 1 of `F^tw` alone, for a given profile and scalars.
    pub fn wave_equation(&self, u: &[f64], c: f64, d: f64, v0: f64) -> DVector<f64> {
        let p = self.params.with_v0(v0);
        let g = self.grid.len();
        let uv = DVector::from_column_slice(u);
        let tau = p.tau();
        let d1 = &self.grid.d1 * &uv;
        let d2 = &self.grid.d2 * &uv;
        DVector::from_fn(g, |j, _| {
            let ahead = u[self.grid.shifted_index(j, 1)];
            c * c * tau * d2[j] - c * d1[j] - optimal_velocity(ahead, &p)
                + optimal_velocity(u[j], &p)
                + d
        })
    }
}

impl ContinuationProblem for WaveProblem {
    fn dim(&self) -> usize {
        self.grid.len() + 3
    }

    fn residual(&self, z: &[f64]) -> Result<DVector<f64>> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: z.len(),
            });
        }
        let g = self.grid.len();
        let (u, c, d, v0) = (&z[..g], z[g], z[g + 1], z[g + 2]);
        let mut r = DVector::zeros(g + 2);
        r.rows_mut(0, g).copy_from(&self.wave_equation(u, c, d, v0));
        r[g] = self.params.road_length - self.grid.at_integers(u).iter().sum::<f64>();
        let du = &self.grid.d1 * DVector::from_column_slice(u);
        let w = self.grid.n_cars as f64 / g as f64;
        r[g + 1] = w * (0..g).map(|j| du[j] * (self.anchor[j] - u[j])).sum::<f64>();
        Ok(r)
    }

    fn jacobian(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        let g = self.grid.len();
        let ppc = self.grid.points_per_car;
        let (u, c, v0) = (&z[..g], z[g], z[g + 2]);
        let p = self.params.with_v0(v0);
        let tau = p.tau();
        let uv = DVector::from_column_slice(u);
        let d1u = &self.grid.d1 * &uv;
        let d2u = &self.grid.d2 * &uv;
        let mut j = DMatrix::zeros(g + 2, g + 3);
        j.view_mut((0, 0), (g, g))
            .copy_from(&(&self.grid.d2 * (c * c * tau) - &self.grid.d1 * c));
        for row in 0..g {
            let ahead = self.grid.shifted_index(row, 1);
            j[(row, ahead)] -= optimal_velocity_slope(u[ahead], &p);
            j[(row, row)] += optimal_velocity_slope(u[row], &p);
            j[(row, g)] = 2.0 * c * tau * d2u[row] - d1u[row];
            j[(row, g + 1)] = 1.0;
            j[(row, g + 2)] = (optimal_velocity(u[row], &p) - optimal_velocity(u[ahead], &p)) / v0;
        }
        for n in 0..self.grid.n_cars {
            j[(g, n * ppc)] = -1.0;
        }
        let w = self.grid.n_cars as f64 / g as f64;
        let gap = DVector::from_fn(g, |k, _| self.anchor[k] - u[k]);
        let phase = self.grid.d1.tr_mul(&gap) - &d1u;
        for l in 0..g {
            j[(g + 1, l)] = w * phase[l];
        }
        Ok(j)
    }

    fn weights(&self) -> DVector<f64> {
        let g = self.grid.len();
        DVector::from_fn(g + 3, |i, _| if i < g { 1.0 / g as f64 } else { 1.0 })
    }

    fn accept(&mut self, z: &[f64]) {
        let g = self.grid.len();
        self.anchor = z[..g].to_vec();
        if !self.aliasing_warned {
            let p = self.params.with_v0(z[g + 2]);
            let vu: Vec<f64> = z[..g].iter().map(|&x| optimal_velocity(x, &p)).collect();
            let tail = tail_energy_fraction(&vu);
            if tail > ALIASING_LIMIT {
                log::warn!(
                    "wave grid may be under-resolved: {tail:.2e} of the energy of V(u) sits in the top third of the spectrum"
                );
                self.aliasing_warned = true;
            }
        }
    }

    fn stable(&self, z: &[f64]) -> Option<bool> {
        let settings = self.stability.as_ref()?;
        let wave = self.wave(z);
        match super::floquet::floquet_spectrum(&wave, &self.params, settings) {
            Ok(report) => Some(report.is_stable()),
            Err(e) => {
                log::warn!("floquet analysis failed at v0 = {}: {e}", wave.v0);
                None
            }
        }
    }

    fn should_stop(&self, z: &[f64]) -> Option<String> {
        let wave = self.wave(z);
        if wave.u.iter().any(|&x| x <= 0.0) {
            return Some("profile has a non-positive headway".into());
        }
        let s = wave.sigma();
        (s < self.sigma_floor).then(|| format!("sigma {s:.3e} fell below the floor"))
    }
}

/// Newton polish at fixed `v0` with the wave itself as phase anchor.
pub fn polish(
    wave: &TravelingWave,
    params: &ModelParams,
    tol: f64,
    max_iter: usize,
) -> Result<(TravelingWave, f64)> {
    let problem = WaveProblem::new(params.with_v0(wave.v0), wave.points_per_car, wave.u.clone())?;
    let (z, res) = newton_fixed_parameter(&problem, &wave.to_unknowns(), tol, max_iter)?;
    Ok((
        TravelingWave::from_unknowns(&z, wave.n_cars, wave.points_per_car)?,
        res,
    ))
}

/// Velocity profile `Y` of a wave from `-c tau Y' + Y = V(u)`, solved mode
/// by mode.
pub fn velocity_profile(wave: &TravelingWave, params: &ModelParams) -> Vec<f64> {
    use rustfft::num_complex::Complex64;
    use rustfft::FftPlanner;
    let p = wave.params(params);
    let g = wave.u.len();
    let vu: Vec<f64> = wave.u.iter().map(|&x| optimal_velocity(x, &p)).collect();
    let mut coeffs = fourier_coefficients(&vu);
    let period = wave.n_cars as f64;
    for (k, z) in coeffs.iter_mut().enumerate() {
        if k == g / 2 {
            continue;
        }
        let kappa = 2.0 * std::f64::consts::PI * wavenumber(k, g) as f64 / period;
        *z /= Complex64::new(1.0, -p.tau() * wave.c * kappa);
    }
    FftPlanner::new().plan_fft_inverse(g).process(&mut coeffs);
    coeffs.iter().map(|z| z.re).collect()
}

/// Positions from cumulative headways (car 0 at the origin) and velocities
/// from the wave's velocity profile, both at integer `xi`.
pub fn microstate_from_wave(wave: &TravelingWave, params: &ModelParams) -> Result<MicroState> {
    let p = wave.params(params);
    if wave.n_cars != p.n_cars {
        return Err(Error::DimensionMismatch {
            expected: p.n_cars,
            got: wave.n_cars,
        });
    }
    let h = wave.at_integers();
    let mut positions = Vec::with_capacity(h.len());
    let mut x = 0.0;
    for &gap in &h {
        positions.push(x);
        x += gap;
    }
    let y = velocity_profile(wave, params);
    let velocities = y.iter().step_by(wave.points_per_car).copied().collect();
    MicroState::new(positions, velocities, &p)
}

/// Settings for extracting a first wave from a long microsimulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialWaveSettings {
    pub v0: f64,
    /// Amplitude of the sinusoidal start perturbation.
    pub amplitude: f64,
    /// Time allowed for the jam to form and settle.
    pub transient: f64,
    /// Window over which the phase drift of the first Fourier mode is fit.
    pub drift_window: f64,
    pub drift_samples: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

impl Default for InitialWaveSettings {
    fn default() -> Self {
        Self {
            v0: 1.0,
            amplitude: 3.0,
            transient: 3000.0,
            drift_window: 20.0,
            drift_samples: 200,
            newton_tol: 1e-10,
            newton_max_iter: 30,
        }
    }
}

/// Wave speed from the drift of the first Fourier mode of the headways:
/// `h_n(t) = u(n - c t)` rotates that mode's phase at rate `-2 pi c / N`.
pub fn drift_speed(snapshots: &[(f64, HeadwayProfile)]) -> Result<f64> {
    if snapshots.len() < 2 {
        return Err(Error::invalid("drift estimate needs at least two snapshots"));
    }
    let n = snapshots[0].1.len();
    let mut phases = Vec::with_capacity(snapshots.len());
    for (_, h) in snapshots {
        let m1 = fourier_coefficients(h.as_slice())[1];
        if m1.norm() < 1e-8 {
            return Err(Error::Degenerate(
                "no jam: first headway mode vanishes".into(),
            ));
        }
        phases.push(m1.arg());
    }
    for i in 1..phases.len() {
        let mut dp = phases[i] - phases[i - 1];
        dp -= (dp / (2.0 * std::f64::consts::PI)).round() * 2.0 * std::f64::consts::PI;
        phases[i] = phases[i - 1] + dp;
    }
    let ts: Vec<f64> = snapshots.iter().map(|(t, _)| *t).collect();
    let k = ts.len() as f64;
    let tm = ts.iter().sum::<f64>() / k;
    let pm = phases.iter().sum::<f64>() / k;
    let num: f64 = ts.iter().zip(&phases).map(|(t, p)| (t - tm) * (p - pm)).sum();
    let den: f64 = ts.iter().map(|t| (t - tm) * (t - tm)).sum();
    let rate = num / den;
    Ok(-rate * n as f64 / (2.0 * std::f64::consts::PI))
}

/// Runs the microsystem into its jam, estimates `c`, fills the fine grid by
/// sampling the headways at `points_per_car` sub-times of one relabeling
/// period, and polishes with Newton.
pub fn initial_wave(
    params: &ModelParams,
    points_per_car: usize,
    settings: &InitialWaveSettings,
    integrator: &dyn Integrator,
) -> Result<TravelingWave> {
    let p = params.with_v0(settings.v0);
    p.validate()?;
    let n = p.n_cars;
    let start = model::sinusoidal_state(&p, settings.amplitude);
    let settled = model::evolve_with(integrator, &start, settings.transient, &p)?;
    let k = settings.drift_samples.max(2);
    let times: Vec<f64> = (0..k)
        .map(|i| settings.drift_window * i as f64 / (k - 1) as f64)
        .collect();
    let snaps = model::evolve_snapshots(integrator, &settled, &times, &p)?;
    let series: Vec<(f64, HeadwayProfile)> = times
        .iter()
        .zip(&snaps)
        .map(|(&t, s)| (t, model::headways(s, &p)))
        .collect();
    let c = drift_speed(&series)?;
    if c.abs() < 1e-6 {
        return Err(Error::Degenerate(format!("jam does not drift (c = {c:.3e})")));
    }
    let sub: Vec<f64> = (0..points_per_car)
        .map(|m| m as f64 / (points_per_car as f64 * c.abs()))
        .collect();
    let states = model::evolve_snapshots(integrator, &settled, &sub, &p)?;
    let g = n * points_per_car;
    let mut u = vec![0.0; g];
    // h_n(t_m) = u(n - c t_m) = u(n - sign(c) m / ppc)
    for (m, s) in states.iter().enumerate() {
        let h = model::headways(s, &p);
        for (car, &v) in h.as_slice().iter().enumerate() {
            let j = (car * points_per_car) as isize - c.signum() as isize * m as isize;
            u[j.rem_euclid(g as isize) as usize] = v;
        }
    }
    let raw = TravelingWave {
        n_cars: n,
        points_per_car,
        u,
        c,
        d: 0.0,
        v0: settings.v0,
    };
    let (wave, res) = polish(&raw, &p, settings.newton_tol, settings.newton_max_iter)?;
    log::info!(
        "initial wave at v0 = {}: c = {:.6}, sigma = {:.4}, residual {res:.2e}",
        wave.v0,
        wave.c,
        wave.sigma()
    );
    Ok(wave)
}
