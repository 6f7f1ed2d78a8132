//! Fourier collocation on an N-periodic grid with an integer number of
//! points per car, so the unit shift is an exact grid permutation.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Grid {
    pub n_cars: usize,
    pub points_per_car: usize,
    /// First-derivative matrix; the Nyquist mode is dropped.
    pub d1: DMatrix<f64>,
    /// Second-derivative matrix.
    pub d2: DMatrix<f64>,
}

impl Grid {
    pub fn new(n_cars: usize, points_per_car: usize) -> Result<Self> {
        let n = n_cars * points_per_car;
        if n_cars < 2 || points_per_car < 2 || n % 2 != 0 {
            return Err(Error::invalid(format!(
                "grid needs at least 2 cars and an even number of points, got {n_cars} x {points_per_car}"
            )));
        }
        let mut d1 = DMatrix::zeros(n, n);
        let mut d2 = DMatrix::zeros(n, n);
        let period = n_cars as f64;
        for l in 0..n {
            let mut e = vec![0.0; n];
            e[l] = 1.0;
            let c1 = spectral_derivative(&e, period, 1);
            let c2 = spectral_derivative(&e, period, 2);
            for j in 0..n {
                d1[(j, l)] = c1[j];
                d2[(j, l)] = c2[j];
            }
        }
        Ok(Self {
            n_cars,
            points_per_car,
            d1,
            d2,
        })
    }

    pub fn len(&self) -> usize {
        self.n_cars * self.points_per_car
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.points_per_car as f64
    }

    pub fn xi(&self, j: usize) -> f64 {
        j as f64 * self.spacing()
    }

    /// `u(ξ + shift)` on the grid for an integer number of cars.
    pub fn shift(&self, u: &[f64], shift: isize) -> Vec<f64> {
        let n = u.len() as isize;
        let off = shift * self.points_per_car as isize;
        (0..n).map(|j| u[(j + off).rem_euclid(n) as usize]).collect()
    }

    /// Grid index of `ξ + shift` for grid index `j`.
    pub fn shifted_index(&self, j: usize, shift: isize) -> usize {
        let n = self.len() as isize;
        (j as isize + shift * self.points_per_car as isize).rem_euclid(n) as usize
    }

    /// Values at the integer positions ξ = 0, 1, ..., N-1.
    pub fn at_integers(&self, u: &[f64]) -> Vec<f64> {
        u.iter().step_by(self.points_per_car).copied().collect()
    }

    pub fn derivative(&self, u: &DVector<f64>, order: usize) -> DVector<f64> {
        match order {
            1 => &self.d1 * u,
            2 => &self.d2 * u,
            _ => DVector::from_vec(spectral_derivative(u.as_slice(), self.n_cars as f64, order)),
        }
    }
}

/// Fourier coefficients scaled by `1/n`.
pub fn fourier_coefficients(u: &[f64]) -> Vec<Complex64> {
    let n = u.len();
    let mut buf: Vec<Complex64> = u.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf.iter().map(|z| z / n as f64).collect()
}

fn inverse(coeffs: &[Complex64]) -> Vec<f64> {
    let n = coeffs.len();
    let mut buf = coeffs.to_vec();
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|z| z.re).collect()
}

/// Signed integer wavenumber of FFT bin `k` for length `n`.
pub fn wavenumber(k: usize, n: usize) -> i64 {
    if k <= n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// `order`-th derivative of the trigonometric interpolant with period
/// `period`. For odd orders the Nyquist mode is zeroed.
pub fn spectral_derivative(u: &[f64], period: f64, order: usize) -> Vec<f64> {
    let n = u.len();
    let mut c = fourier_coefficients(u);
    for (k, z) in c.iter_mut().enumerate() {
        let m = wavenumber(k, n);
        if n % 2 == 0 && k == n / 2 && order % 2 == 1 {
            *z = Complex64::new(0.0, 0.0);
            continue;
        }
        let ik = Complex64::new(0.0, 2.0 * PI * m as f64 / period);
        *z *= ik.powu(order as u32);
    }
    inverse(&c)
}

/// Trigonometric interpolation of `n` equispaced samples onto `n * factor`
/// points; the Nyquist coefficient is split symmetrically.
pub fn upsample(u: &[f64], factor: usize) -> Vec<f64> {
    let n = u.len();
    let big = n * factor;
    let c = fourier_coefficients(u);
    let mut out = vec![Complex64::new(0.0, 0.0); big];
    for (k, z) in c.iter().enumerate() {
        let m = wavenumber(k, n);
        if n % 2 == 0 && k == n / 2 {
            out[k] += z * 0.5;
            out[big - k] += z * 0.5;
            continue;
        }
        let idx = if m >= 0 { m as usize } else { (big as i64 + m) as usize };
        out[idx] = *z;
    }
    inverse(&out)
}

/// Share of spectral energy in the top third of the resolved wavenumbers.
pub fn tail_energy_fraction(u: &[f64]) -> f64 {
    let n = u.len();
    let c = fourier_coefficients(u);
    let cutoff = (n / 2) as i64 * 2 / 3;
    let mut total = 0.0;
    let mut tail = 0.0;
    for (k, z) in c.iter().enumerate() {
        let m = wavenumber(k, n);
        if m == 0 {
            continue;
        }
        let e = z.norm_sqr();
        total += e;
        if m.abs() > cutoff {
            tail += e;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        tail / total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_matrices_differentiate_trig_polynomials() {
        let g = Grid::new(6, 4).unwrap();
        let n = g.len();
        let w = 2.0 * PI / 6.0;
        let u = DVector::from_fn(n, |j, _| (3.0 * w * g.xi(j)).sin() + 0.5 * (w * g.xi(j)).cos());
        let du = g.derivative(&u, 1);
        let ddu = g.derivative(&u, 2);
        for j in 0..n {
            let x = g.xi(j);
            let d1 = 3.0 * w * (3.0 * w * x).cos() - 0.5 * w * (w * x).sin();
            let d2 = -9.0 * w * w * (3.0 * w * x).sin() - 0.5 * w * w * (w * x).cos();
            assert!((du[j] - d1).abs() < 1e-12);
            assert!((ddu[j] - d2).abs() < 1e-11);
        }
    }

    #[test]
    fn shifts_are_inverse_permutations() {
        let g = Grid::new(5, 8).unwrap();
        let u: Vec<f64> = (0..g.len()).map(|j| (j as f64 * 0.37).sin()).collect();
        let back = g.shift(&g.shift(&u, 1), -1);
        assert_eq!(back, u);
        assert_eq!(g.shift(&u, 5), u);
        assert_eq!(g.shifted_index(39, 1), 7);
    }

    #[test]
    fn upsampling_reproduces_band_limited_functions() {
        let n = 10;
        let f = |x: f64| 1.0 + (2.0 * PI * x / n as f64).sin() + 0.2 * (6.0 * PI * x / n as f64).cos();
        let u: Vec<f64> = (0..n).map(|i| f(i as f64)).collect();
        let up = upsample(&u, 4);
        for (j, v) in up.iter().enumerate() {
            assert!((v - f(j as f64 / 4.0)).abs() < 1e-13);
        }
        assert!(tail_energy_fraction(&up) < 1e-25);
    }
}
