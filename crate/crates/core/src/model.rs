//! Optimal-velocity car-following model on a ring road.
//!
//! `N` cars with positions `x_n` on a ring of length `L` and velocities `y_n`
//! follow `x_n' = y_n`, `y_n' = (V(x_{n+1} - x_n) - y_n) / tau` with the
//! optimal velocity `V(d) = v0 (tanh(d - h) + tanh(h))`. Car indices are
//! 0-based here; documentation that speaks of "car 10" means index 9.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{Dopri5, Integrator, OdeSystem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    pub n_cars: usize,
    pub road_length: f64,
    pub inv_tau: f64,
    pub safety_distance: f64,
    pub v0: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            n_cars: 30,
            road_length: 60.0,
            inv_tau: 1.7,
            safety_distance: 2.4,
            v0: 1.0,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_cars < 2 {
            return Err(Error::invalid("n_cars must be at least 2"));
        }
        for (name, v) in [
            ("road_length", self.road_length),
            ("inv_tau", self.inv_tau),
            ("safety_distance", self.safety_distance),
            ("v0", self.v0),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn with_v0(mut self, v0: f64) -> Self {
        self.v0 = v0;
        self
    }

    pub fn mean_headway(&self) -> f64 {
        self.road_length / self.n_cars as f64
    }

    pub fn tau(&self) -> f64 {
        1.0 / self.inv_tau
    }
}

pub fn optimal_velocity(d: f64, params: &ModelParams) -> f64 {
    let h = params.safety_distance;
    params.v0 * ((d - h).tanh() + h.tanh())
}

/// `dV/dd`.
pub fn optimal_velocity_slope(d: f64, params: &ModelParams) -> f64 {
    let t = (d - params.safety_distance).tanh();
    params.v0 * (1.0 - t * t)
}

/// Headways `x_{n+1} - x_n` of a profile; indices are cyclic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HeadwayProfile(Vec<f64>);

impl HeadwayProfile {
    pub fn new(headways: Vec<f64>) -> Self {
        Self(headways)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Cyclic rotation: entry `n` of the result is entry `n + shift` of `self`.
    pub fn rotate(&self, shift: isize) -> Self {
        let n = self.0.len() as isize;
        let s = shift.rem_euclid(n) as usize;
        let mut v = self.0.clone();
        v.rotate_left(s);
        Self(v)
    }

    /// Index of the largest headway; ties go to the smallest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate() {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }
}

impl From<Vec<f64>> for HeadwayProfile {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Positions (reduced to `[0, L)`) and velocities of all cars.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroState {
    positions: Vec<f64>,
    velocities: Vec<f64>,
}

impl MicroState {
    pub fn new(positions: Vec<f64>, velocities: Vec<f64>, params: &ModelParams) -> Result<Self> {
        for len in [positions.len(), velocities.len()] {
            if len != params.n_cars {
                return Err(Error::DimensionMismatch {
                    expected: params.n_cars,
                    got: len,
                });
            }
        }
        let l = params.road_length;
        let positions = positions.into_iter().map(|x| x.rem_euclid(l)).collect();
        Ok(Self {
            positions,
            velocities,
        })
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn velocities(&self) -> &[f64] {
        &self.velocities
    }

    pub fn n_cars(&self) -> usize {
        self.positions.len()
    }

    /// Flat `[x_0..x_{N-1}, y_0..y_{N-1}]` layout used by the integrators.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.positions.clone();
        v.extend_from_slice(&self.velocities);
        v
    }

    pub fn from_flat(flat: &[f64], params: &ModelParams) -> Result<Self> {
        let n = params.n_cars;
        if flat.len() != 2 * n {
            return Err(Error::DimensionMismatch {
                expected: 2 * n,
                got: flat.len(),
            });
        }
        Self::new(flat[..n].to_vec(), flat[n..].to_vec(), params)
    }

    /// Relabels cars: car `n` of the result is car `n + shift` of `self`.
    pub fn relabel(&self, shift: isize) -> Self {
        let n = self.positions.len() as isize;
        let s = shift.rem_euclid(n) as usize;
        let mut positions = self.positions.clone();
        let mut velocities = self.velocities.clone();
        positions.rotate_left(s);
        velocities.rotate_left(s);
        Self {
            positions,
            velocities,
        }
    }
}

/// The traffic ODE as an [`OdeSystem`] over the flat state layout.
#[derive(Debug, Clone)]
pub struct TrafficSystem {
    params: ModelParams,
    tanh_h: f64,
}

impl TrafficSystem {
    pub fn new(params: ModelParams) -> Self {
        Self {
            tanh_h: params.safety_distance.tanh(),
            params,
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }
}

impl OdeSystem for TrafficSystem {
    fn dim(&self) -> usize {
        2 * self.params.n_cars
    }

    fn rhs(&self, _t: f64, state: &[f64], d: &mut [f64]) {
        let n = self.params.n_cars;
        let l = self.params.road_length;
        let h = self.params.safety_distance;
        let v0 = self.params.v0;
        let k = self.params.inv_tau;
        let (x, y) = state.split_at(n);
        let (dx, dy) = d.split_at_mut(n);
        for i in 0..n {
            let next = if i + 1 == n { 0 } else { i + 1 };
            let gap = (x[next] - x[i]).rem_euclid(l);
            let v = v0 * ((gap - h).tanh() + self.tanh_h);
            dx[i] = y[i];
            dy[i] = k * (v - y[i]);
        }
    }
}

/// Time derivative of `state` in the flat `[x', y']` layout.
pub fn vector_field(state: &MicroState, params: &ModelParams) -> Result<Vec<f64>> {
    if state.n_cars() != params.n_cars {
        return Err(Error::DimensionMismatch {
            expected: params.n_cars,
            got: state.n_cars(),
        });
    }
    let sys = TrafficSystem::new(*params);
    let mut d = vec![0.0; 2 * params.n_cars];
    sys.rhs(0.0, &state.to_flat(), &mut d);
    Ok(d)
}

/// `Phi_t(state)` with the default adaptive integrator.
pub fn evolve(state: &MicroState, t: f64, params: &ModelParams) -> Result<MicroState> {
    evolve_with(&Dopri5::default(), state, t, params)
}

pub fn evolve_with(
    integrator: &dyn Integrator,
    state: &MicroState,
    t: f64,
    params: &ModelParams,
) -> Result<MicroState> {
    let mut snaps = evolve_snapshots(integrator, state, &[t], params)?;
    Ok(snaps.pop().expect("one snapshot"))
}

/// Integrates one trajectory and returns the state at each of the
/// nondecreasing `times`. Positions stay unreduced while integrating.
pub fn evolve_snapshots(
    integrator: &dyn Integrator,
    state: &MicroState,
    times: &[f64],
    params: &ModelParams,
) -> Result<Vec<MicroState>> {
    if state.n_cars() != params.n_cars {
        return Err(Error::DimensionMismatch {
            expected: params.n_cars,
            got: state.n_cars(),
        });
    }
    let sys = TrafficSystem::new(*params);
    let mut y = unwrap_positions(state, params);
    let mut t = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &target in times {
        if !(target >= t) {
            return Err(Error::invalid(format!(
                "snapshot times must be nonnegative and nondecreasing (got {target} after {t})"
            )));
        }
        integrator.integrate(&sys, t, target, &mut y)?;
        t = target;
        out.push(MicroState::from_flat(&y, params)?);
    }
    Ok(out)
}

/// Flat state with positions made monotone (car `n+1` ahead of car `n`).
fn unwrap_positions(state: &MicroState, params: &ModelParams) -> Vec<f64> {
    let l = params.road_length;
    let x = state.positions();
    let mut flat = Vec::with_capacity(2 * x.len());
    let mut cur = x[0];
    flat.push(cur);
    for i in 1..x.len() {
        cur += (x[i] - x[i - 1]).rem_euclid(l);
        flat.push(cur);
    }
    flat.extend_from_slice(state.velocities());
    flat
}

pub fn headways(state: &MicroState, params: &ModelParams) -> HeadwayProfile {
    let l = params.road_length;
    let x = state.positions();
    let n = x.len();
    HeadwayProfile(
        (0..n)
            .map(|i| (x[(i + 1) % n] - x[i]).rem_euclid(l))
            .collect(),
    )
}

/// Sample standard deviation (divisor `N - 1`) about the mean headway.
///
/// The mean is taken from the profile itself, which equals `L / N` for any
/// profile whose headways sum to `L`.
pub fn sigma(profile: &HeadwayProfile) -> f64 {
    let v = profile.as_slice();
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let ss: f64 = v.iter().map(|h| (h - mean) * (h - mean)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Rotates `profile` so its largest headway sits at 1-based position `anchor`.
pub fn align(profile: &HeadwayProfile, anchor: usize) -> HeadwayProfile {
    let n = profile.len();
    if n == 0 {
        return profile.clone();
    }
    let target = (anchor.max(1) - 1) % n;
    let argmax = profile.argmax();
    profile.rotate(argmax as isize - target as isize)
}

/// Continuous cyclic shift of the trigonometric interpolant: entry `n` of the
/// result is the interpolant of `profile` at `n + shift`. The Nyquist mode,
/// if any, keeps only its real part.
pub fn shift_profile(profile: &HeadwayProfile, shift: f64) -> HeadwayProfile {
    let n = profile.len();
    if n == 0 {
        return profile.clone();
    }
    let mut planner = FftPlanner::new();
    let mut c: Vec<Complex64> = profile.as_slice().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut c);
    for (k, ck) in c.iter_mut().enumerate() {
        if 2 * k == n {
            *ck *= (PI * shift).cos();
            continue;
        }
        let wave = if 2 * k < n { k as f64 } else { k as f64 - n as f64 };
        *ck *= Complex64::from_polar(1.0, 2.0 * PI * wave * shift / n as f64);
    }
    planner.plan_fft_inverse(n).process(&mut c);
    HeadwayProfile::new(c.iter().map(|z| z.re / n as f64).collect())
}

/// Shifts `profile` continuously so the crest of its first Fourier mode sits
/// at the 1-based `anchor`. Profiles without a first mode are returned as is.
pub fn align_phase(profile: &HeadwayProfile, anchor: usize) -> HeadwayProfile {
    let n = profile.len();
    if n < 2 {
        return profile.clone();
    }
    let (mut re, mut im) = (0.0, 0.0);
    let mut scale = 0.0;
    for (j, &v) in profile.as_slice().iter().enumerate() {
        let angle = 2.0 * PI * j as f64 / n as f64;
        re += v * angle.cos();
        im -= v * angle.sin();
        scale += v.abs();
    }
    if re.hypot(im) <= 1e-12 * scale {
        return profile.clone();
    }
    let crest = -im.atan2(re) * n as f64 / (2.0 * PI);
    let target = ((anchor.max(1) - 1) % n) as f64;
    shift_profile(profile, crest - target)
}

/// `x_n = (n - 1) L / N`, `y_n = V(L / N)`.
pub fn free_flow_state(params: &ModelParams) -> MicroState {
    sinusoidal_state(params, 0.0)
}

/// `x_n = (n - 1) L / N + A sin(2 pi n / N)` (1-based `n`), `y_n = V(L / N)`.
pub fn sinusoidal_state(params: &ModelParams, amplitude: f64) -> MicroState {
    let n = params.n_cars;
    let l = params.road_length;
    let spacing = params.mean_headway();
    let v = optimal_velocity(spacing, params);
    let positions = (0..n)
        .map(|i| {
            let car = (i + 1) as f64;
            (i as f64 * spacing + amplitude * (2.0 * PI * car / n as f64).sin()).rem_euclid(l)
        })
        .collect();
    MicroState {
        positions,
        velocities: vec![v; n],
    }
}

/// Completes a headway profile to a full state: car 1 at the origin,
/// positions by accumulating headways, every car at its optimal velocity.
pub fn state_from_headways(profile: &HeadwayProfile, params: &ModelParams) -> Result<MicroState> {
    let h = profile.as_slice();
    if h.len() != params.n_cars {
        return Err(Error::DimensionMismatch {
            expected: params.n_cars,
            got: h.len(),
        });
    }
    let mut positions = Vec::with_capacity(h.len());
    let mut x = 0.0;
    for &gap in h {
        positions.push(x);
        x += gap;
    }
    let velocities = h.iter().map(|&g| optimal_velocity(g, params)).collect();
    MicroState::new(positions, velocities, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults() -> ModelParams {
        ModelParams::default()
    }

    #[test]
    fn optimal_velocity_values() {
        let p = defaults();
        assert_eq!(optimal_velocity(0.0, &p), 0.0);
        // tanh(2.4) and tanh(-0.4) + tanh(2.4) evaluated independently
        assert!((optimal_velocity(2.4, &p) - 0.983_674_857_693_680_2).abs() < 1e-12);
        assert!((optimal_velocity(2.0, &p) - 0.603_725_895_438_455_3).abs() < 1e-12);
        let q = p.with_v0(2.5);
        assert_eq!(optimal_velocity(0.0, &q), 0.0);
    }

    #[test]
    fn optimal_velocity_is_increasing_and_bounded() {
        let p = defaults();
        let lo = p.v0 * (p.safety_distance.tanh() - 1.0);
        let hi = p.v0 * (p.safety_distance.tanh() + 1.0);
        let mut prev = f64::NEG_INFINITY;
        for i in -200..200 {
            let v = optimal_velocity(i as f64 * 0.05, &p);
            assert!(v > prev && v > lo && v < hi);
            prev = v;
        }
    }

    #[test]
    fn slope_matches_finite_difference() {
        let p = defaults();
        for d in [0.5, 2.0, 2.4, 3.7] {
            let fd = (optimal_velocity(d + 1e-6, &p) - optimal_velocity(d - 1e-6, &p)) / 2e-6;
            assert!((optimal_velocity_slope(d, &p) - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn params_validation() {
        assert!(defaults().validate().is_ok());
        let mut p = defaults();
        p.n_cars = 1;
        assert!(p.validate().is_err());
        assert!(defaults().with_v0(0.0).validate().is_err());
        let mut p = defaults();
        p.road_length = f64::NAN;
        assert!(p.validate().is_err());
    }

    #[test]
    fn headways_examples() {
        let p = ModelParams {
            n_cars: 3,
            road_length: 6.0,
            ..defaults()
        };
        let s = MicroState::new(vec![0.0, 1.0, 3.0], vec![0.0; 3], &p).unwrap();
        assert_eq!(headways(&s, &p).as_slice(), &[1.0, 2.0, 3.0]);
        // wrap across the seam
        let s = MicroState::new(vec![5.0, 0.5, 2.0], vec![0.0; 3], &p).unwrap();
        let h = headways(&s, &p);
        assert!((h.as_slice()[0] - 1.5).abs() < 1e-15);
        assert!((h.as_slice()[1] - 1.5).abs() < 1e-15);
        assert!((h.as_slice()[2] - 3.0).abs() < 1e-15);
        assert!((h.total() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn state_rejects_wrong_length() {
        let p = defaults();
        assert!(MicroState::new(vec![0.0; 3], vec![0.0; 30], &p).is_err());
        assert!(vector_field(&free_flow_state(&ModelParams { n_cars: 4, ..p }), &p).is_err());
    }

    #[test]
    fn sigma_examples() {
        assert_eq!(sigma(&HeadwayProfile::new(vec![2.0; 30])), 0.0);
        let s = sigma(&HeadwayProfile::new(vec![1.0, 3.0]));
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn align_examples() {
        let p = HeadwayProfile::new(vec![1.0, 9.0, 1.0, 1.0]);
        assert_eq!(align(&p, 1).as_slice(), &[9.0, 1.0, 1.0, 1.0]);
        assert_eq!(align(&p, 2), p);
        let c = HeadwayProfile::new(vec![2.0; 5]);
        assert_eq!(align(&c, 3), c);
        let q = HeadwayProfile::new((0..30).map(|i| (i as f64 * 0.7).sin()).collect());
        let a = align(&q, 10);
        assert_eq!(a.argmax(), 9);
        assert_eq!(align(&a, 10), a);
    }

    #[test]
    fn phase_alignment() {
        let n = 30;
        let wave = |s: f64| {
            HeadwayProfile::new(
                (0..n)
                    .map(|j| {
                        let x = 2.0 * PI * (j as f64 - s) / n as f64;
                        2.0 + 0.8 * x.cos() + 0.3 * (2.0 * x + 0.4).sin()
                    })
                    .collect(),
            )
        };
        let target = wave(9.0);
        for s in [0.0, 3.37, 17.5, 29.9] {
            let a = align_phase(&wave(s), 10);
            let err = a
                .as_slice()
                .iter()
                .zip(target.as_slice())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-12, "shift {s}: {err}");
            assert!((a.total() - 60.0).abs() < 1e-10);
        }
        let c = HeadwayProfile::new(vec![2.0; 6]);
        assert_eq!(align_phase(&c, 3), c);
        let q = HeadwayProfile::new((0..8).map(|i| (i as f64 * 1.3).sin()).collect());
        let back = shift_profile(&shift_profile(&q, 2.0), -2.0);
        for (x, y) in back.as_slice().iter().zip(q.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in shift_profile(&q, 3.0).as_slice().iter().zip(q.rotate(3).as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn free_flow_layout() {
        let p = defaults();
        let s = free_flow_state(&p);
        for (i, x) in s.positions().iter().enumerate() {
            assert!((x - 2.0 * i as f64).abs() < 1e-12);
        }
        for v in s.velocities() {
            assert!((v - 0.603_725_895_438_455_3).abs() < 1e-12);
        }
        let h = headways(&s, &p);
        assert!(h.as_slice().iter().all(|g| (g - 2.0).abs() < 1e-12));
        assert!(sigma(&h) < 1e-12);
        let d = vector_field(&s, &p).unwrap();
        assert!(d[30..].iter().all(|a| a.abs() < 1e-15));
    }

    #[test]
    fn vector_field_at_rest() {
        let p = defaults();
        let s = sinusoidal_state(&p, 1.3);
        let s = MicroState::new(s.positions().to_vec(), vec![0.0; 30], &p).unwrap();
        let d = vector_field(&s, &p).unwrap();
        let h = headways(&s, &p);
        for i in 0..30 {
            assert_eq!(d[i], 0.0);
            let expect = p.inv_tau * optimal_velocity(h.as_slice()[i], &p);
            assert!((d[30 + i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn evolve_zero_time_is_identity() {
        let p = defaults();
        let s = sinusoidal_state(&p, 2.0);
        assert_eq!(evolve(&s, 0.0, &p).unwrap(), s);
    }

    #[test]
    fn free_flow_persists() {
        let p = defaults();
        let s = evolve(&free_flow_state(&p), 100.0, &p).unwrap();
        let h = headways(&s, &p);
        assert!(h.as_slice().iter().all(|g| (g - 2.0).abs() < 1e-8));
    }

    #[test]
    fn state_from_headways_roundtrip() {
        let p = defaults();
        let s = sinusoidal_state(&p, 3.0);
        let h = headways(&s, &p);
        let t = state_from_headways(&h, &p).unwrap();
        let h2 = headways(&t, &p);
        for (a, b) in h.as_slice().iter().zip(h2.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(t.positions()[0], 0.0);
        assert!((t.velocities()[4] - optimal_velocity(h.as_slice()[4], &p)).abs() < 1e-15);
    }
}
