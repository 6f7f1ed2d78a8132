//! Explicit Runge–Kutta integrators behind a common [`Integrator`] trait.

use std::fmt::Debug;

use crate::error::{Error, Result};
use crate::registry::Registry;

/// Autonomous or non-autonomous first-order system `dy/dt = f(t, y)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IntegrationStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

pub trait Integrator: Send + Sync + Debug {
    fn name(&self) -> &'static str;

    /// Advances `y` in place from `t0` to `t1` (`t1 >= t0`).
    fn integrate(
        &self,
        sys: &dyn OdeSystem,
        t0: f64,
        t1: f64,
        y: &mut [f64],
    ) -> Result<IntegrationStats>;
}

pub fn registry() -> Registry<dyn Integrator> {
    let mut reg: Registry<dyn Integrator> = Registry::new("integrator");
    reg.register(
        "dopri5",
        "adaptive Dormand-Prince 5(4) with mixed abs/rel error control",
        |spec| {
            spec.check_keys(&["rtol", "atol", "max_steps", "h_min"])?;
            let d = Dopri5::default();
            let out = Dopri5 {
                rtol: spec.param("rtol", d.rtol),
                atol: spec.param("atol", d.atol),
                max_steps: spec.param("max_steps", d.max_steps as f64) as usize,
                h_min: spec.param("h_min", d.h_min),
            };
            out.validate()?;
            Ok(Box::new(out))
        },
    );
    reg.register("rk4", "classical fixed-step fourth-order Runge-Kutta", |spec| {
        spec.check_keys(&["dt"])?;
        let dt = spec.param("dt", 0.01);
        if !(dt > 0.0) {
            return Err(Error::invalid("rk4 dt must be positive"));
        }
        Ok(Box::new(Rk4 { dt }))
    });
    reg
}

/// Dormand–Prince 5(4) with the standard PI-free step controller.
#[derive(Debug, Clone)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    pub h_min: f64,
}

impl Default for Dopri5 {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-10,
            max_steps: 10_000_000,
            h_min: 1e-12,
        }
    }
}

impl Dopri5 {
    pub fn with_tolerance(tol: f64) -> Self {
        Self {
            rtol: tol,
            atol: tol,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::invalid("dopri5 tolerances must be positive"));
        }
        if !(self.h_min > 0.0) || self.max_steps == 0 {
            return Err(Error::invalid("dopri5 h_min and max_steps must be positive"));
        }
        Ok(())
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
// error coefficients: fifth-order minus embedded fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

impl Integrator for Dopri5 {
    fn name(&self) -> &'static str {
        "dopri5"
    }

    fn integrate(
        &self,
        sys: &dyn OdeSystem,
        t0: f64,
        t1: f64,
        y: &mut [f64],
    ) -> Result<IntegrationStats> {
        let n = sys.dim();
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: y.len(),
            });
        }
        if t1 < t0 {
            return Err(Error::invalid("integration must run forward in time"));
        }
        let mut stats = IntegrationStats::default();
        if t1 == t0 {
            return Ok(stats);
        }

        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut k5 = vec![0.0; n];
        let mut k6 = vec![0.0; n];
        let mut k7 = vec![0.0; n];
        let mut ytmp = vec![0.0; n];
        let mut ynew = vec![0.0; n];

        let mut t = t0;
        sys.rhs(t, y, &mut k1);
        stats.rhs_evals += 1;
        let mut h = self.initial_step(sys, t, y, &k1, t1 - t0, &mut stats);
        let mut last_rejected = false;

        while t < t1 {
            if stats.accepted + stats.rejected >= self.max_steps {
                return Err(Error::Integration {
                    t,
                    reason: format!("step budget of {} exhausted", self.max_steps),
                });
            }
            let end = t + h >= t1;
            if end {
                h = t1 - t;
            }

            for i in 0..n {
                ytmp[i] = y[i] + h * A21 * k1[i];
            }
            sys.rhs(t + C2 * h, &ytmp, &mut k2);
            for i in 0..n {
                ytmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
            }
            sys.rhs(t + C3 * h, &ytmp, &mut k3);
            for i in 0..n {
                ytmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            sys.rhs(t + C4 * h, &ytmp, &mut k4);
            for i in 0..n {
                ytmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            sys.rhs(t + C5 * h, &ytmp, &mut k5);
            for i in 0..n {
                ytmp[i] = y[i]
                    + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            sys.rhs(t + h, &ytmp, &mut k6);
            for i in 0..n {
                ynew[i] = y[i]
                    + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }
            sys.rhs(t + h, &ynew, &mut k7);
            stats.rhs_evals += 6;

            let mut err = 0.0;
            for i in 0..n {
                let e = h
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i]
                        + E7 * k7[i]);
                let sc = self.atol + self.rtol * y[i].abs().max(ynew[i].abs());
                err += (e / sc) * (e / sc);
            }
            let err = (err / n as f64).sqrt();
            if !err.is_finite() {
                return Err(Error::Integration {
                    t,
                    reason: "non-finite state".into(),
                });
            }

            if err <= 1.0 {
                stats.accepted += 1;
                t = if end { t1 } else { t + h };
                y.copy_from_slice(&ynew);
                std::mem::swap(&mut k1, &mut k7);
                let mut fac = 0.9 * err.powf(-0.2);
                fac = fac.clamp(0.2, 10.0);
                if last_rejected {
                    fac = fac.min(1.0);
                }
                h *= fac;
                last_rejected = false;
            } else {
                stats.rejected += 1;
                h *= (0.9 * err.powf(-0.2)).max(0.2);
                last_rejected = true;
            }
            if h < self.h_min && t < t1 {
                return Err(Error::Integration {
                    t,
                    reason: format!("step size underflow (h = {h:e})"),
                });
            }
        }
        Ok(stats)
    }
}

impl Dopri5 {
    // Hairer–Wanner starting step heuristic.
    fn initial_step(
        &self,
        sys: &dyn OdeSystem,
        t: f64,
        y: &[f64],
        f0: &[f64],
        span: f64,
        stats: &mut IntegrationStats,
    ) -> f64 {
        let n = y.len();
        let sc: Vec<f64> = y.iter().map(|v| self.atol + self.rtol * v.abs()).collect();
        let d0 = rms(y.iter().zip(&sc).map(|(v, s)| v / s));
        let d1 = rms(f0.iter().zip(&sc).map(|(v, s)| v / s));
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        }
        .min(span);
        let y1: Vec<f64> = (0..n).map(|i| y[i] + h0 * f0[i]).collect();
        let mut f1 = vec![0.0; n];
        sys.rhs(t + h0, &y1, &mut f1);
        stats.rhs_evals += 1;
        let d2 = rms((0..n).map(|i| (f1[i] - f0[i]) / sc[i])) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(span)
    }
}

fn rms(it: impl Iterator<Item = f64>) -> f64 {
    let (s, c) = it.fold((0.0, 0usize), |(s, c), v| (s + v * v, c + 1));
    (s / c.max(1) as f64).sqrt()
}

/// Classical RK4 with a fixed step (the last step is shortened to land on `t1`).
#[derive(Debug, Clone)]
pub struct Rk4 {
    pub dt: f64,
}

impl Integrator for Rk4 {
    fn name(&self) -> &'static str {
        "rk4"
    }

    fn integrate(
        &self,
        sys: &dyn OdeSystem,
        t0: f64,
        t1: f64,
        y: &mut [f64],
    ) -> Result<IntegrationStats> {
        let n = sys.dim();
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: y.len(),
            });
        }
        if t1 < t0 {
            return Err(Error::invalid("integration must run forward in time"));
        }
        let mut stats = IntegrationStats::default();
        let steps = ((t1 - t0) / self.dt).ceil() as usize;
        if steps == 0 {
            return Ok(stats);
        }
        let h = (t1 - t0) / steps as f64;
        let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut tmp = vec![0.0; n];
        for s in 0..steps {
            let t = t0 + s as f64 * h;
            sys.rhs(t, y, &mut k1);
            for i in 0..n {
                tmp[i] = y[i] + 0.5 * h * k1[i];
            }
            sys.rhs(t + 0.5 * h, &tmp, &mut k2);
            for i in 0..n {
                tmp[i] = y[i] + 0.5 * h * k2[i];
            }
            sys.rhs(t + 0.5 * h, &tmp, &mut k3);
            for i in 0..n {
                tmp[i] = y[i] + h * k3[i];
            }
            sys.rhs(t + h, &tmp, &mut k4);
            for i in 0..n {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            if !y.iter().all(|v| v.is_finite()) {
                return Err(Error::Integration {
                    t: t + h,
                    reason: "non-finite state".into(),
                });
            }
            stats.accepted += 1;
            stats.rhs_evals += 4;
        }
        Ok(stats)
    }
}
