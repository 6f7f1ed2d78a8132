//! Pseudo-arclength continuation with a secant predictor and a bordered
//! Newton corrector.
//!
//! Unknowns are packed as `z = [x..., p]` with the continuation parameter
//! last. A problem supplies `G(z)` with one equation fewer than unknowns.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait ContinuationProblem: Sync {
    /// Number of unknowns including the parameter.
    fn dim(&self) -> usize;

    fn residual(&self, z: &[f64]) -> Result<DVector<f64>>;

    /// Central-difference step for unknown `i`.
    fn fd_step(&self, _i: usize) -> f64 {
        1e-4
    }

    /// `dim - 1` by `dim` Jacobian; central differences by default, columns
    /// evaluated in parallel.
    fn jacobian(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let cols: Vec<DVector<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let h = self.fd_step(i);
                let mut zp = z.to_vec();
                let mut zm = z.to_vec();
                zp[i] += h;
                zm[i] -= h;
                Ok((self.residual(&zp)? - self.residual(&zm)?) / (2.0 * h))
            })
            .collect::<Result<_>>()?;
        Ok(DMatrix::from_columns(&cols))
    }

    /// Diagonal weights of the arclength norm.
    fn weights(&self) -> DVector<f64> {
        DVector::from_element(self.dim(), 1.0)
    }

    /// Called once per accepted point, e.g. to move a phase anchor.
    fn accept(&mut self, _z: &[f64]) {}

    /// Stability of an accepted point, if the problem knows how to judge it.
    fn stable(&self, _z: &[f64]) -> Option<bool> {
        None
    }

    /// Reason to end the branch at an accepted point, e.g. leaving the
    /// region where the problem is meaningful.
    fn should_stop(&self, _z: &[f64]) -> Option<String> {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContinuationSettings {
    pub step_size: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Smallest step tried is `step_size / 2^max_halvings`.
    pub max_halvings: u32,
    pub max_steps: usize,
    /// Stop once the parameter leaves this interval.
    pub parameter_range: [f64; 2],
    /// Sign of the parameter component of the first tangent.
    pub direction: f64,
    /// A corrected point may lie at most this many steps from its predictor;
    /// farther ones count as a branch jump and the step is halved.
    pub max_correction: f64,
}

impl Default for ContinuationSettings {
    fn default() -> Self {
        Self {
            step_size: 0.01,
            newton_tol: 1e-8,
            newton_max_iter: 12,
            max_halvings: 4,
            max_steps: 200,
            parameter_range: [f64::NEG_INFINITY, f64::INFINITY],
            direction: -1.0,
            max_correction: 1.0,
        }
    }
}

impl ContinuationSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !(self.newton_tol > 0.0) || self.newton_max_iter == 0 {
            return Err(Error::invalid(
                "continuation needs step_size > 0, newton_tol > 0 and newton_max_iter > 0",
            ));
        }
        if !(self.parameter_range[0] < self.parameter_range[1]) {
            return Err(Error::invalid("parameter_range must be increasing"));
        }
        if self.direction == 0.0 || !self.direction.is_finite() {
            return Err(Error::invalid("direction must be +1 or -1"));
        }
        if !(self.max_correction > 0.0) {
            return Err(Error::invalid("max_correction must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPoint {
    pub z: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    /// Arclength step that produced this point (0 for the start).
    pub step: f64,
    pub stable: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    /// The fold lies between points `after` and `after + 1`.
    pub after: usize,
    /// Quadratic estimate of the turning point.
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxSteps,
    ParameterRange,
    Boundary { reason: String },
    StepTooSmall { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub points: Vec<RawPoint>,
    pub folds: Vec<Fold>,
    pub termination: Termination,
}

fn max_abs(v: &DVector<f64>) -> f64 {
    if v.iter().any(|x| !x.is_finite()) {
        f64::INFINITY
    } else {
        v.amax()
    }
}

/// Newton on `G(z) = 0` with the parameter held fixed.
pub fn newton_fixed_parameter(
    problem: &dyn ContinuationProblem,
    z0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, f64)> {
    let n = problem.dim();
    let mut z = z0.to_vec();
    let mut r = problem.residual(&z)?;
    for _ in 0..max_iter {
        let res = max_abs(&r);
        if res <= tol {
            return Ok((z, res));
        }
        let j = problem.jacobian(&z)?;
        let a = j.columns(0, n - 1).into_owned();
        let dx = a
            .lu()
            .solve(&(-&r))
            .ok_or_else(|| Error::Newton("singular Jacobian".into()))?;
        for i in 0..n - 1 {
            z[i] += dx[i];
        }
        r = problem.residual(&z)?;
    }
    let res = max_abs(&r);
    if res <= tol {
        Ok((z, res))
    } else {
        Err(Error::Newton(format!(
            "no convergence in {max_iter} iterations (residual {res:.3e})"
        )))
    }
}

/// Bordered Newton on `G(z) = 0, <t, W (z - base)> = s`.
fn corrector(
    problem: &dyn ContinuationProblem,
    base: &[f64],
    tangent: &DVector<f64>,
    weights: &DVector<f64>,
    s: f64,
    settings: &ContinuationSettings,
) -> Result<(Vec<f64>, f64, usize)> {
    let n = problem.dim();
    let wt = tangent.component_mul(weights);
    let mut z: Vec<f64> = (0..n).map(|i| base[i] + s * tangent[i]).collect();
    let mut last = f64::INFINITY;
    for it in 0..=settings.newton_max_iter {
        let g = problem.residual(&z)?;
        let arc: f64 = (0..n).map(|i| wt[i] * (z[i] - base[i])).sum::<f64>() - s;
        let res = max_abs(&g);
        if res <= settings.newton_tol && arc.abs() <= settings.newton_tol.max(1e-12 * s) {
            let drift = (0..n)
                .map(|i| weights[i] * (z[i] - base[i] - s * tangent[i]).powi(2))
                .sum::<f64>()
                .sqrt();
            if drift > settings.max_correction * s {
                return Err(Error::Newton(format!(
                    "corrector moved {drift:.3e} from the predictor at step {s:.3e}"
                )));
            }
            return Ok((z, res, it));
        }
        if it == settings.newton_max_iter || !res.is_finite() || (it > 2 && res > 1e3 * last) {
            break;
        }
        last = res;
        let j = problem.jacobian(&z)?;
        let mut a = DMatrix::zeros(n, n);
        a.rows_mut(0, n - 1).copy_from(&j);
        a.row_mut(n - 1).copy_from(&wt.transpose());
        let mut rhs = DVector::zeros(n);
        rhs.rows_mut(0, n - 1).copy_from(&(-&g));
        rhs[n - 1] = -arc;
        let dz = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Newton("singular bordered Jacobian".into()))?;
        for i in 0..n {
            z[i] += dz[i];
        }
    }
    Err(Error::Newton(format!(
        "corrector failed at step {s:.3e} (last residual {last:.3e})"
    )))
}

fn weighted_unit(v: DVector<f64>, weights: &DVector<f64>) -> DVector<f64> {
    let norm = v.component_mul(&v).dot(weights).sqrt();
    v / norm
}

/// Tangent at `z` with positive parameter component times `direction`.
pub fn initial_tangent(
    problem: &dyn ContinuationProblem,
    z: &[f64],
    direction: f64,
) -> Result<DVector<f64>> {
    let n = problem.dim();
    let j = problem.jacobian(z)?;
    let mut a = DMatrix::zeros(n, n);
    a.rows_mut(0, n - 1).copy_from(&j);
    a[(n - 1, n - 1)] = 1.0;
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = direction.signum();
    let t = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Newton("start point is a fold: no parameter tangent".into()))?;
    Ok(weighted_unit(t, &problem.weights()))
}

pub fn continue_branch(
    problem: &mut dyn ContinuationProblem,
    start: &[f64],
    settings: &ContinuationSettings,
) -> Result<Trace> {
    settings.validate()?;
    let n = problem.dim();
    if start.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: start.len(),
        });
    }
    let (z0, res0) =
        newton_fixed_parameter(&*problem, start, settings.newton_tol, settings.newton_max_iter)?;
    let weights = problem.weights();
    problem.accept(&z0);
    let mut points = vec![RawPoint {
        stable: problem.stable(&z0),
        z: z0.clone(),
        residual: res0,
        iterations: 0,
        step: 0.0,
    }];
    let mut tangent = initial_tangent(&*problem, &z0, settings.direction)?;
    let s_max = settings.step_size;
    let s_min = s_max / 2f64.powi(settings.max_halvings as i32);
    let mut s = s_max;
    let termination = loop {
        if points.len() > settings.max_steps {
            break Termination::MaxSteps;
        }
        let base = points.last().unwrap().z.clone();
        let attempt = corrector(&*problem, &base, &tangent, &weights, s, settings);
        match attempt {
            Ok((z, res, iterations)) => {
                let secant = DVector::from_iterator(n, (0..n).map(|i| z[i] - base[i]));
                tangent = weighted_unit(secant, &weights);
                problem.accept(&z);
                let p = z[n - 1];
                points.push(RawPoint {
                    stable: problem.stable(&z),
                    z,
                    residual: res,
                    iterations,
                    step: s,
                });
                if p < settings.parameter_range[0] || p > settings.parameter_range[1] {
                    break Termination::ParameterRange;
                }
                if let Some(reason) = problem.should_stop(&points.last().unwrap().z) {
                    break Termination::Boundary { reason };
                }
                s = (2.0 * s).min(s_max);
            }
            Err(e) => {
                if s / 2.0 < s_min * (1.0 - 1e-12) {
                    break Termination::StepTooSmall {
                        reason: e.to_string(),
                    };
                }
                log::debug!("halving step {s:.3e}: {e}");
                s /= 2.0;
            }
        }
    };
    let folds = locate_folds(&points, &weights);
    Ok(Trace {
        points,
        folds,
        termination,
    })
}

/// Finds sign changes of the parameter component of consecutive secants and
/// places the turning point at the vertex of a quadratic through the three
/// surrounding points, parametrized by arclength.
pub fn locate_folds(points: &[RawPoint], weights: &DVector<f64>) -> Vec<Fold> {
    let mut folds = Vec::new();
    if points.len() < 3 {
        return folds;
    }
    let n = points[0].z.len();
    let p = n - 1;
    for k in 1..points.len() - 1 {
        let (a, b, c) = (&points[k - 1].z, &points[k].z, &points[k + 1].z);
        let d1 = b[p] - a[p];
        let d2 = c[p] - b[p];
        if d1 * d2 >= 0.0 {
            continue;
        }
        let dist = |x: &[f64], y: &[f64]| {
            (0..n)
                .map(|i| weights[i] * (x[i] - y[i]).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let s1 = dist(a, b);
        let s2 = s1 + dist(b, c);
        // quadratic through (0, a), (s1, b), (s2, c), component-wise
        let interp = |ya: f64, yb: f64, yc: f64, s: f64| {
            let l0 = (s - s1) * (s - s2) / (s1 * s2);
            let l1 = s * (s - s2) / (s1 * (s1 - s2));
            let l2 = s * (s - s1) / (s2 * (s2 - s1));
            ya * l0 + yb * l1 + yc * l2
        };
        // vertex of the parameter quadratic
        let f1 = (b[p] - a[p]) / s1;
        let f2 = (c[p] - b[p]) / (s2 - s1);
        let curv = (f2 - f1) / s2;
        let s_star = if curv != 0.0 {
            (0.5 * (s1 - f1 / curv)).clamp(0.0, s2)
        } else {
            s1
        };
        let z = (0..n).map(|i| interp(a[i], b[i], c[i], s_star)).collect();
        // the sign change sits between k-1..k or k..k+1; report the nearer
        let after = if s_star < s1 { k - 1 } else { k };
        folds.push(Fold { after, z });
    }
    folds
}
