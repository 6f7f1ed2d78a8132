//! Derivative-free minimizers over the probability simplex.

use std::fmt::Debug;

use crate::error::Error;
use crate::registry::{Registry, StrategySpec};

/// Logit assigned to a zero start weight.
const MIN_LOGIT: f64 = -40.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    /// Point on the simplex.
    pub weights: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    /// The objective reached the tolerance.
    pub converged: bool,
}

pub trait LiftOptimizer: Send + Sync + Debug {
    fn name(&self) -> &'static str;

    fn tolerance(&self) -> f64;

    /// Minimizes `f` over the simplex of dimension `starts[0].len() - 1`,
    /// trying the start points in order and keeping the first that reaches
    /// the tolerance, otherwise the best overall.
    fn minimize(&self, f: &dyn Fn(&[f64]) -> f64, starts: &[Vec<f64>]) -> Minimum;
}

pub fn registry() -> Registry<dyn LiftOptimizer> {
    let mut reg: Registry<dyn LiftOptimizer> = Registry::new("lift optimizer");
    reg.register(
        "nelder-mead",
        "adaptive Nelder-Mead on softmax logits",
        |spec| {
            spec.check_keys(&["tol", "max_evals"])?;
            let d = NelderMead::default();
            let nm = NelderMead {
                tol: spec.param("tol", d.tol),
                max_evals: spec.param("max_evals", d.max_evals as f64) as usize,
            };
            if !(nm.tol > 0.0) || nm.max_evals == 0 {
                return Err(Error::invalid("nelder-mead needs tol > 0 and max_evals > 0"));
            }
            Ok(Box::new(nm))
        },
    );
    reg
}

pub fn default_spec() -> StrategySpec {
    StrategySpec::named("nelder-mead")
}

/// Maps `K - 1` free logits (the last is pinned to zero) to simplex weights.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let zmax = z.iter().copied().fold(0.0f64, f64::max);
    let mut w: Vec<f64> = z.iter().map(|v| (v - zmax).exp()).collect();
    w.push((-zmax).exp());
    let s: f64 = w.iter().sum();
    for v in &mut w {
        *v /= s;
    }
    w
}

/// Inverse of [`softmax`], clamping zero weights to a large negative logit.
pub fn logits(w: &[f64]) -> Vec<f64> {
    let k = w.len();
    let log = |v: f64| if v > 0.0 { v.ln().max(MIN_LOGIT) } else { MIN_LOGIT };
    let last = log(w[k - 1]);
    w[..k - 1].iter().map(|&v| log(v) - last).collect()
}

#[derive(Debug, Clone)]
pub struct NelderMead {
    pub tol: f64,
    /// Budget per start point.
    pub max_evals: usize,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_evals: 2000,
        }
    }
}

impl LiftOptimizer for NelderMead {
    fn name(&self) -> &'static str {
        "nelder-mead"
    }

    fn tolerance(&self) -> f64 {
        self.tol
    }

    fn minimize(&self, f: &dyn Fn(&[f64]) -> f64, starts: &[Vec<f64>]) -> Minimum {
        assert!(!starts.is_empty(), "at least one start point");
        let k = starts[0].len();
        let mut total = 0;
        let mut best: Option<Minimum> = None;
        // exact start weights first: a vertex start may already be optimal
        for w in starts {
            let v = f(w);
            total += 1;
            if best.as_ref().is_none_or(|b| v < b.value) {
                best = Some(Minimum {
                    weights: w.clone(),
                    value: v,
                    evaluations: 0,
                    converged: v <= self.tol,
                });
            }
        }
        let best_start = best.expect("nonempty");
        if best_start.converged || k == 1 {
            return Minimum {
                evaluations: total,
                ..best_start
            };
        }
        let mut best = best_start;
        for w in starts {
            let g = |z: &[f64]| f(&softmax(z));
            let (z, v, evals) = self.run(&g, logits(w));
            total += evals;
            if v < best.value {
                best = Minimum {
                    weights: softmax(&z),
                    value: v,
                    evaluations: 0,
                    converged: v <= self.tol,
                };
            }
            if best.converged {
                break;
            }
        }
        best.evaluations = total;
        best
    }
}

impl NelderMead {
    /// Adaptive-coefficient Nelder-Mead from `x0`; returns `(x, f(x), evals)`.
    fn run(&self, f: &dyn Fn(&[f64]) -> f64, x0: Vec<f64>) -> (Vec<f64>, f64, usize) {
        let n = x0.len();
        let nf = n as f64;
        let (alpha, gamma, rho, shrink) = (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf);
        let mut simplex: Vec<Vec<f64>> = vec![x0.clone()];
        for i in 0..n {
            let mut x = x0.clone();
            x[i] += if x[i] <= MIN_LOGIT + 1.0 { 2.0 } else { 1.0 };
            simplex.push(x);
        }
        let mut values: Vec<f64> = simplex.iter().map(|x| f(x)).collect();
        let mut evals = n + 1;
        loop {
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();
            let spread = values[n] - values[0];
            let size = simplex[1..]
                .iter()
                .map(|x| x.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            if values[0] <= self.tol
                || evals >= self.max_evals
                || (spread <= 1e-16 * values[0].abs().max(1e-300) && size < 1e-10)
            {
                break;
            }
            let centroid: Vec<f64> = (0..n)
                .map(|j| simplex[..n].iter().map(|x| x[j]).sum::<f64>() / nf)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&simplex[n])
                    .map(|(c, w)| c + t * (c - w))
                    .collect()
            };
            let xr = along(alpha);
            let fr = f(&xr);
            evals += 1;
            if fr < values[0] {
                let xe = along(alpha * gamma);
                let fe = f(&xe);
                evals += 1;
                if fe < fr {
                    simplex[n] = xe;
                    values[n] = fe;
                } else {
                    simplex[n] = xr;
                    values[n] = fr;
                }
                continue;
            }
            if fr < values[n - 1] {
                simplex[n] = xr;
                values[n] = fr;
                continue;
            }
            let (xc, fc) = if fr < values[n] {
                let x = along(alpha * rho);
                let v = f(&x);
                (x, v)
            } else {
                let x = along(-rho);
                let v = f(&x);
                (x, v)
            };
            evals += 1;
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
                continue;
            }
            for i in 1..=n {
                let x: Vec<f64> = simplex[0]
                    .iter()
                    .zip(&simplex[i])
                    .map(|(b, v)| b + shrink * (v - b))
                    .collect();
                values[i] = f(&x);
                simplex[i] = x;
            }
            evals += n;
        }
        let i = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
        (simplex[i].clone(), values[i], evals)
    }
}
