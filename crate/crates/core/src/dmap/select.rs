//! Recursive eigenvector selection by leave-one-out local linear fits.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::epsilon;
use super::pairwise_distances_rows;
use crate::error::{Error, Result};
use crate::registry::StrategySpec;

/// Number of consecutive sub-threshold residuals that ends the recursion.
pub const STOP_RUN: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    /// `residuals[j-1]` is r_j; candidates past an early stop are not computed.
    pub residuals: Vec<f64>,
    /// One-based indices of the selected eigenvectors.
    pub selected: Vec<usize>,
    pub dimension: usize,
    pub threshold: f64,
    /// Weight scale of the local fit for each candidate (0 for r_1).
    pub fit_scales: Vec<f64>,
}

/// How the Gaussian weights of the local fit are scaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitScale {
    /// Reuse the kernel scale of the diffusion map.
    Kernel,
    /// Apply an epsilon rule to the pairwise distances among the predecessors.
    Rule(StrategySpec),
}

impl Default for FitScale {
    fn default() -> Self {
        FitScale::Rule(StrategySpec::named("median").with("factor", 1.0 / 3.0))
    }
}

#[derive(Debug, Clone)]
pub struct SelectOptions {
    pub max_candidates: usize,
    pub threshold: f64,
    pub fit_scale: FitScale,
}

impl Default for SelectOptions {
    fn default() -> Self {
        Self {
            max_candidates: 20,
            threshold: 0.5,
            fit_scale: FitScale::default(),
        }
    }
}

/// Computes r_j for the columns of `psi` (M x J, eigenvalue order).
pub fn select_eigenvectors(
    psi: &DMatrix<f64>,
    kernel_epsilon: f64,
    opts: &SelectOptions,
) -> Result<SelectionReport> {
    let (m, avail) = psi.shape();
    if opts.max_candidates == 0 || opts.max_candidates > avail {
        return Err(Error::invalid(format!(
            "max_candidates must be in 1..={avail}, got {}",
            opts.max_candidates
        )));
    }
    if !(opts.threshold > 0.0 && opts.threshold < 1.0) {
        return Err(Error::invalid("threshold must lie in (0, 1)"));
    }
    if m < 2 {
        return Err(Error::Degenerate("need at least two points".into()));
    }
    let rule = match &opts.fit_scale {
        FitScale::Kernel => None,
        FitScale::Rule(spec) => Some(epsilon::registry().create(spec)?),
    };

    let mut residuals = vec![1.0];
    let mut fit_scales = vec![0.0];
    let mut below = 0;
    for j in 2..=opts.max_candidates {
        let prev = psi.columns(0, j - 1).into_owned();
        let target = psi.column(j - 1).into_owned();
        let scale = match &rule {
            None => kernel_epsilon,
            Some(rule) => rule.select(&pairwise_distances_rows(&prev))?,
        };
        let r = local_fit_residual(&prev, &target, scale, j);
        residuals.push(r);
        fit_scales.push(scale);
        if r < opts.threshold {
            below += 1;
            if below == STOP_RUN {
                break;
            }
        } else {
            below = 0;
        }
    }
    let selected: Vec<usize> = residuals
        .iter()
        .enumerate()
        .filter(|(_, r)| **r >= opts.threshold)
        .map(|(i, _)| i + 1)
        .collect();
    Ok(SelectionReport {
        dimension: selected.len(),
        selected,
        residuals,
        threshold: opts.threshold,
        fit_scales,
    })
}

/// Leave-one-out weighted affine fit of `target` on the rows of `prev`.
pub fn local_fit_residual(prev: &DMatrix<f64>, target: &DVector<f64>, scale: f64, j: usize) -> f64 {
    let (m, p) = prev.shape();
    let inv_e2 = 1.0 / (scale * scale);
    let errors: Vec<Option<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            // normal equations for [alpha, beta] with regressors [1, prev_m - prev_i]
            let mut a = DMatrix::<f64>::zeros(p + 1, p + 1);
            let mut b = DVector::<f64>::zeros(p + 1);
            let mut x = DVector::<f64>::zeros(p + 1);
            for k in 0..m {
                if k == i {
                    continue;
                }
                x[0] = 1.0;
                let mut d2 = 0.0;
                for c in 0..p {
                    let dx = prev[(k, c)] - prev[(i, c)];
                    x[c + 1] = dx;
                    d2 += dx * dx;
                }
                let w = (-d2 * inv_e2).exp();
                if w == 0.0 {
                    continue;
                }
                a.ger(w, &x, &x, 1.0);
                b.axpy(w * target[k], &x, 1.0);
            }
            let norm = a.amax();
            if norm == 0.0 {
                return None;
            }
            let svd = a.svd(true, true);
            let smin = svd.singular_values.min();
            if smin <= 1e-13 * norm {
                return None;
            }
            let coef = svd.solve(&b, 0.0).ok()?;
            // the fit evaluated at the held-out point is its intercept
            Some(target[i] - coef[0])
        })
        .collect();
    let singular = errors.iter().filter(|e| e.is_none()).count();
    if singular > 0 {
        log::warn!("r_{j}: {singular} of {m} local fits are singular; reporting r_{j} = 0");
        return 0.0;
    }
    let num: f64 = errors.iter().map(|e| e.unwrap().powi(2)).sum();
    let den = target.norm_squared();
    if den == 0.0 {
        return 0.0;
    }
    (num / den).sqrt()
}
