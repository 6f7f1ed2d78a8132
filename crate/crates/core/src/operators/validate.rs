//! Leave-one-out restriction error and lift-then-restrict identity error.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use super::OperatorPair;
use crate::dataset::Dataset;
use crate::dmap::{self, eigen, epsilon, DiffusionMap, DmapOptions};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, Table};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointError {
    pub index: usize,
    /// Reference macrostate.
    pub coords: Vec<f64>,
    pub abs_error: f64,
    /// `abs_error / |coords|`.
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub points: Vec<PointError>,
    pub mean_abs: f64,
    pub max_abs: f64,
    pub mean_rel: f64,
    pub median_rel: f64,
    pub max_rel: f64,
    /// Root mean square of `|coords|` over all points.
    pub coord_rms: f64,
    /// `mean_abs / coord_rms`: relative error against the embedding scale.
    pub scaled_mean: f64,
}

impl ErrorReport {
    pub fn from_points(points: Vec<PointError>) -> Self {
        let n = points.len().max(1) as f64;
        let mean_abs = points.iter().map(|p| p.abs_error).sum::<f64>() / n;
        let max_abs = points.iter().map(|p| p.abs_error).fold(0.0, f64::max);
        let mean_rel = points.iter().map(|p| p.rel_error).sum::<f64>() / n;
        let max_rel = points.iter().map(|p| p.rel_error).fold(0.0, f64::max);
        let mut rels: Vec<f64> = points.iter().map(|p| p.rel_error).collect();
        let median_rel = if rels.is_empty() {
            0.0
        } else {
            epsilon::median(&mut rels)
        };
        let coord_rms = (points
            .iter()
            .map(|p| p.coords.iter().map(|c| c * c).sum::<f64>())
            .sum::<f64>()
            / n)
            .sqrt();
        Self {
            mean_abs,
            max_abs,
            mean_rel,
            median_rel,
            max_rel,
            coord_rms,
            scaled_mean: if coord_rms > 0.0 { mean_abs / coord_rms } else { 0.0 },
            points,
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let d = self.points.first().map_or(0, |p| p.coords.len());
        let mut header = vec!["index".to_string()];
        header.extend((1..=d).map(|l| format!("psi{l}")));
        header.extend(["abs_error".into(), "rel_error".into()]);
        let mut t = Table::new(header);
        for p in &self.points {
            let mut row = vec![p.index.to_string()];
            row.extend(p.coords.iter().map(|c| fmt_f64(*c)));
            row.push(fmt_f64(p.abs_error));
            row.push(fmt_f64(p.rel_error));
            t.push(row);
        }
        t.write(path)
    }
}

fn point(index: usize, coords: Vec<f64>, estimate: &[f64]) -> PointError {
    let abs_error = coords
        .iter()
        .zip(estimate)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let norm = coords.iter().map(|c| c * c).sum::<f64>().sqrt();
    PointError {
        index,
        coords,
        abs_error,
        rel_error: if norm > 0.0 { abs_error / norm } else { f64::INFINITY },
    }
}

/// Rebuilds the map without each row in turn and compares the Nyström
/// extension at the held-out row with its full-map coordinates.
///
/// The rebuilt eigenvectors are matched to the full ones by the least-squares
/// linear map between them on the shared rows, which fixes sign, the
/// normalization change from dropping one row, and rotations inside
/// near-degenerate eigenspaces.
pub fn validate_restriction_loo(
    data: &Dataset,
    full: &DiffusionMap,
    options: &DmapOptions,
) -> Result<ErrorReport> {
    full.check_dataset(data)?;
    let m = data.len();
    if m < 3 {
        return Err(Error::invalid("leave-one-out needs at least three rows"));
    }
    let rule = epsilon::registry().create(&options.epsilon)?;
    let solver = eigen::registry().create(&options.eigensolver)?;
    let n_eigs = *full.selected_indices.iter().max().expect("nonempty selection");
    if n_eigs >= m - 1 {
        return Err(Error::invalid("too few rows for the selected eigenvectors"));
    }
    let dist = dmap::pairwise_distances(data)?;
    let d = full.dimension();
    let points = (0..m)
        .into_par_iter()
        .map(|out| -> Result<PointError> {
            let keep: Vec<usize> = (0..m).filter(|&i| i != out).collect();
            let sub = dist.select_rows(&keep).select_columns(&keep);
            let eps = rule.select(&sub)?;
            let markov = dmap::markov_matrix(&sub, eps)?;
            let (values, vectors) = dmap::spectrum(&markov, n_eigs, solver.as_ref())?;
            let cols: Vec<usize> = full.selected_indices.iter().map(|j| j - 1).collect();
            let psi = vectors.select_columns(&cols);
            let lambda: Vec<f64> = cols.iter().map(|&c| values[c]).collect();
            let reference = full.eigenvectors.select_rows(&keep);
            let map = match alignment(&psi, &reference) {
                Some(a) => a,
                None => return Err(Error::Degenerate("rebuilt eigenvectors are rank deficient".into())),
            };
            let inv = 1.0 / (eps * eps);
            let mut acc = vec![0.0; d];
            let mut mass = 0.0;
            for (r, &i) in keep.iter().enumerate() {
                let w = (-dist[(out, i)].powi(2) * inv).exp();
                mass += w;
                for (l, a) in acc.iter_mut().enumerate() {
                    *a += w * psi[(r, l)];
                }
            }
            if !(mass >= super::SUPPORT_FLOOR) {
                return Err(Error::OutOfSupport { mass });
            }
            let raw: Vec<f64> = (0..d).map(|l| acc[l] / (mass * lambda[l])).collect();
            let est: Vec<f64> = (0..d)
                .map(|c| (0..d).map(|l| raw[l] * map[(l, c)]).sum())
                .collect();
            Ok(point(out, full.coordinates(out), &est))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorReport::from_points(points))
}

/// Least-squares `A` with `psi * A ≈ reference`.
fn alignment(psi: &DMatrix<f64>, reference: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let gram = psi.tr_mul(psi);
    let rhs = psi.tr_mul(reference);
    gram.cholesky().map(|c| c.solve(&rhs))
}

/// Lifts every target, restricts the result, and reports `|φ - R(L(φ))|`.
pub fn validate_lift_identity(ops: &OperatorPair, targets: &[Vec<f64>]) -> Result<ErrorReport> {
    let points = targets
        .par_iter()
        .enumerate()
        .map(|(i, t)| -> Result<PointError> {
            let lifted = ops.lift(t)?;
            let back = match ops.restrict(&lifted.microstate) {
                Ok(r) => r,
                Err(Error::OutOfSupport { .. }) => vec![f64::INFINITY; t.len()],
                Err(e) => return Err(e),
            };
            Ok(point(i, t.clone(), &back))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorReport::from_points(points))
}
