//! Restriction by Nyström extension and lifting by convex interpolation of
//! dataset rows.

pub mod optimizer;
pub mod validate;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::{alignment_registry, Aligner, Dataset};
use crate::dmap::DiffusionMap;
use crate::error::{Error, Result};
use crate::model::HeadwayProfile;
use crate::registry::StrategySpec;

pub use optimizer::LiftOptimizer;
pub use validate::{validate_lift_identity, validate_restriction_loo, ErrorReport, PointError};

/// Kernel mass below which a profile counts as outside the data support.
pub const SUPPORT_FLOOR: f64 = 1e-300;

/// Default number of interpolation rows for an embedding of dimension `d`.
pub fn default_lift_k(d: usize) -> usize {
    match d {
        1 => 3,
        2 => 8,
        _ => 2 * d + 4,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OperatorOptions {
    /// `None` picks [`default_lift_k`].
    pub lift_k: Option<usize>,
    pub optimizer: StrategySpec,
    /// Lifts whose residual stays above this are flagged degraded.
    pub degraded_threshold: f64,
}

impl Default for OperatorOptions {
    fn default() -> Self {
        Self {
            lift_k: None,
            optimizer: optimizer::default_spec(),
            degraded_threshold: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftResult {
    pub microstate: HeadwayProfile,
    pub coefficients: Vec<f64>,
    pub neighbor_indices: Vec<usize>,
    pub residual: f64,
    pub evaluations: usize,
    pub degraded: bool,
}

/// Restriction and lifting bound to one diffusion map and its dataset.
#[derive(Debug, Clone)]
pub struct OperatorPair {
    dmap: DiffusionMap,
    data: Dataset,
    lift_k: usize,
    optimizer: Arc<dyn LiftOptimizer>,
    aligner: Option<Arc<dyn Aligner>>,
    degraded_threshold: f64,
}

impl OperatorPair {
    pub fn new(dmap: DiffusionMap, data: Dataset, options: &OperatorOptions) -> Result<Self> {
        dmap.check_dataset(&data)?;
        let d = dmap.dimension();
        let lift_k = options.lift_k.unwrap_or_else(|| default_lift_k(d));
        if lift_k < d + 1 || lift_k > data.len() {
            return Err(Error::invalid(format!(
                "lift_k must lie in {}..={} for D = {d}, got {lift_k}",
                d + 1,
                data.len()
            )));
        }
        if dmap.eigenvalues.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::Degenerate("nonpositive eigenvalue in the map".into()));
        }
        let optimizer: Arc<dyn LiftOptimizer> =
            optimizer::registry().create(&options.optimizer)?.into();
        let aligner = match &data.alignment {
            Some(spec) => Some(alignment_registry().create(spec)?.into()),
            None => None,
        };
        Ok(Self {
            dmap,
            data,
            lift_k,
            optimizer,
            aligner,
            degraded_threshold: options.degraded_threshold,
        })
    }

    pub fn dmap(&self) -> &DiffusionMap {
        &self.dmap
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn dimension(&self) -> usize {
        self.dmap.dimension()
    }

    pub fn lift_k(&self) -> usize {
        self.lift_k
    }

    /// Nyström extension of the selected eigenvectors to `profile`.
    ///
    /// Profiles restricted through a map built on aligned data are aligned
    /// first, with the rows' strategy.
    pub fn restrict(&self, profile: &HeadwayProfile) -> Result<Vec<f64>> {
        if profile.len() != self.data.n_cars() {
            return Err(Error::DimensionMismatch {
                expected: self.data.n_cars(),
                got: profile.len(),
            });
        }
        match &self.aligner {
            Some(a) => {
                let aligned = a.align(profile, self.data.anchor_index);
                nystrom(&self.dmap, &self.data, aligned.as_slice())
            }
            None => nystrom(&self.dmap, &self.data, profile.as_slice()),
        }
    }

    /// Indices of the `k` rows nearest to `target` in the embedding; ties go
    /// to the smaller index.
    pub fn nearest_rows(&self, target: &[f64], k: usize) -> Vec<usize> {
        let mut dist: Vec<(f64, usize)> = (0..self.data.len())
            .map(|m| {
                let d2: f64 = (0..self.dimension())
                    .map(|l| (self.dmap.eigenvectors[(m, l)] - target[l]).powi(2))
                    .sum();
                (d2, m)
            })
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        dist.into_iter().take(k).map(|(_, m)| m).collect()
    }

    pub fn lift(&self, target: &[f64]) -> Result<LiftResult> {
        self.lift_with_k(target, self.lift_k)
    }

    /// Lifting with an explicit neighbor count; `k = 1` returns the nearest row.
    pub fn lift_with_k(&self, target: &[f64], k: usize) -> Result<LiftResult> {
        let d = self.dimension();
        if target.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: target.len(),
            });
        }
        if target.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("lift target is not finite"));
        }
        if k == 0 || k > self.data.len() {
            return Err(Error::invalid(format!("cannot interpolate {k} rows")));
        }
        let rows = self.nearest_rows(target, k);
        let combine = |w: &[f64]| -> HeadwayProfile {
            let n = self.data.n_cars();
            let mut out = vec![0.0; n];
            for (wk, &m) in w.iter().zip(&rows) {
                for (o, x) in out.iter_mut().zip(self.data.profiles[m].as_slice()) {
                    *o += wk * x;
                }
            }
            HeadwayProfile::new(out)
        };
        let objective = |w: &[f64]| -> f64 {
            match self.restrict(&combine(w)) {
                Ok(r) => r
                    .iter()
                    .zip(target)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt(),
                Err(_) => f64::INFINITY,
            }
        };
        let starts = start_weights(self, target, &rows);
        let min = self.optimizer.minimize(&objective, &starts);
        let s: f64 = min.weights.iter().sum();
        let coefficients: Vec<f64> = min.weights.iter().map(|w| w / s).collect();
        let residual = objective(&coefficients);
        let degraded = residual > self.degraded_threshold;
        if degraded {
            log::debug!(
                "lift to {target:?} stopped at residual {residual:.3e} after {} evaluations",
                min.evaluations
            );
        }
        Ok(LiftResult {
            microstate: combine(&coefficients),
            coefficients,
            neighbor_indices: rows,
            residual,
            evaluations: min.evaluations,
            degraded,
        })
    }
}

/// Uniform weights, the nearest vertex, and inverse-distance weights.
fn start_weights(ops: &OperatorPair, target: &[f64], rows: &[usize]) -> Vec<Vec<f64>> {
    let k = rows.len();
    let mut vertex = vec![0.0; k];
    vertex[0] = 1.0;
    let inv: Vec<f64> = rows
        .iter()
        .map(|&m| {
            let d = ops
                .dmap
                .coordinates(m)
                .iter()
                .zip(target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            1.0 / d
        })
        .collect();
    let idw = if inv.iter().all(|v| v.is_finite()) {
        let s: f64 = inv.iter().sum();
        inv.iter().map(|v| v / s).collect()
    } else {
        vertex.clone()
    };
    vec![vec![1.0 / k as f64; k], vertex, idw]
}

/// Nyström extension without alignment.
pub fn nystrom(dmap: &DiffusionMap, data: &Dataset, x: &[f64]) -> Result<Vec<f64>> {
    let inv = 1.0 / (dmap.epsilon * dmap.epsilon);
    let d = dmap.dimension();
    let mut acc = vec![0.0; d];
    let mut mass = 0.0;
    for (m, row) in data.profiles.iter().enumerate() {
        let d2: f64 = row
            .as_slice()
            .iter()
            .zip(x)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let w = (-d2 * inv).exp();
        mass += w;
        for (l, a) in acc.iter_mut().enumerate() {
            *a += w * dmap.eigenvectors[(m, l)];
        }
    }
    if !(mass >= SUPPORT_FLOOR) {
        return Err(Error::OutOfSupport { mass });
    }
    Ok(acc
        .iter()
        .zip(&dmap.eigenvalues)
        .map(|(a, l)| a / (mass * l))
        .collect())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::dmap::{self, DmapOptions};
    use crate::model::ModelParams;
    use std::f64::consts::PI;

    /// Rows `2 + a cos(2 pi j / N)` for `m` evenly spaced amplitudes.
    pub(crate) fn curve(m: usize) -> Dataset {
        let p = ModelParams::default();
        let rows = (0..m)
            .map(|i| {
                let a = 1.5 * i as f64 / (m - 1) as f64;
                HeadwayProfile::new(
                    (1..=p.n_cars)
                        .map(|j| 2.0 + a * (2.0 * PI * j as f64 / p.n_cars as f64).cos())
                        .collect(),
                )
            })
            .collect();
        Dataset::from_profiles(rows, p).unwrap()
    }

    pub(crate) fn curve_ops(m: usize) -> OperatorPair {
        let data = curve(m);
        let opts = DmapOptions {
            max_candidates: 5,
            force_dimension: Some(1),
            ..DmapOptions::default()
        };
        let (map, _) = dmap::embed(&data, &opts).unwrap();
        OperatorPair::new(map, data, &OperatorOptions::default()).unwrap()
    }

    #[test]
    fn restriction_is_exact_in_sample() {
        let ops = curve_ops(30);
        for m in 0..30 {
            let r = ops.restrict(&ops.data().profiles[m]).unwrap();
            assert!((r[0] - ops.dmap().coordinates(m)[0]).abs() < 1e-12, "row {m}");
        }
    }

    #[test]
    fn single_neighbor_lift_copies_the_row() {
        let ops = curve_ops(30);
        let target = ops.dmap().coordinates(7);
        let l = ops.lift_with_k(&target, 1).unwrap();
        assert_eq!(l.neighbor_indices, vec![7]);
        assert_eq!(l.coefficients, vec![1.0]);
        assert_eq!(l.microstate, ops.data().profiles[7]);
        assert!(l.residual < 1e-12);
    }

    #[test]
    fn lifts_stay_on_the_simplex() {
        let ops = curve_ops(30);
        assert_eq!(ops.lift_k(), 3);
        let a = ops.dmap().coordinates(10)[0];
        let b = ops.dmap().coordinates(11)[0];
        let l = ops.lift(&[0.3 * a + 0.7 * b]).unwrap();
        assert!(!l.degraded, "residual {}", l.residual);
        assert!(l.coefficients.iter().all(|w| *w >= 0.0));
        assert!((l.coefficients.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((l.microstate.total() - 60.0).abs() < 1e-9);
        let back = ops.restrict(&l.microstate).unwrap();
        assert!((back[0] - (0.3 * a + 0.7 * b)).abs() < 1e-6);
    }

    #[test]
    fn far_targets_degrade_gracefully() {
        let ops = curve_ops(30);
        let l = ops.lift(&[10.0]).unwrap();
        assert!(l.degraded);
        assert!((l.coefficients.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(ops.lift(&[f64::NAN]).is_err());
        assert!(ops.lift(&[0.0, 0.0]).is_err());
        assert!(ops.lift_with_k(&[0.0], 31).is_err());
    }

    #[test]
    fn profiles_outside_the_support_are_rejected() {
        let ops = curve_ops(30);
        let mut far = vec![2.0; 30];
        far[0] = 1e4;
        assert!(matches!(
            ops.restrict(&HeadwayProfile::new(far)),
            Err(Error::OutOfSupport { .. })
        ));
        assert!(ops.restrict(&HeadwayProfile::new(vec![2.0; 29])).is_err());
    }

    #[test]
    fn construction_checks() {
        let ops = curve_ops(30);
        let map = ops.dmap().clone();
        let bad_k = OperatorOptions {
            lift_k: Some(1),
            ..OperatorOptions::default()
        };
        assert!(OperatorPair::new(map.clone(), curve(30), &bad_k).is_err());
        assert!(OperatorPair::new(map, curve(31), &OperatorOptions::default()).is_err());
        assert_eq!(default_lift_k(1), 3);
        assert_eq!(default_lift_k(2), 8);
        assert_eq!(default_lift_k(3), 10);
    }

    #[test]
    fn aligned_maps_align_before_restricting() {
        let spec = crate::dataset::default_alignment();
        let data = crate::dataset::align_all(&curve(30), 10, &spec).unwrap();
        let opts = DmapOptions {
            max_candidates: 5,
            force_dimension: Some(1),
            ..DmapOptions::default()
        };
        let (map, _) = dmap::embed(&data, &opts).unwrap();
        let ops = OperatorPair::new(map, data, &OperatorOptions::default()).unwrap();
        let row = ops.data().profiles[12].clone();
        let a = ops.restrict(&row).unwrap();
        let b = ops.restrict(&crate::model::shift_profile(&row, 4.3)).unwrap();
        assert!((a[0] - b[0]).abs() < 1e-10);
    }
}
