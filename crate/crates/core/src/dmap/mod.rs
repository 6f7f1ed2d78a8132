//! Diffusion-map embedding of a dataset of headway profiles.

pub mod eigen;
pub mod epsilon;
pub mod select;

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, Dataset};
use crate::error::{Error, Result};
use crate::io;
use crate::registry::StrategySpec;

pub use eigen::EigenSolver;
pub use epsilon::EpsilonRule;
pub use select::{select_eigenvectors, FitScale, SelectOptions, SelectionReport};

pub const FORMAT_VERSION: u32 = 1;

/// Bound on `|M psi - lambda psi|_inf` for every returned eigenpair.
pub const SPECTRAL_RESIDUAL_TOL: f64 = 1e-10;

/// Learned embedding: kernel scale and the selected nontrivial eigenpairs of
/// the Markov matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionMap {
    pub epsilon: f64,
    pub eigenvalues: Vec<f64>,
    /// M x D, one column per selected eigenvector.
    pub eigenvectors: DMatrix<f64>,
    /// One-based indices into the nontrivial spectrum.
    pub selected_indices: Vec<usize>,
    pub dataset_fingerprint: String,
}

impl DiffusionMap {
    pub fn dimension(&self) -> usize {
        self.eigenvectors.ncols()
    }

    pub fn n_points(&self) -> usize {
        self.eigenvectors.nrows()
    }

    /// Embedding of data row `m`.
    pub fn coordinates(&self, m: usize) -> Vec<f64> {
        self.eigenvectors.row(m).iter().copied().collect()
    }

    pub fn embedding(&self) -> Vec<Vec<f64>> {
        (0..self.n_points()).map(|m| self.coordinates(m)).collect()
    }

    /// Writes the eigenvectors to `csv_path` and the header beside it as JSON.
    pub fn save(&self, csv_path: &Path) -> Result<()> {
        let rows = self.embedding();
        io::write_matrix_csv(csv_path, rows.iter().map(Vec::as_slice))?;
        let header = Header {
            format_version: FORMAT_VERSION,
            epsilon: self.epsilon,
            eigenvalues: self.eigenvalues.clone(),
            selected_indices: self.selected_indices.clone(),
            n_points: self.n_points(),
            dataset_fingerprint: self.dataset_fingerprint.clone(),
        };
        io::write_json(&dataset::sidecar_path(csv_path), &header)
    }

    pub fn load(csv_path: &Path) -> Result<Self> {
        let header: Header = io::read_json(&dataset::sidecar_path(csv_path))?;
        let schema = |reason: String| Error::Schema {
            path: csv_path.to_path_buf(),
            reason,
        };
        if header.format_version != FORMAT_VERSION {
            return Err(schema(format!(
                "format version {} (expected {FORMAT_VERSION})",
                header.format_version
            )));
        }
        let d = header.eigenvalues.len();
        if header.selected_indices.len() != d {
            return Err(schema("eigenvalue and index counts differ".into()));
        }
        let rows = io::read_matrix_csv(csv_path)?;
        if rows.len() != header.n_points {
            return Err(schema(format!(
                "header declares {} points, file has {}",
                header.n_points,
                rows.len()
            )));
        }
        if let Some(bad) = rows.iter().position(|r| r.len() != d) {
            return Err(schema(format!(
                "row {} has {} columns, expected {d}",
                bad + 1,
                rows[bad].len()
            )));
        }
        Ok(Self {
            epsilon: header.epsilon,
            eigenvalues: header.eigenvalues,
            eigenvectors: DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]),
            selected_indices: header.selected_indices,
            dataset_fingerprint: header.dataset_fingerprint,
        })
    }

    /// Fails unless `data` is the dataset this map was built on.
    pub fn check_dataset(&self, data: &Dataset) -> Result<()> {
        if data.len() != self.n_points() || data.fingerprint() != self.dataset_fingerprint {
            return Err(Error::Schema {
                path: Default::default(),
                reason: "diffusion map was built on a different dataset".into(),
            });
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    epsilon: f64,
    eigenvalues: Vec<f64>,
    selected_indices: Vec<usize>,
    n_points: usize,
    dataset_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DmapOptions {
    pub epsilon: StrategySpec,
    pub eigensolver: StrategySpec,
    pub max_candidates: usize,
    pub threshold: f64,
    pub fit_scale: FitScale,
    /// Skip selection and keep the leading `D` eigenvectors.
    pub force_dimension: Option<usize>,
}

impl Default for DmapOptions {
    fn default() -> Self {
        let sel = SelectOptions::default();
        Self {
            epsilon: epsilon::default_spec(),
            eigensolver: StrategySpec::named("lanczos"),
            max_candidates: sel.max_candidates,
            threshold: sel.threshold,
            fit_scale: sel.fit_scale,
            force_dimension: None,
        }
    }
}

impl DmapOptions {
    pub fn select_options(&self) -> SelectOptions {
        SelectOptions {
            max_candidates: self.max_candidates,
            threshold: self.threshold,
            fit_scale: self.fit_scale.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        epsilon::registry().create(&self.epsilon)?;
        eigen::registry().create(&self.eigensolver)?;
        if let FitScale::Rule(spec) = &self.fit_scale {
            epsilon::registry().create(spec)?;
        }
        if self.max_candidates == 0 {
            return Err(Error::invalid("max_candidates must be positive"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::invalid("threshold must lie in (0, 1)"));
        }
        if self.force_dimension == Some(0) {
            return Err(Error::invalid("force_dimension must be positive"));
        }
        Ok(())
    }
}

/// Euclidean distances between the rows of `x`.
pub fn pairwise_distances_rows(x: &DMatrix<f64>) -> DMatrix<f64> {
    let m = x.nrows();
    let rows: Vec<Vec<f64>> = (0..m).map(|i| x.row(i).iter().copied().collect()).collect();
    distance_matrix(&rows)
}

/// Euclidean distances between dataset rows.
pub fn pairwise_distances(data: &Dataset) -> Result<DMatrix<f64>> {
    if data.len() < 2 {
        return Err(Error::Degenerate("need at least two rows".into()));
    }
    let rows: Vec<&[f64]> = data.profiles.iter().map(|p| p.as_slice()).collect();
    Ok(distance_matrix(&rows))
}

fn distance_matrix<R: AsRef<[f64]> + Sync>(rows: &[R]) -> DMatrix<f64> {
    let m = rows.len();
    let upper: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let a = rows[i].as_ref();
            (i + 1..m).map(|j| euclidean(a, rows[j].as_ref())).collect()
        })
        .collect();
    let mut d = DMatrix::zeros(m, m);
    for (i, row) in upper.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            d[(i, i + 1 + k)] = v;
            d[(i + 1 + k, i)] = v;
        }
    }
    d
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Row-normalized Gaussian kernel, keeping the symmetric kernel and row sums
/// for the symmetric eigenproblem.
#[derive(Debug, Clone)]
pub struct MarkovMatrix {
    pub kernel: DMatrix<f64>,
    pub row_sums: DVector<f64>,
}

impl MarkovMatrix {
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut m = self.kernel.clone();
        for (i, mut row) in m.row_iter_mut().enumerate() {
            row /= self.row_sums[i];
        }
        m
    }

    /// `M v` without forming M.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        (&self.kernel * v).component_div(&self.row_sums)
    }

    pub fn dim(&self) -> usize {
        self.row_sums.len()
    }
}

pub fn markov_matrix(distances: &DMatrix<f64>, epsilon: f64) -> Result<MarkovMatrix> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!("kernel scale must be positive, got {epsilon}")));
    }
    let inv = 1.0 / (epsilon * epsilon);
    let kernel = distances.map(|d| (-d * d * inv).exp());
    let row_sums = DVector::from_iterator(kernel.nrows(), kernel.row_iter().map(|r| r.sum()));
    Ok(MarkovMatrix { kernel, row_sums })
}

/// Leading `n_eigs` nontrivial eigenpairs of the Markov matrix.
///
/// Eigenvectors are unit-norm columns whose largest-magnitude entry is
/// positive.
pub fn spectrum(
    markov: &MarkovMatrix,
    n_eigs: usize,
    solver: &dyn EigenSolver,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let m = markov.dim();
    if n_eigs == 0 || n_eigs >= m {
        return Err(Error::invalid(format!(
            "need 0 < n_eigs < {m}, got {n_eigs}"
        )));
    }
    let q = markov.row_sums.map(|v| 1.0 / v.sqrt());
    let mut s = markov.kernel.clone();
    for j in 0..m {
        for i in 0..m {
            s[(i, j)] *= q[i] * q[j];
        }
    }
    let (values, phi) = solver.largest(&s, n_eigs + 1)?;
    let mut vectors = DMatrix::zeros(m, n_eigs);
    for k in 0..n_eigs {
        let mut psi = phi.column(k + 1).component_mul(&q);
        psi /= psi.norm();
        let imax = psi.iamax();
        if psi[imax] < 0.0 {
            psi.neg_mut();
        }
        let res = (markov.apply(&psi) - &psi * values[k + 1]).amax();
        if !(res <= SPECTRAL_RESIDUAL_TOL) {
            return Err(Error::Eigen(format!(
                "eigenpair {} has residual {res:.3e} (solver {})",
                k + 1,
                solver.name()
            )));
        }
        vectors.set_column(k, &psi);
    }
    Ok((values[1..].to_vec(), vectors))
}

pub fn embed(data: &Dataset, options: &DmapOptions) -> Result<(DiffusionMap, SelectionReport)> {
    options.validate()?;
    data.check_shape()?;
    let distances = pairwise_distances(data)?;
    let epsilon = epsilon::registry().create(&options.epsilon)?.select(&distances)?;
    let markov = markov_matrix(&distances, epsilon)?;
    let solver = eigen::registry().create(&options.eigensolver)?;
    let m = data.len();
    let want = match options.force_dimension {
        Some(d) => d.max(options.max_candidates.min(m - 1)),
        None => options.max_candidates,
    };
    if want >= m {
        return Err(Error::invalid(format!(
            "{want} eigenvectors requested from {m} points"
        )));
    }
    let (values, vectors) = spectrum(&markov, want, solver.as_ref())?;
    let report = select_eigenvectors(&vectors, epsilon, &options.select_options())?;
    let selected: Vec<usize> = match options.force_dimension {
        Some(d) => (1..=d).collect(),
        None => report.selected.clone(),
    };
    if selected.is_empty() {
        return Err(Error::Degenerate("no eigenvector selected".into()));
    }
    let map = DiffusionMap {
        epsilon,
        eigenvalues: selected.iter().map(|&j| values[j - 1]).collect(),
        eigenvectors: DMatrix::from_columns(
            &selected.iter().map(|&j| vectors.column(j - 1)).collect::<Vec<_>>(),
        ),
        selected_indices: selected,
        dataset_fingerprint: data.fingerprint(),
    };
    Ok((map, report))
}
