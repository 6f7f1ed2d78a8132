//! Symmetric eigensolvers for the leading part of a spectrum.

use std::fmt::Debug;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::registry::{Registry, StrategySpec};

pub trait EigenSolver: Send + Sync + Debug {
    fn name(&self) -> &'static str;

    /// The `k` largest eigenpairs of the symmetric matrix `s`: eigenvalues in
    /// descending order, orthonormal eigenvectors as columns.
    fn largest(&self, s: &DMatrix<f64>, k: usize) -> Result<(Vec<f64>, DMatrix<f64>)>;
}

pub fn registry() -> Registry<dyn EigenSolver> {
    let mut reg: Registry<dyn EigenSolver> = Registry::new("eigensolver");
    reg.register("dense", "full symmetric QR eigendecomposition", |spec| {
        spec.check_keys(&[])?;
        Ok(Box::new(Dense))
    });
    reg.register(
        "lanczos",
        "Lanczos with full reorthogonalization and a growing Krylov space",
        |spec| {
            spec.check_keys(&["krylov_dim", "tol"])?;
            let d = Lanczos::default();
            let out = Lanczos {
                krylov_dim: spec.param("krylov_dim", d.krylov_dim as f64) as usize,
                tol: spec.param("tol", d.tol),
            };
            if out.krylov_dim < 2 || !(out.tol > 0.0) {
                return Err(Error::invalid("lanczos needs krylov_dim >= 2 and tol > 0"));
            }
            Ok(Box::new(out))
        },
    );
    reg
}

pub fn default_spec() -> StrategySpec {
    StrategySpec::named("dense")
}

#[derive(Debug, Clone, Copy)]
pub struct Dense;

impl EigenSolver for Dense {
    fn name(&self) -> &'static str {
        "dense"
    }

    fn largest(&self, s: &DMatrix<f64>, k: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
        check(s, k)?;
        let eig = SymmetricEigen::try_new(s.clone(), f64::EPSILON, 0)
            .ok_or_else(|| Error::Eigen("symmetric QR iteration failed".into()))?;
        Ok(top_k(&eig.eigenvalues, &eig.eigenvectors, k))
    }
}

#[derive(Debug, Clone)]
pub struct Lanczos {
    pub krylov_dim: usize,
    /// Ritz residual bound relative to the spectral radius.
    pub tol: f64,
}

impl Default for Lanczos {
    fn default() -> Self {
        Self {
            krylov_dim: 80,
            tol: 1e-13,
        }
    }
}

impl EigenSolver for Lanczos {
    fn name(&self) -> &'static str {
        "lanczos"
    }

    fn largest(&self, s: &DMatrix<f64>, k: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
        check(s, k)?;
        let n = s.nrows();
        if n <= 2 * k + 8 {
            return Dense.largest(s, k);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x1a2c_2057);
        let start = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
        let mut m = self.krylov_dim.max(2 * k + 8).min(n);
        loop {
            let (values, vectors, converged) = self.run(s, &start, m, k);
            if converged || m == n {
                if !converged {
                    return Dense.largest(s, k);
                }
                return Ok((values, vectors));
            }
            m = (2 * m).min(n);
        }
    }
}

impl Lanczos {
    fn run(
        &self,
        s: &DMatrix<f64>,
        start: &DVector<f64>,
        m: usize,
        k: usize,
    ) -> (Vec<f64>, DMatrix<f64>, bool) {
        let n = s.nrows();
        let mut q = DMatrix::<f64>::zeros(n, m);
        let mut alpha = Vec::with_capacity(m);
        let mut beta: Vec<f64> = Vec::with_capacity(m);
        let mut v = start / start.norm();
        q.set_column(0, &v);
        let mut steps = m;
        let mut residual_scale = 0.0;
        for j in 0..m {
            let mut w = s * &v;
            let a = v.dot(&w);
            alpha.push(a);
            // two passes of classical Gram-Schmidt against the whole basis
            for _ in 0..2 {
                let basis = q.columns(0, j + 1);
                let coeff = basis.tr_mul(&w);
                w -= basis * coeff;
            }
            let b = w.norm();
            if j + 1 == m {
                residual_scale = b;
                break;
            }
            if b <= 1e-14 * a.abs().max(1.0) {
                // invariant subspace: continue from a fresh orthogonal direction
                match fresh_direction(&q.columns(0, j + 1).into_owned(), j as u64) {
                    Some(f) => {
                        beta.push(0.0);
                        v = f;
                    }
                    None => {
                        steps = j + 1;
                        residual_scale = 0.0;
                        break;
                    }
                }
            } else {
                beta.push(b);
                v = w / b;
            }
            q.set_column(j + 1, &v);
        }

        let mut t = DMatrix::<f64>::zeros(steps, steps);
        for i in 0..steps {
            t[(i, i)] = alpha[i];
            if i + 1 < steps {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let kk = k.min(steps);
        let (values, y) = top_k(&eig.eigenvalues, &eig.eigenvectors, kk);
        let radius = values.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
        let converged = kk == k
            && (0..kk).all(|i| (residual_scale * y[(steps - 1, i)]).abs() <= self.tol * radius);
        let mut vectors = q.columns(0, steps) * y;
        for mut col in vectors.column_iter_mut() {
            let nrm = col.norm();
            col /= nrm;
        }
        (values, vectors, converged)
    }
}

fn fresh_direction(basis: &DMatrix<f64>, seed: u64) -> Option<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let mut w = DVector::from_fn(basis.nrows(), |_, _| rng.random::<f64>() - 0.5);
    for _ in 0..2 {
        let coeff = basis.tr_mul(&w);
        w -= basis * coeff;
    }
    let n = w.norm();
    (n > 1e-8).then(|| w / n)
}

fn check(s: &DMatrix<f64>, k: usize) -> Result<()> {
    if s.nrows() != s.ncols() {
        return Err(Error::Eigen("matrix is not square".into()));
    }
    if k == 0 || k > s.nrows() {
        return Err(Error::Eigen(format!(
            "requested {k} eigenpairs of a {}x{} matrix",
            s.nrows(),
            s.ncols()
        )));
    }
    Ok(())
}

fn top_k(values: &DVector<f64>, vectors: &DMatrix<f64>, k: usize) -> (Vec<f64>, DMatrix<f64>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order.truncate(k);
    let vals = order.iter().map(|&i| values[i]).collect();
    let vecs = DMatrix::from_columns(&order.iter().map(|&i| vectors.column(i)).collect::<Vec<_>>());
    (vals, vecs)
}
