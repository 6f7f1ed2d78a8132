//! Distances, Markov normalization and small spectra against brute-force
//! and frozen dense references.

use eqfree_core::dmap::{self, eigen, epsilon};
use eqfree_core::registry::StrategySpec;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{close, Check};

pub const TOL: f64 = 1e-10;

fn points() -> DMatrix<f64> {
    DMatrix::from_row_slice(
        4,
        3,
        &[0.0, 0.0, 1.0, 1.0, 0.5, 0.0, 0.3, 2.0, 0.7, 1.5, 1.5, 1.5],
    )
}

// numpy: Markov matrix with eps = median distance, then numpy.linalg.eig on
// the nonsymmetric matrix, unit norm, largest entry positive
const DISTANCES: [(usize, usize, f64); 6] = [
    (0, 1, 1.5),
    (0, 2, 2.044_504_830_026_087_3),
    (0, 3, 2.179_449_471_770_337),
    (1, 2, 1.797_220_075_561_142_7),
    (1, 3, 1.870_828_693_386_970_7),
    (2, 3, 1.526_433_752_247_374_8),
];
const EPS: f64 = 1.834_024_384_474_056_7;
const MARKOV: [f64; 16] = [
    4.891_209_647_945_445_88e-1, 2.505_585_729_364_493_42e-1, 1.411_623_268_252_430_17e-1, 1.191_581_354_437_629_28e-1,
    2.278_427_618_964_096_73e-1, 4.447_769_246_693_924_48e-1, 1.702_563_402_752_440_84e-1, 1.571_239_731_589_538_22e-1,
    1.328_982_146_977_212_01e-1, 1.762_696_989_059_581_44e-1, 4.604_861_966_670_123_49e-1, 2.303_458_897_293_082_79e-1,
    1.161_682_072_095_037_29e-1, 1.684_535_124_910_023_22e-1, 2.385_303_892_414_674_66e-1, 4.768_478_910_580_265_52e-1,
];
const VALUES: [f64; 3] = [4.210_350_101_157_873_67e-1, 2.327_307_684_114_860_44e-1, 2.174_661_986_617_026_37e-1];
const VECTORS: [[f64; 4]; 3] = [
    [6.543_704_899_538_576_04e-1, 3.160_373_981_264_039_12e-1, -4.135_236_419_276_410_17e-1, -5.485_597_710_641_397_78e-1],
    [-3.711_209_396_652_362_38e-2, -6.525_929_907_441_277_43e-2, 7.438_418_943_816_932_36e-1, -6.641_258_559_402_655_19e-1],
    [-6.037_808_842_889_954_56e-1, 7.773_441_825_649_282_10e-1, -8.917_241_003_842_597_82e-2, -1.524_235_772_037_953_74e-1],
];

pub fn frozen_four_point_spectrum() -> Check {
    let d = dmap::pairwise_distances_rows(&points());
    for (i, j, v) in DISTANCES {
        close(d[(i, j)], v, TOL, "distance")?;
        close(d[(j, i)], v, TOL, "distance")?;
    }
    let eps = epsilon::registry()
        .create(&"median:factor=1".parse().unwrap())
        .unwrap()
        .select(&d)
        .map_err(|e| e.to_string())?;
    close(eps, EPS, TOL, "median scale")?;
    let markov = dmap::markov_matrix(&d, eps).map_err(|e| e.to_string())?;
    let m = markov.matrix();
    for i in 0..4 {
        for j in 0..4 {
            close(m[(i, j)], MARKOV[4 * i + j], TOL, "Markov entry")?;
        }
    }
    for name in ["dense", "lanczos"] {
        let solver = eigen::registry().create(&StrategySpec::named(name)).unwrap();
        let (values, vectors) =
            dmap::spectrum(&markov, 3, solver.as_ref()).map_err(|e| e.to_string())?;
        for k in 0..3 {
            close(values[k], VALUES[k], TOL, &format!("{name} eigenvalue {}", k + 1))?;
            for i in 0..4 {
                close(vectors[(i, k)], VECTORS[k][i], TOL, &format!("{name} eigenvector {}", k + 1))?;
            }
        }
    }
    Ok(())
}

fn random_points(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |_, _| rng.random_range(-2.0..2.0))
}

pub fn distances_match_double_loop() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..20 {
        let (m, n) = (rng.random_range(2..12), rng.random_range(1..40));
        let x = random_points(&mut rng, m, n);
        let d = dmap::pairwise_distances_rows(&x);
        for i in 0..m {
            for j in 0..m {
                let mut s = 0.0;
                for k in 0..n {
                    s += (x[(i, k)] - x[(j, k)]) * (x[(i, k)] - x[(j, k)]);
                }
                close(d[(i, j)], s.sqrt(), TOL, "distance")?;
            }
        }
    }
    Ok(())
}

pub fn markov_matches_direct_normalization() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..20 {
        let m = rng.random_range(2..12);
        let x = random_points(&mut rng, m, 5);
        let d = dmap::pairwise_distances_rows(&x);
        let eps = rng.random_range(0.5..5.0);
        let markov = dmap::markov_matrix(&d, eps).map_err(|e| e.to_string())?.matrix();
        for i in 0..m {
            let row: Vec<f64> = (0..m).map(|j| (-(d[(i, j)] / eps).powi(2)).exp()).collect();
            let total: f64 = row.iter().sum();
            for j in 0..m {
                close(markov[(i, j)], row[j] / total, TOL, "Markov entry")?;
            }
        }
    }
    Ok(())
}

/// Cyclic Jacobi rotations on a symmetric matrix; eigenvalues descending.
fn jacobi(mut a: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut v = DMatrix::identity(n, n);
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)] == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    (values, vectors)
}

pub fn four_point_spectra_match_jacobi() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let solver = eigen::registry().create(&StrategySpec::named("lanczos")).unwrap();
    for _ in 0..25 {
        let x = random_points(&mut rng, 4, 6);
        let d = dmap::pairwise_distances_rows(&x);
        let markov = dmap::markov_matrix(&d, rng.random_range(2.0..8.0)).map_err(|e| e.to_string())?;
        let k = &markov.kernel;
        let sums: Vec<f64> = (0..4).map(|i| (0..4).map(|j| k[(i, j)]).sum()).collect();
        let s = DMatrix::from_fn(4, 4, |i, j| k[(i, j)] / (sums[i] * sums[j]).sqrt());
        let (values, phi) = jacobi(s);
        let (got_values, got) =
            dmap::spectrum(&markov, 3, solver.as_ref()).map_err(|e| e.to_string())?;
        close(values[0], 1.0, TOL, "trivial eigenvalue")?;
        for c in 0..3 {
            close(got_values[c], values[c + 1], TOL, "eigenvalue")?;
            let mut psi: Vec<f64> = (0..4).map(|i| phi[(i, c + 1)] / sums[i].sqrt()).collect();
            let norm = psi.iter().map(|v| v * v).sum::<f64>().sqrt();
            psi.iter_mut().for_each(|v| *v /= norm);
            let big = (0..4).max_by(|&a, &b| psi[a].abs().total_cmp(&psi[b].abs())).unwrap();
            let sign = psi[big].signum();
            for i in 0..4 {
                close(got[(i, c)], sign * psi[i], TOL, "eigenvector")?;
            }
        }
    }
    Ok(())
}
