//! Structural invariants on random inputs, as proptest runners.

use eqfree_core::dataset::Dataset;
use eqfree_core::dmap::{self, eigen, DmapOptions};
use eqfree_core::model::{self, HeadwayProfile, ModelParams};
use eqfree_core::operators::{OperatorOptions, OperatorPair};
use eqfree_core::registry::StrategySpec;
use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use super::Check;

fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Check
where
    S::Value: std::fmt::Debug,
{
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

/// Headway profiles of 30 cars that fill the default ring.
fn profile() -> impl Strategy<Value = HeadwayProfile> {
    prop::collection::vec(0.2f64..4.0, 30).prop_map(|h| {
        let scale = ModelParams::default().road_length / h.iter().sum::<f64>();
        HeadwayProfile::new(h.into_iter().map(|x| x * scale).collect())
    })
}

fn dataset(rows: std::ops::Range<usize>) -> impl Strategy<Value = Dataset> {
    prop::collection::vec(profile(), rows)
        .prop_map(|p| Dataset::from_profiles(p, ModelParams::default()).unwrap())
}

fn points(m: std::ops::Range<usize>) -> impl Strategy<Value = DMatrix<f64>> {
    m.prop_flat_map(|m| {
        prop::collection::vec(-3.0f64..3.0, m * 4).prop_map(move |v| DMatrix::from_row_slice(m, 4, &v))
    })
}

fn operators(data: Dataset, d: usize) -> OperatorPair {
    let opts = DmapOptions {
        max_candidates: d + 2,
        force_dimension: Some(d),
        ..DmapOptions::default()
    };
    let (map, _) = dmap::embed(&data, &opts).unwrap();
    OperatorPair::new(map, data, &OperatorOptions::default()).unwrap()
}

pub fn markov_rows_sum_to_one(cases: u32) -> Check {
    run(cases, (points(2..40), 0.1f64..10.0), |(x, eps)| {
        let d = dmap::pairwise_distances_rows(&x);
        let m = dmap::markov_matrix(&d, eps).unwrap().matrix();
        for row in m.row_iter() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-12, "row sum {}", row.sum());
            prop_assert!(row.iter().all(|&v| v >= 0.0));
        }
        Ok(())
    })
}

pub fn spectrum_is_permutation_equivariant(cases: u32) -> Check {
    let solver = eigen::registry().create(&StrategySpec::named("dense")).unwrap();
    let strategy = points(6..20).prop_flat_map(|x| {
        let m = x.nrows();
        (Just(x), Just((0..m).collect::<Vec<_>>()).prop_shuffle())
    });
    run(cases, strategy, |(x, perm)| {
        let m = x.nrows();
        let y = DMatrix::from_fn(m, 4, |i, j| x[(perm[i], j)]);
        let spec = |x: &DMatrix<f64>| {
            let markov = dmap::markov_matrix(&dmap::pairwise_distances_rows(x), 2.0).unwrap();
            dmap::spectrum(&markov, 3, solver.as_ref()).unwrap()
        };
        let (va, a) = spec(&x);
        let (vb, b) = spec(&y);
        for k in 0..3 {
            prop_assert!((va[k] - vb[k]).abs() < 1e-10);
            // eigenvectors are only determined for isolated eigenvalues
            let gap = (0..3)
                .filter(|&j| j != k)
                .map(|j| (va[k] - va[j]).abs())
                .fold(f64::INFINITY, f64::min);
            if gap > 1e-4 {
                let dot: f64 = (0..m).map(|i| b[(i, k)] * a[(perm[i], k)]).sum();
                prop_assert!((dot.abs() - 1.0).abs() < 1e-8, "overlap {}", dot);
            }
        }
        Ok(())
    })
}

pub fn headway_sum_is_conserved(cases: u32) -> Check {
    run(cases, (profile(), 0.0f64..60.0, 0.8f64..1.2), |(h, t, v0)| {
        let p = ModelParams::default().with_v0(v0);
        let state = model::state_from_headways(&h, &p).unwrap();
        let later = model::evolve(&state, t, &p).unwrap();
        let total = model::headways(&later, &p).total();
        prop_assert!((total - p.road_length).abs() <= 1e-8 * p.road_length, "total {}", total);
        Ok(())
    })
}

pub fn nystrom_is_exact_in_sample(cases: u32) -> Check {
    run(cases, (dataset(8..24), 1usize..3), |(data, d)| {
        let ops = operators(data, d);
        for m in 0..ops.data().len() {
            let r = ops.restrict(&ops.data().profiles[m]).unwrap();
            let c = ops.dmap().coordinates(m);
            for (a, b) in r.iter().zip(&c) {
                prop_assert!((a - b).abs() <= 1e-12, "row {}: {} vs {}", m, a, b);
            }
        }
        Ok(())
    })
}

pub fn lifts_are_convex_combinations(cases: u32) -> Check {
    let pick = (any::<prop::sample::Index>(), any::<prop::sample::Index>(), 0.0f64..1.0);
    run(cases, (dataset(8..24), 1usize..3, pick), |(data, d, (i, j, w))| {
        let ops = operators(data, d);
        let n = ops.data().len();
        let (ci, cj) = (ops.dmap().coordinates(i.index(n)), ops.dmap().coordinates(j.index(n)));
        let target: Vec<f64> = ci.iter().zip(&cj).map(|(a, b)| w * a + (1.0 - w) * b).collect();
        let l = ops.lift(&target).unwrap();
        prop_assert_eq!(l.coefficients.len(), l.neighbor_indices.len());
        prop_assert!((l.coefficients.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(l.coefficients.iter().all(|&c| c >= 0.0));
        for (car, &h) in l.microstate.as_slice().iter().enumerate() {
            let mix: f64 = l
                .coefficients
                .iter()
                .zip(&l.neighbor_indices)
                .map(|(c, &r)| c * ops.data().profiles[r].as_slice()[car])
                .sum();
            prop_assert!((h - mix).abs() < 1e-12);
        }
        prop_assert!((l.microstate.total() - ops.data().params.road_length).abs() < 1e-10);
        Ok(())
    })
}
