mod support;

use support::invariants;

#[test]
fn markov_rows_sum_to_one() {
    invariants::markov_rows_sum_to_one(256).unwrap();
}

#[test]
fn spectrum_is_permutation_equivariant() {
    invariants::spectrum_is_permutation_equivariant(128).unwrap();
}

#[test]
fn headway_sum_is_conserved() {
    invariants::headway_sum_is_conserved(128).unwrap();
}

#[test]
fn nystrom_is_exact_in_sample() {
    invariants::nystrom_is_exact_in_sample(64).unwrap();
}

#[test]
fn lifts_are_convex_combinations() {
    invariants::lifts_are_convex_combinations(64).unwrap();
}
