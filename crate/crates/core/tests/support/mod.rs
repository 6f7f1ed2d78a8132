//! Checks shared by the oracle and invariant targets and the acceptance run.
#![allow(dead_code)]

pub mod invariants;
pub mod oracles;

pub type Check = Result<(), String>;

pub fn close(got: f64, want: f64, tol: f64, what: &str) -> Check {
    if (got - want).abs() <= tol {
        Ok(())
    } else {
        Err(format!("{what}: {got:e} vs {want:e}"))
    }
}
