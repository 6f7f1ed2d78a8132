//! Equation-free modeling of the optimal-velocity traffic model with
//! data-driven lifting and restriction operators.

pub mod continuation;
pub mod dataset;
pub mod dmap;
pub mod eqfree;
pub mod error;
pub mod io;
pub mod model;
pub mod operators;
pub mod ode;
pub mod registry;
pub mod stats;
pub mod twcont;

pub use error::{Error, Result};
