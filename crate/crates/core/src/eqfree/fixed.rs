//! Roots of the coarse time derivative `F(phi, v0)` for one-dimensional
//! macrostates.

use nalgebra::DVector;

use super::{restrict_state, CoarseStepper, MacroBranch, MacroFold, MacroPoint, MacroSettings, SeedSettings};
use crate::continuation::{continue_branch, locate_folds, newton_fixed_parameter, ContinuationProblem};
use crate::error::{Error, Result};

/// Unknowns `[phi, v0]`; residual `F(phi, v0)`.
pub struct FixedPointProblem<'a> {
    pub stepper: &'a CoarseStepper,
    pub fd_step: f64,
    pub stability_step: f64,
    pub sigma_floor: f64,
    /// Healed `sigma` of every accepted point.
    pub sigmas: Vec<f64>,
}

impl<'a> FixedPointProblem<'a> {
    pub fn new(stepper: &'a CoarseStepper, settings: &MacroSettings) -> Result<Self> {
        if stepper.dimension() != 1 {
            return Err(Error::invalid(format!(
                "fixed-point continuation needs a one-dimensional embedding, got D = {}",
                stepper.dimension()
            )));
        }
        Ok(Self {
            stepper,
            fd_step: settings.fd_step,
            stability_step: settings.stability_step,
            sigma_floor: settings.sigma_floor,
            sigmas: Vec::new(),
        })
    }

    /// Healed `sigma` at the first snapshot.
    pub fn sigma(&self, z: &[f64]) -> Result<f64> {
        Ok(self.stepper.rhs_snapshots(&z[..1], z[1])?.0.sigma)
    }

    /// `dF/dphi` by central differences over `stability_step`.
    pub fn slope(&self, z: &[f64]) -> Result<f64> {
        let h = self.stability_step;
        let (a, b) = rayon::join(
            || self.stepper.coarse_rhs(&[z[0] + h], z[1]),
            || self.stepper.coarse_rhs(&[z[0] - h], z[1]),
        );
        Ok((a?[0] - b?[0]) / (2.0 * h))
    }
}

impl ContinuationProblem for FixedPointProblem<'_> {
    fn dim(&self) -> usize {
        2
    }

    fn residual(&self, z: &[f64]) -> Result<DVector<f64>> {
        Ok(DVector::from_vec(self.stepper.coarse_rhs(&z[..1], z[1])?))
    }

    fn fd_step(&self, _i: usize) -> f64 {
        self.fd_step
    }

    fn accept(&mut self, z: &[f64]) {
        let s = self.sigma(z).unwrap_or(f64::NAN);
        self.sigmas.push(s);
    }

    fn stable(&self, z: &[f64]) -> Option<bool> {
        match self.slope(z) {
            Ok(s) => Some(s < 0.0),
            Err(e) => {
                log::warn!("stability of fixed point {z:?} unknown: {e}");
                None
            }
        }
    }

    fn should_stop(&self, z: &[f64]) -> Option<String> {
        match self.sigma(z) {
            Ok(s) if s < self.sigma_floor => Some(format!("sigma {s:.3e} fell below the floor")),
            Ok(_) => None,
            Err(e) => Some(format!("sigma unavailable: {e}")),
        }
    }
}

/// Restriction of a settled jam, polished by Newton at the seed `v0`.
pub fn seed_fixed_point(
    stepper: &CoarseStepper,
    settings: &MacroSettings,
    seed: &SeedSettings,
) -> Result<Vec<f64>> {
    let p = stepper.params().with_v0(seed.v0);
    let settled = seed.settle(&p, &*crate::ode::registry().create(&stepper.config().integrator)?)?;
    let (_, phi) = restrict_state(stepper.ops(), &settled, &p)?;
    let problem = FixedPointProblem::new(stepper, settings)?;
    let (z, res) = newton_fixed_parameter(
        &problem,
        &[phi[0], seed.v0],
        settings.newton_tol,
        settings.newton_max_iter,
    )?;
    log::info!(
        "fixed-point seed at v0 = {}: phi {:.6e} -> {:.6e} (residual {res:.2e})",
        seed.v0,
        phi[0],
        z[0]
    );
    Ok(z)
}

pub fn continue_fixed_points(
    stepper: &CoarseStepper,
    start: &[f64],
    settings: &MacroSettings,
) -> Result<MacroBranch> {
    settings.validate()?;
    let mut problem = FixedPointProblem::new(stepper, settings)?;
    let trace = continue_branch(&mut problem, start, &settings.continuation())?;
    let mut points = Vec::with_capacity(trace.points.len());
    for (i, p) in trace.points.iter().enumerate() {
        points.push(MacroPoint {
            unknowns: vec![p.z[0]],
            v0: p.z[1],
            sigma: problem.sigmas[i],
            period: None,
            stable: p.stable,
            residual: p.residual,
            step: p.step,
        });
    }
    let folds = locate_folds(&trace.points, &problem.weights())
        .into_iter()
        .map(|f| MacroFold {
            after: f.after,
            v0: f.z[1],
            unknowns: vec![f.z[0]],
        })
        .collect();
    Ok(MacroBranch {
        points,
        folds,
        termination: trace.termination,
        integrations: stepper.integrations(),
    })
}
