//! Periodic orbits of two-dimensional macrostates through a Poincaré
//! section along the ray `r * phi_PS`.

use nalgebra::DVector;

use super::{restrict_state, CoarseStepper, MacroBranch, MacroFold, MacroPoint, MacroSettings, SeedSettings, Snapshot};
use crate::continuation::{
    continue_branch, locate_folds, newton_fixed_parameter, ContinuationProblem, ContinuationSettings,
};
use crate::error::{Error, Result};
use crate::model;
use crate::twcont::wave::drift_speed;

/// Unknowns `[r, T, v0]`; residual
/// `R(Phi_{t_skip}(L(r phi_PS))) - R(Phi_{t_skip + nu T}(L(r phi_PS)))`.
pub struct PoincareProblem<'a> {
    pub stepper: &'a CoarseStepper,
    pub settings: MacroSettings,
    /// Healed `sigma` of every accepted point.
    pub sigmas: Vec<f64>,
}

impl<'a> PoincareProblem<'a> {
    pub fn new(stepper: &'a CoarseStepper, settings: &MacroSettings) -> Result<Self> {
        if stepper.dimension() != 2 {
            return Err(Error::invalid(format!(
                "periodic-orbit continuation needs a two-dimensional embedding, got D = {}",
                stepper.dimension()
            )));
        }
        settings.validate()?;
        Ok(Self {
            stepper,
            settings: settings.clone(),
            sigmas: Vec::new(),
        })
    }

    fn section_point(&self, r: f64) -> [f64; 2] {
        let d = self.settings.section_direction;
        [r * d[0], r * d[1]]
    }

    /// Snapshots after healing and after `nu` further periods.
    pub fn returns(&self, z: &[f64]) -> Result<(Snapshot, Snapshot)> {
        let (r, period, v0) = (z[0], z[1], z[2]);
        if !(period > 0.0) {
            return Err(Error::invalid(format!("period must be positive, got {period}")));
        }
        let t0 = self.stepper.config().t_skip;
        let t1 = t0 + self.settings.nu as f64 * period;
        let mut s = self.stepper.trajectory(&self.section_point(r), v0, &[t0, t1])?;
        let b = s.pop().expect("two snapshots");
        let a = s.pop().expect("two snapshots");
        Ok((a, b))
    }

    /// Change of the distance from the embedding origin over `nu` periods.
    fn radial_growth(&self, z: &[f64]) -> Result<f64> {
        let (a, b) = self.returns(z)?;
        let norm = |v: &[f64]| v[0].hypot(v[1]);
        Ok(norm(&b.phi) - norm(&a.phi))
    }
}

impl ContinuationProblem for PoincareProblem<'_> {
    fn dim(&self) -> usize {
        3
    }

    fn residual(&self, z: &[f64]) -> Result<DVector<f64>> {
        let (a, b) = self.returns(z)?;
        Ok(DVector::from_vec(vec![a.phi[0] - b.phi[0], a.phi[1] - b.phi[1]]))
    }

    fn fd_step(&self, i: usize) -> f64 {
        if i == 1 {
            self.settings.fd_step_period
        } else {
            self.settings.fd_step
        }
    }

    fn weights(&self) -> DVector<f64> {
        DVector::from_vec(vec![1.0, self.settings.period_weight, 1.0])
    }

    fn accept(&mut self, z: &[f64]) {
        let s = self.returns(z).map(|s| s.0.sigma).unwrap_or(f64::NAN);
        self.sigmas.push(s);
    }

    /// Stable when the `nu`-period return pulls a perturbed radius back.
    fn stable(&self, z: &[f64]) -> Option<bool> {
        let h = self.settings.stability_step;
        let (up, down) = rayon::join(
            || self.radial_growth(&[z[0] + h, z[1], z[2]]),
            || self.radial_growth(&[z[0] - h, z[1], z[2]]),
        );
        match (up, down) {
            (Ok(a), Ok(b)) => Some(a - b < 0.0),
            (Err(e), _) | (_, Err(e)) => {
                log::warn!("stability of orbit {z:?} unknown: {e}");
                None
            }
        }
    }

    fn should_stop(&self, z: &[f64]) -> Option<String> {
        match self.returns(z) {
            Ok((a, _)) if a.sigma < self.settings.sigma_floor => {
                Some(format!("sigma {:.3e} fell below the floor", a.sigma))
            }
            Ok(_) => None,
            Err(e) => Some(format!("orbit unavailable: {e}")),
        }
    }
}

/// Radius from the restriction of a settled jam, period `N / |c|` from its
/// drift, both polished by Newton at the seed `v0`.
pub fn seed_periodic_orbit(
    stepper: &CoarseStepper,
    settings: &MacroSettings,
    seed: &SeedSettings,
) -> Result<Vec<f64>> {
    let p = stepper.params().with_v0(seed.v0);
    let integrator = crate::ode::registry().create(&stepper.config().integrator)?;
    let settled = seed.settle(&p, &*integrator)?;
    let (_, phi) = restrict_state(stepper.ops(), &settled, &p)?;
    let times: Vec<f64> = (0..100).map(|i| i as f64 * 0.2).collect();
    let snaps = model::evolve_snapshots(&*integrator, &settled, &times, &p)?;
    let series: Vec<_> = times
        .iter()
        .zip(&snaps)
        .map(|(&t, s)| (t, model::headways(s, &p)))
        .collect();
    let c = drift_speed(&series)?;
    let period = p.n_cars as f64 / c.abs();
    let r = phi[0].hypot(phi[1]);
    let problem = PoincareProblem::new(stepper, settings)?;
    let (z, res) = newton_fixed_parameter(
        &problem,
        &[r, period, seed.v0],
        settings.return_tol,
        settings.newton_max_iter,
    )?;
    log::info!(
        "periodic seed at v0 = {}: r {r:.5e} -> {:.5e}, T {period:.4} -> {:.4} (residual {res:.2e})",
        seed.v0,
        z[0],
        z[1]
    );
    Ok(z)
}

pub fn continue_periodic_orbits(
    stepper: &CoarseStepper,
    start: &[f64],
    settings: &MacroSettings,
) -> Result<MacroBranch> {
    let mut problem = PoincareProblem::new(stepper, settings)?;
    let cont = ContinuationSettings {
        newton_tol: settings.return_tol,
        ..settings.continuation()
    };
    let trace = continue_branch(&mut problem, start, &cont)?;
    let mut points = Vec::with_capacity(trace.points.len());
    for (i, p) in trace.points.iter().enumerate() {
        points.push(MacroPoint {
            unknowns: vec![p.z[0], p.z[1]],
            v0: p.z[2],
            sigma: problem.sigmas[i],
            period: Some(p.z[1]),
            stable: p.stable,
            residual: p.residual,
            step: p.step,
        });
    }
    let folds = locate_folds(&trace.points, &problem.weights())
        .into_iter()
        .map(|f| MacroFold {
            after: f.after,
            v0: f.z[2],
            unknowns: vec![f.z[0], f.z[1]],
        })
        .collect();
    Ok(MacroBranch {
        points,
        folds,
        termination: trace.termination,
        integrations: stepper.integrations(),
    })
}
