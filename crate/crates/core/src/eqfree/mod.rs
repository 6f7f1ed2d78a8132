//! The implicit macrosystem: lift a macrostate, heal and evolve it with the
//! microsystem, restrict the result.

pub mod fixed;
pub mod periodic;

use std::collections::VecDeque;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

pub use fixed::{continue_fixed_points, seed_fixed_point, FixedPointProblem};
pub use periodic::{continue_periodic_orbits, seed_periodic_orbit, PoincareProblem};

use crate::continuation::{ContinuationSettings, Termination};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, Table};
use crate::model::{self, HeadwayProfile, MicroState, ModelParams};
use crate::ode::{self, Integrator};
use crate::operators::OperatorPair;
use crate::registry::StrategySpec;

const MEMO_SIZE: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoarseConfig {
    /// Healing time before the first restriction.
    pub t_skip: f64,
    /// Finite-difference horizon of the coarse time derivative.
    pub delta: f64,
    pub integrator: StrategySpec,
    /// Restrict and re-lift every this many time units after healing
    /// instead of integrating one long trajectory.
    pub relift_interval: Option<f64>,
}

impl Default for CoarseConfig {
    fn default() -> Self {
        Self {
            t_skip: 300.0,
            delta: 240.0,
            integrator: StrategySpec::named("dopri5")
                .with("rtol", 1e-10)
                .with("atol", 1e-10),
            relift_interval: None,
        }
    }
}

impl CoarseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_skip > 0.0 && self.delta > 0.0) {
            return Err(Error::invalid("t_skip and delta must be positive"));
        }
        if let Some(h) = self.relift_interval {
            if !(h > 0.0) {
                return Err(Error::invalid("relift_interval must be positive"));
            }
        }
        Ok(())
    }
}

/// Restriction and headway spread at one snapshot time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub time: f64,
    pub phi: Vec<f64>,
    pub sigma: f64,
}

/// Lift, evolve and restrict with a fixed operator pair.
#[derive(Debug)]
pub struct CoarseStepper {
    ops: Arc<OperatorPair>,
    params: ModelParams,
    config: CoarseConfig,
    integrator: Box<dyn Integrator>,
    integrations: AtomicUsize,
    memo: Mutex<VecDeque<(Vec<f64>, Vec<Snapshot>)>>,
}

impl CoarseStepper {
    pub fn new(ops: Arc<OperatorPair>, params: ModelParams, config: CoarseConfig) -> Result<Self> {
        config.validate()?;
        params.validate()?;
        if ops.data().n_cars() != params.n_cars {
            return Err(Error::DimensionMismatch {
                expected: params.n_cars,
                got: ops.data().n_cars(),
            });
        }
        let integrator = ode::registry().create(&config.integrator)?;
        Ok(Self {
            ops,
            params,
            config,
            integrator,
            integrations: AtomicUsize::new(0),
            memo: Mutex::new(VecDeque::new()),
        })
    }

    pub fn ops(&self) -> &OperatorPair {
        &self.ops
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn config(&self) -> &CoarseConfig {
        &self.config
    }

    pub fn dimension(&self) -> usize {
        self.ops.dimension()
    }

    /// Number of micro trajectories integrated so far.
    pub fn integrations(&self) -> usize {
        self.integrations.load(Ordering::Relaxed)
    }

    /// Lifted profile completed to a state with optimal velocities.
    pub fn lift_state(&self, phi: &[f64], v0: f64) -> Result<MicroState> {
        let lifted = self.ops.lift(phi)?;
        if lifted.degraded {
            log::warn!(
                "lift of {phi:?} is degraded (residual {:.2e})",
                lifted.residual
            );
        }
        model::state_from_headways(&lifted.microstate, &self.params.with_v0(v0))
    }

    fn snapshot(&self, state: &MicroState, p: &ModelParams, time: f64) -> Result<Snapshot> {
        let h = model::headways(state, p);
        Ok(Snapshot {
            time,
            phi: self.ops.restrict(&h)?,
            sigma: model::sigma(&h),
        })
    }

    /// Restrictions of one lifted trajectory at nondecreasing `times`.
    pub fn trajectory(&self, phi: &[f64], v0: f64, times: &[f64]) -> Result<Vec<Snapshot>> {
        if phi.len() != self.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.dimension(),
                got: phi.len(),
            });
        }
        let mut key = phi.to_vec();
        key.push(v0);
        key.extend_from_slice(times);
        if let Some(hit) = self.lookup(&key) {
            return Ok(hit);
        }
        let p = self.params.with_v0(v0);
        let start = self.lift_state(phi, v0)?;
        let out = match self.config.relift_interval {
            None => {
                self.integrations.fetch_add(1, Ordering::Relaxed);
                let states = model::evolve_snapshots(&*self.integrator, &start, times, &p)?;
                states
                    .iter()
                    .zip(times)
                    .map(|(s, &t)| self.snapshot(s, &p, t))
                    .collect::<Result<Vec<_>>>()?
            }
            Some(h) => self.relifted(start, times, h, &p)?,
        };
        self.remember(key, out.clone());
        Ok(out)
    }

    /// Chunked realization: after the healing time the state is restricted
    /// and lifted again every `h` time units.
    fn relifted(
        &self,
        start: MicroState,
        times: &[f64],
        h: f64,
        p: &ModelParams,
    ) -> Result<Vec<Snapshot>> {
        let mut out = Vec::with_capacity(times.len());
        let mut state = start;
        let mut t = 0.0;
        for &target in times {
            while t < target {
                let step = if t < self.config.t_skip {
                    (self.config.t_skip - t).min(target - t)
                } else {
                    h.min(target - t)
                };
                self.integrations.fetch_add(1, Ordering::Relaxed);
                state = model::evolve_with(&*self.integrator, &state, step, p)?;
                t += step;
                if t >= self.config.t_skip && t < target {
                    let phi = self.snapshot(&state, p, t)?.phi;
                    state = self.lift_state(&phi, p.v0)?;
                }
            }
            out.push(self.snapshot(&state, p, target)?);
        }
        Ok(out)
    }

    fn lookup(&self, key: &[f64]) -> Option<Vec<Snapshot>> {
        let memo = self.memo.lock().expect("memo lock");
        memo.iter().find(|(k, _)| k == key).map(|(_, v)| v.clone())
    }

    fn remember(&self, key: Vec<f64>, value: Vec<Snapshot>) {
        let mut memo = self.memo.lock().expect("memo lock");
        if memo.len() == MEMO_SIZE {
            memo.pop_front();
        }
        memo.push_back((key, value));
    }

    /// `(R(Phi_{t_skip + delta}(L phi)) - R(Phi_{t_skip}(L phi))) / delta`.
    pub fn coarse_rhs(&self, phi: &[f64], v0: f64) -> Result<Vec<f64>> {
        let (a, b) = self.rhs_snapshots(phi, v0)?;
        Ok(a.phi
            .iter()
            .zip(&b.phi)
            .map(|(x, y)| (y - x) / self.config.delta)
            .collect())
    }

    fn rhs_snapshots(&self, phi: &[f64], v0: f64) -> Result<(Snapshot, Snapshot)> {
        let t0 = self.config.t_skip;
        let mut snaps = self.trajectory(phi, v0, &[t0, t0 + self.config.delta])?;
        let b = snaps.pop().expect("two snapshots");
        let a = snaps.pop().expect("two snapshots");
        Ok((a, b))
    }
}

/// Continuation settings for the macrosystem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MacroSettings {
    pub step_size: f64,
    pub newton_tol: f64,
    /// Tolerance on the undivided Poincaré return residual.
    pub return_tol: f64,
    pub newton_max_iter: usize,
    /// Finite-difference step in embedding units and in `v0`.
    pub fd_step: f64,
    /// Finite-difference step in the period.
    pub fd_step_period: f64,
    /// Perturbation of the macrostate used to judge stability.
    pub stability_step: f64,
    pub max_steps: usize,
    pub max_halvings: u32,
    pub parameter_range: [f64; 2],
    /// Sign of the initial `v0` direction.
    pub direction: f64,
    /// Periods per Poincaré return.
    pub nu: usize,
    pub section_direction: [f64; 2],
    /// Branch ends once the healed `sigma` drops below this value.
    pub sigma_floor: f64,
    /// Weight of the period in the arclength norm.
    pub period_weight: f64,
}

impl Default for MacroSettings {
    fn default() -> Self {
        Self {
            step_size: 0.01,
            newton_tol: 1e-8,
            return_tol: 1e-6,
            newton_max_iter: 12,
            fd_step: 1e-4,
            fd_step_period: 1e-3,
            stability_step: 1e-3,
            max_steps: 200,
            max_halvings: 4,
            parameter_range: [0.9, 1.1],
            direction: -1.0,
            nu: 7,
            section_direction: [1.0, 0.0],
            sigma_floor: 0.02,
            period_weight: 0.01,
        }
    }
}

impl MacroSettings {
    pub fn validate(&self) -> Result<()> {
        self.continuation().validate()?;
        if !(self.fd_step > 0.0 && self.fd_step_period > 0.0 && self.stability_step > 0.0) {
            return Err(Error::invalid("finite-difference steps must be positive"));
        }
        if !(self.return_tol > 0.0) {
            return Err(Error::invalid("return_tol must be positive"));
        }
        if self.nu == 0 {
            return Err(Error::invalid("nu must be at least 1"));
        }
        let n = self.section_direction[0].hypot(self.section_direction[1]);
        if (n - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "section_direction must be a unit vector (norm {n})"
            )));
        }
        if !(self.period_weight > 0.0) {
            return Err(Error::invalid("period_weight must be positive"));
        }
        Ok(())
    }

    pub fn continuation(&self) -> ContinuationSettings {
        ContinuationSettings {
            step_size: self.step_size,
            newton_tol: self.newton_tol,
            newton_max_iter: self.newton_max_iter,
            max_halvings: self.max_halvings,
            max_steps: self.max_steps,
            parameter_range: self.parameter_range,
            direction: self.direction,
            ..Default::default()
        }
    }
}

/// Settings for the microsimulation that seeds a branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedSettings {
    pub v0: f64,
    pub amplitude: f64,
    pub transient: f64,
}

impl Default for SeedSettings {
    fn default() -> Self {
        Self {
            v0: 1.05,
            amplitude: 3.0,
            transient: 3000.0,
        }
    }
}

impl SeedSettings {
    /// Long microsimulation from a sinusoidal perturbation.
    pub fn settle(&self, params: &ModelParams, integrator: &dyn Integrator) -> Result<MicroState> {
        let p = params.with_v0(self.v0);
        let start = model::sinusoidal_state(&p, self.amplitude);
        model::evolve_with(integrator, &start, self.transient, &p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroPoint {
    /// `[phi...]` for fixed points, `[r, T]` for periodic orbits.
    pub unknowns: Vec<f64>,
    pub v0: f64,
    /// Headway spread of the healed state.
    pub sigma: f64,
    pub period: Option<f64>,
    pub stable: Option<bool>,
    pub residual: f64,
    /// Arclength step that produced this point.
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroFold {
    pub after: usize,
    pub v0: f64,
    pub unknowns: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroBranch {
    pub points: Vec<MacroPoint>,
    pub folds: Vec<MacroFold>,
    pub termination: Termination,
    pub integrations: usize,
}

impl MacroBranch {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let d = self.points.first().map_or(0, |p| p.unknowns.len());
        let periodic = self.points.first().is_some_and(|p| p.period.is_some());
        let mut header = vec!["index".to_string(), "v0".to_string()];
        if periodic {
            header.push("r".into());
        } else {
            header.extend((1..=d).map(|i| format!("phi{i}")));
        }
        header.push("sigma".into());
        if periodic {
            header.push("T".into());
        }
        header.extend(["stable".to_string(), "residual".to_string()]);
        let mut t = Table::new(header);
        for (i, p) in self.points.iter().enumerate() {
            let mut row = vec![i.to_string(), fmt_f64(p.v0)];
            let coords = if periodic { &p.unknowns[..1] } else { &p.unknowns[..] };
            row.extend(coords.iter().map(|v| fmt_f64(*v)));
            row.push(fmt_f64(p.sigma));
            if let Some(period) = p.period {
                row.push(fmt_f64(period));
            }
            row.push(match p.stable {
                Some(true) => "1".into(),
                Some(false) => "0".into(),
                None => String::new(),
            });
            row.push(fmt_f64(p.residual));
            t.push(row);
        }
        t.write(path)
    }
}

/// Headway profile of a settled state and its restriction.
pub fn restrict_state(
    ops: &OperatorPair,
    state: &MicroState,
    params: &ModelParams,
) -> Result<(HeadwayProfile, Vec<f64>)> {
    let h = model::headways(state, params);
    let phi = ops.restrict(&h)?;
    Ok((h, phi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continuation::Termination;
    use crate::operators::tests::curve_ops;

    fn stepper(relift: Option<f64>) -> CoarseStepper {
        let config = CoarseConfig {
            t_skip: 2.0,
            delta: 3.0,
            relift_interval: relift,
            ..CoarseConfig::default()
        };
        CoarseStepper::new(Arc::new(curve_ops(30)), ModelParams::default(), config).unwrap()
    }

    #[test]
    fn one_integration_per_coarse_derivative() {
        let s = stepper(None);
        let phi = s.ops().dmap().coordinates(20);
        let f = s.coarse_rhs(&phi, 1.0).unwrap();
        assert_eq!(s.integrations(), 1);
        assert_eq!(s.coarse_rhs(&phi, 1.0).unwrap(), f);
        assert_eq!(s.integrations(), 1);
        s.coarse_rhs(&phi, 1.01).unwrap();
        assert_eq!(s.integrations(), 2);
        assert!(s.coarse_rhs(&[0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn free_flow_is_a_coarse_fixed_point() {
        let s = stepper(None);
        // row 0 is the uniform profile
        let phi = s.ops().dmap().coordinates(0);
        let f = s.coarse_rhs(&phi, 1.0).unwrap();
        assert!(f[0].abs() < 1e-9, "{f:?}");
        let (a, b) = s.rhs_snapshots(&phi, 1.0).unwrap();
        assert!(a.sigma < 1e-9 && b.sigma < 1e-9);
        assert_eq!((a.time, b.time), (2.0, 5.0));
    }

    #[test]
    fn relifting_splits_the_trajectory() {
        let s = stepper(Some(1.0));
        let phi = s.ops().dmap().coordinates(0);
        let snaps = s.trajectory(&phi, 1.0, &[2.0, 5.0]).unwrap();
        // healing once, then three unit chunks
        assert_eq!(s.integrations(), 4);
        assert!((snaps[1].phi[0] - phi[0]).abs() < 1e-8);
    }

    #[test]
    fn construction_and_settings_checks() {
        let ops = Arc::new(curve_ops(30));
        let p = ModelParams {
            n_cars: 20,
            ..ModelParams::default()
        };
        assert!(CoarseStepper::new(ops.clone(), p, CoarseConfig::default()).is_err());
        let bad = CoarseConfig {
            delta: 0.0,
            ..CoarseConfig::default()
        };
        assert!(CoarseStepper::new(ops, ModelParams::default(), bad).is_err());

        let s = stepper(None);
        let m = MacroSettings::default();
        assert!(FixedPointProblem::new(&s, &m).is_ok());
        assert!(PoincareProblem::new(&s, &m).is_err());
        for bad in [
            MacroSettings { nu: 0, ..m.clone() },
            MacroSettings { return_tol: 0.0, ..m.clone() },
            MacroSettings { stability_step: -1.0, ..m.clone() },
            MacroSettings { section_direction: [1.0, 1.0], ..m.clone() },
            MacroSettings { parameter_range: [1.1, 0.9], ..m.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
        let c = m.continuation();
        assert_eq!((c.step_size, c.newton_tol, c.direction), (m.step_size, m.newton_tol, m.direction));
    }

    #[test]
    fn branch_csv_columns() {
        let dir = tempfile::tempdir().unwrap();
        let point = |period: Option<f64>, unknowns: Vec<f64>| MacroPoint {
            unknowns,
            v0: 1.0,
            sigma: 0.3,
            period,
            stable: Some(true),
            residual: 1e-9,
            step: 0.01,
        };
        let branch = |points| MacroBranch {
            points,
            folds: Vec::new(),
            termination: Termination::MaxSteps,
            integrations: 0,
        };
        let path = dir.path().join("b.csv");
        branch(vec![point(None, vec![0.1])]).write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("index,v0,phi1,sigma,stable,residual\n0,"));
        branch(vec![point(Some(34.5), vec![0.05, 34.5])]).write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("index,v0,r,sigma,T,stable,residual\n0,"));
    }
}
