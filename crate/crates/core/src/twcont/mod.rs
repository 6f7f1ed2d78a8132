//! Traveling waves of the ring-road model: continuation in `v0`, fold
//! detection and Floquet spectra.

pub mod floquet;
pub mod spectral;
pub mod wave;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use floquet::{floquet_spectrum, FloquetReport, FloquetSettings};
pub use wave::{initial_wave, microstate_from_wave, InitialWaveSettings, TravelingWave, WaveProblem};

use crate::continuation::{continue_branch, ContinuationSettings, Termination, Trace};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, Table};
use crate::model::ModelParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwSettings {
    pub points_per_car: usize,
    pub continuation: ContinuationSettings,
    /// Continue both ways from the start wave.
    pub both_directions: bool,
    /// Stop when the jam flattens out.
    pub sigma_floor: f64,
    /// Floquet-based stability per branch point.
    pub stability: bool,
    pub floquet: FloquetSettings,
}

impl Default for TwSettings {
    fn default() -> Self {
        Self {
            points_per_car: 8,
            continuation: ContinuationSettings {
                step_size: 0.02,
                newton_tol: 1e-10,
                newton_max_iter: 10,
                max_halvings: 5,
                max_steps: 400,
                parameter_range: [0.8, 1.1],
                direction: -1.0,
                ..Default::default()
            },
            both_directions: true,
            sigma_floor: 0.02,
            stability: true,
            floquet: FloquetSettings::default(),
        }
    }
}

impl TwSettings {
    pub fn validate(&self) -> Result<()> {
        self.continuation.validate()?;
        if self.points_per_car < 2 || self.points_per_car % 2 != 0 {
            return Err(Error::invalid("points_per_car must be even and at least 2"));
        }
        if !(self.sigma_floor >= 0.0) {
            return Err(Error::invalid("sigma_floor must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    pub wave: TravelingWave,
    pub sigma: f64,
    pub residual: f64,
    pub stable: Option<bool>,
    /// A fold lies between this point and the next.
    pub fold_after: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveFold {
    pub v0: f64,
    pub sigma: f64,
    pub c: f64,
    /// Index of the branch point just before the fold.
    pub after: usize,
    pub wave: TravelingWave,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub points: Vec<BranchPoint>,
    pub folds: Vec<WaveFold>,
    /// How each end of the branch terminated, first end first.
    pub terminations: Vec<Termination>,
}

impl Branch {
    /// Converged branch point closest in `v0` to a fold.
    pub fn nearest_point(&self, fold: &WaveFold) -> &BranchPoint {
        let near = &self.points[fold.after..(fold.after + 2).min(self.points.len())];
        near.iter()
            .min_by(|a, b| {
                (a.wave.v0 - fold.v0)
                    .abs()
                    .total_cmp(&(b.wave.v0 - fold.v0).abs())
            })
            .expect("fold has neighbours")
    }

    /// Wave at exactly `v0` on the sheet with the largest (`upper`) or
    /// smallest sigma among the branch segments crossing `v0`, polished by
    /// Newton from the nearer segment end.
    pub fn wave_at(
        &self,
        v0: f64,
        upper: bool,
        params: &ModelParams,
        tol: f64,
    ) -> Result<TravelingWave> {
        let mut best: Option<(&BranchPoint, f64)> = None;
        for w in self.points.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let (va, vb) = (a.wave.v0, b.wave.v0);
            if (va - v0) * (vb - v0) > 0.0 || va == vb {
                continue;
            }
            let sigma = a.sigma + (b.sigma - a.sigma) * (v0 - va) / (vb - va);
            let near = if (va - v0).abs() <= (vb - v0).abs() { a } else { b };
            let better = match best {
                None => true,
                Some((_, s)) => (sigma > s) == upper,
            };
            if better {
                best = Some((near, sigma));
            }
        }
        let (start, _) =
            best.ok_or_else(|| Error::invalid(format!("branch does not reach v0 = {v0}")))?;
        let mut guess = start.wave.clone();
        guess.v0 = v0;
        Ok(wave::polish(&guess, params, tol, 20)?.0)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut t = Table::new(["index", "v0", "c", "sigma", "stable", "fold_flag"]);
        for (i, p) in self.points.iter().enumerate() {
            let stable = match p.stable {
                Some(true) => "1",
                Some(false) => "0",
                None => "",
            };
            t.push(vec![
                i.to_string(),
                fmt_f64(p.wave.v0),
                fmt_f64(p.wave.c),
                fmt_f64(p.sigma),
                stable.to_string(),
                (p.fold_after as u8).to_string(),
            ]);
        }
        t.write(path)
    }
}

/// `(xi, u(xi))` on the collocation grid.
pub fn write_profile_csv(wave: &TravelingWave, path: &Path) -> Result<()> {
    let mut t = Table::new(["xi", "u"]);
    for (j, u) in wave.u.iter().enumerate() {
        t.push(vec![
            fmt_f64(j as f64 / wave.points_per_car as f64),
            fmt_f64(*u),
        ]);
    }
    t.write(path)
}

fn run(
    problem: &mut WaveProblem,
    start: &TravelingWave,
    settings: &ContinuationSettings,
) -> Result<Trace> {
    problem.anchor = start.u.clone();
    continue_branch(problem, &start.to_unknowns(), settings)
}

/// Pseudo-arclength continuation of traveling waves in `v0`. With
/// `both_directions` the branch runs through the start in order of the
/// second leg.
pub fn continue_tw(
    start: &TravelingWave,
    params: &ModelParams,
    settings: &TwSettings,
) -> Result<Branch> {
    settings.validate()?;
    if start.points_per_car != settings.points_per_car {
        return Err(Error::invalid(format!(
            "start wave has {} points per car, settings ask for {}",
            start.points_per_car, settings.points_per_car
        )));
    }
    let mut problem = WaveProblem::new(params.with_v0(start.v0), start.points_per_car, start.u.clone())?;
    problem.sigma_floor = settings.sigma_floor;
    if settings.stability {
        problem.stability = Some(settings.floquet.clone());
    }
    let first = run(&mut problem, start, &settings.continuation)?;
    let mut legs = vec![first];
    if settings.both_directions {
        let mut back = settings.continuation.clone();
        back.direction = -back.direction;
        legs.insert(0, run(&mut problem, start, &back)?);
    }
    let (n, ppc) = (start.n_cars, start.points_per_car);
    let mut points = Vec::new();
    let mut terminations = Vec::new();
    let mut raw = Vec::new();
    for (k, leg) in legs.iter().enumerate() {
        terminations.push(leg.termination.clone());
        let pts: Vec<_> = if k == 0 && legs.len() == 2 {
            leg.points.iter().rev().collect()
        } else {
            leg.points.iter().collect()
        };
        // both legs start at the same polished point
        let skip = usize::from(k == 1);
        raw.extend(pts.into_iter().skip(skip).cloned());
    }
    for p in &raw {
        let wave = TravelingWave::from_unknowns(&p.z, n, ppc)?;
        points.push(BranchPoint {
            sigma: wave.sigma(),
            wave,
            residual: p.residual,
            stable: p.stable,
            fold_after: false,
        });
    }
    let weights = crate::continuation::ContinuationProblem::weights(&problem);
    let mut folds = Vec::new();
    for f in crate::continuation::locate_folds(&raw, &weights) {
        let wave = TravelingWave::from_unknowns(&f.z, n, ppc)?;
        points[f.after].fold_after = true;
        folds.push(WaveFold {
            v0: wave.v0,
            sigma: wave.sigma(),
            c: wave.c,
            after: f.after,
            wave,
        });
    }
    Ok(Branch {
        points,
        folds,
        terminations,
    })
}
