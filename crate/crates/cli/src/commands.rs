//! One function per subcommand. Each reads its declared inputs, writes its
//! files into the output directory and notes a summary for the manifest.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use eqfree_core::dataset::{self, Dataset};
use eqfree_core::dmap::{self, DiffusionMap};
use eqfree_core::eqfree::{self, CoarseStepper, MacroBranch};
use eqfree_core::io::{fmt_f64, Table};
use eqfree_core::model;
use eqfree_core::operators::{self, OperatorPair};
use eqfree_core::twcont::{self, floquet, wave, Branch};
use eqfree_core::{ode, Error};

use crate::config::{RunConfig, Sheet};
use crate::error::CliError;
use crate::manifest::Recorder;

fn load_dataset(rec: &mut Recorder, path: &Path) -> Result<Dataset, CliError> {
    rec.input(path);
    rec.input(&dataset::sidecar_path(path));
    let data = dataset::load(path)?;
    if data.n_cars() != rec.config.model.n_cars {
        return Err(CliError::Config(format!(
            "{} has {} cars but model.n_cars = {}",
            path.display(),
            data.n_cars(),
            rec.config.model.n_cars
        )));
    }
    Ok(data)
}

fn load_map(rec: &mut Recorder, path: &Path, data: &Dataset) -> Result<DiffusionMap, CliError> {
    rec.input(path);
    rec.input(&dataset::sidecar_path(path));
    let map = DiffusionMap::load(path)?;
    map.check_dataset(data)?;
    Ok(map)
}

fn save_dataset(rec: &mut Recorder, name: &str, data: &Dataset) -> Result<PathBuf, CliError> {
    let path = rec.output(&format!("{name}.csv"));
    rec.output(&format!("{name}.json"));
    dataset::save(data, &path)?;
    let sigmas = data.sigmas();
    rec.note("rows", data.len());
    rec.note(
        "sigma_range",
        [
            sigmas.iter().copied().fold(f64::INFINITY, f64::min),
            sigmas.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ],
    );
    Ok(path)
}

pub fn simulate(rec: &mut Recorder) -> Result<(), CliError> {
    let c = &rec.config;
    let p = c.model;
    let s = &c.simulate;
    let integrator = ode::registry().create(&s.integrator)?;
    let steps = (s.t_end / s.output_interval + 1e-9).floor() as usize;
    let times: Vec<f64> = (0..=steps).map(|i| i as f64 * s.output_interval).collect();
    let start = model::sinusoidal_state(&p, s.amplitude);
    let snaps = model::evolve_snapshots(&*integrator, &start, &times, &p)?;

    let mut header = vec!["t".to_string()];
    header.extend((1..=p.n_cars).map(|i| format!("h{i}")));
    let mut waterfall = Table::new(header);
    let mut spread = Table::new(["t", "sigma"]);
    let mut last = 0.0;
    for (t, state) in times.iter().zip(&snaps) {
        let h = model::headways(state, &p);
        last = model::sigma(&h);
        let mut row = vec![fmt_f64(*t)];
        row.extend(h.as_slice().iter().map(|v| fmt_f64(*v)));
        waterfall.push(row);
        spread.push(vec![fmt_f64(*t), fmt_f64(last)]);
    }
    waterfall.write(&rec.output("headways.csv"))?;
    spread.write(&rec.output("sigma.csv"))?;
    rec.note("snapshots", times.len());
    rec.note("final_sigma", last);
    Ok(())
}

pub fn generate(rec: &mut Recorder) -> Result<(), CliError> {
    let data = dataset::generate(&rec.config.model, &rec.config.sampling_config())?;
    save_dataset(rec, "dataset", &data)?;
    Ok(())
}

pub fn align(rec: &mut Recorder, data_path: &Path) -> Result<(), CliError> {
    let data = load_dataset(rec, data_path)?;
    let d = rec.config.dataset.clone();
    let aligned = dataset::align_all(&data, d.anchor_index, &d.alignment)?;
    save_dataset(rec, "aligned", &aligned)?;
    Ok(())
}

pub fn downsample(rec: &mut Recorder, data_path: &Path, map_path: &Path) -> Result<(), CliError> {
    let data = load_dataset(rec, data_path)?;
    let map = load_map(rec, map_path, &data)?;
    let target = rec.config.downsample.target;
    let out = match map.dimension() {
        1 => {
            let e: Vec<f64> = (0..map.n_points()).map(|m| map.coordinates(m)[0]).collect();
            dataset::downsample_1d(&data, &e, target)?
        }
        d => {
            if d > 2 {
                log::warn!("embedding has {d} coordinates; downsampling in the first two");
            }
            let e: Vec<[f64; 2]> = (0..map.n_points())
                .map(|m| {
                    let c = map.coordinates(m);
                    [c[0], c[1]]
                })
                .collect();
            let radial = rec.config.downsample.radial_target.min(data.len());
            dataset::downsample_2d(&data, &e, radial, target)?
        }
    };
    save_dataset(rec, "downsampled", &out)?;
    Ok(())
}

pub fn embed(rec: &mut Recorder, data_path: &Path) -> Result<(), CliError> {
    let data = load_dataset(rec, data_path)?;
    let (map, report) = dmap::embed(&data, &rec.config.dmap)?;
    map.save(&rec.output("map.csv"))?;
    rec.output("map.json");
    let mut t = Table::new(["j", "r", "selected", "fit_scale"]);
    for (i, r) in report.residuals.iter().enumerate() {
        let j = i + 1;
        t.push(vec![
            j.to_string(),
            fmt_f64(*r),
            u8::from(report.selected.contains(&j)).to_string(),
            fmt_f64(report.fit_scales[i]),
        ]);
    }
    t.write(&rec.output("selection.csv"))?;
    log::info!(
        "embedding dimension {} (eigenvectors {:?}), epsilon {:.4}",
        report.dimension,
        report.selected,
        map.epsilon
    );
    rec.note("dimension", report.dimension);
    rec.note("selected", &report.selected);
    rec.note("threshold", report.threshold);
    rec.note("epsilon", map.epsilon);
    rec.note("eigenvalues", &map.eigenvalues);
    Ok(())
}

pub fn validate_ops(rec: &mut Recorder, data_path: &Path, map_path: &Path) -> Result<(), CliError> {
    let data = load_dataset(rec, data_path)?;
    let map = load_map(rec, map_path, &data)?;
    let c = rec.config.clone();
    if c.validate.loo {
        let report = operators::validate_restriction_loo(&data, &map, &c.dmap)?;
        report.write_csv(&rec.output("restriction_loo.csv"))?;
        log::info!("leave-one-out restriction: mean relative error {:.3e}", report.mean_rel);
        rec.note("restriction_mean_rel", report.mean_rel);
        rec.note("restriction_median_rel", report.median_rel);
        rec.note("restriction_mean_abs", report.mean_abs);
    }
    if c.validate.lift {
        let ops = OperatorPair::new(map.clone(), data, &c.operators)?;
        let report = operators::validate_lift_identity(&ops, &map.embedding())?;
        report.write_csv(&rec.output("lift_identity.csv"))?;
        log::info!(
            "lift identity (K = {}): mean relative error {:.3e}",
            ops.lift_k(),
            report.mean_rel
        );
        rec.note("lift_k", ops.lift_k());
        rec.note("lift_mean_rel", report.mean_rel);
        rec.note("lift_max_rel", report.max_rel);
    }
    Ok(())
}

fn write_macro_folds(branch: &MacroBranch, path: &Path) -> Result<(), CliError> {
    let d = branch.points.first().map_or(0, |p| p.unknowns.len());
    let mut header = vec!["after".to_string(), "v0".to_string()];
    header.extend((1..=d).map(|i| format!("u{i}")));
    let mut t = Table::new(header);
    for f in &branch.folds {
        let mut row = vec![f.after.to_string(), fmt_f64(f.v0)];
        row.extend(f.unknowns.iter().map(|v| fmt_f64(*v)));
        t.push(row);
    }
    Ok(t.write(path)?)
}

pub fn continue_macro(rec: &mut Recorder, data_path: &Path, map_path: &Path) -> Result<(), CliError> {
    let data = load_dataset(rec, data_path)?;
    let map = load_map(rec, map_path, &data)?;
    let c = rec.config.clone();
    let ops = Arc::new(OperatorPair::new(map, data, &c.operators)?);
    let stepper = CoarseStepper::new(ops, c.model, c.stepper.clone())?;
    let branch = match stepper.dimension() {
        1 => {
            let start = eqfree::seed_fixed_point(&stepper, &c.macro_, &c.seed)?;
            eqfree::continue_fixed_points(&stepper, &start, &c.macro_)?
        }
        2 => {
            let start = eqfree::seed_periodic_orbit(&stepper, &c.macro_, &c.seed)?;
            eqfree::continue_periodic_orbits(&stepper, &start, &c.macro_)?
        }
        d => {
            return Err(CliError::Config(format!(
                "macro continuation handles one- and two-dimensional embeddings, map has D = {d}"
            )))
        }
    };
    branch.write_csv(&rec.output("macro_branch.csv"))?;
    write_macro_folds(&branch, &rec.output("macro_folds.csv"))?;
    log::info!(
        "{} branch points, {} folds, {} integrations; {:?}",
        branch.points.len(),
        branch.folds.len(),
        branch.integrations,
        branch.termination
    );
    rec.note("kind", if stepper.dimension() == 1 { "fixed_points" } else { "periodic_orbits" });
    rec.note("points", branch.points.len());
    rec.note("fold_v0", branch.folds.iter().map(|f| f.v0).collect::<Vec<_>>());
    rec.note("termination", &branch.termination);
    rec.note("integrations", branch.integrations);
    Ok(())
}

fn micro_branch(c: &RunConfig) -> Result<Branch, CliError> {
    let integrator = ode::registry().create(&c.simulate.integrator)?;
    let start = wave::initial_wave(&c.model, c.micro.points_per_car, &c.initial_wave, &*integrator)?;
    log::info!(
        "initial wave at v0 = {}: sigma {:.4}, c {:.4}",
        start.v0,
        start.sigma(),
        start.c
    );
    Ok(twcont::continue_tw(&start, &c.model, &c.micro)?)
}

pub fn continue_micro(rec: &mut Recorder, profiles: bool) -> Result<(), CliError> {
    let c = rec.config.clone();
    let branch = micro_branch(&c)?;
    branch.write_csv(&rec.output("micro_branch.csv"))?;
    let mut t = Table::new(["after", "v0", "sigma", "c"]);
    for f in &branch.folds {
        t.push(vec![
            f.after.to_string(),
            fmt_f64(f.v0),
            fmt_f64(f.sigma),
            fmt_f64(f.c),
        ]);
    }
    t.write(&rec.output("micro_folds.csv"))?;
    if profiles {
        std::fs::create_dir_all(rec.out_dir().join("profiles"))?;
        for (i, p) in branch.points.iter().enumerate() {
            twcont::write_profile_csv(&p.wave, &rec.output(&format!("profiles/point_{i:04}.csv")))?;
        }
        for (i, f) in branch.folds.iter().enumerate() {
            twcont::write_profile_csv(&f.wave, &rec.output(&format!("profiles/fold_{i}.csv")))?;
        }
    }
    for f in &branch.folds {
        log::info!("fold at v0 = {:.5}, sigma = {:.4}", f.v0, f.sigma);
    }
    rec.note("points", branch.points.len());
    rec.note(
        "folds",
        branch.folds.iter().map(|f| [f.v0, f.sigma]).collect::<Vec<_>>(),
    );
    rec.note("terminations", &branch.terminations);
    Ok(())
}

pub fn floquet(rec: &mut Recorder) -> Result<(), CliError> {
    let c = rec.config.clone();
    let branch = micro_branch(&c)?;
    let f = &c.floquet;
    let w = match f.v0 {
        Some(v0) => branch.wave_at(v0, f.sheet == Sheet::Upper, &c.model, c.micro.continuation.newton_tol)?,
        None => {
            let fold = branch
                .folds
                .first()
                .ok_or_else(|| Error::Degenerate("micro branch has no fold".into()))?;
            branch.nearest_point(fold).wave.clone()
        }
    };
    let report = floquet::floquet_spectrum(&w, &c.model, &f.settings)?;
    let mut t = Table::new(["index", "exponent_re", "exponent_im", "multiplier_re", "multiplier_im"]);
    for (i, (e, m)) in report.exponents.iter().zip(&report.multipliers).enumerate() {
        t.push(vec![
            i.to_string(),
            fmt_f64(e[0]),
            fmt_f64(e[1]),
            fmt_f64(m[0]),
            fmt_f64(m[1]),
        ]);
    }
    t.write(&rec.output("floquet.csv"))?;
    let summary = serde_json::json!({
        "v0": w.v0,
        "sigma": w.sigma(),
        "c": w.c,
        "t_per": report.t_per,
        "zero_tol": report.zero_tol,
        "zero_multiplicity": report.zero_multiplicity,
        "gap": report.gap,
        "leading_rate": report.leading_rate(),
        "stable": report.is_stable(),
    });
    eqfree_core::io::write_json(&rec.output("floquet.json"), &summary)?;
    log::info!(
        "wave at v0 = {:.5}: {} zero exponents, gap {:.3e}",
        w.v0,
        report.zero_multiplicity,
        report.gap
    );
    rec.note("wave", summary);
    Ok(())
}

