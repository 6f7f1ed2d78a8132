//! Sampled end states of the traffic model, symmetry alignment,
//! embedding-informed downsampling and on-disk persistence.
//!
//! Every row starts from a sinusoidally perturbed free flow with random
//! amplitude `A`, random `v0` and a random stopping time drawn from a shifted
//! exponential. Only the final headways are kept.
//!
//! Rows draw from independent ChaCha8 streams: the generator is seeded with
//! `rng_seed` and row `m` uses stream `m`, so a row's sample never depends on
//! how many rows are generated or in which order workers run.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io;
use crate::model::{self, HeadwayProfile, ModelParams};
use crate::ode::{self, Integrator};
use crate::registry::{Registry, StrategySpec};

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_ANCHOR: usize = 10;

/// Removes the translation symmetry of a headway profile.
pub trait Aligner: Send + Sync + std::fmt::Debug {
    fn align(&self, profile: &HeadwayProfile, anchor_index: usize) -> HeadwayProfile;
}

/// Integer rotation putting the largest headway at the anchor.
#[derive(Debug)]
pub struct ArgmaxAlignment;

impl Aligner for ArgmaxAlignment {
    fn align(&self, profile: &HeadwayProfile, anchor_index: usize) -> HeadwayProfile {
        model::align(profile, anchor_index)
    }
}

/// Continuous shift putting the crest of the first Fourier mode at the
/// anchor. Unlike the integer rotation it also removes the sub-spacing part
/// of the jam position.
#[derive(Debug)]
pub struct PhaseAlignment;

impl Aligner for PhaseAlignment {
    fn align(&self, profile: &HeadwayProfile, anchor_index: usize) -> HeadwayProfile {
        model::align_phase(profile, anchor_index)
    }
}

pub fn default_alignment() -> StrategySpec {
    StrategySpec::named("phase")
}

pub fn alignment_registry() -> Registry<dyn Aligner> {
    let mut reg: Registry<dyn Aligner> = Registry::new("alignment");
    reg.register("argmax", "rotate the largest headway to the anchor", |spec| {
        spec.check_keys(&[])?;
        Ok(Box::new(ArgmaxAlignment))
    });
    reg.register("phase", "shift the first-mode crest to the anchor", |spec| {
        spec.check_keys(&[])?;
        Ok(Box::new(PhaseAlignment))
    });
    reg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub n_samples: usize,
    pub amplitude_range: [f64; 2],
    pub v0_range: [f64; 2],
    pub stop_time_mean: f64,
    pub stop_time_shift: f64,
    pub rng_seed: u64,
    pub integrator: StrategySpec,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n_samples: 5000,
            amplitude_range: [0.0, 4.5],
            v0_range: [0.96, 1.1],
            stop_time_mean: 700.0,
            stop_time_shift: 200.0,
            rng_seed: 20_211_220,
            integrator: StrategySpec::named("dopri5"),
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::invalid("n_samples must be positive"));
        }
        for (name, [lo, hi]) in [
            ("amplitude_range", self.amplitude_range),
            ("v0_range", self.v0_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::invalid(format!("{name} must be a nonempty interval")));
            }
        }
        if !(self.v0_range[0] > 0.0) {
            return Err(Error::invalid("v0_range must be positive"));
        }
        if !(self.stop_time_mean > 0.0) {
            return Err(Error::invalid("stop_time_mean must be positive"));
        }
        if !(self.stop_time_shift >= 0.0) {
            return Err(Error::invalid("stop_time_shift must be nonnegative"));
        }
        Ok(())
    }
}

/// Sampled parameters of one row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowMeta {
    #[serde(rename = "A")]
    pub amplitude: f64,
    pub v0: f64,
    pub t_stop: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub profiles: Vec<HeadwayProfile>,
    pub meta: Vec<RowMeta>,
    /// Alignment applied to every row, if any.
    pub alignment: Option<StrategySpec>,
    pub anchor_index: usize,
    pub params: ModelParams,
    pub config: SamplingConfig,
}

fn draw_row(config: &SamplingConfig, row: usize) -> RowMeta {
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    rng.set_stream(row as u64);
    let [a_lo, a_hi] = config.amplitude_range;
    let [v_lo, v_hi] = config.v0_range;
    let amplitude = a_lo + (a_hi - a_lo) * rng.random::<f64>();
    let v0 = v_lo + (v_hi - v_lo) * rng.random::<f64>();
    let u: f64 = rng.random();
    let t_stop = config.stop_time_shift - config.stop_time_mean * (1.0 - u).ln();
    RowMeta {
        amplitude,
        v0,
        t_stop,
    }
}

/// Simulates `config.n_samples` trajectories and records their end headways.
pub fn generate(params: &ModelParams, config: &SamplingConfig) -> Result<Dataset> {
    params.validate()?;
    config.validate()?;
    let integrator: Box<dyn Integrator> = ode::registry().create(&config.integrator)?;
    let rows: Vec<(HeadwayProfile, RowMeta)> = (0..config.n_samples)
        .into_par_iter()
        .map(|row| {
            let meta = draw_row(config, row);
            let p = params.with_v0(meta.v0);
            let start = model::sinusoidal_state(&p, meta.amplitude);
            let end = model::evolve_with(integrator.as_ref(), &start, meta.t_stop, &p).map_err(
                |e| Error::Trajectory {
                    row,
                    amplitude: meta.amplitude,
                    v0: meta.v0,
                    t_stop: meta.t_stop,
                    source: Box::new(e),
                },
            )?;
            Ok((model::headways(&end, &p), meta))
        })
        .collect::<Result<_>>()?;
    let (profiles, meta) = rows.into_iter().unzip();
    Ok(Dataset {
        profiles,
        meta,
        alignment: None,
        anchor_index: DEFAULT_ANCHOR,
        params: *params,
        config: config.clone(),
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn n_cars(&self) -> usize {
        self.params.n_cars
    }

    pub fn is_aligned(&self) -> bool {
        self.alignment.is_some()
    }

    /// Aligns `profile` the way the rows were aligned; identity for
    /// unaligned data.
    pub fn align_like_rows(&self, profile: &HeadwayProfile) -> Result<HeadwayProfile> {
        match &self.alignment {
            Some(spec) => Ok(alignment_registry().create(spec)?.align(profile, self.anchor_index)),
            None => Ok(profile.clone()),
        }
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.profiles.iter().map(model::sigma).collect()
    }

    /// Unaligned dataset of externally produced rows. Their metadata is
    /// zeroed and the sampling config is the default.
    pub fn from_profiles(profiles: Vec<HeadwayProfile>, params: ModelParams) -> Result<Self> {
        let data = Dataset {
            meta: vec![
                RowMeta {
                    amplitude: 0.0,
                    v0: params.v0,
                    t_stop: 0.0,
                };
                profiles.len()
            ],
            profiles,
            alignment: None,
            anchor_index: DEFAULT_ANCHOR,
            params,
            config: SamplingConfig::default(),
        };
        data.check_shape()?;
        Ok(data)
    }

    /// Rows `indices` in the given order, metadata intact.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            profiles: indices.iter().map(|&i| self.profiles[i].clone()).collect(),
            meta: indices.iter().map(|&i| self.meta[i]).collect(),
            ..self.clone_header()
        }
    }

    /// All rows except `index`.
    pub fn without(&self, index: usize) -> Dataset {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| i != index).collect();
        self.subset(&keep)
    }

    fn clone_header(&self) -> Dataset {
        Dataset {
            profiles: Vec::new(),
            meta: Vec::new(),
            alignment: self.alignment.clone(),
            anchor_index: self.anchor_index,
            params: self.params,
            config: self.config.clone(),
        }
    }

    /// SHA-256 over the row count, width, alignment and raw headway bits.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.len() as u64).to_le_bytes());
        h.update((self.n_cars() as u64).to_le_bytes());
        h.update([self.is_aligned() as u8]);
        if let Some(spec) = &self.alignment {
            h.update(spec.to_string().as_bytes());
        }
        for p in &self.profiles {
            for v in p.as_slice() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn check_shape(&self) -> Result<()> {
        if self.meta.len() != self.profiles.len() {
            return Err(Error::DimensionMismatch {
                expected: self.profiles.len(),
                got: self.meta.len(),
            });
        }
        for p in &self.profiles {
            if p.len() != self.n_cars() {
                return Err(Error::DimensionMismatch {
                    expected: self.n_cars(),
                    got: p.len(),
                });
            }
        }
        Ok(())
    }
}

/// Aligns every row to `anchor_index` (1-based) with the strategy `alignment`.
pub fn align_all(data: &Dataset, anchor_index: usize, alignment: &StrategySpec) -> Result<Dataset> {
    if data.is_aligned() {
        return Err(Error::invalid("data set is already aligned"));
    }
    if anchor_index == 0 || anchor_index > data.n_cars() {
        return Err(Error::invalid(format!(
            "anchor index {anchor_index} outside 1..={}",
            data.n_cars()
        )));
    }
    let aligner = alignment_registry().create(alignment)?;
    Ok(Dataset {
        profiles: data
            .profiles
            .iter()
            .map(|p| aligner.align(p, anchor_index))
            .collect(),
        meta: data.meta.clone(),
        alignment: Some(alignment.clone()),
        anchor_index,
        params: data.params,
        config: data.config.clone(),
    })
}

/// Row indices picked at uniform rank spacing in ascending `values` order.
///
/// Ranks are `round(i (M - 1) / (target - 1))`; a duplicate rank is replaced
/// by the nearest unused one. Ties in `values` keep index order.
pub fn uniform_rank_indices(values: &[f64], target: usize) -> Result<Vec<usize>> {
    let m = values.len();
    if target < 2 {
        return Err(Error::invalid("downsampling target must be at least 2"));
    }
    if target > m {
        return Err(Error::invalid(format!(
            "downsampling target {target} exceeds {m} rows"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("embedding contains non-finite values"));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));

    let mut used = vec![false; m];
    let mut ranks = Vec::with_capacity(target);
    for i in 0..target {
        let ideal = (i as f64 * (m - 1) as f64 / (target - 1) as f64).round() as usize;
        let rank = if !used[ideal] {
            ideal
        } else {
            (1..m)
                .flat_map(|d| [ideal.checked_sub(d), Some(ideal + d)])
                .flatten()
                .find(|&r| r < m && !used[r])
                .expect("target <= m leaves a free rank")
        };
        used[rank] = true;
        ranks.push(rank);
    }
    ranks.sort_unstable();
    Ok(ranks.into_iter().map(|r| order[r]).collect())
}

pub fn downsample_1d(data: &Dataset, embedding: &[f64], target: usize) -> Result<Dataset> {
    if embedding.len() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            got: embedding.len(),
        });
    }
    Ok(data.subset(&uniform_rank_indices(embedding, target)?))
}

/// Indices of the two-stage polar downsampling: uniform in radius about the
/// embedding centroid, then uniform in angle among the survivors.
pub fn downsample_2d_indices(
    embedding: &[[f64; 2]],
    radial_target: usize,
    final_target: usize,
) -> Result<Vec<usize>> {
    if final_target > radial_target {
        return Err(Error::invalid("final_target must not exceed radial_target"));
    }
    let m = embedding.len() as f64;
    let cx = embedding.iter().map(|p| p[0]).sum::<f64>() / m;
    let cy = embedding.iter().map(|p| p[1]).sum::<f64>() / m;
    let radii: Vec<f64> = embedding
        .iter()
        .map(|p| (p[0] - cx).hypot(p[1] - cy))
        .collect();
    let stage1 = uniform_rank_indices(&radii, radial_target)?;
    let angles: Vec<f64> = stage1
        .iter()
        .map(|&i| {
            let p = embedding[i];
            (p[1] - cy).atan2(p[0] - cx).rem_euclid(2.0 * PI)
        })
        .collect();
    let stage2 = uniform_rank_indices(&angles, final_target)?;
    Ok(stage2.into_iter().map(|k| stage1[k]).collect())
}

pub fn downsample_2d(
    data: &Dataset,
    embedding: &[[f64; 2]],
    radial_target: usize,
    final_target: usize,
) -> Result<Dataset> {
    if embedding.len() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            got: embedding.len(),
        });
    }
    Ok(data.subset(&downsample_2d_indices(
        embedding,
        radial_target,
        final_target,
    )?))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    format_version: u32,
    n_rows: usize,
    n_cars: usize,
    road_length: f64,
    inv_tau: f64,
    safety_distance: f64,
    v0_range: [f64; 2],
    amplitude_range: [f64; 2],
    stop_time_mean: f64,
    stop_time_shift: f64,
    rng_seed: u64,
    n_samples: usize,
    integrator: StrategySpec,
    aligned: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alignment: Option<StrategySpec>,
    anchor_index: usize,
    fingerprint: String,
    per_row: Vec<RowMeta>,
}

/// Sidecar path for a data file: `data.csv` -> `data.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

pub fn save(data: &Dataset, csv_path: &Path) -> Result<()> {
    data.check_shape()?;
    io::write_matrix_csv(csv_path, data.profiles.iter().map(|p| p.as_slice()))?;
    let c = &data.config;
    let side = Sidecar {
        format_version: FORMAT_VERSION,
        n_rows: data.len(),
        n_cars: data.params.n_cars,
        road_length: data.params.road_length,
        inv_tau: data.params.inv_tau,
        safety_distance: data.params.safety_distance,
        v0_range: c.v0_range,
        amplitude_range: c.amplitude_range,
        stop_time_mean: c.stop_time_mean,
        stop_time_shift: c.stop_time_shift,
        rng_seed: c.rng_seed,
        n_samples: c.n_samples,
        integrator: c.integrator.clone(),
        aligned: data.is_aligned(),
        alignment: data.alignment.clone(),
        anchor_index: data.anchor_index,
        fingerprint: data.fingerprint(),
        per_row: data.meta.clone(),
    };
    io::write_json(&sidecar_path(csv_path), &side)
}

pub fn load(csv_path: &Path) -> Result<Dataset> {
    let side_path = sidecar_path(csv_path);
    let side: Sidecar = io::read_json(&side_path)?;
    let schema = |reason: String| Error::Schema {
        path: csv_path.to_path_buf(),
        reason,
    };
    if side.format_version != FORMAT_VERSION {
        return Err(schema(format!(
            "format version {} (expected {FORMAT_VERSION})",
            side.format_version
        )));
    }
    let rows = io::read_matrix_csv(csv_path)?;
    if rows.len() != side.n_rows || side.per_row.len() != side.n_rows {
        return Err(schema(format!(
            "header declares {} rows ({} metadata entries), file has {}",
            side.n_rows,
            side.per_row.len(),
            rows.len()
        )));
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != side.n_cars) {
        return Err(schema(format!(
            "row {} has {} columns, header declares n_cars = {}",
            bad + 1,
            rows[bad].len(),
            side.n_cars
        )));
    }
    let params = ModelParams {
        n_cars: side.n_cars,
        road_length: side.road_length,
        inv_tau: side.inv_tau,
        safety_distance: side.safety_distance,
        v0: 0.5 * (side.v0_range[0] + side.v0_range[1]),
    };
    let data = Dataset {
        profiles: rows.into_iter().map(HeadwayProfile::new).collect(),
        meta: side.per_row,
        alignment: match (side.aligned, side.alignment) {
            (false, None) => None,
            (true, a) => Some(a.unwrap_or_else(|| StrategySpec::named("argmax"))),
            (false, Some(_)) => return Err(schema("alignment recorded for unaligned data".into())),
        },
        anchor_index: side.anchor_index,
        params,
        config: SamplingConfig {
            n_samples: side.n_samples,
            amplitude_range: side.amplitude_range,
            v0_range: side.v0_range,
            stop_time_mean: side.stop_time_mean,
            stop_time_shift: side.stop_time_shift,
            rng_seed: side.rng_seed,
            integrator: side.integrator,
        },
    };
    if data.fingerprint() != side.fingerprint {
        return Err(schema("content does not match the recorded fingerprint".into()));
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(n: usize) -> SamplingConfig {
        SamplingConfig {
            n_samples: n,
            stop_time_mean: 20.0,
            stop_time_shift: 5.0,
            integrator: "dopri5:rtol=1e-8,atol=1e-8".parse().unwrap(),
            ..SamplingConfig::default()
        }
    }

    #[test]
    fn zero_amplitude_gives_free_flow() {
        let cfg = SamplingConfig {
            amplitude_range: [0.0, 0.0],
            ..small_config(4)
        };
        let d = generate(&ModelParams::default(), &cfg).unwrap();
        // adaptive steps leave noise at the integrator tolerance
        for p in &d.profiles {
            assert!(p.as_slice().iter().all(|h| (h - 2.0).abs() < 1e-6), "{:?}", p);
        }
    }

    #[test]
    fn generation_is_deterministic_and_prefix_stable() {
        let p = ModelParams::default();
        let a = generate(&p, &small_config(5)).unwrap();
        let b = generate(&p, &small_config(5)).unwrap();
        assert_eq!(a, b);
        let c = generate(&p, &small_config(3)).unwrap();
        assert_eq!(&a.profiles[..3], &c.profiles[..]);
        for (row, m) in a.meta.iter().enumerate() {
            assert!((0.0..=4.5).contains(&m.amplitude));
            assert!((0.96..=1.1).contains(&m.v0));
            assert!(m.t_stop >= 5.0);
            assert_eq!(*m, draw_row(&a.config, row));
        }
        for prof in &a.profiles {
            assert!((prof.total() - 60.0).abs() < 1e-8 * 60.0);
        }
    }

    #[test]
    fn shifted_exponential_moments() {
        let cfg = SamplingConfig::default();
        let n = 20_000;
        let ts: Vec<f64> = (0..n).map(|r| draw_row(&cfg, r).t_stop).collect();
        let mean = ts.iter().sum::<f64>() / n as f64;
        assert!(ts.iter().all(|&t| t >= 200.0));
        // shift + mean, standard error 700 / sqrt(n) ~ 5
        assert!((mean - 900.0).abs() < 25.0, "mean {mean}");
    }

    #[test]
    fn config_validation() {
        let mut c = SamplingConfig::default();
        assert!(c.validate().is_ok());
        c.v0_range = [1.1, 0.9];
        assert!(c.validate().is_err());
        let c = SamplingConfig {
            stop_time_mean: 0.0,
            ..SamplingConfig::default()
        };
        assert!(c.validate().is_err());
    }

    fn toy(profiles: Vec<Vec<f64>>) -> Dataset {
        let n = profiles[0].len();
        let m = profiles.len();
        Dataset {
            profiles: profiles.into_iter().map(HeadwayProfile::new).collect(),
            meta: (0..m)
                .map(|i| RowMeta {
                    amplitude: i as f64,
                    v0: 1.0,
                    t_stop: 300.0,
                })
                .collect(),
            alignment: None,
            anchor_index: DEFAULT_ANCHOR,
            params: ModelParams {
                n_cars: n,
                road_length: n as f64 * 2.0,
                ..ModelParams::default()
            },
            config: SamplingConfig::default(),
        }
    }

    #[test]
    fn align_all_rotates_and_keeps_sigma() {
        let d = toy(vec![vec![1.0, 2.0, 5.0, 0.0], vec![2.0; 4]]);
        let argmax = StrategySpec::named("argmax");
        let a = align_all(&d, 1, &argmax).unwrap();
        assert_eq!(a.profiles[0].as_slice(), &[5.0, 0.0, 1.0, 2.0]);
        assert_eq!(a.profiles[1], d.profiles[1]);
        assert!(a.is_aligned());
        assert_eq!(a.sigmas(), d.sigmas());
        assert!(align_all(&a, 1, &argmax).is_err());
        assert!(align_all(&d, 5, &argmax).is_err());
        assert!(align_all(&d, 1, &StrategySpec::named("nope")).is_err());
        assert_ne!(a.fingerprint(), d.fingerprint());
    }

    #[test]
    fn rank_downsampling_examples() {
        let emb = [5.0, 1.0, 4.0, 2.0, 3.0];
        assert_eq!(uniform_rank_indices(&emb, 3).unwrap(), vec![1, 4, 0]);
        assert_eq!(uniform_rank_indices(&emb, 2).unwrap(), vec![1, 0]);
        assert_eq!(uniform_rank_indices(&emb, 5).unwrap(), vec![1, 3, 4, 2, 0]);
        assert!(uniform_rank_indices(&emb, 1).is_err());
        assert!(uniform_rank_indices(&emb, 6).is_err());
    }

    #[test]
    fn downsample_is_subset_with_metadata() {
        let d = toy((0..7).map(|i| vec![i as f64, 14.0 - i as f64]).collect());
        let emb: Vec<f64> = (0..7).map(|i| ((i * 5) % 7) as f64).collect();
        let s = downsample_1d(&d, &emb, 4).unwrap();
        assert_eq!(s.len(), 4);
        for (p, m) in s.profiles.iter().zip(&s.meta) {
            let i = m.amplitude as usize;
            assert_eq!(p, &d.profiles[i]);
        }
    }

    #[test]
    fn downsample_2d_on_circle_keeps_everything_radially() {
        let pts: Vec<[f64; 2]> = (0..12)
            .map(|i| {
                let a = i as f64 * 2.0 * PI / 12.0;
                [1.0 + a.cos(), -2.0 + a.sin()]
            })
            .collect();
        let all = downsample_2d_indices(&pts, 12, 12).unwrap();
        let mut sorted = all.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..12).collect::<Vec<_>>());
        // angular stage on a circle: angles ascend with index from the centroid
        let four = downsample_2d_indices(&pts, 12, 4).unwrap();
        assert_eq!(four.len(), 4);
        assert!(downsample_2d_indices(&pts, 4, 6).is_err());
    }

    #[test]
    fn save_load_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let d = toy(vec![vec![0.1, 3.9], vec![1.0 / 3.0, 4.0 - 1.0 / 3.0]]);
        save(&d, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.profiles, d.profiles);
        assert_eq!(back.meta, d.meta);
        assert_eq!(back.config, d.config);
        assert_eq!(back.fingerprint(), d.fingerprint());

        let text = std::fs::read_to_string(&path).unwrap();
        let cut = &text[..text.len() - 10];
        std::fs::write(&path, cut).unwrap();
        assert!(matches!(load(&path), Err(Error::Parse { .. } | Error::Schema { .. })));

        save(&d, &path).unwrap();
        std::fs::write(&path, "1,2,3\n4,5,6\n").unwrap();
        assert!(matches!(load(&path), Err(Error::Schema { .. })));

        save(&d, &path).unwrap();
        let side = sidecar_path(&path);
        let json = std::fs::read_to_string(&side)
            .unwrap()
            .replace("\"format_version\": 1", "\"format_version\": 99");
        std::fs::write(&side, json).unwrap();
        assert!(matches!(load(&path), Err(Error::Schema { .. })));
    }
}
