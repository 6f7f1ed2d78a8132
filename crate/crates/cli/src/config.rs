//! Run configuration: one TOML section per module, every key optional.

use std::path::{Path, PathBuf};

use eqfree_core::dataset::{self, SamplingConfig, DEFAULT_ANCHOR};
use eqfree_core::dmap::DmapOptions;
use eqfree_core::eqfree::{CoarseConfig, MacroSettings, SeedSettings};
use eqfree_core::model::ModelParams;
use eqfree_core::operators::OperatorOptions;
use eqfree_core::registry::StrategySpec;
use eqfree_core::twcont::floquet::FloquetSettings;
use eqfree_core::twcont::wave::InitialWaveSettings;
use eqfree_core::twcont::TwSettings;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub rng_seed: u64,
    pub output_dir: PathBuf,
    pub model: ModelParams,
    pub sampling: SamplingSection,
    pub dataset: DatasetSection,
    pub simulate: SimulateSection,
    pub downsample: DownsampleSection,
    pub dmap: DmapOptions,
    pub operators: OperatorOptions,
    pub validate: ValidateSection,
    pub stepper: CoarseConfig,
    #[serde(rename = "macro")]
    pub macro_: MacroSettings,
    pub seed: SeedSettings,
    pub micro: TwSettings,
    pub initial_wave: InitialWaveSettings,
    pub floquet: FloquetSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            rng_seed: SamplingConfig::default().rng_seed,
            output_dir: PathBuf::from("out"),
            model: ModelParams::default(),
            sampling: SamplingSection::default(),
            dataset: DatasetSection::default(),
            simulate: SimulateSection::default(),
            downsample: DownsampleSection::default(),
            dmap: DmapOptions::default(),
            operators: OperatorOptions::default(),
            validate: ValidateSection::default(),
            stepper: CoarseConfig::default(),
            macro_: MacroSettings::default(),
            seed: SeedSettings::default(),
            micro: TwSettings::default(),
            initial_wave: InitialWaveSettings::default(),
            floquet: FloquetSection::default(),
        }
    }
}

/// [`SamplingConfig`] without its seed, which lives at the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingSection {
    pub n_samples: usize,
    pub amplitude_range: [f64; 2],
    pub v0_range: [f64; 2],
    pub stop_time_mean: f64,
    pub stop_time_shift: f64,
    pub integrator: StrategySpec,
}

impl Default for SamplingSection {
    fn default() -> Self {
        let c = SamplingConfig::default();
        Self {
            n_samples: c.n_samples,
            amplitude_range: c.amplitude_range,
            v0_range: c.v0_range,
            stop_time_mean: c.stop_time_mean,
            stop_time_shift: c.stop_time_shift,
            integrator: c.integrator,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// 1-based index the aligned jam is moved to.
    pub anchor_index: usize,
    pub alignment: StrategySpec,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            anchor_index: DEFAULT_ANCHOR,
            alignment: dataset::default_alignment(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    /// Amplitude of the sinusoidal position perturbation.
    pub amplitude: f64,
    pub t_end: f64,
    pub output_interval: f64,
    pub integrator: StrategySpec,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            amplitude: 2.0,
            t_end: 1000.0,
            output_interval: 1.0,
            integrator: StrategySpec::named("dopri5"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DownsampleSection {
    pub target: usize,
    /// First, radial stage of the two-dimensional downsampling.
    pub radial_target: usize,
}

impl Default for DownsampleSection {
    fn default() -> Self {
        Self {
            target: 1000,
            radial_target: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateSection {
    pub loo: bool,
    pub lift: bool,
}

impl Default for ValidateSection {
    fn default() -> Self {
        Self {
            loo: true,
            lift: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sheet {
    Upper,
    Lower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FloquetSection {
    /// Wave at this `v0`; the branch point nearest the first fold when unset.
    pub v0: Option<f64>,
    /// Which sheet to take when several branch segments cross `v0`.
    pub sheet: Sheet,
    pub settings: FloquetSettings,
}

impl Default for FloquetSection {
    fn default() -> Self {
        Self {
            v0: None,
            sheet: Sheet::Upper,
            settings: FloquetSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn sampling_config(&self) -> SamplingConfig {
        let s = &self.sampling;
        SamplingConfig {
            n_samples: s.n_samples,
            amplitude_range: s.amplitude_range,
            v0_range: s.v0_range,
            stop_time_mean: s.stop_time_mean,
            stop_time_shift: s.stop_time_shift,
            rng_seed: self.rng_seed,
            integrator: s.integrator.clone(),
        }
    }

    /// Reads `path` (if any), applies `overrides` in order and deserializes.
    pub fn load(path: Option<&Path>, overrides: &[(String, toml::Value)]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for (key, value) in overrides {
            set_path(&mut table, key, value.clone())?;
        }
        // Round-trip through text so errors carry the offending key.
        let text = toml::to_string(&table).map_err(|e| CliError::Config(e.to_string()))?;
        let config: RunConfig = toml::from_str(&text).map_err(|e| {
            let origin = path.map_or("configuration".to_string(), |p| p.display().to_string());
            CliError::Config(format!("{origin}: {}", e.message()))
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate()?;
        self.sampling_config().validate()?;
        self.dmap.validate()?;
        self.stepper.validate()?;
        self.macro_.validate()?;
        self.micro.validate()?;
        dataset::alignment_registry().create(&self.dataset.alignment)?;
        eqfree_core::ode::registry().create(&self.simulate.integrator)?;
        let s = &self.simulate;
        if !(s.t_end >= 0.0 && s.output_interval > 0.0) {
            return Err(CliError::Config(
                "simulate.t_end must be nonnegative and simulate.output_interval positive".into(),
            ));
        }
        if self.downsample.target < 2 || self.downsample.radial_target < self.downsample.target {
            return Err(CliError::Config(
                "downsample needs 2 <= target <= radial_target".into(),
            ));
        }
        Ok(())
    }
}

/// Parses the right-hand side of `--set key=value` as a TOML value, falling
/// back to a bare string.
pub fn parse_override(raw: &str) -> Result<(String, toml::Value), String> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| format!("expected section.key=value, got `{raw}`"))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(format!("bad key in `{raw}`"));
    }
    let value = value.trim();
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((key.to_string(), parsed))
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields one part");
    let mut cur = table;
    for part in parts {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{part}` in `{key}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
