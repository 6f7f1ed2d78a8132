//! `eqfree`: run one stage of the diffusion-map equation-free pipeline.
//!
//! Exit codes: 0 success, 1 numerical failure, 2 configuration or input error.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{parse_override, RunConfig};
use error::CliError;
use manifest::Recorder;

#[derive(Parser, Debug)]
#[command(name = "eqfree", version, about = "Equation-free continuation through diffusion-map coordinates")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML run configuration.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    /// RNG seed (overrides `rng_seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "EQFREE_THREADS")]
    threads: Option<usize>,
    /// Override any config key, e.g. `--set dmap.threshold=0.4`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", value_parser = parse_override)]
    overrides: Vec<(String, toml::Value)>,
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct DataArg {
    /// Dataset CSV; its JSON sidecar must sit beside it.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args, Debug)]
struct DataMapArgs {
    #[arg(long)]
    data: PathBuf,
    /// Diffusion map CSV written by `embed` on the same dataset.
    #[arg(long)]
    map: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Headway waterfall and sigma(t) of one microsimulation.
    Simulate {
        #[arg(long)]
        amplitude: Option<f64>,
        #[arg(long)]
        v0: Option<f64>,
        #[arg(long)]
        t_end: Option<f64>,
    },
    /// Sample and simulate the dataset.
    Generate {
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Remove the translation symmetry from every row.
    Align {
        #[command(flatten)]
        input: DataArg,
        /// Alignment strategy: `phase` or `argmax`.
        #[arg(long)]
        alignment: Option<String>,
        #[arg(long)]
        anchor: Option<usize>,
    },
    /// Uniform subsample in embedding coordinates.
    Downsample {
        #[command(flatten)]
        input: DataMapArgs,
        #[arg(long)]
        target: Option<usize>,
        #[arg(long)]
        radial_target: Option<usize>,
    },
    /// Diffusion map and eigenvector selection.
    Embed {
        #[command(flatten)]
        input: DataArg,
        #[arg(long)]
        threshold: Option<f64>,
        /// Kernel scale rule, e.g. `median:factor=5`.
        #[arg(long)]
        epsilon: Option<String>,
    },
    /// Leave-one-out restriction and lift-then-restrict errors.
    ValidateOps {
        #[command(flatten)]
        input: DataMapArgs,
        #[arg(long)]
        no_loo: bool,
        #[arg(long)]
        no_lift: bool,
    },
    /// Coarse fixed points (D = 1) or periodic orbits (D = 2) in v0.
    ContinueMacro {
        #[command(flatten)]
        input: DataMapArgs,
        /// v0 of the seeding microsimulation.
        #[arg(long)]
        seed_v0: Option<f64>,
    },
    /// Traveling-wave branch of the microsystem in v0.
    ContinueMicro {
        /// Also write every wave profile.
        #[arg(long)]
        profiles: bool,
    },
    /// Floquet exponents of one traveling wave.
    Floquet {
        /// Wave at this v0 instead of at the fold.
        #[arg(long, conflicts_with = "fold")]
        v0: Option<f64>,
        /// Take the lower (unstable) sheet at `--v0`.
        #[arg(long, requires = "v0")]
        lower: bool,
        /// Wave at the branch point nearest the first fold.
        #[arg(long)]
        fold: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Generate { .. } => "generate",
            Command::Align { .. } => "align",
            Command::Downsample { .. } => "downsample",
            Command::Embed { .. } => "embed",
            Command::ValidateOps { .. } => "validate-ops",
            Command::ContinueMacro { .. } => "continue-macro",
            Command::ContinueMicro { .. } => "continue-micro",
            Command::Floquet { .. } => "floquet",
        }
    }

    /// Flags as config overrides, so the manifest records effective values.
    fn overrides(&self) -> Vec<(String, toml::Value)> {
        let mut o = Vec::new();
        let mut put = |k: &str, v: Option<toml::Value>| {
            if let Some(v) = v {
                o.push((k.to_string(), v));
            }
        };
        let f = |x: Option<f64>| x.map(toml::Value::Float);
        let n = |x: Option<usize>| x.map(|x| toml::Value::Integer(x as i64));
        let s = |x: &Option<String>| x.clone().map(toml::Value::String);
        match self {
            Command::Simulate { amplitude, v0, t_end } => {
                put("simulate.amplitude", f(*amplitude));
                put("model.v0", f(*v0));
                put("simulate.t_end", f(*t_end));
            }
            Command::Generate { samples } => put("sampling.n_samples", n(*samples)),
            Command::Align { alignment, anchor, .. } => {
                put("dataset.alignment", s(alignment));
                put("dataset.anchor_index", n(*anchor));
            }
            Command::Downsample { target, radial_target, .. } => {
                put("downsample.target", n(*target));
                put("downsample.radial_target", n(*radial_target));
            }
            Command::Embed { threshold, epsilon, .. } => {
                put("dmap.threshold", f(*threshold));
                put("dmap.epsilon", s(epsilon));
            }
            Command::ValidateOps { no_loo, no_lift, .. } => {
                put("validate.loo", no_loo.then_some(toml::Value::Boolean(false)));
                put("validate.lift", no_lift.then_some(toml::Value::Boolean(false)));
            }
            Command::ContinueMacro { seed_v0, .. } => put("seed.v0", f(*seed_v0)),
            Command::ContinueMicro { .. } => {}
            Command::Floquet { v0, lower, .. } => {
                put("floquet.v0", f(*v0));
                if *lower {
                    put("floquet.sheet", Some(toml::Value::String("lower".into())));
                }
            }
        }
        o
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let g = &cli.global;
    let mut overrides = g.overrides.clone();
    if let Some(seed) = g.seed {
        let seed = i64::try_from(seed)
            .map_err(|_| CliError::Config(format!("seed {seed} does not fit a TOML integer")))?;
        overrides.push(("rng_seed".into(), toml::Value::Integer(seed)));
    }
    if let Some(out) = &g.out {
        overrides.push(("output_dir".into(), toml::Value::String(out.display().to_string())));
    }
    overrides.extend(cli.command.overrides());
    let mut config = RunConfig::load(g.config.as_deref(), &overrides)?;
    if let Command::Floquet { fold: true, .. } = cli.command {
        config.floquet.v0 = None;
    }
    Ok(config)
}

fn set_threads(threads: Option<usize>) -> Result<(), CliError> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(CliError::Config("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn run(cli: &Cli, rec: &mut Recorder) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate { .. } => commands::simulate(rec),
        Command::Generate { .. } => commands::generate(rec),
        Command::Align { input, .. } => commands::align(rec, &input.data),
        Command::Downsample { input, .. } => commands::downsample(rec, &input.data, &input.map),
        Command::Embed { input, .. } => commands::embed(rec, &input.data),
        Command::ValidateOps { input, .. } => commands::validate_ops(rec, &input.data, &input.map),
        Command::ContinueMacro { input, .. } => {
            commands::continue_macro(rec, &input.data, &input.map)
        }
        Command::ContinueMicro { profiles } => commands::continue_micro(rec, *profiles),
        Command::Floquet { .. } => commands::floquet(rec),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.global.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let setup = set_threads(cli.global.threads).and_then(|_| load_config(&cli));
    let config = match setup {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if let Err(e) = std::fs::create_dir_all(&config.output_dir) {
        eprintln!("error: cannot create {}: {e}", config.output_dir.display());
        return ExitCode::from(2);
    }
    let mut rec = Recorder::new(cli.command.name(), config);
    let result = run(&cli, &mut rec);
    // Input errors leave no manifest; finished and failed numerical runs do.
    let code = match &result {
        Err(e) if e.exit_code() == 2 => e.exit_code(),
        _ => match rec.finish(result.as_ref().err()) {
            Ok(path) => {
                log::info!("manifest written to {}", path.display());
                result.as_ref().map_or_else(CliError::exit_code, |_| 0)
            }
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
    };
    if let Err(e) = &result {
        eprintln!("error: {e}");
    }
    ExitCode::from(code as u8)
}
