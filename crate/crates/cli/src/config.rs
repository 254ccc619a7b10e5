//! Loading experiment configs: a TOML file layered over the built-in recipe,
//! then command-line overrides.

use std::path::{Path, PathBuf};

use clap::Args;
use dipnet_core::experiment::{ExperimentConfig, Problem, RunMethod, Setting};

use crate::error::{CliError, CliResult};

/// Environment variable naming the directory run outputs go under.
pub const DATA_ROOT_ENV: &str = "DIPNET_DATA_ROOT";

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// TOML experiment config; keys it omits take the recipe defaults.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_problem)]
    pub problem: Option<Problem>,
    #[arg(long, value_parser = parse_setting)]
    pub setting: Option<Setting>,
    /// Comma-separated methods, e.g. `naive,crown,opt-prop`.
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    pub methods: Option<Vec<RunMethod>>,
    #[arg(long, value_delimiter = ',')]
    pub n_train: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Write zero timing columns so reruns produce identical files.
    #[arg(long)]
    pub no_timing: bool,
    /// Output directory; defaults to `$DIPNET_DATA_ROOT/<problem>-<setting>`.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

pub fn parse_problem(s: &str) -> Result<Problem, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown problem `{s}` (reg1d, pde1d, pde2d)"))
}

pub fn parse_setting(s: &str) -> Result<Setting, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown setting `{s}` (ideal, augmented)"))
}

fn parse_method(s: &str) -> Result<RunMethod, String> {
    s.parse().map_err(|e: dipnet_core::Error| e.to_string())
}

/// Overlays `top` onto `base`, table by table.
fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn read_toml(path: &Path) -> CliResult<toml::Value> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    text.parse::<toml::Table>()
        .map(toml::Value::Table)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// The recipe for `problem`/`setting` as a TOML document.
pub fn recipe_toml(problem: Problem, setting: Setting) -> CliResult<String> {
    toml::to_string_pretty(&ExperimentConfig::recipe(problem, setting)).map_err(|e| CliError::Config(e.to_string()))
}

/// A loaded config plus the directory its outputs go to.
pub struct Loaded {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
}

pub fn load(args: &ConfigArgs) -> CliResult<Loaded> {
    let file = args.config.as_deref().map(read_toml).transpose()?;
    let pick = |key: &str| -> Option<String> { file.as_ref()?.get(key)?.as_str().map(str::to_string) };
    let problem = match (args.problem, pick("problem")) {
        (Some(p), _) => p,
        (None, Some(s)) => parse_problem(&s).map_err(CliError::Config)?,
        (None, None) => return Err(CliError::Config("no problem given (use --problem or a config file)".into())),
    };
    let setting = match (args.setting, pick("setting")) {
        (Some(s), _) => s,
        (None, Some(s)) => parse_setting(&s).map_err(CliError::Config)?,
        (None, None) => Setting::Ideal,
    };
    let recipe = ExperimentConfig::recipe(problem, setting);
    let mut value = toml::Value::try_from(&recipe).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(f) = file {
        merge(&mut value, f);
    }
    let mut cfg: ExperimentConfig = value.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    cfg.problem = problem;
    cfg.setting = setting;
    if let Some(m) = &args.methods {
        cfg.methods = m.clone();
    }
    if let Some(n) = &args.n_train {
        cfg.n_train = n.clone();
    }
    if let Some(s) = &args.seeds {
        cfg.seeds = s.clone();
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = args.learning_rate {
        cfg.train.learning_rate = lr;
    }
    if args.no_timing {
        cfg.record_timing = false;
    }
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let out = match &args.out {
        Some(p) => p.clone(),
        None => {
            let root = std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
            root.join(format!("{problem}-{setting}"))
        }
    };
    Ok(Loaded { cfg, out })
}
