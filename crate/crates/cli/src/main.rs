//! `dipnet`: generate data, train and evaluate interval surrogates, and
//! aggregate the results.

mod config;
mod error;
mod io;
mod runner;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dipnet_core::augment::{cluster_intervals, grid_intervals, ClusterAugConfig, GridAugConfig};
use dipnet_core::experiment::{aggregate, evaluate_model, plot_rows, prepare, AggregateRow, Problem, ProblemData, ResultRow, RunMethod, Setting};
use dipnet_core::models::load_model;
use dipnet_core::objectives::{interval_metrics, IntervalMetrics, LossConfig};
use serde::Serialize;

use config::{load, parse_problem, parse_setting, recipe_toml, ConfigArgs, Loaded};
use error::{CliError, CliResult};
use runner::{cells, run_cells, RunDir};

#[derive(Parser, Debug)]
#[command(name = "dipnet", version, about = "Interval propagation through neural-network surrogates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the default config of a problem and setting as TOML.
    InitConfig {
        #[arg(long, value_parser = parse_problem)]
        problem: Problem,
        #[arg(long, value_parser = parse_setting, default_value = "ideal")]
        setting: Setting,
    },
    /// Generate the training pool and test set and write them as CSV.
    GenData(ConfigArgs),
    /// Build interval data from a pointwise CSV by grid cells or k-means clusters.
    Augment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Grid resolutions, comma-separated.
        #[arg(long, value_delimiter = ',', conflicts_with = "cluster_sizes")]
        resolutions: Option<Vec<f64>>,
        /// Target cluster sizes, comma-separated.
        #[arg(long, value_delimiter = ',')]
        cluster_sizes: Option<Vec<usize>>,
        /// Groups with fewer points are dropped.
        #[arg(long, default_value_t = 1)]
        min_group: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train every direct-method cell; models and loss traces go to the run directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Worker threads; each cell runs on one thread.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Interval CSV replacing the generated training pool (reg1d), e.g.
        /// the output of `augment`. Use a fresh `--out` per pool.
        #[arg(long)]
        train_pool: Option<PathBuf>,
    },
    /// Evaluate trained models into `results.csv`, or score a prediction file.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Predicted intervals (`y1_lo, y1_hi, …` columns); needs `--targets`.
        #[arg(long, requires = "targets")]
        predictions: Option<PathBuf>,
        #[arg(long)]
        targets: Option<PathBuf>,
    },
    /// Run the Opt-Prop baseline into `baseline.csv`.
    Baseline {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Aggregate `results.csv` and `baseline.csv` into `report.csv`.
    Report {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Also write bounds against truth per method to `plots/`.
        #[arg(long)]
        emit_plot_data: bool,
        /// Test functions per plot file (operator problems).
        #[arg(long, default_value_t = 3)]
        plot_functions: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::InitConfig { problem, setting } => {
            print!("{}", recipe_toml(problem, setting)?);
            Ok(())
        }
        Command::GenData(args) => gen_data(&load(&args)?),
        Command::Augment {
            input,
            output,
            resolutions,
            cluster_sizes,
            min_group,
            seed,
        } => augment(&input, &output, resolutions, cluster_sizes, min_group, seed),
        Command::Train { cfg, jobs, train_pool } => {
            let l = load(&cfg)?;
            let mut data = prepare(&l.cfg)?;
            if let Some(path) = train_pool {
                let ProblemData::Regression { train_pool, .. } = &mut data else {
                    return Err(CliError::Config("--train-pool applies to reg1d only".into()));
                };
                *train_pool = io::read_intervals(&path)?;
            }
            let todo = cells(&l.cfg, |m| m != RunMethod::OptProp);
            if todo.is_empty() {
                return Err(CliError::Config("no direct methods selected; Opt-Prop runs under `baseline`".into()));
            }
            run_cells(&l.cfg, &data, &RunDir::new(&l.out), &todo, jobs)?;
            eprintln!("trained {} cells into {}", todo.len(), l.out.display());
            Ok(())
        }
        Command::Evaluate { cfg, predictions, targets } => match (predictions, targets) {
            (Some(p), Some(t)) => score_file(&p, &t),
            _ => evaluate(&load(&cfg)?),
        },
        Command::Baseline { cfg, jobs } => {
            let l = load(&cfg)?;
            if l.cfg.problem != Problem::Reg1d {
                return Err(CliError::Config("the Opt-Prop baseline runs on reg1d only".into()));
            }
            let mut cfg = l.cfg.clone();
            cfg.methods = vec![RunMethod::OptProp];
            let data = prepare(&cfg)?;
            let todo = cells(&cfg, |_| true);
            let dir = RunDir::new(&l.out);
            let m = run_cells(&cfg, &data, &dir, &todo, jobs)?;
            let rows: Vec<ResultRow> = todo.iter().map(|c| m.cells[&c.key()].row.clone()).collect();
            io::write_rows(&l.out.join("baseline.csv"), &rows)?;
            eprintln!("wrote {}", l.out.join("baseline.csv").display());
            Ok(())
        }
        Command::Report {
            cfg,
            emit_plot_data,
            plot_functions,
        } => report(&load(&cfg)?, emit_plot_data, plot_functions),
    }
}

#[derive(Serialize)]
struct DataManifest<'a> {
    problem: Problem,
    setting: Setting,
    seed: u64,
    width_min: f64,
    width_max: f64,
    grid_resolutions: &'a [f64],
    grid_min_group: usize,
    cluster_sizes: &'a [usize],
    train_pool: usize,
    test: usize,
    /// Points where endpoint solutions did not bracket the center solution.
    non_monotone: Option<usize>,
    files: Vec<String>,
}

fn gen_data(l: &Loaded) -> CliResult<()> {
    let data = prepare(&l.cfg)?;
    let dir = l.out.join("data");
    io::create_dir(&dir)?;
    let (files, non_monotone) = match &data {
        ProblemData::Regression { train_pool, points, test } => {
            io::write_intervals(&dir.join("train_pool.csv"), train_pool)?;
            io::write_points(&dir.join("points.csv"), points)?;
            io::write_intervals(&dir.join("test.csv"), test)?;
            (vec!["train_pool.csv".into(), "points.csv".into(), "test.csv".into()], None)
        }
        ProblemData::Operator { train_pool, test, non_monotone } => {
            let mut f = io::write_function_intervals(&dir, "train_pool", train_pool)?;
            f.extend(io::write_function_intervals(&dir, "test", test)?);
            (f, Some(*non_monotone))
        }
    };
    let dc = &l.cfg.data;
    let manifest = DataManifest {
        problem: l.cfg.problem,
        setting: l.cfg.setting,
        seed: dc.seed,
        width_min: dc.width_min,
        width_max: dc.width_max,
        grid_resolutions: &dc.grid_resolutions,
        grid_min_group: dc.grid_min_group,
        cluster_sizes: &dc.cluster_sizes,
        train_pool: data.pool_len(),
        test: match &data {
            ProblemData::Regression { test, .. } => test.len(),
            ProblemData::Operator { test, .. } => test.len(),
        },
        non_monotone,
        files,
    };
    io::write_atomic(&dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    eprintln!("wrote {} training and {} test samples to {}", manifest.train_pool, manifest.test, dir.display());
    Ok(())
}

fn augment(
    input: &Path,
    output: &Path,
    resolutions: Option<Vec<f64>>,
    cluster_sizes: Option<Vec<usize>>,
    min_group: usize,
    seed: u64,
) -> CliResult<()> {
    let points = io::read_points(input)?;
    let out = match (resolutions, cluster_sizes) {
        (Some(r), None) => {
            let mut g = GridAugConfig::new(r).map_err(|e| CliError::Config(e.to_string()))?;
            g.min_group_size = min_group;
            grid_intervals(&points, &g)?
        }
        (None, Some(s)) => {
            let mut c = ClusterAugConfig::from_sizes(points.len(), &s, seed).map_err(|e| CliError::Config(e.to_string()))?;
            c.min_group_size = min_group;
            cluster_intervals(&points, &c)?
        }
        _ => return Err(CliError::Config("give exactly one of --resolutions or --cluster-sizes".into())),
    };
    io::write_intervals(output, &out)?;
    eprintln!("{} points -> {} intervals", points.len(), out.len());
    Ok(())
}

fn evaluate(l: &Loaded) -> CliResult<()> {
    let dir = RunDir::new(&l.out);
    let m = dir.load_manifest()?;
    let todo = cells(&l.cfg, |m| m != RunMethod::OptProp);
    let missing: Vec<String> = todo.iter().map(|c| c.key()).filter(|k| !m.cells.contains_key(k)).collect();
    if !missing.is_empty() {
        return Err(CliError::Run(format!(
            "{} cells have not been trained (first: {}); run `train` first",
            missing.len(),
            missing[0]
        )));
    }
    let data = prepare(&l.cfg)?;
    let mut rows = Vec::new();
    for c in &todo {
        let rec = &m.cells[&c.key()];
        let row = match &rec.model {
            Some(rel) if !rec.row.failed => {
                let model = load_model(&l.out.join(rel))?;
                let (mut row, _) = evaluate_model(&l.cfg, &data, &model, c.n_train, c.seed)?;
                row.train_s = rec.row.train_s;
                row
            }
            _ => rec.row.clone(),
        };
        rows.push(row);
    }
    let path = l.out.join("results.csv");
    io::write_rows(&path, &rows)?;
    eprintln!("wrote {} rows to {}", rows.len(), path.display());
    Ok(())
}

#[derive(Serialize)]
struct MetricsRow {
    rmse_l: f64,
    rmse_u: f64,
    linex_l: f64,
    linex_u: f64,
    pinaw: f64,
    picp: f64,
    cwc: f64,
    excluded: usize,
}

impl From<IntervalMetrics> for MetricsRow {
    fn from(m: IntervalMetrics) -> Self {
        Self {
            rmse_l: m.rmse_l,
            rmse_u: m.rmse_u,
            linex_l: m.linex_l,
            linex_u: m.linex_u,
            pinaw: m.pinaw,
            picp: m.picp,
            cwc: m.cwc,
            excluded: m.excluded,
        }
    }
}

/// Output-interval columns `y*_lo` and `y*_hi` of a CSV, in file order.
fn output_bounds(path: &Path) -> CliResult<(Vec<f64>, Vec<f64>)> {
    let (h, t) = io::read_matrix(path)?;
    let pick = |end: &str| -> Vec<usize> { (0..h.len()).filter(|&j| h[j].starts_with('y') && h[j].ends_with(end)).collect() };
    let (lo, hi) = (pick("_lo"), pick("_hi"));
    if lo.is_empty() || lo.len() != hi.len() {
        return Err(CliError::Run(format!("{}: expected y1_lo, y1_hi, … columns", path.display())));
    }
    Ok((t.select_cols(&lo).into_data(), t.select_cols(&hi).into_data()))
}

fn score_file(pred: &Path, target: &Path) -> CliResult<()> {
    let (pl, ph) = output_bounds(pred)?;
    let (tl, th) = output_bounds(target)?;
    if pl.len() != tl.len() {
        return Err(CliError::Run(format!("{} has {} bounds, {} has {}", pred.display(), pl.len(), target.display(), tl.len())));
    }
    let m = interval_metrics(&pl, &ph, &tl, &th, &LossConfig::default())?;
    let mut w = csv::Writer::from_writer(std::io::stdout());
    w.serialize(MetricsRow::from(m))?;
    w.flush().map_err(|e| CliError::io(Path::new("<stdout>"), e))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

fn report(l: &Loaded, emit_plot_data: bool, plot_functions: usize) -> CliResult<()> {
    let mut rows: Vec<ResultRow> = Vec::new();
    let mut found = false;
    for name in ["results.csv", "baseline.csv"] {
        let p = l.out.join(name);
        if p.exists() {
            rows.extend(io::read_rows::<ResultRow>(&p)?);
            found = true;
        }
    }
    if !found {
        return Err(CliError::Run(format!(
            "no results.csv or baseline.csv in {}; run `evaluate` or `baseline` first",
            l.out.display()
        )));
    }
    let agg: Vec<AggregateRow> = aggregate(&rows);
    io::write_rows(&l.out.join("report.csv"), &agg)?;
    println!("{:<10} {:>7} {:<8} {:>10} {:>10} {:>8}", "method", "n_train", "metric", "mean", "std", "failures");
    for a in &agg {
        println!(
            "{:<10} {:>7} {:<8} {:>10} {:>10} {:>8}",
            a.method,
            a.n_train,
            a.metric,
            fmt_opt(a.mean),
            fmt_opt(a.std),
            a.failures
        );
    }
    if emit_plot_data {
        emit_plots(l, plot_functions)?;
    }
    Ok(())
}

/// One plot file per method: the first seed at the largest training size
/// with a stored model.
fn emit_plots(l: &Loaded, functions: usize) -> CliResult<()> {
    let m = RunDir::new(&l.out).load_manifest()?;
    let data = prepare(&l.cfg)?;
    let dir = l.out.join("plots");
    io::create_dir(&dir)?;
    let mut written = 0;
    for &method in &l.cfg.methods {
        let mut sizes = l.cfg.n_train.clone();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        let pick = sizes.iter().find_map(|&n| {
            l.cfg.seeds.iter().find_map(|&seed| {
                let key = runner::Cell { method, n_train: n, seed }.key();
                let rel = m.cells.get(&key)?.model.clone()?;
                Some((key, n, seed, rel))
            })
        });
        let Some((key, n, seed, rel)) = pick else {
            eprintln!("no stored model for {method}; skipped");
            continue;
        };
        let model = load_model(&l.out.join(rel))?;
        let (_, pred) = evaluate_model(&l.cfg, &data, &model, n, seed)?;
        io::write_rows(&dir.join(format!("{key}.csv")), &plot_rows(&data, &pred, functions))?;
        written += 1;
    }
    eprintln!("wrote {written} plot files to {}", dir.display());
    Ok(())
}
