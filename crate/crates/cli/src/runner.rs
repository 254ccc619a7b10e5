//! Cell scheduling with a resumable on-disk manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use dipnet_core::experiment::{run_cell, ExperimentConfig, ProblemData, ResultRow, RunMethod};
use dipnet_core::models::save_model;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::io::{create_dir, write_atomic, write_rows};

/// One (method, n_train, seed) cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cell {
    pub method: RunMethod,
    pub n_train: usize,
    pub seed: u64,
}

impl Cell {
    pub fn key(&self) -> String {
        format!("{}-n{}-s{}", self.method, self.n_train, self.seed)
    }
}

pub fn cells(cfg: &ExperimentConfig, keep: impl Fn(RunMethod) -> bool) -> Vec<Cell> {
    let mut out = Vec::new();
    for &method in cfg.methods.iter().filter(|m| keep(**m)) {
        for &n_train in &cfg.n_train {
            for &seed in &cfg.seeds {
                out.push(Cell { method, n_train, seed });
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub row: ResultRow,
    pub steps: usize,
    pub failure: Option<String>,
    /// Model file relative to the run directory; absent for failed runs.
    pub model: Option<String>,
}

/// Completed cells of one run directory, keyed by [`Cell::key`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: Option<ExperimentConfig>,
    pub cells: BTreeMap<String, CellRecord>,
}

pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn load_manifest(&self) -> CliResult<Manifest> {
        let p = self.manifest_path();
        if !p.exists() {
            return Ok(Manifest::default());
        }
        let text = std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save_manifest(&self, m: &Manifest) -> CliResult<()> {
        write_atomic(&self.manifest_path(), serde_json::to_string_pretty(m)?.as_bytes())
    }

    /// Loads the manifest and checks it belongs to `cfg`. Only the matrix
    /// axes (methods, n_train, seeds) may differ between resumed runs.
    pub fn open(&self, cfg: &ExperimentConfig) -> CliResult<Manifest> {
        create_dir(&self.root)?;
        let mut m = self.load_manifest()?;
        let comparable = |c: &ExperimentConfig| ExperimentConfig {
            methods: vec![],
            n_train: vec![],
            seeds: vec![],
            ..c.clone()
        };
        match &m.config {
            Some(old) if comparable(old) != comparable(cfg) => {
                return Err(CliError::Config(format!(
                    "{} was produced with a different config; use another --out directory",
                    self.root.display()
                )))
            }
            _ => m.config = Some(cfg.clone()),
        }
        Ok(m)
    }
}

/// Runs every cell missing from the manifest on `jobs` worker threads and
/// records each one as soon as it finishes, so an interrupted run resumes
/// where it stopped.
pub fn run_cells(cfg: &ExperimentConfig, data: &ProblemData, dir: &RunDir, todo: &[Cell], jobs: usize) -> CliResult<Manifest> {
    let manifest = dir.open(cfg)?;
    create_dir(&dir.root.join("models"))?;
    create_dir(&dir.root.join("traces"))?;
    let pending: Vec<Cell> = todo
        .iter()
        .copied()
        .filter(|c| match manifest.cells.get(&c.key()) {
            Some(rec) => rec.model.as_ref().is_none_or(|m| !dir.root.join(m).exists()) && !rec.row.failed,
            None => true,
        })
        .collect();
    if pending.len() < todo.len() {
        eprintln!("resuming: {} of {} cells already done", todo.len() - pending.len(), todo.len());
    }
    dir.save_manifest(&manifest)?;
    let state = Mutex::new(manifest);
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let first_error: Mutex<Option<CliError>> = Mutex::new(None);
    let worker = || {
        while !stop.load(Ordering::Relaxed) {
            let i = next.fetch_add(1, Ordering::Relaxed);
            let Some(cell) = pending.get(i) else { break };
            if let Err(e) = run_one(cfg, data, dir, cell, &state) {
                stop.store(true, Ordering::Relaxed);
                first_error.lock().unwrap().get_or_insert(e);
            }
        }
    };
    std::thread::scope(|s| {
        for _ in 1..jobs.max(1) {
            s.spawn(worker);
        }
        worker();
    });
    if let Some(e) = first_error.into_inner().unwrap() {
        return Err(e);
    }
    Ok(state.into_inner().unwrap())
}

fn run_one(cfg: &ExperimentConfig, data: &ProblemData, dir: &RunDir, cell: &Cell, state: &Mutex<Manifest>) -> CliResult<()> {
    let key = cell.key();
    let out = run_cell(cfg, data, cell.method, cell.n_train, cell.seed)
        .map_err(|e| CliError::Run(format!("cell {key}: {e}")))?;
    let model = if out.row.failed {
        None
    } else {
        let rel = format!("models/{key}.json");
        save_model(&dir.root.join(&rel), &out.model)?;
        Some(rel)
    };
    let trace: Vec<TraceRow> = out
        .report
        .trace
        .iter()
        .enumerate()
        .map(|(epoch, &loss)| TraceRow { epoch, loss })
        .collect();
    write_rows(&dir.root.join(format!("traces/{key}.csv")), &trace)?;
    let status = match &out.report.failed {
        Some(why) => format!("failed ({why})"),
        None if out.row.failed => "failed (non-finite metrics)".into(),
        None => format!("rmse {:.4}/{:.4} pinaw {:.3} picp {:.3}", out.row.rmse_l, out.row.rmse_u, out.row.pinaw, out.row.picp),
    };
    eprintln!("{key}: {status}");
    let rec = CellRecord {
        row: out.row,
        steps: out.report.steps,
        failure: out.report.failed,
        model,
    };
    let mut m = state.lock().unwrap();
    m.cells.insert(key, rec);
    dir.save_manifest(&m)
}

#[derive(Serialize)]
struct TraceRow {
    epoch: usize,
    #[serde(serialize_with = "finite_or_empty")]
    loss: f64,
}

fn finite_or_empty<S: serde::Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}
