//! Experiment runner for decentralized VCG mechanisms: configuration, sweeps
//! over a worker pool, and the output files.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiment;
pub mod output;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{parse, Config, ConfigError, Issue};
pub use experiment::{CellRecord, CellResult, ExperimentKind, Plan, Summary};

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("simulation failed: {0}")]
    Simulation(#[from] mechsim_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

impl AppError {
    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AppError + '_ {
    move |source| AppError::Io { path: path.to_path_buf(), source }
}

/// Everything needed to rebuild any cell of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub experiment: ExperimentKind,
    /// The configuration with every default filled in.
    pub config: Config,
    pub coord_names: Vec<String>,
    pub cells: Vec<CellRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|source| AppError::Json { path: path.to_path_buf(), source })
    }
}

/// Reads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<Config, AppError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(parse(&text, &path.display().to_string())?)
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub manifest: Manifest,
    pub results: Vec<CellResult>,
    pub summary: Summary,
    /// Payoff tensor rows when the experiment is a finite game.
    pub tensor: Option<Vec<(Vec<usize>, usize, f64)>>,
}

/// Runs every cell of `config` on `jobs` workers (0 for the default).
pub fn run(config: Config, jobs: usize) -> Result<RunOutput, AppError> {
    let plan = Plan::new(config)?;
    let records = plan.records()?;
    let results = plan.run_all(&records, jobs)?;
    let summary = plan.summarize(&results)?;
    let tensor = plan.tensor(&results);
    let manifest = Manifest {
        tool: format!("mechsim {}", env!("CARGO_PKG_VERSION")),
        experiment: plan.config.experiment,
        config: plan.config.clone(),
        coord_names: plan.coord_names.clone(),
        cells: records,
    };
    Ok(RunOutput { manifest, results, summary, tensor })
}

/// Reruns cell `index` from a manifest alone.
pub fn rerun_cell(manifest: &Manifest, index: usize) -> Result<CellResult, AppError> {
    let issues = manifest.config.validate();
    if !issues.is_empty() {
        return Err(ConfigError { source_name: MANIFEST_FILE.into(), issues }.into());
    }
    let record = manifest.cells.iter().find(|c| c.index == index).ok_or_else(|| {
        mechsim_core::Error::InvalidParameter(format!("manifest has no cell {index}"))
    })?;
    let plan = Plan::new(manifest.config.clone())?;
    Ok(plan.run_cell(record)?)
}

/// Settlement report of one cell as written to `settlement.json`.
pub fn settlement_json(result: &CellResult) -> Result<String, AppError> {
    output::json_string(&result.report)
        .map_err(|source| AppError::Json { path: "settlement.json".into(), source })
}

/// Writes every output file of a run into `dir`.
pub fn write_outputs(dir: &Path, run: &RunOutput) -> Result<(), AppError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let put = |name: &str, bytes: Vec<u8>| {
        let path = dir.join(name);
        output::write_file(&path, &bytes).map_err(io_err(&path))
    };
    let csv_err = |name: &str| {
        let path = dir.join(name);
        move |source| AppError::Io { path, source }
    };
    let results = &run.results;
    put("results.csv", output::results_csv(Vec::new(), &run.manifest.coord_names, results).map_err(csv_err("results.csv"))?)?;
    put("cells.csv", output::cells_csv(Vec::new(), results).map_err(csv_err("cells.csv"))?)?;
    for r in results {
        let path = output::cell_dir(dir, r.record.index).join("settlement.json");
        output::write_file(&path, settlement_json(r)?.as_bytes()).map_err(io_err(&path))?;
    }
    if let Some(rows) = &run.tensor {
        let n = results.first().map(|r| r.report.n_agents()).unwrap_or(0);
        put("tensor.csv", output::tensor_csv(Vec::new(), n, rows).map_err(csv_err("tensor.csv"))?)?;
    }
    if run.manifest.experiment == ExperimentKind::FilterDemo {
        if let Some(r) = results.first() {
            if let Some(set) = &r.sequences {
                put("traces.csv", output::traces_csv(Vec::new(), set).map_err(csv_err("traces.csv"))?)?;
            }
            put("repairs.csv", output::repairs_csv(Vec::new(), &r.repair_log).map_err(csv_err("repairs.csv"))?)?;
        }
    }
    put("summary.json", json_bytes(dir, "summary.json", &run.summary)?)?;
    put(MANIFEST_FILE, json_bytes(dir, MANIFEST_FILE, &run.manifest)?)?;
    Ok(())
}

fn json_bytes<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<Vec<u8>, AppError> {
    output::json_string(value)
        .map(String::into_bytes)
        .map_err(|source| AppError::Json { path: dir.join(name), source })
}
