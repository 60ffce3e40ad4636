//! Command-line surface.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::calibrate::{calibrate, CalibrateArgs};
use crate::check::CheckLine;
use crate::config::{Cell, ExperimentConfig};
use crate::error::{LabError, Result};
use crate::record::{self, RunRecord};
use crate::report::evaluate;
use crate::stages;
use crate::workspace::Workspace;

#[derive(Debug, Parser)]
#[command(
    name = "cdp-lab",
    version,
    about = "Copy detection pattern authentication experiments"
)]
pub struct Cli {
    /// Experiment directory.
    #[arg(long, global = true, default_value = "lab")]
    pub root: PathBuf,
    /// Config file; defaults to <root>/config.json when present.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config field, e.g. --set train.lambda_l1=50.
    #[arg(long = "set", global = true, value_name = "PATH=VALUE")]
    pub set: Vec<String>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CellArgs {
    /// PRINTER/DEVICE; repeatable. Defaults to train_cells or every cell.
    #[arg(long = "cell", value_name = "PRINTER/DEVICE")]
    pub cells: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate templates and the train/test split.
    Gen,
    /// Print originals, capture them on every device and run QC.
    Simulate,
    /// Estimate templates from captured originals and capture the fakes.
    Attack,
    /// Train a pix2pix generator per cell.
    Train(CellArgs),
    /// Generate x_hat for the held-out templates.
    Synth(CellArgs),
    /// Score probes against every reference.
    Score,
    /// AUC table, histograms and ROC plots.
    Evaluate {
        /// Check the acceptance criteria; exit code 3 on failure.
        #[arg(long)]
        check: bool,
    },
    /// Tune the device ladder to a target AUC(pcorr, t) span.
    Calibrate {
        #[arg(long, default_value_t = 0.65)]
        target_min: f64,
        #[arg(long, default_value_t = 1.0)]
        target_max: f64,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.8, 0.9, 1.0, 1.1, 1.2])]
        multipliers: Vec<f64>,
        #[arg(long, default_value_t = 48)]
        templates: usize,
    },
    /// Every stage in order.
    Run {
        /// Skip training and synthesis.
        #[arg(long)]
        no_train: bool,
        #[arg(long)]
        check: bool,
        #[command(flatten)]
        cells: CellArgs,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Simulate => "simulate",
            Command::Attack => "attack",
            Command::Train(_) => "train",
            Command::Synth(_) => "synth",
            Command::Score => "score",
            Command::Evaluate { .. } => "evaluate",
            Command::Calibrate { .. } => "calibrate",
            Command::Run { .. } => "run",
        }
    }
}

pub fn parse_cell(s: &str) -> Result<Cell> {
    match s.split_once('/') {
        Some((p, d)) if !p.is_empty() && !d.is_empty() => Ok(Cell {
            printer: p.to_string(),
            device: d.to_string(),
        }),
        _ => Err(LabError::Usage(format!(
            "cell {s:?} must look like PRINTER/DEVICE"
        ))),
    }
}

/// What a command produced.
#[derive(Debug, Default)]
pub struct Outcome {
    pub summary: BTreeMap<String, Value>,
    pub stage_seconds: BTreeMap<String, f64>,
    pub checks: Vec<CheckLine>,
}

struct Runner<'a> {
    ws: &'a Workspace,
    out: Outcome,
}

impl Runner<'_> {
    fn stage(&mut self, name: &str, f: impl FnOnce() -> Result<Value>) -> Result<()> {
        let start = Instant::now();
        let v = f()?;
        let secs = start.elapsed().as_secs_f64();
        println!("{name}: {v} ({secs:.1}s)");
        self.out.stage_seconds.insert(name.to_string(), secs);
        self.out.summary.insert(name.to_string(), v);
        Ok(())
    }

    fn evaluate(&mut self, cfg: &ExperimentConfig, check: bool) -> Result<()> {
        let ws = self.ws;
        let mut checks = Vec::new();
        self.stage("evaluate", || {
            let ev = evaluate(ws, cfg, check)?;
            checks = ev.checks;
            Ok(ev.summary)
        })?;
        for c in &checks {
            println!("{c}");
        }
        self.out.checks = checks;
        Ok(())
    }
}

fn resolve_config(cli: &Cli, ws: &Workspace) -> Result<ExperimentConfig> {
    let base = cli.config.clone().or_else(|| {
        let p = ws.config();
        p.exists().then_some(p)
    });
    ExperimentConfig::resolve(base.as_deref(), &cli.set)
}

fn dispatch(cli: &Cli, ws: &Workspace, cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut r = Runner {
        ws,
        out: Outcome::default(),
    };
    let cells = |a: &CellArgs| -> Result<Vec<Cell>> {
        let named: Vec<Cell> = a
            .cells
            .iter()
            .map(|s| parse_cell(s))
            .collect::<Result<_>>()?;
        stages::resolve_cells(cfg, &named)
    };
    match &cli.command {
        Command::Gen => r.stage("gen", || stages::gen(ws, cfg))?,
        Command::Simulate => r.stage("simulate", || stages::simulate(ws, cfg))?,
        Command::Attack => r.stage("attack", || stages::attack(ws, cfg))?,
        Command::Train(a) => {
            let cells = cells(a)?;
            r.stage("train", || stages::train_cells(ws, cfg, &cells))?
        }
        Command::Synth(a) => {
            let cells = cells(a)?;
            r.stage("synth", || stages::synth(ws, cfg, &cells))?
        }
        Command::Score => r.stage("score", || stages::score(ws, cfg))?,
        Command::Evaluate { check } => r.evaluate(cfg, *check)?,
        Command::Calibrate {
            target_min,
            target_max,
            multipliers,
            templates,
        } => {
            let args = CalibrateArgs {
                target_min: *target_min,
                target_max: *target_max,
                multipliers: multipliers.clone(),
                n_templates: *templates,
            };
            r.stage("calibrate", || calibrate(ws, cfg, &args))?
        }
        Command::Run {
            no_train,
            check,
            cells: a,
        } => {
            let cells = cells(a)?;
            r.stage("gen", || stages::gen(ws, cfg))?;
            r.stage("simulate", || stages::simulate(ws, cfg))?;
            r.stage("attack", || stages::attack(ws, cfg))?;
            if !no_train {
                r.stage("train", || stages::train_cells(ws, cfg, &cells))?;
                r.stage("synth", || stages::synth(ws, cfg, &cells))?;
            }
            r.stage("score", || stages::score(ws, cfg))?;
            r.evaluate(cfg, *check)?;
        }
    }
    Ok(r.out)
}

/// Runs one command and writes its run record. Failed acceptance checks
/// come back as [`LabError::CheckFailed`] after the record is written.
pub fn execute(cli: &Cli) -> Result<Outcome> {
    let ws = Workspace::new(&cli.root);
    let started = record::now_ms();
    let clock = Instant::now();
    let cfg = resolve_config(cli, &ws);
    let seed = cfg.as_ref().ok().map(|c| c.seed);
    let mut stages = BTreeMap::new();
    let mut summary = Value::Null;
    let result = cfg.and_then(|cfg| {
        let out = dispatch(cli, &ws, &cfg)?;
        stages = out.stage_seconds.clone();
        summary = json!(out.summary);
        let failed: Vec<String> = out
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("criterion {}", c.criterion))
            .collect();
        if failed.is_empty() {
            Ok(out)
        } else {
            Err(LabError::CheckFailed(failed.join(", ")))
        }
    });
    let rec = RunRecord {
        command: cli.command.name().to_string(),
        arguments: std::env::args().collect(),
        config: cli.config.clone(),
        overrides: cli.set.clone(),
        seed,
        threads: rayon::current_num_threads(),
        versions: record::versions(),
        started_unix_ms: started,
        elapsed_seconds: clock.elapsed().as_secs_f64(),
        stages,
        status: if result.is_ok() { "ok" } else { "error" }.to_string(),
        error: result.as_ref().err().map(|e| e.to_string()),
        summary,
    };
    if ws.root().exists() {
        record::write(&ws, &rec)?;
    }
    result
}
