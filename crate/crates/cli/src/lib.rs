//! The `sfl` command-line tool.
//!
//! `sfl eval`, `sweep`, `optimize`, `fit` and `simulate` run the analyses in
//! [`sfl_core`]; `sfl config` prints the effective configuration. Values come
//! from built-in defaults, an optional TOML file (`--config`) and flags, in
//! increasing precedence.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sfl_core::{CutMode, Warning};
use toml::Value;

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use config::{parse_assignment, resolve, Format, ModelFile, RunConfig};
use error::CliError;
use output::{create, sig6, write_json, write_json_object, write_rows};

#[derive(Debug, Parser)]
#[command(name = "sfl", version, about = "Cut-layer energy and privacy analysis for split federated learning")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Set any configuration key, e.g. `--set params.clients=10`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,

    /// Fraction of the model held by each client.
    #[arg(long, global = true, value_name = "X")]
    pub alpha: Option<f64>,

    /// Per-client energy budget in joules.
    #[arg(long = "e-req", global = true, value_name = "J")]
    pub e_req: Option<f64>,

    /// Write the data file here instead of standard output.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    /// Step of the grid search in `optimize`.
    #[arg(long = "grid-step", global = true, value_name = "X")]
    pub grid_step: Option<f64>,

    /// Record the event trace in `simulate` (written to --out as JSON lines).
    #[arg(long, global = true)]
    pub trace: bool,

    /// Use a built-in reconstruction-score model.
    #[arg(long, global = true, value_name = "NAME", conflicts_with_all = ["rs_samples", "rs_model"])]
    pub rs: Option<String>,

    /// Fit the reconstruction-score model from a samples file.
    #[arg(long = "rs-samples", global = true, value_name = "PATH", conflicts_with = "rs_model")]
    pub rs_samples: Option<PathBuf>,

    /// Read the reconstruction-score model written by `sfl fit`.
    #[arg(long = "rs-model", global = true, value_name = "PATH")]
    pub rs_model: Option<PathBuf>,

    #[arg(long = "cut-mode", global = true, value_name = "MODE", value_parser = parse_cut_mode)]
    pub cut_mode: Option<CutMode>,
}

fn parse_cut_mode(s: &str) -> Result<CutMode, String> {
    match s {
        "per-layer" => Ok(CutMode::PerLayer),
        "per-block" => Ok(CutMode::PerBlock),
        _ => Err(format!("expected per-layer or per-block, got {s:?}")),
    }
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Energy breakdown, reconstruction score and cut layer at one alpha.
    Eval,
    /// Energy and reconstruction score over a range of alpha.
    Sweep(SweepArgs),
    /// Lowest reconstruction score within the energy budget.
    Optimize,
    /// Fit the quadratic reconstruction-score model to (alpha, ssim) samples.
    Fit {
        /// Samples file: two columns, alpha and ssim.
        samples: PathBuf,
    },
    /// Replay the training protocol event by event and check its energy ledger.
    Simulate,
    /// Print the effective configuration with the source of each value.
    Config,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SweepArgs {
    #[arg(long, value_name = "X")]
    pub start: Option<f64>,
    #[arg(long, value_name = "X")]
    pub end: Option<f64>,
    #[arg(long, value_name = "X")]
    pub step: Option<f64>,
}

fn path_value(p: &Path) -> Value {
    Value::String(p.to_string_lossy().into_owned())
}

/// Flags as configuration overrides, in the order they apply.
pub fn overrides(cli: &Cli) -> Result<Vec<(String, Value)>, CliError> {
    let g = &cli.global;
    let mut out = g.set.iter().map(|s| parse_assignment(s)).collect::<Result<Vec<_>, _>>()?;
    let mut push = |key: &str, value: Value| out.push((key.to_string(), value));
    if let Some(x) = g.alpha {
        push("alpha", Value::Float(x));
    }
    if let Some(x) = g.e_req {
        push("e_req", Value::Float(x));
    }
    if let Some(x) = g.grid_step {
        push("grid_step", Value::Float(x));
    }
    if let Some(p) = &g.out {
        push("output.path", path_value(p));
    }
    if let Some(f) = g.format {
        let name = match f {
            Format::Csv => "csv",
            Format::Json => "json",
        };
        push("output.format", Value::String(name.into()));
    }
    if g.trace {
        push("simulate.record_trace", Value::Boolean(true));
    }
    if let Some(mode) = g.cut_mode {
        let name = match mode {
            CutMode::PerLayer => "per-layer",
            CutMode::PerBlock => "per-block",
        };
        push("topology.cut_mode", Value::String(name.into()));
    }
    let mut rs = toml::Table::new();
    if let Some(name) = &g.rs {
        rs.insert("builtin".into(), Value::String(name.clone()));
    }
    if let Some(p) = &g.rs_samples {
        rs.insert("samples".into(), path_value(p));
    }
    if let Some(p) = &g.rs_model {
        rs.insert("model".into(), path_value(p));
    }
    if !rs.is_empty() {
        push("rs", Value::Table(rs));
    }
    if let Command::Sweep(s) = &cli.command {
        for (key, v) in [("alpha_start", s.start), ("alpha_end", s.end), ("alpha_step", s.step)] {
            if let Some(x) = v {
                push(&format!("sweep.{key}"), Value::Float(x));
            }
        }
    }
    Ok(out)
}

fn report_warnings(warnings: &[Warning], err: &mut dyn Write) -> Result<(), CliError> {
    for w in warnings {
        writeln!(err, "warning: {w}")?;
    }
    Ok(())
}

/// Data goes to `output.path` when set, otherwise to `out`.
fn with_data_sink(
    cfg: &RunConfig,
    out: &mut dyn Write,
    f: impl FnOnce(&mut dyn Write) -> Result<(), CliError>,
) -> Result<(), CliError> {
    match &cfg.output.path {
        Some(path) => {
            let mut file = create(path)?;
            f(&mut file)?;
            file.flush().map_err(|e| CliError::io(path, e))
        }
        None => f(out),
    }
}

/// Runs one invocation. Reports and data go to `out`, warnings to `err`.
pub fn run(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let eff = resolve(cli.global.config.as_deref(), &overrides(cli)?)?;
    let cfg = &eff.config;
    let format = cfg.output.format;
    match &cli.command {
        Command::Config => {
            out.write_all(cfg.to_toml_with_provenance(&eff.provenance)?.as_bytes())?;
        }
        Command::Eval => {
            let r = commands::eval(cfg)?;
            report_warnings(&r.warnings, err)?;
            match (format, &cfg.output.path) {
                (Format::Json, _) => with_data_sink(cfg, out, |w| write_json(w, "eval", &r))?,
                (Format::Csv, Some(_)) => {
                    let rows: Vec<_> = r.profiles.iter().map(|b| EvalRow::new(&r, b)).collect();
                    with_data_sink(cfg, out, |w| write_rows(w, Format::Csv, "eval", &rows))?;
                    print_eval(&r, out)?;
                }
                (Format::Csv, None) => print_eval(&r, out)?,
            }
        }
        Command::Sweep(_) => {
            let rows = commands::sweep(cfg)?;
            with_data_sink(cfg, out, |w| write_rows(w, format, "sweep", &rows))?;
        }
        Command::Optimize => {
            let r = match commands::optimize(cfg) {
                Err(CliError::Core(sfl_core::Error::Infeasible { e_req, min_energy })) => {
                    writeln!(
                        out,
                        "infeasible: budget {} J is below the minimum achievable energy {} J",
                        sig6(e_req),
                        sig6(min_energy)
                    )?;
                    return Err(sfl_core::Error::Infeasible { e_req, min_energy }.into());
                }
                other => other?,
            };
            report_warnings(&r.result.warnings, err)?;
            match format {
                Format::Json => with_data_sink(cfg, out, |w| write_json(w, "optimize", &r))?,
                Format::Csv => with_data_sink(cfg, out, |w| write_rows(w, Format::Csv, "optimize", &[r.row()]))?,
            }
            if cfg.output.path.is_some() {
                print_optimize(&r, out)?;
            }
        }
        Command::Fit { samples } => {
            let r = commands::fit(samples)?;
            let file = ModelFile::new(&r.model, r.samples);
            if !r.convex {
                writeln!(err, "warning: fitted model is not convex (a2 = {})", r.model.a2)?;
            }
            match format {
                // the model file carries its own schema_version
                Format::Json => with_data_sink(cfg, out, |w| write_json_object(w, &file))?,
                Format::Csv => with_data_sink(cfg, out, |w| write_rows(w, Format::Csv, "fit", &[&file]))?,
            }
            if cfg.output.path.is_some() {
                let signed = |x: f64| if x < 0.0 { format!("- {}", sig6(-x)) } else { format!("+ {}", sig6(x)) };
                writeln!(
                    out,
                    "RS(alpha) = {} alpha^2 {} alpha {}  (rmse {}, {} samples)",
                    sig6(r.model.a2),
                    signed(r.model.a1),
                    signed(r.model.a0),
                    sig6(r.model.fit_rmse),
                    r.samples
                )?;
            }
        }
        Command::Simulate => {
            let r = if cfg.simulate.record_trace {
                let path = cfg
                    .output
                    .path
                    .as_ref()
                    .ok_or_else(|| CliError::Config("--trace needs --out PATH for the trace file".into()))?;
                let mut file = create(path)?;
                let r = commands::simulate(cfg, Some(&mut file))?;
                file.flush().map_err(|e| CliError::io(path, e))?;
                r
            } else {
                commands::simulate(cfg, None)?
            };
            report_warnings(&r.summary.warnings, err)?;
            match (format, cfg.simulate.record_trace) {
                (Format::Json, false) => with_data_sink(cfg, out, |w| write_json(w, "simulate", &r))?,
                _ => print_simulate(&r, out)?,
            }
            if !r.ledger.pass {
                return Err(CliError::LedgerMismatch {
                    max_rel_error: r.ledger.max_rel_error,
                    rtol: r.ledger.rtol,
                });
            }
        }
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct EvalRow {
    alpha: f64,
    cut_index: u32,
    #[serde(rename = "RS")]
    rs: f64,
    e_main_per_item: f64,
    e_fed_per_epoch: f64,
    #[serde(rename = "E_main_total")]
    e_main_total: f64,
    #[serde(rename = "E_fed_total")]
    e_fed_total: f64,
    #[serde(rename = "E_total")]
    e_total: f64,
}

impl EvalRow {
    fn new(r: &commands::EvalReport, b: &sfl_core::EnergyBreakdown) -> Self {
        Self {
            alpha: r.alpha,
            cut_index: r.cut_index,
            rs: r.rs,
            e_main_per_item: b.e_main_per_item,
            e_fed_per_epoch: b.e_fed_per_epoch,
            e_main_total: b.e_main_total,
            e_fed_total: b.e_fed_total,
            e_total: b.total,
        }
    }
}

fn print_eval(r: &commands::EvalReport, out: &mut dyn Write) -> Result<(), CliError> {
    writeln!(out, "alpha            {}", sig6(r.alpha))?;
    writeln!(out, "cut_index        {}", r.cut_index)?;
    writeln!(out, "RS               {}", sig6(r.rs))?;
    for (i, b) in r.profiles.iter().enumerate() {
        if r.profiles.len() > 1 {
            writeln!(out, "profile {i}")?;
        }
        let t = &b.terms;
        writeln!(out, "  E_main/item    {} J", sig6(b.e_main_per_item))?;
        writeln!(out, "  E_fed/epoch    {} J", sig6(b.e_fed_per_epoch))?;
        writeln!(out, "  client_compute {} J", sig6(t.client_compute))?;
        writeln!(out, "  smashed_tx     {} J", sig6(t.smashed_tx))?;
        writeln!(out, "  gradient_rx    {} J", sig6(t.gradient_rx))?;
        writeln!(out, "  model_tx       {} J", sig6(t.model_tx))?;
        writeln!(out, "  model_rx       {} J", sig6(t.model_rx))?;
        writeln!(out, "  E_main_total   {} J", sig6(b.e_main_total))?;
        writeln!(out, "  E_fed_total    {} J", sig6(b.e_fed_total))?;
    }
    writeln!(out, "E_total          {} J (per client)", sig6(r.energy_total))?;
    writeln!(out, "E_system         {} J", sig6(r.system_energy))?;
    Ok(())
}

fn print_optimize(r: &commands::OptimizeReport, out: &mut dyn Write) -> Result<(), CliError> {
    let x = &r.result;
    writeln!(out, "alpha*           {}", sig6(x.alpha_star))?;
    match x.cut_index {
        Some(c) => writeln!(out, "cut_index        {c}")?,
        None => writeln!(out, "cut_index        -")?,
    }
    writeln!(out, "RS(alpha*)       {}", sig6(x.rs_at_star))?;
    writeln!(out, "E(alpha*)        {} J (budget {} J)", sig6(x.energy_at_star), sig6(r.e_req))?;
    writeln!(out, "binding          {}", x.binding)?;
    writeln!(out, "feasible alpha   [0, {}]", sig6(x.feasible_alpha_max))?;
    writeln!(out, "method           {}", method_name(x.method))?;
    Ok(())
}

fn method_name(m: sfl_core::Method) -> &'static str {
    match m {
        sfl_core::Method::ClosedForm => "closed-form",
        sfl_core::Method::Grid => "grid",
    }
}

fn print_simulate(r: &commands::SimulateReport, out: &mut dyn Write) -> Result<(), CliError> {
    let s = &r.summary;
    writeln!(out, "alpha            {} (cut_index {})", sig6(s.alpha), s.cut_index)?;
    writeln!(out, "clients          {}", s.clients)?;
    writeln!(out, "rounds           {}", s.total_rounds)?;
    writeln!(out, "events           {}", s.total_events)?;
    for (i, e) in s.per_client_energy.iter().enumerate() {
        writeln!(out, "client {i:<9} {} J", sig6(*e))?;
    }
    writeln!(out, "bits up          {}", sig6(s.total_bits_up))?;
    writeln!(out, "bits down        {}", sig6(s.total_bits_down))?;
    writeln!(out, "latency          {} s", sig6(s.wall_latency_estimate))?;
    let verdict = if r.ledger.pass { "PASS" } else { "FAIL" };
    writeln!(
        out,
        "ledger vs closed form: {verdict} (max relative error {:.3e}, tolerance {:.0e})",
        r.ledger.max_rel_error, r.ledger.rtol
    )?;
    Ok(())
}
