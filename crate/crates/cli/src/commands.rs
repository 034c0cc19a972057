//! The subcommands, as functions from a resolved configuration to a report.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use sfl_core::energy::{average_energy, system_energy, total_energy, EnergyBreakdown};
use sfl_core::optimizer::{solve, Method, OptimizationProblem, OptimizationResult};
use sfl_core::sim::{check_ledger, latency_estimate, simulate_with, write_event, write_summary, LedgerCheck, SimSummary};
use sfl_core::{fit_quadratic, ClientSetup, CutSelection, RsModel, SimConfig, Warning};

use crate::config::{read_samples, RunConfig};
use crate::error::CliError;

/// Relative tolerance for the ledger-vs-closed-form check in `simulate`.
pub const LEDGER_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub alpha: f64,
    pub cut_index: u32,
    pub rs: f64,
    /// Mean per-client energy over the profiles.
    pub energy_total: f64,
    /// Energy of the whole client population.
    pub system_energy: f64,
    pub profiles: Vec<EnergyBreakdown>,
    pub warnings: Vec<Warning>,
}

pub fn eval(cfg: &RunConfig) -> Result<EvalReport, CliError> {
    let alpha = cfg.require_alpha()?;
    let topo = cfg.topology()?;
    let cut = CutSelection::new(alpha, &topo, cfg.topology.cut_mode)?;
    let rs_model = cfg.rs_model()?;
    let rs = rs_model.eval(alpha)?;
    let profiles = cfg.profiles();
    let breakdowns = profiles
        .iter()
        .map(|p| total_energy(alpha, p))
        .collect::<Result<Vec<_>, _>>()?;
    // with profiles, each profile is one client
    let system = if cfg.profiles.is_empty() {
        system_energy(alpha, &profiles[0])?
    } else {
        breakdowns.iter().map(|b| b.total).sum()
    };
    let mut warnings: Vec<Warning> = cut.degeneracy_warning(&topo).into_iter().collect();
    warnings.extend(rs_model.validity_warning(alpha, rs));
    Ok(EvalReport {
        alpha,
        cut_index: cut.cut_index,
        rs,
        energy_total: average_energy(alpha, &profiles)?,
        system_energy: system,
        profiles: breakdowns,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub cut_index: u32,
    #[serde(rename = "E_main_total")]
    pub e_main_total: f64,
    #[serde(rename = "E_fed_total")]
    pub e_fed_total: f64,
    #[serde(rename = "E_total")]
    pub e_total: f64,
    #[serde(rename = "RS")]
    pub rs: f64,
}

/// Energy and reconstruction score over the configured `alpha` range.
/// Points are evaluated in parallel; rows come back in `alpha` order.
pub fn sweep(cfg: &RunConfig) -> Result<Vec<SweepRow>, CliError> {
    let points = cfg.sweep.points()?;
    let topo = cfg.topology()?;
    let rs_model = cfg.rs_model()?;
    let profiles = cfg.profiles();
    let n = profiles.len() as f64;
    let mode = cfg.topology.cut_mode;
    let rows = points
        .par_iter()
        .map(|&alpha| -> Result<SweepRow, sfl_core::Error> {
            let (mut main, mut fed, mut total) = (0.0, 0.0, 0.0);
            for p in &profiles {
                let e = total_energy(alpha, p)?;
                main += e.e_main_total;
                fed += e.e_fed_total;
                total += e.total;
            }
            Ok(SweepRow {
                alpha,
                cut_index: sfl_core::map_alpha_to_layer(alpha, &topo, mode)?,
                e_main_total: main / n,
                e_fed_total: fed / n,
                e_total: total / n,
                rs: rs_model.eval(alpha)?,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizeReport {
    pub e_req: f64,
    pub rs_model: RsModel,
    #[serde(flatten)]
    pub result: OptimizationResult,
}

/// One-line form of the optimizer result for CSV output.
#[derive(Debug, Clone, Serialize)]
pub struct OptimizeRow {
    pub alpha_star: f64,
    pub cut_index: Option<u32>,
    pub rs_at_star: f64,
    pub energy_at_star: f64,
    pub e_req: f64,
    pub binding: bool,
    pub feasible_alpha_max: f64,
    pub method: Method,
}

impl OptimizeReport {
    pub fn row(&self) -> OptimizeRow {
        let r = &self.result;
        OptimizeRow {
            alpha_star: r.alpha_star,
            cut_index: r.cut_index,
            rs_at_star: r.rs_at_star,
            energy_at_star: r.energy_at_star,
            e_req: self.e_req,
            binding: r.binding,
            feasible_alpha_max: r.feasible_alpha_max,
            method: r.method,
        }
    }
}

pub fn optimize(cfg: &RunConfig) -> Result<OptimizeReport, CliError> {
    let e_req = cfg
        .e_req
        .ok_or_else(|| CliError::Config("optimize needs an energy budget (--e-req J or `e_req` in the config)".into()))?;
    let rs_model = cfg.rs_model()?;
    let problem =
        OptimizationProblem::heterogeneous(rs_model, cfg.profiles(), e_req).with_grid_step(cfg.grid_step);
    let result = solve(&problem, &cfg.topology()?, cfg.topology.cut_mode)?;
    Ok(OptimizeReport {
        e_req,
        rs_model,
        result,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub model: RsModel,
    pub samples: usize,
    pub convex: bool,
}

pub fn fit(samples_path: &Path) -> Result<FitReport, CliError> {
    let samples = read_samples(samples_path)?;
    let model = fit_quadratic(&samples)?;
    Ok(FitReport {
        model,
        samples: samples.len(),
        convex: model.is_convex(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateReport {
    pub summary: SimSummary,
    pub ledger: LedgerCheck,
    /// Closed-form latency, to compare with the summary's ledger-derived one.
    pub latency_closed_form: f64,
}

pub fn sim_config(cfg: &RunConfig) -> Result<SimConfig, CliError> {
    let alpha = cfg.require_alpha()?;
    let clients = if cfg.profiles.is_empty() {
        ClientSetup::Homogeneous(cfg.params.clone())
    } else {
        ClientSetup::Heterogeneous(cfg.profiles.clone())
    };
    Ok(SimConfig {
        clients,
        alpha,
        topo: cfg.topology()?,
        cut_mode: cfg.topology.cut_mode,
        record_trace: cfg.simulate.record_trace,
        server_full_train_time: cfg.simulate.server_full_train_time,
    })
}

/// Runs the simulator. With `trace` set, every event is streamed to it as a
/// JSON line, followed by the summary record.
pub fn simulate(cfg: &RunConfig, trace: Option<&mut dyn Write>) -> Result<SimulateReport, CliError> {
    let sim = sim_config(cfg)?;
    let summary = match trace {
        Some(out) => {
            let mut io_error = None;
            let summary = simulate_with(&sim, |ev| {
                if io_error.is_none() {
                    io_error = write_event(ev, &mut *out).err();
                }
            })?;
            if let Some(e) = io_error {
                return Err(e.into());
            }
            write_summary(&summary, &mut *out)?;
            out.flush()?;
            summary
        }
        None => simulate_with(&sim, |_| {})?,
    };
    let ledger = check_ledger(&sim, &summary, LEDGER_RTOL)?;
    Ok(SimulateReport {
        latency_closed_form: latency_estimate(&sim)?,
        summary,
        ledger,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{parse_assignment, resolve};

    fn cfg(pairs: &[&str]) -> RunConfig {
        let overrides: Vec<_> = pairs.iter().map(|p| parse_assignment(p).unwrap()).collect();
        resolve(None, &overrides).unwrap().config
    }

    #[test]
    fn eval_reference_points() {
        let r = eval(&cfg(&["alpha=0.0"])).unwrap();
        assert!((r.energy_total - 4718.592).abs() < 1e-6);
        assert_eq!(r.rs, 0.7675);
        assert_eq!(r.cut_index, 0);
        assert!(!r.warnings.is_empty());

        let r = eval(&cfg(&["alpha=1.0"])).unwrap();
        assert!((r.energy_total - 6278.343424).abs() < 1e-6);
        assert!((r.rs - 0.4268).abs() < 1e-12);

        let r = eval(&cfg(&["alpha=0.4201"])).unwrap();
        assert!((r.rs - 0.5368).abs() < 1e-4);
        assert_eq!(r.cut_index, 4);
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn system_energy_sums_profiles() {
        let mut c = cfg(&["alpha=0.5"]);
        let homogeneous = eval(&c).unwrap();
        assert!((homogeneous.system_energy - 5.0 * 5498.467712).abs() < 1e-6);
        let mut a = c.params.clone();
        a.clients = 2;
        let mut b = a.clone();
        b.compute_power = 8.0;
        c.profiles = vec![a, b];
        let r = eval(&c).unwrap();
        assert_eq!(r.system_energy, r.profiles[0].total + r.profiles[1].total);
        assert_eq!(r.energy_total, r.system_energy / 2.0);
    }

    #[test]
    fn eval_requires_alpha() {
        assert!(matches!(eval(&cfg(&[])), Err(CliError::Config(_))));
    }

    #[test]
    fn sweep_reference_rows() {
        let rows = sweep(&cfg(&[])).unwrap();
        assert_eq!(rows.len(), 11);
        let half = &rows[5];
        assert_eq!(half.alpha, 0.5);
        assert!((half.e_fed_total - 251.875712).abs() < 1e-6);
        for w in rows.windows(2) {
            assert!(w[1].e_total > w[0].e_total);
        }
        for w in rows[..10].windows(2) {
            assert!(w[1].rs < w[0].rs);
        }
    }

    #[test]
    fn optimize_needs_budget() {
        assert!(matches!(optimize(&cfg(&[])), Err(CliError::Config(_))));
        let err = optimize(&cfg(&["e_req=100.0"])).unwrap_err();
        assert_eq!(err.exit_code(), crate::error::exit::INFEASIBLE);
    }

    #[test]
    fn simulate_small_run_passes_ledger() {
        let c = cfg(&["alpha=0.5", "params.global_epochs=2", "params.local_iterations=3"]);
        let mut buf = Vec::new();
        let r = simulate(&c, Some(&mut buf)).unwrap();
        assert!(r.ledger.pass);
        let lines = buf.iter().filter(|&&b| b == b'\n').count() as u64;
        assert_eq!(lines, r.summary.total_events + 1);
    }
}
