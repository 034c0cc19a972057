//! Round-based simulation of the split federated learning workflow.
//!
//! Each global epoch runs, for every local iteration and every client, the
//! per-item exchange with the main server:
//!
//! 1. client forward pass on the client-side model,
//! 2. smashed-data upload,
//! 3. server forward/backward (and server-side averaging),
//! 4. cut-layer gradient download,
//! 5. client backward pass,
//!
//! followed by the fed-server round: every client uploads its client-side
//! model, the fed server averages them, and every client downloads the new
//! global client-side model.
//!
//! Messages carry sizes only. Each event charges the energy it costs the
//! client; server-side events charge nothing. Summing the ledger re-derives
//! the closed-form energy model independently of [`crate::energy`].

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::energy::{total_energy, SystemParams};
use crate::error::{check_fraction, Error, Result};
use crate::topology::{CutMode, CutSelection, ModelTopology};
use crate::Warning;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    ClientForward,
    SmashedUpload,
    ServerForwardBackward,
    GradientDownload,
    ClientBackward,
    LocalModelUpload,
    FedAggregate,
    GlobalModelDownload,
}

impl Step {
    const PER_ITEM: [Step; 5] = [
        Step::ClientForward,
        Step::SmashedUpload,
        Step::ServerForwardBackward,
        Step::GradientDownload,
        Step::ClientBackward,
    ];

    pub fn is_server_side(self) -> bool {
        matches!(self, Step::ServerForwardBackward | Step::FedAggregate)
    }

    pub fn is_uplink(self) -> bool {
        matches!(self, Step::SmashedUpload | Step::LocalModelUpload)
    }

    pub fn is_downlink(self) -> bool {
        matches!(self, Step::GradientDownload | Step::GlobalModelDownload)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub epoch: u64,
    /// Local iteration, for per-item events.
    pub iteration: Option<u64>,
    /// Item within the minibatch, for per-item events.
    pub item: Option<u64>,
    /// `None` for the fed-server aggregation, which involves no single client.
    pub client: Option<usize>,
    pub step: Step,
    /// Joules charged to the client.
    pub energy_charged: f64,
    pub bits_moved: f64,
    /// Seconds.
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientSetup {
    /// `params.clients` identical clients.
    Homogeneous(SystemParams),
    /// One profile per client. All profiles must agree on `clients` (equal to
    /// the list length, since they share the links) and on `global_epochs`.
    Heterogeneous(Vec<SystemParams>),
}

impl ClientSetup {
    pub fn client_count(&self) -> usize {
        match self {
            ClientSetup::Homogeneous(p) => p.clients as usize,
            ClientSetup::Heterogeneous(v) => v.len(),
        }
    }

    pub fn params_of(&self, client: usize) -> &SystemParams {
        match self {
            ClientSetup::Homogeneous(p) => p,
            ClientSetup::Heterogeneous(v) => &v[client],
        }
    }

    /// Distinct profiles, for energy averaging.
    pub fn profiles(&self) -> Vec<SystemParams> {
        match self {
            ClientSetup::Homogeneous(p) => vec![p.clone()],
            ClientSetup::Heterogeneous(v) => v.clone(),
        }
    }

    fn global_epochs(&self) -> u64 {
        self.params_of(0).global_epochs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub clients: ClientSetup,
    pub alpha: f64,
    pub topo: ModelTopology,
    pub cut_mode: CutMode,
    pub record_trace: bool,
    /// Time for the main server to train the full model on one item; the
    /// server-side share takes `(1 - alpha)` of it. Defaults to the client's
    /// `full_train_time`.
    pub server_full_train_time: Option<f64>,
}

impl SimConfig {
    pub fn new(params: SystemParams, alpha: f64, topo: ModelTopology) -> Self {
        Self {
            clients: ClientSetup::Homogeneous(params),
            alpha,
            topo,
            cut_mode: CutMode::PerLayer,
            record_trace: false,
            server_full_train_time: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_fraction("alpha", self.alpha)?;
        self.topo.validate()?;
        let n = self.clients.client_count();
        if n == 0 {
            return Err(Error::EmptyProfiles);
        }
        let epochs = self.clients.global_epochs();
        for c in 0..n {
            let p = self.clients.params_of(c);
            p.validate()?;
            if p.total_params != self.topo.total_params {
                return Err(Error::Config(format!(
                    "client {c}: total_params {} differs from the topology's {}",
                    p.total_params, self.topo.total_params
                )));
            }
            if let ClientSetup::Heterogeneous(_) = self.clients {
                if p.clients as usize != n {
                    return Err(Error::Config(format!(
                        "client {c}: profile declares {} clients but {n} profiles were given",
                        p.clients
                    )));
                }
                if p.global_epochs != epochs {
                    return Err(Error::Config(format!(
                        "client {c}: global_epochs {} differs from client 0's {epochs}",
                        p.global_epochs
                    )));
                }
            }
        }
        if let Some(t) = self.server_full_train_time {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::Config(format!("server_full_train_time must be non-negative, got {t}")));
            }
        }
        Ok(())
    }

    fn server_time(&self, p: &SystemParams) -> f64 {
        self.server_full_train_time.unwrap_or(p.full_train_time)
    }
}

/// Where the schedule currently stands within an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Train {
        iteration: u64,
        client: usize,
        item: u64,
        step: usize,
    },
    Upload {
        client: usize,
    },
    Aggregate,
    Broadcast {
        client: usize,
    },
    Done,
}

/// Lazily generated event sequence of one simulation run.
pub struct Schedule<'a> {
    cfg: &'a SimConfig,
    epochs: u64,
    max_iterations: u64,
    epoch: u64,
    phase: Phase,
}

impl<'a> Schedule<'a> {
    pub fn new(cfg: &'a SimConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.clients.client_count();
        let max_iterations = (0..n).map(|c| cfg.clients.params_of(c).local_iterations).max().unwrap_or(0);
        let mut schedule = Self {
            cfg,
            epochs: cfg.clients.global_epochs(),
            max_iterations,
            epoch: 0,
            phase: Phase::Done,
        };
        schedule.phase = schedule.first_training_slot(0, 0).unwrap_or(Phase::Upload { client: 0 });
        Ok(schedule)
    }

    fn clients(&self) -> usize {
        self.cfg.clients.client_count()
    }

    /// First (iteration, client) at or after the given one that has work;
    /// clients with fewer local iterations sit out the later ones.
    fn first_training_slot(&self, mut iteration: u64, mut client: usize) -> Option<Phase> {
        while iteration < self.max_iterations {
            while client < self.clients() {
                if iteration < self.cfg.clients.params_of(client).local_iterations {
                    return Some(Phase::Train {
                        iteration,
                        client,
                        item: 0,
                        step: 0,
                    });
                }
                client += 1;
            }
            iteration += 1;
            client = 0;
        }
        None
    }

    fn advance(&mut self) {
        let n = self.clients();
        self.phase = match self.phase {
            Phase::Train {
                iteration,
                client,
                item,
                step,
            } => {
                let minibatch = self.cfg.clients.params_of(client).minibatch;
                if step + 1 < Step::PER_ITEM.len() {
                    Phase::Train {
                        iteration,
                        client,
                        item,
                        step: step + 1,
                    }
                } else if item + 1 < minibatch {
                    Phase::Train {
                        iteration,
                        client,
                        item: item + 1,
                        step: 0,
                    }
                } else {
                    self.first_training_slot(iteration, client + 1)
                        .unwrap_or(Phase::Upload { client: 0 })
                }
            }
            Phase::Upload { client } if client + 1 < n => Phase::Upload { client: client + 1 },
            Phase::Upload { .. } => Phase::Aggregate,
            Phase::Aggregate => Phase::Broadcast { client: 0 },
            Phase::Broadcast { client } if client + 1 < n => Phase::Broadcast { client: client + 1 },
            Phase::Broadcast { .. } => {
                self.epoch += 1;
                if self.epoch < self.epochs {
                    self.first_training_slot(0, 0).unwrap_or(Phase::Upload { client: 0 })
                } else {
                    Phase::Done
                }
            }
            Phase::Done => Phase::Done,
        };
    }

    fn event(&self) -> Option<SimEvent> {
        let alpha = self.cfg.alpha;
        let epoch = self.epoch;
        let ev = match self.phase {
            Phase::Done => return None,
            Phase::Train {
                iteration,
                client,
                item,
                step,
            } => {
                let p = self.cfg.clients.params_of(client);
                let step = Step::PER_ITEM[step];
                let compute = p.compute_energy_per_item(alpha);
                let compute_time = alpha * p.full_train_time;
                let (energy_charged, bits_moved, duration) = match step {
                    Step::ClientForward => (compute / 2.0, 0.0, compute_time / 2.0),
                    Step::ClientBackward => (compute - compute / 2.0, 0.0, compute_time - compute_time / 2.0),
                    Step::SmashedUpload => (p.smashed_upload_energy(), p.smashed_bits, p.smashed_upload_time()),
                    Step::GradientDownload => (
                        p.gradient_download_energy(),
                        p.gradient_bits,
                        p.gradient_download_time(),
                    ),
                    _ => (0.0, 0.0, (1.0 - alpha) * self.cfg.server_time(p)),
                };
                SimEvent {
                    epoch,
                    iteration: Some(iteration),
                    item: Some(item),
                    client: Some(client),
                    step,
                    energy_charged,
                    bits_moved,
                    duration,
                }
            }
            Phase::Upload { client } => {
                let p = self.cfg.clients.params_of(client);
                SimEvent {
                    epoch,
                    iteration: None,
                    item: None,
                    client: Some(client),
                    step: Step::LocalModelUpload,
                    energy_charged: p.model_upload_energy(alpha),
                    bits_moved: p.client_model_bits(alpha),
                    duration: p.model_upload_time(alpha),
                }
            }
            Phase::Aggregate => SimEvent {
                epoch,
                iteration: None,
                item: None,
                client: None,
                step: Step::FedAggregate,
                energy_charged: 0.0,
                bits_moved: 0.0,
                duration: 0.0,
            },
            Phase::Broadcast { client } => {
                let p = self.cfg.clients.params_of(client);
                SimEvent {
                    epoch,
                    iteration: None,
                    item: None,
                    client: Some(client),
                    step: Step::GlobalModelDownload,
                    energy_charged: p.model_download_energy(alpha),
                    bits_moved: p.client_model_bits(alpha),
                    duration: p.model_download_time(alpha),
                }
            }
        };
        Some(ev)
    }
}

impl Iterator for Schedule<'_> {
    type Item = SimEvent;

    fn next(&mut self) -> Option<SimEvent> {
        let ev = self.event()?;
        self.advance();
        Some(ev)
    }
}

/// Compensated (Neumaier) running sum.
#[derive(Debug, Clone, Copy, Default)]
struct Accumulator {
    sum: f64,
    compensation: f64,
}

impl Accumulator {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub alpha: f64,
    pub cut_index: u32,
    pub clients: usize,
    pub total_rounds: u64,
    pub total_events: u64,
    /// Joules charged to each client over the run.
    pub per_client_energy: Vec<f64>,
    pub mean_client_energy: f64,
    pub total_bits_up: f64,
    pub total_bits_down: f64,
    /// Synchronous-round latency: per epoch, the slowest client's summed
    /// event durations.
    pub wall_latency_estimate: f64,
    pub warnings: Vec<Warning>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    /// Empty unless `record_trace` was set.
    pub events: Vec<SimEvent>,
    pub summary: SimSummary,
}

/// Runs the schedule, handing every event to `sink` as it is charged.
pub fn simulate_with<F: FnMut(&SimEvent)>(cfg: &SimConfig, mut sink: F) -> Result<SimSummary> {
    let schedule = Schedule::new(cfg)?;
    let cut = CutSelection::new(cfg.alpha, &cfg.topo, cfg.cut_mode)?;
    let n = cfg.clients.client_count();

    let mut energy = vec![Accumulator::default(); n];
    let mut epoch_time = vec![Accumulator::default(); n];
    let mut shared_epoch_time = Accumulator::default();
    let mut latency = Accumulator::default();
    let mut bits_up = Accumulator::default();
    let mut bits_down = Accumulator::default();
    let mut events = 0u64;
    let mut current_epoch = 0u64;

    let mut close_epoch = |epoch_time: &mut [Accumulator], shared: &mut Accumulator| {
        let slowest = epoch_time.iter().map(Accumulator::value).fold(0.0, f64::max);
        latency.add(slowest + shared.value());
        epoch_time.iter_mut().for_each(|a| *a = Accumulator::default());
        *shared = Accumulator::default();
    };

    for ev in schedule {
        if ev.epoch != current_epoch {
            close_epoch(&mut epoch_time, &mut shared_epoch_time);
            current_epoch = ev.epoch;
        }
        match ev.client {
            Some(c) => {
                energy[c].add(ev.energy_charged);
                epoch_time[c].add(ev.duration);
            }
            None => shared_epoch_time.add(ev.duration),
        }
        if ev.step.is_uplink() {
            bits_up.add(ev.bits_moved);
        } else if ev.step.is_downlink() {
            bits_down.add(ev.bits_moved);
        }
        events += 1;
        sink(&ev);
    }
    close_epoch(&mut epoch_time, &mut shared_epoch_time);

    let per_client_energy: Vec<f64> = energy.iter().map(Accumulator::value).collect();
    let mean_client_energy = per_client_energy.iter().sum::<f64>() / n as f64;
    Ok(SimSummary {
        alpha: cfg.alpha,
        cut_index: cut.cut_index,
        clients: n,
        total_rounds: cfg.clients.global_epochs(),
        total_events: events,
        per_client_energy,
        mean_client_energy,
        total_bits_up: bits_up.value(),
        total_bits_down: bits_down.value(),
        wall_latency_estimate: latency.value(),
        warnings: cut.degeneracy_warning(&cfg.topo).into_iter().collect(),
    })
}

pub fn run_simulation(cfg: &SimConfig) -> Result<SimTrace> {
    let mut events = Vec::new();
    let summary = if cfg.record_trace {
        simulate_with(cfg, |ev| events.push(ev.clone()))?
    } else {
        simulate_with(cfg, |_| {})?
    };
    Ok(SimTrace { events, summary })
}

/// Event count implied by the schedule, without running it.
pub fn expected_event_count(cfg: &SimConfig) -> Result<u64> {
    cfg.validate()?;
    let n = cfg.clients.client_count();
    let per_epoch: u64 = (0..n)
        .map(|c| {
            let p = cfg.clients.params_of(c);
            p.local_iterations * p.minibatch * Step::PER_ITEM.len() as u64 + 2
        })
        .sum::<u64>()
        + 1;
    Ok(cfg.clients.global_epochs() * per_epoch)
}

/// Closed-form synchronous-round latency: per epoch, the slowest client's
/// `l_e * D_b * (alpha T + q K / R2_U + q' K / R2_D + (1 - alpha) T_server)`
/// plus its model upload and download times.
pub fn latency_estimate(cfg: &SimConfig) -> Result<f64> {
    cfg.validate()?;
    let alpha = cfg.alpha;
    let per_epoch = (0..cfg.clients.client_count())
        .map(|c| {
            let p = cfg.clients.params_of(c);
            let per_item = alpha * p.full_train_time
                + p.smashed_upload_time()
                + p.gradient_download_time()
                + (1.0 - alpha) * cfg.server_time(p);
            p.items_per_epoch() * per_item + p.model_upload_time(alpha) + p.model_download_time(alpha)
        })
        .fold(0.0, f64::max);
    Ok(cfg.clients.global_epochs() as f64 * per_epoch)
}

/// Ledger energy of each client against the closed-form model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerCheck {
    pub ledger: Vec<f64>,
    pub closed_form: Vec<f64>,
    pub max_rel_error: f64,
    pub rtol: f64,
    pub pass: bool,
}

pub fn check_ledger(cfg: &SimConfig, summary: &SimSummary, rtol: f64) -> Result<LedgerCheck> {
    let closed_form = (0..cfg.clients.client_count())
        .map(|c| total_energy(cfg.alpha, cfg.clients.params_of(c)).map(|e| e.total))
        .collect::<Result<Vec<_>>>()?;
    let max_rel_error = summary
        .per_client_energy
        .iter()
        .zip(&closed_form)
        .map(|(l, c)| {
            let scale = l.abs().max(c.abs());
            if scale == 0.0 {
                0.0
            } else {
                (l - c).abs() / scale
            }
        })
        .fold(0.0, f64::max);
    Ok(LedgerCheck {
        ledger: summary.per_client_energy.clone(),
        closed_form,
        max_rel_error,
        rtol,
        pass: max_rel_error <= rtol && summary.per_client_energy.len() == cfg.clients.client_count(),
    })
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum TraceRecord<'a> {
    Event(&'a SimEvent),
    Summary(&'a SimSummary),
}

/// Writes one JSON object per event followed by a summary object.
pub fn write_trace<W: Write>(trace: &SimTrace, mut out: W) -> std::io::Result<()> {
    for ev in &trace.events {
        write_event(ev, &mut out)?;
    }
    write_summary(&trace.summary, &mut out)
}

pub fn write_event<W: Write>(ev: &SimEvent, mut out: W) -> std::io::Result<()> {
    serde_json::to_writer(&mut out, &TraceRecord::Event(ev))?;
    out.write_all(b"\n")
}

pub fn write_summary<W: Write>(summary: &SimSummary, mut out: W) -> std::io::Result<()> {
    serde_json::to_writer(&mut out, &TraceRecord::Summary(summary))?;
    out.write_all(b"\n")
}
