//! Closed-form per-client energy model.
//!
//! A client's energy over a full training run splits into two parts:
//!
//! * interaction with the main server, charged once per data item: client-side
//!   forward/backward compute plus smashed-data upload and gradient download;
//! * interaction with the fed server, charged once per global epoch:
//!   client-side model upload and global model download.
//!
//! Total energy is `g_e * (l_e * D_b * e_main + e_fed)`, affine in `alpha`.
//! All link rates are totals shared equally by the `K` clients, so every
//! transmission term carries a factor `K`.

use serde::{Deserialize, Serialize};

use crate::error::{check_fraction, Error, Result};

/// Missing fields take their [`SystemParams::reference`] values when deserialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemParams {
    /// Number of clients `K` sharing every link.
    pub clients: u64,
    pub global_epochs: u64,
    /// Local iterations per global epoch.
    pub local_iterations: u64,
    /// Data items per local iteration.
    pub minibatch: u64,
    /// Smashed-data size per item, bits.
    pub smashed_bits: f64,
    /// Cut-layer gradient size per item, bits.
    pub gradient_bits: f64,
    /// Size of one model parameter, bits.
    pub param_bits: f64,
    /// Parameters in the full model.
    pub total_params: u64,
    /// Forward plus backward time of the full model for one item, seconds.
    pub full_train_time: f64,
    /// Total uplink rate to the fed server, bits/s.
    pub uplink_fed: f64,
    /// Total downlink rate from the fed server, bits/s.
    pub downlink_fed: f64,
    /// Total uplink rate to the main server, bits/s.
    pub uplink_main: f64,
    /// Total downlink rate from the main server, bits/s.
    pub downlink_main: f64,
    /// Watts drawn while training the full model.
    pub compute_power: f64,
    pub transmit_power: f64,
    pub receive_power: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self::reference()
    }
}

impl SystemParams {
    /// Reference setting: 5 clients, a 31,484,464-parameter model, 128-item
    /// minibatches, 50 global epochs of 75 local iterations, 200 Mbit/s to
    /// the fed server and 100 Mbit/s to the main server.
    pub fn reference() -> Self {
        Self {
            clients: 5,
            global_epochs: 50,
            local_iterations: 75,
            minibatch: 128,
            smashed_bits: 491_520.0,
            gradient_bits: 491_520.0,
            param_bits: 32.0,
            total_params: 31_484_464,
            full_train_time: 0.00055,
            uplink_fed: 200e6,
            downlink_fed: 200e6,
            uplink_main: 100e6,
            downlink_main: 100e6,
            compute_power: 4.0,
            transmit_power: 0.2,
            receive_power: 0.2,
        }
    }

    /// Counts must be at least 1 and rates strictly positive. Sizes, powers
    /// and the training time may be zero (e.g. `receive_power = 0` drops
    /// downlink energy), but never negative or non-finite.
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("clients", self.clients),
            ("global_epochs", self.global_epochs),
            ("local_iterations", self.local_iterations),
            ("minibatch", self.minibatch),
            ("total_params", self.total_params),
        ];
        for (name, value) in counts {
            if value < 1 {
                return Err(Error::Config(format!("{name} must be at least 1, got {value}")));
            }
        }
        let rates = [
            ("uplink_fed", self.uplink_fed),
            ("downlink_fed", self.downlink_fed),
            ("uplink_main", self.uplink_main),
            ("downlink_main", self.downlink_main),
        ];
        for (name, value) in rates {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!("{name} must be a positive rate, got {value}")));
            }
        }
        let non_negative = [
            ("smashed_bits", self.smashed_bits),
            ("gradient_bits", self.gradient_bits),
            ("param_bits", self.param_bits),
            ("full_train_time", self.full_train_time),
            ("compute_power", self.compute_power),
            ("transmit_power", self.transmit_power),
            ("receive_power", self.receive_power),
        ];
        for (name, value) in non_negative {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {value}")));
            }
        }
        Ok(())
    }

    fn k(&self) -> f64 {
        self.clients as f64
    }

    /// Items each client processes per global epoch (`l_e * D_b`).
    pub fn items_per_epoch(&self) -> f64 {
        self.local_iterations as f64 * self.minibatch as f64
    }

    /// Client-side compute energy for one item (forward and backward).
    pub fn compute_energy_per_item(&self, alpha: f64) -> f64 {
        alpha * self.full_train_time * self.compute_power
    }

    pub fn smashed_upload_time(&self) -> f64 {
        self.smashed_bits * self.k() / self.uplink_main
    }

    pub fn gradient_download_time(&self) -> f64 {
        self.gradient_bits * self.k() / self.downlink_main
    }

    /// Bits of the client-side model (`alpha * b * |W|`).
    pub fn client_model_bits(&self, alpha: f64) -> f64 {
        alpha * self.param_bits * self.total_params as f64
    }

    pub fn model_upload_time(&self, alpha: f64) -> f64 {
        self.client_model_bits(alpha) * self.k() / self.uplink_fed
    }

    pub fn model_download_time(&self, alpha: f64) -> f64 {
        self.client_model_bits(alpha) * self.k() / self.downlink_fed
    }

    pub fn smashed_upload_energy(&self) -> f64 {
        self.smashed_upload_time() * self.transmit_power
    }

    pub fn gradient_download_energy(&self) -> f64 {
        self.gradient_download_time() * self.receive_power
    }

    pub fn model_upload_energy(&self, alpha: f64) -> f64 {
        self.model_upload_time(alpha) * self.transmit_power
    }

    pub fn model_download_energy(&self, alpha: f64) -> f64 {
        self.model_download_time(alpha) * self.receive_power
    }
}

/// Energy attributed to each activity over the whole run, joules.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyTerms {
    pub client_compute: f64,
    pub smashed_tx: f64,
    pub gradient_rx: f64,
    pub model_tx: f64,
    pub model_rx: f64,
}

impl EnergyTerms {
    pub fn main_sum(&self) -> f64 {
        self.client_compute + self.smashed_tx + self.gradient_rx
    }

    pub fn fed_sum(&self) -> f64 {
        self.model_tx + self.model_rx
    }
}

/// Per-client energy at one split fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub alpha: f64,
    pub e_main_per_item: f64,
    pub e_fed_per_epoch: f64,
    /// `g_e * l_e * D_b * e_main_per_item`
    pub e_main_total: f64,
    /// `g_e * e_fed_per_epoch`
    pub e_fed_total: f64,
    pub total: f64,
    pub terms: EnergyTerms,
}

fn checked(alpha: f64, p: &SystemParams) -> Result<f64> {
    let alpha = check_fraction("alpha", alpha)?;
    p.validate()?;
    Ok(alpha)
}

pub fn energy_main_per_item(alpha: f64, p: &SystemParams) -> Result<f64> {
    let alpha = checked(alpha, p)?;
    Ok(p.compute_energy_per_item(alpha) + p.smashed_upload_energy() + p.gradient_download_energy())
}

pub fn energy_fed_per_epoch(alpha: f64, p: &SystemParams) -> Result<f64> {
    let alpha = checked(alpha, p)?;
    Ok(p.model_upload_energy(alpha) + p.model_download_energy(alpha))
}

pub fn total_energy(alpha: f64, p: &SystemParams) -> Result<EnergyBreakdown> {
    let e_main = energy_main_per_item(alpha, p)?;
    let e_fed = energy_fed_per_epoch(alpha, p)?;
    let epochs = p.global_epochs as f64;
    let items = p.items_per_epoch();
    let total = epochs * (items * e_main + e_fed);

    let run_items = epochs * items;
    let terms = EnergyTerms {
        client_compute: run_items * p.compute_energy_per_item(alpha),
        smashed_tx: run_items * p.smashed_upload_energy(),
        gradient_rx: run_items * p.gradient_download_energy(),
        model_tx: epochs * p.model_upload_energy(alpha),
        model_rx: epochs * p.model_download_energy(alpha),
    };
    Ok(EnergyBreakdown {
        alpha,
        e_main_per_item: e_main,
        e_fed_per_epoch: e_fed,
        e_main_total: run_items * e_main,
        e_fed_total: epochs * e_fed,
        total,
        terms,
    })
}

/// Mean per-client total energy over heterogeneous client profiles.
pub fn average_energy(alpha: f64, profiles: &[SystemParams]) -> Result<f64> {
    if profiles.is_empty() {
        return Err(Error::EmptyProfiles);
    }
    let mut sum = 0.0;
    for p in profiles {
        sum += total_energy(alpha, p)?.total;
    }
    Ok(sum / profiles.len() as f64)
}

/// Energy over the whole client population, `K` times the per-client figure.
pub fn system_energy(alpha: f64, p: &SystemParams) -> Result<f64> {
    Ok(p.clients as f64 * total_energy(alpha, p)?.total)
}

/// `E(alpha) = slope * alpha + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineEnergy {
    pub slope: f64,
    pub intercept: f64,
}

impl AffineEnergy {
    pub fn from_params(p: &SystemParams) -> Result<Self> {
        p.validate()?;
        let epochs = p.global_epochs as f64;
        let items = p.items_per_epoch();
        // Same operation order as `total_energy` at alpha = 0, so the
        // intercept is bit-identical to E(0).
        let intercept = epochs * (items * (p.smashed_upload_energy() + p.gradient_download_energy()) + 0.0);
        let per_param = p.param_bits * p.total_params as f64 * p.k();
        let slope = epochs
            * (items * p.full_train_time * p.compute_power
                + per_param * (p.transmit_power / p.uplink_fed + p.receive_power / p.downlink_fed));
        Ok(Self { slope, intercept })
    }

    /// Averages slope and intercept over profiles; the intercept matches
    /// `average_energy(0.0, profiles)` exactly.
    pub fn average(profiles: &[SystemParams]) -> Result<Self> {
        if profiles.is_empty() {
            return Err(Error::EmptyProfiles);
        }
        let (mut slope, mut intercept) = (0.0, 0.0);
        for p in profiles {
            let a = Self::from_params(p)?;
            slope += a.slope;
            intercept += a.intercept;
        }
        let n = profiles.len() as f64;
        Ok(Self {
            slope: slope / n,
            intercept: intercept / n,
        })
    }

    pub fn eval(&self, alpha: f64) -> f64 {
        self.slope * alpha + self.intercept
    }
}
