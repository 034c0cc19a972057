//! Energy and privacy analysis of cut-layer selection in split federated
//! learning.
//!
//! * [`topology`] maps the client-side parameter fraction `alpha` to a cut index.
//! * [`energy`] is the closed-form per-client energy model.
//! * [`privacy`] holds the quadratic reconstruction-score model and its fitter.
//! * [`optimizer`] picks the most private `alpha` within an energy budget.
//! * [`sim`] replays the training workflow event by event with an energy ledger.

use serde::{Deserialize, Serialize};

pub mod energy;
pub mod error;
pub mod optimizer;
pub mod privacy;
pub mod sim;
pub mod topology;

pub use energy::{average_energy, total_energy, AffineEnergy, EnergyBreakdown, EnergyTerms, SystemParams};
pub use error::{Error, Result};
pub use optimizer::{solve, Method, OptimizationProblem, OptimizationResult};
pub use privacy::{fit_quadratic, RsModel, RsSample};
pub use sim::{run_simulation, ClientSetup, SimConfig, SimEvent, SimSummary, SimTrace, Step};
pub use topology::{map_alpha_to_layer, CutMode, CutSelection, ModelTopology};

/// Non-fatal conditions attached to results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Warning {
    /// The cut leaves no layers on one side of the split.
    DegenerateCut { cut_index: u32, total_layers: u32 },
    /// The reconstruction score left `[0, 1]`, so it no longer reads as SSIM.
    ScoreOutOfRange { alpha: f64, score: f64 },
}

impl std::fmt::Display for Warning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Warning::DegenerateCut { cut_index, total_layers } => write!(
                f,
                "cut index {cut_index} of {total_layers} leaves one side of the split without layers"
            ),
            Warning::ScoreOutOfRange { alpha, score } => {
                write!(f, "reconstruction score {score} at alpha {alpha} is outside [0, 1]")
            }
        }
    }
}
