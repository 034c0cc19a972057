//! Layer structure of the full model and the mapping between the continuous
//! split fraction `alpha` and a discrete cut index.
//!
//! A cut index counts the layers that stay on the client side: index 0 puts
//! the whole model on the server, index `total_layers` puts it all on the
//! client. Every layer is assumed to hold the same number of parameters.

use serde::{Deserialize, Serialize};

use crate::error::{check_fraction, Error, Result};
use crate::Warning;

/// How `alpha` is quantized to a cut index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CutMode {
    /// `floor(alpha * total_layers)`
    #[default]
    PerLayer,
    /// `floor(alpha * blocks) * layers_per_block`; cuts only between blocks.
    PerBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTopology {
    pub total_params: u64,
    pub total_layers: u32,
    pub layers_per_block: u32,
    pub blocks: u32,
}

impl ModelTopology {
    /// Topology without block structure: every layer is its own block.
    pub fn layered(total_params: u64, total_layers: u32) -> Result<Self> {
        Self::new(total_params, total_layers, total_layers, 1)
    }

    /// Topology built from `blocks` repetitions of a block with `layers_per_block` layers.
    pub fn blocked(total_params: u64, blocks: u32, layers_per_block: u32) -> Result<Self> {
        let total_layers = blocks
            .checked_mul(layers_per_block)
            .ok_or_else(|| Error::Config("blocks * layers_per_block overflows".into()))?;
        Self::new(total_params, total_layers, blocks, layers_per_block)
    }

    /// Block fields are not required to be consistent with `total_layers`;
    /// that is only checked when a per-block mapping is requested.
    pub fn new(total_params: u64, total_layers: u32, blocks: u32, layers_per_block: u32) -> Result<Self> {
        let topo = Self {
            total_params,
            total_layers,
            layers_per_block,
            blocks,
        };
        topo.validate()?;
        Ok(topo)
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_params < 1 {
            return Err(Error::Config("total_params must be at least 1".into()));
        }
        if self.total_layers < 2 {
            return Err(Error::Config(format!(
                "total_layers must be at least 2 for a split to exist, got {}",
                self.total_layers
            )));
        }
        if self.layers_per_block < 1 {
            return Err(Error::Config("layers_per_block must be at least 1".into()));
        }
        Ok(())
    }

    pub fn has_consistent_blocks(&self) -> bool {
        u64::from(self.blocks) * u64::from(self.layers_per_block) == u64::from(self.total_layers)
    }

    /// Parameters held on the client side for a given split fraction.
    pub fn client_params(&self, alpha: f64) -> Result<f64> {
        let alpha = check_fraction("alpha", alpha)?;
        Ok(alpha * self.total_params as f64)
    }
}

/// A split fraction together with the cut index it maps to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutSelection {
    pub alpha: f64,
    pub cut_index: u32,
}

impl CutSelection {
    pub fn new(alpha: f64, topo: &ModelTopology, mode: CutMode) -> Result<Self> {
        let cut_index = map_alpha_to_layer(alpha, topo, mode)?;
        Ok(Self { alpha, cut_index })
    }

    /// Cut at either end of the model, leaving one side without layers.
    pub fn is_degenerate(&self, topo: &ModelTopology) -> bool {
        self.cut_index == 0 || self.cut_index == topo.total_layers
    }

    pub fn degeneracy_warning(&self, topo: &ModelTopology) -> Option<Warning> {
        self.is_degenerate(topo).then_some(Warning::DegenerateCut {
            cut_index: self.cut_index,
            total_layers: topo.total_layers,
        })
    }
}

/// Floor that treats products within a few ulps of an integer as that integer,
/// so `k / n * n` lands back on `k` (e.g. `1.0 / 49.0 * 49.0 < 1.0`).
fn snapped_floor(x: f64) -> f64 {
    let nearest = x.round();
    if (x - nearest).abs() <= 4.0 * f64::EPSILON * nearest.abs().max(1.0) {
        nearest
    } else {
        x.floor()
    }
}

pub fn map_alpha_to_layer(alpha: f64, topo: &ModelTopology, mode: CutMode) -> Result<u32> {
    let alpha = check_fraction("alpha", alpha)?;
    topo.validate()?;
    let index = match mode {
        CutMode::PerLayer => snapped_floor(alpha * f64::from(topo.total_layers)) as u32,
        CutMode::PerBlock => {
            if !topo.has_consistent_blocks() {
                return Err(Error::Config(format!(
                    "per-block mapping needs blocks * layers_per_block = total_layers, got {} * {} != {}",
                    topo.blocks, topo.layers_per_block, topo.total_layers
                )));
            }
            snapped_floor(alpha * f64::from(topo.blocks)) as u32 * topo.layers_per_block
        }
    };
    Ok(index.min(topo.total_layers))
}

pub fn layer_to_alpha(cut_index: u32, topo: &ModelTopology) -> Result<f64> {
    topo.validate()?;
    if cut_index > topo.total_layers {
        return Err(Error::domain("cut_index", f64::from(cut_index), "[0, total_layers]"));
    }
    Ok(f64::from(cut_index) / f64::from(topo.total_layers))
}
