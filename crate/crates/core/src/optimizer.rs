//! Cut-layer selection: minimize the reconstruction score subject to a
//! per-client energy budget and `0 <= alpha <= 1`.
//!
//! Energy is affine in `alpha` and the score is quadratic, so for a convex
//! score the optimum is the score's vertex pulled back to the largest
//! feasible `alpha` when the budget binds. A grid search over `alpha`
//! serves both as an oracle for that closed form and as the fallback for
//! non-convex, user-fitted score models.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{average_energy, total_energy, AffineEnergy, SystemParams};
use crate::error::{Error, Result};
use crate::privacy::RsModel;
use crate::topology::{CutMode, CutSelection, ModelTopology};
use crate::Warning;

/// Relative slack when testing `E(alpha) <= e_req`.
pub const FEASIBILITY_RTOL: f64 = 1e-12;

pub const DEFAULT_GRID_STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationProblem {
    pub rs: RsModel,
    /// One profile for homogeneous clients; several are averaged.
    pub profiles: Vec<SystemParams>,
    /// Per-client energy budget, joules.
    pub e_req: f64,
    pub grid_step: f64,
}

impl OptimizationProblem {
    pub fn new(rs: RsModel, params: SystemParams, e_req: f64) -> Self {
        Self::heterogeneous(rs, vec![params], e_req)
    }

    pub fn heterogeneous(rs: RsModel, profiles: Vec<SystemParams>, e_req: f64) -> Self {
        Self {
            rs,
            profiles,
            e_req,
            grid_step: DEFAULT_GRID_STEP,
        }
    }

    pub fn with_grid_step(mut self, grid_step: f64) -> Self {
        self.grid_step = grid_step;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.profiles.is_empty() {
            return Err(Error::EmptyProfiles);
        }
        for p in &self.profiles {
            p.validate()?;
        }
        if !(self.e_req.is_finite() && self.e_req > 0.0) {
            return Err(Error::domain("e_req", self.e_req, "(0, inf)"));
        }
        if !(self.grid_step > 0.0 && self.grid_step <= 0.1) {
            return Err(Error::domain("grid_step", self.grid_step, "(0, 0.1]"));
        }
        Ok(())
    }

    pub fn energy(&self, alpha: f64) -> Result<f64> {
        average_energy(alpha, &self.profiles)
    }

    fn budget_with_slack(&self) -> f64 {
        self.e_req * (1.0 + FEASIBILITY_RTOL)
    }

    fn infeasible(&self, min_energy: f64) -> Error {
        Error::Infeasible {
            e_req: self.e_req,
            min_energy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ClosedForm,
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub alpha_star: f64,
    pub rs_at_star: f64,
    /// Average per-client energy at `alpha_star`.
    pub energy_at_star: f64,
    /// Whether the energy constraint is active at the optimum.
    pub binding: bool,
    /// Largest `alpha` the budget allows.
    pub feasible_alpha_max: f64,
    /// Multiplier of the energy constraint; zero when it is slack.
    pub kkt_multiplier: f64,
    /// Filled in by [`solve`] from the model topology.
    pub cut_index: Option<u32>,
    pub method: Method,
    /// Energy at `alpha_star` of each profile, in input order.
    pub profile_energies: Vec<f64>,
    pub warnings: Vec<Warning>,
}

/// Largest `alpha` in `[0, 1]` with `E(alpha) <= e_req`, from the affine
/// energy model.
pub fn feasible_alpha_max(p: &OptimizationProblem) -> Result<f64> {
    p.validate()?;
    let affine = AffineEnergy::average(&p.profiles)?;
    if affine.intercept > p.budget_with_slack() {
        return Err(p.infeasible(affine.intercept));
    }
    if affine.slope <= 0.0 || p.energy(1.0)? <= p.budget_with_slack() {
        return Ok(1.0);
    }
    Ok(((p.e_req - affine.intercept) / affine.slope).clamp(0.0, 1.0))
}

fn finish(p: &OptimizationProblem, alpha: f64, binding: bool, alpha_max: f64, method: Method) -> Result<OptimizationResult> {
    let rs_at_star = p.rs.eval(alpha)?;
    let profile_energies = p
        .profiles
        .iter()
        .map(|prof| total_energy(alpha, prof).map(|e| e.total))
        .collect::<Result<Vec<_>>>()?;
    let energy_at_star = p.energy(alpha)?;
    let affine = AffineEnergy::average(&p.profiles)?;
    let kkt_multiplier = if binding && affine.slope > 0.0 {
        (-p.rs.derivative(alpha) / affine.slope).max(0.0)
    } else {
        0.0
    };
    let warnings = p.rs.validity_warning(alpha, rs_at_star).into_iter().collect();
    Ok(OptimizationResult {
        alpha_star: alpha,
        rs_at_star,
        energy_at_star,
        binding,
        feasible_alpha_max: alpha_max,
        kkt_multiplier,
        cut_index: None,
        method,
        profile_energies,
        warnings,
    })
}

/// Exact KKT solution for a convex score model.
pub fn solve_closed_form(p: &OptimizationProblem) -> Result<OptimizationResult> {
    p.validate()?;
    let vertex = p.rs.minimizer_alpha()?;
    let alpha_max = feasible_alpha_max(p)?;
    let binding = alpha_max < vertex;
    finish(p, alpha_max.min(vertex), binding, alpha_max, Method::ClosedForm)
}

/// Grid points `0, step, 2 step, ...`, always ending at exactly 1.
pub fn grid_points(step: f64) -> Vec<f64> {
    let ratio = 1.0 / step;
    let nearest = ratio.round();
    let n = if (ratio - nearest).abs() <= 1e-9 * nearest { nearest } else { ratio.floor() } as usize;
    let mut points: Vec<f64> = (0..=n).map(|i| (i as f64 * step).min(1.0)).collect();
    if let Some(last) = points.last_mut() {
        if 1.0 - *last <= 1e-9 {
            *last = 1.0;
        } else {
            points.push(1.0);
        }
    }
    points
}

/// Lowest score wins; among equal scores the smaller `alpha` does.
fn better(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    match a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)) {
        std::cmp::Ordering::Greater => b,
        _ => a,
    }
}

/// Exhaustive search over the feasible grid points, with energy evaluated
/// directly from the per-profile energy model.
pub fn solve_grid(p: &OptimizationProblem) -> Result<OptimizationResult> {
    p.validate()?;
    let budget = p.budget_with_slack();
    let points = grid_points(p.grid_step);
    let evaluated = points
        .par_iter()
        .map(|&alpha| -> Result<Option<(f64, f64)>> {
            let energy = p.energy(alpha)?;
            Ok((energy <= budget).then(|| (alpha, p.rs.eval_unchecked(alpha))))
        })
        .collect::<Result<Vec<_>>>()?;

    let feasible: Vec<(f64, f64)> = evaluated.into_iter().flatten().collect();
    let best = feasible
        .par_iter()
        .copied()
        .reduce_with(better)
        .ok_or_else(|| p.infeasible(p.energy(0.0).unwrap_or(f64::NAN)))?;
    let alpha_max = feasible.iter().map(|&(a, _)| a).fold(0.0, f64::max);
    let next_infeasible = feasible.len() < points.len();
    // binding when a grid neighbour to the right was cut off by the budget and
    // would have scored lower
    let binding = next_infeasible
        && best.0 == alpha_max
        && points
            .iter()
            .find(|&&a| a > alpha_max)
            .is_some_and(|&a| p.rs.eval_unchecked(a) < best.1);
    finish(p, best.0, binding, alpha_max, Method::Grid)
}

/// Closed form for convex score models, grid search otherwise; maps the
/// optimum onto a cut index.
pub fn solve(p: &OptimizationProblem, topo: &ModelTopology, mode: CutMode) -> Result<OptimizationResult> {
    let mut result = if p.rs.is_convex() {
        solve_closed_form(p)?
    } else {
        solve_grid(p)?
    };
    let cut = CutSelection::new(result.alpha_star, topo, mode)?;
    result.cut_index = Some(cut.cut_index);
    result.warnings.extend(cut.degeneracy_warning(topo));
    Ok(result)
}
