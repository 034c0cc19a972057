//! Reconstruction-score model: a quadratic in the split fraction that
//! approximates the SSIM an inversion attack achieves on smashed data.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_fraction, Error, Result};
use crate::Warning;

/// Name of the built-in model fitted on Fashion-MNIST inversion results.
pub const FMNIST_REFERENCE: &str = "paper-fmnist";

/// Fits whose design matrix has a larger condition number are rejected.
pub const MAX_CONDITION: f64 = 1e10;

/// `RS(alpha) = a2 * alpha^2 + a1 * alpha + a0` on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RsModel {
    pub a2: f64,
    pub a1: f64,
    pub a0: f64,
    /// Root-mean-square residual of the fit that produced the model.
    #[serde(default)]
    pub fit_rmse: f64,
}

impl RsModel {
    pub fn new(a2: f64, a1: f64, a0: f64) -> Self {
        Self {
            a2,
            a1,
            a0,
            fit_rmse: 0.0,
        }
    }

    /// `0.3597 a^2 - 0.7004 a + 0.7675`; published fit RMSE 0.0028.
    pub fn fmnist_reference() -> Self {
        Self {
            a2: 0.3597,
            a1: -0.7004,
            a0: 0.7675,
            fit_rmse: 0.0028,
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            FMNIST_REFERENCE => Some(Self::fmnist_reference()),
            _ => None,
        }
    }

    pub fn builtin_names() -> &'static [&'static str] {
        &[FMNIST_REFERENCE]
    }

    pub fn is_convex(&self) -> bool {
        self.a2 > 0.0
    }

    pub fn eval(&self, alpha: f64) -> Result<f64> {
        let alpha = check_fraction("alpha", alpha)?;
        Ok(self.eval_unchecked(alpha))
    }

    pub(crate) fn eval_unchecked(&self, alpha: f64) -> f64 {
        (self.a2 * alpha + self.a1) * alpha + self.a0
    }

    pub fn derivative(&self, alpha: f64) -> f64 {
        2.0 * self.a2 * alpha + self.a1
    }

    /// Score outside `[0, 1]` means the model no longer behaves like SSIM there.
    pub fn validity_warning(&self, alpha: f64, score: f64) -> Option<Warning> {
        (!(0.0..=1.0).contains(&score)).then_some(Warning::ScoreOutOfRange { alpha, score })
    }

    /// Vertex of the parabola clamped to `[0, 1]`.
    pub fn minimizer_alpha(&self) -> Result<f64> {
        if !self.is_convex() {
            return Err(Error::NonConvex { a2: self.a2 });
        }
        Ok((-self.a1 / (2.0 * self.a2)).clamp(0.0, 1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RsSample {
    pub alpha: f64,
    pub ssim: f64,
}

impl RsSample {
    pub fn new(alpha: f64, ssim: f64) -> Result<Self> {
        check_fraction("alpha", alpha)?;
        check_fraction("ssim", ssim)?;
        Ok(Self { alpha, ssim })
    }
}

fn by_alpha_then_ssim(a: &RsSample, b: &RsSample) -> Ordering {
    a.alpha.total_cmp(&b.alpha).then(a.ssim.total_cmp(&b.ssim))
}

/// Ordinary least-squares quadratic through the samples.
///
/// Samples are sorted before the solve, so the result does not depend on
/// input order at all. The design matrix `[alpha^2, alpha, 1]` is solved by
/// SVD and rejected when its condition number exceeds [`MAX_CONDITION`].
pub fn fit_quadratic(samples: &[RsSample]) -> Result<RsModel> {
    for s in samples {
        RsSample::new(s.alpha, s.ssim)?;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(by_alpha_then_ssim);
    let mut alphas: Vec<f64> = sorted.iter().map(|s| s.alpha).collect();
    alphas.dedup();
    if alphas.len() < 3 {
        return Err(Error::Underdetermined {
            distinct: alphas.len(),
        });
    }

    let n = sorted.len();
    let design = DMatrix::from_fn(n, 3, |i, j| {
        let a = sorted[i].alpha;
        match j {
            0 => a * a,
            1 => a,
            _ => 1.0,
        }
    });
    let target = DVector::from_iterator(n, sorted.iter().map(|s| s.ssim));

    let svd = design.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let min_sv = svd.singular_values.min();
    let condition = if min_sv > 0.0 { max_sv / min_sv } else { f64::INFINITY };
    if condition.is_nan() || condition > MAX_CONDITION {
        return Err(Error::IllConditioned { condition });
    }
    let coeffs = svd
        .solve(&target, 0.0)
        .map_err(|e| Error::Config(format!("least-squares solve failed: {e}")))?;

    let residuals = &design * &coeffs - &target;
    let fit_rmse = (residuals.norm_squared() / n as f64).sqrt();
    Ok(RsModel {
        a2: coeffs[0],
        a1: coeffs[1],
        a0: coeffs[2],
        fit_rmse,
    })
}

/// Parses `alpha,ssim` lines. Blank lines and `#` comments are skipped and a
/// single non-numeric header line is allowed before the first sample.
pub fn parse_samples(text: &str) -> Result<Vec<RsSample>> {
    let mut samples = Vec::new();
    let mut seen_header = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 2 comma-separated fields, found {}", fields.len()),
            });
        }
        let parsed = (fields[0].parse::<f64>(), fields[1].parse::<f64>());
        let (alpha, ssim) = match parsed {
            (Ok(a), Ok(s)) => (a, s),
            _ if samples.is_empty() && !seen_header && fields.iter().all(|f| f.parse::<f64>().is_err()) => {
                seen_header = true;
                continue;
            }
            _ => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("cannot parse {line:?} as alpha,ssim"),
                })
            }
        };
        let sample = RsSample::new(alpha, ssim).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        samples.push(sample);
    }
    Ok(samples)
}
