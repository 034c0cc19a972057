use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A value lies outside the domain of the operation it was passed to.
    #[error("{name} = {value} is outside its domain {domain}")]
    Domain {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no profiles supplied; at least one is required")]
    EmptyProfiles,

    #[error("quadratic fit needs at least 3 distinct alpha values, got {distinct}")]
    Underdetermined { distinct: usize },

    #[error("quadratic fit design is ill-conditioned (condition number {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("reconstruction-score model is not convex (a2 = {a2}); use grid search")]
    NonConvex { a2: f64 },

    /// Even the cheapest split (alpha = 0) exceeds the energy budget.
    #[error("energy budget {e_req} J is infeasible; minimum achievable energy is {min_energy} J")]
    Infeasible { e_req: f64, min_energy: f64 },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl Error {
    pub(crate) fn domain(name: &'static str, value: f64, domain: &'static str) -> Self {
        Error::Domain {
            name,
            value,
            domain,
        }
    }
}

/// Rejects anything outside the closed unit interval, NaN included.
pub(crate) fn check_fraction(name: &'static str, value: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(Error::domain(name, value, "[0, 1]"))
    }
}
