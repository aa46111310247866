//! Measurements tied to the transfer analysis: excess-risk scaling curves,
//! an empirical central-condition estimate, and an empirical
//! relative-Lipschitz constant between two encoders.
//!
//! The rate exponents and constants of the underlying bound have no direct
//! empirical counterpart and are not estimated here.

mod central;
mod lipschitz;
mod risk;

pub use central::{estimate_central_condition, CentralConditionEstimate};
pub use lipschitz::{
    estimate_relative_lipschitz, relative_lipschitz_from_records, LipschitzEstimate, LipschitzPair, LipschitzRecord,
    SetModel, SURROGATE_LABEL,
};
pub use risk::{fit_risk_curve, run_risk_experiment, Growth, RiskConfig, RiskCurve, RiskPoint};
