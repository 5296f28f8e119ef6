//! Statistical analysis: Δt peak fits, the joint dip fit and the
//! systematic-effect estimators.

mod dip;
mod estimators;
mod gauss;
pub mod lm;

pub use dip::{
    bin_by_delay, fit_dip_curves, AmplitudeFit, BinnedDipCurve, CurveSelection, DelayBin,
    DipCurve, DipFit, DipFitOptions,
};
pub use estimators::{
    correct_and_check_ratios, correct_dip_curve, estimate_afterpulse_probability,
    estimate_blend_probability, unitarity_sum, AfterpulseEstimate, BlendEstimate, RatioReport,
    UnitarityReport,
};
pub use gauss::{fit_double_gaussian, CoincidenceHistogram, DoubleGaussianFit, FitQuality};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("not enough data: {what} (got {got}, need {need})")]
    NotEnoughData {
        what: &'static str,
        got: usize,
        need: usize,
    },
    #[error("fit did not converge after {n_iter} iterations (chi2 {chi2:.3}, params {params:?})")]
    NoConvergence {
        n_iter: usize,
        chi2: f64,
        params: Vec<f64>,
    },
    #[error("numerical failure: {reason}")]
    Numerical { reason: String },
    #[error("empty sample: {what}")]
    EmptySample { what: &'static str },
}
