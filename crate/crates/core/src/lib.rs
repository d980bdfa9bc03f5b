//! Privacy accounting for the Poisson-subsampled Gaussian mechanism.
//!
//! * [`mechanism`]: exact PLLR densities, CDFs and samplers.
//! * [`cumulants`], [`edgeworth`]: the Edgeworth accountant.
//! * [`rdp`], [`prv`]: Rényi-DP and FFT-composition baselines.
//! * [`calibrate`]: noise-multiplier calibration against any accountant.
//! * [`mc`]: Monte Carlo ground truth.

pub mod accountant;
pub mod calibrate;
pub mod cumulants;
pub mod edgeworth;
pub mod error;
pub mod mc;
pub mod mechanism;
pub mod normal;
pub mod prv;
pub mod quadrature;
pub mod rdp;

pub use accountant::{AccountantResult, Method, PrivacyAccountant};
pub use calibrate::{calibrate_sigma, calibrate_with, Calibration, CalibrationOptions};
pub use cumulants::{compose_cumulants, compute_moments, moments_to_cumulants, CumulantVector};
pub use edgeworth::{
    berry_esseen_envelope, delta_of_epsilon_ew, edgeworth_cdf, epsilon_of_delta_ew, EdgeworthAccountant,
};
pub use error::{AccountingError, Result};
pub use mc::{mc_delta, mc_epsilon_bracket, McEstimate};
pub use mechanism::{
    analytic_gaussian_delta, pllr_cdf, pllr_inverse, pllr_log_ratio, sample_pllr, Hypothesis, MechanismSpec,
    PllrSample,
};
pub use prv::{prv_compose, prv_delta, prv_discretize, PrvAccountant, PrvGrid, PrvGridConfig};
pub use rdp::{rdp_epsilon, rdp_sampled_gaussian, RdpAccountant, RdpCurve};
