//! Method-of-moments estimation toolkit for affine stochastic volatility models.
//!
//! The toolkit covers the Heston model
//!
//! ```text
//! d log s(t) = (mu - v(t)/2) dt + sqrt(v(t)) dw_s(t)
//! dv(t)      = k (theta - v(t)) dt + sigma_v sqrt(v(t)) dw_v(t)
//! corr(dw_s, dw_v) = rho
//! ```
//!
//! observed through equally spaced log-returns `Y_1..Y_N` with step `h`, plus
//! three extensions: compound-Poisson jumps in the return (`ReturnJump`), jumps
//! in the variance (`VarianceJump`), and a second independent variance factor
//! (`TwoFactor`).
//!
//! Functionality is organised in layers:
//!
//! * [`model`] — parameter containers, validation (Feller condition), and
//!   stationary facts of the CIR variance process.
//! * [`engine`] — recursive symbolic derivation of conditional and
//!   unconditional return moments with exact rational coefficients. This is
//!   the machinery that both cross-validates the closed forms and produces
//!   moments that have no hand-written formula (third central moments,
//!   two-factor intermediate terms, variance-jump covariances).
//! * [`moments`] — closed-form population moments of returns and the moment
//!   systems of the three extensions.
//! * [`simulate`] — Euler path simulation for all model variants with
//!   reproducible, stream-separated randomness.
//! * [`estimate`] — sample moments, the closed-form method-of-moments
//!   estimators, and numerical moment matching for the extensions.
//! * [`asymptotics`] — the asymptotic covariance of the moment vector
//!   (exact long-run variance of the mean plus a Bartlett HAC estimate) and
//!   delta-method standard errors for the parameter estimates.
//! * [`experiments`] — a replication harness that reproduces the Monte Carlo
//!   study design (parameter settings S0–S5, sample-size scaling, and
//!   observation-interval sensitivity) at configurable scale.
//! * [`config`] — the plain-text `key = value` configuration format shared by
//!   the command-line tools.

pub mod asymptotics;
pub mod config;
pub mod engine;
pub mod estimate;
pub mod experiments;
pub mod model;
pub mod moments;
pub mod simulate;
