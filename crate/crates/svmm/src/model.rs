//! Parameter containers, validation, and stationary facts for the variance
//! process.
//!
//! The variance follows a Cox–Ingersoll–Ross (square-root) diffusion
//!
//! ```text
//! dv(t) = k (theta - v(t)) dt + sigma_v sqrt(v(t)) dw_v(t)
//! ```
//!
//! whose stationary law is Gamma(shape 2 k theta / sigma_v^2,
//! scale sigma_v^2 / (2k)), with mean `theta` and variance
//! `theta sigma_v^2 / (2k)`. All downstream formula work assumes the Feller
//! condition `sigma_v^2 <= 2 k theta`, which keeps the process strictly
//! positive and underpins the mixing argument behind the central limit
//! theory, so validation enforces it strictly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative threshold on `k·h` below which exponential expressions switch to
/// series form to avoid catastrophic cancellation (several downstream
/// formulas divide by powers of `h_tilde`).
const KH_SERIES_THRESHOLD: f64 = 1e-8;

/// Minimum relative gap between the two mean-reversion rates of a two-factor
/// model; equal rates make the seven-equation moment system rank-deficient.
const TWO_FACTOR_MIN_REL_GAP: f64 = 1e-6;

/// Validation errors for model parameters.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    /// A parameter that must be strictly positive is zero, negative, or not
    /// finite.
    #[error("parameter `{field}` must be positive and finite, got {value}")]
    NonPositiveParam { field: &'static str, value: f64 },
    /// The correlation lies outside `[-1, 1]` (or is not finite).
    #[error("correlation rho must lie in [-1, 1], got {rho}")]
    CorrelationOutOfRange { rho: f64 },
    /// The Feller condition `sigma_v^2 <= 2 k theta` fails.
    #[error("Feller condition violated: sigma_v^2 = {sigma_v_sq} > 2 k theta = {bound}")]
    FellerViolation { sigma_v_sq: f64, bound: f64 },
    /// A parameter that may be zero but not negative (jump rate) is invalid.
    #[error("parameter `{field}` must be non-negative and finite, got {value}")]
    NegativeParam { field: &'static str, value: f64 },
    /// The sampling grid violates `h > 0`, `N >= 3`, or `substeps >= 1`.
    #[error("invalid sampling grid: {reason}")]
    InvalidGrid { reason: String },
    /// The two-factor mean-reversion rates are (numerically) equal.
    #[error("two-factor rates k1 = {k1} and k2 = {k2} are too close (relative gap < 1e-6)")]
    FactorRatesTooClose { k1: f64, k2: f64 },
}

/// The five Heston parameters: drift `mu`, mean-reversion rate `k`, long-run
/// variance `theta`, volatility-of-volatility `sigma_v`, and leverage
/// correlation `rho`, all per unit time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HestonParams {
    pub mu: f64,
    pub k: f64,
    pub theta: f64,
    pub sigma_v: f64,
    pub rho: f64,
}

impl HestonParams {
    pub fn new(mu: f64, k: f64, theta: f64, sigma_v: f64, rho: f64) -> Self {
        Self { mu, k, theta, sigma_v, rho }
    }

    /// Checks all invariants and wraps the parameters, see [`validate`].
    pub fn validate(self) -> Result<ValidatedHestonParams, ModelError> {
        validate(self)
    }
}

/// Heston parameters that have passed [`validate`]. Every downstream
/// operation that evaluates model formulas requires this wrapper, so invalid
/// parameter combinations cannot reach the numerics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidatedHestonParams(HestonParams);

impl std::ops::Deref for ValidatedHestonParams {
    type Target = HestonParams;
    fn deref(&self) -> &HestonParams {
        &self.0
    }
}

impl ValidatedHestonParams {
    /// Returns the plain parameter struct.
    pub fn params(&self) -> HestonParams {
        self.0
    }
}

fn require_positive(field: &'static str, value: f64) -> Result<(), ModelError> {
    if !value.is_finite() || value <= 0.0 {
        return Err(ModelError::NonPositiveParam { field, value });
    }
    Ok(())
}

/// Validates `k > 0`, `theta > 0`, `sigma_v > 0`, `|rho| <= 1`, finite `mu`,
/// and the Feller condition `sigma_v^2 <= 2 k theta`.
///
/// The Feller condition is an error rather than a warning: the central limit
/// theory for the estimators relies on it, and the simulation scheme is
/// calibrated to parameter sets that satisfy it.
///
/// Validation is a pure function of the inputs and is idempotent.
pub fn validate(params: HestonParams) -> Result<ValidatedHestonParams, ModelError> {
    if !params.mu.is_finite() {
        return Err(ModelError::NonPositiveParam { field: "mu", value: params.mu });
    }
    require_positive("k", params.k)?;
    require_positive("theta", params.theta)?;
    require_positive("sigma_v", params.sigma_v)?;
    if !params.rho.is_finite() || params.rho.abs() > 1.0 {
        return Err(ModelError::CorrelationOutOfRange { rho: params.rho });
    }
    let sigma_v_sq = params.sigma_v * params.sigma_v;
    let bound = 2.0 * params.k * params.theta;
    if sigma_v_sq > bound {
        return Err(ModelError::FellerViolation { sigma_v_sq, bound });
    }
    Ok(ValidatedHestonParams(params))
}

/// Observation design: interval `h`, number of returns `n`, and the number of
/// Euler substeps used per interval when simulating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingGrid {
    pub h: f64,
    pub n: usize,
    pub substeps: usize,
}

impl SamplingGrid {
    pub fn new(h: f64, n: usize, substeps: usize) -> Result<Self, ModelError> {
        if !h.is_finite() || h <= 0.0 {
            return Err(ModelError::InvalidGrid { reason: format!("h must be positive, got {h}") });
        }
        if n < 3 {
            return Err(ModelError::InvalidGrid { reason: format!("need at least 3 returns, got {n}") });
        }
        if substeps < 1 {
            return Err(ModelError::InvalidGrid { reason: "substeps must be >= 1".into() });
        }
        Ok(Self { h, n, substeps })
    }
}

/// Jump-size distribution of a compound-Poisson jump component. Both kinds
/// have closed-form moments of every order, which the moment systems rely on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum JumpDist {
    /// Normal jump sizes with the given mean and standard deviation.
    Normal { mean: f64, sd: f64 },
    /// Exponential jump sizes with the given mean (so rate `1/mean`).
    Exponential { mean: f64 },
}

/// A compound-Poisson jump component: Poisson rate `lambda` per unit time and
/// the jump-size distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpSpec {
    pub lambda: f64,
    pub dist: JumpDist,
}

impl JumpSpec {
    pub fn new(lambda: f64, dist: JumpDist) -> Result<Self, ModelError> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(ModelError::NegativeParam { field: "jump.lambda", value: lambda });
        }
        match dist {
            JumpDist::Normal { mean, sd } => {
                if !mean.is_finite() {
                    return Err(ModelError::NonPositiveParam { field: "jump.mean", value: mean });
                }
                require_positive("jump.sd", sd)?;
            }
            JumpDist::Exponential { mean } => require_positive("jump.mean", mean)?,
        }
        Ok(Self { lambda, dist })
    }

    /// Raw moment `E[j^r]` of the jump-size distribution, `r >= 0`.
    ///
    /// Normal(m, s): `E[j^r] = sum_i C(r, i) m^(r-i) s^i E[Z^i]` with
    /// `E[Z^i]` the standard-normal moments (zero for odd `i`, `(i-1)!!`
    /// otherwise). Exponential(mean b): `E[j^r] = r! b^r`.
    pub fn size_moment(&self, r: u32) -> f64 {
        match self.dist {
            JumpDist::Normal { mean, sd } => {
                let mut total = 0.0;
                let mut binom = 1.0f64; // C(r, i), updated incrementally
                for i in 0..=r {
                    // E[Z^i]: 0 for odd i, (i-1)!! for even i.
                    if i.is_multiple_of(2) {
                        let mut dfact = 1.0;
                        let mut j = i as i64 - 1;
                        while j > 1 {
                            dfact *= j as f64;
                            j -= 2;
                        }
                        total += binom * mean.powi((r - i) as i32) * sd.powi(i as i32) * dfact;
                    }
                    binom = binom * (r - i) as f64 / (i + 1) as f64;
                }
                total
            }
            JumpDist::Exponential { mean } => {
                let mut fact = 1.0;
                for j in 2..=r {
                    fact *= j as f64;
                }
                fact * mean.powi(r as i32)
            }
        }
    }
}

/// One variance factor of a two-factor model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolFactor {
    pub k: f64,
    pub theta: f64,
    pub sigma_v: f64,
}

impl VolFactor {
    /// Views the factor as a Heston parameter set with zero drift and zero
    /// leverage, which is how the per-factor moment machinery consumes it
    /// (the factors are independent of the return noise).
    pub fn as_heston(&self, mu: f64) -> HestonParams {
        HestonParams { mu, k: self.k, theta: self.theta, sigma_v: self.sigma_v, rho: 0.0 }
    }
}

/// Two independent CIR variance factors plus the common return drift. The
/// return noise is independent of both factor noises.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoFactorParams {
    pub mu: f64,
    pub factor1: VolFactor,
    pub factor2: VolFactor,
}

impl TwoFactorParams {
    /// Validates positivity and the Feller condition per factor, plus the
    /// identifiability requirement `k1 != k2` (relative gap at least 1e-6).
    pub fn validate(self) -> Result<Self, ModelError> {
        for f in [&self.factor1, &self.factor2] {
            f.as_heston(self.mu).validate()?;
        }
        let (k1, k2) = (self.factor1.k, self.factor2.k);
        if (k1 - k2).abs() < TWO_FACTOR_MIN_REL_GAP * k1.max(k2) {
            return Err(ModelError::FactorRatesTooClose { k1, k2 });
        }
        Ok(self)
    }
}

/// Model variant dispatch: the baseline Heston model or one of the three
/// extensions (compound-Poisson jumps in the return, jumps in the variance,
/// or a second independent variance factor).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ModelSpec {
    Heston(HestonParams),
    ReturnJump(HestonParams, JumpSpec),
    VarianceJump(HestonParams, JumpSpec),
    TwoFactor(TwoFactorParams),
}

impl ModelSpec {
    /// Validates the contained parameter sets per their own invariants.
    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            ModelSpec::Heston(p) => p.validate().map(|_| ()),
            ModelSpec::ReturnJump(p, j) | ModelSpec::VarianceJump(p, j) => {
                p.validate()?;
                JumpSpec::new(j.lambda, j.dist).map(|_| ())
            }
            ModelSpec::TwoFactor(t) => t.validate().map(|_| ()),
        }
    }
}

/// `m`-th raw moment of the stationary variance distribution,
///
/// ```text
/// E[v^m] = prod_{j=0}^{m-1} (theta + j sigma_v^2 / (2k)),
/// ```
///
/// the Gamma-law moment product. Requires `m >= 1`.
pub fn stationary_v_moment(params: &ValidatedHestonParams, m: u32) -> f64 {
    assert!(m >= 1, "stationary_v_moment requires m >= 1");
    let step = params.sigma_v * params.sigma_v / (2.0 * params.k);
    let mut out = 1.0;
    for j in 0..m {
        out *= params.theta + j as f64 * step;
    }
    out
}

/// Stationary variance of the variance process, `theta sigma_v^2 / (2k)`.
pub fn stationary_v_variance(params: &ValidatedHestonParams) -> f64 {
    params.theta * params.sigma_v * params.sigma_v / (2.0 * params.k)
}

/// The recurring time constant
///
/// ```text
/// h_tilde = (1 - e^(-k h)) / k,
/// ```
///
/// continuous in the `k -> 0` limit (`h_tilde -> h`). For `k·h < 1e-8` the
/// value is computed by second-order series expansion,
/// `h (1 - kh/2 + (kh)^2/6)`, because downstream formulas divide by powers of
/// `h_tilde` and the direct expression loses precision.
pub fn h_tilde(k: f64, h: f64) -> f64 {
    let kh = k * h;
    if kh < KH_SERIES_THRESHOLD {
        h * (1.0 - kh / 2.0 + kh * kh / 6.0)
    } else {
        -f64::exp_m1(-kh) / k
    }
}

/// The companion difference `h - h_tilde`, with the same series guard: for
/// `k·h < 1e-8` it evaluates `h (kh/2 - (kh)^2/6)` directly because the
/// subtraction `h - h_tilde` would cancel catastrophically.
pub fn h_minus_h_tilde(k: f64, h: f64) -> f64 {
    let kh = k * h;
    if kh < KH_SERIES_THRESHOLD {
        h * (kh / 2.0 - kh * kh / 6.0)
    } else {
        h - h_tilde(k, h)
    }
}

/// The combination `h e^(-k h) - h_tilde` that recurs in the lagged
/// covariance formulas, series-guarded like its siblings: for `k·h < 1e-8`
/// it evaluates `h·kh (-1/2 + kh/3)`.
pub fn h_ekh_minus_h_tilde(k: f64, h: f64) -> f64 {
    let kh = k * h;
    if kh < KH_SERIES_THRESHOLD {
        h * kh * (-0.5 + kh / 3.0)
    } else {
        h * (-kh).exp() - h_tilde(k, h)
    }
}
