//! Sample moments with exact normalizations, the closed-form moment
//! estimators of the baseline model, and numerical moment matching for the
//! three extensions.
//!
//! The closed-form chain inverts the five-moment vector in dependency order
//! `k -> theta -> mu -> sigma_v^2 -> rho`:
//!
//! ```text
//! k     = mean over m of ln(cov1 / cov_m) / ((m-1) h)
//! theta = S^2/h - [2 (h - h~) / (h k h~^2)] cov1
//! mu    = mean/h + theta/2
//! sv^2  = [4 k mean + 8 d_h/(theta h~^3) cov1 - 2 k covsq1/cov1]
//!         / [theta h~^2/(2 cov1) - d_h/(k h~)]
//! rho   = sv/(4k) - 2 cov1 / (theta sv h~^2)
//! ```
//!
//! with `h~ = (1 - e^{-kh})/k` and `d_h = h e^{-kh} - h~`. The extensions
//! have no closed-form inversion; [`extension_estimate`] minimizes the sum of
//! squared relative residuals between sample statistics and the population
//! systems from [`crate::moments`], using multi-start Nelder-Mead in a
//! constraint-free reparameterization (logs for positive parameters, `atanh`
//! for the correlation, and a sigmoid "Feller fraction"
//! `sigma_v^2 / (2 k theta)` so every candidate satisfies the Feller
//! condition by construction).
//!
//! Identification notes, reflected in the matched statistic sets (each set
//! was chosen by inspecting the singular values of the population moment
//! map's Jacobian at representative parameters):
//! - return jumps: the seven-entry system is augmented with the fourth
//!   central moment, because normal jump sizes add three parameters while the
//!   seven equations add only enough information for two;
//! - variance jumps: return moments alone confound jump and diffusion
//!   contributions to the variance of variance, so the matcher requires a
//!   variance observation series and matches its raw moments
//!   `E[v], ..., E[v^4]` plus the transition-sensitive cross moments
//!   `E[v_n v_{n+1}^2]` and `E[v_n^2 v_{n+1}]` alongside the return vector
//!   (the lag-1 autocovariance of `v` is redundant given the ladder and the
//!   covariance decay rate, and is deliberately not matched);
//! - two factors: the seven-entry system alone is locally degenerate -- a
//!   one-parameter family of factor pairs reproduces all seven values -- so
//!   the matcher appends the lag-3 and lag-4 return covariances, which pin
//!   the two-exponential decay `A_1 r_1^m + A_2 r_2^m` the way four points
//!   pin two rates and two amplitudes. The factors are canonicalized
//!   `k1 < k2` inside the search space itself (the second rate is
//!   `k1 (1 + e^g)`), removing the relabeling symmetry.

mod solver;

use std::time::Instant;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::Serialize;
use thiserror::Error;

use crate::engine;
use crate::model::{
    HestonParams, JumpDist, JumpSpec, ModelSpec, TwoFactorParams, ValidatedHestonParams,
    VolFactor, h_ekh_minus_h_tilde, h_minus_h_tilde, h_tilde,
};
use crate::moments::{
    FactorIvPolys, MomentsError, d1_moment_system, d2_return_gamma, d2_variance_cross_moment,
    d2_variance_raw_moment, d3_deep_covs_from_polys, d3_system_from_polys,
};
use crate::simulate::ReturnSeries;
use solver::{NmOptions, nelder_mead};

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("series has {len} observations but at least {min} are required")]
    SeriesTooShort { len: usize, min: usize },
    #[error("invalid estimator configuration: {reason}")]
    InvalidConfig { reason: String },
    #[error("every lag covariance ratio was non-positive; k is not estimable")]
    NoValidLagRatio,
    #[error("averaged lag ratios give a non-positive reversion rate {value}")]
    NonPositiveKEstimate { value: f64 },
    #[error("theta estimate {value} is not positive (k-hat {k_hat})")]
    NegativeTheta { value: f64, k_hat: f64 },
    #[error(
        "sigma_v^2 estimate {value} is not positive \
         (k-hat {k_hat}, theta-hat {theta_hat}, mu-hat {mu_hat})"
    )]
    NegativeSigmaV2 { value: f64, k_hat: f64, theta_hat: f64, mu_hat: f64 },
    #[error("moment matcher found no usable parameters (best residual {best_residual})")]
    SolverDidNotConverge { best_residual: f64 },
    #[error("variance-jump estimation needs a variance observation series")]
    VarianceSeriesRequired,
    #[error("unsupported template: {reason}")]
    UnsupportedTemplate { reason: String },
    #[error("moments: {0}")]
    Moments(#[from] MomentsError),
}

/// Sample moments with the exact normalizations the estimators assume:
/// divisor `N` for the mean and variance, `N - m` for the lag-`m`
/// covariance, and `N - 1` for the squared-return covariance, whose left
/// factor is centred by the raw second moment `(1/N) sum Y_i^2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleMoments {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    /// Lag covariances for `m = 1..=m_max` (index `m - 1`).
    pub cov_lags: Vec<f64>,
    pub covsq1: f64,
}

pub fn sample_moments(returns: &ReturnSeries, m_max: usize) -> Result<SampleMoments, EstimateError> {
    if m_max < 2 {
        return Err(EstimateError::InvalidConfig { reason: format!("m_max must be >= 2, got {m_max}") });
    }
    let y = &returns.values;
    let n = y.len();
    if n <= m_max {
        return Err(EstimateError::SeriesTooShort { len: n, min: m_max + 1 });
    }
    let nf = n as f64;
    let mean = y.iter().sum::<f64>() / nf;
    let ysq_mean = y.iter().map(|v| v * v).sum::<f64>() / nf;
    let variance = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
    let mut cov_lags = Vec::with_capacity(m_max);
    for m in 1..=m_max {
        let s: f64 = (0..n - m).map(|i| (y[i] - mean) * (y[i + m] - mean)).sum();
        cov_lags.push(s / (n - m) as f64);
    }
    let covsq1: f64 =
        (0..n - 1).map(|i| (y[i] * y[i] - ysq_mean) * (y[i + 1] - mean)).sum::<f64>()
            / (n - 1) as f64;
    Ok(SampleMoments { n, mean, variance, cov_lags, covsq1 })
}

/// Configuration of the closed-form chain: the lag depth `M` used by the
/// k estimator (`2 <= M <= 10`) and the minimum series length accepted.
#[derive(Debug, Clone, Copy)]
pub struct EstimatorConfig {
    pub m: usize,
    pub min_n: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self { m: 2, min_n: 1000 }
    }
}

impl EstimatorConfig {
    fn check(&self) -> Result<(), EstimateError> {
        if !(2..=10).contains(&self.m) {
            return Err(EstimateError::InvalidConfig {
                reason: format!("lag depth M must be in 2..=10, got {}", self.m),
            });
        }
        Ok(())
    }
}

/// The averaged lag-ratio estimate of `k` plus which lags were unusable.
#[derive(Debug, Clone, PartialEq)]
pub struct KEstimate {
    pub value: f64,
    pub skipped_lags: Vec<usize>,
}

/// `k` from the geometric decay of the lag covariances: the average over
/// `m = 2..=M` of `ln(cov1/cov_m) / ((m-1) h)`, skipping lags whose ratio is
/// not strictly positive (finite-sample covariances can cross zero).
pub fn estimate_k(sm: &SampleMoments, h: f64, m_lags: usize) -> Result<KEstimate, EstimateError> {
    if !(2..=10).contains(&m_lags) || sm.cov_lags.len() < m_lags {
        return Err(EstimateError::InvalidConfig {
            reason: format!(
                "lag depth {m_lags} needs 2..=10 and {} computed lags",
                sm.cov_lags.len()
            ),
        });
    }
    let cov1 = sm.cov_lags[0];
    let mut sum = 0.0;
    let mut used = 0usize;
    let mut skipped_lags = Vec::new();
    for m in 2..=m_lags {
        let ratio = cov1 / sm.cov_lags[m - 1];
        if ratio.is_finite() && ratio > 0.0 {
            sum += ratio.ln() / ((m as f64 - 1.0) * h);
            used += 1;
        } else {
            skipped_lags.push(m);
        }
    }
    if used == 0 {
        return Err(EstimateError::NoValidLagRatio);
    }
    let value = sum / used as f64;
    if !(value > 0.0) {
        return Err(EstimateError::NonPositiveKEstimate { value });
    }
    Ok(KEstimate { value, skipped_lags })
}

/// Per-parameter asymptotic standard errors (filled in by the asymptotics
/// layer when requested).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HestonStderr {
    pub k: f64,
    pub theta: f64,
    pub sigma_v: f64,
    pub mu: f64,
    pub rho: f64,
}

/// Result of the closed-form chain.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateResult {
    pub params: HestonParams,
    pub stderr: Option<HestonStderr>,
    /// Human-readable notes: skipped lags, applied clamps. Empty on a clean
    /// run.
    pub diagnostics: Vec<String>,
    /// Seconds spent estimating.
    pub wall_time: f64,
}

/// The closed-form chain applied to a return series.
pub fn mm_estimate(
    returns: &ReturnSeries,
    config: &EstimatorConfig,
) -> Result<EstimateResult, EstimateError> {
    config.check()?;
    if returns.len() < config.min_n {
        return Err(EstimateError::SeriesTooShort { len: returns.len(), min: config.min_n });
    }
    let sm = sample_moments(returns, config.m)?;
    mm_estimate_from_moments(&sm, returns.h, config)
}

/// The closed-form chain applied to precomputed moments. Feeding exact
/// population moments through this function returns the generating
/// parameters (the round-trip is an algebraic identity, which the tests pin
/// to 1e-10 relative accuracy).
pub fn mm_estimate_from_moments(
    sm: &SampleMoments,
    h: f64,
    config: &EstimatorConfig,
) -> Result<EstimateResult, EstimateError> {
    let t0 = Instant::now();
    config.check()?;
    let kest = estimate_k(sm, h, config.m)?;
    let k = kest.value;
    let mut diagnostics: Vec<String> = kest
        .skipped_lags
        .iter()
        .map(|m| format!("k-hat: skipped lag {m} (non-positive covariance ratio)"))
        .collect();

    let ht = h_tilde(k, h);
    let hmt = h_minus_h_tilde(k, h);
    let dh = h_ekh_minus_h_tilde(k, h);
    let cov1 = sm.cov_lags[0];

    let theta = sm.variance / h - 2.0 * hmt / (h * k * ht * ht) * cov1;
    if !(theta > 0.0) {
        return Err(EstimateError::NegativeTheta { value: theta, k_hat: k });
    }
    let mu = sm.mean / h + theta / 2.0;

    let num = 4.0 * k * sm.mean + 8.0 * dh / (theta * ht.powi(3)) * cov1
        - 2.0 * k * sm.covsq1 / cov1;
    let den = theta * ht * ht / (2.0 * cov1) - dh / (k * ht);
    let sv2 = num / den;
    if !(sv2 > 0.0) {
        return Err(EstimateError::NegativeSigmaV2 {
            value: sv2,
            k_hat: k,
            theta_hat: theta,
            mu_hat: mu,
        });
    }
    let sv = sv2.sqrt();

    let rho_raw = sv / (4.0 * k) - 2.0 / (theta * sv * ht * ht) * cov1;
    let rho = rho_raw.clamp(-1.0, 1.0);
    if rho != rho_raw {
        diagnostics.push(format!("rho clamped from {rho_raw:.6} to {rho}"));
    }

    Ok(EstimateResult {
        params: HestonParams::new(mu, k, theta, sv, rho),
        stderr: None,
        diagnostics,
        wall_time: t0.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------------------
// Extension moment matching
// ---------------------------------------------------------------------------

/// Observed data for extension estimation: returns, plus the variance series
/// required by the variance-jump variant.
#[derive(Debug, Clone, Copy)]
pub struct EstimationData<'a> {
    pub returns: &'a ReturnSeries,
    pub variance: Option<&'a [f64]>,
}

/// Controls for the multi-start matcher.
#[derive(Debug, Clone, Copy)]
pub struct ExtensionConfig {
    /// Latin-hypercube starts (in addition to the template and the
    /// closed-form-informed start).
    pub starts: usize,
    /// Objective-evaluation budget per Nelder-Mead run.
    pub max_evals: usize,
    /// Seed of the start sampler; the whole fit is deterministic given
    /// `(data, config)`.
    pub seed: u64,
    /// Minimum return-series length accepted.
    pub min_n: usize,
}

impl Default for ExtensionConfig {
    fn default() -> Self {
        Self { starts: 16, max_evals: 12_000, seed: 7, min_n: 1000 }
    }
}

/// Best-fit extension model and the match quality.
#[derive(Debug, Clone, Serialize)]
pub struct ExtensionFit {
    pub model: ModelSpec,
    /// Sum of squared relative residuals at the fitted parameters.
    pub residual: f64,
    /// Whether the winning Nelder-Mead run collapsed its simplex (as opposed
    /// to exhausting its budget).
    pub converged: bool,
    pub diagnostics: Vec<String>,
    pub wall_time: f64,
}

/// Fits one of the three extension variants to data by moment matching. The
/// template picks the variant and the jump-size family, and its parameter
/// values seed one of the starts.
pub fn extension_estimate(
    template: &ModelSpec,
    data: &EstimationData,
    config: &ExtensionConfig,
) -> Result<ExtensionFit, EstimateError> {
    let t0 = Instant::now();
    let kind = SpaceKind::of(template)?;
    let n = data.returns.len();
    if n < config.min_n {
        return Err(EstimateError::SeriesTooShort { len: n, min: config.min_n });
    }
    if matches!(kind, SpaceKind::VarianceJump(_)) && data.variance.is_none() {
        return Err(EstimateError::VarianceSeriesRequired);
    }
    if let Some(v) = data.variance
        && v.len() < 4
    {
        return Err(EstimateError::SeriesTooShort { len: v.len(), min: 4 });
    }

    let stats = compute_sample_stats(data.returns, data.variance);
    let targets: Vec<(String, f64)> = entry_names(kind)
        .iter()
        .map(|name| (name.to_string(), sample_value(&stats, name).expect("known name")))
        .collect();

    let mut start_models = vec![*template];
    let mut diagnostics = Vec::new();
    match mm_estimate(data.returns, &EstimatorConfig { m: 2, min_n: config.min_n }) {
        Ok(mm) => start_models.push(informed_start(kind, &mm.params)),
        Err(e) => diagnostics.push(format!("closed-form warm start unavailable: {e}")),
    }

    let mut fit = fit_core(kind, &targets, data.returns.h, config, &start_models)?;
    fit.diagnostics.extend(diagnostics);
    fit.wall_time = t0.elapsed().as_secs_f64();
    Ok(fit)
}

/// Fits an extension variant directly to target moment values (the
/// population fixed-point check, and the entry point for matching externally
/// computed statistics). Targets must carry the entry names of the variant's
/// population system, in order.
pub fn fit_extension_to_targets(
    template: &ModelSpec,
    targets: &[(String, f64)],
    h: f64,
    config: &ExtensionConfig,
) -> Result<ExtensionFit, EstimateError> {
    let t0 = Instant::now();
    let kind = SpaceKind::of(template)?;
    let mut fit = fit_core(kind, targets, h, config, &[*template])?;
    fit.wall_time = t0.elapsed().as_secs_f64();
    Ok(fit)
}

/// Which search space a template selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SpaceKind {
    ReturnJump(JumpKind),
    VarianceJump(JumpKind),
    TwoFactor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum JumpKind {
    Normal,
    Exponential,
}

impl JumpKind {
    fn of(dist: &JumpDist) -> Self {
        match dist {
            JumpDist::Normal { .. } => JumpKind::Normal,
            JumpDist::Exponential { .. } => JumpKind::Exponential,
        }
    }
}

impl SpaceKind {
    fn of(template: &ModelSpec) -> Result<Self, EstimateError> {
        match template {
            ModelSpec::Heston(_) => Err(EstimateError::UnsupportedTemplate {
                reason: "the baseline model has closed-form estimators; use mm_estimate".into(),
            }),
            ModelSpec::ReturnJump(_, j) => Ok(SpaceKind::ReturnJump(JumpKind::of(&j.dist))),
            ModelSpec::VarianceJump(_, j) => Ok(SpaceKind::VarianceJump(JumpKind::of(&j.dist))),
            ModelSpec::TwoFactor(_) => Ok(SpaceKind::TwoFactor),
        }
    }

}

/// The statistics matched per variant, by population-entry name.
fn entry_names(kind: SpaceKind) -> &'static [&'static str] {
    match kind {
        SpaceKind::ReturnJump(_) => {
            &["mean", "variance", "cov1", "cov2", "covsq1", "cov_y_ysq", "cm3", "cm4"]
        }
        SpaceKind::VarianceJump(_) => &[
            "mean", "variance", "cov1", "cov2", "covsq1", "v_raw1", "v_raw2", "v_raw3", "v_raw4",
            "v_cross12", "v_cross21",
        ],
        SpaceKind::TwoFactor => {
            &["mean", "variance", "cov1", "cov2", "covsq1", "cov_y_ysq", "cm3", "cov3", "cov4"]
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Transformed coordinates -> model. `None` when the coordinates are
/// non-finite or decode to an invalid jump spec.
fn decode(kind: SpaceKind, x: &[f64]) -> Option<ModelSpec> {
    if x.iter().any(|v| !v.is_finite()) {
        return None;
    }
    match kind {
        SpaceKind::ReturnJump(jk) | SpaceKind::VarianceJump(jk) => {
            let (mu, k, theta) = (x[0], x[1].exp(), x[2].exp());
            let frac = sigmoid(x[3]);
            let sigma_v = (frac * 2.0 * k * theta).sqrt();
            let rho = x[4].tanh();
            let lambda = x[5].exp();
            let dist = match jk {
                JumpKind::Normal => JumpDist::Normal { mean: x[6], sd: x[7].exp() },
                JumpKind::Exponential => JumpDist::Exponential { mean: x[6].exp() },
            };
            let p = HestonParams::new(mu, k, theta, sigma_v, rho);
            let j = JumpSpec::new(lambda, dist).ok()?;
            Some(match kind {
                SpaceKind::ReturnJump(_) => ModelSpec::ReturnJump(p, j),
                _ => ModelSpec::VarianceJump(p, j),
            })
        }
        SpaceKind::TwoFactor => {
            let mu = x[0];
            let k1 = x[1].exp();
            let theta1 = x[2].exp();
            let f1 = sigmoid(x[3]);
            let k2 = k1 * (1.0 + x[4].exp());
            let theta2 = x[5].exp();
            let f2 = sigmoid(x[6]);
            let two = TwoFactorParams {
                mu,
                factor1: VolFactor {
                    k: k1,
                    theta: theta1,
                    sigma_v: (f1 * 2.0 * k1 * theta1).sqrt(),
                },
                factor2: VolFactor {
                    k: k2,
                    theta: theta2,
                    sigma_v: (f2 * 2.0 * k2 * theta2).sqrt(),
                },
            };
            Some(ModelSpec::TwoFactor(two))
        }
    }
}

/// Model -> transformed coordinates. Boundary values (Feller equality,
/// |rho| = 1) are nudged inward so the transforms stay finite.
fn encode(kind: SpaceKind, model: &ModelSpec) -> Option<Vec<f64>> {
    let frac_of = |p: &HestonParams| {
        (p.sigma_v * p.sigma_v / (2.0 * p.k * p.theta)).clamp(1e-9, 1.0 - 1e-9)
    };
    match (kind, model) {
        (SpaceKind::ReturnJump(jk), ModelSpec::ReturnJump(p, j))
        | (SpaceKind::VarianceJump(jk), ModelSpec::VarianceJump(p, j)) => {
            let mut x = vec![
                p.mu,
                p.k.ln(),
                p.theta.ln(),
                logit(frac_of(p)),
                p.rho.clamp(-1.0 + 1e-12, 1.0 - 1e-12).atanh(),
                j.lambda.max(1e-6).ln(),
            ];
            match (jk, &j.dist) {
                (JumpKind::Normal, JumpDist::Normal { mean, sd }) => {
                    x.push(*mean);
                    x.push(sd.ln());
                }
                (JumpKind::Exponential, JumpDist::Exponential { mean }) => x.push(mean.ln()),
                _ => return None,
            }
            Some(x)
        }
        (SpaceKind::TwoFactor, ModelSpec::TwoFactor(t)) => {
            let (a, b) = if t.factor1.k <= t.factor2.k {
                (t.factor1, t.factor2)
            } else {
                (t.factor2, t.factor1)
            };
            let ratio = (b.k / a.k - 1.0).max(1e-9);
            let pa = a.as_heston(t.mu);
            let pb = b.as_heston(t.mu);
            Some(vec![
                t.mu,
                a.k.ln(),
                a.theta.ln(),
                logit(frac_of(&pa)),
                ratio.ln(),
                b.theta.ln(),
                logit(frac_of(&pb)),
            ])
        }
        _ => None,
    }
}

/// Latin-hypercube box per dimension, in transformed coordinates.
fn space_box(kind: SpaceKind) -> Vec<(f64, f64)> {
    let mu = (-0.3, 0.5);
    let ln_k = (0.02f64.ln(), 1.5f64.ln());
    let ln_theta = (0.02f64.ln(), 0.8f64.ln());
    let frac = (logit(0.05), logit(0.9));
    let rho = ((-0.9f64).atanh(), 0.3f64.atanh());
    let ln_lambda = (0.02f64.ln(), 1.5f64.ln());
    match kind {
        SpaceKind::ReturnJump(JumpKind::Normal) | SpaceKind::VarianceJump(JumpKind::Normal) => {
            vec![mu, ln_k, ln_theta, frac, rho, ln_lambda, (-0.03, 0.03), (0.005f64.ln(), 0.08f64.ln())]
        }
        SpaceKind::ReturnJump(JumpKind::Exponential)
        | SpaceKind::VarianceJump(JumpKind::Exponential) => {
            vec![mu, ln_k, ln_theta, frac, rho, ln_lambda, (0.01f64.ln(), 0.15f64.ln())]
        }
        SpaceKind::TwoFactor => {
            let ln_k1 = (0.02f64.ln(), 0.8f64.ln());
            let ln_th = (0.02f64.ln(), 0.5f64.ln());
            let ln_gap = (0.5f64.ln(), 8.0f64.ln());
            vec![mu, ln_k1, ln_th, frac, ln_gap, ln_th, frac]
        }
    }
}

/// Initial simplex offsets per dimension: wide for the smooth transformed
/// scales, narrow for the raw (drift-like) coordinates.
fn space_steps(kind: SpaceKind) -> Vec<f64> {
    match kind {
        SpaceKind::ReturnJump(JumpKind::Normal) | SpaceKind::VarianceJump(JumpKind::Normal) => {
            vec![0.05, 0.35, 0.35, 0.35, 0.35, 0.35, 0.01, 0.35]
        }
        SpaceKind::ReturnJump(JumpKind::Exponential)
        | SpaceKind::VarianceJump(JumpKind::Exponential) => {
            vec![0.05, 0.35, 0.35, 0.35, 0.35, 0.35, 0.35]
        }
        SpaceKind::TwoFactor => vec![0.05, 0.35, 0.35, 0.35, 0.35, 0.35, 0.35],
    }
}

/// Fourth central return moment of the return-jump model: cumulants of the
/// independent compound-Poisson part add, so
/// `cm4[y] = cm4[y_o] - 3 var[y_o]^2 + lam h E[j^4] + 3 var[y]^2`.
fn d1_cm4(params: &ValidatedHestonParams, jump: &JumpSpec, h: f64) -> Result<f64, MomentsError> {
    let e = engine::engine();
    let cm4_o = e.central_moment_return_at(4, params, h)?;
    let var_o = e.central_moment_return_at(2, params, h)?;
    let lh = jump.lambda * h;
    let var = var_o + lh * jump.size_moment(2);
    Ok(cm4_o - 3.0 * var_o * var_o + lh * jump.size_moment(4) + 3.0 * var * var)
}

/// Population values for the matched statistics of a (valid) candidate.
fn population_values(
    model: &ModelSpec,
    h: f64,
    d3_polys: Option<&FactorIvPolys>,
) -> Result<Vec<f64>, MomentsError> {
    match model {
        ModelSpec::ReturnJump(p, j) => {
            let vp = p.validate().expect("caller validated");
            let sys = d1_moment_system(&vp, j, h)?;
            let mut values: Vec<f64> = sys.entries.into_iter().map(|(_, v)| v).collect();
            values.push(d1_cm4(&vp, j, h)?);
            Ok(values)
        }
        ModelSpec::VarianceJump(p, j) => {
            let vp = p.validate().expect("caller validated");
            let g = d2_return_gamma(&vp, j, h)?;
            let mut values: Vec<f64> = g.entries().iter().map(|(_, v)| *v).collect();
            for m in 1..=4 {
                values.push(d2_variance_raw_moment(&vp, j, m)?);
            }
            values.push(d2_variance_cross_moment(&vp, j, h, 1, 2)?);
            values.push(d2_variance_cross_moment(&vp, j, h, 2, 1)?);
            Ok(values)
        }
        ModelSpec::TwoFactor(t) => {
            let polys = d3_polys.expect("two-factor matcher prebuilds its polynomials");
            let mut values: Vec<f64> =
                d3_system_from_polys(polys, t, h).entries.into_iter().map(|(_, v)| v).collect();
            values.extend(d3_deep_covs_from_polys(polys, t, h));
            Ok(values)
        }
        ModelSpec::Heston(_) => unreachable!("baseline is rejected before matching"),
    }
}

/// Stratified start sampling: one random permutation per dimension.
fn latin_hypercube(rng: &mut ChaCha12Rng, count: usize, boxes: &[(f64, f64)]) -> Vec<Vec<f64>> {
    let dims = boxes.len();
    let mut points = vec![vec![0.0; dims]; count];
    for (d, (lo, hi)) in boxes.iter().enumerate() {
        let mut order: Vec<usize> = (0..count).collect();
        for i in (1..count).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for (point, cell) in points.iter_mut().zip(order) {
            let u: f64 = rng.random();
            point[d] = lo + (cell as f64 + u) / count as f64 * (hi - lo);
        }
    }
    points
}

fn fit_core(
    kind: SpaceKind,
    targets: &[(String, f64)],
    h: f64,
    config: &ExtensionConfig,
    start_models: &[ModelSpec],
) -> Result<ExtensionFit, EstimateError> {
    let names = entry_names(kind);
    if targets.len() != names.len()
        || targets.iter().zip(names).any(|((got, _), want)| got != want)
    {
        return Err(EstimateError::InvalidConfig {
            reason: format!(
                "targets must be exactly {names:?} in order, got {:?}",
                targets.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>()
            ),
        });
    }
    let d3_polys = match kind {
        SpaceKind::TwoFactor => Some(FactorIvPolys::build(engine::engine())?),
        _ => None,
    };

    // Relative residuals with an absolute floor tied to the system's scale,
    // so near-zero targets (the mean can be exactly 0) cannot dominate.
    let values: Vec<f64> = targets.iter().map(|(_, v)| *v).collect();
    let variance_target = targets
        .iter()
        .find(|(n, _)| n == "variance")
        .map(|(_, v)| v.abs())
        .unwrap_or(1.0);
    let floor = 1e-2 * variance_target.max(1e-12);
    let scales: Vec<f64> = values.iter().map(|v| v.abs().max(floor)).collect();

    let objective = |x: &[f64]| -> f64 {
        let Some(model) = decode(kind, x) else { return f64::INFINITY };
        if model.validate().is_err() {
            return f64::INFINITY;
        }
        match population_values(&model, h, d3_polys.as_ref()) {
            Ok(pop) => pop
                .iter()
                .zip(&values)
                .zip(&scales)
                .map(|((p, t), s)| ((p - t) / s).powi(2))
                .sum(),
            Err(_) => f64::INFINITY,
        }
    };

    let mut starts: Vec<Vec<f64>> = start_models.iter().filter_map(|m| encode(kind, m)).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    starts.extend(latin_hypercube(&mut rng, config.starts.max(1), &space_box(kind)));

    let steps = space_steps(kind);
    let polish_steps: Vec<f64> = steps.iter().map(|s| s * 0.02).collect();
    let opts = NmOptions { max_evals: config.max_evals, ..Default::default() };

    let mut best: Option<(solver::NmResult, usize)> = None;
    for (i, start) in starts.iter().enumerate() {
        let run = nelder_mead(objective, start, &steps, &opts);
        let polished = nelder_mead(objective, &run.x, &polish_steps, &opts);
        let run = if polished.fx < run.fx { polished } else { run };
        if best.as_ref().is_none_or(|(b, _)| run.fx < b.fx) {
            best = Some((run, i));
        }
    }
    let (best, best_start) = best.expect("at least one start");

    if !best.fx.is_finite() {
        return Err(EstimateError::SolverDidNotConverge { best_residual: best.fx });
    }
    let model = decode(kind, &best.x).expect("finite best point decodes");
    Ok(ExtensionFit {
        model,
        residual: best.fx,
        converged: best.converged,
        diagnostics: vec![format!(
            "best of {} starts: #{best_start}, residual {:.3e}, {} evaluations",
            starts.len(),
            best.fx,
            best.evals
        )],
        wall_time: 0.0,
    })
}

/// Maps the closed-form baseline estimate into a starting point for the
/// requested variant: keep the diffusion parameters (Feller-clamped), start
/// jumps small, split factors around the estimated rate.
fn informed_start(kind: SpaceKind, p: &HestonParams) -> ModelSpec {
    let frac = (p.sigma_v * p.sigma_v / (2.0 * p.k * p.theta)).clamp(0.02, 0.95);
    let sigma_v = (frac * 2.0 * p.k * p.theta).sqrt();
    let base = HestonParams::new(p.mu, p.k, p.theta, sigma_v, p.rho.clamp(-0.99, 0.99));
    match kind {
        SpaceKind::ReturnJump(jk) => {
            let dist = match jk {
                JumpKind::Normal => JumpDist::Normal { mean: 0.0, sd: 0.02 },
                JumpKind::Exponential => JumpDist::Exponential { mean: 0.05 },
            };
            ModelSpec::ReturnJump(base, JumpSpec { lambda: 0.1, dist })
        }
        SpaceKind::VarianceJump(jk) => {
            let dist = match jk {
                JumpKind::Normal => JumpDist::Normal { mean: 0.0, sd: 0.02 },
                JumpKind::Exponential => JumpDist::Exponential { mean: 0.05 },
            };
            ModelSpec::VarianceJump(base, JumpSpec { lambda: 0.2, dist })
        }
        SpaceKind::TwoFactor => ModelSpec::TwoFactor(TwoFactorParams {
            mu: base.mu,
            factor1: VolFactor {
                k: 0.6 * base.k,
                theta: 0.5 * base.theta,
                sigma_v: (frac * 2.0 * 0.6 * base.k * 0.5 * base.theta).sqrt(),
            },
            factor2: VolFactor {
                k: 1.6 * base.k,
                theta: 0.5 * base.theta,
                sigma_v: (frac * 2.0 * 1.6 * base.k * 0.5 * base.theta).sqrt(),
            },
        }),
    }
}

/// Everything the matchers can ask of a data set, computed once.
struct SampleStats {
    mean: f64,
    variance: f64,
    /// Lag covariances for lags 1..=4 (divisor `N - m`).
    cov: [f64; 4],
    covsq1: f64,
    cov_y_ysq: f64,
    cm3: f64,
    cm4: f64,
    v_raw: Option<[f64; 4]>,
    /// `(1/(M-1)) sum v_i v_{i+1}^2` and `(1/(M-1)) sum v_i^2 v_{i+1}`.
    v_cross: Option<[f64; 2]>,
}

fn compute_sample_stats(returns: &ReturnSeries, variance: Option<&[f64]>) -> SampleStats {
    let y = &returns.values;
    let n = y.len();
    let nf = n as f64;
    let mean = y.iter().sum::<f64>() / nf;
    let ysq_mean = y.iter().map(|v| v * v).sum::<f64>() / nf;
    let variance_s = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
    let cm3 = y.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / nf;
    let cm4 = y.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / nf;
    let mut cov = [0.0; 4];
    for (m, slot) in cov.iter_mut().enumerate() {
        let lag = m + 1;
        *slot = (0..n - lag).map(|i| (y[i] - mean) * (y[i + lag] - mean)).sum::<f64>()
            / (n - lag) as f64;
    }
    let covsq1 = (0..n - 1)
        .map(|i| (y[i] * y[i] - ysq_mean) * (y[i + 1] - mean))
        .sum::<f64>()
        / (n - 1) as f64;
    let cov_y_ysq = (0..n - 1)
        .map(|i| (y[i] - mean) * (y[i + 1] * y[i + 1] - ysq_mean))
        .sum::<f64>()
        / (n - 1) as f64;
    let v_raw = variance.map(|v| {
        let m = v.len() as f64;
        let mut raw = [0.0; 4];
        for (r, slot) in raw.iter_mut().enumerate() {
            *slot = v.iter().map(|x| x.powi(r as i32 + 1)).sum::<f64>() / m;
        }
        raw
    });
    let v_cross = variance.map(|v| {
        let m = (v.len() - 1) as f64;
        let vv12 = (0..v.len() - 1).map(|i| v[i] * v[i + 1] * v[i + 1]).sum::<f64>() / m;
        let vv21 = (0..v.len() - 1).map(|i| v[i] * v[i] * v[i + 1]).sum::<f64>() / m;
        [vv12, vv21]
    });
    SampleStats {
        mean,
        variance: variance_s,
        cov,
        covsq1,
        cov_y_ysq,
        cm3,
        cm4,
        v_raw,
        v_cross,
    }
}

fn sample_value(stats: &SampleStats, name: &str) -> Option<f64> {
    Some(match name {
        "mean" => stats.mean,
        "variance" => stats.variance,
        "cov1" => stats.cov[0],
        "cov2" => stats.cov[1],
        "cov3" => stats.cov[2],
        "cov4" => stats.cov[3],
        "covsq1" => stats.covsq1,
        "cov_y_ysq" => stats.cov_y_ysq,
        "cm3" => stats.cm3,
        "cm4" => stats.cm4,
        "v_raw1" => stats.v_raw?[0],
        "v_raw2" => stats.v_raw?[1],
        "v_raw3" => stats.v_raw?[2],
        "v_raw4" => stats.v_raw?[3],
        "v_cross12" => stats.v_cross?[0],
        "v_cross21" => stats.v_cross?[1],
        _ => return None,
    })
}
