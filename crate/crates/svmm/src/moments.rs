//! Closed-form population moments of log-returns, and the extended moment
//! systems of the three model variants.
//!
//! The estimation theory rests on five stationary return moments,
//!
//! ```text
//! gamma = ( E[y],  var(y),  cov(y_n, y_{n+1}),  cov(y_n, y_{n+2}),
//!           cov(y_n^2, y_{n+1}) ),
//! ```
//!
//! which have explicit closed forms for the baseline model
//! ([`population_gamma`]). The extensions add equations: compound-Poisson
//! return jumps shift the first two moments and the third-moment block
//! ([`d1_moment_system`]), variance jumps change every moment and add a
//! stationary variance-moment ladder ([`d2_moment_system`],
//! [`d2_variance_jump_moment`]), and a second variance factor splits each
//! covariance into per-factor contributions ([`d3_moment_system`]).
//!
//! Everything that lacks a printed closed form (third central moments, the
//! `cov(y, y'^2)` mirror, all per-factor integrated-variance terms, and every
//! variance-jump return moment) is derived by the symbolic [`crate::engine`],
//! which also cross-validates the closed forms to 1e-10 relative accuracy.

use crate::engine::{self, Engine, EvalCtx, Poly, ctx_for};
use crate::model::{
    self, JumpSpec, TwoFactorParams, ValidatedHestonParams, h_ekh_minus_h_tilde, h_minus_h_tilde,
    h_tilde,
};
use serde::Serialize;
use thiserror::Error;

/// Errors from the closed-form moment layer.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum MomentsError {
    /// A variance-moment order outside the supported range `1..=4`.
    #[error("variance-moment order {m} unsupported; the ladder covers 1..=4")]
    UnsupportedOrder { m: u32 },
    /// The derivation engine refused a request (order/shape limits).
    #[error("engine: {0}")]
    Engine(#[from] engine::EngineError),
}

/// The five population return moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentVector {
    /// `E[y]`.
    pub mean: f64,
    /// `var(y)`.
    pub variance: f64,
    /// `cov(y_n, y_{n+1})`.
    pub cov1: f64,
    /// `cov(y_n, y_{n+2})`; equals `e^(-k h) cov1` exactly for the baseline.
    pub cov2: f64,
    /// `cov(y_n^2, y_{n+1})`.
    pub covsq1: f64,
}

impl MomentVector {
    /// The five values in canonical order, with their CSV-safe names.
    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("mean", self.mean),
            ("variance", self.variance),
            ("cov1", self.cov1),
            ("cov2", self.cov2),
            ("covsq1", self.covsq1),
        ]
    }
}

/// Which extension a moment system describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    Heston,
    ReturnJump,
    VarianceJump,
    TwoFactor,
}

/// An ordered list of (descriptor, population value) pairs: seven entries
/// for the return-jump and two-factor systems, the five return moments plus
/// the four-step variance ladder for the variance-jump system.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtendedMomentSystem {
    pub kind: SystemKind,
    pub entries: Vec<(String, f64)>,
}

impl ExtendedMomentSystem {
    pub fn value(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

/// Exact closed-form population moment vector of the baseline model.
///
/// ```text
/// E[y]   = (mu - theta/2) h
/// var(y) = theta h + (sigma_v^2/(4 k^2) - rho sigma_v / k) theta (h - h_tilde)
/// cov1   = theta h_tilde^2 (sigma_v^2/(8k) - rho sigma_v / 2)
/// cov2   = e^(-k h) cov1
/// covsq1 = (theta sigma_v^4/(8 k^3)) h_tilde (h e^(-kh) - h_tilde)
///        + (theta sigma_v^2 mu h/(4k) - theta^2 sigma_v^2 h/(8k)
///           - theta sigma_v^2/(4k)) h_tilde^2
///        - (rho sigma_v / 2) h_tilde [ (3 sigma_v^2/(2k^2)
///           - 2 rho sigma_v / k) theta (h e^(-kh) - h_tilde)
///           + (2 mu theta - theta^2) h h_tilde ]
/// ```
///
/// All `(h - h_tilde)`-type combinations go through the series-guarded
/// helpers in [`crate::model`].
pub fn population_gamma(params: &ValidatedHestonParams, h: f64) -> MomentVector {
    let (mu, k, theta, sv, rho) = (params.mu, params.k, params.theta, params.sigma_v, params.rho);
    let ht = h_tilde(k, h);
    let hmt = h_minus_h_tilde(k, h);
    let dh = h_ekh_minus_h_tilde(k, h);
    let ekh = (-k * h).exp();

    let mean = (mu - theta / 2.0) * h;
    let variance = theta * h + (sv * sv / (4.0 * k * k) - rho * sv / k) * theta * hmt;
    let cov1 = theta * ht * ht * (sv * sv / (8.0 * k) - rho * sv / 2.0);
    let cov2 = ekh * cov1;
    let covsq1 = theta * sv.powi(4) / (8.0 * k.powi(3)) * ht * dh
        + (theta * sv * sv * mu * h / (4.0 * k)
            - theta * theta * sv * sv * h / (8.0 * k)
            - theta * sv * sv / (4.0 * k))
            * ht
            * ht
        - rho * sv / 2.0
            * ht
            * ((3.0 * sv * sv / (2.0 * k * k) - 2.0 * rho * sv / k) * theta * dh
                + (2.0 * mu * theta - theta * theta) * h * ht);

    MomentVector { mean, variance, cov1, cov2, covsq1 }
}

/// Lagged return covariance `cov(y_n, y_{n+m}) = e^(-(m-1) k h) cov1`.
pub fn cov_lag_m(params: &ValidatedHestonParams, h: f64, m: u32) -> f64 {
    assert!(m >= 1, "cov_lag_m requires m >= 1");
    let cov1 = population_gamma(params, h).cov1;
    (-(m as f64 - 1.0) * params.k * h).exp() * cov1
}

/// Stationary moment `E[(v_n - theta)^m]` of the variance process with
/// compound-Poisson jumps, `1 <= m <= 4`.
///
/// The raw moments come from the exact generator ladder (stationarity of
/// `E[L v^m]` for the jump-diffusion generator `L`; see
/// [`Engine::stationary_moment_poly`]) and are then recentred about `theta`
/// binomially. At `lambda = 0` this reduces to the central Gamma-law moments
/// of the pure process.
pub fn d2_variance_jump_moment(
    params: &ValidatedHestonParams,
    jump: &JumpSpec,
    m: u32,
) -> Result<f64, MomentsError> {
    if !(1..=4).contains(&m) {
        return Err(MomentsError::UnsupportedOrder { m });
    }
    let mut raw = vec![1.0];
    for j in 1..=m {
        raw.push(d2_variance_raw_moment(params, jump, j)?);
    }
    let mut total = 0.0;
    let mut binom = 1.0f64;
    for i in 0..=m {
        total += binom * (-params.theta).powi((m - i) as i32) * raw[i as usize];
        binom = binom * (m - i) as f64 / (i + 1) as f64;
    }
    Ok(total)
}

/// Raw stationary moment `E[v_n^m]` of the variance process with
/// compound-Poisson jumps, `1 <= m <= 4`; the data-matchable companion of the
/// centred ladder (a sample path gives raw moments directly, while the
/// centred ones would need `theta`).
pub fn d2_variance_raw_moment(
    params: &ValidatedHestonParams,
    jump: &JumpSpec,
    m: u32,
) -> Result<f64, MomentsError> {
    if !(1..=4).contains(&m) {
        return Err(MomentsError::UnsupportedOrder { m });
    }
    let e = engine::jump_engine();
    let ctx = jump_ctx(params, 1.0, jump);
    Ok(e.stationary_moment_poly(m).eval(&ctx))
}

/// Raw cross moments `E[v_n^a v_{n+1}^b]` of the variance series observed on
/// the grid (`a, b >= 1`, `a + b <= 4`). These see the transition over one
/// interval, not just the stationary law, and therefore carry information
/// about how the variance of variance splits between diffusion and jumps --
/// which the stationary ladder alone nearly confounds.
pub fn d2_variance_cross_moment(
    params: &ValidatedHestonParams,
    jump: &JumpSpec,
    h: f64,
    a: u32,
    b: u32,
) -> Result<f64, MomentsError> {
    let e = engine::jump_engine();
    Ok(e.cross_v_poly(a, b, 1)?.eval(&jump_ctx(params, h, jump)))
}

/// Evaluation bindings carrying jump intensity and size moments (`h` is also
/// needed because return expressions involve the interval length).
fn jump_ctx(params: &ValidatedHestonParams, h: f64, jump: &JumpSpec) -> EvalCtx {
    let mut jm = [0.0; 6];
    for (r, slot) in jm.iter_mut().enumerate() {
        *slot = jump.size_moment(r as u32 + 1);
    }
    ctx_for(params, h).with_jumps(jump.lambda, jm)
}

/// The seven-entry population moment system of the return-jump extension:
/// the no-jump values plus the independent compound-Poisson contribution.
///
/// ```text
/// E[y]           = E[y_o] + lam h E[j]
/// var(y)         = var(y_o) + lam h E[j^2]
/// cov1, cov2     unchanged (jumps are i.i.d. across intervals)
/// cov(y^2, y')   = cov(y_o^2, y_o') + 2 lam h E[j] cov1
/// cov(y, y'^2)   = cov(y_o, y_o'^2) + 2 lam h E[j] cov1
/// cm3[y]         = cm3[y_o] + lam h E[j^3]
/// ```
pub fn d1_moment_system(
    params: &ValidatedHestonParams,
    jump: &JumpSpec,
    h: f64,
) -> Result<ExtendedMomentSystem, MomentsError> {
    let base = population_gamma(params, h);
    let e = engine::engine();
    let cm3_o = e.central_moment_return_at(3, params, h)?;
    let cov_y_ysq_o = e.cross_moment(1, 2, 1, params, h)? + 2.0 * base.mean * base.cov1;
    let ej = jump.lambda * h * jump.size_moment(1);
    Ok(ExtendedMomentSystem {
        kind: SystemKind::ReturnJump,
        entries: vec![
            ("mean".into(), base.mean + ej),
            ("variance".into(), base.variance + jump.lambda * h * jump.size_moment(2)),
            ("cov1".into(), base.cov1),
            ("cov2".into(), base.cov2),
            ("covsq1".into(), base.covsq1 + 2.0 * ej * base.cov1),
            ("cov_y_ysq".into(), cov_y_ysq_o + 2.0 * ej * base.cov1),
            ("cm3".into(), cm3_o + jump.lambda * h * jump.size_moment(3)),
        ],
    })
}

/// Population return moment vector of the variance-jump extension, fully
/// engine-derived (no closed forms are printed for this variant).
pub fn d2_return_gamma(
    params: &ValidatedHestonParams,
    jump: &JumpSpec,
    h: f64,
) -> Result<MomentVector, MomentsError> {
    let e = engine::jump_engine();
    let ctx = jump_ctx(params, h, jump);
    let mean = e.expect_stationary(&e.return_expr())?.eval(&ctx);
    let variance = e.central_moment_return(2)?.eval(&ctx);
    let cov1 = e.cross_return_poly(1, 1, 1)?.eval(&ctx);
    let cov2 = e.cross_return_poly(1, 1, 2)?.eval(&ctx);
    let covsq1 = e.cross_return_poly(2, 1, 1)?.eval(&ctx) + 2.0 * mean * cov1;
    Ok(MomentVector { mean, variance, cov1, cov2, covsq1 })
}

/// The population moment system of the variance-jump extension: the five
/// return moments plus the stationary variance ladder `E[(v - theta)^m]`,
/// `m = 1..=4` (the ladder is what identifies the jump parameters, since the
/// return moments alone confound jump and diffusion variance).
pub fn d2_moment_system(
    params: &ValidatedHestonParams,
    jump: &JumpSpec,
    h: f64,
) -> Result<ExtendedMomentSystem, MomentsError> {
    let gamma = d2_return_gamma(params, jump, h)?;
    let mut entries: Vec<(String, f64)> =
        gamma.entries().into_iter().map(|(n, v)| (n.to_string(), v)).collect();
    for m in 1..=4 {
        entries.push((format!("v_central{m}"), d2_variance_jump_moment(params, jump, m)?));
    }
    Ok(ExtendedMomentSystem { kind: SystemKind::VarianceJump, entries })
}

/// Centered integrated-variance moments of one CIR factor, engine-derived:
/// `var(IV)`, `cm3[IV]`, and the lag-1 cross moments
/// `E[(IV_n - E IV)^a (IV_{n+1} - E IV)^b]` for the shapes the two-factor
/// system needs.
struct FactorIvTerms {
    var_iv: f64,
    cm3_iv: f64,
    cross11: f64,
    cross11_lag2: f64,
    cross21: f64,
    cross12: f64,
}

/// The symbolic per-factor expressions behind [`FactorIvTerms`]. They do not
/// depend on parameter values, so callers that evaluate many candidate
/// parameter sets (the extension fitter) build them once and re-evaluate.
pub(crate) struct FactorIvPolys {
    var_iv: Poly,
    cm3_iv: Poly,
    cross11: Poly,
    cross11_lag2: Poly,
    cross11_lag3: Poly,
    cross11_lag4: Poly,
    cross21: Poly,
    cross12: Poly,
}

impl FactorIvPolys {
    pub(crate) fn build(e: &Engine) -> Result<Self, MomentsError> {
        let civ = e.centered_iv_expr()?;
        Ok(Self {
            var_iv: e.expect_stationary(&civ.pow(2))?,
            cm3_iv: e.expect_stationary(&civ.pow(3))?,
            cross11: e.cross_expr(&civ, 1, 1, 1)?,
            cross11_lag2: e.cross_expr(&civ, 1, 1, 2)?,
            cross11_lag3: e.cross_expr(&civ, 1, 1, 3)?,
            cross11_lag4: e.cross_expr(&civ, 1, 1, 4)?,
            cross21: e.cross_expr(&civ, 2, 1, 1)?,
            cross12: e.cross_expr(&civ, 1, 2, 1)?,
        })
    }

    fn eval(&self, ctx: &EvalCtx) -> FactorIvTerms {
        FactorIvTerms {
            var_iv: self.var_iv.eval(ctx),
            cm3_iv: self.cm3_iv.eval(ctx),
            cross11: self.cross11.eval(ctx),
            cross11_lag2: self.cross11_lag2.eval(ctx),
            cross21: self.cross21.eval(ctx),
            cross12: self.cross12.eval(ctx),
        }
    }
}

/// The seven-entry population moment system of the two-factor extension.
///
/// With `y = mu h - (IV_1 + IV_2)/2 + I*`, the return noise independent of
/// both factors, and `C_i = IV_i - theta_i h`, conditioning on the variance
/// paths gives
///
/// ```text
/// E[y]         = (mu - (theta_1 + theta_2)/2) h
/// var(y)       = (theta_1 + theta_2) h + (1/4) sum_i var(IV_i)
/// cov_m        = (1/4) sum_i cov(IV_{i,n}, IV_{i,n+m})          (m = 1, 2)
/// cov(y^2,y')  = sum_i [ -(1/8) E[C_i^2 C_i'] + c0 E[C_i C_i'] ]
/// cov(y,y'^2)  = sum_i [ -(1/8) E[C_i C_i'^2] + c0 E[C_i C_i'] ]
/// cm3[y]       = sum_i [ -(1/8) cm3[IV_i] - (3/2) var(IV_i) ]
/// ```
///
/// with `c0 = -1/2 + E[y]/2`. The `-(3/2) var(IV_i)` block in `cm3[y]` comes
/// from `3 E[(-C_i/2) I*^2]` (conditionally on the variance paths, `I*` is
/// centred normal with variance `IV_1 + IV_2`), and is required for the
/// system to agree with the direct one-factor derivation in the degenerate
/// limit — see the `collapses_to_one_factor` test.
pub fn d3_moment_system(two: &TwoFactorParams, h: f64) -> Result<ExtendedMomentSystem, MomentsError> {
    let two = two.validate().expect("validated two-factor params");
    let polys = FactorIvPolys::build(engine::engine())?;
    Ok(d3_system_from_polys(&polys, &two, h))
}

/// Lag-3 and lag-4 return covariances of the two-factor model,
/// `cov_m = (1/4) sum_i cov(IV_{i,n}, IV_{i,n+m})`. Four covariance lags pin
/// the two-exponential decay `A_1 r_1^m + A_2 r_2^m` (two rates, two
/// amplitudes), which is what separates the factors; the extension matcher
/// appends these to the seven-entry system.
pub fn d3_cov_deep_lags(two: &TwoFactorParams, h: f64) -> Result<[f64; 2], MomentsError> {
    let two = two.validate().expect("validated two-factor params");
    let polys = FactorIvPolys::build(engine::engine())?;
    Ok(d3_deep_covs_from_polys(&polys, &two, h))
}

pub(crate) fn d3_deep_covs_from_polys(
    polys: &FactorIvPolys,
    two: &TwoFactorParams,
    h: f64,
) -> [f64; 2] {
    let mut out = [0.0; 2];
    for f in [&two.factor1, &two.factor2] {
        let vf = f.as_heston(0.0).validate().expect("validated factor");
        let ctx = ctx_for(&vf, h);
        out[0] += polys.cross11_lag3.eval(&ctx) / 4.0;
        out[1] += polys.cross11_lag4.eval(&ctx) / 4.0;
    }
    out
}

/// [`d3_moment_system`] with prebuilt symbolic terms; the per-factor
/// parameters must already be valid (the gap condition on the reversion
/// rates is an identifiability constraint, not a prerequisite of the math).
pub(crate) fn d3_system_from_polys(
    polys: &FactorIvPolys,
    two: &TwoFactorParams,
    h: f64,
) -> ExtendedMomentSystem {
    let theta_total = two.factor1.theta + two.factor2.theta;
    let mean = (two.mu - theta_total / 2.0) * h;
    let c0 = -0.5 + mean / 2.0;

    let mut variance = theta_total * h;
    let (mut cov1, mut cov2, mut covsq1, mut cov_y_ysq, mut cm3) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for f in [&two.factor1, &two.factor2] {
        let vf = f.as_heston(0.0).validate().expect("validated factor");
        let ctx = ctx_for(&vf, h);
        let t = polys.eval(&ctx);
        variance += t.var_iv / 4.0;
        cov1 += t.cross11 / 4.0;
        cov2 += t.cross11_lag2 / 4.0;
        covsq1 += -t.cross21 / 8.0 + c0 * t.cross11;
        cov_y_ysq += -t.cross12 / 8.0 + c0 * t.cross11;
        cm3 += -t.cm3_iv / 8.0 - 1.5 * t.var_iv;
    }

    ExtendedMomentSystem {
        kind: SystemKind::TwoFactor,
        entries: vec![
            ("mean".into(), mean),
            ("variance".into(), variance),
            ("cov1".into(), cov1),
            ("cov2".into(), cov2),
            ("covsq1".into(), covsq1),
            ("cov_y_ysq".into(), cov_y_ysq),
            ("cm3".into(), cm3),
        ],
    }
}

/// The seven-entry system of the baseline model (the `lambda -> 0` limit of
/// the return-jump system); used by the extension matcher and by tests.
pub fn heston_moment_system(
    params: &ValidatedHestonParams,
    h: f64,
) -> Result<ExtendedMomentSystem, MomentsError> {
    let zero_jump = JumpSpec::new(0.0, model::JumpDist::Exponential { mean: 1.0 })
        .expect("valid degenerate jump spec");
    let mut sys = d1_moment_system(params, &zero_jump, h)?;
    sys.kind = SystemKind::Heston;
    Ok(sys)
}
