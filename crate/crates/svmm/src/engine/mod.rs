//! Recursive symbolic derivation of conditional and unconditional return
//! moments, with exact rational coefficients.
//!
//! Everything is built from the moments of the interval-local stochastic
//! integrals
//!
//! ```text
//! IE = int e^(k u) sqrt(v) dw_v,   I  = int sqrt(v) dw_v,
//! I* = int sqrt(v) dw,             IEZ = int e^(k u) dz,   Z = z(interval),
//! ```
//!
//! where the integrals run over one observation interval of length `h` and
//! `z` is an optional compound-Poisson jump process in the variance. The key
//! recursion: the drift of `E[IE^a I^b I*^c IEZ^d Z^e | v0]` (by Ito's
//! formula plus the jump generator) only involves moments of strictly lower
//! total order, multiplied by `v(s)`, and `v(s)` itself expands exactly as
//!
//! ```text
//! v(s) = theta + (v0 - theta) e^(-k s)
//!      + sigma_v e^(-k s) IE(s) + e^(-k s) IEZ(s),
//! ```
//!
//! so each drift is a polynomial in `(e^(k s), s)` with known-moment factors
//! and integrates in closed form ([`ito_integrate`]). Iterating from total
//! order 1 upward yields every conditional moment; evaluating at the interval
//! endpoint and closing over the stationary law of `v0` yields unconditional
//! moments of returns and of integrated variance.
//!
//! The log-return over an interval is assembled as
//! `y = mu h - IV/2 + rho I + q I*` with the integrated variance rewritten as
//!
//! ```text
//! IV = theta (h - h_tilde) + h_tilde v0
//!    + (sigma_v/k)(I - e^(-k h) IE) + (1/k)(Z - e^(-k h) IEZ),
//! ```
//!
//! which eliminates IV from the state. Two engine modes exist: the pure
//! diffusion (jump symbols absent) and the variance-jump extension (jump
//! intensity `lam` and size moments `jm1..` kept as formal symbols, so one
//! derivation serves every jump-size distribution).
//!
//! # Concurrency
//!
//! All moment caches sit behind mutexes: concurrent callers are safe, and
//! insertion is exclusive. Derivations are pure, so a racing recomputation
//! inserts an identical value; memoization is observationally transparent
//! (see [`Engine::clear_memo`]).

pub mod poly;

pub use poly::{EvalCtx, Monomial, Poly, rat};

use crate::model::ValidatedHestonParams;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::One;
use std::collections::HashMap;
use std::sync::{Arc, LazyLock, Mutex};
use thiserror::Error;

/// Hard ceiling on the configurable order: jump-size moment symbols exist to
/// order 6, and exponents are stored in small integers.
const ORDER_CEILING: u32 = 6;

/// Default maximum total moment order (enough for third central moments and
/// all `(a, b)` cross moments with `a + b <= 4`, with headroom).
pub const DEFAULT_MAX_ORDER: u32 = 6;

/// Errors from the derivation engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum EngineError {
    /// A requested moment's total order exceeds the configured maximum.
    #[error("moment order {requested} exceeds the configured maximum {max}")]
    OrderLimitExceeded { requested: u32, max: u32 },
    /// A cross-moment shape outside the supported set was requested.
    #[error("unsupported cross-moment shape a={a}, b={b}, lag={lag}; need a,b >= 1, a+b <= 4, lag in 1..=4")]
    UnsupportedShape { a: u32, b: u32, lag: u32 },
}

/// Exponents `(n3, n4, n5)` of `(e^(-kt) IE, I, I*)` in a conditional moment
/// request. The discounted form `e^(-kt) IE` is used so that every public
/// moment polynomial has non-negative exponents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MomentIndex {
    pub n3: u8,
    pub n4: u8,
    pub n5: u8,
}

impl MomentIndex {
    pub fn new(n3: u8, n4: u8, n5: u8) -> Self {
        Self { n3, n4, n5 }
    }

    pub fn total_order(&self) -> u32 {
        (self.n3 + self.n4 + self.n5) as u32
    }
}

/// Raw (undiscounted) state index used internally: exponents of
/// `(IE, I, I*, IEZ, Z)`.
type StateIdx = (u8, u8, u8, u8, u8);

fn state_total(idx: StateIdx) -> u32 {
    (idx.0 + idx.1 + idx.2 + idx.3 + idx.4) as u32
}

fn big_binom(n: u8, k: u8) -> BigRational {
    let mut num = BigInt::one();
    let mut den = BigInt::one();
    for i in 0..k {
        num *= BigInt::from(n - i);
        den *= BigInt::from(i + 1);
    }
    BigRational::new(num, den)
}

/// Exact definite integral over `[0, t]` of a polynomial in `(e^(k s), s)`,
/// term by term, returned in the same in-progress basis (the result is again
/// a polynomial in `(e^(k t), t)`, rendered with symbols `eks`/`s`).
///
/// Uses the closed-form recursion
/// `int e^(a k s) s^b ds = e^(a k s) s^b/(a k) - (b/(a k)) int e^(a k s) s^(b-1) ds`
/// unrolled into explicit coefficients, and the plain power rule for `a = 0`.
/// Every inverse power of `k` becomes a non-negative exponent of the `kinv`
/// symbol.
pub fn ito_integrate(p: &Poly) -> Poly {
    let mut out = Poly::zero();
    for (m, c) in p.iter() {
        let a = m.eks;
        let b = m.spow as i64;
        let base = Monomial { eks: 0, spow: 0, ..*m };
        if a == 0 {
            // power rule: s^b -> s^(b+1)/(b+1)
            let mono = Monomial { spow: m.spow + 1, ..base };
            out.add_term(mono, c * rat(1, b + 1));
        } else {
            // antiderivative F(s) = e^(a k s) * sum_m d_m s^m with
            // d_m = (-1)^(b-m) (b!/m!) / (a k)^(b-m+1); result F(t) - F(0).
            let mut fall = BigInt::one(); // b!/m! falling factorial, built downward
            for mm in (0..=b).rev() {
                let e = (b - mm + 1) as u32;
                let mut d = BigRational::new(fall.clone(), BigInt::from(a).pow(e));
                if (b - mm) % 2 == 1 {
                    d = -d;
                }
                let mono = Monomial {
                    eks: a,
                    spow: mm as u8,
                    kinv: base.kinv + e as u8,
                    ..base
                };
                out.add_term(mono, c * &d);
                if mm == 0 {
                    // subtract F(0): only the m = 0 term survives at s = 0.
                    let mono0 = Monomial { eks: 0, spow: 0, kinv: base.kinv + e as u8, ..base };
                    out.add_term(mono0, -(c * &d));
                }
                if mm > 0 {
                    fall *= BigInt::from(mm);
                }
            }
        }
    }
    out
}

/// Substitutes the interval endpoint `s = h` into an in-progress polynomial:
/// `e^(k s)` powers become negative powers of `E = e^(-k h)` and `s` powers
/// become powers of `H`.
pub fn at_endpoint(p: &Poly) -> Poly {
    let mut out = Poly::zero();
    for (m, c) in p.iter() {
        let mono = Monomial { ekh: m.ekh - m.eks, h: m.h + m.spow, eks: 0, spow: 0, ..*m };
        out.add_term(mono, c.clone());
    }
    out
}

/// Moment-derivation engine with memoized conditional moments.
///
/// Construct via [`Engine::new`] (pure diffusion) or
/// [`Engine::new_with_jumps`] (variance-jump mode), or use the shared
/// process-wide instances [`engine`] / [`jump_engine`].
pub struct Engine {
    max_order: u32,
    jumps: bool,
    /// Conditional raw state moments in in-progress (time) form.
    memo: Mutex<HashMap<StateIdx, Arc<Poly>>>,
    /// Unconditional central return moments, symbolic.
    central_memo: Mutex<HashMap<u32, Arc<Poly>>>,
    /// Unconditional centered return cross moments, symbolic.
    cross_memo: Mutex<HashMap<(u32, u32, u32), Arc<Poly>>>,
    /// Unconditional raw variance cross moments, symbolic.
    cross_v_memo: Mutex<HashMap<(u32, u32, u32), Arc<Poly>>>,
}

impl Default for Engine {
    fn default() -> Self {
        Engine::new(DEFAULT_MAX_ORDER)
    }
}

/// Shared pure-diffusion engine at the default maximum order.
pub fn engine() -> &'static Engine {
    static PURE: LazyLock<Engine> = LazyLock::new(|| Engine::new(DEFAULT_MAX_ORDER));
    &PURE
}

/// Shared variance-jump engine at the default maximum order.
pub fn jump_engine() -> &'static Engine {
    static JUMPY: LazyLock<Engine> = LazyLock::new(|| Engine::new_with_jumps(DEFAULT_MAX_ORDER));
    &JUMPY
}

/// Evaluation bindings for validated parameters at interval length `h`.
pub fn ctx_for(params: &ValidatedHestonParams, h: f64) -> EvalCtx {
    EvalCtx::new(params.mu, params.k, params.theta, params.sigma_v, params.rho, h)
}

impl Engine {
    /// Pure-diffusion engine with the given maximum total moment order.
    pub fn new(max_order: u32) -> Self {
        assert!(max_order <= ORDER_CEILING, "max order limited to {ORDER_CEILING}");
        Self {
            max_order,
            jumps: false,
            memo: Mutex::new(HashMap::new()),
            central_memo: Mutex::new(HashMap::new()),
            cross_memo: Mutex::new(HashMap::new()),
            cross_v_memo: Mutex::new(HashMap::new()),
        }
    }

    /// Variance-jump engine: the recursion tracks `IEZ`/`Z` and carries the
    /// jump intensity and jump-size moments as formal symbols.
    pub fn new_with_jumps(max_order: u32) -> Self {
        Self { jumps: true, ..Self::new(max_order) }
    }

    pub fn max_order(&self) -> u32 {
        self.max_order
    }

    /// Drops every cached derivation. Values are pure functions of the
    /// request, so clearing never changes any result (tested).
    pub fn clear_memo(&self) {
        self.memo.lock().unwrap().clear();
        self.central_memo.lock().unwrap().clear();
        self.cross_memo.lock().unwrap().clear();
        self.cross_v_memo.lock().unwrap().clear();
    }

    /// `E[v(s) · X(s)]` given `E[X] = M_idx`, via the exact pathwise
    /// expansion of `v(s)` (see module docs).
    fn v_times(&self, idx: StateIdx) -> Poly {
        let m = self.time_moment(idx);
        let mut out = Poly::zero();
        // theta * M
        out.add_scaled_product(&m, Monomial { theta: 1, ..Monomial::default() }, rat(1, 1));
        // (v0 - theta) e^(-k s) * M
        out.add_scaled_product(&m, Monomial { v0: 1, eks: -1, ..Monomial::default() }, rat(1, 1));
        out.add_scaled_product(&m, Monomial { theta: 1, eks: -1, ..Monomial::default() }, rat(-1, 1));
        // sigma_v e^(-k s) * M_{+IE}
        let up_ie = self.time_moment((idx.0 + 1, idx.1, idx.2, idx.3, idx.4));
        out.add_scaled_product(&up_ie, Monomial { sigma_v: 1, eks: -1, ..Monomial::default() }, rat(1, 1));
        if self.jumps {
            // e^(-k s) * M_{+IEZ}
            let up_iez = self.time_moment((idx.0, idx.1, idx.2, idx.3 + 1, idx.4));
            out.add_scaled_product(&up_iez, Monomial { eks: -1, ..Monomial::default() }, rat(1, 1));
        }
        out
    }

    /// Drift of `E[IE^a I^b I*^c IEZ^d Z^e | v0]` as a polynomial in
    /// `(e^(k s), s)` over lower-order moments: the Ito quadratic-variation
    /// terms (`d<IE> = e^(2ks) v ds`, `d<I> = d<I*> = v ds`,
    /// `d<IE, I> = e^(ks) v ds`, Wiener drivers of `I*` and of `IE`/`I`
    /// independent) plus the compound-Poisson generator acting on the jump
    /// integrals.
    fn drift(&self, (a, b, c, d, e): StateIdx) -> Poly {
        let mut out = Poly::zero();
        if a >= 2 {
            let f = &Poly::from_term(Monomial { eks: 2, ..Monomial::default() }, rat((a as i64) * (a as i64 - 1), 2))
                * &self.v_times((a - 2, b, c, d, e));
            out = &out + &f;
        }
        if b >= 2 {
            out = &out + &self.v_times((a, b - 2, c, d, e)).scale(&rat((b as i64) * (b as i64 - 1), 2));
        }
        if c >= 2 {
            out = &out + &self.v_times((a, b, c - 2, d, e)).scale(&rat((c as i64) * (c as i64 - 1), 2));
        }
        if a >= 1 && b >= 1 {
            let f = &Poly::from_term(Monomial { eks: 1, ..Monomial::default() }, rat(a as i64 * b as i64, 1))
                * &self.v_times((a - 1, b - 1, c, d, e));
            out = &out + &f;
        }
        if self.jumps && (d > 0 || e > 0) {
            for i in 0..=d {
                for l in 0..=e {
                    if (i, l) == (d, e) {
                        continue;
                    }
                    let r = (d - i) + (e - l);
                    assert!(
                        (r as usize) <= 6,
                        "jump-size moment symbols exist to order 6 only"
                    );
                    let mut jm = [0u8; 6];
                    jm[r as usize - 1] = 1;
                    let coeff = &big_binom(d, i) * &big_binom(e, l);
                    let mono = Monomial { lam: 1, jm, eks: (d - i) as i16, ..Monomial::default() };
                    out = &out + &(&Poly::from_term(mono, coeff) * &self.time_moment((a, b, c, i, l)));
                }
            }
        }
        out
    }

    /// Memoized conditional raw state moment in in-progress form (a
    /// polynomial in `(e^(k s), s)` and `v0`). Total order strictly
    /// decreases down the recursion, so computing order `n` touches only
    /// orders `< n`.
    fn time_moment(&self, idx: StateIdx) -> Arc<Poly> {
        if state_total(idx) == 0 {
            return Arc::new(Poly::one());
        }
        if let Some(hit) = self.memo.lock().unwrap().get(&idx) {
            return hit.clone();
        }
        let value = Arc::new(ito_integrate(&self.drift(idx)));
        self.memo.lock().unwrap().entry(idx).or_insert(value).clone()
    }

    /// Conditional moment `E[(e^(-kt) IE)^n3 I^n4 I*^n5 | v0]` at the
    /// interval endpoint, as an exact polynomial in
    /// `(v0, theta, sigma_v, kinv, E, H)`. All exponents are non-negative in
    /// this discounted form.
    pub fn cond_moment(&self, idx: MomentIndex) -> Result<Poly, EngineError> {
        let requested = idx.total_order();
        if requested > self.max_order {
            return Err(EngineError::OrderLimitExceeded { requested, max: self.max_order });
        }
        let raw = at_endpoint(&self.time_moment((idx.n3, idx.n4, idx.n5, 0, 0)));
        let mut disc = Poly::zero();
        disc.add_scaled_product(&raw, Monomial { ekh: idx.n3 as i16, ..Monomial::default() }, rat(1, 1));
        debug_assert!(
            disc.iter().all(|(m, _)| m.ekh >= 0),
            "discounted conditional moments must have non-negative powers of E"
        );
        Ok(disc)
    }

    /// Conditional expectation of an expression over the interval state
    /// symbols, term by term; the result is a polynomial in `v0` and the
    /// parameters.
    pub(crate) fn expect_conditional(&self, expr: &Poly) -> Result<Poly, EngineError> {
        let mut out = Poly::zero();
        for (m, c) in expr.iter() {
            debug_assert!(m.is_endpoint_form(), "expressions must be endpoint-form");
            let requested = m.state_order();
            if requested > self.max_order {
                return Err(EngineError::OrderLimitExceeded { requested, max: self.max_order });
            }
            let idx = (m.ie, m.ii, m.istar, m.iez, m.zz);
            let det = Monomial { ie: 0, ii: 0, istar: 0, iez: 0, zz: 0, ..*m };
            let moment = at_endpoint(&self.time_moment(idx));
            out = &out + &(&Poly::from_term(det, c.clone()) * &moment);
        }
        Ok(out)
    }

    /// Symbolic `m`-th raw moment of the stationary variance law at the
    /// interval start. Pure mode: the Gamma product
    /// `prod_{j<m} (theta + j sigma_v^2 kinv / 2)`. Jump mode: the
    /// stationarity identity `E[L v^m] = 0` for the jump-diffusion generator
    /// `L` gives the exact ladder
    /// `m_j = (theta + (j-1) sigma_v^2 kinv/2) m_{j-1}
    ///        + (lam kinv / j) sum_{i<j} C(j,i) m_i E[j^(j-i)]`.
    pub fn stationary_moment_poly(&self, m: u32) -> Poly {
        let mut moments: Vec<Poly> = vec![Poly::one()];
        for j in 1..=m {
            let mut step = Poly::from_term(Monomial { theta: 1, ..Monomial::default() }, rat(1, 1));
            step.add_term(
                Monomial { sigma_v: 2, kinv: 1, ..Monomial::default() },
                rat(j as i64 - 1, 2),
            );
            let mut next = &step * &moments[j as usize - 1];
            if self.jumps {
                for i in 0..j {
                    let r = j - i;
                    assert!((r as usize) <= 6, "jump-size moment symbols exist to order 6 only");
                    let mut jm = [0u8; 6];
                    jm[r as usize - 1] = 1;
                    let coeff = big_binom(j as u8, i as u8) * rat(1, j as i64);
                    let mono = Monomial { lam: 1, kinv: 1, jm, ..Monomial::default() };
                    next = &next + &(&Poly::from_term(mono, coeff) * &moments[i as usize]);
                }
            }
            moments.push(next);
        }
        moments.pop().unwrap()
    }

    /// Closes a conditional-moment polynomial over the stationary law of
    /// `v0`, replacing each `v0^m` by the corresponding stationary moment.
    pub(crate) fn close_stationary(&self, p: &Poly) -> Poly {
        let vmax = p.iter().map(|(m, _)| m.v0).max().unwrap_or(0);
        let moments: Vec<Poly> =
            (0..=vmax as u32).map(|m| self.stationary_moment_poly(m)).collect();
        let mut out = Poly::zero();
        for (m, c) in p.iter() {
            let det = Monomial { v0: 0, ..*m };
            out = &out + &(&Poly::from_term(det, c.clone()) * &moments[m.v0 as usize]);
        }
        out
    }

    /// Unconditional (stationary) expectation of an interval expression.
    pub(crate) fn expect_stationary(&self, expr: &Poly) -> Result<Poly, EngineError> {
        Ok(self.close_stationary(&self.expect_conditional(expr)?))
    }

    /// Integrated variance over one interval, as an expression over the
    /// state symbols (IV is eliminated from the recursion via this identity;
    /// see module docs).
    pub(crate) fn iv_expr(&self) -> Poly {
        let mut p = Poly::zero();
        // theta (h - h_tilde)  with h_tilde = kinv (1 - E)
        p.add_term(Monomial { theta: 1, h: 1, ..Monomial::default() }, rat(1, 1));
        p.add_term(Monomial { theta: 1, kinv: 1, ..Monomial::default() }, rat(-1, 1));
        p.add_term(Monomial { theta: 1, kinv: 1, ekh: 1, ..Monomial::default() }, rat(1, 1));
        // h_tilde v0
        p.add_term(Monomial { v0: 1, kinv: 1, ..Monomial::default() }, rat(1, 1));
        p.add_term(Monomial { v0: 1, kinv: 1, ekh: 1, ..Monomial::default() }, rat(-1, 1));
        // (sigma_v/k)(I - E·IE)
        p.add_term(Monomial { sigma_v: 1, kinv: 1, ii: 1, ..Monomial::default() }, rat(1, 1));
        p.add_term(Monomial { sigma_v: 1, kinv: 1, ekh: 1, ie: 1, ..Monomial::default() }, rat(-1, 1));
        if self.jumps {
            // (1/k)(Z - E·IEZ)
            p.add_term(Monomial { kinv: 1, zz: 1, ..Monomial::default() }, rat(1, 1));
            p.add_term(Monomial { kinv: 1, ekh: 1, iez: 1, ..Monomial::default() }, rat(-1, 1));
        }
        p
    }

    /// Log-return over one interval: `mu h - IV/2 + rho I + q I*`.
    pub(crate) fn return_expr(&self) -> Poly {
        let mut p = self.iv_expr().scale(&rat(-1, 2));
        p.add_term(Monomial { mu: 1, h: 1, ..Monomial::default() }, rat(1, 1));
        p.add_term(Monomial { rho: 1, ii: 1, ..Monomial::default() }, rat(1, 1));
        p.add_term(Monomial { q: 1, istar: 1, ..Monomial::default() }, rat(1, 1));
        p
    }

    /// The return minus its stationary mean (the mean is itself derived by
    /// the engine, not transcribed).
    pub(crate) fn centered_return_expr(&self) -> Result<Poly, EngineError> {
        let y = self.return_expr();
        let mean = self.expect_stationary(&y)?;
        Ok(&y - &mean)
    }

    /// Integrated variance minus its stationary mean.
    pub(crate) fn centered_iv_expr(&self) -> Result<Poly, EngineError> {
        let iv = self.iv_expr();
        let mean = self.expect_stationary(&iv)?;
        Ok(&iv - &mean)
    }

    /// Variance at the interval end, expressed over the interval state:
    /// `v_n = theta + (v0 - theta) E + sigma_v E · IE + E · IEZ`.
    pub(crate) fn transition_v_expr(&self) -> Poly {
        let mut p = Poly::zero();
        p.add_term(Monomial { theta: 1, ..Monomial::default() }, rat(1, 1));
        p.add_term(Monomial { theta: 1, ekh: 1, ..Monomial::default() }, rat(-1, 1));
        p.add_term(Monomial { v0: 1, ekh: 1, ..Monomial::default() }, rat(1, 1));
        p.add_term(Monomial { sigma_v: 1, ekh: 1, ie: 1, ..Monomial::default() }, rat(1, 1));
        if self.jumps {
            p.add_term(Monomial { ekh: 1, iez: 1, ..Monomial::default() }, rat(1, 1));
        }
        p
    }

    /// Symbolic `l`-th central moment of the stationary return.
    pub fn central_moment_return(&self, l: u32) -> Result<Arc<Poly>, EngineError> {
        if l > self.max_order {
            return Err(EngineError::OrderLimitExceeded { requested: l, max: self.max_order });
        }
        if let Some(hit) = self.central_memo.lock().unwrap().get(&l) {
            return Ok(hit.clone());
        }
        let centered = self.centered_return_expr()?;
        let value = Arc::new(self.expect_stationary(&centered.pow(l))?);
        Ok(self.central_memo.lock().unwrap().entry(l).or_insert(value).clone())
    }

    /// Numeric `l`-th central moment of the stationary return at the given
    /// parameters.
    pub fn central_moment_return_at(
        &self,
        l: u32,
        params: &ValidatedHestonParams,
        h: f64,
    ) -> Result<f64, EngineError> {
        Ok(self.central_moment_return(l)?.eval(&ctx_for(params, h)))
    }

    /// Symbolic stationary mean of the one-interval return.
    pub fn mean_return_poly(&self) -> Result<Poly, EngineError> {
        self.expect_stationary(&self.return_expr())
    }

    /// Symbolic stationary variance of the integrated variance over one
    /// interval, `var(IV_n)`.
    pub fn iv_variance_poly(&self) -> Result<Poly, EngineError> {
        let centered = self.centered_iv_expr()?;
        self.expect_stationary(&centered.pow(2))
    }

    /// Symbolic stationary covariance `cov(IE_n I_n, IE_n)` in discounted
    /// form: both factors carry the discounting weight `e^{-k n h}` that the
    /// engine attaches to `IE`, so this equals the raw covariance times
    /// `e^{-2 k n h}`.
    pub fn ie_cross_cov_poly(&self) -> Result<Poly, EngineError> {
        let cond = self.cond_moment(MomentIndex::new(2, 1, 0))?;
        Ok(self.close_stationary(&cond))
    }

    /// Symbolic centered cross moment of a general interval expression:
    /// `E[(X_n)^a (X_{n+lag})^b]` for a centered expression `X`. The lead
    /// factor is conditioned on the variance at its own interval start,
    /// propagated back across the lag through the exact variance transition,
    /// and combined with the trailing factor inside one interval expectation
    /// before stationary closure.
    pub(crate) fn cross_expr(
        &self,
        centered: &Poly,
        a: u32,
        b: u32,
        lag: u32,
    ) -> Result<Poly, EngineError> {
        assert!(lag >= 1, "cross moments need a positive lag");
        let trans = self.transition_v_expr();
        let lead_cond = self.expect_conditional(&centered.pow(b))?;
        let mut lead = substitute_v0(&lead_cond, &trans);
        for _ in 1..lag {
            lead = substitute_v0(&self.expect_conditional(&lead)?, &trans);
        }
        let total = &centered.pow(a) * &lead;
        self.expect_stationary(&total)
    }

    /// Symbolic centered return cross moment `E[(y_n - Ey)^a (y_{n+lag} - Ey)^b]`.
    pub fn cross_return_poly(&self, a: u32, b: u32, lag: u32) -> Result<Arc<Poly>, EngineError> {
        if a < 1 || b < 1 || a + b > 4 || !(1..=4).contains(&lag) {
            return Err(EngineError::UnsupportedShape { a, b, lag });
        }
        if let Some(hit) = self.cross_memo.lock().unwrap().get(&(a, b, lag)) {
            return Ok(hit.clone());
        }
        let centered = self.centered_return_expr()?;
        let value = Arc::new(self.cross_expr(&centered, a, b, lag)?);
        Ok(self.cross_memo.lock().unwrap().entry((a, b, lag)).or_insert(value).clone())
    }

    /// Numeric centered return cross moment at the given parameters.
    pub fn cross_moment(
        &self,
        a: u32,
        b: u32,
        lag: u32,
        params: &ValidatedHestonParams,
        h: f64,
    ) -> Result<f64, EngineError> {
        Ok(self.cross_return_poly(a, b, lag)?.eval(&ctx_for(params, h)))
    }

    /// Symbolic raw variance cross moment `E[v_n^a v_{n+lag}^b]` of the
    /// stationary variance observed at interval starts. The lead power is
    /// pushed back through the exact variance transition like the return
    /// cross moments; unlike them, the observable is the state itself, so
    /// both factors are raw powers of `v`.
    pub fn cross_v_poly(&self, a: u32, b: u32, lag: u32) -> Result<Arc<Poly>, EngineError> {
        if a < 1 || b < 1 || a + b > 4 || !(1..=4).contains(&lag) {
            return Err(EngineError::UnsupportedShape { a, b, lag });
        }
        if let Some(hit) = self.cross_v_memo.lock().unwrap().get(&(a, b, lag)) {
            return Ok(hit.clone());
        }
        let v0 = Poly::from_term(Monomial { v0: 1, ..Monomial::default() }, rat(1, 1));
        let value = Arc::new(self.cross_expr(&v0, a, b, lag)?);
        Ok(self.cross_v_memo.lock().unwrap().entry((a, b, lag)).or_insert(value).clone())
    }
}

/// Replaces every power of `v0` in `p` by the corresponding power of `repl`
/// (used to push a lead-interval conditioning variable back through the
/// variance transition).
fn substitute_v0(p: &Poly, repl: &Poly) -> Poly {
    let vmax = p.iter().map(|(m, _)| m.v0).max().unwrap_or(0) as usize;
    let mut pows: Vec<Poly> = Vec::with_capacity(vmax + 1);
    pows.push(Poly::one());
    for i in 1..=vmax {
        pows.push(&pows[i - 1] * repl);
    }
    let mut out = Poly::zero();
    for (m, c) in p.iter() {
        let det = Monomial { v0: 0, ..*m };
        out = &out + &(&Poly::from_term(det, c.clone()) * &pows[m.v0 as usize]);
    }
    out
}
