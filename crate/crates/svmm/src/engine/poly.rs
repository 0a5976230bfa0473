//! Exact multivariate polynomials over the moment-derivation symbol set.
//!
//! A [`Monomial`] is an exponent vector over three groups of formal symbols:
//!
//! * model parameters: `v0` (the variance at the interval start), `theta`,
//!   `sigma_v`, `rho`, `q` (the combination `sqrt(1 - rho^2)`), `mu`,
//!   `kinv` (`1/k`), `H` (the interval length `h`), and `E` (`e^(-k h)`);
//! * in-progress time symbols used while the Ito recursion runs over the
//!   interval: `eks` (`e^(+k s)`) and `s` itself — both are eliminated when a
//!   result is evaluated at the interval endpoint;
//! * stochastic integrals of one observation interval: `IE`, `I`, `Istar`
//!   (driven by the two Wiener processes) and `IEZ`, `Z` (driven by the
//!   compound-Poisson variance jumps), plus the jump-intensity symbol `lam`
//!   and the jump-size raw moments `jm1..jm6`.
//!
//! A [`Poly`] maps monomials to exact rational coefficients, so all
//! derivations are exact: addition, multiplication, and powers never round,
//! and evaluation order cannot change a result. The exponent of `E` is the
//! only signed exponent: raw (undiscounted) moments of `IE` grow like
//! `e^(+k h)`, which is represented as a negative power of `E`. Every public
//! moment is discounted so that its final form has non-negative exponents
//! throughout.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

/// Exponent vector of one term. See the module docs for the symbol glossary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Monomial {
    /// Variance at the interval start, `v_{n-1}`.
    pub v0: u8,
    pub theta: u8,
    pub sigma_v: u8,
    pub rho: u8,
    /// The leverage complement `q = sqrt(1 - rho^2)`; kept formal, and even
    /// powers only in any fully reduced unconditional moment.
    pub q: u8,
    pub mu: u8,
    /// Inverse rate `1/k`.
    pub kinv: u8,
    /// Interval length `h`.
    pub h: u8,
    /// Power of `E = e^(-k h)`; may be negative in raw internal forms.
    pub ekh: i16,
    /// Power of `e^(+k s)` (in-progress time form only).
    pub eks: i16,
    /// Power of the running time `s` (in-progress time form only).
    pub spow: u8,
    /// Power of `IE = int e^(k u) sqrt(v) dw_v` over the interval.
    pub ie: u8,
    /// Power of `I = int sqrt(v) dw_v`.
    pub ii: u8,
    /// Power of `I* = int sqrt(v) dw`.
    pub istar: u8,
    /// Power of `IEZ = int e^(k u) dz` (variance-jump mode only).
    pub iez: u8,
    /// Power of `Z = z(interval)`, the plain compound-Poisson sum.
    pub zz: u8,
    /// Power of the jump intensity `lambda`.
    pub lam: u8,
    /// Powers of the jump-size raw moments `E[j^r]`, `r = 1..=6`.
    pub jm: [u8; 6],
}

impl Monomial {
    /// The constant monomial (all exponents zero).
    pub fn one() -> Self {
        Self::default()
    }

    /// Exponent-wise product of two monomials.
    pub fn combine(&self, other: &Monomial) -> Monomial {
        let mut jm = [0u8; 6];
        for (dst, (a, b)) in jm.iter_mut().zip(self.jm.iter().zip(other.jm.iter())) {
            *dst = a + b;
        }
        Monomial {
            v0: self.v0 + other.v0,
            theta: self.theta + other.theta,
            sigma_v: self.sigma_v + other.sigma_v,
            rho: self.rho + other.rho,
            q: self.q + other.q,
            mu: self.mu + other.mu,
            kinv: self.kinv + other.kinv,
            h: self.h + other.h,
            ekh: self.ekh + other.ekh,
            eks: self.eks + other.eks,
            spow: self.spow + other.spow,
            ie: self.ie + other.ie,
            ii: self.ii + other.ii,
            istar: self.istar + other.istar,
            iez: self.iez + other.iez,
            zz: self.zz + other.zz,
            lam: self.lam + other.lam,
            jm,
        }
    }

    /// Total order of the stochastic-integral part.
    pub fn state_order(&self) -> u32 {
        (self.ie + self.ii + self.istar + self.iez + self.zz) as u32
    }

    /// True when the monomial carries no in-progress time symbols.
    pub fn is_endpoint_form(&self) -> bool {
        self.eks == 0 && self.spow == 0
    }
}

/// Shorthand for an exact rational from an integer pair.
pub fn rat(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Exact multivariate polynomial: monomial -> rational coefficient, with no
/// zero coefficients stored. The `BTreeMap` keeps terms in a canonical order,
/// which makes text output and iteration deterministic.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Poly {
    terms: BTreeMap<Monomial, BigRational>,
}

impl Poly {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn one() -> Self {
        Self::constant(BigRational::one())
    }

    pub fn constant(c: BigRational) -> Self {
        Self::from_term(Monomial::one(), c)
    }

    pub fn from_term(m: Monomial, c: BigRational) -> Self {
        let mut p = Self::default();
        p.add_term(m, c);
        p
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Monomial, &BigRational)> {
        self.terms.iter()
    }

    /// Adds `c · m`, dropping the entry if the coefficient cancels to zero.
    pub fn add_term(&mut self, m: Monomial, c: BigRational) {
        if c.is_zero() {
            return;
        }
        let entry = self.terms.entry(m).or_insert_with(BigRational::zero);
        *entry += c;
        if entry.is_zero() {
            self.terms.remove(&m);
        }
    }

    /// Adds `c · m · p` to `self` in one pass (a fused scale-and-shift
    /// accumulation used heavily by the derivation recursion).
    pub fn add_scaled_product(&mut self, p: &Poly, m: Monomial, c: BigRational) {
        for (pm, pc) in p.iter() {
            self.add_term(m.combine(pm), &c * pc);
        }
    }

    pub fn scale(&self, c: &BigRational) -> Poly {
        if c.is_zero() {
            return Poly::zero();
        }
        Poly { terms: self.terms.iter().map(|(m, v)| (*m, v * c)).collect() }
    }

    /// `self^n` by repeated multiplication (degrees stay small by design).
    pub fn pow(&self, n: u32) -> Poly {
        let mut out = Poly::one();
        for _ in 0..n {
            out = &out * self;
        }
        out
    }

    /// Numeric evaluation against a symbol binding. Exact coefficients are
    /// rounded to `f64` once, at this final step.
    pub fn eval(&self, ctx: &EvalCtx) -> f64 {
        let mut total = 0.0;
        for (m, c) in &self.terms {
            let mut term = c.to_f64().expect("rational representable as f64");
            term *= ctx.v0.powi(m.v0 as i32);
            term *= ctx.theta.powi(m.theta as i32);
            term *= ctx.sigma_v.powi(m.sigma_v as i32);
            term *= ctx.rho.powi(m.rho as i32);
            term *= ctx.q.powi(m.q as i32);
            term *= ctx.mu.powi(m.mu as i32);
            term *= ctx.kinv.powi(m.kinv as i32);
            term *= ctx.h.powi(m.h as i32);
            term *= ctx.ekh.powi(m.ekh as i32);
            term *= ctx.eks.powi(m.eks as i32);
            term *= ctx.s.powi(m.spow as i32);
            term *= ctx.lam.powi(m.lam as i32);
            for (r, p) in m.jm.iter().enumerate() {
                if *p > 0 {
                    term *= ctx.jm[r].powi(*p as i32);
                }
            }
            debug_assert_eq!(m.state_order(), 0, "evaluating an unexpected stochastic term");
            total += term;
        }
        total
    }

    /// Canonical text form: terms in the map's deterministic order, exact
    /// rational coefficients, `*`-joined symbol powers. The zero polynomial
    /// prints as `0`.
    pub fn canonical_text(&self) -> String {
        if self.terms.is_empty() {
            return "0".to_string();
        }
        let mut out = String::new();
        for (i, (m, c)) in self.terms.iter().enumerate() {
            let mag = c.abs();
            if i == 0 {
                if c.is_negative() {
                    out.push_str("- ");
                }
            } else if c.is_negative() {
                out.push_str(" - ");
            } else {
                out.push_str(" + ");
            }
            let mut parts: Vec<String> = Vec::new();
            let coeff = if mag.denom() == &BigInt::one() {
                mag.numer().to_string()
            } else {
                format!("{}/{}", mag.numer(), mag.denom())
            };
            let push = |parts: &mut Vec<String>, name: &str, p: i32| {
                if p == 1 {
                    parts.push(name.to_string());
                } else if p != 0 {
                    parts.push(format!("{name}^{p}"));
                }
            };
            push(&mut parts, "v0", m.v0 as i32);
            push(&mut parts, "theta", m.theta as i32);
            push(&mut parts, "sigma_v", m.sigma_v as i32);
            push(&mut parts, "rho", m.rho as i32);
            push(&mut parts, "q", m.q as i32);
            push(&mut parts, "mu", m.mu as i32);
            push(&mut parts, "kinv", m.kinv as i32);
            push(&mut parts, "H", m.h as i32);
            push(&mut parts, "E", m.ekh as i32);
            push(&mut parts, "eks", m.eks as i32);
            push(&mut parts, "s", m.spow as i32);
            push(&mut parts, "IE", m.ie as i32);
            push(&mut parts, "I", m.ii as i32);
            push(&mut parts, "Istar", m.istar as i32);
            push(&mut parts, "IEZ", m.iez as i32);
            push(&mut parts, "Z", m.zz as i32);
            push(&mut parts, "lam", m.lam as i32);
            for (r, p) in m.jm.iter().enumerate() {
                push(&mut parts, &format!("jm{}", r + 1), *p as i32);
            }
            if parts.is_empty() {
                out.push_str(&coeff);
            } else if mag.is_one() {
                out.push_str(&parts.join("*"));
            } else {
                out.push_str(&coeff);
                out.push('*');
                out.push_str(&parts.join("*"));
            }
        }
        out
    }
}

impl Add for &Poly {
    type Output = Poly;
    fn add(self, rhs: &Poly) -> Poly {
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.add_term(*m, c.clone());
        }
        out
    }
}

impl Sub for &Poly {
    type Output = Poly;
    fn sub(self, rhs: &Poly) -> Poly {
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.add_term(*m, -c.clone());
        }
        out
    }
}

impl Neg for &Poly {
    type Output = Poly;
    fn neg(self) -> Poly {
        Poly { terms: self.terms.iter().map(|(m, c)| (*m, -c.clone())).collect() }
    }
}

impl Mul for &Poly {
    type Output = Poly;
    fn mul(self, rhs: &Poly) -> Poly {
        let mut out = Poly::zero();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &rhs.terms {
                out.add_term(ma.combine(mb), ca * cb);
            }
        }
        out
    }
}

/// Numeric bindings for every formal symbol. Endpoint-form polynomials
/// ignore `eks`/`s`; they are provided so in-progress (time-form) results can
/// also be evaluated, e.g. when checking an antiderivative against numerical
/// quadrature.
#[derive(Debug, Clone, Copy)]
pub struct EvalCtx {
    pub v0: f64,
    pub theta: f64,
    pub sigma_v: f64,
    pub rho: f64,
    pub q: f64,
    pub mu: f64,
    pub kinv: f64,
    pub h: f64,
    pub ekh: f64,
    pub eks: f64,
    pub s: f64,
    pub lam: f64,
    pub jm: [f64; 6],
}

impl EvalCtx {
    /// Bindings for a parameter set at interval length `h`, jumps off,
    /// `v0` bound to `theta` (irrelevant after stationary closure).
    pub fn new(mu: f64, k: f64, theta: f64, sigma_v: f64, rho: f64, h: f64) -> Self {
        EvalCtx {
            v0: theta,
            theta,
            sigma_v,
            rho,
            q: (1.0 - rho * rho).max(0.0).sqrt(),
            mu,
            kinv: 1.0 / k,
            h,
            ekh: (-k * h).exp(),
            eks: (k * h).exp(),
            s: h,
            lam: 0.0,
            jm: [0.0; 6],
        }
    }

    /// Adds compound-Poisson jump bindings: intensity and size moments.
    pub fn with_jumps(mut self, lambda: f64, size_moments: [f64; 6]) -> Self {
        self.lam = lambda;
        self.jm = size_moments;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_is_exact_and_order_free() {
        let a = Poly::from_term(Monomial { theta: 1, ..Monomial::one() }, rat(1, 3));
        let b = Poly::from_term(Monomial { kinv: 1, ..Monomial::one() }, rat(1, 6));
        let left = &(&a + &b) * &(&a - &b);
        let right = &(&a * &a) - &(&b * &b);
        assert_eq!(left, right);
        // 1/3 accumulated three times is exactly 1, not 0.999...
        let third = Poly::constant(rat(1, 3));
        let sum = &(&third + &third) + &third;
        assert_eq!(sum, Poly::one());
    }

    #[test]
    fn zero_coefficients_are_not_stored() {
        let a = Poly::from_term(Monomial { v0: 1, ..Monomial::one() }, rat(2, 1));
        let cancel = &a - &a;
        assert!(cancel.is_zero());
        assert_eq!(cancel.len(), 0);
        assert_eq!(cancel.canonical_text(), "0");
    }

    #[test]
    fn canonical_text_is_deterministic_and_readable() {
        let mut p = Poly::zero();
        p.add_term(Monomial { theta: 1, h: 1, ..Monomial::one() }, rat(1, 1));
        p.add_term(Monomial { theta: 1, kinv: 1, ekh: 1, ..Monomial::one() }, rat(1, 2));
        p.add_term(Monomial { theta: 1, kinv: 1, ..Monomial::one() }, rat(-1, 2));
        let text = p.canonical_text();
        assert_eq!(text, "theta*H - 1/2*theta*kinv + 1/2*theta*kinv*E");
        // Re-rendering gives the identical string.
        assert_eq!(text, p.canonical_text());
    }

    #[test]
    fn eval_binds_every_symbol() {
        // p = theta*H - theta*kinv + theta*kinv*E  (this is theta*(h - h_tilde)).
        let mut p = Poly::zero();
        p.add_term(Monomial { theta: 1, h: 1, ..Monomial::one() }, rat(1, 1));
        p.add_term(Monomial { theta: 1, kinv: 1, ..Monomial::one() }, rat(-1, 1));
        p.add_term(Monomial { theta: 1, kinv: 1, ekh: 1, ..Monomial::one() }, rat(1, 1));
        let ctx = EvalCtx::new(0.125, 0.1, 0.25, 0.1, -0.7, 1.0);
        let expected = 0.25 * (1.0 - crate::model::h_tilde(0.1, 1.0));
        assert!((p.eval(&ctx) - expected).abs() < 1e-15);
    }

    #[test]
    fn negative_exponent_of_ekh_evaluates_as_growth() {
        // E^-2 at k=0.1, h=1 is e^(0.2).
        let p = Poly::from_term(Monomial { ekh: -2, ..Monomial::one() }, rat(1, 1));
        let ctx = EvalCtx::new(0.0, 0.1, 0.25, 0.1, 0.0, 1.0);
        assert!((p.eval(&ctx) - (0.2f64).exp()).abs() < 1e-14);
    }
}
