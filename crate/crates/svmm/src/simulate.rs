//! Path simulation for all four model variants with reproducible randomness.
//!
//! Log-prices follow `d log s = (mu - v/2) dt + sqrt(v) dw_s` and the variance
//! follows the square-root dynamics `dv = k (theta - v) dt + sigma_v sqrt(v)
//! dw_v`, discretized by an Euler scheme with `substeps` segments per
//! observation interval. Negative variance excursions are truncated inside the
//! square roots only; drifts see the raw value. Under the Feller condition
//! this is the standard bias-minimizing negativity guard.
//!
//! Randomness is organized as independent ChaCha streams per role (variance
//! noise, return noise, jumps, initial draw, second factor), all derived from
//! a single `u64` seed, so output is a pure function of `(model, grid, seed)`
//! and replications can be parallelized by mixing a replication index into the
//! master seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    HestonParams, JumpDist, JumpSpec, ModelError, ModelSpec, SamplingGrid, TwoFactorParams,
    ValidatedHestonParams,
};

/// Stream role for the variance Brownian increments (first factor).
pub const STREAM_WV: u64 = 0;
/// Stream role for the return-specific Brownian increments.
pub const STREAM_W: u64 = 1;
/// Stream role for jump counts and jump sizes.
pub const STREAM_JUMPS: u64 = 2;
/// Stream role for the initial variance draw.
pub const STREAM_INIT: u64 = 3;
/// Stream role for the second factor's Brownian increments.
pub const STREAM_WV2: u64 = 4;

/// Burn-in length for variance-jump paths started from the stationary mean,
/// in units of the mean-reversion time `1/k`. The initial transient decays
/// like `e^{-k t}`, so 30 time constants leave a relative residual ~1e-13.
const BURN_IN_TIME_CONSTANTS: f64 = 30.0;

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("price at index {index} is not positive and finite")]
    NonPositivePrice { index: usize },
    #[error("series has {len} entries but at least {min} are required")]
    SeriesTooShort { len: usize, min: usize },
    #[error("return at index {index} is not finite")]
    NonFiniteReturn { index: usize },
}

/// An ordered series of `N >= 3` finite log-returns observed every `h` units
/// of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    pub h: f64,
    pub values: Vec<f64>,
}

impl ReturnSeries {
    pub fn new(h: f64, values: Vec<f64>) -> Result<Self, SimulateError> {
        if !h.is_finite() || h <= 0.0 {
            return Err(ModelError::InvalidGrid {
                reason: format!("observation interval must be positive, got {h}"),
            }
            .into());
        }
        if values.len() < 3 {
            return Err(SimulateError::SeriesTooShort { len: values.len(), min: 3 });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(SimulateError::NonFiniteReturn { index });
        }
        Ok(Self { h, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A simulated path: the returns, optionally the latent variance sampled at
/// the end of each observation interval (truncated at zero, matching what the
/// price diffusion saw), and the inputs needed to reproduce it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathBundle {
    pub returns: ReturnSeries,
    pub variance_path: Option<Vec<f64>>,
    pub seed: u64,
    pub model: ModelSpec,
}

/// Simulation options beyond the `(model, grid, seed)` triple.
#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    /// Start the variance at its long-run level (`theta` per factor) instead
    /// of a stationary draw, and skip the stationarity burn-in for
    /// variance-jump models. Useful for variance reduction in cross-checks
    /// that condition on the initial variance.
    pub fixed_initial_variance: bool,
    /// Record the latent variance at observation boundaries.
    pub record_variance: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { fixed_initial_variance: false, record_variance: true }
    }
}

/// A ChaCha stream dedicated to one randomness role, derived from the master
/// seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One draw from the stationary variance law, the Gamma distribution with
/// shape `2 k theta / sigma_v^2` and scale `sigma_v^2 / (2k)` (mean `theta`,
/// variance `theta sigma_v^2 / (2k)`).
pub fn draw_stationary_variance<R: Rng + ?Sized>(
    params: &ValidatedHestonParams,
    rng: &mut R,
) -> f64 {
    let shape = 2.0 * params.k * params.theta / (params.sigma_v * params.sigma_v);
    let scale = params.sigma_v * params.sigma_v / (2.0 * params.k);
    Gamma::new(shape, scale).expect("validated params give a proper gamma law").sample(rng)
}

/// Log-returns from a strictly positive price series: `len - 1` values
/// `log p[i+1] - log p[i]`. Requires at least 4 prices.
pub fn returns_from_prices(prices: &[f64], h: f64) -> Result<ReturnSeries, SimulateError> {
    if prices.len() < 4 {
        return Err(SimulateError::SeriesTooShort { len: prices.len(), min: 4 });
    }
    for (index, p) in prices.iter().enumerate() {
        if !p.is_finite() || *p <= 0.0 {
            return Err(SimulateError::NonPositivePrice { index });
        }
    }
    let values = prices.windows(2).map(|w| w[1].ln() - w[0].ln()).collect();
    ReturnSeries::new(h, values)
}

/// Simulates a path with default options (stationary start, variance
/// recorded). Identical `(model, grid, seed)` yields bit-identical output.
pub fn simulate(
    model: &ModelSpec,
    grid: &SamplingGrid,
    seed: u64,
) -> Result<PathBundle, SimulateError> {
    simulate_with(model, grid, seed, SimOptions::default())
}

/// Simulates a path with explicit options.
pub fn simulate_with(
    model: &ModelSpec,
    grid: &SamplingGrid,
    seed: u64,
    opts: SimOptions,
) -> Result<PathBundle, SimulateError> {
    model.validate()?;
    let (values, vpath) = match model {
        ModelSpec::Heston(p) => one_factor_path(p, None, None, grid, seed, opts),
        ModelSpec::ReturnJump(p, j) => one_factor_path(p, Some(j), None, grid, seed, opts),
        ModelSpec::VarianceJump(p, j) => one_factor_path(p, None, Some(j), grid, seed, opts),
        ModelSpec::TwoFactor(t) => two_factor_path(t, grid, seed, opts),
    };
    let returns = ReturnSeries::new(grid.h, values)?;
    Ok(PathBundle {
        returns,
        variance_path: opts.record_variance.then_some(vpath),
        seed,
        model: *model,
    })
}

/// Compound-Poisson sampler over a fixed time step: a Poisson count (if the
/// rate is positive) followed by that many size draws.
struct JumpSampler {
    count: Option<Poisson<f64>>,
    size: SizeSampler,
}

enum SizeSampler {
    Normal(Normal<f64>),
    Exponential(Exp<f64>),
}

impl JumpSampler {
    fn new(spec: &JumpSpec, step: f64) -> Self {
        let mean_count = spec.lambda * step;
        let count = (mean_count > 0.0)
            .then(|| Poisson::new(mean_count).expect("positive finite Poisson mean"));
        let size = match spec.dist {
            JumpDist::Normal { mean, sd } => {
                SizeSampler::Normal(Normal::new(mean, sd).expect("validated jump size params"))
            }
            JumpDist::Exponential { mean } => {
                SizeSampler::Exponential(Exp::new(1.0 / mean).expect("validated jump size params"))
            }
        };
        Self { count, size }
    }

    fn draw_sum<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let Some(count) = &self.count else { return 0.0 };
        let n = count.sample(rng) as u64;
        let mut total = 0.0;
        for _ in 0..n {
            total += match &self.size {
                SizeSampler::Normal(d) => d.sample(rng),
                SizeSampler::Exponential(d) => d.sample(rng),
            };
        }
        total
    }
}

/// One Euler substep of the square-root variance dynamics. The diffusion sees
/// the truncated value through `sq = sqrt(max(v, 0))`; the drift sees `v`.
#[inline]
fn var_step(v: f64, k: f64, theta: f64, sigma_v: f64, dt: f64, sq_sdt: f64, zv: f64) -> f64 {
    v + k * (theta - v) * dt + sigma_v * sq_sdt * zv
}

/// Shared path loop for the one-factor variants: plain diffusion, jumps in
/// the return, or jumps in the variance.
fn one_factor_path(
    p: &HestonParams,
    ret_jump: Option<&JumpSpec>,
    var_jump: Option<&JumpSpec>,
    grid: &SamplingGrid,
    seed: u64,
    opts: SimOptions,
) -> (Vec<f64>, Vec<f64>) {
    let mut rng_v = stream_rng(seed, STREAM_WV);
    let mut rng_w = stream_rng(seed, STREAM_W);
    let mut rng_j = stream_rng(seed, STREAM_JUMPS);
    let mut rng_init = stream_rng(seed, STREAM_INIT);

    let dt = grid.h / grid.substeps as f64;
    let sdt = dt.sqrt();
    let q = (1.0 - p.rho * p.rho).max(0.0).sqrt();

    let ret_sampler = ret_jump.map(|j| JumpSampler::new(j, grid.h));
    let var_sampler = var_jump.map(|j| JumpSampler::new(j, dt));

    let mut v = if opts.fixed_initial_variance {
        p.theta
    } else if let Some(j) = var_jump {
        // No closed-form stationary law once the variance jumps; start at the
        // stationary mean theta + lambda E[j]/k and burn in below.
        p.theta + j.lambda * j.size_moment(1) / p.k
    } else {
        let vp = p.validate().expect("caller validated");
        draw_stationary_variance(&vp, &mut rng_init)
    };

    if let Some(vs) = &var_sampler
        && !opts.fixed_initial_variance
    {
        let burn_steps = (BURN_IN_TIME_CONSTANTS / (p.k * dt)).ceil() as usize;
        for _ in 0..burn_steps {
            let zv: f64 = StandardNormal.sample(&mut rng_v);
            let sq_sdt = v.max(0.0).sqrt() * sdt;
            v = var_step(v, p.k, p.theta, p.sigma_v, dt, sq_sdt, zv) + vs.draw_sum(&mut rng_j);
        }
    }

    let mut returns = Vec::with_capacity(grid.n);
    let mut vpath = Vec::with_capacity(grid.n);
    for _ in 0..grid.n {
        let mut acc = 0.0;
        for _ in 0..grid.substeps {
            let zv: f64 = StandardNormal.sample(&mut rng_v);
            let z: f64 = StandardNormal.sample(&mut rng_w);
            let sq_sdt = v.max(0.0).sqrt() * sdt;
            acc += (p.mu - 0.5 * v) * dt + sq_sdt * (p.rho * zv + q * z);
            v = var_step(v, p.k, p.theta, p.sigma_v, dt, sq_sdt, zv);
            if let Some(vs) = &var_sampler {
                v += vs.draw_sum(&mut rng_j);
            }
        }
        if let Some(rs) = &ret_sampler {
            acc += rs.draw_sum(&mut rng_j);
        }
        returns.push(acc);
        vpath.push(v.max(0.0));
    }
    (returns, vpath)
}

/// Path loop for the two-factor variant: independent square-root factors, no
/// leverage, and the price diffusion driven by the summed variance.
fn two_factor_path(
    t: &TwoFactorParams,
    grid: &SamplingGrid,
    seed: u64,
    opts: SimOptions,
) -> (Vec<f64>, Vec<f64>) {
    let mut rng_v1 = stream_rng(seed, STREAM_WV);
    let mut rng_w = stream_rng(seed, STREAM_W);
    let mut rng_v2 = stream_rng(seed, STREAM_WV2);
    let mut rng_init = stream_rng(seed, STREAM_INIT);

    let dt = grid.h / grid.substeps as f64;
    let sdt = dt.sqrt();
    let (f1, f2) = (t.factor1, t.factor2);

    let (mut v1, mut v2) = if opts.fixed_initial_variance {
        (f1.theta, f2.theta)
    } else {
        let p1 = f1.as_heston(t.mu).validate().expect("caller validated");
        let p2 = f2.as_heston(t.mu).validate().expect("caller validated");
        (draw_stationary_variance(&p1, &mut rng_init), draw_stationary_variance(&p2, &mut rng_init))
    };

    let mut returns = Vec::with_capacity(grid.n);
    let mut vpath = Vec::with_capacity(grid.n);
    for _ in 0..grid.n {
        let mut acc = 0.0;
        for _ in 0..grid.substeps {
            let zv1: f64 = StandardNormal.sample(&mut rng_v1);
            let zv2: f64 = StandardNormal.sample(&mut rng_v2);
            let z: f64 = StandardNormal.sample(&mut rng_w);
            let sq1_sdt = v1.max(0.0).sqrt() * sdt;
            let sq2_sdt = v2.max(0.0).sqrt() * sdt;
            let vtot = v1.max(0.0) + v2.max(0.0);
            acc += (t.mu - 0.5 * (v1 + v2)) * dt + vtot.sqrt() * sdt * z;
            v1 = var_step(v1, f1.k, f1.theta, f1.sigma_v, dt, sq1_sdt, zv1);
            v2 = var_step(v2, f2.k, f2.theta, f2.sigma_v, dt, sq2_sdt, zv2);
        }
        returns.push(acc);
        vpath.push(v1.max(0.0) + v2.max(0.0));
    }
    (returns, vpath)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::VolFactor;
    use crate::moments::population_gamma;

    fn s0() -> HestonParams {
        HestonParams::new(0.125, 0.1, 0.25, 0.1, -0.7)
    }

    fn mean_and_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }

    #[test]
    fn degenerate_diffusion_gives_constant_variance_and_iid_normal_returns() {
        // With sigma_v = 0 and v(0) = theta the variance never moves and the
        // returns are i.i.d. Normal((mu - theta/2) h, theta h).
        let p = HestonParams::new(0.125, 0.1, 0.25, 0.0, -0.7);
        let grid = SamplingGrid::new(1.0, 50_000, 1).unwrap();
        let opts = SimOptions { fixed_initial_variance: true, record_variance: true };
        let (returns, vpath) = one_factor_path(&p, None, None, &grid, 7, opts);
        assert!(vpath.iter().all(|&v| v == 0.25));
        let (mean, var) = mean_and_var(&returns);
        // Truth: mean (0.125 - 0.125) * 1 = 0, variance 0.25.
        let se_mean = (0.25f64 / 50_000.0).sqrt();
        assert!(mean.abs() < 3.0 * se_mean, "mean {mean}");
        let se_var = 0.25 * (2.0f64 / 50_000.0).sqrt();
        assert!((var - 0.25).abs() < 3.0 * se_var, "var {var}");
    }

    #[test]
    fn same_seed_is_bit_identical_and_different_seed_is_not() {
        let model = ModelSpec::Heston(s0());
        let grid = SamplingGrid::new(1.0, 100, 4).unwrap();
        let a = simulate(&model, &grid, 42).unwrap();
        let b = simulate(&model, &grid, 42).unwrap();
        assert_eq!(a.returns.values, b.returns.values);
        assert_eq!(a.variance_path, b.variance_path);
        let c = simulate(&model, &grid, 43).unwrap();
        assert_ne!(a.returns.values, c.returns.values);
    }

    #[test]
    fn stationary_draw_matches_gamma_parameterization() {
        // S0 -> Gamma(shape 5, scale 0.05): mean theta = 0.25 and second
        // moment 0.075; check both against 10^5 draws.
        let vp = s0().validate().unwrap();
        let mut rng = stream_rng(9, STREAM_INIT);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| draw_stationary_variance(&vp, &mut rng)).collect();
        let (mean, var) = mean_and_var(&draws);
        let sd = var.sqrt();
        assert!((mean - 0.25).abs() < 3.0 * sd / (n as f64).sqrt(), "mean {mean}");
        let m2: Vec<f64> = draws.iter().map(|v| v * v).collect();
        let (m2_mean, m2_var) = mean_and_var(&m2);
        assert!(
            (m2_mean - 0.075).abs() < 3.0 * m2_var.sqrt() / (n as f64).sqrt(),
            "second moment {m2_mean}"
        );
    }

    #[test]
    fn long_s0_path_matches_population_mean_and_variance() {
        let p = s0();
        let model = ModelSpec::Heston(p);
        let grid = SamplingGrid::new(1.0, 400_000, 20).unwrap();
        let bundle = simulate(&model, &grid, 2024).unwrap();
        let (mean, var) = mean_and_var(&bundle.returns.values);
        let g = population_gamma(&p.validate().unwrap(), 1.0);
        assert_eq!(g.mean, 0.0);
        assert!(mean.abs() < 3.0 * (g.variance / 400_000.0).sqrt(), "mean {mean}");
        assert!((var - g.variance).abs() < 0.01 * g.variance, "var {var} vs {}", g.variance);
    }

    #[test]
    fn return_jumps_with_zero_rate_reproduce_the_plain_model() {
        let jump = JumpSpec::new(0.0, JumpDist::Normal { mean: 0.01, sd: 0.02 }).unwrap();
        let grid = SamplingGrid::new(1.0, 200, 4).unwrap();
        let plain = simulate(&ModelSpec::Heston(s0()), &grid, 5).unwrap();
        let jumpy = simulate(&ModelSpec::ReturnJump(s0(), jump), &grid, 5).unwrap();
        assert_eq!(plain.returns.values, jumpy.returns.values);
    }

    #[test]
    fn variance_jumps_raise_the_recorded_variance_level() {
        let p = s0();
        let jump = JumpSpec::new(0.5, JumpDist::Exponential { mean: 0.05 }).unwrap();
        let model = ModelSpec::VarianceJump(p, jump);
        let grid = SamplingGrid::new(1.0, 30_000, 10).unwrap();
        let bundle = simulate(&model, &grid, 11).unwrap();
        let vpath = bundle.variance_path.unwrap();
        assert_eq!(vpath.len(), 30_000);
        assert!(vpath.iter().all(|&v| v >= 0.0));
        // Stationary mean with jumps: theta + lambda E[j]/k = 0.25 + 0.25 = 0.5.
        let (mean, var) = mean_and_var(&vpath);
        // The variance path is strongly autocorrelated (corr e^{-kh} per lag),
        // so inflate the i.i.d. standard error by sqrt of the correlation-time
        // factor (1+e^{-kh})/(1-e^{-kh}) ~ 20 at kh = 0.1.
        let se = (var * 20.0 / 30_000.0).sqrt();
        assert!((mean - 0.5).abs() < 4.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn two_factor_paths_are_deterministic_with_sensible_variance_level() {
        let two = TwoFactorParams {
            mu: 0.1,
            factor1: VolFactor { k: 0.3, theta: 0.1, sigma_v: 0.1 },
            factor2: VolFactor { k: 0.05, theta: 0.15, sigma_v: 0.05 },
        };
        let model = ModelSpec::TwoFactor(two);
        let grid = SamplingGrid::new(1.0, 20_000, 5).unwrap();
        let a = simulate(&model, &grid, 3).unwrap();
        let b = simulate(&model, &grid, 3).unwrap();
        assert_eq!(a.returns.values, b.returns.values);
        let vpath = a.variance_path.unwrap();
        assert!(vpath.iter().all(|&v| v >= 0.0));
        let (mean, var) = mean_and_var(&vpath);
        // Slowest factor has kh = 0.05 -> correlation-time factor ~ 40.
        let se = (var * 40.0 / 20_000.0).sqrt();
        assert!((mean - 0.25).abs() < 4.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn returns_from_prices_takes_log_differences() {
        let e = std::f64::consts::E;
        let series = returns_from_prices(&[1.0, e, e * e, e * e * e], 1.0).unwrap();
        for v in &series.values {
            assert!((v - 1.0).abs() < 1e-15);
        }
        let constant = returns_from_prices(&[5.0, 5.0, 5.0, 5.0, 5.0], 0.5).unwrap();
        assert!(constant.values.iter().all(|&v| v == 0.0));
        assert_eq!(constant.len(), 4);
    }

    #[test]
    fn returns_from_prices_rejects_bad_input() {
        match returns_from_prices(&[1.0, 2.0, 0.0, 3.0], 1.0) {
            Err(SimulateError::NonPositivePrice { index }) => assert_eq!(index, 2),
            other => panic!("expected NonPositivePrice, got {other:?}"),
        }
        match returns_from_prices(&[1.0, 2.0, 3.0], 1.0) {
            Err(SimulateError::SeriesTooShort { len, min }) => {
                assert_eq!((len, min), (3, 4));
            }
            other => panic!("expected SeriesTooShort, got {other:?}"),
        }
    }

    #[test]
    fn return_series_validates_contents() {
        assert!(ReturnSeries::new(1.0, vec![0.1, 0.2]).is_err());
        assert!(ReturnSeries::new(0.0, vec![0.1, 0.2, 0.3]).is_err());
        match ReturnSeries::new(1.0, vec![0.1, f64::NAN, 0.3]) {
            Err(SimulateError::NonFiniteReturn { index }) => assert_eq!(index, 1),
            other => panic!("expected NonFiniteReturn, got {other:?}"),
        }
    }
}
