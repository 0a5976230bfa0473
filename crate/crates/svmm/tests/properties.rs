//! Cross-module invariants: algebraic properties checked over random
//! parameter draws (proptest) and statistical properties of simulated paths
//! checked at fixed seeds (deterministic, so never flaky).

use proptest::prelude::*;

use svmm::estimate::{EstimatorConfig, SampleMoments, mm_estimate, mm_estimate_from_moments};
use svmm::model::{HestonParams, JumpDist, JumpSpec, ModelSpec, SamplingGrid, ValidatedHestonParams};
use svmm::moments::{cov_lag_m, d1_moment_system, population_gamma};
use svmm::simulate::{ReturnSeries, simulate};

fn s0() -> HestonParams {
    HestonParams::new(0.125, 0.1, 0.25, 0.1, -0.7)
}

/// Strategy over validated parameter sets: `sigma_v` is drawn as a fraction
/// of the stationarity bound `sqrt(2 k theta)`, so every draw is valid.
fn params_strategy() -> impl Strategy<Value = ValidatedHestonParams> {
    (0.02f64..1.5, 0.05f64..0.6, 0.15f64..0.95, -0.95f64..0.95, -0.3f64..0.5).prop_map(
        |(k, theta, frac, rho, mu)| {
            let sigma_v = frac * (2.0 * k * theta).sqrt();
            HestonParams::new(mu, k, theta, sigma_v, rho).validate().expect("inside the domain")
        },
    )
}

proptest! {
    /// Structural identities of the population moment vector that hold for
    /// every valid parameter set: positive variance, the exact geometric
    /// lag decay, and the Cauchy-Schwarz bound.
    #[test]
    fn population_moments_satisfy_structural_identities(
        p in params_strategy(),
        h in 0.25f64..4.0,
    ) {
        let g = population_gamma(&p, h);
        for (name, value) in g.entries() {
            prop_assert!(value.is_finite(), "{name} not finite");
        }
        prop_assert!(g.variance > 0.0);
        prop_assert!(g.cov1.abs() <= g.variance, "lag covariance above the variance");

        let decay = (-p.k * h).exp();
        prop_assert!((g.cov2 - decay * g.cov1).abs() <= 1e-12 * g.cov1.abs().max(1e-12));
        for m in 1..6u32 {
            let ratio_err = cov_lag_m(&p, h, m + 1) - decay * cov_lag_m(&p, h, m);
            prop_assert!(ratio_err.abs() <= 1e-12 * g.cov1.abs().max(1e-12));
        }
    }

    /// Feeding exact population moments through the closed-form chain
    /// recovers the generating parameters: the estimator inverts the moment
    /// map on the whole domain, not just on the tuned grid.
    #[test]
    fn population_round_trip_recovers_parameters(
        p in params_strategy(),
        h in 0.25f64..4.0,
    ) {
        let g = population_gamma(&p, h);
        let sm = SampleMoments {
            n: usize::MAX,
            mean: g.mean,
            variance: g.variance,
            cov_lags: vec![g.cov1, g.cov2],
            covsq1: g.covsq1,
        };
        let fit = mm_estimate_from_moments(&sm, h, &EstimatorConfig::default()).unwrap();
        let rel = |got: f64, want: f64| (got - want).abs() / want.abs().max(1e-12);
        prop_assert!(rel(fit.params.k, p.k) < 1e-8, "k: {} vs {}", fit.params.k, p.k);
        prop_assert!(rel(fit.params.theta, p.theta) < 1e-8);
        prop_assert!(rel(fit.params.sigma_v, p.sigma_v) < 1e-8);
        prop_assert!(rel(fit.params.mu, p.mu) < 1e-8, "mu: {} vs {}", fit.params.mu, p.mu);
        prop_assert!(rel(fit.params.rho, p.rho) < 1e-8, "rho: {} vs {}", fit.params.rho, p.rho);
        prop_assert!(fit.diagnostics.is_empty(), "clean inversion: {:?}", fit.diagnostics);
    }

    /// Return jumps are iid across intervals, so they shift the variance
    /// ladder of the moment system but can never touch the lag covariances.
    #[test]
    fn return_jumps_leave_lag_covariances_alone(
        p in params_strategy(),
        h in 0.25f64..4.0,
        lambda in 0.0f64..5.0,
        mean in -0.1f64..0.1,
        sd in 0.001f64..0.2,
    ) {
        let jump = JumpSpec::new(lambda, JumpDist::Normal { mean, sd }).unwrap();
        let base = population_gamma(&p, h);
        let sys = d1_moment_system(&p, &jump, h).unwrap();
        let tol = 1e-12 * base.variance;
        prop_assert!((sys.value("cov1").unwrap() - base.cov1).abs() <= tol);
        prop_assert!((sys.value("cov2").unwrap() - base.cov2).abs() <= tol);
        // Second jump moment: lambda h E[j^2] with E[j^2] = mean^2 + sd^2.
        let extra = lambda * h * (mean * mean + sd * sd);
        let got = sys.value("variance").unwrap() - base.variance;
        prop_assert!((got - extra).abs() <= 1e-10 * (base.variance + extra));
    }
}

/// Shifting every return by a constant `c` is the same data transformation
/// as raising `mu` by `c/h`: the fitted drift moves by exactly that and the
/// other four estimates do not move at all. This is an algebraic identity of
/// the sample-moment chain (the centered statistics absorb the shift), so it
/// holds to rounding error on any path.
#[test]
fn estimator_is_shift_equivariant() {
    let grid = SamplingGrid::new(1.0, 20_000, 4).unwrap();
    let bundle = simulate(&ModelSpec::Heston(s0()), &grid, 1240).unwrap();
    let base = mm_estimate(&bundle.returns, &EstimatorConfig::default()).unwrap();

    for c in [-0.05f64, -0.001, 0.0025, 0.08] {
        let shifted: Vec<f64> = bundle.returns.values.iter().map(|y| y + c).collect();
        let shifted = ReturnSeries::new(1.0, shifted).unwrap();
        let fit = mm_estimate(&shifted, &EstimatorConfig::default()).unwrap();
        let rel = |got: f64, want: f64| (got - want).abs() / want.abs().max(1e-12);
        assert!(rel(fit.params.k, base.params.k) < 1e-9, "k moved under shift {c}");
        assert!(rel(fit.params.theta, base.params.theta) < 1e-9);
        assert!(rel(fit.params.sigma_v, base.params.sigma_v) < 1e-9);
        assert!(rel(fit.params.rho, base.params.rho) < 1e-9, "rho moved under shift {c}");
        assert!(
            (fit.params.mu - (base.params.mu + c / 1.0)).abs() < 1e-12,
            "mu must move by exactly c/h"
        );
    }
}

/// Two-sample Kolmogorov-Smirnov statistic, `max |F_a - F_b|` over the
/// pooled sample.
fn ks_statistic(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_unstable_by(f64::total_cmp);
    b.sort_unstable_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    d
}

/// The simulator starts the variance at a stationary draw, so the return
/// law is the same at the start of the path as deep inside it. Checked by a
/// two-sample KS test between the two halves at significance 0.01 (the
/// seeds are fixed; the test is deterministic).
#[test]
fn returns_are_stationary_across_path_halves() {
    let grid = SamplingGrid::new(1.0, 60_000, 4).unwrap();
    for seed in [21u64, 22, 23] {
        let bundle = simulate(&ModelSpec::Heston(s0()), &grid, seed).unwrap();
        let y = &bundle.returns.values;
        let (first, second) = y.split_at(y.len() / 2);
        let d = ks_statistic(first.to_vec(), second.to_vec());
        let (n, m) = (first.len() as f64, second.len() as f64);
        let threshold = 1.628 * ((n + m) / (n * m)).sqrt();
        assert!(d < threshold, "seed {seed}: KS {d:.4} over threshold {threshold:.4}");
    }
}

/// Sample lag covariances on a long path sit on the population's geometric
/// decay curve, within Monte Carlo tolerance.
#[test]
fn sample_autocovariances_match_population_decay() {
    let p = s0().validate().unwrap();
    let grid = SamplingGrid::new(1.0, 1_000_000, 8).unwrap();
    let bundle = simulate(&ModelSpec::Heston(s0()), &grid, 99).unwrap();
    let y = &bundle.returns.values;
    let n = y.len();
    let mean = y.iter().sum::<f64>() / n as f64;
    for lag in 1..=4usize {
        let est: f64 = (0..n - lag).map(|i| (y[i] - mean) * (y[i + lag] - mean)).sum::<f64>()
            / (n - lag) as f64;
        let want = cov_lag_m(&p, 1.0, lag as u32);
        // The asymptotic sd of a lag covariance here is about 3e-4 at this
        // length; 1.5e-3 is a five-sigma band.
        assert!((est - want).abs() < 1.5e-3, "lag {lag}: {est} vs {want}");
    }
}

/// Refining the Euler grid shrinks the discretization bias of the return
/// variance. Checked at a fast-reverting, high-volatility setting where one
/// step per interval is visibly biased and sixteen are not.
#[test]
fn euler_bias_shrinks_with_substeps() {
    let p = HestonParams::new(0.1, 1.0, 0.3, 0.54, -0.5);
    let pop = population_gamma(&p.validate().unwrap(), 1.0).variance;
    let sample_var = |substeps: usize, seed: u64| {
        let grid = SamplingGrid::new(1.0, 400_000, substeps).unwrap();
        let bundle = simulate(&ModelSpec::Heston(p), &grid, seed).unwrap();
        let y = &bundle.returns.values;
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64
    };
    let coarse = (sample_var(1, 5) - pop).abs();
    let fine = (sample_var(16, 5) - pop).abs();
    assert!(
        coarse > 4.0 * fine,
        "coarse bias {coarse:.5} should dominate the refined bias {fine:.5}"
    );
    assert!(fine < 0.01 * pop, "sixteen substeps should be nearly unbiased, got {fine:.5}");
}
