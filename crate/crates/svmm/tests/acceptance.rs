//! The acceptance gate: one test per criterion, each printing a single
//! PASS/FAIL line (visible with `--nocapture`, and embedded in the panic
//! message on failure).
//!
//! Three sub-checks measure the closed-form M=2 estimator itself rather
//! than this implementation, and fail honestly at the stated scale: the
//! replication-mean bounds for `k` and `sigma_v` (criterion 4) and the
//! `rho` std-scaling band (criterion 5). The k estimator `ln(c1/c2)/h` has
//! a replication sd near 0.099 at N=100K — several times the reference
//! dispersion the bounds were budgeted from — because its two lag
//! covariances are nearly uncorrelated, not the strongly correlated pair
//! the reference dispersion would require. Conditioning on the fits that
//! return k > 0 (about three quarters of them) then biases the surviving
//! mean upward, and `sigma_v` and `rho` inherit the k noise through the
//! downstream closed forms. The failure messages carry the measured
//! numbers.

use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use svmm::asymptotics::{jacobian_g, sigma_hac, standard_errors};
use svmm::engine::{self, Monomial, Poly, rat};
use svmm::estimate::{EstimatorConfig, SampleMoments, mm_estimate, mm_estimate_from_moments};
use svmm::experiments::{
    ExperimentSpec, PARAM_NAMES, ReportTable, run_experiment, scaling_analysis, setting,
};
use svmm::model::{
    HestonParams, JumpDist, JumpSpec, ModelSpec, SamplingGrid, TwoFactorParams, VolFactor,
};
use svmm::moments::{
    MomentVector, d1_moment_system, d2_moment_system, d3_moment_system, heston_moment_system,
    population_gamma,
};
use svmm::simulate::{ReturnSeries, SimOptions, simulate, simulate_with};

/// Truth at the base setting, in [`PARAM_NAMES`] order.
const TRUTH: [f64; 5] = [0.125, 0.1, 0.25, 0.1, -0.7];

/// Reference replication stds at N = 100K used to budget the criterion-4
/// tolerance bands, in [`PARAM_NAMES`] order.
const REFERENCE_STD_100K: [f64; 5] = [0.002, 0.03, 0.002, 0.019, 0.105];

/// Exact long-run variance of the return mean at the base setting.
const SIGMA11_S0: f64 = 0.4875;

fn s0() -> HestonParams {
    HestonParams::new(0.125, 0.1, 0.25, 0.1, -0.7)
}

/// Prints the criterion's verdict line and panics on failure so the test
/// run itself stays honest.
fn gate(num: u32, label: &str, pass: bool, detail: &str) {
    let line =
        format!("{} criterion {num} [{label}]: {detail}", if pass { "PASS" } else { "FAIL" });
    println!("{line}");
    assert!(pass, "{line}");
}

/// The deterministic parameter grid shared by criteria 1 and 3: the same
/// xorshift sampler the unit tests use, `h` rotating through 0.5, 1, 2.
fn parameter_grid(count: usize) -> Vec<(HestonParams, f64)> {
    let mut state = 0x9e3779b97f4a7c15u64;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    (0..count)
        .map(|i| {
            let k = 0.02 + 1.5 * next();
            let theta = 0.05 + 0.6 * next();
            let sigma_v = (2.0 * k * theta).sqrt() * (0.15 + 0.8 * next());
            let rho = -0.95 + 1.9 * next();
            let mu = -0.3 + 0.8 * next();
            (HestonParams::new(mu, k, theta, sigma_v, rho), [0.5, 1.0, 2.0][i % 3])
        })
        .collect()
}

#[test]
fn criterion_1_engine_matches_closed_forms() {
    let t0 = Instant::now();
    let e = engine::engine();
    let mean_poly = e.mean_return_poly().unwrap();
    let mut worst = [0.0f64; 5];
    for (p, h) in parameter_grid(100) {
        let p = p.validate().unwrap();
        let g = population_gamma(&p, h);
        let ctx = engine::ctx_for(&p, h);
        let mean_e = mean_poly.eval(&ctx);
        let values = [
            (mean_e, g.mean),
            (e.central_moment_return_at(2, &p, h).unwrap(), g.variance),
            (e.cross_moment(1, 1, 1, &p, h).unwrap(), g.cov1),
            (e.cross_moment(1, 1, 2, &p, h).unwrap(), g.cov2),
            (e.cross_moment(2, 1, 1, &p, h).unwrap() + 2.0 * mean_e * g.cov1, g.covsq1),
        ];
        for (slot, (got, want)) in worst.iter_mut().zip(values) {
            *slot = slot.max((got - want).abs() / want.abs().max(1e-300));
        }
    }
    let elapsed = t0.elapsed().as_secs_f64();
    let max = worst.iter().cloned().fold(0.0f64, f64::max);
    gate(
        1,
        "engine vs closed forms",
        max <= 1e-10 && elapsed < 60.0,
        &format!(
            "max rel err {max:.2e} across mean/variance/cov1/cov2/covsq1 over 100 \
             parameter sets (tol 1e-10), {elapsed:.1}s (limit 60s)"
        ),
    );
}

#[test]
fn criterion_2_integrated_variance_fixed_points() {
    let e = engine::engine();

    // var(IV) = theta sigma_v^2 k^-2 (h - h_tilde), expanded over the
    // engine's basis (h_tilde = (1 - E)/k with E = e^{-kh}).
    let mut want_var_iv = Poly::zero();
    want_var_iv
        .add_term(Monomial { theta: 1, sigma_v: 2, kinv: 2, h: 1, ..Monomial::default() }, rat(1, 1));
    want_var_iv.add_term(Monomial { theta: 1, sigma_v: 2, kinv: 3, ..Monomial::default() }, rat(-1, 1));
    want_var_iv
        .add_term(Monomial { theta: 1, sigma_v: 2, kinv: 3, ekh: 1, ..Monomial::default() }, rat(1, 1));
    let got_var_iv = e.iv_variance_poly().unwrap();

    // cov(IE_n I_n, IE_n) = theta sigma_v k^-2 e^{2knh} (1 - E - khE^2); the
    // engine carries the discounted form (both sides here are multiplied by
    // e^{-2knh}, which preserves exact equality):
    // theta sigma_v k^-2 (1 - E) - theta sigma_v k^-1 h E^2.
    let mut want_cross = Poly::zero();
    want_cross.add_term(Monomial { theta: 1, sigma_v: 1, kinv: 2, ..Monomial::default() }, rat(1, 1));
    want_cross
        .add_term(Monomial { theta: 1, sigma_v: 1, kinv: 2, ekh: 1, ..Monomial::default() }, rat(-1, 1));
    want_cross.add_term(
        Monomial { theta: 1, sigma_v: 1, kinv: 1, h: 1, ekh: 2, ..Monomial::default() },
        rat(-1, 1),
    );
    let got_cross = e.ie_cross_cov_poly().unwrap();

    let var_ok = got_var_iv == want_var_iv
        && got_var_iv.canonical_text() == want_var_iv.canonical_text();
    let cross_ok =
        got_cross == want_cross && got_cross.canonical_text() == want_cross.canonical_text();
    gate(
        2,
        "integrated-variance fixed points",
        var_ok && cross_ok,
        &format!(
            "var(IV) {}; cov(IE*I, IE) {} (exact rational equality after canonicalization)",
            if var_ok { "exact" } else { "MISMATCH" },
            if cross_ok { "exact" } else { "MISMATCH" },
        ),
    );
}

#[test]
fn criterion_3_population_round_trip() {
    let mut worst = [0.0f64; 5];
    for (p, h) in parameter_grid(100) {
        let truth = [p.k, p.theta, p.sigma_v, p.mu, p.rho];
        let g = population_gamma(&p.validate().unwrap(), h);
        let sm = SampleMoments {
            n: usize::MAX,
            mean: g.mean,
            variance: g.variance,
            cov_lags: vec![g.cov1, g.cov2],
            covsq1: g.covsq1,
        };
        let fit = mm_estimate_from_moments(&sm, h, &EstimatorConfig::default()).unwrap();
        let got = [fit.params.k, fit.params.theta, fit.params.sigma_v, fit.params.mu, fit.params.rho];
        for ((slot, got), want) in worst.iter_mut().zip(got).zip(truth) {
            *slot = slot.max((got - want).abs() / want.abs().max(1e-300));
        }
    }
    let max = worst.iter().cloned().fold(0.0f64, f64::max);
    gate(
        3,
        "population round-trip",
        max <= 1e-10,
        &format!(
            "max rel err k {:.1e}, theta {:.1e}, sigma_v {:.1e} (positive branch), mu {:.1e}, \
             rho {:.1e} over the same 100-point grid (tol 1e-10)",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        ),
    );
}

/// The desk-scale replication table (base setting, N = 100K, 100
/// replications, 20 substeps), shared by criteria 4 and 6.
fn desk_table() -> &'static ReportTable {
    static DESK: OnceLock<ReportTable> = OnceLock::new();
    DESK.get_or_init(|| {
        let spec = ExperimentSpec {
            label: "desk".to_string(),
            settings: vec![setting("S0").unwrap()],
            n_list: vec![100_000],
            h_list: vec![1.0],
            replications: 100,
            substeps: 20,
            master_seed: 20260815,
        };
        run_experiment(&spec).unwrap()
    })
}

#[test]
fn criterion_4_desk_scale_replication_means() {
    let t0 = Instant::now();
    let table = desk_table();
    let elapsed = t0.elapsed().as_secs_f64();
    let cell = table.cell("S0", 100_000, 1.0).unwrap();

    let mut pass = elapsed <= 600.0;
    let mut parts = Vec::new();
    for (i, name) in PARAM_NAMES.iter().enumerate() {
        let bound = 4.0 * REFERENCE_STD_100K[i] / (100.0f64).sqrt() + 0.005;
        let gap = (cell.stats[i].mean - TRUTH[i]).abs();
        let ok = gap <= bound;
        pass &= ok;
        parts.push(format!(
            "{name} |{:.4}-{}|={gap:.4}{}{bound:.4}",
            cell.stats[i].mean,
            TRUTH[i],
            if ok { "<=" } else { ">" },
        ));
    }
    gate(
        4,
        "desk-scale replication means",
        pass,
        &format!(
            "{}; {} of {} replications failed to fit; {elapsed:.0}s (limit 600s). \
             The k and sigma_v misses are a property of the M=2 chain at this scale: \
             replication sd(k) = {:.3} around a mean of {:.3} (the bound was budgeted \
             from a reference dispersion of 0.03), and the {}-fit survivorship \
             (k > 0) shifts the k mean up by about +0.05, which sigma_v inherits. \
             Deeper-lag averaging (M around 10-20) would be needed to reach the \
             reference dispersion; the displayed chain fixes M = 2.",
            parts.join(", "),
            cell.n_failed,
            cell.replications,
            cell.stats[1].std,
            cell.stats[1].mean,
            cell.replications - cell.n_failed,
        ),
    );
}

/// Full-scale variant of criterion 4 (400 replications at N = 400K), kept
/// behind `--ignored` because it is a reporting run, not a gate.
#[test]
#[ignore = "full-scale reporting run; enable with --ignored"]
fn criterion_4_full_scale_report() {
    let spec = ExperimentSpec {
        label: "full".to_string(),
        settings: vec![setting("S0").unwrap()],
        n_list: vec![400_000],
        h_list: vec![1.0],
        replications: 400,
        substeps: 20,
        master_seed: 20260815,
    };
    let table = run_experiment(&spec).unwrap();
    println!("{}", table.summary_text());
}

#[test]
fn criterion_5_std_scaling_in_n() {
    let spec = ExperimentSpec {
        label: "scaling".to_string(),
        settings: vec![setting("S0").unwrap()],
        n_list: vec![25_000, 100_000, 400_000],
        h_list: vec![1.0],
        replications: 100,
        substeps: 20,
        master_seed: 20260815,
    };
    let table = run_experiment(&spec).unwrap();
    let rows = scaling_analysis(&table);
    assert_eq!(rows.len(), 2, "two adjacent sample-size steps");

    let mut pass = true;
    let mut parts = Vec::new();
    for row in &rows {
        for (name, ratio) in PARAM_NAMES.iter().zip(row.ratios) {
            let ok = (1.25..=3.2).contains(&ratio);
            pass &= ok;
            parts.push(format!(
                "{name} {}K->{}K {ratio:.2}{}",
                row.n_small / 1000,
                row.n_large / 1000,
                if ok { "" } else { " OUT" }
            ));
        }
    }
    gate(
        5,
        "1/sqrt(N) std scaling",
        pass,
        &format!(
            "per-step std ratios (band 1.25..3.2): {}. The rho ratios sit below the \
             band because sd(rho) stalls near 0.15 from 25K to 400K: whenever the \
             k estimate lands near zero — still common at these scales given \
             sd(k) about 0.05 at N=400K — the downstream rho map blows up, so its \
             dispersion is tail-driven rather than 1/sqrt(N)-normal. The other four \
             parameters scale inside the band.",
            parts.join(", ")
        ),
    );
}

#[test]
fn criterion_6_interval_robustness() {
    let desk = desk_table().cell("S0", 100_000, 1.0).unwrap();
    let theta_band = 2.0 * desk.stats[2].std;
    let mu_band = 2.0 * desk.stats[0].std;

    let spec = ExperimentSpec {
        label: "interval".to_string(),
        settings: vec![setting("S0").unwrap()],
        n_list: vec![100_000],
        h_list: vec![0.5, 1.0, 2.0],
        replications: 50,
        substeps: 20,
        master_seed: 20260815,
    };
    let table = run_experiment(&spec).unwrap();

    let mut pass = true;
    let mut parts = Vec::new();
    for h in [0.5, 1.0, 2.0] {
        let cell = table.cell("S0", 100_000, h).unwrap();
        let theta_gap = (cell.stats[2].mean - TRUTH[2]).abs();
        let mu_gap = (cell.stats[0].mean - TRUTH[0]).abs();
        let ok = theta_gap <= theta_band && mu_gap <= mu_band;
        pass &= ok;
        parts.push(format!(
            "h={h}: |theta-0.25|={theta_gap:.4} (band {theta_band:.4}), \
             |mu-0.125|={mu_gap:.4} (band {mu_band:.4}){}",
            if ok { "" } else { " MISS" }
        ));
    }
    gate(6, "interval robustness of theta and mu", pass, &parts.join("; "));
}

#[test]
fn criterion_7_long_run_variance_cross_check() {
    // Batch means on a 4M-return path.
    let grid = SamplingGrid::new(1.0, 4_000_000, 20).unwrap();
    let opts = SimOptions { fixed_initial_variance: false, record_variance: false };
    let bundle = simulate_with(&ModelSpec::Heston(s0()), &grid, 424_242, opts).unwrap();
    let y = &bundle.returns.values;
    let batch_len = 1000usize;
    let batches: Vec<f64> = y
        .chunks_exact(batch_len)
        .map(|c| c.iter().sum::<f64>() / batch_len as f64)
        .collect();
    let bm = batches.iter().sum::<f64>() / batches.len() as f64;
    let batch_var =
        batches.iter().map(|m| (m - bm).powi(2)).sum::<f64>() / (batches.len() - 1) as f64;
    let lrv_batch = batch_len as f64 * batch_var;
    let batch_rel = (lrv_batch - SIGMA11_S0).abs() / SIGMA11_S0;

    // HAC on the first million returns, without the closed-form override.
    let head = ReturnSeries::new(1.0, y[..1_000_000].to_vec()).unwrap();
    let sigma = sigma_hac(&head, None).unwrap();
    let hac_rel = (sigma.entry(0, 0) - SIGMA11_S0).abs() / SIGMA11_S0;

    gate(
        7,
        "long-run variance of the mean",
        batch_rel <= 0.10 && hac_rel <= 0.10,
        &format!(
            "batch means ({} batches of {batch_len}): {lrv_batch:.4} vs exact {SIGMA11_S0} \
             ({:.1}% off); HAC at N=1M: {:.4} ({:.1}% off); tolerance 10%",
            batches.len(),
            100.0 * batch_rel,
            sigma.entry(0, 0),
            100.0 * hac_rel,
        ),
    );
}

#[test]
fn criterion_8_delta_method_calibration() {
    // Jacobian row 1 at the population moments: exactly the analytic
    // gradient of the k map, which depends on gamma only through the two
    // lag covariances.
    let p = s0().validate().unwrap();
    let gamma = population_gamma(&p, 1.0);
    let jac = jacobian_g(&gamma, 1.0).unwrap();
    let want_row = [0.0, 0.0, 1.0 / gamma.cov1, -1.0 / gamma.cov2, 0.0];
    let row_exact = (0..5).all(|c| jac.entry(0, c) == want_row[c]);

    // Coverage of the 95% interval for mu over 200 desk-scale replications.
    let grid = SamplingGrid::new(1.0, 100_000, 20).unwrap();
    let mut fitted = 0usize;
    let mut covered = 0usize;
    for rep in 0..200u64 {
        let bundle = simulate(&ModelSpec::Heston(s0()), &grid, 31_000 + rep).unwrap();
        let Ok(fit) = mm_estimate(&bundle.returns, &EstimatorConfig::default()) else {
            continue;
        };
        let valid = fit.params.validate().ok();
        let Ok((se, _)) = standard_errors(&bundle.returns, valid.as_ref()) else {
            continue;
        };
        fitted += 1;
        if (fit.params.mu - TRUTH[0]).abs() <= 1.96 * se.mu {
            covered += 1;
        }
    }
    let coverage = covered as f64 / fitted as f64;
    gate(
        8,
        "delta-method calibration",
        row_exact && fitted >= 120 && (0.90..=0.99).contains(&coverage),
        &format!(
            "Jacobian k-row at population moments {}; mu interval covered truth in \
             {covered}/{fitted} fitted replications = {:.1}% (accepted 90..99%; \
             {} of 200 replications produced no interval because the closed-form \
             fit rejected the draw)",
            if row_exact { "exact" } else { "MISMATCH" },
            100.0 * coverage,
            200 - fitted,
        ),
    );
}

/// Sample versions of the seven return statistics used by the extension
/// systems, in system order.
fn seven_sample_stats(y: &[f64]) -> [f64; 7] {
    let n = y.len();
    let nf = n as f64;
    let mean = y.iter().sum::<f64>() / nf;
    let ysq_mean = y.iter().map(|v| v * v).sum::<f64>() / nf;
    let variance = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
    let cov = |lag: usize| {
        (0..n - lag).map(|i| (y[i] - mean) * (y[i + lag] - mean)).sum::<f64>() / (n - lag) as f64
    };
    let covsq1 = (0..n - 1)
        .map(|i| (y[i] * y[i] - ysq_mean) * (y[i + 1] - mean))
        .sum::<f64>()
        / (n - 1) as f64;
    let cov_y_ysq = (0..n - 1)
        .map(|i| (y[i] - mean) * (y[i + 1] * y[i + 1] - ysq_mean))
        .sum::<f64>()
        / (n - 1) as f64;
    let cm3 = y.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / nf;
    [mean, variance, cov(1), cov(2), covsq1, cov_y_ysq, cm3]
}

/// `mean ± se` across independent replicates.
fn replicate_mean_se(values: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let reps = values.len() as f64;
    let dims = values[0].len();
    let mut mean = vec![0.0; dims];
    for v in values {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x / reps;
        }
    }
    let mut se = vec![0.0; dims];
    for v in values {
        for ((s, x), m) in se.iter_mut().zip(v).zip(&mean) {
            *s += (x - m).powi(2) / (reps - 1.0);
        }
    }
    for s in &mut se {
        *s = (*s / reps).sqrt();
    }
    (mean, se)
}

#[test]
fn criterion_9_extension_self_consistency() {
    // D1 nesting: the return-jump system at lambda = 0 is the base system.
    let p = s0().validate().unwrap();
    let no_jumps = JumpSpec::new(0.0, JumpDist::Normal { mean: 0.0, sd: 0.05 }).unwrap();
    let nested = d1_moment_system(&p, &no_jumps, 1.0).unwrap();
    let base = heston_moment_system(&p, 1.0).unwrap();
    let nesting_ok = nested
        .entries
        .iter()
        .zip(&base.entries)
        .all(|((na, va), (nb, vb))| na == nb && (va - vb).abs() <= 1e-15 * vb.abs().max(1e-15));

    // D2: the variance ladder (central moments about theta) against Monte
    // Carlo across independent paths, three standard errors.
    let jump = JumpSpec::new(0.2, JumpDist::Exponential { mean: 0.05 }).unwrap();
    let model = ModelSpec::VarianceJump(s0(), jump);
    let ladder = d2_moment_system(&p, &jump, 1.0).unwrap();
    let grid = SamplingGrid::new(1.0, 50_000, 25).unwrap();
    let stats: Vec<Vec<f64>> = (0..12u64)
        .map(|seed| {
            let bundle = simulate(&model, &grid, 90_000 + seed).unwrap();
            let v = bundle.variance_path.as_ref().unwrap();
            (1..=4)
                .map(|m| v.iter().map(|x| (x - 0.25).powi(m)).sum::<f64>() / v.len() as f64)
                .collect()
        })
        .collect();
    let (mc_mean, mc_se) = replicate_mean_se(&stats);
    let mut d2_ok = true;
    let mut d2_parts = Vec::new();
    for m in 1..=4usize {
        let want = ladder.value(&format!("v_central{m}")).unwrap();
        let gap = (mc_mean[m - 1] - want).abs();
        let band = 3.0 * mc_se[m - 1];
        let ok = gap <= band;
        d2_ok &= ok;
        d2_parts.push(format!("m{m} |{:.2e}-{want:.2e}|<={band:.1e}{}", mc_mean[m - 1], if ok { "" } else { " MISS" }));
    }

    // D3: the seven-entry two-factor system against Monte Carlo.
    let two = TwoFactorParams {
        mu: 0.1,
        factor1: VolFactor { k: 0.1, theta: 0.15, sigma_v: 0.08 },
        factor2: VolFactor { k: 0.6, theta: 0.1, sigma_v: 0.2 },
    };
    let system = d3_moment_system(&two, 1.0).unwrap();
    let model = ModelSpec::TwoFactor(two);
    let grid = SamplingGrid::new(1.0, 100_000, 8).unwrap();
    let stats: Vec<Vec<f64>> = (0..12u64)
        .map(|seed| {
            let bundle = simulate(&model, &grid, 70_000 + seed).unwrap();
            seven_sample_stats(&bundle.returns.values).to_vec()
        })
        .collect();
    let (mc_mean, mc_se) = replicate_mean_se(&stats);
    let mut d3_ok = true;
    let mut d3_parts = Vec::new();
    for (i, (name, want)) in system.entries.iter().enumerate() {
        let gap = (mc_mean[i] - want).abs();
        let band = 3.0 * mc_se[i];
        let ok = gap <= band;
        d3_ok &= ok;
        d3_parts.push(format!("{name} |{:.2e}-{want:.2e}|<={band:.1e}{}", mc_mean[i], if ok { "" } else { " MISS" }));
    }

    gate(
        9,
        "extension self-consistency",
        nesting_ok && d2_ok && d3_ok,
        &format!(
            "lambda=0 nesting {}; variance-jump ladder vs MC (12 paths, 3se): {}; \
             two-factor seven-entry system vs MC (12 paths, 3se): {}",
            if nesting_ok { "exact" } else { "MISMATCH" },
            d2_parts.join(", "),
            d3_parts.join(", "),
        ),
    );
}

#[test]
fn criterion_10_bit_reproducibility() {
    // In-process: identical seeds give bit-identical paths, estimates and
    // report tables.
    let grid = SamplingGrid::new(1.0, 20_000, 5).unwrap();
    let a = simulate(&ModelSpec::Heston(s0()), &grid, 7).unwrap();
    let b = simulate(&ModelSpec::Heston(s0()), &grid, 7).unwrap();
    let paths_ok = a.returns.values.iter().zip(&b.returns.values).all(|(x, y)| x.to_bits() == y.to_bits())
        && a.variance_path
            .as_ref()
            .unwrap()
            .iter()
            .zip(b.variance_path.as_ref().unwrap())
            .all(|(x, y)| x.to_bits() == y.to_bits());

    let ea = mm_estimate(&a.returns, &EstimatorConfig::default()).unwrap();
    let eb = mm_estimate(&b.returns, &EstimatorConfig::default()).unwrap();
    let estimates_ok = ea.params.mu.to_bits() == eb.params.mu.to_bits()
        && ea.params.k.to_bits() == eb.params.k.to_bits()
        && ea.params.rho.to_bits() == eb.params.rho.to_bits();

    let spec = ExperimentSpec {
        label: "repro".to_string(),
        settings: vec![setting("S0").unwrap()],
        n_list: vec![5_000],
        h_list: vec![1.0],
        replications: 6,
        substeps: 3,
        master_seed: 11,
    };
    let tables_ok = run_experiment(&spec).unwrap().to_csv() == run_experiment(&spec).unwrap().to_csv();

    // Binary double runs: byte-identical artifacts.
    let dir = std::env::temp_dir().join(format!("svmm-accept-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("s0.cfg");
    std::fs::write(
        &cfg,
        "mu = 0.125\nk = 0.1\ntheta = 0.25\nsigma_v = 0.1\nrho = -0.7\nh = 1.0\nn = 4000\nsubsteps = 5\n",
    )
    .unwrap();
    let run_cli = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_svmm")).args(args).output().unwrap();
        assert!(out.status.success(), "cli failed: {}", String::from_utf8_lossy(&out.stderr));
        out.stdout
    };
    let cfg_s = cfg.to_str().unwrap();
    let sim1 = run_cli(&["simulate", "--config", cfg_s, "--seed", "99"]);
    let sim2 = run_cli(&["simulate", "--config", cfg_s, "--seed", "99"]);
    let csv = dir.join("path.csv");
    std::fs::write(&csv, &sim1).unwrap();
    let est1 = run_cli(&["estimate", "--returns", csv.to_str().unwrap(), "--stderr"]);
    let est2 = run_cli(&["estimate", "--returns", csv.to_str().unwrap(), "--stderr"]);
    let cli_ok = sim1 == sim2 && est1 == est2;

    gate(
        10,
        "bit reproducibility",
        paths_ok && estimates_ok && tables_ok && cli_ok,
        &format!(
            "in-process paths {}, estimates {}, report tables {}; binary double runs \
             byte-identical: {}",
            if paths_ok { "bit-identical" } else { "DIFFER" },
            if estimates_ok { "bit-identical" } else { "DIFFER" },
            if tables_ok { "identical" } else { "DIFFER" },
            if cli_ok { "yes" } else { "NO" },
        ),
    );
}
