//! Monte Carlo replication harness for the estimator study.
//!
//! The study design is a cross product of parameter settings (S0–S5), sample
//! sizes, and observation intervals. Each cell runs `replications`
//! independent simulate→estimate rounds and aggregates per-parameter
//! `mean ± std` over the successful ones; estimator failures (which happen
//! legitimately — e.g. a sample lag-2 covariance exceeding the lag-1 one
//! makes the reversion rate negative) are counted and reported, never
//! silently dropped.
//!
//! Reproducibility: every replication draws its seed from
//! (`master_seed`, cell index, replication index) via SplitMix64, and the
//! aggregation runs in fixed index order, so the whole table is a pure
//! function of the spec regardless of thread scheduling. Wall times are
//! reported separately from the deterministic artifacts.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::estimate::{EstimatorConfig, mm_estimate};
use crate::model::{HestonParams, ModelSpec, SamplingGrid};
use crate::simulate::simulate;

/// Parameter order used by every report row.
pub const PARAM_NAMES: [&str; 5] = ["mu", "k", "theta", "sigma_v", "rho"];

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment spec: {reason}")]
    InvalidSpec { reason: String },
    #[error("all {replications} replications failed for {setting}, N={n}, h={h}")]
    AllReplicationsFailed { setting: String, n: usize, h: f64, replications: usize },
}

/// A named parameter setting.
#[derive(Debug, Clone, Serialize)]
pub struct Setting {
    pub name: String,
    pub params: HestonParams,
}

/// The six built-in settings: S0 is the base
/// (mu, k, theta, sigma_v, rho) = (0.125, 0.1, 0.25, 0.1, -0.7) and each of
/// S1–S5 changes exactly one parameter.
pub fn builtin_settings() -> Vec<Setting> {
    let base = HestonParams::new(0.125, 0.1, 0.25, 0.1, -0.7);
    let mk = |name: &str, params: HestonParams| Setting { name: name.to_string(), params };
    vec![
        mk("S0", base),
        mk("S1", HestonParams { mu: 0.4, ..base }),
        mk("S2", HestonParams { k: 0.03, ..base }),
        mk("S3", HestonParams { theta: 0.5, ..base }),
        mk("S4", HestonParams { sigma_v: 0.2, ..base }),
        mk("S5", HestonParams { rho: -0.3, ..base }),
    ]
}

/// Looks up a built-in setting by name (case-insensitive).
pub fn setting(name: &str) -> Option<Setting> {
    builtin_settings().into_iter().find(|s| s.name.eq_ignore_ascii_case(name))
}

/// Scale presets for the study: `Desk` finishes in minutes on a laptop,
/// `Paper` is the full 400 replications x 400K samples design.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Desk,
    Paper,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSpec {
    pub label: String,
    pub settings: Vec<Setting>,
    pub n_list: Vec<usize>,
    pub h_list: Vec<f64>,
    pub replications: usize,
    pub substeps: usize,
    pub master_seed: u64,
}

impl ExperimentSpec {
    pub fn check(&self) -> Result<(), ExperimentError> {
        if self.replications < 2 {
            return Err(ExperimentError::InvalidSpec {
                reason: format!("replications must be >= 2, got {}", self.replications),
            });
        }
        if self.settings.is_empty() || self.n_list.is_empty() || self.h_list.is_empty() {
            return Err(ExperimentError::InvalidSpec {
                reason: "settings, n_list and h_list must all be non-empty".into(),
            });
        }
        for s in &self.settings {
            s.params.validate().map_err(|e| ExperimentError::InvalidSpec {
                reason: format!("setting {}: {e}", s.name),
            })?;
        }
        for &h in &self.h_list {
            if !(h.is_finite() && h > 0.0) {
                return Err(ExperimentError::InvalidSpec {
                    reason: format!("observation interval must be positive, got {h}"),
                });
            }
        }
        Ok(())
    }

    fn preset(label: &str, settings: Vec<Setting>, n_list: Vec<usize>, h_list: Vec<f64>, scale: Scale) -> Self {
        let replications = match scale {
            Scale::Desk => 100,
            Scale::Paper => 400,
        };
        Self {
            label: label.to_string(),
            settings,
            n_list,
            h_list,
            replications,
            substeps: 20,
            master_seed: 20260815,
        }
    }

    /// Accuracy across the six settings at one sample size.
    pub fn settings_table(scale: Scale) -> Self {
        let n = match scale {
            Scale::Desk => 100_000,
            Scale::Paper => 400_000,
        };
        Self::preset("settings", builtin_settings(), vec![n], vec![1.0], scale)
    }

    /// 1/sqrt(N) convergence at the base setting.
    pub fn scaling_table(scale: Scale) -> Self {
        Self::preset(
            "scaling",
            vec![setting("S0").unwrap()],
            vec![25_000, 100_000, 400_000],
            vec![1.0],
            scale,
        )
    }

    /// Sensitivity to the observation interval at the base setting.
    pub fn interval_table(scale: Scale) -> Self {
        let n = match scale {
            Scale::Desk => 100_000,
            Scale::Paper => 400_000,
        };
        Self::preset(
            "interval",
            vec![setting("S0").unwrap()],
            vec![n],
            vec![0.5, 1.0, 2.0, 4.0],
            scale,
        )
    }
}

/// Per-parameter aggregate over the successful replications.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// One (setting, N, h) cell of the study.
#[derive(Debug, Clone, Serialize)]
pub struct CellReport {
    pub setting: String,
    pub truth: HestonParams,
    pub n: usize,
    pub h: f64,
    pub replications: usize,
    pub n_failed: usize,
    /// Aggregates in [`PARAM_NAMES`] order.
    pub stats: [MeanStd; 5],
    /// Seconds spent on this cell (not part of the deterministic artifacts).
    pub wall_time: f64,
}

impl CellReport {
    pub fn stat(&self, param: &str) -> Option<MeanStd> {
        PARAM_NAMES.iter().position(|p| *p == param).map(|i| self.stats[i])
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportTable {
    pub label: String,
    pub cells: Vec<CellReport>,
    pub wall_time: f64,
}

impl ReportTable {
    pub fn cell(&self, setting: &str, n: usize, h: f64) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.setting == setting && c.n == n && c.h == h)
    }

    /// Long-format CSV of the aggregates. Deliberately excludes wall times
    /// so the output is byte-identical across runs with the same spec.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("setting,n,h,replications,n_failed,parameter,mean,std\n");
        for c in &self.cells {
            for (name, s) in PARAM_NAMES.iter().zip(&c.stats) {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{:.15e},{:.15e}\n",
                    c.setting, c.n, c.h, c.replications, c.n_failed, name, s.mean, s.std
                ));
            }
        }
        out
    }

    /// Human-readable block in the study's `mean ± std` format.
    pub fn summary_text(&self) -> String {
        let mut out = format!("table {}\n", self.label);
        for c in &self.cells {
            out.push_str(&format!(
                "{} N={} h={} ({} ok / {} failed)\n",
                c.setting,
                c.n,
                c.h,
                c.replications - c.n_failed,
                c.n_failed
            ));
            for (name, s) in PARAM_NAMES.iter().zip(&c.stats) {
                out.push_str(&format!("  {name}: {:.4} ± {:.4}\n", s.mean, s.std));
            }
        }
        out
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn replication_seed(master: u64, cell: usize, rep: usize) -> u64 {
    splitmix64(master ^ splitmix64(((cell as u64) << 32) | rep as u64))
}

/// Runs the full cross product of the spec. Each replication simulates a
/// fresh path and applies the closed-form estimators; a cell where every
/// replication fails is an error.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ReportTable, ExperimentError> {
    spec.check()?;
    let t_total = Instant::now();
    let mut cells = Vec::new();
    let mut cell_idx = 0usize;
    for s in &spec.settings {
        for &n in &spec.n_list {
            for &h in &spec.h_list {
                cells.push(run_cell(spec, s, n, h, cell_idx)?);
                cell_idx += 1;
            }
        }
    }
    Ok(ReportTable {
        label: spec.label.clone(),
        cells,
        wall_time: t_total.elapsed().as_secs_f64(),
    })
}

fn run_cell(
    spec: &ExperimentSpec,
    s: &Setting,
    n: usize,
    h: f64,
    cell_idx: usize,
) -> Result<CellReport, ExperimentError> {
    let t0 = Instant::now();
    let grid = SamplingGrid::new(h, n, spec.substeps).map_err(|e| {
        ExperimentError::InvalidSpec { reason: format!("cell {} N={n} h={h}: {e}", s.name) }
    })?;
    let config = EstimatorConfig::default();
    let model = ModelSpec::Heston(s.params);
    let estimates: Vec<Option<[f64; 5]>> = (0..spec.replications)
        .into_par_iter()
        .map(|rep| {
            let seed = replication_seed(spec.master_seed, cell_idx, rep);
            let bundle = simulate(&model, &grid, seed).ok()?;
            let est = mm_estimate(&bundle.returns, &config).ok()?;
            let p = est.params;
            Some([p.mu, p.k, p.theta, p.sigma_v, p.rho])
        })
        .collect();

    let ok: Vec<&[f64; 5]> = estimates.iter().flatten().collect();
    let n_failed = spec.replications - ok.len();
    if ok.is_empty() {
        return Err(ExperimentError::AllReplicationsFailed {
            setting: s.name.clone(),
            n,
            h,
            replications: spec.replications,
        });
    }
    let m = ok.len() as f64;
    let mut stats = [MeanStd { mean: 0.0, std: 0.0 }; 5];
    for (i, stat) in stats.iter_mut().enumerate() {
        let mean = ok.iter().map(|e| e[i]).sum::<f64>() / m;
        let std = if ok.len() > 1 {
            (ok.iter().map(|e| (e[i] - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
        } else {
            0.0
        };
        *stat = MeanStd { mean, std };
    }
    Ok(CellReport {
        setting: s.name.clone(),
        truth: s.params,
        n,
        h,
        replications: spec.replications,
        n_failed,
        stats,
        wall_time: t0.elapsed().as_secs_f64(),
    })
}

/// One step of the 1/sqrt(N) convergence report: the ratio of replication
/// stds between two sample sizes within the same (setting, h) group.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingRow {
    pub setting: String,
    pub h: f64,
    pub n_small: usize,
    pub n_large: usize,
    /// `std(n_small) / std(n_large)` in [`PARAM_NAMES`] order.
    pub ratios: [f64; 5],
    /// Expected ratio `sqrt(n_large / n_small)`.
    pub expected: f64,
    /// Parameters whose ratio misses `expected` by more than a factor 1.6.
    pub flagged: Vec<&'static str>,
    /// Set when the two sample sizes are identical (ratio carries no
    /// convergence information).
    pub degenerate: bool,
}

/// Compares replication stds across sample sizes: consecutive N within each
/// (setting, h) group produce one row each. Returns an empty report when no
/// group has two sample sizes.
pub fn scaling_analysis(table: &ReportTable) -> Vec<ScalingRow> {
    let mut groups: BTreeMap<(String, u64), Vec<&CellReport>> = BTreeMap::new();
    for c in &table.cells {
        groups.entry((c.setting.clone(), c.h.to_bits())).or_default().push(c);
    }
    let mut rows = Vec::new();
    for ((setting, _), mut cells) in groups {
        cells.sort_by_key(|c| c.n);
        for pair in cells.windows(2) {
            let (small, large) = (pair[0], pair[1]);
            let degenerate = small.n == large.n;
            let expected = (large.n as f64 / small.n as f64).sqrt();
            let mut ratios = [f64::NAN; 5];
            let mut flagged = Vec::new();
            for (i, name) in PARAM_NAMES.iter().enumerate() {
                let (a, b) = (small.stats[i].std, large.stats[i].std);
                if b > 0.0 {
                    ratios[i] = a / b;
                    if !degenerate && (ratios[i] > expected * 1.6 || ratios[i] < expected / 1.6) {
                        flagged.push(*name);
                    }
                }
            }
            rows.push(ScalingRow {
                setting: setting.clone(),
                h: small.h,
                n_small: small.n,
                n_large: large.n,
                ratios,
                expected,
                flagged,
                degenerate,
            });
        }
    }
    rows
}
