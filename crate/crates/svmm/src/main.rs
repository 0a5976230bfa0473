//! Command-line tools for the stochastic-volatility moment toolkit.
//!
//! Subcommands:
//!
//! - `simulate` — sample a path and write it as CSV,
//! - `estimate` — fit a model to a CSV return or price series, JSON output,
//! - `moments` — print a model's population moment system as CSV,
//! - `derive`  — print a symbolic central return moment in canonical text,
//! - `verify`  — engine-vs-closed-form report over a random parameter grid,
//! - `experiment` — replication studies (built-in tables or a spec file).
//!
//! Exit codes: 0 on success, 1 on domain errors (the error name goes to
//! stderr), 2 on usage errors. Every data artifact is byte-stable under a
//! fixed seed; wall-clock timing is only ever printed in stderr summaries.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{ArgGroup, Args, Parser, Subcommand};
use serde::Serialize;

use svmm::asymptotics::{self, Provenance};
use svmm::config::{Config, ModelKind};
use svmm::engine::{self, Monomial, Poly, rat};
use svmm::estimate::{
    self, EstimationData, EstimatorConfig, ExtensionConfig, SampleMoments,
    mm_estimate_from_moments,
};
use svmm::model::{HestonParams, ModelSpec};
use svmm::moments::{
    self, d1_moment_system, d2_moment_system, d3_moment_system, population_gamma,
};
use svmm::simulate::{PathBundle, ReturnSeries, returns_from_prices, simulate};

#[derive(Parser)]
#[command(
    name = "svmm",
    version,
    about = "Moment-method tools for affine stochastic volatility models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a return path and write it as CSV.
    Simulate(SimulateArgs),
    /// Estimate model parameters from a CSV series; JSON on stdout.
    Estimate(EstimateArgs),
    /// Print the population moment system of a model as CSV rows.
    Moments(MomentsArgs),
    /// Print a symbolic central return moment in canonical text form.
    Derive(DeriveArgs),
    /// Check engine values against the closed forms; PASS/FAIL per identity.
    Verify(VerifyArgs),
    /// Run a replication study and print its report table as CSV.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Config file with model parameters and the sampling grid.
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Master seed of the random streams (mandatory: every path is
    /// reproducible).
    #[arg(long)]
    seed: u64,
    /// Model variant: heston, svj-return, svj-variance or two-factor.
    #[arg(long, default_value = "heston")]
    model: String,
    /// Output CSV path; stdout when omitted.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
#[command(group(ArgGroup::new("input").required(true).args(["returns", "prices"])))]
struct EstimateArgs {
    /// CSV with a log-return column (the `simulate` output format).
    #[arg(long, value_name = "FILE")]
    returns: Option<PathBuf>,
    /// CSV with a strictly positive price column; log-differenced first.
    #[arg(long, value_name = "FILE")]
    prices: Option<PathBuf>,
    /// Optional config file (supplies `h` and extension template values).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Model variant to fit.
    #[arg(long, default_value = "heston")]
    model: String,
    /// Lag depth of the mean-reversion estimator (baseline model).
    #[arg(long = "M", default_value_t = 2, value_name = "M")]
    m: usize,
    /// Add delta-method standard errors and the Sigma provenance map.
    #[arg(long)]
    stderr: bool,
    /// Output JSON path; stdout when omitted.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MomentsArgs {
    /// Config file with model parameters (and optionally `h`).
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Model variant whose moment system to print.
    #[arg(long, default_value = "heston")]
    model: String,
    /// Output CSV path; stdout when omitted.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DeriveArgs {
    /// Order of the central return moment to derive.
    #[arg(long)]
    order: u32,
}

#[derive(Args)]
struct VerifyArgs {
    /// Number of random parameter sets in the comparison grid.
    #[arg(long, default_value_t = 100)]
    grid: usize,
    /// Relative tolerance of the numeric identities.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Built-in table name (settings | scaling | interval) or a spec file.
    #[arg(long, value_name = "NAME|FILE")]
    spec: String,
    /// Full scale for built-in tables: 400 replications at N = 400K.
    #[arg(long)]
    paper_scale: bool,
    /// Output CSV path; stdout when omitted.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Master-seed override.
    #[arg(long)]
    seed: Option<u64>,
}

/// A failure after argument parsing succeeded: the originating error type
/// and variant (printed so scripts can dispatch on them) plus the display
/// message.
struct DomainError {
    kind: &'static str,
    variant: String,
    message: String,
}

impl DomainError {
    fn new(kind: &'static str, variant: &str, message: impl Into<String>) -> Self {
        Self { kind, variant: variant.to_string(), message: message.into() }
    }
}

/// First token of a Debug rendering: the enum variant name.
fn variant_name(debug: &str) -> &str {
    debug.split([' ', '{', '(']).next().unwrap_or(debug)
}

macro_rules! domain_error_from {
    ($($ty:ty => $name:literal),* $(,)?) => {$(
        impl From<$ty> for DomainError {
            fn from(e: $ty) -> Self {
                let debug = format!("{e:?}");
                DomainError::new($name, variant_name(&debug), e.to_string())
            }
        }
    )*};
}

domain_error_from!(
    svmm::model::ModelError => "ModelError",
    svmm::simulate::SimulateError => "SimulateError",
    svmm::moments::MomentsError => "MomentsError",
    svmm::engine::EngineError => "EngineError",
    svmm::estimate::EstimateError => "EstimateError",
    svmm::asymptotics::AsymptoticsError => "AsymptoticsError",
    svmm::experiments::ExperimentError => "ExperimentError",
    svmm::config::ConfigError => "ConfigError",
);

impl From<std::io::Error> for DomainError {
    fn from(e: std::io::Error) -> Self {
        DomainError::new("IoError", &format!("{:?}", e.kind()), e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error[{}::{}]: {}", e.kind, e.variant, e.message);
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<ExitCode, DomainError> {
    match command {
        Command::Simulate(args) => run_simulate(args),
        Command::Estimate(args) => run_estimate(args),
        Command::Moments(args) => run_moments(args),
        Command::Derive(args) => run_derive(args),
        Command::Verify(args) => run_verify(args),
        Command::Experiment(args) => run_experiment_cmd(args),
    }
}

/// Reads and parses a config file, reporting unknown keys on stderr.
fn load_config(path: &Path) -> Result<Config, DomainError> {
    let text = fs::read_to_string(path)?;
    let cfg = Config::parse(&text)?;
    for key in cfg.unknown_keys() {
        eprintln!("warning: unknown config key `{key}` (ignored)");
    }
    Ok(cfg)
}

/// Writes `text` to the `--out` path, or stdout when none was given.
fn emit(out: Option<&Path>, text: &str) -> Result<(), DomainError> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run_simulate(args: SimulateArgs) -> Result<ExitCode, DomainError> {
    let cfg = load_config(&args.config)?;
    let kind = ModelKind::parse(&args.model)?;
    let model = cfg.model(kind)?;
    let grid = cfg.grid()?;
    let t0 = Instant::now();
    let bundle = simulate(&model, &grid, args.seed)?;
    let csv = path_csv(&bundle);
    emit(args.out.as_deref(), &csv)?;
    eprintln!(
        "simulate: {} returns (h = {}, substeps = {}, seed = {}) in {:.3}s",
        bundle.returns.len(),
        grid.h,
        grid.substeps,
        args.seed,
        t0.elapsed().as_secs_f64()
    );
    Ok(ExitCode::SUCCESS)
}

/// CSV rendering of a simulated path. Floats carry 17 significant digits so
/// that parsing the file reproduces them bit-for-bit.
fn path_csv(bundle: &PathBundle) -> String {
    let mut s = String::new();
    match &bundle.variance_path {
        Some(variance) => {
            s.push_str("index,log_return,variance\n");
            for (i, (r, v)) in bundle.returns.values.iter().zip(variance).enumerate() {
                writeln!(s, "{i},{r:.16e},{v:.16e}").expect("string write");
            }
        }
        None => {
            s.push_str("index,log_return\n");
            for (i, r) in bundle.returns.values.iter().enumerate() {
                writeln!(s, "{i},{r:.16e}").expect("string write");
            }
        }
    }
    s
}

/// A numeric series read from CSV: the value column plus the variance
/// column when the header announces one.
struct CsvSeries {
    values: Vec<f64>,
    variance: Option<Vec<f64>>,
}

/// Reads a one- or multi-column CSV. A header row is recognized by any
/// alphabetic character; the value column is the one the header names
/// (`log_return`, `price` or `value`), falling back to the second column of
/// multi-column files (the first being the index).
fn read_series_csv(path: &Path) -> Result<CsvSeries, DomainError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).peekable();
    let mut value_col = None;
    let mut variance_col = None;
    if let Some((_, first)) = lines.peek()
        && first.chars().any(|c| c.is_ascii_alphabetic())
    {
        for (idx, name) in first.split(',').map(str::trim).enumerate() {
            match name {
                "log_return" | "price" | "value" => value_col = Some(idx),
                "variance" => variance_col = Some(idx),
                _ => {}
            }
        }
        lines.next();
    }
    let mut values = Vec::new();
    let mut variance = Vec::new();
    for (line_no, line) in lines {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let vc = value_col.unwrap_or(usize::from(cells.len() >= 2));
        let parse = |idx: usize| -> Result<f64, DomainError> {
            cells
                .get(idx)
                .and_then(|c| c.parse::<f64>().ok())
                .ok_or_else(|| {
                    DomainError::new(
                        "CsvError",
                        "BadCell",
                        format!("{}:{}: column {} is not a number", path.display(), line_no + 1, idx + 1),
                    )
                })
        };
        values.push(parse(vc)?);
        if let Some(idx) = variance_col {
            variance.push(parse(idx)?);
        }
    }
    Ok(CsvSeries { values, variance: variance_col.map(|_| variance) })
}

/// Baseline estimate as JSON. Field order is the serialization order, which
/// keeps the output byte-stable.
#[derive(Serialize)]
struct EstimateJson<'a> {
    schema: &'static str,
    model: &'static str,
    params: &'a HestonParams,
    stderr: Option<&'a estimate::HestonStderr>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma_provenance: Option<Vec<Vec<Provenance>>>,
    diagnostics: &'a [String],
}

/// Extension fit as JSON.
#[derive(Serialize)]
struct ExtensionJson<'a> {
    schema: &'static str,
    model: &'static str,
    params: &'a ModelSpec,
    residual: f64,
    converged: bool,
    diagnostics: &'a [String],
}

fn run_estimate(args: EstimateArgs) -> Result<ExitCode, DomainError> {
    let cfg = match &args.config {
        Some(path) => Some(load_config(path)?),
        None => None,
    };
    let h = match &cfg {
        Some(c) => c.h()?,
        None => 1.0,
    };
    let (series, source) = match (&args.returns, &args.prices) {
        (Some(path), None) => (read_series_csv(path)?, "returns"),
        (None, Some(path)) => (read_series_csv(path)?, "prices"),
        _ => unreachable!("clap enforces exactly one input"),
    };
    let returns = if source == "prices" {
        returns_from_prices(&series.values, h)?
    } else {
        ReturnSeries::new(h, series.values)?
    };
    let kind = ModelKind::parse(&args.model)?;

    let t0 = Instant::now();
    let json = match kind {
        ModelKind::Heston => {
            let config = EstimatorConfig { m: args.m, ..EstimatorConfig::default() };
            let result = estimate::mm_estimate(&returns, &config)?;
            let mut diagnostics = result.diagnostics.clone();
            let (se, provenance) = if args.stderr {
                let fitted = result.params.validate().ok();
                if fitted.is_none() {
                    diagnostics.push(
                        "fitted parameters fall outside the validated domain; \
                         Sigma(1,1) estimated by HAC instead of the closed form"
                            .to_string(),
                    );
                }
                let (se, sigma) = asymptotics::standard_errors(&returns, fitted.as_ref())?;
                let map = (0..5)
                    .map(|l| (0..5).map(|m| sigma.provenance(l, m)).collect())
                    .collect();
                (Some(se), Some(map))
            } else {
                (None, None)
            };
            serde_json::to_string_pretty(&EstimateJson {
                schema: "svmm/1",
                model: "heston",
                params: &result.params,
                stderr: se.as_ref(),
                sigma_provenance: provenance,
                diagnostics: &diagnostics,
            })
            .expect("estimate result serializes")
        }
        _ => {
            if args.stderr {
                return Err(DomainError::new(
                    "CliError",
                    "StderrUnsupported",
                    "--stderr applies to the baseline model only",
                ));
            }
            if args.m != 2 {
                eprintln!("warning: --M applies to the baseline estimator; ignored here");
            }
            let template = match &cfg {
                Some(c) => c.model(kind)?,
                None => {
                    return Err(DomainError::new(
                        "CliError",
                        "ConfigRequired",
                        "extension fits need --config for the template parameters",
                    ));
                }
            };
            let data = EstimationData { returns: &returns, variance: series.variance.as_deref() };
            let fit = estimate::extension_estimate(&template, &data, &ExtensionConfig::default())?;
            let model_name = match kind {
                ModelKind::SvjReturn => "svj-return",
                ModelKind::SvjVariance => "svj-variance",
                ModelKind::TwoFactor => "two-factor",
                ModelKind::Heston => unreachable!(),
            };
            serde_json::to_string_pretty(&ExtensionJson {
                schema: "svmm/1",
                model: model_name,
                params: &fit.model,
                residual: fit.residual,
                converged: fit.converged,
                diagnostics: &fit.diagnostics,
            })
            .expect("extension fit serializes")
        }
    };
    emit(args.out.as_deref(), &format!("{json}\n"))?;
    eprintln!(
        "estimate: {} observations (h = {h}) in {:.3}s",
        returns.len(),
        t0.elapsed().as_secs_f64()
    );
    Ok(ExitCode::SUCCESS)
}

fn run_moments(args: MomentsArgs) -> Result<ExitCode, DomainError> {
    let cfg = load_config(&args.config)?;
    let kind = ModelKind::parse(&args.model)?;
    let h = cfg.h()?;
    let spec = cfg.model(kind)?;
    let system = match &spec {
        ModelSpec::Heston(p) => moments::heston_moment_system(&p.validate()?, h)?,
        ModelSpec::ReturnJump(p, j) => d1_moment_system(&p.validate()?, j, h)?,
        ModelSpec::VarianceJump(p, j) => d2_moment_system(&p.validate()?, j, h)?,
        ModelSpec::TwoFactor(t) => d3_moment_system(t, h)?,
    };
    let mut csv = String::from("name,value\n");
    for (name, value) in &system.entries {
        writeln!(csv, "{name},{value:.14e}").expect("string write");
    }
    emit(args.out.as_deref(), &csv)?;
    Ok(ExitCode::SUCCESS)
}

fn run_derive(args: DeriveArgs) -> Result<ExitCode, DomainError> {
    let poly = engine::engine().central_moment_return(args.order)?;
    println!("{}", poly.canonical_text());
    Ok(ExitCode::SUCCESS)
}

/// One numeric identity check: tracks its worst relative error across the
/// grid.
struct IdentityCheck {
    name: &'static str,
    worst: f64,
}

impl IdentityCheck {
    fn new(name: &'static str) -> Self {
        Self { name, worst: 0.0 }
    }

    fn record(&mut self, got: f64, want: f64) {
        let rel = (got - want).abs() / want.abs().max(1e-300);
        if rel > self.worst {
            self.worst = rel;
        }
    }

    fn report(&self, tol: f64, sets: usize) -> (bool, String) {
        let pass = self.worst <= tol;
        let line = format!(
            "{} {}: max rel err {:.2e} over {} parameter sets (tol {:.1e})",
            if pass { "PASS" } else { "FAIL" },
            self.name,
            self.worst,
            sets,
            tol
        );
        (pass, line)
    }
}

/// Expected symbolic variance of the integrated variance over one interval:
/// `theta sigma_v^2 k^-2 (h - h_tilde)` expanded over the engine basis.
fn expected_iv_variance() -> Poly {
    let mut p = Poly::zero();
    p.add_term(Monomial { theta: 1, sigma_v: 2, kinv: 2, h: 1, ..Monomial::default() }, rat(1, 1));
    p.add_term(Monomial { theta: 1, sigma_v: 2, kinv: 3, ..Monomial::default() }, rat(-1, 1));
    p.add_term(Monomial { theta: 1, sigma_v: 2, kinv: 3, ekh: 1, ..Monomial::default() }, rat(1, 1));
    p
}

/// Expected symbolic `cov(IE_n I_n, IE_n)` in the engine's discounted form
/// (the raw covariance times `e^{-2knh}`):
/// `theta sigma_v k^-2 (1 - E) - theta sigma_v k^-1 h E^2`.
fn expected_ie_cross_cov() -> Poly {
    let mut p = Poly::zero();
    p.add_term(Monomial { theta: 1, sigma_v: 1, kinv: 2, ..Monomial::default() }, rat(1, 1));
    p.add_term(Monomial { theta: 1, sigma_v: 1, kinv: 2, ekh: 1, ..Monomial::default() }, rat(-1, 1));
    p.add_term(Monomial { theta: 1, sigma_v: 1, kinv: 1, h: 1, ekh: 2, ..Monomial::default() }, rat(-1, 1));
    p
}

fn run_verify(args: VerifyArgs) -> Result<ExitCode, DomainError> {
    if args.grid == 0 {
        return Err(DomainError::new("CliError", "EmptyGrid", "--grid must be at least 1"));
    }
    let t0 = Instant::now();
    let e = engine::engine();
    let mean_poly = e.mean_return_poly()?;

    // Deterministic xorshift parameter sampler; the same generator the unit
    // tests use, so the grid is reproducible without a seed flag.
    let mut state = 0x9e3779b97f4a7c15u64;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };

    let mut moment_checks = [
        IdentityCheck::new("mean"),
        IdentityCheck::new("variance"),
        IdentityCheck::new("cov1"),
        IdentityCheck::new("cov2"),
        IdentityCheck::new("covsq1"),
    ];
    let mut roundtrip_checks = [
        IdentityCheck::new("round-trip k"),
        IdentityCheck::new("round-trip theta"),
        IdentityCheck::new("round-trip sigma_v"),
        IdentityCheck::new("round-trip mu"),
        IdentityCheck::new("round-trip rho"),
    ];

    for i in 0..args.grid {
        let k = 0.02 + 1.5 * next();
        let theta = 0.05 + 0.6 * next();
        let sigma_v = (2.0 * k * theta).sqrt() * (0.15 + 0.8 * next());
        let rho = -0.95 + 1.9 * next();
        let mu = -0.3 + 0.8 * next();
        let p = HestonParams::new(mu, k, theta, sigma_v, rho).validate()?;
        let h = [0.5, 1.0, 2.0][i % 3];

        let g = population_gamma(&p, h);
        let ctx = engine::ctx_for(&p, h);
        let mean_e = mean_poly.eval(&ctx);
        let var_e = e.central_moment_return_at(2, &p, h)?;
        let cov1_e = e.cross_moment(1, 1, 1, &p, h)?;
        let cov2_e = e.cross_moment(1, 1, 2, &p, h)?;
        let covsq1_e = e.cross_moment(2, 1, 1, &p, h)? + 2.0 * mean_e * cov1_e;
        moment_checks[0].record(mean_e, g.mean);
        moment_checks[1].record(var_e, g.variance);
        moment_checks[2].record(cov1_e, g.cov1);
        moment_checks[3].record(cov2_e, g.cov2);
        moment_checks[4].record(covsq1_e, g.covsq1);

        let sm = SampleMoments {
            n: usize::MAX,
            mean: g.mean,
            variance: g.variance,
            cov_lags: vec![g.cov1, g.cov2],
            covsq1: g.covsq1,
        };
        let fit = mm_estimate_from_moments(&sm, h, &EstimatorConfig::default())?;
        roundtrip_checks[0].record(fit.params.k, k);
        roundtrip_checks[1].record(fit.params.theta, theta);
        roundtrip_checks[2].record(fit.params.sigma_v, sigma_v);
        roundtrip_checks[3].record(fit.params.mu, mu);
        roundtrip_checks[4].record(fit.params.rho, rho);
    }

    let mut failures = 0usize;
    for check in moment_checks.iter().chain(roundtrip_checks.iter()) {
        let (pass, line) = check.report(args.tol, args.grid);
        println!("{line}");
        if !pass {
            failures += 1;
        }
    }

    for (name, got, want) in [
        ("var(IV) fixed point", e.iv_variance_poly()?, expected_iv_variance()),
        ("cov(IE*I, IE) fixed point", e.ie_cross_cov_poly()?, expected_ie_cross_cov()),
    ] {
        if got == want {
            println!("PASS {name}: exact symbolic identity");
        } else {
            println!("FAIL {name}: engine gives {}", got.canonical_text());
            failures += 1;
        }
    }

    eprintln!(
        "verify: {} identities, {failures} failed, {:.2}s",
        moment_checks.len() + roundtrip_checks.len() + 2,
        t0.elapsed().as_secs_f64()
    );
    Ok(if failures == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn run_experiment_cmd(args: ExperimentArgs) -> Result<ExitCode, DomainError> {
    use svmm::experiments::{ExperimentSpec, Scale, run_experiment, scaling_analysis};

    let scale = if args.paper_scale { Scale::Paper } else { Scale::Desk };
    let mut spec = match args.spec.as_str() {
        "settings" => ExperimentSpec::settings_table(scale),
        "scaling" => ExperimentSpec::scaling_table(scale),
        "interval" => ExperimentSpec::interval_table(scale),
        path => {
            if args.paper_scale {
                eprintln!("warning: --paper-scale applies to built-in tables; ignored for a spec file");
            }
            load_config(Path::new(path))?.experiment_spec()?
        }
    };
    if let Some(seed) = args.seed {
        spec.master_seed = seed;
    }
    let t0 = Instant::now();
    let table = run_experiment(&spec)?;
    emit(args.out.as_deref(), &table.to_csv())?;

    eprintln!("{}", table.summary_text().trim_end());
    for row in scaling_analysis(&table) {
        if row.degenerate {
            continue;
        }
        let ratios: Vec<String> = svmm::experiments::PARAM_NAMES
            .iter()
            .zip(row.ratios.iter())
            .map(|(n, r)| format!("{n} {r:.2}"))
            .collect();
        eprintln!(
            "scaling {} h={}: std ratio {} -> {} per parameter: {} (expected {:.2}{})",
            row.setting,
            row.h,
            row.n_small,
            row.n_large,
            ratios.join(", "),
            row.expected,
            if row.flagged.is_empty() {
                String::new()
            } else {
                format!("; off-rate: {}", row.flagged.join(", "))
            }
        );
    }
    eprintln!("experiment: {:.1}s total", t0.elapsed().as_secs_f64());
    Ok(ExitCode::SUCCESS)
}
