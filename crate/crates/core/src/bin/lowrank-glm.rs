use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use lowrank_glm::estimator::{fit, select_lambda_cv, CvGrid, FitResult};
use lowrank_glm::harness::io::{metadata_path, write_metadata, Table};
use lowrank_glm::harness::study::{coefficient_name, default_method};
use lowrank_glm::harness::{self, analyze::test_table, DatasetPaths, EtaPattern, ScenarioConfig, Template};
use lowrank_glm::inference::confidence_interval;
use lowrank_glm::model::{effective_params, Family, LambdaPolicy, MatrixDataset, ModelSpec};
use lowrank_glm::testing::{resample_test, GesatResidual, LambdaRefit, ResampleOptions, ResamplingMethod, StatisticKind};
use lowrank_glm::{Error, Result};

/// Low-rank matrix-covariate GLMs: fitting, inference and resampling tests.
#[derive(Parser, Debug)]
#[command(name = "lowrank-glm", version)]
struct Cli {
    /// Worker threads for resampling and studies (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the rank-r model and report coefficients with confidence intervals.
    Fit(FitArgs),
    /// Test H0: eta = 0 with bootstrap or permutation p-values.
    Test(TestArgs),
    /// Cross-validate lambda and print the score table.
    Cv(CvArgs),
    /// Generate synthetic data or run estimation/power studies.
    Simulate(SimulateArgs),
    /// Fit, intervals, coordinate-wise and global tests in one run.
    Analyze(AnalyzeArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Response file, one value per line.
    #[arg(long)]
    response: PathBuf,
    /// Matrix covariate file: "p q" then one column-major row per observation.
    #[arg(long)]
    matrices: PathBuf,
    /// Optional confounder CSV (n rows, header optional).
    #[arg(long)]
    covariates: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FamilyArg {
    Normal,
    Logistic,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Normal => Family::Normal,
            FamilyArg::Logistic => Family::Logistic,
        }
    }
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "normal")]
    family: FamilyArg,
    /// Rank r of eta.
    #[arg(long, default_value_t = 1)]
    rank: usize,
    /// A fixed penalty value, or "cv" to cross-validate.
    #[arg(long, default_value = "cv")]
    lambda: String,
    /// Comma-separated lambda candidates for cv (default: the s_r-based grid).
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Seed for fold assignment and resampling.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

impl ModelArgs {
    fn spec(&self) -> Result<ModelSpec> {
        let penalty = if self.lambda.eq_ignore_ascii_case("cv") {
            LambdaPolicy::CrossValidated(CvGrid::explicit(self.lambda_grid.clone(), self.folds, self.seed))
        } else {
            let v: f64 = self
                .lambda
                .parse()
                .map_err(|_| Error::InvalidInput(format!("--lambda expects a number or `cv`, got `{}`", self.lambda)))?;
            LambdaPolicy::Fixed(v)
        };
        let mut spec = ModelSpec::new(self.family.into(), self.rank, penalty);
        spec.max_outer_iters = self.max_iter;
        spec.beta_rel_tol = self.tol;
        Ok(spec)
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    /// Bootstrap with confounders, permutation without.
    Auto,
    Bootstrap,
    Permutation,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ResidualArg {
    Literal,
    MeanScale,
}

#[derive(Args, Debug)]
struct ResampleArgs {
    /// Statistics: wald, max, combined, gesat, combined_gesat.
    #[arg(long = "statistic", value_delimiter = ',', default_value = "combined,combined_gesat,gesat")]
    statistics: Vec<String>,
    #[arg(long, value_enum, default_value = "auto")]
    method: MethodArg,
    #[arg(long, default_value_t = 999)]
    reps: usize,
    /// Keep the observed lambda in replicate refits (approximate when lambda is cross-validated).
    #[arg(long)]
    frozen_lambda: bool,
    /// Start replicate fits from the ridge initializer instead of the observed B.
    #[arg(long)]
    no_warm_start: bool,
    /// Residual inside the gesat statistic.
    #[arg(long, value_enum, default_value = "literal")]
    gesat_residual: ResidualArg,
}

impl ResampleArgs {
    fn kinds(&self) -> Result<Vec<StatisticKind>> {
        self.statistics
            .iter()
            .map(|s| StatisticKind::parse(s.trim()).ok_or_else(|| Error::InvalidInput(format!("unknown statistic `{s}`"))))
            .collect()
    }

    fn method(&self, m: usize) -> ResamplingMethod {
        match self.method {
            MethodArg::Auto => default_method(m),
            MethodArg::Bootstrap => ResamplingMethod::ParametricBootstrap,
            MethodArg::Permutation => ResamplingMethod::Permutation,
        }
    }

    fn options(&self, seed: u64) -> ResampleOptions {
        ResampleOptions {
            lambda_refit: if self.frozen_lambda { LambdaRefit::Frozen } else { LambdaRefit::SamePolicy },
            warm_start: !self.no_warm_start,
            gesat_residual: match self.gesat_residual {
                ResidualArg::Literal => GesatResidual::Literal,
                ResidualArg::MeanScale => GesatResidual::MeanScale,
            },
            ..ResampleOptions::new(self.reps, seed)
        }
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Coefficient CSV; the eta table and metadata are written alongside. Stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TestArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    resample: ResampleArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    resample: ResampleArgs,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TemplateArg {
    Psqi,
    Eeg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PatternArg {
    FixedCorner,
    Sparse2,
    LowRankCols2,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StudyArg {
    /// Write one synthetic dataset.
    Dataset,
    /// Table of means, SDs and SEs over replicates.
    Estimation,
    /// Rejection rates over an effect-size grid.
    Power,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    template: TemplateArg,
    #[arg(long, value_enum, default_value = "fixed-corner")]
    pattern: PatternArg,
    #[arg(long, value_enum, default_value = "dataset")]
    study: StudyArg,
    /// Effect size c.
    #[arg(long, default_value_t = 1.0)]
    effect: f64,
    /// Effect sizes for power studies.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    c_grid: Vec<f64>,
    /// Sample size (template default when absent).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 100)]
    replicates: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Rank of the fitted model (template default when absent).
    #[arg(long)]
    rank: Option<usize>,
    /// A fixed penalty value, or "cv" for the s_r-based grid.
    #[arg(long, default_value = "cv")]
    lambda: String,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long = "statistic", value_delimiter = ',', default_value = "combined,combined_gesat,gesat")]
    statistics: Vec<String>,
    #[arg(long, default_value_t = 199)]
    reps: usize,
    #[arg(long)]
    frozen_lambda: bool,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Output directory (dataset) or CSV path (studies).
    #[arg(long)]
    out: PathBuf,
}

fn load(data: &DataArgs, family: Family) -> Result<MatrixDataset> {
    let paths = DatasetPaths { response: data.response.clone(), matrices: data.matrices.clone(), covariates: data.covariates.clone() };
    harness::load_dataset(&paths, Some(family))
}

fn emit(table: &Table, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => table.write(path),
        None => {
            print!("{}", table.to_csv_string());
            Ok(())
        }
    }
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.{suffix}.csv"))
}

fn spec_json(spec: &ModelSpec) -> serde_json::Value {
    let lambda = match &spec.penalty {
        LambdaPolicy::Fixed(v) => json!({ "policy": "fixed", "value": v }),
        LambdaPolicy::CrossValidated(g) => json!({ "policy": "cv", "candidates": g.candidates, "folds": g.folds, "seed": g.seed }),
    };
    json!({
        "family": spec.family.name(),
        "rank": spec.rank,
        "lambda": lambda,
        "max_outer_iters": spec.max_outer_iters,
        "beta_rel_tol": spec.beta_rel_tol,
        "pinv_rel_tol": spec.pinv_rel_tol,
    })
}

fn fit_json(f: &FitResult) -> serde_json::Value {
    json!({
        "lambda_used": f.lambda_used,
        "s_r": f.s_r,
        "n": f.n,
        "iterations": f.iterations,
        "converged": f.converged,
        "sigma_sq_hat": f.sigma_sq_hat,
        "jacobian_rank": f.sigma_hat.delta_rank,
        "objective_final": f.objective_trace.last(),
    })
}

fn warn_small_ratio(data: &MatrixDataset, spec: &ModelSpec) {
    let s_r = effective_params(data.m(), data.p(), data.q(), spec.rank);
    let ratio = data.n() as f64 / s_r as f64;
    if ratio < 5.0 {
        log::warn!("n/s_r = {ratio:.2} is below 5; the asymptotic approximation may be poor, consider a smaller rank");
    }
}

fn run_fit(args: &FitArgs) -> Result<()> {
    let spec = args.model.spec()?;
    let data = load(&args.data, spec.family)?;
    spec.validate(&data)?;
    warn_small_ratio(&data, &spec);
    let f = fit(&data, &spec)?;
    let beta = f.beta_hat.to_vector();
    let mut table = Table::new(&["index", "name", "estimate", "std_error", "ci_lower", "ci_upper"]);
    for j in 0..beta.len() {
        let (lo, hi) = confidence_interval(beta[j], f.sigma_hat.diag(j), data.n(), args.alpha)?;
        table.push(vec![
            j.to_string(),
            coefficient_name(j, data.m(), data.p()),
            beta[j].to_string(),
            f.sigma_hat.std_error(j, data.n()).to_string(),
            lo.to_string(),
            hi.to_string(),
        ]);
    }
    emit(&table, args.out.as_deref())?;
    if let Some(out) = &args.out {
        let eta = f.eta_hat(data.p(), data.q());
        let rows: Vec<Vec<f64>> = (0..data.p()).map(|j| eta.row(j).iter().cloned().collect()).collect();
        harness::analyze::eta_table(&rows).write(&sibling(out, "eta"))?;
        write_metadata(&metadata_path(out), &json!({ "command": "fit", "spec": spec_json(&spec), "fit": fit_json(&f), "alpha": args.alpha }))?;
    }
    Ok(())
}

fn run_test(args: &TestArgs) -> Result<()> {
    let spec = args.model.spec()?;
    let data = load(&args.data, spec.family)?;
    let kinds = args.resample.kinds()?;
    let method = args.resample.method(data.m());
    let opts = args.resample.options(args.model.seed);
    let results = resample_test(&data, &spec, method, &kinds, &opts, None)?;
    emit(&test_table(&results), args.out.as_deref())?;
    if let Some(out) = &args.out {
        write_metadata(
            &metadata_path(out),
            &json!({
                "command": "test",
                "spec": spec_json(&spec),
                "method": method.name(),
                "reps": opts.reps,
                "seed": opts.seed,
                "frozen_lambda": args.resample.frozen_lambda,
                "warm_start": opts.warm_start,
                "gesat_residual": format!("{:?}", opts.gesat_residual),
            }),
        )?;
    }
    Ok(())
}

fn run_cv(args: &CvArgs) -> Result<()> {
    let spec = args.model.spec()?;
    let data = load(&args.data, spec.family)?;
    spec.validate(&data)?;
    let grid = match &spec.penalty {
        LambdaPolicy::CrossValidated(g) => g.clone(),
        LambdaPolicy::Fixed(v) => CvGrid::explicit(vec![*v], args.model.folds, args.model.seed),
    };
    let (chosen, scores) = select_lambda_cv(&data, &spec, &grid, grid.seed)?;
    let mut table = Table::new(&["lambda", "score", "selected"]);
    for s in &scores {
        table.push(vec![s.lambda.to_string(), s.score.to_string(), (s.lambda == chosen).to_string()]);
    }
    emit(&table, args.out.as_deref())?;
    if let Some(out) = &args.out {
        write_metadata(&metadata_path(out), &json!({ "command": "cv", "spec": spec_json(&spec), "selected": chosen }))?;
    }
    Ok(())
}

fn scenario(args: &SimulateArgs) -> ScenarioConfig {
    let template = match args.template {
        TemplateArg::Psqi => Template::PsqiNormal,
        TemplateArg::Eeg => Template::EegLogistic,
    };
    let pattern = match args.pattern {
        PatternArg::FixedCorner => EtaPattern::FixedCorner,
        PatternArg::Sparse2 => EtaPattern::Sparse2,
        PatternArg::LowRankCols2 => EtaPattern::LowRankCols2,
    };
    ScenarioConfig {
        n: args.n.unwrap_or(template.default_n()),
        replicates: args.replicates,
        noise_sigma: args.noise_sigma,
        ..ScenarioConfig::new(template, pattern, args.effect, args.seed)
    }
}

fn run_simulate(args: &SimulateArgs) -> Result<()> {
    let cfg = scenario(args);
    cfg.validate()?;
    let rank = args.rank.unwrap_or(match cfg.template {
        Template::PsqiNormal => 3,
        Template::EegLogistic => 2,
    });
    let model = ModelArgs {
        family: match cfg.template.family() {
            Family::Normal => FamilyArg::Normal,
            Family::Logistic => FamilyArg::Logistic,
        },
        rank,
        lambda: args.lambda.clone(),
        lambda_grid: Vec::new(),
        folds: args.folds,
        seed: args.seed,
        max_iter: 200,
        tol: 1e-6,
    };
    let spec = model.spec()?;
    let meta = json!({
        "command": "simulate",
        "synthetic": true,
        "scenario": cfg,
        "spec": spec_json(&spec),
    });
    match args.study {
        StudyArg::Dataset => {
            let (data, truth) = harness::generate_scenario(&cfg)?;
            let paths = DatasetPaths::in_dir(&args.out, data.has_confounders());
            harness::save_dataset(&data, &paths)?;
            let beta = truth.to_vector();
            let mut table = Table::new(&["index", "name", "truth"]);
            for j in 0..beta.len() {
                table.push(vec![j.to_string(), coefficient_name(j, data.m(), data.p()), beta[j].to_string()]);
            }
            table.write(&args.out.join("truth.csv"))?;
            write_metadata(&args.out.join("scenario.meta.json"), &meta)?;
        }
        StudyArg::Estimation => {
            let report = harness::run_estimation_study(&cfg, &spec)?;
            report.table().write(&args.out)?;
            let mut meta = meta;
            meta["used"] = json!(report.used);
            meta["failed"] = json!(report.failed);
            meta["non_converged"] = json!(report.non_converged);
            write_metadata(&metadata_path(&args.out), &meta)?;
        }
        StudyArg::Power => {
            let kinds = args
                .statistics
                .iter()
                .map(|s| StatisticKind::parse(s.trim()).ok_or_else(|| Error::InvalidInput(format!("unknown statistic `{s}`"))))
                .collect::<Result<Vec<_>>>()?;
            let opts = ResampleOptions {
                lambda_refit: if args.frozen_lambda { LambdaRefit::Frozen } else { LambdaRefit::SamePolicy },
                ..ResampleOptions::new(args.reps, args.seed)
            };
            let report = harness::run_power_study(&cfg, &spec, &kinds, &args.c_grid, &opts, args.alpha)?;
            report.table().write(&args.out)?;
            let mut meta = meta;
            meta["method"] = json!(report.method.name());
            meta["reps_per_test"] = json!(args.reps);
            meta["alpha"] = json!(args.alpha);
            write_metadata(&metadata_path(&args.out), &meta)?;
        }
    }
    Ok(())
}

fn run_analyze(args: &AnalyzeArgs) -> Result<()> {
    let spec = args.model.spec()?;
    let data = load(&args.data, spec.family)?;
    spec.validate(&data)?;
    warn_small_ratio(&data, &spec);
    let kinds = args.resample.kinds()?;
    let method = args.resample.method(data.m());
    let opts = args.resample.options(args.model.seed);
    let report = harness::analyze(&data, &spec, &kinds, method, &opts, args.alpha)?;
    emit(&report.coefficient_table(), args.out.as_deref())?;
    if let Some(out) = &args.out {
        report.eta_table().write(&sibling(out, "eta"))?;
        report.test_table().write(&sibling(out, "tests"))?;
        write_metadata(
            &metadata_path(out),
            &json!({
                "command": "analyze",
                "spec": spec_json(&spec),
                "lambda_used": report.lambda,
                "s_r": report.s_r,
                "iterations": report.iterations,
                "converged": report.converged,
                "method": method.name(),
                "reps": report.reps,
                "seed": report.seed,
                "alpha": report.alpha,
                "bonferroni_threshold": report.bonferroni_threshold,
                "significant": report.significant(),
            }),
        )?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            log::warn!("could not configure {t} threads: {e}");
        }
    }
    let outcome = match &cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Test(a) => run_test(a),
        Command::Cv(a) => run_cv(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Analyze(a) => run_analyze(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code: u8 = if e.is_numerical() { 3 } else { 2 };
            eprintln!("{}", json!({ "error": { "kind": e.kind(), "exit_code": code, "message": e.to_string() } }));
            ExitCode::from(code)
        }
    }
}
