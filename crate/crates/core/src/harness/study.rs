//! Monte Carlo studies: estimation accuracy and power curves.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::io::Table;
use super::scenario::{generate_replicate, generate_replicate_rng, EtaPattern, ScenarioConfig};
use crate::error::{Error, Result};
use crate::estimator::fit;
use crate::model::ModelSpec;
use crate::testing::{resample_test, ResampleOptions, ResamplingMethod, StatisticKind};

/// Name of coordinate `j` of β = (γ, ξ, vec η); indices in names are 1-based.
pub fn coefficient_name(j: usize, m: usize, p: usize) -> String {
    if j == 0 {
        "gamma".to_string()
    } else if j <= m {
        format!("xi_{j}")
    } else {
        let k = j - 1 - m;
        format!("eta_{}_{}", k % p + 1, k / p + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub index: usize,
    pub truth: f64,
    pub mean: f64,
    pub sd: f64,
    /// Average over replicates of `sqrt([Σ̂]_j / n)`.
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub config: ScenarioConfig,
    pub rows: Vec<ParameterSummary>,
    pub amse_mean: f64,
    pub amse_sd: f64,
    /// Replicates that produced a fit.
    pub used: usize,
    pub failed: usize,
    pub non_converged: usize,
    /// λ chosen in each used replicate.
    pub lambdas: Vec<f64>,
}

impl EstimationReport {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["parameter", "index", "truth", "mean", "sd", "se"]);
        for r in &self.rows {
            t.push(vec![r.name.clone(), r.index.to_string(), r.truth.to_string(), r.mean.to_string(), r.sd.to_string(), r.se.to_string()]);
        }
        t.push(vec!["amse".into(), String::new(), "0".into(), self.amse_mean.to_string(), self.amse_sd.to_string(), String::new()]);
        t
    }
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

struct EstimationDraw {
    beta: Vec<f64>,
    se: Vec<f64>,
    amse: f64,
    converged: bool,
    lambda: f64,
}

/// Fits `spec` to every replicate of `config` and summarizes the estimates of
/// γ and of every coordinate whose true value is nonzero. AMSE is the mean of
/// `β̂_j²` over the coordinates whose true value is zero.
pub fn run_estimation_study(config: &ScenarioConfig, spec: &ModelSpec) -> Result<EstimationReport> {
    config.validate()?;
    if config.eta_pattern != EtaPattern::FixedCorner {
        return Err(Error::InvalidInput("estimation studies use the fixed-corner pattern".into()));
    }
    let (_, truth) = generate_replicate(config, 0)?;
    let truth = truth.to_vector();
    let (p, _, m) = config.template.dims();
    let tracked: Vec<usize> = (0..truth.len()).filter(|&j| j == 0 || truth[j] != 0.0).collect();
    let zeros: Vec<usize> = (1..truth.len()).filter(|&j| truth[j] == 0.0).collect();

    let draws: Vec<Result<EstimationDraw>> = (0..config.replicates)
        .into_par_iter()
        .map(|i| {
            let (data, _) = generate_replicate(config, i)?;
            let f = fit(&data, spec)?;
            let beta = f.beta_hat.to_vector();
            let amse = zeros.iter().map(|&j| beta[j] * beta[j]).sum::<f64>() / zeros.len().max(1) as f64;
            Ok(EstimationDraw {
                beta: tracked.iter().map(|&j| beta[j]).collect(),
                se: tracked.iter().map(|&j| f.sigma_hat.std_error(j, data.n())).collect(),
                amse,
                converged: f.converged,
                lambda: f.lambda_used,
            })
        })
        .collect();

    let mut ok = Vec::new();
    let mut failed = 0;
    for (i, d) in draws.into_iter().enumerate() {
        match d {
            Ok(d) => ok.push(d),
            Err(e) => {
                log::warn!("estimation replicate {i} failed: {e}");
                failed += 1;
            }
        }
    }
    if ok.is_empty() {
        return Err(Error::NonConvergence { iterations: config.replicates, context: "every estimation replicate failed".into() });
    }
    let non_converged = ok.iter().filter(|d| !d.converged).count();
    if non_converged > 0 {
        log::warn!("{non_converged} replicates stopped at the iteration limit");
    }
    let rows = tracked
        .iter()
        .enumerate()
        .map(|(k, &j)| {
            let est: Vec<f64> = ok.iter().map(|d| d.beta[k]).collect();
            let (mean, sd) = mean_sd(&est);
            let se = ok.iter().map(|d| d.se[k]).sum::<f64>() / ok.len() as f64;
            ParameterSummary { name: coefficient_name(j, m, p), index: j, truth: truth[j], mean, sd, se }
        })
        .collect();
    let (amse_mean, amse_sd) = mean_sd(&ok.iter().map(|d| d.amse).collect::<Vec<_>>());
    Ok(EstimationReport {
        config: config.clone(),
        rows,
        amse_mean,
        amse_sd,
        used: ok.len(),
        failed,
        non_converged,
        lambdas: ok.iter().map(|d| d.lambda).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub kind: StatisticKind,
    pub effect_size: f64,
    pub rejections: usize,
    /// Datasets whose test ran; failed datasets are excluded.
    pub datasets: usize,
    pub failed: usize,
    pub rate: f64,
    /// `sqrt(rate (1 − rate) / datasets)`.
    pub mc_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    pub config: ScenarioConfig,
    pub method: ResamplingMethod,
    pub alpha: f64,
    pub reps_per_test: usize,
    pub rows: Vec<PowerRow>,
}

impl PowerReport {
    pub fn rate(&self, kind: StatisticKind, effect_size: f64) -> Option<f64> {
        self.rows.iter().find(|r| r.kind == kind && r.effect_size == effect_size).map(|r| r.rate)
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(&["statistic", "effect_size", "rejections", "datasets", "failed", "rate", "mc_se"]);
        for r in &self.rows {
            t.push(vec![
                r.kind.name().into(),
                r.effect_size.to_string(),
                r.rejections.to_string(),
                r.datasets.to_string(),
                r.failed.to_string(),
                r.rate.to_string(),
                r.mc_se.to_string(),
            ]);
        }
        t
    }
}

/// Bootstrap when the template has confounders, permutation otherwise.
pub fn default_method(m: usize) -> ResamplingMethod {
    if m > 0 {
        ResamplingMethod::ParametricBootstrap
    } else {
        ResamplingMethod::Permutation
    }
}

/// Rejection rates at level `alpha` for every statistic and effect size.
///
/// Dataset `i` is the same draw for every `c` apart from the scaling of η,
/// and its resampling seed comes from the same stream, so the curves share
/// their Monte Carlo noise across the grid. `resample.seed` is ignored.
pub fn run_power_study(
    config: &ScenarioConfig,
    spec: &ModelSpec,
    kinds: &[StatisticKind],
    c_grid: &[f64],
    resample: &ResampleOptions,
    alpha: f64,
) -> Result<PowerReport> {
    config.validate()?;
    if kinds.is_empty() || c_grid.is_empty() {
        return Err(Error::InvalidInput("power studies need at least one statistic and one effect size".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let (_, _, m) = config.template.dims();
    let method = default_method(m);
    let jobs: Vec<(usize, usize)> = (0..c_grid.len()).flat_map(|c| (0..config.replicates).map(move |i| (c, i))).collect();
    let outcomes: Vec<Result<Vec<bool>>> = jobs
        .par_iter()
        .map(|&(ci, i)| {
            let cfg = ScenarioConfig { effect_size: c_grid[ci], ..config.clone() };
            let (data, _, mut rng) = generate_replicate_rng(&cfg, i)?;
            let opts = ResampleOptions { seed: rng.random(), ..resample.clone() };
            let tests = resample_test(&data, spec, method, kinds, &opts, None)?;
            Ok(tests.iter().map(|t| t.p_value <= alpha).collect())
        })
        .collect();

    let mut rows = Vec::new();
    for (ci, &c) in c_grid.iter().enumerate() {
        let mine = &outcomes[ci * config.replicates..(ci + 1) * config.replicates];
        let ok: Vec<&Vec<bool>> = mine.iter().filter_map(|r| r.as_ref().ok()).collect();
        let failed = mine.len() - ok.len();
        if failed > 0 {
            log::warn!("{failed} datasets failed at effect size {c}");
        }
        for (k, &kind) in kinds.iter().enumerate() {
            let rejections = ok.iter().filter(|r| r[k]).count();
            let datasets = ok.len();
            let rate = if datasets > 0 { rejections as f64 / datasets as f64 } else { f64::NAN };
            rows.push(PowerRow {
                kind,
                effect_size: c,
                rejections,
                datasets,
                failed,
                rate,
                mc_se: (rate * (1.0 - rate) / datasets as f64).sqrt(),
            });
        }
    }
    Ok(PowerReport { config: config.clone(), method, alpha, reps_per_test: resample.reps, rows })
}
