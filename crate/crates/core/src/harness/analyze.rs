//! One-shot analysis of a dataset: fit, intervals, coordinate-wise and global
//! resampling tests.

use serde::{Deserialize, Serialize};

use super::io::{fmt_opt, Table};
use super::study::coefficient_name;
use crate::error::{Error, Result};
use crate::estimator::fit;
use crate::inference::confidence_interval;
use crate::model::{Family, MatrixDataset, ModelSpec};
use crate::testing::{resample_outcome, ResampleOptions, ResamplingMethod, StatisticKind, TestResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub index: usize,
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    /// Resampling p-value of `β̂_j² / ([Σ̂]_j / n)`; η coordinates only.
    pub p_value: Option<f64>,
    /// `p_value ≤ alpha / (p·q)`.
    pub significant: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub family: Family,
    pub rank: usize,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub q: usize,
    pub s_r: usize,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    pub alpha: f64,
    pub method: ResamplingMethod,
    pub reps: usize,
    pub seed: u64,
    /// Per-coordinate significance threshold `alpha / (p·q)`.
    pub bonferroni_threshold: f64,
    /// `η̂` row by row.
    pub eta: Vec<Vec<f64>>,
    pub coefficients: Vec<CoefficientRow>,
    pub tests: Vec<TestResult>,
}

impl AnalysisReport {
    pub fn coefficient_table(&self) -> Table {
        let mut t = Table::new(&["index", "name", "estimate", "std_error", "ci_lower", "ci_upper", "p_value", "significant"]);
        for c in &self.coefficients {
            t.push(vec![
                c.index.to_string(),
                c.name.clone(),
                c.estimate.to_string(),
                c.std_error.to_string(),
                c.ci_lower.to_string(),
                c.ci_upper.to_string(),
                fmt_opt(c.p_value),
                c.significant.map(|s| s.to_string()).unwrap_or_default(),
            ]);
        }
        t
    }

    pub fn eta_table(&self) -> Table {
        eta_table(&self.eta)
    }

    pub fn test_table(&self) -> Table {
        test_table(&self.tests)
    }

    /// Names of the flagged η coordinates.
    pub fn significant(&self) -> Vec<&str> {
        self.coefficients.iter().filter(|c| c.significant == Some(true)).map(|c| c.name.as_str()).collect()
    }
}

/// `η̂` as a `p × q` table with columns `row, col_1, …, col_q`.
pub fn eta_table(eta: &[Vec<f64>]) -> Table {
    let q = eta.first().map_or(0, |r| r.len());
    let mut header = vec!["row".to_string()];
    header.extend((1..=q).map(|k| format!("col_{k}")));
    let mut t = Table { header, rows: Vec::new() };
    for (j, row) in eta.iter().enumerate() {
        let mut cells = vec![(j + 1).to_string()];
        cells.extend(row.iter().map(|v| v.to_string()));
        t.push(cells);
    }
    t
}

pub fn test_table(tests: &[TestResult]) -> Table {
    let mut t = Table::new(&["statistic", "observed", "p_value", "method", "reps", "failed", "seed", "approximate"]);
    for r in tests {
        t.push(vec![
            r.kind.name().into(),
            r.observed.to_string(),
            r.p_value.to_string(),
            r.method.name().into(),
            r.reps.to_string(),
            r.failed.to_string(),
            r.seed.to_string(),
            r.approximate.to_string(),
        ]);
    }
    t
}

/// Fits `spec`, attaches confidence intervals at level `1 − alpha`, and runs
/// one resampling loop for the global statistics and the coordinate-wise
/// statistics of the η block.
pub fn analyze(
    data: &MatrixDataset,
    spec: &ModelSpec,
    kinds: &[StatisticKind],
    method: ResamplingMethod,
    resample: &ResampleOptions,
    alpha: f64,
) -> Result<AnalysisReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if method == ResamplingMethod::Permutation && data.m() > 0 {
        return Err(Error::PermutationWithConfounders { m: data.m() });
    }
    let (n, m, p, q) = (data.n(), data.m(), data.p(), data.q());
    let observed = fit(data, spec)?;
    let opts = ResampleOptions { coordinate_pvalues: true, ..resample.clone() };
    let outcome = resample_outcome(data, spec, method, kinds, &opts, Some(&observed))?;
    let coord_p = outcome.coordinate_p_values.expect("coordinate p-values were requested");

    let threshold = alpha / (p * q) as f64;
    if 1.0 / (1.0 + opts.reps as f64) > threshold {
        log::warn!(
            "with {} replicates no coordinate can reach the Bonferroni threshold {threshold:e}; use at least {} replicates",
            opts.reps,
            (1.0 / threshold).ceil() as usize
        );
    }
    let beta = observed.beta_hat.to_vector();
    let coefficients = (0..beta.len())
        .map(|j| {
            let var = observed.sigma_hat.diag(j);
            let (lo, hi) = confidence_interval(beta[j], var, n, alpha)?;
            let p_value = (j > m).then(|| coord_p[j - 1 - m]);
            Ok(CoefficientRow {
                index: j,
                name: coefficient_name(j, m, p),
                estimate: beta[j],
                std_error: observed.sigma_hat.std_error(j, n),
                ci_lower: lo,
                ci_upper: hi,
                p_value,
                significant: p_value.map(|pv| pv <= threshold),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let eta = observed.eta_hat(p, q);
    Ok(AnalysisReport {
        family: spec.family,
        rank: spec.rank,
        n,
        m,
        p,
        q,
        s_r: observed.s_r,
        lambda: observed.lambda_used,
        iterations: observed.iterations,
        converged: observed.converged,
        alpha,
        method,
        reps: opts.reps,
        seed: opts.seed,
        bonferroni_threshold: threshold,
        eta: (0..p).map(|j| eta.row(j).iter().cloned().collect()).collect(),
        coefficients,
        tests: outcome.tests,
    })
}
