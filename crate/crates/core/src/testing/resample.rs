//! Parametric-bootstrap and permutation p-values.
//!
//! Replicate `b` draws from its own ChaCha8 stream `(seed, b)`, so the
//! resampled statistics do not depend on how rayon schedules replicates.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::statistics::{coordinate_statistics, gesat_from_design, null_fit_design, GesatResidual, NullFit, StatisticKind, StatisticValues};
use crate::error::{Error, Result};
use crate::estimator::glm::Design;
use crate::estimator::{fit_with_design, fit_with_policy, select_lambda_cv, FitResult};
use crate::model::{mean_of, Family, LambdaPolicy, MatrixDataset, ModelSpec};
use crate::numkit::DenseMatrix;

/// Share of failed replicates above which a warning is logged.
const FAILURE_WARN_FRACTION: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResamplingMethod {
    ParametricBootstrap,
    Permutation,
}

impl ResamplingMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::ParametricBootstrap => "parametric_bootstrap",
            Self::Permutation => "permutation",
        }
    }
}

/// How λ is chosen inside each replicate refit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LambdaRefit {
    /// Repeat the observed fit's policy (cross-validation re-runs per replicate).
    #[default]
    SamePolicy,
    /// Reuse the observed λ. Faster; the p-value is then approximate whenever
    /// the observed λ came from cross-validation.
    Frozen,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResampleOptions {
    pub reps: usize,
    pub seed: u64,
    pub lambda_refit: LambdaRefit,
    /// Start replicate fits from the observed `B̂` instead of the ridge initializer.
    pub warm_start: bool,
    pub gesat_residual: GesatResidual,
    /// Also resample the per-coordinate statistics `β̂_j² / ([Σ̂]_j / n)`
    /// of the η block.
    pub coordinate_pvalues: bool,
}

impl ResampleOptions {
    pub fn new(reps: usize, seed: u64) -> Self {
        Self {
            reps,
            seed,
            lambda_refit: LambdaRefit::SamePolicy,
            warm_start: true,
            gesat_residual: GesatResidual::Literal,
            coordinate_pvalues: false,
        }
    }
}

/// Global tests plus, when requested, one p-value per η coordinate.
#[derive(Debug, Clone)]
pub struct ResampleOutcome {
    pub tests: Vec<TestResult>,
    pub coordinate_p_values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub kind: StatisticKind,
    pub observed: f64,
    pub resample_values: Vec<f64>,
    pub p_value: f64,
    pub method: ResamplingMethod,
    /// Replicates that entered the p-value.
    pub reps: usize,
    /// Replicates whose refit failed and were dropped.
    pub failed: usize,
    pub seed: u64,
    pub approximate: bool,
}

/// `(1 + #{T_b ≥ T}) / (1 + B)`; ties count as exceedances.
pub fn add_one_p_value(observed: f64, resampled: &[f64]) -> f64 {
    let exceed = resampled.iter().filter(|&&t| t >= observed).count();
    (1 + exceed) as f64 / (1 + resampled.len()) as f64
}

pub fn parametric_bootstrap_pvalue(data: &MatrixDataset, spec: &ModelSpec, kind: StatisticKind, reps: usize, seed: u64) -> Result<TestResult> {
    let opts = ResampleOptions::new(reps, seed);
    let mut out = resample_test(data, spec, ResamplingMethod::ParametricBootstrap, &[kind], &opts, None)?;
    Ok(out.remove(0))
}

pub fn permutation_pvalue(data: &MatrixDataset, spec: &ModelSpec, kind: StatisticKind, reps: usize, seed: u64) -> Result<TestResult> {
    let opts = ResampleOptions::new(reps, seed);
    let mut out = resample_test(data, spec, ResamplingMethod::Permutation, &[kind], &opts, None)?;
    Ok(out.remove(0))
}

/// Runs one resampling loop and evaluates every requested statistic on each
/// replicate. `observed_fit`, when given, must be the fit of `spec` on `data`.
pub fn resample_test(
    data: &MatrixDataset,
    spec: &ModelSpec,
    method: ResamplingMethod,
    kinds: &[StatisticKind],
    opts: &ResampleOptions,
    observed_fit: Option<&FitResult>,
) -> Result<Vec<TestResult>> {
    Ok(resample_outcome(data, spec, method, kinds, opts, observed_fit)?.tests)
}

/// As [`resample_test`], also returning per-coordinate p-values when
/// `opts.coordinate_pvalues` is set.
pub fn resample_outcome(
    data: &MatrixDataset,
    spec: &ModelSpec,
    method: ResamplingMethod,
    kinds: &[StatisticKind],
    opts: &ResampleOptions,
    observed_fit: Option<&FitResult>,
) -> Result<ResampleOutcome> {
    if kinds.is_empty() {
        return Err(Error::InvalidInput("no test statistic requested".into()));
    }
    if opts.reps == 0 {
        return Err(Error::InvalidInput("reps must be at least 1".into()));
    }
    spec.validate(data)?;
    if method == ResamplingMethod::Permutation && data.m() > 0 {
        return Err(Error::PermutationWithConfounders { m: data.m() });
    }
    let design = Design::new(data, spec.family);
    let ctx = Context::new(data, spec, design, kinds, opts, method, observed_fit)?;

    let outcomes: Vec<Result<Replicate>> = (0..opts.reps).into_par_iter().map(|b| ctx.replicate(b)).collect();
    let mut values = Vec::with_capacity(outcomes.len());
    let mut failed = 0;
    for (b, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(v) => values.push(v),
            Err(e) => {
                log::debug!("replicate {b} failed: {e}");
                failed += 1;
            }
        }
    }
    if values.is_empty() {
        return Err(Error::NonConvergence { iterations: opts.reps, context: "every resampling replicate failed".into() });
    }
    if failed as f64 > FAILURE_WARN_FRACTION * opts.reps as f64 {
        log::warn!("{failed} of {} resampling replicates failed and were dropped", opts.reps);
    }

    let approximate = opts.lambda_refit == LambdaRefit::Frozen && matches!(spec.penalty, LambdaPolicy::CrossValidated(_));
    let coordinate_p_values = ctx.observed_coords.as_ref().map(|obs| {
        (0..obs.len())
            .map(|j| {
                let resampled: Vec<f64> = values.iter().map(|v| v.coords.as_ref().expect("coordinates computed")[j]).collect();
                add_one_p_value(obs[j], &resampled)
            })
            .collect()
    });
    let tests = kinds
        .iter()
        .map(|&kind| {
            let observed = ctx.observed.get(kind);
            let resample_values: Vec<f64> = values.iter().map(|v| v.stats.get(kind)).collect();
            TestResult {
                kind,
                observed,
                p_value: add_one_p_value(observed, &resample_values),
                reps: resample_values.len(),
                resample_values,
                method,
                failed,
                seed: opts.seed,
                approximate,
            }
        })
        .collect();
    Ok(ResampleOutcome { tests, coordinate_p_values })
}

/// Statistics of one replicate.
struct Replicate {
    stats: StatisticValues,
    coords: Option<Vec<f64>>,
}

/// Everything a replicate needs, computed once from the observed data.
struct Context<'a> {
    data: &'a MatrixDataset,
    spec: &'a ModelSpec,
    design: Design,
    method: ResamplingMethod,
    opts: &'a ResampleOptions,
    need_fit: bool,
    need_null: bool,
    need_coords: bool,
    /// Linear predictor of the null fit, used to draw bootstrap responses.
    null_linear: DVector<f64>,
    null: Option<NullFit>,
    observed_fit: Option<FitResult>,
    observed: StatisticValues,
    observed_coords: Option<Vec<f64>>,
}

impl<'a> Context<'a> {
    fn new(
        data: &'a MatrixDataset,
        spec: &'a ModelSpec,
        design: Design,
        kinds: &[StatisticKind],
        opts: &'a ResampleOptions,
        method: ResamplingMethod,
        observed_fit: Option<&FitResult>,
    ) -> Result<Self> {
        let need_coords = opts.coordinate_pvalues;
        let need_fit = need_coords || kinds.iter().any(|k| k.needs_fit());
        let need_null = kinds.iter().any(|k| k.needs_null());
        let null = if need_null || method == ResamplingMethod::ParametricBootstrap {
            Some(null_fit_design(&design)?)
        } else {
            None
        };
        let null_linear = null.as_ref().map(|nf| nf.linear_predictor(&design.x)).unwrap_or_else(|| DVector::zeros(0));
        let observed_fit = if need_fit {
            Some(match observed_fit {
                Some(f) => f.clone(),
                None => fit_with_policy(data, &design, spec)?,
            })
        } else {
            None
        };
        let gesat = match (&null, need_null) {
            (Some(nf), true) => Some(gesat_from_design(&design.x, &design.y, design.m, nf, opts.gesat_residual)),
            _ => None,
        };
        let observed = StatisticValues::compute(observed_fit.as_ref(), gesat, data.m(), data.p(), data.q())?;
        let observed_coords = observed_fit
            .as_ref()
            .filter(|_| need_coords)
            .map(|f| coordinate_statistics(f, data.m(), data.p(), data.q()));
        Ok(Self {
            data,
            spec,
            design,
            method,
            opts,
            need_fit,
            need_null,
            need_coords,
            null_linear,
            null,
            observed_fit,
            observed,
            observed_coords,
        })
    }

    fn replicate(&self, b: usize) -> Result<Replicate> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.opts.seed);
        rng.set_stream(b as u64);
        match self.method {
            ResamplingMethod::ParametricBootstrap => {
                let y = self.draw_null_response(&mut rng);
                self.evaluate(self.design.with_response(y.clone()), |d| d.with_response(y.clone()))
            }
            ResamplingMethod::Permutation => {
                let mut perm: Vec<usize> = (0..self.design.n()).collect();
                perm.shuffle(&mut rng);
                self.permuted(&perm)
            }
        }
    }

    fn permuted(&self, perm: &[usize]) -> Result<Replicate> {
        self.evaluate(self.design.with_permuted_mats(perm), |d| d.with_permuted_mats(perm))
    }

    fn draw_null_response(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let nf = self.null.as_ref().expect("bootstrap context carries the null fit");
        match nf.family {
            Family::Normal => {
                let sd = nf.sigma_sq_tilde.unwrap_or(0.0).sqrt();
                self.null_linear.map(|u| u + sd * rng.sample::<f64, _>(StandardNormal))
            }
            Family::Logistic => self.null_linear.map(|u| f64::from(rng.random::<f64>() < mean_of(Family::Logistic, u))),
        }
    }

    /// Refits and recomputes on a replicate design. `rebuild` produces the
    /// matching dataset, needed only when λ is re-selected by cross-validation.
    fn evaluate(&self, design: Design, rebuild: impl Fn(&MatrixDataset) -> MatrixDataset) -> Result<Replicate> {
        let fit = if self.need_fit {
            let observed = self.observed_fit.as_ref().expect("observed fit present when statistics need it");
            let lambda = match (&self.spec.penalty, self.opts.lambda_refit) {
                (LambdaPolicy::Fixed(l), _) => *l,
                (LambdaPolicy::CrossValidated(_), LambdaRefit::Frozen) => observed.lambda_used,
                (LambdaPolicy::CrossValidated(grid), LambdaRefit::SamePolicy) => {
                    select_lambda_cv(&rebuild(self.data), self.spec, grid, grid.seed)?.0
                }
            };
            let b0: Option<&DenseMatrix> = self.opts.warm_start.then_some(&observed.theta_hat.b);
            Some(fit_with_design(&design, self.spec, lambda, b0)?)
        } else {
            None
        };
        let gesat = if self.need_null {
            let nf = match self.method {
                // The response is redrawn, so the null model is refitted.
                ResamplingMethod::ParametricBootstrap => null_fit_design(&design)?,
                // Without confounders the null fit depends on Y only.
                ResamplingMethod::Permutation => self.null.clone().expect("null fit present"),
            };
            Some(gesat_from_design(&design.x, &design.y, design.m, &nf, self.opts.gesat_residual))
        } else {
            None
        };
        let (m, p, q) = (self.design.m, self.design.p, self.design.q);
        let stats = StatisticValues::compute(fit.as_ref(), gesat, m, p, q)?;
        let coords = fit.as_ref().filter(|_| self.need_coords).map(|f| coordinate_statistics(f, m, p, q));
        Ok(Replicate { stats, coords })
    }
}
