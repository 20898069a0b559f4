//! Penalized maximum likelihood for the rank-`r` model by alternating
//! between the two factor blocks.
//!
//! Step 1 takes `B₀` from the leading right singular vectors of a ridge fit of
//! the unrestricted model. Each outer iteration then maximizes the common
//! objective `ℓ(θ) − (λ/2)‖A‖²‖B‖²` exactly over `(γ, ξ, A)` with `B` fixed
//! and over `(γ, ξ, B)` with `A` fixed, so the objective never decreases.

pub mod cv;
pub(crate) mod glm;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::inference::{self, SandwichCovariance};
use crate::model::{beta_of_theta, loglik_term, CoefVector, FactorParams, Family, LambdaPolicy, MatrixDataset, ModelSpec};
use crate::numkit::{self, DenseMatrix};

pub use cv::{default_lambda_grid, select_lambda_cv, CvGrid, CvScore};
use glm::{solve_penalized, Design, Reduction};

/// Outcome of one rank-`r` fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta_hat: FactorParams,
    pub beta_hat: CoefVector,
    pub sigma_hat: SandwichCovariance,
    /// Residual variance, normal family only.
    pub sigma_sq_hat: Option<f64>,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub lambda_used: f64,
    pub s_r: usize,
    pub n: usize,
    pub family: Family,
    pub rank: usize,
    /// Per-λ scores when λ came from cross-validation.
    pub cv_table: Option<Vec<CvScore>>,
}

impl FitResult {
    pub fn eta_hat(&self, p: usize, q: usize) -> DenseMatrix {
        self.beta_hat.eta(p, q)
    }
}

/// Point estimate without the covariance step.
#[derive(Debug, Clone)]
pub(crate) struct PointFit {
    pub theta: FactorParams,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Ridge fit of the unrestricted model; returns the η block as a `p × q` matrix.
///
/// Only η is penalized, with strength `ridge_eps` on the mean-scaled
/// likelihood. Normal family: one linear solve. Logistic: damped Newton.
pub fn ridge_full_fit(data: &MatrixDataset, family: Family, ridge_eps: f64) -> Result<DenseMatrix> {
    if !(ridge_eps > 0.0) {
        return Err(Error::InvalidInput("ridge_eps must be positive".into()));
    }
    data.validate_for(family)?;
    ridge_eta(&Design::new(data, family), ridge_eps)
}

pub(crate) fn ridge_eta(design: &Design, ridge_eps: f64) -> Result<DenseMatrix> {
    let red = Reduction::full(design.m, design.p * design.q);
    let sub = solve_penalized(design, &red, ridge_eps, None)?;
    Ok(numkit::unvec(&sub.as_slice()[red.lead..], design.p, design.q))
}

/// `B₀`: leading `r` right singular vectors of the ridge estimate, with the
/// first-nonzero-entry-nonnegative sign rule. A zero estimate gives the first
/// `r` canonical basis vectors.
pub fn init_b(eta_ridge: &DenseMatrix, r: usize) -> DenseMatrix {
    numkit::leading_right_singular_vectors(eta_ridge, r)
}

/// Maximizes the objective over `(γ, ξ, A)` with `B` fixed.
pub fn solve_given_b(
    data: &MatrixDataset,
    family: Family,
    b_fixed: &DenseMatrix,
    lambda: f64,
    warm_start: Option<&FactorParams>,
) -> Result<(f64, DVector<f64>, DenseMatrix)> {
    check_factor(b_fixed, data.q(), "B")?;
    let design = Design::new(data, family);
    let theta = step_given_b(&design, b_fixed, lambda, warm_start)?;
    Ok((theta.gamma, theta.xi, theta.a))
}

/// Maximizes the objective over `(γ, ξ, B)` with `A` fixed.
pub fn solve_given_a(
    data: &MatrixDataset,
    family: Family,
    a_fixed: &DenseMatrix,
    lambda: f64,
    warm_start: Option<&FactorParams>,
) -> Result<(f64, DVector<f64>, DenseMatrix)> {
    check_factor(a_fixed, data.p(), "A")?;
    let design = Design::new(data, family);
    let theta = step_given_a(&design, a_fixed, lambda, warm_start)?;
    Ok((theta.gamma, theta.xi, theta.b))
}

fn check_factor(f: &DenseMatrix, rows: usize, name: &str) -> Result<()> {
    if f.nrows() != rows {
        return Err(Error::Dimension(format!("{name} has {} rows, expected {rows}", f.nrows())));
    }
    if !numkit::all_finite(f) {
        return Err(Error::InvalidInput(format!("{name} has a non-finite entry")));
    }
    Ok(())
}

fn lead_warm(w: &FactorParams, m: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(1 + m);
    v.push(w.gamma);
    v.extend(w.xi.iter());
    v
}

pub(crate) fn step_given_b(
    design: &Design,
    b: &DenseMatrix,
    lambda: f64,
    warm: Option<&FactorParams>,
) -> Result<FactorParams> {
    let (m, p, q, r) = (design.m, design.p, design.q, b.ncols());
    let red = Reduction::given_b(m, p, q, b);
    let kappa = lambda * numkit::frobenius_norm_sq(b);
    let warm_vec = warm.map(|w| {
        let mut v = lead_warm(w, m);
        v.extend(w.a.iter());
        DVector::from_vec(v)
    });
    let sub = solve_penalized(design, &red, kappa, warm_vec.as_ref())?;
    Ok(FactorParams {
        gamma: sub[0],
        xi: DVector::from_column_slice(&sub.as_slice()[1..1 + m]),
        a: numkit::unvec(&sub.as_slice()[1 + m..], p, r),
        b: b.clone(),
    })
}

pub(crate) fn step_given_a(
    design: &Design,
    a: &DenseMatrix,
    lambda: f64,
    warm: Option<&FactorParams>,
) -> Result<FactorParams> {
    let (m, p, q, r) = (design.m, design.p, design.q, a.ncols());
    let red = Reduction::given_a(m, p, q, a);
    let kappa = lambda * numkit::frobenius_norm_sq(a);
    let warm_vec = warm.map(|w| {
        let mut v = lead_warm(w, m);
        v.extend(w.b.iter());
        DVector::from_vec(v)
    });
    let sub = solve_penalized(design, &red, kappa, warm_vec.as_ref())?;
    Ok(FactorParams {
        gamma: sub[0],
        xi: DVector::from_column_slice(&sub.as_slice()[1..1 + m]),
        a: a.clone(),
        b: numkit::unvec(&sub.as_slice()[1 + m..], q, r),
    })
}

pub(crate) fn objective(design: &Design, theta: &FactorParams, lambda: f64) -> f64 {
    let beta = beta_of_theta(theta).to_vector();
    design.log_likelihood(&beta) - crate::model::penalty_term(theta, lambda)
}

pub(crate) fn default_ridge_eps(spec: &ModelSpec, n: usize, s_r: usize) -> f64 {
    spec.ridge_eps.unwrap_or(s_r as f64 / n as f64)
}

/// Fitted probabilities beyond `σ(±5)` are needed before a fit can be called
/// separated.
const SEPARATION_MIN_LINEAR: f64 = 5.0;

/// True when some fitted probability is saturated and doubling the linear
/// predictor does not lower the logistic log-likelihood. At a finite
/// maximizer the likelihood is concave along `c ↦ c·u` with its peak at
/// `c = 1`, so this only happens when the fit is still climbing towards a
/// separating direction.
pub(crate) fn looks_separated(lin: &DVector<f64>, y: &DVector<f64>) -> bool {
    let gain: f64 = lin
        .iter()
        .zip(y.iter())
        .map(|(&u, &yi)| loglik_term(Family::Logistic, yi, 2.0 * u) - loglik_term(Family::Logistic, yi, u))
        .sum();
    lin.amax() > SEPARATION_MIN_LINEAR && gain >= 0.0
}

fn check_separation(design: &Design, theta: &FactorParams, lambda: f64, iterations: usize) -> Result<()> {
    if design.family != Family::Logistic || lambda > 0.0 {
        return Ok(());
    }
    let lin = design.x.as_ref() * beta_of_theta(theta).to_vector();
    if looks_separated(&lin, &design.y) {
        return Err(Error::NonConvergence {
            iterations,
            context: format!("linear predictor reached {:.1}; the data look (quasi-)separated and the unpenalized MLE does not exist", lin.amax()),
        });
    }
    Ok(())
}

/// Alternating fit at a single λ, without the covariance.
pub(crate) fn fit_point(design: &Design, spec: &ModelSpec, lambda: f64, b0: Option<&DenseMatrix>) -> Result<PointFit> {
    let r = spec.rank;
    let b0 = match b0 {
        Some(b) => b.clone(),
        None => {
            let s_r = crate::model::effective_params(design.m, design.p, design.q, r);
            let eps = default_ridge_eps(spec, design.n(), s_r);
            init_b(&ridge_eta(design, eps)?, r)
        }
    };

    let mut current: Option<FactorParams> = None;
    let mut b = b0;
    let mut prev_beta: Option<DVector<f64>> = None;
    let mut trace = Vec::new();
    let mut best: Option<(f64, FactorParams)> = None;

    for iter in 1..=spec.max_outer_iters {
        let wrap = |e: Error| Error::AtIteration { iteration: iter, source: Box::new(e) };
        let half = step_given_b(design, &b, lambda, current.as_ref()).map_err(wrap)?;
        let mut theta = step_given_a(design, &half.a, lambda, Some(&half)).map_err(wrap)?;
        theta.rebalance();
        let value = objective(design, &theta, lambda);
        trace.push(value);
        let beta = beta_of_theta(&theta).to_vector();
        let converged = prev_beta
            .as_ref()
            .map(|old| (&beta - old).norm() / old.norm().max(1.0) < spec.beta_rel_tol)
            .unwrap_or(false);
        if best.as_ref().map_or(true, |(v, _)| value >= *v) {
            best = Some((value, theta.clone()));
        }
        if converged {
            check_separation(design, &theta, lambda, iter)?;
            return Ok(PointFit { theta, objective_trace: trace, iterations: iter, converged: true });
        }
        b = theta.b.clone();
        prev_beta = Some(beta);
        current = Some(theta);
    }
    let (_, theta) = best.expect("at least one outer iteration");
    check_separation(design, &theta, lambda, spec.max_outer_iters)?;
    log::debug!("alternating fit hit max_outer_iters = {}", spec.max_outer_iters);
    Ok(PointFit { theta, objective_trace: trace, iterations: spec.max_outer_iters, converged: false })
}

/// Runs the alternating algorithm at a fixed `lambda` and attaches the
/// sandwich covariance.
pub fn fit_alternating(data: &MatrixDataset, spec: &ModelSpec, lambda: f64) -> Result<FitResult> {
    spec.validate(data)?;
    check_lambda(lambda)?;
    let design = Design::new(data, spec.family);
    fit_with_design(&design, spec, lambda, None)
}

/// As [`fit_alternating`], starting from the supplied `B₀` instead of the
/// ridge initializer.
pub fn fit_alternating_from(data: &MatrixDataset, spec: &ModelSpec, lambda: f64, b0: &DenseMatrix) -> Result<FitResult> {
    spec.validate(data)?;
    check_lambda(lambda)?;
    if b0.shape() != (data.q(), spec.rank) {
        return Err(Error::Dimension(format!(
            "initial B is {}x{}, expected {}x{}",
            b0.nrows(),
            b0.ncols(),
            data.q(),
            spec.rank
        )));
    }
    let design = Design::new(data, spec.family);
    fit_with_design(&design, spec, lambda, Some(b0))
}

/// Resolves λ from `spec.penalty` (running cross-validation if asked) and fits.
pub fn fit(data: &MatrixDataset, spec: &ModelSpec) -> Result<FitResult> {
    spec.validate(data)?;
    let design = Design::new(data, spec.family);
    fit_with_policy(data, &design, spec)
}

pub(crate) fn fit_with_policy(data: &MatrixDataset, design: &Design, spec: &ModelSpec) -> Result<FitResult> {
    match &spec.penalty {
        LambdaPolicy::Fixed(lambda) => fit_with_design(design, spec, *lambda, None),
        LambdaPolicy::CrossValidated(grid) => {
            let (lambda, table) = select_lambda_cv(data, spec, grid, grid.seed)?;
            let mut fit = fit_with_design(design, spec, lambda, None)?;
            fit.cv_table = Some(table);
            Ok(fit)
        }
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("lambda must be a finite value >= 0, got {lambda}")))
    }
}

pub(crate) fn fit_with_design(
    design: &Design,
    spec: &ModelSpec,
    lambda: f64,
    b0: Option<&DenseMatrix>,
) -> Result<FitResult> {
    let point = fit_point(design, spec, lambda, b0)?;
    let s_r = crate::model::effective_params(design.m, design.p, design.q, spec.rank);
    let (sigma_hat, sigma_sq_hat) =
        inference::covariance_for_design(design, &point.theta, lambda, s_r, spec.pinv_rel_tol)?;
    Ok(FitResult {
        beta_hat: beta_of_theta(&point.theta),
        theta_hat: point.theta,
        sigma_hat,
        sigma_sq_hat,
        objective_trace: point.objective_trace,
        iterations: point.iterations,
        converged: point.converged,
        lambda_used: lambda,
        s_r,
        n: design.n(),
        family: design.family,
        rank: spec.rank,
        cv_table: None,
    })
}
