//! Data model for matrix-covariate GLMs: datasets, factor parameters, the
//! identifiable coefficient map and the (penalized) log-likelihood.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::cv::CvGrid;
use crate::numkit::{self, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Gaussian response, identity link.
    Normal,
    /// Binary response, logit link.
    Logistic,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Normal => "normal",
            Family::Logistic => "logistic",
        }
    }
}

/// `n` observations of (response, confounders, matrix covariate).
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixDataset {
    y: DVector<f64>,
    /// `n × m`; zero columns when there are no confounders.
    z: DenseMatrix,
    mats: Vec<DenseMatrix>,
    p: usize,
    q: usize,
}

impl MatrixDataset {
    pub fn new(y: Vec<f64>, z: Option<DenseMatrix>, mats: Vec<DenseMatrix>) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::InvalidInput("dataset has no observations".into()));
        }
        if mats.len() != n {
            return Err(Error::Dimension(format!(
                "{} responses but {} matrix covariates",
                n,
                mats.len()
            )));
        }
        let (p, q) = mats[0].shape();
        if p == 0 || q == 0 {
            return Err(Error::Dimension("matrix covariates must be at least 1x1".into()));
        }
        for (i, m) in mats.iter().enumerate() {
            if m.shape() != (p, q) {
                return Err(Error::Dimension(format!(
                    "matrix covariate {} is {}x{}, expected {p}x{q}",
                    i + 1,
                    m.nrows(),
                    m.ncols()
                )));
            }
            if !numkit::all_finite(m) {
                return Err(Error::InvalidInput(format!("matrix covariate {} has a non-finite entry", i + 1)));
            }
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("response {} is not finite", i + 1)));
        }
        let z = match z {
            Some(z) => {
                if z.nrows() != n {
                    return Err(Error::Dimension(format!(
                        "confounder matrix has {} rows, expected {n}",
                        z.nrows()
                    )));
                }
                if !numkit::all_finite(&z) {
                    return Err(Error::InvalidInput("confounder matrix has a non-finite entry".into()));
                }
                z
            }
            None => DenseMatrix::zeros(n, 0),
        };
        Ok(Self { y: DVector::from_vec(y), z, mats, p, q })
    }

    /// Checks the response domain for `family`.
    pub fn validate_for(&self, family: Family) -> Result<()> {
        if family == Family::Logistic {
            if let Some(i) = self.y.iter().position(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidInput(format!(
                    "logistic response {} is {}, expected 0 or 1",
                    i + 1,
                    self.y[i]
                )));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
    pub fn m(&self) -> usize {
        self.z.ncols()
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn q(&self) -> usize {
        self.q
    }
    /// Length of the full coefficient vector, `1 + m + pq`.
    pub fn dim(&self) -> usize {
        1 + self.m() + self.p * self.q
    }
    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }
    pub fn z(&self) -> &DenseMatrix {
        &self.z
    }
    pub fn mats(&self) -> &[DenseMatrix] {
        &self.mats
    }
    pub fn has_confounders(&self) -> bool {
        self.m() > 0
    }

    pub fn z_row(&self, i: usize) -> Vec<f64> {
        self.z.row(i).iter().cloned().collect()
    }

    /// `n × (1 + m + pq)` design matrix whose rows are the [`design_row`]s.
    pub fn design_matrix(&self) -> DenseMatrix {
        let n = self.n();
        let m = self.m();
        let mut x = DenseMatrix::zeros(n, self.dim());
        for i in 0..n {
            x[(i, 0)] = 1.0;
            for c in 0..m {
                x[(i, 1 + c)] = self.z[(i, c)];
            }
            for (k, v) in self.mats[i].iter().enumerate() {
                x[(i, 1 + m + k)] = *v;
            }
        }
        x
    }

    /// Same covariates, new responses.
    pub fn with_response(&self, y: DVector<f64>) -> Self {
        assert_eq!(y.len(), self.n());
        Self { y, ..self.clone() }
    }

    /// Pairs response `i` with matrix covariate `perm[i]`.
    pub fn with_permuted_mats(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.n());
        let mats = perm.iter().map(|&j| self.mats[j].clone()).collect();
        Self { mats, ..self.clone() }
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let y = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.y[i]));
        let z = DenseMatrix::from_fn(idx.len(), self.m(), |r, c| self.z[(idx[r], c)]);
        let mats = idx.iter().map(|&i| self.mats[i].clone()).collect();
        Self { y, z, mats, p: self.p, q: self.q }
    }
}

/// Settings for one rank-`r` fit.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub family: Family,
    pub rank: usize,
    pub penalty: LambdaPolicy,
    pub max_outer_iters: usize,
    pub beta_rel_tol: f64,
    /// Ridge strength for the initializer; `None` means `s_r / n`.
    pub ridge_eps: Option<f64>,
    pub pinv_rel_tol: f64,
}

impl ModelSpec {
    pub fn new(family: Family, rank: usize, penalty: LambdaPolicy) -> Self {
        Self {
            family,
            rank,
            penalty,
            max_outer_iters: 200,
            beta_rel_tol: 1e-6,
            ridge_eps: None,
            pinv_rel_tol: numkit::DEFAULT_PINV_REL_TOL,
        }
    }

    pub fn validate(&self, data: &MatrixDataset) -> Result<()> {
        let max_rank = data.p().min(data.q());
        if self.rank == 0 || self.rank > max_rank {
            return Err(Error::InvalidInput(format!(
                "rank {} must lie in 1..={max_rank} for {}x{} covariates",
                self.rank,
                data.p(),
                data.q()
            )));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::InvalidInput("max_outer_iters must be positive".into()));
        }
        if !(self.beta_rel_tol > 0.0) {
            return Err(Error::InvalidInput("beta_rel_tol must be positive".into()));
        }
        if let Some(eps) = self.ridge_eps {
            if !(eps > 0.0) {
                return Err(Error::InvalidInput("ridge_eps must be positive".into()));
            }
        }
        match &self.penalty {
            LambdaPolicy::Fixed(l) if !(*l >= 0.0 && l.is_finite()) => {
                return Err(Error::InvalidInput(format!("lambda must be a finite value >= 0, got {l}")));
            }
            LambdaPolicy::CrossValidated(grid) => grid.validate(data.n())?,
            _ => {}
        }
        data.validate_for(self.family)
    }

    pub fn effective_params(&self, data: &MatrixDataset) -> usize {
        effective_params(data.m(), data.p(), data.q(), self.rank)
    }
}

/// How the penalty λ is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum LambdaPolicy {
    Fixed(f64),
    CrossValidated(CvGrid),
}

/// θ = (γ, ξ, A, B) with η = A Bᵀ.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorParams {
    pub gamma: f64,
    pub xi: DVector<f64>,
    pub a: DenseMatrix,
    pub b: DenseMatrix,
}

impl FactorParams {
    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    /// Flattened (γ, ξ, vec A, vec B).
    pub fn to_vector(&self) -> DVector<f64> {
        let mut out = Vec::with_capacity(1 + self.xi.len() + self.a.len() + self.b.len());
        out.push(self.gamma);
        out.extend(self.xi.iter());
        out.extend(self.a.iter());
        out.extend(self.b.iter());
        DVector::from_vec(out)
    }

    pub fn from_vector(v: &[f64], m: usize, p: usize, q: usize, r: usize) -> Self {
        assert_eq!(v.len(), 1 + m + (p + q) * r);
        let a_start = 1 + m;
        let b_start = a_start + p * r;
        Self {
            gamma: v[0],
            xi: DVector::from_column_slice(&v[1..a_start]),
            a: numkit::unvec(&v[a_start..b_start], p, r),
            b: numkit::unvec(&v[b_start..], q, r),
        }
    }

    /// Rescales A and B in opposite directions so their Frobenius norms agree.
    /// Neither A Bᵀ nor ‖A‖²‖B‖² changes.
    pub fn rebalance(&mut self) {
        let na = self.a.norm();
        let nb = self.b.norm();
        if na > 0.0 && nb > 0.0 && na.is_finite() && nb.is_finite() {
            let c = (nb / na).sqrt();
            self.a *= c;
            self.b /= c;
        }
    }
}

/// β = (γ, ξ, vec η).
#[derive(Debug, Clone, PartialEq)]
pub struct CoefVector {
    pub gamma: f64,
    pub xi: DVector<f64>,
    pub eta_vec: DVector<f64>,
}

impl CoefVector {
    pub fn zeros(m: usize, p: usize, q: usize) -> Self {
        Self { gamma: 0.0, xi: DVector::zeros(m), eta_vec: DVector::zeros(p * q) }
    }

    pub fn from_vector(v: &[f64], m: usize) -> Self {
        Self {
            gamma: v[0],
            xi: DVector::from_column_slice(&v[1..1 + m]),
            eta_vec: DVector::from_column_slice(&v[1 + m..]),
        }
    }

    pub fn len(&self) -> usize {
        1 + self.xi.len() + self.eta_vec.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.len());
        out.push(self.gamma);
        out.extend(self.xi.iter());
        out.extend(self.eta_vec.iter());
        DVector::from_vec(out)
    }

    pub fn eta(&self, p: usize, q: usize) -> DenseMatrix {
        numkit::unvec(self.eta_vec.as_slice(), p, q)
    }
}

/// X_i = (1, z_i, vec M_i).
pub fn design_row(z_i: Option<&[f64]>, m_i: &DenseMatrix) -> DVector<f64> {
    let z_i = z_i.unwrap_or(&[]);
    let mut out = Vec::with_capacity(1 + z_i.len() + m_i.len());
    out.push(1.0);
    out.extend_from_slice(z_i);
    out.extend(m_i.iter());
    DVector::from_vec(out)
}

/// β(θ) = (γ, ξ, vec(A Bᵀ)).
pub fn beta_of_theta(theta: &FactorParams) -> CoefVector {
    let eta = &theta.a * theta.b.transpose();
    CoefVector { gamma: theta.gamma, xi: theta.xi.clone(), eta_vec: numkit::vec(&eta) }
}

/// Number of identifiable parameters of the rank-`r` model, `1 + m + (p + q − r) r`.
pub fn effective_params(m: usize, p: usize, q: usize, r: usize) -> usize {
    assert!(r <= p.min(q), "rank {r} exceeds min({p}, {q})");
    1 + m + (p + q - r) * r
}

/// `ln(1 + e^u)` without overflow.
pub fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

/// Logistic function `1 / (1 + e^{-u})`, evaluated without overflow.
pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Per-observation log-likelihood contribution (scaled by 1/n in the total).
pub(crate) fn loglik_term(family: Family, y: f64, linear: f64) -> f64 {
    match family {
        Family::Normal => -0.5 * (y - linear) * (y - linear),
        Family::Logistic => y * linear - softplus(linear),
    }
}

/// Mean function of the family.
pub(crate) fn mean_of(family: Family, linear: f64) -> f64 {
    match family {
        Family::Normal => linear,
        Family::Logistic => sigmoid(linear),
    }
}

fn linear_predictors(beta: &CoefVector, data: &MatrixDataset) -> DVector<f64> {
    let b = beta.to_vector();
    data.design_matrix() * b
}

/// Normal: −(1/2n) Σ (Y_i − βᵀX_i)². Logistic: (1/n) Σ [Y_i βᵀX_i − ln(1 + e^{βᵀX_i})].
pub fn log_likelihood(beta: &CoefVector, data: &MatrixDataset, family: Family) -> f64 {
    assert_eq!(beta.len(), data.dim(), "coefficient length does not match data");
    let lin = linear_predictors(beta, data);
    let n = data.n() as f64;
    lin.iter()
        .zip(data.y().iter())
        .map(|(&u, &y)| loglik_term(family, y, u))
        .sum::<f64>()
        / n
}

/// ℓ(β(θ)) − (λ/2) ‖A‖²_F ‖B‖²_F.
pub fn penalized_objective(theta: &FactorParams, data: &MatrixDataset, family: Family, lambda: f64) -> f64 {
    log_likelihood(&beta_of_theta(theta), data, family) - penalty_term(theta, lambda)
}

pub fn penalty_term(theta: &FactorParams, lambda: f64) -> f64 {
    0.5 * lambda * numkit::frobenius_norm_sq(&theta.a) * numkit::frobenius_norm_sq(&theta.b)
}

/// Gradient of ℓ with respect to β.
pub fn loglik_gradient_beta(beta: &CoefVector, data: &MatrixDataset, family: Family) -> DVector<f64> {
    let x = data.design_matrix();
    let lin = &x * beta.to_vector();
    let n = data.n() as f64;
    let resid = DVector::from_iterator(
        data.n(),
        lin.iter().zip(data.y().iter()).map(|(&u, &y)| y - mean_of(family, u)),
    );
    x.transpose() * resid / n
}

/// Analytic gradient of [`penalized_objective`] with respect to
/// (γ, ξ, vec A, vec B), in the layout of [`FactorParams::to_vector`].
pub fn penalized_gradient(theta: &FactorParams, data: &MatrixDataset, family: Family, lambda: f64) -> DVector<f64> {
    let m = data.m();
    let (p, q) = (data.p(), data.q());
    let g_beta = loglik_gradient_beta(&beta_of_theta(theta), data, family);
    let g_eta = numkit::unvec(&g_beta.as_slice()[1 + m..], p, q);
    let a_sq = numkit::frobenius_norm_sq(&theta.a);
    let b_sq = numkit::frobenius_norm_sq(&theta.b);
    let g_a = &g_eta * &theta.b - &theta.a * (lambda * b_sq);
    let g_b = g_eta.transpose() * &theta.a - &theta.b * (lambda * a_sq);
    let mut out = Vec::with_capacity(1 + m + (p + q) * theta.rank());
    out.extend_from_slice(&g_beta.as_slice()[..1 + m]);
    out.extend(g_a.iter());
    out.extend(g_b.iter());
    DVector::from_vec(out)
}
