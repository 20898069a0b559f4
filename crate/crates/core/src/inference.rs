//! Asymptotic covariance of β̂ for the over-parameterized rank-`r` model.
//!
//! The Jacobian Δ(θ) = ∂β/∂θ has rank `s_r`, not `1 + m + (p + q) r`; the
//! sandwich form below routes everything through Δ so that the covariance
//! only sees the identifiable directions, whatever factorization of η̂ the
//! optimizer happened to return.

use nalgebra::DVector;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimator::glm::Design;
use crate::model::{beta_of_theta, CoefVector, FactorParams, Family, MatrixDataset};
use crate::numkit::{self, DenseMatrix};

/// Diagonal entries above `-NEG_DIAG_TOL · max(1, max|diag|)` are treated as zero.
const NEG_DIAG_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Serialize)]
pub struct SandwichCovariance {
    /// Σ̂, `(1 + m + pq)²`.
    #[serde(skip)]
    pub matrix: DenseMatrix,
    /// Trailing `pq × pq` block belonging to vec(η̂).
    #[serde(skip)]
    pub eta_block: DenseMatrix,
    pub lambda_used: f64,
    pub pinv_rel_tol: f64,
    /// Numerical rank of Δ̂ᵀ(V̂ + λI)Δ̂, equal to `s_r` at a regular point.
    pub delta_rank: usize,
}

impl SandwichCovariance {
    fn from_matrix(matrix: DenseMatrix, eta_len: usize, lambda: f64, rel_tol: f64, delta_rank: usize) -> Result<Self> {
        let d = matrix.nrows();
        let scale = matrix.diagonal().amax().max(1.0);
        let mut matrix = matrix;
        for j in 0..d {
            let v = matrix[(j, j)];
            if v < 0.0 {
                if v < -NEG_DIAG_TOL * scale {
                    return Err(Error::Covariance(format!(
                        "diagonal entry {j} is {v:e}; check the pseudoinverse tolerance"
                    )));
                }
                matrix[(j, j)] = 0.0;
            }
        }
        let start = d - eta_len;
        let eta_block = matrix.view((start, start), (eta_len, eta_len)).into_owned();
        Ok(Self { matrix, eta_block, lambda_used: lambda, pinv_rel_tol: rel_tol, delta_rank })
    }

    /// `[Σ̂]_j`.
    pub fn diag(&self, j: usize) -> f64 {
        self.matrix[(j, j)]
    }

    /// Standard error of β̂_j at sample size `n`: `sqrt([Σ̂]_j / n)`.
    pub fn std_error(&self, j: usize, n: usize) -> f64 {
        (self.diag(j) / n as f64).sqrt()
    }
}

/// Δ(θ) = ∂β(θ)/∂θ, laid out as
/// `[[I_{1+m}, 0, 0], [0, B ⊗ I_p, (I_q ⊗ A) K_{q,r}]]`.
pub fn jacobian_delta(theta: &FactorParams) -> DenseMatrix {
    let m = theta.xi.len();
    let (p, r) = theta.a.shape();
    let q = theta.b.nrows();
    let lead = 1 + m;
    let mut delta = DenseMatrix::zeros(lead + p * q, lead + (p + q) * r);
    for i in 0..lead {
        delta[(i, i)] = 1.0;
    }
    let d_a = numkit::kron(&theta.b, &DenseMatrix::identity(p, p));
    let d_b = numkit::kron(&DenseMatrix::identity(q, q), &theta.a) * numkit::commutation_matrix(q, r);
    delta.view_mut((lead, lead), (p * q, p * r)).copy_from(&d_a);
    delta.view_mut((lead, lead + p * r), (p * q, q * r)).copy_from(&d_b);
    delta
}

/// `(1 / (n − s_r)) Σ (Y_i − β̂ᵀX_i)²`.
pub fn sigma_sq_hat(data: &MatrixDataset, beta_hat: &CoefVector, s_r: usize) -> Result<f64> {
    let x = data.design_matrix();
    residual_variance(&x, data.y(), &beta_hat.to_vector(), s_r)
}

fn residual_variance(x: &DenseMatrix, y: &DVector<f64>, beta: &DVector<f64>, s_r: usize) -> Result<f64> {
    let n = y.len();
    if n <= s_r {
        return Err(Error::InsufficientSample { n, required: s_r + 1 });
    }
    let resid = y - x * beta;
    Ok(resid.norm_squared() / (n - s_r) as f64)
}

/// ν(u) = e^u / (1 + e^u)², in (0, 1/4].
pub fn logistic_weight(u: f64) -> f64 {
    let e = (-u.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

/// V̂: `σ̂⁻² (1/n) Σ X_i X_iᵀ` (normal) or `(1/n) Σ ν_i(θ̂) X_i X_iᵀ` (logistic).
/// `sigma_sq` is ignored for the logistic family.
pub fn v_hat(data: &MatrixDataset, theta_hat: &FactorParams, family: Family, sigma_sq: Option<f64>) -> Result<DenseMatrix> {
    let x = data.design_matrix();
    v_hat_from_design(&x, None, theta_hat, family, sigma_sq)
}

fn v_hat_from_design(
    x: &DenseMatrix,
    gram: Option<&DenseMatrix>,
    theta: &FactorParams,
    family: Family,
    sigma_sq: Option<f64>,
) -> Result<DenseMatrix> {
    let n = x.nrows() as f64;
    match family {
        Family::Normal => {
            let s2 = sigma_sq.ok_or_else(|| Error::InvalidInput("normal family needs sigma^2".into()))?;
            if !(s2 > 0.0) {
                return Err(Error::Covariance(format!("residual variance {s2:e} is not positive")));
            }
            let g = match gram {
                Some(g) => g.clone(),
                None => x.tr_mul(x) / n,
            };
            Ok(g / s2)
        }
        Family::Logistic => {
            let lin = x * beta_of_theta(theta).to_vector();
            let mut weighted = x.clone();
            for (i, u) in lin.iter().enumerate() {
                weighted.row_mut(i).scale_mut(logistic_weight(*u));
            }
            Ok(numkit::symmetrize(&(x.tr_mul(&weighted) / n)))
        }
    }
}

/// Σ̂ = Δ̂ {Δ̂ᵀ(V̂ + λI)Δ̂}⁺ Δ̂ᵀ V̂ Δ̂ {Δ̂ᵀ(V̂ + λI)Δ̂}⁺ Δ̂ᵀ, symmetrized.
pub fn sandwich_sigma(delta_hat: &DenseMatrix, v_hat: &DenseMatrix, lambda: f64, pinv_rel_tol: f64, eta_len: usize) -> Result<SandwichCovariance> {
    let d = v_hat.nrows();
    if delta_hat.nrows() != d || v_hat.ncols() != d || eta_len > d {
        return Err(Error::Dimension(format!(
            "sandwich: Delta is {}x{}, V is {}x{}, eta block {eta_len}",
            delta_hat.nrows(),
            delta_hat.ncols(),
            v_hat.nrows(),
            v_hat.ncols()
        )));
    }
    let mut stabilized = v_hat.clone();
    for i in 0..d {
        stabilized[(i, i)] += lambda;
    }
    let middle = delta_hat.tr_mul(&(&stabilized * delta_hat));
    let middle = numkit::symmetrize(&middle);
    let middle_pinv = numkit::pinv_symmetric(&middle, pinv_rel_tol);
    let rank = symmetric_rank(&middle, pinv_rel_tol);
    let proj = delta_hat * &middle_pinv * delta_hat.transpose();
    let sigma = &proj * v_hat * &proj;
    SandwichCovariance::from_matrix(numkit::symmetrize(&sigma), eta_len, lambda, pinv_rel_tol, rank)
}

fn symmetric_rank(s: &DenseMatrix, rel_tol: f64) -> usize {
    let eig = s.clone().symmetric_eigenvalues();
    let top = eig.iter().map(|e| e.abs()).fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    eig.iter().filter(|e| e.abs() > rel_tol * top).count()
}

/// Σ̂ (and σ̂² for the normal family) for a fitted θ̂.
pub fn covariance(
    data: &MatrixDataset,
    theta_hat: &FactorParams,
    family: Family,
    lambda: f64,
    pinv_rel_tol: f64,
) -> Result<(SandwichCovariance, Option<f64>)> {
    let design = Design::new(data, family);
    let s_r = crate::model::effective_params(data.m(), data.p(), data.q(), theta_hat.rank());
    covariance_for_design(&design, theta_hat, lambda, s_r, pinv_rel_tol)
}

pub(crate) fn covariance_for_design(
    design: &Design,
    theta: &FactorParams,
    lambda: f64,
    s_r: usize,
    pinv_rel_tol: f64,
) -> Result<(SandwichCovariance, Option<f64>)> {
    let sigma_sq = match design.family {
        Family::Normal => Some(residual_variance(&design.x, &design.y, &beta_of_theta(theta).to_vector(), s_r)?),
        Family::Logistic => None,
    };
    let v = v_hat_from_design(&design.x, design.gram.as_deref(), theta, design.family, sigma_sq)?;
    let delta = jacobian_delta(theta);
    let cov = sandwich_sigma(&delta, &v, lambda, pinv_rel_tol, design.p * design.q)?;
    if cov.delta_rank != s_r {
        log::warn!("rank of the Jacobian is {} but s_r = {s_r}; the regularity condition may fail", cov.delta_rank);
    }
    Ok((cov, sigma_sq))
}

/// `β̂_j ± z_{1−α/2} / √n · [Σ̂]_j^{1/2}`.
pub fn confidence_interval(beta_j: f64, sigma_jj: f64, n: usize, alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if sigma_jj < -NEG_DIAG_TOL {
        return Err(Error::Covariance(format!("negative variance {sigma_jj:e}")));
    }
    let z = Normal::standard().inverse_cdf(1.0 - alpha / 2.0);
    let half = z / (n as f64).sqrt() * sigma_jj.max(0.0).sqrt();
    Ok((beta_j - half, beta_j + half))
}

/// Confidence interval for coordinate `j` of a fitted coefficient vector.
pub fn coefficient_interval(beta_hat: &CoefVector, sigma: &SandwichCovariance, j: usize, n: usize, alpha: f64) -> Result<(f64, f64)> {
    let b = beta_hat.to_vector();
    if j >= b.len() {
        return Err(Error::Dimension(format!("coordinate {j} out of range 0..{}", b.len())));
    }
    confidence_interval(b[j], sigma.diag(j), n, alpha)
}
