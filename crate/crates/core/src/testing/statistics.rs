//! The five statistics for `H₀: η = 0` and the restricted (null) fit they share.

use nalgebra::{Cholesky, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::glm::{newton_logistic, Design};
use crate::estimator::FitResult;
use crate::model::{mean_of, Family, MatrixDataset};
use crate::numkit::{self, DenseMatrix};

/// Relative floor under which a `[Σ̂]_j` is treated as structurally zero in
/// the max statistic.
pub const DIAG_FLOOR_REL: f64 = 1e-12;


#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StatisticKind {
    Wald,
    Max,
    Combined,
    Gesat,
    CombinedGesat,
}

impl StatisticKind {
    pub const ALL: [StatisticKind; 5] = [Self::Wald, Self::Max, Self::Combined, Self::Gesat, Self::CombinedGesat];

    pub fn name(self) -> &'static str {
        match self {
            Self::Wald => "wald",
            Self::Max => "max",
            Self::Combined => "combined",
            Self::Gesat => "gesat",
            Self::CombinedGesat => "combined_gesat",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s.to_ascii_lowercase().replace('-', "_"))
    }

    /// Whether the statistic needs the rank-`r` fit (everything but Gesat).
    pub fn needs_fit(self) -> bool {
        self != Self::Gesat
    }

    /// Whether the statistic needs the null fit.
    pub fn needs_null(self) -> bool {
        matches!(self, Self::Gesat | Self::CombinedGesat)
    }
}

/// Residual used inside the Gesat score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum GesatResidual {
    /// `Y_i − γ̃ − ξ̃ᵀZ_i` for both families, exactly as the statistic is written.
    #[default]
    Literal,
    /// `Y_i − μ(γ̃ + ξ̃ᵀZ_i)`: the mean-scale residual. Differs from
    /// `Literal` only for the logistic family.
    MeanScale,
}

/// Restricted MLE of (γ, ξ) under `η = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct NullFit {
    pub family: Family,
    pub gamma_tilde: f64,
    pub xi_tilde: DVector<f64>,
    /// `(1/(n − (m+1))) Σ (Y_i − γ̃ − ξ̃ᵀZ_i)²`, normal family only.
    pub sigma_sq_tilde: Option<f64>,
}

impl NullFit {
    fn coefficients(&self) -> DVector<f64> {
        let mut v = DVector::zeros(1 + self.xi_tilde.len());
        v[0] = self.gamma_tilde;
        v.rows_mut(1, self.xi_tilde.len()).copy_from(&self.xi_tilde);
        v
    }

    /// `γ̃ + ξ̃ᵀZ_i` for every observation, from the lead columns of `x`.
    pub(crate) fn linear_predictor(&self, x: &DenseMatrix) -> DVector<f64> {
        let lead = 1 + self.xi_tilde.len();
        x.columns(0, lead) * self.coefficients()
    }
}

pub fn null_fit(data: &MatrixDataset, family: Family) -> Result<NullFit> {
    data.validate_for(family)?;
    null_fit_design(&Design::new(data, family))
}

pub(crate) fn null_fit_design(design: &Design) -> Result<NullFit> {
    let n = design.n();
    let lead = 1 + design.m;
    if n <= lead {
        return Err(Error::InsufficientSample { n, required: lead + 1 });
    }
    let x0 = design.x.columns(0, lead).into_owned();
    match design.family {
        Family::Normal => {
            let gram = design.gram.as_ref().expect("normal design carries its Gram matrix");
            let xty = design.xty.as_ref().expect("normal design carries Xᵀy");
            let lhs = gram.view((0, 0), (lead, lead)).into_owned();
            let rhs = xty.rows(0, lead).into_owned();
            let coef = Cholesky::new(lhs)
                .ok_or_else(|| Error::IllPosed("the null design (1, Z) is rank deficient".into()))?
                .solve(&rhs);
            let resid = &design.y - &x0 * &coef;
            let sigma_sq = resid.norm_squared() / (n - lead) as f64;
            Ok(NullFit {
                family: Family::Normal,
                gamma_tilde: coef[0],
                xi_tilde: coef.rows(1, design.m).into_owned(),
                sigma_sq_tilde: Some(sigma_sq),
            })
        }
        Family::Logistic => {
            let coef = newton_logistic(&x0, &design.y, lead, 0.0, DVector::zeros(lead))?;
            let lin = &x0 * &coef;
            if crate::estimator::looks_separated(&lin, &design.y) {
                return Err(Error::NonConvergence {
                    iterations: crate::estimator::glm::NEWTON_MAX_ITERS,
                    context: "the null logistic model is (quasi-)separated; its MLE does not exist".into(),
                });
            }
            Ok(NullFit {
                family: Family::Logistic,
                gamma_tilde: coef[0],
                xi_tilde: coef.rows(1, design.m).into_owned(),
                sigma_sq_tilde: None,
            })
        }
    }
}

/// `vec(η̂)ᵀ {[Σ̂]_η / n}⁺ vec(η̂)`.
pub fn t_wald(fit: &FitResult, n: usize) -> f64 {
    let eta = &fit.beta_hat.eta_vec;
    if eta.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    let scaled = &fit.sigma_hat.eta_block / n as f64;
    let inv = numkit::pinv_symmetric(&scaled, fit.sigma_hat.pinv_rel_tol);
    eta.dot(&(inv * eta)).max(0.0)
}

/// `max_j β̂_j² / ([Σ̂]_j / n)` over the η coordinates whose variance clears
/// the floor `DIAG_FLOOR_REL · max_j [Σ̂]_j`.
pub fn t_max(fit: &FitResult, n: usize, m: usize, p: usize, q: usize) -> Result<f64> {
    let sigma = &fit.sigma_hat.matrix;
    let start = 1 + m;
    if sigma.nrows() != start + p * q {
        return Err(Error::Dimension(format!("covariance is {}x{}, expected {}", sigma.nrows(), sigma.ncols(), start + p * q)));
    }
    let beta = fit.beta_hat.to_vector();
    let diag_max = (start..start + p * q).map(|j| sigma[(j, j)]).fold(0.0, f64::max);
    let floor = DIAG_FLOOR_REL * diag_max;
    let mut best: Option<f64> = None;
    for j in start..start + p * q {
        let v = sigma[(j, j)];
        if diag_max > 0.0 && v > floor {
            let ratio = beta[j] * beta[j] / (v / n as f64);
            best = Some(best.map_or(ratio, |b: f64| b.max(ratio)));
        }
    }
    best.ok_or_else(|| Error::Covariance("every eta coordinate has a degenerate variance".into()))
}

/// `T_wald · T_max`.
pub fn t_combined(fit: &FitResult, n: usize, m: usize, p: usize, q: usize) -> Result<f64> {
    Ok(t_wald(fit, n) * t_max(fit, n, m, p, q)?)
}

/// `‖Σ_i (Y_i − γ̃ − ξ̃ᵀZ_i) vec(M_i)‖²`.
pub fn t_gesat(data: &MatrixDataset, nf: &NullFit) -> f64 {
    t_gesat_with(data, nf, GesatResidual::Literal)
}

pub fn t_gesat_with(data: &MatrixDataset, nf: &NullFit, residual: GesatResidual) -> f64 {
    let x = data.design_matrix();
    gesat_from_design(&x, data.y(), data.m(), nf, residual)
}

pub(crate) fn gesat_from_design(x: &DenseMatrix, y: &DVector<f64>, m: usize, nf: &NullFit, residual: GesatResidual) -> f64 {
    let lead = 1 + m;
    let lin = nf.linear_predictor(x);
    let resid = DVector::from_fn(y.len(), |i, _| match residual {
        GesatResidual::Literal => y[i] - lin[i],
        GesatResidual::MeanScale => y[i] - mean_of(nf.family, lin[i]),
    });
    let score = x.columns(lead, x.ncols() - lead).tr_mul(&resid);
    score.norm_squared()
}

/// `T · T_gesat`.
pub fn t_star(fit: &FitResult, data: &MatrixDataset, nf: &NullFit, n: usize, m: usize, p: usize, q: usize) -> Result<f64> {
    Ok(t_combined(fit, n, m, p, q)? * t_gesat(data, nf))
}

/// `β̂_j² / ([Σ̂]_j / n)` for each η coordinate, in vec(η) order; coordinates
/// under the variance floor get 0.
pub fn coordinate_statistics(fit: &FitResult, m: usize, p: usize, q: usize) -> Vec<f64> {
    let sigma = &fit.sigma_hat.matrix;
    let start = 1 + m;
    let beta = fit.beta_hat.to_vector();
    let diag_max = (start..start + p * q).map(|j| sigma[(j, j)]).fold(0.0, f64::max);
    let floor = DIAG_FLOOR_REL * diag_max;
    (start..start + p * q)
        .map(|j| {
            let v = sigma[(j, j)];
            if diag_max > 0.0 && v > floor {
                beta[j] * beta[j] / (v / fit.n as f64)
            } else {
                0.0
            }
        })
        .collect()
}

/// Every statistic that can be evaluated from the supplied pieces.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct StatisticValues {
    pub wald: Option<f64>,
    pub max: Option<f64>,
    pub gesat: Option<f64>,
}

impl StatisticValues {
    pub fn compute(fit: Option<&FitResult>, gesat: Option<f64>, m: usize, p: usize, q: usize) -> Result<Self> {
        let (wald, max) = match fit {
            Some(f) => (Some(t_wald(f, f.n)), Some(t_max(f, f.n, m, p, q)?)),
            None => (None, None),
        };
        Ok(Self { wald, max, gesat })
    }

    pub fn get(&self, kind: StatisticKind) -> f64 {
        let need = |v: Option<f64>| v.expect("statistic component was not computed");
        match kind {
            StatisticKind::Wald => need(self.wald),
            StatisticKind::Max => need(self.max),
            StatisticKind::Combined => need(self.wald) * need(self.max),
            StatisticKind::Gesat => need(self.gesat),
            StatisticKind::CombinedGesat => need(self.wald) * need(self.max) * need(self.gesat),
        }
    }
}
