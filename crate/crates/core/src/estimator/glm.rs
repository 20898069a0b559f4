//! Penalized GLM machinery shared by the ridge initializer, the alternating
//! subproblems and the null-model fit.
//!
//! Every subproblem is a GLM in a reduced coefficient vector
//! `(γ, ξ, tail)` whose covariates are fixed linear combinations of the full
//! design columns. A [`Reduction`] records those combinations; only the tail
//! block is penalized.

use std::sync::Arc;

use nalgebra::{Cholesky, DVector};

use crate::error::{Error, Result};
use crate::model::{loglik_term, mean_of, Family, MatrixDataset};
use crate::numkit::DenseMatrix;

/// Gradient-norm target for Newton solves.
pub(crate) const NEWTON_GRAD_TOL: f64 = 1e-11;
pub(crate) const NEWTON_MAX_ITERS: usize = 100;
const MAX_HALVINGS: usize = 60;

/// Full design plus cached sufficient statistics for the normal family.
#[derive(Debug, Clone)]
pub(crate) struct Design {
    pub family: Family,
    pub m: usize,
    pub p: usize,
    pub q: usize,
    pub x: Arc<DenseMatrix>,
    pub y: DVector<f64>,
    /// `XᵀX / n`, only for the normal family.
    pub gram: Option<Arc<DenseMatrix>>,
    /// `Xᵀy / n`, only for the normal family.
    pub xty: Option<DVector<f64>>,
}

impl Design {
    pub fn new(data: &MatrixDataset, family: Family) -> Self {
        let x = Arc::new(data.design_matrix());
        let gram = match family {
            Family::Normal => Some(Arc::new(x.tr_mul(&x) / data.n() as f64)),
            Family::Logistic => None,
        };
        Self::assemble(family, data.m(), data.p(), data.q(), x, data.y().clone(), gram)
    }

    fn assemble(
        family: Family,
        m: usize,
        p: usize,
        q: usize,
        x: Arc<DenseMatrix>,
        y: DVector<f64>,
        gram: Option<Arc<DenseMatrix>>,
    ) -> Self {
        let xty = gram.as_ref().map(|_| x.tr_mul(&y) / y.len() as f64);
        Self { family, m, p, q, x, y, gram, xty }
    }

    /// Same covariates with a new response vector; the Gram matrix is shared.
    pub fn with_response(&self, y: DVector<f64>) -> Self {
        Self::assemble(self.family, self.m, self.p, self.q, self.x.clone(), y, self.gram.clone())
    }

    /// Pairs response `i` with the matrix covariate of row `perm[i]`.
    /// Without confounders this only reorders rows, so the Gram matrix is reused.
    pub fn with_permuted_mats(&self, perm: &[usize]) -> Self {
        let lead = 1 + self.m;
        let x = &self.x;
        let permuted = DenseMatrix::from_fn(x.nrows(), x.ncols(), |i, c| {
            if c < lead {
                x[(i, c)]
            } else {
                x[(perm[i], c)]
            }
        });
        let gram = match (&self.gram, self.m) {
            (Some(g), 0) => Some(g.clone()),
            (Some(_), _) => Some(Arc::new(permuted.tr_mul(&permuted) / permuted.nrows() as f64)),
            (None, _) => None,
        };
        Self::assemble(self.family, self.m, self.p, self.q, Arc::new(permuted), self.y.clone(), gram)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Mean log-likelihood at full coefficient vector `beta`.
    pub fn log_likelihood(&self, beta: &DVector<f64>) -> f64 {
        let lin = &*self.x * beta;
        lin.iter()
            .zip(self.y.iter())
            .map(|(&u, &y)| loglik_term(self.family, y, u))
            .sum::<f64>()
            / self.n() as f64
    }
}

/// Maps a reduced coefficient vector `(lead, tail)` onto full design columns.
///
/// The first `lead` reduced coefficients are the first `lead` full columns;
/// reduced tail column `c` is `Σ w · x[:, i]` over the pairs in `tail[c]`.
#[derive(Debug, Clone)]
pub(crate) struct Reduction {
    pub lead: usize,
    pub tail: Vec<Vec<(usize, f64)>>,
}

impl Reduction {
    /// Covariates `vec(M_i B)`; tail coefficient order is `vec(A)`.
    pub fn given_b(m: usize, p: usize, q: usize, b: &DenseMatrix) -> Self {
        let lead = 1 + m;
        let r = b.ncols();
        let mut tail = Vec::with_capacity(p * r);
        for l in 0..r {
            for j in 0..p {
                tail.push((0..q).map(|k| (lead + k * p + j, b[(k, l)])).collect());
            }
        }
        Self { lead, tail }
    }

    /// Covariates `vec(M_iᵀ A)`; tail coefficient order is `vec(B)`.
    pub fn given_a(m: usize, p: usize, q: usize, a: &DenseMatrix) -> Self {
        let lead = 1 + m;
        let r = a.ncols();
        let mut tail = Vec::with_capacity(q * r);
        for l in 0..r {
            for k in 0..q {
                tail.push((0..p).map(|j| (lead + k * p + j, a[(j, l)])).collect());
            }
        }
        Self { lead, tail }
    }

    /// The unrestricted model: every η coordinate is its own tail column.
    pub fn full(m: usize, pq: usize) -> Self {
        let lead = 1 + m;
        Self { lead, tail: (0..pq).map(|k| vec![(lead + k, 1.0)]).collect() }
    }

    pub fn dim(&self) -> usize {
        self.lead + self.tail.len()
    }

    /// `T` applied on the right of a matrix with full-design columns.
    fn right_apply(&self, full: &DenseMatrix) -> DenseMatrix {
        let rows = full.nrows();
        let mut out = DenseMatrix::zeros(rows, self.dim());
        for c in 0..self.lead {
            out.set_column(c, &full.column(c));
        }
        for (c, entries) in self.tail.iter().enumerate() {
            let mut col = out.column_mut(self.lead + c);
            for &(i, w) in entries {
                if w != 0.0 {
                    col.axpy(w, &full.column(i), 1.0);
                }
            }
        }
        out
    }

    /// Reduced design `X T`.
    pub fn reduce_design(&self, x: &DenseMatrix) -> DenseMatrix {
        self.right_apply(x)
    }

    /// `Tᵀ G T` for a symmetric full-dimensional `G`.
    pub fn reduce_gram(&self, g: &DenseMatrix) -> DenseMatrix {
        let gt = self.right_apply(g); // d × d_sub
        let d_sub = self.dim();
        let mut out = DenseMatrix::zeros(d_sub, d_sub);
        for c in 0..self.lead {
            out.set_row(c, &gt.row(c));
        }
        for (c, entries) in self.tail.iter().enumerate() {
            let row = self.lead + c;
            for &(i, w) in entries {
                if w != 0.0 {
                    for k in 0..d_sub {
                        out[(row, k)] += w * gt[(i, k)];
                    }
                }
            }
        }
        out
    }

    /// `Tᵀ v`.
    pub fn reduce_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for c in 0..self.lead {
            out[c] = v[c];
        }
        for (c, entries) in self.tail.iter().enumerate() {
            out[self.lead + c] = entries.iter().map(|&(i, w)| w * v[i]).sum();
        }
        out
    }

    /// Full coefficient vector `T θ_sub`.
    #[cfg(test)]
    pub fn expand(&self, sub: &DVector<f64>, full_dim: usize) -> DVector<f64> {
        let mut out = DVector::zeros(full_dim);
        for c in 0..self.lead {
            out[c] = sub[c];
        }
        for (c, entries) in self.tail.iter().enumerate() {
            for &(i, w) in entries {
                out[i] += w * sub[self.lead + c];
            }
        }
        out
    }
}

/// Maximizes `ℓ(T θ) − (κ/2)‖θ_tail‖²` over the reduced coefficients.
///
/// Reduced columns that vanish identically (e.g. a zero column of the fixed
/// factor) carry no information and are pinned at zero.
pub(crate) fn solve_penalized(
    design: &Design,
    red: &Reduction,
    kappa: f64,
    warm: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    match design.family {
        Family::Normal => solve_normal(design, red, kappa),
        Family::Logistic => {
            let xs = red.reduce_design(&design.x);
            let start = warm.cloned().unwrap_or_else(|| DVector::zeros(red.dim()));
            newton_logistic(&xs, &design.y, red.lead, kappa, start)
        }
    }
}

fn solve_normal(design: &Design, red: &Reduction, kappa: f64) -> Result<DVector<f64>> {
    let gram = design.gram.as_ref().expect("normal design carries its Gram matrix");
    let xty = design.xty.as_ref().expect("normal design carries Xᵀy");
    let mut lhs = red.reduce_gram(gram);
    let rhs = red.reduce_vec(xty);
    for c in red.lead..red.dim() {
        lhs[(c, c)] += kappa;
    }
    let active: Vec<usize> = (0..red.dim()).filter(|&c| red_column_alive(&lhs, c, kappa, red.lead)).collect();
    let sub_lhs = lhs.select_rows(&active).select_columns(&active);
    let sub_rhs = rhs.select_rows(&active);
    let chol = Cholesky::new(sub_lhs).ok_or_else(|| {
        Error::IllPosed(format!(
            "normal equations of a {}-parameter subproblem are singular (penalty {kappa:e})",
            active.len()
        ))
    })?;
    let sol = chol.solve(&sub_rhs);
    let mut out = DVector::zeros(red.dim());
    for (k, &c) in active.iter().enumerate() {
        out[c] = sol[k];
    }
    Ok(out)
}

/// A reduced column is dead when its Gram diagonal (before the penalty) is zero.
fn red_column_alive(lhs: &DenseMatrix, c: usize, kappa: f64, lead: usize) -> bool {
    let raw = if c >= lead { lhs[(c, c)] - kappa } else { lhs[(c, c)] };
    raw > 0.0
}

fn logistic_objective(xs: &DenseMatrix, y: &DVector<f64>, lead: usize, kappa: f64, theta: &DVector<f64>) -> f64 {
    let lin = xs * theta;
    let ll: f64 = lin.iter().zip(y.iter()).map(|(&u, &yi)| loglik_term(Family::Logistic, yi, u)).sum();
    let tail_sq: f64 = theta.rows(lead, theta.len() - lead).norm_squared();
    ll / y.len() as f64 - 0.5 * kappa * tail_sq
}

/// Damped Newton ascent for a ridge-penalized logistic likelihood.
///
/// Each accepted step does not decrease the objective (step halving), and the
/// loop stops once the gradient norm reaches [`NEWTON_GRAD_TOL`].
pub(crate) fn newton_logistic(
    xs: &DenseMatrix,
    y: &DVector<f64>,
    lead: usize,
    kappa: f64,
    start: DVector<f64>,
) -> Result<DVector<f64>> {
    let n = y.len() as f64;
    let d = xs.ncols();
    let active: Vec<usize> = (0..d).filter(|&c| xs.column(c).iter().any(|&v| v != 0.0)).collect();
    let xa = xs.select_columns(&active);
    let lead_a = active.iter().filter(|&&c| c < lead).count();
    let mut theta = start.select_rows(&active);

    let mut f = logistic_objective(&xa, y, lead_a, kappa, &theta);
    for _ in 0..NEWTON_MAX_ITERS {
        let lin = &xa * &theta;
        let mut resid = DVector::zeros(y.len());
        let mut weights = DVector::zeros(y.len());
        for i in 0..y.len() {
            let mu = mean_of(Family::Logistic, lin[i]);
            resid[i] = y[i] - mu;
            weights[i] = mu * (1.0 - mu);
        }
        let mut grad = xa.tr_mul(&resid) / n;
        for c in lead_a..theta.len() {
            grad[c] -= kappa * theta[c];
        }
        if grad.norm() <= NEWTON_GRAD_TOL {
            return Ok(scatter(&theta, &active, d));
        }
        let mut weighted = xa.clone();
        for (i, w) in weights.iter().enumerate() {
            weighted.row_mut(i).scale_mut(*w);
        }
        let mut info = xa.tr_mul(&weighted) / n;
        for c in lead_a..theta.len() {
            info[(c, c)] += kappa;
        }
        let step = match Cholesky::new(info) {
            Some(chol) => chol.solve(&grad),
            None => {
                return Err(Error::IllPosed(format!(
                    "logistic information matrix of a {}-parameter problem is singular",
                    theta.len()
                )))
            }
        };
        // Near the optimum the predicted gain is below the resolution of the
        // objective, and comparing objective values would only compare noise.
        if 0.5 * grad.dot(&step) <= 16.0 * f64::EPSILON * (1.0 + f.abs()) {
            theta += &step;
            f = logistic_objective(&xa, y, lead_a, kappa, &theta);
            continue;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let trial = &theta + &step * t;
            let f_trial = logistic_objective(&xa, y, lead_a, kappa, &trial);
            if f_trial.is_finite() && f_trial >= f - 4.0 * f64::EPSILON * f.abs() {
                theta = trial;
                f = f_trial;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // No ascent direction left at working precision.
            if grad.norm() <= 1e3 * NEWTON_GRAD_TOL {
                return Ok(scatter(&theta, &active, d));
            }
            return Err(Error::NonConvergence {
                iterations: NEWTON_MAX_ITERS,
                context: format!("logistic line search stalled at gradient norm {:e}", grad.norm()),
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: NEWTON_MAX_ITERS,
        context: "logistic Newton iterations (possible separation)".into(),
    })
}

fn scatter(theta: &DVector<f64>, active: &[usize], d: usize) -> DVector<f64> {
    let mut out = DVector::zeros(d);
    for (k, &c) in active.iter().enumerate() {
        out[c] = theta[k];
    }
    out
}
