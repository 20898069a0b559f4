//! K-fold cross-validation over a small λ grid.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{loglik_term, Family, MatrixDataset, ModelSpec};

use super::glm::Design;

/// Candidate λ values and fold count. An empty candidate list means the
/// default grid `{s_r/n^{3/2}, s_r/n, s_r/(√n·ln n)}` for the data at hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvGrid {
    pub candidates: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
}

impl CvGrid {
    pub fn default_grid(folds: usize, seed: u64) -> Self {
        Self { candidates: Vec::new(), folds, seed }
    }

    pub fn explicit(candidates: Vec<f64>, folds: usize, seed: u64) -> Self {
        Self { candidates, folds, seed }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::InvalidInput(format!("cross-validation needs at least 2 folds, got {}", self.folds)));
        }
        if self.folds > n {
            return Err(Error::InvalidInput(format!("{} folds exceed the sample size {n}", self.folds)));
        }
        if let Some(bad) = self.candidates.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(Error::InvalidInput(format!("lambda candidate {bad} is not a finite value >= 0")));
        }
        Ok(())
    }

    /// The concrete candidate list for a sample of size `n`.
    pub fn resolve(&self, n: usize, s_r: usize) -> Vec<f64> {
        if self.candidates.is_empty() {
            default_lambda_grid(n, s_r).to_vec()
        } else {
            self.candidates.clone()
        }
    }
}

/// `{s_r/n^{3/2}, s_r/n, s_r/(√n·ln n)}`. Each element is o(n^{-1/2}).
pub fn default_lambda_grid(n: usize, s_r: usize) -> [f64; 3] {
    let n = n as f64;
    let s = s_r as f64;
    [s / n.powf(1.5), s / n, s / (n.sqrt() * n.ln())]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvScore {
    pub lambda: f64,
    /// Held-out mean squared error (normal) or mean negative log-likelihood
    /// (logistic); `+∞` when any fold failed.
    pub score: f64,
}

/// Fold label of each observation: a seeded shuffle dealt round-robin.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut label = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        label[i] = pos % folds;
    }
    label
}

/// Picks λ by K-fold cross-validation; ties go to the larger λ.
pub fn select_lambda_cv(data: &MatrixDataset, spec: &ModelSpec, grid: &CvGrid, seed: u64) -> Result<(f64, Vec<CvScore>)> {
    grid.validate(data.n())?;
    let s_r = spec.effective_params(data);
    let candidates = grid.resolve(data.n(), s_r);
    if candidates.is_empty() {
        return Err(Error::InvalidInput("empty lambda grid".into()));
    }
    if candidates.len() == 1 {
        return Ok((candidates[0], vec![CvScore { lambda: candidates[0], score: f64::NAN }]));
    }

    let labels = fold_assignment(data.n(), grid.folds, seed);
    let splits: Vec<(MatrixDataset, MatrixDataset)> = (0..grid.folds)
        .map(|f| {
            let train: Vec<usize> = (0..data.n()).filter(|&i| labels[i] != f).collect();
            let test: Vec<usize> = (0..data.n()).filter(|&i| labels[i] == f).collect();
            (data.subset(&train), data.subset(&test))
        })
        .collect();
    let train_designs: Vec<Design> = splits.iter().map(|(tr, _)| Design::new(tr, spec.family)).collect();

    let mut table = Vec::with_capacity(candidates.len());
    for &lambda in &candidates {
        let mut total = 0.0;
        for ((_, test), design) in splits.iter().zip(&train_designs) {
            match super::fit_point(design, spec, lambda, None) {
                Ok(point) => total += held_out_loss(test, spec.family, &point.theta),
                Err(e) => {
                    log::debug!("cv fold failed at lambda {lambda}: {e}");
                    total = f64::INFINITY;
                    break;
                }
            }
        }
        let score = if total.is_finite() { total / data.n() as f64 } else { f64::INFINITY };
        table.push(CvScore { lambda, score });
    }

    let mut best = &table[0];
    for entry in &table[1..] {
        let better = entry.score < best.score || (entry.score == best.score && entry.lambda > best.lambda);
        if better {
            best = entry;
        }
    }
    if !best.score.is_finite() {
        return Err(Error::NonConvergence {
            iterations: spec.max_outer_iters,
            context: "every lambda candidate failed in some cross-validation fold".into(),
        });
    }
    Ok((best.lambda, table))
}

/// Summed held-out loss: squared error or negative log-likelihood.
fn held_out_loss(test: &MatrixDataset, family: Family, theta: &crate::model::FactorParams) -> f64 {
    let beta = crate::model::beta_of_theta(theta).to_vector();
    let lin = test.design_matrix() * beta;
    lin.iter()
        .zip(test.y().iter())
        .map(|(&u, &y)| match family {
            Family::Normal => (y - u) * (y - u),
            Family::Logistic => -loglik_term(family, y, u),
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LambdaPolicy;
    use crate::numkit::DenseMatrix;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn small_data(seed: u64) -> MatrixDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 60;
        let mats: Vec<DenseMatrix> = (0..n).map(|_| DenseMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0))).collect();
        let y = mats.iter().map(|m| m[(0, 0)] + rng.random_range(-0.5..0.5)).collect();
        MatrixDataset::new(y, None, mats).unwrap()
    }

    #[test]
    fn default_grid_arithmetic() {
        let g = default_lambda_grid(400, 80);
        assert_relative_eq!(g[0], 0.01, epsilon = 1e-15);
        assert_relative_eq!(g[1], 0.2, epsilon = 1e-15);
        assert_relative_eq!(g[2], 80.0 / (20.0 * 400f64.ln()), epsilon = 1e-15);
        assert!((g[2] - 0.6676).abs() < 1e-4);
    }

    #[test]
    fn default_grid_times_root_n_vanishes() {
        let mut prev = [f64::INFINITY; 3];
        for n in [100usize, 400, 1600, 6400] {
            let g = default_lambda_grid(n, 20);
            for k in 0..3 {
                let scaled = g[k] * (n as f64).sqrt();
                assert!(scaled < prev[k]);
                prev[k] = scaled;
            }
        }
    }

    #[test]
    fn single_candidate_short_circuits() {
        let data = small_data(41);
        let spec = ModelSpec::new(Family::Normal, 1, LambdaPolicy::Fixed(0.0));
        let grid = CvGrid::explicit(vec![0.3], 5, 1);
        let (l, table) = select_lambda_cv(&data, &spec, &grid, 1).unwrap();
        assert_eq!(l, 0.3);
        assert_eq!(table.len(), 1);
    }

    #[test]
    fn same_seed_same_split_and_winner() {
        let data = small_data(42);
        let spec = ModelSpec::new(Family::Normal, 1, LambdaPolicy::Fixed(0.0));
        let grid = CvGrid::explicit(vec![0.001, 0.1, 1.0], 4, 9);
        assert_eq!(fold_assignment(60, 4, 9), fold_assignment(60, 4, 9));
        let a = select_lambda_cv(&data, &spec, &grid, 9).unwrap();
        let b = select_lambda_cv(&data, &spec, &grid, 9).unwrap();
        assert_eq!(a, b);
        let counts = (0..4).map(|f| fold_assignment(60, 4, 9).iter().filter(|&&l| l == f).count()).collect::<Vec<_>>();
        assert_eq!(counts, vec![15; 4]);
    }

    #[test]
    fn ties_prefer_larger_lambda() {
        // With all-zero matrix covariates every λ yields the same null fit.
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let n = 30;
        let y = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let data = MatrixDataset::new(y, None, vec![DenseMatrix::zeros(2, 2); n]).unwrap();
        let spec = ModelSpec::new(Family::Normal, 1, LambdaPolicy::Fixed(0.0));
        let grid = CvGrid::explicit(vec![0.5, 0.01, 2.0, 0.1], 3, 2);
        let (l, table) = select_lambda_cv(&data, &spec, &grid, 2).unwrap();
        assert!(table.windows(2).all(|w| w[0].score == w[1].score));
        assert_eq!(l, 2.0);
    }

    #[test]
    fn rejects_bad_folds() {
        let data = small_data(44);
        let spec = ModelSpec::new(Family::Normal, 1, LambdaPolicy::Fixed(0.0));
        assert!(select_lambda_cv(&data, &spec, &CvGrid::explicit(vec![0.1, 0.2], 1, 0), 0).is_err());
        assert!(select_lambda_cv(&data, &spec, &CvGrid::explicit(vec![0.1, 0.2], 61, 0), 0).is_err());
    }
}
