#![allow(dead_code)]

use lowrank_glm::{DenseMatrix, Family, MatrixDataset};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Gaussian covariates, a given η, and a response from `family`.
pub fn dataset(rng: &mut ChaCha8Rng, family: Family, n: usize, m: usize, eta: &DenseMatrix, intercept: f64) -> MatrixDataset {
    let (p, q) = eta.shape();
    let z = gaussian_matrix(rng, n, m);
    let mats: Vec<DenseMatrix> = (0..n).map(|_| gaussian_matrix(rng, p, q)).collect();
    let y = (0..n)
        .map(|i| {
            let lin = intercept + 0.5 * z.row(i).sum() + eta.dot(&mats[i]);
            match family {
                Family::Normal => lin + rng.sample::<f64, _>(StandardNormal),
                Family::Logistic => f64::from(rng.random::<f64>() < 1.0 / (1.0 + (-lin).exp())),
            }
        })
        .collect();
    MatrixDataset::new(y, (m > 0).then_some(z), mats).unwrap()
}

/// The unrestricted design `[1, Z, vec M]`, assembled independently of the
/// library.
pub fn full_design(data: &MatrixDataset) -> DenseMatrix {
    let (n, m, p, q) = (data.n(), data.m(), data.p(), data.q());
    DenseMatrix::from_fn(n, 1 + m + p * q, |i, c| match c {
        0 => 1.0,
        c if c <= m => data.z()[(i, c - 1)],
        c => {
            let k = c - 1 - m;
            data.mats()[i][(k % p, k / p)]
        }
    })
}

pub fn response(data: &MatrixDataset) -> DVector<f64> {
    DVector::from_iterator(data.n(), data.y().iter().cloned())
}

/// Plain Newton–Raphson for an unpenalized logistic regression.
pub fn logistic_mle(x: &DenseMatrix, y: &DVector<f64>) -> DVector<f64> {
    let mut beta = DVector::zeros(x.ncols());
    for _ in 0..100 {
        let mu = (x * &beta).map(|u| 1.0 / (1.0 + (-u).exp()));
        let w = mu.map(|v| v * (1.0 - v));
        let grad = x.transpose() * (y - &mu);
        let mut info = DenseMatrix::zeros(x.ncols(), x.ncols());
        for i in 0..x.nrows() {
            let row = x.row(i).transpose();
            info += &row * row.transpose() * w[i];
        }
        let step = info.lu().solve(&grad).unwrap();
        beta += &step;
        if step.amax() < 1e-13 {
            break;
        }
    }
    beta
}
