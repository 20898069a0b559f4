//! Synthetic stand-ins for the two simulation templates.
//!
//! Neither generator reproduces real data; both are labeled synthetic in
//! every output that carries their metadata.

use nalgebra::DVector;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{mean_of, CoefVector, Family, MatrixDataset};
use crate::numkit::{self, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Template {
    /// Normal response; genotype-like `G` (15 markers) and `E` (7 markers)
    /// drawn as allele counts in `{0,1,2}` and centered by their sample means,
    /// `Z = (G, E)`, `M = G Eᵀ`.
    PsqiNormal,
    /// Binary response; 6×6 Gaussian matrices, no confounders.
    EegLogistic,
}

impl Template {
    pub fn family(self) -> Family {
        match self {
            Self::PsqiNormal => Family::Normal,
            Self::EegLogistic => Family::Logistic,
        }
    }

    /// `(p, q, m)`.
    pub fn dims(self) -> (usize, usize, usize) {
        match self {
            Self::PsqiNormal => (15, 7, 22),
            Self::EegLogistic => (6, 6, 0),
        }
    }

    pub fn default_n(self) -> usize {
        match self {
            Self::PsqiNormal => 400,
            Self::EegLogistic => 150,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::PsqiNormal => "psqi-normal",
            Self::EegLogistic => "eeg-logistic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EtaPattern {
    /// `η(1,1) = η(2,1) = c/√2`, zero elsewhere.
    FixedCorner,
    /// Two distinct random cells carrying `c·U`, `U` uniform on the unit circle.
    Sparse2,
    /// First two columns equal `c·U`, `U` uniform on the unit sphere of `R^{2p}`.
    LowRankCols2,
}

impl EtaPattern {
    pub fn name(self) -> &'static str {
        match self {
            Self::FixedCorner => "fixed-corner",
            Self::Sparse2 => "sparse2",
            Self::LowRankCols2 => "low-rank-cols2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub template: Template,
    pub eta_pattern: EtaPattern,
    pub effect_size: f64,
    pub n: usize,
    pub replicates: usize,
    pub seed: u64,
    /// Residual standard deviation; only used by the normal template.
    pub noise_sigma: f64,
}

impl ScenarioConfig {
    pub fn new(template: Template, eta_pattern: EtaPattern, effect_size: f64, seed: u64) -> Self {
        Self { template, eta_pattern, effect_size, n: template.default_n(), replicates: 1, seed, noise_sigma: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.effect_size >= 0.0 && self.effect_size.is_finite()) {
            return Err(Error::InvalidInput(format!("effect size must be finite and >= 0, got {}", self.effect_size)));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidInput(format!("noise sigma must be positive, got {}", self.noise_sigma)));
        }
        let (_, _, m) = self.template.dims();
        if self.n < m + 2 {
            return Err(Error::InsufficientSample { n: self.n, required: m + 2 });
        }
        if self.replicates == 0 {
            return Err(Error::InvalidInput("replicates must be at least 1".into()));
        }
        Ok(())
    }
}

/// Intercept and confounder effects of the normal template.
pub const PSQI_GAMMA: f64 = 10.0;

fn psqi_xi() -> DVector<f64> {
    let mut xi = DVector::zeros(22);
    for j in 0..5 {
        xi[j] = 1.0;
    }
    for j in 15..18 {
        xi[j] = 1.0;
    }
    xi
}

/// The first replicate of `config`.
pub fn generate_scenario(config: &ScenarioConfig) -> Result<(MatrixDataset, CoefVector)> {
    generate_replicate(config, 0)
}

/// Replicate `index` of `config`, drawn from stream `index` of the seed.
///
/// Draws happen in a fixed order (covariates, η direction, noise) that does
/// not depend on the effect size, so datasets that differ only in `c` share
/// their random numbers.
pub fn generate_replicate(config: &ScenarioConfig, index: usize) -> Result<(MatrixDataset, CoefVector)> {
    let mut rng = replicate_rng(config.seed, index);
    let (dataset, truth) = generate_with(config, &mut rng)?;
    Ok((dataset, truth))
}

/// Like [`generate_replicate`], also returning the stream positioned after
/// the data draws (used to derive resampling seeds).
pub(crate) fn generate_replicate_rng(config: &ScenarioConfig, index: usize) -> Result<(MatrixDataset, CoefVector, ChaCha8Rng)> {
    let mut rng = replicate_rng(config.seed, index);
    let (dataset, truth) = generate_with(config, &mut rng)?;
    Ok((dataset, truth, rng))
}

fn replicate_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn generate_with(config: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<(MatrixDataset, CoefVector)> {
    config.validate()?;
    let (p, q, m) = config.template.dims();
    let n = config.n;
    let (z, mats) = match config.template {
        Template::PsqiNormal => psqi_covariates(rng, n),
        Template::EegLogistic => (DenseMatrix::zeros(n, 0), eeg_covariates(rng, n, p, q)),
    };
    let eta = draw_eta(rng, config.eta_pattern, config.effect_size, p, q);
    let (gamma, xi) = match config.template {
        Template::PsqiNormal => (PSQI_GAMMA, psqi_xi()),
        Template::EegLogistic => (0.0, DVector::zeros(0)),
    };
    let truth = CoefVector { gamma, xi: xi.clone(), eta_vec: numkit::vec(&eta) };

    let y: Vec<f64> = (0..n)
        .map(|i| {
            let lin = gamma + z.row(i).transpose().dot(&xi) + eta.dot(&mats[i]);
            match config.template.family() {
                Family::Normal => lin + config.noise_sigma * rng.sample::<f64, _>(StandardNormal),
                Family::Logistic => f64::from(rng.random::<f64>() < mean_of(Family::Logistic, lin)),
            }
        })
        .collect();
    let z = (m > 0).then_some(z);
    Ok((MatrixDataset::new(y, z, mats)?, truth))
}

fn psqi_covariates(rng: &mut ChaCha8Rng, n: usize) -> (DenseMatrix, Vec<DenseMatrix>) {
    let (p, q, m) = Template::PsqiNormal.dims();
    let maf: Vec<f64> = (0..m).map(|_| rng.random_range(0.2..0.5)).collect();
    let markers: Vec<Binomial> = maf.iter().map(|&f| Binomial::new(2, f).expect("valid allele frequency")).collect();
    let mut z = DenseMatrix::zeros(n, m);
    let mut mats = Vec::with_capacity(n);
    for i in 0..n {
        for (j, dist) in markers.iter().enumerate() {
            z[(i, j)] = dist.sample(rng) as f64;
        }
    }
    for j in 0..m {
        let mean = z.column(j).mean();
        z.column_mut(j).add_scalar_mut(-mean);
    }
    for i in 0..n {
        let g = z.view((i, 0), (1, p)).transpose();
        let e = z.view((i, p), (1, q)).transpose();
        mats.push(&g * e.transpose());
    }
    (z, mats)
}

/// AR(1) correlation with coefficient 0.5 along rows and columns, then
/// per-cell standardization across the sample.
fn eeg_covariates(rng: &mut ChaCha8Rng, n: usize, p: usize, q: usize) -> Vec<DenseMatrix> {
    let ar = |d: usize| DenseMatrix::from_fn(d, d, |i, j| 0.5f64.powi((i as i32 - j as i32).abs()));
    let lp = ar(p).cholesky().expect("AR(1) correlation is positive definite").l();
    let lq = ar(q).cholesky().expect("AR(1) correlation is positive definite").l();
    let mut mats: Vec<DenseMatrix> = (0..n)
        .map(|_| {
            let w = DenseMatrix::from_fn(p, q, |_, _| rng.sample::<f64, _>(StandardNormal));
            &lp * w * lq.transpose()
        })
        .collect();
    for j in 0..p {
        for k in 0..q {
            let mean = mats.iter().map(|mi| mi[(j, k)]).sum::<f64>() / n as f64;
            let var = mats.iter().map(|mi| (mi[(j, k)] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let sd = var.sqrt();
            for mi in mats.iter_mut() {
                mi[(j, k)] = if sd > 0.0 { (mi[(j, k)] - mean) / sd } else { 0.0 };
            }
        }
    }
    mats
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

fn draw_eta(rng: &mut ChaCha8Rng, pattern: EtaPattern, c: f64, p: usize, q: usize) -> DenseMatrix {
    let mut eta = DenseMatrix::zeros(p, q);
    match pattern {
        EtaPattern::FixedCorner => {
            let v = c / std::f64::consts::SQRT_2;
            eta[(0, 0)] = v;
            eta[(1, 0)] = v;
        }
        EtaPattern::Sparse2 => {
            let cells = index::sample(rng, p * q, 2);
            let u = unit_vector(rng, 2);
            for (k, cell) in cells.iter().enumerate() {
                eta[(cell % p, cell / p)] = c * u[k];
            }
        }
        EtaPattern::LowRankCols2 => {
            let u = unit_vector(rng, 2 * p);
            for k in 0..2.min(q) {
                for j in 0..p {
                    eta[(j, k)] = c * u[k * p + j];
                }
            }
        }
    }
    eta
}
