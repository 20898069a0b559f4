mod common;

use approx::assert_relative_eq;
use common::*;
use lowrank_glm::testing::{
    add_one_p_value, null_fit, permutation_pvalue, resample_test, t_combined, t_gesat, t_max, t_wald, ResampleOptions, ResamplingMethod,
    StatisticKind,
};
use lowrank_glm::{fit, DenseMatrix, Family, LambdaPolicy, ModelSpec};
use nalgebra::DVector;

#[test]
fn add_one_rule_matches_a_direct_count() {
    let resampled = [0.3, 1.2, 0.9, 1.2, 2.5, 0.1, 1.0];
    for observed in [0.0, 0.1, 1.0, 1.2, 3.0] {
        let mut exceed = 0;
        for &t in &resampled {
            if t >= observed {
                exceed += 1;
            }
        }
        let expected = (exceed + 1) as f64 / 8.0;
        assert_eq!(add_one_p_value(observed, &resampled), expected);
    }
}

#[test]
fn full_rank_statistics_match_classical_formulas() {
    let mut rng = rng(11);
    let eta = gaussian_matrix(&mut rng, 3, 3) * 0.15;
    let data = dataset(&mut rng, Family::Normal, 200, 1, &eta, 0.3);
    let (n, m, p, q) = (data.n(), 1, 3, 3);
    let fitted = fit(&data, &ModelSpec::new(Family::Normal, 3, LambdaPolicy::Fixed(0.0))).unwrap();

    let x = full_design(&data);
    let y = response(&data);
    let xtx = x.transpose() * &x;
    let ols = xtx.clone().cholesky().unwrap().solve(&(x.transpose() * &y));
    let sigma_sq = (&y - &x * &ols).norm_squared() / (n - x.ncols()) as f64;
    let cov = xtx.try_inverse().unwrap() * sigma_sq;
    let k = 1 + m;
    let d = p * q;
    let eta_hat = ols.rows(k, d).into_owned();
    let cov_eta = cov.view((k, k), (d, d)).into_owned();
    let wald = eta_hat.dot(&(cov_eta.clone().try_inverse().unwrap() * &eta_hat));
    let max = (0..d).map(|j| eta_hat[j] * eta_hat[j] / cov_eta[(j, j)]).fold(0.0, f64::max);

    assert_relative_eq!(t_wald(&fitted, n), wald, max_relative = 1e-6);
    assert_relative_eq!(t_max(&fitted, n, m, p, q).unwrap(), max, max_relative = 1e-6);
    assert_relative_eq!(t_combined(&fitted, n, m, p, q).unwrap(), wald * max, max_relative = 1e-6);
}

#[test]
fn gesat_matches_a_hand_computed_score() {
    let mut rng = rng(12);
    let data = dataset(&mut rng, Family::Normal, 120, 2, &DenseMatrix::zeros(3, 2), 1.0);
    let x0 = full_design(&data).columns(0, 3).into_owned();
    let y = response(&data);
    let coef = (x0.transpose() * &x0).cholesky().unwrap().solve(&(x0.transpose() * &y));
    let resid = &y - &x0 * coef;
    let mut score = DVector::<f64>::zeros(6);
    for i in 0..data.n() {
        for (k, v) in data.mats()[i].iter().enumerate() {
            score[k] += resid[i] * v;
        }
    }
    let nf = null_fit(&data, Family::Normal).unwrap();
    assert_relative_eq!(t_gesat(&data, &nf), score.norm_squared(), max_relative = 1e-9);
}

#[test]
fn permutation_p_values_are_calibrated_under_the_null() {
    let mut rng = rng(13);
    let spec = ModelSpec::new(Family::Normal, 1, LambdaPolicy::Fixed(0.05));
    let mut p_values = Vec::new();
    for s in 0..100 {
        let data = dataset(&mut rng, Family::Normal, 60, 0, &DenseMatrix::zeros(3, 3), 0.0);
        p_values.push(permutation_pvalue(&data, &spec, StatisticKind::Combined, 39, s).unwrap().p_value);
    }
    let mean = p_values.iter().sum::<f64>() / p_values.len() as f64;
    let small = p_values.iter().filter(|&&v| v <= 0.1).count() as f64 / p_values.len() as f64;
    assert!((0.4..=0.6).contains(&mean), "mean p-value {mean}");
    assert!((0.02..=0.2).contains(&small), "share below 0.1 is {small}");
}

#[test]
fn bootstrap_detects_a_strong_signal_and_is_reproducible() {
    let mut rng = rng(14);
    let eta = DenseMatrix::from_fn(4, 3, |i, j| if i == 0 && j == 0 { 0.6 } else { 0.0 });
    let data = dataset(&mut rng, Family::Normal, 150, 2, &eta, 0.0);
    let spec = ModelSpec::new(Family::Normal, 1, LambdaPolicy::Fixed(0.02));
    let kinds = [StatisticKind::Wald, StatisticKind::Max, StatisticKind::CombinedGesat];
    let opts = ResampleOptions::new(49, 21);
    let a = resample_test(&data, &spec, ResamplingMethod::ParametricBootstrap, &kinds, &opts, None).unwrap();
    let b = resample_test(&data, &spec, ResamplingMethod::ParametricBootstrap, &kinds, &opts, None).unwrap();
    assert_eq!(a, b);
    for t in &a {
        assert_eq!(t.p_value, 0.02, "{:?}", t.kind);
        assert_eq!(t.resample_values.len() + t.failed, 49);
    }
    let other = resample_test(&data, &spec, ResamplingMethod::ParametricBootstrap, &kinds, &ResampleOptions::new(49, 22), None).unwrap();
    assert_ne!(other[0].resample_values, a[0].resample_values);
}

#[test]
fn logistic_permutation_test_runs_end_to_end() {
    let mut rng = rng(15);
    let eta = DenseMatrix::from_fn(3, 3, |i, j| if i == j { 0.9 } else { 0.0 });
    let data = dataset(&mut rng, Family::Logistic, 200, 0, &eta, 0.0);
    let spec = ModelSpec::new(Family::Logistic, 1, LambdaPolicy::Fixed(0.05));
    let out = resample_test(&data, &spec, ResamplingMethod::Permutation, &StatisticKind::ALL, &ResampleOptions::new(39, 3), None).unwrap();
    assert_eq!(out.len(), 5);
    let gesat = out.iter().find(|t| t.kind == StatisticKind::Gesat).unwrap();
    assert!(gesat.p_value <= 0.05, "{}", gesat.p_value);
}
