//! Tests of `H₀: η = 0` with resampling p-values.

pub mod resample;
pub mod statistics;

pub use resample::{
    add_one_p_value, parametric_bootstrap_pvalue, permutation_pvalue, resample_outcome, resample_test, LambdaRefit,
    ResampleOptions, ResampleOutcome,
    ResamplingMethod, TestResult,
};
pub use statistics::{
    coordinate_statistics, null_fit, t_combined, t_gesat, t_gesat_with, t_max, t_star, t_wald, GesatResidual, NullFit, StatisticKind,
};
