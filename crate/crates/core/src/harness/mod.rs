//! Scenario generators, simulation studies, dataset I/O and the analysis
//! workflow behind the command-line tool.

pub mod analyze;
pub mod io;
pub mod scenario;
pub mod study;

pub use analyze::{analyze, AnalysisReport, CoefficientRow};
pub use io::{load_dataset, save_dataset, DatasetPaths, Table};
pub use scenario::{generate_replicate, generate_scenario, EtaPattern, ScenarioConfig, Template};
pub use study::{run_estimation_study, run_power_study, EstimationReport, PowerReport, PowerRow};
