//! Parameter estimation for periodic signals observed through a possibly
//! non-uniform quantizer.
//!
//! The crate implements the quantile-based estimator (QBE), which works in
//! the amplitude domain using known transition levels, alongside the
//! classical least-squares sine fit on reconstructed code values. Simulated
//! ADC models and a seeded Monte Carlo harness compare the two.

pub mod baseline;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod partition;
pub mod quantizer;
pub mod rng;
pub mod search;
pub mod signal;

pub use error::{Error, Result};
pub use estimator::{qbe_fit, FitResult, Guards, ProbabilityTable, QbeOptions};
pub use harness::{rmse, run_cdf_experiment, run_motivating_example, run_scenario, ScenarioConfig, TrialOutcome};
pub use partition::{async_partition, sync_partition, AveragedBasis, IndexPartition};
pub use baseline::{dft_frequency_guess, sinefit3, sinefit4, SineFitResult};
pub use quantizer::{Code, QuantizerModel};
pub use search::{golden_section, qbe_fit_unknown_freq, MseBasis, SearchTrace, UnknownFreqOptions};
pub use signal::{AcquisitionRecord, BasisSet, NoiseKind, ParamVector};
