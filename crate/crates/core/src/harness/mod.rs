//! Seeded Monte Carlo experiments comparing QBE with the least-squares sine
//! fit, and the CSV tables they produce.

mod cdf;
pub mod config;
mod motivate;

pub use cdf::{run_cdf_experiment, CdfResult, CdfRow};
pub use config::{
    CdfSpec, EstimatorSpec, Frequency, MotivateSpec, QuantizerKind, QuantizerSpec, RunSpec,
    ScenarioConfig, SignalSpec,
};
pub use motivate::{default_amplitudes, run_motivating_example, MotivateResult, MotivateRow};

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng as _;
use rayon::prelude::*;

use crate::baseline::{dft_frequency_guess, sinefit3, sinefit4_in};
use crate::error::{Error, Result};
use crate::estimator::qbe_fit;
use crate::quantizer::QuantizerModel;
use crate::rng::{derive_seed, seeded};
use crate::search::{qbe_fit_unknown_freq, SearchTrace};
use crate::signal::{acquire_with_noise, BasisSet, ParamVector};

/// Errors of one successful trial, in volts.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    /// Error of the constant component.
    pub e_dc: f64,
    /// Error of the sine amplitude `sqrt(theta_0^2 + theta_1^2)`.
    pub e_ac: f64,
    pub sigma_hat: Option<f64>,
    pub lambda_hat: f64,
    pub wall_time: Duration,
}

impl TrialOutcome {
    /// `sqrt(e_dc^2 + e_ac^2 / 2)`.
    pub fn metric(&self) -> f64 {
        (self.e_dc * self.e_dc + 0.5 * self.e_ac * self.e_ac).sqrt()
    }
}

/// Root mean square of the per-trial metrics.
pub fn rmse(outcomes: &[TrialOutcome]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::EmptyResult);
    }
    let ss: f64 = outcomes.iter().map(|o| o.metric().powi(2)).sum();
    Ok((ss / outcomes.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimator {
    Qbe,
    Lse,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Qbe => "qbe",
            Estimator::Lse => "lse",
        })
    }
}

/// One line of `sweep.csv`; noise level and RMSE are in units of `Δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub sigma: f64,
    pub samples: usize,
    pub estimator: Estimator,
    /// `None` when every trial failed.
    pub rmse: Option<f64>,
    pub successes: usize,
    pub failures: usize,
    /// Per-trial results in trial order; `None` marks a failure.
    pub outcomes: Vec<Option<TrialOutcome>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialFailure {
    pub sigma: f64,
    pub samples: usize,
    pub estimator: Estimator,
    pub trial: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<TrialFailure>,
    /// Frequency search of the first trial at the first grid point, when
    /// the frequency is unknown.
    pub trace: Option<SearchTrace>,
}

impl ScenarioResult {
    pub fn row(&self, sigma: f64, samples: usize, estimator: Estimator) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.sigma == sigma && r.samples == samples && r.estimator == estimator)
    }

    /// `sigma,N,estimator,rmse,failures`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sigma,N,estimator,rmse,failures\n");
        for r in &self.rows {
            let rmse = r.rmse.map_or("nan".to_string(), |v| format!("{v:.9e}"));
            out.push_str(&format!(
                "{},{},{},{rmse},{}\n",
                r.sigma, r.samples, r.estimator, r.failures
            ));
        }
        out
    }

    /// Writes `sweep.csv` (and `trace.csv` when present) into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let sweep = dir.join("sweep.csv");
        std::fs::write(&sweep, self.to_csv())?;
        let mut written = vec![sweep];
        if let Some(t) = &self.trace {
            let p = dir.join("trace.csv");
            t.write_csv(&p)?;
            written.push(p);
        }
        Ok(written)
    }
}

struct Setup {
    truth: QuantizerModel,
    believed: QuantizerModel,
    nominal: QuantizerModel,
    basis: BasisSet,
    step: f64,
}

struct TrialRecord {
    qbe: std::result::Result<TrialOutcome, String>,
    lse: Option<std::result::Result<TrialOutcome, String>>,
    trace: Option<SearchTrace>,
}

/// Seed of trial `trial` at grid point `(sigma, samples)`. Depends only on
/// these values, so growing the trial count keeps earlier trials intact.
pub fn trial_seed(master: u64, sigma: f64, samples: usize, trial: usize) -> u64 {
    derive_seed(master, &[sigma.to_bits(), samples as u64, trial as u64])
}

fn sine_errors(theta_hat: &[f64], truth: &[f64]) -> (f64, f64) {
    let amp = |t: &[f64]| t[0].hypot(t[1]);
    (theta_hat[2] - truth[2], amp(theta_hat) - amp(truth))
}

fn run_trial(cfg: &ScenarioConfig, s: &Setup, sigma: f64, samples: usize, seed: u64) -> TrialRecord {
    let lambda = cfg.signal.lambda;
    let mut theta: Vec<f64> = cfg.signal.theta.iter().map(|v| v * s.step).collect();
    if cfg.signal.random_phase {
        let phi = seeded(derive_seed(seed, &[1])).random_range(0.0..2.0 * PI);
        let (a, b) = (theta[0], theta[1]);
        theta[0] = a * phi.cos() - b * phi.sin();
        theta[1] = a * phi.sin() + b * phi.cos();
    }
    let noise = (sigma > 0.0).then_some(sigma * s.step);
    let rec = match ParamVector::new(theta.clone(), noise).and_then(|p| {
        acquire_with_noise(&p, &s.basis, lambda, samples, &s.truth, seed, cfg.signal.noise)
    }) {
        Ok(r) => r,
        Err(e) => {
            return TrialRecord {
                qbe: Err(e.to_string()),
                lse: cfg.estimator.lse.then(|| Err(e.to_string())),
                trace: None,
            }
        }
    };

    let start = Instant::now();
    let mut trace = None;
    let qbe_fit_result = match cfg.estimator.frequency {
        Frequency::Known => {
            let mut opts = cfg.qbe_options();
            if cfg.estimator.known_sigma {
                opts.sigma = noise;
            }
            qbe_fit(&rec, &s.basis, lambda, &s.believed, &opts)
        }
        Frequency::Unknown => {
            qbe_fit_unknown_freq(&rec, &s.basis, &s.believed, &cfg.unknown_freq_options()).map(
                |(fit, t)| {
                    trace = Some(t);
                    fit
                },
            )
        }
    };
    let qbe = qbe_fit_result
        .map(|fit| {
            let (e_dc, e_ac) = sine_errors(&fit.theta_hat, &theta);
            TrialOutcome {
                e_dc,
                e_ac,
                sigma_hat: fit.sigma_hat,
                lambda_hat: fit.lambda,
                wall_time: start.elapsed(),
            }
        })
        .map_err(|e| e.to_string());

    let lse = cfg.estimator.lse.then(|| {
        let start = Instant::now();
        let fit = s.nominal.reconstruct(&rec.codes).and_then(|x| match cfg.estimator.frequency {
            Frequency::Known => sinefit3(&x, lambda),
            Frequency::Unknown => {
                let l0 = dft_frequency_guess(&x)?;
                let w = cfg.estimator.bracket_halfwidth.unwrap_or(2.0 / samples as f64);
                sinefit4_in(&x, (l0 - w, l0 + w), cfg.estimator.gamma).map(|r| r.0)
            }
        });
        fit.map(|f| {
            let (e_dc, e_ac) = sine_errors(&f.theta(), &theta);
            TrialOutcome {
                e_dc,
                e_ac,
                sigma_hat: None,
                lambda_hat: f.lambda,
                wall_time: start.elapsed(),
            }
        })
        .map_err(|e| e.to_string())
    });
    TrialRecord { qbe, lse, trace }
}

/// Runs `run.trials` records at every `(sigma, N)` grid point and
/// aggregates the RMSE of QBE and, if enabled, of the sine fit.
///
/// Trials run in parallel; results are gathered in trial order so the
/// output does not depend on scheduling.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioResult> {
    cfg.validate()?;
    let basis = cfg.basis()?;
    if basis.name() != "sine" {
        return Err(Error::Config(format!(
            "sweeps score sine fits; basis `{}` is not supported",
            basis.name()
        )));
    }
    let truth = cfg.build_quantizer()?;
    let setup = Setup {
        believed: cfg.believed_quantizer(&truth)?,
        nominal: truth.nominal(),
        step: truth.step(),
        truth,
        basis,
    };

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut trace = None;
    for &sigma in &cfg.signal.sigma {
        for &samples in &cfg.signal.samples {
            let records: Vec<TrialRecord> = (0..cfg.run.trials)
                .into_par_iter()
                .map(|i| {
                    let seed = trial_seed(cfg.run.seed, sigma, samples, i);
                    run_trial(cfg, &setup, sigma, samples, seed)
                })
                .collect();
            if trace.is_none() {
                trace = records.first().and_then(|r| r.trace.clone());
            }
            let mut per_estimator = vec![(Estimator::Qbe, Vec::new())];
            if cfg.estimator.lse {
                per_estimator.push((Estimator::Lse, Vec::new()));
            }
            for (i, r) in records.into_iter().enumerate() {
                let results = std::iter::once(r.qbe).chain(r.lse);
                for ((est, list), res) in per_estimator.iter_mut().zip(results) {
                    match res {
                        Ok(o) => list.push(Some(o)),
                        Err(message) => {
                            list.push(None);
                            failures.push(TrialFailure {
                                sigma,
                                samples,
                                estimator: *est,
                                trial: i,
                                message,
                            });
                        }
                    }
                }
            }
            for (est, outcomes) in per_estimator {
                let ok: Vec<TrialOutcome> = outcomes.iter().flatten().cloned().collect();
                rows.push(SweepRow {
                    sigma,
                    samples,
                    estimator: est,
                    rmse: rmse(&ok).ok().map(|v| v / setup.step),
                    successes: ok.len(),
                    failures: outcomes.len() - ok.len(),
                    outcomes,
                });
            }
        }
    }
    Ok(ScenarioResult {
        rows,
        failures,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(e_dc: f64, e_ac: f64) -> TrialOutcome {
        TrialOutcome {
            e_dc,
            e_ac,
            sigma_hat: None,
            lambda_hat: 0.0,
            wall_time: Duration::ZERO,
        }
    }

    #[test]
    fn rmse_examples() {
        // sqrt(3^2 + 4^2 / 2) = sqrt(17)
        assert!((rmse(&[outcome(3.0, 4.0)]).unwrap() - 17f64.sqrt()).abs() < 1e-15);
        assert_eq!(rmse(&[outcome(0.0, 0.0)]).unwrap(), 0.0);
        let two = [outcome(1.0, 0.0), outcome(3.0, 0.0)];
        assert!((rmse(&two).unwrap() - 5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(rmse(&[]), Err(Error::EmptyResult)));
    }

    fn small_config() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::default();
        cfg.run.trials = 3;
        cfg.signal.samples = vec![4000];
        cfg.signal.sigma = vec![0.5];
        cfg.estimator.epsilon = 0.01;
        cfg
    }

    #[test]
    fn scenario_rows_and_determinism() {
        let cfg = small_config();
        let a = run_scenario(&cfg).unwrap();
        assert_eq!(a.rows.len(), 2);
        for r in &a.rows {
            assert_eq!(r.successes + r.failures, 3);
            assert!(r.rmse.unwrap() > 0.0);
        }
        assert!(a.trace.is_none());
        let b = run_scenario(&cfg).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert!(a.to_csv().starts_with("sigma,N,estimator,rmse,failures\n0.5,4000,qbe,"));
    }

    #[test]
    fn noiseless_trials_fail_and_are_counted() {
        let mut cfg = small_config();
        cfg.run.trials = 1;
        cfg.signal.sigma = vec![0.0];
        // Constant input between two levels: every probability is 0 or 1.
        cfg.signal.theta = vec![0.0, 0.0, 0.5];
        let r = run_scenario(&cfg).unwrap();
        let qbe = r.row(0.0, 4000, Estimator::Qbe).unwrap();
        assert_eq!((qbe.successes, qbe.failures, qbe.rmse), (0, 1, None));
        assert!(r.to_csv().contains("0,4000,qbe,nan,1"));
        assert_eq!(r.failures.len(), 1);
        assert!(r.failures[0].message.contains("insufficient data"));
        // The sine fit does not need noise.
        assert_eq!(r.row(0.0, 4000, Estimator::Lse).unwrap().failures, 0);
    }

    #[test]
    fn more_trials_keep_earlier_ones() {
        let mut cfg = small_config();
        cfg.run.trials = 2;
        cfg.estimator.lse = false;
        let two = run_scenario(&cfg).unwrap();
        cfg.run.trials = 1;
        let one = run_scenario(&cfg).unwrap();
        let (a, b) = (
            one.rows[0].outcomes[0].as_ref().unwrap(),
            two.rows[0].outcomes[0].as_ref().unwrap(),
        );
        assert_eq!((a.e_dc, a.e_ac, a.sigma_hat), (b.e_dc, b.e_ac, b.sigma_hat));
        assert_ne!(trial_seed(1, 0.5, 4000, 0), trial_seed(1, 0.5, 4000, 1));
        assert_ne!(trial_seed(1, 0.5, 4000, 0), trial_seed(1, 0.2, 4000, 0));
    }

    #[test]
    fn unknown_frequency_emits_trace() {
        let mut cfg = small_config();
        cfg.run.trials = 1;
        cfg.estimator.frequency = Frequency::Unknown;
        cfg.estimator.gamma = 1e-8;
        let r = run_scenario(&cfg).unwrap();
        let t = r.trace.as_ref().unwrap();
        assert!(t.iterations > 5);
        let dir = tempfile::tempdir().unwrap();
        let files = r.write(dir.path()).unwrap();
        assert_eq!(files.len(), 2);
        let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
        assert!(trace.starts_with("iter,lambda,mse\n"));
    }

    #[test]
    fn non_sine_basis_is_rejected() {
        let mut cfg = small_config();
        cfg.signal.basis = "constant".into();
        cfg.signal.theta = vec![1.0];
        assert!(run_scenario(&cfg).unwrap_err().is_config());
    }
}
