//! Scenario configuration, read from TOML.
//!
//! Signal amplitudes, noise levels, INL targets and threshold errors are
//! given in units of the quantization step `Δ` of the simulated converter,
//! so one file describes the same experiment for any input range.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{Guards, QbeOptions};
use crate::quantizer::{make_resistor_ladder, make_uniform, perturb_levels, QuantizerModel};
use crate::search::{MseBasis, UnknownFreqOptions};
use crate::signal::{BasisSet, NoiseKind};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub run: RunSpec,
    pub quantizer: QuantizerSpec,
    pub signal: SignalSpec,
    pub estimator: EstimatorSpec,
    pub motivate: MotivateSpec,
    pub cdf: CdfSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    /// Monte Carlo records per grid point.
    pub trials: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantizerKind {
    Uniform,
    Ladder,
    /// Levels read from `levels_file`.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizerSpec {
    pub kind: QuantizerKind,
    pub bits: u32,
    pub range: [f64; 2],
    /// Relative standard deviation of the ladder resistors.
    pub resistor_sigma: f64,
    /// Rescale the ladder so its largest |INL| equals this (Δ).
    pub max_inl: Option<f64>,
    pub seed: u64,
    pub levels_file: Option<PathBuf>,
    /// Half-width (Δ) of the uniform error on the levels handed to the
    /// estimator; the converter itself keeps its true levels.
    pub threshold_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalSpec {
    pub basis: String,
    /// Model parameters (Δ).
    pub theta: Vec<f64>,
    pub lambda: f64,
    /// Noise standard deviations to sweep (Δ).
    pub sigma: Vec<f64>,
    /// Record lengths to sweep.
    pub samples: Vec<usize>,
    pub noise: NoiseKind,
    /// Rotate the sine/cosine pair by a random angle in every trial.
    pub random_phase: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frequency {
    Known,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSpec {
    pub epsilon: f64,
    pub guards: [f64; 2],
    /// Hand the true noise level to QBE instead of estimating it.
    pub known_sigma: bool,
    /// Also run the least-squares sine fit.
    pub lse: bool,
    pub frequency: Frequency,
    pub gamma: f64,
    /// Search half-width around the DFT guess; `2/N` when absent.
    pub bracket_halfwidth: Option<f64>,
    pub mse_basis: MseBasis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotivateSpec {
    pub bits: u32,
    /// Noise standard deviation (Δ).
    pub sigma: f64,
    /// Half-width of the level displacement (Δ).
    pub perturbation: f64,
    pub samples: usize,
    pub records: usize,
    /// Signal periods per record.
    pub cycles: f64,
    /// Cosine amplitudes (Δ); the default grid when empty.
    pub amplitudes: Vec<f64>,
    pub quantizer_seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CdfSpec {
    /// Sine amplitudes (Δ) of the records used to check the stability of
    /// the noise estimate. Empty disables the sweep.
    pub sweep_amplitudes: Vec<f64>,
    pub sweep_epsilon: Option<f64>,
    pub sweep_samples: Option<usize>,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            trials: 20,
            seed: 1,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl Default for QuantizerSpec {
    fn default() -> Self {
        Self {
            kind: QuantizerKind::Uniform,
            bits: 8,
            range: [-10.0, 10.0],
            resistor_sigma: 0.02,
            max_inl: None,
            seed: 1,
            levels_file: None,
            threshold_error: 0.0,
        }
    }
}

impl Default for SignalSpec {
    fn default() -> Self {
        Self {
            basis: "sine".into(),
            theta: vec![30.0, 40.0, 0.5],
            lambda: 0.115_554_5,
            sigma: vec![0.5],
            samples: vec![30_000],
            noise: NoiseKind::Gaussian,
            random_phase: false,
        }
    }
}

impl Default for EstimatorSpec {
    fn default() -> Self {
        Self {
            epsilon: 0.0011,
            guards: [0.05, 0.95],
            known_sigma: false,
            lse: true,
            frequency: Frequency::Known,
            gamma: 1e-10,
            bracket_halfwidth: None,
            mse_basis: MseBasis::Subset,
        }
    }
}

impl Default for MotivateSpec {
    fn default() -> Self {
        Self {
            bits: 8,
            sigma: 0.3,
            perturbation: 0.45,
            samples: 10_000,
            records: 100,
            cycles: 10.0,
            amplitudes: Vec::new(),
            quantizer_seed: 1,
        }
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // Relative level files are resolved against the config location.
        if let (Some(file), Some(dir)) = (&cfg.quantizer.levels_file, path.parent()) {
            if file.is_relative() {
                cfg.quantizer.levels_file = Some(dir.join(file));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.trials == 0 {
            return Err(bad("run.trials must be at least 1"));
        }
        let q = &self.quantizer;
        if !(q.range[0] < q.range[1]) {
            return Err(bad("quantizer.range must be increasing"));
        }
        if q.kind == QuantizerKind::File && q.levels_file.is_none() {
            return Err(bad("quantizer.kind = \"file\" needs quantizer.levels_file"));
        }
        if !(0.0..0.5).contains(&q.threshold_error) {
            return Err(bad("quantizer.threshold_error must be in [0, 0.5)"));
        }
        let s = &self.signal;
        let basis = BasisSet::by_name(&s.basis)?;
        if s.theta.len() != basis.len() {
            return Err(bad(format!(
                "signal.theta has {} entries, basis `{}` needs {}",
                s.theta.len(),
                s.basis,
                basis.len()
            )));
        }
        if s.sigma.is_empty() || s.samples.is_empty() {
            return Err(bad("signal.sigma and signal.samples must be non-empty"));
        }
        if s.sigma.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(bad("signal.sigma values must be finite and non-negative"));
        }
        if s.samples.iter().any(|&n| n < 8) {
            return Err(bad("signal.samples values must be at least 8"));
        }
        if !s.lambda.is_finite() {
            return Err(bad("signal.lambda must be finite"));
        }
        let e = &self.estimator;
        if !(e.epsilon > 0.0 && e.epsilon <= 1.0) {
            return Err(bad("estimator.epsilon must be in (0, 1]"));
        }
        Guards::new(e.guards[0], e.guards[1]).map_err(|err| bad(err.to_string()))?;
        if !(e.gamma > 0.0) {
            return Err(bad("estimator.gamma must be positive"));
        }
        let m = &self.motivate;
        if m.records == 0 || m.samples < 8 || !(m.cycles > 0.0) {
            return Err(bad("motivate needs records >= 1, samples >= 8, cycles > 0"));
        }
        if !(0.0..0.5).contains(&m.perturbation) {
            return Err(bad("motivate.perturbation must be in [0, 0.5)"));
        }
        if self.cdf.sweep_epsilon.is_some_and(|v| !(v > 0.0 && v <= 1.0)) {
            return Err(bad("cdf.sweep_epsilon must be in (0, 1]"));
        }
        Ok(())
    }

    /// The converter that produces the codes.
    pub fn build_quantizer(&self) -> Result<QuantizerModel> {
        let q = &self.quantizer;
        let [lo, hi] = q.range;
        match q.kind {
            QuantizerKind::Uniform => make_uniform(q.bits, lo, hi),
            QuantizerKind::Ladder => {
                make_resistor_ladder(q.bits, lo, hi, q.resistor_sigma, q.max_inl, q.seed)
            }
            QuantizerKind::File => QuantizerModel::read(q.levels_file.as_ref().expect("validated")),
        }
    }

    /// The levels the estimator believes in: the true ones, or a corrupted
    /// copy when `threshold_error` is set.
    pub fn believed_quantizer(&self, truth: &QuantizerModel) -> Result<QuantizerModel> {
        perturb_levels(truth, self.quantizer.threshold_error, self.quantizer.seed.wrapping_add(1))
    }

    pub fn basis(&self) -> Result<BasisSet> {
        BasisSet::by_name(&self.signal.basis)
    }

    pub fn qbe_options(&self) -> QbeOptions {
        QbeOptions {
            epsilon: self.estimator.epsilon,
            guards: Guards {
                lo: self.estimator.guards[0],
                hi: self.estimator.guards[1],
            },
            sigma: None,
        }
    }

    pub fn unknown_freq_options(&self) -> UnknownFreqOptions {
        UnknownFreqOptions {
            qbe: self.qbe_options(),
            gamma: self.estimator.gamma,
            bracket_halfwidth: self.estimator.bracket_halfwidth,
            mse_basis: self.estimator.mse_basis,
        }
    }
}
