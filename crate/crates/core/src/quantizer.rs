//! Memoryless quantizer models.
//!
//! A [`QuantizerModel`] is a monotone staircase described by its `K - 1`
//! transition levels `T_1 < ... < T_{K-1}`. Code `c` is produced for inputs in
//! `[T_c, T_{c+1})`, with `T_0 = -inf` and `T_K = +inf`, so the characteristic
//! saturates at both ends of the range.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Output code of a quantizer.
pub type Code = u32;

const MAX_BITS: u32 = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerModel {
    levels: Vec<f64>,
    v_lo: f64,
    v_hi: f64,
}

impl QuantizerModel {
    /// Builds a model from explicit transition levels.
    ///
    /// Levels must be finite, strictly increasing and lie strictly inside
    /// `(v_lo, v_hi)`.
    pub fn new(levels: Vec<f64>, v_lo: f64, v_hi: f64) -> Result<Self> {
        if !(v_lo.is_finite() && v_hi.is_finite() && v_lo < v_hi) {
            return Err(Error::arg(format!("invalid input range [{v_lo}, {v_hi}]")));
        }
        if levels.is_empty() {
            return Err(Error::arg("a quantizer needs at least one transition level"));
        }
        if let Some(bad) = levels.iter().find(|t| !(t.is_finite() && **t > v_lo && **t < v_hi)) {
            return Err(Error::arg(format!(
                "transition level {bad} outside ({v_lo}, {v_hi})"
            )));
        }
        if let Some(w) = levels.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::arg(format!(
                "transition levels not strictly increasing at T_{}",
                w + 2
            )));
        }
        Ok(Self { levels, v_lo, v_hi })
    }

    /// Transition levels `T_1..T_{K-1}`; `levels()[k - 1] == T_k`.
    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Transition level `T_k` for `1 <= k < K`.
    pub fn level(&self, k: usize) -> f64 {
        self.levels[k - 1]
    }

    /// Number of output codes `K`.
    pub fn codes(&self) -> usize {
        self.levels.len() + 1
    }

    pub fn range(&self) -> (f64, f64) {
        (self.v_lo, self.v_hi)
    }

    /// Nominal quantization step `(v_hi - v_lo) / K`.
    pub fn step(&self) -> f64 {
        (self.v_hi - self.v_lo) / self.codes() as f64
    }

    /// Replaces the transition levels, keeping the input range.
    pub fn with_levels(&self, levels: Vec<f64>) -> Result<Self> {
        Self::new(levels, self.v_lo, self.v_hi)
    }

    /// Ideal model with the same code count and range: levels every
    /// `step()` volts. Reconstructing through it gives the plain code values
    /// a code-domain estimator sees.
    pub fn nominal(&self) -> Self {
        let step = self.step();
        let levels = (1..self.codes()).map(|c| self.v_lo + c as f64 * step).collect();
        Self {
            levels,
            v_lo: self.v_lo,
            v_hi: self.v_hi,
        }
    }

    /// Maps an input voltage to its output code.
    pub fn quantize(&self, x: f64) -> Code {
        self.levels.partition_point(|&t| t <= x) as Code
    }

    /// Voltage assigned to a code: the bin midpoint for interior codes and
    /// half a nominal step beyond the outermost level for the edge codes.
    pub fn reconstruction_value(&self, code: Code) -> Result<f64> {
        let c = code as usize;
        let k = self.codes();
        if c >= k {
            return Err(Error::arg(format!("code {code} out of range 0..{k}")));
        }
        let half = 0.5 * self.step();
        Ok(if c == 0 {
            self.levels[0] - half
        } else if c == k - 1 {
            self.levels[k - 2] + half
        } else {
            0.5 * (self.levels[c - 1] + self.levels[c])
        })
    }

    /// Reconstruction values for a whole code stream.
    pub fn reconstruct(&self, codes: &[Code]) -> Result<Vec<f64>> {
        let table: Vec<f64> = (0..self.codes() as Code)
            .map(|c| self.reconstruction_value(c))
            .collect::<Result<_>>()?;
        codes
            .iter()
            .map(|&c| {
                table
                    .get(c as usize)
                    .copied()
                    .ok_or_else(|| Error::arg(format!("code {c} out of range 0..{}", table.len())))
            })
            .collect()
    }

    /// Plain-text table: a `K v_lo v_hi` header, then one level per line.
    /// Values carry 17 significant digits and parse back bit-exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(24 * self.codes());
        let _ = writeln!(out, "{} {:.16e} {:.16e}", self.codes(), self.v_lo, self.v_hi);
        for t in &self.levels {
            let _ = writeln!(out, "{t:.16e}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty quantizer table".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse(format!("bad header line `{header}`")));
        }
        let k: usize = fields[0]
            .parse()
            .map_err(|_| Error::Parse(format!("bad code count `{}`", fields[0])))?;
        let v_lo = parse_f64(fields[1])?;
        let v_hi = parse_f64(fields[2])?;
        let levels = lines.map(parse_f64).collect::<Result<Vec<_>>>()?;
        if levels.len() + 1 != k {
            return Err(Error::Parse(format!(
                "header declares {k} codes but {} levels follow",
                levels.len()
            )));
        }
        Self::new(levels, v_lo, v_hi).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::Parse(format!("bad number `{s}`")))
}

fn check_bits_range(bits: u32, v_lo: f64, v_hi: f64) -> Result<()> {
    if bits == 0 || bits > MAX_BITS {
        return Err(Error::arg(format!("bits must be in 1..={MAX_BITS}, got {bits}")));
    }
    if !(v_lo.is_finite() && v_hi.is_finite() && v_lo < v_hi) {
        return Err(Error::arg(format!("invalid input range [{v_lo}, {v_hi}]")));
    }
    Ok(())
}

fn uniform_levels(bits: u32, v_lo: f64, v_hi: f64) -> Vec<f64> {
    let k = 1usize << bits;
    let step = (v_hi - v_lo) / k as f64;
    (1..k).map(|c| v_lo + c as f64 * step).collect()
}

/// Ideal quantizer with `2^bits` codes evenly spread over `[v_lo, v_hi]`.
pub fn make_uniform(bits: u32, v_lo: f64, v_hi: f64) -> Result<QuantizerModel> {
    check_bits_range(bits, v_lo, v_hi)?;
    QuantizerModel::new(uniform_levels(bits, v_lo, v_hi), v_lo, v_hi)
}

/// Resistor-string converter with Gaussian resistor mismatch.
///
/// Each of the `2^bits` unit resistors is drawn from `Normal(1, sigma_rel^2)`
/// (non-positive draws are redrawn) and the levels are the normalized
/// cumulative sums. When `target_max_inl` is given, the deviations from the
/// ideal grid are scaled by one common factor so the largest least-squares INL
/// magnitude equals the target exactly.
pub fn make_resistor_ladder(
    bits: u32,
    v_lo: f64,
    v_hi: f64,
    resistance_sigma_rel: f64,
    target_max_inl: Option<f64>,
    seed: u64,
) -> Result<QuantizerModel> {
    check_bits_range(bits, v_lo, v_hi)?;
    if !(resistance_sigma_rel >= 0.0 && resistance_sigma_rel.is_finite()) {
        return Err(Error::arg("resistance sigma must be finite and non-negative"));
    }
    if let Some(t) = target_max_inl {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::arg("target INL must be positive"));
        }
    }
    if resistance_sigma_rel == 0.0 {
        if target_max_inl.is_some() {
            return Err(Error::Generation(
                "a matched ladder has no INL to rescale".into(),
            ));
        }
        return make_uniform(bits, v_lo, v_hi);
    }

    let k = 1usize << bits;
    let dist = Normal::new(1.0, resistance_sigma_rel)
        .map_err(|e| Error::arg(e.to_string()))?;
    let mut rng = rng::seeded(seed);
    let resistors: Vec<f64> = (0..k)
        .map(|_| loop {
            let r: f64 = dist.sample(&mut rng);
            if r > 0.0 {
                break r;
            }
        })
        .collect();
    let total: f64 = resistors.iter().sum();
    let span = v_hi - v_lo;
    let mut acc = 0.0;
    let raw: Vec<f64> = resistors[..k - 1]
        .iter()
        .map(|r| {
            acc += r;
            v_lo + span * acc / total
        })
        .collect();

    let Some(target) = target_max_inl else {
        return QuantizerModel::new(raw, v_lo, v_hi).map_err(|e| Error::Generation(e.to_string()));
    };

    let ideal = uniform_levels(bits, v_lo, v_hi);
    let raw_model = QuantizerModel::new(raw.clone(), v_lo, v_hi)
        .map_err(|e| Error::Generation(e.to_string()))?;
    let current = compute_inl(&raw_model)?.max_abs();
    if current == 0.0 {
        return Err(Error::Generation("ladder realization has zero INL".into()));
    }
    let scale = target / current;
    let levels: Vec<f64> = ideal
        .iter()
        .zip(&raw)
        .map(|(u, t)| u + scale * (t - u))
        .collect();
    QuantizerModel::new(levels, v_lo, v_hi).map_err(|e| {
        Error::Generation(format!("INL rescaling by {scale:.3} broke the model: {e}"))
    })
}

const MAX_REDRAWS: usize = 10_000;

/// Displaces every level by an independent `Uniform[-a*step, a*step]` draw.
///
/// A draw that would not clear the previous (already displaced) level is
/// redrawn, so the result is always strictly increasing.
pub fn perturb_levels(q: &QuantizerModel, amplitude: f64, seed: u64) -> Result<QuantizerModel> {
    if !(amplitude >= 0.0) {
        return Err(Error::arg("perturbation amplitude must be non-negative"));
    }
    if amplitude >= 0.5 {
        return Err(Error::arg(
            "perturbation amplitude must be below half a step to keep the grid monotone",
        ));
    }
    if amplitude == 0.0 {
        return Ok(q.clone());
    }
    let half_width = amplitude * q.step();
    let (v_lo, v_hi) = q.range();
    let mut rng = rng::seeded(seed);
    let mut out = Vec::with_capacity(q.levels.len());
    let mut prev = v_lo;
    for (i, &t) in q.levels.iter().enumerate() {
        let mut attempts = 0;
        let moved = loop {
            let cand = t + rng.random_range(-half_width..=half_width);
            if cand > prev && cand < v_hi {
                break cand;
            }
            attempts += 1;
            if attempts >= MAX_REDRAWS {
                return Err(Error::Generation(format!(
                    "could not place T_{} above {prev}",
                    i + 1
                )));
            }
        };
        out.push(moved);
        prev = moved;
    }
    q.with_levels(out)
}

/// Reference line used to normalize INL.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InlFit {
    /// Least-squares straight line through all transition levels.
    LeastSquares,
}

/// Integral nonlinearity per transition level, in units of the nominal step.
#[derive(Debug, Clone, PartialEq)]
pub struct InlTable {
    /// `values[k - 1]` is the INL at `T_k`.
    pub values: Vec<f64>,
    /// Slope of the reference line, volts per code.
    pub gain: f64,
    /// Reference line value at code 0, volts.
    pub offset: f64,
    pub fit: InlFit,
}

impl InlTable {
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// INL relative to the least-squares line of `T_c` against `c`.
pub fn compute_inl(q: &QuantizerModel) -> Result<InlTable> {
    if q.codes() < 4 {
        return Err(Error::arg("INL needs at least four codes"));
    }
    let n = q.levels.len() as f64;
    let c_mean = (1.0 + n) / 2.0;
    let t_mean = q.levels.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, t) in q.levels.iter().enumerate() {
        let dc = (i + 1) as f64 - c_mean;
        sxy += dc * (t - t_mean);
        sxx += dc * dc;
    }
    let gain = sxy / sxx;
    let offset = t_mean - gain * c_mean;
    let step = q.step();
    let values = q
        .levels
        .iter()
        .enumerate()
        .map(|(i, t)| (t - (offset + gain * (i + 1) as f64)) / step)
        .collect();
    Ok(InlTable {
        values,
        gain,
        offset,
        fit: InlFit::LeastSquares,
    })
}

/// A converter that can be driven with a DC input and read back.
pub trait SampleSource {
    fn sample(&mut self, volts: f64) -> Code;
}

impl<F: FnMut(f64) -> Code> SampleSource for F {
    fn sample(&mut self, volts: f64) -> Code {
        self(volts)
    }
}

/// Simulated converter: a [`QuantizerModel`] preceded by additive Gaussian noise.
#[derive(Debug, Clone)]
pub struct NoisyAdc {
    model: QuantizerModel,
    noise_sigma: f64,
    rng: Rng,
}

impl NoisyAdc {
    pub fn new(model: QuantizerModel, noise_sigma: f64, seed: u64) -> Result<Self> {
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::arg("noise sigma must be finite and non-negative"));
        }
        Ok(Self {
            model,
            noise_sigma,
            rng: rng::seeded(seed),
        })
    }
}

impl SampleSource for NoisyAdc {
    fn sample(&mut self, volts: f64) -> Code {
        let noise = if self.noise_sigma > 0.0 {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            self.noise_sigma * z
        } else {
            0.0
        };
        self.model.quantize(volts + noise)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServoConfig {
    pub samples_per_step: usize,
    /// Final bisection interval width, volts.
    pub tolerance: f64,
}

fn fraction_at_or_above(adc: &mut impl SampleSource, v: f64, target: Code, n: usize) -> f64 {
    let hits = (0..n).filter(|_| adc.sample(v) >= target).count();
    hits as f64 / n as f64
}

/// Locates the input at which `target_code` (or higher) is produced half of
/// the time, by stochastic bisection on the mean comparator output.
pub fn servo_loop_measure(
    adc: &mut impl SampleSource,
    search_range: (f64, f64),
    target_code: Code,
    cfg: ServoConfig,
) -> Result<f64> {
    let (mut lo, mut hi) = search_range;
    if !(lo < hi) {
        return Err(Error::arg("servo search range must satisfy lo < hi"));
    }
    if !(cfg.tolerance > 0.0) || cfg.samples_per_step == 0 {
        return Err(Error::arg("servo tolerance and sample count must be positive"));
    }
    let n = cfg.samples_per_step;
    if fraction_at_or_above(adc, hi, target_code, n) == 0.0 {
        return Err(Error::Range(format!(
            "code {target_code} never reached below {hi}"
        )));
    }
    if fraction_at_or_above(adc, lo, target_code, n) == 1.0 {
        return Err(Error::Range(format!(
            "code {target_code} already produced at {lo}"
        )));
    }
    while hi - lo > cfg.tolerance {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if fraction_at_or_above(adc, mid, target_code, n) >= 0.5 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Measures every transition level of a converter whose nominal range is
/// given by `nominal`, returning the measured model.
pub fn servo_calibrate(
    adc: &mut impl SampleSource,
    nominal: &QuantizerModel,
    cfg: ServoConfig,
) -> Result<QuantizerModel> {
    let range = nominal.range();
    let levels = (1..nominal.codes() as Code)
        .map(|code| servo_loop_measure(adc, range, code, cfg))
        .collect::<Result<Vec<_>>>()?;
    nominal.with_levels(levels)
}
