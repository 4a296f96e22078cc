//! Parametric signal model `x[n] = S[n]^T theta` and simulated acquisition.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantizer::{Code, QuantizerModel};
use crate::rng;

/// Fractional part in `[0, 1)`, also for negative inputs.
pub fn frac(u: f64) -> f64 {
    let f = u - u.floor();
    if f >= 1.0 {
        0.0
    } else {
        f
    }
}

/// `frac(n * lambda)` evaluated with the rounding error of the product
/// carried through, so phases stay accurate for large `n`.
pub fn phase(n: usize, lambda: f64) -> f64 {
    let nf = n as f64;
    let p = nf * lambda;
    let err = nf.mul_add(lambda, -p);
    frac(frac(p) + err)
}

/// Unknown parameters; `sigma` is the additive noise standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub theta: Vec<f64>,
    pub sigma: Option<f64>,
}

impl ParamVector {
    pub fn new(theta: Vec<f64>, sigma: Option<f64>) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::arg("parameter vector must not be empty"));
        }
        if let Some(s) = sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::arg(format!("sigma must be positive, got {s}")));
            }
        }
        Ok(Self { theta, sigma })
    }
}

#[derive(Clone, Copy)]
pub struct BasisFn {
    pub name: &'static str,
    pub eval: fn(f64) -> f64,
}

impl fmt::Debug for BasisFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name)
    }
}

/// Known basis sequences, each a function of the normalized phase `u`.
#[derive(Debug, Clone)]
pub struct BasisSet {
    name: &'static str,
    funcs: Vec<BasisFn>,
    requires_phase: bool,
}

impl BasisSet {
    pub fn name(&self) -> &'static str {
        self.name
    }

    /// Number of basis functions `M`.
    pub fn len(&self) -> usize {
        self.funcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.funcs.is_empty()
    }

    pub fn functions(&self) -> &[BasisFn] {
        &self.funcs
    }

    pub fn requires_phase(&self) -> bool {
        self.requires_phase
    }

    /// Evaluates every basis function at phase `u` into `out`.
    pub fn eval_into(&self, u: f64, out: &mut [f64]) {
        for (o, f) in out.iter_mut().zip(&self.funcs) {
            *o = (f.eval)(u);
        }
    }

    /// Looks a basis up by the name used in config files.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "sine" => Ok(sine_basis()),
            "example" => Ok(example_basis()),
            "constant" => Ok(constant_basis()),
            "cosine" => Ok(cosine_basis()),
            other => Err(Error::Config(format!("unknown basis `{other}`"))),
        }
    }
}

/// `sin(2 pi u)`, `cos(2 pi u)`, `1`: the three-parameter sine model.
pub fn sine_basis() -> BasisSet {
    BasisSet {
        name: "sine",
        funcs: vec![
            BasisFn {
                name: "sin",
                eval: |u| (2.0 * PI * u).sin(),
            },
            BasisFn {
                name: "cos",
                eval: |u| (2.0 * PI * u).cos(),
            },
            BasisFn {
                name: "dc",
                eval: |_| 1.0,
            },
        ],
        requires_phase: true,
    }
}

/// Triangle-like `arccos(cos(2 pi u))` plus `sin(4 pi u)`.
pub fn example_basis() -> BasisSet {
    BasisSet {
        name: "example",
        funcs: vec![
            BasisFn {
                name: "tri",
                eval: |u| (2.0 * PI * u).cos().acos(),
            },
            BasisFn {
                name: "sin2",
                eval: |u| (4.0 * PI * u).sin(),
            },
        ],
        requires_phase: true,
    }
}

/// Single constant sequence, the comparator/DC case.
pub fn constant_basis() -> BasisSet {
    BasisSet {
        name: "constant",
        funcs: vec![BasisFn {
            name: "dc",
            eval: |_| 1.0,
        }],
        requires_phase: false,
    }
}

/// Single `cos(2 pi u)` sequence.
pub fn cosine_basis() -> BasisSet {
    BasisSet {
        name: "cosine",
        funcs: vec![BasisFn {
            name: "cos",
            eval: |u| (2.0 * PI * u).cos(),
        }],
        requires_phase: true,
    }
}

/// `S[n]`: the basis evaluated at phase `frac(n * lambda)`.
pub fn eval_sample_vector(basis: &BasisSet, n: usize, lambda: f64) -> Vec<f64> {
    let mut out = vec![0.0; basis.len()];
    basis.eval_into(phase(n, lambda), &mut out);
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn synth(theta: &[f64], basis: &BasisSet, n: usize, lambda: f64) -> Result<f64> {
    if theta.len() != basis.len() {
        return Err(Error::arg(format!(
            "{} parameters for a basis of size {}",
            theta.len(),
            basis.len()
        )));
    }
    Ok(dot(&eval_sample_vector(basis, n, lambda), theta))
}

/// Noiseless model values for `n = 0..len`.
pub fn synth_sequence(theta: &[f64], basis: &BasisSet, lambda: f64, len: usize) -> Result<Vec<f64>> {
    if theta.len() != basis.len() {
        return Err(Error::arg(format!(
            "{} parameters for a basis of size {}",
            theta.len(),
            basis.len()
        )));
    }
    let mut s = vec![0.0; basis.len()];
    Ok((0..len)
        .map(|n| {
            basis.eval_into(phase(n, lambda), &mut s);
            dot(&s, theta)
        })
        .collect())
}

/// Distribution of the additive input noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    #[default]
    Gaussian,
    /// Zero-mean uniform noise with the requested standard deviation.
    Uniform,
}

/// Quantized output codes of one simulated acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionRecord {
    pub codes: Vec<Code>,
    pub lambda: f64,
    pub seed: u64,
    /// Code count `K` of the quantizer that produced the record.
    pub code_count: usize,
}

impl AcquisitionRecord {
    pub fn new(codes: Vec<Code>, lambda: f64, seed: u64, code_count: usize) -> Result<Self> {
        if codes.is_empty() {
            return Err(Error::arg("record must hold at least one sample"));
        }
        if let Some(c) = codes.iter().find(|&&c| c as usize >= code_count) {
            return Err(Error::arg(format!("code {c} out of range 0..{code_count}")));
        }
        Ok(Self {
            codes,
            lambda,
            seed,
            code_count,
        })
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// `n,code` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(12 * self.codes.len() + 8);
        out.push_str("n,code\n");
        for (n, c) in self.codes.iter().enumerate() {
            out.push_str(&format!("{n},{c}\n"));
        }
        out
    }

    /// Parses `n,code` CSV; metadata comes from the sidecar.
    pub fn from_csv(text: &str, lambda: f64, seed: u64, code_count: usize) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next().map(str::trim) {
            Some("n,code") => {}
            other => return Err(Error::Parse(format!("expected `n,code` header, got {other:?}"))),
        }
        let mut codes = Vec::new();
        for (i, line) in lines.enumerate() {
            let (n, c) = line
                .trim()
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("bad record line `{line}`")))?;
            let n: usize = n.parse().map_err(|_| Error::Parse(format!("bad index `{n}`")))?;
            if n != i {
                return Err(Error::Parse(format!("expected index {i}, found {n}")));
            }
            codes.push(c.parse().map_err(|_| Error::Parse(format!("bad code `{c}`")))?);
        }
        Self::new(codes, lambda, seed, code_count).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Sidecar metadata stored next to a record CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub lambda: f64,
    pub seed: u64,
    pub samples: usize,
    /// Quantizer table file, relative to the sidecar's directory.
    pub quantizer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<String>,
}

impl RecordMeta {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Simulates `codes[n] = Q(S[n]^T theta + eta[n])` with seeded noise.
///
/// Without `sigma` the acquisition is noiseless.
pub fn acquire(
    params: &ParamVector,
    basis: &BasisSet,
    lambda: f64,
    samples: usize,
    q: &QuantizerModel,
    seed: u64,
) -> Result<AcquisitionRecord> {
    acquire_with_noise(params, basis, lambda, samples, q, seed, NoiseKind::Gaussian)
}

pub fn acquire_with_noise(
    params: &ParamVector,
    basis: &BasisSet,
    lambda: f64,
    samples: usize,
    q: &QuantizerModel,
    seed: u64,
    noise: NoiseKind,
) -> Result<AcquisitionRecord> {
    if samples == 0 {
        return Err(Error::arg("record length must be at least 1"));
    }
    let clean = synth_sequence(&params.theta, basis, lambda, samples)?;
    let mut rng = rng::seeded(seed);
    let sigma = params.sigma.unwrap_or(0.0);
    let half_width = sigma * 3f64.sqrt();
    let codes = clean
        .into_iter()
        .map(|x| {
            let eta = match (sigma > 0.0, noise) {
                (false, _) => 0.0,
                (true, NoiseKind::Gaussian) => {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    sigma * z
                }
                (true, NoiseKind::Uniform) => {
                    let u: f64 = rand::Rng::random(&mut rng);
                    half_width * (2.0 * u - 1.0)
                }
            };
            q.quantize(x + eta)
        })
        .collect();
    AcquisitionRecord::new(codes, lambda, seed, q.codes())
}
