//! Least-squares sine fitting on reconstructed code values, and the DFT
//! frequency guess that seeds unknown-frequency fits.

use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::estimator::lstsq;
use crate::search::{golden_section, SearchTrace};
use crate::signal::{eval_sample_vector, frac, sine_basis};

#[derive(Debug, Clone, PartialEq)]
pub struct SineFitResult {
    pub a_sin: f64,
    pub a_cos: f64,
    pub dc: f64,
    /// Frequency ratio of the fit: the input for the three-parameter fit,
    /// the refined value for the four-parameter one.
    pub lambda: f64,
    pub residual_rms: f64,
}

impl SineFitResult {
    pub fn amplitude(&self) -> f64 {
        self.a_sin.hypot(self.a_cos)
    }

    /// `[a_sin, a_cos, dc]`, in the order of the sine basis.
    pub fn theta(&self) -> [f64; 3] {
        [self.a_sin, self.a_cos, self.dc]
    }

    /// `name,value` CSV with the same parameter names as a QBE fit.
    pub fn to_csv(&self) -> String {
        format!(
            "name,value\nsin,{:.17e}\ncos,{:.17e}\ndc,{:.17e}\nlambda,{:.17e}\nresidual_rms,{:.17e}\n",
            self.a_sin, self.a_cos, self.dc, self.lambda, self.residual_rms
        )
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Three-parameter fit of `a sin(2 pi <n lambda>) + b cos(2 pi <n lambda>) + c`.
pub fn sinefit3(samples: &[f64], lambda: f64) -> Result<SineFitResult> {
    let n = samples.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!("{n} samples, need at least 3")));
    }
    let f = frac(lambda);
    if f == 0.0 || f == 0.5 {
        return Err(Error::SingularSystem {
            condition: f64::INFINITY,
        });
    }
    let basis = sine_basis();
    let h: Vec<f64> = (0..n).flat_map(|i| eval_sample_vector(&basis, i, lambda)).collect();
    let sol = lstsq(&h, n, 3, samples)?;
    Ok(SineFitResult {
        a_sin: sol.coef[0],
        a_cos: sol.coef[1],
        dc: sol.coef[2],
        lambda,
        residual_rms: sol.residual_norm / (n as f64).sqrt(),
    })
}

/// Four-parameter fit: golden-section search of `lambda` over
/// `lambda0 ± 1/N`, minimizing the three-parameter residual power, until
/// the bracket is narrower than `gamma`.
pub fn sinefit4(samples: &[f64], lambda0: f64, gamma: f64) -> Result<SineFitResult> {
    let w = 1.0 / samples.len().max(1) as f64;
    sinefit4_in(samples, (lambda0 - w, lambda0 + w), gamma).map(|(fit, _)| fit)
}

/// [`sinefit4`] over an explicit bracket, also returning the search trace.
pub fn sinefit4_in(
    samples: &[f64],
    bracket: (f64, f64),
    gamma: f64,
) -> Result<(SineFitResult, SearchTrace)> {
    let (lambda, trace) = golden_section(
        |l| sinefit3(samples, l).map(|f| f.residual_rms * f.residual_rms),
        bracket,
        gamma,
    )?;
    Ok((sinefit3(samples, lambda)?, trace))
}

/// Peak of the DFT magnitude over bins `1..=N/2`, refined by a parabola
/// through the log-magnitudes of the peak and its neighbours. Returns the
/// frequency ratio `bin / N`.
pub fn dft_frequency_guess(samples: &[f64]) -> Result<f64> {
    let n = samples.len();
    if n < 8 {
        return Err(Error::InsufficientData(format!("{n} samples, need at least 8")));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&x| Complex::new(x - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mag: Vec<f64> = buf.iter().map(|c| c.norm()).collect();

    let (k, peak) = (1..=n / 2)
        .map(|k| (k, mag[k]))
        .fold((0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
    let scale: f64 = samples.iter().map(|x| x.abs()).sum();
    if peak <= 1e-12 * scale || peak == 0.0 {
        return Err(Error::NoPeak);
    }
    let lo = mag[k - 1];
    let hi = mag[(k + 1) % n];
    if lo < 1e-10 * peak || hi < 1e-10 * peak {
        return Ok(k as f64 / n as f64);
    }
    let (a, b, c) = (lo.ln(), peak.ln(), hi.ln());
    let den = a - 2.0 * b + c;
    let delta = if den < 0.0 { 0.5 * (a - c) / den } else { 0.0 };
    Ok((k as f64 + delta.clamp(-0.5, 0.5)) / n as f64)
}
