//! Pointwise recovery of the input-noise distribution, and the stability of
//! the noise estimate across signal amplitudes.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::estimator::{estimate_noise_pdf, norm_cdf, norm_pdf, qbe_fit, FitResult};
use crate::rng::derive_seed;
use crate::signal::{acquire_with_noise, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdfRow {
    pub abscissa: f64,
    pub p_hat: f64,
    /// Standard normal CDF at the abscissa.
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CdfResult {
    pub fit: FitResult,
    pub cdf: Vec<CdfRow>,
    /// `(abscissa, density, standard normal density)`.
    pub pdf: Vec<(f64, f64, f64)>,
    /// `(amplitude, sigma_hat)`, both in Δ.
    pub sigma_sweep: Vec<(f64, f64)>,
}

impl CdfResult {
    pub fn max_deviation(&self) -> f64 {
        self.cdf.iter().map(|r| (r.p_hat - r.phi).abs()).fold(0.0, f64::max)
    }

    /// Mean and sample standard deviation of the swept noise estimates.
    pub fn sigma_stats(&self) -> Option<(f64, f64)> {
        let n = self.sigma_sweep.len();
        if n < 2 {
            return None;
        }
        let mean = self.sigma_sweep.iter().map(|s| s.1).sum::<f64>() / n as f64;
        let var = self.sigma_sweep.iter().map(|s| (s.1 - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Some((mean, var.sqrt()))
    }

    pub fn cdf_csv(&self) -> String {
        let mut out = String::from("abscissa,p_hat,phi\n");
        for r in &self.cdf {
            out.push_str(&format!("{:.9e},{:.9e},{:.9e}\n", r.abscissa, r.p_hat, r.phi));
        }
        out
    }

    pub fn pdf_csv(&self) -> String {
        let mut out = String::from("abscissa,density,phi\n");
        for (x, d, p) in &self.pdf {
            out.push_str(&format!("{x:.9e},{d:.9e},{p:.9e}\n"));
        }
        out
    }

    pub fn sigma_csv(&self) -> String {
        let mut out = String::from("amplitude,sigma_hat\n");
        for (a, s) in &self.sigma_sweep {
            out.push_str(&format!("{a},{s:.9e}\n"));
        }
        out
    }

    /// Writes `cdf.csv`, `pdf.csv` and, after a sweep, `sigma.csv`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut files = vec![
            (dir.join("cdf.csv"), self.cdf_csv()),
            (dir.join("pdf.csv"), self.pdf_csv()),
        ];
        if !self.sigma_sweep.is_empty() {
            files.push((dir.join("sigma.csv"), self.sigma_csv()));
        }
        for (p, text) in &files {
            std::fs::write(p, text)?;
        }
        Ok(files.into_iter().map(|f| f.0).collect())
    }
}

/// One QBE fit with unknown noise level at the first `(sigma, N)` of the
/// signal section, reported as CDF and density points. Each amplitude in
/// `cdf.sweep_amplitudes` then gets its own record and noise estimate.
pub fn run_cdf_experiment(cfg: &ScenarioConfig) -> Result<CdfResult> {
    cfg.validate()?;
    let truth = cfg.build_quantizer()?;
    let believed = cfg.believed_quantizer(&truth)?;
    let step = truth.step();
    let basis = cfg.basis()?;
    let s = &cfg.signal;
    let sigma = s.sigma[0] * step;
    if sigma <= 0.0 {
        return Err(Error::Config("the noise experiment needs signal.sigma > 0".into()));
    }
    let samples = s.samples[0];
    let opts = cfg.qbe_options();

    let theta: Vec<f64> = s.theta.iter().map(|v| v * step).collect();
    let params = ParamVector::new(theta.clone(), Some(sigma))?;
    let rec = acquire_with_noise(&params, &basis, s.lambda, samples, &truth, derive_seed(cfg.run.seed, &[0]), s.noise)?;
    let fit = qbe_fit(&rec, &basis, s.lambda, &believed, &opts)?;
    let cdf = fit
        .cdf_points
        .iter()
        .map(|&(x, p)| CdfRow {
            abscissa: x,
            p_hat: p,
            phi: norm_cdf(x),
        })
        .collect();
    let pdf = estimate_noise_pdf(&fit.cdf_points)?
        .into_iter()
        .map(|(x, d)| (x, d, norm_pdf(x)))
        .collect();

    let amps = &cfg.cdf.sweep_amplitudes;
    let sigma_sweep = if amps.is_empty() {
        Vec::new()
    } else {
        if basis.name() != "sine" {
            return Err(Error::Config("the amplitude sweep needs the sine basis".into()));
        }
        let norm = theta[0].hypot(theta[1]);
        let (u, v) = if norm > 0.0 { (theta[0] / norm, theta[1] / norm) } else { (0.0, 1.0) };
        let mut sweep_opts = opts;
        sweep_opts.epsilon = cfg.cdf.sweep_epsilon.unwrap_or(opts.epsilon);
        let n = cfg.cdf.sweep_samples.unwrap_or(samples);
        amps.par_iter()
            .enumerate()
            .map(|(j, &a)| -> Result<(f64, f64)> {
                let th = vec![a * step * u, a * step * v, theta[2]];
                let p = ParamVector::new(th, Some(sigma))?;
                let seed = derive_seed(cfg.run.seed, &[1, j as u64]);
                let rec = acquire_with_noise(&p, &basis, s.lambda, n, &truth, seed, s.noise)?;
                let f = qbe_fit(&rec, &basis, s.lambda, &believed, &sweep_opts)?;
                Ok((a, f.noise_sigma / step))
            })
            .collect::<Result<Vec<_>>>()?
    };
    Ok(CdfResult {
        fit,
        cdf,
        pdf,
        sigma_sweep,
    })
}
