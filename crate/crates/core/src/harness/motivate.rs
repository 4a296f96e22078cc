//! Amplitude of a cosine estimated by the sine fit behind a rounding
//! quantizer, with ideal and with displaced transition levels.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::ScenarioConfig;
use crate::baseline::sinefit3;
use crate::error::Result;
use crate::quantizer::{make_uniform, perturb_levels};
use crate::rng::derive_seed;
use crate::signal::{acquire, cosine_basis, ParamVector};

/// Amplitudes (Δ) `2^(b-2) f + 1/2` for `f = 0.25, 0.375, ..., 1.875`.
pub fn default_amplitudes(bits: u32) -> Vec<f64> {
    let scale = 2f64.powi(bits as i32 - 2);
    (0..14).map(|j| scale * (0.25 + 0.125 * j as f64) + 0.5).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotivateRow {
    /// Cosine amplitude (Δ).
    pub amplitude: f64,
    /// `|mean relative error|` over the records, ideal levels.
    pub e_uniform: f64,
    /// Same with displaced levels.
    pub e_nonuniform: f64,
    /// Mean of `|relative error|`, ideal levels.
    pub mae_uniform: f64,
    pub mae_nonuniform: f64,
}

impl MotivateRow {
    pub fn ratio(&self) -> f64 {
        self.e_nonuniform / self.e_uniform
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotivateResult {
    pub rows: Vec<MotivateRow>,
}

impl MotivateResult {
    /// Share of amplitudes where the displaced levels do worse.
    pub fn fraction_worse(&self) -> f64 {
        let n = self.rows.iter().filter(|r| r.e_nonuniform > r.e_uniform).count();
        n as f64 / self.rows.len() as f64
    }

    pub fn max_ratio(&self) -> f64 {
        self.rows.iter().map(|r| r.ratio()).fold(f64::NEG_INFINITY, f64::max)
    }

    /// `amplitude,e_uniform,e_nonuniform,ratio,mae_uniform,mae_nonuniform`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("amplitude,e_uniform,e_nonuniform,ratio,mae_uniform,mae_nonuniform\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}\n",
                r.amplitude,
                r.e_uniform,
                r.e_nonuniform,
                r.ratio(),
                r.mae_uniform,
                r.mae_nonuniform
            ));
        }
        out
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        std::fs::create_dir_all(dir.as_ref())?;
        let p = dir.as_ref().join("motivate.csv");
        std::fs::write(&p, self.to_csv())?;
        Ok(p)
    }
}

/// Both chains see the same noise realization in every record; only the
/// transition levels differ. Codes are mapped back through the ideal grid
/// in both cases, as a code-domain estimator would.
pub fn run_motivating_example(cfg: &ScenarioConfig) -> Result<MotivateResult> {
    cfg.validate()?;
    let m = &cfg.motivate;
    let step = 2.0 / 2f64.powi(m.bits as i32);
    let ideal = make_uniform(m.bits, -1.0 - 0.5 * step, 1.0 - 0.5 * step)?;
    let displaced = perturb_levels(&ideal, m.perturbation, m.quantizer_seed)?;
    let lambda = m.cycles / m.samples as f64;
    let amplitudes = if m.amplitudes.is_empty() {
        default_amplitudes(m.bits)
    } else {
        m.amplitudes.clone()
    };
    let basis = cosine_basis();

    let rows = amplitudes
        .par_iter()
        .map(|&a| -> Result<MotivateRow> {
            let amp = a * step;
            let params = ParamVector::new(vec![amp], Some(m.sigma * step))?;
            let (mut sum_u, mut sum_n, mut abs_u, mut abs_n) = (0.0, 0.0, 0.0, 0.0);
            for r in 0..m.records {
                let seed = derive_seed(cfg.run.seed, &[a.to_bits(), r as u64]);
                let mut rel = [0.0; 2];
                for (slot, q) in rel.iter_mut().zip([&ideal, &displaced]) {
                    let rec = acquire(&params, &basis, lambda, m.samples, q, seed)?;
                    let x = ideal.reconstruct(&rec.codes)?;
                    *slot = (sinefit3(&x, lambda)?.amplitude() - amp) / amp;
                }
                sum_u += rel[0];
                sum_n += rel[1];
                abs_u += rel[0].abs();
                abs_n += rel[1].abs();
            }
            let k = m.records as f64;
            Ok(MotivateRow {
                amplitude: a,
                e_uniform: (sum_u / k).abs(),
                e_nonuniform: (sum_n / k).abs(),
                mae_uniform: abs_u / k,
                mae_nonuniform: abs_n / k,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MotivateResult { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid() {
        let g = default_amplitudes(8);
        assert_eq!(g.len(), 14);
        assert_eq!(g[0], 16.5);
        assert_eq!(g[6], 64.5);
        assert_eq!(*g.last().unwrap(), 120.5);
    }

    #[test]
    fn zero_perturbation_gives_unit_ratio() {
        let mut cfg = ScenarioConfig::default();
        cfg.motivate.perturbation = 0.0;
        cfg.motivate.records = 3;
        cfg.motivate.samples = 2000;
        cfg.motivate.amplitudes = vec![20.5, 40.5];
        let r = run_motivating_example(&cfg).unwrap();
        for row in &r.rows {
            assert_eq!(row.ratio(), 1.0);
        }
        assert_eq!(r.fraction_worse(), 0.0);
        assert_eq!(r.to_csv(), run_motivating_example(&cfg).unwrap().to_csv());
    }
}
