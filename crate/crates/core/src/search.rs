//! Frequency search for QBE when the ratio `lambda` is unknown.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baseline::dft_frequency_guess;
use crate::error::{Error, Result};
use crate::estimator::{qbe_fit_partitioned, FitResult, QbeOptions};
use crate::partition::{async_partition, average_basis, AveragedBasis, IndexPartition};
use crate::quantizer::QuantizerModel;
use crate::signal::{eval_sample_vector, AcquisitionRecord, BasisSet};

/// Shrink factor of the golden-section bracket, `(sqrt(5) - 1) / 2`.
pub const GOLDEN: f64 = 0.618_033_988_749_894_9;

const MAX_ITER: usize = 200;

/// Model value used for sample `n` in the experimental MSE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MseBasis {
    /// Averaged basis of the subset containing `n`.
    #[default]
    Subset,
    /// The basis evaluated at `n` itself.
    Raw,
}

/// Record of one golden-section search.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SearchTrace {
    /// Objective evaluations in call order, with the iteration that asked
    /// for them.
    pub evaluations: Vec<(usize, f64, f64)>,
    /// Bracket width after each iteration, starting with the initial one.
    pub widths: Vec<f64>,
    pub iterations: usize,
}

impl SearchTrace {
    pub fn final_width(&self) -> f64 {
        self.widths.last().copied().unwrap_or(0.0)
    }

    /// `iter,lambda,mse` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,lambda,mse\n");
        for (i, l, m) in &self.evaluations {
            out.push_str(&format!("{i},{l:.17e},{m:.17e}\n"));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Minimizes `objective` over `[lo, hi]`, stopping once the bracket is
/// narrower than `gamma`. Returns the final bracket midpoint.
///
/// Evaluations are memoized on the exact argument and never leave the
/// initial bracket.
pub fn golden_section<F>(mut objective: F, bracket: (f64, f64), gamma: f64) -> Result<(f64, SearchTrace)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut lo, mut hi) = bracket;
    if !(gamma > 0.0) {
        return Err(Error::arg(format!("stopping width must be positive, got {gamma}")));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::arg(format!("invalid bracket [{lo}, {hi}]")));
    }
    let mut trace = SearchTrace {
        widths: vec![hi - lo],
        ..Default::default()
    };
    let mut memo: HashMap<u64, f64> = HashMap::new();
    let mut eval = |x: f64, iter: usize, trace: &mut SearchTrace| -> Result<f64> {
        if let Some(&v) = memo.get(&x.to_bits()) {
            return Ok(v);
        }
        let v = objective(x)?;
        memo.insert(x.to_bits(), v);
        trace.evaluations.push((iter, x, v));
        Ok(v)
    };

    if hi - lo < gamma {
        return Ok((0.5 * (lo + hi), trace));
    }
    let mut c = hi - GOLDEN * (hi - lo);
    let mut d = lo + GOLDEN * (hi - lo);
    let mut fc = eval(c, 0, &mut trace)?;
    let mut fd = eval(d, 0, &mut trace)?;
    while hi - lo >= gamma {
        if trace.iterations == MAX_ITER {
            return Err(Error::Convergence(format!(
                "bracket still {:.3e} wide after {MAX_ITER} iterations",
                hi - lo
            )));
        }
        trace.iterations += 1;
        let it = trace.iterations;
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - GOLDEN * (hi - lo);
            fc = eval(c, it, &mut trace)?;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + GOLDEN * (hi - lo);
            fd = eval(d, it, &mut trace)?;
        }
        let w = hi - lo;
        if w >= *trace.widths.last().unwrap() {
            return Err(Error::Convergence(format!(
                "bracket stopped shrinking at width {w:.3e}"
            )));
        }
        trace.widths.push(w);
    }
    Ok((0.5 * (lo + hi), trace))
}

/// Mean squared difference between the fitted model and the reconstructed
/// code values, `(1/N) sum (S̄[n]^T theta - x_q[n])^2`.
///
/// With [`MseBasis::Subset`] the indices are grouped with bin width
/// `epsilon` and each sample takes its subset's averaged basis.
pub fn mse_exp(
    theta: &[f64],
    basis: &BasisSet,
    lambda: f64,
    rec: &AcquisitionRecord,
    q: &QuantizerModel,
    reading: MseBasis,
    epsilon: f64,
) -> Result<f64> {
    check_theta(theta, basis)?;
    let xq = q.reconstruct(&rec.codes)?;
    match reading {
        MseBasis::Raw => Ok(mse_raw(theta, basis, lambda, &xq)),
        MseBasis::Subset => {
            let part = async_partition(rec.len(), lambda, epsilon)?;
            let avg = average_basis(&part, basis, lambda);
            Ok(mse_subset(theta, &part, &avg, &xq))
        }
    }
}

fn check_theta(theta: &[f64], basis: &BasisSet) -> Result<()> {
    if theta.len() != basis.len() {
        return Err(Error::arg(format!(
            "{} parameters for a {}-function basis",
            theta.len(),
            basis.len()
        )));
    }
    Ok(())
}

fn mse_raw(theta: &[f64], basis: &BasisSet, lambda: f64, xq: &[f64]) -> f64 {
    let sum: f64 = xq
        .iter()
        .enumerate()
        .map(|(n, x)| {
            let s = eval_sample_vector(basis, n, lambda);
            let m: f64 = s.iter().zip(theta).map(|(a, b)| a * b).sum();
            (m - x).powi(2)
        })
        .sum();
    sum / xq.len() as f64
}

fn mse_subset(theta: &[f64], part: &IndexPartition, avg: &AveragedBasis, xq: &[f64]) -> f64 {
    let pred = avg.predict(theta);
    let sum: f64 = part
        .subsets()
        .iter()
        .zip(&pred)
        .flat_map(|(s, &m)| s.iter().map(move |&n| (m - xq[n]).powi(2)))
        .sum();
    sum / xq.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnknownFreqOptions {
    pub qbe: QbeOptions,
    /// Search stops once the bracket is narrower than this.
    pub gamma: f64,
    /// Half-width of the search bracket around the DFT guess; `2/N` when
    /// absent.
    pub bracket_halfwidth: Option<f64>,
    pub mse_basis: MseBasis,
}

impl Default for UnknownFreqOptions {
    fn default() -> Self {
        Self {
            qbe: QbeOptions::default(),
            gamma: 1e-10,
            bracket_halfwidth: None,
            mse_basis: MseBasis::Subset,
        }
    }
}

/// QBE with `lambda` found by golden-section search on the experimental
/// MSE, starting from the DFT guess of the reconstructed record.
pub fn qbe_fit_unknown_freq(
    rec: &AcquisitionRecord,
    basis: &BasisSet,
    q: &QuantizerModel,
    opts: &UnknownFreqOptions,
) -> Result<(FitResult, SearchTrace)> {
    let xq = q.reconstruct(&rec.codes)?;
    let lambda0 = dft_frequency_guess(&xq)?;
    let w = opts.bracket_halfwidth.unwrap_or(2.0 / rec.len() as f64);
    if !(w > 0.0) {
        return Err(Error::arg(format!("bracket half-width must be positive, got {w}")));
    }
    let fit_at = |lambda: f64| -> Result<(FitResult, f64)> {
        let part = async_partition(rec.len(), lambda, opts.qbe.epsilon)?;
        let (fit, avg) = qbe_fit_partitioned(rec, basis, lambda, q, &opts.qbe, &part)?;
        let mse = match opts.mse_basis {
            MseBasis::Subset => mse_subset(&fit.theta_hat, &part, &avg, &xq),
            MseBasis::Raw => mse_raw(&fit.theta_hat, basis, lambda, &xq),
        };
        Ok((fit, mse))
    };
    let (lambda, trace) = golden_section(|l| fit_at(l).map(|r| r.1), (lambda0 - w, lambda0 + w), opts.gamma)?;
    Ok((fit_at(lambda)?.0, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::qbe_fit;
    use crate::quantizer::make_uniform;
    use crate::signal::{acquire, constant_basis, sine_basis, ParamVector};

    #[test]
    fn parabola_minimum() {
        let (x, t) = golden_section(|x| Ok((x - 2.0) * (x - 2.0)), (0.0, 5.0), 1e-8).unwrap();
        assert!((x - 2.0).abs() < 1e-7);
        assert!(t.final_width() < 1e-8);
        // Geometric shrinkage: ceil(log(gamma / width) / log(GOLDEN)).
        let expect = ((1e-8f64 / 5.0).ln() / GOLDEN.ln()).ceil() as usize;
        assert!(t.iterations.abs_diff(expect) <= 1, "{} vs {expect}", t.iterations);
        assert_eq!(t.evaluations.len(), t.iterations + 2);
    }

    #[test]
    fn tight_bracket_returns_midpoint() {
        let (x, t) = golden_section(|_| panic!("not evaluated"), (1.0, 1.0 + 1e-12), 1e-9).unwrap();
        assert_eq!(x, 1.0 + 0.5e-12);
        assert_eq!(t.iterations, 0);
    }

    #[test]
    fn argument_errors() {
        let f = |x: f64| Ok(x);
        assert!(golden_section(f, (0.0, 1.0), 0.0).is_err());
        assert!(golden_section(f, (0.0, 1.0), -1.0).is_err());
        assert!(golden_section(f, (1.0, 0.0), 0.1).is_err());
    }

    #[test]
    fn stays_in_bracket_and_widths_shrink() {
        let (_, t) = golden_section(|x| Ok((x - 9.0).abs()), (-1.0, 3.0), 1e-6).unwrap();
        for (_, x, _) in &t.evaluations {
            assert!((-1.0..=3.0).contains(x));
        }
        assert!(t.widths.windows(2).all(|w| w[1] < w[0]));
        let csv = t.to_csv();
        assert_eq!(csv.lines().next(), Some("iter,lambda,mse"));
        assert_eq!(csv.lines().count(), t.evaluations.len() + 1);
    }

    #[test]
    fn objective_errors_propagate() {
        let r = golden_section(|_| Err(Error::NoPeak), (0.0, 1.0), 0.1);
        assert!(matches!(r, Err(Error::NoPeak)));
    }

    #[test]
    fn mse_examples() {
        let q = make_uniform(4, -1.0, 1.0).unwrap();
        let v = q.reconstruction_value(9).unwrap();
        let rec = AcquisitionRecord::new(vec![9; 40], 0.1, 0, 16).unwrap();
        for reading in [MseBasis::Raw, MseBasis::Subset] {
            let m = mse_exp(&[v], &constant_basis(), 0.1, &rec, &q, reading, 0.01).unwrap();
            assert!(m.abs() < 1e-30);
            let m = mse_exp(&[0.3], &constant_basis(), 0.1, &rec, &q, reading, 0.01).unwrap();
            assert!((m - (0.3 - v).powi(2)).abs() < 1e-15);
        }
        assert!(mse_exp(&[0.3, 0.1], &constant_basis(), 0.1, &rec, &q, MseBasis::Raw, 0.01).is_err());
    }

    #[test]
    fn mse_of_truth_is_quantization_noise_power() {
        let q = make_uniform(12, -1.0, 1.0).unwrap();
        let d = q.step();
        let lambda = 0.1155545;
        let theta = [0.6, 0.7, 0.01];
        let n = 50_000;
        let p = ParamVector::new(theta.to_vec(), None).unwrap();
        let rec = acquire(&p, &sine_basis(), lambda, n, &q, 0).unwrap();
        // Oracle: brute-force mean of the midpoint error over the record.
        let x = crate::signal::synth_sequence(&theta, &sine_basis(), lambda, n).unwrap();
        let brute: f64 = x
            .iter()
            .map(|&v| (q.reconstruction_value(q.quantize(v)).unwrap() - v).powi(2))
            .sum::<f64>()
            / n as f64;
        let m = mse_exp(&theta, &sine_basis(), lambda, &rec, &q, MseBasis::Raw, 0.0).unwrap();
        assert!((m - brute).abs() < 1e-12 * brute);
        assert!((m / (d * d / 12.0) - 1.0).abs() < 0.05);
    }

    #[test]
    fn mse_is_smallest_at_true_lambda() {
        let q = make_uniform(10, -1.0, 1.0).unwrap();
        let lambda = 0.1155545;
        let theta = [0.6, 0.7, 0.01];
        let n = 20_000;
        let rec = acquire(&ParamVector::new(theta.to_vec(), None).unwrap(), &sine_basis(), lambda, n, &q, 0).unwrap();
        let at = |l: f64| mse_exp(&theta, &sine_basis(), l, &rec, &q, MseBasis::Subset, 0.0011).unwrap();
        let best = at(lambda);
        for k in [2.0, 3.0, 5.0, -2.0, -4.0] {
            assert!(best <= at(lambda + k / n as f64));
        }
    }

    fn record(n: usize, seed: u64) -> (AcquisitionRecord, QuantizerModel, Vec<f64>) {
        let q = make_uniform(8, -10.0, 10.0).unwrap();
        let d = q.step();
        let theta = vec![30.0 * d, 40.0 * d, 0.5 * d];
        let p = ParamVector::new(theta.clone(), Some(0.5 * d)).unwrap();
        (acquire(&p, &sine_basis(), 0.1155545, n, &q, seed).unwrap(), q, theta)
    }

    #[test]
    fn unknown_freq_matches_known() {
        let (rec, q, _) = record(30_000, 4);
        let d = q.step();
        let known = qbe_fit(&rec, &sine_basis(), 0.1155545, &q, &QbeOptions::default()).unwrap();
        let opts = UnknownFreqOptions::default();
        let (fit, trace) = qbe_fit_unknown_freq(&rec, &sine_basis(), &q, &opts).unwrap();
        assert!((fit.lambda - 0.1155545).abs() < 1e-7, "{}", fit.lambda);
        let amp = |t: &[f64]| t[0].hypot(t[1]);
        assert!((amp(&fit.theta_hat) - amp(&known.theta_hat)).abs() < 0.05 * d);
        assert!((fit.theta_hat[2] - known.theta_hat[2]).abs() < 0.05 * d);
        assert!(trace.final_width() < opts.gamma);

        let (again, trace2) = qbe_fit_unknown_freq(&rec, &sine_basis(), &q, &opts).unwrap();
        assert_eq!(fit, again);
        assert_eq!(trace, trace2);
    }

    #[test]
    fn unknown_freq_on_clean_data() {
        let q = make_uniform(10, -1.0, 1.0).unwrap();
        let lambda = 0.1155545;
        let theta = vec![0.5, 0.6, 0.02];
        let p = ParamVector::new(theta, Some(0.5 * q.step())).unwrap();
        let rec = acquire(&p, &sine_basis(), lambda, 20_000, &q, 8).unwrap();
        let opts = UnknownFreqOptions {
            gamma: 1e-9,
            ..Default::default()
        };
        let (fit, _) = qbe_fit_unknown_freq(&rec, &sine_basis(), &q, &opts).unwrap();
        assert!((fit.lambda - lambda).abs() < 1e-8, "{}", fit.lambda - lambda);
    }
}
