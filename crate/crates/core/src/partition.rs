//! Grouping of sample indices that see (approximately) the same signal value.
//!
//! Synchronous records repeat their phases exactly, so indices are grouped by
//! `n * L mod N`. Asynchronous records are grouped by binning `frac(n * lambda)`
//! into adjacent subintervals of width `epsilon` anchored at zero.

use std::fmt;

use crate::error::{Error, Result};
use crate::signal::{phase, BasisSet};

/// Disjoint subsets of `0..N`, ordered by ascending phase.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexPartition {
    subsets: Vec<Vec<usize>>,
    /// Mean member phase per subset (diagnostic only).
    phases: Vec<f64>,
    epsilon: f64,
    samples: usize,
}

impl IndexPartition {
    pub fn subsets(&self) -> &[Vec<usize>] {
        &self.subsets
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    /// Bin width used; zero for an exact synchronous partition.
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Number of indices covered (`N`).
    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.subsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsets.is_empty()
    }

    /// Subset id of every index `0..N`.
    pub fn membership(&self) -> Vec<usize> {
        let mut out = vec![0; self.samples];
        for (m, s) in self.subsets.iter().enumerate() {
            for &n in s {
                out[n] = m;
            }
        }
        out
    }

    /// `subset_id,n,phase` CSV for debugging.
    pub fn to_csv(&self, lambda: f64) -> String {
        let mut out = String::from("subset_id,n,phase\n");
        for (m, s) in self.subsets.iter().enumerate() {
            for &n in s {
                out.push_str(&format!("{m},{n},{:.17e}\n", phase(n, lambda)));
            }
        }
        out
    }
}

impl fmt::Display for IndexPartition {
    /// `{{0}, {1,9,17}, ...}`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, s) in self.subsets.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            f.write_str("{")?;
            for (j, n) in s.iter().enumerate() {
                if j > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{n}")?;
            }
            f.write_str("}")?;
        }
        f.write_str("}")
    }
}

pub fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Distinct values of `n * L mod N` for `n = 0..N`, ascending.
pub fn sync_image(samples: usize, cycles: usize) -> Vec<usize> {
    let mut seen = vec![false; samples];
    for n in 0..samples {
        seen[(n * cycles) % samples] = true;
    }
    (0..samples).filter(|&i| seen[i]).collect()
}

/// Exact grouping for `lambda = L / N`: `N / gcd(L, N)` subsets of
/// `gcd(L, N)` indices each.
pub fn sync_partition(samples: usize, cycles: usize) -> Result<IndexPartition> {
    if samples == 0 || cycles == 0 || cycles >= samples {
        return Err(Error::arg(format!(
            "synchronous partition needs 1 <= L < N, got L={cycles}, N={samples}"
        )));
    }
    let d = gcd(cycles, samples);
    // Residues are multiples of d; residue r lands in slot r / d.
    let mut subsets = vec![Vec::with_capacity(d); samples / d];
    for n in 0..samples {
        subsets[(n * cycles) % samples / d].push(n);
    }
    let phases = (0..subsets.len())
        .map(|slot| (slot * d) as f64 / samples as f64)
        .collect();
    Ok(IndexPartition {
        subsets,
        phases,
        epsilon: 0.0,
        samples,
    })
}

fn bin_count(epsilon: f64) -> usize {
    let bins = (1.0 / epsilon).ceil() as usize;
    // Guard against 1/eps rounding up past an exact integer.
    if bins > 1 && (bins - 1) as f64 * epsilon >= 1.0 {
        bins - 1
    } else {
        bins.max(1)
    }
}

pub(crate) fn bin_indices(
    indices: impl IntoIterator<Item = usize>,
    lambda: f64,
    epsilon: f64,
) -> Vec<(Vec<usize>, f64)> {
    let bins = bin_count(epsilon);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); bins];
    let mut phase_sum = vec![0.0; bins];
    for n in indices {
        let mut u = phase(n, lambda);
        // A rational lambda is stored rounded, so a phase that should be an
        // integer can come out just below 1; it belongs with phase 0.
        if 1.0 - u <= n as f64 * lambda.abs() * f64::EPSILON {
            u = 0.0;
        }
        let b = ((u / epsilon) as usize).min(bins - 1);
        members[b].push(n);
        phase_sum[b] += u;
    }
    members
        .into_iter()
        .zip(phase_sum)
        .filter(|(m, _)| !m.is_empty())
        .map(|(mut m, s)| {
            m.sort_unstable();
            let mean = s / m.len() as f64;
            (m, mean)
        })
        .collect()
}

/// Bins `frac(n * lambda)` into `ceil(1/epsilon)` subintervals of `[0, 1)`;
/// empty bins are dropped. No wrap-around merging at 1.
pub fn async_partition(samples: usize, lambda: f64, epsilon: f64) -> Result<IndexPartition> {
    if samples == 0 {
        return Err(Error::arg("partition needs at least one index"));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::arg(format!("epsilon must be in (0, 1], got {epsilon}")));
    }
    if !lambda.is_finite() {
        return Err(Error::arg("lambda must be finite"));
    }
    let (subsets, phases) = bin_indices(0..samples, lambda, epsilon).into_iter().unzip();
    Ok(IndexPartition {
        subsets,
        phases,
        epsilon,
        samples,
    })
}

/// Per-subset mean basis vectors `S̄[m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedBasis {
    /// Row-major `|P| x M`.
    rows: Vec<f64>,
    width: usize,
    sizes: Vec<usize>,
}

impl AveragedBasis {
    pub fn row(&self, m: usize) -> &[f64] {
        &self.rows[m * self.width..(m + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.rows.chunks_exact(self.width)
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    /// Basis size `M`.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Subset sizes `N_m`.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Model value `S̄[m]^T theta` per subset.
    pub fn predict(&self, theta: &[f64]) -> Vec<f64> {
        self.rows()
            .map(|r| r.iter().zip(theta).map(|(a, b)| a * b).sum())
            .collect()
    }
}

pub fn average_basis(p: &IndexPartition, basis: &BasisSet, lambda: f64) -> AveragedBasis {
    let width = basis.len();
    let mut rows = vec![0.0; p.len() * width];
    let mut s = vec![0.0; width];
    for (m, subset) in p.subsets.iter().enumerate() {
        let row = &mut rows[m * width..(m + 1) * width];
        for &n in subset {
            basis.eval_into(phase(n, lambda), &mut s);
            for (r, v) in row.iter_mut().zip(&s) {
                *r += v;
            }
        }
        let inv = 1.0 / subset.len() as f64;
        row.iter_mut().for_each(|r| *r *= inv);
    }
    AveragedBasis {
        rows,
        width,
        sizes: p.subsets.iter().map(Vec::len).collect(),
    }
}
