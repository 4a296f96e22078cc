//! Quantile-based estimation.
//!
//! For every subset `P_m` of the index partition and every transition level
//! `T_k`, the fraction of codes at or below `k - 1` estimates
//! `p_k[m] = Phi((T_k - S̄[m]^T theta) / sigma)`. Passing the admissible
//! estimates through `Phi^{-1}` gives one linear equation per `(k, m)`:
//!
//! * known sigma: `S̄[m]^T theta = T_k - sigma * Phi^{-1}(p)`
//! * unknown sigma: `[S̄[m]^T, T_k] theta_u = -Phi^{-1}(p)` with
//!   `theta_u = [theta / sigma, -1 / sigma]`
//!
//! which are stacked and solved in the least-squares sense.

mod lsq;
mod normal;

pub use lsq::{lstsq, LsSolution};
pub use normal::{inv_gauss_cdf, norm_cdf, norm_pdf};

use std::path::Path;

use crate::error::{Error, Result};
use crate::partition::{async_partition, average_basis, AveragedBasis, IndexPartition};
use crate::quantizer::QuantizerModel;
use crate::signal::{AcquisitionRecord, BasisSet};

/// Subsets smaller than this never yield a usable probability.
pub const MIN_SUBSET: usize = 2;

/// Open probability band inside which estimates are used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Guards {
    pub lo: f64,
    pub hi: f64,
}

impl Default for Guards {
    fn default() -> Self {
        Self { lo: 0.05, hi: 0.95 }
    }
}

impl Guards {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(Error::arg(format!("guards need 0 <= lo < hi <= 1, got ({lo}, {hi})")));
        }
        Ok(Self { lo, hi })
    }

    /// Only exact 0 and 1 are rejected.
    pub fn open() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }

    pub fn admits(&self, p: f64) -> bool {
        self.lo < p && p < self.hi
    }
}

/// One `(k, m)` cell of a [`ProbabilityTable`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbEntry {
    /// Threshold index, `1 <= k < K`.
    pub k: usize,
    pub m: usize,
    pub count_le: u32,
    pub total: u32,
    pub p_hat: f64,
    pub admissible: bool,
}

/// Per-subset cumulative counts. Thresholds below `k_start` have no codes at
/// or below them (`p = 0`); thresholds past the stored span have all of them
/// (`p = 1`).
#[derive(Debug, Clone, PartialEq)]
struct SubsetRow {
    total: u32,
    k_start: usize,
    count_le: Vec<u32>,
    p_hat: Vec<f64>,
    admissible: Vec<bool>,
}

/// Estimated `p_k[m]` for all thresholds and subsets, with admissibility flags.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityTable {
    thresholds: usize,
    rows: Vec<SubsetRow>,
}

impl ProbabilityTable {
    /// Number of thresholds `K - 1`.
    pub fn thresholds(&self) -> usize {
        self.thresholds
    }

    pub fn subsets(&self) -> usize {
        self.rows.len()
    }

    pub fn entry(&self, k: usize, m: usize) -> ProbEntry {
        assert!(k >= 1 && k <= self.thresholds, "threshold {k} out of range");
        let row = &self.rows[m];
        let i = k as isize - row.k_start as isize;
        if i < 0 {
            ProbEntry { k, m, count_le: 0, total: row.total, p_hat: 0.0, admissible: false }
        } else if i as usize >= row.p_hat.len() {
            ProbEntry { k, m, count_le: row.total, total: row.total, p_hat: 1.0, admissible: false }
        } else {
            let i = i as usize;
            ProbEntry {
                k,
                m,
                count_le: row.count_le[i],
                total: row.total,
                p_hat: row.p_hat[i],
                admissible: row.admissible[i],
            }
        }
    }

    /// Admissible entries, ordered by subset then threshold.
    pub fn admissible(&self) -> impl Iterator<Item = ProbEntry> + '_ {
        self.rows.iter().enumerate().flat_map(move |(m, row)| {
            (0..row.p_hat.len())
                .filter(move |&i| row.admissible[i])
                .map(move |i| ProbEntry {
                    k: row.k_start + i,
                    m,
                    count_le: row.count_le[i],
                    total: row.total,
                    p_hat: row.p_hat[i],
                    admissible: true,
                })
        })
    }

    pub fn admissible_count(&self) -> usize {
        self.rows
            .iter()
            .map(|r| r.admissible.iter().filter(|&&a| a).count())
            .sum()
    }

    /// Table built from exact model probabilities
    /// `Phi((T_k - S̄[m]^T theta) / sigma)`, as if each subset were infinite.
    pub fn exact(q: &QuantizerModel, avg: &AveragedBasis, theta: &[f64], sigma: f64) -> Self {
        let x = avg.predict(theta);
        let thresholds = q.codes() - 1;
        let rows = x
            .iter()
            .map(|&xm| {
                let p_hat: Vec<f64> = q.levels().iter().map(|t| norm_cdf((t - xm) / sigma)).collect();
                let admissible = p_hat.iter().map(|&p| Guards::open().admits(p)).collect();
                SubsetRow {
                    total: u32::MAX,
                    k_start: 1,
                    count_le: vec![0; thresholds],
                    p_hat,
                    admissible,
                }
            })
            .collect();
        Self { thresholds, rows }
    }
}

/// Counts, per subset, how many codes fall at or below each threshold.
pub fn estimate_probabilities(
    rec: &AcquisitionRecord,
    part: &IndexPartition,
    q: &QuantizerModel,
) -> Result<ProbabilityTable> {
    if part.samples() != rec.len() {
        return Err(Error::arg(format!(
            "partition covers {} indices, record has {}",
            part.samples(),
            rec.len()
        )));
    }
    if rec.code_count != q.codes() {
        return Err(Error::arg(format!(
            "record has {} codes, quantizer {}",
            rec.code_count,
            q.codes()
        )));
    }
    let thresholds = q.codes() - 1;
    let mut hist = vec![0u32; q.codes()];
    let rows = part
        .subsets()
        .iter()
        .map(|subset| {
            let (mut lo, mut hi) = (usize::MAX, 0);
            for &n in subset {
                let c = rec.codes[n] as usize;
                hist[c] += 1;
                lo = lo.min(c);
                hi = hi.max(c);
            }
            let total = subset.len() as u32;
            // Thresholds T_{lo+1}..=T_hi separate observed codes.
            let k_start = lo + 1;
            let span = hi - lo;
            let mut count_le = Vec::with_capacity(span);
            let mut acc = 0;
            for c in lo..hi {
                acc += hist[c];
                count_le.push(acc);
            }
            for c in lo..=hi {
                hist[c] = 0;
            }
            let p_hat: Vec<f64> = count_le.iter().map(|&c| c as f64 / total as f64).collect();
            let admissible = p_hat
                .iter()
                .map(|&p| total as usize >= MIN_SUBSET && Guards::open().admits(p))
                .collect();
            SubsetRow {
                total,
                k_start,
                count_le,
                p_hat,
                admissible,
            }
        })
        .collect();
    Ok(ProbabilityTable { thresholds, rows })
}

/// Marks entries admissible iff `lo < p_hat < hi` and the subset is large
/// enough to estimate a probability.
pub fn apply_guard(mut table: ProbabilityTable, guards: Guards) -> ProbabilityTable {
    for row in &mut table.rows {
        let big_enough = row.total as usize >= MIN_SUBSET;
        for (a, &p) in row.admissible.iter_mut().zip(&row.p_hat) {
            *a = big_enough && guards.admits(p);
        }
    }
    table
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaMode {
    Known(f64),
    Unknown,
}

/// Stacked linear system `H x = Y`, one row per admissible `(k, m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSystem {
    /// Row-major `rows x cols`.
    pub h: Vec<f64>,
    pub y: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub mode: SigmaMode,
    /// Source `(k, m)` of every row.
    pub entries: Vec<(usize, usize)>,
}

fn check_shapes(table: &ProbabilityTable, avg: &AveragedBasis, q: &QuantizerModel) -> Result<()> {
    if table.subsets() != avg.len() {
        return Err(Error::arg(format!(
            "table has {} subsets, averaged basis {}",
            table.subsets(),
            avg.len()
        )));
    }
    if table.thresholds() != q.codes() - 1 {
        return Err(Error::arg("table and quantizer disagree on threshold count"));
    }
    Ok(())
}

fn assemble(
    table: &ProbabilityTable,
    avg: &AveragedBasis,
    q: &QuantizerModel,
    mode: SigmaMode,
) -> Result<DesignSystem> {
    check_shapes(table, avg, q)?;
    let cols = match mode {
        SigmaMode::Known(_) => avg.width(),
        SigmaMode::Unknown => avg.width() + 1,
    };
    let mut h = Vec::with_capacity(table.admissible_count() * cols);
    let mut y = Vec::with_capacity(table.admissible_count());
    let mut entries = Vec::with_capacity(table.admissible_count());
    for e in table.admissible() {
        let z = inv_gauss_cdf(e.p_hat)?;
        let t = q.level(e.k);
        h.extend_from_slice(avg.row(e.m));
        match mode {
            SigmaMode::Known(sigma) => y.push(t - sigma * z),
            SigmaMode::Unknown => {
                h.push(t);
                y.push(-z);
            }
        }
        entries.push((e.k, e.m));
    }
    if entries.is_empty() {
        return Err(Error::InsufficientData(
            "no admissible probability estimates".into(),
        ));
    }
    Ok(DesignSystem {
        rows: entries.len(),
        h,
        y,
        cols,
        mode,
        entries,
    })
}

/// Rows `S̄[m]` with right-hand side `T_k - sigma * Phi^{-1}(p)`.
pub fn assemble_known_sigma(
    table: &ProbabilityTable,
    avg: &AveragedBasis,
    q: &QuantizerModel,
    sigma: f64,
) -> Result<DesignSystem> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::arg(format!("known sigma must be positive, got {sigma}")));
    }
    assemble(table, avg, q, SigmaMode::Known(sigma))
}

/// Rows `[S̄[m], T_k]` with right-hand side `-Phi^{-1}(p)`.
pub fn assemble_unknown_sigma(
    table: &ProbabilityTable,
    avg: &AveragedBasis,
    q: &QuantizerModel,
) -> Result<DesignSystem> {
    assemble(table, avg, q, SigmaMode::Unknown)
}

pub fn solve_ls(sys: &DesignSystem) -> Result<LsSolution> {
    lstsq(&sys.h, sys.rows, sys.cols, &sys.y)
}

/// Splits `[theta / sigma, -1 / sigma]` back into `(theta, sigma)`.
pub fn recover_params(theta_u: &[f64]) -> Result<(Vec<f64>, f64)> {
    let (&last, head) = theta_u
        .split_last()
        .ok_or_else(|| Error::arg("empty coefficient vector"))?;
    if !(last < 0.0) || !last.is_finite() {
        return Err(Error::InvalidEstimate(format!(
            "noise coefficient {last} must be negative"
        )));
    }
    let sigma = -1.0 / last;
    Ok((head.iter().map(|v| v * sigma).collect(), sigma))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QbeOptions {
    /// Phase bin width for grouping indices.
    pub epsilon: f64,
    pub guards: Guards,
    /// Known noise standard deviation; estimated when absent.
    pub sigma: Option<f64>,
}

impl Default for QbeOptions {
    fn default() -> Self {
        Self {
            epsilon: 0.0011,
            guards: Guards::default(),
            sigma: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub theta_hat: Vec<f64>,
    /// Estimated noise standard deviation (unknown-sigma fits only).
    pub sigma_hat: Option<f64>,
    /// Noise standard deviation used for the CDF abscissas: the estimate,
    /// or the known value.
    pub noise_sigma: f64,
    pub lambda: f64,
    pub rows_used: usize,
    pub subsets: usize,
    pub condition: f64,
    pub residual_norm: f64,
    /// Pointwise normalized noise CDF, sorted by abscissa.
    pub cdf_points: Vec<(f64, f64)>,
}

impl FitResult {
    /// `name,value` CSV, one row per parameter.
    pub fn to_csv(&self, basis: &BasisSet) -> String {
        let mut out = String::from("name,value\n");
        for (f, v) in basis.functions().iter().zip(&self.theta_hat) {
            out.push_str(&format!("{},{v:.17e}\n", f.name));
        }
        if let Some(s) = self.sigma_hat {
            out.push_str(&format!("sigma,{s:.17e}\n"));
        }
        out.push_str(&format!("lambda,{:.17e}\n", self.lambda));
        out.push_str(&format!("rows_used,{}\n", self.rows_used));
        out.push_str(&format!("condition,{:.6e}\n", self.condition));
        out
    }

    pub fn write_csv(&self, basis: &BasisSet, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv(basis))?;
        Ok(())
    }
}

/// `abscissa,p_hat` CSV.
pub fn cdf_to_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("abscissa,p_hat\n");
    for (x, p) in points {
        out.push_str(&format!("{x:.17e},{p:.17e}\n"));
    }
    out
}

/// Solves an assembled table: the shared tail of every QBE fit.
pub fn fit_from_table(
    table: &ProbabilityTable,
    avg: &AveragedBasis,
    q: &QuantizerModel,
    sigma: Option<f64>,
    lambda: f64,
) -> Result<FitResult> {
    let (theta_hat, sigma_hat, noise_sigma, sol, rows) = match sigma {
        Some(s) => {
            let sys = assemble_known_sigma(table, avg, q, s)?;
            let sol = solve_ls(&sys)?;
            (sol.coef.clone(), None, s, sol, sys.rows)
        }
        None => {
            let sys = assemble_unknown_sigma(table, avg, q)?;
            let sol = solve_ls(&sys)?;
            let (theta, s) = recover_params(&sol.coef)?;
            (theta, Some(s), s, sol, sys.rows)
        }
    };
    let mut fit = FitResult {
        theta_hat,
        sigma_hat,
        noise_sigma,
        lambda,
        rows_used: rows,
        subsets: avg.len(),
        condition: sol.condition,
        residual_norm: sol.residual_norm,
        cdf_points: Vec::new(),
    };
    fit.cdf_points = estimate_noise_cdf(&fit, table, avg, q);
    Ok(fit)
}

/// Full pipeline at a known frequency ratio `lambda`.
pub fn qbe_fit(
    rec: &AcquisitionRecord,
    basis: &BasisSet,
    lambda: f64,
    q: &QuantizerModel,
    opts: &QbeOptions,
) -> Result<FitResult> {
    let part = async_partition(rec.len(), lambda, opts.epsilon)?;
    qbe_fit_partitioned(rec, basis, lambda, q, opts, &part).map(|(fit, _)| fit)
}

/// [`qbe_fit`] on a caller-supplied partition; also returns the averaged basis.
pub fn qbe_fit_partitioned(
    rec: &AcquisitionRecord,
    basis: &BasisSet,
    lambda: f64,
    q: &QuantizerModel,
    opts: &QbeOptions,
    part: &IndexPartition,
) -> Result<(FitResult, AveragedBasis)> {
    let avg = average_basis(part, basis, lambda);
    let table = apply_guard(estimate_probabilities(rec, part, q)?, opts.guards);
    let fit = fit_from_table(&table, &avg, q, opts.sigma, lambda)?;
    Ok((fit, avg))
}

/// Pointwise normalized noise CDF: `((T_k - S̄[m]^T theta) / sigma, p_hat)`
/// for every admissible entry, sorted by abscissa.
pub fn estimate_noise_cdf(
    fit: &FitResult,
    table: &ProbabilityTable,
    avg: &AveragedBasis,
    q: &QuantizerModel,
) -> Vec<(f64, f64)> {
    let x = avg.predict(&fit.theta_hat);
    let mut pts: Vec<(f64, f64)> = table
        .admissible()
        .map(|e| ((q.level(e.k) - x[e.m]) / fit.noise_sigma, e.p_hat))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts
}

/// Density by central differences of the CDF points. Points sharing an
/// abscissa are averaged first.
pub fn estimate_noise_pdf(cdf_points: &[(f64, f64)]) -> Result<Vec<(f64, f64)>> {
    let mut pts = cdf_points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64, usize)> = Vec::with_capacity(pts.len());
    for (x, p) in pts {
        match merged.last_mut() {
            Some(last) if last.0 == x => {
                last.1 += p;
                last.2 += 1;
            }
            _ => merged.push((x, p, 1)),
        }
    }
    if merged.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} distinct abscissas, need at least 3",
            merged.len()
        )));
    }
    let xs: Vec<(f64, f64)> = merged.into_iter().map(|(x, s, n)| (x, s / n as f64)).collect();
    Ok(xs
        .windows(3)
        .map(|w| (w[1].0, (w[2].1 - w[0].1) / (w[2].0 - w[0].0)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::{async_partition, sync_partition};
    use crate::quantizer::{make_resistor_ladder, make_uniform};
    use crate::signal::{acquire, constant_basis, sine_basis, ParamVector};

    fn comparator() -> QuantizerModel {
        make_uniform(1, -1.0, 1.0).unwrap()
    }

    #[test]
    fn guard_validation_and_strictness() {
        assert!(Guards::new(0.5, 0.5).is_err());
        assert!(Guards::new(-0.1, 0.5).is_err());
        let g = Guards::default();
        assert!(g.admits(0.5));
        assert!(!g.admits(0.05));
        assert!(!g.admits(0.95));
        assert!(!g.admits(0.0) && !g.admits(1.0));
        assert!(!Guards::open().admits(0.0) && !Guards::open().admits(1.0));
        assert!(Guards::open().admits(1e-300));
    }

    #[test]
    fn two_sample_subset_gives_one_half() {
        let q = make_uniform(2, -1.0, 1.0).unwrap();
        // Codes 0 and 2 with one sample below T_1 ... T_2.
        let rec = AcquisitionRecord::new(vec![0, 2], 0.0, 0, 4).unwrap();
        let part = async_partition(2, 0.0, 1.0).unwrap();
        let t = estimate_probabilities(&rec, &part, &q).unwrap();
        assert_eq!(t.entry(1, 0).p_hat, 0.5);
        assert_eq!(t.entry(2, 0).p_hat, 0.5);
        assert_eq!(t.entry(3, 0).p_hat, 1.0);
        assert_eq!(t.entry(1, 0).count_le, 1);
        assert!(t.entry(1, 0).admissible && !t.entry(3, 0).admissible);

        let all_low = AcquisitionRecord::new(vec![0, 0, 0], 0.0, 0, 4).unwrap();
        let part = async_partition(3, 0.0, 1.0).unwrap();
        let t = estimate_probabilities(&all_low, &part, &q).unwrap();
        for k in 1..4 {
            assert_eq!(t.entry(k, 0).p_hat, 1.0);
        }
        assert_eq!(t.admissible_count(), 0);
    }

    #[test]
    fn singleton_subsets_are_never_admissible() {
        let q = make_uniform(3, -1.0, 1.0).unwrap();
        let rec = AcquisitionRecord::new(vec![1, 5, 3, 7], 0.0, 0, 8).unwrap();
        let part = sync_partition(4, 1).unwrap();
        let t = apply_guard(estimate_probabilities(&rec, &part, &q).unwrap(), Guards::open());
        assert_eq!(t.admissible_count(), 0);
    }

    #[test]
    fn constant_input_probabilities_follow_phi() {
        let q = make_uniform(4, -1.0, 1.0).unwrap();
        let (mu, sigma) = (0.03, 0.2);
        let n = 100_000;
        let rec = acquire(
            &ParamVector::new(vec![mu], Some(sigma)).unwrap(),
            &constant_basis(),
            0.0,
            n,
            &q,
            3,
        )
        .unwrap();
        let part = async_partition(n, 0.0, 1.0).unwrap();
        let t = estimate_probabilities(&rec, &part, &q).unwrap();
        for k in 1..q.codes() {
            let p = norm_cdf((q.level(k) - mu) / sigma);
            let tol = 3.0 * (p * (1.0 - p) / n as f64).sqrt() + 1e-12;
            assert!((t.entry(k, 0).p_hat - p).abs() <= tol, "k={k}");
        }
    }

    #[test]
    fn probabilities_nondecreasing_in_k() {
        let q = make_resistor_ladder(6, -1.0, 1.0, 0.1, None, 4).unwrap();
        let p = ParamVector::new(vec![0.2, 0.5, 0.1], Some(0.05)).unwrap();
        let rec = acquire(&p, &sine_basis(), 0.1155545, 20_000, &q, 5).unwrap();
        let part = async_partition(rec.len(), 0.1155545, 0.01).unwrap();
        let t = estimate_probabilities(&rec, &part, &q).unwrap();
        for m in 0..t.subsets() {
            for k in 2..q.codes() {
                assert!(t.entry(k, m).count_le >= t.entry(k - 1, m).count_le);
            }
        }
        let guarded = apply_guard(t.clone(), Guards::default());
        assert!(guarded.admissible_count() <= t.admissible_count());
        assert_eq!(apply_guard(t.clone(), Guards::open()).admissible_count(), t.admissible_count());
    }

    #[test]
    fn comparator_known_sigma() {
        let q = comparator();
        let avg = average_basis(&async_partition(1, 0.0, 1.0).unwrap(), &constant_basis(), 0.0);
        // p = 0.5 at T = 0 -> mu = 0.
        let t = ProbabilityTable::exact(&q, &avg, &[0.0], 1.0);
        let sys = assemble_known_sigma(&t, &avg, &q, 1.0).unwrap();
        assert_eq!((sys.rows, sys.cols), (1, 1));
        assert_eq!(sys.h, vec![1.0]);
        assert!(sys.y[0].abs() < 1e-15);
        assert!(solve_ls(&sys).unwrap().coef[0].abs() < 1e-15);

        // p = Phi(1) -> mu = 0 - 1 * 1 = -1.
        let t = ProbabilityTable::exact(&q, &avg, &[-1.0], 1.0);
        assert!((t.entry(1, 0).p_hat - 0.841_344_746_068_542_9).abs() < 1e-15);
        let mu = solve_ls(&assemble_known_sigma(&t, &avg, &q, 1.0).unwrap()).unwrap().coef[0];
        assert!((mu + 1.0).abs() < 1e-6);
        assert!(assemble_known_sigma(&t, &avg, &q, 0.0).is_err());
    }

    #[test]
    fn unknown_sigma_system_shape_and_consistency() {
        let q = make_resistor_ladder(5, -1.0, 1.0, 0.05, None, 1).unwrap();
        let lambda = 0.1155545;
        let part = async_partition(3000, lambda, 0.01).unwrap();
        let avg = average_basis(&part, &sine_basis(), lambda);
        let theta = [0.4, -0.3, 0.05];
        let sigma = 0.04;
        let t = apply_guard(ProbabilityTable::exact(&q, &avg, &theta, sigma), Guards::default());
        let sys = assemble_unknown_sigma(&t, &avg, &q).unwrap();
        assert_eq!(sys.cols, 4);
        assert_eq!(sys.rows, t.admissible_count());
        let tu = [theta[0] / sigma, theta[1] / sigma, theta[2] / sigma, -1.0 / sigma];
        for r in 0..sys.rows {
            let lhs: f64 = (0..4).map(|c| sys.h[r * 4 + c] * tu[c]).sum();
            assert!((lhs - sys.y[r]).abs() < 1e-10 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn duplicated_entries_are_kept() {
        let q = comparator();
        let rec = AcquisitionRecord::new(vec![0, 0, 1, 1], 0.0, 0, 2).unwrap();
        let part = sync_partition(4, 2).unwrap();
        let avg = average_basis(&part, &constant_basis(), 0.5);
        let t = estimate_probabilities(&rec, &part, &q).unwrap();
        let sys = assemble_unknown_sigma(&t, &avg, &q).unwrap();
        assert_eq!(sys.rows, 2);
        assert_eq!(sys.h[0..2], sys.h[2..4]);
    }

    #[test]
    fn no_admissible_rows_is_insufficient_data() {
        let q = comparator();
        let rec = AcquisitionRecord::new(vec![0, 0], 0.0, 0, 2).unwrap();
        let part = async_partition(2, 0.0, 1.0).unwrap();
        let avg = average_basis(&part, &constant_basis(), 0.0);
        let t = estimate_probabilities(&rec, &part, &q).unwrap();
        assert!(matches!(assemble_unknown_sigma(&t, &avg, &q), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn recover_params_examples() {
        let (th, s) = recover_params(&[2.0, -1.0]).unwrap();
        assert_eq!((th, s), (vec![2.0], 1.0));
        let (th, s) = recover_params(&[1.0, 0.5, -2.0]).unwrap();
        assert_eq!(s, 0.5);
        assert_eq!(th, vec![0.5, 0.25]);
        assert!(matches!(recover_params(&[1.0, 0.0]), Err(Error::InvalidEstimate(_))));
        assert!(matches!(recover_params(&[1.0, 0.3]), Err(Error::InvalidEstimate(_))));
    }

    #[test]
    fn exact_probabilities_recover_parameters() {
        let q = make_resistor_ladder(8, -10.0, 10.0, 0.03, Some(0.215), 9).unwrap();
        let lambda = 0.1155545;
        let part = async_partition(20_000, lambda, 0.0011).unwrap();
        let avg = average_basis(&part, &sine_basis(), lambda);
        let d = q.step();
        let theta = [30.0 * d, 40.0 * d, 0.5 * d];
        let sigma = 0.8 * d;
        let t = apply_guard(ProbabilityTable::exact(&q, &avg, &theta, sigma), Guards::default());
        let fit = fit_from_table(&t, &avg, &q, None, lambda).unwrap();
        for (a, b) in fit.theta_hat.iter().zip(&theta) {
            assert!((a - b).abs() <= 1e-8 * b.abs().max(d), "{a} vs {b}");
        }
        assert!((fit.sigma_hat.unwrap() - sigma).abs() <= 1e-8 * sigma);
        // Every CDF point lies on Phi.
        for (x, p) in &fit.cdf_points {
            assert!((norm_cdf(*x) - p).abs() < 1e-9);
            assert!(*p > 0.05 && *p < 0.95);
        }
    }

    #[test]
    fn known_and_unknown_sigma_agree_on_simulated_data() {
        let q = make_uniform(8, -10.0, 10.0).unwrap();
        let d = q.step();
        let lambda = 0.1155545;
        let sigma = 0.8 * d;
        let theta = vec![30.0 * d, 40.0 * d, 0.5 * d];
        let p = ParamVector::new(theta.clone(), Some(sigma)).unwrap();
        let rec = acquire(&p, &sine_basis(), lambda, 150_000, &q, 12).unwrap();
        let unknown = qbe_fit(&rec, &sine_basis(), lambda, &q, &QbeOptions::default()).unwrap();
        let known = qbe_fit(
            &rec,
            &sine_basis(),
            lambda,
            &q,
            &QbeOptions { sigma: Some(sigma), ..Default::default() },
        )
        .unwrap();
        assert!(known.sigma_hat.is_none());
        for i in 0..3 {
            assert!((unknown.theta_hat[i] - known.theta_hat[i]).abs() < 0.05 * d);
            assert!((unknown.theta_hat[i] - theta[i]).abs() < 0.1 * d);
        }
        // Guarding on p_hat truncates small subsets, so sigma reads slightly high.
        let ratio = unknown.sigma_hat.unwrap() / sigma;
        assert!(ratio > 1.0 && ratio < 1.04, "{ratio}");
    }

    #[test]
    fn pdf_of_exact_phi_samples() {
        let h = 0.01;
        let pts: Vec<(f64, f64)> = (0..=600).map(|i| {
            let x = -3.0 + i as f64 * h;
            (x, norm_cdf(x))
        }).collect();
        let pdf = estimate_noise_pdf(&pts).unwrap();
        assert_eq!(pdf.len(), pts.len() - 2);
        for (x, d) in pdf {
            // Central-difference truncation error is h^2 |phi'''| / 6.
            assert!((d - norm_pdf(x)).abs() < h * h * 0.2);
        }
    }

    #[test]
    fn pdf_of_linear_segment_is_constant() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64 * 0.1, 0.2 + 0.05 * i as f64)).collect();
        for (_, d) in estimate_noise_pdf(&pts).unwrap() {
            assert!((d - 0.5).abs() < 1e-12);
        }
        assert!(estimate_noise_pdf(&pts[..2]).is_err());
        let dup = [(0.0, 0.1), (0.0, 0.3), (1.0, 0.5)];
        assert!(estimate_noise_pdf(&dup).is_err());
    }

    #[test]
    fn pdf_averages_duplicate_abscissas() {
        // Kernel-free oracle: average duplicates by hand, then difference.
        let pts = [(0.0, 0.1), (1.0, 0.4), (1.0, 0.6), (2.0, 0.9), (3.0, 0.95)];
        let pdf = estimate_noise_pdf(&pts).unwrap();
        assert_eq!(pdf.len(), 2);
        assert!((pdf[0].1 - (0.9 - 0.1) / 2.0).abs() < 1e-15);
        assert!((pdf[1].1 - (0.95 - 0.5) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn fit_csv_has_one_row_per_parameter() {
        let fit = FitResult {
            theta_hat: vec![1.0, 2.0, 3.0],
            sigma_hat: Some(0.1),
            noise_sigma: 0.1,
            lambda: 0.25,
            rows_used: 10,
            subsets: 4,
            condition: 3.0,
            residual_norm: 0.0,
            cdf_points: vec![(0.0, 0.5)],
        };
        let csv = fit.to_csv(&sine_basis());
        let names: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(names, ["sin", "cos", "dc", "sigma", "lambda", "rows_used", "condition"]);
        assert_eq!(cdf_to_csv(&fit.cdf_points).lines().next(), Some("abscissa,p_hat"));
    }
}
