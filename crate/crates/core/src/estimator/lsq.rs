//! Dense least squares via Householder QR.
//!
//! Problems here are tall and narrow (thousands of rows, a handful of
//! columns), so the factorization is done column by column on a
//! column-major copy and `Q` is never formed.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LsSolution {
    pub coef: Vec<f64>,
    /// Ratio of the largest to smallest `|R_ii|`; a cheap lower bound on the
    /// 2-norm condition number of the design matrix.
    pub condition: f64,
    /// `||H coef - y||_2`.
    pub residual_norm: f64,
}

/// Minimizes `||H x - y||_2` for a row-major `rows x cols` matrix `H`.
pub fn lstsq(h: &[f64], rows: usize, cols: usize, y: &[f64]) -> Result<LsSolution> {
    if cols == 0 || h.len() != rows * cols || y.len() != rows {
        return Err(Error::arg(format!(
            "inconsistent system: {} entries for {rows}x{cols}, rhs {}",
            h.len(),
            y.len()
        )));
    }
    if rows < cols {
        return Err(Error::InsufficientData(format!(
            "{rows} equations for {cols} unknowns"
        )));
    }
    let mut a = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            a[j * rows + i] = h[i * cols + j];
        }
    }
    let mut b = y.to_vec();
    let mut diag = vec![0.0; cols];

    for j in 0..cols {
        let (done, rest) = a.split_at_mut((j + 1) * rows);
        let col = &mut done[j * rows..];
        let norm = col[j..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            diag[j] = 0.0;
            continue;
        }
        let alpha = if col[j] > 0.0 { -norm } else { norm };
        col[j] -= alpha;
        let vtv = col[j..].iter().map(|v| v * v).sum::<f64>();
        diag[j] = alpha;
        if vtv == 0.0 {
            continue;
        }
        let v = &col[j..];
        for other in rest.chunks_exact_mut(rows) {
            let s = 2.0 * v.iter().zip(&other[j..]).map(|(p, q)| p * q).sum::<f64>() / vtv;
            for (o, vi) in other[j..].iter_mut().zip(v) {
                *o -= s * vi;
            }
        }
        let s = 2.0 * v.iter().zip(&b[j..]).map(|(p, q)| p * q).sum::<f64>() / vtv;
        for (o, vi) in b[j..].iter_mut().zip(v) {
            *o -= s * vi;
        }
    }

    let max_d = diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let min_d = diag.iter().fold(f64::INFINITY, |m, d| m.min(d.abs()));
    let condition = if min_d == 0.0 { f64::INFINITY } else { max_d / min_d };
    let tol = rows as f64 * f64::EPSILON * max_d;
    if max_d == 0.0 || min_d <= tol {
        return Err(Error::SingularSystem { condition });
    }

    // Back substitution on R (upper triangle of the factored columns).
    let mut x = vec![0.0; cols];
    for j in (0..cols).rev() {
        let mut s = b[j];
        for k in j + 1..cols {
            s -= a[k * rows + j] * x[k];
        }
        x[j] = s / diag[j];
    }
    let residual_norm = b[cols..].iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(LsSolution {
        coef: x,
        condition,
        residual_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Double-double arithmetic for an extended-precision normal-equation oracle.
    #[derive(Clone, Copy, Debug)]
    struct Dd(f64, f64);

    impl Dd {
        fn from(x: f64) -> Self {
            Dd(x, 0.0)
        }
        fn two_sum(a: f64, b: f64) -> (f64, f64) {
            let s = a + b;
            let bb = s - a;
            (s, (a - (s - bb)) + (b - bb))
        }
        fn add(self, o: Dd) -> Dd {
            let (s, e) = Self::two_sum(self.0, o.0);
            let e = e + self.1 + o.1;
            let (hi, lo) = Self::two_sum(s, e);
            Dd(hi, lo)
        }
        fn neg(self) -> Dd {
            Dd(-self.0, -self.1)
        }
        fn mul(self, o: Dd) -> Dd {
            let p = self.0 * o.0;
            let e = self.0.mul_add(o.0, -p) + (self.0 * o.1 + self.1 * o.0);
            let (hi, lo) = Self::two_sum(p, e);
            Dd(hi, lo)
        }
        fn div(self, o: Dd) -> Dd {
            let q1 = self.0 / o.0;
            let r = self.add(o.mul(Dd::from(q1)).neg());
            let q2 = r.0 / o.0;
            let r = r.add(o.mul(Dd::from(q2)).neg());
            let q3 = r.0 / o.0;
            Dd::from(q1).add(Dd::from(q2)).add(Dd::from(q3))
        }
    }

    /// `(H^T H)^{-1} H^T y` by Gaussian elimination in double-double.
    fn normal_equation_oracle(h: &[f64], rows: usize, cols: usize, y: &[f64]) -> Vec<f64> {
        let mut m = vec![vec![Dd::from(0.0); cols + 1]; cols];
        for i in 0..rows {
            for r in 0..cols {
                let hr = Dd::from(h[i * cols + r]);
                for c in 0..cols {
                    m[r][c] = m[r][c].add(hr.mul(Dd::from(h[i * cols + c])));
                }
                m[r][cols] = m[r][cols].add(hr.mul(Dd::from(y[i])));
            }
        }
        for p in 0..cols {
            for r in p + 1..cols {
                let f = m[r][p].div(m[p][p]);
                for c in p..=cols {
                    m[r][c] = m[r][c].add(f.mul(m[p][c]).neg());
                }
            }
        }
        let mut x = vec![Dd::from(0.0); cols];
        for p in (0..cols).rev() {
            let mut s = m[p][cols];
            for c in p + 1..cols {
                s = s.add(m[p][c].mul(x[c]).neg());
            }
            x[p] = s.div(m[p][p]);
        }
        x.iter().map(|d| d.0 + d.1).collect()
    }

    #[test]
    fn square_system_is_solved_exactly() {
        let h = [2.0, 1.0, 1.0, 3.0];
        let sol = lstsq(&h, 2, 2, &[3.0, 5.0]).unwrap();
        assert!((sol.coef[0] - 0.8).abs() < 1e-14);
        assert!((sol.coef[1] - 1.4).abs() < 1e-14);
        assert!(sol.residual_norm < 1e-14);
    }

    #[test]
    fn single_column_gives_mean() {
        let sol = lstsq(&[1.0, 1.0], 2, 1, &[1.0, 3.0]).unwrap();
        assert!((sol.coef[0] - 2.0).abs() < 1e-15);
        assert!((sol.residual_norm - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn matches_extended_precision_normal_equations() {
        let mut rng = crate::rng::seeded(31);
        for _ in 0..20 {
            let (rows, cols) = (50, 4);
            let h: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..rows).map(|_| rng.random_range(-5.0..5.0)).collect();
            let got = lstsq(&h, rows, cols, &y).unwrap().coef;
            let want = normal_equation_oracle(&h, rows, cols, &y);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() <= 1e-8 * w.abs().max(1e-3), "{g} vs {w}");
            }
        }
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let h = [1.0, 2.0, 2.0, 4.0, 3.0, 6.0];
        match lstsq(&h, 3, 2, &[1.0, 2.0, 3.0]) {
            Err(Error::SingularSystem { condition }) => assert!(condition > 1e12),
            other => panic!("expected singular system, got {other:?}"),
        }
        assert!(matches!(
            lstsq(&[1.0, 2.0], 1, 2, &[1.0]),
            Err(Error::InsufficientData(_))
        ));
    }
}
