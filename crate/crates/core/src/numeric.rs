//! Small dense linear algebra and summation helpers used at node level.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;
use statrs::function::erf::erfc;

use crate::tolerances;

/// Neumaier compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<CompensatedSum>().value()
}

/// Lower-triangular factor `L` with non-negative diagonal and `L L^T = a`
/// for a symmetric positive semidefinite `a` (row-major, `d x d`).
///
/// Pivots at or below `PSD_PIVOT * max(diag)` are set to zero together with
/// the rest of their column, which is the rank-deficient branch. Returns the
/// offending pivot when `a` is not PSD within tolerance.
pub fn psd_cholesky(a: &[f64], d: usize) -> std::result::Result<Vec<f64>, f64> {
    debug_assert_eq!(a.len(), d * d);
    let scale = (0..d).map(|i| a[i * d + i].abs()).fold(0.0, f64::max);
    let tol = tolerances::PSD_PIVOT * scale.max(f64::MIN_POSITIVE);
    let mut l = vec![0.0; d * d];
    for j in 0..d {
        let mut pivot = a[j * d + j];
        for k in 0..j {
            pivot -= l[j * d + k] * l[j * d + k];
        }
        if pivot < -tol * 1e3 {
            return Err(pivot);
        }
        if pivot <= tol {
            // null direction: the Schur complement column must vanish too
            for i in (j + 1)..d {
                let mut s = a[i * d + j];
                for k in 0..j {
                    s -= l[i * d + k] * l[j * d + k];
                }
                if s.abs() > (tol * scale).sqrt().max(tol) * 1e3 {
                    return Err(pivot);
                }
            }
            continue;
        }
        let ljj = pivot.sqrt();
        l[j * d + j] = ljj;
        for i in (j + 1)..d {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            l[i * d + j] = s / ljj;
        }
    }
    Ok(l)
}

/// Minimal-norm solution of `sigma z = rhs` for symmetric PSD `sigma`,
/// discarding eigen-directions below `PINV_EIGEN * lambda_max`.
pub fn pinv_solve(sigma: &[f64], rhs: &[f64], d: usize) -> Vec<f64> {
    if d == 1 {
        let s = sigma[0];
        return if s > 0.0 && s.is_finite() { vec![rhs[0] / s] } else { vec![0.0] };
    }
    let m = DMatrix::from_row_slice(d, d, sigma);
    let eig = SymmetricEigen::new(m);
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let b = DVector::from_column_slice(rhs);
    let mut z = DVector::zeros(d);
    if lmax <= 0.0 {
        return z.as_slice().to_vec();
    }
    for i in 0..d {
        let lam = eig.eigenvalues[i];
        if lam > tolerances::PINV_EIGEN * lmax {
            let v = eig.eigenvectors.column(i);
            let coef = v.dot(&b) / lam;
            z += v * coef;
        }
    }
    z.as_slice().to_vec()
}

/// `row * m^T` for a row vector and a row-major `d x d` matrix.
pub fn row_times_transpose(row: &[f64], m: &[f64], d: usize) -> Vec<f64> {
    (0..d).map(|i| (0..d).map(|j| row[j] * m[i * d + j]).sum()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Least-squares slope of `ys` against `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Shape of a refinement sequence `ys` indexed by increasing `xs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Trend {
    pub strictly_decreasing: bool,
    pub non_increasing: bool,
    /// Last value divided by the first.
    pub ratio: f64,
    /// Least-squares slope of `log y` against `log x`; NaN when some `y <= 0`.
    pub loglog_slope: f64,
}

impl Trend {
    pub fn of(xs: &[f64], ys: &[f64]) -> Self {
        let strictly_decreasing = ys.windows(2).all(|w| w[1] < w[0]);
        let non_increasing = ys.windows(2).all(|w| w[1] <= w[0]);
        let ratio = match (ys.first(), ys.last()) {
            (Some(a), Some(b)) if *a != 0.0 => b / a,
            _ => f64::NAN,
        };
        let loglog_slope = if ys.len() >= 2 && ys.iter().chain(xs).all(|v| *v > 0.0) {
            let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
            let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
            ols_slope(&lx, &ly)
        } else {
            f64::NAN
        };
        Self { strictly_decreasing, non_increasing, ratio, loglog_slope }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_cancelled_terms() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(xs), 2.0);
    }

    #[test]
    fn cholesky_diagonal_and_rank_deficient() {
        let l = psd_cholesky(&[4.0, 0.0, 0.0, 9.0], 2).unwrap();
        assert_eq!(l, vec![2.0, 0.0, 0.0, 3.0]);

        // rank one: [[1,1],[1,1]] = v v^T with v = (1,1)
        let l = psd_cholesky(&[1.0, 1.0, 1.0, 1.0], 2).unwrap();
        assert!((l[0] - 1.0).abs() < 1e-15);
        assert!((l[2] - 1.0).abs() < 1e-15);
        assert!(l[3].abs() < 1e-7);

        let l = psd_cholesky(&[0.0, 0.0, 0.0, 2.0], 2).unwrap();
        assert_eq!(l[0], 0.0);
        assert!((l[3] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        assert!(psd_cholesky(&[1.0, 2.0, 2.0, 1.0], 2).is_err());
        assert!(psd_cholesky(&[-1.0], 1).is_err());
    }

    #[test]
    fn pinv_drops_null_directions() {
        // sigma = diag(2, 0): second component of z must be zero
        let z = pinv_solve(&[2.0, 0.0, 0.0, 0.0], &[4.0, 3.0], 2);
        assert!((z[0] - 2.0).abs() < 1e-14);
        assert_eq!(z[1], 0.0);
        assert_eq!(pinv_solve(&[0.0], &[1.0], 1), vec![0.0]);
    }

    #[test]
    fn trend_statistics() {
        let t = Trend::of(&[1.0, 2.0, 4.0], &[1.0, 0.5, 0.25]);
        assert!(t.strictly_decreasing && t.non_increasing);
        assert!((t.ratio - 0.25).abs() < 1e-15);
        assert!((t.loglog_slope + 1.0).abs() < 1e-12);
        let flat = Trend::of(&[1.0, 2.0], &[0.0, 0.0]);
        assert!(!flat.strictly_decreasing && flat.non_increasing);
        assert!(flat.loglog_slope.is_nan());
    }

    #[test]
    fn normal_cdf_reference_points() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-16);
        let v = normal_cdf(1.959963984540054);
        assert!((v - 0.975).abs() < 1e-11, "{v}");
    }
}
