use faer::linalg::solvers::DenseSolveCore;
use faer::{Mat, Side};

use super::{axpy, SymMatrix};
use crate::error::{Error, Result};

/// Relative pivot tolerance: a pivot `p` is rejected when
/// `|p| <= PIVOT_TOLERANCE * (1 + |leading terms|)`.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

pub(crate) fn check_pivot(context: &'static str, pivot: f64, leading: f64) -> Result<()> {
    let tolerance = PIVOT_TOLERANCE * (1.0 + leading.abs());
    if !(pivot.abs() > tolerance) {
        return Err(Error::SingularPivot {
            context,
            pivot,
            tolerance,
        });
    }
    Ok(())
}

/// LU factorization with partial pivoting for the small `k × k` inner systems
/// of the batch updates (`k = |C| + |R|`).
#[derive(Clone, Debug)]
pub struct SmallLu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl SmallLu {
    /// Factors the row-major `n × n` matrix `a`. `leading` is the magnitude of
    /// the terms that were combined to form `a`; every pivot is checked
    /// against it.
    pub fn factor(n: usize, mut a: Vec<f64>, leading: f64, context: &'static str) -> Result<Self> {
        assert_eq!(a.len(), n * n);
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[i * n + k].abs().total_cmp(&a[j * n + k].abs()))
                .unwrap_or(k);
            if p != k {
                for c in 0..n {
                    a.swap(k * n + c, p * n + c);
                }
                perm.swap(k, p);
            }
            let pivot = a[k * n + k];
            check_pivot(context, pivot, leading)?;
            for i in (k + 1)..n {
                let f = a[i * n + k] / pivot;
                a[i * n + k] = f;
                for c in (k + 1)..n {
                    a[i * n + c] -= f * a[k * n + c];
                }
            }
        }
        Ok(SmallLu { n, lu: a, perm })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    /// Solves `A X = B` in place, `B` being row-major `n × width`. Each
    /// elimination step is a full-row axpy, so wide right-hand sides stream.
    pub fn solve_rows(&self, b: &mut [f64], width: usize) {
        let n = self.n;
        assert_eq!(b.len(), n * width);
        let mut x = vec![0.0; n * width];
        for (i, &p) in self.perm.iter().enumerate() {
            x[i * width..(i + 1) * width].copy_from_slice(&b[p * width..(p + 1) * width]);
        }
        for i in 0..n {
            let (done, rest) = x.split_at_mut(i * width);
            let row = &mut rest[..width];
            for j in 0..i {
                let l = self.lu[i * n + j];
                if l != 0.0 {
                    axpy(-l, &done[j * width..(j + 1) * width], row);
                }
            }
        }
        for i in (0..n).rev() {
            let (head, tail) = x.split_at_mut((i + 1) * width);
            let row = &mut head[i * width..];
            for j in (i + 1)..n {
                let u = self.lu[i * n + j];
                if u != 0.0 {
                    axpy(-u, &tail[(j - i - 1) * width..(j - i) * width], row);
                }
            }
            let d = 1.0 / self.lu[i * n + i];
            row.iter_mut().for_each(|v| *v *= d);
        }
        b.copy_from_slice(&x);
    }

    /// Explicit inverse, row-major.
    pub fn inverse(&self) -> Vec<f64> {
        let n = self.n;
        let mut id = vec![0.0; n * n];
        for i in 0..n {
            id[i * n + i] = 1.0;
        }
        self.solve_rows(&mut id, n);
        id
    }
}

/// Inverse of a symmetric positive definite matrix through a blocked
/// Cholesky factorization. Used for initial fits and periodic refreshes,
/// never on the incremental path.
pub fn spd_inverse(a: &SymMatrix) -> Result<SymMatrix> {
    let n = a.order();
    let m = Mat::<f64>::from_fn(n, n, |i, j| a.get(i, j));
    let llt = m.llt(Side::Lower).map_err(|_| Error::SingularPivot {
        context: "cholesky factorization",
        pivot: 0.0,
        tolerance: 0.0,
    })?;
    let inv = llt.inverse();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            data[i * n + j] = inv[(i, j)];
        }
    }
    Ok(SymMatrix::from_upper_buffer(n, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_solves_with_pivoting() {
        // Zero leading entry forces a row swap.
        let a = vec![0.0, 2.0, 1.0, 3.0, 1.0, 0.0, 1.0, 0.0, 4.0];
        let lu = SmallLu::factor(3, a.clone(), 4.0, "test").unwrap();
        let inv = lu.inverse();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| a[i * 3 + k] * inv[k * 3 + j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-14, "({i},{j}) = {v}");
            }
        }
    }

    #[test]
    fn lu_rejects_singular() {
        let a = vec![1.0, 2.0, 2.0, 4.0];
        let err = SmallLu::factor(2, a, 4.0, "test").unwrap_err();
        assert!(matches!(err, Error::SingularPivot { .. }));
    }

    #[test]
    fn pivot_tolerance_scales_with_leading_terms() {
        assert!(check_pivot("t", 1e-11, 0.0).is_ok());
        assert!(check_pivot("t", 1e-11, 1e2).is_err());
        assert!(check_pivot("t", f64::NAN, 0.0).is_err());
    }

    #[test]
    fn spd_inverse_small() {
        let a = SymMatrix::from_row_major(2, vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        let inv = spd_inverse(&a).unwrap();
        let expect = [2.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0, 2.0 / 3.0];
        for (v, e) in inv.as_slice().iter().zip(expect) {
            assert!((v - e).abs() < 1e-15);
        }
        let indefinite = SymMatrix::from_row_major(2, vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        assert!(spd_inverse(&indefinite).is_err());
    }
}
