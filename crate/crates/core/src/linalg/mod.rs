//! Dense symmetric matrices and the inverse-update primitives shared by every
//! model: Sherman-Morrison / Woodbury updates of a cached inverse, and the
//! bordered-matrix append/remove identities used in empirical space.

mod dense;
mod update;

pub use dense::{spd_inverse, SmallLu, PIVOT_TOLERANCE};
pub(crate) use dense::check_pivot;
pub use update::{block_inverse_append, block_inverse_remove, rank1_update, rankk_update, Sign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square symmetric matrix in row-major storage.
///
/// Every constructor leaves `entries(i, j) == entries(j, i)` bit-for-bit, so
/// consumers can read whichever triangle is convenient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SymMatrixRepr", into = "SymMatrixRepr")]
pub struct SymMatrix {
    order: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SymMatrixRepr {
    order: usize,
    entries: Vec<f64>,
}

impl TryFrom<SymMatrixRepr> for SymMatrix {
    type Error = Error;

    fn try_from(repr: SymMatrixRepr) -> Result<Self> {
        if repr.order == 0 || repr.entries.len() != repr.order * repr.order {
            return Err(Error::Format(format!(
                "symmetric matrix of order {} with {} entries",
                repr.order,
                repr.entries.len()
            )));
        }
        let m = SymMatrix {
            order: repr.order,
            data: repr.entries,
        };
        for i in 0..m.order {
            for j in (i + 1)..m.order {
                if m.get(i, j).to_bits() != m.get(j, i).to_bits() {
                    return Err(Error::Format(format!("entries ({i},{j}) and ({j},{i}) differ")));
                }
            }
        }
        Ok(m)
    }
}

impl From<SymMatrix> for SymMatrixRepr {
    fn from(m: SymMatrix) -> Self {
        SymMatrixRepr {
            order: m.order,
            entries: m.data,
        }
    }
}

impl SymMatrix {
    pub fn identity(order: usize) -> Self {
        Self::scaled_identity(order, 1.0)
    }

    pub fn scaled_identity(order: usize, scale: f64) -> Self {
        Self::from_diag(&vec![scale; order])
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        assert!(!diag.is_empty(), "symmetric matrix order must be at least 1");
        let n = diag.len();
        let mut data = vec![0.0; n * n];
        for (i, &d) in diag.iter().enumerate() {
            data[i * n + i] = d;
        }
        SymMatrix { order: n, data }
    }

    /// Builds the matrix from its upper triangle: `f(i, j)` is only called for
    /// `i <= j`.
    pub fn from_upper_fn(order: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(order >= 1, "symmetric matrix order must be at least 1");
        let mut data = vec![0.0; order * order];
        for i in 0..order {
            for j in i..order {
                data[i * order + j] = f(i, j);
            }
        }
        mirror_upper(&mut data, order);
        SymMatrix { order, data }
    }

    /// Wraps a full row-major matrix, symmetrizing it as `(A + Aᵀ) / 2`.
    pub fn from_row_major(order: usize, mut data: Vec<f64>) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidParameter("matrix order must be at least 1".into()));
        }
        if data.len() != order * order {
            return Err(Error::DimensionMismatch {
                expected: order * order,
                got: data.len(),
            });
        }
        for i in 0..order {
            for j in (i + 1)..order {
                let avg = 0.5 * (data[i * order + j] + data[j * order + i]);
                data[i * order + j] = avg;
                data[j * order + i] = avg;
            }
        }
        Ok(SymMatrix { order, data })
    }

    /// Takes a buffer whose upper triangle is authoritative and mirrors it.
    pub(crate) fn from_upper_buffer(order: usize, mut data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), order * order);
        mirror_upper(&mut data, order);
        SymMatrix { order, data }
    }

    /// Takes a buffer that is already exactly symmetric.
    pub(crate) fn from_symmetric_buffer(order: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), order * order);
        SymMatrix { order, data }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.order + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.order..(i + 1) * self.order]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.order).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.order);
        (0..self.order).map(|i| dot(self.row(i), x)).collect()
    }

    /// Two products `A x₁`, `A x₂` in one sweep over the matrix.
    pub fn matvec2(&self, x1: &[f64], x2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        assert_eq!(x1.len(), self.order);
        assert_eq!(x2.len(), self.order);
        let mut y1 = Vec::with_capacity(self.order);
        let mut y2 = Vec::with_capacity(self.order);
        for i in 0..self.order {
            let (a, b) = dot2(self.row(i), x1, x2);
            y1.push(a);
            y2.push(b);
        }
        (y1, y2)
    }

    /// `xᵀ A x`
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(&self.matvec(x), x)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `‖self − other‖_F / ‖other‖_F`
    pub fn relative_error(&self, other: &SymMatrix) -> f64 {
        assert_eq!(self.order, other.order);
        let diff: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        diff / other.frobenius_norm().max(f64::MIN_POSITIVE)
    }

    /// Largest `|A(i,j) − A(j,i)|`; zero for every value this type produces.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.order {
            for j in (i + 1)..self.order {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.order).map(|i| self.row(i).to_vec()).collect()
    }

    /// Adds `scale` to every diagonal entry.
    pub fn add_diagonal(&mut self, scale: f64) {
        for i in 0..self.order {
            self.data[i * self.order + i] += scale;
        }
    }

    pub fn scaled(&self, factor: f64) -> SymMatrix {
        SymMatrix {
            order: self.order,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }
}

/// A `rows × cols` block of column vectors, stored column-major so each
/// column (one sample's feature vector or kernel column) is contiguous.
/// Zero columns are allowed and represent an empty batch.
#[derive(Clone, Debug, PartialEq)]
pub struct ColumnBlock {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ColumnBlock {
    pub fn empty(rows: usize) -> Self {
        assert!(rows >= 1, "column block needs at least one row");
        ColumnBlock {
            rows,
            cols: 0,
            data: Vec::new(),
        }
    }

    /// Column-major constructor.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 {
            return Err(Error::InvalidParameter("column block needs at least one row".into()));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(ColumnBlock { rows, cols, data })
    }

    pub fn from_columns<C: AsRef<[f64]>>(rows: usize, columns: &[C]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * columns.len());
        for c in columns {
            let c = c.as_ref();
            if c.len() != rows {
                return Err(Error::DimensionMismatch {
                    expected: rows,
                    got: c.len(),
                });
            }
            data.extend_from_slice(c);
        }
        Self::from_col_major(rows, columns.len(), data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.rows + i]
    }

    #[inline]
    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.cols).map(move |j| self.column(j))
    }

    pub fn scaled(&self, factor: f64) -> ColumnBlock {
        ColumnBlock {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four accumulators let the compiler vectorize without reassociation.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = c * 4;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in chunks * 4..a.len() {
        s += a[k] * b[k];
    }
    s
}

#[inline]
fn dot2(a: &[f64], x: &[f64], y: &[f64]) -> (f64, f64) {
    let mut sx = [0.0f64; 4];
    let mut sy = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = c * 4;
        for l in 0..4 {
            sx[l] += a[k + l] * x[k + l];
            sy[l] += a[k + l] * y[k + l];
        }
    }
    let mut rx = (sx[0] + sx[1]) + (sx[2] + sx[3]);
    let mut ry = (sy[0] + sy[1]) + (sy[2] + sy[3]);
    for k in chunks * 4..a.len() {
        rx += a[k] * x[k];
        ry += a[k] * y[k];
    }
    (rx, ry)
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Copies the strict upper triangle onto the lower one, tile by tile so both
/// the reads and the strided writes stay in cache.
pub(crate) fn mirror_upper(data: &mut [f64], n: usize) {
    const TILE: usize = 64;
    for bi in (0..n).step_by(TILE) {
        for bj in (bi..n).step_by(TILE) {
            for i in bi..(bi + TILE).min(n) {
                for j in bj.max(i + 1)..(bj + TILE).min(n) {
                    data[j * n + i] = data[i * n + j];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upper_fn_is_exactly_symmetric() {
        let m = SymMatrix::from_upper_fn(130, |i, j| (i * 7 + j) as f64 / 3.0);
        assert_eq!(m.max_asymmetry(), 0.0);
        assert_eq!(m.get(129, 3), m.get(3, 129));
    }

    #[test]
    fn row_major_is_averaged() {
        let m = SymMatrix::from_row_major(2, vec![1.0, 2.0, 4.0, 5.0]).unwrap();
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.get(1, 0), 3.0);
    }

    #[test]
    fn deserialization_rejects_asymmetry() {
        let bad = r#"{"order":2,"entries":[1.0,2.0,2.5,1.0]}"#;
        assert!(serde_json::from_str::<SymMatrix>(bad).is_err());
        let good = r#"{"order":2,"entries":[1.0,2.0,2.0,1.0]}"#;
        let m: SymMatrix = serde_json::from_str(good).unwrap();
        assert_eq!(m.get(1, 0), 2.0);
    }

    #[test]
    fn column_block_layout() {
        let b = ColumnBlock::from_columns(2, &[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(b.cols(), 3);
        assert_eq!(b.get(1, 2), 6.0);
        assert_eq!(b.column(1), &[3.0, 4.0]);
        assert_eq!(ColumnBlock::empty(3).cols(), 0);
        assert!(ColumnBlock::from_columns(2, &[vec![1.0]]).is_err());
    }

    #[test]
    fn dot_handles_remainders() {
        let a: Vec<f64> = (0..11).map(|v| v as f64).collect();
        assert_eq!(dot(&a, &a), (0..11).map(|v| (v * v) as f64).sum::<f64>());
        let (x, y) = dot2(&a, &a, &vec![1.0; 11]);
        assert_eq!(x, 385.0);
        assert_eq!(y, 55.0);
    }
}
