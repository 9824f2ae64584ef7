//! Dense oracles (nalgebra) and random problem generators shared by the
//! integration tests.
#![allow(dead_code)]

use krr_stream::kernels::{feature_map, kernel_eval};
use krr_stream::linalg::{ColumnBlock, SymMatrix};
use krr_stream::{KernelSpec, Sample};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_dense(a: &SymMatrix) -> DMatrix<f64> {
    let n = a.order();
    DMatrix::from_fn(n, n, |i, j| a.get(i, j))
}

pub fn from_dense(a: &DMatrix<f64>) -> SymMatrix {
    let n = a.nrows();
    SymMatrix::from_row_major(n, (0..n * n).map(|k| a[(k / n, k % n)]).collect()).unwrap()
}

pub fn block_dense(b: &ColumnBlock) -> DMatrix<f64> {
    DMatrix::from_fn(b.rows(), b.cols(), |i, j| b.get(i, j))
}

pub fn inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().try_inverse().expect("oracle matrix is invertible")
}

// Dot product with a compensated sum (error-free products via fma).
fn dot_compensated(a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut err) = (0.0f64, 0.0f64);
    for (x, y) in a.zip(b) {
        let p = x * y;
        let p_err = x.mul_add(y, -p);
        let t = sum + p;
        let z = t - sum;
        err += (sum - (t - z)) + (p - z) + p_err;
        sum = t;
    }
    sum + err
}

/// Inverse polished by Newton steps whose residual `I − AX` is accumulated in
/// doubled precision. Near-correctly rounded for condition numbers well past
/// 1e6, where plain LU is only good to `cond·ε`.
pub fn accurate_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut x = inverse(a);
    for _ in 0..3 {
        let r = DMatrix::from_fn(n, n, |i, j| {
            let identity = if i == j { 1.0 } else { 0.0 };
            identity - dot_compensated(a.row(i).iter().copied(), x.column(j).iter().copied())
        });
        x += &x * r;
        x = (&x + x.transpose()) * 0.5;
    }
    x
}

/// `‖a − b‖_F / ‖b‖_F`
pub fn rel_frobenius(a: &SymMatrix, b: &DMatrix<f64>) -> f64 {
    (to_dense(a) - b).norm() / b.norm()
}

pub fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// SPD matrix with eigenvalues spread over `[1, cond]`.
pub fn random_spd(rng: &mut impl Rng, n: usize, cond: f64) -> DMatrix<f64> {
    let q = gaussian_matrix(rng, n, n).qr().q();
    let eig = DVector::from_fn(n, |i, _| {
        if n == 1 {
            1.0
        } else {
            cond.powf(i as f64 / (n - 1) as f64)
        }
    });
    let a = &q * DMatrix::from_diagonal(&eig) * q.transpose();
    (&a + a.transpose()) * 0.5
}

pub fn column_block(m: &DMatrix<f64>) -> ColumnBlock {
    ColumnBlock::from_col_major(m.nrows(), m.ncols(), m.as_slice().to_vec()).unwrap()
}

pub fn random_samples(rng: &mut impl Rng, n: usize, m: usize, first_id: u64) -> Vec<Sample> {
    (0..n)
        .map(|i| {
            let x: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let y = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            Sample::new(first_id + i as u64, x, y)
        })
        .collect()
}

/// Dense solve of the bordered intrinsic system
/// `[[ΦΦᵀ + ρI, Φe], [eᵀΦᵀ, n]] [u; b] = [Φy; eᵀy]`.
pub fn dense_intrinsic(samples: &[Sample], spec: &KernelSpec, ridge: f64) -> Vec<f64> {
    let phis: Vec<Vec<f64>> = samples.iter().map(|s| feature_map(spec, &s.x).unwrap()).collect();
    let j = phis[0].len();
    let phi = DMatrix::from_fn(j, samples.len(), |r, c| phis[c][r]);
    let y = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.y));
    let e = DVector::from_element(samples.len(), 1.0);
    let mut a = DMatrix::zeros(j + 1, j + 1);
    let s = &phi * phi.transpose() + DMatrix::identity(j, j) * ridge;
    a.view_mut((0, 0), (j, j)).copy_from(&s);
    let pe = &phi * &e;
    a.view_mut((0, j), (j, 1)).copy_from(&pe);
    a.view_mut((j, 0), (1, j)).copy_from(&pe.transpose());
    a[(j, j)] = samples.len() as f64;
    let mut rhs = DVector::zeros(j + 1);
    rhs.rows_mut(0, j).copy_from(&(&phi * &y));
    rhs[j] = y.sum();
    a.lu().solve(&rhs).unwrap().iter().copied().collect()
}

pub fn kernel_matrix(samples: &[Sample], spec: &KernelSpec) -> DMatrix<f64> {
    let n = samples.len();
    DMatrix::from_fn(n, n, |i, j| kernel_eval(spec, &samples[i].x, &samples[j].x).unwrap())
}

/// Dense dual solve: `b = yQ⁻¹e / eQ⁻¹e`, `a = Q⁻¹(y − be)`, returned as `(a, b)`.
pub fn dense_empirical(samples: &[Sample], spec: &KernelSpec, ridge: f64) -> Vec<f64> {
    let n = samples.len();
    let q = kernel_matrix(samples, spec) + DMatrix::identity(n, n) * ridge;
    let lu = q.lu();
    let y = DVector::from_iterator(n, samples.iter().map(|s| s.y));
    let e = DVector::from_element(n, 1.0);
    let qy = lu.solve(&y).unwrap();
    let qe = lu.solve(&e).unwrap();
    let b = qy.sum() / qe.sum();
    let a = qy - qe * b;
    let mut v: Vec<f64> = a.iter().copied().collect();
    v.push(b);
    v
}

/// Bias-free ridge weights `(ρI + ΦΦᵀ)⁻¹Φy`.
pub fn dense_ridge_no_bias(samples: &[Sample], spec: &KernelSpec, ridge: f64) -> Vec<f64> {
    let phis: Vec<Vec<f64>> = samples.iter().map(|s| feature_map(spec, &s.x).unwrap()).collect();
    let j = phis[0].len();
    let phi = DMatrix::from_fn(j, samples.len(), |r, c| phis[c][r]);
    let y = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.y));
    let s = &phi * phi.transpose() + DMatrix::identity(j, j) * ridge;
    s.lu().solve(&(&phi * y)).unwrap().iter().copied().collect()
}

pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    krr_stream::relative_deviation(a, b)
}
