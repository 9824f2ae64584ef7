//! Kernel functions and the explicit polynomial feature map.
//!
//! The polynomial kernel is the inhomogeneous form `(1 + x·z)^d`; its feature
//! map enumerates monomials of total degree `0..=d` in graded lexicographic
//! order (degree first, then `x₁ > x₂ > …`) scaled by the square root of the
//! multinomial coefficient, so `φ(x)·φ(z) = (1 + x·z)^d`. The constant
//! feature comes first. The RBF kernel `exp(−‖x − z‖² / (2r²))` has no finite
//! feature map and is only usable in empirical space.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::{dot, ColumnBlock};

/// Default RBF radius.
pub const DEFAULT_RBF_RADIUS: f64 = 50.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum KernelSpec {
    Polynomial { degree: u32 },
    Rbf { radius: f64 },
}

impl KernelSpec {
    pub fn polynomial(degree: u32) -> Result<Self> {
        if degree == 0 {
            return Err(Error::InvalidParameter("polynomial degree must be at least 1".into()));
        }
        Ok(KernelSpec::Polynomial { degree })
    }

    pub fn rbf(radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParameter(format!("RBF radius must be positive, got {radius}")));
        }
        Ok(KernelSpec::Rbf { radius })
    }

    /// Whether the kernel has a finite intrinsic feature space.
    pub fn has_feature_map(&self) -> bool {
        matches!(self, KernelSpec::Polynomial { .. })
    }

    pub(crate) fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Polynomial { degree } => Self::polynomial(degree).map(|_| ()),
            KernelSpec::Rbf { radius } => Self::rbf(radius).map(|_| ()),
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Polynomial { degree } => write!(f, "poly{degree}"),
            KernelSpec::Rbf { radius } => write!(f, "rbf(radius={radius})"),
        }
    }
}

fn check_dims(x: &[f64], z: &[f64]) -> Result<()> {
    if x.len() != z.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: z.len(),
        });
    }
    Ok(())
}

#[inline]
fn eval_unchecked(spec: &KernelSpec, x: &[f64], z: &[f64]) -> f64 {
    match *spec {
        KernelSpec::Polynomial { degree } => (1.0 + dot(x, z)).powi(degree as i32),
        KernelSpec::Rbf { radius } => {
            let d2: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
            (-d2 / (2.0 * radius * radius)).exp()
        }
    }
}

pub fn kernel_eval(spec: &KernelSpec, x: &[f64], z: &[f64]) -> Result<f64> {
    check_dims(x, z)?;
    Ok(eval_unchecked(spec, x, z))
}

/// Cross-kernel block: entry `(i, j) = K(xs[i], zs[j])`, so column `j` is the
/// kernel column of `zs[j]` against every row sample.
pub fn kernel_cross<A: AsRef<[f64]>, B: AsRef<[f64]>>(spec: &KernelSpec, xs: &[A], zs: &[B]) -> Result<ColumnBlock> {
    if xs.is_empty() {
        return Err(Error::InvalidParameter("kernel block needs at least one row sample".into()));
    }
    let dim = xs[0].as_ref().len();
    for v in xs.iter().map(AsRef::as_ref).chain(zs.iter().map(AsRef::as_ref)) {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
    }
    let mut data = Vec::with_capacity(xs.len() * zs.len());
    for z in zs {
        for x in xs {
            data.push(eval_unchecked(spec, x.as_ref(), z.as_ref()));
        }
    }
    ColumnBlock::from_col_major(xs.len(), zs.len(), data)
}

/// Number of monomials of degree `<= degree` in `dim` variables,
/// `binomial(dim + degree, degree)`.
pub fn intrinsic_dim(spec: &KernelSpec, dim: usize) -> Result<usize> {
    match *spec {
        KernelSpec::Polynomial { degree } => binomial(dim + degree as usize, degree as usize)
            .ok_or_else(|| Error::InvalidParameter(format!("intrinsic dimension overflows for M={dim}, d={degree}"))),
        KernelSpec::Rbf { .. } => Err(Error::UnsupportedKernel("RBF has no finite intrinsic feature space")),
    }
}

fn binomial(n: usize, k: usize) -> Option<usize> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    usize::try_from(acc).ok()
}

/// One-shot feature map; see [`PolyFeatureMap`] for repeated use.
pub fn feature_map(spec: &KernelSpec, x: &[f64]) -> Result<Vec<f64>> {
    Ok(PolyFeatureMap::new(spec, x.len())?.map(x))
}

/// Precomputed monomial table of the polynomial feature map for a fixed
/// input dimension.
#[derive(Clone, Debug)]
pub struct PolyFeatureMap {
    dim: usize,
    degree: u32,
    coefs: Vec<f64>,
    // Monomial t multiplies vars[offsets[t]..offsets[t + 1]].
    offsets: Vec<usize>,
    vars: Vec<usize>,
}

impl PolyFeatureMap {
    pub fn new(spec: &KernelSpec, dim: usize) -> Result<Self> {
        let degree = match *spec {
            KernelSpec::Polynomial { degree } => degree,
            KernelSpec::Rbf { .. } => {
                return Err(Error::UnsupportedKernel("RBF has no finite intrinsic feature space"))
            }
        };
        let j = intrinsic_dim(spec, dim)?;
        let d = degree as usize;
        let fact = |n: usize| (1..=n).fold(1.0f64, |a, v| a * v as f64);
        let mut coefs = Vec::with_capacity(j);
        let mut offsets = vec![0];
        let mut vars = Vec::new();
        let mut seq: Vec<usize> = Vec::with_capacity(d);
        for k in 0..=d {
            if k > 0 && dim == 0 {
                break;
            }
            seq.clear();
            seq.resize(k, 0);
            loop {
                let mut denom = fact(d - k);
                let mut run = 1;
                for w in 1..=k {
                    if w < k && seq[w] == seq[w - 1] {
                        run += 1;
                    } else {
                        denom *= fact(run);
                        run = 1;
                    }
                }
                coefs.push((fact(d) / denom).sqrt());
                vars.extend_from_slice(&seq);
                offsets.push(vars.len());
                if !next_multiset(&mut seq, dim) {
                    break;
                }
            }
        }
        debug_assert_eq!(coefs.len(), j);
        Ok(PolyFeatureMap {
            dim,
            degree,
            coefs,
            offsets,
            vars,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.dim
    }

    pub fn output_dim(&self) -> usize {
        self.coefs.len()
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn try_map(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(self.map(x))
    }

    /// Panics if `x` has the wrong length.
    pub fn map(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim, "feature map input dimension");
        self.coefs
            .iter()
            .enumerate()
            .map(|(t, &c)| {
                self.vars[self.offsets[t]..self.offsets[t + 1]]
                    .iter()
                    .fold(c, |acc, &v| acc * x[v])
            })
            .collect()
    }
}

// Advances a non-decreasing index sequence over 0..dim in lexicographic order.
fn next_multiset(seq: &mut [usize], dim: usize) -> bool {
    let k = seq.len();
    for pos in (0..k).rev() {
        if seq[pos] + 1 < dim {
            let v = seq[pos] + 1;
            seq[pos..].iter_mut().for_each(|s| *s = v);
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly(d: u32) -> KernelSpec {
        KernelSpec::polynomial(d).unwrap()
    }

    #[test]
    fn kernel_values() {
        assert_eq!(kernel_eval(&poly(2), &[0.0, 0.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(kernel_eval(&poly(2), &[1.0, 1.0], &[1.0, -1.0]).unwrap(), 1.0);
        let rbf = KernelSpec::rbf(DEFAULT_RBF_RADIUS).unwrap();
        assert_eq!(kernel_eval(&rbf, &[0.3, -2.0], &[0.3, -2.0]).unwrap(), 1.0);
        assert!(matches!(
            kernel_eval(&rbf, &[0.0], &[0.0, 1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn feature_map_examples() {
        let phi = feature_map(&poly(2), &[2.0]).unwrap();
        let expect = [1.0, 2.0 * 2f64.sqrt(), 4.0];
        for (a, b) in phi.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((dot(&phi, &phi) - 25.0).abs() < 1e-12);
        assert_eq!(feature_map(&poly(1), &[3.0, 4.0]).unwrap(), vec![1.0, 3.0, 4.0]);
    }

    #[test]
    fn graded_lex_order() {
        // d=2, M=2: 1, x1, x2, x1², x1x2, x2²
        let phi = feature_map(&poly(2), &[2.0, 3.0]).unwrap();
        let s2 = 2f64.sqrt();
        let expect = [1.0, s2 * 2.0, s2 * 3.0, 4.0, s2 * 6.0, 9.0];
        for (a, b) in phi.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{phi:?}");
        }
    }

    #[test]
    fn intrinsic_dims() {
        assert_eq!(intrinsic_dim(&poly(2), 21).unwrap(), 253);
        assert_eq!(intrinsic_dim(&poly(3), 21).unwrap(), 2024);
        assert_eq!(intrinsic_dim(&poly(1), 1).unwrap(), 2);
        assert_eq!(intrinsic_dim(&poly(3), 0).unwrap(), 1);
    }

    #[test]
    fn rbf_is_unsupported_in_intrinsic_space() {
        let rbf = KernelSpec::rbf(1.0).unwrap();
        assert!(matches!(feature_map(&rbf, &[1.0]), Err(Error::UnsupportedKernel(_))));
        assert!(matches!(intrinsic_dim(&rbf, 3), Err(Error::UnsupportedKernel(_))));
    }

    #[test]
    fn invalid_specs() {
        assert!(KernelSpec::polynomial(0).is_err());
        assert!(KernelSpec::rbf(0.0).is_err());
        assert!(KernelSpec::rbf(f64::NAN).is_err());
    }

    #[test]
    fn cross_block_shapes() {
        let b = kernel_cross(&poly(2), &[vec![0.0]], &[vec![0.0]]).unwrap();
        assert_eq!((b.rows(), b.cols(), b.get(0, 0)), (1, 1, 1.0));
        let empty: [Vec<f64>; 0] = [];
        let b = kernel_cross(&poly(2), &[vec![1.0, 2.0]], &empty).unwrap();
        assert_eq!((b.rows(), b.cols()), (1, 0));
    }
}
