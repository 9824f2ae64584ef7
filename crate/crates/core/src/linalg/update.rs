use super::dense::{check_pivot, SmallLu};
use super::{axpy, dot, ColumnBlock, SymMatrix};
use crate::error::{Error, Result};

/// Direction of a rank-one modification: `S + v vᵀ` or `S − v vᵀ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

// Asymmetry of the bordered Schur complement beyond this (relative) level
// means the inputs were not a symmetric bordering.
const SCHUR_SYMMETRY_TOLERANCE: f64 = 1e-8;

fn check_rows(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// `(S ± v vᵀ)⁻¹` from `S⁻¹` (Sherman-Morrison), `O(J²)`.
///
/// A downdate whose denominator `1 − vᵀS⁻¹v` is not safely positive would
/// leave an indefinite matrix and is reported as [`Error::SingularPivot`].
pub fn rank1_update(s_inv: &SymMatrix, v: &[f64], sign: Sign) -> Result<SymMatrix> {
    let n = s_inv.order();
    check_rows(n, v.len())?;
    let w = s_inv.matvec(v);
    let q = dot(v, &w);
    let pivot = 1.0 + sign.value() * q;
    check_pivot("rank-1 update denominator", pivot, q)?;
    if sign == Sign::Minus && pivot <= 0.0 {
        return Err(Error::SingularPivot {
            context: "rank-1 downdate denominator",
            pivot,
            tolerance: 0.0,
        });
    }
    let coef = sign.value() / pivot;
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        let row = &mut out[i * n + i..(i + 1) * n];
        row.copy_from_slice(&s_inv.row(i)[i..]);
        axpy(-coef * w[i], &w[i..], row);
    }
    Ok(SymMatrix::from_upper_buffer(n, out))
}

/// `(S + Φ_C Φ_Cᵀ − Φ_R Φ_Rᵀ)⁻¹` from `S⁻¹` in a single Woodbury step.
///
/// With `Φ_H = [Φ_C | Φ_R]` and `Φ'_H = [Φ_C | −Φ_R]ᵀ` the result is
/// `S⁻¹ − S⁻¹Φ_H (I + Φ'_H S⁻¹ Φ_H)⁻¹ Φ'_H S⁻¹`. The inner system has order
/// `|C| + |R|` and is solved by pivoted LU; the `J × J` work is one sweep to
/// form `S⁻¹Φ_H` and one rank-`k` correction.
pub fn rankk_update(s_inv: &SymMatrix, add: &ColumnBlock, remove: &ColumnBlock) -> Result<SymMatrix> {
    let n = s_inv.order();
    check_rows(n, add.rows())?;
    check_rows(n, remove.rows())?;
    let k = add.cols() + remove.cols();
    if k == 0 {
        return Ok(s_inv.clone());
    }
    let cols: Vec<&[f64]> = add.columns().chain(remove.columns()).collect();
    let signs: Vec<f64> = (0..k)
        .map(|c| if c < add.cols() { 1.0 } else { -1.0 })
        .collect();

    // pt[c] = (S⁻¹ Φ_H)[:, c], stored as rows.
    let mut pt = vec![0.0; k * n];
    for i in 0..n {
        let row = s_inv.row(i);
        for (c, col) in cols.iter().enumerate() {
            pt[c * n + i] = dot(row, col);
        }
    }

    let mut inner = vec![0.0; k * k];
    let mut leading = 0.0f64;
    for a in 0..k {
        for b in 0..k {
            let g = dot(cols[a], &pt[b * n..(b + 1) * n]);
            leading = leading.max(g.abs());
            inner[a * k + b] = signs[a] * g + if a == b { 1.0 } else { 0.0 };
        }
    }
    let lu = SmallLu::factor(k, inner, leading, "woodbury inner matrix")?;

    // x = (I + Φ'_H S⁻¹ Φ_H)⁻¹ Φ'_H S⁻¹
    let mut x = pt.clone();
    for (c, &s) in signs.iter().enumerate() {
        if s < 0.0 {
            x[c * n..(c + 1) * n].iter_mut().for_each(|v| *v = -*v);
        }
    }
    lu.solve_rows(&mut x, n);

    let mut out = vec![0.0; n * n];
    for i in 0..n {
        let row = &mut out[i * n + i..(i + 1) * n];
        row.copy_from_slice(&s_inv.row(i)[i..]);
        for c in 0..k {
            axpy(-pt[c * n + i], &x[c * n + i..(c + 1) * n], row);
        }
    }
    Ok(SymMatrix::from_upper_buffer(n, out))
}

/// Inverse of the bordered matrix `[[Q, η], [ηᵀ, Q_CC]]` from `Q⁻¹`.
///
/// With `G = −Q⁻¹η` and `Z = Q_CC − ηᵀQ⁻¹η` the result is
/// `[[Q⁻¹ + G Z⁻¹ Gᵀ, G Z⁻¹], [Z⁻¹ Gᵀ, Z⁻¹]]`; the `N × N` block is never
/// re-inverted. Appended rows/columns land at the end, in `eta` column order.
pub fn block_inverse_append(q_inv: &SymMatrix, eta: &ColumnBlock, corner: &SymMatrix) -> Result<SymMatrix> {
    let n = q_inv.order();
    check_rows(n, eta.rows())?;
    let c = eta.cols();
    check_rows(c, corner.order())?;

    let mut gt = vec![0.0; c * n];
    for i in 0..n {
        let row = q_inv.row(i);
        for (k, col) in eta.columns().enumerate() {
            gt[k * n + i] = -dot(row, col);
        }
    }

    let mut z = vec![0.0; c * c];
    let mut leading = corner.max_abs();
    for a in 0..c {
        for b in 0..c {
            let t = dot(eta.column(a), &gt[b * n..(b + 1) * n]);
            leading = leading.max(t.abs());
            z[a * c + b] = corner.get(a, b) + t;
        }
    }
    for a in 0..c {
        for b in (a + 1)..c {
            let gap = (z[a * c + b] - z[b * c + a]).abs();
            if gap > SCHUR_SYMMETRY_TOLERANCE * (1.0 + leading) {
                return Err(Error::SingularPivot {
                    context: "asymmetric bordered Schur complement",
                    pivot: gap,
                    tolerance: SCHUR_SYMMETRY_TOLERANCE * (1.0 + leading),
                });
            }
            let avg = 0.5 * (z[a * c + b] + z[b * c + a]);
            z[a * c + b] = avg;
            z[b * c + a] = avg;
        }
    }
    let lu = SmallLu::factor(c, z, leading, "bordered Schur complement")?;
    let z_inv = lu.inverse();

    let mut wt = gt.clone();
    lu.solve_rows(&mut wt, n);

    let total = n + c;
    let mut out = vec![0.0; total * total];
    for i in 0..n {
        let row = &mut out[i * total..(i + 1) * total];
        let tail = &mut row[i..n];
        tail.copy_from_slice(&q_inv.row(i)[i..]);
        for k in 0..c {
            axpy(gt[k * n + i], &wt[k * n + i..(k + 1) * n], tail);
        }
        for k in 0..c {
            row[n + k] = wt[k * n + i];
        }
    }
    for a in 0..c {
        for b in a..c {
            // z_inv comes from an LU solve; average to keep the corner symmetric.
            out[(n + a) * total + n + b] = 0.5 * (z_inv[a * c + b] + z_inv[b * c + a]);
        }
    }
    Ok(SymMatrix::from_upper_buffer(total, out))
}

/// Inverse of `Q` with the rows/columns in `indices` deleted, from `Q⁻¹`.
///
/// Partitioning `Q⁻¹` (removed indices virtually permuted to the end) into
/// `Θ`, `ξ_R`, `θ_R`, the result is `Θ − ξ_R θ_R⁻¹ ξ_Rᵀ`. Surviving indices
/// keep their relative order. Indices are zero-based.
pub fn block_inverse_remove(q_inv: &SymMatrix, indices: &[usize]) -> Result<SymMatrix> {
    let n = q_inv.order();
    if indices.is_empty() {
        return Ok(q_inv.clone());
    }
    let mut removed = indices.to_vec();
    removed.sort_unstable();
    for w in removed.windows(2) {
        if w[0] == w[1] {
            return Err(Error::InvalidParameter(format!("index {} removed twice", w[0])));
        }
    }
    if let Some(&bad) = removed.iter().find(|&&i| i >= n) {
        return Err(Error::IndexOutOfRange { index: bad, order: n });
    }
    let r = removed.len();
    if r >= n {
        return Err(Error::InvalidParameter(format!(
            "cannot remove {r} of {n} rows from an inverse"
        )));
    }

    let mut runs: Vec<(usize, usize)> = Vec::with_capacity(r + 1);
    let mut start = 0;
    for &idx in &removed {
        if idx > start {
            runs.push((start, idx - start));
        }
        start = idx + 1;
    }
    if start < n {
        runs.push((start, n - start));
    }
    let gather = |src: &[f64], dst: &mut [f64]| {
        let mut at = 0;
        for &(s, len) in &runs {
            dst[at..at + len].copy_from_slice(&src[s..s + len]);
            at += len;
        }
    };
    let m = n - r;

    let mut theta = vec![0.0; r * r];
    for a in 0..r {
        for b in 0..r {
            theta[a * r + b] = q_inv.get(removed[a], removed[b]);
        }
    }
    let leading = theta.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let lu = SmallLu::factor(r, theta, leading, "removed block of the inverse")?;

    let mut xi_t = vec![0.0; r * m];
    for (a, &idx) in removed.iter().enumerate() {
        gather(q_inv.row(idx), &mut xi_t[a * m..(a + 1) * m]);
    }
    let mut wt = xi_t.clone();
    lu.solve_rows(&mut wt, m);

    let mut out = vec![0.0; m * m];
    let mut i = 0;
    for &(s, len) in &runs {
        for src in s..s + len {
            let row = &mut out[i * m..(i + 1) * m];
            gather(q_inv.row(src), row);
            let tail = &mut row[i..];
            for a in 0..r {
                axpy(-xi_t[a * m + i], &wt[a * m + i..(a + 1) * m], tail);
            }
            i += 1;
        }
    }
    Ok(SymMatrix::from_upper_buffer(m, out))
}
