//! Empirical-space (dual) kernel ridge regression, for the `M > N` regime and
//! for kernels without a finite feature map.
//!
//! Caches `Q⁻¹ = (K + ρI)⁻¹` and derives
//! `b = yQ⁻¹eᵀ / eQ⁻¹eᵀ`, `a = Q⁻¹(yᵀ − b eᵀ)`. A batch edit first shrinks
//! `Q⁻¹` over the removed rows, then borders it with the added ones.
//!
//! `Q` itself is kept too. After every solve, `(a, b)` is polished by
//! iterative refinement against `Q`, so rounding picked up by the chained
//! `Q⁻¹` does not reach the coefficients.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels::{kernel_cross, kernel_eval, KernelSpec};
use crate::linalg::{axpy, block_inverse_append, block_inverse_remove, check_pivot, spd_inverse, ColumnBlock, SymMatrix};
use crate::sample::{check_training_set, EditBatch, Sample, SampleId};
use crate::{check_ridge, Guard, Predictor, RefreshPolicy};

/// `AdviseRefit` iff `n − |R| < |R|`: the downdate would touch more of `Q⁻¹`
/// than it keeps.
pub fn batch_guard(n: usize, removals: usize) -> Guard {
    if n < 2 * removals {
        Guard::AdviseRefit
    } else {
        Guard::Proceed
    }
}

// Refinement sweeps after the direct solve through `Q⁻¹`.
const REFINE_STEPS: usize = 1;

fn gram(spec: &KernelSpec, ridge: f64, xs: &[Arc<[f64]>]) -> SymMatrix {
    SymMatrix::from_upper_fn(xs.len(), |i, j| {
        let k = kernel_eval(spec, &xs[i], &xs[j]).expect("stored samples share one dimension");
        if i == j {
            k + ridge
        } else {
            k
        }
    })
}

/// `Q` restricted to the kept rows/columns, then bordered with `eta` and
/// `corner` when given.
fn edited_gram(q: &SymMatrix, keep: &[bool], border: Option<(&ColumnBlock, &SymMatrix)>) -> SymMatrix {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < keep.len() {
        if keep[i] {
            let start = i;
            while i < keep.len() && keep[i] {
                i += 1;
            }
            runs.push(start..i);
        } else {
            i += 1;
        }
    }
    let survivors = keep.iter().filter(|&&k| k).count();
    let c = border.map_or(0, |(eta, _)| eta.cols());
    let total = survivors + c;
    let mut data = Vec::with_capacity(total * total);
    for (dst, src) in runs.iter().flat_map(|r| r.clone()).enumerate() {
        let row = q.row(src);
        for r in &runs {
            data.extend_from_slice(&row[r.clone()]);
        }
        if let Some((eta, _)) = border {
            data.extend((0..c).map(|k| eta.get(dst, k)));
        }
    }
    if let Some((eta, corner)) = border {
        for k in 0..c {
            data.extend_from_slice(eta.column(k));
            data.extend_from_slice(corner.row(k));
        }
    }
    SymMatrix::from_symmetric_buffer(total, data)
}

#[derive(Clone, Debug)]
pub struct EmpiricalModel {
    spec: KernelSpec,
    ridge: f64,
    dim: usize,
    q: SymMatrix,
    q_inv: SymMatrix,
    xs: Vec<Arc<[f64]>>,
    ys: Vec<f64>,
    ids: Vec<SampleId>,
    positions: HashMap<SampleId, usize>,
    a: Vec<f64>,
    b: f64,
    policy: RefreshPolicy,
    rounds_since_refresh: usize,
}

impl EmpiricalModel {
    pub fn fit(samples: &[Sample], spec: KernelSpec, ridge: f64) -> Result<Self> {
        Self::fit_with_policy(samples, spec, ridge, RefreshPolicy::default())
    }

    pub fn fit_with_policy(samples: &[Sample], spec: KernelSpec, ridge: f64, policy: RefreshPolicy) -> Result<Self> {
        check_ridge(ridge)?;
        spec.validate()?;
        if samples.is_empty() {
            return Err(Error::EmptyModel);
        }
        let dim = check_training_set(samples)?;
        let xs = samples.iter().map(|s| Arc::from(&s.x[..])).collect();
        let ys = samples.iter().map(|s| s.y).collect();
        let ids = samples.iter().map(|s| s.id).collect();
        Self::from_parts(spec, ridge, dim, xs, ys, ids, policy)
    }

    fn from_parts(
        spec: KernelSpec,
        ridge: f64,
        dim: usize,
        xs: Vec<Arc<[f64]>>,
        ys: Vec<f64>,
        ids: Vec<SampleId>,
        policy: RefreshPolicy,
    ) -> Result<Self> {
        let q = gram(&spec, ridge, &xs);
        let q_inv = spd_inverse(&q)?;
        let positions = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut model = EmpiricalModel {
            spec,
            ridge,
            dim,
            q,
            q_inv,
            xs,
            ys,
            ids,
            positions,
            a: Vec::new(),
            b: 0.0,
            policy,
            rounds_since_refresh: 0,
        };
        model.solve()?;
        Ok(model)
    }

    /// Solves through `Q⁻¹`, then refines against `Q`. Returns the largest
    /// residual of the unrefined solution, which measures how far `Q⁻¹` has
    /// drifted.
    fn solve(&mut self) -> Result<f64> {
        let n = self.ys.len();
        let ones = vec![1.0; n];
        let (w_y, w_e) = self.q_inv.matvec2(&self.ys, &ones);
        let denom: f64 = w_e.iter().sum();
        check_pivot("eQ⁻¹eᵀ", denom, n as f64)?;
        self.b = w_y.iter().sum::<f64>() / denom;
        self.a = w_y;
        axpy(-self.b, &w_e, &mut self.a);

        let mut drift = None;
        for _ in 0..REFINE_STEPS {
            let (r, r0) = self.residual();
            let size = r.iter().fold(r0.abs(), |m, v| m.max(v.abs()));
            drift.get_or_insert(size);
            if size == 0.0 {
                break;
            }
            // Same bordered solve as above, with (r, r0) on the right.
            let w_r = self.q_inv.matvec(&r);
            let db = (w_r.iter().sum::<f64>() - r0) / denom;
            axpy(1.0, &w_r, &mut self.a);
            axpy(-db, &w_e, &mut self.a);
            self.b += db;
        }
        Ok(drift.unwrap_or(0.0))
    }

    /// Residual of `[[Q, e], [eᵀ, 0]] (a, b) = (y, 0)`, split into its `Q`
    /// rows and the constraint row.
    fn residual(&self) -> (Vec<f64>, f64) {
        let mut r = self.q.matvec(&self.a);
        for (ri, yi) in r.iter_mut().zip(&self.ys) {
            *ri = yi - *ri - self.b;
        }
        (r, -self.a.iter().sum::<f64>())
    }

    /// Applies one round of edits: removals first, then additions. Falls back
    /// to a full refit when the guard advises it.
    pub fn update(&self, batch: &EditBatch) -> Result<Self> {
        if batch.is_empty() {
            return Ok(self.clone());
        }
        batch.validate(self.dim, |id| self.positions.contains_key(&id))?;
        let n = self.len();
        if n + batch.additions.len() <= batch.removals.len() {
            return Err(Error::EmptyModel);
        }

        let mut removed: Vec<usize> = batch.removals.iter().map(|id| self.positions[id]).collect();
        removed.sort_unstable();
        let mut keep = vec![true; n];
        removed.iter().for_each(|&i| keep[i] = false);
        let mut xs = Vec::with_capacity(n - removed.len() + batch.additions.len());
        let mut ys = Vec::with_capacity(xs.capacity());
        let mut ids = Vec::with_capacity(xs.capacity());
        for i in (0..n).filter(|&i| keep[i]) {
            xs.push(self.xs[i].clone());
            ys.push(self.ys[i]);
            ids.push(self.ids[i]);
        }
        let survivors = xs.len();
        for s in &batch.additions {
            xs.push(Arc::from(&s.x[..]));
            ys.push(s.y);
            ids.push(s.id);
        }

        if self.batch_guard(batch) == Guard::AdviseRefit {
            log::info!("removing {} of {} samples; refitting directly", removed.len(), n);
            return Self::from_parts(self.spec, self.ridge, self.dim, xs, ys, ids, self.policy);
        }

        let mut q_inv = block_inverse_remove(&self.q_inv, &removed)?;
        let q = if batch.additions.is_empty() {
            edited_gram(&self.q, &keep, None)
        } else {
            let added = &xs[survivors..];
            let eta = kernel_cross(&self.spec, &xs[..survivors], added)?;
            let corner = gram(&self.spec, self.ridge, added);
            q_inv = block_inverse_append(&q_inv, &eta, &corner)?;
            edited_gram(&self.q, &keep, Some((&eta, &corner)))
        };

        let positions = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut next = EmpiricalModel {
            spec: self.spec,
            ridge: self.ridge,
            dim: self.dim,
            q,
            q_inv,
            xs,
            ys,
            ids,
            positions,
            a: Vec::new(),
            b: 0.0,
            policy: self.policy,
            rounds_since_refresh: self.rounds_since_refresh + 1,
        };
        let drift = next.solve()?;
        if next.rounds_since_refresh >= next.policy.every_rounds {
            log::debug!("refreshing Q⁻¹ after {} rounds", next.rounds_since_refresh);
            return next.refit();
        }
        let scale = next.ys.iter().fold(1.0f64, |m, y| m.max(y.abs()));
        if !(drift <= next.policy.residual_tolerance * scale) {
            log::debug!("refreshing Q⁻¹: normal-equation residual {drift:e}");
            return next.refit();
        }
        Ok(next)
    }

    pub fn batch_guard(&self, batch: &EditBatch) -> Guard {
        batch_guard(self.len(), batch.removals.len())
    }

    /// Refits from scratch on the stored samples, keeping their order.
    pub fn refit(&self) -> Result<Self> {
        Self::from_parts(
            self.spec,
            self.ridge,
            self.dim,
            self.xs.clone(),
            self.ys.clone(),
            self.ids.clone(),
            self.policy,
        )
    }

    pub fn spec(&self) -> KernelSpec {
        self.spec
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn input_dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn q_inv(&self) -> &SymMatrix {
        &self.q_inv
    }

    /// Dual coefficients in storage order (see [`ids`](Self::ids)).
    pub fn coefficients(&self) -> &[f64] {
        &self.a
    }

    pub fn bias(&self) -> f64 {
        self.b
    }

    pub fn ids(&self) -> &[SampleId] {
        &self.ids
    }

    pub fn labels(&self) -> &[f64] {
        &self.ys
    }

    pub fn samples(&self) -> impl Iterator<Item = (SampleId, &[f64], f64)> + '_ {
        self.ids
            .iter()
            .zip(&self.xs)
            .zip(&self.ys)
            .map(|((&id, x), &y)| (id, &x[..], y))
    }

    pub fn coefficient(&self, id: SampleId) -> Option<f64> {
        self.positions.get(&id).map(|&i| self.a[i])
    }

    /// `(a, b)` with `a` laid out in the order of `order`; fails if `order`
    /// names a sample that is not stored or misses one that is.
    pub fn parameters_by_id(&self, order: &[SampleId]) -> Result<Vec<f64>> {
        if order.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: order.len(),
            });
        }
        let mut v = order
            .iter()
            .map(|&id| self.coefficient(id).ok_or(Error::UnknownSample(id)))
            .collect::<Result<Vec<_>>>()?;
        v.push(self.b);
        Ok(v)
    }

    /// `(a, b)` in storage order.
    pub fn parameters(&self) -> Vec<f64> {
        let mut v = self.a.clone();
        v.push(self.b);
        v
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&EmpiricalDump::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<EmpiricalDump>(text)?.try_into()
    }
}

impl Predictor for EmpiricalModel {
    fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let s: f64 = self
            .xs
            .iter()
            .zip(&self.a)
            .map(|(xi, ai)| ai * kernel_eval(&self.spec, xi, x).expect("checked dimension"))
            .sum();
        Ok(s + self.b)
    }
}

const EMPIRICAL_FORMAT: &str = "krr-stream/empirical";
use crate::krr_intrinsic::{MemberDump, FORMAT_VERSION};

#[derive(Serialize, Deserialize)]
struct EmpiricalDump {
    format: String,
    version: u32,
    spec: KernelSpec,
    ridge: f64,
    input_dim: usize,
    q_inv: SymMatrix,
    a: Vec<f64>,
    b: f64,
    policy: RefreshPolicy,
    rounds_since_refresh: usize,
    samples: Vec<MemberDump>,
}

impl From<&EmpiricalModel> for EmpiricalDump {
    fn from(m: &EmpiricalModel) -> Self {
        EmpiricalDump {
            format: EMPIRICAL_FORMAT.into(),
            version: FORMAT_VERSION,
            spec: m.spec,
            ridge: m.ridge,
            input_dim: m.dim,
            q_inv: m.q_inv.clone(),
            a: m.a.clone(),
            b: m.b,
            policy: m.policy,
            rounds_since_refresh: m.rounds_since_refresh,
            samples: m
                .samples()
                .map(|(id, x, y)| MemberDump {
                    id,
                    values: x.to_vec(),
                    label: y,
                })
                .collect(),
        }
    }
}

impl TryFrom<EmpiricalDump> for EmpiricalModel {
    type Error = Error;

    fn try_from(d: EmpiricalDump) -> Result<Self> {
        if d.format != EMPIRICAL_FORMAT || d.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "expected {EMPIRICAL_FORMAT} v{FORMAT_VERSION}, got {} v{}",
                d.format, d.version
            )));
        }
        check_ridge(d.ridge)?;
        d.spec.validate()?;
        let n = d.samples.len();
        let shapes_ok = n >= 1
            && d.q_inv.order() == n
            && d.a.len() == n
            && d.samples.iter().all(|s| s.values.len() == d.input_dim);
        if !shapes_ok {
            return Err(Error::Format(format!("inconsistent shapes for {n} stored samples")));
        }
        let mut positions = HashMap::with_capacity(n);
        for (i, s) in d.samples.iter().enumerate() {
            if positions.insert(s.id, i).is_some() {
                return Err(Error::DuplicateSample(s.id));
            }
        }
        let xs: Vec<Arc<[f64]>> = d.samples.iter().map(|s| Arc::from(&s.values[..])).collect();
        Ok(EmpiricalModel {
            spec: d.spec,
            ridge: d.ridge,
            dim: d.input_dim,
            q: gram(&d.spec, d.ridge, &xs),
            q_inv: d.q_inv,
            ids: d.samples.iter().map(|s| s.id).collect(),
            ys: d.samples.iter().map(|s| s.label).collect(),
            xs,
            positions,
            a: d.a,
            b: d.b,
            policy: d.policy,
            rounds_since_refresh: d.rounds_since_refresh,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly(d: u32) -> KernelSpec {
        KernelSpec::polynomial(d).unwrap()
    }

    fn data(n: u64) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let t = i as f64 * 0.61;
                Sample::new(i, vec![t.cos(), (0.5 * t).sin(), 0.1 * t], if i % 2 == 0 { 1.0 } else { -1.0 })
            })
            .collect()
    }

    #[test]
    fn single_point_constant_fit() {
        let m = EmpiricalModel::fit(&[Sample::new(0, vec![0.0], 3.0)], poly(2), 0.5).unwrap();
        assert!((m.q_inv().get(0, 0) - 1.0 / 1.5).abs() < 1e-15);
        assert!((m.bias() - 3.0).abs() < 1e-12);
        assert!(m.coefficients()[0].abs() < 1e-12);
    }

    #[test]
    fn constant_labels() {
        let samples: Vec<Sample> = data(10).into_iter().map(|s| Sample { y: -1.5, ..s }).collect();
        let m = EmpiricalModel::fit(&samples, KernelSpec::rbf(2.0).unwrap(), 0.5).unwrap();
        assert!(m.coefficients().iter().all(|a| a.abs() < 1e-12));
        assert!((m.predict(&[4.0, 4.0, 4.0]).unwrap() + 1.5).abs() < 1e-12);
    }

    #[test]
    fn classify_tie_goes_positive() {
        let m = EmpiricalModel::fit(&[Sample::new(0, vec![0.0], 0.0)], poly(1), 0.5).unwrap();
        assert_eq!(m.classify(&[1.0], 0.0).unwrap(), 1.0);
        assert_eq!(m.classify(&[1.0], 0.3).unwrap(), -1.0);
        assert_eq!(m.classify(&[1.0], -0.3).unwrap(), 1.0);
    }

    #[test]
    fn identity_edit_is_bitwise_noop() {
        let m = EmpiricalModel::fit(&data(8), poly(2), 0.5).unwrap();
        let same = m.update(&EditBatch::default()).unwrap();
        assert_eq!(same.parameters(), m.parameters());
        assert_eq!(same.q_inv(), m.q_inv());
    }

    #[test]
    fn combined_round_matches_refit() {
        let all = data(20);
        let m = EmpiricalModel::fit(&all[..14], poly(3), 0.5).unwrap();
        let batch = EditBatch::new(all[14..18].to_vec(), vec![SampleId(2), SampleId(9)]);
        let up = m.update(&batch).unwrap();
        let oracle = up.refit().unwrap();
        assert!(crate::relative_deviation(&up.parameters(), &oracle.parameters()) < 1e-10);
        assert_eq!(up.ids().len(), 16);
        assert!(up.coefficient(SampleId(9)).is_none());
    }

    #[test]
    fn cached_gram_follows_edits() {
        let all = data(20);
        let m = EmpiricalModel::fit(&all[..14], poly(3), 0.5).unwrap();
        let removals = EditBatch::new(vec![], vec![SampleId(0), SampleId(5), SampleId(6)]);
        let mixed = EditBatch::new(all[14..17].to_vec(), vec![SampleId(13), SampleId(1)]);
        for up in [m.update(&removals).unwrap(), m.update(&removals).unwrap().update(&mixed).unwrap()] {
            let fresh = gram(&up.spec, up.ridge, &up.xs);
            assert_eq!(up.q.order(), up.len());
            assert!(up.q.relative_error(&fresh) < 1e-15);
            assert_eq!(up.q.max_asymmetry(), 0.0);
        }
    }

    #[test]
    fn refinement_leaves_small_residual() {
        let all = data(30);
        let mut m = EmpiricalModel::fit(&all[..20], poly(3), 0.5).unwrap();
        for k in 0..5u64 {
            let batch = EditBatch::new(all[20 + 2 * k as usize..22 + 2 * k as usize].to_vec(), vec![SampleId(k)]);
            m = m.update(&batch).unwrap();
        }
        let (r, r0) = m.residual();
        let scale = m.q.max_abs() * m.coefficients().iter().fold(1.0f64, |a, v| a.max(v.abs()));
        assert!(r.iter().fold(r0.abs(), |a, v| a.max(v.abs())) < 1e-13 * scale);
    }

    #[test]
    fn guard_refits_large_removals() {
        assert_eq!(batch_guard(10, 5), Guard::Proceed);
        assert_eq!(batch_guard(9, 5), Guard::AdviseRefit);
        let all = data(6);
        let m = EmpiricalModel::fit(&all[..4], poly(2), 0.5).unwrap();
        let batch = EditBatch::new(all[4..].to_vec(), (0..3).map(SampleId).collect());
        assert_eq!(m.batch_guard(&batch), Guard::AdviseRefit);
        let up = m.update(&batch).unwrap();
        let direct = EmpiricalModel::fit(&[all[3].clone(), all[4].clone(), all[5].clone()], poly(2), 0.5).unwrap();
        assert_eq!(up.parameters(), direct.parameters());
    }

    #[test]
    fn removing_everything_is_empty() {
        let m = EmpiricalModel::fit(&data(3), poly(2), 0.5).unwrap();
        let all = EditBatch::remove_only(m.ids().to_vec());
        assert!(matches!(m.update(&all), Err(Error::EmptyModel)));
    }

    #[test]
    fn parameters_by_id_checks_membership() {
        let m = EmpiricalModel::fit(&data(3), poly(2), 0.5).unwrap();
        let order = [SampleId(2), SampleId(0), SampleId(1)];
        let p = m.parameters_by_id(&order).unwrap();
        assert_eq!(p[0], m.coefficients()[2]);
        assert!(m.parameters_by_id(&[SampleId(0)]).is_err());
        assert!(m.parameters_by_id(&[SampleId(0), SampleId(1), SampleId(7)]).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let m = EmpiricalModel::fit(&data(9), KernelSpec::rbf(1.3).unwrap(), 0.5).unwrap();
        let back = EmpiricalModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back.parameters(), m.parameters());
        assert_eq!(back.q_inv(), m.q_inv());
        assert_eq!(back.predict(&[0.1, 0.2, 0.3]).unwrap(), m.predict(&[0.1, 0.2, 0.3]).unwrap());
    }
}
