//! Intrinsic-space kernel ridge regression (the `N > M` regime).
//!
//! The model minimizes `Σᵢ (uᵀφ(xᵢ) + b − yᵢ)² + ρ‖u‖²`. It keeps the
//! sufficient statistics `S⁻¹ = (ΦΦᵀ + ρI)⁻¹`, `p = Φyᵀ`, `s = Φeᵀ`, `eyᵀ`
//! and `n`, from which `(u, b)` is re-derived after every edit through the
//! Schur complement of the bordered system
//!
//! ```text
//! [ S    s ] [u]   [ p   ]
//! [ sᵀ   n ] [b] = [ eyᵀ ]
//! ```
//!
//! i.e. `b = (eyᵀ − sᵀS⁻¹p) / (n − sᵀS⁻¹s)` and `u = S⁻¹(p − b s)`. Only
//! `S⁻¹` is ever consumed, so a batch edit costs one Woodbury update.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels::{KernelSpec, PolyFeatureMap};
use crate::linalg::{axpy, dot, rankk_update, spd_inverse, ColumnBlock, SymMatrix};
use crate::sample::{check_training_set, EditBatch, Sample, SampleId};
use crate::{check_ridge, Guard, Predictor, RefreshPolicy};

#[derive(Clone, Debug)]
struct Member {
    features: Arc<[f64]>,
    label: f64,
}

/// `AdviseRefit` iff `|C| + |R| >= J`: beyond that the inner Woodbury system
/// is at least as large as `S` itself.
pub fn batch_guard(feature_dim: usize, additions: usize, removals: usize) -> Guard {
    if additions + removals >= feature_dim {
        Guard::AdviseRefit
    } else {
        Guard::Proceed
    }
}

#[derive(Clone, Debug)]
pub struct IntrinsicModel {
    spec: KernelSpec,
    ridge: f64,
    map: PolyFeatureMap,
    s_inv: SymMatrix,
    p: Vec<f64>,
    s: Vec<f64>,
    y_sum: f64,
    u: Vec<f64>,
    b: f64,
    members: IndexMap<SampleId, Member>,
    policy: RefreshPolicy,
    rounds_since_refresh: usize,
}

impl IntrinsicModel {
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
        let map = PolyFeatureMap::new(&spec, dim)?;
        let members = samples
            .iter()
            .map(|s| {
                let m = Member {
                    features: map.map(&s.x).into(),
                    label: s.y,
                };
                (s.id, m)
            })
            .collect();
        Self::from_members(spec, ridge, map, members, policy)
    }

    fn from_members(
        spec: KernelSpec,
        ridge: f64,
        map: PolyFeatureMap,
        members: IndexMap<SampleId, Member>,
        policy: RefreshPolicy,
    ) -> Result<Self> {
        let j = map.output_dim();
        let mut gram = vec![0.0; j * j];
        let mut p = vec![0.0; j];
        let mut s = vec![0.0; j];
        let mut y_sum = 0.0;
        for m in members.values() {
            let f = &m.features;
            for i in 0..j {
                axpy(f[i], &f[i..], &mut gram[i * j + i..(i + 1) * j]);
            }
            axpy(m.label, f, &mut p);
            axpy(1.0, f, &mut s);
            y_sum += m.label;
        }
        for i in 0..j {
            gram[i * j + i] += ridge;
        }
        let s_inv = spd_inverse(&SymMatrix::from_upper_buffer(j, gram))?;
        let mut model = IntrinsicModel {
            spec,
            ridge,
            map,
            s_inv,
            p,
            s,
            y_sum,
            u: vec![0.0; j],
            b: 0.0,
            members,
            policy,
            rounds_since_refresh: 0,
        };
        model.solve()?;
        Ok(model)
    }

    fn solve(&mut self) -> Result<()> {
        let n = self.members.len() as f64;
        let (w_p, w_s) = self.s_inv.matvec2(&self.p, &self.s);
        let denom = n - dot(&self.s, &w_s);
        crate::linalg::check_pivot("bias Schur complement", denom, n)?;
        self.b = (self.y_sum - dot(&self.s, &w_p)) / denom;
        self.u = w_p;
        axpy(-self.b, &w_s, &mut self.u);
        Ok(())
    }

    /// Applies one round of edits with a single combined Woodbury update of
    /// `S⁻¹`. The model is not modified; the edited model is returned.
    pub fn update(&self, batch: &EditBatch) -> Result<Self> {
        if batch.is_empty() {
            return Ok(self.clone());
        }
        batch.validate(self.map.input_dim(), |id| self.members.contains_key(&id))?;
        if self.members.len() + batch.additions.len() <= batch.removals.len() {
            return Err(Error::EmptyModel);
        }
        if self.batch_guard(batch) == Guard::AdviseRefit {
            log::warn!(
                "batch of {} edits is not smaller than the intrinsic dimension {}; updating anyway",
                batch.len(),
                self.feature_dim()
            );
        }
        let j = self.feature_dim();
        let added: Vec<Member> = batch
            .additions
            .iter()
            .map(|s| Member {
                features: self.map.map(&s.x).into(),
                label: s.y,
            })
            .collect();
        let removed: Vec<&Member> = batch.removals.iter().map(|id| &self.members[id]).collect();

        let phi_c = ColumnBlock::from_columns(j, &added.iter().map(|m| &m.features[..]).collect::<Vec<_>>())?;
        let phi_r = ColumnBlock::from_columns(j, &removed.iter().map(|m| &m.features[..]).collect::<Vec<_>>())?;
        let s_inv = rankk_update(&self.s_inv, &phi_c, &phi_r)?;

        let mut next = IntrinsicModel {
            s_inv,
            ..self.clone()
        };
        for m in &added {
            axpy(m.label, &m.features, &mut next.p);
            axpy(1.0, &m.features, &mut next.s);
            next.y_sum += m.label;
        }
        for m in &removed {
            axpy(-m.label, &m.features, &mut next.p);
            axpy(-1.0, &m.features, &mut next.s);
            next.y_sum -= m.label;
        }
        for id in &batch.removals {
            next.members.shift_remove(id);
        }
        for (s, m) in batch.additions.iter().zip(added) {
            next.members.insert(s.id, m);
        }
        next.rounds_since_refresh += 1;
        if next.rounds_since_refresh >= next.policy.every_rounds {
            log::debug!("refreshing S⁻¹ after {} rounds", next.rounds_since_refresh);
            return Self::from_members(next.spec, next.ridge, next.map, next.members, next.policy);
        }
        next.solve()?;
        Ok(next)
    }

    pub fn batch_guard(&self, batch: &EditBatch) -> Guard {
        batch_guard(self.feature_dim(), batch.additions.len(), batch.removals.len())
    }

    /// Refits from scratch on the current members, in membership order.
    pub fn refit(&self) -> Result<Self> {
        Self::from_members(self.spec, self.ridge, self.map.clone(), self.members.clone(), self.policy)
    }

    pub fn spec(&self) -> KernelSpec {
        self.spec
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// Intrinsic dimension `J`.
    pub fn feature_dim(&self) -> usize {
        self.map.output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.map.input_dim()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.u
    }

    pub fn bias(&self) -> f64 {
        self.b
    }

    /// `(u, b)` as one vector.
    pub fn parameters(&self) -> Vec<f64> {
        let mut v = self.u.clone();
        v.push(self.b);
        v
    }

    pub fn s_inv(&self) -> &SymMatrix {
        &self.s_inv
    }

    /// Cached `Φyᵀ`.
    pub fn feature_label_sum(&self) -> &[f64] {
        &self.p
    }

    /// Cached `Φeᵀ`.
    pub fn feature_sum(&self) -> &[f64] {
        &self.s
    }

    pub fn ids(&self) -> impl Iterator<Item = SampleId> + '_ {
        self.members.keys().copied()
    }

    /// Stored `(id, φ(x), y)` in membership order.
    pub fn members(&self) -> impl Iterator<Item = (SampleId, &[f64], f64)> + '_ {
        self.members.iter().map(|(&id, m)| (id, &m.features[..], m.label))
    }

    pub fn feature_map(&self) -> &PolyFeatureMap {
        &self.map
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&IntrinsicDump::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<IntrinsicDump>(text)?.try_into()
    }
}

impl Predictor for IntrinsicModel {
    fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(dot(&self.u, &self.map.try_map(x)?) + self.b)
    }
}

pub(crate) const INTRINSIC_FORMAT: &str = "krr-stream/intrinsic";
pub(crate) const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
pub(crate) struct MemberDump {
    pub id: SampleId,
    pub values: Vec<f64>,
    pub label: f64,
}

#[derive(Serialize, Deserialize)]
struct IntrinsicDump {
    format: String,
    version: u32,
    spec: KernelSpec,
    ridge: f64,
    input_dim: usize,
    s_inv: SymMatrix,
    p: Vec<f64>,
    s: Vec<f64>,
    y_sum: f64,
    n: usize,
    u: Vec<f64>,
    b: f64,
    policy: RefreshPolicy,
    rounds_since_refresh: usize,
    members: Vec<MemberDump>,
}

impl From<&IntrinsicModel> for IntrinsicDump {
    fn from(m: &IntrinsicModel) -> Self {
        IntrinsicDump {
            format: INTRINSIC_FORMAT.into(),
            version: FORMAT_VERSION,
            spec: m.spec,
            ridge: m.ridge,
            input_dim: m.map.input_dim(),
            s_inv: m.s_inv.clone(),
            p: m.p.clone(),
            s: m.s.clone(),
            y_sum: m.y_sum,
            n: m.members.len(),
            u: m.u.clone(),
            b: m.b,
            policy: m.policy,
            rounds_since_refresh: m.rounds_since_refresh,
            members: m
                .members
                .iter()
                .map(|(&id, mem)| MemberDump {
                    id,
                    values: mem.features.to_vec(),
                    label: mem.label,
                })
                .collect(),
        }
    }
}

impl TryFrom<IntrinsicDump> for IntrinsicModel {
    type Error = Error;

    fn try_from(d: IntrinsicDump) -> Result<Self> {
        if d.format != INTRINSIC_FORMAT || d.version != FORMAT_VERSION {
            return Err(Error::Format(format!("expected {INTRINSIC_FORMAT} v{FORMAT_VERSION}, got {} v{}", d.format, d.version)));
        }
        check_ridge(d.ridge)?;
        let map = PolyFeatureMap::new(&d.spec, d.input_dim)?;
        let j = map.output_dim();
        let shapes_ok = d.s_inv.order() == j
            && d.p.len() == j
            && d.s.len() == j
            && d.u.len() == j
            && d.n == d.members.len()
            && d.members.iter().all(|m| m.values.len() == j);
        if !shapes_ok {
            return Err(Error::Format(format!("inconsistent shapes for intrinsic dimension {j}")));
        }
        let mut members = IndexMap::with_capacity(d.members.len());
        for m in d.members {
            let member = Member {
                features: m.values.into(),
                label: m.label,
            };
            if members.insert(m.id, member).is_some() {
                return Err(Error::DuplicateSample(m.id));
            }
        }
        Ok(IntrinsicModel {
            spec: d.spec,
            ridge: d.ridge,
            map,
            s_inv: d.s_inv,
            p: d.p,
            s: d.s,
            y_sum: d.y_sum,
            u: d.u,
            b: d.b,
            members,
            policy: d.policy,
            rounds_since_refresh: d.rounds_since_refresh,
        })
    }
}
