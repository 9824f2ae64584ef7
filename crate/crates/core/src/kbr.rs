//! Kernelized Bayesian regression in intrinsic space.
//!
//! Prior `u ~ N(μ_u, σ_u² I)`, likelihood `y = uᵀφ(x) + b` with
//! `b ~ N(0, σ_b²)`. The posterior is Gaussian with
//! `Σ = (I/σ_u² + ΦΦᵀ/σ_b²)⁻¹` and `μ = Σ(μ_u/σ_u² + Φyᵀ/σ_b²)`, so a batch of
//! edits changes the precision by `(Φ_CΦ_Cᵀ − Φ_RΦ_Rᵀ)/σ_b²` and `Σ` follows
//! from one Woodbury step.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{KernelSpec, PolyFeatureMap};
use crate::krr_intrinsic::{MemberDump, FORMAT_VERSION};
use crate::linalg::{axpy, dot, rankk_update, spd_inverse, ColumnBlock, SymMatrix};
use crate::sample::{check_training_set, EditBatch, Sample, SampleId};
use crate::{Predictor, RefreshPolicy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BayesPrior {
    /// Prior mean of `u`; `None` is the zero vector.
    pub mean: Option<Vec<f64>>,
    pub sigma_u2: f64,
    pub sigma_b2: f64,
}

impl Default for BayesPrior {
    fn default() -> Self {
        BayesPrior {
            mean: None,
            sigma_u2: 0.01,
            sigma_b2: 0.01,
        }
    }
}

impl BayesPrior {
    pub fn isotropic(sigma_u2: f64, sigma_b2: f64) -> Result<Self> {
        let prior = BayesPrior {
            mean: None,
            sigma_u2,
            sigma_b2,
        };
        prior.validate(None)?;
        Ok(prior)
    }

    pub fn with_mean(mut self, mean: Vec<f64>) -> Self {
        self.mean = Some(mean);
        self
    }

    fn validate(&self, j: Option<usize>) -> Result<()> {
        for (name, v) in [("sigma_u2", self.sigma_u2), ("sigma_b2", self.sigma_b2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if let (Some(mean), Some(j)) = (&self.mean, j) {
            if mean.len() != j {
                return Err(Error::DimensionMismatch {
                    expected: j,
                    got: mean.len(),
                });
            }
        }
        Ok(())
    }

    fn mean_or_zero(&self, j: usize) -> Vec<f64> {
        self.mean.clone().unwrap_or_else(|| vec![0.0; j])
    }
}

/// Gaussian predictive distribution of a new output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDist {
    pub mean: f64,
    pub variance: f64,
}

#[derive(Clone, Debug)]
struct Member {
    features: Vec<f64>,
    label: f64,
}

#[derive(Clone, Debug)]
pub struct BayesPosterior {
    spec: KernelSpec,
    map: PolyFeatureMap,
    prior: BayesPrior,
    mu: Vec<f64>,
    sigma: SymMatrix,
    gram: SymMatrix,
    xy: Vec<f64>,
    members: IndexMap<SampleId, Member>,
    policy: RefreshPolicy,
    rounds_since_refresh: usize,
}

impl BayesPosterior {
    /// Posterior after observing `samples` (possibly none) of input dimension
    /// `dim`.
    pub fn fit(dim: usize, samples: &[Sample], prior: BayesPrior, spec: KernelSpec) -> Result<Self> {
        Self::fit_with_policy(dim, samples, prior, spec, RefreshPolicy::default())
    }

    pub fn fit_with_policy(
        dim: usize,
        samples: &[Sample],
        prior: BayesPrior,
        spec: KernelSpec,
        policy: RefreshPolicy,
    ) -> Result<Self> {
        spec.validate()?;
        let map = PolyFeatureMap::new(&spec, dim)?;
        prior.validate(Some(map.output_dim()))?;
        if !samples.is_empty() {
            let seen = check_training_set(samples)?;
            if seen != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: seen,
                });
            }
        }
        let members = samples
            .iter()
            .map(|s| {
                let m = Member {
                    features: map.map(&s.x),
                    label: s.y,
                };
                (s.id, m)
            })
            .collect();
        Self::from_members(spec, map, prior, members, policy)
    }

    fn from_members(
        spec: KernelSpec,
        map: PolyFeatureMap,
        prior: BayesPrior,
        members: IndexMap<SampleId, Member>,
        policy: RefreshPolicy,
    ) -> Result<Self> {
        let j = map.output_dim();
        let mut gram = vec![0.0; j * j];
        let mut xy = vec![0.0; j];
        for m in members.values() {
            let f = &m.features;
            for i in 0..j {
                axpy(f[i], &f[i..], &mut gram[i * j + i..(i + 1) * j]);
            }
            axpy(m.label, f, &mut xy);
        }
        let gram = SymMatrix::from_upper_buffer(j, gram);
        Self::from_statistics(spec, map, prior, gram, xy, members, policy)
    }

    fn from_statistics(
        spec: KernelSpec,
        map: PolyFeatureMap,
        prior: BayesPrior,
        gram: SymMatrix,
        xy: Vec<f64>,
        members: IndexMap<SampleId, Member>,
        policy: RefreshPolicy,
    ) -> Result<Self> {
        let mut precision = gram.scaled(1.0 / prior.sigma_b2);
        precision.add_diagonal(1.0 / prior.sigma_u2);
        let sigma = spd_inverse(&precision)?;
        let mut post = BayesPosterior {
            spec,
            map,
            prior,
            mu: Vec::new(),
            sigma,
            gram,
            xy,
            members,
            policy,
            rounds_since_refresh: 0,
        };
        post.solve_mean();
        Ok(post)
    }

    fn solve_mean(&mut self) {
        let j = self.map.output_dim();
        let mut rhs = self.prior.mean_or_zero(j);
        rhs.iter_mut().for_each(|v| *v /= self.prior.sigma_u2);
        axpy(1.0 / self.prior.sigma_b2, &self.xy, &mut rhs);
        self.mu = self.sigma.matvec(&rhs);
    }

    /// Applies one round of edits with a single Woodbury step on the
    /// posterior covariance.
    pub fn update(&self, batch: &EditBatch) -> Result<Self> {
        if batch.is_empty() {
            return Ok(self.clone());
        }
        batch.validate(self.map.input_dim(), |id| self.members.contains_key(&id))?;
        let j = self.feature_dim();
        let added: Vec<Member> = batch
            .additions
            .iter()
            .map(|s| Member {
                features: self.map.map(&s.x),
                label: s.y,
            })
            .collect();
        let removed: Vec<&Member> = batch.removals.iter().map(|id| &self.members[id]).collect();

        let scale = 1.0 / self.prior.sigma_b2.sqrt();
        let cols = |ms: &[&Member]| {
            ColumnBlock::from_columns(j, &ms.iter().map(|m| &m.features[..]).collect::<Vec<_>>())
        };
        let phi_c = cols(&added.iter().collect::<Vec<_>>())?;
        let phi_r = cols(&removed)?;
        let sigma = rankk_update(&self.sigma, &phi_c.scaled(scale), &phi_r.scaled(scale))?;

        let mut gram = self.gram.as_slice().to_vec();
        let mut xy = self.xy.clone();
        for (ms, sign) in [(added.iter().collect::<Vec<_>>(), 1.0), (removed, -1.0)] {
            for m in ms {
                let f = &m.features;
                for i in 0..j {
                    axpy(sign * f[i], &f[i..], &mut gram[i * j + i..(i + 1) * j]);
                }
                axpy(sign * m.label, f, &mut xy);
            }
        }

        let mut members = self.members.clone();
        for id in &batch.removals {
            members.shift_remove(id);
        }
        for (s, m) in batch.additions.iter().zip(added) {
            members.insert(s.id, m);
        }
        let rounds = self.rounds_since_refresh + 1;
        if rounds >= self.policy.every_rounds {
            log::debug!("refreshing posterior covariance after {rounds} rounds");
            return Self::from_members(self.spec, self.map.clone(), self.prior.clone(), members, self.policy);
        }
        let mut next = BayesPosterior {
            spec: self.spec,
            map: self.map.clone(),
            prior: self.prior.clone(),
            mu: Vec::new(),
            sigma,
            gram: SymMatrix::from_upper_buffer(j, gram),
            xy,
            members,
            policy: self.policy,
            rounds_since_refresh: rounds,
        };
        next.solve_mean();
        Ok(next)
    }

    /// Same evidence under a different prior. Recomputes the covariance
    /// from the cached gram matrix.
    pub fn with_prior(&self, prior: BayesPrior) -> Result<Self> {
        prior.validate(Some(self.feature_dim()))?;
        Self::from_statistics(
            self.spec,
            self.map.clone(),
            prior,
            self.gram.clone(),
            self.xy.clone(),
            self.members.clone(),
            self.policy,
        )
    }

    /// Refits from the stored samples under the current prior.
    pub fn refit(&self) -> Result<Self> {
        Self::from_members(self.spec, self.map.clone(), self.prior.clone(), self.members.clone(), self.policy)
    }

    pub fn predict_distribution(&self, x: &[f64]) -> Result<PredictiveDist> {
        let phi = self.map.try_map(x)?;
        Ok(PredictiveDist {
            mean: dot(&phi, &self.mu),
            variance: self.prior.sigma_b2 + self.sigma.quad_form(&phi),
        })
    }

    pub fn spec(&self) -> KernelSpec {
        self.spec
    }

    pub fn prior(&self) -> &BayesPrior {
        &self.prior
    }

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

    pub fn mean(&self) -> &[f64] {
        &self.mu
    }

    pub fn covariance(&self) -> &SymMatrix {
        &self.sigma
    }

    /// Cached `ΦΦᵀ`.
    pub fn gram(&self) -> &SymMatrix {
        &self.gram
    }

    /// Cached `Φyᵀ`.
    pub fn xy(&self) -> &[f64] {
        &self.xy
    }

    pub fn ids(&self) -> impl Iterator<Item = SampleId> + '_ {
        self.members.keys().copied()
    }

    pub fn feature_map(&self) -> &PolyFeatureMap {
        &self.map
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&BayesDump::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<BayesDump>(text)?.try_into()
    }
}

impl Predictor for BayesPosterior {
    fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(dot(&self.map.try_map(x)?, &self.mu))
    }
}

const BAYES_FORMAT: &str = "krr-stream/bayes";

#[derive(Serialize, Deserialize)]
struct BayesDump {
    format: String,
    version: u32,
    spec: KernelSpec,
    input_dim: usize,
    prior: BayesPrior,
    mu: Vec<f64>,
    sigma: SymMatrix,
    gram: SymMatrix,
    xy: Vec<f64>,
    policy: RefreshPolicy,
    rounds_since_refresh: usize,
    members: Vec<MemberDump>,
}

impl From<&BayesPosterior> for BayesDump {
    fn from(p: &BayesPosterior) -> Self {
        BayesDump {
            format: BAYES_FORMAT.into(),
            version: FORMAT_VERSION,
            spec: p.spec,
            input_dim: p.map.input_dim(),
            prior: p.prior.clone(),
            mu: p.mu.clone(),
            sigma: p.sigma.clone(),
            gram: p.gram.clone(),
            xy: p.xy.clone(),
            policy: p.policy,
            rounds_since_refresh: p.rounds_since_refresh,
            members: p
                .members
                .iter()
                .map(|(&id, m)| MemberDump {
                    id,
                    values: m.features.clone(),
                    label: m.label,
                })
                .collect(),
        }
    }
}

impl TryFrom<BayesDump> for BayesPosterior {
    type Error = Error;

    fn try_from(d: BayesDump) -> Result<Self> {
        if d.format != BAYES_FORMAT || d.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "expected {BAYES_FORMAT} v{FORMAT_VERSION}, got {} v{}",
                d.format, d.version
            )));
        }
        let map = PolyFeatureMap::new(&d.spec, d.input_dim)?;
        let j = map.output_dim();
        d.prior.validate(Some(j))?;
        let shapes_ok = d.mu.len() == j
            && d.sigma.order() == j
            && d.gram.order() == j
            && d.xy.len() == j
            && d.members.iter().all(|m| m.values.len() == j);
        if !shapes_ok {
            return Err(Error::Format(format!("inconsistent shapes for intrinsic dimension {j}")));
        }
        let mut members = IndexMap::with_capacity(d.members.len());
        for m in d.members {
            let id = m.id;
            let member = Member {
                features: m.values,
                label: m.label,
            };
            if members.insert(id, member).is_some() {
                return Err(Error::DuplicateSample(id));
            }
        }
        Ok(BayesPosterior {
            spec: d.spec,
            map,
            prior: d.prior,
            mu: d.mu,
            sigma: d.sigma,
            gram: d.gram,
            xy: d.xy,
            members,
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

    #[test]
    fn no_evidence_is_the_prior() {
        let prior = BayesPrior::isotropic(0.3, 0.2).unwrap();
        let post = BayesPosterior::fit(2, &[], prior, poly(2)).unwrap();
        assert!(post.mean().iter().all(|&m| m == 0.0));
        assert!(post.covariance().relative_error(&SymMatrix::scaled_identity(6, 0.3)) < 1e-15);
        let x = [0.5, -1.0];
        let phi = post.feature_map().map(&x);
        let d = post.predict_distribution(&x).unwrap();
        assert_eq!(d.mean, 0.0);
        assert!((d.variance - (0.2 + 0.3 * dot(&phi, &phi))).abs() < 1e-12);
    }

    #[test]
    fn one_sample_hand_solve() {
        let prior = BayesPrior::isotropic(1.0, 1.0).unwrap();
        let post = BayesPosterior::fit(1, &[Sample::new(0, vec![0.0], 1.0)], prior, poly(1)).unwrap();
        let s = post.covariance().as_slice();
        for (v, e) in s.iter().zip([0.5, 0.0, 0.0, 1.0]) {
            assert!((v - e).abs() < 1e-15);
        }
        assert!((post.mean()[0] - 0.5).abs() < 1e-15);
        assert!(post.mean()[1].abs() < 1e-15);
    }

    #[test]
    fn rejects_rbf_and_bad_prior() {
        let rbf = KernelSpec::rbf(50.0).unwrap();
        assert!(matches!(
            BayesPosterior::fit(2, &[], BayesPrior::default(), rbf),
            Err(Error::UnsupportedKernel(_))
        ));
        assert!(BayesPrior::isotropic(0.0, 1.0).is_err());
        let wrong_mean = BayesPrior::default().with_mean(vec![0.0; 3]);
        assert!(matches!(
            BayesPosterior::fit(2, &[], wrong_mean, poly(2)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn removing_everything_returns_to_prior() {
        let samples = vec![Sample::new(0, vec![0.3, 0.1], 1.0), Sample::new(1, vec![-0.2, 0.4], -1.0)];
        let post = BayesPosterior::fit(2, &samples, BayesPrior::default(), poly(2)).unwrap();
        let empty = post.update(&EditBatch::remove_only(vec![SampleId(0), SampleId(1)])).unwrap();
        assert!(empty.is_empty());
        assert!(empty.mean().iter().all(|m| m.abs() < 1e-12));
        assert!(empty.covariance().relative_error(&SymMatrix::scaled_identity(6, 0.01)) < 1e-10);
    }

    #[test]
    fn swapping_prior_matches_fresh_fit() {
        let samples = vec![Sample::new(0, vec![0.3, 0.1], 1.0), Sample::new(1, vec![-0.2, 0.4], -1.0)];
        let post = BayesPosterior::fit(2, &samples, BayesPrior::default(), poly(2)).unwrap();
        let other = BayesPrior::isotropic(0.5, 0.1).unwrap().with_mean(vec![0.1; 6]);
        let swapped = post.with_prior(other.clone()).unwrap();
        let fresh = BayesPosterior::fit(2, &samples, other, poly(2)).unwrap();
        assert!(crate::relative_deviation(swapped.mean(), fresh.mean()) < 1e-12);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let samples = vec![Sample::new(4, vec![0.3, 0.1], 1.0), Sample::new(9, vec![-0.2, 0.4], -1.0)];
        let post = BayesPosterior::fit(2, &samples, BayesPrior::default(), poly(3)).unwrap();
        let back = BayesPosterior::from_json(&post.to_json().unwrap()).unwrap();
        assert_eq!(back.mean(), post.mean());
        assert_eq!(back.covariance(), post.covariance());
        assert_eq!(back.to_json().unwrap(), post.to_json().unwrap());
    }
}
