//! Edit-stream replay: batch, single-sample and full-refit strategies run
//! over identical pre-drawn rounds, each checked against a refit oracle.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kbr::{BayesPosterior, BayesPrior};
use crate::kernels::KernelSpec;
use crate::krr_empirical::EmpiricalModel;
use crate::krr_intrinsic::IntrinsicModel;
use crate::sample::{EditBatch, Sample, SampleId};
use crate::{relative_deviation, Guard, Predictor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// One combined update per round
    Batch,
    /// One update per added or removed sample
    Single,
    /// Fit from scratch on the edited set
    Refit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum StrategyChoice {
    Batch,
    Single,
    Refit,
    All,
}

impl StrategyChoice {
    pub fn strategies(self) -> &'static [Strategy] {
        match self {
            StrategyChoice::Batch => &[Strategy::Batch],
            StrategyChoice::Single => &[Strategy::Single],
            StrategyChoice::Refit => &[Strategy::Refit],
            StrategyChoice::All => &[Strategy::Batch, Strategy::Single, Strategy::Refit],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Intrinsic,
    Empirical,
    Bayes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamPlan {
    pub initial_fraction: f64,
    pub rounds: usize,
    pub adds_per_round: usize,
    pub removes_per_round: usize,
    pub seed: u64,
    pub strategy: StrategyChoice,
    pub space: Space,
}

impl Default for StreamPlan {
    fn default() -> Self {
        StreamPlan {
            initial_fraction: 0.8,
            rounds: 10,
            adds_per_round: 4,
            removes_per_round: 2,
            seed: 0,
            strategy: StrategyChoice::All,
            space: Space::Empirical,
        }
    }
}

/// Kernel and regularization shared by every strategy of a run. `ridge` is
/// used by the KRR spaces, `prior` by the Bayesian one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub spec: KernelSpec,
    pub ridge: f64,
    pub prior: BayesPrior,
}

impl ModelConfig {
    pub fn new(spec: KernelSpec, ridge: f64) -> Self {
        ModelConfig {
            spec,
            ridge,
            prior: BayesPrior::default(),
        }
    }

    pub fn with_prior(mut self, prior: BayesPrior) -> Self {
        self.prior = prior;
        self
    }
}

/// A fitted model of any space.
#[derive(Clone, Debug)]
pub enum AnyModel {
    Intrinsic(IntrinsicModel),
    Empirical(EmpiricalModel),
    Bayes(BayesPosterior),
}

impl AnyModel {
    pub fn fit(space: Space, dim: usize, samples: &[Sample], config: &ModelConfig) -> Result<Self> {
        Ok(match space {
            Space::Intrinsic => AnyModel::Intrinsic(IntrinsicModel::fit(samples, config.spec, config.ridge)?),
            Space::Empirical => AnyModel::Empirical(EmpiricalModel::fit(samples, config.spec, config.ridge)?),
            Space::Bayes => AnyModel::Bayes(BayesPosterior::fit(dim, samples, config.prior.clone(), config.spec)?),
        })
    }

    pub fn update(&self, batch: &EditBatch) -> Result<Self> {
        Ok(match self {
            AnyModel::Intrinsic(m) => AnyModel::Intrinsic(m.update(batch)?),
            AnyModel::Empirical(m) => AnyModel::Empirical(m.update(batch)?),
            AnyModel::Bayes(m) => AnyModel::Bayes(m.update(batch)?),
        })
    }

    /// Model parameters, with dual coefficients laid out in `order`:
    /// `(u, b)`, `(a, b)` or the posterior mean.
    pub fn parameters(&self, order: &[SampleId]) -> Result<Vec<f64>> {
        match self {
            AnyModel::Intrinsic(m) => Ok(m.parameters()),
            AnyModel::Empirical(m) => m.parameters_by_id(order),
            AnyModel::Bayes(m) => Ok(m.mean().to_vec()),
        }
    }

    pub fn guard(&self, batch: &EditBatch) -> Guard {
        match self {
            AnyModel::Intrinsic(m) => m.batch_guard(batch),
            AnyModel::Empirical(m) => m.batch_guard(batch),
            AnyModel::Bayes(m) => crate::krr_intrinsic::batch_guard(m.feature_dim(), batch.additions.len(), batch.removals.len()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        match self {
            AnyModel::Intrinsic(m) => m.to_json(),
            AnyModel::Empirical(m) => m.to_json(),
            AnyModel::Bayes(m) => m.to_json(),
        }
    }
}

impl Predictor for AnyModel {
    fn predict(&self, x: &[f64]) -> Result<f64> {
        match self {
            AnyModel::Intrinsic(m) => m.predict(x),
            AnyModel::Empirical(m) => m.predict(x),
            AnyModel::Bayes(m) => m.predict(x),
        }
    }
}

/// One value per strategy; absent for strategies that were not run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerStrategy<T> {
    pub batch: Option<T>,
    pub single: Option<T>,
    pub refit: Option<T>,
}

impl<T: Copy> PerStrategy<T> {
    pub fn get(&self, s: Strategy) -> Option<T> {
        match s {
            Strategy::Batch => self.batch,
            Strategy::Single => self.single,
            Strategy::Refit => self.refit,
        }
    }

    pub fn set(&mut self, s: Strategy, v: T) {
        match s {
            Strategy::Batch => self.batch = Some(v),
            Strategy::Single => self.single = Some(v),
            Strategy::Refit => self.refit = Some(v),
        }
    }
}

// Keeps log10 of a zero-length measurement finite.
const MIN_SECONDS: f64 = 1e-9;

pub fn log10_seconds(seconds: f64) -> f64 {
    seconds.max(MIN_SECONDS).log10()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    /// Training-set size after the round.
    pub n: usize,
    pub additions: usize,
    pub removals: usize,
    pub guard: Guard,
    pub seconds: PerStrategy<f64>,
    pub cumulative_seconds: PerStrategy<f64>,
    pub log10_cumulative_seconds: PerStrategy<f64>,
    /// Relative deviation of each strategy's parameters from the refit oracle.
    pub deviation: PerStrategy<f64>,
    pub max_deviation: f64,
    /// Sign accuracy on the test split; absent when the split is empty.
    pub accuracy: PerStrategy<f64>,
    /// Whether every strategy gave the same sign on every test sample.
    pub predictions_agree: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamRun {
    pub space: Space,
    pub config: ModelConfig,
    pub plan: StreamPlan,
    pub initial_n: usize,
    pub test_n: usize,
    /// Time of the one initial fit every strategy starts from; not part of
    /// any round.
    pub initial_fit_seconds: f64,
    pub rounds: Vec<RoundReport>,
}

impl StreamRun {
    /// Largest oracle deviation over all rounds and strategies.
    pub fn max_deviation(&self) -> f64 {
        self.rounds.iter().map(|r| r.max_deviation).fold(0.0, f64::max)
    }

    pub fn predictions_agree(&self) -> bool {
        self.rounds.iter().all(|r| r.predictions_agree)
    }
}

/// Training split, test split and the pre-drawn rounds of a plan.
#[derive(Clone, Debug)]
pub struct Schedule {
    pub initial: Vec<Sample>,
    pub test: Vec<Sample>,
    pub batches: Vec<EditBatch>,
}

/// Shuffles with the plan seed, keeps `initial_fraction` for training and
/// holds the rest back. The held-back pool is both the fixed test split and
/// the source of additions, drawn in shuffled order; removals are drawn
/// uniformly from the current members.
pub fn schedule(dataset: &Dataset, plan: &StreamPlan) -> Result<Schedule> {
    if !(plan.initial_fraction > 0.0 && plan.initial_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "initial fraction must lie in (0, 1], got {}",
            plan.initial_fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut shuffled = dataset.samples().to_vec();
    shuffled.shuffle(&mut rng);
    let n0 = ((plan.initial_fraction * shuffled.len() as f64).round() as usize).clamp(1, shuffled.len());
    let test = shuffled.split_off(n0);
    let initial = shuffled;

    let mut members: Vec<SampleId> = initial.iter().map(|s| s.id).collect();
    let mut pool = test.iter();
    let mut batches = Vec::with_capacity(plan.rounds);
    for round in 1..=plan.rounds {
        if plan.removes_per_round >= members.len() {
            return Err(Error::InvalidParameter(format!(
                "{} removals requested from {} members",
                plan.removes_per_round,
                members.len()
            ))
            .in_round(round));
        }
        let available = pool.len();
        if available < plan.adds_per_round {
            return Err(Error::PlanExhausted {
                round,
                needed: plan.adds_per_round,
                available,
            });
        }
        let additions: Vec<Sample> = pool.by_ref().take(plan.adds_per_round).cloned().collect();
        let mut picked = index::sample(&mut rng, members.len(), plan.removes_per_round).into_vec();
        picked.sort_unstable();
        let removals: Vec<SampleId> = picked.iter().map(|&i| members[i]).collect();
        for &i in picked.iter().rev() {
            members.remove(i);
        }
        members.extend(additions.iter().map(|s| s.id));
        batches.push(EditBatch::new(additions, removals));
    }
    Ok(Schedule {
        initial,
        test,
        batches,
    })
}

fn apply(members: &mut Vec<Sample>, batch: &EditBatch) {
    members.retain(|s| !batch.removals.contains(&s.id));
    members.extend(batch.additions.iter().cloned());
}

fn signs(model: &AnyModel, test: &[Sample]) -> Result<Vec<f64>> {
    test.iter().map(|s| model.classify(&s.x, 0.0)).collect()
}

fn accuracy(signs: &[f64], test: &[Sample]) -> Option<f64> {
    if test.is_empty() {
        return None;
    }
    let hits = signs.iter().zip(test).filter(|(p, s)| **p == s.y).count();
    Some(hits as f64 / test.len() as f64)
}

pub fn run_stream(dataset: &Dataset, plan: &StreamPlan, config: &ModelConfig) -> Result<StreamRun> {
    let sched = schedule(dataset, plan)?;
    run_schedule(dataset.dim(), &sched, plan, config)
}

/// Replays an already drawn schedule.
pub fn run_schedule(dim: usize, sched: &Schedule, plan: &StreamPlan, config: &ModelConfig) -> Result<StreamRun> {
    let strategies = plan.strategy.strategies();
    let space = plan.space;

    let start = Instant::now();
    let initial = AnyModel::fit(space, dim, &sched.initial, config)?;
    let initial_fit_seconds = start.elapsed().as_secs_f64();

    let mut members = sched.initial.clone();
    let mut chains: Vec<(Strategy, AnyModel)> = strategies.iter().map(|&s| (s, initial.clone())).collect();
    drop(initial);
    let mut cumulative = PerStrategy::<f64>::default();
    let mut rounds = Vec::with_capacity(sched.batches.len());

    for (i, batch) in sched.batches.iter().enumerate() {
        let round = i + 1;
        let guard = chains[0].1.guard(batch);
        apply(&mut members, batch);

        let mut seconds = PerStrategy::default();
        let mut oracle: Option<AnyModel> = None;
        for (strategy, model) in chains.iter_mut() {
            let start = Instant::now();
            let next = match strategy {
                Strategy::Batch => model.update(batch),
                Strategy::Single => batch.singles().try_fold(model.clone(), |m, single| m.update(&single)),
                Strategy::Refit => AnyModel::fit(space, dim, &members, config),
            }
            .map_err(|e| e.in_round(round))?;
            let dt = start.elapsed().as_secs_f64();
            seconds.set(*strategy, dt);
            cumulative.set(*strategy, cumulative.get(*strategy).unwrap_or(0.0) + dt);
            if *strategy == Strategy::Refit {
                oracle = Some(next.clone());
            }
            *model = next;
        }
        let oracle = match oracle {
            Some(m) => m,
            None => AnyModel::fit(space, dim, &members, config).map_err(|e| e.in_round(round))?,
        };

        let order: Vec<SampleId> = members.iter().map(|s| s.id).collect();
        let reference = oracle.parameters(&order).map_err(|e| e.in_round(round))?;
        let reference_signs = signs(&oracle, &sched.test).map_err(|e| e.in_round(round))?;
        let mut deviation = PerStrategy::default();
        let mut acc = PerStrategy::default();
        let mut agree = true;
        for (strategy, model) in &chains {
            let params = model.parameters(&order).map_err(|e| e.in_round(round))?;
            deviation.set(*strategy, relative_deviation(&params, &reference));
            let s = signs(model, &sched.test).map_err(|e| e.in_round(round))?;
            agree &= s == reference_signs;
            if let Some(a) = accuracy(&s, &sched.test) {
                acc.set(*strategy, a);
            }
        }
        let max_deviation = strategies
            .iter()
            .filter_map(|&s| deviation.get(s))
            .fold(0.0, f64::max);
        let mut log10_cumulative = PerStrategy::default();
        for &s in strategies {
            if let Some(c) = cumulative.get(s) {
                log10_cumulative.set(s, log10_seconds(c));
            }
        }
        rounds.push(RoundReport {
            round,
            n: members.len(),
            additions: batch.additions.len(),
            removals: batch.removals.len(),
            guard,
            seconds,
            cumulative_seconds: cumulative,
            log10_cumulative_seconds: log10_cumulative,
            deviation,
            max_deviation,
            accuracy: acc,
            predictions_agree: agree,
        });
    }

    Ok(StreamRun {
        space,
        config: config.clone(),
        plan: plan.clone(),
        initial_n: sched.initial.len(),
        test_n: sched.test.len(),
        initial_fit_seconds,
        rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::dataset::synthesize;

    fn poly2() -> ModelConfig {
        ModelConfig::new(KernelSpec::polynomial(2).unwrap(), 0.5)
    }

    #[test]
    fn schedule_is_deterministic_and_consistent() {
        let data = synthesize(50, 3, 1.0, 1).unwrap();
        let plan = StreamPlan {
            rounds: 2,
            seed: 9,
            ..StreamPlan::default()
        };
        let a = schedule(&data, &plan).unwrap();
        let b = schedule(&data, &plan).unwrap();
        assert_eq!(a.batches, b.batches);
        assert_eq!((a.initial.len(), a.test.len()), (40, 10));
        assert_eq!(a.batches[0].additions[..], a.test[..4]);
        assert_eq!(a.batches[1].additions[..], a.test[4..8]);
        for batch in &a.batches {
            assert_eq!(batch.removals.len(), 2);
        }
    }

    #[test]
    fn pool_exhaustion_is_reported() {
        let data = synthesize(20, 3, 1.0, 1).unwrap();
        let plan = StreamPlan {
            rounds: 2,
            ..StreamPlan::default()
        };
        let err = schedule(&data, &plan).unwrap_err();
        assert!(matches!(err, Error::PlanExhausted { round: 2, needed: 4, available: 0 }), "{err}");
    }

    #[test]
    fn identity_rounds_agree_exactly() {
        let data = synthesize(40, 3, 1.0, 2).unwrap();
        let plan = StreamPlan {
            rounds: 1,
            adds_per_round: 0,
            removes_per_round: 0,
            space: Space::Intrinsic,
            ..StreamPlan::default()
        };
        let run = run_stream(&data, &plan, &poly2()).unwrap();
        let r = &run.rounds[0];
        assert_eq!(r.max_deviation, 0.0);
        assert!(r.predictions_agree);
        assert_eq!(r.accuracy.batch, r.accuracy.refit);
        assert_eq!(r.accuracy.single, r.accuracy.refit);
    }

    #[test]
    fn every_space_tracks_the_oracle() {
        let data = synthesize(120, 3, 1.0, 3).unwrap();
        for space in [Space::Intrinsic, Space::Empirical, Space::Bayes] {
            let plan = StreamPlan {
                rounds: 5,
                space,
                ..StreamPlan::default()
            };
            let run = run_stream(&data, &plan, &poly2()).unwrap();
            assert!(run.max_deviation() <= 1e-8, "{space:?}: {}", run.max_deviation());
            assert!(run.predictions_agree());
            assert_eq!(run.rounds.last().unwrap().n, 96 + 5 * 2);
            for w in run.rounds.windows(2) {
                assert!(w[1].cumulative_seconds.batch >= w[0].cumulative_seconds.batch);
            }
        }
    }
}
