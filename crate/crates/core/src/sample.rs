//! Training samples, stable sample identifiers and per-round edit batches.

use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;

use crate::error::{Error, Result};

/// Stable identifier of a training sample. Removals address samples by id,
/// never by matrix position, since positions shift after every edit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleId(pub u64);

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: SampleId,
    pub x: Vec<f64>,
    pub y: f64,
}

impl Sample {
    pub fn new(id: u64, x: Vec<f64>, y: f64) -> Self {
        Sample {
            id: SampleId(id),
            x,
            y,
        }
    }
}

/// Assigns ids `0..n` to parallel feature/label slices.
pub fn samples_from(xs: &[Vec<f64>], ys: &[f64]) -> Vec<Sample> {
    assert_eq!(xs.len(), ys.len(), "features and labels differ in length");
    xs.iter()
        .zip(ys)
        .enumerate()
        .map(|(i, (x, &y))| Sample::new(i as u64, x.clone(), y))
        .collect()
}

/// One round of edits: samples to add (`C`) and ids to remove (`R`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EditBatch {
    pub additions: Vec<Sample>,
    pub removals: Vec<SampleId>,
}

impl EditBatch {
    pub fn new(additions: Vec<Sample>, removals: Vec<SampleId>) -> Self {
        EditBatch {
            additions,
            removals,
        }
    }

    pub fn add_only(additions: Vec<Sample>) -> Self {
        EditBatch::new(additions, Vec::new())
    }

    pub fn remove_only(removals: Vec<SampleId>) -> Self {
        EditBatch::new(Vec::new(), removals)
    }

    pub fn is_empty(&self) -> bool {
        self.additions.is_empty() && self.removals.is_empty()
    }

    /// `|C| + |R|`.
    pub fn len(&self) -> usize {
        self.additions.len() + self.removals.len()
    }

    /// Splits the batch into single-sample edits: every addition first, then
    /// every removal.
    pub fn singles(&self) -> impl Iterator<Item = EditBatch> + '_ {
        let adds = self
            .additions
            .iter()
            .map(|s| EditBatch::add_only(vec![s.clone()]));
        let removes = self
            .removals
            .iter()
            .map(|&id| EditBatch::remove_only(vec![id]));
        adds.chain(removes)
    }

    /// Checks the batch against the current membership: removals must be
    /// present and distinct, additions must carry fresh distinct ids of the
    /// model dimension.
    pub(crate) fn validate(
        &self,
        dim: usize,
        is_member: impl Fn(SampleId) -> bool,
    ) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.len());
        for &id in &self.removals {
            if !is_member(id) {
                return Err(Error::UnknownSample(id));
            }
            if !seen.insert(id) {
                return Err(Error::DuplicateSample(id));
            }
        }
        for s in &self.additions {
            if s.x.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: s.x.len(),
                });
            }
            if is_member(s.id) || !seen.insert(s.id) {
                return Err(Error::DuplicateSample(s.id));
            }
        }
        Ok(())
    }
}

pub(crate) fn check_training_set(samples: &[Sample]) -> Result<usize> {
    let dim = samples.first().map(|s| s.x.len()).unwrap_or(0);
    let mut seen = HashSet::with_capacity(samples.len());
    for s in samples {
        if s.x.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: s.x.len(),
            });
        }
        if !seen.insert(s.id) {
            return Err(Error::DuplicateSample(s.id));
        }
    }
    Ok(dim)
}
