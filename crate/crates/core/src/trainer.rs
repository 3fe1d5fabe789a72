//! Bradley-Terry reward training over fixed feature vectors.
//!
//! Responses of a prompt are packed into fixed-capacity batches; only pairs
//! whose two responses share a batch contribute to the loss
//!
//! ```text
//! L = -mean_pairs ln σ(r_w - r_l) + λ · mean_responses r²
//! ```
//!
//! where `r = w·x + b` is a linear reward head and the second term is a
//! zero-mean Gaussian prior on rewards.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::PartialRanking;
use crate::rng;
use crate::scalar::{log_sigmoid, sigmoid, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("batch capacity must be at least 2, got {0}")]
    CapacityTooSmall(usize),
    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("prompt `{prompt_id}`: response `{response_id}` has no features")]
    MissingFeatures { prompt_id: String, response_id: String },
    #[error("prompt `{prompt_id}`: response `{response_id}` has non-finite features")]
    NonFiniteFeatures { prompt_id: String, response_id: String },
    #[error("prompt `{prompt_id}`: response `{response_id}` has features twice")]
    DuplicateFeatures { prompt_id: String, response_id: String },
    #[error("no preference pair ever shares a batch (capacity {capacity}); nothing to train on")]
    NoPairs { capacity: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord<T> {
    pub prompt_id: String,
    pub response_id: String,
    pub features: Vec<T>,
}

/// Feature vectors of one dataset; all share one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable<T> {
    dim: usize,
    by_key: BTreeMap<(String, String), Vec<T>>,
}

impl<T: Scalar> FeatureTable<T> {
    /// An empty table has dimension 0.
    pub fn new(records: Vec<FeatureRecord<T>>) -> Result<Self, TrainError> {
        let dim = records.first().map_or(0, |r| r.features.len());
        let mut by_key = BTreeMap::new();
        for r in records {
            if r.features.len() != dim {
                return Err(TrainError::DimensionMismatch {
                    expected: dim,
                    found: r.features.len(),
                });
            }
            if r.features.iter().any(|x| !x.is_finite()) {
                return Err(TrainError::NonFiniteFeatures {
                    prompt_id: r.prompt_id,
                    response_id: r.response_id,
                });
            }
            let key = (r.prompt_id, r.response_id);
            if by_key.contains_key(&key) {
                return Err(TrainError::DuplicateFeatures {
                    prompt_id: key.0,
                    response_id: key.1,
                });
            }
            by_key.insert(key, r.features);
        }
        Ok(Self { dim, by_key })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, prompt_id: &str, response_id: &str) -> Result<&[T], TrainError> {
        self.by_key
            .get(&(prompt_id.to_string(), response_id.to_string()))
            .map(Vec::as_slice)
            .ok_or_else(|| TrainError::MissingFeatures {
                prompt_id: prompt_id.to_string(),
                response_id: response_id.to_string(),
            })
    }
}

/// Reward head `r(x) = weights · x + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRewardModel<T> {
    pub weights: Vec<T>,
    pub bias: T,
}

impl<T: Scalar> LinearRewardModel<T> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![T::zero(); dim],
            bias: T::zero(),
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn score(&self, features: &[T]) -> Result<T, TrainError> {
        if features.len() != self.dim() {
            return Err(TrainError::DimensionMismatch {
                expected: self.dim(),
                found: features.len(),
            });
        }
        Ok(self
            .weights
            .iter()
            .zip(features)
            .fold(self.bias, |acc, (w, x)| acc + *w * *x))
    }

    /// `self -= step * gradient`.
    pub fn descend(&mut self, gradient: &Gradient<T>, step: T) {
        for (w, g) in self.weights.iter_mut().zip(&gradient.weights) {
            *w = *w - step * *g;
        }
        self.bias = self.bias - step * gradient.bias;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<T> {
    pub weights: Vec<T>,
    pub bias: T,
}

/// How a prompt group that does not fit the current batch is handled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// Fill the current batch and spill the rest into the next ones.
    #[default]
    Split,
    /// Start a fresh batch when the whole group would fit in one; groups larger
    /// than the capacity are still split.
    DeferWhole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct TrainingConfig<T> {
    pub batch_capacity: usize,
    pub learning_rate: T,
    pub reg_coefficient: T,
    pub epochs: usize,
    pub seed: u64,
    pub grouping: Grouping,
}

impl<T: Scalar> Default for TrainingConfig<T> {
    fn default() -> Self {
        Self {
            batch_capacity: 256,
            learning_rate: T::lit(1e-2),
            reg_coefficient: T::lit(0.1),
            epochs: 2,
            seed: 0,
            grouping: Grouping::Split,
        }
    }
}

impl<T: Scalar> TrainingConfig<T> {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_capacity < 2 {
            return Err(TrainError::CapacityTooSmall(self.batch_capacity));
        }
        if !(self.learning_rate > T::zero()) || !self.learning_rate.is_finite() {
            return Err(TrainError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.reg_coefficient >= T::zero()) || !self.reg_coefficient.is_finite() {
            return Err(TrainError::InvalidConfig(format!(
                "reg_coefficient must be non-negative, got {}",
                self.reg_coefficient
            )));
        }
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Responses placed together in one forward pass, grouped by prompt.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Batch {
    pub groups: Vec<(String, Vec<String>)>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.groups.iter().map(|(_, r)| r.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Preference pairs of `closure` whose two responses are both in this batch.
    pub fn coresident_pairs<'a>(
        &'a self,
        closure: &'a BTreeMap<String, Vec<(String, String)>>,
    ) -> Vec<(&'a str, &'a str, &'a str)> {
        let mut out = Vec::new();
        for (prompt_id, members) in &self.groups {
            let Some(pairs) = closure.get(prompt_id) else {
                continue;
            };
            let present: BTreeSet<&str> = members.iter().map(String::as_str).collect();
            for (w, l) in pairs {
                if present.contains(w.as_str()) && present.contains(l.as_str()) {
                    out.push((prompt_id.as_str(), w.as_str(), l.as_str()));
                }
            }
        }
        out
    }
}

/// Greedy sample-based batching: prompts are visited in a seeded random order
/// and each response lands in exactly one batch.
pub fn pack_batches(
    groups: &BTreeMap<String, Vec<String>>,
    capacity: usize,
    seed: u64,
    grouping: Grouping,
) -> Result<Vec<Batch>, TrainError> {
    pack_with(groups, capacity, grouping, &mut rng::stream(seed, "batches"))
}

fn pack_with(
    groups: &BTreeMap<String, Vec<String>>,
    capacity: usize,
    grouping: Grouping,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Batch>, TrainError> {
    if capacity < 2 {
        return Err(TrainError::CapacityTooSmall(capacity));
    }
    let mut order: Vec<&String> = groups.keys().collect();
    order.shuffle(rng);

    let mut batches = Vec::new();
    let mut current = Batch::default();
    let mut used = 0;
    for prompt_id in order {
        let mut rest: &[String] = &groups[prompt_id];
        if rest.is_empty() {
            continue;
        }
        if grouping == Grouping::DeferWhole
            && used > 0
            && rest.len() <= capacity
            && rest.len() > capacity - used
        {
            batches.push(std::mem::take(&mut current));
            used = 0;
        }
        while !rest.is_empty() {
            let take = rest.len().min(capacity - used);
            current
                .groups
                .push((prompt_id.clone(), rest[..take].to_vec()));
            used += take;
            rest = &rest[take..];
            if used == capacity {
                batches.push(std::mem::take(&mut current));
                used = 0;
            }
        }
    }
    if !current.is_empty() {
        batches.push(current);
    }
    Ok(batches)
}

/// Batch loss and its gradient with respect to the model parameters.
pub fn bt_loss_and_gradient<T: Scalar>(
    batch: &Batch,
    closure: &BTreeMap<String, Vec<(String, String)>>,
    features: &FeatureTable<T>,
    model: &LinearRewardModel<T>,
    reg_coefficient: T,
) -> Result<(T, Gradient<T>), TrainError> {
    if features.dim() != model.dim() && !batch.is_empty() {
        return Err(TrainError::DimensionMismatch {
            expected: model.dim(),
            found: features.dim(),
        });
    }

    // Rewards and their partial derivatives, one slot per batch response.
    let mut slot = BTreeMap::new();
    let mut inputs: Vec<&[T]> = Vec::with_capacity(batch.len());
    let mut rewards = Vec::with_capacity(batch.len());
    for (prompt_id, members) in &batch.groups {
        for response_id in members {
            let x = features.get(prompt_id, response_id)?;
            slot.insert((prompt_id.as_str(), response_id.as_str()), inputs.len());
            rewards.push(model.score(x)?);
            inputs.push(x);
        }
    }
    let mut d_reward = vec![T::zero(); rewards.len()];

    let pairs = batch.coresident_pairs(closure);
    let mut pair_term = T::zero();
    if !pairs.is_empty() {
        let n = T::from_count(pairs.len());
        for &(prompt_id, w, l) in &pairs {
            let (iw, il) = (slot[&(prompt_id, w)], slot[&(prompt_id, l)]);
            let delta = rewards[iw] - rewards[il];
            pair_term = pair_term - log_sigmoid(delta);
            let g = (sigmoid(delta) - T::one()) / n;
            d_reward[iw] = d_reward[iw] + g;
            d_reward[il] = d_reward[il] - g;
        }
        pair_term = pair_term / n;
    }

    let mut reg_term = T::zero();
    if !rewards.is_empty() {
        let n = T::from_count(rewards.len());
        let two = T::lit(2.0);
        reg_term = reg_coefficient * rewards.iter().map(|r| *r * *r).sum::<T>() / n;
        for (d, r) in d_reward.iter_mut().zip(&rewards) {
            *d = *d + two * reg_coefficient * *r / n;
        }
    }

    let mut gradient = Gradient {
        weights: vec![T::zero(); model.dim()],
        bias: T::zero(),
    };
    for (x, d) in inputs.iter().zip(&d_reward) {
        for (g, xi) in gradient.weights.iter_mut().zip(x.iter()) {
            *g = *g + *d * *xi;
        }
        gradient.bias = gradient.bias + *d;
    }
    Ok((pair_term + reg_term, gradient))
}

pub fn bt_loss<T: Scalar>(
    batch: &Batch,
    closure: &BTreeMap<String, Vec<(String, String)>>,
    features: &FeatureTable<T>,
    model: &LinearRewardModel<T>,
    reg_coefficient: T,
) -> Result<T, TrainError> {
    bt_loss_and_gradient(batch, closure, features, model, reg_coefficient).map(|(l, _)| l)
}

pub fn bt_gradient<T: Scalar>(
    batch: &Batch,
    closure: &BTreeMap<String, Vec<(String, String)>>,
    features: &FeatureTable<T>,
    model: &LinearRewardModel<T>,
    reg_coefficient: T,
) -> Result<Gradient<T>, TrainError> {
    bt_loss_and_gradient(batch, closure, features, model, reg_coefficient).map(|(_, g)| g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord<T> {
    pub epoch: usize,
    /// Mean batch loss, each batch evaluated before its update.
    pub loss: T,
    /// Training pairwise accuracy over every closure pair after the epoch.
    pub pair_accuracy: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<T> {
    pub model: LinearRewardModel<T>,
    pub history: Vec<EpochRecord<T>>,
}

/// Preference pairs of every ranking, keyed by prompt.
pub fn closure_by_prompt(rankings: &[PartialRanking]) -> BTreeMap<String, Vec<(String, String)>> {
    rankings
        .iter()
        .map(|r| (r.prompt_id.clone(), r.closure.iter().cloned().collect()))
        .collect()
}

/// Fraction of pairs the model orders strictly correctly, `None` without pairs.
pub fn pair_accuracy<T: Scalar>(
    closure: &BTreeMap<String, Vec<(String, String)>>,
    features: &FeatureTable<T>,
    model: &LinearRewardModel<T>,
) -> Result<Option<T>, TrainError> {
    let (mut correct, mut total) = (0usize, 0usize);
    for (prompt_id, pairs) in closure {
        for (w, l) in pairs {
            let rw = model.score(features.get(prompt_id, w)?)?;
            let rl = model.score(features.get(prompt_id, l)?)?;
            total += 1;
            correct += usize::from(rw > rl);
        }
    }
    Ok((total > 0).then(|| T::from_count(correct) / T::from_count(total)))
}

/// Plain gradient descent from a zero model, one step per batch, batches
/// repacked with a fresh seeded order every epoch.
pub fn train<T: Scalar>(
    features: &FeatureTable<T>,
    rankings: &[PartialRanking],
    config: &TrainingConfig<T>,
) -> Result<TrainOutcome<T>, TrainError> {
    config.validate()?;
    let closure = closure_by_prompt(rankings);
    let mut groups = BTreeMap::new();
    for r in rankings {
        let mut members: Vec<String> = r.tiers.iter().flatten().cloned().collect();
        members.sort();
        for m in &members {
            features.get(&r.prompt_id, m)?;
        }
        groups.insert(r.prompt_id.clone(), members);
    }

    let schedule: Vec<Vec<Batch>> = (0..config.epochs)
        .map(|epoch| {
            let mut rng = rng::stream(config.seed, &format!("batches/{epoch}"));
            pack_with(&groups, config.batch_capacity, config.grouping, &mut rng)
        })
        .collect::<Result<_, _>>()?;
    let reachable: usize = schedule
        .iter()
        .flatten()
        .map(|b| b.coresident_pairs(&closure).len())
        .sum();
    if reachable == 0 {
        return Err(TrainError::NoPairs {
            capacity: config.batch_capacity,
        });
    }

    let mut model = LinearRewardModel::zeros(features.dim());
    let mut history = Vec::with_capacity(config.epochs);
    for (epoch, batches) in schedule.iter().enumerate() {
        let mut total = T::zero();
        for batch in batches {
            let (loss, gradient) =
                bt_loss_and_gradient(batch, &closure, features, &model, config.reg_coefficient)?;
            total = total + loss;
            model.descend(&gradient, config.learning_rate);
        }
        history.push(EpochRecord {
            epoch: epoch + 1,
            loss: total / T::from_count(batches.len().max(1)),
            pair_accuracy: pair_accuracy(&closure, features, &model)?.unwrap_or(T::zero()),
        });
    }
    Ok(TrainOutcome { model, history })
}
