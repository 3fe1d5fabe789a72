//! Scoring reward functions against gold partial rankings.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::graph::PartialRanking;
use crate::records::ResponseRecord;
use crate::scalar::Scalar;

/// Category assigned to prompts without response metadata.
pub const UNCATEGORIZED: &str = "uncategorized";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("prompt `{prompt_id}`: response `{response_id}` has no score")]
    MissingScore { prompt_id: String, response_id: String },
    #[error("prompt `{prompt_id}`: response `{response_id}` has a non-finite score")]
    NonFiniteScore { prompt_id: String, response_id: String },
    #[error("prompt `{prompt_id}`: response `{response_id}` is scored twice")]
    DuplicateScore { prompt_id: String, response_id: String },
    #[error("prompt `{prompt_id}` has no scored responses")]
    NoResponses { prompt_id: String },
    #[error("nothing to average")]
    EmptyInput,
}

/// Scorer output keyed by `(prompt_id, response_id)`. All scores are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable<T> {
    entries: BTreeMap<(String, String), T>,
}

impl<T> Default for ScoreTable<T> {
    fn default() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }
}

impl<T: Scalar> ScoreTable<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        prompt_id: impl Into<String>,
        response_id: impl Into<String>,
        score: T,
    ) -> Result<(), MetricsError> {
        let key = (prompt_id.into(), response_id.into());
        if !score.is_finite() {
            return Err(MetricsError::NonFiniteScore {
                prompt_id: key.0,
                response_id: key.1,
            });
        }
        if self.entries.contains_key(&key) {
            return Err(MetricsError::DuplicateScore {
                prompt_id: key.0,
                response_id: key.1,
            });
        }
        self.entries.insert(key, score);
        Ok(())
    }

    pub fn from_entries<P, R>(entries: impl IntoIterator<Item = (P, R, T)>) -> Result<Self, MetricsError>
    where
        P: Into<String>,
        R: Into<String>,
    {
        let mut table = Self::new();
        for (p, r, s) in entries {
            table.insert(p, r, s)?;
        }
        Ok(table)
    }

    pub fn get(&self, prompt_id: &str, response_id: &str) -> Option<T> {
        self.entries
            .get(&(prompt_id.to_string(), response_id.to_string()))
            .copied()
    }

    pub fn require(&self, prompt_id: &str, response_id: &str) -> Result<T, MetricsError> {
        self.get(prompt_id, response_id)
            .ok_or_else(|| MetricsError::MissingScore {
                prompt_id: prompt_id.to_string(),
                response_id: response_id.to_string(),
            })
    }

    /// Scores of one prompt in response_id order.
    pub fn for_prompt<'a>(&'a self, prompt_id: &'a str) -> impl Iterator<Item = (&'a str, T)> + 'a {
        self.entries
            .range((prompt_id.to_string(), String::new())..)
            .take_while(move |((p, _), _)| p == prompt_id)
            .map(|((_, r), s)| (r.as_str(), *s))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, T)> {
        self.entries
            .iter()
            .map(|((p, r), s)| (p.as_str(), r.as_str(), *s))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Applies `f` to every score. `f` must keep scores finite.
    pub fn map_scores(&self, mut f: impl FnMut(&str, &str, T) -> T) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|((p, r), s)| ((p.clone(), r.clone()), f(p, r, *s)))
            .collect();
        Self { entries }
    }
}

/// Correct-pair counts for one category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AccuracyCount {
    pub correct: usize,
    pub n_pairs: usize,
}

impl AccuracyCount {
    /// `None` when the category contributes no pairs.
    pub fn rate(&self) -> Option<f64> {
        (self.n_pairs > 0).then(|| self.correct as f64 / self.n_pairs as f64)
    }
}

/// Fully-correct prompt counts for one category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExactCount {
    pub matched: usize,
    pub n_prompts: usize,
}

impl ExactCount {
    pub fn rate(&self) -> Option<f64> {
        (self.n_prompts > 0).then(|| self.matched as f64 / self.n_prompts as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryMetrics {
    pub accuracy: Option<f64>,
    pub exact_match: f64,
    pub n_pairs: usize,
    pub n_prompts: usize,
}

/// Fields are declared in key order so the serialized document has sorted keys.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub macro_accuracy: Option<f64>,
    pub macro_exact: f64,
    pub per_category: BTreeMap<String, CategoryMetrics>,
}

/// Maps each prompt to the category of its responses.
pub fn categories_from_responses(responses: &[ResponseRecord]) -> BTreeMap<String, String> {
    let mut categories = BTreeMap::new();
    for r in responses {
        if !r.category.is_empty() {
            categories
                .entry(r.prompt_id.clone())
                .or_insert_with(|| r.category.clone());
        }
    }
    categories
}

fn category_of<'a>(categories: &'a BTreeMap<String, String>, prompt_id: &str) -> &'a str {
    categories
        .get(prompt_id)
        .map(String::as_str)
        .unwrap_or(UNCATEGORIZED)
}

/// Correct and total closure pairs of one prompt. Every ranked response must be
/// scored; a pair is correct only when the winner scores strictly higher.
pub fn prompt_pair_outcome<T: Scalar>(
    ranking: &PartialRanking,
    scores: &ScoreTable<T>,
) -> Result<AccuracyCount, MetricsError> {
    for tier in &ranking.tiers {
        for id in tier {
            scores.require(&ranking.prompt_id, id)?;
        }
    }
    let mut count = AccuracyCount::default();
    for (w, l) in &ranking.closure {
        let sw = scores.require(&ranking.prompt_id, w)?;
        let sl = scores.require(&ranking.prompt_id, l)?;
        count.n_pairs += 1;
        if sw > sl {
            count.correct += 1;
        }
    }
    Ok(count)
}

/// Pairwise accuracy per category: the fraction of closure pairs whose winner
/// outscores the loser.
pub fn pairwise_accuracy<T: Scalar>(
    rankings: &[PartialRanking],
    scores: &ScoreTable<T>,
    categories: &BTreeMap<String, String>,
) -> Result<BTreeMap<String, AccuracyCount>, MetricsError> {
    let mut out: BTreeMap<String, AccuracyCount> = BTreeMap::new();
    for ranking in rankings {
        let outcome = prompt_pair_outcome(ranking, scores)?;
        let entry = out
            .entry(category_of(categories, &ranking.prompt_id).to_string())
            .or_default();
        entry.correct += outcome.correct;
        entry.n_pairs += outcome.n_pairs;
    }
    Ok(out)
}

/// Exact match per category: the fraction of prompts whose closure pairs are
/// all ordered correctly. Prompts without pairs count as matched.
pub fn exact_match<T: Scalar>(
    rankings: &[PartialRanking],
    scores: &ScoreTable<T>,
    categories: &BTreeMap<String, String>,
) -> Result<BTreeMap<String, ExactCount>, MetricsError> {
    let mut out: BTreeMap<String, ExactCount> = BTreeMap::new();
    for ranking in rankings {
        let outcome = prompt_pair_outcome(ranking, scores)?;
        let entry = out
            .entry(category_of(categories, &ranking.prompt_id).to_string())
            .or_default();
        entry.n_prompts += 1;
        if outcome.correct == outcome.n_pairs {
            entry.matched += 1;
        }
    }
    Ok(out)
}

/// Unweighted mean over categories.
pub fn macro_average(values: &[f64]) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Overall benchmark score: mean of accuracy and exact match over the two
/// evaluation subsets.
pub fn aggregate_overall(acc_open: f64, exact_open: f64, acc_human: f64, exact_human: f64) -> f64 {
    (acc_open + exact_open + acc_human + exact_human) / 4.0
}

/// Full per-category report with macro averages.
pub fn evaluate<T: Scalar>(
    rankings: &[PartialRanking],
    scores: &ScoreTable<T>,
    categories: &BTreeMap<String, String>,
) -> Result<MetricReport, MetricsError> {
    let accuracy = pairwise_accuracy(rankings, scores, categories)?;
    let exact = exact_match(rankings, scores, categories)?;

    let per_category: BTreeMap<String, CategoryMetrics> = exact
        .iter()
        .map(|(category, e)| {
            let a = accuracy.get(category).copied().unwrap_or_default();
            let metrics = CategoryMetrics {
                accuracy: a.rate(),
                exact_match: e.rate().unwrap_or(0.0),
                n_pairs: a.n_pairs,
                n_prompts: e.n_prompts,
            };
            (category.clone(), metrics)
        })
        .collect();

    let accuracies: Vec<f64> = per_category.values().filter_map(|m| m.accuracy).collect();
    let exacts: Vec<f64> = per_category.values().map(|m| m.exact_match).collect();
    Ok(MetricReport {
        macro_accuracy: macro_average(&accuracies).ok(),
        macro_exact: macro_average(&exacts).unwrap_or(0.0),
        per_category,
    })
}

/// Highest-scoring response of a prompt; ties go to the smallest response_id.
pub fn best_of_n<T: Scalar>(prompt_id: &str, scores: &ScoreTable<T>) -> Result<String, MetricsError> {
    let mut best: Option<(&str, T)> = None;
    for (id, score) in scores.for_prompt(prompt_id) {
        match best {
            Some((_, top)) if score <= top => {}
            _ => best = Some((id, score)),
        }
    }
    best.map(|(id, _)| id.to_string())
        .ok_or_else(|| MetricsError::NoResponses {
            prompt_id: prompt_id.to_string(),
        })
}
