//! Response and annotation records shared by every stage of the pipeline.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One candidate answer to a prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub prompt_id: String,
    pub response_id: String,
    pub category: String,
    pub model: String,
    pub text: String,
}

impl ResponseRecord {
    /// Length in Unicode scalar values, the unit used for every length statistic.
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    First,
    Second,
    Tie,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Human,
    Machine,
}

/// One pairwise verdict. `first` is the response shown first to the annotator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub prompt_id: String,
    pub first: String,
    pub second: String,
    pub verdict: Verdict,
    pub source: Source,
}

impl AnnotationRecord {
    pub fn new(
        prompt_id: impl Into<String>,
        first: impl Into<String>,
        second: impl Into<String>,
        verdict: Verdict,
        source: Source,
    ) -> Self {
        Self {
            prompt_id: prompt_id.into(),
            first: first.into(),
            second: second.into(),
            verdict,
            source,
        }
    }

    /// `(winner, loser)` for strict verdicts, `None` for ties.
    pub fn winner_loser(&self) -> Option<(&str, &str)> {
        match self.verdict {
            Verdict::First => Some((&self.first, &self.second)),
            Verdict::Second => Some((&self.second, &self.first)),
            Verdict::Tie => None,
        }
    }
}

/// Lookup of responses by `(prompt_id, response_id)`.
#[derive(Debug, Clone, Default)]
pub struct ResponseIndex {
    by_key: BTreeMap<(String, String), ResponseRecord>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ResponseIndexError {
    #[error("prompt `{prompt_id}`: response `{response_id}` listed twice")]
    Duplicate { prompt_id: String, response_id: String },
    #[error("prompt `{prompt_id}`: response `{response_id}` has an empty category")]
    EmptyCategory { prompt_id: String, response_id: String },
}

impl ResponseIndex {
    pub fn new(records: &[ResponseRecord]) -> Result<Self, ResponseIndexError> {
        let mut by_key = BTreeMap::new();
        for r in records {
            if r.category.is_empty() {
                return Err(ResponseIndexError::EmptyCategory {
                    prompt_id: r.prompt_id.clone(),
                    response_id: r.response_id.clone(),
                });
            }
            let key = (r.prompt_id.clone(), r.response_id.clone());
            if by_key.insert(key, r.clone()).is_some() {
                return Err(ResponseIndexError::Duplicate {
                    prompt_id: r.prompt_id.clone(),
                    response_id: r.response_id.clone(),
                });
            }
        }
        Ok(Self { by_key })
    }

    pub fn get(&self, prompt_id: &str, response_id: &str) -> Option<&ResponseRecord> {
        self.by_key
            .get(&(prompt_id.to_string(), response_id.to_string()))
    }

    pub fn char_len(&self, prompt_id: &str, response_id: &str) -> Option<usize> {
        self.get(prompt_id, response_id).map(ResponseRecord::char_len)
    }

    /// Response ids of one prompt, sorted.
    pub fn response_ids(&self, prompt_id: &str) -> BTreeSet<String> {
        self.by_key
            .range((prompt_id.to_string(), String::new())..)
            .take_while(|((p, _), _)| p == prompt_id)
            .map(|((_, r), _)| r.clone())
            .collect()
    }

    /// Prompts in prompt_id order with their responses in input-independent
    /// (response_id) order.
    pub fn by_prompt(&self) -> BTreeMap<String, Vec<String>> {
        let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (p, r) in self.by_key.keys() {
            out.entry(p.clone()).or_default().push(r.clone());
        }
        out
    }

    pub fn records(&self) -> impl Iterator<Item = &ResponseRecord> {
        self.by_key.values()
    }

    pub fn len(&self) -> usize {
        self.by_key.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_key.is_empty()
    }
}
