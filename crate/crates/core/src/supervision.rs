//! Annotation scheduling, score-based filtering of machine verdicts, length
//! debiasing, response screening and annotator bias reports.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{build_graph, GraphError, PreferenceGraph};
use crate::metrics::{MetricsError, ScoreTable};
use crate::records::{AnnotationRecord, ResponseIndex, ResponseRecord, Source, Verdict};
use crate::rng;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SupervisionError {
    #[error("prompt `{prompt_id}`: need at least 2 distinct responses, got {found}")]
    TooFewResponses { prompt_id: String, found: usize },
    #[error("prompt `{prompt_id}`: triple schedules need exactly 5 responses, got {found}")]
    WrongCount { prompt_id: String, found: usize },
    #[error("prompt `{prompt_id}`: response `{response_id}` listed twice")]
    DuplicateResponse { prompt_id: String, response_id: String },
    #[error("prompt `{prompt_id}`: response `{response_id}` is not a known response")]
    DanglingResponse { prompt_id: String, response_id: String },
    #[error(transparent)]
    Score(#[from] MetricsError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Pair,
    Triple,
}

/// A comparison handed to an annotator, responses in presentation order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub prompt_id: String,
    pub kind: TaskKind,
    pub presented: Vec<String>,
}

/// A training pair with character lengths of both responses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt_id: String,
    pub chosen: String,
    pub rejected: String,
    pub chosen_len: usize,
    pub rejected_len: usize,
}

fn check_distinct(prompt_id: &str, ids: &[String]) -> Result<(), SupervisionError> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(SupervisionError::DuplicateResponse {
                prompt_id: prompt_id.to_string(),
                response_id: id.clone(),
            });
        }
    }
    Ok(())
}

/// One task per unordered pair; a coin flip from the seeded stream decides
/// which response is shown first.
pub fn schedule_pairs(
    prompt_id: &str,
    response_ids: &[String],
    seed: u64,
) -> Result<Vec<AnnotationTask>, SupervisionError> {
    check_distinct(prompt_id, response_ids)?;
    if response_ids.len() < 2 {
        return Err(SupervisionError::TooFewResponses {
            prompt_id: prompt_id.to_string(),
            found: response_ids.len(),
        });
    }
    let mut rng = rng::stream(seed, &format!("pairs/{prompt_id}"));
    let mut tasks = Vec::new();
    for (i, a) in response_ids.iter().enumerate() {
        for b in &response_ids[i + 1..] {
            let presented = if rng.gen::<bool>() {
                vec![b.clone(), a.clone()]
            } else {
                vec![a.clone(), b.clone()]
            };
            tasks.push(AnnotationTask {
                prompt_id: prompt_id.to_string(),
                kind: TaskKind::Pair,
                presented,
            });
        }
    }
    Ok(tasks)
}

/// Five triple tasks over circularly adjacent positions of a seeded
/// permutation of exactly five responses. Together they cover all ten pairs.
pub fn schedule_triples(
    prompt_id: &str,
    response_ids: &[String],
    seed: u64,
) -> Result<Vec<AnnotationTask>, SupervisionError> {
    check_distinct(prompt_id, response_ids)?;
    if response_ids.len() != 5 {
        return Err(SupervisionError::WrongCount {
            prompt_id: prompt_id.to_string(),
            found: response_ids.len(),
        });
    }
    let mut order = response_ids.to_vec();
    order.shuffle(&mut rng::stream(seed, &format!("triples/{prompt_id}")));
    Ok((0..5)
        .map(|k| AnnotationTask {
            prompt_id: prompt_id.to_string(),
            kind: TaskKind::Triple,
            presented: (0..3).map(|off| order[(k + off) % 5].clone()).collect(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterOptions<T> {
    /// A strict verdict survives only if the winner outscores the loser by more
    /// than this.
    pub margin: T,
    /// Keep ties whose score gap is within the margin (reported separately,
    /// never as pairs).
    pub retain_consistent_ties: bool,
}

impl<T: Scalar> Default for FilterOptions<T> {
    fn default() -> Self {
        Self {
            margin: T::zero(),
            retain_consistent_ties: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<PreferencePair>,
    pub retained_ties: Vec<AnnotationRecord>,
    pub dropped: usize,
    /// Graph of the kept pairs, per prompt. Always acyclic.
    pub graphs: BTreeMap<String, PreferenceGraph>,
}

/// Keeps the machine verdicts that agree with a trusted score table.
///
/// Every kept edge points from a higher to a strictly lower score, so the kept
/// graph of each prompt embeds in the score order and cannot contain a cycle.
pub fn filter_with_scores<T: Scalar>(
    annotations: &[AnnotationRecord],
    scores: &ScoreTable<T>,
    responses: &ResponseIndex,
    options: &FilterOptions<T>,
) -> Result<FilterOutcome, SupervisionError> {
    if !(options.margin >= T::zero()) || !options.margin.is_finite() {
        return Err(SupervisionError::InvalidConfig(format!(
            "margin must be finite and non-negative, got {}",
            options.margin
        )));
    }

    let mut outcome = FilterOutcome {
        kept: Vec::new(),
        retained_ties: Vec::new(),
        dropped: 0,
        graphs: BTreeMap::new(),
    };
    for a in annotations {
        let len = |id: &str| {
            responses
                .char_len(&a.prompt_id, id)
                .ok_or_else(|| SupervisionError::DanglingResponse {
                    prompt_id: a.prompt_id.clone(),
                    response_id: id.to_string(),
                })
        };
        let first = scores.require(&a.prompt_id, &a.first)?;
        let second = scores.require(&a.prompt_id, &a.second)?;
        len(&a.first)?;
        len(&a.second)?;

        match a.winner_loser() {
            Some((w, l)) => {
                let (sw, sl) = if w == a.first { (first, second) } else { (second, first) };
                if sw - sl > options.margin {
                    outcome.kept.push(PreferencePair {
                        prompt_id: a.prompt_id.clone(),
                        chosen: w.to_string(),
                        rejected: l.to_string(),
                        chosen_len: len(w)?,
                        rejected_len: len(l)?,
                    });
                } else {
                    outcome.dropped += 1;
                }
            }
            None => {
                if options.retain_consistent_ties && (first - second).abs() <= options.margin {
                    outcome.retained_ties.push(a.clone());
                } else {
                    outcome.dropped += 1;
                }
            }
        }
    }

    let mut by_prompt: BTreeMap<&str, Vec<AnnotationRecord>> = BTreeMap::new();
    for p in &outcome.kept {
        by_prompt.entry(&p.prompt_id).or_default().push(AnnotationRecord::new(
            p.prompt_id.clone(),
            p.chosen.clone(),
            p.rejected.clone(),
            Verdict::First,
            Source::Machine,
        ));
    }
    for (prompt_id, records) in by_prompt {
        let graph = build_graph(&records, None)?;
        debug_assert!(graph.is_acyclic());
        outcome.graphs.insert(prompt_id.to_string(), graph);
    }
    Ok(outcome)
}

/// Balances chosen-longer and chosen-shorter pairs by sampling the larger
/// group down without replacement. Equal-length pairs pass through. The output
/// keeps input order.
pub fn length_debias(pairs: &[PreferencePair], seed: u64) -> Vec<PreferencePair> {
    let longer: Vec<usize> = (0..pairs.len())
        .filter(|&i| pairs[i].chosen_len > pairs[i].rejected_len)
        .collect();
    let shorter: Vec<usize> = (0..pairs.len())
        .filter(|&i| pairs[i].chosen_len < pairs[i].rejected_len)
        .collect();
    let (larger, smaller) = if longer.len() >= shorter.len() {
        (&longer, &shorter)
    } else {
        (&shorter, &longer)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dropped = vec![false; pairs.len()];
    let mut keep = vec![false; larger.len()];
    for i in rand::seq::index::sample(&mut rng, larger.len(), smaller.len()) {
        keep[i] = true;
    }
    for (pos, &i) in larger.iter().enumerate() {
        dropped[i] = !keep[pos];
    }
    pairs
        .iter()
        .zip(dropped)
        .filter(|(_, d)| !d)
        .map(|(p, _)| p.clone())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum QualityFlag {
    AbnormalLength,
    NonTargetScript,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualityConfig {
    pub max_chars: usize,
    pub min_target_script_ratio: f64,
}

impl Default for QualityConfig {
    fn default() -> Self {
        Self {
            max_chars: 4096,
            min_target_script_ratio: 0.3,
        }
    }
}

impl QualityConfig {
    pub fn validate(&self) -> Result<(), SupervisionError> {
        if self.max_chars == 0 {
            return Err(SupervisionError::InvalidConfig("max_chars must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.min_target_script_ratio) {
            return Err(SupervisionError::InvalidConfig(format!(
                "min_target_script_ratio must lie in [0, 1], got {}",
                self.min_target_script_ratio
            )));
        }
        Ok(())
    }
}

/// CJK unified ideographs, base block and extensions A through H.
pub fn is_cjk_ideograph(c: char) -> bool {
    matches!(c as u32,
        0x4E00..=0x9FFF
        | 0x3400..=0x4DBF
        | 0x20000..=0x2A6DF
        | 0x2A700..=0x2EBEF
        | 0x30000..=0x323AF)
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c as u32,
            0x2000..=0x206F      // general punctuation
            | 0x3000..=0x303F    // CJK symbols and punctuation
            | 0xFE30..=0xFE4F    // CJK compatibility forms
            | 0xFF01..=0xFF0F
            | 0xFF1A..=0xFF20
            | 0xFF3B..=0xFF40
            | 0xFF5B..=0xFF65)
}

/// Share of CJK ideographs among the characters that carry script, i.e.
/// excluding whitespace, ASCII digits and punctuation. `None` when no such
/// character exists.
pub fn target_script_ratio(text: &str) -> Option<f64> {
    let mut counted = 0usize;
    let mut target = 0usize;
    for c in text.chars() {
        if c.is_whitespace() || c.is_ascii_digit() || is_punctuation(c) {
            continue;
        }
        counted += 1;
        if is_cjk_ideograph(c) {
            target += 1;
        }
    }
    (counted > 0).then(|| target as f64 / counted as f64)
}

pub fn quality_flags(response: &ResponseRecord, config: &QualityConfig) -> BTreeSet<QualityFlag> {
    let mut flags = BTreeSet::new();
    if response.char_len() > config.max_chars {
        flags.insert(QualityFlag::AbnormalLength);
    }
    match target_script_ratio(&response.text) {
        Some(r) if r >= config.min_target_script_ratio => {}
        _ => {
            flags.insert(QualityFlag::NonTargetScript);
        }
    }
    flags
}

/// Default length-difference bucket edges, in characters.
pub const DEFAULT_BUCKET_EDGES: [i64; 6] = [-500, -200, -50, 50, 200, 500];

/// Interval of `len(first) - len(second)`. A missing bound is infinite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DeltaRange {
    pub lo: Option<i64>,
    pub lo_inclusive: bool,
    pub hi: Option<i64>,
    pub hi_inclusive: bool,
}

impl DeltaRange {
    pub fn contains(&self, delta: i64) -> bool {
        let above = match self.lo {
            None => true,
            Some(lo) if self.lo_inclusive => delta >= lo,
            Some(lo) => delta > lo,
        };
        let below = match self.hi {
            None => true,
            Some(hi) if self.hi_inclusive => delta <= hi,
            Some(hi) => delta < hi,
        };
        above && below
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositionBias {
    pub first_shown_win_rate: Option<f64>,
    pub n: usize,
    pub ties: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LengthBucket {
    pub delta_range: DeltaRange,
    pub first_win_rate: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasReport {
    pub position: PositionBias,
    pub length_buckets: Vec<LengthBucket>,
}

/// Buckets delimited by strictly increasing `edges`. A negative edge closes
/// the bucket below it, a non-negative edge opens the bucket above it, which
/// keeps the buckets mirror-symmetric around zero.
pub fn length_buckets(edges: &[i64]) -> Result<Vec<DeltaRange>, SupervisionError> {
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SupervisionError::InvalidConfig(
            "bucket edges must be strictly increasing".into(),
        ));
    }
    Ok((0..=edges.len())
        .map(|k| {
            let lo = k.checked_sub(1).map(|i| edges[i]);
            let hi = edges.get(k).copied();
            DeltaRange {
                lo,
                lo_inclusive: lo.is_some_and(|e| e >= 0),
                hi,
                hi_inclusive: hi.is_some_and(|e| e < 0),
            }
        })
        .collect())
}

fn rate(wins: usize, n: usize) -> Option<f64> {
    (n > 0).then(|| wins as f64 / n as f64)
}

/// Positional and length preferences of an annotator. Ties are counted but
/// excluded from every rate.
pub fn bias_report(
    annotations: &[AnnotationRecord],
    responses: &ResponseIndex,
    bucket_edges: &[i64],
) -> Result<BiasReport, SupervisionError> {
    let ranges = length_buckets(bucket_edges)?;
    let mut bucket_counts = vec![(0usize, 0usize); ranges.len()];
    let (mut first_wins, mut decided, mut ties) = (0, 0, 0);

    for a in annotations {
        let len = |id: &str| {
            responses
                .char_len(&a.prompt_id, id)
                .ok_or_else(|| SupervisionError::DanglingResponse {
                    prompt_id: a.prompt_id.clone(),
                    response_id: id.to_string(),
                })
        };
        let delta = len(&a.first)? as i64 - len(&a.second)? as i64;
        let first_won = match a.verdict {
            Verdict::First => true,
            Verdict::Second => false,
            Verdict::Tie => {
                ties += 1;
                continue;
            }
        };
        decided += 1;
        first_wins += usize::from(first_won);
        let bucket = ranges
            .iter()
            .position(|r| r.contains(delta))
            .expect("buckets cover the integers");
        bucket_counts[bucket].0 += usize::from(first_won);
        bucket_counts[bucket].1 += 1;
    }

    Ok(BiasReport {
        position: PositionBias {
            first_shown_win_rate: rate(first_wins, decided),
            n: decided,
            ties,
        },
        length_buckets: ranges
            .into_iter()
            .zip(bucket_counts)
            .map(|(delta_range, (wins, n))| LengthBucket {
                delta_range,
                first_win_rate: rate(wins, n),
                n,
            })
            .collect(),
    })
}
