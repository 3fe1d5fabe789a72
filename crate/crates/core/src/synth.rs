//! Seeded synthetic corpora for demos and end-to-end tests.
//!
//! Each response has a hidden quality in `[0, 1)`. Human verdicts, reward
//! scores and feature vectors are noisy views of that quality; the simulated
//! machine annotator adds a preference for the second-shown response.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::format::ScoreLine;
use crate::records::{AnnotationRecord, ResponseRecord, Source, Verdict};
use crate::rng;
use crate::supervision::{schedule_triples, AnnotationTask, SupervisionError};
use crate::trainer::FeatureRecord;

const CATEGORIES: [&str; 3] = ["coding", "reasoning", "writing"];
const MODELS: [&str; 5] = ["model-a", "model-b", "model-c", "model-d", "model-e"];
const HANZI: &str = "的一是在不了有和人这中大为上个国我以要他时来用们生到作地于出就分对成会可主发年动同工也能下过子说产种面而方后多定行学法所民得经十三之进着等部度家电力里如水化高自二理起小物现实加量都两体制机当使点从业本去把性好应开它合还因由其些然前外天政四日那社义事平形相全表间样与关各重新线内数正心反你明看原又么利比或但质气第向道命此变条只没结解问意建月公无系军很情者最立代想已通并提直题党程展五果料象员革位入常文总次品式活设及管特件长求老头基资边流路级少图山统接知较将组见计别她手角期根论运农指几九区强放决西被干做必战先回则任取据处理府研";
const LATIN: &str = "abcdefghijklmnopqrstuvwxyz";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusSpec {
    pub prompts: usize,
    pub feature_dim: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            prompts: 24,
            feature_dim: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthLine {
    pub prompt_id: String,
    pub response_id: String,
    pub quality: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub responses: Vec<ResponseRecord>,
    pub human_annotations: Vec<AnnotationRecord>,
    pub scores: Vec<ScoreLine>,
    pub features: Vec<FeatureRecord<f64>>,
    pub truth: Vec<TruthLine>,
}

fn symmetric<R: Rng>(rng: &mut R, half_width: f64) -> f64 {
    rng.gen_range(-half_width..half_width)
}

fn text<R: Rng>(rng: &mut R, quality: f64) -> String {
    let hanzi: Vec<char> = HANZI.chars().collect();
    let latin: Vec<char> = LATIN.chars().collect();
    let len = 20 + (quality * 40.0) as usize + rng.gen_range(0..120);
    let latin_share = rng.gen_range(0.0..0.4);
    let mut out = String::new();
    for i in 0..len {
        if i > 0 && i % 17 == 0 {
            out.push('，');
        } else if rng.gen_bool(latin_share) {
            out.push(latin[rng.gen_range(0..latin.len())]);
        } else {
            out.push(hanzi[rng.gen_range(0..hanzi.len())]);
        }
    }
    out.push('。');
    out
}

fn verdict(first_quality: f64, second_quality: f64, tie_band: f64) -> Verdict {
    let gap = first_quality - second_quality;
    if gap.abs() < tie_band {
        Verdict::Tie
    } else if gap > 0.0 {
        Verdict::First
    } else {
        Verdict::Second
    }
}

/// Pairwise records for a task: every within-task pair in presentation order.
fn task_pairs(task: &AnnotationTask) -> Vec<(&str, &str)> {
    let p = &task.presented;
    let mut out = Vec::new();
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            out.push((p[i].as_str(), p[j].as_str()));
        }
    }
    out
}

pub fn generate(spec: &CorpusSpec) -> Result<Corpus, SupervisionError> {
    let mut corpus = Corpus {
        responses: Vec::new(),
        human_annotations: Vec::new(),
        scores: Vec::new(),
        features: Vec::new(),
        truth: Vec::new(),
    };
    for p in 0..spec.prompts {
        let prompt_id = format!("p{p:03}");
        let category = CATEGORIES[p % CATEGORIES.len()];
        let mut rng = rng::stream(spec.seed, &format!("corpus/{prompt_id}"));
        let mut quality = Vec::new();
        let ids: Vec<String> = (1..=5).map(|i| format!("r{i}")).collect();
        for (i, id) in ids.iter().enumerate() {
            let q: f64 = rng.gen();
            quality.push(q);
            corpus.responses.push(ResponseRecord {
                prompt_id: prompt_id.clone(),
                response_id: id.clone(),
                category: category.to_string(),
                model: MODELS[i].to_string(),
                text: text(&mut rng, q),
            });
            corpus.truth.push(TruthLine {
                prompt_id: prompt_id.clone(),
                response_id: id.clone(),
                quality: q,
            });
            corpus.scores.push(ScoreLine {
                prompt_id: prompt_id.clone(),
                response_id: id.clone(),
                score: q + symmetric(&mut rng, 0.15),
            });
            let features = (0..spec.feature_dim)
                .map(|k| match k % 3 {
                    0 => q + symmetric(&mut rng, 0.2),
                    1 => 1.0 - q + symmetric(&mut rng, 0.3),
                    _ => symmetric(&mut rng, 1.0),
                })
                .collect();
            corpus.features.push(FeatureRecord {
                prompt_id: prompt_id.clone(),
                response_id: id.clone(),
                features,
            });
        }

        let q = |id: &str| quality[ids.iter().position(|x| x == id).expect("known id")];
        for task in schedule_triples(&prompt_id, &ids, spec.seed)? {
            for (first, second) in task_pairs(&task) {
                let noisy_first = q(first) + symmetric(&mut rng, 0.12);
                let noisy_second = q(second) + symmetric(&mut rng, 0.12);
                corpus.human_annotations.push(AnnotationRecord::new(
                    prompt_id.clone(),
                    first,
                    second,
                    verdict(noisy_first, noisy_second, 0.02),
                    Source::Human,
                ));
            }
        }
    }
    Ok(corpus)
}

/// Answers tasks from hidden qualities with noise and a second-slot bonus.
/// Triple tasks yield one record per within-triple pair.
pub fn simulate_annotator(
    tasks: &[AnnotationTask],
    truth: &[TruthLine],
    seed: u64,
) -> Result<Vec<AnnotationRecord>, SupervisionError> {
    let lookup = |prompt_id: &str, id: &str| {
        truth
            .iter()
            .find(|t| t.prompt_id == prompt_id && t.response_id == id)
            .map(|t| t.quality)
            .ok_or_else(|| SupervisionError::DanglingResponse {
                prompt_id: prompt_id.to_string(),
                response_id: id.to_string(),
            })
    };
    let mut rng = rng::stream(seed, "annotator");
    let mut out = Vec::new();
    for task in tasks {
        for (first, second) in task_pairs(task) {
            let a = lookup(&task.prompt_id, first)? + symmetric(&mut rng, 0.25);
            let b = lookup(&task.prompt_id, second)? + 0.05 + symmetric(&mut rng, 0.25);
            out.push(AnnotationRecord::new(
                task.prompt_id.clone(),
                first,
                second,
                verdict(a, b, 0.01),
                Source::Machine,
            ));
        }
    }
    Ok(out)
}
