//! Brute-force oracles and seeded fixture generators shared by the
//! integration suites. Nothing here calls into the library's graph algorithms.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use prefkit::{AnnotationRecord, Source, Verdict};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn name(i: usize) -> String {
    format!("r{i}")
}

/// Random annotations over `n` responses whose raw edge count stays within
/// `max_edges` (a tie costs two edges).
pub fn random_annotations(rng: &mut ChaCha8Rng, prompt: &str, n: usize, max_edges: usize, tie_prob: f64) -> Vec<AnnotationRecord> {
    let target = rng.gen_range(1..=max_edges);
    let mut edges = 0;
    let mut out = Vec::new();
    while edges < target {
        let a = rng.gen_range(0..n);
        let mut b = rng.gen_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        let verdict = if rng.gen_bool(tie_prob) {
            if edges + 2 > max_edges {
                continue;
            }
            edges += 2;
            Verdict::Tie
        } else {
            edges += 1;
            if rng.gen_bool(0.5) { Verdict::First } else { Verdict::Second }
        };
        out.push(AnnotationRecord::new(prompt, name(a), name(b), verdict, Source::Human));
    }
    out
}

/// Raw directed edges implied by annotations, over response names.
pub fn raw_edges(records: &[AnnotationRecord]) -> BTreeSet<(String, String)> {
    let mut edges = BTreeSet::new();
    for r in records {
        match r.verdict {
            Verdict::First => {
                edges.insert((r.first.clone(), r.second.clone()));
            }
            Verdict::Second => {
                edges.insert((r.second.clone(), r.first.clone()));
            }
            Verdict::Tie => {
                edges.insert((r.first.clone(), r.second.clone()));
                edges.insert((r.second.clone(), r.first.clone()));
            }
        }
    }
    edges
}

/// Reflexive-transitive reachability by Floyd-Warshall over node names.
pub fn reachability(edges: &BTreeSet<(String, String)>) -> (Vec<String>, Vec<Vec<bool>>) {
    let nodes: Vec<String> = edges
        .iter()
        .flat_map(|(a, b)| [a.clone(), b.clone()])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let idx: BTreeMap<&String, usize> = nodes.iter().enumerate().map(|(i, n)| (n, i)).collect();
    let n = nodes.len();
    let mut reach = vec![vec![false; n]; n];
    for (i, row) in reach.iter_mut().enumerate() {
        row[i] = true;
    }
    for (a, b) in edges {
        reach[idx[a]][idx[b]] = true;
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    (nodes, reach)
}

/// Mutual-reachability classes, each sorted, sorted by first member.
pub fn mutual_classes(edges: &BTreeSet<(String, String)>) -> Vec<Vec<String>> {
    let (nodes, reach) = reachability(edges);
    let mut classes: BTreeSet<Vec<String>> = BTreeSet::new();
    for i in 0..nodes.len() {
        let class: Vec<String> = (0..nodes.len())
            .filter(|&j| reach[i][j] && reach[j][i])
            .map(|j| nodes[j].clone())
            .collect();
        classes.insert(class);
    }
    classes.into_iter().collect()
}

/// Strict preferences: `u` reaches `v` but not the other way round.
pub fn strict_pairs(edges: &BTreeSet<(String, String)>) -> BTreeSet<(String, String)> {
    let (nodes, reach) = reachability(edges);
    let mut out = BTreeSet::new();
    for i in 0..nodes.len() {
        for j in 0..nodes.len() {
            if reach[i][j] && !reach[j][i] {
                out.insert((nodes[i].clone(), nodes[j].clone()));
            }
        }
    }
    out
}

/// True when the directed graph has a cycle, by repeatedly deleting sinks.
pub fn has_cycle<N: Ord + Clone>(edges: &BTreeSet<(N, N)>) -> bool {
    let mut remaining: BTreeSet<(N, N)> = edges.iter().filter(|(a, b)| a != b).cloned().collect();
    let self_loop = edges.iter().any(|(a, b)| a == b);
    if self_loop {
        return true;
    }
    loop {
        let sources: BTreeSet<N> = remaining.iter().map(|(a, _)| a.clone()).collect();
        let targets: BTreeSet<N> = remaining.iter().map(|(_, b)| b.clone()).collect();
        let sinks: BTreeSet<&N> = targets.iter().filter(|t| !sources.contains(*t)).collect();
        if remaining.is_empty() {
            return false;
        }
        if sinks.is_empty() {
            return true;
        }
        remaining.retain(|(_, b)| !sinks.contains(b));
    }
}

/// Separable one-dimensional data set: per prompt the chosen response has
/// feature +1 and the rejected one -1.
pub fn separable_set(n: usize) -> (Vec<prefkit::FeatureRecord>, Vec<prefkit::PartialRanking>) {
    let mut features = Vec::new();
    let mut rankings = Vec::new();
    for i in 0..n {
        let p = format!("p{i:04}");
        features.push(prefkit::FeatureRecord { prompt_id: p.clone(), response_id: "c".into(), features: vec![1.0] });
        features.push(prefkit::FeatureRecord { prompt_id: p.clone(), response_id: "r".into(), features: vec![-1.0] });
        rankings.push(
            prefkit::PartialRanking::from_parts(
                p,
                vec![vec!["c".to_string()], vec!["r".to_string()]],
                [("c".to_string(), "r".to_string())],
            )
            .unwrap(),
        );
    }
    (features, rankings)
}

/// Central finite-difference gradient of `f` at `x`.
pub fn central_difference(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt())
        .max(1e-12);
    diff / scale
}
