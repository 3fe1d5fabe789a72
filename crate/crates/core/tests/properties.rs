mod common;

use std::collections::{BTreeMap, BTreeSet};

use prefkit::graph::{build_graph, conflict_ratio, resolve};
use prefkit::metrics::{evaluate, pairwise_accuracy, ScoreTable};
use prefkit::supervision::{filter_with_scores, length_debias, schedule_pairs, schedule_triples, FilterOptions};
use prefkit::trainer::{bt_loss, bt_loss_and_gradient, pack_batches, train, Batch, FeatureTable, Grouping, LinearRewardModel, TrainingConfig};
use prefkit::{AnnotationRecord, FeatureRecord, PartialRanking, PreferencePair, ResponseIndex, ResponseRecord, Source, Verdict};
use proptest::prelude::*;
use proptest::sample::subsequence;

use common::*;

fn verdict() -> impl Strategy<Value = Verdict> {
    prop_oneof![Just(Verdict::First), Just(Verdict::Second), Just(Verdict::Tie)]
}

fn annotations(max_nodes: usize, max_records: usize) -> impl Strategy<Value = Vec<AnnotationRecord>> {
    (2..=max_nodes).prop_flat_map(move |n| {
        prop::collection::vec((0..n, 1..n, verdict()), 1..=max_records).prop_map(move |raw| {
            raw.into_iter()
                .map(|(a, off, v)| AnnotationRecord::new("p", name(a), name((a + off) % n), v, Source::Human))
                .collect()
        })
    })
}

/// Strict verdicts that agree with a hidden total order, so no cycles arise.
fn acyclic_annotations() -> impl Strategy<Value = Vec<AnnotationRecord>> {
    (2..=6usize).prop_flat_map(|n| {
        prop::collection::vec((0..n, 1..n, any::<bool>()), 1..=12).prop_map(move |raw| {
            raw.into_iter()
                .map(|(a, off, flip)| {
                    let b = (a + off) % n;
                    let (hi, lo) = (a.min(b), a.max(b));
                    let (first, second, v) = if flip { (lo, hi, Verdict::Second) } else { (hi, lo, Verdict::First) };
                    AnnotationRecord::new("p", name(first), name(second), v, Source::Human)
                })
                .collect()
        })
    })
}

fn ranking_of(records: &[AnnotationRecord]) -> PartialRanking {
    resolve(&build_graph(records, None).unwrap())
}

fn scores_for(ranking: &PartialRanking, values: &[i32]) -> ScoreTable<f64> {
    let ids: Vec<&String> = ranking.tiers.iter().flatten().collect();
    ScoreTable::from_entries(
        ids.into_iter()
            .zip(values.iter().cycle())
            .map(|(id, v)| (ranking.prompt_id.clone(), id.clone(), f64::from(*v))),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn supernodes_are_mutually_reachable(records in annotations(6, 12)) {
        let ranking = ranking_of(&records);
        let mut got = ranking.supernodes.clone();
        got.sort();
        prop_assert_eq!(got, mutual_classes(&raw_edges(&records)));
    }

    #[test]
    fn strict_annotations_are_preserved(records in annotations(6, 12)) {
        let ranking = ranking_of(&records);
        for r in &records {
            if let Some((w, l)) = r.winner_loser() {
                let merged = ranking.supernode_of(w) == ranking.supernode_of(l);
                prop_assert!(merged || ranking.prefers(w, l));
            }
        }
    }

    #[test]
    fn resolving_twice_changes_nothing(records in annotations(6, 12)) {
        let first = ranking_of(&records);
        let again: Vec<AnnotationRecord> = first
            .closure
            .iter()
            .map(|(w, l)| AnnotationRecord::new("p", w.clone(), l.clone(), Verdict::First, Source::Human))
            .collect();
        prop_assume!(!again.is_empty());
        let second = ranking_of(&again);
        prop_assert_eq!(first.closure, second.closure);
    }

    #[test]
    fn record_order_is_irrelevant(records in annotations(6, 12), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut shuffled = records.clone();
        shuffled.shuffle(&mut rng(seed));
        prop_assert_eq!(ranking_of(&records), ranking_of(&shuffled));
    }

    #[test]
    fn acyclic_sets_have_no_conflicts(records in acyclic_annotations()) {
        let ranking = ranking_of(&records);
        prop_assert!(ranking.supernodes.iter().all(|s| s.len() == 1));
        prop_assert_eq!(conflict_ratio(&records, &ranking).unwrap(), 0.0);
    }

    #[test]
    fn accuracy_survives_increasing_affine_maps(
        records in annotations(5, 10),
        values in prop::collection::vec(-5i32..5, 5),
        scale in 0.1f64..10.0,
        shift in -100.0f64..100.0,
    ) {
        let ranking = ranking_of(&records);
        let scores = scores_for(&ranking, &values);
        let mapped = scores.map_scores(|_, _, s| s * scale + shift);
        let cats = BTreeMap::new();
        let rankings = [ranking];
        prop_assert_eq!(
            pairwise_accuracy(&rankings, &scores, &cats).unwrap(),
            pairwise_accuracy(&rankings, &mapped, &cats).unwrap()
        );
    }

    #[test]
    fn exact_match_implies_full_accuracy(
        sets in prop::collection::vec((annotations(5, 8), prop::collection::vec(-3i32..3, 5)), 1..6),
    ) {
        let mut rankings = Vec::new();
        let mut scores = ScoreTable::new();
        for (i, (records, values)) in sets.iter().enumerate() {
            let prompt = format!("p{i}");
            let records: Vec<AnnotationRecord> = records
                .iter()
                .map(|r| AnnotationRecord { prompt_id: prompt.clone(), ..r.clone() })
                .collect();
            let ranking = ranking_of(&records);
            for (_, id, s) in scores_for(&ranking, values).iter() {
                scores.insert(prompt.clone(), id.to_string(), s).unwrap();
            }
            rankings.push(ranking);
        }
        let report = evaluate(&rankings, &scores, &BTreeMap::new()).unwrap();
        if report.macro_exact == 1.0 {
            prop_assert!(report.macro_accuracy.is_none_or(|a| a == 1.0));
        }
        let mut reversed = rankings.clone();
        reversed.reverse();
        prop_assert_eq!(report, evaluate(&reversed, &scores, &BTreeMap::new()).unwrap());
    }

    #[test]
    fn filter_keeps_only_score_consistent_pairs(
        records in annotations(5, 12),
        values in prop::collection::vec(0i32..4, 5),
        margin in 0.0f64..3.0,
    ) {
        let responses: Vec<ResponseRecord> = (0..5)
            .map(|i| ResponseRecord {
                prompt_id: "p".into(),
                response_id: name(i),
                category: "c".into(),
                model: "m".into(),
                text: "y".repeat(i + 1),
            })
            .collect();
        let index = ResponseIndex::new(&responses).unwrap();
        let scores = ScoreTable::from_entries((0..5).map(|i| ("p", name(i), f64::from(values[i])))).unwrap();
        let out = filter_with_scores(&records, &scores, &index, &FilterOptions { margin, retain_consistent_ties: false }).unwrap();
        prop_assert_eq!(out.kept.len() + out.dropped, records.len());
        for p in &out.kept {
            let gap = scores.get("p", &p.chosen).unwrap() - scores.get("p", &p.rejected).unwrap();
            prop_assert!(gap > margin);
            prop_assert_eq!(p.chosen_len, index.char_len("p", &p.chosen).unwrap());
        }
        let edges: BTreeSet<(String, String)> = out.kept.iter().map(|p| (p.chosen.clone(), p.rejected.clone())).collect();
        prop_assert!(!has_cycle(&edges));
    }

    #[test]
    fn debias_output_is_balanced_subsequence(
        lens in prop::collection::vec((0usize..8, 0usize..8), 0..40),
        seed in any::<u64>(),
    ) {
        let pairs: Vec<PreferencePair> = lens
            .iter()
            .enumerate()
            .map(|(i, &(c, r))| PreferencePair {
                prompt_id: format!("p{i}"),
                chosen: "a".into(),
                rejected: "b".into(),
                chosen_len: c,
                rejected_len: r,
            })
            .collect();
        let out = length_debias(&pairs, seed);
        let longer = out.iter().filter(|p| p.chosen_len > p.rejected_len).count();
        let shorter = out.iter().filter(|p| p.chosen_len < p.rejected_len).count();
        prop_assert_eq!(longer, shorter);
        let equal_in = pairs.iter().filter(|p| p.chosen_len == p.rejected_len).count();
        let equal_out = out.iter().filter(|p| p.chosen_len == p.rejected_len).count();
        prop_assert_eq!(equal_in, equal_out);
        let mut it = pairs.iter();
        prop_assert!(out.iter().all(|p| it.any(|q| q == p)));
    }

    #[test]
    fn pair_schedule_covers_every_pair_once(n in 2usize..9, seed in any::<u64>()) {
        let ids: Vec<String> = (0..n).map(name).collect();
        let tasks = schedule_pairs("p", &ids, seed).unwrap();
        prop_assert_eq!(tasks.len(), n * (n - 1) / 2);
        let unordered: BTreeSet<BTreeSet<&String>> = tasks.iter().map(|t| t.presented.iter().collect()).collect();
        prop_assert_eq!(unordered.len(), tasks.len());
        prop_assert_eq!(tasks, schedule_pairs("p", &ids, seed).unwrap());
    }

    #[test]
    fn triple_schedule_covers_all_ten_pairs(seed in any::<u64>()) {
        let ids: Vec<String> = (0..5).map(name).collect();
        let tasks = schedule_triples("p", &ids, seed).unwrap();
        let mut covered = BTreeSet::new();
        for t in &tasks {
            for i in 0..3 {
                for j in i + 1..3 {
                    let mut pair = [t.presented[i].clone(), t.presented[j].clone()];
                    pair.sort();
                    covered.insert(pair);
                }
            }
        }
        prop_assert_eq!(covered.len(), 10);
    }

    #[test]
    fn packing_places_each_response_once(
        sizes in prop::collection::vec(1usize..12, 1..15),
        capacity in 2usize..20,
        seed in any::<u64>(),
        defer in any::<bool>(),
    ) {
        let groups: BTreeMap<String, Vec<String>> = sizes
            .iter()
            .enumerate()
            .map(|(g, &n)| (format!("p{g}"), (0..n).map(name).collect()))
            .collect();
        let grouping = if defer { Grouping::DeferWhole } else { Grouping::Split };
        let batches = pack_batches(&groups, capacity, seed, grouping).unwrap();
        let mut placed = BTreeMap::new();
        for b in &batches {
            prop_assert!(b.len() <= capacity);
            for (p, members) in &b.groups {
                for m in members {
                    *placed.entry((p.clone(), m.clone())).or_insert(0) += 1;
                }
            }
        }
        prop_assert_eq!(placed.len(), sizes.iter().sum::<usize>());
        prop_assert!(placed.values().all(|&n| n == 1));
    }
}

fn feature_batch(dim: usize, rows: &[Vec<f64>]) -> (Batch, BTreeMap<String, Vec<(String, String)>>, FeatureTable<f64>) {
    let ids: Vec<String> = (0..rows.len()).map(name).collect();
    let records = ids
        .iter()
        .zip(rows)
        .map(|(id, x)| FeatureRecord { prompt_id: "p".into(), response_id: id.clone(), features: x[..dim].to_vec() })
        .collect();
    let mut pairs = Vec::new();
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            pairs.push((ids[i].clone(), ids[j].clone()));
        }
    }
    let batch = Batch { groups: vec![("p".into(), ids)] };
    let closure = BTreeMap::from([("p".to_string(), pairs)]);
    (batch, closure, FeatureTable::new(records).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn loss_is_non_negative_and_gradient_matches(
        dim in 1usize..6,
        rows in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 6), 2..6),
        params in prop::collection::vec(-2.0f64..2.0, 7),
        reg in 0.0f64..1.0,
    ) {
        let (batch, closure, features) = feature_batch(dim, &rows);
        let model = LinearRewardModel { weights: params[..dim].to_vec(), bias: params[6] };
        let (loss, grad) = bt_loss_and_gradient(&batch, &closure, &features, &model, reg).unwrap();
        prop_assert!(loss >= 0.0);

        let mut theta = model.weights.clone();
        theta.push(model.bias);
        let numeric = central_difference(&theta, 1e-5, |t| {
            let probe = LinearRewardModel { weights: t[..dim].to_vec(), bias: t[dim] };
            bt_loss(&batch, &closure, &features, &probe, reg).unwrap()
        });
        let mut analytic = grad.weights.clone();
        analytic.push(grad.bias);
        prop_assert!(relative_error(&analytic, &numeric) < 1e-6);
    }

    #[test]
    fn pair_term_ignores_the_bias(
        rows in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 2..6),
        weights in prop::collection::vec(-2.0f64..2.0, 3),
        shift in -5.0f64..5.0,
    ) {
        let (batch, closure, features) = feature_batch(3, &rows);
        let base = LinearRewardModel { weights: weights.clone(), bias: 0.0 };
        let shifted = LinearRewardModel { weights, bias: shift };
        let a = bt_loss(&batch, &closure, &features, &base, 0.0).unwrap();
        let b = bt_loss(&batch, &closure, &features, &shifted, 0.0).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn full_batch_descent_does_not_increase_loss() {
    use rand::Rng;
    let mut rng = rng(11);
    for _ in 0..50 {
        let rows: Vec<Vec<f64>> = (0..5).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let (batch, closure, features) = feature_batch(4, &rows);
        let mut model = LinearRewardModel::zeros(4);
        let mut last = f64::INFINITY;
        for _ in 0..30 {
            let (loss, grad) = bt_loss_and_gradient(&batch, &closure, &features, &model, 0.1).unwrap();
            assert!(loss <= last + 1e-12, "loss rose from {last} to {loss}");
            last = loss;
            model.descend(&grad, 1e-2);
        }
    }
}

#[test]
fn training_history_is_reproducible() {
    let (features, rankings) = separable_set(30);
    let features = FeatureTable::new(features).unwrap();
    let config = TrainingConfig { batch_capacity: 8, epochs: 5, ..Default::default() };
    let a = train(&features, &rankings, &config).unwrap();
    let b = train(&features, &rankings, &config).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.history.len(), 5);
}

#[test]
fn filtering_a_subset_keeps_a_subset() {
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let all: Vec<AnnotationRecord> = (0..4)
        .flat_map(|a| (0..4).filter(move |&b| b != a).map(move |b| (a, b)))
        .map(|(a, b)| AnnotationRecord::new("p", name(a), name(b), Verdict::First, Source::Machine))
        .collect();
    let responses: Vec<ResponseRecord> = (0..4)
        .map(|i| ResponseRecord { prompt_id: "p".into(), response_id: name(i), category: "c".into(), model: "m".into(), text: "z".into() })
        .collect();
    let index = ResponseIndex::new(&responses).unwrap();
    let scores = ScoreTable::from_entries((0..4).map(|i| ("p", name(i), f64::from(3 - i as i32)))).unwrap();
    let full = filter_with_scores(&all, &scores, &index, &FilterOptions::default()).unwrap();
    runner
        .run(&subsequence(all.clone(), 0..all.len()), |part| {
            let out = filter_with_scores(&part, &scores, &index, &FilterOptions::default()).unwrap();
            prop_assert!(out.kept.iter().all(|p| full.kept.contains(p)));
            Ok(())
        })
        .unwrap();
}
