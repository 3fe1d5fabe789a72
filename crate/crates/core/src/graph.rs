//! Per-prompt preference graphs, cycle merging and partial rankings.
//!
//! Annotations become directed edges between responses (winner to loser, both
//! directions for a tie). Responses lying on a common cycle are judged to be of
//! equal quality and merged into a supernode; the condensed graph is acyclic and
//! is layered with Kahn's algorithm into tiers. Pairwise comparisons are read off
//! the transitive closure of the condensed graph.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::records::{AnnotationRecord, Verdict};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("annotations mix prompts `{expected}` and `{found}`")]
    MixedPrompt { expected: String, found: String },
    #[error("prompt `{prompt_id}`: response `{response_id}` is not a known response")]
    DanglingResponse { prompt_id: String, response_id: String },
    #[error("prompt `{prompt_id}`: response `{response_id}` is compared with itself")]
    SelfComparison { prompt_id: String, response_id: String },
    #[error("prompt `{prompt_id}`: response `{response_id}` is absent from the ranking")]
    RankingMismatch { prompt_id: String, response_id: String },
    #[error("prompt `{prompt_id}`: invalid ranking: {reason}")]
    InvalidRanking { prompt_id: String, reason: String },
}

/// Directed preference structure for one prompt.
///
/// `edges` connect supernode indices. Supernode members are sorted and
/// supernodes are ordered by their smallest member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferenceGraph {
    pub prompt_id: String,
    pub supernodes: Vec<Vec<String>>,
    pub edges: BTreeSet<(usize, usize)>,
    pub membership: BTreeMap<String, usize>,
}

impl PreferenceGraph {
    /// Builds a graph from explicit supernodes and edges, canonicalizing the order.
    /// Self-edges are discarded.
    pub fn from_parts(
        prompt_id: impl Into<String>,
        supernodes: Vec<Vec<String>>,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Self {
        let mut groups: Vec<(Vec<String>, usize)> = supernodes
            .into_iter()
            .enumerate()
            .map(|(old, mut members)| {
                members.sort();
                members.dedup();
                (members, old)
            })
            .collect();
        groups.sort();
        let mut remap = vec![0; groups.len()];
        for (new, (_, old)) in groups.iter().enumerate() {
            remap[*old] = new;
        }
        let supernodes: Vec<Vec<String>> = groups.into_iter().map(|(m, _)| m).collect();
        let edges = edges
            .into_iter()
            .map(|(u, v)| (remap[u], remap[v]))
            .filter(|(u, v)| u != v)
            .collect();
        let membership = supernodes
            .iter()
            .enumerate()
            .flat_map(|(i, members)| members.iter().map(move |m| (m.clone(), i)))
            .collect();
        Self {
            prompt_id: prompt_id.into(),
            supernodes,
            edges,
            membership,
        }
    }

    pub fn node_count(&self) -> usize {
        self.supernodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.supernodes.is_empty()
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count()];
        for &(u, v) in &self.edges {
            adj[u].push(v);
        }
        adj
    }

    /// True when no directed cycle exists among supernodes.
    pub fn is_acyclic(&self) -> bool {
        find_cycle(self.node_count(), &self.edges).is_none()
    }
}

/// Tiers (tier 0 is best) plus the strict preference closure over responses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartialRanking {
    pub prompt_id: String,
    pub tiers: Vec<Vec<String>>,
    pub closure: BTreeSet<(String, String)>,
    /// Equal-quality groups the tiers were built from.
    pub supernodes: Vec<Vec<String>>,
}

impl PartialRanking {
    pub fn empty(prompt_id: impl Into<String>) -> Self {
        Self {
            prompt_id: prompt_id.into(),
            tiers: Vec::new(),
            closure: BTreeSet::new(),
            supernodes: Vec::new(),
        }
    }

    /// Rebuilds a ranking from its serialized parts, validating the invariants.
    ///
    /// Supernodes are not stored on disk. They are recovered as groups of
    /// same-tier responses with identical closure neighbourhoods, which is exact
    /// for every ranking whose merged groups are distinguishable by their
    /// comparisons.
    pub fn from_parts(
        prompt_id: impl Into<String>,
        tiers: Vec<Vec<String>>,
        closure: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, GraphError> {
        let prompt_id = prompt_id.into();
        let invalid = |reason: String| GraphError::InvalidRanking {
            prompt_id: prompt_id.clone(),
            reason,
        };
        let mut tier_of = BTreeMap::new();
        let mut tiers = tiers;
        for (t, tier) in tiers.iter_mut().enumerate() {
            if tier.is_empty() {
                return Err(invalid(format!("tier {t} is empty")));
            }
            tier.sort();
            for id in tier.iter() {
                if tier_of.insert(id.clone(), t).is_some() {
                    return Err(invalid(format!("response `{id}` appears twice")));
                }
            }
        }
        let closure: BTreeSet<(String, String)> = closure.into_iter().collect();
        for (w, l) in &closure {
            for id in [w, l] {
                if !tier_of.contains_key(id) {
                    return Err(invalid(format!("closure references unranked `{id}`")));
                }
            }
            if w == l {
                return Err(invalid(format!("closure pair ({w}, {l}) is reflexive")));
            }
            if closure.contains(&(l.clone(), w.clone())) {
                return Err(invalid(format!("closure relates ({w}, {l}) both ways")));
            }
        }
        for (a, b) in &closure {
            let successors = closure
                .range((b.clone(), String::new())..)
                .take_while(|(x, _)| x == b);
            for (_, c) in successors {
                if !closure.contains(&(a.clone(), c.clone())) {
                    return Err(invalid(format!(
                        "closure is not transitive: missing ({a}, {c})"
                    )));
                }
            }
        }

        let mut signature: BTreeMap<(usize, Vec<&String>, Vec<&String>), Vec<String>> =
            BTreeMap::new();
        for (id, &t) in &tier_of {
            let above: Vec<&String> = closure.iter().filter(|(_, l)| l == id).map(|(w, _)| w).collect();
            let below: Vec<&String> = closure.iter().filter(|(w, _)| w == id).map(|(_, l)| l).collect();
            signature.entry((t, above, below)).or_default().push(id.clone());
        }
        let mut supernodes: Vec<Vec<String>> = signature.into_values().collect();
        supernodes.sort();

        Ok(Self {
            prompt_id,
            tiers,
            closure,
            supernodes,
        })
    }

    pub fn response_count(&self) -> usize {
        self.tiers.iter().map(Vec::len).sum()
    }

    pub fn contains(&self, response_id: &str) -> bool {
        self.tiers.iter().any(|t| t.iter().any(|r| r == response_id))
    }

    pub fn supernode_of(&self, response_id: &str) -> Option<usize> {
        self.supernodes
            .iter()
            .position(|members| members.iter().any(|m| m == response_id))
    }

    pub fn prefers(&self, winner: &str, loser: &str) -> bool {
        self.closure
            .contains(&(winner.to_string(), loser.to_string()))
    }
}

/// Builds the raw preference graph of one prompt: one singleton supernode per
/// mentioned response, a winner-to-loser edge per strict verdict and both
/// directions for a tie. Repeated edges collapse.
///
/// When `known` is given, every endpoint must belong to it.
pub fn build_graph(
    annotations: &[AnnotationRecord],
    known: Option<&BTreeSet<String>>,
) -> Result<PreferenceGraph, GraphError> {
    let prompt_id = annotations
        .first()
        .map(|a| a.prompt_id.clone())
        .unwrap_or_default();

    let mut ids = BTreeSet::new();
    for a in annotations {
        if a.prompt_id != prompt_id {
            return Err(GraphError::MixedPrompt {
                expected: prompt_id,
                found: a.prompt_id.clone(),
            });
        }
        if a.first == a.second {
            return Err(GraphError::SelfComparison {
                prompt_id,
                response_id: a.first.clone(),
            });
        }
        for id in [&a.first, &a.second] {
            if let Some(known) = known {
                if !known.contains(id) {
                    return Err(GraphError::DanglingResponse {
                        prompt_id,
                        response_id: id.clone(),
                    });
                }
            }
            ids.insert(id.clone());
        }
    }

    let index: BTreeMap<&String, usize> = ids.iter().enumerate().map(|(i, id)| (id, i)).collect();
    let mut edges = BTreeSet::new();
    for a in annotations {
        let (f, s) = (index[&a.first], index[&a.second]);
        match a.verdict {
            Verdict::First => {
                edges.insert((f, s));
            }
            Verdict::Second => {
                edges.insert((s, f));
            }
            Verdict::Tie => {
                edges.insert((f, s));
                edges.insert((s, f));
            }
        }
    }

    let supernodes = ids.iter().map(|id| vec![id.clone()]).collect();
    Ok(PreferenceGraph::from_parts(prompt_id, supernodes, edges))
}

/// Merges every cycle into a supernode in one strongly-connected-component pass
/// and layers the result into a partial ranking.
pub fn resolve(graph: &PreferenceGraph) -> PartialRanking {
    condense(graph).into_ranking()
}

/// Condensed acyclic graph: strongly connected components become supernodes.
pub fn condense(graph: &PreferenceGraph) -> PreferenceGraph {
    let n = graph.node_count();
    let components = strongly_connected_components(&graph.adjacency());
    let mut component_of = vec![0; n];
    for (c, nodes) in components.iter().enumerate() {
        for &v in nodes {
            component_of[v] = c;
        }
    }
    let supernodes = components
        .iter()
        .map(|nodes| {
            nodes
                .iter()
                .flat_map(|&v| graph.supernodes[v].iter().cloned())
                .collect()
        })
        .collect();
    let edges = graph
        .edges
        .iter()
        .map(|&(u, v)| (component_of[u], component_of[v]));
    PreferenceGraph::from_parts(graph.prompt_id.clone(), supernodes, edges)
}

/// Literal repeat-until-acyclic realization: find one cycle by depth-first
/// search, fold its nodes into a new supernode, rewire the incident edges and
/// repeat. Produces the same ranking as [`resolve`]; kept as the reference
/// procedure.
pub fn resolve_by_cycle_merging(graph: &PreferenceGraph) -> PartialRanking {
    let mut members: Vec<Option<Vec<String>>> =
        graph.supernodes.iter().cloned().map(Some).collect();
    let mut edges: BTreeSet<(usize, usize)> = graph.edges.clone();

    loop {
        let Some(cycle) = find_cycle(members.len(), &edges) else {
            break;
        };
        let merged_id = members.len();
        let mut merged = Vec::new();
        for &v in &cycle {
            merged.extend(members[v].take().expect("cycle node is live"));
        }
        members.push(Some(merged));
        let on_cycle: BTreeSet<usize> = cycle.into_iter().collect();
        let relabel = |v: usize| if on_cycle.contains(&v) { merged_id } else { v };
        edges = edges
            .into_iter()
            .map(|(u, v)| (relabel(u), relabel(v)))
            .filter(|(u, v)| u != v)
            .collect();
    }

    let live: Vec<usize> = (0..members.len()).filter(|&v| members[v].is_some()).collect();
    let mut dense = vec![usize::MAX; members.len()];
    for (i, &v) in live.iter().enumerate() {
        dense[v] = i;
    }
    let supernodes = live
        .iter()
        .map(|&v| members[v].clone().expect("live"))
        .collect();
    let edges = edges.into_iter().map(|(u, v)| (dense[u], dense[v]));
    PreferenceGraph::from_parts(graph.prompt_id.clone(), supernodes, edges).into_ranking()
}

impl PreferenceGraph {
    /// Kahn layering and transitive closure of an acyclic graph.
    ///
    /// # Panics
    ///
    /// Panics if the graph still contains a cycle.
    pub fn into_ranking(self) -> PartialRanking {
        let n = self.node_count();
        let adj = self.adjacency();

        let mut indegree = vec![0usize; n];
        for &(_, v) in &self.edges {
            indegree[v] += 1;
        }
        let mut layer: Vec<usize> = (0..n).filter(|&v| indegree[v] == 0).collect();
        let mut tiers = Vec::new();
        let mut placed = 0;
        while !layer.is_empty() {
            placed += layer.len();
            let mut tier: Vec<String> = layer
                .iter()
                .flat_map(|&v| self.supernodes[v].iter().cloned())
                .collect();
            tier.sort();
            tiers.push(tier);
            let mut next = Vec::new();
            for &u in &layer {
                for &v in &adj[u] {
                    indegree[v] -= 1;
                    if indegree[v] == 0 {
                        next.push(v);
                    }
                }
            }
            next.sort_unstable();
            layer = next;
        }
        assert_eq!(placed, n, "ranking requested for a cyclic graph");

        let mut closure = BTreeSet::new();
        for source in 0..n {
            let mut seen = vec![false; n];
            let mut stack = adj[source].clone();
            while let Some(v) = stack.pop() {
                if std::mem::replace(&mut seen[v], true) {
                    continue;
                }
                stack.extend(adj[v].iter().copied());
            }
            for target in (0..n).filter(|&v| seen[v]) {
                for w in &self.supernodes[source] {
                    for l in &self.supernodes[target] {
                        closure.insert((w.clone(), l.clone()));
                    }
                }
            }
        }

        PartialRanking {
            prompt_id: self.prompt_id,
            tiers,
            closure,
            supernodes: self.supernodes,
        }
    }
}

/// Tarjan's algorithm, iterative. Components are returned in reverse
/// topological order of the condensation.
fn strongly_connected_components(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = adj.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut components = Vec::new();
    let mut counter = 0;

    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        // (node, next neighbour position)
        let mut call: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = counter;
        low[root] = counter;
        counter += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(&mut (v, ref mut pos)) = call.last_mut() {
            if let Some(&w) = adj[v].get(*pos) {
                *pos += 1;
                if index[w] == usize::MAX {
                    index[w] = counter;
                    low[w] = counter;
                    counter += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            call.pop();
            if let Some(&(parent, _)) = call.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                let mut component = Vec::new();
                loop {
                    let w = stack.pop().expect("tarjan stack underflow");
                    on_stack[w] = false;
                    component.push(w);
                    if w == v {
                        break;
                    }
                }
                components.push(component);
            }
        }
    }
    components
}

/// Nodes of some directed cycle, found by depth-first search from the lowest
/// unvisited node, or `None` when the graph is acyclic.
fn find_cycle(n: usize, edges: &BTreeSet<(usize, usize)>) -> Option<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(u, v) in edges {
        adj[u].push(v);
    }
    // 0 = unvisited, 1 = on the current path, 2 = finished
    let mut state = vec![0u8; n];
    for root in 0..n {
        if state[root] != 0 {
            continue;
        }
        let mut path: Vec<(usize, usize)> = vec![(root, 0)];
        state[root] = 1;
        while let Some(&mut (v, ref mut pos)) = path.last_mut() {
            if let Some(&w) = adj[v].get(*pos) {
                *pos += 1;
                match state[w] {
                    0 => {
                        state[w] = 1;
                        path.push((w, 0));
                    }
                    1 => {
                        let start = path.iter().position(|&(x, _)| x == w).expect("on path");
                        return Some(path[start..].iter().map(|&(x, _)| x).collect());
                    }
                    _ => {}
                }
            } else {
                state[v] = 2;
                path.pop();
            }
        }
    }
    None
}

/// Counts of annotation records inconsistent with a ranking.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConflictTally {
    pub inconsistent: usize,
    pub total: usize,
}

impl ConflictTally {
    pub fn ratio(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.inconsistent as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Averaging {
    /// Pool records across prompts.
    #[default]
    Micro,
    /// Average per-prompt ratios.
    Macro,
}

/// A strict record is consistent when its preference is in the closure; a tie
/// when both responses share a supernode.
pub fn conflict_tally(
    annotations: &[AnnotationRecord],
    ranking: &PartialRanking,
) -> Result<ConflictTally, GraphError> {
    let mut tally = ConflictTally::default();
    for a in annotations {
        if a.prompt_id != ranking.prompt_id {
            return Err(GraphError::MixedPrompt {
                expected: ranking.prompt_id.clone(),
                found: a.prompt_id.clone(),
            });
        }
        let mut groups = [0; 2];
        for (slot, id) in groups.iter_mut().zip([&a.first, &a.second]) {
            *slot = ranking
                .supernode_of(id)
                .ok_or_else(|| GraphError::RankingMismatch {
                    prompt_id: a.prompt_id.clone(),
                    response_id: id.clone(),
                })?;
        }
        let consistent = match a.winner_loser() {
            Some((w, l)) => ranking.prefers(w, l),
            None => groups[0] == groups[1],
        };
        tally.total += 1;
        if !consistent {
            tally.inconsistent += 1;
        }
    }
    Ok(tally)
}

/// Fraction of records inconsistent with the ranking; 0 for no records.
pub fn conflict_ratio(
    annotations: &[AnnotationRecord],
    ranking: &PartialRanking,
) -> Result<f64, GraphError> {
    conflict_tally(annotations, ranking).map(|t| t.ratio())
}

/// Dataset-level conflict ratio over per-prompt tallies.
pub fn pooled_conflict_ratio(tallies: &[ConflictTally], averaging: Averaging) -> f64 {
    match averaging {
        Averaging::Micro => {
            let pooled = tallies.iter().fold(ConflictTally::default(), |acc, t| ConflictTally {
                inconsistent: acc.inconsistent + t.inconsistent,
                total: acc.total + t.total,
            });
            pooled.ratio()
        }
        Averaging::Macro => {
            let scored: Vec<f64> = tallies.iter().filter(|t| t.total > 0).map(|t| t.ratio()).collect();
            if scored.is_empty() {
                0.0
            } else {
                scored.iter().sum::<f64>() / scored.len() as f64
            }
        }
    }
}

/// Closure as `(winner, loser)` pairs sorted by identifiers. Same-supernode
/// pairs never appear.
pub fn closure_pairs(ranking: &PartialRanking) -> Vec<(String, String)> {
    ranking.closure.iter().cloned().collect()
}

/// Groups records by prompt, in prompt_id order, preserving record order
/// within a prompt.
pub fn group_by_prompt(
    annotations: &[AnnotationRecord],
) -> BTreeMap<String, Vec<AnnotationRecord>> {
    let mut groups: BTreeMap<String, Vec<AnnotationRecord>> = BTreeMap::new();
    for a in annotations {
        groups.entry(a.prompt_id.clone()).or_default().push(a.clone());
    }
    groups
}

/// Resolves every prompt of a dataset, returning rankings in prompt_id order.
pub fn resolve_all(annotations: &[AnnotationRecord]) -> Result<Vec<PartialRanking>, GraphError> {
    group_by_prompt(annotations)
        .values()
        .map(|records| build_graph(records, None).map(|g| resolve(&g)))
        .collect()
}
