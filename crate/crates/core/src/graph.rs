//! Affinity graphs over entity and mention nodes, and the constrained pruning
//! that turns them into clusters.
//!
//! Edges always point at a mention. Their weight is a dissimilarity (negated
//! affinity), so lower weights are stronger links. Clustering removes edges in
//! descending weight order until every connected component holds at most one
//! entity, keeping an edge into an entity-anchored component only when it is
//! the last entity path to its target.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affinity::{affinity_em, affinity_mm, weight, ClusterState, ParameterSet};
use crate::embedding::Embedding;
use crate::error::{Error, Result};

/// Default number of entity edges into each mention at inference.
pub const DEFAULT_K_ENT: usize = 16;
/// Default number of same-segment mention edges into each mention at inference.
pub const DEFAULT_K_MEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Entity,
    Mention,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AffinityNode {
    pub kind: NodeKind,
    pub ref_id: String,
}

impl AffinityNode {
    pub fn entity(id: impl Into<String>) -> Self {
        Self {
            kind: NodeKind::Entity,
            ref_id: id.into(),
        }
    }

    pub fn mention(id: impl Into<String>) -> Self {
        Self {
            kind: NodeKind::Mention,
            ref_id: id.into(),
        }
    }

    pub fn is_entity(&self) -> bool {
        self.kind == NodeKind::Entity
    }
}

/// Nodes order by id first; the kind only separates an entity and a mention
/// that share an id.
impl Ord for AffinityNode {
    fn cmp(&self, other: &Self) -> Ordering {
        self.ref_id.cmp(&other.ref_id).then(self.kind.cmp(&other.kind))
    }
}

impl PartialOrd for AffinityNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for AffinityNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            NodeKind::Entity => write!(f, "E:{}", self.ref_id),
            NodeKind::Mention => write!(f, "M:{}", self.ref_id),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedEdge {
    pub source: usize,
    pub target: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, Default)]
pub struct AffinityGraph {
    nodes: Vec<AffinityNode>,
    index: HashMap<AffinityNode, usize>,
    edges: Vec<WeightedEdge>,
    pairs: HashSet<(usize, usize)>,
}

impl AffinityGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Index of `node`, inserting it if new.
    pub fn add_node(&mut self, node: AffinityNode) -> usize {
        if let Some(&i) = self.index.get(&node) {
            return i;
        }
        let i = self.nodes.len();
        self.index.insert(node.clone(), i);
        self.nodes.push(node);
        i
    }

    /// Add a directed edge. Returns `false` when the pair already has an edge.
    pub fn add_edge(&mut self, source: AffinityNode, target: AffinityNode, weight: f64) -> Result<bool> {
        if target.kind != NodeKind::Mention {
            return Err(Error::InvalidParameter(format!(
                "edge target {target} is not a mention"
            )));
        }
        if source == target {
            return Err(Error::InvalidParameter(format!("self edge on {source}")));
        }
        if !weight.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "non-finite weight on {source} -> {target}"
            )));
        }
        let s = self.add_node(source);
        let t = self.add_node(target);
        if !self.pairs.insert((s, t)) {
            return Ok(false);
        }
        self.edges.push(WeightedEdge {
            source: s,
            target: t,
            weight,
        });
        Ok(true)
    }

    pub fn nodes(&self) -> &[AffinityNode] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &AffinityNode {
        &self.nodes[i]
    }

    pub fn node_index(&self, node: &AffinityNode) -> Option<usize> {
        self.index.get(node).copied()
    }

    pub fn edges(&self) -> &[WeightedEdge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// One edge per line: `source_id\ttarget_id\tweight`.
    pub fn write_dump(&self, out: &mut impl Write) -> Result<()> {
        self.write_edges(self.edges.iter(), out)
    }

    pub fn write_edges<'a>(
        &self,
        edges: impl IntoIterator<Item = &'a WeightedEdge>,
        out: &mut impl Write,
    ) -> Result<()> {
        for e in edges {
            writeln!(
                out,
                "{}\t{}\t{}",
                self.nodes[e.source].ref_id, self.nodes[e.target].ref_id, e.weight
            )?;
        }
        Ok(())
    }
}

/// Parse a graph dump back into `(source_id, target_id, weight)` triples.
pub fn read_graph_dump(input: impl BufRead) -> Result<Vec<(String, String, f64)>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(s), Some(t), Some(w), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Parse(format!("graph dump line {}: expected 3 fields", i + 1)));
        };
        let w: f64 = w
            .parse()
            .map_err(|_| Error::Parse(format!("graph dump line {}: bad weight {w:?}", i + 1)))?;
        out.push((s.to_string(), t.to_string(), w));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub entity: Option<String>,
    pub mentions: Vec<String>,
    /// Node indices into the source graph, in node order.
    pub nodes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Partition {
    pub clusters: Vec<Cluster>,
    /// Cluster index per graph node.
    pub assignment: Vec<usize>,
}

impl Partition {
    pub fn cluster_of(&self, node: usize) -> &Cluster {
        &self.clusters[self.assignment[node]]
    }

    /// `{cluster_index: {"entity", "mentions"}}` with keys in cluster order.
    pub fn to_json(&self) -> String {
        let entries: Vec<String> = self
            .clusters
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let body = serde_json::json!({ "entity": c.entity, "mentions": c.mentions });
                format!("\"{i}\":{body}")
            })
            .collect();
        format!("{{{}}}", entries.join(","))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub partition: Partition,
    /// Indices of edges that survived pruning, ascending.
    pub retained: Vec<usize>,
}

impl Clustering {
    pub fn retained_edges<'a>(&'a self, graph: &'a AffinityGraph) -> impl Iterator<Item = &'a WeightedEdge> {
        self.retained.iter().map(|&i| &graph.edges()[i])
    }
}

/// Edge-processing order: descending weight, ties by (source, target) node order.
pub fn processing_order(graph: &AffinityGraph, candidates: impl IntoIterator<Item = usize>) -> Vec<usize> {
    let mut order: Vec<usize> = candidates.into_iter().collect();
    let edges = graph.edges();
    order.sort_by(|&a, &b| {
        let (ea, eb) = (&edges[a], &edges[b]);
        eb.weight
            .partial_cmp(&ea.weight)
            .unwrap_or(Ordering::Equal)
            .then_with(|| graph.node(ea.source).cmp(graph.node(eb.source)))
            .then_with(|| graph.node(ea.target).cmp(graph.node(eb.target)))
    });
    order
}

struct Adjacency {
    out: Vec<Vec<usize>>,
    inc: Vec<Vec<usize>>,
}

impl Adjacency {
    fn new(graph: &AffinityGraph) -> Self {
        let mut out = vec![Vec::new(); graph.node_count()];
        let mut inc = vec![Vec::new(); graph.node_count()];
        for (i, e) in graph.edges().iter().enumerate() {
            out[e.source].push(i);
            inc[e.target].push(i);
        }
        Self { out, inc }
    }
}

struct Search {
    stamp: Vec<u32>,
    round: u32,
    queue: VecDeque<usize>,
}

impl Search {
    fn new(n: usize) -> Self {
        Self {
            stamp: vec![0; n],
            round: 0,
            queue: VecDeque::new(),
        }
    }

    fn reset(&mut self) {
        self.round += 1;
        self.queue.clear();
    }

    fn visit(&mut self, node: usize) -> bool {
        if self.stamp[node] == self.round {
            return false;
        }
        self.stamp[node] = self.round;
        self.queue.push_back(node);
        true
    }
}

/// Number of entity nodes (capped at 2) in the undirected component of `from`.
fn component_entities(
    graph: &AffinityGraph,
    adj: &Adjacency,
    active: &[bool],
    search: &mut Search,
    from: usize,
) -> usize {
    search.reset();
    search.visit(from);
    let mut entities = 0;
    while let Some(n) = search.queue.pop_front() {
        if graph.node(n).is_entity() {
            entities += 1;
            if entities > 1 {
                return entities;
            }
        }
        let edges = graph.edges();
        for &e in adj.out[n].iter().chain(&adj.inc[n]) {
            if active[e] {
                let other = if edges[e].source == n {
                    edges[e].target
                } else {
                    edges[e].source
                };
                search.visit(other);
            }
        }
    }
    entities
}

/// Whether some entity reaches `target` along active directed edges.
fn entity_reaches(graph: &AffinityGraph, adj: &Adjacency, active: &[bool], search: &mut Search, target: usize) -> bool {
    search.reset();
    search.visit(target);
    while let Some(n) = search.queue.pop_front() {
        if graph.node(n).is_entity() {
            return true;
        }
        for &e in &adj.inc[n] {
            if active[e] {
                search.visit(graph.edges()[e].source);
            }
        }
    }
    false
}

/// Prune `graph` under threshold `lambda` (`None` = no threshold) and return
/// the resulting clusters.
///
/// 1. Edges heavier than `lambda` are removed.
/// 2. The rest are visited by descending weight. An edge whose component holds
///    more than one entity is removed. Otherwise, if the component holds an
///    entity, the edge is removed when its target stays reachable from an
///    entity without it.
/// 3. Clusters are the connected components of the surviving edges.
pub fn prune_and_cluster(graph: &AffinityGraph, lambda: Option<f64>) -> Clustering {
    let edges = graph.edges();
    let exceeds = |w: f64| lambda.is_some_and(|l| w > l);
    let mut active: Vec<bool> = edges.iter().map(|e| !exceeds(e.weight)).collect();
    let adj = Adjacency::new(graph);
    let mut search = Search::new(graph.node_count());

    let order = processing_order(graph, (0..edges.len()).filter(|&i| active[i]));
    for e in order {
        let WeightedEdge { source, target, .. } = edges[e];
        let entities = component_entities(graph, &adj, &active, &mut search, source);
        if entities > 1 {
            active[e] = false;
            continue;
        }
        if entities == 1 {
            active[e] = false;
            if !entity_reaches(graph, &adj, &active, &mut search, target) {
                active[e] = true;
            }
        }
    }

    let retained: Vec<usize> = (0..edges.len()).filter(|&i| active[i]).collect();
    Clustering {
        partition: components(graph, &retained),
        retained,
    }
}

/// Connected components of `graph` restricted to `edge_ids`, ordered by their
/// smallest node.
pub fn components(graph: &AffinityGraph, edge_ids: &[usize]) -> Partition {
    let n = graph.node_count();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &i in edge_ids {
        let e = graph.edges()[i];
        let (a, b) = (find(&mut parent, e.source), find(&mut parent, e.target));
        if a != b {
            parent[a] = b;
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    let mut members: Vec<Vec<usize>> = groups.into_values().collect();
    for m in &mut members {
        m.sort_by(|&a, &b| graph.node(a).cmp(graph.node(b)));
    }
    members.sort_by(|a, b| graph.node(a[0]).cmp(graph.node(b[0])));

    let mut assignment = vec![0; n];
    let clusters = members
        .into_iter()
        .enumerate()
        .map(|(ci, nodes)| {
            let mut entity = None;
            let mut mentions = Vec::new();
            for &i in &nodes {
                assignment[i] = ci;
                let node = graph.node(i);
                match node.kind {
                    NodeKind::Entity => entity = Some(node.ref_id.clone()),
                    NodeKind::Mention => mentions.push(node.ref_id.clone()),
                }
            }
            Cluster {
                entity,
                mentions,
                nodes,
            }
        })
        .collect();
    Partition { clusters, assignment }
}

/// Check the cluster constraints on a pruning result: at most one entity per
/// cluster, every retained edge within `lambda`, every cluster connected by
/// retained edges, and no retained edge crossing clusters.
pub fn check_constraints(
    graph: &AffinityGraph,
    clustering: &Clustering,
    lambda: Option<f64>,
) -> std::result::Result<(), String> {
    let p = &clustering.partition;
    for (ci, c) in p.clusters.iter().enumerate() {
        let entities = c.nodes.iter().filter(|&&n| graph.node(n).is_entity()).count();
        if entities > 1 {
            return Err(format!("cluster {ci} holds {entities} entities"));
        }
    }
    for e in clustering.retained_edges(graph) {
        if lambda.is_some_and(|l| e.weight > l) {
            return Err(format!("retained edge weight {} exceeds lambda", e.weight));
        }
        if p.assignment[e.source] != p.assignment[e.target] {
            return Err("retained edge crosses clusters".to_string());
        }
    }
    let recomputed = components(graph, &clustering.retained);
    if recomputed != *p {
        return Err("clusters are not the connected components of retained edges".to_string());
    }
    Ok(())
}

/// Affinity lookups against parameter tables and cluster representations.
#[derive(Clone, Copy)]
pub struct Scorer<'a> {
    pub params: &'a ParameterSet,
    pub state: &'a ClusterState,
}

impl<'a> Scorer<'a> {
    pub fn new(params: &'a ParameterSet, state: &'a ClusterState) -> Self {
        Self { params, state }
    }

    pub fn entity_mention(&self, entity: &str, mention: &str) -> Result<f64> {
        affinity_em(self.state.rep(entity)?, self.params.mention(mention)?)
    }

    pub fn mention_mention(&self, a: &str, b: &str) -> Result<f64> {
        affinity_mm(self.params.mention(a)?, self.params.mention(b)?)
    }
}

/// Training graph for a batch: for each batch mention's gold entity, edges
/// from the entity to every coreferent mention and between every ordered pair
/// of coreferent mentions.
pub fn build_batch_graph(
    batch_mentions: &[String],
    gold_links: &BTreeMap<String, String>,
    coref_sets: &BTreeMap<String, BTreeSet<String>>,
    scorer: Scorer<'_>,
) -> Result<AffinityGraph> {
    let mut graph = AffinityGraph::new();
    let mut done = BTreeSet::new();
    for m in batch_mentions {
        let gold = gold_links.get(m).ok_or_else(|| Error::MissingGoldLink(m.clone()))?;
        if !done.insert(gold.as_str()) {
            continue;
        }
        let coref = coref_sets
            .get(gold)
            .filter(|s| s.contains(m))
            .ok_or_else(|| Error::InvalidParameter(format!("coreference set of `{gold}` does not contain `{m}`")))?;
        graph.add_node(AffinityNode::entity(gold.clone()));
        for k in coref {
            let w = weight(scorer.entity_mention(gold, k)?);
            graph.add_edge(AffinityNode::entity(gold.clone()), AffinityNode::mention(k.clone()), w)?;
        }
        for k in coref {
            for l in coref {
                if k != l {
                    let w = weight(scorer.mention_mention(k, l)?);
                    graph.add_edge(AffinityNode::mention(k.clone()), AffinityNode::mention(l.clone()), w)?;
                }
            }
        }
    }
    Ok(graph)
}

/// Highest-scoring `k` items, ties by id.
pub(crate) fn top_k<'a>(scored: impl IntoIterator<Item = (&'a str, f64)>, k: usize) -> Vec<(&'a str, f64)> {
    let mut all: Vec<_> = scored.into_iter().collect();
    all.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.0.cmp(b.0))
    });
    all.truncate(k);
    all
}

/// Inference graph for one segment: each mention receives edges from its
/// `k_ent` highest-affinity cluster representations and its `k_men`
/// highest-affinity mentions within the segment.
pub fn build_inference_graph(
    segment_mentions: &[String],
    scorer: Scorer<'_>,
    k_ent: usize,
    k_men: usize,
) -> Result<AffinityGraph> {
    if k_ent < 1 {
        return Err(Error::InvalidParameter("k_ent must be at least 1".into()));
    }
    let mention_embs: Vec<&Embedding> = segment_mentions
        .iter()
        .map(|m| scorer.params.mention(m))
        .collect::<Result<_>>()?;
    let reps: Vec<(&str, &Embedding)> = scorer.state.iter().map(|(id, c)| (id, &c.rep)).collect();

    type Incoming<'s> = (Vec<(&'s str, f64)>, Vec<(&'s str, f64)>);
    let incoming: Vec<Incoming<'_>> = mention_embs
        .par_iter()
        .enumerate()
        .map(|(i, &emb)| -> Result<Incoming<'_>> {
            let ents = reps
                .iter()
                .map(|&(id, rep)| Ok((id, affinity_em(rep, emb)?)))
                .collect::<Result<Vec<_>>>()?;
            let mens = if k_men == 0 {
                Vec::new()
            } else {
                segment_mentions
                    .iter()
                    .zip(&mention_embs)
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, (id, other))| Ok((id.as_str(), affinity_mm(other, emb)?)))
                    .collect::<Result<Vec<_>>>()?
            };
            Ok((top_k(ents, k_ent), top_k(mens, k_men)))
        })
        .collect::<Result<_>>()?;

    let mut graph = AffinityGraph::new();
    for m in segment_mentions {
        graph.add_node(AffinityNode::mention(m.clone()));
    }
    for (m, (ents, mens)) in segment_mentions.iter().zip(incoming) {
        for (e, a) in ents {
            graph.add_edge(AffinityNode::entity(e), AffinityNode::mention(m.clone()), weight(a))?;
        }
        for (other, a) in mens {
            graph.add_edge(
                AffinityNode::mention(other),
                AffinityNode::mention(m.clone()),
                weight(a),
            )?;
        }
    }
    Ok(graph)
}

/// Entities ranked by descending affinity to `mention_emb`, ties by id.
pub fn rank_candidates(mention_emb: &Embedding, state: &ClusterState, n: usize) -> Result<Vec<(String, f64)>> {
    if n < 1 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    let scored = state
        .iter()
        .map(|(id, c)| Ok((id, affinity_em(&c.rep, mention_emb)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(top_k(scored, n)
        .into_iter()
        .map(|(id, s)| (id.to_string(), s))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub mention_id: String,
    pub entity_id: String,
    /// The mention's cluster had no entity; linked by best affinity instead.
    pub fallback: bool,
}

/// Link every mention to the entity of its cluster, falling back to the
/// best-scoring cluster representation for entity-less clusters.
pub fn resolve_segment(
    graph: &AffinityGraph,
    partition: &Partition,
    scorer: Scorer<'_>,
    mentions: &[String],
) -> Result<Vec<Decision>> {
    if scorer.state.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    mentions
        .iter()
        .map(|m| {
            let cluster_entity = graph
                .node_index(&AffinityNode::mention(m.clone()))
                .and_then(|i| partition.cluster_of(i).entity.clone());
            Ok(match cluster_entity {
                Some(entity_id) => Decision {
                    mention_id: m.clone(),
                    entity_id,
                    fallback: false,
                },
                None => {
                    let best = rank_candidates(scorer.params.mention(m)?, scorer.state, 1)?;
                    Decision {
                        mention_id: m.clone(),
                        entity_id: best[0].0.clone(),
                        fallback: true,
                    }
                }
            })
        })
        .collect()
}
