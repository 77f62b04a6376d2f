//! Random affinity graphs and a slow, literal reading of the pruning procedure
//! used to cross-check `prune_and_cluster`.

#![allow(dead_code)]

pub mod gradient;

use std::collections::BTreeSet;

use rand::Rng;
use tempres_core::graph::{AffinityGraph, AffinityNode, Clustering};

#[derive(Debug, Clone)]
pub struct RandomGraph {
    pub entities: Vec<String>,
    pub mentions: Vec<String>,
    pub edges: Vec<(String, String, f64)>,
    pub lambda: Option<f64>,
}

/// Weights in [-10, 0]; half of them on a coarse grid so that ties occur.
fn random_weight(rng: &mut impl Rng) -> f64 {
    if rng.random_bool(0.5) {
        -(rng.random_range(0..=20) as f64) * 0.5
    } else {
        rng.random_range(-10.0..0.0)
    }
}

pub fn random_graph(rng: &mut impl Rng, nodes: std::ops::RangeInclusive<usize>, max_edges: usize) -> RandomGraph {
    let n = rng.random_range(nodes);
    let n_ent = rng.random_range(0..=n / 2);
    let entities: Vec<String> = (0..n_ent).map(|i| format!("e{i:02}")).collect();
    let mentions: Vec<String> = (0..n - n_ent).map(|i| format!("m{i:02}")).collect();
    let all: Vec<&String> = entities.iter().chain(&mentions).collect();
    let mut pairs = BTreeSet::new();
    let wanted = rng.random_range(0..=max_edges);
    let mut edges = Vec::new();
    for _ in 0..wanted * 4 {
        if edges.len() == wanted || mentions.is_empty() {
            break;
        }
        let s = all[rng.random_range(0..all.len())].clone();
        let t = mentions[rng.random_range(0..mentions.len())].clone();
        if s != t && pairs.insert((s.clone(), t.clone())) {
            edges.push((s, t, random_weight(rng)));
        }
    }
    let lambda = if rng.random_bool(0.25) {
        None
    } else {
        Some(random_weight(rng))
    };
    RandomGraph {
        entities,
        mentions,
        edges,
        lambda,
    }
}

impl RandomGraph {
    pub fn is_entity(&self, id: &str) -> bool {
        self.entities.iter().any(|e| e == id)
    }

    fn node(&self, id: &str) -> AffinityNode {
        if self.is_entity(id) {
            AffinityNode::entity(id)
        } else {
            AffinityNode::mention(id)
        }
    }

    pub fn build(&self) -> AffinityGraph {
        let mut g = AffinityGraph::new();
        for id in self.entities.iter().chain(&self.mentions) {
            g.add_node(self.node(id));
        }
        for (s, t, w) in &self.edges {
            assert!(g.add_edge(self.node(s), self.node(t), *w).unwrap());
        }
        g
    }
}

/// Nodes reachable from `start` through `kept` edges, in either direction.
fn undirected_closure(g: &RandomGraph, kept: &[bool], start: &str) -> BTreeSet<String> {
    let mut set = BTreeSet::from([start.to_string()]);
    loop {
        let before = set.len();
        for (i, (s, t, _)) in g.edges.iter().enumerate() {
            if kept[i] && (set.contains(s) || set.contains(t)) {
                set.insert(s.clone());
                set.insert(t.clone());
            }
        }
        if set.len() == before {
            return set;
        }
    }
}

/// Nodes reachable from any entity along `kept` edges in their direction.
fn entity_reach(g: &RandomGraph, kept: &[bool]) -> BTreeSet<String> {
    let mut set: BTreeSet<String> = g.entities.iter().cloned().collect();
    loop {
        let before = set.len();
        for (i, (s, t, _)) in g.edges.iter().enumerate() {
            if kept[i] && set.contains(s) {
                set.insert(t.clone());
            }
        }
        if set.len() == before {
            return set;
        }
    }
}

/// Step-by-step trace: threshold, then edges from the most dissimilar down.
pub fn literal_clusters(g: &RandomGraph) -> Vec<BTreeSet<String>> {
    let mut kept: Vec<bool> = g
        .edges
        .iter()
        .map(|(_, _, w)| g.lambda.is_none_or(|l| *w <= l))
        .collect();
    let mut order: Vec<usize> = (0..g.edges.len()).filter(|&i| kept[i]).collect();
    order.sort_by(|&a, &b| {
        let (ea, eb) = (&g.edges[a], &g.edges[b]);
        eb.2.partial_cmp(&ea.2)
            .unwrap()
            .then_with(|| ea.0.cmp(&eb.0))
            .then_with(|| ea.1.cmp(&eb.1))
    });
    for i in order {
        let (u, v, _) = &g.edges[i];
        let component = undirected_closure(g, &kept, u);
        let n_ent = component.iter().filter(|n| g.is_entity(n)).count();
        if n_ent > 1 {
            kept[i] = false;
        } else if n_ent == 1 {
            kept[i] = false;
            if !entity_reach(g, &kept).contains(v) {
                kept[i] = true;
            }
        }
    }
    let mut clusters: Vec<BTreeSet<String>> = Vec::new();
    for id in g.entities.iter().chain(&g.mentions) {
        if !clusters.iter().any(|c| c.contains(id)) {
            clusters.push(undirected_closure(g, &kept, id));
        }
    }
    clusters.sort();
    clusters
}

pub fn library_clusters(graph: &AffinityGraph, clustering: &Clustering) -> Vec<BTreeSet<String>> {
    let mut clusters: Vec<BTreeSet<String>> = clustering
        .partition
        .clusters
        .iter()
        .map(|c| c.nodes.iter().map(|&n| graph.node(n).ref_id.clone()).collect())
        .collect();
    clusters.sort();
    clusters
}

/// Constraint violations of a pruning result, checked from scratch: at most
/// one entity per cluster, retained weights within lambda, every cluster
/// connected by retained edges and no retained edge between clusters.
pub fn violations(g: &RandomGraph, graph: &AffinityGraph, clustering: &Clustering) -> Vec<String> {
    let mut out = Vec::new();
    let retained: BTreeSet<(String, String)> = clustering
        .retained_edges(graph)
        .map(|e| (graph.node(e.source).ref_id.clone(), graph.node(e.target).ref_id.clone()))
        .collect();
    let kept: Vec<bool> = g
        .edges
        .iter()
        .map(|(s, t, _)| retained.contains(&(s.clone(), t.clone())))
        .collect();
    let clusters = library_clusters(graph, clustering);
    let covered: usize = clusters.iter().map(BTreeSet::len).sum();
    if covered != g.entities.len() + g.mentions.len() {
        out.push(format!("clusters cover {covered} nodes"));
    }
    for c in &clusters {
        let n_ent = c.iter().filter(|n| g.is_entity(n)).count();
        if n_ent > 1 {
            out.push(format!("{n_ent} entities in {c:?}"));
        }
        let first = c.iter().next().expect("clusters are non-empty");
        if undirected_closure(g, &kept, first) != *c {
            out.push(format!("{c:?} is not a connected component of the retained edges"));
        }
    }
    for (i, (s, t, w)) in g.edges.iter().enumerate() {
        if kept[i] && g.lambda.is_some_and(|l| *w > l) {
            out.push(format!("retained ({s},{t}) has weight {w} above lambda"));
        }
    }
    out
}
