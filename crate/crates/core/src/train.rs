//! Per-segment training of the embedding tables and the continual
//! train/infer loop over a timeline.
//!
//! Edge labels come from the pruning itself: edges of a batch graph that
//! survive clustering are positives. Hard negatives are the highest-affinity
//! non-gold entities and non-coreferent mentions. The loss is the binary
//! cross-entropy of the logistic of each edge's affinity, averaged over the
//! batch mentions.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::affinity::{cluster_representation, ClusterState, ParameterSet, DEFAULT_ALPHA, DEFAULT_MENTION_CAP};
use crate::data::{CorpusSnapshot, Phase, TimeSegment};
use crate::embedding::{Embedding, EmbeddingKind};
use crate::error::{Error, Result};
use crate::graph::{
    build_batch_graph, build_inference_graph, prune_and_cluster, rank_candidates, resolve_segment, top_k,
    AffinityGraph, AffinityNode, NodeKind, Scorer, DEFAULT_K_ENT, DEFAULT_K_MEN,
};
use crate::seed;

pub const DEFAULT_K: usize = 64;
pub const DEFAULT_RANK_N: usize = 64;
/// Probabilities inside the loss are clamped to `[EPSILON, 1 - EPSILON]`.
pub const EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    #[default]
    GradientDescent,
    Adam,
}

/// Which quantity the logistic is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossReading {
    /// `s(affinity)`: positives are pushed towards high affinity.
    #[default]
    Affinity,
    /// `s(weight)` with `weight = -affinity`, the literal alternative.
    Weight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    /// Pruning threshold; `None` keeps every edge eligible.
    pub lambda: Option<f64>,
    /// Negatives per mention, split evenly between entities and mentions.
    pub k: usize,
    pub alpha: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub mention_cap: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub loss_reading: LossReading,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            k: DEFAULT_K,
            alpha: DEFAULT_ALPHA,
            batch_size: 32,
            learning_rate: 3e-5,
            epochs: 5,
            mention_cap: DEFAULT_MENTION_CAP,
            seed: 0,
            optimizer: Optimizer::GradientDescent,
            loss_reading: LossReading::Affinity,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidParameter(format!("k must be at least 2, got {}", self.k)));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidParameter("batch_size must be at least 1".into()));
        }
        // zero is allowed and freezes the parameters
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::AlphaOutOfRange(self.alpha));
        }
        if self.lambda.is_some_and(f64::is_nan) {
            return Err(Error::InvalidParameter("lambda is NaN".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EdgeLabel {
    pub source: AffinityNode,
    /// Target mention id.
    pub target: String,
    pub positive: bool,
}

impl EdgeLabel {
    pub fn indicator(&self) -> f64 {
        if self.positive {
            1.0
        } else {
            0.0
        }
    }
}

/// Every edge retained by `prune_and_cluster(graph, lambda)`, labelled 1.
pub fn positive_edges(graph: &AffinityGraph, lambda: Option<f64>) -> Vec<EdgeLabel> {
    let clustering = prune_and_cluster(graph, lambda);
    clustering
        .retained_edges(graph)
        .map(|e| EdgeLabel {
            source: graph.node(e.source).clone(),
            target: graph.node(e.target).ref_id.clone(),
            positive: true,
        })
        .collect()
}

/// Hard negatives for `mention`: the `k/2` highest-affinity entities other
/// than `gold`, and the `k/2` highest-affinity mentions of `pool` outside
/// `coref`.
pub fn negative_edges(
    mention: &str,
    gold: &str,
    coref: &BTreeSet<String>,
    pool: &[String],
    scorer: Scorer<'_>,
    k: usize,
) -> Result<Vec<EdgeLabel>> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("k must be at least 2, got {k}")));
    }
    let half = k / 2;
    let emb = scorer.params.mention(mention)?;
    let entities = scorer
        .state
        .iter()
        .filter(|(id, _)| *id != gold)
        .map(|(id, c)| Ok((id, c.rep.dot(emb)?)))
        .collect::<Result<Vec<_>>>()?;
    let mentions = pool
        .iter()
        .filter(|m| m.as_str() != mention && !coref.contains(*m))
        .map(|m| Ok((m.as_str(), scorer.params.mention(m)?.dot(emb)?)))
        .collect::<Result<Vec<_>>>()?;

    let label = |source: AffinityNode| EdgeLabel {
        source,
        target: mention.to_string(),
        positive: false,
    };
    let mut out: Vec<EdgeLabel> = top_k(entities, half)
        .into_iter()
        .map(|(id, _)| label(AffinityNode::entity(id)))
        .collect();
    out.extend(
        top_k(mentions, half)
            .into_iter()
            .map(|(id, _)| label(AffinityNode::mention(id))),
    );
    Ok(out)
}

/// Gold-linked mentions of one training segment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SegmentData {
    pub label: String,
    pub mentions: Vec<String>,
    pub gold: BTreeMap<String, String>,
}

impl SegmentData {
    pub fn from_corpus(corpus: &CorpusSnapshot, label: &str) -> Self {
        let mut data = SegmentData {
            label: label.to_string(),
            ..Default::default()
        };
        for m in corpus.mentions_in(label) {
            data.mentions.push(m.mention_id.clone());
            if let Some(g) = &m.gold_entity {
                data.gold.insert(m.mention_id.clone(), g.clone());
            }
        }
        data
    }

    /// Gold entity → its coreferent mentions in this segment.
    pub fn coref_sets(&self) -> BTreeMap<String, BTreeSet<String>> {
        let mut sets: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (m, e) in &self.gold {
            sets.entry(e.clone()).or_default().insert(m.clone());
        }
        sets
    }
}

#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub mentions: Vec<String>,
    pub coref: BTreeMap<String, BTreeSet<String>>,
    pub graph: AffinityGraph,
    pub positives: Vec<EdgeLabel>,
    pub negatives: Vec<EdgeLabel>,
}

impl TrainingBatch {
    pub fn assemble(
        batch_mentions: &[String],
        segment: &SegmentData,
        coref: &BTreeMap<String, BTreeSet<String>>,
        scorer: Scorer<'_>,
        config: &TrainerConfig,
    ) -> Result<Self> {
        let graph = build_batch_graph(batch_mentions, &segment.gold, coref, scorer)?;
        let in_batch: BTreeSet<&str> = batch_mentions.iter().map(String::as_str).collect();
        let positives = positive_edges(&graph, config.lambda)
            .into_iter()
            .filter(|e| in_batch.contains(e.target.as_str()))
            .collect();
        let mut negatives = Vec::new();
        let mut used = BTreeMap::new();
        for m in batch_mentions {
            let gold = &segment.gold[m];
            let set = &coref[gold];
            used.insert(gold.clone(), set.clone());
            negatives.extend(negative_edges(m, gold, set, &segment.mentions, scorer, config.k)?);
        }
        Ok(Self {
            mentions: batch_mentions.to_vec(),
            coref: used,
            graph,
            positives,
            negatives,
        })
    }

    pub fn labeled(&self) -> Vec<EdgeLabel> {
        self.positives.iter().chain(&self.negatives).cloned().collect()
    }
}

/// Per-id gradients, keyed like the parameter tables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradient {
    pub entities: BTreeMap<String, Vec<f64>>,
    pub mentions: BTreeMap<String, Vec<f64>>,
}

impl Gradient {
    pub fn get(&self, kind: EmbeddingKind, id: &str) -> Option<&[f64]> {
        let table = match kind {
            EmbeddingKind::Entity => &self.entities,
            EmbeddingKind::Mention => &self.mentions,
        };
        table.get(id).map(Vec::as_slice)
    }

    pub fn is_zero(&self) -> bool {
        self.entities
            .values()
            .chain(self.mentions.values())
            .flatten()
            .all(|&x| x == 0.0)
    }

    fn add(&mut self, kind: EmbeddingKind, id: &str, scale: f64, v: &[f64]) {
        let table = match kind {
            EmbeddingKind::Entity => &mut self.entities,
            EmbeddingKind::Mention => &mut self.mentions,
        };
        let acc = table.entry(id.to_string()).or_insert_with(|| vec![0.0; v.len()]);
        for (a, x) in acc.iter_mut().zip(v) {
            *a += scale * x;
        }
    }

    fn iter(&self) -> impl Iterator<Item = (EmbeddingKind, &str, &[f64])> {
        let e = self
            .entities
            .iter()
            .map(|(k, v)| (EmbeddingKind::Entity, k.as_str(), v.as_slice()));
        let m = self
            .mentions
            .iter()
            .map(|(k, v)| (EmbeddingKind::Mention, k.as_str(), v.as_slice()));
        e.chain(m)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Loss term of one edge and its derivative with respect to the affinity.
fn edge_term(affinity: f64, positive: bool, reading: LossReading) -> (f64, f64) {
    let z = match reading {
        LossReading::Affinity => affinity,
        LossReading::Weight => -affinity,
    };
    let dz = match reading {
        LossReading::Affinity => 1.0,
        LossReading::Weight => -1.0,
    };
    // the probability of the observed label is s(t)
    let (t, dt) = if positive { (z, dz) } else { (-z, -dz) };
    let bound = ((1.0 - EPSILON) / EPSILON).ln();
    if t < -bound {
        (-EPSILON.ln(), 0.0)
    } else if t > bound {
        (-(-EPSILON).ln_1p(), 0.0)
    } else {
        (softplus(-t), -logistic(-t) * dt)
    }
}

struct Reps<'a> {
    alpha: f64,
    members: BTreeMap<&'a str, &'a [String]>,
    reps: BTreeMap<&'a str, Embedding>,
}

impl<'a> Reps<'a> {
    fn new(edges: &'a [EdgeLabel], params: &ParameterSet, state: &'a ClusterState) -> Result<Self> {
        let mut members = BTreeMap::new();
        let mut reps = BTreeMap::new();
        for e in edges {
            if e.source.kind != NodeKind::Entity || reps.contains_key(e.source.ref_id.as_str()) {
                continue;
            }
            let id = e.source.ref_id.as_str();
            let sampled: &[String] = state.get(id).map_or(&[], |c| c.sampled.as_slice());
            let embs = sampled.iter().map(|m| params.mention(m)).collect::<Result<Vec<_>>>()?;
            reps.insert(id, cluster_representation(params.entity(id)?, &embs, state.alpha())?);
            members.insert(id, sampled);
        }
        Ok(Self {
            alpha: state.alpha(),
            members,
            reps,
        })
    }

    fn source<'p>(&'p self, params: &'p ParameterSet, node: &AffinityNode) -> Result<&'p Embedding> {
        match node.kind {
            NodeKind::Entity => Ok(&self.reps[node.ref_id.as_str()]),
            NodeKind::Mention => params.mention(&node.ref_id),
        }
    }
}

fn target_count(edges: &[EdgeLabel]) -> usize {
    edges.iter().map(|e| e.target.as_str()).collect::<BTreeSet<_>>().len()
}

fn edge_terms(
    edges: &[EdgeLabel],
    params: &ParameterSet,
    reps: &Reps<'_>,
    reading: LossReading,
) -> Result<Vec<(f64, f64)>> {
    edges
        .par_iter()
        .map(|e| {
            let a = reps.source(params, &e.source)?.dot(params.mention(&e.target)?)?;
            Ok(edge_term(a, e.positive, reading))
        })
        .collect()
}

/// Mean over target mentions of the summed edge cross-entropies.
pub fn batch_loss(
    edges: &[EdgeLabel],
    params: &ParameterSet,
    state: &ClusterState,
    reading: LossReading,
) -> Result<f64> {
    if edges.is_empty() {
        return Ok(0.0);
    }
    let reps = Reps::new(edges, params, state)?;
    let terms = edge_terms(edges, params, &reps, reading)?;
    Ok(terms.iter().map(|t| t.0).sum::<f64>() / target_count(edges) as f64)
}

/// Loss and its exact gradient with respect to every embedding involved,
/// including mentions that enter through cluster representations.
pub fn loss_and_gradient(
    edges: &[EdgeLabel],
    params: &ParameterSet,
    state: &ClusterState,
    reading: LossReading,
) -> Result<(f64, Gradient)> {
    let mut grad = Gradient::default();
    if edges.is_empty() {
        return Ok((0.0, grad));
    }
    let reps = Reps::new(edges, params, state)?;
    let terms = edge_terms(edges, params, &reps, reading)?;
    let n = target_count(edges) as f64;
    let mut loss = 0.0;
    for (e, &(l, slope)) in edges.iter().zip(&terms) {
        loss += l;
        let g = slope / n;
        let v = params.mention(&e.target)?;
        let u = reps.source(params, &e.source)?;
        grad.add(EmbeddingKind::Mention, &e.target, g, u.as_slice());
        match e.source.kind {
            NodeKind::Mention => grad.add(EmbeddingKind::Mention, &e.source.ref_id, g, v.as_slice()),
            NodeKind::Entity => {
                let id = e.source.ref_id.as_str();
                let members = reps.members[id];
                if members.is_empty() || reps.alpha == 1.0 {
                    grad.add(EmbeddingKind::Entity, id, g, v.as_slice());
                } else {
                    grad.add(EmbeddingKind::Entity, id, g * reps.alpha, v.as_slice());
                    let share = g * (1.0 - reps.alpha) / members.len() as f64;
                    for m in members {
                        grad.add(EmbeddingKind::Mention, m, share, v.as_slice());
                    }
                }
            }
        }
    }
    Ok((loss / n, grad))
}

pub fn loss_gradient(
    edges: &[EdgeLabel],
    params: &ParameterSet,
    state: &ClusterState,
    reading: LossReading,
) -> Result<Gradient> {
    loss_and_gradient(edges, params, state, reading).map(|(_, g)| g)
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Default)]
struct AdamMoments {
    step: i32,
    first: BTreeMap<(EmbeddingKind, String), Vec<f64>>,
    second: BTreeMap<(EmbeddingKind, String), Vec<f64>>,
}

struct OptimizerState {
    kind: Optimizer,
    adam: AdamMoments,
}

impl OptimizerState {
    fn new(kind: Optimizer) -> Self {
        Self {
            kind,
            adam: AdamMoments::default(),
        }
    }

    fn step(&mut self, params: &mut ParameterSet, grad: &Gradient, lr: f64) -> Result<()> {
        if self.kind == Optimizer::Adam {
            self.adam.step += 1;
        }
        let t = self.adam.step;
        for (kind, id, g) in grad.iter() {
            let p = params.get_mut(kind, id)?;
            match self.kind {
                Optimizer::GradientDescent => {
                    for (x, d) in p.as_mut_slice().iter_mut().zip(g) {
                        *x -= lr * d;
                    }
                }
                Optimizer::Adam => {
                    let key = (kind, id.to_string());
                    let m = self.adam.first.entry(key.clone()).or_insert_with(|| vec![0.0; g.len()]);
                    let v = self.adam.second.entry(key).or_insert_with(|| vec![0.0; g.len()]);
                    let c1 = 1.0 - ADAM_BETA1.powi(t);
                    let c2 = 1.0 - ADAM_BETA2.powi(t);
                    for (i, x) in p.as_mut_slice().iter_mut().enumerate() {
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                        *x -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
            if !p.is_finite() {
                return Err(Error::NonFinite(format!("{kind} `{id}` after update")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub batch: usize,
    /// Batch loss before the update.
    pub loss: f64,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
}

impl TrainLog {
    pub fn last_loss(&self) -> Option<f64> {
        self.steps.last().map(|s| s.loss)
    }
}

/// Train the tables on one gold-linked segment. Cluster representations use
/// `prev_memberships`, re-sampled and recomputed from the current tables for
/// every batch.
pub fn train_segment(
    config: &TrainerConfig,
    segment: &SegmentData,
    entity_ids: &[String],
    prev_memberships: &BTreeMap<String, BTreeSet<String>>,
    params: &mut ParameterSet,
) -> Result<TrainLog> {
    config.validate()?;
    if let Some(m) = segment.mentions.iter().find(|m| !segment.gold.contains_key(*m)) {
        return Err(Error::MissingGoldLink(m.clone()));
    }
    let coref = segment.coref_sets();
    let label = segment.label.as_str();
    let mut order = segment.mentions.clone();
    let mut optimizer = OptimizerState::new(config.optimizer);
    let mut log = TrainLog::default();
    for epoch in 0..config.epochs {
        let epoch_tag = epoch.to_string();
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, &[label, "shuffle", &epoch_tag]));
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let state = ClusterState::from_memberships(
                params,
                entity_ids.iter().map(String::as_str),
                prev_memberships,
                config.alpha,
                config.mention_cap,
                seed::derive(config.seed, &[label, "members", &epoch_tag, &b.to_string()]),
            )?;
            let batch = TrainingBatch::assemble(chunk, segment, &coref, Scorer::new(params, &state), config)?;
            let edges = batch.labeled();
            let (loss, grad) = loss_and_gradient(&edges, params, &state, config.loss_reading)?;
            optimizer.step(params, &grad, config.learning_rate)?;
            log.steps.push(StepRecord {
                epoch,
                batch: b,
                loss,
                positives: batch.positives.len(),
                negatives: batch.negatives.len(),
            });
        }
    }
    Ok(log)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinualConfig {
    pub trainer: TrainerConfig,
    pub k_ent: usize,
    pub k_men: usize,
    /// Length of each prediction's ranked candidate list.
    pub rank_n: usize,
}

impl Default for ContinualConfig {
    fn default() -> Self {
        Self {
            trainer: TrainerConfig::default(),
            k_ent: DEFAULT_K_ENT,
            k_men: DEFAULT_K_MEN,
            rank_n: DEFAULT_RANK_N,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mention_id: String,
    pub segment: String,
    pub surface: String,
    pub gold: Option<String>,
    pub prediction: String,
    /// The prediction first, then the remaining candidates by affinity.
    pub ranked: Vec<String>,
    pub fallback: bool,
}

/// Cluster one test segment's mentions against `state` and link them.
pub fn link_segment(
    corpus: &CorpusSnapshot,
    label: &str,
    params: &ParameterSet,
    state: &ClusterState,
    config: &ContinualConfig,
) -> Result<Vec<Prediction>> {
    if config.rank_n < 1 {
        return Err(Error::InvalidParameter("rank_n must be at least 1".into()));
    }
    let records: Vec<_> = corpus.mentions_in(label).collect();
    let ids: Vec<String> = records.iter().map(|m| m.mention_id.clone()).collect();
    let scorer = Scorer::new(params, state);
    let graph = build_inference_graph(&ids, scorer, config.k_ent, config.k_men)?;
    let clustering = prune_and_cluster(&graph, config.trainer.lambda);
    let decisions = resolve_segment(&graph, &clustering.partition, scorer, &ids)?;
    records
        .iter()
        .zip(decisions)
        .map(|(m, d)| {
            let ranking = rank_candidates(params.mention(&m.mention_id)?, state, config.rank_n)?;
            let mut ranked = vec![d.entity_id.clone()];
            ranked.extend(
                ranking
                    .into_iter()
                    .map(|(id, _)| id)
                    .filter(|id| *id != d.entity_id)
                    .take(config.rank_n - 1),
            );
            Ok(Prediction {
                mention_id: m.mention_id.clone(),
                segment: label.to_string(),
                surface: m.surface.clone(),
                gold: m.gold_entity.clone(),
                prediction: d.entity_id,
                ranked,
                fallback: d.fallback,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentOutcome {
    pub segment: TimeSegment,
    /// Checksum of the state this segment started from.
    pub state_in: String,
    /// State handed to the next segment.
    pub state: ClusterState,
    pub predictions: Vec<Prediction>,
    pub log: TrainLog,
}

#[derive(Debug, Clone)]
pub struct ContinualRun {
    pub segments: Vec<SegmentOutcome>,
    pub params: ParameterSet,
}

impl ContinualRun {
    pub fn predictions(&self) -> impl Iterator<Item = &Prediction> {
        self.segments.iter().flat_map(|s| s.predictions.iter())
    }
}

pub fn run_continual(
    corpus: &CorpusSnapshot,
    entity_ids: &[String],
    params: ParameterSet,
    config: &ContinualConfig,
) -> Result<ContinualRun> {
    run_continual_with(corpus, entity_ids, params, config, |_, _| Ok(()))
}

/// Train on train segments and link test segments in timeline order, calling
/// `observe` after each segment with its outcome and the current tables.
pub fn run_continual_with(
    corpus: &CorpusSnapshot,
    entity_ids: &[String],
    mut params: ParameterSet,
    config: &ContinualConfig,
    mut observe: impl FnMut(&SegmentOutcome, &ParameterSet) -> Result<()>,
) -> Result<ContinualRun> {
    let tc = &config.trainer;
    tc.validate()?;
    if entity_ids.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    let ids = || entity_ids.iter().map(String::as_str);
    let mut state = ClusterState::initial(&params, ids(), tc.alpha)?;
    let mut segments = Vec::new();
    for segment in &corpus.segments {
        let label = segment.label.as_str();
        let state_in = state.checksum();
        let (log, predictions, memberships) = match segment.phase {
            Phase::Train => {
                let data = SegmentData::from_corpus(corpus, label);
                let log = train_segment(tc, &data, entity_ids, &state.memberships(), &mut params)?;
                (log, Vec::new(), data.coref_sets())
            }
            Phase::Test => {
                let predictions = link_segment(corpus, label, &params, &state, config)?;
                let mut memberships: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
                for p in &predictions {
                    memberships
                        .entry(p.prediction.clone())
                        .or_default()
                        .insert(p.mention_id.clone());
                }
                (TrainLog::default(), predictions, memberships)
            }
        };
        state = ClusterState::from_memberships(
            &params,
            ids(),
            &memberships,
            tc.alpha,
            tc.mention_cap,
            seed::derive(tc.seed, &[label, "state"]),
        )?;
        let outcome = SegmentOutcome {
            segment: segment.clone(),
            state_in,
            state: state.clone(),
            predictions,
            log,
        };
        observe(&outcome, &params)?;
        segments.push(outcome);
    }
    Ok(ContinualRun { segments, params })
}

/// Candidates ranked by raw entity embeddings, ignoring any cluster history.
pub fn static_rankings(
    params: &ParameterSet,
    entity_ids: &[String],
    mentions: &[String],
    n: usize,
) -> Result<Vec<Vec<String>>> {
    let state = ClusterState::initial(params, entity_ids.iter().map(String::as_str), 1.0)?;
    mentions
        .iter()
        .map(|m| {
            Ok(rank_candidates(params.mention(m)?, &state, n)?
                .into_iter()
                .map(|(id, _)| id)
                .collect())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub segment: String,
    pub step: usize,
    pub loss: Option<f64>,
    pub seed: u64,
    pub config_hash: String,
}

/// Write `entities.temb`, `mentions.temb` and `manifest.json` into `dir`.
pub fn write_checkpoint(dir: &Path, params: &ParameterSet, manifest: &CheckpointManifest) -> Result<()> {
    fs::create_dir_all(dir)?;
    params.write_binary(&dir.join("entities.temb"), &dir.join("mentions.temb"))?;
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(manifest)? + "\n",
    )?;
    Ok(())
}

pub fn read_checkpoint(dir: &Path) -> Result<(ParameterSet, CheckpointManifest)> {
    let params = ParameterSet::read_binary(&dir.join("entities.temb"), &dir.join("mentions.temb"))?;
    let manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    Ok((params, manifest))
}
