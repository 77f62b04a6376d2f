//! Inner-product affinities, edge weights and cluster representations.
//!
//! An entity's cluster representation blends its encoder output with the mean
//! of the mentions most recently resolved to it:
//!
//! `rep(e) = alpha * enc(e) + (1 - alpha) * mean(enc(m) for m in members(e))`
//!
//! With no members the representation is the entity embedding itself.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::{self, Embedding, EmbeddingKind, EmbeddingStore};
use crate::error::{Error, Result};

/// Default blend weight of the entity embedding.
pub const DEFAULT_ALPHA: f64 = 0.8;
/// Default cap on members averaged into a cluster representation.
pub const DEFAULT_MENTION_CAP: usize = 30;

/// Entity–mention affinity.
pub fn affinity_em(cluster_rep: &Embedding, mention: &Embedding) -> Result<f64> {
    cluster_rep.dot(mention)
}

/// Mention–mention affinity; symmetric.
pub fn affinity_mm(a: &Embedding, b: &Embedding) -> Result<f64> {
    a.dot(b)
}

/// Edge weight (dissimilarity) for an affinity.
pub fn weight(affinity: f64) -> f64 {
    -affinity
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    Ok(())
}

pub fn cluster_representation(entity_emb: &Embedding, member_embs: &[&Embedding], alpha: f64) -> Result<Embedding> {
    check_alpha(alpha)?;
    let dim = entity_emb.dim();
    if let Some(bad) = member_embs.iter().find(|m| m.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.dim(),
        });
    }
    if member_embs.is_empty() || alpha == 1.0 {
        return Ok(entity_emb.clone());
    }
    let mut mean = vec![0.0; dim];
    for m in member_embs {
        for (acc, x) in mean.iter_mut().zip(m.as_slice()) {
            *acc += x;
        }
    }
    let n = member_embs.len() as f64;
    let rep = entity_emb
        .as_slice()
        .iter()
        .zip(&mean)
        .map(|(e, s)| alpha * e + (1.0 - alpha) * (s / n))
        .collect();
    Embedding::new(rep)
}

/// Uniform sample of at most `cap` members, without replacement, returned in
/// id order. Deterministic for a given seed.
pub fn sample_cluster_mentions(members: &BTreeSet<String>, cap: usize, seed: u64) -> Vec<String> {
    if members.len() <= cap {
        return members.iter().cloned().collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, members.len(), cap).into_vec();
    picked.sort_unstable();
    let all: Vec<&String> = members.iter().collect();
    picked.into_iter().map(|i| all[i].clone()).collect()
}

/// Learnable entity and mention embedding tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    dim: usize,
    entities: BTreeMap<String, Embedding>,
    mentions: BTreeMap<String, Embedding>,
}

impl ParameterSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entities: BTreeMap::new(),
            mentions: BTreeMap::new(),
        }
    }

    /// Merge imported stores into one table set. An id may appear in several
    /// segments only with identical vectors.
    pub fn from_stores<'a>(stores: impl IntoIterator<Item = &'a EmbeddingStore>, normalize: bool) -> Result<Self> {
        let mut params: Option<ParameterSet> = None;
        for store in stores {
            for (kind, id, v) in store.iter() {
                let v = if normalize { v.normalized() } else { v.clone() };
                let p = params.get_or_insert_with(|| ParameterSet::new(v.dim()));
                p.insert_checked(kind, id, v)?;
            }
        }
        params.ok_or_else(|| Error::InvalidParameter("no embeddings to build parameters from".into()))
    }

    fn insert_checked(&mut self, kind: EmbeddingKind, id: &str, v: Embedding) -> Result<()> {
        if v.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: v.dim(),
            });
        }
        let table = match kind {
            EmbeddingKind::Entity => &mut self.entities,
            EmbeddingKind::Mention => &mut self.mentions,
        };
        if let Some(existing) = table.get(id) {
            if *existing != v {
                return Err(Error::InvalidParameter(format!(
                    "{kind} `{id}` has conflicting vectors across segments"
                )));
            }
            return Ok(());
        }
        table.insert(id.to_string(), v);
        Ok(())
    }

    pub fn insert(&mut self, kind: EmbeddingKind, id: impl Into<String>, v: Embedding) -> Result<()> {
        if v.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: v.dim(),
            });
        }
        match kind {
            EmbeddingKind::Entity => self.entities.insert(id.into(), v),
            EmbeddingKind::Mention => self.mentions.insert(id.into(), v),
        };
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entity(&self, id: &str) -> Result<&Embedding> {
        self.entities.get(id).ok_or_else(|| Error::MissingEmbedding {
            kind: "entity",
            id: id.to_string(),
        })
    }

    pub fn mention(&self, id: &str) -> Result<&Embedding> {
        self.mentions.get(id).ok_or_else(|| Error::MissingEmbedding {
            kind: "mention",
            id: id.to_string(),
        })
    }

    pub fn get(&self, kind: EmbeddingKind, id: &str) -> Result<&Embedding> {
        match kind {
            EmbeddingKind::Entity => self.entity(id),
            EmbeddingKind::Mention => self.mention(id),
        }
    }

    pub fn get_mut(&mut self, kind: EmbeddingKind, id: &str) -> Result<&mut Embedding> {
        let table = match kind {
            EmbeddingKind::Entity => &mut self.entities,
            EmbeddingKind::Mention => &mut self.mentions,
        };
        table.get_mut(id).ok_or_else(|| Error::MissingEmbedding {
            kind: kind.as_str(),
            id: id.to_string(),
        })
    }

    pub fn entities(&self) -> impl Iterator<Item = (&str, &Embedding)> {
        self.entities.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn mentions(&self) -> impl Iterator<Item = (&str, &Embedding)> {
        self.mentions.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn is_finite(&self) -> bool {
        self.entities
            .values()
            .chain(self.mentions.values())
            .all(Embedding::is_finite)
    }

    /// Write both tables in the binary vector format.
    pub fn write_binary(&self, entities: &Path, mentions: &Path) -> Result<()> {
        embedding::write_binary(self.entities(), entities)?;
        embedding::write_binary(self.mentions(), mentions)
    }

    pub fn read_binary(entities: &Path, mentions: &Path) -> Result<Self> {
        let e = embedding::read_binary(entities, EmbeddingKind::Entity, "")?;
        let m = embedding::read_binary(mentions, EmbeddingKind::Mention, "")?;
        Self::from_stores([&e, &m], false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityCluster {
    /// Every mention resolved to the entity in the latest prior segment.
    pub members: BTreeSet<String>,
    /// The capped subset averaged into `rep`.
    pub sampled: Vec<String>,
    pub rep: Embedding,
}

/// Per-entity resolved mentions and cached cluster representations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterState {
    alpha: f64,
    clusters: BTreeMap<String, EntityCluster>,
}

impl ClusterState {
    /// Every entity forms a singleton cluster represented by its embedding.
    pub fn initial<'a>(
        params: &ParameterSet,
        entity_ids: impl IntoIterator<Item = &'a str>,
        alpha: f64,
    ) -> Result<Self> {
        Self::from_memberships(params, entity_ids, &BTreeMap::new(), alpha, DEFAULT_MENTION_CAP, 0)
    }

    pub fn from_memberships<'a>(
        params: &ParameterSet,
        entity_ids: impl IntoIterator<Item = &'a str>,
        memberships: &BTreeMap<String, BTreeSet<String>>,
        alpha: f64,
        cap: usize,
        seed: u64,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        let mut clusters = BTreeMap::new();
        for id in entity_ids {
            let members = memberships.get(id).cloned().unwrap_or_default();
            let sampled = sample_cluster_mentions(&members, cap, crate::seed::derive(seed, &[id]));
            let member_embs = sampled.iter().map(|m| params.mention(m)).collect::<Result<Vec<_>>>()?;
            let rep = cluster_representation(params.entity(id)?, &member_embs, alpha)?;
            clusters.insert(id.to_string(), EntityCluster { members, sampled, rep });
        }
        Ok(Self { alpha, clusters })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn get(&self, entity_id: &str) -> Option<&EntityCluster> {
        self.clusters.get(entity_id)
    }

    pub fn rep(&self, entity_id: &str) -> Result<&Embedding> {
        self.clusters
            .get(entity_id)
            .map(|c| &c.rep)
            .ok_or_else(|| Error::MissingEmbedding {
                kind: "entity",
                id: entity_id.to_string(),
            })
    }

    /// Clusters in entity-id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &EntityCluster)> {
        self.clusters.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn memberships(&self) -> BTreeMap<String, BTreeSet<String>> {
        self.clusters
            .iter()
            .map(|(k, c)| (k.clone(), c.members.clone()))
            .collect()
    }

    /// SHA-256 over the serialized state.
    pub fn checksum(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("state serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Embedding {
        Embedding::new(x.to_vec()).unwrap()
    }

    #[test]
    fn affinities_and_weights() {
        assert_eq!(affinity_em(&v(&[1.0, 2.0]), &v(&[3.0, 4.0])).unwrap(), 11.0);
        assert_eq!(weight(11.0), -11.0);
        assert_eq!(affinity_em(&v(&[1.0, 0.0]), &v(&[0.0, 5.0])).unwrap(), 0.0);
        assert_eq!(affinity_mm(&v(&[0.6, 0.8]), &v(&[0.6, 0.8])).unwrap(), 1.0);
        assert_eq!(affinity_mm(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        assert!(affinity_mm(&v(&[1.0]), &v(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn blended_representation() {
        let e = v(&[1.0, 0.0]);
        let (a, b) = (v(&[0.0, 1.0]), v(&[0.0, 3.0]));
        let rep = cluster_representation(&e, &[&a, &b], 0.8).unwrap();
        approx::assert_abs_diff_eq!(rep.as_slice()[0], 0.8, epsilon = 1e-15);
        approx::assert_abs_diff_eq!(rep.as_slice()[1], 0.4, epsilon = 1e-15);
        assert_eq!(cluster_representation(&e, &[&a, &b], 1.0).unwrap(), e);
        assert_eq!(cluster_representation(&e, &[], 0.3).unwrap(), e);
        assert!(matches!(
            cluster_representation(&e, &[&a], 1.5),
            Err(Error::AlphaOutOfRange(_))
        ));
        assert!(cluster_representation(&e, &[&a], -0.1).is_err());
    }

    #[test]
    fn sampling_caps_and_repeats() {
        let ten: BTreeSet<String> = (0..10).map(|i| format!("m{i}")).collect();
        assert_eq!(sample_cluster_mentions(&ten, 30, 1).len(), 10);

        let hundred: BTreeSet<String> = (0..100).map(|i| format!("m{i:03}")).collect();
        let a = sample_cluster_mentions(&hundred, DEFAULT_MENTION_CAP, 42);
        let b = sample_cluster_mentions(&hundred, DEFAULT_MENTION_CAP, 42);
        assert_eq!(a.len(), 30);
        assert_eq!(a, b);
        let distinct: BTreeSet<_> = a.iter().collect();
        assert_eq!(distinct.len(), 30);
        assert!(a.iter().all(|m| hundred.contains(m)));
        assert_ne!(a, sample_cluster_mentions(&hundred, 30, 43));
    }

    #[test]
    fn empty_state_uses_entity_embeddings() {
        let mut p = ParameterSet::new(2);
        p.insert(EmbeddingKind::Entity, "A", v(&[1.0, 2.0])).unwrap();
        p.insert(EmbeddingKind::Mention, "m", v(&[3.0, 3.0])).unwrap();
        let s = ClusterState::initial(&p, ["A"], 0.8).unwrap();
        assert_eq!(s.rep("A").unwrap(), p.entity("A").unwrap());

        let members: BTreeMap<_, _> = [("A".to_string(), ["m".to_string()].into())].into();
        let s = ClusterState::from_memberships(&p, ["A"], &members, 0.5, 30, 0).unwrap();
        assert_eq!(s.rep("A").unwrap().as_slice(), &[2.0, 2.5]);
        assert_eq!(s.checksum(), s.clone().checksum());
    }
}
