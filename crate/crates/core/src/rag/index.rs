use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::rag::chunk::ChunkId;

/// Inner-product index over chunk vectors. Immutable once built.
#[derive(Debug, Clone, Default)]
pub struct VectorIndex {
    dim: usize,
    entries: BTreeMap<ChunkId, Embedding>,
}

impl VectorIndex {
    pub fn build(entries: impl IntoIterator<Item = (ChunkId, Embedding)>) -> Result<Self> {
        let mut index = VectorIndex::default();
        for (id, v) in entries {
            if index.entries.is_empty() {
                index.dim = v.dim();
            } else if v.dim() != index.dim {
                return Err(Error::DimensionMismatch {
                    expected: index.dim,
                    found: v.dim(),
                });
            }
            if index.entries.insert(id.clone(), v).is_some() {
                return Err(Error::InvalidParameter(format!("duplicate chunk id {id}")));
            }
        }
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ChunkId, &Embedding)> {
        self.entries.iter()
    }

    /// The `k` highest-scoring chunks, best first; ties go to the smaller id.
    pub fn retrieve(&self, query: &Embedding, k: usize) -> Result<Vec<(ChunkId, f64)>> {
        if k < 1 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        if self.entries.is_empty() {
            return Err(Error::EmptyIndex);
        }
        // min-heap on rank quality, so the worst kept hit is on top
        let mut heap: BinaryHeap<Reverse<Hit<'_>>> = BinaryHeap::with_capacity(k + 1);
        for (id, v) in &self.entries {
            heap.push(Reverse(Hit {
                score: query.dot(v)?,
                id,
            }));
            if heap.len() > k {
                heap.pop();
            }
        }
        let mut hits: Vec<Hit<'_>> = heap.into_iter().map(|r| r.0).collect();
        hits.sort_by(|a, b| b.cmp(a));
        Ok(hits.into_iter().map(|h| (h.id.clone(), h.score)).collect())
    }
}

struct Hit<'a> {
    score: f64,
    id: &'a ChunkId,
}

/// Greater means better: higher score, then smaller id.
impl Ord for Hit<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .partial_cmp(&other.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.id.cmp(self.id))
    }
}

impl PartialOrd for Hit<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Hit<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Hit<'_> {}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(doc: &str, index: usize) -> ChunkId {
        ChunkId {
            doc_id: doc.into(),
            index,
        }
    }

    fn v(x: &[f64]) -> Embedding {
        Embedding::new(x.to_vec()).unwrap()
    }

    #[test]
    fn single_chunk_and_ties() {
        let one = VectorIndex::build([(id("a", 0), v(&[1.0, 0.0]))]).unwrap();
        assert_eq!(one.retrieve(&v(&[0.0, 1.0]), 3).unwrap().len(), 1);

        let idx = VectorIndex::build([
            (id("b", 0), v(&[1.0, 0.0])),
            (id("a", 1), v(&[0.0, 1.0])),
            (id("a", 0), v(&[1.0, 1.0])),
        ])
        .unwrap();
        let orth = idx.retrieve(&v(&[0.0, 0.0]), 2).unwrap();
        assert_eq!(orth, vec![(id("a", 0), 0.0), (id("a", 1), 0.0)]);
        let best = idx.retrieve(&v(&[1.0, 0.0]), 3).unwrap();
        assert_eq!(
            best.iter().map(|h| h.0.to_string()).collect::<Vec<_>>(),
            ["a#0", "b#0", "a#1"]
        );
    }

    #[test]
    fn errors() {
        assert!(matches!(
            VectorIndex::default().retrieve(&v(&[1.0]), 1),
            Err(Error::EmptyIndex)
        ));
        let idx = VectorIndex::build([(id("a", 0), v(&[1.0]))]).unwrap();
        assert!(idx.retrieve(&v(&[1.0]), 0).is_err());
        assert!(VectorIndex::build([(id("a", 0), v(&[1.0])), (id("a", 1), v(&[1.0, 2.0]))]).is_err());
    }
}
