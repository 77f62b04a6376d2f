use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_CHARS: usize = 1500;
pub const DEFAULT_OVERLAP: usize = 10;

/// Chunks order by document id, then position in the document.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ChunkId {
    pub doc_id: String,
    pub index: usize,
}

impl fmt::Display for ChunkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.doc_id, self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentChunk {
    pub id: ChunkId,
    /// Character offsets into the document, end exclusive.
    pub start: usize,
    pub end: usize,
    pub text: String,
}

/// Fixed windows of `max_chars` characters, each starting `max_chars -
/// overlap` characters after the previous one.
pub fn chunk_document(doc_id: &str, text: &str, max_chars: usize, overlap: usize) -> Result<Vec<DocumentChunk>> {
    if overlap >= max_chars {
        return Err(Error::InvalidParameter(format!(
            "overlap {overlap} must be smaller than max_chars {max_chars}"
        )));
    }
    let chars: Vec<char> = text.chars().collect();
    let stride = max_chars - overlap;
    let mut chunks = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let end = (start + max_chars).min(chars.len());
        chunks.push(DocumentChunk {
            id: ChunkId {
                doc_id: doc_id.to_string(),
                index: chunks.len(),
            },
            start,
            end,
            text: chars[start..end].iter().collect(),
        });
        if end == chars.len() {
            break;
        }
        start += stride;
    }
    Ok(chunks)
}

pub fn chunk_documents<'a>(
    docs: impl IntoIterator<Item = (&'a str, &'a str)>,
    max_chars: usize,
    overlap: usize,
) -> Result<Vec<DocumentChunk>> {
    let mut out = Vec::new();
    for (id, text) in docs {
        out.extend(chunk_document(id, text, max_chars, overlap)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranges(chunks: &[DocumentChunk]) -> Vec<(usize, usize)> {
        chunks.iter().map(|c| (c.start, c.end)).collect()
    }

    #[test]
    fn stride_ranges() {
        let doc = "x".repeat(3000);
        let c = chunk_document("d", &doc, 1500, 10).unwrap();
        assert_eq!(ranges(&c), [(0, 1500), (1490, 2990), (2980, 3000)]);
        assert_eq!(chunk_document("d", &"x".repeat(1500), 1500, 10).unwrap().len(), 1);
        assert!(chunk_document("d", "", 1500, 10).unwrap().is_empty());
        assert!(chunk_document("d", "abc", 10, 10).is_err());
    }

    #[test]
    fn offsets_count_characters() {
        let c = chunk_document("d", "ééééé", 3, 1).unwrap();
        assert_eq!(c[0].text, "ééé");
        assert_eq!(ranges(&c), [(0, 3), (2, 5)]);
        assert_eq!(c[1].id.to_string(), "d#1");
    }
}
