//! Corpus, knowledge-base and QA ingestion.
//!
//! All inputs are UTF-8 JSON-lines files. Span offsets in mention records are
//! character offsets (Unicode scalar values), not byte offsets.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{Datelike, Months, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default character budget for the left and right mention contexts.
pub const DEFAULT_CONTEXT_CHARS: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub entity_id: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revision_time: Option<String>,
}

impl EntityRecord {
    /// An entity without a description still links, but its encoder input
    /// carries only the name.
    pub fn is_degenerate(&self) -> bool {
        self.description.trim().is_empty()
    }
}

/// Knowledge-base entities keyed by id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntityCatalog {
    entities: BTreeMap<String, EntityRecord>,
}

impl EntityCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, record: EntityRecord) -> Result<()> {
        if record.name.trim().is_empty() {
            return Err(Error::EmptyName(record.entity_id));
        }
        if self.entities.contains_key(&record.entity_id) {
            return Err(Error::DuplicateEntity(record.entity_id));
        }
        self.entities.insert(record.entity_id.clone(), record);
        Ok(())
    }

    pub fn get(&self, entity_id: &str) -> Option<&EntityRecord> {
        self.entities.get(entity_id)
    }

    pub fn contains(&self, entity_id: &str) -> bool {
        self.entities.contains_key(entity_id)
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    /// Entities in id order.
    pub fn iter(&self) -> impl Iterator<Item = &EntityRecord> {
        self.entities.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entities.keys().map(String::as_str)
    }

    pub fn validation_report(&self) -> ValidationReport {
        let violations = self
            .entities
            .values()
            .filter(|e| e.is_degenerate())
            .map(|e| Violation {
                record_id: e.entity_id.clone(),
                kind: ViolationKind::DegenerateEntity,
                detail: "empty description".to_string(),
            })
            .collect();
        ValidationReport { violations }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Test,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Train => f.write_str("train"),
            Phase::Test => f.write_str("test"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeSegment {
    pub label: String,
    pub ordinal: usize,
    pub phase: Phase,
}

/// How the timeline is cut into segments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentRule {
    pub start: NaiveDate,
    pub months_per_segment: u32,
    pub segment_count: u32,
    /// The first `train_segments` segments are training segments, the rest
    /// are test segments.
    pub train_segments: u32,
}

impl Default for SegmentRule {
    fn default() -> Self {
        Self {
            start: NaiveDate::from_ymd_opt(2023, 5, 1).expect("valid date"),
            months_per_segment: 2,
            segment_count: 6,
            train_segments: 3,
        }
    }
}

impl SegmentRule {
    fn boundary(&self, index: u32) -> Result<NaiveDate> {
        self.start
            .checked_add_months(Months::new(index * self.months_per_segment))
            .ok_or_else(|| Error::InvalidParameter("timeline overflows the calendar".into()))
    }

    /// First and last day covered by the rule.
    pub fn window(&self) -> Result<(NaiveDate, NaiveDate)> {
        let end = self.boundary(self.segment_count)?.pred_opt().expect("date after start");
        Ok((self.start, end))
    }

    /// Ordered segments with `MMmm` labels (first and last month of the slice).
    pub fn segments(&self) -> Result<Vec<TimeSegment>> {
        if self.months_per_segment == 0 || self.segment_count == 0 {
            return Err(Error::InvalidParameter(
                "segment rule needs at least one segment of at least one month".into(),
            ));
        }
        if self.train_segments > self.segment_count {
            return Err(Error::InvalidParameter(format!(
                "{} train segments exceed {} segments",
                self.train_segments, self.segment_count
            )));
        }
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(self.segment_count as usize);
        for i in 0..self.segment_count {
            let first = self.boundary(i)?;
            let last = self.boundary(i + 1)?.pred_opt().expect("date after start");
            let label = format!("{:02}{:02}", first.month(), last.month());
            if !seen.insert(label.clone()) {
                return Err(Error::InvalidParameter(format!(
                    "segment label `{label}` repeats; the rule spans more than a year"
                )));
            }
            let phase = if i < self.train_segments {
                Phase::Train
            } else {
                Phase::Test
            };
            out.push(TimeSegment {
                label,
                ordinal: i as usize,
                phase,
            });
        }
        Ok(out)
    }

    fn segment_index(&self, date: NaiveDate) -> Result<Option<u32>> {
        if date < self.start {
            return Ok(None);
        }
        for i in 0..self.segment_count {
            if date < self.boundary(i + 1)? {
                return Ok(Some(i));
            }
        }
        Ok(None)
    }
}

/// Segments plus the document → segment label assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Timeline {
    pub segments: Vec<TimeSegment>,
    pub assignment: BTreeMap<String, String>,
}

impl Timeline {
    pub fn doc_counts(&self) -> BTreeMap<String, usize> {
        let mut counts: BTreeMap<String, usize> = self.segments.iter().map(|s| (s.label.clone(), 0)).collect();
        for label in self.assignment.values() {
            *counts.entry(label.clone()).or_default() += 1;
        }
        counts
    }
}

/// Assign every dated document to exactly one segment of `rule`.
pub fn segment_timeline(dates: &BTreeMap<String, NaiveDate>, rule: &SegmentRule) -> Result<Timeline> {
    let segments = rule.segments()?;
    let (start, end) = rule.window()?;
    let mut assignment = BTreeMap::new();
    for (doc_id, &date) in dates {
        let index = rule.segment_index(date)?.ok_or_else(|| Error::OutOfWindow {
            doc_id: doc_id.clone(),
            date,
            start,
            end,
        })?;
        assignment.insert(doc_id.clone(), segments[index as usize].label.clone());
    }
    Ok(Timeline { segments, assignment })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    pub date: NaiveDate,
    pub segment: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionRecord {
    pub mention_id: String,
    pub doc_id: String,
    pub surface: String,
    /// Character offsets, end exclusive.
    pub start: usize,
    pub end: usize,
    pub left_context: String,
    pub right_context: String,
    pub gold_entity: Option<String>,
    pub segment: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusSnapshot {
    pub documents: BTreeMap<String, Document>,
    pub mentions: Vec<MentionRecord>,
    pub segments: Vec<TimeSegment>,
}

impl CorpusSnapshot {
    pub fn segment(&self, label: &str) -> Option<&TimeSegment> {
        self.segments.iter().find(|s| s.label == label)
    }

    pub fn mentions_in<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a MentionRecord> {
        self.mentions.iter().filter(move |m| m.segment == label)
    }

    pub fn mention(&self, mention_id: &str) -> Option<&MentionRecord> {
        self.mentions.iter().find(|m| m.mention_id == mention_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorpusFormat {
    /// One JSON object per line, `kind` = `doc` or `mention`.
    #[default]
    JsonLines,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusOptions {
    pub rule: SegmentRule,
    pub context_chars: usize,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self {
            rule: SegmentRule::default(),
            context_chars: DEFAULT_CONTEXT_CHARS,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum CorpusLine {
    Doc {
        doc_id: String,
        text: String,
        date: NaiveDate,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        segment: Option<String>,
    },
    Mention {
        mention_id: String,
        doc_id: String,
        start: usize,
        end: usize,
        surface: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gold_entity: Option<String>,
    },
}

/// Substring by character offsets; `None` when out of range.
pub(crate) fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut indices = text.char_indices().map(|(i, _)| i).chain(std::iter::once(text.len()));
    let begin = indices.nth(start)?;
    let finish = if end == start {
        begin
    } else {
        indices.nth(end - start - 1)?
    };
    Some(&text[begin..finish])
}

/// Left and right contexts adjacent to `[start, end)`, each capped at
/// `budget` characters nearest the span.
pub fn extract_contexts(text: &str, start: usize, end: usize, budget: usize) -> (String, String) {
    let chars: Vec<char> = text.chars().collect();
    let start = start.min(chars.len());
    let end = end.clamp(start, chars.len());
    let left_from = start.saturating_sub(budget);
    let right_to = (end + budget).min(chars.len());
    (
        chars[left_from..start].iter().collect(),
        chars[end..right_to].iter().collect(),
    )
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push((i + 1, line));
    }
    Ok(out)
}

fn malformed(path: &Path, line: usize, message: impl ToString) -> Error {
    Error::MalformedRecord {
        path: path.to_path_buf(),
        line,
        message: message.to_string(),
    }
}

/// Parse a corpus file without enforcing span invariants.
///
/// Documents are placed on the timeline by their `segment` field when present,
/// otherwise by `date`. Use [`validate_mention_spans`] on the result, or
/// [`load_corpus`] to get a checked snapshot.
pub fn read_corpus(path: &Path, format: CorpusFormat, options: &CorpusOptions) -> Result<CorpusSnapshot> {
    let CorpusFormat::JsonLines = format;
    let segments = options.rule.segments()?;
    let mut documents: BTreeMap<String, (String, NaiveDate, Option<String>)> = BTreeMap::new();
    let mut raw_mentions = Vec::new();
    for (line_no, line) in read_lines(path)? {
        let record: CorpusLine = serde_json::from_str(&line).map_err(|e| malformed(path, line_no, e))?;
        match record {
            CorpusLine::Doc {
                doc_id,
                text,
                date,
                segment,
            } => {
                if documents.contains_key(&doc_id) {
                    return Err(Error::DuplicateDocument(doc_id));
                }
                documents.insert(doc_id, (text, date, segment));
            }
            CorpusLine::Mention {
                mention_id,
                doc_id,
                start,
                end,
                surface,
                gold_entity,
            } => raw_mentions.push((mention_id, doc_id, start, end, surface, gold_entity)),
        }
    }

    let undated: BTreeMap<String, NaiveDate> = documents
        .iter()
        .filter(|(_, (_, _, seg))| seg.is_none())
        .map(|(id, (_, date, _))| (id.clone(), *date))
        .collect();
    let timeline = segment_timeline(&undated, &options.rule)?;
    let mut docs = BTreeMap::new();
    for (doc_id, (text, date, segment)) in documents {
        let segment = match segment {
            Some(label) => {
                if !segments.iter().any(|s| s.label == label) {
                    return Err(Error::UnknownSegment(label));
                }
                label
            }
            None => timeline.assignment[&doc_id].clone(),
        };
        docs.insert(
            doc_id.clone(),
            Document {
                doc_id,
                text,
                date,
                segment,
            },
        );
    }

    let mentions = raw_mentions
        .into_iter()
        .map(|(mention_id, doc_id, start, end, surface, gold_entity)| {
            let (left_context, right_context, segment) = match docs.get(&doc_id) {
                Some(doc) => {
                    let (l, r) = extract_contexts(&doc.text, start, end, options.context_chars);
                    (l, r, doc.segment.clone())
                }
                None => (String::new(), String::new(), String::new()),
            };
            MentionRecord {
                mention_id,
                doc_id,
                surface,
                start,
                end,
                left_context,
                right_context,
                gold_entity,
                segment,
            }
        })
        .collect();

    Ok(CorpusSnapshot {
        documents: docs,
        mentions,
        segments,
    })
}

/// Parse and validate a corpus file; the first invariant violation is an error.
pub fn load_corpus(path: &Path, format: CorpusFormat, options: &CorpusOptions) -> Result<CorpusSnapshot> {
    let snapshot = read_corpus(path, format, options)?;
    let report = validate_mention_spans(&snapshot);
    if let Some(v) = report.violations.into_iter().next() {
        return Err(v.into_error());
    }
    Ok(snapshot)
}

/// Write a snapshot in the JSON-lines corpus format.
pub fn write_corpus(snapshot: &CorpusSnapshot, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for doc in snapshot.documents.values() {
        let line = CorpusLine::Doc {
            doc_id: doc.doc_id.clone(),
            text: doc.text.clone(),
            date: doc.date,
            segment: Some(doc.segment.clone()),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    for m in &snapshot.mentions {
        let line = CorpusLine::Mention {
            mention_id: m.mention_id.clone(),
            doc_id: m.doc_id.clone(),
            start: m.start,
            end: m.end,
            surface: m.surface.clone(),
            gold_entity: m.gold_entity.clone(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_kb(path: &Path) -> Result<EntityCatalog> {
    let mut catalog = EntityCatalog::new();
    for (line_no, line) in read_lines(path)? {
        let record: EntityRecord = serde_json::from_str(&line).map_err(|e| malformed(path, line_no, e))?;
        catalog.insert(record)?;
    }
    Ok(catalog)
}

pub fn write_kb(catalog: &EntityCatalog, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for e in catalog.iter() {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    EmptySpan,
    SpanOutOfBounds,
    SurfaceMismatch,
    ContextMismatch,
    DuplicateMentionId,
    UnknownDocument,
    UnknownSegment,
    DegenerateEntity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub record_id: String,
    pub kind: ViolationKind,
    pub detail: String,
}

impl Violation {
    fn into_error(self) -> Error {
        match self.kind {
            ViolationKind::DuplicateMentionId => Error::DuplicateMention(self.record_id),
            ViolationKind::UnknownSegment => Error::UnknownSegment(self.detail),
            ViolationKind::UnknownDocument => Error::UnknownDocument {
                mention_id: self.record_id,
                doc_id: self.detail,
            },
            _ => Error::SpanMismatch {
                mention_id: self.record_id,
                message: self.detail,
            },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

/// List every mention-level invariant violation in `snapshot`.
pub fn validate_mention_spans(snapshot: &CorpusSnapshot) -> ValidationReport {
    let mut violations = Vec::new();
    let mut seen = HashSet::new();
    let mut push = |id: &str, kind, detail: String| {
        violations.push(Violation {
            record_id: id.to_string(),
            kind,
            detail,
        })
    };
    for m in &snapshot.mentions {
        if !seen.insert(m.mention_id.as_str()) {
            push(&m.mention_id, ViolationKind::DuplicateMentionId, String::new());
        }
        if !snapshot.segments.iter().any(|s| s.label == m.segment) {
            push(&m.mention_id, ViolationKind::UnknownSegment, m.segment.clone());
        }
        let Some(doc) = snapshot.documents.get(&m.doc_id) else {
            push(&m.mention_id, ViolationKind::UnknownDocument, m.doc_id.clone());
            continue;
        };
        if m.start >= m.end {
            push(
                &m.mention_id,
                ViolationKind::EmptySpan,
                format!("start {} is not before end {}", m.start, m.end),
            );
            continue;
        }
        let Some(span) = char_slice(&doc.text, m.start, m.end) else {
            push(
                &m.mention_id,
                ViolationKind::SpanOutOfBounds,
                format!(
                    "span [{}, {}) exceeds document length {}",
                    m.start,
                    m.end,
                    doc.text.chars().count()
                ),
            );
            continue;
        };
        if span != m.surface {
            push(
                &m.mention_id,
                ViolationKind::SurfaceMismatch,
                format!("surface {:?} differs from document text {:?}", m.surface, span),
            );
        }
        let before: String = char_slice(&doc.text, 0, m.start).unwrap_or_default().to_string();
        let after = char_slice(&doc.text, m.end, doc.text.chars().count()).unwrap_or_default();
        if !before.ends_with(&m.left_context) || !after.starts_with(&m.right_context) {
            push(
                &m.mention_id,
                ViolationKind::ContextMismatch,
                "contexts are not adjacent to the span".to_string(),
            );
        }
    }
    ValidationReport { violations }
}

/// A question/answer pair whose entity name was replaced by a mention.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub qa_id: String,
    pub question: String,
    pub mention: String,
    pub gold_entity: String,
    pub answer: String,
    pub segment: String,
    /// Document holding the evidence paragraph; drives the retrieval-hit flag.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence_doc: Option<String>,
}

impl QaPair {
    pub fn check(&self) -> Result<()> {
        if self.mention.is_empty() || self.question.matches(&self.mention).count() != 1 {
            return Err(Error::Parse(format!(
                "qa `{}`: question must contain the mention {:?} exactly once",
                self.qa_id, self.mention
            )));
        }
        Ok(())
    }
}

pub fn load_qa(path: &Path) -> Result<Vec<QaPair>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line_no, line) in read_lines(path)? {
        let pair: QaPair = serde_json::from_str(&line).map_err(|e| malformed(path, line_no, e))?;
        pair.check().map_err(|e| malformed(path, line_no, e))?;
        if !seen.insert(pair.qa_id.clone()) {
            return Err(malformed(path, line_no, format!("duplicate qa_id `{}`", pair.qa_id)));
        }
        out.push(pair);
    }
    Ok(out)
}

/// Documents only, for building a retrieval index from a corpus-format file.
pub fn read_documents(path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (line_no, line) in read_lines(path)? {
        let record: CorpusLine = serde_json::from_str(&line).map_err(|e| malformed(path, line_no, e))?;
        if let CorpusLine::Doc { doc_id, text, .. } = record {
            out.push((doc_id, text));
        }
    }
    Ok(out)
}
