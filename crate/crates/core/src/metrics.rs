//! Linking accuracy by lexical-overlap bin, Recall@n, QA token F1 and report
//! files.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::EntityCatalog;
use crate::error::{Error, Result};
use crate::train::Prediction;

/// How strings are cut into tokens for the Jaccard overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JaccardMode {
    /// Distinct characters.
    #[default]
    Chars,
    /// Distinct adjacent character pairs; a single character stands alone.
    Bigrams,
}

fn jaccard_tokens(s: &str, mode: JaccardMode) -> BTreeSet<String> {
    let chars: Vec<char> = s
        .chars()
        .filter(|c| !c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    match mode {
        JaccardMode::Chars => chars.iter().map(|c| c.to_string()).collect(),
        JaccardMode::Bigrams if chars.len() == 1 => [chars[0].to_string()].into(),
        JaccardMode::Bigrams => chars.windows(2).map(|w| w.iter().collect()).collect(),
    }
}

pub fn jaccard(a: &str, b: &str, mode: JaccardMode) -> Result<f64> {
    let (x, y) = (jaccard_tokens(a, mode), jaccard_tokens(b, mode));
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "jaccard of {a:?} and {b:?}: empty after normalization"
        )));
    }
    let inter = x.intersection(&y).count();
    let union = x.len() + y.len() - inter;
    Ok(inter as f64 / union as f64)
}

/// Overlap of the distinct characters of two strings, ignoring case and
/// whitespace.
pub fn jaccard_char(mention_surface: &str, entity_name: &str) -> Result<f64> {
    jaccard(mention_surface, entity_name, JaccardMode::Chars)
}

/// Lower edges of bins 2 to 5.
pub const BIN_EDGES: [f64; 4] = [0.2, 0.4, 0.6, 0.8];
pub const BIN_COUNT: usize = 5;

/// Bin number (1 to 5) of a Jaccard score: `[0, 0.2)`, ..., `[0.8, 1.0]`.
pub fn bin_index(jaccard: f64) -> usize {
    1 + BIN_EDGES.iter().filter(|&&edge| jaccard >= edge).count()
}

/// One linked mention as written by `link` and read by `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub mention_id: String,
    pub segment: String,
    pub surface: String,
    pub gold: Option<String>,
    pub prediction: String,
    pub ranked: Vec<String>,
    /// Overlap between the surface and the gold entity's name.
    pub jaccard: Option<f64>,
    pub fallback: bool,
}

impl PredictionRecord {
    pub fn from_prediction(p: &Prediction, catalog: &EntityCatalog, mode: JaccardMode) -> Result<Self> {
        let jaccard = match p.gold.as_deref().and_then(|g| catalog.get(g)) {
            Some(entity) => Some(jaccard(&p.surface, &entity.name, mode)?),
            None => None,
        };
        Ok(Self {
            mention_id: p.mention_id.clone(),
            segment: p.segment.clone(),
            surface: p.surface.clone(),
            gold: p.gold.clone(),
            prediction: p.prediction.clone(),
            ranked: p.ranked.clone(),
            jaccard,
            fallback: p.fallback,
        })
    }

    pub fn check(&self) -> Result<()> {
        let distinct: BTreeSet<&String> = self.ranked.iter().collect();
        if self.ranked.is_empty() || distinct.len() != self.ranked.len() {
            return Err(Error::Parse(format!(
                "prediction `{}`: ranked list must be non-empty and duplicate-free",
                self.mention_id
            )));
        }
        Ok(())
    }

    pub fn correct(&self) -> bool {
        self.gold.as_ref() == self.ranked.first()
    }

    pub fn bin(&self) -> Option<usize> {
        self.jaccard.map(bin_index)
    }
}

/// Records grouped into the five bins; records without a score are left out.
pub fn bin_by_jaccard(records: &[PredictionRecord]) -> [Vec<&PredictionRecord>; BIN_COUNT] {
    let mut bins: [Vec<&PredictionRecord>; BIN_COUNT] = Default::default();
    for r in records {
        if let Some(b) = r.bin() {
            bins[b - 1].push(r);
        }
    }
    bins
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    Segment,
    Bin,
    None,
}

/// Top-1 accuracy in percent.
pub fn accuracy<'a>(records: impl IntoIterator<Item = &'a PredictionRecord>) -> Option<f64> {
    let (mut n, mut hits) = (0usize, 0usize);
    for r in records {
        n += 1;
        hits += usize::from(r.correct());
    }
    (n > 0).then(|| 100.0 * hits as f64 / n as f64)
}

/// Accuracy per group. Keys are segment labels, bin numbers, or `all`.
pub fn linking_accuracy(records: &[PredictionRecord], group_by: GroupBy) -> Result<BTreeMap<String, f64>> {
    let mut groups: BTreeMap<String, Vec<&PredictionRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.gold.is_some()) {
        let key = match group_by {
            GroupBy::Segment => r.segment.clone(),
            GroupBy::Bin => match r.bin() {
                Some(b) => b.to_string(),
                None => continue,
            },
            GroupBy::None => "all".to_string(),
        };
        groups.entry(key).or_default().push(r);
    }
    if groups.is_empty() {
        return Err(Error::EmptyGroup("all".into()));
    }
    Ok(groups
        .into_iter()
        .map(|(k, v)| {
            let acc = accuracy(v).expect("groups are non-empty");
            (k, acc)
        })
        .collect())
}

/// Fraction of gold-labelled records whose gold entity is among the first `n`
/// candidates, for each `n`.
pub fn recall_at_n(records: &[PredictionRecord], ns: &[usize]) -> Vec<(usize, f64)> {
    let scored: Vec<&PredictionRecord> = records.iter().filter(|r| r.gold.is_some()).collect();
    ns.iter()
        .map(|&n| {
            if scored.is_empty() {
                return (n, 0.0);
            }
            let hits = scored
                .iter()
                .filter(|r| r.ranked.iter().take(n).any(|e| Some(e) == r.gold.as_ref()))
                .count();
            (n, hits as f64 / scored.len() as f64)
        })
        .collect()
}

/// Text up to and including the first `.`, `!` or `?` followed by whitespace
/// or the end of the string.
pub fn first_sentence(text: &str) -> &str {
    let mut it = text.char_indices().peekable();
    while let Some((i, c)) = it.next() {
        if matches!(c, '.' | '!' | '?') {
            match it.peek() {
                None => return text,
                Some((_, next)) if next.is_whitespace() => return &text[..i + c.len_utf8()],
                _ => {}
            }
        }
    }
    text
}

/// Lowercase, drop ASCII punctuation and the articles a/an/the, collapse
/// whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lowered = s.to_lowercase();
    let stripped: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    stripped
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Token F1 of the prediction's first sentence against the gold answer.
pub fn qa_f1(prediction: &str, gold: &str) -> f64 {
    let p = normalize_answer(first_sentence(prediction));
    let g = normalize_answer(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    if pt.is_empty() || gt.is_empty() {
        return if pt.is_empty() && gt.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0;
    for t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pt.len() as f64;
    let recall = common as f64 / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub segment: String,
    /// `1`..`5`, or `all`.
    pub bin: String,
    pub n_mentions: usize,
    /// Percent; absent for empty bins.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallRow {
    pub segment: String,
    pub n: usize,
    pub recall: f64,
}

/// Score of one QA prediction, as needed for aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaScore {
    pub segment: String,
    pub variant: String,
    pub f1: f64,
    pub hit: Option<bool>,
    pub resolution_ok: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaRow {
    pub segment: String,
    pub variant: String,
    /// `hit`, `miss` or `all`.
    pub split: String,
    /// `success`, `failure` or `all`.
    pub resolution: String,
    pub mean_f1: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub linking: Vec<BinRow>,
    pub recall: Vec<RecallRow>,
    pub qa: Vec<QaRow>,
}

pub const ALL: &str = "all";

fn segment_groups<T>(items: &[T], segment: impl Fn(&T) -> &str) -> Vec<(String, Vec<&T>)> {
    let mut groups: BTreeMap<String, Vec<&T>> = BTreeMap::new();
    for item in items {
        groups.entry(segment(item).to_string()).or_default().push(item);
    }
    let mut out: Vec<(String, Vec<&T>)> = groups.into_iter().collect();
    if !items.is_empty() {
        out.push((ALL.to_string(), items.iter().collect()));
    }
    out
}

impl MetricsReport {
    /// Per-segment and overall bin accuracy and Recall@n.
    pub fn add_linking(&mut self, records: &[PredictionRecord], ns: &[usize]) {
        let scored: Vec<PredictionRecord> = records.iter().filter(|r| r.gold.is_some()).cloned().collect();
        for (segment, group) in segment_groups(&scored, |r| &r.segment) {
            let owned: Vec<PredictionRecord> = group.iter().map(|&r| r.clone()).collect();
            for (i, bin) in bin_by_jaccard(&owned).iter().enumerate() {
                self.linking.push(BinRow {
                    segment: segment.clone(),
                    bin: (i + 1).to_string(),
                    n_mentions: bin.len(),
                    accuracy: accuracy(bin.iter().copied()),
                });
            }
            self.linking.push(BinRow {
                segment: segment.clone(),
                bin: ALL.to_string(),
                n_mentions: owned.len(),
                accuracy: accuracy(&owned),
            });
            for (n, recall) in recall_at_n(&owned, ns) {
                self.recall.push(RecallRow {
                    segment: segment.clone(),
                    n,
                    recall,
                });
            }
        }
    }

    /// Mean F1 per segment and variant, split by retrieval hit and resolution
    /// outcome. Splits with no predictions are omitted.
    pub fn add_qa(&mut self, scores: &[QaScore]) {
        for (segment, group) in segment_groups(scores, |s| &s.segment) {
            let mut by_variant: BTreeMap<&str, Vec<&QaScore>> = BTreeMap::new();
            for s in group {
                by_variant.entry(&s.variant).or_default().push(s);
            }
            for (variant, items) in by_variant {
                for split in ["hit", "miss", ALL] {
                    for resolution in ["success", "failure", ALL] {
                        let chosen: Vec<f64> = items
                            .iter()
                            .filter(|s| outcome_matches(s.hit, split) && outcome_matches(s.resolution_ok, resolution))
                            .map(|s| s.f1)
                            .collect();
                        if chosen.is_empty() {
                            continue;
                        }
                        self.qa.push(QaRow {
                            segment: segment.clone(),
                            variant: variant.to_string(),
                            split: split.to_string(),
                            resolution: resolution.to_string(),
                            mean_f1: chosen.iter().sum::<f64>() / chosen.len() as f64,
                            count: chosen.len(),
                        });
                    }
                }
            }
        }
    }
}

fn outcome_matches(flag: Option<bool>, wanted: &str) -> bool {
    match wanted {
        ALL => true,
        "hit" | "success" => flag == Some(true),
        _ => flag == Some(false),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

/// Paths of the recall and QA tables that accompany a CSV report.
pub fn csv_companions(path: &Path) -> (PathBuf, PathBuf) {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    let dir = path.parent().unwrap_or(Path::new(""));
    (
        dir.join(format!("{stem}_recall.csv")),
        dir.join(format!("{stem}_qa.csv")),
    )
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(File::create(path)?));
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Write `report`. CSV output puts the accuracy table at `path` and the
/// recall and QA tables beside it (see [`csv_companions`]).
pub fn emit_report(report: &MetricsReport, format: ReportFormat, path: &Path) -> Result<()> {
    match format {
        ReportFormat::Json => {
            fs::write(path, serde_json::to_string_pretty(report)? + "\n")?;
        }
        ReportFormat::Csv => {
            write_csv(path, &["segment", "bin", "n_mentions", "accuracy"], &report.linking)?;
            let (recall, qa) = csv_companions(path);
            write_csv(&recall, &["segment", "n", "recall"], &report.recall)?;
            write_csv(
                &qa,
                &["segment", "variant", "split", "resolution", "mean_f1", "count"],
                &report.qa,
            )?;
        }
    }
    Ok(())
}

pub fn read_report(path: &Path) -> Result<MetricsReport> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}
