//! Synthetic drifting-entity benchmark.
//!
//! Every entity has a latent center that takes a Gaussian step each segment.
//! Knowledge-base vectors sit at the initial centers; a mention is its
//! entity's current center plus noise. A mention's surface form is the entity
//! name with a random fraction of characters swapped out, and its vector noise
//! grows as the character overlap with the name shrinks, so low-overlap
//! surfaces are also the hard ones.

use std::collections::BTreeMap;
use std::time::Instant;

use chrono::{Months, NaiveDate};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::affinity::ParameterSet;
use crate::data::{CorpusSnapshot, Document, EntityCatalog, EntityRecord, MentionRecord, Phase, TimeSegment};
use crate::embedding::{Embedding, EmbeddingKind};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, bin_by_jaccard, jaccard_char, JaccardMode, PredictionRecord, BIN_COUNT};
use crate::seed;
use crate::train::{run_continual, ContinualConfig, TrainerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub entities: usize,
    pub segments: usize,
    pub train_segments: usize,
    pub mentions_per_segment: usize,
    pub dim: usize,
    /// Standard deviation of the per-segment center step, per coordinate.
    pub drift: f64,
    /// Mention noise per coordinate for a surface that matches the entity
    /// name exactly and for one that shares no character with it.
    pub noise_min: f64,
    pub noise_max: f64,
    pub name_len: usize,
    pub seeds: Vec<u64>,
    pub alpha: f64,
    pub learning_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            entities: 20,
            segments: 4,
            train_segments: 2,
            mentions_per_segment: 100,
            dim: 16,
            drift: 0.8,
            noise_min: 0.0,
            noise_max: 1.5,
            name_len: 8,
            seeds: (0..10).collect(),
            alpha: 0.8,
            learning_rate: 3e-5,
        }
    }
}

pub struct SynthDataset {
    pub corpus: CorpusSnapshot,
    pub catalog: EntityCatalog,
    pub params: ParameterSet,
}

const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

/// A name of `len` distinct letters.
fn entity_name(rng: &mut impl Rng, len: usize) -> String {
    ALPHABET.choose_multiple(rng, len).map(|&b| b as char).collect()
}

/// `name` with each character replaced, with probability `level`, by a
/// letter that does not occur in `name`.
fn noisy_surface(rng: &mut impl Rng, name: &str, level: f64) -> String {
    let outside: Vec<char> = ALPHABET
        .iter()
        .map(|&b| b as char)
        .filter(|c| !name.contains(*c))
        .collect();
    name.chars()
        .map(|c| {
            if rng.random::<f64>() < level && !outside.is_empty() {
                outside[rng.random_range(0..outside.len())]
            } else {
                c
            }
        })
        .collect()
}

fn gaussian(rng: &mut impl Rng, dim: usize, sd: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, sd).expect("finite standard deviation");
    (0..dim).map(|_| normal.sample(rng)).collect()
}

fn segment_labels(count: usize) -> Result<Vec<String>> {
    let start = NaiveDate::from_ymd_opt(2023, 5, 1).expect("valid date");
    (0..count)
        .map(|i| {
            let first = start
                .checked_add_months(Months::new(2 * i as u32))
                .ok_or_else(|| Error::InvalidParameter("too many segments".into()))?;
            let next = first.checked_add_months(Months::new(2)).expect("in range");
            let last = next.pred_opt().expect("in range");
            Ok(format!("{}{}", first.format("%m"), last.format("%m")))
        })
        .collect()
}

pub fn generate(config: &SynthConfig, seed: u64) -> Result<SynthDataset> {
    if config.entities == 0 || config.segments == 0 || config.dim == 0 || config.segments > 6 {
        return Err(Error::InvalidParameter(
            "synthetic benchmark needs entities, dim > 0 and 1 to 6 segments".into(),
        ));
    }
    if config.name_len == 0 || config.name_len >= ALPHABET.len() {
        return Err(Error::InvalidParameter(format!(
            "name_len must be between 1 and {}",
            ALPHABET.len() - 1
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &["synth"]));
    let unit = 1.0 / (config.dim as f64).sqrt();
    let labels = segment_labels(config.segments)?;

    let mut catalog = EntityCatalog::new();
    let mut params = ParameterSet::new(config.dim);
    let mut names = Vec::new();
    let mut centers = Vec::new();
    for e in 0..config.entities {
        let id = format!("E{e:02}");
        let name = entity_name(&mut rng, config.name_len);
        catalog.insert(EntityRecord {
            entity_id: id.clone(),
            name: name.clone(),
            description: String::new(),
            revision_time: None,
        })?;
        let c = gaussian(&mut rng, config.dim, unit);
        params.insert(EmbeddingKind::Entity, id, Embedding::new(c.clone())?)?;
        names.push(name);
        centers.push(c);
    }

    let mut corpus = CorpusSnapshot {
        documents: BTreeMap::new(),
        mentions: Vec::new(),
        segments: Vec::new(),
    };
    for (t, label) in labels.iter().enumerate() {
        corpus.segments.push(TimeSegment {
            label: label.clone(),
            ordinal: t,
            phase: if t < config.train_segments {
                Phase::Train
            } else {
                Phase::Test
            },
        });
        for c in &mut centers {
            for (x, d) in c.iter_mut().zip(gaussian(&mut rng, config.dim, config.drift * unit)) {
                *x += d;
            }
        }
        let date = NaiveDate::from_ymd_opt(2023, 5, 1)
            .and_then(|d| d.checked_add_months(Months::new(2 * t as u32)))
            .expect("in range");
        for i in 0..config.mentions_per_segment {
            let e = rng.random_range(0..config.entities);
            let level: f64 = rng.random();
            let surface = noisy_surface(&mut rng, &names[e], level);
            let overlap = jaccard_char(&surface, &names[e])?;
            let sd = (config.noise_min + (config.noise_max - config.noise_min) * (1.0 - overlap)) * unit;
            let v: Vec<f64> = centers[e]
                .iter()
                .zip(gaussian(&mut rng, config.dim, sd))
                .map(|(c, n)| c + n)
                .collect();
            let id = format!("m{label}-{i:03}");
            let doc_id = format!("d{label}-{i:03}");
            params.insert(EmbeddingKind::Mention, id.clone(), Embedding::new(v)?)?;
            corpus.documents.insert(
                doc_id.clone(),
                Document {
                    doc_id: doc_id.clone(),
                    text: surface.clone(),
                    date,
                    segment: label.clone(),
                },
            );
            corpus.mentions.push(MentionRecord {
                mention_id: id,
                doc_id,
                end: surface.chars().count(),
                surface,
                start: 0,
                left_context: String::new(),
                right_context: String::new(),
                gold_entity: Some(format!("E{e:02}")),
                segment: label.clone(),
            });
        }
    }
    Ok(SynthDataset {
        corpus,
        catalog,
        params,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Accuracy (percent) over the final two segments.
    pub adaptive: f64,
    pub static_baseline: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinAccuracy {
    pub bin: usize,
    pub n_mentions: usize,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub config: SynthConfig,
    pub seeds: Vec<SeedResult>,
    pub mean_adaptive: f64,
    pub mean_static: f64,
    /// `mean_adaptive - mean_static`, in percentage points.
    pub gain: f64,
    /// Adaptive-run accuracy per Jaccard bin, pooled over seeds.
    pub bins: Vec<BinAccuracy>,
}

impl SynthReport {
    pub fn bins_non_decreasing(&self) -> bool {
        let acc: Vec<f64> = self.bins.iter().filter_map(|b| b.accuracy).collect();
        acc.windows(2).all(|w| w[0] <= w[1])
    }
}

fn final_records(data: &SynthDataset, alpha: f64, seed: u64, config: &SynthConfig) -> Result<Vec<PredictionRecord>> {
    let ids: Vec<String> = data.catalog.ids().map(str::to_string).collect();
    let cc = ContinualConfig {
        trainer: TrainerConfig {
            alpha,
            seed,
            learning_rate: config.learning_rate,
            ..Default::default()
        },
        ..Default::default()
    };
    let run = run_continual(&data.corpus, &ids, data.params.clone(), &cc)?;
    let tail: Vec<&str> = data
        .corpus
        .segments
        .iter()
        .rev()
        .take(2)
        .map(|s| s.label.as_str())
        .collect();
    run.predictions()
        .filter(|p| tail.contains(&p.segment.as_str()))
        .map(|p| PredictionRecord::from_prediction(p, &data.catalog, JaccardMode::Chars))
        .collect()
}

/// Adaptive (configured alpha) versus static (alpha = 1) accuracy on the final
/// two segments, for every seed.
pub fn run_bench(config: &SynthConfig) -> Result<SynthReport> {
    let mut seeds = Vec::new();
    let mut pooled = Vec::new();
    for &s in &config.seeds {
        let data = generate(config, s)?;
        let adaptive = final_records(&data, config.alpha, s, config)?;
        let fixed = final_records(&data, 1.0, s, config)?;
        seeds.push(SeedResult {
            seed: s,
            adaptive: accuracy(&adaptive).unwrap_or(0.0),
            static_baseline: accuracy(&fixed).unwrap_or(0.0),
        });
        pooled.extend(adaptive);
    }
    let n = seeds.len().max(1) as f64;
    let mean_adaptive = seeds.iter().map(|r| r.adaptive).sum::<f64>() / n;
    let mean_static = seeds.iter().map(|r| r.static_baseline).sum::<f64>() / n;
    let bins = bin_by_jaccard(&pooled)
        .iter()
        .enumerate()
        .map(|(i, b)| BinAccuracy {
            bin: i + 1,
            n_mentions: b.len(),
            accuracy: accuracy(b.iter().copied()),
        })
        .collect::<Vec<_>>();
    debug_assert_eq!(bins.len(), BIN_COUNT);
    Ok(SynthReport {
        config: config.clone(),
        seeds,
        mean_adaptive,
        mean_static,
        gain: mean_adaptive - mean_static,
        bins,
    })
}

/// [`run_bench`] plus wall-clock seconds.
pub fn run_bench_timed(config: &SynthConfig) -> Result<(SynthReport, f64)> {
    let t = Instant::now();
    let report = run_bench(config)?;
    Ok((report, t.elapsed().as_secs_f64()))
}
