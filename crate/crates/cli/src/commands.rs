use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;
use tempres_core::data::{load_corpus, load_kb, load_qa, read_corpus, read_documents, validate_mention_spans};
use tempres_core::data::{write_corpus, write_kb, CorpusFormat};
use tempres_core::embedding::{read_jsonl, write_jsonl};
use tempres_core::metrics::{emit_report, read_report, MetricsReport, PredictionRecord, ReportFormat};
use tempres_core::rag::chunk::chunk_documents;
use tempres_core::rag::client::{GoldEchoClient, HashingEmbedder, HttpGenerationClient};
use tempres_core::rag::prompt::TEMPLATE_VERSION;
use tempres_core::rag::qa::{SurfaceResolver, TableResolver};
use tempres_core::rag::{run_qa, GenerationClient, QaPrediction, Resolver, Retrieval};
use tempres_core::synth::{generate, run_bench_timed};
use tempres_core::train::{run_continual_with, write_checkpoint, CheckpointManifest, SegmentOutcome};
use tempres_core::{CorpusSnapshot, EmbeddingKind, EmbeddingStore, ParameterSet, Phase};

use crate::config::{require, ClientKind, ResolverKind, RunConfig};

const VERSION: &str = env!("CARGO_PKG_VERSION");

fn output_dir(c: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&c.output_dir).with_context(|| format!("creating {}", c.output_dir.display()))?;
    Ok(&c.output_dir)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_lines<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("writing {}", path.display()))?);
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

/// Record what produced the files in the output directory.
fn write_manifest(c: &RunConfig, command: &str, outputs: &[&str]) -> Result<()> {
    let manifest = json!({
        "command": command,
        "config_hash": c.hash(),
        "seed": c.seed,
        "version": VERSION,
        "prompt_templates": TEMPLATE_VERSION,
        "outputs": outputs,
        "config": c,
    });
    write_json(
        &c.output_dir
            .join(format!("manifest_{}.json", command.replace('-', "_"))),
        &manifest,
    )
}

fn load_params(c: &RunConfig) -> Result<ParameterSet> {
    let path = require(&c.paths.embeddings, "embeddings")?;
    let params = if path.is_dir() {
        ParameterSet::read_binary(&path.join("entities.temb"), &path.join("mentions.temb"))?
    } else {
        let stores = read_jsonl(path)?;
        ParameterSet::from_stores(stores.values(), c.embeddings.normalize)?
    };
    Ok(params)
}

fn load_corpus_checked(c: &RunConfig) -> Result<CorpusSnapshot> {
    let path = require(&c.paths.corpus, "corpus")?;
    Ok(load_corpus(
        path,
        CorpusFormat::JsonLines,
        &c.timeline.corpus_options(),
    )?)
}

pub fn ingest(c: &RunConfig) -> Result<()> {
    let corpus_path = require(&c.paths.corpus, "corpus")?;
    let kb_path = require(&c.paths.kb, "kb")?;
    let corpus = read_corpus(corpus_path, CorpusFormat::JsonLines, &c.timeline.corpus_options())?;
    let catalog = load_kb(kb_path)?;
    let spans = validate_mention_spans(&corpus);
    let unknown_gold: Vec<&str> = corpus
        .mentions
        .iter()
        .filter(|m| m.gold_entity.as_deref().is_some_and(|g| !catalog.contains(g)))
        .map(|m| m.mention_id.as_str())
        .collect();
    let segments: Vec<_> = corpus
        .segments
        .iter()
        .map(|s| {
            json!({
                "label": s.label,
                "phase": s.phase,
                "documents": corpus.documents.values().filter(|d| d.segment == s.label).count(),
                "mentions": corpus.mentions_in(&s.label).count(),
            })
        })
        .collect();
    let report = json!({
        "documents": corpus.documents.len(),
        "mentions": corpus.mentions.len(),
        "entities": catalog.len(),
        "segments": segments,
        "violations": spans.violations,
        "unknown_gold": unknown_gold,
        "degenerate_entities": catalog.validation_report().violations,
    });
    let out = output_dir(c)?;
    write_json(&out.join("ingest_report.json"), &report)?;
    write_manifest(c, "ingest", &["ingest_report.json"])?;
    if !spans.is_empty() || !unknown_gold.is_empty() {
        bail!(
            "{} span violations and {} links to unknown entities; see ingest_report.json",
            spans.violations.len(),
            unknown_gold.len()
        );
    }
    Ok(())
}

pub fn embed_import(c: &RunConfig) -> Result<()> {
    let params = load_params(c)?;
    let out = output_dir(c)?;
    fs::create_dir_all(out.join("params"))?;
    params.write_binary(&out.join("params/entities.temb"), &out.join("params/mentions.temb"))?;
    write_manifest(c, "embed-import", &["params/entities.temb", "params/mentions.temb"])?;
    println!(
        "imported {} entity and {} mention vectors of dimension {}",
        params.entities().count(),
        params.mentions().count(),
        params.dim()
    );
    Ok(())
}

struct Workspace {
    corpus: CorpusSnapshot,
    entity_ids: Vec<String>,
    catalog: tempres_core::EntityCatalog,
    params: ParameterSet,
}

fn workspace(c: &RunConfig) -> Result<Workspace> {
    let corpus = load_corpus_checked(c)?;
    let catalog = load_kb(require(&c.paths.kb, "kb")?)?;
    let params = load_params(c)?;
    let entity_ids = catalog.ids().map(str::to_string).collect();
    Ok(Workspace {
        corpus,
        entity_ids,
        catalog,
        params,
    })
}

/// Per-segment checkpoint and training log lines.
fn record_segment(
    c: &RunConfig,
    outcome: &SegmentOutcome,
    params: &ParameterSet,
    log: &mut Vec<serde_json::Value>,
) -> tempres_core::Result<()> {
    let label = &outcome.segment.label;
    let manifest = CheckpointManifest {
        segment: label.clone(),
        step: outcome.log.steps.len(),
        loss: outcome.log.last_loss(),
        seed: c.seed,
        config_hash: c.hash(),
    };
    write_checkpoint(&c.output_dir.join("checkpoints").join(label), params, &manifest)?;
    for s in &outcome.log.steps {
        log.push(json!({ "segment": label, "step": s }));
    }
    Ok(())
}

pub fn train(c: &RunConfig) -> Result<()> {
    let mut ws = workspace(c)?;
    ws.corpus.segments.retain(|s| s.phase == Phase::Train);
    if ws.corpus.segments.is_empty() {
        bail!("the timeline has no training segments");
    }
    let out = output_dir(c)?.to_path_buf();
    let mut log = Vec::new();
    let run = run_continual_with(&ws.corpus, &ws.entity_ids, ws.params, &c.continual(), |o, p| {
        record_segment(c, o, p, &mut log)
    })?;
    fs::create_dir_all(out.join("params"))?;
    run.params
        .write_binary(&out.join("params/entities.temb"), &out.join("params/mentions.temb"))?;
    write_lines(&out.join("train_log.jsonl"), log)?;
    write_manifest(c, "train", &["params", "checkpoints", "train_log.jsonl"])?;
    Ok(())
}

pub fn link(c: &RunConfig) -> Result<()> {
    let ws = workspace(c)?;
    let out = output_dir(c)?.to_path_buf();
    let mut log = Vec::new();
    fs::create_dir_all(out.join("states"))?;
    let run = run_continual_with(&ws.corpus, &ws.entity_ids, ws.params, &c.continual(), |o, p| {
        record_segment(c, o, p, &mut log)?;
        let state = serde_json::to_string_pretty(&o.state)? + "\n";
        fs::write(out.join("states").join(format!("{}.json", o.segment.label)), state)?;
        Ok(())
    })?;
    let records = run
        .predictions()
        .map(|p| PredictionRecord::from_prediction(p, &ws.catalog, c.metrics.jaccard))
        .collect::<tempres_core::Result<Vec<_>>>()?;
    write_lines(&out.join("predictions.jsonl"), &records)?;
    write_lines(&out.join("train_log.jsonl"), log)?;
    write_manifest(
        c,
        "link",
        &["predictions.jsonl", "states", "checkpoints", "train_log.jsonl"],
    )?;
    println!("linked {} mentions", records.len());
    Ok(())
}

fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let records: Vec<PredictionRecord> = read_lines(path)?;
    for r in &records {
        r.check()?;
    }
    Ok(records)
}

pub fn eval(c: &RunConfig, qa_predictions: &[PathBuf]) -> Result<()> {
    if c.paths.predictions.is_none() && qa_predictions.is_empty() {
        bail!("nothing to evaluate: give --predictions and/or --qa-predictions");
    }
    let mut report = MetricsReport::default();
    if c.paths.predictions.is_some() {
        let records = read_predictions(require(&c.paths.predictions, "predictions")?)?;
        report.add_linking(&records, &c.metrics.recall_ns);
    }
    let mut scores = Vec::new();
    for path in qa_predictions {
        let preds: Vec<QaPrediction> = read_lines(path)?;
        scores.extend(preds.iter().map(QaPrediction::score));
    }
    report.add_qa(&scores);
    let out = output_dir(c)?;
    emit_report(&report, ReportFormat::Json, &out.join("metrics.json"))?;
    let mut outputs = vec!["metrics.json"];
    if c.metrics.format == ReportFormat::Csv {
        emit_report(&report, ReportFormat::Csv, &out.join("metrics.csv"))?;
        outputs.extend(["metrics.csv", "metrics_recall.csv", "metrics_qa.csv"]);
    }
    write_manifest(c, "eval", &outputs)?;
    Ok(())
}

pub fn qa(c: &RunConfig) -> Result<()> {
    let pairs = load_qa(require(&c.paths.qa, "qa")?)?;
    if c.qa.variants.is_empty() {
        bail!("no prompt variants selected");
    }
    let needs_index = c.qa.variants.iter().any(|v| v.uses_context());
    let needs_resolver = c.qa.variants.iter().any(|v| v.uses_resolution());

    let embedder = HashingEmbedder::new(c.qa.embed_dim)?;
    let retrieval = if needs_index {
        let source = if c.paths.documents.is_some() {
            &c.paths.documents
        } else {
            &c.paths.corpus
        };
        let docs = read_documents(require(source, "documents")?)?;
        let chunks = chunk_documents(
            docs.iter().map(|(id, text)| (id.as_str(), text.as_str())),
            c.qa.chunk_chars,
            c.qa.chunk_overlap,
        )?;
        Some(Retrieval::build(chunks, &embedder)?)
    } else {
        None
    };
    let resolver: Option<Box<dyn Resolver>> = match (needs_resolver, c.qa.resolver) {
        (false, _) => None,
        (true, ResolverKind::Gold) => Some(Box::new(TableResolver(
            pairs.iter().map(|p| (p.qa_id.clone(), p.gold_entity.clone())).collect(),
        ))),
        (true, ResolverKind::Surface) => {
            let records = read_predictions(require(&c.paths.predictions, "predictions")?)?;
            Some(Box::new(SurfaceResolver::new(&records)))
        }
    };
    let client: Box<dyn GenerationClient> = match c.qa.client {
        ClientKind::GoldEcho => Box::new(GoldEchoClient::new(&pairs)),
        ClientKind::Http => Box::new(HttpGenerationClient::new(c.client.clone())?),
    };

    let run_config = c.qa_run();
    let mut all = Vec::new();
    let mut summary = BTreeMap::new();
    for &variant in &c.qa.variants {
        let preds = run_qa(
            &pairs,
            variant,
            client.as_ref(),
            retrieval.as_ref(),
            resolver.as_deref(),
            &run_config,
        )?;
        let failed = preds.iter().filter(|p| p.error.is_some()).count();
        let mean = preds.iter().map(|p| p.f1).sum::<f64>() / preds.len().max(1) as f64;
        summary.insert(variant.name(), json!({ "mean_f1": mean, "failed": failed }));
        all.extend(preds);
    }
    let out = output_dir(c)?;
    write_lines(&out.join("qa_predictions.jsonl"), &all)?;
    write_manifest(c, "qa", &["qa_predictions.jsonl"])?;
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

pub fn report(c: &RunConfig, input: &Path, to: Option<PathBuf>) -> Result<()> {
    if !input.exists() {
        bail!("metrics file {} does not exist", input.display());
    }
    let report = read_report(input)?;
    let out = output_dir(c)?;
    let ext = match c.metrics.format {
        ReportFormat::Json => "json",
        ReportFormat::Csv => "csv",
    };
    let dest = to.unwrap_or_else(|| out.join(format!("report.{ext}")));
    emit_report(&report, c.metrics.format, &dest)?;
    write_manifest(c, "report", &[&dest.to_string_lossy()])?;
    Ok(())
}

/// Write one synthetic dataset plus a config that runs `link` on it.
fn export_dataset(c: &RunConfig, dir: &Path, seed: u64) -> Result<()> {
    let data = generate(&c.synth, seed)?;
    fs::create_dir_all(dir)?;
    write_corpus(&data.corpus, &dir.join("corpus.jsonl"))?;
    write_kb(&data.catalog, &dir.join("kb.jsonl"))?;
    let first = data
        .corpus
        .segments
        .first()
        .map(|s| s.label.clone())
        .unwrap_or_default();
    let mut stores: BTreeMap<String, EmbeddingStore> = BTreeMap::new();
    for (id, v) in data.params.entities() {
        stores
            .entry(first.clone())
            .or_insert_with(|| EmbeddingStore::new(first.clone()))
            .insert(EmbeddingKind::Entity, id, v.clone())?;
    }
    for m in &data.corpus.mentions {
        stores
            .entry(m.segment.clone())
            .or_insert_with(|| EmbeddingStore::new(m.segment.clone()))
            .insert(
                EmbeddingKind::Mention,
                m.mention_id.clone(),
                data.params.mention(&m.mention_id)?.clone(),
            )?;
    }
    write_jsonl(stores.values(), &dir.join("vectors.jsonl"))?;
    let run = format!(
        "seed = {seed}\noutput_dir = \"out\"\n\n[paths]\ncorpus = \"corpus.jsonl\"\nkb = \"kb.jsonl\"\nembeddings = \"vectors.jsonl\"\n\n\
         [timeline]\nsegment_count = {}\ntrain_segments = {}\n\n[trainer]\nalpha = {}\nlearning_rate = {:e}\n",
        c.synth.segments, c.synth.train_segments, c.synth.alpha, c.synth.learning_rate
    );
    fs::write(dir.join("run.toml"), run)?;
    Ok(())
}

pub fn synth_bench(c: &RunConfig, export: Option<&Path>) -> Result<()> {
    let (report, secs) = run_bench_timed(&c.synth)?;
    let out = output_dir(c)?;
    write_json(&out.join("synth_report.json"), &report)?;
    let mut outputs = vec!["synth_report.json".to_string()];
    if let Some(dir) = export {
        export_dataset(c, dir, c.synth.seeds.first().copied().unwrap_or(c.seed))?;
        outputs.push(dir.display().to_string());
    }
    let names: Vec<&str> = outputs.iter().map(String::as_str).collect();
    write_manifest(c, "synth-bench", &names)?;
    println!(
        "{}",
        json!({
            "mean_adaptive": report.mean_adaptive,
            "mean_static": report.mean_static,
            "gain": report.gain,
            "bins_non_decreasing": report.bins_non_decreasing(),
            "runtime_secs": secs,
        })
    );
    Ok(())
}
