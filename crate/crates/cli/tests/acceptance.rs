//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::fs;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempres_core::affinity::cluster_representation;
use tempres_core::data::QaPair;
use tempres_core::graph::{prune_and_cluster, rank_candidates};
use tempres_core::metrics::{jaccard_char, qa_f1, recall_at_n, PredictionRecord};
use tempres_core::rag::chunk::chunk_documents;
use tempres_core::rag::client::{GoldEchoClient, HashingEmbedder};
use tempres_core::rag::qa::TableResolver;
use tempres_core::rag::{build_prompt, chunk_document, run_qa, ChunkId, PromptFields, PromptVariant, QaRunConfig};
use tempres_core::rag::{Retrieval, VectorIndex};
use tempres_core::synth::{generate, run_bench_timed, SynthConfig};
use tempres_core::train::{run_continual, static_rankings, ContinualConfig, LossReading, TrainerConfig};
use tempres_core::{Embedding, Phase};

const CONSTRAINT_GRAPHS: usize = 1000;
const CONSTRAINT_SECS: f64 = 10.0;
const ORACLE_CASES: usize = 400;
const ORACLE_MAX_EDGES: usize = 10;
const GRADIENT_BATCHES: usize = 40;
const MEAN_TOLERANCE: f64 = 1e-12;
const MIN_GAIN_PP: f64 = 5.0;
const BENCH_SECS: f64 = 60.0;
const METRIC_TOLERANCE: f64 = 1e-9;
const RECALL_TRIALS: usize = 1000;
const RETRIEVAL_INDICES: usize = 100;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn constraint_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut failures = 0;
    for _ in 0..CONSTRAINT_GRAPHS {
        let g = support::random_graph(&mut rng, 5..=50, 150);
        let graph = g.build();
        let clustering = prune_and_cluster(&graph, g.lambda);
        if !support::violations(&g, &graph, &clustering).is_empty() {
            failures += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("{CONSTRAINT_GRAPHS} graphs, {failures} violating, {secs:.2}s");
    if failures == 0 && secs < CONSTRAINT_SECS {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn oracle_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    for _ in 0..ORACLE_CASES {
        let g = support::random_graph(&mut rng, 2..=12, ORACLE_MAX_EDGES);
        let graph = g.build();
        let clustering = prune_and_cluster(&graph, g.lambda);
        if support::library_clusters(&graph, &clustering) != support::literal_clusters(&g) {
            mismatches += 1;
        }
    }
    let detail = format!("{ORACLE_CASES} graphs with at most {ORACLE_MAX_EDGES} edges, {mismatches} mismatches");
    if mismatches == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_check() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for i in 0..GRADIENT_BATCHES {
        let case = support::gradient::random_case(&mut rng);
        let reading = if i % 4 == 3 {
            LossReading::Weight
        } else {
            LossReading::Affinity
        };
        worst = worst.max(support::gradient::max_relative_error(&case, reading));
    }
    let detail = format!(
        "{GRADIENT_BATCHES} batches, h = {:e}, max relative error {worst:.2e} (limit {:e})",
        support::gradient::H,
        support::gradient::MAX_REL_ERR
    );
    if worst < support::gradient::MAX_REL_ERR {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn alpha_endpoints() -> Check {
    let config = SynthConfig {
        entities: 8,
        mentions_per_segment: 30,
        ..Default::default()
    };
    let mut ranking_mismatches = 0;
    let mut compared = 0;
    for seed in 0..3 {
        let d = generate(&config, seed).map_err(|e| e.to_string())?;
        let ids: Vec<String> = d.catalog.ids().map(str::to_string).collect();
        let cc = ContinualConfig {
            trainer: TrainerConfig {
                alpha: 1.0,
                seed,
                learning_rate: 0.05,
                epochs: 2,
                ..Default::default()
            },
            ..Default::default()
        };
        let run = run_continual(&d.corpus, &ids, d.params.clone(), &cc).map_err(|e| e.to_string())?;
        for seg in run.segments.iter().filter(|s| s.segment.phase == Phase::Test) {
            let mentions: Vec<String> = d
                .corpus
                .mentions_in(&seg.segment.label)
                .map(|m| m.mention_id.clone())
                .collect();
            let fixed = static_rankings(&run.params, &ids, &mentions, ids.len()).map_err(|e| e.to_string())?;
            for (m, want) in mentions.iter().zip(fixed) {
                let got: Vec<String> = rank_candidates(run.params.mention(m).unwrap(), &seg.state, ids.len())
                    .map_err(|e| e.to_string())?
                    .into_iter()
                    .map(|(id, _)| id)
                    .collect();
                compared += 1;
                if got != want {
                    ranking_mismatches += 1;
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let dim = rng.random_range(1..=12);
        let n = rng.random_range(1..=40);
        let mut draw = || Embedding::new((0..dim).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap();
        let entity = draw();
        let members: Vec<Embedding> = (0..n).map(|_| draw()).collect();
        let refs: Vec<&Embedding> = members.iter().collect();
        let rep = cluster_representation(&entity, &refs, 0.0).map_err(|e| e.to_string())?;
        for d in 0..dim {
            let mean = members.iter().map(|m| m.as_slice()[d]).sum::<f64>() / n as f64;
            worst = worst.max((rep.as_slice()[d] - mean).abs());
        }
    }
    let detail = format!(
        "alpha=1: {ranking_mismatches}/{compared} rankings differ from static; alpha=0: max deviation from mean {worst:.1e}"
    );
    if ranking_mismatches == 0 && compared > 0 && worst <= MEAN_TOLERANCE {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn synthetic_benchmark() -> Check {
    let (report, secs) = run_bench_timed(&SynthConfig::default()).map_err(|e| e.to_string())?;
    let bins: Vec<String> = report
        .bins
        .iter()
        .map(|b| b.accuracy.map_or("-".into(), |a| format!("{a:.1}")))
        .collect();
    let detail = format!(
        "{} seeds, adaptive {:.2}% vs static {:.2}%, gain {:.2}pp (need {MIN_GAIN_PP}), bins [{}], {secs:.1}s",
        report.seeds.len(),
        report.mean_adaptive,
        report.mean_static,
        report.gain,
        bins.join(", ")
    );
    if report.gain >= MIN_GAIN_PP && report.bins_non_decreasing() && secs < BENCH_SECS {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn metric_exactness() -> Check {
    let jac = jaccard_char("Barca", "FC Barcelona").map_err(|e| e.to_string())?;
    let f1 = qa_f1("Rosario, Argentina", "Lionel Messi was born in Rosario, Argentina.");
    let precision = 1.0;
    let recall = 2.0 / 7.0;
    let want_f1 = 2.0 * precision * recall / (precision + recall);

    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let ns: Vec<usize> = (1..=40).collect();
    let mut violations = 0;
    for _ in 0..RECALL_TRIALS {
        let entities: Vec<String> = (0..rng.random_range(1..30)).map(|i| format!("E{i}")).collect();
        let records: Vec<PredictionRecord> = (0..rng.random_range(1..40))
            .map(|i| {
                let mut ranked = entities.clone();
                for j in (1..ranked.len()).rev() {
                    ranked.swap(j, rng.random_range(0..=j));
                }
                ranked.truncate(rng.random_range(1..=entities.len()));
                PredictionRecord {
                    mention_id: format!("m{i}"),
                    segment: "s".into(),
                    surface: "x".into(),
                    gold: Some(entities[rng.random_range(0..entities.len())].clone()),
                    prediction: ranked[0].clone(),
                    ranked,
                    jaccard: None,
                    fallback: false,
                }
            })
            .collect();
        if recall_at_n(&records, &ns).windows(2).any(|w| w[0].1 > w[1].1) {
            violations += 1;
        }
    }
    let detail =
        format!("jaccard {jac:.10}, f1 {f1:.10}, recall@n monotonicity violations {violations}/{RECALL_TRIALS}");
    if (jac - 4.0 / 9.0).abs() <= METRIC_TOLERANCE && (f1 - want_f1).abs() <= METRIC_TOLERANCE && violations == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

const TABLE_LLM: &str = "Given a question, please provide a short answer.\nQuestion: {question}\nAnswer:";
const TABLE_LLM_ER: &str = "The mention {mention} may also be referred to as {entity}. Given a question, please provide a short answer.\nQuestion: {question}\nAnswer:";
const TABLE_RALM: &str =
    "Context: {context}\nGiven a question, please provide a short answer.\nQuestion: {question}\nAnswer:";
const TABLE_RALM_COT: &str = "Context: {context}\nQuestion: {question} {mention} is";
const TABLE_RALM_ER: &str = "Context: {context}\nThe mention {mention} may also be referred to as {entity}. Given a question, please provide a short answer.\nQuestion: {question}\nAnswer:";

fn fill(template: &str, question: &str, mention: &str, entity: &str, context: &str) -> String {
    template
        .replace("{question}", question)
        .replace("{mention}", mention)
        .replace("{entity}", entity)
        .replace("{context}", context)
}

fn rag_plumbing() -> Check {
    let mut problems = Vec::new();

    let text = "x".repeat(3000);
    let ranges: Vec<(usize, usize)> = chunk_document("d", &text, 1500, 10)
        .map_err(|e| e.to_string())?
        .iter()
        .map(|c| (c.start, c.end))
        .collect();
    if ranges != [(0, 1500), (1490, 2990), (2980, 3000)] {
        problems.push(format!("stride ranges {ranges:?}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut scan_mismatches = 0;
    for _ in 0..RETRIEVAL_INDICES {
        let dim = rng.random_range(1..=16);
        let n = rng.random_range(1..=200);
        let entries: Vec<(ChunkId, Embedding)> = (0..n)
            .map(|i| {
                let v = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                (
                    ChunkId {
                        doc_id: format!("doc{}", i % 7),
                        index: i,
                    },
                    Embedding::new(v).unwrap(),
                )
            })
            .collect();
        let index = VectorIndex::build(entries.clone()).map_err(|e| e.to_string())?;
        let q = Embedding::new((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let k = rng.random_range(1..=n);
        let mut scan: Vec<(ChunkId, f64)> = entries.iter().map(|(id, v)| (id.clone(), q.dot(v).unwrap())).collect();
        scan.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        scan.truncate(k);
        if index.retrieve(&q, k).map_err(|e| e.to_string())? != scan {
            scan_mismatches += 1;
        }
    }
    if scan_mismatches > 0 {
        problems.push(format!("{scan_mismatches} retrievals differ from a full scan"));
    }

    let (q, m, e, c) = (
        "Where was La Pulga born?",
        "La Pulga",
        "Lionel_Messi",
        "Messi was born in Rosario.",
    );
    let fields = PromptFields {
        question: q,
        mention: Some(m),
        entity: Some(e),
        context: Some(c),
    };
    let tables = [
        (PromptVariant::Llm, TABLE_LLM),
        (PromptVariant::LlmEr, TABLE_LLM_ER),
        (PromptVariant::Ralm, TABLE_RALM),
        (PromptVariant::RalmCot, TABLE_RALM_COT),
        (PromptVariant::RalmEr, TABLE_RALM_ER),
    ];
    for (variant, table) in tables {
        let built = build_prompt(variant, &fields).map_err(|e| e.to_string())?;
        if variant.template() != table || built != fill(table, q, m, e, c) {
            problems.push(format!("{variant} prompt differs from the stored template"));
        }
    }

    let docs = [
        (
            "d1",
            "Lionel Messi was born in Rosario, Argentina. He plays for Inter Miami.",
        ),
        (
            "d2",
            "Manchester United play at Old Trafford. Fans call them the Red Devils.",
        ),
    ];
    let pair = |id: &str, q: &str, m: &str, e: &str, a: &str, d: &str| QaPair {
        qa_id: id.into(),
        question: q.into(),
        mention: m.into(),
        gold_entity: e.into(),
        answer: a.into(),
        segment: "0506".into(),
        evidence_doc: Some(d.into()),
    };
    let pairs = vec![
        pair(
            "q1",
            "Where was La Pulga born?",
            "La Pulga",
            "Lionel_Messi",
            "Rosario, Argentina.",
            "d1",
        ),
        pair(
            "q2",
            "Where do the Red Devils play?",
            "the Red Devils",
            "Manchester_United",
            "Old Trafford.",
            "d2",
        ),
    ];
    let chunks = chunk_documents(docs.iter().copied(), 40, 10).map_err(|e| e.to_string())?;
    let embedder = HashingEmbedder::new(256).map_err(|e| e.to_string())?;
    let retrieval = Retrieval::build(chunks, &embedder).map_err(|e| e.to_string())?;
    let resolver = TableResolver(pairs.iter().map(|p| (p.qa_id.clone(), p.gold_entity.clone())).collect());
    let client = GoldEchoClient::new(&pairs);
    let mut means = Vec::new();
    for v in PromptVariant::ALL {
        let out = run_qa(
            &pairs,
            v,
            &client,
            Some(&retrieval),
            Some(&resolver),
            &QaRunConfig::default(),
        )
        .map_err(|e| e.to_string())?;
        let mean = out.iter().map(|p| p.f1).sum::<f64>() / out.len() as f64;
        if mean != 1.0 {
            problems.push(format!("{v} gold-echo mean F1 {mean}"));
        }
        means.push(mean);
    }

    let detail = format!("stride ranges, {RETRIEVAL_INDICES} brute-force scans, 5 templates, gold-echo F1 {means:?}");
    if problems.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}: {}", problems.join("; ")))
    }
}

fn link_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(env!("CARGO_BIN_EXE_tempres"))
            .args(args)
            .current_dir(dir.path())
            .output()
            .map_err(|e| e.to_string())?;
        if out.status.success() {
            Ok(())
        } else {
            Err(String::from_utf8_lossy(&out.stderr).into_owned())
        }
    };
    run(&[
        "synth-bench",
        "--seed",
        "3",
        "--seeds",
        "1",
        "--out",
        "bench",
        "--export",
        "data",
    ])?;
    run(&["link", "--config", "data/run.toml", "--seed", "5", "--out", "first"])?;
    run(&["link", "--config", "data/run.toml", "--seed", "5", "--out", "second"])?;
    let a = fs::read(dir.path().join("first/predictions.jsonl")).map_err(|e| e.to_string())?;
    let b = fs::read(dir.path().join("second/predictions.jsonl")).map_err(|e| e.to_string())?;
    let detail = format!("two link runs, {} and {} bytes of predictions", a.len(), b.len());
    if a == b && !a.is_empty() {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() -> ExitCode {
    let checks: [Criterion; 8] = [
        ("constraint suite", constraint_suite),
        ("oracle equivalence", oracle_equivalence),
        ("gradient check", gradient_check),
        ("alpha endpoints", alpha_endpoints),
        ("synthetic drift benchmark", synthetic_benchmark),
        ("metric exactness", metric_exactness),
        ("rag plumbing", rag_plumbing),
        ("link determinism", link_determinism),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
