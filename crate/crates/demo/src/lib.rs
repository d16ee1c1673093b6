//! WebAssembly bindings for the single-page demo in `www/`.
//!
//! Every operation regenerates a small synthetic bookkeeping database from a
//! seed, so calls are independent and reproducible. Results come back as JSON
//! strings.

use adamm::baselines::{aggregate_inverse_rank, metadata_scores, wl_scores, DEFAULT_SUBSAMPLE, DEFAULT_TREES};
use adamm::graphdb::{generate_synthetic, NodeFeature, SynthKind};
use adamm::injector::{build_benchmark, Benchmark, InjectionSpec, Mutation, DEFAULT_RATE};
use adamm::metrics::{auprc, auroc};
use adamm::trainer::{rank_scores, score_samples, train, CentroidMode, ScoreRow};
use adamm::{Database, HpConfig, ModelConfig};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const MAX_SAMPLES: usize = 2000;
const TOP: usize = 15;

fn benchmark(types: &str, n: usize, seed: u64) -> Result<Benchmark, String> {
    if !(20..=MAX_SAMPLES).contains(&n) {
        return Err(format!("n must be between 20 and {MAX_SAMPLES}"));
    }
    let db = generate_synthetic(SynthKind::Bookkeeping, n, 2, seed).map_err(|e| e.to_string())?;
    let spec = InjectionSpec::parse(types, DEFAULT_RATE, seed).map_err(|e| e.to_string())?;
    build_benchmark(&db, &spec).map_err(|e| e.to_string())
}

fn labels(db: &Database) -> Vec<bool> {
    db.samples
        .iter()
        .map(|s| s.eval_label.as_ref().is_some_and(|l| l.is_anomalous()))
        .collect()
}

fn top_rows(db: &Database, rows: &[ScoreRow]) -> Value {
    rows.iter()
        .take(TOP)
        .map(|r| {
            let kind = db
                .samples
                .iter()
                .find(|s| s.id == r.sample_id)
                .and_then(|s| s.eval_label.as_ref())
                .map_or("normal", |l| l.anomaly.as_str());
            json!({ "rank": r.rank, "id": r.sample_id, "score": r.score, "label": kind })
        })
        .collect()
}

fn feature(f: &NodeFeature) -> String {
    match f {
        NodeFeature::Label { label } => label.clone(),
        NodeFeature::Attrs { attrs } => format!("{attrs:?}"),
    }
}

fn describe(m: &Mutation) -> String {
    match m {
        Mutation::NodeFeature { node, old, new } => format!("node {node}: {} -> {}", feature(old), feature(new)),
        Mutation::Rewire { edge, new_node, .. } => {
            format!("edge {}->{} rerouted through new node {}", edge.src, edge.dst, new_node.id)
        }
        Mutation::MetaField { field, old, new, .. } => format!("{field}: {old} -> {new}"),
        Mutation::Merge { first, second, .. } => format!("merged {} with {}", first.id, second.id),
    }
}

/// Split, inject and list what changed.
pub fn inject_report(types: &str, n: usize, seed: u64) -> Result<Value, String> {
    let b = benchmark(types, n, seed)?;
    let entries: Vec<Value> = b
        .log
        .iter()
        .map(|e| {
            json!({
                "id": e.sample_id,
                "kind": e.kind,
                "changes": e.mutations.iter().map(describe).collect::<Vec<_>>(),
            })
        })
        .collect();
    Ok(json!({ "train": b.train.len(), "test": b.test.len(), "injected": entries }))
}

/// WL graph scores, isolation-forest metadata scores and their inverse-rank sum.
pub fn baseline_report(types: &str, n: usize, seed: u64, wl_iter: usize) -> Result<Value, String> {
    let b = benchmark(types, n, seed)?;
    let y = labels(&b.test);
    let ids: Vec<String> = b.test.samples.iter().map(|s| s.id.clone()).collect();
    let wl = wl_scores(&b.test, wl_iter);
    let iforest = metadata_scores(&b.test, DEFAULT_TREES, DEFAULT_SUBSAMPLE, seed);
    let combined = aggregate_inverse_rank(&rank_scores(&ids, &wl), &rank_scores(&ids, &iforest))
        .map_err(|e| e.to_string())?;
    let by_id: std::collections::HashMap<&str, f64> =
        combined.iter().map(|r| (r.sample_id.as_str(), r.score)).collect();
    let comb_scores: Vec<f64> = ids.iter().map(|id| by_id[id.as_str()]).collect();
    let auc = |s: &[f64]| auroc(s, &y).map_err(|e| e.to_string());
    Ok(json!({
        "auroc": { "wl": auc(&wl)?, "iforest": auc(&iforest)?, "combined": auc(&comb_scores)? },
        "top": top_rows(&b.test, &combined),
    }))
}

/// Trains one small model on the clean half and scores the injected half.
pub fn train_report(types: &str, n: usize, seed: u64, epochs: usize, k: usize) -> Result<Value, String> {
    let b = benchmark(types, n, seed)?;
    let hp = HpConfig {
        k,
        lambda2: if k == 1 { 0.0 } else { 0.1 },
        epochs,
        batch_size: 64,
        seed,
        ..HpConfig::default()
    };
    let cfg = ModelConfig::uniform(16);
    let tm = train(&b.train, &cfg, &hp).map_err(|e| e.to_string())?;
    let scores = score_samples(&tm, &b.test, CentroidMode::Frozen).map_err(|e| e.to_string())?;
    let y = labels(&b.test);
    let ids: Vec<String> = b.test.samples.iter().map(|s| s.id.clone()).collect();
    Ok(json!({
        "auroc": auroc(&scores, &y).map_err(|e| e.to_string())?,
        "auprc": auprc(&scores, &y).map_err(|e| e.to_string())?,
        "criterion": tm.selection_score,
        "loss": tm.history.iter().map(|h| h.total).collect::<Vec<_>>(),
        "top": top_rows(&b.test, &rank_scores(&ids, &scores)),
    }))
}

fn to_js(r: Result<Value, String>) -> Result<String, JsValue> {
    r.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn inject(types: &str, n: usize, seed: u32) -> Result<String, JsValue> {
    to_js(inject_report(types, n, seed as u64))
}

#[wasm_bindgen]
pub fn baselines(types: &str, n: usize, seed: u32, wl_iter: usize) -> Result<String, JsValue> {
    to_js(baseline_report(types, n, seed as u64, wl_iter))
}

#[wasm_bindgen]
pub fn train_model(types: &str, n: usize, seed: u32, epochs: usize, k: usize) -> Result<String, JsValue> {
    to_js(train_report(types, n, seed as u64, epochs, k))
}
