#![allow(dead_code)]

use std::collections::BTreeMap;

use adamm::graphdb::{Edge, MetaValue, Metadata, MultiGraph, Node, Sample};
use adamm::model::{Batch, EncodedSample, Model};
use adamm::nnkernel::{Tape, Tensor};
use adamm::Database;
use rand::seq::SliceRandom;
use rand::Rng;

pub const LABELS: [&str; 4] = ["a", "b", "c", "d"];

/// Random labelled multi-graph with parallel edges, self-loops and 2-d edge attributes.
pub fn random_graph<R: Rng>(rng: &mut R) -> MultiGraph {
    let n = rng.random_range(1..=8);
    let nodes = (0..n)
        .map(|i| Node::labeled(i, LABELS[rng.random_range(0..LABELS.len())]))
        .collect();
    let m = rng.random_range(1..=14);
    let edges = (0..m)
        .map(|_| {
            let u = rng.random_range(0..n);
            let v = if rng.random_bool(0.15) { u } else { rng.random_range(0..n) };
            Edge::new(u, v, vec![rng.random_range(0.0..500.0), rng.random_range(-1.0..1.0)])
        })
        .collect();
    MultiGraph { nodes, edges }
}

pub fn record(pairs: &[(&str, MetaValue)]) -> BTreeMap<String, MetaValue> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

pub fn sample(id: String, graph: MultiGraph, amount: f64) -> Sample {
    Sample {
        id,
        graph,
        meta: Metadata::Single(record(&[("amount", MetaValue::Num(amount))])),
        eval_label: None,
    }
}

/// Relabels nodes by a random permutation and shuffles node and edge order.
pub fn permute<R: Rng>(g: &MultiGraph, rng: &mut R) -> MultiGraph {
    let n = g.nodes.len();
    let mut pi: Vec<usize> = (0..n).collect();
    pi.shuffle(rng);
    let mut nodes: Vec<Node> = g
        .nodes
        .iter()
        .map(|nd| Node {
            id: pi[nd.id],
            feature: nd.feature.clone(),
        })
        .collect();
    nodes.shuffle(rng);
    let mut edges: Vec<Edge> = g
        .edges
        .iter()
        .map(|e| Edge::new(pi[e.src], pi[e.dst], e.attrs.clone()))
        .collect();
    edges.shuffle(rng);
    MultiGraph { nodes, edges }
}

/// Reorders only the parallel edges within each node pair, keeping every
/// pair's first occurrence in place.
pub fn shuffle_parallel<R: Rng>(g: &MultiGraph, rng: &mut R) -> MultiGraph {
    let key = |e: &Edge| (e.src.min(e.dst), e.src.max(e.dst));
    let mut groups: BTreeMap<(usize, usize), Vec<Edge>> = BTreeMap::new();
    for e in &g.edges {
        groups.entry(key(e)).or_default().push(e.clone());
    }
    for v in groups.values_mut() {
        v.shuffle(rng);
    }
    let mut out = g.clone();
    for e in out.edges.iter_mut() {
        *e = groups.get_mut(&key(e)).unwrap().pop().unwrap();
    }
    out
}

/// Graph embeddings `Z_G`, one row per sample, computed in one batch.
pub fn graph_embeddings(model: &Model, samples: &[Sample]) -> Tensor {
    let enc: Vec<EncodedSample> = model.encode(samples);
    let refs: Vec<_> = enc.iter().collect();
    let batch = Batch::assemble(&refs, &model.schema);
    let mut t = Tape::new();
    let vars = model.params.bind(&mut t);
    let f = model.net.forward(&mut t, &vars, &batch).unwrap();
    t.value(f.zg).clone()
}

/// Metadata embeddings `Z_M` and joint embeddings `Z`.
pub fn meta_and_joint(model: &Model, samples: &[Sample]) -> (Tensor, Tensor) {
    let enc: Vec<EncodedSample> = model.encode(samples);
    let refs: Vec<_> = enc.iter().collect();
    let batch = Batch::assemble(&refs, &model.schema);
    let mut t = Tape::new();
    let vars = model.params.bind(&mut t);
    let f = model.net.forward(&mut t, &vars, &batch).unwrap();
    (t.value(f.zm.unwrap()).clone(), t.value(f.joint.z).clone())
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn labels_of(db: &Database) -> Vec<bool> {
    db.samples
        .iter()
        .map(|s| s.eval_label.as_ref().is_some_and(|l| l.is_anomalous()))
        .collect()
}

/// Pairwise AUROC, ties counted one half.
pub fn auroc_pairwise(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                den += 1.0;
                num += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
    }
    num / den
}

/// Trapezoid area under the ROC curve traced by sweeping every distinct threshold.
pub fn auroc_thresholds(scores: &[f64], labels: &[bool]) -> f64 {
    let p = labels.iter().filter(|&&l| l).count() as f64;
    let n = labels.len() as f64 - p;
    let mut th: Vec<f64> = scores.to_vec();
    th.sort_by(|a, b| b.total_cmp(a));
    th.dedup();
    let (mut area, mut prev) = (0.0, (0.0, 0.0));
    for t in th {
        let tp = scores.iter().zip(labels).filter(|(s, l)| **l && **s >= t).count() as f64;
        let fp = scores.iter().zip(labels).filter(|(s, l)| !**l && **s >= t).count() as f64;
        let cur = (fp / n, tp / p);
        area += (cur.0 - prev.0) * (cur.1 + prev.1) / 2.0;
        prev = cur;
    }
    area
}

/// Average precision: recall increments times precision over every distinct threshold.
pub fn auprc_thresholds(scores: &[f64], labels: &[bool]) -> f64 {
    let p = labels.iter().filter(|&&l| l).count() as f64;
    let mut th: Vec<f64> = scores.to_vec();
    th.sort_by(|a, b| b.total_cmp(a));
    th.dedup();
    let (mut ap, mut prev_recall) = (0.0, 0.0);
    for t in th {
        let sel = scores.iter().filter(|s| **s >= t).count() as f64;
        let tp = scores.iter().zip(labels).filter(|(s, l)| **l && **s >= t).count() as f64;
        let recall = tp / p;
        ap += (recall - prev_recall) * tp / sel;
        prev_recall = recall;
    }
    ap
}

/// Two-sided exact signed-rank p by listing all `2^n` sign patterns.
/// Works on doubled midranks so every comparison is integral.
pub fn wilcoxon_enumerated(diffs: &[f64]) -> (f64, f64) {
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let n = abs.len();
    let doubled: Vec<i64> = (0..n)
        .map(|i| {
            let less = abs.iter().filter(|&&a| a < abs[i]).count() as i64;
            let eq = abs.iter().filter(|&&a| a == abs[i]).count() as i64;
            2 * less + eq + 1
        })
        .collect();
    let total: i64 = doubled.iter().sum();
    let obs: i64 = doubled.iter().zip(diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    let dev = (2 * obs - total).abs();
    let mut hits = 0u64;
    for mask in 0u32..(1 << n) {
        let w: i64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| doubled[i]).sum();
        if (2 * w - total).abs() >= dev {
            hits += 1;
        }
    }
    (obs as f64 / 2.0, hits as f64 / (1u64 << n) as f64)
}
