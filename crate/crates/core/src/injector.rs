//! Anomaly injection into a held-out half of a database, with an audit log
//! that can undo every mutation.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphdb::{
    date_to_days, days_to_date, parse_date, DbError, Database, Edge, EvalLabel, MetaMode, MetaValue,
    Node, NodeFeature, Sample, Schema,
};

pub const ENTRY_DATE: &str = "entry_date";
pub const EFFECTIVE_DATE: &str = "effective_date";
pub const START_TIME: &str = "start_time";
pub const DURATION: &str = "duration";

/// Entry dates up to this many days before the effective date are eligible for back-dating.
pub const MA1_WINDOW_DAYS: i64 = 3;
pub const MA1_SHIFTS: [i64; 3] = [7, 14, 21];
pub const MA3_EARLY: (f64, f64) = (1.0, 4.0);
pub const MA3_LATE: (f64, f64) = (23.0, 24.0);
pub const MA4_FACTOR: (f64, f64) = (5.0, 10.0);
pub const DEFAULT_RATE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum InjectError {
    #[error("{kind} needs {detail}")]
    Precondition { kind: AnomalyType, detail: String },
    #[error("not enough eligible samples for {kind}: need {needed}, found {found}")]
    Shortfall {
        kind: String,
        needed: usize,
        found: usize,
    },
    #[error("invalid injection spec: {0}")]
    Spec(String),
    #[error("audit log does not match the data: {0}")]
    Audit(String),
    #[error(transparent)]
    Db(#[from] DbError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AnomalyType {
    GA1,
    GA2,
    MA1,
    MA2,
    MA3,
    MA4,
}

impl AnomalyType {
    pub fn is_graph(self) -> bool {
        matches!(self, AnomalyType::GA1 | AnomalyType::GA2)
    }
}

impl fmt::Display for AnomalyType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for AnomalyType {
    type Err = InjectError;
    fn from_str(s: &str) -> Result<Self, InjectError> {
        Ok(match s.trim().to_ascii_uppercase().as_str() {
            "GA1" => AnomalyType::GA1,
            "GA2" => AnomalyType::GA2,
            "MA1" => AnomalyType::MA1,
            "MA2" => AnomalyType::MA2,
            "MA3" => AnomalyType::MA3,
            "MA4" => AnomalyType::MA4,
            other => return Err(InjectError::Spec(format!("unknown anomaly type `{other}`"))),
        })
    }
}

/// A single type, or one graph and one metadata anomaly applied to the same sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InjectionKind {
    Single(AnomalyType),
    Potpourri(AnomalyType, AnomalyType),
}

impl InjectionKind {
    pub fn types(self) -> Vec<AnomalyType> {
        match self {
            InjectionKind::Single(t) => vec![t],
            InjectionKind::Potpourri(g, m) => vec![g, m],
        }
    }
}

impl fmt::Display for InjectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InjectionKind::Single(t) => write!(f, "{t}"),
            InjectionKind::Potpourri(g, m) => write!(f, "{g}+{m}"),
        }
    }
}

impl FromStr for InjectionKind {
    type Err = InjectError;
    fn from_str(s: &str) -> Result<Self, InjectError> {
        match s.split_once('+') {
            None => Ok(InjectionKind::Single(s.parse()?)),
            Some((a, b)) => {
                let (a, b): (AnomalyType, AnomalyType) = (a.parse()?, b.parse()?);
                let (g, m) = if a.is_graph() { (a, b) } else { (b, a) };
                if !g.is_graph() || m.is_graph() {
                    return Err(InjectError::Spec(format!(
                        "a combined anomaly pairs one graph and one metadata type, got `{s}`"
                    )));
                }
                Ok(InjectionKind::Potpourri(g, m))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InjectionSpec {
    pub kinds: Vec<InjectionKind>,
    pub rate: f64,
    pub seed: u64,
}

impl InjectionSpec {
    /// `types` is a comma-separated list; `GA1+MA1` denotes a combined anomaly.
    pub fn parse(types: &str, rate: f64, seed: u64) -> Result<Self, InjectError> {
        let kinds = types
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>, _>>()?;
        let spec = InjectionSpec { kinds, rate, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), InjectError> {
        if self.kinds.is_empty() {
            return Err(InjectError::Spec("no anomaly types given".into()));
        }
        if !(self.rate > 0.0 && self.rate <= 0.5) {
            return Err(InjectError::Spec(format!("rate {} outside (0, 0.5]", self.rate)));
        }
        Ok(())
    }
}

/// One reversible change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Mutation {
    NodeFeature {
        node: usize,
        old: NodeFeature,
        new: NodeFeature,
    },
    /// Edge `edge_index` removed, node `new_node` appended, two edges appended.
    Rewire {
        edge_index: usize,
        edge: Edge,
        new_node: Node,
    },
    MetaField {
        record: usize,
        field: String,
        old: MetaValue,
        new: MetaValue,
    },
    /// `first` (at `first_pos`) replaced by the merged sample; `second` removed from `second_pos`.
    Merge {
        first_pos: usize,
        second_pos: usize,
        first: Box<Sample>,
        second: Box<Sample>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub sample_id: String,
    pub original_id: String,
    pub kind: String,
    pub mutations: Vec<Mutation>,
}

fn precondition(kind: AnomalyType, detail: &str) -> InjectError {
    InjectError::Precondition {
        kind,
        detail: detail.into(),
    }
}

/// Replaces one node's label by a different vocabulary label.
pub fn inject_ga1<R: Rng>(s: &mut Sample, vocab: &[String], rng: &mut R) -> Result<Mutation, InjectError> {
    if vocab.len() < 2 {
        return Err(precondition(AnomalyType::GA1, "a label vocabulary of at least 2"));
    }
    if s.graph.nodes.is_empty() {
        return Err(precondition(AnomalyType::GA1, "at least one node"));
    }
    let i = rng.random_range(0..s.graph.nodes.len());
    let node = &mut s.graph.nodes[i];
    let old = node.feature.clone();
    let current = node.label().map(str::to_string);
    let choices: Vec<&String> = vocab.iter().filter(|l| Some(l.as_str()) != current.as_deref()).collect();
    let new = NodeFeature::Label {
        label: choices[rng.random_range(0..choices.len())].clone(),
    };
    node.feature = new.clone();
    Ok(Mutation::NodeFeature {
        node: node.id,
        old,
        new,
    })
}

/// Reroutes one non-loop edge `u -> v` through a new node `z`.
pub fn inject_ga2<R: Rng>(s: &mut Sample, vocab: Option<&[String]>, rng: &mut R) -> Result<Mutation, InjectError> {
    let candidates: Vec<usize> = (0..s.graph.edges.len()).filter(|&i| !s.graph.edges[i].is_loop()).collect();
    if candidates.is_empty() {
        return Err(precondition(AnomalyType::GA2, "at least one non-loop edge"));
    }
    let edge_index = candidates[rng.random_range(0..candidates.len())];
    let z = s.graph.nodes.len();
    let feature = match vocab {
        Some(v) if !v.is_empty() => NodeFeature::Label {
            label: v[rng.random_range(0..v.len())].clone(),
        },
        _ => s.graph.nodes[rng.random_range(0..z)].feature.clone(),
    };
    let new_node = Node { id: z, feature };
    let edge = s.graph.edges.remove(edge_index);
    s.graph.nodes.push(new_node.clone());
    s.graph.edges.push(Edge::new(edge.src, z, edge.attrs.clone()));
    s.graph.edges.push(Edge::new(z, edge.dst, edge.attrs.clone()));
    Ok(Mutation::Rewire {
        edge_index,
        edge,
        new_node,
    })
}

fn date_field(s: &Sample, field: &str) -> Option<i64> {
    match s.meta.records().first()?.get(field)? {
        MetaValue::Str(d) => parse_date(d).map(date_to_days),
        _ => None,
    }
}

/// Entry date within the window before (or on) the effective date.
pub fn ma1_eligible(s: &Sample) -> bool {
    match (date_field(s, ENTRY_DATE), date_field(s, EFFECTIVE_DATE)) {
        (Some(entry), Some(eff)) => entry <= eff && entry >= eff - MA1_WINDOW_DAYS,
        _ => false,
    }
}

fn set_field(s: &mut Sample, record: usize, field: &str, new: MetaValue) -> Mutation {
    let rec = &mut s.meta.records_mut()[record];
    let old = rec.insert(field.to_string(), new.clone()).expect("field present");
    Mutation::MetaField {
        record,
        field: field.to_string(),
        old,
        new,
    }
}

/// Moves the entry date 7, 14 or 21 days after the effective date.
pub fn inject_ma1<R: Rng>(s: &mut Sample, rng: &mut R) -> Result<Mutation, InjectError> {
    if !ma1_eligible(s) {
        return Err(precondition(
            AnomalyType::MA1,
            "an entry date at most 3 days before the effective date",
        ));
    }
    let eff = date_field(s, EFFECTIVE_DATE).expect("eligible");
    let shift = MA1_SHIFTS[rng.random_range(0..MA1_SHIFTS.len())];
    let new = days_to_date(eff + shift).format("%Y-%m-%d").to_string();
    Ok(set_field(s, 0, ENTRY_DATE, MetaValue::Str(new)))
}

/// Graph union of `s1` and `s2` under `new_id`, each metadata field taken from
/// either sample by a fair coin.
pub fn inject_ma2<R: Rng>(s1: &Sample, s2: &Sample, new_id: String, rng: &mut R) -> Result<Sample, InjectError> {
    if s1.id == s2.id {
        return Err(precondition(AnomalyType::MA2, "two distinct samples"));
    }
    let (r1, r2) = match (&s1.meta, &s2.meta) {
        (crate::graphdb::Metadata::Single(a), crate::graphdb::Metadata::Single(b)) => (a, b),
        _ => return Err(precondition(AnomalyType::MA2, "single-record metadata")),
    };
    if r1.keys().ne(r2.keys()) {
        return Err(precondition(AnomalyType::MA2, "matching metadata fields"));
    }
    let offset = s1.graph.nodes.len();
    let mut graph = s1.graph.clone();
    graph.nodes.extend(s2.graph.nodes.iter().map(|n| Node {
        id: n.id + offset,
        feature: n.feature.clone(),
    }));
    graph.edges.extend(
        s2.graph
            .edges
            .iter()
            .map(|e| Edge::new(e.src + offset, e.dst + offset, e.attrs.clone())),
    );
    let meta = r1
        .iter()
        .map(|(k, v)| {
            let v = if rng.random_bool(0.5) { v.clone() } else { r2[k].clone() };
            (k.clone(), v)
        })
        .collect();
    Ok(Sample {
        id: new_id,
        graph,
        meta: crate::graphdb::Metadata::Single(meta),
        eval_label: None,
    })
}

fn trip_count(s: &Sample, field: &str) -> usize {
    s.meta
        .records()
        .iter()
        .filter(|r| matches!(r.get(field), Some(MetaValue::Num(_))))
        .count()
}

fn pick_trip<R: Rng>(s: &Sample, field: &str, kind: AnomalyType, rng: &mut R) -> Result<usize, InjectError> {
    let idx: Vec<usize> = (0..s.meta.records().len())
        .filter(|&i| matches!(s.meta.records()[i].get(field), Some(MetaValue::Num(_))))
        .collect();
    if idx.is_empty() {
        return Err(precondition(kind, "at least one trip record"));
    }
    Ok(idx[rng.random_range(0..idx.len())])
}

/// Moves one trip's start to the very early or very late window.
pub fn inject_ma3<R: Rng>(s: &mut Sample, rng: &mut R) -> Result<Mutation, InjectError> {
    let i = pick_trip(s, START_TIME, AnomalyType::MA3, rng)?;
    let (lo, hi) = if rng.random_bool(0.5) { MA3_EARLY } else { MA3_LATE };
    let t = rng.random_range(lo..=hi);
    Ok(set_field(s, i, START_TIME, MetaValue::Num(t)))
}

/// Stretches one trip's duration by a factor in `MA4_FACTOR`.
pub fn inject_ma4<R: Rng>(s: &mut Sample, rng: &mut R) -> Result<Mutation, InjectError> {
    let i = pick_trip(s, DURATION, AnomalyType::MA4, rng)?;
    let old = match s.meta.records()[i][DURATION] {
        MetaValue::Num(x) => x,
        _ => unreachable!("checked by pick_trip"),
    };
    let f = rng.random_range(MA4_FACTOR.0..=MA4_FACTOR.1);
    let new = if old > 0.0 { old * f } else { f };
    Ok(set_field(s, i, DURATION, MetaValue::Num(new)))
}

fn check_schema_support(kind: AnomalyType, schema: &Schema) -> Result<(), InjectError> {
    let has = |name: &str| schema.fields.iter().any(|f| f.name == name);
    match kind {
        AnomalyType::GA1 if schema.label_vocab().is_none_or(|v| v.len() < 2) => {
            Err(precondition(kind, "labelled nodes with at least 2 distinct labels"))
        }
        AnomalyType::MA1 | AnomalyType::MA2 if schema.meta_mode != MetaMode::Single => {
            Err(precondition(kind, "single-record (bookkeeping) metadata"))
        }
        AnomalyType::MA1 if !(has(ENTRY_DATE) && has(EFFECTIVE_DATE)) => {
            Err(precondition(kind, "`entry_date` and `effective_date` fields"))
        }
        AnomalyType::MA3 | AnomalyType::MA4 if schema.meta_mode != MetaMode::Multiset => {
            Err(precondition(kind, "multiset (trip) metadata"))
        }
        AnomalyType::MA3 if !has(START_TIME) => Err(precondition(kind, "a `start_time` field")),
        AnomalyType::MA4 if !has(DURATION) => Err(precondition(kind, "a `duration` field")),
        _ => Ok(()),
    }
}

fn eligible(kind: AnomalyType, s: &Sample) -> bool {
    match kind {
        AnomalyType::GA1 => !s.graph.nodes.is_empty(),
        AnomalyType::GA2 => s.graph.edges.iter().any(|e| !e.is_loop()),
        AnomalyType::MA1 => ma1_eligible(s),
        AnomalyType::MA2 => true,
        AnomalyType::MA3 => trip_count(s, START_TIME) > 0,
        AnomalyType::MA4 => trip_count(s, DURATION) > 0,
    }
}

/// Seeded half/half split; each half keeps database order and loses its labels.
pub fn split_half(db: &Database, seed: u64) -> (Vec<Sample>, Vec<Sample>) {
    let mut idx: Vec<usize> = (0..db.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let half = db.len() / 2;
    let mut train_idx = idx[..half].to_vec();
    let mut test_idx = idx[half..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let take = |ix: &[usize]| {
        ix.iter()
            .map(|&i| Sample {
                eval_label: None,
                ..db.samples[i].clone()
            })
            .collect::<Vec<_>>()
    };
    (take(&train_idx), take(&test_idx))
}

pub struct Benchmark {
    pub train: Database,
    pub test: Database,
    pub log: Vec<AuditEntry>,
}

/// Splits `db` in half and injects anomalies into `floor(rate * |test|)` test samples.
pub fn build_benchmark(db: &Database, spec: &InjectionSpec) -> Result<Benchmark, InjectError> {
    spec.validate()?;
    if db.len() < 4 {
        return Err(InjectError::Spec(format!("need at least 4 samples, got {}", db.len())));
    }
    for kind in &spec.kinds {
        for t in kind.types() {
            check_schema_support(t, &db.schema)?;
        }
    }
    let (train, mut test) = split_half(db, spec.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(1));
    let n_inject = (spec.rate * test.len() as f64).floor() as usize;

    // quotas per kind, remainder to the first kinds
    let k = spec.kinds.len();
    let quotas: Vec<usize> = (0..k).map(|i| n_inject / k + usize::from(i < n_inject % k)).collect();
    let mut order: Vec<usize> = (0..test.len()).collect();
    order.shuffle(&mut rng);
    let mut used = vec![false; test.len()];
    let mut targets: Vec<(usize, InjectionKind)> = Vec::with_capacity(n_inject);
    for (kind, &quota) in spec.kinds.iter().zip(&quotas) {
        let pool: Vec<usize> = order
            .iter()
            .copied()
            .filter(|&i| !used[i] && kind.types().iter().all(|&t| eligible(t, &test[i])))
            .take(quota)
            .collect();
        if pool.len() < quota {
            return Err(InjectError::Shortfall {
                kind: kind.to_string(),
                needed: quota,
                found: pool.len(),
            });
        }
        for &i in &pool {
            used[i] = true;
            targets.push((i, *kind));
        }
    }
    // merge partners come from the samples left untouched
    let n_merge = targets
        .iter()
        .filter(|(_, k)| k.types().contains(&AnomalyType::MA2))
        .count();
    let partners: Vec<usize> = order.iter().copied().filter(|&i| !used[i]).take(n_merge).collect();
    if partners.len() < n_merge {
        return Err(InjectError::Shortfall {
            kind: "MA2 partners".into(),
            needed: n_merge,
            found: partners.len(),
        });
    }
    let mut partners = partners.into_iter();
    let mut taken_ids: HashSet<String> = db.samples.iter().map(|s| s.id.clone()).collect();
    let vocab: Option<Vec<String>> = db.schema.label_vocab().map(<[String]>::to_vec);

    // Mutate in place first; merges are applied afterwards so positions stay valid.
    let mut log = Vec::with_capacity(targets.len());
    let mut merges = Vec::new();
    for &(i, kind) in &targets {
        let original_id = test[i].id.clone();
        let mut mutations = Vec::new();
        for t in kind.types() {
            let s = &mut test[i];
            let m = match t {
                AnomalyType::GA1 => inject_ga1(s, vocab.as_deref().unwrap_or(&[]), &mut rng)?,
                AnomalyType::GA2 => inject_ga2(s, vocab.as_deref(), &mut rng)?,
                AnomalyType::MA1 => inject_ma1(s, &mut rng)?,
                AnomalyType::MA3 => inject_ma3(s, &mut rng)?,
                AnomalyType::MA4 => inject_ma4(s, &mut rng)?,
                AnomalyType::MA2 => {
                    let p = partners.next().expect("partner reserved");
                    merges.push((log.len(), i, p));
                    continue;
                }
            };
            mutations.push(m);
        }
        log.push(AuditEntry {
            sample_id: original_id.clone(),
            original_id,
            kind: kind.to_string(),
            mutations,
        });
    }
    for &(entry, i, p) in &merges {
        let base = format!("{}+{}", test[i].id, test[p].id);
        let mut new_id = base.clone();
        let mut n = 1;
        while taken_ids.contains(&new_id) {
            new_id = format!("{base}#{n}");
            n += 1;
        }
        taken_ids.insert(new_id.clone());
        let merged = inject_ma2(&test[i], &test[p], new_id.clone(), &mut rng)?;
        log[entry].sample_id = new_id;
        log[entry].mutations.push(Mutation::Merge {
            first_pos: i,
            second_pos: p,
            first: Box::new(test[i].clone()),
            second: Box::new(test[p].clone()),
        });
        test[i] = merged;
    }
    // drop merge partners, highest position first
    let mut removed: Vec<usize> = merges.iter().map(|&(_, _, p)| p).collect();
    removed.sort_unstable_by(|a, b| b.cmp(a));
    let labels: Vec<Option<String>> = {
        let mut l = vec![None; test.len()];
        for (e, &(i, _)) in log.iter().zip(&targets) {
            l[i] = Some(e.kind.clone());
        }
        l
    };
    let mut labelled: Vec<Sample> = test
        .into_iter()
        .zip(labels)
        .map(|(mut s, l)| {
            s.eval_label = Some(match l {
                Some(kind) => EvalLabel { anomaly: kind },
                None => EvalLabel::normal(),
            });
            s
        })
        .collect();
    for p in removed {
        labelled.remove(p);
    }

    let train = Database::with_base_schema(train, &db.schema)?;
    let test = Database::with_base_schema(labelled, &db.schema)?;
    Ok(Benchmark { train, test, log })
}

/// Undoes every logged mutation and strips labels, recovering the clean test half.
pub fn revert(test: &[Sample], log: &[AuditEntry]) -> Result<Vec<Sample>, InjectError> {
    let mut samples: Vec<Sample> = test
        .iter()
        .map(|s| Sample {
            eval_label: None,
            ..s.clone()
        })
        .collect();
    // re-insert merge partners first (ascending position) so positions line up again
    let mut merges: Vec<(usize, usize, &Sample, &Sample, &str)> = log
        .iter()
        .flat_map(|e| {
            e.mutations.iter().filter_map(move |m| match m {
                Mutation::Merge {
                    first_pos,
                    second_pos,
                    first,
                    second,
                } => Some((*first_pos, *second_pos, &**first, &**second, e.sample_id.as_str())),
                _ => None,
            })
        })
        .collect();
    merges.sort_by_key(|m| m.1);
    for &(_, p, _, second, _) in &merges {
        if p > samples.len() {
            return Err(InjectError::Audit(format!("merge partner position {p} out of range")));
        }
        samples.insert(p, second.clone());
    }
    for &(i, _, first, _, merged_id) in &merges {
        if samples.get(i).map(|s| s.id.as_str()) != Some(merged_id) {
            return Err(InjectError::Audit(format!("merged sample `{merged_id}` not at {i}")));
        }
        samples[i] = first.clone();
    }
    for e in log {
        let s = samples
            .iter_mut()
            .find(|s| s.id == e.original_id)
            .ok_or_else(|| InjectError::Audit(format!("sample `{}` missing", e.original_id)))?;
        for m in e.mutations.iter().rev() {
            undo(s, m)?;
        }
    }
    Ok(samples)
}

fn undo(s: &mut Sample, m: &Mutation) -> Result<(), InjectError> {
    match m {
        Mutation::NodeFeature { node, old, .. } => {
            let n = s
                .graph
                .nodes
                .iter_mut()
                .find(|n| n.id == *node)
                .ok_or_else(|| InjectError::Audit(format!("node {node} missing in `{}`", s.id)))?;
            n.feature = old.clone();
        }
        Mutation::Rewire {
            edge_index, edge, ..
        } => {
            if s.graph.edges.len() < 2 || s.graph.nodes.is_empty() {
                return Err(InjectError::Audit(format!("rewired graph `{}` too small", s.id)));
            }
            s.graph.edges.truncate(s.graph.edges.len() - 2);
            s.graph.nodes.pop();
            s.graph.edges.insert(*edge_index, edge.clone());
        }
        Mutation::MetaField {
            record, field, old, ..
        } => {
            let rec = s
                .meta
                .records_mut()
                .get_mut(*record)
                .ok_or_else(|| InjectError::Audit(format!("record {record} missing in `{}`", s.id)))?;
            rec.insert(field.clone(), old.clone());
        }
        // merges are undone by `revert` before per-sample mutations
        Mutation::Merge { .. } => {}
    }
    Ok(())
}

pub fn log_to_jsonl(log: &[AuditEntry]) -> String {
    log.iter()
        .map(|e| serde_json::to_string(e).expect("audit entry serializes") + "\n")
        .collect()
}

pub fn log_from_jsonl(text: &str) -> Result<Vec<AuditEntry>, InjectError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| InjectError::Audit(format!("line {}: {e}", i + 1))))
        .collect()
}
