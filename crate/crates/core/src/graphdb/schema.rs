use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DbError, MetaValue, NodeFeature, Record, Sample};

/// Index reserved for categorical values absent from a vocabulary.
pub const OOV: usize = 0;

const DATE_FORMAT: &str = "%Y-%m-%d";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetaMode {
    Single,
    Multiset,
}

/// Zero-mean / unit-variance transform. A degenerate spread maps to std 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    pub const IDENTITY: Standardizer = Standardizer { mean: 0.0, std: 1.0 };

    pub fn fit(values: impl IntoIterator<Item = f64>) -> Self {
        let mut n = 0usize;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for v in values {
            n += 1;
            sum += v;
            sq += v * v;
        }
        if n == 0 {
            return Self::IDENTITY;
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        let std = var.sqrt();
        Standardizer {
            mean,
            std: if std > 1e-12 { std } else { 1.0 },
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeSchema {
    /// Categorical labels, ids in first-seen order starting at 1 (0 is [`OOV`]).
    Labels { vocab: Vec<String> },
    Attrs { dim: usize, stats: Vec<Standardizer> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    /// `log_scale` fields go through `signed_log1p` before standardizing.
    Numeric { stats: Standardizer, log_scale: bool },
    Flag(Standardizer),
    /// `YYYY-MM-DD`; the standardizer acts on days since 1970-01-01.
    Date(Standardizer),
    Categorical { vocab: Vec<String> },
}

impl FieldKind {
    fn infer(v: &MetaValue) -> FieldKind {
        match v {
            MetaValue::Bool(_) => FieldKind::Flag(Standardizer::IDENTITY),
            MetaValue::Num(_) => FieldKind::Numeric {
                stats: Standardizer::IDENTITY,
                log_scale: false,
            },
            MetaValue::Str(s) if parse_date(s).is_some() => {
                FieldKind::Date(Standardizer::IDENTITY)
            }
            MetaValue::Str(_) => FieldKind::Categorical { vocab: Vec::new() },
        }
    }

    /// `None` when `v` fits this kind, otherwise the expected kind name.
    pub fn accepts(&self, v: &MetaValue) -> Option<&'static str> {
        match (self, v) {
            (FieldKind::Numeric { .. }, MetaValue::Num(_)) => None,
            (FieldKind::Flag(_), MetaValue::Bool(_)) => None,
            (FieldKind::Date(_), MetaValue::Str(s)) if parse_date(s).is_some() => None,
            (FieldKind::Categorical { .. }, MetaValue::Str(_)) => None,
            (FieldKind::Numeric { .. }, _) => Some("numeric"),
            (FieldKind::Flag(_), _) => Some("boolean"),
            (FieldKind::Date(_), _) => Some("date YYYY-MM-DD"),
            (FieldKind::Categorical { .. }, _) => Some("string"),
        }
    }

    fn same_variant(&self, other: &FieldKind) -> bool {
        std::mem::discriminant(self) == std::mem::discriminant(other)
    }

    /// Width of the dense encoding contributed by this field.
    fn dense_width(&self) -> usize {
        match self {
            FieldKind::Numeric { .. } | FieldKind::Flag(_) => 1,
            FieldKind::Date(_) => 8,
            FieldKind::Categorical { .. } => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSchema {
    pub name: String,
    pub kind: FieldKind,
}

/// Day difference `fields[to] - fields[from]` between two date fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapStats {
    pub from: usize,
    pub to: usize,
    pub stats: Standardizer,
}

/// Vocabularies, dimensions and standardization statistics of a database.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub nodes: NodeSchema,
    pub edge_dim: usize,
    /// Per-dimension stats of `signed_log1p(edge attr)`.
    pub edge_stats: Vec<Standardizer>,
    pub meta_mode: MetaMode,
    pub fields: Vec<FieldSchema>,
    pub gaps: Vec<GapStats>,
}

pub fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s, DATE_FORMAT).ok()
}

pub fn date_to_days(d: NaiveDate) -> i64 {
    (d - NaiveDate::from_ymd_opt(1970, 1, 1).unwrap()).num_days()
}

pub fn days_to_date(days: i64) -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).unwrap() + chrono::Duration::days(days)
}

pub fn signed_log1p(x: f64) -> f64 {
    x.signum() * x.abs().ln_1p()
}

/// Skewness above which a non-negative numeric field is treated as a
/// magnitude (amounts, durations) and log-scaled.
pub const LOG_SKEW_THRESHOLD: f64 = 2.0;

fn is_heavy_tailed(values: &[f64]) -> bool {
    if values.len() < 3 || values.iter().any(|&x| x < 0.0) {
        return false;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if m2 <= 1e-24 {
        return false;
    }
    let m3 = values.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5) > LOG_SKEW_THRESHOLD
}

fn field_days(rec: &Record, name: &str) -> Option<i64> {
    match rec.get(name) {
        Some(MetaValue::Str(s)) => parse_date(s).map(date_to_days),
        _ => None,
    }
}

fn push_vocab(vocab: &mut Vec<String>, value: &str) {
    if !vocab.iter().any(|v| v == value) {
        vocab.push(value.to_string());
    }
}

impl Schema {
    /// Derives the schema from `samples`. Structure comes from the first sample;
    /// vocabularies extend `base` (if any) in first-seen order.
    pub fn infer(samples: &[Sample], base: Option<&Schema>) -> Result<Schema, DbError> {
        let first = samples.first().ok_or(DbError::Empty)?;
        let first_node = first.graph.nodes.first().ok_or(DbError::Invalid {
            line: 1,
            detail: "graph has no nodes".into(),
        })?;

        let nodes = match &first_node.feature {
            NodeFeature::Label { .. } => {
                let mut vocab = match base.map(|b| &b.nodes) {
                    Some(NodeSchema::Labels { vocab }) => vocab.clone(),
                    _ => Vec::new(),
                };
                for s in samples {
                    for n in &s.graph.nodes {
                        if let Some(l) = n.label() {
                            push_vocab(&mut vocab, l);
                        }
                    }
                }
                NodeSchema::Labels { vocab }
            }
            NodeFeature::Attrs { attrs } => {
                let dim = attrs.len();
                let stats = (0..dim)
                    .map(|j| {
                        Standardizer::fit(samples.iter().flat_map(|s| {
                            s.graph.nodes.iter().filter_map(move |n| match &n.feature {
                                NodeFeature::Attrs { attrs } if attrs.len() == dim => {
                                    Some(attrs[j])
                                }
                                _ => None,
                            })
                        }))
                    })
                    .collect();
                NodeSchema::Attrs { dim, stats }
            }
        };

        let edge_dim = samples
            .iter()
            .flat_map(|s| s.graph.edges.first())
            .map(|e| e.attrs.len())
            .next()
            .or_else(|| base.map(|b| b.edge_dim))
            .unwrap_or(0);
        let edge_stats = (0..edge_dim)
            .map(|j| {
                Standardizer::fit(samples.iter().flat_map(|s| {
                    s.graph
                        .edges
                        .iter()
                        .filter(|e| e.attrs.len() == edge_dim)
                        .map(move |e| signed_log1p(e.attrs[j]))
                }))
            })
            .collect();

        let meta_mode = first.meta.mode();
        let first_rec = first.meta.records().first().ok_or(DbError::Invalid {
            line: 1,
            detail: "metadata record multiset is empty".into(),
        })?;
        let mut fields: Vec<FieldSchema> = first_rec
            .iter()
            .map(|(name, v)| FieldSchema {
                name: name.clone(),
                kind: FieldKind::infer(v),
            })
            .collect();

        let all_records = || samples.iter().flat_map(|s| s.meta.records().iter());
        for field in &mut fields {
            let name = field.name.as_str();
            match &mut field.kind {
                FieldKind::Numeric { stats, log_scale } => {
                    let values: Vec<f64> = all_records()
                        .filter_map(|r| match r.get(name) {
                            Some(MetaValue::Num(x)) if x.is_finite() => Some(*x),
                            _ => None,
                        })
                        .collect();
                    *log_scale = is_heavy_tailed(&values);
                    let t = |x: f64| if *log_scale { signed_log1p(x) } else { x };
                    *stats = Standardizer::fit(values.iter().map(|&x| t(x)));
                }
                FieldKind::Flag(st) => {
                    *st = Standardizer::fit(all_records().filter_map(|r| match r.get(name) {
                        Some(MetaValue::Bool(b)) => Some(if *b { 1.0 } else { 0.0 }),
                        _ => None,
                    }));
                }
                FieldKind::Date(st) => {
                    *st = Standardizer::fit(
                        all_records().filter_map(|r| field_days(r, name).map(|d| d as f64)),
                    );
                }
                FieldKind::Categorical { vocab } => {
                    if let Some(b) = base {
                        if let Some(FieldSchema {
                            kind: FieldKind::Categorical { vocab: bv },
                            ..
                        }) = b.fields.iter().find(|f| f.name == name)
                        {
                            vocab.clone_from(bv);
                        }
                    }
                    for r in all_records() {
                        if let Some(MetaValue::Str(s)) = r.get(name) {
                            push_vocab(vocab, s);
                        }
                    }
                }
            }
        }

        let date_idx: Vec<usize> = fields
            .iter()
            .enumerate()
            .filter(|(_, f)| matches!(f.kind, FieldKind::Date(_)))
            .map(|(i, _)| i)
            .collect();
        let mut gaps = Vec::new();
        for (a, &from) in date_idx.iter().enumerate() {
            for &to in &date_idx[a + 1..] {
                let (nf, nt) = (&fields[from].name, &fields[to].name);
                let stats = Standardizer::fit(all_records().filter_map(|r| {
                    Some((field_days(r, nt)? - field_days(r, nf)?) as f64)
                }));
                gaps.push(GapStats { from, to, stats });
            }
        }

        Ok(Schema {
            nodes,
            edge_dim,
            edge_stats,
            meta_mode,
            fields,
            gaps,
        })
    }

    pub fn label_vocab(&self) -> Option<&[String]> {
        match &self.nodes {
            NodeSchema::Labels { vocab } => Some(vocab),
            NodeSchema::Attrs { .. } => None,
        }
    }

    /// Index into the node embedding table; unknown labels map to [`OOV`].
    pub fn label_index(&self, label: &str) -> usize {
        match &self.nodes {
            NodeSchema::Labels { vocab } => vocab
                .iter()
                .position(|v| v == label)
                .map_or(OOV, |i| i + 1),
            NodeSchema::Attrs { .. } => OOV,
        }
    }

    /// Rows of the node embedding table (vocabulary plus OOV).
    pub fn node_table_rows(&self) -> usize {
        match &self.nodes {
            NodeSchema::Labels { vocab } => vocab.len() + 1,
            NodeSchema::Attrs { .. } => 0,
        }
    }

    pub fn node_attr_dim(&self) -> Option<usize> {
        match &self.nodes {
            NodeSchema::Labels { .. } => None,
            NodeSchema::Attrs { dim, .. } => Some(*dim),
        }
    }

    pub fn encode_node_attrs(&self, attrs: &[f64]) -> Vec<f64> {
        match &self.nodes {
            NodeSchema::Attrs { stats, .. } => {
                attrs.iter().zip(stats).map(|(x, s)| s.apply(*x)).collect()
            }
            NodeSchema::Labels { .. } => attrs.to_vec(),
        }
    }

    /// `signed_log1p` then standardization, per dimension.
    pub fn encode_edge_attrs(&self, attrs: &[f64]) -> Vec<f64> {
        attrs
            .iter()
            .zip(&self.edge_stats)
            .map(|(x, s)| s.apply(signed_log1p(*x)))
            .collect()
    }

    pub fn dense_meta_dim(&self) -> usize {
        self.fields.iter().map(|f| f.kind.dense_width()).sum::<usize>() + self.gaps.len()
    }

    /// (field name, table rows incl. OOV) for each categorical field, in field order.
    pub fn categorical_fields(&self) -> Vec<(&str, usize)> {
        self.fields
            .iter()
            .filter_map(|f| match &f.kind {
                FieldKind::Categorical { vocab } => Some((f.name.as_str(), vocab.len() + 1)),
                _ => None,
            })
            .collect()
    }

    /// Dense block (standardized numerics, flags, dates with weekday one-hot, date gaps)
    /// and categorical ids of one metadata record.
    pub fn encode_record(&self, rec: &Record) -> (Vec<f64>, Vec<usize>) {
        let mut dense = Vec::with_capacity(self.dense_meta_dim());
        let mut cats = Vec::new();
        for f in &self.fields {
            let v = rec.get(&f.name);
            match &f.kind {
                FieldKind::Numeric { stats, log_scale } => {
                    let x = match v {
                        Some(MetaValue::Num(x)) if *log_scale => signed_log1p(*x),
                        Some(MetaValue::Num(x)) => *x,
                        _ => stats.mean,
                    };
                    dense.push(stats.apply(x));
                }
                FieldKind::Flag(st) => {
                    let x = match v {
                        Some(MetaValue::Bool(true)) => 1.0,
                        Some(MetaValue::Bool(false)) => 0.0,
                        _ => st.mean,
                    };
                    dense.push(st.apply(x));
                }
                FieldKind::Date(st) => {
                    let date = match v {
                        Some(MetaValue::Str(s)) => parse_date(s),
                        _ => None,
                    };
                    match date {
                        Some(d) => {
                            dense.push(st.apply(date_to_days(d) as f64));
                            let dow = d.weekday().num_days_from_monday() as usize;
                            dense.extend((0..7).map(|k| if k == dow { 1.0 } else { 0.0 }));
                        }
                        None => dense.extend(std::iter::repeat_n(0.0, 8)),
                    }
                }
                FieldKind::Categorical { vocab } => {
                    let idx = match v {
                        Some(MetaValue::Str(s)) => {
                            vocab.iter().position(|x| x == s).map(|i| i + 1)
                        }
                        _ => None,
                    };
                    if idx.is_none() {
                        log::debug!(
                            "unknown value {:?} for categorical field `{}`, using OOV",
                            v.map(|x| x.to_string()),
                            f.name
                        );
                    }
                    cats.push(idx.unwrap_or(OOV));
                }
            }
        }
        for g in &self.gaps {
            let gap = field_days(rec, &self.fields[g.to].name)
                .zip(field_days(rec, &self.fields[g.from].name))
                .map(|(t, f)| (t - f) as f64);
            dense.push(gap.map_or(0.0, |x| g.stats.apply(x)));
        }
        (dense, cats)
    }

    /// Structural compatibility: same node kind/dims, edge dim, metadata mode and fields.
    pub fn check_compatible(&self, other: &Schema) -> Result<(), String> {
        match (&self.nodes, &other.nodes) {
            (NodeSchema::Labels { .. }, NodeSchema::Labels { .. }) => {}
            (NodeSchema::Attrs { dim: a, .. }, NodeSchema::Attrs { dim: b, .. }) if a == b => {}
            _ => return Err("node features differ (labels vs attrs or dims)".into()),
        }
        if self.edge_dim != other.edge_dim {
            return Err(format!(
                "edge attr dim {} vs {}",
                self.edge_dim, other.edge_dim
            ));
        }
        if self.meta_mode != other.meta_mode {
            return Err("metadata mode differs".into());
        }
        if self.fields.len() != other.fields.len()
            || self
                .fields
                .iter()
                .zip(&other.fields)
                .any(|(a, b)| a.name != b.name || !a.kind.same_variant(&b.kind))
        {
            return Err("metadata fields differ".into());
        }
        Ok(())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn from_json(text: &str) -> Result<Schema, DbError> {
        serde_json::from_str(text).map_err(|e| DbError::SchemaFile(e.to_string()))
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("schema serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
