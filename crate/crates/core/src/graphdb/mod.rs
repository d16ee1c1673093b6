//! Samples of (directed attributed multi-graph, metadata), their JSON-lines
//! file format, validation, and the synthetic database generators.

mod schema;
mod synth;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use schema::{
    date_to_days, days_to_date, parse_date, signed_log1p, FieldKind, FieldSchema, GapStats,
    MetaMode, NodeSchema, Schema, Standardizer, OOV,
};
pub use synth::{generate_synthetic, SynthKind, ACCOUNT_TYPES, POI_TYPES};

/// Either a categorical label or a real attribute vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodeFeature {
    Label { label: String },
    Attrs { attrs: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    #[serde(flatten)]
    pub feature: NodeFeature,
}

impl Node {
    pub fn labeled(id: usize, label: impl Into<String>) -> Self {
        Node {
            id,
            feature: NodeFeature::Label {
                label: label.into(),
            },
        }
    }

    pub fn with_attrs(id: usize, attrs: Vec<f64>) -> Self {
        Node {
            id,
            feature: NodeFeature::Attrs { attrs },
        }
    }

    pub fn label(&self) -> Option<&str> {
        match &self.feature {
            NodeFeature::Label { label } => Some(label),
            NodeFeature::Attrs { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub attrs: Vec<f64>,
}

impl Edge {
    pub fn new(src: usize, dst: usize, attrs: Vec<f64>) -> Self {
        Edge { src, dst, attrs }
    }

    pub fn is_loop(&self) -> bool {
        self.src == self.dst
    }
}

/// Directed attributed multi-graph. Self-loops and parallel edges are allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MultiGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

impl MultiGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Node feature for the node whose id is `id`.
    pub fn node(&self, id: usize) -> Option<&Node> {
        match self.nodes.get(id) {
            Some(n) if n.id == id => Some(n),
            _ => self.nodes.iter().find(|n| n.id == id),
        }
    }

    /// Nodes reordered so that `nodes[i].id == i`. Only meaningful on valid graphs.
    pub fn sort_nodes(&mut self) {
        self.nodes.sort_by_key(|n| n.id);
    }
}

/// A scalar metadata value as it appears in the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetaValue {
    Bool(bool),
    Num(f64),
    Str(String),
}

impl fmt::Display for MetaValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetaValue::Bool(b) => write!(f, "{b}"),
            MetaValue::Num(x) => write!(f, "{x}"),
            MetaValue::Str(s) => f.write_str(s),
        }
    }
}

pub type Record = BTreeMap<String, MetaValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Metadata {
    Multiset { records: Vec<Record> },
    Single(Record),
}

impl Metadata {
    pub fn records(&self) -> &[Record] {
        match self {
            Metadata::Multiset { records } => records,
            Metadata::Single(r) => std::slice::from_ref(r),
        }
    }

    pub fn records_mut(&mut self) -> &mut [Record] {
        match self {
            Metadata::Multiset { records } => records,
            Metadata::Single(r) => std::slice::from_mut(r),
        }
    }

    pub fn mode(&self) -> MetaMode {
        match self {
            Metadata::Multiset { .. } => MetaMode::Multiset,
            Metadata::Single(_) => MetaMode::Single,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalLabel {
    pub anomaly: String,
}

impl EvalLabel {
    pub const NORMAL: &'static str = "normal";

    pub fn normal() -> Self {
        EvalLabel {
            anomaly: Self::NORMAL.into(),
        }
    }

    pub fn is_anomalous(&self) -> bool {
        self.anomaly != Self::NORMAL
    }
}

/// One (graph, metadata) pair, the unit that gets scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    #[serde(flatten)]
    pub graph: MultiGraph,
    pub meta: Metadata,
    #[serde(default)]
    pub eval_label: Option<EvalLabel>,
}

impl Sample {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("sample serializes")
    }
}

/// A single invariant breach found by [`validate_sample`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyGraph,
    DuplicateNodeId { id: usize },
    NodeIdOutOfRange { id: usize, n_nodes: usize },
    DanglingEndpoint { edge: usize, node: usize, n_nodes: usize },
    NodeKind { node: usize },
    NodeAttrDim { node: usize, expected: usize, found: usize },
    EdgeAttrDim { edge: usize, expected: usize, found: usize },
    NonFiniteAttr { what: String },
    MetaMode { expected: MetaMode },
    EmptyRecords,
    MissingField { name: String },
    UnexpectedField { name: String },
    FieldKind { name: String, expected: &'static str },
    NonFiniteField { name: String },
}

impl Violation {
    /// True for breaches of the cross-sample schema rather than of the graph itself.
    pub fn is_schema_level(&self) -> bool {
        matches!(
            self,
            Violation::NodeKind { .. }
                | Violation::NodeAttrDim { .. }
                | Violation::EdgeAttrDim { .. }
                | Violation::MetaMode { .. }
                | Violation::MissingField { .. }
                | Violation::UnexpectedField { .. }
                | Violation::FieldKind { .. }
        )
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyGraph => write!(f, "graph has no nodes"),
            Violation::DuplicateNodeId { id } => write!(f, "duplicate node id {id}"),
            Violation::NodeIdOutOfRange { id, n_nodes } => {
                write!(f, "node id {id} outside 0..{n_nodes}")
            }
            Violation::DanglingEndpoint {
                edge,
                node,
                n_nodes,
            } => write!(
                f,
                "edge {edge} references node {node} but graph has {n_nodes} nodes"
            ),
            Violation::NodeKind { node } => {
                write!(f, "node {node} kind (label/attrs) differs from schema")
            }
            Violation::NodeAttrDim {
                node,
                expected,
                found,
            } => write!(f, "node {node} attr dim {found}, schema says {expected}"),
            Violation::EdgeAttrDim {
                edge,
                expected,
                found,
            } => write!(f, "edge {edge} attr dim {found}, schema says {expected}"),
            Violation::NonFiniteAttr { what } => write!(f, "non-finite value in {what}"),
            Violation::MetaMode { expected } => write!(f, "metadata mode differs, expected {expected:?}"),
            Violation::EmptyRecords => write!(f, "metadata record multiset is empty"),
            Violation::MissingField { name } => write!(f, "metadata field `{name}` missing"),
            Violation::UnexpectedField { name } => write!(f, "metadata field `{name}` not in schema"),
            Violation::FieldKind { name, expected } => {
                write!(f, "metadata field `{name}` should be {expected}")
            }
            Violation::NonFiniteField { name } => write!(f, "metadata field `{name}` is not finite"),
        }
    }
}

#[derive(Debug, Error)]
pub enum DbError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: parse error: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("database is empty")]
    Empty,
    #[error("line {line}: duplicate sample id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: edge {edge} endpoint {node} does not exist ({n_nodes} nodes)")]
    DanglingEndpoint {
        line: usize,
        edge: usize,
        node: usize,
        n_nodes: usize,
    },
    #[error("line {line}: schema mismatch: {detail}")]
    SchemaMismatch { line: usize, detail: String },
    #[error("line {line}: invalid sample: {detail}")]
    Invalid { line: usize, detail: String },
    #[error("schema file: {0}")]
    SchemaFile(String),
    #[error("generator: {0}")]
    Generator(String),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// Checks one sample against the schema. An empty result means it conforms.
pub fn validate_sample(s: &Sample, schema: &Schema) -> Vec<Violation> {
    let mut out = validate_graph(&s.graph);
    let g = &s.graph;

    for (i, node) in g.nodes.iter().enumerate() {
        match (&node.feature, &schema.nodes) {
            (NodeFeature::Label { .. }, NodeSchema::Labels { .. }) => {}
            (NodeFeature::Attrs { attrs }, NodeSchema::Attrs { dim, .. }) => {
                if attrs.len() != *dim {
                    out.push(Violation::NodeAttrDim {
                        node: i,
                        expected: *dim,
                        found: attrs.len(),
                    });
                }
            }
            _ => out.push(Violation::NodeKind { node: i }),
        }
    }
    for (i, e) in g.edges.iter().enumerate() {
        if e.attrs.len() != schema.edge_dim {
            out.push(Violation::EdgeAttrDim {
                edge: i,
                expected: schema.edge_dim,
                found: e.attrs.len(),
            });
        }
    }

    if s.meta.mode() != schema.meta_mode {
        out.push(Violation::MetaMode {
            expected: schema.meta_mode,
        });
        return out;
    }
    if s.meta.records().is_empty() {
        out.push(Violation::EmptyRecords);
    }
    for rec in s.meta.records() {
        for field in &schema.fields {
            match rec.get(&field.name) {
                None => out.push(Violation::MissingField {
                    name: field.name.clone(),
                }),
                Some(v) => {
                    if let Some(expected) = field.kind.accepts(v) {
                        out.push(Violation::FieldKind {
                            name: field.name.clone(),
                            expected,
                        });
                    } else if let MetaValue::Num(x) = v {
                        if !x.is_finite() {
                            out.push(Violation::NonFiniteField {
                                name: field.name.clone(),
                            });
                        }
                    }
                }
            }
        }
        for name in rec.keys() {
            if !schema.fields.iter().any(|f| &f.name == name) {
                out.push(Violation::UnexpectedField { name: name.clone() });
            }
        }
    }
    out
}

/// Schema-independent graph invariants: id compaction, endpoints, finiteness,
/// uniform attribute dimensions within the graph.
pub fn validate_graph(g: &MultiGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = g.nodes.len();
    if n == 0 {
        out.push(Violation::EmptyGraph);
    }
    let mut seen = HashSet::with_capacity(n);
    for node in &g.nodes {
        if node.id >= n {
            out.push(Violation::NodeIdOutOfRange { id: node.id, n_nodes: n });
        } else if !seen.insert(node.id) {
            out.push(Violation::DuplicateNodeId { id: node.id });
        }
        if let NodeFeature::Attrs { attrs } = &node.feature {
            if attrs.iter().any(|x| !x.is_finite()) {
                out.push(Violation::NonFiniteAttr {
                    what: format!("node {}", node.id),
                });
            }
        }
    }
    for (i, e) in g.edges.iter().enumerate() {
        for endpoint in [e.src, e.dst] {
            if endpoint >= n {
                out.push(Violation::DanglingEndpoint {
                    edge: i,
                    node: endpoint,
                    n_nodes: n,
                });
            }
        }
        if e.attrs.iter().any(|x| !x.is_finite()) {
            out.push(Violation::NonFiniteAttr {
                what: format!("edge {i}"),
            });
        }
    }
    out
}

/// Validated, immutable collection of samples plus the schema derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct Database {
    pub samples: Vec<Sample>,
    pub schema: Schema,
}

impl Database {
    /// Validates `samples` and derives vocabularies and standardization stats from them.
    pub fn new(samples: Vec<Sample>) -> Result<Self, DbError> {
        Self::build(samples, None)
    }

    /// Like [`Database::new`], but keeps the vocabularies of `base` (new values are appended)
    /// so categorical ids stay aligned with a parent database.
    pub fn with_base_schema(samples: Vec<Sample>, base: &Schema) -> Result<Self, DbError> {
        Self::build(samples, Some(base))
    }

    fn build(mut samples: Vec<Sample>, base: Option<&Schema>) -> Result<Self, DbError> {
        if samples.is_empty() {
            return Err(DbError::Empty);
        }
        let mut ids = HashSet::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if !ids.insert(s.id.as_str()) {
                return Err(DbError::DuplicateId {
                    line: i + 1,
                    id: s.id.clone(),
                });
            }
        }
        // Structural checks first so the schema is inferred from sane graphs.
        for (i, s) in samples.iter().enumerate() {
            let v = validate_graph(&s.graph);
            check_violations(i + 1, &v)?;
        }
        let schema = Schema::infer(&samples, base)?;
        for (i, s) in samples.iter().enumerate() {
            let v = validate_sample(s, &schema);
            check_violations(i + 1, &v)?;
        }
        for s in &mut samples {
            s.graph.sort_nodes();
        }
        Ok(Database { samples, schema })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Copy of the database with every evaluation label removed.
    pub fn without_labels(&self) -> Database {
        let mut db = self.clone();
        for s in &mut db.samples {
            s.eval_label = None;
        }
        db
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            out.push_str(&s.to_json_line());
            out.push('\n');
        }
        out
    }
}

fn check_violations(line: usize, v: &[Violation]) -> Result<(), DbError> {
    if v.is_empty() {
        return Ok(());
    }
    if let Some(Violation::DanglingEndpoint {
        edge,
        node,
        n_nodes,
    }) = v
        .iter()
        .find(|x| matches!(x, Violation::DanglingEndpoint { .. }))
    {
        return Err(DbError::DanglingEndpoint {
            line,
            edge: *edge,
            node: *node,
            n_nodes: *n_nodes,
        });
    }
    let detail = join_violations(v);
    if v.iter().any(Violation::is_schema_level) {
        Err(DbError::SchemaMismatch { line, detail })
    } else {
        Err(DbError::Invalid { line, detail })
    }
}

/// Parses JSON-lines text. Blank lines are skipped but still counted for line numbers.
pub fn parse_samples(text: &str) -> Result<Vec<Sample>, DbError> {
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let s: Sample =
            serde_json::from_str(line).map_err(|source| DbError::Parse { line: i + 1, source })?;
        samples.push(s);
    }
    Ok(samples)
}

pub fn load_database(path: impl AsRef<Path>) -> Result<Database, DbError> {
    let file = fs::File::open(path.as_ref())?;
    let reader = BufReader::new(file);
    let mut samples = Vec::new();
    let mut lines = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Sample =
            serde_json::from_str(&line).map_err(|source| DbError::Parse { line: i + 1, source })?;
        samples.push(s);
        lines.push(i + 1);
    }
    Database::new(samples).map_err(|e| remap_line(e, &lines))
}

// Database::new reports positions among non-blank lines; translate to file lines.
fn remap_line(e: DbError, lines: &[usize]) -> DbError {
    let fix = |l: usize| lines.get(l.wrapping_sub(1)).copied().unwrap_or(l);
    match e {
        DbError::DuplicateId { line, id } => DbError::DuplicateId { line: fix(line), id },
        DbError::DanglingEndpoint {
            line,
            edge,
            node,
            n_nodes,
        } => DbError::DanglingEndpoint {
            line: fix(line),
            edge,
            node,
            n_nodes,
        },
        DbError::SchemaMismatch { line, detail } => DbError::SchemaMismatch {
            line: fix(line),
            detail,
        },
        DbError::Invalid { line, detail } => DbError::Invalid {
            line: fix(line),
            detail,
        },
        other => other,
    }
}

/// Path of the sidecar schema file written next to a database file.
pub fn schema_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".schema.json");
    PathBuf::from(s)
}

/// Writes the JSON-lines file and its `.schema.json` sidecar.
pub fn write_database(db: &Database, path: impl AsRef<Path>) -> Result<(), DbError> {
    let path = path.as_ref();
    let mut f = fs::File::create(path)?;
    f.write_all(db.to_jsonl().as_bytes())?;
    fs::write(schema_path(path), db.schema.to_json_pretty())?;
    Ok(())
}
