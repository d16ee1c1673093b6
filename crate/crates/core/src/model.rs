//! Full network: graph encoder, metadata encoder, fusion, and membership head,
//! plus sample encoding and batch assembly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anomalyhead::{centroids_of, MembershipNet};
use crate::encoder::{EncodedGraph, GraphBatch, GraphEncoder};
use crate::fusion::{EncodedMeta, Fusion, JointEmbedding, MetaBatch, MetaEncoder};
use crate::graphdb::{Sample, Schema};
use crate::nnkernel::{NnError, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FlattenMode {
    #[default]
    DeepSet,
    /// Plain attribute average per node pair.
    Mean,
}

impl std::str::FromStr for FlattenMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "deepset" => Ok(FlattenMode::DeepSet),
            "mean" => Ok(FlattenMode::Mean),
            _ => Err(format!("unknown flatten mode `{s}` (expected deepset|mean)")),
        }
    }
}

/// Architecture sizes. All MLPs have one hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: usize,
    /// Width of the pooled multi-edge vector; projected to `hidden` when different.
    pub edge_width: usize,
    pub gin_layers: usize,
    pub graph_dim: usize,
    pub proj_dim: usize,
    pub joint_hidden: usize,
    pub joint_dim: usize,
    pub men_hidden: usize,
    pub meta_embed_dim: usize,
    pub meta_width: usize,
    pub use_metadata: bool,
    /// Weight of the unit-norm metadata half entering the joint MLP. Below 1 it
    /// keeps the widely spread metadata directions from drowning out the
    /// graph half early in training.
    pub meta_gain: f64,
    pub flatten: FlattenMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 64,
            edge_width: 64,
            gin_layers: 3,
            graph_dim: 64,
            proj_dim: 32,
            joint_hidden: 64,
            joint_dim: 32,
            men_hidden: 32,
            meta_embed_dim: 8,
            meta_width: 32,
            use_metadata: true,
            meta_gain: 0.1,
            flatten: FlattenMode::DeepSet,
        }
    }
}

impl ModelConfig {
    /// Same shape with every width set to `w` (handy for quick runs).
    pub fn uniform(w: usize) -> Self {
        ModelConfig {
            hidden: w,
            edge_width: w,
            graph_dim: w,
            proj_dim: w,
            joint_hidden: w,
            joint_dim: w,
            men_hidden: w,
            meta_width: w,
            ..ModelConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub graph: EncodedGraph,
    pub meta: EncodedMeta,
}

impl EncodedSample {
    pub fn new(s: &Sample, schema: &Schema) -> Self {
        EncodedSample {
            graph: EncodedGraph::new(&s.graph, schema),
            meta: EncodedMeta::new(&s.meta, schema),
        }
    }
}

pub fn encode_samples(samples: &[Sample], schema: &Schema) -> Vec<EncodedSample> {
    samples.iter().map(|s| EncodedSample::new(s, schema)).collect()
}

pub struct Batch {
    pub graph: GraphBatch,
    pub meta: MetaBatch,
}

impl Batch {
    pub fn assemble(samples: &[&EncodedSample], schema: &Schema) -> Batch {
        let graphs: Vec<_> = samples.iter().map(|s| &s.graph).collect();
        let metas: Vec<_> = samples.iter().map(|s| &s.meta).collect();
        Batch {
            graph: GraphBatch::assemble(&graphs, schema.edge_dim),
            meta: MetaBatch::assemble(
                &metas,
                schema.dense_meta_dim(),
                schema.categorical_fields().len(),
            ),
        }
    }
}

/// Parameter layout of the whole network.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub graph: GraphEncoder,
    pub meta: Option<MetaEncoder>,
    pub fusion: Fusion,
    pub men: MembershipNet,
}

pub struct Forward {
    pub zg: Var,
    pub zm: Option<Var>,
    pub joint: JointEmbedding,
    pub gamma: Var,
}

impl Network {
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], batch: &Batch) -> Result<Forward, NnError> {
        let zg = self.graph.forward(tape, vars, &batch.graph)?;
        let zm = match &self.meta {
            Some(m) => Some(m.forward(tape, vars, &batch.meta)?),
            None => None,
        };
        let joint = self.fusion.fuse(tape, vars, zg, zm)?;
        let gamma = self.men.forward(tape, vars, joint.z)?;
        Ok(Forward {
            zg,
            zm,
            joint,
            gamma,
        })
    }
}

/// Network layout together with its parameter values and the schema it was built for.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub k: usize,
    pub schema: Schema,
    pub net: Network,
    pub params: ParamStore,
}

/// Rows per forward pass when only values are needed.
const EVAL_CHUNK: usize = 256;

impl Model {
    pub fn new(config: ModelConfig, schema: &Schema, k: usize, seed: u64) -> Result<Model, NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let graph = GraphEncoder::new(&mut params, &config, schema, &mut rng)?;
        let (meta, meta_dim) = if config.use_metadata {
            let m = MetaEncoder::new(&mut params, &config, schema, &mut rng)?;
            let d = m.out_dim;
            (Some(m), d)
        } else {
            (None, 0)
        };
        let fusion = Fusion::new(&mut params, &config, meta_dim, &mut rng)?;
        let men = MembershipNet::new(&mut params, config.joint_dim, config.men_hidden, k, &mut rng)?;
        Ok(Model {
            config,
            k,
            schema: schema.clone(),
            net: Network {
                graph,
                meta,
                fusion,
                men,
            },
            params,
        })
    }

    /// Rebuilds the layout and installs `params`, which must match it name for
    /// name and shape for shape.
    pub fn with_params(
        config: ModelConfig,
        schema: &Schema,
        k: usize,
        params: ParamStore,
    ) -> Result<Model, String> {
        let mut m = Model::new(config, schema, k, 0).map_err(|e| e.to_string())?;
        if m.params.len() != params.len() {
            return Err(format!(
                "expected {} parameter tensors, found {}",
                m.params.len(),
                params.len()
            ));
        }
        for id in m.params.ids() {
            let (name, want) = (m.params.name(id), m.params.get(id).dim());
            let got = params.get(id);
            if params.name(id) != name || got.dim() != want {
                return Err(format!(
                    "parameter {} `{}` {:?} does not match layout `{}` {:?}",
                    id.index(),
                    params.name(id),
                    got.dim(),
                    name,
                    want
                ));
            }
        }
        m.params = params;
        Ok(m)
    }

    pub fn encode(&self, samples: &[Sample]) -> Vec<EncodedSample> {
        encode_samples(samples, &self.schema)
    }

    /// Joint embeddings and memberships for every sample, without gradients.
    pub fn embed(&self, encoded: &[EncodedSample]) -> Result<(Tensor, Tensor), NnError> {
        let d = self.config.joint_dim;
        let mut z = Tensor::zeros((encoded.len(), d));
        let mut g = Tensor::zeros((encoded.len(), self.k));
        for (ci, chunk) in encoded.chunks(EVAL_CHUNK).enumerate() {
            let refs: Vec<_> = chunk.iter().collect();
            let batch = Batch::assemble(&refs, &self.schema);
            let mut tape = Tape::new();
            let vars = self.params.bind(&mut tape);
            let f = self.net.forward(&mut tape, &vars, &batch)?;
            let off = ci * EVAL_CHUNK;
            z.slice_mut(ndarray::s![off..off + chunk.len(), ..])
                .assign(tape.value(f.joint.z));
            g.slice_mut(ndarray::s![off..off + chunk.len(), ..])
                .assign(tape.value(f.gamma));
        }
        if z.iter().chain(g.iter()).any(|x| !x.is_finite()) {
            return Err(NnError::NonFinite { op: "embed" });
        }
        Ok((z, g))
    }

    /// Centroids over a full set of samples with the current parameters.
    pub fn centroids(&self, encoded: &[EncodedSample]) -> Result<Tensor, NnError> {
        let (z, g) = self.embed(encoded)?;
        Ok(centroids_of(&z, &g))
    }
}
