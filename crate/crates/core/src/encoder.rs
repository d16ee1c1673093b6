//! Graph side of the network: direction labels, learned pooling of parallel
//! edges into one vector per node pair, GIN message passing, and mean-pool readout.

use std::collections::HashMap;
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graphdb::{MultiGraph, NodeFeature, Schema};
use crate::model::{FlattenMode, ModelConfig};
use crate::nnkernel::{Linear, Mlp, NnError, ParamId, ParamStore, Tape, Tensor, Var};

/// Direction label attached to each (augmented) edge record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    SelfLoop = 0,
    Forward = 1,
    Reverse = 2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectedEdgeRecord {
    pub src: usize,
    pub dst: usize,
    pub attrs: Vec<f64>,
    pub direction: Direction,
}

/// Every non-loop edge `(u, v, f)` yields `(u, v, f, Forward)` and `(v, u, f, Reverse)`;
/// every self-loop yields one `SelfLoop` record.
pub fn encode_directions(g: &MultiGraph) -> Vec<DirectedEdgeRecord> {
    let mut out = Vec::with_capacity(2 * g.edges.len());
    for e in &g.edges {
        if e.is_loop() {
            out.push(DirectedEdgeRecord {
                src: e.src,
                dst: e.dst,
                attrs: e.attrs.clone(),
                direction: Direction::SelfLoop,
            });
        } else {
            out.push(DirectedEdgeRecord {
                src: e.src,
                dst: e.dst,
                attrs: e.attrs.clone(),
                direction: Direction::Forward,
            });
            out.push(DirectedEdgeRecord {
                src: e.dst,
                dst: e.src,
                attrs: e.attrs.clone(),
                direction: Direction::Reverse,
            });
        }
    }
    out
}

/// Groups records by unordered endpoint pair. Returns the pairs (as `(min, max)`,
/// in first-seen order) and the pair index of every record.
pub fn group_by_pair(records: &[DirectedEdgeRecord]) -> (Vec<(usize, usize)>, Vec<usize>) {
    let mut index: HashMap<(usize, usize), usize> = HashMap::new();
    let mut pairs = Vec::new();
    let rec_pair = records
        .iter()
        .map(|r| {
            let key = (r.src.min(r.dst), r.src.max(r.dst));
            *index.entry(key).or_insert_with(|| {
                pairs.push(key);
                pairs.len() - 1
            })
        })
        .collect();
    (pairs, rec_pair)
}

/// Per-sample graph inputs, precomputed once against a schema.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedGraph {
    pub n_nodes: usize,
    /// Embedding-table rows (label graphs) or standardized attribute rows.
    pub node_labels: Vec<usize>,
    pub node_attrs: Vec<Vec<f64>>,
    /// Standardized edge attributes per record.
    pub rec_attrs: Vec<Vec<f64>>,
    pub rec_dir: Vec<usize>,
    pub rec_pair: Vec<usize>,
    pub pairs: Vec<(usize, usize)>,
}

impl EncodedGraph {
    pub fn new(g: &MultiGraph, schema: &Schema) -> Self {
        let mut node_labels = Vec::new();
        let mut node_attrs = Vec::new();
        let mut nodes: Vec<_> = g.nodes.iter().collect();
        nodes.sort_by_key(|n| n.id);
        for n in nodes {
            match &n.feature {
                NodeFeature::Label { label } => node_labels.push(schema.label_index(label)),
                NodeFeature::Attrs { attrs } => node_attrs.push(schema.encode_node_attrs(attrs)),
            }
        }
        let records = encode_directions(g);
        let (pairs, rec_pair) = group_by_pair(&records);
        EncodedGraph {
            n_nodes: g.nodes.len(),
            node_labels,
            node_attrs,
            rec_attrs: records
                .iter()
                .map(|r| schema.encode_edge_attrs(&r.attrs))
                .collect(),
            rec_dir: records.iter().map(|r| r.direction as usize).collect(),
            rec_pair,
            pairs,
        }
    }
}

/// Several graphs packed into one disjoint union with index vectors for the
/// gather/scatter steps.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub n_graphs: usize,
    pub n_nodes: usize,
    pub node_labels: Rc<Vec<usize>>,
    pub node_attrs: Option<Tensor>,
    pub rec_attrs: Tensor,
    pub rec_dir: Rc<Vec<usize>>,
    pub rec_pair: Rc<Vec<usize>>,
    pub n_pairs: usize,
    pub msg_src: Rc<Vec<usize>>,
    pub msg_dst: Rc<Vec<usize>>,
    pub msg_pair: Rc<Vec<usize>>,
    pub node_graph: Rc<Vec<usize>>,
    pub inv_sizes: Rc<Vec<f64>>,
}

impl GraphBatch {
    pub fn assemble(graphs: &[&EncodedGraph], edge_dim: usize) -> GraphBatch {
        let n_rec: usize = graphs.iter().map(|g| g.rec_dir.len()).sum();
        let mut node_labels = Vec::new();
        let mut attr_rows: Vec<f64> = Vec::new();
        let mut attr_dim = 0;
        let mut rec_attrs = Vec::with_capacity(n_rec * edge_dim);
        let mut rec_dir = Vec::with_capacity(n_rec);
        let mut rec_pair = Vec::with_capacity(n_rec);
        let (mut msg_src, mut msg_dst, mut msg_pair) = (Vec::new(), Vec::new(), Vec::new());
        let mut node_graph = Vec::new();
        let mut inv_sizes = Vec::with_capacity(graphs.len());
        let (mut node_off, mut pair_off) = (0, 0);

        for (gi, g) in graphs.iter().enumerate() {
            node_labels.extend(&g.node_labels);
            for row in &g.node_attrs {
                attr_dim = row.len();
                attr_rows.extend(row);
            }
            for a in &g.rec_attrs {
                rec_attrs.extend(a);
            }
            rec_dir.extend(&g.rec_dir);
            rec_pair.extend(g.rec_pair.iter().map(|p| p + pair_off));
            for (pi, &(u, v)) in g.pairs.iter().enumerate() {
                let p = pi + pair_off;
                let (u, v) = (u + node_off, v + node_off);
                msg_src.push(u);
                msg_dst.push(v);
                msg_pair.push(p);
                if u != v {
                    msg_src.push(v);
                    msg_dst.push(u);
                    msg_pair.push(p);
                }
            }
            node_graph.extend(std::iter::repeat_n(gi, g.n_nodes));
            inv_sizes.push(1.0 / g.n_nodes as f64);
            node_off += g.n_nodes;
            pair_off += g.pairs.len();
        }

        let node_attrs = if attr_rows.is_empty() {
            None
        } else {
            Some(Tensor::from_shape_vec((node_off, attr_dim), attr_rows).expect("attr rows"))
        };
        GraphBatch {
            n_graphs: graphs.len(),
            n_nodes: node_off,
            node_labels: Rc::new(node_labels),
            node_attrs,
            rec_attrs: Tensor::from_shape_vec((n_rec, edge_dim), rec_attrs).expect("rec rows"),
            rec_dir: Rc::new(rec_dir),
            rec_pair: Rc::new(rec_pair),
            n_pairs: pair_off,
            msg_src: Rc::new(msg_src),
            msg_dst: Rc::new(msg_dst),
            msg_pair: Rc::new(msg_pair),
            node_graph: Rc::new(node_graph),
            inv_sizes: Rc::new(inv_sizes),
        }
    }
}

/// `rho(sum_t phi(x_t))` over groups; `None` stands for the identity map.
pub fn deepset(
    tape: &mut Tape,
    vars: &[Var],
    phi: Option<&Mlp>,
    rho: Option<&Mlp>,
    x: Var,
    group: Rc<Vec<usize>>,
    n_groups: usize,
) -> Result<Var, NnError> {
    let h = match phi {
        Some(m) => m.forward(tape, vars, x)?,
        None => x,
    };
    let pooled = tape.scatter_add(h, group, n_groups)?;
    match rho {
        Some(m) => m.forward(tape, vars, pooled),
        None => Ok(pooled),
    }
}

/// One GIN update over the flat graph:
/// `x_v' = MLP((1 + eps) x_v + sum_{u in N(v)} ReLU(x_u + f_vu))`.
#[allow(clippy::too_many_arguments)]
pub fn gin_layer(
    tape: &mut Tape,
    vars: &[Var],
    mlp: Option<&Mlp>,
    eps: Var,
    x: Var,
    edge_vecs: Var,
    msg_src: Rc<Vec<usize>>,
    msg_dst: Rc<Vec<usize>>,
    msg_pair: Rc<Vec<usize>>,
) -> Result<Var, NnError> {
    let n = tape.shape(x).0;
    let xs = tape.gather(x, msg_src)?;
    let fe = tape.gather(edge_vecs, msg_pair)?;
    let m = tape.add(xs, fe)?;
    let m = tape.relu(m);
    let agg = tape.scatter_add(m, msg_dst, n)?;
    let one_plus = tape.add_const(eps, 1.0);
    let selfp = tape.scale_var(x, one_plus)?;
    let h = tape.add(selfp, agg)?;
    match mlp {
        Some(mlp) => mlp.forward(tape, vars, h),
        None => Ok(h),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeInput {
    /// Embedding table with an OOV row 0.
    Table(ParamId),
    Projection(Linear),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Flattener {
    DeepSet { phi: Mlp, rho: Mlp },
    /// Average of `f'` over the group, then a linear map to the edge width.
    Mean { proj: Linear },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GinParams {
    pub mlp: Mlp,
    pub eps: ParamId,
}

/// Parameter layout of the graph encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphEncoder {
    pub node_input: NodeInput,
    pub direction_table: ParamId,
    pub flatten: Flattener,
    pub edge_to_node: Option<Linear>,
    pub layers: Vec<GinParams>,
    pub readout: Mlp,
}

impl GraphEncoder {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        cfg: &ModelConfig,
        schema: &Schema,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let h = cfg.hidden;
        let k = schema.edge_dim;
        let node_input = match schema.node_attr_dim() {
            None => NodeInput::Table(store.add_glorot(
                "node.embed",
                schema.node_table_rows(),
                h,
                rng,
            )?),
            Some(d) => NodeInput::Projection(Linear::new(store, "node.proj", d, h, true, rng)?),
        };
        let direction_table = store.add_glorot("edge.direction", 3, k, rng)?;
        let de = cfg.edge_width;
        let flatten = match cfg.flatten {
            FlattenMode::DeepSet => Flattener::DeepSet {
                phi: Mlp::new(store, "flatten.phi", &[k, de, de], rng)?,
                rho: Mlp::new(store, "flatten.rho", &[de, de, de], rng)?,
            },
            FlattenMode::Mean => Flattener::Mean {
                proj: Linear::new(store, "flatten.mean_proj", k, de, true, rng)?,
            },
        };
        let edge_to_node = if de != h {
            Some(Linear::new(store, "flatten.to_node", de, h, false, rng)?)
        } else {
            None
        };
        let layers = (0..cfg.gin_layers)
            .map(|l| {
                Ok(GinParams {
                    mlp: Mlp::new(store, &format!("gin.{l}.mlp"), &[h, h, h], rng)?,
                    eps: store.add_zeros(format!("gin.{l}.eps"), 1, 1)?,
                })
            })
            .collect::<Result<_, NnError>>()?;
        let readout = Mlp::new(store, "readout", &[h, h, cfg.graph_dim], rng)?;
        Ok(GraphEncoder {
            node_input,
            direction_table,
            flatten,
            edge_to_node,
            layers,
            readout,
        })
    }

    /// `f' = f + d_t` for every record.
    pub fn edge_features(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        batch: &GraphBatch,
    ) -> Result<Var, NnError> {
        let f = tape.constant(batch.rec_attrs.clone());
        let d = tape.gather(vars[self.direction_table.index()], batch.rec_dir.clone())?;
        tape.add(f, d)
    }

    /// One vector per unordered node pair, mapped to node width.
    pub fn flatten_multiedges(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        batch: &GraphBatch,
        f_prime: Var,
    ) -> Result<Var, NnError> {
        let e = match &self.flatten {
            Flattener::DeepSet { phi, rho } => deepset(
                tape,
                vars,
                Some(phi),
                Some(rho),
                f_prime,
                batch.rec_pair.clone(),
                batch.n_pairs,
            )?,
            Flattener::Mean { proj } => {
                let sums = tape.scatter_add(f_prime, batch.rec_pair.clone(), batch.n_pairs)?;
                let mut counts = vec![0usize; batch.n_pairs];
                for &p in batch.rec_pair.iter() {
                    counts[p] += 1;
                }
                let inv = counts.iter().map(|&c| 1.0 / c.max(1) as f64).collect();
                let mean = tape.row_scale(sums, Rc::new(inv))?;
                proj.forward(tape, vars, mean)?
            }
        };
        match &self.edge_to_node {
            Some(lin) => lin.forward(tape, vars, e),
            None => Ok(e),
        }
    }

    pub fn initial_states(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        batch: &GraphBatch,
    ) -> Result<Var, NnError> {
        match &self.node_input {
            NodeInput::Table(t) => tape.gather(vars[t.index()], batch.node_labels.clone()),
            NodeInput::Projection(lin) => {
                let x = tape.constant(
                    batch
                        .node_attrs
                        .clone()
                        .ok_or(NnError::Shape {
                            op: "node attrs",
                            left: (batch.n_nodes, 0),
                            right: (lin.fan_in, lin.fan_out),
                        })?,
                );
                lin.forward(tape, vars, x)
            }
        }
    }

    /// `Z_G = MLP(mean_v x_v^(L))`, one row per graph.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], batch: &GraphBatch) -> Result<Var, NnError> {
        let f_prime = self.edge_features(tape, vars, batch)?;
        let edge_vecs = self.flatten_multiedges(tape, vars, batch, f_prime)?;
        let mut x = self.initial_states(tape, vars, batch)?;
        for layer in &self.layers {
            x = gin_layer(
                tape,
                vars,
                Some(&layer.mlp),
                vars[layer.eps.index()],
                x,
                edge_vecs,
                batch.msg_src.clone(),
                batch.msg_dst.clone(),
                batch.msg_pair.clone(),
            )?;
        }
        let pooled = tape.scatter_add(x, batch.node_graph.clone(), batch.n_graphs)?;
        let mean = tape.row_scale(pooled, batch.inv_sizes.clone())?;
        self.readout.forward(tape, vars, mean)
    }
}
