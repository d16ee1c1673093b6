//! Metadata side of the network and the fusion of both modalities into the
//! joint embedding `Z`.

use std::rc::Rc;

use rand::Rng;

use crate::encoder::deepset;
use crate::graphdb::{MetaMode, Metadata, Schema};
use crate::model::ModelConfig;
use crate::nnkernel::{Linear, Mlp, NnError, ParamId, ParamStore, Tape, Tensor, Var};

/// Denominator stabilizer of the projection normalization.
pub const NORM_EPS: f64 = 1e-12;

/// Encoded metadata records of one sample: dense block and categorical ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMeta {
    pub records: Vec<(Vec<f64>, Vec<usize>)>,
}

impl EncodedMeta {
    pub fn new(m: &Metadata, schema: &Schema) -> Self {
        EncodedMeta {
            records: m.records().iter().map(|r| schema.encode_record(r)).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MetaBatch {
    pub dense: Tensor,
    /// One index vector per categorical field, aligned with `dense` rows.
    pub cats: Vec<Rc<Vec<usize>>>,
    pub rec_sample: Rc<Vec<usize>>,
    pub n_samples: usize,
}

impl MetaBatch {
    pub fn assemble(metas: &[&EncodedMeta], dense_dim: usize, n_cats: usize) -> MetaBatch {
        let n_rec: usize = metas.iter().map(|m| m.records.len()).sum();
        let mut dense = Vec::with_capacity(n_rec * dense_dim);
        let mut cats = vec![Vec::with_capacity(n_rec); n_cats];
        let mut rec_sample = Vec::with_capacity(n_rec);
        for (i, m) in metas.iter().enumerate() {
            for (d, c) in &m.records {
                dense.extend(d);
                for (col, &id) in cats.iter_mut().zip(c) {
                    col.push(id);
                }
                rec_sample.push(i);
            }
        }
        MetaBatch {
            dense: Tensor::from_shape_vec((n_rec, dense_dim), dense).expect("dense rows"),
            cats: cats.into_iter().map(Rc::new).collect(),
            rec_sample: Rc::new(rec_sample),
            n_samples: metas.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaEncoder {
    pub mode: MetaMode,
    pub tables: Vec<ParamId>,
    /// `(phi, rho)` of the record DeepSet; absent in single-record mode.
    pub set_fn: Option<(Mlp, Mlp)>,
    pub out_dim: usize,
}

impl MetaEncoder {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        cfg: &ModelConfig,
        schema: &Schema,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let tables = schema
            .categorical_fields()
            .into_iter()
            .map(|(name, rows)| store.add_glorot(format!("meta.embed.{name}"), rows, cfg.meta_embed_dim, rng))
            .collect::<Result<Vec<_>, _>>()?;
        let rec_dim = schema.dense_meta_dim() + tables.len() * cfg.meta_embed_dim;
        let (set_fn, out_dim) = match schema.meta_mode {
            MetaMode::Single => (None, rec_dim),
            MetaMode::Multiset => {
                let w = cfg.meta_width;
                let phi = Mlp::new(store, "meta.phi", &[rec_dim, w, w], rng)?;
                let rho = Mlp::new(store, "meta.rho", &[w, w, w], rng)?;
                (Some((phi, rho)), w)
            }
        };
        Ok(MetaEncoder {
            mode: schema.meta_mode,
            tables,
            set_fn,
            out_dim,
        })
    }

    /// Record vectors: dense block followed by each categorical embedding.
    pub fn record_vectors(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        batch: &MetaBatch,
    ) -> Result<Var, NnError> {
        let mut x = tape.constant(batch.dense.clone());
        for (table, ids) in self.tables.iter().zip(&batch.cats) {
            let e = tape.gather(vars[table.index()], ids.clone())?;
            x = tape.concat_cols(x, e)?;
        }
        Ok(x)
    }

    /// `Z_M`, one row per sample.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], batch: &MetaBatch) -> Result<Var, NnError> {
        let x = self.record_vectors(tape, vars, batch)?;
        match &self.set_fn {
            None => Ok(x),
            Some((phi, rho)) => deepset(
                tape,
                vars,
                Some(phi),
                Some(rho),
                x,
                batch.rec_sample.clone(),
                batch.n_samples,
            ),
        }
    }
}

/// Variables of the fused embedding for one batch.
#[derive(Debug, Clone, Copy)]
pub struct JointEmbedding {
    pub z: Var,
    pub zg_proj: Var,
    pub zm_proj: Option<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fusion {
    pub proj_g: Linear,
    pub proj_m: Option<Linear>,
    pub joint: Mlp,
    /// Fixed factor on the metadata half ahead of the joint MLP; the same as
    /// storing that MLP's metadata input columns scaled by it.
    pub meta_gain: f64,
}

impl Fusion {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        cfg: &ModelConfig,
        meta_dim: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let p = cfg.proj_dim;
        let proj_g = Linear::new(store, "proj_g", cfg.graph_dim, p, false, rng)?;
        let proj_m = if cfg.use_metadata {
            Some(Linear::new(store, "proj_m", meta_dim, p, false, rng)?)
        } else {
            None
        };
        let joint_in = if cfg.use_metadata { 2 * p } else { p };
        let joint = Mlp::new(store, "joint", &[joint_in, cfg.joint_hidden, cfg.joint_dim], rng)?;
        Ok(Fusion {
            proj_g,
            proj_m,
            joint,
            meta_gain: cfg.meta_gain,
        })
    }

    /// `Z = MLP([normalize(P_G Z_G), g * normalize(P_M Z_M)])` with `g` the
    /// metadata gain; the metadata half is dropped when the fusion was built
    /// without metadata.
    pub fn fuse(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        zg: Var,
        zm: Option<Var>,
    ) -> Result<JointEmbedding, NnError> {
        let pg = self.proj_g.forward(tape, vars, zg)?;
        let zg_proj = tape.row_normalize(pg, NORM_EPS);
        let (input, zm_proj) = match (&self.proj_m, zm) {
            (Some(pm), Some(zm)) => {
                let p = pm.forward(tape, vars, zm)?;
                let zm_proj = tape.row_normalize(p, NORM_EPS);
                let scaled = tape.scale(zm_proj, self.meta_gain);
                (tape.concat_cols(zg_proj, scaled)?, Some(zm_proj))
            }
            _ => (zg_proj, None),
        };
        let z = self.joint.forward(tape, vars, input)?;
        Ok(JointEmbedding { z, zg_proj, zm_proj })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FlattenMode;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(use_metadata: bool) -> ModelConfig {
        ModelConfig {
            graph_dim: 3,
            proj_dim: 3,
            joint_hidden: 4,
            joint_dim: 2,
            use_metadata,
            flatten: FlattenMode::DeepSet,
            ..ModelConfig::default()
        }
    }

    fn run(f: &Fusion, store: &ParamStore, zg: Tensor, zm: Tensor) -> (Tensor, Tensor) {
        let mut t = Tape::new();
        let vars = store.bind(&mut t);
        let zg = t.constant(zg);
        let zm = t.constant(zm);
        let j = f.fuse(&mut t, &vars, zg, Some(zm)).unwrap();
        (t.value(j.z).clone(), t.value(j.zg_proj).clone())
    }

    #[test]
    fn identity_projection_removes_scale() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = Fusion::new(&mut store, &cfg(true), 3, &mut rng).unwrap();
        *store.get_mut(f.proj_g.w) = Tensor::eye(3);
        let (_, zg) = run(&f, &store, array![[7.0, 0.0, 0.0]], array![[1.0, 2.0, 3.0]]);
        assert!((zg[[0, 0]] - 1.0).abs() < 1e-12);
        assert_eq!(zg[[0, 1]], 0.0);
    }

    #[test]
    fn unit_norms_scale_invariance_and_swap() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = Fusion::new(&mut store, &cfg(true), 3, &mut rng).unwrap();
        let a = array![[0.3, -1.0, 2.0]];
        let b = array![[1.5, 0.2, -0.7]];
        let (z1, zg) = run(&f, &store, a.clone(), b.clone());
        let norm: f64 = zg.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        let (z2, _) = run(&f, &store, a.mapv(|x| 4.5 * x), b.clone());
        assert!(z1.iter().zip(&z2).all(|(x, y)| (x - y).abs() < 1e-12));
        let (z3, _) = run(&f, &store, b, a);
        assert!(z1.iter().zip(&z3).any(|(x, y)| (x - y).abs() > 1e-9));
    }

    #[test]
    fn gain_equals_scaled_metadata_columns() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut f = Fusion::new(&mut store, &cfg(true), 3, &mut rng).unwrap();
        let a = array![[0.3, -1.0, 2.0], [1.0, 1.0, 0.5]];
        let b = array![[1.5, 0.2, -0.7], [-0.4, 0.9, 0.1]];
        f.meta_gain = 0.25;
        let (z_gain, _) = run(&f, &store, a.clone(), b.clone());
        f.meta_gain = 1.0;
        let w = f.joint.layers[0].w;
        let p = cfg(true).proj_dim;
        store.get_mut(w).slice_mut(ndarray::s![p.., ..]).mapv_inplace(|x| 0.25 * x);
        let (z_cols, _) = run(&f, &store, a, b);
        assert!(z_gain.iter().zip(&z_cols).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn ablation_uses_graph_half_only() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = Fusion::new(&mut store, &cfg(false), 3, &mut rng).unwrap();
        assert!(f.proj_m.is_none());
        assert_eq!(f.joint.layers[0].fan_in, 3);
        let mut t = Tape::new();
        let vars = store.bind(&mut t);
        let zg = t.constant(array![[1.0, 2.0, 3.0]]);
        let j = f.fuse(&mut t, &vars, zg, None).unwrap();
        let direct = f.joint.forward(&mut t, &vars, j.zg_proj).unwrap();
        assert_eq!(t.value(j.z), t.value(direct));
    }

    #[test]
    fn identity_record_sum() {
        let mut t = Tape::new();
        let x = t.leaf(array![[1.0], [2.0]]);
        let y = deepset(&mut t, &[], None, None, x, Rc::new(vec![0, 0]), 1).unwrap();
        assert_eq!(t.value(y), &array![[3.0]]);
    }
}
