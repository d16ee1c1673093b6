use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NnError, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors. Shapes are fixed once added.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    lookup: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId, NnError> {
        let name = name.into();
        if self.lookup.contains_key(&name) {
            return Err(NnError::DuplicateParam(name));
        }
        if value.iter().any(|x| !x.is_finite()) {
            return Err(NnError::NonFinite { op: "param init" });
        }
        let id = self.values.len();
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(id))
    }

    /// Uniform Glorot initialization, `U(-a, a)` with `a = sqrt(6 / (rows + cols))`.
    pub fn add_glorot<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> Result<ParamId, NnError> {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let t = Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-a..a));
        self.add(name, t)
    }

    pub fn add_zeros(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
    ) -> Result<ParamId, NnError> {
        self.add(name, Tensor::zeros((rows, cols)))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|t| t.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Places every parameter on the tape as a leaf; the result is indexed by [`ParamId`].
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.values.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    /// Parameter gradients aligned with this store (zeros where nothing flowed).
    pub fn collect_grads(&self, grads: &super::Gradients, bound: &[Var]) -> Vec<Tensor> {
        self.values
            .iter()
            .zip(bound)
            .map(|(t, &v)| {
                let g = grads.get_or_zeros(v, t.dim());
                if g.is_standard_layout() {
                    g
                } else {
                    g.as_standard_layout().into_owned()
                }
            })
            .collect()
    }
}

impl Serialize for ParamStore {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let entries: Vec<ParamEntry> = self
            .names
            .iter()
            .zip(&self.values)
            .map(|(name, t)| ParamEntry {
                name: name.clone(),
                shape: [t.nrows(), t.ncols()],
                data: t.iter().copied().collect(),
            })
            .collect();
        entries.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ParamStore {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let entries = Vec::<ParamEntry>::deserialize(deserializer)?;
        let mut store = ParamStore::new();
        for e in entries {
            let t = Array2::from_shape_vec((e.shape[0], e.shape[1]), e.data)
                .map_err(|err| D::Error::custom(format!("param `{}`: {err}", e.name)))?;
            store.add(e.name, t).map_err(D::Error::custom)?;
        }
        Ok(store)
    }
}
