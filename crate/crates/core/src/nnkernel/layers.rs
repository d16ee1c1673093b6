use rand::Rng;

use super::{NnError, ParamId, ParamStore, Tape, Var};

/// `x W + b` (or `x W` when built without bias).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let w = store.add_glorot(format!("{name}.w"), fan_in, fan_out, rng)?;
        let b = if bias {
            Some(store.add_zeros(format!("{name}.b"), 1, fan_out)?)
        } else {
            None
        };
        Ok(Linear {
            w,
            b,
            fan_in,
            fan_out,
        })
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var, NnError> {
        let xw = tape.matmul(x, vars[self.w.index()])?;
        match self.b {
            Some(b) => tape.add_row(xw, vars[b.index()]),
            None => Ok(xw),
        }
    }
}

/// Stack of linear layers with ReLU between consecutive layers (none after the last).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], true, rng))
            .collect::<Result<_, _>>()?;
        Ok(Mlp { layers })
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var, NnError> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                h = tape.relu(h);
            }
            h = layer.forward(tape, vars, h)?;
        }
        Ok(h)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }

    /// Parameters of every layer (weights then biases).
    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|l| std::iter::once(l.w).chain(l.b))
            .collect()
    }
}
