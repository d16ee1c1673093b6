//! Tensor-level reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value and the operands it
//! was built from. [`Tape::backward`] walks the nodes in reverse creation order,
//! so a single sweep suffices for the DAG.

use std::rc::Rc;

use ndarray::{s, Array2, Axis, Zip};

use super::NnError;

pub type Tensor = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleVar(Var, Var),
    AddConst(Var),
    Relu(Var),
    Gather(Var, Rc<Vec<usize>>),
    ScatterAdd(Var, Rc<Vec<usize>>),
    RowScale(Var, Rc<Vec<f64>>),
    ConcatCols(Var, Var),
    RowNormalize(Var, f64),
    SoftmaxRows(Var),
    Transpose(Var),
    SumAll(Var),
    ColSum(Var),
    DivRows(Var, Var),
    SqDist(Var, Var),
    LogClamp(Var, f64, f64),
    CenterCols(Var),
    LogDet(Var, Tensor),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Dynamically built computation record.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    track_branches: bool,
    branch_sig: u64,
}

/// Gradients of one scalar with respect to every node of a tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `shape` if nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn shape(t: &Tensor) -> (usize, usize) {
    t.dim()
}

fn mix(sig: u64, bit: bool) -> u64 {
    (sig.rotate_left(1) ^ (bit as u64)).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a fingerprint of every ReLU mask and clamp branch taken, so callers
    /// can detect when a perturbation crosses a kink.
    pub fn with_branch_tracking() -> Self {
        Tape {
            track_branches: true,
            ..Self::default()
        }
    }

    pub fn branch_signature(&self) -> u64 {
        self.branch_sig
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        shape(self.value(v))
    }

    /// The single entry of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NnError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(NnError::Shape {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(NnError::Shape {
                op: "matmul",
                left: sa,
                right: sb,
            });
        }
        let v = self.value(a).dot(self.value(b));
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `x + b` with `b` a 1xm row broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var, NnError> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sb.0 != 1 || sb.1 != sx.1 {
            return Err(NnError::Shape {
                op: "add_row",
                left: sx,
                right: sb,
            });
        }
        let v = self.value(x) + self.value(b);
        Ok(self.push(v, Op::AddRow(x, b)))
    }

    /// `x W + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NnError> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape("add", a, b)?;
        let v = self.value(a) + self.value(b);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a) - self.value(b);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a) * self.value(b);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x) * c;
        self.push(v, Op::Scale(x, c))
    }

    /// `x * s` with `s` a 1x1 node.
    pub fn scale_var(&mut self, x: Var, s: Var) -> Result<Var, NnError> {
        if self.shape(s) != (1, 1) {
            return Err(NnError::Shape {
                op: "scale_var",
                left: self.shape(x),
                right: self.shape(s),
            });
        }
        let v = self.value(x) * self.scalar(s);
        Ok(self.push(v, Op::ScaleVar(x, s)))
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x) + c;
        self.push(v, Op::AddConst(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|a| a.max(0.0));
        if self.track_branches {
            let mut sig = self.branch_sig;
            for a in self.value(x).iter() {
                sig = mix(sig, *a > 0.0);
            }
            self.branch_sig = sig;
        }
        self.push(v, Op::Relu(x))
    }

    /// Rows of `x` selected by `idx` (repeats allowed).
    pub fn gather(&mut self, x: Var, idx: Rc<Vec<usize>>) -> Result<Var, NnError> {
        let (rows, cols) = self.shape(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(NnError::Index {
                op: "gather",
                index: bad,
                len: rows,
            });
        }
        let src = self.value(x);
        let mut out = Tensor::zeros((idx.len(), cols));
        for (i, &j) in idx.iter().enumerate() {
            out.row_mut(i).assign(&src.row(j));
        }
        Ok(self.push(out, Op::Gather(x, idx)))
    }

    /// `out[idx[i]] += x[i]` into an `n`-row result.
    pub fn scatter_add(&mut self, x: Var, idx: Rc<Vec<usize>>, n: usize) -> Result<Var, NnError> {
        let (rows, cols) = self.shape(x);
        if idx.len() != rows {
            return Err(NnError::Shape {
                op: "scatter_add",
                left: (rows, cols),
                right: (idx.len(), 1),
            });
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(NnError::Index {
                op: "scatter_add",
                index: bad,
                len: n,
            });
        }
        let src = self.value(x);
        let mut out = Tensor::zeros((n, cols));
        for (i, &j) in idx.iter().enumerate() {
            let mut row = out.row_mut(j);
            row += &src.row(i);
        }
        Ok(self.push(out, Op::ScatterAdd(x, idx)))
    }

    /// Multiplies row `i` by the constant `w[i]`.
    pub fn row_scale(&mut self, x: Var, w: Rc<Vec<f64>>) -> Result<Var, NnError> {
        let (rows, cols) = self.shape(x);
        if w.len() != rows {
            return Err(NnError::Shape {
                op: "row_scale",
                left: (rows, cols),
                right: (w.len(), 1),
            });
        }
        let mut v = self.value(x).clone();
        for (mut row, &c) in v.rows_mut().into_iter().zip(w.iter()) {
            row *= c;
        }
        Ok(self.push(v, Op::RowScale(x, w)))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.0 != sb.0 {
            return Err(NnError::Shape {
                op: "concat_cols",
                left: sa,
                right: sb,
            });
        }
        let mut v = Tensor::zeros((sa.0, sa.1 + sb.1));
        v.slice_mut(s![.., ..sa.1]).assign(self.value(a));
        v.slice_mut(s![.., sa.1..]).assign(self.value(b));
        Ok(self.push(v, Op::ConcatCols(a, b)))
    }

    /// Each row divided by `(||row||_2 + eps)`.
    pub fn row_normalize(&mut self, x: Var, eps: f64) -> Var {
        let mut v = self.value(x).clone();
        for mut row in v.rows_mut() {
            let n = row.dot(&row).sqrt();
            row /= n + eps;
        }
        self.push(v, Op::RowNormalize(x, eps))
    }

    /// Row-wise softmax computed with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, NnError> {
        if self.value(x).iter().any(|a| !a.is_finite()) {
            return Err(NnError::NonFinite { op: "softmax_rows" });
        }
        let mut v = self.value(x).clone();
        for mut row in v.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|a| (a - m).exp());
            let z = row.sum();
            row /= z;
        }
        Ok(self.push(v, Op::SoftmaxRows(x)))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let v = self.value(x).t().to_owned();
        self.push(v, Op::Transpose(x))
    }

    /// Sum of all entries as a 1x1 node.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let v = Tensor::from_elem((1, 1), self.value(x).sum());
        self.push(v, Op::SumAll(x))
    }

    /// Column sums as a 1xm row.
    pub fn col_sum(&mut self, x: Var) -> Var {
        let v = self.value(x).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(v, Op::ColSum(x))
    }

    /// Row `i` of `a` divided by `s[i, 0]`.
    pub fn div_rows(&mut self, a: Var, s: Var) -> Result<Var, NnError> {
        let (sa, ss) = (self.shape(a), self.shape(s));
        if ss != (sa.0, 1) {
            return Err(NnError::Shape {
                op: "div_rows",
                left: sa,
                right: ss,
            });
        }
        let mut v = self.value(a).clone();
        let d = self.value(s);
        for (i, mut row) in v.rows_mut().into_iter().enumerate() {
            row /= d[[i, 0]];
        }
        Ok(self.push(v, Op::DivRows(a, s)))
    }

    /// Pairwise squared Euclidean distances between rows of `z` (N x d) and `c` (K x d).
    pub fn sq_dist(&mut self, z: Var, c: Var) -> Result<Var, NnError> {
        let (sz, sc) = (self.shape(z), self.shape(c));
        if sz.1 != sc.1 {
            return Err(NnError::Shape {
                op: "sq_dist",
                left: sz,
                right: sc,
            });
        }
        let (zv, cv) = (self.value(z), self.value(c));
        let mut v = Tensor::zeros((sz.0, sc.0));
        for (i, zi) in zv.rows().into_iter().enumerate() {
            for (k, ck) in cv.rows().into_iter().enumerate() {
                v[[i, k]] = zi.iter().zip(ck.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            }
        }
        Ok(self.push(v, Op::SqDist(z, c)))
    }

    /// `ln(clamp(x, lo, hi))`; the gradient is zero where the clamp is active.
    pub fn log_clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(x).mapv(|a| a.clamp(lo, hi).ln());
        if self.track_branches {
            let mut sig = self.branch_sig;
            for a in self.value(x).iter() {
                sig = mix(sig, *a >= lo && *a <= hi);
            }
            self.branch_sig = sig;
        }
        self.push(v, Op::LogClamp(x, lo, hi))
    }

    /// Subtracts the column means.
    pub fn center_cols(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mean = xv.mean_axis(Axis(0)).expect("nonempty");
        let v = xv - &mean;
        self.push(v, Op::CenterCols(x))
    }

    /// `ln det(M + ridge I)` via Cholesky. Fails if the shifted matrix is not
    /// positive definite.
    pub fn logdet_ridge(&mut self, m: Var, ridge: f64) -> Result<Var, NnError> {
        let (r, c) = self.shape(m);
        if r != c {
            return Err(NnError::Shape {
                op: "logdet_ridge",
                left: (r, c),
                right: (c, r),
            });
        }
        let mut a = self.value(m).clone();
        for i in 0..r {
            a[[i, i]] += ridge;
        }
        let l = cholesky(&a).ok_or(NnError::Factorization)?;
        let logdet = 2.0 * (0..r).map(|i| l[[i, i]].ln()).sum::<f64>();
        let inv = cholesky_inverse(&l);
        Ok(self.push(Tensor::from_elem((1, 1), logdet), Op::LogDet(m, inv)))
    }

    /// Reverse sweep from the scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients, NnError> {
        if self.shape(root) != (1, 1) {
            return Err(NnError::NonScalarLoss(self.shape(root)));
        }
        if !self.scalar(root).is_finite() {
            return Err(NnError::NonFinite { op: "loss" });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::ones((1, 1)));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow(x, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *b, gb);
                    acc(&mut grads, *x, g.clone());
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, -&g);
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, &g * self.value(*b));
                    acc(&mut grads, *b, &g * self.value(*a));
                }
                Op::Scale(x, c) => acc(&mut grads, *x, &g * *c),
                Op::ScaleVar(x, s) => {
                    let gs = (&g * self.value(*x)).sum();
                    acc(&mut grads, *s, Tensor::from_elem((1, 1), gs));
                    acc(&mut grads, *x, &g * self.scalar(*s));
                }
                Op::AddConst(x) => acc(&mut grads, *x, g.clone()),
                Op::Relu(x) => {
                    let mut gx = g.clone();
                    Zip::from(&mut gx)
                        .and(self.value(*x))
                        .for_each(|gi, &xi| {
                            if xi <= 0.0 {
                                *gi = 0.0;
                            }
                        });
                    acc(&mut grads, *x, gx);
                }
                Op::Gather(x, ix) => {
                    let (rows, cols) = self.shape(*x);
                    let mut gx = Tensor::zeros((rows, cols));
                    for (i, &j) in ix.iter().enumerate() {
                        let mut row = gx.row_mut(j);
                        row += &g.row(i);
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::ScatterAdd(x, ix) => {
                    let cols = g.ncols();
                    let mut gx = Tensor::zeros((ix.len(), cols));
                    for (i, &j) in ix.iter().enumerate() {
                        gx.row_mut(i).assign(&g.row(j));
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::RowScale(x, w) => {
                    let mut gx = g.clone();
                    for (mut row, &c) in gx.rows_mut().into_iter().zip(w.iter()) {
                        row *= c;
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.shape(*a).1;
                    acc(&mut grads, *a, g.slice(s![.., ..ca]).to_owned());
                    acc(&mut grads, *b, g.slice(s![.., ca..]).to_owned());
                }
                Op::RowNormalize(x, eps) => {
                    let xv = self.value(*x);
                    let mut gx = Tensor::zeros(xv.dim());
                    for ((xr, gr), mut out) in xv
                        .rows()
                        .into_iter()
                        .zip(g.rows())
                        .zip(gx.rows_mut())
                    {
                        let n = xr.dot(&xr).sqrt();
                        let d = n + eps;
                        out.assign(&(&gr / d));
                        if n > 0.0 {
                            let coef = xr.dot(&gr) / (n * d * d);
                            out.scaled_add(-coef, &xr);
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::SoftmaxRows(x) => {
                    let y = &node.value;
                    let mut gx = Tensor::zeros(y.dim());
                    for ((yr, gr), mut out) in
                        y.rows().into_iter().zip(g.rows()).zip(gx.rows_mut())
                    {
                        let dotp = yr.dot(&gr);
                        Zip::from(&mut out)
                            .and(&yr)
                            .and(&gr)
                            .for_each(|o, &yi, &gi| *o = yi * (gi - dotp));
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Transpose(x) => acc(&mut grads, *x, g.t().to_owned()),
                Op::SumAll(x) => {
                    let gx = Tensor::from_elem(self.shape(*x), g[[0, 0]]);
                    acc(&mut grads, *x, gx);
                }
                Op::ColSum(x) => {
                    let (rows, _) = self.shape(*x);
                    let gx = g
                        .broadcast((rows, g.ncols()))
                        .expect("row broadcast")
                        .to_owned();
                    acc(&mut grads, *x, gx);
                }
                Op::DivRows(a, sv) => {
                    let av = self.value(*a);
                    let d = self.value(*sv);
                    let mut ga = g.clone();
                    let mut gs = Tensor::zeros(d.dim());
                    for (i, mut row) in ga.rows_mut().into_iter().enumerate() {
                        let di = d[[i, 0]];
                        gs[[i, 0]] = -g.row(i).dot(&av.row(i)) / (di * di);
                        row /= di;
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *sv, gs);
                }
                Op::SqDist(z, c) => {
                    let (zv, cv) = (self.value(*z), self.value(*c));
                    let row_g = g.sum_axis(Axis(1));
                    let col_g = g.sum_axis(Axis(0));
                    let mut gz = zv.clone();
                    for (mut row, &w) in gz.rows_mut().into_iter().zip(row_g.iter()) {
                        row *= 2.0 * w;
                    }
                    gz.scaled_add(-2.0, &g.dot(cv));
                    let mut gc = cv.clone();
                    for (mut row, &w) in gc.rows_mut().into_iter().zip(col_g.iter()) {
                        row *= 2.0 * w;
                    }
                    gc.scaled_add(-2.0, &g.t().dot(zv));
                    acc(&mut grads, *z, gz);
                    acc(&mut grads, *c, gc);
                }
                Op::LogClamp(x, lo, hi) => {
                    let mut gx = g.clone();
                    Zip::from(&mut gx)
                        .and(self.value(*x))
                        .for_each(|gi, &xi| {
                            if xi < *lo || xi > *hi {
                                *gi = 0.0;
                            } else {
                                *gi /= xi;
                            }
                        });
                    acc(&mut grads, *x, gx);
                }
                Op::CenterCols(x) => {
                    let mean = g.mean_axis(Axis(0)).expect("nonempty");
                    acc(&mut grads, *x, &g - &mean);
                }
                Op::LogDet(m, inv) => {
                    acc(&mut grads, *m, inv.t().to_owned() * g[[0, 0]]);
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

/// Lower-triangular Cholesky factor, `None` if `a` is not positive definite.
pub fn cholesky(a: &Tensor) -> Option<Tensor> {
    let n = a.nrows();
    let mut l = Tensor::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let ljj = d.sqrt();
        l[[j, j]] = ljj;
        for i in j + 1..n {
            let mut v = a[[i, j]];
            for k in 0..j {
                v -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = v / ljj;
        }
    }
    Some(l)
}

/// `(L L^T)^{-1}` from a Cholesky factor.
fn cholesky_inverse(l: &Tensor) -> Tensor {
    let n = l.nrows();
    // invert L by forward substitution, then A^{-1} = L^{-T} L^{-1}
    let mut linv = Tensor::zeros((n, n));
    for col in 0..n {
        for i in col..n {
            let mut v = if i == col { 1.0 } else { 0.0 };
            for k in col..i {
                v -= l[[i, k]] * linv[[k, col]];
            }
            linv[[i, col]] = v / l[[i, i]];
        }
    }
    linv.t().dot(&linv)
}
