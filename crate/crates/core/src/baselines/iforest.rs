use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graphdb::{Database, FieldKind};

pub const DEFAULT_TREES: usize = 100;
pub const DEFAULT_SUBSAMPLE: usize = 256;

/// Expected path length of an unsuccessful BST search over `n` points.
pub fn c_factor(n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let harmonic: f64 = (1..n).map(|i| 1.0 / i as f64).sum();
    2.0 * harmonic - 2.0 * (n - 1) as f64 / n as f64
}

#[derive(Debug, Clone)]
enum TreeNode {
    Leaf { size: usize },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    fn grow<R: Rng>(x: &[Vec<f64>], rows: Vec<usize>, depth: usize, limit: usize, rng: &mut R) -> TreeNode {
        if depth >= limit || rows.len() <= 1 {
            return TreeNode::Leaf { size: rows.len() };
        }
        let p = x[rows[0]].len();
        let ranges: Vec<(usize, f64, f64)> = (0..p)
            .filter_map(|f| {
                let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                    (lo.min(x[r][f]), hi.max(x[r][f]))
                });
                (hi > lo).then_some((f, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return TreeNode::Leaf { size: rows.len() };
        }
        let (feature, lo, hi) = ranges[rng.random_range(0..ranges.len())];
        let threshold = rng.random_range(lo..hi);
        let (l, r): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&i| x[i][feature] < threshold);
        TreeNode::Split {
            feature,
            threshold,
            left: Box::new(TreeNode::grow(x, l, depth + 1, limit, rng)),
            right: Box::new(TreeNode::grow(x, r, depth + 1, limit, rng)),
        }
    }

    fn path_length(&self, point: &[f64]) -> f64 {
        let mut node = self;
        let mut depth = 0.0;
        loop {
            match node {
                TreeNode::Leaf { size } => return depth + c_factor(*size),
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if point[*feature] < *threshold { left } else { right };
                    depth += 1.0;
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct IsolationForest {
    trees: Vec<TreeNode>,
    subsample: usize,
}

impl IsolationForest {
    /// Tree `t` draws from its own stream of the master seed.
    pub fn fit(x: &[Vec<f64>], trees: usize, subsample: usize, seed: u64) -> IsolationForest {
        let psi = subsample.min(x.len()).max(1);
        let limit = (psi as f64).log2().ceil() as usize;
        let trees = (0..trees)
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(t as u64);
                let rows = sample(&mut rng, x.len(), psi).into_vec();
                TreeNode::grow(x, rows, 0, limit, &mut rng)
            })
            .collect();
        IsolationForest { trees, subsample: psi }
    }

    /// `2^(-E[h(x)] / c(psi))`, in (0, 1].
    pub fn score(&self, point: &[f64]) -> f64 {
        let mean = self.trees.iter().map(|t| t.path_length(point)).sum::<f64>() / self.trees.len() as f64;
        let c = c_factor(self.subsample);
        if c == 0.0 {
            return 0.5;
        }
        2f64.powf(-mean / c)
    }
}

/// One row per metadata record: one column per numeric or flag field,
/// standardized days and weekday index per date, a one-hot block per
/// categorical, and one column per date gap. Also returns the owning sample of
/// each row.
pub fn metadata_matrix(db: &Database) -> (Vec<Vec<f64>>, Vec<usize>) {
    let schema = &db.schema;
    let vocab_sizes: Vec<usize> = schema.categorical_fields().iter().map(|c| c.1).collect();
    let mut rows = Vec::new();
    let mut owner = Vec::new();
    for (i, s) in db.samples.iter().enumerate() {
        for r in s.meta.records() {
            let (dense, cats) = schema.encode_record(r);
            let (mut d, mut c) = (dense.iter(), cats.iter().zip(&vocab_sizes));
            let mut row = Vec::new();
            for f in &schema.fields {
                match f.kind {
                    FieldKind::Numeric { .. } | FieldKind::Flag(_) => row.push(*d.next().unwrap()),
                    FieldKind::Date(_) => {
                        row.push(*d.next().unwrap());
                        let one_hot: Vec<f64> = d.by_ref().take(7).copied().collect();
                        let dow = one_hot.iter().position(|&x| x == 1.0);
                        row.push(dow.map_or(-1.0, |k| k as f64));
                    }
                    FieldKind::Categorical { .. } => {
                        let (&id, &size) = c.next().unwrap();
                        row.extend((0..size).map(|k| f64::from(u8::from(k == id))));
                    }
                }
            }
            row.extend(d);
            rows.push(row);
            owner.push(i);
        }
    }
    (rows, owner)
}

/// Isolation-forest score per sample; samples with several records take their
/// most anomalous record.
pub fn metadata_scores(db: &Database, trees: usize, subsample: usize, seed: u64) -> Vec<f64> {
    let (x, owner) = metadata_matrix(db);
    let forest = IsolationForest::fit(&x, trees, subsample, seed);
    let mut out = vec![0.0f64; db.len()];
    for (row, &i) in x.iter().zip(&owner) {
        out[i] = out[i].max(forest.score(row));
    }
    out
}
