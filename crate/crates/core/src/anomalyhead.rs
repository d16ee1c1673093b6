//! Soft clustering head: membership estimation, weighted centroids, the
//! distance-based anomaly score, and the training objective with its entropy
//! and diversity regularizers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nnkernel::{Mlp, NnError, ParamStore, Tape, Tensor, Var};

pub const CENTROID_EPS: f64 = 1e-12;
pub const ENTROPY_CLAMP: f64 = 1e-12;
pub const DIVERSITY_RIDGE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MembershipNet {
    pub mlp: Mlp,
    pub k: usize,
}

impl MembershipNet {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        d: usize,
        hidden: usize,
        k: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        Ok(MembershipNet {
            mlp: Mlp::new(store, "men", &[d, hidden, k], rng)?,
            k,
        })
    }

    /// `softmax(MLP(Z))`, N x K.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], z: Var) -> Result<Var, NnError> {
        let logits = self.mlp.forward(tape, vars, z)?;
        tape.softmax_rows(logits)
    }
}

/// `c_k = sum_i g_ik Z_i / (sum_i g_ik + eps)`, K x d.
pub fn centroids(tape: &mut Tape, z: Var, gamma: Var) -> Result<Var, NnError> {
    let gt = tape.transpose(gamma);
    let num = tape.matmul(gt, z)?;
    let mass = tape.col_sum(gamma);
    let mass = tape.transpose(mass);
    let mass = tape.add_const(mass, CENTROID_EPS);
    tape.div_rows(num, mass)
}

/// Per-row `sum_k g_ik ||Z_i - c_k||^2`, N x 1.
pub fn weighted_distances(tape: &mut Tape, z: Var, gamma: Var, c: Var) -> Result<Var, NnError> {
    let d = tape.sq_dist(z, c)?;
    let w = tape.mul(d, gamma)?;
    let ones = tape.constant(Tensor::ones((tape.shape(c).0, 1)));
    tape.matmul(w, ones)
}

/// Mean row entropy of the memberships.
pub fn entropy_term(tape: &mut Tape, gamma: Var) -> Result<Var, NnError> {
    let n = tape.shape(gamma).0;
    let lg = tape.log_clamp(gamma, ENTROPY_CLAMP, 1.0);
    let p = tape.mul(gamma, lg)?;
    let s = tape.sum_all(p);
    Ok(tape.scale(s, -1.0 / n as f64))
}

/// `-logdet(Cov(C) + ridge I)` with centroid rows as observations; zero for one centroid.
pub fn diversity_term(tape: &mut Tape, c: Var) -> Result<Var, NnError> {
    let k = tape.shape(c).0;
    if k < 2 {
        return Ok(tape.constant(Tensor::zeros((1, 1))));
    }
    let centered = tape.center_cols(c);
    let ct = tape.transpose(centered);
    let cov = tape.matmul(ct, centered)?;
    let cov = tape.scale(cov, 1.0 / (k - 1) as f64);
    let ld = tape.logdet_ridge(cov, DIVERSITY_RIDGE)?;
    Ok(tape.scale(ld, -1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub distance: f64,
    pub entropy: f64,
    pub diversity: f64,
    pub total: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

pub struct ObjectiveVars {
    pub total: Var,
    pub distance: Var,
    pub entropy: Var,
    pub diversity: Var,
    pub centroids: Var,
}

/// Batch objective `distance + l1 * entropy + l2 * diversity`, with centroids and
/// memberships computed in-batch and differentiated through.
pub fn objective(
    tape: &mut Tape,
    z: Var,
    gamma: Var,
    lambda1: f64,
    lambda2: f64,
) -> Result<(ObjectiveVars, LossBreakdown), NnError> {
    let n = tape.shape(z).0;
    let c = centroids(tape, z, gamma)?;
    let wd = weighted_distances(tape, z, gamma, c)?;
    let dsum = tape.sum_all(wd);
    let distance = tape.scale(dsum, 1.0 / n as f64);
    let entropy = entropy_term(tape, gamma)?;
    let diversity = diversity_term(tape, c)?;
    let e = tape.scale(entropy, lambda1);
    let dv = tape.scale(diversity, lambda2);
    let total = tape.add(distance, e)?;
    let total = tape.add(total, dv)?;
    let lb = LossBreakdown {
        distance: tape.scalar(distance),
        entropy: tape.scalar(entropy),
        diversity: tape.scalar(diversity),
        total: tape.scalar(total),
        lambda1,
        lambda2,
    };
    if !lb.total.is_finite() {
        return Err(NnError::NonFinite { op: "objective" });
    }
    Ok((
        ObjectiveVars {
            total,
            distance,
            entropy,
            diversity,
            centroids: c,
        },
        lb,
    ))
}

/// Plain-value centroids over a full embedding matrix.
pub fn centroids_of(z: &Tensor, gamma: &Tensor) -> Tensor {
    let num = gamma.t().dot(z);
    let mass = gamma.sum_axis(ndarray::Axis(0));
    let mut c = num;
    for (mut row, m) in c.rows_mut().into_iter().zip(mass.iter()) {
        row /= m + CENTROID_EPS;
    }
    c
}

/// `sum_k g_k ||z - c_k||^2` for one embedding.
pub fn anomaly_score(z: &[f64], gamma: &[f64], c: &Tensor) -> f64 {
    c.rows()
        .into_iter()
        .zip(gamma)
        .map(|(ck, g)| {
            let d: f64 = ck.iter().zip(z).map(|(a, b)| (b - a) * (b - a)).sum();
            g * d
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn membership_k1_and_zeroed() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let men = MembershipNet::new(&mut store, 3, 4, 1, &mut rng).unwrap();
        let mut t = Tape::new();
        let vars = store.bind(&mut t);
        let z = t.constant(array![[1.0, -2.0, 0.5], [3.0, 0.0, 1.0]]);
        let g = men.forward(&mut t, &vars, z).unwrap();
        assert_eq!(t.value(g), &array![[1.0], [1.0]]);

        let mut store = ParamStore::new();
        let men = MembershipNet::new(&mut store, 3, 4, 4, &mut rng).unwrap();
        for v in store.values_mut() {
            v.fill(0.0);
        }
        let mut t = Tape::new();
        let vars = store.bind(&mut t);
        let z = t.constant(array![[1.0, -2.0, 0.5]]);
        let g = men.forward(&mut t, &vars, z).unwrap();
        assert_eq!(t.value(g), &array![[0.25, 0.25, 0.25, 0.25]]);
    }

    #[test]
    fn weighted_centroid_example() {
        let mut t = Tape::new();
        let z = t.leaf(array![[0.0], [4.0]]);
        let g = t.leaf(array![[0.75], [0.25]]);
        let c = centroids(&mut t, z, g).unwrap();
        assert_abs_diff_eq!(t.value(c)[[0, 0]], 1.0, epsilon = 1e-11);
        let plain = centroids_of(&array![[0.0], [4.0]], &array![[0.75], [0.25]]);
        assert_abs_diff_eq!(plain[[0, 0]], 1.0, epsilon = 1e-11);
    }

    #[test]
    fn score_examples() {
        let c = array![[1.0], [-2.0]];
        assert_eq!(anomaly_score(&[0.0], &[0.5, 0.5], &c), 2.5);
        assert_eq!(anomaly_score(&[1.0], &[1.0, 0.0], &c), 0.0);
    }

    #[test]
    fn entropy_examples() {
        let mut t = Tape::new();
        let g = t.leaf(Tensor::from_elem((3, 4), 0.25));
        let h = entropy_term(&mut t, g).unwrap();
        assert_abs_diff_eq!(t.scalar(h), 4f64.ln(), epsilon = 1e-12);
        let g = t.leaf(array![[1.0, 0.0], [0.0, 1.0]]);
        let h = entropy_term(&mut t, g).unwrap();
        assert_abs_diff_eq!(t.scalar(h), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn diversity_examples() {
        let mut t = Tape::new();
        let c = t.leaf(array![[0.0], [2.0]]);
        let d = diversity_term(&mut t, c).unwrap();
        assert_abs_diff_eq!(t.scalar(d), -(2.0001f64).ln(), epsilon = 1e-12);
        let c = t.leaf(array![[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]]);
        let d = diversity_term(&mut t, c).unwrap();
        assert_abs_diff_eq!(t.scalar(d), -3.0 * DIVERSITY_RIDGE.ln(), epsilon = 1e-6);
        let c = t.leaf(array![[1.0, 2.0]]);
        let d = diversity_term(&mut t, c).unwrap();
        assert_eq!(t.scalar(d), 0.0);
    }

    #[test]
    fn k1_objective_is_mean_sq_distance() {
        let zv = array![[1.0, 2.0], [3.0, -1.0], [0.0, 0.5]];
        let mut t = Tape::new();
        let z = t.leaf(zv.clone());
        let g = t.leaf(Tensor::ones((3, 1)));
        let (_, lb) = objective(&mut t, z, g, 0.1, 0.0).unwrap();
        let mean = zv.mean_axis(ndarray::Axis(0)).unwrap();
        let direct: f64 = zv
            .rows()
            .into_iter()
            .map(|r| r.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .sum::<f64>()
            / 3.0;
        assert_abs_diff_eq!(lb.total, direct, epsilon = 1e-9);
        assert_abs_diff_eq!(lb.total, lb.distance + 0.1 * lb.entropy + 0.0 * lb.diversity, epsilon = 1e-12);
    }
}
