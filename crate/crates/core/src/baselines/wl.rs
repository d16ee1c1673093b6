use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest, Sha256};

use crate::graphdb::{Database, MultiGraph, NodeFeature};

/// Labels longer than this are replaced by a short digest.
const MAX_LABEL_LEN: usize = 32;
pub const DECILES: usize = 10;

/// Label string -> count, summed over iterations `0..=h`.
pub type WlHistogram = BTreeMap<String, usize>;

/// Decile cut points per attribute dimension, used to turn continuous node
/// attributes into categorical labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Bucketizer {
    cuts: Vec<Vec<f64>>,
}

impl Bucketizer {
    pub fn fit(db: &Database) -> Option<Bucketizer> {
        let dim = db.schema.node_attr_dim()?;
        let mut cols = vec![Vec::new(); dim];
        for s in &db.samples {
            for n in &s.graph.nodes {
                if let NodeFeature::Attrs { attrs } = &n.feature {
                    for (c, x) in cols.iter_mut().zip(attrs) {
                        c.push(*x);
                    }
                }
            }
        }
        let cuts = cols
            .into_iter()
            .map(|mut c| {
                c.sort_by(f64::total_cmp);
                (1..DECILES)
                    .filter_map(|q| c.get(q * c.len() / DECILES).copied())
                    .collect()
            })
            .collect();
        Some(Bucketizer { cuts })
    }

    pub fn label(&self, attrs: &[f64]) -> String {
        let parts: Vec<String> = attrs
            .iter()
            .zip(&self.cuts)
            .map(|(x, cuts)| cuts.iter().filter(|c| x >= c).count().to_string())
            .collect();
        format!("q{}", parts.join("_"))
    }
}

/// Starting labels indexed by node id, whatever the order of `g.nodes`.
pub fn initial_labels(g: &MultiGraph, buckets: Option<&Bucketizer>) -> Vec<String> {
    let mut out = vec![String::new(); g.nodes.len()];
    for n in &g.nodes {
        out[n.id] = match (&n.feature, buckets) {
            (NodeFeature::Label { label }, _) => label.clone(),
            (NodeFeature::Attrs { attrs }, Some(b)) => b.label(attrs),
            (NodeFeature::Attrs { .. }, None) => String::new(),
        };
    }
    out
}

fn compress(label: String) -> String {
    if label.len() <= MAX_LABEL_LEN {
        return label;
    }
    let digest = Sha256::digest(label.as_bytes());
    let hex: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
    format!("#{hex}")
}

/// Undirected neighbour sets after collapsing parallel edges; a self-loop makes
/// a node its own neighbour once.
fn neighbours(g: &MultiGraph) -> Vec<BTreeSet<usize>> {
    let mut nb = vec![BTreeSet::new(); g.nodes.len()];
    for e in &g.edges {
        nb[e.src].insert(e.dst);
        nb[e.dst].insert(e.src);
    }
    nb
}

/// WL relabelling `own|[sorted neighbour labels]`, histogram over iterations `0..=h`.
pub fn wl_features(g: &MultiGraph, labels0: Vec<String>, h: usize) -> WlHistogram {
    let nb = neighbours(g);
    let mut hist = WlHistogram::new();
    let mut labels = labels0;
    for it in 0..=h {
        if it > 0 {
            labels = (0..labels.len())
                .map(|v| {
                    let mut ns: Vec<&str> = nb[v].iter().map(|&u| labels[u].as_str()).collect();
                    ns.sort_unstable();
                    compress(format!("{}|[{}]", labels[v], ns.join(",")))
                })
                .collect();
        }
        for l in &labels {
            *hist.entry(l.clone()).or_insert(0) += 1;
        }
    }
    hist
}

/// `1 - mean_j cos(h_i, h_j)` (j ranges over all histograms including i).
/// An all-zero histogram scores 1.
pub fn one_class_scores(hists: &[WlHistogram]) -> Vec<f64> {
    let n = hists.len() as f64;
    let unit: Vec<BTreeMap<&str, f64>> = hists
        .iter()
        .map(|h| {
            let norm = h.values().map(|&c| (c * c) as f64).sum::<f64>().sqrt();
            if norm == 0.0 {
                return BTreeMap::new();
            }
            h.iter().map(|(k, &c)| (k.as_str(), c as f64 / norm)).collect()
        })
        .collect();
    let mut total: BTreeMap<&str, f64> = BTreeMap::new();
    for u in &unit {
        for (k, v) in u {
            *total.entry(k).or_insert(0.0) += v;
        }
    }
    unit.iter()
        .map(|u| {
            if u.is_empty() {
                return 1.0;
            }
            let dot: f64 = u.iter().map(|(k, v)| v * total.get(k).copied().unwrap_or(0.0)).sum();
            (1.0 - dot / n).clamp(0.0, 1.0)
        })
        .collect()
}

/// WL + mean-cosine one-class scores for every sample of `db`.
pub fn wl_scores(db: &Database, h: usize) -> Vec<f64> {
    let buckets = Bucketizer::fit(db);
    let hists: Vec<_> = db
        .samples
        .iter()
        .map(|s| wl_features(&s.graph, initial_labels(&s.graph, buckets.as_ref()), h))
        .collect();
    one_class_scores(&hists)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphdb::{Edge, Node};

    fn g(labels: &[&str], edges: &[(usize, usize)]) -> MultiGraph {
        MultiGraph {
            nodes: labels.iter().enumerate().map(|(i, l)| Node::labeled(i, *l)).collect(),
            edges: edges.iter().map(|&(u, v)| Edge::new(u, v, vec![1.0])).collect(),
        }
    }

    fn hist(g: &MultiGraph, h: usize) -> WlHistogram {
        wl_features(g, initial_labels(g, None), h)
    }

    #[test]
    fn wl_examples() {
        let a = g(&["a", "a", "b"], &[]);
        assert_eq!(hist(&a, 0), BTreeMap::from([("a".into(), 2), ("b".into(), 1)]));
        let p = g(&["a", "a"], &[(0, 1), (0, 1)]);
        assert_eq!(hist(&p, 1), BTreeMap::from([("a".into(), 2), ("a|[a]".into(), 2)]));
        // relabelled copy of a path
        let x = g(&["a", "b", "c"], &[(0, 1), (1, 2)]);
        let y = g(&["c", "b", "a"], &[(1, 0), (2, 1)]);
        assert_eq!(wl_features(&x, initial_labels(&x, None), 3), wl_features(&y, initial_labels(&y, None), 3));
    }

    #[test]
    fn long_labels_are_compressed() {
        let star = g(&["center", "leaf_one", "leaf_two", "leaf_three"], &[(0, 1), (0, 2), (0, 3)]);
        let h = wl_features(&star, initial_labels(&star, None), 1);
        assert!(h.keys().all(|k| k.len() <= MAX_LABEL_LEN));
    }

    #[test]
    fn one_class_examples() {
        let same = vec![WlHistogram::from([("a".into(), 2)]); 4];
        assert!(one_class_scores(&same).iter().all(|s| s.abs() < 1e-12));
        let mut mixed = vec![WlHistogram::from([("a".into(), 2)]); 4];
        mixed.push(WlHistogram::from([("z".into(), 1)]));
        mixed.push(WlHistogram::new());
        let s = one_class_scores(&mixed);
        assert_eq!(s[5], 1.0);
        assert!(s[4] > s[0]);
        assert!(s.iter().all(|x| (0.0..=1.0).contains(x)));
    }
}
