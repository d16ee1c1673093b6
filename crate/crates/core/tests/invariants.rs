mod common;

use adamm::anomalyhead::{anomaly_score, centroids_of, diversity_term};
use adamm::baselines::{aggregate_inverse_rank, initial_labels, wl_features};
use adamm::graphdb::{generate_synthetic, Metadata, SynthKind};
use adamm::metrics::{auprc, auroc};
use adamm::model::Model;
use adamm::nnkernel::{Tape, Tensor};
use adamm::trainer::{rank_scores, ScoreRow};
use adamm::{Database, ModelConfig};
use common::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn graph_db(seed: u64, n: usize) -> Database {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| sample(format!("s{i}"), random_graph(&mut rng), i as f64))
        .collect();
    Database::new(samples).unwrap()
}

fn small_cfg() -> ModelConfig {
    ModelConfig {
        meta_gain: 1.0,
        ..ModelConfig::uniform(8)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn graph_embedding_ignores_node_and_edge_order(seed in any::<u64>()) {
        let db = graph_db(seed, 6);
        let model = Model::new(small_cfg(), &db.schema, 2, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let permuted: Vec<_> = db
            .samples
            .iter()
            .map(|s| adamm::Sample { graph: permute(&s.graph, &mut rng), ..s.clone() })
            .collect();
        let a = graph_embeddings(&model, &db.samples);
        let b = graph_embeddings(&model, &permuted);
        prop_assert!(max_abs_diff(&a, &b) <= 1e-9);
    }

    #[test]
    fn graph_embedding_ignores_parallel_edge_order(seed in any::<u64>()) {
        let db = graph_db(seed, 6);
        let model = Model::new(small_cfg(), &db.schema, 2, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xface);
        let shuffled: Vec<_> = db
            .samples
            .iter()
            .map(|s| adamm::Sample { graph: shuffle_parallel(&s.graph, &mut rng), ..s.clone() })
            .collect();
        let a = graph_embeddings(&model, &db.samples);
        let b = graph_embeddings(&model, &shuffled);
        prop_assert!(max_abs_diff(&a, &b) <= 1e-9);
    }

    #[test]
    fn wl_histogram_ignores_node_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng);
        let p = permute(&g, &mut rng);
        for h in [0, 1, 3] {
            let a = wl_features(&g, initial_labels(&g, None), h);
            let b = wl_features(&p, initial_labels(&p, None), h);
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn memberships_are_row_stochastic_and_centroids_in_hull(seed in any::<u64>()) {
        let db = graph_db(seed, 10);
        let model = Model::new(small_cfg(), &db.schema, 3, seed).unwrap();
        let (z, g) = model.embed(&model.encode(&db.samples)).unwrap();
        for row in g.rows() {
            prop_assert!(row.iter().all(|&x| (0.0..=1.0).contains(&x)));
            prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
        }
        let c = centroids_of(&z, &g);
        for (j, col) in z.columns().into_iter().enumerate() {
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for k in 0..c.nrows() {
                prop_assert!(c[[k, j]] >= lo - 1e-9 && c[[k, j]] <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn scores_follow_samples_under_reordering(seed in any::<u64>()) {
        let db = graph_db(seed, 10);
        let model = Model::new(small_cfg(), &db.schema, 2, seed).unwrap();
        let enc = model.encode(&db.samples);
        let (z, g) = model.embed(&enc).unwrap();
        let c = centroids_of(&z, &g);
        let mut order: Vec<usize> = (0..enc.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let shuffled: Vec<_> = order.iter().map(|&i| enc[i].clone()).collect();
        let (z2, g2) = model.embed(&shuffled).unwrap();
        let c2 = centroids_of(&z2, &g2);
        prop_assert!(max_abs_diff(&c, &c2) <= 1e-12);
        for (r, &i) in order.iter().enumerate() {
            let a = anomaly_score(z.row(i).as_slice().unwrap(), g.row(i).as_slice().unwrap(), &c);
            let b = anomaly_score(z2.row(r).as_slice().unwrap(), g2.row(r).as_slice().unwrap(), &c2);
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn auroc_is_rank_based(
        scores in prop::collection::vec(-5i32..5, 2..40),
        labels in prop::collection::vec(any::<bool>(), 40),
    ) {
        let labels = &labels[..scores.len()];
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let s: Vec<f64> = scores.iter().map(|&x| x as f64).collect();
        let a = auroc(&s, labels).unwrap();
        let mono: Vec<f64> = s.iter().map(|x| x.exp() * 3.0 - 1.0).collect();
        prop_assert!((auroc(&mono, labels).unwrap() - a).abs() <= 1e-12);
        prop_assert!((auprc(&mono, labels).unwrap() - auprc(&s, labels).unwrap()).abs() <= 1e-12);
        let neg: Vec<f64> = s.iter().map(|x| -x).collect();
        prop_assert!((auroc(&neg, labels).unwrap() + a - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn inverse_rank_rewards_better_ranks(n in 2usize..20, seed in any::<u64>(), pos in 1usize..20) {
        let pos = 1 + pos % (n - 1);
        let ids: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perm = ids.clone();
        perm.shuffle(&mut rng);
        let ranking = |order: &[String]| -> Vec<ScoreRow> {
            let scores: Vec<f64> = (0..order.len()).map(|i| (order.len() - i) as f64).collect();
            rank_scores(order, &scores)
        };
        let a = ranking(&ids);
        let b = ranking(&perm);
        let mut better = ids.clone();
        better.swap(pos, pos - 1);
        let before = aggregate_inverse_rank(&a, &b).unwrap();
        let after = aggregate_inverse_rank(&ranking(&better), &b).unwrap();
        let score = |rows: &[ScoreRow], id: &str| rows.iter().find(|r| r.sample_id == id).unwrap().score;
        prop_assert!(score(&after, &ids[pos]) > score(&before, &ids[pos]));
    }

    #[test]
    fn diversity_grows_as_centroids_collapse(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = Tensor::from_shape_fn((3, 2), |_| rand::Rng::random_range(&mut rng, -2.0..2.0));
        let mean = base.mean_axis(ndarray::Axis(0)).unwrap();
        let mut last = f64::NEG_INFINITY;
        for t in [1.0, 0.5, 0.25, 0.1, 0.0] {
            let c = (&base - &mean) * t + &mean;
            let mut tape = Tape::new();
            let cv = tape.constant(c);
            let d = diversity_term(&mut tape, cv).unwrap();
            let v = tape.scalar(d);
            prop_assert!(v >= last - 1e-9);
            last = v;
        }
    }
}

#[test]
fn metadata_embedding_ignores_record_order() {
    let db = generate_synthetic(SynthKind::Mobility, 12, 1, 3).unwrap();
    let model = Model::new(small_cfg(), &db.schema, 2, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let shuffled: Vec<_> = db
        .samples
        .iter()
        .map(|s| {
            let mut s = s.clone();
            if let Metadata::Multiset { records } = &mut s.meta {
                records.shuffle(&mut rng);
            }
            s
        })
        .collect();
    let (m1, z1) = meta_and_joint(&model, &db.samples);
    let (m2, z2) = meta_and_joint(&model, &shuffled);
    assert!(max_abs_diff(&m1, &m2) <= 1e-9);
    assert!(max_abs_diff(&z1, &z2) <= 1e-9);
}
