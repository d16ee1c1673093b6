mod common;

use adamm::metrics::{auprc, auroc, metric_report, signed_rank, wilcoxon_signed_rank, MetricError};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn instance<R: Rng>(rng: &mut R) -> (Vec<f64>, Vec<bool>) {
    loop {
        let n = rng.random_range(2..=50);
        // coarse grid so ties are common
        let levels = rng.random_range(2..12);
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 * 0.37).collect();
        let l: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        if l.iter().any(|&x| x) && l.iter().any(|&x| !x) {
            return (s, l);
        }
    }
}

#[test]
fn auroc_and_auprc_match_threshold_sweeps() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..200 {
        let (s, l) = instance(&mut rng);
        assert!((auroc(&s, &l).unwrap() - auroc_thresholds(&s, &l)).abs() <= 1e-12);
        assert!((auroc(&s, &l).unwrap() - auroc_pairwise(&s, &l)).abs() <= 1e-12);
        assert!((auprc(&s, &l).unwrap() - auprc_thresholds(&s, &l)).abs() <= 1e-12);
    }
}

#[test]
fn exact_wilcoxon_matches_sign_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in 1..=10 {
        for _ in 0..20 {
            let d: Vec<f64> = (0..n)
                .map(|_| {
                    let m = rng.random_range(1..5) as f64;
                    if rng.random_bool(0.5) { m } else { -m }
                })
                .collect();
            let (w, p) = wilcoxon_enumerated(&d);
            let r = signed_rank(&d);
            assert!(r.exact);
            assert_eq!(r.w_plus, w);
            assert!((r.p_value - p).abs() <= 1e-12, "n={n} {d:?}: {} vs {p}", r.p_value);
        }
    }
}

#[test]
fn metric_errors() {
    assert_eq!(
        auroc(&[1.0, 2.0], &[true, true]),
        Err(MetricError::SingleClass { n_pos: 2, n_neg: 0 })
    );
    assert_eq!(auprc(&[1.0], &[false]), Err(MetricError::NoPositives));
    assert!(matches!(auroc(&[f64::NAN, 1.0], &[true, false]), Err(MetricError::NonFinite(0))));
    assert!(matches!(
        wilcoxon_signed_rank(&[1.0, 2.0], &[0.0, 0.0]),
        Err(MetricError::TooFewPairs { n: 2, .. })
    ));
    assert_eq!(wilcoxon_signed_rank(&[1.0; 6], &[1.0; 6]), Err(MetricError::AllZero));
}

#[test]
fn per_type_report() {
    let scores = [0.9, 0.8, 0.1, 0.2, 0.7, 0.3];
    let types = [Some("GA1".into()), Some("MA1".into()), None, None, Some("GA1".into()), None];
    let r = metric_report(&scores, &types).unwrap();
    assert_eq!((r.n_pos, r.n_neg), (3, 3));
    assert_eq!(r.auroc, 1.0);
    assert_eq!(r.per_type["GA1"].n_pos, 2);
    assert_eq!(r.per_type["MA1"].auroc, 1.0);
}
