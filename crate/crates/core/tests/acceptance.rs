//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails. `ADAMM_CRITERIA=1,4,7` restricts the run.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use adamm::anomalyhead::{diversity_term, entropy_term, objective, DIVERSITY_RIDGE};
use adamm::baselines::{metadata_scores, wl_scores, DEFAULT_SUBSAMPLE, DEFAULT_TREES};
use adamm::graphdb::{generate_synthetic, MetaValue, Metadata, NodeFeature, SynthKind};
use adamm::injector::*;
use adamm::metrics::{auprc, auroc, signed_rank};
use adamm::model::{Batch, Model};
use adamm::nnkernel::{grad_check, Evaluation, Tape, Tensor};
use adamm::trainer::{run_grid, score_samples, CentroidMode, GridSpec};
use adamm::{Database, ModelConfig, Sample};
use common::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(pass: bool, detail: String) -> Outcome {
    if pass {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ADAMM_CRITERIA")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn() -> Outcome); 9] = [
        (1, "gradient check of the full objective", gradients),
        (2, "permutation invariance", permutations),
        (3, "loss degeneracies", degeneracies),
        (4, "injection audit", injection_audit),
        (5, "end-to-end detection and model selection value (criteria 5, 6)", end_to_end),
        (7, "metric oracles", metric_oracles),
        (8, "single-modality baselines", baselines),
        (9, "deterministic training", determinism),
        (10, "labels never reach training", no_labels),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t0 = Instant::now();
        let res = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            Err(format!(
                "panicked: {}",
                e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
            ))
        });
        let secs = t0.elapsed().as_secs_f64();
        // 5 and 6 share one experiment and report on two lines
        for line in match &res {
            Ok(d) | Err(d) => d.lines().map(str::to_string).collect::<Vec<_>>(),
        } {
            let (num, rest) = match line.split_once('|') {
                Some((n, r)) if n.parse::<usize>().is_ok() => (n.to_string(), r),
                _ => (id.to_string(), line.as_str()),
            };
            let verdict = if rest.starts_with("FAIL") || (res.is_err() && !rest.starts_with("PASS")) {
                failed += 1;
                "FAIL"
            } else {
                "PASS"
            };
            let rest = rest.trim_start_matches("PASS ").trim_start_matches("FAIL ");
            println!("criterion {num:>2} {verdict}  {name}: {rest} [{secs:.1}s]");
        }
    }
    if failed > 0 {
        println!("{failed} criterion line(s) failed");
        std::process::exit(1);
    }
}

fn gradients() -> Outcome {
    let t0 = Instant::now();
    let db = generate_synthetic(SynthKind::Bookkeeping, 40, 2, 9).unwrap();
    let cfg = ModelConfig {
        joint_dim: 8,
        ..ModelConfig::uniform(8)
    };
    let model = Model::new(cfg, &db.schema, 2, 42).unwrap();
    let enc = model.encode(&db.samples[..8]);
    let refs: Vec<_> = enc.iter().collect();
    let batch = Batch::assemble(&refs, &db.schema);
    let net = model.net.clone();
    let mut params = model.params.clone();
    let report = grad_check(&mut params, 1e-4, |p, want| {
        let mut t = Tape::with_branch_tracking();
        let vars = p.bind(&mut t);
        let f = net.forward(&mut t, &vars, &batch)?;
        let (ov, _) = objective(&mut t, f.joint.z, f.gamma, 0.1, 0.1)?;
        let grads = if want {
            p.collect_grads(&t.backward(ov.total)?, &vars)
        } else {
            Vec::new()
        };
        Ok(Evaluation {
            loss: t.scalar(ov.total),
            grads,
            branch: t.branch_signature(),
        })
    })
    .unwrap();
    let secs = t0.elapsed().as_secs_f64();
    check(
        report.passed && secs < 30.0,
        format!(
            "max rel err {:.2e} over {} entries ({} refined, {} skipped at kinks), {secs:.1}s",
            report.max_rel_err, report.checked, report.refined, report.skipped
        ),
    )
}

fn permutations() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let samples: Vec<Sample> = (0..200)
        .map(|i| sample(format!("g{i}"), random_graph(&mut rng), rng.random_range(1.0..1e4)))
        .collect();
    let db = Database::new(samples).unwrap();
    let model = Model::new(ModelConfig::default(), &db.schema, 2, 0).unwrap();
    let base = graph_embeddings(&model, &db.samples);
    let (mut node_err, mut multi_err) = (0.0f64, 0.0f64);
    for _ in 0..5 {
        let p: Vec<Sample> = db
            .samples
            .iter()
            .map(|s| Sample {
                graph: permute(&s.graph, &mut rng),
                ..s.clone()
            })
            .collect();
        node_err = node_err.max(max_abs_diff(&base, &graph_embeddings(&model, &p)));
        let m: Vec<Sample> = db
            .samples
            .iter()
            .map(|s| Sample {
                graph: shuffle_parallel(&s.graph, &mut rng),
                ..s.clone()
            })
            .collect();
        multi_err = multi_err.max(max_abs_diff(&base, &graph_embeddings(&model, &m)));
    }
    let mob = generate_synthetic(SynthKind::Mobility, 200, 2, 5).unwrap();
    let mmodel = Model::new(ModelConfig::default(), &mob.schema, 2, 0).unwrap();
    let (zm, z) = meta_and_joint(&mmodel, &mob.samples);
    let mut meta_err = 0.0f64;
    for _ in 0..5 {
        let shuffled: Vec<Sample> = mob
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
        let (zm2, z2) = meta_and_joint(&mmodel, &shuffled);
        meta_err = meta_err.max(max_abs_diff(&zm, &zm2)).max(max_abs_diff(&z, &z2));
    }
    let secs = t0.elapsed().as_secs_f64();
    check(
        node_err <= 1e-9 && multi_err <= 1e-9 && meta_err <= 1e-9 && secs < 60.0,
        format!(
            "max |dZ| node/edge {node_err:.1e}, multi-edge {multi_err:.1e}, records {meta_err:.1e}, {secs:.1}s"
        ),
    )
}

fn degeneracies() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n, d) = (16, 8);
    let z = Tensor::from_shape_fn((n, d), |_| rng.random_range(-3.0..3.0));
    let mean = z.mean_axis(ndarray::Axis(0)).unwrap();
    let want: f64 = z
        .rows()
        .into_iter()
        .map(|r| r.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum::<f64>()
        / n as f64;
    let mut t = Tape::new();
    let zv = t.constant(z);
    let g1 = t.constant(Tensor::ones((n, 1)));
    let (_, lb) = objective(&mut t, zv, g1, 0.3, 0.7).unwrap();
    let k1_err = (lb.total - want).abs();

    let k = 4;
    let gu = t.constant(Tensor::from_elem((n, k), 1.0 / k as f64));
    let h = entropy_term(&mut t, gu).unwrap();
    let h_err = (t.scalar(h) - (k as f64).ln()).abs();

    let row = Tensor::from_shape_fn((1, d), |_| rng.random_range(-1.0..1.0));
    let same = t.constant(ndarray::concatenate![ndarray::Axis(0), row, row, row]);
    let dv = diversity_term(&mut t, same).unwrap();
    let d_err = (t.scalar(dv) + d as f64 * DIVERSITY_RIDGE.ln()).abs();
    check(
        k1_err <= 1e-9 && h_err <= 1e-9 && d_err <= 1e-6,
        format!("K=1 {k1_err:.1e}, uniform entropy {h_err:.1e}, identical centroids {d_err:.1e}"),
    )
}

fn num(s: &Sample, rec: usize, field: &str) -> f64 {
    match &s.meta.records()[rec][field] {
        MetaValue::Num(x) => *x,
        other => panic!("{field} is {other:?}"),
    }
}

fn days(s: &Sample, field: &str) -> i64 {
    match &s.meta.records()[0][field] {
        MetaValue::Str(x) => adamm::graphdb::date_to_days(adamm::graphdb::parse_date(x).unwrap()),
        other => panic!("{field} is {other:?}"),
    }
}

fn injection_deltas() -> Result<(), String> {
    let book = generate_synthetic(SynthKind::Bookkeeping, 300, 2, 17).unwrap();
    let mob = generate_synthetic(SynthKind::Mobility, 300, 2, 17).unwrap();
    let vocab: Vec<String> = book.schema.label_vocab().unwrap().to_vec();
    let eligible_ma1: Vec<&Sample> = book.samples.iter().filter(|s| ma1_eligible(s)).collect();
    let err = |t: &str, i: u64, what: &str| Err(format!("{t} injection {i}: {what}"));
    for i in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(i);
        let base = &book.samples[i as usize % book.len()];

        let mut s = base.clone();
        inject_ga1(&mut s, &vocab, &mut rng).map_err(|e| e.to_string())?;
        let changed: Vec<usize> = (0..s.graph.nodes.len())
            .filter(|&j| s.graph.nodes[j] != base.graph.nodes[j])
            .collect();
        let relabelled = changed.len() == 1
            && matches!(s.graph.nodes[changed[0]].feature, NodeFeature::Label { .. })
            && s.graph.nodes[changed[0]].id == base.graph.nodes[changed[0]].id;
        if !relabelled || s.graph.edges != base.graph.edges || s.meta != base.meta {
            return err("GA1", i, "not exactly one label changed");
        }

        let base2 = book.samples[i as usize % book.len()..]
            .iter()
            .chain(&book.samples)
            .find(|s| s.graph.edges.iter().any(|e| !e.is_loop()))
            .unwrap();
        let mut s = base2.clone();
        inject_ga2(&mut s, Some(&vocab), &mut rng).map_err(|e| e.to_string())?;
        if s.graph.nodes.len() != base2.graph.nodes.len() + 1 || s.graph.edges.len() != base2.graph.edges.len() + 1 {
            return err("GA2", i, "size delta is not (+1, +1)");
        }

        let base1 = eligible_ma1[i as usize % eligible_ma1.len()];
        let mut s = base1.clone();
        inject_ma1(&mut s, &mut rng).map_err(|e| e.to_string())?;
        let gap = days(&s, ENTRY_DATE) - days(&s, EFFECTIVE_DATE);
        if !MA1_SHIFTS.contains(&gap) || days(&s, EFFECTIVE_DATE) != days(base1, EFFECTIVE_DATE) {
            return err("MA1", i, &format!("gap {gap}"));
        }

        let other = &book.samples[(i as usize + 1) % book.len()];
        let m = inject_ma2(base, other, format!("m{i}"), &mut rng).map_err(|e| e.to_string())?;
        let fields_ok = m.meta.records()[0]
            .iter()
            .all(|(k, v)| base.meta.records()[0][k] == *v || other.meta.records()[0][k] == *v);
        if m.graph.nodes.len() != base.graph.nodes.len() + other.graph.nodes.len()
            || m.graph.edges.len() != base.graph.edges.len() + other.graph.edges.len()
            || !fields_ok
        {
            return err("MA2", i, "union sizes or field origins wrong");
        }

        let trip = &mob.samples[i as usize % mob.len()];
        let mut s = trip.clone();
        let Mutation::MetaField { record, .. } = inject_ma3(&mut s, &mut rng).map_err(|e| e.to_string())? else {
            return err("MA3", i, "unexpected mutation");
        };
        let st = num(&s, record, START_TIME);
        let in_range = (MA3_EARLY.0..=MA3_EARLY.1).contains(&st) || (MA3_LATE.0..=MA3_LATE.1).contains(&st);
        if !in_range {
            return err("MA3", i, &format!("start {st}"));
        }

        let mut s = trip.clone();
        let Mutation::MetaField { record, .. } = inject_ma4(&mut s, &mut rng).map_err(|e| e.to_string())? else {
            return err("MA4", i, "unexpected mutation");
        };
        let (old, new) = (num(trip, record, DURATION), num(&s, record, DURATION));
        let factor = if old > 0.0 { new / old } else { new };
        if !(MA4_FACTOR.0 - 1e-12..=MA4_FACTOR.1 + 1e-12).contains(&factor) {
            return err("MA4", i, &format!("factor {factor}"));
        }
    }
    Ok(())
}

fn benchmark_audit() -> Result<usize, String> {
    let book = generate_synthetic(SynthKind::Bookkeeping, 2000, 2, 0).unwrap();
    let mob = generate_synthetic(SynthKind::Mobility, 600, 2, 0).unwrap();
    let cases = [
        (&book, "GA1"),
        (&book, "GA2"),
        (&book, "MA1"),
        (&book, "MA2"),
        (&mob, "MA3"),
        (&mob, "MA4"),
        (&book, "GA1+MA1"),
        (&book, "GA1,GA2,MA1,MA2"),
    ];
    let mut checked = 0;
    for (db, types) in cases {
        for seed in 0..3 {
            let spec = InjectionSpec::parse(types, DEFAULT_RATE, seed).unwrap();
            let b = build_benchmark(db, &spec).map_err(|e| e.to_string())?;
            let (_, clean) = split_half(db, seed);
            let want = (DEFAULT_RATE * clean.len() as f64).floor() as usize;
            let labelled = b.test.samples.iter().filter(|s| s.eval_label.as_ref().unwrap().is_anomalous()).count();
            if b.log.len() != want || labelled != want {
                return Err(format!("{types} seed {seed}: {} injected, expected {want}", b.log.len()));
            }
            let log = log_from_jsonl(&log_to_jsonl(&b.log)).map_err(|e| e.to_string())?;
            let restored = revert(&b.test.samples, &log).map_err(|e| e.to_string())?;
            let a: String = restored.iter().map(|s| s.to_json_line() + "\n").collect();
            let c: String = clean.iter().map(|s| s.to_json_line() + "\n").collect();
            if a != c {
                return Err(format!("{types} seed {seed}: reverted test half differs"));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

fn injection_audit() -> Outcome {
    let deltas = injection_deltas();
    let audit = benchmark_audit();
    match (deltas, audit) {
        (Ok(()), Ok(n)) => Ok(format!(
            "1000 seeded injections per type meet their deltas; {n} benchmarks have exact counts and revert byte-exactly"
        )),
        (d, a) => Err(format!("{:?} / {:?}", d.err(), a.err())),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn end_to_end() -> Outcome {
    let t0 = Instant::now();
    let mut per_type: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut beats_mean = Vec::new();
    let mut log = Vec::new();
    for seed in 0..3u64 {
        let db = generate_synthetic(SynthKind::Bookkeeping, 2000, 2, seed).unwrap();
        for t in ["GA1", "GA2", "MA2"] {
            let b = build_benchmark(&db, &InjectionSpec::parse(t, DEFAULT_RATE, seed).unwrap()).unwrap();
            let labels = labels_of(&b.test);
            let spec = GridSpec::default();
            let grid = spec.expand(seed);
            let res = run_grid(&b.train, &spec.model, &grid).unwrap();
            let aucs: Vec<Option<f64>> = res
                .runs
                .iter()
                .map(|r| {
                    r.result.as_ref().ok().map(|m| {
                        auroc(&score_samples(m, &b.test, CentroidMode::Frozen).unwrap(), &labels).unwrap()
                    })
                })
                .collect();
            let ok: Vec<f64> = aucs.iter().flatten().copied().collect();
            let mean = ok.iter().sum::<f64>() / ok.len() as f64;
            let sel = aucs[res.selected].unwrap();
            per_type.entry(t).or_default().push(sel);
            if t == "GA1" {
                beats_mean.push(sel >= mean);
            }
            log.push(format!("{t}/s{seed} {sel:.3} (grid mean {mean:.3}, {} runs)", grid.len()));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let meds: BTreeMap<&str, f64> = per_type.into_iter().map(|(k, v)| (k, median(v))).collect();
    let c5 = meds["GA1"] >= 0.80 && meds["GA2"] >= 0.75 && meds["MA2"] >= 0.75;
    let wins = beats_mean.iter().filter(|&&b| b).count();
    let c6 = wins >= 2;
    let tag = |b: bool| if b { "PASS" } else { "FAIL" };
    let text = format!(
        "5|{} median AUROC GA1 {:.3}, GA2 {:.3}, MA2 {:.3}; {}; {secs:.0}s on {} thread(s)\n6|{} selected >= grid mean on GA1 in {wins}/3 seeds",
        tag(c5),
        meds["GA1"],
        meds["GA2"],
        meds["MA2"],
        log.join(", "),
        std::thread::available_parallelism().map_or(1, |n| n.get()),
        tag(c6),
    );
    check(c5 && c6, text)
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < 500 {
        let n = rng.random_range(2..=50);
        let levels = rng.random_range(2..30);
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / 7.0).collect();
        let l: Vec<bool> = (0..n).map(|_| rng.random_bool(0.35)).collect();
        if !(l.iter().any(|&x| x) && l.iter().any(|&x| !x)) {
            continue;
        }
        let a = auroc(&s, &l).unwrap();
        worst = worst
            .max((a - auroc_pairwise(&s, &l)).abs())
            .max((a - auroc_thresholds(&s, &l)).abs())
            .max((auprc(&s, &l).unwrap() - auprc_thresholds(&s, &l)).abs());
        done += 1;
    }
    let mut w_worst = 0.0f64;
    let mut w_count = 0;
    for n in 1..=10 {
        for _ in 0..50 {
            let d: Vec<f64> = (0..n)
                .map(|_| {
                    let m = rng.random_range(1..6) as f64 * 0.5;
                    if rng.random_bool(0.5) {
                        m
                    } else {
                        -m
                    }
                })
                .collect();
            let (w, p) = wilcoxon_enumerated(&d);
            let r = signed_rank(&d);
            if !r.exact || r.w_plus != w {
                return Err(format!("W+ mismatch for {d:?}"));
            }
            w_worst = w_worst.max((r.p_value - p).abs());
            w_count += 1;
        }
    }
    check(
        worst <= 1e-12 && w_worst <= 1e-12,
        format!("500 instances max err {worst:.1e}; Wilcoxon {w_count} cases (n <= 10) max p err {w_worst:.1e}"),
    )
}

fn baselines() -> Outcome {
    let db = generate_synthetic(SynthKind::Bookkeeping, 2000, 2, 0).unwrap();
    let mut res = BTreeMap::new();
    for t in ["MA1", "GA1"] {
        let b = build_benchmark(&db, &InjectionSpec::parse(t, DEFAULT_RATE, 0).unwrap()).unwrap();
        let labels = labels_of(&b.test);
        let wl = auroc(&wl_scores(&b.test, 4), &labels).unwrap();
        let iforest = auroc(&metadata_scores(&b.test, DEFAULT_TREES, DEFAULT_SUBSAMPLE, 0), &labels).unwrap();
        res.insert(t, (wl, iforest));
    }
    let (ma_wl, ma_if) = res["MA1"];
    let (ga_wl, ga_if) = res["GA1"];
    check(
        ma_if >= 0.70 && ma_wl <= 0.60 && ga_wl >= 0.70 && ga_if <= 0.60,
        format!("MA1: IF {ma_if:.3}, WL {ma_wl:.3}; GA1: WL {ga_wl:.3}, IF {ga_if:.3}"),
    )
}

const BIN: &str = env!("CARGO_BIN_EXE_adamm");

fn cli(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(BIN).current_dir(dir).args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn prepare(dir: &Path) -> Result<(), String> {
    cli(dir, &["gen", "--kind", "bookkeeping", "--n", "400", "--regimes", "2", "--seed", "5", "--out", "db.jsonl"])?;
    cli(dir, &[
        "inject", "--in", "db.jsonl", "--types", "GA1,MA1", "--seed", "5",
        "--out-train", "train.jsonl", "--out-test", "test.jsonl", "--log", "log.jsonl",
    ])?;
    Ok(())
}

/// Checkpoint file names and bytes of a run directory, manifest excluded.
fn checkpoints(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name() != "manifest.json")
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect();
    v.sort();
    v
}

fn train_and_score(dir: &Path, train: &str, test: &str, out: &str) -> Result<(Vec<(String, Vec<u8>)>, String, Vec<u8>), String> {
    cli(dir, &["train", "--train", train, "--grid", "default", "--seed", "3", "--epochs", "4", "--out-dir", out])?;
    let select = cli(dir, &["select", "--run-dir", out])?;
    let csv = format!("{out}.csv");
    cli(dir, &["score", "--model", out, "--data", test, "--out", &csv])?;
    Ok((checkpoints(&dir.join(out)), select, std::fs::read(dir.join(csv)).unwrap()))
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    prepare(d)?;
    let a = train_and_score(d, "train.jsonl", "test.jsonl", "run_a")?;
    let b = train_and_score(d, "train.jsonl", "test.jsonl", "run_b")?;
    check(
        a == b && !a.0.is_empty(),
        format!("{} checkpoints and the score CSV identical across two runs: {}", a.0.len(), a == b),
    )
}

fn no_labels() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    prepare(d)?;
    // the injected test half carries labels; use it as training input too
    let labelled = adamm::load_database(d.join("test.jsonl")).unwrap();
    let n_labels = labelled.samples.iter().filter(|s| s.eval_label.is_some()).count();
    std::fs::write(d.join("stripped.jsonl"), labelled.without_labels().to_jsonl()).unwrap();
    let a = train_and_score(d, "test.jsonl", "test.jsonl", "with_labels")?;
    let b = train_and_score(d, "stripped.jsonl", "stripped.jsonl", "without_labels")?;
    check(
        n_labels > 0 && a == b,
        format!("{n_labels} labelled samples; checkpoints, selection and scores identical: {}", a == b),
    )
}
