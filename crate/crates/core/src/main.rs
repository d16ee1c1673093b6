use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use adamm::baselines::{
    aggregate_bfs, aggregate_inverse_rank, metadata_scores, wl_scores, DEFAULT_SUBSAMPLE,
    DEFAULT_TREES,
};
use adamm::graphdb::{generate_synthetic, DbError, SynthKind};
use adamm::injector::{build_benchmark, log_to_jsonl, InjectError, InjectionSpec};
use adamm::metrics::{metric_report, MetricError};
use adamm::trainer::{
    load_model, rank_scores, read_manifest, run_grid, score_samples, scores_from_csv,
    scores_to_csv, write_run_dir, CentroidMode, GridSpec, ScoreRow, TrainError,
};
use adamm::{load_database, write_database};

#[derive(Parser)]
#[command(name = "adamm", version, about = "Anomaly detection for multi-graphs with metadata")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic database.
    Gen {
        #[arg(long, value_parser = parse_kind)]
        kind: SynthKind,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        regimes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a database in half and inject anomalies into the test half.
    Inject {
        #[arg(long = "in")]
        input: PathBuf,
        /// Comma-separated kinds; `GA1+MA1` injects both into one sample.
        #[arg(long)]
        types: String,
        #[arg(long, default_value_t = 0.05)]
        rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_train: PathBuf,
        #[arg(long)]
        out_test: PathBuf,
        #[arg(long)]
        log: PathBuf,
    },
    /// Train every grid configuration and write checkpoints plus a manifest.
    Train {
        #[arg(long)]
        train: PathBuf,
        /// `default` or a JSON grid file.
        #[arg(long, default_value = "default")]
        grid: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
        /// Overrides the grid's epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        /// Overrides the grid's batch size.
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Print the selected configuration and every run's criterion.
    Select {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Score a database with a checkpoint or the selected model of a run directory.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `scored` recomputes centroids over the scored data instead of using
        /// the ones frozen at training time.
        #[arg(long, value_enum, default_value = "frozen")]
        centroids: Centroids,
    },
    /// AUROC / AUPRC of a score file against the labels in a database.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Also write `index,sample_id,score,label` rows in database order.
        #[arg(long)]
        scatter: Option<PathBuf>,
    },
    /// Two-stage baselines.
    Baseline {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        /// Merge with the other modality's ranking; `method` supplies the first list.
        #[arg(long, value_enum)]
        agg: Option<Agg>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        wl_iter: usize,
        #[arg(long, default_value_t = DEFAULT_TREES)]
        trees: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Wl,
    Iforest,
}

#[derive(Clone, Copy, ValueEnum)]
enum Agg {
    Bfs,
    Ir,
}

#[derive(Clone, Copy, ValueEnum)]
enum Centroids {
    Frozen,
    Scored,
}

fn parse_kind(s: &str) -> Result<SynthKind, String> {
    s.parse()
}

/// Error carrying its process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn validation(m: impl ToString) -> Self {
        Failure { code: 2, message: m.to_string() }
    }

    fn other(m: impl ToString) -> Self {
        Failure { code: 1, message: m.to_string() }
    }
}

impl From<DbError> for Failure {
    fn from(e: DbError) -> Self {
        match e {
            DbError::Io(_) => Failure::other(e),
            _ => Failure::validation(e),
        }
    }
}

impl From<InjectError> for Failure {
    fn from(e: InjectError) -> Self {
        match e {
            InjectError::Db(DbError::Io(_)) => Failure::other(e),
            _ => Failure::validation(e),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        let code = match e {
            TrainError::Diverged { .. } | TrainError::AllDiverged => 3,
            TrainError::Io { .. } | TrainError::Nn(_) => 1,
            TrainError::Invalid(_) | TrainError::SchemaMismatch(_) | TrainError::Format { .. } => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<MetricError> for Failure {
    fn from(e: MetricError) -> Self {
        Failure { code: 4, message: format!("metric undefined: {e}") }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::other(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::other(format!("{}: {e}", path.display())))
}

fn read_file(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::other(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes") + "\n"
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Gen { kind, n, regimes, seed, out } => {
            let db = generate_synthetic(kind, n, regimes, seed)?;
            write_database(&db, &out)?;
            eprintln!("wrote {} samples to {}", db.len(), out.display());
        }
        Command::Inject { input, types, rate, seed, out_train, out_test, log } => {
            let db = load_database(&input)?;
            let spec = InjectionSpec::parse(&types, rate, seed)?;
            let b = build_benchmark(&db, &spec)?;
            write_database(&b.train, &out_train)?;
            write_database(&b.test, &out_test)?;
            write_file(&log, &log_to_jsonl(&b.log))?;
            eprintln!(
                "train {} / test {} samples, {} injected",
                b.train.len(),
                b.test.len(),
                b.log.len()
            );
        }
        Command::Train { train, grid, seed, out_dir, epochs, batch_size } => {
            let db = load_database(&train)?;
            let mut spec = if grid == "default" {
                GridSpec::default()
            } else {
                GridSpec::from_file(Path::new(&grid))?
            };
            if let Some(e) = epochs {
                spec.epochs = e;
            }
            if let Some(b) = batch_size {
                spec.batch_size = b;
            }
            let configs = spec.expand(seed);
            log::info!("training {} configurations on {} samples", configs.len(), db.len());
            let t0 = Instant::now();
            let result = run_grid(&db, &spec.model, &configs)?;
            let manifest = write_run_dir(
                &out_dir,
                &result,
                &spec.model,
                seed,
                &db.schema,
                t0.elapsed().as_secs_f64(),
            )?;
            let failed = manifest.configs.iter().filter(|c| c.error.is_some()).count();
            println!(
                "selected run {} ({}), criterion {:.6e}; {} of {} runs failed",
                manifest.selected,
                manifest.selected_checkpoint,
                result.selected_model().selection_score,
                failed,
                manifest.configs.len()
            );
        }
        Command::Select { run_dir } => {
            let m = read_manifest(&run_dir)?;
            println!("{:>3}  {:>2} {:>8} {:>8} {:>7} {:>7}  criterion", "run", "K", "lr", "wd", "l1", "l2");
            for c in &m.configs {
                let crit = match (c.criterion, &c.error) {
                    (Some(v), _) => format!("{v:.6e}"),
                    (None, Some(e)) => format!("failed: {e}"),
                    (None, None) => "-".into(),
                };
                let mark = if c.index == m.selected { " <- selected" } else { "" };
                println!(
                    "{:>3}  {:>2} {:>8.0e} {:>8.0e} {:>7} {:>7}  {crit}{mark}",
                    c.index, c.hp.k, c.hp.learning_rate, c.hp.weight_decay, c.hp.lambda1, c.hp.lambda2
                );
            }
            println!("selected: {}", serde_json::to_string(&m.selected_hp).expect("hp serializes"));
        }
        Command::Score { model, data, out, centroids } => {
            let tm = load_model(&model)?;
            let db = load_database(&data)?;
            let mode = match centroids {
                Centroids::Frozen => CentroidMode::Frozen,
                Centroids::Scored => CentroidMode::Scored,
            };
            let ids: Vec<String> = db.samples.iter().map(|s| s.id.clone()).collect();
            let rows = rank_scores(&ids, &score_samples(&tm, &db, mode)?);
            write_file(&out, &scores_to_csv(&rows))?;
        }
        Command::Eval { scores, data, report, scatter } => {
            let rows = scores_from_csv(&read_file(&scores)?).map_err(Failure::validation)?;
            let db = load_database(&data)?;
            let by_id: std::collections::HashMap<&str, f64> =
                rows.iter().map(|r| (r.sample_id.as_str(), r.score)).collect();
            if by_id.len() != db.len() {
                return Err(Failure::validation(format!(
                    "score file has {} ids, database has {} samples",
                    by_id.len(),
                    db.len()
                )));
            }
            let mut values = Vec::with_capacity(db.len());
            let mut types = Vec::with_capacity(db.len());
            for s in &db.samples {
                let v = by_id.get(s.id.as_str()).ok_or_else(|| {
                    Failure::validation(format!("no score for sample `{}`", s.id))
                })?;
                values.push(*v);
                types.push(
                    s.eval_label
                        .as_ref()
                        .filter(|l| l.is_anomalous())
                        .map(|l| l.anomaly.clone()),
                );
            }
            let rep = metric_report(&values, &types)?;
            write_file(&report, &to_json(&rep))?;
            if let Some(path) = scatter {
                let mut csv = String::from("index,sample_id,score,label\n");
                for (i, (s, v)) in db.samples.iter().zip(&values).enumerate() {
                    let label = types[i].as_deref().unwrap_or("normal");
                    csv.push_str(&format!("{i},{},{v},{label}\n", s.id));
                }
                write_file(&path, &csv)?;
            }
            println!("AUROC {:.4}  AUPRC {:.4}  ({} anomalous / {} normal)", rep.auroc, rep.auprc, rep.n_pos, rep.n_neg);
        }
        Command::Baseline { data, method, agg, out, wl_iter, trees, seed } => {
            let db = load_database(&data)?;
            let ids: Vec<String> = db.samples.iter().map(|s| s.id.clone()).collect();
            let graph = || rank_scores(&ids, &wl_scores(&db, wl_iter));
            let meta = || rank_scores(&ids, &metadata_scores(&db, trees, DEFAULT_SUBSAMPLE, seed));
            let (first, second): (Vec<ScoreRow>, Option<Vec<ScoreRow>>) = match (method, agg) {
                (Method::Wl, None) => (graph(), None),
                (Method::Iforest, None) => (meta(), None),
                (Method::Wl, Some(_)) => (graph(), Some(meta())),
                (Method::Iforest, Some(_)) => (meta(), Some(graph())),
            };
            let rows = match (agg, second) {
                (Some(Agg::Bfs), Some(b)) => aggregate_bfs(&first, &b).map_err(Failure::validation)?,
                (Some(Agg::Ir), Some(b)) => aggregate_inverse_rank(&first, &b).map_err(Failure::validation)?,
                _ => first,
            };
            write_file(&out, &scores_to_csv(&rows))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
