//! Mini-batch training, the hyperparameter grid, label-free model selection,
//! scoring, checkpoints and run manifests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anomalyhead::{anomaly_score, centroids_of, objective, LossBreakdown};
use crate::graphdb::{Database, Schema};
use crate::model::{Batch, EncodedSample, Model, ModelConfig};
use crate::nnkernel::{AdamConfig, AdamW, NnError, ParamStore, Tape, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch} ({reason}); last finite epoch: {last_finite:?}")]
    Diverged {
        epoch: usize,
        reason: String,
        last_finite: Option<usize>,
    },
    #[error("every grid configuration diverged")]
    AllDiverged,
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
}

/// One training configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HpConfig {
    pub k: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for HpConfig {
    fn default() -> Self {
        HpConfig {
            k: 2,
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            lambda1: 0.1,
            lambda2: 0.1,
            seed: 0,
            epochs: 100,
            batch_size: 128,
        }
    }
}

impl HpConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Invalid(m.to_string()));
        if self.k == 0 {
            return bad("K must be at least 1");
        }
        if self.k == 1 && self.lambda2 != 0.0 {
            return bad("lambda2 must be 0 when K = 1");
        }
        if !(self.learning_rate >= 0.0 && self.weight_decay >= 0.0) {
            return bad("learning rate and weight decay must be non-negative");
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad("loss weights must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        Ok(())
    }

    /// Ordering used to break exact ties in the selection criterion.
    fn tie_key(&self) -> (usize, f64, f64, f64) {
        (self.k, self.learning_rate, self.weight_decay, self.lambda2)
    }
}

/// Axis values of a hyperparameter grid; every combination is trained except
/// `K = 1` with a non-zero diversity weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub k: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub weight_decay: Vec<f64>,
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub model: ModelConfig,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            k: vec![1, 2, 4],
            learning_rate: vec![1e-4, 1e-3],
            weight_decay: vec![1e-5, 1e-4],
            lambda1: vec![0.1],
            lambda2: vec![0.0, 0.1],
            epochs: 100,
            batch_size: 128,
            model: ModelConfig::default(),
        }
    }
}

impl GridSpec {
    pub fn from_file(path: &Path) -> Result<GridSpec, TrainError> {
        let text = fs::read_to_string(path).map_err(|source| TrainError::Io {
            path: path.into(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| TrainError::Format {
            path: path.into(),
            detail: e.to_string(),
        })
    }

    pub fn expand(&self, seed: u64) -> Vec<HpConfig> {
        let mut out = Vec::new();
        for &k in &self.k {
            for &learning_rate in &self.learning_rate {
                for &weight_decay in &self.weight_decay {
                    for &lambda1 in &self.lambda1 {
                        for &lambda2 in &self.lambda2 {
                            if k == 1 && lambda2 != 0.0 {
                                continue;
                            }
                            out.push(HpConfig {
                                k,
                                learning_rate,
                                weight_decay,
                                lambda1,
                                lambda2,
                                seed,
                                epochs: self.epochs,
                                batch_size: self.batch_size,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// A trained network with its frozen train-set centroids.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: Model,
    pub hp: HpConfig,
    pub centroids: Tensor,
    pub selection_score: f64,
    pub history: Vec<LossBreakdown>,
}

fn weighted_mean(acc: &mut LossBreakdown, lb: &LossBreakdown, w: f64) {
    acc.distance += w * lb.distance;
    acc.entropy += w * lb.entropy;
    acc.diversity += w * lb.diversity;
    acc.total += w * lb.total;
}

/// Trains one configuration on `db`. Deterministic in `(db, cfg, hp)`.
pub fn train(db: &Database, cfg: &ModelConfig, hp: &HpConfig) -> Result<TrainedModel, TrainError> {
    hp.validate()?;
    if db.is_empty() {
        return Err(TrainError::Invalid("training database is empty".into()));
    }
    let mut model = Model::new(*cfg, &db.schema, hp.k, hp.seed)?;
    let encoded = model.encode(&db.samples);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(hp.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut opt = AdamW::new(AdamConfig::new(hp.learning_rate, hp.weight_decay), &model.params);
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let mut history = Vec::with_capacity(hp.epochs);

    for epoch in 0..hp.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut acc = LossBreakdown {
            distance: 0.0,
            entropy: 0.0,
            diversity: 0.0,
            total: 0.0,
            lambda1: hp.lambda1,
            lambda2: hp.lambda2,
        };
        for idx in order.chunks(hp.batch_size) {
            let step = train_step(&mut model, &mut opt, &encoded, idx, hp);
            let lb = step.map_err(|e| TrainError::Diverged {
                epoch,
                reason: e.to_string(),
                last_finite: epoch.checked_sub(1),
            })?;
            weighted_mean(&mut acc, &lb, idx.len() as f64 / encoded.len() as f64);
        }
        log::debug!(
            "k={} lr={} epoch {epoch}: loss {:.6} (dist {:.6}, H {:.6}, D {:.6})",
            hp.k, hp.learning_rate, acc.total, acc.distance, acc.entropy, acc.diversity
        );
        history.push(acc);
    }

    let (z, g) = model.embed(&encoded).map_err(|e| TrainError::Diverged {
        epoch: hp.epochs,
        reason: e.to_string(),
        last_finite: hp.epochs.checked_sub(1),
    })?;
    let centroids = centroids_of(&z, &g);
    let selection_score = total_score(&z, &g, &centroids);
    if !selection_score.is_finite() {
        return Err(TrainError::Diverged {
            epoch: hp.epochs,
            reason: "non-finite selection criterion".into(),
            last_finite: hp.epochs.checked_sub(1),
        });
    }
    Ok(TrainedModel {
        model,
        hp: *hp,
        centroids,
        selection_score,
        history,
    })
}

fn train_step(
    model: &mut Model,
    opt: &mut AdamW,
    encoded: &[EncodedSample],
    idx: &[usize],
    hp: &HpConfig,
) -> Result<LossBreakdown, NnError> {
    let refs: Vec<_> = idx.iter().map(|&i| &encoded[i]).collect();
    let batch = Batch::assemble(&refs, &model.schema);
    let mut tape = Tape::new();
    let vars = model.params.bind(&mut tape);
    let f = model.net.forward(&mut tape, &vars, &batch)?;
    let (obj, lb) = objective(&mut tape, f.joint.z, f.gamma, hp.lambda1, hp.lambda2)?;
    let grads = model.params.collect_grads(&tape.backward(obj.total)?, &vars);
    opt.step(&mut model.params, &grads);
    if !model.params.all_finite() {
        return Err(NnError::NonFinite { op: "parameter update" });
    }
    Ok(lb)
}

fn scores_of(z: &Tensor, g: &Tensor, c: &Tensor) -> Vec<f64> {
    z.rows()
        .into_iter()
        .zip(g.rows())
        .map(|(zi, gi)| anomaly_score(zi.as_slice().expect("row"), gi.as_slice().expect("row"), c))
        .collect()
}

fn total_score(z: &Tensor, g: &Tensor, c: &Tensor) -> f64 {
    scores_of(z, g, c).iter().sum()
}

/// Sum over `db` of the membership-weighted squared distances to the frozen centroids.
pub fn selection_criterion(tm: &TrainedModel, db: &Database) -> Result<f64, TrainError> {
    Ok(score_samples(tm, db, CentroidMode::Frozen)?.iter().sum())
}

/// Which centroids scoring measures distances to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CentroidMode {
    /// Train-set centroids stored with the model.
    #[default]
    Frozen,
    /// Centroids recomputed over the scored set itself.
    Scored,
}

/// Per-sample scores in database order.
pub fn score_samples(tm: &TrainedModel, db: &Database, mode: CentroidMode) -> Result<Vec<f64>, TrainError> {
    tm.model
        .schema
        .check_compatible(&db.schema)
        .map_err(TrainError::SchemaMismatch)?;
    let encoded = tm.model.encode(&db.samples);
    let (z, g) = tm.model.embed(&encoded)?;
    let c = match mode {
        CentroidMode::Frozen => tm.centroids.clone(),
        CentroidMode::Scored => centroids_of(&z, &g),
    };
    Ok(scores_of(&z, &g, &c))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub sample_id: String,
    pub score: f64,
    pub rank: usize,
}

/// Ranks ids by descending score, ties by id ascending; ranks are 1-based.
pub fn rank_scores(ids: &[String], scores: &[f64]) -> Vec<ScoreRow> {
    let mut rows: Vec<_> = ids.iter().cloned().zip(scores.iter().copied()).collect();
    rows.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    rows.into_iter()
        .enumerate()
        .map(|(i, (sample_id, score))| ScoreRow {
            sample_id,
            score,
            rank: i + 1,
        })
        .collect()
}

pub fn score_database(tm: &TrainedModel, db: &Database) -> Result<Vec<ScoreRow>, TrainError> {
    let scores = score_samples(tm, db, CentroidMode::Frozen)?;
    let ids: Vec<_> = db.samples.iter().map(|s| s.id.clone()).collect();
    Ok(rank_scores(&ids, &scores))
}

pub fn scores_to_csv(rows: &[ScoreRow]) -> String {
    let mut out = String::from("sample_id,score,rank\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.sample_id, r.score, r.rank));
    }
    out
}

pub fn scores_from_csv(text: &str) -> Result<Vec<ScoreRow>, String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == "sample_id,score,rank" => {}
        other => return Err(format!("unexpected header {other:?}")),
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let mut parts = l.rsplitn(3, ',');
            let (rank, score, id) = (parts.next(), parts.next(), parts.next());
            match (id, score.and_then(|s| s.parse().ok()), rank.and_then(|r| r.parse().ok())) {
                (Some(id), Some(score), Some(rank)) => Ok(ScoreRow {
                    sample_id: id.to_string(),
                    score,
                    rank,
                }),
                _ => Err(format!("line {}: malformed row `{l}`", i + 2)),
            }
        })
        .collect()
}

/// Serialized form of a trained model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub schema_hash: String,
    pub schema: Schema,
    pub model: ModelConfig,
    pub hp: HpConfig,
    pub params: ParamStore,
    pub centroids: Vec<Vec<f64>>,
    pub selection_score: f64,
    pub history: Vec<LossBreakdown>,
}

impl TrainedModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            schema_hash: self.model.schema.hash(),
            schema: self.model.schema.clone(),
            model: self.model.config,
            hp: self.hp,
            params: self.model.params.clone(),
            centroids: self.centroids.rows().into_iter().map(|r| r.to_vec()).collect(),
            selection_score: self.selection_score,
            history: self.history.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<TrainedModel, String> {
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(format!("unsupported checkpoint version {}", ck.format_version));
        }
        if ck.schema.hash() != ck.schema_hash {
            return Err("schema hash does not match embedded schema".into());
        }
        let d = ck.model.joint_dim;
        if ck.centroids.len() != ck.hp.k || ck.centroids.iter().any(|r| r.len() != d) {
            return Err(format!("centroids must be {} x {d}", ck.hp.k));
        }
        let centroids = Tensor::from_shape_vec((ck.hp.k, d), ck.centroids.concat())
            .map_err(|e| e.to_string())?;
        let model = Model::with_params(ck.model, &ck.schema, ck.hp.k, ck.params)?;
        Ok(TrainedModel {
            model,
            hp: ck.hp,
            centroids,
            selection_score: ck.selection_score,
            history: ck.history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let text = serde_json::to_string(&self.to_checkpoint()).expect("checkpoint serializes");
        fs::write(path, text).map_err(|source| TrainError::Io {
            path: path.into(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<TrainedModel, TrainError> {
        let fmt = |detail: String| TrainError::Format {
            path: path.into(),
            detail,
        };
        let text = fs::read_to_string(path).map_err(|source| TrainError::Io {
            path: path.into(),
            source,
        })?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| fmt(e.to_string()))?;
        TrainedModel::from_checkpoint(ck).map_err(fmt)
    }
}

/// Outcome of one grid entry.
#[derive(Debug)]
pub struct RunOutcome {
    pub hp: HpConfig,
    pub result: Result<TrainedModel, TrainError>,
    pub seconds: f64,
}

#[derive(Debug)]
pub struct GridResult {
    pub runs: Vec<RunOutcome>,
    pub selected: usize,
}

impl GridResult {
    pub fn selected_model(&self) -> &TrainedModel {
        self.runs[self.selected].result.as_ref().expect("selected run succeeded")
    }
}

fn run_one(db: &Database, cfg: &ModelConfig, hp: &HpConfig) -> RunOutcome {
    let t0 = Instant::now();
    let result = train(db, cfg, hp);
    if let Err(e) = &result {
        log::warn!("config {hp:?} failed: {e}");
    }
    RunOutcome {
        hp: *hp,
        result,
        seconds: t0.elapsed().as_secs_f64(),
    }
}

/// Index of the run with the smallest criterion, ties by `(K, lr, wd, lambda2)`.
pub fn select_best(runs: &[(HpConfig, Option<f64>)]) -> Option<usize> {
    runs.iter()
        .enumerate()
        .filter_map(|(i, (hp, c))| c.map(|c| (i, hp, c)))
        .min_by(|a, b| {
            a.2.total_cmp(&b.2).then_with(|| {
                let (ka, kb) = (a.1.tie_key(), b.1.tie_key());
                ka.0.cmp(&kb.0)
                    .then(ka.1.total_cmp(&kb.1))
                    .then(ka.2.total_cmp(&kb.2))
                    .then(ka.3.total_cmp(&kb.3))
            })
        })
        .map(|(i, _, _)| i)
}

/// Trains every configuration (in parallel when enabled) and selects the one
/// with the smallest label-free criterion.
pub fn run_grid(db: &Database, cfg: &ModelConfig, grid: &[HpConfig]) -> Result<GridResult, TrainError> {
    if grid.is_empty() {
        return Err(TrainError::Invalid("empty grid".into()));
    }
    for hp in grid {
        hp.validate()?;
    }
    #[cfg(feature = "parallel")]
    let runs: Vec<RunOutcome> = {
        use rayon::prelude::*;
        grid.par_iter().map(|hp| run_one(db, cfg, hp)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let runs: Vec<RunOutcome> = grid.iter().map(|hp| run_one(db, cfg, hp)).collect();

    let keys: Vec<_> = runs
        .iter()
        .map(|r| (r.hp, r.result.as_ref().ok().map(|m| m.selection_score)))
        .collect();
    let selected = select_best(&keys).ok_or(TrainError::AllDiverged)?;
    Ok(GridResult { runs, selected })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub hp: HpConfig,
    /// Label-free selection criterion; absent when the run failed.
    pub criterion: Option<f64>,
    pub error: Option<String>,
    pub checkpoint: Option<String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub model: ModelConfig,
    pub schema_hash: String,
    pub configs: Vec<ManifestEntry>,
    pub selected: usize,
    pub selected_hp: HpConfig,
    pub selected_checkpoint: String,
    pub wall_clock_seconds: f64,
}

pub fn checkpoint_name(i: usize) -> String {
    format!("run_{i:02}.json")
}

/// Writes one checkpoint per successful run plus `manifest.json` to `dir`.
pub fn write_run_dir(
    dir: &Path,
    grid: &GridResult,
    cfg: &ModelConfig,
    seed: u64,
    schema: &Schema,
    wall_clock_seconds: f64,
) -> Result<Manifest, TrainError> {
    fs::create_dir_all(dir).map_err(|source| TrainError::Io {
        path: dir.into(),
        source,
    })?;
    let mut configs = Vec::with_capacity(grid.runs.len());
    for (i, run) in grid.runs.iter().enumerate() {
        let (criterion, error, checkpoint) = match &run.result {
            Ok(tm) => {
                let name = checkpoint_name(i);
                tm.save(&dir.join(&name))?;
                (Some(tm.selection_score), None, Some(name))
            }
            Err(e) => (None, Some(e.to_string()), None),
        };
        configs.push(ManifestEntry {
            index: i,
            hp: run.hp,
            criterion,
            error,
            checkpoint,
            seconds: run.seconds,
        });
    }
    let manifest = Manifest {
        seed,
        model: *cfg,
        schema_hash: schema.hash(),
        configs,
        selected: grid.selected,
        selected_hp: grid.runs[grid.selected].hp,
        selected_checkpoint: checkpoint_name(grid.selected),
        wall_clock_seconds,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|source| TrainError::Io { path, source })?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, TrainError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|source| TrainError::Io {
        path: path.clone(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| TrainError::Format {
        path,
        detail: e.to_string(),
    })
}

/// Loads a checkpoint file, or the selected checkpoint of a run directory.
pub fn load_model(path: &Path) -> Result<TrainedModel, TrainError> {
    if path.is_dir() {
        let m = read_manifest(path)?;
        TrainedModel::load(&path.join(m.selected_checkpoint))
    } else {
        TrainedModel::load(path)
    }
}
