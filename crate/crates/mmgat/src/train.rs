//! Training loop: seeded shuffling, mini-batch Adam with the multiplicative
//! learning-rate schedule, periodic checkpointing and an optional
//! logging-only validation split.
//!
//! Determinism contract: a fixed seed and single thread give bit-identical
//! losses, parameters and checkpoints. Each epoch draws its RNG from
//! (seed, epoch), so resuming from a checkpoint consumes exactly the same
//! random stream as an uninterrupted run.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{adam_step, AdamState, LrSchedule, ParamSet, Tape};
use crate::checkpoint::{save_checkpoint, Checkpoint, CheckpointError};
use crate::data::Dataset;
use crate::graph::{build_batch, GraphConfig, GraphError};
use crate::model::{self, collect_grads, ModelConfig, ModelError};
use crate::{real, Real};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("dataset has no labeled frames")]
    Unlabeled,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("non-finite loss at epoch {epoch}, batch frames {frame_ids:?}; checkpoint dumped")]
    NonFiniteLoss { epoch: u64, frame_ids: Vec<u64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Mpjpe,
}

fn default_window() -> usize {
    1
}

fn default_true() -> bool {
    true
}

/// Run configuration, read from a flat TOML document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: u64,
    pub base_lr: f64,
    pub lr_factor: f64,
    pub k_neighbors: usize,
    /// Frame-fusion window applied upstream; kept here so a checkpointed
    /// run records its full preprocessing. 1 means no fusion.
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default)]
    pub denoise_bound: Option<f64>,
    pub loss: LossKind,
    pub seed: u64,
    /// Checkpoint every this many epochs; 0 checkpoints only at the end.
    #[serde(default)]
    pub eval_every: u64,
    pub checkpoint_path: PathBuf,
    /// Fraction of labeled frames held out for logging-only validation.
    #[serde(default)]
    pub val_fraction: Option<f64>,
    #[serde(default = "default_true")]
    pub include_edge_features: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size < 1 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        if self.epochs < 1 {
            return Err(TrainError::Config("epochs must be >= 1".into()));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) {
            return Err(TrainError::Config("lr_factor must be in (0, 1]".into()));
        }
        if self.window % 2 == 0 {
            return Err(TrainError::Config("window must be odd".into()));
        }
        if let Some(f) = self.val_fraction {
            if !(0.0..1.0).contains(&f) {
                return Err(TrainError::Config("val_fraction must be in [0, 1)".into()));
            }
        }
        Ok(())
    }
}

pub fn load_train_config(path: &Path) -> Result<TrainConfig, TrainError> {
    let text = std::fs::read_to_string(path).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let cfg: TrainConfig =
        toml::from_str(&text).map_err(|e| TrainError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// One completed epoch. `wall_secs` is kept in memory for reporting but
/// excluded from the serialized record so logs stay reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord<T> {
    pub epoch: u64,
    pub lr: T,
    pub train_loss: T,
    pub val_loss: Option<T>,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog<T> {
    pub records: Vec<EpochRecord<T>>,
}

impl<T: Real> TrainLog<T> {
    /// Line-delimited `key=value` records, one line per epoch.
    /// Deterministic: wall time is deliberately not serialized.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&format!(
                "epoch={} lr={:.16e} train_loss={:.16e}",
                r.epoch, r.lr, r.train_loss
            ));
            if let Some(v) = &r.val_loss {
                out.push_str(&format!(" val_loss={:.16e}", v));
            }
            out.push('\n');
        }
        out
    }
}

pub struct TrainOutput<T> {
    pub params: ParamSet<T>,
    pub adam: AdamState<T>,
    pub model: ModelConfig,
    pub log: TrainLog<T>,
}

/// Per-epoch RNG stream, independent of how many epochs ran before.
fn epoch_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

fn batch_loss<T: Real>(
    tape: &mut Tape<T>,
    pred: crate::autodiff::Var,
    targets: &[T],
    kind: LossKind,
) -> Result<crate::autodiff::Var, ModelError> {
    let loss = match kind {
        LossKind::Mse => tape.mse_loss(pred, targets)?,
        LossKind::Mpjpe => tape.mpjpe_loss(pred, targets)?,
    };
    Ok(loss)
}

/// Train on the labeled frames of `ds`. `resume` continues a checkpointed
/// run: the epoch counter, parameters and optimizer moments pick up where
/// the checkpoint left off and the learning-rate schedule is re-derived
/// from the epoch index, so the result matches an uninterrupted run.
pub fn train<T: Real>(
    ds: &Dataset<T>,
    cfg: &TrainConfig,
    resume: Option<Checkpoint<T>>,
) -> Result<TrainOutput<T>, TrainError> {
    cfg.validate()?;
    let labeled: Vec<usize> = ds
        .frames
        .iter()
        .enumerate()
        .filter(|(_, f)| f.keypoints.is_some())
        .map(|(i, _)| i)
        .collect();
    if labeled.is_empty() {
        return Err(TrainError::Unlabeled);
    }
    let joint_count = ds.frames[labeled[0]]
        .keypoints
        .as_ref()
        .unwrap()
        .joint_count();

    let gcfg = GraphConfig {
        k_neighbors: cfg.k_neighbors,
        include_edge_features: cfg.include_edge_features,
    };
    let schedule = LrSchedule::new(real::<T>(cfg.base_lr), real::<T>(cfg.lr_factor));

    // Validation indices come off the end of a dedicated seeded shuffle so
    // the split is independent of the per-epoch training order.
    let (train_idx, val_idx) = match cfg.val_fraction {
        Some(f) if f > 0.0 => {
            let mut idx = labeled.clone();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5AFE_5EED));
            let n_val = ((idx.len() as f64) * f).round() as usize;
            let n_val = n_val.min(idx.len() - 1);
            let val = idx.split_off(idx.len() - n_val);
            (idx, val)
        }
        _ => (labeled.clone(), Vec::new()),
    };

    let (mut params, mut adam, start_epoch, mut mcfg) = match resume {
        Some(ck) => {
            if ck.model.joint_count != joint_count {
                return Err(TrainError::Config(format!(
                    "checkpoint joint count {} does not match dataset {}",
                    ck.model.joint_count, joint_count
                )));
            }
            (ck.params, ck.adam, ck.epoch, ck.model)
        }
        None => {
            let mut mcfg = ModelConfig::new(joint_count);
            mcfg.include_edge_features = cfg.include_edge_features;
            let params = model::init_params::<T>(&mcfg, cfg.seed);
            let adam = AdamState::new(&params, real::<T>(cfg.base_lr));
            (params, adam, 0, mcfg)
        }
    };
    mcfg.include_edge_features = cfg.include_edge_features;

    let save = |params: &ParamSet<T>, adam: &AdamState<T>, mcfg: &ModelConfig, epoch: u64| {
        save_checkpoint(
            &Checkpoint {
                model: mcfg.clone(),
                k_neighbors: cfg.k_neighbors,
                epoch,
                base_lr: cfg.base_lr,
                lr_factor: cfg.lr_factor,
                params: params.clone(),
                adam: adam.clone(),
            },
            &cfg.checkpoint_path,
        )
    };

    let mut log = TrainLog::default();
    for epoch in start_epoch..cfg.epochs {
        let t0 = Instant::now();
        let lr = schedule.lr_at_epoch(epoch);
        adam.lr = lr;

        let mut rng = epoch_rng(cfg.seed, epoch);
        let mut order = train_idx.clone();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0f64;
        let mut frame_sum = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let frames: Vec<_> = chunk.iter().map(|&i| &ds.frames[i]).collect();
            let batch = build_batch(&frames, &gcfg)?;
            let mut tape = Tape::new();
            let pass = model::forward(&mut tape, &batch, &params, &mcfg, true, &mut rng)?;
            let loss = batch_loss(&mut tape, pass.output, &batch.targets, cfg.loss)?;
            let loss_val = tape.data(loss)[0];
            if !loss_val.is_finite() {
                let _ = save(&params, &adam, &mcfg, epoch);
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    frame_ids: frames.iter().map(|f| f.frame_id).collect(),
                });
            }
            tape.backward(loss).map_err(ModelError::Tensor)?;
            let grads = collect_grads(&tape, &pass);
            adam_step(&mut params, &grads, &mut adam)
                .map_err(|e| TrainError::Config(e.to_string()))?;
            loss_sum += loss_val.to_f64().unwrap() * chunk.len() as f64;
            frame_sum += chunk.len();
        }
        let train_loss = real::<T>(loss_sum / frame_sum as f64);

        let val_loss = if val_idx.is_empty() {
            None
        } else {
            let mut acc = 0.0f64;
            let mut n = 0usize;
            let mut eval_rng = ChaCha8Rng::seed_from_u64(0);
            for chunk in val_idx.chunks(cfg.batch_size) {
                let frames: Vec<_> = chunk.iter().map(|&i| &ds.frames[i]).collect();
                let batch = build_batch(&frames, &gcfg)?;
                let mut tape = Tape::new();
                let pass =
                    model::forward(&mut tape, &batch, &params, &mcfg, false, &mut eval_rng)?;
                let loss = batch_loss(&mut tape, pass.output, &batch.targets, cfg.loss)?;
                acc += tape.data(loss)[0].to_f64().unwrap() * chunk.len() as f64;
                n += chunk.len();
            }
            Some(real::<T>(acc / n as f64))
        };

        log.records.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
            wall_secs: t0.elapsed().as_secs_f64(),
        });

        let done = epoch + 1;
        if cfg.eval_every > 0 && done % cfg.eval_every == 0 && done < cfg.epochs {
            save(&params, &adam, &mcfg, done)?;
        }
    }

    save(&params, &adam, &mcfg, cfg.epochs)?;
    Ok(TrainOutput {
        params,
        adam,
        model: mcfg,
        log,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode<'a> {
    Random,
    /// Group key per frame (same length as the dataset); no group lands on
    /// both sides of the split.
    Holdout(&'a [u64]),
}

/// Seeded train/test split at the frame level.
pub fn split_dataset<T: Real>(
    ds: &Dataset<T>,
    mode: SplitMode,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset<T>, Dataset<T>), TrainError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(TrainError::Config(
            "test_fraction must be in (0, 1)".into(),
        ));
    }
    let n = ds.frames.len();
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let n_test = n_test.clamp(1, n.saturating_sub(1).max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let test_set: Vec<bool> = match mode {
        SplitMode::Random => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let mut mask = vec![false; n];
            for &i in &idx[..n_test] {
                mask[i] = true;
            }
            mask
        }
        SplitMode::Holdout(groups) => {
            assert_eq!(groups.len(), n, "one group key per frame");
            let mut uniq: Vec<u64> = groups.to_vec();
            uniq.sort_unstable();
            uniq.dedup();
            uniq.shuffle(&mut rng);
            let mut test_groups = std::collections::HashSet::new();
            let mut count = 0usize;
            for g in uniq {
                if count >= n_test {
                    break;
                }
                count += groups.iter().filter(|&&x| x == g).count();
                test_groups.insert(g);
            }
            groups.iter().map(|g| test_groups.contains(g)).collect()
        }
    };

    let mut train = Dataset {
        frames: Vec::new(),
        joint_count: ds.joint_count,
        name: format!("{}-train", ds.name),
    };
    let mut test = Dataset {
        frames: Vec::new(),
        joint_count: ds.joint_count,
        name: format!("{}-test", ds.name),
    };
    for (i, f) in ds.frames.iter().enumerate() {
        if test_set[i] {
            test.frames.push(f.clone());
        } else {
            train.frames.push(f.clone());
        }
    }
    Ok((train, test))
}
