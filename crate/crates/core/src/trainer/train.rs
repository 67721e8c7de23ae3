use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{assemble_batch, make_sample, Record, Sample};
use crate::error::{FlameError, Result};
use crate::loss::batch_loss;
use crate::model::{Checkpoint, GazeModel};
use crate::nn::{Ctx, Element, HasParams};

use super::adam::Adam;
use super::config::{lr_at_epoch, TrainConfig};
use super::eval::{epoch_eye, evaluate, sample_config};
use super::mix;

pub const HISTORY_HEADER: &str = "epoch\tlr\ttrain_loss\tval_mean_deg\tval_std_deg\twall_seconds";

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// NaN when there is no validation split.
    pub val_mean_deg: f64,
    pub val_std_deg: f64,
    /// Eval-mode training error, when early stopping is enabled.
    pub train_mean_deg: Option<f64>,
    /// Zero in deterministic mode; see `TrainConfig::deterministic`.
    pub wall_seconds: f64,
}

pub fn history_tsv(history: &[EpochRecord]) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for h in history {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}",
            h.epoch, h.lr, h.train_loss, h.val_mean_deg, h.val_std_deg, h.wall_seconds
        );
    }
    s
}

pub struct TrainOutcome<F> {
    pub model: GazeModel<F>,
    pub history: Vec<EpochRecord>,
    pub steps: u64,
    pub final_checkpoint: Checkpoint<F>,
    /// Lowest validation error, if there was a validation split.
    pub best_checkpoint: Option<Checkpoint<F>>,
    pub best_epoch: Option<usize>,
}

impl<F: Element> TrainOutcome<F> {
    /// The checkpoint to evaluate: best on validation, else final.
    pub fn selected(&self) -> &Checkpoint<F> {
        self.best_checkpoint
            .as_ref()
            .unwrap_or(&self.final_checkpoint)
    }
}

/// Where `train` writes `history.tsv`, `best.ckpt` and `final.ckpt`.
#[derive(Debug, Clone, Default)]
pub struct TrainOutput {
    pub dir: Option<PathBuf>,
}

/// Batch index lists for one epoch. A trailing batch of one sample is merged
/// into the previous batch, since batch statistics need two samples.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(
        seed,
        epoch as u64,
        0x73_68_75_66,
    )));
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let tail = batches.pop().expect("non-empty");
        batches.last_mut().expect("two batches").extend(tail);
    }
    batches
}

fn metadata(cfg: &TrainConfig) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("batch_size".into(), cfg.batch_size.to_string());
    m.insert("lr".into(), cfg.lr.to_string());
    m.insert("lr_milestones".into(), format!("{:?}", cfg.lr_milestones));
    m.insert("lr_factor".into(), cfg.lr_factor.to_string());
    m.insert("loss".into(), cfg.loss.to_string());
    m.insert("patch_size".into(), cfg.patch_size.to_string());
    m.insert("eval_eye".into(), cfg.eval_eye.to_string());
    m
}

pub fn train<F: Element>(
    cfg: &TrainConfig,
    train_set: &[Record],
    val_set: &[Record],
    out: &TrainOutput,
) -> Result<TrainOutcome<F>> {
    cfg.validate()?;
    if train_set.len() < 2 {
        return Err(FlameError::Config(format!(
            "training needs at least 2 records, got {}",
            train_set.len()
        )));
    }
    if let Some(dir) = &out.dir {
        fs::create_dir_all(dir).map_err(|e| FlameError::io(dir, e))?;
    }
    let mut model = GazeModel::<F>::new(cfg.model.clone())?;
    let mut adam = Adam::new(&model.params_mut(), cfg.beta1, cfg.beta2, cfg.eps);
    let scfg = sample_config(
        cfg.model.resolution,
        cfg.model.heatmap_scale,
        cfg.patch_size,
    );
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Checkpoint<F>)> = None;
    let started = Instant::now();

    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(cfg, epoch);
        let eye = epoch_eye(cfg.seed, epoch);
        let batches = epoch_batches(train_set.len(), cfg.batch_size, cfg.seed, epoch);
        let build = |idx: &[usize]| -> Result<Vec<Sample>> {
            idx.iter()
                .map(|&i| make_sample(&train_set[i], eye, &scfg))
                .collect()
        };
        let mut loss_sum = 0.0;
        let mut count = 0usize;
        let mut pending = Some(build(&batches[0])?);
        for (b, idx) in batches.iter().enumerate() {
            let samples = pending.take().expect("prepared batch");
            let next = batches.get(b + 1);
            let mut step = |samples: Vec<Sample>| -> Result<()> {
                let (input, targets) = assemble_batch::<F>(&samples)?;
                let mut ctx = Ctx::train(mix(cfg.seed, epoch as u64, b as u64));
                let at = |e: FlameError| match e {
                    FlameError::NonFinite(m) => {
                        FlameError::NonFinite(format!("epoch {epoch} batch {b}: {m}"))
                    }
                    other => other,
                };
                let y = model.forward(&input, &mut ctx).map_err(at)?;
                let (loss, grad) = batch_loss(cfg.loss, &y, &targets).map_err(at)?;
                model.backward(&grad)?;
                adam.step(model.params_mut(), lr);
                loss_sum += loss * idx.len() as f64;
                count += idx.len();
                Ok(())
            };
            match next {
                Some(n) if !cfg.deterministic => {
                    let prepared = std::thread::scope(|s| {
                        let h = s.spawn(|| build(n));
                        let r = step(samples);
                        (r, h.join().expect("batch preparation thread"))
                    });
                    prepared.0?;
                    pending = Some(prepared.1?);
                }
                next => {
                    step(samples)?;
                    if let Some(n) = next {
                        pending = Some(build(n)?);
                    }
                }
            }
        }
        let train_loss = loss_sum / count as f64;
        let (val_mean, val_std) = if val_set.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let r = evaluate(&mut model, val_set, cfg.eval_eye, cfg.seed, cfg.patch_size)?;
            (r.mean_deg, r.std_deg)
        };
        let train_mean = match cfg.stop_below_train_deg {
            Some(_) => Some(
                evaluate(
                    &mut model,
                    train_set,
                    cfg.eval_eye,
                    cfg.seed,
                    cfg.patch_size,
                )?
                .mean_deg,
            ),
            None => None,
        };
        let elapsed = started.elapsed().as_secs_f64();
        log::info!(
            "epoch {epoch} lr {lr:e} loss {train_loss:.6} val {val_mean:.3} train_deg {} ({elapsed:.1}s)",
            train_mean.map_or("-".to_string(), |v| format!("{v:.3}"))
        );
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_mean_deg: val_mean,
            val_std_deg: val_std,
            train_mean_deg: train_mean,
            wall_seconds: if cfg.deterministic { 0.0 } else { elapsed },
        });
        if val_mean.is_finite() && best.as_ref().is_none_or(|(v, _, _)| val_mean < *v) {
            let ckp = Checkpoint::capture(
                &model,
                epoch,
                cfg.seed,
                metadata(cfg),
                Some(adam.state().clone()),
            );
            if let Some(dir) = &out.dir {
                ckp.save(&dir.join("best.ckpt"))?;
            }
            best = Some((val_mean, epoch, ckp));
        }
        if let Some(dir) = &out.dir {
            write_history(&dir.join("history.tsv"), &history)?;
        }
        if let (Some(limit), Some(t)) = (cfg.stop_below_train_deg, train_mean) {
            if t < limit {
                log::info!("training error {t:.3} below {limit}; stopping after epoch {epoch}");
                break;
            }
        }
    }
    let last_epoch = history.last().map_or(0, |h| h.epoch);
    let final_checkpoint = Checkpoint::capture(
        &model,
        last_epoch,
        cfg.seed,
        metadata(cfg),
        Some(adam.state().clone()),
    );
    if let Some(dir) = &out.dir {
        final_checkpoint.save(&dir.join("final.ckpt"))?;
    }
    let (best_epoch, best_checkpoint) = match best {
        Some((_, e, c)) => (Some(e), Some(c)),
        None => (None, None),
    };
    Ok(TrainOutcome {
        model,
        history,
        steps: adam.steps(),
        final_checkpoint,
        best_checkpoint,
        best_epoch,
    })
}

fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    fs::write(path, history_tsv(history)).map_err(|e| FlameError::io(path, e))
}
