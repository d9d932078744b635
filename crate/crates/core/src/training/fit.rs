use std::fs::{self, File};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{lr_at, sample_lambda, Adam, TrainConfig};
use crate::data::augment::{default_mask_widths, spec_mask_in_place};
use crate::data::batch::batch_order;
use crate::data::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::model::{MixingWeight, MultiEncoderTransformer};
use crate::tensor::{Scalar, Tape};
use crate::textproc::PAD;

pub const RUN_LOG: &str = "run_log.jsonl";

const STREAM_LAMBDA: u64 = 1;
const STREAM_MASK: u64 = 2;
const STREAM_DROPOUT: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Rate used for the epoch's last step.
    pub lr: f64,
    /// Mean cross-entropy per target token.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub wall_time: f64,
    pub threads: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }
}

/// Instrumentation hooks called from inside [`fit`].
pub trait TrainObserver {
    fn on_batch(&mut self, _epoch: usize, _index: usize, _batch: &Batch, _mix: MixingWeight, _loss: f64) {}
    fn on_epoch(&mut self, _record: &EpochRecord) {}
}

impl TrainObserver for () {}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn target_tokens(batch: &Batch) -> usize {
    batch.targets().iter().filter(|&&t| t != PAD).count()
}

/// Token-weighted mean cross-entropy over `data` without dropout or masking.
pub fn dataset_loss<F: Scalar>(
    model: &MultiEncoderTransformer<F>,
    data: &Dataset,
    batch_size: usize,
    mix: MixingWeight,
) -> Result<f64> {
    let (mut total, mut count) = (0.0, 0usize);
    for ix in batch_order(data.items.len(), batch_size, None) {
        let batch = data.collate(&ix);
        let mut tape = Tape::new();
        let (loss, _) = model.loss(&mut tape, &batch, mix, None)?;
        let n = target_tokens(&batch);
        total += tape.value(loss).item().as_f64() * n as f64;
        count += n;
    }
    Ok(total / count.max(1) as f64)
}

fn dump_batch(dir: &Path, epoch: usize, index: usize, batch: &Batch, mix: MixingWeight, lr: f64) -> Result<()> {
    let path = dir.join("nonfinite_batch.json");
    let dump = serde_json::json!({
        "epoch": epoch,
        "batch": index,
        "lambda": mix.audio(),
        "lr": lr,
        "clip_ids": batch.clip_ids,
        "item_ids": batch.item_ids,
    });
    fs::write(&path, dump.to_string()).map_err(|e| Error::io(&path, e))
}

/// Trains `model` in place. With `out_dir`, writes one JSON line per epoch
/// to `run_log.jsonl` and checkpoints named `epoch_{k}.ckpt` (0-based).
pub fn fit<F: Scalar>(
    model: &mut MultiEncoderTransformer<F>,
    train: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    observer: &mut dyn TrainObserver,
) -> Result<TrainHistory> {
    cfg.validate()?;
    let mut log = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(RUN_LOG);
            Some((File::create(&path).map_err(|e| Error::io(&path, e))?, path))
        }
        None => None,
    };

    let mut adam = Adam::new(model.params());
    let mut lambda_rng = stream(cfg.seed, STREAM_LAMBDA);
    let mut mask_rng = stream(cfg.seed, STREAM_MASK);
    let mut dropout_rng = stream(cfg.seed, STREAM_DROPOUT);
    let first = &train.clips[0].audio;
    let (auto_t, auto_f) = default_mask_widths(first.frames(), first.width());
    let (max_t, max_f) = (cfg.mask_time.unwrap_or(auto_t), cfg.mask_channels.unwrap_or(auto_f));
    let start = Instant::now();
    let mut history = TrainHistory::default();

    for epoch in 0..cfg.epochs {
        let order = batch_order(train.items.len(), cfg.batch_size, Some((cfg.seed, epoch as u64)));
        let steps = order.len();
        let (mut total, mut count) = (0.0, 0usize);
        let mut lr = 0.0;
        for (index, ix) in order.iter().enumerate() {
            let mut batch = train.collate(ix);
            if cfg.spec_augment {
                let width = batch.audio.width;
                for b in 0..batch.len() {
                    let len = batch.audio.lens[b];
                    let item = &mut batch.audio.item_mut(b)[..len * width];
                    spec_mask_in_place(item, len, width, max_t, max_f, &mut mask_rng);
                }
            }
            let mix = sample_lambda(&mut lambda_rng, cfg);
            lr = lr_at(epoch, index, steps, cfg);

            let mut tape = Tape::new();
            let (loss, _) = model.loss(&mut tape, &batch, mix, Some(&mut dropout_rng))?;
            let value = tape.value(loss).item().as_f64();
            let fail = |detail: String| -> Error {
                if let Some(dir) = out_dir {
                    if let Err(e) = dump_batch(dir, epoch, index, &batch, mix, lr) {
                        log::warn!("could not write batch dump: {e}");
                    }
                }
                Error::NonFiniteLoss {
                    epoch,
                    batch: index,
                    detail: format!("{detail}; clips {:?}; lambda {}", batch.clip_ids, mix.audio()),
                }
            };
            if !value.is_finite() {
                return Err(fail(format!("loss {value}")));
            }
            tape.backward(loss)?;
            let mut grads = tape.gradients(model.params());
            let norm = grads.global_norm().as_f64();
            if !norm.is_finite() {
                return Err(fail(format!("gradient norm {norm}")));
            }
            if let Some(c) = cfg.grad_clip {
                if norm > c {
                    grads.scale(F::of(c / norm));
                }
            }
            adam.step(model.params_mut(), &grads, lr)?;
            observer.on_batch(epoch, index, &batch, mix, value);

            let n = target_tokens(&batch);
            total += value * n as f64;
            count += n;
        }

        let val_loss = match val {
            Some(v) => Some(dataset_loss(model, v, cfg.batch_size, MixingWeight::new(cfg.val_lambda)?)?),
            None => None,
        };
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: total / count.max(1) as f64,
            val_loss,
            wall_time: start.elapsed().as_secs_f64(),
            threads: 1,
        };
        match record.val_loss {
            Some(v) => log::info!("epoch {epoch} lr {lr:.2e} train {:.4} val {v:.4}", record.train_loss),
            None => log::info!("epoch {epoch} lr {lr:.2e} train {:.4}", record.train_loss),
        }
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every_epoch || epoch + 1 == cfg.epochs {
                model.save(dir.join(format!("epoch_{epoch}.ckpt")))?;
            }
        }
        if let Some((file, path)) = log.as_mut() {
            let line = serde_json::to_string(&record).expect("record serializes");
            writeln!(file, "{line}").map_err(|e| Error::io(path.as_path(), e))?;
        }
        observer.on_epoch(&record);
        history.epochs.push(record);
    }
    Ok(history)
}
