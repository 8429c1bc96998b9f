//! Training loop: AdamW on the L1 loss with warm-restart cosine schedule,
//! per-epoch CSV log, checkpoints and exact resume.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, ParamStore};
use crate::checkpoint::Checkpoint;
use crate::config::{LossKind, RunConfig};
use crate::data::{collate, denormalize, AugmentOps, ImagePair};
use crate::error::{Error, Result};
use crate::guided::{Dagf, DagfConfig};
use crate::loss::l1_loss;
use crate::metrics::{psnr, ssim, SsimConfig};
use crate::optim::{adamw_step, AdamState, SchedulerState};

pub const CSV_HEADER: &str = "epoch,lr,train_l1,val_psnr,val_ssim";
pub const CONFIG_ENTRY: &str = "meta/model_config";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    /// Zero-based index of the epoch just finished.
    pub epoch: u64,
    /// Learning rate at the first step of the epoch.
    pub lr: f64,
    pub train_l1: f64,
    pub val_psnr: f64,
    pub val_ssim: f64,
}

impl EpochStats {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch,
            self.lr,
            self.train_l1,
            fmt_metric(self.val_psnr),
            self.val_ssim
        )
    }
}

/// Plain decimal, `inf` for infinities.
pub fn fmt_metric(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".into()
    } else if v.is_infinite() {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

/// Rebuilds a model from a checkpoint that carries its configuration.
pub fn model_from_checkpoint(ck: &Checkpoint) -> Result<(Dagf, ParamStore<f32>)> {
    let text = ck.text(CONFIG_ENTRY)?;
    let cfg: DagfConfig =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("bad model config: {e}")))?;
    let (model, mut store) = Dagf::build(&cfg, 0)?;
    ck.load_params(&mut store)?;
    Ok((model, store))
}

/// Mean PSNR (dB, peak 1) and SSIM of the model's outputs on `pairs`, in `[0, 1]`.
pub fn evaluate(model: &Dagf, store: &ParamStore<f32>, pairs: &[ImagePair]) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    let (mut p, mut s) = (0.0, 0.0);
    for pair in pairs {
        let y = model.infer(store, &pair.degraded.unsqueeze0(), false)?;
        let (y, gt) = (denormalize(&y), denormalize(&pair.clean.unsqueeze0()));
        p += psnr(&y, &gt, 1.0)?;
        s += ssim(&y, &gt, &SsimConfig::default())?;
    }
    let n = pairs.len() as f64;
    Ok((p / n, s / n))
}

pub struct Trainer {
    pub config: RunConfig,
    pub model: Dagf,
    pub store: ParamStore<f32>,
    pub adam: AdamState<f32>,
    pub sched: SchedulerState,
    /// Completed epochs.
    pub epoch: u64,
    train: Vec<ImagePair>,
    val: Vec<ImagePair>,
}

impl Trainer {
    /// Fresh model initialised from `config.seed`. An empty `val` validates on `train`.
    pub fn new(config: RunConfig, train: Vec<ImagePair>, val: Vec<ImagePair>) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        let (model, store) = Dagf::build(&config.model, config.seed)?;
        let adam = AdamState::new(&store);
        let sched = SchedulerState::new(train.len().div_ceil(config.batch_size) as u64);
        let val = if val.is_empty() { train.clone() } else { val };
        let mut t = Self {
            config,
            model,
            store,
            adam,
            sched,
            epoch: 0,
            train,
            val,
        };
        if let Some(path) = t.config.pretrain_checkpoint.clone() {
            t.load_pretrained(&path)?;
        }
        Ok(t)
    }

    /// Continues a run from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(config: RunConfig, ck: &Checkpoint, train: Vec<ImagePair>, val: Vec<ImagePair>) -> Result<Self> {
        let config = RunConfig {
            pretrain_checkpoint: None,
            ..config
        };
        let mut t = Self::new(config, train, val)?;
        ck.load_params(&mut t.store)?;
        let (adam, sched, epoch) = ck.training_state(&t.store)?;
        if sched.steps_per_epoch != t.sched.steps_per_epoch {
            return Err(Error::Checkpoint(format!(
                "checkpoint used {} steps per epoch, this dataset gives {}",
                sched.steps_per_epoch, t.sched.steps_per_epoch
            )));
        }
        t.adam = adam;
        t.sched = sched;
        t.epoch = epoch;
        Ok(t)
    }

    /// Copies model parameters (not optimizer state) from a checkpoint.
    pub fn load_pretrained(&mut self, path: &Path) -> Result<()> {
        Checkpoint::load(path)?.load_params(&mut self.store)?;
        info!("initialised from {}", path.display());
        Ok(())
    }

    pub fn train_pairs(&self) -> &[ImagePair] {
        &self.train
    }

    pub fn lr(&self) -> f64 {
        self.sched.lr(&self.config.schedule, self.config.optim.lr)
    }

    /// Model parameters, configuration and optimizer/scheduler state.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new();
        ck.add_params(&self.store);
        let cfg = serde_json::to_string(&self.model.config).map_err(|e| Error::Checkpoint(e.to_string()))?;
        ck.add_text(CONFIG_ENTRY, &cfg);
        ck.add_training_state(&self.store, &self.adam, &self.sched, self.epoch);
        Ok(ck)
    }

    /// One optimizer step on a batch; returns the batch loss before the update.
    pub fn step(&mut self, batch: &[ImagePair]) -> Result<f64> {
        let (x, y) = collate(batch)?;
        let lr = self.lr();
        let (grads, value) = {
            let mut g = Graph::new(&self.store);
            let xv = g.constant(x);
            let yv = g.constant(y);
            let pred = self.model.forward(&mut g, xv)?;
            let loss = match self.config.loss {
                LossKind::L1 => l1_loss(&mut g, pred, yv)?,
            };
            let value = f64::from(g.value(loss).item()?);
            (g.backward(loss)?, value)
        };
        if !value.is_finite() {
            return Err(Error::Contract(format!("non-finite loss at step {}", self.sched.step)));
        }
        self.store.zero_grad();
        self.store.accumulate(&grads)?;
        adamw_step(&mut self.store, &mut self.adam, &self.config.optim, lr)?;
        self.sched.advance();
        Ok(value)
    }

    fn epoch_rng(&self, epoch: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.config.seed ^ (epoch + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }

    /// Shuffled, augmented and cropped batches for one epoch.
    pub fn epoch_batches(&self, epoch: u64) -> Result<Vec<Vec<ImagePair>>> {
        let mut rng = self.epoch_rng(epoch);
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut rng);
        let mut batches = Vec::new();
        for chunk in order.chunks(self.config.batch_size) {
            let mut batch = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let mut pair = self.train[i].clone();
                if self.config.augment {
                    pair = AugmentOps::from_seed(rng.next_u64()).apply_pair(&pair);
                }
                if let Some([h, w]) = self.config.crop {
                    pair = pair.random_crop(h, w, &mut rng)?;
                }
                batch.push(pair);
            }
            batches.push(batch);
        }
        Ok(batches)
    }

    pub fn run_epoch(&mut self) -> Result<EpochStats> {
        let epoch = self.epoch;
        let lr = self.lr();
        let mut total = 0.0;
        let batches = self.epoch_batches(epoch)?;
        for batch in &batches {
            total += self.step(batch)?;
        }
        self.epoch += 1;
        let (val_psnr, val_ssim) = evaluate(&self.model, &self.store, &self.val)?;
        Ok(EpochStats {
            epoch,
            lr,
            train_l1: total / batches.len() as f64,
            val_psnr,
            val_ssim,
        })
    }

    /// Trains up to `config.epochs`, appending to `metrics.csv` in `out_dir`
    /// and writing checkpoints at every cycle boundary and at the end.
    /// Returns the stats of the epochs run and the final checkpoint path.
    pub fn fit(&mut self, out_dir: &Path) -> Result<(Vec<EpochStats>, PathBuf)> {
        fs::create_dir_all(out_dir)?;
        let csv = out_dir.join("metrics.csv");
        if !csv.exists() {
            fs::write(&csv, format!("{CSV_HEADER}\n"))?;
        }
        let boundaries = self.config.schedule.boundaries(self.config.epochs as f64);
        let mut stats = Vec::new();
        while self.epoch < self.config.epochs as u64 {
            let s = self.run_epoch()?;
            info!(
                "epoch {} lr {:.3e} l1 {:.5} psnr {} ssim {:.4}",
                s.epoch,
                s.lr,
                s.train_l1,
                fmt_metric(s.val_psnr),
                s.val_ssim
            );
            let mut f = OpenOptions::new().append(true).open(&csv)?;
            writeln!(f, "{}", s.csv_row())?;
            stats.push(s);
            if boundaries.contains(&(self.epoch as f64)) && self.epoch < self.config.epochs as u64 {
                self.checkpoint()?.save(&out_dir.join(format!("epoch_{:04}.dagf", self.epoch)))?;
            }
        }
        let last = out_dir.join("last.dagf");
        self.checkpoint()?.save(&last)?;
        Ok((stats, last))
    }
}
