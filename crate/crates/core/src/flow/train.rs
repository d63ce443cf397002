use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{FlowConfig, FlowModel, Standardizer};
use crate::datagen::TrainSample;
use crate::error::{Error, Result};
use crate::nn::Adam;
use crate::rng::{stream_rng, Stream};

/// Optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 50,
            batch_size: 1024,
            learning_rate: 1e-3,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs < 1 {
            return Err(Error::config("train.max_epochs", "must be >= 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("train.batch_size", "must be >= 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("train.learning_rate", "must be finite and > 0"));
        }
        if self.patience < 1 {
            return Err(Error::config("train.patience", "must be >= 1"));
        }
        Ok(())
    }
}

/// Mean per-sample NLL (flow coordinates) after one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_nll: f64,
    pub val_nll: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochLoss>,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::io::write_csv(path, &self.epochs)
    }

    pub fn best_val_nll(&self) -> Option<f64> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch).map(|e| e.val_nll)
    }
}

fn to_flow(std: &Standardizer, samples: &[TrainSample]) -> Vec<(Vec<f64>, f64)> {
    samples
        .iter()
        .map(|s| (std.theta_to_flow(&s.theta.to_array()), std.context_to_flow(s.h)))
        .collect()
}

/// Fits a flow by maximum likelihood with Adam and early stopping on the
/// validation NLL. Returns the weights from the best validation epoch.
pub fn train_flow(
    train: &[TrainSample],
    val: &[TrainSample],
    flow_cfg: &FlowConfig,
    cfg: &TrainConfig,
) -> Result<(FlowModel, History)> {
    cfg.validate()?;
    if val.is_empty() {
        return Err(Error::Insufficient("validation split is empty".into()));
    }
    let standardizer = Standardizer::fit(train)?;
    let mut model = FlowModel::new(flow_cfg.clone(), standardizer, cfg.seed)?;
    let train_x = to_flow(model.standardizer(), train);
    let val_x = to_flow(model.standardizer(), val);

    let mut params = model.params().to_vec();
    let mut best = params.clone();
    let mut opt = Adam::new(params.len(), cfg.learning_rate);
    let mut history = History::default();
    let mut best_val = f64::INFINITY;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);

    for epoch in 1..=cfg.max_epochs {
        let mut rng = stream_rng(cfg.seed, Stream::Shuffle, epoch as u64);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            batch.clear();
            batch.extend(idx.iter().map(|&i| train_x[i].clone()));
            let (loss, grad) = model
                .nll_and_grad(&params, &batch)
                .map_err(|_| Error::Diverged { epoch, batch: b, loss: f64::NAN })?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch, batch: b, loss });
            }
            total += loss * idx.len() as f64;
            opt.step(&mut params, &grad);
        }
        let train_nll = total / train_x.len() as f64;
        let val_nll = model
            .nll(&params, &val_x)
            .map_err(|_| Error::Diverged { epoch, batch: 0, loss: f64::NAN })?;
        if !val_nll.is_finite() {
            return Err(Error::Diverged { epoch, batch: 0, loss: val_nll });
        }
        history.epochs.push(EpochLoss { epoch, train_nll, val_nll });
        log::info!("epoch {epoch}: train {train_nll:.4} val {val_nll:.4}");

        if val_nll < best_val {
            best_val = val_nll;
            best.copy_from_slice(&params);
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    model.set_params(best)?;
    Ok((model, history))
}
