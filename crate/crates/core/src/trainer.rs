//! Training loop: sampler batches, phase loss, backprop, Adam, and per-epoch
//! evaluation on the test split.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Tensor};
use crate::batching::{Batch, SamplerConfig, SamplerKind};
use crate::error::{invalid, Error, Result};
use crate::eval::evaluate;
use crate::model::ModelParams;
use crate::objective::{bce_loss, total_loss, MixupConfig};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::text::{PUDataset, SplitPair};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    SourceSupervised,
    TargetPu,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Per-label binary cross-entropy on observed labels, unlabeled as 0.
    Bce,
    Pu(MixupConfig),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub phase: Phase,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub objective: Objective,
    pub sampler: SamplerConfig,
    pub eval_every: usize,
    /// Record wall-clock seconds per epoch; when off the column is 0.
    pub record_time: bool,
}

impl TrainConfig {
    /// Defaults: lr 5e-5, 12 epochs, batch 64, cycle sampler, evaluation
    /// every epoch.
    pub fn new(phase: Phase, objective: Objective, seed: u64) -> Self {
        Self {
            phase,
            lr: 5e-5,
            epochs: 12,
            seed,
            objective,
            sampler: SamplerConfig::new(SamplerKind::Cycle, 64),
            eval_every: 1,
            record_time: true,
        }
    }

    pub fn validate(&self, labels: usize) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(invalid("epochs must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(invalid("eval_every must be at least 1"));
        }
        if let Objective::Pu(m) = &self.objective {
            m.validate()?;
        }
        self.sampler.validate(labels)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_var: Option<f64>,
    pub loss_mix: Option<f64>,
    pub loss_total: Option<f64>,
    pub map: Option<f64>,
    pub seconds: f64,
    pub skipped_batches: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    /// `None` for an evaluation-only log.
    pub config: Option<TrainConfig>,
    pub records: Vec<EpochRecord>,
}

impl MetricsLog {
    pub const CSV_HEADER: &'static str = "epoch,loss_var,loss_mix,loss_total,map,seconds";

    /// A log with only the epoch-0 evaluation of `params`.
    pub fn eval_only(params: &ModelParams, test: &PUDataset) -> Result<Self> {
        Ok(Self {
            config: None,
            records: vec![EpochRecord {
                epoch: 0,
                loss_var: None,
                loss_mix: None,
                loss_total: None,
                map: Some(evaluate(params, test)?.map),
                seconds: 0.0,
                skipped_batches: 0,
            }],
        })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let cell = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.epoch,
                cell(r.loss_var),
                cell(r.loss_mix),
                cell(r.loss_total),
                cell(r.map),
                r.seconds
            )?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn final_map(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.map)
    }

    pub fn total_seconds(&self) -> f64 {
        self.records.iter().map(|r| r.seconds).sum()
    }
}

fn inputs<'a>(ds: &'a PUDataset, batch: &Batch) -> Vec<&'a [u32]> {
    batch.indices.iter().map(|&i| ds.samples[i].tokens.as_slice()).collect()
}

fn bce_targets(ds: &PUDataset, batch: &Batch) -> Tensor {
    let l = ds.num_labels();
    let data = batch
        .indices
        .iter()
        .flat_map(|&i| ds.observed.row(i).iter().map(|&b| if b { 1.0 } else { 0.0 }))
        .collect();
    Tensor::new(vec![batch.len(), l], data).expect("target shape")
}

struct StepLoss {
    var: Option<f64>,
    mix: Option<f64>,
    total: f64,
}

/// Trains `init` on `split.train` and evaluates on `split.test` against its
/// ground truth. Epoch 0 is the evaluation of `init`.
pub fn train(split: &SplitPair, cfg: &TrainConfig, init: &ModelParams) -> Result<(ModelParams, MetricsLog)> {
    let train_ds = &split.train;
    let labels = train_ds.num_labels();
    if init.config().labels != labels || split.test.num_labels() != labels {
        return Err(invalid(format!(
            "model has {} labels, train split {labels}, test split {}",
            init.config().labels,
            split.test.num_labels()
        )));
    }
    cfg.validate(labels)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = init.clone();
    let mut adam = AdamState::new(params.tensors(), AdamConfig::default());
    let mut records = vec![EpochRecord {
        epoch: 0,
        loss_var: None,
        loss_mix: None,
        loss_total: None,
        map: Some(evaluate(&params, &split.test)?.map),
        seconds: 0.0,
        skipped_batches: 0,
    }];

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let batches = cfg.sampler.epoch(&train_ds.observed, &mut rng)?;
        let (mut sum_var, mut sum_mix, mut sum_total) = (0.0, 0.0, 0.0);
        let mut used = 0usize;
        let mut skipped = 0usize;
        for (step, batch) in batches.iter().enumerate() {
            let diverged = |what: String| Error::Diverged {
                epoch,
                step,
                what,
                batch: Box::new(batch.clone()),
            };
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape, true);
            let x = inputs(train_ds, batch);
            let (loss, parts) = match &cfg.objective {
                Objective::Bce => {
                    let logits = bound.forward(&mut tape, &x)?;
                    let loss = bce_loss(&mut tape, logits, &bce_targets(train_ds, batch))?;
                    let total = tape.value(loss).item();
                    (loss, StepLoss { var: None, mix: None, total })
                }
                Objective::Pu(m) => match total_loss(&mut tape, &bound, &x, batch, m, &mut rng) {
                    Ok((loss, b)) => (
                        loss,
                        StepLoss {
                            var: Some(b.var_sum()),
                            mix: Some(b.mix_sum()),
                            total: b.total,
                        },
                    ),
                    Err(Error::Degenerate(msg)) => {
                        log::debug!("epoch {epoch} step {step}: skipping batch ({msg})");
                        skipped += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                },
            };
            if !parts.total.is_finite() {
                return Err(diverged(format!("loss is {}", parts.total)));
            }
            let grads = bound.grads(&tape.backward(loss)?);
            match adam_step(params.tensors_mut(), &grads, &mut adam, cfg.lr) {
                Ok(()) => {}
                Err(Error::NonFinite(what)) => return Err(diverged(what)),
                Err(e) => return Err(e),
            }
            sum_var += parts.var.unwrap_or(0.0);
            sum_mix += parts.mix.unwrap_or(0.0);
            sum_total += parts.total;
            used += 1;
        }
        if used == 0 {
            return Err(Error::Degenerate(format!(
                "every batch of epoch {epoch} was degenerate; no label had both positives and unlabeled samples"
            )));
        }
        let seconds = if cfg.record_time {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        };
        let is_pu = matches!(cfg.objective, Objective::Pu(_));
        let mean = |s: f64| s / used as f64;
        let map = if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            Some(evaluate(&params, &split.test)?.map)
        } else {
            None
        };
        log::info!(
            "epoch {epoch}: loss {:.6} map {}",
            mean(sum_total),
            map.map_or("-".into(), |m| format!("{m:.4}"))
        );
        records.push(EpochRecord {
            epoch,
            loss_var: is_pu.then(|| mean(sum_var)),
            loss_mix: is_pu.then(|| mean(sum_mix)),
            loss_total: Some(mean(sum_total)),
            map,
            seconds,
            skipped_batches: skipped,
        });
    }
    Ok((params, MetricsLog {
            config: Some(*cfg),
            records,
        }))
}
