//! Training losses: the per-label PU variational loss, the MixUp
//! consistency term, their per-batch combination, and the BCE baseline.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::autograd::{sigmoid, Tape, Tensor, Var, LN_FLOOR};
use crate::batching::Batch;
use crate::error::{invalid, shape_err, Error, Result};
use crate::model::{Bound, ModelParams, Stage, StageBatch, StageRepr};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// `mean σ(u) − mean |σ(p)|`
    Norm,
    /// `ln mean σ(u) − mean ln σ(p)`
    Log,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "norm" => Ok(Self::Norm),
            "log" => Ok(Self::Log),
            _ => Err(invalid(format!("unknown variant `{s}`"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Norm => "norm",
            Self::Log => "log",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixupConfig {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub stage: Stage,
    pub variant: Variant,
}

impl Default for MixupConfig {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            beta: 0.3,
            lambda: 1.0,
            stage: Stage::Word,
            variant: Variant::Norm,
        }
    }
}

impl MixupConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) || !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(invalid(format!(
                "Beta shapes must be positive, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }

    fn beta_dist(&self) -> Result<Beta<f64>> {
        self.validate()?;
        Beta::new(self.alpha, self.beta).map_err(|e| invalid(format!("Beta({}, {}): {e}", self.alpha, self.beta)))
    }
}

/// The random choices behind one label's MixUp term: the positive and
/// unlabeled batch slots and the interpolation weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDraw {
    pub label: usize,
    pub p_slot: usize,
    pub u_slot: usize,
    pub mu: f64,
}

/// A completed MixUp draw: the pair, the mixed representation and the
/// interpolated target.
#[derive(Clone, Debug, PartialEq)]
pub struct MixupDraw {
    pub label: usize,
    pub mu: f64,
    pub u_index: usize,
    pub p_index: usize,
    pub mixed_repr: StageRepr,
    pub target: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    /// Variational loss per label; 0 for skipped labels.
    pub var: Vec<f64>,
    /// MixUp term per label (unweighted by lambda); 0 for skipped labels.
    pub mix: Vec<f64>,
    pub total: f64,
    pub skipped: Vec<usize>,
    pub draws: Vec<MixupDraw>,
}

impl LossBreakdown {
    pub fn var_sum(&self) -> f64 {
        self.var.iter().sum()
    }

    pub fn mix_sum(&self) -> f64 {
        self.mix.iter().sum()
    }
}

/// Per-label variational loss from the logits of the unlabeled and positive
/// members. Empty `p` is an error; empty `u` is [`Error::Degenerate`].
pub fn variational_loss_label(tape: &mut Tape, u_logits: Var, p_logits: Var, variant: Variant) -> Result<Var> {
    if tape.value(p_logits).numel() == 0 {
        return Err(invalid("variational loss needs at least one positive"));
    }
    if tape.value(u_logits).numel() == 0 {
        return Err(Error::Degenerate("no unlabeled samples for this label".into()));
    }
    let su = tape.sigmoid(u_logits);
    let sp = tape.sigmoid(p_logits);
    match variant {
        Variant::Norm => {
            let mu = tape.mean(su)?;
            let ap = tape.abs(sp);
            let mp = tape.mean(ap)?;
            tape.sub(mu, mp)
        }
        Variant::Log => {
            let mu = tape.mean(su)?;
            let lu = tape.ln(mu);
            let lp = tape.ln(sp);
            let mp = tape.mean(lp)?;
            tape.sub(lu, mp)
        }
    }
}

/// Draws the pair and weight for every label that has both positives and
/// unlabeled members; returns the draws and the skipped labels.
pub fn plan_draws<R: Rng>(batch: &Batch, cfg: &MixupConfig, rng: &mut R) -> Result<(Vec<PairDraw>, Vec<usize>)> {
    let dist = cfg.beta_dist()?;
    let mut draws = Vec::new();
    let mut skipped = Vec::new();
    for l in 0..batch.num_labels() {
        let (p, u) = (&batch.positives[l], &batch.unlabeled[l]);
        if p.is_empty() || u.is_empty() {
            skipped.push(l);
            continue;
        }
        let p_slot = *p.choose(rng).unwrap();
        let u_slot = *u.choose(rng).unwrap();
        let mu = dist.sample(rng);
        draws.push(PairDraw {
            label: l,
            p_slot,
            u_slot,
            mu,
        });
    }
    if draws.is_empty() {
        return Err(Error::Degenerate(
            "every label lacks positives or unlabeled samples in this batch".into(),
        ));
    }
    Ok((draws, skipped))
}

/// Combined loss for one batch: per label, the variational loss plus
/// lambda times the MixUp term. `inputs` holds the token ids of each batch
/// slot.
pub fn total_loss<R: Rng>(
    tape: &mut Tape,
    model: &Bound,
    inputs: &[&[u32]],
    batch: &Batch,
    cfg: &MixupConfig,
    rng: &mut R,
) -> Result<(Var, LossBreakdown)> {
    let (draws, skipped) = plan_draws(batch, cfg, rng)?;
    total_loss_with_draws(tape, model, inputs, batch, cfg, &draws, &skipped)
}

/// [`total_loss`] with the random choices supplied by the caller.
pub fn total_loss_with_draws(
    tape: &mut Tape,
    model: &Bound,
    inputs: &[&[u32]],
    batch: &Batch,
    cfg: &MixupConfig,
    draws: &[PairDraw],
    skipped: &[usize],
) -> Result<(Var, LossBreakdown)> {
    build_total(tape, model, inputs, batch, cfg, draws, skipped, None)
}

/// [`total_loss_with_draws`] with the MixUp targets pinned to `targets`, one
/// per draw, instead of being read off the current logits. Since targets
/// carry no gradient, the result has the same gradient as the unpinned loss
/// when `targets` are the unpinned values; finite differences of this
/// function are what that gradient should match.
#[allow(clippy::too_many_arguments)]
pub fn total_loss_with_targets(
    tape: &mut Tape,
    model: &Bound,
    inputs: &[&[u32]],
    batch: &Batch,
    cfg: &MixupConfig,
    draws: &[PairDraw],
    skipped: &[usize],
    targets: &[f64],
) -> Result<(Var, LossBreakdown)> {
    if targets.len() != draws.len() {
        return Err(shape_err(
            "total_loss",
            format!("{} targets for {} draws", targets.len(), draws.len()),
        ));
    }
    build_total(tape, model, inputs, batch, cfg, draws, skipped, Some(targets))
}

#[allow(clippy::too_many_arguments)]
fn build_total(
    tape: &mut Tape,
    model: &Bound,
    inputs: &[&[u32]],
    batch: &Batch,
    cfg: &MixupConfig,
    draws: &[PairDraw],
    skipped: &[usize],
    pinned: Option<&[f64]>,
) -> Result<(Var, LossBreakdown)> {
    cfg.validate()?;
    if inputs.len() != batch.len() {
        return Err(shape_err(
            "total_loss",
            format!("{} inputs for a batch of {}", inputs.len(), batch.len()),
        ));
    }
    let labels = model.config().labels;
    if batch.num_labels() != labels {
        return Err(shape_err(
            "total_loss",
            format!("batch has {} labels, model {labels}", batch.num_labels()),
        ));
    }
    let stages = model.forward_stages(tape, inputs)?;
    let logits = stages.logits;
    let flat = |slots: &[usize], l: usize| -> Vec<usize> { slots.iter().map(|s| s * labels + l).collect() };

    let mut var_terms = Vec::with_capacity(draws.len());
    for d in draws {
        let u = tape.take(logits, &flat(&batch.unlabeled[d.label], d.label))?;
        let p = tape.take(logits, &flat(&batch.positives[d.label], d.label))?;
        var_terms.push(variational_loss_label(tape, u, p, cfg.variant)?);
    }

    let targets: Vec<f64> = match pinned {
        Some(t) => t.to_vec(),
        None => {
            let lv = tape.value(logits);
            draws.iter().map(|d| mixed_target(lv, labels, d)).collect()
        }
    };
    let (mix_terms, mixed) = mixup_terms(tape, model, stages.at(cfg.stage), &targets, draws, cfg.variant)?;

    let mut breakdown = LossBreakdown {
        var: vec![0.0; labels],
        mix: vec![0.0; labels],
        total: 0.0,
        skipped: skipped.to_vec(),
        draws: Vec::with_capacity(draws.len()),
    };
    let mut total: Option<Var> = None;
    for (k, d) in draws.iter().enumerate() {
        let m = tape.take(mix_terms, &[k])?;
        let wm = tape.scale(m, cfg.lambda);
        let term = tape.add(var_terms[k], wm)?;
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term)?,
        });
        breakdown.var[d.label] = tape.value(var_terms[k]).item();
        breakdown.mix[d.label] = tape.value(m).item();
        breakdown.draws.push(MixupDraw {
            label: d.label,
            mu: d.mu,
            u_index: batch.indices[d.u_slot],
            p_index: batch.indices[d.p_slot],
            mixed_repr: mixed.repr(tape, k),
            target: targets[k],
        });
    }
    let total = total.ok_or_else(|| Error::Degenerate("no labels to train on".into()))?;
    breakdown.total = tape.value(total).item();
    Ok((total, breakdown))
}

fn mixed_target(logits: &Tensor, labels: usize, d: &PairDraw) -> f64 {
    let su = sigmoid(logits.data()[d.u_slot * labels + d.label]);
    d.mu + (1.0 - d.mu) * su
}

/// MixUp terms for all draws at once: a vector with one entry per draw, and
/// the mixed representations.
fn mixup_terms(
    tape: &mut Tape,
    model: &Bound,
    stage: &StageBatch,
    targets: &[f64],
    draws: &[PairDraw],
    variant: Variant,
) -> Result<(Var, StageBatch)> {
    let labels = model.config().labels;
    let p_rows: Vec<usize> = draws.iter().map(|d| d.p_slot).collect();
    let u_rows: Vec<usize> = draws.iter().map(|d| d.u_slot).collect();
    let mus: Vec<f64> = draws.iter().map(|d| d.mu).collect();
    let ep = stage.select(tape, &p_rows)?;
    let eu = stage.select(tape, &u_rows)?;
    let mixed = StageBatch::lerp(tape, &ep, &eu, &mus)?;
    let mixed_logits = model.forward_from(tape, &mixed)?;
    let diag: Vec<usize> = draws.iter().enumerate().map(|(k, d)| k * labels + d.label).collect();
    let picked = tape.take(mixed_logits, &diag)?;
    let p_tilde = tape.sigmoid(picked);

    // The target is a constant: no gradient flows into the unlabeled sample
    // through it.
    let terms = match variant {
        Variant::Norm => {
            let t = tape.constant(Tensor::vector(targets.to_vec()));
            let diff = tape.sub(t, p_tilde)?;
            tape.square(diff)
        }
        Variant::Log => {
            let lt = targets.iter().map(|&t| t.max(LN_FLOOR).ln()).collect();
            let t = tape.constant(Tensor::vector(lt));
            let lp = tape.ln(p_tilde);
            let diff = tape.sub(t, lp)?;
            tape.square(diff)
        }
    };
    Ok((terms, mixed))
}

/// MixUp term of one (unlabeled, positive) pair for `label`, evaluated on
/// frozen parameters. Draws `mu` from the configured Beta distribution.
pub fn mixup_term_label<R: Rng>(
    model: &ModelParams,
    s_u: &[u32],
    s_p: &[u32],
    label: usize,
    cfg: &MixupConfig,
    rng: &mut R,
) -> Result<(f64, MixupDraw)> {
    let mu = cfg.beta_dist()?.sample(rng);
    mixup_term_label_at(model, s_u, s_p, label, cfg, mu)
}

/// [`mixup_term_label`] at a given `mu`.
pub fn mixup_term_label_at(
    model: &ModelParams,
    s_u: &[u32],
    s_p: &[u32],
    label: usize,
    cfg: &MixupConfig,
    mu: f64,
) -> Result<(f64, MixupDraw)> {
    if label >= model.config().labels {
        return Err(invalid(format!("label {label} out of range")));
    }
    if !(0.0..=1.0).contains(&mu) {
        return Err(invalid(format!("mu {mu} outside [0, 1]")));
    }
    if s_u.len() != s_p.len() {
        return Err(shape_err("mixup", "paired samples must share a padded length"));
    }
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let stages = bound.forward_stages(&mut tape, &[s_p, s_u])?;
    let draw = PairDraw {
        label,
        p_slot: 0,
        u_slot: 1,
        mu,
    };
    let target = mixed_target(tape.value(stages.logits), model.config().labels, &draw);
    let (terms, mixed) = mixup_terms(&mut tape, &bound, stages.at(cfg.stage), &[target], &[draw], cfg.variant)?;
    let value = tape.value(terms).item();
    Ok((
        value,
        MixupDraw {
            label,
            mu,
            u_index: 1,
            p_index: 0,
            mixed_repr: mixed.repr(&tape, 0),
            target,
        },
    ))
}

/// Mean binary cross-entropy over every (sample, label) entry, in the stable
/// form `y·softplus(−x) + (1 − y)·softplus(x)`.
pub fn bce_loss(tape: &mut Tape, logits: Var, targets: &Tensor) -> Result<Var> {
    if tape.shape(logits) != targets.shape() {
        return Err(shape_err(
            "bce",
            format!("logits {:?} vs targets {:?}", tape.shape(logits), targets.shape()),
        ));
    }
    if let Some(bad) = targets.data().iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(invalid(format!("BCE target {bad} is not 0 or 1")));
    }
    let neg = targets.data().iter().map(|y| 1.0 - y).collect();
    let y = tape.constant(targets.clone());
    let ny = tape.constant(Tensor::new(targets.shape().to_vec(), neg)?);
    let minus = tape.scale(logits, -1.0);
    let sp_neg = tape.softplus(minus);
    let sp_pos = tape.softplus(logits);
    let a = tape.mul(y, sp_neg)?;
    let b = tape.mul(ny, sp_pos)?;
    let per = tape.add(a, b)?;
    tape.mean(per)
}
