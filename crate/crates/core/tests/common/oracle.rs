//! Straight-line loss oracle and the hand-worked loss examples.

use puda_core::autograd::{grad_check_many, Tape, Tensor};
use puda_core::batching::Batch;
use puda_core::model::{Bound, ModelParams, Stage, StageRepr};
use puda_core::objective::{
    mixup_term_label_at, plan_draws, total_loss_with_draws, total_loss_with_targets, variational_loss_label, LossBreakdown, MixupConfig,
    MixupDraw, PairDraw, Variant,
};
use puda_core::text::LabelMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{observed, sigmoid, tokens, toy_config, toy_model};

pub const STAGES: [Stage; 3] = [Stage::Word, Stage::Encoding, Stage::Sentence];

pub fn repr_at(m: &ModelParams, toks: &[u32], stage: Stage) -> StageRepr {
    let w = m.embed(toks).unwrap();
    if stage == Stage::Word {
        return w;
    }
    let e = m.encode(&w).unwrap();
    if stage == Stage::Encoding {
        return e;
    }
    m.pool(&e).unwrap()
}

pub fn lerp_repr(a: &StageRepr, b: &StageRepr, mu: f64) -> StageRepr {
    let mix = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(x, y)| mu * x + (1.0 - mu) * y).collect() };
    StageRepr {
        stage: a.stage,
        values: Tensor::new(a.values.shape().to_vec(), mix(a.values.data(), b.values.data())).unwrap(),
        weights: mix(&a.weights, &b.weights),
    }
}

pub fn guarded_ln(x: f64) -> f64 {
    x.max(1e-12).ln()
}

pub struct Oracle {
    pub var: Vec<f64>,
    pub mix: Vec<f64>,
    pub total: f64,
}

/// Straight-line evaluation, one sample at a time through the public
/// single-sample API, with plain f64 arithmetic for every loss formula.
pub fn oracle(m: &ModelParams, toks: &[Vec<u32>], batch: &Batch, draws: &[PairDraw], cfg: &MixupConfig) -> Oracle {
    let labels = m.config().labels;
    let logits: Vec<Vec<f64>> = toks.iter().map(|t| m.forward(t).unwrap().0).collect();
    let mut var = vec![0.0; labels];
    let mut mix = vec![0.0; labels];
    let mut total = 0.0;
    for d in draws {
        let l = d.label;
        let su: Vec<f64> = batch.unlabeled[l].iter().map(|&s| sigmoid(logits[s][l])).collect();
        let sp: Vec<f64> = batch.positives[l].iter().map(|&s| sigmoid(logits[s][l])).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        var[l] = match cfg.variant {
            Variant::Norm => mean(&su) - mean(&sp.iter().map(|x| x.abs()).collect::<Vec<_>>()),
            Variant::Log => guarded_ln(mean(&su)) - mean(&sp.iter().map(|&x| guarded_ln(x)).collect::<Vec<_>>()),
        };
        let ep = repr_at(m, &toks[d.p_slot], cfg.stage);
        let eu = repr_at(m, &toks[d.u_slot], cfg.stage);
        let mixed = lerp_repr(&ep, &eu, d.mu);
        let p_tilde = sigmoid(m.forward_from(&mixed).unwrap().0[l]);
        let target = d.mu + (1.0 - d.mu) * sigmoid(logits[d.u_slot][l]);
        mix[l] = match cfg.variant {
            Variant::Norm => (target - p_tilde).powi(2),
            Variant::Log => (guarded_ln(target) - guarded_ln(p_tilde)).powi(2),
        };
        total += var[l] + cfg.lambda * mix[l];
    }
    Oracle { var, mix, total }
}

pub fn random_case(rng: &mut ChaCha8Rng) -> (ModelParams, Vec<Vec<u32>>, Batch, MixupConfig) {
    let labels = rng.random_range(1..=3);
    let m = toy_model(labels, rng.random());
    let n = rng.random_range(2..=6);
    let cfg_m = toy_config(labels);
    let toks: Vec<Vec<u32>> = (0..n).map(|_| tokens(rng, &cfg_m)).collect();
    let obs = observed(rng, n, labels);
    let batch = Batch::from_indices((0..n).collect(), &obs);
    let cfg = MixupConfig {
        alpha: 0.3,
        beta: 0.3,
        lambda: rng.random_range(0.0..2.0),
        stage: STAGES[rng.random_range(0..3)],
        variant: if rng.random_bool(0.5) { Variant::Norm } else { Variant::Log },
    };
    (m, toks, batch, cfg)
}

pub fn tape_loss(
    m: &ModelParams,
    toks: &[Vec<u32>],
    batch: &Batch,
    cfg: &MixupConfig,
    draws: &[PairDraw],
) -> LossBreakdown {
    let mut tape = Tape::new();
    let bound = m.bind(&mut tape, true);
    let refs: Vec<&[u32]> = toks.iter().map(Vec::as_slice).collect();
    total_loss_with_draws(&mut tape, &bound, &refs, batch, cfg, draws, &[]).unwrap().1
}

/// Small dense solve for the crafted-head examples.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        b.swap(c, piv);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                let pivot = a[c].clone();
                for (x, p) in a[r][c..].iter_mut().zip(&pivot[c..]) {
                    *x -= f * p;
                }
                b[r] -= f * b[c];
            }
        }
    }
    (0..n).map(|i| b[i] / a[i][i]).collect()
}

/// Sets label 0's head column so the listed sentences get the given logits
/// (zero bias), making the head logit linear in the sentence vector.
pub fn craft_head(m: &mut ModelParams, sentences: &[&StageRepr], logits: &[f64]) {
    let gram: Vec<Vec<f64>> = sentences
        .iter()
        .map(|a| {
            sentences
                .iter()
                .map(|b| a.values.data().iter().zip(b.values.data()).map(|(x, y)| x * y).sum())
                .collect()
        })
        .collect();
    let alpha = solve(gram, logits.to_vec());
    let labels = m.config().labels;
    let d = m.config().dim;
    let w = m.get_mut("head_weight").unwrap().data_mut();
    for i in 0..d {
        w[i * labels] = sentences.iter().zip(&alpha).map(|(s, a)| a * s.values.data()[i]).sum();
    }
    m.get_mut("head_bias").unwrap().data_mut()[0] = 0.0;
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}


/// Worst absolute gap between tape and oracle (per-label terms and total)
/// over `trials` random toy batches.
pub fn oracle_deviation(seed: u64, trials: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let (m, toks, batch, cfg) = random_case(&mut rng);
        let (draws, skipped) = plan_draws(&batch, &cfg, &mut rng).unwrap();
        assert!(skipped.is_empty());
        let got = tape_loss(&m, &toks, &batch, &cfg, &draws);
        let want = oracle(&m, &toks, &batch, &draws, &cfg);
        for l in 0..got.var.len() {
            worst = worst.max((got.var[l] - want.var[l]).abs());
            worst = worst.max((got.mix[l] - want.mix[l]).abs());
        }
        worst = worst.max((got.total - want.total).abs());
    }
    worst
}

/// Tape values of the three variational examples: expected -0.5, 0, 0.
pub fn variational_examples() -> [f64; 3] {
    let eval = |u: &[f64], p: &[f64], v| {
        let mut t = Tape::new();
        let u = t.constant(Tensor::vector(u.iter().map(|&x| logit(x)).collect()));
        let p = t.constant(Tensor::vector(p.iter().map(|&x| logit(x)).collect()));
        let out = variational_loss_label(&mut t, u, p, v).unwrap();
        t.value(out).item()
    };
    [
        eval(&[0.2, 0.4], &[0.8], Variant::Norm),
        eval(&[0.5, 0.5, 0.5], &[0.5, 0.5], Variant::Norm),
        eval(&[0.5, 0.5], &[0.5], Variant::Log),
    ]
}

/// mu = 0.5, sigma(u) = 0.6, p~ = 0.7: target 0.8, term 0.01.
pub fn mixup_example() -> (f64, MixupDraw) {
    let mut m = toy_model(1, 5);
    let (su, sp) = ([3u32, 4, 5, 0, 0, 0], [9u32, 8, 7, 6, 0, 0]);
    let eu = repr_at(&m, &su, Stage::Sentence);
    let ep = repr_at(&m, &sp, Stage::Sentence);
    // with a linear head, the mixed logit is the average of the two logits
    craft_head(&mut m, &[&eu, &ep], &[logit(0.6), 2.0 * logit(0.7) - logit(0.6)]);
    let cfg = MixupConfig {
        stage: Stage::Sentence,
        ..Default::default()
    };
    mixup_term_label_at(&m, &su, &sp, 0, &cfg, 0.5).unwrap()
}

/// One label, U at 0.2 and 0.4, P at 0.8 (var -0.5), and the pair (p, u2)
/// with mu solved so the MixUp term is 0.01: total -0.49.
pub fn total_example() -> LossBreakdown {
    let mut m = toy_model(1, 6);
    let toks = vec![
        vec![3u32, 4, 0, 0, 0, 0],
        vec![5u32, 6, 7, 0, 0, 0],
        vec![8u32, 9, 10, 11, 0, 0],
    ];
    let s: Vec<StageRepr> = toks.iter().map(|t| repr_at(&m, t, Stage::Sentence)).collect();
    craft_head(&mut m, &[&s[0], &s[1], &s[2]], &[logit(0.2), logit(0.4), logit(0.8)]);
    let gap = |mu: f64| mu + (1.0 - mu) * 0.4 - sigmoid(mu * logit(0.8) + (1.0 - mu) * logit(0.4));
    let (mut lo, mut hi) = (0.5, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gap(mid) < 0.1 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut obs = LabelMatrix::zeros(3, 1);
    obs.set(2, 0, true);
    let batch = Batch::from_indices(vec![0, 1, 2], &obs);
    let cfg = MixupConfig {
        stage: Stage::Sentence,
        ..Default::default()
    };
    let draw = PairDraw {
        label: 0,
        p_slot: 2,
        u_slot: 1,
        mu: lo,
    };
    tape_loss(&m, &toks, &batch, &cfg, &[draw])
}

/// Over random models and pairs, for every stage and variant: the largest
/// |term| at mu = 0 and the largest gap to the closed form at mu = 1.
pub fn boundary_deviation(seed: u64, trials: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut at_zero, mut at_one): (f64, f64) = (0.0, 0.0);
    for trial in 0..trials {
        let m = toy_model(3, trial);
        let cfg_m = toy_config(3);
        let su = tokens(&mut rng, &cfg_m);
        let sp = tokens(&mut rng, &cfg_m);
        let l = trial as usize % 3;
        let p = sigmoid(m.forward(&sp).unwrap().0[l]);
        for stage in STAGES {
            for variant in [Variant::Norm, Variant::Log] {
                let cfg = MixupConfig {
                    stage,
                    variant,
                    ..Default::default()
                };
                let (zero, _) = mixup_term_label_at(&m, &su, &sp, l, &cfg, 0.0).unwrap();
                at_zero = at_zero.max(zero.abs());
                let (one, d) = mixup_term_label_at(&m, &su, &sp, l, &cfg, 1.0).unwrap();
                assert_eq!(d.target, 1.0);
                let want = match variant {
                    Variant::Norm => (1.0 - p).powi(2),
                    Variant::Log => p.ln().powi(2),
                };
                at_one = at_one.max((one - want).abs());
            }
        }
    }
    (at_zero, at_one)
}

/// Worst finite-difference relative error of the whole loss over `trials`
/// random toy batches. Mixed targets carry no gradient, so each probe holds
/// them at their base values.
pub fn full_loss_grad_check(seed: u64, trials: usize, h: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let (m, toks, batch, cfg) = random_case(&mut rng);
        let (draws, skipped) = plan_draws(&batch, &cfg, &mut rng).unwrap();
        let targets: Vec<f64> = tape_loss(&m, &toks, &batch, &cfg, &draws).draws.iter().map(|d| d.target).collect();
        let refs: Vec<&[u32]> = toks.iter().map(Vec::as_slice).collect();
        let cfg_m = *m.config();
        let r = grad_check_many(
            |tape, vars| {
                let bound = Bound::from_vars(tape, cfg_m, vars.to_vec())?;
                Ok(total_loss_with_targets(tape, &bound, &refs, &batch, &cfg, &draws, &skipped, &targets)?.0)
            },
            m.tensors(),
            h,
        )
        .unwrap();
        worst = worst.max(r.max_rel_error);
    }
    worst
}
