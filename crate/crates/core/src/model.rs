//! Small transformer classifier: token embedding, one pre-norm encoder
//! block, masked mean pooling with a dense+tanh pooler, and a linear head
//! producing one logit per label.
//!
//! The forward pass is split at three stages (word embeddings, encoder
//! output, pooled sentence vector) so that representations can be extracted,
//! interpolated and fed back in.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, Tape, Tensor, Var};
use crate::error::{invalid, shape_err, Error, Result};
use crate::par;
use crate::text::PAD;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub labels: usize,
    pub max_len: usize,
}

impl ModelConfig {
    pub fn ffn_dim(&self) -> usize {
        4 * self.dim
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Word,
    Encoding,
    Sentence,
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word" => Ok(Self::Word),
            "encoding" => Ok(Self::Encoding),
            "sentence" => Ok(Self::Sentence),
            _ => Err(invalid(format!("unknown stage `{s}`"))),
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Word => "word",
            Self::Encoding => "encoding",
            Self::Sentence => "sentence",
        })
    }
}

/// Representation of one sample at a given stage.
///
/// `values` is `[T, d]` for word/encoding and `[d]` for sentence. `weights`
/// holds one non-negative weight per position (1 for tokens, 0 for PAD);
/// it is empty at the sentence stage. Interpolated representations carry
/// interpolated weights.
#[derive(Clone, Debug, PartialEq)]
pub struct StageRepr {
    pub stage: Stage,
    pub values: Tensor,
    pub weights: Vec<f64>,
}

/// Raw per-label scores.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitVector(pub Vec<f64>);

impl LogitVector {
    pub fn probabilities(&self) -> Vec<f64> {
        self.0.iter().map(|&x| crate::autograd::sigmoid(x)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(usize)]
enum P {
    Embedding,
    Ln1Gain,
    Ln1Bias,
    Wq,
    Bq,
    Wk,
    Bk,
    Wv,
    Bv,
    Wo,
    Bo,
    Ln2Gain,
    Ln2Bias,
    W1,
    B1,
    W2,
    B2,
    PoolW,
    PoolB,
    HeadW,
    HeadB,
}

pub const PARAM_NAMES: [&str; 21] = [
    "embedding",
    "ln1_gain",
    "ln1_bias",
    "attn_q_weight",
    "attn_q_bias",
    "attn_k_weight",
    "attn_k_bias",
    "attn_v_weight",
    "attn_v_bias",
    "attn_out_weight",
    "attn_out_bias",
    "ln2_gain",
    "ln2_bias",
    "ffn_in_weight",
    "ffn_in_bias",
    "ffn_out_weight",
    "ffn_out_bias",
    "pooler_weight",
    "pooler_bias",
    "head_weight",
    "head_bias",
];

#[derive(Clone, Copy, PartialEq)]
enum Init {
    Uniform,
    Zero,
    One,
}

fn param_spec(cfg: &ModelConfig) -> [(Vec<usize>, Init); 21] {
    let (v, d, f, l) = (cfg.vocab_size, cfg.dim, cfg.ffn_dim(), cfg.labels);
    use Init::*;
    [
        (vec![v, d], Uniform),
        (vec![d], One),
        (vec![d], Zero),
        (vec![d, d], Uniform),
        (vec![d], Zero),
        (vec![d, d], Uniform),
        (vec![d], Zero),
        (vec![d, d], Uniform),
        (vec![d], Zero),
        (vec![d, d], Uniform),
        (vec![d], Zero),
        (vec![d], One),
        (vec![d], Zero),
        (vec![d, f], Uniform),
        (vec![f], Zero),
        (vec![f, d], Uniform),
        (vec![d], Zero),
        (vec![d, d], Uniform),
        (vec![d], Zero),
        (vec![d, l], Uniform),
        (vec![l], Zero),
    ]
}

/// All trainable tensors of the classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Seeded init: weights ~ U(-1/sqrt(d), 1/sqrt(d)), biases 0, layer-norm
    /// gains 1.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.vocab_size == 0 || config.dim == 0 || config.labels == 0 || config.max_len == 0 {
            return Err(invalid(format!("model dimensions must be positive: {config:?}")));
        }
        let bound = 1.0 / (config.dim as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = param_spec(&config)
            .into_iter()
            .map(|(shape, init)| match init {
                Init::Zero => Tensor::zeros(&shape),
                Init::One => Tensor::full(&shape, 1.0),
                Init::Uniform => {
                    let n = shape.iter().product();
                    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
                    Tensor::new(shape, data).expect("init shape")
                }
            })
            .collect();
        Ok(Self { config, tensors })
    }

    /// Rebuilds parameters from named tensors, checking every shape.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        let spec = param_spec(&config);
        if named.len() != spec.len() {
            return Err(invalid(format!(
                "expected {} parameter tensors, got {}",
                spec.len(),
                named.len()
            )));
        }
        let mut tensors = Vec::with_capacity(spec.len());
        for (i, ((name, t), (shape, _))) in named.into_iter().zip(spec).enumerate() {
            if name != PARAM_NAMES[i] {
                return Err(invalid(format!(
                    "parameter {i} is `{name}`, expected `{}`",
                    PARAM_NAMES[i]
                )));
            }
            if t.shape() != shape.as_slice() {
                return Err(invalid(format!(
                    "parameter `{name}` has shape {:?}, config implies {shape:?}",
                    t.shape()
                )));
            }
            if !t.all_finite() {
                return Err(invalid(format!("parameter `{name}` has non-finite values")));
            }
            tensors.push(t);
        }
        Ok(Self { config, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn named(&self) -> impl Iterator<Item = (&'static str, &Tensor)> {
        PARAM_NAMES.iter().copied().zip(&self.tensors)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        PARAM_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        PARAM_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| &mut self.tensors[i])
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Records the parameters on `tape`, as differentiable leaves when
    /// `trainable`, otherwise as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Bound {
            config: self.config,
            vars,
        }
    }

    fn with_tape<T>(&self, f: impl FnOnce(&mut Tape, &Bound) -> Result<T>) -> Result<T> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        f(&mut tape, &bound)
    }

    pub fn embed(&self, tokens: &[u32]) -> Result<StageRepr> {
        self.with_tape(|t, b| {
            let s = b.embed(t, &[tokens])?;
            Ok(s.repr(t, 0))
        })
    }

    pub fn encode(&self, word: &StageRepr) -> Result<StageRepr> {
        expect_stage("encode", word, Stage::Word)?;
        self.with_tape(|t, b| {
            let s = StageBatch::from_repr(t, word, &self.config)?;
            let e = b.encode(t, &s)?;
            Ok(e.repr(t, 0))
        })
    }

    pub fn pool(&self, encoding: &StageRepr) -> Result<StageRepr> {
        expect_stage("pool", encoding, Stage::Encoding)?;
        self.with_tape(|t, b| {
            let s = StageBatch::from_repr(t, encoding, &self.config)?;
            let p = b.pool(t, &s)?;
            Ok(p.repr(t, 0))
        })
    }

    pub fn classify(&self, sentence: &StageRepr) -> Result<LogitVector> {
        expect_stage("classify", sentence, Stage::Sentence)?;
        self.forward_from(sentence)
    }

    pub fn forward(&self, tokens: &[u32]) -> Result<LogitVector> {
        self.with_tape(|t, b| {
            let logits = b.forward(t, &[tokens])?;
            Ok(LogitVector(t.value(logits).data().to_vec()))
        })
    }

    /// Resumes the pipeline after the representation's stage.
    pub fn forward_from(&self, repr: &StageRepr) -> Result<LogitVector> {
        self.with_tape(|t, b| {
            let s = StageBatch::from_repr(t, repr, &self.config)?;
            let logits = b.forward_from(t, &s)?;
            Ok(LogitVector(t.value(logits).data().to_vec()))
        })
    }

    /// Attention probabilities `[T, T]` of the encoder block for one sample.
    pub fn attention(&self, word: &StageRepr) -> Result<Tensor> {
        expect_stage("attention", word, Stage::Word)?;
        self.with_tape(|t, b| {
            let s = StageBatch::from_repr(t, word, &self.config)?;
            let (_, attn) = b.encode_with_attention(t, &s)?;
            let tl = word.weights.len();
            t.value(attn).clone().reshaped(&[tl, tl])
        })
    }

    /// Sigmoid scores `[N, L]` for many samples, computed in chunks on frozen
    /// parameters. Chunks are independent and may run in parallel.
    pub fn predict_proba(&self, inputs: &[&[u32]], chunk: usize) -> Result<Tensor> {
        let chunk = chunk.max(1);
        let n_chunks = inputs.len().div_ceil(chunk);
        let parts = par::map_range(n_chunks, |c| {
            let rows = &inputs[c * chunk..((c + 1) * chunk).min(inputs.len())];
            self.with_tape(|t, b| {
                let logits = b.forward(t, rows)?;
                let probs = t.sigmoid(logits);
                Ok(t.value(probs).data().to_vec())
            })
        });
        let mut data = Vec::with_capacity(inputs.len() * self.config.labels);
        for p in parts {
            data.extend(p?);
        }
        Tensor::new(vec![inputs.len(), self.config.labels], data)
    }
}

fn expect_stage(op: &'static str, r: &StageRepr, want: Stage) -> Result<()> {
    if r.stage != want {
        return Err(shape_err(op, format!("expected {want} stage, got {}", r.stage)));
    }
    Ok(())
}

/// Sinusoidal position encodings `[T, d]`, scaled by `1/sqrt(d)` so they sit
/// at the same magnitude as freshly initialized token embeddings.
pub fn position_encoding(t: usize, d: usize) -> Tensor {
    let scale = 1.0 / (d as f64).sqrt();
    let mut data = vec![0.0; t * d];
    for pos in 0..t {
        for i in 0..d {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 * rate;
            data[pos * d + i] = scale * if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![t, d], data).expect("position encoding shape")
}

/// A batch of representations living on a tape.
///
/// `values` is `[B, T, d]` at word/encoding stage and `[B, d]` at sentence
/// stage; `weights` is `[B, T]` for the first two stages.
#[derive(Clone, Debug)]
pub struct StageBatch {
    pub stage: Stage,
    pub values: Var,
    pub weights: Option<Tensor>,
}

impl StageBatch {
    pub fn batch_size(&self, tape: &Tape) -> usize {
        tape.shape(self.values)[0]
    }

    fn from_repr(tape: &mut Tape, r: &StageRepr, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.dim;
        match r.stage {
            Stage::Sentence => {
                if r.values.shape() != [d] {
                    return Err(shape_err(
                        "forward_from",
                        format!("sentence repr {:?}, expected [{d}]", r.values.shape()),
                    ));
                }
                let v = tape.constant(r.values.clone().reshaped(&[1, d])?);
                Ok(Self {
                    stage: r.stage,
                    values: v,
                    weights: None,
                })
            }
            Stage::Word | Stage::Encoding => {
                let tl = r.weights.len();
                if r.values.shape() != [tl, d] || tl == 0 || tl > cfg.max_len {
                    return Err(shape_err(
                        "forward_from",
                        format!(
                            "{} repr {:?} with {tl} weights, expected [T, {d}], 1 <= T <= {}",
                            r.stage,
                            r.values.shape(),
                            cfg.max_len
                        ),
                    ));
                }
                let v = tape.constant(r.values.clone().reshaped(&[1, tl, d])?);
                Ok(Self {
                    stage: r.stage,
                    values: v,
                    weights: Some(Tensor::new(vec![1, tl], r.weights.clone())?),
                })
            }
        }
    }

    /// Copies sample `i` out of the batch.
    pub fn repr(&self, tape: &Tape, i: usize) -> StageRepr {
        let v = tape.value(self.values);
        let shape = v.shape();
        let per = v.numel() / shape[0];
        let data = v.data()[i * per..(i + 1) * per].to_vec();
        let inner = shape[1..].to_vec();
        StageRepr {
            stage: self.stage,
            values: Tensor::new(inner, data).expect("repr shape"),
            weights: self
                .weights
                .as_ref()
                .map(|w| w.row(i).to_vec())
                .unwrap_or_default(),
        }
    }

    /// Sub-batch made of the given rows (repeats allowed).
    pub fn select(&self, tape: &mut Tape, rows: &[usize]) -> Result<Self> {
        let shape = tape.shape(self.values).to_vec();
        let per: usize = shape[1..].iter().product();
        let flat = tape.reshape(self.values, &[shape[0], per])?;
        let picked = tape.gather_rows(flat, rows)?;
        let mut out_shape = shape.clone();
        out_shape[0] = rows.len();
        let values = tape.reshape(picked, &out_shape)?;
        let weights = match &self.weights {
            None => None,
            Some(w) => {
                let t = w.shape()[1];
                let mut data = Vec::with_capacity(rows.len() * t);
                for &r in rows {
                    data.extend_from_slice(w.row(r));
                }
                Some(Tensor::new(vec![rows.len(), t], data)?)
            }
        };
        Ok(Self {
            stage: self.stage,
            values,
            weights,
        })
    }

    /// Row-wise `mu * a + (1 - mu) * b`; position weights are interpolated
    /// the same way.
    pub fn lerp(tape: &mut Tape, a: &Self, b: &Self, mus: &[f64]) -> Result<Self> {
        if a.stage != b.stage {
            return Err(shape_err("lerp", format!("{} vs {} stage", a.stage, b.stage)));
        }
        let values = tape.lerp_rows(a.values, b.values, mus)?;
        let weights = match (&a.weights, &b.weights) {
            (Some(wa), Some(wb)) => {
                let t = wa.shape()[1];
                let data = wa
                    .data()
                    .iter()
                    .zip(wb.data())
                    .enumerate()
                    .map(|(i, (x, y))| {
                        let mu = if mus.len() == 1 { mus[0] } else { mus[i / t] };
                        mu * x + (1.0 - mu) * y
                    })
                    .collect();
                Some(Tensor::new(wa.shape().to_vec(), data)?)
            }
            (None, None) => None,
            _ => return Err(shape_err("lerp", "mismatched position weights")),
        };
        Ok(Self {
            stage: a.stage,
            values,
            weights,
        })
    }
}

/// Parameters recorded on a tape.
#[derive(Clone, Debug)]
pub struct Bound {
    config: ModelConfig,
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps tape variables holding the parameters in [`PARAM_NAMES`] order,
    /// e.g. the inputs handed out by a gradient check.
    pub fn from_vars(tape: &Tape, config: ModelConfig, vars: Vec<Var>) -> Result<Self> {
        let spec = param_spec(&config);
        if vars.len() != spec.len() {
            return Err(invalid(format!("expected {} parameter vars, got {}", spec.len(), vars.len())));
        }
        for (i, (v, (shape, _))) in vars.iter().zip(spec).enumerate() {
            if tape.shape(*v) != shape.as_slice() {
                return Err(shape_err(
                    "bind",
                    format!("`{}` is {:?}, config implies {shape:?}", PARAM_NAMES[i], tape.shape(*v)),
                ));
            }
        }
        Ok(Self { config, vars })
    }

    fn p(&self, p: P) -> Var {
        self.vars[p as usize]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Parameter gradients in [`PARAM_NAMES`] order.
    pub fn grads(&self, g: &Gradients) -> Vec<Tensor> {
        self.vars.iter().map(|&v| g.wrt(v)).collect()
    }

    fn linear(&self, tape: &mut Tape, x: Var, w: P, b: P) -> Result<Var> {
        let y = tape.matmul(x, self.p(w))?;
        tape.add(y, self.p(b))
    }

    /// Token embeddings plus position encodings, `[B, T, d]`.
    pub fn embed(&self, tape: &mut Tape, tokens: &[&[u32]]) -> Result<StageBatch> {
        let (v, d) = (self.config.vocab_size, self.config.dim);
        let b = tokens.len();
        let tl = tokens.first().map_or(0, |t| t.len());
        if b == 0 || tl == 0 || tl > self.config.max_len {
            return Err(shape_err(
                "embed",
                format!("batch of {b} sequences of length {tl}, max_len {}", self.config.max_len),
            ));
        }
        let mut ids = Vec::with_capacity(b * tl);
        let mut weights = Vec::with_capacity(b * tl);
        for seq in tokens {
            if seq.len() != tl {
                return Err(shape_err("embed", "sequences in a batch must share a length"));
            }
            for &t in seq.iter() {
                if t as usize >= v {
                    return Err(shape_err("embed", format!("token id {t} >= vocab size {v}")));
                }
                ids.push(t as usize);
                weights.push(if t == PAD { 0.0 } else { 1.0 });
            }
        }
        let rows = tape.gather_rows(self.p(P::Embedding), &ids)?;
        let rows = tape.reshape(rows, &[b, tl, d])?;
        let pe = tape.constant(position_encoding(tl, d));
        let values = tape.add(rows, pe)?;
        Ok(StageBatch {
            stage: Stage::Word,
            values,
            weights: Some(Tensor::new(vec![b, tl], weights)?),
        })
    }

    pub fn encode(&self, tape: &mut Tape, word: &StageBatch) -> Result<StageBatch> {
        Ok(self.encode_with_attention(tape, word)?.0)
    }

    fn encode_with_attention(&self, tape: &mut Tape, word: &StageBatch) -> Result<(StageBatch, Var)> {
        if word.stage != Stage::Word {
            return Err(shape_err("encode", format!("expected word stage, got {}", word.stage)));
        }
        let d = self.config.dim;
        let x = word.values;
        let h = tape.layer_norm(x, self.p(P::Ln1Gain), self.p(P::Ln1Bias))?;
        let q = self.linear(tape, h, P::Wq, P::Bq)?;
        let k = self.linear(tape, h, P::Wk, P::Bk)?;
        let v = self.linear(tape, h, P::Wv, P::Bv)?;
        let scores = tape.batch_matmul(q, k, true)?;
        let scores = tape.scale(scores, 1.0 / (d as f64).sqrt());
        let attn = tape.weighted_softmax(scores, word.weights.as_ref())?;
        let ctx = tape.batch_matmul(attn, v, false)?;
        let o = self.linear(tape, ctx, P::Wo, P::Bo)?;
        let x1 = tape.add(x, o)?;
        let h2 = tape.layer_norm(x1, self.p(P::Ln2Gain), self.p(P::Ln2Bias))?;
        let f = self.linear(tape, h2, P::W1, P::B1)?;
        let f = tape.gelu(f);
        let f = self.linear(tape, f, P::W2, P::B2)?;
        let out = tape.add(x1, f)?;
        Ok((
            StageBatch {
                stage: Stage::Encoding,
                values: out,
                weights: word.weights.clone(),
            },
            attn,
        ))
    }

    /// Weighted mean over positions, then dense + tanh.
    pub fn pool(&self, tape: &mut Tape, enc: &StageBatch) -> Result<StageBatch> {
        if enc.stage != Stage::Encoding {
            return Err(shape_err("pool", format!("expected encoding stage, got {}", enc.stage)));
        }
        let w = enc.weights.as_ref().ok_or_else(|| shape_err("pool", "missing weights"))?;
        let (b, tl) = (w.shape()[0], w.shape()[1]);
        let d = self.config.dim;
        let mut coeffs = Vec::with_capacity(b * tl);
        for r in 0..b {
            let row = w.row(r);
            let total: f64 = row.iter().sum();
            if total <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "sequence {r} is all padding; nothing to pool"
                )));
            }
            coeffs.extend(row.iter().map(|x| x / total));
        }
        let c = tape.constant(Tensor::new(vec![b, 1, tl], coeffs)?);
        let mean = tape.batch_matmul(c, enc.values, false)?;
        let mean = tape.reshape(mean, &[b, d])?;
        let z = self.linear(tape, mean, P::PoolW, P::PoolB)?;
        let z = tape.tanh(z);
        Ok(StageBatch {
            stage: Stage::Sentence,
            values: z,
            weights: None,
        })
    }

    /// Logits `[B, L]`.
    pub fn classify(&self, tape: &mut Tape, sentence: &StageBatch) -> Result<Var> {
        if sentence.stage != Stage::Sentence {
            return Err(shape_err(
                "classify",
                format!("expected sentence stage, got {}", sentence.stage),
            ));
        }
        self.linear(tape, sentence.values, P::HeadW, P::HeadB)
    }

    pub fn forward(&self, tape: &mut Tape, tokens: &[&[u32]]) -> Result<Var> {
        let w = self.embed(tape, tokens)?;
        self.forward_from(tape, &w)
    }

    pub fn forward_from(&self, tape: &mut Tape, s: &StageBatch) -> Result<Var> {
        match s.stage {
            Stage::Word => {
                let e = self.encode(tape, s)?;
                let p = self.pool(tape, &e)?;
                self.classify(tape, &p)
            }
            Stage::Encoding => {
                let p = self.pool(tape, s)?;
                self.classify(tape, &p)
            }
            Stage::Sentence => self.classify(tape, s),
        }
    }

    /// All three stage representations and the logits.
    pub fn forward_stages(&self, tape: &mut Tape, tokens: &[&[u32]]) -> Result<Stages> {
        let word = self.embed(tape, tokens)?;
        let encoding = self.encode(tape, &word)?;
        let sentence = self.pool(tape, &encoding)?;
        let logits = self.classify(tape, &sentence)?;
        Ok(Stages {
            word,
            encoding,
            sentence,
            logits,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Stages {
    pub word: StageBatch,
    pub encoding: StageBatch,
    pub sentence: StageBatch,
    pub logits: Var,
}

impl Stages {
    pub fn at(&self, stage: Stage) -> &StageBatch {
        match stage {
            Stage::Word => &self.word,
            Stage::Encoding => &self.encoding,
            Stage::Sentence => &self.sentence,
        }
    }
}
