use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use puda_core::batching::{SamplerConfig, SamplerKind};
use puda_core::checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint};
use puda_core::eval::evaluate;
use puda_core::model::{ModelConfig, ModelParams, Stage};
use puda_core::objective::{MixupConfig, Variant};
use puda_core::text::{
    ablate_labels, load_corpus, split_dataset, synth_dataset, synth_vocab, write_dataset, Domain, Format, SplitPair,
    SynthConfig, Vocab,
};
use puda_core::trainer::{train, MetricsLog, Objective, Phase, TrainConfig};
use puda_core::Error;
use serde_json::json;

use crate::data::{self, Meta, Prepared};
use crate::manifest::{self, Recorder};
use crate::settings::Settings;
use crate::UsageError;

const PU_KEYS: &[&str] = &["variant", "stage", "lambda", "alpha", "beta"];

pub fn dispatch(s: &Settings) -> Result<()> {
    match s.command() {
        "prepare" => prepare(s),
        "train" => train_cmd(s),
        "eval" => eval_cmd(s),
        "ablate" => ablate(s),
        "compare" => compare(s),
        other => bail!(UsageError(format!("cannot run `{other}`"))),
    }
}

/// Re-runs the command recorded in a manifest, optionally elsewhere.
pub fn replay(manifest_path: &Path, out: Option<&Path>) -> Result<()> {
    let m = manifest::load(manifest_path)?;
    let mut s = Settings::from_snapshot(&m.command, &m.config)?;
    if let Some(out) = out {
        s.set("out", out.to_string_lossy());
    }
    log::info!("replaying `{}` from {}", m.command, manifest_path.display());
    dispatch(&s)
}

fn out_dir(s: &Settings) -> Result<PathBuf> {
    let root = std::env::var_os("PUDA_OUT").map_or_else(|| PathBuf::from("runs"), PathBuf::from);
    let default = root.join(s.command());
    Ok(s.path_opt("out")?.unwrap_or(default))
}

fn write_log(rec: &mut Recorder, stem: &str, log: &MetricsLog) -> Result<()> {
    let mut csv = Vec::new();
    log.write_csv(&mut csv)?;
    rec.write(&format!("{stem}.csv"), csv)?;
    rec.write(&format!("{stem}.json"), log.to_json()?)?;
    Ok(())
}

fn prepare(s: &Settings) -> Result<()> {
    let seed: u64 = s.require("seed")?;
    let input = s.path_opt("input")?;
    let source_input = s.path_opt("source-input")?;
    let synthetic = s.flag("synthetic")?;
    let keep: f64 = s.get_or("keep-ratio", 0.5)?;
    let train_frac: f64 = s.get_or("train-frac", 0.8)?;
    let max_len: usize = s.get_or("max-len", 16)?;
    let synth_keys = ["n", "labels", "vocab-size", "shared-keywords"];

    let (target, source, vocab, mut rec) = match (&input, synthetic) {
        (Some(_), true) => bail!(UsageError("--input and --synthetic are mutually exclusive".into())),
        (None, false) => bail!(UsageError("`prepare` needs --input or --synthetic".into())),
        (None, true) => {
            s.forbid(&["min-freq"], "only applies to corpus input")?;
            let mut sc = SynthConfig::new(
                s.get_or("n", 500)?,
                s.get_or("labels", 5)?,
                s.get_or("vocab-size", 200)?,
                max_len,
            );
            sc.shared_keywords = s.get_or("shared-keywords", 0)?;
            let target = synth_dataset(&sc, Domain::Target, seed)?;
            let source = synth_dataset(&sc, Domain::Source, seed)?;
            (target, Some(source), synth_vocab(sc.vocab_size)?, Recorder::new(out_dir(s)?)?)
        }
        (Some(path), false) => {
            s.forbid(&synth_keys, "only applies to --synthetic")?;
            let min_freq: usize = s.get_or("min-freq", 1)?;
            let corpus = load_corpus(path, Format::from_path(path)?)?;
            let source_corpus = match &source_input {
                Some(p) => Some(load_corpus(p, Format::from_path(p)?)?),
                None => None,
            };
            if let Some(sc) = &source_corpus {
                if sc.label_names != corpus.label_names {
                    bail!(Error::Data(format!(
                        "source labels {:?} differ from target labels {:?}",
                        sc.label_names, corpus.label_names
                    )));
                }
            }
            let mut texts = corpus.texts();
            if let Some(sc) = &source_corpus {
                texts.extend(sc.texts());
            }
            let vocab = Vocab::build(&texts, min_freq)?;
            let mut rec = Recorder::new(out_dir(s)?)?;
            rec.input(path)?;
            if let Some(p) = &source_input {
                rec.input(p)?;
            }
            let target = corpus.into_dataset(&vocab, max_len, Domain::Target)?;
            let source = source_corpus
                .map(|c| c.into_dataset(&vocab, max_len, Domain::Source))
                .transpose()?;
            (target, source, vocab, rec)
        }
    };

    let split = split_dataset(&target, train_frac, seed)?;
    let train_ds = ablate_labels(&split.train, keep, seed)?;
    let meta = Meta {
        max_len,
        label_names: target.label_names.clone(),
        keep_ratio: keep,
        train_frac,
        seed,
        synthetic,
    };
    write_dataset(&train_ds, &rec.path(data::TRAIN))?;
    rec.wrote(data::TRAIN);
    write_dataset(&split.test, &rec.path(data::TEST))?;
    rec.wrote(data::TEST);
    if let Some(src) = &source {
        write_dataset(src, &rec.path(data::SOURCE))?;
        rec.wrote(data::SOURCE);
    }
    rec.write(data::VOCAB, serde_json::to_string(&vocab)?)?;
    rec.write(data::META, serde_json::to_string_pretty(&meta)?)?;
    eprintln!(
        "prepared {} train / {} test samples, {} labels, {} observed of {} positives -> {}",
        train_ds.len(),
        split.test.len(),
        meta.label_names.len(),
        train_ds.observed.count(),
        train_ds.truth().count(),
        rec.out.display()
    );
    rec.finish(s.command(), Some(seed), s.snapshot())?;
    Ok(())
}

/// Settings shared by every command that trains.
#[derive(Clone, Debug)]
struct Training {
    seed: u64,
    dim: usize,
    epochs: usize,
    lr: f64,
    sampler: SamplerConfig,
    source_epochs: usize,
    source_lr: f64,
    no_source: bool,
    eval_every: usize,
    deterministic: bool,
    mixup: MixupConfig,
}

impl Training {
    fn read(s: &Settings, default_sampler: SamplerKind) -> Result<Self> {
        let epochs = s.get_or("epochs", 12)?;
        let lr = s.get_or("lr", 5e-5)?;
        let mut sampler = SamplerConfig::new(s.get_or("sampler", default_sampler)?, s.get_or("batch-size", 64)?);
        sampler.inner_size = s.get_or("inner-size", 4)?;
        Ok(Self {
            seed: s.require("seed")?,
            dim: s.get_or("dim", 64)?,
            epochs,
            lr,
            sampler,
            source_epochs: s.get_or("source-epochs", epochs)?,
            source_lr: s.get_or("source-lr", lr)?,
            no_source: s.flag("no-source")?,
            eval_every: s.get_or("eval-every", 1)?,
            deterministic: s.flag("deterministic")?,
            mixup: MixupConfig::default(),
        })
    }

    /// Reads the MixUp knobs. `stage` and `variant` keep their defaults unless
    /// the matching flag is allowed.
    fn read_mixup(&mut self, s: &Settings, with_stage: bool, with_variant: bool) -> Result<()> {
        let d = MixupConfig::default();
        self.mixup = MixupConfig {
            alpha: s.get_or("alpha", d.alpha)?,
            beta: s.get_or("beta", d.beta)?,
            lambda: s.get_or("lambda", d.lambda)?,
            stage: if with_stage { s.get_or("stage", d.stage)? } else { d.stage },
            variant: if with_variant { s.get_or("variant", d.variant)? } else { d.variant },
        };
        self.mixup.validate()?;
        Ok(())
    }

    fn config(&self, phase: Phase, objective: Objective, seed: u64) -> TrainConfig {
        let mut c = TrainConfig::new(phase, objective, seed);
        match phase {
            Phase::SourceSupervised => {
                c.epochs = self.source_epochs;
                c.lr = self.source_lr;
            }
            Phase::TargetPu => {
                c.epochs = self.epochs;
                c.lr = self.lr;
            }
        }
        c.sampler = self.sampler;
        c.eval_every = self.eval_every;
        c.record_time = !self.deterministic;
        c
    }

    fn target_seed(&self, seed: u64) -> u64 {
        seed.wrapping_add(2)
    }

    /// Fresh weights, then supervised training on the source corpus when
    /// there is one. The phase is evaluated on the target test split.
    fn source_model(&self, data: &Prepared, seed: u64) -> Result<(ModelParams, Option<MetricsLog>)> {
        let cfg = model_config(data, self.dim);
        let init = ModelParams::init(cfg, seed)?;
        match (&data.source, self.no_source) {
            (Some(src), false) => {
                let split = SplitPair {
                    train: src.clone(),
                    test: data.target.test.clone(),
                };
                let mut tc = self.config(Phase::SourceSupervised, Objective::Bce, seed.wrapping_add(1));
                // the source corpus is fully labelled, so any sampler sees every label
                if tc.sampler.kind == SamplerKind::Nested {
                    tc.sampler.kind = SamplerKind::Unweighted;
                }
                let (params, log) = train(&split, &tc, &init)?;
                Ok((params, Some(log)))
            }
            _ => Ok((init, None)),
        }
    }
}

fn model_config(data: &Prepared, dim: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: data.vocab.len(),
        dim,
        labels: data.num_labels(),
        max_len: data.meta.max_len,
    }
}

fn load_data(s: &Settings, rec: &mut Recorder) -> Result<Prepared> {
    let dir = s.path("data")?;
    let data = Prepared::load(&dir)?;
    for f in data.files() {
        rec.input(&f)?;
    }
    Ok(data)
}

/// Runs `train`, saving the offending batch next to the other outputs when
/// the run diverges.
fn train_or_dump(rec: &mut Recorder, split: &SplitPair, cfg: &TrainConfig, init: &ModelParams) -> Result<(ModelParams, MetricsLog)> {
    let res = train(split, cfg, init);
    if let Err(Error::Diverged { epoch, step, what, batch }) = &res {
        let dump = json!({ "phase": cfg.phase, "epoch": epoch, "step": step, "what": what, "batch": batch });
        let p = rec.write("nan_batch.json", serde_json::to_string_pretty(&dump)?)?;
        eprintln!("diverged; batch written to {}", p.display());
    }
    Ok(res?)
}

fn train_cmd(s: &Settings) -> Result<()> {
    let method: String = s.get_or("method", "pu".to_string())?;
    let objective_pu = match method.as_str() {
        "pu" => true,
        "bce" | "none" => {
            s.forbid(PU_KEYS, &format!("only applies to --method pu, not {method}"))?;
            false
        }
        other => bail!(UsageError(format!("unknown method `{other}`; expected pu, bce or none"))),
    };
    let mut t = Training::read(s, SamplerKind::Cycle)?;
    if objective_pu {
        t.read_mixup(s, true, true)?;
    }
    let init_path = s.path_opt("init")?;
    let mut rec = Recorder::new(out_dir(s)?)?;
    let data = load_data(s, &mut rec)?;

    let start = match &init_path {
        Some(p) => {
            rec.input(p)?;
            s.forbid(&["no-source", "source-epochs", "source-lr"], "cannot be combined with --init")?;
            load_checkpoint_expecting(p, &model_config(&data, t.dim))?
        }
        None => {
            let (params, log) = t.source_model(&data, t.seed)?;
            if let Some(log) = log {
                write_log(&mut rec, "source_metrics", &log)?;
            }
            params
        }
    };

    let (params, log) = match method.as_str() {
        "none" => (start.clone(), MetricsLog::eval_only(&start, &data.target.test)?),
        m => {
            let objective = if m == "bce" { Objective::Bce } else { Objective::Pu(t.mixup) };
            let cfg = t.config(Phase::TargetPu, objective, t.target_seed(t.seed));
            train_or_dump(&mut rec, &data.target, &cfg, &start)?
        }
    };
    write_log(&mut rec, "metrics", &log)?;
    save_checkpoint(&params, &rec.path("model.json"))?;
    rec.wrote("model.json");
    let report = evaluate(&params, &data.target.test)?;
    rec.write("report.json", report.to_json()?)?;
    print!("{}", report.table());
    rec.finish(s.command(), Some(t.seed), s.snapshot())?;
    Ok(())
}

fn eval_cmd(s: &Settings) -> Result<()> {
    let ckpt = s.path("checkpoint")?;
    let split: String = s.get_or("split", "test".to_string())?;
    let mut rec = Recorder::new(out_dir(s)?)?;
    let data = load_data(s, &mut rec)?;
    rec.input(&ckpt)?;
    let params = load_checkpoint(&ckpt)?;
    let expected = model_config(&data, params.config().dim);
    if params.config() != &expected {
        bail!(Error::Checkpoint(format!(
            "{}: model {:?} does not fit data {:?}",
            ckpt.display(),
            params.config(),
            expected
        )));
    }
    let ds = match split.as_str() {
        "test" => &data.target.test,
        "train" => &data.target.train,
        other => bail!(UsageError(format!("unknown split `{other}`; expected test or train"))),
    };
    let report = evaluate(&params, ds)?;
    rec.write("report.json", report.to_json()?)?;
    let table = report.table();
    rec.write("report.txt", &table)?;
    print!("{table}");
    rec.finish(s.command(), None, s.snapshot())?;
    Ok(())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One source model per seed, trained up front and shared by every cell.
fn source_models(t: &Training, data: &Prepared, seeds: &[u64], rec: &mut Recorder) -> Result<Vec<ModelParams>> {
    let mut out = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let (params, log) = t.source_model(data, seed)?;
        if let Some(log) = log {
            write_log(rec, &format!("source_metrics_seed{seed}"), &log)?;
        }
        out.push(params);
    }
    Ok(out)
}

fn seeds(s: &Settings, base: u64) -> Result<Vec<u64>> {
    let k: usize = s.get_or("seeds", 1)?;
    if k == 0 {
        bail!(UsageError("--seeds must be at least 1".into()));
    }
    Ok((0..k as u64).map(|i| base.wrapping_add(i * 1000)).collect())
}

struct Cell {
    grid: &'static str,
    setting: String,
    mixup: MixupConfig,
}

fn ablate(s: &Settings) -> Result<()> {
    let grid: String = s.get_or("grid", "all".to_string())?;
    let (stage_grid, variant_grid) = match grid.as_str() {
        "stage" => (true, false),
        "variant" => (false, true),
        "all" => (true, true),
        other => bail!(UsageError(format!("unknown grid `{other}`; expected stage, variant or all"))),
    };
    s.forbid(&["sampler"], "is fixed to cycle by `ablate`")?;
    if !variant_grid {
        s.forbid(&["stage"], "is the swept axis of the stage grid")?;
    }
    if !stage_grid {
        s.forbid(&["variant"], "is the swept axis of the variant grid")?;
    }
    let mut t = Training::read(s, SamplerKind::Cycle)?;
    t.read_mixup(s, variant_grid, stage_grid)?;
    let seeds = seeds(s, t.seed)?;
    let mut rec = Recorder::new(out_dir(s)?)?;
    let data = load_data(s, &mut rec)?;

    let mut cells = Vec::new();
    if stage_grid {
        for stage in [Stage::Word, Stage::Encoding, Stage::Sentence] {
            let mixup = MixupConfig { stage, ..t.mixup };
            cells.push(Cell { grid: "stage", setting: stage.to_string(), mixup });
        }
    }
    if variant_grid {
        for variant in [Variant::Norm, Variant::Log] {
            let mixup = MixupConfig { variant, ..t.mixup };
            cells.push(Cell { grid: "variant", setting: variant.to_string(), mixup });
        }
    }
    // the stage grid's word row and the variant grid's norm row can coincide
    let mut unique: Vec<MixupConfig> = Vec::new();
    for c in &cells {
        if !unique.contains(&c.mixup) {
            unique.push(c.mixup);
        }
    }

    let sources = source_models(&t, &data, &seeds, &mut rec)?;
    let jobs: Vec<(usize, usize)> = (0..unique.len())
        .flat_map(|u| (0..seeds.len()).map(move |k| (u, k)))
        .collect();
    let results = puda_core::par::map_range(jobs.len(), |j| {
        let (u, k) = jobs[j];
        let cfg = t.config(Phase::TargetPu, Objective::Pu(unique[u]), t.target_seed(seeds[k]));
        train(&data.target, &cfg, &sources[k]).map(|(_, log)| log)
    });
    let mut logs = Vec::with_capacity(results.len());
    for (r, &(u, k)) in results.into_iter().zip(&jobs) {
        logs.push(r.with_context(|| format!("{:?} seed {}", unique[u], seeds[k]))?);
    }
    let log_of = |m: &MixupConfig, k: usize| {
        let u = unique.iter().position(|x| x == m).unwrap();
        &logs[u * seeds.len() + k]
    };

    let mut table = String::from("grid,setting,seeds,mean_map,std_map,relative_change_pct\n");
    let mut curves = String::from("grid,setting,seed,epoch,map\n");
    let mut reference = None;
    for c in &cells {
        let maps: Vec<f64> = (0..seeds.len())
            .map(|k| log_of(&c.mixup, k).final_map().context("run has no evaluation"))
            .collect::<Result<_>>()?;
        let (mean, std) = mean_std(&maps);
        let is_ref = match c.grid {
            "stage" => c.mixup.stage == Stage::Word,
            _ => c.mixup.variant == Variant::Norm,
        };
        if is_ref {
            reference = Some(mean);
        }
        let rel = match reference {
            Some(_) if is_ref => 0.0,
            Some(r) if r != 0.0 => (mean - r) / r * 100.0,
            _ => f64::NAN,
        };
        writeln!(table, "{},{},{},{},{},{}", c.grid, c.setting, seeds.len(), mean, std, rel)?;
        for (k, &seed) in seeds.iter().enumerate() {
            for r in &log_of(&c.mixup, k).records {
                if let Some(m) = r.map {
                    writeln!(curves, "{},{},{},{},{}", c.grid, c.setting, seed, r.epoch, m)?;
                }
            }
        }
    }
    rec.write("ablation.csv", &table)?;
    rec.write("curves.csv", &curves)?;
    print!("{table}");
    rec.finish(s.command(), Some(t.seed), s.snapshot())?;
    Ok(())
}

fn compare(s: &Settings) -> Result<()> {
    s.forbid(&["sampler"], "is the swept axis of `compare`")?;
    let mut t = Training::read(s, SamplerKind::Cycle)?;
    t.read_mixup(s, true, true)?;
    let seeds = seeds(s, t.seed)?;
    let mut rec = Recorder::new(out_dir(s)?)?;
    let data = load_data(s, &mut rec)?;
    // shared source models always use the cycle sampler
    let sources = source_models(&t, &data, &seeds, &mut rec)?;

    let mut table = String::from("sampler,seconds,map\n");
    let mut curves = String::from("sampler,seed,epoch,map,seconds\n");
    // timings are only comparable when the runs do not share the cores
    for kind in [SamplerKind::Cycle, SamplerKind::Unweighted, SamplerKind::Nested] {
        let mut secs = Vec::new();
        let mut maps = Vec::new();
        for (k, &seed) in seeds.iter().enumerate() {
            let mut cfg = t.config(Phase::TargetPu, Objective::Pu(t.mixup), t.target_seed(seed));
            cfg.sampler.kind = kind;
            let (_, log) = train_or_dump(&mut rec, &data.target, &cfg, &sources[k])
                .with_context(|| format!("{kind} sampler, seed {seed}"))?;
            secs.push(log.total_seconds());
            maps.push(log.final_map().context("run has no evaluation")?);
            for r in &log.records {
                let map = r.map.map_or_else(String::new, |m| m.to_string());
                writeln!(curves, "{kind},{seed},{},{map},{}", r.epoch, r.seconds)?;
            }
        }
        writeln!(table, "{kind},{},{}", mean_std(&secs).0, mean_std(&maps).0)?;
    }
    rec.write("samplers.csv", &table)?;
    rec.write("curves.csv", &curves)?;
    print!("{table}");
    rec.finish(s.command(), Some(t.seed), s.snapshot())?;
    Ok(())
}
