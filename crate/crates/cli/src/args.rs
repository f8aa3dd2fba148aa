use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// PU domain adaptation for multi-label text classifiers.
///
/// Every option can also be given in a flat JSON file passed with
/// `--config`, keyed by the long flag name (e.g. `"batch-size": 32`).
/// Flags on the command line win over the file, which wins over built-in
/// defaults. Outputs default to `$PUDA_OUT/<command>` (or `runs/<command>`).
#[derive(Parser, Debug)]
#[command(name = "puda", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build train/test (and source) JSONL files with ablated labels.
    Prepare(PrepareArgs),
    /// Source fine-tuning followed by target adaptation.
    Train(TrainArgs),
    /// Score a checkpoint on prepared data.
    Eval(EvalArgs),
    /// Interpolation-stage or loss-variant ablation over seeds.
    Ablate(AblateArgs),
    /// Time and score the cycle, unweighted and nested samplers.
    Compare(CompareArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
pub struct Common {
    /// Flat JSON config file keyed by flag names.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    /// Hidden size of the encoder [default: 64].
    #[arg(long)]
    pub dim: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainingArgs {
    /// Target-phase epochs [default: 12].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Target-phase learning rate [default: 5e-5].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Batch size; the outer batch for the nested sampler [default: 64].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// cycle | unweighted | nested [default: cycle].
    #[arg(long)]
    pub sampler: Option<String>,
    /// Positives per label per outer batch, nested sampler only [default: 4].
    #[arg(long)]
    pub inner_size: Option<usize>,
    /// MixUp weight [default: 1].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Beta shape alpha for the MixUp weight [default: 0.3].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Beta shape beta for the MixUp weight [default: 0.3].
    #[arg(long)]
    pub beta: Option<f64>,
    /// Source-phase epochs [default: --epochs].
    #[arg(long)]
    pub source_epochs: Option<usize>,
    /// Source-phase learning rate [default: --lr].
    #[arg(long)]
    pub source_lr: Option<f64>,
    /// Skip the source phase even when source data exists.
    #[arg(long)]
    pub no_source: bool,
    /// Evaluate every N epochs [default: 1].
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Write 0 to every seconds column so repeated runs are byte-identical.
    #[arg(long)]
    pub deterministic: bool,
    /// Random seed (required).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    #[command(flatten)]
    pub common: Common,
    /// Labelled target corpus (.jsonl or .csv).
    #[arg(long, value_name = "FILE", conflicts_with = "synthetic")]
    pub input: Option<PathBuf>,
    /// Labelled source-domain corpus (.jsonl or .csv).
    #[arg(long, value_name = "FILE", conflicts_with = "synthetic")]
    pub source_input: Option<PathBuf>,
    /// Generate a synthetic two-domain keyword corpus instead of reading one.
    #[arg(long)]
    pub synthetic: bool,
    /// Fraction of training positives kept as observed [default: 0.5].
    #[arg(long)]
    pub keep_ratio: Option<f64>,
    /// Fraction of samples in the training split [default: 0.8].
    #[arg(long)]
    pub train_frac: Option<f64>,
    /// Padded sequence length [default: 16].
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Minimum word count for the vocabulary, corpus input only [default: 1].
    #[arg(long)]
    pub min_freq: Option<usize>,
    /// Synthetic: samples per domain [default: 500].
    #[arg(long)]
    pub n: Option<usize>,
    /// Synthetic: number of labels [default: 5].
    #[arg(long)]
    pub labels: Option<usize>,
    /// Synthetic: vocabulary size [default: 200].
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Synthetic: keywords per label shared by both domains [default: 0].
    #[arg(long)]
    pub shared_keywords: Option<usize>,
    /// Random seed (required).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Prepared data directory.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// pu | bce | none [default: pu].
    #[arg(long)]
    pub method: Option<String>,
    /// norm | log [default: norm].
    #[arg(long)]
    pub variant: Option<String>,
    /// word | encoding | sentence [default: word].
    #[arg(long)]
    pub stage: Option<String>,
    /// Start from this checkpoint instead of source fine-tuning.
    #[arg(long, value_name = "FILE")]
    pub init: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint to score.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Prepared data directory.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// test | train [default: test].
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Prepared data directory.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// stage | variant.
    #[arg(long)]
    pub grid: Option<String>,
    /// Seeds per grid cell, starting at --seed [default: 1].
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Variant used by the stage grid [default: norm].
    #[arg(long)]
    pub variant: Option<String>,
    /// Stage used by the variant grid [default: word].
    #[arg(long)]
    pub stage: Option<String>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: Common,
    /// Prepared data directory.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Seeds per sampler, starting at --seed [default: 1].
    #[arg(long)]
    pub seeds: Option<usize>,
    /// norm | log [default: norm].
    #[arg(long)]
    pub variant: Option<String>,
    /// word | encoding | sentence [default: word].
    #[arg(long)]
    pub stage: Option<String>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// Output directory [default: the recorded one].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}
