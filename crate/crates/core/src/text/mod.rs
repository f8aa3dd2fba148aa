//! Corpus ingestion, tokenization, splitting, label ablation, and synthetic
//! two-domain data.

mod dataset;
mod io;
mod synth;
mod vocab;

pub use dataset::{ablate_labels, split_dataset, Domain, LabelMatrix, PUDataset, Sample, SplitPair};
pub use io::{load_corpus, load_dataset, write_dataset, Corpus, Format, Record};
pub use synth::{synth_dataset, synth_vocab, SynthConfig, MIN_POSITIVES};
pub use vocab::{split_words, Vocab, PAD, PAD_TOKEN, UNK, UNK_TOKEN};
