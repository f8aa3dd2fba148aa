//! Prepared data directories: `train.jsonl`, `test.jsonl`, optional
//! `source.jsonl`, `vocab.json` and `meta.json`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use puda_core::text::{load_dataset, Domain, Format, PUDataset, SplitPair, Vocab};
use serde::{Deserialize, Serialize};

pub const TRAIN: &str = "train.jsonl";
pub const TEST: &str = "test.jsonl";
pub const SOURCE: &str = "source.jsonl";
pub const VOCAB: &str = "vocab.json";
pub const META: &str = "meta.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub max_len: usize,
    pub label_names: Vec<String>,
    pub keep_ratio: f64,
    pub train_frac: f64,
    pub seed: u64,
    pub synthetic: bool,
}

#[derive(Debug)]
pub struct Prepared {
    pub dir: PathBuf,
    pub meta: Meta,
    pub vocab: Vocab,
    pub target: SplitPair,
    pub source: Option<PUDataset>,
}

impl Prepared {
    pub fn load(dir: &Path) -> Result<Self> {
        let meta: Meta = read_json(&dir.join(META))?;
        let vocab: Vocab = read_json(&dir.join(VOCAB))?;
        let load = |name: &str, domain| {
            load_dataset(&dir.join(name), Format::Jsonl, &vocab, meta.max_len, domain)
                .with_context(|| format!("loading {}", dir.join(name).display()))
        };
        let train = load(TRAIN, Domain::Target)?;
        let test = load(TEST, Domain::Target)?;
        let source = if dir.join(SOURCE).exists() {
            Some(load(SOURCE, Domain::Source)?)
        } else {
            None
        };
        for ds in [Some(&train), Some(&test), source.as_ref()].into_iter().flatten() {
            if ds.label_names != meta.label_names {
                bail!(puda_core::Error::Data(format!(
                    "label names {:?} do not match {:?} in {META}",
                    ds.label_names, meta.label_names
                )));
            }
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            meta,
            vocab,
            target: SplitPair { train, test },
            source,
        })
    }

    /// Every file the directory contributes, for hashing.
    pub fn files(&self) -> Vec<PathBuf> {
        [META, VOCAB, TRAIN, TEST, SOURCE]
            .iter()
            .map(|f| self.dir.join(f))
            .filter(|p| p.exists())
            .collect()
    }

    pub fn num_labels(&self) -> usize {
        self.meta.label_names.len()
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
