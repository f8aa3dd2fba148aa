use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Dense boolean `rows × cols` matrix; `true` marks a positive entry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMatrix {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl LabelMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![false; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<bool>>, cols: usize) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * cols);
        for (i, r) in rows.into_iter().enumerate() {
            if r.len() != cols {
                return Err(invalid(format!(
                    "label row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend(r);
        }
        Ok(Self {
            rows: n,
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, l: usize) -> bool {
        self.data[i * self.cols + l]
    }

    pub fn set(&mut self, i: usize, l: usize, v: bool) {
        self.data[i * self.cols + l] = v;
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Row indices positive in column `l`.
    pub fn column_positives(&self, l: usize) -> Vec<usize> {
        (0..self.rows).filter(|&i| self.get(i, l)).collect()
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    pub text: String,
    /// Exactly `max_len` ids.
    pub tokens: Vec<u32>,
}

/// Samples with an observed PU label matrix and, when known, the full labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PUDataset {
    pub samples: Vec<Sample>,
    pub label_names: Vec<String>,
    /// `true` = Positive, `false` = Unlabeled.
    pub observed: LabelMatrix,
    /// Ground truth; used for ablation and evaluation only.
    pub full: Option<LabelMatrix>,
    pub domain: Domain,
}

impl PUDataset {
    pub fn new(
        samples: Vec<Sample>,
        label_names: Vec<String>,
        observed: LabelMatrix,
        full: Option<LabelMatrix>,
        domain: Domain,
    ) -> Result<Self> {
        let ds = Self {
            samples,
            label_names,
            observed,
            full,
            domain,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, l) = (self.samples.len(), self.label_names.len());
        if self.observed.rows() != n || self.observed.cols() != l {
            return Err(Error::Data(format!(
                "observed labels are {}x{}, dataset is {n}x{l}",
                self.observed.rows(),
                self.observed.cols()
            )));
        }
        if let Some(full) = &self.full {
            if full.rows() != n || full.cols() != l {
                return Err(Error::Data("full label matrix shape mismatch".into()));
            }
            for i in 0..n {
                for j in 0..l {
                    if self.observed.get(i, j) && !full.get(i, j) {
                        return Err(Error::Data(format!(
                            "sample {i} observed positive for label {j} but full label is 0"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_labels(&self) -> usize {
        self.label_names.len()
    }

    pub fn max_len(&self) -> usize {
        self.samples.first().map_or(0, |s| s.tokens.len())
    }

    /// Observed positives of label `l`.
    pub fn positives(&self, l: usize) -> Vec<usize> {
        self.observed.column_positives(l)
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            label_names: self.label_names.clone(),
            observed: self.observed.select_rows(idx),
            full: self.full.as_ref().map(|f| f.select_rows(idx)),
            domain: self.domain,
        }
    }

    /// Ground truth if present, else the observed matrix.
    pub fn truth(&self) -> &LabelMatrix {
        self.full.as_ref().unwrap_or(&self.observed)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitPair {
    pub train: PUDataset,
    pub test: PUDataset,
}

/// Seeded shuffle followed by a prefix split.
pub fn split_dataset(ds: &PUDataset, train_frac: f64, seed: u64) -> Result<SplitPair> {
    let n = ds.len();
    if n < 5 {
        return Err(invalid(format!("need at least 5 samples to split, got {n}")));
    }
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(invalid(format!("train fraction {train_frac} outside (0, 1)")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((n as f64 * train_frac).round() as usize).clamp(1, n - 1);
    Ok(SplitPair {
        train: ds.subset(&idx[..cut]),
        test: ds.subset(&idx[cut..]),
    })
}

/// Simulates label scarcity: every ground-truth positive independently stays
/// observed with probability `keep_ratio`. A label left without any observed
/// positive gets one of its true positives back, chosen at random.
pub fn ablate_labels(ds: &PUDataset, keep_ratio: f64, seed: u64) -> Result<PUDataset> {
    if !(keep_ratio > 0.0 && keep_ratio <= 1.0) {
        return Err(invalid(format!("keep ratio {keep_ratio} outside (0, 1]")));
    }
    let full = ds
        .full
        .as_ref()
        .ok_or_else(|| invalid("label ablation needs full labels"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut observed = LabelMatrix::zeros(full.rows(), full.cols());
    for i in 0..full.rows() {
        for l in 0..full.cols() {
            if full.get(i, l) && rng.random::<f64>() < keep_ratio {
                observed.set(i, l, true);
            }
        }
    }
    for l in 0..full.cols() {
        if observed.column_positives(l).is_empty() {
            let pool = full.column_positives(l);
            let &pick = pool.choose(&mut rng).ok_or_else(|| {
                Error::Data(format!(
                    "label `{}` has no positives to keep",
                    ds.label_names[l]
                ))
            })?;
            observed.set(pick, l, true);
        }
    }
    PUDataset::new(
        ds.samples.clone(),
        ds.label_names.clone(),
        observed,
        Some(full.clone()),
        ds.domain,
    )
}
