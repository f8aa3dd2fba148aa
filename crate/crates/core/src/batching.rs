//! Batch construction: the label-balanced cycle sampler, a plain shuffled
//! sampler, and nested batching (a large outer batch plus small per-label
//! positive batches).

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::text::LabelMatrix;

/// Retries before a duplicate draw is accepted into a cycle batch.
pub const DUPLICATE_RETRIES: usize = 10;

/// Sample indices plus, per label, the batch slots that count as positive
/// and unlabeled. Slots index into `indices`, so repeated samples keep
/// distinct slots.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub positives: Vec<Vec<usize>>,
    pub unlabeled: Vec<Vec<usize>>,
}

impl Batch {
    /// Partitions every slot by its observed label.
    pub fn from_indices(indices: Vec<usize>, observed: &LabelMatrix) -> Self {
        let labels = observed.cols();
        let mut positives = vec![Vec::new(); labels];
        let mut unlabeled = vec![Vec::new(); labels];
        for (slot, &i) in indices.iter().enumerate() {
            for l in 0..labels {
                if observed.get(i, l) {
                    positives[l].push(slot);
                } else {
                    unlabeled[l].push(slot);
                }
            }
        }
        Self {
            indices,
            positives,
            unlabeled,
        }
    }

    /// Outer slots come first and supply U for every label (plus P where
    /// observed); label `l`'s inner slots are added to P only.
    pub fn nested(outer: Vec<usize>, inner: Vec<Vec<usize>>, observed: &LabelMatrix) -> Self {
        let mut batch = Self::from_indices(outer, observed);
        for (l, picks) in inner.into_iter().enumerate() {
            for i in picks {
                batch.positives[l].push(batch.indices.len());
                batch.indices.push(i);
            }
        }
        batch
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn num_labels(&self) -> usize {
        self.positives.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Cycle,
    Unweighted,
    Nested,
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cycle" => Ok(Self::Cycle),
            "unweighted" => Ok(Self::Unweighted),
            "nested" => Ok(Self::Nested),
            _ => Err(invalid(format!("unknown sampler `{s}`"))),
        }
    }
}

impl std::fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Cycle => "cycle",
            Self::Unweighted => "unweighted",
            Self::Nested => "nested",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub batch_size: usize,
    /// Positives per label per outer batch; nested only.
    pub inner_size: usize,
}

impl SamplerConfig {
    pub fn new(kind: SamplerKind, batch_size: usize) -> Self {
        Self {
            kind,
            batch_size,
            inner_size: 2,
        }
    }

    pub fn validate(&self, labels: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid("batch size must be at least 1"));
        }
        if self.kind == SamplerKind::Cycle && self.batch_size < labels {
            return Err(cycle_too_small(self.batch_size, labels));
        }
        if self.kind == SamplerKind::Nested && self.inner_size == 0 {
            return Err(invalid("nested inner size must be at least 1"));
        }
        Ok(())
    }

    /// Batches for one epoch.
    pub fn epoch<R: Rng>(&self, observed: &LabelMatrix, rng: &mut R) -> Result<Vec<Batch>> {
        self.validate(observed.cols())?;
        match self.kind {
            SamplerKind::Cycle => Ok(cycle_batches(observed, self.batch_size, rng)?.batches),
            SamplerKind::Unweighted => Ok(unweighted_batches(observed, self.batch_size, rng)),
            SamplerKind::Nested => nested_batches(observed, self.batch_size, self.inner_size, rng),
        }
    }
}

fn cycle_too_small(batch_size: usize, labels: usize) -> Error {
    invalid(format!(
        "cycle sampler needs one slot per label: batch size {batch_size} < {labels} labels; \
         raise the batch size to at least {labels}"
    ))
}

fn positive_pools(observed: &LabelMatrix) -> Result<Vec<Vec<usize>>> {
    (0..observed.cols())
        .map(|l| {
            let pool = observed.column_positives(l);
            if pool.is_empty() {
                Err(Error::Data(format!("label {l} has no observed positives")))
            } else {
                Ok(pool)
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct CycleEpoch {
    pub batches: Vec<Batch>,
    /// Every sample drawn from each label's pool, in draw order, including
    /// draws rejected as duplicates.
    pub draws: Vec<Vec<usize>>,
}

/// Label-balanced batches: slots are filled by visiting labels round-robin
/// and drawing one observed positive of the current label. Pools are drawn
/// without replacement and reshuffled once exhausted. The epoch has
/// `ceil(N / batch_size)` batches.
pub fn cycle_batches<R: Rng>(observed: &LabelMatrix, batch_size: usize, rng: &mut R) -> Result<CycleEpoch> {
    let labels = observed.cols();
    if batch_size < labels || batch_size == 0 {
        return Err(cycle_too_small(batch_size, labels));
    }
    let mut pools = positive_pools(observed)?;
    for p in &mut pools {
        p.shuffle(rng);
    }
    let mut cursors = vec![0usize; labels];
    let mut draws = vec![Vec::new(); labels];
    let mut next = |l: usize, rng: &mut R| {
        if cursors[l] == pools[l].len() {
            pools[l].shuffle(rng);
            cursors[l] = 0;
        }
        let i = pools[l][cursors[l]];
        cursors[l] += 1;
        draws[l].push(i);
        i
    };
    let n_batches = observed.rows().div_ceil(batch_size);
    let mut batches = Vec::with_capacity(n_batches);
    for _ in 0..n_batches {
        let mut indices: Vec<usize> = Vec::with_capacity(batch_size);
        for slot in 0..batch_size {
            let l = slot % labels;
            let mut pick = next(l, rng);
            let mut retries = 0;
            while indices.contains(&pick) && retries < DUPLICATE_RETRIES {
                pick = next(l, rng);
                retries += 1;
            }
            indices.push(pick);
        }
        batches.push(Batch::from_indices(indices, observed));
    }
    Ok(CycleEpoch { batches, draws })
}

/// Shuffle then cut into contiguous chunks; the last one may be short.
pub fn unweighted_batches<R: Rng>(observed: &LabelMatrix, batch_size: usize, rng: &mut R) -> Vec<Batch> {
    let mut order: Vec<usize> = (0..observed.rows()).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size.max(1))
        .map(|c| Batch::from_indices(c.to_vec(), observed))
        .collect()
}

/// Unweighted outer batches, each paired with `inner_size` positives per
/// label drawn with replacement.
pub fn nested_batches<R: Rng>(
    observed: &LabelMatrix,
    outer_size: usize,
    inner_size: usize,
    rng: &mut R,
) -> Result<Vec<Batch>> {
    if inner_size == 0 {
        return Err(invalid("nested inner size must be at least 1"));
    }
    let pools = positive_pools(observed)?;
    let outer = unweighted_batches(observed, outer_size, rng);
    Ok(outer
        .into_iter()
        .map(|b| {
            let inner = pools
                .iter()
                .map(|pool| (0..inner_size).map(|_| *pool.choose(rng).unwrap()).collect())
                .collect();
            Batch::nested(b.indices, inner, observed)
        })
        .collect())
}
