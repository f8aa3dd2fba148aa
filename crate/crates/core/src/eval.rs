//! Average precision and mean average precision.

use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{shape_err, Error, Result};
use crate::model::ModelParams;
use crate::par;
use crate::text::{LabelMatrix, PUDataset};

/// Un-interpolated AP: the mean, over positives in rank order, of the
/// precision at each positive's rank. Ranking is by score descending with
/// ties broken by ascending id. `None` when there are no positives.
pub fn average_precision_with_ids(scores: &[f64], truths: &[bool], ids: &[u64]) -> Option<f64> {
    assert_eq!(scores.len(), truths.len());
    assert_eq!(scores.len(), ids.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(ids[a].cmp(&ids[b])));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if truths[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// [`average_precision_with_ids`] using positions as ids.
pub fn average_precision(scores: &[f64], truths: &[bool]) -> Option<f64> {
    let ids: Vec<u64> = (0..scores.len() as u64).collect();
    average_precision_with_ids(scores, truths, &ids)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label_names: Vec<String>,
    /// `None` for labels without positives.
    pub per_label: Vec<Option<f64>>,
    pub map: f64,
    pub undefined: Vec<usize>,
    pub samples: usize,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Fixed-width text table, one row per label, followed by the mAP.
    pub fn table(&self) -> String {
        let width = self
            .label_names
            .iter()
            .map(String::len)
            .chain(std::iter::once(5))
            .max()
            .unwrap_or(5);
        let mut out = format!("{:<width$}  {:>9}\n", "label", "AP");
        for (name, ap) in self.label_names.iter().zip(&self.per_label) {
            let cell = ap.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"));
            out.push_str(&format!("{name:<width$}  {cell:>9}\n"));
        }
        out.push_str(&format!("{:<width$}  {:>9.4}\n", "mAP", self.map));
        out
    }
}

/// Per-label AP over score columns; mAP is the mean over labels that have at
/// least one positive. Labels are scored in parallel.
pub fn mean_average_precision(
    scores: &Tensor,
    truth: &LabelMatrix,
    ids: &[u64],
    label_names: &[String],
) -> Result<EvalReport> {
    let (n, l) = (truth.rows(), truth.cols());
    if scores.shape() != [n, l] || ids.len() != n || label_names.len() != l {
        return Err(shape_err(
            "mean_average_precision",
            format!(
                "scores {:?}, truth {n}x{l}, {} ids, {} names",
                scores.shape(),
                ids.len(),
                label_names.len()
            ),
        ));
    }
    let per_label = par::map_range(l, |j| {
        let col: Vec<f64> = (0..n).map(|i| scores.data()[i * l + j]).collect();
        let t: Vec<bool> = (0..n).map(|i| truth.get(i, j)).collect();
        average_precision_with_ids(&col, &t, ids)
    });
    let undefined: Vec<usize> = (0..l).filter(|&j| per_label[j].is_none()).collect();
    let defined: Vec<f64> = per_label.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::Data("no label has a positive sample; mAP is undefined".into()));
    }
    let map = defined.iter().sum::<f64>() / defined.len() as f64;
    Ok(EvalReport {
        label_names: label_names.to_vec(),
        per_label,
        map,
        undefined,
        samples: n,
    })
}

/// Scores every sample of `ds` and compares against its ground truth.
pub fn evaluate(params: &ModelParams, ds: &PUDataset) -> Result<EvalReport> {
    let inputs: Vec<&[u32]> = ds.samples.iter().map(|s| s.tokens.as_slice()).collect();
    let scores = params.predict_proba(&inputs, 64)?;
    let ids: Vec<u64> = ds.samples.iter().map(|s| s.id).collect();
    mean_average_precision(&scores, ds.truth(), &ids, &ds.label_names)
}
