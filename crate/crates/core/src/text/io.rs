//! JSONL / CSV corpus readers and the prepared-dataset JSONL writer.
//!
//! JSONL records carry `text` and `labels`, where `labels` is either a 0/1
//! vector or a list of label names. An optional leading header object
//! `{"label_names": [...]}` fixes the label order; prepared files also carry
//! an `observed` 0/1 vector. CSV files use the header `text,label_0,...`.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::dataset::{Domain, LabelMatrix, PUDataset, Sample};
use super::vocab::Vocab;
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Csv,
}

impl Format {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => Ok(Self::Jsonl),
            Some("csv") => Ok(Self::Csv),
            _ => Err(invalid(format!(
                "cannot infer format of {}; expected .jsonl or .csv",
                path.display()
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub id: u64,
    pub text: String,
    pub labels: Vec<bool>,
    pub observed: Option<Vec<bool>>,
}

/// Untokenized records plus their label names.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub records: Vec<Record>,
    pub label_names: Vec<String>,
    pub domain: Option<Domain>,
}

impl Corpus {
    pub fn texts(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.text.as_str()).collect()
    }

    /// Tokenizes every record; `observed` defaults to the full labels.
    pub fn into_dataset(self, vocab: &Vocab, max_len: usize, domain: Domain) -> Result<PUDataset> {
        if max_len == 0 {
            return Err(invalid("max_len must be at least 1"));
        }
        let l = self.label_names.len();
        let mut full = Vec::with_capacity(self.records.len());
        let mut observed = Vec::with_capacity(self.records.len());
        let mut samples = Vec::with_capacity(self.records.len());
        for r in self.records {
            observed.push(r.observed.unwrap_or_else(|| r.labels.clone()));
            full.push(r.labels);
            samples.push(Sample {
                id: r.id,
                tokens: vocab.tokenize(&r.text, max_len),
                text: r.text,
            });
        }
        PUDataset::new(
            samples,
            self.label_names,
            LabelMatrix::from_rows(observed, l)?,
            Some(LabelMatrix::from_rows(full, l)?),
            domain,
        )
    }
}

pub fn load_corpus(path: &Path, format: Format) -> Result<Corpus> {
    match format {
        Format::Jsonl => load_jsonl(path),
        Format::Csv => load_csv(path),
    }
}

/// Reads and tokenizes a corpus in one step.
pub fn load_dataset(
    path: &Path,
    format: Format,
    vocab: &Vocab,
    max_len: usize,
    domain: Domain,
) -> Result<PUDataset> {
    load_corpus(path, format)?.into_dataset(vocab, max_len, domain)
}

fn record_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Record {
        path: PathBuf::from(path),
        line,
        msg: msg.into(),
    }
}

enum RawLabels {
    Binary(Vec<bool>),
    Names(Vec<String>),
}

fn parse_binary(v: &Value) -> Option<Vec<bool>> {
    v.as_array()?
        .iter()
        .map(|x| match x.as_u64() {
            Some(0) => Some(false),
            Some(1) => Some(true),
            _ => None,
        })
        .collect()
}

fn load_jsonl(path: &Path) -> Result<Corpus> {
    let reader = BufReader::new(File::open(path)?);
    let mut header_names: Option<Vec<String>> = None;
    let mut domain = None;
    // (line, id, text, labels, full labels)
    #[allow(clippy::type_complexity)]
    let mut raw: Vec<(usize, u64, String, RawLabels, Option<Vec<bool>>)> = Vec::new();

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line)
            .map_err(|e| record_err(path, lineno, format!("invalid JSON: {e}")))?;
        let obj = v
            .as_object()
            .ok_or_else(|| record_err(path, lineno, "expected a JSON object"))?;
        if let Some(names) = obj.get("label_names") {
            if raw.is_empty() && header_names.is_none() && !obj.contains_key("text") {
                let names: Vec<String> = serde_json::from_value(names.clone())
                    .map_err(|e| record_err(path, lineno, format!("bad header: {e}")))?;
                header_names = Some(names);
                domain = obj
                    .get("domain")
                    .and_then(|d| serde_json::from_value(d.clone()).ok());
                continue;
            }
        }
        let text = obj
            .get("text")
            .and_then(Value::as_str)
            .ok_or_else(|| record_err(path, lineno, "missing string field `text`"))?
            .to_string();
        let labels_v = obj
            .get("labels")
            .ok_or_else(|| record_err(path, lineno, "missing field `labels`"))?;
        let labels = if let Some(b) = parse_binary(labels_v) {
            RawLabels::Binary(b)
        } else if let Ok(names) = serde_json::from_value::<Vec<String>>(labels_v.clone()) {
            RawLabels::Names(names)
        } else {
            return Err(record_err(
                path,
                lineno,
                "`labels` must be a 0/1 array or an array of label names",
            ));
        };
        let observed = match obj.get("observed") {
            None => None,
            Some(o) => Some(
                parse_binary(o)
                    .ok_or_else(|| record_err(path, lineno, "`observed` must be a 0/1 array"))?,
            ),
        };
        let id = match obj.get("id") {
            None => raw.len() as u64,
            Some(v) => v
                .as_u64()
                .ok_or_else(|| record_err(path, lineno, "`id` must be a non-negative integer"))?,
        };
        raw.push((lineno, id, text, labels, observed));
    }

    let label_names = match header_names {
        Some(n) => n,
        None => {
            let named: BTreeSet<&String> = raw
                .iter()
                .filter_map(|r| match &r.3 {
                    RawLabels::Names(n) => Some(n.iter()),
                    RawLabels::Binary(_) => None,
                })
                .flatten()
                .collect();
            match raw.iter().find_map(|r| match &r.3 {
                RawLabels::Binary(b) => Some(b.len()),
                RawLabels::Names(_) => None,
            }) {
                Some(arity) if named.is_empty() => (0..arity).map(|l| format!("label_{l}")).collect(),
                Some(_) => {
                    return Err(invalid(format!(
                        "{}: mixes label vectors and label names without a header",
                        path.display()
                    )))
                }
                None => named.into_iter().cloned().collect(),
            }
        }
    };
    let l = label_names.len();
    let mut records = Vec::with_capacity(raw.len());
    for (lineno, id, text, labels, observed) in raw {
        let labels = match labels {
            RawLabels::Binary(b) => {
                if b.len() != l {
                    return Err(record_err(
                        path,
                        lineno,
                        format!("label vector has {} entries, expected {l}", b.len()),
                    ));
                }
                b
            }
            RawLabels::Names(names) => {
                let mut row = vec![false; l];
                for n in names {
                    let pos = label_names
                        .iter()
                        .position(|h| *h == n)
                        .ok_or_else(|| record_err(path, lineno, format!("unknown label `{n}`")))?;
                    row[pos] = true;
                }
                row
            }
        };
        if let Some(o) = &observed {
            if o.len() != l {
                return Err(record_err(path, lineno, "`observed` arity differs from labels"));
            }
            if o.iter().zip(&labels).any(|(&o, &f)| o && !f) {
                return Err(record_err(path, lineno, "observed positive where label is 0"));
            }
        }
        records.push(Record {
            id,
            text,
            labels,
            observed,
        });
    }
    Ok(Corpus {
        records,
        label_names,
        domain,
    })
}

fn load_csv(path: &Path) -> Result<Corpus> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| invalid(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| invalid(e.to_string()))?.clone();
    if headers.get(0) != Some("text") || headers.len() < 2 {
        return Err(record_err(path, 1, "header must be `text,<label>,...`"));
    }
    let label_names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let lineno = i + 2;
        let row = row.map_err(|e| record_err(path, lineno, e.to_string()))?;
        if row.len() != headers.len() {
            return Err(record_err(
                path,
                lineno,
                format!("{} fields, expected {}", row.len(), headers.len()),
            ));
        }
        let labels = row
            .iter()
            .skip(1)
            .map(|f| match f.trim() {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(record_err(path, lineno, format!("label value `{other}` is not 0/1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        records.push(Record {
            id: i as u64,
            text: row[0].to_string(),
            labels,
            observed: None,
        });
    }
    Ok(Corpus {
        records,
        label_names,
        domain: None,
    })
}

#[derive(Serialize)]
struct Header<'a> {
    label_names: &'a [String],
    domain: Domain,
}

#[derive(Serialize)]
struct OutRecord<'a> {
    id: u64,
    text: &'a str,
    labels: Vec<u8>,
    observed: Vec<u8>,
}

/// Writes a header line followed by one record per sample, including the
/// `observed` vector. Output is byte-stable for a given dataset.
pub fn write_dataset(ds: &PUDataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(
        &mut w,
        &Header {
            label_names: &ds.label_names,
            domain: ds.domain,
        },
    )?;
    writeln!(w)?;
    let truth = ds.truth();
    let bits = |r: &[bool]| r.iter().map(|&b| b as u8).collect::<Vec<_>>();
    for (i, s) in ds.samples.iter().enumerate() {
        serde_json::to_writer(
            &mut w,
            &OutRecord {
                id: s.id,
                text: &s.text,
                labels: bits(truth.row(i)),
                observed: bits(ds.observed.row(i)),
            },
        )?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
