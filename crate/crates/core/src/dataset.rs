//! Scored prediction records: the interface through which any classifier
//! (real or synthetic) enters the system.
//!
//! The on-disk format is newline-delimited JSON, one record per line, with an
//! optional first-line header `{"k_classes": K, "feat_dim": d}`. Reals are
//! serialized as shortest round-trip decimals, so `parse(serialize(s)) == s`
//! field-for-field.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One model prediction: fused feature vector, pre-softmax logits, true
/// label, and (optionally) per-pass logits for Monte Carlo dropout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecord {
    pub id: String,
    pub label: usize,
    pub logits: Vec<f64>,
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_passes: Option<Vec<Vec<f64>>>,
}

/// Role a set plays in the two-stage protocol: the backbone's own training
/// data (`TrainF`), the selector-training split (`ValF`), the
/// selector-validation/threshold split (`ValG`), and the held-out test split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    TrainF,
    ValF,
    ValG,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Split::TrainF => "train_f",
            Split::ValF => "val_f",
            Split::ValG => "val_g",
            Split::Test => "test",
        };
        f.write_str(s)
    }
}

/// A validated collection of [`ScoredRecord`]s sharing one answer space of
/// size `k_classes` and one feature dimensionality `feat_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    records: Vec<ScoredRecord>,
    pub k_classes: usize,
    pub feat_dim: usize,
    pub split: Split,
    pub seed_provenance: String,
}

/// Per-record confidence paired with correctness; the substrate of every
/// selective metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceTable {
    pub entries: Vec<TableEntry>,
    pub method_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub id: String,
    pub confidence: f64,
    pub correct: bool,
}

impl ScoredRecord {
    fn validate(&self, k_classes: usize, feat_dim: usize) -> Result<()> {
        if self.logits.len() != k_classes {
            return Err(Error::dim(
                format!("logits of record {:?}", self.id),
                k_classes,
                self.logits.len(),
            ));
        }
        if self.features.len() != feat_dim {
            return Err(Error::dim(
                format!("features of record {:?}", self.id),
                feat_dim,
                self.features.len(),
            ));
        }
        if self.label >= k_classes {
            return Err(Error::InvalidArgument(format!(
                "label {} out of range [0, {}) in record {:?}",
                self.label, k_classes, self.id
            )));
        }
        if let Some(passes) = &self.mc_passes {
            for (i, pass) in passes.iter().enumerate() {
                if pass.len() != k_classes {
                    return Err(Error::dim(
                        format!("mc_passes[{i}] of record {:?}", self.id),
                        k_classes,
                        pass.len(),
                    ));
                }
                if pass.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "mc_passes[{i}] of record {:?}",
                        self.id
                    )));
                }
            }
        }
        if self.logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("logits of record {:?}", self.id)));
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "features of record {:?}",
                self.id
            )));
        }
        Ok(())
    }
}

/// Index of the largest logit, ties broken to the lowest class index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// 1 iff the argmax prediction equals the true label.
pub fn correctness(record: &ScoredRecord) -> bool {
    argmax(&record.logits) == record.label
}

impl EvalSet {
    /// Validate `records` against `(k_classes, feat_dim)` and take ownership.
    pub fn new(
        records: Vec<ScoredRecord>,
        k_classes: usize,
        feat_dim: usize,
        split: Split,
        seed_provenance: impl Into<String>,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyInput("EvalSet requires >= 1 record".into()));
        }
        if k_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "k_classes must be >= 2, got {k_classes}"
            )));
        }
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            r.validate(k_classes, feat_dim)?;
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        Ok(EvalSet {
            records,
            k_classes,
            feat_dim,
            split,
            seed_provenance: seed_provenance.into(),
        })
    }

    pub fn records(&self) -> &[ScoredRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Fraction of records whose argmax prediction equals the label.
    pub fn accuracy(&self) -> f64 {
        let correct = self.records.iter().filter(|r| correctness(r)).count();
        correct as f64 / self.records.len() as f64
    }

    pub fn correctness_bits(&self) -> Vec<bool> {
        self.records.iter().map(correctness).collect()
    }
}

impl ConfidenceTable {
    /// Validate entry-level invariants: confidences in [0,1], ids unique.
    pub fn new(entries: Vec<TableEntry>, method_name: impl Into<String>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !e.confidence.is_finite() || !(0.0..=1.0).contains(&e.confidence) {
                return Err(Error::InvalidArgument(format!(
                    "confidence {} of entry {:?} outside [0,1]",
                    e.confidence, e.id
                )));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(Error::DuplicateId(e.id.clone()));
            }
        }
        Ok(ConfidenceTable {
            entries,
            method_name: method_name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn accuracy(&self) -> f64 {
        let correct = self.entries.iter().filter(|e| e.correct).count();
        correct as f64 / self.entries.len() as f64
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    k_classes: usize,
    feat_dim: usize,
}

/// Parse newline-delimited records, validating against `(k_classes, feat_dim)`.
///
/// A header line, when present, must agree with the supplied dimensions.
/// Records are preserved in input order.
pub fn parse_records<R: BufRead>(
    reader: R,
    k_classes: usize,
    feat_dim: usize,
    split: Split,
    seed_provenance: impl Into<String>,
) -> Result<EvalSet> {
    parse_records_impl(reader, Some((k_classes, feat_dim)), split, seed_provenance)
}

/// Like [`parse_records`] but takes `(k_classes, feat_dim)` from the file's
/// header line; errors when the header is absent.
pub fn parse_records_auto<R: BufRead>(
    reader: R,
    split: Split,
    seed_provenance: impl Into<String>,
) -> Result<EvalSet> {
    parse_records_impl(reader, None, split, seed_provenance)
}

fn parse_records_impl<R: BufRead>(
    reader: R,
    dims: Option<(usize, usize)>,
    split: Split,
    seed_provenance: impl Into<String>,
) -> Result<EvalSet> {
    let mut records = Vec::new();
    let mut dims = dims;
    let mut ids = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if idx == 0 {
            // The header is an object without an "id" key.
            if let Ok(header) = serde_json::from_str::<Header>(&line) {
                match dims {
                    Some((k, d)) if (k, d) != (header.k_classes, header.feat_dim) => {
                        return Err(Error::Parse {
                            line: line_no,
                            msg: format!(
                                "header (k_classes={}, feat_dim={}) disagrees with requested ({k}, {d})",
                                header.k_classes, header.feat_dim
                            ),
                        });
                    }
                    _ => dims = Some((header.k_classes, header.feat_dim)),
                }
                continue;
            }
        }
        let (k, d) = dims.ok_or_else(|| Error::Parse {
            line: line_no,
            msg: "no header line and no k_classes/feat_dim supplied".into(),
        })?;
        let record: ScoredRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        record.validate(k, d).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        if !ids.insert(record.id.clone()) {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("duplicate id {:?}", record.id),
            });
        }
        records.push(record);
    }
    let (k, d) = dims.ok_or_else(|| Error::EmptyInput("no records in stream".into()))?;
    EvalSet::new(records, k, d, split, seed_provenance)
}

/// Serialize a set in the newline-delimited format, header line first.
pub fn serialize_records<W: Write>(set: &EvalSet, mut writer: W) -> Result<()> {
    let header = Header {
        k_classes: set.k_classes,
        feat_dim: set.feat_dim,
    };
    serde_json::to_writer(&mut writer, &header).map_err(io_err)?;
    writer.write_all(b"\n")?;
    for record in &set.records {
        serde_json::to_writer(&mut writer, record).map_err(io_err)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

fn io_err(e: serde_json::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Deterministically partition `full_test` into a selector-validation split
/// and a held-out test split.
///
/// `|val_g| = round(fraction * N)` (half-up), clamped so both parts are
/// non-empty. Each part keeps the parent's record order.
pub fn split_eval(full_test: &EvalSet, fraction_val_g: f64, seed: u64) -> Result<(EvalSet, EvalSet)> {
    if !(fraction_val_g > 0.0 && fraction_val_g < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fraction_val_g must lie in (0,1), got {fraction_val_g}"
        )));
    }
    let n = full_test.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "need >= 2 records to split".into(),
        ));
    }
    let n_val = ((fraction_val_g * n as f64 + 0.5).floor() as usize).clamp(1, n - 1);

    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let mut val_idx: Vec<usize> = indices[..n_val].to_vec();
    let mut test_idx: Vec<usize> = indices[n_val..].to_vec();
    val_idx.sort_unstable();
    test_idx.sort_unstable();

    let take = |idx: &[usize]| -> Vec<ScoredRecord> {
        idx.iter().map(|&i| full_test.records[i].clone()).collect()
    };
    let provenance = |role: &str| {
        format!(
            "{} <- split(seed={seed}, fraction={fraction_val_g}) of [{}]",
            role, full_test.seed_provenance
        )
    };
    let val_g = EvalSet::new(
        take(&val_idx),
        full_test.k_classes,
        full_test.feat_dim,
        Split::ValG,
        provenance("val_g"),
    )?;
    let test = EvalSet::new(
        take(&test_idx),
        full_test.k_classes,
        full_test.feat_dim,
        Split::Test,
        provenance("test"),
    )?;
    Ok((val_g, test))
}

/// Deterministically partition a set into role-tagged subsets by fraction.
///
/// Counts are `round(fraction * N)` with the largest part absorbing the
/// rounding remainder; every part gets at least one record. Each part keeps
/// the parent's record order.
pub fn split_roles(
    full: &EvalSet,
    roles: &[(Split, f64)],
    seed: u64,
) -> Result<Vec<EvalSet>> {
    if roles.is_empty() {
        return Err(Error::InvalidArgument("no roles requested".into()));
    }
    let total_fraction: f64 = roles.iter().map(|(_, f)| f).sum();
    if roles.iter().any(|(_, f)| *f <= 0.0) || (total_fraction - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(
            "role fractions must be positive and sum to 1".into(),
        ));
    }
    let n = full.len();
    if n < roles.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} records into {} non-empty roles",
            roles.len()
        )));
    }
    let mut counts: Vec<usize> = roles
        .iter()
        .map(|(_, f)| ((f * n as f64 + 0.5).floor() as usize).max(1))
        .collect();
    // Push the rounding remainder onto the largest part.
    let assigned: usize = counts.iter().sum();
    let largest = (0..counts.len())
        .max_by(|&a, &b| counts[a].cmp(&counts[b]))
        .expect("non-empty roles");
    if assigned > n {
        let excess = assigned - n;
        if counts[largest] <= excess {
            return Err(Error::InvalidArgument(
                "set too small for the requested roles".into(),
            ));
        }
        counts[largest] -= excess;
    } else {
        counts[largest] += n - assigned;
    }

    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);

    let mut out = Vec::with_capacity(roles.len());
    let mut cursor = 0;
    for (&(split, fraction), &count) in roles.iter().zip(&counts) {
        let mut part: Vec<usize> = indices[cursor..cursor + count].to_vec();
        cursor += count;
        part.sort_unstable();
        let records = part.iter().map(|&i| full.records[i].clone()).collect();
        out.push(EvalSet::new(
            records,
            full.k_classes,
            full.feat_dim,
            split,
            format!(
                "{split} <- split_roles(seed={seed}, fraction={fraction}) of [{}]",
                full.seed_provenance
            ),
        )?);
    }
    Ok(out)
}
