//! Closed-form selection functions: softmax machinery, maximum softmax
//! probability, the Doctor score, Monte Carlo dropout aggregation, and
//! vector-scaling application.
//!
//! Everything here is a pure function of logits; no training state. The
//! `*_table` builders evaluate a score over a whole [`EvalSet`] and pair it
//! with correctness, which is what the metrics layer consumes.

use serde::{Deserialize, Serialize};

use crate::dataset::{correctness, ConfidenceTable, EvalSet, ScoredRecord, TableEntry};
use crate::exec;
use crate::{Error, Result};

/// Class-wise affine recalibration parameters: a diagonal scale and a bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VsParams {
    pub diag_w: Vec<f64>,
    pub bias: Vec<f64>,
}

impl VsParams {
    pub fn identity(k: usize) -> Self {
        VsParams {
            diag_w: vec![1.0; k],
            bias: vec![0.0; k],
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.diag_w.len() != k {
            return Err(Error::dim("diag_w", k, self.diag_w.len()));
        }
        if self.bias.len() != k {
            return Err(Error::dim("bias", k, self.bias.len()));
        }
        if self.diag_w.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vector-scaling parameters".into()));
        }
        Ok(())
    }
}

fn check_logits(logits: &[f64]) -> Result<()> {
    if logits.is_empty() {
        return Err(Error::EmptyInput("logit vector".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logit vector".into()));
    }
    Ok(())
}

/// Numerically stable softmax (max-subtraction, no overflow up to |l| ~ 1e4).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    check_logits(logits)?;
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Maximum softmax probability; lies in [1/K, 1].
pub fn msp(logits: &[f64]) -> Result<f64> {
    let probs = softmax(logits)?;
    Ok(probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
}

/// Doctor score: sum of squared softmax probabilities (1/K at uniform, 1 in
/// the one-hot limit). Penalizes high-entropy predictions.
pub fn doctor(logits: &[f64]) -> Result<f64> {
    let probs = softmax(logits)?;
    Ok(probs.iter().map(|p| p * p).sum())
}

/// Monte Carlo dropout confidence: softmax each pass, average the predictive
/// distributions elementwise, return the max of the mean.
pub fn mcd_confidence(passes: &[Vec<f64>]) -> Result<f64> {
    if passes.is_empty() {
        return Err(Error::EmptyInput("mc_passes".into()));
    }
    let k = passes[0].len();
    let mut mean = vec![0.0f64; k];
    for pass in passes {
        if pass.len() != k {
            return Err(Error::dim("mc pass", k, pass.len()));
        }
        let probs = softmax(pass)?;
        for (m, p) in mean.iter_mut().zip(&probs) {
            *m += p;
        }
    }
    let n = passes.len() as f64;
    Ok(mean.iter().map(|m| m / n).fold(f64::NEG_INFINITY, f64::max))
}

/// Apply class-wise affine recalibration to a logit vector.
pub fn vs_apply(params: &VsParams, logits: &[f64]) -> Result<Vec<f64>> {
    params.validate(logits.len())?;
    check_logits(logits)?;
    Ok(logits
        .iter()
        .zip(&params.diag_w)
        .zip(&params.bias)
        .map(|((l, w), b)| w * l + b)
        .collect())
}

fn build_table<F>(set: &EvalSet, method_name: &str, score: F) -> Result<ConfidenceTable>
where
    F: Fn(&ScoredRecord) -> Result<f64> + Sync + Send,
{
    let scored = exec::map_slice(set.records(), |r| {
        score(r).map(|confidence| TableEntry {
            id: r.id.clone(),
            confidence,
            correct: correctness(r),
        })
    });
    let entries = scored.into_iter().collect::<Result<Vec<_>>>()?;
    ConfidenceTable::new(entries, method_name)
}

/// MSP confidence for every record of a set.
pub fn msp_table(set: &EvalSet) -> Result<ConfidenceTable> {
    build_table(set, "msp", |r| msp(&r.logits))
}

/// Doctor confidence for every record of a set.
pub fn doctor_table(set: &EvalSet) -> Result<ConfidenceTable> {
    build_table(set, "doctor", |r| doctor(&r.logits))
}

/// MCD confidence for every record; errors when a record lacks `mc_passes`.
pub fn mcd_table(set: &EvalSet) -> Result<ConfidenceTable> {
    build_table(set, "mcd", |r| {
        let passes = r.mc_passes.as_ref().ok_or_else(|| {
            Error::InvalidArgument(format!("record {:?} has no mc_passes field", r.id))
        })?;
        mcd_confidence(passes)
    })
}

/// MSP over vector-scaled logits. Correctness stays that of the base
/// prediction: recalibration adjusts the confidence ranking, not the answer.
pub fn vs_table(params: &VsParams, set: &EvalSet) -> Result<ConfidenceTable> {
    params.validate(set.k_classes)?;
    build_table(set, "vs", |r| msp(&vs_apply(params, &r.logits)?))
}

/// Oracle confidence table: confidence equals the correctness indicator.
pub fn oracle_table(set: &EvalSet) -> Result<ConfidenceTable> {
    build_table(set, "oracle", |r| Ok(if correctness(r) { 1.0 } else { 0.0 }))
}
