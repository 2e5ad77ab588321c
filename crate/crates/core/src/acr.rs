//! Adaptive confidence refinement: a residual risk head and a confidence
//! gating head fused with MSP.
//!
//! The residual risk head (RRH) predicts correctness probability from
//! intermediate features and logits; the confidence gating head (CGH)
//! predicts the per-input fusion weight `alpha`. The final score is the
//! convex fusion `alpha * c_m + (1 - alpha) * c_r`, trained jointly with
//! binary cross-entropy on correctness labels while the upstream logits stay
//! frozen.

use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::confidence::msp;
use crate::dataset::{correctness, ConfidenceTable, EvalSet, ScoredRecord, TableEntry};
use crate::exec;
use crate::metrics;
use crate::neural::{
    adam_step, bce_grad, bce_loss, mlp_backward, mlp_forward, sample_dropout_masks, AdamState,
    EarlyStop, MlpGrads, MlpParams, TrainConfig, TrainTrace,
};
use crate::{Error, Result};

/// Input blocks the heads may consume, concatenated in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureBlock {
    FusedFeatures,
    Logits,
}

/// Ablation switches: the full two-head fusion, gating-only (residual head
/// replaced by a fixed 0.5 anchor, leaving a pure recalibrator), or
/// residual-only (gate pinned to 0, a pure learned selector).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcrMode {
    Full,
    NoRrh,
    NoCgh,
}

/// Anchor substituted for the residual score in `NoRrh` mode, keeping the
/// gate's fusion non-degenerate.
pub const NO_RRH_ANCHOR: f64 = 0.5;

/// Trained head pair plus the input layout they were trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcrHeads {
    pub rrh: MlpParams,
    pub cgh: MlpParams,
    pub input_spec: Vec<FeatureBlock>,
    pub mode: AcrMode,
}

/// Shape of the heads and training variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcrOptions {
    pub input_spec: Vec<FeatureBlock>,
    pub mode: AcrMode,
    pub depth: usize,
}

impl Default for AcrOptions {
    fn default() -> Self {
        AcrOptions {
            input_spec: vec![FeatureBlock::FusedFeatures, FeatureBlock::Logits],
            mode: AcrMode::Full,
            depth: 3,
        }
    }
}

fn input_dim(input_spec: &[FeatureBlock], feat_dim: usize, k_classes: usize) -> Result<usize> {
    if input_spec.is_empty() {
        return Err(Error::InvalidArgument("input_spec must be non-empty".into()));
    }
    Ok(input_spec
        .iter()
        .map(|b| match b {
            FeatureBlock::FusedFeatures => feat_dim,
            FeatureBlock::Logits => k_classes,
        })
        .sum())
}

fn build_input(record: &ScoredRecord, input_spec: &[FeatureBlock]) -> Vec<f64> {
    let mut out = Vec::new();
    for block in input_spec {
        match block {
            FeatureBlock::FusedFeatures => out.extend_from_slice(&record.features),
            FeatureBlock::Logits => out.extend_from_slice(&record.logits),
        }
    }
    out
}

impl AcrHeads {
    /// Seed-derived initialization; `d_hidden = d_in` as in the reference
    /// head architecture.
    pub fn init(
        feat_dim: usize,
        k_classes: usize,
        options: &AcrOptions,
        seed: u64,
    ) -> Result<Self> {
        let d_in = input_dim(&options.input_spec, feat_dim, k_classes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rrh = MlpParams::init(d_in, d_in, options.depth, &mut rng)?;
        let cgh = MlpParams::init(d_in, d_in, options.depth, &mut rng)?;
        Ok(AcrHeads {
            rrh,
            cgh,
            input_spec: options.input_spec.clone(),
            mode: options.mode,
        })
    }

    pub fn d_in(&self) -> usize {
        self.rrh.d_in
    }

    fn check_record(&self, record: &ScoredRecord) -> Result<()> {
        let supplied = build_input(record, &self.input_spec).len();
        if supplied != self.d_in() {
            return Err(Error::dim(
                format!("head input for record {:?}", record.id),
                self.d_in(),
                supplied,
            ));
        }
        Ok(())
    }

    /// Method label for reports: the ablated variants are flagged.
    pub fn method_name(&self) -> &'static str {
        match self.mode {
            AcrMode::Full => "acr",
            AcrMode::NoRrh => "acr-no-rrh",
            AcrMode::NoCgh => "acr-no-cgh",
        }
    }
}

/// All four scores of one fused inference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcrScore {
    pub c_acr: f64,
    pub alpha: f64,
    pub c_r: f64,
    pub c_m: f64,
}

pub fn fuse(alpha: f64, c_m: f64, c_r: f64) -> f64 {
    alpha * c_m + (1.0 - alpha) * c_r
}

/// Fused confidence for one record in eval mode (no dropout).
pub fn acr_confidence(heads: &AcrHeads, record: &ScoredRecord) -> Result<AcrScore> {
    heads.check_record(record)?;
    let c_m = msp(&record.logits)?;
    let input = build_input(record, &heads.input_spec);
    let c_r = match heads.mode {
        AcrMode::NoRrh => NO_RRH_ANCHOR,
        _ => mlp_forward(&heads.rrh, &input, None)?.0,
    };
    let alpha = match heads.mode {
        AcrMode::NoCgh => 0.0,
        _ => mlp_forward(&heads.cgh, &input, None)?.0,
    };
    Ok(AcrScore {
        c_acr: fuse(alpha, c_m, c_r),
        alpha,
        c_r,
        c_m,
    })
}

/// Fused confidence for every record of a set.
pub fn acr_table(heads: &AcrHeads, set: &EvalSet) -> Result<ConfidenceTable> {
    let scored = exec::map_slice(set.records(), |r| {
        acr_confidence(heads, r).map(|s| TableEntry {
            id: r.id.clone(),
            confidence: s.c_acr,
            correct: correctness(r),
        })
    });
    let entries = scored.into_iter().collect::<Result<Vec<_>>>()?;
    ConfidenceTable::new(entries, heads.method_name())
}

/// The residual head's score alone, as its own table — the `C_R` side of the
/// error-moment analysis.
pub fn rrh_table(heads: &AcrHeads, set: &EvalSet) -> Result<ConfidenceTable> {
    let scored = exec::map_slice(set.records(), |r| {
        acr_confidence(heads, r).map(|s| TableEntry {
            id: r.id.clone(),
            confidence: s.c_r,
            correct: correctness(r),
        })
    });
    let entries = scored.into_iter().collect::<Result<Vec<_>>>()?;
    ConfidenceTable::new(entries, "rrh")
}

struct PreparedSet {
    inputs: Vec<Vec<f64>>,
    c_m: Vec<f64>,
    correct: Vec<bool>,
}

fn prepare(set: &EvalSet, heads: &AcrHeads) -> Result<PreparedSet> {
    let mut inputs = Vec::with_capacity(set.len());
    let mut c_m = Vec::with_capacity(set.len());
    let mut correct = Vec::with_capacity(set.len());
    for r in set.records() {
        heads.check_record(r)?;
        inputs.push(build_input(r, &heads.input_spec));
        c_m.push(msp(&r.logits)?);
        correct.push(correctness(r));
    }
    Ok(PreparedSet {
        inputs,
        c_m,
        correct,
    })
}

fn eval_fused(heads: &AcrHeads, prepared: &PreparedSet, i: usize) -> Result<f64> {
    let c_r = match heads.mode {
        AcrMode::NoRrh => NO_RRH_ANCHOR,
        _ => mlp_forward(&heads.rrh, &prepared.inputs[i], None)?.0,
    };
    let alpha = match heads.mode {
        AcrMode::NoCgh => 0.0,
        _ => mlp_forward(&heads.cgh, &prepared.inputs[i], None)?.0,
    };
    Ok(fuse(alpha, prepared.c_m[i], c_r))
}

fn val_aurc(heads: &AcrHeads, prepared: &PreparedSet) -> Result<f64> {
    let entries = (0..prepared.inputs.len())
        .map(|i| {
            Ok(TableEntry {
                id: i.to_string(),
                confidence: eval_fused(heads, prepared, i)?,
                correct: prepared.correct[i],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    metrics::aurc(&ConfidenceTable::new(entries, "val")?)
}

/// Jointly train both heads with BCE through the fusion.
///
/// Gradients flow to the residual head weighted by `1 - alpha` and to the
/// gating head via `c_m - c_r`; both heads take one Adam step per minibatch.
/// `train` plays the selector-training role, `val` the selector-validation
/// role (early stopping on fused AURC). Deterministic given the seed.
pub fn acr_train(
    train: &EvalSet,
    val: &EvalSet,
    config: &TrainConfig,
    options: &AcrOptions,
) -> Result<(AcrHeads, TrainTrace)> {
    config.validate()?;
    if train.k_classes != val.k_classes || train.feat_dim != val.feat_dim {
        return Err(Error::InvalidArgument(
            "train/val sets have different shapes".into(),
        ));
    }
    let mut heads = AcrHeads::init(train.feat_dim, train.k_classes, options, config.seed)?;
    let mut trace = TrainTrace {
        train_loss: Vec::new(),
        val_aurc: Vec::new(),
        best_epoch: None,
    };
    if config.epochs == 0 {
        return Ok((heads, trace));
    }

    let train_prep = prepare(train, &heads)?;
    let val_prep = prepare(val, &heads)?;
    let train_rrh = options.mode != AcrMode::NoRrh;
    let train_cgh = options.mode != AcrMode::NoCgh;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rrh_state = AdamState::zeros_like(&heads.rrh);
    let mut cgh_state = AdamState::zeros_like(&heads.cgh);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, AcrHeads, usize)> = None;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut rrh_grads = MlpGrads::zeros_like(&heads.rrh);
            let mut cgh_grads = MlpGrads::zeros_like(&heads.cgh);
            for &i in batch {
                let input = &train_prep.inputs[i];
                let c_m = train_prep.c_m[i];
                let target = train_prep.correct[i];

                let dropout = config.dropout_p > 0.0;
                let (c_r, rrh_cache) = if train_rrh {
                    let masks = dropout
                        .then(|| sample_dropout_masks(&heads.rrh, config.dropout_p, &mut rng));
                    let arg = masks.as_ref().map(|m| (m.as_slice(), config.dropout_p));
                    let (v, cache) = mlp_forward(&heads.rrh, input, arg)?;
                    (v, Some(cache))
                } else {
                    (NO_RRH_ANCHOR, None)
                };
                let (alpha, cgh_cache) = if train_cgh {
                    let masks = dropout
                        .then(|| sample_dropout_masks(&heads.cgh, config.dropout_p, &mut rng));
                    let arg = masks.as_ref().map(|m| (m.as_slice(), config.dropout_p));
                    let (v, cache) = mlp_forward(&heads.cgh, input, arg)?;
                    (v, Some(cache))
                } else {
                    (0.0, None)
                };

                let c_acr = fuse(alpha, c_m, c_r);
                epoch_loss += bce_loss(c_acr, target);
                let d_fused = bce_grad(c_acr, target);
                if let Some(cache) = &rrh_cache {
                    let sample = mlp_backward(&heads.rrh, cache, d_fused * (1.0 - alpha));
                    rrh_grads.add_assign(&sample);
                }
                if let Some(cache) = &cgh_cache {
                    let sample = mlp_backward(&heads.cgh, cache, d_fused * (c_m - c_r));
                    cgh_grads.add_assign(&sample);
                }
            }
            let scale = 1.0 / batch.len() as f64;
            if train_rrh {
                rrh_grads.scale(scale);
                adam_step(&mut heads.rrh, &rrh_grads, &mut rrh_state, config);
            }
            if train_cgh {
                cgh_grads.scale(scale);
                adam_step(&mut heads.cgh, &cgh_grads, &mut cgh_state, config);
            }
        }
        trace.train_loss.push(epoch_loss / train.len() as f64);

        if config.early_stop == EarlyStop::ValAurc {
            let aurc = val_aurc(&heads, &val_prep)?;
            trace.val_aurc.push(aurc);
            if best.as_ref().is_none_or(|(b, _, _)| aurc < *b) {
                best = Some((aurc, heads.clone(), epoch));
            }
        }
    }
    if let Some((_, snapshot, epoch)) = best {
        heads = snapshot;
        trace.best_epoch = Some(epoch);
    }
    Ok((heads, trace))
}

/// Descriptive statistics of the learned gate over a set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaStats {
    pub mean: f64,
    pub variance: f64,
    pub frac_below_001: f64,
    pub frac_above_099: f64,
    /// 20 equal-width bins over [0,1].
    pub histogram: Vec<usize>,
}

/// Distribution of `alpha(x)` over a set; detects gate collapse.
pub fn alpha_stats(heads: &AcrHeads, set: &EvalSet) -> Result<AlphaStats> {
    if set.is_empty() {
        return Err(Error::EmptyInput("alpha_stats set".into()));
    }
    let alphas = exec::map_slice(set.records(), |r| acr_confidence(heads, r).map(|s| s.alpha));
    let alphas = alphas.into_iter().collect::<Result<Vec<_>>>()?;
    let n = alphas.len() as f64;
    let mean = alphas.iter().sum::<f64>() / n;
    let variance = alphas.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let frac_below_001 = alphas.iter().filter(|&&a| a < 0.01).count() as f64 / n;
    let frac_above_099 = alphas.iter().filter(|&&a| a > 0.99).count() as f64 / n;
    let mut histogram = vec![0usize; 20];
    for &a in &alphas {
        let bin = ((a * 20.0).floor() as usize).min(19);
        histogram[bin] += 1;
    }
    Ok(AlphaStats {
        mean,
        variance,
        frac_below_001,
        frac_above_099,
        histogram,
    })
}

/// Check the BCE gradient identity at the fusion node.
///
/// For each record the analytic `dL/dalpha` is
/// `(c_m - c_r) * (c_acr - c) / (c_acr * (1 - c_acr))`; a central finite
/// difference of the loss through the fusion provides the independent route.
/// Returns the maximum absolute deviation over the batch.
pub fn bce_alpha_gradient_check(heads: &AcrHeads, batch: &EvalSet) -> Result<f64> {
    let mut max_dev = 0.0f64;
    for record in batch.records() {
        let score = acr_confidence(heads, record)?;
        let c = if correctness(record) { 1.0 } else { 0.0 };
        let target = correctness(record);
        let analytic = alpha_gradient_identity(score.c_m, score.c_r, score.c_acr, c);
        let h = 1e-6;
        let loss_at = |alpha: f64| bce_loss(fuse(alpha, score.c_m, score.c_r), target);
        let fd = (loss_at(score.alpha + h) - loss_at(score.alpha - h)) / (2.0 * h);
        max_dev = max_dev.max((fd - analytic).abs());
    }
    Ok(max_dev)
}

/// The closed-form gradient identity at the fusion node.
pub fn alpha_gradient_identity(c_m: f64, c_r: f64, c_acr: f64, c: f64) -> f64 {
    let p = c_acr.clamp(1e-7, 1.0 - 1e-7);
    (c_m - c_r) * (p - c) / (p * (1.0 - p))
}
