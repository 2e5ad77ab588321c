//! Numeric verification of the fusion theory and distribution-separation
//! diagnostics: error moments, the optimal fixed fusion weight, the fusion
//! benefit condition, the fused-MSE quadratic, best fixed weight vs adaptive,
//! the Brier decomposition, Cohen's d, 1-D Wasserstein, and histogram KL.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dataset::ConfidenceTable;
use crate::metrics;
use crate::{Error, Result};

/// Empirical second moments of two confidence estimators' correctness
/// errors: `eps(x) = s(x) - c(x)` for the MSP-side and residual-side scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMoments {
    pub sigma2_m: f64,
    pub sigma2_r: f64,
    pub sigma_mr: f64,
    pub n: usize,
}

impl ErrorMoments {
    pub fn new(sigma2_m: f64, sigma2_r: f64, sigma_mr: f64, n: usize) -> Result<Self> {
        if n < 1 {
            return Err(Error::EmptyInput("moments need n >= 1".into()));
        }
        if sigma2_m < 0.0 || sigma2_r < 0.0 {
            return Err(Error::InvalidArgument(
                "second moments must be non-negative".into(),
            ));
        }
        // Cauchy-Schwarz, with a little float slack.
        if sigma_mr.abs() > (sigma2_m * sigma2_r).sqrt() + 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "cross-moment {sigma_mr} violates Cauchy-Schwarz for ({sigma2_m}, {sigma2_r})"
            )));
        }
        Ok(ErrorMoments {
            sigma2_m,
            sigma2_r,
            sigma_mr,
            n,
        })
    }
}

fn join_tables<'a>(
    a: &'a ConfidenceTable,
    b: &'a ConfidenceTable,
) -> Result<Vec<(f64, f64, bool)>> {
    if a.entries.len() != b.entries.len() {
        return Err(Error::IdMismatch(format!(
            "{} entries vs {}",
            a.entries.len(),
            b.entries.len()
        )));
    }
    let index: HashMap<&str, (f64, bool)> = b
        .entries
        .iter()
        .map(|e| (e.id.as_str(), (e.confidence, e.correct)))
        .collect();
    a.entries
        .iter()
        .map(|e| {
            let (conf_b, correct_b) = index
                .get(e.id.as_str())
                .ok_or_else(|| Error::IdMismatch(format!("id {:?} missing", e.id)))?;
            if *correct_b != e.correct {
                return Err(Error::IdMismatch(format!(
                    "correctness of id {:?} differs between tables",
                    e.id
                )));
            }
            Ok((e.confidence, *conf_b, e.correct))
        })
        .collect()
}

/// Raw (uncentered) empirical error moments over two joined tables.
pub fn error_moments(
    msp_table: &ConfidenceTable,
    rrh_table: &ConfidenceTable,
) -> Result<ErrorMoments> {
    let joined = join_tables(msp_table, rrh_table)?;
    if joined.is_empty() {
        return Err(Error::EmptyInput("error_moments tables".into()));
    }
    let n = joined.len();
    let (mut mm, mut rr, mut mr) = (0.0, 0.0, 0.0);
    for (s_m, s_r, correct) in joined {
        let c = if correct { 1.0 } else { 0.0 };
        let e_m = s_m - c;
        let e_r = s_r - c;
        mm += e_m * e_m;
        rr += e_r * e_r;
        mr += e_m * e_r;
    }
    let nf = n as f64;
    ErrorMoments::new(mm / nf, rr / nf, mr / nf, n)
}

/// Closed-form optimal fixed fusion weight
/// `(sigma2_r - sigma_mr) / (sigma2_m + sigma2_r - 2 sigma_mr)`.
///
/// Errors when the denominator vanishes (identical-error estimators).
pub fn alpha_star(m: &ErrorMoments) -> Result<f64> {
    let denom = m.sigma2_m + m.sigma2_r - 2.0 * m.sigma_mr;
    if denom <= 0.0 {
        return Err(Error::Numeric(format!(
            "degenerate fusion denominator {denom} (identical-error estimators)"
        )));
    }
    Ok((m.sigma2_r - m.sigma_mr) / denom)
}

/// Whether fusion strictly helps, with the margin
/// `min(sigma2_m, sigma2_r) - sigma_mr` (positive iff the condition holds).
pub fn fusion_condition(m: &ErrorMoments) -> (bool, f64) {
    let margin = m.sigma2_m.min(m.sigma2_r) - m.sigma_mr;
    (margin > 0.0, margin)
}

/// MSE of the fixed-weight fusion:
/// `a^2 sigma2_m + (1-a)^2 sigma2_r + 2 a (1-a) sigma_mr`.
pub fn j_alpha(m: &ErrorMoments, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in [0,1], got {alpha}"
        )));
    }
    Ok(alpha * alpha * m.sigma2_m
        + (1.0 - alpha) * (1.0 - alpha) * m.sigma2_r
        + 2.0 * alpha * (1.0 - alpha) * m.sigma_mr)
}

/// Grid search result for the best fixed fusion weight, cross-checked
/// against the closed form, optionally compared with an adaptive fusion's
/// empirical MSE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestFixedLambda {
    pub lambda: f64,
    pub mse: f64,
    /// Closed-form minimizer clamped to [0,1]; `None` when degenerate.
    pub alpha_star: Option<f64>,
    pub adaptive_mse: Option<f64>,
}

/// Empirical MSE of a confidence table against the correctness bits.
pub fn mse_to_correctness(table: &ConfidenceTable) -> Result<f64> {
    if table.entries.is_empty() {
        return Err(Error::EmptyInput("mse table".into()));
    }
    let sum: f64 = table
        .entries
        .iter()
        .map(|e| {
            let c = if e.correct { 1.0 } else { 0.0 };
            (e.confidence - c).powi(2)
        })
        .sum();
    Ok(sum / table.entries.len() as f64)
}

/// Minimize the fixed-weight fusion MSE over a lambda grid (step 0.001).
///
/// The closed form is the authority; the grid is a cross-check and must land
/// within one step of it. When `adaptive` is supplied its MSE is reported
/// alongside for the fixed-vs-adaptive comparison.
pub fn best_fixed_lambda(
    msp_table: &ConfidenceTable,
    rrh_table: &ConfidenceTable,
    adaptive: Option<&ConfidenceTable>,
) -> Result<BestFixedLambda> {
    let m = error_moments(msp_table, rrh_table)?;
    let mut best_lambda = 0.0;
    let mut best_mse = f64::INFINITY;
    for step in 0..=1000 {
        let lambda = step as f64 / 1000.0;
        let mse = j_alpha(&m, lambda)?;
        if mse < best_mse {
            best_mse = mse;
            best_lambda = lambda;
        }
    }
    let closed = alpha_star(&m).ok().map(|a| a.clamp(0.0, 1.0));
    let adaptive_mse = adaptive.map(mse_to_correctness).transpose()?;
    Ok(BestFixedLambda {
        lambda: best_lambda,
        mse: best_mse,
        alpha_star: closed,
        adaptive_mse,
    })
}

/// Empirical residual of the Brier decomposition
/// `E[(s-c)^2] = E[(s-s*)^2] + E[s*(1-s*)]` given the true correctness
/// posterior `s*` per id. Shrinks as the sample grows.
pub fn brier_decomposition_check(
    table: &ConfidenceTable,
    true_posterior: &HashMap<String, f64>,
) -> Result<f64> {
    if table.entries.is_empty() {
        return Err(Error::EmptyInput("brier table".into()));
    }
    let mut lhs = 0.0;
    let mut approx = 0.0;
    let mut irreducible = 0.0;
    for e in &table.entries {
        let s_star = *true_posterior
            .get(&e.id)
            .ok_or_else(|| Error::IdMismatch(format!("no posterior for id {:?}", e.id)))?;
        let c = if e.correct { 1.0 } else { 0.0 };
        lhs += (e.confidence - c).powi(2);
        approx += (e.confidence - s_star).powi(2);
        irreducible += s_star * (1.0 - s_star);
    }
    let n = table.entries.len() as f64;
    Ok((lhs / n - (approx / n + irreducible / n)).abs())
}

fn mean_and_sample_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Standardized mean difference with Bessel-corrected pooled variance.
pub fn cohens_d(group_a: &[f64], group_b: &[f64]) -> Result<f64> {
    if group_a.len() < 2 || group_b.len() < 2 {
        return Err(Error::InvalidArgument(
            "cohens_d needs >= 2 elements per group".into(),
        ));
    }
    let (mean_a, var_a) = mean_and_sample_var(group_a);
    let (mean_b, var_b) = mean_and_sample_var(group_b);
    let (na, nb) = (group_a.len() as f64, group_b.len() as f64);
    let pooled = ((na - 1.0) * var_a + (nb - 1.0) * var_b) / (na + nb - 2.0);
    if pooled <= 0.0 {
        return Err(Error::Numeric("degenerate pooled standard deviation".into()));
    }
    Ok((mean_a - mean_b) / pooled.sqrt())
}

/// Exact 1-D Wasserstein-1 distance between empirical measures: the integral
/// of `|F_a - F_b|` over the merged support.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("wasserstein1 sample".into()));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).expect("finite samples"));
    sb.sort_by(|x, y| x.partial_cmp(y).expect("finite samples"));

    let mut merged: Vec<f64> = sa.iter().chain(sb.iter()).cloned().collect();
    merged.sort_by(|x, y| x.partial_cmp(y).expect("finite samples"));
    merged.dedup();

    let (mut ia, mut ib) = (0usize, 0usize);
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let mut total = 0.0;
    for w in merged.windows(2) {
        let (x0, x1) = (w[0], w[1]);
        while ia < sa.len() && sa[ia] <= x0 {
            ia += 1;
        }
        while ib < sb.len() && sb[ib] <= x0 {
            ib += 1;
        }
        let fa = ia as f64 / na;
        let fb = ib as f64 / nb;
        total += (fa - fb).abs() * (x1 - x0);
    }
    Ok(total)
}

/// KL divergence between equal-width histograms on [0,1] with additive
/// `eps` smoothing then renormalization.
pub fn kl_divergence_hist(
    p_samples: &[f64],
    q_samples: &[f64],
    bins: usize,
    eps: f64,
) -> Result<f64> {
    if p_samples.is_empty() || q_samples.is_empty() {
        return Err(Error::EmptyInput("kl sample".into()));
    }
    if bins < 2 {
        return Err(Error::InvalidArgument("kl needs >= 2 bins".into()));
    }
    let hist = |samples: &[f64]| -> Vec<f64> {
        let mut counts = vec![0.0f64; bins];
        for &s in samples {
            let bin = ((s * bins as f64).floor() as usize).min(bins - 1);
            counts[bin] += 1.0;
        }
        let total: f64 = samples.len() as f64;
        let smoothed: Vec<f64> = counts.iter().map(|c| c / total + eps).collect();
        let norm: f64 = smoothed.iter().sum();
        smoothed.into_iter().map(|v| v / norm).collect()
    };
    let p = hist(p_samples);
    let q = hist(q_samples);
    Ok(p
        .iter()
        .zip(&q)
        .map(|(&pi, &qi)| if pi > 0.0 { pi * (pi / qi).ln() } else { 0.0 })
        .sum())
}

/// Defaults echoed in report metadata.
pub const KL_BINS: usize = 50;
pub const KL_EPS: f64 = 1e-10;

/// The four-metric separation row between correct and incorrect confidence
/// distributions: Cohen's d, Wasserstein-1, KL(correct || incorrect), AURC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub cohens_d: f64,
    pub wasserstein: f64,
    pub kl_divergence: f64,
    pub aurc: f64,
}

/// Separation diagnostics of one table; positive d means correct
/// predictions carry higher confidence.
pub fn separation_report(table: &ConfidenceTable) -> Result<SeparationReport> {
    let correct: Vec<f64> = table
        .entries
        .iter()
        .filter(|e| e.correct)
        .map(|e| e.confidence)
        .collect();
    let incorrect: Vec<f64> = table
        .entries
        .iter()
        .filter(|e| !e.correct)
        .map(|e| e.confidence)
        .collect();
    if correct.len() < 2 || incorrect.len() < 2 {
        return Err(Error::InvalidArgument(
            "separation_report needs >= 2 correct and >= 2 incorrect entries".into(),
        ));
    }
    Ok(SeparationReport {
        cohens_d: cohens_d(&correct, &incorrect)?,
        wasserstein: wasserstein1(&correct, &incorrect)?,
        kl_divergence: kl_divergence_hist(&correct, &incorrect, KL_BINS, KL_EPS)?,
        aurc: metrics::aurc(table)?,
    })
}
