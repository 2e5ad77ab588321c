//! Selective-prediction evaluation: coverage, risk, risk-coverage curves,
//! coverage at target risk, AURC, calibration error, oracle bounds, and
//! threshold selection/transfer.
//!
//! Acceptance uses the strict rule `accept iff confidence > gamma`, so tied
//! confidences always enter or leave together. The risk-coverage curve is the
//! tie-grouped threshold sweep: one point per distinct confidence value, and
//! the area under it is a step integral over those points. When all
//! confidences are distinct this reduces to the usual mean of prefix risks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::ConfidenceTable;
use crate::{Error, Result};

/// Threshold that accepts every record (confidences live in [0,1]).
pub const ACCEPT_ALL_GAMMA: f64 = -1.0;

/// One operating point of a risk-coverage curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RcPoint {
    /// Threshold realizing this point under the strict `> gamma` rule.
    pub gamma: f64,
    pub coverage: f64,
    pub risk: f64,
}

/// Ordered operating points of a confidence table: gammas strictly
/// decreasing, coverages strictly increasing, final point at coverage 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcCurve {
    pub points: Vec<RcPoint>,
}

/// Coverage achieved at one target risk, with the realizing threshold when
/// any operating point is feasible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageAtRisk {
    pub target_risk: f64,
    pub coverage: f64,
    pub gamma: Option<f64>,
}

/// The table-shaped summary row for one method. All values in [0,1];
/// rendering as percent is the caller's concern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method_name: String,
    pub c_at_r: Vec<CoverageAtRisk>,
    pub aurc: f64,
    pub ece: f64,
    pub n: usize,
    pub accuracy: f64,
}

fn require_non_empty(table: &ConfidenceTable) -> Result<()> {
    if table.entries.is_empty() {
        return Err(Error::EmptyInput(format!(
            "confidence table {:?}",
            table.method_name
        )));
    }
    Ok(())
}

/// Coverage and risk at a threshold. Risk is `None` when nothing is accepted.
pub fn coverage_risk_at(table: &ConfidenceTable, gamma: f64) -> Result<(f64, Option<f64>)> {
    require_non_empty(table)?;
    let accepted = table.entries.iter().filter(|e| e.confidence > gamma);
    let (mut n_acc, mut n_err) = (0usize, 0usize);
    for e in accepted {
        n_acc += 1;
        if !e.correct {
            n_err += 1;
        }
    }
    let n = table.entries.len();
    let coverage = n_acc as f64 / n as f64;
    let risk = (n_acc > 0).then(|| n_err as f64 / n_acc as f64);
    Ok((coverage, risk))
}

/// Tie-grouped descending threshold sweep.
///
/// Point `i` accepts every entry with confidence >= the i-th largest distinct
/// value; its gamma is the next distinct value down (records with tied
/// confidence cannot be separated by any threshold). The final point uses
/// [`ACCEPT_ALL_GAMMA`].
pub fn rc_curve(table: &ConfidenceTable) -> Result<RcCurve> {
    require_non_empty(table)?;
    let n = table.entries.len();
    let mut sorted: Vec<(f64, bool)> = table
        .entries
        .iter()
        .map(|e| (e.confidence, e.correct))
        .collect();
    sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("confidences are finite"));

    let mut points = Vec::new();
    let (mut n_acc, mut n_err) = (0usize, 0usize);
    let mut i = 0;
    while i < n {
        let value = sorted[i].0;
        while i < n && sorted[i].0 == value {
            n_acc += 1;
            if !sorted[i].1 {
                n_err += 1;
            }
            i += 1;
        }
        let gamma = if i < n { sorted[i].0 } else { ACCEPT_ALL_GAMMA };
        points.push(RcPoint {
            gamma,
            coverage: n_acc as f64 / n as f64,
            risk: n_err as f64 / n_acc as f64,
        });
    }
    Ok(RcCurve { points })
}

/// Area under the risk-coverage curve: the step integral
/// `sum_i risk_i * (coverage_i - coverage_{i-1})` with `coverage_0 = 0`.
pub fn aurc(table: &ConfidenceTable) -> Result<f64> {
    Ok(aurc_of_curve(&rc_curve(table)?))
}

pub fn aurc_of_curve(curve: &RcCurve) -> f64 {
    let mut area = 0.0;
    let mut prev_cov = 0.0;
    for p in &curve.points {
        area += p.risk * (p.coverage - prev_cov);
        prev_cov = p.coverage;
    }
    area
}

/// Maximum coverage over all operating points with risk at or below the
/// target, and the threshold achieving it. `(0, None)` when no point
/// qualifies. The maximum ranges over the whole curve, not prefixes only: a
/// higher-coverage point may re-enter feasibility.
pub fn c_at_r(table: &ConfidenceTable, target_risk: f64) -> Result<CoverageAtRisk> {
    if !(0.0..1.0).contains(&target_risk) {
        return Err(Error::InvalidArgument(format!(
            "target risk must lie in [0,1), got {target_risk}"
        )));
    }
    let curve = rc_curve(table)?;
    Ok(c_at_r_of_curve(&curve, target_risk))
}

pub fn c_at_r_of_curve(curve: &RcCurve, target_risk: f64) -> CoverageAtRisk {
    let mut best: Option<&RcPoint> = None;
    for p in &curve.points {
        if p.risk <= target_risk && best.is_none_or(|b| p.coverage > b.coverage) {
            best = Some(p);
        }
    }
    match best {
        Some(p) => CoverageAtRisk {
            target_risk,
            coverage: p.coverage,
            gamma: Some(p.gamma),
        },
        None => CoverageAtRisk {
            target_risk,
            coverage: 0.0,
            gamma: None,
        },
    }
}

/// Index of the equal-width bin containing `confidence`: bin `j` (0-based)
/// covers `(j/m, (j+1)/m]`, with bin 0 additionally including 0.
///
/// Boundaries are compared against `j/m` directly rather than via
/// `confidence * m`, which would misplace exact boundary values like 0.7.
fn bin_index(confidence: f64, m_bins: usize) -> usize {
    if confidence <= 0.0 {
        return 0;
    }
    for j in 1..=m_bins {
        if confidence <= j as f64 / m_bins as f64 {
            return j - 1;
        }
    }
    m_bins - 1
}

/// Expected calibration error over `m_bins` equal-width bins of [0,1]:
/// `sum_j (|B_j|/N) * |acc(B_j) - conf(B_j)|`, empty bins contributing 0.
pub fn ece(table: &ConfidenceTable, m_bins: usize) -> Result<f64> {
    require_non_empty(table)?;
    if m_bins < 1 {
        return Err(Error::InvalidArgument("m_bins must be >= 1".into()));
    }
    let mut count = vec![0usize; m_bins];
    let mut conf_sum = vec![0.0f64; m_bins];
    let mut correct = vec![0usize; m_bins];
    for e in &table.entries {
        let j = bin_index(e.confidence, m_bins);
        count[j] += 1;
        conf_sum[j] += e.confidence;
        if e.correct {
            correct[j] += 1;
        }
    }
    let n = table.entries.len() as f64;
    let mut total = 0.0;
    for j in 0..m_bins {
        if count[j] == 0 {
            continue;
        }
        let acc = correct[j] as f64 / count[j] as f64;
        let conf = conf_sum[j] / count[j] as f64;
        total += count[j] as f64 / n * (acc - conf).abs();
    }
    Ok(total)
}

/// Metrics of the oracle selector (confidence = correctness indicator).
///
/// The oracle may cut anywhere in the accept-correct-first ordering, so its
/// AURC is the mean of prefix risks of that ordering and its coverage at
/// target risk `r` is `min(1, floor(a*N / (1-r)) / N)` where `a` is accuracy.
/// This is the lower bound every confidence function is compared against.
pub fn oracle_metrics(correctness: &[bool], targets: &[f64]) -> Result<MetricsReport> {
    if correctness.is_empty() {
        return Err(Error::EmptyInput("correctness bits".into()));
    }
    let n = correctness.len();
    let n_correct = correctness.iter().filter(|&&c| c).count();
    let accuracy = n_correct as f64 / n as f64;

    let mut area = 0.0;
    for i in 1..=n {
        let errors = i.saturating_sub(n_correct);
        area += errors as f64 / i as f64;
    }
    let aurc = area / n as f64;

    let mut c_at_r = Vec::with_capacity(targets.len());
    for &r in targets {
        if !(0.0..1.0).contains(&r) {
            return Err(Error::InvalidArgument(format!(
                "target risk must lie in [0,1), got {r}"
            )));
        }
        let max_accept = ((n_correct as f64 / (1.0 - r)).floor() as usize).min(n);
        c_at_r.push(CoverageAtRisk {
            target_risk: r,
            coverage: max_accept as f64 / n as f64,
            gamma: None,
        });
    }

    Ok(MetricsReport {
        method_name: "oracle".into(),
        c_at_r,
        aurc,
        ece: 0.0,
        n,
        accuracy,
    })
}

/// Build the full report row for one confidence table.
pub fn compute_report(
    table: &ConfidenceTable,
    targets: &[f64],
    ece_bins: usize,
) -> Result<MetricsReport> {
    require_non_empty(table)?;
    let curve = rc_curve(table)?;
    let mut rows = Vec::with_capacity(targets.len());
    for &r in targets {
        if !(0.0..1.0).contains(&r) {
            return Err(Error::InvalidArgument(format!(
                "target risk must lie in [0,1), got {r}"
            )));
        }
        rows.push(c_at_r_of_curve(&curve, r));
    }
    Ok(MetricsReport {
        method_name: table.method_name.clone(),
        c_at_r: rows,
        aurc: aurc_of_curve(&curve),
        ece: ece(table, ece_bins)?,
        n: table.entries.len(),
        accuracy: table.accuracy(),
    })
}

/// Threshold achieving the best coverage at `target_risk` on a validation
/// table; `None` when no operating point is feasible.
pub fn select_threshold(val: &ConfidenceTable, target_risk: f64) -> Result<Option<f64>> {
    Ok(c_at_r(val, target_risk)?.gamma)
}

/// Outcome of carrying a validation-selected threshold to a test table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTransfer {
    pub gamma: f64,
    /// Realized test risk minus the target risk.
    pub delta_risk: f64,
    /// Test coverage at the carried threshold minus the best test coverage at
    /// the same target.
    pub delta_coverage: f64,
    pub test_coverage: f64,
    pub test_risk: f64,
}

/// Select a threshold on `val` for `target_risk`, apply it to `test`, and
/// report how far realized risk and coverage land from the ideal.
pub fn threshold_transfer(
    val: &ConfidenceTable,
    test: &ConfidenceTable,
    target_risk: f64,
) -> Result<ThresholdTransfer> {
    let gamma = select_threshold(val, target_risk)?.ok_or_else(|| {
        Error::Infeasible(format!(
            "no threshold on {:?} meets target risk {target_risk}",
            val.method_name
        ))
    })?;
    let (test_coverage, test_risk) = coverage_risk_at(test, gamma)?;
    let test_risk = test_risk.ok_or_else(|| {
        Error::Infeasible(format!(
            "carried threshold {gamma} accepts nothing on {:?}",
            test.method_name
        ))
    })?;
    let ideal = c_at_r(test, target_risk)?;
    Ok(ThresholdTransfer {
        gamma,
        delta_risk: test_risk - target_risk,
        delta_coverage: test_coverage - ideal.coverage,
        test_coverage,
        test_risk,
    })
}

/// Per-metric sample mean and Bessel-corrected standard deviation across
/// seed-level reports of one method. Keys are `aurc`, `ece`, `accuracy`, and
/// `c@<target>` per target risk.
pub fn aggregate_seeds(reports: &[MetricsReport]) -> Result<BTreeMap<String, (f64, f64)>> {
    if reports.len() < 2 {
        return Err(Error::InvalidArgument(
            "aggregation needs >= 2 reports".into(),
        ));
    }
    let method = &reports[0].method_name;
    if reports.iter().any(|r| &r.method_name != method) {
        return Err(Error::InvalidArgument(
            "cannot aggregate reports of mixed methods".into(),
        ));
    }
    let mut series: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for report in reports {
        series.entry("aurc".into()).or_default().push(report.aurc);
        series.entry("ece".into()).or_default().push(report.ece);
        series
            .entry("accuracy".into())
            .or_default()
            .push(report.accuracy);
        for row in &report.c_at_r {
            series
                .entry(format!("c@{}", row.target_risk))
                .or_default()
                .push(row.coverage);
        }
    }
    let n = reports.len() as f64;
    let mut out = BTreeMap::new();
    for (key, values) in series {
        if values.len() != reports.len() {
            return Err(Error::InvalidArgument(format!(
                "metric {key} missing from some reports"
            )));
        }
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        out.insert(key, (mean, var.sqrt()));
    }
    Ok(out)
}
