//! Independent reference implementations used to check the library from the
//! outside. Everything here recounts from raw entries; none of it calls the
//! sweep path it verifies.

use selconf::dataset::{ConfidenceTable, TableEntry};
use selconf::metrics::ACCEPT_ALL_GAMMA;

pub fn table(pairs: &[(f64, bool)]) -> ConfidenceTable {
    let entries = pairs
        .iter()
        .enumerate()
        .map(|(i, &(confidence, correct))| TableEntry {
            id: format!("r{i}"),
            confidence,
            correct,
        })
        .collect();
    ConfidenceTable::new(entries, "test").unwrap()
}

/// Every realizable operating point, found by trying one threshold per
/// distinct confidence value plus the accept-all threshold, counting
/// acceptance directly from the entries.
pub fn brute_force_points(t: &ConfidenceTable) -> Vec<(f64, f64, f64)> {
    let mut gammas: Vec<f64> = t.entries.iter().map(|e| e.confidence).collect();
    gammas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    gammas.dedup();
    gammas.push(ACCEPT_ALL_GAMMA);

    let n = t.entries.len();
    let mut points = Vec::new();
    for gamma in gammas {
        let mut accepted = 0usize;
        let mut errors = 0usize;
        for e in &t.entries {
            if e.confidence > gamma {
                accepted += 1;
                if !e.correct {
                    errors += 1;
                }
            }
        }
        if accepted == 0 {
            continue;
        }
        points.push((
            gamma,
            accepted as f64 / n as f64,
            errors as f64 / accepted as f64,
        ));
    }
    points.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    points.dedup_by(|a, b| a.1 == b.1);
    points
}

/// Step integral over the enumerated points.
pub fn brute_force_aurc(t: &ConfidenceTable) -> f64 {
    let mut area = 0.0;
    let mut prev = 0.0;
    for (_, coverage, risk) in brute_force_points(t) {
        area += risk * (coverage - prev);
        prev = coverage;
    }
    area
}

/// Max coverage over enumerated points with risk at or below the target.
pub fn brute_force_c_at_r(t: &ConfidenceTable, target_risk: f64) -> f64 {
    brute_force_points(t)
        .into_iter()
        .filter(|&(_, _, risk)| risk <= target_risk)
        .map(|(_, coverage, _)| coverage)
        .fold(0.0, f64::max)
}
