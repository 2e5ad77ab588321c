//! Desk-scale scored datasets from a known generative model with
//! controllable miscalibration — the stand-in for a frozen real backbone,
//! and the only place the true correctness posterior is observable.
//!
//! Each record draws a difficulty `u`, a true class with margins shrinking
//! in `u`, and a label from the true-logit softmax. The model's logits are
//! the true logits inflated by `1 + tau * u` plus noise: harder inputs get
//! sharper (more confident) predictive distributions while their accuracy
//! drops, which is exactly the miscalibration regime selective prediction
//! has to cope with. Features expose the true logits and a noisy difficulty
//! readout, so a learned head has residual signal the inflated logits hide.
//!
//! Generation shards by record index with a per-record seed derivation, so
//! parallel and sequential generation are byte-identical.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::confidence::softmax;
use crate::dataset::{argmax, ConfidenceTable, EvalSet, ScoredRecord, Split};
use crate::exec;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub k_classes: usize,
    pub feat_dim: usize,
    /// True-logit margin of the correct class at difficulty 0.
    pub margin_max: f64,
    /// Std of the per-class noise on the true logits.
    pub class_noise: f64,
    /// Overconfidence strength: model logits are scaled by `1 + tau * u`.
    pub tau: f64,
    /// Std of additive noise on the model logits.
    pub logit_noise: f64,
    /// Std of the noise on the difficulty feature.
    pub difficulty_feature_noise: f64,
    pub mc_passes: usize,
    /// Std of per-pass logit noise.
    pub mc_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 20_000,
            k_classes: 8,
            feat_dim: 32,
            margin_max: 6.0,
            class_noise: 0.5,
            tau: 1.5,
            logit_noise: 0.8,
            difficulty_feature_noise: 0.1,
            mc_passes: 10,
            mc_noise: 0.3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::InvalidArgument("n must be >= 1".into()));
        }
        if self.k_classes < 2 {
            return Err(Error::InvalidArgument("k_classes must be >= 2".into()));
        }
        // Features are [true logits (K), difficulty, distractors...].
        if self.feat_dim < self.k_classes + 1 {
            return Err(Error::InvalidArgument(format!(
                "feat_dim must be >= k_classes + 1 = {}",
                self.k_classes + 1
            )));
        }
        let noise = [
            self.margin_max,
            self.class_noise,
            self.tau,
            self.logit_noise,
            self.difficulty_feature_noise,
            self.mc_noise,
        ];
        if noise.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "scale/noise parameters must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// True correctness probabilities keyed by record id.
pub type PosteriorTable = HashMap<String, f64>;

fn record_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(index as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn generate_record(config: &SynthConfig, index: usize) -> (ScoredRecord, f64) {
    let mut rng = record_rng(config.seed, index);
    let k = config.k_classes;

    let difficulty: f64 = rng.random::<f64>();
    let true_class = rng.random_range(0..k);
    let margin = config.margin_max * (1.0 - difficulty);
    let true_logits: Vec<f64> = (0..k)
        .map(|c| {
            let base = if c == true_class { margin } else { 0.0 };
            base + config.class_noise * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let true_probs = softmax(&true_logits).expect("finite true logits");

    // Label from the generative posterior.
    let draw: f64 = rng.random::<f64>();
    let mut cumulative = 0.0;
    let mut label = k - 1;
    for (c, p) in true_probs.iter().enumerate() {
        cumulative += p;
        if draw < cumulative {
            label = c;
            break;
        }
    }

    // Model logits: multiplicative inflation makes hard samples overconfident.
    let inflation = 1.0 + config.tau * difficulty;
    let logits: Vec<f64> = true_logits
        .iter()
        .map(|z| inflation * z + config.logit_noise * rng.sample::<f64, _>(StandardNormal))
        .collect();

    let mut features = Vec::with_capacity(config.feat_dim);
    features.extend_from_slice(&true_logits);
    features.push(
        difficulty + config.difficulty_feature_noise * rng.sample::<f64, _>(StandardNormal),
    );
    while features.len() < config.feat_dim {
        features.push(rng.sample::<f64, _>(StandardNormal));
    }

    let mc_passes = (config.mc_passes > 0).then(|| {
        (0..config.mc_passes)
            .map(|_| {
                logits
                    .iter()
                    .map(|z| z + config.mc_noise * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect()
    });

    // True probability that the model's (fixed) argmax matches a fresh label
    // draw: the literal Bayes correctness posterior given the realized logits.
    let s_star = true_probs[argmax(&logits)];

    let record = ScoredRecord {
        id: format!("s{:07}", index),
        label,
        logits,
        features,
        mc_passes,
    };
    (record, s_star)
}

fn assemble(config: &SynthConfig, rows: Vec<(ScoredRecord, f64)>) -> Result<(EvalSet, PosteriorTable)> {
    let mut records = Vec::with_capacity(rows.len());
    let mut posterior = PosteriorTable::with_capacity(rows.len());
    for (record, s_star) in rows {
        posterior.insert(record.id.clone(), s_star);
        records.push(record);
    }
    let set = EvalSet::new(
        records,
        config.k_classes,
        config.feat_dim,
        Split::Test,
        format!("synth seed={} n={}", config.seed, config.n),
    )?;
    Ok((set, posterior))
}

/// Generate a dataset and its side table of true correctness posteriors.
/// Runs on rayon under the `parallel` feature; output is identical either way.
pub fn generate(config: &SynthConfig) -> Result<(EvalSet, PosteriorTable)> {
    config.validate()?;
    let rows = exec::map_indices(config.n, |i| generate_record(config, i));
    assemble(config, rows)
}

/// Sequential twin of [`generate`]; the determinism oracle and the serial
/// side of the benchmark comparison.
pub fn generate_serial(config: &SynthConfig) -> Result<(EvalSet, PosteriorTable)> {
    config.validate()?;
    let rows = exec::map_indices_serial(config.n, |i| generate_record(config, i));
    assemble(config, rows)
}

/// How far a confidence table sits from the true posterior:
/// `(E[(s - s*)^2], E[|s - s*|])`.
pub fn bayes_gap(table: &ConfidenceTable, posterior: &PosteriorTable) -> Result<(f64, f64)> {
    if table.entries.is_empty() {
        return Err(Error::EmptyInput("bayes_gap table".into()));
    }
    let mut mse = 0.0;
    let mut mae = 0.0;
    for e in &table.entries {
        let s_star = *posterior
            .get(&e.id)
            .ok_or_else(|| Error::IdMismatch(format!("no posterior for id {:?}", e.id)))?;
        mse += (e.confidence - s_star).powi(2);
        mae += (e.confidence - s_star).abs();
    }
    let n = table.entries.len() as f64;
    Ok((mse / n, mae / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::confidence::{mcd_table, msp_table};
    use crate::dataset::correctness;

    fn small(n: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            n,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(SynthConfig::default().validate().is_ok());
        assert!(SynthConfig {
            n: 0,
            ..SynthConfig::default()
        }
        .validate()
        .is_err());
        assert!(SynthConfig {
            feat_dim: 8,
            ..SynthConfig::default()
        }
        .validate()
        .is_err());
        assert!(SynthConfig {
            tau: -0.1,
            ..SynthConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn generation_is_deterministic_and_shard_independent() {
        let config = small(300, 17);
        let (a, pa) = generate(&config).unwrap();
        let (b, pb) = generate(&config).unwrap();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        let (s, ps) = generate_serial(&config).unwrap();
        assert_eq!(a, s);
        assert_eq!(pa, ps);

        let mut buf_a = Vec::new();
        let mut buf_s = Vec::new();
        crate::dataset::serialize_records(&a, &mut buf_a).unwrap();
        crate::dataset::serialize_records(&s, &mut buf_s).unwrap();
        assert_eq!(buf_a, buf_s);
    }

    #[test]
    fn output_passes_dataset_validation_round_trip() {
        let (set, _) = generate(&small(10_000, 3)).unwrap();
        let mut buf = Vec::new();
        crate::dataset::serialize_records(&set, &mut buf).unwrap();
        let parsed =
            crate::dataset::parse_records_auto(buf.as_slice(), Split::Test, set.seed_provenance.clone())
                .unwrap();
        assert_eq!(parsed.records(), set.records());
    }

    #[test]
    fn accuracy_decreases_with_difficulty() {
        let (set, _) = generate(&small(8000, 5)).unwrap();
        // The difficulty readout is feature K (noisy but monotone enough for
        // quartile bins at this n).
        let k = set.k_classes;
        let mut by_quartile = [(0usize, 0usize); 4];
        for r in set.records() {
            let u = r.features[k].clamp(0.0, 1.0 - 1e-9);
            let q = (u * 4.0).floor() as usize;
            by_quartile[q].0 += 1;
            if correctness(r) {
                by_quartile[q].1 += 1;
            }
        }
        let acc: Vec<f64> = by_quartile
            .iter()
            .map(|&(n, c)| c as f64 / n as f64)
            .collect();
        for w in acc.windows(2) {
            assert!(w[1] <= w[0] + 0.02, "quartile accuracies {acc:?}");
        }
        assert!(acc[0] > acc[3] + 0.2, "quartile accuracies {acc:?}");
    }

    #[test]
    fn zero_mc_noise_makes_mcd_equal_msp() {
        let config = SynthConfig {
            mc_noise: 0.0,
            ..small(400, 7)
        };
        let (set, _) = generate(&config).unwrap();
        let msp = msp_table(&set).unwrap();
        let mcd = mcd_table(&set).unwrap();
        for (a, b) in msp.entries.iter().zip(&mcd.entries) {
            assert!((a.confidence - b.confidence).abs() < 1e-12);
        }
    }

    #[test]
    fn calibrated_regime_msp_equals_posterior() {
        // tau = 0, logit_noise = 0: model logits are the true logits and MSP
        // is exactly the correctness posterior.
        let config = SynthConfig {
            tau: 0.0,
            logit_noise: 0.0,
            ..small(2000, 11)
        };
        let (set, posterior) = generate(&config).unwrap();
        let msp = msp_table(&set).unwrap();
        let (mse, mae) = bayes_gap(&msp, &posterior).unwrap();
        assert!(mse < 1e-24, "mse {mse}");
        assert!(mae < 1e-12, "mae {mae}");
    }

    #[test]
    fn bayes_gap_zero_for_posterior_itself() {
        let (set, posterior) = generate(&small(200, 13)).unwrap();
        let entries = set
            .records()
            .iter()
            .map(|r| crate::dataset::TableEntry {
                id: r.id.clone(),
                confidence: posterior[&r.id],
                correct: correctness(r),
            })
            .collect();
        let table = ConfidenceTable::new(entries, "s_star").unwrap();
        let (mse, mae) = bayes_gap(&table, &posterior).unwrap();
        assert_eq!((mse, mae), (0.0, 0.0));
    }
}
