use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use serde_json::json;

use selconf::acr::{acr_table, acr_train, AcrOptions};
use selconf::confidence::{doctor_table, mcd_table, msp_table, vs_table};
use selconf::dataset::{split_roles, EvalSet, Split};
use selconf::metrics::{aggregate_seeds, compute_report, oracle_metrics, MetricsReport};
use selconf::neural::{vs_train, EarlyStop, TrainConfig};
use selconf::synth::{generate, SynthConfig};
use selconf::{Error, Result};

use crate::manifest::ManifestWriter;
use crate::methods::{save_json, HeadsFile};
use crate::percent::pct;

#[derive(Args)]
pub struct PipelineArgs {
    /// Comma-separated generator seeds, one end-to-end run each.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0u64, 1, 2, 3, 4])]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 20_000)]
    pub n: usize,
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    #[arg(long, default_value_t = 32)]
    pub feat_dim: usize,
    #[arg(long, default_value_t = 1.5)]
    pub tau: f64,
    #[arg(long, default_value_t = 6.0)]
    pub margin_max: f64,
    #[arg(long, default_value_t = 0.8)]
    pub logit_noise: f64,
    /// Fraction of the generated set playing the held-out validation role.
    #[arg(long, default_value_t = 0.08)]
    pub fraction_val_g: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value = "0.01,0.05,0.10,0.20")]
    pub risks: String,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    /// Output directory; one subdirectory per seed plus the aggregate.
    #[arg(long)]
    pub out: PathBuf,
}

pub struct SeedOutcome {
    pub seed: u64,
    pub reports: Vec<MetricsReport>,
}

/// One end-to-end seed run. Roles: 60% backbone-training stand-in (unused
/// downstream), 20% selector training, `fraction_val_g` selector validation,
/// the rest held-out test.
pub fn run_seed(
    seed: u64,
    synth_config: &SynthConfig,
    train_config: &TrainConfig,
    fraction_val_g: f64,
    risks: &[f64],
    bins: usize,
    out_dir: Option<&Path>,
) -> Result<SeedOutcome> {
    let config = SynthConfig {
        seed,
        ..synth_config.clone()
    };
    let (full, _posterior) = generate(&config)?;
    let roles = [
        (Split::TrainF, 0.6),
        (Split::ValF, 0.2),
        (Split::ValG, fraction_val_g),
        (Split::Test, 0.2 - fraction_val_g),
    ];
    if fraction_val_g <= 0.0 || fraction_val_g >= 0.2 {
        return Err(Error::InvalidArgument(
            "fraction_val_g must lie in (0, 0.2) of the generated set".into(),
        ));
    }
    let parts = split_roles(&full, &roles, seed ^ 0xA5A5)?;
    let (val_f, val_g, test) = (&parts[1], &parts[2], &parts[3]);

    let train_config = TrainConfig {
        seed,
        ..train_config.clone()
    };
    let logit_set: Vec<(Vec<f64>, usize)> = val_f
        .records()
        .iter()
        .map(|r| (r.logits.clone(), r.label))
        .collect();
    let vs_config = TrainConfig {
        early_stop: EarlyStop::None,
        ..train_config.clone()
    };
    let vs = vs_train(&logit_set, &vs_config)?;
    let (heads, _trace) = acr_train(val_f, val_g, &train_config, &AcrOptions::default())?;

    let reports = eval_all(test, &vs, &heads, risks, bins)?;

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        save_json(&vs, &dir.join("vs.json"))?;
        let heads_file = HeadsFile {
            heads,
            train_config,
            train_set: format!("pipeline synth seed={seed} val_f"),
            val_set: format!("pipeline synth seed={seed} val_g"),
        };
        save_json(&heads_file, &dir.join("heads.json"))?;
        save_json(&reports, &dir.join("eval.json"))?;
        std::fs::write(dir.join("eval.csv"), super::eval::to_csv(&reports))?;
    }
    Ok(SeedOutcome { seed, reports })
}

fn eval_all(
    test: &EvalSet,
    vs: &selconf::confidence::VsParams,
    heads: &selconf::acr::AcrHeads,
    risks: &[f64],
    bins: usize,
) -> Result<Vec<MetricsReport>> {
    let mut reports = Vec::new();
    for table in [
        msp_table(test)?,
        mcd_table(test)?,
        vs_table(vs, test)?,
        doctor_table(test)?,
        acr_table(heads, test)?,
    ] {
        reports.push(compute_report(&table, risks, bins)?);
    }
    reports.push(oracle_metrics(&test.correctness_bits(), risks)?);
    Ok(reports)
}

/// Cap on concurrent seed runs: `SELCONF_THREADS`, else available cores.
fn seed_concurrency(n_seeds: usize) -> usize {
    let cap = std::env::var("SELCONF_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|p| p.get())
                .unwrap_or(1)
        });
    cap.min(n_seeds.max(1))
}

#[derive(Serialize)]
struct AggregateReport {
    seeds: Vec<u64>,
    per_method: BTreeMap<String, BTreeMap<String, MeanStd>>,
}

#[derive(Serialize)]
struct MeanStd {
    mean: f64,
    std: f64,
}

pub fn run(args: PipelineArgs) -> Result<()> {
    let risks = crate::methods::parse_risks(&args.risks)?;
    let synth_config = SynthConfig {
        n: args.n,
        k_classes: args.k,
        feat_dim: args.feat_dim,
        tau: args.tau,
        margin_max: args.margin_max,
        logit_noise: args.logit_noise,
        ..SynthConfig::default()
    };
    let train_config = TrainConfig {
        learning_rate: args.lr,
        epochs: args.epochs,
        batch_size: args.batch_size,
        ..TrainConfig::default()
    };
    std::fs::create_dir_all(&args.out)?;

    // Seeds run in waves capped by SELCONF_THREADS; outputs are keyed by
    // seed, so concurrency never changes results.
    let workers = seed_concurrency(args.seeds.len());
    let mut outcomes: Vec<SeedOutcome> = Vec::with_capacity(args.seeds.len());
    for wave in args.seeds.chunks(workers) {
        let mut wave_outcomes = std::thread::scope(|scope| {
            let handles: Vec<_> = wave
                .iter()
                .map(|&seed| {
                    let synth_config = &synth_config;
                    let train_config = &train_config;
                    let risks = &risks;
                    let dir = args.out.join(format!("seed{seed}"));
                    scope.spawn(move || {
                        run_seed(
                            seed,
                            synth_config,
                            train_config,
                            args.fraction_val_g,
                            risks,
                            args.bins,
                            Some(&dir),
                        )
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("seed worker panicked"))
                .collect::<Result<Vec<_>>>()
        })?;
        outcomes.append(&mut wave_outcomes);
    }

    // Aggregate per method across seeds.
    let mut per_method: BTreeMap<String, Vec<MetricsReport>> = BTreeMap::new();
    for outcome in &outcomes {
        for report in &outcome.reports {
            per_method
                .entry(report.method_name.clone())
                .or_default()
                .push(report.clone());
        }
    }
    let mut aggregate = AggregateReport {
        seeds: outcomes.iter().map(|o| o.seed).collect(),
        per_method: BTreeMap::new(),
    };
    let mut csv = String::from("method,metric,mean_pct,std_pct\n");
    for (method, reports) in &per_method {
        if reports.len() >= 2 {
            let stats = aggregate_seeds(reports)?;
            let mut row = BTreeMap::new();
            for (metric, (mean, std)) in &stats {
                csv.push_str(&format!("{method},{metric},{},{}\n", pct(*mean), pct(*std)));
                row.insert(metric.clone(), MeanStd { mean: *mean, std: *std });
            }
            aggregate.per_method.insert(method.clone(), row);
        }
    }
    save_json(&aggregate, &args.out.join("aggregate.json"))?;
    std::fs::write(args.out.join("aggregate.csv"), &csv)?;

    let mut manifest = ManifestWriter::new(
        "pipeline",
        json!({
            "synth": synth_config,
            "train": train_config,
            "fraction_val_g": args.fraction_val_g,
            "risks": args.risks,
            "bins": args.bins,
        }),
    );
    for &seed in &args.seeds {
        manifest.seed(seed);
    }
    manifest
        .output(&args.out.join("aggregate.json"))
        .output(&args.out.join("aggregate.csv"));
    manifest.commit()?;

    print!("{csv}");
    println!("wrote per-seed artifacts and aggregate to {}", args.out.display());
    Ok(())
}
