use std::path::PathBuf;

use clap::Args;
use serde_json::json;

use selconf::neural::{vs_train, EarlyStop, TrainConfig};
use selconf::Result;

use crate::manifest::ManifestWriter;
use crate::methods::{load_records, save_json};

#[derive(Args)]
pub struct CalibrateArgs {
    /// Training records (selector-training split).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub k_classes: Option<usize>,
    #[arg(long)]
    pub feat_dim: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: CalibrateArgs) -> Result<()> {
    let set = load_records(&args.data, args.k_classes, args.feat_dim)?;
    let logit_set: Vec<(Vec<f64>, usize)> = set
        .records()
        .iter()
        .map(|r| (r.logits.clone(), r.label))
        .collect();
    let config = TrainConfig {
        learning_rate: args.lr,
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed: args.seed,
        early_stop: EarlyStop::None,
        ..TrainConfig::default()
    };
    let params = vs_train(&logit_set, &config)?;
    save_json(&params, &args.out)?;

    let mut manifest = ManifestWriter::new(
        "calibrate-vs",
        json!({
            "data": args.data.display().to_string(),
            "lr": args.lr,
            "epochs": args.epochs,
            "batch_size": args.batch_size,
        }),
    );
    manifest.seed(args.seed).input(&args.data).output(&args.out);
    manifest.commit()?;
    println!("wrote vector-scaling parameters to {}", args.out.display());
    Ok(())
}
