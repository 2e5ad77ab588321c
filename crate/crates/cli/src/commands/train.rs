use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde_json::json;

use selconf::acr::{acr_train, AcrMode, AcrOptions, FeatureBlock};
use selconf::neural::TrainConfig;
use selconf::{Error, Result};

use crate::manifest::ManifestWriter;
use crate::methods::{load_records, save_json, HeadsFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Full,
    NoRrh,
    NoCgh,
}

impl From<ModeArg> for AcrMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Full => AcrMode::Full,
            ModeArg::NoRrh => AcrMode::NoRrh,
            ModeArg::NoCgh => AcrMode::NoCgh,
        }
    }
}

#[derive(Args)]
pub struct TrainArgs {
    /// Selector-training records.
    #[arg(long)]
    pub data: PathBuf,
    /// Selector-validation records (early stopping on fused AURC).
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long)]
    pub k_classes: Option<usize>,
    #[arg(long)]
    pub feat_dim: Option<usize>,
    /// Comma-separated head input blocks.
    #[arg(long, default_value = "features,logits")]
    pub input: String,
    #[arg(long, value_enum, default_value_t = ModeArg::Full)]
    pub mode: ModeArg,
    /// Layer count for both heads (1 = linear).
    #[arg(long, default_value_t = 3)]
    pub depth: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn parse_input_spec(spec: &str) -> Result<Vec<FeatureBlock>> {
    spec.split(',')
        .map(|tok| match tok.trim() {
            "features" => Ok(FeatureBlock::FusedFeatures),
            "logits" => Ok(FeatureBlock::Logits),
            other => Err(Error::InvalidArgument(format!(
                "unknown input block {other:?} (expected features, logits)"
            ))),
        })
        .collect()
}

pub fn run(args: TrainArgs) -> Result<()> {
    let train = load_records(&args.data, args.k_classes, args.feat_dim)?;
    let val = load_records(&args.val, args.k_classes, args.feat_dim)?;
    let config = TrainConfig {
        learning_rate: args.lr,
        epochs: args.epochs,
        batch_size: args.batch_size,
        dropout_p: args.dropout,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let options = AcrOptions {
        input_spec: parse_input_spec(&args.input)?,
        mode: args.mode.into(),
        depth: args.depth,
    };
    let (heads, trace) = acr_train(&train, &val, &config, &options)?;
    let file = HeadsFile {
        heads,
        train_config: config.clone(),
        train_set: args.data.display().to_string(),
        val_set: args.val.display().to_string(),
    };
    save_json(&file, &args.out)?;

    let mut manifest = ManifestWriter::new(
        "train-heads",
        json!({
            "input": args.input,
            "mode": format!("{:?}", args.mode),
            "depth": args.depth,
            "train_config": config,
        }),
    );
    manifest
        .seed(args.seed)
        .input(&args.data)
        .input(&args.val)
        .output(&args.out);
    manifest.commit()?;
    println!(
        "trained heads ({} epochs, best epoch {:?}, final val AURC {}) -> {}",
        trace.train_loss.len(),
        trace.best_epoch,
        trace
            .val_aurc
            .last()
            .map(|v| format!("{v:.6}"))
            .unwrap_or_else(|| "n/a".into()),
        args.out.display()
    );
    Ok(())
}
