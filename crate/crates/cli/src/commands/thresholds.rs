use std::path::PathBuf;

use clap::Args;
use serde_json::json;

use selconf::dataset::{split_eval, EvalSet};
use selconf::metrics::threshold_transfer;
use selconf::{Error, Result};

use crate::manifest::ManifestWriter;
use crate::methods::{load_records, method_table, parse_risks, Method};
use crate::percent::pct;

#[derive(Args)]
pub struct ThresholdsArgs {
    /// Validation records (threshold selection). Mutually exclusive with --data.
    #[arg(long, conflicts_with = "data", requires = "test")]
    pub val: Option<PathBuf>,
    /// Test records (threshold application).
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Single record file to split into validation and test parts.
    #[arg(long, conflicts_with = "val")]
    pub data: Option<PathBuf>,
    /// Validation fraction when splitting --data.
    #[arg(long, default_value_t = 0.2)]
    pub fraction_val_g: f64,
    /// Split seed when splitting --data.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub k_classes: Option<usize>,
    #[arg(long)]
    pub feat_dim: Option<usize>,
    #[arg(long, value_enum, default_value_t = Method::Msp)]
    pub method: Method,
    #[arg(long, default_value = "0.01,0.05,0.10,0.20")]
    pub risks: String,
    #[arg(long)]
    pub heads: Option<PathBuf>,
    #[arg(long)]
    pub vs_params: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn load_split(args: &ThresholdsArgs) -> Result<(EvalSet, EvalSet, Vec<PathBuf>)> {
    match (&args.val, &args.test, &args.data) {
        (Some(val), Some(test), None) => {
            let v = load_records(val, args.k_classes, args.feat_dim)?;
            let t = load_records(test, args.k_classes, args.feat_dim)?;
            Ok((v, t, vec![val.clone(), test.clone()]))
        }
        (None, None, Some(data)) => {
            let full = load_records(data, args.k_classes, args.feat_dim)?;
            let (v, t) = split_eval(&full, args.fraction_val_g, args.seed)?;
            Ok((v, t, vec![data.clone()]))
        }
        _ => Err(Error::InvalidArgument(
            "supply either --val and --test, or --data with --fraction-val-g".into(),
        )),
    }
}

pub fn run(args: ThresholdsArgs) -> Result<()> {
    let (val, test, inputs) = load_split(&args)?;
    let val_t = method_table(args.method, &val, args.heads.as_ref(), args.vs_params.as_ref())?;
    let test_t = method_table(args.method, &test, args.heads.as_ref(), args.vs_params.as_ref())?;
    let risks = parse_risks(&args.risks)?;

    let mut out = String::from("method,target_risk,gamma,delta_risk_pp,delta_coverage_pp,test_risk,test_coverage\n");
    for &r in &risks {
        let t = threshold_transfer(&val_t, &test_t, r)?;
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            args.method.name(),
            pct(r),
            t.gamma,
            pct(t.delta_risk),
            pct(t.delta_coverage),
            pct(t.test_risk),
            pct(t.test_coverage),
        ));
    }
    print!("{out}");
    if let Some(path) = &args.out {
        std::fs::write(path, &out)?;
        let mut manifest = ManifestWriter::new(
            "thresholds",
            json!({
                "method": args.method.name(),
                "risks": args.risks,
                "fraction_val_g": args.fraction_val_g,
            }),
        );
        for input in &inputs {
            manifest.input(input);
        }
        manifest.seed(args.seed).output(path);
        manifest.commit()?;
    }
    Ok(())
}
