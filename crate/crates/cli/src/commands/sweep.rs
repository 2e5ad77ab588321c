use std::path::PathBuf;

use clap::Args;
use serde_json::json;

use selconf::metrics::rc_curve;
use selconf::Result;

use crate::manifest::ManifestWriter;
use crate::methods::{load_records, method_table, Method};

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub k_classes: Option<usize>,
    #[arg(long)]
    pub feat_dim: Option<usize>,
    #[arg(long, value_enum, default_value_t = Method::Msp)]
    pub method: Method,
    #[arg(long)]
    pub heads: Option<PathBuf>,
    #[arg(long)]
    pub vs_params: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: SweepArgs) -> Result<()> {
    let set = load_records(&args.data, args.k_classes, args.feat_dim)?;
    let table = method_table(args.method, &set, args.heads.as_ref(), args.vs_params.as_ref())?;
    let curve = rc_curve(&table)?;

    // Full precision: eval rows must be reproducible from this file.
    let mut out = String::from("gamma,coverage,risk\n");
    for p in &curve.points {
        out.push_str(&format!("{},{},{}\n", p.gamma, p.coverage, p.risk));
    }
    std::fs::write(&args.out, &out)?;

    let mut manifest = ManifestWriter::new(
        "sweep",
        json!({
            "data": args.data.display().to_string(),
            "method": args.method.name(),
        }),
    );
    manifest.input(&args.data).output(&args.out);
    manifest.commit()?;
    println!(
        "wrote {} curve points for {} to {}",
        curve.points.len(),
        args.method.name(),
        args.out.display()
    );
    Ok(())
}
