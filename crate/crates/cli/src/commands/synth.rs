use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::Args;

use selconf::dataset::serialize_records;
use selconf::synth::{generate, SynthConfig};
use selconf::Result;

use crate::manifest::ManifestWriter;

#[derive(Args)]
pub struct SynthArgs {
    /// Number of records.
    #[arg(long, default_value_t = 20_000)]
    pub n: usize,
    /// Answer-space size.
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    /// Feature dimensionality (must be >= k + 1).
    #[arg(long, default_value_t = 32)]
    pub feat_dim: usize,
    /// Overconfidence strength; 0 gives the calibrated regime.
    #[arg(long, default_value_t = 1.5)]
    pub tau: f64,
    #[arg(long, default_value_t = 6.0)]
    pub margin_max: f64,
    #[arg(long, default_value_t = 0.5)]
    pub class_noise: f64,
    #[arg(long, default_value_t = 0.8)]
    pub logit_noise: f64,
    #[arg(long, default_value_t = 0.1)]
    pub difficulty_noise: f64,
    #[arg(long, default_value_t = 10)]
    pub mc_passes: usize,
    #[arg(long, default_value_t = 0.3)]
    pub mc_noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output record file; the true-posterior side file lands next to it
    /// with an `.s_star.csv` suffix.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn config_of(args: &SynthArgs) -> SynthConfig {
    SynthConfig {
        n: args.n,
        k_classes: args.k,
        feat_dim: args.feat_dim,
        margin_max: args.margin_max,
        class_noise: args.class_noise,
        tau: args.tau,
        logit_noise: args.logit_noise,
        difficulty_feature_noise: args.difficulty_noise,
        mc_passes: args.mc_passes,
        mc_noise: args.mc_noise,
        seed: args.seed,
    }
}

pub fn s_star_path(out: &std::path::Path) -> PathBuf {
    let mut p = out.to_path_buf();
    p.set_extension("s_star.csv");
    p
}

pub fn run(args: SynthArgs) -> Result<()> {
    let config = config_of(&args);
    let (set, posterior) = generate(&config)?;

    let mut writer = BufWriter::new(File::create(&args.out)?);
    serialize_records(&set, &mut writer)?;
    writer.flush()?;

    let side = s_star_path(&args.out);
    let mut csv = BufWriter::new(File::create(&side)?);
    writeln!(csv, "id,s_star")?;
    for record in set.records() {
        writeln!(csv, "{},{}", record.id, posterior[&record.id])?;
    }
    csv.flush()?;

    let mut manifest = ManifestWriter::new(
        "synth",
        serde_json::to_value(&config).map_err(json_err)?,
    );
    manifest.seed(args.seed).output(&args.out).output(&side);
    manifest.commit()?;

    println!(
        "wrote {} records (k={}, d={}, accuracy {:.4}) to {}",
        set.len(),
        set.k_classes,
        set.feat_dim,
        set.accuracy(),
        args.out.display()
    );
    Ok(())
}

fn json_err(e: serde_json::Error) -> selconf::Error {
    selconf::Error::Io(std::io::Error::other(e))
}
