use std::collections::HashMap;
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use serde_json::json;

use selconf::acr::{acr_table, alpha_stats, rrh_table, AlphaStats};
use selconf::analysis::{
    alpha_star, best_fixed_lambda, brier_decomposition_check, error_moments, fusion_condition,
    j_alpha, separation_report, BestFixedLambda, ErrorMoments, SeparationReport,
};
use selconf::confidence::msp_table;
use selconf::synth::bayes_gap;
use selconf::{Error, Result};

use crate::manifest::ManifestWriter;
use crate::methods::{load_heads, load_records};

#[derive(Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub k_classes: Option<usize>,
    #[arg(long)]
    pub feat_dim: Option<usize>,
    #[arg(long)]
    pub heads: PathBuf,
    /// Optional `id,s_star` side file for posterior-referenced checks.
    #[arg(long)]
    pub s_star: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct VerifyReport {
    n: usize,
    accuracy: f64,
    moments: ErrorMoments,
    alpha_star: Option<f64>,
    fusion_condition: bool,
    fusion_margin: f64,
    j_at_zero: f64,
    j_at_one: f64,
    j_at_alpha_star: Option<f64>,
    best_fixed: BestFixedLambda,
    separation_msp: SeparationReport,
    separation_acr: SeparationReport,
    alpha: AlphaStats,
    /// Present only when a posterior side file is supplied.
    brier_residual_msp: Option<f64>,
    brier_residual_acr: Option<f64>,
    bayes_gap_msp: Option<(f64, f64)>,
    bayes_gap_acr: Option<(f64, f64)>,
}

fn load_s_star(path: &PathBuf) -> Result<HashMap<String, f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut map = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 && line.trim() == "id,s_star" {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let (id, value) = line.split_once(',').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: format!("{}: expected id,s_star", path.display()),
        })?;
        let value: f64 = value.trim().parse().map_err(|e| Error::Parse {
            line: i + 1,
            msg: format!("{}: {e}", path.display()),
        })?;
        map.insert(id.trim().to_string(), value);
    }
    Ok(map)
}

pub fn run(args: VerifyArgs) -> Result<()> {
    let set = load_records(&args.data, args.k_classes, args.feat_dim)?;
    let heads = load_heads(&args.heads)?.heads;

    let msp_t = msp_table(&set)?;
    let acr_t = acr_table(&heads, &set)?;
    let rrh_t = rrh_table(&heads, &set)?;

    let moments = error_moments(&msp_t, &rrh_t)?;
    let a_star = alpha_star(&moments).ok();
    let (cond, margin) = fusion_condition(&moments);
    let posterior = args.s_star.as_ref().map(load_s_star).transpose()?;

    let report = VerifyReport {
        n: set.len(),
        accuracy: set.accuracy(),
        moments,
        alpha_star: a_star,
        fusion_condition: cond,
        fusion_margin: margin,
        j_at_zero: j_alpha(&moments, 0.0)?,
        j_at_one: j_alpha(&moments, 1.0)?,
        j_at_alpha_star: a_star
            .map(|a| j_alpha(&moments, a.clamp(0.0, 1.0)))
            .transpose()?,
        best_fixed: best_fixed_lambda(&msp_t, &rrh_t, Some(&acr_t))?,
        separation_msp: separation_report(&msp_t)?,
        separation_acr: separation_report(&acr_t)?,
        alpha: alpha_stats(&heads, &set)?,
        brier_residual_msp: posterior
            .as_ref()
            .map(|p| brier_decomposition_check(&msp_t, p))
            .transpose()?,
        brier_residual_acr: posterior
            .as_ref()
            .map(|p| brier_decomposition_check(&acr_t, p))
            .transpose()?,
        bayes_gap_msp: posterior
            .as_ref()
            .map(|p| bayes_gap(&msp_t, p))
            .transpose()?,
        bayes_gap_acr: posterior
            .as_ref()
            .map(|p| bayes_gap(&acr_t, p))
            .transpose()?,
    };

    let rendered = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?
        + "\n";
    print!("{rendered}");
    if let Some(out) = &args.out {
        std::fs::write(out, &rendered)?;
        let mut manifest = ManifestWriter::new(
            "verify",
            json!({
                "data": args.data.display().to_string(),
                "heads": args.heads.display().to_string(),
            }),
        );
        manifest.input(&args.data).input(&args.heads).output(out);
        manifest.commit()?;
    }
    Ok(())
}
