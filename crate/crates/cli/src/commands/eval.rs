use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde_json::json;

use selconf::metrics::{compute_report, oracle_metrics, MetricsReport};
use selconf::Result;

use crate::manifest::ManifestWriter;
use crate::methods::{load_records, method_table, parse_risks, Method};
use crate::percent::{pct, risk_label};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Answer-space size when the file has no header line.
    #[arg(long)]
    pub k_classes: Option<usize>,
    #[arg(long)]
    pub feat_dim: Option<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![Method::Msp])]
    pub methods: Vec<Method>,
    #[arg(long, default_value = "0.01,0.05,0.10,0.20")]
    pub risks: String,
    /// Calibration-error bin count.
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    #[arg(long)]
    pub heads: Option<PathBuf>,
    #[arg(long)]
    pub vs_params: Option<PathBuf>,
    /// Write the table here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

pub fn report_rows(args: &EvalArgs) -> Result<Vec<MetricsReport>> {
    let set = load_records(&args.data, args.k_classes, args.feat_dim)?;
    let risks = parse_risks(&args.risks)?;
    let mut rows = Vec::new();
    for &method in &args.methods {
        let report = if method == Method::Oracle {
            oracle_metrics(&set.correctness_bits(), &risks)?
        } else {
            let table = method_table(method, &set, args.heads.as_ref(), args.vs_params.as_ref())?;
            compute_report(&table, &risks, args.bins)?
        };
        rows.push(report);
    }
    // The oracle row is always appended as the reference bound.
    if !args.methods.contains(&Method::Oracle) {
        rows.push(oracle_metrics(&set.correctness_bits(), &risks)?);
    }
    Ok(rows)
}

pub fn to_csv(rows: &[MetricsReport]) -> String {
    let mut out = String::from("method");
    if let Some(first) = rows.first() {
        for c in &first.c_at_r {
            out.push(',');
            out.push_str(&risk_label(c.target_risk));
        }
    }
    out.push_str(",aurc,ece,accuracy,n\n");
    for row in rows {
        out.push_str(&row.method_name);
        for c in &row.c_at_r {
            out.push(',');
            out.push_str(&pct(c.coverage));
        }
        out.push_str(&format!(
            ",{},{},{},{}\n",
            pct(row.aurc),
            pct(row.ece),
            pct(row.accuracy),
            row.n
        ));
    }
    out
}

pub fn run(args: EvalArgs) -> Result<()> {
    let rows = report_rows(&args)?;
    let rendered = match args.format {
        Format::Csv => to_csv(&rows),
        Format::Json => serde_json::to_string_pretty(&json!({ "rows": rows }))
            .map_err(|e| selconf::Error::Io(std::io::Error::other(e)))?
            + "\n",
    };
    print!("{rendered}");
    if let Some(out) = &args.out {
        std::fs::write(out, &rendered)?;
        let mut manifest = ManifestWriter::new(
            "eval",
            json!({
                "data": args.data.display().to_string(),
                "methods": args.methods.iter().map(|m| m.name()).collect::<Vec<_>>(),
                "risks": args.risks,
                "bins": args.bins,
            }),
        );
        manifest.input(&args.data).output(out);
        manifest.commit()?;
    }
    Ok(())
}
