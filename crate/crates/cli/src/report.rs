use std::path::PathBuf;

use clap::Args;

use crate::failure::{CmdResult, Failure};
use crate::io::{open, write_text};
use crate::svg::line_plot;

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Loss CSV written by `train`.
    #[arg(long)]
    pub loss_csv: PathBuf,
    /// Destination SVG.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "training loss")]
    pub title: String,
}

pub fn loss_svg(points: &[(f64, f64)]) -> String {
    line_plot("training loss", "step", "loss (nats)", points)
}

pub fn run(args: ReportArgs) -> CmdResult {
    let path = &args.loss_csv;
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let header = rdr.headers().map_err(|e| Failure::at(path, e))?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Failure::at(path, format!("missing column {name:?}")))
    };
    let (step_col, loss_col) = (col("step")?, col("loss_nats")?);
    let mut points = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Failure::at(path, e))?;
        let field = |c: usize| -> CmdResult<f64> {
            rec.get(c)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Failure::at(path, format!("row {}: bad number in column {c}", i + 2)))
        };
        points.push((field(step_col)?, field(loss_col)?));
    }
    if points.is_empty() {
        return Err(Failure::at(path, "no rows"));
    }
    write_text(&args.out, &line_plot(&args.title, "step", "loss (nats)", &points))?;
    println!("plotted {} points to {}", points.len(), args.out.display());
    Ok(())
}
