use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;

use cvl_core::{batch_loss, batch_loss_grad, DistanceMatrix};

use crate::commands::{content_lines, read_text, write_text};
use crate::error::{CliError, CliResult};

#[derive(Args)]
pub struct LossArgs {
    /// Square distance matrix as CSV: row i holds d(query_i, db_j).
    #[arg(long, value_name = "FILE")]
    pub distances: PathBuf,

    /// Sharpness of the soft margin.
    #[arg(long, default_value_t = 10.0)]
    pub alpha: f64,

    /// Optionally write the gradient matrix as CSV.
    #[arg(long, value_name = "FILE")]
    pub grad_out: Option<PathBuf>,
}

pub fn run(args: LossArgs) -> CliResult<()> {
    let matrix = read_matrix(&args.distances)?;
    let loss = batch_loss(&matrix, args.alpha)?;
    println!("{loss}");
    if let Some(path) = &args.grad_out {
        let grad = batch_loss_grad(&matrix, args.alpha)?;
        let b = grad.size();
        let mut table = String::new();
        for i in 0..b {
            for j in 0..b {
                if j > 0 {
                    table.push(',');
                }
                write!(table, "{}", grad.get(i, j)).expect("string write");
            }
            table.push('\n');
        }
        write_text(path, &table)?;
    }
    Ok(())
}

fn read_matrix(path: &Path) -> CliResult<DistanceMatrix> {
    let text = read_text(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (number, line) in content_lines(&text) {
        let row = line
            .split(',')
            .map(|field| {
                field.trim().parse::<f64>().map_err(|_| {
                    format_err(path, format!("line {number}: bad number '{}'", field.trim()))
                })
            })
            .collect::<CliResult<Vec<f64>>>()?;
        rows.push(row);
    }
    let b = rows.len();
    if rows.iter().any(|row| row.len() != b) {
        return Err(format_err(path, format!("matrix must be square, found {b} rows")));
    }
    let values: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(DistanceMatrix::from_values(b, values)?)
}

fn format_err(path: &Path, reason: impl Into<String>) -> CliError {
    CliError::Core(cvl_core::Error::Format {
        path: path.into(),
        reason: reason.into(),
    })
}
