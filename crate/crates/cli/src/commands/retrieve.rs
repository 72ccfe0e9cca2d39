use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;

use cvl_core::{
    read_conv_stack, read_feature_map, read_manifest, scan_database, DatabaseEntry,
};

use crate::commands::write_text;
use crate::config::Config;
use crate::error::{usage, CliResult};

#[derive(Args)]
pub struct RetrieveArgs {
    /// Database manifest (id,path,lat,lon).
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,

    /// Ranking CSV to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,

    /// Optional key=value config file.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Displacement search radius in cells; overrides the config file.
    #[arg(long)]
    pub radius: Option<usize>,

    /// Ground size of one feature cell, used to report displacements in
    /// meters and to derive the search radius; overrides the config file.
    #[arg(long)]
    pub meters_per_pixel: Option<f64>,

    /// Packed conv weights for the matching-uncertainty head.
    #[arg(long, value_name = "FILE")]
    pub uncertainty_weights: Option<PathBuf>,

    /// Rank by raw correlation, without uncertainty weighting.
    #[arg(long)]
    pub no_uncertainty: bool,

    /// Fused query map as ID=PATH; repeat for several queries.
    #[arg(long = "query", value_name = "ID=PATH", required = true)]
    pub queries: Vec<String>,
}

pub fn run(args: RetrieveArgs) -> CliResult<()> {
    let mut config = Config::load(args.config.as_deref())?;
    if let Some(m) = args.meters_per_pixel {
        config.meters_per_pixel = m;
    }
    if let Some(r) = args.radius {
        config.match_radius_px = Some(r);
    }
    let cell_m = config.meters_per_pixel;
    let radius = config.search_radius(cell_m)?;

    let weights = match (&args.uncertainty_weights, args.no_uncertainty) {
        (Some(path), false) => Some(read_conv_stack(path)?),
        (None, true) => None,
        _ => {
            return Err(usage(
                "pass exactly one of --uncertainty-weights or --no-uncertainty",
            ))
        }
    };

    let entries = read_manifest(&args.manifest)?
        .into_iter()
        .map(|e| {
            Ok(DatabaseEntry {
                id: e.id,
                features: read_feature_map(&e.path)?,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;

    let mut table =
        String::from("# query_id,rank,db_id,displacement_m,displacement_n,ncc_score,weighted_score,distance_d\n");
    let mut n_queries = 0usize;
    for spec in &args.queries {
        let (id, path) = spec
            .split_once('=')
            .ok_or_else(|| usage(format!("--query wants ID=PATH, got '{spec}'")))?;
        let query = read_feature_map(path.as_ref())?;
        let results = scan_database(&entries, &query, weights.as_ref(), radius)?;
        for (rank, result) in results.iter().enumerate() {
            let (m, n) = result.report.displacement;
            writeln!(
                table,
                "{},{},{},{},{},{},{},{}",
                id,
                rank + 1,
                result.id,
                m as f64 * cell_m,
                n as f64 * cell_m,
                result.report.ncc,
                result.report.weighted_score,
                result.report.distance
            )
            .expect("string write");
        }
        n_queries += 1;
    }
    write_text(&args.out, &table)?;
    println!(
        "ranked {} tiles for {} queries into {}",
        entries.len(),
        n_queries,
        args.out.display()
    );
    Ok(())
}
