use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;

use cvl_core::{first_hit_rank, read_manifest, read_positions, recall_at_k, GeoPoint, Ranking};

use crate::commands::{content_lines, read_text, write_text};
use crate::config::Config;
use crate::error::{CliError, CliResult};

#[derive(Args)]
pub struct EvalArgs {
    /// Ranking CSV produced by `cvl retrieve`.
    #[arg(long, value_name = "FILE")]
    pub rankings: PathBuf,

    /// Database manifest; supplies tile positions.
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,

    /// Query positions (id,lat,lon).
    #[arg(long, value_name = "FILE")]
    pub query_positions: PathBuf,

    /// Metrics CSV to write (k,recall).
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,

    /// Optional per-query CSV: first hit rank and hit@k flags.
    #[arg(long, value_name = "FILE")]
    pub flags_out: Option<PathBuf>,

    /// Optional key=value config file.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Ranks to report recall at.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 5, 10, 100])]
    pub ks: Vec<usize>,

    /// Success radius in meters; overrides the config file.
    #[arg(long)]
    pub threshold_m: Option<f64>,
}

pub fn run(args: EvalArgs) -> CliResult<()> {
    let config = Config::load(args.config.as_deref())?;
    let threshold = args.threshold_m.unwrap_or(config.threshold_m);

    let db_positions: HashMap<String, GeoPoint> = read_manifest(&args.manifest)?
        .into_iter()
        .map(|e| (e.id, e.position))
        .collect();
    let query_positions: HashMap<String, GeoPoint> =
        read_positions(&args.query_positions)?.into_iter().collect();
    let rankings = read_rankings(&args.rankings)?;

    let recalls = recall_at_k(&rankings, &query_positions, &db_positions, &args.ks, threshold)?;

    let mut metrics = String::from("# k,recall\n");
    for (k, recall) in &recalls {
        writeln!(metrics, "{k},{recall}").expect("string write");
        println!("recall@{k} = {recall}");
    }
    write_text(&args.out, &metrics)?;

    if let Some(flags_path) = &args.flags_out {
        let mut flags = String::from("# query_id,first_hit_rank");
        for k in &args.ks {
            write!(flags, ",hit@{k}").expect("string write");
        }
        flags.push('\n');
        for ranking in &rankings {
            let hit = first_hit_rank(ranking, &query_positions, &db_positions, threshold)?;
            match hit {
                Some(rank) => write!(flags, "{},{rank}", ranking.query_id),
                None => write!(flags, "{},", ranking.query_id),
            }
            .expect("string write");
            for k in &args.ks {
                let flag = matches!(hit, Some(rank) if rank <= *k) as u8;
                write!(flags, ",{flag}").expect("string write");
            }
            flags.push('\n');
        }
        write_text(flags_path, &flags)?;
    }
    Ok(())
}

/// Parse a ranking CSV back into per-query orderings.
///
/// Queries keep their order of first appearance; rows within a query are
/// sorted by the rank column and must form a contiguous 1..=n sequence.
pub fn read_rankings(path: &Path) -> CliResult<Vec<Ranking>> {
    let text = read_text(path)?;
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(usize, String)>> = HashMap::new();
    for (number, line) in content_lines(&text) {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 3 {
            return Err(format_err(
                path,
                format!("line {number}: expected at least query_id,rank,db_id"),
            ));
        }
        let rank: usize = fields[1].parse().map_err(|_| {
            format_err(path, format!("line {number}: bad rank '{}'", fields[1]))
        })?;
        let query_id = fields[0].to_string();
        if !rows.contains_key(&query_id) {
            order.push(query_id.clone());
        }
        rows.entry(query_id).or_default().push((rank, fields[2].to_string()));
    }
    if order.is_empty() {
        return Err(format_err(path, "no ranking rows found"));
    }

    let mut rankings = Vec::with_capacity(order.len());
    for query_id in order {
        let mut group = rows.remove(&query_id).expect("group exists");
        group.sort_by_key(|(rank, _)| *rank);
        for (expected, (rank, _)) in group.iter().enumerate() {
            if *rank != expected + 1 {
                return Err(format_err(
                    path,
                    format!("query '{query_id}': ranks are not a contiguous 1..=n run"),
                ));
            }
        }
        rankings.push(Ranking {
            query_id,
            ranked_ids: group.into_iter().map(|(_, id)| id).collect(),
        });
    }
    Ok(rankings)
}

fn format_err(path: &Path, reason: impl Into<String>) -> CliError {
    CliError::Core(cvl_core::Error::Format {
        path: path.into(),
        reason: reason.into(),
    })
}
