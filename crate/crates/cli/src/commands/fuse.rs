use std::path::PathBuf;

use clap::Args;

use cvl_core::{
    attention_fuse, attention_matrix, mean_fuse, qkv_transform, read_conv_stack,
    read_feature_map, write_feature_map, QkvStacks,
};

use crate::config::{Config, FusionMode};
use crate::error::{usage, CliResult};

#[derive(Args)]
pub struct FuseArgs {
    /// Output tensor for the fused overhead map.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,

    /// Optional key=value config file.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Photo-consistency attention with identity query/key/value stacks.
    #[arg(long)]
    pub identity: bool,

    /// Visibility-weighted mean instead of attention.
    #[arg(long)]
    pub mean: bool,

    /// Packed weights for the query stack (requires the other two).
    #[arg(long, value_name = "FILE")]
    pub query_weights: Option<PathBuf>,

    /// Packed weights for the key stack.
    #[arg(long, value_name = "FILE")]
    pub key_weights: Option<PathBuf>,

    /// Packed weights for the value stack.
    #[arg(long, value_name = "FILE")]
    pub value_weights: Option<PathBuf>,

    /// Warped overhead frames to fuse, oldest first.
    #[arg(value_name = "FRAME", required = true)]
    pub frames: Vec<PathBuf>,
}

enum Mode {
    Attention(Option<(PathBuf, PathBuf, PathBuf)>),
    Mean,
}

impl FuseArgs {
    fn mode(&self, config: &Config) -> CliResult<Mode> {
        let weight_flags = [&self.query_weights, &self.key_weights, &self.value_weights];
        let given = weight_flags.iter().filter(|w| w.is_some()).count();
        if given != 0 && given != 3 {
            return Err(usage(
                "--query-weights, --key-weights and --value-weights go together",
            ));
        }
        let sources = self.identity as usize + self.mean as usize + (given == 3) as usize;
        if sources > 1 {
            return Err(usage(
                "pick one of --identity, --mean, or the weight file trio",
            ));
        }
        if self.mean {
            return Ok(Mode::Mean);
        }
        if self.identity {
            return Ok(Mode::Attention(None));
        }
        if given == 3 {
            return Ok(Mode::Attention(Some((
                self.query_weights.clone().unwrap(),
                self.key_weights.clone().unwrap(),
                self.value_weights.clone().unwrap(),
            ))));
        }
        Ok(match config.fusion_mode {
            FusionMode::Identity => Mode::Attention(None),
            FusionMode::Mean => Mode::Mean,
        })
    }
}

pub fn run(args: FuseArgs) -> CliResult<()> {
    let config = Config::load(args.config.as_deref())?;
    let mode = args.mode(&config)?;

    let frames = args
        .frames
        .iter()
        .map(|p| read_feature_map(p).map_err(Into::into))
        .collect::<CliResult<Vec<_>>>()?;

    let fused = match mode {
        Mode::Mean => mean_fuse(&frames)?,
        Mode::Attention(weights) => {
            let stacks = match weights {
                None => QkvStacks::identity(frames[0].channels()),
                Some((q, k, v)) => QkvStacks::new(
                    read_conv_stack(&q)?,
                    read_conv_stack(&k)?,
                    read_conv_stack(&v)?,
                )?,
            };
            let mut queries = Vec::with_capacity(frames.len());
            let mut keys = Vec::with_capacity(frames.len());
            let mut values = Vec::with_capacity(frames.len());
            for frame in &frames {
                let (q, k, v) = qkv_transform(frame, &stacks)?;
                queries.push(q);
                keys.push(k);
                values.push(v);
            }
            let attention = attention_matrix(&queries, &keys)?;
            attention_fuse(&attention, &values)?
        }
    };
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            crate::commands::ensure_dir(parent)?;
        }
    }
    write_feature_map(&args.out, &fused)?;
    println!("fused {} frames into {}", frames.len(), args.out.display());
    Ok(())
}
