use clap::Args;
use serde::Serialize;

use cbir_core::pipeline::{generate_synthetic, write_dataset, SyntheticConfig};
use cbir_core::ratings::CharacteristicSchema;
use cbir_core::Result;

use super::Context;

pub const DEFAULT_N: usize = 600;

/// Generate a synthetic rated dataset (manifest, schema and feature blobs).
#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of items, at least 10 [default: 600]
    #[arg(long)]
    pub n: Option<usize>,
    /// One rater per item and no rater or feature noise
    #[arg(long)]
    pub noiseless: bool,
    /// Feature vector length [default: 32]
    #[arg(long)]
    pub feature_dim: Option<usize>,
    /// Standard deviation of each rater around the latent ratings [default: 0.3]
    #[arg(long)]
    pub rater_std: Option<f64>,
    /// Upper bound on raters per item [default: 4]
    #[arg(long)]
    pub max_raters: Option<usize>,
    /// Standard deviation of additive feature noise [default: 0.05]
    #[arg(long)]
    pub feature_noise: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Resolved {
    n: usize,
    generator: SyntheticConfig,
}

pub fn run(args: &SynthArgs, ctx: &Context) -> Result<()> {
    let file = &ctx.file.synth;
    let n = args.n.or(file.n).unwrap_or(DEFAULT_N);
    let mut generator = if args.noiseless || file.noiseless.unwrap_or(false) {
        SyntheticConfig::noiseless()
    } else {
        SyntheticConfig::default()
    };
    if let Some(v) = args.feature_dim.or(file.feature_dim) {
        generator.feature_dim = v;
    }
    if let Some(v) = args.rater_std.or(file.rater_std) {
        generator.rater_std = v;
    }
    if let Some(v) = args.max_raters.or(file.max_raters) {
        generator.max_raters = v;
    }
    if let Some(v) = args.feature_noise.or(file.feature_noise) {
        generator.feature_noise = v;
    }
    if let Some(v) = file.nuisance_dims {
        generator.nuisance_dims = v;
    }
    if let Some(v) = file.nuisance_scale {
        generator.nuisance_scale = v;
    }
    if let Some(v) = file.gain {
        generator.gain = v;
    }
    generator.validate()?;

    let seed = ctx.seed();
    let synthetic = generate_synthetic(n, &CharacteristicSchema::default(), &generator, seed)?;
    let out = ctx.out_dir()?;
    write_dataset(&synthetic.dataset, &out)?;
    let resolved = Resolved { n, generator };
    ctx.write_manifest("synth", seed, &out, &resolved)?;
    println!("wrote {n} items to {}", out.display());
    Ok(())
}
