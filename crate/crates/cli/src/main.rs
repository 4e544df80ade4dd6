use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use partfield_core::pipeline::{self, RunConfig};

#[derive(Parser)]
#[command(name = "partfield", version, about = "Part-based avatar field fine-tuning and meshing")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML config, or a manifest.json from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (each command writes a subdirectory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress progress output.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the toy corpus and train the denoising prior (cached).
    TrainPrior,
    /// Fine-tune the generator against the prior.
    Finetune {
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        iterations: Option<u64>,
    },
    /// Render samples from a checkpoint and write their latents.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 5)]
        n: usize,
    },
    /// Extract and refine a textured mesh for one latent.
    Mesh {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        latent: PathBuf,
    },
    /// Mean pairwise feature distance over samples of a checkpoint.
    EvalDiversity {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Fine-tune at several p values and seeds and tabulate diversity.
    AblateP {
        /// Repeat for each value.
        #[arg(long = "p", default_values_t = [0.0, 0.1, 0.5, 1.0])]
        p: Vec<f64>,
        /// Number of consecutive seeds starting at --seed.
        #[arg(long, default_value_t = 3)]
        seeds: u64,
    },
}

fn resolve(global: &Global) -> Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &global.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn every(total: u64) -> u64 {
    (total / 20).max(1)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = resolve(&cli.global)?;
    let quiet = cli.global.quiet;
    match cli.command {
        Command::TrainPrior => {
            cfg.validate()?;
            let (path, cached) = pipeline::cmd_train_prior(&cfg)?;
            println!("{} {}", if cached { "cached" } else { "trained" }, path.display());
        }
        Command::Finetune { p, iterations } => {
            if let Some(p) = p {
                cfg.p = p;
            }
            if let Some(it) = iterations {
                cfg.iterations = it;
            }
            cfg.validate()?;
            let step = every(cfg.iterations);
            let path = pipeline::cmd_finetune(&cfg, |r| {
                if !quiet && (r.iteration + 1) % step == 0 {
                    eprintln!("iter {:>6}  sds {:>10.3}  depth {:.5}  adv {:.4}", r.iteration + 1, r.sds, r.depth, r.adv_generator);
                }
            })?;
            println!("{}", path.display());
        }
        Command::Sample { checkpoint, n } => {
            for path in pipeline::cmd_sample(&cfg, &checkpoint, n, cfg.seed)? {
                println!("{}", path.display());
            }
        }
        Command::Mesh { checkpoint, latent } => {
            cfg.validate()?;
            let step = every(cfg.mesh.iterations);
            let path = pipeline::cmd_mesh(&cfg, &checkpoint, &latent, |r| {
                if !quiet && (r.iteration + 1) % step == 0 {
                    eprintln!("mesh {:>5}  {:?}  loss {:.5}  faces {}", r.iteration + 1, r.kind, r.loss, r.faces);
                }
            })?;
            println!("{}", path.display());
        }
        Command::EvalDiversity { checkpoint, n } => {
            if let Some(n) = n {
                cfg.samples = n;
            }
            cfg.validate()?;
            let r = pipeline::cmd_eval_diversity(&cfg, &checkpoint)?;
            println!("p {}  samples {}  mean {:.6}  std {:.6}", r.p, r.samples, r.mean, r.std);
        }
        Command::AblateP { p, seeds } => {
            cfg.validate()?;
            let seed_list: Vec<u64> = (0..seeds).map(|i| cfg.seed + i).collect();
            let step = every(cfg.iterations);
            let rows = pipeline::cmd_ablate_p(&cfg, &p, &seed_list, |p, seed, r| {
                if !quiet && (r.iteration + 1) % step == 0 {
                    eprintln!("p {p} seed {seed} iter {}", r.iteration + 1);
                }
            })?;
            println!("p,seed,mean,std");
            for r in rows {
                println!("{},{},{:.6},{:.6}", r.p, r.seed, r.mean, r.std);
            }
        }
    }
    Ok(())
}
