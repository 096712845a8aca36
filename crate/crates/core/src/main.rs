use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use gancompress::cli::{self, RunConfig};
use gancompress::models::{Direction, Reduction};
use gancompress::Result;

#[derive(Parser)]
#[command(name = "gancompress", version, about = "Co-evolutionary filter pruning for a toy CycleGAN")]
struct Args {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for fitness evaluation.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Gen {
    G1,
    G2,
}

#[derive(Clone, Copy, ValueEnum)]
enum Red {
    Sum,
    Mean,
}

#[derive(Subcommand)]
enum Command {
    /// Train a fresh CycleGAN on the configured synthetic task.
    Pretrain,
    /// Search filter masks for both generators of a checkpoint.
    Compress {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Build compact generators from a checkpoint and two genome files.
    Extract {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        genome_g1: PathBuf,
        #[arg(long)]
        genome_g2: PathBuf,
    },
    /// Write the filters of one generator layer as graymaps.
    ExportFilters {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "g1")]
        generator: Gen,
        #[arg(long, default_value_t = 0)]
        layer: usize,
    },
    /// Translate a dataset file with the generator matching its domain.
    Translate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Original bundle, for the discriminator-aware loss.
        #[arg(long)]
        original: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "mean")]
        reduction: Red,
    },
}

fn config(args: &Args) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(args: &Args, cfg: Option<&RunConfig>) -> PathBuf {
    args.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.out_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn run(args: &Args) -> Result<()> {
    match &args.command {
        Command::Pretrain => {
            let cfg = config(args)?;
            let out = cli::cmd_pretrain(&cfg, &out_dir(args, Some(&cfg)))?;
            if let Some(last) = out.trace.last() {
                log::info!("final epoch {last:?}");
            }
            println!("{}", out.checkpoint.display());
        }
        Command::Compress { checkpoint } => {
            let cfg = config(args)?;
            let out = cli::cmd_compress(&cfg, checkpoint, &out_dir(args, Some(&cfg)), args.jobs)?;
            for g in &out.report.generators {
                println!(
                    "{}: memory ratio {:.3}, flop ratio {:.3}, val cycle {:.5} (original {:.5})",
                    g.generator, g.memory_ratio, g.flop_ratio, g.val_cycle_loss, g.original_val_cycle_loss
                );
            }
        }
        Command::Extract {
            checkpoint,
            genome_g1,
            genome_g2,
        } => {
            let pair = cli::cmd_extract(checkpoint, [genome_g1, genome_g2], &out_dir(args, None))?;
            println!("{} / {} parameters", pair.g1.param_count(), pair.g2.param_count());
        }
        Command::ExportFilters {
            checkpoint,
            generator,
            layer,
        } => {
            let dir = match generator {
                Gen::G1 => Direction::G1,
                Gen::G2 => Direction::G2,
            };
            let files = cli::cmd_export_filters(checkpoint, dir, *layer, &out_dir(args, None))?;
            println!("{} filters", files.len());
        }
        Command::Translate {
            checkpoint,
            dataset,
            original,
            reduction,
        } => {
            let red = match reduction {
                Red::Sum => Reduction::Sum,
                Red::Mean => Reduction::Mean,
            };
            let cfg = config(args)?;
            let out = out_dir(args, None);
            let s = cli::cmd_translate(checkpoint, dataset, original.as_deref(), red, cfg.ga.dis_map, &out)?;
            println!("{} samples, cycle loss {:.6}", s.samples, s.cycle_loss);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
