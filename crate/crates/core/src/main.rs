use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use log::info;

use depthcue::synthdata::{render_pair, write_dataset, SynthSpecFile};
use depthcue::trainer::evaluate::{evaluate_checkpoint, EvalOptions};
use depthcue::trainer::gradcheck::grad_check;
use depthcue::trainer::{Phase, TrainConfig, Trainer};

/// Self-supervised monocular depth and ego-motion.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a TOML configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from a checkpoint (a phase-1 checkpoint starts the joint phase).
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Run the joint phase right after phase one.
        #[arg(long)]
        two_phase: bool,
    },
    /// Compare analytic and finite-difference gradients of one component.
    GradCheck {
        #[arg(long)]
        component: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
    },
    /// Render synthetic scenes to a dataset directory.
    RenderSynth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint against ground-truth depth.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// KITTI root; defaults to the one recorded in the checkpoint.
        #[arg(long)]
        data_root: Option<PathBuf>,
        #[arg(long)]
        per_frame: bool,
        #[arg(long)]
        dump_depth: Option<PathBuf>,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Train { config, resume, two_phase } => {
            let cfg = TrainConfig::load(&config)?;
            let mut trainer = match &resume {
                Some(ckpt) => Trainer::resume(cfg, ckpt)?,
                None => Trainer::new(cfg)?,
            };
            trainer.run()?;
            if two_phase && trainer.phase() == Phase::BaselineHam {
                trainer = trainer.into_joint()?;
                trainer.run()?;
            }
            if let Some(dir) = &trainer.cfg.output_dir {
                let path = dir.join("final.ckpt");
                trainer.checkpoint().save(&path)?;
                info!("wrote {}", path.display());
            }
            let last = trainer.log().steps().last().map(|s| s.loss.total);
            println!("{}", serde_json::json!({ "steps": trainer.step(), "phase": trainer.phase(), "final_loss": last }));
        }
        Command::GradCheck { component, seed, tolerance } => {
            let report = grad_check(&component, seed)?;
            println!("{}", serde_json::to_string(&report)?);
            if report.max_rel_error >= tolerance {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::RenderSynth { spec, out } => {
            let scenes = SynthSpecFile::load(&spec)?.all_scenes();
            if scenes.is_empty() {
                bail!("{} defines no scenes", spec.display());
            }
            let pairs = scenes
                .iter()
                .enumerate()
                .map(|(k, s)| render_pair(s).with_context(|| format!("scene {k}")))
                .collect::<anyhow::Result<Vec<_>>>()?;
            write_dataset(&out, &pairs)?;
            println!("rendered {} pairs into {}", pairs.len(), out.display());
        }
        Command::Eval { ckpt, split, gt, data_root, per_frame, dump_depth, out } => {
            let opts = EvalOptions { data_root, per_frame, dump_depth };
            let report = evaluate_checkpoint(&ckpt, &split, &gt, &opts)?;
            let text = serde_json::to_string_pretty(&report)?;
            if let Some(path) = out {
                std::fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
            }
            println!("{text}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
