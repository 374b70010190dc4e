use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use motionseg::evaluation::{synth_sequence, write_dataset, SynthParams};
use motionseg::flow::{estimate_flow, save_flo, BlockMatchParams};
use motionseg::io::read_frame_png;
use motionseg::pipeline::{ablation_report, evaluate_dirs, write_masks};
use motionseg::{run_pipeline, DatasetLayout, PipelineConfig, RunOptions, StageSelection};

#[derive(Parser)]
#[command(name = "motionseg", version, about = "Online segmentation of moving objects in video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment every frame of a sequence and write 0/255 mask PNGs.
    Segment {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        flow: Option<PathBuf>,
        #[arg(long)]
        proposals: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// JSON pipeline configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// One of s, so, sop, soc, sopc. Defaults to the config's flags.
        #[arg(long)]
        stages: Option<StageSelection>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Estimate missing flow files by block matching.
        #[arg(long)]
        estimate_flow: bool,
    },
    /// Score predicted masks against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Also write the scores as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Score frame 0 too. It is skipped by default since the pipeline
        /// never segments it.
        #[arg(long)]
        include_first: bool,
    },
    /// Generate a synthetic sequence with ground truth.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// JSON generator parameters; defaults apply when omitted.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Estimate backward flow between consecutive frames.
    Flow {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        block: usize,
        #[arg(long, default_value_t = 4)]
        radius: usize,
    },
    /// Run every ablation row and print a score table.
    Ablate {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        proposals: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => Ok(PipelineConfig::from_json(&read_text(p)?).with_context(|| format!("{}", p.display()))?),
        None => Ok(PipelineConfig::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Segment {
            frames,
            flow,
            proposals,
            out,
            config,
            stages,
            seed,
            estimate_flow,
        } => {
            let cfg = load_config(config.as_deref())?;
            let stages = stages.unwrap_or_else(|| StageSelection::from_config(&cfg));
            let layout = DatasetLayout {
                frames,
                flow,
                proposals,
                gt: None,
            };
            let opts = RunOptions {
                flow_estimation: estimate_flow.then(BlockMatchParams::default),
            };
            let ids = layout.frame_ids()?;
            let masks = run_pipeline(&layout, &cfg, stages, seed, &opts)?;
            write_masks(&out, &ids, &masks)?;
            log::info!("wrote {} masks ({stages}) to {}", masks.len(), out.display());
        }
        Command::Eval {
            pred,
            gt,
            report,
            include_first,
        } => {
            let scores = evaluate_dirs(&pred, &gt, usize::from(!include_first))?;
            println!("j_mean   {:.4}", scores.j_mean);
            println!("j_recall {:.4}", scores.j_recall);
            match scores.j_decay {
                Some(d) => println!("j_decay  {d:.4}"),
                None => println!("j_decay  -"),
            }
            println!("f_mean   {:.4}", scores.f_mean);
            if let Some(path) = report {
                let json = serde_json::to_string_pretty(&scores)?;
                std::fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Synth { out, params } => {
            let params: SynthParams = match params {
                Some(p) => serde_json::from_str(&read_text(&p)?).with_context(|| format!("{}", p.display()))?,
                None => SynthParams::default(),
            };
            let seq = synth_sequence(&params)?;
            write_dataset(&seq, &out)?;
            log::info!("wrote {} frames to {}", seq.frames.len(), out.display());
        }
        Command::Flow {
            frames,
            out,
            block,
            radius,
        } => {
            let params = BlockMatchParams {
                block_size: block,
                search_radius: radius,
                ..BlockMatchParams::default()
            };
            let ids = DatasetLayout::new(frames.clone()).frame_ids()?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let mut prev = None;
            for id in &ids {
                let cur = read_frame_png(&frames.join(format!("{id}.png")))?;
                if let Some(p) = &prev {
                    save_flo(&out.join(format!("{id}.flo")), &estimate_flow(p, &cur, &params)?)?;
                }
                prev = Some(cur);
            }
        }
        Command::Ablate {
            frames,
            flow,
            proposals,
            gt,
            config,
            seed,
            json,
        } => {
            let cfg = load_config(config.as_deref())?;
            let layout = DatasetLayout {
                frames,
                flow: Some(flow),
                proposals: Some(proposals),
                gt: Some(gt),
            };
            let report = ablation_report(&layout, &cfg, seed, &RunOptions::default())?;
            if json {
                println!("{}", report.to_json());
            } else {
                println!("{report}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
