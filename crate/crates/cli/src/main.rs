//! `capnav` — command-line pipeline: scene generation, expert training,
//! offline collection, student pretraining, balanced DAgger iteration,
//! benchmarking, and dataset inspection.
//!
//! Exit codes: 0 success, 1 invalid input (flags, configs, files), 2 internal
//! error.

mod commands;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "capnav", version, about = "2D navigation: privileged experts distilled into one student")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate one scene and write its binary blob.
    GenScene {
        #[arg(long)]
        capability: capnav_core::Capability,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also render the scene to an SVG.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Train one capability expert with PPO.
    TrainExpert {
        #[arg(long)]
        capability: capnav_core::Capability,
        /// Network preset override (desk | paper).
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed override; defaults to the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs")]
        out_dir: PathBuf,
    },
    /// Success-filtered offline collection from trained experts.
    CollectOffline {
        /// Directory holding expert_<capability>.ckpt files.
        #[arg(long)]
        experts: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Behavior-clone a fresh student on an offline dataset.
    PretrainStudent {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Capability-balanced DAgger iterations.
    Iterate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        student: PathBuf,
        #[arg(long)]
        experts: PathBuf,
        /// Offline dataset (slice zero of the aggregation).
        #[arg(long)]
        offline: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs/iterate")]
        out_dir: PathBuf,
    },
    /// Run a policy over the fixed benchmark suite.
    Eval {
        /// Checkpoint path, or scripted:zero / scripted:straight.
        #[arg(long)]
        policy: String,
        /// Suite directory; the manifest is created there on first use.
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Regenerate the manifest even if one exists.
        #[arg(long)]
        regen: bool,
        /// Record trajectories and render per-scene SVG overlays.
        #[arg(long)]
        svg: bool,
        /// Output directory; defaults to <suite>/eval_<policy-label>.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Merge evaluation CSVs into one table.
    Report {
        #[arg(long, required = true, num_args = 1..)]
        results: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a dataset file and print its summary.
    InspectDataset {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        let code = match e.downcast_ref::<capnav_core::Error>() {
            Some(ce) if ce.is_user_error() => 1,
            _ => 2,
        };
        std::process::exit(code);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::GenScene {
            capability,
            seed,
            config,
            out,
            svg,
        } => commands::gen_scene(capability, seed, config.as_deref(), &out, svg.as_deref()),
        Cmd::TrainExpert {
            capability,
            preset,
            config,
            seed,
            out_dir,
        } => commands::train_expert(capability, preset.as_deref(), config.as_deref(), seed, &out_dir),
        Cmd::CollectOffline {
            experts,
            config,
            seed,
            out,
        } => commands::collect_offline(&experts, config.as_deref(), seed, &out),
        Cmd::PretrainStudent {
            dataset,
            config,
            seed,
            out,
        } => commands::pretrain_student(&dataset, config.as_deref(), seed, &out),
        Cmd::Iterate {
            config,
            student,
            experts,
            offline,
            seed,
            out_dir,
        } => commands::iterate(config.as_deref(), &student, &experts, &offline, seed, &out_dir),
        Cmd::Eval {
            policy,
            suite,
            config,
            seed,
            regen,
            svg,
            out_dir,
        } => commands::eval(&policy, &suite, config.as_deref(), seed, regen, svg, out_dir.as_deref()),
        Cmd::Report { results, out } => commands::report(&results, &out),
        Cmd::InspectDataset { dataset, config } => {
            commands::inspect_dataset(&dataset, config.as_deref())
        }
    }
}
