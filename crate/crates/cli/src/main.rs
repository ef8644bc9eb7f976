//! `attnet`: synthesize data, project scans, train, map, query and evaluate.

mod commands;
mod failure;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use attnet::projection::ProjectionConfig;
use clap::{Parser, Subcommand};

use failure::{CmdResult, Failure};

#[derive(Parser)]
#[command(name = "attnet", version, about = "LiDAR place recognition experiments")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Project a .bin scan or a directory of scans into ARNG range images.
    Project {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1024)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 3.0)]
        fov_up: f64,
        #[arg(long, default_value_t = 25.0)]
        fov_down: f64,
    },
    /// Generate synthetic looping sequences in KITTI layout.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        sequences: usize,
        #[arg(long, default_value_t = 450)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// circle | out-and-back
        #[arg(long, default_value = "circle")]
        course: String,
        /// Circle radius or out-and-back length, meters.
        #[arg(long, default_value_t = 40.0)]
        size: f64,
        /// Lateral offset of revisiting laps, meters.
        #[arg(long)]
        lap_offset: Option<f64>,
    },
    /// Train on the configured sequences; writes model.adlw and train.log.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Also save a checkpoint every K epochs.
        #[arg(long)]
        checkpoint_every: Option<usize>,
    },
    /// Describe every frame of a sequence and save the descriptor map.
    BuildMap {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sequence: String,
        /// Map file to write [default: <output_dir>/maps/<sequence>.adlm]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Top-N map entries for one scan.
    Query {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        scan: PathBuf,
        #[arg(short = 'n', long, default_value_t = 1)]
        top: usize,
    },
    /// Cross-validate, or evaluate a checkpoint; writes folds.csv and recall_curve.csv.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Prebuilt map used for the sequence it was built from (needs --checkpoint).
        #[arg(long, requires = "checkpoint")]
        map: Option<PathBuf>,
    },
    /// Encoder/attention depth grid; writes ablation.csv.
    Ablate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Descriptor throughput on the first configured sequence.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn run(command: Command) -> CmdResult<()> {
    match command {
        Command::Project {
            input,
            out,
            width,
            height,
            fov_up,
            fov_down,
        } => {
            let projection = ProjectionConfig::new(width, height, fov_up, fov_down).map_err(Failure::usage)?;
            commands::project_scans(&input, &out, &projection)
        }
        Command::Synth {
            out,
            sequences,
            frames,
            seed,
            course,
            size,
            lap_offset,
        } => commands::synthesize(&commands::SynthOptions {
            out,
            sequences,
            frames,
            seed,
            course,
            size,
            lap_offset,
        }),
        Command::Train {
            config,
            checkpoint_every,
        } => commands::train_model(&commands::load_config(&config)?, checkpoint_every),
        Command::BuildMap {
            config,
            checkpoint,
            sequence,
            out,
        } => commands::build_map_file(&commands::load_config(&config)?, &checkpoint, &sequence, out),
        Command::Query {
            config,
            checkpoint,
            map,
            scan,
            top,
        } => commands::query_scan(&commands::load_config(&config)?, &checkpoint, &map, &scan, top),
        Command::Eval {
            config,
            checkpoint,
            map,
        } => commands::evaluate(&commands::load_config(&config)?, checkpoint.as_deref(), map.as_deref()),
        Command::Ablate { config } => commands::ablate(&commands::load_config(&config)?),
        Command::Bench { config, checkpoint } => {
            commands::bench(&commands::load_config(&config)?, checkpoint.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
