use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use unroll_cli::{run, Command, RunOptions, Stage};

#[derive(Parser)]
#[command(name = "unroll", version, about = "Virtual unwrapping and ink detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Flat `key = value` run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root; runs land in `<out>/<config hash>/`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Generate the phantom volume, ground truth and surface photo.
    Phantom,
    /// Trace the top sheet into a surface mesh.
    Segment,
    /// Conformally flatten the traced mesh.
    Flatten,
    /// Resample the volume about the flattened mesh.
    Sample,
    /// Align the photo and threshold it into ink labels.
    Label,
    /// Train one classifier per held-out region.
    Train,
    /// Predict each held-out region.
    Predict,
    /// Render the prediction over the surface texture.
    Composite,
    /// Score predictions, labels and the threshold baseline.
    Eval,
    /// Run every stage in order.
    Pipeline,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let command = match cli.command {
        Cmd::Phantom => Command::Stage(Stage::Phantom),
        Cmd::Segment => Command::Stage(Stage::Segment),
        Cmd::Flatten => Command::Stage(Stage::Flatten),
        Cmd::Sample => Command::Stage(Stage::Sample),
        Cmd::Label => Command::Stage(Stage::Label),
        Cmd::Train => Command::Stage(Stage::Train),
        Cmd::Predict => Command::Stage(Stage::Predict),
        Cmd::Composite => Command::Stage(Stage::Composite),
        Cmd::Eval => Command::Stage(Stage::Eval),
        Cmd::Pipeline => Command::Pipeline,
    };
    let Some(config) = cli.config else {
        eprintln!("error: --config is required");
        return ExitCode::from(2);
    };
    let opts = RunOptions {
        config,
        out: cli.out,
        threads: cli.threads,
    };
    match run(command, &opts) {
        Ok(summary) => {
            println!("{}", summary.run_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
