use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use scaloforge::cli::{run_command, Command, CommandArgs};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Extract,
    Train,
    Augment,
    Evaluate,
    Fuse,
}

#[derive(Debug, Parser)]
#[command(name = "scaloforge", about = "Scalogram features, scene classifiers and GAN augmentation")]
struct Args {
    command: Cmd,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(2);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let command = match args.command {
        Cmd::Extract => Command::Extract,
        Cmd::Train => Command::Train,
        Cmd::Augment => Command::Augment,
        Cmd::Evaluate => Command::Evaluate,
        Cmd::Fuse => Command::Fuse,
    };
    let cli = CommandArgs {
        config: args.config,
        manifest: args.manifest,
        out: args.out,
    };
    match run_command(command, &cli) {
        Ok(report) => {
            let failures = report.manifest.failures.len();
            println!(
                "{}: {} outputs in {}, {failures} failures",
                command.name(),
                report.manifest.outputs.len(),
                report.out_dir.display()
            );
            ExitCode::from(report.exit_code())
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
