//! Writes a small synthetic corpus and runs every command of the pipeline
//! on it through the library entry point.
//!
//! cargo run --release --example cli_pipeline -- [work dir]

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use scaloforge::cli::{run_command, Command, CommandArgs};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "pipeline_demo".into()));
    fs::create_dir_all(&dir)?;
    let scenes = [("tone", 300.0, "park"), ("tone", 2000.0, "metro"), ("white-noise", 0.0, "street")];
    let mut manifest = String::from("id\tsource\tscene_label\tcity_label\tsplit\n");
    let mut n = 0;
    for (city, split) in [("lyon", "train"), ("oslo", "train"), ("rome", "test")] {
        for (kind, freq, label) in scenes {
            for _ in 0..4 {
                n += 1;
                writeln!(manifest, "c{n:03}\tsynth:{kind}:{freq}:2:16000:{n}\t{label}\t{city}\t{split}")?;
            }
        }
    }
    fs::write(dir.join("manifest.tsv"), manifest)?;
    let config = dir.join("experiment.toml");
    fs::write(
        &config,
        "seeds = [1, 2]\n\
         [paths]\nmanifest = \"manifest.tsv\"\n\
         [features]\nkind = \"scalogram\"\nwindow = 0.128\nshift = 0.064\n\
         [features.scale]\nf_high = 8000.0\nf_low = 0.5\nt_max = 0.05\nq = 4\n\
         [classifier]\nhidden = 16\nmax_epochs = 20\n\
         [augmentation]\nmax_iterations = 2\ngan_epochs = 4\nsubset_epochs = 5\n",
    )?;

    let args = CommandArgs {
        config,
        ..CommandArgs::default()
    };
    for command in [Command::Extract, Command::Train, Command::Evaluate, Command::Fuse, Command::Augment] {
        let report = run_command(command, &args)?;
        println!(
            "{:>8}: {} outputs in {}, {} failures",
            command.name(),
            report.manifest.outputs.len(),
            report.out_dir.display(),
            report.manifest.failures.len()
        );
    }
    print!("{}", fs::read_to_string(dir.join("out/predictions.tsv"))?);
    Ok(())
}
