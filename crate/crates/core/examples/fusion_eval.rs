//! Scores three noisy systems against a toy manifest, then fuses them by
//! average voting and prints overall, class-mean and per-city accuracy.
//!
//! cargo run --release --example fusion_eval

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scaloforge::cli::{evaluate, fuse_average_voting, ScoreTable};
use scaloforge::signal_io::parse_manifest;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let classes = 5;
    let mut text = String::from("id\tsource\tscene_label\tcity_label\tsplit\n");
    for i in 0..400 {
        let city = ["paris", "lyon", "oslo"][i % 3];
        writeln!(text, "s{i}\tsynth:silence:0:1:8000:{i}\tscene{}\t{city}\ttest", i % classes)?;
    }
    let manifest = parse_manifest(&text)?;
    let ids: Vec<String> = (0..400).map(|i| format!("s{i}")).collect();

    let systems: Vec<ScoreTable> = (0..3)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let log_probs = (0..400)
                .map(|i| {
                    let scores: Vec<f64> = (0..classes)
                        .map(|c| if c == i % classes { 1.0 } else { 0.0 } + rng.gen_range(0.0..1.6))
                        .collect();
                    let norm = scores.iter().map(|s| s.exp()).sum::<f64>().ln();
                    scores.iter().map(|s| s - norm).collect()
                })
                .collect();
            ScoreTable { ids: ids.clone(), log_probs }
        })
        .collect();

    for (k, system) in systems.iter().enumerate() {
        let report = evaluate(&system.predictions(), &manifest)?;
        println!("system {k}: overall {:.3}, class mean {:.3}", report.overall, report.class_mean);
    }
    let fused = evaluate(&fuse_average_voting(&systems, None)?, &manifest)?;
    println!("fused:    overall {:.3}, class mean {:.3}", fused.overall, fused.class_mean);
    for city in &fused.per_city {
        println!("  {:>6}: {:.3} over {} segments", city.city, city.accuracy, city.support);
    }
    print!("{}", fused.confusion_csv());
    Ok(())
}
