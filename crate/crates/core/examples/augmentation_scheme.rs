//! Runs the accept/reject augmentation scheme on the synthetic cluster
//! benchmark and compares the final classifier with a no-augmentation
//! baseline.
//!
//! cargo run --release --example augmentation_scheme -- [seed] [strategy]

use std::time::Instant;

use scaloforge::augmentation::{cluster_benchmark, run_scheme, segment_accuracy, train_baseline, SchemeConfig, SplitKind};
use scaloforge::nn::ClassifierSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1);
    let strategy: SplitKind = args.next().map(|s| s.parse()).transpose()?.unwrap_or(SplitKind::City);

    let (train, test) = cluster_benchmark(2000, 500, seed);
    let spec = ClassifierSpec {
        hidden: 32,
        ..ClassifierSpec::new(1, train.filters, 4)
    };
    let config = SchemeConfig::new(spec, strategy, seed);

    let start = Instant::now();
    let mut baseline = train_baseline(&train, &config)?;
    let report = run_scheme(&train, &config)?;
    let mut final_clf = report.classifier.clone();

    print!("{}", report.state.audit_jsonl());
    println!(
        "accepted {} of {} iterations, {} generated samples",
        report.accepted_iterations(),
        report.state.records.len(),
        report.state.accepted.len()
    );
    println!("baseline accuracy: {:.4}", segment_accuracy(&mut baseline, &test)?);
    println!("final accuracy:    {:.4}", segment_accuracy(&mut final_clf, &test)?);
    println!("elapsed: {:.1?}", start.elapsed());
    Ok(())
}
