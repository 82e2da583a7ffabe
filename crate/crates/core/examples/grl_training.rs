//! Trains a scene classifier with and without the adversarial city branch
//! behind a gradient reversal layer and reports accuracy on unseen cities.
//!
//! cargo run --release --example grl_training -- [gamma]

use scaloforge::augmentation::ClusterBenchmark;
use scaloforge::nn::{overall_accuracy, train_classifier, ClassifierSpec, FrameClassifier, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gamma: f64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0.3);
    let bench = ClusterBenchmark {
        cities: 3,
        ..ClusterBenchmark::default()
    };
    let data = bench.sample(3000, 1);
    let cities = data.city.clone().unwrap_or_default();
    // city 2 is never seen during training
    let seen: Vec<usize> = (0..data.len()).filter(|&i| cities[i] < 2).collect();
    let unseen: Vec<usize> = (0..data.len()).filter(|&i| cities[i] == 2).collect();
    let train = data.subset(&seen[..seen.len() * 9 / 10]).to_frames();
    let val = data.subset(&seen[seen.len() * 9 / 10..]).to_frames();
    let test = data.subset(&unseen).to_frames();

    let config = TrainConfig {
        max_epochs: 40,
        ..TrainConfig::default()
    };
    let base = ClassifierSpec {
        hidden: 32,
        seed: 4,
        ..ClassifierSpec::new(1, bench.filters, bench.classes)
    };
    for (name, spec) in [("plain", base.clone()), ("adversarial", base.with_cities(2, gamma))] {
        let mut model = FrameClassifier::new(spec)?;
        let outcome = train_classifier(&mut model, &train, &val, &config)?;
        println!(
            "{name:>12}: best epoch {:>3}, val loss {:.4}, unseen-city accuracy {:.4}",
            outcome.best_epoch,
            outcome.best_val_loss,
            overall_accuracy(&mut model, &test)?
        );
    }
    Ok(())
}
