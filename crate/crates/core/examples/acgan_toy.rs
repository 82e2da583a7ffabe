//! Trains the conditional GAN on the cluster benchmark and checks how often
//! a plain classifier assigns generated frames to the class they were
//! conditioned on.
//!
//! cargo run --release --example acgan_toy -- [epochs]

use scaloforge::augmentation::{cluster_benchmark, train_acgan, AcganConfig};
use scaloforge::nn::{argmax, frame_log_proba, train_classifier, ClassifierSpec, FrameClassifier, FrameSet, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(30);
    let (train, val) = cluster_benchmark(2000, 400, 2);
    let frames = train.to_frames();
    let classes = 4;

    let mut clf = FrameClassifier::new(ClassifierSpec {
        hidden: 32,
        ..ClassifierSpec::new(1, train.filters, classes)
    })?;
    train_classifier(&mut clf, &frames, &val.to_frames(), &TrainConfig::default())?;

    let config = AcganConfig {
        epochs,
        z_dim: 8,
        hidden: 32,
        lr: 1e-3,
        ..AcganConfig::default()
    };
    let mut generators = train_acgan(&frames, classes, &config)?;
    println!("kept {} generator checkpoints at epochs {:?}", generators.len(), config.checkpoint_epochs());
    let last = generators.last_mut().ok_or("no generator")?;
    for scene in 0..classes {
        let mut fake = FrameSet::new(1, train.filters);
        for frame in last.generate(scene, 200)? {
            fake.push(&frame, scene, None)?;
        }
        let hits = frame_log_proba(&mut clf, &fake)?.iter().filter(|lp| argmax(lp) == scene).count();
        println!("scene {scene}: {hits}/200 generated frames classified as their condition");
    }
    Ok(())
}
