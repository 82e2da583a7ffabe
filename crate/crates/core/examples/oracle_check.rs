//! Checks the STFT feature route against direct time-domain convolution
//! with each wavelet and prints one JSON record per filter.
//!
//! cargo run --release --example oracle_check -- [noise seed]

use scaloforge::filterbank::build_wavelet_scale;
use scaloforge::oracle::{compare_paths, dominant_filter_agreement, OracleConfig};
use scaloforge::signal_io::{synth_signal, SynthKind, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(3);
    let cfg = OracleConfig::desk();
    let bank = build_wavelet_scale(&cfg.scale)?;
    for k in 0..bank.len() {
        let tone = synth_signal(&SynthSpec::new(SynthKind::Tone, bank.centers[k], 2.0, cfg.rate, 0))?;
        let cmp = compare_paths(&tone, k, &cfg)?;
        println!("{}", serde_json::to_string(&cmp.report())?);
    }
    let noise = synth_signal(&SynthSpec::new(SynthKind::WhiteNoise, 0.0, 3.0, cfg.rate, seed))?;
    let agreement = dominant_filter_agreement(&noise, &cfg)?;
    println!(
        "white noise seed {seed}: dominant filter agrees on {} of {} frames ({:.3})",
        agreement.agreeing,
        agreement.frames_compared,
        agreement.fraction()
    );
    Ok(())
}
