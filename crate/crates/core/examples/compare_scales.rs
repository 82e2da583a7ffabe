//! Lays the wavelet scale next to the Mel scale and compares how strongly
//! neighbouring frames of each feature are correlated on a slowly drifting
//! noise floor.
//!
//! cargo run --release --example compare_scales

use ndarray::Axis;
use scaloforge::features::{extract_fbank, extract_scalogram, StftConfig};
use scaloforge::filterbank::{build_mel_scale, build_wavelet_scale, WaveletScaleParams};
use scaloforge::oracle::adjacent_cosine_similarity;
use scaloforge::signal_io::{synth_stereo, AudioClip, ChannelMode, SynthKind, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = WaveletScaleParams::reference();
    let wavelet = build_wavelet_scale(&params)?;
    let mel = build_mel_scale(0.0, 24000.0, 128)?;
    println!(
        "wavelet: {} filters ({} evenly spaced, {} constant-Q), junction {:.1} Hz",
        wavelet.len(),
        wavelet.evenly_spaced,
        wavelet.constant_q,
        params.junction_frequency()
    );
    println!("mel:     {} filters", mel.len());
    println!("{:>10} {:>12} {:>12}", "filter", "wavelet Hz", "mel Hz");
    for j in (0..128).step_by(16) {
        println!("{j:>10} {:>12.1} {:>12.1}", wavelet.centers[j], mel.centers[j]);
    }

    // white noise whose level drifts slowly over ten seconds
    let rate = 48_000;
    let noise = synth_stereo(&SynthSpec::new(SynthKind::WhiteNoise, 0.0, 10.0, rate, 7))?;
    let n = noise.len() as f64;
    let drift = |ch: &[f64]| -> Vec<f64> {
        ch.iter()
            .enumerate()
            .map(|(i, v)| v * (1.0 + 0.8 * (std::f64::consts::TAU * 0.3 * i as f64 / n * 10.0).sin()))
            .collect()
    };
    let clip = AudioClip::stereo(drift(noise.channel(0)), drift(noise.channel(1)), rate)?;
    let scal = extract_scalogram(&clip, ChannelMode::AveDiff, &params, &StftConfig::long_term(rate))?;
    let fbank = extract_fbank(&clip, ChannelMode::AveDiff, 128, false)?;
    for (name, map) in [("scalogram", &scal), ("fbank", &fbank)] {
        let raw = adjacent_cosine_similarity(map, 1)?;
        // removing each filter's time mean leaves only the frame-to-frame variation
        let mut centred = map.clone();
        let mean = map.data.mean_axis(Axis(0)).ok_or("empty map")?;
        centred.data -= &mean;
        let var = adjacent_cosine_similarity(&centred, 2)?;
        println!(
            "{name:>10}: {:?}, adjacent cosine {:.4}, centred at stride 2 {:.4}",
            map.shape(),
            raw.mean,
            var.mean
        );
    }
    Ok(())
}
