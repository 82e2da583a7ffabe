//! Extracts a long-term wavelet scalogram from a WAV file or a synthetic
//! source and writes it as a feature file.
//!
//! cargo run --release --example extract_scalogram -- [wav | synth:kind:freq:dur:rate:seed] [out.sclf]

use scaloforge::features::{extract_scalogram, save_features, StftConfig};
use scaloforge::filterbank::WaveletScaleParams;
use scaloforge::signal_io::{read_wav, synth_stereo, AudioClip, ChannelMode, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let source = args.next().unwrap_or_else(|| "synth:chirp:20000:10:48000:1".into());
    let out = args.next().unwrap_or_else(|| "scalogram.sclf".into());
    let clip = if source.starts_with("synth:") {
        synth_stereo(&SynthSpec::parse(&source)?)?
    } else {
        read_wav(&source)?
    };
    // a mono recording feeds the same signal to both channels
    let clip = match clip.num_channels() {
        1 => AudioClip::stereo(clip.channel(0).to_vec(), clip.channel(0).to_vec(), clip.sample_rate())?,
        _ => clip,
    };
    let rate = clip.sample_rate();
    let params = WaveletScaleParams::new(f64::from(rate) / 2.0, 0.5, 0.341, 35);
    let map = extract_scalogram(&clip, ChannelMode::AveDiff, &params, &StftConfig::long_term(rate))?;
    let (frames, channels, filters) = map.shape();
    println!("{source}: {frames} frames x {channels} channels x {filters} filters");
    let peaks: Vec<usize> = (0..frames)
        .map(|t| {
            let row = map.data.slice(ndarray::s![t, 0, ..]);
            scaloforge::nn::argmax(row.as_slice().unwrap_or(&row.to_vec()))
        })
        .collect();
    println!("dominant filter per frame: {peaks:?}");
    save_features(&map, &out)?;
    println!("wrote {out}");
    Ok(())
}
