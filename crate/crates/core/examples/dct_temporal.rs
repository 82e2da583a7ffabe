//! Uses the DCT temporal block as a fixed low-pass filter along time: the
//! weights of high-order coefficients are zeroed and the output copies the
//! filtered input.
//!
//! cargo run --release --example dct_temporal -- [kept coefficients]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use scaloforge::nn::{Dct, DctTemporal, Tensor};

fn roughness(x: &[f64], chunk: usize, n: usize) -> f64 {
    let mut sum = 0.0;
    for t in 1..chunk {
        for c in 0..n {
            sum += (x[t * n + c] - x[(t - 1) * n + c]).powi(2);
        }
    }
    sum / ((chunk - 1) * n) as f64
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let keep: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(4);
    let (chunk, n) = (32, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let noise = Normal::new(0.0, 0.3)?;
    let x: Vec<f64> = (0..chunk * n)
        .map(|i| {
            let (t, c) = (i / n, i % n);
            (std::f64::consts::PI * t as f64 / chunk as f64 * (c + 1) as f64 / 2.0).sin() + noise.sample(&mut rng)
        })
        .collect();

    let mut block = DctTemporal::new("dct", chunk, n, &mut rng);
    block.select_filtered_input();
    for t in keep..chunk {
        for c in 0..n {
            block.weight_x.value[t * n + c] = 0.0;
        }
    }
    let y = block.forward(&Tensor::new(vec![1, chunk, n], x.clone())?)?;
    println!("roughness before {:.4}, after {:.4}", roughness(&x, chunk, n), roughness(&y.data, chunk, n));

    let dct = Dct::new(chunk);
    let column: Vec<f64> = (0..chunk).map(|t| x[t * n]).collect();
    let back = dct.inverse(&dct.forward(&column));
    let err = column.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("orthonormal round trip error {err:.2e}");
    Ok(())
}
