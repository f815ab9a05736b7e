//! Patch attention on a map with a repeated motif: a corrupted copy is
//! rebuilt from the intact patches it most resembles.
//!
//! cargo run --release --example cfa_attention

use candle_core::{Device, Tensor};
use inpaint::cfa::{attention_scores, reconstruct};

fn main() -> inpaint::Result<()> {
    let dev = Device::Cpu;
    // Vertical stripes, period 4, with one column zeroed.
    let mut v = vec![0f64; 8 * 8];
    for y in 0..8 {
        for x in 0..8 {
            v[y * 8 + x] = if x % 4 < 2 && x != 5 { 1.0 } else { 0.0 };
        }
    }
    let f = Tensor::from_vec(v, (1, 1, 8, 8), &dev)?;
    let scores = attention_scores(&f)?;
    let rows = scores.sum(2)?.flatten_all()?.to_vec1::<f64>()?;
    let worst = rows.iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max);
    println!("{} patches, max |row sum - 1| = {worst:.1e}", rows.len());

    let rebuilt = reconstruct(&f, &scores)?;
    println!("row 3 before: {:?}", f.get(0)?.get(0)?.get(3)?.to_vec1::<f64>()?.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>());
    println!("row 3 after:  {:?}", rebuilt.get(0)?.get(0)?.get(3)?.to_vec1::<f64>()?.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>());
    Ok(())
}
