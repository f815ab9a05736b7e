//! Edge and grayscale maps that feed the structure stream, written as PNGs.
//!
//! cargo run --release --example canny_edges -- [out_dir]

use std::path::PathBuf;

use inpaint::datapipe::{extract_edges, save_gray_png, save_image_png, synth_dataset, to_grayscale, EdgeParams};

fn main() -> inpaint::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "canny_out".into()));
    std::fs::create_dir_all(&out).expect("create output dir");
    let samples = synth_dataset(6, 64, 7)?;
    for (i, sample) in samples.iter().enumerate() {
        let gray = to_grayscale(sample.image_gt())?;
        let mut line = format!("sample {i}:");
        for sigma in [1.0, 2.0, 3.0] {
            let params = EdgeParams { sigma, ..EdgeParams::default() };
            let edges = extract_edges(gray.view(), params)?;
            line.push_str(&format!("  sigma {sigma} {:5.1}%", 100.0 * edges.mean().unwrap_or(0.0)));
            save_gray_png(edges.view(), &out.join(format!("{i}_edges_sigma{sigma}.png")))?;
        }
        println!("{line}");
        save_image_png(sample.image_gt(), &out.join(format!("{i}_image.png")))?;
        save_gray_png(gray.view(), &out.join(format!("{i}_gray.png")))?;
    }
    println!("wrote {}", out.display());
    Ok(())
}
