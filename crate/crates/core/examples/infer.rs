//! Inpaint a synthetic image with a centred square hole and write the
//! composite, raw output and predicted edges.
//!
//! cargo run --release --example infer -- [checkpoint] [out_dir]
//! Without a checkpoint an untrained model is used.

use std::path::PathBuf;

use image::{GrayImage, Luma};
use inpaint::checkpoint::Checkpoint;
use inpaint::datapipe::{array_to_rgb, synth_dataset, EdgeParams};
use inpaint::infer::inpaint_image;
use inpaint::model::{InpaintModel, ModelConfig};

fn main() -> inpaint::Result<()> {
    let mut args = std::env::args().skip(1);
    let model = match args.next() {
        Some(p) if p != "-" => Checkpoint::read(&PathBuf::from(p))?.build_model()?,
        _ => InpaintModel::new(&ModelConfig::desk(32), 0)?,
    };
    let out = PathBuf::from(args.next().unwrap_or_else(|| "infer_out".into()));
    std::fs::create_dir_all(&out).expect("create output dir");

    let image = array_to_rgb(synth_dataset(1, 96, 21)?[0].image_gt())?;
    let mask = GrayImage::from_fn(96, 96, |x, y| Luma([if (30..66).contains(&x) && (30..66).contains(&y) { 0 } else { 255 }]));
    let r = inpaint_image(&model, EdgeParams::default(), &image, &mask, None)?;
    for (name, result) in [
        ("input.png", image.save(out.join("input.png"))),
        ("mask.png", mask.save(out.join("mask.png"))),
        ("composite.png", r.composite.save(out.join("composite.png"))),
        ("output.png", r.output.save(out.join("output.png"))),
        ("edge.png", r.edges.save(out.join("edge.png"))),
    ] {
        result?;
        println!("wrote {}", out.join(name).display());
    }
    println!("hole ratio {:.1}%", r.mask_ratio_percent);
    Ok(())
}
