//! Builds the generator and its ablations, reports parameter counts, runs
//! one forward pass and inspects the gated fusion.
//!
//! cargo run --release --example generator

use candle_core::DType;
use inpaint::datapipe::{synth_dataset, Batch, Sample};
use inpaint::generator::{backbone_parameter_count, single_stream_scale, Generator, GeneratorConfig};
use inpaint::nn::{seeded_rng, Init, ParamStore, RunMode};

fn build(cfg: &GeneratorConfig) -> inpaint::Result<(Generator, ParamStore)> {
    let mut store = ParamStore::new();
    let mut rng = seeded_rng(0);
    let g = Generator::new(&mut Init::new(&mut store, &mut rng, DType::F32), cfg)?;
    Ok((g, store))
}

fn main() -> inpaint::Result<()> {
    let full = GeneratorConfig::desk(64);
    let variants = [
        ("full model", full.clone()),
        ("no cross borrowing", GeneratorConfig { cross_borrow: false, ..full.clone() }),
        ("no bi-gff", GeneratorConfig { use_bigff: false, ..full.clone() }),
        ("no cfa", GeneratorConfig { use_cfa: false, ..full.clone() }),
        ("single-scale cfa", GeneratorConfig { multiscale_cfa: false, ..full.clone() }),
        ("single stream", GeneratorConfig { two_stream: false, ..full.clone() }),
    ];
    println!("{:<20} {:>10} {:>10}", "variant", "backbone", "total");
    for (name, cfg) in &variants {
        let (_, store) = build(cfg)?;
        println!("{name:<20} {:>10} {:>10}", backbone_parameter_count(cfg), store.num_parameters());
    }
    let single = GeneratorConfig { two_stream: false, ..full.clone() };
    println!("single-stream width multiplier {:.3}", single_stream_scale(&single));

    let (generator, _) = build(&full)?;
    let data = synth_dataset(2, 64, 3)?;
    let refs: Vec<&Sample> = data.iter().collect();
    let batch = Batch::from_samples(&refs, DType::F32)?;
    let out = generator.forward(&batch.input, RunMode::Eval)?;
    println!("image {:?}  edge {:?}  preview {:?}", out.image.dims(), out.edge.dims(), out.texture_preview.dims());

    let feats = generator.encode(&batch.input, RunMode::Eval)?;
    for (level, m) in feats.masks_per_level.iter().enumerate() {
        let cov = m.mean_all()?.to_scalar::<f32>()?;
        println!("encoder level {} {:?} known {:.1}%", level + 1, m.dims(), 100.0 * cov);
    }

    if let Some(bigff) = generator.bigff() {
        let decoded = generator.decode(&feats, RunMode::Eval)?;
        let trace = bigff.fuse_traced(&decoded.texture, &decoded.structure)?;
        println!(
            "bi-gff alpha {} beta {}  mean gates texture {:.3} structure {:.3}  fused {:?}",
            bigff.alpha().as_tensor().flatten_all()?.to_vec1::<f32>()?[0],
            bigff.beta().as_tensor().flatten_all()?.to_vec1::<f32>()?[0],
            trace.texture_gate.mean_all()?.to_scalar::<f32>()?,
            trace.structure_gate.mean_all()?.to_scalar::<f32>()?,
            trace.fused.dims()
        );
    }
    Ok(())
}
