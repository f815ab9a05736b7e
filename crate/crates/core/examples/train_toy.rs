//! Trains the desk-sized model on procedural textures and reports the
//! hole-region error before and after.
//!
//! cargo run --release --example train_toy -- [iterations] [seed]

use std::time::Instant;

use inpaint::checkpoint::Phase;
use inpaint::datapipe::synth_dataset;
use inpaint::model::ModelConfig;
use inpaint::trainer::{hole_l1, TrainConfig, Trainer};

fn main() -> inpaint::Result<()> {
    let mut args = std::env::args().skip(1);
    let iters: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(200);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(1);

    let data = synth_dataset(64, 32, seed)?;
    let config = TrainConfig {
        max_iters: iters,
        seed,
        phase: Phase::Initial,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(&ModelConfig::desk(32), config)?;
    println!(
        "generator parameters: {}",
        trainer.model().generator_params().num_parameters()
    );
    let before = hole_l1(trainer.model(), &data)?;
    let start = Instant::now();
    let records = trainer.run(&data, std::io::sink(), None)?;
    for r in records.iter().step_by((iters as usize / 10).max(1)) {
        println!(
            "iter {:4}  total {:.4}  rec {:.4}  style {:.4}  inter {:.4}  D {:.4}",
            r.iteration, r.loss_total, r.loss_rec, r.loss_style, r.loss_inter, r.loss_discriminator
        );
    }
    let after = hole_l1(trainer.model(), &data)?;
    println!(
        "hole l1 {before:.4} -> {after:.4} in {:.1}s ({:.3}s/iter)",
        start.elapsed().as_secs_f64(),
        start.elapsed().as_secs_f64() / iters as f64
    );
    Ok(())
}
