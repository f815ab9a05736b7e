//! Train briefly, save, reload into a fresh process-local model and confirm
//! identical outputs and a stable file digest.
//!
//! cargo run --release --example checkpoint -- [path]

use std::path::PathBuf;

use candle_core::DType;
use inpaint::checkpoint::{file_digest, Checkpoint};
use inpaint::datapipe::{synth_dataset, Batch};
use inpaint::model::ModelConfig;
use inpaint::trainer::{TrainConfig, Trainer};

fn main() -> inpaint::Result<()> {
    let path = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "toy.safetensors".into()));
    let data = synth_dataset(16, 32, 5)?;
    let mut trainer = Trainer::new(&ModelConfig::desk(32), TrainConfig { max_iters: 3, batch_size: 2, ..TrainConfig::default() })?;
    trainer.run(&data, std::io::sink(), Some(&path))?;
    let digest = file_digest(&path)?;

    let ckpt = Checkpoint::read(&path)?;
    println!("{}: phase {} iteration {}", path.display(), ckpt.meta.phase, ckpt.meta.iteration);
    let restored = ckpt.build_model()?;
    let refs: Vec<_> = data.iter().take(2).collect();
    let batch = Batch::from_samples(&refs, DType::F32)?;
    let a = trainer.model().inpaint_batch(&batch)?.composite;
    let b = restored.inpaint_batch(&batch)?.composite;
    let diff = (a - b)?.abs()?.flatten_all()?.max(0)?.to_scalar::<f32>()?;
    println!("max output difference after reload: {diff}");

    let mut resumed = Trainer::resume(&path, trainer.config().clone())?;
    resumed.save(&path)?;
    println!("digest stable across load/save: {}", digest == file_digest(&path)?);
    Ok(())
}
