//! Command-line front end: `train`, `eval`, `infer`, `synth-data`, `serve`.
//!
//! Exit codes: 0 success, 2 bad arguments or configuration, 3 file or codec
//! failure, 4 numeric failure.

use std::ffi::OsString;
use std::fs;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::checkpoint::{file_digest, Checkpoint};
use crate::config::RunConfig;
use crate::datapipe::{load_paired_dir, synth_dataset, write_dataset, EdgeParams, Sample};
use crate::error::{Error, Result};
use crate::evaluate::{evaluate, GroundTruth, Predictor, ZeroFill};
use crate::infer::inpaint_image;
use crate::service::{serve, ServiceConfig};
use crate::trainer::Trainer;

/// Directory searched for `checkpoint.safetensors` when no path is given.
pub const CHECKPOINT_DIR_ENV: &str = "INPAINT_CHECKPOINT_DIR";
pub const CHECKPOINT_FILE: &str = "checkpoint.safetensors";

#[derive(Debug, Parser)]
#[command(name = "inpaint", version, about = "Two-stream texture/structure image inpainting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes a checkpoint and a JSON-lines loss log.
    Train(TrainArgs),
    /// PSNR / SSIM per hole-ratio bucket.
    Eval(EvalArgs),
    /// Inpaint one image.
    Infer(InferArgs),
    /// Write a procedural texture dataset.
    SynthData(SynthArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set model.use_cfa=false`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub max_iters: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "runs/latest")]
    pub out: PathBuf,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PredictorKind {
    Model,
    /// Ground truth as prediction.
    Gt,
    /// Holes left at zero.
    Zero,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint file or directory; falls back to `$INPAINT_CHECKPOINT_DIR`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset directory from `synth-data`; procedural samples if unset.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "model")]
    pub predictor: PredictorKind,
    /// Image side, when no checkpoint fixes it.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub seed: u64,
    /// Score raw outputs instead of composites.
    #[arg(long)]
    pub no_composite: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// 8-bit gray PNG, 255 = known.
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub target_size: Option<usize>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    #[arg(long, default_value_t = 4_000_000)]
    pub max_pixels: u64,
    #[arg(long, default_value_t = 2)]
    pub workers: usize,
    /// Allowed CORS origin; `*` for any. Repeatable.
    #[arg(long = "allow-origin", default_value = "http://localhost:5173")]
    pub allowed_origins: Vec<String>,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidInput(_) | Error::InvalidConfig(_) | Error::Shape(_) => 2,
        Error::Io { .. } | Error::Image(_) | Error::Checkpoint(_) => 3,
        Error::NonFinite { .. } | Error::Tensor(_) => 4,
    }
}

/// Explicit path, else `$INPAINT_CHECKPOINT_DIR`. Directories resolve to
/// their `checkpoint.safetensors`.
pub fn resolve_checkpoint(explicit: Option<&Path>) -> Result<PathBuf> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(CHECKPOINT_DIR_ENV).map(PathBuf::from).ok_or_else(|| {
            Error::InvalidConfig(format!("no --checkpoint given and {CHECKPOINT_DIR_ENV} is unset"))
        })?,
    };
    Ok(if path.is_dir() { path.join(CHECKPOINT_FILE) } else { path })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn save_png<P>(img: &image::ImageBuffer<P, Vec<u8>>, path: &Path) -> Result<()>
where
    P: image::PixelWithColorType<Subpixel = u8>,
{
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

fn load_data(dir: Option<&Path>, size: usize, n: usize, seed: u64, edges: EdgeParams) -> Result<Vec<Sample>> {
    match dir {
        Some(d) => load_paired_dir(d, size, edges),
        None => synth_dataset(n, size, seed),
    }
}

fn train(args: TrainArgs) -> Result<()> {
    let mut overrides = args.overrides.clone();
    if let Some(n) = args.max_iters {
        overrides.push(format!("train.max_iters={n}"));
    }
    let cfg = RunConfig::load(args.config.as_deref(), &overrides)?;
    let data = load_data(
        cfg.data.dir.as_deref(),
        cfg.data.size,
        cfg.data.synthetic_n,
        cfg.data.synthetic_seed,
        cfg.data.edges,
    )?;
    create_dir(&args.out)?;
    let config_json = serde_json::to_string_pretty(&cfg).expect("config serialises");
    write_text(&args.out.join("config.json"), &config_json)?;

    let mut trainer = match &args.resume {
        Some(p) => Trainer::resume(p, cfg.train.clone())?,
        None => Trainer::new(&cfg.model, cfg.train.clone())?,
    };
    let log_path = args.out.join("metrics.jsonl");
    let log = fs::OpenOptions::new()
        .create(true)
        .append(args.resume.is_some())
        .write(true)
        .truncate(args.resume.is_none())
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let ckpt = args.out.join(CHECKPOINT_FILE);
    let records = trainer.run(&data, BufWriter::new(log), Some(&ckpt))?;
    if let Some(last) = records.last() {
        println!(
            "iteration {}  total {:.4}  rec {:.4}  -> {}",
            last.iteration,
            last.loss_total,
            last.loss_rec,
            ckpt.display()
        );
    } else {
        println!("already at iteration {}; wrote {}", trainer.iteration(), ckpt.display());
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let model = match args.predictor {
        PredictorKind::Model => {
            let path = resolve_checkpoint(args.checkpoint.as_deref())?;
            Some(Checkpoint::read(&path)?.build_model()?)
        }
        _ => None,
    };
    let size = model.as_ref().map(|m| m.config().image_size).unwrap_or(args.size);
    let data = load_data(args.data.as_deref(), size, args.n, args.seed, EdgeParams::default())?;
    let predictor: &dyn Predictor = match (&model, args.predictor) {
        (Some(m), _) => m,
        (None, PredictorKind::Gt) => &GroundTruth,
        _ => &ZeroFill,
    };
    let table = evaluate(predictor, &data, !args.no_composite)?;
    let text = table.to_text();
    print!("{text}");
    if let Some(out) = &args.out {
        create_dir(out)?;
        write_text(&out.join("eval.json"), &table.to_json())?;
        write_text(&out.join("eval.txt"), &text)?;
    }
    Ok(())
}

fn infer(args: InferArgs) -> Result<()> {
    let path = resolve_checkpoint(args.checkpoint.as_deref())?;
    let model = Checkpoint::read(&path)?.build_model()?;
    let open = |p: &Path| -> Result<image::DynamicImage> {
        Ok(image::ImageReader::open(p)
            .map_err(|e| Error::io(p, e))?
            .with_guessed_format()
            .map_err(|e| Error::io(p, e))?
            .decode()?)
    };
    let image = open(&args.image)?.to_rgb8();
    let mask = open(&args.mask)?.to_luma8();
    let r = inpaint_image(&model, EdgeParams::default(), &image, &mask, args.target_size)?;
    create_dir(&args.out)?;
    save_png(&r.composite, &args.out.join("composite.png"))?;
    save_png(&r.output, &args.out.join("output.png"))?;
    save_png(&r.edges, &args.out.join("edge.png"))?;
    let meta = json!({
        "width": image.width(),
        "height": image.height(),
        "mask_ratio_percent": r.mask_ratio_percent,
        "checkpoint_sha256": file_digest(&path)?,
        "target_size": args.target_size.unwrap_or(model.config().image_size),
    });
    write_text(&args.out.join("meta.json"), &serde_json::to_string_pretty(&meta).expect("json"))?;
    println!("hole ratio {:.1}% -> {}", r.mask_ratio_percent, args.out.display());
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let samples = synth_dataset(args.n, args.size, args.seed)?;
    create_dir(&args.out)?;
    write_dataset(&samples, &args.out)?;
    println!("wrote {} samples to {}", samples.len(), args.out.display());
    Ok(())
}

fn serve_cmd(args: ServeArgs) -> Result<()> {
    let checkpoint = resolve_checkpoint(args.checkpoint.as_deref())?;
    let config = ServiceConfig {
        max_pixels: args.max_pixels,
        allowed_origins: args.allowed_origins,
        workers: args.workers,
        ..ServiceConfig::default()
    };
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::io("tokio runtime", e))?;
    eprintln!("listening on http://{}", args.addr);
    rt.block_on(serve(args.addr, checkpoint, config))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Infer(a) => infer(a),
        Command::SynthData(a) => synth(a),
        Command::Serve(a) => serve_cmd(a),
    }
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::InvalidConfig("x".into())), 2);
        assert_eq!(exit_code(&Error::Checkpoint("x".into())), 3);
        assert_eq!(
            exit_code(&Error::NonFinite {
                iteration: 1,
                detail: String::new()
            }),
            4
        );
        assert_eq!(main_with_args(["inpaint", "frobnicate"]), 2);
        assert_eq!(main_with_args(["inpaint", "train", "--set", "bogus.key=1"]), 2);
    }

    #[test]
    fn directories_resolve_to_checkpoint_file() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(resolve_checkpoint(Some(dir.path())).unwrap(), dir.path().join(CHECKPOINT_FILE));
        let f = dir.path().join("a.safetensors");
        assert_eq!(resolve_checkpoint(Some(&f)).unwrap(), f);
    }
}
