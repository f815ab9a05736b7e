use std::path::Path;
use std::process::{Command, Output};

use image::{GrayImage, Luma};
use sha2::{Digest, Sha256};

fn inpaint(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_inpaint"))
        .args(args)
        .current_dir(cwd)
        .env_remove("INPAINT_CHECKPOINT_DIR")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// SHA-256 over sorted relative paths and contents.
fn tree_hash(root: &Path) -> String {
    fn walk(dir: &Path, root: &Path, files: &mut Vec<(String, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(&p, root, files);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                files.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut files = Vec::new();
    walk(root, root, &mut files);
    files.sort();
    let mut h = Sha256::new();
    for (name, bytes) in files {
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    hex::encode(h.finalize())
}

#[test]
fn synth_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        ok(&inpaint(&["synth-data", "--n", "8", "--seed", "1", "--out", name], dir.path()));
    }
    assert_eq!(tree_hash(&dir.path().join("a")), tree_hash(&dir.path().join("b")));
    let entries: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(entries.len(), 2, "wrote outside the output directory");
}

#[test]
fn eval_ground_truth_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(&inpaint(&["eval", "--predictor", "gt", "--n", "40", "--out", "report"], dir.path()));
    let psnr = text.lines().find(|l| l.starts_with("PSNR")).unwrap();
    let ssim = text.lines().find(|l| l.starts_with("SSIM")).unwrap();
    assert_eq!(psnr.split_whitespace().skip(1).collect::<Vec<_>>(), ["100.00"; 3]);
    assert_eq!(ssim.split_whitespace().skip(1).collect::<Vec<_>>(), ["1.0000"; 3]);
    assert!(dir.path().join("report/eval.json").exists());
}

#[test]
fn train_then_infer() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&inpaint(
        &["train", "--max-iters", "5", "--set", "train.batch_size=2", "--out", "run"],
        d,
    ));
    assert!(d.join("run/checkpoint.safetensors").exists());
    let log = std::fs::read_to_string(d.join("run/metrics.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 5);

    ok(&inpaint(&["synth-data", "--n", "1", "--seed", "3", "--out", "data"], d));
    let image = std::fs::read_dir(d.join("data/images")).unwrap().next().unwrap().unwrap().path();
    let (w, h) = image::image_dimensions(&image).unwrap();
    // 30% hole: a left-side band.
    let band = (w as f64 * 0.3).round() as u32;
    GrayImage::from_fn(w, h, |x, _| Luma([if x < band { 0 } else { 255 }]))
        .save(d.join("mask.png"))
        .unwrap();

    let out = inpaint(
        &[
            "infer",
            "--image",
            image.to_str().unwrap(),
            "--mask",
            "mask.png",
            "--checkpoint",
            "run",
            "--out",
            "result",
        ],
        d,
    );
    ok(&out);
    for png in ["composite.png", "output.png", "edge.png"] {
        assert!(d.join("result").join(png).exists(), "{png} missing");
    }
    let edges = image::open(d.join("result/edge.png")).unwrap().to_luma8();
    assert!(edges.pixels().all(|p| p[0] == 0 || p[0] == 255));
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("result/meta.json")).unwrap()).unwrap();
    assert!((meta["mask_ratio_percent"].as_f64().unwrap() - 30.0).abs() < 2.0);

    // The checkpoint directory can also come from the environment.
    let env_run = Command::new(env!("CARGO_BIN_EXE_inpaint"))
        .args(["infer", "--image", image.to_str().unwrap(), "--mask", "mask.png", "--out", "again"])
        .current_dir(d)
        .env("INPAINT_CHECKPOINT_DIR", d.join("run"))
        .output()
        .unwrap();
    ok(&env_run);
    assert_eq!(
        std::fs::read(d.join("result/composite.png")).unwrap(),
        std::fs::read(d.join("again/composite.png")).unwrap()
    );
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(inpaint(&["train", "--set", "model.nope=1"], d).status.code(), Some(2));
    assert_eq!(inpaint(&["frobnicate"], d).status.code(), Some(2));
    assert_eq!(inpaint(&["infer", "--image", "x.png", "--mask", "y.png"], d).status.code(), Some(2));
    std::fs::write(d.join("bad.safetensors"), b"garbage").unwrap();
    assert_eq!(
        inpaint(&["eval", "--checkpoint", "bad.safetensors"], d).status.code(),
        Some(3)
    );
    assert_eq!(inpaint(&["--help"], d).status.code(), Some(0));
}
