use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use wavunet::imagecore::save_image;
use wavunet::pipeline::synth::{generate, SyntheticKind};

const TINY: &str = "model.base_channels = 2\nmodel.depth = 1\ntrain.patch_size = 16\ntrain.batch_size = 2\ntrain.epochs = 1\n";

fn wavunet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wavunet")).args(args).env_remove("SELFTEST_INJECT").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new(images: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        fs::create_dir(&data).unwrap();
        for (name, img) in generate(SyntheticKind::Scenes, images, 32, 4) {
            save_image(&img, data.join(format!("{name}.png"))).unwrap();
        }
        fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        let (data, out, cfg) = (self.path("data"), self.path(out), self.path("tiny.cfg"));
        let mut args = vec!["train", "--data", s(&data), "--out", s(&out), "--config", s(&cfg)];
        args.extend_from_slice(extra);
        wavunet(&args)
    }

    fn trained(&self) -> PathBuf {
        let o = self.train("run", &[]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        self.path("run/checkpoint.wuc")
    }
}

#[test]
fn train_without_data_is_a_usage_error() {
    let o = wavunet(&["train", "--out", "x"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
}

#[test]
fn zero_epochs_is_rejected_before_reading_data() {
    let o = wavunet(&["train", "--data", "/nonexistent", "--out", "x", "--epochs", "0"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("epochs"));
}

#[test]
fn unknown_config_key_is_an_error() {
    let f = Fixture::new(4);
    fs::write(f.path("tiny.cfg"), format!("{TINY}train.learning_rate = 0.1\n")).unwrap();
    let o = f.train("run", &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("learning_rate"));
}

#[test]
fn missing_data_directory_is_a_data_error() {
    let f = Fixture::new(1);
    let (absent, out) = (f.path("absent"), f.path("run"));
    let o = wavunet(&["train", "--data", s(&absent), "--out", s(&out)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn train_writes_artifacts_and_flags_override_file() {
    let f = Fixture::new(4);
    fs::write(f.path("tiny.cfg"), TINY.replace("train.epochs = 1", "train.epochs = 5\nmodel.alpha = 0.3")).unwrap();
    let o = f.train("run", &["--alpha", "0.7", "--seed", "2", "--epochs", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ckpt = wavunet::training::load_checkpoint(f.path("run/checkpoint.wuc")).unwrap();
    assert_eq!(ckpt.model.fusion.alpha, 0.7);
    assert_eq!(ckpt.model.fusion.beta, 1.0);
    assert_eq!(ckpt.train.epochs, 1);
    assert_eq!(ckpt.train.seed, 2);
    let losses = fs::read_to_string(f.path("run/loss.csv")).unwrap();
    assert_eq!(losses.lines().count(), 2);
    assert!(stdout(&o).lines().any(|l| l.starts_with("epoch=1 ")));
    assert!(f.path("run/split.json").is_file());
}

#[test]
fn resume_extends_a_finished_run() {
    let f = Fixture::new(4);
    f.trained();
    let o = f.train("run", &["--epochs", "2", "--resume"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ckpt = wavunet::training::load_checkpoint(f.path("run/checkpoint.wuc")).unwrap();
    assert_eq!((ckpt.epoch, ckpt.losses.len()), (2, 2));

    // a different architecture cannot resume from this checkpoint
    let o = f.train("run", &["--epochs", "3", "--resume", "--beta", "0"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn denoise_writes_output_and_scores_reference() {
    let f = Fixture::new(4);
    let ckpt = f.trained();
    let clean = f.path("data/scene_00.png");
    let noisy = f.path("noisy.png");
    let x = wavunet::imagecore::load_image(&clean).unwrap();
    let y = wavunet::imagecore::add_noise(&x, &wavunet::NoiseSpec::gaussian(0.1, 1));
    save_image(&y, &noisy).unwrap();
    let out = f.path("denoised.png");
    let o = wavunet(&["denoise", "--model", s(&ckpt), "--in", s(&noisy), "--out", s(&out), "--reference", s(&clean)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.is_file());
    let line = stdout(&o).lines().find(|l| l.starts_with("psnr_db=")).unwrap().to_string();
    let psnr: f64 = line.split(' ').next().unwrap()["psnr_db=".len()..].parse().unwrap();
    assert!(psnr > 10.0, "{line}");
}

#[test]
fn denoise_refuses_to_overwrite_its_inputs() {
    let f = Fixture::new(4);
    let ckpt = f.trained();
    let input = f.path("data/scene_01.png");
    let before = fs::read(&input).unwrap();
    let o = wavunet(&["denoise", "--model", s(&ckpt), "--in", s(&input), "--out", s(&input)]);
    assert_eq!(code(&o), 1);
    let reference = f.path("data/scene_00.png");
    let o = wavunet(&["denoise", "--model", s(&ckpt), "--in", s(&input), "--out", s(&reference), "--reference", s(&reference)]);
    assert_eq!(code(&o), 1);
    assert_eq!(fs::read(&input).unwrap(), before);
}

#[test]
fn corrupt_checkpoint_reports_checksum() {
    let f = Fixture::new(4);
    let ckpt = f.trained();
    let mut bytes = fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    fs::write(&ckpt, &bytes).unwrap();
    let input = f.path("data/scene_00.png");
    let o = wavunet(&["denoise", "--model", s(&ckpt), "--in", s(&input), "--out", s(&f.path("o.png"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("checksum"), "{}", stderr(&o));
}

#[test]
fn future_checkpoint_version_is_named() {
    let f = Fixture::new(4);
    let ckpt = f.trained();
    let mut bytes = fs::read(&ckpt).unwrap();
    bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
    let n = bytes.len() - 4;
    let crc = crc32fast::hash(&bytes[..n]);
    bytes[n..].copy_from_slice(&crc.to_le_bytes());
    fs::write(&ckpt, &bytes).unwrap();
    let input = f.path("data/scene_00.png");
    let o = wavunet(&["denoise", "--model", s(&ckpt), "--in", s(&input), "--out", s(&f.path("o.png"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("version 7"), "{}", stderr(&o));
}

#[test]
fn eval_writes_one_row_per_image() {
    let f = Fixture::new(5);
    let ckpt = f.trained();
    let report = f.path("eval");
    let o = wavunet(&["eval", "--model", s(&ckpt), "--data", s(&f.path("data")), "--sigma", "0.1", "--report", s(&report)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(report.join("eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert!(stdout(&o).starts_with("images=5 "));
    assert!(fs::read_to_string(report.join("eval.md")).unwrap().contains("sigma = 0.1000"));
}

#[test]
fn eval_requires_explicit_sigma() {
    let o = wavunet(&["eval", "--model", "m.wuc", "--data", "d", "--report", "r"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--sigma"));
}

#[test]
fn numeric_blow_up_exits_3() {
    let f = Fixture::new(4);
    fs::write(f.path("tiny.cfg"), format!("{TINY}train.lr_init = 1e38\n")).unwrap();
    let o = f.train("run", &["--epochs", "3"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite"));
}

#[test]
fn report_trains_every_listed_preset() {
    let f = Fixture::new(4);
    let spec = r#"{
        "datasets": [{"name": "local", "source": {"type": "directory", "path": "data"}, "val_fraction": 0.25}],
        "noise": {"kind": "gaussian", "sigma": 0.1, "seed": 3},
        "presets": [{"alpha": 1.0, "beta": 1.0}, {"alpha": 0.7, "beta": 0.3}, {"alpha": 0.3, "beta": 0.7}],
        "train": {"epochs": 1, "batch_size": 2, "patch_size": 16},
        "model": {"base_channels": 2, "depth": 1}
    }"#;
    fs::write(f.path("spec.json"), spec).unwrap();
    let out = f.path("report");
    let o = wavunet(&["report", "--spec", s(&f.path("spec.json")), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "dataset,alpha,beta,method,psnr_db,ssim");
    assert_eq!(rows.len(), 6);
    let models: Vec<&str> = rows.iter().filter_map(|r| r.split(',').nth(3)).filter(|m| m.starts_with("unet")).collect();
    assert_eq!(models, ["unet-a1-b1", "unet-a0.7-b0.3", "unet-a0.3-b0.7"]);
    let cached = fs::read_dir(out.join("cache")).unwrap().filter(|e| {
        e.as_ref().unwrap().path().extension().is_some_and(|x| x == "wuc")
    });
    assert_eq!(cached.count(), 3);
    let mut triptychs: Vec<String> = fs::read_dir(out.join("triptychs/local"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    triptychs.sort();
    assert_eq!(triptychs.len(), 5, "{triptychs:?}");
    assert!(triptychs.iter().any(|n| n.ends_with("_unet-a0.7-b0.3.png")));
    assert!(triptychs.iter().any(|n| n.ends_with("_wavelet-soft-threshold.png")));
}

#[test]
fn report_with_missing_spec_is_a_usage_error() {
    let o = wavunet(&["report", "--spec", "/nonexistent/spec.json", "--out", "r"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn selftest_passes_and_injected_fault_fails() {
    let o = wavunet(&["selftest"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.lines().filter(|l| l.contains(" PASS ")).count() >= 9, "{out}");
    assert!(out.lines().last().unwrap().contains("failed=0"));

    let o = Command::new(env!("CARGO_BIN_EXE_wavunet")).arg("selftest").env("SELFTEST_INJECT", "dwt").output().unwrap();
    assert_eq!(code(&o), 4);
    assert!(stdout(&o).lines().any(|l| l.starts_with("dwt_round_trip") && l.contains("FAIL")));
}

#[test]
fn synth_writes_requested_images() {
    let dir = tempfile::tempdir().unwrap();
    let o = wavunet(&["synth", "--kind", "synth-signature", "--count", "3", "--size", "32", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 3);
    assert_eq!(stdout(&o).lines().count(), 3);
}

#[test]
fn help_exits_zero() {
    let o = wavunet(&["--help"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("selftest"));
}
