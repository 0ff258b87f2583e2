use std::path::Path;
use std::process::{Command, Output};

use image::{GrayImage, Luma};

fn polypseg(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polypseg"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

const TINY: &str = r#"
seed = 1
[data.synthetic]
size = 32
count = 4
seed = 1
[network]
width = 2
downsample = 4
[train]
lr = 0.001
batch_size = 2
iterations = 6
"#;

fn write(dir: &Path, name: &str, body: &str) -> String {
    std::fs::write(dir.join(name), body).unwrap();
    name.to_string()
}

#[test]
fn gradcheck_passes_and_catches_flipped_sign() {
    let dir = tempfile::tempdir().unwrap();
    let ok = polypseg(&["gradcheck", "-o", "gc"], dir.path());
    assert_eq!(code(&ok), 0, "{}", text(&ok));
    let table = std::fs::read_to_string(dir.path().join("gc/gradcheck.txt")).unwrap();
    for layer in ["conv2d", "deconv", "relu", "maxpool", "batchnorm", "softmax_xent", "toy-fcn"] {
        assert!(table.contains(layer), "{layer} missing from\n{table}");
    }
    let bad = polypseg(&["gradcheck", "-o", "gc2", "--inject-sign-flip"], dir.path());
    assert_eq!(code(&bad), 5);
    assert!(text(&bad).contains("conv2d/input"), "{}", text(&bad));
}

#[test]
fn zero_iterations_writes_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", TINY);
    let o = polypseg(&["train", "-c", &cfg, "-o", "run", "--iterations", "0"], dir.path());
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(dir.path().join("run/final.ckpt").exists());
    assert_eq!(std::fs::read_to_string(dir.path().join("run/loss.csv")).unwrap(), "iteration,loss\n");
    let echo = std::fs::read_to_string(dir.path().join("run/config.toml")).unwrap();
    assert!(echo.contains("iterations = 0"));
}

#[test]
fn config_echo_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", TINY);
    let first = polypseg(&["train", "-c", &cfg, "-o", "a", "--seed", "4"], dir.path());
    assert_eq!(code(&first), 0, "{}", text(&first));
    let again = polypseg(&["train", "-c", "a/config.toml", "-o", "b"], dir.path());
    assert_eq!(code(&again), 0, "{}", text(&again));
    let read = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("a/final.ckpt"), read("b/final.ckpt"));
    assert_eq!(read("a/loss.csv"), read("b/loss.csv"));
    assert!(dir.path().join("a/loss.png").exists());

    let rep = polypseg(&["report", "-o", "rep", "a", "b"], dir.path());
    assert_eq!(code(&rep), 0, "{}", text(&rep));
    assert!(std::fs::read_to_string(dir.path().join("rep/report.txt")).unwrap().contains("iterations 6"));
}

#[test]
fn error_classes_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let typo = write(dir.path(), "typo.toml", "[train]\nlearnig_rate = 0.1\n");
    assert_eq!(code(&polypseg(&["train", "-c", &typo], dir.path())), 2);

    let o = polypseg(&["train", "-o", "x", "--data", "does-not-exist"], dir.path());
    assert_eq!(code(&o), 3, "{}", text(&o));

    let cfg = write(dir.path(), "c.toml", TINY);
    let o = polypseg(&["train", "-c", &cfg, "-o", "div", "--lr", "1e6", "--momentum", "0", "--iterations", "50"], dir.path());
    assert_eq!(code(&o), 4, "{}", text(&o));
    assert!(dir.path().join("div/diverged.ckpt").exists());

    let threads = Command::new(env!("CARGO_BIN_EXE_polypseg"))
        .args(["gradcheck", "-o", "t"])
        .current_dir(dir.path())
        .env("POLYP_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&threads), 2);
}

#[test]
fn eval_predictor_modes_and_channel_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let base = format!("{TINY}[eval]\nfigures = 1\n");
    let oracle = write(dir.path(), "oracle.toml", &base.replace("[eval]\n", "[eval]\npredictor = \"oracle\"\n"));
    let o = polypseg(&["eval", "-c", &oracle, "-o", "oracle"], dir.path());
    assert_eq!(code(&o), 0, "{}", text(&o));
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("oracle/metrics.json")).unwrap()).unwrap();
    for k in ["seg_precision", "seg_recall", "seg_iu", "det_precision", "det_recall"] {
        assert_eq!(metrics["macro_rates"][k], 1.0, "{k}");
    }
    assert_eq!(std::fs::read_dir(dir.path().join("oracle/figures")).unwrap().count(), 1);

    let empty = write(dir.path(), "empty.toml", &base.replace("[eval]\n", "[eval]\npredictor = \"empty\"\n"));
    let o = polypseg(&["eval", "-c", &empty, "-o", "empty"], dir.path());
    assert_eq!(code(&o), 0);
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("empty/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["micro_rates"]["seg_recall"], 0.0);
    assert_eq!(metrics["micro_rates"]["det_recall"], 0.0);

    let cfg = write(dir.path(), "c.toml", &base);
    let o = polypseg(&["train", "-c", &cfg, "-o", "rgbd", "--input", "rgbd", "--iterations", "2"], dir.path());
    assert_eq!(code(&o), 0, "{}", text(&o));
    let o = polypseg(&["eval", "-c", &cfg, "-o", "ev", "--checkpoint", "rgbd/final.ckpt"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(text(&o).contains("RGB-D"), "{}", text(&o));
    let o = polypseg(
        &["eval", "-c", &cfg, "-o", "ev", "--checkpoint", "rgbd/final.ckpt", "--input", "rgbd"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(dir.path().join("ev/per_image.csv").exists());
}

#[test]
fn synth_corpus_trains_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", TINY);
    let o = polypseg(&["synth", "-c", &cfg, "-o", "corpus"], dir.path());
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert_eq!(std::fs::read_dir(dir.path().join("corpus/images")).unwrap().count(), 4);
    let o = polypseg(&["train", "-c", &cfg, "-o", "run", "--data", "corpus", "--patch", "16"], dir.path());
    assert_eq!(code(&o), 0, "{}", text(&o));
}

#[test]
fn sfs_flags_black_frames_without_failing() {
    let dir = tempfile::tempdir().unwrap();
    let imgs = dir.path().join("imgs");
    std::fs::create_dir_all(&imgs).unwrap();
    GrayImage::new(16, 16).save(imgs.join("black.png")).unwrap();
    GrayImage::from_fn(16, 16, |x, y| Luma([120 + (x + y) as u8])).save(imgs.join("ramp.png")).unwrap();
    let o = polypseg(&["sfs", "-o", "out", "--images", "imgs"], dir.path());
    assert_eq!(code(&o), 0, "{}", text(&o));
    let report = std::fs::read_to_string(dir.path().join("out/sfs_report.csv")).unwrap();
    let black = report.lines().find(|l| l.starts_with("black,")).unwrap();
    assert!(black.starts_with("black,false,true"), "{black}");
    assert!(dir.path().join("out/depth/ramp.pgm").exists());
    assert!(dir.path().join("out/depth/ramp.pgm.txt").exists());
}
