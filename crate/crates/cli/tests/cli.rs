use std::path::Path;
use std::process::{Command, Output};

fn edgesr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgesr")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &[&str] = &[
    "--set", "scale=2",
    "--set", "patch_lr=16",
    "--set", "batch_size=4",
    "--set", "patches_per_epoch=8",
    "--set", "schedule.epochs_pretrain=1",
    "--set", "schedule.epochs_full=1",
    "--set", "model.channels=8",
    "--set", "model.edge_channels=4",
    "--set", "model.blocks=1",
    "--set", "model.disc_channels=4",
    "--set", "model.disc_blocks=3",
    "--quiet",
];

fn synth(dir: &Path, count: usize, size: usize, seed: u64) {
    let out = edgesr(&["synth", "--out", p(dir), "--count", &count.to_string(), "--size", &size.to_string(), "--seed", &seed.to_string()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&edgesr(&[])), 1);
    assert_eq!(code(&edgesr(&["frobnicate"])), 1);
    assert_eq!(code(&edgesr(&["sr", "--ckpt", "x"])), 1);
    assert_eq!(code(&edgesr(&["edges", "--in", "a", "--out", "b", "--low", "0.5", "--high", "0.1"])), 1);
    assert_eq!(code(&edgesr(&["gradcheck", "--module", "no_such_case"])), 1);
    let d = tempfile::tempdir().unwrap();
    let bad_set = edgesr(&["train", "--data", p(d.path()), "--out", p(d.path()), "--set", "model.blocks"]);
    assert_eq!(code(&bad_set), 1);
    let unknown = edgesr(&["train", "--data", p(d.path()), "--out", p(d.path()), "--set", "nope=1"]);
    assert_eq!(code(&unknown), 1);
    let variant = edgesr(&["ablate", "--variant", "no_brain", "--data", p(d.path()), "--out", p(d.path())]);
    assert_eq!(code(&variant), 1);
    assert_eq!(code(&edgesr(&["--help"])), 0);
}

#[test]
fn data_errors_exit_with_two() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&edgesr(&["edges", "--in", p(&d.path().join("missing.png")), "--out", "x.png"])), 2);
    // Empty training directory.
    let out = edgesr(&["train", "--data", p(d.path()), "--out", p(&d.path().join("run"))]);
    assert_eq!(code(&out), 2);
    let corrupt = d.path().join("bad.ckpt");
    std::fs::write(&corrupt, b"not a checkpoint").unwrap();
    assert_eq!(code(&edgesr(&["resume", "--state", p(&corrupt)])), 2);
}

#[test]
fn edges_writes_a_binary_map() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), 1, 40, 4);
    let img = std::fs::read_dir(d.path()).unwrap().next().unwrap().unwrap().path();
    let dst = d.path().join("edges.png");
    let out = edgesr(&["edges", "--in", p(&img), "--out", p(&dst), "--sigma", "1.2"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("edge pixels"));
    let map = edgesr_core::imageio::load_image(&dst).unwrap();
    assert_eq!((map.height(), map.width()), (40, 40));
    assert!(map.data().iter().all(|&v| v == 0.0 || v == 255.0));
}

#[test]
fn train_sr_eval_resume_round_trip() {
    let root = tempfile::tempdir().unwrap();
    let (data, run, lr, sr) = (root.path().join("data"), root.path().join("run"), root.path().join("lr"), root.path().join("sr"));
    synth(&data, 3, 40, 1);

    let cfg = root.path().join("cfg.txt");
    std::fs::write(&cfg, "seed = 9\noptim.lr = 1e-3\n").unwrap();
    let mut args = vec!["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&run)];
    args.extend_from_slice(TINY);
    let out = edgesr(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("epochs 2/2"));
    let log = std::fs::read_to_string(run.join("train.log")).unwrap();
    assert_eq!(edgesr_core::harness::parse_log(&log).unwrap().len(), 4);
    let ckpt = run.join("last.ckpt");

    // Resuming a finished run needs no data.
    assert_eq!(code(&edgesr(&["resume", "--state", p(&ckpt), "--quiet"])), 0);

    synth(&lr, 2, 12, 5);
    let out = edgesr(&["sr", "--ckpt", p(&ckpt), "--in", p(&lr), "--out", p(&sr)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let names: Vec<_> = std::fs::read_dir(&sr).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(names.len(), 2);
    let up = edgesr_core::imageio::load_image(&names[0]).unwrap();
    assert_eq!((up.height(), up.width()), (24, 24));
    assert_eq!(code(&edgesr(&["sr", "--ckpt", p(&ckpt), "--in", p(&lr), "--out", p(&sr), "--scale", "4"])), 2);

    let csv = root.path().join("scores.csv");
    let out = edgesr(&["eval", "--sr", p(&sr), "--hr", p(&sr), "--csv", p(&csv)]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("inf"));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("name,psnr_db,ssim\n"));
    assert_eq!(text.lines().count(), 3);
    // Missing counterpart.
    assert_eq!(code(&edgesr(&["eval", "--sr", p(&sr), "--hr", p(&data)])), 2);
}

#[test]
fn ablate_reports_held_out_scores() {
    let root = tempfile::tempdir().unwrap();
    let (data, held, run) = (root.path().join("data"), root.path().join("held"), root.path().join("run"));
    synth(&data, 3, 40, 1);
    synth(&held, 2, 32, 2);
    let mut args = vec!["ablate", "--variant", "no_adversarial", "--data", p(&data), "--out", p(&run), "--held-out", p(&held)];
    args.extend_from_slice(TINY);
    let out = edgesr(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.starts_with("no_adversarial") && text.contains("bicubic"), "{text}");
}

#[test]
fn gradcheck_filters_by_module() {
    let out = edgesr(&["gradcheck", "--module", "pixel_shuffle", "--seeds", "1,2"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("2 of 2 checks passed"), "{text}");
}
