//! End-to-end tests of the command-line surface: exit codes, pinned report
//! strings, determinism, and the simulator/engine parity flag.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_crackseg")
}

fn workdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("crackseg_cli_{name}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(bin()).args(args).current_dir(cwd).output().expect("spawn crackseg")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

fn data_csv() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/platform_measurements.csv")
        .display()
        .to_string()
}

/// Deterministic little test image, written as binary PPM.
fn write_test_image(path: &Path, seed: u64, hw: usize) {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    let mut payload = Vec::with_capacity(hw * hw * 3);
    for _ in 0..hw * hw * 3 {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        payload.push((state >> 32) as u8);
    }
    let mut bytes = format!("P6\n{hw} {hw}\n255\n").into_bytes();
    bytes.extend_from_slice(&payload);
    std::fs::write(path, bytes).unwrap();
}

#[test]
fn build_reports_reference_stats_for_original_scale() {
    let dir = workdir("build32");
    let out = run(&["build", "--c", "32", "--seed", "1", "--out", "m.cfw"], &dir);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("params 7.763M"), "{text}");
    assert!(text.contains("GOPs 24.15"), "{text}");
    assert!(dir.join("m.cfw").exists());
    assert!(dir.join("m.stats.txt").exists());
}

#[test]
fn invalid_scale_exits_with_usage_code() {
    let dir = workdir("badscale");
    let out = run(&["build", "--c", "7", "--out", "m.cfw"], &dir);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[config]"));
}

#[test]
fn same_seed_builds_identical_containers() {
    let dir = workdir("determinism");
    assert!(run(&["build", "--c", "2", "--seed", "9", "--out", "a.cfw"], &dir).status.success());
    assert!(run(&["build", "--c", "2", "--seed", "9", "--out", "b.cfw"], &dir).status.success());
    let a = std::fs::read(dir.join("a.cfw")).unwrap();
    let b = std::fs::read(dir.join("b.cfw")).unwrap();
    assert_eq!(a, b);
    assert!(run(&["build", "--c", "2", "--seed", "10", "--out", "c.cfw"], &dir).status.success());
    assert_ne!(std::fs::read(dir.join("c.cfw")).unwrap(), a);
}

#[test]
fn quantize_simulate_verify_roundtrip() {
    let dir = workdir("simverify");
    assert!(run(&["build", "--c", "2", "--seed", "3", "--out", "m.cfw"], &dir).status.success());
    std::fs::create_dir_all(dir.join("calib")).unwrap();
    for i in 0..2u64 {
        write_test_image(&dir.join(format!("calib/{i}.ppm")), i + 1, 32);
    }
    write_test_image(&dir.join("input.ppm"), 77, 32);
    let q = run(
        &["quantize", "--model", "m.cfw", "--calib-dir", "calib", "--weight-bits", "8", "--out", "q.cfw"],
        &dir,
    );
    assert!(q.status.success(), "{}", String::from_utf8_lossy(&q.stderr));
    assert!(dir.join("q.saturation.txt").exists());

    for skip in ["on_chip", "off_chip"] {
        let s = run(
            &[
                "simulate", "--model", "q.cfw", "--input", "input.ppm", "--skip", skip,
                "--frames", "2", "--report-csv", "rep.csv", "--plan-dump", "plan.txt",
                "--verify",
            ],
            &dir,
        );
        assert!(s.status.success(), "{}", String::from_utf8_lossy(&s.stderr));
        let text = stdout(&s);
        assert!(text.contains("verified: simulator logits match the integer engine"), "{text}");
        let report = std::fs::read_to_string(dir.join("rep.csv")).unwrap();
        assert!(report.lines().count() == 2);
        assert!(report.contains("false")); // no deadlock
    }
}

#[test]
fn infer_writes_masks() {
    let dir = workdir("infer");
    assert!(run(&["build", "--c", "2", "--seed", "4", "--out", "m.cfw"], &dir).status.success());
    write_test_image(&dir.join("img.ppm"), 5, 32);
    let out = run(
        &["infer", "--model", "m.cfw", "--images", "img.ppm", "--out-dir", "masks"],
        &dir,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mask = std::fs::read(dir.join("masks/img.pgm")).unwrap();
    assert!(mask.starts_with(b"P5"));
}

#[test]
fn metrics_reproduces_reference_efficiency_columns() {
    let dir = workdir("metrics");
    let out = run(&["metrics", "--measurements", &data_csv(), "--out", "eff.csv"], &dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.join("eff.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "base,device,model_bits,data_bits,fps,idle_w,runtime_w,dyn_eff,rt_eff"
    );
    let first = lines.next().unwrap();
    assert!(first.ends_with("35.09,25.26"), "{first}");
}

#[test]
fn metrics_scores_masks_micro_averaged() {
    let dir = workdir("scores");
    std::fs::create_dir_all(dir.join("gt")).unwrap();
    std::fs::create_dir_all(dir.join("pred")).unwrap();
    // 2x2 masks: one perfect, one fully wrong on the crack class.
    let write_mask = |path: PathBuf, pixels: &[u8]| {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend(pixels.iter().map(|&v| if v == 0 { 0u8 } else { 255 }));
        std::fs::write(path, bytes).unwrap();
    };
    write_mask(dir.join("gt/a.pgm"), &[1, 1, 0, 0]);
    write_mask(dir.join("pred/a.pgm"), &[1, 1, 0, 0]);
    write_mask(dir.join("gt/b.pgm"), &[1, 0, 0, 1]);
    write_mask(dir.join("pred/b.pgm"), &[0, 1, 1, 0]);
    let out = run(
        &["metrics", "--pred-dir", "pred", "--gt-dir", "gt", "--out", "scores.csv"],
        &dir,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.join("scores.csv")).unwrap();
    assert!(csv.lines().count() == 4); // header + 2 images + TOTAL
    let total = csv.lines().last().unwrap();
    // Micro-average: tp=2 fp=2 fn=2 tn=2 -> iou 1/3 each.
    assert!(total.starts_with("TOTAL,0.333333,0.333333,0.333333,0.333333"), "{total}");
}

#[test]
fn pareto_emits_reference_front() {
    let dir = workdir("pareto");
    let out = run(
        &["pareto", "--points", &data_csv(), "--front-out", "front.csv", "--svg-out", "front.svg"],
        &dir,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let front = std::fs::read_to_string(dir.join("front.csv")).unwrap();
    let rows: Vec<&str> = front.lines().skip(1).collect();
    assert_eq!(rows.len(), 5);
    assert!(rows[0].ends_with("47.92,71.16"), "{}", rows[0]);
    assert!(rows[4].ends_with("544.65,68.91"), "{}", rows[4]);
    assert!(std::fs::read_to_string(dir.join("front.svg")).unwrap().contains("<svg"));
}

#[test]
fn config_file_seeds_flags_and_rejects_unknown_keys() {
    let dir = workdir("config");
    std::fs::write(dir.join("run.cfg"), "c=2\nseed=11\nout=from_cfg.cfw\n").unwrap();
    let out = run(&["--config", "run.cfg", "build"], &dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("from_cfg.cfw").exists());
    let text = stdout(&out);
    assert!(text.contains("# resolved configuration (build)"), "{text}");
    assert!(text.contains("seed=11"), "{text}");

    // Flag overrides the file.
    let out = run(&["--config", "run.cfg", "build", "--out", "override.cfw"], &dir);
    assert!(out.status.success());
    assert!(dir.join("override.cfw").exists());
    assert_eq!(
        std::fs::read(dir.join("from_cfg.cfw")).unwrap(),
        std::fs::read(dir.join("override.cfw")).unwrap()
    );

    std::fs::write(dir.join("bad.cfg"), "c=2\nnot_a_key=1\n").unwrap();
    let out = run(&["--config", "bad.cfg", "build", "--out", "x.cfw"], &dir);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn corrupted_container_is_a_data_error() {
    let dir = workdir("corrupt");
    assert!(run(&["build", "--c", "2", "--seed", "1", "--out", "m.cfw"], &dir).status.success());
    let mut bytes = std::fs::read(dir.join("m.cfw")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    std::fs::write(dir.join("m.cfw"), bytes).unwrap();
    write_test_image(&dir.join("img.ppm"), 6, 32);
    let out = run(&["infer", "--model", "m.cfw", "--images", "img.ppm", "--out-dir", "o"], &dir);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[data]"));
}
