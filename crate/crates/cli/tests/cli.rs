//! End-to-end CLI behavior over real files and processes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ride_core::grid::Grid2D;
use ride_core::imgio;
use ride_core::synth;

fn ride() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ride"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = ride().args(args).output().expect("spawn ride");
    assert!(
        out.status.success(),
        "ride {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_err(args: &[&str]) -> Output {
    let out = ride().args(args).output().expect("spawn ride");
    assert!(!out.status.success(), "ride {args:?} unexpectedly succeeded");
    out
}

fn write_texture(path: &Path, rows: usize, cols: usize, seed: u64) {
    let img = synth::gaussian_mrf(rows, cols, 0.8, 0.8, 0.18, seed);
    imgio::write_image(&img, path).unwrap();
}

fn train_tiny_model(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    std::fs::create_dir_all(&data).unwrap();
    for k in 0..3 {
        write_texture(&data.join(format!("t{k}.pgm")), 24, 24, 100 + k);
    }
    let model = dir.join("model.rm");
    run_ok(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
        "--epochs",
        "2",
        "--patch-start",
        "8",
        "--patch-end",
        "10",
        "--lr",
        "2e-3",
        "--batch-size",
        "4",
        "--patches-per-epoch",
        "32",
        "--hidden",
        "10",
        "--components",
        "3",
        "--scales",
        "2",
        "--no-dequantize",
        "--seed",
        "1",
    ]);
    model
}

#[test]
fn eval_identical_images_reports_inf_and_unit_ssim() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("a.pgm");
    write_texture(&img, 24, 24, 1);
    let csv = dir.path().join("eval.csv");
    run_ok(&[
        "eval",
        "--ref",
        img.to_str().unwrap(),
        "--test",
        img.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
        "--id",
        "self",
        "--mr",
        "0.4",
        "--method",
        "identity",
    ]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "image_id,mr,method,psnr_db,ssim");
    let row = lines.next().unwrap();
    assert_eq!(row, "self,0.4,identity,inf,1.000000");
}

#[test]
fn full_rate_recovery_is_essentially_exact() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_tiny_model(dir.path());
    let img = dir.path().join("truth.pgm");
    write_texture(&img, 16, 16, 9);

    let y = dir.path().join("y.bin");
    let op = dir.path().join("op.bin");
    run_ok(&[
        "sense",
        "--in",
        img.to_str().unwrap(),
        "--op",
        "gaussian",
        "--mr",
        "1.0",
        "--seed",
        "2",
        "--out-y",
        y.to_str().unwrap(),
        "--out-op",
        op.to_str().unwrap(),
    ]);
    let rec = dir.path().join("rec.pgm");
    run_ok(&[
        "recover",
        "--model",
        model.to_str().unwrap(),
        "--y",
        y.to_str().unwrap(),
        "--op",
        op.to_str().unwrap(),
        "--out",
        rec.to_str().unwrap(),
        "--iters",
        "1",
        "--seed",
        "3",
    ]);

    // Square orthonormal system: the first projection recovers the signal
    // exactly; only the 8-bit output quantization limits the comparison.
    let truth = imgio::read_image(&img).unwrap();
    let got = imgio::read_image(&rec).unwrap();
    let max_err = truth
        .data()
        .iter()
        .zip(got.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(max_err <= 0.5 / 255.0 + 1e-12, "max err {max_err}");

    // Before quantization the residual is at fp precision; checked via the
    // trace from a second run.
    let rec2 = dir.path().join("rec2.pgm");
    let trace = dir.path().join("trace.csv");
    run_ok(&[
        "recover",
        "--model",
        model.to_str().unwrap(),
        "--y",
        y.to_str().unwrap(),
        "--op",
        op.to_str().unwrap(),
        "--out",
        rec2.to_str().unwrap(),
        "--iters",
        "1",
        "--seed",
        "3",
        "--trace",
        trace.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(&trace).unwrap();
    let last = text.lines().last().unwrap();
    let residual: f64 = last.split(',').nth(2).unwrap().parse().unwrap();
    assert!(residual < 1e-10, "residual {residual}");
}

#[test]
fn lambda_contradicts_projection_mode() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_tiny_model(dir.path());
    let img = dir.path().join("truth.pgm");
    write_texture(&img, 16, 16, 4);
    let y = dir.path().join("y.bin");
    let op = dir.path().join("op.bin");
    run_ok(&[
        "sense",
        "--in",
        img.to_str().unwrap(),
        "--op",
        "gaussian",
        "--mr",
        "0.5",
        "--seed",
        "5",
        "--out-y",
        y.to_str().unwrap(),
        "--out-op",
        op.to_str().unwrap(),
    ]);
    let rec = dir.path().join("rec.pgm");
    let out = run_err(&[
        "recover",
        "--model",
        model.to_str().unwrap(),
        "--y",
        y.to_str().unwrap(),
        "--op",
        op.to_str().unwrap(),
        "--out",
        rec.to_str().unwrap(),
        "--mode",
        "project",
        "--lambda",
        "5.0",
    ]);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("contradicts"), "stderr: {err}");
    assert!(!rec.exists());

    let out = run_err(&[
        "recover",
        "--model",
        model.to_str().unwrap(),
        "--y",
        y.to_str().unwrap(),
        "--op",
        op.to_str().unwrap(),
        "--out",
        rec.to_str().unwrap(),
        "--mode",
        "soft",
    ]);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("requires --lambda"), "stderr: {err}");
}

#[test]
fn missing_input_fails_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_err(&[
        "sample",
        "--model",
        dir.path().join("nope.rm").to_str().unwrap(),
        "--size",
        "8x8",
        "--out",
        dir.path().join("s.pgm").to_str().unwrap(),
    ]);
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn dense_operator_cap_points_to_fwht() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("big.pgm");
    // 16384 pixels is allowed, 16641 (129x129) is not.
    write_texture(&img, 129, 129, 6);
    let out = run_err(&[
        "sense",
        "--in",
        img.to_str().unwrap(),
        "--op",
        "gaussian",
        "--mr",
        "0.1",
        "--out-y",
        dir.path().join("y.bin").to_str().unwrap(),
        "--out-op",
        dir.path().join("op.bin").to_str().unwrap(),
    ]);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("fwht"), "stderr: {err}");
}

#[test]
fn fwht_sensing_works_on_large_power_of_two_images() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("sq.pgm");
    write_texture(&img, 64, 64, 7);
    run_ok(&[
        "sense",
        "--in",
        img.to_str().unwrap(),
        "--op",
        "fwht",
        "--mr",
        "0.3",
        "--seed",
        "8",
        "--out-y",
        dir.path().join("y.bin").to_str().unwrap(),
        "--out-op",
        dir.path().join("op.bin").to_str().unwrap(),
    ]);
    let mani = std::fs::read_to_string(dir.path().join("y.bin.manifest")).unwrap();
    assert!(mani.contains("param.m 1229"), "manifest:\n{mani}");
}

#[test]
fn manifests_record_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_tiny_model(dir.path());
    let mani = std::fs::read_to_string(dir.path().join("model.rm.manifest")).unwrap();
    for key in [
        "command train",
        "param.epochs 2",
        "param.lr 0.002",
        "seed 1",
        "model.fnv1a64 ",
        "duration_ms ",
    ] {
        assert!(mani.contains(key), "manifest missing '{key}':\n{mani}");
    }
    assert!(model.exists());

    let sample = dir.path().join("s.pgm");
    run_ok(&[
        "sample",
        "--model",
        model.to_str().unwrap(),
        "--size",
        "12x16",
        "--seed",
        "9",
        "--out",
        sample.to_str().unwrap(),
    ]);
    let img = imgio::read_image(&sample).unwrap();
    assert_eq!((img.rows(), img.cols()), (12, 16));
}

#[test]
fn masked_image_zeroes_missing_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let img_path = dir.path().join("t.pgm");
    // All-bright image so masked pixels are identifiable.
    let bright = Grid2D::filled(10, 10, 1.0);
    imgio::write_image(&bright, &img_path).unwrap();
    let masked_path = dir.path().join("m.pgm");
    let mask_path = dir.path().join("mask.pgm");
    run_ok(&[
        "mask",
        "--in",
        img_path.to_str().unwrap(),
        "--fraction",
        "0.7",
        "--seed",
        "10",
        "--out-masked",
        masked_path.to_str().unwrap(),
        "--out-mask",
        mask_path.to_str().unwrap(),
    ]);
    let masked = imgio::read_image(&masked_path).unwrap();
    let mask = imgio::read_image(&mask_path).unwrap();
    let holes = mask.data().iter().filter(|&&v| v < 0.5).count();
    assert_eq!(holes, 70);
    for (m, f) in masked.data().iter().zip(mask.data()) {
        if *f < 0.5 {
            assert_eq!(*m, 0.0);
        } else {
            assert_eq!(*m, 1.0);
        }
    }
}
