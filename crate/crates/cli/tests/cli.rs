use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mscgm_pipeline::TrainConfig;

fn mscgm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mscgm"))
        .args(args)
        .current_dir(dir)
        .env_remove("MSCGM_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_pgm(path: &Path, w: usize, h: usize, pixels: &[u8]) {
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    std::fs::write(path, bytes).unwrap();
}

fn gradient_pixels(w: usize, h: usize, salt: usize) -> Vec<u8> {
    (0..w * h).map(|i| ((i % w) * 5 + (i / w) * 3 + salt * 17) as u8).collect()
}

#[test]
fn analyze_white_noise_keeps_ll_gaussian() {
    let dir = tempfile::tempdir().unwrap();
    let o = mscgm(
        dir.path(),
        &["analyze", "--synthetic", "white-noise", "--count", "64", "--size", "64", "--levels", "3", "--thresholds", "0.5,1", "--out", "scan.csv"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("seed: 0"));
    assert!(stdout(&o).contains("pixel_excess_kurtosis"));
    let csv = std::fs::read_to_string(dir.path().join("scan.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("scale,band,kl_divergence,skewness,excess_kurtosis,sparsity_t0.5,sparsity_t1,n_samples")
    );
    let mut ll = 0;
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 8);
        if f[1] == "LL" {
            ll += 1;
            let kl: f64 = f[2].parse().unwrap();
            assert!(kl <= 0.01, "scale {} KL {kl}", f[0]);
        }
    }
    assert_eq!(ll, 3);
}

#[test]
fn analyze_reports_kappa_and_rejects_zero_levels() {
    let dir = tempfile::tempdir().unwrap();
    let o = mscgm(
        dir.path(),
        &["analyze", "--synthetic", "power-law", "--count", "4", "--size", "32", "--levels", "2", "--kappa-patch", "4", "--seed", "3", "--out", "s.csv"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("kappa: "));
    assert!(stdout(&o).contains("seed: 3"));
    let o = mscgm(dir.path(), &["analyze", "--synthetic", "spike", "--levels", "0", "--out", "s.csv"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn analyze_bad_manifest_lists_failures() {
    let dir = tempfile::tempdir().unwrap();
    write_pgm(&dir.path().join("ok.pgm"), 16, 16, &gradient_pixels(16, 16, 0));
    std::fs::write(dir.path().join("m.tsv"), "-\tok.pgm\n-\tgone1.png\n-\tgone2.png\n").unwrap();
    let o = mscgm(dir.path(), &["analyze", "--manifest", "m.tsv", "--levels", "2", "--out", "s.csv"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("gone1.png") && err.contains("gone2.png"), "{err}");
}

#[test]
fn unknown_flags_and_bad_thread_caps_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mscgm(dir.path(), &["verify", "--nope"]).status.code(), Some(2));
    assert_eq!(mscgm(dir.path(), &["sample"]).status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_mscgm"))
        .args(["verify", "--suite", "wavelet"])
        .current_dir(dir.path())
        .env("MSCGM_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("MSCGM_THREADS"));
}

#[test]
fn verify_suites_pass_and_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    for suite in ["wavelet", "bbdp", "duality"] {
        let o = mscgm(dir.path(), &["verify", "--suite", suite, "--report", "r.csv"]);
        assert_eq!(o.status.code(), Some(0), "{suite}: {}{}", stdout(&o), stderr(&o));
        let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
        assert!(csv.starts_with("suite,check,passed,value,tolerance\n"));
        assert!(csv.lines().skip(1).all(|l| l.starts_with(suite) && l.contains(",true,")), "{csv}");
    }
    let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert!(csv.contains("random_covariance_d16"));
}

#[test]
fn gradcheck_single_kind() {
    let dir = tempfile::tempdir().unwrap();
    let o = mscgm(dir.path(), &["gradcheck", "--layer", "group_norm", "--trials", "5", "--report", "g.csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("g.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("group_norm,"));
    assert_eq!(mscgm(dir.path(), &["gradcheck", "--layer", "warp"]).status.code(), Some(1));
}

/// SSIM computed with a direct 2-D window sum, independent of the
/// separable filter used by the metric itself.
fn ssim_oracle(a: &[f64], b: &[f64], h: usize, w: usize, max_val: f64) -> f64 {
    let (k, sigma) = (11usize, 1.5f64);
    let mut win = vec![0.0; k * k];
    let c = (k as f64 - 1.0) / 2.0;
    for i in 0..k {
        for j in 0..k {
            let (dy, dx) = (i as f64 - c, j as f64 - c);
            win[i * k + j] = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= total);
    let (c1, c2) = ((0.01 * max_val).powi(2), (0.03 * max_val).powi(2));
    let mut acc = 0.0;
    let mut n = 0;
    for y in 0..=h - k {
        for x in 0..=w - k {
            let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let g = win[i * k + j];
                    let (p, q) = (a[(y + i) * w + x + j], b[(y + i) * w + x + j]);
                    ma += g * p;
                    mb += g * q;
                    aa += g * p * p;
                    bb += g * q * q;
                    ab += g * p * q;
                }
            }
            let (va, vb, cov) = (aa - ma * ma, bb - mb * mb, ab - ma * mb);
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            n += 1;
        }
    }
    acc / n as f64
}

fn metrics_csv(dir: &Path, pred: &str, reference: &str, extra: &[&str]) -> (Output, Option<String>) {
    let mut args = vec!["metrics", "--pred", pred, "--ref", reference, "--out", "m.csv"];
    args.extend_from_slice(extra);
    let o = mscgm(dir, &args);
    let csv = std::fs::read_to_string(dir.join("m.csv")).ok();
    let _ = std::fs::remove_file(dir.join("m.csv"));
    (o, csv)
}

#[test]
fn metrics_identical_directories_are_perfect() {
    let dir = tempfile::tempdir().unwrap();
    for d in ["p", "r"] {
        std::fs::create_dir(dir.path().join(d)).unwrap();
        for i in 0..3 {
            write_pgm(&dir.path().join(d).join(format!("im{i}.pgm")), 16, 16, &gradient_pixels(16, 16, i));
        }
    }
    let (o, csv) = metrics_csv(dir.path(), "p", "r", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = csv.unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "file,psnr,ssim");
    assert_eq!(lines.len(), 5);
    let mean: Vec<&str> = lines[4].split(',').collect();
    assert_eq!(mean[0], "mean");
    assert_eq!(mean[1], "inf");
    assert_eq!(mean[2].parse::<f64>().unwrap(), 1.0);
}

#[test]
fn metrics_match_independent_formulas() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("p")).unwrap();
    std::fs::create_dir(dir.path().join("r")).unwrap();
    let (w, h) = (20, 16);
    let reference = gradient_pixels(w, h, 1);
    let pred: Vec<u8> = reference
        .iter()
        .enumerate()
        .map(|(i, &v)| v.saturating_add(((i * 7919) % 23) as u8))
        .collect();
    write_pgm(&dir.path().join("p/a.pgm"), w, h, &pred);
    write_pgm(&dir.path().join("r/a.pgm"), w, h, &reference);
    let (o, csv) = metrics_csv(dir.path(), "p", "r", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = csv.unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "a.pgm");

    let unit = |v: &[u8]| -> Vec<f64> { v.iter().map(|&p| p as f64 / 255.0 * 2.0 - 1.0).collect() };
    let (a, b) = (unit(&pred), unit(&reference));
    let mse = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    let psnr = 10.0 * (4.0 / mse).log10();
    // In 8-bit units the same PSNR is 20·log10(255) − 10·log10(MSE₂₅₅).
    let mse255 = pred.iter().zip(&reference).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / a.len() as f64;
    assert!((psnr - (20.0 * 255f64.log10() - 10.0 * mse255.log10())).abs() < 1e-9);
    assert!((row[1].parse::<f64>().unwrap() - psnr).abs() < 1e-9, "{} vs {psnr}", row[1]);
    let ssim = ssim_oracle(&a, &b, h, w, 2.0);
    assert!((row[2].parse::<f64>().unwrap() - ssim).abs() < 1e-9, "{} vs {ssim}", row[2]);
    assert!(ssim < 1.0 && ssim > 0.0);
}

#[test]
fn metrics_unpaired_and_empty() {
    let dir = tempfile::tempdir().unwrap();
    for d in ["p", "r", "e1", "e2"] {
        std::fs::create_dir(dir.path().join(d)).unwrap();
    }
    let px = gradient_pixels(16, 16, 0);
    write_pgm(&dir.path().join("p/a.pgm"), 16, 16, &px);
    write_pgm(&dir.path().join("r/a.pgm"), 16, 16, &px);
    write_pgm(&dir.path().join("p/only_pred.pgm"), 16, 16, &px);
    let (o, csv) = metrics_csv(dir.path(), "p", "r", &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("only_pred.pgm"));
    assert!(csv.is_none());
    let (o, csv) = metrics_csv(dir.path(), "p", "r", &["--allow-partial"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(csv.unwrap().lines().count(), 3);
    let (o, _) = metrics_csv(dir.path(), "e1", "e2", &[]);
    assert_eq!(o.status.code(), Some(1));
}

fn tiny_config(dir: &Path) -> PathBuf {
    let mut cfg = TrainConfig::default();
    cfg.levels = 2;
    cfg.timesteps = 1000;
    cfg.bbdp.steps = 6;
    cfg.bbdp.batch_size = 2;
    cfg.bbdp.unet.base_channels = 8;
    cfg.gan.epochs = 1;
    cfg.gan.batch_size = 2;
    cfg.gan.generator.base_channels = 8;
    cfg.gan.discriminator.base_channels = 4;
    let path = dir.join("cfg.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    path
}

fn sidecar_ops(path: &Path) -> (u64, u64) {
    let text = std::fs::read_to_string(path).unwrap();
    assert_eq!(text.lines().next(), Some("stage,wall_seconds,predictor_calls,pixels_per_step,pixel_ops"));
    let field = |stage: &str| -> u64 {
        let line = text.lines().find(|l| l.starts_with(&format!("{stage},"))).unwrap();
        line.rsplit(',').next().unwrap().parse().unwrap()
    };
    (field("diffusion"), field("full_resolution_reference"))
}

#[test]
fn train_then_sample_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_config(d);
    let o = mscgm(d, &["train-bbdp", "--config", "cfg.json", "--synthetic", "4", "--checkpoint-every", "3", "--out", "eps.ckpt"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("miniature"));
    for f in ["eps.ckpt", "eps.step3.ckpt", "eps.step6.ckpt", "eps.loss.csv"] {
        assert!(d.join(f).exists(), "{f} missing");
    }
    let log = std::fs::read_to_string(d.join("eps.loss.csv")).unwrap();
    assert!(log.starts_with("step,loss\n"));
    assert_eq!(log.lines().count(), 7);

    let o = mscgm(d, &["train-gan", "--config", "cfg.json", "--synthetic", "4", "--seed", "5", "--out", "gan.ckpt", "--log", "gan.csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let log = std::fs::read_to_string(d.join("gan.csv")).unwrap();
    assert!(log.starts_with("step,loss,loss_G,loss_D,gp\n"));

    write_pgm(&d.join("in.pgm"), 32, 32, &gradient_pixels(32, 32, 2));
    let run = |steps: &str, out: &str| {
        mscgm(d, &["sample", "--bbdp", "eps.ckpt", "--gan", "gan.ckpt", "--input", "in.pgm", "--steps", steps, "--seed", "9", "--out", out])
    };
    for (steps, out) in [("4", "a.png"), ("1000", "b.png"), ("4", "c.png")] {
        let o = run(steps, out);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let (ops4, full4) = sidecar_ops(&d.join("a.csv"));
    let (ops1000, full1000) = sidecar_ops(&d.join("b.csv"));
    assert_eq!(ops1000, 250 * ops4);
    assert_eq!(full4, 16 * ops4);
    assert_eq!(full1000, 16 * ops1000);
    assert_eq!(std::fs::read(d.join("a.png")).unwrap(), std::fs::read(d.join("c.png")).unwrap());
    let img = mscgm_pipeline::imageio::read_image(&d.join("a.png")).unwrap();
    assert_eq!(img.shape(), &[32, 32, 1]);

    write_pgm(&d.join("odd.pgm"), 30, 30, &gradient_pixels(30, 30, 2));
    let o = mscgm(d, &["sample", "--bbdp", "eps.ckpt", "--gan", "gan.ckpt", "--input", "odd.pgm", "--out", "x.png"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("divisible"), "{}", stderr(&o));
    assert!(stdout(&o).contains("seed: 0"));

    let o = mscgm(d, &["sample", "--bbdp", "gan.ckpt", "--gan", "gan.ckpt", "--input", "in.pgm", "--out", "x.png"]);
    assert_eq!(o.status.code(), Some(1));
    let o = mscgm(d, &["sample", "--bbdp", "missing.ckpt", "--gan", "gan.ckpt", "--input", "in.pgm", "--out", "x.png"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn training_is_deterministic_given_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_config(d);
    for out in ["a.ckpt", "b.ckpt"] {
        let o = mscgm(d, &["train-bbdp", "--config", "cfg.json", "--synthetic", "3", "--seed", "11", "--out", out]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    assert_eq!(std::fs::read(d.join("a.ckpt")).unwrap(), std::fs::read(d.join("b.ckpt")).unwrap());
    let o = mscgm(d, &["train-bbdp", "--config", "cfg.json", "--synthetic", "3", "--seed", "12", "--out", "c.ckpt"]);
    assert_eq!(o.status.code(), Some(0));
    assert_ne!(std::fs::read(d.join("a.ckpt")).unwrap(), std::fs::read(d.join("c.ckpt")).unwrap());
}

#[test]
fn invalid_config_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"levels": 2, "learning_rate": 1}"#).unwrap();
    let o = mscgm(dir.path(), &["train-bbdp", "--config", "bad.json", "--synthetic", "2", "--out", "x.ckpt"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));
}
