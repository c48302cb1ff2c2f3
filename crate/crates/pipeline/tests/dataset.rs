use std::path::Path;

use image::{ImageBuffer, Luma};
use mscgm_core::Tensor;
use mscgm_pipeline::config::DataConfig;
use mscgm_pipeline::degrade::parse_chain;
use mscgm_pipeline::imageio::{read_image, write_png16};
use mscgm_pipeline::{load_dataset, PipelineError};

fn write_gray8(path: &Path, size: u32, seed: u32) {
    let img = ImageBuffer::from_fn(size, size, |x, y| Luma([((x * 7 + y * 13 + seed * 31) % 256) as u8]));
    img.save(path).unwrap();
}

fn write_manifest(dir: &Path, lines: &[String]) -> std::path::PathBuf {
    let path = dir.join("pairs.tsv");
    std::fs::write(&path, format!("# cond\ttarget\n{}\n", lines.join("\n"))).unwrap();
    path
}

#[test]
fn two_pairs_yield_two_times_the_patch_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut lines = Vec::new();
    for i in 0..2 {
        let (c, t) = (dir.path().join(format!("c{i}.png")), dir.path().join(format!("t{i}.png")));
        write_gray8(&c, 24, i);
        write_gray8(&t, 24, i + 10);
        lines.push(format!("{}\t{}", c.display(), t.display()));
    }
    let manifest = write_manifest(dir.path(), &lines);
    let whole = load_dataset(&manifest, &DataConfig::default(), 2, 0).unwrap();
    assert_eq!(whole.len(), 2);
    assert_eq!(whole.extents(), Some((24, 24, 1)));
    let cfg = DataConfig {
        patch: Some(8),
        patches_per_image: 3,
        ..DataConfig::default()
    };
    let patched = load_dataset(&manifest, &cfg, 2, 0).unwrap();
    assert_eq!(patched.len(), 6);
    assert_eq!(patched.extents(), Some((8, 8, 1)));
    assert_eq!(load_dataset(&manifest, &cfg, 2, 0).unwrap(), patched);
}

#[test]
fn sixteen_bit_pgm_maximum_maps_to_plus_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("max.pgm");
    let mut bytes = b"P5\n2 2\n65535\n".to_vec();
    for v in [65535u16, 0, 32768, 65535] {
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    std::fs::write(&path, bytes).unwrap();
    let img = read_image(&path).unwrap();
    assert_eq!(img.data()[0], 1.0);
    assert_eq!(img.data()[1], -1.0);
    assert_eq!(img.data()[3], 1.0);
}

#[test]
fn seeded_degradations_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.png");
    write_gray8(&t, 16, 3);
    let manifest = write_manifest(dir.path(), &[format!("-\t{}", t.display())]);
    let cfg = DataConfig {
        degradations: parse_chain("blur:2,noise:0.05").unwrap(),
        ..DataConfig::default()
    };
    let a = load_dataset(&manifest, &cfg, 2, 9).unwrap();
    let b = load_dataset(&manifest, &cfg, 2, 9).unwrap();
    assert_eq!(a.pairs()[0].cond, b.pairs()[0].cond);
    assert_ne!(a.pairs()[0].cond, a.pairs()[0].target);
    let c = load_dataset(&manifest, &cfg, 2, 10).unwrap();
    assert_ne!(a.pairs()[0].cond, c.pairs()[0].cond);
}

#[test]
fn every_bad_entry_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.png");
    write_gray8(&good, 16, 0);
    let small = dir.path().join("small.png");
    write_gray8(&small, 8, 0);
    let odd = dir.path().join("odd.png");
    write_gray8(&odd, 10, 0);
    let lines = vec![
        format!("{}\t{}", dir.path().join("missing.png").display(), good.display()),
        format!("{}\t{}", small.display(), good.display()),
        format!("-\t{}", odd.display()),
        format!("-\t{}", good.display()),
    ];
    let manifest = write_manifest(dir.path(), &lines);
    let err = load_dataset(&manifest, &DataConfig::default(), 2, 0).unwrap_err();
    let PipelineError::Files(errors) = &err else {
        panic!("expected a per-file list, got {err}");
    };
    assert_eq!(errors.len(), 3);
    let text = err.to_string();
    assert!(text.contains("missing.png"));
    assert!(text.contains("small.png"));
    assert!(text.contains("odd.png"));
}

#[test]
fn sixteen_bit_png_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.png");
    let img = Tensor::from_fn(&[4, 6, 3], |i| (i as f64 / 71.0) * 2.0 - 1.0);
    write_png16(&path, &img).unwrap();
    let back = read_image(&path).unwrap();
    assert!(back.max_abs_diff(&img).unwrap() <= 1.0 / 65535.0);
}
