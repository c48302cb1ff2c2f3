//! Subcommand bodies. Each returns the process exit code, or an error that
//! maps to exit code 1.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use mscgm_core::stats::corpus::{power_law_corpus, spike_corpus, white_noise_corpus, PowerLawParams, SpikeParams};
use mscgm_core::stats::metrics::format_db;
use mscgm_core::stats::scan::corpus_summary;
use mscgm_core::stats::{condition_number, psnr, scan_csv, ssim_with, subband_scan, ScanOptions, SsimParams};
use mscgm_core::{Rng, Tensor};
use mscgm_nn::gradcheck::{check_builder, check_layer_kind, Builder, LayerKind};
use mscgm_pipeline::dataset::read_manifest;
use mscgm_pipeline::degrade::parse_chain;
use mscgm_pipeline::imageio::{read_image, write_png16};
use mscgm_pipeline::synthetic::blur_task;
use mscgm_pipeline::{
    load_dataset, sample_full, train_bbdp, train_msgan, BbdpModel, Checkpoint, GanModel, PipelineError, TrainConfig,
};

use crate::verify::{report_csv, run as run_suites};
use crate::{
    resolve_seed, sibling, write_file, AnalyzeArgs, GradcheckArgs, MetricsArgs, SampleArgs, SyntheticCorpus, TrainArgs,
    VerifyArgs, EXIT_FAILURE, EXIT_OK,
};

/// Images are in `[−1, 1]`, so the metric peak is the full span.
pub const METRIC_PEAK: f64 = 2.0;

fn load_corpus(args: &AnalyzeArgs, seed: u64) -> Result<Vec<Tensor<f64>>> {
    if let Some(kind) = args.synthetic {
        let mut rng = Rng::new(seed).derive(1);
        let (n, s) = (args.count, args.size);
        return Ok(match kind {
            SyntheticCorpus::WhiteNoise => white_noise_corpus(n, s, s, &mut rng)?,
            SyntheticCorpus::PowerLaw => power_law_corpus(n, s, PowerLawParams::default(), &mut rng)?,
            SyntheticCorpus::Spike => spike_corpus(n, s, &SpikeParams::default(), &mut rng)?,
        });
    }
    let manifest = args.manifest.as_deref().expect("clap requires a corpus source");
    let entries = read_manifest(manifest)?;
    let mut images = Vec::new();
    let mut failures = Vec::new();
    for e in &entries {
        match read_image(&e.target) {
            Ok(img) => images.push(img),
            Err(err) => failures.push(err),
        }
    }
    if !failures.is_empty() {
        return Err(PipelineError::Files(failures).into());
    }
    if images.is_empty() {
        bail!("{}: manifest lists no images", manifest.display());
    }
    Ok(images)
}

/// Non-overlapping `p × p` tiles of the first channel, flattened.
fn tiles(images: &[Tensor<f64>], p: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for img in images {
        let (h, w, c) = (img.shape()[0], img.shape()[1], img.shape().get(2).copied().unwrap_or(1));
        for ty in 0..h / p {
            for tx in 0..w / p {
                let mut v = Vec::with_capacity(p * p);
                for y in ty * p..(ty + 1) * p {
                    for x in tx * p..(tx + 1) * p {
                        v.push(img.data()[(y * w + x) * c]);
                    }
                }
                out.push(v);
            }
        }
    }
    out
}

pub fn analyze(args: &AnalyzeArgs) -> Result<i32> {
    let seed = resolve_seed(args.seed);
    let images = load_corpus(args, seed)?;
    let opts = ScanOptions {
        kl_bins: args.kl_bins,
        signed_sparsity: args.signed_sparsity,
        patch: args.patch,
        patches_per_image: args.patches_per_image,
        seed,
        ..ScanOptions::new(args.levels, args.thresholds.clone())
    };
    let rows = subband_scan(&images, &opts)?;
    write_file(&args.out, &scan_csv(&rows, &args.thresholds))?;
    let s = corpus_summary(&images)?;
    println!("images: {}", images.len());
    println!("summary:");
    println!("  pixel_skewness: {}", s.pixel_skewness);
    println!("  pixel_excess_kurtosis: {}", s.pixel_excess_kurtosis);
    println!("  detail_skewness: {}", s.detail_skewness);
    println!("  detail_excess_kurtosis: {}", s.detail_excess_kurtosis);
    println!("  n_pixels: {}", s.n_pixels);
    if let Some(p) = args.kappa_patch {
        let patches = tiles(&images, p);
        if patches.len() < 2 {
            bail!("{p}×{p} tiles give {} patch(es); need at least 2", patches.len());
        }
        let r = condition_number(&patches)?;
        println!(
            "  kappa: {} (dim {}, patches {}{})",
            r.kappa,
            r.dim,
            r.n_patches,
            if r.rank_deficient { ", rank deficient" } else { "" }
        );
    }
    println!("wrote {} rows to {}", rows.len(), args.out.display());
    Ok(EXIT_OK)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trainer {
    Bbdp,
    Gan,
}

/// The config file (or defaults) with command-line overrides applied.
pub fn train_config(args: &TrainArgs, which: Trainer) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(v) = args.levels {
        cfg.levels = v;
    }
    if let Some(v) = args.timesteps {
        cfg.timesteps = v;
    }
    if let Some(v) = args.checkpoint_every {
        cfg.checkpoint_every = v;
    }
    if let Some(v) = args.patch {
        cfg.data.patch = Some(v);
    }
    if let Some(chain) = &args.degrade {
        cfg.data.degradations = parse_chain(chain)?;
    }
    match which {
        Trainer::Bbdp => {
            if let Some(v) = args.iterations {
                cfg.bbdp.steps = v;
            }
            if let Some(v) = args.batch_size {
                cfg.bbdp.batch_size = v;
            }
            if let Some(v) = args.lr {
                cfg.bbdp.learning_rate = v;
            }
        }
        Trainer::Gan => {
            if let Some(v) = args.iterations {
                cfg.gan.epochs = v;
            }
            if let Some(v) = args.batch_size {
                cfg.gan.batch_size = v;
            }
            if let Some(v) = args.lr {
                cfg.gan.lr_generator = v;
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(args: &TrainArgs, which: Trainer) -> Result<i32> {
    let cfg = train_config(args, which)?;
    println!("seed: {}{}", cfg.seed, if args.seed.is_none() { " (from config)" } else { "" });
    let ds = match (&args.manifest, args.synthetic) {
        (Some(m), _) => load_dataset(m, &cfg.data, cfg.levels, cfg.seed)?,
        (None, Some(n)) => blur_task(n, cfg.levels, cfg.seed)?,
        (None, None) => unreachable!("clap requires a data source"),
    };
    println!("pairs: {}", ds.len());
    let mut save_periodic = |step: u64, ckpt: &Checkpoint| -> mscgm_pipeline::Result<()> {
        let ext = args.out.extension().map_or("ckpt".into(), |e| e.to_string_lossy().into_owned());
        let path = sibling(&args.out, &format!("step{step}.{ext}"));
        ckpt.save(&path)?;
        println!("checkpoint: {}", path.display());
        Ok(())
    };
    let (ckpt, log) = match which {
        Trainer::Bbdp => {
            let (model, log) = train_bbdp(&ds, &cfg, Some(&mut save_periodic))?;
            (model.to_checkpoint(), log)
        }
        Trainer::Gan => {
            let (model, log) = train_msgan(&ds, &cfg, Some(&mut save_periodic))?;
            (model.to_checkpoint(), log)
        }
    };
    ckpt.save(&args.out)?;
    let log_path = args.log.clone().unwrap_or_else(|| sibling(&args.out, "loss.csv"));
    log.save(&log_path)?;
    if let Some(last) = log.rows.last() {
        println!("final loss: {}", last.loss);
    }
    println!("wrote {} and {}", args.out.display(), log_path.display());
    Ok(EXIT_OK)
}

pub fn sample(args: &SampleArgs) -> Result<i32> {
    let seed = resolve_seed(args.seed);
    let bbdp = BbdpModel::from_checkpoint(&Checkpoint::load(&args.bbdp)?)
        .with_context(|| format!("loading {}", args.bbdp.display()))?;
    let gan = GanModel::from_checkpoint(&Checkpoint::load(&args.gan)?)
        .with_context(|| format!("loading {}", args.gan.display()))?;
    let y = read_image(&args.input)?.cast::<f32>();
    let mut rng = Rng::new(seed);
    let (out, report) = sample_full(&bbdp, &gan, &y, args.steps, &mut rng)
        .with_context(|| format!("sampling {}", args.input.display()))?;
    write_png16(&args.out, &out)?;
    let report_path = args.report.clone().unwrap_or_else(|| args.out.with_extension("csv"));
    write_file(&report_path, &report.to_csv())?;
    println!(
        "diffusion pixel-ops: {} (full resolution {})",
        report.diffusion_pixel_ops(),
        report.full_resolution_pixel_ops()
    );
    println!("wrote {} and {}", args.out.display(), report_path.display());
    Ok(EXIT_OK)
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "pgm" | "ppm"))
}

fn image_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| anyhow!("{}: {e}", dir.display()))? {
        let path = entry?.path();
        if path.is_file() && is_image(&path) {
            let name = path.file_name().expect("file entry").to_string_lossy().into_owned();
            out.insert(name, path);
        }
    }
    Ok(out)
}

/// PSNR (dB) and SSIM of one prediction against its reference.
pub fn score_pair(pred: &Tensor<f64>, reference: &Tensor<f64>) -> mscgm_core::Result<(f64, f64)> {
    Ok((
        psnr(pred, reference, METRIC_PEAK)?,
        ssim_with(pred, reference, &SsimParams::with_max_val(METRIC_PEAK))?,
    ))
}

pub fn metrics(args: &MetricsArgs) -> Result<i32> {
    let pred = image_files(&args.pred)?;
    let reference = image_files(&args.reference)?;
    let unpaired: Vec<String> = pred
        .keys()
        .filter(|k| !reference.contains_key(*k))
        .map(|k| format!("{} (no reference)", args.pred.join(k).display()))
        .chain(
            reference
                .keys()
                .filter(|k| !pred.contains_key(*k))
                .map(|k| format!("{} (no prediction)", args.reference.join(k).display())),
        )
        .collect();
    if !unpaired.is_empty() {
        eprintln!("unpaired files:");
        for u in &unpaired {
            eprintln!("  {u}");
        }
        if !args.allow_partial {
            return Ok(EXIT_FAILURE);
        }
    }
    let mut csv = String::from("file,psnr,ssim\n");
    let (mut sum_psnr, mut sum_ssim, mut n) = (0.0, 0.0, 0usize);
    for (name, p) in &pred {
        let Some(r) = reference.get(name) else { continue };
        let (a, b) = (read_image(p)?, read_image(r)?);
        let (db, s) = score_pair(&a, &b).with_context(|| format!("scoring {name}"))?;
        writeln!(csv, "{name},{},{s}", format_db(db))?;
        sum_psnr += db;
        sum_ssim += s;
        n += 1;
    }
    if n == 0 {
        bail!("no image pairs found in {} and {}", args.pred.display(), args.reference.display());
    }
    let (mean_psnr, mean_ssim) = (sum_psnr / n as f64, sum_ssim / n as f64);
    writeln!(csv, "mean,{},{mean_ssim}", format_db(mean_psnr))?;
    match &args.out {
        Some(path) => write_file(path, &csv)?,
        None => print!("{csv}"),
    }
    println!("pairs: {n} mean psnr: {} mean ssim: {mean_ssim}", format_db(mean_psnr));
    Ok(EXIT_OK)
}

pub fn verify(args: &VerifyArgs) -> Result<i32> {
    let seed = resolve_seed(args.seed);
    let checks = run_suites(args.suite, seed)?;
    for c in &checks {
        println!(
            "{} {}/{}: {:e} (limit {:e})",
            if c.passed { "PASS" } else { "FAIL" },
            c.suite,
            c.name,
            c.value,
            c.tolerance
        );
    }
    if let Some(path) = &args.report {
        write_file(path, &report_csv(&checks))?;
    }
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| format!("{}/{}", c.suite, c.name)).collect();
    if failed.is_empty() {
        println!("all {} checks passed", checks.len());
        Ok(EXIT_OK)
    } else {
        eprintln!("failed invariants: {}", failed.join(", "));
        Ok(EXIT_FAILURE)
    }
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<i32> {
    let seed = resolve_seed(args.seed);
    let layers: Vec<LayerKind> = match args.layer.as_str() {
        "all" => LayerKind::ALL.to_vec(),
        "builders" => Vec::new(),
        name => vec![*LayerKind::ALL.iter().find(|k| k.name() == name).ok_or_else(|| {
            let names: Vec<&str> = LayerKind::ALL.iter().map(|k| k.name()).collect();
            anyhow!("unknown layer kind '{name}', expected all, builders or one of {}", names.join(", "))
        })?],
    };
    let builders: &[Builder] = match args.layer.as_str() {
        "all" | "builders" => &Builder::ALL,
        _ => &[],
    };
    let mut csv = String::from("kind,max_rel_error,checked,passed\n");
    let mut failed = Vec::new();
    let mut record = |name: String, err: f64, checked: usize| {
        let ok = err <= args.tolerance;
        println!("{} {name}: {err:e} over {checked} entries", if ok { "PASS" } else { "FAIL" });
        writeln!(csv, "{name},{err:e},{checked},{ok}").unwrap();
        if !ok {
            failed.push(name);
        }
    };
    for (i, kind) in layers.iter().enumerate() {
        let r = check_layer_kind(*kind, args.trials, seed.wrapping_add(i as u64))?;
        record(kind.name().to_string(), r.max_rel_error, r.checked);
    }
    for (i, which) in builders.iter().enumerate() {
        let r = check_builder(*which, 1, 24, seed.wrapping_add(100 + i as u64))?;
        record(format!("builder_{}", which.name()), r.max_rel_error, r.checked);
    }
    if let Some(path) = &args.report {
        write_file(path, &csv)?;
    }
    if failed.is_empty() {
        Ok(EXIT_OK)
    } else {
        eprintln!("failed: {}", failed.join(", "));
        Ok(EXIT_FAILURE)
    }
}
