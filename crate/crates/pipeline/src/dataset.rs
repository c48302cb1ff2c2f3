//! Paired conditional/target images.

use std::path::{Path, PathBuf};

use mscgm_core::tensor::hwc_extents;
use mscgm_core::wavelet::check_divisible;
use mscgm_core::{Rng, Tensor};

use crate::config::DataConfig;
use crate::degrade::apply_chain;
use crate::error::{PipelineError, Result};
use crate::imageio::read_image;

/// One training pair, both `H × W × C` in `[−1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub cond: Tensor<f32>,
    pub target: Tensor<f32>,
    /// Where the pair came from, for diagnostics.
    pub source: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedDataset {
    pairs: Vec<Pair>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    /// `None` when the manifest gives `-`: the condition is derived from
    /// the target through the configured degradations.
    pub cond: Option<PathBuf>,
    pub target: PathBuf,
    pub line: usize,
}

/// Parses `conditional<TAB>target` lines; blank lines and `#` comments are
/// skipped.
pub fn parse_manifest(text: &str, origin: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let Some((cond, target)) = line.split_once('\t') else {
            return Err(PipelineError::file(
                origin,
                format!("line {}: expected 'conditional<TAB>target'", i + 1),
            ));
        };
        if target.contains('\t') || target.is_empty() || cond.is_empty() {
            return Err(PipelineError::file(
                origin,
                format!("line {}: expected exactly two non-empty fields", i + 1),
            ));
        }
        out.push(ManifestEntry {
            cond: (cond != "-").then(|| PathBuf::from(cond)),
            target: PathBuf::from(target),
            line: i + 1,
        });
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::file(path, e))?;
    parse_manifest(&text, path)
}

/// Top-left corners of the crops taken from an `h × w` image.
fn crop_origins(h: usize, w: usize, patch: usize, count: usize, rng: &mut Rng) -> Vec<(usize, usize)> {
    if count == 1 {
        return vec![((h - patch) / 2, (w - patch) / 2)];
    }
    (0..count)
        .map(|_| (rng.int_inclusive(0, h - patch), rng.int_inclusive(0, w - patch)))
        .collect()
}

pub fn crop<S: mscgm_core::Scalar>(img: &Tensor<S>, y0: usize, x0: usize, ph: usize, pw: usize) -> Result<Tensor<S>> {
    let (_, w, c) = hwc_extents(img)?;
    let mut out = Vec::with_capacity(ph * pw * c);
    for y in y0..y0 + ph {
        out.extend_from_slice(&img.data()[(y * w + x0) * c..(y * w + x0 + pw) * c]);
    }
    Ok(Tensor::new(&[ph, pw, c], out)?)
}

impl PairedDataset {
    /// Validates shapes and divisibility by `2^levels`.
    pub fn from_pairs(pairs: Vec<Pair>, levels: usize) -> Result<Self> {
        let mut errors = Vec::new();
        for p in &pairs {
            if p.cond.shape() != p.target.shape() {
                errors.push(PipelineError::file(
                    &p.source,
                    format!(
                        "conditional shape {:?} differs from target shape {:?}",
                        p.cond.shape(),
                        p.target.shape()
                    ),
                ));
                continue;
            }
            match hwc_extents(&p.target) {
                Ok((h, w, _)) => {
                    if let Err(e) = check_divisible(h, w, levels) {
                        errors.push(PipelineError::file(&p.source, e));
                    }
                }
                Err(e) => errors.push(PipelineError::file(&p.source, e)),
            }
        }
        if !errors.is_empty() {
            return Err(PipelineError::Files(errors));
        }
        if let Some(first) = pairs.first() {
            if let Some(p) = pairs.iter().find(|p| p.target.shape() != first.target.shape()) {
                return Err(PipelineError::file(
                    &p.source,
                    format!(
                        "shape {:?} differs from the first pair's {:?}; use a patch size",
                        p.target.shape(),
                        first.target.shape()
                    ),
                ));
            }
        }
        Ok(Self { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    /// `(H, W, C)` shared by all pairs.
    pub fn extents(&self) -> Option<(usize, usize, usize)> {
        self.pairs.first().map(|p| hwc_extents(&p.target).expect("validated"))
    }

    /// Splits off the last `n` pairs.
    pub fn split_tail(mut self, n: usize) -> (Self, Self) {
        let at = self.pairs.len().saturating_sub(n);
        let tail = self.pairs.split_off(at);
        (self, Self { pairs: tail })
    }
}

/// Decodes, degrades and patches every manifest entry. All per-file
/// failures are collected into one error.
pub fn load_dataset(manifest: &Path, cfg: &DataConfig, levels: usize, seed: u64) -> Result<PairedDataset> {
    let entries = read_manifest(manifest)?;
    load_entries(&entries, cfg, levels, seed)
}

pub fn load_entries(entries: &[ManifestEntry], cfg: &DataConfig, levels: usize, seed: u64) -> Result<PairedDataset> {
    let root = Rng::new(seed);
    let mut pairs = Vec::new();
    let mut errors = Vec::new();
    for (idx, entry) in entries.iter().enumerate() {
        let mut rng = root.derive(idx as u64);
        match load_entry(entry, cfg, levels, &mut rng) {
            Ok(mut ps) => pairs.append(&mut ps),
            Err(PipelineError::Files(mut es)) => errors.append(&mut es),
            Err(e) => errors.push(e),
        }
    }
    if !errors.is_empty() {
        return Err(PipelineError::Files(errors));
    }
    PairedDataset::from_pairs(pairs, levels)
}

fn load_entry(entry: &ManifestEntry, cfg: &DataConfig, levels: usize, rng: &mut Rng) -> Result<Vec<Pair>> {
    let target = read_image(&entry.target)?;
    let cond_raw = match &entry.cond {
        Some(p) => read_image(p)?,
        None => target.clone(),
    };
    let label = format!(
        "{} | {}",
        entry.cond.as_deref().map_or("-".into(), |p| p.display().to_string()),
        entry.target.display()
    );
    if cond_raw.shape() != target.shape() {
        return Err(PipelineError::file(
            &label,
            format!("shape {:?} vs {:?}", cond_raw.shape(), target.shape()),
        ));
    }
    let cond = apply_chain(&cond_raw, &cfg.degradations, rng).map_err(|e| PipelineError::file(&label, e))?;
    let (h, w, _) = hwc_extents(&target)?;
    let Some(patch) = cfg.patch else {
        check_divisible(h, w, levels).map_err(|e| PipelineError::file(&label, e))?;
        return Ok(vec![Pair {
            cond: cond.cast(),
            target: target.cast(),
            source: label,
        }]);
    };
    if patch > h || patch > w {
        return Err(PipelineError::file(&label, format!("patch {patch} exceeds image {h}×{w}")));
    }
    check_divisible(patch, patch, levels).map_err(|e| PipelineError::file(&label, e))?;
    crop_origins(h, w, patch, cfg.patches_per_image, rng)
        .into_iter()
        .map(|(y, x)| {
            Ok(Pair {
                cond: crop(&cond, y, x, patch, patch)?.cast(),
                target: crop(&target, y, x, patch, patch)?.cast(),
                source: format!("{label} @({y},{x})"),
            })
        })
        .collect()
}
