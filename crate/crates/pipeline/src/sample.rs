//! Full restoration: bridge sampling of the coarse low band, then subband
//! synthesis and inverse transforms scale by scale.

use std::fmt::Write as _;
use std::time::Instant;

use mscgm_core::bbdp::{make_schedule, sample_counted, BridgeSchedule, EpsPredictor, SampleCounters, TimestepGrid};
use mscgm_core::tensor::hwc_extents;
use mscgm_core::wavelet::check_divisible;
use mscgm_core::{Error, Rng, Tensor};

use crate::bands::{from_nchw, merge_level, to_nchw, ScaledBands};
use crate::error::Result;
use crate::model::{BbdpModel, GanModel};

/// Timings and work counters of one restoration.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleReport {
    pub levels: usize,
    pub counters: SampleCounters,
    /// Elements of a full-resolution image, the per-step work of a
    /// diffusion run without decomposition.
    pub full_resolution_pixels: usize,
    pub diffusion_seconds: f64,
    /// `(k, seconds)` for k = S..1.
    pub gan_seconds: Vec<(usize, f64)>,
    pub total_seconds: f64,
}

impl SampleReport {
    pub fn diffusion_pixel_ops(&self) -> usize {
        self.counters.pixel_ops()
    }

    /// Work of the same number of predictor calls at full resolution.
    pub fn full_resolution_pixel_ops(&self) -> usize {
        self.counters.predictor_calls * self.full_resolution_pixels
    }

    /// Sidecar CSV: `stage,wall_seconds,predictor_calls,pixels_per_step,pixel_ops`.
    pub fn to_csv(&self) -> String {
        let c = &self.counters;
        let mut out = String::from("stage,wall_seconds,predictor_calls,pixels_per_step,pixel_ops\n");
        let mut row = |stage: &str, secs: String, calls: usize, pixels: usize| {
            writeln!(out, "{stage},{secs},{calls},{pixels},{}", calls * pixels).expect("writing to a String");
        };
        row(
            "diffusion",
            format!("{:.6}", self.diffusion_seconds),
            c.predictor_calls,
            c.pixels_per_step,
        );
        for &(k, secs) in &self.gan_seconds {
            row(&format!("gan_scale{k}"), format!("{secs:.6}"), 0, 0);
        }
        row(
            "full_resolution_reference",
            String::new(),
            c.predictor_calls,
            self.full_resolution_pixels,
        );
        row("total", format!("{:.6}", self.total_seconds), c.predictor_calls, c.pixels_per_step);
        out
    }
}

/// Generic form of the restoration, with the networks abstracted away.
///
/// `generator(k, x_low, y_high, rng)` receives scaled HWC bands and returns
/// the scaled level-`k` detail stack.
pub fn sample_full_with<P, G>(
    levels: usize,
    y: &Tensor<f32>,
    sched: &BridgeSchedule,
    grid: &TimestepGrid,
    predictor: &mut P,
    mut generator: G,
    rng: &mut Rng,
) -> Result<(Tensor<f32>, SampleReport)>
where
    P: EpsPredictor<f32> + ?Sized,
    G: FnMut(usize, &Tensor<f32>, &Tensor<f32>, &mut Rng) -> Result<Tensor<f32>>,
{
    let start = Instant::now();
    let (h, w, _) = hwc_extents(y)?;
    check_divisible(h, w, levels)?;
    let bands = ScaledBands::new(y, levels)?;
    let t0 = Instant::now();
    let (mut low, counters) = sample_counted(sched, predictor, bands.low(levels), grid, rng)?;
    let diffusion_seconds = t0.elapsed().as_secs_f64();
    let mut gan_seconds = Vec::with_capacity(levels);
    for k in (1..=levels).rev() {
        let tk = Instant::now();
        let high = generator(k, &low, bands.high(k), rng)?;
        if high.shape() != bands.high(k).shape() {
            return Err(Error::ContractViolation(format!(
                "generator returned {:?} at scale {k}, expected {:?}",
                high.shape(),
                bands.high(k).shape()
            ))
            .into());
        }
        low = merge_level(&low, &high, k)?;
        gan_seconds.push((k, tk.elapsed().as_secs_f64()));
    }
    let out = low.clamp(-1.0, 1.0);
    let report = SampleReport {
        levels,
        counters,
        full_resolution_pixels: y.numel(),
        diffusion_seconds,
        gan_seconds,
        total_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((out, report))
}

fn contract(msg: String) -> crate::error::PipelineError {
    Error::ContractViolation(msg).into()
}

/// Checks that the two models can run together on `y`.
pub fn check_compatible(bbdp: &BbdpModel, gan: &GanModel, y: &Tensor<f32>) -> Result<()> {
    if bbdp.config.levels != gan.config.levels {
        return Err(contract(format!(
            "bbdp model uses {} levels but the gan model uses {}",
            bbdp.config.levels, gan.config.levels
        )));
    }
    if bbdp.channels != gan.channels {
        return Err(contract(format!(
            "bbdp model has {} channels but the gan model has {}",
            bbdp.channels, gan.channels
        )));
    }
    let (h, w, c) = hwc_extents(y)?;
    if c != bbdp.channels {
        return Err(contract(format!("input has {c} channels, the models expect {}", bbdp.channels)));
    }
    check_divisible(h, w, bbdp.config.levels)?;
    Ok(())
}

/// Restores `y` with the EMA weights of both models using an `n_steps`
/// bridge grid. Output is clipped to `[−1, 1]`.
pub fn sample_full(
    bbdp: &BbdpModel,
    gan: &GanModel,
    y: &Tensor<f32>,
    n_steps: usize,
    rng: &mut Rng,
) -> Result<(Tensor<f32>, SampleReport)> {
    check_compatible(bbdp, gan, y)?;
    let levels = bbdp.config.levels;
    let (h, w, _) = hwc_extents(y)?;
    let sched = make_schedule(bbdp.config.timesteps)?;
    let grid = TimestepGrid::uniform(bbdp.config.timesteps, n_steps)?;
    let eps_graph = bbdp.graph_for(h >> levels, w >> levels)?;
    let mut predictor =
        |x_t: &Tensor<f32>, y_l: &Tensor<f32>, _t: usize, t_norm: f64| -> mscgm_core::Result<Tensor<f32>> {
            bbdp.predict(&eps_graph, x_t, y_l, t_norm)
                .map_err(|e| Error::ContractViolation(e.to_string()))
        };
    let gen_graphs = (1..=levels)
        .map(|k| gan.generator_graph(h >> k, w >> k))
        .collect::<Result<Vec<_>>>()?;
    let generator = |k: usize, x_low: &Tensor<f32>, y_high: &Tensor<f32>, rng: &mut Rng| -> Result<Tensor<f32>> {
        let (hk, wk) = (h >> k, w >> k);
        let inputs = [
            to_nchw(&[x_low])?,
            to_nchw(&[y_high])?,
            rng.randn::<f32>(&[1, 1, hk, wk])?,
            Tensor::full(&[1, 1, hk, wk], gan.scale_value(k)),
        ];
        let net = &gan.generators[gan.slot(k)];
        let out = net.forward_eval_on(&gen_graphs[k - 1], &inputs, true)?;
        Ok(from_nchw(&out, 0)?)
    };
    sample_full_with(levels, y, &sched, &grid, &mut predictor, generator, rng)
}
