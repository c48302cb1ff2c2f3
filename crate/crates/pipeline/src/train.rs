//! Training loops: the bridge ε-predictor on the coarsest low band and the
//! multi-scale subband GAN.

use std::fmt::Write as _;
use std::path::Path;

use mscgm_core::bbdp::{forward_sample, make_schedule, training_target};
use mscgm_core::{Error, Rng, Tensor};
use mscgm_nn::{gradient_penalty, l1, mse, ssim_loss, AdamWConfig, Graph, LossGrad, Network, SsimLossConfig};

use crate::bands::{concat_channels, to_nchw, ScaledBands};
use crate::checkpoint::Checkpoint;
use crate::config::{ReconLoss, TrainConfig};
use crate::dataset::PairedDataset;
use crate::error::{PipelineError, Result};
use crate::model::{BbdpModel, GanModel};

/// Adversarial terms of one generator step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GanTerms {
    pub loss_g: f64,
    pub loss_d: f64,
    pub gp: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRow {
    pub step: u64,
    pub loss: f64,
    pub gan: Option<GanTerms>,
}

/// Per-step losses, written as `step,loss` or `step,loss,loss_G,loss_D,gp`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LossRow>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.loss).collect()
    }

    pub fn to_csv(&self) -> String {
        let gan = self.rows.first().is_some_and(|r| r.gan.is_some());
        let mut out = String::from(if gan { "step,loss,loss_G,loss_D,gp\n" } else { "step,loss\n" });
        for r in &self.rows {
            match r.gan {
                Some(g) => writeln!(out, "{},{},{},{},{}", r.step, r.loss, g.loss_g, g.loss_d, g.gp),
                None => writeln!(out, "{},{}", r.step, r.loss),
            }
            .expect("writing to a String");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| PipelineError::file(path, e))
    }
}

/// Called with each periodic checkpoint and the step that produced it.
pub type CheckpointSink<'a> = &'a mut dyn FnMut(u64, &Checkpoint) -> Result<()>;

fn require_data(ds: &PairedDataset) -> Result<(usize, usize, usize)> {
    ds.extents()
        .ok_or_else(|| Error::InvalidArgument("training needs a non-empty dataset".into()).into())
}

fn diverged(what: &str, step: u64, value: f64, detail: String) -> PipelineError {
    Error::Divergence(format!("{what} at step {step} is {value}; {detail}")).into()
}

fn adamw(lr: f64, weight_decay: f64) -> AdamWConfig {
    AdamWConfig {
        learning_rate: lr,
        weight_decay,
        ..AdamWConfig::default()
    }
}

/// Regresses ε_θ(x_t, y_L, t) onto the bridge target on the scaled level-S
/// low bands, with `t ~ U{1..T}`.
pub fn train_bbdp(
    ds: &PairedDataset,
    cfg: &TrainConfig,
    mut sink: Option<CheckpointSink<'_>>,
) -> Result<(BbdpModel, TrainLog)> {
    cfg.validate()?;
    let (h, w, c) = require_data(ds)?;
    let levels = cfg.levels;
    let root = Rng::new(cfg.seed);
    let mut model = BbdpModel::new(cfg.clone(), c, h, w, &mut root.derive(0))?;
    let mut rng = root.derive(1);
    let sched = make_schedule(cfg.timesteps)?;
    let bands = ds
        .pairs()
        .iter()
        .map(|p| {
            let x0 = ScaledBands::new(&p.target, levels)?.low(levels).clone();
            let y = ScaledBands::new(&p.cond, levels)?.low(levels).clone();
            Ok((x0, y))
        })
        .collect::<Result<Vec<_>>>()?;
    let opt = adamw(cfg.bbdp.learning_rate, cfg.bbdp.weight_decay);
    let batch = cfg.bbdp.batch_size;
    let t_total = cfg.timesteps as f32;
    let mut log = TrainLog::default();
    for step in 1..=cfg.bbdp.steps as u64 {
        let mut xts = Vec::with_capacity(batch);
        let mut ys = Vec::with_capacity(batch);
        let mut targets = Vec::with_capacity(batch);
        let mut ts = Vec::with_capacity(batch);
        let mut picked = Vec::with_capacity(batch);
        for _ in 0..batch {
            let i = rng.below(bands.len());
            let (x0, y) = &bands[i];
            let t = rng.int_inclusive(1, cfg.timesteps);
            let eps = rng.randn::<f32>(x0.shape())?;
            xts.push(forward_sample(&sched, x0, y, t, &eps)?);
            targets.push(training_target(&sched, x0, y, t, &eps)?);
            ys.push(y);
            ts.push(t);
            picked.push(i);
        }
        let inputs = [
            to_nchw(&xts.iter().collect::<Vec<_>>())?,
            to_nchw(&ys)?,
            Tensor::new(&[batch, 1], ts.iter().map(|&t| t as f32 / t_total).collect())?,
        ];
        let target = to_nchw(&targets.iter().collect::<Vec<_>>())?;
        model.net.zero_grad();
        let out = model.net.forward(&inputs)?;
        let loss = mse(&out, &target)?;
        if !loss.value.is_finite() {
            let sources: Vec<&str> = picked.iter().map(|&i| ds.pairs()[i].source.as_str()).collect();
            return Err(diverged(
                "bbdp loss",
                step,
                loss.value,
                format!("timesteps {ts:?}, pairs {sources:?}"),
            ));
        }
        model.net.backward(&loss.grad)?;
        model.net.adamw_step(&opt)?;
        model.net.ema_update(cfg.ema_rate)?;
        log.rows.push(LossRow {
            step,
            loss: loss.value,
            gan: None,
        });
        if let Some(sink) = sink.as_mut() {
            if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every as u64 == 0 {
                sink(step, &model.to_checkpoint())?;
            }
        }
    }
    Ok((model, log))
}

fn slot_net<'a>(nets: &'a mut [Network<f32>], slot: usize, graph: &Graph) -> Result<&'a mut Network<f32>> {
    let net = &mut nets[slot];
    if net.graph() != graph {
        net.set_graph(graph.clone())?;
    }
    Ok(net)
}

/// Scale-`k` tensors of one minibatch, all `[B, ·, h, w]`.
struct ScaleBatch {
    x_low: Tensor<f32>,
    y_high: Tensor<f32>,
    x_high: Tensor<f32>,
    condition: Tensor<f32>,
    scale: Tensor<f32>,
}

/// Teacher-forced multi-scale WGAN-GP training of the subband generator.
///
/// For every minibatch the scales run coarse to fine. The critic sees
/// real/fake detail stacks together with the condition `(x_L^k, y_H^k)`; the
/// generator minimizes `λ·recon + ν·(1 − SSIM) − α·D(fake)`.
pub struct GanTrainer<'a> {
    ds: &'a PairedDataset,
    cfg: TrainConfig,
    model: GanModel,
    rng: Rng,
    targets: Vec<ScaledBands<f32>>,
    conds: Vec<ScaledBands<f32>>,
    /// Generator and critic graphs per scale, index `k − 1`.
    gen_graphs: Vec<Graph>,
    critic_graphs: Vec<Graph>,
    log: TrainLog,
    step: u64,
    order: Vec<usize>,
}

impl<'a> GanTrainer<'a> {
    pub fn new(ds: &'a PairedDataset, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let (h, w, c) = require_data(ds)?;
        let levels = cfg.levels;
        let root = Rng::new(cfg.seed);
        let model = GanModel::new(cfg.clone(), c, h, w, &mut root.derive(2))?;
        let bands = |pick: fn(&crate::dataset::Pair) -> &Tensor<f32>| {
            ds.pairs()
                .iter()
                .map(|p| ScaledBands::new(pick(p), levels))
                .collect::<mscgm_core::Result<Vec<_>>>()
        };
        let targets = bands(|p| &p.target)?;
        let conds = bands(|p| &p.cond)?;
        let gen_graphs = (1..=levels)
            .map(|k| model.generator_graph(h >> k, w >> k))
            .collect::<Result<_>>()?;
        let critic_graphs = (1..=levels)
            .map(|k| model.discriminator_graph(h >> k, w >> k))
            .collect::<Result<_>>()?;
        Ok(Self {
            ds,
            cfg: cfg.clone(),
            model,
            rng: root.derive(3),
            targets,
            conds,
            gen_graphs,
            critic_graphs,
            log: TrainLog::default(),
            step: 0,
            order: (0..ds.len()).collect(),
        })
    }

    pub fn model(&self) -> &GanModel {
        &self.model
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn finish(self) -> (GanModel, TrainLog) {
        (self.model, self.log)
    }

    /// One shuffled pass over the dataset.
    pub fn run_epoch(&mut self, mut sink: Option<CheckpointSink<'_>>) -> Result<()> {
        let mut order = std::mem::take(&mut self.order);
        self.rng.shuffle(&mut order);
        for chunk in order.chunks(self.cfg.gan.batch_size) {
            for k in (1..=self.cfg.levels).rev() {
                self.train_scale(chunk, k)?;
                if let Some(sink) = sink.as_mut() {
                    let every = self.cfg.checkpoint_every as u64;
                    if every > 0 && self.step % every == 0 {
                        sink(self.step, &self.model.to_checkpoint())?;
                    }
                }
            }
        }
        self.order = order;
        Ok(())
    }

    /// Reconstruction objective `λ·recon + ν·(1 − SSIM)` of the raw generator
    /// weights at scale `k` on the whole dataset, with noise drawn from
    /// `noise_seed`.
    pub fn reconstruction_loss(&self, k: usize, noise_seed: u64) -> Result<f64> {
        let idx: Vec<usize> = (0..self.ds.len()).collect();
        let sb = scale_batch(&self.targets, &self.conds, &idx, k, self.model.scale_value(k))?;
        let s = sb.x_low.shape();
        let z = Rng::new(noise_seed).randn::<f32>(&[s[0], 1, s[2], s[3]])?;
        let net = &self.model.generators[self.model.slot(k)];
        let fake = net.forward_eval_on(&self.gen_graphs[k - 1], &[sb.x_low, sb.y_high, z, sb.scale], false)?;
        let g = &self.cfg.gan;
        let recon = match g.recon_loss {
            ReconLoss::L1 => l1(&fake, &sb.x_high)?,
            ReconLoss::L2 => mse(&fake, &sb.x_high)?,
        };
        let ssim = ssim_loss(&fake, &sb.x_high, &SsimLossConfig::default())?;
        Ok(g.lambda_recon * recon.value + g.nu_ssim * ssim.value)
    }

    fn train_scale(&mut self, chunk: &[usize], k: usize) -> Result<()> {
        self.step += 1;
        let step = self.step;
        let g = &self.cfg.gan;
        let opt_g = adamw(g.lr_generator, 0.0);
        let opt_d = adamw(g.lr_discriminator, 0.0);
        let model = &mut self.model;
        let rng = &mut self.rng;
        let sb = scale_batch(&self.targets, &self.conds, chunk, k, model.scale_value(k))?;
        let b = chunk.len();
        let inv_b = 1.0 / b as f32;
        let slot = model.slot(k);
        let s = sb.x_low.shape().to_vec();

        let z = rng.randn::<f32>(&[b, 1, s[2], s[3]])?;
        let gen = slot_net(&mut model.generators, slot, &self.gen_graphs[k - 1])?;
        gen.zero_grad();
        let fake = gen.forward(&[sb.x_low.clone(), sb.y_high.clone(), z, sb.scale.clone()])?;

        let critic = slot_net(&mut model.discriminators, slot, &self.critic_graphs[k - 1])?;
        let critic_inputs = |x: Tensor<f32>| [x, sb.condition.clone(), sb.scale.clone()];
        let mut loss_d = 0.0;
        let mut gp_value = 0.0;
        for _ in 0..g.critic_steps {
            critic.zero_grad();
            let real_score = critic.forward(&critic_inputs(sb.x_high.clone()))?;
            critic.backward(&Tensor::full(real_score.shape(), -inv_b))?;
            let fake_score = critic.forward(&critic_inputs(fake.clone()))?;
            critic.backward(&Tensor::full(fake_score.shape(), inv_b))?;
            let mix = interpolate(&sb.x_high, &fake, rng)?;
            let gp = gradient_penalty(critic, &critic_inputs(mix), 0)?;
            critic.accumulate_grads(&gp.param_grads, g.gp_weight as f32)?;
            gp_value = gp.value;
            loss_d = mean(&fake_score) - mean(&real_score) + g.gp_weight * gp.value;
            if !loss_d.is_finite() {
                return Err(diverged("critic loss", step, loss_d, format!("scale {k}, gp {gp_value}")));
            }
            critic.adamw_step(&opt_d)?;
        }

        let recon = match g.recon_loss {
            ReconLoss::L1 => l1(&fake, &sb.x_high)?,
            ReconLoss::L2 => mse(&fake, &sb.x_high)?,
        };
        let ssim = ssim_loss(&fake, &sb.x_high, &SsimLossConfig::default())?;
        let (adv, adv_grad) = if g.alpha_adv > 0.0 {
            let score = critic.forward(&critic_inputs(fake.clone()))?;
            let grads = critic.backward(&Tensor::full(score.shape(), -(g.alpha_adv as f32) * inv_b))?;
            critic.zero_grad();
            (mean(&score), Some(grads.into_iter().next().expect("critic has inputs")))
        } else {
            (0.0, None)
        };
        let loss = g.lambda_recon * recon.value + g.nu_ssim * ssim.value;
        let loss_g = loss - g.alpha_adv * adv;
        if !loss_g.is_finite() {
            return Err(diverged(
                "generator loss",
                step,
                loss_g,
                format!("scale {k}, recon {}, ssim {}", recon.value, ssim.value),
            ));
        }
        let grad = generator_grad(&recon, &ssim, adv_grad, g.lambda_recon, g.nu_ssim);
        let gen = &mut model.generators[slot];
        gen.backward(&grad)?;
        gen.adamw_step(&opt_g)?;
        gen.ema_update(self.cfg.ema_rate)?;
        self.log.rows.push(LossRow {
            step,
            loss,
            gan: Some(GanTerms { loss_g, loss_d, gp: gp_value }),
        });
        Ok(())
    }
}

/// Runs all configured epochs of [`GanTrainer`].
pub fn train_msgan(
    ds: &PairedDataset,
    cfg: &TrainConfig,
    mut sink: Option<CheckpointSink<'_>>,
) -> Result<(GanModel, TrainLog)> {
    let mut trainer = GanTrainer::new(ds, cfg)?;
    for _ in 0..cfg.gan.epochs {
        let reborrowed = sink.as_mut().map(|s| &mut **s as &mut dyn FnMut(u64, &Checkpoint) -> Result<()>);
        trainer.run_epoch(reborrowed)?;
    }
    Ok(trainer.finish())
}

fn scale_batch(
    targets: &[ScaledBands<f32>],
    conds: &[ScaledBands<f32>],
    idx: &[usize],
    k: usize,
    scale_value: f32,
) -> Result<ScaleBatch> {
    let x_low = to_nchw(&idx.iter().map(|&i| targets[i].low(k)).collect::<Vec<_>>())?;
    let y_high = to_nchw(&idx.iter().map(|&i| conds[i].high(k)).collect::<Vec<_>>())?;
    let x_high = to_nchw(&idx.iter().map(|&i| targets[i].high(k)).collect::<Vec<_>>())?;
    let condition = concat_channels(&x_low, &y_high)?;
    let s = x_low.shape();
    let scale = Tensor::full(&[s[0], 1, s[2], s[3]], scale_value);
    Ok(ScaleBatch {
        x_low,
        y_high,
        x_high,
        condition,
        scale,
    })
}

fn mean(t: &Tensor<f32>) -> f64 {
    t.data().iter().map(|&v| v as f64).sum::<f64>() / t.numel() as f64
}

/// Per-sample `ε·real + (1 − ε)·fake` with `ε ~ U(0, 1)`.
fn interpolate(real: &Tensor<f32>, fake: &Tensor<f32>, rng: &mut Rng) -> Result<Tensor<f32>> {
    let b = real.shape()[0];
    let per = real.numel() / b;
    let mut data = Vec::with_capacity(real.numel());
    for i in 0..b {
        let e = rng.uniform() as f32;
        let range = i * per..(i + 1) * per;
        data.extend(
            real.data()[range.clone()]
                .iter()
                .zip(&fake.data()[range])
                .map(|(&r, &f)| e * r + (1.0 - e) * f),
        );
    }
    Ok(Tensor::new(real.shape(), data)?)
}

fn generator_grad(
    recon: &LossGrad<f32>,
    ssim: &LossGrad<f32>,
    adv: Option<Tensor<f32>>,
    lambda: f64,
    nu: f64,
) -> Tensor<f32> {
    let mut grad = recon.grad.scale(lambda as f32);
    grad.axpy(nu as f32, &ssim.grad).expect("same shape");
    if let Some(a) = adv {
        grad.axpy(1.0, &a).expect("same shape");
    }
    grad
}
