//! Central finite-difference checks of the reverse pass.

use mscgm_core::{Result, Rng, Tensor};

use crate::exec;
use crate::graph::{Graph, GraphBuilder};
use crate::models::{DiscriminatorConfig, EpsUnetConfig, GeneratorConfig};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Magnitudes below this are compared absolutely rather than relatively.
pub const RELATIVE_FLOOR: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv2d,
    PixelShuffle,
    Silu,
    GroupNorm,
    Linear,
    SelfAttention,
    TimestepEmbed,
    Add,
    Sub,
    AddChannelBias,
    Concat,
    GlobalAvgPool,
    Flatten,
}

impl LayerKind {
    pub const ALL: [LayerKind; 13] = [
        LayerKind::Conv2d,
        LayerKind::PixelShuffle,
        LayerKind::Silu,
        LayerKind::GroupNorm,
        LayerKind::Linear,
        LayerKind::SelfAttention,
        LayerKind::TimestepEmbed,
        LayerKind::Add,
        LayerKind::Sub,
        LayerKind::AddChannelBias,
        LayerKind::Concat,
        LayerKind::GlobalAvgPool,
        LayerKind::Flatten,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv2d => "conv2d",
            LayerKind::PixelShuffle => "pixel_shuffle",
            LayerKind::Silu => "silu",
            LayerKind::GroupNorm => "group_norm",
            LayerKind::Linear => "linear",
            LayerKind::SelfAttention => "self_attention",
            LayerKind::TimestepEmbed => "timestep_embed",
            LayerKind::Add => "add",
            LayerKind::Sub => "sub",
            LayerKind::AddChannelBias => "add_channel_bias",
            LayerKind::Concat => "concat",
            LayerKind::GlobalAvgPool => "global_avg_pool",
            LayerKind::Flatten => "flatten",
        }
    }
}

/// A graph with concrete parameter and input values.
pub struct Instance {
    pub graph: Graph,
    pub params: Vec<Tensor<f64>>,
    pub inputs: Vec<Tensor<f64>>,
}

impl Instance {
    /// Fills parameters with N(0, 0.5²) and inputs with N(0, 1) (a time
    /// input of shape `[1]` is drawn from U(0, 1)).
    pub fn randomized(graph: Graph, batch: usize, rng: &mut Rng) -> Result<Self> {
        let params = graph
            .params()
            .iter()
            .map(|p| Tensor::from_fn(&p.shape, |_| 0.5 * rng.normal()))
            .collect();
        let inputs = graph
            .input_shapes()
            .iter()
            .map(|s| {
                let mut shape = vec![batch];
                shape.extend_from_slice(s);
                if s.as_slice() == [1] {
                    Tensor::from_fn(&shape, |_| rng.uniform())
                } else {
                    Tensor::from_fn(&shape, |_| rng.normal())
                }
            })
            .collect();
        Ok(Self { graph, params, inputs })
    }
}

fn pick(rng: &mut Rng, options: &[usize]) -> usize {
    options[rng.below(options.len())]
}

/// A one-layer random instance of `kind` on 4×4 feature maps.
pub fn miniature(kind: LayerKind, rng: &mut Rng) -> Result<Instance> {
    let mut b = GraphBuilder::new();
    let batch = pick(rng, &[1, 2]);
    let c = pick(rng, &[1, 2, 3]);
    let out = match kind {
        LayerKind::Conv2d => {
            let x = b.input("x", &[c, 4, 4])?;
            let (k, s, p) = [(1, 1, 0), (3, 1, 1), (2, 2, 0), (3, 2, 1), (4, 2, 1)][rng.below(5)];
            b.conv2d("layer", x, pick(rng, &[1, 2, 3]), k, s, p)?
        }
        LayerKind::PixelShuffle => {
            let x = b.input("x", &[4 * c, 4, 4])?;
            b.pixel_shuffle("layer", x, 2)?
        }
        LayerKind::Silu => {
            let x = b.input("x", &[c, 4, 4])?;
            b.silu("layer", x)?
        }
        LayerKind::GroupNorm => {
            let (ch, g) = [(2, 1), (2, 2), (4, 2), (3, 3), (6, 2)][rng.below(5)];
            let x = b.input("x", &[ch, 4, 4])?;
            b.group_norm("layer", x, g)?
        }
        LayerKind::Linear => {
            let x = b.input("x", &[pick(rng, &[1, 3, 5])])?;
            b.linear("layer", x, pick(rng, &[1, 2, 4]))?
        }
        LayerKind::SelfAttention => {
            let (ch, heads) = [(2, 1), (2, 2), (4, 2), (4, 1)][rng.below(4)];
            let x = b.input("x", &[ch, 4, 4])?;
            b.self_attention("layer", x, heads)?
        }
        LayerKind::TimestepEmbed => {
            let t = b.input("t", &[1])?;
            let scale = [1.0, 10.0, 100.0][rng.below(3)];
            b.timestep_embed("layer", t, pick(rng, &[2, 4, 8]), scale)?
        }
        LayerKind::Add | LayerKind::Sub => {
            let x = b.input("a", &[c, 4, 4])?;
            let y = b.input("b", &[c, 4, 4])?;
            let (x2, y2) = (b.silu("pre_a", x)?, b.silu("pre_b", y)?);
            if kind == LayerKind::Add {
                b.add("layer", x2, y2)?
            } else {
                b.sub("layer", x2, y2)?
            }
        }
        LayerKind::AddChannelBias => {
            let x = b.input("x", &[c, 4, 4])?;
            let v = b.input("v", &[c])?;
            b.add_channel_bias("layer", x, v)?
        }
        LayerKind::Concat => {
            let x = b.input("a", &[c, 4, 4])?;
            let y = b.input("b", &[pick(rng, &[1, 2]), 4, 4])?;
            let x2 = b.silu("pre_a", x)?;
            b.concat("layer", &[x2, y, x])?
        }
        LayerKind::GlobalAvgPool => {
            let x = b.input("x", &[c, 4, 4])?;
            b.global_avg_pool("layer", x)?
        }
        LayerKind::Flatten => {
            let x = b.input("x", &[c, 4, 4])?;
            let f = b.flatten("layer", x)?;
            b.linear("head", f, 2)?
        }
    };
    Instance::randomized(b.build(out)?, batch, rng)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Builder {
    EpsUnet,
    Generator,
    Discriminator,
}

impl Builder {
    pub const ALL: [Builder; 3] = [Builder::EpsUnet, Builder::Generator, Builder::Discriminator];

    pub fn name(self) -> &'static str {
        match self {
            Builder::EpsUnet => "eps_unet",
            Builder::Generator => "generator",
            Builder::Discriminator => "discriminator",
        }
    }
}

/// A two-resolution, narrow instance of a model builder on 4×4 inputs.
pub fn builder_miniature(which: Builder, rng: &mut Rng) -> Result<Instance> {
    let graph = match which {
        Builder::EpsUnet => EpsUnetConfig {
            base_channels: 2,
            attention: true,
            attention_heads: 2,
            time_scale: 10.0,
            ..EpsUnetConfig::desk(1, 4, 4)
        }
        .graph()?,
        Builder::Generator => GeneratorConfig {
            base_channels: 2,
            ..GeneratorConfig::desk(1, 4, 4)
        }
        .graph()?,
        Builder::Discriminator => DiscriminatorConfig {
            base_channels: 2,
            blocks: 1,
            ..DiscriminatorConfig::desk(1, 4, 4)
        }
        .graph()?,
    };
    Instance::randomized(graph, 2, rng)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Tensor holding the worst entry, e.g. `param layer.weight` or `input x`.
    pub worst: String,
}

impl GradcheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(RELATIVE_FLOOR)
}

/// Compares reverse-mode gradients of `Σ w ⊙ output` (random fixed `w`)
/// against central differences with step `h`. Every parameter and input
/// entry is perturbed unless `max_per_tensor` caps it, in which case a
/// seeded subset is checked.
pub fn check(inst: &Instance, h: f64, max_per_tensor: Option<usize>, rng: &mut Rng) -> Result<GradcheckReport> {
    let graph = &inst.graph;
    let trace = exec::forward(graph, &inst.params, &inst.inputs)?;
    let out = trace.output(graph);
    let weights = Tensor::from_fn(out.shape(), |_| rng.normal());
    let grads = exec::backward(graph, &inst.params, &trace, &weights)?;
    let outputs = |params: &[Tensor<f64>], inputs: &[Tensor<f64>]| -> Result<Tensor<f64>> {
        Ok(exec::forward(graph, params, inputs)?.output(graph).clone())
    };
    // Differencing outputs before the weighted sum keeps the cancellation
    // error at the scale of individual outputs rather than of the objective.
    let central = |up: &Tensor<f64>, down: &Tensor<f64>| -> f64 {
        up.data()
            .iter()
            .zip(down.data())
            .zip(weights.data())
            .map(|((u, d), w)| (u - d) * w)
            .sum::<f64>()
            / (2.0 * h)
    };

    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: String::new(),
    };
    let select = |n: usize, rng: &mut Rng| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        if let Some(cap) = max_per_tensor {
            if cap < n {
                rng.shuffle(&mut idx);
                idx.truncate(cap);
                idx.sort_unstable();
            }
        }
        idx
    };

    let mut params = inst.params.clone();
    for (pi, spec) in graph.params().iter().enumerate() {
        for j in select(params[pi].numel(), rng) {
            let orig = params[pi].data()[j];
            params[pi].data_mut()[j] = orig + h;
            let up = outputs(&params, &inst.inputs)?;
            params[pi].data_mut()[j] = orig - h;
            let down = outputs(&params, &inst.inputs)?;
            params[pi].data_mut()[j] = orig;
            let e = rel_error(grads.params[pi].data()[j], central(&up, &down));
            report.checked += 1;
            if e > report.max_rel_error || report.worst.is_empty() {
                report.max_rel_error = report.max_rel_error.max(e);
                report.worst = format!("param {}", spec.name);
            }
        }
    }
    let names = graph.input_names().iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let mut inputs = inst.inputs.clone();
    for (ii, name) in names.iter().enumerate() {
        for j in select(inputs[ii].numel(), rng) {
            let orig = inputs[ii].data()[j];
            inputs[ii].data_mut()[j] = orig + h;
            let up = outputs(&inst.params, &inputs)?;
            inputs[ii].data_mut()[j] = orig - h;
            let down = outputs(&inst.params, &inputs)?;
            inputs[ii].data_mut()[j] = orig;
            let e = rel_error(grads.inputs[ii].data()[j], central(&up, &down));
            report.checked += 1;
            if e > report.max_rel_error || report.worst.is_empty() {
                report.max_rel_error = report.max_rel_error.max(e);
                report.worst = format!("input {name}");
            }
        }
    }
    Ok(report)
}

/// Worst report over `trials` random miniatures of one layer kind.
pub fn check_layer_kind(kind: LayerKind, trials: usize, seed: u64) -> Result<GradcheckReport> {
    let mut rng = Rng::new(seed);
    let mut worst: Option<GradcheckReport> = None;
    for _ in 0..trials {
        let inst = miniature(kind, &mut rng)?;
        let r = check(&inst, DEFAULT_STEP, None, &mut rng)?;
        worst = Some(merge(worst, r));
    }
    Ok(worst.unwrap_or(GradcheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: String::new(),
    }))
}

/// Worst report over `trials` miniatures of a model builder, checking at most
/// `max_per_tensor` entries of each tensor.
pub fn check_builder(which: Builder, trials: usize, max_per_tensor: usize, seed: u64) -> Result<GradcheckReport> {
    let mut rng = Rng::new(seed);
    let mut worst: Option<GradcheckReport> = None;
    for _ in 0..trials {
        let inst = builder_miniature(which, &mut rng)?;
        let r = check(&inst, DEFAULT_STEP, Some(max_per_tensor), &mut rng)?;
        worst = Some(merge(worst, r));
    }
    Ok(worst.unwrap_or(GradcheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: String::new(),
    }))
}

fn merge(acc: Option<GradcheckReport>, r: GradcheckReport) -> GradcheckReport {
    match acc {
        None => r,
        Some(a) => {
            let checked = a.checked + r.checked;
            let (max_rel_error, worst) = if r.max_rel_error > a.max_rel_error {
                (r.max_rel_error, r.worst)
            } else {
                (a.max_rel_error, a.worst)
            };
            GradcheckReport {
                max_rel_error,
                checked,
                worst,
            }
        }
    }
}
