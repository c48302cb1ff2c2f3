//! Miniature architectures: the ε-predictor UNet, the subband generator and
//! the Wasserstein critic.
//!
//! All three are fully convolutional up to a global pooling step, so their
//! parameter lists depend on channel widths only. [`GeneratorConfig::graph`]
//! and friends can therefore specialize one parameter set to any resolution.

use mscgm_core::{Error, Real, Result, Rng};

use crate::graph::{Graph, GraphBuilder, Init, NodeId};
use crate::network::Network;

fn invalid(msg: String) -> Error {
    Error::InvalidArgument(msg)
}

/// Largest group count ≤ 8 dividing `channels`.
pub fn norm_groups(channels: usize) -> usize {
    (1..=8.min(channels)).rev().find(|g| channels % g == 0).unwrap_or(1)
}

/// GN → SiLU → conv → (+time) → GN → SiLU → conv(zero) plus a skip path.
fn res_block(
    b: &mut GraphBuilder,
    name: &str,
    x: NodeId,
    cout: usize,
    temb: Option<NodeId>,
) -> Result<NodeId> {
    let cin = b.shape(x)[0];
    let h = b.group_norm(&format!("{name}.norm1"), x, norm_groups(cin))?;
    let h = b.silu(&format!("{name}.act1"), h)?;
    let mut h = b.conv2d(&format!("{name}.conv1"), h, cout, 3, 1, 1)?;
    if let Some(t) = temb {
        let proj = b.linear(&format!("{name}.time"), t, cout)?;
        h = b.add_channel_bias(&format!("{name}.time_add"), h, proj)?;
    }
    let h = b.group_norm(&format!("{name}.norm2"), h, norm_groups(cout))?;
    let h = b.silu(&format!("{name}.act2"), h)?;
    let h = b.conv2d_init(&format!("{name}.conv2"), h, cout, 3, 1, 1, Init::Zeros)?;
    let skip = if cin == cout {
        x
    } else {
        b.conv2d(&format!("{name}.skip"), x, cout, 1, 1, 0)?
    };
    b.add(&format!("{name}.out"), skip, h)
}

fn attention_block(b: &mut GraphBuilder, name: &str, x: NodeId, heads: usize) -> Result<NodeId> {
    let c = b.shape(x)[0];
    let h = b.group_norm(&format!("{name}.norm"), x, norm_groups(c))?;
    let h = b.self_attention(&format!("{name}.attn"), h, heads)?;
    b.add(&format!("{name}.out"), x, h)
}

fn downsample(b: &mut GraphBuilder, name: &str, x: NodeId, cout: usize) -> Result<NodeId> {
    b.conv2d(name, x, cout, 2, 2, 0)
}

/// 1×1 conv to `4·cout` channels followed by a factor-2 pixel shuffle.
fn upsample(b: &mut GraphBuilder, name: &str, x: NodeId, cout: usize) -> Result<NodeId> {
    let h = b.conv2d(&format!("{name}.conv"), x, 4 * cout, 1, 1, 0)?;
    b.pixel_shuffle(&format!("{name}.shuffle"), h, 2)
}

/// Encoder-decoder with skip connections shared by the UNet and generator.
fn unet_body(
    b: &mut GraphBuilder,
    x: NodeId,
    base: usize,
    levels: usize,
    temb: Option<NodeId>,
    attention_heads: Option<usize>,
) -> Result<NodeId> {
    let width = |l: usize| base << l;
    let mut h = b.conv2d("stem", x, base, 3, 1, 1)?;
    let mut skips = Vec::with_capacity(levels);
    for l in 0..levels {
        h = res_block(b, &format!("down{l}.res"), h, width(l), temb)?;
        if l + 1 < levels {
            skips.push(h);
            h = downsample(b, &format!("down{l}.pool"), h, width(l + 1))?;
        }
    }
    let deepest = levels - 1;
    h = res_block(b, "mid.res1", h, width(deepest), temb)?;
    if let Some(heads) = attention_heads {
        h = attention_block(b, "mid.attn", h, heads)?;
    }
    h = res_block(b, "mid.res2", h, width(deepest), temb)?;
    for l in (0..deepest).rev() {
        h = upsample(b, &format!("up{l}.up"), h, width(l))?;
        let skip = skips.pop().expect("one skip per downsampling");
        h = b.concat(&format!("up{l}.cat"), &[h, skip])?;
        h = res_block(b, &format!("up{l}.res"), h, width(l), temb)?;
    }
    let c = b.shape(h)[0];
    let h = b.group_norm("head.norm", h, norm_groups(c))?;
    b.silu("head.act", h)
}

fn check_extent(what: &str, height: usize, width: usize, levels: usize) -> Result<()> {
    let f = 1usize << (levels - 1);
    if height == 0 || width == 0 || height % f != 0 || width % f != 0 {
        return Err(invalid(format!(
            "{what}: {height}×{width} input must be divisible by {f} for {levels} resolutions"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpsUnetConfig {
    /// Channels of `x_t` (and of the condition).
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub base_channels: usize,
    /// Number of resolutions, each half the previous.
    pub levels: usize,
    pub attention: bool,
    pub attention_heads: usize,
    /// Multiplier applied to the normalized time before the sinusoidal
    /// embedding.
    pub time_scale: f64,
}

impl EpsUnetConfig {
    /// Desk default: 32 base channels over 2 resolutions.
    pub fn desk(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            base_channels: 32,
            levels: 2,
            attention: false,
            attention_heads: 4,
            time_scale: 1000.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.base_channels == 0 || self.levels == 0 {
            return Err(invalid(format!(
                "eps UNet needs positive channels, base width and levels, got {}, {}, {}",
                self.channels, self.base_channels, self.levels
            )));
        }
        if self.levels > 6 {
            return Err(invalid(format!("at most 6 resolutions supported, got {}", self.levels)));
        }
        let deepest = self.base_channels << (self.levels - 1);
        if self.attention && (self.attention_heads == 0 || deepest % self.attention_heads != 0) {
            return Err(invalid(format!(
                "{} attention heads do not divide {deepest} channels",
                self.attention_heads
            )));
        }
        check_extent("eps UNet", self.height, self.width, self.levels)
    }

    /// Inputs `(x_t [C,H,W], y [C,H,W], t [1])`, output `[C,H,W]`.
    pub fn graph(&self) -> Result<Graph> {
        self.validate()?;
        let (c, h, w) = (self.channels, self.height, self.width);
        let mut b = GraphBuilder::new();
        let xt = b.input("x_t", &[c, h, w])?;
        let y = b.input("y", &[c, h, w])?;
        let t = b.input("t", &[1])?;
        let base = self.base_channels;
        let emb = b.timestep_embed("time.embed", t, base, self.time_scale)?;
        let emb = b.linear("time.fc1", emb, 2 * base)?;
        let emb = b.silu("time.act", emb)?;
        let emb = b.linear("time.fc2", emb, 2 * base)?;
        let x = b.concat("input", &[xt, y])?;
        let heads = self.attention.then_some(self.attention_heads);
        let h = unet_body(&mut b, x, base, self.levels, Some(emb), heads)?;
        let out = b.conv2d_init("head.conv", h, c, 3, 1, 1, Init::Zeros)?;
        b.build(out)
    }
}

pub fn build_eps_unet<S: Real>(cfg: &EpsUnetConfig, rng: &mut Rng) -> Result<Network<S>> {
    Ok(Network::new(cfg.graph()?, rng))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    /// Channels of the image (the low band has this many, the detail stack
    /// three times as many).
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub base_channels: usize,
    pub levels: usize,
}

impl GeneratorConfig {
    pub fn desk(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            base_channels: 32,
            levels: 2,
        }
    }

    pub fn at(&self, height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.base_channels == 0 || self.levels == 0 || self.levels > 6 {
            return Err(invalid(format!(
                "generator needs positive channels and base width and 1..=6 levels, got {}, {}, {}",
                self.channels, self.base_channels, self.levels
            )));
        }
        check_extent("generator", self.height, self.width, self.levels)
    }

    /// Inputs `(x_L [C], y_H [3C], z [1], scale [1])` on one `H × W` grid;
    /// output `[3C, H, W]` predicted as a correction to `y_H`.
    pub fn graph(&self) -> Result<Graph> {
        self.validate()?;
        let (c, h, w) = (self.channels, self.height, self.width);
        let mut b = GraphBuilder::new();
        let xl = b.input("x_low", &[c, h, w])?;
        let yh = b.input("y_high", &[3 * c, h, w])?;
        let z = b.input("z", &[1, h, w])?;
        let scale = b.input("scale", &[1, h, w])?;
        let x = b.concat("input", &[xl, yh, z, scale])?;
        let body = unet_body(&mut b, x, self.base_channels, self.levels, None, None)?;
        let delta = b.conv2d_init("head.conv", body, 3 * c, 3, 1, 1, Init::Zeros)?;
        let out = b.add("residual", yh, delta)?;
        b.build(out)
    }
}

pub fn build_generator<S: Real>(cfg: &GeneratorConfig, rng: &mut Rng) -> Result<Network<S>> {
    Ok(Network::new(cfg.graph()?, rng))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub base_channels: usize,
    /// Stride-2 blocks; each halves the resolution and doubles the width.
    pub blocks: usize,
}

impl DiscriminatorConfig {
    pub fn desk(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            base_channels: 16,
            blocks: 2,
        }
    }

    pub fn at(&self, height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.base_channels == 0 || self.blocks > 6 {
            return Err(invalid(format!(
                "discriminator needs positive channels and at most 6 blocks, got {} channels, {} base, {} blocks",
                self.channels, self.base_channels, self.blocks
            )));
        }
        check_extent("discriminator", self.height, self.width, self.blocks + 1)
    }

    /// Inputs `(subbands [3C], condition [4C], scale [1])`, output one
    /// unbounded score per sample.
    pub fn graph(&self) -> Result<Graph> {
        self.validate()?;
        let (c, h, w) = (self.channels, self.height, self.width);
        let mut b = GraphBuilder::new();
        let bands = b.input("subbands", &[3 * c, h, w])?;
        let cond = b.input("condition", &[4 * c, h, w])?;
        let scale = b.input("scale", &[1, h, w])?;
        let x = b.concat("input", &[bands, cond, scale])?;
        let mut width = self.base_channels;
        let x = b.conv2d("block0.conv", x, width, 3, 1, 1)?;
        let mut x = b.silu("block0.act", x)?;
        for i in 1..=self.blocks {
            width *= 2;
            x = b.conv2d(&format!("block{i}.conv"), x, width, 4, 2, 1)?;
            x = b.silu(&format!("block{i}.act"), x)?;
        }
        let x = b.global_avg_pool("pool", x)?;
        let x = b.linear("dense1", x, width)?;
        let x = b.silu("dense1.act", x)?;
        let out = b.linear("dense2", x, 1)?;
        b.build(out)
    }
}

pub fn build_discriminator<S: Real>(cfg: &DiscriminatorConfig, rng: &mut Rng) -> Result<Network<S>> {
    Ok(Network::new(cfg.graph()?, rng))
}
