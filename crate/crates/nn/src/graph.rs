//! Static computation graphs.
//!
//! A [`Graph`] is an ordered list of nodes, each consuming earlier nodes, so
//! insertion order is a topological order. Shapes are tracked per sample
//! (without the batch axis) while building; every runtime tensor carries a
//! leading batch axis.

use mscgm_core::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Normal with the given std, truncated at two std.
    TruncNormal(f64),
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Input {
        slot: usize,
    },
    Conv2d {
        input: NodeId,
        weight: ParamId,
        bias: ParamId,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    PixelShuffle {
        input: NodeId,
        factor: usize,
    },
    Silu {
        input: NodeId,
    },
    GroupNorm {
        input: NodeId,
        groups: usize,
        gamma: ParamId,
        beta: ParamId,
    },
    Linear {
        input: NodeId,
        weight: ParamId,
        bias: ParamId,
        fin: usize,
        fout: usize,
    },
    SelfAttention {
        input: NodeId,
        heads: usize,
        qkv_weight: ParamId,
        qkv_bias: ParamId,
        out_weight: ParamId,
        out_bias: ParamId,
    },
    /// Sinusoidal features of a `[B, 1]` time input.
    TimestepEmbed {
        input: NodeId,
        dim: usize,
        scale: f64,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Sub {
        a: NodeId,
        b: NodeId,
    },
    /// `[B, C, H, W] + [B, C]` broadcast over space.
    AddChannelBias {
        a: NodeId,
        b: NodeId,
    },
    Concat {
        inputs: Vec<NodeId>,
    },
    GlobalAvgPool {
        input: NodeId,
    },
    Flatten {
        input: NodeId,
    },
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Conv2d { .. } => "conv2d",
            Op::PixelShuffle { .. } => "pixel_shuffle",
            Op::Silu { .. } => "silu",
            Op::GroupNorm { .. } => "group_norm",
            Op::Linear { .. } => "linear",
            Op::SelfAttention { .. } => "self_attention",
            Op::TimestepEmbed { .. } => "timestep_embed",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::AddChannelBias { .. } => "add_channel_bias",
            Op::Concat { .. } => "concat",
            Op::GlobalAvgPool { .. } => "global_avg_pool",
            Op::Flatten { .. } => "flatten",
        }
    }

    pub fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Input { .. } => vec![],
            Op::Conv2d { input, .. }
            | Op::PixelShuffle { input, .. }
            | Op::Silu { input }
            | Op::GroupNorm { input, .. }
            | Op::Linear { input, .. }
            | Op::SelfAttention { input, .. }
            | Op::TimestepEmbed { input, .. }
            | Op::GlobalAvgPool { input }
            | Op::Flatten { input } => vec![*input],
            Op::Add { a, b } | Op::Sub { a, b } | Op::AddChannelBias { a, b } => vec![*a, *b],
            Op::Concat { inputs } => inputs.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub name: String,
    pub op: Op,
    /// Per-sample output shape.
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    pub(crate) params: Vec<ParamSpec>,
    pub(crate) inputs: Vec<NodeId>,
    pub(crate) output: NodeId,
}

impl Graph {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn inputs(&self) -> &[NodeId] {
        &self.inputs
    }

    pub fn output(&self) -> NodeId {
        self.output
    }

    /// Declared per-sample shapes of the inputs, in slot order.
    pub fn input_shapes(&self) -> Vec<Vec<usize>> {
        self.inputs.iter().map(|&id| self.nodes[id.0].shape.clone()).collect()
    }

    pub fn input_names(&self) -> Vec<&str> {
        self.inputs.iter().map(|&id| self.nodes[id.0].name.as_str()).collect()
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.nodes[self.output.0].shape
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(ParamSpec::numel).sum()
    }
}

fn invalid(msg: String) -> Error {
    Error::InvalidArgument(msg)
}

fn shape_mismatch(name: &str, msg: String) -> Error {
    Error::InvalidShape(format!("layer '{name}': {msg}"))
}

#[derive(Debug, Default)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    params: Vec<ParamSpec>,
    inputs: Vec<NodeId>,
    weight_std: Option<f64>,
}

pub const DEFAULT_WEIGHT_STD: f64 = 0.02;

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Overrides the truncated-normal std used for weights created afterwards.
    pub fn set_weight_std(&mut self, std: f64) {
        self.weight_std = Some(std);
    }

    fn weight_init(&self) -> Init {
        Init::TruncNormal(self.weight_std.unwrap_or(DEFAULT_WEIGHT_STD))
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    fn check_id(&self, id: NodeId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(invalid(format!("node {} does not exist", id.0)));
        }
        Ok(())
    }

    fn unique_name(&self, name: &str) -> Result<String> {
        if self.nodes.iter().any(|n| n.name == name) {
            return Err(invalid(format!("duplicate layer name '{name}'")));
        }
        Ok(name.to_string())
    }

    fn push(&mut self, name: &str, op: Op, shape: Vec<usize>) -> Result<NodeId> {
        let name = self.unique_name(name)?;
        for id in op.inputs() {
            self.check_id(id)?;
        }
        self.nodes.push(Node { name, op, shape });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn param(&mut self, name: String, shape: Vec<usize>, init: Init) -> ParamId {
        self.params.push(ParamSpec { name, shape, init });
        ParamId(self.params.len() - 1)
    }

    fn spatial(&self, name: &str, id: NodeId) -> Result<(usize, usize, usize)> {
        self.check_id(id)?;
        match *self.shape(id) {
            [c, h, w] => Ok((c, h, w)),
            ref s => Err(shape_mismatch(name, format!("expected C×H×W input, got {s:?}"))),
        }
    }

    fn features(&self, name: &str, id: NodeId) -> Result<usize> {
        self.check_id(id)?;
        match *self.shape(id) {
            [f] => Ok(f),
            ref s => Err(shape_mismatch(name, format!("expected a feature vector, got {s:?}"))),
        }
    }

    /// Declares the next input slot with its per-sample shape.
    pub fn input(&mut self, name: &str, shape: &[usize]) -> Result<NodeId> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(invalid(format!("input '{name}' needs positive extents, got {shape:?}")));
        }
        let slot = self.inputs.len();
        let id = self.push(name, Op::Input { slot }, shape.to_vec())?;
        self.inputs.push(id);
        Ok(id)
    }

    pub fn conv2d(
        &mut self,
        name: &str,
        input: NodeId,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let init = self.weight_init();
        self.conv2d_init(name, input, cout, kernel, stride, pad, init)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv2d_init(
        &mut self,
        name: &str,
        input: NodeId,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        weight_init: Init,
    ) -> Result<NodeId> {
        let (cin, h, w) = self.spatial(name, input)?;
        if cout == 0 || kernel == 0 || stride == 0 {
            return Err(invalid(format!("conv '{name}': channels, kernel and stride must be positive")));
        }
        if h + 2 * pad < kernel || w + 2 * pad < kernel {
            return Err(shape_mismatch(name, format!("kernel {kernel} exceeds padded input {h}×{w}")));
        }
        let ho = (h + 2 * pad - kernel) / stride + 1;
        let wo = (w + 2 * pad - kernel) / stride + 1;
        let weight = self.param(format!("{name}.weight"), vec![cout, cin, kernel, kernel], weight_init);
        let bias = self.param(format!("{name}.bias"), vec![cout], Init::Zeros);
        self.push(
            name,
            Op::Conv2d {
                input,
                weight,
                bias,
                cin,
                cout,
                kernel,
                stride,
                pad,
            },
            vec![cout, ho, wo],
        )
    }

    pub fn pixel_shuffle(&mut self, name: &str, input: NodeId, factor: usize) -> Result<NodeId> {
        let (c, h, w) = self.spatial(name, input)?;
        let r2 = factor * factor;
        if factor == 0 || c % r2 != 0 {
            return Err(shape_mismatch(name, format!("{c} channels not divisible by {factor}²")));
        }
        self.push(name, Op::PixelShuffle { input, factor }, vec![c / r2, h * factor, w * factor])
    }

    pub fn silu(&mut self, name: &str, input: NodeId) -> Result<NodeId> {
        self.check_id(input)?;
        let shape = self.shape(input).to_vec();
        self.push(name, Op::Silu { input }, shape)
    }

    pub fn group_norm(&mut self, name: &str, input: NodeId, groups: usize) -> Result<NodeId> {
        let (c, h, w) = self.spatial(name, input)?;
        if groups == 0 || c % groups != 0 {
            return Err(invalid(format!("group norm '{name}': {c} channels not divisible into {groups} groups")));
        }
        let gamma = self.param(format!("{name}.gamma"), vec![c], Init::Ones);
        let beta = self.param(format!("{name}.beta"), vec![c], Init::Zeros);
        self.push(
            name,
            Op::GroupNorm {
                input,
                groups,
                gamma,
                beta,
            },
            vec![c, h, w],
        )
    }

    pub fn linear(&mut self, name: &str, input: NodeId, fout: usize) -> Result<NodeId> {
        let init = self.weight_init();
        self.linear_init(name, input, fout, init)
    }

    pub fn linear_init(&mut self, name: &str, input: NodeId, fout: usize, weight_init: Init) -> Result<NodeId> {
        let fin = self.features(name, input)?;
        if fout == 0 {
            return Err(invalid(format!("linear '{name}': output width must be positive")));
        }
        let weight = self.param(format!("{name}.weight"), vec![fout, fin], weight_init);
        let bias = self.param(format!("{name}.bias"), vec![fout], Init::Zeros);
        self.push(
            name,
            Op::Linear {
                input,
                weight,
                bias,
                fin,
                fout,
            },
            vec![fout],
        )
    }

    pub fn self_attention(&mut self, name: &str, input: NodeId, heads: usize) -> Result<NodeId> {
        let (c, h, w) = self.spatial(name, input)?;
        if heads == 0 || c % heads != 0 {
            return Err(invalid(format!("attention '{name}': {c} channels not divisible into {heads} heads")));
        }
        let init = self.weight_init();
        let qkv_weight = self.param(format!("{name}.qkv.weight"), vec![3 * c, c], init);
        let qkv_bias = self.param(format!("{name}.qkv.bias"), vec![3 * c], Init::Zeros);
        let out_weight = self.param(format!("{name}.out.weight"), vec![c, c], init);
        let out_bias = self.param(format!("{name}.out.bias"), vec![c], Init::Zeros);
        self.push(
            name,
            Op::SelfAttention {
                input,
                heads,
                qkv_weight,
                qkv_bias,
                out_weight,
                out_bias,
            },
            vec![c, h, w],
        )
    }

    pub fn timestep_embed(&mut self, name: &str, input: NodeId, dim: usize, scale: f64) -> Result<NodeId> {
        let f = self.features(name, input)?;
        if f != 1 {
            return Err(shape_mismatch(name, format!("time input must have one feature, got {f}")));
        }
        if dim < 2 || dim % 2 != 0 {
            return Err(invalid(format!("timestep embedding '{name}' needs an even dim ≥ 2, got {dim}")));
        }
        self.push(name, Op::TimestepEmbed { input, dim, scale }, vec![dim])
    }

    fn same_shape(&self, name: &str, a: NodeId, b: NodeId) -> Result<Vec<usize>> {
        self.check_id(a)?;
        self.check_id(b)?;
        if self.shape(a) != self.shape(b) {
            return Err(shape_mismatch(
                name,
                format!("operands {:?} and {:?} differ", self.shape(a), self.shape(b)),
            ));
        }
        Ok(self.shape(a).to_vec())
    }

    pub fn add(&mut self, name: &str, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.same_shape(name, a, b)?;
        self.push(name, Op::Add { a, b }, shape)
    }

    pub fn sub(&mut self, name: &str, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.same_shape(name, a, b)?;
        self.push(name, Op::Sub { a, b }, shape)
    }

    pub fn add_channel_bias(&mut self, name: &str, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.spatial(name, a)?;
        let f = self.features(name, b)?;
        if f != c {
            return Err(shape_mismatch(name, format!("{f} features for {c} channels")));
        }
        self.push(name, Op::AddChannelBias { a, b }, vec![c, h, w])
    }

    pub fn concat(&mut self, name: &str, inputs: &[NodeId]) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(invalid(format!("concat '{name}' needs at least one input")));
        }
        let (_, h, w) = self.spatial(name, inputs[0])?;
        let mut c_total = 0;
        for &id in inputs {
            let (c, hi, wi) = self.spatial(name, id)?;
            if (hi, wi) != (h, w) {
                return Err(shape_mismatch(name, format!("spatial extents {hi}×{wi} vs {h}×{w}")));
            }
            c_total += c;
        }
        self.push(
            name,
            Op::Concat {
                inputs: inputs.to_vec(),
            },
            vec![c_total, h, w],
        )
    }

    pub fn global_avg_pool(&mut self, name: &str, input: NodeId) -> Result<NodeId> {
        let (c, _, _) = self.spatial(name, input)?;
        self.push(name, Op::GlobalAvgPool { input }, vec![c])
    }

    pub fn flatten(&mut self, name: &str, input: NodeId) -> Result<NodeId> {
        self.check_id(input)?;
        let n = self.shape(input).iter().product();
        self.push(name, Op::Flatten { input }, vec![n])
    }

    pub fn build(self, output: NodeId) -> Result<Graph> {
        self.check_id(output)?;
        if self.inputs.is_empty() {
            return Err(invalid("graph has no inputs".into()));
        }
        Ok(Graph {
            nodes: self.nodes,
            params: self.params,
            inputs: self.inputs,
            output,
        })
    }
}
