//! Forward evaluation and reverse-mode differentiation of a [`Graph`].
//!
//! Both passes are pure functions of the parameters and inputs and are
//! generic over [`Scalar`], so they run unchanged on dual numbers.

use mscgm_core::{Error, Result, Scalar, Tensor};

use crate::graph::{Graph, Op};
use crate::kernels::attention::{self, AttentionCache, AttentionDims, AttentionGrads};
use crate::kernels::conv::{self, ConvGeom};
use crate::kernels::norm::{self, GroupNormCache};

pub(crate) enum Aux<D> {
    None,
    Cols(Vec<D>),
    Norm(GroupNormCache<D>),
    Attention(AttentionCache<D>),
}

/// Activations recorded by a forward pass.
pub struct Trace<D> {
    pub(crate) batch: usize,
    pub(crate) values: Vec<Tensor<D>>,
    pub(crate) aux: Vec<Aux<D>>,
}

impl<D: Scalar> Trace<D> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn output<'a>(&'a self, graph: &Graph) -> &'a Tensor<D> {
        &self.values[graph.output().index()]
    }

    pub fn value(&self, node: usize) -> &Tensor<D> {
        &self.values[node]
    }
}

/// Gradients of a scalar objective.
pub struct Gradients<D> {
    pub params: Vec<Tensor<D>>,
    /// One entry per input slot.
    pub inputs: Vec<Tensor<D>>,
}

fn batched(batch: usize, per_sample: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(per_sample.len() + 1);
    s.push(batch);
    s.extend_from_slice(per_sample);
    s
}

fn check_params<D: Scalar>(graph: &Graph, params: &[Tensor<D>]) -> Result<()> {
    if params.len() != graph.params().len() {
        return Err(Error::ContractViolation(format!(
            "graph declares {} parameters, got {}",
            graph.params().len(),
            params.len()
        )));
    }
    for (spec, p) in graph.params().iter().zip(params) {
        if p.shape() != spec.shape.as_slice() {
            return Err(Error::ContractViolation(format!(
                "parameter '{}' has shape {:?}, expected {:?}",
                spec.name,
                p.shape(),
                spec.shape
            )));
        }
    }
    Ok(())
}

fn sigmoid<D: Scalar>(x: D) -> D {
    if x >= D::zero() {
        D::one() / (D::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (D::one() + e)
    }
}

fn frequencies(dim: usize) -> Vec<f64> {
    let half = dim / 2;
    (0..half)
        .map(|i| (-(10_000f64).ln() * i as f64 / half as f64).exp())
        .collect()
}

pub fn forward<D: Scalar>(graph: &Graph, params: &[Tensor<D>], inputs: &[Tensor<D>]) -> Result<Trace<D>> {
    check_params(graph, params)?;
    if inputs.len() != graph.inputs().len() {
        return Err(Error::ContractViolation(format!(
            "graph takes {} inputs ({:?}), got {}",
            graph.inputs().len(),
            graph.input_names(),
            inputs.len()
        )));
    }
    let batch = inputs[0].shape()[0];
    let mut values: Vec<Tensor<D>> = Vec::with_capacity(graph.nodes().len());
    let mut aux = Vec::with_capacity(graph.nodes().len());
    for node in graph.nodes() {
        let out_shape = batched(batch, &node.shape);
        let (data, extra) = match &node.op {
            Op::Input { slot } => {
                let t = &inputs[*slot];
                if t.shape() != out_shape.as_slice() {
                    return Err(Error::ContractViolation(format!(
                        "layer '{}': input shape {:?}, expected {:?}",
                        node.name,
                        t.shape(),
                        out_shape
                    )));
                }
                (t.data().to_vec(), Aux::None)
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                cin,
                cout,
                kernel,
                stride,
                pad,
            } => {
                let src = &values[input.index()];
                let [_, _, h, w] = *src.shape() else { unreachable!() };
                let g = ConvGeom::new(*cin, *cout, *kernel, *stride, *pad, h, w);
                let (out, cols) = conv::forward(
                    src.data(),
                    batch,
                    &g,
                    params[weight.index()].data(),
                    params[bias.index()].data(),
                );
                (out, Aux::Cols(cols))
            }
            Op::PixelShuffle { input, factor } => {
                let src = &values[input.index()];
                let [_, c, h, w] = *src.shape() else { unreachable!() };
                let r = *factor;
                let co = c / (r * r);
                let mut out = vec![D::zero(); src.numel()];
                let s = src.data();
                for b in 0..batch {
                    for ch in 0..co {
                        for y in 0..h * r {
                            for x in 0..w * r {
                                let sc = ch * r * r + (y % r) * r + x % r;
                                out[((b * co + ch) * h * r + y) * w * r + x] = s[((b * c + sc) * h + y / r) * w + x / r];
                            }
                        }
                    }
                }
                (out, Aux::None)
            }
            Op::Silu { input } => {
                let src = &values[input.index()];
                (src.data().iter().map(|&v| v * sigmoid(v)).collect(), Aux::None)
            }
            Op::GroupNorm {
                input,
                groups,
                gamma,
                beta,
            } => {
                let src = &values[input.index()];
                let [_, c, h, w] = *src.shape() else { unreachable!() };
                let (out, cache) = norm::forward(
                    src.data(),
                    batch,
                    c,
                    h * w,
                    *groups,
                    params[gamma.index()].data(),
                    params[beta.index()].data(),
                );
                (out, Aux::Norm(cache))
            }
            Op::Linear {
                input,
                weight,
                bias,
                fin,
                fout,
            } => {
                let src = &values[input.index()];
                let bias = params[bias.index()].data();
                let mut out: Vec<D> = (0..batch * fout).map(|i| bias[i % fout]).collect();
                D::gemm(
                    batch,
                    *fin,
                    *fout,
                    D::one(),
                    src.data(),
                    *fin as isize,
                    1,
                    params[weight.index()].data(),
                    1,
                    *fin as isize,
                    D::one(),
                    &mut out,
                    *fout as isize,
                    1,
                );
                (out, Aux::None)
            }
            Op::SelfAttention {
                input,
                heads,
                qkv_weight,
                qkv_bias,
                out_weight,
                out_bias,
            } => {
                let src = &values[input.index()];
                let [_, c, h, w] = *src.shape() else { unreachable!() };
                let dims = AttentionDims {
                    batch,
                    channels: c,
                    tokens: h * w,
                    heads: *heads,
                };
                let (out, cache) = attention::forward(
                    src.data(),
                    dims,
                    params[qkv_weight.index()].data(),
                    params[qkv_bias.index()].data(),
                    params[out_weight.index()].data(),
                    params[out_bias.index()].data(),
                );
                (out, Aux::Attention(cache))
            }
            Op::TimestepEmbed { input, dim, scale } => {
                let src = &values[input.index()];
                let freqs = frequencies(*dim);
                let half = dim / 2;
                let mut out = vec![D::zero(); batch * dim];
                for b in 0..batch {
                    let t = src.data()[b] * D::from_f64(*scale);
                    for (i, &f) in freqs.iter().enumerate() {
                        let arg = t * D::from_f64(f);
                        out[b * dim + i] = arg.sin();
                        out[b * dim + half + i] = arg.cos();
                    }
                }
                (out, Aux::None)
            }
            Op::Add { a, b } => (values[a.index()].add(&values[b.index()])?.into_data(), Aux::None),
            Op::Sub { a, b } => (values[a.index()].sub(&values[b.index()])?.into_data(), Aux::None),
            Op::AddChannelBias { a, b } => {
                let src = &values[a.index()];
                let bias = values[b.index()].data();
                let [_, c, h, w] = *src.shape() else { unreachable!() };
                let hw = h * w;
                let out = src
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| v + bias[i / hw / c * c + (i / hw) % c])
                    .collect();
                (out, Aux::None)
            }
            Op::Concat { inputs } => {
                let mut out = Vec::with_capacity(out_shape.iter().product());
                for b in 0..batch {
                    for id in inputs {
                        let src = &values[id.index()];
                        let per = src.numel() / batch;
                        out.extend_from_slice(&src.data()[b * per..(b + 1) * per]);
                    }
                }
                (out, Aux::None)
            }
            Op::GlobalAvgPool { input } => {
                let src = &values[input.index()];
                let [_, _, h, w] = *src.shape() else { unreachable!() };
                let inv = D::one() / D::from_usize(h * w);
                let out = src
                    .data()
                    .chunks_exact(h * w)
                    .map(|plane| {
                        let mut acc = D::zero();
                        for &v in plane {
                            acc += v;
                        }
                        acc * inv
                    })
                    .collect();
                (out, Aux::None)
            }
            Op::Flatten { input } => (values[input.index()].data().to_vec(), Aux::None),
        };
        values.push(Tensor::new(&out_shape, data).map_err(|e| {
            Error::ContractViolation(format!("layer '{}' ({}): {e}", node.name, node.op.kind()))
        })?);
        aux.push(extra);
    }
    Ok(Trace { batch, values, aux })
}

fn accumulate<D: Scalar>(slot: &mut Option<Vec<D>>, grad: Vec<D>) {
    match slot {
        Some(existing) => {
            for (e, g) in existing.iter_mut().zip(grad) {
                *e += g;
            }
        }
        None => *slot = Some(grad),
    }
}

/// Reverse pass for the objective `Σ grad_output ⊙ output`.
pub fn backward<D: Scalar>(
    graph: &Graph,
    params: &[Tensor<D>],
    trace: &Trace<D>,
    grad_output: &Tensor<D>,
) -> Result<Gradients<D>> {
    check_params(graph, params)?;
    let out = &trace.values[graph.output().index()];
    if grad_output.shape() != out.shape() {
        return Err(Error::ContractViolation(format!(
            "output gradient shape {:?} does not match output {:?}",
            grad_output.shape(),
            out.shape()
        )));
    }
    let batch = trace.batch;
    let mut pgrads: Vec<Vec<D>> = graph.params().iter().map(|p| vec![D::zero(); p.numel()]).collect();
    let mut grads: Vec<Option<Vec<D>>> = (0..graph.nodes().len()).map(|_| None).collect();
    grads[graph.output().index()] = Some(grad_output.data().to_vec());

    for (idx, node) in graph.nodes().iter().enumerate().rev() {
        let Some(g) = grads[idx].take() else {
            continue;
        };
        match &node.op {
            Op::Input { .. } => {
                grads[idx] = Some(g);
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                cin,
                cout,
                kernel,
                stride,
                pad,
            } => {
                let src = &trace.values[input.index()];
                let [_, _, h, w] = *src.shape() else { unreachable!() };
                let geom = ConvGeom::new(*cin, *cout, *kernel, *stride, *pad, h, w);
                let Aux::Cols(cols) = &trace.aux[idx] else { unreachable!() };
                let (wi, bi) = (weight.index(), bias.index());
                let (dw, db) = if wi < bi {
                    let (lo, hi) = pgrads.split_at_mut(bi);
                    (&mut lo[wi], &mut hi[0])
                } else {
                    let (lo, hi) = pgrads.split_at_mut(wi);
                    (&mut hi[0], &mut lo[bi])
                };
                let dx = conv::backward(src.data(), cols, &g, batch, &geom, params[wi].data(), dw, db);
                accumulate(&mut grads[input.index()], dx);
            }
            Op::PixelShuffle { input, factor } => {
                let src = &trace.values[input.index()];
                let [_, c, h, w] = *src.shape() else { unreachable!() };
                let r = *factor;
                let co = c / (r * r);
                let mut dx = vec![D::zero(); src.numel()];
                for b in 0..batch {
                    for ch in 0..co {
                        for y in 0..h * r {
                            for x in 0..w * r {
                                let sc = ch * r * r + (y % r) * r + x % r;
                                dx[((b * c + sc) * h + y / r) * w + x / r] = g[((b * co + ch) * h * r + y) * w * r + x];
                            }
                        }
                    }
                }
                accumulate(&mut grads[input.index()], dx);
            }
            Op::Silu { input } => {
                let src = &trace.values[input.index()];
                let dx = src
                    .data()
                    .iter()
                    .zip(&g)
                    .map(|(&v, &gv)| {
                        let s = sigmoid(v);
                        gv * s * (D::one() + v * (D::one() - s))
                    })
                    .collect();
                accumulate(&mut grads[input.index()], dx);
            }
            Op::GroupNorm {
                input,
                groups,
                gamma,
                beta,
            } => {
                let src = &trace.values[input.index()];
                let [_, c, h, w] = *src.shape() else { unreachable!() };
                let Aux::Norm(cache) = &trace.aux[idx] else { unreachable!() };
                let (gi, bi) = (gamma.index(), beta.index());
                let (lo, hi) = pgrads.split_at_mut(bi);
                let dx = norm::backward(
                    cache,
                    &g,
                    batch,
                    c,
                    h * w,
                    *groups,
                    params[gi].data(),
                    &mut lo[gi],
                    &mut hi[0],
                );
                accumulate(&mut grads[input.index()], dx);
            }
            Op::Linear {
                input,
                weight,
                bias,
                fin,
                fout,
            } => {
                let src = &trace.values[input.index()];
                let (wi, bi) = (weight.index(), bias.index());
                for (j, db) in pgrads[bi].iter_mut().enumerate() {
                    let mut acc = D::zero();
                    for b in 0..batch {
                        acc += g[b * fout + j];
                    }
                    *db += acc;
                }
                // dW[fout × fin] += gᵀ · x
                D::gemm(
                    *fout,
                    batch,
                    *fin,
                    D::one(),
                    &g,
                    1,
                    *fout as isize,
                    src.data(),
                    *fin as isize,
                    1,
                    D::one(),
                    &mut pgrads[wi],
                    *fin as isize,
                    1,
                );
                let mut dx = vec![D::zero(); batch * fin];
                D::gemm(
                    batch,
                    *fout,
                    *fin,
                    D::one(),
                    &g,
                    *fout as isize,
                    1,
                    params[wi].data(),
                    *fin as isize,
                    1,
                    D::zero(),
                    &mut dx,
                    *fin as isize,
                    1,
                );
                accumulate(&mut grads[input.index()], dx);
            }
            Op::SelfAttention {
                input,
                heads,
                qkv_weight,
                qkv_bias,
                out_weight,
                out_bias,
            } => {
                let src = &trace.values[input.index()];
                let [_, c, h, w] = *src.shape() else { unreachable!() };
                let Aux::Attention(cache) = &trace.aux[idx] else { unreachable!() };
                let dims = AttentionDims {
                    batch,
                    channels: c,
                    tokens: h * w,
                    heads: *heads,
                };
                let ids = [qkv_weight.index(), qkv_bias.index(), out_weight.index(), out_bias.index()];
                let mut taken: Vec<Vec<D>> = ids.iter().map(|&i| std::mem::take(&mut pgrads[i])).collect();
                let [qw, qb, ow, ob] = &mut taken[..] else { unreachable!() };
                let dx = attention::backward(
                    src.data(),
                    cache,
                    &g,
                    dims,
                    params[ids[0]].data(),
                    params[ids[2]].data(),
                    AttentionGrads {
                        qkv_w: qw,
                        qkv_b: qb,
                        out_w: ow,
                        out_b: ob,
                    },
                );
                for (&i, buf) in ids.iter().zip(taken) {
                    pgrads[i] = buf;
                }
                accumulate(&mut grads[input.index()], dx);
            }
            Op::TimestepEmbed { input, dim, scale } => {
                let src = &trace.values[input.index()];
                let freqs = frequencies(*dim);
                let half = dim / 2;
                let dx = (0..batch)
                    .map(|b| {
                        let t = src.data()[b] * D::from_f64(*scale);
                        let mut acc = D::zero();
                        for (i, &f) in freqs.iter().enumerate() {
                            let fs = D::from_f64(f);
                            let arg = t * fs;
                            acc += g[b * dim + i] * arg.cos() * fs;
                            acc -= g[b * dim + half + i] * arg.sin() * fs;
                        }
                        acc * D::from_f64(*scale)
                    })
                    .collect();
                accumulate(&mut grads[input.index()], dx);
            }
            Op::Add { a, b } => {
                accumulate(&mut grads[a.index()], g.clone());
                accumulate(&mut grads[b.index()], g);
            }
            Op::Sub { a, b } => {
                accumulate(&mut grads[b.index()], g.iter().map(|&v| -v).collect());
                accumulate(&mut grads[a.index()], g);
            }
            Op::AddChannelBias { a, b } => {
                let src = &trace.values[a.index()];
                let [_, c, h, w] = *src.shape() else { unreachable!() };
                let db = g
                    .chunks_exact(h * w)
                    .map(|plane| {
                        let mut acc = D::zero();
                        for &v in plane {
                            acc += v;
                        }
                        acc
                    })
                    .collect::<Vec<_>>();
                debug_assert_eq!(db.len(), batch * c);
                accumulate(&mut grads[b.index()], db);
                accumulate(&mut grads[a.index()], g);
            }
            Op::Concat { inputs } => {
                let per_total = g.len() / batch;
                let mut offset = 0;
                for id in inputs {
                    let per = trace.values[id.index()].numel() / batch;
                    let mut part = Vec::with_capacity(per * batch);
                    for b in 0..batch {
                        part.extend_from_slice(&g[b * per_total + offset..b * per_total + offset + per]);
                    }
                    offset += per;
                    accumulate(&mut grads[id.index()], part);
                }
            }
            Op::GlobalAvgPool { input } => {
                let src = &trace.values[input.index()];
                let [_, _, h, w] = *src.shape() else { unreachable!() };
                let inv = D::one() / D::from_usize(h * w);
                let dx = (0..src.numel()).map(|i| g[i / (h * w)] * inv).collect();
                accumulate(&mut grads[input.index()], dx);
            }
            Op::Flatten { input } => {
                accumulate(&mut grads[input.index()], g);
            }
        }
    }

    let inputs = graph
        .inputs()
        .iter()
        .map(|&id| {
            let shape = trace.values[id.index()].shape().to_vec();
            match grads[id.index()].take() {
                Some(g) => Tensor::new(&shape, g),
                None => Ok(Tensor::zeros(&shape)),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let params = graph
        .params()
        .iter()
        .zip(pgrads)
        .map(|(spec, g)| Tensor::new(&spec.shape, g))
        .collect::<Result<Vec<_>>>()?;
    Ok(Gradients { params, inputs })
}
