//! Trainable networks: parameters, gradient buffers, AdamW state and an EMA
//! shadow copy, all index-aligned with the graph's parameter list.

use mscgm_core::{Error, Real, Result, Rng, Tensor};

use crate::exec::{self, Trace};
use crate::graph::{Graph, Init};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamWConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "eps must be positive and weight decay non-negative, got {} and {}",
                self.eps, self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Everything a checkpoint needs to resume a network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkState<S> {
    pub params: Vec<Tensor<S>>,
    pub ema: Vec<Tensor<S>>,
    pub adam_m: Vec<Tensor<S>>,
    pub adam_v: Vec<Tensor<S>>,
    pub step: u64,
}

pub struct Network<S: Real> {
    graph: Graph,
    params: Vec<Tensor<S>>,
    grads: Vec<Tensor<S>>,
    adam_m: Vec<Tensor<S>>,
    adam_v: Vec<Tensor<S>>,
    ema: Vec<Tensor<S>>,
    step: u64,
    trace: Option<Trace<S>>,
}

fn zeros_like<S: Real>(ts: &[Tensor<S>]) -> Vec<Tensor<S>> {
    ts.iter().map(|t| Tensor::zeros(t.shape())).collect()
}

impl<S: Real> Network<S> {
    /// Initializes parameters from the graph's declared schemes.
    pub fn new(graph: Graph, rng: &mut Rng) -> Self {
        let params = graph
            .params()
            .iter()
            .map(|spec| match spec.init {
                Init::Zeros => Tensor::zeros(&spec.shape),
                Init::Ones => Tensor::full(&spec.shape, S::one()),
                Init::TruncNormal(std) => Tensor::from_fn(&spec.shape, |_| S::from_f64(rng.truncated_normal(std))),
            })
            .collect();
        Self::with_params(graph, params).expect("initializer produced graph-declared shapes")
    }

    pub fn with_params(graph: Graph, params: Vec<Tensor<S>>) -> Result<Self> {
        if params.len() != graph.params().len() {
            return Err(Error::ContractViolation(format!(
                "expected {} parameter tensors, got {}",
                graph.params().len(),
                params.len()
            )));
        }
        for (spec, p) in graph.params().iter().zip(&params) {
            if p.shape() != spec.shape.as_slice() {
                return Err(Error::ContractViolation(format!(
                    "parameter '{}' has shape {:?}, expected {:?}",
                    spec.name,
                    p.shape(),
                    spec.shape
                )));
            }
        }
        Ok(Self {
            grads: zeros_like(&params),
            adam_m: zeros_like(&params),
            adam_v: zeros_like(&params),
            ema: params.clone(),
            params,
            graph,
            step: 0,
            trace: None,
        })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    /// Swaps in another graph over the same parameter list, e.g. the same
    /// convolutional network specialized to a different resolution.
    pub fn set_graph(&mut self, graph: Graph) -> Result<()> {
        if graph.params() != self.graph.params() {
            return Err(Error::ContractViolation(
                "replacement graph declares different parameters".into(),
            ));
        }
        self.graph = graph;
        self.trace = None;
        Ok(())
    }

    pub fn params(&self) -> &[Tensor<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<S>] {
        self.trace = None;
        &mut self.params
    }

    pub fn grads(&self) -> &[Tensor<S>] {
        &self.grads
    }

    pub fn ema(&self) -> &[Tensor<S>] {
        &self.ema
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn param_count(&self) -> usize {
        self.graph.param_count()
    }

    pub fn param_names(&self) -> Vec<&str> {
        self.graph.params().iter().map(|p| p.name.as_str()).collect()
    }

    pub fn state(&self) -> NetworkState<S> {
        NetworkState {
            params: self.params.clone(),
            ema: self.ema.clone(),
            adam_m: self.adam_m.clone(),
            adam_v: self.adam_v.clone(),
            step: self.step,
        }
    }

    pub fn load_state(&mut self, state: NetworkState<S>) -> Result<()> {
        for (label, list) in [
            ("params", &state.params),
            ("ema", &state.ema),
            ("adam_m", &state.adam_m),
            ("adam_v", &state.adam_v),
        ] {
            if list.len() != self.params.len() {
                return Err(Error::ContractViolation(format!(
                    "{label}: expected {} tensors, got {}",
                    self.params.len(),
                    list.len()
                )));
            }
            for (spec, t) in self.graph.params().iter().zip(list) {
                if t.shape() != spec.shape.as_slice() {
                    return Err(Error::ContractViolation(format!(
                        "{label} '{}' has shape {:?}, expected {:?}",
                        spec.name,
                        t.shape(),
                        spec.shape
                    )));
                }
            }
        }
        self.params = state.params;
        self.ema = state.ema;
        self.adam_m = state.adam_m;
        self.adam_v = state.adam_v;
        self.step = state.step;
        self.trace = None;
        self.zero_grad();
        Ok(())
    }

    /// Training forward pass; caches activations for [`Network::backward`].
    pub fn forward(&mut self, inputs: &[Tensor<S>]) -> Result<Tensor<S>> {
        let trace = exec::forward(&self.graph, &self.params, inputs)?;
        let out = trace.output(&self.graph).clone();
        self.trace = Some(trace);
        Ok(out)
    }

    /// Inference without caching, optionally with the EMA weights.
    pub fn forward_eval(&self, inputs: &[Tensor<S>], use_ema: bool) -> Result<Tensor<S>> {
        let params = if use_ema { &self.ema } else { &self.params };
        let trace = exec::forward(&self.graph, params, inputs)?;
        Ok(trace.output(&self.graph).clone())
    }

    /// Inference through `graph`, which must declare this network's parameters.
    pub fn forward_eval_on(&self, graph: &Graph, inputs: &[Tensor<S>], use_ema: bool) -> Result<Tensor<S>> {
        if graph.params() != self.graph.params() {
            return Err(Error::ContractViolation(
                "graph declares different parameters than the network".into(),
            ));
        }
        let params = if use_ema { &self.ema } else { &self.params };
        let trace = exec::forward(graph, params, inputs)?;
        Ok(trace.output(graph).clone())
    }

    /// Accumulates parameter gradients of `Σ grad_output ⊙ output` and
    /// returns the gradients with respect to each input.
    pub fn backward(&mut self, grad_output: &Tensor<S>) -> Result<Vec<Tensor<S>>> {
        let trace = self
            .trace
            .as_ref()
            .ok_or_else(|| Error::State("backward called before forward".into()))?;
        let grads = exec::backward(&self.graph, &self.params, trace, grad_output)?;
        for (acc, g) in self.grads.iter_mut().zip(&grads.params) {
            acc.axpy(S::one(), g)?;
        }
        Ok(grads.inputs)
    }

    /// Adds externally computed parameter gradients.
    pub fn accumulate_grads(&mut self, grads: &[Tensor<S>], scale: S) -> Result<()> {
        if grads.len() != self.grads.len() {
            return Err(Error::ContractViolation(format!(
                "expected {} gradient tensors, got {}",
                self.grads.len(),
                grads.len()
            )));
        }
        for (acc, g) in self.grads.iter_mut().zip(grads) {
            acc.axpy(scale, g)?;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.fill(S::zero());
        }
    }

    /// One decoupled-weight-decay Adam update from the accumulated gradients.
    pub fn adamw_step(&mut self, cfg: &AdamWConfig) -> Result<()> {
        cfg.validate()?;
        for (spec, g) in self.graph.params().iter().zip(&self.grads) {
            if !g.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite gradient in '{}' at step {}",
                    spec.name,
                    self.step + 1
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let (b1, b2) = (S::from_f64(cfg.beta1), S::from_f64(cfg.beta2));
        let (ob1, ob2) = (S::from_f64(1.0 - cfg.beta1), S::from_f64(1.0 - cfg.beta2));
        let lr = S::from_f64(cfg.learning_rate);
        let decay = S::from_f64(1.0 - cfg.learning_rate * cfg.weight_decay);
        let (inv_bc1, inv_bc2) = (S::from_f64(1.0 / bc1), S::from_f64(1.0 / bc2));
        let eps = S::from_f64(cfg.eps);
        for i in 0..self.params.len() {
            let g = self.grads[i].data();
            let m = self.adam_m[i].data_mut();
            let v = self.adam_v[i].data_mut();
            let p = self.params[i].data_mut();
            for j in 0..p.len() {
                m[j] = b1 * m[j] + ob1 * g[j];
                v[j] = b2 * v[j] + ob2 * g[j] * g[j];
                let m_hat = m[j] * inv_bc1;
                let v_hat = v[j] * inv_bc2;
                p[j] = p[j] * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        self.trace = None;
        Ok(())
    }

    /// `ema ← rate·ema + (1 − rate)·params`.
    pub fn ema_update(&mut self, rate: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("EMA rate must lie in [0, 1], got {rate}")));
        }
        let (r, or) = (S::from_f64(rate), S::from_f64(1.0 - rate));
        for (e, p) in self.ema.iter_mut().zip(&self.params) {
            for (ev, &pv) in e.data_mut().iter_mut().zip(p.data()) {
                *ev = r * *ev + or * pv;
            }
        }
        Ok(())
    }

    pub fn reset_ema(&mut self) {
        self.ema = self.params.clone();
    }
}
