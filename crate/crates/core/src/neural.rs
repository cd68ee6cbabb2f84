//! Dense feed-forward networks over a flat parameter vector, with
//! reverse-mode gradients and Adam.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CrnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Linear,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

/// Layer sizes `[input, hidden.., output]` with one activation per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    pub seed: u64,
}

impl NetSpec {
    /// `hidden` layers of `width` units with `act`, then a layer of `output`
    /// units with `out_act`.
    pub fn mlp(input: usize, hidden: &[usize], output: usize, act: Activation, out_act: Activation, seed: u64) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let mut activations = vec![act; hidden.len()];
        activations.push(out_act);
        NetSpec { sizes, activations, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.len() < 2 || self.activations.len() != self.sizes.len() - 1 {
            return Err(CrnError::Shape("a network needs at least one layer and one activation per layer".into()));
        }
        if self.sizes.contains(&0) {
            return Err(CrnError::Shape("layer sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().expect("validated spec")
    }

    pub fn layout(&self) -> Vec<LayerLayout> {
        let mut off = 0;
        self.sizes
            .windows(2)
            .map(|w| {
                let (i, o) = (w[0], w[1]);
                let l = LayerLayout {
                    inputs: i,
                    outputs: o,
                    weight_offset: off,
                    bias_offset: off + i * o,
                };
                off += i * o + o;
                l
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// Where one layer's parameters sit in the flat vector: the weight matrix
/// (`outputs × inputs`, row-major) followed by the bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerLayout {
    pub inputs: usize,
    pub outputs: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    spec: NetSpec,
    layout: Vec<LayerLayout>,
    params: Vec<f64>,
}

/// Activations saved by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    sizes: Vec<usize>,
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    outputs: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().expect("cache holds at least one layer")
    }
}

impl Mlp {
    /// Seeded initialisation: He-normal weights for relu layers,
    /// Xavier-uniform otherwise; zero biases.
    pub fn new(spec: NetSpec) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut params = vec![0.0; spec.param_count()];
        for (l, act) in layout.iter().zip(&spec.activations) {
            let w = &mut params[l.weight_offset..l.bias_offset];
            match act {
                Activation::Relu => {
                    let normal = Normal::new(0.0, (2.0 / l.inputs as f64).sqrt()).expect("positive std");
                    for x in w.iter_mut() {
                        *x = normal.sample(&mut rng);
                    }
                }
                Activation::Tanh | Activation::Linear => {
                    let bound = (6.0 / (l.inputs + l.outputs) as f64).sqrt();
                    for x in w.iter_mut() {
                        *x = rng.random_range(-bound..bound);
                    }
                }
            }
        }
        Ok(Mlp { spec, layout, params })
    }

    pub fn from_params(spec: NetSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(CrnError::Shape(format!(
                "{} parameters supplied, network has {}",
                params.len(),
                spec.param_count()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(CrnError::Contract("parameters must be finite".into()));
        }
        let layout = spec.layout();
        Ok(Mlp { spec, layout, params })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn layout(&self) -> &[LayerLayout] {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Multiplies the weights and bias of layer `l` by `k`.
    pub fn scale_layer(&mut self, l: usize, k: f64) {
        let lay = self.layout[l];
        for p in &mut self.params[lay.weight_offset..lay.bias_offset + lay.outputs] {
            *p *= k;
        }
    }

    fn weights(&self, l: usize) -> ArrayView2<'_, f64> {
        let lay = self.layout[l];
        ArrayView2::from_shape((lay.outputs, lay.inputs), &self.params[lay.weight_offset..lay.bias_offset])
            .expect("layout matches parameter vector")
    }

    fn bias(&self, l: usize) -> &[f64] {
        let lay = self.layout[l];
        &self.params[lay.bias_offset..lay.bias_offset + lay.outputs]
    }

    /// Forward pass over a batch (one row per sample).
    pub fn forward(&self, input: &Array2<f64>) -> Result<ForwardCache> {
        if input.ncols() != self.spec.input_size() {
            return Err(CrnError::Shape(format!(
                "input has {} columns, network expects {}",
                input.ncols(),
                self.spec.input_size()
            )));
        }
        let n = self.spec.layers();
        let mut cache = ForwardCache {
            sizes: self.spec.sizes.clone(),
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            outputs: Vec::with_capacity(n),
        };
        let mut x = input.clone();
        for l in 0..n {
            let mut z = x.dot(&self.weights(l).t());
            let b = ArrayView2::from_shape((1, self.layout[l].outputs), self.bias(l)).expect("bias shape");
            z += &b;
            let act = self.spec.activations[l];
            let a = z.mapv(|v| act.apply(v));
            cache.inputs.push(x);
            cache.pre.push(z);
            x = a.clone();
            cache.outputs.push(a);
        }
        Ok(cache)
    }

    /// Output only.
    pub fn predict(&self, input: &Array2<f64>) -> Result<Array2<f64>> {
        let mut x = input.clone();
        if x.ncols() != self.spec.input_size() {
            return Err(CrnError::Shape(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.spec.input_size()
            )));
        }
        for l in 0..self.spec.layers() {
            let mut z = x.dot(&self.weights(l).t());
            let b = ArrayView2::from_shape((1, self.layout[l].outputs), self.bias(l)).expect("bias shape");
            z += &b;
            let act = self.spec.activations[l];
            z.mapv_inplace(|v| act.apply(v));
            x = z;
        }
        Ok(x)
    }

    pub fn predict_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec()).expect("row vector");
        Ok(self.predict(&x)?.into_raw_vec_and_offset().0)
    }

    /// Reverse pass. `upstream` is dLoss/dOutput for the cached batch; returns
    /// the parameter gradient (summed over the batch) and dLoss/dInput.
    pub fn backward(&self, cache: &ForwardCache, upstream: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
        if cache.sizes != self.spec.sizes {
            return Err(CrnError::Contract("forward cache was produced by a different network".into()));
        }
        if upstream.dim() != cache.output().dim() {
            return Err(CrnError::Shape(format!(
                "upstream gradient {:?} does not match output {:?}",
                upstream.dim(),
                cache.output().dim()
            )));
        }
        let mut grad = vec![0.0; self.params.len()];
        let mut g = upstream.clone();
        for l in (0..self.spec.layers()).rev() {
            let act = self.spec.activations[l];
            let mut dz = g;
            ndarray::Zip::from(&mut dz)
                .and(&cache.pre[l])
                .and(&cache.outputs[l])
                .for_each(|d, z, a| *d *= act.derivative(*z, *a));
            let lay = self.layout[l];
            let dw = dz.t().dot(&cache.inputs[l]);
            grad[lay.weight_offset..lay.bias_offset]
                .iter_mut()
                .zip(dw.iter())
                .for_each(|(g, d)| *g = *d);
            let db: Array1<f64> = dz.sum_axis(Axis(0));
            grad[lay.bias_offset..lay.bias_offset + lay.outputs].copy_from_slice(db.as_slice().expect("contiguous"));
            g = dz.dot(&self.weights(l));
        }
        Ok((grad, g))
    }

    /// `self ← τ·online + (1 − τ)·self`, elementwise.
    pub fn soft_update_from(&mut self, online: &Mlp, tau: f64) -> Result<()> {
        if online.spec.sizes != self.spec.sizes {
            return Err(CrnError::Shape("soft update between differently shaped networks".into()));
        }
        for (t, o) in self.params.iter_mut().zip(&online.params) {
            *t = tau * o + (1.0 - tau) * *t;
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            spec: self.spec.clone(),
            layout: self.layout.clone(),
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(c: Checkpoint) -> Result<Self> {
        if c.version != CHECKPOINT_VERSION {
            return Err(CrnError::Config(format!("unsupported checkpoint version {}", c.version)));
        }
        if c.layout != c.spec.layout() {
            return Err(CrnError::Shape("checkpoint layout does not match its spec".into()));
        }
        Mlp::from_params(c.spec, c.params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, text).map_err(|e| CrnError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CrnError::io(path, e))?;
        Mlp::from_checkpoint(serde_json::from_str(&text)?)
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialised network: spec (with its seed), layout map and parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub spec: NetSpec,
    pub layout: Vec<LayerLayout>,
    pub params: Vec<f64>,
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(CrnError::Shape("optimizer, parameter and gradient lengths differ".into()));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(CrnError::Training("non-finite gradient".into()));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= k;
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub relative_errors: Vec<f64>,
    pub max_relative_error: f64,
    pub passed: bool,
}

/// Step of the central differences.
pub const FD_STEP: f64 = 1e-5;

/// Relative errors use `max(|analytic|, |numeric|, 1e-6)` as denominator so
/// near-zero entries are compared on an absolute scale.
pub const FD_FLOOR: f64 = 1e-6;

pub const MAX_CHECKED_PARAMS: usize = 10_000;

/// Compares `backward` with central differences of `loss`, a function of the
/// network output returning the loss and its gradient.
pub fn gradient_check<F>(net: &Mlp, input: &Array2<f64>, loss: F, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&Array2<f64>) -> (f64, Array2<f64>),
{
    if net.param_count() > MAX_CHECKED_PARAMS {
        return Err(CrnError::Contract(format!(
            "gradient check is limited to {MAX_CHECKED_PARAMS} parameters"
        )));
    }
    let cache = net.forward(input)?;
    let (_, upstream) = loss(cache.output());
    let (analytic, _) = net.backward(&cache, &upstream)?;
    let mut probe = net.clone();
    let mut numeric = Vec::with_capacity(net.param_count());
    for i in 0..net.param_count() {
        let orig = probe.params[i];
        probe.params[i] = orig + FD_STEP;
        let plus = loss(&probe.predict(input)?).0;
        probe.params[i] = orig - FD_STEP;
        let minus = loss(&probe.predict(input)?).0;
        probe.params[i] = orig;
        numeric.push((plus - minus) / (2.0 * FD_STEP));
    }
    let relative_errors: Vec<f64> = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR))
        .collect();
    let max_relative_error = relative_errors.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        analytic,
        numeric,
        relative_errors,
        max_relative_error,
        passed: max_relative_error < tolerance,
    })
}

/// `0.5 · Σ (output − target)²` and its gradient.
pub fn squared_error(target: &Array2<f64>) -> impl Fn(&Array2<f64>) -> (f64, Array2<f64>) + '_ {
    move |out| {
        let diff = out - target;
        (0.5 * diff.iter().map(|d| d * d).sum::<f64>(), diff)
    }
}
