//! Feedforward ReLU regressor: evaluation, reverse-mode gradients, Adam
//! updates and the JSON model format.
//!
//! Layers are dense with row-major weights of shape `(out, in)`. Hidden layers
//! apply ReLU (subgradient 0 at exactly 0); the output layer is linear and
//! produces a single scalar.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NET_FORMAT: &str = "robust-verify-net/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    #[serde(default = "one")]
    pub output_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

fn one() -> usize {
    1
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_widths,
            output_dim: 1,
            activation: Activation::Relu,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("input_dim must be >= 1"));
        }
        if self.hidden_widths.is_empty() {
            return Err(Error::invalid("hidden_widths must be non-empty"));
        }
        if self.hidden_widths.contains(&0) {
            return Err(Error::invalid("hidden widths must be >= 1"));
        }
        if self.output_dim != 1 {
            return Err(Error::invalid("output_dim must be 1"));
        }
        Ok(())
    }

    /// `(in, out)` for every layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_widths.len() + 1);
        let mut prev = self.input_dim;
        for &w in self.hidden_widths.iter().chain(std::iter::once(&self.output_dim)) {
            dims.push((prev, w));
            prev = w;
        }
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// One dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    in_dim: usize,
    out_dim: usize,
    /// Row-major `(out_dim, in_dim)`.
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl Layer {
    pub fn new(in_dim: usize, out_dim: usize, weights: Vec<f64>, biases: Vec<f64>) -> Result<Self> {
        if weights.len() != in_dim * out_dim || biases.len() != out_dim {
            return Err(Error::invalid(format!(
                "layer {out_dim}x{in_dim} got {} weights and {} biases",
                weights.len(),
                biases.len()
            )));
        }
        if !weights.iter().chain(&biases).all(|v| v.is_finite()) {
            return Err(Error::invalid("layer parameters must be finite"));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            biases,
        })
    }

    /// Build from weight rows (one row per output unit).
    pub fn from_rows(rows: &[Vec<f64>], biases: Vec<f64>) -> Result<Self> {
        let out_dim = rows.len();
        let in_dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != in_dim) {
            return Err(Error::invalid("ragged weight matrix"));
        }
        Self::new(in_dim, out_dim, rows.concat(), biases)
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.in_dim..(o + 1) * self.in_dim]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.out_dim).map(|o| self.row(o).to_vec()).collect()
    }

    fn affine_into(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..self.out_dim).map(|o| {
            self.row(o)
                .iter()
                .zip(input)
                .fold(self.biases[o], |acc, (w, x)| acc + w * x)
        }));
    }
}

/// A feedforward ReLU network with scalar output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetFile", into = "NetFile")]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<Layer>,
}

/// Gradients congruent with a [`Network`]'s parameters, plus the gradient
/// with respect to the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub input: Vec<f64>,
}

impl Gradients {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let dims = spec.layer_dims();
        Self {
            weights: dims.iter().map(|(i, o)| vec![0.0; i * o]).collect(),
            biases: dims.iter().map(|(_, o)| vec![0.0; *o]).collect(),
            input: vec![0.0; spec.input_dim],
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.iter_params_mut() {
            *v *= factor;
        }
        for v in &mut self.input {
            *v *= factor;
        }
    }

    pub fn iter_params(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    fn iter_params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub fn is_zero(&self) -> bool {
        self.iter_params().chain(&self.input).all(|v| *v == 0.0)
    }

    fn congruent_with(&self, net: &Network) -> bool {
        self.weights.len() == net.layers.len()
            && self.biases.len() == net.layers.len()
            && net.layers.iter().enumerate().all(|(l, layer)| {
                self.weights[l].len() == layer.weights.len()
                    && self.biases[l].len() == layer.biases.len()
            })
    }
}

impl Network {
    pub fn new(spec: NetworkSpec, layers: Vec<Layer>) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        if dims.len() != layers.len() {
            return Err(Error::invalid(format!(
                "spec expects {} layers, got {}",
                dims.len(),
                layers.len()
            )));
        }
        for (l, ((i, o), layer)) in dims.iter().zip(&layers).enumerate() {
            if layer.in_dim != *i || layer.out_dim != *o {
                return Err(Error::invalid(format!(
                    "layer {l} is {}x{}, spec expects {o}x{i}",
                    layer.out_dim, layer.in_dim
                )));
            }
        }
        Ok(Self { spec, layers })
    }

    /// He initialization: weights ~ N(0, 2 / fan_in), zero biases.
    pub fn init_random(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layer_dims()
            .into_iter()
            .map(|(i, o)| {
                let std = (2.0 / i as f64).sqrt();
                let weights = (0..i * o)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z * std
                    })
                    .collect();
                Layer::new(i, o, weights, vec![0.0; o])
            })
            .collect::<Result<_>>()?;
        Self::new(spec.clone(), layers)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "input has length {}, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("input must be finite"));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.eval(x))
    }

    /// Unchecked forward pass; `x` must have length `input_dim`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.input_dim());
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            layer.affine_into(&cur, &mut next);
            if l < last {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur[0]
    }

    /// Pre-activations of every layer.
    pub fn pre_activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut input = x.to_vec();
        for layer in &self.layers {
            let mut z = Vec::new();
            layer.affine_into(&input, &mut z);
            input = z.iter().map(|v| v.max(0.0)).collect();
            pre.push(z);
        }
        pre
    }

    pub fn backward(&self, x: &[f64], upstream: f64) -> Result<Gradients> {
        self.check_input(x)?;
        let mut grads = Gradients::zeros(&self.spec);
        self.backward_into(x, upstream, &mut grads);
        Ok(grads)
    }

    /// Accumulate gradients of `upstream * f(x)` into `grads` (input gradient
    /// included) and return `f(x)`.
    pub fn backward_into(&self, x: &[f64], upstream: f64, grads: &mut Gradients) -> f64 {
        let pre = self.pre_activations(x);
        let out = pre.last().expect("network has layers")[0];
        if upstream == 0.0 {
            return out;
        }
        let mut delta = vec![upstream];
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input: Vec<f64> = if l == 0 {
                x.to_vec()
            } else {
                pre[l - 1].iter().map(|v| v.max(0.0)).collect()
            };
            let gw = &mut grads.weights[l];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                grads.biases[l][o] += d;
                let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (g, a) in row.iter_mut().zip(&input) {
                    *g += d * a;
                }
            }
            let mut back = vec![0.0; layer.in_dim];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                for (b, w) in back.iter_mut().zip(layer.row(o)) {
                    *b += d * w;
                }
            }
            if l > 0 {
                for (b, z) in back.iter_mut().zip(&pre[l - 1]) {
                    if *z <= 0.0 {
                        *b = 0.0;
                    }
                }
            }
            delta = back;
        }
        for (g, d) in grads.input.iter_mut().zip(&delta) {
            *g += d;
        }
        out
    }

    /// Value and input gradient at `x` (unchecked).
    pub fn value_and_input_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut grads = Gradients::zeros(&self.spec);
        let v = self.backward_into(x, 1.0, &mut grads);
        (v, grads.input)
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()))
    }

    /// Add `delta` to the parameter at flat index `idx` (weights then biases,
    /// layer by layer). Used by finite-difference checks.
    pub fn perturb(&mut self, idx: usize, delta: f64) {
        if let Some(p) = self.params_mut().nth(idx) {
            *p += delta;
        }
    }

    pub fn to_file(&self) -> NetFile {
        NetFile {
            format: NET_FORMAT.to_owned(),
            spec: self.spec.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    w: l.rows(),
                    b: l.biases.clone(),
                })
                .collect(),
        }
    }

    pub fn from_file(file: NetFile) -> Result<Self> {
        if file.format != NET_FORMAT {
            return Err(Error::invalid(format!(
                "unsupported model format `{}`, expected `{NET_FORMAT}`",
                file.format
            )));
        }
        let layers = file
            .layers
            .iter()
            .map(|l| Layer::from_rows(&l.w, l.b.clone()))
            .collect::<Result<_>>()?;
        Self::new(file.spec, layers)
    }

    pub fn serialize(&self) -> Vec<u8> {
        serde_json::to_vec(&self.to_file()).expect("network serializes")
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self> {
        let file: NetFile =
            serde_json::from_slice(bytes).map_err(|e| Error::from_json(bytes, &e))?;
        Self::from_file(file)
    }
}

/// On-disk model representation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetFile {
    pub format: String,
    pub spec: NetworkSpec,
    pub layers: Vec<LayerFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerFile {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl From<Network> for NetFile {
    fn from(net: Network) -> Self {
        net.to_file()
    }
}

impl TryFrom<NetFile> for Network {
    type Error = Error;

    fn try_from(file: NetFile) -> Result<Self> {
        Network::from_file(file)
    }
}

/// Adam moment accumulators for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl OptimizerState {
    pub fn new(spec: &NetworkSpec, config: AdamConfig) -> Self {
        let n = spec.param_count();
        Self {
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one bias-corrected Adam update to `net` in place.
    pub fn apply(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        if !grads.congruent_with(net) || self.m.len() != net.spec.param_count() {
            return Err(Error::invalid("gradient shape does not match network"));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in net
            .params_mut()
            .zip(grads.iter_params())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Functional form of [`OptimizerState::apply`].
pub fn optimizer_step(
    mut net: Network,
    grads: &Gradients,
    mut state: OptimizerState,
) -> Result<(Network, OptimizerState)> {
    state.apply(&mut net, grads)?;
    Ok((net, state))
}


#[cfg(test)]
impl Layer {
    fn affine_out(&self, x: &[f64]) -> f64 {
        let mut out = Vec::new();
        self.affine_into(x, &mut out);
        out[0]
    }
}
