//! Small fully connected networks with exact reverse-mode gradients, an
//! adaptive-moment optimizer and target-network blending. All arithmetic is
//! 64-bit.

use std::io::{Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::NeuralError;

/// Output nonlinearity of the last layer. Hidden layers are rectified-linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Identity,
    Tanh,
}

impl Head {
    fn code(self) -> u8 {
        match self {
            Head::Identity => 0,
            Head::Tanh => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self, NeuralError> {
        match c {
            0 => Ok(Head::Identity),
            1 => Ok(Head::Tanh),
            _ => Err(NeuralError::Format(format!("unknown output activation code {c}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// out × in
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }
}

static NEXT_TOKEN: AtomicU64 = AtomicU64::new(1);

fn fresh_token() -> u64 {
    NEXT_TOKEN.fetch_add(1, Ordering::Relaxed)
}

/// Multilayer perceptron. Parameters change only through methods that take
/// `&mut self`; each change invalidates outstanding forward caches.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Dense>,
    head: Head,
    token: u64,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.head == other.head && self.layers == other.layers
    }
}

/// Layer inputs and pre-activations from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
    token: u64,
}

/// Parameter gradients, same shapes as the network layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            layers: net.layers.iter().map(|l| Dense::zeros(l.inputs(), l.outputs())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weight *= s;
            l.bias *= s;
        }
    }

    /// Flattened in the same order as [`Mlp::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
            .collect()
    }
}

impl Mlp {
    /// `sizes = [input, hidden.., output]`.
    pub fn zeros(sizes: &[usize], head: Head) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        Mlp {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            head,
            token: fresh_token(),
        }
    }

    /// Weights and biases uniform in ±1/√fan_in.
    pub fn random(sizes: &[usize], head: Head, rng: &mut impl Rng) -> Self {
        let mut net = Mlp::zeros(sizes, head);
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.inputs() as f64).sqrt();
            layer.weight.mapv_inplace(|_| rng.random_range(-bound..bound));
            layer.bias.mapv_inplace(|_| rng.random_range(-bound..bound));
        }
        net
    }

    pub fn from_layers(layers: Vec<Dense>, head: Head) -> Result<Self, NeuralError> {
        if layers.is_empty() {
            return Err(NeuralError::Shape("no layers".into()));
        }
        for (a, b) in layers.iter().zip(layers.iter().skip(1)) {
            if a.outputs() != b.inputs() {
                return Err(NeuralError::Shape(format!(
                    "layer output {} feeds layer input {}",
                    a.outputs(),
                    b.inputs()
                )));
            }
        }
        if layers.iter().any(|l| l.bias.len() != l.outputs()) {
            return Err(NeuralError::Shape("bias length differs from layer width".into()));
        }
        Ok(Mlp {
            layers,
            head,
            token: fresh_token(),
        })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::outputs)
    }

    /// `[input, hidden.., output]`.
    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Dense::outputs))
            .collect()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    /// Overwrites parameters from a flat vector in [`Mlp::flat_params`] order.
    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<(), NeuralError> {
        let total: usize = self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum();
        if flat.len() != total {
            return Err(NeuralError::Dimension {
                expected: total,
                got: flat.len(),
            });
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|p| *p = it.next().unwrap());
        }
        self.token = fresh_token();
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.flat_params().iter().all(|v| v.is_finite())
    }

    /// Batched forward pass, one sample per row.
    pub fn forward(&self, input: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache), NeuralError> {
        if input.ncols() != self.input_dim() {
            return Err(NeuralError::Dimension {
                expected: self.input_dim(),
                got: input.ncols(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut x = input.to_owned();
        let last = self.layers.len() - 1;
        for (idx, layer) in self.layers.iter().enumerate() {
            let z = x.dot(&layer.weight.t()) + &layer.bias;
            let a = if idx == last {
                match self.head {
                    Head::Identity => z.clone(),
                    Head::Tanh => z.mapv(f64::tanh),
                }
            } else {
                z.mapv(|v| v.max(0.0))
            };
            inputs.push(x);
            pre_activations.push(z);
            x = a;
        }
        Ok((
            x,
            ForwardCache {
                inputs,
                pre_activations,
                token: self.token,
            },
        ))
    }

    pub fn forward_one(&self, input: &[f64]) -> Result<Vec<f64>, NeuralError> {
        let view = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| NeuralError::Shape(e.to_string()))?;
        Ok(self.forward(view)?.0.into_raw_vec_and_offset().0)
    }

    /// Reverse pass. Parameter gradients are summed over the batch rows;
    /// the second value is the gradient with respect to the input batch.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        output_gradient: ArrayView2<f64>,
    ) -> Result<(Gradients, Array2<f64>), NeuralError> {
        if cache.token != self.token {
            return Err(NeuralError::StaleCache);
        }
        let last = self.layers.len() - 1;
        let z_last = &cache.pre_activations[last];
        if output_gradient.dim() != z_last.dim() {
            return Err(NeuralError::Shape(format!(
                "output gradient {:?}, forward output {:?}",
                output_gradient.dim(),
                z_last.dim()
            )));
        }
        let mut delta = match self.head {
            Head::Identity => output_gradient.to_owned(),
            Head::Tanh => {
                let mut d = output_gradient.to_owned();
                d.zip_mut_with(z_last, |g, &z| {
                    let t = z.tanh();
                    *g *= 1.0 - t * t;
                });
                d
            }
        };
        let mut grads = Vec::with_capacity(self.layers.len());
        for idx in (0..self.layers.len()).rev() {
            let layer = &self.layers[idx];
            let weight = delta.t().dot(&cache.inputs[idx]);
            let bias = delta.sum_axis(Axis(0));
            grads.push(Dense { weight, bias });
            let mut upstream = delta.dot(&layer.weight);
            if idx > 0 {
                upstream.zip_mut_with(&cache.pre_activations[idx - 1], |g, &z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            delta = upstream;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }

    fn check_same_shape(&self, other: &[Dense]) -> Result<(), NeuralError> {
        let same = self.layers.len() == other.len()
            && self
                .layers
                .iter()
                .zip(other)
                .all(|(a, b)| a.weight.dim() == b.weight.dim() && a.bias.len() == b.bias.len());
        if same {
            Ok(())
        } else {
            Err(NeuralError::Shape("parameter shapes differ".into()))
        }
    }

    pub fn save(&self, w: &mut impl Write) -> Result<(), NeuralError> {
        w.write_all(WEIGHT_MAGIC)?;
        w.write_all(&WEIGHT_FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&[self.head.code()])?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for l in &self.layers {
            w.write_all(&(l.inputs() as u32).to_le_bytes())?;
            w.write_all(&(l.outputs() as u32).to_le_bytes())?;
        }
        for p in self.flat_params() {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(r: &mut impl Read) -> Result<Self, NeuralError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != WEIGHT_MAGIC {
            return Err(NeuralError::Format("bad magic".into()));
        }
        let version = read_u32(r)?;
        if version != WEIGHT_FORMAT_VERSION {
            return Err(NeuralError::Format(format!("unsupported format version {version}")));
        }
        let mut code = [0u8; 1];
        r.read_exact(&mut code)?;
        let head = Head::from_code(code[0])?;
        let n_layers = read_u32(r)? as usize;
        if n_layers == 0 || n_layers > 1024 {
            return Err(NeuralError::Format(format!("implausible layer count {n_layers}")));
        }
        let mut dims = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            dims.push((read_u32(r)? as usize, read_u32(r)? as usize));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for (inputs, outputs) in dims {
            let mut layer = Dense::zeros(inputs, outputs);
            for p in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                *p = f64::from_le_bytes(b);
            }
            layers.push(layer);
        }
        Mlp::from_layers(layers, head)
    }

    /// Loads and checks the layer sizes and head against an expected architecture.
    pub fn load_expecting(r: &mut impl Read, sizes: &[usize], head: Head) -> Result<Self, NeuralError> {
        let net = Mlp::load(r)?;
        if net.sizes() != sizes || net.head != head {
            return Err(NeuralError::Architecture(format!(
                "file holds {:?}/{:?}, expected {:?}/{:?}",
                net.sizes(),
                net.head,
                sizes,
                head
            )));
        }
        Ok(net)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32, NeuralError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Leading bytes of every weight file.
pub const WEIGHT_MAGIC: &[u8; 8] = b"MRTANET\0";
pub const WEIGHT_FORMAT_VERSION: u32 = 1;

/// `target ← (1−τ)·target + τ·source`.
pub fn soft_update(target: &mut Mlp, source: &Mlp, tau: f64) -> Result<(), NeuralError> {
    target.check_same_shape(&source.layers)?;
    if target.head != source.head {
        return Err(NeuralError::Shape("output activations differ".into()));
    }
    for (t, s) in target.layers.iter_mut().zip(&source.layers) {
        t.weight.zip_mut_with(&s.weight, |a, &b| *a = (1.0 - tau) * *a + tau * b);
        t.bias.zip_mut_with(&s.bias, |a, &b| *a = (1.0 - tau) * *a + tau * b);
    }
    target.token = fresh_token();
    Ok(())
}

/// Adaptive-moment optimizer state for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    first: Gradients,
    second: Gradients,
}

impl Adam {
    pub fn new(net: &Mlp, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: Gradients::zeros_like(net),
            second: Gradients::zeros_like(net),
        }
    }

    /// One bias-corrected update. Rejects non-finite gradients before
    /// touching any state.
    pub fn apply(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<(), NeuralError> {
        net.check_same_shape(&grads.layers)?;
        net.check_same_shape(&self.first.layers)?;
        if !grads.is_finite() {
            return Err(NeuralError::NonFinite("gradient"));
        }
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let (lr, eps) = (self.learning_rate, self.epsilon);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (((layer, g), m), v) in net
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.first.layers)
            .zip(&mut self.second.layers)
        {
            ndarray::Zip::from(&mut layer.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .and(&g.weight)
                .for_each(|p, m, v, &g| update(p, m, v, g));
            ndarray::Zip::from(&mut layer.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&g.bias)
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
        net.token = fresh_token();
        Ok(())
    }
}
