//! Multilayer perceptron: leaky-ReLU hidden layers, sigmoid output, binary
//! cross-entropy loss.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::InkError;

pub const LEAKY_SLOPE: f64 = 0.01;
pub const MODEL_MAGIC: &[u8; 8] = b"INKMLP01";

/// Network weights plus the patch geometry they expect.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `[inputs, hidden..., 1]`.
    pub layer_sizes: Vec<usize>,
    /// `weights[l]` is `(layer_sizes[l + 1], layer_sizes[l])`.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub input_shape: (usize, usize, usize),
    pub normalize: bool,
}

/// Per-layer `(dW, db)`.
pub type Gradients = Vec<(Array2<f64>, Array1<f64>)>;

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn leaky(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        LEAKY_SLOPE * z
    }
}

#[inline]
fn leaky_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// BCE of one logit against a hard label, computed stably.
#[inline]
pub fn bce_from_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

impl ModelParams {
    /// Glorot-uniform weights in `+-sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(input_shape: (usize, usize, usize), hidden: &[usize], normalize: bool, seed: u64) -> Self {
        let inputs = input_shape.0 * input_shape.1 * input_shape.2;
        let mut layer_sizes = vec![inputs];
        layer_sizes.extend_from_slice(hidden);
        layer_sizes.push(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(Array2::from_shape_fn((fan_out, fan_in), |_| {
                rng.random_range(-limit..limit)
            }));
            biases.push(Array1::zeros(fan_out));
        }
        Self {
            layer_sizes,
            weights,
            biases,
            input_shape,
            normalize,
        }
    }

    /// All-zero weights and biases: every output is exactly 0.5.
    pub fn zeros(input_shape: (usize, usize, usize), hidden: &[usize], normalize: bool) -> Self {
        let mut p = Self::init(input_shape, hidden, normalize, 0);
        p.weights.iter_mut().for_each(|w| w.fill(0.0));
        p
    }

    pub fn input_len(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn validate(&self) -> Result<(), InkError> {
        let n = self.layer_sizes.len();
        let bad = |m: String| Err(InkError::BadModel(m));
        if n < 2 || self.weights.len() != n - 1 || self.biases.len() != n - 1 {
            return bad("layer count mismatch".into());
        }
        if *self.layer_sizes.last().unwrap() != 1 {
            return bad("final layer width must be 1".into());
        }
        let (w, h, d) = self.input_shape;
        if w * h * d != self.layer_sizes[0] {
            return bad(format!("input shape {:?} does not match {} inputs", self.input_shape, self.layer_sizes[0]));
        }
        for l in 0..n - 1 {
            if self.weights[l].dim() != (self.layer_sizes[l + 1], self.layer_sizes[l])
                || self.biases[l].len() != self.layer_sizes[l + 1]
            {
                return bad(format!("layer {l} has inconsistent dimensions"));
            }
        }
        Ok(())
    }

    /// Output logits for a `(batch, inputs)` matrix.
    pub fn logits(&self, x: ArrayView2<f64>) -> Array1<f64> {
        let mut a = x.to_owned();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = a.dot(&w.t());
            z += b;
            if l < last {
                z.mapv_inplace(leaky);
            }
            a = z;
        }
        a.index_axis_move(Axis(1), 0)
    }

    /// Probabilities kept strictly inside `(0, 1)` even for saturated logits.
    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Array1<f64> {
        self.logits(x).mapv(|z| sigmoid(z).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
    }

    /// Mean BCE over a batch.
    pub fn loss(&self, x: ArrayView2<f64>, y: &[f64]) -> f64 {
        let z = self.logits(x);
        z.iter().zip(y).map(|(&z, &y)| bce_from_logit(z, y)).sum::<f64>() / y.len() as f64
    }

    /// Gradients of the mean BCE over a batch, with the batch loss.
    pub fn backward(&self, x: ArrayView2<f64>, y: &[f64]) -> (Gradients, f64) {
        let nl = self.weights.len();
        let batch = y.len() as f64;
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(nl + 1);
        let mut pre: Vec<Array2<f64>> = Vec::with_capacity(nl);
        acts.push(x.to_owned());
        for l in 0..nl {
            let mut z = acts[l].dot(&self.weights[l].t());
            z += &self.biases[l];
            let a = if l + 1 < nl { z.mapv(leaky) } else { z.clone() };
            pre.push(z);
            acts.push(a);
        }
        let logits = acts[nl].column(0);
        let loss = logits.iter().zip(y).map(|(&z, &y)| bce_from_logit(z, y)).sum::<f64>() / batch;
        let mut delta = Array2::from_shape_fn((y.len(), 1), |(i, _)| (sigmoid(logits[i]) - y[i]) / batch);
        let mut grads: Gradients = Vec::with_capacity(nl);
        for l in (0..nl).rev() {
            let dw = delta.t().dot(&acts[l]);
            let db = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut da = delta.dot(&self.weights[l]);
                da.zip_mut_with(&pre[l - 1], |d, &z| *d *= leaky_grad(z));
                delta = da;
            }
            grads.push((dw, db));
        }
        grads.reverse();
        (grads, loss)
    }

    fn param_mut(&mut self, layer: usize, bias: bool, index: usize) -> &mut f64 {
        if bias {
            &mut self.biases[layer][index]
        } else {
            let cols = self.weights[layer].ncols();
            &mut self.weights[layer][(index / cols, index % cols)]
        }
    }

    pub fn write_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        out.write_all(MODEL_MAGIC)?;
        out.write_all(&(self.layer_sizes.len() as u32).to_le_bytes())?;
        for &s in &self.layer_sizes {
            out.write_all(&(s as u32).to_le_bytes())?;
        }
        let (w, h, d) = self.input_shape;
        for v in [w, h, d] {
            out.write_all(&(v as u32).to_le_bytes())?;
        }
        out.write_all(&[self.normalize as u8])?;
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for &v in w.iter() {
                out.write_all(&(v as f32).to_le_bytes())?;
            }
            for &v in b.iter() {
                out.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(input: &mut impl Read) -> Result<Self, InkError> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(InkError::BadModel("bad magic".into()));
        }
        let mut u32_buf = [0u8; 4];
        let mut read_u32 = |input: &mut dyn Read| -> Result<usize, InkError> {
            input.read_exact(&mut u32_buf)?;
            Ok(u32::from_le_bytes(u32_buf) as usize)
        };
        let n = read_u32(input)?;
        if !(2..=64).contains(&n) {
            return Err(InkError::BadModel(format!("implausible layer count {n}")));
        }
        let layer_sizes = (0..n).map(|_| read_u32(input)).collect::<Result<Vec<_>, _>>()?;
        let shape = (read_u32(input)?, read_u32(input)?, read_u32(input)?);
        let mut flag = [0u8; 1];
        input.read_exact(&mut flag)?;
        let mut f32_buf = [0u8; 4];
        let mut read_f32 = |input: &mut dyn Read| -> Result<f64, InkError> {
            input.read_exact(&mut f32_buf)?;
            Ok(f32::from_le_bytes(f32_buf) as f64)
        };
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let wv = (0..fan_in * fan_out).map(|_| read_f32(input)).collect::<Result<Vec<_>, _>>()?;
            let bv = (0..fan_out).map(|_| read_f32(input)).collect::<Result<Vec<_>, _>>()?;
            weights.push(Array2::from_shape_vec((fan_out, fan_in), wv).map_err(|e| InkError::BadModel(e.to_string()))?);
            biases.push(Array1::from_vec(bv));
        }
        let p = Self {
            layer_sizes,
            weights,
            biases,
            input_shape: shape,
            normalize: flag[0] != 0,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Largest relative error between `grad_fn` and central finite differences
/// (`h = 1e-4`) over up to 100 randomly chosen parameters.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check_with(
    params: &ModelParams,
    patch: &[f64],
    label: f64,
    grad_fn: impl Fn(&ModelParams, ArrayView2<f64>, &[f64]) -> Gradients,
) -> f64 {
    let x = ArrayView2::from_shape((1, patch.len()), patch).expect("patch length");
    let y = [label];
    let grads = grad_fn(params, x, &y);
    let mut slots = Vec::new();
    for l in 0..params.weights.len() {
        for i in 0..params.weights[l].len() {
            slots.push((l, false, i));
        }
        for i in 0..params.biases[l].len() {
            slots.push((l, true, i));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x6c4ec);
    let picks = sample_indices(&mut rng, slots.len(), slots.len().min(100));
    let h = 1e-4;
    let mut work = params.clone();
    let mut worst: f64 = 0.0;
    for idx in picks.iter() {
        let (l, bias, i) = slots[idx];
        let orig = *work.param_mut(l, bias, i);
        *work.param_mut(l, bias, i) = orig + h;
        let up = work.loss(x, &y);
        *work.param_mut(l, bias, i) = orig - h;
        let down = work.loss(x, &y);
        *work.param_mut(l, bias, i) = orig;
        let numeric = (up - down) / (2.0 * h);
        let analytic = if bias {
            grads[l].1[i]
        } else {
            let cols = params.weights[l].ncols();
            grads[l].0[(i / cols, i % cols)]
        };
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic - numeric).abs() / denom);
    }
    worst
}

/// [`grad_check_with`] against the network's own backward pass.
pub fn grad_check(params: &ModelParams, patch: &[f64], label: f64) -> f64 {
    grad_check_with(params, patch, label, |p, x, y| p.backward(x, y).0)
}

/// Heavy-ball SGD state.
pub struct Momentum {
    velocity: Gradients,
    pub momentum: f64,
}

impl Momentum {
    pub fn new(params: &ModelParams, momentum: f64) -> Self {
        Self {
            velocity: params
                .weights
                .iter()
                .zip(&params.biases)
                .map(|(w, b)| (Array2::zeros(w.raw_dim()), Array1::zeros(b.raw_dim())))
                .collect(),
            momentum,
        }
    }

    /// `v = mu v + g; theta -= lr v`.
    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients, lr: f64) {
        for (l, (gw, gb)) in grads.iter().enumerate() {
            let (vw, vb) = &mut self.velocity[l];
            vw.zip_mut_with(gw, |v, &g| *v = self.momentum * *v + g);
            vb.zip_mut_with(gb, |v, &g| *v = self.momentum * *v + g);
            params.weights[l].scaled_add(-lr, vw);
            params.biases[l].scaled_add(-lr, vb);
        }
    }
}
