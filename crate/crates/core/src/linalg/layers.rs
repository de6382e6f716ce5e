use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::tensor::{sigmoid, Tensor2};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the cached input `x` and output `y`.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

/// Declarative description of one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Dense {
        in_dim: usize,
        out_dim: usize,
        l1: f64,
        bias: bool,
    },
    BatchNorm {
        dim: usize,
        epsilon: f64,
        momentum: f64,
    },
    Activation(Activation),
    Dropout {
        rate: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `in_dim × out_dim`, applied as `X·W`.
    pub weight: Tensor2,
    /// `1 × out_dim`.
    pub bias: Option<Tensor2>,
    pub l1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    /// Scale (γ).
    pub gamma: Tensor2,
    /// Shift (δ).
    pub shift: Tensor2,
    pub running_mean: Tensor2,
    pub running_var: Tensor2,
    pub epsilon: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    BatchNorm(BatchNorm),
    Activation(Activation),
    Dropout { rate: f64 },
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::BatchNorm(_) => "batch_norm",
            Layer::Activation(_) => "activation",
            Layer::Dropout { .. } => "dropout",
        }
    }

    fn output_dim(&self, input_dim: usize) -> usize {
        match self {
            Layer::Dense(d) => d.weight.cols(),
            _ => input_dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Inference,
}

/// Where train-mode dropout masks come from.
pub enum MaskSource<'a> {
    /// No dropout layer may be active; an active one is an error.
    None,
    Sample(&'a mut dyn RngCore),
    /// Masks previously recorded on a tape, in dropout-layer order.
    Replay(&'a [Tensor2]),
}

#[derive(Debug, Clone)]
enum Cache {
    Dense {
        input: Tensor2,
    },
    BatchNorm {
        x_hat: Tensor2,
        inv_std: Vec<f64>,
        batch_mean: Vec<f64>,
        batch_var: Vec<f64>,
    },
    BatchNormInference,
    Activation {
        input: Tensor2,
        output: Tensor2,
    },
    Dropout {
        mask: Option<Tensor2>,
    },
}

/// Values cached by a forward pass, consumed by the matching backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    mode: Mode,
    caches: Vec<Cache>,
    output_shape: (usize, usize),
}

impl Tape {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Dropout masks in layer order (scaled multipliers, `0` or `1/(1-rate)`).
    pub fn dropout_masks(&self) -> Vec<Tensor2> {
        self.caches
            .iter()
            .filter_map(|c| match c {
                Cache::Dropout { mask: Some(m) } => Some(m.clone()),
                _ => None,
            })
            .collect()
    }
}

/// An ordered stack of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Stack {
    layers: Vec<Layer>,
}

impl Stack {
    /// Builds a stack from specs, initializing dense weights with
    /// Glorot-uniform scaling, biases at zero, γ=1, δ=0, running stats (0, 1).
    pub fn build(specs: &[LayerSpec], rng: &mut dyn RngCore) -> Result<Self> {
        let mut layers = Vec::with_capacity(specs.len());
        let mut width: Option<usize> = None;
        for (idx, spec) in specs.iter().enumerate() {
            let layer = match *spec {
                LayerSpec::Dense {
                    in_dim,
                    out_dim,
                    l1,
                    bias,
                } => {
                    if in_dim == 0 || out_dim == 0 {
                        return Err(Error::Invalid(format!("layer {idx}: zero-sized dense layer")));
                    }
                    if !(l1 >= 0.0) {
                        return Err(Error::Invalid(format!("layer {idx}: l1 coefficient must be >= 0")));
                    }
                    check_width(idx, width, in_dim)?;
                    let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
                    let data = (0..in_dim * out_dim).map(|_| rng.random_range(-limit..limit)).collect();
                    Layer::Dense(Dense {
                        weight: Tensor2::from_vec(in_dim, out_dim, data)?,
                        bias: bias.then(|| Tensor2::zeros(1, out_dim)),
                        l1,
                    })
                }
                LayerSpec::BatchNorm { dim, epsilon, momentum } => {
                    check_width(idx, width, dim)?;
                    if !(epsilon > 0.0) {
                        return Err(Error::Invalid(format!("layer {idx}: epsilon must be > 0")));
                    }
                    if !(momentum > 0.0 && momentum < 1.0) {
                        return Err(Error::Invalid(format!("layer {idx}: momentum must lie in (0,1)")));
                    }
                    Layer::BatchNorm(BatchNorm {
                        gamma: Tensor2::filled(1, dim, 1.0),
                        shift: Tensor2::zeros(1, dim),
                        running_mean: Tensor2::zeros(1, dim),
                        running_var: Tensor2::filled(1, dim, 1.0),
                        epsilon,
                        momentum,
                    })
                }
                LayerSpec::Activation(a) => Layer::Activation(a),
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(Error::Invalid(format!("layer {idx}: dropout rate must lie in [0,1)")));
                    }
                    Layer::Dropout { rate }
                }
            };
            width = Some(layer.output_dim(width.unwrap_or(0)));
            layers.push(layer);
        }
        Ok(Stack { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Self {
        Stack { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Trainable tensors in canonical order: per layer, dense weight then bias,
    /// batch-norm γ then δ.
    pub fn params(&self) -> Vec<&Tensor2> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Dense(d) => {
                    out.push(&d.weight);
                    if let Some(b) = &d.bias {
                        out.push(b);
                    }
                }
                Layer::BatchNorm(bn) => {
                    out.push(&bn.gamma);
                    out.push(&bn.shift);
                }
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor2> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Dense(d) => {
                    out.push(&mut d.weight);
                    if let Some(b) = &mut d.bias {
                        out.push(b);
                    }
                }
                Layer::BatchNorm(bn) => {
                    out.push(&mut bn.gamma);
                    out.push(&mut bn.shift);
                }
                _ => {}
            }
        }
        out
    }

    /// Names aligned with [`Stack::params`].
    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Dense(d) => {
                    out.push(format!("{prefix}.{i}.weight"));
                    if d.bias.is_some() {
                        out.push(format!("{prefix}.{i}.bias"));
                    }
                }
                Layer::BatchNorm(_) => {
                    out.push(format!("{prefix}.{i}.gamma"));
                    out.push(format!("{prefix}.{i}.shift"));
                }
                _ => {}
            }
        }
        out
    }

    /// Non-trainable state (batch-norm running statistics) with names.
    pub fn buffers(&self, prefix: &str) -> Vec<(String, &Tensor2)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if let Layer::BatchNorm(bn) = layer {
                out.push((format!("{prefix}.{i}.running_mean"), &bn.running_mean));
                out.push((format!("{prefix}.{i}.running_var"), &bn.running_var));
            }
        }
        out
    }

    pub fn buffers_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor2)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if let Layer::BatchNorm(bn) = layer {
                out.push((format!("{prefix}.{i}.running_mean"), &mut bn.running_mean));
                out.push((format!("{prefix}.{i}.running_var"), &mut bn.running_var));
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Σ l1·|W| over dense weights.
    pub fn l1_penalty(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Dense(d) if d.l1 > 0.0 => d.l1 * d.weight.data().iter().map(|w| w.abs()).sum::<f64>(),
                _ => 0.0,
            })
            .sum()
    }

    /// Forward pass; in train mode the batch-norm running statistics are
    /// updated from the batch.
    pub fn forward(&mut self, input: &Tensor2, mode: Mode, masks: &mut MaskSource<'_>) -> Result<(Tensor2, Tape)> {
        let (out, tape) = self.forward_pure(input, mode, masks)?;
        if mode == Mode::Train {
            self.commit_running_stats(&tape)?;
        }
        Ok((out, tape))
    }

    /// Forward pass that leaves running statistics untouched.
    pub fn forward_pure(&self, input: &Tensor2, mode: Mode, masks: &mut MaskSource<'_>) -> Result<(Tensor2, Tape)> {
        let mut x = input.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut replay_idx = 0usize;
        for (idx, layer) in self.layers.iter().enumerate() {
            let (y, cache) = match layer {
                Layer::Dense(d) => {
                    let mut y = x.matmul(&d.weight).map_err(|e| layer_error(idx, layer, e))?;
                    if let Some(b) = &d.bias {
                        y.add_row_broadcast(b)?;
                    }
                    (y, Cache::Dense { input: x })
                }
                Layer::BatchNorm(bn) => match mode {
                    Mode::Train => batch_norm_train(bn, &x).map_err(|e| layer_error(idx, layer, e))?,
                    Mode::Inference => (
                        batch_norm_inference(bn, &x).map_err(|e| layer_error(idx, layer, e))?,
                        Cache::BatchNormInference,
                    ),
                },
                Layer::Activation(a) => {
                    let y = x.map(|v| a.apply(v));
                    (y.clone(), Cache::Activation { input: x, output: y })
                }
                Layer::Dropout { rate } => {
                    if mode == Mode::Inference || *rate == 0.0 {
                        (x, Cache::Dropout { mask: None })
                    } else {
                        let mask = match masks {
                            MaskSource::None => {
                                return Err(Error::Invalid(format!(
                                    "layer {idx} (dropout): train mode requires a mask source"
                                )))
                            }
                            MaskSource::Sample(rng) => {
                                let keep = 1.0 - rate;
                                let scale = 1.0 / keep;
                                let data = (0..x.len())
                                    .map(|_| if rng.random::<f64>() < *rate { 0.0 } else { scale })
                                    .collect();
                                Tensor2::from_vec(x.rows(), x.cols(), data)?
                            }
                            MaskSource::Replay(recorded) => {
                                let m = recorded
                                    .get(replay_idx)
                                    .ok_or_else(|| Error::TapeMismatch(format!("no recorded mask for layer {idx}")))?;
                                replay_idx += 1;
                                m.clone()
                            }
                        };
                        let y = x.mul(&mask).map_err(|e| layer_error(idx, layer, e))?;
                        (y, Cache::Dropout { mask: Some(mask) })
                    }
                }
            };
            if !y.all_finite() {
                return Err(Error::NonFinite {
                    context: format!("layer {idx} ({})", layer.kind()),
                });
            }
            caches.push(cache);
            x = y;
        }
        let output_shape = x.shape();
        Ok((
            x,
            Tape {
                mode,
                caches,
                output_shape,
            },
        ))
    }

    /// Applies the running-statistics update recorded on a train-mode tape.
    pub fn commit_running_stats(&mut self, tape: &Tape) -> Result<()> {
        if tape.caches.len() != self.layers.len() {
            return Err(Error::TapeMismatch("tape length differs from stack".into()));
        }
        for (layer, cache) in self.layers.iter_mut().zip(&tape.caches) {
            if let (
                Layer::BatchNorm(bn),
                Cache::BatchNorm {
                    batch_mean, batch_var, ..
                },
            ) = (layer, cache)
            {
                let m = bn.momentum;
                for (r, &b) in bn.running_mean.data_mut().iter_mut().zip(batch_mean) {
                    *r = m * *r + (1.0 - m) * b;
                }
                for (r, &b) in bn.running_var.data_mut().iter_mut().zip(batch_var) {
                    *r = m * *r + (1.0 - m) * b;
                }
            }
        }
        Ok(())
    }

    /// Reverse-mode pass over a train-mode tape. Returns the gradient with
    /// respect to the stack input and the parameter gradients aligned with
    /// [`Stack::params`]. Dense weight gradients include `l1·sign(W)`.
    pub fn backward(&self, tape: &Tape, upstream: &Tensor2) -> Result<(Tensor2, Vec<Tensor2>)> {
        if tape.mode != Mode::Train {
            return Err(Error::TapeMismatch("backward requires a train-mode tape".into()));
        }
        if tape.caches.len() != self.layers.len() {
            return Err(Error::TapeMismatch("tape length differs from stack".into()));
        }
        if upstream.shape() != tape.output_shape {
            return Err(Error::ShapeMismatch {
                op: "stack_backward",
                left: upstream.shape(),
                right: tape.output_shape,
            });
        }
        let mut grad = upstream.clone();
        // Collected back-to-front, reversed at the end.
        let mut rev_grads: Vec<Tensor2> = Vec::new();
        for (layer, cache) in self.layers.iter().zip(&tape.caches).rev() {
            grad = match (layer, cache) {
                (Layer::Dense(d), Cache::Dense { input }) => {
                    let mut dw = input.t_matmul(&grad)?;
                    if d.l1 > 0.0 {
                        for (g, &w) in dw.data_mut().iter_mut().zip(d.weight.data()) {
                            *g += d.l1 * sign(w);
                        }
                    }
                    if d.bias.is_some() {
                        rev_grads.push(Tensor2::row_vector(grad.column_sums()));
                    }
                    rev_grads.push(dw);
                    grad.matmul_t(&d.weight)?
                }
                (Layer::BatchNorm(bn), Cache::BatchNorm { x_hat, inv_std, .. }) => {
                    let (dx, dgamma, dshift) = batch_norm_backward(bn, x_hat, inv_std, &grad);
                    rev_grads.push(dshift);
                    rev_grads.push(dgamma);
                    dx
                }
                (Layer::Activation(a), Cache::Activation { input, output }) => {
                    let mut dx = grad;
                    for ((g, &x), &y) in dx.data_mut().iter_mut().zip(input.data()).zip(output.data()) {
                        *g *= a.derivative(x, y);
                    }
                    dx
                }
                (Layer::Dropout { .. }, Cache::Dropout { mask }) => match mask {
                    Some(m) => grad.mul(m)?,
                    None => grad,
                },
                (layer, _) => {
                    return Err(Error::TapeMismatch(format!(
                        "cache does not match {} layer",
                        layer.kind()
                    )))
                }
            };
        }
        rev_grads.reverse();
        Ok((grad, rev_grads))
    }
}

#[inline]
fn sign(w: f64) -> f64 {
    if w > 0.0 {
        1.0
    } else if w < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_width(idx: usize, width: Option<usize>, expected: usize) -> Result<()> {
    match width {
        Some(w) if w != expected => Err(Error::Invalid(format!(
            "layer {idx}: expects width {expected} but receives {w}"
        ))),
        _ => Ok(()),
    }
}

fn layer_error(idx: usize, layer: &Layer, err: Error) -> Error {
    match err {
        Error::ShapeMismatch { left, right, .. } => Error::Invalid(format!(
            "layer {idx} ({}): shape mismatch {left:?} vs {right:?}",
            layer.kind()
        )),
        other => other,
    }
}

fn batch_norm_train(bn: &BatchNorm, x: &Tensor2) -> Result<(Tensor2, Cache)> {
    let (b, d) = x.shape();
    if d != bn.gamma.cols() {
        return Err(Error::ShapeMismatch {
            op: "batch_norm",
            left: x.shape(),
            right: bn.gamma.shape(),
        });
    }
    let n = b as f64;
    let mean: Vec<f64> = x.column_sums().into_iter().map(|s| s / n).collect();
    let mut var = vec![0.0; d];
    for i in 0..b {
        for ((v, &xv), &m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
            let c = xv - m;
            *v += c * c;
        }
    }
    for v in &mut var {
        *v /= n;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + bn.epsilon).sqrt()).collect();
    let mut x_hat = Tensor2::zeros(b, d);
    let mut y = Tensor2::zeros(b, d);
    for i in 0..b {
        let xr = x.row(i);
        for j in 0..d {
            let h = (xr[j] - mean[j]) * inv_std[j];
            x_hat.set(i, j, h);
            y.set(i, j, bn.gamma.data()[j] * h + bn.shift.data()[j]);
        }
    }
    Ok((
        y,
        Cache::BatchNorm {
            x_hat,
            inv_std,
            batch_mean: mean,
            batch_var: var,
        },
    ))
}

fn batch_norm_inference(bn: &BatchNorm, x: &Tensor2) -> Result<Tensor2> {
    let (b, d) = x.shape();
    if d != bn.gamma.cols() {
        return Err(Error::ShapeMismatch {
            op: "batch_norm",
            left: x.shape(),
            right: bn.gamma.shape(),
        });
    }
    let scale: Vec<f64> = (0..d)
        .map(|j| bn.gamma.data()[j] / (bn.running_var.data()[j] + bn.epsilon).sqrt())
        .collect();
    let mut y = Tensor2::zeros(b, d);
    for i in 0..b {
        let xr = x.row(i);
        for j in 0..d {
            y.set(
                i,
                j,
                (xr[j] - bn.running_mean.data()[j]) * scale[j] + bn.shift.data()[j],
            );
        }
    }
    Ok(y)
}

fn batch_norm_backward(bn: &BatchNorm, x_hat: &Tensor2, inv_std: &[f64], dy: &Tensor2) -> (Tensor2, Tensor2, Tensor2) {
    let (b, d) = dy.shape();
    let n = b as f64;
    let mut dgamma = vec![0.0; d];
    let mut dshift = vec![0.0; d];
    for i in 0..b {
        for j in 0..d {
            let g = dy.get(i, j);
            dgamma[j] += g * x_hat.get(i, j);
            dshift[j] += g;
        }
    }
    // With dx̂ = γ·dy:  dx = inv_std/n · (n·dx̂ − Σdx̂ − x̂·Σ(dx̂·x̂)),
    // and Σdx̂ = γ·dshift, Σ(dx̂·x̂) = γ·dgamma.
    let mut dx = Tensor2::zeros(b, d);
    for i in 0..b {
        for j in 0..d {
            let gamma = bn.gamma.data()[j];
            let dxh = gamma * dy.get(i, j);
            let v = inv_std[j] / n * (n * dxh - gamma * dshift[j] - x_hat.get(i, j) * gamma * dgamma[j]);
            dx.set(i, j, v);
        }
    }
    (dx, Tensor2::row_vector(dgamma), Tensor2::row_vector(dshift))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Tensor2 {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Tensor2::from_fn(rows, cols, |_, _| r.random_range(-2.0..2.0))
    }

    #[test]
    fn dropout_rate_zero_is_identity_in_train_mode() {
        let mut stack = Stack::build(&[LayerSpec::Dropout { rate: 0.0 }], &mut rng()).unwrap();
        let x = random_batch(3, 4, 1);
        let mut r = rng();
        let (y, _) = stack.forward(&x, Mode::Train, &mut MaskSource::Sample(&mut r)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn inverted_dropout_scales_survivors() {
        let stack = Stack::build(&[LayerSpec::Dropout { rate: 0.5 }], &mut rng()).unwrap();
        let x = Tensor2::filled(20, 20, 1.0);
        let mut r = rng();
        let (y, tape) = stack
            .forward_pure(&x, Mode::Train, &mut MaskSource::Sample(&mut r))
            .unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
        assert_eq!(tape.dropout_masks().len(), 1);
        let (y_inf, _) = stack.forward_pure(&x, Mode::Inference, &mut MaskSource::None).unwrap();
        assert_eq!(y_inf, x);
    }

    #[test]
    fn leaky_relu_values() {
        let stack = Stack::build(&[LayerSpec::Activation(Activation::LeakyRelu(0.3))], &mut rng()).unwrap();
        let x = Tensor2::row_vector(vec![-2.0, 3.0]);
        let (y, _) = stack.forward_pure(&x, Mode::Inference, &mut MaskSource::None).unwrap();
        assert!((y.get(0, 0) + 0.6).abs() < 1e-15);
        assert_eq!(y.get(0, 1), 3.0);
    }

    #[test]
    fn batch_norm_train_moments() {
        let mut stack = Stack::build(
            &[LayerSpec::BatchNorm {
                dim: 3,
                epsilon: 1e-5,
                momentum: 0.9,
            }],
            &mut rng(),
        )
        .unwrap();
        if let Layer::BatchNorm(bn) = &mut stack.layers_mut()[0] {
            bn.gamma = Tensor2::row_vector(vec![2.0, 0.5, -1.5]);
            bn.shift = Tensor2::row_vector(vec![0.3, -1.0, 4.0]);
        }
        let x = random_batch(50, 3, 5).map(|v| v * 0.1);
        let (y, _) = stack.forward(&x, Mode::Train, &mut MaskSource::None).unwrap();
        let n = 50.0;
        for j in 0..3 {
            let col: Vec<f64> = (0..50).map(|i| x.get(i, j)).collect();
            let m = col.iter().sum::<f64>() / n;
            let v = col.iter().map(|c| (c - m).powi(2)).sum::<f64>() / n;
            let ycol: Vec<f64> = (0..50).map(|i| y.get(i, j)).collect();
            let ym = ycol.iter().sum::<f64>() / n;
            let yv = ycol.iter().map(|c| (c - ym).powi(2)).sum::<f64>() / n;
            let (gamma, shift) = [(2.0, 0.3), (0.5, -1.0), (-1.5, 4.0)][j];
            assert!((ym - shift).abs() < 1e-12);
            assert!((yv - gamma * gamma * v / (v + 1e-5)).abs() < 1e-12);
        }
        // Running stats moved toward batch stats.
        if let Layer::BatchNorm(bn) = &stack.layers()[0] {
            assert!(bn.running_var.data().iter().all(|&v| v < 1.0));
        }
    }

    #[test]
    fn batch_norm_inference_is_affine() {
        let mut stack = Stack::build(
            &[LayerSpec::BatchNorm {
                dim: 2,
                epsilon: 1e-5,
                momentum: 0.9,
            }],
            &mut rng(),
        )
        .unwrap();
        if let Layer::BatchNorm(bn) = &mut stack.layers_mut()[0] {
            bn.running_mean = Tensor2::row_vector(vec![1.0, -1.0]);
            bn.running_var = Tensor2::row_vector(vec![4.0, 0.25]);
        }
        let f = |v: Vec<f64>| {
            stack
                .forward_pure(&Tensor2::row_vector(v), Mode::Inference, &mut MaskSource::None)
                .unwrap()
                .0
        };
        let a = f(vec![0.0, 0.0]);
        let b = f(vec![1.0, 1.0]);
        let c = f(vec![2.0, 2.0]);
        for j in 0..2 {
            assert!(((c.get(0, j) - b.get(0, j)) - (b.get(0, j) - a.get(0, j))).abs() < 1e-12);
        }
    }

    #[test]
    fn single_dense_sum_input_gradient() {
        let stack = Stack::build(
            &[LayerSpec::Dense {
                in_dim: 3,
                out_dim: 2,
                l1: 0.0,
                bias: true,
            }],
            &mut rng(),
        )
        .unwrap();
        let x = random_batch(4, 3, 2);
        let (y, tape) = stack.forward_pure(&x, Mode::Train, &mut MaskSource::None).unwrap();
        let (dx, grads) = stack
            .backward(&tape, &Tensor2::filled(y.rows(), y.cols(), 1.0))
            .unwrap();
        let w = stack.params()[0].clone();
        for i in 0..4 {
            for j in 0..3 {
                let expected = w.row(j).iter().sum::<f64>();
                assert!((dx.get(i, j) - expected).abs() < 1e-14);
            }
        }
        // dW = Xᵀ·1, db = batch size.
        assert_eq!(grads[1].data(), &[4.0, 4.0]);
        let col_sums = x.column_sums();
        for p in 0..3 {
            for q in 0..2 {
                assert!((grads[0].get(p, q) - col_sums[p]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let specs = [
            LayerSpec::Dense {
                in_dim: 4,
                out_dim: 3,
                l1: 0.0,
                bias: true,
            },
            LayerSpec::BatchNorm {
                dim: 3,
                epsilon: 1e-5,
                momentum: 0.9,
            },
            LayerSpec::Activation(Activation::LeakyRelu(0.3)),
            LayerSpec::Dropout { rate: 0.3 },
            LayerSpec::Dense {
                in_dim: 3,
                out_dim: 2,
                l1: 0.0,
                bias: true,
            },
        ];
        let stack = Stack::build(&specs, &mut rng()).unwrap();
        let x = random_batch(5, 4, 3);
        let mut r = rng();
        let (y, tape) = stack
            .forward_pure(&x, Mode::Train, &mut MaskSource::Sample(&mut r))
            .unwrap();
        let (dx, grads) = stack.backward(&tape, &Tensor2::zeros(y.rows(), y.cols())).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!(grads.iter().all(|g| g.data().iter().all(|&v| v == 0.0)));
        assert_eq!(grads.len(), stack.params().len());
    }

    #[test]
    fn backward_rejects_inference_tape() {
        let stack = Stack::build(&[LayerSpec::Activation(Activation::Relu)], &mut rng()).unwrap();
        let x = Tensor2::zeros(1, 2);
        let (_, tape) = stack.forward_pure(&x, Mode::Inference, &mut MaskSource::None).unwrap();
        assert!(matches!(
            stack.backward(&tape, &Tensor2::zeros(1, 2)),
            Err(Error::TapeMismatch(_))
        ));
    }

    #[test]
    fn incompatible_widths_rejected() {
        let specs = [
            LayerSpec::Dense {
                in_dim: 4,
                out_dim: 3,
                l1: 0.0,
                bias: true,
            },
            LayerSpec::BatchNorm {
                dim: 5,
                epsilon: 1e-5,
                momentum: 0.9,
            },
        ];
        assert!(Stack::build(&specs, &mut rng()).is_err());
    }

    #[test]
    fn non_finite_names_layer() {
        let stack = Stack::build(&[LayerSpec::Activation(Activation::Identity)], &mut rng()).unwrap();
        let x = Tensor2::row_vector(vec![f64::NAN]);
        let err = stack
            .forward_pure(&x, Mode::Inference, &mut MaskSource::None)
            .unwrap_err();
        assert!(err.to_string().contains("layer 0"));
    }

    #[test]
    fn inference_forward_is_bitwise_deterministic() {
        let specs = [
            LayerSpec::Dense {
                in_dim: 6,
                out_dim: 5,
                l1: 0.0,
                bias: true,
            },
            LayerSpec::BatchNorm {
                dim: 5,
                epsilon: 1e-5,
                momentum: 0.9,
            },
            LayerSpec::Activation(Activation::Sigmoid),
            LayerSpec::Dropout { rate: 0.4 },
        ];
        let stack = Stack::build(&specs, &mut rng()).unwrap();
        let x = random_batch(7, 6, 9);
        let a = stack
            .forward_pure(&x, Mode::Inference, &mut MaskSource::None)
            .unwrap()
            .0;
        let b = stack
            .forward_pure(&x, Mode::Inference, &mut MaskSource::None)
            .unwrap()
            .0;
        assert_eq!(a, b);
    }
}
