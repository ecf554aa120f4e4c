//! Small feed-forward and 1-D convolutional networks with hand-written
//! backpropagation. Parameters live in one flat vector so optimizers and
//! gradient checks can treat every model the same way.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::rng_for;

/// Number of ordinal classes predicted by the classifiers.
pub const N_CLASSES: usize = 4;

/// Activations are flat, channel-major: value (c, t) sits at `c * len + t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case")]
pub enum Layer {
    Dense { n_in: usize, n_out: usize },
    Conv1d { in_ch: usize, out_ch: usize, width: usize, in_len: usize },
    MaxPool1d { channels: usize, in_len: usize, width: usize },
    Relu,
}

impl Layer {
    fn n_params(&self) -> usize {
        match *self {
            Layer::Dense { n_in, n_out } => n_out * n_in + n_out,
            Layer::Conv1d { in_ch, out_ch, width, .. } => out_ch * in_ch * width + out_ch,
            _ => 0,
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            Layer::Dense { n_in, .. } => n_in,
            Layer::Conv1d { in_ch, width, .. } => in_ch * width,
            _ => 0,
        }
    }

    fn n_weights(&self) -> usize {
        match *self {
            Layer::Dense { n_in, n_out } => n_out * n_in,
            Layer::Conv1d { in_ch, out_ch, width, .. } => out_ch * in_ch * width,
            _ => 0,
        }
    }

    fn forward(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        match *self {
            Layer::Dense { n_in, n_out } => {
                let (w, b) = p.split_at(n_out * n_in);
                (0..n_out)
                    .map(|o| b[o] + w[o * n_in..(o + 1) * n_in].iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
                    .collect()
            }
            Layer::Conv1d { in_ch, out_ch, width, in_len } => {
                let out_len = in_len + 1 - width;
                let (w, b) = p.split_at(out_ch * in_ch * width);
                let mut y = vec![0.0; out_ch * out_len];
                for o in 0..out_ch {
                    for t in 0..out_len {
                        let mut acc = b[o];
                        for c in 0..in_ch {
                            let wk = &w[(o * in_ch + c) * width..(o * in_ch + c + 1) * width];
                            let xs = &x[c * in_len + t..c * in_len + t + width];
                            acc += wk.iter().zip(xs).map(|(a, v)| a * v).sum::<f64>();
                        }
                        y[o * out_len + t] = acc;
                    }
                }
                y
            }
            Layer::MaxPool1d { channels, in_len, width } => {
                let out_len = in_len / width;
                let mut y = Vec::with_capacity(channels * out_len);
                for c in 0..channels {
                    for t in 0..out_len {
                        let s = &x[c * in_len + t * width..c * in_len + (t + 1) * width];
                        y.push(s.iter().copied().fold(f64::NEG_INFINITY, f64::max));
                    }
                }
                y
            }
            Layer::Relu => x.iter().map(|v| v.max(0.0)).collect(),
        }
    }

    /// Accumulates parameter gradients into `gp` and returns dL/dx.
    fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], gp: &mut [f64]) -> Vec<f64> {
        match *self {
            Layer::Dense { n_in, n_out } => {
                let (w, _) = p.split_at(n_out * n_in);
                let (gw, gb) = gp.split_at_mut(n_out * n_in);
                let mut dx = vec![0.0; n_in];
                for o in 0..n_out {
                    let d = dy[o];
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    let row = o * n_in;
                    for i in 0..n_in {
                        gw[row + i] += d * x[i];
                        dx[i] += d * w[row + i];
                    }
                }
                dx
            }
            Layer::Conv1d { in_ch, out_ch, width, in_len } => {
                let out_len = in_len + 1 - width;
                let (w, _) = p.split_at(out_ch * in_ch * width);
                let (gw, gb) = gp.split_at_mut(out_ch * in_ch * width);
                let mut dx = vec![0.0; in_ch * in_len];
                for o in 0..out_ch {
                    for t in 0..out_len {
                        let d = dy[o * out_len + t];
                        if d == 0.0 {
                            continue;
                        }
                        gb[o] += d;
                        for c in 0..in_ch {
                            let base = (o * in_ch + c) * width;
                            for k in 0..width {
                                gw[base + k] += d * x[c * in_len + t + k];
                                dx[c * in_len + t + k] += d * w[base + k];
                            }
                        }
                    }
                }
                dx
            }
            Layer::MaxPool1d { channels, in_len, width } => {
                let out_len = in_len / width;
                let mut dx = vec![0.0; channels * in_len];
                for c in 0..channels {
                    for t in 0..out_len {
                        let start = c * in_len + t * width;
                        // First maximum wins, matching the forward fold.
                        let mut arg = start;
                        for i in start..start + width {
                            if x[i] > x[arg] {
                                arg = i;
                            }
                        }
                        dx[arg] += dy[c * out_len + t];
                    }
                }
                dx
            }
            Layer::Relu => x.iter().zip(dy).map(|(v, d)| if *v > 0.0 { *d } else { 0.0 }).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub input_len: usize,
    pub layers: Vec<Layer>,
    /// Start of each layer's slice in `params`.
    pub offsets: Vec<usize>,
    pub params: Vec<f64>,
}

impl Network {
    /// He-initialized weights, zero biases.
    pub fn new(input_len: usize, layers: Vec<Layer>, seed: u64) -> Self {
        let mut offsets = Vec::with_capacity(layers.len());
        let mut total = 0;
        for l in &layers {
            offsets.push(total);
            total += l.n_params();
        }
        let mut params = vec![0.0; total];
        let mut rng = rng_for(seed, 0x6e6e);
        for (l, &off) in layers.iter().zip(&offsets) {
            let scale = (2.0 / l.fan_in().max(1) as f64).sqrt();
            for w in &mut params[off..off + l.n_weights()] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *w = scale * z;
            }
        }
        Network {
            input_len,
            layers,
            offsets,
            params,
        }
    }

    /// Dense layers with ReLU between them; `sizes` includes input and output.
    pub fn mlp(sizes: &[usize], seed: u64) -> Self {
        let mut layers = Vec::new();
        for (i, w) in sizes.windows(2).enumerate() {
            if i > 0 {
                layers.push(Layer::Relu);
            }
            layers.push(Layer::Dense { n_in: w[0], n_out: w[1] });
        }
        Network::new(sizes[0], layers, seed)
    }

    /// Two conv + maxpool + ReLU blocks over the feature vector as a
    /// one-channel sequence, then a ReLU dense layer and the output layer.
    pub fn cnn(input_len: usize, spec: &CnnSpec, n_out: usize, seed: u64) -> Result<Self> {
        let min = spec.min_input_len();
        if input_len < min {
            return Err(Error::config(format!(
                "CNN needs feature vectors of length >= {min}, got {input_len}"
            )));
        }
        let mut layers = Vec::new();
        let mut ch = 1;
        let mut len = input_len;
        for &filters in &[spec.filters1, spec.filters2] {
            layers.push(Layer::Conv1d {
                in_ch: ch,
                out_ch: filters,
                width: spec.width,
                in_len: len,
            });
            len = len + 1 - spec.width;
            layers.push(Layer::MaxPool1d {
                channels: filters,
                in_len: len,
                width: spec.pool,
            });
            len /= spec.pool;
            layers.push(Layer::Relu);
            ch = filters;
        }
        layers.push(Layer::Dense {
            n_in: ch * len,
            n_out: spec.hidden,
        });
        layers.push(Layer::Relu);
        layers.push(Layer::Dense {
            n_in: spec.hidden,
            n_out,
        });
        Ok(Network::new(input_len, layers, seed))
    }

    pub fn output_len(&self) -> usize {
        let mut len = self.input_len;
        for l in &self.layers {
            len = match *l {
                Layer::Dense { n_out, .. } => n_out,
                Layer::Conv1d { out_ch, width, in_len, .. } => out_ch * (in_len + 1 - width),
                Layer::MaxPool1d { channels, in_len, width } => channels * (in_len / width),
                Layer::Relu => len,
            };
        }
        len
    }

    fn layer_params(&self, i: usize) -> &[f64] {
        let off = self.offsets[i];
        &self.params[off..off + self.layers[i].n_params()]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            a = l.forward(self.layer_params(i), &a);
        }
        a
    }

    /// Forward pass keeping every layer's input; the last entry is the output.
    fn forward_trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut trace = Vec::with_capacity(self.layers.len() + 1);
        trace.push(x.to_vec());
        for (i, l) in self.layers.iter().enumerate() {
            let next = l.forward(self.layer_params(i), trace.last().expect("non-empty"));
            trace.push(next);
        }
        trace
    }

    /// Backpropagates `d_out` through a recorded trace, adding into `grad`.
    fn backward(&self, trace: &[Vec<f64>], d_out: Vec<f64>, grad: &mut [f64]) {
        let mut d = d_out;
        for (i, l) in self.layers.iter().enumerate().rev() {
            let off = self.offsets[i];
            let n = l.n_params();
            d = l.backward(self.layer_params(i), &trace[i], &d, &mut grad[off..off + n]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnSpec {
    pub filters1: usize,
    pub filters2: usize,
    pub width: usize,
    pub pool: usize,
    pub hidden: usize,
}

impl Default for CnnSpec {
    fn default() -> Self {
        CnnSpec {
            filters1: 8,
            filters2: 16,
            width: 3,
            pool: 2,
            hidden: 32,
        }
    }
}

impl CnnSpec {
    /// Shortest input that still leaves one position after both blocks.
    pub fn min_input_len(&self) -> usize {
        let mut len = 1;
        for _ in 0..2 {
            len = len * self.pool + self.width - 1;
        }
        len
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// ln(1 + e^x) without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Cross entropy of a preferred-over-other pair with target probability 1:
/// -ln sigmoid(s_i - s_j).
pub fn pair_cross_entropy(s_i: f64, s_j: f64) -> f64 {
    softplus(s_j - s_i)
}

/// -ln p[class] for 0-based `class`.
pub fn class_cross_entropy(probs: &[f64], class: usize) -> f64 {
    -probs[class].max(f64::MIN_POSITIVE).ln()
}

/// Pair loss and its gradient w.r.t. all parameters of a scalar scorer.
pub fn pair_loss_grad(net: &Network, x_i: &[f64], x_j: &[f64], grad: &mut [f64]) -> f64 {
    let ti = net.forward_trace(x_i);
    let tj = net.forward_trace(x_j);
    let (si, sj) = (ti.last().expect("output")[0], tj.last().expect("output")[0]);
    // d/ds_i softplus(s_j - s_i) = -sigmoid(s_j - s_i).
    let g = sigmoid(sj - si);
    net.backward(&ti, vec![-g], grad);
    net.backward(&tj, vec![g], grad);
    pair_cross_entropy(si, sj)
}

/// Softmax cross entropy and its gradient for 0-based `class`.
pub fn class_loss_grad(net: &Network, x: &[f64], class: usize, grad: &mut [f64]) -> f64 {
    let trace = net.forward_trace(x);
    let probs = softmax(trace.last().expect("output"));
    let mut d = probs.clone();
    d[class] -= 1.0;
    net.backward(&trace, d, grad);
    class_cross_entropy(&probs, class)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub step: f64,
    /// Multiplicative step decay per epoch.
    pub decay: f64,
}

impl Default for SgdParams {
    fn default() -> Self {
        SgdParams {
            epochs: 30,
            batch_size: 64,
            step: 0.05,
            decay: 0.9,
        }
    }
}

impl SgdParams {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::config(format!("step must be positive, got {}", self.step)));
        }
        Ok(())
    }
}

/// Mini-batch gradient descent over `n` examples. `example` adds one
/// example's gradient into the buffer and returns its loss. Returns the mean
/// training loss before training and after every epoch.
pub fn minibatch_descent(
    net: &mut Network,
    n: usize,
    params: &SgdParams,
    seed: u64,
    what: &str,
    mut example: impl FnMut(&Network, usize, &mut [f64]) -> f64,
) -> Result<Vec<f64>> {
    params.validate()?;
    if n == 0 {
        return Err(Error::data(format!("{what}: no training examples")));
    }
    let mut rng = rng_for(seed, 0x5eed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut grad = vec![0.0; net.params.len()];
    let mut scratch = vec![0.0; net.params.len()];
    let full_loss = |net: &Network, example: &mut dyn FnMut(&Network, usize, &mut [f64]) -> f64, s: &mut [f64]| {
        (0..n).map(|i| example(net, i, s)).sum::<f64>() / n as f64
    };
    let mut curve = vec![full_loss(net, &mut example, &mut scratch)];
    let mut step = params.step;
    for epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(params.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut loss = 0.0;
            for &i in batch {
                loss += example(net, i, &mut grad);
            }
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "{what}: non-finite batch loss {loss} in epoch {epoch} (step {step})"
                )));
            }
            let scale = step / batch.len() as f64;
            net.params.iter_mut().zip(&grad).for_each(|(p, g)| *p -= scale * g);
        }
        let loss = full_loss(net, &mut example, &mut scratch);
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("{what}: training loss became {loss} after epoch {epoch}")));
        }
        curve.push(loss);
        step *= params.decay;
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Central finite-difference relative error at one parameter coordinate.
    fn fd_check(net: &Network, k: usize, loss: impl Fn(&Network) -> f64, analytic: f64) -> f64 {
        let h = 1e-5;
        let mut plus = net.clone();
        plus.params[k] += h;
        let mut minus = net.clone();
        minus.params[k] -= h;
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
        (numeric - analytic).abs() / (numeric.abs() + analytic.abs()).max(1e-7)
    }

    fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn pair_loss_at_equal_scores_is_ln2() {
        assert!((pair_cross_entropy(0.3, 0.3) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(pair_cross_entropy(50.0, 0.0) < 1e-20);
    }

    #[test]
    fn uniform_probs_cost_ln4() {
        let p = softmax(&[0.0; 4]);
        assert!((class_cross_entropy(&p, 2) - 4f64.ln()).abs() < 1e-12);
        assert_eq!(class_cross_entropy(&[0.0, 1.0, 0.0, 0.0], 1), 0.0);
    }

    #[test]
    fn mlp_gradient_matches_finite_difference() {
        let net = Network::mlp(&[5, 7, 1], 3);
        let mut rng = rng_for(9, 1);
        let (a, b) = (random_vec(&mut rng, 5), random_vec(&mut rng, 5));
        let mut g = vec![0.0; net.params.len()];
        pair_loss_grad(&net, &a, &b, &mut g);
        for k in [0, 7, 20, 35, net.params.len() - 1] {
            let err = fd_check(&net, k, |n| pair_cross_entropy(n.forward(&a)[0], n.forward(&b)[0]), g[k]);
            assert!(err < 1e-4, "coordinate {k}: {err}");
        }
    }

    #[test]
    fn cnn_gradient_matches_finite_difference() {
        let net = Network::cnn(22, &CnnSpec::default(), N_CLASSES, 5).unwrap();
        let mut rng = rng_for(2, 2);
        let x = random_vec(&mut rng, 22);
        let mut g = vec![0.0; net.params.len()];
        class_loss_grad(&net, &x, 3, &mut g);
        for k in [0, 5, 17, 30, 100] {
            let err = fd_check(&net, k, |n| class_cross_entropy(&softmax(&n.forward(&x)), 3), g[k]);
            assert!(err < 1e-4, "coordinate {k}: {err}");
        }
    }

    #[test]
    fn cnn_shape_and_minimum_length() {
        let spec = CnnSpec::default();
        assert_eq!(spec.min_input_len(), 10);
        let net = Network::cnn(10, &spec, N_CLASSES, 0).unwrap();
        assert_eq!(net.output_len(), 4);
        let p = softmax(&net.forward(&[0.0; 10]));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // Zero input with zero biases gives all-zero logits.
        assert!(p.iter().all(|v| (v - 0.25).abs() < 1e-12));
        assert!(Network::cnn(9, &spec, N_CLASSES, 0).is_err());
    }

    #[test]
    fn descent_reduces_classification_loss() {
        let mut rng = rng_for(4, 4);
        let xs: Vec<Vec<f64>> = (0..200).map(|_| random_vec(&mut rng, 3)).collect();
        let ys: Vec<usize> = xs.iter().map(|x| if x[0] > 0.0 { 3 } else { 0 }).collect();
        let mut net = Network::mlp(&[3, 8, 4], 1);
        let params = SgdParams {
            step: 0.2,
            ..Default::default()
        };
        let curve = minibatch_descent(&mut net, xs.len(), &params, 1, "test", |n, i, g| {
            class_loss_grad(n, &xs[i], ys[i], g)
        })
        .unwrap();
        assert!(curve.last().unwrap() < &(curve[0] * 0.5));
    }
}
