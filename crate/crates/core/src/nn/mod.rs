//! Feedforward ReLU networks: inference, losses and reverse-mode gradients.
//!
//! A [`Network`] is a chain of affine layers. Every layer except the last is
//! followed by an elementwise ReLU; the last layer produces logits.

mod train;

pub use train::{
    evaluate_accuracy, train, train_with_callback, EpochStats, TrainConfig, TrainMode,
};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One affine map `x -> W x + b` with `W` of shape `[n_out, n_in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl AffineLayer {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::Shape {
                context: "affine layer bias",
                expected: weights.nrows(),
                actual: bias.len(),
            });
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidNetwork(
                "non-finite weight or bias entry".into(),
            ));
        }
        Ok(Self { weights, bias })
    }

    pub fn n_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.weights.nrows()
    }
}

/// One input with its class label; pixels lie in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub pixels: Array1<f64>,
    pub label: usize,
}

/// Which scalar objective an attack or trainer differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Loss {
    /// `-log softmax(z)[label]`.
    #[default]
    CrossEntropy,
    /// `max_{j != label} z_j - z_label`.
    CwMargin,
}

/// Layered feedforward ReLU classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<AffineLayer>,
}

impl Network {
    /// Validates the dimension chain and builds the network.
    pub fn new(layers: Vec<AffineLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidNetwork("network has no layers".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[1].n_in() != pair[0].n_out() {
                return Err(Error::InvalidNetwork(format!(
                    "layer {} expects {} inputs but layer {} produces {}",
                    k + 1,
                    pair[1].n_in(),
                    k,
                    pair[0].n_out()
                )));
            }
        }
        if layers[0].n_in() == 0 || layers[layers.len() - 1].n_out() == 0 {
            return Err(Error::InvalidNetwork("zero-width input or output".into()));
        }
        Ok(Self { layers })
    }

    /// Random network with widths `arch = [d, h1, ..., c]`.
    ///
    /// Entries are drawn from `U(-1/sqrt(n_in), 1/sqrt(n_in))`.
    pub fn random(arch: &[usize], seed: u64) -> Result<Self> {
        if arch.len() < 2 {
            return Err(Error::InvalidNetwork(
                "architecture needs at least input and output widths".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = arch
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let scale = 1.0 / (n_in.max(1) as f64).sqrt();
                let weights =
                    Array2::from_shape_fn((n_out, n_in), |_| rng.gen_range(-scale..=scale));
                let bias = Array1::from_shape_fn(n_out, |_| rng.gen_range(-scale..=scale));
                AffineLayer::new(weights, bias)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[AffineLayer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [AffineLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].n_out()
    }

    /// Layer widths `[d, h1, ..., c]`.
    pub fn architecture(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(AffineLayer::n_out))
            .collect()
    }

    fn check_input(&self, x: ArrayView1<f64>) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape {
                context: "network input",
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.num_classes() {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: self.num_classes(),
            });
        }
        Ok(())
    }

    /// Logits for a single input.
    pub fn forward(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut act = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            act = layer.weights.dot(&act) + &layer.bias;
            if k != last {
                act.mapv_inplace(relu);
            }
        }
        Ok(act)
    }

    /// Predicted class; ties go to the smallest index.
    pub fn predict(&self, x: ArrayView1<f64>) -> Result<usize> {
        Ok(argmax(self.forward(x)?.view()))
    }

    /// Gradient of the cross-entropy loss with respect to the input.
    pub fn input_gradient(&self, x: ArrayView1<f64>, label: usize) -> Result<Array1<f64>> {
        Ok(self
            .loss_and_input_gradient(x, label, Loss::CrossEntropy)?
            .1)
    }

    /// Loss value and its input gradient, by reverse-mode accumulation.
    ///
    /// The ReLU derivative at exactly zero is taken to be zero.
    pub fn loss_and_input_gradient(
        &self,
        x: ArrayView1<f64>,
        label: usize,
        loss: Loss,
    ) -> Result<(f64, Array1<f64>)> {
        let (logits, grad) = self.logits_and_input_gradient(x, label, loss)?;
        Ok((loss_value(logits.view(), label, loss), grad))
    }

    /// Logits at `x` and the input gradient of `loss` there.
    pub fn logits_and_input_gradient(
        &self,
        x: ArrayView1<f64>,
        label: usize,
        loss: Loss,
    ) -> Result<(Array1<f64>, Array1<f64>)> {
        self.check_input(x)?;
        self.check_label(label)?;
        let last = self.layers.len() - 1;

        // Pre-activations of hidden layers, needed for the ReLU masks.
        let mut pre_acts = Vec::with_capacity(last);
        let mut act = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let z = layer.weights.dot(&act) + &layer.bias;
            if k != last {
                act = z.mapv(relu);
                pre_acts.push(z);
            } else {
                act = z;
            }
        }
        let (_, mut delta) = loss_and_logit_gradient(act.view(), label, loss);

        for k in (0..=last).rev() {
            delta = self.layers[k].weights.t().dot(&delta);
            if k > 0 {
                delta.zip_mut_with(&pre_acts[k - 1], |d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
        }
        Ok((act, delta))
    }

    /// Batched logits: rows of `xs` are inputs.
    pub fn forward_batch(&self, xs: ArrayView2<f64>) -> Result<Array2<f64>> {
        if xs.ncols() != self.input_dim() {
            return Err(Error::Shape {
                context: "network batch input",
                expected: self.input_dim(),
                actual: xs.ncols(),
            });
        }
        let last = self.layers.len() - 1;
        let mut act = xs.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            act = act.dot(&layer.weights.t()) + &layer.bias;
            if k != last {
                act.mapv_inplace(relu);
            }
        }
        Ok(act)
    }

    /// Batched forward/backward pass.
    ///
    /// Returns the per-row losses, the per-row input gradients and, when
    /// `with_params` is set, the parameter gradients of the *summed* loss.
    pub(crate) fn backward_batch(
        &self,
        xs: ArrayView2<f64>,
        labels: &[usize],
        loss: Loss,
        with_params: bool,
    ) -> Result<BatchGradients> {
        if xs.ncols() != self.input_dim() {
            return Err(Error::Shape {
                context: "network batch input",
                expected: self.input_dim(),
                actual: xs.ncols(),
            });
        }
        if xs.nrows() != labels.len() {
            return Err(Error::Shape {
                context: "batch labels",
                expected: xs.nrows(),
                actual: labels.len(),
            });
        }
        for &l in labels {
            self.check_label(l)?;
        }
        let last = self.layers.len() - 1;

        // inputs[k] is the input of layer k; pre[k] its pre-activation.
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut act = xs.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let z = act.dot(&layer.weights.t()) + &layer.bias;
            inputs.push(act);
            if k != last {
                act = z.mapv(relu);
                pre.push(z);
            } else {
                act = z;
            }
        }

        let mut losses = Vec::with_capacity(labels.len());
        let mut delta = Array2::zeros(act.raw_dim());
        for (row, (logits, &label)) in act.outer_iter().zip(labels).enumerate() {
            let (value, g) = loss_and_logit_gradient(logits, label, loss);
            losses.push(value);
            delta.row_mut(row).assign(&g);
        }

        let mut params = Vec::new();
        for k in (0..=last).rev() {
            if with_params {
                let dw = delta.t().dot(&inputs[k]);
                let db = delta.sum_axis(Axis(0));
                params.push((dw, db));
            }
            delta = delta.dot(&self.layers[k].weights);
            if k > 0 {
                delta.zip_mut_with(&pre[k - 1], |d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
        }
        params.reverse();
        Ok(BatchGradients {
            losses,
            input_grads: delta,
            param_grads: params,
        })
    }
}

pub(crate) struct BatchGradients {
    pub losses: Vec<f64>,
    pub input_grads: Array2<f64>,
    /// `(dW, db)` per layer, in layer order; empty unless requested.
    pub param_grads: Vec<(Array2<f64>, Array1<f64>)>,
}

#[inline]
fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// Index of the largest entry, smallest index on ties.
pub fn argmax(values: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable `-log softmax(logits)[label]`.
pub fn cross_entropy_loss(logits: ArrayView1<f64>, label: usize) -> f64 {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let log_sum = logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    // Clamp the rounding residue so the loss is never negative.
    (max + log_sum - logits[label]).max(0.0)
}

/// `max_{j != label} z_j - z_label`; positive iff some other class wins.
pub fn margin_loss(logits: ArrayView1<f64>, label: usize) -> f64 {
    let (_, best_other) = best_other_class(logits, label);
    best_other - logits[label]
}

/// Value of `loss` for the given logits.
pub fn loss_value(logits: ArrayView1<f64>, label: usize, loss: Loss) -> f64 {
    match loss {
        Loss::CrossEntropy => cross_entropy_loss(logits, label),
        Loss::CwMargin => margin_loss(logits, label),
    }
}

/// Highest-scoring class other than `label` (smallest index on ties).
pub(crate) fn best_other_class(logits: ArrayView1<f64>, label: usize) -> (usize, f64) {
    let mut best: Option<(usize, f64)> = None;
    for (j, &v) in logits.iter().enumerate() {
        if j == label {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((j, v));
        }
    }
    best.unwrap_or((label, f64::NEG_INFINITY))
}

fn loss_and_logit_gradient(
    logits: ArrayView1<f64>,
    label: usize,
    loss: Loss,
) -> (f64, Array1<f64>) {
    match loss {
        Loss::CrossEntropy => {
            let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut probs = logits.mapv(|v| (v - max).exp());
            let total = probs.sum();
            probs /= total;
            let value = cross_entropy_loss(logits, label);
            probs[label] -= 1.0;
            (value, probs)
        }
        Loss::CwMargin => {
            let mut grad = Array1::zeros(logits.len());
            let (j, best) = best_other_class(logits, label);
            if j != label {
                grad[j] = 1.0;
                grad[label] = -1.0;
            }
            (best - logits[label], grad)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array};

    fn layer(w: Array2<f64>, b: Array1<f64>) -> AffineLayer {
        AffineLayer::new(w, b).unwrap()
    }

    /// Per-neuron scalar evaluation, written independently of `forward`.
    #[allow(clippy::needless_range_loop)]
    fn naive_forward(net: &Network, x: &[f64]) -> Vec<f64> {
        let mut act = x.to_vec();
        let n = net.layers().len();
        for (k, l) in net.layers().iter().enumerate() {
            let mut next = vec![0.0; l.n_out()];
            for i in 0..l.n_out() {
                let mut s = l.bias[i];
                for j in 0..l.n_in() {
                    s += l.weights[[i, j]] * act[j];
                }
                next[i] = if k + 1 < n && s < 0.0 { 0.0 } else { s };
            }
            act = next;
        }
        act
    }

    #[test]
    fn single_affine_layer() {
        let net = Network::new(vec![layer(array![[2.0]], array![3.0])]).unwrap();
        assert_eq!(net.forward(array![1.0].view()).unwrap(), array![5.0]);
    }

    #[test]
    fn relu_zeroes_negative_unit() {
        let net = Network::new(vec![
            layer(array![[1.0], [-1.0]], array![0.0, 0.0]),
            layer(array![[1.0, 1.0]], array![0.0]),
        ])
        .unwrap();
        assert_eq!(net.forward(array![-2.0].view()).unwrap(), array![2.0]);
    }

    #[test]
    fn forward_matches_naive_loop() {
        for seed in 0..20 {
            let net = Network::random(&[5, 7, 3], seed).unwrap();
            let x = Array::linspace(-1.0, 1.0, 5).mapv(|v: f64| v * (seed as f64 + 1.0).sin());
            let got = net.forward(x.view()).unwrap();
            let want = naive_forward(&net, x.as_slice().unwrap());
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let net = Network::random(&[3, 2], 0).unwrap();
        assert!(matches!(
            net.forward(array![1.0, 2.0].view()),
            Err(Error::Shape {
                expected: 3,
                actual: 2,
                ..
            })
        ));
    }

    #[test]
    fn network_validates_chain() {
        let a = layer(Array2::zeros((4, 3)), Array1::zeros(4));
        let b = layer(Array2::zeros((2, 5)), Array1::zeros(2));
        assert!(matches!(
            Network::new(vec![a, b]),
            Err(Error::InvalidNetwork(_))
        ));
        assert!(Network::new(vec![]).is_err());
        assert!(AffineLayer::new(array![[f64::NAN]], array![0.0]).is_err());
        assert!(AffineLayer::new(array![[1.0]], array![0.0, 1.0]).is_err());
    }

    #[test]
    fn cross_entropy_values() {
        assert!((cross_entropy_loss(array![0.0, 0.0].view(), 0) - 2f64.ln()).abs() < 1e-12);
        let big = cross_entropy_loss(array![1000.0, 0.0].view(), 0);
        assert!(big.is_finite() && big.abs() < 1e-12);
        // ln(e + e^2 + e^3) - 3 = 0.40760596444438030448... (30-digit reference).
        let v = cross_entropy_loss(array![1.0, 2.0, 3.0].view(), 2);
        assert!((v - 0.407_605_964_444_380_1).abs() < 1e-12, "{v}");
    }

    #[test]
    fn identity_net_gradient_is_softmax_minus_onehot() {
        let net = Network::new(vec![layer(Array2::eye(2), Array1::zeros(2))]).unwrap();
        let g = net.input_gradient(array![0.0, 0.0].view(), 0).unwrap();
        assert!((g[0] + 0.5).abs() < 1e-15 && (g[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn dead_unit_contributes_nothing() {
        // Hidden unit 1 has a large negative bias, so it is inactive near x.
        let net = Network::new(vec![
            layer(array![[1.0, 0.0], [0.0, 5.0]], array![0.5, -100.0]),
            layer(array![[1.0, 3.0], [-1.0, 2.0]], array![0.0, 0.0]),
        ])
        .unwrap();
        let g = net.input_gradient(array![0.3, 0.7].view(), 0).unwrap();
        assert_eq!(g[1], 0.0);
        assert!(g[0] != 0.0);
    }

    #[test]
    fn relu_derivative_at_zero_is_zero() {
        let net = Network::new(vec![
            layer(array![[1.0]], array![0.0]),
            layer(array![[1.0], [-1.0]], array![0.0, 0.0]),
        ])
        .unwrap();
        let g = net.input_gradient(array![0.0].view(), 0).unwrap();
        assert_eq!(g[0], 0.0);
    }

    #[test]
    fn margin_loss_gradient() {
        let net = Network::new(vec![layer(Array2::eye(3), Array1::zeros(3))]).unwrap();
        let (v, g) = net
            .loss_and_input_gradient(array![0.1, 0.5, 0.2].view(), 0, Loss::CwMargin)
            .unwrap();
        assert!((v - 0.4).abs() < 1e-15);
        assert_eq!(g, array![-1.0, 1.0, 0.0]);
    }

    #[test]
    fn batch_matches_single() {
        let net = Network::random(&[4, 6, 5, 3], 9).unwrap();
        let xs = Array2::from_shape_fn((3, 4), |(i, j)| ((i * 4 + j) as f64 * 0.37).sin());
        let labels = [0, 2, 1];
        let batch = net
            .backward_batch(xs.view(), &labels, Loss::CrossEntropy, true)
            .unwrap();
        for (row, &label) in labels.iter().enumerate() {
            let (v, g) = net
                .loss_and_input_gradient(xs.row(row), label, Loss::CrossEntropy)
                .unwrap();
            assert!((v - batch.losses[row]).abs() < 1e-12);
            for (a, b) in g.iter().zip(batch.input_grads.row(row)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let logits = net.forward_batch(xs.view()).unwrap();
        for row in 0..3 {
            let single = net.forward(xs.row(row)).unwrap();
            for (a, b) in single.iter().zip(logits.row(row)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert_eq!(batch.param_grads.len(), 3);
    }

    #[test]
    fn argmax_prefers_smallest_index() {
        assert_eq!(argmax(array![1.0, 3.0, 3.0].view()), 1);
        assert_eq!(best_other_class(array![5.0, 2.0, 2.0].view(), 0), (1, 2.0));
    }
}
