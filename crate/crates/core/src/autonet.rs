//! Minimal differentiable models `f = h_phi ∘ g_omega` with manual
//! backpropagation and minibatch SGD.
//!
//! The embedding map `g_omega` is a stack of dense layers (tanh on hidden
//! layers, linear into the embedding by default); the hypothesis `h_phi` is a
//! single dense layer followed by a softmax. Parameters are immutable value
//! snapshots: training returns a new value, so clients can train concurrently
//! without shared state.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the post-activation value.
    fn derivative_from_output(self, h: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Tanh => 1.0 - h * h,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Result<Self> {
        if weights.ncols() != bias.len() {
            return Err(Error::DimensionMismatch(format!(
                "layer weights are {}x{} but bias has length {}",
                weights.nrows(),
                weights.ncols(),
                bias.len()
            )));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    fn forward(&self, input: &Array2<f64>) -> Array2<f64> {
        let mut out = input.dot(&self.weights);
        for mut row in out.rows_mut() {
            for (x, b) in row.iter_mut().zip(self.bias.iter()) {
                *x = self.activation.apply(*x + b);
            }
        }
        out
    }
}

/// Shapes of the default architecture family.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelLayout {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub num_classes: usize,
}

/// Concatenated parameters `theta = [omega, phi]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub omega: Vec<DenseLayer>,
    pub phi: DenseLayer,
}

impl ModelParams {
    /// Seeded Gaussian init: weights `N(0, 1/fan_in)`, biases zero. Hidden
    /// layers use tanh; the embedding layer and the hypothesis are linear.
    pub fn init(layout: &ModelLayout, seed: u64) -> Result<Self> {
        if layout.input_dim == 0 || layout.embed_dim == 0 || layout.num_classes == 0 {
            return Err(Error::InvalidArgument(
                "model layout dimensions must be positive".into(),
            ));
        }
        use rand::SeedableRng;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut omega = Vec::new();
        let mut fan_in = layout.input_dim;
        for &h in &layout.hidden_dims {
            omega.push(random_layer(&mut rng, fan_in, h, Activation::Tanh));
            fan_in = h;
        }
        omega.push(random_layer(
            &mut rng,
            fan_in,
            layout.embed_dim,
            Activation::Linear,
        ));
        let phi = random_layer(
            &mut rng,
            layout.embed_dim,
            layout.num_classes,
            Activation::Linear,
        );
        Ok(Self { omega, phi })
    }

    pub fn input_dim(&self) -> usize {
        self.omega[0].weights.nrows()
    }

    pub fn embed_dim(&self) -> usize {
        self.omega.last().expect("nonempty omega").weights.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.phi.weights.ncols()
    }

    pub fn num_params(&self) -> usize {
        self.iter_arrays().map(|(_, len)| len).sum()
    }

    fn iter_arrays(&self) -> impl Iterator<Item = (String, usize)> + '_ {
        let omega = self.omega.iter().enumerate().flat_map(|(i, l)| {
            [
                (format!("omega.{i}.weight"), l.weights.len()),
                (format!("omega.{i}.bias"), l.bias.len()),
            ]
        });
        omega.chain([
            ("phi.weight".to_string(), self.phi.weights.len()),
            ("phi.bias".to_string(), self.phi.bias.len()),
        ])
    }

    /// Flat view in a stable order: omega layers (weights row-major, then
    /// bias) followed by phi.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.omega {
            out.extend(layer.weights.iter());
            out.extend(layer.bias.iter());
        }
        out.extend(self.phi.weights.iter());
        out.extend(self.phi.bias.iter());
        out
    }

    /// Hypothesis parameters only, same ordering convention.
    pub fn flatten_phi(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.phi.weights.len() + self.phi.bias.len());
        out.extend(self.phi.weights.iter());
        out.extend(self.phi.bias.iter());
        out
    }

    /// Writes a flat vector (in [`flatten`](Self::flatten) order) back into
    /// the structured parameters.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::DimensionMismatch(format!(
                "flat vector has {} entries, model has {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for layer in &mut self.omega {
            offset = assign_array2(&mut layer.weights, flat, offset);
            offset = assign_array1(&mut layer.bias, flat, offset);
        }
        offset = assign_array2(&mut self.phi.weights, flat, offset);
        assign_array1(&mut self.phi.bias, flat, offset);
        Ok(())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.omega.len() == other.omega.len()
            && self
                .omega
                .iter()
                .zip(&other.omega)
                .all(|(a, b)| a.weights.dim() == b.weights.dim())
            && self.phi.weights.dim() == other.phi.weights.dim()
    }

    /// Flat named-tensor dump for JSON diagnostics.
    pub fn to_named_tensors(&self) -> BTreeMap<String, NamedTensor> {
        let mut map = BTreeMap::new();
        for (i, layer) in self.omega.iter().enumerate() {
            map.insert(
                format!("omega.{i}.weight"),
                NamedTensor::from_array2(&layer.weights),
            );
            map.insert(
                format!("omega.{i}.bias"),
                NamedTensor::from_array1(&layer.bias),
            );
        }
        map.insert(
            "phi.weight".to_string(),
            NamedTensor::from_array2(&self.phi.weights),
        );
        map.insert(
            "phi.bias".to_string(),
            NamedTensor::from_array1(&self.phi.bias),
        );
        map
    }
}

fn random_layer<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize, act: Activation) -> DenseLayer {
    let scale = 1.0 / (fan_in as f64).sqrt();
    let weights = Array2::from_shape_fn((fan_in, fan_out), |_| {
        let z: f64 = rng.sample(StandardNormal);
        z * scale
    });
    DenseLayer {
        weights,
        bias: Array1::zeros(fan_out),
        activation: act,
    }
}

fn assign_array2(arr: &mut Array2<f64>, flat: &[f64], offset: usize) -> usize {
    let len = arr.len();
    for (dst, src) in arr.iter_mut().zip(&flat[offset..offset + len]) {
        *dst = *src;
    }
    offset + len
}

fn assign_array1(arr: &mut Array1<f64>, flat: &[f64], offset: usize) -> usize {
    let len = arr.len();
    for (dst, src) in arr.iter_mut().zip(&flat[offset..offset + len]) {
        *dst = *src;
    }
    offset + len
}

/// One flat tensor of a named-parameter dump.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct NamedTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    fn from_array2(a: &Array2<f64>) -> Self {
        Self {
            shape: vec![a.nrows(), a.ncols()],
            data: a.iter().cloned().collect(),
        }
    }

    fn from_array1(a: &Array1<f64>) -> Self {
        Self {
            shape: vec![a.len()],
            data: a.to_vec(),
        }
    }
}

/// Rebuilds structured parameters from a named-tensor dump.
pub fn params_from_named_tensors(map: &BTreeMap<String, NamedTensor>) -> Result<ModelParams> {
    let mut omega = Vec::new();
    for i in 0.. {
        let (Some(w), Some(b)) = (
            map.get(&format!("omega.{i}.weight")),
            map.get(&format!("omega.{i}.bias")),
        ) else {
            break;
        };
        let weights = Array2::from_shape_vec((w.shape[0], w.shape[1]), w.data.clone())
            .map_err(|e| Error::Serialization(e.to_string()))?;
        let is_last = !map.contains_key(&format!("omega.{}.weight", i + 1));
        omega.push(DenseLayer::new(
            weights,
            Array1::from_vec(b.data.clone()),
            if is_last {
                Activation::Linear
            } else {
                Activation::Tanh
            },
        )?);
    }
    if omega.is_empty() {
        return Err(Error::Serialization("dump has no omega layers".into()));
    }
    let w = map
        .get("phi.weight")
        .ok_or_else(|| Error::Serialization("dump has no phi.weight".into()))?;
    let b = map
        .get("phi.bias")
        .ok_or_else(|| Error::Serialization("dump has no phi.bias".into()))?;
    let weights = Array2::from_shape_vec((w.shape[0], w.shape[1]), w.data.clone())
        .map_err(|e| Error::Serialization(e.to_string()))?;
    let phi = DenseLayer::new(weights, Array1::from_vec(b.data.clone()), Activation::Linear)?;
    Ok(ModelParams { omega, phi })
}

/// Optimiser knobs for local training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "weight decay must be nonnegative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Embeds inputs: `Z = g_omega(X)`.
pub fn forward_embed(params: &ModelParams, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
    if x.ncols() != params.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "input has {} features, model expects {}",
            x.ncols(),
            params.input_dim()
        )));
    }
    let mut h = x.to_owned();
    for layer in &params.omega {
        h = layer.forward(&h);
    }
    Ok(h)
}

/// Class probabilities: `softmax(Z · W_phi + b_phi)`; rows sum to one.
pub fn forward_head(params: &ModelParams, z: &ArrayView2<f64>) -> Result<Array2<f64>> {
    if z.ncols() != params.embed_dim() {
        return Err(Error::DimensionMismatch(format!(
            "embedding has {} dims, head expects {}",
            z.ncols(),
            params.embed_dim()
        )));
    }
    let mut logits = z.dot(&params.phi.weights);
    for mut row in logits.rows_mut() {
        for (x, b) in row.iter_mut().zip(params.phi.bias.iter()) {
            *x += b;
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
    Ok(logits)
}

/// Mean cross-entropy plus an L2 decay term `0.5 · wd · ||theta||^2`, with
/// the gradient over both phi and omega returned in parameter layout.
pub fn loss_and_grad(
    params: &ModelParams,
    x: &ArrayView2<f64>,
    y: &[usize],
    weight_decay: f64,
) -> Result<(f64, ModelParams)> {
    let batch = x.nrows();
    if batch == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if y.len() != batch {
        return Err(Error::DimensionMismatch(format!(
            "{batch} inputs but {} labels",
            y.len()
        )));
    }
    let classes = params.num_classes();
    if let Some(&bad) = y.iter().find(|&&label| label >= classes) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }

    // Forward pass keeping every post-activation for the backward sweep.
    let mut activations: Vec<Array2<f64>> = Vec::with_capacity(params.omega.len() + 1);
    activations.push(x.to_owned());
    for layer in &params.omega {
        let next = layer.forward(activations.last().expect("nonempty"));
        activations.push(next);
    }
    let z = activations.last().expect("nonempty");
    let probs = forward_head(params, &z.view())?;

    let inv_b = 1.0 / batch as f64;
    let mut ce = 0.0;
    for (i, &label) in y.iter().enumerate() {
        ce -= probs[[i, label]].max(f64::MIN_POSITIVE).ln();
    }
    ce *= inv_b;

    let mut grad = params.clone();

    // dL/dlogits = (p - onehot) / batch
    let mut dlogits = probs;
    for (i, &label) in y.iter().enumerate() {
        dlogits[[i, label]] -= 1.0;
    }
    dlogits *= inv_b;

    grad.phi.weights = z.t().dot(&dlogits) + weight_decay * &params.phi.weights;
    grad.phi.bias = dlogits.sum_axis(Axis(0)) + weight_decay * &params.phi.bias;

    let mut dh = dlogits.dot(&params.phi.weights.t());
    for (idx, layer) in params.omega.iter().enumerate().rev() {
        let h_out = &activations[idx + 1];
        let mut dpre = dh;
        for (d, &h) in dpre.iter_mut().zip(h_out.iter()) {
            *d *= layer.activation.derivative_from_output(h);
        }
        let h_in = &activations[idx];
        grad.omega[idx].weights = h_in.t().dot(&dpre) + weight_decay * &layer.weights;
        grad.omega[idx].bias = dpre.sum_axis(Axis(0)) + weight_decay * &layer.bias;
        dh = dpre.dot(&layer.weights.t());
    }

    let decay: f64 = if weight_decay > 0.0 {
        0.5 * weight_decay * params.flatten().iter().map(|p| p * p).sum::<f64>()
    } else {
        0.0
    };
    Ok((ce + decay, grad))
}

/// Momentum SGD update on flat parameter vectors:
/// `v <- momentum * v + g`, `theta <- theta - lr * v`.
pub(crate) fn sgd_step(flat: &mut [f64], velocity: &mut [f64], grad: &[f64], lr: f64, momentum: f64) {
    for ((p, v), g) in flat.iter_mut().zip(velocity.iter_mut()).zip(grad.iter()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
}

/// `local_epochs` epochs of shuffled minibatch SGD with momentum and weight
/// decay. Deterministic given the seed; the momentum buffer is fresh per call
/// and persists across the epochs of that call.
pub fn client_update(
    params: &ModelParams,
    x: &ArrayView2<f64>,
    y: &[usize],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<ModelParams> {
    cfg.validate()?;
    if x.nrows() == 0 {
        return Err(Error::InvalidArgument("empty training split".into()));
    }
    let mut model = params.clone();
    if cfg.local_epochs == 0 {
        return Ok(model);
    }

    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let n = x.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut flat = model.flatten();
    let mut velocity = vec![0.0; flat.len()];

    for _ in 0..cfg.local_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let bx = x.select(Axis(0), chunk);
            let by: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            let (_, grad) = loss_and_grad(&model, &bx.view(), &by, cfg.weight_decay)?;
            sgd_step(&mut flat, &mut velocity, &grad.flatten(), cfg.lr, cfg.momentum);
            model.assign_flat(&flat)?;
        }
    }
    Ok(model)
}

/// Fraction of argmax-correct predictions; ties resolve to the lowest class.
pub fn evaluate(params: &ModelParams, x: &ArrayView2<f64>, y: &[usize]) -> Result<f64> {
    if x.nrows() == 0 {
        return Err(Error::InvalidArgument("empty evaluation split".into()));
    }
    if y.len() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} inputs but {} labels",
            x.nrows(),
            y.len()
        )));
    }
    let z = forward_embed(params, x)?;
    let probs = forward_head(params, &z.view())?;
    let mut correct = 0usize;
    for (row, &label) in probs.rows().into_iter().zip(y.iter()) {
        let mut best = 0usize;
        let mut best_p = row[0];
        for (j, &p) in row.iter().enumerate().skip(1) {
            if p > best_p {
                best_p = p;
                best = j;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / y.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn zero_model(input: usize, hidden: usize, embed: usize, classes: usize) -> ModelParams {
        ModelParams {
            omega: vec![
                DenseLayer::new(
                    Array2::zeros((input, hidden)),
                    Array1::zeros(hidden),
                    Activation::Tanh,
                )
                .unwrap(),
                DenseLayer::new(
                    Array2::zeros((hidden, embed)),
                    Array1::zeros(embed),
                    Activation::Linear,
                )
                .unwrap(),
            ],
            phi: DenseLayer::new(
                Array2::zeros((embed, classes)),
                Array1::zeros(classes),
                Activation::Linear,
            )
            .unwrap(),
        }
    }

    fn identity_embed(dim: usize, classes: usize) -> ModelParams {
        ModelParams {
            omega: vec![DenseLayer::new(
                Array2::eye(dim),
                Array1::zeros(dim),
                Activation::Linear,
            )
            .unwrap()],
            phi: DenseLayer::new(
                Array2::zeros((dim, classes)),
                Array1::zeros(classes),
                Activation::Linear,
            )
            .unwrap(),
        }
    }

    #[test]
    fn zero_params_embed_to_zero() {
        let m = zero_model(3, 4, 2, 2);
        let x = array![[1.0, -2.0, 0.5], [0.0, 0.0, 0.0]];
        let z = forward_embed(&m, &x.view()).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let m = identity_embed(3, 2);
        let x = array![[1.0, -2.0, 0.5]];
        let z = forward_embed(&m, &x.view()).unwrap();
        assert_eq!(z, x);
    }

    #[test]
    fn hand_computed_tanh_composition() {
        // One sample through dense(2->2, tanh) then dense(2->1, linear).
        let m = ModelParams {
            omega: vec![
                DenseLayer::new(
                    array![[0.5, -0.25], [0.1, 0.3]],
                    array![0.05, -0.1],
                    Activation::Tanh,
                )
                .unwrap(),
                DenseLayer::new(array![[2.0], [-1.0]], array![0.5], Activation::Linear).unwrap(),
            ],
            phi: DenseLayer::new(Array2::zeros((1, 2)), Array1::zeros(2), Activation::Linear)
                .unwrap(),
        };
        let x = array![[1.0, 2.0]];
        let h1 = (0.5 + 0.2 + 0.05f64).tanh();
        let h2 = (-0.25 + 0.6 - 0.1f64).tanh();
        let expected = 2.0 * h1 - h2 + 0.5;
        let z = forward_embed(&m, &x.view()).unwrap();
        assert!((z[[0, 0]] - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_head_gives_uniform_probabilities() {
        let m = zero_model(2, 3, 2, 4);
        let z = array![[0.3, -0.7]];
        let p = forward_head(&m, &z.view()).unwrap();
        for &v in p.iter() {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_saturates_on_large_logit() {
        let mut m = zero_model(2, 3, 1, 3);
        m.phi.weights = array![[50.0, 0.0, 0.0]];
        let z = array![[1.0]];
        let p = forward_head(&m, &z.view()).unwrap();
        assert!(p[[0, 0]] > 0.999_999);
        let row: f64 = p.row(0).sum();
        assert!((row - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_two_class_example() {
        let mut m = zero_model(1, 1, 1, 2);
        m.phi.weights = array![[1.0, 0.0]];
        let z = array![[1.0]];
        let p = forward_head(&m, &z.view()).unwrap();
        assert!((p[[0, 0]] - 0.731).abs() < 1e-3);
        assert!((p[[0, 1]] - 0.269).abs() < 1e-3);
    }

    #[test]
    fn uniform_prediction_loss_is_ln_k() {
        let m = zero_model(2, 3, 2, 4);
        let x = array![[0.1, 0.2], [0.3, -0.1]];
        let (loss, _) = loss_and_grad(&m, &x.view(), &[0, 3], 0.0).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn near_perfect_prediction_loss_vanishes() {
        let mut m = identity_embed(2, 2);
        m.phi.weights = array![[100.0, -100.0], [-100.0, 100.0]];
        let x = array![[1.0, 0.0], [0.0, 1.0]];
        let (loss, _) = loss_and_grad(&m, &x.view(), &[0, 1], 0.0).unwrap();
        assert!(loss < 1e-12);
    }

    #[test]
    fn loss_rejects_empty_batch_and_bad_labels() {
        let m = zero_model(2, 3, 2, 2);
        let empty = Array2::zeros((0, 2));
        assert!(loss_and_grad(&m, &empty.view(), &[], 0.0).is_err());
        let x = array![[0.0, 0.0]];
        assert!(loss_and_grad(&m, &x.view(), &[2], 0.0).is_err());
    }

    #[test]
    fn client_update_zero_epochs_is_identity() {
        let layout = ModelLayout {
            input_dim: 2,
            hidden_dims: vec![4],
            embed_dim: 3,
            num_classes: 2,
        };
        let m = ModelParams::init(&layout, 1).unwrap();
        let x = array![[0.5, -0.5], [1.0, 0.3]];
        let cfg = TrainConfig {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-6,
            local_epochs: 0,
            batch_size: 2,
        };
        let out = client_update(&m, &x.view(), &[0, 1], &cfg, 7).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn single_step_without_momentum_matches_rule() {
        let layout = ModelLayout {
            input_dim: 2,
            hidden_dims: vec![3],
            embed_dim: 2,
            num_classes: 2,
        };
        let m = ModelParams::init(&layout, 3).unwrap();
        let x = array![[0.4, -1.2]];
        let y = [1usize];
        let cfg = TrainConfig {
            lr: 0.05,
            momentum: 0.0,
            weight_decay: 0.0,
            local_epochs: 1,
            batch_size: 1,
        };
        let (_, grad) = loss_and_grad(&m, &x.view(), &y, 0.0).unwrap();
        let updated = client_update(&m, &x.view(), &y, &cfg, 11).unwrap();
        let expect: Vec<f64> = m
            .flatten()
            .iter()
            .zip(grad.flatten().iter())
            .map(|(p, g)| p - 0.05 * g)
            .collect();
        for (a, b) in updated.flatten().iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn momentum_recursion_two_steps() {
        // v1 = g1, p1 = p0 - k g1; v2 = m v1 + g2, p2 = p1 - k v2
        let mut flat = vec![1.0, -2.0];
        let mut vel = vec![0.0, 0.0];
        sgd_step(&mut flat, &mut vel, &[0.5, 1.0], 0.1, 0.9);
        assert!((flat[0] - (1.0 - 0.05)).abs() < 1e-15);
        assert!((flat[1] - (-2.0 - 0.1)).abs() < 1e-15);
        sgd_step(&mut flat, &mut vel, &[0.25, -1.0], 0.1, 0.9);
        // v2 = 0.9*0.5 + 0.25 = 0.7 ; 0.9*1.0 - 1.0 = -0.1
        assert!((flat[0] - (0.95 - 0.07)).abs() < 1e-15);
        assert!((flat[1] - (-2.1 + 0.01)).abs() < 1e-15);
    }

    #[test]
    fn pure_decay_step_shrinks_weights_exactly() {
        let layout = ModelLayout {
            input_dim: 2,
            hidden_dims: vec![3],
            embed_dim: 2,
            num_classes: 2,
        };
        let m = ModelParams::init(&layout, 5).unwrap();
        let (lr, wd) = (0.05, 1e-3);
        let mut flat = m.flatten();
        let before = flat.clone();
        let decay_grad: Vec<f64> = before.iter().map(|p| wd * p).collect();
        let mut vel = vec![0.0; flat.len()];
        sgd_step(&mut flat, &mut vel, &decay_grad, lr, 0.9);
        for (after, b) in flat.iter().zip(before.iter()) {
            assert!((after - b * (1.0 - lr * wd)).abs() <= 1e-15 * b.abs().max(1.0));
        }
    }

    #[test]
    fn client_update_is_deterministic() {
        let layout = ModelLayout {
            input_dim: 2,
            hidden_dims: vec![4],
            embed_dim: 3,
            num_classes: 2,
        };
        let m = ModelParams::init(&layout, 1).unwrap();
        let x = Array2::from_shape_fn((16, 2), |(i, j)| ((i * 2 + j) as f64 * 0.37).sin());
        let y: Vec<usize> = (0..16).map(|i| i % 2).collect();
        let cfg = TrainConfig {
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-6,
            local_epochs: 3,
            batch_size: 4,
        };
        let a = client_update(&m, &x.view(), &y, &cfg, 21).unwrap();
        let b = client_update(&m, &x.view(), &y, &cfg, 21).unwrap();
        assert_eq!(a.flatten(), b.flatten());
        let c = client_update(&m, &x.view(), &y, &cfg, 22).unwrap();
        assert_ne!(a.flatten(), c.flatten());
    }

    #[test]
    fn evaluate_oracle_and_constant_predictor() {
        // Oracle head: logits read the true class off the input.
        let mut oracle = identity_embed(2, 2);
        oracle.phi.weights = array![[10.0, -10.0], [-10.0, 10.0]];
        let x = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
        let y = [0usize, 1, 0, 1];
        assert_eq!(evaluate(&oracle, &x.view(), &y).unwrap(), 1.0);

        // Constant predictor on balanced labels.
        let constant = zero_model(2, 2, 2, 2);
        assert_eq!(evaluate(&constant, &x.view(), &y).unwrap(), 0.5);

        let empty = Array2::zeros((0, 2));
        assert!(evaluate(&constant, &empty.view(), &[]).is_err());
    }

    #[test]
    fn named_tensor_roundtrip() {
        let layout = ModelLayout {
            input_dim: 3,
            hidden_dims: vec![4],
            embed_dim: 2,
            num_classes: 3,
        };
        let m = ModelParams::init(&layout, 17).unwrap();
        let dump = m.to_named_tensors();
        let back = params_from_named_tensors(&dump).unwrap();
        assert_eq!(m, back);
    }
}
