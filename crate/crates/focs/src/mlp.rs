//! The functional scorer: a small MLP with a scalar sigmoid output, trained
//! by minibatch gradient descent on cross entropy, plus its hard-threshold
//! conversion used by compilation and MPE encoding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::FamilyView;

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
    #[error("cannot train on an empty dataset")]
    EmptyDataset,
    #[error("step conversion of a {layers}-layer network requires allow_multi")]
    MultiLayer { layers: usize },
    #[error("invalid configuration: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Step,
    Identity,
}

impl Activation {
    fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Relu => a.max(0.0),
            Activation::Sigmoid => sigmoid(a),
            // Boundary convention: pre-activation exactly 0 maps to 1.
            Activation::Step => {
                if a >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => a,
        }
    }

    /// Derivative with respect to the pre-activation, given both the
    /// pre-activation `z` and the activation value `y`.
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Step => 0.0,
            Activation::Identity => 1.0,
        }
    }
}

pub fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

/// Inverse sigmoid; maps interval endpoints from probability space back to
/// pre-activation space.
pub fn logit(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else {
        (p / (1.0 - p)).ln()
    }
}

/// One affine map plus activation. Weights are `[output][input]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub act: Activation,
}

impl Layer {
    pub fn out_dim(&self) -> usize {
        self.b.len()
    }

    pub fn in_dim(&self) -> usize {
        self.w.first().map_or(0, |row| row.len())
    }

    fn pre_activations(&self, input: &[f64]) -> Vec<f64> {
        self.w
            .iter()
            .zip(&self.b)
            .map(|(row, &b)| row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }

    fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.pre_activations(input)
            .into_iter()
            .map(|z| self.act.apply(z))
            .collect()
    }
}

/// Layered scorer with a scalar sigmoid output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub loss_curve: Vec<f64>,
}

impl Mlp {
    pub fn input_arity(&self) -> usize {
        self.layers[0].in_dim()
    }

    /// Forward pass on a binary parent assignment; output in (0, 1).
    pub fn eval(&self, u: &[u8]) -> f64 {
        assert_eq!(u.len(), self.input_arity());
        let mut act: Vec<f64> = u.iter().map(|&b| f64::from(b)).collect();
        for layer in &self.layers {
            act = layer.forward(&act);
        }
        act[0]
    }

    /// Replaces hidden activations by hard thresholds at pre-activation 0
    /// and strips the output sigmoid, leaving the raw affine output.
    /// Networks with more than one hidden layer must opt in explicitly.
    pub fn to_step(&self, allow_multi: bool) -> Result<StepNetwork, MlpError> {
        if self.layers.len() > 2 && !allow_multi {
            return Err(MlpError::MultiLayer {
                layers: self.layers.len(),
            });
        }
        let mut layers = self.layers.clone();
        let last = layers.len() - 1;
        for layer in &mut layers[..last] {
            layer.act = Activation::Step;
        }
        layers[last].act = Activation::Identity;
        Ok(StepNetwork { layers })
    }
}

/// Hard-threshold variant of [`Mlp`]: hidden units output 1 iff their
/// pre-activation is at least 0, and the output layer is the raw affine
/// pre-activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepNetwork {
    pub layers: Vec<Layer>,
}

impl StepNetwork {
    pub fn input_arity(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn num_hidden(&self) -> usize {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(Layer::out_dim)
            .sum()
    }

    /// True when the network has exactly one hidden layer, the shape the
    /// compiler and the MPE encoder require.
    pub fn is_single_hidden(&self) -> bool {
        self.layers.len() == 2
    }

    pub fn hidden_layer(&self) -> &Layer {
        assert!(self.is_single_hidden());
        &self.layers[0]
    }

    /// Output-layer weights and bias of a single-hidden-layer network.
    pub fn output_affine(&self) -> (&[f64], f64) {
        assert!(self.is_single_hidden());
        let out = &self.layers[1];
        (&out.w[0], out.b[0])
    }

    /// Raw affine output after thresholding every hidden layer.
    pub fn eval_raw(&self, u: &[u8]) -> f64 {
        assert_eq!(u.len(), self.input_arity());
        let mut act: Vec<f64> = u.iter().map(|&b| f64::from(b)).collect();
        for layer in &self.layers {
            act = layer.forward(&act);
        }
        act[0]
    }

    /// Hidden unit values of a single-hidden-layer network.
    pub fn hidden_bits(&self, u: &[u8]) -> Vec<u8> {
        let input: Vec<f64> = u.iter().map(|&b| f64::from(b)).collect();
        self.hidden_layer()
            .pre_activations(&input)
            .into_iter()
            .map(|z| u8::from(z >= 0.0))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub hidden_units: usize,
    pub hidden_activation: Activation,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_units: 16,
            hidden_activation: Activation::Relu,
            epochs: 200,
            learning_rate: 0.1,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// One training example: parent bits, child bit, multiplicity.
#[derive(Debug, Clone)]
pub struct Example {
    pub u: Vec<u8>,
    pub x: u8,
    pub w: u64,
}

pub fn examples(view: &FamilyView) -> Vec<Example> {
    (0..view.num_records())
        .map(|i| Example {
            u: view.parent_bits(i),
            x: view.child_bit(i),
            w: view.weight(i),
        })
        .collect()
}

/// Per-layer gradient, same shapes as the layers themselves.
#[derive(Debug, Clone)]
pub struct Gradient {
    pub layers: Vec<(Vec<Vec<f64>>, Vec<f64>)>,
}

impl Gradient {
    fn zeros(net: &Mlp) -> Self {
        Gradient {
            layers: net
                .layers
                .iter()
                .map(|l| {
                    (
                        vec![vec![0.0; l.in_dim()]; l.out_dim()],
                        vec![0.0; l.out_dim()],
                    )
                })
                .collect(),
        }
    }
}

/// Exact gradient of the weighted mean cross entropy over the batch.
pub fn gradient(net: &Mlp, batch: &[Example]) -> Gradient {
    assert!(!batch.is_empty());
    let total_weight: f64 = batch.iter().map(|e| e.w as f64).sum();
    let mut grad = Gradient::zeros(net);
    for ex in batch {
        let input: Vec<f64> = ex.u.iter().map(|&b| f64::from(b)).collect();
        // Forward, keeping pre-activations and activations per layer.
        let mut acts: Vec<Vec<f64>> = vec![input];
        let mut pres: Vec<Vec<f64>> = Vec::with_capacity(net.layers.len());
        for layer in &net.layers {
            let z = layer.pre_activations(acts.last().unwrap());
            let a: Vec<f64> = z.iter().map(|&zi| layer.act.apply(zi)).collect();
            pres.push(z);
            acts.push(a);
        }
        let scale = ex.w as f64 / total_weight;
        // Sigmoid output with cross entropy: dL/dz = y - x.
        let y = acts.last().unwrap()[0];
        let mut delta = vec![(y - f64::from(ex.x)) * scale];
        for li in (0..net.layers.len()).rev() {
            let layer = &net.layers[li];
            let (gw, gb) = &mut grad.layers[li];
            for (o, &d) in delta.iter().enumerate() {
                gb[o] += d;
                for (i, &a) in acts[li].iter().enumerate() {
                    gw[o][i] += d * a;
                }
            }
            if li > 0 {
                let prev_layer = &net.layers[li - 1];
                let mut next = vec![0.0; layer.in_dim()];
                for (o, &d) in delta.iter().enumerate() {
                    for (i, slot) in next.iter_mut().enumerate() {
                        *slot += d * layer.w[o][i];
                    }
                }
                for (i, slot) in next.iter_mut().enumerate() {
                    *slot *= prev_layer
                        .act
                        .derivative(pres[li - 1][i], acts[li][i]);
                }
                delta = next;
            }
        }
    }
    grad
}

/// Weighted mean cross entropy of the network on the examples.
pub fn cross_entropy(net: &Mlp, batch: &[Example]) -> f64 {
    let total: f64 = batch.iter().map(|e| e.w as f64).sum();
    batch
        .iter()
        .map(|ex| {
            let y = net.eval(&ex.u);
            let nll = if ex.x == 1 { -y.ln() } else { -(1.0 - y).ln() };
            ex.w as f64 * nll
        })
        .sum::<f64>()
        / total
}

fn init_layer(rng: &mut impl Rng, in_dim: usize, out_dim: usize, act: Activation) -> Layer {
    // Symmetric uniform init at +-sqrt(6 / (fan_in + fan_out)).
    let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
    let w = (0..out_dim)
        .map(|_| (0..in_dim).map(|_| rng.gen_range(-bound..bound)).collect())
        .collect();
    Layer {
        w,
        b: vec![0.0; out_dim],
        act,
    }
}

/// Trains a single-hidden-layer scorer with momentum SGD on cross entropy
/// and returns the parameter snapshot with the best training loss seen.
/// Deterministic given the seed.
pub fn train(view: &FamilyView, cfg: &TrainConfig) -> Result<Mlp, MlpError> {
    if view.num_records() == 0 {
        return Err(MlpError::EmptyDataset);
    }
    if cfg.hidden_units == 0 || cfg.epochs == 0 || cfg.batch_size == 0 || cfg.learning_rate <= 0.0
    {
        return Err(MlpError::BadConfig(
            "hidden units, epochs, batch size and learning rate must be positive".into(),
        ));
    }
    let data = examples(view);
    let n_in = view.num_parents();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = Mlp {
        layers: vec![
            init_layer(&mut rng, n_in, cfg.hidden_units, cfg.hidden_activation),
            init_layer(&mut rng, cfg.hidden_units, 1, Activation::Sigmoid),
        ],
        seed: cfg.seed,
        loss_curve: Vec::with_capacity(cfg.epochs),
    };
    let momentum = 0.9;
    let mut velocity: Vec<(Vec<Vec<f64>>, Vec<f64>)> = net
        .layers
        .iter()
        .map(|l| (vec![vec![0.0; l.in_dim()]; l.out_dim()], vec![0.0; l.out_dim()]))
        .collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut best_loss = f64::INFINITY;
    let mut best_layers = net.layers.clone();
    for epoch in 0..cfg.epochs {
        // Fisher-Yates with the session RNG keeps runs bit-reproducible.
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| data[i].clone()).collect();
            let grad = gradient(&net, &batch);
            for (li, layer) in net.layers.iter_mut().enumerate() {
                let (gw, gb) = &grad.layers[li];
                let (vw, vb) = &mut velocity[li];
                for o in 0..layer.out_dim() {
                    for i in 0..layer.w[o].len() {
                        vw[o][i] = momentum * vw[o][i] - cfg.learning_rate * gw[o][i];
                        layer.w[o][i] += vw[o][i];
                    }
                    vb[o] = momentum * vb[o] - cfg.learning_rate * gb[o];
                    layer.b[o] += vb[o];
                }
            }
        }
        let loss = cross_entropy(&net, &data);
        if !loss.is_finite() {
            return Err(MlpError::Diverged { epoch });
        }
        net.loss_curve.push(loss);
        if loss < best_loss {
            best_loss = loss;
            best_layers = net.layers.clone();
        }
    }
    let curve = std::mem::take(&mut net.loss_curve);
    Ok(Mlp {
        layers: best_layers,
        seed: cfg.seed,
        loss_curve: curve,
    })
}

/// The hand-written scorer from the worked two-parent example:
/// `sigma(6*u1*u2 - 4*u1 - 3*u2 + 2)` expressed as a 2-2-1 network whose
/// hidden layer is an identity passthrough plus an AND-like relu unit.
#[cfg(test)]
pub(crate) fn toy_scorer() -> Mlp {
    // sigma(2 - 4*u1 - 3*u2 + 6*relu(u1 + u2 - 1)): relu(u1+u2-1) = u1*u2
    // on binary inputs.
    Mlp {
        layers: vec![
            Layer {
                w: vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]],
                b: vec![0.0, 0.0, -1.0],
                act: Activation::Relu,
            },
            Layer {
                w: vec![vec![-4.0, -3.0, 6.0]],
                b: vec![2.0],
                act: Activation::Sigmoid,
            },
        ],
        seed: 0,
        loss_curve: vec![],
    }
}
