//! Encoder-decoder network mapping source-robot features into the target
//! robot's feature space.
//!
//! Fully connected layers with ELU on every hidden layer (the latent code
//! included) and a linear output layer. Trained with Adam on mini-batch
//! mean squared error; the reported loss is its square root.

use nalgebra::{DMatrix, RowDVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::correspond::CorrespondenceSet;
use crate::error::{Error, Result};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPSILON: f64 = 1e-8;
const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdnConfig {
    /// Encoder hidden widths; the decoder mirrors them.
    pub encoder_units: Vec<usize>,
    pub latent_dim: usize,
    pub elu_alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Full batch when larger than the number of pairs.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for EdnConfig {
    fn default() -> Self {
        EdnConfig {
            encoder_units: vec![1000, 500, 250],
            latent_dim: 125,
            elu_alpha: 1.0,
            learning_rate: 1e-4,
            epochs: 1000,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl EdnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.encoder_units.contains(&0) {
            return Err(Error::InvalidConfig("layer widths must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if !(self.elu_alpha > 0.0) {
            return Err(Error::InvalidConfig("ELU alpha must be positive".into()));
        }
        Ok(())
    }

    /// `[input, encoder.., latent, decoder.., output]`.
    pub fn widths(&self, input: usize, output: usize) -> Vec<usize> {
        let mut w = vec![input];
        w.extend(&self.encoder_units);
        w.push(self.latent_dim);
        w.extend(self.encoder_units.iter().rev());
        w.push(output);
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `fan_in x fan_out`; a batch maps as `X W + b`.
    pub weights: DMatrix<f64>,
    pub bias: RowDVector<f64>,
}

impl DenseLayer {
    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x * &self.weights;
        for mut row in z.row_iter_mut() {
            row += &self.bias;
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdnModel {
    pub layers: Vec<DenseLayer>,
    pub config: EdnConfig,
    /// RMSE over all training pairs after the last epoch.
    pub training_loss: f64,
}

pub fn elu(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        alpha * x.exp_m1()
    }
}

fn elu_grad(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        alpha * x.exp()
    }
}

type Gradients = Vec<(DMatrix<f64>, RowDVector<f64>)>;

impl EdnModel {
    /// Glorot-uniform weights and zero biases.
    pub fn init(input: usize, output: usize, config: &EdnConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        if input == 0 || output == 0 {
            return Err(Error::InvalidConfig("input and output widths must be at least 1".into()));
        }
        let widths = config.widths(input, output);
        let layers = widths
            .windows(2)
            .map(|w| {
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                DenseLayer {
                    weights: DMatrix::from_fn(w[0], w[1], |_, _| rng.random_range(-limit..=limit)),
                    bias: RowDVector::zeros(w[1]),
                }
            })
            .collect();
        Ok(EdnModel {
            layers,
            config: config.clone(),
            training_loss: f64::NAN,
        })
    }

    /// Builds a model from explicit layers; widths must chain.
    pub fn from_layers(layers: Vec<DenseLayer>, config: EdnConfig) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("a network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].weights.ncols() != pair[1].weights.nrows() {
                return Err(Error::dims(format!("layer {} input", i + 1), pair[0].weights.ncols(), pair[1].weights.nrows()));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weights.ncols() {
                return Err(Error::dims(format!("layer {i} bias"), l.weights.ncols(), l.bias.len()));
            }
        }
        Ok(EdnModel {
            layers,
            config,
            training_loss: f64::NAN,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").weights.ncols()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Layer inputs and pre-activations for backpropagation, plus the output.
    fn forward_cached(&self, x: &DMatrix<f64>) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>, DMatrix<f64>) {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&a);
            let next = if l < last {
                z.map(|v| elu(v, self.config.elu_alpha))
            } else {
                z.clone()
            };
            inputs.push(std::mem::replace(&mut a, next));
            pre.push(z);
        }
        (inputs, pre, a)
    }

    /// Maps each row of `x`.
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::dims("EDN input", self.input_dim(), x.ncols()));
        }
        let last = self.layers.len() - 1;
        let mut a = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            a = layer.apply(&a);
            if l < last {
                a.apply(|v| *v = elu(*v, self.config.elu_alpha));
            }
        }
        Ok(a)
    }

    /// Gradients of batch MSE (mean over all output entries) and the loss.
    fn gradients(&self, x: &DMatrix<f64>, t: &DMatrix<f64>) -> (Gradients, f64) {
        let (inputs, pre, out) = self.forward_cached(x);
        let diff = out - t;
        let count = diff.len() as f64;
        let loss = diff.norm_squared() / count;
        let mut delta = diff * (2.0 / count);
        let last = self.layers.len() - 1;
        let mut grads: Gradients = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            if l < last {
                delta.zip_apply(&pre[l], |d, z| *d *= elu_grad(z, self.config.elu_alpha));
            }
            let gw = inputs[l].transpose() * &delta;
            let gb = RowDVector::from_iterator(delta.ncols(), delta.column_iter().map(|c| c.sum()));
            if l > 0 {
                delta = &delta * self.layers[l].weights.transpose();
            }
            grads.push((gw, gb));
        }
        grads.reverse();
        (grads, loss)
    }
}

/// Output of the network for one source feature vector.
pub fn edn_forward(model: &EdnModel, x: &[f64]) -> Result<Vec<f64>> {
    let row = DMatrix::from_row_slice(1, x.len(), x);
    Ok(model.forward_batch(&row)?.iter().copied().collect())
}

/// Mean squared error over all entries.
pub fn mse(model: &EdnModel, x: &DMatrix<f64>, t: &DMatrix<f64>) -> Result<f64> {
    let out = model.forward_batch(x)?;
    if out.shape() != t.shape() {
        return Err(Error::dims("EDN target rows", out.nrows(), t.nrows()));
    }
    Ok((out - t).norm_squared() / t.len() as f64)
}

pub fn rmse(model: &EdnModel, x: &DMatrix<f64>, t: &DMatrix<f64>) -> Result<f64> {
    Ok(mse(model, x, t)?.sqrt())
}

/// Expands correspondence pairs into aligned input and target matrices.
pub fn pair_matrices(pairs: &CorrespondenceSet) -> (DMatrix<f64>, DMatrix<f64>) {
    let x = pairs.source_features.select_rows(pairs.pairs.iter().map(|(i, _)| i));
    let t = pairs.target_features.select_rows(pairs.pairs.iter().map(|(_, j)| j));
    (x, t)
}

pub fn train_edn(pairs: &CorrespondenceSet, config: &EdnConfig) -> Result<EdnModel> {
    if pairs.is_empty() {
        return Err(Error::EmptyCorrespondence);
    }
    let (x, t) = pair_matrices(pairs);
    train_edn_on(&x, &t, config)
}

struct Adam {
    m: Gradients,
    v: Gradients,
    step: i32,
}

impl Adam {
    fn new(model: &EdnModel) -> Self {
        let zeros: Gradients = model
            .layers
            .iter()
            .map(|l| (DMatrix::zeros(l.weights.nrows(), l.weights.ncols()), RowDVector::zeros(l.bias.len())))
            .collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    fn update(&mut self, model: &mut EdnModel, grads: &Gradients, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step);
        let apply = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for k in 0..p.len() {
                m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g[k];
                v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g[k] * g[k];
                p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + ADAM_EPSILON);
            }
        };
        for (l, layer) in model.layers.iter_mut().enumerate() {
            let (gw, gb) = &grads[l];
            let (mw, mb) = &mut self.m[l];
            let (vw, vb) = &mut self.v[l];
            apply(layer.weights.as_mut_slice(), gw.as_slice(), mw.as_mut_slice(), vw.as_mut_slice());
            apply(layer.bias.as_mut_slice(), gb.as_slice(), mb.as_mut_slice(), vb.as_mut_slice());
        }
    }
}

/// Trains on row-aligned inputs `x` and targets `t`.
pub fn train_edn_on(x: &DMatrix<f64>, t: &DMatrix<f64>, config: &EdnConfig) -> Result<EdnModel> {
    config.validate()?;
    if x.nrows() == 0 {
        return Err(Error::EmptyCorrespondence);
    }
    if x.nrows() != t.nrows() {
        return Err(Error::dims("EDN training rows", x.nrows(), t.nrows()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = EdnModel::init(x.ncols(), t.ncols(), config, &mut rng)?;
    let mut adam = Adam::new(&model);
    let n = x.nrows();
    let batch = config.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let xb = x.select_rows(chunk);
            let tb = t.select_rows(chunk);
            let (grads, loss) = model.gradients(&xb, &tb);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            adam.update(&mut model, &grads, config.learning_rate);
        }
    }
    let final_mse = mse(&model, x, t)?;
    if !final_mse.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: config.epochs });
    }
    model.training_loss = final_mse.sqrt();
    log::debug!("edn: {} pairs, final rmse {:.6}", n, model.training_loss);
    Ok(model)
}

fn parameters_mut(model: &mut EdnModel) -> Vec<&mut f64> {
    model
        .layers
        .iter_mut()
        .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
        .collect()
}

/// Largest relative difference between backpropagated gradients of batch
/// MSE and central finite differences. Inputs are jittered slightly so no
/// pre-activation sits exactly on the ELU kink.
pub fn gradient_check(model: &EdnModel, x: &DMatrix<f64>, t: &DMatrix<f64>) -> Result<f64> {
    if x.ncols() != model.input_dim() {
        return Err(Error::dims("EDN input", model.input_dim(), x.ncols()));
    }
    if t.ncols() != model.output_dim() || t.nrows() != x.nrows() {
        return Err(Error::dims("EDN target", model.output_dim(), t.ncols()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x6a17);
    let x = x.map(|v| v + rng.random_range(-1e-3..1e-3));
    let (grads, _) = model.gradients(&x, t);
    let analytic: Vec<f64> = grads
        .iter()
        .flat_map(|(gw, gb)| gw.iter().chain(gb.iter()).copied().collect::<Vec<_>>())
        .collect();

    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (k, &a) in analytic.iter().enumerate() {
        let orig = *parameters_mut(&mut probe)[k];
        *parameters_mut(&mut probe)[k] = orig + FD_STEP;
        let plus = mse(&probe, &x, t)?;
        *parameters_mut(&mut probe)[k] = orig - FD_STEP;
        let minus = mse(&probe, &x, t)?;
        *parameters_mut(&mut probe)[k] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let scale = a.abs().max(numeric.abs());
        if scale > 1e-6 {
            worst = worst.max((a - numeric).abs() / scale);
        } else {
            worst = worst.max((a - numeric).abs() / 1e-6);
        }
    }
    Ok(worst)
}

/// Product of layer spectral norms, scaled by the ELU slope bound on
/// hidden layers: a Lipschitz constant of the network.
pub fn lipschitz_bound(model: &EdnModel) -> f64 {
    let slope = model.config.elu_alpha.max(1.0);
    let last = model.layers.len() - 1;
    model
        .layers
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            let s = layer.weights.clone().singular_values().max();
            if l < last {
                s * slope
            } else {
                s
            }
        })
        .product()
}
