use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::Feature;
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative given the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Linear => 1.0,
        }
    }
}

/// Dense layer computing `activation(weights * input + bias)`; weights are
/// `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LayerRepr", into = "LayerRepr")]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

#[derive(Serialize, Deserialize)]
struct LayerRepr {
    inputs: usize,
    outputs: usize,
    activation: Activation,
    /// Column-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl From<Layer> for LayerRepr {
    fn from(l: Layer) -> Self {
        LayerRepr {
            inputs: l.weights.ncols(),
            outputs: l.weights.nrows(),
            activation: l.activation,
            weights: l.weights.as_slice().to_vec(),
            bias: l.bias.as_slice().to_vec(),
        }
    }
}

impl TryFrom<LayerRepr> for Layer {
    type Error = String;

    fn try_from(r: LayerRepr) -> std::result::Result<Self, String> {
        if r.weights.len() != r.inputs * r.outputs || r.bias.len() != r.outputs {
            return Err(format!("layer shape {}x{} does not match stored parameters", r.outputs, r.inputs));
        }
        Ok(Layer {
            weights: DMatrix::from_vec(r.outputs, r.inputs, r.weights),
            bias: DVector::from_vec(r.bias),
            activation: r.activation,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Hidden widths. All hidden layers use ReLU except the last, which
    /// uses tanh; the output layer is linear.
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    /// `None` trains full batch.
    pub batch_size: Option<usize>,
    /// Early-stopping window in epochs.
    pub patience: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: vec![512; 4],
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_epochs: 1000,
            batch_size: None,
            patience: 50,
            seed: 0,
        }
    }
}

/// Layer widths and activations for `inputs` features.
pub fn architecture(inputs: usize, hidden: &[usize]) -> (Vec<usize>, Vec<Activation>) {
    let mut sizes = vec![inputs];
    sizes.extend_from_slice(hidden);
    sizes.push(1);
    let mut acts: Vec<Activation> = (0..hidden.len())
        .map(|i| if i + 1 == hidden.len() { Activation::Tanh } else { Activation::Relu })
        .collect();
    acts.push(Activation::Linear);
    (sizes, acts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub features: Vec<Feature>,
    pub layers: Vec<Layer>,
    pub seed: u64,
    pub log: Vec<EpochLog>,
    pub stopped_early: bool,
}

/// Whether training stops after an epoch with validation loss `current`,
/// given the validation losses of all earlier epochs.
pub fn should_stop(history: &[f64], current: f64, window: usize) -> bool {
    if window == 0 || history.len() < window {
        return false;
    }
    let recent = &history[history.len() - window..];
    current > recent.iter().sum::<f64>() / window as f64
}

/// Column-major feature vectors to a `d x n` matrix.
pub fn to_matrix(x: &[Vec<f64>]) -> DMatrix<f64> {
    let n = x.first().map_or(0, |c| c.len());
    DMatrix::from_fn(x.len(), n, |j, i| x[j][i])
}

pub type Gradients = Vec<(DMatrix<f64>, DVector<f64>)>;

impl MlpModel {
    /// Seeded fan-in uniform initialization: limit `sqrt(6/fan_in)` ahead of
    /// ReLU, `sqrt(3/fan_in)` otherwise. Biases start at zero.
    pub fn init(features: Vec<Feature>, hidden: &[usize], seed: u64) -> Self {
        let (sizes, acts) = architecture(features.len(), hidden);
        let layers = (0..acts.len())
            .map(|l| {
                let (fan_in, out) = (sizes[l].max(1), sizes[l + 1]);
                let gain = if acts[l] == Activation::Relu { 6.0 } else { 3.0 };
                let limit = (gain / fan_in as f64).sqrt();
                let mut rng = rng_for(seed, "mlp-init", l as u64);
                Layer {
                    weights: DMatrix::from_fn(out, sizes[l], |_, _| rng.random_range(-limit..=limit)),
                    bias: DVector::zeros(out),
                    activation: acts[l],
                }
            })
            .collect();
        MlpModel {
            features,
            layers,
            seed,
            log: Vec::new(),
            stopped_early: false,
        }
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.layers.iter().map(|l| l.weights.ncols()).collect();
        s.extend(self.layers.last().map(|l| l.weights.nrows()));
        s
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    fn forward_cached(&self, x: &DMatrix<f64>) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let input = if l == 0 { x } else { &post[l - 1] };
            let mut z: DMatrix<f64> = &layer.weights * input;
            for mut col in z.column_iter_mut() {
                col += &layer.bias;
            }
            let a = z.map(|v| layer.activation.apply(v));
            pre.push(z);
            post.push(a);
        }
        (pre, post)
    }

    /// Outputs for a `d x n` input matrix.
    pub fn forward(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let mut a = x.clone();
        for layer in &self.layers {
            let mut z: DMatrix<f64> = &layer.weights * &a;
            for mut col in z.column_iter_mut() {
                col += &layer.bias;
            }
            a = z.map(|v| layer.activation.apply(v));
        }
        a.row(0).iter().copied().collect()
    }

    /// Mean squared error on `(x, y)` and its gradient per layer.
    pub fn loss_and_gradients(&self, x: &DMatrix<f64>, y: &[f64]) -> (f64, Gradients) {
        let m = y.len() as f64;
        let (pre, post) = self.forward_cached(x);
        let out = post.last().expect("network has layers");
        let mut delta = DMatrix::from_fn(1, y.len(), |_, i| out[(0, i)] - y[i]);
        let loss = delta.norm_squared() / m;
        delta *= 2.0 / m;
        let mut grads = vec![(DMatrix::zeros(0, 0), DVector::zeros(0)); self.layers.len()];
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let dz = delta.zip_map(&pre[l].zip_map(&post[l], |z, a| layer.activation.derivative(z, a)), |d, g| d * g);
            let input = if l == 0 { x } else { &post[l - 1] };
            let dw = &dz * input.transpose();
            let db = dz.column_sum();
            if l > 0 {
                delta = layer.weights.transpose() * &dz;
            }
            grads[l] = (dw, db);
        }
        (loss, grads)
    }

    /// Output for one input vector.
    pub fn forward_one(&self, x: &[f64]) -> f64 {
        let mut a = DVector::from_column_slice(x);
        for layer in &self.layers {
            let z = &layer.weights * &a + &layer.bias;
            a = z.map(|v| layer.activation.apply(v));
        }
        a[0]
    }

    /// Row-by-row evaluation, so results do not depend on batch size.
    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        let n = super::check_columns(self.features.len(), x)?;
        let mut row = vec![0.0; x.len()];
        Ok((0..n)
            .map(|i| {
                for (r, col) in row.iter_mut().zip(x) {
                    *r = col[i];
                }
                self.forward_one(&row)
            })
            .collect())
    }
}

struct Adam {
    m: Gradients,
    v: Gradients,
    t: i32,
}

impl Adam {
    fn new(model: &MlpModel) -> Self {
        let zeros: Gradients = model
            .layers
            .iter()
            .map(|l| (DMatrix::zeros(l.weights.nrows(), l.weights.ncols()), DVector::zeros(l.bias.len())))
            .collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, model: &mut MlpModel, grads: &Gradients, cfg: &MlpConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                p[i] -= cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.epsilon);
            }
        };
        for (l, layer) in model.layers.iter_mut().enumerate() {
            let (gw, gb) = &grads[l];
            let (mw, mb) = &mut self.m[l];
            let (vw, vb) = &mut self.v[l];
            update(layer.weights.as_mut_slice(), gw.as_slice(), mw.as_mut_slice(), vw.as_mut_slice());
            update(layer.bias.as_mut_slice(), gb.as_slice(), mb.as_mut_slice(), vb.as_mut_slice());
        }
    }
}

/// Trains by Adam on mean squared error, stopping early when the epoch's
/// validation loss exceeds the mean of the previous `patience` epochs.
/// Returns the parameters of the last epoch trained.
pub fn fit_mlp(
    features: &[Feature],
    x_train: &[Vec<f64>],
    y_train: &[f64],
    x_val: &[Vec<f64>],
    y_val: &[f64],
    cfg: &MlpConfig,
) -> Result<MlpModel> {
    super::check_columns(features.len(), x_train)?;
    super::check_columns(features.len(), x_val)?;
    if y_train.is_empty() || y_val.is_empty() {
        return Err(Error::Validation("MLP needs nonempty training and validation sets".into()));
    }
    if x_train.first().is_some_and(|c| c.len() != y_train.len()) || x_val.first().is_some_and(|c| c.len() != y_val.len()) {
        return Err(Error::DimensionMismatch {
            expected: y_train.len(),
            got: x_train.first().map_or(0, |c| c.len()),
        });
    }
    let mut model = MlpModel::init(features.to_vec(), &cfg.hidden, cfg.seed);
    let xt = to_matrix(x_train);
    let xv = to_matrix(x_val);
    let n = y_train.len();
    let batch = cfg.batch_size.unwrap_or(n).clamp(1, n);
    let mut adam = Adam::new(&model);
    let mut order: Vec<usize> = (0..n).collect();
    let mut val_hist: Vec<f64> = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        if batch < n {
            order.shuffle(&mut rng_for(cfg.seed, "mlp-batch", epoch as u64));
        }
        let mut total = 0.0;
        for (b, idx) in order.chunks(batch).enumerate() {
            let (loss, grads) = if batch == n {
                model.loss_and_gradients(&xt, y_train)
            } else {
                let xb = xt.select_columns(idx);
                let yb: Vec<f64> = idx.iter().map(|&i| y_train[i]).collect();
                model.loss_and_gradients(&xb, &yb)
            };
            if !loss.is_finite() || grads.iter().any(|(w, b)| w.iter().chain(b.iter()).any(|v| !v.is_finite())) {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            total += loss * idx.len() as f64;
            adam.step(&mut model, &grads, cfg);
        }
        let pred = model.forward(&xv);
        let val_loss = pred.iter().zip(y_val).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / y_val.len() as f64;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: order.len().div_ceil(batch) });
        }
        model.log.push(EpochLog {
            train_loss: total / n as f64,
            val_loss,
        });
        let stop = should_stop(&val_hist, val_loss, cfg.patience);
        val_hist.push(val_loss);
        if stop {
            model.stopped_early = true;
            log::debug!("early stop at epoch {epoch}, val loss {val_loss:.6}");
            break;
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(hidden: usize) -> MlpConfig {
        MlpConfig {
            hidden: vec![hidden; 4],
            max_epochs: 400,
            seed: 1,
            ..Default::default()
        }
    }

    #[test]
    fn default_architecture() {
        let m = MlpModel::init(vec![Feature::new("A", 0), Feature::new("B", 1)], &MlpConfig::default().hidden, 0);
        assert_eq!(m.layer_sizes(), vec![2, 512, 512, 512, 512, 1]);
        use Activation::*;
        assert_eq!(m.activations(), vec![Relu, Relu, Relu, Tanh, Linear]);
    }

    #[test]
    fn stopping_rule_on_scripted_trace() {
        let mut hist: Vec<f64> = (0..49).map(|i| 10.0 - i as f64 * 0.1).collect();
        assert!(!should_stop(&hist, 100.0, 50));
        hist.push(5.0);
        let mean = hist.iter().sum::<f64>() / 50.0;
        assert!(!should_stop(&hist, mean, 50));
        assert!(should_stop(&hist, mean + 1e-9, 50));
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut m = MlpModel::init(vec![Feature::new("A", 0)], &[8; 4], 0);
        for l in &mut m.layers {
            l.weights.fill(0.0);
        }
        assert_eq!(m.predict(&[vec![1.0, -3.0, 7.0]]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn learns_identity() {
        let x: Vec<f64> = (0..200).map(|i| -1.0 + i as f64 / 100.0).collect();
        let xv: Vec<f64> = (0..50).map(|i| -0.98 + i as f64 / 25.0).collect();
        let m = fit_mlp(&[Feature::new("X", 0)], &[x.clone()], &x, &[xv.clone()], &xv, &small(16)).unwrap();
        let p = m.predict(&[xv.clone()]).unwrap();
        let mse = p.iter().zip(&xv).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 50.0;
        assert!(mse < 1e-2, "{mse}");
    }

    #[test]
    fn batch_equals_rowwise_and_is_reproducible() {
        let x: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        let cfg = MlpConfig { max_epochs: 20, batch_size: Some(16), ..small(8) };
        let a = fit_mlp(&[Feature::new("X", 0)], &[x.clone()], &y, &[x.clone()], &y, &cfg).unwrap();
        let b = fit_mlp(&[Feature::new("X", 0)], &[x.clone()], &y, &[x.clone()], &y, &cfg).unwrap();
        assert_eq!(a, b);
        let all = a.predict(&[x.clone()]).unwrap();
        for (i, v) in x.iter().enumerate() {
            assert_eq!(a.predict(&[vec![*v]]).unwrap()[0], all[i]);
        }
    }

    #[test]
    fn output_bounded_by_last_layer() {
        let m = MlpModel::init(vec![Feature::new("X", 0)], &[8; 4], 3);
        let out = m.layers.last().unwrap();
        let bound = out.weights.iter().map(|w| w.abs()).sum::<f64>() + out.bias[0].abs();
        for v in m.predict(&[vec![-1e3, -1.0, 0.0, 2.0, 1e4]]).unwrap() {
            assert!(v.abs() <= bound);
        }
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let x = vec![vec![1.0, 2.0, 3.0]];
        let err = fit_mlp(&[Feature::new("X", 0)], &x, &[1.0, f64::NAN, 0.0], &x, &[1.0, 2.0, 3.0], &small(4)).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { epoch: 1, batch: 0 }));
    }
}
