//! Feed-forward network mapping load vectors to generator scaling
//! factors: ReLU hidden layers, sigmoid output, trained with
//! SGD+momentum on a composite loss. Besides the squared error against
//! the optimal scaling factors, the loss carries a penalty on
//! normalized line flows exceeding 1 in magnitude; the flows are an
//! affine function of the predicted scaling factors (decode, slack by
//! balance, angles from the factorized reduced admittance matrix), so
//! the penalty back-propagates through a single precomputed matrix.

mod file;
mod train;

pub use file::{load_model, save_model};
pub use train::{train, EpochTrace};

use crate::calibration::EffectiveLimits;
use crate::dataset::alpha_generators;
use crate::grid::{AdmittanceSystem, PowerNetwork};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("dimension mismatch: expected {expected} {what}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("model/network mismatch: model is bound to {model_hash}, got {network_hash}")]
    NetworkMismatch {
        model_hash: String,
        network_hash: String,
    },
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
    #[error("loss became non-finite at epoch {epoch}, batch {batch} (learning rate too high?)")]
    NanLoss { epoch: usize, batch: usize },
    #[error("dataset has no records")]
    EmptyDataset,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid model file {path}: {message}")]
    Format { path: String, message: String },
}

/// Training hyperparameters. Defaults: 200 epochs, batch 64, learning
/// rate 1e-3, momentum 0.9, unit loss weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Hidden layer widths; `None` picks a default by case size.
    pub hidden_dims: Option<Vec<usize>>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Weight of the squared-error term.
    pub w1: f64,
    /// Weight of the line-violation penalty term.
    pub w2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_dims: None,
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            momentum: 0.9,
            w1: 1.0,
            w2: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN fields must fail
    pub fn validate(&self) -> Result<(), MlpError> {
        let bad = |what: &'static str| {
            MlpError::ArchitectureMismatch(format!("invalid train config: bad {what}"))
        };
        if self.batch_size == 0 {
            return Err(bad("batch_size"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(bad("learning_rate"));
        }
        if !(self.momentum >= 0.0 && self.momentum < 1.0) {
            return Err(bad("momentum"));
        }
        if !(self.w1 >= 0.0 && self.w2 >= 0.0) {
            return Err(bad("loss weights"));
        }
        Ok(())
    }
}

/// Hidden layer widths by case size: 32/16/8 up to 50 buses, 128/64/32
/// up to 250, 256/128/64 beyond.
pub fn default_hidden_dims(n_buses: usize) -> Vec<usize> {
    if n_buses <= 50 {
        vec![32, 16, 8]
    } else if n_buses <= 250 {
        vec![128, 64, 32]
    } else {
        vec![256, 128, 64]
    }
}

/// Per-feature affine standardization fitted on the training loads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNormalization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputNormalization {
    /// Identity normalization.
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Mean/standard deviation per feature; near-constant features get
    /// unit scale.
    pub fn fit(columns: &DMatrix<f64>) -> Self {
        let dim = columns.nrows();
        let n = columns.ncols().max(1) as f64;
        let mut mean = vec![0.0; dim];
        let mut scale = vec![1.0; dim];
        for i in 0..dim {
            let mu: f64 = columns.row(i).iter().sum::<f64>() / n;
            let var: f64 = columns
                .row(i)
                .iter()
                .map(|v| (v - mu) * (v - mu))
                .sum::<f64>()
                / n;
            mean[i] = mu;
            let sd = var.sqrt();
            scale[i] = if sd > 1e-9 { sd } else { 1.0 };
        }
        Self { mean, scale }
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(x.len(), |i, _| (x[i] - self.mean[i]) / self.scale[i])
    }

    pub fn apply_columns(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            (x[(i, j)] - self.mean[i]) / self.scale[i]
        })
    }
}

/// The trained predictor: layer weights, input normalization and the
/// provenance needed to refuse evaluation against the wrong case.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    /// `[input, hidden..., output]` layer widths.
    pub layer_dims: Vec<usize>,
    /// `weights[l]` is `layer_dims[l+1] x layer_dims[l]`.
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    pub input_norm: InputNormalization,
    pub architecture_tag: String,
    /// Content hash of the network the model was trained for.
    pub network_hash: String,
    /// Hyperparameters the model was trained with, if any.
    pub train_config: Option<TrainConfig>,
}

impl MlpModel {
    /// Seeded initialization: weights uniform in
    /// `[-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))]`,
    /// biases zero.
    pub fn init(
        layer_dims: Vec<usize>,
        input_norm: InputNormalization,
        architecture_tag: String,
        network_hash: String,
        seed: u64,
    ) -> Result<Self, MlpError> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(MlpError::ArchitectureMismatch(format!(
                "layer dims {layer_dims:?} need at least input and output, all nonzero"
            )));
        }
        if input_norm.mean.len() != layer_dims[0] {
            return Err(MlpError::DimensionMismatch {
                what: "normalization features",
                expected: layer_dims[0],
                got: input_norm.mean.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..layer_dims.len() - 1 {
            let (fan_in, fan_out) = (layer_dims[l], layer_dims[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = DMatrix::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-bound..=bound));
            weights.push(w);
            biases.push(DVector::zeros(fan_out));
        }
        Ok(MlpModel {
            layer_dims,
            weights,
            biases,
            input_norm,
            architecture_tag,
            network_hash,
            train_config: None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// Forward pass on an already-normalized input vector. The output
    /// is strictly inside (0, 1) component-wise.
    pub fn forward(&self, x_normalized: &DVector<f64>) -> Result<DVector<f64>, MlpError> {
        if x_normalized.len() != self.input_dim() {
            return Err(MlpError::DimensionMismatch {
                what: "input features",
                expected: self.input_dim(),
                got: x_normalized.len(),
            });
        }
        let batch = DMatrix::from_column_slice(x_normalized.len(), 1, x_normalized.as_slice());
        let out = self.forward_batch(&batch).output;
        Ok(out.column(0).into_owned())
    }

    /// Normalize raw load features (MW at the load buses) and run the
    /// forward pass.
    pub fn forward_raw(&self, loads_mw: &DVector<f64>) -> Result<DVector<f64>, MlpError> {
        if loads_mw.len() != self.input_dim() {
            return Err(MlpError::DimensionMismatch {
                what: "input features",
                expected: self.input_dim(),
                got: loads_mw.len(),
            });
        }
        self.forward(&self.input_norm.apply(loads_mw))
    }

    /// Batched forward keeping intermediate activations for backprop.
    pub(crate) fn forward_batch(&self, x: &DMatrix<f64>) -> ForwardPass {
        let n_layers = self.weights.len();
        let mut pre = Vec::with_capacity(n_layers);
        let mut act = Vec::with_capacity(n_layers + 1);
        act.push(x.clone());
        for l in 0..n_layers {
            let mut z = &self.weights[l] * act.last().unwrap();
            for mut col in z.column_iter_mut() {
                col += &self.biases[l];
            }
            let a = if l + 1 == n_layers {
                z.map(sigmoid)
            } else {
                z.map(|v| v.max(0.0))
            };
            pre.push(z);
            act.push(a);
        }
        ForwardPass {
            output: act.last().unwrap().clone(),
            pre,
            act,
        }
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub(crate) struct ForwardPass {
    pub output: DMatrix<f64>,
    /// Pre-activation values per layer.
    pub pre: Vec<DMatrix<f64>>,
    /// Activations per layer, starting with the input.
    pub act: Vec<DMatrix<f64>>,
}

/// Normalized line-flow operator: `a` has `1/(cap_pu * x)` at the from
/// bus and the negative at the to bus, so `|a * theta| <= 1` iff the
/// line is within capacity in both directions. The composition with
/// the angle-reconstruction map makes the normalized flows an affine
/// function of the predicted scaling factors.
#[derive(Debug, Clone)]
pub struct PenaltyOperator {
    /// Na×N normalized flow rows over full angle vectors.
    pub a: DMatrix<f64>,
    /// Na×(N-1): normalized flows from non-slack injections (per-unit).
    flow_from_injection: DMatrix<f64>,
    /// Na×n_alpha: normalized flows from scaling factors.
    c_alpha: DMatrix<f64>,
    /// Constant injection term (fixed generator minima and degenerate
    /// outputs), before loads are subtracted.
    d_fixed: DVector<f64>,
    load_buses: Vec<usize>,
    reduced_index: Vec<Option<usize>>,
    base_mva: f64,
}

impl PenaltyOperator {
    pub fn new(net: &PowerNetwork, adm: &AdmittanceSystem, limits: &EffectiveLimits) -> Self {
        let n = net.n_buses();
        let na = net.branches.len();
        let base = net.base_mva;
        let mut a = DMatrix::zeros(na, n);
        for (k, br) in net.branches.iter().enumerate() {
            let cap_pu = limits.line_cap_mw[k] / base;
            let w = 1.0 / (cap_pu * br.reactance_pu);
            a[(k, br.from)] = w;
            a[(k, br.to)] = -w;
        }
        let a_ns = a.select_columns(adm.non_slack_buses());
        // R = A_ns * B~^-1, via B~ R' = A_ns' (B~ symmetric).
        let flow_from_injection = adm.solve_reduced_mat(&a_ns.transpose()).transpose();

        let mut reduced_index = vec![None; n];
        for (r, &b) in adm.non_slack_buses().iter().enumerate() {
            reduced_index[b] = Some(r);
        }

        let alpha_gens = alpha_generators(net);
        let mut c_alpha = DMatrix::zeros(na, alpha_gens.len());
        for (j, &gi) in alpha_gens.iter().enumerate() {
            let g = &net.generators[gi];
            let r = reduced_index[g.bus].expect("alpha generators exclude the slack bus");
            let range_pu = (g.p_max_mw - g.p_min_mw) / base;
            c_alpha
                .column_mut(j)
                .copy_from(&(flow_from_injection.column(r) * range_pu));
        }

        // Fixed injections: minima of the alpha generators plus the
        // pinned output of degenerate non-slack generators.
        let slack_gen = net.slack_generator();
        let mut fixed = DVector::zeros(n - 1);
        for (gi, g) in net.generators.iter().enumerate() {
            if gi == slack_gen {
                continue;
            }
            if let Some(r) = reduced_index[g.bus] {
                fixed[r] += g.p_min_mw / base;
            }
        }
        let d_fixed = &flow_from_injection * &fixed;

        PenaltyOperator {
            a,
            flow_from_injection,
            c_alpha,
            d_fixed,
            load_buses: net.load_buses(),
            reduced_index,
            base_mva: base,
        }
    }

    pub fn n_lines(&self) -> usize {
        self.a.nrows()
    }

    /// Per-sample constant: normalized flows at alpha = 0 for the given
    /// load features (MW at the load buses, in `load_buses` order).
    pub fn load_offset(&self, load_features_mw: &DVector<f64>) -> DVector<f64> {
        let mut load_ns = DVector::zeros(self.flow_from_injection.ncols());
        for (j, &b) in self.load_buses.iter().enumerate() {
            if let Some(r) = self.reduced_index[b] {
                load_ns[r] = load_features_mw[j] / self.base_mva;
            }
        }
        &self.d_fixed - &self.flow_from_injection * load_ns
    }

    /// Normalized flows for a batch of scaling factors and per-sample
    /// offsets: `F = C * alpha + D`.
    pub fn normalized_flows(&self, alpha: &DMatrix<f64>, offsets: &DMatrix<f64>) -> DMatrix<f64> {
        &self.c_alpha * alpha + offsets
    }
}

/// A prepared mini-batch: normalized inputs, target scaling factors and
/// the per-sample penalty offsets.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x_norm: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub offsets: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub l_pg: f64,
    pub l_pen: f64,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub dw: Vec<DMatrix<f64>>,
    pub db: Vec<DVector<f64>>,
}

/// Composite loss over a batch: mean squared scaling-factor error plus
/// the mean positive part of (normalized flow)^2 - 1. Flows at exactly
/// the limit contribute nothing.
pub fn loss(
    model: &MlpModel,
    batch: &Batch,
    penalty: &PenaltyOperator,
    w1: f64,
    w2: f64,
) -> Result<LossTerms, MlpError> {
    let (terms, _) = loss_terms(model, batch, penalty, w1, w2, false)?;
    Ok(terms)
}

/// Loss plus analytic gradients for every weight matrix and bias.
pub fn loss_and_grads(
    model: &MlpModel,
    batch: &Batch,
    penalty: &PenaltyOperator,
    w1: f64,
    w2: f64,
) -> Result<(LossTerms, Gradients), MlpError> {
    let (terms, grads) = loss_terms(model, batch, penalty, w1, w2, true)?;
    Ok((terms, grads.expect("gradients requested")))
}

fn loss_terms(
    model: &MlpModel,
    batch: &Batch,
    penalty: &PenaltyOperator,
    w1: f64,
    w2: f64,
    with_grads: bool,
) -> Result<(LossTerms, Option<Gradients>), MlpError> {
    let b = batch.x_norm.ncols();
    if b == 0 {
        return Err(MlpError::EmptyDataset);
    }
    if batch.x_norm.nrows() != model.input_dim() {
        return Err(MlpError::DimensionMismatch {
            what: "input features",
            expected: model.input_dim(),
            got: batch.x_norm.nrows(),
        });
    }
    if batch.y.nrows() != model.output_dim() || batch.y.ncols() != b {
        return Err(MlpError::DimensionMismatch {
            what: "targets",
            expected: model.output_dim(),
            got: batch.y.nrows(),
        });
    }
    let out = model.output_dim();
    let na = penalty.n_lines();

    let pass = model.forward_batch(&batch.x_norm);
    let alpha_hat = &pass.output;

    let diff = alpha_hat - &batch.y;
    let l_pg = diff.iter().map(|v| v * v).sum::<f64>() / (out * b) as f64;

    let flows = penalty.normalized_flows(alpha_hat, &batch.offsets);
    let mut l_pen = 0.0;
    for v in flows.iter() {
        let excess = v * v - 1.0;
        if excess > 0.0 {
            l_pen += excess;
        }
    }
    l_pen /= (na.max(1) * b) as f64;

    let terms = LossTerms {
        total: w1 * l_pg + w2 * l_pen,
        l_pg,
        l_pen,
    };
    if !with_grads {
        return Ok((terms, None));
    }

    // d total / d alpha_hat
    let mut d_alpha = diff * (2.0 * w1 / (out * b) as f64);
    if w2 != 0.0 {
        let mut d_flow = flows.clone();
        for v in d_flow.iter_mut() {
            *v = if *v * *v > 1.0 {
                2.0 * *v * w2 / ((na.max(1) * b) as f64)
            } else {
                0.0
            };
        }
        d_alpha += penalty.c_alpha.transpose() * d_flow;
    }

    // Backprop: sigmoid output, ReLU hidden layers.
    let n_layers = model.weights.len();
    let mut dw = vec![DMatrix::zeros(0, 0); n_layers];
    let mut db = vec![DVector::zeros(0); n_layers];
    let sig = alpha_hat;
    let mut delta = d_alpha.zip_map(sig, |g, s| g * s * (1.0 - s));
    for l in (0..n_layers).rev() {
        dw[l] = &delta * pass.act[l].transpose();
        db[l] = DVector::from_fn(delta.nrows(), |i, _| delta.row(i).iter().sum());
        if l > 0 {
            let mut upstream = model.weights[l].transpose() * delta;
            for (u, z) in upstream.iter_mut().zip(pass.pre[l - 1].iter()) {
                if *z <= 0.0 {
                    *u = 0.0;
                }
            }
            delta = upstream;
        }
    }
    Ok((terms, Some(Gradients { dw, db })))
}

/// One SGD+momentum update: `v <- mu*v - lr*g; w <- w + v`.
pub fn sgd_momentum_step(w: &mut [f64], v: &mut [f64], g: &[f64], lr: f64, mu: f64) {
    for i in 0..w.len() {
        v[i] = mu * v[i] - lr * g[i];
        w[i] += v[i];
    }
}
