//! SGD+momentum training loop over a generated dataset. Deterministic
//! given the config seed: initialization and per-epoch shuffles come
//! from one seeded stream.

use super::{
    default_hidden_dims, loss_and_grads, sgd_momentum_step, Batch, InputNormalization, MlpError,
    MlpModel, PenaltyOperator, TrainConfig,
};
use crate::calibration::apply_plan;
use crate::dataset::TrainingDataset;
use crate::grid::{AdmittanceSystem, PowerNetwork};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Per-epoch loss averages over the training samples.
#[derive(Debug, Clone, Copy)]
pub struct EpochTrace {
    pub epoch: usize,
    pub l_pg: f64,
    pub l_pen: f64,
    pub total: f64,
}

/// Train a fresh model on the dataset. The penalty operator is built
/// from the dataset's own calibration plan, so training penalizes the
/// same limits its labels were solved under.
pub fn train(
    net: &PowerNetwork,
    adm: &AdmittanceSystem,
    dataset: &TrainingDataset,
    config: &TrainConfig,
) -> Result<(MlpModel, Vec<EpochTrace>), MlpError> {
    config.validate()?;
    let network_hash = net.content_hash();
    if dataset.network_id != network_hash {
        return Err(MlpError::NetworkMismatch {
            model_hash: network_hash,
            network_hash: dataset.network_id.clone(),
        });
    }
    if dataset.records.is_empty() && config.epochs > 0 {
        return Err(MlpError::EmptyDataset);
    }

    let in_dim = dataset.load_buses.len();
    let out_dim = dataset.alpha_generators.len();
    let hidden = config
        .hidden_dims
        .clone()
        .unwrap_or_else(|| default_hidden_dims(net.n_buses()));
    let mut layer_dims = Vec::with_capacity(hidden.len() + 2);
    layer_dims.push(in_dim);
    layer_dims.extend(hidden.iter().copied());
    layer_dims.push(out_dim);

    let n = dataset.records.len();
    let mut x_all = DMatrix::zeros(in_dim, n);
    let mut y_all = DMatrix::zeros(out_dim, n);
    for (j, rec) in dataset.records.iter().enumerate() {
        for (i, &b) in dataset.load_buses.iter().enumerate() {
            x_all[(i, j)] = rec.sample.loads_mw[b];
        }
        y_all.column_mut(j).copy_from(&rec.alpha);
    }
    let input_norm = if n > 0 {
        InputNormalization::fit(&x_all)
    } else {
        InputNormalization::identity(in_dim)
    };

    let limits = apply_plan(net, &dataset.calibration)
        .map_err(|e| MlpError::ArchitectureMismatch(format!("calibration invalid: {e}")))?;
    let penalty = PenaltyOperator::new(net, adm, &limits);
    let mut offsets_all = DMatrix::zeros(penalty.n_lines(), n);
    for j in 0..n {
        let features = x_all.column(j).into_owned();
        offsets_all
            .column_mut(j)
            .copy_from(&penalty.load_offset(&features));
    }
    let x_norm_all = input_norm.apply_columns(&x_all);

    let tag = format!(
        "{} {}",
        net.name,
        hidden
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("/")
    );
    let mut model = MlpModel::init(layer_dims, input_norm, tag, network_hash, config.seed)?;
    model.train_config = Some(config.clone());

    let mut vel_w: Vec<DMatrix<f64>> = model
        .weights
        .iter()
        .map(|w| DMatrix::zeros(w.nrows(), w.ncols()))
        .collect();
    let mut vel_b: Vec<DVector<f64>> = model
        .biases
        .iter()
        .map(|b| DVector::zeros(b.len()))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_5EED_5EED_5EED);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sum_pg = 0.0;
        let mut sum_pen = 0.0;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let bsize = chunk.len();
            let mut x = DMatrix::zeros(model.input_dim(), bsize);
            let mut y = DMatrix::zeros(model.output_dim(), bsize);
            let mut offs = DMatrix::zeros(penalty.n_lines(), bsize);
            for (col, &idx) in chunk.iter().enumerate() {
                x.column_mut(col).copy_from(&x_norm_all.column(idx));
                y.column_mut(col).copy_from(&y_all.column(idx));
                offs.column_mut(col).copy_from(&offsets_all.column(idx));
            }
            let batch = Batch {
                x_norm: x,
                y,
                offsets: offs,
            };
            let (terms, grads) = loss_and_grads(&model, &batch, &penalty, config.w1, config.w2)?;
            if !terms.total.is_finite() {
                return Err(MlpError::NanLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            sum_pg += terms.l_pg * bsize as f64;
            sum_pen += terms.l_pen * bsize as f64;
            for l in 0..model.weights.len() {
                sgd_momentum_step(
                    model.weights[l].as_mut_slice(),
                    vel_w[l].as_mut_slice(),
                    grads.dw[l].as_slice(),
                    config.learning_rate,
                    config.momentum,
                );
                sgd_momentum_step(
                    model.biases[l].as_mut_slice(),
                    vel_b[l].as_mut_slice(),
                    grads.db[l].as_slice(),
                    config.learning_rate,
                    config.momentum,
                );
            }
        }
        let l_pg = sum_pg / n as f64;
        let l_pen = sum_pen / n as f64;
        trace.push(EpochTrace {
            epoch,
            l_pg,
            l_pen,
            total: config.w1 * l_pg + config.w2 * l_pen,
        });
    }

    Ok((model, trace))
}
