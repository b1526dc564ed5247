use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mlp::{backward, forward, loss, Mode};
use super::{adam_step, AdamState, LossKind, MlpConfig, MlpModel};
use crate::error::{Error, Result};
use crate::preprocess::{FeatureMatrix, SplitIndices};
use crate::rng;

pub const DEFAULT_BATCH_GRID: [usize; 4] = [16, 32, 64, 96];
pub const DEFAULT_EPOCH_GRID: [usize; 4] = [25, 50, 100, 120];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Row-major inputs and targets for `rows`, using the model's feature order.
/// Log-loss is a binary objective, so its targets are thresholded at 0.5.
fn gather(matrix: &FeatureMatrix, rows: &[usize], features: &[String], kind: LossKind) -> Result<(Vec<f64>, Vec<f64>)> {
    let x = matrix.gather(rows, features)?;
    let target = matrix.column_index(matrix.target_name())?;
    let y = rows
        .iter()
        .map(|&r| {
            let t = matrix.row(r)[target];
            match kind {
                LossKind::Mae => t,
                LossKind::LogLoss => f64::from(u8::from(t >= 0.5)),
            }
        })
        .collect();
    Ok((x, y))
}

/// Mini-batch training with a seeded shuffle per epoch. The last partial
/// batch is kept. Validation loss is measured without dropout.
pub fn train(
    matrix: &FeatureMatrix,
    split: &SplitIndices,
    config: &MlpConfig,
) -> Result<(MlpModel, Vec<EpochRecord>)> {
    config.validate()?;
    let features = matrix.input_names();
    if features.len() != config.input_dim() {
        return Err(Error::shape(format!(
            "matrix has {} inputs but the network expects {}",
            features.len(),
            config.input_dim()
        )));
    }
    if split.train.is_empty() {
        return Err(Error::validation("empty training split"));
    }
    let mut model = MlpModel::init(config)?;
    model.features = features.clone();
    let d = config.input_dim();
    let (x_train, y_train) = gather(matrix, &split.train, &features, config.loss)?;
    let (x_val, y_val) = gather(matrix, &split.validation, &features, config.loss)?;

    let mut state = AdamState::new(&model.param_shapes());
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut xb = Vec::with_capacity(config.batch_size * d);
    let mut yb = Vec::with_capacity(config.batch_size);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng::indexed(config.seed, "epoch-order", epoch as u64));
        let mut mask_rng = rng::indexed(config.seed, "dropout", epoch as u64);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            xb.clear();
            yb.clear();
            for &i in batch {
                xb.extend_from_slice(&x_train[i * d..(i + 1) * d]);
                yb.push(y_train[i]);
            }
            let cache = forward(&model, &xb, batch.len(), Mode::Train(&mut mask_rng))?;
            let l = loss(config.loss, cache.predictions(), &yb)?;
            if !l.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            total += l * batch.len() as f64;
            let grads = backward(&model, &cache, &yb)?;
            if !grads.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            adam_step(&mut model.params_mut(), &grads.tensors(), &mut state, &config.adam)?;
        }
        if !model.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let train_loss = total / split.train.len() as f64;
        let val_loss = if split.validation.is_empty() {
            f64::NAN
        } else {
            let pred = predict_rows(&model, &x_val, split.validation.len())?;
            loss(config.loss, &pred, &y_val)?
        };
        if !train_loss.is_finite() || !(val_loss.is_finite() || split.validation.is_empty()) {
            return Err(Error::Divergence { epoch });
        }
        log::debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
    }
    model.trained = config.epochs > 0;
    Ok((model, history))
}

/// Inference on raw row-major inputs.
pub fn predict_rows(model: &MlpModel, x: &[f64], n: usize) -> Result<Vec<f64>> {
    // Bounded chunks keep the activation buffers small on large inputs.
    const CHUNK: usize = 4096;
    let d = model.input_dim();
    if x.len() != n * d {
        return Err(Error::shape(format!("{} values is not {n} rows of width {d}", x.len())));
    }
    let mut out = Vec::with_capacity(n);
    for start in (0..n).step_by(CHUNK) {
        let m = CHUNK.min(n - start);
        let cache = forward(model, &x[start * d..(start + m) * d], m, Mode::Infer)?;
        out.extend_from_slice(cache.predictions());
    }
    Ok(out)
}

/// Predicted scaled prices for every row of `matrix`, reading the model's
/// feature columns by name.
pub fn predict(model: &MlpModel, matrix: &FeatureMatrix) -> Result<Vec<f64>> {
    let rows: Vec<usize> = (0..matrix.n_rows()).collect();
    let features = if model.features.is_empty() {
        matrix.input_names()
    } else {
        model.features.clone()
    };
    if features.len() != model.input_dim() {
        return Err(Error::shape(format!(
            "{} feature columns for a network of width {}",
            features.len(),
            model.input_dim()
        )));
    }
    let x = matrix.gather(&rows, &features)?;
    predict_rows(model, &x, rows.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub final_train_loss: f64,
    pub final_val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub best: MlpConfig,
    pub trials: Vec<TrialRecord>,
}

/// Trains one model per (batch, epochs) pair, batch-major, with seed
/// `base.seed + trial`. `score` returns validation accuracy for a trained
/// model. Best is highest accuracy, then fewer epochs, then smaller batch.
pub fn grid_search<F>(
    matrix: &FeatureMatrix,
    split: &SplitIndices,
    base: &MlpConfig,
    batch_grid: &[usize],
    epoch_grid: &[usize],
    score: F,
) -> Result<GridResult>
where
    F: Fn(&MlpModel) -> Result<f64> + Sync,
{
    if batch_grid.is_empty() || epoch_grid.is_empty() {
        return Err(Error::validation("grid search needs non-empty batch and epoch grids"));
    }
    let configs: Vec<MlpConfig> = batch_grid
        .iter()
        .flat_map(|&b| epoch_grid.iter().map(move |&e| (b, e)))
        .enumerate()
        .map(|(t, (batch_size, epochs))| MlpConfig {
            batch_size,
            epochs,
            seed: base.seed.wrapping_add(t as u64),
            ..base.clone()
        })
        .collect();
    let trials: Vec<TrialRecord> = configs
        .par_iter()
        .enumerate()
        .map(|(t, cfg)| {
            let (model, history) = train(matrix, split, cfg)?;
            let last = history.last();
            Ok(TrialRecord {
                trial: t,
                batch_size: cfg.batch_size,
                epochs: cfg.epochs,
                seed: cfg.seed,
                final_train_loss: last.map_or(f64::NAN, |h| h.train_loss),
                final_val_loss: last.map_or(f64::NAN, |h| h.val_loss),
                val_accuracy: score(&model)?,
            })
        })
        .collect::<Result<_>>()?;
    let best = trials
        .iter()
        .min_by(|a, b| {
            b.val_accuracy
                .total_cmp(&a.val_accuracy)
                .then(a.epochs.cmp(&b.epochs))
                .then(a.batch_size.cmp(&b.batch_size))
        })
        .expect("non-empty grid");
    Ok(GridResult {
        best: configs[best.trial].clone(),
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{default_architecture, ActivationKind, LossKind};
    use crate::preprocess::{split, Column};
    use rand::Rng as _;

    /// y = sigmoid-ish function of two inputs, plus a noise column.
    fn toy(n: usize) -> FeatureMatrix {
        let mut r = rng::stream(2, "toy");
        let a: Vec<f64> = (0..n).map(|_| r.gen::<f64>()).collect();
        let b: Vec<f64> = (0..n).map(|_| r.gen::<f64>()).collect();
        let c: Vec<f64> = (0..n).map(|_| r.gen::<f64>()).collect();
        let y: Vec<f64> = a.iter().zip(&b).map(|(a, b)| if a + b > 1.0 { 0.9 } else { 0.1 }).collect();
        FeatureMatrix::from_columns(
            vec![
                (Column::numeric("a"), a),
                (Column::numeric("b"), b),
                (Column::numeric("c"), c),
                (Column::numeric("y"), y),
            ],
            "y",
        )
        .unwrap()
    }

    fn small(seed: u64, epochs: usize) -> MlpConfig {
        MlpConfig {
            layer_sizes: vec![3, 8, 4, 1],
            epochs,
            batch_size: 16,
            seed,
            adam: crate::nn::AdamParams { learning_rate: 0.01, ..Default::default() },
            ..default_architecture(3).unwrap()
        }
    }

    #[test]
    fn zero_epochs_returns_untrained_model() {
        let m = toy(50);
        let s = split(50, (0.4, 0.3, 0.3), 1).unwrap();
        let (model, hist) = train(&m, &s, &small(1, 0)).unwrap();
        assert!(hist.is_empty());
        assert!(!model.trained);
        assert_eq!(model.layers, MlpModel::init(&small(1, 0)).unwrap().layers);
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let m = toy(400);
        let s = split(400, (0.4, 0.3, 0.3), 1).unwrap();
        let (a, ha) = train(&m, &s, &small(4, 40)).unwrap();
        let (b, hb) = train(&m, &s, &small(4, 40)).unwrap();
        assert_eq!(a.layers, b.layers);
        assert_eq!(ha, hb);
        assert!(ha.last().unwrap().train_loss < 0.5 * ha[0].train_loss);
    }

    #[test]
    fn predict_batch_equals_rowwise() {
        let m = toy(60);
        let s = split(60, (0.4, 0.3, 0.3), 1).unwrap();
        let (model, _) = train(&m, &s, &small(4, 3)).unwrap();
        let all = predict(&model, &m).unwrap();
        for r in 0..m.n_rows() {
            let x = m.gather(&[r], &model.features).unwrap();
            assert_eq!(predict_rows(&model, &x, 1).unwrap()[0], all[r]);
            assert!(all[r] > 0.0 && all[r] < 1.0);
        }
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let m = toy(30);
        let s = split(30, (0.4, 0.3, 0.3), 1).unwrap();
        let mut cfg = small(1, 1);
        cfg.layer_sizes[0] = 4;
        assert!(matches!(train(&m, &s, &cfg), Err(Error::Shape(_))));
    }

    #[test]
    fn divergence_reports_epoch() {
        let m = toy(60);
        let s = split(60, (0.4, 0.3, 0.3), 1).unwrap();
        let cfg = MlpConfig {
            activations: vec![ActivationKind::Relu; 3],
            loss: LossKind::Mae,
            adam: crate::nn::AdamParams { learning_rate: f64::INFINITY, ..Default::default() },
            ..small(1, 3)
        };
        assert!(matches!(train(&m, &s, &cfg), Err(Error::Divergence { epoch: 1 })));
    }

    #[test]
    fn grid_shapes_and_tie_break() {
        let m = toy(80);
        let s = split(80, (0.4, 0.3, 0.3), 1).unwrap();
        let g = grid_search(&m, &s, &small(7, 1), &[16, 32], &[2, 1], |_| Ok(0.5)).unwrap();
        assert_eq!(g.trials.len(), 4);
        assert_eq!(g.trials.iter().map(|t| t.seed).collect::<Vec<_>>(), vec![7, 8, 9, 10]);
        assert_eq!((g.best.batch_size, g.best.epochs), (16, 1));
        let single = grid_search(&m, &s, &small(7, 1), &[32], &[3], |_| Ok(0.1)).unwrap();
        assert_eq!((single.best.batch_size, single.best.epochs), (32, 3));
        assert!(grid_search(&m, &s, &small(7, 1), &[], &[3], |_| Ok(0.1)).is_err());
    }
}
