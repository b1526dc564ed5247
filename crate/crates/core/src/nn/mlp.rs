use rand::Rng as _;

use super::activation::{apply_activation, derivative};
use super::{LossKind, MlpModel, LOG_LOSS_CLAMP};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub enum Mode<'a> {
    /// Draws fresh dropout masks from the given generator.
    Train(&'a mut Rng),
    Infer,
}

/// Everything `backward` needs from a forward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    pub n: usize,
    /// Input to each layer (after the previous layer's dropout).
    pub inputs: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
    /// Activations before dropout.
    pub post: Vec<Vec<f64>>,
    /// Per hidden layer: 0 or 1/(1-p) for each unit of each row.
    pub masks: Vec<Option<Vec<f64>>>,
}

impl Cache {
    pub fn predictions(&self) -> &[f64] {
        self.post.last().expect("at least one layer")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).flatten().all(|v| v.is_finite())
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = c * 4;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in chunks * 4..a.len() {
        s += a[k] * b[k];
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Runs `n` rows (row-major, `n x input_dim`) through the network.
pub fn forward(model: &MlpModel, x: &[f64], n: usize, mode: Mode<'_>) -> Result<Cache> {
    let d = model.input_dim();
    if x.len() != n * d {
        return Err(Error::shape(format!("batch of {} values is not {n} rows of width {d}", x.len())));
    }
    let p = model.config.dropout_rate;
    let mut rng = match mode {
        Mode::Train(r) => Some(r),
        Mode::Infer => None,
    };
    let last = model.layers.len() - 1;
    let mut cache = Cache {
        n,
        inputs: Vec::with_capacity(model.layers.len()),
        pre: Vec::with_capacity(model.layers.len()),
        post: Vec::with_capacity(model.layers.len()),
        masks: Vec::with_capacity(model.layers.len()),
    };
    let mut input = x.to_vec();
    for (li, (layer, &act)) in model.layers.iter().zip(&model.config.activations).enumerate() {
        let mut z = vec![0.0; n * layer.n_out];
        for r in 0..n {
            let xr = &input[r * layer.n_in..(r + 1) * layer.n_in];
            let zr = &mut z[r * layer.n_out..(r + 1) * layer.n_out];
            for (o, zo) in zr.iter_mut().enumerate() {
                *zo = dot(&layer.weights[o * layer.n_in..(o + 1) * layer.n_in], xr) + layer.biases[o];
            }
        }
        let a: Vec<f64> = z.iter().map(|&v| apply_activation(act, v)).collect();
        let mask = match rng.as_deref_mut() {
            Some(r) if li < last && p > 0.0 => {
                let keep = 1.0 / (1.0 - p);
                Some((0..a.len()).map(|_| if r.gen::<f64>() < p { 0.0 } else { keep }).collect::<Vec<f64>>())
            }
            _ => None,
        };
        let next = match &mask {
            Some(m) => a.iter().zip(m).map(|(v, k)| v * k).collect(),
            None => a.clone(),
        };
        cache.inputs.push(std::mem::replace(&mut input, next));
        cache.pre.push(z);
        cache.post.push(a);
        cache.masks.push(mask);
    }
    Ok(cache)
}

/// Mean absolute error or mean log-loss. Log-loss clamps predictions into
/// [1e-7, 1 - 1e-7] and accepts soft targets in [0, 1].
pub fn loss(kind: LossKind, predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::shape("loss of an empty batch"));
    }
    let n = predictions.len() as f64;
    let total: f64 = match kind {
        LossKind::Mae => predictions.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum(),
        LossKind::LogLoss => {
            if let Some(t) = targets.iter().find(|t| !(0.0..=1.0).contains(*t)) {
                return Err(Error::validation(format!("log-loss target {t} outside [0, 1]")));
            }
            predictions
                .iter()
                .zip(targets)
                .map(|(p, t)| {
                    let p = p.clamp(LOG_LOSS_CLAMP, 1.0 - LOG_LOSS_CLAMP);
                    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
                })
                .sum()
        }
    };
    Ok(total / n)
}

/// dLoss/dPrediction for one sample, already divided by the batch size.
fn loss_slope(kind: LossKind, p: f64, t: f64, n: f64) -> f64 {
    match kind {
        LossKind::Mae => {
            if p > t {
                1.0 / n
            } else if p < t {
                -1.0 / n
            } else {
                0.0
            }
        }
        LossKind::LogLoss => {
            if p <= LOG_LOSS_CLAMP || p >= 1.0 - LOG_LOSS_CLAMP {
                0.0
            } else {
                (p - t) / (p * (1.0 - p)) / n
            }
        }
    }
}

/// Exact gradients of the configured loss for the batch behind `cache`.
pub fn backward(model: &MlpModel, cache: &Cache, targets: &[f64]) -> Result<Gradients> {
    let n = cache.n;
    if targets.len() != n {
        return Err(Error::shape(format!("{} targets for a batch of {n}", targets.len())));
    }
    let nl = model.layers.len();
    let mut gw: Vec<Vec<f64>> = model.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect();
    let mut gb: Vec<Vec<f64>> = model.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect();

    // delta = dLoss/dz for the current layer
    let out_act = model.config.activations[nl - 1];
    let mut delta: Vec<f64> = (0..n)
        .map(|r| {
            let (z, a) = (cache.pre[nl - 1][r], cache.post[nl - 1][r]);
            loss_slope(model.config.loss, a, targets[r], n as f64) * derivative(out_act, z, a)
        })
        .collect();

    for li in (0..nl).rev() {
        let layer = &model.layers[li];
        let input = &cache.inputs[li];
        for r in 0..n {
            let xr = &input[r * layer.n_in..(r + 1) * layer.n_in];
            for o in 0..layer.n_out {
                let d = delta[r * layer.n_out + o];
                if d != 0.0 {
                    axpy(d, xr, &mut gw[li][o * layer.n_in..(o + 1) * layer.n_in]);
                    gb[li][o] += d;
                }
            }
        }
        if li == 0 {
            break;
        }
        let prev_act = model.config.activations[li - 1];
        let mut next = vec![0.0; n * layer.n_in];
        for r in 0..n {
            let dr = &mut next[r * layer.n_in..(r + 1) * layer.n_in];
            for o in 0..layer.n_out {
                let d = delta[r * layer.n_out + o];
                if d != 0.0 {
                    axpy(d, &layer.weights[o * layer.n_in..(o + 1) * layer.n_in], dr);
                }
            }
        }
        let mask = cache.masks[li - 1].as_deref();
        for (k, g) in next.iter_mut().enumerate() {
            let m = mask.map_or(1.0, |m| m[k]);
            *g *= m * derivative(prev_act, cache.pre[li - 1][k], cache.post[li - 1][k]);
        }
        delta = next;
    }
    Ok(Gradients { weights: gw, biases: gb })
}

/// Largest relative gap between `backward` and central finite differences
/// of the loss over every parameter, with dropout off. Entries where both
/// gradients are below 1e-8 count as agreeing.
pub fn gradient_check(model: &MlpModel, x: &[f64], targets: &[f64], step: f64) -> Result<f64> {
    let n = targets.len();
    let cache = forward(model, x, n, Mode::Infer)?;
    let analytic: Vec<f64> = backward(model, &cache, targets)?.tensors().concat();
    let mut probe = model.clone();
    let eval = |probe: &MlpModel| -> Result<f64> {
        loss(model.config.loss, forward(probe, x, n, Mode::Infer)?.predictions(), targets)
    };
    let mut worst: f64 = 0.0;
    let (mut tensor, mut offset) = (0, 0);
    for a in analytic {
        while offset == probe.params_mut()[tensor].len() {
            tensor += 1;
            offset = 0;
        }
        let original = probe.params_mut()[tensor][offset];
        probe.params_mut()[tensor][offset] = original + step;
        let plus = eval(&probe)?;
        probe.params_mut()[tensor][offset] = original - step;
        let minus = eval(&probe)?;
        probe.params_mut()[tensor][offset] = original;
        let numeric = (plus - minus) / (2.0 * step);
        let scale = a.abs().max(numeric.abs());
        if scale >= 1e-8 {
            worst = worst.max((a - numeric).abs() / scale);
        }
        offset += 1;
    }
    Ok(worst)
}
