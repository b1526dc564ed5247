use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{argmax, check_shape, encode_labels, rows_of, MODEL_VERSION};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdClassifier {
    pub version: u32,
    pub classes: Vec<String>,
    /// `classes x d`, row-major.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub d: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// One-vs-rest logistic regression with per-sample gradient steps from a
/// zero start and a seeded shuffle each epoch.
pub fn sgd_fit<S: AsRef<str>>(
    x: &[f64],
    d: usize,
    labels: &[S],
    learning_rate: f64,
    epochs: usize,
    seed: u64,
) -> Result<SgdClassifier> {
    if epochs < 1 {
        return Err(Error::validation("sgd needs at least one epoch"));
    }
    let n = check_shape(x, d, labels.len())?;
    let (classes, ids) = encode_labels(labels);
    let k = classes.len();
    let mut weights = vec![0.0; k * d];
    let mut biases = vec![0.0; k];
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..epochs {
        order.shuffle(&mut rng::indexed(seed, "sgd-order", epoch as u64));
        for &i in &order {
            let xi = &x[i * d..(i + 1) * d];
            for c in 0..k {
                let w = &mut weights[c * d..(c + 1) * d];
                let z: f64 = w.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>() + biases[c];
                let g = sigmoid(z) - if ids[i] == c { 1.0 } else { 0.0 };
                for (wj, xj) in w.iter_mut().zip(xi) {
                    *wj -= learning_rate * g * xj;
                }
                biases[c] -= learning_rate * g;
            }
        }
        if weights.iter().chain(&biases).any(|v| !v.is_finite()) {
            return Err(Error::Divergence { epoch: epoch + 1 });
        }
    }
    Ok(SgdClassifier {
        version: MODEL_VERSION,
        classes,
        weights,
        biases,
        d,
        learning_rate,
        epochs,
        seed,
    })
}

pub fn sgd_predict(model: &SgdClassifier, x: &[f64]) -> Result<Vec<String>> {
    let d = model.d;
    let n = rows_of(x, d)?;
    Ok((0..n)
        .map(|r| {
            let xi = &x[r * d..(r + 1) * d];
            let scores: Vec<f64> = (0..model.classes.len())
                .map(|c| model.weights[c * d..(c + 1) * d].iter().zip(xi).map(|(a, b)| a * b).sum::<f64>() + model.biases[c])
                .collect();
            model.classes[argmax(&scores)].clone()
        })
        .collect())
}
