use serde::{Deserialize, Serialize};

use super::{argmax, check_shape, encode_labels, rows_of, MODEL_VERSION};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnbModel {
    pub version: u32,
    pub classes: Vec<String>,
    pub priors: Vec<f64>,
    /// `classes x d`, row-major.
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub d: usize,
    pub epsilon: f64,
}

pub fn gnb_fit<S: AsRef<str>>(x: &[f64], d: usize, labels: &[S]) -> Result<GnbModel> {
    let (classes, _) = encode_labels(labels);
    gnb_fit_with_classes(x, d, labels, &classes)
}

/// Fits with an explicit class list; every listed class needs a sample.
/// Each variance gets `1e-9 * max feature variance` added.
pub fn gnb_fit_with_classes<S: AsRef<str>>(x: &[f64], d: usize, labels: &[S], classes: &[String]) -> Result<GnbModel> {
    let n = check_shape(x, d, labels.len())?;
    let k = classes.len();
    let mut counts = vec![0usize; k];
    let mut ids = Vec::with_capacity(n);
    for l in labels {
        let c = classes
            .iter()
            .position(|c| c == l.as_ref())
            .ok_or_else(|| Error::validation(format!("label `{}` not among the classes", l.as_ref())))?;
        counts[c] += 1;
        ids.push(c);
    }
    if let Some(c) = counts.iter().position(|&c| c == 0) {
        return Err(Error::validation(format!("class `{}` has no samples", classes[c])));
    }

    let mut means = vec![0.0; k * d];
    for (r, &c) in ids.iter().enumerate() {
        for j in 0..d {
            means[c * d + j] += x[r * d + j];
        }
    }
    for c in 0..k {
        for j in 0..d {
            means[c * d + j] /= counts[c] as f64;
        }
    }
    let mut variances = vec![0.0; k * d];
    for (r, &c) in ids.iter().enumerate() {
        for j in 0..d {
            variances[c * d + j] += (x[r * d + j] - means[c * d + j]).powi(2);
        }
    }
    for c in 0..k {
        for j in 0..d {
            variances[c * d + j] /= counts[c] as f64;
        }
    }

    let mut max_var: f64 = 0.0;
    for j in 0..d {
        let mean = (0..n).map(|r| x[r * d + j]).sum::<f64>() / n as f64;
        let var = (0..n).map(|r| (x[r * d + j] - mean).powi(2)).sum::<f64>() / n as f64;
        max_var = max_var.max(var);
    }
    let epsilon = if max_var > 0.0 { 1e-9 * max_var } else { 1e-9 };
    variances.iter_mut().for_each(|v| *v += epsilon);

    Ok(GnbModel {
        version: MODEL_VERSION,
        classes: classes.to_vec(),
        priors: counts.iter().map(|&c| c as f64 / n as f64).collect(),
        means,
        variances,
        d,
        epsilon,
    })
}

impl GnbModel {
    /// Unnormalized log posterior of each class for one sample.
    pub fn log_posteriors(&self, row: &[f64]) -> Vec<f64> {
        let d = self.d;
        (0..self.classes.len())
            .map(|c| {
                let mut s = self.priors[c].ln();
                for j in 0..d {
                    let var = self.variances[c * d + j];
                    let diff = row[j] - self.means[c * d + j];
                    s -= 0.5 * (std::f64::consts::TAU * var).ln() + diff * diff / (2.0 * var);
                }
                s
            })
            .collect()
    }
}

pub fn gnb_predict(model: &GnbModel, x: &[f64]) -> Result<Vec<String>> {
    let n = rows_of(x, model.d)?;
    Ok((0..n)
        .map(|r| model.classes[argmax(&model.log_posteriors(&x[r * model.d..(r + 1) * model.d]))].clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_posterior() {
        let x = [0.0, 2.0, 4.0, 6.0];
        let y = ["A", "A", "B", "B"];
        let m = gnb_fit(&x, 1, &y).unwrap();
        assert_eq!(m.means, vec![1.0, 5.0]);
        // Overall variance of [0, 2, 4, 6] is 5, so each class variance is 1 + 5e-9.
        let var = 1.0 + 5e-9;
        assert!((m.variances[0] - var).abs() < 1e-15);
        let lp = m.log_posteriors(&[2.9]);
        let hand = |mu: f64| 0.5f64.ln() - 0.5 * (std::f64::consts::TAU * var).ln() - (2.9 - mu).powi(2) / (2.0 * var);
        assert!((lp[0] - hand(1.0)).abs() < 1e-12);
        assert!((lp[1] - hand(5.0)).abs() < 1e-12);
        assert_eq!(gnb_predict(&m, &[2.9, 3.1]).unwrap(), vec!["A", "B"]);
    }

    #[test]
    fn single_class_always_predicted() {
        let m = gnb_fit(&[1.0, 2.0, 3.0], 1, &["only"; 3]).unwrap();
        assert_eq!(gnb_predict(&m, &[-100.0, 50.0]).unwrap(), vec!["only", "only"]);
    }

    #[test]
    fn empty_class_is_an_error() {
        let classes = vec!["a".to_owned(), "b".to_owned()];
        assert!(gnb_fit_with_classes(&[1.0, 2.0], 1, &["a", "a"], &classes).is_err());
    }

    #[test]
    fn prior_scaling_does_not_change_decisions() {
        let x = [0.0, 1.0, 0.5, 3.0, 4.0, 3.5, 1.8];
        let y = ["a", "a", "a", "b", "b", "b", "b"];
        let m = gnb_fit(&x, 1, &y).unwrap();
        let mut scaled = m.clone();
        let total: f64 = m.priors.iter().map(|p| p * 7.0).sum();
        scaled.priors = m.priors.iter().map(|p| p * 7.0 / total).collect();
        let q: Vec<f64> = (0..50).map(|i| f64::from(i) / 10.0 - 0.5).collect();
        assert_eq!(gnb_predict(&m, &q).unwrap(), gnb_predict(&scaled, &q).unwrap());
    }
}
