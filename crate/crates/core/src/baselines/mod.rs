//! Comparison classifiers: Gaussian naive Bayes, one-vs-rest logistic
//! regression trained by SGD, and a random forest.
//!
//! All three take row-major samples (`x.len() == n * d`) and string labels.
//! Class lists are kept sorted, which is also the tie-break order.

mod forest;
mod gnb;
mod sgd;

pub use forest::{bootstrap_indices, rf_fit, rf_predict, Node, RandomForest, RfParams, Tree};
pub use gnb::{gnb_fit, gnb_fit_with_classes, gnb_predict, GnbModel};
pub use sgd::{sgd_fit, sgd_predict, SgdClassifier};

use std::collections::BTreeSet;

use crate::error::{Error, Result};

pub const MODEL_VERSION: u32 = 1;

pub(crate) fn check_shape(x: &[f64], d: usize, n_labels: usize) -> Result<usize> {
    if d == 0 {
        return Err(Error::shape("samples need at least one feature"));
    }
    if x.len() % d != 0 || x.len() / d != n_labels {
        return Err(Error::shape(format!(
            "{} values with width {d} do not match {n_labels} labels",
            x.len()
        )));
    }
    if n_labels == 0 {
        return Err(Error::validation("no training samples"));
    }
    Ok(n_labels)
}

pub(crate) fn rows_of(x: &[f64], d: usize) -> Result<usize> {
    if d == 0 || x.len() % d != 0 {
        return Err(Error::shape(format!("{} values are not rows of width {d}", x.len())));
    }
    Ok(x.len() / d)
}

/// Sorted class list and each label's index into it.
pub(crate) fn encode_labels<S: AsRef<str>>(labels: &[S]) -> (Vec<String>, Vec<usize>) {
    let classes: Vec<String> = labels
        .iter()
        .map(|l| l.as_ref().to_owned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let ids = labels
        .iter()
        .map(|l| classes.binary_search_by(|c| c.as_str().cmp(l.as_ref())).expect("present"))
        .collect();
    (classes, ids)
}

/// Index of the largest value; the first wins ties.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
