//! Plan classification from predicted prices, confusion counts, metrics, and
//! model comparison tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::country::CountryCode;
use crate::error::{Error, Result};
use crate::preprocess::ScalerParams;
use crate::synthgen::PlanCatalog;

/// Nearest plan to an unscaled price; exact ties go to the cheaper plan.
pub fn nearest_plan(price: f64, catalog: &PlanCatalog, country: CountryCode) -> Result<String> {
    let plans = catalog.plans(country)?;
    let mut best = 0;
    for (i, p) in plans.iter().enumerate() {
        if (p.price - price).abs() < (plans[best].price - price).abs() {
            best = i;
        }
    }
    Ok(plans[best].label.clone())
}

/// Unscales a predicted target value with `scaler` and maps it to a plan.
pub fn price_to_class(
    predicted_scaled: f64,
    catalog: &PlanCatalog,
    country: CountryCode,
    scaler: &ScalerParams,
    target: &str,
) -> Result<String> {
    nearest_plan(scaler.invert(target, predicted_scaled), catalog, country)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub classes: Vec<String>,
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    #[serde(rename = "fn")]
    pub fn_: Vec<u64>,
    pub tn: Vec<u64>,
    pub n: u64,
}

impl ConfusionCounts {
    /// Two-class counts with the second class as positive.
    pub fn binary(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        ConfusionCounts {
            classes: vec!["negative".into(), "positive".into()],
            tp: vec![tn, tp],
            fp: vec![fn_, fp],
            fn_: vec![fp, fn_],
            tn: vec![tp, tn],
            n: tp + fp + fn_ + tn,
        }
    }

    pub fn support(&self, c: usize) -> u64 {
        self.tp[c] + self.fn_[c]
    }
}

pub fn confusion<S: AsRef<str>, T: AsRef<str>>(
    predicted: &[S],
    truth: &[T],
    classes: &[String],
) -> Result<ConfusionCounts> {
    if predicted.len() != truth.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} true labels",
            predicted.len(),
            truth.len()
        )));
    }
    let index: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let lookup = |l: &str| {
        index
            .get(l)
            .copied()
            .ok_or_else(|| Error::validation(format!("label `{l}` is not one of the classes")))
    };
    let k = classes.len();
    let mut tp = vec![0; k];
    let mut fp = vec![0; k];
    let mut fn_ = vec![0; k];
    for (p, t) in predicted.iter().zip(truth) {
        let (p, t) = (lookup(p.as_ref())?, lookup(t.as_ref())?);
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let n = predicted.len() as u64;
    let tn = (0..k).map(|c| n - tp[c] - fp[c] - fn_[c]).collect();
    Ok(ConfusionCounts {
        classes: classes.to_vec(),
        tp,
        fp,
        fn_,
        tn,
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Averaging {
    /// Two classes; the second is positive.
    Binary,
    WeightedMacro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub averaging: Averaging,
    pub per_class: Vec<ClassMetrics>,
    pub counts: ConfusionCounts,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// F1 from counts: TP / (TP + (FP + FN) / 2).
pub fn f1_from_counts(tp: u64, fp: u64, fn_: u64) -> f64 {
    let den = tp as f64 + 0.5 * (fp + fn_) as f64;
    if den == 0.0 {
        0.0
    } else {
        tp as f64 / den
    }
}

/// F1 as the harmonic mean 2PR / (P + R).
pub fn f1_from_pr(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn metrics(counts: &ConfusionCounts, averaging: Averaging) -> Result<MetricsReport> {
    if counts.n == 0 {
        return Err(Error::validation("metrics of zero samples"));
    }
    let k = counts.classes.len();
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let precision = ratio(counts.tp[c], counts.tp[c] + counts.fp[c]);
            let recall = ratio(counts.tp[c], counts.tp[c] + counts.fn_[c]);
            ClassMetrics {
                class: counts.classes[c].clone(),
                precision,
                recall,
                f1: f1_from_pr(precision, recall),
                support: counts.support(c),
            }
        })
        .collect();
    let (accuracy, precision, recall, f1) = match averaging {
        Averaging::Binary => {
            if k != 2 {
                return Err(Error::validation(format!("binary metrics need two classes, got {k}")));
            }
            let (tp, fp, fn_, tn) = (counts.tp[1], counts.fp[1], counts.fn_[1], counts.tn[1]);
            let p = ratio(tp, tp + fp);
            let r = ratio(tp, tp + fn_);
            (ratio(tp + tn, counts.n), p, r, f1_from_pr(p, r))
        }
        Averaging::WeightedMacro => {
            let correct: u64 = counts.tp.iter().sum();
            let w = |f: fn(&ClassMetrics) -> f64| {
                per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / counts.n as f64
            };
            (
                ratio(correct, counts.n),
                w(|m| m.precision),
                w(|m| m.recall),
                w(|m| m.f1),
            )
        }
    };
    Ok(MetricsReport {
        accuracy,
        precision,
        recall,
        f1,
        averaging,
        per_class,
        counts: counts.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSet {
    Select,
    Full,
}

impl FeatureSet {
    pub fn name(self) -> &'static str {
        match self {
            FeatureSet::Select => "select",
            FeatureSet::Full => "full",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub features: String,
    pub accuracy: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

/// Rows sorted by accuracy, best first; ties keep input order.
pub fn compare_models(runs: &[(String, FeatureSet, MetricsReport)]) -> Result<ComparisonTable> {
    if runs.is_empty() {
        return Err(Error::validation("nothing to compare"));
    }
    let mut rows: Vec<ComparisonRow> = runs
        .iter()
        .map(|(model, fs, m)| ComparisonRow {
            model: model.clone(),
            features: fs.name().to_owned(),
            accuracy: m.accuracy,
            f1: m.f1,
            precision: m.precision,
            recall: m.recall,
        })
        .collect();
    rows.sort_by(|a, b| b.accuracy.total_cmp(&a.accuracy));
    Ok(ComparisonTable { rows })
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,features,accuracy,f1,precision,recall\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:.4},{:.4},{:.4},{:.4}",
                r.model, r.features, r.accuracy, r.f1, r.precision, r.recall
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let header = ["Model", "Features", "Accuracy", "F1", "Precision", "Recall"];
        let cells: Vec<[String; 6]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.model.clone(),
                    r.features.clone(),
                    format!("{:.4}", r.accuracy),
                    format!("{:.4}", r.f1),
                    format!("{:.4}", r.precision),
                    format!("{:.4}", r.recall),
                ]
            })
            .collect();
        let mut widths = header.map(|h| h.chars().count());
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |row: &[String; 6]| {
            let mut s = String::new();
            for (i, (c, w)) in row.iter().zip(widths).enumerate() {
                if i < 2 {
                    let _ = write!(s, "{c:<w$}");
                } else {
                    let _ = write!(s, "{c:>w$}");
                }
                if i < 5 {
                    s.push_str("  ");
                }
            }
            s.push('\n');
            s
        };
        let mut out = line(&header.map(str::to_owned));
        out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 10));
        out.push('\n');
        for row in &cells {
            out.push_str(&line(row));
        }
        out
    }
}

/// Published results measured on proprietary data, shipped for side-by-side
/// display only. Nothing here is ever recomputed.
pub fn reference_rows() -> Vec<ComparisonRow> {
    let row = |model: &str, features: &str, v: [f64; 4]| ComparisonRow {
        model: model.to_owned(),
        features: features.to_owned(),
        accuracy: v[0],
        f1: v[1],
        precision: v[2],
        recall: v[3],
    };
    vec![
        row("ANN original (reference)", "select", [0.8042, 0.4853, 0.8305, 0.5905]),
        row("ANN final (reference)", "select", [0.9506, 0.9182, 0.9394, 0.9013]),
        row("ANN original (reference)", "full", [0.7948, 0.5470, 0.7845, 0.5511]),
        row("ANN final (reference)", "full", [0.9443, 0.9058, 0.9278, 0.8958]),
        row("SGD (reference)", "select", [0.7666, 0.4106, 0.8994, 0.4719]),
        row("Gaussian NB (reference)", "select", [0.7416, 0.5046, 0.8994, 0.5489]),
        row("Random Forest (reference)", "select", [0.8984, 0.7146, 0.8994, 0.6781]),
    ]
}
