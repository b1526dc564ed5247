//! Numeric feature matrix and the transformations that prepare it for models:
//! outlier removal, standardization, log + min-max scaling, one-hot encoding
//! and seeded train/validation/test splitting.
//!
//! Scalers and encoders are fit on one set of rows (normally the training
//! split) and applied everywhere through [`apply_scaler`] and
//! [`OneHotEncoder::transform`].

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ColumnKind {
    Numeric,
    /// Cell values index into `labels`.
    Categorical { labels: Vec<String> },
    /// Binary member of the one-hot group `group`.
    OneHot { group: String, label: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

impl Column {
    pub fn numeric(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Numeric,
        }
    }

    /// Builds a categorical column from raw labels. The dictionary is the
    /// sorted set of distinct labels.
    pub fn categorical<S: AsRef<str>>(name: impl Into<String>, raw: &[S]) -> (Self, Vec<f64>) {
        let mut labels: Vec<String> = raw.iter().map(|s| s.as_ref().to_owned()).collect();
        labels.sort();
        labels.dedup();
        let codes = raw
            .iter()
            .map(|s| labels.binary_search_by(|l| l.as_str().cmp(s.as_ref())).unwrap() as f64)
            .collect();
        (
            Self {
                name: name.into(),
                kind: ColumnKind::Categorical { labels },
            },
            codes,
        )
    }

    pub fn group(&self) -> Option<&str> {
        match &self.kind {
            ColumnKind::OneHot { group, .. } => Some(group),
            _ => None,
        }
    }
}

/// Dense row-major matrix of named columns with one designated target column.
///
/// Invariants, checked on construction: every value is finite, the target is
/// a numeric column, categorical cells are valid dictionary indices, and the
/// members of each one-hot group sum to exactly 1 on every row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    columns: Vec<Column>,
    values: Vec<f64>,
    n_rows: usize,
    target: String,
}

impl FeatureMatrix {
    pub fn new(columns: Vec<Column>, values: Vec<f64>, n_rows: usize, target: impl Into<String>) -> Result<Self> {
        let m = Self {
            columns,
            values,
            n_rows,
            target: target.into(),
        };
        m.validate()?;
        Ok(m)
    }

    /// Assembles a matrix from column-major data.
    pub fn from_columns(columns: Vec<(Column, Vec<f64>)>, target: impl Into<String>) -> Result<Self> {
        let n_rows = columns.first().map_or(0, |(_, v)| v.len());
        if let Some((c, v)) = columns.iter().find(|(_, v)| v.len() != n_rows) {
            return Err(Error::shape(format!("column `{}` has {} rows, expected {n_rows}", c.name, v.len())));
        }
        let n_cols = columns.len();
        let mut values = vec![0.0; n_rows * n_cols];
        for (j, (_, col)) in columns.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                values[i * n_cols + j] = *v;
            }
        }
        Self::new(columns.into_iter().map(|(c, _)| c).collect(), values, n_rows, target)
    }

    fn validate(&self) -> Result<()> {
        let n_cols = self.columns.len();
        if self.values.len() != self.n_rows * n_cols {
            return Err(Error::shape(format!(
                "{} values for {} rows x {n_cols} columns",
                self.values.len(),
                self.n_rows
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::validation(format!("duplicate column `{}`", c.name)));
            }
        }
        match self.columns.iter().find(|c| c.name == self.target) {
            Some(Column {
                kind: ColumnKind::Numeric, ..
            }) => {}
            Some(_) => return Err(Error::validation(format!("target `{}` is not numeric", self.target))),
            None => return Err(Error::validation(format!("target `{}` not present", self.target))),
        }
        if let Some(pos) = self.values.iter().position(|v| !v.is_finite()) {
            let (r, c) = (pos / n_cols.max(1), pos % n_cols.max(1));
            return Err(Error::validation(format!(
                "non-finite value at row {r}, column `{}`",
                self.columns[c].name
            )));
        }
        for (j, c) in self.columns.iter().enumerate() {
            if let ColumnKind::Categorical { labels } = &c.kind {
                for r in 0..self.n_rows {
                    let v = self.values[r * n_cols + j];
                    if v < 0.0 || v.fract() != 0.0 || v as usize >= labels.len() {
                        return Err(Error::validation(format!("row {r}: `{v}` is not a label index of `{}`", c.name)));
                    }
                }
            }
        }
        for (group, members) in self.groups() {
            for r in 0..self.n_rows {
                let row = self.row(r);
                let sum: f64 = members.iter().map(|&j| row[j]).sum();
                if sum != 1.0 || members.iter().any(|&j| row[j] != 0.0 && row[j] != 1.0) {
                    return Err(Error::validation(format!("row {r}: one-hot group `{group}` does not sum to 1")));
                }
            }
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn target_name(&self) -> &str {
        &self.target
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::validation(format!("no column named `{name}`")))
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let n = self.columns.len();
        &self.values[r * n..(r + 1) * n]
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self.column_index(name)?;
        Ok(self.column_at(j))
    }

    pub fn column_at(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows).map(|r| self.values[r * self.columns.len() + j]).collect()
    }

    pub fn target(&self) -> Vec<f64> {
        self.column(&self.target).expect("target validated on construction")
    }

    /// One-hot groups and the indices of their member columns, in column order.
    pub fn groups(&self) -> BTreeMap<String, Vec<usize>> {
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (j, c) in self.columns.iter().enumerate() {
            if let Some(g) = c.group() {
                groups.entry(g.to_owned()).or_default().push(j);
            }
        }
        groups
    }

    /// Columns usable as model inputs: everything except the target and raw
    /// categorical columns.
    pub fn input_names(&self) -> Vec<String> {
        self.columns
            .iter()
            .filter(|c| c.name != self.target && !matches!(c.kind, ColumnKind::Categorical { .. }))
            .map(|c| c.name.clone())
            .collect()
    }

    /// Row-major `rows.len() x names.len()` block.
    pub fn gather(&self, rows: &[usize], names: &[String]) -> Result<Vec<f64>> {
        let idx: Vec<usize> = names.iter().map(|n| self.column_index(n)).collect::<Result<_>>()?;
        let mut out = Vec::with_capacity(rows.len() * idx.len());
        for &r in rows {
            let row = self.row(r);
            out.extend(idx.iter().map(|&j| row[j]));
        }
        Ok(out)
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let n = self.columns.len();
        let mut values = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        FeatureMatrix {
            columns: self.columns.clone(),
            values,
            n_rows: rows.len(),
            target: self.target.clone(),
        }
    }

    /// Keeps the named columns (plus the target, always) in matrix order.
    pub fn select_columns(&self, names: &[String]) -> Result<FeatureMatrix> {
        for n in names {
            self.column_index(n)?;
        }
        let keep: Vec<usize> = (0..self.columns.len())
            .filter(|&j| self.columns[j].name == self.target || names.contains(&self.columns[j].name))
            .collect();
        let mut values = Vec::with_capacity(self.n_rows * keep.len());
        for r in 0..self.n_rows {
            let row = self.row(r);
            values.extend(keep.iter().map(|&j| row[j]));
        }
        FeatureMatrix::new(
            keep.iter().map(|&j| self.columns[j].clone()).collect(),
            values,
            self.n_rows,
            self.target.clone(),
        )
    }

    fn numeric_indices(&self, names: &[String]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                let j = self.column_index(n)?;
                match self.columns[j].kind {
                    ColumnKind::Numeric => Ok(j),
                    _ => Err(Error::validation(format!("column `{n}` is not numeric"))),
                }
            })
            .collect()
    }

    fn map_columns(&self, f: impl Fn(usize, f64) -> f64) -> FeatureMatrix {
        let n = self.columns.len();
        let values = self.values.iter().enumerate().map(|(i, v)| f(i % n, *v)).collect();
        FeatureMatrix {
            columns: self.columns.clone(),
            values,
            n_rows: self.n_rows,
            target: self.target.clone(),
        }
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    pub dropped_rows: Vec<usize>,
}

/// Drops rows where any of `columns` lies more than `z_threshold` population
/// standard deviations from its column mean. Zero-variance columns never
/// cause a drop.
pub fn remove_outliers(
    matrix: &FeatureMatrix,
    columns: &[String],
    z_threshold: f64,
) -> Result<(FeatureMatrix, OutlierReport)> {
    if !(z_threshold > 0.0) {
        return Err(Error::validation(format!("z threshold must be positive, got {z_threshold}")));
    }
    let idx = matrix.numeric_indices(columns)?;
    let stats: Vec<(usize, f64, f64)> = idx
        .iter()
        .map(|&j| {
            let (m, s) = mean_std(&matrix.column_at(j));
            (j, m, s)
        })
        .collect();
    let mut keep = Vec::with_capacity(matrix.n_rows);
    let mut dropped = Vec::new();
    for r in 0..matrix.n_rows {
        let row = matrix.row(r);
        let outlier = stats
            .iter()
            .any(|&(j, mean, std)| std > 0.0 && (row[j] - mean).abs() > z_threshold * std);
        if outlier {
            dropped.push(r);
        } else {
            keep.push(r);
        }
    }
    if keep.is_empty() && matrix.n_rows > 0 {
        return Err(Error::validation("outlier removal dropped every row"));
    }
    if !dropped.is_empty() {
        log::info!("removed {} outlier rows (z > {z_threshold})", dropped.len());
    }
    Ok((matrix.select_rows(&keep), OutlierReport { dropped_rows: dropped }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Scale {
    MinMax { min: f64, max: f64, log_applied: bool },
    Standard { mean: f64, std: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaler {
    pub name: String,
    #[serde(flatten)]
    pub scale: Scale,
}

impl ColumnScaler {
    pub fn is_degenerate(&self) -> bool {
        match self.scale {
            Scale::MinMax { min, max, .. } => max == min,
            Scale::Standard { std, .. } => std == 0.0,
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        match self.scale {
            Scale::MinMax { min, max, log_applied } => {
                let x = if log_applied { x.ln_1p() } else { x };
                if max == min {
                    0.0
                } else {
                    (x - min) / (max - min)
                }
            }
            Scale::Standard { mean, std } => {
                if std == 0.0 {
                    0.0
                } else {
                    (x - mean) / std
                }
            }
        }
    }

    /// Inverse of [`ColumnScaler::apply`]. Degenerate scalers map everything
    /// back to their single fitted value.
    pub fn invert(&self, y: f64) -> f64 {
        match self.scale {
            Scale::MinMax { min, max, log_applied } => {
                let x = min + y * (max - min);
                if log_applied {
                    x.exp_m1()
                } else {
                    x
                }
            }
            Scale::Standard { mean, std } => mean + y * std,
        }
    }
}

/// Ordered per-column transforms. Applying walks the list in order, so a
/// standardization followed by a min-max of the same column composes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub columns: Vec<ColumnScaler>,
}

impl ScalerParams {
    pub fn extend(&mut self, other: ScalerParams) {
        self.columns.extend(other.columns);
    }

    /// The last transform registered for `name`.
    pub fn get(&self, name: &str) -> Option<&ColumnScaler> {
        self.columns.iter().rev().find(|c| c.name == name)
    }

    /// Maps a fully scaled value of `name` back to raw units, undoing every
    /// registered transform in reverse.
    pub fn invert(&self, name: &str, y: f64) -> f64 {
        self.columns
            .iter()
            .rev()
            .filter(|c| c.name == name)
            .fold(y, |acc, c| c.invert(acc))
    }

    pub fn degenerate(&self) -> Vec<&str> {
        self.columns
            .iter()
            .filter(|c| c.is_degenerate())
            .map(|c| c.name.as_str())
            .collect()
    }
}

/// Fits population mean/std on `rows` for each column.
pub fn fit_standardize(matrix: &FeatureMatrix, rows: &[usize], columns: &[String]) -> Result<ScalerParams> {
    let idx = matrix.numeric_indices(columns)?;
    let columns = idx
        .iter()
        .map(|&j| {
            let vals: Vec<f64> = rows.iter().map(|&r| matrix.row(r)[j]).collect();
            let (mean, std) = if vals.is_empty() { (0.0, 0.0) } else { mean_std(&vals) };
            ColumnScaler {
                name: matrix.columns[j].name.clone(),
                scale: Scale::Standard { mean, std },
            }
        })
        .collect();
    Ok(ScalerParams { columns })
}

/// Standardizes columns to mean 0 and population std 1; constant columns
/// become all zeros.
pub fn standardize(matrix: &FeatureMatrix, columns: &[String]) -> Result<(FeatureMatrix, ScalerParams)> {
    let all: Vec<usize> = (0..matrix.n_rows).collect();
    let params = fit_standardize(matrix, &all, columns)?;
    Ok((apply_scaler(matrix, &params)?, params))
}

/// Fits min-max ranges on `rows`. Columns in `log_columns` are first mapped
/// through `ln(1 + x)`; their values must exceed -1.
pub fn fit_minmax(
    matrix: &FeatureMatrix,
    rows: &[usize],
    columns: &[String],
    log_columns: &[String],
) -> Result<ScalerParams> {
    let idx = matrix.numeric_indices(columns)?;
    let mut out = Vec::with_capacity(idx.len());
    for &j in &idx {
        let name = &matrix.columns[j].name;
        let log_applied = log_columns.contains(name);
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &r in rows {
            let mut x = matrix.row(r)[j];
            if log_applied {
                if x <= -1.0 {
                    return Err(Error::validation(format!("`{name}` value {x} outside the log1p domain")));
                }
                x = x.ln_1p();
            }
            min = min.min(x);
            max = max.max(x);
        }
        if rows.is_empty() {
            min = 0.0;
            max = 0.0;
        }
        if max == min {
            log::warn!("column `{name}` is constant ({min}); min-max scaling maps it to 0");
        }
        out.push(ColumnScaler {
            name: name.clone(),
            scale: Scale::MinMax { min, max, log_applied },
        });
    }
    Ok(ScalerParams { columns: out })
}

/// Fits and applies min-max scaling on all rows.
pub fn minmax_scale(
    matrix: &FeatureMatrix,
    columns: &[String],
    log_columns: &[String],
) -> Result<(FeatureMatrix, ScalerParams)> {
    let all: Vec<usize> = (0..matrix.n_rows).collect();
    let params = fit_minmax(matrix, &all, columns, log_columns)?;
    Ok((apply_scaler(matrix, &params)?, params))
}

/// Applies stored transforms. Values outside the fitted range extrapolate
/// linearly and are not clipped.
pub fn apply_scaler(matrix: &FeatureMatrix, params: &ScalerParams) -> Result<FeatureMatrix> {
    let mut per_column: Vec<Vec<&ColumnScaler>> = vec![Vec::new(); matrix.n_cols()];
    for c in &params.columns {
        let j = matrix.column_index(&c.name)?;
        if matrix.columns[j].kind != ColumnKind::Numeric {
            return Err(Error::validation(format!("cannot scale non-numeric column `{}`", c.name)));
        }
        per_column[j].push(c);
    }
    let out = matrix.map_columns(|j, v| per_column[j].iter().fold(v, |acc, s| s.apply(acc)));
    out.validate()?;
    Ok(out)
}

/// Label vocabulary per categorical column, learned from fitting rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneHotEncoder {
    pub groups: Vec<(String, Vec<String>)>,
}

impl OneHotEncoder {
    pub fn fit(matrix: &FeatureMatrix, rows: &[usize], columns: &[String]) -> Result<Self> {
        let mut groups = Vec::with_capacity(columns.len());
        for name in columns {
            let j = matrix.column_index(name)?;
            let ColumnKind::Categorical { labels } = &matrix.columns[j].kind else {
                return Err(Error::validation(format!("column `{name}` is not categorical")));
            };
            let mut seen: Vec<String> = rows
                .iter()
                .map(|&r| labels[matrix.row(r)[j] as usize].clone())
                .collect();
            seen.sort();
            seen.dedup();
            groups.push((name.clone(), seen));
        }
        Ok(Self { groups })
    }

    /// Replaces each encoded column, in place, by one binary column per label
    /// named `column=label`, in lexicographic label order.
    pub fn transform(&self, matrix: &FeatureMatrix) -> Result<FeatureMatrix> {
        let n_old = matrix.n_cols();
        // For each old column: None (copy) or Some(index in self.groups).
        let mut plan: Vec<Option<usize>> = vec![None; n_old];
        for (g, (name, _)) in self.groups.iter().enumerate() {
            let j = matrix.column_index(name)?;
            if !matches!(matrix.columns[j].kind, ColumnKind::Categorical { .. }) {
                return Err(Error::validation(format!("column `{name}` is not categorical")));
            }
            plan[j] = Some(g);
        }
        let mut columns = Vec::new();
        for (j, c) in matrix.columns.iter().enumerate() {
            match plan[j] {
                None => columns.push(c.clone()),
                Some(g) => {
                    let (group, labels) = &self.groups[g];
                    columns.extend(labels.iter().map(|l| Column {
                        name: format!("{group}={l}"),
                        kind: ColumnKind::OneHot {
                            group: group.clone(),
                            label: l.clone(),
                        },
                    }));
                }
            }
        }
        let mut values = Vec::with_capacity(matrix.n_rows * columns.len());
        for r in 0..matrix.n_rows {
            let row = matrix.row(r);
            for (j, c) in matrix.columns.iter().enumerate() {
                match plan[j] {
                    None => values.push(row[j]),
                    Some(g) => {
                        let ColumnKind::Categorical { labels: dict } = &c.kind else { unreachable!() };
                        let label = &dict[row[j] as usize];
                        let (group, labels) = &self.groups[g];
                        let hit = labels.binary_search(label).map_err(|_| {
                            Error::validation(format!("column `{group}`: label `{label}` unseen when fitting"))
                        })?;
                        values.extend((0..labels.len()).map(|k| if k == hit { 1.0 } else { 0.0 }));
                    }
                }
            }
        }
        FeatureMatrix::new(columns, values, matrix.n_rows, matrix.target.clone())
    }

    pub fn width(&self) -> usize {
        self.groups.iter().map(|(_, l)| l.len()).sum()
    }
}

/// Fits on every row and encodes.
pub fn one_hot_encode(matrix: &FeatureMatrix, categorical_columns: &[String]) -> Result<FeatureMatrix> {
    let all: Vec<usize> = (0..matrix.n_rows).collect();
    OneHotEncoder::fit(matrix, &all, categorical_columns)?.transform(matrix)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl SplitIndices {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Seeded shuffle, then contiguous assignment of `round(n * ratio)` rows to
/// train and validation; test takes the remainder.
pub fn split(n_rows: usize, ratios: (f64, f64, f64), seed: u64) -> Result<SplitIndices> {
    let (a, b, c) = ratios;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::validation(format!(
            "split ratios must be positive and sum to 1, got ({a}, {b}, {c})"
        )));
    }
    let n_train = (n_rows as f64 * a).round() as usize;
    let n_val = (n_rows as f64 * b).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n_rows {
        return Err(Error::validation(format!("{n_rows} rows cannot fill three non-empty splits")));
    }
    let mut order: Vec<usize> = (0..n_rows).collect();
    order.shuffle(&mut rng::stream(seed, "split"));
    let mut train = order[..n_train].to_vec();
    let mut validation = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices {
        train,
        validation,
        test,
        seed,
    })
}

/// JSON sidecar stored next to a cached matrix CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSidecar {
    pub columns: Vec<Column>,
    pub target_name: String,
    pub scaler_params: ScalerParams,
    pub split_indices: Option<SplitIndices>,
    pub seed: u64,
}

pub fn write_matrix_csv<W: Write>(w: W, matrix: &FeatureMatrix) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(matrix.column_names())?;
    let mut record = Vec::with_capacity(matrix.n_cols());
    for r in 0..matrix.n_rows {
        record.clear();
        for (c, v) in matrix.columns.iter().zip(matrix.row(r)) {
            record.push(match &c.kind {
                ColumnKind::Categorical { labels } => labels[*v as usize].clone(),
                _ => v.to_string(),
            });
        }
        wtr.write_record(&record)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn read_matrix_csv<R: Read>(rdr: R, sidecar: &MatrixSidecar) -> Result<FeatureMatrix> {
    let mut reader = csv::Reader::from_reader(rdr);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let expected: Vec<&str> = sidecar.columns.iter().map(|c| c.name.as_str()).collect();
    if header != expected {
        return Err(Error::validation("matrix CSV header does not match its sidecar"));
    }
    let mut values = Vec::new();
    let mut n_rows = 0;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        for (cell, c) in record.iter().zip(&sidecar.columns) {
            let v = match &c.kind {
                ColumnKind::Categorical { labels } => labels
                    .iter()
                    .position(|l| l == cell)
                    .ok_or_else(|| Error::validation(format!("line {line}: unknown label `{cell}`")))?
                    as f64,
                _ => cell
                    .parse()
                    .map_err(|_| Error::validation(format!("line {line}: `{cell}` is not a number")))?,
            };
            values.push(v);
        }
        n_rows += 1;
    }
    FeatureMatrix::new(sidecar.columns.clone(), values, n_rows, sidecar.target_name.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn numeric(cols: &[(&str, &[f64])], target: &str) -> FeatureMatrix {
        FeatureMatrix::from_columns(
            cols.iter().map(|(n, v)| (Column::numeric(*n), v.to_vec())).collect(),
            target,
        )
        .unwrap()
    }

    #[test]
    fn construction_checks_invariants() {
        assert!(FeatureMatrix::new(vec![Column::numeric("y")], vec![f64::NAN], 1, "y").is_err());
        assert!(FeatureMatrix::new(vec![Column::numeric("y")], vec![1.0], 1, "z").is_err());
        let bad_group = vec![
            Column::numeric("y"),
            Column {
                name: "g=a".into(),
                kind: ColumnKind::OneHot { group: "g".into(), label: "a".into() },
            },
            Column {
                name: "g=b".into(),
                kind: ColumnKind::OneHot { group: "g".into(), label: "b".into() },
            },
        ];
        assert!(FeatureMatrix::new(bad_group.clone(), vec![0.0, 1.0, 1.0], 1, "y").is_err());
        assert!(FeatureMatrix::new(bad_group, vec![0.0, 0.0, 1.0], 1, "y").is_ok());
    }

    #[test]
    fn outlier_row_dropped() {
        let m = numeric(&[("x", &[1.0, 1.0, 1.0, 1.0, 100.0]), ("y", &[0.0; 5])], "y");
        // The 100 sits exactly 2 population standard deviations from the mean.
        let (kept, report) = remove_outliers(&m, &names(&["x"]), 1.5).unwrap();
        assert_eq!(report.dropped_rows, vec![4]);
        assert_eq!(kept.n_rows(), 4);
        let (kept, report) = remove_outliers(&m, &names(&["x"]), 4.0).unwrap();
        assert!(report.dropped_rows.is_empty());
        assert_eq!(kept, m);
    }

    #[test]
    fn outlier_z_is_population_std() {
        let x = [1.0, 1.0, 1.0, 1.0, 100.0];
        let (mean, std) = mean_std(&x);
        assert!((mean - 20.8).abs() < 1e-12);
        assert!((std - 39.6).abs() < 1e-12);
    }

    #[test]
    fn outlier_infinite_threshold_and_constant_column() {
        let m = numeric(&[("x", &[1.0, 2.0, 1000.0]), ("c", &[5.0; 3]), ("y", &[0.0; 3])], "y");
        let (kept, _) = remove_outliers(&m, &names(&["x", "c"]), f64::INFINITY).unwrap();
        assert_eq!(kept, m);
        let (kept, _) = remove_outliers(&m, &names(&["c"]), 0.1).unwrap();
        assert_eq!(kept.n_rows(), 3);
        assert!(remove_outliers(&m, &names(&["x"]), 0.0).is_err());
    }

    #[test]
    fn standardize_hand_values() {
        let m = numeric(&[("x", &[1.0, 2.0, 3.0]), ("c", &[4.0; 3])], "x");
        let (s, params) = standardize(&m, &names(&["x", "c"])).unwrap();
        let x = s.column("x").unwrap();
        for (a, b) in x.iter().zip([-1.2247, 0.0, 1.2247]) {
            assert!((a - b).abs() < 1e-4);
        }
        assert_eq!(s.column("c").unwrap(), vec![0.0; 3]);
        assert_eq!(params.degenerate(), vec!["c"]);
    }

    #[test]
    fn minmax_hand_values() {
        let m = numeric(&[("x", &[2.0, 4.0, 6.0]), ("c", &[5.0; 3])], "x");
        let (s, params) = minmax_scale(&m, &names(&["x", "c"]), &[]).unwrap();
        assert_eq!(s.column("x").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(s.column("c").unwrap(), vec![0.0; 3]);
        assert_eq!(params.degenerate(), vec!["c"]);
    }

    #[test]
    fn minmax_log_columns() {
        let e1 = std::f64::consts::E - 1.0;
        let m = numeric(&[("x", &[0.0, e1])], "x");
        let (s, params) = minmax_scale(&m, &names(&["x"]), &names(&["x"])).unwrap();
        assert_eq!(s.column("x").unwrap(), vec![0.0, 1.0]);
        assert_eq!(
            params.columns[0].scale,
            Scale::MinMax { min: 0.0, max: 1.0, log_applied: true }
        );
        assert!((params.invert("x", 1.0) - e1).abs() < 1e-12);
        let bad = numeric(&[("x", &[-1.5, 1.0])], "x");
        assert!(minmax_scale(&bad, &names(&["x"]), &names(&["x"])).is_err());
    }

    #[test]
    fn apply_scaler_extrapolates_and_degenerates() {
        let fit = numeric(&[("x", &[2.0, 6.0])], "x");
        let (_, params) = minmax_scale(&fit, &names(&["x"]), &[]).unwrap();
        let probe = numeric(&[("x", &[4.0, 8.0])], "x");
        assert_eq!(apply_scaler(&probe, &params).unwrap().column("x").unwrap(), vec![0.5, 1.5]);

        let flat = numeric(&[("x", &[3.0, 3.0])], "x");
        let (_, params) = minmax_scale(&flat, &names(&["x"]), &[]).unwrap();
        assert_eq!(apply_scaler(&probe, &params).unwrap().column("x").unwrap(), vec![0.0, 0.0]);

        let other = numeric(&[("y", &[1.0])], "y");
        assert!(apply_scaler(&other, &params).is_err());
    }

    fn plans_matrix(raw: &[&str]) -> FeatureMatrix {
        let (col, codes) = Column::categorical("plan", raw);
        FeatureMatrix::from_columns(vec![(Column::numeric("y"), vec![0.0; raw.len()]), (col, codes)], "y").unwrap()
    }

    #[test]
    fn one_hot_indicator_vectors() {
        let m = plans_matrix(&["Basic", "Standard", "Premium", "Standard"]);
        let enc = one_hot_encode(&m, &names(&["plan"])).unwrap();
        assert_eq!(enc.column_names(), vec!["y", "plan=Basic", "plan=Premium", "plan=Standard"]);
        assert_eq!(&enc.row(1)[1..], &[0.0, 0.0, 1.0]);
        assert_eq!(enc.groups()["plan"], vec![1, 2, 3]);

        let (lar, codes) = Column::categorical("left_and_returned", &["true", "false", "true"]);
        let m = FeatureMatrix::from_columns(vec![(Column::numeric("y"), vec![0.0; 3]), (lar, codes)], "y").unwrap();
        let enc = one_hot_encode(&m, &names(&["left_and_returned"])).unwrap();
        assert_eq!(enc.n_cols(), 3);
        for r in 0..3 {
            assert_eq!(enc.row(r)[1] + enc.row(r)[2], 1.0);
        }
    }

    #[test]
    fn one_hot_unseen_label_is_error() {
        let train = plans_matrix(&["Basic", "Standard"]);
        let enc = OneHotEncoder::fit(&train, &[0, 1], &names(&["plan"])).unwrap();
        let other = plans_matrix(&["Premium"]);
        let err = enc.transform(&other).unwrap_err().to_string();
        assert!(err.contains("plan") && err.contains("Premium"), "{err}");
    }

    #[test]
    fn split_sizes() {
        let s = split(100, (0.4, 0.3, 0.3), 9).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (40, 30, 30));
        let s = split(3, (0.4, 0.3, 0.3), 9).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (1, 1, 1));
        assert_eq!(split(10, (0.4, 0.3, 0.3), 5).unwrap(), split(10, (0.4, 0.3, 0.3), 5).unwrap());
        assert!(split(2, (0.4, 0.3, 0.3), 5).is_err());
        assert!(split(10, (0.5, 0.3, 0.3), 5).is_err());
    }

    #[test]
    fn matrix_cache_round_trip() {
        let m = plans_matrix(&["Basic", "Standard", "Premium"]);
        let sidecar = MatrixSidecar {
            columns: m.columns().to_vec(),
            target_name: "y".into(),
            scaler_params: ScalerParams::default(),
            split_indices: None,
            seed: 1,
        };
        let mut buf = Vec::new();
        write_matrix_csv(&mut buf, &m).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("y,plan\n0,Basic\n"));
        assert_eq!(read_matrix_csv(buf.as_slice(), &sidecar).unwrap(), m);
        let json = serde_json::to_string(&sidecar).unwrap();
        assert_eq!(serde_json::from_str::<MatrixSidecar>(&json).unwrap(), sidecar);
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 3usize..400, seed in any::<u64>(), a in 0.2f64..0.6, b in 0.1f64..0.3) {
            let c = 1.0 - a - b;
            if let Ok(s) = split(n, (a, b, c), seed) {
                let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
                prop_assert!((s.train.len() as f64 - n as f64 * a).abs() <= 1.0);
                prop_assert!((s.validation.len() as f64 - n as f64 * b).abs() <= 1.0);
                prop_assert!((s.test.len() as f64 - n as f64 * c).abs() <= 1.0);
            }
        }

        #[test]
        fn standardize_idempotent(xs in proptest::collection::vec(-1e3f64..1e3, 2..50)) {
            let m = numeric(&[("x", &xs)], "x");
            let (once, _) = standardize(&m, &names(&["x"])).unwrap();
            let (twice, _) = standardize(&once, &names(&["x"])).unwrap();
            for (a, b) in once.values().iter().zip(twice.values()) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn minmax_train_fit_hits_endpoints(xs in proptest::collection::vec(-1e6f64..1e6, 2..60)) {
            let m = numeric(&[("x", &xs)], "x");
            let rows: Vec<usize> = (0..xs.len()).collect();
            let params = fit_minmax(&m, &rows, &names(&["x"]), &[]).unwrap();
            let s = apply_scaler(&m, &params).unwrap().column("x").unwrap();
            let lo = s.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if params.degenerate().is_empty() {
                prop_assert_eq!(lo, 0.0);
                prop_assert_eq!(hi, 1.0);
            } else {
                prop_assert!(s.iter().all(|v| *v == 0.0));
            }
        }
    }
}
