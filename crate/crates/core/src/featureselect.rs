//! Correlation analysis and feature reduction, plus country similarity.
//!
//! Reduction works on *units*: a plain numeric column, or a whole one-hot
//! group. A group is scored by the strongest target correlation among its
//! members and is kept or dropped as a block.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::country::CountryCode;
use crate::error::{Error, Result};
use crate::ingest::{CountryProfile, CulturalDimension};
use crate::preprocess::{ColumnKind, FeatureMatrix};

pub const DEFAULT_T_LOW: f64 = 0.25;
pub const DEFAULT_T_REDUNDANT: f64 = 0.9;

/// Pearson r, or `None` when either input is constant.
fn pearson_raw(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation coefficient. A constant input yields 0 and a warning.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape(format!("pearson on lengths {} and {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::shape("pearson needs at least two observations"));
    }
    Ok(pearson_raw(x, y).unwrap_or_else(|| {
        log::warn!("pearson: constant input, correlation defined as 0");
        0.0
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    /// One-hot group of each column, if any.
    pub groups: Vec<Option<String>>,
    /// Row-major `names.len()` squared.
    pub r: Vec<f64>,
    /// Columns that were constant; all their correlations are 0.
    pub constant: Vec<String>,
}

impl CorrelationMatrix {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.r[i * self.names.len() + j]
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn by_name(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.get(self.index(a)?, self.index(b)?))
    }

    /// Restricts the matrix to `keep` (in its existing order).
    pub fn restrict(&self, keep: &[String]) -> CorrelationMatrix {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep.contains(&self.names[i])).collect();
        let mut r = Vec::with_capacity(idx.len() * idx.len());
        for &i in &idx {
            r.extend(idx.iter().map(|&j| self.get(i, j)));
        }
        CorrelationMatrix {
            names: idx.iter().map(|&i| self.names[i].clone()).collect(),
            groups: idx.iter().map(|&i| self.groups[i].clone()).collect(),
            r,
            constant: self.constant.iter().filter(|c| keep.contains(c)).cloned().collect(),
        }
    }
}

/// All-pairs Pearson over the non-categorical columns of `matrix`.
pub fn correlation_matrix(matrix: &FeatureMatrix) -> Result<CorrelationMatrix> {
    let rows: Vec<usize> = (0..matrix.n_rows()).collect();
    correlation_matrix_rows(matrix, &rows)
}

/// [`correlation_matrix`] computed on a subset of rows.
pub fn correlation_matrix_rows(matrix: &FeatureMatrix, rows: &[usize]) -> Result<CorrelationMatrix> {
    if rows.len() < 2 {
        return Err(Error::shape("correlation needs at least two rows"));
    }
    let picked: Vec<usize> = matrix
        .columns()
        .iter()
        .enumerate()
        .filter(|(_, c)| !matches!(c.kind, ColumnKind::Categorical { .. }))
        .map(|(j, _)| j)
        .collect();
    let data: Vec<Vec<f64>> = picked
        .iter()
        .map(|&j| rows.iter().map(|&r| matrix.row(r)[j]).collect())
        .collect();
    let n = picked.len();
    let upper: Vec<Vec<Option<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| (i..n).map(|j| pearson_raw(&data[i], &data[j])).collect())
        .collect();
    let mut r = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = upper[i][j - i].unwrap_or(0.0);
            r[i * n + j] = v;
            r[j * n + i] = v;
        }
    }
    let constant: Vec<String> = (0..n)
        .filter(|&i| upper[i][0].is_none())
        .map(|i| matrix.columns()[picked[i]].name.clone())
        .collect();
    for c in &constant {
        log::warn!("column `{c}` is constant; its correlations are defined as 0");
    }
    Ok(CorrelationMatrix {
        names: picked.iter().map(|&j| matrix.columns()[j].name.clone()).collect(),
        groups: picked.iter().map(|&j| matrix.columns()[j].group().map(str::to_owned)).collect(),
        r,
        constant,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowTargetDrop {
    /// Column name, or group name for one-hot groups.
    pub feature: String,
    pub members: Vec<String>,
    /// Signed correlation of the strongest member with the target.
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedundantDrop {
    pub feature: String,
    pub members: Vec<String>,
    pub kept_partner: String,
    /// Strongest absolute member-to-member correlation between the two.
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionReport {
    pub target: String,
    pub t_low: f64,
    pub t_redundant: f64,
    /// Surviving columns in matrix order, target excluded.
    pub kept: Vec<String>,
    pub dropped_low_target: Vec<LowTargetDrop>,
    pub dropped_redundant: Vec<RedundantDrop>,
}

impl ReductionReport {
    pub fn dropped_columns(&self) -> Vec<String> {
        self.dropped_low_target
            .iter()
            .flat_map(|d| d.members.iter().cloned())
            .chain(self.dropped_redundant.iter().flat_map(|d| d.members.iter().cloned()))
            .collect()
    }
}

struct Unit {
    name: String,
    members: Vec<usize>,
    score: f64,
    signed: f64,
}

/// Two-stage correlation filter.
///
/// 1. Drop every unit whose |r| with the target is below `t_low`.
/// 2. Visit survivors from strongest to weakest target correlation (ties by
///    name) and drop any unit correlating above `t_redundant` with an already
///    kept unit.
pub fn reduce_features(
    corr: &CorrelationMatrix,
    target: &str,
    t_low: f64,
    t_redundant: f64,
) -> Result<ReductionReport> {
    for (label, t) in [("t_low", t_low), ("t_redundant", t_redundant)] {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::validation(format!("{label} must lie in [0, 1], got {t}")));
        }
    }
    let ti = corr
        .index(target)
        .ok_or_else(|| Error::validation(format!("target `{target}` not in correlation matrix")))?;
    if corr.constant.iter().any(|c| c == target) {
        return Err(Error::validation(format!("target `{target}` is constant")));
    }

    let mut by_unit: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for i in (0..corr.len()).filter(|&i| i != ti) {
        let key = corr.groups[i].clone().unwrap_or_else(|| corr.names[i].clone());
        by_unit.entry(key).or_default().push(i);
    }
    let mut units: Vec<Unit> = by_unit
        .into_iter()
        .map(|(name, members)| {
            let best = *members
                .iter()
                .max_by(|&&a, &&b| corr.get(a, ti).abs().total_cmp(&corr.get(b, ti).abs()).then(b.cmp(&a)))
                .expect("non-empty unit");
            Unit {
                name,
                score: corr.get(best, ti).abs(),
                signed: corr.get(best, ti),
                members,
            }
        })
        .collect();
    units.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.name.cmp(&b.name)));

    let member_names = |u: &Unit| u.members.iter().map(|&i| corr.names[i].clone()).collect::<Vec<_>>();
    let mut dropped_low_target = Vec::new();
    let mut dropped_redundant = Vec::new();
    let mut kept_units: Vec<&Unit> = Vec::new();
    for u in &units {
        if u.score < t_low {
            dropped_low_target.push(LowTargetDrop {
                feature: u.name.clone(),
                members: member_names(u),
                r: u.signed,
            });
            continue;
        }
        let partner = kept_units
            .iter()
            .map(|k| {
                let r = u
                    .members
                    .iter()
                    .flat_map(|&a| k.members.iter().map(move |&b| corr.get(a, b).abs()))
                    .fold(0.0, f64::max);
                (k, r)
            })
            .filter(|(_, r)| *r > t_redundant)
            .fold(None::<(&&Unit, f64)>, |best, cur| match best {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            });
        match partner {
            Some((k, r)) => dropped_redundant.push(RedundantDrop {
                feature: u.name.clone(),
                members: member_names(u),
                kept_partner: k.name.clone(),
                r,
            }),
            None => kept_units.push(u),
        }
    }
    let kept_idx: BTreeSet<usize> = kept_units.iter().flat_map(|u| u.members.iter().copied()).collect();
    Ok(ReductionReport {
        target: target.to_owned(),
        t_low,
        t_redundant,
        kept: kept_idx.into_iter().map(|i| corr.names[i].clone()).collect(),
        dropped_low_target,
        dropped_redundant,
    })
}

/// Long-format `name_i,name_j,r` rows covering the full matrix.
pub fn export_heatmap(corr: &CorrelationMatrix) -> String {
    let mut out = String::from("name_i,name_j,r\n");
    for i in 0..corr.len() {
        for j in 0..corr.len() {
            let _ = writeln!(out, "{},{},{}", csv_field(&corr.names[i]), csv_field(&corr.names[j]), corr.get(i, j));
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

pub fn parse_heatmap(text: &str) -> Result<Vec<(String, String, f64)>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let r: f64 = rec[2]
            .parse()
            .map_err(|_| Error::validation(format!("bad correlation `{}`", &rec[2])))?;
        out.push((rec[0].to_owned(), rec[1].to_owned(), r));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterExport {
    /// `country,pdi,idv,mas,uai,ltowvs,ivr`
    pub csv: String,
    /// Pearson r for every pair of cultural indices, `index_a,index_b,r`.
    pub pairs: Vec<(String, String, f64)>,
}

impl ScatterExport {
    pub fn pairs_csv(&self) -> String {
        let mut out = String::from("index_a,index_b,r\n");
        for (a, b, r) in &self.pairs {
            let _ = writeln!(out, "{a},{b},{r}");
        }
        out
    }
}

/// Country by cultural-index table for scatter-matrix plotting.
pub fn scatter_matrix_export(profiles: &[CountryProfile]) -> Result<ScatterExport> {
    if profiles.len() < 2 {
        return Err(Error::validation("scatter export needs at least two profiles"));
    }
    let mut seen = BTreeSet::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(profiles.len()); 6];
    let mut csv = String::from("country");
    for d in CulturalDimension::ALL {
        csv.push(',');
        csv.push_str(d.name());
    }
    csv.push('\n');
    for p in profiles {
        if !seen.insert(p.country) {
            return Err(Error::validation(format!("duplicate profile for {}", p.country)));
        }
        let values = p
            .culture
            .values()
            .ok_or_else(|| Error::validation(format!("{} has incomplete cultural indices", p.country)))?;
        csv.push_str(p.country.as_str());
        for (col, v) in columns.iter_mut().zip(values) {
            col.push(v);
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    let mut pairs = Vec::with_capacity(15);
    for a in 0..6 {
        for b in a + 1..6 {
            pairs.push((
                CulturalDimension::ALL[a].name().to_owned(),
                CulturalDimension::ALL[b].name().to_owned(),
                pearson(&columns[a], &columns[b])?,
            ));
        }
    }
    Ok(ScatterExport { csv, pairs })
}

pub fn euclidean_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape(format!("distance between lengths {} and {}", p.len(), q.len())));
    }
    Ok(p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
}

/// Profile vectors (culture then indicators) min-max scaled across `profiles`.
pub fn scaled_profile_vectors(profiles: &[CountryProfile]) -> Result<Vec<Vec<f64>>> {
    let Some(first) = profiles.first() else {
        return Ok(Vec::new());
    };
    let names = first.feature_names();
    let raw: Vec<Vec<f64>> = profiles
        .iter()
        .map(|p| {
            if p.feature_names() != names {
                return Err(Error::validation(format!("{} has a different feature set", p.country)));
            }
            let v = p.feature_vector();
            if v.len() != names.len() {
                return Err(Error::validation(format!("{} has incomplete cultural indices", p.country)));
            }
            Ok(v)
        })
        .collect::<Result<_>>()?;
    let dims = names.len();
    let mut lo = vec![f64::INFINITY; dims];
    let mut hi = vec![f64::NEG_INFINITY; dims];
    for v in &raw {
        for k in 0..dims {
            lo[k] = lo[k].min(v[k]);
            hi[k] = hi[k].max(v[k]);
        }
    }
    Ok(raw
        .into_iter()
        .map(|v| {
            (0..dims)
                .map(|k| if hi[k] == lo[k] { 0.0 } else { (v[k] - lo[k]) / (hi[k] - lo[k]) })
                .collect()
        })
        .collect())
}

/// The `k` countries closest to `target` by Euclidean distance on scaled
/// profile vectors, nearest first, ties broken by country code.
pub fn nearest_countries(
    target: CountryCode,
    profiles: &[CountryProfile],
    k: usize,
) -> Result<Vec<(CountryCode, f64)>> {
    if k >= profiles.len() {
        return Err(Error::validation(format!(
            "k = {k} must be smaller than the number of profiles ({})",
            profiles.len()
        )));
    }
    let ti = profiles
        .iter()
        .position(|p| p.country == target)
        .ok_or_else(|| Error::validation(format!("{target} has no profile")))?;
    let vectors = scaled_profile_vectors(profiles)?;
    let mut dists: Vec<(CountryCode, f64)> = profiles
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != ti)
        .map(|(i, p)| Ok((p.country, euclidean_distance(&vectors[ti], &vectors[i])?)))
        .collect::<Result<_>>()?;
    dists.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    dists.truncate(k);
    Ok(dists)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::CulturalIndices;
    use crate::preprocess::Column;
    use proptest::prelude::*;

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
    }

    fn matrix(cols: &[(&str, Vec<f64>)], target: &str) -> FeatureMatrix {
        FeatureMatrix::from_columns(cols.iter().map(|(n, v)| (Column::numeric(*n), v.clone())).collect(), target)
            .unwrap()
    }

    #[test]
    fn correlation_matrix_basics() {
        let x = vec![1.0, 4.0, 2.0, 8.0];
        let m = matrix(
            &[("x", x.clone()), ("same", x.clone()), ("neg", x.iter().map(|v| -v).collect())],
            "x",
        );
        let c = correlation_matrix(&m).unwrap();
        assert!((c.by_name("x", "same").unwrap() - 1.0).abs() < 1e-12);
        assert!((c.by_name("x", "neg").unwrap() + 1.0).abs() < 1e-12);
        assert!((c.get(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn correlation_matrix_matches_pairwise_pearson() {
        use rand::Rng;
        let mut rng = crate::rng::stream(3, "test");
        let cols: Vec<(&str, Vec<f64>)> = ["a", "b", "c"]
            .iter()
            .map(|n| (*n, (0..25).map(|_| rng.gen_range(-5.0..5.0)).collect()))
            .collect();
        let m = matrix(&cols, "a");
        let c = correlation_matrix(&m).unwrap();
        for (i, (_, x)) in cols.iter().enumerate() {
            for (j, (_, y)) in cols.iter().enumerate() {
                assert_eq!(c.get(i, j), pearson(x, y).unwrap());
            }
        }
    }

    /// Columns with planted target correlations 0.10, 0.30 and a pair
    /// (0.6 / 0.4 to target) correlated at 0.95 with each other.
    fn planted() -> CorrelationMatrix {
        let names = ["y", "low", "mid", "a", "b"].map(String::from).to_vec();
        #[rustfmt::skip]
        let r = vec![
            1.0,  0.10, 0.30, 0.60, 0.40,
            0.10, 1.0,  0.0,  0.0,  0.0,
            0.30, 0.0,  1.0,  0.0,  0.0,
            0.60, 0.0,  0.0,  1.0,  0.95,
            0.40, 0.0,  0.0,  0.95, 1.0,
        ];
        CorrelationMatrix {
            groups: vec![None; 5],
            names,
            r,
            constant: vec![],
        }
    }

    #[test]
    fn reduction_drops_low_and_redundant() {
        let rep = reduce_features(&planted(), "y", 0.25, 0.9).unwrap();
        assert_eq!(rep.kept, vec!["mid", "a"]);
        assert_eq!(rep.dropped_low_target.len(), 1);
        assert_eq!(rep.dropped_low_target[0].feature, "low");
        assert!((rep.dropped_low_target[0].r - 0.10).abs() < 1e-12);
        assert_eq!(rep.dropped_redundant.len(), 1);
        assert_eq!(rep.dropped_redundant[0].feature, "b");
        assert_eq!(rep.dropped_redundant[0].kept_partner, "a");
        assert!((rep.dropped_redundant[0].r - 0.95).abs() < 1e-12);
    }

    #[test]
    fn reduction_is_fixed_point() {
        let c = planted();
        let rep = reduce_features(&c, "y", 0.25, 0.9).unwrap();
        let mut keep = rep.kept.clone();
        keep.push("y".into());
        let again = reduce_features(&c.restrict(&keep), "y", 0.25, 0.9).unwrap();
        assert_eq!(again.kept, rep.kept);
        assert!(again.dropped_low_target.is_empty() && again.dropped_redundant.is_empty());
    }

    #[test]
    fn reduction_tie_drops_later_name() {
        let names = ["y", "p", "q"].map(String::from).to_vec();
        let r = vec![1.0, 0.5, 0.5, 0.5, 1.0, 0.99, 0.5, 0.99, 1.0];
        let c = CorrelationMatrix { groups: vec![None; 3], names, r, constant: vec![] };
        let rep = reduce_features(&c, "y", 0.25, 0.9).unwrap();
        assert_eq!(rep.kept, vec!["p"]);
        assert_eq!(rep.dropped_redundant[0].feature, "q");
    }

    #[test]
    fn reduction_rejects_constant_target() {
        let m = matrix(&[("y", vec![1.0; 4]), ("x", vec![1.0, 2.0, 3.0, 4.0])], "y");
        let c = correlation_matrix(&m).unwrap();
        assert!(reduce_features(&c, "y", 0.25, 0.9).is_err());
    }

    #[test]
    fn groups_move_atomically() {
        // g=a tracks y strongly, g=b is its complement; g as a whole scores 1.0.
        let y = vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let ga: Vec<f64> = y.clone();
        let gb: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
        let weak = vec![0.1, 0.1, 0.2, 0.2, 0.3, 0.3];
        let onehot = |label: &str| Column {
            name: format!("g={label}"),
            kind: ColumnKind::OneHot { group: "g".into(), label: label.into() },
        };
        let m = FeatureMatrix::from_columns(
            vec![(Column::numeric("y"), y), (onehot("a"), ga), (onehot("b"), gb), (Column::numeric("weak"), weak)],
            "y",
        )
        .unwrap();
        let c = correlation_matrix(&m).unwrap();
        let rep = reduce_features(&c, "y", 0.25, 0.9).unwrap();
        assert_eq!(rep.kept, vec!["g=a", "g=b"]);
        assert_eq!(rep.dropped_low_target[0].feature, "weak");
    }

    #[test]
    fn heatmap_export() {
        let c = planted().restrict(&["y".into(), "low".into()]);
        let text = export_heatmap(&c);
        let rows = parse_heatmap(&text).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.contains(&("y".into(), "y".into(), 1.0)));
        for ((a, b, r), (i, j)) in rows.iter().zip([(0, 0), (0, 1), (1, 0), (1, 1)]) {
            assert_eq!(a, &c.names[i]);
            assert_eq!(b, &c.names[j]);
            assert!((r - c.get(i, j)).abs() < 1e-12);
        }
    }

    fn profile(code: &str, culture: [f64; 6], indicators: &[(&str, f64)]) -> CountryProfile {
        CountryProfile {
            country: CountryCode::new(code).unwrap(),
            culture: CulturalIndices::complete(culture),
            indicators: indicators.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            provenance: indicators.iter().map(|(k, _)| (k.to_string(), Default::default())).collect(),
        }
    }

    #[test]
    fn scatter_export_shape() {
        let codes = ["AU", "BR", "CA", "CO", "DE", "ES", "FR", "GB", "IN", "JP", "KR", "MX", "US", "ZA"];
        let profiles: Vec<_> = codes
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let f = i as f64;
                profile(c, [f, 2.0 * f, 100.0 - f, (f * 7.0) % 13.0, 50.0, f * f / 2.0], &[])
            })
            .collect();
        let s = scatter_matrix_export(&profiles).unwrap();
        let lines: Vec<_> = s.csv.lines().collect();
        assert_eq!(lines[0], "country,pdi,idv,mas,uai,ltowvs,ivr");
        assert_eq!(lines.len(), 15);
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 7));
        assert_eq!(s.pairs.len(), 15);
        assert!(s.pairs_csv().lines().count() == 16);

        let dup = vec![profiles[0].clone(), profiles[0].clone()];
        assert!(scatter_matrix_export(&dup).is_err());
    }

    #[test]
    fn euclid_examples() {
        assert_eq!(euclidean_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(euclidean_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert!(euclidean_distance(&[0.0], &[3.0, 4.0]).is_err());
    }

    #[test]
    fn nearest_with_duplicate_profile() {
        let a = profile("US", [40.0, 91.0, 62.0, 46.0, 26.0, 68.0], &[("gdp", 60.0)]);
        let mut b = a.clone();
        b.country = CountryCode::new("CA").unwrap();
        let c = profile("JP", [54.0, 46.0, 95.0, 92.0, 88.0, 42.0], &[("gdp", 40.0)]);
        let near = nearest_countries(a.country, &[a.clone(), b, c.clone()], 1).unwrap();
        assert_eq!(near, vec![(CountryCode::new("CA").unwrap(), 0.0)]);
        assert!(nearest_countries(a.country, &[a, c], 2).is_err());
    }

    #[test]
    fn nearest_hand_built() {
        // After min-max scaling: A=(0,0), B=(0.5,1), C=(1,0.25)
        let a = profile("AU", [0.0, 10.0, 10.0, 10.0, 10.0, 10.0], &[("gdp", 0.0)]);
        let b = profile("BR", [50.0, 10.0, 10.0, 10.0, 10.0, 10.0], &[("gdp", 4.0)]);
        let c = profile("CO", [100.0, 10.0, 10.0, 10.0, 10.0, 10.0], &[("gdp", 1.0)]);
        let ps = vec![a, b, c];
        let near = nearest_countries(ps[0].country, &ps, 2).unwrap();
        let d_ab = (0.25f64 + 1.0).sqrt();
        let d_ac = (1.0f64 + 0.0625).sqrt();
        assert_eq!(near[0].0.as_str(), "CO");
        assert!((near[0].1 - d_ac).abs() < 1e-12);
        assert_eq!(near[1].0.as_str(), "BR");
        assert!((near[1].1 - d_ab).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn correlation_symmetric_and_row_order_free(
            rows in proptest::collection::vec(proptest::array::uniform3(-10.0f64..10.0), 3..40),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let col = |k: usize, rs: &[[f64; 3]]| rs.iter().map(|r| r[k]).collect::<Vec<_>>();
            let m = matrix(&[("a", col(0, &rows)), ("b", col(1, &rows)), ("c", col(2, &rows))], "a");
            let c = correlation_matrix(&m).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert!((c.get(i, j) - c.get(j, i)).abs() <= 1e-12);
                    prop_assert!(c.get(i, j).abs() <= 1.0 + 1e-12);
                }
            }
            let mut shuffled = rows.clone();
            shuffled.shuffle(&mut crate::rng::stream(seed, "t"));
            let m2 = matrix(&[("a", col(0, &shuffled)), ("b", col(1, &shuffled)), ("c", col(2, &shuffled))], "a");
            let c2 = correlation_matrix(&m2).unwrap();
            for (x, y) in c.r.iter().zip(&c2.r) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn reduction_partitions_and_is_fixed_point(
            rows in proptest::collection::vec(proptest::array::uniform5(-1.0f64..1.0), 5..30),
            t_low in 0.0f64..0.6,
            t_red in 0.5f64..1.0,
        ) {
            let col = |k: usize| rows.iter().map(|r| r[k]).collect::<Vec<_>>();
            let mut mixed = col(1);
            for (m, y) in mixed.iter_mut().zip(col(0)) { *m += y; }
            let m = matrix(&[("y", col(0)), ("p", mixed), ("q", col(2)), ("r", col(3)), ("s", col(4))], "y");
            let c = correlation_matrix(&m).unwrap();
            if let Ok(rep) = reduce_features(&c, "y", t_low, t_red) {
                let mut all = rep.kept.clone();
                all.extend(rep.dropped_columns());
                all.sort();
                prop_assert_eq!(all, vec!["p", "q", "r", "s"]);
                let mut keep = rep.kept.clone();
                keep.push("y".into());
                let again = reduce_features(&c.restrict(&keep), "y", t_low, t_red).unwrap();
                prop_assert_eq!(again.kept, rep.kept);
            }
        }

        #[test]
        fn euclid_metric_axioms(
            p in proptest::collection::vec(-100.0f64..100.0, 4),
            q in proptest::collection::vec(-100.0f64..100.0, 4),
            r in proptest::collection::vec(-100.0f64..100.0, 4),
        ) {
            let d = |a: &[f64], b: &[f64]| euclidean_distance(a, b).unwrap();
            prop_assert_eq!(d(&p, &p), 0.0);
            prop_assert_eq!(d(&p, &q), d(&q, &p));
            prop_assert!(d(&p, &r) <= d(&p, &q) + d(&q, &r) + 1e-9);
        }
    }
}
