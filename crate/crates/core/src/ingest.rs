//! Country context ingestion.
//!
//! Cultural indices arrive as one wide CSV (one row per country), socio-economic
//! indicators as long-format CSVs (`country,indicator,year,value`), one file per
//! category. Stale or absent indicator values are reconciled by [`impute`] and
//! [`filter_most_recent`], and [`join_profiles`] inner-joins everything into
//! complete [`CountryProfile`]s.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::country::CountryCode;
use crate::error::{Error, Result};

/// Cells holding any of these (after trimming) are treated as missing.
pub const MISSING_MARKERS: [&str; 3] = ["", "NA", "#NULL!"];

pub const CULTURE_MAX: f64 = 120.0;

pub const MIN_YEAR: i32 = 1990;
pub const MAX_YEAR: i32 = 2100;

fn is_missing(cell: &str) -> bool {
    MISSING_MARKERS.contains(&cell.trim())
}

/// The six cultural dimensions, in canonical column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CulturalDimension {
    Pdi,
    Idv,
    Mas,
    Uai,
    Ltowvs,
    Ivr,
}

impl CulturalDimension {
    pub const ALL: [CulturalDimension; 6] = [
        CulturalDimension::Pdi,
        CulturalDimension::Idv,
        CulturalDimension::Mas,
        CulturalDimension::Uai,
        CulturalDimension::Ltowvs,
        CulturalDimension::Ivr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CulturalDimension::Pdi => "pdi",
            CulturalDimension::Idv => "idv",
            CulturalDimension::Mas => "mas",
            CulturalDimension::Uai => "uai",
            CulturalDimension::Ltowvs => "ltowvs",
            CulturalDimension::Ivr => "ivr",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.name().eq_ignore_ascii_case(name.trim()))
    }
}

/// Per-country cultural scores. Any of them may be missing in raw data.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CulturalIndices {
    pub pdi: Option<f64>,
    pub idv: Option<f64>,
    pub mas: Option<f64>,
    pub uai: Option<f64>,
    pub ltowvs: Option<f64>,
    pub ivr: Option<f64>,
}

impl CulturalIndices {
    pub fn from_array(values: [Option<f64>; 6]) -> Self {
        let [pdi, idv, mas, uai, ltowvs, ivr] = values;
        Self {
            pdi,
            idv,
            mas,
            uai,
            ltowvs,
            ivr,
        }
    }

    pub fn complete(values: [f64; 6]) -> Self {
        Self::from_array(values.map(Some))
    }

    pub fn get(&self, dim: CulturalDimension) -> Option<f64> {
        match dim {
            CulturalDimension::Pdi => self.pdi,
            CulturalDimension::Idv => self.idv,
            CulturalDimension::Mas => self.mas,
            CulturalDimension::Uai => self.uai,
            CulturalDimension::Ltowvs => self.ltowvs,
            CulturalDimension::Ivr => self.ivr,
        }
    }

    /// All six values, or `None` if any is missing.
    pub fn values(&self) -> Option<[f64; 6]> {
        let mut out = [0.0; 6];
        for (slot, dim) in out.iter_mut().zip(CulturalDimension::ALL) {
            *slot = self.get(dim)?;
        }
        Some(out)
    }

    pub fn missing(&self) -> Vec<CulturalDimension> {
        CulturalDimension::ALL
            .into_iter()
            .filter(|d| self.get(*d).is_none())
            .collect()
    }

    fn validate(&self, country: CountryCode) -> Result<()> {
        for dim in CulturalDimension::ALL {
            if let Some(v) = self.get(dim) {
                if !v.is_finite() || !(0.0..=CULTURE_MAX).contains(&v) {
                    return Err(Error::validation(format!(
                        "{country}: {} = {v} outside [0, {CULTURE_MAX}]",
                        dim.name()
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Infrastructure,
    Demographics,
    Economic,
    MarketOpportunity,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Infrastructure,
        Category::Demographics,
        Category::Economic,
        Category::MarketOpportunity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Infrastructure => "infrastructure",
            Category::Demographics => "demographics",
            Category::Economic => "economic",
            Category::MarketOpportunity => "market_opportunity",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::validation(format!("unknown indicator category `{s}`")))
    }
}

/// Where an indicator value in a profile came from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    #[default]
    Observed,
    CarriedForward,
    MeanImputed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorObservation {
    pub country: CountryCode,
    pub category: Category,
    pub name: String,
    pub year: i32,
    pub value: f64,
    #[serde(default)]
    pub provenance: Provenance,
}

impl IndicatorObservation {
    pub fn new(
        country: CountryCode,
        category: Category,
        name: impl Into<String>,
        year: i32,
        value: f64,
    ) -> Self {
        Self {
            country,
            category,
            name: name.into(),
            year,
            value,
            provenance: Provenance::Observed,
        }
    }
}

/// One country's full context vector: six cultural indices plus named indicators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryProfile {
    pub country: CountryCode,
    pub culture: CulturalIndices,
    pub indicators: BTreeMap<String, f64>,
    pub provenance: BTreeMap<String, Provenance>,
}

impl CountryProfile {
    /// Looks up a cultural dimension (by its lowercase name) or an indicator.
    pub fn feature(&self, name: &str) -> Option<f64> {
        match CulturalDimension::from_name(name) {
            Some(dim) => self.culture.get(dim),
            None => self.indicators.get(name).copied(),
        }
    }

    /// Cultural dimension names followed by indicator names.
    pub fn feature_names(&self) -> Vec<String> {
        CulturalDimension::ALL
            .iter()
            .map(|d| d.name().to_owned())
            .chain(self.indicators.keys().cloned())
            .collect()
    }

    pub fn feature_vector(&self) -> Vec<f64> {
        self.culture
            .values()
            .into_iter()
            .flatten()
            .chain(self.indicators.values().copied())
            .collect()
    }
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn csv_reader<R: Read>(rdr: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(rdr)
}

pub fn parse_cultural_csv(path: &Path) -> Result<Vec<(CountryCode, CulturalIndices)>> {
    parse_cultural_reader(open(path)?, path)
}

/// Parses the cultural table from any reader; `source` only labels errors.
pub fn parse_cultural_reader<R: Read>(
    rdr: R,
    source: &Path,
) -> Result<Vec<(CountryCode, CulturalIndices)>> {
    let mut reader = csv_reader(rdr);
    let headers = reader.headers()?.clone();
    let width = headers.len();

    let col = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
    let country_col = col("country").ok_or_else(|| parse_err(source, 1, "header lacks `country`"))?;
    let mut dim_cols = [0usize; 6];
    for (slot, dim) in dim_cols.iter_mut().zip(CulturalDimension::ALL) {
        *slot = col(dim.name())
            .ok_or_else(|| parse_err(source, 1, format!("header lacks `{}`", dim.name())))?;
    }

    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width {
            return Err(parse_err(
                source,
                line,
                format!("expected {width} columns, found {}", record.len()),
            ));
        }
        let country = CountryCode::assigned(record[country_col].trim())?;
        let mut values = [None; 6];
        for (slot, (&c, dim)) in values
            .iter_mut()
            .zip(dim_cols.iter().zip(CulturalDimension::ALL))
        {
            let cell = &record[c];
            if is_missing(cell) {
                continue;
            }
            let v: f64 = cell.trim().parse().map_err(|_| {
                parse_err(source, line, format!("{}: `{cell}` is not a number", dim.name()))
            })?;
            *slot = Some(v);
        }
        let culture = CulturalIndices::from_array(values);
        culture.validate(country)?;
        out.push((country, culture));
    }
    Ok(out)
}

pub fn write_cultural_csv<W: Write>(
    w: W,
    rows: &[(CountryCode, CulturalIndices)],
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["country"];
    header.extend(CulturalDimension::ALL.iter().map(|d| d.name()));
    wtr.write_record(&header)?;
    for (country, culture) in rows {
        let mut record = vec![country.to_string()];
        record.extend(
            CulturalDimension::ALL
                .iter()
                .map(|d| culture.get(*d).map(|v| v.to_string()).unwrap_or_default()),
        );
        wtr.write_record(&record)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn parse_socioeconomic_csv(path: &Path, category: Category) -> Result<Vec<IndicatorObservation>> {
    parse_socioeconomic_reader(open(path)?, path, category)
}

pub fn parse_socioeconomic_reader<R: Read>(
    rdr: R,
    source: &Path,
    category: Category,
) -> Result<Vec<IndicatorObservation>> {
    const HEADER: [&str; 4] = ["country", "indicator", "year", "value"];
    let mut reader = csv_reader(rdr);
    let headers = reader.headers()?.clone();
    let found: Vec<String> = headers.iter().map(|h| h.trim().to_ascii_lowercase()).collect();
    if found != HEADER {
        return Err(parse_err(
            source,
            1,
            format!("expected header {}, found {}", HEADER.join(","), found.join(",")),
        ));
    }

    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != HEADER.len() {
            return Err(parse_err(
                source,
                line,
                format!("expected 4 columns, found {}", record.len()),
            ));
        }
        let name = record[1].trim();
        if name.is_empty() {
            return Err(parse_err(source, line, "empty indicator name"));
        }
        let year: i32 = record[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(source, line, format!("year `{}` is not an integer", &record[2])))?;
        if is_missing(&record[3]) {
            log::debug!("{}: line {line}: missing value skipped", source.display());
            continue;
        }
        let value: f64 = record[3]
            .trim()
            .parse()
            .map_err(|_| parse_err(source, line, format!("value `{}` is not a number", &record[3])))?;
        if !value.is_finite() {
            return Err(parse_err(source, line, "value is not finite"));
        }
        let country = CountryCode::assigned(record[0].trim())?;
        if !(MIN_YEAR..=MAX_YEAR).contains(&year) {
            return Err(Error::validation(format!(
                "{country}/{name}: year {year} outside [{MIN_YEAR}, {MAX_YEAR}]"
            )));
        }
        out.push(IndicatorObservation::new(country, category, name, year, value));
    }
    Ok(out)
}

pub fn write_socioeconomic_csv<W: Write>(w: W, observations: &[IndicatorObservation]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["country", "indicator", "year", "value"])?;
    for o in observations {
        wtr.write_record([
            o.country.to_string(),
            o.name.clone(),
            o.year.to_string(),
            o.value.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

type ObsKey = (CountryCode, String);

fn latest_by_key(observations: &[IndicatorObservation], warn_ties: bool) -> BTreeMap<ObsKey, IndicatorObservation> {
    let mut latest: BTreeMap<ObsKey, IndicatorObservation> = BTreeMap::new();
    for o in observations {
        let key = (o.country, o.name.clone());
        match latest.get(&key) {
            Some(prev) if prev.year > o.year => {}
            Some(prev) => {
                if prev.year == o.year && warn_ties {
                    log::warn!(
                        "{}/{}: duplicate observations for {}; keeping the last one",
                        o.country,
                        o.name,
                        o.year
                    );
                }
                latest.insert(key, o.clone());
            }
            None => {
                latest.insert(key, o.clone());
            }
        }
    }
    latest
}

/// Keeps, per (country, indicator), only the observation with the latest year.
/// On a year tie the later row in input order wins.
pub fn filter_most_recent(observations: &[IndicatorObservation]) -> Vec<IndicatorObservation> {
    latest_by_key(observations, true).into_values().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImputePolicy {
    /// Discard values older than the indicator's latest year.
    Drop,
    /// Move stale values forward to the indicator's latest year.
    CarryForward,
    /// Discard stale values, then fill absent (country, indicator) pairs with
    /// the cross-country mean.
    Mean,
}

/// Reconciles stale and absent indicator values under one policy.
///
/// The latest year of an indicator is the maximum year observed for it in any
/// country. The output holds one observation per (country, indicator), sorted.
/// Mean imputation fills over the countries and indicators present in the input;
/// use [`impute_over`] to name them explicitly.
pub fn impute(observations: &[IndicatorObservation], policy: ImputePolicy) -> Result<Vec<IndicatorObservation>> {
    let countries: BTreeSet<CountryCode> = observations.iter().map(|o| o.country).collect();
    let indicators: BTreeSet<String> = observations.iter().map(|o| o.name.clone()).collect();
    let countries: Vec<_> = countries.into_iter().collect();
    let indicators: Vec<_> = indicators.into_iter().collect();
    impute_over(observations, policy, &countries, &indicators)
}

/// [`impute`] with an explicit universe for mean filling.
pub fn impute_over(
    observations: &[IndicatorObservation],
    policy: ImputePolicy,
    countries: &[CountryCode],
    indicators: &[String],
) -> Result<Vec<IndicatorObservation>> {
    let latest = latest_by_key(observations, false);
    let mut latest_year: HashMap<&str, (i32, Category)> = HashMap::new();
    for o in latest.values() {
        let y = latest_year.entry(o.name.as_str()).or_insert((o.year, o.category));
        y.0 = y.0.max(o.year);
    }

    let mut out: BTreeMap<ObsKey, IndicatorObservation> = BTreeMap::new();
    for (key, o) in &latest {
        let current = latest_year[o.name.as_str()].0;
        if o.year == current {
            out.insert(key.clone(), o.clone());
        } else if policy == ImputePolicy::CarryForward {
            let mut carried = o.clone();
            carried.year = current;
            carried.provenance = Provenance::CarriedForward;
            out.insert(key.clone(), carried);
        }
    }

    if policy == ImputePolicy::Mean {
        let mut fills = Vec::new();
        for name in indicators {
            let values: Vec<f64> = out.values().filter(|o| &o.name == name).map(|o| o.value).collect();
            let absent: Vec<&CountryCode> = countries
                .iter()
                .filter(|c| !out.contains_key(&(**c, name.clone())))
                .collect();
            if absent.is_empty() {
                continue;
            }
            let Some(&(year, category)) = latest_year.get(name.as_str()) else {
                return Err(Error::NothingToImpute(name.clone()));
            };
            if values.is_empty() {
                return Err(Error::NothingToImpute(name.clone()));
            }
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            for country in absent {
                let mut o = IndicatorObservation::new(*country, category, name.clone(), year, mean);
                o.provenance = Provenance::MeanImputed;
                fills.push(((*country, name.clone()), o));
            }
        }
        out.extend(fills);
    }
    Ok(out.into_values().collect())
}

/// Applies several policies in order, e.g. carry-forward then mean.
pub fn impute_chain(observations: &[IndicatorObservation], policies: &[ImputePolicy]) -> Result<Vec<IndicatorObservation>> {
    if policies.is_empty() {
        return Ok(filter_most_recent(observations));
    }
    let mut current = observations.to_vec();
    for &p in policies {
        current = impute(&current, p)?;
    }
    Ok(current)
}

/// Inner-joins cultural rows with indicator observations.
///
/// A country survives only with all six cultural values and every required
/// indicator. Output is sorted by country code and each profile carries exactly
/// `required_indicators`.
pub fn join_profiles(
    cultural: &[(CountryCode, CulturalIndices)],
    observations: &[IndicatorObservation],
    required_indicators: &[String],
) -> Result<Vec<CountryProfile>> {
    let mut culture_by_country: BTreeMap<CountryCode, CulturalIndices> = BTreeMap::new();
    for (country, culture) in cultural {
        if culture_by_country.insert(*country, *culture).is_some() {
            return Err(Error::validation(format!("duplicate cultural row for {country}")));
        }
    }
    let latest = latest_by_key(observations, false);

    let mut countries: BTreeSet<CountryCode> = culture_by_country.keys().copied().collect();
    countries.extend(latest.keys().map(|(c, _)| *c));

    let mut profiles = Vec::new();
    let mut missing_report = Vec::new();
    for country in countries {
        let mut missing: Vec<String> = match culture_by_country.get(&country) {
            Some(c) => c.missing().iter().map(|d| d.name().to_owned()).collect(),
            None => vec!["culture".to_owned()],
        };
        let mut indicators = BTreeMap::new();
        let mut provenance = BTreeMap::new();
        for name in required_indicators {
            match latest.get(&(country, name.clone())) {
                Some(o) => {
                    indicators.insert(name.clone(), o.value);
                    provenance.insert(name.clone(), o.provenance);
                }
                None => missing.push(name.clone()),
            }
        }
        if missing.is_empty() {
            profiles.push(CountryProfile {
                country,
                culture: culture_by_country[&country],
                indicators,
                provenance,
            });
        } else {
            log::debug!("{country} excluded from join: lacks {}", missing.join(", "));
            missing_report.push((country.to_string(), missing));
        }
    }
    if profiles.is_empty() {
        return Err(Error::NoCompleteCountries {
            missing: missing_report,
        });
    }
    Ok(profiles)
}

pub fn profiles_to_json(profiles: &[CountryProfile]) -> Result<String> {
    Ok(serde_json::to_string_pretty(profiles)?)
}

pub fn profiles_from_json(json: &str) -> Result<Vec<CountryProfile>> {
    Ok(serde_json::from_str(json)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cc(s: &str) -> CountryCode {
        CountryCode::new(s).unwrap()
    }

    fn cultural(text: &str) -> Result<Vec<(CountryCode, CulturalIndices)>> {
        parse_cultural_reader(text.as_bytes(), Path::new("culture.csv"))
    }

    fn socio(text: &str) -> Result<Vec<IndicatorObservation>> {
        parse_socioeconomic_reader(text.as_bytes(), Path::new("socio.csv"), Category::Infrastructure)
    }

    #[test]
    fn cultural_rows_parse() {
        let rows = cultural(
            "country,pdi,idv,mas,uai,ltowvs,ivr\n\
             JP,54,46,95,92,88,42\n\
             CO,67,13,64,80,13,83\n\
             US,40,91,62,46,26,\n",
        )
        .unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].0, cc("JP"));
        assert_eq!(rows[0].1.ltowvs, Some(88.0));
        assert_eq!(rows[1].1.ltowvs, Some(13.0));
        assert_eq!(rows[2].1.ivr, None);
        assert_eq!(rows[2].1.missing(), vec![CulturalDimension::Ivr]);
        assert!(rows[2].1.values().is_none());
    }

    #[test]
    fn cultural_missing_markers_and_column_order() {
        let rows = cultural("ivr,country,pdi,idv,mas,uai,ltowvs\nNA,DE,35,67,66,65,#NULL!\n").unwrap();
        assert_eq!(rows[0].1.pdi, Some(35.0));
        assert_eq!(rows[0].1.ivr, None);
        assert_eq!(rows[0].1.ltowvs, None);
    }

    #[test]
    fn cultural_wrong_width_reports_line() {
        let err = cultural("country,pdi,idv,mas,uai,ltowvs,ivr\nJP,54,46,95,92,88,42\nCO,67,13\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cultural_out_of_range_names_country_and_column() {
        let err = cultural("country,pdi,idv,mas,uai,ltowvs,ivr\nJP,54,46,95,92,188,42\n").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Validation(_)));
        assert!(msg.contains("JP") && msg.contains("ltowvs"), "{msg}");
    }

    #[test]
    fn socio_rows_parse() {
        let obs = socio("country,indicator,year,value\nUS,broadband_subs,2021,121000000\n").unwrap();
        assert_eq!(
            obs,
            vec![IndicatorObservation::new(
                cc("US"),
                Category::Infrastructure,
                "broadband_subs",
                2021,
                1.21e8
            )]
        );
        let mut buf = Vec::new();
        write_socioeconomic_csv(&mut buf, &obs).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "country,indicator,year,value\nUS,broadband_subs,2021,121000000\n");
    }

    #[test]
    fn socio_header_only_is_empty() {
        assert!(socio("country,indicator,year,value\n").unwrap().is_empty());
    }

    #[test]
    fn socio_non_numeric_value_is_parse_error_at_line_2() {
        match socio("country,indicator,year,value\nXX,gdp,2021,abc\n").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn socio_unknown_country_is_validation_error() {
        let err = socio("country,indicator,year,value\nXX,gdp,2021,1.5\n").unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err:?}");
    }

    #[test]
    fn socio_year_out_of_range() {
        assert!(matches!(
            socio("country,indicator,year,value\nUS,gdp,1980,1.5\n").unwrap_err(),
            Error::Validation(_)
        ));
    }

    fn ob(country: &str, name: &str, year: i32, value: f64) -> IndicatorObservation {
        IndicatorObservation::new(cc(country), Category::Economic, name, year, value)
    }

    #[test]
    fn most_recent_picks_max_year() {
        let out = filter_most_recent(&[ob("US", "gdp", 2019, 1.0), ob("US", "gdp", 2021, 2.0)]);
        assert_eq!(out, vec![ob("US", "gdp", 2021, 2.0)]);
        let single = vec![ob("US", "gdp", 2019, 1.0)];
        assert_eq!(filter_most_recent(&single), single);
    }

    #[test]
    fn most_recent_tie_keeps_last_parsed() {
        let out = filter_most_recent(&[ob("US", "gdp", 2021, 1.0), ob("US", "gdp", 2021, 7.0)]);
        assert_eq!(out, vec![ob("US", "gdp", 2021, 7.0)]);
    }

    fn gap_input() -> Vec<IndicatorObservation> {
        vec![
            ob("US", "gdp", 2020, 10.0),
            ob("US", "gdp", 2021, 11.0),
            ob("DE", "gdp", 2020, 5.0),
            ob("DE", "pop", 2021, 2.0),
            ob("US", "pop", 2021, 4.0),
        ]
    }

    #[test]
    fn carry_forward_fills_latest_year() {
        let out = impute(&gap_input(), ImputePolicy::CarryForward).unwrap();
        let de_gdp = out.iter().find(|o| o.country == cc("DE") && o.name == "gdp").unwrap();
        assert_eq!(de_gdp.year, 2021);
        assert_eq!(de_gdp.value, 5.0);
        assert_eq!(de_gdp.provenance, Provenance::CarriedForward);
        assert_eq!(out.len(), 4);
    }

    #[test]
    fn drop_removes_stale() {
        let out = impute(&gap_input(), ImputePolicy::Drop).unwrap();
        assert!(!out.iter().any(|o| o.country == cc("DE") && o.name == "gdp"));
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn mean_fills_from_other_countries() {
        let obs = vec![ob("US", "gdp", 2021, 2.0), ob("DE", "gdp", 2021, 4.0), ob("FR", "pop", 2021, 1.0)];
        let out = impute(&obs, ImputePolicy::Mean).unwrap();
        let fr = out.iter().find(|o| o.country == cc("FR") && o.name == "gdp").unwrap();
        assert_eq!(fr.value, 3.0);
        assert_eq!(fr.provenance, Provenance::MeanImputed);
    }

    #[test]
    fn mean_without_observed_values_errors() {
        let obs = vec![ob("US", "gdp", 2021, 2.0)];
        let err = impute_over(&obs, ImputePolicy::Mean, &[cc("US"), cc("DE")], &["gdp".into(), "pop".into()])
            .unwrap_err();
        assert!(matches!(err, Error::NothingToImpute(ref n) if n == "pop"), "{err:?}");
    }

    fn culture_row(code: &str, values: [f64; 6]) -> (CountryCode, CulturalIndices) {
        (cc(code), CulturalIndices::complete(values))
    }

    #[test]
    fn join_is_inner() {
        let mut partial = CulturalIndices::complete([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        partial.mas = None;
        let cultural = vec![
            culture_row("US", [40.0, 91.0, 62.0, 46.0, 26.0, 68.0]),
            culture_row("DE", [35.0, 67.0, 66.0, 65.0, 83.0, 40.0]),
            (cc("FR"), partial),
        ];
        let obs = vec![
            ob("US", "gdp", 2021, 2.0),
            ob("DE", "gdp", 2021, 4.0),
            ob("FR", "gdp", 2021, 1.0),
            ob("JP", "gdp", 2021, 1.0),
        ];
        let profiles = join_profiles(&cultural, &obs, &["gdp".to_owned()]).unwrap();
        let codes: Vec<_> = profiles.iter().map(|p| p.country.to_string()).collect();
        assert_eq!(codes, ["DE", "US"]);
    }

    #[test]
    fn join_with_mean_imputation_marks_provenance() {
        let cultural = vec![
            culture_row("US", [40.0, 91.0, 62.0, 46.0, 26.0, 68.0]),
            culture_row("DE", [35.0, 67.0, 66.0, 65.0, 83.0, 40.0]),
        ];
        let obs = vec![ob("US", "gdp", 2021, 2.0), ob("US", "pop", 2021, 3.0), ob("DE", "pop", 2021, 4.0)];
        let filled = impute(&obs, ImputePolicy::Mean).unwrap();
        let required = vec!["gdp".to_owned(), "pop".to_owned()];
        let profiles = join_profiles(&cultural, &filled, &required).unwrap();
        assert_eq!(profiles.len(), 2);
        assert_eq!(profiles[0].country, cc("DE"));
        assert_eq!(profiles[0].provenance["gdp"], Provenance::MeanImputed);
        assert_eq!(profiles[0].indicators["gdp"], 2.0);
    }

    #[test]
    fn join_empty_reports_missing_fields() {
        let cultural = vec![culture_row("US", [40.0, 91.0, 62.0, 46.0, 26.0, 68.0])];
        let err = join_profiles(&cultural, &[], &["gdp".to_owned()]).unwrap_err();
        match &err {
            Error::NoCompleteCountries { missing } => {
                assert_eq!(missing, &vec![("US".to_owned(), vec!["gdp".to_owned()])]);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("US lacks [gdp]"));
    }

    #[test]
    fn join_rejects_duplicate_culture() {
        let row = culture_row("US", [40.0, 91.0, 62.0, 46.0, 26.0, 68.0]);
        assert!(join_profiles(&[row, row], &[], &[]).is_err());
    }

    #[test]
    fn profile_json_shape() {
        let cultural = vec![culture_row("US", [40.0, 91.0, 62.0, 46.0, 26.0, 68.0])];
        let profiles = join_profiles(&cultural, &[ob("US", "gdp", 2021, 2.5)], &["gdp".to_owned()]).unwrap();
        let json = profiles_to_json(&profiles).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v[0]["country"], "US");
        assert_eq!(v[0]["culture"]["ltowvs"], 26.0);
        assert_eq!(v[0]["indicators"]["gdp"], 2.5);
        assert_eq!(v[0]["provenance"]["gdp"], "observed");
        assert_eq!(profiles_from_json(&json).unwrap(), profiles);
    }

    const CODES: [&str; 8] = ["US", "DE", "FR", "JP", "CO", "BR", "IN", "ZA"];

    fn arb_culture() -> impl Strategy<Value = Vec<(CountryCode, CulturalIndices)>> {
        proptest::sample::subsequence(CODES.to_vec(), 1..=CODES.len()).prop_flat_map(|codes| {
            let n = codes.len();
            proptest::collection::vec(
                proptest::array::uniform6(proptest::option::weighted(0.9, 0.0f64..120.0)),
                n,
            )
            .prop_map(move |vals| {
                codes
                    .iter()
                    .zip(vals)
                    .map(|(c, v)| (cc(c), CulturalIndices::from_array(v)))
                    .collect()
            })
        })
    }

    fn arb_obs() -> impl Strategy<Value = Vec<IndicatorObservation>> {
        proptest::collection::vec(
            (
                proptest::sample::select(CODES.to_vec()),
                proptest::sample::select(vec!["gdp", "pop", "broadband"]),
                2018i32..2022,
                -1e9f64..1e9,
            )
                .prop_map(|(c, n, y, v)| ob(c, n, y, v)),
            0..40,
        )
    }

    proptest! {
        #[test]
        fn cultural_round_trip(rows in arb_culture()) {
            let mut buf = Vec::new();
            write_cultural_csv(&mut buf, &rows).unwrap();
            let back = parse_cultural_reader(buf.as_slice(), Path::new("rt.csv")).unwrap();
            prop_assert_eq!(back, rows);
        }

        #[test]
        fn socio_round_trip(obs in arb_obs()) {
            let mut buf = Vec::new();
            write_socioeconomic_csv(&mut buf, &obs).unwrap();
            let back = parse_socioeconomic_reader(buf.as_slice(), Path::new("rt.csv"), Category::Economic).unwrap();
            prop_assert_eq!(back, obs);
        }

        #[test]
        fn join_is_permutation_invariant(
            rows in arb_culture(),
            obs in arb_obs(),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let required = vec!["gdp".to_owned(), "pop".to_owned()];
            let filtered = impute(&obs, ImputePolicy::Drop).unwrap();
            let a = join_profiles(&rows, &filtered, &required);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut rows2 = rows.clone();
            let mut filtered2 = filtered.clone();
            rows2.shuffle(&mut rng);
            filtered2.shuffle(&mut rng);
            let b = join_profiles(&rows2, &filtered2, &required);
            match (a, b) {
                (Ok(a), Ok(b)) => {
                    for p in &a {
                        prop_assert_eq!(p.indicators.keys().collect::<Vec<_>>(), vec!["gdp", "pop"]);
                        prop_assert!(p.feature_vector().iter().all(|v| v.is_finite()));
                    }
                    prop_assert_eq!(a, b);
                }
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "join outcome depends on order"),
            }
        }
    }
}
