//! Seeded synthetic subscriber aggregates and a synthetic country world.
//!
//! Each row's target plan comes from a softmax over plan utilities. A country
//! score `s` in [0, 1] is the signal-weighted sum of its min-max scaled
//! profile features, rescaled over the configured countries; plan `k` of `K`
//! has utility `-|s (K - 1) - k|`. Sampling adds Gumbel noise of scale
//! `noise` to each utility and takes the argmax, which is exactly a softmax
//! draw at temperature `noise`. With `noise = 0` the argmax plan is emitted
//! (ties go to the cheaper plan).

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::country::CountryCode;
use crate::error::{Error, Result};
use crate::ingest::{Category, CountryProfile, CulturalIndices, IndicatorObservation, Provenance};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub label: String,
    pub price: f64,
}

/// Per-country ordered plan list, cheapest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<CountryCode, Vec<Plan>>", into = "BTreeMap<CountryCode, Vec<Plan>>")]
pub struct PlanCatalog {
    plans: BTreeMap<CountryCode, Vec<Plan>>,
}

pub const DEFAULT_PLAN_LABELS: [&str; 3] = ["Basic", "Standard", "Premium"];
pub const DEFAULT_BASE_PRICES: [f64; 3] = [7.99, 11.99, 15.99];

impl PlanCatalog {
    pub fn new(plans: BTreeMap<CountryCode, Vec<Plan>>) -> Result<Self> {
        for (country, list) in &plans {
            if list.len() < 2 {
                return Err(Error::validation(format!("{country}: catalog needs at least two plans")));
            }
            let mut labels = BTreeSet::new();
            for (i, p) in list.iter().enumerate() {
                if !p.price.is_finite() {
                    return Err(Error::validation(format!("{country}: plan `{}` has a non-finite price", p.label)));
                }
                if !labels.insert(p.label.as_str()) {
                    return Err(Error::validation(format!("{country}: duplicate plan label `{}`", p.label)));
                }
                if i > 0 && p.price <= list[i - 1].price {
                    return Err(Error::validation(format!("{country}: plan prices must strictly increase")));
                }
            }
        }
        Ok(PlanCatalog { plans })
    }

    /// Three plans per country at the base prices times a seeded per-country
    /// factor in [0.7, 1.3].
    pub fn default_for(countries: &[CountryCode], seed: u64) -> Self {
        let plans = countries
            .iter()
            .map(|&c| {
                let factor = rng::indexed(seed, "catalog", rng::fnv1a(c.as_str().as_bytes())).gen_range(0.7..1.3);
                let list = DEFAULT_PLAN_LABELS
                    .iter()
                    .zip(DEFAULT_BASE_PRICES)
                    .map(|(label, base)| Plan {
                        label: (*label).to_owned(),
                        price: (base * factor * 100.0).round() / 100.0,
                    })
                    .collect();
                (c, list)
            })
            .collect();
        PlanCatalog { plans }
    }

    pub fn plans(&self, country: CountryCode) -> Result<&[Plan]> {
        self.plans
            .get(&country)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::validation(format!("{country} has no catalog entry")))
    }

    pub fn countries(&self) -> impl Iterator<Item = CountryCode> + '_ {
        self.plans.keys().copied()
    }

    pub fn price(&self, country: CountryCode, label: &str) -> Result<f64> {
        self.plans(country)?
            .iter()
            .find(|p| p.label == label)
            .map(|p| p.price)
            .ok_or_else(|| Error::validation(format!("{country} has no plan `{label}`")))
    }

    /// All plan labels across countries, sorted.
    pub fn labels(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.plans.values().flatten().map(|p| p.label.as_str()).collect();
        set.into_iter().map(str::to_owned).collect()
    }
}

impl TryFrom<BTreeMap<CountryCode, Vec<Plan>>> for PlanCatalog {
    type Error = Error;

    fn try_from(plans: BTreeMap<CountryCode, Vec<Plan>>) -> Result<Self> {
        PlanCatalog::new(plans)
    }
}

impl From<PlanCatalog> for BTreeMap<CountryCode, Vec<Plan>> {
    fn from(c: PlanCatalog) -> Self {
        c.plans
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubscriberAggregate {
    pub country: CountryCode,
    pub n_accounts: u64,
    pub n_plan_changes: u64,
    pub left_and_returned: bool,
    pub plan_from: String,
    pub price_from: f64,
    pub plan_to: String,
    pub price_to: f64,
    pub change_year: i32,
    pub change_month: u32,
    /// Carried for completeness; not a modeling feature.
    pub n_same_day_downgrades: u64,
}

impl SubscriberAggregate {
    pub fn validate(&self, catalog: &PlanCatalog) -> Result<()> {
        if self.n_accounts < 1 || self.n_plan_changes < 1 || self.n_same_day_downgrades < 1 {
            return Err(Error::validation(format!("{}: counts must be at least 1", self.country)));
        }
        if !(1..=12).contains(&self.change_month) {
            return Err(Error::validation(format!("{}: bad month {}", self.country, self.change_month)));
        }
        if self.price_to > self.price_from {
            return Err(Error::validation(format!("{}: price_to exceeds price_from", self.country)));
        }
        for (label, price) in [(&self.plan_from, self.price_from), (&self.plan_to, self.price_to)] {
            if catalog.price(self.country, label)? != price {
                return Err(Error::validation(format!("{}: plan `{label}` price mismatch", self.country)));
            }
        }
        Ok(())
    }
}

pub const DEFAULT_COUNTRIES: [&str; 14] = [
    "AU", "BR", "CA", "CO", "DE", "ES", "FR", "GB", "IN", "JP", "KR", "MX", "US", "ZA",
];
/// Countries the synthetic world ships with deliberately incomplete records.
pub const INCOMPLETE_COUNTRIES: [&str; 6] = ["EG", "NG", "PK", "VN", "TH", "AR"];

fn default_change_year() -> i32 {
    2023
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub rows: usize,
    pub countries: Vec<CountryCode>,
    pub noise: f64,
    pub signal_weights: BTreeMap<String, f64>,
    #[serde(default = "default_change_year")]
    pub change_year: i32,
}

impl SynthConfig {
    pub fn new(seed: u64, rows: usize, noise: f64) -> Self {
        SynthConfig {
            seed,
            rows,
            countries: default_countries(),
            noise,
            signal_weights: default_signal_weights(),
            change_year: default_change_year(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows < 1 {
            return Err(Error::validation("synth rows must be at least 1"));
        }
        if !self.noise.is_finite() || self.noise < 0.0 {
            return Err(Error::validation(format!("synth noise must be finite and non-negative, got {}", self.noise)));
        }
        if self.countries.is_empty() {
            return Err(Error::validation("synth config lists no countries"));
        }
        if self.signal_weights.values().any(|w| !w.is_finite()) {
            return Err(Error::validation("signal weights must be finite"));
        }
        Ok(())
    }
}

pub fn default_countries() -> Vec<CountryCode> {
    DEFAULT_COUNTRIES.iter().map(|c| CountryCode::new(c).expect("valid code")).collect()
}

/// Weights chosen so the seed-42 world has a country-level Bayes accuracy of
/// about 0.95 at noise 0.15.
pub fn default_signal_weights() -> BTreeMap<String, f64> {
    [
        ("idv", 0.75),
        ("pdi", -1.0),
        ("working_age_pct", 1.0),
        ("mobile_broadband_per100", -0.5),
        ("avg_download_mbps", -0.5),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_owned(), v))
    .collect()
}

/// Country scores in [0, 1] for every configured country.
pub fn country_scores(config: &SynthConfig, profiles: &[CountryProfile]) -> Result<BTreeMap<CountryCode, f64>> {
    let by_code: BTreeMap<CountryCode, &CountryProfile> = profiles.iter().map(|p| (p.country, p)).collect();
    let chosen: Vec<&CountryProfile> = config
        .countries
        .iter()
        .map(|c| by_code.get(c).copied().ok_or_else(|| Error::validation(format!("{c} has no profile"))))
        .collect::<Result<_>>()?;
    let mut raw = vec![0.0; chosen.len()];
    for (name, &w) in &config.signal_weights {
        let values: Vec<f64> = chosen
            .iter()
            .map(|p| {
                p.feature(name)
                    .ok_or_else(|| Error::validation(format!("{}: profile lacks signal feature `{name}`", p.country)))
            })
            .collect::<Result<_>>()?;
        let (lo, hi) = min_max(&values);
        for (r, v) in raw.iter_mut().zip(&values) {
            if hi > lo {
                *r += w * (v - lo) / (hi - lo);
            }
        }
    }
    let (lo, hi) = min_max(&raw);
    Ok(chosen
        .iter()
        .zip(&raw)
        .map(|(p, r)| (p.country, if hi > lo { (r - lo) / (hi - lo) } else { 0.0 }))
        .collect())
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

pub fn plan_utilities(score: f64, n_plans: usize) -> Vec<f64> {
    let pos = score * (n_plans - 1) as f64;
    (0..n_plans).map(|k| -(pos - k as f64).abs()).collect()
}

/// Softmax of the utilities at temperature `noise`; one-hot on the
/// (cheapest) argmax when `noise` is 0.
pub fn plan_probabilities(score: f64, n_plans: usize, noise: f64) -> Vec<f64> {
    let u = plan_utilities(score, n_plans);
    if noise == 0.0 {
        let best = argmax_first(&u);
        return (0..n_plans).map(|k| if k == best { 1.0 } else { 0.0 }).collect();
    }
    let m = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = u.iter().map(|x| ((x - m) / noise).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Accuracy of always predicting each country's most likely plan, with
/// countries weighted equally.
pub fn bayes_accuracy(config: &SynthConfig, profiles: &[CountryProfile], catalog: &PlanCatalog) -> Result<f64> {
    let scores = country_scores(config, profiles)?;
    let mut total = 0.0;
    for c in &config.countries {
        let p = plan_probabilities(scores[c], catalog.plans(*c)?.len(), config.noise);
        total += p.iter().cloned().fold(0.0, f64::max);
    }
    Ok(total / config.countries.len() as f64)
}

fn gumbel(rng: &mut Rng) -> f64 {
    let mut u: f64 = rng.gen();
    while u == 0.0 {
        u = rng.gen();
    }
    -(-u.ln()).ln()
}

/// Generates `config.rows` aggregates and the generative plan label of each.
pub fn generate(
    config: &SynthConfig,
    profiles: &[CountryProfile],
    catalog: &PlanCatalog,
) -> Result<(Vec<SubscriberAggregate>, Vec<String>)> {
    config.validate()?;
    for c in &config.countries {
        catalog.plans(*c)?;
    }
    let scores = country_scores(config, profiles)?;

    let mut rows = Vec::with_capacity(config.rows);
    for i in 0..config.rows {
        let country = config.countries[i % config.countries.len()];
        let plans = catalog.plans(country)?;
        let mut r = rng::indexed(config.seed, "synth-row", i as u64);

        let u = plan_utilities(scores[&country], plans.len());
        let to = if config.noise == 0.0 {
            argmax_first(&u)
        } else {
            let noisy: Vec<f64> = u.iter().map(|x| x + config.noise * gumbel(&mut r)).collect();
            argmax_first(&noisy)
        };
        let from = r.gen_range(to..plans.len());

        // Pareto tail with shape 1.5.
        let tail: f64 = 1.0 - r.gen::<f64>();
        let n_accounts = 1 + (10.0 * (tail.powf(-1.0 / 1.5) - 1.0)).floor().min(1e9) as u64;
        let mut n_plan_changes = 1;
        while n_plan_changes < 20 && r.gen_bool(0.5) {
            n_plan_changes += 1;
        }
        let left_and_returned = r.gen_bool(0.3);
        let change_month = r.gen_range(1..=12);
        let n_same_day_downgrades = 1 + (n_accounts as f64 * r.gen::<f64>() * 0.1).floor() as u64;

        rows.push((
            SubscriberAggregate {
                country,
                n_accounts,
                n_plan_changes,
                left_and_returned,
                plan_from: plans[from].label.clone(),
                price_from: plans[from].price,
                plan_to: plans[to].label.clone(),
                price_to: plans[to].price,
                change_year: config.change_year,
                change_month,
                n_same_day_downgrades,
            },
            plans[to].label.clone(),
        ));
    }
    rows.shuffle(&mut rng::stream(config.seed, "synth-order"));
    Ok(rows.into_iter().unzip())
}

pub fn write_aggregates_csv<W: Write>(w: W, rows: &[SubscriberAggregate]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    for r in rows {
        writer.serialize(r)?;
    }
    writer.flush().map_err(|e| Error::io("<aggregates>", e))?;
    Ok(())
}

pub fn read_aggregates_csv(path: &Path) -> Result<Vec<SubscriberAggregate>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_aggregates(file, path)
}

pub fn read_aggregates<R: Read>(rdr: R, source: &Path) -> Result<Vec<SubscriberAggregate>> {
    let mut reader = csv::Reader::from_reader(rdr);
    let mut out = Vec::new();
    for rec in reader.deserialize() {
        let row: SubscriberAggregate = rec.map_err(|e| Error::Parse {
            path: source.to_owned(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        out.push(row);
    }
    Ok(out)
}

pub fn write_ground_truth_csv<W: Write>(w: W, truth: &[String]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    writer.write_record(["row_index", "plan_label"])?;
    for (i, label) in truth.iter().enumerate() {
        writer.write_record([i.to_string(), label.clone()])?;
    }
    writer.flush().map_err(|e| Error::io("<ground truth>", e))?;
    Ok(())
}

/// Indicator names of the synthetic world, per category.
pub fn world_indicators() -> Vec<(Category, &'static str)> {
    const INFRA: [&str; 11] = [
        "internet_users_pct",
        "mobile_subscriptions_per100",
        "fixed_broadband_per100",
        "secure_servers_per_million",
        "electricity_access_pct",
        "mobile_broadband_per100",
        "avg_download_mbps",
        "ict_goods_imports_pct",
        "tv_households_pct",
        "smartphone_adoption_pct",
        "lte_coverage_pct",
    ];
    const DEMO: [&str; 11] = [
        "population_millions",
        "urban_population_pct",
        "median_age",
        "population_growth_pct",
        "working_age_pct",
        "life_expectancy",
        "tertiary_enrollment_pct",
        "literacy_rate_pct",
        "household_size",
        "net_migration_rate",
        "fertility_rate",
    ];
    const ECON: [&str; 11] = [
        "gdp_per_capita_usd",
        "gdp_growth_pct",
        "inflation_pct",
        "unemployment_pct",
        "gini_index",
        "household_consumption_per_capita",
        "ppp_conversion_factor",
        "lending_rate_pct",
        "exchange_rate_volatility",
        "tax_revenue_pct_gdp",
        "services_value_added_pct",
    ];
    const MARKET: [&str; 11] = [
        "svod_penetration_pct",
        "pay_tv_penetration_pct",
        "digital_ad_spend_per_capita",
        "ecommerce_share_pct",
        "card_ownership_pct",
        "streaming_competitors",
        "piracy_index",
        "content_spend_per_capita",
        "mobile_payment_pct",
        "entertainment_spend_pct",
        "online_video_reach_pct",
    ];
    [
        (Category::Infrastructure, INFRA),
        (Category::Demographics, DEMO),
        (Category::Economic, ECON),
        (Category::MarketOpportunity, MARKET),
    ]
    .into_iter()
    .flat_map(|(cat, names)| names.into_iter().map(move |n| (cat, n)))
    .collect()
}

pub fn world_indicator_names() -> Vec<String> {
    world_indicators().into_iter().map(|(_, n)| n.to_owned()).collect()
}

/// Rough real-world magnitude of each indicator.
fn typical_level(name: &str) -> f64 {
    match name {
        "internet_users_pct" => 75.0,
        "mobile_subscriptions_per100" => 115.0,
        "fixed_broadband_per100" => 22.0,
        "secure_servers_per_million" => 9000.0,
        "electricity_access_pct" => 95.0,
        "mobile_broadband_per100" => 80.0,
        "avg_download_mbps" => 60.0,
        "ict_goods_imports_pct" => 10.0,
        "tv_households_pct" => 90.0,
        "smartphone_adoption_pct" => 70.0,
        "lte_coverage_pct" => 92.0,
        "population_millions" => 60.0,
        "urban_population_pct" => 70.0,
        "median_age" => 33.0,
        "population_growth_pct" => 1.0,
        "working_age_pct" => 65.0,
        "life_expectancy" => 75.0,
        "tertiary_enrollment_pct" => 55.0,
        "literacy_rate_pct" => 92.0,
        "household_size" => 3.0,
        "net_migration_rate" => 2.0,
        "fertility_rate" => 1.9,
        "gdp_per_capita_usd" => 25_000.0,
        "gdp_growth_pct" => 2.5,
        "inflation_pct" => 4.0,
        "unemployment_pct" => 7.0,
        "gini_index" => 38.0,
        "household_consumption_per_capita" => 14_000.0,
        "ppp_conversion_factor" => 20.0,
        "lending_rate_pct" => 8.0,
        "exchange_rate_volatility" => 5.0,
        "tax_revenue_pct_gdp" => 18.0,
        "services_value_added_pct" => 60.0,
        "svod_penetration_pct" => 35.0,
        "pay_tv_penetration_pct" => 40.0,
        "digital_ad_spend_per_capita" => 60.0,
        "ecommerce_share_pct" => 15.0,
        "card_ownership_pct" => 60.0,
        "streaming_competitors" => 8.0,
        "piracy_index" => 40.0,
        "content_spend_per_capita" => 45.0,
        "mobile_payment_pct" => 35.0,
        "entertainment_spend_pct" => 5.0,
        "online_video_reach_pct" => 80.0,
        _ => 10.0,
    }
}

fn is_percentage(name: &str) -> bool {
    name.ends_with("_pct") || name.contains("_pct_")
}

pub const WORLD_YEARS: std::ops::RangeInclusive<i32> = 2019..=2021;
const LATENT_DIM: usize = 3;

/// Cultural table and yearly indicator observations for a synthetic world.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthWorld {
    pub cultural: Vec<(CountryCode, CulturalIndices)>,
    pub observations: Vec<IndicatorObservation>,
}

impl SynthWorld {
    pub fn observations_for(&self, category: Category) -> Vec<IndicatorObservation> {
        self.observations.iter().filter(|o| o.category == category).cloned().collect()
    }
}

fn std_normal(rng: &mut Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

struct Loading {
    axis: [f64; LATENT_DIM],
    rho: f64,
}

fn loading(rng: &mut Rng, rho_range: std::ops::Range<f64>) -> Loading {
    let mut axis = [0.0; LATENT_DIM];
    for a in &mut axis {
        *a = std_normal(rng);
    }
    let norm = axis.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
    axis.iter_mut().for_each(|a| *a /= norm);
    Loading { axis, rho: rng.gen_range(rho_range) }
}

impl Loading {
    fn factor(&self, z: &[f64; LATENT_DIM], idio: f64) -> f64 {
        let common: f64 = self.axis.iter().zip(z).map(|(a, b)| a * b).sum();
        self.rho * common + (1.0 - self.rho * self.rho).sqrt() * idio
    }
}

/// A latent-factor world: each country has a few hidden traits, and every
/// cultural index and indicator is a noisy linear readout of them. Countries
/// in `incomplete` lose a cultural index or a whole indicator so the join
/// has something to reject.
pub fn synth_world(seed: u64, complete: &[CountryCode], incomplete: &[CountryCode]) -> SynthWorld {
    let mut lrng = rng::stream(seed, "world-loadings");
    let culture_loadings: Vec<Loading> = (0..6).map(|_| loading(&mut lrng, 0.6..0.95)).collect();
    let indicators = world_indicators();
    let indicator_loadings: Vec<(Loading, f64, f64)> = indicators
        .iter()
        .map(|(_, name)| {
            let l = loading(&mut lrng, 0.2..1.0);
            let mean = typical_level(name) * lrng.gen_range(0.75..1.25);
            let spread = lrng.gen_range(0.1..0.4);
            (l, mean, spread)
        })
        .collect();

    let mut cultural = Vec::new();
    let mut observations = Vec::new();
    let all: Vec<(CountryCode, bool)> = complete
        .iter()
        .map(|c| (*c, true))
        .chain(incomplete.iter().map(|c| (*c, false)))
        .collect();
    for (ci, (country, is_complete)) in all.iter().enumerate() {
        let mut crng = rng::indexed(seed, "world-country", rng::fnv1a(country.as_str().as_bytes()));
        let mut z = [0.0; LATENT_DIM];
        for v in &mut z {
            *v = std_normal(&mut crng);
        }
        let mut culture = [None; 6];
        for (slot, l) in culture.iter_mut().zip(&culture_loadings) {
            let f = l.factor(&z, std_normal(&mut crng));
            *slot = Some((50.0 + 18.0 * f).clamp(1.0, 110.0).round());
        }
        // Incomplete countries alternate between a culture gap and an
        // indicator gap.
        let gap_culture = !is_complete && ci % 2 == 0;
        let gap_indicator = !is_complete && !gap_culture;
        if gap_culture {
            culture[crng.gen_range(0..6)] = None;
        }
        let skip = if gap_indicator { Some(crng.gen_range(0..indicators.len())) } else { None };
        cultural.push((*country, CulturalIndices::from_array(culture)));

        for (ii, ((cat, name), (l, mean, spread))) in indicators.iter().zip(&indicator_loadings).enumerate() {
            let level = l.factor(&z, std_normal(&mut crng));
            if Some(ii) == skip {
                continue;
            }
            for year in WORLD_YEARS {
                let drift = 0.02 * f64::from(year - WORLD_YEARS.end());
                let jitter = 0.01 * std_normal(&mut crng);
                let value = if is_percentage(name) {
                    // Logistic readout keeps percentages inside (0, 100).
                    let p = (mean / 100.0).clamp(0.02, 0.98);
                    let logit = (p / (1.0 - p)).ln() + 2.5 * spread * level + drift + jitter;
                    100.0 / (1.0 + (-logit).exp())
                } else {
                    mean * (1.0 + spread * level).max(0.05) * (1.0 + drift) * (1.0 + jitter)
                };
                let value = (value * 1e4).round() / 1e4;
                observations.push(IndicatorObservation {
                    country: *country,
                    category: *cat,
                    name: (*name).to_owned(),
                    year,
                    value,
                    provenance: Provenance::Observed,
                });
            }
        }
    }
    cultural.sort_by_key(|(c, _)| *c);
    SynthWorld { cultural, observations }
}

pub fn incomplete_countries() -> Vec<CountryCode> {
    INCOMPLETE_COUNTRIES.iter().map(|c| CountryCode::new(c).expect("valid code")).collect()
}
