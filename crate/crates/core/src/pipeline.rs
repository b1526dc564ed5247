//! End-to-end run: every stage reads its inputs from, and writes its outputs
//! to, a single output directory, so stages can be rerun independently.
//!
//! ```text
//! <out>/world/*.csv               synthetic cultural and indicator tables
//! <out>/profiles.json             joined country profiles
//! <out>/synth/*                   aggregates, ground truth, catalog
//! <out>/matrix/*                  encoded matrix, sidecar, row labels
//! <out>/features/*                reduction report, heatmap, scatter
//! <out>/models/*                  fitted models and training histories
//! <out>/grid/*                    grid-search trials
//! <out>/metrics/*.json            per-run test metrics
//! <out>/comparison.{txt,csv}
//! <out>/report/                   bundle with manifest.json
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{self, GnbModel, RandomForest, RfParams, SgdClassifier};
use crate::country::CountryCode;
use crate::error::{Error, Result};
use crate::evaluate::{self, Averaging, ComparisonTable, FeatureSet, MetricsReport};
use crate::featureselect::{self, ReductionReport};
use crate::ingest::{self, Category, CountryProfile, CulturalDimension, ImputePolicy};
use crate::nn::{self, EpochRecord, MlpModel, Preset};
use crate::preprocess::{self, Column, FeatureMatrix, MatrixSidecar, ScalerParams, SplitIndices};
use crate::synthgen::{self, PlanCatalog, SubscriberAggregate, SynthConfig};

pub const TARGET: &str = "price_to";
pub const DOMAIN_NUMERIC: [&str; 3] = ["n_accounts", "n_plan_changes", "price_from"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    /// Cultural index CSV. Absent means: generate the synthetic world.
    pub cultural: Option<PathBuf>,
    pub indicators: BTreeMap<Category, PathBuf>,
    pub impute: Vec<ImputePolicy>,
    /// Indicators every country must have; defaults to all observed.
    pub required_indicators: Option<Vec<String>>,
}

impl Default for DataPaths {
    fn default() -> Self {
        DataPaths {
            cultural: None,
            indicators: BTreeMap::new(),
            impute: vec![ImputePolicy::Drop],
            required_indicators: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainPaths {
    /// Aggregates CSV. Absent means: generate synthetic aggregates.
    pub aggregates: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub rows: usize,
    pub noise: f64,
    pub countries: Option<Vec<CountryCode>>,
    pub signal_weights: Option<BTreeMap<String, f64>>,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings {
            rows: 50_000,
            noise: 0.15,
            countries: None,
            signal_weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSettings {
    /// Whether `pipeline` runs the grid stage.
    pub enabled: bool,
    pub batch_sizes: Vec<usize>,
    pub epochs: Vec<usize>,
}

impl Default for GridSettings {
    fn default() -> Self {
        GridSettings {
            enabled: false,
            batch_sizes: nn::DEFAULT_BATCH_GRID.to_vec(),
            epochs: nn::DEFAULT_EPOCH_GRID.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnOverrides {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSettings {
    pub rf_trees: usize,
    pub sgd_learning_rate: f64,
    pub sgd_epochs: usize,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        BaselineSettings {
            rf_trees: 100,
            sgd_learning_rate: 0.01,
            sgd_epochs: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataPaths,
    pub domain: DomainPaths,
    pub synth: SynthSettings,
    pub categorical_columns: Vec<String>,
    pub log_columns: Vec<String>,
    /// Columns standardized before min-max scaling; absent means every
    /// cultural and indicator column.
    pub standardize_columns: Option<Vec<String>>,
    pub outlier_columns: Vec<String>,
    pub outlier_z: f64,
    pub split: [f64; 3],
    pub t_low: f64,
    pub t_redundant: f64,
    pub preset: Preset,
    pub grid: GridSettings,
    pub ann: AnnOverrides,
    pub baselines: BaselineSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            output_dir: PathBuf::from("out"),
            data: DataPaths::default(),
            domain: DomainPaths::default(),
            synth: SynthSettings::default(),
            categorical_columns: ["plan_from", "left_and_returned", "change_month", "change_year"]
                .map(String::from)
                .to_vec(),
            log_columns: vec!["n_accounts".into()],
            standardize_columns: None,
            outlier_columns: vec!["n_accounts".into(), "n_plan_changes".into()],
            outlier_z: 4.0,
            split: [0.4, 0.3, 0.3],
            t_low: featureselect::DEFAULT_T_LOW,
            t_redundant: featureselect::DEFAULT_T_REDUNDANT,
            preset: Preset::Final,
            grid: GridSettings::default(),
            ann: AnnOverrides::default(),
            baselines: BaselineSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Loads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_relative_to(base);
        Ok(cfg)
    }

    pub fn resolve_relative_to(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let Some(p) = self.data.cultural.as_mut() {
            fix(p);
        }
        self.data.indicators.values_mut().for_each(fix);
        if let Some(p) = self.domain.aggregates.as_mut() {
            fix(p);
        }
        if let Some(p) = self.domain.catalog.as_mut() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (label, t) in [("t_low", self.t_low), ("t_redundant", self.t_redundant)] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::validation(format!("{label} must lie in [0, 1], got {t}")));
            }
        }
        let [a, b, c] = self.split;
        if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!("split ratios must be positive and sum to 1, got {:?}", self.split)));
        }
        if self.data.cultural.is_some() != !self.data.indicators.is_empty() {
            return Err(Error::validation("cultural and indicator paths must be given together"));
        }
        if self.domain.aggregates.is_some() != self.domain.catalog.is_some() {
            return Err(Error::validation("aggregates and catalog paths must be given together"));
        }
        let paths = self
            .data
            .cultural
            .iter()
            .chain(self.data.indicators.values())
            .chain(self.domain.aggregates.iter())
            .chain(self.domain.catalog.iter());
        for p in paths {
            if !p.exists() {
                return Err(Error::validation(format!("input file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout {
            root: self.output_dir.clone(),
        }
    }

    /// Copy with the output location blanked, for echoing into the report.
    pub fn echo(&self) -> RunConfig {
        RunConfig {
            output_dir: PathBuf::from("."),
            ..self.clone()
        }
    }
}

/// Artifact locations under an output root.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }
    pub fn world(&self, file: &str) -> PathBuf {
        self.root.join("world").join(file)
    }
    pub fn profiles(&self) -> PathBuf {
        self.path("profiles.json")
    }
    pub fn aggregates(&self) -> PathBuf {
        self.path("synth/aggregates.csv")
    }
    pub fn ground_truth(&self) -> PathBuf {
        self.path("synth/ground_truth.csv")
    }
    pub fn catalog(&self) -> PathBuf {
        self.path("synth/catalog.json")
    }
    pub fn synth_config(&self) -> PathBuf {
        self.path("synth/synth_config.json")
    }
    pub fn matrix(&self) -> PathBuf {
        self.path("matrix/encoded.csv")
    }
    pub fn sidecar(&self) -> PathBuf {
        self.path("matrix/encoded.json")
    }
    pub fn row_labels(&self) -> PathBuf {
        self.path("matrix/labels.csv")
    }
    pub fn reduction(&self) -> PathBuf {
        self.path("features/reduction.json")
    }
    pub fn heatmap(&self) -> PathBuf {
        self.path("features/heatmap.csv")
    }
    pub fn scatter(&self) -> PathBuf {
        self.path("features/scatter.csv")
    }
    pub fn scatter_pairs(&self) -> PathBuf {
        self.path("features/scatter_pairs.csv")
    }
    pub fn model(&self, run: &str) -> PathBuf {
        self.root.join("models").join(format!("{run}.json"))
    }
    pub fn history(&self, run: &str) -> PathBuf {
        self.root.join("models").join(format!("{run}-history.csv"))
    }
    pub fn grid_trials(&self) -> PathBuf {
        self.path("grid/trials.csv")
    }
    pub fn grid_best(&self) -> PathBuf {
        self.path("grid/best.json")
    }
    pub fn metrics(&self, run: &str) -> PathBuf {
        self.root.join("metrics").join(format!("{run}.json"))
    }
    pub fn comparison_txt(&self) -> PathBuf {
        self.path("comparison.txt")
    }
    pub fn comparison_csv(&self) -> PathBuf {
        self.path("comparison.csv")
    }
    pub fn reference_csv(&self) -> PathBuf {
        self.path("reference.csv")
    }
    pub fn report_dir(&self) -> PathBuf {
        self.path("report")
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn require(path: &Path, stage: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            artifact: path.display().to_string(),
            stage: stage.to_owned(),
        })
    }
}

fn read(path: &Path, stage: &str) -> Result<String> {
    require(path, stage)?;
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

// ---- ingest -------------------------------------------------------------

/// Writes the synthetic world tables and returns their paths.
fn write_world(cfg: &RunConfig) -> Result<(PathBuf, BTreeMap<Category, PathBuf>)> {
    let layout = cfg.layout();
    let complete = cfg.synth.countries.clone().unwrap_or_else(synthgen::default_countries);
    let world = synthgen::synth_world(cfg.seed, &complete, &synthgen::incomplete_countries());
    let cultural = layout.world("cultural.csv");
    let mut buf = Vec::new();
    ingest::write_cultural_csv(&mut buf, &world.cultural)?;
    write(&cultural, buf)?;
    let mut indicators = BTreeMap::new();
    for cat in Category::ALL {
        let path = layout.world(&format!("{}.csv", cat.name()));
        let mut buf = Vec::new();
        ingest::write_socioeconomic_csv(&mut buf, &world.observations_for(cat))?;
        write(&path, buf)?;
        indicators.insert(cat, path);
    }
    Ok((cultural, indicators))
}

pub fn stage_ingest(cfg: &RunConfig) -> Result<Vec<CountryProfile>> {
    let (cultural_path, indicator_paths) = match &cfg.data.cultural {
        Some(p) => (p.clone(), cfg.data.indicators.clone()),
        None => write_world(cfg)?,
    };
    let cultural = ingest::parse_cultural_csv(&cultural_path)?;
    let mut observations = Vec::new();
    for (cat, path) in &indicator_paths {
        observations.extend(ingest::parse_socioeconomic_csv(path, *cat)?);
    }
    let reconciled = ingest::impute_chain(&observations, &cfg.data.impute)?;
    let required = match &cfg.data.required_indicators {
        Some(r) => r.clone(),
        None => {
            let set: std::collections::BTreeSet<String> = reconciled.iter().map(|o| o.name.clone()).collect();
            set.into_iter().collect()
        }
    };
    let profiles = ingest::join_profiles(&cultural, &reconciled, &required)?;
    log::info!("joined {} complete country profiles", profiles.len());
    write(&cfg.layout().profiles(), ingest::profiles_to_json(&profiles)? + "\n")?;
    Ok(profiles)
}

fn load_profiles(cfg: &RunConfig) -> Result<Vec<CountryProfile>> {
    ingest::profiles_from_json(&read(&cfg.layout().profiles(), "ingest")?)
}

// ---- synth --------------------------------------------------------------

pub fn synth_config(cfg: &RunConfig, profiles: &[CountryProfile]) -> SynthConfig {
    let mut sc = SynthConfig::new(cfg.seed, cfg.synth.rows, cfg.synth.noise);
    sc.countries = match &cfg.synth.countries {
        Some(c) => c.clone(),
        None => profiles.iter().map(|p| p.country).collect(),
    };
    if let Some(w) = &cfg.synth.signal_weights {
        sc.signal_weights = w.clone();
    }
    sc
}

pub fn stage_synth(cfg: &RunConfig) -> Result<(Vec<SubscriberAggregate>, Vec<String>)> {
    let profiles = load_profiles(cfg)?;
    let sc = synth_config(cfg, &profiles);
    let catalog = PlanCatalog::default_for(&sc.countries, cfg.seed);
    let (rows, truth) = synthgen::generate(&sc, &profiles, &catalog)?;
    let layout = cfg.layout();
    let mut buf = Vec::new();
    synthgen::write_aggregates_csv(&mut buf, &rows)?;
    write(&layout.aggregates(), buf)?;
    let mut buf = Vec::new();
    synthgen::write_ground_truth_csv(&mut buf, &truth)?;
    write(&layout.ground_truth(), buf)?;
    write(&layout.catalog(), to_json(&catalog)?)?;
    write(&layout.synth_config(), to_json(&sc)?)?;
    Ok((rows, truth))
}

fn domain_paths(cfg: &RunConfig) -> (PathBuf, PathBuf) {
    match (&cfg.domain.aggregates, &cfg.domain.catalog) {
        (Some(a), Some(c)) => (a.clone(), c.clone()),
        _ => (cfg.layout().aggregates(), cfg.layout().catalog()),
    }
}

pub fn load_catalog(cfg: &RunConfig) -> Result<PlanCatalog> {
    let (_, catalog) = domain_paths(cfg);
    Ok(serde_json::from_str(&read(&catalog, "synth")?)?)
}

// ---- preprocess ---------------------------------------------------------

/// Per-row identity kept beside the matrix: the row's country and true plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowLabel {
    pub country: CountryCode,
    pub plan_to: String,
}

/// Joins domain rows with their country profile. Rows from countries
/// without a complete profile are dropped.
pub fn enrich(
    rows: &[SubscriberAggregate],
    profiles: &[CountryProfile],
) -> Result<(FeatureMatrix, Vec<RowLabel>)> {
    let by_code: BTreeMap<CountryCode, &CountryProfile> = profiles.iter().map(|p| (p.country, p)).collect();
    let kept: Vec<&SubscriberAggregate> = rows.iter().filter(|r| by_code.contains_key(&r.country)).collect();
    if kept.len() < rows.len() {
        log::info!("dropped {} domain rows without a complete country profile", rows.len() - kept.len());
    }
    if kept.is_empty() {
        return Err(Error::validation("no domain rows match a complete country profile"));
    }
    let profile_names = profiles[0].feature_names();
    let mut cols: Vec<(Column, Vec<f64>)> = Vec::new();
    let num = |name: &str, f: &dyn Fn(&SubscriberAggregate) -> f64| (Column::numeric(name), kept.iter().map(|r| f(r)).collect());
    cols.push(num("n_accounts", &|r| r.n_accounts as f64));
    cols.push(num("n_plan_changes", &|r| r.n_plan_changes as f64));
    cols.push(num("price_from", &|r| r.price_from));
    let cat = |name: &str, f: &dyn Fn(&SubscriberAggregate) -> String| {
        let raw: Vec<String> = kept.iter().map(|r| f(r)).collect();
        Column::categorical(name, &raw)
    };
    cols.push(cat("plan_from", &|r| r.plan_from.clone()));
    cols.push(cat("left_and_returned", &|r| r.left_and_returned.to_string()));
    cols.push(cat("change_month", &|r| format!("{:02}", r.change_month)));
    cols.push(cat("change_year", &|r| r.change_year.to_string()));
    for name in &profile_names {
        let values = kept
            .iter()
            .map(|r| {
                by_code[&r.country]
                    .feature(name)
                    .ok_or_else(|| Error::validation(format!("{} profile lacks `{name}`", r.country)))
            })
            .collect::<Result<Vec<f64>>>()?;
        cols.push((Column::numeric(name.clone()), values));
    }
    cols.push(num(TARGET, &|r| r.price_to));
    let labels = kept
        .iter()
        .map(|r| RowLabel {
            country: r.country,
            plan_to: r.plan_to.clone(),
        })
        .collect();
    Ok((FeatureMatrix::from_columns(cols, TARGET)?, labels))
}

pub struct Prepared {
    pub matrix: FeatureMatrix,
    pub labels: Vec<RowLabel>,
    pub split: SplitIndices,
    pub scaler: ScalerParams,
}

/// Outlier removal, split, scaling fitted on training rows, and one-hot
/// encoding.
pub fn prepare(cfg: &RunConfig, enriched: &FeatureMatrix, labels: &[RowLabel]) -> Result<Prepared> {
    let (clean, report) = preprocess::remove_outliers(enriched, &cfg.outlier_columns, cfg.outlier_z)?;
    let dropped: std::collections::BTreeSet<usize> = report.dropped_rows.iter().copied().collect();
    let labels: Vec<RowLabel> = labels
        .iter()
        .enumerate()
        .filter(|(i, _)| !dropped.contains(i))
        .map(|(_, l)| l.clone())
        .collect();
    let [a, b, c] = cfg.split;
    let split = preprocess::split(clean.n_rows(), (a, b, c), cfg.seed)?;

    let profile_cols: Vec<String> = CulturalDimension::ALL
        .iter()
        .map(|d| d.name().to_owned())
        .chain(
            clean
                .columns()
                .iter()
                .skip(DOMAIN_NUMERIC.len() + 4)
                .map(|c| c.name.clone())
                .filter(|n| n != TARGET && CulturalDimension::from_name(n).is_none()),
        )
        .collect();
    let std_cols = cfg.standardize_columns.clone().unwrap_or(profile_cols);
    let mut scaler = preprocess::fit_standardize(&clean, &split.train, &std_cols)?;
    let standardized = preprocess::apply_scaler(&clean, &scaler)?;

    let numeric: Vec<String> = standardized
        .columns()
        .iter()
        .filter(|c| c.kind == preprocess::ColumnKind::Numeric)
        .map(|c| c.name.clone())
        .collect();
    let minmax = preprocess::fit_minmax(&standardized, &split.train, &numeric, &cfg.log_columns)?;
    let scaled = preprocess::apply_scaler(&standardized, &minmax)?;
    scaler.extend(minmax);

    let encoder = preprocess::OneHotEncoder::fit(&scaled, &split.train, &cfg.categorical_columns)?;
    let matrix = encoder.transform(&scaled)?;
    log::info!("encoded matrix: {} rows, {} inputs", matrix.n_rows(), matrix.input_names().len());
    Ok(Prepared {
        matrix,
        labels,
        split,
        scaler,
    })
}

pub fn stage_preprocess(cfg: &RunConfig) -> Result<Prepared> {
    let profiles = load_profiles(cfg)?;
    let (aggregates, _) = domain_paths(cfg);
    require(&aggregates, "synth")?;
    let rows = synthgen::read_aggregates_csv(&aggregates)?;
    let (enriched, labels) = enrich(&rows, &profiles)?;
    let prepared = prepare(cfg, &enriched, &labels)?;

    let layout = cfg.layout();
    let mut buf = Vec::new();
    preprocess::write_matrix_csv(&mut buf, &prepared.matrix)?;
    write(&layout.matrix(), buf)?;
    let sidecar = MatrixSidecar {
        columns: prepared.matrix.columns().to_vec(),
        target_name: TARGET.to_owned(),
        scaler_params: prepared.scaler.clone(),
        split_indices: Some(prepared.split.clone()),
        seed: cfg.seed,
    };
    write(&layout.sidecar(), to_json(&sidecar)?)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for l in &prepared.labels {
        w.serialize(l)?;
    }
    write(&layout.row_labels(), w.into_inner().map_err(|e| Error::io(layout.row_labels(), e.into_error()))?)?;
    Ok(prepared)
}

pub fn load_prepared(cfg: &RunConfig) -> Result<Prepared> {
    let layout = cfg.layout();
    let sidecar: MatrixSidecar = serde_json::from_str(&read(&layout.sidecar(), "preprocess")?)?;
    require(&layout.matrix(), "preprocess")?;
    let file = fs::File::open(layout.matrix()).map_err(|e| Error::io(layout.matrix(), e))?;
    let matrix = preprocess::read_matrix_csv(std::io::BufReader::new(file), &sidecar)?;
    let text = read(&layout.row_labels(), "preprocess")?;
    let labels = csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<Vec<RowLabel>, _>>()?;
    if labels.len() != matrix.n_rows() {
        return Err(Error::validation("row labels do not match the encoded matrix"));
    }
    let split = sidecar
        .split_indices
        .ok_or_else(|| Error::validation("matrix sidecar carries no split"))?;
    Ok(Prepared {
        matrix,
        labels,
        split,
        scaler: sidecar.scaler_params,
    })
}

// ---- features -----------------------------------------------------------

pub fn stage_features(cfg: &RunConfig) -> Result<ReductionReport> {
    let prepared = load_prepared(cfg)?;
    let profiles = load_profiles(cfg)?;
    let corr = featureselect::correlation_matrix_rows(&prepared.matrix, &prepared.split.train)?;
    let report = featureselect::reduce_features(&corr, TARGET, cfg.t_low, cfg.t_redundant)?;
    log::info!(
        "kept {} of {} inputs",
        report.kept.len(),
        prepared.matrix.input_names().len()
    );
    let layout = cfg.layout();
    write(&layout.reduction(), to_json(&report)?)?;
    write(&layout.heatmap(), featureselect::export_heatmap(&corr))?;
    let scatter = featureselect::scatter_matrix_export(&profiles)?;
    write(&layout.scatter(), &scatter.csv)?;
    write(&layout.scatter_pairs(), scatter.pairs_csv())?;
    Ok(report)
}

fn load_reduction(cfg: &RunConfig) -> Result<ReductionReport> {
    Ok(serde_json::from_str(&read(&cfg.layout().reduction(), "features")?)?)
}

// ---- train --------------------------------------------------------------

pub fn ann_run(preset: Preset, fs: FeatureSet) -> String {
    format!("ann-{}-{}", preset.name(), fs.name())
}

fn feature_names(prepared: &Prepared, reduction: &ReductionReport, fs: FeatureSet) -> Vec<String> {
    match fs {
        FeatureSet::Select => reduction.kept.clone(),
        FeatureSet::Full => prepared.matrix.input_names(),
    }
}

pub fn ann_config(cfg: &RunConfig, preset: Preset, input_dim: usize) -> Result<nn::MlpConfig> {
    let mut c = preset.config(input_dim)?;
    c.seed = cfg.seed;
    if let Some(e) = cfg.ann.epochs {
        c.epochs = e;
    }
    if let Some(b) = cfg.ann.batch_size {
        c.batch_size = b;
    }
    Ok(c)
}

fn history_csv(history: &[EpochRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for h in history {
        w.serialize(h)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io("<history>", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

enum Fitted {
    Ann(Box<MlpModel>, Vec<EpochRecord>),
    Gnb(GnbModel),
    Sgd(SgdClassifier),
    Rf(RandomForest),
}

#[derive(Clone, Copy)]
enum Job {
    Ann(Preset, FeatureSet),
    Gnb(FeatureSet),
    Sgd(FeatureSet),
    Rf(FeatureSet),
}

impl Job {
    fn run_name(self) -> String {
        match self {
            Job::Ann(p, fs) => ann_run(p, fs),
            Job::Gnb(fs) => format!("gnb-{}", fs.name()),
            Job::Sgd(fs) => format!("sgd-{}", fs.name()),
            Job::Rf(fs) => format!("rf-{}", fs.name()),
        }
    }
}

/// All runs in report order.
pub fn run_names() -> Vec<String> {
    all_jobs().into_iter().map(Job::run_name).collect()
}

fn all_jobs() -> Vec<Job> {
    let mut jobs = Vec::new();
    for fs in [FeatureSet::Select, FeatureSet::Full] {
        jobs.push(Job::Ann(Preset::Final, fs));
        jobs.push(Job::Ann(Preset::Original, fs));
        jobs.push(Job::Rf(fs));
        jobs.push(Job::Sgd(fs));
        jobs.push(Job::Gnb(fs));
    }
    jobs
}

fn display_name(run: &str) -> &'static str {
    match run.rsplit_once('-').map(|(m, _)| m) {
        Some("ann-final") => "ANN final",
        Some("ann-original") => "ANN original",
        Some("rf") => "Random Forest",
        Some("sgd") => "SGD",
        Some("gnb") => "Gaussian NB",
        _ => "unknown",
    }
}

fn baseline_data(prepared: &Prepared, names: &[String], rows: &[usize]) -> Result<(Vec<f64>, Vec<String>)> {
    let x = prepared.matrix.gather(rows, names)?;
    let y = rows.iter().map(|&r| prepared.labels[r].plan_to.clone()).collect();
    Ok((x, y))
}

/// Fits every model on both feature sets and writes them under `models/`.
pub fn stage_train(cfg: &RunConfig) -> Result<()> {
    let prepared = load_prepared(cfg)?;
    let reduction = load_reduction(cfg)?;
    let jobs = all_jobs();
    let fitted: Vec<Fitted> = jobs
        .par_iter()
        .map(|&job| -> Result<Fitted> {
            match job {
                Job::Ann(preset, fs) => {
                    let names = feature_names(&prepared, &reduction, fs);
                    let sub = prepared.matrix.select_columns(&names)?;
                    let config = ann_config(cfg, preset, names.len())?;
                    let (model, history) = nn::train(&sub, &prepared.split, &config)?;
                    Ok(Fitted::Ann(Box::new(model), history))
                }
                Job::Gnb(fs) => {
                    let names = feature_names(&prepared, &reduction, fs);
                    let (x, y) = baseline_data(&prepared, &names, &prepared.split.train)?;
                    Ok(Fitted::Gnb(baselines::gnb_fit(&x, names.len(), &y)?))
                }
                Job::Sgd(fs) => {
                    let names = feature_names(&prepared, &reduction, fs);
                    let (x, y) = baseline_data(&prepared, &names, &prepared.split.train)?;
                    let b = &cfg.baselines;
                    Ok(Fitted::Sgd(baselines::sgd_fit(&x, names.len(), &y, b.sgd_learning_rate, b.sgd_epochs, cfg.seed)?))
                }
                Job::Rf(fs) => {
                    let names = feature_names(&prepared, &reduction, fs);
                    let (x, y) = baseline_data(&prepared, &names, &prepared.split.train)?;
                    let params = RfParams {
                        n_trees: cfg.baselines.rf_trees,
                        ..Default::default()
                    };
                    Ok(Fitted::Rf(baselines::rf_fit(&x, names.len(), &y, &params, cfg.seed)?))
                }
            }
        })
        .collect::<Result<_>>()?;

    let layout = cfg.layout();
    for (job, fit) in jobs.iter().zip(fitted) {
        let run = job.run_name();
        match fit {
            Fitted::Ann(model, history) => {
                write(&layout.model(&run), model.to_json(Some("matrix/encoded.json"))? + "\n")?;
                write(&layout.history(&run), history_csv(&history)?)?;
            }
            Fitted::Gnb(m) => write(&layout.model(&run), to_json(&m)?)?,
            Fitted::Sgd(m) => write(&layout.model(&run), to_json(&m)?)?,
            Fitted::Rf(m) => write(&layout.model(&run), serde_json::to_string(&m)? + "\n")?,
        }
    }
    Ok(())
}

// ---- grid ---------------------------------------------------------------

/// Accuracy of an ANN on `rows`, via the nearest-plan mapping.
pub fn ann_accuracy(model: &MlpModel, prepared: &Prepared, catalog: &PlanCatalog, rows: &[usize]) -> Result<f64> {
    let predicted = ann_classes(model, prepared, catalog, rows)?;
    let correct = predicted
        .iter()
        .zip(rows)
        .filter(|(p, &r)| **p == prepared.labels[r].plan_to)
        .count();
    Ok(correct as f64 / rows.len().max(1) as f64)
}

fn ann_classes(model: &MlpModel, prepared: &Prepared, catalog: &PlanCatalog, rows: &[usize]) -> Result<Vec<String>> {
    let x = prepared.matrix.gather(rows, &model.features)?;
    let pred = nn::predict_rows(model, &x, rows.len())?;
    pred.iter()
        .zip(rows)
        .map(|(&y, &r)| evaluate::price_to_class(y, catalog, prepared.labels[r].country, &prepared.scaler, TARGET))
        .collect()
}

pub fn stage_grid(cfg: &RunConfig) -> Result<nn::GridResult> {
    let prepared = load_prepared(cfg)?;
    let reduction = load_reduction(cfg)?;
    let catalog = load_catalog(cfg)?;
    let sub = prepared.matrix.select_columns(&reduction.kept)?;
    let base = ann_config(cfg, cfg.preset, reduction.kept.len())?;
    let result = nn::grid_search(
        &sub,
        &prepared.split,
        &base,
        &cfg.grid.batch_sizes,
        &cfg.grid.epochs,
        |m| ann_accuracy(m, &prepared, &catalog, &prepared.split.validation),
    )?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for t in &result.trials {
        w.serialize(t)?;
    }
    let layout = cfg.layout();
    write(&layout.grid_trials(), w.into_inner().map_err(|e| Error::io("<grid>", e.into_error()))?)?;
    write(&layout.grid_best(), to_json(&result.best)?)?;
    Ok(result)
}

// ---- evaluate / compare -------------------------------------------------

fn run_feature_set(run: &str) -> FeatureSet {
    if run.ends_with("-full") {
        FeatureSet::Full
    } else {
        FeatureSet::Select
    }
}

/// Scores every stored model on the test rows.
pub fn stage_evaluate(cfg: &RunConfig) -> Result<Vec<(String, MetricsReport)>> {
    let prepared = load_prepared(cfg)?;
    let reduction = load_reduction(cfg)?;
    let catalog = load_catalog(cfg)?;
    let classes = catalog.labels();
    let rows = &prepared.split.test;
    let truth: Vec<&str> = rows.iter().map(|&r| prepared.labels[r].plan_to.as_str()).collect();
    let layout = cfg.layout();
    let mut out = Vec::new();
    for run in run_names() {
        let text = read(&layout.model(&run), "train")?;
        let names = feature_names(&prepared, &reduction, run_feature_set(&run));
        let predicted = if run.starts_with("ann-") {
            ann_classes(&MlpModel::from_json(&text)?, &prepared, &catalog, rows)?
        } else {
            let x = prepared.matrix.gather(rows, &names)?;
            match run.split('-').next() {
                Some("gnb") => baselines::gnb_predict(&serde_json::from_str(&text)?, &x)?,
                Some("sgd") => baselines::sgd_predict(&serde_json::from_str(&text)?, &x)?,
                _ => baselines::rf_predict(&serde_json::from_str(&text)?, &x)?,
            }
        };
        let counts = evaluate::confusion(&predicted, &truth, &classes)?;
        let report = evaluate::metrics(&counts, Averaging::WeightedMacro)?;
        write(&layout.metrics(&run), to_json(&report)?)?;
        out.push((run, report));
    }
    Ok(out)
}

pub fn stage_compare(cfg: &RunConfig) -> Result<ComparisonTable> {
    let layout = cfg.layout();
    let mut runs = Vec::new();
    for run in run_names() {
        let report: MetricsReport = serde_json::from_str(&read(&layout.metrics(&run), "evaluate")?)?;
        runs.push((display_name(&run).to_owned(), run_feature_set(&run), report));
    }
    let table = evaluate::compare_models(&runs)?;
    write(&layout.comparison_txt(), table.to_text())?;
    write(&layout.comparison_csv(), table.to_csv())?;
    let reference = ComparisonTable {
        rows: evaluate::reference_rows(),
    };
    write(&layout.reference_csv(), reference.to_csv())?;
    Ok(table)
}

// ---- report -------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: RunConfig,
    pub artifacts: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Copies the run's tables, exports and chosen model into `report/` and
/// writes a manifest with a content hash for every file.
pub fn emit_report(cfg: &RunConfig) -> Result<Manifest> {
    let layout = cfg.layout();
    let model_run = ann_run(cfg.preset, FeatureSet::Select);
    let mut sources: Vec<(String, PathBuf, &str)> = vec![
        ("comparison.txt".into(), layout.comparison_txt(), "compare"),
        ("comparison.csv".into(), layout.comparison_csv(), "compare"),
        ("reference.csv".into(), layout.reference_csv(), "compare"),
        ("heatmap.csv".into(), layout.heatmap(), "features"),
        ("scatter.csv".into(), layout.scatter(), "features"),
        ("scatter_pairs.csv".into(), layout.scatter_pairs(), "features"),
        ("reduction.json".into(), layout.reduction(), "features"),
        ("model.json".into(), layout.model(&model_run), "train"),
        ("history.csv".into(), layout.history(&model_run), "train"),
        ("profiles.json".into(), layout.profiles(), "ingest"),
    ];
    for run in run_names() {
        sources.push((format!("metrics/{run}.json"), layout.metrics(&run), "evaluate"));
    }
    if layout.grid_trials().exists() {
        sources.push(("grid.csv".into(), layout.grid_trials(), "grid"));
    }
    for (_, path, stage) in &sources {
        require(path, stage)?;
    }

    let dir = layout.report_dir();
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut artifacts = Vec::new();
    for (name, path, _) in &sources {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        write(&dir.join(name), &bytes)?;
        artifacts.push(ManifestEntry {
            path: name.clone(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
    }
    artifacts.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest {
        config: cfg.echo(),
        artifacts,
    };
    write(&dir.join("manifest.json"), to_json(&manifest)?)?;
    Ok(manifest)
}

/// Re-hashes every artifact listed in a report's manifest.
pub fn verify_report(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let manifest: Manifest = serde_json::from_str(&read(&path, "report")?)?;
    for entry in &manifest.artifacts {
        let p = dir.join(&entry.path);
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(Error::validation(format!("{} does not match its manifest hash", entry.path)));
        }
    }
    Ok(manifest)
}

/// Every stage in order.
pub fn run_pipeline(cfg: &RunConfig) -> Result<Manifest> {
    cfg.validate()?;
    stage_ingest(cfg)?;
    if cfg.domain.aggregates.is_none() {
        stage_synth(cfg)?;
    }
    stage_preprocess(cfg)?;
    stage_features(cfg)?;
    stage_train(cfg)?;
    if cfg.grid.enabled {
        stage_grid(cfg)?;
    }
    stage_evaluate(cfg)?;
    stage_compare(cfg)?;
    emit_report(cfg)
}
