//! Subscription price-preference prediction from country-level cultural and
//! socio-economic context.
//!
//! The crate covers the whole pipeline: [`ingest`] country context,
//! [`synthgen`] subscriber aggregates, [`preprocess`] them into a scaled
//! [`FeatureMatrix`], reduce features with [`featureselect`], fit the
//! [`nn`] model and the [`baselines`], then score everything with [`evaluate`].
//! [`pipeline`] wires the stages together and writes the report bundle.

pub mod baselines;
pub mod country;
pub mod error;
pub mod evaluate;
pub mod featureselect;
pub mod ingest;
pub mod nn;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod synthgen;

pub use country::CountryCode;
pub use error::{Error, Result};
pub use evaluate::{Averaging, ConfusionCounts, MetricsReport};
pub use ingest::{Category, CountryProfile, CulturalIndices, IndicatorObservation, Provenance};
pub use nn::{ActivationKind, LossKind, MlpConfig, MlpModel};
pub use preprocess::{ColumnKind, FeatureMatrix, ScalerParams, SplitIndices};
pub use synthgen::{PlanCatalog, SubscriberAggregate, SynthConfig};
