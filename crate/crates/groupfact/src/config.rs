//! Run configuration for the CLI.
//!
//! A single TOML file with sections mirroring the library modules; every
//! section and key has a default, unknown keys are rejected, and all nested
//! invariants are validated before any work starts. Command-line flags
//! override the corresponding config values.

use crate::classify::DecisionRule;
use crate::data::{Delimiter, FeatureLayout, IngestSchema, LabelColumn};
use crate::error::{Error, Result};
use crate::inference::FitOptions;
use crate::model::Hyperparams;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Solver section; `threads` caps worker threads (the current implementation
/// is single-threaded and deterministic, larger values are accepted and
/// ignored).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub max_iters: usize,
    pub min_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
    pub threads: usize,
    pub track_elbo_every: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        let o = FitOptions::default();
        FitConfig {
            max_iters: o.max_iters,
            min_iters: o.min_iters,
            rel_tol: o.rel_tol,
            seed: o.seed,
            threads: 1,
            track_elbo_every: o.track_elbo_every,
        }
    }
}

/// File-format section; label_map keys are the raw label values as strings
/// (TOML table keys), e.g. `label_map = { "2" = 1, "3" = 2, "7" = 3 }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemaConfig {
    pub delimiter: Delimiter,
    pub feature_count: usize,
    pub label_column: LabelColumn,
    pub label_map: BTreeMap<String, usize>,
    pub transpose: bool,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        let s = IngestSchema::default();
        SchemaConfig {
            delimiter: s.delimiter,
            feature_count: s.feature_count,
            label_column: s.label_column,
            label_map: s.label_map.iter().map(|(&k, &v)| (k.to_string(), v)).collect(),
            transpose: s.transpose,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// One feature file per subject, in subject order.
    pub subjects: Vec<PathBuf>,
    /// Output directory; CLI --out overrides.
    pub out: Option<PathBuf>,
    /// Posterior CSV consumed by predict / eval / export-bases.
    pub posterior: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    pub rule: DecisionRule,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig { rule: DecisionRule::NearestBasis }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningCurveConfig {
    /// Ascending training fractions in (0, 1].
    pub fractions: Vec<f64>,
    /// Share of each subject's frames held out as the fixed test suffix.
    pub test_fraction: f64,
}

impl Default for LearningCurveConfig {
    fn default() -> Self {
        LearningCurveConfig { fractions: vec![0.25, 0.5, 1.0], test_fraction: 0.25 }
    }
}

/// Dimensions for the `sample` command. Frame labels cycle through 1..=K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub subjects: usize,
    pub frames: usize,
    pub features: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig { subjects: 3, frames: 60, features: 24 }
    }
}

/// Full configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: Hyperparams,
    pub fit: FitConfig,
    pub schema: SchemaConfig,
    pub layout: FeatureLayout,
    pub paths: PathsConfig,
    pub predict: PredictConfig,
    pub learning_curve: LearningCurveConfig,
    pub sample: SampleConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_toml_str(&text)
    }

    /// Validates every nested invariant before any work.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.fit_options().validate()?;
        if self.fit.threads < 1 {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        self.ingest_schema()?.validate()?;
        if !(self.learning_curve.test_fraction > 0.0 && self.learning_curve.test_fraction < 1.0) {
            return Err(Error::Config("learning_curve.test_fraction must lie in (0, 1)".into()));
        }
        for pair in self.learning_curve.fractions.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::Config("learning_curve.fractions must be strictly ascending".into()));
            }
        }
        if self.learning_curve.fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return Err(Error::Config("learning_curve.fractions must lie in (0, 1]".into()));
        }
        if self.sample.subjects < 1 || self.sample.frames < 1 || self.sample.features < 1 {
            return Err(Error::Config("sample dimensions must be >= 1".into()));
        }
        Ok(())
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            max_iters: self.fit.max_iters,
            min_iters: self.fit.min_iters,
            rel_tol: self.fit.rel_tol,
            seed: self.fit.seed,
            track_elbo_every: self.fit.track_elbo_every,
        }
    }

    pub fn ingest_schema(&self) -> Result<IngestSchema> {
        let mut label_map = BTreeMap::new();
        for (raw, &class) in &self.schema.label_map {
            let key: i64 = raw.parse().map_err(|_| {
                Error::Config(format!("schema.label_map key {raw:?} is not an integer"))
            })?;
            label_map.insert(key, class);
        }
        Ok(IngestSchema {
            delimiter: self.schema.delimiter,
            feature_count: self.schema.feature_count,
            label_column: self.schema.label_column,
            label_map,
            transpose: self.schema.transpose,
        })
    }
}
