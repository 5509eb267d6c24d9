//! Run configuration: a TOML file whose keys can be overridden by flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use xdisease::corpus::StreamPattern;
use xdisease::eval::Forecaster;
use xdisease::gbt::Hyperparams;
use xdisease::ScopeKind;

/// GBT settings that may be overridden; unset keys keep the defaults.
#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GbtOverrides {
    pub n_trees: Option<usize>,
    pub learning_rate: Option<f64>,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: Option<usize>,
    pub feature_fraction: Option<f64>,
    pub row_fraction: Option<f64>,
    pub max_bins: Option<usize>,
}

impl GbtOverrides {
    pub fn apply(&self, mut hp: Hyperparams) -> Hyperparams {
        hp.n_trees = self.n_trees.unwrap_or(hp.n_trees);
        hp.learning_rate = self.learning_rate.unwrap_or(hp.learning_rate);
        hp.max_depth = self.max_depth.unwrap_or(hp.max_depth);
        hp.min_samples_leaf = self.min_samples_leaf.unwrap_or(hp.min_samples_leaf);
        hp.feature_fraction = self.feature_fraction.unwrap_or(hp.feature_fraction);
        hp.row_fraction = self.row_fraction.unwrap_or(hp.row_fraction);
        hp.max_bins = self.max_bins.unwrap_or(hp.max_bins);
        hp
    }

    fn merge(&mut self, other: &GbtOverrides) {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(n_trees, learning_rate, max_depth, min_samples_leaf, feature_fraction, row_fraction, max_bins);
    }
}

/// File form of the configuration. Every key is optional so that a file
/// and the command line can each supply part of it.
#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub corpus: Option<PathBuf>,
    pub targets: Option<Vec<String>>,
    pub scopes: Option<Vec<String>>,
    pub models: Option<Vec<String>>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub all_data_fraction: Option<f64>,
    pub neighbors: Option<usize>,
    pub moa_earliest_year: Option<i32>,
    pub log_composition: Option<bool>,
    #[serde(default)]
    pub gbt: GbtOverrides,
}

impl ConfigFile {
    /// Reads a config file; relative paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: ConfigFile = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.corpus, &mut cfg.output].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Values in `flags` win over values already present.
    pub fn merge(mut self, flags: ConfigFile) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if flags.$f.is_some() { self.$f = flags.$f; } )* };
        }
        take!(corpus, targets, scopes, models, seed, output, jobs, all_data_fraction, neighbors, moa_earliest_year, log_composition);
        self.gbt.merge(&flags.gbt);
        self
    }
}

/// A validated configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub corpus: PathBuf,
    /// `None` means every stream in the corpus.
    pub targets: Option<Vec<StreamPattern>>,
    pub scopes: Vec<ScopeKind>,
    pub models: Vec<Forecaster>,
    pub seed: u64,
    pub output: PathBuf,
    pub jobs: usize,
    pub all_data_fraction: f64,
    pub neighbors: Option<usize>,
    pub moa_earliest_year: Option<i32>,
    pub log_composition: bool,
    pub gbt: Hyperparams,
}

/// Earliest-year value that disables the calendar floor.
pub const NO_EARLIEST_YEAR: i32 = 0;

impl RunConfig {
    pub fn resolve(cfg: ConfigFile) -> Result<Self> {
        let corpus = cfg.corpus.context("no corpus path given (config key `corpus` or --corpus)")?;
        if !corpus.is_dir() {
            bail!("corpus path {} is not a directory", corpus.display());
        }
        let targets = cfg
            .targets
            .map(|ts| ts.iter().map(|t| t.parse::<StreamPattern>().map_err(anyhow::Error::msg)).collect::<Result<Vec<_>>>())
            .transpose()?;
        let scopes = match cfg.scopes {
            Some(s) => s.iter().map(|k| k.parse::<ScopeKind>().map_err(anyhow::Error::msg)).collect::<Result<Vec<_>>>()?,
            None => ScopeKind::ALL.to_vec(),
        };
        let models = match cfg.models {
            Some(m) => m.iter().map(|k| k.parse::<Forecaster>().map_err(anyhow::Error::msg)).collect::<Result<Vec<_>>>()?,
            None => Forecaster::ALL.to_vec(),
        };
        if scopes.is_empty() || models.is_empty() {
            bail!("at least one scope and one model are required");
        }
        let seed = match cfg.seed {
            Some(s) => s,
            None if scopes.contains(&ScopeKind::AllData) => bail!("a seed is required when the all_data scope is requested"),
            None => 0,
        };
        let all_data_fraction = cfg.all_data_fraction.unwrap_or(xdisease::TrainingScope::ALL_DATA_FRACTION);
        if !(all_data_fraction > 0.0 && all_data_fraction <= 1.0) {
            bail!("all_data_fraction must lie in (0, 1], got {all_data_fraction}");
        }
        let gbt = cfg.gbt.apply(Hyperparams::default());
        if gbt.n_trees == 0 || gbt.min_samples_leaf == 0 || gbt.max_bins < 2 {
            bail!("gbt.n_trees and gbt.min_samples_leaf must be positive and gbt.max_bins at least 2");
        }
        for (name, v) in [("feature_fraction", gbt.feature_fraction), ("row_fraction", gbt.row_fraction)] {
            if !(v > 0.0 && v <= 1.0) {
                bail!("gbt.{name} must lie in (0, 1], got {v}");
            }
        }
        Ok(RunConfig {
            corpus,
            targets,
            scopes,
            models,
            seed,
            output: cfg.output.unwrap_or_else(|| PathBuf::from("xdisease-out")),
            jobs: cfg.jobs.unwrap_or(1).max(1),
            all_data_fraction,
            neighbors: cfg.neighbors,
            moa_earliest_year: match cfg.moa_earliest_year {
                Some(NO_EARLIEST_YEAR) => None,
                Some(y) => Some(y),
                None => Some(xdisease::eval::MOA_EARLIEST_YEAR),
            },
            log_composition: cfg.log_composition.unwrap_or(true),
            gbt,
        })
    }
}
