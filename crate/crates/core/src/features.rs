//! Per-window features for the boosted model and training-set summaries
//! (local noise via CoV, regularity via sample entropy, dataset size).

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ObservationSeries, StreamKey, TrainingScope};
use crate::preprocess::{row_end_positions, ScaledWindow, HORIZONS, MIN_HISTORY};
use crate::stats::{ls_slope, mean, sample_sd};
use crate::week::Week;

pub const N_FEATURES: usize = 14;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "lag1",
    "lag2",
    "lag3",
    "lag4",
    "lag5",
    "growth_rate_4wk",
    "growth_rate_10wk",
    "cov_10wk",
    "autocorr_lag52",
    "weeks_since_max_norm",
    "level_log10",
    "near_peak_flag",
    "near_trough_flag",
    "horizon",
];

/// Stand-in for `autocorr_lag52` when fewer than 104 weeks of history exist.
pub const MISSING_AUTOCORR: f64 = -2.0;
/// Stand-in for an unbounded coefficient of variation (zero mean, non-zero spread).
pub const COV_CAP: f64 = 1.0e3;

const SEASON: usize = 52;
const NEAR_EXTREME_SHARE: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("need at least {need} values, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("fewer than two observed values in the span")]
    InsufficientData,
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("horizon {0} outside 1..=4")]
    BadHorizon(usize),
}

pub type Result<T, E = FeatureError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; N_FEATURES]);

impl FeatureVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES.iter().position(|n| *n == name).map(|i| self.0[i])
    }

    pub fn horizon(&self) -> usize {
        self.0[N_FEATURES - 1] as usize
    }

    pub fn flag(&self, name: &str) -> bool {
        self.get(name) == Some(1.0)
    }
}

/// Horizon-independent part of a feature vector, computed once per window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowFeatures([f64; N_FEATURES - 1]);

impl WindowFeatures {
    pub fn with_horizon(&self, horizon: usize) -> Result<FeatureVector> {
        if !(1..=HORIZONS).contains(&horizon) {
            return Err(FeatureError::BadHorizon(horizon));
        }
        let mut v = [0.0; N_FEATURES];
        v[..N_FEATURES - 1].copy_from_slice(&self.0);
        v[N_FEATURES - 1] = horizon as f64;
        Ok(FeatureVector(v))
    }
}

/// Lag-52 autocorrelation over every pair of observed weeks a season apart,
/// or [`MISSING_AUTOCORR`] with under two seasons of history.
fn seasonal_autocorr(history: &[Option<f64>]) -> f64 {
    if history.len() < 2 * SEASON {
        return MISSING_AUTOCORR;
    }
    let pairs: Vec<(f64, f64)> = history
        .iter()
        .zip(&history[SEASON..])
        .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
        .collect();
    if pairs.len() < SEASON {
        return MISSING_AUTOCORR;
    }
    let n = pairs.len() as f64;
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (a, b) in &pairs {
        sab += (a - ma) * (b - mb);
        saa += (a - ma) * (a - ma);
        sbb += (b - mb) * (b - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        0.0
    } else {
        (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
    }
}

/// Weeks since the (latest) historical maximum, divided by the history length.
fn weeks_since_max(history: &[Option<f64>]) -> f64 {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in history.iter().enumerate() {
        if let Some(v) = *v {
            if best.is_none_or(|(_, b)| v >= b) {
                best = Some((i, v));
            }
        }
    }
    match best {
        Some((i, _)) => (history.len() - 1 - i) as f64 / history.len() as f64,
        None => 1.0,
    }
}

/// Features that do not depend on the horizon. `history` is the raw series
/// up to and including the window's last week.
pub fn window_features(window: &ScaledWindow, history: &[Option<f64>]) -> Result<WindowFeatures> {
    let n = window.len();
    if n < MIN_HISTORY {
        return Err(FeatureError::TooShort { need: MIN_HISTORY, got: n });
    }
    let s = &window.scaled;
    let mut v = [0.0; N_FEATURES - 1];
    for lag in 0..5 {
        v[lag] = s[n - 1 - lag];
    }
    let slope4 = ls_slope(&s[n - 4..]);
    let slope10 = ls_slope(&s[n - 10..]);
    v[5] = slope4;
    v[6] = slope10;
    let last10: Vec<Option<f64>> = s[n - 10..].iter().copied().map(Some).collect();
    v[7] = match coefficient_of_variation(&last10, 10) {
        Ok(c) if c.is_finite() => c.min(COV_CAP),
        _ => COV_CAP,
    };
    v[8] = seasonal_autocorr(history);
    v[9] = weeks_since_max(history);
    v[10] = (window.scale_factor + 1.0).log10();
    let (lo, hi) = s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let range = hi - lo;
    let last = s[n - 1];
    let near_peak = range > 0.0 && hi - last <= NEAR_EXTREME_SHARE * range && slope4 <= slope10;
    let near_trough = range > 0.0 && last - lo <= NEAR_EXTREME_SHARE * range && slope4 >= slope10;
    v[11] = f64::from(u8::from(near_peak));
    v[12] = f64::from(u8::from(near_trough));
    Ok(WindowFeatures(v))
}

pub fn compute_features(window: &ScaledWindow, history: &[Option<f64>], horizon: usize) -> Result<FeatureVector> {
    window_features(window, history)?.with_horizon(horizon)
}

/// Sample standard deviation over mean for the last `span` entries,
/// skipping missing weeks. Zero when every value is equal; `+inf` when the
/// mean is zero but the spread is not.
pub fn coefficient_of_variation(values: &[Option<f64>], span: usize) -> Result<f64> {
    let tail = &values[values.len().saturating_sub(span)..];
    let observed: Vec<f64> = tail.iter().flatten().copied().collect();
    if observed.len() < 2 {
        return Err(FeatureError::InsufficientData);
    }
    if observed.iter().all(|&x| x == observed[0]) {
        return Ok(0.0);
    }
    let m = mean(&observed).expect("non-empty");
    let sd = sample_sd(&observed).expect("two or more values");
    if m == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(sd / m)
    }
}

/// SampEn(m, r) with `r = r_factor * sd`: `-ln(A / B)` where `B` counts
/// pairs of distinct length-`m` templates within Chebyshev distance `r` and
/// `A` counts those pairs that still match at length `m + 1`. Both counts use
/// the same `N - m` template starts. `+inf` when `A = 0`.
pub fn sample_entropy(values: &[f64], m: usize, r_factor: f64) -> Result<f64> {
    const MIN_LEN: usize = 20;
    let n = values.len();
    if n < MIN_LEN || n <= m + 1 {
        return Err(FeatureError::TooShort { need: MIN_LEN.max(m + 2), got: n });
    }
    let sd = sample_sd(values).expect("long enough");
    if sd == 0.0 || values.iter().all(|&x| x == values[0]) {
        return Err(FeatureError::ZeroVariance);
    }
    let r = r_factor * sd;
    let starts = n - m;
    let (mut a, mut b) = (0u64, 0u64);
    for i in 0..starts {
        for j in i + 1..starts {
            if (0..m).all(|k| (values[i + k] - values[j + k]).abs() <= r) {
                b += 1;
                if (values[i + m] - values[j + m]).abs() <= r {
                    a += 1;
                }
            }
        }
    }
    if a == 0 || b == 0 {
        Ok(f64::INFINITY)
    } else {
        Ok(-(a as f64 / b as f64).ln())
    }
}

/// Summary of one training set: mean CoV over every prior-10-week window,
/// training row count and mean sample entropy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingSetSummary {
    pub n_series: usize,
    pub mean_cov_10wk: f64,
    pub n_rows: usize,
    pub mean_sample_entropy: f64,
}

/// Mean of the finite 10-week CoVs of every window in `series` plus the
/// number of windows that contributed.
pub fn rolling_cov(series: &ObservationSeries, span: usize) -> (f64, usize) {
    let mut sum = 0.0;
    let mut count = 0;
    for end in 1..=series.len() {
        if let Ok(c) = coefficient_of_variation(&series.values[..end], span) {
            if c.is_finite() {
                sum += c;
                count += 1;
            }
        }
    }
    (sum, count)
}

pub fn summarize_training_set(series: &[&ObservationSeries], scope: &TrainingScope) -> TrainingSetSummary {
    let (mut cov_sum, mut cov_n) = (0.0, 0usize);
    let (mut ent_sum, mut ent_n) = (0.0, 0usize);
    let mut n_rows = 0;
    for s in series {
        let (cs, cn) = rolling_cov(s, 10);
        cov_sum += cs;
        cov_n += cn;
        let observed: Vec<f64> = s.values.iter().flatten().copied().collect();
        if let Ok(e) = sample_entropy(&observed, 2, 0.2) {
            if e.is_finite() {
                ent_sum += e;
                ent_n += 1;
            }
        }
        let start = s.start();
        n_rows += row_end_positions(s, HORIZONS)
            .into_iter()
            .filter(|&p| scope.keeps_row(&s.key, start + p as i64))
            .count();
    }
    let ratio = |s: f64, n: usize| if n == 0 { f64::NAN } else { s / n as f64 };
    TrainingSetSummary {
        n_series: series.len(),
        mean_cov_10wk: ratio(cov_sum, cov_n),
        n_rows,
        mean_sample_entropy: ratio(ent_sum, ent_n),
    }
}

/// One row of the exported feature matrix.
#[derive(Debug, Clone)]
pub struct FeatureRecord {
    pub key: StreamKey,
    pub end_week: Week,
    pub features: FeatureVector,
    pub target: Option<f64>,
}

/// Writes the feature matrix as CSV with named columns.
pub fn write_feature_matrix<W: Write>(out: W, records: &[FeatureRecord]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["source", "disease", "subtype", "location", "end_week"];
    header.extend(FEATURE_NAMES);
    header.push("target");
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.key.source.clone(),
            r.key.disease.clone(),
            r.key.subtype_str().to_string(),
            r.key.location.clone(),
            r.end_week.to_string(),
        ];
        row.extend(r.features.0.iter().map(f64::to_string));
        row.push(r.target.map(|t| t.to_string()).unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
