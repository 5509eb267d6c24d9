//! Scaling, smoothing, outlier cleaning and rolling training rows.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ObservationSeries, StreamKey};
use crate::stats::median;
use crate::week::Week;

/// Shortest history a training row or evaluation window may use.
pub const MIN_HISTORY: usize = 11;
/// Maximum forecast horizon in weeks.
pub const HORIZONS: usize = 4;

const MEDIAN_HALF_WIDTH: usize = 4;
const OUTLIER_MADS: f64 = 5.0;
const MAD_FLOOR: f64 = 1.0;
const MAX_OUTLIER_SHARE: f64 = 0.2;
const MIN_BANDWIDTH: f64 = 9.0;
const BANDWIDTH_SHARE: f64 = 0.1;
const MIN_SMOOTH_LEN: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("window contains a missing week")]
    GapInWindow,
    #[error("need at least {need} values, got {got}")]
    TooShort { need: usize, got: usize },
}

pub type Result<T, E = PreprocessError> = std::result::Result<T, E>;

/// A window divided by its last (possibly smoothed) value.
///
/// `raw` keeps the observations as given; `scaled` is the cleaned window
/// divided by `scale_factor`, so `scaled[i] * scale_factor == raw[i]` up to
/// rounding wherever `outlier_mask[i]` is false.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledWindow {
    pub raw: Vec<f64>,
    pub scale_factor: f64,
    pub scaled: Vec<f64>,
    pub outlier_mask: Vec<bool>,
}

impl ScaledWindow {
    fn from_cleaned(raw: Vec<f64>, cleaned: &[f64], mask: Vec<bool>, divisor: f64) -> Self {
        let scale_factor = if divisor > 0.0 { divisor } else { 1.0 };
        let scaled = cleaned.iter().map(|v| v / scale_factor).collect();
        ScaledWindow { raw, scale_factor, scaled, outlier_mask: mask }
    }

    pub fn len(&self) -> usize {
        self.scaled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scaled.is_empty()
    }

    pub fn last_raw(&self) -> f64 {
        *self.raw.last().expect("windows are non-empty")
    }

    pub fn unscale(&self) -> Vec<f64> {
        self.scaled.iter().map(|v| v * self.scale_factor).collect()
    }

    pub fn unscale_value(&self, v: f64) -> f64 {
        v * self.scale_factor
    }
}

fn check_gap_free(values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(PreprocessError::GapInWindow)
    }
}

/// Divides `values` by the last value (or the last smoothed value). A zero
/// divisor leaves the window unscaled with factor 1. Missing weeks are
/// passed as NaN and rejected.
pub fn last_value_scale(values: &[f64], smoothed: bool) -> Result<ScaledWindow> {
    if values.is_empty() {
        return Err(PreprocessError::TooShort { need: 1, got: 0 });
    }
    check_gap_free(values)?;
    let divisor = if smoothed {
        smoothed_endpoint(values)?
    } else {
        values[values.len() - 1]
    };
    Ok(ScaledWindow::from_cleaned(values.to_vec(), values, vec![false; values.len()], divisor))
}

/// Outlier-cleaned window scaled by its smoothed last value, as used for
/// boosted-model rows.
pub fn clean_and_scale(values: &[f64]) -> Result<ScaledWindow> {
    check_gap_free(values)?;
    let (cleaned, mask) = filter_outliers(values)?;
    let divisor = smoothed_endpoint(&cleaned)?;
    Ok(ScaledWindow::from_cleaned(values.to_vec(), &cleaned, mask, divisor))
}

fn bandwidth(n: usize) -> f64 {
    MIN_BANDWIDTH.max(BANDWIDTH_SHARE * n as f64)
}

/// Tricube-weighted local-linear fit of `values` evaluated at index `at`.
fn local_linear(values: &[f64], at: usize, h: f64) -> f64 {
    let reach = h.ceil() as usize;
    let lo = at.saturating_sub(reach);
    let hi = (at + reach).min(values.len() - 1);
    let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (j, &y) in values.iter().enumerate().take(hi + 1).skip(lo) {
        let d = j as f64 - at as f64;
        let u = d.abs() / h;
        if u >= 1.0 {
            continue;
        }
        let w = (1.0 - u * u * u).powi(3);
        s0 += w;
        s1 += w * d;
        s2 += w * d * d;
        t0 += w * y;
        t1 += w * d * y;
    }
    let det = s0 * s2 - s1 * s1;
    if det.abs() <= 1e-12 * s0 * s2 {
        t0 / s0
    } else {
        (s2 * t0 - s1 * t1) / det
    }
}

/// Local-linear kernel smooth (tricube weights, bandwidth
/// `max(9, 0.1 * len)` weeks), clamped at zero. Reproduces constants and
/// straight lines.
pub fn smooth_series(values: &[f64]) -> Result<Vec<f64>> {
    if values.len() < MIN_SMOOTH_LEN {
        return Err(PreprocessError::TooShort { need: MIN_SMOOTH_LEN, got: values.len() });
    }
    check_gap_free(values)?;
    let h = bandwidth(values.len());
    Ok((0..values.len()).map(|i| local_linear(values, i, h).max(0.0)).collect())
}

/// Last element of [`smooth_series`] without smoothing the whole input.
pub fn smoothed_endpoint(values: &[f64]) -> Result<f64> {
    if values.len() < MIN_SMOOTH_LEN {
        return Err(PreprocessError::TooShort { need: MIN_SMOOTH_LEN, got: values.len() });
    }
    check_gap_free(values)?;
    Ok(local_linear(values, values.len() - 1, bandwidth(values.len())).max(0.0))
}

fn rolling_medians(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(MEDIAN_HALF_WIDTH);
            let hi = (i + MEDIAN_HALF_WIDTH).min(n - 1);
            median(&values[lo..=hi]).expect("non-empty span")
        })
        .collect()
}

/// Rolling-median outlier filter.
///
/// A point is flagged when it sits more than 5 MADs from its centred
/// 9-week rolling median, where the MAD is the median absolute deviation
/// from the rolling medians, floored at 1. Flagged points are replaced by
/// their rolling median and the pass repeats until nothing is flagged. At
/// most 20% of the window (rounded down) is ever replaced; when more points
/// qualify, the most extreme ones win.
pub fn filter_outliers(window: &[f64]) -> Result<(Vec<f64>, Vec<bool>)> {
    if window.len() < MIN_HISTORY {
        return Err(PreprocessError::TooShort { need: MIN_HISTORY, got: window.len() });
    }
    check_gap_free(window)?;
    let n = window.len();
    let budget = (MAX_OUTLIER_SHARE * n as f64).floor() as usize;
    let mut cleaned = window.to_vec();
    let mut mask = vec![false; n];
    let mut used = 0;
    for _ in 0..n {
        let med = rolling_medians(&cleaned);
        let dev: Vec<f64> = cleaned.iter().zip(&med).map(|(x, m)| (x - m).abs()).collect();
        let mad = median(&dev).expect("non-empty").max(MAD_FLOOR);
        let mut candidates: Vec<usize> = (0..n).filter(|&i| dev[i] > OUTLIER_MADS * mad).collect();
        // Most extreme first; ties resolved by position.
        candidates.sort_by(|&a, &b| dev[b].total_cmp(&dev[a]).then(a.cmp(&b)));
        let mut changed = false;
        for i in candidates {
            if !mask[i] {
                if used == budget {
                    continue;
                }
                mask[i] = true;
                used += 1;
            }
            cleaned[i] = med[i];
            changed = true;
        }
        if !changed {
            break;
        }
    }
    Ok((cleaned, mask))
}

/// One boosted-model training example: the cleaned, scaled 11-week window
/// ending at `end_week` and up to four scaled future values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub key: StreamKey,
    pub end_week: Week,
    /// Index of the window's last week within its series.
    pub end_pos: usize,
    pub window: ScaledWindow,
    /// Scaled values for weeks `end_week + 1 ..`; shorter than the horizon
    /// near the series end, `None` for missing weeks.
    pub future: Vec<Option<f64>>,
}

impl TrainingRow {
    /// Week count `u` of the sub-series this row summarises (1-based).
    pub fn history_len(&self) -> usize {
        self.end_pos + 1
    }
}

/// Builds one row per sub-series `ts(1..u)` for `u = 11 .. t-1` whose
/// trailing 11 weeks are gap-free and that has at least one observed week
/// among the next `horizons`.
pub fn make_training_rows(series: &ObservationSeries, horizons: usize) -> Result<Vec<TrainingRow>> {
    let n = series.len();
    if n < MIN_HISTORY + 1 {
        return Err(PreprocessError::TooShort { need: MIN_HISTORY + 1, got: n });
    }
    row_end_positions(series, horizons)
        .into_iter()
        .map(|end| Ok(training_row_at(series, end, horizons)?.expect("position qualifies")))
        .collect()
}

/// Window end positions that qualify for a training row: gap-free trailing
/// 11 weeks and at least one observed week among the next `horizons`.
pub fn row_end_positions(series: &ObservationSeries, horizons: usize) -> Vec<usize> {
    let v = &series.values;
    let n = v.len();
    if n < MIN_HISTORY + 1 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(n - MIN_HISTORY);
    // Length of the run of observed weeks ending at each position.
    let mut run = 0usize;
    for end in 0..n - 1 {
        run = if v[end].is_some() { run + 1 } else { 0 };
        if end + 1 < MIN_HISTORY || run < MIN_HISTORY {
            continue;
        }
        let last = (end + horizons).min(n - 1);
        if v[end + 1..=last].iter().any(Option::is_some) {
            out.push(end);
        }
    }
    out
}

/// Row ending at position `end`, or `None` when the window has a gap or
/// no future week is observed.
pub fn training_row_at(series: &ObservationSeries, end: usize, horizons: usize) -> Result<Option<TrainingRow>> {
    let Some(raw) = series.window(end, MIN_HISTORY) else {
        return Ok(None);
    };
    let last = (end + horizons).min(series.len() - 1);
    let future_raw = &series.values[end + 1..=last];
    if future_raw.iter().all(Option::is_none) {
        return Ok(None);
    }
    let window = clean_and_scale(&raw)?;
    let future = future_raw.iter().map(|v| v.map(|x| x / window.scale_factor)).collect();
    Ok(Some(TrainingRow {
        key: series.key.clone(),
        end_week: series.start() + end as i64,
        end_pos: end,
        window,
        future,
    }))
}
