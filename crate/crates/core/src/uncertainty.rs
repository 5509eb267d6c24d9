//! Negative-binomial prediction intervals for analogue forecasts.
//!
//! Each horizon keeps an online history of `(forecast, truth)` pairs. A
//! common dispersion `phi` is fitted by moments under
//! `Var[truth] = m + phi * m^2` with `m = max(forecast, 0.5)`, and intervals
//! are central quantiles of NB(mean = forecast, dispersion = phi), or of a
//! Poisson when the fitted dispersion is not positive.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::gamma_ur;
use thiserror::Error;

use crate::preprocess::HORIZONS;

/// Pairs needed before a horizon's dispersion can be fitted.
pub const MIN_PAIRS: usize = 20;
const FORECAST_FLOOR: f64 = 0.5;
pub const INTERVAL_LEVELS: [f64; 3] = [0.5, 0.8, 0.95];

#[derive(Debug, Error, PartialEq)]
pub enum UncertaintyError {
    #[error("horizon {0} outside 1..=4")]
    BadHorizon(usize),
    #[error("{have} residual pairs at horizon {horizon}, need {MIN_PAIRS}")]
    InsufficientHistory { horizon: usize, have: usize },
    #[error("parameters were not fitted")]
    UnfitParams,
    #[error("invalid point forecast {0}")]
    BadForecast(f64),
}

pub type Result<T, E = UncertaintyError> = std::result::Result<T, E>;

/// Online `(forecast, truth)` pairs per horizon, in week order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualHistory {
    pairs: [Vec<(f64, f64)>; HORIZONS],
}

impl ResidualHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, horizon: usize, forecast: f64, truth: f64) -> Result<()> {
        if !(1..=HORIZONS).contains(&horizon) {
            return Err(UncertaintyError::BadHorizon(horizon));
        }
        self.pairs[horizon - 1].push((forecast, truth));
        Ok(())
    }

    pub fn pairs(&self, horizon: usize) -> &[(f64, f64)] {
        &self.pairs[horizon - 1]
    }

    pub fn len(&self, horizon: usize) -> usize {
        self.pairs.get(horizon.wrapping_sub(1)).map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitMode {
    NegBin,
    PoissonFallback,
    Insufficient,
}

/// Fitted dispersion for one horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NegBinParams {
    pub dispersion: f64,
    pub mode: FitMode,
}

impl NegBinParams {
    pub fn negbin(dispersion: f64) -> Self {
        NegBinParams { dispersion, mode: FitMode::NegBin }
    }

    pub fn poisson() -> Self {
        NegBinParams { dispersion: 0.0, mode: FitMode::PoissonFallback }
    }

    pub fn insufficient() -> Self {
        NegBinParams { dispersion: f64::NAN, mode: FitMode::Insufficient }
    }

    /// Size `r = 1/phi` and success probability `p = r / (r + mean)` of the
    /// NB at `mean`; `None` outside negbin mode.
    pub fn size_prob(&self, mean: f64) -> Option<(f64, f64)> {
        (self.mode == FitMode::NegBin).then(|| {
            let r = 1.0 / self.dispersion;
            (r, r / (r + mean))
        })
    }
}

/// Method-of-moments dispersion estimate for one horizon. The raw estimate
/// is returned in the `dispersion` field even when it is not positive.
pub fn fit_dispersion(history: &ResidualHistory, horizon: usize) -> Result<NegBinParams> {
    if !(1..=HORIZONS).contains(&horizon) {
        return Err(UncertaintyError::BadHorizon(horizon));
    }
    let pairs = history.pairs(horizon);
    if pairs.len() < MIN_PAIRS {
        return Err(UncertaintyError::InsufficientHistory { horizon, have: pairs.len() });
    }
    let (mut excess, mut scale) = (0.0, 0.0);
    for &(f, z) in pairs {
        let m = f.max(FORECAST_FLOOR);
        excess += (z - m) * (z - m) - m;
        scale += m * m;
    }
    let phi = excess / scale;
    Ok(if phi > 0.0 {
        NegBinParams::negbin(phi)
    } else {
        NegBinParams { dispersion: phi, mode: FitMode::PoissonFallback }
    })
}

/// `P(X <= k)` for the fitted count distribution at `mean`.
pub fn count_cdf(params: &NegBinParams, mean: f64, k: u64) -> f64 {
    match params.size_prob(mean) {
        Some((r, p)) => beta_reg(r, k as f64 + 1.0, p),
        None => gamma_ur(k as f64 + 1.0, mean),
    }
}

/// Smallest count `k` with `P(X <= k) >= prob`.
pub fn count_quantile(params: &NegBinParams, mean: f64, prob: f64) -> Result<u64> {
    if params.mode == FitMode::Insufficient {
        return Err(UncertaintyError::UnfitParams);
    }
    if !(mean >= 0.0) || !mean.is_finite() {
        return Err(UncertaintyError::BadForecast(mean));
    }
    if mean == 0.0 || count_cdf(params, mean, 0) >= prob {
        return Ok(0);
    }
    // Gallop upward until the CDF reaches `prob`, then bisect the bracket.
    let mut lo = 0u64;
    let mut hi = mean.ceil().max(1.0) as u64;
    while count_cdf(params, mean, hi) < prob {
        lo = hi;
        hi = hi.saturating_mul(2);
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if count_cdf(params, mean, mid) >= prob {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// A central prediction interval at `level`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Central intervals `[q((1-l)/2), q(1-(1-l)/2)]` for each level.
pub fn prediction_intervals(point_forecast: f64, params: &NegBinParams, levels: &[f64]) -> Result<Vec<Interval>> {
    levels
        .iter()
        .map(|&level| {
            let tail = (1.0 - level) / 2.0;
            Ok(Interval {
                level,
                lower: count_quantile(params, point_forecast, tail)? as f64,
                upper: count_quantile(params, point_forecast, 1.0 - tail)? as f64,
            })
        })
        .collect()
}

/// The seven forecast quantiles (0.025 ... 0.975) of the count
/// distribution centred on `point_forecast`.
pub fn quantile_set(point_forecast: f64, params: &NegBinParams) -> Result<[f64; 7]> {
    let iv = prediction_intervals(point_forecast, params, &[0.95, 0.8, 0.5])?;
    let med = count_quantile(params, point_forecast, 0.5)? as f64;
    Ok([iv[0].lower, iv[1].lower, iv[2].lower, med, iv[2].upper, iv[1].upper, iv[0].upper])
}
