//! Rolling-origin backtests, forecast scoring and scope comparison.
//!
//! At each origin week `t` a forecaster sees only observations up to `t`
//! and issues forecasts for `t+1 .. t+4`. The analogue library is updated
//! every week; boosted models are retrained at the start of each calendar
//! year on data before that year. Scores use the original count scale.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, ScopeKind, StreamKey, TrainingScope};
use crate::features::{summarize_training_set, TrainingSetSummary};
use crate::gbt::{self, BoostedModel, GbtError, Hyperparams};
use crate::moa::{self, scale_snippet, MoaError, SnippetLibrary, SNIPPET_LEN};
use crate::preprocess::MIN_HISTORY;
use crate::uncertainty::{fit_dispersion, quantile_set, ResidualHistory};
use crate::week::Week;

/// Weeks of history a boosted model needs before its first forecast.
pub const GBT_MIN_HISTORY: usize = 52;
/// First forecast year considered for analogue forecasts.
pub const MOA_EARLIEST_YEAR: i32 = 2010;
/// Interval levels entering the weighted interval score.
pub const WIS_ALPHAS: [f64; 3] = [0.5, 0.2, 0.05];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no evaluable origin weeks for {0}")]
    NoEvaluableWeeks(String),
    #[error("no scored forecasts")]
    NoScoredRecords,
    #[error("baseline MAE is zero")]
    ZeroBaseline,
    #[error("cannot compare scores for different targets or models")]
    Mismatch,
    #[error("incomplete scope grid: {0}")]
    IncompleteGrid(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Gbt(#[from] GbtError),
    #[error(transparent)]
    Moa(#[from] MoaError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Forecaster {
    Moa,
    Gbt,
}

impl Forecaster {
    pub const ALL: [Forecaster; 2] = [Forecaster::Moa, Forecaster::Gbt];

    pub fn as_str(self) -> &'static str {
        match self {
            Forecaster::Moa => "moa",
            Forecaster::Gbt => "gbt",
        }
    }
}

impl fmt::Display for Forecaster {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Forecaster {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "moa" => Ok(Forecaster::Moa),
            "gbt" => Ok(Forecaster::Gbt),
            other => Err(format!("unknown model `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoaSettings {
    /// Fixed neighbourhood size instead of `min(4422, 10% of library)`.
    pub neighbors: Option<usize>,
    pub earliest_year: Option<i32>,
    /// Record per-week neighbourhood composition.
    pub log_composition: bool,
}

impl Default for MoaSettings {
    fn default() -> Self {
        MoaSettings { neighbors: None, earliest_year: Some(MOA_EARLIEST_YEAR), log_composition: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestPlan {
    pub target: StreamKey,
    pub forecaster: Forecaster,
    pub scope: TrainingScope,
    /// Optional bounds on origin weeks, applied on top of the start rules.
    pub first_origin: Option<Week>,
    pub last_origin: Option<Week>,
    pub moa: MoaSettings,
    pub gbt: Hyperparams,
}

impl BacktestPlan {
    pub fn new(target: StreamKey, forecaster: Forecaster, scope: TrainingScope) -> Self {
        BacktestPlan {
            target,
            forecaster,
            scope,
            first_origin: None,
            last_origin: None,
            moa: MoaSettings::default(),
            gbt: Hyperparams::default(),
        }
    }

    /// Origin weeks covered by the plan for a target series starting at
    /// `start` and ending at `end`. An origin is the last week of data a
    /// forecast may use.
    pub fn origin_range(&self, start: Week, end: Week) -> Option<(Week, Week)> {
        let mut first = match self.forecaster {
            // The first forecasted week has at least 11 prior weeks.
            Forecaster::Moa => {
                let by_history = start + (MIN_HISTORY as i64 - 1);
                match self.moa.earliest_year {
                    Some(y) => by_history.max(Week::first_of_year(y) - 1),
                    None => by_history,
                }
            }
            Forecaster::Gbt => start + (GBT_MIN_HISTORY as i64 - 1),
        };
        let mut last = end - 1;
        if let Some(f) = self.first_origin {
            first = first.max(f);
        }
        if let Some(l) = self.last_origin {
            last = last.min(l);
        }
        (first <= last).then_some((first, last))
    }
}

/// One forecast for one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub target: StreamKey,
    pub forecaster: Forecaster,
    pub scope: ScopeKind,
    pub origin: Week,
    pub origin_date: NaiveDate,
    pub horizon: usize,
    pub point: f64,
    /// Levels 0.025, 0.1, 0.25, 0.5, 0.75, 0.9, 0.975; absent until the
    /// forecaster can issue intervals.
    pub quantiles: Option<[f64; 7]>,
    pub truth: Option<f64>,
    /// Forecast year of the boosted model that produced the record.
    pub model_year: Option<i32>,
}

impl ForecastRecord {
    /// The forecast content, ignoring the truth column.
    pub fn issued(&self) -> (Week, usize, f64, Option<[f64; 7]>, Option<i32>) {
        (self.origin, self.horizon, self.point, self.quantiles, self.model_year)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub target: StreamKey,
    pub scope: ScopeKind,
    pub forecaster: Forecaster,
    pub mae: f64,
    pub wis: Option<f64>,
    pub coverage95: Option<f64>,
    pub n_forecasts: usize,
    pub n_mae_terms: usize,
    pub n_interval_terms: usize,
    pub mae_ratio_vs_single_stream: Option<f64>,
}

/// Neighbourhood and library counts for one disease at one origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionEntry {
    pub target: StreamKey,
    pub week: Week,
    pub disease: String,
    pub neighborhood_count: usize,
    pub library_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelUse {
    pub year: i32,
    pub fallback: bool,
    pub n_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestOutput {
    pub records: Vec<ForecastRecord>,
    pub score: ScoreRecord,
    pub models: Vec<ModelUse>,
    pub composition: Vec<CompositionEntry>,
}

fn scored<'a>(records: &'a [ForecastRecord]) -> impl Iterator<Item = (&'a ForecastRecord, f64)> {
    records.iter().filter_map(|r| r.truth.map(|t| (r, t)))
}

fn interval_scored<'a>(records: &'a [ForecastRecord]) -> impl Iterator<Item = (&'a ForecastRecord, [f64; 7], f64)> {
    records.iter().filter_map(|r| Some((r, r.quantiles?, r.truth?)))
}

/// Mean absolute error over every record with a truth.
pub fn mae(records: &[ForecastRecord]) -> Result<f64> {
    let (sum, n) = scored(records).fold((0.0, 0usize), |(s, n), (r, t)| (s + (r.point - t).abs(), n + 1));
    if n == 0 {
        return Err(EvalError::NoScoredRecords);
    }
    Ok(sum / n as f64)
}

/// Share of interval-scored records whose truth lies in `[q0.025, q0.975]`.
pub fn coverage95(records: &[ForecastRecord]) -> Result<f64> {
    let (inside, n) = interval_scored(records)
        .fold((0usize, 0usize), |(i, n), (_, q, t)| (i + usize::from(q[0] <= t && t <= q[6]), n + 1));
    if n == 0 {
        return Err(EvalError::NoScoredRecords);
    }
    Ok(inside as f64 / n as f64)
}

/// Weighted interval score of one forecast: `1/(K + 1/2)` times the half
/// absolute error of the point forecast plus `alpha_k / 2` times each
/// interval score, for the 50%, 80% and 95% intervals.
pub fn interval_score_terms(point: f64, q: &[f64; 7], truth: f64) -> f64 {
    let mut total = (point - truth).abs() / 2.0;
    for (k, alpha) in WIS_ALPHAS.iter().enumerate() {
        let (lo, hi) = (q[2 - k], q[4 + k]);
        let mut is = hi - lo;
        if truth < lo {
            is += 2.0 / alpha * (lo - truth);
        }
        if truth > hi {
            is += 2.0 / alpha * (truth - hi);
        }
        total += alpha / 2.0 * is;
    }
    total / (WIS_ALPHAS.len() as f64 + 0.5)
}

/// Mean weighted interval score over interval-scored records.
pub fn wis(records: &[ForecastRecord]) -> Result<f64> {
    let (sum, n) = interval_scored(records)
        .fold((0.0, 0usize), |(s, n), (r, q, t)| (s + interval_score_terms(r.point, &q, t), n + 1));
    if n == 0 {
        return Err(EvalError::NoScoredRecords);
    }
    Ok(sum / n as f64)
}

pub fn mae_ratio(candidate: &ScoreRecord, baseline: &ScoreRecord) -> Result<f64> {
    if candidate.target != baseline.target || candidate.forecaster != baseline.forecaster {
        return Err(EvalError::Mismatch);
    }
    if baseline.mae <= 0.0 {
        return Err(EvalError::ZeroBaseline);
    }
    Ok(candidate.mae / baseline.mae)
}

pub fn score_records(plan: &BacktestPlan, records: &[ForecastRecord]) -> Result<ScoreRecord> {
    Ok(ScoreRecord {
        target: plan.target.clone(),
        scope: plan.scope.kind,
        forecaster: plan.forecaster,
        mae: mae(records)?,
        wis: wis(records).ok(),
        coverage95: coverage95(records).ok(),
        n_forecasts: records.len(),
        n_mae_terms: scored(records).count(),
        n_interval_terms: interval_scored(records).count(),
        mae_ratio_vs_single_stream: None,
    })
}

/// Runs one backtest cell.
pub fn run_backtest(corpus: &Corpus, plan: &BacktestPlan) -> Result<BacktestOutput> {
    let target = corpus
        .get(&plan.target)
        .ok_or_else(|| CorpusError::UnknownTarget(plan.target.to_string()))?;
    let (first, last) = plan
        .origin_range(target.start(), target.end())
        .ok_or_else(|| EvalError::NoEvaluableWeeks(plan.target.to_string()))?;
    let training = corpus.select_training_set(&plan.target, &plan.scope)?;
    let (records, models, composition) = match plan.forecaster {
        Forecaster::Moa => {
            let (r, c) = moa_backtest(plan, target, &training, first, last)?;
            (r, Vec::new(), c)
        }
        Forecaster::Gbt => {
            let (r, m) = gbt_backtest(plan, target, &training, first, last)?;
            (r, m, Vec::new())
        }
    };
    let score = score_records(plan, &records).map_err(|e| match e {
        EvalError::NoScoredRecords => EvalError::NoEvaluableWeeks(plan.target.to_string()),
        other => other,
    })?;
    Ok(BacktestOutput { records, score, models, composition })
}

type MoaRun = (Vec<ForecastRecord>, Vec<CompositionEntry>);

fn moa_backtest(
    plan: &BacktestPlan,
    target: &crate::ObservationSeries,
    training: &[&crate::ObservationSeries],
    first: Week,
    last: Week,
) -> Result<MoaRun> {
    let mut library = SnippetLibrary::new(Some(plan.scope));
    library.update(training, first)?;
    let mut history = ResidualHistory::new();
    // (target week, horizon, point) awaiting their truth.
    let mut pending: Vec<(Week, usize, f64)> = Vec::new();
    let mut records = Vec::new();
    let mut composition = Vec::new();
    let mut origin = first;
    while origin <= last {
        if library.as_of().is_some_and(|w| w < origin) {
            library.update(training, origin)?;
        }
        pending.sort_by_key(|p| (p.0, p.1));
        let (ready, waiting): (Vec<_>, Vec<_>) = pending.into_iter().partition(|p| p.0 <= origin);
        pending = waiting;
        for (week, h, point) in ready {
            if let Some(truth) = target.get(week) {
                history.update(h, point, truth).expect("horizon in range");
            }
        }
        let Some(pos) = target.position(origin) else {
            origin = origin + 1;
            continue;
        };
        let Some(raw) = target.window(pos, SNIPPET_LEN) else {
            origin = origin + 1;
            continue;
        };
        let raw: [f64; SNIPPET_LEN] = raw.try_into().expect("window length");
        let (x, scale) = scale_snippet(&raw);
        let nb = match library.find_neighborhood(&x, plan.moa.neighbors, Some((&plan.target, origin))) {
            Ok(nb) => nb,
            Err(MoaError::EmptyLibrary) => {
                origin = origin + 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let points = match moa::moa_forecast(&nb, &library, scale) {
            Ok(p) => p,
            Err(MoaError::NoFutureData) => {
                origin = origin + 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        if plan.moa.log_composition {
            let counts = moa::neighborhood_counts(&nb, &library);
            for (disease, &lib_count) in library.composition() {
                composition.push(CompositionEntry {
                    target: plan.target.clone(),
                    week: origin,
                    disease: disease.clone(),
                    neighborhood_count: counts.get(disease).copied().unwrap_or(0),
                    library_count: lib_count,
                });
            }
        }
        for (i, &point) in points.iter().enumerate() {
            let h = i + 1;
            let quantiles = fit_dispersion(&history, h).ok().and_then(|p| quantile_set(point, &p).ok());
            records.push(ForecastRecord {
                target: plan.target.clone(),
                forecaster: Forecaster::Moa,
                scope: plan.scope.kind,
                origin,
                origin_date: target.date_at(pos),
                horizon: h,
                point,
                quantiles,
                truth: target.get(origin + h as i64),
                model_year: None,
            });
            pending.push((origin + h as i64, h, point));
        }
        origin = origin + 1;
    }
    Ok((records, composition))
}

fn gbt_backtest(
    plan: &BacktestPlan,
    target: &crate::ObservationSeries,
    training: &[&crate::ObservationSeries],
    first: Week,
    last: Week,
) -> Result<(Vec<ForecastRecord>, Vec<ModelUse>)> {
    let mut records = Vec::new();
    let mut models: Vec<ModelUse> = Vec::new();
    let mut current: Option<(i32, BoostedModel)> = None;
    let mut origin = first;
    while origin <= last {
        let year = origin.year();
        if current.as_ref().is_none_or(|(y, _)| *y != year) {
            let model = gbt::train_for_year(training, &plan.target, &plan.scope, year, &plan.gbt)?;
            models.push(ModelUse { year, fallback: model.is_fallback(), n_rows: model.meta.n_rows });
            current = Some((year, model));
        }
        let (_, model) = current.as_ref().expect("model set above");
        let pos = target.position(origin).expect("origin inside target");
        if let Some(fc) = gbt::forecast_at(model, target, pos)? {
            for hq in &fc.horizons {
                records.push(ForecastRecord {
                    target: plan.target.clone(),
                    forecaster: Forecaster::Gbt,
                    scope: plan.scope.kind,
                    origin,
                    origin_date: target.date_at(pos),
                    horizon: hq.horizon,
                    point: hq.median(),
                    quantiles: Some(hq.quantiles),
                    truth: target.get(origin + hq.horizon as i64),
                    model_year: Some(year),
                });
            }
        }
        origin = origin + 1;
    }
    Ok((records, models))
}

/// MAE ratios of each wider scope against single-stream training for one
/// target and forecaster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub target: StreamKey,
    pub forecaster: Forecaster,
    pub mae: BTreeMap<ScopeKind, f64>,
    pub ratio: BTreeMap<ScopeKind, f64>,
    pub best_scope: ScopeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopeFraction {
    pub forecaster: Forecaster,
    pub scope: ScopeKind,
    pub n_targets: usize,
    /// Share of targets with MAE ratio below 1.
    pub fraction_outperformed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub target: StreamKey,
    pub scope: ScopeKind,
    pub summary: TrainingSetSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopeReport {
    pub rows: Vec<ComparisonRow>,
    pub fractions: Vec<ScopeFraction>,
    pub summaries: Vec<SummaryRow>,
}

const WIDER: [ScopeKind; 3] = [ScopeKind::SingleDisease, ScopeKind::ModeOfTransmission, ScopeKind::AllData];

/// Compares scopes for every (target, forecaster) with scores, and
/// summarises each target's training set per scope.
pub fn scope_comparison_report(
    corpus: &Corpus,
    scores: &[ScoreRecord],
    seed: u64,
    all_data_fraction: f64,
) -> Result<ScopeReport> {
    let mut cells: BTreeMap<(StreamKey, Forecaster), BTreeMap<ScopeKind, &ScoreRecord>> = BTreeMap::new();
    for s in scores {
        cells.entry((s.target.clone(), s.forecaster)).or_default().insert(s.scope, s);
    }
    let mut rows = Vec::new();
    for ((target, forecaster), by_scope) in &cells {
        let missing: Vec<&str> = ScopeKind::ALL.iter().filter(|k| !by_scope.contains_key(k)).map(|k| k.as_str()).collect();
        if !missing.is_empty() {
            return Err(EvalError::IncompleteGrid(format!("{target} {forecaster} lacks {}", missing.join(", "))));
        }
        let base = by_scope[&ScopeKind::SingleStream];
        let mut ratio = BTreeMap::new();
        for k in WIDER {
            ratio.insert(k, mae_ratio(by_scope[&k], base)?);
        }
        let best_scope = ScopeKind::ALL
            .into_iter()
            .min_by(|a, b| by_scope[a].mae.total_cmp(&by_scope[b].mae))
            .expect("four scopes");
        rows.push(ComparisonRow {
            target: target.clone(),
            forecaster: *forecaster,
            mae: by_scope.iter().map(|(k, s)| (*k, s.mae)).collect(),
            ratio,
            best_scope,
        });
    }
    let mut fractions = Vec::new();
    for f in Forecaster::ALL {
        let of_f: Vec<&ComparisonRow> = rows.iter().filter(|r| r.forecaster == f).collect();
        if of_f.is_empty() {
            continue;
        }
        for k in WIDER {
            let wins = of_f.iter().filter(|r| r.ratio[&k] < 1.0).count();
            fractions.push(ScopeFraction {
                forecaster: f,
                scope: k,
                n_targets: of_f.len(),
                fraction_outperformed: wins as f64 / of_f.len() as f64,
            });
        }
    }
    let targets: BTreeSet<&StreamKey> = cells.keys().map(|(t, _)| t).collect();
    let mut summaries = Vec::new();
    for t in targets {
        for k in ScopeKind::ALL {
            let mut scope = TrainingScope::new(k, seed);
            if k == ScopeKind::AllData {
                scope = scope.with_fraction(all_data_fraction)?;
            }
            let set = corpus.select_training_set(t, &scope)?;
            summaries.push(SummaryRow { target: t.clone(), scope: k, summary: summarize_training_set(&set, &scope) });
        }
    }
    Ok(ScopeReport { rows, fractions, summaries })
}

/// Fills `mae_ratio_vs_single_stream` wherever a matching single-stream
/// score with non-zero MAE exists.
pub fn attach_ratios(scores: &mut [ScoreRecord]) {
    let baselines: BTreeMap<(StreamKey, Forecaster), f64> = scores
        .iter()
        .filter(|s| s.scope == ScopeKind::SingleStream)
        .map(|s| ((s.target.clone(), s.forecaster), s.mae))
        .collect();
    for s in scores.iter_mut() {
        s.mae_ratio_vs_single_stream = baselines
            .get(&(s.target.clone(), s.forecaster))
            .filter(|&&b| b > 0.0)
            .map(|b| s.mae / b);
    }
}

// ---- CSV formats ----

pub const FORECAST_HEADER: [&str; 17] = [
    "target_source", "disease", "subtype", "location", "model", "scope", "origin_week", "horizon", "point",
    "q0.025", "q0.1", "q0.25", "q0.5", "q0.75", "q0.9", "q0.975", "truth",
];

pub const SCORE_HEADER: [&str; 13] = [
    "target_source", "disease", "subtype", "location", "model", "scope", "n_forecasts", "n_mae_terms",
    "n_interval_terms", "mae", "wis", "coverage95", "mae_ratio_vs_single_stream",
];

pub const COMPOSITION_LOG_HEADER: [&str; 8] =
    ["target_source", "disease", "subtype", "location", "week", "snippet_disease", "neighborhood_count", "library_count"];

pub const COMPOSITION_REPORT_HEADER: [&str; 6] =
    ["target", "week", "disease", "neighborhood_share", "library_share", "ratio"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn key_fields(k: &StreamKey) -> [String; 4] {
    [k.source.clone(), k.disease.clone(), k.subtype_str().to_string(), k.location.clone()]
}

pub fn write_forecasts<W: Write>(out: W, records: &[ForecastRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FORECAST_HEADER)?;
    for r in records {
        let mut row: Vec<String> = key_fields(&r.target).into();
        row.push(r.forecaster.to_string());
        row.push(r.scope.to_string());
        row.push(r.origin_date.to_string());
        row.push(r.horizon.to_string());
        row.push(r.point.to_string());
        match r.quantiles {
            Some(q) => row.extend(q.iter().map(f64::to_string)),
            None => row.extend(std::iter::repeat_n(String::new(), 7)),
        }
        row.push(opt(r.truth));
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_scores<W: Write>(out: W, scores: &[ScoreRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SCORE_HEADER)?;
    for s in scores {
        let mut row: Vec<String> = key_fields(&s.target).into();
        row.extend([
            s.forecaster.to_string(),
            s.scope.to_string(),
            s.n_forecasts.to_string(),
            s.n_mae_terms.to_string(),
            s.n_interval_terms.to_string(),
            s.mae.to_string(),
            opt(s.wis),
            opt(s.coverage95),
            opt(s.mae_ratio_vs_single_stream),
        ]);
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn parse<T: FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| EvalError::Parse(format!("bad {what} `{s}`")))
}

fn parse_opt(s: &str, what: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse(s, what).map(Some)
    }
}

pub fn read_scores<R: Read>(input: R) -> Result<Vec<ScoreRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != SCORE_HEADER {
        return Err(EvalError::Parse(format!("unexpected score header `{}`", header.join(","))));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        out.push(ScoreRecord {
            target: StreamKey::new(f(0), f(1), Some(f(2)), f(3)),
            forecaster: f(4).parse().map_err(EvalError::Parse)?,
            scope: f(5).parse().map_err(EvalError::Parse)?,
            n_forecasts: parse(f(6), "n_forecasts")?,
            n_mae_terms: parse(f(7), "n_mae_terms")?,
            n_interval_terms: parse(f(8), "n_interval_terms")?,
            mae: parse(f(9), "mae")?,
            wis: parse_opt(f(10), "wis")?,
            coverage95: parse_opt(f(11), "coverage95")?,
            mae_ratio_vs_single_stream: parse_opt(f(12), "ratio")?,
        });
    }
    Ok(out)
}

pub fn write_composition_log<W: Write>(out: W, entries: &[CompositionEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COMPOSITION_LOG_HEADER)?;
    for e in entries {
        let mut row: Vec<String> = key_fields(&e.target).into();
        row.extend([e.week.to_string(), e.disease.clone(), e.neighborhood_count.to_string(), e.library_count.to_string()]);
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_composition_log<R: Read>(input: R) -> Result<Vec<CompositionEntry>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != COMPOSITION_LOG_HEADER {
        return Err(EvalError::Parse(format!("unexpected composition header `{}`", header.join(","))));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        let date = NaiveDate::parse_from_str(f(4), "%Y-%m-%d").map_err(|e| EvalError::Parse(e.to_string()))?;
        out.push(CompositionEntry {
            target: StreamKey::new(f(0), f(1), Some(f(2)), f(3)),
            week: Week::from_date(date),
            disease: f(5).to_string(),
            neighborhood_count: parse(f(6), "count")?,
            library_count: parse(f(7), "count")?,
        });
    }
    Ok(out)
}

/// One row of the composition report; `week = None` is the aggregate over
/// all weeks of a target, and a `None` target aggregates all targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionRow {
    pub target: Option<StreamKey>,
    pub week: Option<Week>,
    pub disease: String,
    pub neighborhood_share: f64,
    pub library_share: f64,
    pub ratio: f64,
}

fn composition_rows(
    target: Option<&StreamKey>,
    week: Option<Week>,
    nb: &BTreeMap<String, usize>,
    lib: &BTreeMap<String, usize>,
) -> Result<Vec<CompositionRow>> {
    let ratios = moa::composition_relative_to_library(nb, lib)?;
    let nb_share = moa::proportions(nb);
    let lib_share = moa::proportions(lib);
    Ok(ratios
        .into_iter()
        .map(|(d, ratio)| CompositionRow {
            target: target.cloned(),
            week,
            neighborhood_share: nb_share.get(&d).copied().unwrap_or(0.0),
            library_share: lib_share.get(&d).copied().unwrap_or(0.0),
            disease: d,
            ratio,
        })
        .collect())
}

/// Per-week shares and library-relative ratios, then aggregates that sum
/// counts across weeks within each target and across all targets before
/// normalising.
pub fn composition_report(entries: &[CompositionEntry]) -> Result<Vec<CompositionRow>> {
    type Counts = BTreeMap<String, usize>;
    let mut per_week: BTreeMap<(StreamKey, Week), (Counts, Counts)> = BTreeMap::new();
    for e in entries {
        let slot = per_week.entry((e.target.clone(), e.week)).or_default();
        if e.neighborhood_count > 0 {
            *slot.0.entry(e.disease.clone()).or_default() += e.neighborhood_count;
        }
        if e.library_count > 0 {
            *slot.1.entry(e.disease.clone()).or_default() += e.library_count;
        }
    }
    let mut out = Vec::new();
    let mut per_target: BTreeMap<StreamKey, (Counts, Counts)> = BTreeMap::new();
    let mut overall: (Counts, Counts) = Default::default();
    for ((target, week), (nb, lib)) in &per_week {
        out.extend(composition_rows(Some(target), Some(*week), nb, lib)?);
        let t = per_target.entry(target.clone()).or_default();
        moa::accumulate_counts(&mut t.0, nb);
        moa::accumulate_counts(&mut t.1, lib);
        moa::accumulate_counts(&mut overall.0, nb);
        moa::accumulate_counts(&mut overall.1, lib);
    }
    for (target, (nb, lib)) in &per_target {
        out.extend(composition_rows(Some(target), None, nb, lib)?);
    }
    if per_target.len() > 1 {
        out.extend(composition_rows(None, None, &overall.0, &overall.1)?);
    }
    Ok(out)
}

pub fn write_composition_report<W: Write>(out: W, rows: &[CompositionRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COMPOSITION_REPORT_HEADER)?;
    for r in rows {
        w.write_record([
            r.target.as_ref().map(|t| t.to_string()).unwrap_or_else(|| "all".into()),
            r.week.map(|w| w.to_string()).unwrap_or_else(|| "all".into()),
            r.disease.clone(),
            r.neighborhood_share.to_string(),
            r.library_share.to_string(),
            r.ratio.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
