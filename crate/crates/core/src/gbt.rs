//! Quantile gradient-boosted regression trees.
//!
//! One ensemble per quantile level. Each boosting round fits a
//! least-squares regression tree to the pinball-loss negative gradient
//! `alpha - 1{y < F(x)}` over binned features, then sets every leaf to the
//! level-`alpha` order statistic of the current residuals in that leaf,
//! shrunk by the learning rate. Because that order statistic minimises the
//! leaf's pinball loss and the loss is convex, the training loss never
//! increases from one round to the next.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, ObservationSeries, StreamKey, TrainingScope};
use crate::features::{window_features, FeatureError, FEATURE_NAMES, N_FEATURES};
use crate::preprocess::{clean_and_scale, row_end_positions, training_row_at, PreprocessError, ScaledWindow, HORIZONS, MIN_HISTORY};
use crate::stats::lower_quantile;
use crate::week::Week;

pub const QUANTILE_LEVELS: [f64; 7] = [0.025, 0.1, 0.25, 0.5, 0.75, 0.9, 0.975];
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GbtError {
    #[error("{have} training rows, need at least {need}")]
    InsufficientRows { have: usize, need: usize },
    #[error("model has not been trained")]
    ModelUntrained,
    #[error("dataset has {got} features per row, expected {expected}")]
    FeatureMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error("model serialisation: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T, E = GbtError> = std::result::Result<T, E>;

/// Asymmetric absolute loss whose minimiser is the `alpha` quantile.
pub fn pinball_loss(y: f64, q: f64, alpha: f64) -> f64 {
    if y >= q {
        alpha * (y - q)
    } else {
        (1.0 - alpha) * (q - y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Share of features considered by each tree.
    pub feature_fraction: f64,
    /// Share of rows each tree is grown on.
    pub row_fraction: f64,
    pub max_bins: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            n_trees: 300,
            learning_rate: 0.1,
            max_depth: 6,
            min_samples_leaf: 20,
            feature_fraction: 0.8,
            row_fraction: 1.0,
            max_bins: 64,
            seed: 0,
        }
    }
}

/// Row-major feature matrix with one target per row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub n_features: usize,
    pub features: Vec<f64>,
    pub targets: Vec<f64>,
}

impl Dataset {
    pub fn new(n_features: usize) -> Self {
        Dataset { n_features, features: Vec::new(), targets: Vec::new() }
    }

    pub fn push(&mut self, row: &[f64], target: f64) {
        assert_eq!(row.len(), self.n_features, "feature count");
        self.features.extend_from_slice(row);
        self.targets.push(target);
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

/// Regression tree; node 0 is the root. Rows with `x[feature] <= threshold`
/// go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    fn is_null(&self) -> bool {
        matches!(self.nodes.as_slice(), [Node::Leaf { value }] if *value == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileEnsemble {
    pub alpha: f64,
    pub init: f64,
    pub trees: Vec<Tree>,
    /// Mean training pinball loss after the initial constant and after each tree.
    pub training_loss: Vec<f64>,
}

impl QuantileEnsemble {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.init + self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

/// Per-feature quantile bin thresholds and the binned matrix (column-major).
struct Binned {
    thresholds: Vec<Vec<f64>>,
    bins: Vec<Vec<u16>>,
}

fn bin_dataset(data: &Dataset, max_bins: usize) -> Binned {
    let n = data.len();
    let mut thresholds = Vec::with_capacity(data.n_features);
    let mut bins = Vec::with_capacity(data.n_features);
    for f in 0..data.n_features {
        let mut col: Vec<f64> = (0..n).map(|i| data.features[i * data.n_features + f]).collect();
        col.sort_by(f64::total_cmp);
        col.dedup();
        let cuts: Vec<f64> = if col.len() <= max_bins {
            col.windows(2).map(|w| w[0]).collect()
        } else {
            let mut c: Vec<f64> = (1..max_bins).map(|b| col[b * col.len() / max_bins - 1]).collect();
            c.dedup();
            c
        };
        let column = (0..n)
            .map(|i| cuts.partition_point(|&t| t < data.features[i * data.n_features + f]) as u16)
            .collect();
        thresholds.push(cuts);
        bins.push(column);
    }
    Binned { thresholds, bins }
}

struct Grower<'a> {
    binned: &'a Binned,
    grad: &'a [f64],
    residual: &'a [f64],
    features: &'a [usize],
    alpha: f64,
    hp: &'a Hyperparams,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn best_split(&self, rows: &[usize]) -> Option<(usize, usize)> {
        let n = rows.len();
        let min_leaf = self.hp.min_samples_leaf.max(1);
        if n < 2 * min_leaf {
            return None;
        }
        let total: f64 = rows.iter().map(|&r| self.grad[r]).sum();
        let parent = total * total / n as f64;
        let mut best: Option<(f64, usize, usize)> = None;
        for &f in self.features {
            let n_bins = self.binned.thresholds[f].len() + 1;
            if n_bins < 2 {
                continue;
            }
            let mut cnt = vec![0usize; n_bins];
            let mut sum = vec![0.0; n_bins];
            let col = &self.binned.bins[f];
            for &r in rows {
                let b = col[r] as usize;
                cnt[b] += 1;
                sum[b] += self.grad[r];
            }
            let (mut nl, mut gl) = (0usize, 0.0);
            for b in 0..n_bins - 1 {
                nl += cnt[b];
                gl += sum[b];
                let nr = n - nl;
                if nl < min_leaf {
                    continue;
                }
                if nr < min_leaf {
                    break;
                }
                let gr = total - gl;
                let gain = gl * gl / nl as f64 + gr * gr / nr as f64 - parent;
                if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, b));
                }
            }
        }
        best.map(|(_, f, b)| (f, b))
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0 });
        let split = if depth < self.hp.max_depth { self.best_split(&rows) } else { None };
        match split {
            Some((f, b)) => {
                let col = &self.binned.bins[f];
                let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| (col[i] as usize) <= b);
                let left = self.grow(l, depth + 1);
                let right = self.grow(r, depth + 1);
                self.nodes[id] = Node::Split { feature: f, threshold: self.binned.thresholds[f][b], left, right };
            }
            None => {
                let mut res: Vec<f64> = rows.iter().map(|&i| self.residual[i]).collect();
                let q = lower_quantile(&mut res, self.alpha).unwrap_or(0.0);
                self.nodes[id] = Node::Leaf { value: self.hp.learning_rate * q };
            }
        }
        id
    }
}

fn mean_pinball(targets: &[f64], pred: &[f64], alpha: f64) -> f64 {
    targets.iter().zip(pred).map(|(&y, &q)| pinball_loss(y, q, alpha)).sum::<f64>() / targets.len() as f64
}

/// Fits one boosted ensemble at level `alpha`.
pub fn fit_quantile_model(data: &Dataset, alpha: f64, hp: &Hyperparams) -> Result<QuantileEnsemble> {
    let binned = bin_dataset(data, hp.max_bins.clamp(2, u16::MAX as usize));
    fit_binned(data, &binned, alpha, hp)
}

fn fit_binned(data: &Dataset, binned: &Binned, alpha: f64, hp: &Hyperparams) -> Result<QuantileEnsemble> {
    let n = data.len();
    let need = 2 * hp.min_samples_leaf.max(1);
    if n < need {
        return Err(GbtError::InsufficientRows { have: n, need });
    }
    let init = lower_quantile(&mut data.targets.clone(), alpha).expect("non-empty");
    let mut pred = vec![init; n];
    let mut training_loss = vec![mean_pinball(&data.targets, &pred, alpha)];
    let n_feat = data.n_features;
    let k_feat = ((hp.feature_fraction * n_feat as f64).ceil() as usize).clamp(1, n_feat);
    let k_rows = ((hp.row_fraction * n as f64).ceil() as usize).clamp(need.min(n), n);
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed ^ alpha.to_bits());
    let mut trees = Vec::with_capacity(hp.n_trees);
    let mut grad = vec![0.0; n];
    let mut residual = vec![0.0; n];
    for _ in 0..hp.n_trees {
        for i in 0..n {
            residual[i] = data.targets[i] - pred[i];
            grad[i] = if data.targets[i] < pred[i] { alpha - 1.0 } else { alpha };
        }
        let mut features: Vec<usize> = sample(&mut rng, n_feat, k_feat).into_vec();
        features.sort_unstable();
        let mut rows: Vec<usize> = if k_rows < n { sample(&mut rng, n, k_rows).into_vec() } else { (0..n).collect() };
        rows.sort_unstable();
        let mut grower = Grower {
            binned,
            grad: &grad,
            residual: &residual,
            features: &features,
            alpha,
            hp,
            nodes: Vec::new(),
        };
        grower.grow(rows, 0);
        let tree = Tree { nodes: grower.nodes };
        if tree.is_null() {
            break;
        }
        for (i, p) in pred.iter_mut().enumerate() {
            *p += tree.predict(data.row(i));
        }
        training_loss.push(mean_pinball(&data.targets, &pred, alpha));
        trees.push(tree);
    }
    Ok(QuantileEnsemble { alpha, init, trees, training_loss })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Boosted,
    /// Too few rows to train: every quantile repeats the last observation.
    Persistence,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub target: Option<StreamKey>,
    pub scope: Option<String>,
    /// Forecast year the model serves.
    pub year: Option<i32>,
    /// Rows strictly before this week were eligible for training.
    pub trained_before: Option<Week>,
    pub n_rows: usize,
}

/// Seven quantile ensembles sharing one training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub format_version: u32,
    pub kind: ModelKind,
    pub levels: Vec<f64>,
    pub models: Vec<QuantileEnsemble>,
    pub hyperparams: Hyperparams,
    pub feature_names: Vec<String>,
    pub meta: TrainingMeta,
}

impl BoostedModel {
    /// Trains all seven levels on `data`.
    pub fn fit(data: &Dataset, hp: &Hyperparams, meta: TrainingMeta) -> Result<Self> {
        if data.n_features != N_FEATURES {
            return Err(GbtError::FeatureMismatch { expected: N_FEATURES, got: data.n_features });
        }
        Self::fit_any(data, hp, meta, FEATURE_NAMES.iter().map(|s| s.to_string()).collect())
    }

    /// Trains all seven levels on an arbitrary feature set.
    pub fn fit_any(data: &Dataset, hp: &Hyperparams, meta: TrainingMeta, feature_names: Vec<String>) -> Result<Self> {
        let binned = bin_dataset(data, hp.max_bins.clamp(2, u16::MAX as usize));
        let models = QUANTILE_LEVELS
            .par_iter()
            .map(|&a| fit_binned(data, &binned, a, hp))
            .collect::<Result<Vec<_>>>()?;
        Ok(BoostedModel {
            format_version: MODEL_FORMAT_VERSION,
            kind: ModelKind::Boosted,
            levels: QUANTILE_LEVELS.to_vec(),
            models,
            hyperparams: *hp,
            feature_names,
            meta,
        })
    }

    pub fn persistence(hp: &Hyperparams, meta: TrainingMeta) -> Self {
        BoostedModel {
            format_version: MODEL_FORMAT_VERSION,
            kind: ModelKind::Persistence,
            levels: QUANTILE_LEVELS.to_vec(),
            models: Vec::new(),
            hyperparams: *hp,
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            meta,
        }
    }

    pub fn is_fallback(&self) -> bool {
        self.kind == ModelKind::Persistence
    }

    /// Raw (unsorted, scaled) outputs of the seven level models.
    pub fn raw_outputs(&self, x: &[f64]) -> Result<[f64; 7]> {
        if self.models.len() != QUANTILE_LEVELS.len() {
            return Err(GbtError::ModelUntrained);
        }
        let mut out = [0.0; 7];
        for (o, m) in out.iter_mut().zip(&self.models) {
            *o = m.predict(x);
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Seven quantiles for one horizon on the count scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonQuantiles {
    pub horizon: usize,
    pub quantiles: [f64; 7],
}

impl HorizonQuantiles {
    pub fn median(&self) -> f64 {
        self.quantiles[3]
    }

    /// Central interval at 0.5, 0.8 or 0.95.
    pub fn interval(&self, level: f64) -> Option<(f64, f64)> {
        let i = [0.95, 0.8, 0.5].iter().position(|l| (l - level).abs() < 1e-9)?;
        Some((self.quantiles[i], self.quantiles[6 - i]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileForecast {
    pub horizons: Vec<HorizonQuantiles>,
}

/// Sorts the seven outputs (monotone rearrangement), multiplies by the
/// scale factor and clamps at zero. A non-positive scale factor means the
/// window was left unscaled.
pub fn rearrange(raw: [f64; 7], scale_factor: f64) -> [f64; 7] {
    let scale = if scale_factor > 0.0 { scale_factor } else { 1.0 };
    let mut q = raw;
    q.sort_by(f64::total_cmp);
    q.map(|v| (v * scale).max(0.0))
}

/// Quantile forecasts for horizons 1..4 from a window scaled by
/// [`clean_and_scale`] and the raw history up to its last week.
pub fn predict_quantiles(
    model: &BoostedModel,
    window: &ScaledWindow,
    history: &[Option<f64>],
    scale_factor: f64,
) -> Result<QuantileForecast> {
    if model.is_fallback() {
        let last = window.last_raw();
        return Ok(QuantileForecast {
            horizons: (1..=HORIZONS).map(|h| HorizonQuantiles { horizon: h, quantiles: [last; 7] }).collect(),
        });
    }
    let base = window_features(window, history)?;
    let horizons = (1..=HORIZONS)
        .map(|h| {
            let x = base.with_horizon(h)?;
            Ok(HorizonQuantiles { horizon: h, quantiles: rearrange(model.raw_outputs(&x.0)?, scale_factor) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QuantileForecast { horizons })
}

/// Forecast from the window of `series` ending at position `end`.
pub fn forecast_at(model: &BoostedModel, series: &ObservationSeries, end: usize) -> Result<Option<QuantileForecast>> {
    let Some(raw) = series.window(end, MIN_HISTORY) else {
        return Ok(None);
    };
    let window = clean_and_scale(&raw)?;
    predict_quantiles(model, &window, &series.values[..=end], window.scale_factor).map(Some)
}

/// Training rows (one per observed horizon) from every series, using only
/// weeks strictly before `before`, with the scope's row subsampling.
pub fn build_dataset(series: &[&ObservationSeries], before: Week, scope: &TrainingScope) -> Result<Dataset> {
    let mut data = Dataset::new(N_FEATURES);
    for s in series {
        let Some(s) = s.truncated_before(before) else {
            continue;
        };
        let start = s.start();
        for end in row_end_positions(&s, HORIZONS) {
            if !scope.keeps_row(&s.key, start + end as i64) {
                continue;
            }
            let row = training_row_at(&s, end, HORIZONS)?.expect("qualifying position");
            let base = window_features(&row.window, &s.values[..=end])?;
            for (h, y) in row.future.iter().enumerate() {
                if let Some(y) = y {
                    data.push(&base.with_horizon(h + 1)?.0, *y);
                }
            }
        }
    }
    Ok(data)
}

/// Trains the model serving forecast year `year`, or a flagged persistence
/// fallback when there are too few rows.
pub fn train_for_year(
    training_set: &[&ObservationSeries],
    target: &StreamKey,
    scope: &TrainingScope,
    year: i32,
    hp: &Hyperparams,
) -> Result<BoostedModel> {
    let before = Week::first_of_year(year);
    let data = build_dataset(training_set, before, scope)?;
    let meta = TrainingMeta {
        target: Some(target.clone()),
        scope: Some(scope.kind.to_string()),
        year: Some(year),
        trained_before: Some(before),
        n_rows: data.len(),
    };
    match BoostedModel::fit(&data, hp, meta.clone()) {
        Ok(m) => Ok(m),
        Err(GbtError::InsufficientRows { .. }) => Ok(BoostedModel::persistence(hp, meta)),
        Err(e) => Err(e),
    }
}

/// One model per forecast year, each trained on data before that year.
pub fn retrain_schedule(
    corpus: &Corpus,
    target: &StreamKey,
    scope: &TrainingScope,
    years: &[i32],
    hp: &Hyperparams,
) -> Result<Vec<(i32, BoostedModel)>> {
    let training_set = corpus.select_training_set(target, scope)?;
    years
        .iter()
        .map(|&y| Ok((y, train_for_year(&training_set, target, scope, y, hp)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinball_examples() {
        assert_eq!(pinball_loss(3.0, 3.0, 0.3), 0.0);
        assert!((pinball_loss(10.0, 8.0, 0.9) - 1.8).abs() < 1e-12);
        for (y, q) in [(1.0, 4.0), (7.5, -2.0), (0.0, 0.0)] {
            assert!((pinball_loss(y, q, 0.5) - 0.5 * (y - q as f64).abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn pinball_subgradient_by_finite_differences() {
        let h = 1e-6;
        for alpha in QUANTILE_LEVELS {
            for (y, q) in [(5.0, 3.0), (5.0, 7.0), (0.2, -1.0), (-3.0, 2.0)] {
                let d = (pinball_loss(y, q + h, alpha) - pinball_loss(y, q - h, alpha)) / (2.0 * h);
                let expected = if q < y { -alpha } else { 1.0 - alpha };
                assert!((d - expected).abs() < 1e-6, "alpha {alpha} y {y} q {q}: {d}");
            }
        }
    }

    #[test]
    fn constant_target_predicts_constant() {
        let mut data = Dataset::new(2);
        for i in 0..100 {
            data.push(&[i as f64, (i % 7) as f64], 4.5);
        }
        let hp = Hyperparams { n_trees: 20, min_samples_leaf: 5, ..Default::default() };
        for alpha in QUANTILE_LEVELS {
            let m = fit_quantile_model(&data, alpha, &hp).unwrap();
            for i in 0..100 {
                assert_eq!(m.predict(data.row(i)), 4.5);
            }
        }
    }

    #[test]
    fn insufficient_rows() {
        let mut data = Dataset::new(1);
        for i in 0..39 {
            data.push(&[i as f64], i as f64);
        }
        let err = fit_quantile_model(&data, 0.5, &Hyperparams::default()).unwrap_err();
        assert!(matches!(err, GbtError::InsufficientRows { have: 39, need: 40 }));
    }

    #[test]
    fn depth_zero_is_empirical_quantile() {
        let mut data = Dataset::new(1);
        let ys = [3.0, 9.0, 1.0, 4.0, 7.0, 2.0, 8.0, 6.0, 5.0, 10.0];
        for (i, y) in ys.iter().enumerate() {
            data.push(&[i as f64], *y);
        }
        let hp = Hyperparams { max_depth: 0, min_samples_leaf: 1, n_trees: 50, ..Default::default() };
        for alpha in QUANTILE_LEVELS {
            let m = fit_quantile_model(&data, alpha, &hp).unwrap();
            let k = ((alpha * 10.0).ceil() as usize).max(1);
            let mut sorted = ys;
            sorted.sort_by(f64::total_cmp);
            assert_eq!(m.predict(&[0.0]), sorted[k - 1]);
        }
    }

    #[test]
    fn rearrangement_sorts_and_unscales() {
        let q = rearrange([1.1, 0.9, 1.0, 1.2, 1.3, 1.25, 2.0], 10.0);
        assert!(q.windows(2).all(|w| w[0] <= w[1]));
        assert!((q[0] - 9.0).abs() < 1e-12);
        let q = rearrange([3.0, 1.0, 2.0, 4.0, 5.0, 6.0, 7.0], 0.0);
        assert_eq!(q, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let q = rearrange([-1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0], 1.0);
        assert_eq!(q[0], 0.0);
    }

    #[test]
    fn untrained_model_errors() {
        let mut m = BoostedModel::persistence(&Hyperparams::default(), TrainingMeta {
            target: None,
            scope: None,
            year: None,
            trained_before: None,
            n_rows: 0,
        });
        m.kind = ModelKind::Boosted;
        assert!(matches!(m.raw_outputs(&[0.0; N_FEATURES]), Err(GbtError::ModelUntrained)));
    }
}
