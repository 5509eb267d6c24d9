//! Seeded synthetic corpora for transfer experiments and protocol checks.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::corpus::{Corpus, ObservationSeries, Result, StreamKey, Taxonomy, TransmissionMode, Unit};
use crate::week::Week;

/// Weeks in the long synthetic series (five years).
pub const SPAN_WEEKS: usize = 261;
/// Length of the truncated target in the transfer scenarios.
pub const SHORT_TARGET_WEEKS: usize = 80;
pub const FIRST_YEAR: i32 = 2014;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Six diseases sharing one seasonal latent signal; short target.
    PositiveTransfer,
    /// The target disease plus ten high-variance unrelated streams of the
    /// same mode of transmission.
    NegativeTransfer,
    /// Two diseases with distinct noise-free shapes; target follows its own.
    SelfSimilar,
    /// A three-year target with a few companion streams.
    Protocol,
}

impl Scenario {
    pub const ALL: [Scenario; 4] =
        [Scenario::PositiveTransfer, Scenario::NegativeTransfer, Scenario::SelfSimilar, Scenario::Protocol];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::PositiveTransfer => "positive-transfer",
            Scenario::NegativeTransfer => "negative-transfer",
            Scenario::SelfSimilar => "self-similar",
            Scenario::Protocol => "protocol",
        }
    }

    pub fn generate(self, seed: u64) -> Result<SyntheticCorpus> {
        match self {
            Scenario::PositiveTransfer => positive_transfer(seed),
            Scenario::NegativeTransfer => negative_transfer(seed),
            Scenario::SelfSimilar => self_similar(seed),
            Scenario::Protocol => protocol(seed),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.as_str() == s)
            .ok_or_else(|| format!("unknown scenario `{s}`"))
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub target: StreamKey,
}

fn start_date(year: i32) -> chrono::NaiveDate {
    Week::first_of_year(year).sunday()
}

fn series(key: StreamKey, offset: usize, values: Vec<f64>) -> ObservationSeries {
    let start = Week::first_of_year(FIRST_YEAR) + offset as i64;
    ObservationSeries::new(key, Unit::Cases, start.sunday(), values.into_iter().map(Some).collect())
}

/// Yearly epidemic curve with year-to-year amplitude and timing drift.
fn seasonal_latent(rng: &mut ChaCha8Rng, weeks: usize) -> Vec<f64> {
    let years = weeks / 52 + 1;
    let amp: Vec<f64> = (0..years).map(|_| rng.random_range(0.6..1.4)).collect();
    let peak: Vec<f64> = (0..years).map(|_| rng.random_range(22.0..30.0)).collect();
    (0..weeks)
        .map(|t| {
            let y = t / 52;
            let d = (t % 52) as f64 - peak[y];
            1.0 + 14.0 * amp[y] * (-0.5 * (d / 5.0).powi(2)).exp()
        })
        .collect()
}

fn poisson_draws(rng: &mut ChaCha8Rng, means: impl Iterator<Item = f64>) -> Vec<f64> {
    means
        .map(|m| Poisson::new(m.max(1e-9)).expect("positive mean").sample(rng))
        .collect()
}

/// Shared-signal streams: `latent * level * (1 + small multiplicative
/// jitter)` with Poisson counts.
fn signal_stream(rng: &mut ChaCha8Rng, latent: &[f64], level: f64) -> Vec<f64> {
    let jitter = Normal::new(0.0, 0.08).expect("valid sd");
    let means: Vec<f64> = latent.iter().map(|l| l * level * (1.0_f64 + jitter.sample(rng)).max(0.1)).collect();
    poisson_draws(rng, means.into_iter())
}

fn target_key() -> StreamKey {
    StreamKey::new("alpha", "d0", None, "L0")
}

/// The target's disease: a short target stream from source `alpha` and two
/// long companion streams from source `beta`.
fn target_disease(rng: &mut ChaCha8Rng, latent: &[f64], out: &mut Vec<ObservationSeries>) {
    let offset = SPAN_WEEKS - SHORT_TARGET_WEEKS;
    let target = signal_stream(rng, &latent[offset..], 10.0);
    out.push(series(target_key(), offset, target));
    for loc in ["L0", "L1"] {
        let level = rng.random_range(6.0..16.0);
        let v = signal_stream(rng, latent, level);
        out.push(series(StreamKey::new("beta", "d0", None, loc), 0, v));
    }
}

pub fn positive_transfer(seed: u64) -> Result<SyntheticCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latent = seasonal_latent(&mut rng, SPAN_WEEKS);
    let mut taxonomy = Taxonomy::new();
    let mut out = Vec::new();
    taxonomy.insert("d0", TransmissionMode::Respiratory);
    target_disease(&mut rng, &latent, &mut out);
    for d in 1..6 {
        let disease = format!("d{d}");
        taxonomy.insert(&disease, TransmissionMode::Respiratory);
        for loc in ["L0", "L1"] {
            let level = rng.random_range(5.0..20.0);
            let v = signal_stream(&mut rng, &latent, level);
            out.push(series(StreamKey::new(&format!("src{d}"), &disease, None, loc), 0, v));
        }
    }
    // An unrelated vector-borne disease peaking half a year later.
    taxonomy.insert("v0", TransmissionMode::VectorBorne);
    let other = seasonal_latent(&mut rng, SPAN_WEEKS + 26);
    for loc in ["L0", "L1"] {
        let v = signal_stream(&mut rng, &other[26..], 8.0);
        out.push(series(StreamKey::new("vsrc", "v0", None, loc), 0, v));
    }
    Ok(SyntheticCorpus { corpus: Corpus::new(out, taxonomy)?, target: target_key() })
}

/// Bursty counts: a log-scale random walk with occasional large jumps,
/// observed with Poisson noise.
fn noise_stream(rng: &mut ChaCha8Rng, weeks: usize) -> Vec<f64> {
    let step = Normal::new(0.0, 0.6).expect("valid sd");
    let mut level: f64 = rng.random_range(1.0..4.0);
    let means: Vec<f64> = (0..weeks)
        .map(|_| {
            level = 0.8 * level + 0.2 * 2.5 + step.sample(rng);
            if rng.random_bool(0.1) {
                level += rng.random_range(1.0..3.0);
            }
            level = level.clamp(-1.0, 7.0);
            level.exp()
        })
        .collect();
    poisson_draws(rng, means.into_iter())
}

pub fn negative_transfer(seed: u64) -> Result<SyntheticCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latent = seasonal_latent(&mut rng, SPAN_WEEKS);
    let mut taxonomy = Taxonomy::new();
    let mut out = Vec::new();
    taxonomy.insert("d0", TransmissionMode::Respiratory);
    target_disease(&mut rng, &latent, &mut out);
    for n in 0..10 {
        let disease = format!("n{n}");
        taxonomy.insert(&disease, TransmissionMode::Respiratory);
        let v = noise_stream(&mut rng, SPAN_WEEKS);
        out.push(series(StreamKey::new("noise", &disease, None, "L0"), 0, v));
    }
    Ok(SyntheticCorpus { corpus: Corpus::new(out, taxonomy)?, target: target_key() })
}

/// Disease `a` follows a smooth yearly wave shared by all its streams,
/// disease `b` a six-week square wave. The `a` streams start a year after
/// the `b` streams, so the library's share of `a` snippets grows over the
/// backtest.
pub fn self_similar(seed: u64) -> Result<SyntheticCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taxonomy = Taxonomy::new();
    taxonomy.insert("a", TransmissionMode::Respiratory);
    taxonomy.insert("b", TransmissionMode::Respiratory);
    let wave = |t: usize, phase: f64| 100.0 + 80.0 * (std::f64::consts::TAU * t as f64 / 52.0 + phase).sin();
    let square = |t: usize, shift: usize| if (t + shift) % 6 < 3 { 150.0 } else { 30.0 };
    let mut out = Vec::new();
    // Every `a` stream is a level-scaled copy of the same wave.
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    for (i, loc) in ["L0", "L1", "L2"].into_iter().enumerate() {
        let (source, start) = (if i == 0 { "alpha" } else { "gamma" }, 52);
        let level = 1.0 + i as f64;
        let v = (start..SPAN_WEEKS).map(|t| level * wave(t, phase)).collect();
        out.push(series(StreamKey::new(source, "a", None, loc), start, v));
    }
    for loc in ["L0", "L1", "L2", "L3"] {
        let shift = rng.random_range(0..6);
        let v = (0..SPAN_WEEKS).map(|t| square(t, shift)).collect();
        out.push(series(StreamKey::new("delta", "b", None, loc), 0, v));
    }
    Ok(SyntheticCorpus { corpus: Corpus::new(out, taxonomy)?, target: StreamKey::new("alpha", "a", None, "L0") })
}

/// Target spans exactly three calendar years from the first week of 2012.
pub fn protocol(seed: u64) -> Result<SyntheticCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = Week::first_of_year(2012);
    let weeks = (Week::first_of_year(2015).offset_from(start)) as usize;
    let latent = seasonal_latent(&mut rng, weeks + 104);
    let mut taxonomy = Taxonomy::new();
    taxonomy.insert("d0", TransmissionMode::Respiratory);
    taxonomy.insert("d1", TransmissionMode::Respiratory);
    let mut out = Vec::new();
    let target = target_key();
    let v = signal_stream(&mut rng, &latent[104..], 10.0);
    out.push(ObservationSeries::new(target.clone(), Unit::Cases, start_date(2012), v.into_iter().map(Some).collect()));
    for (disease, loc) in [("d0", "L1"), ("d1", "L0")] {
        let v = signal_stream(&mut rng, &latent, 8.0);
        let key = StreamKey::new("beta", disease, None, loc);
        out.push(ObservationSeries::new(key, Unit::Cases, (start - 104).sunday(), v.into_iter().map(Some).collect()));
    }
    Ok(SyntheticCorpus { corpus: Corpus::new(out, taxonomy)?, target })
}
