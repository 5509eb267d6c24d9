//! Weekly surveillance corpus: loading, validation, taxonomy lookup and
//! training-scope selection.
//!
//! On disk a corpus is a directory holding `taxonomy.csv` plus any number of
//! per-stream CSV files with the header
//! `source,disease,subtype,location,unit,week_start,value`. A file may carry
//! several locations or subtypes; rows are grouped by
//! `(source, disease, subtype, location)` and must be in date order within
//! each group. Gaps between `week_start` dates become explicit missing weeks.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::week::Week;

pub const TAXONOMY_FILE: &str = "taxonomy.csv";
const STREAM_HEADER: [&str; 7] = ["source", "disease", "subtype", "location", "unit", "week_start", "value"];
const TAXONOMY_HEADER: [&str; 3] = ["disease", "mode_of_transmission", "aliases"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("schema error in {path} line {line}: {message}")]
    Schema { path: PathBuf, line: u64, message: String },
    #[error("{path}: dates for {key} are not strictly increasing at line {line}")]
    NonMonotoneDates { path: PathBuf, key: String, line: u64 },
    #[error("disease `{disease}` has no taxonomy entry")]
    MissingTaxonomyEntry { disease: String },
    #[error("no {TAXONOMY_FILE} in {0}")]
    MissingTaxonomyFile(PathBuf),
    #[error("no stream files in {0}")]
    Empty(PathBuf),
    #[error("stream {0} appears more than once")]
    DuplicateStream(String),
    #[error("unknown target stream {0}")]
    UnknownTarget(String),
    #[error("invalid subsample fraction {0}; must lie in (0, 1]")]
    BadFraction(f64),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

/// Identity of one weekly series: a disease reported by a source at a location.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub source: String,
    pub disease: String,
    pub subtype: Option<String>,
    pub location: String,
}

impl StreamKey {
    pub fn new(source: &str, disease: &str, subtype: Option<&str>, location: &str) -> Self {
        StreamKey {
            source: source.to_string(),
            disease: disease.to_string(),
            subtype: subtype.filter(|s| !s.is_empty()).map(str::to_string),
            location: location.to_string(),
        }
    }

    pub fn subtype_str(&self) -> &str {
        self.subtype.as_deref().unwrap_or("")
    }

    /// Stable 64-bit FNV-1a digest used to derive per-stream random streams.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for part in [&self.source, &self.disease, self.subtype_str(), &self.location] {
            for b in part.bytes().chain(std::iter::once(0x1f)) {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    /// Filesystem-friendly rendering.
    pub fn slug(&self) -> String {
        self.to_string()
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
            .collect()
    }
}

impl fmt::Display for StreamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}/{}", self.source, self.disease, self.subtype_str(), self.location)
    }
}

/// Pattern over stream keys: `source/disease/subtype/location`, with `*`
/// matching any value in a component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamPattern {
    parts: [String; 4],
}

impl StreamPattern {
    pub fn matches(&self, key: &StreamKey) -> bool {
        let values = [key.source.as_str(), key.disease.as_str(), key.subtype_str(), key.location.as_str()];
        self.parts.iter().zip(values).all(|(p, v)| p == "*" || p == v)
    }
}

impl FromStr for StreamPattern {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split('/').collect();
        if parts.len() != 4 {
            return Err(format!("pattern `{s}` must have four `/`-separated components"));
        }
        Ok(StreamPattern {
            parts: [parts[0].into(), parts[1].into(), parts[2].into(), parts[3].into()],
        })
    }
}

impl fmt::Display for StreamPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.parts.join("/"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TransmissionMode {
    Respiratory,
    Sexual,
    FecalOral,
    VectorBorne,
}

impl TransmissionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TransmissionMode::Respiratory => "respiratory",
            TransmissionMode::Sexual => "sexual",
            TransmissionMode::FecalOral => "fecal-oral",
            TransmissionMode::VectorBorne => "vector-borne",
        }
    }
}

impl FromStr for TransmissionMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "respiratory" => Ok(TransmissionMode::Respiratory),
            "sexual" => Ok(TransmissionMode::Sexual),
            "fecal-oral" => Ok(TransmissionMode::FecalOral),
            "vector-borne" => Ok(TransmissionMode::VectorBorne),
            other => Err(format!("unknown mode of transmission `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Unit {
    Cases,
    Deaths,
    Hospitalizations,
    Proportion,
}

impl Unit {
    pub fn as_str(self) -> &'static str {
        match self {
            Unit::Cases => "cases",
            Unit::Deaths => "deaths",
            Unit::Hospitalizations => "hospitalizations",
            Unit::Proportion => "proportion",
        }
    }
}

impl FromStr for Unit {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "cases" => Ok(Unit::Cases),
            "deaths" => Ok(Unit::Deaths),
            "hospitalizations" => Ok(Unit::Hospitalizations),
            "proportion" => Ok(Unit::Proportion),
            other => Err(format!("unknown unit `{other}`")),
        }
    }
}

/// Disease metadata: mode of transmission, source aliases, known subtypes.
///
/// Aliases let several upstream sources count as one data stream for a
/// disease (`NOAA=OpenDengue` makes NOAA dengue rows part of the OpenDengue
/// stream when selecting single-stream training data).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Taxonomy {
    modes: BTreeMap<String, TransmissionMode>,
    aliases: BTreeMap<String, BTreeMap<String, String>>,
    subtypes: BTreeMap<String, BTreeSet<String>>,
}

impl Taxonomy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, disease: &str, mode: TransmissionMode) -> &mut Self {
        self.modes.insert(disease.to_string(), mode);
        self
    }

    pub fn add_alias(&mut self, disease: &str, alias: &str, canonical: &str) -> &mut Self {
        self.aliases
            .entry(disease.to_string())
            .or_default()
            .insert(alias.to_string(), canonical.to_string());
        self
    }

    pub fn mode(&self, disease: &str) -> Option<TransmissionMode> {
        self.modes.get(disease).copied()
    }

    pub fn diseases(&self) -> impl Iterator<Item = (&str, TransmissionMode)> {
        self.modes.iter().map(|(d, m)| (d.as_str(), *m))
    }

    pub fn subtypes(&self, disease: &str) -> impl Iterator<Item = &str> {
        self.subtypes.get(disease).into_iter().flatten().map(String::as_str)
    }

    /// Source name after alias resolution.
    pub fn canonical_source<'a>(&'a self, disease: &str, source: &'a str) -> &'a str {
        self.aliases
            .get(disease)
            .and_then(|m| m.get(source))
            .map(String::as_str)
            .unwrap_or(source)
    }

    pub fn same_stream(&self, a: &StreamKey, b: &StreamKey) -> bool {
        a.disease == b.disease
            && a.subtype == b.subtype
            && self.canonical_source(&a.disease, &a.source) == self.canonical_source(&b.disease, &b.source)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut rdr = csv_reader(path)?;
        check_header(&mut rdr, path, &TAXONOMY_HEADER)?;
        let mut tax = Taxonomy::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|source| CorpusError::Csv { path: path.into(), source })?;
            let line = rec.position().map_or(0, |p| p.line());
            let schema = |message: String| CorpusError::Schema { path: path.into(), line, message };
            let disease = rec.get(0).unwrap_or("").trim();
            if disease.is_empty() {
                return Err(schema("empty disease".into()));
            }
            if tax.modes.contains_key(disease) {
                return Err(schema(format!("duplicate taxonomy row for `{disease}`")));
            }
            let mode = rec.get(1).unwrap_or("").parse::<TransmissionMode>().map_err(schema)?;
            tax.insert(disease, mode);
            for pair in rec.get(2).unwrap_or("").split(';').map(str::trim).filter(|p| !p.is_empty()) {
                let (alias, canonical) = pair
                    .split_once('=')
                    .ok_or_else(|| schema(format!("alias `{pair}` is not of the form alias=canonical")))?;
                tax.add_alias(disease, alias.trim(), canonical.trim());
            }
        }
        Ok(tax)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|source| CorpusError::Csv { path: path.into(), source })?;
        let csv_err = |source| CorpusError::Csv { path: path.into(), source };
        w.write_record(TAXONOMY_HEADER).map_err(csv_err)?;
        for (disease, mode) in &self.modes {
            let aliases = self
                .aliases
                .get(disease)
                .map(|m| m.iter().map(|(a, c)| format!("{a}={c}")).collect::<Vec<_>>().join(";"))
                .unwrap_or_default();
            w.write_record([disease.as_str(), mode.as_str(), aliases.as_str()]).map_err(csv_err)?;
        }
        w.flush().map_err(|source| CorpusError::Io { path: path.into(), source })
    }
}

/// One weekly series. `values[i]` is the observation for week `start + i`;
/// `None` marks a missing week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSeries {
    pub key: StreamKey,
    pub unit: Unit,
    pub start_date: NaiveDate,
    pub values: Vec<Option<f64>>,
}

impl ObservationSeries {
    pub fn new(key: StreamKey, unit: Unit, start_date: NaiveDate, values: Vec<Option<f64>>) -> Self {
        ObservationSeries { key, unit, start_date, values }
    }

    pub fn start(&self) -> Week {
        Week::from_date(self.start_date)
    }

    /// Week of the final entry.
    pub fn end(&self) -> Week {
        self.start() + (self.values.len() as i64 - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn date_at(&self, pos: usize) -> NaiveDate {
        self.start_date + Duration::weeks(pos as i64)
    }

    pub fn position(&self, week: Week) -> Option<usize> {
        let off = week.offset_from(self.start());
        (off >= 0 && (off as usize) < self.values.len()).then_some(off as usize)
    }

    pub fn get(&self, week: Week) -> Option<f64> {
        self.position(week).and_then(|p| self.values[p])
    }

    /// Gap-free window of `len` values ending at position `end` (inclusive).
    pub fn window(&self, end: usize, len: usize) -> Option<Vec<f64>> {
        if len == 0 || end >= self.values.len() || end + 1 < len {
            return None;
        }
        self.values[end + 1 - len..=end].iter().copied().collect()
    }

    /// Copy keeping only weeks strictly before `week`. `None` when nothing remains.
    pub fn truncated_before(&self, week: Week) -> Option<ObservationSeries> {
        let keep = week.offset_from(self.start()).clamp(0, self.values.len() as i64) as usize;
        (keep > 0).then(|| ObservationSeries {
            key: self.key.clone(),
            unit: self.unit,
            start_date: self.start_date,
            values: self.values[..keep].to_vec(),
        })
    }

    pub fn n_missing(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScopeKind {
    SingleStream,
    SingleDisease,
    ModeOfTransmission,
    AllData,
}

impl ScopeKind {
    pub const ALL: [ScopeKind; 4] = [
        ScopeKind::SingleStream,
        ScopeKind::SingleDisease,
        ScopeKind::ModeOfTransmission,
        ScopeKind::AllData,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScopeKind::SingleStream => "single_stream",
            ScopeKind::SingleDisease => "single_disease",
            ScopeKind::ModeOfTransmission => "mode_of_transmission",
            ScopeKind::AllData => "all_data",
        }
    }
}

impl fmt::Display for ScopeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScopeKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        ScopeKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown scope `{s}`"))
    }
}

/// Which slice of the corpus trains a forecaster, plus row subsampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingScope {
    pub kind: ScopeKind,
    subsample_fraction: f64,
    pub seed: u64,
}

impl TrainingScope {
    pub const ALL_DATA_FRACTION: f64 = 0.5;

    pub fn new(kind: ScopeKind, seed: u64) -> Self {
        let subsample_fraction = if kind == ScopeKind::AllData { Self::ALL_DATA_FRACTION } else { 1.0 };
        TrainingScope { kind, subsample_fraction, seed }
    }

    pub fn with_fraction(mut self, fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(CorpusError::BadFraction(fraction));
        }
        self.subsample_fraction = fraction;
        Ok(self)
    }

    pub fn subsample_fraction(&self) -> f64 {
        self.subsample_fraction
    }

    /// Independent Bernoulli keep decision for the training row of `key`
    /// ending at `week`. Stable across calls and across retraining dates.
    pub fn keeps_row(&self, key: &StreamKey, week: Week) -> bool {
        if self.subsample_fraction >= 1.0 {
            return true;
        }
        let mixed = self.seed ^ key.digest().rotate_left(23) ^ (week.0 as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        ChaCha8Rng::seed_from_u64(mixed).random_bool(self.subsample_fraction)
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    series: Vec<ObservationSeries>,
    taxonomy: Taxonomy,
    index: HashMap<StreamKey, usize>,
}

impl Corpus {
    /// Builds a corpus, checking key uniqueness and taxonomy coverage.
    /// Series are stored sorted by key.
    pub fn new(mut series: Vec<ObservationSeries>, mut taxonomy: Taxonomy) -> Result<Self> {
        series.sort_by(|a, b| a.key.cmp(&b.key));
        let mut index = HashMap::with_capacity(series.len());
        for (i, s) in series.iter().enumerate() {
            if taxonomy.mode(&s.key.disease).is_none() {
                return Err(CorpusError::MissingTaxonomyEntry { disease: s.key.disease.clone() });
            }
            if index.insert(s.key.clone(), i).is_some() {
                return Err(CorpusError::DuplicateStream(s.key.to_string()));
            }
            if let Some(sub) = &s.key.subtype {
                taxonomy.subtypes.entry(s.key.disease.clone()).or_default().insert(sub.clone());
            }
        }
        Ok(Corpus { series, taxonomy, index })
    }

    pub fn series(&self) -> &[ObservationSeries] {
        &self.series
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn get(&self, key: &StreamKey) -> Option<&ObservationSeries> {
        self.index.get(key).map(|&i| &self.series[i])
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn mode_of(&self, key: &StreamKey) -> TransmissionMode {
        self.taxonomy.mode(&key.disease).expect("corpus invariant: every disease has a mode")
    }

    /// Series used to train a forecaster for `target` under `scope`.
    ///
    /// Row subsampling for [`ScopeKind::AllData`] is applied when rows or
    /// snippets are built, not here.
    pub fn select_training_set(&self, target: &StreamKey, scope: &TrainingScope) -> Result<Vec<&ObservationSeries>> {
        let target_series = self.get(target).ok_or_else(|| CorpusError::UnknownTarget(target.to_string()))?;
        let mode = self.mode_of(target);
        let selected = self
            .series
            .iter()
            .filter(|s| match scope.kind {
                ScopeKind::SingleStream => self.taxonomy.same_stream(&s.key, target),
                ScopeKind::SingleDisease => s.key.disease == target.disease,
                ScopeKind::ModeOfTransmission => self.mode_of(&s.key) == mode,
                ScopeKind::AllData => true,
            })
            .collect::<Vec<_>>();
        debug_assert!(selected.iter().any(|s| std::ptr::eq(*s, target_series)));
        Ok(selected)
    }

    pub fn matching(&self, pattern: &StreamPattern) -> Vec<&StreamKey> {
        self.series.iter().map(|s| &s.key).filter(|k| pattern.matches(k)).collect()
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|source| CorpusError::Csv { path: path.into(), source })
}

fn check_header(rdr: &mut csv::Reader<fs::File>, path: &Path, expected: &[&str]) -> Result<()> {
    let header = rdr.headers().map_err(|source| CorpusError::Csv { path: path.into(), source })?;
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if found != expected {
        return Err(CorpusError::Schema {
            path: path.into(),
            line: 1,
            message: format!("expected columns `{}`, found `{}`", expected.join(","), found.join(",")),
        });
    }
    Ok(())
}

struct PendingSeries {
    unit: Unit,
    start: NaiveDate,
    last: NaiveDate,
    values: Vec<Option<f64>>,
}

fn read_stream_file(path: &Path, out: &mut BTreeMap<StreamKey, ObservationSeries>) -> Result<()> {
    let mut rdr = csv_reader(path)?;
    check_header(&mut rdr, path, &STREAM_HEADER)?;
    let mut pending: BTreeMap<StreamKey, PendingSeries> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|source| CorpusError::Csv { path: path.into(), source })?;
        let line = rec.position().map_or(0, |p| p.line());
        let schema = |message: String| CorpusError::Schema { path: path.into(), line, message };
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        for (i, name) in [(0, "source"), (1, "disease"), (3, "location")] {
            if field(i).is_empty() {
                return Err(schema(format!("empty {name}")));
            }
        }
        let key = StreamKey::new(field(0), field(1), Some(field(2)), field(3));
        let unit = field(4).parse::<Unit>().map_err(schema)?;
        let date = NaiveDate::parse_from_str(field(5), "%Y-%m-%d")
            .map_err(|e| schema(format!("bad week_start `{}`: {e}", field(5))))?;
        let value = match field(6) {
            "" => None,
            raw => {
                let v: f64 = raw.parse().map_err(|_| schema(format!("bad value `{raw}`")))?;
                if !v.is_finite() || v < 0.0 {
                    return Err(schema(format!("value {raw} must be finite and non-negative")));
                }
                Some(v)
            }
        };
        match pending.get_mut(&key) {
            None => {
                pending.insert(key, PendingSeries { unit, start: date, last: date, values: vec![value] });
            }
            Some(p) => {
                if p.unit != unit {
                    return Err(schema(format!("unit changes from {} to {}", p.unit.as_str(), unit.as_str())));
                }
                let days = (date - p.last).num_days();
                if days <= 0 {
                    return Err(CorpusError::NonMonotoneDates { path: path.into(), key: key.to_string(), line });
                }
                if days % 7 != 0 {
                    return Err(schema(format!("week_start {date} is not a whole number of weeks after {}", p.last)));
                }
                p.values.extend(std::iter::repeat_n(None, (days / 7 - 1) as usize));
                p.values.push(value);
                p.last = date;
            }
        }
    }
    for (key, p) in pending {
        if out.contains_key(&key) {
            return Err(CorpusError::DuplicateStream(key.to_string()));
        }
        out.insert(key.clone(), ObservationSeries::new(key, p.unit, p.start, p.values));
    }
    Ok(())
}

/// Loads every `*.csv` stream file in `root` plus `root/taxonomy.csv`.
pub fn load_corpus(root: &Path) -> Result<Corpus> {
    let tax_path = root.join(TAXONOMY_FILE);
    if !tax_path.is_file() {
        return Err(CorpusError::MissingTaxonomyFile(root.into()));
    }
    let taxonomy = Taxonomy::load(&tax_path)?;
    let mut files = Vec::new();
    for entry in fs::read_dir(root).map_err(|source| CorpusError::Io { path: root.into(), source })? {
        let path = entry.map_err(|source| CorpusError::Io { path: root.into(), source })?.path();
        let is_csv = path.extension().is_some_and(|e| e == "csv");
        if is_csv && path.file_name().is_some_and(|n| n != TAXONOMY_FILE) && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(CorpusError::Empty(root.into()));
    }
    let mut series = BTreeMap::new();
    for f in &files {
        read_stream_file(f, &mut series)?;
    }
    Corpus::new(series.into_values().collect(), taxonomy)
}

/// Writes `corpus` as one file per `(source, disease)` plus the taxonomy.
pub fn write_corpus(corpus: &Corpus, root: &Path) -> Result<()> {
    fs::create_dir_all(root).map_err(|source| CorpusError::Io { path: root.into(), source })?;
    corpus.taxonomy.write(&root.join(TAXONOMY_FILE))?;
    let mut groups: BTreeMap<(String, String), Vec<&ObservationSeries>> = BTreeMap::new();
    for s in &corpus.series {
        groups.entry((s.key.source.clone(), s.key.disease.clone())).or_default().push(s);
    }
    for ((source, disease), members) in groups {
        let slug = |s: &str| s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect::<String>();
        let path = root.join(format!("{}__{}.csv", slug(&source), slug(&disease)));
        let csv_err = |source| CorpusError::Csv { path: path.clone(), source };
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        w.write_record(STREAM_HEADER).map_err(csv_err)?;
        for s in members {
            for (i, v) in s.values.iter().enumerate() {
                let value = v.map(|x| x.to_string()).unwrap_or_default();
                let date = s.date_at(i).format("%Y-%m-%d").to_string();
                w.write_record([
                    s.key.source.as_str(),
                    s.key.disease.as_str(),
                    s.key.subtype_str(),
                    s.key.location.as_str(),
                    s.unit.as_str(),
                    date.as_str(),
                    value.as_str(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush().map_err(|source| CorpusError::Io { path: path.clone(), source })?;
    }
    Ok(())
}
