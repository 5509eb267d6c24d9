//! Method of analogues: a library of scaled 5-week snippets, L1 nearest
//! neighbours of the latest window, and a per-horizon median of the
//! neighbours' futures.
//!
//! A library entry stores the snippet's scaled window and its provenance.
//! Future values are read from the library's own copy of each series, which
//! only ever holds weeks up to the library's as-of week, so an entry's future
//! fills in as the library is updated without the entry itself changing.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ObservationSeries, StreamKey, TrainingScope};
use crate::preprocess::HORIZONS;
use crate::stats::median;
use crate::week::Week;

/// Snippet length `k`.
pub const SNIPPET_LEN: usize = 5;
/// Upper bound on the neighbourhood size.
pub const MAX_NEIGHBORS: usize = 4422;
/// Neighbourhood size as a share of the library when that is smaller.
pub const NEIGHBOR_SHARE: f64 = 0.10;

#[derive(Debug, Error, PartialEq)]
pub enum MoaError {
    #[error("library has no eligible snippets")]
    EmptyLibrary,
    #[error("update to {requested} is not after the library's as-of week {current}")]
    NonMonotoneUpdate { current: Week, requested: Week },
    #[error("no neighbour has any future value")]
    NoFutureData,
    #[error("disease `{0}` has no library snippets")]
    DivisionByZero(String),
}

pub type Result<T, E = MoaError> = std::result::Result<T, E>;

/// A materialised library snippet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snippet {
    pub x: [f64; SNIPPET_LEN],
    /// Scaled future values known at the library's as-of week.
    pub y: Vec<Option<f64>>,
    pub key: StreamKey,
    pub end_week: Week,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    series: usize,
    end_pos: usize,
    x: [f64; SNIPPET_LEN],
    scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Track {
    key: StreamKey,
    start: Week,
    values: Vec<Option<f64>>,
}

impl Track {
    fn week_at(&self, pos: usize) -> Week {
        self.start + pos as i64
    }
}

/// Append-only snippet library with per-disease composition counts.
#[derive(Debug, Clone, PartialEq)]
pub struct SnippetLibrary {
    tracks: Vec<Track>,
    index: HashMap<StreamKey, usize>,
    entries: Vec<Entry>,
    composition: BTreeMap<String, usize>,
    as_of: Option<Week>,
    sampling: Option<TrainingScope>,
}

impl Default for SnippetLibrary {
    fn default() -> Self {
        SnippetLibrary::new(None)
    }
}

/// Scales a snippet window by its last value, leaving it as-is when that is 0.
pub fn scale_snippet(raw: &[f64; SNIPPET_LEN]) -> ([f64; SNIPPET_LEN], f64) {
    let last = raw[SNIPPET_LEN - 1];
    let scale = if last > 0.0 { last } else { 1.0 };
    (raw.map(|v| v / scale), scale)
}

impl SnippetLibrary {
    /// Empty library. With `sampling`, each snippet is kept according to the
    /// scope's row-subsampling rule.
    pub fn new(sampling: Option<TrainingScope>) -> Self {
        SnippetLibrary {
            tracks: Vec::new(),
            index: HashMap::new(),
            entries: Vec::new(),
            composition: BTreeMap::new(),
            as_of: None,
            sampling: sampling.filter(|s| s.subsample_fraction() < 1.0),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn as_of(&self) -> Option<Week> {
        self.as_of
    }

    /// Snippet counts per disease.
    pub fn composition(&self) -> &BTreeMap<String, usize> {
        &self.composition
    }

    pub fn key_of(&self, idx: usize) -> &StreamKey {
        &self.tracks[self.entries[idx].series].key
    }

    pub fn disease_of(&self, idx: usize) -> &str {
        &self.key_of(idx).disease
    }

    pub fn end_week(&self, idx: usize) -> Week {
        let e = &self.entries[idx];
        self.tracks[e.series].week_at(e.end_pos)
    }

    pub fn x(&self, idx: usize) -> &[f64; SNIPPET_LEN] {
        &self.entries[idx].x
    }

    /// Scaled future value `h` weeks (1-based) after snippet `idx`, if known.
    pub fn future(&self, idx: usize, h: usize) -> Option<f64> {
        let e = &self.entries[idx];
        let t = &self.tracks[e.series];
        t.values.get(e.end_pos + h).copied().flatten().map(|v| v / e.scale)
    }

    pub fn snippet(&self, idx: usize) -> Snippet {
        let e = &self.entries[idx];
        let t = &self.tracks[e.series];
        let available = t.values.len().saturating_sub(e.end_pos + 1).min(HORIZONS);
        Snippet {
            x: e.x,
            y: (1..=available).map(|h| self.future(idx, h)).collect(),
            key: t.key.clone(),
            end_week: t.week_at(e.end_pos),
            scale: e.scale,
        }
    }

    fn track_for(&mut self, series: &ObservationSeries) -> usize {
        if let Some(&i) = self.index.get(&series.key) {
            return i;
        }
        self.tracks.push(Track { key: series.key.clone(), start: series.start(), values: Vec::new() });
        self.index.insert(series.key.clone(), self.tracks.len() - 1);
        self.tracks.len() - 1
    }

    /// Appends the observation of `series` at track position `pos` and the
    /// snippet it completes, if any.
    fn push_observation(&mut self, track: usize, series: &ObservationSeries) {
        let t = &mut self.tracks[track];
        let pos = t.values.len();
        t.values.push(series.values[pos]);
        if pos + 1 < SNIPPET_LEN {
            return;
        }
        let Some(raw) = series.window(pos, SNIPPET_LEN) else {
            return;
        };
        let end_week = t.week_at(pos);
        if let Some(scope) = &self.sampling {
            if !scope.keeps_row(&t.key, end_week) {
                return;
            }
        }
        let raw: [f64; SNIPPET_LEN] = raw.try_into().expect("window length");
        let (x, scale) = scale_snippet(&raw);
        *self.composition.entry(t.key.disease.clone()).or_default() += 1;
        self.entries.push(Entry { series: track, end_pos: pos, x, scale });
    }

    /// Adds every observation of `source` up to and including `week`, and
    /// the snippets that become complete. Weeks are processed in calendar
    /// order across all series so insertion order does not depend on how
    /// updates are batched.
    pub fn update(&mut self, source: &[&ObservationSeries], week: Week) -> Result<()> {
        if let Some(current) = self.as_of {
            if week <= current {
                return Err(MoaError::NonMonotoneUpdate { current, requested: week });
            }
        }
        let tracks: Vec<usize> = source.iter().map(|s| self.track_for(s)).collect();
        // Series first seen now catch up to the previous as-of week.
        if let Some(current) = self.as_of {
            for (s, &t) in source.iter().zip(&tracks) {
                while self.tracks[t].values.len() < s.len() && self.tracks[t].week_at(self.tracks[t].values.len()) <= current {
                    self.push_observation(t, s);
                }
            }
        }
        let first = match self.as_of {
            Some(current) => current + 1,
            None => source.iter().map(|s| s.start()).min().unwrap_or(week),
        };
        let mut w = first;
        while w <= week {
            for (s, &t) in source.iter().zip(&tracks) {
                let tr = &self.tracks[t];
                if tr.values.len() < s.len() && tr.week_at(tr.values.len()) == w {
                    self.push_observation(t, s);
                }
            }
            w = w + 1;
        }
        self.as_of = Some(week);
        Ok(())
    }

    /// Neighbourhood size for the current library: `min(4422, ceil(10% of size))`.
    pub fn default_neighbors(&self) -> usize {
        MAX_NEIGHBORS.min((NEIGHBOR_SHARE * self.len() as f64).ceil() as usize)
    }

    /// The `L` snippets closest to `x_test` in L1 distance, ties broken by
    /// insertion order. Snippets from `exclude`'s stream whose windows
    /// overlap the test window's weeks are skipped.
    pub fn find_neighborhood(
        &self,
        x_test: &[f64; SNIPPET_LEN],
        l_override: Option<usize>,
        exclude: Option<(&StreamKey, Week)>,
    ) -> Result<Neighborhood> {
        if self.entries.is_empty() {
            return Err(MoaError::EmptyLibrary);
        }
        let l = l_override.unwrap_or_else(|| self.default_neighbors()).max(1);
        let excluded_track = exclude.and_then(|(k, w)| self.index.get(k).map(|&t| (t, w)));
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(l + 1);
        for (idx, e) in self.entries.iter().enumerate() {
            if let Some((t, w)) = excluded_track {
                let end = self.tracks[t].week_at(e.end_pos);
                if e.series == t && end.offset_from(w).abs() < SNIPPET_LEN as i64 {
                    continue;
                }
            }
            let bound = if heap.len() == l { heap.peek().map(|c| c.dist) } else { None };
            let mut dist = 0.0;
            let mut abandoned = false;
            for (a, b) in e.x.iter().zip(x_test) {
                dist += (a - b).abs();
                if bound.is_some_and(|worst| dist >= worst) {
                    abandoned = true;
                    break;
                }
            }
            if abandoned {
                continue;
            }
            heap.push(Candidate { dist, idx });
            if heap.len() > l {
                heap.pop();
            }
        }
        if heap.is_empty() {
            return Err(MoaError::EmptyLibrary);
        }
        let sorted = heap.into_sorted_vec();
        Ok(Neighborhood {
            members: sorted.iter().map(|c| c.idx).collect(),
            distances: sorted.iter().map(|c| c.dist).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    dist: f64,
    idx: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.idx.cmp(&other.idx))
    }
}

/// Library indices of the nearest snippets, closest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighborhood {
    pub members: Vec<usize>,
    pub distances: Vec<f64>,
}

impl Neighborhood {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Library of every gap-free snippet in `training_set` ending on or before
/// `as_of`.
pub fn build_library(training_set: &[&ObservationSeries], as_of: Week) -> SnippetLibrary {
    build_library_sampled(training_set, as_of, None)
}

pub fn build_library_sampled(
    training_set: &[&ObservationSeries],
    as_of: Week,
    sampling: Option<TrainingScope>,
) -> SnippetLibrary {
    let mut lib = SnippetLibrary::new(sampling);
    lib.update(training_set, as_of).expect("fresh library accepts any week");
    lib
}

/// Per-horizon median of the neighbours' scaled futures, times
/// `scale_factor`, clamped at zero. A horizon no neighbour covers takes the
/// forecast of the nearest covered horizon (earlier first).
pub fn moa_forecast(neighborhood: &Neighborhood, library: &SnippetLibrary, scale_factor: f64) -> Result<[f64; HORIZONS]> {
    let medians: Vec<Option<f64>> = (1..=HORIZONS)
        .map(|h| {
            let ys: Vec<f64> = neighborhood.members.iter().filter_map(|&i| library.future(i, h)).collect();
            median(&ys)
        })
        .collect();
    if medians.iter().all(Option::is_none) {
        return Err(MoaError::NoFutureData);
    }
    let mut out = [0.0; HORIZONS];
    for h in 0..HORIZONS {
        let m = medians[h]
            .or_else(|| (0..h).rev().find_map(|j| medians[j]))
            .or_else(|| (h + 1..HORIZONS).find_map(|j| medians[j]))
            .expect("at least one horizon covered");
        out[h] = (m * scale_factor).max(0.0);
    }
    Ok(out)
}

/// Neighbourhood member counts per disease.
pub fn neighborhood_counts(neighborhood: &Neighborhood, library: &SnippetLibrary) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for &i in &neighborhood.members {
        *counts.entry(library.disease_of(i).to_string()).or_default() += 1;
    }
    counts
}

/// Counts normalised to shares summing to one.
pub fn proportions(counts: &BTreeMap<String, usize>) -> BTreeMap<String, f64> {
    let total: usize = counts.values().sum();
    counts
        .iter()
        .map(|(d, &c)| (d.clone(), if total == 0 { 0.0 } else { c as f64 / total as f64 }))
        .collect()
}

/// Share of neighbourhood members per disease.
pub fn neighborhood_composition(neighborhood: &Neighborhood, library: &SnippetLibrary) -> BTreeMap<String, f64> {
    proportions(&neighborhood_counts(neighborhood, library))
}

/// Adds `more` into `into`; aggregate across forecast dates by summing
/// counts and normalising once.
pub fn accumulate_counts(into: &mut BTreeMap<String, usize>, more: &BTreeMap<String, usize>) {
    for (d, &c) in more {
        *into.entry(d.clone()).or_default() += c;
    }
}

/// Neighbourhood share over library share for each disease in either map.
pub fn composition_relative_to_library(
    neighborhood_counts: &BTreeMap<String, usize>,
    library_counts: &BTreeMap<String, usize>,
) -> Result<BTreeMap<String, f64>> {
    let n_share = proportions(neighborhood_counts);
    let l_share = proportions(library_counts);
    let mut out = BTreeMap::new();
    for disease in n_share.keys().chain(l_share.keys()) {
        let lib = l_share.get(disease).copied().unwrap_or(0.0);
        if lib <= 0.0 {
            return Err(MoaError::DivisionByZero(disease.clone()));
        }
        let nb = n_share.get(disease).copied().unwrap_or(0.0);
        out.insert(disease.clone(), nb / lib);
    }
    Ok(out)
}
