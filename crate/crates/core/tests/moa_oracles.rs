use std::collections::BTreeSet;

use chrono::NaiveDate;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xdisease::corpus::Unit;
use xdisease::moa::{build_library, moa_forecast, neighborhood_composition, SnippetLibrary, SNIPPET_LEN};
use xdisease::{ObservationSeries, StreamKey, Week};

fn series(name: &str, disease: &str, start: NaiveDate, values: Vec<Option<f64>>) -> ObservationSeries {
    ObservationSeries::new(StreamKey::new("src", disease, None, name), Unit::Cases, start, values)
}

fn random_corpus(rng: &mut ChaCha8Rng, max_snippets: usize) -> Vec<ObservationSeries> {
    let base = NaiveDate::from_ymd_opt(2016, 1, 3).unwrap();
    let n_series = rng.random_range(1..5);
    let per = (max_snippets / n_series).max(1);
    (0..n_series)
        .map(|i| {
            let len = rng.random_range(SNIPPET_LEN..SNIPPET_LEN + per);
            // Small integer values make exact distance ties common.
            let values = (0..len).map(|_| Some(rng.random_range(0..6) as f64)).collect();
            let start = base + chrono::Duration::weeks(rng.random_range(0..20));
            series(&format!("s{i}"), if i % 2 == 0 { "a" } else { "b" }, start, values)
        })
        .collect()
}

fn distance(a: &[f64; SNIPPET_LEN], b: &[f64; SNIPPET_LEN]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Exhaustive search: sort every snippet by (distance, insertion index).
fn brute_force(lib: &SnippetLibrary, x: &[f64; SNIPPET_LEN], l: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = (0..lib.len()).map(|i| (distance(lib.x(i), x), i)).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.into_iter().take(l).map(|p| p.1).collect()
}

fn random_query(rng: &mut ChaCha8Rng) -> [f64; SNIPPET_LEN] {
    let raw: [f64; SNIPPET_LEN] = std::array::from_fn(|_| rng.random_range(0..6) as f64);
    xdisease::moa::scale_snippet(&raw).0
}

#[test]
fn neighbourhood_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..500 {
        let corpus = random_corpus(&mut rng, 200);
        let refs: Vec<&ObservationSeries> = corpus.iter().collect();
        let lib = build_library(&refs, Week::first_of_year(2030));
        assert!(lib.len() <= 200);
        let l = rng.random_range(1..=20);
        let x = random_query(&mut rng);
        let nb = lib.find_neighborhood(&x, Some(l), None).unwrap();
        let expected = brute_force(&lib, &x, l);
        let got: BTreeSet<usize> = nb.members.iter().copied().collect();
        assert_eq!(got, expected.iter().copied().collect::<BTreeSet<_>>());
        assert_eq!(nb.members, expected);
    }
}

/// Distances of the neighbourhood members, sorted.
fn member_distances(lib: &SnippetLibrary, members: &[usize], x: &[f64; SNIPPET_LEN]) -> Vec<f64> {
    let mut d: Vec<f64> = members.iter().map(|&i| distance(lib.x(i), x)).collect();
    d.sort_by(f64::total_cmp);
    d
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn insertion_order_only_affects_ties(seed in any::<u64>(), l in 1usize..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let corpus = random_corpus(&mut rng, 120);
        let x = random_query(&mut rng);
        let forward: Vec<&ObservationSeries> = corpus.iter().collect();
        let backward: Vec<&ObservationSeries> = corpus.iter().rev().collect();
        let a = build_library(&forward, Week::first_of_year(2030));
        let b = build_library(&backward, Week::first_of_year(2030));
        let na = a.find_neighborhood(&x, Some(l), None).unwrap();
        let nb = b.find_neighborhood(&x, Some(l), None).unwrap();
        let da = member_distances(&a, &na.members, &x);
        let db = member_distances(&b, &nb.members, &x);
        prop_assert_eq!(&da, &db);
        // Members strictly closer than the boundary distance agree exactly.
        let boundary = *da.last().unwrap();
        let strict = |lib: &SnippetLibrary, m: &[usize]| -> BTreeSet<(String, Week)> {
            m.iter()
                .filter(|&&i| distance(lib.x(i), &x) < boundary)
                .map(|&i| (lib.key_of(i).to_string(), lib.end_week(i)))
                .collect()
        };
        prop_assert_eq!(strict(&a, &na.members), strict(&b, &nb.members));
    }

    #[test]
    fn larger_l_extends_neighbourhood(seed in any::<u64>(), l in 1usize..15, extra in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let corpus = random_corpus(&mut rng, 150);
        let refs: Vec<&ObservationSeries> = corpus.iter().collect();
        let lib = build_library(&refs, Week::first_of_year(2030));
        let x = random_query(&mut rng);
        let small = lib.find_neighborhood(&x, Some(l), None).unwrap();
        let large = lib.find_neighborhood(&x, Some(l + extra), None).unwrap();
        let large_set: BTreeSet<usize> = large.members.iter().copied().collect();
        prop_assert!(small.members.iter().all(|m| large_set.contains(m)));
    }

    #[test]
    fn batched_updates_match_single_build(seed in any::<u64>(), cuts in prop::collection::vec(1i64..30, 1..6)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let corpus = random_corpus(&mut rng, 150);
        let refs: Vec<&ObservationSeries> = corpus.iter().collect();
        let end = refs.iter().map(|s| s.end()).max().unwrap();
        let mut incremental = SnippetLibrary::new(None);
        let mut week = refs.iter().map(|s| s.start()).min().unwrap();
        for c in cuts {
            week = week + c;
            if week >= end {
                break;
            }
            incremental.update(&refs, week).unwrap();
        }
        incremental.update(&refs, end + 1).unwrap();
        let whole = build_library(&refs, end + 1);
        prop_assert_eq!(incremental.len(), whole.len());
        for i in 0..whole.len() {
            prop_assert_eq!(incremental.snippet(i), whole.snippet(i));
        }
    }

    #[test]
    fn forecasts_lie_within_neighbour_futures(seed in any::<u64>(), l in 1usize..20, scale in 0.5f64..200.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let corpus = random_corpus(&mut rng, 150);
        let refs: Vec<&ObservationSeries> = corpus.iter().collect();
        let lib = build_library(&refs, Week::first_of_year(2030));
        let x = random_query(&mut rng);
        let nb = lib.find_neighborhood(&x, Some(l), None).unwrap();
        let Ok(f) = moa_forecast(&nb, &lib, scale) else { return Ok(()); };
        for h in 1..=4 {
            let ys: Vec<f64> = nb.members.iter().filter_map(|&i| lib.future(i, h)).collect();
            if ys.is_empty() {
                continue;
            }
            let lo = ys.iter().copied().fold(f64::INFINITY, f64::min) * scale;
            let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max) * scale;
            prop_assert!(f[h - 1] >= lo.max(0.0) - 1e-9 && f[h - 1] <= hi.max(0.0) + 1e-9);
        }
        let shares = neighborhood_composition(&nb, &lib);
        prop_assert!((shares.values().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn library_never_reads_past_as_of() {
    let base = NaiveDate::from_ymd_opt(2018, 1, 7).unwrap();
    let values: Vec<Option<f64>> = (0..30).map(|i| Some(10.0 + i as f64)).collect();
    let s = series("x", "a", base, values.clone());
    let mut poisoned_values = values;
    for v in &mut poisoned_values[15..] {
        *v = Some(1e6);
    }
    let p = series("x", "a", base, poisoned_values);
    let as_of = Week::from_date(base) + 14;
    let a = build_library(&[&s], as_of);
    let b = build_library(&[&p], as_of);
    assert_eq!(a.len(), b.len());
    for i in 0..a.len() {
        assert_eq!(a.snippet(i), b.snippet(i));
    }
}

/// Uniformly random neighbourhoods reproduce the library's disease mix.
#[test]
fn uniform_sampling_ratios_near_one() {
    use std::collections::BTreeMap;
    use xdisease::moa::{accumulate_counts, composition_relative_to_library, neighborhood_counts, Neighborhood};
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let base = NaiveDate::from_ymd_opt(2016, 1, 3).unwrap();
    let corpus: Vec<ObservationSeries> = (0..6)
        .map(|i| {
            let len = 40 + 30 * i;
            let values = (0..len).map(|_| Some(rng.random_range(1..50) as f64)).collect();
            series(&format!("s{i}"), ["a", "b", "c"][i % 3], base, values)
        })
        .collect();
    let refs: Vec<&ObservationSeries> = corpus.iter().collect();
    let lib = build_library(&refs, Week::first_of_year(2030));
    let mut total = BTreeMap::new();
    for _ in 0..2000 {
        let members = rand::seq::index::sample(&mut rng, lib.len(), 30).into_vec();
        let nb = Neighborhood { members, distances: vec![0.0; 30] };
        accumulate_counts(&mut total, &neighborhood_counts(&nb, &lib));
    }
    let ratios = composition_relative_to_library(&total, lib.composition()).unwrap();
    for (d, r) in ratios {
        assert!((r - 1.0).abs() <= 0.1, "{d}: {r}");
    }
}
