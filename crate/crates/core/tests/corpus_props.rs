use chrono::NaiveDate;
use proptest::prelude::*;
use xdisease::corpus::{TransmissionMode, Unit};
use xdisease::{load_corpus, write_corpus, Corpus, ObservationSeries, ScopeKind, StreamKey, Taxonomy, TrainingScope};

const DISEASES: [(&str, TransmissionMode); 4] = [
    ("flu", TransmissionMode::Respiratory),
    ("rsv", TransmissionMode::Respiratory),
    ("dengue", TransmissionMode::VectorBorne),
    ("syphilis", TransmissionMode::Sexual),
];

fn taxonomy() -> Taxonomy {
    let mut t = Taxonomy::new();
    for (d, m) in DISEASES {
        t.insert(d, m);
    }
    t.add_alias("dengue", "NOAA", "OpenDengue");
    t
}

fn value() -> impl Strategy<Value = Option<f64>> {
    prop_oneof![
        1 => Just(None),
        6 => (0u32..100_000).prop_map(|v| Some(v as f64)),
        2 => (0.0f64..1e6).prop_map(Some),
    ]
}

prop_compose! {
    fn series_shape()(disease in 0usize..4, source in 0usize..3, loc in 0usize..3,
                     offset in 0i64..200, values in prop::collection::vec(value(), 1..60))
        -> (usize, usize, usize, i64, Vec<Option<f64>>) {
        (disease, source, loc, offset, values)
    }
}

fn build(shapes: Vec<(usize, usize, usize, i64, Vec<Option<f64>>)>) -> Option<Corpus> {
    let sources = ["OpenDengue", "NOAA", "CDC"];
    let base = NaiveDate::from_ymd_opt(2009, 12, 27).unwrap();
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for (d, s, l, offset, mut values) in shapes {
        let key = StreamKey::new(sources[s], DISEASES[d].0, None, &format!("loc{l}"));
        if !seen.insert(key.clone()) {
            continue;
        }
        // Stored series start and end on an observed week.
        values[0].get_or_insert(1.0);
        let last = values.len() - 1;
        values[last].get_or_insert(2.0);
        let start = base + chrono::Duration::weeks(offset);
        out.push(ObservationSeries::new(key, Unit::Cases, start, values));
    }
    Corpus::new(out, taxonomy()).ok()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn write_then_load_is_bit_exact(shapes in prop::collection::vec(series_shape(), 1..8)) {
        let corpus = build(shapes).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_corpus(&corpus, dir.path()).unwrap();
        let back = load_corpus(dir.path()).unwrap();
        prop_assert_eq!(back.series().len(), corpus.series().len());
        for (a, b) in corpus.series().iter().zip(back.series()) {
            prop_assert_eq!(&a.key, &b.key);
            prop_assert_eq!(a.start_date, b.start_date);
            let bits = |s: &ObservationSeries| s.values.iter().map(|v| v.map(f64::to_bits)).collect::<Vec<_>>();
            prop_assert_eq!(bits(a), bits(b));
        }
        // A second round trip reproduces the files themselves.
        let dir2 = tempfile::tempdir().unwrap();
        write_corpus(&back, dir2.path()).unwrap();
        let again = load_corpus(dir2.path()).unwrap();
        prop_assert_eq!(again.series(), back.series());
    }

    #[test]
    fn scopes_are_nested_and_deterministic(shapes in prop::collection::vec(series_shape(), 1..10), pick in 0usize..100, seed in any::<u64>()) {
        let corpus = build(shapes).unwrap();
        let target = corpus.series()[pick % corpus.len()].key.clone();
        let sets: Vec<Vec<&StreamKey>> = ScopeKind::ALL
            .iter()
            .map(|&k| {
                corpus
                    .select_training_set(&target, &TrainingScope::new(k, seed))
                    .unwrap()
                    .into_iter()
                    .map(|s| &s.key)
                    .collect()
            })
            .collect();
        for w in sets.windows(2) {
            prop_assert!(w[0].iter().all(|k| w[1].contains(k)));
        }
        prop_assert!(sets[0].contains(&&target));
        prop_assert_eq!(sets[3].len(), corpus.len());
        for k in ScopeKind::ALL {
            let scope = TrainingScope::new(k, seed);
            let a = corpus.select_training_set(&target, &scope).unwrap();
            let b = corpus.select_training_set(&target, &scope).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn all_data_subsampling_is_seeded(seed in any::<u64>(), week in 0i64..5000) {
        let key = StreamKey::new("CDC", "flu", None, "loc0");
        let scope = TrainingScope::new(ScopeKind::AllData, seed);
        let w = xdisease::Week(week);
        prop_assert_eq!(scope.keeps_row(&key, w), scope.keeps_row(&key, w));
        prop_assert!(TrainingScope::new(ScopeKind::SingleDisease, seed).keeps_row(&key, w));
    }
}

#[test]
fn all_data_keeps_about_half() {
    let key = StreamKey::new("CDC", "flu", None, "loc0");
    let scope = TrainingScope::new(ScopeKind::AllData, 42);
    let kept = (0..20_000).filter(|&w| scope.keeps_row(&key, xdisease::Week(w))).count();
    assert!((9_600..=10_400).contains(&kept), "{kept}");
}
