use chrono::NaiveDate;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xdisease::eval::{coverage95, mae, run_backtest, wis, BacktestPlan, ForecastRecord, Forecaster};
use xdisease::gbt::Hyperparams;
use xdisease::synthetic::{positive_transfer, protocol};
use xdisease::{Corpus, ObservationSeries, ScopeKind, StreamKey, TrainingScope, Week};

/// WIS written as the average pinball loss over the median and the interval
/// endpoints: (alpha/2) * IS equals the pinball losses of both endpoints.
fn wis_by_pinball(point: f64, q: &[f64; 7], y: f64) -> f64 {
    let rho = |tau: f64, u: f64| if u >= 0.0 { tau * u } else { (tau - 1.0) * u };
    let mut total = 0.5 * (y - point).abs();
    for (lo, hi, alpha) in [(q[2], q[4], 0.5), (q[1], q[5], 0.2), (q[0], q[6], 0.05)] {
        total += rho(alpha / 2.0, y - lo) + rho(1.0 - alpha / 2.0, y - hi);
    }
    total / 3.5
}

fn record(point: f64, q: Option<[f64; 7]>, truth: Option<f64>) -> ForecastRecord {
    ForecastRecord {
        target: StreamKey::new("s", "d", None, "l"),
        forecaster: Forecaster::Moa,
        scope: ScopeKind::SingleStream,
        origin: Week(2500),
        origin_date: NaiveDate::from_ymd_opt(2017, 12, 3).unwrap(),
        horizon: 1,
        point,
        quantiles: q,
        truth,
        model_year: None,
    }
}

fn quantile_set() -> impl Strategy<Value = [f64; 7]> {
    prop::array::uniform7(0.0f64..500.0).prop_map(|mut q| {
        q.sort_by(f64::total_cmp);
        q
    })
}

proptest! {
    #[test]
    fn wis_matches_pinball_form(q in quantile_set(), y in 0.0f64..600.0, point in 0.0f64..500.0) {
        let a = wis(&[record(point, Some(q), Some(y))]).unwrap();
        let b = wis_by_pinball(point, &q, y);
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
    }

    #[test]
    fn wis_zero_only_at_truth(y in 0.0f64..100.0, bump in 1e-6f64..10.0, idx in prop::sample::select(vec![0usize, 1, 2, 4, 5, 6, 7])) {
        // The median term uses the point forecast (index 7 here), not q0.5.
        let mut q = [y; 7];
        let mut point = y;
        prop_assert_eq!(wis(&[record(point, Some(q), Some(y))]).unwrap(), 0.0);
        if idx == 7 { point += bump } else if idx < 3 { q[idx] -= bump } else { q[idx] += bump }
        prop_assert!(wis(&[record(point, Some(q), Some(y))]).unwrap() > 0.0);
    }

    #[test]
    fn mae_is_translation_invariant_and_scale_equivariant(
        pairs in prop::collection::vec((0.0f64..1e4, 0.0f64..1e4), 1..50), shift in -1e3f64..1e3, lambda in 0.01f64..100.0,
    ) {
        let base: Vec<_> = pairs.iter().map(|&(f, y)| record(f, None, Some(y))).collect();
        let shifted: Vec<_> = pairs.iter().map(|&(f, y)| record(f + shift, None, Some(y + shift))).collect();
        let scaled: Vec<_> = pairs.iter().map(|&(f, y)| record(f * lambda, None, Some(y * lambda))).collect();
        let m = mae(&base).unwrap();
        prop_assert!((mae(&shifted).unwrap() - m).abs() <= 1e-9 * m.max(1.0) + 1e-9 * shift.abs());
        prop_assert!((mae(&scaled).unwrap() - lambda * m).abs() <= 1e-9 * (lambda * m).max(1.0));
    }

    #[test]
    fn widening_never_lowers_coverage(cases in prop::collection::vec((quantile_set(), 0.0f64..600.0), 1..40), widen in 0.0f64..50.0) {
        let narrow: Vec<_> = cases.iter().map(|(q, y)| record(q[3], Some(*q), Some(*y))).collect();
        let wide: Vec<_> = cases
            .iter()
            .map(|(q, y)| {
                let mut w = *q;
                w[0] -= widen;
                w[6] += widen;
                record(q[3], Some(w), Some(*y))
            })
            .collect();
        let a = coverage95(&narrow).unwrap();
        let b = coverage95(&wide).unwrap();
        prop_assert!((0.0..=1.0).contains(&a) && b >= a);
    }
}

/// Copy of `corpus` with every observation after `t` replaced by noise.
fn poisoned(corpus: &Corpus, t: Week, rng: &mut ChaCha8Rng) -> Corpus {
    let series: Vec<ObservationSeries> = corpus
        .series()
        .iter()
        .map(|s| {
            let mut s = s.clone();
            let start = s.start();
            for (i, v) in s.values.iter_mut().enumerate() {
                if start + i as i64 > t {
                    *v = Some(rng.random_range(0.0..1e5_f64).round());
                }
            }
            s
        })
        .collect();
    Corpus::new(series, corpus.taxonomy().clone()).unwrap()
}

#[test]
fn records_ignore_future_observations() {
    let sc = positive_transfer(3).unwrap();
    let target = sc.corpus.get(&sc.target).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let light = Hyperparams { n_trees: 30, max_depth: 3, ..Hyperparams::default() };
    for i in 0..50 {
        let forecaster = if i % 5 == 0 { Forecaster::Gbt } else { Forecaster::Moa };
        let scope = TrainingScope::new(ScopeKind::ALL[i % 4], 3);
        let mut plan = BacktestPlan::new(sc.target.clone(), forecaster, scope);
        plan.gbt = light;
        let (lo, hi) = plan.origin_range(target.start(), target.end()).unwrap();
        let t = lo + rng.random_range(0..=hi.offset_from(lo));
        plan.last_origin = Some(t);
        if forecaster == Forecaster::Gbt {
            plan.first_origin = Some(t);
        }
        let clean = run_backtest(&sc.corpus, &plan).unwrap();
        let dirty = run_backtest(&poisoned(&sc.corpus, t, &mut rng), &plan).unwrap();
        let issued = |rs: &[ForecastRecord]| rs.iter().filter(|r| r.origin == t).map(|r| r.issued()).collect::<Vec<_>>();
        let a = issued(&clean.records);
        assert!(!a.is_empty());
        assert_eq!(a, issued(&dirty.records), "origin {t} {forecaster} {:?}", scope.kind);
    }
}

#[test]
fn protocol_schedule() {
    let sc = protocol(1).unwrap();
    let target = sc.corpus.get(&sc.target).unwrap();
    let light = Hyperparams { n_trees: 30, max_depth: 3, ..Hyperparams::default() };

    let mut gbt = BacktestPlan::new(sc.target.clone(), Forecaster::Gbt, TrainingScope::new(ScopeKind::SingleDisease, 1));
    gbt.gbt = light;
    let out = run_backtest(&sc.corpus, &gbt).unwrap();
    let years: std::collections::BTreeSet<i32> = out.records.iter().filter_map(|r| r.model_year).collect();
    assert_eq!(years.into_iter().collect::<Vec<_>>(), vec![2012, 2013, 2014]);
    assert_eq!(out.models.iter().map(|m| m.year).collect::<Vec<_>>(), vec![2012, 2013, 2014]);
    assert_eq!(out.records.first().unwrap().origin, target.start() + 51);

    let moa = BacktestPlan::new(sc.target.clone(), Forecaster::Moa, TrainingScope::new(ScopeKind::SingleStream, 1));
    let out = run_backtest(&sc.corpus, &moa).unwrap();
    let first = out.records.first().unwrap();
    // The first forecast targets the 12th week of data.
    assert_eq!(first.origin + first.horizon as i64, target.start() + 11);
    for h in 1..=4 {
        let of_h: Vec<&ForecastRecord> = out.records.iter().filter(|r| r.horizon == h).collect();
        let first_interval = of_h.iter().position(|r| r.quantiles.is_some()).unwrap();
        // Pairs resolved by the first interval's origin: earlier forecasts whose target week has passed.
        let origin = of_h[first_interval].origin;
        let resolved = |o: Week| of_h.iter().filter(|r| r.origin + h as i64 <= o && r.truth.is_some()).count();
        assert_eq!(resolved(origin), 20, "horizon {h}");
        assert!(resolved(origin - 1) < 20);
    }
}
