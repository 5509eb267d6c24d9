use chrono::NaiveDate;
use proptest::prelude::*;
use xdisease::corpus::Unit;
use xdisease::preprocess::{filter_outliers, last_value_scale, make_training_rows, HORIZONS};
use xdisease::{ObservationSeries, StreamKey};

fn window(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![0.0f64..1e4, (0u32..500).prop_map(f64::from)], len)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 4.0 * f64::EPSILON * a.abs().max(b.abs())
}

proptest! {
    #[test]
    fn unscale_recovers_window(w in window(1..40), smoothed in any::<bool>()) {
        prop_assume!(!smoothed || w.len() >= 5);
        let s = last_value_scale(&w, smoothed).unwrap();
        for (a, b) in s.unscale().iter().zip(&w) {
            prop_assert!(close(*a, *b), "{a} vs {b}");
        }
    }

    #[test]
    fn scaling_is_equivariant(w in window(2..40), lambda in 0.01f64..100.0) {
        prop_assume!(*w.last().unwrap() > 0.0);
        let a = last_value_scale(&w, false).unwrap();
        let scaled: Vec<f64> = w.iter().map(|x| x * lambda).collect();
        let b = last_value_scale(&scaled, false).unwrap();
        for (x, y) in a.scaled.iter().zip(&b.scaled) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn outlier_filter_is_idempotent_below_budget(
        mut w in prop::collection::vec(50.0f64..60.0, 11..40),
        spikes in prop::collection::vec((0usize..40, 200.0f64..5000.0), 0..3),
    ) {
        for (i, v) in spikes {
            let n = w.len();
            w[i % n] = v;
        }
        let (once, mask) = filter_outliers(&w).unwrap();
        let budget = w.len() / 5;
        prop_assume!(mask.iter().filter(|m| **m).count() < budget);
        let (twice, mask2) = filter_outliers(&once).unwrap();
        prop_assert_eq!(&twice, &once);
        prop_assert!(mask2.iter().all(|m| !m));
    }

    #[test]
    fn outlier_filter_respects_budget(w in window(11..60)) {
        let (_, mask) = filter_outliers(&w).unwrap();
        prop_assert!(mask.iter().filter(|m| **m).count() <= w.len() / 5);
    }

    #[test]
    fn gap_free_series_yield_t_minus_11_rows(values in prop::collection::vec(1.0f64..1000.0, 12..120)) {
        let t = values.len();
        let s = ObservationSeries::new(
            StreamKey::new("s", "d", None, "l"),
            Unit::Cases,
            NaiveDate::from_ymd_opt(2015, 1, 4).unwrap(),
            values.into_iter().map(Some).collect(),
        );
        let rows = make_training_rows(&s, HORIZONS).unwrap();
        prop_assert_eq!(rows.len(), t - 11);
        for r in &rows {
            prop_assert_eq!(r.window.len(), 11);
            prop_assert!(!r.future.is_empty() && r.future.len() <= HORIZONS);
        }
    }
}
