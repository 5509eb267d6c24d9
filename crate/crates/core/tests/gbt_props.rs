use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use xdisease::eval::{run_backtest, BacktestPlan, Forecaster};
use xdisease::gbt::{fit_quantile_model, BoostedModel, Dataset, Hyperparams, QUANTILE_LEVELS};
use xdisease::synthetic::protocol;
use xdisease::{ScopeKind, TrainingScope};

const Z90: f64 = 1.2815515655446004;

fn normal_data(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut d = Dataset::new(1);
    for _ in 0..n {
        let x: f64 = rng.random_range(0.0..10.0);
        d.push(&[x], x + noise.sample(&mut rng));
    }
    d
}

#[test]
fn recovers_conditional_normal_quantile() {
    let data = normal_data(5000, 11);
    let model = fit_quantile_model(&data, 0.9, &Hyperparams::default()).unwrap();
    let grid: Vec<f64> = (0..50).map(|i| 0.5 + 9.0 * i as f64 / 49.0).collect();
    let errs: Vec<f64> = grid.iter().map(|&x| model.predict(&[x]) - (x + Z90)).collect();
    let bias = errs.iter().sum::<f64>() / errs.len() as f64;
    let spread = errs.iter().map(|e| e.abs()).sum::<f64>() / errs.len() as f64;
    assert!(bias.abs() <= 0.15, "mean deviation {bias}");
    assert!(spread <= 0.25, "mean absolute deviation {spread}");
    assert!(model.training_loss.windows(2).all(|w| w[1] <= w[0] + 1e-12));
}

#[test]
fn training_is_deterministic() {
    let data = normal_data(800, 3);
    let hp = Hyperparams { n_trees: 40, feature_fraction: 0.5, row_fraction: 0.7, seed: 5, ..Hyperparams::default() };
    let a = BoostedModel::fit_any(&data, &hp, Default::default(), vec!["x".into()]).unwrap();
    let b = BoostedModel::fit_any(&data, &hp, Default::default(), vec!["x".into()]).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    let back = BoostedModel::from_json(&a.to_json().unwrap()).unwrap();
    assert_eq!(back.raw_outputs(&[4.0]).unwrap(), a.raw_outputs(&[4.0]).unwrap());
}

#[test]
fn backtest_quantiles_are_monotone() {
    let sc = protocol(5).unwrap();
    for kind in [ScopeKind::SingleStream, ScopeKind::SingleDisease] {
        let mut plan = BacktestPlan::new(sc.target.clone(), Forecaster::Gbt, TrainingScope::new(kind, 5));
        plan.gbt = Hyperparams { n_trees: 60, max_depth: 4, ..Hyperparams::default() };
        let out = run_backtest(&sc.corpus, &plan).unwrap();
        for r in &out.records {
            let q = r.quantiles.unwrap();
            assert!(q.windows(2).all(|w| w[0] <= w[1]), "{q:?}");
            assert!(q[0] >= 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn loss_never_increases(seed in any::<u64>(), alpha_idx in 0usize..7, depth in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d = Dataset::new(3);
        for _ in 0..300 {
            let row: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let y = row[0] * 3.0 + row[1].abs() + rng.random_range(-1.0..1.0);
            d.push(&row, y);
        }
        let hp = Hyperparams { n_trees: 50, max_depth: depth, min_samples_leaf: 5, seed, ..Hyperparams::default() };
        let m = fit_quantile_model(&d, QUANTILE_LEVELS[alpha_idx], &hp).unwrap();
        prop_assert!(m.training_loss.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{:?}", m.training_loss);
    }
}
