use proptest::prelude::*;
use spgp::bench::{
    make_split, mean_absolute_error, paired_t_test, run_trials, sweep_prior, BenchData, Method,
};
use spgp::synth::{generate, NoiseLevel, SyntheticSpec};
use spgp::{MaskVariant, SplitKind, TargetTable, TrainConfig};

/// Two-sided Student-t tail probability by quadrature. With
/// `x = sqrt(df) tan(theta)` the density becomes `cos(theta)^(df-1)`, so no
/// gamma functions are needed.
fn t_two_sided_p(t: f64, df: f64) -> f64 {
    let simpson = |upper: f64| {
        let n = 200_000;
        let h = upper / n as f64;
        let f = |th: f64| th.cos().powf(df - 1.0);
        let mut s = f(0.0) + f(upper);
        for i in 1..n {
            s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let theta = (t.abs() / df.sqrt()).atan();
    1.0 - simpson(theta) / simpson(std::f64::consts::FRAC_PI_2)
}

fn oracle_p(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    t_two_sided_p(mean / (var / n).sqrt(), n - 1.0)
}

fn table(counts: &[u32]) -> TargetTable {
    TargetTable::new(
        (0..counts.len()).map(|i| format!("s{i}")).collect(),
        (0..counts.len()).map(|i| i as f64 * 0.5).collect(),
        counts.to_vec(),
    )
    .unwrap()
}

#[test]
fn t_test_matches_quadrature() {
    let cases: [(&[f64], &[f64]); 3] = [
        (&[0.31, 0.29, 0.35, 0.30, 0.28], &[0.33, 0.30, 0.36, 0.34, 0.29]),
        (&[1.0, 2.0, 3.0, 4.0], &[1.5, 1.9, 3.7, 4.2]),
        (&[0.2, 0.25], &[0.1, 0.3]),
    ];
    for (a, b) in cases {
        let t = paired_t_test(a, b).unwrap();
        let o = oracle_p(a, b);
        assert!((t.p_value - o).abs() < 1e-9, "{} vs {o}", t.p_value);
        assert!(!t.degenerate);
    }
}

#[test]
fn identical_methods_give_degenerate_test() {
    let a = [0.3, 0.2, 0.4];
    let t = paired_t_test(&a, &a).unwrap();
    assert!(t.degenerate);
    assert_eq!(t.p_value, 1.0);
}

#[test]
fn mae_is_the_direct_sum() {
    let y = [1.0, -2.0, 0.5, 4.0];
    assert_eq!(mean_absolute_error(&y, &y), 0.0);
    let p = [1.5, -1.0, 0.0, 4.25];
    let direct = (0.5 + 1.0 + 0.5 + 0.25) / 4.0;
    assert_eq!(mean_absolute_error(&p, &y), direct);
}

#[test]
fn split_sizes_follow_the_protocol() {
    let mut counts = vec![1u32; 80];
    counts.extend(std::iter::repeat_n(3, 40));
    let t = table(&counts);
    let one = make_split(&t, SplitKind::OneMutShuffle, 5, None, &[]).unwrap();
    assert_eq!(one.validation_indices.len(), 10);
    assert!(one.validation_indices.iter().all(|&i| counts[i] == 1));
    let uni = make_split(&t, SplitKind::UniformShuffle, 5, None, &[]).unwrap();
    assert_eq!(uni.validation_indices.len(), 24);
    let test: Vec<usize> = (100..120).collect();
    let hold = make_split(&t, SplitKind::Holdout, 5, None, &test).unwrap();
    assert_eq!(hold.test_indices, test);
    assert_eq!(hold.train_indices.len(), 100);

    let few = table(&[1, 1, 2, 2, 2]);
    assert!(make_split(&few, SplitKind::OneMutShuffle, 0, None, &[]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn splits_are_disjoint_and_cover(
        counts in prop::collection::vec(1u32..4, 30..80),
        seed in any::<u64>(),
        uniform in any::<bool>(),
        n_test in 0usize..8,
    ) {
        let t = table(&counts);
        let test: Vec<usize> = (0..n_test).map(|i| i * 3).collect();
        let kind = if uniform { SplitKind::UniformShuffle } else { SplitKind::OneMutShuffle };
        let singles = counts.iter().enumerate().filter(|(i, &c)| c == 1 && !test.contains(i)).count();
        let val = if uniform { 5 } else { 3 };
        match make_split(&t, kind, seed, Some(val), &test) {
            Ok(s) => {
                let mut all: Vec<usize> = s.train_indices.iter()
                    .chain(&s.validation_indices)
                    .chain(&s.test_indices)
                    .copied()
                    .collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..counts.len()).collect::<Vec<_>>());
                prop_assert_eq!(s.validation_indices.len(), val);
                prop_assert_eq!(make_split(&t, kind, seed, Some(val), &test).unwrap(), s);
            }
            Err(_) => prop_assert!(!uniform && singles <= val),
        }
    }
}

fn small_data(spec: &SyntheticSpec, seed: u64) -> BenchData {
    let d = generate(spec, seed).unwrap();
    BenchData::new(d.tensor, d.targets, d.meta.test_indices.clone())
        .unwrap()
        .with_support(d.meta.support.clone())
}

fn quick() -> TrainConfig {
    TrainConfig { max_iters: 120, restarts: 1, ..TrainConfig::default() }
}

#[test]
fn trial_p_values_match_oracle_on_sparse_data() {
    let spec = SyntheticSpec { n_sequences: 80, test_size: 16, ..SyntheticSpec::default() };
    assert_eq!((spec.support_size, spec.n_positions), (5, 50));
    let data = small_data(&spec, 3);
    let methods: Vec<Method> = MaskVariant::ALL.iter().map(|&v| Method::new(v, 0.15)).collect();
    let report = run_trials(&data, SplitKind::UniformShuffle, &methods, 4, 10, Some(12), &quick()).unwrap();
    assert_eq!(report.effective_trials, 4);
    let base = report.maes("mean");
    for m in ["softmax", "sigmoid", "prior"] {
        let t = report.summary(m).unwrap().vs_baseline.unwrap();
        let o = oracle_p(&report.maes(m), &base);
        assert!((t.p_value - o).abs() < 1e-9, "{m}: {} vs {o}", t.p_value);
    }
    assert!(report.summary("mean").unwrap().vs_baseline.is_none());

    let again = run_trials(&data, SplitKind::UniformShuffle, &methods, 4, 10, Some(12), &quick()).unwrap();
    assert_eq!(report, again);
    assert_eq!(report.to_csv().lines().count(), 1 + 4 * 4);
}

#[test]
fn full_support_ties_with_mean_pooling() {
    let spec = SyntheticSpec {
        n_sequences: 120,
        n_positions: 6,
        n_dims: 4,
        support_size: 6,
        max_mutations: 3,
        test_size: 20,
        noise: NoiseLevel::Relative(0.1),
        ..SyntheticSpec::default()
    };
    let data = small_data(&spec, 1);
    let methods = [Method::new(MaskVariant::Mean, 0.15), Method::new(MaskVariant::Softmax, 0.15)];
    let cfg = TrainConfig { max_iters: 300, restarts: 1, ..TrainConfig::default() };
    let report = run_trials(&data, SplitKind::UniformShuffle, &methods, 8, 0, Some(24), &cfg).unwrap();
    let soft = report.summary("softmax").unwrap();
    let base = report.summary("mean").unwrap();
    let gap = (soft.mean_mae - base.mean_mae).abs();
    println!("softmax {:.4} ± {:.4}, mean {:.4} ± {:.4}", soft.mean_mae, soft.std_mae, base.mean_mae, base.std_mae);
    // A tie: the gap is inside the trial-to-trial spread of either method.
    assert!(gap <= base.std_mae.min(soft.std_mae), "gap {gap} exceeds trial spread");
}

#[test]
fn sweep_rows_and_argmin() {
    let spec = SyntheticSpec { n_sequences: 50, n_positions: 10, test_size: 10, ..SyntheticSpec::default() };
    let data = small_data(&spec, 2);
    let one = sweep_prior(&data, SplitKind::UniformShuffle, &[0.15], 2, 0, Some(8), &quick()).unwrap();
    assert_eq!(one.rows.len(), 1);
    assert_eq!(one.best_sigma, 0.15);

    let grid = sweep_prior(&data, SplitKind::UniformShuffle, &[0.05, 0.15, 0.5, 0.15], 2, 0, Some(8), &quick()).unwrap();
    assert_eq!(grid.rows.len(), 3);
    assert_eq!(grid.warnings.len(), 1);
    assert!(grid.rows.iter().any(|r| r.sigma == 0.15));
    let best = grid.rows.iter().min_by(|a, b| a.mean_mae.total_cmp(&b.mean_mae)).unwrap();
    assert_eq!(grid.best_sigma, best.sigma);
    assert_eq!(grid.to_csv().lines().count(), 4);

    assert!(sweep_prior(&data, SplitKind::UniformShuffle, &[], 2, 0, Some(8), &quick()).is_err());
}
