mod common;

use gazeloop::harness::{population_seed, run_population, run_tuning, ExperimentConfig, PolicyMode};
use gazeloop::judgment::{expected_accuracy, simulate_features, CalibrationEnv};
use statrs::distribution::{ContinuousCDF, StudentsT};

fn calibrated() -> ExperimentConfig {
    ExperimentConfig::case_study().calibrated().unwrap()
}

fn small(mut c: ExperimentConfig) -> ExperimentConfig {
    c.n_bo = 20;
    c.n_rp = 2;
    c.tune.stages = 4;
    c.tune.initial_stages = 2;
    c
}

#[test]
fn same_seed_same_report() {
    let c = small(calibrated());
    let a = run_tuning(&c).unwrap();
    let b = run_tuning(&c).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.kernel, b.kernel);
    let mut other = c.clone();
    other.seed += 1;
    assert_ne!(run_tuning(&other).unwrap().history, a.history);
}

#[test]
fn learned_policy_raises_mean_aal() {
    let c = calibrated();
    let learned = c.environment(&c.theta0, PolicyMode::Learned).unwrap();
    let fixed = c.environment(&c.theta0, PolicyMode::Fixed(c.baseline_aid)).unwrap();
    let diffs: Vec<f64> = (0..20)
        .map(|s| {
            let seed = population_seed(c.seed, 99, s);
            let l = run_population(&learned, 100, c.initial_state, seed).unwrap();
            let f = run_population(&fixed, 100, c.initial_state, seed).unwrap();
            l.mean_stage_aal() - f.mean_stage_aal()
        })
        .collect();
    let (m, sd) = common::mean_sd(&diffs);
    let t = StudentsT::new(0.0, 1.0, 19.0).unwrap().inverse_cdf(0.95);
    assert!(m - t * sd / 20f64.sqrt() > 0.0, "mean AAL gain {m} ± {sd}");
}

#[test]
fn highlight_schedule_is_judged_better() {
    let c = calibrated();
    let env = |aid| CalibrationEnv { dynamics: &c.dynamics, table: &c.scores, period: c.attention.period, aid };
    let highlight = c.dynamics.aid_by_name("aY").unwrap();
    let with = simulate_features(&env(highlight), 5000, 7).unwrap();
    let without = simulate_features(&env(c.baseline_aid), 5000, 7).unwrap();
    assert!(expected_accuracy(&c.judgment, &with) >= expected_accuracy(&c.judgment, &without));
}

#[test]
fn tuning_improves_on_the_first_stage() {
    let base = calibrated();
    let (mut first, mut last) = (0.0, 0.0);
    for seed in 0..5 {
        let mut c = base.clone();
        c.seed = seed;
        c.n_rp = 4;
        c.tune.stages = 12;
        c.tune.initial_stages = 4;
        let trace: Vec<f64> = run_tuning(&c).unwrap().history.iter().map(|h| h.incumbent.unwrap()).collect();
        assert!(trace.windows(2).all(|w| w[1] >= w[0]));
        first += trace[0];
        last += trace[trace.len() - 1];
    }
    assert!(last > first, "{last} vs {first}");
}

#[test]
fn accuracies_are_fractions() {
    let c = small(calibrated());
    let report = run_tuning(&c).unwrap();
    assert_eq!(report.history.len(), 4);
    for s in &report.stage_stats {
        assert!((0.0..=1.0).contains(&s.mean));
        assert!(s.variance >= 0.0);
    }
}
