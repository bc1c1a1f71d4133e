//! End-to-end acceptance checks. Runs as a plain binary so every criterion
//! prints its line whether it passes or not; exits non-zero if any fails.

mod common;

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use gazeloop::attention::{fit_scores, stage_reward, synth_pupil_trace, AnnealConfig, PupilModel, ScoreBounds};
use gazeloop::bayesopt::{
    expected_improvement, gp_posterior, tune, HyperBox, Kernel, Observation, Posterior, TuneConfig,
};
use gazeloop::fixtures::{case_study_dynamics, table_one};
use gazeloop::gaze::{simulate_session, step_semi_markov, BurrParams, SessionId};
use gazeloop::harness::{population_seed, run_population, ExperimentConfig, PolicyMode};
use gazeloop::policy::{q_update, record_visit};
use gazeloop::rng::stream;
use gazeloop::{LearningParams, QTable, ScoreTable, VisualAid, VisualState};
use rand::Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

const BASELINE_TARGET: f64 = 0.746;
const BASELINE_TOL: f64 = 0.02;
const BASELINE_SESSIONS: usize = 20_000;
const UPLIFT_MIN: f64 = 0.05;
const UPLIFT_SEEDS: u64 = 20;
const UPLIFT_EMAILS: usize = 100;
const FIXED_POINT_TOL: f64 = 1e-3;
const FIXED_POINT_UPDATES: u64 = 10_000;
const PATTERN_SEEDS: u64 = 20;
const PATTERN_MIN: usize = 18;
/// Emails run before the Q-table counts as converged.
const PATTERN_EMAILS: usize = 1_000;
const GP_DESIGNS: usize = 100;
const GP_TOL: f64 = 1e-8;
const GP_MIN_SEPARATION: f64 = 0.05;
const EI_TRIPLES: usize = 100;
const EI_DRAWS: usize = 1_000_000;
const EI_SE: f64 = 3.0;
const BO_OPTIMUM: f64 = 0.95;
const BO_TOL: f64 = 0.01;
const BO_STAGES: usize = 50;
const BO_INITIAL: usize = 10;
const BO_EARLY: usize = 5;
const BO_SEEDS: u64 = 20;
const BO_MIN: usize = 18;
const CAL_TRIPLES: usize = 1_000;
const CAL_REL_TOL: f64 = 1e-9;
const BURR_N: usize = 100_000;
const BURR_SEEDS: u64 = 20;
const BURR_MIN: usize = 19;
const BURR_MEAN: f64 = 18.7;
const BURR_MEAN_TOL: f64 = 0.02;
const KS_ALPHA: f64 = 0.01;
const CHI_N: usize = 100_000;
const CHI_ALPHA: f64 = 0.01;
const S5_SCORE: f64 = 21.05;
const S5_DECAY: f64 = 0.16;
const SCORE_TOL: f64 = 0.10;
const DECAY_TOL: f64 = 0.20;

struct Check {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Check {
    Check { pass, detail: detail.into() }
}

fn calibrated() -> &'static ExperimentConfig {
    static CONFIG: OnceLock<ExperimentConfig> = OnceLock::new();
    CONFIG.get_or_init(|| ExperimentConfig::case_study().calibrated().expect("case-study config calibrates"))
}

fn baseline_calibration() -> Check {
    let c = calibrated();
    let env = c.environment(&c.theta0, PolicyMode::Fixed(c.baseline_aid)).unwrap();
    // stage index far outside any tuning run, so the seed is unused elsewhere
    let p = run_population(&env, BASELINE_SESSIONS, c.initial_state, population_seed(c.seed, 1 << 40, 0)).unwrap();
    check(
        (p.accuracy - BASELINE_TARGET).abs() <= BASELINE_TOL,
        format!(
            "no-aid accuracy {:.4} (b0 = {:.4}), target {BASELINE_TARGET} ± {BASELINE_TOL}",
            p.accuracy, c.judgment.b0
        ),
    )
}

fn accuracy_uplift() -> Check {
    let c = calibrated();
    let learned = c.environment(&c.theta0, PolicyMode::Learned).unwrap();
    let fixed = c.environment(&c.theta0, PolicyMode::Fixed(c.baseline_aid)).unwrap();
    let diffs: Vec<f64> = (0..UPLIFT_SEEDS)
        .into_par_iter()
        .map(|s| {
            let seed = population_seed(c.seed, 1 << 41, s);
            let l = run_population(&learned, UPLIFT_EMAILS, c.initial_state, seed).unwrap();
            let f = run_population(&fixed, UPLIFT_EMAILS, c.initial_state, seed).unwrap();
            l.accuracy - f.accuracy
        })
        .collect();
    let (m, sd) = common::mean_sd(&diffs);
    let n = diffs.len() as f64;
    let t = StudentsT::new(0.0, 1.0, n - 1.0).unwrap().inverse_cdf(0.95);
    let lower = m - t * sd / n.sqrt();
    check(
        lower >= UPLIFT_MIN,
        format!(
            "mean uplift {:.2} pp, one-sided 95% lower bound {:.2} pp (need >= {:.0} pp)",
            100.0 * m,
            100.0 * lower,
            100.0 * UPLIFT_MIN
        ),
    )
}

fn q_fixed_point() -> Check {
    let params = LearningParams::default();
    let reward = 3.0;
    let target = reward / (1.0 - params.beta);
    let mut t = QTable::zeros(1, 1);
    for _ in 0..FIXED_POINT_UPDATES {
        record_visit(&mut t, 0, VisualAid(0));
        q_update(&mut t, 0, VisualAid(0), reward, 0, &params);
    }
    let err = (t.q[0][0] - target).abs();
    check(
        err <= FIXED_POINT_TOL,
        format!(
            "|q - r/(1-β)| = {err:.3e} after {FIXED_POINT_UPDATES} updates (β = {}, η0 = {})",
            params.beta, params.eta0
        ),
    )
}

fn highlight_dominates() -> Check {
    let c = calibrated();
    let env = c.environment(&c.theta0, PolicyMode::Learned).unwrap();
    let aid_y = c.dynamics.aid_by_name("aY").expect("fixture has aY");
    let aid_n = c.dynamics.aid_by_name("aN").expect("fixture has aN");
    let hits = (0..PATTERN_SEEDS)
        .into_par_iter()
        .filter(|&s| {
            let p = run_population(&env, PATTERN_EMAILS, c.initial_state, population_seed(c.seed, 1 << 42, s)).unwrap();
            (0..p.qtable.n_states()).all(|x| p.qtable.value(x, aid_y) > p.qtable.value(x, aid_n))
        })
        .count();
    check(
        hits >= PATTERN_MIN,
        format!("q(x, aY) > q(x, aN) for every x in {hits}/{PATTERN_SEEDS} seeds after {PATTERN_EMAILS} emails"),
    )
}

fn gp_matches_explicit_inverse() -> Check {
    let mut rng = stream(5, &[]);
    let mut worst: f64 = 0.0;
    for _ in 0..GP_DESIGNS {
        let dims = rng.random_range(1..=4);
        let n = rng.random_range(1..=8);
        let kernel = Kernel::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(0.5..2.0),
            (0..dims).map(|_| rng.random_range(5.0..50.0)).collect(),
        )
        .unwrap();
        // near-duplicate points make the explicit inverse itself inaccurate
        let mut points: Vec<Vec<f64>> = Vec::with_capacity(n);
        while points.len() < n {
            let p: Vec<f64> = (0..dims).map(|_| rng.random::<f64>()).collect();
            let dist = |q: &Vec<f64>| p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if points.iter().all(|q| dist(q) >= GP_MIN_SEPARATION) {
                points.push(p);
            }
        }
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let obs: Vec<Observation> =
            points.iter().zip(&values).map(|(p, &v)| Observation { theta: p.clone(), value: v }).collect();
        let post = Posterior::new(&kernel, &obs).unwrap();
        for _ in 0..5 {
            let x: Vec<f64> = (0..dims).map(|_| rng.random::<f64>()).collect();
            let (m, sd) = post.predict(&x);
            let (m2, sd2) = gp_posterior(&kernel, &obs, &x).unwrap();
            assert_eq!((m, sd), (m2, sd2));
            let (om, ov) = common::gp_explicit(
                kernel.mean,
                kernel.amplitude,
                &kernel.inv_lengthscales,
                post.jitter(),
                &points,
                &values,
                &x,
            );
            worst = worst.max((m - om).abs()).max((sd * sd - ov.max(0.0)).abs());
        }
    }
    check(worst <= GP_TOL, format!("max |Δ| over mean and variance {worst:.2e} on {GP_DESIGNS} designs"))
}

fn ei_matches_monte_carlo() -> Check {
    let results: Vec<(f64, bool)> = (0..EI_TRIPLES as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(6, &[i]);
            let mean = rng.random_range(-1.0..1.0);
            let sd = rng.random_range(0.01..1.0);
            let incumbent = mean + rng.random_range(-2.0..2.0) * sd;
            let ei = expected_improvement(mean, sd, incumbent);
            let (mc, se) = common::ei_monte_carlo(mean, sd, incumbent, EI_DRAWS, &mut rng);
            ((ei - mc).abs() / se.max(1e-300), ei >= 0.0)
        })
        .collect();
    let worst = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let nonneg = results.iter().all(|r| r.1);
    check(
        worst <= EI_SE && nonneg,
        format!("max |EI - MC| = {worst:.2} SE over {EI_TRIPLES} triples, EI >= 0: {nonneg}"),
    )
}

fn surrogate(bounds: &HyperBox, theta: &[f64]) -> f64 {
    let u = bounds.to_unit(theta);
    let peak = [0.35, 0.6];
    BO_OPTIMUM - 0.3 * u.iter().zip(peak).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
}

fn bo_efficiency() -> Check {
    let bounds = HyperBox::new(vec![1.0, 60.0], vec![33.0, 600.0]).unwrap();
    let config = TuneConfig { stages: BO_STAGES, initial_stages: BO_INITIAL, ..TuneConfig::default() };
    let traces: Vec<Vec<f64>> = (0..BO_SEEDS)
        .into_par_iter()
        .map(|s| {
            let r = tune(|t| Ok(surrogate(&bounds, t)), &bounds, config, &mut stream(7, &[s])).unwrap();
            r.incumbent_trace().into_iter().map(|v| v.expect("surrogate never fails")).collect()
        })
        .collect();
    let near = traces.iter().filter(|t| BO_OPTIMUM - t[BO_STAGES - 1] <= BO_TOL).count();
    let monotone = traces.iter().all(|t| t.windows(2).all(|w| w[1] >= w[0]));
    let avg = |k: usize| traces.iter().map(|t| t[k - 1]).sum::<f64>() / traces.len() as f64;
    let (start, early, end) = (avg(BO_INITIAL), avg(BO_INITIAL + BO_EARLY), avg(BO_STAGES));
    let share = if end > start { (early - start) / (end - start) } else { 1.0 };
    check(
        near >= BO_MIN && monotone && share >= 0.5,
        format!("within {BO_TOL} by stage {BO_STAGES} in {near}/{BO_SEEDS}, first {BO_EARLY} BO stages give {:.0}% of the mean improvement, monotone: {monotone}", 100.0 * share),
    )
}

fn cal_matches_quadrature() -> Check {
    let mut rng = stream(8, &[]);
    let mut worst: f64 = 0.0;
    for _ in 0..CAL_TRIPLES {
        let (r, a, t) = (rng.random_range(-30.0..30.0), rng.random_range(0.01..20.0), rng.random_range(0.0..20.0));
        let mut table = ScoreTable::new(1, vec![0.0; 3], vec![1.0; 3]).unwrap();
        table.set(VisualState::Aoi(1), r, a).unwrap();
        let closed = stage_reward(&table, VisualState::Aoi(1), t);
        let quad = common::adaptive_simpson(&|x| r * (-a * x).exp(), 0.0, t, 1e-14 * r.abs().max(1.0));
        if quad != 0.0 {
            worst = worst.max(((closed - quad) / quad).abs());
        } else {
            worst = worst.max(closed.abs());
        }
    }
    check(worst <= CAL_REL_TOL, format!("max relative error {worst:.2e} on {CAL_TRIPLES} triples"))
}

fn statistical_fidelity() -> Check {
    let burr = BurrParams::CASE_STUDY;
    let runs: Vec<(f64, f64)> = (0..BURR_SEEDS)
        .into_par_iter()
        .map(|s| {
            let mut rng = stream(9, &[s]);
            let mut xs: Vec<f64> = (0..BURR_N).map(|_| burr.sample(&mut rng)).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let d = common::ks_statistic(&mut xs, |t| burr.cdf(t));
            (common::ks_p_value(d, BURR_N), mean)
        })
        .collect();
    let ks_pass = runs.iter().filter(|r| r.0 > KS_ALPHA).count();
    let mean = runs.iter().map(|r| r.1).sum::<f64>() / runs.len() as f64;
    let mean_ok = ((mean - BURR_MEAN) / BURR_MEAN).abs() <= BURR_MEAN_TOL;

    let d = case_study_dynamics();
    let n = d.n_states();
    let rows: Vec<(usize, usize)> = (0..d.n_aids()).flat_map(|a| (0..n).map(move |i| (a, i))).collect();
    // family-wise level across all rows
    let per_row = CHI_ALPHA / rows.len() as f64;
    let p_values: Vec<f64> = rows
        .par_iter()
        .map(|&(a, i)| {
            let mut rng = stream(10, &[a as u64, i as u64]);
            let mut counts = vec![0u64; n];
            for _ in 0..CHI_N {
                let (next, _) = step_semi_markov(&d, d.state(i), VisualAid(a), &mut rng).unwrap();
                counts[next.index(d.n_aoi())] += 1;
            }
            common::chi_square_p_value(&counts, d.aid(VisualAid(a)).row(i))
        })
        .collect();
    let chi_pass = p_values.iter().filter(|&&p| p > per_row).count();
    let min_p = p_values.iter().cloned().fold(1.0, f64::min);
    check(
        ks_pass >= BURR_MIN && mean_ok && chi_pass == rows.len(),
        format!(
            "Burr KS p > {KS_ALPHA} in {ks_pass}/{BURR_SEEDS}; empirical mean {mean:.3} s vs {BURR_MEAN} ± {:.0}% ({}; analytic {:.3}); χ² rows {chi_pass}/{} (min p {min_p:.3})",
            100.0 * BURR_MEAN_TOL,
            if mean_ok { "ok" } else { "off" },
            burr.mean(),
            rows.len()
        ),
    )
}

fn score_fit_round_trip() -> Check {
    let d = case_study_dynamics();
    let truth = table_one();
    let period = 398.0 / 60.0;
    let mut rng = stream(11, &[]);
    let mut trajectories = Vec::new();
    let mut traces = Vec::new();
    for email in 0..20 {
        let horizon = d.sample_inspection_time(&mut rng);
        let traj =
            simulate_session(&d, |_| VisualAid(0), horizon, period, SessionId { user: 0, email }, &mut rng).unwrap();
        traces.push(synth_pupil_trace(&traj, &truth, period, PupilModel::default(), 0.0, &mut rng).unwrap());
        trajectories.push(traj);
    }
    let init = ScoreTable::new(13, vec![10.0; 15], vec![1.0; 15]).unwrap();
    let fit = fit_scores(
        &traces,
        &trajectories,
        period,
        PupilModel::default(),
        &init,
        AnnealConfig::default(),
        ScoreBounds::default(),
        &mut rng,
    )
    .unwrap();
    let s5 = VisualState::Aoi(5);
    let (r, a) = (fit.table.score(s5), fit.table.decay(s5));
    let (er, ea) = (((r - S5_SCORE) / S5_SCORE).abs(), ((a - S5_DECAY) / S5_DECAY).abs());
    check(
        er <= SCORE_TOL && ea <= DECAY_TOL,
        format!(
            "r(s5) = {r:.3} ({:.1}% off), α(s5) = {a:.4} ({:.1}% off), MSE {:.3e}",
            100.0 * er,
            100.0 * ea,
            fit.objective
        ),
    )
}

fn main() {
    type Criterion = (&'static str, Option<u64>, fn() -> Check);
    let criteria: [Criterion; 10] = [
        ("baseline calibration", Some(30), baseline_calibration),
        ("accuracy uplift", Some(120), accuracy_uplift),
        ("Q-learning fixed point", Some(1), q_fixed_point),
        ("highlight dominates in both states", None, highlight_dominates),
        ("GP posterior vs explicit inverse", Some(5), gp_matches_explicit_inverse),
        ("EI closed form vs Monte Carlo", Some(30), ei_matches_monte_carlo),
        ("BO efficiency on a surrogate", Some(120), bo_efficiency),
        ("CAL vs adaptive quadrature", Some(5), cal_matches_quadrature),
        ("statistical fidelity", None, statistical_fidelity),
        ("score-fitting round trip", Some(60), score_fit_round_trip),
    ];
    let mut failed = 0;
    for (i, (name, limit, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let c = f();
        let took = start.elapsed();
        let in_time = limit.is_none_or(|s| took <= Duration::from_secs(s));
        let pass = c.pass && in_time;
        if !pass {
            failed += 1;
        }
        let budget = limit.map_or(String::new(), |s| format!(" / {s} s"));
        println!(
            "criterion {:>2} {}: {name}: {} [{:.2} s{budget}]",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            c.detail,
            took.as_secs_f64()
        );
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
