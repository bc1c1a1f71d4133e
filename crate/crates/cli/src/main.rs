use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use gazeloop::attention::{
    cal_series, fit_scores, quantize, synth_pupil_trace, write_pupil_csv, AnnealConfig, PupilModel, ScoreBounds,
};
use gazeloop::bayesopt::tune::{posterior_grid, write_grid_csv, write_history_csv};
use gazeloop::bayesopt::{Observation, Posterior, TuneSummary};
use gazeloop::gaze::{simulate_session, write_trajectories_csv, SessionId};
use gazeloop::harness::{
    evaluate, population_seed, run_individual, run_population, run_tuning, PolicyMode, SAMPLE_RATE,
};
use gazeloop::judgment::write_records_csv;
use gazeloop::policy::write_learning_curve_csv;
use gazeloop::rng::{stream, SessionStreams};
use gazeloop::{ExperimentConfig, QTable, ScoreTable, VisualState};
use serde_json::json;

#[derive(Parser)]
#[command(name = "gazeloop", version, about = "Closed-loop visual-aid learning and Bayesian tuning on simulated gaze")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML); the built-in case study when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Populations averaged per evaluation (n_rp), overriding the config.
    #[arg(long, global = true)]
    repeats: Option<usize>,
    /// Emails per population (N_bo), overriding the config.
    #[arg(long, global = true)]
    emails: Option<usize>,
    /// Hyperparameters as a comma-separated list, overriding theta0.
    #[arg(long, global = true, value_delimiter = ',', allow_negative_numbers = true)]
    theta: Option<Vec<f64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one session and write its trajectory and CAL series.
    Simulate {
        /// Show this aid every stage instead of learning.
        #[arg(long)]
        aid: Option<String>,
    },
    /// Run one population and write the Q-learning curve.
    Learn {
        #[arg(long)]
        aid: Option<String>,
    },
    /// Tune theta with Bayesian optimization.
    Tune {
        /// Tuning stages L.
        #[arg(long)]
        stages: Option<usize>,
        /// Random initial stages L0.
        #[arg(long)]
        initial_stages: Option<usize>,
        /// Grid points per axis of the exported posterior surface.
        #[arg(long, default_value_t = 25)]
        grid: usize,
    },
    /// Fit concentration scores to synthetic pupil traces and compare with
    /// the generating table.
    FitScores {
        #[arg(long, default_value_t = 20)]
        sessions: usize,
        /// Gaussian noise added to the pupil diameters.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 10_000)]
        iterations: usize,
    },
    /// Accuracy at a fixed theta, averaged over the repeats.
    Eval {
        #[arg(long)]
        aid: Option<String>,
    },
}

/// A bad config or argument value; exits with status 2 like a clap error.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(e: impl fmt::Display) -> anyhow::Error {
    UsageError(e.to_string()).into()
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))?,
        None => ExperimentConfig::case_study(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(n) = common.repeats {
        config.n_rp = n;
    }
    if let Some(n) = common.emails {
        config.n_bo = n;
    }
    if let Some(theta) = &common.theta {
        config.theta0 = theta.clone();
    }
    config.validate().map_err(usage)?;
    Ok(config.calibrated()?)
}

fn policy(config: &ExperimentConfig, aid: Option<&str>) -> Result<PolicyMode> {
    match aid {
        None => Ok(PolicyMode::Learned),
        Some(name) => match config.dynamics.aid_by_name(name) {
            Some(a) => Ok(PolicyMode::Fixed(a)),
            None => Err(usage(format!("aid `{name}` is not in the library"))),
        },
    }
}

fn create(out: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = out.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
}

fn simulate(common: &Common, aid: Option<&str>) -> Result<()> {
    let config = load(common)?;
    let env = config.environment(&config.theta0, policy(&config, aid)?)?;
    let table = QTable::zeros(env.attention.n_states(), config.dynamics.n_aids());
    let session = SessionId::default();
    let mut streams = SessionStreams::new(config.seed, 0);
    let r = run_individual(&env, table, config.initial_state, 0, session, &mut streams)?;

    fs::create_dir_all(&common.out)?;
    write_trajectories_csv(create(&common.out, "trajectory.csv")?, std::slice::from_ref(&r.trajectory))?;
    let mut w = csv_writer(&common.out, "cal.csv")?;
    w.write_record(["time_s", "stage", "cal"])?;
    for slice in r.trajectory.stage_slices(env.attention.period) {
        for (t, v) in cal_series(&slice.pieces, &env.scores, slice.duration, 1.0 / SAMPLE_RATE)? {
            w.write_record([(slice.start + t).to_string(), slice.index.to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    let mut w = csv_writer(&common.out, "stages.csv")?;
    w.write_record(["stage", "aid", "aal", "x"])?;
    for (k, aid) in r.aids.iter().enumerate() {
        let (aal, x) = match r.stage_aal.get(k) {
            Some(&v) => (v.to_string(), quantize(v, &env.attention).to_string()),
            None => (String::new(), String::new()),
        };
        w.write_record([k.to_string(), config.dynamics.aid_name(*aid).to_string(), aal, x])?;
    }
    w.flush()?;
    println!(
        "session {session}: inspection {:.3} s, {} full stages, judgment {}",
        r.inspection_time,
        r.stages,
        r.z.as_str()
    );
    Ok(())
}

fn csv_writer(out: &Path, name: &str) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(out, name)?))
}

fn learn(common: &Common, aid: Option<&str>) -> Result<()> {
    let config = load(common)?;
    let env = config.environment(&config.theta0, policy(&config, aid)?)?;
    let p = run_population(&env, config.n_bo, config.initial_state, population_seed(config.seed, 0, 0))?;
    fs::create_dir_all(&common.out)?;
    write_learning_curve_csv(create(&common.out, "learning_curve.csv")?, &p.curve)?;
    write_records_csv(create(&common.out, "records.csv")?, &p.records, &config.theta_names())?;
    fs::write(common.out.join("qtable.json"), p.qtable.to_json()?)?;
    println!("accuracy {:.3} over {} emails, {} generation stages", p.accuracy, p.records.len(), p.total_stages);
    for x in 0..p.qtable.n_states() {
        let row: Vec<String> = (0..p.qtable.n_aids())
            .map(|a| format!("{} {:.3}", config.dynamics.aid_name(gazeloop::VisualAid(a)), p.qtable.q[x][a]))
            .collect();
        println!("x = {x}: {}", row.join(", "));
    }
    Ok(())
}

fn tune(common: &Common, stages: Option<usize>, initial: Option<usize>, grid: usize) -> Result<()> {
    let mut config = load(common)?;
    if let Some(l) = stages {
        config.tune.stages = l;
    }
    if let Some(l0) = initial {
        config.tune.initial_stages = l0;
    }
    config.validate().map_err(usage)?;
    let report = run_tuning(&config)?;
    let names = report.theta_names.clone();
    fs::create_dir_all(&common.out)?;
    write_history_csv(create(&common.out, "history.csv")?, &report.history, &names)?;
    let mut w = csv_writer(&common.out, "stage_stats.csv")?;
    w.write_record(["stage", "mean", "variance"])?;
    for s in &report.stage_stats {
        w.write_record([s.stage.to_string(), s.mean.to_string(), s.variance.to_string()])?;
    }
    w.flush()?;
    let summary = TuneSummary {
        theta_star: report.theta_star.clone(),
        c_star: report.c_star,
        stages: config.tune.stages,
        initial_stages: config.tune.initial_stages,
    };
    fs::write(common.out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    let meta = json!({
        "seed": report.seed,
        "kernel": report.kernel,
        "mle_warning": report.mle_warning,
        "judgment": { "b0": report.judgment.b0, "b1": report.judgment.b1, "b2": report.judgment.b2, "b3": report.judgment.b3 },
    });
    fs::write(common.out.join("run.json"), serde_json::to_string_pretty(&meta)?)?;
    if config.theta_box.dims() <= 3 {
        let obs: Vec<Observation> = report
            .history
            .iter()
            .filter_map(|h| h.value.map(|value| Observation { theta: h.theta.clone(), value }))
            .collect();
        let post = Posterior::new(&report.kernel, &obs)?;
        let surface = posterior_grid(&post, &config.theta_box, report.c_star, grid)?;
        write_grid_csv(create(&common.out, "posterior_grid.csv")?, &surface, &names)?;
    }
    let theta: Vec<String> = names.iter().zip(&report.theta_star).map(|(n, v)| format!("{n} = {v:.4}")).collect();
    println!("c* = {:.3} at {} after {} stages", report.c_star, theta.join(", "), report.history.len());
    if report.mle_warning {
        eprintln!("warning: kernel likelihood maximization did not improve on its initialization");
    }
    Ok(())
}

fn fit(common: &Common, sessions: usize, noise: f64, iterations: usize) -> Result<()> {
    if sessions == 0 {
        return Err(usage("need at least one session"));
    }
    let config = load(common)?;
    let period = config.attention.period;
    let truth = &config.scores;
    let mut rng = stream(config.seed, &[0x5C0E]);
    let mut trajectories = Vec::with_capacity(sessions);
    let mut traces = Vec::with_capacity(sessions);
    for email in 0..sessions {
        let horizon = config.dynamics.sample_inspection_time(&mut rng);
        let session = SessionId { user: 0, email: email as u32 };
        let traj = simulate_session(&config.dynamics, |_| config.baseline_aid, horizon, period, session, &mut rng)?;
        traces.push(synth_pupil_trace(&traj, truth, period, PupilModel::default(), noise, &mut rng)?);
        trajectories.push(traj);
    }
    let n = truth.n_aoi() + 2;
    let init = ScoreTable::new(truth.n_aoi(), vec![10.0; n], vec![1.0; n])?;
    let anneal = AnnealConfig { iterations, ..AnnealConfig::default() };
    let fit = fit_scores(
        &traces,
        &trajectories,
        period,
        PupilModel::default(),
        &init,
        anneal,
        ScoreBounds::default(),
        &mut rng,
    )?;

    fs::create_dir_all(common.out.join("pupil"))?;
    write_trajectories_csv(create(&common.out, "trajectories.csv")?, &trajectories)?;
    for (traj, trace) in trajectories.iter().zip(&traces) {
        write_pupil_csv(create(&common.out.join("pupil"), &format!("{}.csv", traj.session))?, trace)?;
    }
    fit.table.store(&common.out.join("scores_fit.toml"))?;
    let mut w = csv_writer(&common.out, "anneal.csv")?;
    w.write_record(["iteration", "objective"])?;
    for (i, v) in fit.incumbent_trace.iter().enumerate() {
        w.write_record([(i + 1).to_string(), v.to_string()])?;
    }
    w.flush()?;
    let mut w = csv_writer(&common.out, "comparison.csv")?;
    w.write_record(["state", "score_true", "score_fit", "decay_true", "decay_fit"])?;
    for s in VisualState::all(truth.n_aoi()) {
        w.write_record([
            s.to_string(),
            truth.score(s).to_string(),
            fit.table.score(s).to_string(),
            truth.decay(s).to_string(),
            fit.table.decay(s).to_string(),
        ])?;
    }
    w.flush()?;
    let s5 = VisualState::Aoi(gazeloop::gaze::MAIN_CONTENT_AOI);
    println!(
        "MSE {:.4e} -> {:.4e}; {s5}: score {:.3} (true {:.3}), decay {:.4} (true {:.4})",
        fit.initial_objective,
        fit.objective,
        fit.table.score(s5),
        truth.score(s5),
        fit.table.decay(s5),
        truth.decay(s5)
    );
    Ok(())
}

fn eval(common: &Common, aid: Option<&str>) -> Result<()> {
    let config = load(common)?;
    let mode = policy(&config, aid)?;
    let e = evaluate(&config, &config.theta0, mode, 0)?;
    fs::create_dir_all(&common.out)?;
    let record = json!({
        "theta_names": config.theta_names(),
        "theta": config.theta0,
        "mean": e.mean,
        "variance": e.variance,
        "repeats": e.repeats,
        "emails": config.n_bo,
        "seed": config.seed,
    });
    fs::write(common.out.join("eval.json"), serde_json::to_string_pretty(&record)?)?;
    println!("{:.3}", e.mean);
    Ok(())
}

fn run(cli: Cli, common: &Common) -> Result<()> {
    match cli.command {
        Command::Simulate { aid } => simulate(common, aid.as_deref()),
        Command::Learn { aid } => learn(common, aid.as_deref()),
        Command::Tune { stages, initial_stages, grid } => tune(common, stages, initial_stages, grid),
        Command::FitScores { sessions, noise, iterations } => fit(common, sessions, noise, iterations),
        Command::Eval { aid } => eval(common, aid.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = cli.common.clone();
    match run(cli, &common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if e.is::<UsageError>() { 2 } else { 1 })
        }
    }
}
