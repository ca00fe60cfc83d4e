//! `hydro-adp`: scenario generation, training, evaluation and the experiment
//! reports from the command line.
//!
//! Exit status is 0 on success, 1 for configuration and input errors and 2
//! when a stage LP is infeasible or the solver fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};
use hydro_adp::adp::{evaluate_online, train_offline, TrainConfig, ValueApproximation};
use hydro_adp::analysis::{
    compare_cases, deterministic_crosscheck, emit_report, run_experiment, sweep, wait_and_see, write_evaluation_csv,
    write_trace_csv, write_trajectories_csv, CaseLabel, ReportRow, RunReport,
};
use hydro_adp::model::ReservoirSystem;
use hydro_adp::scenario::{
    load_scenarios, save_scenarios, simulate, substream_seed, ScenarioModel, ScenarioRole, ScenarioSet,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    Generate,
    Train,
    Evaluate,
    Waitandsee,
    Detcheck,
    CompareEi,
    Sweep,
}

#[derive(Debug, Parser)]
#[command(name = "hydro-adp", version, about = "Post-decision ADP for connected hydro reservoirs")]
struct Cli {
    /// Reservoir system JSON.
    #[arg(long)]
    system: PathBuf,
    #[arg(long, value_enum)]
    command: Command,
    #[arg(long, default_value_t = 48)]
    horizon: usize,
    #[arg(long, default_value_t = 1000)]
    n_train: usize,
    #[arg(long, default_value_t = 1000)]
    n_test: usize,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 100.0)]
    alpha_damping: f64,
    /// Finite-difference step in 10^3 m^3.
    #[arg(long, default_value_t = 1.0)]
    fd_step: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Drop the inflow term b (case E).
    #[arg(long)]
    exclude_inflow_term: bool,
    #[arg(long, env = "HYDRO_ADP_OUT", default_value = "hydro-adp-out")]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    k_last: usize,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Training-sample counts for `sweep`.
    #[arg(long, value_delimiter = ',', default_values_t = [200, 1000, 2000, 3000, 4000, 5000])]
    sweep_counts: Vec<usize>,
    /// Paths for `detcheck`.
    #[arg(long, default_value_t = 10)]
    det_paths: usize,
    /// Training iterations per path for `detcheck`.
    #[arg(long, default_value_t = 200)]
    det_iterations: usize,
}

struct Run {
    cli: Cli,
    system: ReservoirSystem,
    model: ScenarioModel,
}

impl Run {
    fn train_config(&self, n_samples: usize) -> TrainConfig {
        TrainConfig {
            n_samples,
            alpha_initial: self.cli.alpha,
            alpha_damping: self.cli.alpha_damping,
            fd_step: self.cli.fd_step,
            include_inflow_term: !self.cli.exclude_inflow_term,
            seed: substream_seed(self.cli.seed, "training-order"),
        }
    }

    fn meta(&self) -> Vec<(&'static str, String)> {
        vec![
            ("command", format!("{:?}", self.cli.command).to_lowercase()),
            ("seed", self.cli.seed.to_string()),
            ("scenario_train_seed", substream_seed(self.cli.seed, "scenario-train").to_string()),
            ("scenario_test_seed", substream_seed(self.cli.seed, "scenario-test").to_string()),
            ("training_order_seed", substream_seed(self.cli.seed, "training-order").to_string()),
            ("system", self.system.fingerprint()),
        ]
    }

    fn path(&self, name: &str) -> PathBuf {
        self.cli.out.join(name)
    }

    /// Loads the scenario file if a previous run wrote a matching one,
    /// otherwise simulates it from the seed and writes it.
    fn scenarios(&self, role: ScenarioRole, n: usize) -> Result<ScenarioSet> {
        let (file, stream) = match role {
            ScenarioRole::Training => ("training.csv", "scenario-train"),
            ScenarioRole::Test => ("test.csv", "scenario-test"),
        };
        let seed = substream_seed(self.cli.seed, stream);
        let path = self.path(file);
        if path.exists() {
            let mut set = load_scenarios(&path)?;
            if set.seed == seed
                && set.role == role
                && set.horizon == self.cli.horizon
                && set.n_samples >= n
                && set.n_reservoirs == self.system.n_reservoirs()
            {
                set.attach_terminal_forecasts(&self.model.price);
                return Ok(set.take(n)?);
            }
        }
        let set = simulate(&self.model, self.cli.horizon, n, seed, role)?;
        save_scenarios(&set, &path)?;
        Ok(set)
    }
}

fn run(cli: Cli) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build_global()
        .context("configuring the thread pool")?;
    let system = ReservoirSystem::load(&cli.system)?;
    let model = ScenarioModel::shipped_for(&system)?;
    fs::create_dir_all(&cli.out).map_err(|e| hydro_adp::Error::Io {
        path: cli.out.clone(),
        source: e,
    })?;
    let r = Run { cli, system, model };
    r.train_config(1).validate()?;
    let meta = r.meta();
    let (n_train, n_test) = (r.cli.n_train, r.cli.n_test);

    match r.cli.command {
        Command::Generate => {
            r.scenarios(ScenarioRole::Training, n_train)?;
            r.scenarios(ScenarioRole::Test, n_test)?;
            println!("wrote {} and {}", r.path("training.csv").display(), r.path("test.csv").display());
        }
        Command::Train => {
            let training = r.scenarios(ScenarioRole::Training, n_train)?;
            let (approx, trace) = train_offline(&r.system, &training, &r.train_config(n_train))?;
            approx.save(r.path("approximation.json"))?;
            write_trace_csv(&trace, r.path("trace.csv"), &meta)?;
            println!("trained {} iterations; final V0 = {:.4}", trace.len(), trace.v0.last().copied().unwrap_or(0.0));
        }
        Command::Evaluate => {
            let ap_path = r.path("approximation.json");
            if !ap_path.exists() {
                anyhow::bail!(hydro_adp::Error::Config(format!(
                    "{} not found; run `--command train` first",
                    ap_path.display()
                )));
            }
            let approx = ValueApproximation::load(&ap_path)?;
            let training = r.scenarios(ScenarioRole::Training, n_train)?;
            let test = r.scenarios(ScenarioRole::Test, n_test)?;
            let ins = evaluate_online(&r.system, &approx, &training)?;
            let out = evaluate_online(&r.system, &approx, &test)?;
            write_evaluation_csv(&out, None, r.path("evaluation.csv"), &meta)?;
            write_trajectories_csv(&r.system, &out, &test, r.path("trajectories.csv"), &meta)?;
            let cfg = approx.config.clone().unwrap_or_else(|| r.train_config(n_train));
            let mut row = ReportRow::new(cfg.n_samples, CaseLabel::of(&cfg));
            row.in_sample = Some(ins.mean_v0);
            row.out_sample = Some(out.mean_v0);
            row.derive();
            emit_report(&RunReport { rows: vec![row.clone()] }, r.path("evaluate_report.csv"), &meta)?;
            println!(
                "in-sample {:.4}, out-of-sample {:.4}, diff {:.4}%, realized {:.4}",
                ins.mean_v0,
                out.mean_v0,
                row.diff_pct.unwrap_or(0.0),
                out.mean_realized
            );
        }
        Command::Waitandsee => {
            let test = r.scenarios(ScenarioRole::Test, n_test)?;
            let ws = wait_and_see(&r.system, &test)?;
            let mut row = ReportRow::new(0, CaseLabel::of(&r.train_config(1)));
            row.ws_mean = Some(ws.mean);
            emit_report(&RunReport { rows: vec![row] }, r.path("waitandsee_report.csv"), &meta)?;
            let per_sample = ws
                .per_sample
                .iter()
                .enumerate()
                .map(|(s, v)| format!("{s},{v:.16e}\n"))
                .collect::<String>();
            write_text(&r.path("waitandsee.csv"), &format!("{}sample,ws\n{per_sample}", meta_line(&meta)))?;
            println!("wait-and-see mean {:.4}", ws.mean);
        }
        Command::Detcheck => {
            let paths = r.scenarios(ScenarioRole::Training, r.cli.det_paths.max(1))?;
            let cc = deterministic_crosscheck(&r.system, &paths, r.cli.det_iterations, &r.train_config(1))?;
            let mut text = format!("{}path,adp,lp,gap\n", meta_line(&meta));
            for s in 0..cc.gaps.len() {
                text.push_str(&format!("{s},{:.16e},{:.16e},{:.16e}\n", cc.adp[s], cc.lp[s], cc.gaps[s]));
            }
            write_text(&r.path("detcheck.csv"), &text)?;
            println!("mean |gap| {:.4}%", cc.mean_abs_gap * 100.0);
        }
        Command::CompareEi => {
            let training = r.scenarios(ScenarioRole::Training, n_train)?;
            let test = r.scenarios(ScenarioRole::Test, n_test)?;
            let cmp = compare_cases(&r.system, &training, &test, &r.train_config(n_train), r.cli.k_last, None)?;
            let report = RunReport {
                rows: vec![cmp.excluded.row.clone(), cmp.included.row.clone()],
            };
            emit_report(&report, r.path("compare_ei_report.csv"), &meta)?;
            println!(
                "case E {:.4}, case I {:.4}, improvement {:.4}%",
                cmp.excluded.out_sample.mean_v0, cmp.included.out_sample.mean_v0, cmp.improvement_pct
            );
        }
        Command::Sweep => {
            let max = r.cli.sweep_counts.iter().copied().max().unwrap_or(1).max(n_train);
            let training = r.scenarios(ScenarioRole::Training, max)?;
            let test = r.scenarios(ScenarioRole::Test, n_test)?;
            let ws = wait_and_see(&r.system, &test)?;
            let report = sweep(
                &r.system,
                &training,
                &test,
                &r.cli.sweep_counts,
                &r.train_config(n_train),
                r.cli.k_last,
                Some(&ws),
            )?;
            emit_report(&report, r.path("sweep_report.csv"), &meta)?;
            // Also keep the largest point's trace for convergence plots.
            if let Some(&last) = r.cli.sweep_counts.last() {
                let subset = training.take(last.min(training.n_samples))?;
                let run = run_experiment(&r.system, &subset, &test, &r.train_config(last), r.cli.k_last, Some(&ws))?;
                write_trace_csv(&run.trace, r.path("sweep_trace.csv"), &meta)?;
            }
            println!("wrote {} sweep points", report.rows.len());
        }
    }
    Ok(())
}

fn meta_line(meta: &[(&str, String)]) -> String {
    let parts: Vec<String> = meta.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("# {}\n", parts.join(" "))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| hydro_adp::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<hydro_adp::Error>() {
        Some(e) if e.is_numerical() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
