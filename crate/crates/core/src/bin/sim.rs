use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use telesim::campaign::{
    golden_run, golden_tracking, read_records_dir, report, run_campaign, run_single, trace_file_name,
    CampaignConfig, CampaignError,
};
use telesim::injection::{default_library, load_scenario_library, ScenarioRecord};
use telesim::itp::{load_trajectory, TrajectoryShape};
use telesim::monitors::format_labels;
use telesim::session::SessionPhase;
use telesim::world::{SimConfig, Trajectory};

#[derive(Parser)]
#[command(name = "sim", version, about = "Surgical robot control-stack simulator and fault-injection campaigns")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the fault-free session and print its tracking summary.
    Golden {
        /// `circle`, `line` or a trajectory file.
        #[arg(long, default_value = "circle")]
        trajectory: String,
        /// Write the golden trace CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// JSON simulator configuration (defaults otherwise).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run one scenario once and print its record as JSON.
    Run {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        seed: u64,
        /// Write the run's trace CSV into `--out`.
        #[arg(long)]
        trace: bool,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Scenario library (the shipped one otherwise).
        #[arg(long)]
        library: Option<PathBuf>,
        #[arg(long, default_value = "circle")]
        trajectory: String,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run every scenario of a library and persist one record per run.
    Campaign {
        #[arg(long)]
        library: Option<PathBuf>,
        /// Runs per scenario, overriding library and default counts.
        #[arg(long)]
        runs: Option<u32>,
        #[arg(long)]
        out: PathBuf,
        /// Skip runs whose record already exists.
        #[arg(long)]
        resume: bool,
        #[arg(long, default_value_t = default_jobs())]
        jobs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "circle")]
        trajectory: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write a trace CSV per run.
        #[arg(long)]
        traces: bool,
    },
    /// Summarize a directory of run records.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// List scenario ids with their expected outcomes.
    Scenarios {
        #[arg(long)]
        library: Option<PathBuf>,
    },
    /// Parse a library file and report the first error.
    ValidateLibrary { file: PathBuf },
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

enum Failure {
    Data(String),
    Golden(String),
}

impl From<CampaignError> for Failure {
    fn from(e: CampaignError) -> Self {
        match e {
            CampaignError::GoldenFailed(_) => Failure::Golden(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

fn data<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Data(e.to_string())
}

fn load_config(path: Option<&Path>) -> Result<SimConfig, Failure> {
    match path {
        None => Ok(SimConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| data(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", p.display())))
        }
    }
}

fn load_traj(spec: &str, cfg: &SimConfig) -> Result<Trajectory, Failure> {
    match spec {
        "circle" => Trajectory::generated(TrajectoryShape::Circle, cfg).map_err(data),
        "line" => Trajectory::generated(TrajectoryShape::Line, cfg).map_err(data),
        path => Ok(Trajectory::from_samples(load_trajectory(path).map_err(data)?)),
    }
}

fn load_library(path: Option<&Path>) -> Result<Vec<ScenarioRecord>, Failure> {
    match path {
        None => Ok(default_library()),
        Some(p) => load_scenario_library(p).map_err(data),
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn run(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Golden { trajectory, out, config } => {
            let cfg = load_config(config.as_deref())?;
            let traj = load_traj(&trajectory, &cfg)?;
            let g = golden_run(&traj, &cfg)?;
            let (rms, max_err, max_step) = golden_tracking(&g, &traj, &cfg);
            println!("trajectory: {}", g.trajectory_id);
            println!("config digest: {}", g.digest);
            println!("homing complete at tick {}", g.homing_tick);
            println!("tracking rms {:.6} m, max {:.6} m", rms, max_err);
            println!("max per-tick displacement {:.6} m", max_step);
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(data)?;
                write_file(&dir.join("golden.trace.csv"), &g.trace.to_csv())?;
            }
            Ok(())
        }
        Cmd::Run {
            scenario,
            seed,
            trace,
            out,
            library,
            trajectory,
            config,
        } => {
            let cfg = load_config(config.as_deref())?;
            let traj = load_traj(&trajectory, &cfg)?;
            let lib = load_library(library.as_deref())?;
            let s = lib
                .iter()
                .find(|s| s.id == scenario)
                .ok_or_else(|| Failure::from(CampaignError::UnknownScenario(scenario.clone())))?;
            let r = run_single(s, 0, seed, &traj, &cfg, trace)?;
            if let Some(t) = &r.trace {
                std::fs::create_dir_all(&out).map_err(data)?;
                write_file(&out.join(trace_file_name(&s.id, 0)), &t.to_csv())?;
            }
            println!("{}", serde_json::to_string_pretty(&r.record).expect("record serializes"));
            Ok(())
        }
        Cmd::Campaign {
            library,
            runs,
            out,
            resume,
            jobs,
            seed,
            trajectory,
            config,
            traces,
        } => {
            if runs == Some(0) || jobs == 0 {
                return Err(data("--runs and --jobs must be at least 1"));
            }
            let sim = load_config(config.as_deref())?;
            let traj = load_traj(&trajectory, &sim)?;
            let cc = CampaignConfig {
                library: load_library(library.as_deref())?,
                runs,
                base_seed: seed,
                trajectory: traj,
                sim,
                out_dir: out,
                resume,
                jobs,
                write_traces: traces,
            };
            let summary = run_campaign(&cc)?;
            eprintln!("simulated {} runs, skipped {}", summary.simulated, summary.skipped);
            let th = &cc.sim.thresholds;
            let rep = report(&summary.records, th.jump_pos, th.small_jump)?;
            print!("{}", rep.to_text());
            Ok(())
        }
        Cmd::Report { input, csv } => {
            let records = read_records_dir(&input).map_err(data)?;
            let th = SimConfig::default().thresholds;
            let rep = report(&records, th.jump_pos, th.small_jump)?;
            print!("{}", rep.to_text());
            if let Some(p) = csv {
                write_file(&p, &rep.to_csv())?;
            }
            Ok(())
        }
        Cmd::Scenarios { library } => {
            for s in load_library(library.as_deref())? {
                let exp = |p| s.expected.get(&p).map_or_else(|| "-".to_string(), format_labels);
                println!(
                    "{:<24} homing={:<28} teleop={}",
                    s.id,
                    exp(SessionPhase::Homing),
                    exp(SessionPhase::Teleop)
                );
            }
            Ok(())
        }
        Cmd::ValidateLibrary { file } => {
            let lib = load_scenario_library(&file).map_err(data)?;
            println!("{}: {} scenarios", file.display(), lib.len());
            Ok(())
        }
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
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Golden(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
