use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use reflexgrasp::descent::{run_table1, summarize_rows, Table1Config, Table1Row};
use reflexgrasp::kinematics::RobotModel;
use reflexgrasp::sim::{run_scenario, write_trace, ObjectKind, ScenarioConfig, Variant};
use reflexgrasp::stability::Method;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::accept::{run_acceptance, AcceptOptions};
use crate::campaign::{run_campaign, write_rows, CampaignConfig, CampaignRow};
use crate::error::{CliError, EXIT_ACCEPT_FAILED, EXIT_OK};

#[derive(Debug, Parser)]
#[command(name = "reflexgrasp", version, about = "Grasp stability experiments and reflexive grasping simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compare descent methods on random shapes.
    Table1(Table1Args),
    /// Run a grasping campaign with vanilla and reflexive variants.
    Sim(SimArgs),
    /// Run the acceptance suite.
    Accept(AcceptArgs),
    /// Run one grasping scenario and write its trace.
    Trace(TraceArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Pgd,
    Cfgd,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Pgd => Method::Pgd,
            MethodArg::Cfgd => Method::Cfgd,
        }
    }
}

#[derive(Debug, Args)]
pub struct Table1Args {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "out/table1")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "out/sim")]
    pub out: PathBuf,
    /// Replaces the configured seed list with this single seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Runs only this reflex method next to the vanilla baseline.
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Robot description JSON; the bundled model when absent.
    #[arg(long)]
    pub robot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AcceptArgs {
    #[arg(long, default_value = "out/accept")]
    pub out: PathBuf,
    /// Criterion name, group or number.
    #[arg(long)]
    pub filter: Option<String>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub robot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "out/trace")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long)]
    pub robot: Option<PathBuf>,
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Table1(a) => with_threads(a.threads, || cmd_table1(&a)),
        Command::Sim(a) => with_threads(a.threads, || cmd_sim(&a)),
        Command::Accept(a) => with_threads(a.threads, || cmd_accept(&a)),
        Command::Trace(a) => cmd_trace(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn with_threads(threads: Option<usize>, f: impl FnOnce() -> Result<i32, CliError> + Send) -> Result<i32, CliError> {
    match threads {
        None => f(),
        Some(0) => Err(CliError::Config("--threads: must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Runtime(e.to_string()))?
            .install(f),
    }
}

pub fn load_json<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn load_robot(path: Option<&Path>) -> Result<RobotModel, CliError> {
    match path {
        None => Ok(RobotModel::builtin()),
        Some(p) => RobotModel::from_file(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display()))),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::io(path, e))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub const TABLE1_TRIALS_CSV: &str = "table1_trials.csv";
pub const TABLE1_SUMMARY_JSON: &str = "table1_summary.json";
pub const RUNS_CSV: &str = "runs.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const TRACES_DIR: &str = "traces";

/// Per-trial CSV and per-family rates. Families run one at a time so a
/// failure leaves the finished families on disk.
pub fn cmd_table1(args: &Table1Args) -> Result<i32, CliError> {
    let mut cfg: Table1Config = load_json(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = args.trials {
        cfg.trials = trials;
    }
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let mut rows: Vec<Table1Row> = Vec::new();
    let mut failure = None;
    for family in cfg.families.clone() {
        let one = Table1Config {
            families: vec![family],
            ..cfg.clone()
        };
        match run_table1(&one) {
            Ok(report) => rows.extend(report.rows()),
            Err(e) => {
                failure = Some(format!("{}: {e}", family.as_str()));
                break;
            }
        }
    }
    write_csv_rows(&args.out.join(TABLE1_TRIALS_CSV), &rows)?;
    let summary = summarize_rows(&rows, cfg.seed);
    write_json(&args.out.join(TABLE1_SUMMARY_JSON), &summary)?;
    if let Some(e) = failure {
        return Err(CliError::Runtime(e));
    }
    for f in &summary.families {
        println!(
            "{:<12} trials {:>4}  pgd {:>6.1}%  cfgd {:>6.1}%",
            f.family.as_str(),
            f.trials,
            100.0 * f.pgd_rate,
            100.0 * f.cfgd_rate
        );
    }
    Ok(EXIT_OK)
}

fn trace_name(row: &CampaignRow) -> String {
    format!("{:04}_{}_{}.csv", row.scenario, row.object.as_str(), row.variant)
}

pub fn load_campaign(args: &SimArgs) -> Result<CampaignConfig, CliError> {
    let mut cfg: CampaignConfig = load_json(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(m) = args.method {
        cfg.methods = vec![m.into()];
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs the campaign, then writes traces, the row CSV and the summary from
/// this thread.
pub fn cmd_sim(args: &SimArgs) -> Result<i32, CliError> {
    let cfg = load_campaign(args)?;
    let model = load_robot(args.robot.as_deref())?;
    let output = run_campaign(&cfg, &model)?;
    let traces = args.out.join(TRACES_DIR);
    for run in &output.runs {
        let path = traces.join(trace_name(&run.row));
        let mut w = create(&path)?;
        write_trace(&run.result.trace, &mut w).map_err(|e| CliError::io(&path, e))?;
        w.flush().map_err(|e| CliError::io(&path, e))?;
    }
    let rows: Vec<CampaignRow> = output.runs.iter().map(|r| r.row.clone()).collect();
    let path = args.out.join(RUNS_CSV);
    let mut w = create(&path)?;
    write_rows(&rows, &mut w).map_err(|e| CliError::io(&path, e))?;
    write_json(&args.out.join(SUMMARY_JSON), &output.summary)?;
    if let Some(e) = output.failure {
        return Err(CliError::Runtime(e));
    }
    for v in &output.summary.variants {
        let mean = v.final_angle_deg.as_ref().map_or(f64::NAN, |s| s.mean);
        println!(
            "{:<8} runs {:>4}  stable {:>4}  mean final angle {:>6.2} deg",
            v.variant, v.runs, v.stable, mean
        );
    }
    Ok(EXIT_OK)
}

/// Default single scenario: a yawed box.
fn default_scenario() -> ScenarioConfig {
    ScenarioConfig::new(ObjectKind::Box, 0.03, 15f64.to_radians(), 0)
}

pub fn cmd_trace(args: &TraceArgs) -> Result<i32, CliError> {
    let mut cfg = match &args.config {
        None => default_scenario(),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(m) = args.method {
        cfg.controller.method = m.into();
        cfg.variant = Variant::Reflex;
    }
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let model = load_robot(args.robot.as_deref())?;
    let r = run_scenario(&cfg, &model).map_err(|e| CliError::Runtime(e.to_string()))?;
    let path = args.out.join("trace.csv");
    let mut w = create(&path)?;
    write_trace(&r.trace, &mut w).map_err(|e| CliError::io(&path, e))?;
    w.flush().map_err(|e| CliError::io(&path, e))?;
    let report = serde_json::json!({
        "schema": 1,
        "outcome": r.outcome,
        "final_angle_deg": r.final_eval.map(|e| e.mean_angle_deg),
        "reach_time_s": r.reach_time,
        "grasp_time_s": r.grasp_time,
        "grasp_ticks": r.grasp_ticks,
        "transitions": r.transitions,
        "max_penetration": r.max_penetration,
        "stats": r.stats,
        "error": r.error,
    });
    write_json(&args.out.join("result.json"), &report)?;
    println!(
        "{} after {:.3} s, final mean angle {}",
        r.outcome.as_str(),
        r.grasp_time,
        r.final_eval.map_or("n/a".into(), |e| format!("{:.2} deg", e.mean_angle_deg))
    );
    Ok(EXIT_OK)
}

pub fn cmd_accept(args: &AcceptArgs) -> Result<i32, CliError> {
    let model = load_robot(args.robot.as_deref())?;
    let opts = AcceptOptions {
        out: args.out.clone(),
        filter: args.filter.clone(),
    };
    let report = run_acceptance(&opts, &model)?;
    for c in &report.criteria {
        println!("{}", c.line());
    }
    write_json(&args.out.join("acceptance.json"), &report)?;
    Ok(if report.passed { EXIT_OK } else { EXIT_ACCEPT_FAILED })
}
