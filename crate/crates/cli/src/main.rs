//! Runs (agent x scenario x seed) experiment matrices and writes event logs,
//! per-run metric reports, plot series and a cross-run summary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use serde::{Deserialize, Serialize};

use rulesim::metrics::{summarize, SummaryRow};
use rulesim::{
    build_env, AgentConfig, AgentKind, EnvName, Error, InjectAt, NoveltyKind, NoveltySpec, RunResult, RunSpec,
};

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser, Debug)]
#[command(
    name = "rulesim",
    version,
    about = "Novelty adaptation experiments on symbolic grid worlds"
)]
struct Cli {
    /// doorkey | lavamaze | empty
    #[arg(long)]
    env: Option<String>,
    /// doorkeychange | lavaproof | lavahurts | none
    #[arg(long)]
    novelty: Option<String>,
    /// Injection point after pre-novelty convergence: N, steps:N or episodes:N
    #[arg(long)]
    novelty_at: Option<String>,
    /// Comma separated list of worldcloner, baseline
    #[arg(long, value_delimiter = ',')]
    agent: Option<Vec<String>>,
    /// Real share of the policy update stream, in (0, 1]
    #[arg(long)]
    mix_ratio: Option<f64>,
    #[arg(long)]
    seeds: Option<u64>,
    /// First seed; runs use seed_base, seed_base + 1, ...
    #[arg(long)]
    seed_base: Option<u64>,
    #[arg(long)]
    max_pre_steps: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with status 3 if any run fails to adapt
    #[arg(long)]
    strict: bool,
    /// Print the environment before and after the novelty
    #[arg(long)]
    render: bool,
    /// TOML file with defaults for every flag plus an [agent] table
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Resolved experiment settings. Also the TOML config file format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    env: String,
    novelty: String,
    novelty_at: String,
    agents: Vec<String>,
    seeds: u64,
    seed_base: u64,
    out: PathBuf,
    strict: bool,
    render: bool,
    agent: AgentConfig,
}

impl Default for FileConfig {
    fn default() -> Self {
        FileConfig {
            env: "doorkey".into(),
            novelty: "doorkeychange".into(),
            novelty_at: "0".into(),
            agents: vec!["worldcloner".into()],
            seeds: 1,
            seed_base: 0,
            out: PathBuf::from("results"),
            strict: false,
            render: false,
            agent: AgentConfig::default(),
        }
    }
}

struct Plan {
    cfg: FileConfig,
    env: EnvName,
    novelty: NoveltySpec,
    agents: Vec<AgentKind>,
}

fn resolve(cli: &Cli) -> Result<Plan, Error> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };
    if let Some(v) = &cli.env {
        cfg.env = v.clone();
    }
    if let Some(v) = &cli.novelty {
        cfg.novelty = v.clone();
    }
    if let Some(v) = &cli.novelty_at {
        cfg.novelty_at = v.clone();
    }
    if let Some(v) = &cli.agent {
        cfg.agents = v.clone();
    }
    if let Some(v) = cli.seeds {
        cfg.seeds = v;
    }
    if let Some(v) = cli.seed_base {
        cfg.seed_base = v;
    }
    if let Some(v) = cli.max_pre_steps {
        cfg.agent.max_pre_steps = v;
    }
    if let Some(v) = &cli.out {
        cfg.out = v.clone();
    }
    cfg.strict |= cli.strict;
    cfg.render |= cli.render;

    let env: EnvName = cfg.env.parse()?;
    let kind: NoveltyKind = cfg.novelty.parse()?;
    let inject_at: InjectAt = cfg.novelty_at.parse()?;
    let agents = cfg
        .agents
        .iter()
        .map(|a| a.parse())
        .collect::<Result<Vec<AgentKind>, _>>()?;
    if agents.is_empty() {
        return Err(Error::Config("no agent selected".into()));
    }
    if cfg.seeds == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    if let Some(r) = cli.mix_ratio {
        if agents.contains(&AgentKind::Baseline) {
            return Err(Error::Config("--mix-ratio does not apply to the baseline agent".into()));
        }
        cfg.agent.real_fraction = r;
    }
    cfg.agent.validate()?;
    let novelty = NoveltySpec::new(kind, inject_at);
    // Surfaces incompatible env/novelty pairs before any run starts.
    build_env(env, novelty, 0)?;
    Ok(Plan {
        cfg,
        env,
        novelty,
        agents,
    })
}

fn run_name(spec: &RunSpec) -> String {
    format!(
        "{}-{}-{}-seed{}",
        spec.env.cli_name(),
        spec.novelty.kind.cli_name(),
        spec.agent,
        spec.seed
    )
}

#[derive(Serialize)]
struct RunFile<'a> {
    schema_version: u32,
    env: &'a str,
    novelty: &'a str,
    novelty_at: String,
    agent: AgentKind,
    seed: u64,
    config: &'a AgentConfig,
    #[serde(flatten)]
    result: &'a RunResult,
}

#[derive(Serialize)]
struct SummaryEntry {
    env: String,
    novelty: String,
    agent: AgentKind,
    #[serde(flatten)]
    row: SummaryRow,
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    schema_version: u32,
    config: &'a FileConfig,
    rows: Vec<SummaryEntry>,
    errors: Vec<String>,
}

fn write_run(dir: &Path, spec: &RunSpec, result: &RunResult) -> Result<(), Error> {
    let name = run_name(spec);
    let file = RunFile {
        schema_version: SCHEMA_VERSION,
        env: spec.env.cli_name(),
        novelty: spec.novelty.kind.cli_name(),
        novelty_at: spec.novelty.inject_at.to_string(),
        agent: spec.agent,
        seed: spec.seed,
        config: &spec.config,
        result,
    };
    fs::write(
        dir.join(format!("{name}.metrics.json")),
        serde_json::to_string_pretty(&file)?,
    )?;

    let mut curve = format!(
        "# schema_version={SCHEMA_VERSION}\n# config={}\nstep,ma_return\n",
        serde_json::to_string(&spec.config)?
    );
    for (step, ma) in result.curve(spec.config.metrics.ma_window) {
        curve.push_str(&format!("{step},{ma}\n"));
    }
    fs::write(dir.join(format!("{name}.curve.csv")), curve)?;
    Ok(())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or("-".into(), |v| format!("{v:.4}"))
}

fn render(plan: &Plan) -> Result<(), Error> {
    let now = NoveltySpec::new(plan.novelty.kind, InjectAt::Steps(0));
    let mut env = build_env(plan.env, now, plan.cfg.seed_base)?;
    println!("{}", env.render());
    if plan.novelty.kind != NoveltyKind::None {
        env.inject_novelty()?;
        env.reset();
        println!("after {}:\n{}", plan.novelty.kind.cli_name(), env.render());
    }
    Ok(())
}

fn execute(plan: Plan) -> Result<ExitCode, Error> {
    let dir = &plan.cfg.out;
    fs::create_dir_all(dir)?;
    if plan.cfg.render {
        render(&plan)?;
    }
    let mut specs = Vec::new();
    for &agent in &plan.agents {
        for i in 0..plan.cfg.seeds {
            let mut spec = RunSpec {
                env: plan.env,
                novelty: plan.novelty,
                agent,
                seed: plan.cfg.seed_base + i,
                config: plan.cfg.agent.clone(),
                events: None,
            };
            spec.events = Some(dir.join(format!("{}.events.csv", run_name(&spec))));
            specs.push(spec);
        }
    }
    let results = rulesim::adapt::run_matrix(&specs);

    let mut errors = Vec::new();
    let mut rows = Vec::new();
    let mut any_failed = false;
    for &agent in &plan.agents {
        let mut reports = Vec::new();
        for (spec, res) in specs.iter().zip(&results).filter(|(s, _)| s.agent == agent) {
            match res {
                Ok(r) => {
                    write_run(dir, spec, r)?;
                    any_failed |= r.report.failed_to_adapt;
                    reports.push(r.report.clone());
                }
                Err(e) => {
                    eprintln!("{}: {e}", run_name(spec));
                    errors.push(format!("{}: {e}", run_name(spec)));
                }
            }
        }
        rows.push(SummaryEntry {
            env: plan.env.cli_name().into(),
            novelty: plan.novelty.kind.cli_name().into(),
            agent,
            row: summarize(&reports),
        });
    }

    println!(
        "{:<12} {:>4} {:>6} {:>10} {:>10} {:>10} {:>14} {:>14}",
        "agent", "runs", "failed", "pre", "asymptote", "random", "eff_steps", "eff_updates"
    );
    for e in &rows {
        println!(
            "{:<12} {:>4} {:>6} {:>10} {:>10} {:>10} {:>14} {:>14}",
            e.agent.cli_name(),
            e.row.runs,
            e.row.failed_to_adapt,
            fmt_opt(e.row.pre_novelty_performance),
            fmt_opt(e.row.asymptotic_adaptive_performance),
            fmt_opt(e.row.random_baseline_performance),
            fmt_opt(e.row.adaptive_efficiency_steps),
            fmt_opt(e.row.update_efficiency_updates),
        );
    }
    let summary = SummaryFile {
        schema_version: SCHEMA_VERSION,
        config: &plan.cfg,
        rows,
        errors: errors.clone(),
    };
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;

    if !errors.is_empty() {
        return Ok(ExitCode::from(1));
    }
    if plan.cfg.strict && any_failed {
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let plan = match resolve(&cli) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match execute(plan) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
