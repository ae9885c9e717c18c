//! Operator commands: search, deploy, bench and report.
//!
//! `main.rs` only parses arguments and maps [`run`] to a process exit code;
//! everything else lives here so the commands can be driven from tests.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use featsearch_core::agent::{
    run_rollout, LlmPolicy, LlmSettings, Policy, RolloutConfig, RolloutResult, ScriptedPolicy, StopReason,
};
use featsearch_core::clock::Clock;
use featsearch_core::learner::{FitOptions, ModelChoice};
use featsearch_core::relstore::{ContextHandle, TaskManifest};
use featsearch_core::select::{
    cross_rollout_select, deploy_champion, Champion, SelectError, TestReport, CHAMPION_FILE, TEST_REPORT_FILE,
    TEST_REPORT_TEXT_FILE,
};
use featsearch_core::synthbench::{
    gen_cooccurrence_task, gen_triangle_task, CooccurrenceSpec, GeneratedTask, TriangleSpec,
};

pub const RUN_SUMMARY_FILE: &str = "run_summary.json";
pub const CONFIG_ENV: &str = "FEATSEARCH_CONFIG";
pub const DEFAULT_API_KEY_ENV: &str = "FEATSEARCH_API_KEY";

pub const EXIT_OK: i32 = 0;
pub const EXIT_OPERATOR_ERROR: i32 = 1;
pub const EXIT_NO_CHAMPION: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "featsearch", version, about = "Search, validate and deploy SQL feature programs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run K search rollouts and select a champion.
    Search(SearchArgs),
    /// Refit a champion on train plus val and score the test split.
    Deploy(DeployArgs),
    /// Generate a synthetic benchmark task.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Render a run summary.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Task manifest (TOML).
    pub manifest: PathBuf,
    /// Number of independent rollouts.
    #[arg(short = 'k', long, default_value_t = 5)]
    pub rollouts: usize,
    /// `scripted:<path>` or `llm:<profile>`.
    #[arg(long)]
    pub policy: PolicySelector,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Replace artifacts of an earlier run in the output directory.
    #[arg(long)]
    pub overwrite: bool,
    /// Config file holding LLM profiles; defaults to $FEATSEARCH_CONFIG or
    /// ~/.config/featsearch/config.toml.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 60)]
    pub max_turns: u32,
    #[arg(long)]
    pub max_validations: Option<u32>,
    /// Per-turn wall-clock budget in seconds.
    #[arg(long, default_value_t = 900)]
    pub turn_timeout: u64,
    /// No validation feedback: one turn, one validation of the final answer.
    #[arg(long)]
    pub no_feedback: bool,
    /// Hide the evaluation workspace tool.
    #[arg(long)]
    pub no_workspace: bool,
    /// Replace table and column names with synthetic ones.
    #[arg(long)]
    pub anonymize_schema: bool,
    /// Restrict model_choice, e.g. `gbdt,dart`.
    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<ModelChoice>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Learner threads per fit; defaults to the global pool.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DeployArgs {
    /// Run directory or champion.json.
    pub champion: PathBuf,
    /// Task manifest; taken from the run summary when omitted.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Directory for the test report; defaults to the champion's directory.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub overwrite: bool,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Directed-graph 3-cycle task.
    Triangle(TriangleArgs),
    /// Co-occurrence task over two tables.
    Cooccurrence(CooccurrenceArgs),
}

#[derive(Debug, Args)]
pub struct TriangleArgs {
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long)]
    pub overwrite: bool,
    /// Nodes per graph.
    #[arg(long, default_value_t = 300)]
    pub n: usize,
    /// Edge probability between distinct nodes.
    #[arg(long, default_value_t = 0.02)]
    pub p: f64,
    /// Self-loop probability.
    #[arg(long, default_value_t = 0.0)]
    pub p_sl: f64,
    #[arg(long, default_value_t = 5)]
    pub train_graphs: usize,
    #[arg(long, default_value_t = 2)]
    pub val_graphs: usize,
    #[arg(long, default_value_t = 2)]
    pub test_graphs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CooccurrenceArgs {
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long)]
    pub overwrite: bool,
    /// Entities per split.
    #[arg(long, default_value_t = 200)]
    pub n_entities: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Text,
    Json,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    pub run_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    pub format: ReportFormat,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "arg", rename_all = "snake_case")]
pub enum PolicySelector {
    Scripted(PathBuf),
    Llm(String),
}

impl FromStr for PolicySelector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some(("scripted", p)) if !p.is_empty() => Ok(PolicySelector::Scripted(PathBuf::from(p))),
            Some(("llm", p)) if !p.is_empty() => Ok(PolicySelector::Llm(p.to_string())),
            _ => Err(format!("expected scripted:<path> or llm:<profile>, got `{s}`")),
        }
    }
}

impl std::fmt::Display for PolicySelector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PolicySelector::Scripted(p) => write!(f, "scripted:{}", p.display()),
            PolicySelector::Llm(name) => write!(f, "llm:{name}"),
        }
    }
}

/// Everything `cmd_search` needs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub rollouts: usize,
    pub rollout: RolloutConfig,
    pub policy: PolicySelector,
    pub out: PathBuf,
    pub overwrite: bool,
    pub config_file: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(manifest: impl Into<PathBuf>, policy: PolicySelector, out: impl Into<PathBuf>) -> RunConfig {
        RunConfig {
            manifest: manifest.into(),
            rollouts: 5,
            rollout: RolloutConfig::default(),
            policy,
            out: out.into(),
            overwrite: false,
            config_file: None,
        }
    }

    pub fn from_args(a: &SearchArgs) -> RunConfig {
        RunConfig {
            manifest: a.manifest.clone(),
            rollouts: a.rollouts,
            rollout: RolloutConfig {
                max_turns: a.max_turns,
                max_validations: a.max_validations,
                per_turn_timeout: Duration::from_secs(a.turn_timeout),
                no_feedback: a.no_feedback,
                no_workspace: a.no_workspace,
                anonymize_schema: a.anonymize_schema,
                allowed_models: a.models.clone(),
                seed: a.seed,
                fit: FitOptions { threads: a.threads },
            },
            policy: a.policy.clone(),
            out: a.out.clone(),
            overwrite: a.overwrite,
            config_file: a.config.clone(),
        }
    }
}

/// One LLM profile as written in the config file. Credentials are never
/// read from the file, only from the named environment variable.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmProfile {
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub max_tokens: Option<u32>,
    #[serde(default)]
    pub timeout_secs: Option<u64>,
    #[serde(default)]
    pub retries: Option<u32>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserConfig {
    #[serde(default)]
    pub profiles: std::collections::BTreeMap<String, LlmProfile>,
}

impl UserConfig {
    pub fn load(path: &Path) -> Result<UserConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn settings(&self, profile: &str) -> Result<LlmSettings> {
        let p = self.profiles.get(profile).ok_or_else(|| {
            let known: Vec<&str> = self.profiles.keys().map(String::as_str).collect();
            anyhow!("unknown LLM profile `{profile}`; known: {}", known.join(", "))
        })?;
        let key_env = p.api_key_env.as_deref().unwrap_or(DEFAULT_API_KEY_ENV);
        let mut s = LlmSettings {
            endpoint: p.endpoint.clone(),
            model: p.model.clone(),
            api_key: std::env::var(key_env).ok().filter(|k| !k.is_empty()),
            temperature: 1.0,
            max_tokens: 8000,
            timeout_secs: 900,
            retries: 3,
        };
        if let Some(v) = p.temperature {
            s.temperature = v;
        }
        if let Some(v) = p.max_tokens {
            s.max_tokens = v;
        }
        if let Some(v) = p.timeout_secs {
            s.timeout_secs = v;
        }
        if let Some(v) = p.retries {
            s.retries = v;
        }
        if s.api_key.is_none() {
            log::warn!("{key_env} is not set; requests to {} go out unauthenticated", s.endpoint);
        }
        Ok(s)
    }
}

fn default_config_path() -> Option<PathBuf> {
    if let Some(p) = std::env::var_os(CONFIG_ENV) {
        return Some(PathBuf::from(p));
    }
    std::env::var_os("HOME").map(|h| PathBuf::from(h).join(".config/featsearch/config.toml"))
}

fn make_policies(run: &RunConfig) -> Result<Vec<Box<dyn Policy>>> {
    match &run.policy {
        PolicySelector::Scripted(path) => (0..run.rollouts)
            .map(|_| {
                ScriptedPolicy::from_file(path)
                    .map(|p| Box::new(p) as Box<dyn Policy>)
                    .with_context(|| format!("loading policy script {}", path.display()))
            })
            .collect(),
        PolicySelector::Llm(profile) => {
            let path = run
                .config_file
                .clone()
                .or_else(default_config_path)
                .ok_or_else(|| anyhow!("no config file for LLM profiles; pass --config"))?;
            let settings = UserConfig::load(&path)?.settings(profile)?;
            Ok((0..run.rollouts).map(|_| Box::new(LlmPolicy::new(settings.clone())) as Box<dyn Policy>).collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutLine {
    pub index: usize,
    /// Relative to the run directory.
    pub dir: String,
    pub validations: usize,
    pub failed: usize,
    pub turns: usize,
    pub best_trial_id: Option<String>,
    pub best_score: Option<f64>,
    pub stop_reason: StopReason,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChampionLine {
    pub rollout_index: usize,
    pub trial_id: String,
    pub model_choice: ModelChoice,
    pub val_score: f64,
    pub program_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub manifest: PathBuf,
    pub policy: String,
    pub config: RolloutConfig,
    pub threads: Option<usize>,
    pub rollouts: Vec<RolloutLine>,
    pub champion: Option<ChampionLine>,
}

impl RunSummary {
    pub fn load(path: &Path) -> Result<RunSummary> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn render(&self, test: Option<&TestReport>) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "RUN SUMMARY");
        let _ = writeln!(out, "manifest {}", self.manifest.display());
        let _ = writeln!(out, "policy {}  rollouts {}", self.policy, self.rollouts.len());
        let _ = writeln!(
            out,
            "\n{:<8} {:>6} {:>6} {:>6}  {:<10} {:>10}  stop",
            "rollout", "turns", "trials", "failed", "best", "score"
        );
        for r in &self.rollouts {
            let score = r.best_score.map_or("-".to_string(), |s| format!("{s:.6}"));
            let _ = writeln!(
                out,
                "{:<8} {:>6} {:>6} {:>6}  {:<10} {:>10}  {}",
                r.index,
                r.turns,
                r.validations,
                r.failed,
                r.best_trial_id.as_deref().unwrap_or("-"),
                score,
                serde_json::to_value(r.stop_reason).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
            );
            if let Some(f) = &r.failure {
                let _ = writeln!(out, "         aborted: {f}");
            }
        }
        match &self.champion {
            Some(c) => {
                let _ = writeln!(
                    out,
                    "\nCHAMPION rollout {} trial {} ({}) val score {:.6}\nprogram hash {}",
                    c.rollout_index, c.trial_id, c.model_choice, c.val_score, c.program_hash
                );
            }
            None => {
                let _ = writeln!(out, "\nno champion: every trial failed");
            }
        }
        if let Some(t) = test {
            let _ = writeln!(out, "\nTEST METRICS ({} rows)\n{}", t.predictions.len(), t.metrics.render());
        }
        out
    }
}

/// Result of a search: the summary is always written, the champion only
/// when some trial succeeded.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub summary: RunSummary,
    pub champion: Option<Champion>,
    pub rollouts: Vec<RolloutResult>,
}

impl SearchOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.champion.is_some() {
            EXIT_OK
        } else {
            EXIT_NO_CHAMPION
        }
    }
}

fn rollout_dir_name(k: usize) -> String {
    format!("rollout_{k}")
}

fn is_run_artifact(name: &str) -> bool {
    name.starts_with("rollout_")
        || [CHAMPION_FILE, RUN_SUMMARY_FILE, TEST_REPORT_FILE, TEST_REPORT_TEXT_FILE].contains(&name)
}

/// Make sure `out` can receive a fresh run. Earlier run artifacts are removed
/// only with `overwrite`; unrelated files are left alone.
fn prepare_run_dir(out: &Path, overwrite: bool) -> Result<()> {
    if out.exists() {
        let mut stale = Vec::new();
        for entry in std::fs::read_dir(out).with_context(|| format!("reading {}", out.display()))? {
            let entry = entry?;
            if is_run_artifact(&entry.file_name().to_string_lossy()) {
                stale.push(entry.path());
            }
        }
        if !stale.is_empty() {
            if !overwrite {
                bail!("{} already holds run artifacts; pass --overwrite to replace them", out.display());
            }
            for p in stale {
                if p.is_dir() { std::fs::remove_dir_all(&p) } else { std::fs::remove_file(&p) }
                    .with_context(|| format!("removing {}", p.display()))?;
            }
        }
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn write_json(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Run K rollouts concurrently, select the champion and write the run
/// artifacts. Rollout `k` anonymizes with seed `seed + k`.
pub fn cmd_search(run: &RunConfig) -> Result<SearchOutcome> {
    if run.rollouts == 0 {
        bail!("--rollouts must be at least 1");
    }
    let manifest_path =
        std::fs::canonicalize(&run.manifest).with_context(|| format!("task manifest {}", run.manifest.display()))?;
    let manifest = TaskManifest::load(&manifest_path)?;
    ContextHandle::open(manifest.clone()).context("opening task database")?;
    let mut policies = make_policies(run)?;
    let policy_label = run.policy.to_string();
    prepare_run_dir(&run.out, run.overwrite)?;

    let results: Vec<Result<RolloutResult>> = std::thread::scope(|s| {
        let handles: Vec<_> = policies
            .iter_mut()
            .enumerate()
            .map(|(k, policy)| {
                let cfg = RolloutConfig { seed: run.rollout.seed.wrapping_add(k as u64), ..run.rollout.clone() };
                let dir = run.out.join(rollout_dir_name(k));
                let manifest = &manifest;
                s.spawn(move || {
                    let r = run_rollout(manifest, policy.as_mut(), &cfg, k, &dir)
                        .with_context(|| format!("rollout {k}"))?;
                    log::info!(
                        "rollout {k}: {} validations, best {:?} ({:?})",
                        r.validations(),
                        r.best_score,
                        r.stop_reason
                    );
                    Ok(r)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err(anyhow!("rollout thread panicked")))).collect()
    });
    let rollouts: Vec<RolloutResult> = results.into_iter().collect::<Result<_>>()?;

    let champion = match cross_rollout_select(&rollouts) {
        Ok(c) => Some(c),
        Err(SelectError::NoSuccessfulTrial) => None,
        Err(e) => return Err(e.into()),
    };
    if let Some(c) = &champion {
        write_json(&run.out.join(CHAMPION_FILE), &c.to_json())?;
    }
    let summary = RunSummary {
        manifest: manifest_path,
        policy: policy_label,
        config: run.rollout.clone(),
        threads: run.rollout.fit.threads,
        rollouts: rollouts
            .iter()
            .map(|r| RolloutLine {
                index: r.rollout_index,
                dir: rollout_dir_name(r.rollout_index),
                validations: r.validations(),
                failed: r.trials.iter().filter(|t| t.primary_score.is_none()).count(),
                turns: r.turns.len(),
                best_trial_id: r.best_trial_id.clone(),
                best_score: r.best_score,
                stop_reason: r.stop_reason,
                failure: r.failure.clone(),
            })
            .collect(),
        champion: champion.as_ref().map(|c| ChampionLine {
            rollout_index: c.rollout_index,
            trial_id: c.trial_id.clone(),
            model_choice: c.model_choice,
            val_score: c.val_score,
            program_hash: c.program_hash.clone(),
        }),
    };
    write_json(&run.out.join(RUN_SUMMARY_FILE), &serde_json::to_string_pretty(&summary)?)?;
    Ok(SearchOutcome { summary, champion, rollouts })
}

/// Paths resolved for a deployment.
#[derive(Debug, Clone, PartialEq)]
pub struct DeployPlan {
    pub champion: PathBuf,
    pub manifest: PathBuf,
    pub out: PathBuf,
}

impl DeployPlan {
    /// `target` is a run directory or a champion file. Without an explicit
    /// manifest the run summary next to the champion supplies one.
    pub fn resolve(target: &Path, manifest: Option<&Path>, out: Option<&Path>) -> Result<DeployPlan> {
        let champion = if target.is_dir() { target.join(CHAMPION_FILE) } else { target.to_path_buf() };
        if !champion.is_file() {
            bail!("no champion at {}", champion.display());
        }
        let run_dir = champion.parent().map(Path::to_path_buf).unwrap_or_default();
        let manifest = match manifest {
            Some(m) => m.to_path_buf(),
            None => {
                let summary = run_dir.join(RUN_SUMMARY_FILE);
                RunSummary::load(&summary)
                    .with_context(|| "no --manifest given and no run summary to take it from")?
                    .manifest
            }
        };
        let out = out.map(Path::to_path_buf).unwrap_or(run_dir);
        Ok(DeployPlan { champion, manifest, out })
    }
}

/// Refit the champion and write the test report. Returns the report.
pub fn cmd_deploy(plan: &DeployPlan, fit: &FitOptions, overwrite: bool, clock: &Clock) -> Result<TestReport> {
    let champion = Champion::load(&plan.champion).with_context(|| format!("loading {}", plan.champion.display()))?;
    let manifest = TaskManifest::load(&plan.manifest)?;
    let json_path = plan.out.join(TEST_REPORT_FILE);
    if json_path.exists() && !overwrite {
        bail!("{} exists; pass --overwrite to replace it", json_path.display());
    }
    let mut ctx = ContextHandle::open(manifest).context("opening task database")?;
    let report = deploy_champion(&mut ctx, &champion, fit, clock).map_err(|e| match e.failure_kind() {
        Some(kind) => anyhow!("deployment failed [{kind}]: {e}"),
        None => anyhow!(e),
    })?;
    std::fs::create_dir_all(&plan.out).with_context(|| format!("creating {}", plan.out.display()))?;
    write_json(&json_path, &report.to_json())?;
    std::fs::write(plan.out.join(TEST_REPORT_TEXT_FILE), report.render())?;
    Ok(report)
}

fn prepare_task_dir(out: &Path, overwrite: bool) -> Result<()> {
    if out.exists() && std::fs::read_dir(out)?.next().is_some() && !overwrite {
        bail!("{} is not empty; pass --overwrite to regenerate into it", out.display());
    }
    Ok(())
}

pub fn cmd_bench(cmd: &BenchCommand) -> Result<GeneratedTask> {
    let task = match cmd {
        BenchCommand::Triangle(a) => {
            prepare_task_dir(&a.out, a.overwrite)?;
            let spec = TriangleSpec {
                n: a.n,
                p: a.p,
                p_sl: a.p_sl,
                n_train_graphs: a.train_graphs,
                n_val_graphs: a.val_graphs,
                n_test_graphs: a.test_graphs,
                seed: a.seed,
            };
            gen_triangle_task(&spec, &a.out)?
        }
        BenchCommand::Cooccurrence(a) => {
            prepare_task_dir(&a.out, a.overwrite)?;
            gen_cooccurrence_task(&CooccurrenceSpec { n_entities: a.n_entities, seed: a.seed }, &a.out)?
        }
    };
    Ok(task)
}

pub fn cmd_report(run_dir: &Path, format: ReportFormat) -> Result<String> {
    let summary = RunSummary::load(&run_dir.join(RUN_SUMMARY_FILE))?;
    let test_path = run_dir.join(TEST_REPORT_FILE);
    let test: Option<TestReport> = if test_path.exists() {
        let text = std::fs::read_to_string(&test_path)?;
        Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", test_path.display()))?)
    } else {
        None
    };
    Ok(match format {
        ReportFormat::Text => summary.render(test.as_ref()),
        ReportFormat::Json => {
            let mut v = serde_json::to_value(&summary)?;
            if let Some(t) = &test {
                v["test_metrics"] = serde_json::to_value(&t.metrics)?;
            }
            serde_json::to_string_pretty(&v)?
        }
    })
}

/// Execute a parsed command line and return the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Search(args) => cmd_search(&RunConfig::from_args(&args)).map(|o| {
            match &o.champion {
                Some(c) => println!(
                    "champion: rollout {} trial {} val score {:.6} -> {}",
                    c.rollout_index,
                    c.trial_id,
                    c.val_score,
                    args.out.join(CHAMPION_FILE).display()
                ),
                None => eprintln!("no champion: every trial in {} rollouts failed", o.rollouts.len()),
            }
            o.exit_code()
        }),
        Command::Deploy(args) => DeployPlan::resolve(&args.champion, args.manifest.as_deref(), args.out.as_deref())
            .and_then(|plan| {
                let report = cmd_deploy(&plan, &FitOptions { threads: args.threads }, args.overwrite, &Clock::System)?;
                print!("{}", report.metrics.render());
                println!("\nreport: {}", plan.out.join(TEST_REPORT_FILE).display());
                Ok(EXIT_OK)
            }),
        Command::Bench(cmd) => cmd_bench(&cmd).map(|task| {
            println!("manifest: {}", task.manifest_path.display());
            println!("seed used: {}", task.seed_used);
            EXIT_OK
        }),
        Command::Report(args) => cmd_report(&args.run_dir, args.format).map(|text| {
            print!("{text}");
            EXIT_OK
        }),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        EXIT_OPERATOR_ERROR
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_selector_parses() {
        assert_eq!("scripted:a/b.json".parse(), Ok(PolicySelector::Scripted("a/b.json".into())));
        assert_eq!("llm:fast".parse(), Ok(PolicySelector::Llm("fast".into())));
        assert!("llm:".parse::<PolicySelector>().is_err());
        assert!("other:x".parse::<PolicySelector>().is_err());
        assert_eq!(PolicySelector::Llm("fast".into()).to_string(), "llm:fast");
    }

    #[test]
    fn search_flags_map_onto_the_rollout_config() {
        let cli = Cli::try_parse_from([
            "featsearch",
            "search",
            "task.toml",
            "--policy",
            "scripted:s.json",
            "-o",
            "run",
            "-k",
            "3",
            "--no-workspace",
            "--anonymize-schema",
            "--models",
            "gbdt,dart",
            "--max-validations",
            "7",
            "--threads",
            "2",
        ])
        .unwrap();
        let Command::Search(args) = cli.command else { panic!("not search") };
        let run = RunConfig::from_args(&args);
        assert_eq!(run.rollouts, 3);
        assert!(run.rollout.no_workspace && run.rollout.anonymize_schema && !run.rollout.no_feedback);
        assert_eq!(run.rollout.allowed_models, Some(vec![ModelChoice::Gbdt, ModelChoice::Dart]));
        assert_eq!(run.rollout.max_validations, Some(7));
        assert_eq!(run.rollout.fit.threads, Some(2));
        assert!(Cli::try_parse_from([
            "featsearch",
            "search",
            "t",
            "--policy",
            "scripted:s",
            "-o",
            "r",
            "--models",
            "lightgbm"
        ])
        .is_err());
    }

    #[test]
    fn profiles_take_credentials_from_the_environment_only() {
        let cfg: UserConfig = toml::from_str(
            "[profiles.main]\nendpoint = \"http://localhost:1/v1/chat/completions\"\nmodel = \"m\"\napi_key_env = \"FEATSEARCH_TEST_KEY_ENV\"\nretries = 1\n",
        )
        .unwrap();
        std::env::set_var("FEATSEARCH_TEST_KEY_ENV", "sk-test");
        let s = cfg.settings("main").unwrap();
        assert_eq!(s.api_key.as_deref(), Some("sk-test"));
        assert_eq!((s.retries, s.max_tokens), (1, 8000));
        assert!(cfg.settings("missing").is_err());
        assert!(
            toml::from_str::<UserConfig>("[profiles.x]\nendpoint = \"e\"\nmodel = \"m\"\napi_key = \"sk\"\n").is_err()
        );
    }

    #[test]
    fn overwrite_only_removes_run_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("rollout_0")).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "keep").unwrap();
        assert!(prepare_run_dir(dir.path(), false).is_err());
        prepare_run_dir(dir.path(), true).unwrap();
        assert!(!dir.path().join("rollout_0").exists());
        assert!(dir.path().join("notes.txt").exists());
    }
}
