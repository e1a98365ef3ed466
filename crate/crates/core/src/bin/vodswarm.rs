use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use vodswarm::experiment::{self, Comparison, ExperimentError, ExperimentSpec};
use vodswarm::metrics::{dispersion_report, popularity, DispersionReport};
use vodswarm::sim::{self, QosReport, RunOptions, SimConfig, SimError};
use vodswarm::workload::{
    classify_session, generate_workload, parse_trace, GeneratorConfig, InteractivityProfile, TraceOptions,
    Workload, WorkloadError, DEFAULT_PLAYBACK_RATE, DEFAULT_START_SKEW,
};

#[derive(Parser)]
#[command(name = "vodswarm", version, about = "Interactive VoD swarm workloads, dispersion metrics and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace.
    Generate(GenerateArgs),
    /// Dispersion report for a trace.
    Analyze(AnalyzeArgs),
    /// Run one simulation.
    Simulate(SimulateArgs),
    /// Run an experiment file and tabulate per-label statistics.
    Compare(CompareArgs),
}

#[derive(Clone, Copy, Default, ValueEnum)]
enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value = "hi")]
    profile: InteractivityProfile,
    #[arg(long, default_value_t = 100)]
    sessions: usize,
    #[arg(long = "object-len", default_value_t = 300.0)]
    object_len: f64,
    #[arg(long, default_value_t = DEFAULT_PLAYBACK_RATE)]
    playback_rate: f64,
    #[arg(long, default_value_t = 30.0)]
    mean_session_gap: f64,
    #[arg(long, default_value_t = 5.0)]
    mean_think_time: f64,
    #[arg(long, default_value_t = DEFAULT_START_SKEW)]
    start_skew: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trace destination; stdout when absent (the summary then goes to stderr).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Args)]
struct AnalyzeArgs {
    trace: PathBuf,
    /// Position bin width in seconds.
    #[arg(long, default_value_t = 1.0)]
    granularity: f64,
    #[arg(long = "object-len")]
    object_len: Option<f64>,
    #[arg(long)]
    window: Option<f64>,
    /// Number of most popular positions to list.
    #[arg(long, default_value_t = 10)]
    top: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML config; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    policy: Option<String>,
    /// Candidate count for ynp and cnp.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    profile: Option<InteractivityProfile>,
    #[arg(long)]
    sessions: Option<usize>,
    #[arg(long = "object-len")]
    object_len: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    initial_seeds: Option<usize>,
    /// Any other config field, e.g. `--set swarm.neighbourhood_target=10`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// Write the NDJSON event log here.
    #[arg(long)]
    event_log: Option<PathBuf>,
    /// Skip the per-event invariant checks.
    #[arg(long)]
    no_check: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Args)]
struct CompareArgs {
    spec: PathBuf,
    /// Worker threads; defaults to the number of processors.
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides the file's base_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for comparison.csv and comparison.json; overrides output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Input(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Input(_) => 2,
            Failure::Internal(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Input(m) | Failure::Internal(m) => m,
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) => Failure::Usage(e.to_string()),
            SimError::Workload(WorkloadError::InvalidConfig(_)) => Failure::Usage(e.to_string()),
            SimError::Workload(_) | SimError::TraceIo { .. } => Failure::Input(e.to_string()),
            SimError::InvariantViolation { .. } | SimError::Policy(_) | SimError::Swarm(_) => {
                Failure::Internal(e.to_string())
            }
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::RunFailed { label, seed, source } => {
                let inner = Failure::from(source);
                let msg = format!("run `{label}` (seed {seed}) failed: {}", inner.message());
                match inner {
                    Failure::Usage(_) => Failure::Usage(msg),
                    Failure::Input(_) => Failure::Input(msg),
                    Failure::Internal(_) => Failure::Internal(msg),
                }
            }
            other => Failure::Usage(other.to_string()),
        }
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn report_csv(r: &DispersionReport) -> String {
    format!(
        "n,temporal_dispersion,p,m,d,category\n{},{},{},{},{},{}\n",
        r.n, r.temporal_dispersion, r.p, r.m, r.d, r.category
    )
}

fn generate(a: GenerateArgs) -> Result<(), Failure> {
    let cfg = GeneratorConfig {
        profile: a.profile,
        session_count: a.sessions,
        object_length: a.object_len,
        playback_rate: a.playback_rate,
        mean_session_gap: a.mean_session_gap,
        mean_think_time: a.mean_think_time,
        start_skew: a.start_skew,
        seed: a.seed,
    };
    let w = generate_workload(&cfg).map_err(|e| Failure::Usage(e.to_string()))?;
    let granularity = 1.0_f64.min(w.object_length);
    let report = dispersion_report(&w, granularity).map_err(|e| Failure::Internal(e.to_string()))?;
    let summary = match a.format {
        Format::Json => to_json(&report),
        Format::Csv => report_csv(&report),
    };
    match a.out {
        Some(path) => {
            write_output(Some(&path), &w.to_trace())?;
            print!("{summary}");
        }
        None => {
            print!("{}", w.to_trace());
            eprint!("{summary}");
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct TopPosition {
    position: usize,
    start: f64,
    count: u64,
}

#[derive(Serialize)]
struct Analysis {
    n: f64,
    temporal_dispersion: f64,
    p: u64,
    m: u64,
    d: f64,
    category: vodswarm::metrics::DispersionCategory,
    granularity: f64,
    sessions: usize,
    requests: usize,
    profile_counts: BTreeMap<InteractivityProfile, usize>,
    top_positions: Vec<TopPosition>,
}

fn analyze_workload(w: &Workload, granularity: f64, top: usize) -> Result<Analysis, Failure> {
    let report = dispersion_report(w, granularity).map_err(|e| Failure::Input(e.to_string()))?;
    let rec = popularity(w, granularity).map_err(|e| Failure::Input(e.to_string()))?;
    let mut profile_counts: BTreeMap<InteractivityProfile, usize> =
        InteractivityProfile::ALL.iter().map(|p| (*p, 0)).collect();
    for s in &w.sessions {
        *profile_counts.entry(classify_session(s, w.object_length)).or_insert(0) += 1;
    }
    let mut ranked: Vec<(usize, u64)> = rec.iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let top_positions = ranked
        .into_iter()
        .take(top)
        .map(|(position, count)| TopPosition {
            position,
            start: position as f64 * granularity,
            count,
        })
        .collect();
    Ok(Analysis {
        n: report.n,
        temporal_dispersion: report.temporal_dispersion,
        p: report.p,
        m: report.m,
        d: report.d,
        category: report.category,
        granularity,
        sessions: w.sessions.len(),
        requests: w.total_requests(),
        profile_counts,
        top_positions,
    })
}

fn analyze(a: AnalyzeArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&a.trace)
        .map_err(|e| Failure::Input(format!("cannot read {}: {e}", a.trace.display())))?;
    let opts = TraceOptions {
        object_length: a.object_len,
        observation_window: a.window,
        playback_rate: None,
    };
    let w = parse_trace(&text, opts).map_err(|e| Failure::Input(format!("{}: {e}", a.trace.display())))?;
    let an = analyze_workload(&w, a.granularity, a.top)?;
    let text = match a.format {
        Format::Json => to_json(&an),
        Format::Csv => {
            let mut s = String::from("n,temporal_dispersion,p,m,d,category,sessions,requests,hi,mi,li\n");
            let c = |p| an.profile_counts.get(&p).copied().unwrap_or(0);
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                an.n,
                an.temporal_dispersion,
                an.p,
                an.m,
                an.d,
                an.category,
                an.sessions,
                an.requests,
                c(InteractivityProfile::High),
                c(InteractivityProfile::Medium),
                c(InteractivityProfile::Low)
            );
            s
        }
    };
    write_output(a.out.as_deref(), &text)
}

fn set_path(table: &mut toml::Table, dotted: &str, value: toml::Value) -> Result<(), Failure> {
    let mut parts: Vec<&str> = dotted.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| Failure::Usage(format!("bad key `{dotted}`")))?;
    let mut t = table;
    for p in parts {
        let entry = t
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| Failure::Usage(format!("`{p}` in `{dotted}` is not a section")))?;
    }
    t.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    doc.parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn build_sim_config(a: &SimulateArgs) -> Result<SimConfig, Failure> {
    let mut table = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
        None => toml::Table::new(),
    };
    let mut flags: Vec<(&str, toml::Value)> = Vec::new();
    if let Some(p) = &a.policy {
        flags.push(("policy.name", toml::Value::String(p.clone())));
    }
    if let Some(n) = a.n {
        flags.push(("policy.n", toml::Value::Integer(n as i64)));
    }
    if let Some(s) = a.seed {
        flags.push(("run.seed", toml::Value::Integer(s as i64)));
    }
    if let Some(t) = &a.trace {
        flags.push(("workload.trace", toml::Value::String(t.display().to_string())));
    }
    if let Some(p) = a.profile {
        flags.push(("workload.profile", toml::Value::String(p.as_str().to_string())));
    }
    if let Some(s) = a.sessions {
        flags.push(("workload.sessions", toml::Value::Integer(s as i64)));
    }
    if let Some(l) = a.object_len {
        flags.push(("workload.object_length", toml::Value::Float(l)));
    }
    if let Some(h) = a.horizon {
        flags.push(("run.horizon", toml::Value::Float(h)));
    }
    if let Some(s) = a.initial_seeds {
        flags.push(("peers.initial_seeds", toml::Value::Integer(s as i64)));
    }
    for (k, v) in flags {
        set_path(&mut table, k, v)?;
    }
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects SECTION.KEY=VALUE, got `{kv}`")))?;
        set_path(&mut table, k.trim(), parse_value(v.trim()))?;
    }
    let cfg: SimConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Failure::Usage(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn peers_csv(r: &QosReport) -> String {
    let mut s = String::from(
        "peer_id,client_id,profile,join_time,leave_time,continuity_index,startup_delay,bootstrap_time,\
interruption_count,mean_time_to_return,total_download_time,link_utilization,download_rate,\
uploaded_bytes,downloaded_bytes,formation_d\n",
    );
    for p in &r.peers {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            p.peer_id,
            p.client_id,
            p.profile,
            p.join_time,
            p.leave_time,
            opt(p.continuity_index),
            opt(p.startup_delay),
            opt(p.bootstrap_time),
            p.interruption_count,
            opt(p.mean_time_to_return),
            opt(p.total_download_time),
            p.link_utilization,
            p.download_rate,
            p.uploaded_bytes,
            p.downloaded_bytes,
            opt(p.formation.as_ref().map(|f| f.d)),
        );
    }
    s
}

fn simulate(a: SimulateArgs) -> Result<(), Failure> {
    let cfg = build_sim_config(&a)?;
    let opts = RunOptions {
        event_log: a.event_log.is_some(),
        check_invariants: !a.no_check,
    };
    let out = sim::run_with(&cfg, opts)?;
    if let (Some(path), Some(log)) = (&a.event_log, &out.event_log) {
        write_output(Some(path), log)?;
    }
    let text = match a.format {
        Format::Json => to_json(&out.report),
        Format::Csv => peers_csv(&out.report),
    };
    write_output(a.out.as_deref(), &text)
}

fn compare(a: CompareArgs) -> Result<(), Failure> {
    let mut spec = ExperimentSpec::load(&a.spec)?;
    if let Some(seed) = a.seed {
        spec.base_seed = seed;
    }
    if a.workers == Some(0) {
        return Err(Failure::Usage("--workers must be at least 1".into()));
    }
    let cmp: Comparison = experiment::compare(&spec, a.workers)?;
    if let Some(dir) = a.out.clone().or(spec.output_dir.clone()) {
        std::fs::create_dir_all(&dir).map_err(|e| Failure::Usage(format!("cannot create {}: {e}", dir.display())))?;
        write_output(Some(&dir.join("comparison.csv")), &cmp.to_csv())?;
        write_output(Some(&dir.join("comparison.json")), &to_json(&cmp))?;
    }
    let text = match a.format {
        Format::Json => to_json(&cmp),
        Format::Csv => cmp.to_csv(),
    };
    write_output(None, &text)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Analyze(a) => analyze(a),
        Command::Simulate(a) => simulate(a),
        Command::Compare(a) => compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
