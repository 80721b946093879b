use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};
use sllg::experiment::{self, Report};
use sllg::io::{parse_f64_list, parse_usize_list, GSetting, KRule, SimulationConfig};
use sllg::Error;

#[derive(Parser)]
#[command(name = "sllg", version, about = "Stochastic LLG simulator (linear θ tangent-plane FEM)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single Brownian path and write the step trace and field snapshots.
    Simulate(Flags),
    /// Estimate E_{h,k} over a list of mesh sizes and time-step rules.
    Convergence(Flags),
    /// Ensemble mean exchange energy for a list of damping values.
    Energy(Flags),
}

#[derive(Args, Clone, Default)]
struct Flags {
    /// JSON configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    /// Number of time steps J.
    #[arg(long)]
    steps: Option<usize>,
    /// Time step size; J = round(T / k).
    #[arg(long)]
    k: Option<f64>,
    /// One of h, h/2, h/4.
    #[arg(long)]
    k_rule: Option<KRule>,
    /// Comma-separated k rules for the convergence study.
    #[arg(long)]
    k_rules: Option<String>,
    /// Final time.
    #[arg(long = "T")]
    final_time: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    /// Number of Monte Carlo paths L.
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Noise direction: "gx,gy,gz" or "wave:a,b".
    #[arg(long, allow_hyphen_values = true)]
    g: Option<String>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n_list: Option<String>,
    #[arg(long)]
    lambda2_list: Option<String>,
    #[arg(long)]
    snapshot_steps: Option<String>,
    /// Use the full-size experiment presets.
    #[arg(long)]
    full_scale: bool,
}

fn build_config(command: &str, flags: &Flags) -> sllg::Result<SimulationConfig> {
    let full_scale = flags.full_scale || file_requests_full_scale(flags)?;
    let preset = experiment::preset(command, full_scale);
    let mut merged = to_object(&preset);
    if let Some(path) = &flags.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        match serde_json::from_str::<Value>(&text).map_err(|e| Error::Config(e.to_string()))? {
            Value::Object(file) => {
                clear_preset_k(&mut merged, &file);
                merged.extend(file);
            }
            _ => return Err(Error::Config("configuration file must hold a JSON object".into())),
        }
    }
    let overrides = flag_overrides(flags)?;
    clear_preset_k(&mut merged, &overrides);
    merged.extend(overrides);
    let config: SimulationConfig =
        serde_json::from_value(Value::Object(merged)).map_err(|e| Error::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// An explicit k rule must win over a step size inherited from a preset.
fn clear_preset_k(merged: &mut Map<String, Value>, layer: &Map<String, Value>) {
    if layer.contains_key("k_rule") && !layer.contains_key("k") {
        merged.insert("k".into(), Value::Null);
    }
}

fn file_requests_full_scale(flags: &Flags) -> sllg::Result<bool> {
    let Some(path) = &flags.config else { return Ok(false) };
    let Ok(text) = std::fs::read_to_string(path) else { return Ok(false) };
    let v: Value = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    Ok(v.get("full_scale").and_then(Value::as_bool).unwrap_or(false))
}

fn to_object(config: &SimulationConfig) -> Map<String, Value> {
    match serde_json::to_value(config).expect("config serializes") {
        Value::Object(m) => m,
        _ => unreachable!(),
    }
}

fn flag_overrides(f: &Flags) -> sllg::Result<Map<String, Value>> {
    let mut m = Map::new();
    let mut set = |key: &str, v: Value| {
        m.insert(key.to_string(), v);
    };
    if let Some(v) = f.n {
        set("n", json!(v));
    }
    if let Some(v) = f.steps {
        set("steps", json!(v));
    }
    if let Some(v) = f.k {
        set("k", json!(v));
    }
    if let Some(v) = f.k_rule {
        set("k_rule", json!(v.to_string()));
        if f.k_rules.is_none() {
            set("k_rules", Value::Array(vec![json!(v.to_string())]));
        }
    }
    if let Some(s) = &f.k_rules {
        let rules = s
            .split(',')
            .map(|r| r.trim().parse::<KRule>().map(|r| Value::String(r.to_string())))
            .collect::<sllg::Result<Vec<_>>>()?;
        set("k_rules", Value::Array(rules));
    }
    if let Some(v) = f.final_time {
        set("T", json!(v));
    }
    if let Some(v) = f.theta {
        set("theta", json!(v));
    }
    if let Some(v) = f.lambda1 {
        set("lambda1", json!(v));
    }
    if let Some(v) = f.lambda2 {
        set("lambda2", json!(v));
    }
    if let Some(v) = f.paths {
        set("L", json!(v));
    }
    if let Some(v) = f.seed {
        set("master_seed", json!(v));
    }
    if let Some(s) = &f.g {
        let g: GSetting = s.parse()?;
        set("g", serde_json::to_value(g).expect("g serializes"));
    }
    if let Some(v) = f.workers {
        set("worker_count", json!(v));
    }
    if let Some(p) = &f.out {
        set("output_dir", Value::String(p.display().to_string()));
    }
    if let Some(s) = &f.n_list {
        set("n_list", serde_json::to_value(parse_usize_list(s)?).expect("list serializes"));
    }
    if let Some(s) = &f.lambda2_list {
        set("lambda2_list", serde_json::to_value(parse_f64_list(s)?).expect("list serializes"));
    }
    if let Some(s) = &f.snapshot_steps {
        set("snapshot_steps", serde_json::to_value(parse_usize_list(s)?).expect("list serializes"));
    }
    if f.full_scale {
        set("full_scale", Value::Bool(true));
    }
    Ok(m)
}

fn exit_code(err: &Error) -> u8 {
    match err.root() {
        Error::Config(_) | Error::InvalidParameter(_) => 2,
        Error::SolverFailed { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, flags) = match &cli.command {
        Command::Simulate(f) => ("simulate", f),
        Command::Convergence(f) => ("convergence", f),
        Command::Energy(f) => ("energy", f),
    };
    let result = build_config(name, flags).and_then(|config| {
        let out = config.output_dir.clone();
        let report: Report = match name {
            "simulate" => experiment::simulate(&config, &out)?,
            "convergence" => experiment::convergence(&config, &out)?,
            _ => experiment::energy(&config, &out)?,
        };
        Ok((report, out))
    });
    match result {
        Ok((report, out)) => {
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            println!("{name}: wrote {} file(s) to {}", report.manifest.outputs.len(), out.display());
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
