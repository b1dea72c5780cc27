use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::failure::Failure;

#[derive(Debug, Parser)]
#[command(name = "measure-mirror", version, about = "Mirror descent over discrete measures: Sinkhorn, latent EM, MMD descent and their rate certificates")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,

    /// JSON file with the whole experiment configuration. Its keys override
    /// the command-line flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct Global {
    /// Seed for random instances.
    #[arg(long, global = true, default_value_t = 0)]
    #[serde(default)]
    pub seed: u64,

    /// Directory for traces, certificates and the run manifest.
    #[arg(long, global = true, default_value = ".")]
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,

    /// One of error, warn, info, debug, trace.
    #[arg(long, global = true, default_value = "warn")]
    #[serde(default = "default_log_level")]
    pub log_level: String,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from(".")
}

fn default_log_level() -> String {
    "warn".into()
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Command {
    /// Primal Sinkhorn for entropic optimal transport.
    Sinkhorn(SinkhornArgs),
    /// Latent EM (Richardson-Lucy) for a fixed kernel.
    LatentEm(LatentEmArgs),
    /// Entropic mirror descent on the squared MMD to a target.
    MmdMd(MmdArgs),
    /// Oracle gate and the full certificate battery.
    Verify(VerifyArgs),
    /// Write a random problem instance.
    Gen(GenArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SinkhornArgs {
    /// Cost matrix, JSON rows or CSV.
    #[arg(long)]
    pub cost: PathBuf,
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long)]
    pub mu: PathBuf,
    #[arg(long)]
    pub nu: PathBuf,
    #[arg(long, default_value_t = 100)]
    #[serde(default = "default_iters")]
    pub iters: usize,
    /// Trace CSV; defaults to `trace.csv` in the output directory.
    #[arg(long)]
    #[serde(default)]
    pub trace_out: Option<PathBuf>,
    /// Check the rate and stability bounds and write `certificate.json`.
    #[arg(long)]
    #[serde(default)]
    pub certify: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct LatentEmArgs {
    /// Row-stochastic kernel, JSON rows or CSV.
    #[arg(long, required_unless_present = "gibbs_cost", conflicts_with = "gibbs_cost")]
    #[serde(default)]
    pub kernel: Option<PathBuf>,
    /// Cost matrix; the kernel becomes `e^{-c/ε}·ν` with rows normalized.
    #[arg(long, requires = "epsilon")]
    #[serde(default)]
    pub gibbs_cost: Option<PathBuf>,
    #[arg(long)]
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub obs: PathBuf,
    #[arg(long)]
    pub init: PathBuf,
    #[arg(long, default_value_t = 100)]
    #[serde(default = "default_iters")]
    pub iters: usize,
    #[arg(long)]
    #[serde(default)]
    pub trace_out: Option<PathBuf>,
    #[arg(long)]
    #[serde(default)]
    pub certify: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct MmdArgs {
    /// Symmetric PSD Gram matrix, JSON rows or CSV.
    #[arg(long)]
    pub gram: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long)]
    pub init: PathBuf,
    #[arg(long, default_value_t = 100)]
    #[serde(default = "default_iters")]
    pub iters: usize,
    /// Smoothness constant; defaults to four times the largest diagonal
    /// entry of the Gram matrix.
    #[arg(long)]
    #[serde(default)]
    pub smooth: Option<f64>,
    #[arg(long)]
    #[serde(default)]
    pub trace_out: Option<PathBuf>,
    #[arg(long)]
    #[serde(default)]
    pub certify: bool,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct VerifyArgs {
    /// Run only these criteria (comma separated); the default is all.
    #[arg(long, value_delimiter = ',')]
    #[serde(default)]
    pub only: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenKind {
    Eot,
    Latent,
    Mmd,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub problem: GenKind,
    #[arg(long)]
    pub n: usize,
    /// Second side length; defaults to `n`.
    #[arg(long)]
    #[serde(default)]
    pub m: Option<usize>,
}

fn default_iters() -> usize {
    100
}

/// The resolved configuration of one run, echoed into its manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub global: Global,
    #[serde(flatten)]
    pub command: Command,
}

impl ExperimentConfig {
    /// Merges the command line with an optional JSON config file whose
    /// top-level keys take precedence.
    pub fn resolve(cli: Cli) -> Result<Self, Failure> {
        let mut merged = serde_json::to_value(&cli.global).map_err(|e| Failure::Config(e.to_string()))?;
        if let Some(cmd) = &cli.command {
            let cmd = serde_json::to_value(cmd).map_err(|e| Failure::Config(e.to_string()))?;
            overlay(&mut merged, cmd);
        }
        if let Some(path) = &cli.config {
            overlay(&mut merged, read_config(path)?);
        }
        if merged.get("kind").is_none() {
            return Err(Failure::Config("no subcommand given and the config file has no \"kind\"".into()));
        }
        serde_json::from_value(merged).map_err(|e| Failure::Config(format!("invalid configuration: {e}")))
    }
}

fn read_config(path: &Path) -> Result<Value, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    if !value.is_object() {
        return Err(Failure::Config(format!("{}: expected a JSON object", path.display())));
    }
    Ok(value)
}

fn overlay(base: &mut Value, top: Value) {
    if let (Value::Object(b), Value::Object(t)) = (base, top) {
        for (k, v) in t {
            b.insert(k, v);
        }
    }
}
