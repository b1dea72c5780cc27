mod config;
mod failure;
mod files;
mod run;

use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::Parser;
use measure_mirror::instance::PRNG_NAME;
use serde::Serialize;

use config::{Cli, ExperimentConfig};
use failure::Failure;

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    library_version: &'static str,
    prng: &'static str,
    config: &'a ExperimentConfig,
    started_unix_secs: u64,
    wall_time_secs: f64,
    outputs: Vec<String>,
    status: String,
    exit_code: i32,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let cfg = match ExperimentConfig::resolve(cli) {
        Ok(cfg) => cfg,
        Err(e) => return report(&e),
    };
    init_logging(&cfg.global.log_level);
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let clock = Instant::now();
    let result = run::run_experiment(&cfg);

    let (outputs, failure) = match result {
        Ok(outcome) => {
            let failure = outcome.certificate_failure.map(Failure::Certificate);
            (outcome.outputs, failure)
        }
        Err(e) => (Vec::new(), Some(e)),
    };
    let exit_code = failure.as_ref().map_or(0, Failure::exit_code);
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        library_version: measure_mirror::VERSION,
        prng: PRNG_NAME,
        config: &cfg,
        started_unix_secs: started,
        wall_time_secs: clock.elapsed().as_secs_f64(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        status: failure.as_ref().map_or_else(|| "ok".to_string(), ToString::to_string),
        exit_code,
    };
    // A config failure may mean the output directory itself is unusable.
    if !matches!(failure, Some(Failure::Config(_))) {
        if let Err(e) = files::write_json(&cfg.global.out_dir.join("manifest.json"), &manifest) {
            return report(&e);
        }
    }
    match failure {
        Some(e) => report(&e),
        None => ExitCode::SUCCESS,
    }
}

fn report(e: &Failure) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn init_logging(level: &str) {
    let filter = level.parse().unwrap_or(log::LevelFilter::Warn);
    env_logger::Builder::new().filter_level(filter).format_timestamp(None).init();
}
