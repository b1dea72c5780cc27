use std::path::{Path, PathBuf};

use measure_mirror::divergences::{bregman, equivalence_check_iii, BregmanPotential, Objective};
use measure_mirror::em::{em_rate_certificate, run_latent_em, EmRateReport, LatentProblem};
use measure_mirror::instance;
use measure_mirror::mirror_descent::{rate_bound, run_md, Constraint, MdConfig};
use measure_mirror::oracles::{reference_eot, reference_latent, LatentReference};
use measure_mirror::sinkhorn::{rate_certificate, run_sinkhorn, stability_check, EotProblem, SinkhornRateReport};
use measure_mirror::verify::{run_battery, run_criterion, VerifyReport};
use measure_mirror::{ConditionalKernel, Error};
use serde::Serialize;

use crate::config::{Command, ExperimentConfig, GenArgs, GenKind, LatentEmArgs, MmdArgs, SinkhornArgs, VerifyArgs};
use crate::failure::Failure;
use crate::files::{read_matrix, read_measure, write_json, write_text};

/// Files written by a run and whether its certificate (if any) passed.
pub struct Outcome {
    pub outputs: Vec<PathBuf>,
    pub certificate_failure: Option<String>,
}

impl Outcome {
    fn new() -> Self {
        Self { outputs: Vec::new(), certificate_failure: None }
    }

    fn write_json(&mut self, path: PathBuf, value: &impl Serialize) -> Result<(), Failure> {
        write_json(&path, value)?;
        self.outputs.push(path);
        Ok(())
    }

    fn write_text(&mut self, path: PathBuf, text: &str) -> Result<(), Failure> {
        write_text(&path, text)?;
        self.outputs.push(path);
        Ok(())
    }

    fn fail_unless(&mut self, ok: bool, what: &str) {
        if !ok && self.certificate_failure.is_none() {
            self.certificate_failure = Some(what.into());
        }
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome, Failure> {
    let out = &cfg.global.out_dir;
    match &cfg.command {
        Command::Sinkhorn(a) => sinkhorn(a, out),
        Command::LatentEm(a) => latent_em(a, out),
        Command::MmdMd(a) => mmd_md(a, out),
        Command::Verify(a) => verify(a, cfg.global.seed, out),
        Command::Gen(a) => gen(a, cfg.global.seed, out),
    }
}

fn trace_path(explicit: &Option<PathBuf>, out: &Path) -> PathBuf {
    explicit.clone().unwrap_or_else(|| out.join("trace.csv"))
}

fn input_error(path: &Path, e: Error) -> Failure {
    Failure::Config(format!("{}: {e}", path.display()))
}

#[derive(Serialize)]
struct SinkhornCertificate {
    sublinear_ok: bool,
    linear_ok: bool,
    strong_convexity_ok: bool,
    potential_stability_ok: bool,
    oracle_residual: f64,
    rate: SinkhornRateReport,
}

fn sinkhorn(a: &SinkhornArgs, out: &Path) -> Result<Outcome, Failure> {
    let cost = read_matrix(&a.cost)?;
    let mu = read_measure(&a.mu)?;
    let nu = read_measure(&a.nu)?;
    let p = EotProblem::new(cost, a.epsilon, mu, nu)?;
    let trace = run_sinkhorn(&p, None, a.iters)?;
    let mut outcome = Outcome::new();
    if !a.certify {
        outcome.write_text(trace_path(&a.trace_out, out), &trace.to_csv(None))?;
        return Ok(outcome);
    }
    let reference = reference_eot(&p, 1e-13)?;
    let rate = rate_certificate(&trace, &reference.coupling, &p)?;
    let (mut strong, mut stable) = (true, true);
    let couplings: Vec<_> = (0..trace.len()).map(|n| trace.coupling(n, &p)).collect();
    for (n, pi) in couplings.iter().enumerate() {
        let mut pairs = vec![(pi, &reference.coupling), (&reference.coupling, pi)];
        if let Some(next) = couplings.get(n + 1) {
            pairs.push((next, pi));
        }
        for (x, y) in pairs {
            let r = stability_check(x, y, &p)?;
            strong &= r.strong_convexity.ok;
            stable &= r.potentials.ok;
        }
    }
    let cert = SinkhornCertificate {
        sublinear_ok: rate.sublinear_ok,
        linear_ok: rate.linear_ok,
        strong_convexity_ok: strong,
        potential_stability_ok: stable,
        oracle_residual: reference.residual,
        rate,
    };
    outcome.fail_unless(cert.sublinear_ok, "sublinear rate");
    outcome.fail_unless(cert.linear_ok, "linear rate");
    outcome.fail_unless(strong, "strong convexity bound");
    outcome.fail_unless(stable, "potential stability bound");
    outcome.write_text(trace_path(&a.trace_out, out), &trace.to_csv(Some(&cert.rate)))?;
    outcome.write_json(out.join("certificate.json"), &cert)?;
    Ok(outcome)
}

#[derive(Serialize)]
struct LatentCertificate {
    rate_ok: bool,
    one_step_ahead_ok: bool,
    monotone: bool,
    reference: LatentReference,
    rate: EmRateReport,
}

fn latent_em(a: &LatentEmArgs, out: &Path) -> Result<Outcome, Failure> {
    let nu = read_measure(&a.obs)?;
    let mu0 = read_measure(&a.init)?;
    let p = match (&a.kernel, &a.gibbs_cost, a.epsilon) {
        (Some(path), _, _) => {
            let k = ConditionalKernel::new(read_matrix(path)?).map_err(|e| input_error(path, e))?;
            LatentProblem::new(k, nu, mu0)?
        }
        (None, Some(path), Some(eps)) => LatentProblem::from_gibbs(&read_matrix(path)?, eps, nu, mu0)?,
        (None, Some(_), None) => return Err(Failure::Config("--gibbs-cost needs --epsilon".into())),
        (None, None, _) => return Err(Failure::Config("one of --kernel or --gibbs-cost is required".into())),
    };
    let trace = run_latent_em(&p, a.iters)?;
    let mut outcome = Outcome::new();
    if !a.certify {
        outcome.write_text(trace_path(&a.trace_out, out), &trace.to_csv(None))?;
        return Ok(outcome);
    }
    let reference = match reference_latent(&p, 1e-9) {
        Err(Error::OracleDisagreement { what, gap }) => {
            return Err(Failure::Certificate(format!("{what} differ by {gap:e}")));
        }
        r => r?,
    };
    let rate = em_rate_certificate(&trace, &reference.mu_star, &p)?;
    let monotone = trace.records.windows(2).all(|w| w[1].objective <= w[0].objective + 1e-12);
    let cert = LatentCertificate { rate_ok: rate.ok, one_step_ahead_ok: rate.shifted_ok, monotone, reference, rate };
    outcome.fail_unless(cert.rate_ok, "latent EM rate");
    outcome.fail_unless(monotone, "monotone descent");
    outcome.write_text(trace_path(&a.trace_out, out), &trace.to_csv(Some(&cert.rate)))?;
    outcome.write_json(out.join("certificate.json"), &cert)?;
    Ok(outcome)
}

#[derive(Serialize)]
struct MmdCertificate {
    smooth: f64,
    rate_ok: bool,
    monotone: bool,
    relative_smoothness_ok: bool,
    worst_rate_excess: f64,
    worst_smoothness_residual: f64,
}

fn mmd_md(a: &MmdArgs, out: &Path) -> Result<Outcome, Failure> {
    let gram = read_matrix(&a.gram)?;
    let target = read_measure(&a.target)?;
    let mu0 = read_measure(&a.init)?;
    let smooth = a.smooth.unwrap_or(4.0 * gram.max_diagonal());
    let f = Objective::MmdToTarget { gram, target: target.clone() };
    let phi = BregmanPotential::entropy(mu0.len());
    let md = MdConfig::new(smooth, 0.0, a.iters, Constraint::Simplex)?;
    let trace = run_md(&f, &phi, &mu0, Some(&target), &md)?;
    let mut outcome = Outcome::new();
    outcome.write_text(trace_path(&a.trace_out, out), &trace.to_csv())?;
    if !a.certify {
        return Ok(outcome);
    }
    // The target is a minimizer with value zero, so the sublinear rate
    // applies with ν = target.
    let d0 = bregman(&phi, target.weights(), mu0.weights())?.require_finite("D(target|μ0)")?;
    let mut worst_rate_excess = f64::NEG_INFINITY;
    for r in &trace.records[1..] {
        let bound = rate_bound(0.0, smooth, d0, r.n)?;
        worst_rate_excess = worst_rate_excess.max(r.objective - bound);
    }
    let monotone = trace.records.windows(2).all(|w| w[1].objective <= w[0].objective + 1e-12);
    let mut worst_smoothness_residual = f64::INFINITY;
    for w in trace.iterates.windows(2) {
        for (x, y) in [(&w[0], &w[1]), (&w[1], &w[0])] {
            let r = equivalence_check_iii(&f, &phi, x.weights(), y.weights(), smooth)?;
            worst_smoothness_residual = worst_smoothness_residual.min(r);
        }
    }
    let cert = MmdCertificate {
        smooth,
        rate_ok: trace.records.len() < 2 || worst_rate_excess <= 1e-9,
        monotone,
        relative_smoothness_ok: trace.iterates.len() < 2 || worst_smoothness_residual >= -1e-9,
        worst_rate_excess,
        worst_smoothness_residual,
    };
    outcome.fail_unless(cert.rate_ok, "MMD rate");
    outcome.fail_unless(monotone, "monotone descent");
    outcome.fail_unless(cert.relative_smoothness_ok, "relative smoothness");
    outcome.write_json(out.join("certificate.json"), &cert)?;
    Ok(outcome)
}

fn verify(a: &VerifyArgs, seed: u64, out: &Path) -> Result<Outcome, Failure> {
    let report = if a.only.is_empty() {
        run_battery(seed)
    } else {
        if let Some(bad) = a.only.iter().find(|id| !(1..=12).contains(*id)) {
            return Err(Failure::Config(format!("criterion {bad} does not exist (1 to 12)")));
        }
        let start = std::time::Instant::now();
        let criteria: Vec<_> = a.only.iter().map(|&id| run_criterion(id, seed)).collect();
        VerifyReport {
            seed,
            prng: instance::PRNG_NAME,
            passed: criteria.iter().all(|c| c.passed),
            criteria,
            elapsed_secs: start.elapsed().as_secs_f64(),
        }
    };
    for c in &report.criteria {
        println!("{}", c.summary_line());
    }
    let mut outcome = Outcome::new();
    let failed: Vec<String> = report.criteria.iter().filter(|c| !c.passed).map(|c| c.id.to_string()).collect();
    outcome.fail_unless(failed.is_empty(), &format!("criteria {}", failed.join(", ")));
    outcome.write_json(out.join("verify_report.json"), &report)?;
    Ok(outcome)
}

fn gen(a: &GenArgs, seed: u64, out: &Path) -> Result<Outcome, Failure> {
    let mut rng = instance::rng(seed);
    let n = a.n;
    let m = a.m.unwrap_or(n);
    let mut outcome = Outcome::new();
    match a.problem {
        GenKind::Eot => {
            let cost = instance::uniform_cost(&mut rng, n, m)?;
            let mu = instance::dirichlet(&mut rng, n)?;
            let nu = instance::dirichlet(&mut rng, m)?;
            outcome.write_json(out.join("cost.json"), &cost)?;
            outcome.write_json(out.join("mu.json"), &mu.weights())?;
            outcome.write_json(out.join("nu.json"), &nu.weights())?;
        }
        GenKind::Latent => {
            let kernel = instance::dirichlet_kernel(&mut rng, n, m)?;
            let obs = instance::dirichlet(&mut rng, m)?;
            let init = instance::dirichlet(&mut rng, n)?;
            outcome.write_json(out.join("kernel.json"), kernel.matrix())?;
            outcome.write_json(out.join("obs.json"), &obs.weights())?;
            outcome.write_json(out.join("init.json"), &init.weights())?;
        }
        GenKind::Mmd => {
            let gram = instance::gaussian_gram(&mut rng, n)?;
            let target = instance::dirichlet(&mut rng, n)?;
            let init = instance::dirichlet(&mut rng, n)?;
            outcome.write_json(out.join("gram.json"), &gram)?;
            outcome.write_json(out.join("target.json"), &target.weights())?;
            outcome.write_json(out.join("init.json"), &init.weights())?;
        }
    }
    Ok(outcome)
}
