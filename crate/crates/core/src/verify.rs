//! The verification battery: oracle agreement first, then every certified
//! inequality and identity on seeded random instances.
//!
//! Each criterion returns a [`CriterionReport`] with the number of checks,
//! the largest excess `lhs − (rhs + slack)` seen (negative when every check
//! passed) and free-form notes. [`run_battery`] runs the oracle gate first and
//! skips the certificate criteria when it fails.

use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use crate::divergences::{
    bregman, equivalence_check_iii, kl, kl_weights, BregmanFrom, BregmanPotential, Functional, Objective, Sum,
};
use crate::em::{e_step, em_rate_certificate, first_order_residual, forward, rl_step, run_latent_em, LatentProblem};
use crate::error::Result;
use crate::instance::{self, InstanceRng};
use crate::matrix::Matrix;
use crate::measures::{
    disintegrate, marginal_y, tv_norm, tv_slices, ConditionalKernel, Coupling, DiscreteMeasure,
};
use crate::mirror_descent::{md_step, rate_bound, run_md, three_point_residual, Constraint, MdConfig};
use crate::numeric::max_rel_diff;
use crate::oracles::{
    convexity_probe, fd_directional_derivative, reference_eot, reference_latent, subproblem_argmin_oracle,
    subproblem_value, FdSchedule,
};
use crate::sinkhorn::{
    contraction_check, rate_certificate, run_sinkhorn, sinkhorn_iteration, stability_check, step_cols, EotProblem,
    SinkhornRateReport, SinkhornTrace,
};

/// Total time budget of the battery, in seconds.
pub const BATTERY_TIME_LIMIT: f64 = 300.0;

#[derive(Debug, Clone, Serialize)]
pub struct CriterionReport {
    pub id: u8,
    pub title: String,
    pub passed: bool,
    pub checks: usize,
    pub failures: usize,
    /// Largest `lhs − (rhs + slack)` over all checks.
    pub worst_excess: f64,
    pub elapsed_secs: f64,
    pub time_limit_secs: Option<f64>,
    pub notes: Vec<String>,
}

impl CriterionReport {
    pub fn summary_line(&self) -> String {
        let limit = self.time_limit_secs.map(|t| format!(" (limit {t:.0} s)")).unwrap_or_default();
        format!(
            "[{}] criterion {:>2}: {} ({} checks, {} failures, worst excess {:.3e}, {:.2} s{limit})",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.checks,
            self.failures,
            self.worst_excess,
            self.elapsed_secs,
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub prng: &'static str,
    pub criteria: Vec<CriterionReport>,
    pub elapsed_secs: f64,
    pub passed: bool,
}

#[derive(Default)]
struct Tally {
    checks: usize,
    failures: usize,
    worst: f64,
    notes: Vec<String>,
}

impl Tally {
    fn new() -> Self {
        Self { worst: f64::NEG_INFINITY, ..Default::default() }
    }

    /// Records `lhs ≤ rhs + slack`.
    fn le(&mut self, lhs: f64, rhs: f64, slack: f64, ctx: impl FnOnce() -> String) {
        let excess = lhs - (rhs + slack);
        self.record(lhs <= rhs + slack, excess, ctx);
    }

    fn holds(&mut self, ok: bool, excess: f64, ctx: impl FnOnce() -> String) {
        self.record(ok, excess, ctx);
    }

    fn record(&mut self, ok: bool, excess: f64, ctx: impl FnOnce() -> String) {
        self.checks += 1;
        if excess.is_nan() {
            self.worst = f64::INFINITY;
        } else {
            self.worst = self.worst.max(excess);
        }
        if !ok {
            self.failures += 1;
            if self.failures <= 5 {
                self.notes.push(format!("failed: {}", ctx()));
            }
        }
    }

    fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }
}

pub const TITLES: [&str; 12] = [
    "mirror descent rate certificate, KL objective with entropy potential",
    "three-point inequality",
    "one Sinkhorn iteration equals one mirror descent step",
    "Sinkhorn sublinear rate",
    "Sinkhorn linear rate",
    "soft c-transform contraction",
    "potential stability and strong convexity along Sinkhorn traces",
    "latent EM sublinear rate",
    "Richardson-Lucy degenerate kernels and mass conservation",
    "MMD relative smoothness and monotone descent",
    "structural identities",
    "oracle gate",
];

const TIME_LIMITS: [Option<f64>; 12] =
    [Some(10.0), Some(5.0), Some(10.0), Some(60.0), None, None, None, Some(60.0), None, None, None, None];

fn criterion_seed(seed: u64, id: u8) -> InstanceRng {
    instance::rng(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(id as u64))
}

/// Runs criterion `id` (1 to 12) on instances derived from `seed`.
pub fn run_criterion(id: u8, seed: u64) -> CriterionReport {
    assert!((1..=12).contains(&id), "criteria are numbered 1 to 12");
    let start = Instant::now();
    let mut rng = criterion_seed(seed, id);
    let mut t = Tally::new();
    let outcome = match id {
        1 => c1_md_rate(&mut rng, &mut t),
        2 => c2_three_point(&mut rng, &mut t),
        3 => c3_sinkhorn_is_md(&mut rng, &mut t),
        4 => c4_sinkhorn_sublinear(&mut criterion_seed(seed, 4), &mut t),
        5 => c5_sinkhorn_linear(&mut criterion_seed(seed, 4), &mut t),
        6 => c6_contraction(&mut rng, &mut t),
        7 => c7_stability(&mut criterion_seed(seed, 4), &mut t),
        8 => c8_latent_rate(&mut rng, &mut t),
        9 => c9_richardson_lucy(&mut rng, &mut t),
        10 => c10_mmd(&mut rng, &mut t),
        11 => c11_structural(&mut rng, &mut t),
        _ => c12_oracle_gate(&mut rng, &mut t),
    };
    if let Err(e) = outcome {
        t.failures += 1;
        t.worst = f64::INFINITY;
        t.note(format!("error: {e}"));
    }
    let elapsed_secs = start.elapsed().as_secs_f64();
    let time_limit_secs = TIME_LIMITS[id as usize - 1];
    let in_time = time_limit_secs.map_or(true, |lim| elapsed_secs < lim);
    if !in_time {
        t.note(format!("exceeded the time limit: {elapsed_secs:.2} s"));
    }
    CriterionReport {
        id,
        title: TITLES[id as usize - 1].into(),
        passed: t.failures == 0 && t.checks > 0 && in_time,
        checks: t.checks,
        failures: t.failures,
        worst_excess: t.worst,
        elapsed_secs,
        time_limit_secs,
        notes: t.notes,
    }
}

/// Runs the oracle gate, then criteria 1 to 11, then checks the total time.
/// Certificate criteria are reported as failed without running when the
/// gate fails.
pub fn run_battery(seed: u64) -> VerifyReport {
    let start = Instant::now();
    let mut gate = run_criterion(12, seed);
    let mut criteria = Vec::with_capacity(12);
    for id in 1..=11 {
        if gate.passed {
            let r = run_criterion(id, seed);
            log::info!("{}", r.summary_line());
            criteria.push(r);
        } else {
            criteria.push(CriterionReport {
                id,
                title: TITLES[id as usize - 1].into(),
                passed: false,
                checks: 0,
                failures: 0,
                worst_excess: f64::NAN,
                elapsed_secs: 0.0,
                time_limit_secs: TIME_LIMITS[id as usize - 1],
                notes: vec!["skipped: oracle gate failed".into()],
            });
        }
    }
    let elapsed_secs = start.elapsed().as_secs_f64();
    gate.time_limit_secs = Some(BATTERY_TIME_LIMIT);
    if elapsed_secs >= BATTERY_TIME_LIMIT {
        gate.passed = false;
        gate.notes.push(format!("battery took {elapsed_secs:.1} s"));
    }
    gate.notes.push(format!("whole battery: {elapsed_secs:.2} s"));
    log::info!("{}", gate.summary_line());
    criteria.push(gate);
    let passed = criteria.iter().all(|c| c.passed);
    VerifyReport { seed, prng: instance::PRNG_NAME, criteria, elapsed_secs, passed }
}

fn slack(scale: f64) -> f64 {
    1e-9 + 1e-9 * scale.abs()
}

fn entropy_on(n: usize) -> BregmanPotential {
    BregmanPotential::entropy(n)
}

fn c1_md_rate(rng: &mut InstanceRng, t: &mut Tally) -> Result<()> {
    for inst in 0..100 {
        let n = rng.gen_range(2..=50);
        let tau = instance::dirichlet(rng, n)?;
        let mu0 = instance::dirichlet(rng, n)?;
        let refs = (0..10).map(|_| instance::dirichlet(rng, n)).collect::<Result<Vec<_>>>()?;
        let f = Objective::KlToTarget { target: tau.clone() };
        let phi = BregmanPotential::neg_entropy(tau);
        // L = l = 1 is the exact pair; larger L with l = 1 exercises the
        // linear rate away from its degenerate limit.
        for big_l in [1.0, 2.0, 4.0] {
            let cfg = MdConfig::new(big_l, 1.0, 100, Constraint::Simplex)?;
            let trace = run_md(&f, &phi, &mu0, None, &cfg)?;
            for w in trace.records.windows(2) {
                t.le(w[1].objective, w[0].objective, 1e-10, || format!("instance {inst}: descent at n = {}", w[1].n));
            }
            for (k, nu) in refs.iter().enumerate() {
                let d0 = bregman(&phi, nu.weights(), mu0.weights())?.require_finite("D(ν|μ0)")?;
                let f_ref = f.value(nu.weights())?.require_finite("F(ν)")?;
                for r in &trace.records[1..] {
                    let bound = rate_bound(1.0, big_l, d0, r.n)?;
                    t.le(r.objective - f_ref, bound, 1e-9, || {
                        format!("instance {inst}, L = {big_l}, reference {k}, n = {}", r.n)
                    });
                }
            }
        }
    }
    Ok(())
}

fn c2_three_point(rng: &mut InstanceRng, t: &mut Tally) -> Result<()> {
    for inst in 0..1000 {
        let n = rng.gen_range(2..=20);
        let mu = instance::dirichlet(rng, n)?;
        let big_l: f64 = rng.gen_range(0.5..4.0);
        let grad: Vec<f64> = if inst % 2 == 0 {
            let target = instance::dirichlet(rng, n)?;
            Objective::KlToTarget { target }.first_variation(mu.weights())?
        } else {
            (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect()
        };
        let g = Objective::Linear { coefficients: grad.iter().map(|v| v / big_l).collect() };
        let phi = entropy_on(n);
        let nu_bar = md_step(&g, &phi, &mu, &MdConfig::new(1.0, 0.0, 1, Constraint::Simplex)?)?;
        let nu = if inst % 10 == 0 { mu.clone() } else { instance::dirichlet(rng, n)? };
        let r = three_point_residual(&g, &phi, mu.weights(), nu.weights(), nu_bar.weights())?;
        t.le(-r, 0.0, 1e-9, || format!("instance {inst}: residual {r:e}"));
    }
    Ok(())
}

fn c3_sinkhorn_is_md(rng: &mut InstanceRng, t: &mut Tally) -> Result<()> {
    for inst in 0..200 {
        let (n, m) = (rng.gen_range(2..=20), rng.gen_range(2..=20));
        let eps = 10f64.powf(rng.gen_range(-1.0..1.0));
        let p = instance::eot_problem(rng, n, m, eps)?;
        let pi = if inst % 2 == 0 {
            let k = rng.gen_range(0..5);
            run_sinkhorn(&p, None, k)?.coupling(k, &p)
        } else {
            step_cols(&instance::dirichlet_coupling(rng, n, m)?, p.nu())?
        };
        let direct = sinkhorn_iteration(&pi, p.mu(), p.nu())?;
        let f = Objective::SinkhornMarginal { target_x: p.mu().clone(), cols: m };
        let cfg = MdConfig::new(1.0, 0.0, 1, Constraint::FixedMarginalY(p.nu().clone()))?;
        let md = md_step(&f, &entropy_on(n * m), &pi.to_measure(), &cfg)?;
        let gap = max_rel_diff(direct.as_slice(), md.weights());
        t.le(gap, 0.0, 1e-12, || format!("instance {inst} ({n}x{m}, ε = {eps:.3}): relative gap {gap:e}"));
    }
    Ok(())
}

struct SinkhornCase {
    p: EotProblem,
    trace: SinkhornTrace,
    pi_star: Coupling,
    report: SinkhornRateReport,
}

/// 50 instances of size 10×10 cycling through ε ∈ {0.1, 1, 10}, each with
/// 200 Sinkhorn iterations and an oracle optimum.
fn sinkhorn_battery(rng: &mut InstanceRng) -> Result<Vec<SinkhornCase>> {
    (0..50)
        .map(|k| {
            let eps = [0.1, 1.0, 10.0][k % 3];
            let p = instance::eot_problem(rng, 10, 10, eps)?;
            let pi_star = reference_eot(&p, 1e-13)?.coupling;
            let trace = run_sinkhorn(&p, None, 200)?;
            let report = rate_certificate(&trace, &pi_star, &p)?;
            Ok(SinkhornCase { p, trace, pi_star, report })
        })
        .collect()
}

fn c4_sinkhorn_sublinear(rng: &mut InstanceRng, t: &mut Tally) -> Result<()> {
    for (k, case) in sinkhorn_battery(rng)?.iter().enumerate() {
        for row in &case.report.rows {
            t.holds(row.sublinear.ok, row.sublinear.lhs - row.sublinear.rhs - slack(row.sublinear.lhs), || {
                format!("instance {k} (ε = {}), n = {}", case.p.epsilon(), row.n)
            });
        }
    }
    Ok(())
}

fn c5_sinkhorn_linear(rng: &mut InstanceRng, t: &mut Tally) -> Result<()> {
    let cases = sinkhorn_battery(rng)?;
    let mut displayed_fail = 0;
    for (k, case) in cases.iter().enumerate() {
        if !case.report.displayed_ok {
            displayed_fail += 1;
        }
        if case.p.epsilon() < 1.0 {
            continue;
        }
        for row in &case.report.rows {
            t.holds(row.linear.ok, row.linear.lhs - row.linear.rhs - slack(row.linear.lhs), || {
                format!("instance {k} (ε = {}), n = {}", case.p.epsilon(), row.n)
            });
        }
    }
    t.note(format!(
        "typeset base (1 + 4e^(-3Dc/ε)) violated on {displayed_fail} of {} instances (informational)",
        cases.len()
    ));
    Ok(())
}

fn c6_contraction(rng: &mut InstanceRng, t: &mut Tally) -> Result<()> {
    for inst in 0..20 {
        let (n, m) = (rng.gen_range(2..=10), rng.gen_range(2..=10));
        let eps = 10f64.powf(rng.gen_range(-1.0..1.0));
        let cost = instance::uniform_cost(rng, n, m)?;
        let mu = instance::dirichlet(rng, n)?;
        for pair in 0..50 {
            let amp = 10f64.powf(rng.gen_range(-1.0..1.0));
            let f: Vec<f64> = (0..n).map(|_| amp * rng.gen_range(-1.0..1.0)).collect();
            let f_tilde: Vec<f64> = if pair % 2 == 0 {
                f.iter().map(|v| v + amp * rng.gen_range(-0.1..0.1)).collect()
            } else {
                (0..n).map(|_| amp * rng.gen_range(-1.0..1.0)).collect()
            };
            let r = contraction_check(&f, &f_tilde, &mu, &cost, eps)?;
            t.holds(r.ok, r.lhs - r.rhs - 1e-9, || format!("instance {inst}, pair {pair}: {} > {}", r.lhs, r.rhs));
        }
    }
    Ok(())
}

fn c7_stability(rng: &mut InstanceRng, t: &mut Tally) -> Result<()> {
    for (k, case) in sinkhorn_battery(rng)?.iter().enumerate() {
        let couplings: Vec<Coupling> = (0..case.trace.len()).map(|n| case.trace.coupling(n, &case.p)).collect();
        let mut check = |a: &Coupling, b: &Coupling, what: &str, n: usize| -> Result<()> {
            let r = stability_check(a, b, &case.p)?;
            for (name, b) in [("strong convexity", r.strong_convexity), ("potentials", r.potentials)] {
                t.holds(b.ok, b.lhs - b.rhs - slack(b.lhs), || {
                    format!("instance {k} (ε = {}), {what} n = {n}: {name} {} > {}", case.p.epsilon(), b.lhs, b.rhs)
                });
            }
            Ok(())
        };
        for n in 0..couplings.len() - 1 {
            check(&couplings[n + 1], &couplings[n], "consecutive", n)?;
            check(&couplings[n], &case.pi_star, "iterate vs optimum", n)?;
            check(&case.pi_star, &couplings[n], "optimum vs iterate", n)?;
        }
    }
    Ok(())
}

fn c8_latent_rate(rng: &mut InstanceRng, t: &mut Tally) -> Result<()> {
    let mut shifted_fail = 0;
    let mut max_iters = 0;
    for inst in 0..50 {
        let p = instance::latent_problem(rng, 10, 15)?;
        let reference = reference_latent(&p, 1e-9)?;
        max_iters = max_iters.max(reference.cross_check_iterations);
        t.le(reference.disagreement, 0.0, 1e-8, || format!("instance {inst}: oracle disagreement"));
        let trace = run_latent_em(&p, 500)?;
        for w in trace.records.windows(2) {
            t.le(w[1].objective, w[0].objective, 1e-10, || format!("instance {inst}: descent at n = {}", w[1].n));
        }
        let rep = em_rate_certificate(&trace, &reference.mu_star, &p)?;
        t.le((rep.numerator - rep.coupling_divergence).abs(), 0.0, 1e-10 * (1.0 + rep.numerator.abs()), || {
            format!("instance {inst}: numerator {} vs KL(π*|π0) {}", rep.numerator, rep.coupling_divergence)
        });
        for row in &rep.rows {
            t.holds(row.ok, row.lhs - row.bound - 1e-8 - 1e-8 * row.lhs.abs(), || {
                format!("instance {inst}, n = {}: {} > {}", row.n, row.lhs, row.bound)
            });
        }
        if !rep.shifted_ok {
            shifted_fail += 1;
        }
    }
    t.note(format!("one-step-ahead form failed on {shifted_fail} of 50 instances"));
    t.note(format!("longest Richardson-Lucy cross-check: {max_iters} iterations"));
    Ok(())
}

fn c9_richardson_lucy(rng: &mut InstanceRng, t: &mut Tally) -> Result<()> {
    for inst in 0..50 {
        let n = rng.gen_range(2..=20);
        let nu = instance::dirichlet(rng, n)?;
        let mu0 = instance::dirichlet(rng, n)?;
        let identity = ConditionalKernel::new(Matrix::identity(n)?)?;
        let p = LatentProblem::with_degenerate_kernel(identity, nu.clone(), mu0.clone())?;
        let mu1 = rl_step(&mu0, &p)?;
        let tv = tv_slices(mu1.weights(), nu.weights());
        t.le(tv, 0.0, 1e-12, || format!("identity instance {inst}: TV {tv:e}"));

        let m = rng.gen_range(2..=20);
        let uniform = ConditionalKernel::new(Matrix::filled(n, m, 1.0 / m as f64)?)?;
        let p = LatentProblem::new(uniform, instance::dirichlet(rng, m)?, mu0.clone())?;
        let mu1 = rl_step(&mu0, &p)?;
        let tv = tv_slices(mu1.weights(), mu0.weights());
        t.le(tv, 0.0, 1e-13, || format!("uniform instance {inst}: TV {tv:e}"));
    }
    for inst in 0..20 {
        let (n, m) = (rng.gen_range(2..=30), rng.gen_range(2..=30));
        let p = instance::latent_problem(rng, n, m)?;
        let trace = run_latent_em(&p, 200)?;
        for r in &trace.records {
            t.le(r.mass_residual, 0.0, 1e-13, || format!("instance {inst}, n = {}: mass drift {:e}", r.n, r.mass_residual));
        }
    }
    Ok(())
}

fn c10_mmd(rng: &mut InstanceRng, t: &mut Tally) -> Result<()> {
    for inst in 0..10 {
        let n = rng.gen_range(2..=30);
        let gram = instance::gaussian_gram(rng, n)?;
        let big_l = 4.0 * gram.max_diagonal();
        let target = instance::dirichlet(rng, n)?;
        let f = Objective::MmdToTarget { gram: gram.clone(), target };
        let phi = entropy_on(n);
        for pair in 0..50 {
            let mu = instance::dirichlet(rng, n)?;
            let nu = instance::dirichlet(rng, n)?;
            let r = equivalence_check_iii(&f, &phi, mu.weights(), nu.weights(), big_l)?;
            t.le(-r, 0.0, 1e-9, || format!("gram {inst}, pair {pair}: residual {r:e}"));
        }
        let mu0 = instance::dirichlet(rng, n)?;
        let trace = run_md(&f, &phi, &mu0, None, &MdConfig::new(big_l, 0.0, 100, Constraint::Simplex)?)?;
        for w in trace.records.windows(2) {
            t.le(w[1].objective, w[0].objective, 1e-10, || format!("gram {inst}: descent at n = {}", w[1].n));
        }
    }
    Ok(())
}

fn rel_eq(t: &mut Tally, a: f64, b: f64, ctx: impl FnOnce() -> String) {
    t.le((a - b).abs(), 0.0, 1e-10 * a.abs().max(b.abs()) + 1e-14, ctx);
}

fn c11_structural(rng: &mut InstanceRng, t: &mut Tally) -> Result<()> {
    for inst in 0..500 {
        let (n, m) = (rng.gen_range(2..=8), rng.gen_range(2..=8));
        let pi = instance::dirichlet_coupling(rng, n, m)?;
        let pi_bar = instance::dirichlet_coupling(rng, n, m)?;
        let joint = kl(&pi.to_measure(), &pi_bar.to_measure())?.require_finite("KL(π|π̄)")?;
        let (px, k) = disintegrate(&pi)?;
        let (px_bar, k_bar) = disintegrate(&pi_bar)?;
        let marg = kl(&px, &px_bar)?.require_finite("KL(p_Xπ|p_Xπ̄)")?;
        let cond: f64 = (0..n)
            .map(|i| {
                let a: Vec<f64> = (0..m).map(|j| k.get(i, j)).collect();
                let b: Vec<f64> = (0..m).map(|j| k_bar.get(i, j)).collect();
                px.weights()[i] * kl_weights(&a, &b).finite().unwrap_or(f64::INFINITY)
            })
            .sum();
        rel_eq(t, joint, marg + cond, || format!("disintegration {inst}: {joint} vs {}", marg + cond));
        t.le(marg, joint, 1e-12, || format!("data processing {inst}"));

        let mu = instance::dirichlet(rng, n)?;
        let nu = instance::dirichlet(rng, n)?;
        let tv = tv_norm(&mu, &nu)?;
        let d = kl(&mu, &nu)?.require_finite("KL(μ|ν)")?;
        t.le(tv * tv, 2.0 * d, 1e-12, || format!("Pinsker {inst}"));

        let rho = instance::positive_measure(rng, n)?;
        let as_bregman = bregman(&BregmanPotential::neg_entropy(rho), mu.weights(), nu.weights())?
            .require_finite("D_φ(μ|ν)")?;
        rel_eq(t, d, as_bregman, || format!("KL as Bregman {inst}: {d} vs {as_bregman}"));

        let a = instance::positive_measure(rng, n)?;
        let b = instance::positive_measure(rng, n)?;
        let xi = instance::positive_measure(rng, n)?;
        let gram = instance::gaussian_gram(rng, n)?;
        let potentials = [BregmanPotential::entropy(n), BregmanPotential::SquaredNorm, BregmanPotential::mmd_kernel(gram)?];
        for (k, phi) in potentials.iter().enumerate() {
            let base = phi.divergence(a.weights(), b.weights())?.require_finite("D_φ")?;
            let shifted = BregmanFrom { base: phi, anchor: xi.weights().to_vec() };
            let again = bregman(&shifted, a.weights(), b.weights())?.require_finite("D_{D_φ(·|ξ)}")?;
            rel_eq(t, base, again, || format!("idempotence {inst}, potential {k}: {base} vs {again}"));
        }
        let (p0, p1) = (&potentials[0], &potentials[2]);
        let sum = bregman(&Sum(p0, p1), a.weights(), b.weights())?.require_finite("D_{φ+ψ}")?;
        let parts = p0.divergence(a.weights(), b.weights())?.require_finite("D_φ")?
            + p1.divergence(a.weights(), b.weights())?.require_finite("D_ψ")?;
        rel_eq(t, sum, parts, || format!("linearity {inst}: {sum} vs {parts}"));

        // Sinkhorn objective: D_F(π̃|π) = KL(p_Xπ̃|p_Xπ) ≤ KL(π̃|π), and
        // KL(π̃|π) = D_Fsink(π̃|π) + D_FEMK(π̃|π).
        let target = instance::dirichlet(rng, n)?;
        let kernel = instance::dirichlet_kernel(rng, n, m)?;
        let fsink = Objective::SinkhornMarginal { target_x: target, cols: m };
        let femk = Objective::Femk { kernel };
        let d_sink = bregman(&fsink, pi.as_slice(), pi_bar.as_slice())?.require_finite("D_Fsink")?;
        let d_em = bregman(&femk, pi.as_slice(), pi_bar.as_slice())?.require_finite("D_FEMK")?;
        rel_eq(t, d_sink, marg, || format!("Sinkhorn Bregman {inst}: {d_sink} vs {marg}"));
        t.le(d_sink, joint, 1e-12, || format!("Sinkhorn relative smoothness {inst}"));
        rel_eq(t, joint, d_sink + d_em, || format!("EM decomposition {inst}: {joint} vs {}", d_sink + d_em));
    }
    Ok(())
}

fn c12_oracle_gate(rng: &mut InstanceRng, t: &mut Tally) -> Result<()> {
    // Closed-form steps against the iterative subproblem solver.
    for inst in 0..200 {
        let big_l: f64 = rng.gen_range(0.5..4.0);
        let n = rng.gen_range(2..=16);
        let coeffs = |rng: &mut InstanceRng, k: usize| -> Vec<f64> { (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect() };

        let mu = instance::positive_measure(rng, n)?;
        let g = coeffs(rng, n);
        check_branch(t, &g, &entropy_on(n), &mu, big_l, Constraint::Unconstrained, inst)?;

        let mu = instance::dirichlet(rng, n)?;
        let g = if inst % 2 == 0 {
            coeffs(rng, n)
        } else {
            let gram = instance::gaussian_gram(rng, n)?;
            let target = instance::dirichlet(rng, n)?;
            Objective::MmdToTarget { gram, target }.first_variation(mu.weights())?
        };
        check_branch(t, &g, &entropy_on(n), &mu, big_l, Constraint::Simplex, inst)?;

        let (rows, cols) = (rng.gen_range(2..=8), rng.gen_range(2..=8));
        let pi = instance::dirichlet_coupling(rng, rows, cols)?;
        let nu = instance::dirichlet(rng, cols)?;
        let g = if inst % 2 == 0 {
            coeffs(rng, rows * cols)
        } else {
            let target_x = instance::dirichlet(rng, rows)?;
            Objective::SinkhornMarginal { target_x, cols }.first_variation(pi.as_slice())?
        };
        check_branch(t, &g, &entropy_on(rows * cols), &pi.to_measure(), big_l, Constraint::FixedMarginalY(nu), inst)?;

        let mu = instance::positive_measure(rng, n)?;
        let g = coeffs(rng, n);
        check_branch(t, &g, &BregmanPotential::SquaredNorm, &mu, big_l, Constraint::Unconstrained, inst)?;
    }

    // First variations against difference quotients, convexity on segments.
    let sched = FdSchedule::default();
    for inst in 0..50 {
        let (n, m) = (rng.gen_range(2..=6), rng.gen_range(2..=6));
        let x = instance::dirichlet(rng, n * m)?;
        let y = instance::dirichlet(rng, n * m)?;
        let xi: Vec<f64> = x.weights().iter().zip(y.weights()).map(|(a, b)| b - a).collect();
        let objectives: Vec<(&str, Box<dyn Functional>)> = vec![
            ("kl", Box::new(Objective::KlToTarget { target: instance::dirichlet(rng, n * m)? })),
            ("mmd", Box::new(Objective::MmdToTarget {
                gram: instance::gaussian_gram(rng, n * m)?,
                target: instance::dirichlet(rng, n * m)?,
            })),
            ("sinkhorn", Box::new(Objective::SinkhornMarginal { target_x: instance::dirichlet(rng, n)?, cols: m })),
            ("femk", Box::new(Objective::Femk { kernel: instance::dirichlet_kernel(rng, n, m)? })),
            ("entropy", Box::new(BregmanPotential::entropy(n * m))),
            ("squared_norm", Box::new(BregmanPotential::SquaredNorm)),
        ];
        for (name, f) in &objectives {
            let rep = fd_directional_derivative(f.as_ref(), x.weights(), &xi, &sched)?;
            let last = *rep.gaps.last().expect("nonempty schedule");
            let h = *sched.h_values().last().expect("nonempty schedule");
            t.le(last, 0.0, 1e3 * h * (1.0 + rep.analytic.abs()), || format!("fd {name} {inst}: gap {last:e}"));
            t.holds(rep.quotients_monotone(1e-9), 0.0, || format!("fd {name} {inst}: quotients not monotone"));
            let probe = convexity_probe(f.as_ref(), x.weights(), y.weights(), 101)?;
            t.le(-probe, 0.0, 1e-10, || format!("convexity {name} {inst}: {probe:e}"));
        }
    }

    // Reference solvers against long runs of the main solvers.
    for inst in 0..10 {
        let eps = [0.1, 1.0, 10.0][inst % 3];
        let p = instance::eot_problem(rng, 5, 5, eps)?;
        let oracle = reference_eot(&p, 1e-13)?;
        let tr = run_sinkhorn(&p, None, 20_000)?;
        let gap = max_rel_diff(tr.last_coupling(&p).as_slice(), oracle.coupling.as_slice());
        t.le(gap, 0.0, 1e-9, || format!("EOT reference {inst} (ε = {eps}): relative gap {gap:e}"));
    }
    let hand = EotProblem::new(
        Matrix::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]])?,
        1.0,
        DiscreteMeasure::uniform(2)?,
        DiscreteMeasure::uniform(2)?,
    )?;
    let oracle = reference_eot(&hand, 1e-14)?;
    let tr = run_sinkhorn(&hand, None, 60)?;
    let gap = tv_slices(tr.last_coupling(&hand).as_slice(), oracle.coupling.as_slice());
    t.le(gap, 0.0, 1e-12, || format!("2x2 EOT: gap {gap:e}"));
    for inst in 0..10 {
        let p = instance::latent_problem(rng, 6, 8)?;
        let r = reference_latent(&p, 1e-9)?;
        let res = first_order_residual(&r.mu_star, &p)?;
        t.le(res, 0.0, 1e-10, || format!("latent reference {inst}: residual {res:e}"));
        t.le(r.disagreement, 0.0, 1e-8, || format!("latent reference {inst}: disagreement {:e}", r.disagreement));
        let pushed = forward(p.kernel(), &r.mu_star)?;
        let pi = e_step(&r.mu_star, &p)?;
        let back = tv_slices(marginal_y(&pi).weights(), p.nu().weights());
        t.le(back, 0.0, 1e-13, || format!("latent reference {inst}: E-step marginal {back:e}"));
        t.holds(pushed.is_probability(), 0.0, || format!("latent reference {inst}: pushforward mass"));
    }
    Ok(())
}

fn check_branch(
    t: &mut Tally,
    g: &[f64],
    phi: &BregmanPotential,
    mu: &DiscreteMeasure,
    big_l: f64,
    constraint: Constraint,
    inst: usize,
) -> Result<()> {
    let label = match &constraint {
        Constraint::Unconstrained => "unconstrained",
        Constraint::Simplex => "simplex",
        Constraint::FixedMarginalY(_) => "fixed marginal",
    };
    let f = Objective::Linear { coefficients: g.to_vec() };
    let cfg = MdConfig::new(big_l, 0.0, 1, constraint.clone())?;
    let closed = md_step(&f, phi, mu, &cfg)?;
    let oracle = subproblem_argmin_oracle(g, phi, mu, big_l, &constraint)?;
    let v_closed = subproblem_value(g, phi, mu.weights(), big_l, closed.weights())?;
    let v_oracle = subproblem_value(g, phi, mu.weights(), big_l, oracle.weights())?;
    let gap = (v_closed - v_oracle).abs();
    t.le(gap, 0.0, 1e-9, || format!("{label} branch {inst}: objective gap {gap:e}"));
    let feas = constraint.residual(closed.weights());
    t.le(feas, 0.0, 1e-12, || format!("{label} branch {inst}: closed form infeasible by {feas:e}"));
    Ok(())
}
