//! Certification suites: each draws seeded random instances and records the
//! worst violation of every check it runs.
//!
//! Instance `i` of a suite seeded with `seed` uses seed `seed + i`, so a
//! failure reported at seed `s` replays with `--seed s --trials 1`.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::dp;
use crate::error::{Error, Result};
use crate::fr_ppo::{
    kkt_residual, parametrized_surrogate_step, prox_objective, prox_step_state, run_fr_ppo, three_point_check,
    IterateLog, SolverConfig, StepSize, SurrogateProblem,
};
use crate::geometry::{bregman_chi2, fr2_squared_densities, inequality_suite};
use crate::mdp::{Policy, ReferenceMeasure, SoftmaxPolicy, TabularMdp};
use crate::rng::Stream;
use crate::surrogates::{bound_report, surrogate_linear_ratio_form};

use super::instances::{
    random_instance, random_logits, random_policy, random_prox_instance, random_reference, random_simplex_point,
    MAX_ACTIONS, MAX_STATES,
};
use super::oracle::projected_gradient_step;

pub const IDENTITY_TOL: f64 = 1e-9;
pub const BOUND_TOL: f64 = 1e-9;
pub const ORDERING_TOL: f64 = 1e-12;
pub const RATIO_FORM_TOL: f64 = 1e-12;
pub const PROX_ORACLE_TOL: f64 = 1e-8;
pub const KKT_TOL: f64 = 1e-8;
pub const PROBE_TOL: f64 = 1e-12;
pub const THREE_POINT_TOL: f64 = 1e-10;
pub const IMPROVEMENT_TOL: f64 = 1e-12;
pub const POINTWISE_TOL: f64 = 1e-9;
pub const CONVERGENCE_TOL: f64 = 1e-9;
pub const GEOMETRY_TOL: f64 = 1e-12;
pub const FLAT_RATIO_RANGE: (f64, f64) = (1.8, 2.2);
pub const PARAMETRIZED_TOL: f64 = 1e-10;
pub const GRADIENT_REL_TOL: f64 = 1e-5;

/// Iterations per FR-PPO run in the improvement and convergence suites.
pub const RUN_ITERS: usize = 100;
pub const PROBES_PER_STEP: usize = 10_000;
pub const THREE_POINT_PROBES: usize = 1_000;
pub const MAX_PROX_ACTIONS: usize = 6;
/// Halvings of the flat-derivative step, starting from `1e-3`.
pub const FLAT_HALVINGS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Identity,
    Bounds,
    Improvement,
    Convergence,
    Prox,
    Geometry,
    Parametrized,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Identity,
        Suite::Bounds,
        Suite::Improvement,
        Suite::Convergence,
        Suite::Prox,
        Suite::Geometry,
        Suite::Parametrized,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Identity => "identity",
            Suite::Bounds => "bounds",
            Suite::Improvement => "improvement",
            Suite::Convergence => "convergence",
            Suite::Prox => "prox",
            Suite::Geometry => "geometry",
            Suite::Parametrized => "parametrized",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .iter()
            .copied()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown suite {s:?}")))
    }
}

/// Worst violation of one check. Every check is phrased as
/// `violation <= tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub runs: usize,
    pub max_violation: f64,
    pub tolerance: f64,
    /// Instance seed of the first failure.
    pub offending_seed: Option<u64>,
}

impl CheckResult {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            runs: 0,
            max_violation: f64::NEG_INFINITY,
            tolerance,
            offending_seed: None,
        }
    }

    fn record(&mut self, violation: f64, seed: u64) {
        self.runs += 1;
        if violation > self.max_violation || violation.is_nan() {
            self.max_violation = violation;
        }
        if self.offending_seed.is_none() && !(violation <= self.tolerance) {
            self.offending_seed = Some(seed);
        }
    }

    pub fn passed(&self) -> bool {
        self.offending_seed.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub trials: usize,
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn offending_seed(&self) -> Option<u64> {
        self.checks.iter().find_map(|c| c.offending_seed)
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "suite {} ({} trials, seed {})\n{:<28} {:>8} {:>14} {:>10}  status\n",
            self.suite, self.trials, self.seed, "check", "runs", "max_violation", "tolerance"
        );
        for c in &self.checks {
            let status = if c.passed() {
                "pass".to_string()
            } else {
                format!("FAIL (seed {})", c.offending_seed.unwrap_or(0))
            };
            out.push_str(&format!(
                "{:<28} {:>8} {:>14.3e} {:>10.1e}  {}\n",
                c.name, c.runs, c.max_violation, c.tolerance, status
            ));
        }
        out
    }
}

fn instance_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add(i as u64)
}

/// Runs `suite` over `trials` instances; zero trials pass vacuously.
pub fn cmd_verify(suite: Suite, trials: usize, seed: u64) -> Result<SuiteReport> {
    let checks = match suite {
        Suite::Identity => identity(trials, seed)?,
        Suite::Bounds => bounds(trials, seed)?,
        Suite::Improvement => improvement(trials, seed)?,
        Suite::Convergence => convergence(trials, seed)?,
        Suite::Prox => prox(trials, seed)?,
        Suite::Geometry => geometry(trials, seed)?,
        Suite::Parametrized => parametrized(trials, seed)?,
    };
    Ok(SuiteReport {
        suite,
        trials,
        seed,
        checks,
    })
}

fn identity(trials: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut pdl = CheckResult::new("performance_difference", IDENTITY_TOL);
    let mut flat = CheckResult::new("flat_derivative_ratio", 0.0);
    for i in 0..trials {
        let s = instance_seed(seed, i);
        let mut inst = random_instance(s, 1, MAX_STATES, MAX_ACTIONS)?;
        let n = inst.mdp.n_states();
        let pi = random_policy(&mut inst.rng, n, &inst.lambda, 1.0)?;
        let other = random_policy(&mut inst.rng, n, &inst.lambda, 1.0)?;
        let (lhs, rhs) = dp::performance_difference(&inst.mdp, &other, &pi, inst.mdp.rho())?;
        pdl.record((lhs - rhs).abs() / (1.0 + lhs.abs()), s);

        // The value is affine along mixtures when there is a single state,
        // so the curvature check draws its own instance with at least two.
        let mut inst = random_instance(s, 2, MAX_STATES, MAX_ACTIONS)?;
        let n = inst.mdp.n_states();
        let pi = random_policy(&mut inst.rng, n, &inst.lambda, 1.0)?;
        let other = random_policy(&mut inst.rng, n, &inst.lambda, 1.0)?;
        let worst = flat_derivative_ratio_excess(&inst.mdp, &pi, &other)?;
        flat.record(worst, s);
    }
    Ok(vec![pdl, flat])
}

/// Distance of the worst successive gap ratio from [`FLAT_RATIO_RANGE`]
/// over `eps = 1e-3 / 2^k`, `k = 0..=FLAT_HALVINGS`; nonpositive when every
/// ratio is inside.
pub fn flat_derivative_ratio_excess(mdp: &TabularMdp, pi: &Policy, other: &Policy) -> Result<f64> {
    let mut gaps = Vec::with_capacity(FLAT_HALVINGS + 1);
    for k in 0..=FLAT_HALVINGS {
        let eps = 1e-3 / f64::powi(2.0, k as i32);
        let (fd, analytic) = dp::flat_derivative_check(mdp, pi, other, mdp.rho(), eps)?;
        gaps.push((fd - analytic).abs());
    }
    let (lo, hi) = FLAT_RATIO_RANGE;
    Ok(gaps
        .windows(2)
        .map(|w| {
            let ratio = w[0] / w[1];
            if ratio.is_finite() {
                (lo - ratio).max(ratio - hi)
            } else {
                f64::INFINITY
            }
        })
        .fold(f64::NEG_INFINITY, f64::max))
}

fn bounds(trials: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut lower = CheckResult::new("lower_bounds", BOUND_TOL);
    let mut ordering = CheckResult::new("tightness_ordering", ORDERING_TOL);
    let mut ratio = CheckResult::new("ratio_form_agreement", RATIO_FORM_TOL);
    for i in 0..trials {
        let s = instance_seed(seed, i);
        let mut inst = random_instance(s, 1, MAX_STATES, MAX_ACTIONS)?;
        let n = inst.mdp.n_states();
        let pi = random_policy(&mut inst.rng, n, &inst.lambda, 1.0)?;
        let other = random_policy(&mut inst.rng, n, &inst.lambda, 1.0)?;
        // The identity suite's pair, plus a partial step towards it with
        // mixing weight in [1e-3, 1] so the linear term is not always swamped.
        let t = 10f64.powf(-3.0 * inst.rng.uniform());
        for new in [other.clone(), pi.mix(&other, t)?] {
            let report = bound_report(&inst.mdp, &new, &pi, inst.mdp.rho())?;
            lower.record(report.worst_bound_excess(), s);
            ordering.record(report.worst_ordering_excess(), s);
            let ratio_form = surrogate_linear_ratio_form(&inst.mdp, &new, &pi)?;
            ratio.record(
                (ratio_form - report.surrogate_linear).abs() / (1.0 + report.surrogate_linear.abs()),
                s,
            );
        }
    }
    Ok(vec![lower, ordering, ratio])
}

fn fr_ppo_run(s: u64) -> Result<IterateLog> {
    let mut inst = random_instance(s, 1, MAX_STATES, MAX_ACTIONS)?;
    let n = inst.mdp.n_states();
    let pi0 = random_policy(&mut inst.rng, n, &inst.lambda, 1.0)?;
    let config = SolverConfig {
        tau: StepSize::Auto,
        max_iters: RUN_ITERS,
        ..Default::default()
    };
    run_fr_ppo(&inst.mdp, &pi0, &config)
}

fn improvement(trials: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut monotone = CheckResult::new("monotone_improvement", IMPROVEMENT_TOL);
    let mut pointwise = CheckResult::new("pointwise_estimate", POINTWISE_TOL);
    for i in 0..trials {
        let s = instance_seed(seed, i);
        let log = fr_ppo_run(s)?;
        monotone.record(-log.worst_improvement(), s);
        pointwise.record(-log.min_pointwise_slack, s);
    }
    Ok(vec![monotone, pointwise])
}

fn convergence(trials: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut bound = CheckResult::new("gap_below_bound", CONVERGENCE_TOL);
    let mut rate = CheckResult::new("scaled_gap_below_constant", CONVERGENCE_TOL);
    for i in 0..trials {
        let s = instance_seed(seed, i);
        let log = fr_ppo_run(s)?;
        bound.record(log.worst_bound_excess(), s);
        rate.record(log.worst_rate_excess(), s);
    }
    Ok(vec![bound, rate])
}

fn prox(trials: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut oracle = CheckResult::new("oracle_agreement", PROX_ORACLE_TOL);
    let mut kkt = CheckResult::new("kkt_residual", KKT_TOL);
    let mut probes = CheckResult::new("random_probes", PROBE_TOL);
    let mut three_point = CheckResult::new("three_point", THREE_POINT_TOL);
    for i in 0..trials {
        let s = instance_seed(seed, i);
        let mut rng = Stream::new(s);
        let inst = random_prox_instance(&mut rng, MAX_PROX_ACTIONS)?;
        let (adv, pi, lambda, tau) = (&inst.adv, &inst.pi, &inst.lambda, inst.tau);
        let m = prox_step_state(adv, pi, lambda, tau)?;

        let reference = projected_gradient_step(adv, pi, lambda, tau, 1_000_000);
        let gap = m.iter().zip(&reference).fold(0.0f64, |g, (a, b)| g.max((a - b).abs()));
        oracle.record(gap, s);
        kkt.record(kkt_residual(adv, pi, &m, lambda, tau), s);

        let best = prox_objective(adv, pi, &m, lambda, tau);
        let mut worst = f64::NEG_INFINITY;
        for k in 0..PROBES_PER_STEP {
            let alpha = if k % 2 == 0 { 1.0 } else { 0.1 };
            let probe = random_simplex_point(&mut rng, m.len(), alpha);
            worst = worst.max(prox_objective(adv, pi, &probe, lambda, tau) - best);
        }
        probes.record(worst / (1.0 + best.abs()), s);

        let mut worst = f64::NEG_INFINITY;
        for k in 0..THREE_POINT_PROBES {
            let alpha = if k % 2 == 0 { 1.0 } else { 0.1 };
            let probe = random_simplex_point(&mut rng, m.len(), alpha);
            worst = worst.max(-three_point_check(adv, pi, &probe, lambda, tau)?);
        }
        three_point.record(worst, s);
    }
    Ok(vec![oracle, kkt, probes, three_point])
}

fn geometry(trials: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut identity = CheckResult::new("bregman_half_fr2", GEOMETRY_TOL);
    let mut fr_tv = CheckResult::new("tv2_below_fr2_over_16", GEOMETRY_TOL);
    let mut pinsker = CheckResult::new("pinsker", GEOMETRY_TOL);
    let mut disjoint = CheckResult::new("disjoint_equality", 0.0);
    for i in 0..trials {
        let s = instance_seed(seed, i);
        let mut rng = Stream::new(s);
        let n = rng.int_in(2, MAX_ACTIONS);
        let lambda = random_reference(&mut rng, n)?;
        let l = lambda.as_slice();
        let alpha = if rng.uniform() < 0.5 { 1.0 } else { 0.2 };
        let mu = random_simplex_point(&mut rng, n, alpha);
        let nu = random_simplex_point(&mut rng, n, alpha);
        let fr = fr2_squared_densities(&mu, &nu, l);
        identity.record((bregman_chi2(&mu, &nu, l) - 0.5 * fr).abs(), s);
        let c = inequality_suite(&mu, &nu, l);
        fr_tv.record(-c.fr_slack, s);
        if let Some(p) = c.pinsker_slack {
            pinsker.record(-p, s);
        }
    }
    if trials > 0 {
        let c = inequality_suite(&[1.0, 0.0], &[0.0, 1.0], &[0.5, 0.5]);
        let fr = fr2_squared_densities(&[1.0, 0.0], &[0.0, 1.0], &[0.5, 0.5]) / 16.0;
        disjoint.record((c.tv2 - 1.0).abs().max((fr - 1.0).abs()), seed);
    }
    Ok(vec![identity, fr_tv, pinsker, disjoint])
}

fn parametrized(trials: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut improvement = CheckResult::new("softmax_step_improvement", PARAMETRIZED_TOL);
    let mut gradient = CheckResult::new("surrogate_gradient", GRADIENT_REL_TOL);
    let h = 1e-5;
    for i in 0..trials {
        let s = instance_seed(seed, i);
        let mut inst = random_instance(s, 1, MAX_STATES, MAX_ACTIONS)?;
        let n = inst.mdp.n_states();
        let uniform = ReferenceMeasure::uniform(inst.mdp.n_actions());
        let theta = random_logits(&mut inst.rng, n, &uniform)?;
        let config = SolverConfig::default();
        let step = parametrized_surrogate_step(&inst.mdp, &theta, &config)?;
        let before = dp::value_at_rho(&inst.mdp, &theta.to_policy()?, inst.mdp.rho())?;
        let after = dp::value_at_rho(&inst.mdp, &step.policy.to_policy()?, inst.mdp.rho())?;
        improvement.record(before - after, s);

        let tau = config.tau.resolve(&inst.mdp);
        let problem = SurrogateProblem::new(&inst.mdp, theta.to_policy()?, tau)?;
        let at = random_logits(&mut inst.rng, n, &uniform)?;
        gradient.record(gradient_error(&problem, &at, h)?, s);
    }
    Ok(vec![improvement, gradient])
}

/// `||g - g_fd|| / max(||g||, ||g_fd||, tiny)` with central differences of
/// step `h`.
pub fn gradient_error(problem: &SurrogateProblem, at: &SoftmaxPolicy, h: f64) -> Result<f64> {
    let analytic = problem.gradient(at)?;
    let mut fd = analytic.clone();
    for idx in 0..at.theta.len() {
        let mut up = at.clone();
        up.theta[idx] += h;
        let mut down = at.clone();
        down.theta[idx] -= h;
        fd[idx] = (problem.value(&up)? - problem.value(&down)?) / (2.0 * h);
    }
    let scale = analytic.norm().max(fd.norm()).max(1e-300);
    Ok((analytic - fd).norm() / scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_trials_pass_vacuously() {
        for suite in Suite::ALL {
            let report = cmd_verify(suite, 0, 7).unwrap();
            assert!(report.passed());
            assert!(report.checks.iter().all(|c| c.runs == 0));
        }
    }

    #[test]
    fn suites_parse_by_name() {
        for suite in Suite::ALL {
            assert_eq!(suite.name().parse::<Suite>().unwrap(), suite);
        }
        assert!("everything".parse::<Suite>().is_err());
    }

    #[test]
    fn small_runs_pass() {
        for suite in Suite::ALL {
            let report = cmd_verify(suite, 3, 1).unwrap();
            assert!(report.passed(), "{}", report.render());
        }
    }

    #[test]
    fn failures_name_the_seed() {
        let mut check = CheckResult::new("demo", 1e-9);
        check.record(0.0, 4);
        check.record(1.0, 5);
        check.record(2.0, 6);
        assert_eq!(check.offending_seed, Some(5));
        assert_eq!(check.max_violation, 2.0);
        assert!(!check.passed());
    }
}
