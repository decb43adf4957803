//! Fisher-Rao proximal policy optimization on tabular MDPs.
//!
//! Each iteration evaluates the current policy exactly, then replaces every
//! state's action distribution by the maximizer of
//! `sum_a A(s,a) m(a) - FR^2(m^2, pi(.|s)^2) / (2 tau)` (see [`prox`]). The
//! run loop logs the quantities needed to certify monotone improvement and
//! the `O(1/n)` optimality-gap bound.

pub mod checks;
pub mod parametrized;
pub mod prox;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dp::{self, ValueBundle};
use crate::error::{Error, Result};
use crate::geometry::{bregman_chi2, fr2_squared_densities};
use crate::mdp::{Policy, TabularMdp};

pub use checks::{pointwise_estimate_check, three_point_check};
pub use parametrized::{parametrized_surrogate_step, ParametrizedStep, SurrogateProblem};
pub use prox::{kkt_residual, prox_objective, prox_step_state, weighted_simplex_projection};

/// Slack allowed on the optimality-gap certificates.
pub const BOUND_TOL: f64 = 1e-9;
/// Tolerance of the value iteration that produces the comparator policy.
pub const OPTIMAL_TOL: f64 = 1e-10;

/// Step parameter: either fixed or the largest value the improvement and
/// convergence guarantees allow, `(1 - gamma)^2 / ||r||_inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StepSizeRepr", into = "StepSizeRepr")]
pub enum StepSize {
    Auto,
    Explicit(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum StepSizeRepr {
    Number(f64),
    Word(String),
}

impl TryFrom<StepSizeRepr> for StepSize {
    type Error = String;
    fn try_from(repr: StepSizeRepr) -> std::result::Result<Self, String> {
        match repr {
            StepSizeRepr::Number(t) if t > 0.0 && t.is_finite() => Ok(StepSize::Explicit(t)),
            StepSizeRepr::Number(t) => Err(format!("step parameter must be positive, got {t}")),
            StepSizeRepr::Word(w) => w.parse().map_err(|e: Error| e.to_string()),
        }
    }
}

impl From<StepSize> for StepSizeRepr {
    fn from(s: StepSize) -> Self {
        match s {
            StepSize::Auto => StepSizeRepr::Word("auto".into()),
            StepSize::Explicit(t) => StepSizeRepr::Number(t),
        }
    }
}

impl FromStr for StepSize {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(StepSize::Auto);
        }
        match s.parse::<f64>() {
            Ok(t) if t > 0.0 && t.is_finite() => Ok(StepSize::Explicit(t)),
            _ => Err(Error::InvalidParameter(format!(
                "step parameter must be \"auto\" or a positive number, got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for StepSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepSize::Auto => write!(f, "auto"),
            StepSize::Explicit(t) => write!(f, "{t}"),
        }
    }
}

impl StepSize {
    pub fn resolve(&self, mdp: &TabularMdp) -> f64 {
        match *self {
            StepSize::Explicit(t) => t,
            StepSize::Auto => {
                let r = mdp.reward_sup_norm();
                if r == 0.0 {
                    // Any step is admissible when the advantage vanishes.
                    1.0
                } else {
                    (1.0 - mdp.gamma()).powi(2) / r
                }
            }
        }
    }
}

/// Whether `1 / tau >= ||r||_inf / (1 - gamma)^2`, up to rounding in the
/// auto-mode equality case.
pub fn tau_condition_holds(mdp: &TabularMdp, tau: f64) -> bool {
    let needed = mdp.reward_sup_norm() / (1.0 - mdp.gamma()).powi(2);
    1.0 / tau >= needed * (1.0 - 1e-12)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub tau: StepSize,
    pub max_iters: usize,
    pub improvement_tol: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tau: StepSize::Auto,
            max_iters: 50,
            improvement_tol: 1e-12,
            seed: 0,
        }
    }
}

/// New policy from one exact step per state against the advantage `adv` of
/// `pi`.
pub fn step_with_advantage(pi: &Policy, adv: &DMatrix<f64>, tau: f64) -> Result<Policy> {
    let lambda = pi.reference().as_slice();
    let mut probs = DMatrix::zeros(pi.n_states(), pi.n_actions());
    for s in 0..pi.n_states() {
        let adv_row: Vec<f64> = adv.row(s).iter().copied().collect();
        let row = prox_step_state(&adv_row, &pi.row(s), lambda, tau)?;
        for (a, p) in row.into_iter().enumerate() {
            probs[(s, a)] = p;
        }
    }
    Policy::new(probs, pi.reference().clone())
}

/// One FR-PPO iteration from `pi`.
pub fn fr_ppo_iterate(mdp: &TabularMdp, pi: &Policy, config: &SolverConfig) -> Result<Policy> {
    let tau = config.tau.resolve(mdp);
    let v = dp::policy_eval(mdp, pi)?;
    let (_, adv) = dp::q_and_advantage(mdp, pi, &v)?;
    step_with_advantage(pi, &adv, tau)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterateRecord {
    pub iter: usize,
    /// `V^n(rho)`.
    pub value_at_rho: f64,
    /// `V^n(rho) - V^{n-1}(rho)`; zero at `n = 0`.
    pub improvement: f64,
    /// `sum_s d^{n-1}(s) FR^2(pi^n(.|s)^2, pi^{n-1}(.|s)^2)`.
    pub integrated_fr2_step: f64,
    /// The occupancy-weighted step objective that led to `pi^n`.
    pub surrogate_gain: f64,
    /// Optimality-gap bound at `n`; infinite at `n = 0`.
    pub bound_rhs: f64,
    /// `V^*(rho) - V^n(rho)`.
    pub gap_to_target: f64,
}

#[derive(Debug, Clone)]
pub struct IterateLog {
    pub tau: f64,
    pub tau_condition_holds: bool,
    pub v_star_at_rho: f64,
    /// `sum_s d^*(s) FR^2(pi^*(.|s)^2, pi^0(.|s)^2)`.
    pub comparator_fr2: f64,
    /// `y^0 = sum_s d^*(s) D_h(pi^* | pi^0)(s)`.
    pub y0: f64,
    /// `sum_s d^*(s) (V^* - V^0)(s)`, the constant the convergence argument uses.
    pub alpha: f64,
    /// `sum_s d^*(s) (V^0 - V^*)(s)`, the opposite sign convention to `alpha`.
    pub alpha_stated: f64,
    /// `(alpha + y^0 / tau) / (1 - gamma)`, which bounds `n * gap_n`.
    pub rate_constant: f64,
    pub records: Vec<IterateRecord>,
    pub improvement_violations: usize,
    pub bound_violations: usize,
    pub rate_violations: usize,
    pub gap_increases: usize,
    /// Smallest per-state slack of the pointwise improvement estimate.
    pub min_pointwise_slack: f64,
    pub final_policy: Policy,
}

impl IterateLog {
    /// No certificate failed (only meaningful when the step condition holds).
    pub fn certified(&self) -> bool {
        self.improvement_violations == 0
            && self.bound_violations == 0
            && self.rate_violations == 0
            && self.gap_increases == 0
            && self.min_pointwise_slack >= -BOUND_TOL
    }

    /// `n * gap_n - rate_constant` maximized over `n >= 1`.
    pub fn worst_rate_excess(&self) -> f64 {
        self.records
            .iter()
            .skip(1)
            .map(|r| r.iter as f64 * r.gap_to_target - self.rate_constant)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `gap_n - bound_rhs(n)` maximized over `n >= 1`.
    pub fn worst_bound_excess(&self) -> f64 {
        self.records
            .iter()
            .skip(1)
            .map(|r| r.gap_to_target - r.bound_rhs)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn worst_improvement(&self) -> f64 {
        self.records
            .iter()
            .skip(1)
            .map(|r| r.improvement)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Constants of the optimality-gap certificate for a run started at `pi0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Certificate {
    pub tau: f64,
    pub gamma: f64,
    pub v_star_at_rho: f64,
    /// `sum_s d^*(s) FR^2(pi^*(.|s)^2, pi^0(.|s)^2)`.
    pub comparator_fr2: f64,
    /// `y^0 = sum_s d^*(s) D_h(pi^* | pi^0)(s)`.
    pub y0: f64,
    /// `sum_s d^*(s) (V^* - V^0)(s)`, the constant the convergence argument uses.
    pub alpha: f64,
    /// `(alpha + y^0 / tau) / (1 - gamma)`, which bounds `n * gap_n`.
    pub rate_constant: f64,
}

impl Certificate {
    /// Compares against the optimal deterministic policy from exact DP.
    pub fn new(mdp: &TabularMdp, pi0: &Policy, tau: f64) -> Result<Self> {
        let rho = mdp.rho();
        let lambda = pi0.reference().as_slice();
        let opt = dp::optimal_values(mdp, OPTIMAL_TOL)?;
        let d_star = dp::occupancy(mdp, &opt.pi_star, rho)?;
        let v0 = dp::policy_eval(mdp, pi0)?;
        let (mut comparator_fr2, mut y0, mut alpha) = (0.0, 0.0, 0.0);
        for s in 0..mdp.n_states() {
            let (star_row, row0) = (opt.pi_star.row(s), pi0.row(s));
            comparator_fr2 += d_star[s] * fr2_squared_densities(&star_row, &row0, lambda);
            y0 += d_star[s] * bregman_chi2(&star_row, &row0, lambda);
            alpha += d_star[s] * (opt.v_star[s] - v0[s]);
        }
        let gamma = mdp.gamma();
        Ok(Self {
            tau,
            gamma,
            v_star_at_rho: dp::dot(&opt.v_star, rho),
            comparator_fr2,
            y0,
            alpha,
            rate_constant: (alpha + y0 / tau) / (1.0 - gamma),
        })
    }

    /// `(comparator_fr2 / tau + alpha) / (n (1 - gamma))`; infinite at `n = 0`.
    pub fn bound_rhs(&self, n: usize) -> f64 {
        (self.comparator_fr2 / self.tau + self.alpha) / (n as f64 * (1.0 - self.gamma))
    }
}

/// Per-state sums used by the run log.
fn step_statistics(bundle: &ValueBundle, cur: &Policy, next: &Policy, tau: f64) -> (f64, f64) {
    let lambda = cur.reference().as_slice();
    let mut fr2_total = 0.0;
    let mut gain_total = 0.0;
    for s in 0..cur.n_states() {
        let (c, n) = (cur.row(s), next.row(s));
        let fr = fr2_squared_densities(&n, &c, lambda);
        let mut linear = 0.0;
        for a in 0..cur.n_actions() {
            linear += bundle.adv[(s, a)] * n[a];
        }
        fr2_total += bundle.occupancy[s] * fr;
        gain_total += bundle.occupancy[s] * (linear - fr / (2.0 * tau));
    }
    (fr2_total, gain_total)
}

fn pointwise_slacks(cur: &ValueBundle, next_v: &DVector<f64>, pi: &Policy, next: &Policy, tau: f64) -> Vec<f64> {
    let lambda = pi.reference().as_slice();
    (0..pi.n_states())
        .map(|s| {
            let (c, n) = (pi.row(s), next.row(s));
            let mut gain = 0.0;
            for a in 0..pi.n_actions() {
                gain += cur.adv[(s, a)] * (n[a] - c[a]);
            }
            (next_v[s] - cur.v[s]) - (gain - bregman_chi2(&n, &c, lambda) / tau)
        })
        .collect()
}

/// Runs `config.max_iters` FR-PPO iterations from `pi0` and certifies them
/// against the optimal policy computed by exact DP.
pub fn run_fr_ppo(mdp: &TabularMdp, pi0: &Policy, config: &SolverConfig) -> Result<IterateLog> {
    if pi0.n_states() != mdp.n_states() || pi0.n_actions() != mdp.n_actions() {
        return Err(Error::InvalidInput("initial policy does not match the MDP".into()));
    }
    let rho = mdp.rho();
    let tau = config.tau.resolve(mdp);
    let tau_ok = tau_condition_holds(mdp, tau);

    let cert = Certificate::new(mdp, pi0, tau)?;
    let mut bundle = dp::evaluate(mdp, pi0, rho)?;
    let Certificate {
        v_star_at_rho,
        comparator_fr2,
        y0,
        alpha,
        rate_constant,
        ..
    } = cert;

    let mut value = bundle.value_at(rho);
    let mut records = vec![IterateRecord {
        iter: 0,
        value_at_rho: value,
        improvement: 0.0,
        integrated_fr2_step: 0.0,
        surrogate_gain: 0.0,
        bound_rhs: f64::INFINITY,
        gap_to_target: v_star_at_rho - value,
    }];
    let mut log = IterateLog {
        tau,
        tau_condition_holds: tau_ok,
        v_star_at_rho,
        comparator_fr2,
        y0,
        alpha,
        alpha_stated: -alpha,
        rate_constant,
        records: Vec::new(),
        improvement_violations: 0,
        bound_violations: 0,
        rate_violations: 0,
        gap_increases: 0,
        min_pointwise_slack: f64::INFINITY,
        final_policy: pi0.clone(),
    };

    let mut pi = pi0.clone();
    for n in 1..=config.max_iters {
        let next = step_with_advantage(&pi, &bundle.adv, tau)?;
        let (fr2_step, gain) = step_statistics(&bundle, &pi, &next, tau);
        let next_bundle = dp::evaluate(mdp, &next, rho)?;
        let slack = pointwise_slacks(&bundle, &next_bundle.v, &pi, &next, tau)
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        log.min_pointwise_slack = log.min_pointwise_slack.min(slack);

        let next_value = next_bundle.value_at(rho);
        let improvement = next_value - value;
        let gap = v_star_at_rho - next_value;
        let bound_rhs = cert.bound_rhs(n);
        let prev_gap = records.last().map(|r| r.gap_to_target).unwrap_or(f64::INFINITY);
        if tau_ok {
            if improvement < -config.improvement_tol {
                log.improvement_violations += 1;
            }
            if gap > bound_rhs + BOUND_TOL {
                log.bound_violations += 1;
            }
            if n as f64 * gap > rate_constant + BOUND_TOL {
                log.rate_violations += 1;
            }
            if gap > prev_gap + config.improvement_tol {
                log.gap_increases += 1;
            }
        }
        records.push(IterateRecord {
            iter: n,
            value_at_rho: next_value,
            improvement,
            integrated_fr2_step: fr2_step,
            surrogate_gain: gain,
            bound_rhs,
            gap_to_target: gap,
        });
        pi = next;
        bundle = next_bundle;
        value = next_value;
    }
    log.records = records;
    log.final_policy = pi;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::ReferenceMeasure;

    fn one_state() -> TabularMdp {
        TabularMdp::new(&[vec![vec![1.0], vec![1.0]]], &[vec![1.0, 0.0]], 0.5, &[1.0]).unwrap()
    }

    #[test]
    fn auto_step_and_condition() {
        let mdp = one_state();
        let tau = StepSize::Auto.resolve(&mdp);
        assert!((tau - 0.25).abs() < 1e-15);
        assert!(tau_condition_holds(&mdp, tau));
        assert!(!tau_condition_holds(&mdp, 0.5));
        assert_eq!("auto".parse::<StepSize>().unwrap(), StepSize::Auto);
        assert_eq!("0.3".parse::<StepSize>().unwrap(), StepSize::Explicit(0.3));
        assert!("-1".parse::<StepSize>().is_err());
        let json = serde_json::to_string(&SolverConfig::default()).unwrap();
        assert!(json.contains("\"tau\":\"auto\""));
        let back: SolverConfig = serde_json::from_str(&json.replace("\"auto\"", "0.5")).unwrap();
        assert_eq!(back.tau, StepSize::Explicit(0.5));
    }

    #[test]
    fn one_state_run_converges_monotonically() {
        let mdp = one_state();
        let pi0 = Policy::uniform(&mdp, ReferenceMeasure::uniform(2)).unwrap();
        let log = run_fr_ppo(
            &mdp,
            &pi0,
            &SolverConfig {
                max_iters: 40,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((log.v_star_at_rho - 2.0).abs() < 1e-12);
        assert!(log.certified());
        assert_eq!(log.records.len(), 41);
        for w in log.records.windows(2) {
            assert!(w[1].gap_to_target <= w[0].gap_to_target);
        }
        assert!(log.records.last().unwrap().gap_to_target < log.records[0].gap_to_target);
    }

    #[test]
    fn zero_iterations_log_only_the_start() {
        let mdp = one_state();
        let pi0 = Policy::uniform(&mdp, ReferenceMeasure::uniform(2)).unwrap();
        let log = run_fr_ppo(
            &mdp,
            &pi0,
            &SolverConfig {
                max_iters: 0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(log.records.len(), 1);
        assert!((log.records[0].value_at_rho - 1.0).abs() < 1e-15);
        assert_eq!(log.final_policy, pi0);
    }

    #[test]
    fn zero_reward_leaves_policy_alone() {
        let p = vec![
            vec![vec![0.5, 0.5], vec![1.0, 0.0]],
            vec![vec![0.0, 1.0], vec![0.3, 0.7]],
        ];
        let mdp = TabularMdp::new(&p, &[vec![0.0; 2], vec![0.0; 2]], 0.9, &[0.5, 0.5]).unwrap();
        let pi = Policy::from_rows(&[vec![0.2, 0.8], vec![0.6, 0.4]], ReferenceMeasure::uniform(2)).unwrap();
        let next = fr_ppo_iterate(&mdp, &pi, &SolverConfig::default()).unwrap();
        assert_eq!(next, pi);
    }

    #[test]
    fn iterates_do_not_depend_on_rho() {
        let p = vec![
            vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            vec![vec![0.4, 0.6], vec![1.0, 0.0]],
        ];
        let mdp = TabularMdp::new(&p, &[vec![1.0, -0.5], vec![0.3, 0.8]], 0.8, &[0.5, 0.5]).unwrap();
        let other = mdp.with_rho(&[0.9, 0.1]).unwrap();
        let pi0 = Policy::uniform(&mdp, ReferenceMeasure::new(vec![0.3, 0.7]).unwrap()).unwrap();
        let config = SolverConfig {
            max_iters: 15,
            ..Default::default()
        };
        let a = run_fr_ppo(&mdp, &pi0, &config).unwrap();
        let b = run_fr_ppo(&other, &pi0, &config).unwrap();
        assert_eq!(a.final_policy, b.final_policy);
        assert_ne!(a.records[5].value_at_rho, b.records[5].value_at_rho);
    }

    #[test]
    fn optimal_deterministic_policy_is_stable() {
        // Action 0 strictly dominant in both states.
        let p = vec![
            vec![vec![0.9, 0.1], vec![0.1, 0.9]],
            vec![vec![0.8, 0.2], vec![0.5, 0.5]],
        ];
        let r = vec![vec![1.0, 0.0], vec![0.8, 0.1]];
        let mdp = TabularMdp::new(&p, &r, 0.9, &[0.5, 0.5]).unwrap();
        let opt = dp::optimal_values(&mdp, 1e-12).unwrap();
        assert_eq!(opt.selector, vec![0, 0]);
        let bundle = dp::evaluate(&mdp, &opt.pi_star, mdp.rho()).unwrap();
        assert!(bundle.adv[(0, 1)] < 0.0 && bundle.adv[(1, 1)] < 0.0);
        let config = SolverConfig {
            tau: StepSize::Explicit(1e-3),
            ..Default::default()
        };
        let next = fr_ppo_iterate(&mdp, &opt.pi_star, &config).unwrap();
        assert!(next.max_abs_diff(&opt.pi_star) <= 1e-12);
    }
}
