//! FR-PPO step for tabular softmax policies.
//!
//! The occupancy-weighted step objective of the current policy is maximized
//! over the logits by gradient ascent with Armijo backtracking. The objective
//! is zero at the current logits, so any accepted ascent step keeps it
//! nonnegative.

use nalgebra::{DMatrix, DVector};

use crate::dp;
use crate::error::{Error, Result};
use crate::geometry::fr2_squared_densities;
use crate::mdp::{softmax_to_policy, Policy, SoftmaxPolicy, TabularMdp};

use super::SolverConfig;

const ARMIJO_C: f64 = 1e-4;
const INITIAL_STEP: f64 = 1.0;
const MAX_INNER_STEPS: usize = 200;
const MIN_PROGRESS: f64 = 1e-10;
const MIN_STEP: f64 = 1e-20;

/// The objective
/// `L(theta) = sum_s d(s) [sum_a A(s,a) pi_theta(a|s) - FR^2(pi_theta(.|s)^2, pi_n(.|s)^2) / (2 tau)]`
/// frozen at the anchor policy `pi_n`.
#[derive(Debug, Clone)]
pub struct SurrogateProblem {
    pub adv: DMatrix<f64>,
    pub occupancy: DVector<f64>,
    pub anchor: Policy,
    pub tau: f64,
}

impl SurrogateProblem {
    pub fn new(mdp: &TabularMdp, anchor: Policy, tau: f64) -> Result<Self> {
        let bundle = dp::evaluate(mdp, &anchor, mdp.rho())?;
        Ok(Self {
            adv: bundle.adv,
            occupancy: bundle.occupancy,
            anchor,
            tau,
        })
    }

    pub fn value_of_policy(&self, pi: &Policy) -> f64 {
        let lambda = pi.reference().as_slice();
        let mut total = 0.0;
        for s in 0..pi.n_states() {
            let row = pi.row(s);
            let mut linear = 0.0;
            for (a, p) in row.iter().enumerate() {
                linear += self.adv[(s, a)] * p;
            }
            let penalty = fr2_squared_densities(&row, &self.anchor.row(s), lambda) / (2.0 * self.tau);
            total += self.occupancy[s] * (linear - penalty);
        }
        total
    }

    pub fn value(&self, sp: &SoftmaxPolicy) -> Result<f64> {
        Ok(self.value_of_policy(&softmax_to_policy(sp)?))
    }

    /// Analytic gradient with respect to the logits.
    pub fn gradient(&self, sp: &SoftmaxPolicy) -> Result<DMatrix<f64>> {
        let pi = softmax_to_policy(sp)?;
        let (n_states, n_actions) = sp.theta.shape();
        let mut grad = DMatrix::zeros(n_states, n_actions);
        for s in 0..n_states {
            // Derivative of the bracket with respect to pi(b|s).
            let dpi: Vec<f64> = (0..n_actions)
                .map(|b| self.adv[(s, b)] - 4.0 / self.tau * (pi.density(s, b) - self.anchor.density(s, b)))
                .collect();
            let mut mean = 0.0;
            for b in 0..n_actions {
                mean += pi.prob(s, b) * dpi[b];
            }
            for a in 0..n_actions {
                grad[(s, a)] = self.occupancy[s] * pi.prob(s, a) * (dpi[a] - mean);
            }
        }
        Ok(grad)
    }
}

#[derive(Debug, Clone)]
pub struct ParametrizedStep {
    pub policy: SoftmaxPolicy,
    /// Objective at the returned logits; zero at the input logits.
    pub surrogate: f64,
    pub inner_steps: usize,
}

/// One parametrized FR-PPO step from `sp`.
pub fn parametrized_surrogate_step(
    mdp: &TabularMdp,
    sp: &SoftmaxPolicy,
    config: &SolverConfig,
) -> Result<ParametrizedStep> {
    let tau = config.tau.resolve(mdp);
    let problem = SurrogateProblem::new(mdp, softmax_to_policy(sp)?, tau)?;
    let mut current = sp.clone();
    let mut value = problem.value(&current)?;
    let mut inner_steps = 0;
    while inner_steps < MAX_INNER_STEPS {
        let grad = problem.gradient(&current)?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NumericBreakdown("non-finite surrogate gradient".into()));
        }
        let sq_norm = grad.norm_squared();
        if sq_norm == 0.0 {
            break;
        }
        let mut step = INITIAL_STEP;
        let mut accepted = None;
        while step >= MIN_STEP {
            let trial = SoftmaxPolicy {
                theta: &current.theta + &grad * step,
                reference: current.reference.clone(),
            };
            match problem.value(&trial) {
                Ok(v) if v.is_finite() && v >= value + ARMIJO_C * step * sq_norm => {
                    accepted = Some((trial, v));
                    break;
                }
                _ => step *= 0.5,
            }
        }
        let Some((trial, v)) = accepted else { break };
        inner_steps += 1;
        let progress = v - value;
        current = trial;
        value = v;
        if progress <= MIN_PROGRESS {
            break;
        }
    }
    Ok(ParametrizedStep {
        policy: current,
        surrogate: value,
        inner_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::ReferenceMeasure;

    fn small_mdp(reward: f64) -> TabularMdp {
        let p = vec![
            vec![vec![0.6, 0.4], vec![0.1, 0.9]],
            vec![vec![0.3, 0.7], vec![0.8, 0.2]],
        ];
        let r = vec![vec![reward, 0.0], vec![0.0, 0.5 * reward]];
        TabularMdp::new(&p, &r, 0.7, &[0.5, 0.5]).unwrap()
    }

    #[test]
    fn zero_reward_keeps_logits() {
        let mdp = small_mdp(0.0);
        let sp = SoftmaxPolicy::new(
            DMatrix::from_row_slice(2, 2, &[0.3, -0.2, 1.0, 0.0]),
            ReferenceMeasure::uniform(2),
        )
        .unwrap();
        let out = parametrized_surrogate_step(&mdp, &sp, &SolverConfig::default()).unwrap();
        assert_eq!(out.policy, sp);
        assert_eq!(out.inner_steps, 0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mdp = small_mdp(1.0);
        let lambda = ReferenceMeasure::new(vec![0.3, 0.7]).unwrap();
        let anchor = SoftmaxPolicy::new(DMatrix::from_row_slice(2, 2, &[0.1, 0.4, -0.3, 0.2]), lambda.clone()).unwrap();
        let problem = SurrogateProblem::new(&mdp, anchor.to_policy().unwrap(), 0.09).unwrap();
        let at = SoftmaxPolicy::new(DMatrix::from_row_slice(2, 2, &[0.5, -0.1, 0.2, 0.9]), lambda).unwrap();
        let grad = problem.gradient(&at).unwrap();
        let h = 1e-5;
        for i in 0..4 {
            let (s, a) = (i / 2, i % 2);
            let mut up = at.clone();
            up.theta[(s, a)] += h;
            let mut down = at.clone();
            down.theta[(s, a)] -= h;
            let fd = (problem.value(&up).unwrap() - problem.value(&down).unwrap()) / (2.0 * h);
            assert!(
                (fd - grad[(s, a)]).abs() <= 1e-8 * (1.0 + grad[(s, a)].abs()),
                "{fd} vs {}",
                grad[(s, a)]
            );
        }
    }

    #[test]
    fn step_improves_surrogate_and_value() {
        let mdp = small_mdp(1.0);
        let sp = SoftmaxPolicy::zeros(2, ReferenceMeasure::uniform(2));
        let out = parametrized_surrogate_step(&mdp, &sp, &SolverConfig::default()).unwrap();
        assert!(out.surrogate > 0.0);
        let before = dp::value_at_rho(&mdp, &sp.to_policy().unwrap(), mdp.rho()).unwrap();
        let after = dp::value_at_rho(&mdp, &out.policy.to_policy().unwrap(), mdp.rho()).unwrap();
        assert!(after >= before - 1e-10);
    }
}
