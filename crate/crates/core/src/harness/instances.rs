//! Seeded random instances for the certification suites.

use nalgebra::DMatrix;

use crate::envs::{generate, EnvSpec};
use crate::error::Result;
use crate::mdp::{Policy, ReferenceMeasure, SoftmaxPolicy, TabularMdp};
use crate::rng::Stream;

pub const MAX_STATES: usize = 30;
pub const MAX_ACTIONS: usize = 10;

/// A random MDP with a random reference measure, plus the stream that
/// produced them for drawing further objects.
pub struct Instance {
    pub mdp: TabularMdp,
    pub lambda: ReferenceMeasure,
    pub rng: Stream,
}

/// Between `min_states` and `max_states` states, 2 to `max_actions`
/// actions, `gamma` in [0.5, 0.95], rewards in [-1, 1], uniform `rho`.
pub fn random_instance(seed: u64, min_states: usize, max_states: usize, max_actions: usize) -> Result<Instance> {
    let mut rng = Stream::new(seed);
    let n_states = rng.int_in(min_states, max_states);
    let n_actions = rng.int_in(2, max_actions);
    let gamma = rng.uniform_in(0.5, 0.95);
    let alpha = if rng.uniform() < 0.25 { 0.2 } else { 1.0 };
    let spec = EnvSpec {
        dirichlet_alpha: alpha,
        ..EnvSpec::random(n_states, n_actions, gamma, rng.next_u64())
    };
    let mdp = generate(&spec)?;
    let lambda = random_reference(&mut rng, n_actions)?;
    Ok(Instance { mdp, lambda, rng })
}

/// Dirichlet(1) reference measure, floored away from zero so densities stay
/// moderate.
pub fn random_reference(rng: &mut Stream, n: usize) -> Result<ReferenceMeasure> {
    let raw: Vec<f64> = rng.dirichlet(1.0, n).into_iter().map(|x| x + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    ReferenceMeasure::new(raw.into_iter().map(|x| x / total).collect())
}

/// Policy with Dirichlet(`alpha`) rows.
pub fn random_policy(rng: &mut Stream, n_states: usize, lambda: &ReferenceMeasure, alpha: f64) -> Result<Policy> {
    let n_actions = lambda.len();
    let mut probs = DMatrix::zeros(n_states, n_actions);
    for s in 0..n_states {
        for (a, p) in rng.dirichlet(alpha, n_actions).into_iter().enumerate() {
            probs[(s, a)] = p;
        }
    }
    Policy::new(probs, lambda.clone())
}

/// Logits with independent standard normal entries.
pub fn random_logits(rng: &mut Stream, n_states: usize, lambda: &ReferenceMeasure) -> Result<SoftmaxPolicy> {
    let theta = DMatrix::from_fn(n_states, lambda.len(), |_, _| rng.normal());
    SoftmaxPolicy::new(theta, lambda.clone())
}

/// One state's worth of step inputs.
pub struct ProxInstance {
    pub adv: Vec<f64>,
    pub pi: Vec<f64>,
    pub lambda: Vec<f64>,
    pub tau: f64,
}

/// Up to `max_actions` actions, advantages in [-2, 2], `tau` log-uniform in
/// [0.01, 2]; about a third of the current rows have zero entries.
pub fn random_prox_instance(rng: &mut Stream, max_actions: usize) -> Result<ProxInstance> {
    let n = rng.int_in(2, max_actions);
    let lambda = random_reference(rng, n)?.as_slice().to_vec();
    let mut pi = rng.dirichlet(1.0, n);
    if rng.uniform() < 1.0 / 3.0 {
        let zero = rng.int_in(0, n - 1);
        let mass = pi[zero];
        pi[zero] = 0.0;
        let keep = (zero + 1) % n;
        pi[keep] += mass;
    }
    let adv = (0..n).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
    let tau = (rng.uniform_in(0.01f64.ln(), 2f64.ln())).exp();
    Ok(ProxInstance { adv, pi, lambda, tau })
}

/// A point of the probability simplex; sparse-ish for small `alpha`.
pub fn random_simplex_point(rng: &mut Stream, n: usize, alpha: f64) -> Vec<f64> {
    rng.dirichlet(alpha, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instances_are_reproducible_and_valid() {
        let a = random_instance(5, 1, MAX_STATES, MAX_ACTIONS).unwrap();
        let b = random_instance(5, 1, MAX_STATES, MAX_ACTIONS).unwrap();
        assert_eq!(a.mdp, b.mdp);
        assert_eq!(a.lambda, b.lambda);
        assert!(a.mdp.validate().is_empty());
        assert!((0.5..0.95).contains(&a.mdp.gamma()));
    }

    #[test]
    fn prox_instances_are_feasible() {
        let mut rng = Stream::new(3);
        for _ in 0..100 {
            let inst = random_prox_instance(&mut rng, 6).unwrap();
            assert!((inst.pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(inst.pi.iter().all(|&p| p >= 0.0));
            assert!((0.01..=2.0).contains(&inst.tau));
        }
    }
}
