//! Seeded MDP generators: random Dirichlet MDPs, slippery chains and
//! gridworlds.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Random,
    Chain,
    Grid,
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(EnvKind::Random),
            "chain" => Ok(EnvKind::Chain),
            "grid" => Ok(EnvKind::Grid),
            other => Err(Error::InvalidSpec(format!("unknown environment kind {other:?}"))),
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::Random => "random",
            EnvKind::Chain => "chain",
            EnvKind::Grid => "grid",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub n_states: usize,
    pub n_actions: usize,
    /// Reward interval of the random kind.
    pub reward_range: [f64; 2],
    pub gamma: f64,
    pub dirichlet_alpha: f64,
    /// Probability that a chain move fails and the agent stays put.
    pub slip: f64,
    pub seed: u64,
}

impl Default for EnvSpec {
    fn default() -> Self {
        Self {
            kind: EnvKind::Random,
            n_states: 10,
            n_actions: 4,
            reward_range: [-1.0, 1.0],
            gamma: 0.9,
            dirichlet_alpha: 1.0,
            slip: 0.1,
            seed: 0,
        }
    }
}

impl EnvSpec {
    pub fn random(n_states: usize, n_actions: usize, gamma: f64, seed: u64) -> Self {
        Self {
            n_states,
            n_actions,
            gamma,
            seed,
            ..Self::default()
        }
    }

    fn check(&self) -> Result<()> {
        if self.n_states == 0 || self.n_actions == 0 {
            return Err(Error::InvalidSpec("state and action counts must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidSpec(format!(
                "gamma must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        let [lo, hi] = self.reward_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidSpec(format!("bad reward range [{lo}, {hi}]")));
        }
        if !(self.dirichlet_alpha > 0.0 && self.dirichlet_alpha.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "dirichlet_alpha must be positive, got {}",
                self.dirichlet_alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.slip) {
            return Err(Error::InvalidSpec(format!(
                "slip must lie in [0, 1], got {}",
                self.slip
            )));
        }
        Ok(())
    }
}

/// Builds the MDP described by `spec`; the result depends on nothing else.
pub fn generate(spec: &EnvSpec) -> Result<TabularMdp> {
    spec.check()?;
    let (transition, reward) = match spec.kind {
        EnvKind::Random => random_parts(spec),
        EnvKind::Chain => chain_parts(spec)?,
        EnvKind::Grid => grid_parts(spec)?,
    };
    let rho = vec![1.0 / spec.n_states as f64; spec.n_states];
    TabularMdp::new(&transition, &reward, spec.gamma, &rho)
}

type Parts = (Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>);

/// All transition rows first (state-major, then action), then all rewards.
fn random_parts(spec: &EnvSpec) -> Parts {
    let mut rng = Stream::new(spec.seed);
    let transition = (0..spec.n_states)
        .map(|_| {
            (0..spec.n_actions)
                .map(|_| rng.dirichlet(spec.dirichlet_alpha, spec.n_states))
                .collect()
        })
        .collect();
    let [lo, hi] = spec.reward_range;
    let reward = (0..spec.n_states)
        .map(|_| (0..spec.n_actions).map(|_| rng.uniform_in(lo, hi)).collect())
        .collect();
    (transition, reward)
}

/// Actions are left, right and stay; walls bounce, a move slips into staying
/// put with probability `slip`, and every action at the last state pays 1.
fn chain_parts(spec: &EnvSpec) -> Result<Parts> {
    if spec.n_actions != 3 {
        return Err(Error::InvalidSpec(format!(
            "chain needs 3 actions, got {}",
            spec.n_actions
        )));
    }
    let n = spec.n_states;
    let mut transition = vec![vec![vec![0.0; n]; 3]; n];
    for s in 0..n {
        let targets = [s.saturating_sub(1), (s + 1).min(n - 1), s];
        for (a, &t) in targets.iter().enumerate() {
            transition[s][a][t] += 1.0 - spec.slip;
            transition[s][a][s] += spec.slip;
        }
    }
    let mut reward = vec![vec![0.0; 3]; n];
    reward[n - 1] = vec![1.0; 3];
    Ok((transition, reward))
}

/// Square grid with actions up, down, left, right. Moves into a wall leave
/// the agent in place; the last cell is an absorbing goal paying 1 per step.
fn grid_parts(spec: &EnvSpec) -> Result<Parts> {
    let side = (spec.n_states as f64).sqrt().round() as usize;
    if side * side != spec.n_states {
        return Err(Error::InvalidSpec(format!(
            "grid needs a square state count, got {}",
            spec.n_states
        )));
    }
    if spec.n_actions != 4 {
        return Err(Error::InvalidSpec(format!(
            "grid needs 4 actions, got {}",
            spec.n_actions
        )));
    }
    let n = spec.n_states;
    let goal = n - 1;
    let mut transition = vec![vec![vec![0.0; n]; 4]; n];
    for s in 0..n {
        let (row, col) = (s / side, s % side);
        let targets = [
            if row > 0 { s - side } else { s },
            if row + 1 < side { s + side } else { s },
            if col > 0 { s - 1 } else { s },
            if col + 1 < side { s + 1 } else { s },
        ];
        for (a, &t) in targets.iter().enumerate() {
            transition[s][a][if s == goal { goal } else { t }] = 1.0;
        }
    }
    let mut reward = vec![vec![0.0; 4]; n];
    reward[goal] = vec![1.0; 4];
    Ok((transition, reward))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp;

    #[test]
    fn same_spec_same_mdp() {
        let spec = EnvSpec::random(7, 3, 0.8, 42);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = EnvSpec {
            seed: 43,
            ..spec.clone()
        };
        assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn generated_mdps_validate() {
        for (seed, alpha) in [(1, 1.0), (2, 0.05), (3, 10.0)] {
            let spec = EnvSpec {
                dirichlet_alpha: alpha,
                ..EnvSpec::random(12, 5, 0.95, seed)
            };
            assert!(generate(&spec).unwrap().validate().is_empty());
        }
        let chain = EnvSpec {
            kind: EnvKind::Chain,
            n_actions: 3,
            ..EnvSpec::default()
        };
        assert!(generate(&chain).unwrap().validate().is_empty());
        let grid = EnvSpec {
            kind: EnvKind::Grid,
            n_states: 16,
            ..EnvSpec::default()
        };
        assert!(generate(&grid).unwrap().validate().is_empty());
    }

    #[test]
    fn rewards_stay_in_range() {
        let spec = EnvSpec {
            reward_range: [2.0, 3.0],
            ..EnvSpec::random(6, 4, 0.5, 9)
        };
        let mdp = generate(&spec).unwrap();
        assert!(mdp.reward().iter().all(|&r| (2.0..3.0).contains(&r)));
    }

    #[test]
    fn invalid_specs() {
        let grid = EnvSpec {
            kind: EnvKind::Grid,
            n_states: 10,
            ..EnvSpec::default()
        };
        assert!(matches!(generate(&grid), Err(Error::InvalidSpec(_))));
        let chain = EnvSpec {
            kind: EnvKind::Chain,
            n_actions: 2,
            ..EnvSpec::default()
        };
        assert!(matches!(generate(&chain), Err(Error::InvalidSpec(_))));
        assert!(generate(&EnvSpec {
            gamma: 1.0,
            ..EnvSpec::default()
        })
        .is_err());
        assert!(generate(&EnvSpec {
            n_states: 0,
            ..EnvSpec::default()
        })
        .is_err());
        assert!("maze".parse::<EnvKind>().is_err());
    }

    #[test]
    fn slip_free_chain_optimal_values_are_self_consistent() {
        let spec = EnvSpec {
            kind: EnvKind::Chain,
            n_states: 5,
            n_actions: 3,
            slip: 0.0,
            ..EnvSpec::default()
        };
        let mdp = generate(&spec).unwrap();
        let opt = dp::optimal_values(&mdp, 1e-12).unwrap();
        // Move right until the end, then any action keeps paying 1.
        assert!(opt.selector[..4].iter().all(|&a| a == 1));
        let goal_value = 1.0 / (1.0 - 0.9);
        assert!((opt.v_star[4] - goal_value).abs() < 1e-10);
        assert!((opt.v_star[3] - 0.9 * goal_value).abs() < 1e-10);
        for s in 0..5 {
            let best = opt.q_star.row(s).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!((best - opt.v_star[s]).abs() < 1e-10);
        }
    }

    #[test]
    fn grid_goal_is_absorbing() {
        let spec = EnvSpec {
            kind: EnvKind::Grid,
            n_states: 9,
            ..EnvSpec::default()
        };
        let mdp = generate(&spec).unwrap();
        for a in 0..4 {
            assert_eq!(mdp.transition_row(8, a)[8], 1.0);
        }
        // Corner bounce: moving up or left from cell 0 stays at 0.
        assert_eq!(mdp.transition_row(0, 0)[0], 1.0);
        assert_eq!(mdp.transition_row(0, 2)[0], 1.0);
        assert_eq!(mdp.transition_row(0, 3)[1], 1.0);
    }

    #[test]
    fn spec_json_defaults() {
        let spec: EnvSpec = serde_json::from_str(r#"{"kind": "grid", "n_states": 25}"#).unwrap();
        assert_eq!(spec.kind, EnvKind::Grid);
        assert_eq!(spec.dirichlet_alpha, 1.0);
        assert_eq!(spec.n_actions, 4);
    }
}
