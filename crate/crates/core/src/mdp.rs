//! Finite MDPs, reference measures on actions, and tabular policies.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-sum and normalization tolerance for every stochastic object.
pub const PROB_TOL: f64 = 1e-12;

/// Finite discounted MDP.
///
/// `transition` is stored flat in row-major `s -> a -> s'` order. The type
/// only enforces shapes; use [`TabularMdp::validate`] (or [`TabularMdp::new`],
/// which rejects any violation) for the probabilistic invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: DMatrix<f64>,
    gamma: f64,
    rho: DVector<f64>,
}

/// A single broken invariant of a [`TabularMdp`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    TransitionRowSum {
        state: usize,
        action: usize,
        sum: f64,
    },
    NegativeTransition {
        state: usize,
        action: usize,
        next: usize,
        value: f64,
    },
    RhoSum {
        sum: f64,
    },
    NegativeRho {
        state: usize,
        value: f64,
    },
    GammaOutOfRange {
        gamma: f64,
    },
    NonFiniteReward {
        state: usize,
        action: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TransitionRowSum { state, action, sum } => {
                write!(f, "transition[{state}][{action}] sums to {sum}")
            }
            Violation::NegativeTransition {
                state,
                action,
                next,
                value,
            } => {
                write!(f, "transition[{state}][{action}][{next}] = {value} is negative")
            }
            Violation::RhoSum { sum } => write!(f, "rho sums to {sum}"),
            Violation::NegativeRho { state, value } => write!(f, "rho[{state}] = {value} is negative"),
            Violation::GammaOutOfRange { gamma } => write!(f, "gamma out of range: {gamma}"),
            Violation::NonFiniteReward { state, action } => {
                write!(f, "reward[{state}][{action}] is not finite")
            }
        }
    }
}

impl TabularMdp {
    /// Builds an MDP from nested `s -> a -> s'` transitions and `s -> a`
    /// rewards, checking shapes only.
    pub fn from_parts(transition: &[Vec<Vec<f64>>], reward: &[Vec<f64>], gamma: f64, rho: &[f64]) -> Result<Self> {
        let n_states = transition.len();
        if n_states == 0 {
            return Err(Error::InvalidInput("MDP needs at least one state".into()));
        }
        let n_actions = transition[0].len();
        if n_actions == 0 {
            return Err(Error::InvalidInput("MDP needs at least one action".into()));
        }
        let mut flat = Vec::with_capacity(n_states * n_actions * n_states);
        for (s, per_action) in transition.iter().enumerate() {
            if per_action.len() != n_actions {
                return Err(Error::InvalidInput(format!(
                    "transition[{s}] has {} actions, expected {n_actions}",
                    per_action.len()
                )));
            }
            for (a, row) in per_action.iter().enumerate() {
                if row.len() != n_states {
                    return Err(Error::InvalidInput(format!(
                        "transition[{s}][{a}] has length {}, expected {n_states}",
                        row.len()
                    )));
                }
                flat.extend_from_slice(row);
            }
        }
        if reward.len() != n_states || reward.iter().any(|r| r.len() != n_actions) {
            return Err(Error::InvalidInput(format!("reward must be {n_states}x{n_actions}")));
        }
        if rho.len() != n_states {
            return Err(Error::InvalidInput(format!(
                "rho has length {}, expected {n_states}",
                rho.len()
            )));
        }
        let reward = DMatrix::from_fn(n_states, n_actions, |s, a| reward[s][a]);
        Ok(Self {
            n_states,
            n_actions,
            transition: flat,
            reward,
            gamma,
            rho: DVector::from_column_slice(rho),
        })
    }

    /// Like [`TabularMdp::from_parts`] but also rejects any invariant violation.
    pub fn new(transition: &[Vec<Vec<f64>>], reward: &[Vec<f64>], gamma: f64, rho: &[f64]) -> Result<Self> {
        let mdp = Self::from_parts(transition, reward, gamma, rho)?;
        mdp.ensure_valid()?;
        Ok(mdp)
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(())
        } else {
            let msgs: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            Err(Error::InvalidInput(msgs.join("; ")))
        }
    }

    /// Every broken invariant, in a fixed order. Never aborts.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let row = self.transition_row(s, a);
                let mut sum = 0.0;
                for (next, &p) in row.iter().enumerate() {
                    if p < 0.0 || p.is_nan() {
                        out.push(Violation::NegativeTransition {
                            state: s,
                            action: a,
                            next,
                            value: p,
                        });
                    }
                    sum += p;
                }
                if !((sum - 1.0).abs() <= PROB_TOL) {
                    out.push(Violation::TransitionRowSum {
                        state: s,
                        action: a,
                        sum,
                    });
                }
                if !self.reward[(s, a)].is_finite() {
                    out.push(Violation::NonFiniteReward { state: s, action: a });
                }
            }
        }
        let mut sum = 0.0;
        for (s, &p) in self.rho.iter().enumerate() {
            if p < 0.0 || p.is_nan() {
                out.push(Violation::NegativeRho { state: s, value: p });
            }
            sum += p;
        }
        if !((sum - 1.0).abs() <= PROB_TOL) {
            out.push(Violation::RhoSum { sum });
        }
        if !(0.0..1.0).contains(&self.gamma) {
            out.push(Violation::GammaOutOfRange { gamma: self.gamma });
        }
        out
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rho(&self) -> &DVector<f64> {
        &self.rho
    }

    /// Reward matrix, `n_states x n_actions`.
    pub fn reward(&self) -> &DMatrix<f64> {
        &self.reward
    }

    /// `P(. | s, a)` as a slice over next states.
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    /// Sup norm of the reward.
    pub fn reward_sup_norm(&self) -> f64 {
        self.reward.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    pub fn with_rho(&self, rho: &[f64]) -> Result<Self> {
        if rho.len() != self.n_states {
            return Err(Error::InvalidInput("rho dimension mismatch".into()));
        }
        let mut out = self.clone();
        out.rho = DVector::from_column_slice(rho);
        Ok(out)
    }

    pub fn with_gamma(&self, gamma: f64) -> Self {
        let mut out = self.clone();
        out.gamma = gamma;
        out
    }

    pub fn to_document(&self, lambda: &ReferenceMeasure) -> MdpDocument {
        MdpDocument {
            n_states: self.n_states,
            n_actions: self.n_actions,
            gamma: self.gamma,
            rho: self.rho.iter().copied().collect(),
            reward: (0..self.n_states)
                .map(|s| (0..self.n_actions).map(|a| self.reward[(s, a)]).collect())
                .collect(),
            transition: (0..self.n_states)
                .map(|s| {
                    (0..self.n_actions)
                        .map(|a| self.transition_row(s, a).to_vec())
                        .collect()
                })
                .collect(),
            lambda: lambda.as_slice().to_vec(),
        }
    }

    pub fn to_json(&self, lambda: &ReferenceMeasure) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document(lambda))?)
    }

    pub fn from_json(text: &str) -> Result<(Self, ReferenceMeasure)> {
        let doc: MdpDocument = serde_json::from_str(text)?;
        doc.into_parts()
    }
}

/// JSON form of an MDP together with its reference measure. Field order is
/// the serialization order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub rho: Vec<f64>,
    pub reward: Vec<Vec<f64>>,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub lambda: Vec<f64>,
}

impl MdpDocument {
    pub fn into_parts(self) -> Result<(TabularMdp, ReferenceMeasure)> {
        let mdp = TabularMdp::new(&self.transition, &self.reward, self.gamma, &self.rho)?;
        if mdp.n_states != self.n_states || mdp.n_actions != self.n_actions {
            return Err(Error::InvalidInput(
                "declared sizes disagree with the nested arrays".into(),
            ));
        }
        let lambda = ReferenceMeasure::new(self.lambda)?;
        if lambda.len() != mdp.n_actions {
            return Err(Error::InvalidInput("lambda dimension mismatch".into()));
        }
        Ok((mdp, lambda))
    }
}

/// Strictly positive probability vector over actions against which policy
/// densities are taken.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceMeasure {
    weights: Vec<f64>,
}

impl ReferenceMeasure {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidParameter("reference measure is empty".into()));
        }
        if let Some(a) = weights.iter().position(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "reference weight {a} = {} is not strictly positive",
                weights[a]
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidParameter(format!("reference measure sums to {sum}")));
        }
        Ok(Self { weights })
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "reference measure needs at least one action");
        Self {
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }
}

/// Tabular stochastic policy `pi[s][a]` with its reference measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    probs: DMatrix<f64>,
    reference: ReferenceMeasure,
}

impl Policy {
    pub fn new(probs: DMatrix<f64>, reference: ReferenceMeasure) -> Result<Self> {
        if probs.ncols() != reference.len() {
            return Err(Error::InvalidInput(format!(
                "policy has {} actions but reference measure has {}",
                probs.ncols(),
                reference.len()
            )));
        }
        for s in 0..probs.nrows() {
            let mut sum = 0.0;
            for a in 0..probs.ncols() {
                let p = probs[(s, a)];
                if !(p >= 0.0 && p.is_finite()) {
                    return Err(Error::InvalidInput(format!("pi[{s}][{a}] = {p}")));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > PROB_TOL {
                return Err(Error::InvalidInput(format!("policy row {s} sums to {sum}")));
            }
        }
        Ok(Self { probs, reference })
    }

    pub fn from_rows(rows: &[Vec<f64>], reference: ReferenceMeasure) -> Result<Self> {
        let n_actions = reference.len();
        if rows.iter().any(|r| r.len() != n_actions) {
            return Err(Error::InvalidInput("policy row length mismatch".into()));
        }
        let probs = DMatrix::from_fn(rows.len(), n_actions, |s, a| rows[s][a]);
        Self::new(probs, reference)
    }

    /// Uniform policy over actions for every state of `mdp`.
    pub fn uniform(mdp: &TabularMdp, reference: ReferenceMeasure) -> Result<Self> {
        if reference.len() != mdp.n_actions() {
            return Err(Error::InvalidInput("reference measure dimension mismatch".into()));
        }
        let n = mdp.n_actions() as f64;
        Ok(Self {
            probs: DMatrix::from_element(mdp.n_states(), mdp.n_actions(), 1.0 / n),
            reference,
        })
    }

    /// Deterministic policy playing `selector[s]` in state `s`.
    pub fn deterministic(selector: &[usize], reference: ReferenceMeasure) -> Result<Self> {
        let n_actions = reference.len();
        if let Some(&a) = selector.iter().find(|&&a| a >= n_actions) {
            return Err(Error::InvalidInput(format!("action {a} out of range")));
        }
        let probs = DMatrix::from_fn(
            selector.len(),
            n_actions,
            |s, a| {
                if selector[s] == a {
                    1.0
                } else {
                    0.0
                }
            },
        );
        Ok(Self { probs, reference })
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    pub fn reference(&self) -> &ReferenceMeasure {
        &self.reference
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[(s, a)]
    }

    pub fn row(&self, s: usize) -> Vec<f64> {
        self.probs.row(s).iter().copied().collect()
    }

    /// Density `pi(a|s) / lambda(a)`.
    pub fn density(&self, s: usize, a: usize) -> f64 {
        self.probs[(s, a)] / self.reference.as_slice()[a]
    }

    /// `(1 - eps) * self + eps * other`.
    pub fn mix(&self, other: &Policy, eps: f64) -> Result<Policy> {
        if self.probs.shape() != other.probs.shape() {
            return Err(Error::InvalidInput("policy shapes differ".into()));
        }
        let probs = self.probs.zip_map(&other.probs, |p, q| (1.0 - eps) * p + eps * q);
        Policy::new(probs, self.reference.clone())
    }

    /// Replaces row `s`; the row must be a distribution.
    pub fn with_row(&self, s: usize, row: &[f64]) -> Result<Policy> {
        let mut probs = self.probs.clone();
        for (a, &p) in row.iter().enumerate() {
            probs[(s, a)] = p;
        }
        Policy::new(probs, self.reference.clone())
    }

    pub fn max_abs_diff(&self, other: &Policy) -> f64 {
        self.probs
            .iter()
            .zip(other.probs.iter())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Tabular softmax policy `pi(a|s) ∝ lambda(a) exp(theta[s][a])`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    pub theta: DMatrix<f64>,
    pub reference: ReferenceMeasure,
}

impl SoftmaxPolicy {
    pub fn new(theta: DMatrix<f64>, reference: ReferenceMeasure) -> Result<Self> {
        if theta.ncols() != reference.len() {
            return Err(Error::InvalidInput(
                "logit columns must match the reference measure".into(),
            ));
        }
        Ok(Self { theta, reference })
    }

    pub fn zeros(n_states: usize, reference: ReferenceMeasure) -> Self {
        Self {
            theta: DMatrix::zeros(n_states, reference.len()),
            reference,
        }
    }

    pub fn to_policy(&self) -> Result<Policy> {
        softmax_to_policy(self)
    }
}

/// Converts logits to a policy, subtracting each row's max before
/// exponentiating.
pub fn softmax_to_policy(sp: &SoftmaxPolicy) -> Result<Policy> {
    if let Some(bad) = sp.theta.iter().find(|t| !t.is_finite()) {
        return Err(Error::InvalidParameter(format!("non-finite logit {bad}")));
    }
    let lambda = sp.reference.as_slice();
    let (n_states, n_actions) = sp.theta.shape();
    let mut probs = DMatrix::zeros(n_states, n_actions);
    for s in 0..n_states {
        let row = sp.theta.row(s);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for a in 0..n_actions {
            let w = lambda[a] * (row[a] - max).exp();
            probs[(s, a)] = w;
            z += w;
        }
        for a in 0..n_actions {
            probs[(s, a)] /= z;
        }
    }
    Policy::new(probs, sp.reference.clone())
}

pub fn uniform_policy(mdp: &TabularMdp, lambda: &ReferenceMeasure) -> Result<Policy> {
    Policy::uniform(mdp, lambda.clone())
}

pub fn validate_mdp(mdp: &TabularMdp) -> Vec<Violation> {
    mdp.validate()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_by_two() -> (Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>) {
        (
            vec![
                vec![vec![0.7, 0.3], vec![0.2, 0.8]],
                vec![vec![1.0, 0.0], vec![0.5, 0.5]],
            ],
            vec![vec![1.0, 0.0], vec![0.0, 2.0]],
        )
    }

    #[test]
    fn valid_mdp_has_no_violations() {
        let (p, r) = two_by_two();
        let mdp = TabularMdp::from_parts(&p, &r, 0.9, &[0.5, 0.5]).unwrap();
        assert!(validate_mdp(&mdp).is_empty());
    }

    #[test]
    fn short_row_is_named() {
        let (mut p, r) = two_by_two();
        p[1][0] = vec![0.98, 0.0];
        let mdp = TabularMdp::from_parts(&p, &r, 0.9, &[0.5, 0.5]).unwrap();
        let v = validate_mdp(&mdp);
        assert_eq!(v.len(), 1);
        match &v[0] {
            Violation::TransitionRowSum { state, action, .. } => assert_eq!((*state, *action), (1, 0)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(TabularMdp::new(&p, &r, 0.9, &[0.5, 0.5]).is_err());
    }

    #[test]
    fn gamma_one_is_rejected() {
        let (p, r) = two_by_two();
        let mdp = TabularMdp::from_parts(&p, &r, 1.0, &[0.5, 0.5]).unwrap();
        let v = validate_mdp(&mdp);
        assert_eq!(v, vec![Violation::GammaOutOfRange { gamma: 1.0 }]);
        assert!(v[0].to_string().contains("gamma out of range"));
    }

    #[test]
    fn rho_and_reward_violations() {
        let (p, mut r) = two_by_two();
        r[0][1] = f64::NAN;
        let mdp = TabularMdp::from_parts(&p, &r, 0.5, &[0.6, 0.6]).unwrap();
        let v = validate_mdp(&mdp);
        assert!(v.contains(&Violation::NonFiniteReward { state: 0, action: 1 }));
        assert!(v.iter().any(|x| matches!(x, Violation::RhoSum { .. })));
    }

    #[test]
    fn shape_errors() {
        let (p, r) = two_by_two();
        assert!(TabularMdp::from_parts(&p, &r, 0.5, &[1.0]).is_err());
        assert!(TabularMdp::from_parts(&p, &r[..1], 0.5, &[0.5, 0.5]).is_err());
        assert!(TabularMdp::from_parts(&[], &[], 0.5, &[]).is_err());
    }

    #[test]
    fn uniform_policy_rows() {
        let (p, r) = two_by_two();
        let mdp = TabularMdp::new(&p, &r, 0.5, &[0.5, 0.5]).unwrap();
        let pi = uniform_policy(&mdp, &ReferenceMeasure::uniform(2)).unwrap();
        assert!(pi.probs().iter().all(|&x| x == 0.5));

        let one = TabularMdp::new(&[vec![vec![1.0]]], &[vec![3.0]], 0.5, &[1.0]).unwrap();
        let pi = uniform_policy(&one, &ReferenceMeasure::uniform(1)).unwrap();
        assert_eq!(pi.prob(0, 0), 1.0);

        let four = TabularMdp::new(&[vec![vec![1.0]; 4]], &[vec![0.0; 4]], 0.5, &[1.0]).unwrap();
        let lambda = ReferenceMeasure::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let pi = uniform_policy(&four, &lambda).unwrap();
        assert!(pi.probs().iter().all(|&x| x == 0.25));
        assert_eq!(pi.row(0).iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn reference_measure_rejects_zero_and_bad_sum() {
        assert!(ReferenceMeasure::new(vec![0.0, 1.0]).is_err());
        assert!(ReferenceMeasure::new(vec![0.5, 0.6]).is_err());
        assert!(ReferenceMeasure::new(vec![]).is_err());
    }

    #[test]
    fn softmax_known_values() {
        let lambda = ReferenceMeasure::uniform(2);
        let sp = SoftmaxPolicy::new(DMatrix::from_row_slice(1, 2, &[3f64.ln(), 0.0]), lambda.clone()).unwrap();
        let pi = softmax_to_policy(&sp).unwrap();
        assert!((pi.prob(0, 0) - 0.75).abs() < 1e-15);
        assert!((pi.prob(0, 1) - 0.25).abs() < 1e-15);

        let zero = SoftmaxPolicy::zeros(3, ReferenceMeasure::uniform(4));
        let pi = softmax_to_policy(&zero).unwrap();
        assert!(pi.probs().iter().all(|&x| (x - 0.25).abs() < 1e-16));

        let bad = SoftmaxPolicy::new(DMatrix::from_row_slice(1, 2, &[f64::INFINITY, 0.0]), lambda).unwrap();
        assert!(matches!(softmax_to_policy(&bad), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn json_round_trip_keeps_field_order() {
        let (p, r) = two_by_two();
        let mdp = TabularMdp::new(&p, &r, 0.9, &[0.25, 0.75]).unwrap();
        let lambda = ReferenceMeasure::uniform(2);
        let text = mdp.to_json(&lambda).unwrap();
        let keys = [
            "\"n_states\"",
            "\"n_actions\"",
            "\"gamma\"",
            "\"rho\"",
            "\"reward\"",
            "\"transition\"",
            "\"lambda\"",
        ];
        let positions: Vec<usize> = keys.iter().map(|k| text.find(k).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        let (back, back_lambda) = TabularMdp::from_json(&text).unwrap();
        assert_eq!(back, mdp);
        assert_eq!(back_lambda, lambda);
    }

    proptest! {
        #[test]
        fn softmax_rows_are_valid_and_shift_invariant(
            logits in proptest::collection::vec(-30.0f64..30.0, 6),
            shift in -100.0f64..100.0,
            raw_lambda in proptest::collection::vec(0.05f64..1.0, 3),
        ) {
            let total: f64 = raw_lambda.iter().sum();
            let lambda = ReferenceMeasure::new(raw_lambda.iter().map(|x| x / total).collect::<Vec<_>>());
            prop_assume!(lambda.is_ok());
            let lambda = lambda.unwrap();
            let theta = DMatrix::from_row_slice(2, 3, &logits);
            let pi = softmax_to_policy(&SoftmaxPolicy::new(theta.clone(), lambda.clone()).unwrap()).unwrap();
            prop_assert!(pi.probs().iter().all(|&x| x > 0.0));
            let shifted = theta.map(|t| t + shift);
            let pi2 = softmax_to_policy(&SoftmaxPolicy::new(shifted, lambda.clone()).unwrap()).unwrap();
            prop_assert!(pi.max_abs_diff(&pi2) < 1e-12);
            for s in 0..2 {
                let mass: f64 = (0..3).map(|a| lambda.as_slice()[a] * pi.density(s, a)).sum();
                prop_assert!((mass - 1.0).abs() < 1e-12);
            }
        }
    }
}
