//! Lower bounds on the performance difference and the baseline optimizers
//! they motivate.
//!
//! Every bound has the form `surrogate_linear - penalty`, where
//! `surrogate_linear = (1/(1-gamma)) sum_s d^pi(s) sum_a A_pi(s,a) pi'(a|s)`
//! and the penalty measures how far `pi'` moves from `pi` state by state.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::dp::{self, ValueBundle};
use crate::error::Result;
use crate::geometry::{fr2_squared_densities, kl, tv};
use crate::mdp::{Policy, TabularMdp};

/// Default clipping radius of the PPO objective.
pub const DEFAULT_EPS_CLIP: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundReport {
    pub lhs: f64,
    pub surrogate_linear: f64,
    pub penalty_max_tv2: f64,
    pub penalty_int_tv: f64,
    pub penalty_sqrt_kl: f64,
    pub penalty_int_tv2: f64,
    pub penalty_fr2: f64,
    pub rhs_max_tv2: f64,
    pub rhs_int_tv: f64,
    /// `-inf` when `pi'` is not absolutely continuous with respect to `pi`.
    pub rhs_sqrt_kl: f64,
    pub rhs_int_tv2: f64,
    pub rhs_fr2: f64,
}

impl BoundReport {
    pub fn rhs_values(&self) -> [(&'static str, f64); 5] {
        [
            ("max_tv2", self.rhs_max_tv2),
            ("int_tv", self.rhs_int_tv),
            ("sqrt_kl", self.rhs_sqrt_kl),
            ("int_tv2", self.rhs_int_tv2),
            ("fr2", self.rhs_fr2),
        ]
    }

    /// Largest `rhs - lhs` over the five bounds; nonpositive when all hold.
    pub fn worst_bound_excess(&self) -> f64 {
        self.rhs_values()
            .iter()
            .map(|&(_, rhs)| rhs - self.lhs)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest violation of `rhs_int_tv2 >= rhs_max_tv2` and
    /// `rhs_int_tv2 >= rhs_fr2`; nonpositive when both orderings hold.
    pub fn worst_ordering_excess(&self) -> f64 {
        (self.rhs_max_tv2 - self.rhs_int_tv2).max(self.rhs_fr2 - self.rhs_int_tv2)
    }

    pub fn holds(&self, bound_tol: f64, order_tol: f64) -> bool {
        self.worst_bound_excess() <= bound_tol && self.worst_ordering_excess() <= order_tol
    }
}

/// `sum_s weights(s) sum_a A(s,a) pi'(a|s)`.
fn linear_term(bundle: &ValueBundle, pi_new: &Policy) -> f64 {
    let mut total = 0.0;
    for s in 0..pi_new.n_states() {
        let mut inner = 0.0;
        for a in 0..pi_new.n_actions() {
            inner += bundle.adv[(s, a)] * pi_new.prob(s, a);
        }
        total += bundle.occupancy[s] * inner;
    }
    total
}

/// The linear term in likelihood-ratio form,
/// `(1/(1-gamma)) sum_s d^pi(s) sum_{a: pi>0} (pi'/pi) A pi`.
pub fn surrogate_linear_ratio_form(mdp: &TabularMdp, pi_new: &Policy, pi_old: &Policy) -> Result<f64> {
    let bundle = dp::evaluate(mdp, pi_old, mdp.rho())?;
    let mut total = 0.0;
    for s in 0..pi_old.n_states() {
        let mut inner = 0.0;
        for a in 0..pi_old.n_actions() {
            let p = pi_old.prob(s, a);
            if p > 0.0 {
                inner += pi_new.prob(s, a) / p * bundle.adv[(s, a)] * p;
            }
        }
        total += bundle.occupancy[s] * inner;
    }
    Ok(total / (1.0 - mdp.gamma()))
}

/// All five lower bounds on `V^{pi_new}(rho) - V^{pi_old}(rho)`.
pub fn bound_report(
    mdp: &TabularMdp,
    pi_new: &Policy,
    pi_old: &Policy,
    rho: &nalgebra::DVector<f64>,
) -> Result<BoundReport> {
    let old = dp::evaluate(mdp, pi_old, rho)?;
    let v_new = dp::policy_eval(mdp, pi_new)?;
    let lhs = dp::dot(&v_new, rho) - old.value_at(rho);
    let horizon = 1.0 - mdp.gamma();
    let surrogate_linear = linear_term(&old, pi_new) / horizon;

    let lambda = pi_old.reference().as_slice();
    let (mut max_tv2, mut int_tv, mut int_kl, mut int_tv2, mut int_fr2) = (0.0f64, 0.0, 0.0, 0.0, 0.0);
    for s in 0..pi_old.n_states() {
        let (n, o) = (pi_new.row(s), pi_old.row(s));
        let d = old.occupancy[s];
        let t = tv(&n, &o);
        max_tv2 = max_tv2.max(t * t);
        int_tv += d * t;
        int_tv2 += d * t * t;
        int_fr2 += d * fr2_squared_densities(&n, &o, lambda);
        let k = kl(&n, &o);
        // A state the occupancy never reaches cannot make the integral infinite.
        if d > 0.0 || k.is_finite() {
            int_kl += d * k;
        }
    }

    let r = mdp.reward_sup_norm();
    let cube = horizon.powi(3);
    let penalty_max_tv2 = 8.0 * r / cube * max_tv2;
    let penalty_int_tv = 4.0 * r / cube * int_tv;
    let penalty_sqrt_kl = 2.0 * 2f64.sqrt() * r / cube * int_kl.sqrt();
    let penalty_int_tv2 = 8.0 * r / cube * int_tv2;
    let penalty_fr2 = r / (2.0 * cube) * int_fr2;
    let rhs_sqrt_kl = if int_kl.is_finite() {
        surrogate_linear - penalty_sqrt_kl
    } else {
        f64::NEG_INFINITY
    };
    Ok(BoundReport {
        lhs,
        surrogate_linear,
        penalty_max_tv2,
        penalty_int_tv,
        penalty_sqrt_kl,
        penalty_int_tv2,
        penalty_fr2,
        rhs_max_tv2: surrogate_linear - penalty_max_tv2,
        rhs_int_tv: surrogate_linear - penalty_int_tv,
        rhs_sqrt_kl,
        rhs_int_tv2: surrogate_linear - penalty_int_tv2,
        rhs_fr2: surrogate_linear - penalty_fr2,
    })
}

fn clipped_term(ratio: f64, adv: f64, eps: f64) -> (f64, bool) {
    let plain = ratio * adv;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
    if plain <= clipped {
        (plain, true)
    } else {
        (clipped, false)
    }
}

fn clip_objective_with(bundle: &ValueBundle, pi_new: &Policy, pi_old: &Policy, eps: f64) -> f64 {
    let mut total = 0.0;
    for s in 0..pi_old.n_states() {
        let mut inner = 0.0;
        for a in 0..pi_old.n_actions() {
            let p = pi_old.prob(s, a);
            if p > 0.0 {
                inner += p * clipped_term(pi_new.prob(s, a) / p, bundle.adv[(s, a)], eps).0;
            }
        }
        total += bundle.occupancy[s] * inner;
    }
    total
}

/// PPO clipped objective
/// `J(pi') = sum_s d^pi(s) sum_a pi(a|s) min(r A, clip(r, 1-eps, 1+eps) A)`
/// with `r = pi'(a|s) / pi(a|s)`; actions outside the support of `pi`
/// contribute nothing.
pub fn ppo_clip_objective(
    mdp: &TabularMdp,
    pi_new: &Policy,
    pi_old: &Policy,
    rho: &nalgebra::DVector<f64>,
    eps: f64,
) -> Result<f64> {
    let bundle = dp::evaluate(mdp, pi_old, rho)?;
    Ok(clip_objective_with(&bundle, pi_new, pi_old, eps))
}

/// KL mirror-descent step `pi'(a|s) ∝ pi(a|s) exp(tau_kl A(s,a))`.
pub fn kl_md_step(mdp: &TabularMdp, pi: &Policy, tau_kl: f64) -> Result<Policy> {
    let v = dp::policy_eval(mdp, pi)?;
    let (_, adv) = dp::q_and_advantage(mdp, pi, &v)?;
    let mut probs = DMatrix::zeros(pi.n_states(), pi.n_actions());
    for s in 0..pi.n_states() {
        let shift = adv.row(s).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for a in 0..pi.n_actions() {
            let w = pi.prob(s, a) * (tau_kl * (adv[(s, a)] - shift)).exp();
            probs[(s, a)] = w;
            total += w;
        }
        for a in 0..pi.n_actions() {
            probs[(s, a)] /= total;
        }
    }
    Policy::new(probs, pi.reference().clone())
}

/// Euclidean projection onto the probability simplex.
fn simplex_projection(x: &[f64]) -> Vec<f64> {
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &v) in sorted.iter().enumerate() {
        cumulative += v;
        let candidate = (cumulative - 1.0) / (k + 1) as f64;
        if k == 0 || v > candidate {
            theta = candidate;
        } else {
            break;
        }
    }
    x.iter().map(|&v| (v - theta).max(0.0)).collect()
}

/// Projected-gradient ascent on the PPO clipped objective over tabular
/// policies supported where `pi_old` is. Each step moves every entry by at
/// most `eps`; the best iterate by `J` is returned.
pub fn ppo_clip_ascent(
    mdp: &TabularMdp,
    pi_old: &Policy,
    rho: &nalgebra::DVector<f64>,
    eps: f64,
    inner_iters: usize,
) -> Result<Policy> {
    let bundle = dp::evaluate(mdp, pi_old, rho)?;
    let (n_states, n_actions) = (pi_old.n_states(), pi_old.n_actions());
    let mut current = pi_old.clone();
    let mut best = (0.0, pi_old.clone());
    for _ in 0..inner_iters {
        let mut grad = DMatrix::zeros(n_states, n_actions);
        for s in 0..n_states {
            for a in 0..n_actions {
                let p = pi_old.prob(s, a);
                if p > 0.0 {
                    let (_, active) = clipped_term(current.prob(s, a) / p, bundle.adv[(s, a)], eps);
                    if active {
                        grad[(s, a)] = bundle.occupancy[s] * bundle.adv[(s, a)];
                    }
                }
            }
        }
        let largest = grad.amax();
        if largest == 0.0 {
            break;
        }
        let step = eps / largest;
        let mut probs = DMatrix::zeros(n_states, n_actions);
        for s in 0..n_states {
            let support: Vec<usize> = (0..n_actions).filter(|&a| pi_old.prob(s, a) > 0.0).collect();
            let moved: Vec<f64> = support
                .iter()
                .map(|&a| current.prob(s, a) + step * grad[(s, a)])
                .collect();
            for (&a, p) in support.iter().zip(simplex_projection(&moved)) {
                probs[(s, a)] = p;
            }
        }
        current = Policy::new(probs, pi_old.reference().clone())?;
        let j = clip_objective_with(&bundle, &current, pi_old, eps);
        if j > best.0 {
            best = (j, current.clone());
        }
    }
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::ReferenceMeasure;

    fn one_state(gamma: f64, reward: [f64; 2]) -> TabularMdp {
        TabularMdp::new(&[vec![vec![1.0], vec![1.0]]], &[reward.to_vec()], gamma, &[1.0]).unwrap()
    }

    fn two_state() -> TabularMdp {
        let p = vec![
            vec![vec![0.6, 0.4], vec![0.1, 0.9]],
            vec![vec![0.3, 0.7], vec![0.8, 0.2]],
        ];
        let r = vec![vec![1.0, 0.0], vec![-0.5, 0.5]];
        TabularMdp::new(&p, &r, 0.8, &[0.5, 0.5]).unwrap()
    }

    fn rows(r: &[Vec<f64>]) -> Policy {
        Policy::from_rows(r, ReferenceMeasure::uniform(r[0].len())).unwrap()
    }

    #[test]
    fn identical_policies_give_zero_report() {
        let mdp = two_state();
        let pi = rows(&[vec![0.3, 0.7], vec![0.5, 0.5]]);
        let r = bound_report(&mdp, &pi, &pi, mdp.rho()).unwrap();
        for v in [
            r.lhs,
            r.penalty_max_tv2,
            r.penalty_int_tv,
            r.penalty_sqrt_kl,
            r.penalty_int_tv2,
            r.penalty_fr2,
        ] {
            assert_eq!(v, 0.0);
        }
        assert!(r.surrogate_linear.abs() < 1e-15);
        assert!(r.holds(1e-12, 1e-12));
    }

    #[test]
    fn myopic_one_state_bounds_hold_with_penalty_slack() {
        let mdp = one_state(0.0, [1.0, 0.0]);
        let new = rows(&[vec![0.9, 0.1]]);
        let old = rows(&[vec![0.3, 0.7]]);
        let r = bound_report(&mdp, &new, &old, mdp.rho()).unwrap();
        assert!((r.lhs - r.surrogate_linear).abs() < 1e-15);
        assert!((r.lhs - 0.6).abs() < 1e-15);
        assert!((r.lhs - r.rhs_int_tv2 - r.penalty_int_tv2).abs() < 1e-15);
        // TV = 0.6, FR^2 of squares = 4 * 0.5 * 2 * 1.2^2.
        assert!((r.penalty_max_tv2 - 8.0 * 0.36).abs() < 1e-14);
        assert!((r.penalty_fr2 - 0.5 * 5.76).abs() < 1e-14);
        assert!(r.holds(1e-12, 1e-12));
    }

    #[test]
    fn kl_bound_is_vacuous_without_absolute_continuity() {
        let mdp = two_state();
        let new = rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]);
        let old = rows(&[vec![1.0, 0.0], vec![0.5, 0.5]]);
        let r = bound_report(&mdp, &new, &old, mdp.rho()).unwrap();
        assert_eq!(r.rhs_sqrt_kl, f64::NEG_INFINITY);
        assert!(r.holds(1e-9, 1e-12));
    }

    #[test]
    fn ratio_form_agrees() {
        let mdp = two_state();
        let new = rows(&[vec![0.2, 0.8], vec![0.9, 0.1]]);
        let old = rows(&[vec![0.3, 0.7], vec![0.4, 0.6]]);
        let r = bound_report(&mdp, &new, &old, mdp.rho()).unwrap();
        let ratio = surrogate_linear_ratio_form(&mdp, &new, &old).unwrap();
        assert!((r.surrogate_linear - ratio).abs() < 1e-12);
    }

    #[test]
    fn clip_objective_examples() {
        let mdp = one_state(0.0, [1.0, 0.0]);
        let old = rows(&[vec![0.25, 0.75]]);
        // A = (0.75, -0.25); d = 1.
        assert!(ppo_clip_objective(&mdp, &old, &old, mdp.rho(), 0.2).unwrap().abs() < 1e-16);
        let near = rows(&[vec![0.27, 0.73]]);
        let j = ppo_clip_objective(&mdp, &near, &old, mdp.rho(), 0.2).unwrap();
        let unclipped = 0.27 * 0.75 - 0.73 * 0.25;
        assert!((j - unclipped).abs() < 1e-15);
        // Ratio 2 on the positive-advantage action is clipped to 1.2; ratio
        // 2/3 on the negative one is clipped to 0.8, which is the smaller term.
        let far = rows(&[vec![0.5, 0.5]]);
        let j = ppo_clip_objective(&mdp, &far, &old, mdp.rho(), 0.2).unwrap();
        let expected = 0.25 * 1.2 * 0.75 + 0.75 * 0.8 * -0.25;
        assert!((j - expected).abs() < 1e-15, "{j} vs {expected}");
    }

    #[test]
    fn kl_step_examples() {
        let mdp = one_state(0.0, [0.5, -0.5]);
        let uniform = rows(&[vec![0.5, 0.5]]);
        let out = kl_md_step(&mdp, &uniform, 1.0).unwrap();
        let e = (0.5f64.exp(), (-0.5f64).exp());
        assert!((out.prob(0, 0) - e.0 / (e.0 + e.1)).abs() < 1e-15);

        let flat = one_state(0.5, [2.0, 2.0]);
        let pi = rows(&[vec![0.3, 0.7]]);
        assert!(kl_md_step(&flat, &pi, 3.0).unwrap().max_abs_diff(&pi) < 1e-15);
    }

    #[test]
    fn clip_ascent_does_not_lose_objective() {
        let mdp = two_state();
        let old = rows(&[vec![0.3, 0.7], vec![0.6, 0.4]]);
        let out = ppo_clip_ascent(&mdp, &old, mdp.rho(), 0.2, 20).unwrap();
        let j = ppo_clip_objective(&mdp, &out, &old, mdp.rho(), 0.2).unwrap();
        assert!(j > 0.0);

        let zero = TabularMdp::new(&[vec![vec![1.0], vec![1.0]]], &[vec![0.0, 0.0]], 0.9, &[1.0]).unwrap();
        let pi = rows(&[vec![0.3, 0.7]]);
        assert_eq!(ppo_clip_ascent(&zero, &pi, zero.rho(), 0.2, 20).unwrap(), pi);
    }

    #[test]
    fn simplex_projection_examples() {
        assert_eq!(simplex_projection(&[0.5, 0.5]), vec![0.5, 0.5]);
        assert_eq!(simplex_projection(&[2.0, 0.0]), vec![1.0, 0.0]);
        let p = simplex_projection(&[0.2, 0.2, 0.2]);
        assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
    }
}
