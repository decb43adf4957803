//! Numerical checks of the two inequalities the convergence argument chains:
//! the per-state improvement estimate and the Bregman three-point property.

use crate::dp;
use crate::error::{Error, Result};
use crate::geometry::bregman_chi2;
use crate::mdp::{Policy, TabularMdp};

use super::prox::prox_step_state;

/// Per-state slack of
/// `(V^{n+1} - V^n)(s) >= sum_a A_n(s,a)(pi^{n+1} - pi^n)(a|s) - D_h(pi^{n+1} | pi^n)(s) / tau`.
pub fn pointwise_estimate_check(mdp: &TabularMdp, pi_n: &Policy, pi_next: &Policy, tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "step parameter must be positive, got {tau}"
        )));
    }
    let v_n = dp::policy_eval(mdp, pi_n)?;
    let v_next = dp::policy_eval(mdp, pi_next)?;
    let (_, adv) = dp::q_and_advantage(mdp, pi_n, &v_n)?;
    let lambda = pi_n.reference().as_slice();
    Ok((0..mdp.n_states())
        .map(|s| {
            let (cur, next) = (pi_n.row(s), pi_next.row(s));
            let mut gain = 0.0;
            for a in 0..mdp.n_actions() {
                gain += adv[(s, a)] * (next[a] - cur[a]);
            }
            (v_next[s] - v_n[s]) - (gain - bregman_chi2(&next, &cur, lambda) / tau)
        })
        .collect())
}

/// Slack of the three-point inequality at the step solution `m_bar` for the
/// probe `m'`:
/// `G(m_bar) - D(m'|m_bar) - D(m_bar|nu) - [G(m') - D(m'|nu)]`, with
/// `G(m) = tau sum_a A(a) (m - nu)(a)` and `nu` the current row.
pub fn three_point_check(
    adv_row: &[f64],
    pi_n_row: &[f64],
    probe_row: &[f64],
    lambda: &[f64],
    tau: f64,
) -> Result<f64> {
    if probe_row.len() != pi_n_row.len() {
        return Err(Error::InvalidInput("probe length mismatch".into()));
    }
    let m_bar = prox_step_state(adv_row, pi_n_row, lambda, tau)?;
    let g = |m: &[f64]| {
        let mut acc = 0.0;
        for a in 0..m.len() {
            acc += adv_row[a] * (m[a] - pi_n_row[a]);
        }
        tau * acc
    };
    let lhs = g(probe_row) - bregman_chi2(probe_row, pi_n_row, lambda);
    let rhs = g(&m_bar) - bregman_chi2(probe_row, &m_bar, lambda) - bregman_chi2(&m_bar, pi_n_row, lambda);
    Ok(rhs - lhs)
}
