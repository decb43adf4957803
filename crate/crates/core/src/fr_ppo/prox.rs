//! Per-state proximal step in the Fisher-Rao geometry of squared densities.
//!
//! In density coordinates `p = m / lambda` the step objective
//! `sum_a A(a) m(a) - FR^2(m^2, pi^2) / (2 tau)` equals
//! `-(2 / tau) sum_a lambda(a) (p(a) - q(a))^2 + const` with
//! `q = p_pi + tau A / 4`, so the maximizer is the lambda-weighted Euclidean
//! projection of `q` onto `{p >= 0 : sum_a lambda(a) p(a) = 1}`.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::geometry::fr2_squared_densities;

/// Projection of `target` onto `{p >= 0 : sum_i weights[i] p[i] = 1}` in the
/// norm `sum_i weights[i] x[i]^2`, by sorting and thresholding.
///
/// The solution is `p = max(target - theta, 0)`; sorting `target` in
/// decreasing order, the active set is the longest prefix whose entries stay
/// above the threshold computed from that prefix.
pub fn weighted_simplex_projection(target: &[f64], weights: &[f64]) -> Vec<f64> {
    assert_eq!(target.len(), weights.len());
    assert!(!target.is_empty());
    let mut order: Vec<usize> = (0..target.len()).collect();
    order.sort_by(|&i, &j| {
        target[j]
            .partial_cmp(&target[i])
            .unwrap_or(Ordering::Equal)
            .then(i.cmp(&j))
    });

    let mut weight_sum = 0.0;
    let mut weighted_sum = 0.0;
    let mut theta = 0.0;
    for &i in &order {
        let w = weight_sum + weights[i];
        let s = weighted_sum + weights[i] * target[i];
        let candidate = (s - 1.0) / w;
        if target[i] > candidate || weight_sum == 0.0 {
            weight_sum = w;
            weighted_sum = s;
            theta = candidate;
        } else {
            break;
        }
    }
    target.iter().map(|&t| (t - theta).max(0.0)).collect()
}

fn check_inputs(adv_row: &[f64], pi_row: &[f64], lambda: &[f64], tau: f64) -> Result<()> {
    if adv_row.len() != pi_row.len() || pi_row.len() != lambda.len() {
        return Err(Error::InvalidInput(
            "advantage, policy and reference rows differ in length".into(),
        ));
    }
    if let Some(a) = adv_row.iter().position(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!("advantage entry {a} is not finite")));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "step parameter must be positive, got {tau}"
        )));
    }
    if lambda.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidParameter(
            "reference measure must be strictly positive".into(),
        ));
    }
    Ok(())
}

/// Unconstrained target densities `q = pi / lambda + tau A / 4`.
pub fn prox_target(adv_row: &[f64], pi_row: &[f64], lambda: &[f64], tau: f64) -> Vec<f64> {
    adv_row
        .iter()
        .zip(pi_row)
        .zip(lambda)
        .map(|((&a, &p), &l)| p / l + 0.25 * tau * a)
        .collect()
}

/// Exact maximizer of the per-state step objective, returned as a
/// distribution over actions.
pub fn prox_step_state(adv_row: &[f64], pi_row: &[f64], lambda: &[f64], tau: f64) -> Result<Vec<f64>> {
    check_inputs(adv_row, pi_row, lambda, tau)?;
    let q = prox_target(adv_row, pi_row, lambda, tau);
    let density = weighted_simplex_projection(&q, lambda);
    Ok(density.iter().zip(lambda).map(|(p, l)| p * l).collect())
}

/// `sum_a A(a) m(a) - FR^2(m^2, pi^2) / (2 tau)`.
pub fn prox_objective(adv_row: &[f64], pi_row: &[f64], m: &[f64], lambda: &[f64], tau: f64) -> f64 {
    let mut linear = 0.0;
    for (a, x) in adv_row.iter().zip(m) {
        linear += a * x;
    }
    linear - fr2_squared_densities(m, pi_row, lambda) / (2.0 * tau)
}

/// Largest violation of the optimality conditions at `m`.
///
/// With `g(a) = (4 / tau) (q(a) - p(a))` the conditions are `g(a) = nu` on
/// the support of `m` and `g(a) <= nu` off it, for one multiplier `nu`.
pub fn kkt_residual(adv_row: &[f64], pi_row: &[f64], m: &[f64], lambda: &[f64], tau: f64) -> f64 {
    let q = prox_target(adv_row, pi_row, lambda, tau);
    let g: Vec<f64> = q
        .iter()
        .zip(m)
        .zip(lambda)
        .map(|((&q, &m), &l)| 4.0 / tau * (q - m / l))
        .collect();
    let support: Vec<usize> = (0..m.len()).filter(|&a| m[a] > 0.0).collect();
    if support.is_empty() {
        return f64::INFINITY;
    }
    let nu = support.iter().map(|&a| g[a]).sum::<f64>() / support.len() as f64;
    let mut worst = 0.0f64;
    for a in 0..m.len() {
        let r = if m[a] > 0.0 {
            (g[a] - nu).abs()
        } else {
            (g[a] - nu).max(0.0)
        };
        worst = worst.max(r);
    }
    let mass: f64 = m.iter().sum();
    worst
        .max((mass - 1.0).abs())
        .max(m.iter().fold(0.0f64, |w, &x| w.max(-x)))
}
