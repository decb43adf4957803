//! Exact dynamic programming for tabular MDPs.
//!
//! Policy values and occupancy measures come from dense LU solves of
//! `(I - gamma P_pi)`, so every downstream certificate is checked against
//! quantities that are exact up to floating-point rounding. All reductions
//! run in a fixed sequential order.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::{Policy, TabularMdp};

/// Everything exact DP knows about one policy.
#[derive(Debug, Clone)]
pub struct ValueBundle {
    pub v: DVector<f64>,
    pub q: DMatrix<f64>,
    pub adv: DMatrix<f64>,
    pub occupancy: DVector<f64>,
    pub induced_kernel: DMatrix<f64>,
}

impl ValueBundle {
    pub fn value_at(&self, rho: &DVector<f64>) -> f64 {
        dot(&self.v, rho)
    }

    /// Advantage row `A(s, .)` as an owned vector.
    pub fn adv_row(&self, s: usize) -> Vec<f64> {
        self.adv.row(s).iter().copied().collect()
    }
}

#[derive(Debug, Clone)]
pub struct OptimalBundle {
    pub v_star: DVector<f64>,
    pub q_star: DMatrix<f64>,
    pub selector: Vec<usize>,
    pub pi_star: Policy,
    /// Value-iteration sweeps before the policy-iteration polish.
    pub sweeps: usize,
}

pub(crate) fn dot(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

fn check_dims(mdp: &TabularMdp, pi: &Policy) -> Result<()> {
    if pi.n_states() != mdp.n_states() || pi.n_actions() != mdp.n_actions() {
        return Err(Error::InvalidInput(format!(
            "policy is {}x{} but MDP is {}x{}",
            pi.n_states(),
            pi.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    Ok(())
}

fn check_rho(mdp: &TabularMdp, rho: &DVector<f64>) -> Result<()> {
    if rho.len() != mdp.n_states() {
        return Err(Error::InvalidInput(format!(
            "rho has length {}, MDP has {} states",
            rho.len(),
            mdp.n_states()
        )));
    }
    Ok(())
}

/// `P_pi[s][s'] = sum_a P[s][a][s'] pi(a|s)`.
pub fn induced_kernel(mdp: &TabularMdp, pi: &Policy) -> Result<DMatrix<f64>> {
    check_dims(mdp, pi)?;
    let n = mdp.n_states();
    let mut kernel = DMatrix::zeros(n, n);
    for s in 0..n {
        for a in 0..mdp.n_actions() {
            let w = pi.prob(s, a);
            if w == 0.0 {
                continue;
            }
            for (next, &p) in mdp.transition_row(s, a).iter().enumerate() {
                kernel[(s, next)] += w * p;
            }
        }
    }
    Ok(kernel)
}

/// `r_pi[s] = sum_a r[s][a] pi(a|s)`.
pub fn policy_reward(mdp: &TabularMdp, pi: &Policy) -> Result<DVector<f64>> {
    check_dims(mdp, pi)?;
    let r = mdp.reward();
    Ok(DVector::from_fn(mdp.n_states(), |s, _| {
        let mut acc = 0.0;
        for a in 0..mdp.n_actions() {
            acc += r[(s, a)] * pi.prob(s, a);
        }
        acc
    }))
}

fn resolvent_matrix(mdp: &TabularMdp, kernel: &DMatrix<f64>) -> DMatrix<f64> {
    let n = mdp.n_states();
    DMatrix::identity(n, n) - kernel * mdp.gamma()
}

fn solve(matrix: DMatrix<f64>, rhs: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let x = matrix
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::NumericBreakdown(format!("singular system while solving for {what}")))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericBreakdown(format!("non-finite {what}")));
    }
    Ok(x)
}

fn eval_with_kernel(mdp: &TabularMdp, pi: &Policy, kernel: &DMatrix<f64>) -> Result<DVector<f64>> {
    let r_pi = policy_reward(mdp, pi)?;
    solve(resolvent_matrix(mdp, kernel), &r_pi, "policy value")
}

/// Solves `(I - gamma P_pi) V = r_pi`.
pub fn policy_eval(mdp: &TabularMdp, pi: &Policy) -> Result<DVector<f64>> {
    let kernel = induced_kernel(mdp, pi)?;
    eval_with_kernel(mdp, pi, &kernel)
}

/// `V^pi(rho)`.
pub fn value_at_rho(mdp: &TabularMdp, pi: &Policy, rho: &DVector<f64>) -> Result<f64> {
    check_rho(mdp, rho)?;
    Ok(dot(&policy_eval(mdp, pi)?, rho))
}

/// `Q = r + gamma P V` and `A = Q - V`.
pub fn q_and_advantage(mdp: &TabularMdp, pi: &Policy, v: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_dims(mdp, pi)?;
    if v.len() != mdp.n_states() {
        return Err(Error::InvalidInput("value vector dimension mismatch".into()));
    }
    let q = q_from_values(mdp, v);
    let adv = DMatrix::from_fn(mdp.n_states(), mdp.n_actions(), |s, a| q[(s, a)] - v[s]);
    Ok((q, adv))
}

fn q_from_values(mdp: &TabularMdp, v: &DVector<f64>) -> DMatrix<f64> {
    let gamma = mdp.gamma();
    let r = mdp.reward();
    DMatrix::from_fn(mdp.n_states(), mdp.n_actions(), |s, a| {
        let mut acc = 0.0;
        for (next, &p) in mdp.transition_row(s, a).iter().enumerate() {
            acc += p * v[next];
        }
        r[(s, a)] + gamma * acc
    })
}

fn occupancy_with_kernel(mdp: &TabularMdp, kernel: &DMatrix<f64>, rho: &DVector<f64>) -> Result<DVector<f64>> {
    let rhs = rho * (1.0 - mdp.gamma());
    solve(resolvent_matrix(mdp, kernel).transpose(), &rhs, "occupancy")
}

/// Discounted state occupancy `d^pi_rho`, normalized to a probability vector.
pub fn occupancy(mdp: &TabularMdp, pi: &Policy, rho: &DVector<f64>) -> Result<DVector<f64>> {
    check_rho(mdp, rho)?;
    let kernel = induced_kernel(mdp, pi)?;
    occupancy_with_kernel(mdp, &kernel, rho)
}

/// Values, advantages and occupancy of `pi` under initial distribution `rho`.
pub fn evaluate(mdp: &TabularMdp, pi: &Policy, rho: &DVector<f64>) -> Result<ValueBundle> {
    check_rho(mdp, rho)?;
    let kernel = induced_kernel(mdp, pi)?;
    let v = eval_with_kernel(mdp, pi, &kernel)?;
    let (q, adv) = q_and_advantage(mdp, pi, &v)?;
    let occupancy = occupancy_with_kernel(mdp, &kernel, rho)?;
    Ok(ValueBundle {
        v,
        q,
        adv,
        occupancy,
        induced_kernel: kernel,
    })
}

fn greedy_selector(q: &DMatrix<f64>) -> Vec<usize> {
    (0..q.nrows())
        .map(|s| {
            let mut best = 0;
            for a in 1..q.ncols() {
                if q[(s, a)] > q[(s, best)] {
                    best = a;
                }
            }
            best
        })
        .collect()
}

/// Optimal values and a greedy deterministic policy.
///
/// Value iteration runs until the sup-norm change is at most
/// `tol (1 - gamma) / (2 gamma)`; the greedy policy is then polished by exact
/// policy iteration so that `v_star` is the exact value of `pi_star`. Ties
/// go to the lowest action index.
pub fn optimal_values(mdp: &TabularMdp, tol: f64) -> Result<OptimalBundle> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let gamma = mdp.gamma();
    let n = mdp.n_states();
    let mut v = DVector::zeros(n);
    let mut sweeps = 0;
    let threshold = if gamma > 0.0 {
        tol * (1.0 - gamma) / (2.0 * gamma)
    } else {
        f64::INFINITY
    };
    loop {
        let q = q_from_values(mdp, &v);
        let next = DVector::from_fn(n, |s, _| q.row(s).iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        let residual = (&next - &v).amax();
        v = next;
        sweeps += 1;
        if residual <= threshold || sweeps >= 10_000_000 {
            break;
        }
    }

    let reference = crate::mdp::ReferenceMeasure::uniform(mdp.n_actions());
    let mut selector = greedy_selector(&q_from_values(mdp, &v));
    let max_rounds = n * mdp.n_actions() + 16;
    let mut v_pi = v.clone();
    for _ in 0..max_rounds {
        let pi = Policy::deterministic(&selector, reference.clone())?;
        v_pi = policy_eval(mdp, &pi)?;
        let q = q_from_values(mdp, &v_pi);
        let mut changed = false;
        for s in 0..n {
            let current = q[(s, selector[s])];
            let scale = 1.0 + current.abs();
            let mut best = selector[s];
            for a in 0..mdp.n_actions() {
                if q[(s, a)] > q[(s, best)] + 1e-13 * scale {
                    best = a;
                }
            }
            if best != selector[s] {
                selector[s] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    // Lowest-index tie-breaking among numerically tied maximizers.
    let q_star = q_from_values(mdp, &v_pi);
    for s in 0..n {
        let max = q_star.row(s).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let tie = 1e-12 * (1.0 + max.abs());
        selector[s] = (0..mdp.n_actions()).find(|&a| q_star[(s, a)] >= max - tie).unwrap_or(0);
    }
    let pi_star = Policy::deterministic(&selector, reference)?;
    let v_star = policy_eval(mdp, &pi_star)?;
    let q_star = q_from_values(mdp, &v_star);
    Ok(OptimalBundle {
        v_star,
        q_star,
        selector,
        pi_star,
        sweeps,
    })
}

/// Sum over states of `weights[s] * sum_a A[s][a] (new - old)(a|s)`.
pub(crate) fn weighted_advantage_gain(adv: &DMatrix<f64>, new: &Policy, old: &Policy, weights: &DVector<f64>) -> f64 {
    let mut total = 0.0;
    for s in 0..adv.nrows() {
        let mut inner = 0.0;
        for a in 0..adv.ncols() {
            inner += adv[(s, a)] * (new.prob(s, a) - old.prob(s, a));
        }
        total += weights[s] * inner;
    }
    total
}

/// Both sides of the performance-difference identity.
///
/// `lhs = V^{new}(rho) - V^{old}(rho)` from two independent solves;
/// `rhs = (1/(1-gamma)) sum_s d^{new}_rho(s) sum_a A_old(s,a) (new - old)(a|s)`.
pub fn performance_difference(
    mdp: &TabularMdp,
    pi_new: &Policy,
    pi_old: &Policy,
    rho: &DVector<f64>,
) -> Result<(f64, f64)> {
    check_rho(mdp, rho)?;
    let v_new = policy_eval(mdp, pi_new)?;
    let old = evaluate(mdp, pi_old, rho)?;
    let lhs = dot(&v_new, rho) - dot(&old.v, rho);
    let d_new = occupancy(mdp, pi_new, rho)?;
    let rhs = weighted_advantage_gain(&old.adv, pi_new, pi_old, &d_new) / (1.0 - mdp.gamma());
    Ok((lhs, rhs))
}

/// Difference quotient `(V^{pi_eps}(rho) - V^pi(rho)) / eps` along
/// `pi_eps = pi + eps (pi' - pi)`, against the advantage-based directional
/// derivative `(1/(1-gamma)) sum_s d^pi(s) sum_a A(s,a) (pi' - pi)(a|s)`.
///
/// The quotient is evaluated through the exact resolvent identity
/// `(I - gamma P_eps)(V_eps - V) = eps g` with
/// `g(s) = sum_a Q(s,a) (pi' - pi)(a|s)`, which avoids subtracting two values
/// of size `|V|` and dividing the rounding error by `eps`.
pub fn flat_derivative_check(
    mdp: &TabularMdp,
    pi: &Policy,
    pi_prime: &Policy,
    rho: &DVector<f64>,
    eps: f64,
) -> Result<(f64, f64)> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidParameter(format!("eps must lie in (0, 1), got {eps}")));
    }
    let base = evaluate(mdp, pi, rho)?;
    let mixed = pi.mix(pi_prime, eps)?;
    let direction = DVector::from_fn(mdp.n_states(), |s, _| {
        let mut acc = 0.0;
        for a in 0..mdp.n_actions() {
            acc += base.q[(s, a)] * (pi_prime.prob(s, a) - pi.prob(s, a));
        }
        acc
    });
    let kernel = induced_kernel(mdp, &mixed)?;
    let delta = solve(resolvent_matrix(mdp, &kernel), &direction, "value difference")?;
    let quotient = dot(&delta, rho);
    let analytic = weighted_advantage_gain(&base.adv, pi_prime, pi, &base.occupancy) / (1.0 - mdp.gamma());
    Ok((quotient, analytic))
}

/// The plain difference quotient from two independent value solves.
pub fn naive_difference_quotient(
    mdp: &TabularMdp,
    pi: &Policy,
    pi_prime: &Policy,
    rho: &DVector<f64>,
    eps: f64,
) -> Result<f64> {
    let mixed = pi.mix(pi_prime, eps)?;
    Ok((value_at_rho(mdp, &mixed, rho)? - value_at_rho(mdp, pi, rho)?) / eps)
}
