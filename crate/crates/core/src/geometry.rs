//! Divergences between action distributions relative to a reference measure.
//!
//! Densities are `p = mu / lambda`. The squared Fisher-Rao distance between
//! the squared-density measures `mu^2 := lambda p^2` collapses to
//! `4 sum_a lambda(a) (p_mu(a) - p_nu(a))^2`, and half of it is the Bregman
//! divergence generated by `h(mu) = 2 chi^2(mu | lambda)`.

use serde::Serialize;

/// Scale of the chi-squared generator. With the factor 4 in the Fisher-Rao
/// distance this is the scale for which `D_h = FR^2(squared) / 2`.
pub const GENERATOR_SCALE: f64 = 2.0;

/// Total variation, `0.5 * sum |mu - nu|`.
pub fn tv(mu: &[f64], nu: &[f64]) -> f64 {
    debug_assert_eq!(mu.len(), nu.len());
    let mut acc = 0.0;
    for (m, n) in mu.iter().zip(nu) {
        acc += (m - n).abs();
    }
    0.5 * acc
}

/// `KL(mu || nu)` with `0 log 0 = 0`; `+inf` when `mu` is not absolutely
/// continuous with respect to `nu`.
pub fn kl(mu: &[f64], nu: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&m, &n) in mu.iter().zip(nu) {
        if m == 0.0 {
            continue;
        }
        if n == 0.0 {
            return f64::INFINITY;
        }
        acc += m * (m / n).ln();
    }
    acc.max(0.0)
}

/// Pearson `chi^2(mu | nu) = sum (mu - nu)^2 / nu`; `+inf` without absolute
/// continuity.
pub fn chi2(mu: &[f64], nu: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&m, &n) in mu.iter().zip(nu) {
        if n == 0.0 {
            if m == 0.0 {
                continue;
            }
            return f64::INFINITY;
        }
        acc += (m - n) * (m - n) / n;
    }
    acc
}

/// `FR^2(mu, nu) = 4 sum_a lambda(a) (sqrt(mu/lambda) - sqrt(nu/lambda))^2`.
pub fn fr2(mu: &[f64], nu: &[f64], lambda: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ((&m, &n), &l) in mu.iter().zip(nu).zip(lambda) {
        let d = (m / l).sqrt() - (n / l).sqrt();
        acc += l * d * d;
    }
    4.0 * acc
}

/// The measure `lambda * (mu / lambda)^2`.
pub fn squared_density_measure(mu: &[f64], lambda: &[f64]) -> Vec<f64> {
    mu.iter().zip(lambda).map(|(&m, &l)| l * (m / l) * (m / l)).collect()
}

/// `FR^2(mu^2, nu^2)` for squared densities, via the weighted-L2 form.
pub fn fr2_squared_densities(mu: &[f64], nu: &[f64], lambda: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ((&m, &n), &l) in mu.iter().zip(nu).zip(lambda) {
        let d = m / l - n / l;
        acc += l * d * d;
    }
    4.0 * acc
}

/// Generator `h(mu) = GENERATOR_SCALE * chi^2(mu | lambda)`.
pub fn chi2_generator(mu: &[f64], lambda: &[f64]) -> f64 {
    GENERATOR_SCALE * chi2(mu, lambda)
}

/// Flat derivative of [`chi2_generator`] at `mu`, normalized to have zero
/// mean under `mu`.
pub fn chi2_generator_flat_derivative(mu: &[f64], lambda: &[f64]) -> Vec<f64> {
    let raw: Vec<f64> = mu
        .iter()
        .zip(lambda)
        .map(|(&m, &l)| 2.0 * GENERATOR_SCALE * m / l)
        .collect();
    let mean: f64 = raw.iter().zip(mu).map(|(g, m)| g * m).sum();
    raw.iter().map(|g| g - mean).collect()
}

/// Bregman divergence `D_h(mu | nu) = h(mu) - h(nu) - <dh/dnu, mu - nu>`.
///
/// The generator is a sum of one-dimensional terms
/// `h_a(x) = GENERATOR_SCALE (x - lambda(a))^2 / lambda(a)`, so the
/// divergence is accumulated coordinate by coordinate with the `1/lambda(a)`
/// factor applied after the subtraction.
pub fn bregman_chi2(mu: &[f64], nu: &[f64], lambda: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ((&m, &n), &l) in mu.iter().zip(nu).zip(lambda) {
        let (x, y) = (m - l, n - l);
        acc += (x * x - y * y - 2.0 * y * (m - n)) / l;
    }
    (GENERATOR_SCALE * acc).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DivergenceReport {
    pub tv: f64,
    pub kl: f64,
    pub chi2: f64,
    pub fr2: f64,
    pub fr2_squared: f64,
    pub bregman_chi2: f64,
}

impl DivergenceReport {
    /// All divergences of the ordered pair `(mu, nu)`.
    pub fn compute(mu: &[f64], nu: &[f64], lambda: &[f64]) -> Self {
        Self {
            tv: tv(mu, nu),
            kl: kl(mu, nu),
            chi2: chi2(mu, nu),
            fr2: fr2(mu, nu, lambda),
            fr2_squared: fr2_squared_densities(mu, nu, lambda),
            bregman_chi2: bregman_chi2(mu, nu, lambda),
        }
    }
}

/// Slacks of the inequalities the surrogate bounds rest on; nonnegative when
/// they hold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InequalityChecks {
    pub tv2: f64,
    /// `kl / 2 - tv^2`; `None` when the KL divergence is infinite.
    pub pinsker_slack: Option<f64>,
    /// `fr2_squared / 16 - tv^2`.
    pub fr_slack: f64,
}

impl InequalityChecks {
    pub fn holds(&self, tol: f64) -> bool {
        self.fr_slack >= -tol && self.pinsker_slack.is_none_or(|s| s >= -tol)
    }
}

pub fn inequality_suite(mu: &[f64], nu: &[f64], lambda: &[f64]) -> InequalityChecks {
    let t = tv(mu, nu);
    let tv2 = t * t;
    let k = kl(mu, nu);
    InequalityChecks {
        tv2,
        pinsker_slack: k.is_finite().then_some(0.5 * k - tv2),
        fr_slack: fr2_squared_densities(mu, nu, lambda) / 16.0 - tv2,
    }
}
