//! Independent reference solver for the per-state step: accelerated
//! projected gradient in the action-probability coordinates, with a
//! sort-free simplex projection.

/// Euclidean projection onto the probability simplex by Michelot's
/// active-set iteration.
pub fn michelot_projection(x: &[f64]) -> Vec<f64> {
    let mut active = vec![true; x.len()];
    loop {
        let count = active.iter().filter(|&&a| a).count();
        let sum: f64 = x.iter().zip(&active).filter(|(_, &a)| a).map(|(v, _)| v).sum();
        let theta = (sum - 1.0) / count as f64;
        let mut changed = false;
        for (i, &v) in x.iter().enumerate() {
            if active[i] && v - theta <= 0.0 {
                active[i] = false;
                changed = true;
            }
        }
        // The largest coordinate always stays active: theta < max(x).
        if !changed {
            return x
                .iter()
                .zip(&active)
                .map(|(&v, &a)| if a { v - theta } else { 0.0 })
                .collect();
        }
    }
}

/// Maximizes `sum_a A(a) m(a) - (2 / tau) sum_a (m(a) - pi(a))^2 / lambda(a)`
/// over the simplex with FISTA and gradient restarts. Stops once an
/// iteration moves no coordinate by more than `1e-15`.
pub fn projected_gradient_step(adv: &[f64], pi: &[f64], lambda: &[f64], tau: f64, max_iters: usize) -> Vec<f64> {
    let n = adv.len();
    let lambda_min = lambda.iter().cloned().fold(f64::INFINITY, f64::min);
    let step = tau * lambda_min / 4.0;
    let grad = |m: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|a| adv[a] - 4.0 / tau * (m[a] - pi[a]) / lambda[a])
            .collect()
    };

    let mut x = pi.to_vec();
    let mut y = x.clone();
    let mut t = 1.0f64;
    for _ in 0..max_iters {
        let g = grad(&y);
        let moved: Vec<f64> = (0..n).map(|a| y[a] + step * g[a]).collect();
        let next = michelot_projection(&moved);
        let delta = (0..n).fold(0.0f64, |m, a| m.max((next[a] - x[a]).abs()));
        // Gradient restart: drop the momentum once it points against the step.
        let against: f64 = (0..n).map(|a| (y[a] - next[a]) * (next[a] - x[a])).sum();
        if against > 0.0 {
            t = 1.0;
            y = next.clone();
        } else {
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let beta = (t - 1.0) / t_next;
            y = (0..n).map(|a| next[a] + beta * (next[a] - x[a])).collect();
            t = t_next;
        }
        x = next;
        if delta <= 1e-15 {
            break;
        }
    }
    x
}
