//! Single-algorithm runs and their CSV output.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;

use crate::dp;
use crate::envs::{generate, EnvSpec};
use crate::error::Result;
use crate::fr_ppo::{parametrized_surrogate_step, step_with_advantage, Certificate, SolverConfig};
use crate::geometry::fr2_squared_densities;
use crate::mdp::{Policy, ReferenceMeasure, SoftmaxPolicy, TabularMdp};
use crate::rng::trial_seed;
use crate::surrogates::{kl_md_step, ppo_clip_ascent};

use super::{fmt_f64, Algorithm, RunConfig, PPO_CLIP_INNER_ITERS};

pub const CSV_HEADER: &str =
    "trial,iter,value_at_rho,improvement,integrated_fr2_step,bound_rhs,gap_to_opt,wallclock_us";

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub trial: usize,
    pub iter: usize,
    pub value_at_rho: f64,
    pub improvement: f64,
    pub integrated_fr2_step: f64,
    /// Optimality-gap bound; NaN for algorithms it does not cover.
    pub bound_rhs: f64,
    pub gap_to_opt: f64,
    /// Time spent on this iteration.
    pub wallclock_us: u128,
}

impl TrialRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.trial,
            self.iter,
            fmt_f64(self.value_at_rho),
            fmt_f64(self.improvement),
            fmt_f64(self.integrated_fr2_step),
            fmt_f64(self.bound_rhs),
            fmt_f64(self.gap_to_opt),
            self.wallclock_us
        )
    }
}

/// Environment of trial `trial`: the configured spec with a per-trial seed.
pub fn trial_env(env: &EnvSpec, trial: usize) -> EnvSpec {
    EnvSpec {
        seed: trial_seed(env.seed, trial as u64),
        ..env.clone()
    }
}

/// Runs `solver.max_iters` iterations of `algorithm` from the uniform policy
/// (zero logits for the parametrized variant) and reports iterations
/// `1..=max_iters`.
pub fn run_trial(
    algorithm: Algorithm,
    mdp: &TabularMdp,
    solver: &SolverConfig,
    eps_clip: f64,
    trial: usize,
) -> Result<Vec<TrialRow>> {
    let rho = mdp.rho();
    let tau = solver.tau.resolve(mdp);
    let lambda = ReferenceMeasure::uniform(mdp.n_actions());
    let mut logits = SoftmaxPolicy::zeros(mdp.n_states(), lambda.clone());
    let mut pi = Policy::uniform(mdp, lambda.clone())?;
    let cert = Certificate::new(mdp, &pi, tau)?;

    let mut bundle = dp::evaluate(mdp, &pi, rho)?;
    let mut value = bundle.value_at(rho);
    let mut rows = Vec::with_capacity(solver.max_iters);
    for n in 1..=solver.max_iters {
        let start = Instant::now();
        let next = match algorithm {
            Algorithm::FrPpo => step_with_advantage(&pi, &bundle.adv, tau)?,
            Algorithm::KlMd => kl_md_step(mdp, &pi, tau)?,
            Algorithm::PpoClip => ppo_clip_ascent(mdp, &pi, rho, eps_clip, PPO_CLIP_INNER_ITERS)?,
            Algorithm::ParametrizedFr => {
                logits = parametrized_surrogate_step(mdp, &logits, solver)?.policy;
                logits.to_policy()?
            }
        };
        let next_bundle = dp::evaluate(mdp, &next, rho)?;
        let elapsed = start.elapsed().as_micros();

        let mut fr2_step = 0.0;
        for s in 0..mdp.n_states() {
            fr2_step += bundle.occupancy[s] * fr2_squared_densities(&next.row(s), &pi.row(s), lambda.as_slice());
        }
        let next_value = next_bundle.value_at(rho);
        rows.push(TrialRow {
            trial,
            iter: n,
            value_at_rho: next_value,
            improvement: next_value - value,
            integrated_fr2_step: fr2_step,
            bound_rhs: if algorithm == Algorithm::FrPpo {
                cert.bound_rhs(n)
            } else {
                f64::NAN
            },
            gap_to_opt: cert.v_star_at_rho - next_value,
            wallclock_us: elapsed,
        });
        pi = next;
        bundle = next_bundle;
        value = next_value;
    }
    Ok(rows)
}

/// All trials of `algorithm` under `config`, in trial order.
pub fn run_trials(config: &RunConfig, algorithm: Algorithm) -> Result<Vec<Vec<TrialRow>>> {
    config.check()?;
    (0..config.trials)
        .into_par_iter()
        .map(|trial| {
            let mdp = generate(&trial_env(&config.env, trial))?;
            run_trial(algorithm, &mdp, &config.solver, config.eps_clip, trial)
        })
        .collect()
}

pub fn render_csv(trials: &[Vec<TrialRow>]) -> String {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for row in trials.iter().flatten() {
        let _ = writeln!(out, "{}", row.to_csv());
    }
    out
}

/// Runs `config.algorithm` and writes the CSV to `config.output_path`;
/// returns the number of data rows.
pub fn cmd_run(config: &RunConfig) -> Result<usize> {
    let trials = run_trials(config, config.algorithm)?;
    std::fs::write(&config.output_path, render_csv(&trials))?;
    Ok(trials.iter().map(Vec::len).sum())
}
