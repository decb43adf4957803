use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use frppo_core::envs::EnvKind;
use frppo_core::fr_ppo::StepSize;
use frppo_core::harness::{cmd_compare, cmd_run, cmd_verify, Algorithm, RunConfig, Suite};

#[derive(Parser)]
#[command(
    name = "frppo",
    version,
    about = "Exact tabular FR-PPO runs, comparisons and certification suites"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one algorithm and write a per-iteration CSV.
    Run(Overrides),
    /// Run several algorithms on identical environments and write a JSON summary.
    Compare(Overrides),
    /// Run a certification suite over seeded random instances.
    Verify {
        /// identity, bounds, improvement, convergence, prox, geometry or parametrized.
        #[arg(id = "suite_name", value_name = "SUITE")]
        suite: Option<Suite>,
        /// Number of random instances.
        #[arg(id = "trial_count", value_name = "TRIALS")]
        trials: Option<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Args)]
struct Overrides {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Environment kind: random, chain or grid.
    #[arg(long)]
    env: Option<EnvKind>,
    #[arg(long)]
    states: Option<usize>,
    #[arg(long)]
    actions: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Step parameter: a positive number or "auto".
    #[arg(long)]
    tau: Option<StepSize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV (run) or JSON (compare) path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    suite: Option<Suite>,
    /// Comma-separated algorithms; the first one is used by `run`.
    #[arg(long, value_delimiter = ',')]
    algs: Option<Vec<Algorithm>>,
    #[arg(long = "eps-clip")]
    eps_clip: Option<f64>,
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path).with_context(|| format!("reading config {}", path.display()))?,
            None => RunConfig::default(),
        };
        if let Some(kind) = self.env {
            config.env.kind = kind;
        }
        if let Some(n) = self.states {
            config.env.n_states = n;
        }
        if let Some(n) = self.actions {
            config.env.n_actions = n;
        }
        if let Some(g) = self.gamma {
            config.env.gamma = g;
        }
        if let Some(tau) = self.tau {
            config.solver.tau = tau;
        }
        if let Some(n) = self.iters {
            config.solver.max_iters = n;
        }
        if let Some(n) = self.trials {
            config.trials = n;
        }
        if let Some(seed) = self.seed {
            config.env.seed = seed;
            config.solver.seed = seed;
        }
        if let Some(out) = &self.out {
            config.output_path = out.clone();
        }
        if let Some(algs) = &self.algs {
            if let Some(&first) = algs.first() {
                config.algorithm = first;
            }
            config.algorithms = algs.clone();
        }
        if let Some(eps) = self.eps_clip {
            config.eps_clip = eps;
        }
        Ok(config)
    }
}

const DEFAULT_VERIFY_TRIALS: usize = 100;

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run(overrides) => {
            let config = overrides.resolve()?;
            let rows = cmd_run(&config).with_context(|| format!("writing {}", config.output_path.display()))?;
            eprintln!("wrote {rows} rows to {}", config.output_path.display());
            Ok(true)
        }
        Command::Compare(overrides) => {
            let config = overrides.resolve()?;
            let report = cmd_compare(&config).with_context(|| format!("writing {}", config.output_path.display()))?;
            eprintln!(
                "wrote {} algorithm series to {}",
                report.algorithms.len(),
                config.output_path.display()
            );
            if !report.fr_ppo_bound_failures.is_empty() {
                eprintln!(
                    "fr-ppo final gap above its bound in trials {:?}",
                    report.fr_ppo_bound_failures
                );
                return Ok(false);
            }
            Ok(true)
        }
        Command::Verify {
            suite,
            trials,
            overrides,
        } => {
            let Some(suite) = suite.or(overrides.suite) else {
                bail!("verify needs a suite name");
            };
            let trials = trials.or(overrides.trials).unwrap_or(DEFAULT_VERIFY_TRIALS);
            let seed = overrides.seed.unwrap_or(0);
            let report = cmd_verify(suite, trials, seed)?;
            print!("{}", report.render());
            if let Some(seed) = report.offending_seed() {
                println!("replay: frppo verify {suite} 1 --seed {seed}");
            }
            Ok(report.passed())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use clap::CommandFactory;

    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn seed_flag_sets_env_and_solver_seeds() {
        let cli =
            Cli::try_parse_from(["frppo", "run", "--seed", "9", "--tau", "auto", "--algs", "kl-md,fr-ppo"]).unwrap();
        let Command::Run(overrides) = cli.command else {
            panic!("expected run")
        };
        let config = overrides.resolve().unwrap();
        assert_eq!((config.env.seed, config.solver.seed), (9, 9));
        assert_eq!(config.algorithm, Algorithm::KlMd);
        assert_eq!(config.solver.tau, StepSize::Auto);
    }
}
