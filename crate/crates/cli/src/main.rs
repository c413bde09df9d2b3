use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use superstate::belief::sample_history;
use superstate::experiment::{figure1_sweep, learn_policy, ExperimentConfig, DEFAULT_T_GRID};
use superstate::planning::{monte_carlo_pomdp_value, truncation_horizon};
use superstate::rng::{stream, substream_seed};
use superstate::{
    build_exact, contraction_audit, count_windows_timed, estimation_error, lemma1_gap, pomdp_policy_value,
    superstate_policy_value, theoretical_sample_size, BoundParams, CountingScheme, Error, PolicySpec, RewardTiming,
    TabularPomdp, WindowIndex,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "superstate", version, about = "Learn finite-window policies for tabular POMDPs")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Built-in environment name (`probe`) or path to a POMDP JSON file.
    #[arg(long, global = true, default_value = "probe")]
    pomdp: String,

    /// Window length(s); comma separated for `experiment`.
    #[arg(long = "m", global = true, value_delimiter = ',')]
    m: Vec<usize>,

    /// Trajectory length(s); comma separated for `experiment`.
    #[arg(long = "T", global = true, value_delimiter = ',')]
    t: Vec<usize>,

    /// Value-iteration steps.
    #[arg(long = "K", global = true, default_value_t = 50)]
    k: usize,

    #[arg(long, global = true, default_value_t = 0.95)]
    gamma: f64,

    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[arg(long, global = true, default_value_t = 10)]
    runs: usize,

    #[arg(long, global = true, default_value_t = 0.1)]
    eps: f64,

    #[arg(long, global = true, default_value_t = 0.05)]
    delta: f64,

    /// Output file (single-result commands) or directory (`experiment`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    /// `suffix` credits every matching window per step; `current` only the agent's window.
    #[arg(long, global = true, default_value = "suffix")]
    counting: CountingScheme,

    /// Override the POMDP's reward timing (`previous` or `current`).
    #[arg(long = "reward-timing", global = true)]
    reward_timing: Option<RewardTiming>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the minorization constants alpha, beta and rho.
    Validate,
    /// Build the exact superstate model and dump it.
    Exact,
    /// Sample a trajectory and dump window counts.
    Estimate,
    /// Learn a window policy and dump it.
    Plan,
    /// Learn a window policy and evaluate it exactly and by simulation.
    Evaluate {
        #[arg(long, default_value_t = 10_000)]
        episodes: usize,
    },
    /// Filter-stability and window-gap audits.
    Audit {
        #[arg(long, default_value_t = 200)]
        pairs: usize,
        #[arg(long = "max-len", default_value_t = 8)]
        max_len: usize,
        #[arg(long, default_value_t = 100)]
        histories: usize,
    },
    /// Sufficient trajectory length and iteration count.
    Bound,
    /// Run the convergence sweep and write figure1.{csv,json,svg}.
    Experiment {
        #[arg(long = "no-svg")]
        no_svg: bool,
    },
}

impl Cli {
    fn pomdp(&self) -> Result<TabularPomdp, Error> {
        let p = TabularPomdp::from_source(&self.pomdp, Some(self.gamma))?;
        Ok(match self.reward_timing {
            Some(t) => p.with_reward_timing(t),
            None => p,
        })
    }

    fn single_m(&self) -> usize {
        self.m.first().copied().unwrap_or(1)
    }

    fn single_t(&self) -> Option<usize> {
        self.t.first().copied()
    }
}

fn key_values(pairs: &[(&str, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ") + "\n"
}

fn run(cli: &Cli) -> Result<String, Error> {
    let json_out = cli.format == Format::Json;
    match &cli.command {
        Command::Validate => {
            let r = cli.pomdp()?.validate();
            if json_out {
                return Ok(serde_json::to_string_pretty(&r)? + "\n");
            }
            Ok(key_values(&[
                ("alpha", r.alpha.to_string()),
                ("beta", r.beta.to_string()),
                ("rho", format!("{}", (r.rho * 1e12).round() / 1e12)),
                ("assumption1", r.assumption1_ok.to_string()),
                ("assumption2", r.assumption2_ok.to_string()),
            ]))
        }
        Command::Exact => {
            let model = build_exact(&cli.pomdp()?, cli.single_m())?;
            if json_out {
                let idx = model.index();
                let rows: Vec<_> = (0..idx.size())
                    .filter(|&w| model.is_reachable(w))
                    .flat_map(|w| {
                        let model = &model;
                        (0..idx.n_actions()).map(move |a| {
                            json!({
                                "window": idx.decode(w).to_string(),
                                "action": a,
                                "probabilities": model.row(w, a),
                                "reward": model.reward(w, a),
                            })
                        })
                    })
                    .collect();
                return Ok(serde_json::to_string_pretty(&rows)? + "\n");
            }
            Ok(model.to_csv())
        }
        Command::Estimate => {
            let pomdp = cli.pomdp()?;
            let t = cli.single_t().unwrap_or(10_000);
            let traj = pomdp.sample_trajectory(PolicySpec::Uniform, t, cli.seed)?;
            let idx = WindowIndex::build(pomdp.n_actions(), pomdp.n_obs(), cli.single_m())?;
            let counts = count_windows_timed(&traj, &idx, cli.counting, pomdp.reward_timing())?;
            if json_out {
                let exact = build_exact(&pomdp, idx.m())?;
                let err = estimation_error(&counts.to_model(), &exact)?;
                return Ok(serde_json::to_string_pretty(&json!({
                    "T": t,
                    "seed": cli.seed,
                    "total_visits": counts.total_visits(),
                    "error": err,
                }))? + "\n");
            }
            Ok(counts.to_csv())
        }
        Command::Plan => {
            let pomdp = cli.pomdp()?;
            let m = cli.single_m();
            let t = cli.single_t().unwrap_or(100_000);
            let learned = learn_policy(&pomdp, m, t, cli.k, cli.gamma, cli.seed, cli.counting)?;
            if json_out {
                let idx = learned.policy.index();
                let rows: Vec<_> = (0..idx.size())
                    .map(|w| json!({ "window": idx.decode(w).to_string(), "chosen_action": learned.policy.action(w) }))
                    .collect();
                return Ok(serde_json::to_string_pretty(&rows)? + "\n");
            }
            Ok(learned.policy.to_csv())
        }
        Command::Evaluate { episodes } => {
            let pomdp = cli.pomdp()?;
            let m = cli.single_m();
            let t = cli.single_t().unwrap_or(100_000);
            let learned = learn_policy(&pomdp, m, t, cli.k, cli.gamma, cli.seed, cli.counting)?;
            let exact = build_exact(&pomdp, m)?;
            let v_m = superstate_policy_value(&exact, &learned.policy, cli.gamma)?;
            let v = pomdp_policy_value(&pomdp, &learned.policy, cli.gamma)?;
            let mc = monte_carlo_pomdp_value(
                &pomdp,
                &learned.policy,
                cli.gamma,
                *episodes,
                truncation_horizon(cli.gamma),
                substream_seed(cli.seed, &[u64::MAX]),
            )?;
            if json_out {
                return Ok(serde_json::to_string_pretty(&json!({
                    "m": m, "T": t, "seed": cli.seed,
                    "v_m_policy": v_m, "v_pomdp_policy": v, "monte_carlo": mc,
                }))? + "\n");
            }
            Ok(key_values(&[
                ("v_m_policy", v_m.to_string()),
                ("v_pomdp_policy", v.to_string()),
                ("mc_mean", mc.mean.to_string()),
                ("mc_std_err", mc.std_err.to_string()),
            ]))
        }
        Command::Audit { pairs, max_len, histories } => {
            let pomdp = cli.pomdp()?;
            let m = cli.single_m();
            let audit = contraction_audit(&pomdp, *pairs, *max_len, cli.seed)?;
            let mut rng = stream(substream_seed(cli.seed, &[m as u64]));
            let mut worst_gap: f64 = 0.0;
            let mut gap_pass = true;
            let mut bound = 1.0;
            for _ in 0..*histories {
                let h = sample_history(&pomdp, m + 5, &mut rng);
                let g = lemma1_gap(&pomdp, m, &h, m)?;
                worst_gap = worst_gap.max(g.gap);
                gap_pass &= g.pass;
                bound = g.bound;
            }
            let report = json!({
                "contraction": audit,
                "window_gap": { "m": m, "histories": histories, "max_gap": worst_gap, "bound": bound, "pass": gap_pass },
            });
            if json_out {
                return Ok(serde_json::to_string_pretty(&report)? + "\n");
            }
            Ok(key_values(&[
                ("pairs", audit.pairs.to_string()),
                ("max_ratio", audit.max_ratio.to_string()),
                ("bound", audit.bound.to_string()),
                ("pass", audit.pass.to_string()),
                ("skipped", audit.skipped.to_string()),
                ("window_gap_max", worst_gap.to_string()),
                ("window_gap_bound", bound.to_string()),
                ("window_gap_pass", gap_pass.to_string()),
            ]))
        }
        Command::Bound => {
            let pomdp = cli.pomdp()?;
            let r = pomdp.validate();
            let b = theoretical_sample_size(&BoundParams {
                eps: cli.eps,
                delta: cli.delta,
                m: cli.single_m(),
                n_states: pomdp.n_states(),
                n_actions: pomdp.n_actions(),
                n_obs: pomdp.n_obs(),
                alpha: r.alpha,
                beta: r.beta,
                gamma: cli.gamma,
            })?;
            if json_out {
                return Ok(serde_json::to_string_pretty(&b)? + "\n");
            }
            Ok(key_values(&[
                ("T", b.t_bound.to_string()),
                ("K", b.k_bound.to_string()),
                ("saturated", b.t_saturated.to_string()),
            ]))
        }
        Command::Experiment { no_svg } => {
            let config = ExperimentConfig {
                pomdp: cli.pomdp.clone(),
                ms: if cli.m.is_empty() { vec![1, 2, 3, 4, 5] } else { cli.m.clone() },
                ts: if cli.t.is_empty() { DEFAULT_T_GRID.to_vec() } else { cli.t.clone() },
                k: cli.k,
                gamma: cli.gamma,
                runs: cli.runs,
                master_seed: cli.seed,
                eps: cli.eps,
                delta: cli.delta,
                out_dir: cli.out.clone().unwrap_or_else(|| PathBuf::from("results")),
                scheme: cli.counting,
                reward_timing: cli.reward_timing,
                svg: !no_svg,
            };
            let result = figure1_sweep(&config)?;
            let mut out = String::from("m,T,mean_v_m_policy,std_v_m_policy,v_m_star,mean_gap\n");
            for c in result.summaries() {
                out.push_str(&format!(
                    "{},{},{:.6},{:.6},{:.6},{:.6}\n",
                    c.m, c.t, c.mean_v_m_policy, c.std_v_m_policy, c.v_m_star, c.mean_gap
                ));
            }
            Ok(out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(text) => {
            let is_experiment = matches!(cli.command, Command::Experiment { .. });
            match (&cli.out, is_experiment) {
                (Some(path), false) => {
                    if let Err(e) = std::fs::write(path, text) {
                        let e = Error::from(e);
                        eprintln!("error: {e}");
                        return ExitCode::from(e.exit_code() as u8);
                    }
                }
                _ => print!("{text}"),
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
