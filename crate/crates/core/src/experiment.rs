//! End-to-end runs of the learning algorithm and the convergence sweep.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{count_windows_timed, estimation_error, CountingScheme};
use crate::planning::{
    greedy, optimal_superstate_value, pomdp_policy_value, superstate_policy_value, value_iteration, QTable,
    WindowPolicy,
};
use crate::pomdp::{PolicySpec, RewardTiming, TabularPomdp};
use crate::rng::substream_seed;
use crate::model::{build_exact, fmt_sig, SuperstateModel};

/// Default trajectory-length grid, log-spaced from 10^3 to 10^6.
pub const DEFAULT_T_GRID: [usize; 7] = [1_000, 3_000, 10_000, 30_000, 100_000, 300_000, 1_000_000];

/// Tolerance used when computing the optimal superstate value reference.
pub const V_STAR_TOL: f64 = 1e-10;

pub const CSV_HEADER: &str = "m,T,run,seed,v_m_policy,v_pomdp_policy,v_m_star,p_err,r_err,unvisited";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Built-in name (`probe`) or path to a POMDP JSON file.
    pub pomdp: String,
    pub ms: Vec<usize>,
    pub ts: Vec<usize>,
    pub k: usize,
    pub gamma: f64,
    pub runs: usize,
    pub master_seed: u64,
    pub eps: f64,
    pub delta: f64,
    pub out_dir: PathBuf,
    pub scheme: CountingScheme,
    /// Overrides the reward timing of the loaded POMDP when set.
    pub reward_timing: Option<RewardTiming>,
    pub svg: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            pomdp: "probe".into(),
            ms: vec![1, 2, 3, 4, 5],
            ts: DEFAULT_T_GRID.to_vec(),
            k: 50,
            gamma: 0.95,
            runs: 10,
            master_seed: 0,
            eps: 0.1,
            delta: 0.05,
            out_dir: PathBuf::from("results"),
            scheme: CountingScheme::default(),
            reward_timing: None,
            svg: true,
        }
    }
}

impl ExperimentConfig {
    pub fn check(&self) -> Result<()> {
        if self.ms.is_empty() || self.ts.is_empty() {
            return Err(Error::Parameter("m and T lists must be non-empty".into()));
        }
        if self.k == 0 || self.runs == 0 {
            return Err(Error::Parameter("K and runs must be at least 1".into()));
        }
        if self.ms.contains(&0) || self.ts.contains(&0) {
            return Err(Error::Parameter("m and T values must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Parameter(format!("gamma {} outside (0, 1)", self.gamma)));
        }
        Ok(())
    }

    pub fn load_pomdp(&self) -> Result<TabularPomdp> {
        let p = TabularPomdp::from_source(&self.pomdp, Some(self.gamma))?;
        Ok(match self.reward_timing {
            Some(t) => p.with_reward_timing(t),
            None => p,
        })
    }
}

/// Exact superstate model for one `m` together with its optimal value.
#[derive(Debug, Clone)]
pub struct ExactReference {
    pub model: SuperstateModel,
    pub v_star: f64,
    pub optimal_policy: WindowPolicy,
}

impl ExactReference {
    pub fn new(pomdp: &TabularPomdp, m: usize, gamma: f64) -> Result<Self> {
        let model = build_exact(pomdp, m)?;
        let (v_star, optimal_policy) = optimal_superstate_value(&model, gamma, V_STAR_TOL)?;
        Ok(Self { model, v_star, optimal_policy })
    }

    pub fn m(&self) -> usize {
        self.model.index().m()
    }
}

/// Result of one learning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub m: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub run: usize,
    pub seed: u64,
    /// `V^m(pi^m)` on the exact superstate model.
    pub v_m_policy: f64,
    /// `V(pi^m)` in the POMDP.
    pub v_pomdp_policy: f64,
    pub v_m_star: f64,
    pub p_err: f64,
    pub r_err: f64,
    pub unvisited: usize,
    #[serde(skip)]
    pub wall_ms: f64,
}

impl RunRecord {
    pub fn gap(&self) -> f64 {
        self.v_m_star - self.v_m_policy
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.m,
            self.t,
            self.run,
            self.seed,
            fmt_sig(self.v_m_policy),
            fmt_sig(self.v_pomdp_policy),
            fmt_sig(self.v_m_star),
            fmt_sig(self.p_err),
            fmt_sig(self.r_err),
            self.unvisited
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        let bad = || Error::Parameter(format!("malformed result row {line:?}"));
        if f.len() != 10 {
            return Err(bad());
        }
        let int = |s: &str| s.parse::<u64>().map_err(|_| bad());
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        Ok(Self {
            m: int(f[0])? as usize,
            t: int(f[1])? as usize,
            run: int(f[2])? as usize,
            seed: int(f[3])?,
            v_m_policy: num(f[4])?,
            v_pomdp_policy: num(f[5])?,
            v_m_star: num(f[6])?,
            p_err: num(f[7])?,
            r_err: num(f[8])?,
            unvisited: int(f[9])? as usize,
            wall_ms: 0.0,
        })
    }
}

/// Output of one learning run, before evaluation.
#[derive(Debug, Clone)]
pub struct LearnedPolicy {
    pub model: SuperstateModel,
    pub q: QTable,
    pub policy: WindowPolicy,
}

/// Sample a uniform-policy trajectory, estimate the superstate model and run
/// `k` value-iteration steps from zero; return the greedy policy.
pub fn learn_policy(
    pomdp: &TabularPomdp,
    m: usize,
    t: usize,
    k: usize,
    gamma: f64,
    seed: u64,
    scheme: CountingScheme,
) -> Result<LearnedPolicy> {
    let traj = pomdp.sample_trajectory(PolicySpec::Uniform, t, seed)?;
    let idx = crate::window::WindowIndex::build(pomdp.n_actions(), pomdp.n_obs(), m)?;
    let model = count_windows_timed(&traj, &idx, scheme, pomdp.reward_timing())?.to_model();
    let q = value_iteration(&model, gamma, k, &QTable::zeros(&idx))?;
    let policy = greedy(&q);
    Ok(LearnedPolicy { model, q, policy })
}

/// One full learning run, evaluated against the exact reference.
pub fn run_algorithm1(
    pomdp: &TabularPomdp,
    reference: &ExactReference,
    t: usize,
    k: usize,
    gamma: f64,
    seed: u64,
    scheme: CountingScheme,
) -> Result<RunRecord> {
    let start = Instant::now();
    let m = reference.m();
    let learned = learn_policy(pomdp, m, t, k, gamma, seed, scheme)?;
    let err = estimation_error(&learned.model, &reference.model)?;
    let v_m_policy = superstate_policy_value(&reference.model, &learned.policy, gamma)?;
    let v_pomdp_policy = pomdp_policy_value(pomdp, &learned.policy, gamma)?;
    Ok(RunRecord {
        m,
        t,
        run: 0,
        seed,
        v_m_policy,
        v_pomdp_policy,
        v_m_star: reference.v_star,
        p_err: err.p_err,
        r_err: err.r_err,
        unvisited: err.unvisited,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub m: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub runs: usize,
    pub mean_v_m_policy: f64,
    pub std_v_m_policy: f64,
    pub mean_gap: f64,
    pub mean_p_err: f64,
    pub v_m_star: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub records: Vec<RunRecord>,
    pub references: Vec<(usize, f64)>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.records.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }

    /// Mean and (sample) standard deviation per `(m, T)` cell, in sweep order.
    pub fn summaries(&self) -> Vec<CellSummary> {
        let mut out: Vec<CellSummary> = Vec::new();
        for chunk in self.records.chunk_by(|a, b| a.m == b.m && a.t == b.t) {
            let n = chunk.len() as f64;
            let mean = chunk.iter().map(|r| r.v_m_policy).sum::<f64>() / n;
            let var = if chunk.len() > 1 {
                chunk.iter().map(|r| (r.v_m_policy - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            out.push(CellSummary {
                m: chunk[0].m,
                t: chunk[0].t,
                runs: chunk.len(),
                mean_v_m_policy: mean,
                std_v_m_policy: var.sqrt(),
                mean_gap: chunk.iter().map(RunRecord::gap).sum::<f64>() / n,
                mean_p_err: chunk.iter().map(|r| r.p_err).sum::<f64>() / n,
                v_m_star: chunk[0].v_m_star,
            });
        }
        out
    }

    /// Line chart of mean ± std of `V^m(pi^m)` against `log10 T`, one series per
    /// `m`, with dashed reference lines at `V^m_*`.
    pub fn to_svg(&self) -> String {
        let cells = self.summaries();
        let (w, h, pad) = (720.0, 480.0, 60.0);
        let ts: Vec<f64> = cells.iter().map(|c| (c.t as f64).log10()).collect();
        let (x0, x1) = ts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let x1 = if x1 > x0 { x1 } else { x0 + 1.0 };
        let ys = cells
            .iter()
            .flat_map(|c| [c.mean_v_m_policy - c.std_v_m_policy, c.mean_v_m_policy + c.std_v_m_policy, c.v_m_star]);
        let (y0, y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
        let span = (y1 - y0).max(1e-9);
        let (y0, y1) = (y0 - 0.05 * span, y1 + 0.05 * span);
        let px = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
        let py = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
        let palette = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2"];

        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<path d="M{pad} {pad} V{} H{}" stroke="black" fill="none"/>"#,
            h - pad,
            w - pad
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">log10 T</text>"#, w / 2.0, h - 20.0);
        let _ = writeln!(s, r#"<text x="15" y="{}" transform="rotate(-90 15 {})" text-anchor="middle">V^m(π^m)</text>"#, h / 2.0, h / 2.0);
        for tick in 0..=4 {
            let y = y0 + (y1 - y0) * tick as f64 / 4.0;
            let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{:.2}</text>"#, pad - 6.0, py(y) + 4.0, y);
        }
        let mut seen_t: Vec<usize> = cells.iter().map(|c| c.t).collect();
        seen_t.sort_unstable();
        seen_t.dedup();
        for t in seen_t {
            let x = px((t as f64).log10());
            let _ = writeln!(s, r#"<text x="{x:.1}" y="{}" text-anchor="middle">{:.1}</text>"#, h - pad + 16.0, (t as f64).log10());
        }
        for (i, &(m, v_star)) in self.references.iter().enumerate() {
            let color = palette[i % palette.len()];
            let series: Vec<&CellSummary> = cells.iter().filter(|c| c.m == m).collect();
            let _ = writeln!(
                s,
                r#"<path d="M{:.1} {:.1} H{:.1}" stroke="{color}" stroke-dasharray="6 4" fill="none"/>"#,
                pad,
                py(v_star),
                w - pad
            );
            let mut d = String::new();
            for (j, c) in series.iter().enumerate() {
                let (x, y) = (px((c.t as f64).log10()), py(c.mean_v_m_policy));
                let _ = write!(d, "{}{x:.1} {y:.1} ", if j == 0 { "M" } else { "L" });
                let _ = writeln!(
                    s,
                    r#"<path d="M{x:.1} {:.1} V{:.1}" stroke="{color}" fill="none"/>"#,
                    py(c.mean_v_m_policy - c.std_v_m_policy),
                    py(c.mean_v_m_policy + c.std_v_m_policy)
                );
            }
            let _ = writeln!(s, r#"<path d="{}" stroke="{color}" stroke-width="2" fill="none"/>"#, d.trim_end());
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" fill="{color}">m={m}</text>"#,
                w - pad + 4.0,
                py(v_star) + 4.0
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn ensure_writable(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let probe = dir.join(".write_check");
    std::fs::write(&probe, b"")?;
    std::fs::remove_file(probe)?;
    Ok(())
}

/// Run every `(m, T, run)` cell of the configuration, in parallel with
/// per-cell seeds, and return the records in `(m, T, run)` order.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepResult> {
    config.check()?;
    let pomdp = config.load_pomdp()?;
    let references: Vec<ExactReference> = config
        .ms
        .par_iter()
        .map(|&m| ExactReference::new(&pomdp, m, config.gamma))
        .collect::<Result<_>>()?;
    let cells: Vec<(usize, usize, usize)> = (0..config.ms.len())
        .flat_map(|mi| config.ts.iter().flat_map(move |&t| (0..config.runs).map(move |run| (mi, t, run))))
        .collect();
    let records = cells
        .par_iter()
        .map(|&(mi, t, run)| {
            let reference = &references[mi];
            let seed = substream_seed(config.master_seed, &[reference.m() as u64, t as u64, run as u64]);
            let mut rec = run_algorithm1(&pomdp, reference, t, config.k, config.gamma, seed, config.scheme)?;
            rec.run = run;
            Ok(rec)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { records, references: references.iter().map(|r| (r.m(), r.v_star)).collect() })
}

/// Run the sweep and write `figure1.csv` (plus `figure1.json` and, when
/// enabled, `figure1.svg`) into the output directory.
pub fn figure1_sweep(config: &ExperimentConfig) -> Result<SweepResult> {
    ensure_writable(&config.out_dir)?;
    let result = run_sweep(config)?;
    std::fs::write(config.out_dir.join("figure1.csv"), result.to_csv())?;
    std::fs::write(
        config.out_dir.join("figure1.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "records": result.records,
            "summary": result.summaries(),
        }))?,
    )?;
    if config.svg {
        std::fs::write(config.out_dir.join("figure1.svg"), result.to_svg())?;
    }
    Ok(result)
}

pub fn parse_results_csv(text: &str) -> Result<Vec<RunRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Parameter("unexpected results header".into()));
    }
    lines.map(RunRecord::parse_csv_row).collect()
}
