//! Run configuration, experiment orchestration and output files for the
//! `rmntr` command line tool.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rmntr::{rmntr, solve_single_level, Counters, SolveResult, SolveStatus, TRParams, TrustRegionTrace};
use rmntr_problems::{
    Benchmark, BurgersConfig, BurgersProblem, PinnConfig, PinnProblem, QuadraticConfig, QuadraticProblem,
    SemilinearConfig, SemilinearProblem, Table,
};
use serde::{Deserialize, Serialize};

pub const HISTORY_HEADER: &str = "level,k,h,delta,rho,kind,class,F";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "problem", rename_all = "snake_case")]
pub enum ProblemSpec {
    Burgers(BurgersConfig),
    Semilinear(SemilinearConfig),
    Pinn(PinnConfig),
    Quadratic(QuadraticConfig),
}

impl ProblemSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemSpec::Burgers(_) => "burgers",
            ProblemSpec::Semilinear(_) => "semilinear",
            ProblemSpec::Pinn(_) => "pinn",
            ProblemSpec::Quadratic(_) => "quadratic",
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            ProblemSpec::Burgers(c) => c.seed,
            ProblemSpec::Semilinear(c) => c.seed,
            ProblemSpec::Pinn(c) => c.seed,
            ProblemSpec::Quadratic(c) => c.seed,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            ProblemSpec::Burgers(c) => c.seed = seed,
            ProblemSpec::Semilinear(c) => c.seed = seed,
            ProblemSpec::Pinn(c) => c.seed = seed,
            ProblemSpec::Quadratic(c) => c.seed = seed,
        }
    }

    pub fn build(&self) -> Result<Box<dyn Benchmark>> {
        Ok(match self {
            ProblemSpec::Burgers(c) => Box::new(BurgersProblem::new(c.clone())?),
            ProblemSpec::Semilinear(c) => Box::new(SemilinearProblem::new(c.clone())?),
            ProblemSpec::Pinn(c) => Box::new(PinnProblem::new(c.clone())?),
            ProblemSpec::Quadratic(c) => Box::new(QuadraticProblem::new(c.clone())?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    #[serde(default = "one")]
    pub levels: usize,
    #[serde(default)]
    pub trust_region: TRParams,
    /// Output directory; the `--out` flag takes precedence.
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn one() -> usize {
    1
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).context("parsing run configuration")?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }
}

pub struct RunOutput {
    pub config: RunConfig,
    pub result: SolveResult,
    pub dof: usize,
    pub time_seconds: f64,
    pub solution: Table,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub problem: String,
    pub dof: usize,
    pub levels: usize,
    pub iter: usize,
    pub fval: u64,
    pub grad: u64,
    pub hess: u64,
    pub phi: u64,
    pub prox: u64,
    pub time_seconds: f64,
    pub status: SolveStatus,
    pub h: f64,
    pub value: f64,
    pub level_counters: Vec<Counters>,
    pub diagnostics: rmntr::trust_region::Diagnostics,
    pub history: String,
}

impl RunOutput {
    pub fn report(&self) -> RunReport {
        let c = self.result.counters;
        RunReport {
            problem: self.config.problem.name().to_string(),
            dof: self.dof,
            levels: self.config.levels,
            iter: self.result.iterations,
            fval: c.fval,
            grad: c.grad,
            hess: c.hess,
            phi: c.phi,
            prox: c.prox,
            time_seconds: self.time_seconds,
            status: self.result.status,
            h: self.result.h,
            value: self.result.value,
            level_counters: self.result.level_counters.clone(),
            diagnostics: self.result.diagnostics.clone(),
            history: "history.csv".into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        exit_code(self.result.status)
    }
}

pub fn exit_code(status: SolveStatus) -> i32 {
    match status {
        SolveStatus::Converged => 0,
        SolveStatus::BudgetExhausted => 2,
    }
}

/// Build the level stack and run the solver; the clock covers the solve only.
pub fn run(config: &RunConfig) -> Result<RunOutput> {
    let bench = config.problem.build()?;
    let phi = bench.phi()?;
    let x0 = bench.initial_point();
    let levels = config.levels;
    if levels == 0 || levels > bench.max_levels() {
        bail!("{} levels requested, {} supports 1..={}", levels, config.problem.name(), bench.max_levels());
    }
    let (result, time_seconds) = if levels == 1 {
        let mut obj = bench.level_objective(0, 1)?;
        let start = Instant::now();
        let res = solve_single_level(obj.as_mut(), &phi, &x0, &config.trust_region)?;
        (res, start.elapsed().as_secs_f64())
    } else {
        let mut stack = bench.level_stack(levels)?;
        let start = Instant::now();
        let res = rmntr(&mut stack, &phi, &x0, &config.trust_region)?;
        (res, start.elapsed().as_secs_f64())
    };
    let solution = bench.export(&result.x)?;
    Ok(RunOutput { config: config.clone(), result, dof: bench.dim(), time_seconds, solution })
}

pub fn history_csv(trace: &TrustRegionTrace) -> String {
    let mut out = String::with_capacity(64 * (trace.rows.len() + 1));
    out.push_str(HISTORY_HEADER);
    out.push('\n');
    for r in &trace.rows {
        let _ = writeln!(out, "{},{},{:e},{:e},{:e},{},{},{:e}", r.level, r.k, r.h, r.delta, r.rho, r.kind, r.class, r.f);
    }
    out
}

pub fn table_csv(table: &Table) -> String {
    let mut out = table.headers.join(",");
    out.push('\n');
    for i in 0..table.rows() {
        let row: Vec<String> = table.columns.iter().map(|c| format!("{:e}", c[i])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn table_header() -> String {
    format!(
        "{:<12}{:>9}{:>7}{:>7}{:>8}{:>8}{:>9}{:>9}{:>9}{:>10}",
        "example", "dof", "levels", "iter", "fval", "grad", "hess", "phi", "prox", "time"
    )
}

pub fn table_row(r: &RunReport) -> String {
    format!(
        "{:<12}{:>9}{:>7}{:>7}{:>8}{:>8}{:>9}{:>9}{:>9}{:>10.2}",
        r.problem, r.dof, r.levels, r.iter, r.fval, r.grad, r.hess, r.phi, r.prox, r.time_seconds
    )
}

/// Write `history.csv`, `report.json` and `solution.csv` into `dir`.
pub fn write_outputs(dir: &Path, out: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("history.csv"), history_csv(&out.result.trace))?;
    fs::write(dir.join("solution.csv"), table_csv(&out.solution))?;
    let report = serde_json::to_string_pretty(&out.report())?;
    fs::write(dir.join("report.json"), report + "\n")?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub iterations_a: usize,
    pub iterations_b: usize,
    /// `iterations_b / iterations_a`
    pub ratio: f64,
    /// Fine-level `(k, F_a, h_a, F_b, h_b)`; missing entries are NaN.
    pub aligned: Vec<(usize, f64, f64, f64, f64)>,
}

fn fine_rows(trace: &TrustRegionTrace, top: usize) -> Vec<(f64, f64)> {
    trace.rows.iter().filter(|r| r.level == top).map(|r| (r.f, r.h)).collect()
}

pub fn compare_results(a: &RunOutput, b: &RunOutput) -> Comparison {
    let fa = fine_rows(&a.result.trace, a.config.levels - 1);
    let fb = fine_rows(&b.result.trace, b.config.levels - 1);
    let len = fa.len().max(fb.len());
    let nan = (f64::NAN, f64::NAN);
    let aligned = (0..len)
        .map(|k| {
            let (x, y) = (fa.get(k).copied().unwrap_or(nan), fb.get(k).copied().unwrap_or(nan));
            (k, x.0, x.1, y.0, y.1)
        })
        .collect();
    let (ia, ib) = (a.result.iterations, b.result.iterations);
    let ratio = if ia == ib { 1.0 } else { ib as f64 / ia as f64 };
    Comparison { iterations_a: ia, iterations_b: ib, ratio, aligned }
}

/// Run both configurations one after the other.
pub fn compare(a: &RunConfig, b: &RunConfig) -> Result<(RunOutput, RunOutput, Comparison)> {
    if a.problem != b.problem {
        bail!("compare needs the same problem and seed in both configurations");
    }
    let ra = run(a)?;
    let rb = run(b)?;
    let cmp = compare_results(&ra, &rb);
    Ok((ra, rb, cmp))
}

pub fn comparison_text(cmp: &Comparison) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "k,F_a,h_a,F_b,h_b");
    for (k, fa, ha, fb, hb) in &cmp.aligned {
        let _ = writeln!(out, "{k},{fa:e},{ha:e},{fb:e},{hb:e}");
    }
    let _ = writeln!(
        out,
        "fine-level iterations: a = {}, b = {}, ratio b/a = {:.4}",
        cmp.iterations_a, cmp.iterations_b, cmp.ratio
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_config_with_defaults() {
        let cfg = RunConfig::from_json(r#"{"problem": {"problem": "burgers", "n": 64}}"#).unwrap();
        assert_eq!(cfg.levels, 1);
        assert_eq!(cfg.trust_region, TRParams::default());
        match cfg.problem {
            ProblemSpec::Burgers(b) => {
                assert_eq!(b.n, 64);
                assert_eq!(b.nu, 0.08);
            }
            _ => panic!("wrong problem"),
        }
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(RunConfig::from_json(r#"{"problem": {"problem": "burgers"}, "level": 2}"#).is_err());
        assert!(RunConfig::from_json(r#"{"problem": {"problem": "burgers", "nuu": 1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"problem": {"problem": "pinn"}, "trust_region": {"eta": 1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"problem": {"problem": "heat"}}"#).is_err());
    }

    #[test]
    fn seed_override() {
        let mut p = ProblemSpec::Pinn(PinnConfig::default());
        p.set_seed(99);
        assert_eq!(p.seed(), 99);
    }

    #[test]
    fn quadratic_smoke_run() {
        let cfg = RunConfig::from_json(r#"{"problem": {"problem": "quadratic", "n": 32}}"#).unwrap();
        let out = run(&cfg).unwrap();
        assert!(out.result.iterations >= 1);
        assert!(out.result.h <= 1e-7);
        assert_eq!(out.exit_code(), 0);
        let csv = history_csv(&out.result.trace);
        assert!(csv.starts_with("level,k,h,delta,rho,kind,class,F\n"));
        assert_eq!(csv.lines().count(), out.result.trace.rows.len() + 1);
        assert!(!csv.contains('\r'));
    }

    #[test]
    fn report_counters_are_level_sums() {
        let cfg = RunConfig::from_json(r#"{"problem": {"problem": "quadratic", "n": 32}, "levels": 3}"#).unwrap();
        let out = run(&cfg).unwrap();
        let r = out.report();
        let mut sum = Counters::default();
        for c in &r.level_counters {
            sum += *c;
        }
        assert_eq!((r.fval, r.grad, r.hess, r.phi, r.prox), (sum.fval, sum.grad, sum.hess, sum.phi, sum.prox));
        assert!(table_row(&r).starts_with("quadratic"));
    }

    #[test]
    fn identical_configs_compare_to_ratio_one() {
        let cfg = RunConfig::from_json(r#"{"problem": {"problem": "quadratic", "n": 16}}"#).unwrap();
        let (_, _, cmp) = compare(&cfg, &cfg).unwrap();
        assert_eq!(cmp.ratio, 1.0);
        let other = RunConfig::from_json(r#"{"problem": {"problem": "quadratic", "n": 16, "seed": 3}}"#).unwrap();
        assert!(compare(&cfg, &other).is_err());
    }

    #[test]
    fn too_many_levels_is_an_error() {
        let cfg = RunConfig::from_json(r#"{"problem": {"problem": "pinn"}, "levels": 4}"#).unwrap();
        assert!(run(&cfg).is_err());
    }
}
