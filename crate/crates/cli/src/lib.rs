//! Harness behind the `lcp-pqn` binary: suite generation, single solves,
//! suite benchmarks with effective-MVP accounting, and `c(A)` diagnostics.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use lcp_pqn::fundamental::{fundamental_quantity, lipschitz_bound, neighborhood_check, CofaOptions};
use lcp_pqn::instances::{
    generate_instance, load_instance, save_instance, GeneratorParams, LcpInstance, LowFiScheme, MobilityModel,
};
use lcp_pqn::operators::{infnorm_distance, MatVecOperator};
use lcp_pqn::solvers::{self, KktNorm};
use lcp_pqn::{SolveOptions, SolverReport};

pub const INSTANCE_EXTENSION: &str = ".lcp.json";
pub const SUMMARY_VERSION: u64 = 1;
/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "LCP_PQN_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum SolverName {
    MonoPqn,
    BiPqn,
    BbPgd,
    Pgd,
    APgd,
    ZeroSr1,
    MinMap,
}

impl SolverName {
    pub const ALL: [SolverName; 7] = [
        SolverName::MonoPqn,
        SolverName::BiPqn,
        SolverName::BbPgd,
        SolverName::Pgd,
        SolverName::APgd,
        SolverName::ZeroSr1,
        SolverName::MinMap,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SolverName::MonoPqn => "mono_pqn",
            SolverName::BiPqn => "bi_pqn",
            SolverName::BbPgd => "bb_pgd",
            SolverName::Pgd => "pgd",
            SolverName::APgd => "a_pgd",
            SolverName::ZeroSr1 => "zero_sr1",
            SolverName::MinMap => "min_map",
        }
    }
}

impl fmt::Display for SolverName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ModelChoice {
    Drag,
    Rpy,
    /// Alternate drag and RPY by instance index.
    Mix,
}

/// Largest eigenvalue by power iteration on the uncounted map.
fn power_lipschitz(op: &MatVecOperator) -> Result<f64> {
    let n = op.dim();
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 * 0.618).fract()).collect();
    let mut lambda = 0.0;
    for _ in 0..200 {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        let w = op.apply(&v)?;
        let next: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        v = w;
        if (next - lambda).abs() <= 1e-10 * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    // Rayleigh quotients approach from below
    Ok(lambda * 1.01)
}

/// Runs one solver on one instance with fresh counters.
pub fn run_solver(name: SolverName, inst: &LcpInstance, x0: &[f64], opts: &SolveOptions) -> Result<SolverReport> {
    let hi = inst.counted_high();
    let b = &inst.b;
    let report = match name {
        SolverName::MonoPqn => solvers::mono_pqn(&hi, b, x0, opts)?,
        SolverName::BiPqn => solvers::bi_pqn(&hi, &inst.counted_low(), b, x0, opts)?,
        SolverName::BbPgd => solvers::bb_pgd(&hi, b, x0, opts)?,
        SolverName::Pgd => {
            let l = match inst.lipschitz {
                Some(l) => l,
                None if inst.n() == 0 => 1.0,
                None => power_lipschitz(&inst.a_high)?,
            };
            solvers::pgd_fixed(&hi, b, x0, 1.0 / l, opts)?
        }
        SolverName::APgd => match (inst.lipschitz, inst.mu) {
            (Some(l), Some(mu)) => solvers::a_pgd(&hi, b, x0, l, mu, opts)?,
            _ if inst.n() == 0 => solvers::a_pgd(&hi, b, x0, 1.0, 1.0, opts)?,
            _ => bail!("a_pgd needs L and mu, which are only recorded for dense instances"),
        },
        SolverName::ZeroSr1 => solvers::zero_sr1(&hi, b, x0, opts)?,
        SolverName::MinMap => solvers::min_map_newton(&hi, b, x0, opts)?,
    };
    Ok(report)
}

/// Solver flags shared by `solve` and `bench`.
#[derive(Clone, Debug, clap::Args)]
pub struct SolverFlags {
    /// KKT tolerance.
    #[arg(long, default_value_t = 1e-8)]
    pub eps: f64,
    #[arg(long, default_value_t = 500)]
    pub k_max: usize,
    /// Forward step; also the initial inverse-Hessian scale.
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    /// Cached-gradient advances between fresh evaluations (0 disables).
    #[arg(long, default_value_t = lcp_pqn::stepsize::DEFAULT_REFRESH_PERIOD)]
    pub refresh_period: usize,
    /// Subproblem tolerance relative to `eps` (Bi-PQN).
    #[arg(long, default_value_t = 1e-2)]
    pub sub_eps_factor: f64,
    #[arg(long, default_value_t = 50)]
    pub sub_k_max: usize,
    /// Use the ∞-norm for the KKT error.
    #[arg(long)]
    pub kkt_inf: bool,
    #[arg(long)]
    pub literal_alg1: bool,
    #[arg(long)]
    pub bb_seed: bool,
}

impl Default for SolverFlags {
    fn default() -> Self {
        let o = SolveOptions::default();
        Self {
            eps: o.eps_kkt,
            k_max: o.k_max,
            tau: o.tau,
            refresh_period: o.refresh_period,
            sub_eps_factor: o.subproblem_eps_factor,
            sub_k_max: o.subproblem_k_max,
            kkt_inf: false,
            literal_alg1: false,
            bb_seed: false,
        }
    }
}

impl SolverFlags {
    pub fn options(&self, cost_ratio: f64) -> SolveOptions {
        SolveOptions {
            k_max: self.k_max,
            eps_kkt: self.eps,
            tau: self.tau,
            subproblem_eps_factor: self.sub_eps_factor,
            subproblem_k_max: self.sub_k_max,
            refresh_period: self.refresh_period,
            kkt_norm: if self.kkt_inf { KktNorm::Infinity } else { KktNorm::Euclidean },
            cost_ratio,
            literal_alg1: self.literal_alg1,
            bb_seed: self.bb_seed,
            ..SolveOptions::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct GenerateConfig {
    pub m: usize,
    pub count: usize,
    pub seed: u64,
    pub model: ModelChoice,
    pub rpy_cutoff: f64,
    pub lowfi: Option<LowFiScheme>,
    pub cost_ratio: f64,
    pub dt: f64,
    pub velocity_scale: f64,
    pub dense_cap: usize,
}

impl GenerateConfig {
    pub fn new(m: usize, count: usize, seed: u64) -> Self {
        Self {
            m,
            count,
            seed,
            model: ModelChoice::Drag,
            rpy_cutoff: lcp_pqn::instances::mobility::DEFAULT_RPY_CUTOFF,
            lowfi: None,
            cost_ratio: lcp_pqn::instances::DEFAULT_COST_RATIO,
            dt: 1.0,
            velocity_scale: 1.0,
            dense_cap: lcp_pqn::operators::DEFAULT_DENSE_CAP,
        }
    }

    /// Generator parameters for the `index`-th instance.
    pub fn params(&self, index: usize) -> GeneratorParams {
        let rpy = MobilityModel::RpyLike {
            eta: lcp_pqn::instances::mobility::DEFAULT_VISCOSITY,
            cutoff: self.rpy_cutoff,
        };
        let model = match self.model {
            ModelChoice::Drag => MobilityModel::drag(),
            ModelChoice::Rpy => rpy,
            ModelChoice::Mix if index % 2 == 0 => MobilityModel::drag(),
            ModelChoice::Mix => rpy,
        };
        GeneratorParams {
            model,
            dt: self.dt,
            velocity_scale: self.velocity_scale,
            lowfi: self.lowfi,
            cost_ratio: self.cost_ratio,
            dense_cap: self.dense_cap,
            ..GeneratorParams::with_defaults(self.m)
        }
    }
}

pub fn instance_file_name(index: usize) -> String {
    format!("inst_{index:04}{INSTANCE_EXTENSION}")
}

/// Generates `count` instances with seeds `seed, seed + 1, ...`.
pub fn generate_instances(cfg: &GenerateConfig) -> Result<Vec<LcpInstance>> {
    (0..cfg.count)
        .into_par_iter()
        .map(|i| {
            generate_instance(&cfg.params(i), cfg.seed.wrapping_add(i as u64))
                .with_context(|| format!("generating instance {i}"))
        })
        .collect()
}

/// Writes the suite into `out` and returns the file paths in order.
pub fn cmd_generate(cfg: &GenerateConfig, out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let instances = generate_instances(cfg)?;
    let mut paths = Vec::with_capacity(instances.len());
    for (i, inst) in instances.iter().enumerate() {
        let path = out.join(instance_file_name(i));
        save_instance(inst, &path).with_context(|| format!("writing {}", path.display()))?;
        paths.push(path);
    }
    Ok(paths)
}

#[derive(Debug, Serialize)]
pub struct SolveOutput {
    pub instance: String,
    pub solver: SolverName,
    pub n: usize,
    pub cost_ratio: f64,
    pub converged: bool,
    pub kkt_final: f64,
    #[serde(flatten)]
    pub report: SolverReport,
}

pub fn instance_id(path: &Path) -> String {
    let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    name.strip_suffix(INSTANCE_EXTENSION).map(str::to_string).unwrap_or(name)
}

pub fn cmd_solve(path: &Path, solver: SolverName, flags: &SolverFlags) -> Result<SolveOutput> {
    let inst = load_instance(path).with_context(|| format!("loading {}", path.display()))?;
    let opts = flags.options(inst.cost_ratio);
    let report = run_solver(solver, &inst, &vec![0.0; inst.n()], &opts)?;
    Ok(SolveOutput {
        instance: instance_id(path),
        solver,
        n: inst.n(),
        cost_ratio: inst.cost_ratio,
        converged: report.converged(),
        kkt_final: report.kkt_final(),
        report,
    })
}

/// One solver run inside a benchmark. `wall_time_s` is the only
/// non-deterministic column and comes last.
#[derive(Clone, Debug, Serialize, serde::Deserialize, PartialEq)]
pub struct BenchRecord {
    pub instance_id: String,
    pub solver_name: String,
    pub n: usize,
    pub iterations: usize,
    pub hi_mvps: usize,
    pub lo_mvps: usize,
    pub e_mvps: f64,
    pub kkt_final: f64,
    pub converged: bool,
    pub termination: String,
    pub cost_ratio: f64,
    pub seed: u64,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Stats {
    pub min: f64,
    pub median: f64,
    pub mean: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        Some(Self {
            min: v[0],
            median,
            mean: v.iter().sum::<f64>() / n as f64,
            max: v[n - 1],
        })
    }
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct SolverSummary {
    pub solver: String,
    pub runs: usize,
    pub converged: usize,
    pub e_mvps: Option<Stats>,
    pub hi_mvps: Option<Stats>,
    pub lo_mvps: Option<Stats>,
    /// Baseline median E-MVPs over this solver's median.
    pub speedup_vs_baseline: Option<f64>,
    /// Fraction of instances where this solver needs strictly fewer E-MVPs
    /// than the baseline.
    pub paired_fraction_better: Option<f64>,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct SuiteSummary {
    pub version: u64,
    pub instances: usize,
    pub baseline: String,
    /// `declared` (instance files) or `measured` (wall clock).
    pub cost_ratio_source: String,
    pub solvers: Vec<SolverSummary>,
}

/// Aggregates records; recomputable from the CSV alone.
pub fn summarize(records: &[BenchRecord], solvers: &[SolverName], baseline: SolverName, measured: bool) -> SuiteSummary {
    let mut ids: Vec<&str> = records.iter().map(|r| r.instance_id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    let of = |s: &str| -> Vec<&BenchRecord> { records.iter().filter(|r| r.solver_name == s).collect() };
    let base = of(baseline.as_str());
    let base_median = Stats::of(&base.iter().map(|r| r.e_mvps).collect::<Vec<_>>()).map(|s| s.median);
    let summaries = solvers
        .iter()
        .map(|s| {
            let rs = of(s.as_str());
            let col = |f: fn(&BenchRecord) -> f64| Stats::of(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            let e = col(|r| r.e_mvps);
            let speedup = match (base_median, &e) {
                (Some(b), Some(e)) if e.median > 0.0 => Some(b / e.median),
                _ => None,
            };
            let pairs: Vec<bool> = rs
                .iter()
                .filter_map(|r| {
                    base.iter()
                        .find(|q| q.instance_id == r.instance_id)
                        .map(|q| r.e_mvps < q.e_mvps)
                })
                .collect();
            let paired = (!pairs.is_empty())
                .then(|| pairs.iter().filter(|b| **b).count() as f64 / pairs.len() as f64);
            SolverSummary {
                solver: s.to_string(),
                runs: rs.len(),
                converged: rs.iter().filter(|r| r.converged).count(),
                e_mvps: e,
                hi_mvps: col(|r| r.hi_mvps as f64),
                lo_mvps: col(|r| r.lo_mvps as f64),
                speedup_vs_baseline: speedup,
                paired_fraction_better: paired,
            }
        })
        .collect();
    SuiteSummary {
        version: SUMMARY_VERSION,
        instances: ids.len(),
        baseline: baseline.to_string(),
        cost_ratio_source: if measured { "measured" } else { "declared" }.into(),
        solvers: summaries,
    }
}

/// Median over 5 timed MVPs per fidelity of `t_high / t_low`, floored at 1.
pub fn measure_cost_ratio(inst: &LcpInstance) -> Result<f64> {
    let n = inst.n();
    if n == 0 {
        return Ok(inst.cost_ratio);
    }
    let x: Vec<f64> = (0..n).map(|i| 1.0 + (i % 7) as f64).collect();
    let time = |op: &MatVecOperator| -> Result<f64> {
        let t = Instant::now();
        std::hint::black_box(op.apply(&x)?);
        Ok(t.elapsed().as_secs_f64())
    };
    let mut ratios = Vec::with_capacity(5);
    for _ in 0..5 {
        let hi = time(&inst.a_high)?;
        let lo = time(&inst.a_low)?;
        ratios.push(if lo > 0.0 { hi / lo } else { 1.0 });
    }
    Ok(Stats::of(&ratios).map_or(1.0, |s| s.median).max(1.0))
}

/// Suite files in `dir`, sorted by name.
pub fn suite_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading suite directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(INSTANCE_EXTENSION))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no *{INSTANCE_EXTENSION} files in {}", dir.display());
    }
    Ok(files)
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub solvers: Vec<SolverName>,
    pub baseline: SolverName,
    pub flags: SolverFlags,
    pub measure_ratio: bool,
}

/// Runs every solver on every instance from `x0 = 0`. Instances run in
/// parallel; records come back in (instance, solver) order.
pub fn run_bench(files: &[PathBuf], cfg: &BenchConfig) -> Result<Vec<BenchRecord>> {
    let mut solvers = cfg.solvers.clone();
    if !solvers.contains(&cfg.baseline) {
        solvers.push(cfg.baseline);
    }
    let per_instance: Vec<Vec<BenchRecord>> = files
        .par_iter()
        .map(|path| -> Result<Vec<BenchRecord>> {
            let inst = load_instance(path).with_context(|| format!("loading {}", path.display()))?;
            let ratio = if cfg.measure_ratio {
                measure_cost_ratio(&inst)?
            } else {
                inst.cost_ratio
            };
            let opts = cfg.flags.options(ratio);
            let x0 = vec![0.0; inst.n()];
            solvers
                .iter()
                .map(|&s| {
                    let t = Instant::now();
                    let r = run_solver(s, &inst, &x0, &opts)
                        .with_context(|| format!("{s} on {}", path.display()))?;
                    Ok(BenchRecord {
                        instance_id: instance_id(path),
                        solver_name: s.to_string(),
                        n: inst.n(),
                        iterations: r.iterations,
                        hi_mvps: r.hi_mvps,
                        lo_mvps: r.lo_mvps,
                        e_mvps: r.hi_mvps as f64 + r.lo_mvps as f64 / ratio,
                        kkt_final: r.kkt_final(),
                        converged: r.converged(),
                        termination: format!("{:?}", r.termination),
                        cost_ratio: ratio,
                        seed: inst.seed,
                        wall_time_s: t.elapsed().as_secs_f64(),
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_instance.into_iter().flatten().collect())
}

pub fn write_records_csv<W: Write>(records: &[BenchRecord], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in records {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_records_csv<R: std::io::Read>(r: R) -> Result<Vec<BenchRecord>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(Into::into)
}

pub fn cmd_bench(suite: &Path, cfg: &BenchConfig, csv_out: &Path, json_out: &Path) -> Result<SuiteSummary> {
    let files = suite_files(suite)?;
    let records = run_bench(&files, cfg)?;
    write_records_csv(&records, fs::File::create(csv_out).with_context(|| format!("creating {}", csv_out.display()))?)?;
    let mut solvers = cfg.solvers.clone();
    if !solvers.contains(&cfg.baseline) {
        solvers.push(cfg.baseline);
    }
    let summary = summarize(&records, &solvers, cfg.baseline, cfg.measure_ratio);
    let mut f = fs::File::create(json_out).with_context(|| format!("creating {}", json_out.display()))?;
    serde_json::to_writer_pretty(&mut f, &summary)?;
    f.write_all(b"\n")?;
    Ok(summary)
}

#[derive(Debug, Serialize)]
pub struct CofaOutput {
    pub c_est: f64,
    /// `[λ_min/n, λ_min]`
    pub bracket: [f64; 2],
    /// `‖A - Â‖∞` unless given explicitly.
    pub delta: f64,
    pub neighborhood_ok: bool,
    /// `None` when `delta >= c_est`.
    pub lipschitz_coeff: Option<f64>,
}

pub fn cmd_cofa(path: &Path, delta: Option<f64>) -> Result<CofaOutput> {
    let inst = load_instance(path).with_context(|| format!("loading {}", path.display()))?;
    let (a, a_low) = match (&inst.dense_a, &inst.dense_a_low) {
        (Some(a), Some(l)) => (a, l),
        _ => bail!("cofa needs dense A and Â in the instance file"),
    };
    let res = fundamental_quantity(a, &CofaOptions::default())?;
    let delta = match delta {
        Some(d) => d,
        None => infnorm_distance(a, a_low)?,
    };
    Ok(CofaOutput {
        c_est: res.c_est,
        bracket: [res.lower, res.upper],
        delta,
        neighborhood_ok: neighborhood_check(a, a_low, res.c_est)?,
        lipschitz_coeff: lipschitz_bound(res.c_est, delta, &inst.b).ok(),
    })
}

/// Worker count from `LCP_PQN_THREADS`, if set.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v.trim().parse().with_context(|| format!("{THREADS_ENV}={v} is not a count"))?;
            if n == 0 {
                bail!("{THREADS_ENV} must be at least 1");
            }
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, solver: &str, e: f64) -> BenchRecord {
        BenchRecord {
            instance_id: id.into(),
            solver_name: solver.into(),
            n: 3,
            iterations: 1,
            hi_mvps: e as usize,
            lo_mvps: 0,
            e_mvps: e,
            kkt_final: 0.0,
            converged: true,
            termination: "KktAbs".into(),
            cost_ratio: 10.0,
            seed: 0,
            wall_time_s: 0.0,
        }
    }

    #[test]
    fn stats_by_hand() {
        let s = Stats::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(s, Stats { min: 1.0, median: 2.5, mean: 2.5, max: 4.0 });
        assert_eq!(Stats::of(&[5.0, 1.0, 3.0]).unwrap().median, 3.0);
        assert!(Stats::of(&[]).is_none());
    }

    #[test]
    fn speedup_and_pairing() {
        let recs = vec![
            record("a", "bb_pgd", 10.0),
            record("a", "mono_pqn", 5.0),
            record("b", "bb_pgd", 12.0),
            record("b", "mono_pqn", 12.0),
            record("c", "bb_pgd", 8.0),
            record("c", "mono_pqn", 6.0),
        ];
        let s = summarize(&recs, &[SolverName::MonoPqn, SolverName::BbPgd], SolverName::BbPgd, false);
        assert_eq!(s.instances, 3);
        let mono = &s.solvers[0];
        assert_eq!(mono.e_mvps.as_ref().unwrap().median, 6.0);
        assert_eq!(mono.speedup_vs_baseline, Some(10.0 / 6.0));
        assert_eq!(mono.paired_fraction_better, Some(2.0 / 3.0));
        assert_eq!(s.solvers[1].paired_fraction_better, Some(0.0));
    }

    #[test]
    fn instance_ids_strip_extension() {
        assert_eq!(instance_id(Path::new("/x/inst_0003.lcp.json")), "inst_0003");
        assert_eq!(instance_file_name(12), "inst_0012.lcp.json");
    }

    #[test]
    fn solver_names_round_trip() {
        use clap::ValueEnum;
        for s in SolverName::ALL {
            assert_eq!(SolverName::from_str(s.as_str(), false).unwrap(), s);
            assert_eq!(serde_json::to_value(s).unwrap(), s.as_str());
        }
    }
}
