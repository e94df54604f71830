//! Monte Carlo experiment runner and CSV output.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ao::AoTrace;
use crate::baselines::{run_baseline, BaselineOptions, Scheme};
use crate::channel::{draw_small_scale, ChannelModel};
use crate::error::{Error, Result};
use crate::model::{derive_link_geometry, draw_user_positions, Feasibility, SystemConfig};

pub const RESULTS_HEADER: &str = "sweep,scheme,mean_rate_bps_hz,std_rate,drops,mean_iters,mean_ms";
pub const TRACE_HEADER: &str = "iter,stage,sum_rate,penalty,violation,ms";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Convergence,
    SweepNm,
    SweepK,
    SweepPower,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::SweepNm => "sweep-nm",
            ExperimentKind::SweepK => "sweep-k",
            ExperimentKind::SweepPower => "sweep-power",
        }
    }

    pub fn default_sweep(&self) -> Vec<f64> {
        match self {
            ExperimentKind::Convergence => vec![0.0],
            ExperimentKind::SweepNm => vec![4.0, 8.0, 12.0, 16.0],
            ExperimentKind::SweepK => vec![2.0, 4.0, 6.0, 8.0],
            ExperimentKind::SweepPower => vec![10.0, 20.0, 30.0, 40.0],
        }
    }

    pub fn default_schemes(&self) -> Vec<Scheme> {
        match self {
            ExperimentKind::Convergence | ExperimentKind::SweepPower => vec![Scheme::Proposed],
            ExperimentKind::SweepNm => vec![
                Scheme::Proposed,
                Scheme::Partial { rho_fa: 0.5, rho_lm: 0.5 },
                Scheme::RigidBsRis,
            ],
            ExperimentKind::SweepK => vec![Scheme::Proposed, Scheme::LIM_BS, Scheme::RIS_FAS, Scheme::RigidBsRis],
        }
    }

    /// Scenario at one sweep point.
    pub fn apply(&self, base: &SystemConfig, value: f64) -> Result<SystemConfig> {
        let mut cfg = base.clone();
        let count = |field: &str| -> Result<usize> {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::config(field, format!("sweep value {value} is not a positive integer")))
            }
        };
        match self {
            ExperimentKind::Convergence => {}
            ExperimentKind::SweepNm => {
                let n = count("sweep")?;
                cfg.n_antennas = n;
                cfg.n_elements = n;
            }
            ExperimentKind::SweepK => cfg.n_users = count("sweep")?,
            ExperimentKind::SweepPower => cfg.pmax_dbm = value,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "convergence" => Ok(ExperimentKind::Convergence),
            "sweep-nm" => Ok(ExperimentKind::SweepNm),
            "sweep-k" => Ok(ExperimentKind::SweepK),
            "sweep-power" => Ok(ExperimentKind::SweepPower),
            other => Err(Error::config("experiment", format!("unknown experiment `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub kind: ExperimentKind,
    pub drops: usize,
    pub seed: u64,
    pub sweep: Vec<f64>,
    pub schemes: Vec<Scheme>,
    /// Overrides the config's correlation switch when set.
    pub correlation: Option<bool>,
    pub workers: usize,
    pub ga_budget: usize,
    /// Keep per-run traces of the optimizing schemes.
    pub keep_traces: bool,
}

impl ExperimentPlan {
    pub fn new(kind: ExperimentKind, drops: usize, seed: u64) -> Self {
        ExperimentPlan {
            kind,
            drops,
            seed,
            sweep: kind.default_sweep(),
            schemes: kind.default_schemes(),
            correlation: None,
            workers: 1,
            ga_budget: 2000,
            keep_traces: kind == ExperimentKind::Convergence,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.drops == 0 {
            return Err(Error::config("drops", "must be at least 1"));
        }
        if self.sweep.is_empty() {
            return Err(Error::config("sweep", "needs at least one value"));
        }
        if self.schemes.is_empty() {
            return Err(Error::config("schemes", "needs at least one scheme"));
        }
        for s in &self.schemes {
            s.validate()?;
        }
        Ok(())
    }
}

/// One scheme on one drop.
#[derive(Debug, Clone, PartialEq)]
pub struct DropRecord {
    pub sweep: f64,
    pub scheme: Scheme,
    pub drop: usize,
    pub rate: Option<f64>,
    pub iterations: usize,
    pub ms: f64,
    /// Constraint report of the returned solution.
    pub feasibility: Option<Feasibility>,
    pub unit_modulus_before_projection: f64,
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub sweep: f64,
    pub scheme: String,
    pub mean_rate: f64,
    pub std_rate: f64,
    pub drops: usize,
    pub mean_iters: f64,
    pub mean_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub sweep: f64,
    pub scheme: Scheme,
    pub drop: usize,
    pub trace: AoTrace,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentResult {
    pub rows: Vec<ResultRow>,
    pub records: Vec<DropRecord>,
    pub traces: Vec<TraceRecord>,
}

impl ExperimentResult {
    /// Rates of `scheme` at `sweep`, ordered by drop; failed drops are `None`.
    pub fn rates(&self, sweep: f64, scheme: Scheme) -> Vec<Option<f64>> {
        self.records
            .iter()
            .filter(|r| r.sweep == sweep && r.scheme == scheme)
            .map(|r| r.rate)
            .collect()
    }

    pub fn row(&self, sweep: f64, scheme: Scheme) -> Option<&ResultRow> {
        let name = scheme.to_string();
        self.rows.iter().find(|r| r.sweep == sweep && r.scheme == name)
    }
}

/// Independent stream per `(seed, drop, tag)`.
pub fn drop_rng(seed: u64, drop: usize, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((drop as u64) << 16) | tag);
    rng
}

fn scheme_tag(s: Scheme) -> u64 {
    match s {
        Scheme::Proposed => 1,
        Scheme::WoBf => 2,
        Scheme::WoTheta => 3,
        Scheme::WoFa => 4,
        Scheme::WoLim => 5,
        Scheme::RigidBsRis => 6,
        Scheme::Zf => 7,
        Scheme::Ga => 8,
        Scheme::Partial { .. } => 9,
    }
}

/// Draws the users and small-scale fading of one drop.
pub fn draw_scenario(cfg: &SystemConfig, seed: u64, drop: usize) -> Result<ChannelModel> {
    let mut rng = drop_rng(seed, drop, 0);
    let users = draw_user_positions(cfg, &mut rng);
    let geo = derive_link_geometry(cfg, &users)?;
    let draw = draw_small_scale(cfg, &mut rng);
    Ok(ChannelModel::new(cfg.clone(), geo, draw))
}

fn run_drop(plan: &ExperimentPlan, cfgs: &[(f64, SystemConfig)], drop: usize) -> (Vec<DropRecord>, Vec<TraceRecord>) {
    let mut records = Vec::new();
    let mut traces = Vec::new();
    for (value, cfg) in cfgs {
        let model = draw_scenario(cfg, plan.seed, drop);
        let mut opts = BaselineOptions::new(cfg);
        opts.ga.budget = plan.ga_budget;
        for &scheme in &plan.schemes {
            let start = Instant::now();
            let outcome = model
                .as_ref()
                .map_err(|e| e.to_string())
                .and_then(|m| {
                    let mut rng = drop_rng(plan.seed, drop, scheme_tag(scheme));
                    run_baseline(scheme, m, &opts, &mut rng).map_err(|e| e.to_string())
                });
            let ms = start.elapsed().as_secs_f64() * 1e3;
            match outcome {
                Ok(out) => {
                    if plan.keep_traces {
                        if let Some(trace) = out.trace {
                            traces.push(TraceRecord {
                                sweep: *value,
                                scheme,
                                drop,
                                trace,
                            });
                        }
                    }
                    records.push(DropRecord {
                        sweep: *value,
                        scheme,
                        drop,
                        rate: Some(out.sum_rate),
                        iterations: out.iterations,
                        ms,
                        feasibility: Some(out.sol.feasibility(cfg)),
                        unit_modulus_before_projection: out.unit_modulus_before_projection,
                        flag: out.flag,
                    });
                }
                Err(reason) => records.push(DropRecord {
                    sweep: *value,
                    scheme,
                    drop,
                    rate: None,
                    iterations: 0,
                    ms,
                    feasibility: None,
                    unit_modulus_before_projection: f64::NAN,
                    flag: Some(reason),
                }),
            }
        }
    }
    (records, traces)
}

/// Runs every scheme of the plan on the same drops. Drops are spread over
/// `plan.workers` threads; output order does not depend on scheduling.
pub fn run_experiment(plan: &ExperimentPlan, base: &SystemConfig) -> Result<ExperimentResult> {
    plan.validate()?;
    let mut base = base.clone();
    if let Some(c) = plan.correlation {
        base.correlation = c;
    }
    let cfgs: Vec<(f64, SystemConfig)> = plan
        .sweep
        .iter()
        .map(|&v| plan.kind.apply(&base, v).map(|c| (v, c)))
        .collect::<Result<_>>()?;

    let workers = plan.workers.clamp(1, plan.drops);
    let mut records = Vec::new();
    let mut traces = Vec::new();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let cfgs = &cfgs;
                scope.spawn(move || {
                    let mut recs = Vec::new();
                    let mut trs = Vec::new();
                    for drop in (w..plan.drops).step_by(workers) {
                        let (r, t) = run_drop(plan, cfgs, drop);
                        recs.extend(r);
                        trs.extend(t);
                    }
                    (recs, trs)
                })
            })
            .collect();
        for h in handles {
            let (r, t) = h.join().expect("worker thread panicked");
            records.extend(r);
            traces.extend(t);
        }
    });

    let order = |s: &Scheme| plan.schemes.iter().position(|x| x == s).unwrap_or(usize::MAX);
    records.sort_by(|a, b| {
        a.sweep
            .total_cmp(&b.sweep)
            .then(order(&a.scheme).cmp(&order(&b.scheme)))
            .then(a.drop.cmp(&b.drop))
    });
    traces.sort_by(|a, b| {
        a.sweep
            .total_cmp(&b.sweep)
            .then(order(&a.scheme).cmp(&order(&b.scheme)))
            .then(a.drop.cmp(&b.drop))
    });

    let mut rows = Vec::new();
    for (value, _) in &cfgs {
        for &scheme in &plan.schemes {
            let ok: Vec<&DropRecord> = records
                .iter()
                .filter(|r| r.sweep == *value && r.scheme == scheme && r.rate.is_some())
                .collect();
            let n = ok.len();
            let mean = |f: &dyn Fn(&DropRecord) -> f64| {
                if n == 0 {
                    f64::NAN
                } else {
                    ok.iter().map(|r| f(r)).sum::<f64>() / n as f64
                }
            };
            let mean_rate = mean(&|r| r.rate.unwrap_or(0.0));
            let var = if n > 1 {
                ok.iter().map(|r| (r.rate.unwrap_or(0.0) - mean_rate).powi(2)).sum::<f64>() / (n - 1) as f64
            } else {
                0.0
            };
            rows.push(ResultRow {
                sweep: *value,
                scheme: scheme.to_string(),
                mean_rate,
                std_rate: var.sqrt(),
                drops: n,
                mean_iters: mean(&|r| r.iterations as f64),
                mean_ms: mean(&|r| r.ms),
            });
        }
    }
    Ok(ExperimentResult { rows, records, traces })
}

/// Six significant digits.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return "nan".into();
    }
    let mag = x.abs().log10().floor() as i32;
    if (-4..15).contains(&mag) {
        format!("{:.*}", (5 - mag).max(0) as usize, x)
    } else {
        format!("{x:.5e}")
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Results table as CSV text. Wall times are written only when
/// `timings` is set so that repeated runs compare byte for byte.
pub fn results_csv(result: &ExperimentResult, timings: bool) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in &result.rows {
        let ms = if timings { r.mean_ms } else { 0.0 };
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            format_sig6(r.sweep),
            r.scheme,
            format_sig6(r.mean_rate),
            format_sig6(r.std_rate),
            r.drops,
            format_sig6(r.mean_iters),
            format_sig6(ms),
        ));
    }
    out
}

pub fn trace_csv(trace: &AoTrace, timings: bool) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in &trace.rows {
        let ms = if timings { r.ms } else { 0.0 };
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.iter,
            r.stage.name(),
            format_sig6(r.sum_rate),
            format_sig6(r.penalty),
            format_sig6(r.violation),
            format_sig6(ms),
        ));
    }
    out
}

/// Writes `results.csv` and one `trace_<scheme>[_<sweep>]_drop<d>.csv` per
/// kept trace into `dir`.
pub fn emit_results(result: &ExperimentResult, dir: &Path, timings: bool) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write_file(&dir.join("results.csv"), &results_csv(result, timings))?;
    let single_point = result.traces.iter().all(|t| t.sweep == result.traces[0].sweep);
    for t in &result.traces {
        let name = if single_point {
            format!("trace_{}_drop{}.csv", t.scheme, t.drop)
        } else {
            format!("trace_{}_{}_drop{}.csv", t.scheme, format_sig6(t.sweep), t.drop)
        };
        write_file(&dir.join(name), &trace_csv(&t.trace, timings))?;
    }
    Ok(())
}

/// Parses a results table written by [`results_csv`].
pub fn parse_results(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == RESULTS_HEADER => {}
        other => return Err(Error::Dimension(format!("unexpected results header {other:?}"))),
    }
    let num = |s: &str| -> Result<f64> {
        if s == "nan" {
            Ok(f64::NAN)
        } else {
            s.parse().map_err(|_| Error::Dimension(format!("bad number `{s}`")))
        }
    };
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(Error::Dimension(format!("expected 7 fields in `{line}`")));
            }
            Ok(ResultRow {
                sweep: num(f[0])?,
                scheme: f[1].to_string(),
                mean_rate: num(f[2])?,
                std_rate: num(f[3])?,
                drops: f[4].parse().map_err(|_| Error::Dimension(format!("bad count `{}`", f[4])))?,
                mean_iters: num(f[5])?,
                mean_ms: num(f[6])?,
            })
        })
        .collect()
}
