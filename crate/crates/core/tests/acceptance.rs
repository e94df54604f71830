//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use fas_lim::ao::{solve_beamforming_subproblem, solve_phase_subproblem, SurrogateState};
use fas_lim::baselines::Scheme;
use fas_lim::channel::{draw_small_scale, effective_channel, jakes_correlation, psd_sqrt, ChannelModel, SmallScaleDraw};
use fas_lim::gradients::{grad_all_gains, sylvester_kronecker, sylvester_sqrt_grad};
use fas_lim::harness::{run_experiment, ExperimentKind, ExperimentPlan, ExperimentResult};
use fas_lim::model::{derive_link_geometry, draw_user_positions, init_solution, initial_layout, SolutionState, SystemConfig};
use fas_lim::solver::SolverSettings;
use fas_lim::C64;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20;
const DROPS: usize = 20;
/// Fitness evaluations of the genetic-algorithm baseline in the ordering run.
const GA_BUDGET: usize = 500;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn scenario(cfg: &SystemConfig, seed: u64) -> (ChannelModel, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users = draw_user_positions(cfg, &mut rng);
    let geo = derive_link_geometry(cfg, &users).unwrap();
    let draw = draw_small_scale(cfg, &mut rng);
    (ChannelModel::new(cfg.clone(), geo, draw), rng)
}

fn gains(model: &ChannelModel, sol: &SolutionState) -> Vec<Vec<f64>> {
    let chan = model.assemble_for(sol).unwrap();
    effective_channel(&chan, &sol.theta)
        .iter()
        .map(|h| sol.w.iter().map(|w| h.dot(w).norm_sqr()).collect())
        .collect()
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let step = 1e-7;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for inst in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + inst);
        let n = rng.gen_range(2..=8);
        let k = rng.gen_range(1..=4);
        let cfg = SystemConfig {
            n_antennas: n,
            n_elements: n,
            n_users: k,
            correlation: inst % 5 != 4,
            ..SystemConfig::desk_scale()
        };
        let (model, mut rng) = scenario(&cfg, 2000 + inst);
        let mut sol = initial_layout(&cfg);
        for t in sol.theta.iter_mut() {
            *t = C64::from_polar(1.0, 2.0 * PI * rng.gen::<f64>());
        }
        for v in sol.p.iter_mut().chain(sol.r.iter_mut()) {
            v[0] += (rng.gen::<f64>() - 0.5) * 0.05;
            v[1] += (rng.gen::<f64>() - 0.5) * 0.05;
        }
        let chan = model.assemble_for(&sol).unwrap();
        let h_eff = effective_channel(&chan, &sol.theta);
        sol.w = (0..k)
            .map(|u| {
                let w = DVector::from_fn(n, |_, _| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
                let s = h_eff[u].dot(&w).norm();
                w / C64::new(s, 0.0)
            })
            .collect();
        let analytic = grad_all_gains(&chan, &sol, cfg.lambda_m).unwrap();

        // central differences, all gains per perturbed assembly
        let coords = 2 * (n + n);
        let mut fd = vec![vec![vec![0.0; coords]; k]; k];
        for c in 0..coords {
            let shifted = |delta: f64| {
                let mut s = sol.clone();
                let (pts, idx) = if c < 2 * n { (&mut s.p, c) } else { (&mut s.r, c - 2 * n) };
                pts[idx / 2][idx % 2] += delta;
                gains(&model, &s)
            };
            let (plus, minus) = (shifted(step), shifted(-step));
            for a in 0..k {
                for b in 0..k {
                    fd[a][b][c] = (plus[a][b] - minus[a][b]) / (2.0 * step);
                }
            }
        }
        for a in 0..k {
            for b in 0..k {
                let an = analytic[a][b].flatten();
                let f = &fd[a][b];
                let diff: f64 = an.iter().zip(f).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                let scale: f64 = f.iter().map(|y| y * y).sum::<f64>().sqrt();
                if scale > 0.0 {
                    worst = worst.max(diff / scale);
                    checked += 1;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-4 && secs <= 120.0,
        format!("{checked} gain gradients on 50 instances, worst relative error {worst:.2e} (limit 1e-4), {secs:.1}s (limit 120s)"),
    )
}

fn sylvester_machinery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_res: f64 = 0.0;
    let mut worst_kron: f64 = 0.0;
    let mut ok = true;
    for n in 1..=16 {
        for trial in 0..4 {
            let r = if trial % 2 == 0 {
                let a = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
                &a * a.transpose() + DMatrix::identity(n, n) * 1e-2
            } else {
                let pts: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5]).collect();
                jakes_correlation(&pts, 0.1) + DMatrix::identity(n, n) * 1e-6
            };
            let a = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
            let d_r = &a + a.transpose();
            let factor = psd_sqrt(&r).unwrap();
            let eig = sylvester_sqrt_grad(&factor, &d_r).unwrap();
            let s = &factor.sqrt;
            let residual = (s * &eig.x + &eig.x * s - &d_r).norm() / (1.0 + d_r.norm());
            worst_res = worst_res.max(residual);
            ok &= residual <= 1e-8;
            if n <= 6 {
                let kron = sylvester_kronecker(s, &d_r).unwrap();
                let gap = (&kron.x - &eig.x).norm();
                worst_kron = worst_kron.max(gap);
                ok &= gap <= 1e-10;
            }
        }
    }
    outcome(
        ok,
        format!("worst scaled residual {worst_res:.2e} (limit 1e-8), worst Kronecker gap {worst_kron:.2e} (limit 1e-10)"),
    )
}

fn solver_correctness() -> Outcome {
    // single user, matched-filter capacity
    let cfg = SystemConfig {
        n_users: 1,
        ..SystemConfig::desk_scale()
    };
    let (model, mut rng) = scenario(&cfg, 31);
    let chan = model.assemble_for(&initial_layout(&cfg)).unwrap();
    let mut sol = initial_layout(&cfg);
    let w = DVector::from_fn(cfg.n_antennas, |_, _| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
    sol.w = vec![&w * C64::new(0.3 * cfg.pmax().sqrt() / w.norm(), 0.0)];
    let h = effective_channel(&chan, &sol.theta)[0].clone();
    let capacity = (1.0 + cfg.pmax() * h.norm_squared() / cfg.sigma2()).log2();
    let settings = SolverSettings::default();
    for _ in 0..5 {
        let state = SurrogateState::from_channel(&chan, &sol, cfg.sigma2());
        sol.w = solve_beamforming_subproblem(&cfg, &chan, &sol, &state, &settings).unwrap().w;
    }
    let rate = (1.0 + h.dot(&sol.w[0]).norm_sqr() / cfg.sigma2()).log2();
    let bf_gap = (capacity - rate).abs();

    // scalar phase alignment, line-of-sight only
    let cfg = SystemConfig {
        n_antennas: 1,
        n_elements: 1,
        n_users: 1,
        kappa: 1e12,
        user_center: vec![40.0, 10.0],
        user_radius: 0.0,
        ..SystemConfig::desk_scale()
    };
    let (mut model, _) = scenario(&cfg, 32);
    model.draw = SmallScaleDraw::zeros(&cfg);
    let chan = model.assemble_for(&initial_layout(&cfg)).unwrap();
    let mut sol = init_solution(&cfg, &chan);
    let direct = chan.h_k[0][0].conj();
    let cascade = chan.g_k[0][0].conj() * chan.h_mat[(0, 0)];
    let ideal = direct.norm() + cascade.norm();
    for _ in 0..200 {
        let state = SurrogateState::from_channel(&chan, &sol, cfg.sigma2());
        sol.theta = solve_phase_subproblem(&cfg, &chan, &sol, &state, 10.0, &settings).unwrap().theta;
    }
    sol.project_unit_modulus();
    let phase_gap = (ideal - (direct + sol.theta[0] * cascade).norm()) / ideal;

    outcome(
        bf_gap <= 1e-4 && phase_gap <= 1e-4,
        format!("single-user gap {bf_gap:.2e} bits (limit 1e-4), phase-alignment relative gap {phase_gap:.2e} (limit 1e-4)"),
    )
}

fn plan(kind: ExperimentKind, schemes: Vec<Scheme>) -> ExperimentPlan {
    let mut p = ExperimentPlan::new(kind, DROPS, SEED);
    p.schemes = schemes;
    p.workers = workers();
    p
}

fn monotone_convergence(result: &ExperimentResult, secs: f64) -> Outcome {
    let mut worst_drop: f64 = 0.0;
    let mut latest_plateau = 0;
    let mut slow = Vec::new();
    for t in &result.traces {
        let rates = t.trace.accepted_rates();
        for pair in rates.windows(2) {
            worst_drop = worst_drop.max(pair[0] - pair[1]);
        }
        let outer = &t.trace.outer_rates;
        let plateau = (1..outer.len())
            .find(|&i| (outer[i] - outer[i - 1]).abs() <= 1e-3 * outer[i - 1].abs())
            .unwrap_or(usize::MAX);
        if plateau > 10 {
            slow.push(format!("drop {} at {}", t.drop, if plateau == usize::MAX { "never".into() } else { plateau.to_string() }));
        }
        latest_plateau = latest_plateau.max(plateau);
    }
    let pass = result.traces.len() == DROPS && worst_drop <= 1e-6 && slow.is_empty() && secs <= 300.0;
    outcome(
        pass,
        format!(
            "{} traces, largest decrease {worst_drop:.2e} (limit 1e-6), plateau beyond 10 iterations: {} , {secs:.1}s (limit 300s)",
            result.traces.len(),
            if slow.is_empty() { "none".to_string() } else { slow.join(", ") }
        ),
    )
}

fn feasibility(results: &[&ExperimentResult]) -> Outcome {
    let mut runs = 0;
    let mut failures = Vec::new();
    let (mut power, mut spacing, mut aperture, mut modulus): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for res in results {
        for r in &res.records {
            runs += 1;
            let Some(f) = r.feasibility else {
                failures.push(format!("{} drop {} failed: {:?}", r.scheme, r.drop, r.flag));
                continue;
            };
            power = power.max(f.power_excess);
            spacing = spacing.max(f.fa_spacing.max(f.lm_spacing));
            aperture = aperture.max(f.aperture);
            modulus = modulus.max(r.unit_modulus_before_projection);
        }
    }
    let pass = failures.is_empty() && power <= 1e-8 && spacing <= 1e-8 && aperture <= 1e-8 && modulus <= 1e-3;
    outcome(
        pass,
        format!(
            "{runs} runs: power excess {power:.1e} mW, spacing deficit {spacing:.1e} m², aperture excess {aperture:.1e} m, unit-modulus gap {modulus:.1e}{}",
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    )
}

fn ordering(result: &ExperimentResult) -> Outcome {
    let m = |s: Scheme| result.row(0.0, s).map_or(f64::NAN, |r| r.mean_rate);
    let proposed = m(Scheme::Proposed);
    let partial = m(Scheme::Partial { rho_fa: 0.5, rho_lm: 0.5 });
    let rigid = m(Scheme::RigidBsRis);
    let mut pass = result.rows.iter().all(|r| r.drops == DROPS);
    let mut parts = vec![format!("proposed {proposed:.3}")];
    for s in [
        Scheme::WoBf,
        Scheme::WoTheta,
        Scheme::WoFa,
        Scheme::WoLim,
        Scheme::RigidBsRis,
        Scheme::Zf,
        Scheme::Ga,
    ] {
        let v = m(s);
        pass &= proposed > v;
        parts.push(format!("{s} {v:.3}"));
    }
    pass &= proposed > partial && partial > rigid;
    parts.push(format!("partial {partial:.3}"));
    outcome(pass, format!("{DROPS} paired drops, means: {}", parts.join(", ")))
}

fn power_sweep(result: &ExperimentResult) -> Outcome {
    let powers = [10.0, 20.0, 30.0, 40.0];
    let means: Vec<f64> = powers
        .iter()
        .map(|&p| result.row(p, Scheme::Proposed).map_or(f64::NAN, |r| r.mean_rate))
        .collect();
    let slopes: Vec<f64> = means.windows(2).map(|w| w[1] - w[0]).collect();
    let increasing = slopes.iter().all(|s| *s > 0.0);
    let variation = slopes
        .windows(2)
        .map(|w| (w[1] - w[0]).abs() / w[0].abs())
        .fold(0.0, f64::max);
    outcome(
        increasing && variation <= 0.25,
        format!(
            "means {:?} at 10/20/30/40 dBm, slopes {:?} per 10 dB, largest consecutive slope change {:.1}% (limit 25%)",
            means.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>(),
            slopes.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>(),
            100.0 * variation
        ),
    )
}

fn correlation_effect(on: &ExperimentResult, off: &ExperimentResult) -> Outcome {
    let a = on.row(0.0, Scheme::Proposed).map_or(f64::NAN, |r| r.mean_rate);
    let b = off.row(0.0, Scheme::Proposed).map_or(f64::NAN, |r| r.mean_rate);
    let loss = (b - a) / b;
    outcome(
        (0.0..=0.15).contains(&loss),
        format!("mean rate {a:.3} with correlation, {b:.3} without, loss {:.2}% (band 0% to 15%)", 100.0 * loss),
    )
}

fn scaling(result: &ExperimentResult) -> Outcome {
    let sizes = [4.0, 8.0, 12.0];
    let means: Vec<f64> = sizes
        .iter()
        .map(|&n| result.row(n, Scheme::Proposed).map_or(f64::NAN, |r| r.mean_rate))
        .collect();
    let pass = means.windows(2).all(|w| w[1] >= w[0]);
    outcome(
        pass,
        format!(
            "means {:?} at N=M=4/8/12",
            means.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>()
        ),
    )
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_fas-lim"))
            .args(["--experiment", "convergence", "--drops", "2", "--seed", "7", "--schemes", "proposed,wo_theta", "--workers", "2"])
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        (status.status.code(), read_dir_sorted(&out))
    };
    let (code_a, a) = run("a");
    let (code_b, b) = run("b");
    let identical = a == b;
    outcome(
        code_a == Some(0) && code_b == Some(0) && identical && !a.is_empty(),
        format!(
            "exit codes {code_a:?}/{code_b:?}, {} files, byte-identical: {identical}",
            a.len()
        ),
    )
}

fn main() {
    let mut lines: Vec<(usize, &str, Outcome)> = Vec::new();
    lines.push((1, "gradient correctness", gradient_correctness()));
    lines.push((2, "Sylvester machinery", sylvester_machinery()));
    lines.push((3, "solver correctness", solver_correctness()));

    let cfg = SystemConfig::desk_scale();
    let start = Instant::now();
    let convergence = run_experiment(&plan(ExperimentKind::Convergence, vec![Scheme::Proposed]), &cfg).unwrap();
    let conv_secs = start.elapsed().as_secs_f64();
    lines.push((4, "monotone convergence", monotone_convergence(&convergence, conv_secs)));

    let mut order_plan = plan(
        ExperimentKind::Convergence,
        vec![
            Scheme::Proposed,
            Scheme::WoBf,
            Scheme::WoTheta,
            Scheme::WoFa,
            Scheme::WoLim,
            Scheme::RigidBsRis,
            Scheme::Zf,
            Scheme::Ga,
            Scheme::Partial { rho_fa: 0.5, rho_lm: 0.5 },
        ],
    );
    order_plan.ga_budget = GA_BUDGET;
    order_plan.keep_traces = false;
    let order = run_experiment(&order_plan, &cfg).unwrap();

    let mut power_plan = plan(ExperimentKind::SweepPower, vec![Scheme::Proposed]);
    power_plan.sweep = vec![10.0, 20.0, 30.0, 40.0];
    let power = run_experiment(&power_plan, &cfg).unwrap();

    let mut on_plan = plan(ExperimentKind::Convergence, vec![Scheme::Proposed]);
    on_plan.correlation = Some(true);
    on_plan.keep_traces = false;
    let mut off_plan = on_plan.clone();
    off_plan.correlation = Some(false);
    let corr_on = run_experiment(&on_plan, &cfg).unwrap();
    let corr_off = run_experiment(&off_plan, &cfg).unwrap();

    let mut nm_plan = plan(ExperimentKind::SweepNm, vec![Scheme::Proposed]);
    nm_plan.sweep = vec![4.0, 8.0, 12.0];
    let nm = run_experiment(&nm_plan, &cfg).unwrap();

    lines.push((5, "feasibility at termination", feasibility(&[&convergence, &order, &power, &corr_on, &corr_off, &nm])));
    lines.push((6, "ordering", ordering(&order)));
    lines.push((7, "power sweep", power_sweep(&power)));
    lines.push((8, "correlation effect", correlation_effect(&corr_on, &corr_off)));
    lines.push((9, "scaling trend", scaling(&nm)));
    lines.push((10, "determinism", determinism()));

    let mut failed = 0;
    for (id, name, o) in &lines {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!("criterion {id:>2} {tag} {name}: {}", o.detail);
    }
    println!("{} of {} criteria passed", lines.len() - failed, lines.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
