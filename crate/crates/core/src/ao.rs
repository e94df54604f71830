//! Alternating optimization over beamformers, phase-shifts and positions.
//!
//! Every subproblem is built in noise-normalized units: beamformers are
//! divided by √P_max, effective channels multiplied by √(P_max/σ²), so
//! signal and interference terms are SINR-scaled and the power budget is 1.

use std::f64::consts::LN_2;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::channel::{effective_channel, phase_coupling, rates_from_effective, ChannelModel, ChannelRealization};
use crate::error::{Error, Result};
use crate::gradients::grad_all_gains;
use crate::model::config::SystemConfig;
use crate::model::layout::Point2;
use crate::model::solution::SolutionState;
use crate::solver::{solve_concave_program, AffineConstraint, ConcaveProgram, QuadConstraint, SolverSettings, SolverStatus};
use crate::C64;

/// Relative margin used to build strictly feasible starting points.
const INTERIOR: f64 = 1e-6;

/// Auxiliary anchors of the bilinear SCA rows, in noise-normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateState {
    pub gamma_t: Vec<f64>,
    pub a_t: Vec<f64>,
    pub b_t: Vec<f64>,
}

impl SurrogateState {
    /// True signal, interference-plus-noise and SINR at the current state.
    pub fn from_channel(chan: &ChannelRealization, sol: &SolutionState, sigma2: f64) -> Self {
        let h_eff = effective_channel(chan, &sol.theta);
        let k = h_eff.len();
        let mut out = SurrogateState {
            gamma_t: Vec::with_capacity(k),
            a_t: Vec::with_capacity(k),
            b_t: Vec::with_capacity(k),
        };
        for (u, h) in h_eff.iter().enumerate() {
            let mut signal = 0.0;
            let mut interference = 0.0;
            for (j, w) in sol.w.iter().enumerate() {
                let g = h.dot(w).norm_sqr() / sigma2;
                if j == u {
                    signal = g;
                } else {
                    interference += g;
                }
            }
            let b = interference + 1.0;
            out.a_t.push(signal);
            out.b_t.push(b);
            out.gamma_t.push(signal / b);
        }
        out
    }
}

/// Variable indices of `(a_k, b_k, γ_k)`.
#[derive(Debug, Clone, Copy)]
pub struct AuxIndex {
    pub a: usize,
    pub b: usize,
    pub gamma: usize,
}

/// First-order row for `γ_k ≤ a_k / b_k`:
/// `b_t·γ_k + γ_t·b_k − a_k ≤ γ_t·b_t`.
pub fn build_bilinear_sca_constraint(state: &SurrogateState, k: usize, idx: AuxIndex) -> AffineConstraint {
    let (g, b) = (state.gamma_t[k], state.b_t[k]);
    AffineConstraint::new(vec![(idx.gamma, b), (idx.b, g), (idx.a, -1.0)], g * b)
}

/// Largest γ allowed by the bilinear row at given `a`, `b`, nudged inside.
fn interior_gamma(state: &SurrogateState, k: usize, a: f64, b: f64) -> f64 {
    let (gt, bt) = (state.gamma_t[k], state.b_t[k]);
    let gmax = gt + (a - gt * b) / bt;
    gmax - INTERIOR * gmax.abs().max(1.0)
}

fn below(v: f64) -> f64 {
    v - INTERIOR * v.abs().max(1.0)
}

/// Rows `r1, r2` with `Re(h·x) = r1ᵀx̃`, `Im(h·x) = r2ᵀx̃` for the stacked
/// real vector `x̃ = (Re x, Im x)`.
fn realify_row(h: &DVector<C64>) -> (DVector<f64>, DVector<f64>) {
    let n = h.len();
    let r1 = DVector::from_fn(2 * n, |i, _| if i < n { h[i].re } else { -h[i - n].im });
    let r2 = DVector::from_fn(2 * n, |i, _| if i < n { h[i].im } else { h[i - n].re });
    (r1, r2)
}

fn stack(z: &DVector<C64>) -> DVector<f64> {
    let n = z.len();
    DVector::from_fn(2 * n, |i, _| if i < n { z[i].re } else { z[i - n].im })
}

fn unstack(x: &[f64]) -> DVector<C64> {
    let n = x.len() / 2;
    DVector::from_fn(n, |i, _| C64::new(x[i], x[i + n]))
}

fn gram(r1: &DVector<f64>, r2: &DVector<f64>) -> DMatrix<f64> {
    r1 * r1.transpose() + r2 * r2.transpose()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemOutcome {
    pub objective: f64,
    pub status: SolverStatus,
    pub newton_iters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingStep {
    pub w: Vec<DVector<C64>>,
    pub outcome: SubproblemOutcome,
}

pub fn build_beamforming_program(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    sol: &SolutionState,
    state: &SurrogateState,
) -> ConcaveProgram {
    let (n, k) = (chan.n_antennas(), chan.n_users());
    let scale = (cfg.pmax() / cfg.sigma2()).sqrt();
    let h_hat: Vec<DVector<C64>> = effective_channel(chan, &sol.theta)
        .into_iter()
        .map(|h| h * C64::new(scale, 0.0))
        .collect();
    let w_t: Vec<DVector<f64>> = sol.w.iter().map(|w| stack(&(w / C64::new(cfg.pmax().sqrt(), 0.0)))).collect();
    let nw = 2 * n * k;
    let aux = |u: usize| AuxIndex {
        a: nw + u,
        b: nw + k + u,
        gamma: nw + 2 * k + u,
    };
    let mut prog = ConcaveProgram::new(nw + 3 * k);
    let rows: Vec<_> = h_hat.iter().map(realify_row).collect();

    // strictly interior beamformers
    let power_t: f64 = w_t.iter().map(|w| w.norm_squared()).sum();
    let shrink = if power_t > 1.0 - INTERIOR {
        ((1.0 - INTERIOR) / power_t).sqrt()
    } else {
        1.0
    };
    let w0: Vec<DVector<f64>> = w_t.iter().map(|w| w * shrink).collect();

    prog.quad.push(QuadConstraint {
        vars: (0..nw).collect(),
        q: DMatrix::identity(nw, nw),
        linear: vec![],
        rhs: 1.0,
    });

    for u in 0..k {
        let idx = aux(u);
        let (r1, r2) = &rows[u];
        prog.log_terms.push((1.0 / LN_2, idx.gamma));

        // b_u ≥ Σ_{j≠u} |ĥ_u ŵ_j|² + 1
        let q_block = gram(r1, r2);
        let others: Vec<usize> = (0..k).filter(|&j| j != u).collect();
        let mut interference0 = 0.0;
        if !others.is_empty() {
            let dim = 2 * n * others.len();
            let mut q = DMatrix::zeros(dim, dim);
            let mut vars = Vec::with_capacity(dim);
            for (slot, &j) in others.iter().enumerate() {
                q.view_mut((slot * 2 * n, slot * 2 * n), (2 * n, 2 * n)).copy_from(&q_block);
                vars.extend(j * 2 * n..(j + 1) * 2 * n);
                interference0 += w0[j].dot(&(&q_block * &w0[j]));
            }
            prog.quad.push(QuadConstraint {
                vars,
                q,
                linear: vec![(idx.b, -1.0)],
                rhs: -1.0,
            });
        }

        // a_u ≤ f_t + ∇f_tᵀ(ŵ_u − ŵ_t)
        let (s_re, s_im) = (r1.dot(&w_t[u]), r2.dot(&w_t[u]));
        let f_t = s_re * s_re + s_im * s_im;
        let grad = (r1 * s_re + r2 * s_im) * 2.0;
        let mut coeffs: Vec<(usize, f64)> = grad.iter().enumerate().map(|(i, g)| (u * 2 * n + i, -g)).collect();
        coeffs.push((idx.a, 1.0));
        prog.affine.push(AffineConstraint::new(coeffs, f_t - grad.dot(&w_t[u])));
        let lin0 = f_t + grad.dot(&(&w0[u] - &w_t[u]));

        prog.affine.push(build_bilinear_sca_constraint(state, u, idx));

        let cap = 2.0 * (h_hat[u].norm_squared() + 1.0);
        prog.lower[idx.b] = Some(1.0);
        prog.upper[idx.b] = Some(cap);

        let a0 = below(lin0);
        let b0 = ((interference0 + 1.0) * (1.0 + INTERIOR)).min(below(cap));
        prog.x0[idx.a] = a0;
        prog.x0[idx.b] = b0;
        prog.x0[idx.gamma] = interior_gamma(state, u, a0, b0);
    }
    for (u, w) in w0.iter().enumerate() {
        prog.x0.rows_mut(u * 2 * n, 2 * n).copy_from(w);
    }
    prog
}

fn outcome(res: &crate::solver::SolverResult) -> SubproblemOutcome {
    SubproblemOutcome {
        objective: res.objective,
        status: res.status,
        newton_iters: res.newton_iters,
    }
}

fn stage_error(stage: &'static str, e: Error) -> Error {
    match e {
        Error::Subproblem { .. } => e,
        other => Error::Subproblem {
            stage,
            reason: other.to_string(),
        },
    }
}

pub fn solve_beamforming_subproblem(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    sol: &SolutionState,
    state: &SurrogateState,
    settings: &SolverSettings,
) -> Result<BeamformingStep> {
    let prog = build_beamforming_program(cfg, chan, sol, state);
    let res = solve_concave_program(&prog, settings).map_err(|e| stage_error("beamforming", e))?;
    let (n, k) = (chan.n_antennas(), chan.n_users());
    let amp = C64::new(cfg.pmax().sqrt(), 0.0);
    let w = (0..k)
        .map(|u| unstack(&res.x_star.as_slice()[u * 2 * n..(u + 1) * 2 * n]) * amp)
        .collect();
    Ok(BeamformingStep { w, outcome: outcome(&res) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseStep {
    pub theta: DVector<C64>,
    pub c: Vec<f64>,
    pub outcome: SubproblemOutcome,
}

pub fn build_phase_program(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    sol: &SolutionState,
    state: &SurrogateState,
    xi: f64,
) -> ConcaveProgram {
    let (m, k) = (chan.n_elements(), chan.n_users());
    let sigma = cfg.sigma2().sqrt();
    let nt = 2 * m;
    let aux = |u: usize| AuxIndex {
        a: nt + u,
        b: nt + k + u,
        gamma: nt + 2 * k + u,
    };
    let c_at = |i: usize| nt + 3 * k + i;
    let mut prog = ConcaveProgram::new(nt + 3 * k + m);
    let theta_t = &sol.theta;
    let cap_c: Vec<f64> = theta_t
        .iter()
        .map(|t| 3f64.max(2.0 * (1.0 - t.norm_sqr()).abs() + 1.0))
        .collect();

    // f̃_kj(θ) = |μ|² + Σ coef·(θ̃ − θ̃_t), coef = 2·(Re q, −Im q), q = conj(μ)·v
    let surrogate = |u: usize, j: usize| -> (f64, DVector<f64>, f64) {
        let w = &sol.w[j] / C64::new(sigma, 0.0);
        let s = chan.h_k[u].map(|z| z.conj()).dot(&w);
        let v = phase_coupling(chan, u) * &w;
        let mu = s + theta_t.dot(&v);
        let coef = DVector::from_fn(nt, |i, _| {
            if i < m {
                2.0 * (mu.conj() * v[i]).re
            } else {
                -2.0 * (mu.conj() * v[i - m]).im
            }
        });
        // bound of |Σ coef·δ| over |θ_m| ≤ √(1 + cap_c)
        let swing: f64 = (0..m)
            .map(|i| 2.0 * (mu.norm() * v[i].norm()) * ((1.0 + cap_c[i]).sqrt() + theta_t[i].norm()))
            .sum();
        (mu.norm_sqr(), coef, swing)
    };
    let theta_vec = stack(theta_t);

    for u in 0..k {
        let idx = aux(u);
        prog.log_terms.push((1.0 / LN_2, idx.gamma));
        let (f_uu, coef_uu, _) = surrogate(u, u);
        // a_u − coefᵀθ̃ ≤ f − coefᵀθ̃_t
        let mut coeffs: Vec<(usize, f64)> = coef_uu.iter().enumerate().map(|(i, c)| (i, -c)).collect();
        coeffs.push((idx.a, 1.0));
        prog.affine.push(AffineConstraint::new(coeffs, f_uu - coef_uu.dot(&theta_vec)));

        let mut interf_coef = DVector::zeros(nt);
        let mut interf_t = 0.0;
        let mut swing = 0.0;
        for j in (0..k).filter(|&j| j != u) {
            let (f, c, s) = surrogate(u, j);
            interf_coef += c;
            interf_t += f;
            swing += s;
        }
        // Σ coefᵀθ̃ − b_u ≤ −1 − Σf + Σ coefᵀθ̃_t
        let mut coeffs: Vec<(usize, f64)> = interf_coef.iter().enumerate().map(|(i, c)| (i, *c)).collect();
        coeffs.push((idx.b, -1.0));
        prog.affine.push(AffineConstraint::new(coeffs, -1.0 - interf_t + interf_coef.dot(&theta_vec)));

        prog.affine.push(build_bilinear_sca_constraint(state, u, idx));

        let cap_b = 2.0 * (interf_t + swing + 1.0);
        prog.lower[idx.b] = Some(1.0);
        prog.upper[idx.b] = Some(cap_b);
        let a0 = below(f_uu);
        let b0 = ((interf_t + 1.0) * (1.0 + INTERIOR)).min(below(cap_b));
        prog.x0[idx.a] = a0;
        prog.x0[idx.b] = b0;
        prog.x0[idx.gamma] = interior_gamma(state, u, a0, b0);
    }

    for i in 0..m {
        let t = theta_t[i];
        let ci = c_at(i);
        // |θ_i|² ≤ 1 + c_i
        prog.quad.push(QuadConstraint {
            vars: vec![i, i + m],
            q: DMatrix::identity(2, 2),
            linear: vec![(ci, -1.0)],
            rhs: 1.0,
        });
        // 2·Re(conj θ_t θ) − |θ_t|² ≥ 1 − c_i
        prog.affine.push(AffineConstraint::new(
            vec![(i, -2.0 * t.re), (i + m, -2.0 * t.im), (ci, -1.0)],
            -1.0 - t.norm_sqr(),
        ));
        prog.lower[ci] = Some(0.0);
        prog.upper[ci] = Some(cap_c[i]);
        prog.linear_objective[ci] = -xi;
        prog.x0[ci] = (1.0 - t.norm_sqr()).abs() + INTERIOR;
    }
    prog.x0.rows_mut(0, nt).copy_from(&theta_vec);
    prog
}

pub fn solve_phase_subproblem(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    sol: &SolutionState,
    state: &SurrogateState,
    xi: f64,
    settings: &SolverSettings,
) -> Result<PhaseStep> {
    let prog = build_phase_program(cfg, chan, sol, state, xi);
    let res = solve_concave_program(&prog, settings).map_err(|e| stage_error("phase", e))?;
    let (m, k) = (chan.n_elements(), chan.n_users());
    let theta = unstack(&res.x_star.as_slice()[..2 * m]);
    let c = res.x_star.as_slice()[2 * m + 3 * k..].to_vec();
    Ok(PhaseStep {
        theta,
        c,
        outcome: outcome(&res),
    })
}

/// Which antennas and elements may move.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovableSet {
    pub antennas: Vec<bool>,
    pub elements: Vec<bool>,
}

impl MovableSet {
    pub fn all(n: usize, m: usize) -> Self {
        MovableSet {
            antennas: vec![true; n],
            elements: vec![true; m],
        }
    }

    /// The first ⌈ρN⌉ antennas and ⌈ρM⌉ elements.
    pub fn leading(n: usize, m: usize, rho_fa: f64, rho_lm: f64) -> Self {
        let count = |len: usize, rho: f64| ((rho * len as f64) - 1e-12).ceil().clamp(0.0, len as f64) as usize;
        let (cn, cm) = (count(n, rho_fa), count(m, rho_lm));
        MovableSet {
            antennas: (0..n).map(|i| i < cn).collect(),
            elements: (0..m).map(|i| i < cm).collect(),
        }
    }

    pub fn any(&self) -> bool {
        self.antennas.iter().chain(self.elements.iter()).any(|&b| b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionStep {
    pub p: Vec<Point2>,
    pub r: Vec<Point2>,
    pub sum_rate: f64,
    pub accepted: bool,
    /// Trust radius to use next time.
    pub trust_radius: f64,
    pub halvings: usize,
    pub outcome: Option<SubproblemOutcome>,
}

/// Position program in displacement variables `δ = (x − x_t)/λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionProgram {
    pub prog: ConcaveProgram,
    /// `(is_antenna, index, axis)` per displacement variable.
    pub coords: Vec<(bool, usize, usize)>,
    /// Largest gain-gradient coefficient magnitude.
    pub max_gradient: f64,
}

pub fn build_position_program(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    sol: &SolutionState,
    state: &SurrogateState,
    movable: &MovableSet,
    trust_radius: f64,
) -> Result<PositionProgram> {
    let lambda = cfg.lambda_m;
    let sigma2 = cfg.sigma2();
    let k = chan.n_users();
    let grads = grad_all_gains(chan, sol, lambda)?;
    let h_eff = effective_channel(chan, &sol.theta);
    let gains: Vec<Vec<f64>> = h_eff
        .iter()
        .map(|h| sol.w.iter().map(|w| h.dot(w).norm_sqr() / sigma2).collect())
        .collect();

    // (is_antenna, index, axis) per displacement variable
    let mut coords = Vec::new();
    for (i, &mv) in movable.antennas.iter().enumerate() {
        if mv {
            coords.push((true, i, 0));
            coords.push((true, i, 1));
        }
    }
    for (i, &mv) in movable.elements.iter().enumerate() {
        if mv {
            coords.push((false, i, 0));
            coords.push((false, i, 1));
        }
    }
    let nd = coords.len();
    let var_of = |antenna: bool, i: usize, axis: usize| coords.iter().position(|&c| c == (antenna, i, axis));
    let aux = |u: usize| AuxIndex {
        a: nd + u,
        b: nd + k + u,
        gamma: nd + 2 * k + u,
    };
    let mut prog = ConcaveProgram::new(nd + 3 * k);

    // aperture ∩ trust region
    for (v, &(antenna, i, axis)) in coords.iter().enumerate() {
        let (pos, half) = if antenna {
            (sol.p[i][axis], cfg.aperture_fa[axis] / 2.0)
        } else {
            (sol.r[i][axis], cfg.aperture_lm[axis] / 2.0)
        };
        prog.lower[v] = Some((-half - pos).max(-trust_radius) / lambda);
        prog.upper[v] = Some((half - pos).min(trust_radius) / lambda);
    }

    // linearized spacing: ‖Δ_t‖² + 2Δ_tᵀ(d_i − d_j) ≥ d_th
    let mut spacing = |pts: &[Point2], antenna: bool, dth: f64| {
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                let delta = [pts[i][0] - pts[j][0], pts[i][1] - pts[j][1]];
                let mut coeffs = Vec::new();
                for axis in 0..2 {
                    if let Some(v) = var_of(antenna, i, axis) {
                        coeffs.push((v, -2.0 * lambda * delta[axis]));
                    }
                    if let Some(v) = var_of(antenna, j, axis) {
                        coeffs.push((v, 2.0 * lambda * delta[axis]));
                    }
                }
                if coeffs.is_empty() {
                    continue;
                }
                let d2 = delta[0] * delta[0] + delta[1] * delta[1];
                prog.affine.push(AffineConstraint::new(coeffs, d2 - dth));
            }
        }
    };
    spacing(&sol.p, true, cfg.dth_fa);
    spacing(&sol.r, false, cfg.dth_lm);

    let grad_coeffs = |u: usize, j: usize| -> Vec<f64> {
        coords
            .iter()
            .map(|&(antenna, i, axis)| {
                let g = &grads[u][j];
                let d = if antenna { g.d_p[i][axis] } else { g.d_r[i][axis] };
                d * lambda / sigma2
            })
            .collect()
    };
    let max_disp = trust_radius / lambda;
    let mut max_gradient = 0.0f64;

    for u in 0..k {
        let idx = aux(u);
        prog.log_terms.push((1.0 / LN_2, idx.gamma));
        let c_uu = grad_coeffs(u, u);
        max_gradient = c_uu.iter().fold(max_gradient, |m, c| m.max(c.abs()));
        let mut coeffs: Vec<(usize, f64)> = c_uu.iter().enumerate().map(|(v, c)| (v, -c)).collect();
        coeffs.push((idx.a, 1.0));
        prog.affine.push(AffineConstraint::new(coeffs, gains[u][u]));

        let mut interf = vec![0.0; nd];
        let mut interf_t = 0.0;
        for j in (0..k).filter(|&j| j != u) {
            for (acc, c) in interf.iter_mut().zip(grad_coeffs(u, j)) {
                max_gradient = max_gradient.max(c.abs());
                *acc += c;
            }
            interf_t += gains[u][j];
        }
        let swing: f64 = interf.iter().map(|c| c.abs() * max_disp).sum();
        let mut coeffs: Vec<(usize, f64)> = interf.iter().enumerate().map(|(v, c)| (v, *c)).collect();
        coeffs.push((idx.b, -1.0));
        prog.affine.push(AffineConstraint::new(coeffs, -1.0 - interf_t));

        prog.affine.push(build_bilinear_sca_constraint(state, u, idx));

        let cap_b = 2.0 * (interf_t + swing + 1.0);
        prog.lower[idx.b] = Some(1.0);
        prog.upper[idx.b] = Some(cap_b);
        let a0 = below(gains[u][u]);
        let b0 = ((interf_t + 1.0) * (1.0 + INTERIOR)).min(below(cap_b));
        prog.x0[idx.a] = a0;
        prog.x0[idx.b] = b0;
        prog.x0[idx.gamma] = interior_gamma(state, u, a0, b0);
    }
    Ok(PositionProgram {
        prog,
        coords,
        max_gradient,
    })
}

fn sum_rate_at(chan: &ChannelRealization, theta: &DVector<C64>, w: &[DVector<C64>], sigma2: f64) -> f64 {
    rates_from_effective(&effective_channel(chan, theta), w, sigma2).sum_rate
}

/// Solves the position subproblem inside a trust region and accepts the
/// move only if the true sum-rate does not drop; otherwise halves the
/// region and retries.
#[allow(clippy::too_many_arguments)]
pub fn solve_position_subproblem(
    model: &ChannelModel,
    chan: &ChannelRealization,
    sol: &SolutionState,
    state: &SurrogateState,
    movable: &MovableSet,
    trust_radius: f64,
    ao: &AoSettings,
) -> Result<(PositionStep, Option<ChannelRealization>)> {
    let cfg = &model.cfg;
    let sigma2 = cfg.sigma2();
    let base = sum_rate_at(chan, &sol.theta, &sol.w, sigma2);
    let settings = SolverSettings {
        feas_margin: 0.0,
        ..ao.solver
    };
    let mut radius = trust_radius;
    let mut last_outcome = None;
    for halvings in 0..=ao.trust_halvings {
        let PositionProgram {
            prog,
            coords,
            max_gradient,
        } = build_position_program(cfg, chan, sol, state, movable, radius)?;
        if max_gradient == 0.0 {
            // flat surrogate: the barrier would only drift to the box centre
            return Ok((
                PositionStep {
                    p: sol.p.clone(),
                    r: sol.r.clone(),
                    sum_rate: base,
                    accepted: true,
                    trust_radius: radius,
                    halvings,
                    outcome: None,
                },
                None,
            ));
        }
        let res = solve_concave_program(&prog, &settings).map_err(|e| stage_error("position", e))?;
        last_outcome = Some(outcome(&res));
        let mut p = sol.p.clone();
        let mut r = sol.r.clone();
        for (v, &(antenna, i, axis)) in coords.iter().enumerate() {
            let d = res.x_star[v] * cfg.lambda_m;
            if antenna {
                p[i][axis] += d;
            } else {
                r[i][axis] += d;
            }
        }
        if let Ok(candidate) = model.assemble(&p, &r) {
            let rate = sum_rate_at(&candidate, &sol.theta, &sol.w, sigma2);
            if rate >= base - 1e-9 {
                return Ok((
                    PositionStep {
                        p,
                        r,
                        sum_rate: rate,
                        accepted: true,
                        trust_radius: (radius * 1.5).min(ao.trust_max),
                        halvings,
                        outcome: last_outcome,
                    },
                    Some(candidate),
                ));
            }
        }
        radius /= 2.0;
    }
    Ok((
        PositionStep {
            p: sol.p.clone(),
            r: sol.r.clone(),
            sum_rate: base,
            accepted: false,
            trust_radius: radius.max(ao.trust_init / 64.0),
            halvings: ao.trust_halvings,
            outcome: last_outcome,
        },
        None,
    ))
}

/// Which blocks the loop updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockMask {
    pub beamforming: bool,
    pub phase: bool,
    pub positions: Option<MovableSet>,
}

impl BlockMask {
    pub fn all(n: usize, m: usize) -> Self {
        BlockMask {
            beamforming: true,
            phase: true,
            positions: Some(MovableSet::all(n, m)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AoSettings {
    pub i_outer: usize,
    pub rel_tol: f64,
    pub xi: f64,
    pub trust_init: f64,
    pub trust_max: f64,
    pub trust_halvings: usize,
    /// Step fractions 1, 1/2, …, 2^−(n−1) tried for the w and θ updates.
    pub backtrack_steps: usize,
    pub solver: SolverSettings,
    pub blocks: BlockMask,
}

impl AoSettings {
    pub fn new(cfg: &SystemConfig) -> Self {
        AoSettings {
            i_outer: cfg.i_outer,
            rel_tol: 1e-4,
            xi: cfg.xi,
            trust_init: cfg.lambda_m / 8.0,
            trust_max: cfg.lambda_m / 4.0,
            trust_halvings: 6,
            backtrack_steps: 7,
            solver: SolverSettings::default(),
            blocks: BlockMask::all(cfg.n_antennas, cfg.n_elements),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Init,
    Beamforming,
    Phase,
    Position,
    Final,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Init => "init",
            Stage::Beamforming => "beamforming",
            Stage::Phase => "phase",
            Stage::Position => "position",
            Stage::Final => "final",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub stage: Stage,
    /// True sum-rate after the stage, bits/s/Hz.
    pub sum_rate: f64,
    pub objective: f64,
    /// Σ c_m of the last phase solve.
    pub penalty: f64,
    pub unit_modulus: f64,
    /// Largest violation of power (relative), spacing or aperture.
    pub violation: f64,
    pub ms: f64,
    pub accepted: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AoTrace {
    pub rows: Vec<TraceRow>,
    /// Sum-rate at the start and after each outer iteration.
    pub outer_rates: Vec<f64>,
}

impl AoTrace {
    /// Sum-rates of the accepted states in order.
    pub fn accepted_rates(&self) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.stage != Stage::Final)
            .map(|r| r.sum_rate)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AoOutcome {
    pub sol: SolutionState,
    pub trace: AoTrace,
    /// Sum-rate with θ projected to unit modulus.
    pub sum_rate: f64,
    /// max_m ||θ_m| − 1| before the final projection.
    pub unit_modulus_before_projection: f64,
    pub outer_iterations: usize,
    pub failure: Option<String>,
}

fn violation(cfg: &SystemConfig, sol: &SolutionState) -> f64 {
    let f = sol.feasibility(cfg);
    (f.power_excess / cfg.pmax()).max(f.fa_spacing).max(f.lm_spacing).max(f.aperture)
}

/// Backtracks `old + τ(new − old)` over τ = 1, 1/2, … and returns the first
/// candidate whose true rate is at least `base`.
fn safeguarded<T, F>(old: &T, new: &T, steps: usize, base: f64, mix: impl Fn(&T, &T, f64) -> T, rate: F) -> Option<(T, f64)>
where
    F: Fn(&T) -> f64,
{
    let mut tau = 1.0;
    for _ in 0..steps {
        let cand = mix(old, new, tau);
        let r = rate(&cand);
        if r >= base {
            return Some((cand, r));
        }
        tau /= 2.0;
    }
    None
}

pub fn alternating_optimize(model: &ChannelModel, sol0: SolutionState, ao: &AoSettings) -> Result<AoOutcome> {
    let cfg = &model.cfg;
    let sigma2 = cfg.sigma2();
    let mut chan = model.assemble_for(&sol0)?;
    let mut sol = sol0;
    let mut trace = AoTrace::default();
    let start = Instant::now();
    let mut rate = sum_rate_at(&chan, &sol.theta, &sol.w, sigma2);
    let mut penalty = 0.0;
    let row = |iter: usize, stage: Stage, sol: &SolutionState, rate: f64, objective: f64, penalty: f64, accepted: bool, note: Option<String>| TraceRow {
        iter,
        stage,
        sum_rate: rate,
        objective,
        penalty,
        unit_modulus: sol.unit_modulus_violation(),
        violation: violation(cfg, sol),
        ms: start.elapsed().as_secs_f64() * 1e3,
        accepted,
        note,
    };
    trace.rows.push(row(0, Stage::Init, &sol, rate, rate, 0.0, true, None));
    trace.outer_rates.push(rate);

    let mut trust = ao.trust_init;
    let mut failure = None;
    let mut iterations = 0;
    let lim = chan.parts.lim_enabled;

    'outer: for it in 1..=ao.i_outer {
        iterations = it;
        if ao.blocks.beamforming {
            let state = SurrogateState::from_channel(&chan, &sol, sigma2);
            match solve_beamforming_subproblem(cfg, &chan, &sol, &state, &ao.solver) {
                Ok(step) => {
                    let picked = safeguarded(
                        &sol.w,
                        &step.w,
                        ao.backtrack_steps,
                        rate,
                        |a, b, t| a.iter().zip(b).map(|(x, y)| x + (y - x) * C64::new(t, 0.0)).collect::<Vec<_>>(),
                        |w| sum_rate_at(&chan, &sol.theta, w, sigma2),
                    );
                    let accepted = picked.is_some();
                    if let Some((w, r)) = picked {
                        sol.w = w;
                        rate = r;
                    }
                    trace
                        .rows
                        .push(row(it, Stage::Beamforming, &sol, rate, step.outcome.objective, penalty, accepted, status_note(step.outcome.status)));
                }
                Err(e) => {
                    failure = Some(e.to_string());
                    break 'outer;
                }
            }
        }
        if ao.blocks.phase && lim {
            let state = SurrogateState::from_channel(&chan, &sol, sigma2);
            match solve_phase_subproblem(cfg, &chan, &sol, &state, ao.xi, &ao.solver) {
                Ok(step) => {
                    penalty = step.c.iter().sum();
                    let picked = safeguarded(
                        &sol.theta,
                        &step.theta,
                        ao.backtrack_steps,
                        rate,
                        |a, b, t| a + (b - a) * C64::new(t, 0.0),
                        |th| sum_rate_at(&chan, th, &sol.w, sigma2),
                    );
                    let accepted = picked.is_some();
                    if let Some((th, r)) = picked {
                        sol.theta = th;
                        rate = r;
                    }
                    trace
                        .rows
                        .push(row(it, Stage::Phase, &sol, rate, step.outcome.objective, penalty, accepted, status_note(step.outcome.status)));
                }
                Err(e) => {
                    failure = Some(e.to_string());
                    break 'outer;
                }
            }
        }
        if let Some(movable) = ao.blocks.positions.as_ref().filter(|m| m.any()) {
            let mut movable = movable.clone();
            if !lim {
                movable.elements.iter_mut().for_each(|e| *e = false);
            }
            if movable.any() {
                let state = SurrogateState::from_channel(&chan, &sol, sigma2);
                match solve_position_subproblem(model, &chan, &sol, &state, &movable, trust, ao) {
                    Ok((step, candidate)) => {
                        trust = step.trust_radius;
                        let objective = step.outcome.as_ref().map_or(f64::NAN, |o| o.objective);
                        if let Some(c) = candidate {
                            sol.p = step.p;
                            sol.r = step.r;
                            chan = c;
                            rate = step.sum_rate;
                        }
                        let note = (!step.accepted).then(|| "trust region exhausted".to_string());
                        trace
                            .rows
                            .push(row(it, Stage::Position, &sol, rate, objective, penalty, step.accepted, note));
                    }
                    Err(e @ Error::SingularDirection { .. }) | Err(e @ Error::NearSingular { .. }) => {
                        trace
                            .rows
                            .push(row(it, Stage::Position, &sol, rate, f64::NAN, penalty, false, Some(e.to_string())));
                    }
                    Err(e) => {
                        failure = Some(e.to_string());
                        break 'outer;
                    }
                }
            }
        }
        trace.outer_rates.push(rate);
        let n = trace.outer_rates.len();
        if n >= 3 {
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-12);
            let r = &trace.outer_rates;
            if rel(r[n - 1], r[n - 2]) <= ao.rel_tol && rel(r[n - 2], r[n - 3]) <= ao.rel_tol {
                break;
            }
        }
    }

    let unit_modulus_before_projection = sol.unit_modulus_violation();
    sol.project_unit_modulus();
    let final_rate = sum_rate_at(&chan, &sol.theta, &sol.w, sigma2);
    trace
        .rows
        .push(row(iterations, Stage::Final, &sol, final_rate, final_rate, penalty, true, None));
    Ok(AoOutcome {
        sol,
        trace,
        sum_rate: final_rate,
        unit_modulus_before_projection,
        outer_iterations: iterations,
        failure,
    })
}

fn status_note(status: SolverStatus) -> Option<String> {
    match status {
        SolverStatus::Converged => None,
        SolverStatus::MaxIter => Some("solver hit iteration cap".into()),
        SolverStatus::NumericalFailure => Some("solver numerical failure".into()),
    }
}
