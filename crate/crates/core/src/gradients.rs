//! Closed-form derivatives of the channel with respect to antenna and element
//! positions, and a central finite-difference oracle to check them.

use nalgebra::{DMatrix, DVector};

use crate::channel::bessel::bessel_j1;
use crate::channel::correlation::SqrtFactor;
use crate::channel::{effective_channel, ChannelRealization};
use crate::error::{Error, Result};
use crate::model::layout::Point2;
use crate::model::solution::SolutionState;
use crate::C64;

/// Eigenvalue-sum floor below which the Sylvester system is treated as singular.
pub const SYLVESTER_EPS: f64 = 1e-8;

/// Default central-difference step for position gradients, m.
pub const FD_STEP: f64 = 1e-7;

/// Real gradient of a scalar with respect to every antenna position
/// (`d_p`) and element position (`d_r`), as (∂/∂x, ∂/∂y) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionGradient {
    pub d_p: Vec<[f64; 2]>,
    pub d_r: Vec<[f64; 2]>,
    /// `(k, j)` when the target is the gain `|h_k^eff w_j|²`.
    pub target: Option<(usize, usize)>,
}

impl PositionGradient {
    pub fn zeros(n: usize, m: usize, target: Option<(usize, usize)>) -> Self {
        PositionGradient {
            d_p: vec![[0.0; 2]; n],
            d_r: vec![[0.0; 2]; m],
            target,
        }
    }

    /// All entries, antennas first, x before y.
    pub fn flatten(&self) -> Vec<f64> {
        self.d_p.iter().chain(self.d_r.iter()).flat_map(|g| g.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SylvesterSolve {
    /// Derivative of the square root for one coordinate.
    pub x: DMatrix<f64>,
    /// ‖S·X + X·S − dR‖_F.
    pub residual: f64,
}

/// A single position coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coordinate {
    Antenna { n: usize, axis: usize },
    Element { m: usize, axis: usize },
}

impl Coordinate {
    /// Every coordinate, antennas first, x before y.
    pub fn all(n: usize, m: usize) -> Vec<Coordinate> {
        let fa = (0..n).flat_map(|n| (0..2).map(move |axis| Coordinate::Antenna { n, axis }));
        let lm = (0..m).flat_map(|m| (0..2).map(move |axis| Coordinate::Element { m, axis }));
        fa.chain(lm).collect()
    }
}

/// Derivative of entry `index` of the steering vector with respect to
/// (x_index, y_index). Every other entry has zero derivative.
pub fn grad_steering(positions: &[Point2], azimuth: f64, elevation: f64, lambda_m: f64, index: usize) -> [C64; 2] {
    let u = [azimuth.sin() * elevation.cos(), azimuth.sin() * elevation.sin()];
    let a = crate::channel::steering_from_direction(&positions[index..index + 1], u, lambda_m)[0];
    steering_entry_grad(a, u, 2.0 * std::f64::consts::PI / lambda_m)
}

fn steering_entry_grad(a: C64, u: [f64; 2], k0: f64) -> [C64; 2] {
    let minus_j = C64::new(0.0, -k0);
    [minus_j * u[0] * a, minus_j * u[1] * a]
}

/// (∂R/∂x_n, ∂R/∂y_n) for the Jakes matrix of `positions`. Only row and
/// column `n` are populated.
pub fn grad_correlation(positions: &[Point2], lambda_m: f64, n: usize) -> Result<[DMatrix<f64>; 2]> {
    let len = positions.len();
    let k0 = 2.0 * std::f64::consts::PI / lambda_m;
    let mut dx = DMatrix::zeros(len, len);
    let mut dy = DMatrix::zeros(len, len);
    for j in 0..len {
        if j == n {
            continue;
        }
        let diff = [positions[n][0] - positions[j][0], positions[n][1] - positions[j][1]];
        let d = diff[0].hypot(diff[1]);
        if d == 0.0 {
            return Err(Error::SingularDirection { i: n, j });
        }
        let s = -k0 * bessel_j1(k0 * d) / d;
        dx[(n, j)] = s * diff[0];
        dx[(j, n)] = s * diff[0];
        dy[(n, j)] = s * diff[1];
        dy[(j, n)] = s * diff[1];
    }
    Ok([dx, dy])
}

/// Solves `S·X + X·S = dR` in the eigenbasis of `S`.
pub fn sylvester_sqrt_grad(factor: &SqrtFactor, d_r: &DMatrix<f64>) -> Result<SylvesterSolve> {
    let n = factor.sqrt.nrows();
    if d_r.shape() != (n, n) {
        return Err(Error::Dimension(format!("dR is {:?}, square root is {n}x{n}", d_r.shape())));
    }
    let u = &factor.u;
    let s = &factor.sqrt_eigs;
    let mut t = u.transpose() * d_r * u;
    for i in 0..n {
        for j in 0..n {
            let sum = s[i] + s[j];
            if sum < SYLVESTER_EPS {
                return Err(Error::NearSingular { sum });
            }
            t[(i, j)] /= sum;
        }
    }
    let x = u * t * u.transpose();
    let residual = (&factor.sqrt * &x + &x * &factor.sqrt - d_r).norm();
    Ok(SylvesterSolve { x, residual })
}

/// Same solve through `vec(X) = (I⊗S + Sᵀ⊗I)⁻¹ vec(dR)`. O(n⁶); kept as a
/// cross-check of [`sylvester_sqrt_grad`].
pub fn sylvester_kronecker(sqrt: &DMatrix<f64>, d_r: &DMatrix<f64>) -> Result<SylvesterSolve> {
    let n = sqrt.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let system = eye.kronecker(sqrt) + sqrt.transpose().kronecker(&eye);
    let rhs = DVector::from_column_slice(d_r.as_slice());
    let vec_x = system
        .lu()
        .solve(&rhs)
        .ok_or(Error::NearSingular { sum: 0.0 })?;
    let x = DMatrix::from_column_slice(n, n, vec_x.as_slice());
    let residual = (sqrt * &x + &x * sqrt - d_r).norm();
    Ok(SylvesterSolve { x, residual })
}

/// Derivatives of the unscaled LoS and NLoS building blocks with respect to
/// one coordinate.
#[derive(Debug, Clone)]
pub struct BlockDerivative {
    pub d_h_los: DMatrix<C64>,
    pub d_h_nlos: DMatrix<C64>,
    pub d_hk_los: Vec<DVector<C64>>,
    pub d_hk_nlos: Vec<DVector<C64>>,
    pub d_gk_los: Vec<DVector<C64>>,
    pub d_gk_nlos: Vec<DVector<C64>>,
}

fn realify(m: &DMatrix<f64>) -> DMatrix<C64> {
    m.map(|v| C64::new(v, 0.0))
}

/// Square-root derivative for one coordinate, or zero when correlation is
/// disabled (the identity does not depend on positions).
fn sqrt_derivative(
    enabled: bool,
    positions: &[Point2],
    factor: &SqrtFactor,
    lambda_m: f64,
    index: usize,
    axis: usize,
) -> Result<DMatrix<f64>> {
    let len = positions.len();
    if !enabled {
        return Ok(DMatrix::zeros(len, len));
    }
    let [dx, dy] = grad_correlation(positions, lambda_m, index)?;
    let d_r = if axis == 0 { dx } else { dy };
    Ok(sylvester_sqrt_grad(factor, &d_r)?.x)
}

pub fn block_derivative(
    chan: &ChannelRealization,
    p: &[Point2],
    r: &[Point2],
    lambda_m: f64,
    coord: Coordinate,
) -> Result<BlockDerivative> {
    let parts = &chan.parts;
    let (n, m, k) = (chan.n_antennas(), chan.n_elements(), chan.n_users());
    let corr = &chan.corr;
    let zero_n = DVector::<C64>::zeros(n);
    let zero_m = DVector::<C64>::zeros(m);
    match coord {
        Coordinate::Antenna { n: idx, axis } => {
            let mut d_a = DVector::<C64>::zeros(n);
            d_a[idx] = steering_entry_grad(parts.a_fa_lim[idx], parts.u_fa_lim, parts.k0)[axis];
            let d_h_los = &parts.a_lm_r * d_a.adjoint();
            let d_sqrt = realify(&sqrt_derivative(corr.enabled, p, &corr.sqrt_fa, lambda_m, idx, axis)?);
            let d_h_nlos = realify(&corr.sqrt_lm_r.sqrt) * &chan.draw.h_bar * &d_sqrt;
            let d_hk_los = (0..k)
                .map(|u| {
                    let mut d = zero_n.clone();
                    d[idx] = steering_entry_grad(parts.a_fa_user[u][idx], parts.u_fa_user[u], parts.k0)[axis];
                    d
                })
                .collect();
            let d_hk_nlos = chan.draw.h_bar_k.iter().map(|h| &d_sqrt * h).collect();
            Ok(BlockDerivative {
                d_h_los,
                d_h_nlos,
                d_hk_los,
                d_hk_nlos,
                d_gk_los: vec![zero_m.clone(); k],
                d_gk_nlos: vec![zero_m; k],
            })
        }
        Coordinate::Element { m: idx, axis } => {
            let mut d_a = DVector::<C64>::zeros(m);
            d_a[idx] = steering_entry_grad(parts.a_lm_r[idx], parts.u_lm_r, parts.k0)[axis];
            let d_h_los = &d_a * parts.a_fa_lim.adjoint();
            let d_sqrt_r = realify(&sqrt_derivative(corr.enabled, r, &corr.sqrt_lm_r, lambda_m, idx, axis)?);
            let d_sqrt_t = if corr.enabled {
                realify(&sqrt_derivative(true, r, &corr.sqrt_lm_t, lambda_m, idx, axis)?)
            } else {
                DMatrix::zeros(m, m)
            };
            let d_h_nlos = &d_sqrt_r * &chan.draw.h_bar * realify(&corr.sqrt_fa.sqrt);
            let d_gk_los = (0..k)
                .map(|u| {
                    let mut d = zero_m.clone();
                    d[idx] = steering_entry_grad(parts.a_lm_t[u][idx], parts.u_lm_t[u], parts.k0)[axis];
                    d
                })
                .collect();
            let d_gk_nlos = chan.draw.g_bar_k.iter().map(|g| &d_sqrt_t * g).collect();
            Ok(BlockDerivative {
                d_h_los,
                d_h_nlos,
                d_hk_los: vec![zero_n.clone(); k],
                d_hk_nlos: vec![zero_n; k],
                d_gk_los,
                d_gk_nlos,
            })
        }
    }
}

/// `(A^H Θ B)` as an N-vector, `Bᵀ (conj(A) ∘ θ)`.
fn cascade(a: &DVector<C64>, theta: &DVector<C64>, b: &DMatrix<C64>) -> DVector<C64> {
    b.transpose() * a.zip_map(theta, |x, t| x.conj() * t)
}

/// Six-term product-rule assembly of ∂h_k^eff for one coordinate.
pub fn effective_derivative(
    chan: &ChannelRealization,
    theta: &DVector<C64>,
    k: usize,
    d: &BlockDerivative,
) -> DVector<C64> {
    let c = chan.scaling[k];
    let parts = &chan.parts;
    let (gl, gn) = (&parts.a_lm_t[k], &parts.g_nlos_k[k]);
    let (hl, hn) = (&parts.h_los, &parts.h_nlos);
    let (dgl, dgn) = (&d.d_gk_los[k], &d.d_gk_nlos[k]);
    let (dhl, dhn) = (&d.d_h_los, &d.d_h_nlos);

    let mut out = d.d_hk_los[k].map(|z| z.conj()) * C64::new(c.c1, 0.0)
        + d.d_hk_nlos[k].map(|z| z.conj()) * C64::new(c.c3, 0.0);
    if c.c2 != 0.0 || c.c4 != 0.0 || c.c5 != 0.0 {
        let t2 = cascade(dgl, theta, hl) + cascade(gl, theta, dhl);
        let t4 = cascade(dgn, theta, hn) + cascade(gn, theta, dhn);
        let t5 = cascade(dgl, theta, hn) + cascade(gl, theta, dhn) + cascade(dgn, theta, hl) + cascade(gn, theta, dhl);
        out += t2 * C64::new(c.c2, 0.0) + t4 * C64::new(c.c4, 0.0) + t5 * C64::new(c.c5, 0.0);
    }
    out
}

/// ∂h_k^eff with respect to one coordinate.
pub fn grad_effective_channel(
    chan: &ChannelRealization,
    sol: &SolutionState,
    lambda_m: f64,
    k: usize,
    coord: Coordinate,
) -> Result<DVector<C64>> {
    let d = block_derivative(chan, &sol.p, &sol.r, lambda_m, coord)?;
    Ok(effective_derivative(chan, &sol.theta, k, &d))
}

/// Gradients of every gain `g_kj = |h_k^eff w_j|²`, indexed `[k][j]`.
pub fn grad_all_gains(chan: &ChannelRealization, sol: &SolutionState, lambda_m: f64) -> Result<Vec<Vec<PositionGradient>>> {
    let (n, m, k) = (chan.n_antennas(), chan.n_elements(), chan.n_users());
    let h_eff = effective_channel(chan, &sol.theta);
    let s: Vec<Vec<C64>> = h_eff
        .iter()
        .map(|h| sol.w.iter().map(|w| h.dot(w)).collect())
        .collect();
    let mut out: Vec<Vec<PositionGradient>> = (0..k)
        .map(|u| (0..k).map(|j| PositionGradient::zeros(n, m, Some((u, j)))).collect())
        .collect();
    for coord in Coordinate::all(n, m) {
        let d = block_derivative(chan, &sol.p, &sol.r, lambda_m, coord)?;
        for u in 0..k {
            let dh = effective_derivative(chan, &sol.theta, u, &d);
            for j in 0..k {
                let ds = dh.dot(&sol.w[j]);
                let val = 2.0 * (ds.conj() * s[u][j]).re;
                let slot = match coord {
                    Coordinate::Antenna { n, axis } => &mut out[u][j].d_p[n][axis],
                    Coordinate::Element { m, axis } => &mut out[u][j].d_r[m][axis],
                };
                *slot = val;
            }
        }
    }
    Ok(out)
}

/// Gradient of `g_kj = |h_k^eff w_j|²` with respect to every position.
pub fn grad_g_kj(chan: &ChannelRealization, sol: &SolutionState, lambda_m: f64, k: usize, j: usize) -> Result<PositionGradient> {
    let (n, m) = (chan.n_antennas(), chan.n_elements());
    let h = crate::channel::effective_channel_user(chan, &sol.theta, k);
    let s = h.dot(&sol.w[j]);
    let mut out = PositionGradient::zeros(n, m, Some((k, j)));
    for coord in Coordinate::all(n, m) {
        let dh = grad_effective_channel(chan, sol, lambda_m, k, coord)?;
        let val = 2.0 * (dh.dot(&sol.w[j]).conj() * s).re;
        match coord {
            Coordinate::Antenna { n, axis } => out.d_p[n][axis] = val,
            Coordinate::Element { m, axis } => out.d_r[m][axis] = val,
        }
    }
    Ok(out)
}

/// Central differences of `f` in every position coordinate of `state`.
pub fn finite_difference_gradient<F>(f: F, state: &SolutionState, step: f64) -> PositionGradient
where
    F: Fn(&SolutionState) -> f64,
{
    let (n, m) = (state.p.len(), state.r.len());
    let mut out = PositionGradient::zeros(n, m, None);
    let mut probe = state.clone();
    for coord in Coordinate::all(n, m) {
        let eval = |probe: &mut SolutionState, delta: f64| {
            match coord {
                Coordinate::Antenna { n, axis } => probe.p[n][axis] = state.p[n][axis] + delta,
                Coordinate::Element { m, axis } => probe.r[m][axis] = state.r[m][axis] + delta,
            }
            f(probe)
        };
        let plus = eval(&mut probe, step);
        let minus = eval(&mut probe, -step);
        eval(&mut probe, 0.0);
        let g = (plus - minus) / (2.0 * step);
        match coord {
            Coordinate::Antenna { n, axis } => out.d_p[n][axis] = g,
            Coordinate::Element { m, axis } => out.d_r[m][axis] = g,
        }
    }
    out
}
