//! Log-barrier interior-point method for concave maximization with
//! `log(1 + x_i)` terms, affine constraints and convex quadratic constraints.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sparse affine row `Σ coeffs·x ≤ rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineConstraint {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl AffineConstraint {
    pub fn new(coeffs: Vec<(usize, f64)>, rhs: f64) -> Self {
        AffineConstraint { coeffs, rhs }
    }

    fn lhs(&self, x: &DVector<f64>) -> f64 {
        self.coeffs.iter().map(|&(i, a)| a * x[i]).sum()
    }

    fn along(&self, d: &DVector<f64>) -> f64 {
        self.lhs(d)
    }
}

/// `x_Sᵀ Q x_S + Σ linear·x ≤ rhs`, where `x_S` is the sub-vector indexed by
/// `vars` and `Q` is symmetric PSD over those variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadConstraint {
    pub vars: Vec<usize>,
    pub q: DMatrix<f64>,
    pub linear: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl QuadConstraint {
    fn sub(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.vars.len(), self.vars.iter().map(|&i| x[i]))
    }

    fn lhs(&self, x: &DVector<f64>) -> f64 {
        let xs = self.sub(x);
        xs.dot(&(&self.q * &xs)) + self.linear.iter().map(|&(i, a)| a * x[i]).sum::<f64>()
    }
}

/// maximize `Σ κ·ln(1 + x_i) + cᵀx` subject to the listed constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcaveProgram {
    pub n_vars: usize,
    /// `(κ > 0, i)` pairs.
    pub log_terms: Vec<(f64, usize)>,
    pub linear_objective: DVector<f64>,
    pub affine: Vec<AffineConstraint>,
    pub quad: Vec<QuadConstraint>,
    pub lower: Vec<Option<f64>>,
    pub upper: Vec<Option<f64>>,
    pub x0: DVector<f64>,
}

impl ConcaveProgram {
    pub fn new(n_vars: usize) -> Self {
        ConcaveProgram {
            n_vars,
            log_terms: Vec::new(),
            linear_objective: DVector::zeros(n_vars),
            affine: Vec::new(),
            quad: Vec::new(),
            lower: vec![None; n_vars],
            upper: vec![None; n_vars],
            x0: DVector::zeros(n_vars),
        }
    }

    pub fn n_constraints(&self) -> usize {
        self.affine.len()
            + self.quad.len()
            + self.lower.iter().filter(|b| b.is_some()).count()
            + self.upper.iter().filter(|b| b.is_some()).count()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        let logs: f64 = self.log_terms.iter().map(|&(c, i)| c * x[i].ln_1p()).sum();
        logs + self.linear_objective.dot(x)
    }

    /// `lhs − rhs` of every constraint in the order affine, quadratic, lower
    /// bounds, upper bounds.
    pub fn constraint_values(&self, x: &DVector<f64>) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_constraints());
        out.extend(self.affine.iter().map(|c| c.lhs(x) - c.rhs));
        out.extend(self.quad.iter().map(|c| c.lhs(x) - c.rhs));
        for (i, b) in self.lower.iter().enumerate() {
            if let Some(l) = b {
                out.push(l - x[i]);
            }
        }
        for (i, b) in self.upper.iter().enumerate() {
            if let Some(u) = b {
                out.push(x[i] - u);
            }
        }
        out
    }

    fn check_dims(&self, x: &DVector<f64>) -> Result<()> {
        let bad_index = self
            .affine
            .iter()
            .flat_map(|c| c.coeffs.iter().map(|p| p.0))
            .chain(self.quad.iter().flat_map(|c| c.vars.iter().copied().chain(c.linear.iter().map(|p| p.0))))
            .chain(self.log_terms.iter().map(|p| p.1))
            .any(|i| i >= self.n_vars);
        let quad_shape = self.quad.iter().any(|c| c.q.shape() != (c.vars.len(), c.vars.len()));
        if x.len() != self.n_vars
            || self.linear_objective.len() != self.n_vars
            || self.lower.len() != self.n_vars
            || self.upper.len() != self.n_vars
            || bad_index
            || quad_shape
        {
            return Err(Error::Dimension(format!(
                "program with {} variables is inconsistent with its parts or with x of length {}",
                self.n_vars,
                x.len()
            )));
        }
        Ok(())
    }

    /// Writes the program as pretty JSON for offline inspection.
    pub fn dump(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("program serializes");
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityCheck {
    pub feasible: bool,
    /// Largest `lhs − rhs`; −∞ with no constraints.
    pub worst_violation: f64,
    pub worst_constraint: Option<usize>,
}

pub fn check_feasible(prog: &ConcaveProgram, x: &DVector<f64>) -> Result<FeasibilityCheck> {
    prog.check_dims(x)?;
    let mut worst = f64::NEG_INFINITY;
    let mut at = None;
    for (i, v) in prog.constraint_values(x).into_iter().enumerate() {
        if v > worst || v.is_nan() {
            worst = v;
            at = Some(i);
        }
    }
    Ok(FeasibilityCheck {
        feasible: !(worst > 0.0) && !worst.is_nan(),
        worst_violation: worst,
        worst_constraint: at,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub t0: f64,
    pub mu: f64,
    /// Stop once `m / t` falls below this.
    pub tol: f64,
    /// Inner stop on `λ²/2`.
    pub newton_tol: f64,
    pub alpha: f64,
    pub beta: f64,
    pub max_newton_per_stage: usize,
    pub max_newton_total: usize,
    pub regularization: f64,
    /// Required slack of every constraint at `x0`.
    pub feas_margin: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            t0: 1.0,
            mu: 10.0,
            tol: 1e-6,
            newton_tol: 1e-9,
            alpha: 0.1,
            beta: 0.5,
            max_newton_per_stage: 60,
            max_newton_total: 800,
            regularization: 1e-12,
            feas_margin: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverStatus {
    Converged,
    MaxIter,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverResult {
    pub x_star: DVector<f64>,
    pub objective: f64,
    pub status: SolverStatus,
    pub newton_iters: usize,
    pub max_constraint_violation: f64,
}

/// Slacks of every constraint (positive inside), in `constraint_values` order.
fn slacks(prog: &ConcaveProgram, x: &DVector<f64>) -> Vec<f64> {
    prog.constraint_values(x).into_iter().map(|v| -v).collect()
}

struct Barrier<'a> {
    prog: &'a ConcaveProgram,
}

impl Barrier<'_> {
    /// Gradient and Hessian of `−t·f(x) − Σ ln s_i(x)`.
    fn derivatives(&self, x: &DVector<f64>, s: &[f64], t: f64) -> (DVector<f64>, DMatrix<f64>) {
        let p = self.prog;
        let n = p.n_vars;
        let mut g = -&p.linear_objective * t;
        let mut h = DMatrix::<f64>::zeros(n, n);
        for &(c, i) in &p.log_terms {
            let d = 1.0 + x[i];
            g[i] -= t * c / d;
            h[(i, i)] += t * c / (d * d);
        }
        let mut idx = 0;
        for row in &p.affine {
            let si = s[idx];
            idx += 1;
            for &(i, a) in &row.coeffs {
                g[i] += a / si;
            }
            let s2 = si * si;
            for &(i, a) in &row.coeffs {
                for &(j, b) in &row.coeffs {
                    h[(i, j)] += a * b / s2;
                }
            }
        }
        for qc in &p.quad {
            let si = s[idx];
            idx += 1;
            let xs = qc.sub(x);
            let qx = &qc.q * &xs;
            // ∇(lhs) as a sparse list over vars ∪ linear indices
            let mut grad: Vec<(usize, f64)> = qc.vars.iter().zip(qx.iter()).map(|(&i, v)| (i, 2.0 * v)).collect();
            grad.extend(qc.linear.iter().copied());
            for &(i, a) in &grad {
                g[i] += a / si;
            }
            let s2 = si * si;
            for &(i, a) in &grad {
                for &(j, b) in &grad {
                    h[(i, j)] += a * b / s2;
                }
            }
            for (a, &i) in qc.vars.iter().enumerate() {
                for (b, &j) in qc.vars.iter().enumerate() {
                    h[(i, j)] += 2.0 * qc.q[(a, b)] / si;
                }
            }
        }
        for (i, b) in p.lower.iter().enumerate() {
            if b.is_some() {
                let si = s[idx];
                idx += 1;
                g[i] -= 1.0 / si;
                h[(i, i)] += 1.0 / (si * si);
            }
        }
        for (i, b) in p.upper.iter().enumerate() {
            if b.is_some() {
                let si = s[idx];
                idx += 1;
                g[i] += 1.0 / si;
                h[(i, i)] += 1.0 / (si * si);
            }
        }
        (g, h)
    }

    /// Exact slack changes along `step·d`, computed term by term so small
    /// steps do not cancel against the slack itself.
    fn slack_deltas(&self, x: &DVector<f64>, d: &DVector<f64>, step: f64) -> Vec<f64> {
        let p = self.prog;
        let mut out = Vec::with_capacity(p.n_constraints());
        out.extend(p.affine.iter().map(|c| -step * c.along(d)));
        for qc in &p.quad {
            let xs = qc.sub(x);
            let ds = qc.sub(d);
            let qd = &qc.q * &ds;
            let lin: f64 = qc.linear.iter().map(|&(i, a)| a * d[i]).sum();
            out.push(-(step * (2.0 * xs.dot(&qd) + lin) + step * step * ds.dot(&qd)));
        }
        for (i, b) in p.lower.iter().enumerate() {
            if b.is_some() {
                out.push(step * d[i]);
            }
        }
        for (i, b) in p.upper.iter().enumerate() {
            if b.is_some() {
                out.push(-step * d[i]);
            }
        }
        out
    }

    /// `φ(x + step·d) − φ(x)`, or `None` outside the domain.
    fn change(&self, x: &DVector<f64>, s: &[f64], d: &DVector<f64>, step: f64, t: f64) -> Option<f64> {
        let p = self.prog;
        let mut delta = -t * step * p.linear_objective.dot(d);
        for &(c, i) in &p.log_terms {
            let r = step * d[i] / (1.0 + x[i]);
            if !(r > -1.0) {
                return None;
            }
            delta -= t * c * r.ln_1p();
        }
        for (si, ds) in s.iter().zip(self.slack_deltas(x, d, step)) {
            let r = ds / si;
            if !(r > -1.0) {
                return None;
            }
            delta -= r.ln_1p();
        }
        delta.is_finite().then_some(delta)
    }
}

/// Solves `H·d = −g` by Cholesky on the Jacobi-scaled system, adding a
/// growing multiple of the identity when the factorization fails.
fn newton_direction(h: &DMatrix<f64>, g: &DVector<f64>, reg0: f64) -> Option<DVector<f64>> {
    let n = g.len();
    let scale = DVector::from_iterator(n, (0..n).map(|i| {
        let v = h[(i, i)];
        if v > 0.0 {
            1.0 / v.sqrt()
        } else {
            1.0
        }
    }));
    let scaled = DMatrix::from_fn(n, n, |i, j| h[(i, j)] * scale[i] * scale[j]);
    let rhs = -g.component_mul(&scale);
    let mut reg = 0.0;
    for _ in 0..8 {
        let mut m = scaled.clone();
        for i in 0..n {
            m[(i, i)] += reg;
        }
        if let Some(ch) = m.cholesky() {
            let y = ch.solve(&rhs);
            if y.iter().all(|v| v.is_finite()) {
                return Some(y.component_mul(&scale));
            }
        }
        reg = if reg == 0.0 { reg0 } else { reg * 100.0 };
    }
    None
}

pub fn solve_concave_program(prog: &ConcaveProgram, settings: &SolverSettings) -> Result<SolverResult> {
    let x0 = &prog.x0;
    prog.check_dims(x0)?;
    for &(c, i) in &prog.log_terms {
        if !(c > 0.0) || !(x0[i] > -1.0) {
            return Err(Error::Precondition(format!(
                "log term on x[{i}] needs κ > 0 and x0 > −1 (κ = {c}, x0 = {})",
                x0[i]
            )));
        }
    }
    let mut s = slacks(prog, x0);
    if let Some((i, v)) = s
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v > settings.feas_margin))
    {
        return Err(Error::Precondition(format!("x0 violates constraint {i} (slack {v:e})")));
    }

    let barrier = Barrier { prog };
    let m = prog.n_constraints().max(1) as f64;
    let mut x = x0.clone();
    let mut t = settings.t0;
    let mut iters = 0;
    let mut status = SolverStatus::Converged;

    'outer: loop {
        for _ in 0..settings.max_newton_per_stage {
            if iters >= settings.max_newton_total {
                status = SolverStatus::MaxIter;
                break 'outer;
            }
            let (g, h) = barrier.derivatives(&x, &s, t);
            let Some(d) = newton_direction(&h, &g, settings.regularization) else {
                status = SolverStatus::NumericalFailure;
                break 'outer;
            };
            iters += 1;
            let slope = g.dot(&d);
            let lambda2 = -slope;
            if lambda2 / 2.0 <= settings.newton_tol {
                break;
            }
            let mut step = 1.0;
            let mut accepted = false;
            while step > 1e-20 {
                if let Some(delta) = barrier.change(&x, &s, &d, step, t) {
                    if delta <= settings.alpha * step * slope {
                        accepted = true;
                        break;
                    }
                }
                step *= settings.beta;
            }
            if !accepted {
                break;
            }
            let deltas = barrier.slack_deltas(&x, &d, step);
            x += &d * step;
            for (si, ds) in s.iter_mut().zip(deltas) {
                *si += ds;
            }
            // keep slacks consistent with x against drift
            let fresh = slacks(prog, &x);
            for (si, f) in s.iter_mut().zip(fresh) {
                if (*si - f).abs() > 1e-9 * si.abs().max(f.abs()) {
                    *si = f;
                }
            }
            if s.iter().any(|v| !(*v > 0.0)) {
                status = SolverStatus::NumericalFailure;
                break 'outer;
            }
        }
        if m / t <= settings.tol {
            break;
        }
        t *= settings.mu;
    }

    let worst = prog.constraint_values(&x).into_iter().fold(f64::NEG_INFINITY, f64::max);
    Ok(SolverResult {
        objective: prog.objective(&x),
        max_constraint_violation: worst.max(0.0),
        x_star: x,
        status,
        newton_iters: iters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_var() -> ConcaveProgram {
        ConcaveProgram::new(1)
    }

    #[test]
    fn feasibility_report() {
        let mut p = one_var();
        p.affine.push(AffineConstraint::new(vec![(0, 1.0)], 1.0));
        let r = check_feasible(&p, &DVector::zeros(1)).unwrap();
        assert!(r.feasible);
        assert_eq!(r.worst_violation, -1.0);
        let mut p = one_var();
        p.affine.push(AffineConstraint::new(vec![(0, -1.0)], -1.0));
        let r = check_feasible(&p, &DVector::zeros(1)).unwrap();
        assert!(!r.feasible);
        assert_eq!((r.worst_violation, r.worst_constraint), (1.0, Some(0)));
        assert!(check_feasible(&p, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn feasibility_matches_direct_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let prog = random_program(&mut rng, 6);
        let x = DVector::from_fn(6, |_, _| rng.gen::<f64>() * 2.0 - 0.5);
        let r = check_feasible(&prog, &x).unwrap();
        let mut worst = f64::NEG_INFINITY;
        for c in &prog.affine {
            worst = worst.max(c.coeffs.iter().map(|&(i, a)| a * x[i]).sum::<f64>() - c.rhs);
        }
        for c in &prog.quad {
            let mut v = -c.rhs;
            for (a, &i) in c.vars.iter().enumerate() {
                for (b, &j) in c.vars.iter().enumerate() {
                    v += x[i] * c.q[(a, b)] * x[j];
                }
            }
            worst = worst.max(v);
        }
        for i in 0..6 {
            worst = worst.max(-x[i]);
        }
        assert!((r.worst_violation - worst).abs() < 1e-12);
    }

    #[test]
    fn log_with_box() {
        let mut p = one_var();
        p.log_terms.push((1.0, 0));
        p.affine.push(AffineConstraint::new(vec![(0, 1.0)], 3.0));
        let r = solve_concave_program(&p, &SolverSettings::default()).unwrap();
        assert_eq!(r.status, SolverStatus::Converged);
        // objective gap is bounded by m/t; x* sits 1/(t·f') inside the bound
        assert!((r.objective - 4f64.ln()).abs() < 1e-6);
        assert!((r.x_star[0] - 3.0).abs() < 5e-6);
    }

    #[test]
    fn linear_in_disc() {
        let mut p = one_var();
        p.linear_objective[0] = 1.0;
        p.quad.push(QuadConstraint {
            vars: vec![0],
            q: DMatrix::from_element(1, 1, 1.0),
            linear: vec![],
            rhs: 4.0,
        });
        let r = solve_concave_program(&p, &SolverSettings::default()).unwrap();
        assert_eq!(r.status, SolverStatus::Converged);
        assert!((r.x_star[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn infeasible_start_rejected() {
        let mut p = one_var();
        p.affine.push(AffineConstraint::new(vec![(0, -1.0)], -1.0));
        assert!(matches!(
            solve_concave_program(&p, &SolverSettings::default()),
            Err(Error::Precondition(_))
        ));
    }

    fn random_program(rng: &mut ChaCha8Rng, n: usize) -> ConcaveProgram {
        let mut p = ConcaveProgram::new(n);
        for i in 0..n {
            p.log_terms.push((0.5 + rng.gen::<f64>(), i));
            p.linear_objective[i] = rng.gen::<f64>() - 0.7;
            p.lower[i] = Some(0.0);
        }
        p.quad.push(QuadConstraint {
            vars: (0..n).collect(),
            q: DMatrix::identity(n, n),
            linear: vec![],
            rhs: 4.0,
        });
        p.x0 = DVector::from_element(n, 0.1);
        p
    }

    /// Projection onto {‖x‖ ≤ 2, x ≥ 0}: clip then shrink.
    fn projected_gradient(p: &ConcaveProgram) -> f64 {
        let n = p.n_vars;
        let mut x = p.x0.clone();
        for _ in 0..200_000 {
            let mut g = p.linear_objective.clone();
            for &(c, i) in &p.log_terms {
                g[i] += c / (1.0 + x[i]);
            }
            x += g * 1e-3;
            for i in 0..n {
                x[i] = x[i].max(0.0);
            }
            let norm = x.norm();
            if norm > 2.0 {
                x *= 2.0 / norm;
            }
        }
        p.objective(&x)
    }

    #[test]
    fn agrees_with_projected_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random_program(&mut rng, 10);
        let r = solve_concave_program(&p, &SolverSettings::default()).unwrap();
        assert_eq!(r.status, SolverStatus::Converged);
        let oracle = projected_gradient(&p);
        assert!((r.objective - oracle).abs() <= 1e-4, "{} vs {}", r.objective, oracle);
    }

    #[test]
    fn dump_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_program(&mut rng, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prog.json");
        p.dump(&path).unwrap();
        let back: ConcaveProgram = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn feasible_improving_deterministic(seed in 0u64..1000, n in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_program(&mut rng, n);
            let a = solve_concave_program(&p, &SolverSettings::default()).unwrap();
            let b = solve_concave_program(&p, &SolverSettings::default()).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.max_constraint_violation <= 1e-8);
            prop_assert!(a.objective >= p.objective(&p.x0));
        }

        #[test]
        fn linear_scaling_keeps_argmax(seed in 0u64..1000, s in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 4;
            let mut p = ConcaveProgram::new(n);
            for i in 0..n {
                p.linear_objective[i] = rng.gen::<f64>() - 0.5;
                p.lower[i] = Some(-1.0);
                p.upper[i] = Some(1.0);
            }
            p.quad.push(QuadConstraint { vars: (0..n).collect(), q: DMatrix::identity(n, n), linear: vec![], rhs: 1.5 });
            // x* error of the barrier scales like m/(t·s); tighten t so it is below 1e-6
            let settings = SolverSettings { tol: 1e-10, ..SolverSettings::default() };
            let a = solve_concave_program(&p, &settings).unwrap();
            p.linear_objective *= s;
            let b = solve_concave_program(&p, &settings).unwrap();
            prop_assert!((a.x_star - b.x_star).norm() <= 1e-6);
        }
    }
}
