//! Comparison schemes: random ablations, zero-forcing, rigid arrays, no
//! metasurface and a generic genetic algorithm.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ao::{alternating_optimize, solve_beamforming_subproblem, AoSettings, AoTrace, MovableSet, SurrogateState};
use crate::channel::{effective_channel, rates_from_effective, ChannelModel, ChannelRealization};
use crate::error::{Error, Result};
use crate::model::layout::{rigid_grid, squared_distance, Point2};
use crate::model::solution::{initial_layout, matched_filter, SolutionState};
use crate::model::SystemConfig;
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Proposed,
    WoBf,
    WoTheta,
    WoFa,
    WoLim,
    RigidBsRis,
    Zf,
    Ga,
    /// Only a leading fraction of antennas / elements may move; the rest
    /// stay on the rigid grid.
    Partial { rho_fa: f64, rho_lm: f64 },
}

impl Scheme {
    /// Fluid metasurface with a rigid base-station array.
    pub const LIM_BS: Scheme = Scheme::Partial { rho_fa: 0.0, rho_lm: 1.0 };
    /// Static metasurface with a fluid base-station array.
    pub const RIS_FAS: Scheme = Scheme::Partial { rho_fa: 1.0, rho_lm: 0.0 };

    pub fn validate(&self) -> Result<()> {
        if let Scheme::Partial { rho_fa, rho_lm } = *self {
            for (field, v) in [("rho_fa", rho_fa), ("rho_lm", rho_lm)] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::config(field, format!("fraction must lie in [0, 1], got {v}")));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Proposed => f.write_str("proposed"),
            Scheme::WoBf => f.write_str("wo_bf"),
            Scheme::WoTheta => f.write_str("wo_theta"),
            Scheme::WoFa => f.write_str("wo_fa"),
            Scheme::WoLim => f.write_str("wo_lim"),
            Scheme::RigidBsRis => f.write_str("rigid_bs_ris"),
            Scheme::Zf => f.write_str("zf"),
            Scheme::Ga => f.write_str("ga"),
            Scheme::Partial { rho_fa, rho_lm } => write!(f, "partial_{rho_fa}_{rho_lm}"),
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    /// Accepts the display names plus `partial` (ρ = 0.5 on both sides),
    /// `partial_<ρ_fa>_<ρ_lm>`, `lim_bs`, `ris_fas` and `ris_bs`.
    fn from_str(s: &str) -> Result<Self> {
        let scheme = match s.trim() {
            "proposed" => Scheme::Proposed,
            "wo_bf" => Scheme::WoBf,
            "wo_theta" => Scheme::WoTheta,
            "wo_fa" => Scheme::WoFa,
            "wo_lim" => Scheme::WoLim,
            "rigid_bs_ris" | "ris_bs" => Scheme::RigidBsRis,
            "zf" => Scheme::Zf,
            "ga" => Scheme::Ga,
            "lim_bs" => Scheme::LIM_BS,
            "ris_fas" => Scheme::RIS_FAS,
            "partial" => Scheme::Partial { rho_fa: 0.5, rho_lm: 0.5 },
            other => {
                let parsed = other.strip_prefix("partial_").and_then(|rest| {
                    let (a, b) = rest.split_once('_')?;
                    Some(Scheme::Partial {
                        rho_fa: a.parse().ok()?,
                        rho_lm: b.parse().ok()?,
                    })
                });
                parsed.ok_or_else(|| Error::config("schemes", format!("unknown scheme `{other}`")))?
            }
        };
        scheme.validate()?;
        Ok(scheme)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineOutcome {
    pub sol: SolutionState,
    pub sum_rate: f64,
    pub iterations: usize,
    pub trace: Option<AoTrace>,
    /// max_m ||θ_m| − 1| before the final projection; 0 for schemes that
    /// never relax the unit modulus.
    pub unit_modulus_before_projection: f64,
    /// Non-fatal problem worth reporting next to the rate.
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineOptions {
    pub ao: AoSettings,
    pub ga: GaSettings,
}

impl BaselineOptions {
    pub fn new(cfg: &SystemConfig) -> Self {
        BaselineOptions {
            ao: AoSettings::new(cfg),
            ga: GaSettings::new(cfg),
        }
    }
}

fn rigid_layout(cfg: &SystemConfig) -> Result<(Vec<Point2>, Vec<Point2>)> {
    let p = rigid_grid(cfg.n_antennas, cfg.aperture_fa, cfg.dth_fa, cfg.lambda_m)
        .ok_or_else(|| Error::config("aperture_fa", "rigid antenna grid does not fit"))?;
    let r = rigid_grid(cfg.n_elements, cfg.aperture_lm, cfg.dth_lm, cfg.lambda_m)
        .ok_or_else(|| Error::config("aperture_lm", "rigid element grid does not fit"))?;
    Ok((p, r))
}

fn random_unit_phases<R: Rng + ?Sized>(m: usize, rng: &mut R) -> DVector<C64> {
    DVector::from_fn(m, |_, _| C64::from_polar(1.0, 2.0 * PI * rng.gen::<f64>()))
}

fn sum_rate(chan: &ChannelRealization, sol: &SolutionState, sigma2: f64) -> f64 {
    rates_from_effective(&effective_channel(chan, &sol.theta), &sol.w, sigma2).sum_rate
}

/// Runs one scheme on the drop described by `model`. Random draws (for the
/// ablations and the genetic algorithm) come from `rng`.
pub fn run_baseline<R: Rng + ?Sized>(
    scheme: Scheme,
    model: &ChannelModel,
    opts: &BaselineOptions,
    rng: &mut R,
) -> Result<BaselineOutcome> {
    scheme.validate()?;
    let cfg = &model.cfg;
    let (n, m) = (cfg.n_antennas, cfg.n_elements);
    let mut ao = opts.ao.clone();
    let mut sol = initial_layout(cfg);
    let mut active = model.clone();

    match scheme {
        Scheme::Proposed => {}
        Scheme::WoBf => {
            let amp = cfg.pmax().sqrt();
            let raw: Vec<DVector<C64>> = (0..cfg.n_users)
                .map(|_| DVector::from_fn(n, |_, _| gaussian_c64(rng)))
                .collect();
            let total: f64 = raw.iter().map(|w| w.norm_squared()).sum::<f64>().sqrt();
            sol.w = raw.into_iter().map(|w| w * C64::new(amp / total, 0.0)).collect();
            ao.blocks.beamforming = false;
        }
        Scheme::WoTheta => {
            sol.theta = random_unit_phases(m, rng);
            ao.blocks.phase = false;
        }
        Scheme::WoFa => {
            let mut movable = MovableSet::all(n, m);
            movable.antennas.fill(false);
            ao.blocks.positions = Some(movable);
        }
        Scheme::WoLim => {
            active = model.clone().without_lim();
            ao.blocks.phase = false;
            ao.blocks.positions = None;
        }
        Scheme::RigidBsRis => {
            let (p, r) = rigid_layout(cfg)?;
            sol.p = p;
            sol.r = r;
            ao.blocks.positions = None;
        }
        Scheme::Partial { rho_fa, rho_lm } => {
            let (p, r) = rigid_layout(cfg)?;
            sol.p = p;
            sol.r = r;
            ao.blocks.positions = Some(MovableSet::leading(n, m, rho_fa, rho_lm));
        }
        Scheme::Zf => return zf_baseline(&active, sol),
        Scheme::Ga => {
            let (sol, rate) = ga_optimize(&active, &opts.ga, &opts.ao, rng)?;
            return Ok(BaselineOutcome {
                sol,
                sum_rate: rate,
                iterations: opts.ga.budget,
                trace: None,
                unit_modulus_before_projection: 0.0,
                flag: None,
            });
        }
    }

    let chan = active.assemble_for(&sol)?;
    if ao.blocks.beamforming {
        sol.w = matched_filter(&effective_channel(&chan, &sol.theta), cfg.pmax());
    }
    let out = alternating_optimize(&active, sol, &ao)?;
    Ok(BaselineOutcome {
        sol: out.sol,
        sum_rate: out.sum_rate,
        iterations: out.outer_iterations,
        trace: Some(out.trace),
        unit_modulus_before_projection: out.unit_modulus_before_projection,
        flag: out.failure,
    })
}

fn gaussian_c64<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

fn zf_baseline(model: &ChannelModel, mut sol: SolutionState) -> Result<BaselineOutcome> {
    let cfg = &model.cfg;
    let chan = model.assemble_for(&sol)?;
    let h_eff = effective_channel(&chan, &sol.theta);
    let (w, flag) = match zf_beamforming(&h_eff, cfg.pmax()) {
        Ok(w) => (w, None),
        Err(e @ Error::ZfInfeasible(_)) => (regularized_zf(&h_eff, cfg.pmax()), Some(e.to_string())),
        Err(e) => return Err(e),
    };
    sol.w = w;
    Ok(BaselineOutcome {
        sum_rate: sum_rate(&chan, &sol, cfg.sigma2()),
        sol,
        iterations: 0,
        trace: None,
        unit_modulus_before_projection: 0.0,
        flag,
    })
}

fn channel_matrix(h_eff: &[DVector<C64>]) -> DMatrix<C64> {
    let n = h_eff.first().map_or(0, |h| h.len());
    DMatrix::from_fn(h_eff.len(), n, |k, i| h_eff[k][i])
}

fn equal_split(cols: DMatrix<C64>, pmax: f64) -> Vec<DVector<C64>> {
    let k = cols.ncols();
    let amp = (pmax / k as f64).sqrt();
    cols.column_iter()
        .map(|c| {
            let norm = c.norm();
            if norm > 0.0 {
                c.into_owned() * C64::new(amp / norm, 0.0)
            } else {
                c.into_owned()
            }
        })
        .collect()
}

/// Zero-forcing beamformers: normalized pseudoinverse columns of the K×N
/// effective channel, equal power per user.
pub fn zf_beamforming(h_eff: &[DVector<C64>], pmax: f64) -> Result<Vec<DVector<C64>>> {
    let h = channel_matrix(h_eff);
    let (k, n) = h.shape();
    if k > n {
        return Err(Error::ZfInfeasible(format!("{k} users exceed {n} antennas")));
    }
    let sv = h.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 0.0) || smax / smin > 1e10 {
        return Err(Error::ZfInfeasible(format!("condition number {:.3e}", smax / smin)));
    }
    let gram = &h * h.adjoint();
    let inv = gram
        .try_inverse()
        .ok_or_else(|| Error::ZfInfeasible("singular channel Gram matrix".into()))?;
    Ok(equal_split(h.adjoint() * inv, pmax))
}

/// Regularized inverse used when plain zero-forcing is ill-posed.
fn regularized_zf(h_eff: &[DVector<C64>], pmax: f64) -> Vec<DVector<C64>> {
    let h = channel_matrix(h_eff);
    let k = h.nrows();
    let gram = &h * h.adjoint();
    let eps = 1e-10 * gram.trace().re.max(f64::MIN_POSITIVE);
    let reg = gram + DMatrix::from_diagonal_element(k, k, C64::new(eps, 0.0));
    let inv = reg.try_inverse().unwrap_or_else(|| DMatrix::identity(k, k));
    equal_split(h.adjoint() * inv, pmax)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaSettings {
    /// Fitness evaluations.
    pub budget: usize,
    pub population: usize,
    pub elitism: usize,
    pub tournament: usize,
    /// Per-gene mutation probability.
    pub mutation_rate: f64,
    /// Position mutation standard deviation, m.
    pub sigma_pos: f64,
    /// Phase mutation standard deviation, rad.
    pub sigma_phase: f64,
    /// Beamforming passes inside each fitness evaluation.
    pub inner_passes: usize,
}

impl GaSettings {
    pub fn new(cfg: &SystemConfig) -> Self {
        GaSettings {
            budget: 2000,
            population: 32,
            elitism: 2,
            tournament: 2,
            mutation_rate: 0.1,
            sigma_pos: cfg.lambda_m / 10.0,
            sigma_phase: 2.0 * PI / 10.0,
            inner_passes: 2,
        }
    }
}

#[derive(Debug, Clone)]
struct Individual {
    phases: Vec<f64>,
    p: Vec<Point2>,
    r: Vec<Point2>,
    fitness: f64,
    w: Vec<DVector<C64>>,
}

impl Individual {
    fn theta(&self) -> DVector<C64> {
        DVector::from_iterator(self.phases.len(), self.phases.iter().map(|&a| C64::from_polar(1.0, a)))
    }
}

/// Clamps points into the aperture, then pushes apart pairs closer than
/// `√dth`. Returns `false` if spacing could not be restored.
fn repair(points: &mut [Point2], aperture: [f64; 2], dth: f64) -> bool {
    let half = [aperture[0] / 2.0, aperture[1] / 2.0];
    let clamp = |q: &mut Point2| {
        for axis in 0..2 {
            q[axis] = q[axis].clamp(-half[axis], half[axis]);
        }
    };
    let target = dth * (1.0 + 1e-6);
    for _ in 0..100 {
        points.iter_mut().for_each(clamp);
        let mut clean = true;
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                let d2 = squared_distance(points[i], points[j]);
                if d2 >= target {
                    continue;
                }
                clean = false;
                let d = d2.sqrt();
                let (ux, uy) = if d > 1e-12 {
                    ((points[i][0] - points[j][0]) / d, (points[i][1] - points[j][1]) / d)
                } else {
                    (1.0, 0.0)
                };
                let push = (target.sqrt() - d) / 2.0 * 1.01;
                points[i][0] += ux * push;
                points[i][1] += uy * push;
                points[j][0] -= ux * push;
                points[j][1] -= uy * push;
            }
        }
        if clean {
            return true;
        }
    }
    points.iter_mut().for_each(clamp);
    points.iter().enumerate().all(|(i, a)| points[i + 1..].iter().all(|b| squared_distance(*a, *b) >= dth))
}

/// Sum-rate of a candidate geometry with beamformers refined by a few
/// beamforming solves from the matched filter.
fn evaluate(model: &ChannelModel, ind: &mut Individual, inner_passes: usize, ao: &AoSettings) -> Result<()> {
    let cfg = &model.cfg;
    let sigma2 = cfg.sigma2();
    let theta = ind.theta();
    let chan = model.assemble(&ind.p, &ind.r)?;
    let mut sol = SolutionState {
        w: matched_filter(&effective_channel(&chan, &theta), cfg.pmax()),
        theta,
        p: ind.p.clone(),
        r: ind.r.clone(),
    };
    let mut rate = sum_rate(&chan, &sol, sigma2);
    for _ in 0..inner_passes {
        let state = SurrogateState::from_channel(&chan, &sol, sigma2);
        let step = solve_beamforming_subproblem(cfg, &chan, &sol, &state, &ao.solver)?;
        let old = std::mem::replace(&mut sol.w, step.w);
        let r = sum_rate(&chan, &sol, sigma2);
        if r >= rate {
            rate = r;
        } else {
            sol.w = old;
        }
    }
    ind.fitness = rate;
    ind.w = sol.w;
    Ok(())
}

/// Real-coded genetic search over phases and positions.
pub fn ga_optimize<R: Rng + ?Sized>(
    model: &ChannelModel,
    ga: &GaSettings,
    ao: &AoSettings,
    rng: &mut R,
) -> Result<(SolutionState, f64)> {
    Ok(ga_optimize_with_history(model, ga, ao, rng)?.0)
}

/// As [`ga_optimize`], also returning the best fitness after each
/// generation.
pub fn ga_optimize_with_history<R: Rng + ?Sized>(
    model: &ChannelModel,
    ga: &GaSettings,
    ao: &AoSettings,
    rng: &mut R,
) -> Result<((SolutionState, f64), Vec<f64>)> {
    let cfg = &model.cfg;
    let sigma2 = cfg.sigma2();
    let grid = initial_layout(cfg);
    let base = Individual {
        phases: vec![0.0; cfg.n_elements],
        p: grid.p.clone(),
        r: grid.r.clone(),
        fitness: f64::NEG_INFINITY,
        w: Vec::new(),
    };
    if ga.budget == 0 {
        let chan = model.assemble_for(&grid)?;
        let mut sol = grid;
        sol.w = matched_filter(&effective_channel(&chan, &sol.theta), cfg.pmax());
        let rate = sum_rate(&chan, &sol, sigma2);
        return Ok(((sol, rate), Vec::new()));
    }

    let pos_noise = Normal::new(0.0, ga.sigma_pos).expect("positive deviation");
    let phase_noise = Normal::new(0.0, ga.sigma_phase).expect("positive deviation");
    let mut used = 0;
    let mut population = Vec::with_capacity(ga.population);

    let fixed_up = |ind: &mut Individual| {
        let ok_p = repair(&mut ind.p, cfg.aperture_fa, cfg.dth_fa);
        let ok_r = repair(&mut ind.r, cfg.aperture_lm, cfg.dth_lm);
        if !ok_p {
            ind.p = grid.p.clone();
        }
        if !ok_r {
            ind.r = grid.r.clone();
        }
    };

    for i in 0..ga.population.min(ga.budget) {
        let mut ind = base.clone();
        if i > 0 {
            ind.phases.iter_mut().for_each(|a| *a = 2.0 * PI * rng.gen::<f64>());
            for q in ind.p.iter_mut().chain(ind.r.iter_mut()) {
                q[0] += pos_noise.sample(rng);
                q[1] += pos_noise.sample(rng);
            }
            fixed_up(&mut ind);
        }
        evaluate(model, &mut ind, ga.inner_passes, ao)?;
        used += 1;
        population.push(ind);
    }

    let by_fitness = |a: &Individual, b: &Individual| b.fitness.total_cmp(&a.fitness);
    population.sort_by(by_fitness);
    let mut history = vec![population[0].fitness];

    while used < ga.budget {
        let mut next: Vec<Individual> = population.iter().take(ga.elitism).cloned().collect();
        while next.len() < ga.population && used < ga.budget {
            let pa = tournament(&population, ga.tournament, rng);
            let pb = tournament(&population, ga.tournament, rng);
            let mut child = crossover(pa, pb, rng);
            for a in child.phases.iter_mut() {
                if rng.gen::<f64>() < ga.mutation_rate {
                    *a += phase_noise.sample(rng);
                }
            }
            for q in child.p.iter_mut().chain(child.r.iter_mut()) {
                for c in q.iter_mut() {
                    if rng.gen::<f64>() < ga.mutation_rate {
                        *c += pos_noise.sample(rng);
                    }
                }
            }
            fixed_up(&mut child);
            evaluate(model, &mut child, ga.inner_passes, ao)?;
            used += 1;
            next.push(child);
        }
        if next.len() < population.len() {
            // budget ran out mid-generation: keep the best of the old pool
            next.extend(population.iter().skip(ga.elitism).take(population.len() - next.len()).cloned());
        }
        next.sort_by(by_fitness);
        population = next;
        history.push(population[0].fitness);
    }

    let best = population.swap_remove(0);
    let sol = SolutionState {
        theta: best.theta(),
        w: best.w,
        p: best.p,
        r: best.r,
    };
    Ok(((sol, best.fitness), history))
}

fn tournament<'a, R: Rng + ?Sized>(pool: &'a [Individual], size: usize, rng: &mut R) -> &'a Individual {
    let mut best: Option<&Individual> = None;
    for _ in 0..size.max(1) {
        let cand = pool.choose(rng).expect("non-empty population");
        if best.map_or(true, |b| cand.fitness > b.fitness) {
            best = Some(cand);
        }
    }
    best.expect("at least one draw")
}

/// Uniform crossover per phase and per point.
fn crossover<R: Rng + ?Sized>(a: &Individual, b: &Individual, rng: &mut R) -> Individual {
    let pick = |rng: &mut R| rng.gen::<bool>();
    Individual {
        phases: a.phases.iter().zip(&b.phases).map(|(x, y)| if pick(rng) { *x } else { *y }).collect(),
        p: a.p.iter().zip(&b.p).map(|(x, y)| if pick(rng) { *x } else { *y }).collect(),
        r: a.r.iter().zip(&b.r).map(|(x, y)| if pick(rng) { *x } else { *y }).collect(),
        fitness: f64::NEG_INFINITY,
        w: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::draw_small_scale;
    use crate::model::{derive_link_geometry, draw_user_positions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scenario(cfg: &SystemConfig, seed: u64) -> ChannelModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let users = draw_user_positions(cfg, &mut rng);
        let geo = derive_link_geometry(cfg, &users).unwrap();
        let draw = draw_small_scale(cfg, &mut rng);
        ChannelModel::new(cfg.clone(), geo, draw)
    }

    fn small(k: usize) -> SystemConfig {
        SystemConfig {
            n_antennas: 4,
            n_elements: 4,
            n_users: k,
            i_outer: 6,
            ..SystemConfig::desk_scale()
        }
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in [
            Scheme::Proposed,
            Scheme::WoBf,
            Scheme::WoTheta,
            Scheme::WoFa,
            Scheme::WoLim,
            Scheme::RigidBsRis,
            Scheme::Zf,
            Scheme::Ga,
            Scheme::Partial { rho_fa: 0.25, rho_lm: 0.75 },
        ] {
            assert_eq!(s.to_string().parse::<Scheme>().unwrap(), s);
        }
        assert_eq!("ris_bs".parse::<Scheme>().unwrap(), Scheme::RigidBsRis);
        assert!("partial_1.5_0".parse::<Scheme>().is_err());
        assert!("bogus".parse::<Scheme>().unwrap_err().is_config());
    }

    #[test]
    fn no_lim_single_user_matches_closed_form() {
        let cfg = small(1);
        let model = scenario(&cfg, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = run_baseline(Scheme::WoLim, &model, &BaselineOptions::new(&cfg), &mut rng).unwrap();
        let chan = model.clone().without_lim().assemble_for(&out.sol).unwrap();
        let want = (1.0 + cfg.pmax() * chan.h_k[0].norm_squared() / cfg.sigma2()).log2();
        assert!((out.sum_rate - want).abs() <= 1e-4, "{} vs {want}", out.sum_rate);
    }

    #[test]
    fn frozen_partial_equals_rigid() {
        let cfg = small(2);
        let model = scenario(&cfg, 2);
        let opts = BaselineOptions::new(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = run_baseline(Scheme::Partial { rho_fa: 0.0, rho_lm: 0.0 }, &model, &opts, &mut rng).unwrap();
        let b = run_baseline(Scheme::RigidBsRis, &model, &opts, &mut rng).unwrap();
        assert_eq!(a.sum_rate, b.sum_rate);
        assert_eq!(a.sol, b.sol);
    }

    #[test]
    fn zf_nulls_cross_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let h: Vec<DVector<C64>> = (0..2).map(|_| DVector::from_fn(2, |_, _| gaussian_c64(&mut rng))).collect();
            let w = zf_beamforming(&h, 4.0).unwrap();
            let total: f64 = w.iter().map(|x| x.norm_squared()).sum();
            assert!((total - 4.0).abs() < 1e-12);
            for k in 0..2 {
                for j in 0..2 {
                    if j != k {
                        let cross = h[k].dot(&w[j]).norm();
                        assert!(cross <= 1e-8 * w[j].norm() * h[k].norm(), "{cross}");
                    }
                }
            }
        }
    }

    #[test]
    fn zf_on_orthonormal_rows_is_matched() {
        let h = vec![
            DVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]),
            DVector::from_vec(vec![C64::new(0.0, 0.0), C64::new(0.0, 1.0)]),
        ];
        let w = zf_beamforming(&h, 2.0).unwrap();
        for k in 0..2 {
            let mf = h[k].map(|z| z.conj());
            assert!((&w[k] - mf).norm() < 1e-12);
        }
    }

    #[test]
    fn zf_rejects_more_users_than_antennas() {
        let h: Vec<DVector<C64>> = (0..3).map(|i| DVector::from_element(2, C64::new(i as f64 + 1.0, 0.0))).collect();
        assert!(matches!(zf_beamforming(&h, 1.0), Err(Error::ZfInfeasible(_))));
    }

    #[test]
    fn zero_budget_returns_grid() {
        let cfg = small(2);
        let model = scenario(&cfg, 4);
        let mut ga = GaSettings::new(&cfg);
        ga.budget = 0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ((sol, _), history) = ga_optimize_with_history(&model, &ga, &AoSettings::new(&cfg), &mut rng).unwrap();
        let grid = initial_layout(&cfg);
        assert_eq!(sol.p, grid.p);
        assert_eq!(sol.r, grid.r);
        assert_eq!(sol.theta, grid.theta);
        assert!(history.is_empty());
    }

    #[test]
    fn elitism_keeps_best_fitness() {
        let cfg = small(2);
        let model = scenario(&cfg, 5);
        let mut ga = GaSettings::new(&cfg);
        ga.budget = 96;
        ga.population = 16;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ((sol, rate), history) = ga_optimize_with_history(&model, &ga, &AoSettings::new(&cfg), &mut rng).unwrap();
        assert!(history.len() > 2);
        for pair in history.windows(2) {
            assert!(pair[1] >= pair[0]);
        }
        let f = sol.feasibility(&cfg);
        assert!(f.fa_spacing <= 0.0 && f.lm_spacing <= 0.0 && f.aperture <= 0.0);
        assert!(f.power_excess <= 1e-8);
        assert_eq!(rate, *history.last().unwrap());
    }

    #[test]
    fn repair_restores_spacing() {
        let mut pts = vec![[0.0, 0.0], [0.01, 0.0], [0.6, 0.6], [-0.6, 0.0]];
        assert!(repair(&mut pts, [1.0, 1.0], 0.1));
        for (i, a) in pts.iter().enumerate() {
            assert!(a[0].abs() <= 0.5 && a[1].abs() <= 0.5);
            for b in &pts[i + 1..] {
                assert!(squared_distance(*a, *b) >= 0.1);
            }
        }
    }

    #[test]
    fn every_scheme_is_feasible_and_deterministic() {
        let cfg = small(2);
        let model = scenario(&cfg, 6);
        let mut opts = BaselineOptions::new(&cfg);
        opts.ga.budget = 40;
        opts.ga.population = 8;
        for scheme in [
            Scheme::Proposed,
            Scheme::WoBf,
            Scheme::WoTheta,
            Scheme::WoFa,
            Scheme::WoLim,
            Scheme::RigidBsRis,
            Scheme::Zf,
            Scheme::Ga,
            Scheme::Partial { rho_fa: 0.5, rho_lm: 0.5 },
        ] {
            let run = || run_baseline(scheme, &model, &opts, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
            let (a, b) = (run(), run());
            assert_eq!(a.sum_rate, b.sum_rate, "{scheme}");
            assert_eq!(a.sol, b.sol, "{scheme}");
            let f = a.sol.feasibility(&cfg);
            assert!(f.power_excess <= 1e-8, "{scheme}");
            assert!(f.fa_spacing <= 1e-8 && f.lm_spacing <= 1e-8 && f.aperture <= 1e-8, "{scheme} {f:?}");
            assert!(f.unit_modulus <= 1e-12, "{scheme}");
        }
    }
}
