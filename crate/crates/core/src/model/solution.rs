use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::channel::{effective_channel, ChannelRealization};
use crate::model::config::SystemConfig;
use crate::model::layout::{aperture_grid, inside_aperture, min_squared_spacing, Point2};
use crate::C64;

/// The four decision blocks: beamformers, phase-shifts, antenna positions
/// and element positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionState {
    /// One N-vector per user.
    pub w: Vec<DVector<C64>>,
    pub theta: DVector<C64>,
    pub p: Vec<Point2>,
    pub r: Vec<Point2>,
}

/// Violations of the feasibility constraints; all zero for a feasible state.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Feasibility {
    /// Σ‖w‖² − P_max, clipped at 0 (mW).
    pub power_excess: f64,
    /// Largest d_th − ‖p_n − p_n'‖², clipped at 0.
    pub fa_spacing: f64,
    pub lm_spacing: f64,
    /// Largest distance outside the aperture boxes.
    pub aperture: f64,
    /// max_m ||θ_m| − 1|.
    pub unit_modulus: f64,
}

impl SolutionState {
    pub fn total_power(&self) -> f64 {
        self.w.iter().map(|w| w.norm_squared()).sum()
    }

    pub fn unit_modulus_violation(&self) -> f64 {
        self.theta
            .iter()
            .map(|t| (t.norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// θ_m / |θ_m|, leaving zero entries at 1.
    pub fn project_unit_modulus(&mut self) {
        for t in self.theta.iter_mut() {
            let m = t.norm();
            *t = if m > 0.0 { *t / m } else { C64::new(1.0, 0.0) };
        }
    }

    pub fn feasibility(&self, cfg: &SystemConfig) -> Feasibility {
        let box_excess = |pts: &[Point2], ap: [f64; 2]| {
            pts.iter()
                .map(|p| (p[0].abs() - ap[0] / 2.0).max(p[1].abs() - ap[1] / 2.0))
                .fold(0.0, f64::max)
        };
        Feasibility {
            power_excess: (self.total_power() - cfg.pmax()).max(0.0),
            fa_spacing: (cfg.dth_fa - min_squared_spacing(&self.p)).max(0.0),
            lm_spacing: (cfg.dth_lm - min_squared_spacing(&self.r)).max(0.0),
            aperture: box_excess(&self.p, cfg.aperture_fa).max(box_excess(&self.r, cfg.aperture_lm)),
            unit_modulus: self.unit_modulus_violation(),
        }
    }

    pub fn positions_inside(&self, cfg: &SystemConfig, tol: f64) -> bool {
        self.p.iter().all(|p| inside_aperture(*p, cfg.aperture_fa, tol))
            && self.r.iter().all(|r| inside_aperture(*r, cfg.aperture_lm, tol))
    }
}

/// Grid positions and unit phases, with all beamformers zero. This is the
/// geometry the initial channel is drawn for.
pub fn initial_layout(cfg: &SystemConfig) -> SolutionState {
    let p = aperture_grid(cfg.n_antennas, cfg.aperture_fa, cfg.dth_fa)
        .expect("validated config admits an antenna grid");
    let r = aperture_grid(cfg.n_elements, cfg.aperture_lm, cfg.dth_lm)
        .expect("validated config admits an element grid");
    SolutionState {
        w: vec![DVector::zeros(cfg.n_antennas); cfg.n_users],
        theta: DVector::from_element(cfg.n_elements, C64::new(1.0, 0.0)),
        p,
        r,
    }
}

/// Matched-filter beamformers √(P/K)·h_eff^H/‖h_eff‖ for each user. A zero
/// effective channel gets the first unit vector so the budget is still spent.
pub fn matched_filter(h_eff: &[DVector<C64>], pmax: f64) -> Vec<DVector<C64>> {
    let k = h_eff.len().max(1) as f64;
    let amp = (pmax / k).sqrt();
    h_eff
        .iter()
        .map(|h| {
            let norm = h.norm();
            if norm > 0.0 {
                h.map(|z| z.conj()) * C64::new(amp / norm, 0.0)
            } else {
                let mut e = DVector::zeros(h.len());
                e[0] = C64::new(amp, 0.0);
                e
            }
        })
        .collect()
}

/// Initial state: grid positions, θ = 1 and matched-filter beamformers on
/// the channel `chan`, which must have been assembled for
/// [`initial_layout`].
pub fn init_solution(cfg: &SystemConfig, chan: &ChannelRealization) -> SolutionState {
    let mut sol = initial_layout(cfg);
    let h_eff = effective_channel(chan, &sol.theta);
    sol.w = matched_filter(&h_eff, cfg.pmax());
    sol
}
