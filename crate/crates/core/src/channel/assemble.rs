use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::channel::correlation::CorrelationSet;
use crate::channel::fading::SmallScaleDraw;
use crate::channel::steering::steering_from_direction;
use crate::error::{Error, Result};
use crate::model::config::SystemConfig;
use crate::model::geometry::LinkGeometry;
use crate::model::layout::Point2;
use crate::model::solution::SolutionState;
use crate::C64;

/// Gain constants of the per-user decomposition
/// `h_eff = c1·h_LoS^H + c2·g_LoS^H Θ H_LoS + c3·h_NLoS^H + c4·g_NLoS^H Θ H_NLoS
///        + c5·(g_LoS^H Θ H_NLoS + g_NLoS^H Θ H_LoS)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RicianScaling {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
}

impl RicianScaling {
    pub fn new(h0: f64, kappa: f64, alpha: f64, d1: f64, dk: f64, d2k: f64) -> Self {
        let direct = h0 / dk.powf(alpha);
        let cascade = h0 * h0 / (d1 * d2k).powf(alpha);
        let kp1 = kappa + 1.0;
        RicianScaling {
            c1: (direct * kappa / kp1).sqrt(),
            c2: (cascade * kappa * kappa / (kp1 * kp1)).sqrt(),
            c3: (direct / kp1).sqrt(),
            c4: (cascade / (kp1 * kp1)).sqrt(),
            c5: (cascade * kappa / (kp1 * kp1)).sqrt(),
        }
    }
}

/// LoS/NLoS building blocks kept for gradient evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelParts {
    pub k0: f64,
    /// In-aperture directions (sinφ cosϑ, sinφ sinϑ) of each steering vector.
    pub u_fa_lim: [f64; 2],
    pub u_lm_r: [f64; 2],
    pub u_fa_user: Vec<[f64; 2]>,
    pub u_lm_t: Vec<[f64; 2]>,
    pub a_fa_lim: DVector<C64>,
    pub a_lm_r: DVector<C64>,
    pub a_fa_user: Vec<DVector<C64>>,
    pub a_lm_t: Vec<DVector<C64>>,
    /// a_LM,r · a_FA^H.
    pub h_los: DMatrix<C64>,
    /// R_r^{1/2} H̄ R^{1/2}.
    pub h_nlos: DMatrix<C64>,
    /// R^{1/2} h̄_k.
    pub h_nlos_k: Vec<DVector<C64>>,
    /// R_t^{1/2} ḡ_k.
    pub g_nlos_k: Vec<DVector<C64>>,
    pub lim_enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    /// M×N base station to metasurface.
    pub h_mat: DMatrix<C64>,
    /// Base station to user k, length N.
    pub h_k: Vec<DVector<C64>>,
    /// Metasurface to user k, length M.
    pub g_k: Vec<DVector<C64>>,
    pub scaling: Vec<RicianScaling>,
    pub corr: CorrelationSet,
    pub draw: SmallScaleDraw,
    pub parts: ChannelParts,
}

impl ChannelRealization {
    pub fn n_antennas(&self) -> usize {
        self.h_mat.ncols()
    }

    pub fn n_elements(&self) -> usize {
        self.h_mat.nrows()
    }

    pub fn n_users(&self) -> usize {
        self.h_k.len()
    }
}

/// Everything needed to rebuild the channel at new positions: the scenario,
/// the large-scale geometry and the frozen small-scale draw.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    pub cfg: SystemConfig,
    pub geo: LinkGeometry,
    pub draw: SmallScaleDraw,
    /// When false the reflected path is removed (g_k ≡ 0).
    pub lim_enabled: bool,
}

impl ChannelModel {
    pub fn new(cfg: SystemConfig, geo: LinkGeometry, draw: SmallScaleDraw) -> Self {
        ChannelModel {
            cfg,
            geo,
            draw,
            lim_enabled: true,
        }
    }

    pub fn without_lim(mut self) -> Self {
        self.lim_enabled = false;
        self
    }

    pub fn assemble(&self, p: &[Point2], r: &[Point2]) -> Result<ChannelRealization> {
        build(&self.cfg, &self.geo, p, r, &self.draw, self.lim_enabled)
    }

    pub fn assemble_for(&self, sol: &SolutionState) -> Result<ChannelRealization> {
        self.assemble(&sol.p, &sol.r)
    }
}

/// Assembles H, h_k and g_k at the positions in `sol` from the frozen draw.
pub fn assemble_channels(
    cfg: &SystemConfig,
    geo: &LinkGeometry,
    sol: &SolutionState,
    draw: &SmallScaleDraw,
) -> Result<ChannelRealization> {
    build(cfg, geo, &sol.p, &sol.r, draw, true)
}

fn build(
    cfg: &SystemConfig,
    geo: &LinkGeometry,
    p: &[Point2],
    r: &[Point2],
    draw: &SmallScaleDraw,
    lim_enabled: bool,
) -> Result<ChannelRealization> {
    let (n, m, k) = (p.len(), r.len(), geo.d_k.len());
    if draw.h_bar.shape() != (m, n) || draw.h_bar_k.len() != k || draw.g_bar_k.len() != k {
        return Err(Error::Dimension(format!(
            "draw shaped for H̄ {:?} / {} users, positions give {m}x{n} / {k}",
            draw.h_bar.shape(),
            draw.h_bar_k.len()
        )));
    }
    let lambda = cfg.lambda_m;
    let k0 = 2.0 * std::f64::consts::PI / lambda;
    let h0 = cfg.h0();
    let kappa = cfg.kappa;
    let w_los = (kappa / (kappa + 1.0)).sqrt();
    let w_nlos = (1.0 / (kappa + 1.0)).sqrt();

    let corr = CorrelationSet::build(p, r, lambda, cfg.correlation)?;

    let u_fa_lim = geo.fas_aod.direction();
    let u_lm_r = geo.lim_aoa.direction();
    let u_fa_user: Vec<_> = geo.fas_to_user_aod_k.iter().map(|a| a.direction()).collect();
    let u_lm_t: Vec<_> = geo.lim_aod_k.iter().map(|a| a.direction()).collect();

    let a_fa_lim = steering_from_direction(p, u_fa_lim, lambda);
    let a_lm_r = steering_from_direction(r, u_lm_r, lambda);
    let a_fa_user: Vec<_> = u_fa_user.iter().map(|u| steering_from_direction(p, *u, lambda)).collect();
    let a_lm_t: Vec<_> = u_lm_t.iter().map(|u| steering_from_direction(r, *u, lambda)).collect();

    let sqrt_fa = corr.sqrt_fa.sqrt.map(|v| C64::new(v, 0.0));
    let sqrt_t = corr.sqrt_lm_t.sqrt.map(|v| C64::new(v, 0.0));
    let sqrt_r = corr.sqrt_lm_r.sqrt.map(|v| C64::new(v, 0.0));

    let h_los = &a_lm_r * a_fa_lim.adjoint();
    let h_nlos = &sqrt_r * &draw.h_bar * &sqrt_fa;
    let h_nlos_k: Vec<_> = draw.h_bar_k.iter().map(|h| &sqrt_fa * h).collect();
    let g_nlos_k: Vec<_> = draw.g_bar_k.iter().map(|g| &sqrt_t * g).collect();

    let pl1 = (h0 / geo.d1.powf(cfg.alpha)).sqrt();
    let h_mat = (&h_los * C64::new(w_los, 0.0) + &h_nlos * C64::new(w_nlos, 0.0)) * C64::new(pl1, 0.0);

    let mut h_k = Vec::with_capacity(k);
    let mut g_k = Vec::with_capacity(k);
    let mut scaling = Vec::with_capacity(k);
    for user in 0..k {
        let plk = (h0 / geo.d_k[user].powf(cfg.alpha)).sqrt();
        let pl2 = (h0 / geo.d2_k[user].powf(cfg.alpha)).sqrt();
        h_k.push((&a_fa_user[user] * C64::new(w_los, 0.0) + &h_nlos_k[user] * C64::new(w_nlos, 0.0)) * C64::new(plk, 0.0));
        let mut sc = RicianScaling::new(h0, kappa, cfg.alpha, geo.d1, geo.d_k[user], geo.d2_k[user]);
        if lim_enabled {
            g_k.push((&a_lm_t[user] * C64::new(w_los, 0.0) + &g_nlos_k[user] * C64::new(w_nlos, 0.0)) * C64::new(pl2, 0.0));
        } else {
            g_k.push(DVector::zeros(m));
            sc.c2 = 0.0;
            sc.c4 = 0.0;
            sc.c5 = 0.0;
        }
        scaling.push(sc);
    }

    Ok(ChannelRealization {
        h_mat,
        h_k,
        g_k,
        scaling,
        corr,
        draw: draw.clone(),
        parts: ChannelParts {
            k0,
            u_fa_lim,
            u_lm_r,
            u_fa_user,
            u_lm_t,
            a_fa_lim,
            a_lm_r,
            a_fa_user,
            a_lm_t,
            h_los,
            h_nlos,
            h_nlos_k,
            g_nlos_k,
            lim_enabled,
        },
    })
}

/// Effective channel `h_k^H + g_k^H Θ H` for every user, returned as the
/// N entries of each row vector.
pub fn effective_channel(chan: &ChannelRealization, theta: &DVector<C64>) -> Vec<DVector<C64>> {
    (0..chan.n_users())
        .map(|k| effective_channel_user(chan, theta, k))
        .collect()
}

pub fn effective_channel_user(chan: &ChannelRealization, theta: &DVector<C64>, k: usize) -> DVector<C64> {
    let weights = chan.g_k[k].zip_map(theta, |g, t| g.conj() * t);
    let reflected = chan.h_mat.transpose() * weights;
    chan.h_k[k].map(|z| z.conj()) + reflected
}

/// `D_k = diag(conj(g_k))·H`, so that `h_eff = h_k^H + θᵀ D_k`.
pub fn phase_coupling(chan: &ChannelRealization, k: usize) -> DMatrix<C64> {
    let g = &chan.g_k[k];
    let mut d = chan.h_mat.clone();
    for (i, mut row) in d.row_iter_mut().enumerate() {
        row *= g[i].conj();
    }
    d
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub sinr: Vec<f64>,
    pub rate: Vec<f64>,
    /// bits/s/Hz
    pub sum_rate: f64,
}

/// SINR and log2 rates from precomputed effective channels.
pub fn rates_from_effective(h_eff: &[DVector<C64>], w: &[DVector<C64>], sigma2: f64) -> RateReport {
    let k = h_eff.len();
    let mut sinr = Vec::with_capacity(k);
    for (user, h) in h_eff.iter().enumerate() {
        let mut signal = 0.0;
        let mut interference = 0.0;
        for (j, wj) in w.iter().enumerate() {
            let g = h.dot(wj).norm_sqr();
            if j == user {
                signal = g;
            } else {
                interference += g;
            }
        }
        sinr.push(signal / (interference + sigma2));
    }
    let rate: Vec<f64> = sinr.iter().map(|g| (1.0 + g).log2()).collect();
    let sum_rate = rate.iter().sum();
    RateReport { sinr, rate, sum_rate }
}

pub fn sinr_and_rate(chan: &ChannelRealization, sol: &SolutionState, sigma2: f64) -> RateReport {
    rates_from_effective(&effective_channel(chan, &sol.theta), &sol.w, sigma2)
}
