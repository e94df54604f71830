use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::model::config::SystemConfig;
use crate::C64;

/// Small-scale fading for one Monte Carlo drop: i.i.d. CN(0, 1) entries,
/// frozen for every iteration of that drop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallScaleDraw {
    /// M×N, base station to metasurface.
    pub h_bar: DMatrix<C64>,
    /// K vectors of length N, base station to user.
    pub h_bar_k: Vec<DVector<C64>>,
    /// K vectors of length M, metasurface to user.
    pub g_bar_k: Vec<DVector<C64>>,
}

fn cn01<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(s * re, s * im)
}

/// Draws in a fixed order: `h_bar` column-major, then every `h_bar_k`, then
/// every `g_bar_k`.
pub fn draw_small_scale<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> SmallScaleDraw {
    let (n, m, k) = (cfg.n_antennas, cfg.n_elements, cfg.n_users);
    let h_bar = DMatrix::from_fn(m, n, |_, _| cn01(rng));
    let h_bar_k = (0..k).map(|_| DVector::from_fn(n, |_, _| cn01(rng))).collect();
    let g_bar_k = (0..k).map(|_| DVector::from_fn(m, |_, _| cn01(rng))).collect();
    SmallScaleDraw { h_bar, h_bar_k, g_bar_k }
}

impl SmallScaleDraw {
    pub fn zeros(cfg: &SystemConfig) -> Self {
        let (n, m, k) = (cfg.n_antennas, cfg.n_elements, cfg.n_users);
        SmallScaleDraw {
            h_bar: DMatrix::zeros(m, n),
            h_bar_k: vec![DVector::zeros(n); k],
            g_bar_k: vec![DVector::zeros(m); k],
        }
    }
}
