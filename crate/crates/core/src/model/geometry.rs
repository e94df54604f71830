//! Large-scale link geometry between the base station, the metasurface and
//! the users. Distances and angles are taken between site centres and stay
//! fixed while antennas and elements move inside their apertures.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::config::SystemConfig;

/// Azimuth and elevation of a link direction, radians.
///
/// Azimuth is measured in the horizontal plane from the +x axis (the array
/// broadside); elevation is the angle above that plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkAngles {
    pub azimuth: f64,
    pub elevation: f64,
}

impl LinkAngles {
    /// In-aperture projection (sinφ cosϑ, sinφ sinϑ) used by the steering phase.
    pub fn direction(&self) -> [f64; 2] {
        let s = self.azimuth.sin();
        [s * self.elevation.cos(), s * self.elevation.sin()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkGeometry {
    /// Base station to metasurface distance, m.
    pub d1: f64,
    /// Base station to user distances, m.
    pub d_k: Vec<f64>,
    /// Metasurface to user distances, m.
    pub d2_k: Vec<f64>,
    /// Departure from the base station towards the metasurface.
    pub fas_aod: LinkAngles,
    /// Arrival at the metasurface from the base station.
    pub lim_aoa: LinkAngles,
    /// Departure from the metasurface towards each user.
    pub lim_aod_k: Vec<LinkAngles>,
    /// Departure from the base station towards each user.
    pub fas_to_user_aod_k: Vec<LinkAngles>,
}

fn as3(v: &[f64]) -> [f64; 3] {
    [v[0], v[1], v.get(2).copied().unwrap_or(0.0)]
}

fn link(from: [f64; 3], to: [f64; 3], what: &str) -> Result<(f64, LinkAngles)> {
    let d = [to[0] - from[0], to[1] - from[1], to[2] - from[2]];
    let horizontal = d[0].hypot(d[1]);
    let dist = horizontal.hypot(d[2]);
    if !(dist > 0.0) {
        return Err(Error::Geometry(format!("zero distance on link {what}")));
    }
    Ok((
        dist,
        LinkAngles {
            azimuth: d[1].atan2(d[0]),
            elevation: d[2].atan2(horizontal),
        },
    ))
}

/// Builds distances and angles for the given user positions (2-D or 3-D,
/// missing height taken from the user-disk centre).
pub fn derive_link_geometry(cfg: &SystemConfig, users: &[Vec<f64>]) -> Result<LinkGeometry> {
    if users.len() != cfg.n_users {
        return Err(Error::Dimension(format!(
            "expected {} user positions, got {}",
            cfg.n_users,
            users.len()
        )));
    }
    let fas = as3(&cfg.fas_center);
    let lim = as3(&cfg.lim_center);
    let uz = cfg.user_center.get(2).copied().unwrap_or(0.0);
    let (d1, fas_aod) = link(fas, lim, "FAS-LIM")?;
    let (_, lim_aoa) = link(lim, fas, "LIM-FAS")?;
    let mut geo = LinkGeometry {
        d1,
        d_k: Vec::with_capacity(users.len()),
        d2_k: Vec::with_capacity(users.len()),
        fas_aod,
        lim_aoa,
        lim_aod_k: Vec::with_capacity(users.len()),
        fas_to_user_aod_k: Vec::with_capacity(users.len()),
    };
    for (k, u) in users.iter().enumerate() {
        if u.len() < 2 {
            return Err(Error::Dimension(format!("user {k} needs at least 2 coordinates")));
        }
        let u = [u[0], u[1], u.get(2).copied().unwrap_or(uz)];
        let (dk, a) = link(fas, u, &format!("FAS-user{k}"))?;
        let (d2, b) = link(lim, u, &format!("LIM-user{k}"))?;
        geo.d_k.push(dk);
        geo.fas_to_user_aod_k.push(a);
        geo.d2_k.push(d2);
        geo.lim_aod_k.push(b);
    }
    Ok(geo)
}

/// Uniform draw of `k` user positions in the configured disk.
pub fn draw_user_positions<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Vec<Vec<f64>> {
    (0..cfg.n_users)
        .map(|_| {
            let r = cfg.user_radius * rng.gen::<f64>().sqrt();
            let a = 2.0 * PI * rng.gen::<f64>();
            let mut p = cfg.user_center.clone();
            p[0] += r * a.cos();
            p[1] += r * a.sin();
            p
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg_with_users(k: usize) -> SystemConfig {
        SystemConfig {
            n_users: k,
            ..SystemConfig::default()
        }
    }

    #[test]
    fn fas_lim_distance() {
        let geo = derive_link_geometry(&cfg_with_users(1), &[vec![100.0, 0.0]]).unwrap();
        assert!((geo.d1 - (50f64 * 50.0 + 20.0 * 20.0).sqrt()).abs() < 1e-12);
        assert!((geo.d1 - 53.8516).abs() < 1e-4);
    }

    #[test]
    fn user_on_axis() {
        let geo = derive_link_geometry(&cfg_with_users(1), &[vec![100.0, 0.0]]).unwrap();
        assert_eq!(geo.d_k[0], 100.0);
        assert_eq!(geo.fas_to_user_aod_k[0].azimuth, 0.0);
        assert_eq!(geo.fas_to_user_aod_k[0].elevation, 0.0);
    }

    #[test]
    fn user_at_metasurface_is_rejected() {
        let err = derive_link_geometry(&cfg_with_users(1), &[vec![50.0, 20.0]]).unwrap_err();
        assert!(matches!(err, Error::Geometry(_)));
    }

    #[test]
    fn users_are_permutation_equivariant() {
        let cfg = cfg_with_users(3);
        let users = vec![vec![95.0, 3.0], vec![104.0, -6.0], vec![100.0, 8.0]];
        let perm = [2, 0, 1];
        let permuted: Vec<_> = perm.iter().map(|&i| users[i].clone()).collect();
        let a = derive_link_geometry(&cfg, &users).unwrap();
        let b = derive_link_geometry(&cfg, &permuted).unwrap();
        for (slot, &i) in perm.iter().enumerate() {
            assert_eq!(a.d_k[i], b.d_k[slot]);
            assert_eq!(a.d2_k[i], b.d2_k[slot]);
            assert_eq!(a.lim_aod_k[i], b.lim_aod_k[slot]);
        }
    }

    #[test]
    fn drawn_users_lie_in_disk() {
        let cfg = cfg_with_users(200);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for u in draw_user_positions(&cfg, &mut rng) {
            assert!((u[0] - 100.0).hypot(u[1]) <= 10.0 + 1e-12);
        }
    }
}
