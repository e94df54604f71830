//! Scenario configuration.
//!
//! Every field has a default taken from the reference simulation setup, so an
//! empty document is a valid configuration. Decibel quantities are stored as
//! given and converted on access.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::layout::aperture_grid;

/// Power ratio in dB (or dBm) to linear scale (or mW).
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub n_antennas: usize,
    pub n_elements: usize,
    pub n_users: usize,
    /// Path gain at the 1 m reference distance, dB.
    pub h0_db: f64,
    pub alpha: f64,
    pub kappa: f64,
    pub lambda_m: f64,
    pub sigma2_dbm: f64,
    pub pmax_dbm: f64,
    /// (width, height) of the fluid-antenna region, m.
    pub aperture_fa: [f64; 2],
    /// (width, height) of the metasurface region, m.
    pub aperture_lm: [f64; 2],
    /// Minimum squared spacing between antennas, m².
    pub dth_fa: f64,
    /// Minimum squared spacing between elements, m².
    pub dth_lm: f64,
    /// Unit-modulus penalty weight.
    pub xi: f64,
    pub i_outer: usize,
    /// Site coordinates, 2-D or 3-D, m.
    pub fas_center: Vec<f64>,
    pub lim_center: Vec<f64>,
    pub user_center: Vec<f64>,
    pub user_radius: f64,
    /// Jakes spatial correlation in the NLoS components; identity when off.
    pub correlation: bool,
    pub seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            n_antennas: 16,
            n_elements: 16,
            n_users: 8,
            h0_db: -20.0,
            alpha: 2.2,
            kappa: 3.0,
            lambda_m: 0.1,
            sigma2_dbm: -95.0,
            pmax_dbm: 30.0,
            aperture_fa: [1.0, 1.0],
            aperture_lm: [1.0, 1.0],
            dth_fa: 0.1,
            dth_lm: 0.1,
            xi: 1e3,
            i_outer: 20,
            fas_center: vec![0.0, 0.0],
            lim_center: vec![50.0, 20.0],
            user_center: vec![100.0, 0.0],
            user_radius: 10.0,
            correlation: true,
            seed: 1,
        }
    }
}

impl SystemConfig {
    /// Reduced scenario used for quick runs: N = M = 8, K = 4.
    pub fn desk_scale() -> Self {
        SystemConfig {
            n_antennas: 8,
            n_elements: 8,
            n_users: 4,
            ..SystemConfig::default()
        }
    }

    pub fn h0(&self) -> f64 {
        db_to_linear(self.h0_db)
    }

    /// Noise power in mW.
    pub fn sigma2(&self) -> f64 {
        db_to_linear(self.sigma2_dbm)
    }

    /// Power budget in mW.
    pub fn pmax(&self) -> f64 {
        db_to_linear(self.pmax_dbm)
    }

    pub fn from_toml_str(source: &str) -> Result<Self> {
        let cfg: SystemConfig =
            toml::from_str(source).map_err(|e| Error::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("SystemConfig always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("n_antennas", self.n_antennas),
            ("n_elements", self.n_elements),
            ("n_users", self.n_users),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        let positive = [
            ("alpha", self.alpha),
            ("lambda_m", self.lambda_m),
            ("xi", self.xi),
            ("aperture_fa", self.aperture_fa[0].min(self.aperture_fa[1])),
            ("aperture_lm", self.aperture_lm[0].min(self.aperture_lm[1])),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be positive, got {v}")));
            }
        }
        let nonneg = [
            ("kappa", self.kappa),
            ("dth_fa", self.dth_fa),
            ("dth_lm", self.dth_lm),
            ("user_radius", self.user_radius),
        ];
        for (field, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be non-negative, got {v}")));
            }
        }
        for (field, v) in [
            ("h0_db", self.h0_db),
            ("sigma2_dbm", self.sigma2_dbm),
            ("pmax_dbm", self.pmax_dbm),
        ] {
            if !v.is_finite() {
                return Err(Error::config(field, "must be finite"));
            }
        }
        for (field, c) in [
            ("fas_center", &self.fas_center),
            ("lim_center", &self.lim_center),
            ("user_center", &self.user_center),
        ] {
            if !(c.len() == 2 || c.len() == 3) || c.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(field, "expected 2 or 3 finite coordinates"));
            }
        }
        if aperture_grid(self.n_antennas, self.aperture_fa, self.dth_fa).is_none() {
            return Err(Error::config(
                "dth_fa",
                format!(
                    "{} antennas at squared spacing {} do not fit aperture_fa {:?}",
                    self.n_antennas, self.dth_fa, self.aperture_fa
                ),
            ));
        }
        if aperture_grid(self.n_elements, self.aperture_lm, self.dth_lm).is_none() {
            return Err(Error::config(
                "dth_lm",
                format!(
                    "{} elements at squared spacing {} do not fit aperture_lm {:?}",
                    self.n_elements, self.dth_lm, self.aperture_lm
                ),
            ));
        }
        Ok(())
    }
}
