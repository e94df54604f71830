use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::channel::bessel::bessel_j0;
use crate::error::{Error, Result};
use crate::model::layout::Point2;

/// Eigenvalues above `-PSD_TOLERANCE` are clamped to zero; anything more
/// negative is rejected.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// `[R]_ij = J0(2π‖x_i − x_j‖/λ)`.
pub fn jakes_correlation(positions: &[Point2], lambda_m: f64) -> DMatrix<f64> {
    let n = positions.len();
    let k0 = 2.0 * PI / lambda_m;
    let mut r = DMatrix::identity(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let dx = positions[i][0] - positions[j][0];
            let dy = positions[i][1] - positions[j][1];
            let v = bessel_j0(k0 * dx.hypot(dy));
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    r
}

/// Symmetric PSD square root `U·Λ₊^{1/2}·Uᵀ` with its eigenbasis kept for
/// the Sylvester solves of the gradient code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqrtFactor {
    pub sqrt: DMatrix<f64>,
    /// Orthonormal eigenvectors (columns).
    pub u: DMatrix<f64>,
    /// Square roots of the clamped eigenvalues.
    pub sqrt_eigs: DVector<f64>,
}

impl SqrtFactor {
    pub fn identity(n: usize) -> Self {
        SqrtFactor {
            sqrt: DMatrix::identity(n, n),
            u: DMatrix::identity(n, n),
            sqrt_eigs: DVector::from_element(n, 1.0),
        }
    }
}

pub fn psd_sqrt(r: &DMatrix<f64>) -> Result<SqrtFactor> {
    let n = r.nrows();
    if r.ncols() != n {
        return Err(Error::Dimension(format!("psd_sqrt needs a square matrix, got {}x{}", n, r.ncols())));
    }
    if n == 0 {
        return Ok(SqrtFactor::identity(0));
    }
    let eig = SymmetricEigen::new(r.clone());
    let min = eig.eigenvalues.min();
    if min < -PSD_TOLERANCE {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    let sqrt_eigs = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let u = eig.eigenvectors;
    let scaled = DMatrix::from_fn(n, n, |i, j| u[(i, j)] * sqrt_eigs[j]);
    let mut sqrt = &scaled * u.transpose();
    // exact symmetry
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (sqrt[(i, j)] + sqrt[(j, i)]);
            sqrt[(i, j)] = v;
            sqrt[(j, i)] = v;
        }
    }
    Ok(SqrtFactor { sqrt, u, sqrt_eigs })
}

/// Correlation matrices of the base-station array (`fa`) and of the
/// metasurface on its departure (`lm_t`) and arrival (`lm_r`) sides, with
/// their square roots. With correlation disabled all three are identities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSet {
    pub enabled: bool,
    pub r_fa: DMatrix<f64>,
    pub r_lm_t: DMatrix<f64>,
    pub r_lm_r: DMatrix<f64>,
    pub sqrt_fa: SqrtFactor,
    pub sqrt_lm_t: SqrtFactor,
    pub sqrt_lm_r: SqrtFactor,
}

impl CorrelationSet {
    pub fn build(p: &[Point2], r: &[Point2], lambda_m: f64, enabled: bool) -> Result<Self> {
        if !enabled {
            let (n, m) = (p.len(), r.len());
            return Ok(CorrelationSet {
                enabled,
                r_fa: DMatrix::identity(n, n),
                r_lm_t: DMatrix::identity(m, m),
                r_lm_r: DMatrix::identity(m, m),
                sqrt_fa: SqrtFactor::identity(n),
                sqrt_lm_t: SqrtFactor::identity(m),
                sqrt_lm_r: SqrtFactor::identity(m),
            });
        }
        let r_fa = jakes_correlation(p, lambda_m);
        let r_lm = jakes_correlation(r, lambda_m);
        let sqrt_fa = psd_sqrt(&r_fa)?;
        let sqrt_lm = psd_sqrt(&r_lm)?;
        Ok(CorrelationSet {
            enabled,
            r_fa,
            r_lm_t: r_lm.clone(),
            r_lm_r: r_lm,
            sqrt_fa,
            sqrt_lm_t: sqrt_lm.clone(),
            sqrt_lm_r: sqrt_lm,
        })
    }
}
