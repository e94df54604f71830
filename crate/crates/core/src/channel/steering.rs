use std::f64::consts::PI;

use nalgebra::DVector;

use crate::model::layout::Point2;
use crate::C64;

/// Array response of a planar array: entry n is
/// `exp(-j·2π/λ·(x_n sinφ cosϑ + y_n sinφ sinϑ))`.
pub fn steering_vector(positions: &[Point2], azimuth: f64, elevation: f64, lambda_m: f64) -> DVector<C64> {
    let u = [
        azimuth.sin() * elevation.cos(),
        azimuth.sin() * elevation.sin(),
    ];
    steering_from_direction(positions, u, lambda_m)
}

/// Same as [`steering_vector`] with the in-aperture direction
/// `u = (sinφ cosϑ, sinφ sinϑ)` precomputed.
pub fn steering_from_direction(positions: &[Point2], u: [f64; 2], lambda_m: f64) -> DVector<C64> {
    let k0 = 2.0 * PI / lambda_m;
    DVector::from_iterator(
        positions.len(),
        positions.iter().map(|p| {
            let phase = -k0 * (p[0] * u[0] + p[1] * u[1]);
            C64::from_polar(1.0, phase)
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn origin_gives_ones() {
        let a = steering_vector(&[[0.0, 0.0]; 3], 0.7, 0.2, 0.1);
        assert!(a.iter().all(|z| (*z - C64::new(1.0, 0.0)).norm() == 0.0));
    }

    #[test]
    fn broadside_gives_ones() {
        let a = steering_vector(&[[0.3, -0.2], [0.1, 0.4]], 0.0, 1.1, 0.1);
        assert!(a.iter().all(|z| (*z - C64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn quarter_wavelength_offset() {
        let a = steering_vector(&[[0.025, 0.0]], PI / 2.0, 0.0, 0.1);
        assert!((a[0] - C64::new(0.0, -1.0)).norm() < 1e-15);
    }

    proptest! {
        #[test]
        fn unit_modulus_and_translation_covariance(
            pts in prop::collection::vec((-0.5f64..0.5, -0.5f64..0.5), 1..8),
            az in -3.2f64..3.2, el in -1.5f64..1.5,
            tx in -0.5f64..0.5, ty in -0.5f64..0.5,
        ) {
            let p: Vec<Point2> = pts.iter().map(|&(x, y)| [x, y]).collect();
            let shifted: Vec<Point2> = p.iter().map(|q| [q[0] + tx, q[1] + ty]).collect();
            let a = steering_vector(&p, az, el, 0.1);
            let b = steering_vector(&shifted, az, el, 0.1);
            for z in a.iter() {
                prop_assert!((z.norm() - 1.0).abs() < 1e-12);
            }
            let common = b[0] / a[0];
            prop_assert!((common.norm() - 1.0).abs() < 1e-12);
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((*y - *x * common).norm() < 1e-9);
            }
        }
    }
}
