//! Planar point layouts inside a rectangular aperture.
//!
//! Apertures are centred on the array origin: a region of size (w, h) spans
//! [-w/2, w/2] × [-h/2, h/2] in local array coordinates.

/// A point in local array coordinates, metres.
pub type Point2 = [f64; 2];

/// Inset of the initial grid from the aperture edge, as a fraction of the
/// shorter side. Keeps the grid strictly inside the box constraints.
const GRID_INSET: f64 = 0.01;

/// Required relative slack of the grid spacing over the squared threshold.
const SPACING_SLACK: f64 = 1e-6;

pub fn squared_distance(a: Point2, b: Point2) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Smallest pairwise squared distance (infinity for fewer than two points).
pub fn min_squared_spacing(points: &[Point2]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            best = best.min(squared_distance(points[i], points[j]));
        }
    }
    best
}

pub fn inside_aperture(p: Point2, aperture: [f64; 2], tol: f64) -> bool {
    p[0].abs() <= aperture[0] / 2.0 + tol && p[1].abs() <= aperture[1] / 2.0 + tol
}

fn grid_points(n: usize, cols: usize, rows: usize, sx: f64, sy: f64) -> Vec<Point2> {
    let x0 = -(cols as f64 - 1.0) * sx / 2.0;
    let y0 = -(rows as f64 - 1.0) * sy / 2.0;
    (0..n)
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            [x0 + c as f64 * sx, y0 + r as f64 * sy]
        })
        .collect()
}

/// Uniform rectangular grid of `n` points spread over the (slightly inset)
/// aperture, filled in row-major order. Among all column counts the one with
/// the largest minimum spacing is chosen. Returns `None` when no grid keeps
/// every squared spacing above `dth`.
pub fn aperture_grid(n: usize, aperture: [f64; 2], dth: f64) -> Option<Vec<Point2>> {
    if n == 0 {
        return Some(Vec::new());
    }
    let inset = GRID_INSET * aperture[0].min(aperture[1]);
    let (w, h) = (aperture[0] - 2.0 * inset, aperture[1] - 2.0 * inset);
    let mut best: Option<(f64, usize, usize)> = None;
    for cols in 1..=n {
        let rows = n.div_ceil(cols);
        let sx = if cols > 1 { w / (cols - 1) as f64 } else { f64::INFINITY };
        let sy = if rows > 1 { h / (rows - 1) as f64 } else { f64::INFINITY };
        let spacing = sx.min(sy);
        if best.map_or(true, |(s, _, _)| spacing > s) {
            best = Some((spacing, cols, rows));
        }
    }
    let (spacing, cols, rows) = best?;
    if n > 1 && spacing * spacing <= dth * (1.0 + SPACING_SLACK) {
        return None;
    }
    let sx = if cols > 1 { w / (cols - 1) as f64 } else { 0.0 };
    let sy = if rows > 1 { h / (rows - 1) as f64 } else { 0.0 };
    Some(grid_points(n, cols, rows, sx, sy))
}

/// Compact fixed array: square-ish grid at pitch max(λ/2, √dth·(1+1e-3)),
/// centred in the aperture. Falls back to the spread grid when the compact
/// grid would not fit.
pub fn rigid_grid(n: usize, aperture: [f64; 2], dth: f64, lambda: f64) -> Option<Vec<Point2>> {
    if n == 0 {
        return Some(Vec::new());
    }
    let pitch = (lambda / 2.0).max(dth.sqrt() * (1.0 + 1e-3));
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let inset = GRID_INSET * aperture[0].min(aperture[1]);
    let fits = (cols as f64 - 1.0) * pitch < aperture[0] - 2.0 * inset
        && (rows as f64 - 1.0) * pitch < aperture[1] - 2.0 * inset;
    if fits {
        Some(grid_points(n, cols, rows, pitch, pitch))
    } else {
        aperture_grid(n, aperture, dth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_points_fill_a_two_by_two_grid() {
        let pts = aperture_grid(4, [1.0, 1.0], 0.1).unwrap();
        assert_eq!(pts.len(), 4);
        assert!(min_squared_spacing(&pts) >= 0.25);
        assert!(pts.iter().all(|p| inside_aperture(*p, [1.0, 1.0], 0.0)));
    }

    #[test]
    fn sixteen_points_fit_the_reference_aperture() {
        let pts = aperture_grid(16, [1.0, 1.0], 0.1).unwrap();
        assert!(min_squared_spacing(&pts) > 0.1);
        assert!(pts.iter().all(|p| p[0].abs() < 0.5 && p[1].abs() < 0.5));
    }

    #[test]
    fn twenty_points_do_not_fit() {
        assert!(aperture_grid(20, [1.0, 1.0], 0.1).is_none());
    }

    #[test]
    fn single_point_sits_at_centre() {
        assert_eq!(aperture_grid(1, [0.05, 0.05], 0.1).unwrap(), vec![[0.0, 0.0]]);
    }

    #[test]
    fn rigid_grid_respects_threshold() {
        for n in [1, 4, 8, 12, 16] {
            let pts = rigid_grid(n, [1.0, 1.0], 0.1, 0.1).unwrap();
            assert_eq!(pts.len(), n);
            assert!(min_squared_spacing(&pts) > 0.1);
            assert!(pts.iter().all(|p| p[0].abs() < 0.5 && p[1].abs() < 0.5));
        }
    }
}
