//! Bessel functions of the first kind, orders 0 and 1, for real arguments.
//!
//! Three regimes:
//! - `|x| <= 8`: power series (cancellation costs at most ~3 digits);
//! - `8 < |x| < 25`: Miller's backward recurrence normalised by
//!   `J0 + 2 Σ J_2k = 1`;
//! - `|x| >= 25`: Hankel asymptotic expansion truncated at its smallest term.

use std::f64::consts::PI;

const SERIES_LIMIT: f64 = 8.0;
const ASYMPTOTIC_LIMIT: f64 = 25.0;

/// Returns `(J0(x), J1(x))`.
pub fn bessel_j0_j1(x: f64) -> (f64, f64) {
    let ax = x.abs();
    let (j0, j1) = if ax <= SERIES_LIMIT {
        series(ax)
    } else if ax < ASYMPTOTIC_LIMIT {
        miller(ax)
    } else {
        (hankel(0.0, ax), hankel(1.0, ax))
    };
    (j0, if x < 0.0 { -j1 } else { j1 })
}

pub fn bessel_j0(x: f64) -> f64 {
    bessel_j0_j1(x).0
}

pub fn bessel_j1(x: f64) -> f64 {
    bessel_j0_j1(x).1
}

fn series(x: f64) -> (f64, f64) {
    let q = -(x * x) / 4.0;
    let mut t0 = 1.0;
    let mut t1 = x / 2.0;
    let (mut s0, mut s1) = (t0, t1);
    for m in 1..60 {
        let m = m as f64;
        t0 *= q / (m * m);
        t1 *= q / (m * (m + 1.0));
        s0 += t0;
        s1 += t1;
        if t0.abs() < 1e-18 && t1.abs() < 1e-18 {
            break;
        }
    }
    (s0, s1)
}

fn miller(x: f64) -> (f64, f64) {
    let mut n = (2.0 * x) as usize + 30;
    if n % 2 == 1 {
        n += 1;
    }
    let mut next = 0.0; // J_{n+1}
    let mut cur = 1e-30; // J_n
    let mut norm = 0.0;
    let (mut j0, mut j1) = (0.0, 0.0);
    for k in (1..=n).rev() {
        let prev = 2.0 * k as f64 / x * cur - next; // J_{k-1}
        next = cur;
        cur = prev;
        if cur.abs() > 1e250 {
            next *= 1e-250;
            cur *= 1e-250;
            norm *= 1e-250;
            j1 *= 1e-250;
        }
        let order = k - 1;
        if order == 1 {
            j1 = cur;
        }
        if order == 0 {
            j0 = cur;
            norm += cur;
        } else if order % 2 == 0 {
            norm += 2.0 * cur;
        }
    }
    (j0 / norm, j1 / norm)
}

fn hankel(nu: f64, x: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let z = 8.0 * x;
    let (mut p, mut q) = (1.0, 0.0);
    let mut term = 1.0;
    let mut last = f64::INFINITY;
    for k in 1..200 {
        let odd = (2 * k - 1) as f64;
        let next = term * (mu - odd * odd) / (k as f64 * z);
        if next.abs() >= last || next.abs() < 1e-18 {
            break;
        }
        last = next.abs();
        term = next;
        match k % 4 {
            1 => q += term,
            2 => p -= term,
            3 => q -= term,
            _ => p += term,
        }
    }
    let chi = x - (nu / 2.0 + 0.25) * PI;
    (2.0 / (PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
}
