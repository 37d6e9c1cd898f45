//! A-priori constants controlling `u_0` and the energy of a pathwise solution.

use serde::Serialize;

/// Default relative enlargement of the grid sup of `w`, which can only
/// underestimate the sup of the continuous path.
pub const EPS_SUP: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundConstants {
    /// Radius `a = ||u(0)|| + 2 sigma ||w||_inf (1 + eps)`.
    pub a: f64,
    /// `a^2 + (a^2 T + a)^2`.
    pub k1: f64,
    /// `(a^2 T + 2a)^2`.
    pub k1_loose: f64,
}

impl BoundConstants {
    pub fn new(initial_norm: f64, sigma: f64, w_sup: f64, horizon: f64, eps_sup: f64) -> Self {
        let a = initial_norm + 2.0 * sigma * w_sup * (1.0 + eps_sup);
        Self::from_radius(a, horizon)
    }

    pub fn from_radius(a: f64, horizon: f64) -> Self {
        let a2 = a * a;
        let k1 = a2 + (a2 * horizon + a).powi(2);
        let k1_loose = (a2 * horizon + 2.0 * a).powi(2);
        BoundConstants { a, k1, k1_loose }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_radius_at_unit_horizon() {
        let b = BoundConstants::new(1.0, 0.0, 3.0, 1.0, EPS_SUP);
        assert_eq!(b.a, 1.0);
        assert_eq!(b.k1, 5.0);
        assert_eq!(b.k1_loose, 9.0);
    }

    #[test]
    fn zero_run() {
        let b = BoundConstants::new(0.0, 1.0, 0.0, 5.0, EPS_SUP);
        assert_eq!((b.a, b.k1, b.k1_loose), (0.0, 0.0, 0.0));
    }

    #[test]
    fn radius_scales_linearly() {
        let base = BoundConstants::new(0.75, 0.5, 1.25, 2.0, EPS_SUP);
        for lambda in [0.5, 2.0, 4.0] {
            let scaled = BoundConstants::new(lambda * 0.75, lambda * 0.5, 1.25, 2.0, EPS_SUP);
            assert_eq!(scaled.a, lambda * base.a);
        }
    }

    #[test]
    fn loose_form_dominates() {
        for a in [0.1, 1.0, 3.0] {
            for t in [0.5, 1.0, 10.0] {
                let b = BoundConstants::from_radius(a, t);
                assert!(b.k1 <= b.k1_loose);
            }
        }
    }
}
