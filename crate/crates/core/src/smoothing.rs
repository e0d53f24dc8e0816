//! C² smoothing of `r ↦ max{0, r}`.
//!
//! Inside the band `|r| < ε` the function is the quartic
//! `(r + ε)³ (3ε − r) / (16 ε³)`; outside it coincides with the plain maximum.
//! Evaluation goes through the scaled variable `s = r / ε`, so very small
//! `ε` does not overflow.

/// Largest admissible smoothing parameter.
pub const MAX_EPSILON: f64 = 0.5;

/// Uniform distance to `max{0, r}`, as a multiple of `ε`.
pub const SMOOTHING_GAP: f64 = 3.0 / 16.0;

pub fn smoothed_max(r: f64, eps: f64) -> f64 {
    if r >= eps {
        r
    } else if r <= -eps {
        0.0
    } else {
        let s = r / eps;
        eps * (s + 1.0).powi(3) * (3.0 - s) / 16.0
    }
}

pub fn smoothed_max_d1(r: f64, eps: f64) -> f64 {
    if r >= eps {
        1.0
    } else if r <= -eps {
        0.0
    } else {
        let s = r / eps;
        (s + 1.0).powi(2) * (2.0 - s) / 4.0
    }
}

pub fn smoothed_max_d2(r: f64, eps: f64) -> f64 {
    if r.abs() >= eps {
        0.0
    } else {
        let s = r / eps;
        0.75 * (1.0 - s * s) / eps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outside_band_is_plain_max() {
        assert_eq!(smoothed_max(0.2, 0.1), 0.2);
        assert_eq!(smoothed_max(-0.3, 0.1), 0.0);
        assert_eq!(smoothed_max_d1(0.2, 0.1), 1.0);
    }

    #[test]
    fn value_at_zero() {
        // (ε)³ (3ε) / (16 ε³) = 3ε/16
        assert!((smoothed_max(0.0, 0.1) - 0.01875).abs() < 1e-16);
    }

    #[test]
    fn vanishes_with_derivatives_at_lower_edge() {
        assert_eq!(smoothed_max(-0.1, 0.1), 0.0);
        assert_eq!(smoothed_max_d1(-0.1, 0.1), 0.0);
        assert_eq!(smoothed_max_d2(-0.1, 0.1), 0.0);
    }

    #[test]
    fn continuity_of_derivatives_at_band_edges() {
        for &eps in &[0.5, 0.1, 1e-3] {
            for &edge in &[-eps, eps] {
                let below = edge * (1.0 - 1e-12);
                let above = edge * (1.0 + 1e-12);
                assert!((smoothed_max(below, eps) - smoothed_max(above, eps)).abs() < 3e-12 * eps);
                assert!((smoothed_max_d1(below, eps) - smoothed_max_d1(above, eps)).abs() < 1e-9);
                assert!(smoothed_max_d2(below, eps).abs() < 1e-9 / eps);
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let eps = 0.2;
        let t = 1e-6;
        for i in 0..41 {
            let r = -0.25 + i as f64 * 0.0125;
            let fd1 = (smoothed_max(r + t, eps) - smoothed_max(r - t, eps)) / (2.0 * t);
            let fd2 = (smoothed_max_d1(r + t, eps) - smoothed_max_d1(r - t, eps)) / (2.0 * t);
            assert!((fd1 - smoothed_max_d1(r, eps)).abs() < 1e-8, "d1 at {r}");
            assert!((fd2 - smoothed_max_d2(r, eps)).abs() < 1e-5, "d2 at {r}");
        }
    }

    #[test]
    fn tiny_epsilon_is_finite() {
        let eps = 1e-200;
        assert!(smoothed_max(0.0, eps).is_finite());
        assert!(smoothed_max_d2(0.0, eps).is_finite());
        assert_eq!(smoothed_max(1e-3, eps), 1e-3);
    }
}
