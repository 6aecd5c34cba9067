//! Monotone cubic interpolation on a uniform grid.

use serde::{Deserialize, Serialize};

use crate::tape::Curve;

/// Piecewise cubic Hermite interpolant with Fritsch–Carlson slopes on a
/// uniform grid over `[lo, hi]`. Queries outside the grid are clamped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pchip {
    lo: f64,
    hi: f64,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl Pchip {
    pub fn new(lo: f64, hi: f64, ys: Vec<f64>) -> Self {
        assert!(ys.len() >= 2 && hi > lo);
        let n = ys.len();
        let h = (hi - lo) / (n - 1) as f64;
        let delta: Vec<f64> = ys.windows(2).map(|w| (w[1] - w[0]) / h).collect();
        let mut slopes = vec![0.0; n];
        for i in 1..n - 1 {
            let (a, b) = (delta[i - 1], delta[i]);
            // uniform spacing: harmonic mean, zero at extrema
            slopes[i] = if a * b <= 0.0 { 0.0 } else { 2.0 * a * b / (a + b) };
        }
        slopes[0] = end_slope(delta[0], delta.get(1).copied().unwrap_or(delta[0]));
        slopes[n - 1] = end_slope(delta[n - 2], if n > 2 { delta[n - 3] } else { delta[n - 2] });
        Pchip { lo, hi, ys, slopes }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.ys
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval_with_derivative(x).0
    }

    /// Value and derivative. The derivative is zero where the query is clamped.
    pub fn eval_with_derivative(&self, x: f64) -> (f64, f64) {
        let n = self.ys.len();
        let h = (self.hi - self.lo) / (n - 1) as f64;
        let inside = x > self.lo && x < self.hi;
        let xc = x.clamp(self.lo, self.hi);
        let i = (((xc - self.lo) / h) as usize).min(n - 2);
        let t = (xc - self.lo) / h - i as f64;
        let (y0, y1) = (self.ys[i], self.ys[i + 1]);
        let (m0, m1) = (self.slopes[i] * h, self.slopes[i + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        let v = (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * m1;
        let dv = if inside {
            ((6.0 * t2 - 6.0 * t) * y0 + (3.0 * t2 - 4.0 * t + 1.0) * m0 + (-6.0 * t2 + 6.0 * t) * y1 + (3.0 * t2 - 2.0 * t) * m1) / h
        } else {
            0.0
        };
        (v, dv)
    }
}

fn end_slope(d0: f64, d1: f64) -> f64 {
    let s = (3.0 * d0 - d1) / 2.0;
    if s * d0 <= 0.0 {
        0.0
    } else if d0 * d1 <= 0.0 && s.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        s
    }
}

impl Curve for Pchip {
    fn eval_with_derivative(&self, x: f64) -> (f64, f64) {
        Pchip::eval_with_derivative(self, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_nodes_and_preserves_monotonicity() {
        let ys: Vec<f64> = (0..11).map(|i| ((i as f64) / 10.0).powi(3)).collect();
        let p = Pchip::new(0.0, 1.0, ys.clone());
        for (i, y) in ys.iter().enumerate() {
            assert!((p.eval(i as f64 / 10.0) - y).abs() < 1e-14);
        }
        let mut prev = -1.0;
        for k in 0..=1000 {
            let v = p.eval(k as f64 / 1000.0);
            assert!(v >= prev);
            prev = v;
        }
        assert_eq!(p.eval(2.0), 1.0);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let ys: Vec<f64> = (0..20).map(|i| (i as f64 * 0.3).sin()).collect();
        let p = Pchip::new(0.0, 1.0, ys);
        for k in 1..50 {
            let x = k as f64 / 50.0 + 0.003;
            let fd = (p.eval(x + 1e-7) - p.eval(x - 1e-7)) / 2e-7;
            assert!((fd - p.eval_with_derivative(x).1).abs() < 1e-5);
        }
    }
}
