//! Routing activations for internal tree nodes.
//!
//! [`SmoothStep`] is a cubic ramp that reaches exact 0 and 1 outside
//! `[-gamma/2, gamma/2]`, which is what makes conditional computation
//! possible. [`Logistic`] never saturates and is kept as the dense baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponent arguments are clamped to this magnitude before `exp`.
const LOGISTIC_CLAMP: f64 = 500.0;

/// Routing decision of one internal node for one sample.
///
/// `left` is the activation value `S(t)`, `right` is `1 - S(t)` computed
/// without cancellation, and `slope` is `S'(t)`. Whenever either side is
/// exactly zero the slope is exactly zero as well.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub left: f64,
    pub right: f64,
    pub slope: f64,
}

impl Split {
    const HARD_LEFT: Split = Split {
        left: 1.0,
        right: 0.0,
        slope: 0.0,
    };
    const HARD_RIGHT: Split = Split {
        left: 0.0,
        right: 1.0,
        slope: 0.0,
    };

    /// Both children receive a strictly positive share.
    #[inline]
    pub fn is_fractional(&self) -> bool {
        self.left > 0.0 && self.right > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothStep {
    gamma: f64,
}

impl SmoothStep {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "smooth-step gamma must be finite and > 0, got {gamma}"
            )));
        }
        Ok(Self { gamma })
    }

    #[inline]
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        self.split(t).left
    }

    /// `S'(t)`: zero outside the open ramp, `-(6/g^3) t^2 + 3/(2g)` inside.
    #[inline]
    pub fn deriv(&self, t: f64) -> f64 {
        let half = 0.5 * self.gamma;
        if t <= -half || t >= half {
            return 0.0;
        }
        let v = t / self.gamma;
        6.0 * (0.5 - v) * (0.5 + v) / self.gamma
    }

    /// On the ramp the cubic is evaluated in its factored forms
    /// `S = 2(v + 1/2)^2 (1 - v)` and `1 - S = 2(1/2 - v)^2 (1 + v)` with
    /// `v = t / gamma`, so both sides keep full relative precision near the
    /// boundaries. A side too small to change `1.0` is rounded to a hard route.
    #[inline]
    pub fn split(&self, t: f64) -> Split {
        let half = 0.5 * self.gamma;
        if t <= -half {
            return Split::HARD_RIGHT;
        }
        if t >= half {
            return Split::HARD_LEFT;
        }
        let v = t / self.gamma;
        let slope = 6.0 * (0.5 - v) * (0.5 + v) / self.gamma;
        if v <= 0.0 {
            let left = 2.0 * (v + 0.5) * (v + 0.5) * (1.0 - v);
            let right = 1.0 - left;
            if left <= 0.0 || right >= 1.0 {
                return Split::HARD_RIGHT;
            }
            Split { left, right, slope }
        } else {
            let right = 2.0 * (0.5 - v) * (0.5 - v) * (1.0 + v);
            let left = 1.0 - right;
            if right <= 0.0 || left >= 1.0 {
                return Split::HARD_LEFT;
            }
            Split { left, right, slope }
        }
    }
}

/// `f(t) = 1 / (1 + exp(-t / alpha))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Logistic {
    alpha: f64,
}

impl Logistic {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "logistic alpha must be finite and > 0, got {alpha}"
            )));
        }
        Ok(Self { alpha })
    }

    #[inline]
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        let z = (t / self.alpha).clamp(-LOGISTIC_CLAMP, LOGISTIC_CLAMP);
        1.0 / (1.0 + (-z).exp())
    }

    #[inline]
    pub fn deriv(&self, t: f64) -> f64 {
        self.split(t).slope
    }

    #[inline]
    pub fn split(&self, t: f64) -> Split {
        let z = (t / self.alpha).clamp(-LOGISTIC_CLAMP, LOGISTIC_CLAMP);
        let left = 1.0 / (1.0 + (-z).exp());
        let right = 1.0 / (1.0 + z.exp());
        Split {
            left,
            right,
            slope: left * right / self.alpha,
        }
    }
}

/// Activation used by every internal node of an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    SmoothStep(SmoothStep),
    Logistic(Logistic),
}

impl Activation {
    pub fn smooth_step(gamma: f64) -> Result<Self> {
        SmoothStep::new(gamma).map(Activation::SmoothStep)
    }

    pub fn logistic(alpha: f64) -> Result<Self> {
        Logistic::new(alpha).map(Activation::Logistic)
    }

    #[inline]
    pub fn split(&self, t: f64) -> Split {
        match self {
            Activation::SmoothStep(s) => s.split(t),
            Activation::Logistic(l) => l.split(t),
        }
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Activation::SmoothStep(s) => s.eval(t),
            Activation::Logistic(l) => l.eval(t),
        }
    }

    #[inline]
    pub fn deriv(&self, t: f64) -> f64 {
        match self {
            Activation::SmoothStep(s) => s.deriv(t),
            Activation::Logistic(l) => l.deriv(t),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::SmoothStep(_) => "smooth",
            Activation::Logistic(_) => "logistic",
        }
    }

    pub fn as_smooth_step(&self) -> Option<SmoothStep> {
        match self {
            Activation::SmoothStep(s) => Some(*s),
            Activation::Logistic(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cubic(t: f64, g: f64) -> f64 {
        -2.0 / (g * g * g) * t * t * t + 1.5 / g * t + 0.5
    }

    #[test]
    fn smooth_step_values() {
        let s = SmoothStep::new(1.0).unwrap();
        assert_eq!(s.eval(0.0), 0.5);
        assert_eq!(s.eval(0.6), 1.0);
        assert!((s.eval(0.25) - 0.84375).abs() < 1e-15);
        assert_eq!(s.eval(-0.5), 0.0);
        assert_eq!(s.eval(0.5), 1.0);
    }

    #[test]
    fn smooth_step_deriv_values() {
        let s = SmoothStep::new(1.0).unwrap();
        assert_eq!(s.deriv(0.5), 0.0);
        assert_eq!(s.deriv(-0.5), 0.0);
        assert_eq!(s.deriv(0.0), 1.5);
        assert_eq!(SmoothStep::new(0.1).unwrap().deriv(10.0), 0.0);
    }

    #[test]
    fn rejects_degenerate_widths() {
        assert!(SmoothStep::new(0.0).is_err());
        assert!(SmoothStep::new(-1.0).is_err());
        assert!(SmoothStep::new(f64::NAN).is_err());
        assert!(Logistic::new(0.0).is_err());
    }

    #[test]
    fn logistic_values() {
        let l = Logistic::new(1.0).unwrap();
        assert_eq!(l.eval(0.0), 0.5);
        assert!((l.eval(1e6) - 1.0).abs() < 1e-12);
        assert!(l.eval(-1e6) > 0.0);
        let sharp = Logistic::new(1.0 / 6.0).unwrap();
        let expected = 1.0 / (1.0 + (-6.0f64).exp());
        assert!((sharp.eval(1.0) - expected).abs() < 1e-15);
        assert!((sharp.eval(1.0) - 0.9975274).abs() < 1e-7);
    }

    #[test]
    fn logistic_deriv_values() {
        assert!((Logistic::new(1.0).unwrap().deriv(0.0) - 0.25).abs() < 1e-15);
        assert!((Logistic::new(0.5).unwrap().deriv(0.0) - 0.5).abs() < 1e-15);
        assert!(Logistic::new(1.0).unwrap().deriv(50.0).abs() < 1e-12);
        assert!(Logistic::new(1.0).unwrap().deriv(50.0) > 0.0);
    }

    #[test]
    fn split_zero_side_has_zero_slope() {
        let s = SmoothStep::new(1.0).unwrap();
        // 2(v + 1/2)^2 * 1.5 underflows the complement long before it hits 0
        for t in [-0.5 + 1e-9, 0.5 - 1e-9, -0.5 + 1e-200] {
            let sp = s.split(t);
            if !sp.is_fractional() {
                assert_eq!(sp.slope, 0.0);
            }
            assert!(sp.left >= 0.0 && sp.right >= 0.0);
        }
    }

    #[test]
    fn deriv_matches_central_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let h = 1e-7;
        let mut checked = 0;
        while checked < 1000 {
            let g: f64 = [0.01, 0.1, 1.0, 3.0][rng.random_range(0..4)];
            let s = SmoothStep::new(g).unwrap();
            let t = rng.random_range(-g..g);
            if (t - g / 2.0).abs() <= 10.0 * h || (t + g / 2.0).abs() <= 10.0 * h {
                continue;
            }
            let fd = (s.eval(t + h) - s.eval(t - h)) / (2.0 * h);
            let an = s.deriv(t);
            let scale = an.abs().max(fd.abs());
            if scale == 0.0 {
                assert_eq!(fd, 0.0);
            } else {
                // absolute floor covers rounding in the differenced values
                assert!(
                    (an - fd).abs() <= 1e-6 * scale + 4.0 * f64::EPSILON / h,
                    "t={t} g={g} an={an} fd={fd}"
                );
            }
            checked += 1;
        }
    }

    #[test]
    fn continuously_differentiable_at_ramp_ends() {
        for g in [1e-3, 0.1, 1.0, 3.0] {
            let s = SmoothStep::new(g).unwrap();
            let lipschitz = 1.5 / g;
            for edge in [-g / 2.0, g / 2.0] {
                for h in [1e-3 * g, 1e-6 * g, 1e-9 * g] {
                    for t in [edge - h, edge + h] {
                        let dist = (t - edge).abs();
                        assert!((s.eval(t) - s.eval(edge)).abs() <= lipschitz * dist * (1.0 + 1e-6));
                        // the slope falls to 0 linearly at the edge
                        assert!(s.deriv(t) <= 6.0 * dist / (g * g) * (1.0 + 1e-6), "{g} {t}");
                    }
                }
                assert_eq!(s.deriv(edge), 0.0);
            }
        }
    }

    proptest! {
        #[test]
        fn matches_cubic_on_ramp(v in -0.5f64..0.5, g in 1e-4f64..4.0) {
            let s = SmoothStep::new(g).unwrap();
            let t = v * g;
            let expected = if t <= -g / 2.0 { 0.0 } else if t >= g / 2.0 { 1.0 } else { cubic(t, g) };
            prop_assert!((s.eval(t) - expected).abs() < 1e-14);
        }

        #[test]
        fn monotone(a in -3.0f64..3.0, b in -3.0f64..3.0, g in 1e-3f64..2.0) {
            let s = SmoothStep::new(g).unwrap();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(s.eval(lo) <= s.eval(hi));
        }

        #[test]
        fn exact_saturation(g in 1e-4f64..4.0, extra in 0.0f64..100.0) {
            let s = SmoothStep::new(g).unwrap();
            prop_assert_eq!(s.eval(-g / 2.0 - extra), 0.0);
            prop_assert_eq!(s.eval(g / 2.0 + extra), 1.0);
        }

        #[test]
        fn point_symmetry(t in -3.0f64..3.0, g in 1e-3f64..2.0, a in 1e-2f64..10.0) {
            let s = SmoothStep::new(g).unwrap();
            prop_assert!((s.eval(t) + s.eval(-t) - 1.0).abs() <= 2.0 * f64::EPSILON);
            let l = Logistic::new(a).unwrap();
            prop_assert!((l.eval(t) + l.eval(-t) - 1.0).abs() <= 2.0 * f64::EPSILON);
        }

        #[test]
        fn split_is_consistent(t in -3.0f64..3.0, g in 1e-3f64..2.0) {
            let s = SmoothStep::new(g).unwrap();
            let sp = s.split(t);
            prop_assert!((sp.left + sp.right - 1.0).abs() <= f64::EPSILON);
            prop_assert!(sp.slope >= 0.0);
            if sp.is_fractional() {
                prop_assert!(sp.left > 0.0 && sp.left < 1.0);
                prop_assert!((sp.slope - s.deriv(t)).abs() <= 1e-15 * s.deriv(t).max(1.0));
            } else {
                prop_assert_eq!(sp.slope, 0.0);
            }
        }

        #[test]
        fn logistic_open_interval(t in -30.0f64..30.0, a in 1.0f64..10.0) {
            let l = Logistic::new(a).unwrap();
            let v = l.eval(t);
            prop_assert!(v > 0.0 && v < 1.0);
            let d = l.deriv(t);
            prop_assert!(d > 0.0);
            prop_assert!((d - v * (1.0 - v) / a).abs() <= 1e-15);
        }
    }
}
