//! Truncated power test functions `a_k` and `b_k`.
//!
//! For `t >= 1/k` they are the pure powers `t^{(1-α)/2}` and `t^{-α}`; below the
//! knot they continue linearly with matching value and slope. The pair is what
//! makes `b_k(u) ψ^q` and `a_k(u) ψ^{q/2}` admissible test functions even where
//! `u` is small.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for the exact identities (continuity, derivative ratio).
pub const IDENTITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationPair {
    k: u32,
    alpha: f64,
    knot: f64,
    a_slope: f64,
    a_shift: f64,
    b_slope: f64,
    b_shift: f64,
}

impl TruncationPair {
    /// Requires `k >= 1` and `alpha > p_max - 1`.
    pub fn new(k: u32, alpha: f64, p_max: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameters("k must be a positive integer".into()));
        }
        if !(alpha > p_max - 1.0) || !alpha.is_finite() || !(alpha > 1.0) {
            return Err(Error::InvalidParameters(format!(
                "alpha = {alpha} must exceed max(p_N - 1, 1) = {}",
                (p_max - 1.0).max(1.0)
            )));
        }
        let kf = k as f64;
        Ok(Self {
            k,
            alpha,
            knot: 1.0 / kf,
            a_slope: (1.0 - alpha) / 2.0 * kf.powf((alpha + 1.0) / 2.0),
            a_shift: (1.0 + alpha) / (kf * (1.0 - alpha)),
            b_slope: -alpha * kf.powf(alpha + 1.0),
            b_shift: -(1.0 + alpha) / (kf * alpha),
        })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn knot(&self) -> f64 {
        self.knot
    }

    fn check(t: f64) -> Result<()> {
        if !(t >= 0.0) {
            return Err(Error::InvalidInput(format!("t = {t} must be nonnegative")));
        }
        Ok(())
    }

    pub fn a_eval(&self, t: f64) -> Result<f64> {
        Self::check(t)?;
        Ok(self.a_unchecked(t))
    }

    /// Derivative of `a_k`; at the knot the power-piece value is used.
    pub fn a_prime(&self, t: f64) -> Result<f64> {
        Self::check(t)?;
        Ok(self.a_prime_unchecked(t))
    }

    pub fn b_eval(&self, t: f64) -> Result<f64> {
        Self::check(t)?;
        Ok(self.b_unchecked(t))
    }

    pub fn b_prime(&self, t: f64) -> Result<f64> {
        Self::check(t)?;
        Ok(self.b_prime_unchecked(t))
    }

    pub(crate) fn a_unchecked(&self, t: f64) -> f64 {
        if t < self.knot {
            self.a_slope * (t + self.a_shift)
        } else {
            t.powf((1.0 - self.alpha) / 2.0)
        }
    }

    pub(crate) fn a_prime_unchecked(&self, t: f64) -> f64 {
        if t < self.knot {
            self.a_slope
        } else {
            (1.0 - self.alpha) / 2.0 * t.powf(-(1.0 + self.alpha) / 2.0)
        }
    }

    pub(crate) fn b_unchecked(&self, t: f64) -> f64 {
        if t < self.knot {
            self.b_slope * (t + self.b_shift)
        } else {
            t.powf(-self.alpha)
        }
    }

    pub(crate) fn b_prime_unchecked(&self, t: f64) -> f64 {
        if t < self.knot {
            self.b_slope
        } else {
            -self.alpha * t.powf(-self.alpha - 1.0)
        }
    }

    /// The constant `(α-1)^2 / (4α)` linking `a_k'^2` and `|b_k'|`.
    pub fn derivative_ratio(&self) -> f64 {
        (self.alpha - 1.0).powi(2) / (4.0 * self.alpha)
    }

    /// Value and slope of the linear pieces evaluated at the knot, for
    /// comparison with the power pieces.
    fn linear_at_knot(&self) -> (f64, f64, f64, f64) {
        let t = self.knot;
        (
            self.a_slope * (t + self.a_shift),
            self.a_slope,
            self.b_slope * (t + self.b_shift),
            self.b_slope,
        )
    }
}

/// A sample grid covering the linear piece, the knot, and both tails.
pub fn default_samples(k: u32, count: usize) -> Vec<f64> {
    let knot = 1.0 / k as f64;
    let count = count.max(8);
    let lin = count / 2;
    let mut out = Vec::with_capacity(count + 3);
    out.push(0.0);
    out.push(1e-12 * knot);
    for j in 1..lin {
        out.push(knot * j as f64 / lin as f64);
    }
    out.push(knot);
    let tail = count - lin;
    for j in 1..=tail {
        // knot * 10^(6 j / tail)
        out.push(knot * 10f64.powf(6.0 * j as f64 / tail as f64));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Violation {
    pub property: String,
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TruncationReport {
    pub k: u32,
    pub alpha: f64,
    pub samples: usize,
    /// `a_k(t)^2 >= t b_k(t)` everywhere.
    pub property_a: bool,
    /// Largest relative deviation from equality in property (a) on `t >= 1/k`.
    pub property_a_equality_dev: f64,
    /// Sup over samples of the property (b) ratio, one entry per axis.
    pub property_b_constants: Vec<f64>,
    pub property_b: bool,
    /// Largest relative error of `a_k'^2 = (α-1)^2/(4α) |b_k'|`.
    pub property_c_max_rel_err: f64,
    pub property_c: bool,
    /// Largest relative jump at the knot among `a, a', b, b'`.
    pub knot_jump: f64,
    pub continuity: bool,
    pub violations: Vec<Violation>,
    pub passed: bool,
}

impl TruncationReport {
    /// Converts the first violation, if any, into an error.
    pub fn into_result(self) -> Result<Self> {
        match self.violations.first() {
            Some(v) => Err(Error::PropertyViolation {
                property: v.property.clone(),
                t: v.t,
                lhs: v.lhs,
                rhs: v.rhs,
            }),
            None => Ok(self),
        }
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Checks properties (a), (b), (c) and knot continuity on `samples`.
///
/// `p` supplies the axis exponents for the property (b) ratio
/// `[a^p |a'|^{2-p} + b^p |b'|^{1-p}] / t^{p-α-1}`.
pub fn verify_properties(tp: &TruncationPair, samples: &[f64], p: &[f64]) -> Result<TruncationReport> {
    if let Some(t) = samples.iter().find(|t| !(**t >= 0.0)) {
        return Err(Error::InvalidInput(format!("sample t = {t} is negative")));
    }
    let ratio = tp.derivative_ratio();
    let mut violations = Vec::new();
    let mut eq_dev: f64 = 0.0;
    let mut c_err: f64 = 0.0;
    let mut b_consts = vec![0.0f64; p.len()];

    for &t in samples {
        let a = tp.a_unchecked(t);
        let ap = tp.a_prime_unchecked(t);
        let b = tp.b_unchecked(t);
        let bp = tp.b_prime_unchecked(t);

        let lhs = a * a;
        let rhs = t * b;
        if lhs < rhs && rel_err(lhs, rhs) > IDENTITY_TOL {
            violations.push(Violation {
                property: "a".into(),
                t,
                lhs,
                rhs,
            });
        }
        if t >= tp.knot {
            eq_dev = eq_dev.max(rel_err(lhs, rhs));
        }

        let c_lhs = ap * ap;
        let c_rhs = ratio * bp.abs();
        let e = rel_err(c_lhs, c_rhs);
        c_err = c_err.max(e);
        if e > IDENTITY_TOL {
            violations.push(Violation {
                property: "c".into(),
                t,
                lhs: c_lhs,
                rhs: c_rhs,
            });
        }

        if t > 0.0 {
            for (slot, &pi) in b_consts.iter_mut().zip(p) {
                let num = a.powf(pi) * ap.abs().powf(2.0 - pi) + b.powf(pi) * bp.abs().powf(1.0 - pi);
                let r = num / t.powf(pi - tp.alpha - 1.0);
                if r.is_finite() {
                    *slot = slot.max(r);
                } else {
                    *slot = f64::INFINITY;
                }
            }
        }
    }

    let property_b = b_consts.iter().all(|c| c.is_finite());
    if !property_b {
        violations.push(Violation {
            property: "b".into(),
            t: f64::NAN,
            lhs: f64::INFINITY,
            rhs: f64::NAN,
        });
    }

    let (a_lin, ap_lin, b_lin, bp_lin) = tp.linear_at_knot();
    let knot = tp.knot;
    let jumps = [
        rel_err(a_lin, tp.a_unchecked(knot)),
        rel_err(ap_lin, tp.a_prime_unchecked(knot)),
        rel_err(b_lin, tp.b_unchecked(knot)),
        rel_err(bp_lin, tp.b_prime_unchecked(knot)),
    ];
    let knot_jump = jumps.iter().cloned().fold(0.0, f64::max);
    let continuity = knot_jump <= IDENTITY_TOL;
    if !continuity {
        violations.push(Violation {
            property: "continuity".into(),
            t: knot,
            lhs: a_lin,
            rhs: tp.a_unchecked(knot),
        });
    }

    let property_a = !violations.iter().any(|v| v.property == "a");
    let property_c = c_err <= IDENTITY_TOL;
    Ok(TruncationReport {
        k: tp.k,
        alpha: tp.alpha,
        samples: samples.len(),
        property_a,
        property_a_equality_dev: eq_dev,
        property_b_constants: b_consts,
        property_b,
        property_c_max_rel_err: c_err,
        property_c,
        knot_jump,
        continuity,
        passed: violations.is_empty(),
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tp() -> TruncationPair {
        TruncationPair::new(2, 3.0, 3.0).unwrap()
    }

    #[test]
    fn a_examples() {
        let t = tp();
        assert!((t.a_eval(1.0).unwrap() - 1.0).abs() < 1e-14);
        assert!((t.a_eval(0.0).unwrap() - 4.0).abs() < 1e-14);
        assert!((t.a_eval(0.25).unwrap() - 3.0).abs() < 1e-14);
        assert!((t.a_eval(0.5).unwrap() - 2.0).abs() < 1e-14);
        assert!(t.a_eval(-0.1).is_err());
        assert!(t.a_prime(-1.0).is_err());
    }

    #[test]
    fn b_examples() {
        let t = tp();
        assert!((t.b_eval(1.0).unwrap() - 1.0).abs() < 1e-14);
        assert!((t.b_eval(0.5).unwrap() - 8.0).abs() < 1e-13);
        assert!((t.b_eval(0.0).unwrap() - 32.0).abs() < 1e-12);
        assert!(t.b_eval(-1e-300).is_err());
    }

    #[test]
    fn derivative_pieces() {
        let t = tp();
        // Linear piece: a' = -4, b' = -48, ratio 16/48 = 1/3 = (α-1)^2/(4α).
        assert!((t.a_prime(0.1).unwrap() + 4.0).abs() < 1e-14);
        assert!((t.b_prime(0.1).unwrap() + 48.0).abs() < 1e-12);
        assert!((t.derivative_ratio() - 1.0 / 3.0).abs() < 1e-15);
        // Knot uses the power piece; both one-sided derivatives agree.
        let left = t.a_slope;
        assert!(rel_err(left, t.a_prime(0.5).unwrap()) < 1e-14);
    }

    #[test]
    fn properties_hold_for_example() {
        let t = tp();
        let r = verify_properties(&t, &[0.0, 0.25, 0.5, 1.0, 2.0], &[2.0, 3.0]).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.property_a_equality_dev < 1e-14);
        // a^2 = 9 >= t b = 0.25 * 48 * (2/3 - 1/4) = 5.
        let a = t.a_eval(0.25).unwrap();
        let b = t.b_eval(0.25).unwrap();
        assert!((a * a - 9.0).abs() < 1e-12 && (0.25 * b - 5.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_small_alpha() {
        assert!(TruncationPair::new(2, 2.5, 4.0).is_err());
        assert!(TruncationPair::new(0, 5.0, 4.0).is_err());
    }

    #[test]
    fn b_increases_to_power_with_k() {
        let alpha = 3.5;
        let t = 0.3;
        let mut prev = 0.0;
        for k in 1..40 {
            let v = TruncationPair::new(k, alpha, 4.0).unwrap().b_eval(t).unwrap();
            assert!(v >= prev - 1e-12);
            prev = v;
        }
        assert!(rel_err(prev, t.powf(-alpha)) < 1e-14);
    }

    #[test]
    fn negative_sample_is_rejected() {
        assert!(verify_properties(&tp(), &[0.1, -0.2], &[3.0]).is_err());
    }
}
