//! Doubly connected case: the cyclic group `⟨z ↦ e^τ z⟩`.
//!
//! The Loewner field has the closed form
//!
//! ```text
//!     P(z, t) = λ z - τ̇ ξ z Σ_k [1/(e^{kτ} z - ξ) - 1/(e^{kτ} c - ξ)]
//! ```
//!
//! summed over all integers `k`. Both tails decay like `e^{-|k|τ}`, so the
//! sum is truncated adaptively.

use crate::automorphic::SeriesValue;
use crate::driving::{DrivingSpec, Realized, Schedule};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::ode::{integrate, ComplexField, FlowResult, OdeOptions};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

const MAX_TERMS: usize = 100_000;
const SAFETY: f64 = 10.0;
const POLE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnulusSchedule {
    /// `τ(t)`, strictly increasing.
    pub tau: Schedule,
    /// `ξ(t) > 0`.
    pub xi: DrivingSpec,
    #[serde(default)]
    pub lambda: Schedule,
    pub c: f64,
}

impl AnnulusSchedule {
    /// Constant-rate schedule `τ(t) = τ₀ + rate·t`.
    pub fn with_rate(tau0: f64, rate: f64, xi: DrivingSpec, lambda: Schedule, c: f64) -> Self {
        AnnulusSchedule {
            tau: Schedule::linear(tau0, rate),
            xi,
            lambda,
            c,
        }
    }

    pub fn realize(&self, t_end: f64) -> Result<AnnulusField> {
        if !(self.c != 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidInput("c must be a non-zero real".into()));
        }
        let field = AnnulusField {
            tau: self.tau.realize()?,
            xi: self.xi.realize(t_end)?,
            lambda: self.lambda.realize()?,
            c: self.c,
            tail_tolerance: 1e-15,
        };
        let n = 64;
        for j in 0..=n {
            let t = t_end.max(0.0) * j as f64 / n as f64;
            if !(field.tau.value(t) > 0.0) {
                return Err(Error::InvalidInput(format!("τ({t}) must be positive")));
            }
            if !(field.tau.derivative(t) > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "τ must be strictly increasing (τ'({t}) = {})",
                    field.tau.derivative(t)
                )));
            }
            if !(field.xi.value(t) > 0.0) {
                return Err(Error::InvalidInput(format!("ξ({t}) must be positive")));
            }
        }
        Ok(field)
    }
}

/// Realized annulus schedule; evaluates `P(z, t)`.
#[derive(Debug, Clone)]
pub struct AnnulusField {
    tau: Realized,
    xi: Realized,
    lambda: Realized,
    c: f64,
    /// Relative tolerance for the adaptive truncation.
    pub tail_tolerance: f64,
}

impl AnnulusField {
    pub fn tau(&self, t: f64) -> f64 {
        self.tau.value(t)
    }

    pub fn tau_rate(&self, t: f64) -> f64 {
        self.tau.derivative(t)
    }

    pub fn xi(&self, t: f64) -> f64 {
        self.xi.value(t)
    }

    pub fn lambda(&self, t: f64) -> f64 {
        self.lambda.value(t)
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// `P(z, t)` with the tail bound of the truncated `k`-sum.
    pub fn eval(&self, t: f64, z: Complex64) -> Result<SeriesValue> {
        let (tau, rate, xi) = (self.tau(t), self.tau_rate(t), self.xi(t));
        let s = cyclic_sum(tau, self.c, xi, z, self.tail_tolerance, None)?;
        let pref = rate * xi * z;
        Ok(SeriesValue::new(
            self.lambda(t) * z - pref * s.value,
            pref.norm() * s.tail_estimate,
        ))
    }

    /// Distance from `z` to the orbit `{e^{kτ} ξ}` at time `t`.
    pub fn pole_distance(&self, t: f64, z: Complex64) -> f64 {
        orbit_distance(self.tau(t), self.xi(t), z)
    }

    /// Forward flow `ġ = -P(g, t)` from `g_0 = z0`.
    pub fn forward_flow(&self, z0: Complex64, t_end: f64, opts: &OdeOptions) -> Result<FlowResult> {
        integrate(&Forward(self), z0, 0.0, t_end, opts)
    }

    /// Inverse flow `ḣ_s = P(h_s, t0 - s)` on `[0, t0]` from `h_0 = w`.
    pub fn inverse_flow(&self, w: Complex64, t0: f64, opts: &OdeOptions) -> Result<FlowResult> {
        let opts = OdeOptions {
            detect_swallow: false,
            ..*opts
        };
        integrate(&Inverse(self, t0), w, 0.0, t0, &opts)
    }

    pub fn forward_flows(
        &self,
        seeds: &[Complex64],
        t_end: f64,
        opts: &OdeOptions,
        exec: Exec,
    ) -> Result<Vec<FlowResult>> {
        exec.map(seeds, |&z| self.forward_flow(z, t_end, opts))
            .into_iter()
            .collect()
    }
}

struct Forward<'a>(&'a AnnulusField);

impl ComplexField for Forward<'_> {
    fn eval(&self, t: f64, z: Complex64) -> Result<Complex64> {
        Ok(-self.0.eval(t, z)?.value)
    }

    fn pole_distance(&self, t: f64, z: Complex64) -> f64 {
        self.0.pole_distance(t, z)
    }
}

struct Inverse<'a>(&'a AnnulusField, f64);

impl ComplexField for Inverse<'_> {
    fn eval(&self, s: f64, z: Complex64) -> Result<Complex64> {
        Ok(self.0.eval(self.1 - s, z)?.value)
    }

    fn pole_distance(&self, s: f64, z: Complex64) -> f64 {
        self.0.pole_distance(self.1 - s, z)
    }
}

fn orbit_distance(tau: f64, xi: f64, z: Complex64) -> f64 {
    let r = z.norm();
    if r == 0.0 {
        return xi;
    }
    let k0 = ((r / xi).ln() / tau).round();
    (-1..=1)
        .map(|j| (z - xi * ((k0 + j as f64) * tau).exp()).norm())
        .fold(f64::INFINITY, f64::min)
}

/// `Σ_k [1/(e^{kτ} z - ξ) - 1/(e^{kτ} c - ξ)]`, truncated either at a fixed
/// `|k| <= k_max` or adaptively to relative tolerance `eps`.
pub fn cyclic_sum(
    tau: f64,
    c: f64,
    xi: f64,
    z: Complex64,
    eps: f64,
    k_max: Option<usize>,
) -> Result<SeriesValue> {
    let term = |k: i64| -> Result<Complex64> {
        let e = (k as f64 * tau).exp();
        let dz = e * z - xi;
        if dz.norm() < POLE_TOL * xi.max(1.0) {
            return Err(Error::PoleEncountered {
                word: format!("k={k}"),
            });
        }
        let dc = e * c - xi;
        if dc.abs() < POLE_TOL * xi.max(1.0) {
            return Err(Error::ZeroDenominator {
                word: format!("k={k} (c-orbit meets ξ)"),
            });
        }
        // Written as one fraction: for k → -∞ both terms tend to -1/ξ.
        Ok(e * (c - z) / (dz * dc))
    };
    let ratio = (-tau).exp();
    let (zmin, zmax) = (z.norm().min(c.abs()), z.norm().max(c.abs()));
    let mut sum = term(0)?;
    let limit = k_max.unwrap_or(MAX_TERMS);
    let mut tail = f64::INFINITY;
    for k in 1..=limit {
        if k as f64 * tau > 600.0 {
            break;
        }
        let (tp, tm) = (term(k as i64)?, term(-(k as i64))?);
        sum += tp + tm;
        let e = (k as f64 * tau).exp();
        let geometric = e * zmin > 2.0 * xi && zmax < 0.5 * xi * e;
        let bound = SAFETY * (tp.norm() + tm.norm()) * ratio / (1.0 - ratio);
        if geometric {
            tail = bound;
            if k_max.is_none() && bound <= eps * sum.norm().max(1.0) {
                break;
            }
        }
    }
    if k_max.is_none() && !(tail <= eps * sum.norm().max(1.0)) {
        log::warn!("annulus sum did not reach tolerance {eps:e} (tail {tail:e})");
    }
    Ok(SeriesValue::new(sum, tail))
}

/// The telescoping sum `Σ_{|k| <= K} [1/(e^{(k+1)τ} c - ξ) - 1/(e^{kτ} c - ξ)]`,
/// which tends to `1/ξ`.
pub fn telescoping_sum(tau: f64, c: f64, xi: f64, k_max: usize) -> f64 {
    // Each interior orbit index appears once with each sign; netting them
    // first keeps the sum finite when some `e^{jτ}c` lands on ξ.
    let a = |j: i64| 1.0 / ((j as f64 * tau).exp() * c - xi);
    let k = k_max as i64;
    a(k + 1) - a(-k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::contour_residue;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn test_schedule() -> AnnulusSchedule {
        AnnulusSchedule::with_rate(
            1.0,
            0.2,
            DrivingSpec::Constant { value: 1.0 },
            Schedule::default(),
            2.0,
        )
    }

    #[test]
    fn telescoping_constant() {
        let s = telescoping_sum(2f64.ln(), 1.0, 0.5, 40);
        assert!((s - 2.0).abs() < 1e-8);
    }

    #[test]
    fn scaling_symmetry() {
        let f = test_schedule().realize(1.0).unwrap();
        let t = 0.3;
        let e = f.tau(t).exp();
        for z in [c(0.3, 1.0), c(-2.0, 0.5), c(1.0, 3.0)] {
            let lhs = f.eval(t, e * z).unwrap();
            let rhs = f.eval(t, z).unwrap();
            let expect = e * rhs.value - f.tau_rate(t) * e * z;
            assert!((lhs.value - expect).norm() < 1e-10 * (1.0 + lhs.value.norm()));
        }
    }

    #[test]
    fn residue_at_xi() {
        let f = test_schedule().realize(1.0).unwrap();
        let t = 0.2;
        let xi = f.xi(t);
        let r = contour_residue(|z| f.eval(t, z).map(|s| s.value), c(xi, 0.0), 1e-3, 64).unwrap();
        let expect = -f.tau_rate(t) * xi * xi;
        assert!((r.re - expect).abs() < 1e-4 * expect.abs() && r.im.abs() < 1e-8);
    }

    #[test]
    fn frozen_driving_is_identity() {
        let s = AnnulusSchedule {
            tau: Schedule::Samples {
                times: vec![0.0, 1.0],
                values: vec![1.0, 1.0],
            },
            xi: DrivingSpec::Constant { value: 1.0 },
            lambda: Schedule::default(),
            c: 2.0,
        };
        // τ' = 0 is rejected by validation but the field is still zero.
        assert!(s.realize(1.0).is_err());
        let f = AnnulusField {
            tau: s.tau.realize().unwrap(),
            xi: s.xi.realize(1.0).unwrap(),
            lambda: s.lambda.realize().unwrap(),
            c: 2.0,
            tail_tolerance: 1e-15,
        };
        let z = c(0.4, 0.9);
        let r = f.forward_flow(z, 1.0, &OdeOptions::default()).unwrap();
        assert_eq!(r.last(), z);
    }

    #[test]
    fn equivariance_of_flow() {
        let f = test_schedule().realize(0.5).unwrap();
        let opts = OdeOptions::with_tol(1e-9);
        let e0 = f.tau(0.0).exp();
        for z in [c(0.5, 1.0), c(-1.0, 0.3), c(2.0, 2.0)] {
            let a = f.forward_flow(e0 * z, 0.5, &opts).unwrap();
            let b = f.forward_flow(z, 0.5, &opts).unwrap();
            assert!(!a.swallowed() && !b.swallowed());
            let err = (a.last() - f.tau(0.5).exp() * b.last()).norm();
            assert!(err < 1e-6, "{err}");
        }
    }

    #[test]
    fn inverse_roundtrip() {
        let f = test_schedule().realize(0.5).unwrap();
        let opts = OdeOptions::with_tol(1e-10);
        for w in [c(1.0, 0.1), c(-0.5, 1.0), c(3.0, 0.5)] {
            let h = f.inverse_flow(w, 0.5, &opts).unwrap();
            let g = f.forward_flow(h.last(), 0.5, &opts).unwrap();
            assert!((g.last() - w).norm() < 1e-6);
        }
        let h = f.inverse_flow(c(1.0, 1.0), 0.0, &opts).unwrap();
        assert_eq!(h.values, vec![c(1.0, 1.0)]);
    }

    #[test]
    fn inverse_flow_repels_from_xi() {
        let f = test_schedule().realize(0.5).unwrap();
        let w = c(f.xi(0.5) + 0.01, 0.01);
        let h = f.inverse_flow(w, 0.5, &OdeOptions::with_tol(1e-10)).unwrap();
        for v in &h.values {
            assert!(v.im >= w.im * (1.0 - 1e-9));
        }
    }

    #[test]
    fn stalled_driving_swallows_ray_above_xi() {
        // Cancel the horizontal drift at ξ so the hull grows straight up.
        let f = test_schedule().realize(3.0).unwrap();
        let n = 64;
        let drift: Complex64 = (0..n)
            .map(|j| {
                let w = c(1.0, 0.0) + Complex64::from_polar(1e-3, std::f64::consts::TAU * j as f64 / n as f64);
                f.eval(0.0, w).unwrap().value
            })
            .sum::<Complex64>()
            / n as f64;
        let mut s = test_schedule();
        s.lambda = Schedule::constant(-drift.re);
        let f = s.realize(3.0).unwrap();
        let opts = OdeOptions::with_tol(1e-8);
        let near = f.forward_flow(c(1.0, 0.05), 3.0, &opts).unwrap();
        assert!(near.swallowed());
        let far = f.forward_flow(c(-3.0, 3.0), 3.0, &opts).unwrap();
        assert!(!far.swallowed());
    }

    #[test]
    fn fixed_truncation_matches_adaptive() {
        let z = c(0.3, 0.8);
        let a = cyclic_sum(1.0, 2.0, 1.0, z, 1e-15, None).unwrap();
        let b = cyclic_sum(1.0, 2.0, 1.0, z, 0.0, Some(60)).unwrap();
        assert!((a.value - b.value).norm() < 1e-13);
    }
}
