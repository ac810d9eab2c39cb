//! Adaptive Dormand–Prince 5(4) integration of `ż = f(t, z)` in the complex
//! plane, with step control that respects nearby simple poles of `f` and a
//! swallow criterion for forward Loewner flows.

use crate::error::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Smallest step tried before giving up with `StepUnderflow`.
    pub min_step: f64,
    pub max_steps: usize,
    /// Swallow when the distance to the nearest pole drops below this.
    pub swallow_distance: f64,
    /// Swallow when the imaginary part drops below this.
    pub swallow_imag: f64,
    /// Disable for flows whose poles repel (inverse flows).
    pub detect_swallow: bool,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-9,
            atol: 1e-12,
            min_step: 1e-14,
            max_steps: 1_000_000,
            swallow_distance: 1e-7,
            swallow_imag: 1e-9,
            detect_swallow: true,
        }
    }
}

impl OdeOptions {
    pub fn with_tol(tol: f64) -> Self {
        OdeOptions {
            rtol: tol,
            atol: tol * 1e-3,
            ..Default::default()
        }
    }

    pub fn without_swallow(tol: f64) -> Self {
        OdeOptions {
            detect_swallow: false,
            ..Self::with_tol(tol)
        }
    }
}

/// Trajectory of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowResult {
    pub seed: Complex64,
    pub times: Vec<f64>,
    pub values: Vec<Complex64>,
    /// Local error estimate of the step that produced each value.
    pub error_estimates: Vec<f64>,
    pub swallow_time: Option<f64>,
    pub rejected_steps: usize,
}

impl FlowResult {
    pub fn last(&self) -> Complex64 {
        *self.values.last().expect("trajectory is never empty")
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().expect("trajectory is never empty")
    }

    pub fn swallowed(&self) -> bool {
        self.swallow_time.is_some()
    }

    /// Sum of the local error estimates, a crude global error bound.
    pub fn error_bound(&self) -> f64 {
        self.error_estimates.iter().sum()
    }
}

/// Right-hand side of a complex ODE together with the location of its poles.
pub trait ComplexField {
    fn eval(&self, t: f64, z: Complex64) -> Result<Complex64>;

    /// Distance from `z` to the nearest pole of `f(t, ·)`.
    fn pole_distance(&self, _t: f64, _z: Complex64) -> f64 {
        f64::INFINITY
    }
}

impl<F> ComplexField for F
where
    F: Fn(f64, Complex64) -> Result<Complex64>,
{
    fn eval(&self, t: f64, z: Complex64) -> Result<Complex64> {
        self(t, z)
    }
}

/// A closure field paired with a closure pole distance.
pub struct WithPoles<F, D> {
    pub field: F,
    pub distance: D,
}

impl<F, D> ComplexField for WithPoles<F, D>
where
    F: Fn(f64, Complex64) -> Result<Complex64>,
    D: Fn(f64, Complex64) -> f64,
{
    fn eval(&self, t: f64, z: Complex64) -> Result<Complex64> {
        (self.field)(t, z)
    }

    fn pole_distance(&self, t: f64, z: Complex64) -> f64 {
        (self.distance)(t, z)
    }
}

// Dormand–Prince coefficients.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// One Dormand–Prince step; returns the fifth-order value, the error vector
/// and the derivative at the new point (first-same-as-last).
fn dp_step<F: ComplexField + ?Sized>(
    f: &F,
    t: f64,
    z: Complex64,
    k1: Complex64,
    h: f64,
) -> Result<(Complex64, Complex64, Complex64)> {
    let k2 = f.eval(t + C2 * h, z + h * (A21 * k1))?;
    let k3 = f.eval(t + C3 * h, z + h * (A31 * k1 + A32 * k2))?;
    let k4 = f.eval(t + C4 * h, z + h * (A41 * k1 + A42 * k2 + A43 * k3))?;
    let k5 = f.eval(t + C5 * h, z + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4))?;
    let k6 = f.eval(
        t + h,
        z + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5),
    )?;
    let z_new = z + h * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6);
    let k7 = f.eval(t + h, z_new)?;
    let err = h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7);
    Ok((z_new, err, k7))
}

/// Integrates from `(t0, z0)` to `t_end`, recording every accepted step.
pub fn integrate<F: ComplexField + ?Sized>(
    f: &F,
    z0: Complex64,
    t0: f64,
    t_end: f64,
    opts: &OdeOptions,
) -> Result<FlowResult> {
    let mut res = FlowResult {
        seed: z0,
        times: vec![t0],
        values: vec![z0],
        error_estimates: vec![0.0],
        swallow_time: None,
        rejected_steps: 0,
    };
    if t_end <= t0 {
        return Ok(res);
    }
    let swallowed_at = |t: f64, z: Complex64| {
        opts.detect_swallow
            && (f.pole_distance(t, z) < opts.swallow_distance || z.im < opts.swallow_imag)
    };

    let (mut t, mut z) = (t0, z0);
    if swallowed_at(t, z) {
        res.swallow_time = Some(t);
        return Ok(res);
    }
    let mut k1 = f.eval(t, z)?;
    let span = t_end - t0;
    let mut h = (0.01 * (1.0 + z.norm()) / k1.norm().max(1e-12)).min(span).max(opts.min_step);

    for _ in 0..opts.max_steps {
        if t >= t_end {
            return Ok(res);
        }
        h = h.min(t_end - t);
        let dist = f.pole_distance(t, z);
        let speed = k1.norm();
        if dist.is_finite() && speed > 0.0 {
            let limit = 0.25 * dist / speed;
            if limit < h {
                h = limit;
                if opts.detect_swallow && h < 1e-12 * t.abs().max(1.0) {
                    res.swallow_time = Some(t);
                    return Ok(res);
                }
            }
        }
        if h < opts.min_step {
            return Err(Error::StepUnderflow { t });
        }

        let attempt = dp_step(f, t, z, k1, h);
        let (z_new, err, k7) = match attempt {
            Ok(v) => v,
            Err(e) if e.is_numerical_abort() => {
                res.rejected_steps += 1;
                h *= 0.25;
                continue;
            }
            Err(e) => return Err(e),
        };
        let scale = opts.atol + opts.rtol * z.norm().max(z_new.norm());
        let en = err.norm() / scale;
        let left_domain = opts.detect_swallow && z_new.im <= 0.0;
        if en <= 1.0 && en.is_finite() && !left_domain {
            t = if t_end - (t + h) <= 1e-15 * t_end.abs().max(1.0) {
                t_end
            } else {
                t + h
            };
            z = z_new;
            k1 = k7;
            res.times.push(t);
            res.values.push(z);
            res.error_estimates.push(err.norm());
            if swallowed_at(t, z) {
                res.swallow_time = Some(t);
                return Ok(res);
            }
            let fac = if en == 0.0 { 5.0 } else { 0.9 * en.powf(-0.2) };
            h *= fac.clamp(0.2, 5.0);
        } else {
            res.rejected_steps += 1;
            let fac = if en.is_finite() { 0.9 * en.powf(-0.25) } else { 0.25 };
            h *= fac.clamp(0.1, 0.5);
        }
    }
    Err(Error::StepUnderflow { t })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_growth() {
        let lam = Complex64::new(-0.5, 2.0);
        let f = move |_t: f64, z: Complex64| Ok(lam * z);
        let z0 = Complex64::new(1.0, 1.0);
        let r = integrate(&f, z0, 0.0, 2.0, &OdeOptions::without_swallow(1e-10)).unwrap();
        let exact = z0 * (lam * 2.0).exp();
        assert!((r.last() - exact).norm() < 1e-8);
        assert_eq!(r.last_time(), 2.0);
    }

    #[test]
    fn zero_length_interval() {
        let f = |_t: f64, _z: Complex64| Ok(Complex64::new(1.0, 0.0));
        let r = integrate(&f, Complex64::new(0.0, 1.0), 0.0, 0.0, &OdeOptions::default()).unwrap();
        assert_eq!(r.values.len(), 1);
    }

    #[test]
    fn pole_is_not_jumped() {
        // ż = 2/z along the negative imaginary direction hits 0 at t = 1.
        let field = WithPoles {
            field: |_t: f64, z: Complex64| Ok(2.0 / z),
            distance: |_t: f64, z: Complex64| z.norm(),
        };
        let r = integrate(&field, Complex64::new(0.0, 2.0), 0.0, 2.0, &OdeOptions::default())
            .unwrap();
        let ts = r.swallow_time.unwrap();
        assert!((ts - 1.0).abs() < 1e-3, "{ts}");
    }

    #[test]
    fn tolerance_controls_error() {
        let f = |t: f64, z: Complex64| Ok(Complex64::new(0.0, 1.0) * z * t.cos());
        let z0 = Complex64::new(1.0, 0.5);
        let exact = z0 * (Complex64::new(0.0, 1.0) * 3f64.sin()).exp();
        let coarse = integrate(&f, z0, 0.0, 3.0, &OdeOptions::without_swallow(1e-5)).unwrap();
        let fine = integrate(&f, z0, 0.0, 3.0, &OdeOptions::without_swallow(1e-11)).unwrap();
        assert!((fine.last() - exact).norm() < (coarse.last() - exact).norm());
        assert!((fine.last() - exact).norm() < 1e-9);
    }
}
