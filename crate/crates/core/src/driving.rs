//! Deterministic schedules and SLE-type driving functions.
//!
//! A [`Schedule`] is a real function of time with a derivative; it is used for
//! driving functions, for `λ(t)`, for the annulus modulus `τ(t)` and for the
//! SLE drift `h(t)`. [`DrivingSpec::Sle`] realizes
//! `ξ_t = ξ_0 + √κ B_t + ∫ h` on a uniform mesh by Euler–Maruyama.

use crate::error::{Error, Result};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A real function of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    Constant { value: f64 },
    Linear { start: f64, slope: f64 },
    /// Monotone cubic (Fritsch–Carlson) interpolation through the samples,
    /// extended linearly with the end slopes.
    Samples { times: Vec<f64>, values: Vec<f64> },
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Constant { value: 0.0 }
    }
}

impl Schedule {
    pub fn constant(value: f64) -> Self {
        Schedule::Constant { value }
    }

    pub fn linear(start: f64, slope: f64) -> Self {
        Schedule::Linear { start, slope }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Schedule::Constant { value } if !value.is_finite() => {
                Err(Error::InvalidInput("schedule value must be finite".into()))
            }
            Schedule::Linear { start, slope } if !(start.is_finite() && slope.is_finite()) => {
                Err(Error::InvalidInput("schedule coefficients must be finite".into()))
            }
            Schedule::Samples { times, values } => {
                if times.len() != values.len() || times.len() < 2 {
                    return Err(Error::InvalidInput(
                        "samples need at least two (time, value) pairs of equal length".into(),
                    ));
                }
                if times.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::InvalidInput(
                        "sample times must be strictly increasing".into(),
                    ));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput("sample values must be finite".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Prepares the schedule for repeated evaluation.
    pub fn realize(&self) -> Result<Realized> {
        self.validate()?;
        Ok(match self {
            Schedule::Constant { value } => Realized::Linear {
                start: *value,
                slope: 0.0,
            },
            Schedule::Linear { start, slope } => Realized::Linear {
                start: *start,
                slope: *slope,
            },
            Schedule::Samples { times, values } => Realized::Cubic(MonotoneCubic::new(
                times.clone(),
                values.clone(),
            )),
        })
    }
}

/// Piecewise cubic Hermite interpolant with Fritsch–Carlson slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneCubic {
    t: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(t: Vec<f64>, y: Vec<f64>) -> Self {
        let n = t.len();
        let d: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / (t[i + 1] - t[i])).collect();
        let mut m = vec![0.0; n];
        m[0] = d[0];
        m[n - 1] = d[n - 2];
        for i in 1..n - 1 {
            m[i] = if d[i - 1] * d[i] <= 0.0 {
                0.0
            } else {
                0.5 * (d[i - 1] + d[i])
            };
        }
        for i in 0..n - 1 {
            if d[i] == 0.0 {
                m[i] = 0.0;
                m[i + 1] = 0.0;
                continue;
            }
            let a = m[i] / d[i];
            let b = m[i + 1] / d[i];
            let s = a * a + b * b;
            if s > 9.0 {
                let tau = 3.0 / s.sqrt();
                m[i] = tau * a * d[i];
                m[i + 1] = tau * b * d[i];
            }
        }
        MonotoneCubic { t, y, m }
    }

    fn segment(&self, x: f64) -> usize {
        let i = self.t.partition_point(|&s| s <= x);
        i.clamp(1, self.t.len() - 1) - 1
    }

    pub fn value(&self, x: f64) -> f64 {
        let n = self.t.len();
        if x <= self.t[0] {
            return self.y[0] + self.m[0] * (x - self.t[0]);
        }
        if x >= self.t[n - 1] {
            return self.y[n - 1] + self.m[n - 1] * (x - self.t[n - 1]);
        }
        let i = self.segment(x);
        let h = self.t[i + 1] - self.t[i];
        let s = (x - self.t[i]) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[i] + h10 * h * self.m[i] + h01 * self.y[i + 1] + h11 * h * self.m[i + 1]
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let n = self.t.len();
        if x <= self.t[0] {
            return self.m[0];
        }
        if x >= self.t[n - 1] {
            return self.m[n - 1];
        }
        let i = self.segment(x);
        let h = self.t[i + 1] - self.t[i];
        let s = (x - self.t[i]) / h;
        let s2 = s * s;
        let d00 = 6.0 * s2 - 6.0 * s;
        let d10 = 3.0 * s2 - 4.0 * s + 1.0;
        let d01 = -6.0 * s2 + 6.0 * s;
        let d11 = 3.0 * s2 - 2.0 * s;
        (d00 * self.y[i] + d01 * self.y[i + 1]) / h + d10 * self.m[i] + d11 * self.m[i + 1]
    }
}

/// A schedule ready for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum Realized {
    Linear { start: f64, slope: f64 },
    Cubic(MonotoneCubic),
    /// Piecewise linear on a uniform mesh, held constant past the end.
    Path { dt: f64, values: Vec<f64> },
}

impl Realized {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            Realized::Linear { start, slope } => start + slope * t,
            Realized::Cubic(c) => c.value(t),
            Realized::Path { dt, values } => {
                let s = (t / dt).max(0.0);
                let k = s.floor() as usize;
                if k + 1 >= values.len() {
                    return *values.last().expect("path is never empty");
                }
                let f = s - k as f64;
                values[k] + f * (values[k + 1] - values[k])
            }
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            Realized::Linear { slope, .. } => *slope,
            Realized::Cubic(c) => c.derivative(t),
            Realized::Path { dt, values } => {
                let k = (t / dt).max(0.0).floor() as usize;
                if k + 1 >= values.len() {
                    return 0.0;
                }
                (values[k + 1] - values[k]) / dt
            }
        }
    }
}

/// Driving function specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DrivingSpec {
    Constant {
        value: f64,
    },
    Linear {
        start: f64,
        slope: f64,
    },
    Samples {
        times: Vec<f64>,
        values: Vec<f64>,
    },
    Sle {
        kappa: f64,
        #[serde(default)]
        drift: Schedule,
        seed: u64,
        dt: f64,
        #[serde(default)]
        start: f64,
    },
}

impl DrivingSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            DrivingSpec::Constant { value } => Schedule::constant(*value).validate(),
            DrivingSpec::Linear { start, slope } => Schedule::linear(*start, *slope).validate(),
            DrivingSpec::Samples { times, values } => Schedule::Samples {
                times: times.clone(),
                values: values.clone(),
            }
            .validate(),
            DrivingSpec::Sle {
                kappa,
                drift,
                dt,
                start,
                ..
            } => {
                if !(*kappa >= 0.0) || !kappa.is_finite() {
                    return Err(Error::InvalidInput("kappa must be non-negative".into()));
                }
                if !(*dt > 0.0) || !dt.is_finite() {
                    return Err(Error::InvalidInput("dt must be positive".into()));
                }
                if !start.is_finite() {
                    return Err(Error::InvalidInput("start must be finite".into()));
                }
                drift.validate()
            }
        }
    }

    /// Builds a dense schedule valid at least on `[0, t_end]`.
    pub fn realize(&self, t_end: f64) -> Result<Realized> {
        self.validate()?;
        match self {
            DrivingSpec::Constant { value } => Schedule::constant(*value).realize(),
            DrivingSpec::Linear { start, slope } => Schedule::linear(*start, *slope).realize(),
            DrivingSpec::Samples { times, values } => Schedule::Samples {
                times: times.clone(),
                values: values.clone(),
            }
            .realize(),
            DrivingSpec::Sle {
                kappa,
                drift,
                seed,
                dt,
                start,
            } => {
                let steps = (t_end.max(0.0) / dt).ceil() as usize;
                let w = brownian_path(*seed, *dt, steps);
                let h = drift.realize()?;
                let sk = kappa.sqrt();
                let mut values = Vec::with_capacity(steps + 1);
                let mut drift_acc = 0.0;
                for (k, wk) in w.iter().enumerate() {
                    values.push(start + sk * wk + drift_acc);
                    drift_acc += h.value(k as f64 * dt) * dt;
                }
                Ok(Realized::Path { dt: *dt, values })
            }
        }
    }
}

/// Standard normal number `k` of the stream keyed by `seed`.
///
/// Each normal consumes four 32-bit words of the ChaCha8 keystream starting
/// at word `4k`, so any entry can be produced without generating the
/// preceding ones.
pub fn counter_normal(seed: u64, k: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_word_pos(4 * k as u128);
    box_muller(rng.next_u64(), rng.next_u64())
}

fn box_muller(a: u64, b: u64) -> f64 {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    let u1 = ((a >> 11) + 1) as f64 * SCALE;
    let u2 = (b >> 11) as f64 * SCALE;
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Standard Brownian motion sampled at `k dt`, `k = 0..=steps`.
pub fn brownian_path(seed: u64, dt: f64, steps: usize) -> Vec<f64> {
    // Sequential reads hit the same keystream positions as counter_normal.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sdt = dt.sqrt();
    let mut w = Vec::with_capacity(steps + 1);
    let mut acc = 0.0;
    w.push(acc);
    for _ in 0..steps {
        acc += sdt * box_muller(rng.next_u64(), rng.next_u64());
        w.push(acc);
    }
    w
}

/// Samples `(t, ξ(t))` on a uniform grid over `[0, t_end]`.
pub fn sample_path(driving: &Realized, t_end: f64, dt: f64) -> Vec<(f64, f64)> {
    let n = (t_end / dt).round().max(1.0) as usize;
    (0..=n)
        .map(|k| {
            let t = if k == n { t_end } else { k as f64 * dt };
            (t, driving.value(t))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sle(kappa: f64, drift: Schedule, seed: u64) -> DrivingSpec {
        DrivingSpec::Sle {
            kappa,
            drift,
            seed,
            dt: 1e-3,
            start: 0.25,
        }
    }

    #[test]
    fn zero_noise_is_constant() {
        let p = sle(0.0, Schedule::default(), 7).realize(1.0).unwrap();
        for t in [0.0, 0.3, 0.77, 1.0] {
            assert_eq!(p.value(t), 0.25);
        }
    }

    #[test]
    fn pure_drift_is_linear() {
        let p = sle(0.0, Schedule::constant(1.0), 7).realize(1.0).unwrap();
        for t in [0.0, 0.3, 0.5, 1.0] {
            assert!((p.value(t) - 0.25 - t).abs() < 1e-12);
        }
    }

    #[test]
    fn paths_are_reproducible_and_scale() {
        let a = sle(4.0, Schedule::default(), 3).realize(0.5).unwrap();
        let b = sle(4.0, Schedule::default(), 3).realize(0.5).unwrap();
        assert_eq!(a, b);
        let spec = |kappa| DrivingSpec::Sle {
            kappa,
            drift: Schedule::default(),
            seed: 3,
            dt: 1e-3,
            start: 0.0,
        };
        let (Realized::Path { values: v4, .. }, Realized::Path { values: v1, .. }) =
            (spec(4.0).realize(0.5).unwrap(), spec(1.0).realize(0.5).unwrap())
        else {
            panic!("expected paths");
        };
        for (x, y) in v4.iter().zip(&v1) {
            assert_eq!(*x, 2.0 * y);
        }
    }

    #[test]
    fn counter_access_matches_sequential() {
        let w = brownian_path(11, 0.01, 50);
        for k in [0usize, 7, 49] {
            let inc = (w[k + 1] - w[k]) / 0.1;
            assert!((inc - counter_normal(11, k as u64)).abs() < 1e-12);
        }
    }

    #[test]
    fn increments_are_uncorrelated() {
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|k| counter_normal(1, k as u64)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        let cov = xs
            .windows(2)
            .map(|w| (w[0] - mean) * (w[1] - mean))
            .sum::<f64>()
            / (n - 1) as f64;
        assert!((cov / var).abs() < 0.02);
        assert!((var - 1.0).abs() < 0.02);
    }

    #[test]
    fn monotone_cubic_interpolates() {
        let c = MonotoneCubic::new(vec![0.0, 1.0, 2.0, 4.0], vec![1.0, 1.5, 3.0, 3.2]);
        for (t, y) in [(0.0, 1.0), (1.0, 1.5), (2.0, 3.0), (4.0, 3.2)] {
            assert!((c.value(t) - y).abs() < 1e-14);
        }
        let h = 1e-6;
        for t in [0.3, 1.7, 2.5, 3.9] {
            let fd = (c.value(t + h) - c.value(t - h)) / (2.0 * h);
            assert!((c.derivative(t) - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn schedule_validation() {
        let bad = Schedule::Samples {
            times: vec![0.0, 0.0],
            values: vec![1.0, 2.0],
        };
        assert!(bad.validate().is_err());
        assert!(sle(-1.0, Schedule::default(), 0).validate().is_err());
    }

    proptest! {
        #[test]
        fn monotone_data_gives_monotone_interpolant(
            steps in proptest::collection::vec((0.01f64..1.0, 0.0f64..2.0), 2..8),
            probes in proptest::collection::vec(0.0f64..1.0, 20),
        ) {
            let mut t = vec![0.0];
            let mut y = vec![0.0];
            for (dt, dy) in &steps {
                t.push(t.last().unwrap() + dt);
                y.push(y.last().unwrap() + dy);
            }
            let c = MonotoneCubic::new(t.clone(), y);
            let end = *t.last().unwrap();
            let mut xs: Vec<f64> = probes.iter().map(|p| p * end).collect();
            xs.sort_by(f64::total_cmp);
            for w in xs.windows(2) {
                prop_assert!(c.value(w[1]) >= c.value(w[0]) - 1e-12);
                prop_assert!(c.derivative(w[0]) >= -1e-12);
            }
        }
    }
}
