//! Truncated series and products over a free Fuchsian group.
//!
//! Everything here is evaluated over an enumerated ball of words. Sums that
//! only converge after pairing (a term at an orbit point of the base point
//! `c` against the matching term at the translated orbit point) are always
//! accumulated pair by pair. Each result carries the absolute contribution
//! of the outermost shell as a tail heuristic.

use crate::error::{Error, Result};
use crate::fuchsian::{Ball, EnumerationPolicy, FuchsianGroup, Word};
use crate::moebius::{mat_mul, ExtComplex, Moebius};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

const POLE_TOL: f64 = 1e-12;

/// A truncated series value with its tail heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesValue {
    pub value: Complex64,
    pub tail_estimate: f64,
}

impl SeriesValue {
    pub fn new(value: Complex64, tail_estimate: f64) -> Self {
        SeriesValue {
            value,
            tail_estimate,
        }
    }

    pub fn exact(value: Complex64) -> Self {
        SeriesValue::new(value, 0.0)
    }
}

/// Time derivatives `(ȧ, ḃ, ċ, ḋ)` of the generator coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupVelocity {
    rates: Vec<[f64; 4]>,
}

impl GroupVelocity {
    /// Accepts rates that keep `ad - bc` constant to first order.
    pub fn new(group: &FuchsianGroup, rates: Vec<[f64; 4]>) -> Result<Self> {
        if rates.len() != group.rank() {
            return Err(Error::InvalidInput(format!(
                "{} generator rates for a rank {} group",
                rates.len(),
                group.rank()
            )));
        }
        for (i, (g, r)) in group.generators().iter().zip(&rates).enumerate() {
            let drift = det_rate(g.coefficients(), *r);
            let scale = 1.0 + norm4(g.coefficients()) * norm4(*r);
            if drift.abs() > 1e-10 * scale {
                return Err(Error::InvalidInput(format!(
                    "rate of generator {} changes the determinant (d/dt det = {drift:e})",
                    i + 1
                )));
            }
        }
        Ok(GroupVelocity { rates })
    }

    /// Removes the component of each rate that would change the determinant.
    pub fn projected(group: &FuchsianGroup, rates: Vec<[f64; 4]>) -> Result<Self> {
        if rates.len() != group.rank() {
            return Err(Error::InvalidInput(format!(
                "{} generator rates for a rank {} group",
                rates.len(),
                group.rank()
            )));
        }
        let rates = group
            .generators()
            .iter()
            .zip(rates)
            .map(|(g, r)| {
                let n = det_gradient(g.coefficients());
                let s = dot4(r, n) / dot4(n, n);
                [r[0] - s * n[0], r[1] - s * n[1], r[2] - s * n[2], r[3] - s * n[3]]
            })
            .collect();
        Ok(GroupVelocity { rates })
    }

    pub fn zero(rank: usize) -> Self {
        GroupVelocity {
            rates: vec![[0.0; 4]; rank],
        }
    }

    pub fn rates(&self) -> &[[f64; 4]] {
        &self.rates
    }

    pub fn scaled(&self, s: f64) -> Self {
        GroupVelocity {
            rates: self.rates.iter().map(|r| r.map(|x| s * x)).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.rates.iter().all(|r| r.iter().all(|&x| x == 0.0))
    }
}

fn dot4(a: [f64; 4], b: [f64; 4]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn norm4(a: [f64; 4]) -> f64 {
    dot4(a, a).sqrt()
}

fn det_gradient(m: [f64; 4]) -> [f64; 4] {
    [m[3], -m[2], -m[1], m[0]]
}

fn det_rate(m: [f64; 4], r: [f64; 4]) -> f64 {
    dot4(det_gradient(m), r)
}

/// Matrix and rate of a letter, without sign normalization.
fn letter_pair(group: &FuchsianGroup, v: &GroupVelocity, l: usize) -> ([f64; 4], [f64; 4]) {
    let g = group.generators()[l / 2].coefficients();
    let r = v.rates[l / 2];
    if l.is_multiple_of(2) {
        (g, r)
    } else {
        ([g[3], -g[1], -g[2], g[0]], [r[3], -r[1], -r[2], r[0]])
    }
}

/// Product rule step `(M, Ṁ) -> (MX, ṀX + MẊ)`.
fn extend(m: [f64; 4], dm: [f64; 4], x: [f64; 4], dx: [f64; 4]) -> ([f64; 4], [f64; 4]) {
    let a = mat_mul(dm, x);
    let b = mat_mul(m, dx);
    (mat_mul(m, x), [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]])
}

/// `d/dt M_t(z)` at frozen `z`. Invariant under rescaling `(M, Ṁ)` jointly.
pub fn point_velocity(m: [f64; 4], dm: [f64; 4], z: Complex64) -> Option<Complex64> {
    let den = m[2] * z + m[3];
    if den.norm() == 0.0 {
        return None;
    }
    let num = (dm[0] * z + dm[1]) * den - (m[0] * z + m[1]) * (dm[2] * z + dm[3]);
    Some(num / (den * den))
}

fn point_velocity_real(m: [f64; 4], dm: [f64; 4], x: f64) -> Option<f64> {
    let den = m[2] * x + m[3];
    if den == 0.0 {
        return None;
    }
    Some(((dm[0] * x + dm[1]) * den - (m[0] * x + m[1]) * (dm[2] * x + dm[3])) / (den * den))
}

/// `φ'(x)` for a raw matrix of arbitrary positive determinant.
fn real_derivative(m: [f64; 4], x: f64) -> f64 {
    let den = m[2] * x + m[3];
    (m[0] * m[3] - m[1] * m[2]) / (den * den)
}

/// `½ d/dt log ρ'(x_t)` for a determinant-preserving path `ρ_t` and a
/// moving point `x_t`.
#[inline]
fn half_log_deriv_rate(m: [f64; 4], dm: [f64; 4], x: f64, dx: f64) -> f64 {
    -(dm[2] * x + m[2] * dx + dm[3]) / (m[2] * x + m[3])
}

/// Matrix and rate of an arbitrary word.
pub fn word_matrix_rate(
    group: &FuchsianGroup,
    velocity: &GroupVelocity,
    w: &Word,
) -> Result<([f64; 4], [f64; 4])> {
    if let Some(k) = w.max_generator() {
        if k >= group.rank() {
            return Err(Error::InvalidInput(format!("word {w} is not in the group")));
        }
    }
    let mut m = Moebius::IDENTITY.coefficients();
    let mut dm = [0.0; 4];
    for &l in w.letters() {
        let (x, dx) = letter_pair(group, velocity, l);
        (m, dm) = extend(m, dm, x, dx);
    }
    Ok((m, dm))
}

/// `d/dt φ_{w,t}(z)` at frozen `z`.
pub fn word_velocity(
    group: &FuchsianGroup,
    velocity: &GroupVelocity,
    w: &Word,
    z: Complex64,
) -> Result<Complex64> {
    let (m, dm) = word_matrix_rate(group, velocity, w)?;
    point_velocity(m, dm, z).ok_or_else(|| Error::PoleEncountered {
        word: w.to_string(),
    })
}

/// Per-word data shared by all evaluations at one instant: the ball and the
/// orbit of the base point `c` together with the orbits of `ψ_k(c)`, each
/// with its time derivative.
#[derive(Debug, Clone)]
pub struct Snapshot {
    group: FuchsianGroup,
    velocity: GroupVelocity,
    c: f64,
    policy: EnumerationPolicy,
    ball: Ball,
    limit_sample: Vec<f64>,
    /// `φ(c)` and `d/dt φ(c)` per ball entry.
    y: Vec<f64>,
    ydot: Vec<f64>,
    /// `φ(ψ_k(c))` and its time derivative, indexed `[k][entry]`.
    x: Vec<Vec<f64>>,
    xdot: Vec<Vec<f64>>,
}

impl Snapshot {
    pub fn new(
        group: FuchsianGroup,
        velocity: GroupVelocity,
        c: f64,
        policy: EnumerationPolicy,
    ) -> Result<Self> {
        policy.validate()?;
        if velocity.rates.len() != group.rank() {
            return Err(Error::InvalidInput("velocity rank does not match group".into()));
        }
        let ball = group.ball(&policy)?;
        let limit_sample = ball.limit_set_sample();
        let margin = crate::fuchsian::distance_to_sorted(&limit_sample, c);
        if margin < crate::fuchsian::NEAR_LIMIT_TOL {
            return Err(Error::NearLimitSet {
                point: c,
                distance: margin,
            });
        }

        let n = ball.len();
        let mut mats = Vec::with_capacity(n);
        let mut rates = Vec::with_capacity(n);
        for e in ball.entries() {
            if e.parent == usize::MAX {
                mats.push(Moebius::IDENTITY.coefficients());
                rates.push([0.0; 4]);
            } else {
                let (x, dx) = letter_pair(&group, &velocity, e.last);
                let (m, dm) = extend(mats[e.parent], rates[e.parent], x, dx);
                mats.push(m);
                rates.push(dm);
            }
        }

        let orbit = |p: f64, dp: f64| -> Result<(Vec<f64>, Vec<f64>)> {
            let mut v = Vec::with_capacity(n);
            let mut dv = Vec::with_capacity(n);
            for (i, e) in ball.entries().iter().enumerate() {
                let m = mats[i];
                let den = m[2] * p + m[3];
                if den.abs() <= POLE_TOL * (m[2].abs() + m[3].abs()) {
                    return Err(Error::ZeroDenominator {
                        word: e.word.to_string(),
                    });
                }
                v.push((m[0] * p + m[1]) / den);
                let vel = point_velocity_real(m, rates[i], p).unwrap_or(0.0);
                dv.push(vel + real_derivative(m, p) * dp);
            }
            Ok((v, dv))
        };

        let (y, ydot) = orbit(c, 0.0)?;
        let mut x = Vec::with_capacity(group.rank());
        let mut xdot = Vec::with_capacity(group.rank());
        for (k, g) in group.generators().iter().enumerate() {
            let ck = g.apply_real(c).ok_or_else(|| Error::ZeroDenominator {
                word: Word::generator(k, false).to_string(),
            })?;
            let m = g.coefficients();
            let dck = point_velocity_real(m, velocity.rates[k], c).unwrap_or(0.0);
            let (xk, dxk) = orbit(ck, dck)?;
            x.push(xk);
            xdot.push(dxk);
        }

        Ok(Snapshot {
            group,
            velocity,
            c,
            policy,
            ball,
            limit_sample,
            y,
            ydot,
            x,
            xdot,
        })
    }

    pub fn group(&self) -> &FuchsianGroup {
        &self.group
    }

    pub fn velocity(&self) -> &GroupVelocity {
        &self.velocity
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn policy(&self) -> &EnumerationPolicy {
        &self.policy
    }

    pub fn ball(&self) -> &Ball {
        &self.ball
    }

    pub fn rank(&self) -> usize {
        self.group.rank()
    }

    pub fn limit_set_sample(&self) -> &[f64] {
        &self.limit_sample
    }

    pub fn limit_set_margin(&self, x: f64) -> f64 {
        crate::fuchsian::distance_to_sorted(&self.limit_sample, x)
    }

    pub(crate) fn c_orbit(&self) -> (&[f64], &[f64]) {
        (&self.y, &self.ydot)
    }

    pub(crate) fn translated_orbit(&self, k: usize) -> (&[f64], &[f64]) {
        (&self.x[k], &self.xdot[k])
    }

    fn outer_start(&self) -> usize {
        self.ball.outer_shell().start
    }

    fn word_pair(&self, w: &Word) -> Result<([f64; 4], [f64; 4])> {
        word_matrix_rate(&self.group, &self.velocity, w)
    }

    pub fn word_velocity(&self, w: &Word, z: Complex64) -> Result<Complex64> {
        word_velocity(&self.group, &self.velocity, w, z)
    }

    fn check_generator(&self, k: usize) -> Result<()> {
        if k >= self.rank() {
            return Err(Error::InvalidInput(format!(
                "generator index {} out of range",
                k + 1
            )));
        }
        Ok(())
    }

    /// `log Ψ_k(z)`, summed factor by factor with principal logs.
    pub fn log_psi_k(&self, k: usize, z: Complex64) -> Result<SeriesValue> {
        self.check_generator(k)?;
        let outer = self.outer_start();
        let mut sum = Complex64::new(0.0, 0.0);
        let mut tail = 0.0;
        let mut wide = false;
        for i in 0..self.ball.len() {
            let (num, den) = (z - self.x[k][i], z - self.y[i]);
            if den.norm() < POLE_TOL || num.norm() < POLE_TOL {
                return Err(Error::ZeroDenominator {
                    word: self.ball.entries()[i].word.to_string(),
                });
            }
            let l = 2.0 * (num / den).ln();
            wide |= l.im.abs() >= std::f64::consts::PI;
            sum += l;
            if i >= outer {
                tail += l.norm();
            }
        }
        if wide && self.ball.radius() > 0 {
            log::warn!("factor of Ψ_{} with large argument; consider a larger ball", k + 1);
        }
        Ok(SeriesValue::new(sum, tail))
    }

    /// `Ψ_k(z) = Π_φ ((z - φ(ψ_k(c))) / (z - φ(c)))²`.
    pub fn psi_k(&self, k: usize, z: Complex64) -> Result<SeriesValue> {
        let l = self.log_psi_k(k, z)?;
        let v = l.value.exp();
        Ok(SeriesValue::new(v, v.norm() * l.tail_estimate))
    }

    /// `log χ_k(ρ) = Σ_φ [log ρ'(φ(ψ_k(c))) - log ρ'(φ(c))]`.
    pub fn log_char_chi(&self, k: usize, rho: &Word) -> Result<SeriesValue> {
        self.check_generator(k)?;
        let (m, _) = self.word_pair(rho)?;
        let outer = self.outer_start();
        let mut sum = 0.0;
        let mut tail = 0.0;
        for i in 0..self.ball.len() {
            let (dx, dy) = (m[2] * self.x[k][i] + m[3], m[2] * self.y[i] + m[3]);
            if dx == 0.0 || dy == 0.0 {
                return Err(Error::PoleEncountered {
                    word: rho.to_string(),
                });
            }
            let t = -2.0 * (dx.abs().ln() - dy.abs().ln());
            sum += t;
            if i >= outer {
                tail += t.abs();
            }
        }
        Ok(SeriesValue::new(Complex64::new(sum, 0.0), tail))
    }

    pub fn char_chi(&self, k: usize, rho: &Word) -> Result<SeriesValue> {
        let l = self.log_char_chi(k, rho)?;
        let v = l.value.exp();
        Ok(SeriesValue::new(v, v.norm() * l.tail_estimate))
    }

    /// `½ d/dt log χ_k(ρ)`, differentiated analytically term by term.
    pub fn half_log_char_rate(&self, k: usize, rho: &Word) -> Result<SeriesValue> {
        self.check_generator(k)?;
        let (m, dm) = self.word_pair(rho)?;
        self.half_log_char_rate_pair(k, m, dm, rho)
    }

    fn half_log_char_rate_pair(
        &self,
        k: usize,
        m: [f64; 4],
        dm: [f64; 4],
        rho: &Word,
    ) -> Result<SeriesValue> {
        let outer = self.outer_start();
        let mut sum = 0.0;
        let mut tail = 0.0;
        for i in 0..self.ball.len() {
            let (x, y) = (self.x[k][i], self.y[i]);
            if m[2] * x + m[3] == 0.0 || m[2] * y + m[3] == 0.0 {
                return Err(Error::PoleEncountered {
                    word: rho.to_string(),
                });
            }
            let t = half_log_deriv_rate(m, dm, x, self.xdot[k][i])
                - half_log_deriv_rate(m, dm, y, self.ydot[i]);
            sum += t;
            if i >= outer {
                tail += t.abs();
            }
        }
        Ok(SeriesValue::new(Complex64::new(sum, 0.0), tail))
    }

    /// `Υ(z) = Σ_φ [1/(φ(z) - ξ) - 1/(φ(c) - ξ)]`.
    pub fn upsilon(&self, xi: f64, z: Complex64) -> Result<SeriesValue> {
        let outer = self.outer_start();
        let mut sum = Complex64::new(0.0, 0.0);
        let mut tail = 0.0;
        for (i, e) in self.ball.entries().iter().enumerate() {
            let w = match e.map.apply(z) {
                ExtComplex::Finite(w) => w,
                ExtComplex::Infinity => {
                    return Err(Error::PoleEncountered {
                        word: e.word.to_string(),
                    })
                }
            };
            if (w - xi).norm() < POLE_TOL {
                return Err(Error::PoleEncountered {
                    word: e.word.to_string(),
                });
            }
            let t = 1.0 / (w - xi) - 1.0 / (self.y[i] - xi);
            sum += t;
            if i >= outer {
                tail += t.norm();
            }
        }
        Ok(SeriesValue::new(sum, tail))
    }

    /// `K(ρ) = Σ_φ [1/(φ(ρ(c)) - ξ) - 1/(φ(c) - ξ)]`.
    pub fn k_functional(&self, xi: f64, rho: &Word) -> Result<SeriesValue> {
        if rho.is_empty() {
            return Ok(SeriesValue::exact(Complex64::new(0.0, 0.0)));
        }
        let rho_map = self.group.evaluate(rho)?;
        let rc = rho_map.apply_real(self.c).ok_or_else(|| Error::PoleEncountered {
            word: rho.to_string(),
        })?;
        let outer = self.outer_start();
        let mut sum = 0.0;
        let mut tail = 0.0;
        for (i, e) in self.ball.entries().iter().enumerate() {
            let w = e.map.apply_real(rc).ok_or_else(|| Error::PoleEncountered {
                word: e.word.to_string(),
            })?;
            let t = 1.0 / (w - xi) - 1.0 / (self.y[i] - xi);
            sum += t;
            if i >= outer {
                tail += t.abs();
            }
        }
        Ok(SeriesValue::new(Complex64::new(sum, 0.0), tail))
    }

    /// `J(ρ) = Σ_k δ_k ½ d/dt log χ_k(ρ)`.
    pub fn j_functional(&self, deltas: &[f64], rho: &Word) -> Result<SeriesValue> {
        self.check_deltas(deltas)?;
        let (m, dm) = self.word_pair(rho)?;
        let mut value = 0.0;
        let mut tail = 0.0;
        for (k, &d) in deltas.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let s = self.half_log_char_rate_pair(k, m, dm, rho)?;
            value += d * s.value.re;
            tail += d.abs() * s.tail_estimate;
        }
        Ok(SeriesValue::new(Complex64::new(value, 0.0), tail))
    }

    fn check_deltas(&self, deltas: &[f64]) -> Result<()> {
        if deltas.len() != self.rank() {
            return Err(Error::InvalidInput(format!(
                "{} deltas for a rank {} group",
                deltas.len(),
                self.rank()
            )));
        }
        Ok(())
    }

    /// `Ψ'/Ψ` for `Ψ = Π_k Ψ_k^{δ_k}`.
    pub fn log_deriv_psi(&self, deltas: &[f64], z: Complex64) -> Result<SeriesValue> {
        self.check_deltas(deltas)?;
        let outer = self.outer_start();
        let mut sum = Complex64::new(0.0, 0.0);
        let mut tail = 0.0;
        for i in 0..self.ball.len() {
            let dy = z - self.y[i];
            if dy.norm() < POLE_TOL {
                return Err(Error::ZeroDenominator {
                    word: self.ball.entries()[i].word.to_string(),
                });
            }
            let mut t = Complex64::new(0.0, 0.0);
            for (k, &d) in deltas.iter().enumerate() {
                let dx = z - self.x[k][i];
                if dx.norm() < POLE_TOL {
                    return Err(Error::ZeroDenominator {
                        word: self.ball.entries()[i].word.to_string(),
                    });
                }
                t += 2.0 * d * (1.0 / dx - 1.0 / dy);
            }
            sum += t;
            if i >= outer {
                tail += t.norm();
            }
        }
        Ok(SeriesValue::new(sum, tail))
    }

    /// `Ψ̇_k/Ψ_k` at frozen `z`.
    pub fn time_deriv_psi(&self, k: usize, z: Complex64) -> Result<SeriesValue> {
        self.check_generator(k)?;
        let outer = self.outer_start();
        let mut sum = Complex64::new(0.0, 0.0);
        let mut tail = 0.0;
        for i in 0..self.ball.len() {
            let (dx, dy) = (z - self.x[k][i], z - self.y[i]);
            if dx.norm() < POLE_TOL || dy.norm() < POLE_TOL {
                return Err(Error::ZeroDenominator {
                    word: self.ball.entries()[i].word.to_string(),
                });
            }
            let t = 2.0 * (-self.xdot[k][i] / dx + self.ydot[i] / dy);
            sum += t;
            if i >= outer {
                tail += t.norm();
            }
        }
        Ok(SeriesValue::new(sum, tail))
    }
}
