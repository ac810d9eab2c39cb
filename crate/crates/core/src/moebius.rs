//! Real Moebius transformations acting on the upper half-plane.
//!
//! A map `z -> (az + b)/(cz + d)` with real coefficients and positive
//! determinant preserves the upper half-plane. Maps are stored with
//! `ad - bc = 1` and a canonical sign (`a + d >= 0`, ties broken by
//! `a >= 0`, then `b >= 0`) so coefficient comparison is meaningful.

use crate::error::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Tolerance on `|trace| - 2` below which a map is treated as parabolic.
pub const PARABOLIC_TOL: f64 = 1e-9;

/// Coefficient distance below which a map is the identity.
pub const IDENTITY_TOL: f64 = 1e-12;

const TRIPLE_TOL: f64 = 1e-12;

/// A point of the extended complex plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ExtComplex {
    Finite(Complex64),
    Infinity,
}

impl ExtComplex {
    pub fn real(x: f64) -> Self {
        ExtComplex::Finite(Complex64::new(x, 0.0))
    }

    pub fn finite(self) -> Option<Complex64> {
        match self {
            ExtComplex::Finite(z) => Some(z),
            ExtComplex::Infinity => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, ExtComplex::Infinity)
    }

    /// Real part of a finite point; `None` for infinity.
    pub fn re(self) -> Option<f64> {
        self.finite().map(|z| z.re)
    }
}

impl From<Complex64> for ExtComplex {
    fn from(z: Complex64) -> Self {
        ExtComplex::Finite(z)
    }
}

impl From<f64> for ExtComplex {
    fn from(x: f64) -> Self {
        ExtComplex::real(x)
    }
}

impl fmt::Display for ExtComplex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtComplex::Finite(z) => write!(f, "{}", z),
            ExtComplex::Infinity => write!(f, "inf"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MapClass {
    Identity,
    Elliptic,
    Parabolic,
    Hyperbolic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moebius {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
}

/// Raw 2x2 product `[a b; c d] * [e f; g h]`.
#[inline]
pub(crate) fn mat_mul(m: [f64; 4], n: [f64; 4]) -> [f64; 4] {
    [
        m[0] * n[0] + m[1] * n[2],
        m[0] * n[1] + m[1] * n[3],
        m[2] * n[0] + m[3] * n[2],
        m[2] * n[1] + m[3] * n[3],
    ]
}

/// Sign that brings a determinant-one quadruple into canonical form.
#[inline]
fn canonical_sign(m: [f64; 4]) -> f64 {
    let tr = m[0] + m[3];
    if tr > 0.0 {
        1.0
    } else if tr < 0.0 {
        -1.0
    } else if m[0] != 0.0 {
        m[0].signum()
    } else if m[1] != 0.0 {
        m[1].signum()
    } else {
        m[2].signum()
    }
}

impl Moebius {
    pub const IDENTITY: Moebius = Moebius {
        a: 1.0,
        b: 0.0,
        c: 0.0,
        d: 1.0,
    };

    /// Builds a map from raw coefficients, normalizing to determinant one.
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        Self::from_matrix([a, b, c, d])
    }

    pub fn from_matrix(m: [f64; 4]) -> Result<Self> {
        let det = m[0] * m[3] - m[1] * m[2];
        if !(det > 0.0) || !det.is_finite() {
            return Err(Error::NonPositiveDeterminant { det });
        }
        let s = det.sqrt();
        let n = [m[0] / s, m[1] / s, m[2] / s, m[3] / s];
        let sign = canonical_sign(n);
        Ok(Moebius {
            a: sign * n[0],
            b: sign * n[1],
            c: sign * n[2],
            d: sign * n[3],
        })
    }

    pub fn scaling(k: f64) -> Result<Self> {
        Self::new(k, 0.0, 0.0, 1.0)
    }

    pub fn translation(b: f64) -> Self {
        Moebius {
            a: 1.0,
            b,
            c: 0.0,
            d: 1.0,
        }
    }

    /// Hyperbolic map with the given attracting and repelling fixed points and
    /// multiplier `k > 1`: `(f(z) - attracting)/(f(z) - repelling)` equals
    /// `(z - attracting)/(z - repelling) / k`.
    pub fn hyperbolic(attracting: f64, repelling: f64, k: f64) -> Result<Self> {
        if !(k > 1.0) || !k.is_finite() {
            return Err(Error::InvalidInput(format!(
                "multiplier must exceed 1, got {k}"
            )));
        }
        if (attracting - repelling).abs() <= TRIPLE_TOL * (1.0 + attracting.abs()) {
            return Err(Error::InvalidInput(
                "fixed points of a hyperbolic map must differ".into(),
            ));
        }
        // S(z) = (z - a)/(z - r); f = S^-1 o (w -> w/k) o S
        let s = [1.0, -attracting, 1.0, -repelling];
        let s_adj = [-repelling, attracting, -1.0, 1.0];
        let m = mat_mul(s_adj, mat_mul([1.0, 0.0, 0.0, k], s));
        Self::from_matrix(m)
    }

    pub fn coefficients(&self) -> [f64; 4] {
        [self.a, self.b, self.c, self.d]
    }

    pub fn a(&self) -> f64 {
        self.a
    }
    pub fn b(&self) -> f64 {
        self.b
    }
    pub fn c(&self) -> f64 {
        self.c
    }
    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn determinant(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn trace(&self) -> f64 {
        self.a + self.d
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Moebius) -> Moebius {
        let m = mat_mul(self.coefficients(), other.coefficients());
        // The product already has unit determinant; recomputing it would
        // cancel catastrophically for long words, so only fix the sign.
        let sign = canonical_sign(m);
        Moebius {
            a: sign * m[0],
            b: sign * m[1],
            c: sign * m[2],
            d: sign * m[3],
        }
    }

    pub fn inverse(&self) -> Moebius {
        let m = [self.d, -self.b, -self.c, self.a];
        let sign = canonical_sign(m);
        Moebius {
            a: sign * m[0],
            b: sign * m[1],
            c: sign * m[2],
            d: sign * m[3],
        }
    }

    pub fn apply(&self, z: Complex64) -> ExtComplex {
        let den = self.c * z + self.d;
        if den == Complex64::new(0.0, 0.0) {
            return ExtComplex::Infinity;
        }
        ExtComplex::Finite((self.a * z + self.b) / den)
    }

    pub fn apply_ext(&self, z: ExtComplex) -> ExtComplex {
        match z {
            ExtComplex::Finite(z) => self.apply(z),
            ExtComplex::Infinity => {
                if self.c == 0.0 {
                    ExtComplex::Infinity
                } else {
                    ExtComplex::real(self.a / self.c)
                }
            }
        }
    }

    /// Image of a real point; `None` when it is sent to infinity.
    pub fn apply_real(&self, x: f64) -> Option<f64> {
        let den = self.c * x + self.d;
        if den == 0.0 {
            None
        } else {
            Some((self.a * x + self.b) / den)
        }
    }

    /// `1/(cz + d)^2` for the normalized representative.
    pub fn derivative(&self, z: Complex64) -> ExtComplex {
        let den = self.c * z + self.d;
        if den == Complex64::new(0.0, 0.0) {
            return ExtComplex::Infinity;
        }
        ExtComplex::Finite(1.0 / (den * den))
    }

    pub fn is_identity(&self) -> bool {
        self.max_coeff_distance(&Moebius::IDENTITY) < IDENTITY_TOL
    }

    pub fn classify(&self) -> MapClass {
        if self.is_identity() {
            return MapClass::Identity;
        }
        let t = self.trace().abs();
        if (t - 2.0).abs() <= PARABOLIC_TOL {
            MapClass::Parabolic
        } else if t < 2.0 {
            MapClass::Elliptic
        } else {
            MapClass::Hyperbolic
        }
    }

    /// Roots of `cz^2 + (d - a)z - b = 0` on the extended plane.
    pub fn fixed_points(&self) -> Vec<ExtComplex> {
        let (a, b, c, d) = (self.a, self.b, self.c, self.d);
        let scale = a.abs().max(b.abs()).max(d.abs()).max(1.0);
        if c.abs() <= 1e-15 * scale {
            if (d - a).abs() <= 1e-15 * scale {
                return vec![ExtComplex::Infinity];
            }
            return vec![ExtComplex::real(b / (d - a)), ExtComplex::Infinity];
        }
        let disc = (d - a) * (d - a) + 4.0 * b * c;
        let tr = self.trace().abs();
        if (tr - 2.0).abs() <= PARABOLIC_TOL {
            return vec![ExtComplex::real((a - d) / (2.0 * c))];
        }
        if disc >= 0.0 {
            let s = disc.sqrt();
            // Stable quadratic formula.
            let sgn = if d - a >= 0.0 { 1.0 } else { -1.0 };
            let q = -0.5 * ((d - a) + sgn * s);
            let r1 = q / c;
            let r2 = -b / q;
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            vec![ExtComplex::real(lo), ExtComplex::real(hi)]
        } else {
            let s = (-disc).sqrt();
            let re = (a - d) / (2.0 * c);
            let im = s / (2.0 * c.abs());
            vec![
                ExtComplex::Finite(Complex64::new(re, im)),
                ExtComplex::Finite(Complex64::new(re, -im)),
            ]
        }
    }

    /// Fixed points of a hyperbolic map ordered as (attracting, repelling).
    pub fn hyperbolic_fixed_points(&self) -> Option<(ExtComplex, ExtComplex)> {
        if self.classify() != MapClass::Hyperbolic {
            return None;
        }
        let fps = self.fixed_points();
        if fps.len() != 2 {
            return None;
        }
        // |f'(p)| < 1 at the attracting point; at infinity use |c p + d|
        // reasoning via the finite partner.
        let deriv_mag = |p: ExtComplex| match p {
            ExtComplex::Finite(z) => {
                let den = self.c * z + self.d;
                1.0 / den.norm_sqr()
            }
            // f'(inf) in the chart w = 1/z equals d^2 when c = 0.
            ExtComplex::Infinity => self.d * self.d,
        };
        if deriv_mag(fps[0]) < deriv_mag(fps[1]) {
            Some((fps[0], fps[1]))
        } else {
            Some((fps[1], fps[0]))
        }
    }

    pub fn max_coeff_distance(&self, other: &Moebius) -> f64 {
        let p = self.coefficients();
        let q = other.coefficients();
        p.iter()
            .zip(q.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    /// Unique half-plane preserving map with `f(p[j]) = q[j]`.
    pub fn from_triples(p: [ExtComplex; 3], q: [ExtComplex; 3]) -> Result<Moebius> {
        let tp = to_zero_one_infinity(p)?;
        let tq = to_zero_one_infinity(q)?;
        let tq_inv = [tq[3], -tq[1], -tq[2], tq[0]];
        let m = mat_mul(tq_inv, tp);
        let det = m[0] * m[3] - m[1] * m[2];
        if !(det > 0.0) {
            return Err(Error::OrientationMismatch);
        }
        Moebius::from_matrix(m)
    }

    /// Convenience wrapper for finite real triples.
    pub fn from_real_triples(p: [f64; 3], q: [f64; 3]) -> Result<Moebius> {
        Self::from_triples(p.map(ExtComplex::real), q.map(ExtComplex::real))
    }
}

impl fmt::Display for Moebius {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "z -> ({} z + {}) / ({} z + {})",
            self.a, self.b, self.c, self.d
        )
    }
}

fn real_entry(p: ExtComplex) -> Result<Option<f64>> {
    match p {
        ExtComplex::Infinity => Ok(None),
        ExtComplex::Finite(z) => {
            if z.im.abs() > TRIPLE_TOL * (1.0 + z.re.abs()) {
                Err(Error::InvalidInput(format!(
                    "triple entry {z} is not on the real line"
                )))
            } else {
                Ok(Some(z.re))
            }
        }
    }
}

/// Raw matrix of the map sending the triple to `(0, 1, inf)`.
fn to_zero_one_infinity(p: [ExtComplex; 3]) -> Result<[f64; 4]> {
    let e = [real_entry(p[0])?, real_entry(p[1])?, real_entry(p[2])?];
    let close = |x: Option<f64>, y: Option<f64>| match (x, y) {
        (None, None) => true,
        (Some(x), Some(y)) => (x - y).abs() <= TRIPLE_TOL * (1.0 + x.abs().max(y.abs())),
        _ => false,
    };
    if close(e[0], e[1]) || close(e[1], e[2]) || close(e[0], e[2]) {
        return Err(Error::DegenerateTriple);
    }
    Ok(match e {
        [None, Some(p2), Some(p3)] => [0.0, p2 - p3, 1.0, -p3],
        [Some(p1), None, Some(p3)] => [1.0, -p1, 1.0, -p3],
        [Some(p1), Some(p2), None] => [1.0, -p1, 0.0, p2 - p1],
        [Some(p1), Some(p2), Some(p3)] => {
            [p2 - p3, -p1 * (p2 - p3), p2 - p1, -p3 * (p2 - p1)]
        }
        _ => return Err(Error::DegenerateTriple),
    })
}
