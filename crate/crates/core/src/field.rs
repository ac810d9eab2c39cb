//! The Loewner vector field `P(z, t)` of a moving free Fuchsian group.
//!
//! With `Q(z) = ½ Ψ'/Ψ`, `T_k(z) = ½ Ψ̇_k/Ψ_k` and the weights `δ_k` solving
//! the cocycle system, the field is
//!
//! ```text
//!     P(z) = (λ + Υ(z) + Σ_k δ_k T_k(z)) / Q(z)
//! ```
//!
//! in raw mode. Normalized mode rescales the group velocity by `2σ`, where
//! `σ = -Q(ξ)`, so that `P` has residue `-2` at `ξ`:
//!
//! ```text
//!     P(z) = (λ + 2σ (Υ(z) + Σ_k δ_k T_k(z))) / Q(z)
//! ```

use crate::automorphic::{GroupVelocity, SeriesValue, Snapshot};
use crate::error::{Error, Result};
use crate::fuchsian::{Word, NEAR_LIMIT_TOL};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Condition estimate above which the δ-system counts as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// `|Q|` relative to the summed term magnitudes below which the denominator
/// counts as vanishing.
const DENOM_REL_TOL: f64 = 1e-10;

const POLE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldMode {
    Raw,
    #[default]
    Normalized,
}

/// The assembled cocycle system `A δ = b` with diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaSystem {
    pub matrix: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
    pub deltas: Vec<f64>,
    pub condition: f64,
    pub relative_residual: f64,
    pub tail_estimate: f64,
}

/// Assembles and solves `Σ_k δ_k ½ d/dt log χ_k(φ_j) = -K(φ_j)` for every
/// generator `φ_j`.
pub fn solve_deltas(snapshot: &Snapshot, xi: f64) -> Result<DeltaSystem> {
    let n = snapshot.rank();
    if n == 0 {
        return Err(Error::InvalidInput("the δ-system needs at least one generator".into()));
    }
    let mut a = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    let mut tail = 0.0;
    for j in 0..n {
        let phi = Word::generator(j, false);
        for k in 0..n {
            let s = snapshot.half_log_char_rate(k, &phi)?;
            a[(j, k)] = s.value.re;
            tail += s.tail_estimate;
        }
        let kf = snapshot.k_functional(xi, &phi)?;
        b[j] = -kf.value.re;
        tail += kf.tail_estimate;
    }

    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularSystem { condition });
    }
    let delta = a
        .clone()
        .lu()
        .solve(&b)
        .ok_or(Error::SingularSystem { condition })?;
    let r = &a * &delta - &b;
    let bn = b.norm();
    let relative_residual = if bn > 0.0 { r.norm() / bn } else { r.norm() };

    Ok(DeltaSystem {
        matrix: (0..n).map(|j| (0..n).map(|k| a[(j, k)]).collect()).collect(),
        rhs: b.iter().copied().collect(),
        deltas: delta.iter().copied().collect(),
        condition,
        relative_residual,
        tail_estimate: tail,
    })
}

/// Series pieces of `P` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldParts {
    /// `Q(z) = ½ Ψ'/Ψ`.
    pub q: SeriesValue,
    /// `Υ(z)`.
    pub upsilon: SeriesValue,
    /// `Σ_k δ_k T_k(z)`.
    pub time_terms: SeriesValue,
}

/// Everything needed to evaluate `P(·, t)` at one instant.
#[derive(Debug, Clone)]
pub struct FieldContext {
    snapshot: Snapshot,
    xi: f64,
    lambda: f64,
    mode: FieldMode,
    system: DeltaSystem,
    sigma: f64,
}

impl FieldContext {
    pub fn new(snapshot: Snapshot, xi: f64, lambda: f64, mode: FieldMode) -> Result<Self> {
        let margin = snapshot.limit_set_margin(xi);
        if margin < NEAR_LIMIT_TOL {
            return Err(Error::NearLimitSet {
                point: xi,
                distance: margin,
            });
        }
        let system = solve_deltas(&snapshot, xi)?;
        let mut ctx = FieldContext {
            snapshot,
            xi,
            lambda,
            mode,
            system,
            sigma: 0.0,
        };
        ctx.sigma = ctx.compute_sigma()?;
        Ok(ctx)
    }

    pub fn snapshot(&self) -> &Snapshot {
        &self.snapshot
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mode(&self) -> FieldMode {
        self.mode
    }

    pub fn deltas(&self) -> &[f64] {
        &self.system.deltas
    }

    pub fn system(&self) -> &DeltaSystem {
        &self.system
    }

    /// `σ = -Q(ξ)`.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Factor by which the group velocity is scaled in the current mode.
    pub fn velocity_scale(&self) -> f64 {
        match self.mode {
            FieldMode::Raw => 1.0,
            FieldMode::Normalized => 2.0 * self.sigma,
        }
    }

    /// The generator velocity the flow of `P` actually realizes.
    pub fn effective_velocity(&self) -> GroupVelocity {
        self.snapshot.velocity().scaled(self.velocity_scale())
    }

    fn compute_sigma(&self) -> Result<f64> {
        let z = Complex64::new(self.xi, 0.0);
        let (x, y) = (self.deltas(), self.snapshot.c_orbit().0);
        let mut q = 0.0;
        for i in 0..y.len() {
            for (k, &d) in x.iter().enumerate() {
                let xk = self.snapshot.translated_orbit(k).0[i];
                q += d * (1.0 / (z.re - xk) - 1.0 / (z.re - y[i]));
            }
        }
        Ok(-q)
    }

    /// `Q`, `Υ` and `Σ δ_k T_k` at `z`, from a single pass over the ball.
    pub fn parts(&self, z: Complex64) -> Result<FieldParts> {
        let s = &self.snapshot;
        let ball = s.ball();
        let outer = ball.outer_shell().start;
        let (y, ydot) = s.c_orbit();
        let deltas = self.deltas();
        let zero = Complex64::new(0.0, 0.0);
        let (mut q, mut u, mut tt) = (zero, zero, zero);
        let (mut q_tail, mut u_tail, mut t_tail) = (0.0, 0.0, 0.0);
        let mut q_abs = 0.0;
        for (i, e) in ball.entries().iter().enumerate() {
            let dy = z - y[i];
            if dy.norm() < POLE_TOL {
                return Err(Error::ZeroDenominator {
                    word: e.word.to_string(),
                });
            }
            let inv_y = 1.0 / dy;
            let mut qi = zero;
            let mut ti = zero;
            for (k, &d) in deltas.iter().enumerate() {
                let (xk, xkdot) = s.translated_orbit(k);
                let dx = z - xk[i];
                if dx.norm() < POLE_TOL {
                    return Err(Error::ZeroDenominator {
                        word: e.word.to_string(),
                    });
                }
                let inv_x = 1.0 / dx;
                qi += d * (inv_x - inv_y);
                ti += d * (-xkdot[i] * inv_x + ydot[i] * inv_y);
            }
            let w = e.map.apply(z).finite().ok_or_else(|| Error::PoleEncountered {
                word: e.word.to_string(),
            })?;
            if (w - self.xi).norm() < POLE_TOL {
                return Err(Error::PoleEncountered {
                    word: e.word.to_string(),
                });
            }
            let ui = 1.0 / (w - self.xi) - 1.0 / (y[i] - self.xi);
            q += qi;
            u += ui;
            tt += ti;
            q_abs += qi.norm();
            if i >= outer {
                q_tail += qi.norm();
                u_tail += ui.norm();
                t_tail += ti.norm();
            }
        }
        if q.norm() <= DENOM_REL_TOL * q_abs {
            return Err(Error::DenominatorVanishes {
                near: format!("{z}"),
                magnitude: q.norm(),
            });
        }
        Ok(FieldParts {
            q: SeriesValue::new(q, q_tail),
            upsilon: SeriesValue::new(u, u_tail),
            time_terms: SeriesValue::new(tt, t_tail),
        })
    }

    fn assemble(&self, p: &FieldParts) -> SeriesValue {
        let w = self.velocity_scale();
        let num = self.lambda + w * (p.upsilon.value + p.time_terms.value);
        let num_tail = w.abs() * (p.upsilon.tail_estimate + p.time_terms.tail_estimate);
        let value = num / p.q.value;
        let qn = p.q.value.norm();
        SeriesValue::new(value, (num_tail + value.norm() * p.q.tail_estimate) / qn)
    }

    /// `P(z, t)` with its tail estimate.
    pub fn eval(&self, z: Complex64) -> Result<SeriesValue> {
        Ok(self.assemble(&self.parts(z)?))
    }

    /// `|P(φ(z)) - φ'(z) P(z) + φ̇(z)|` for a word `φ`, with `φ̇` taken from
    /// the effective velocity, plus the combined tail of both evaluations.
    pub fn equivariance_residual(&self, w: &Word, z: Complex64) -> Result<(f64, f64)> {
        let g = self.snapshot.group();
        let map = g.evaluate(w)?;
        let fz = map.apply(z).finite().ok_or_else(|| Error::PoleEncountered {
            word: w.to_string(),
        })?;
        let d = map.derivative(z).finite().ok_or_else(|| Error::PoleEncountered {
            word: w.to_string(),
        })?;
        let vel = crate::automorphic::word_velocity(g, &self.effective_velocity(), w, z)?;
        let pz = self.eval(z)?;
        let pfz = self.eval(fz)?;
        let r = (pfz.value - d * pz.value + vel).norm();
        Ok((r, pfz.tail_estimate + d.norm() * pz.tail_estimate))
    }

    /// Change of `Ξ - Υ` under a generator, where `Ξ = Q P - Σ δ_k T_k` and
    /// `P(φ(z))` is transported from `P(z)` by the equivariance law. Zero
    /// exactly when the cocycle system holds; returns the gap and its tail.
    pub fn automorphy_gap(&self, k: usize, z: Complex64) -> Result<(f64, f64)> {
        let w = Word::generator(k, false);
        let g = self.snapshot.group();
        let map = g.evaluate(&w)?;
        let fz = map.apply(z).finite().ok_or_else(|| Error::PoleEncountered {
            word: w.to_string(),
        })?;
        let d = map.derivative(z).finite().ok_or_else(|| Error::PoleEncountered {
            word: w.to_string(),
        })?;
        // Raw-mode quantities so the gap does not depend on λ or σ.
        let vel = crate::automorphic::word_velocity(g, self.snapshot.velocity(), &w, z)?;
        let a = self.parts(z)?;
        let b = self.parts(fz)?;
        let p = (self.lambda + a.upsilon.value + a.time_terms.value) / a.q.value;
        let p_moved = d * p - vel;
        let theta = |parts: &FieldParts, p: Complex64| {
            parts.q.value * p - parts.time_terms.value - parts.upsilon.value
        };
        let gap = (theta(&b, p_moved) - theta(&a, p)).norm();
        let tail = |parts: &FieldParts, p: Complex64| {
            parts.q.tail_estimate * p.norm()
                + parts.time_terms.tail_estimate
                + parts.upsilon.tail_estimate
        };
        Ok((gap, tail(&a, p) + tail(&b, p_moved)))
    }

    /// Residue of `P` at `center` from a trapezoid contour integral.
    pub fn residue(&self, center: Complex64, radius: f64, points: usize) -> Result<Complex64> {
        contour_residue(|z| self.eval(z).map(|s| s.value), center, radius, points)
    }
}

/// `(1/2πi) ∮ f dz` over a circle, by the trapezoid rule.
pub fn contour_residue<F>(f: F, center: Complex64, radius: f64, points: usize) -> Result<Complex64>
where
    F: Fn(Complex64) -> Result<Complex64>,
{
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..points {
        let th = 2.0 * std::f64::consts::PI * j as f64 / points as f64;
        let dz = Complex64::from_polar(radius, th);
        acc += f(center + dz)? * dz;
    }
    Ok(acc / points as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fuchsian::{EnumerationPolicy, FuchsianGroup};
    use crate::moebius::Moebius;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn test_group() -> FuchsianGroup {
        FuchsianGroup::new(vec![
            Moebius::hyperbolic(-2.0, -1.0, 9.0).unwrap(),
            Moebius::hyperbolic(1.0, 2.0, 9.0).unwrap(),
        ])
        .unwrap()
    }

    fn rates() -> Vec<[f64; 4]> {
        vec![[0.3, -0.2, 0.1, 0.4], [-0.1, 0.25, 0.2, -0.3]]
    }

    fn context(l: usize, mode: FieldMode) -> FieldContext {
        let g = test_group();
        let v = GroupVelocity::projected(&g, rates()).unwrap();
        let s = Snapshot::new(g, v, 5.0, EnumerationPolicy::with_length(l)).unwrap();
        FieldContext::new(s, 0.0, 0.0, mode).unwrap()
    }

    #[test]
    fn delta_system_residual() {
        let ctx = context(6, FieldMode::Normalized);
        assert!(ctx.system().relative_residual < 1e-10);
        assert!(ctx.system().condition < 1e6);
    }

    #[test]
    fn deltas_scale_inversely_with_velocity() {
        let g = test_group();
        let v = GroupVelocity::projected(&g, rates()).unwrap();
        let p = EnumerationPolicy::with_length(5);
        let s1 = Snapshot::new(g.clone(), v.clone(), 5.0, p).unwrap();
        let s2 = Snapshot::new(g, v.scaled(3.0), 5.0, p).unwrap();
        let d1 = solve_deltas(&s1, 0.0).unwrap().deltas;
        let d2 = solve_deltas(&s2, 0.0).unwrap().deltas;
        for (a, b) in d1.iter().zip(&d2) {
            assert!((a / 3.0 - b).abs() < 1e-12 * a.abs());
        }
    }

    #[test]
    fn solved_deltas_cancel_cocycles() {
        let ctx = context(6, FieldMode::Raw);
        let s = ctx.snapshot();
        for k in 0..2 {
            let w = Word::generator(k, false);
            let j = s.j_functional(ctx.deltas(), &w).unwrap();
            let kf = s.k_functional(ctx.xi(), &w).unwrap();
            assert!((j.value + kf.value).norm() < 1e-10 * kf.value.norm().max(1.0));
        }
    }

    #[test]
    fn identity_word_equivariance_is_exact() {
        let ctx = context(4, FieldMode::Normalized);
        let (r, _) = ctx.equivariance_residual(&Word::identity(), c(0.3, 1.0)).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn normalized_residue_is_minus_two() {
        let ctx = context(6, FieldMode::Normalized);
        let r = ctx.residue(c(0.0, 0.0), 1e-3, 64).unwrap();
        assert!((r - c(-2.0, 0.0)).norm() < 1e-3, "{r}");
    }

    #[test]
    fn raw_residue_is_minus_inverse_sigma() {
        let ctx = context(6, FieldMode::Raw);
        let r = ctx.residue(c(0.0, 0.0), 1e-3, 64).unwrap();
        assert!((r + 1.0 / ctx.sigma()).norm() < 1e-6 * r.norm());
    }

    #[test]
    fn generator_equivariance() {
        for mode in [FieldMode::Raw, FieldMode::Normalized] {
            let ctx = context(6, mode);
            for k in 0..2 {
                for z in [c(0.0, 1.0), c(0.0, 2.0), c(0.5, 1.0), c(-0.5, 1.0), c(0.0, 3.0)] {
                    let w = Word::generator(k, false);
                    let (r, tail) = ctx.equivariance_residual(&w, z).unwrap();
                    assert!(r < 10.0 * tail, "{mode:?} {w} {z}: {r} vs {tail}");
                }
            }
        }
    }

    #[test]
    fn automorphy_gap_within_tails() {
        let ctx = context(6, FieldMode::Raw);
        for k in 0..2 {
            for z in [c(0.0, 1.0), c(0.4, 2.0)] {
                let (gap, tail) = ctx.automorphy_gap(k, z).unwrap();
                assert!(gap < tail, "{gap} vs {tail}");
            }
        }
    }

    #[test]
    fn base_point_only_shifts_lambda() {
        let g = test_group();
        let v = GroupVelocity::projected(&g, rates()).unwrap();
        let p = EnumerationPolicy::with_length(7);
        let a = FieldContext::new(
            Snapshot::new(g.clone(), v.clone(), 5.0, p).unwrap(),
            0.0,
            0.0,
            FieldMode::Raw,
        )
        .unwrap();
        let b = FieldContext::new(Snapshot::new(g, v, -4.0, p).unwrap(), 0.0, 0.0, FieldMode::Raw)
            .unwrap();
        // Q·P with the same λ differs by a constant when c moves.
        let shift = |z: Complex64| {
            let pa = a.parts(z).unwrap();
            let pb = b.parts(z).unwrap();
            let va = a.eval(z).unwrap().value * pa.q.value;
            let vb = b.eval(z).unwrap().value * pb.q.value;
            let tail = pa.q.tail_estimate * va.norm() / pa.q.value.norm()
                + pa.upsilon.tail_estimate
                + pa.time_terms.tail_estimate
                + pb.q.tail_estimate * vb.norm() / pb.q.value.norm()
                + pb.upsilon.tail_estimate
                + pb.time_terms.tail_estimate;
            (va - vb, tail)
        };
        let (s0, t0) = shift(c(0.0, 1.0));
        for z in [c(0.5, 1.0), c(-0.5, 2.0), c(0.0, 3.0), c(1.5, 0.7)] {
            let (s, t) = shift(z);
            assert!((s - s0).norm() < 1e-8 + t + t0, "{s} vs {s0}");
        }
    }

    #[test]
    fn field_points_inward_near_xi() {
        // Negative residue: just above ξ the flow -P pushes points down.
        let ctx = context(6, FieldMode::Normalized);
        let p = ctx.eval(c(0.0, 1e-3)).unwrap().value;
        assert!(p.im > 0.0);
    }

    #[test]
    fn nonzero_lambda_keeps_equivariance() {
        let g = test_group();
        let v = GroupVelocity::projected(&g, rates()).unwrap();
        let s = Snapshot::new(g, v, 5.0, EnumerationPolicy::with_length(6)).unwrap();
        let ctx = FieldContext::new(s, 0.0, 0.7, FieldMode::Normalized).unwrap();
        let (r, tail) = ctx
            .equivariance_residual(&Word::from_signed(&[2, -1]).unwrap(), c(0.2, 1.5))
            .unwrap();
        assert!(r < 10.0 * tail);
    }
}
