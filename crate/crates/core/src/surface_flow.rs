//! Forward Loewner flow for a general free Fuchsian group.
//!
//! Boundary triples are carried by `ṗ = -P(p, t)` and the moving group
//! `Γ_t` is read back from them by cross-ratios. The field needs a generator
//! velocity as input, and the flow reproduces whatever velocity it is given,
//! so the group is moved along a fixed path `ψ_l(θ) = ψ_l exp(θ X_l)` with
//! `θ̇ = 2σ`. The direction `X_l` is the infinitesimal deformation induced on
//! the base triple by the chordal field `2/(p - ξ(0))`.
//!
//! Time stepping is classical RK4 on a uniform mesh. Seeds replay exactly
//! the stages of the triple integration, and a second pass on the doubled
//! mesh gives Richardson error estimates.

use crate::automorphic::{GroupVelocity, Snapshot};
use crate::driving::{DrivingSpec, Realized, Schedule};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::field::{FieldContext, FieldMode};
use crate::fuchsian::{inverse_letter, EnumerationPolicy, FuchsianGroup};
use crate::moebius::{mat_mul, Moebius};
use crate::ode::FlowResult;
use nalgebra::{Matrix4, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Smallest admissible `|tr| - 2` over reconstructed words of length ≤ 2.
pub const TRACE_GUARD: f64 = 1e-6;
/// Smallest admissible distance from `c` and `ξ` to the sampled limit set.
pub const MARGIN_GUARD: f64 = 1e-6;
/// Entries of a triple row closer than this count as collided.
pub const COLLISION_TOL: f64 = 1e-10;
/// Default tolerance when comparing swallow times of `z` and `ψ(z)`.
pub const SWALLOW_TIME_TOL: f64 = 1e-3;

const SWALLOW_IMAG: f64 = 1e-9;

/// Inputs of a surface run.
#[derive(Debug, Clone)]
pub struct SurfaceSchedule {
    pub group: FuchsianGroup,
    pub base_triple: [f64; 3],
    pub c: f64,
    pub xi: DrivingSpec,
    pub lambda: Schedule,
    pub t_end: f64,
    pub mesh_dt: f64,
    /// Warn when the Richardson estimate for the triples exceeds this.
    pub tol: f64,
    pub policy: EnumerationPolicy,
}

/// Row 0 is the base triple, row `l + 1` its image under generator `l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripleState {
    pub p: Vec<[f64; 3]>,
}

impl TripleState {
    fn initial(group: &FuchsianGroup, base: [f64; 3]) -> Result<Self> {
        let mut p = vec![base];
        for (l, g) in group.generators().iter().enumerate() {
            let mut row = [0.0; 3];
            for (j, &x) in base.iter().enumerate() {
                row[j] = g.apply_real(x).ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "generator {} sends base point {x} to infinity",
                        l + 1
                    ))
                })?;
            }
            p.push(row);
        }
        Ok(TripleState { p })
    }

    fn offset(&self, h: f64, k: &[[f64; 3]]) -> TripleState {
        TripleState {
            p: self
                .p
                .iter()
                .zip(k)
                .map(|(r, d)| [r[0] + h * d[0], r[1] + h * d[1], r[2] + h * d[2]])
                .collect(),
        }
    }

    fn check(&self, t: f64, orientation: &[f64]) -> Result<()> {
        for (row, r) in self.p.iter().enumerate() {
            let gap = (r[0] - r[1]).abs().min((r[1] - r[2]).abs()).min((r[0] - r[2]).abs());
            if !(gap > COLLISION_TOL) || orient(*r) != orientation[row] {
                return Err(Error::TripleCollision { t, row });
            }
        }
        Ok(())
    }

    /// Generators `ψ_{l,t}` taking row 0 to row `l + 1`.
    pub fn reconstruct(&self) -> Result<Vec<Moebius>> {
        self.p[1..]
            .iter()
            .map(|row| Moebius::from_real_triples(self.p[0], *row))
            .collect()
    }

    fn max_abs(&self) -> f64 {
        self.p.iter().flatten().fold(0.0, |m, x| m.max(x.abs()))
    }
}

fn orient(r: [f64; 3]) -> f64 {
    ((r[1] - r[0]) * (r[2] - r[0]) * (r[2] - r[1])).signum()
}

/// `exp(sX)` for a traceless `X`, using `X² = -det(X) I`.
fn expm_traceless(x: [f64; 4], s: f64) -> [f64; 4] {
    let mu2 = -(x[0] * x[3] - x[1] * x[2]);
    let q = mu2 * s * s;
    let (ch, sh) = if q.abs() < 1e-8 {
        (1.0 + 0.5 * q, s * (1.0 + q / 6.0))
    } else if mu2 > 0.0 {
        let m = mu2.sqrt();
        ((m * s).cosh(), (m * s).sinh() / m)
    } else {
        let m = (-mu2).sqrt();
        ((m * s).cos(), (m * s).sin() / m)
    };
    [ch + sh * x[0], sh * x[1], sh * x[2], ch + sh * x[3]]
}

/// Rates `Ġ` such that moving the base points by `v(p) = 2/(p - ξ0)` and
/// their images by the same field keeps `G` mapping one to the other,
/// returned as `G⁻¹ Ġ`.
fn chordal_direction(g: &Moebius, base: [f64; 3], xi0: f64) -> Result<[f64; 4]> {
    let [a, b, c, d] = g.coefficients();
    let v = |x: f64| 2.0 / (x - xi0);
    let mut m = Matrix4::zeros();
    let mut rhs = Vector4::zeros();
    for (j, &x) in base.iter().enumerate() {
        let den = c * x + d;
        let num = a * x + b;
        let den2 = den * den;
        m[(j, 0)] = x / den;
        m[(j, 1)] = 1.0 / den;
        m[(j, 2)] = -x * num / den2;
        m[(j, 3)] = -num / den2;
        rhs[j] = v(num / den) - v(x) / den2;
    }
    m[(3, 0)] = d;
    m[(3, 1)] = -c;
    m[(3, 2)] = -b;
    m[(3, 3)] = a;
    let sol = m.lu().solve(&rhs).ok_or(Error::SingularSystem {
        condition: f64::INFINITY,
    })?;
    Ok(mat_mul([d, -b, -c, a], [sol[0], sol[1], sol[2], sol[3]]))
}

/// One-parameter family `ψ_l(θ) = ψ_l exp(θ X_l)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPath {
    pub base: Vec<Moebius>,
    pub directions: Vec<[f64; 4]>,
}

impl GroupPath {
    pub fn chordal(group: &FuchsianGroup, base_triple: [f64; 3], xi0: f64) -> Result<Self> {
        let directions = group
            .generators()
            .iter()
            .map(|g| chordal_direction(g, base_triple, xi0))
            .collect::<Result<_>>()?;
        Ok(GroupPath {
            base: group.generators().to_vec(),
            directions,
        })
    }

    /// Generators at `θ` and their `θ`-derivatives.
    pub fn at(&self, theta: f64) -> Result<(Vec<Moebius>, Vec<[f64; 4]>)> {
        let mut gens = Vec::with_capacity(self.base.len());
        let mut rates = Vec::with_capacity(self.base.len());
        for (g, x) in self.base.iter().zip(&self.directions) {
            let m = mat_mul(g.coefficients(), expm_traceless(*x, theta));
            let h = Moebius::from_matrix(m)?;
            rates.push(mat_mul(h.coefficients(), *x));
            gens.push(h);
        }
        Ok((gens, rates))
    }
}

#[derive(Debug, Clone)]
struct Problem {
    path: GroupPath,
    c: f64,
    xi: Realized,
    lambda: Realized,
    policy: EnumerationPolicy,
}

impl Problem {
    fn context(&self, t: f64, theta: f64) -> Result<FieldContext> {
        let (gens, rates) = self.path.at(theta)?;
        let group = FuchsianGroup::new(gens)?;
        let velocity = GroupVelocity::projected(&group, rates)?;
        let guard = |e: Error| match e {
            Error::NearLimitSet { point, distance } => Error::GuardTripped {
                t,
                reason: format!("{point} is {distance:e} from the limit set"),
            },
            e => e,
        };
        let snap = Snapshot::new(group, velocity, self.c, self.policy).map_err(guard)?;
        FieldContext::new(
            snap,
            self.xi.value(t),
            self.lambda.value(t),
            FieldMode::Normalized,
        )
        .map_err(guard)
    }
}

/// Orbit of `ξ` under the ball, sorted.
fn xi_orbit(ctx: &FieldContext) -> Vec<f64> {
    let xi = ctx.xi();
    let mut v: Vec<f64> = ctx
        .snapshot()
        .ball()
        .entries()
        .iter()
        .filter_map(|e| e.map.apply_real(xi))
        .collect();
    v.sort_by(f64::total_cmp);
    v
}

fn orbit_distance(sorted: &[f64], z: Complex64) -> f64 {
    let dx = crate::fuchsian::distance_to_sorted(sorted, z.re);
    dx.hypot(z.im)
}

/// RK4 step: start time, step, and the parameter `θ` at each stage.
#[derive(Debug, Clone, Copy)]
struct StepPlan {
    t: f64,
    dt: f64,
    theta: [f64; 4],
}

const STAGE_TIME: [f64; 4] = [0.0, 0.5, 0.5, 1.0];
const STAGE_OFFSET: [f64; 4] = [0.0, 0.5, 0.5, 1.0];
const STAGE_WEIGHT: [f64; 4] = [1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0];

impl StepPlan {
    fn time(&self, s: usize) -> f64 {
        self.t + STAGE_TIME[s] * self.dt
    }
}

/// Second-kind margins recorded at each mesh node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuardMargins {
    /// `min (|tr| - 2)` over reconstructed words of length ≤ 2.
    pub trace: f64,
    pub c: f64,
    pub xi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineNode {
    pub t: f64,
    pub theta: f64,
    /// Generators reconstructed from the triples.
    pub generators: Vec<Moebius>,
    /// Generators on the prescribed path at `θ(t)`.
    pub path_generators: Vec<Moebius>,
    /// Finite-difference rates of the reconstructed generators.
    pub velocities: Vec<[f64; 4]>,
    pub deltas: Vec<f64>,
    pub sigma: f64,
    pub margins: GuardMargins,
    /// Largest coefficient gap between reconstructed and path generators.
    pub path_drift: f64,
}

/// Frozen outcome of [`evolve_triples`]; seeds are replayed against it.
#[derive(Debug, Clone)]
pub struct GroupTimeline {
    nodes: Vec<TimelineNode>,
    triples: Vec<TripleState>,
    triple_error: f64,
    problem: Problem,
    fine: Vec<StepPlan>,
    coarse: Vec<StepPlan>,
}

impl GroupTimeline {
    pub fn nodes(&self) -> &[TimelineNode] {
        &self.nodes
    }

    pub fn triples(&self) -> &[TripleState] {
        &self.triples
    }

    pub fn times(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.t).collect()
    }

    pub fn horizon(&self) -> f64 {
        self.nodes.last().map_or(0.0, |n| n.t)
    }

    pub fn mesh_dt(&self) -> f64 {
        self.fine.first().map_or(0.0, |s| s.dt)
    }

    /// Richardson estimate of the triple error at the end of the run.
    pub fn triple_error(&self) -> f64 {
        self.triple_error
    }

    pub fn path(&self) -> &GroupPath {
        &self.problem.path
    }

    /// Field context at mesh node `i`, rebuilt from the recorded parameter.
    pub fn field_at(&self, i: usize) -> Result<FieldContext> {
        let n = self.nodes.get(i).ok_or_else(|| {
            Error::InvalidInput(format!("node {i} out of range"))
        })?;
        self.problem.context(n.t, n.theta)
    }

    /// Index of the mesh node at time `t`.
    pub fn node_at(&self, t: f64) -> Result<usize> {
        let i = self
            .nodes
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1.t - t).abs().total_cmp(&(b.1.t - t).abs()))
            .map(|(i, _)| i)
            .expect("timeline is never empty");
        if (self.nodes[i].t - t).abs() > 1e-9 * t.abs().max(1.0) {
            return Err(Error::InvalidInput(format!("t = {t} is not a mesh time")));
        }
        Ok(i)
    }
}

struct Pass {
    triples: Vec<TripleState>,
    thetas: Vec<f64>,
    plans: Vec<StepPlan>,
    /// Node contexts, kept only when requested.
    records: Vec<(f64, Vec<f64>, GuardMargins)>,
}

fn trace_margin(gens: &[Moebius]) -> f64 {
    let n = 2 * gens.len();
    let letter = |l: usize| {
        if l.is_multiple_of(2) {
            gens[l / 2]
        } else {
            gens[l / 2].inverse()
        }
    };
    let mut m = f64::INFINITY;
    for a in 0..n {
        m = m.min(letter(a).trace().abs() - 2.0);
        for b in 0..n {
            if b != inverse_letter(a) {
                m = m.min(letter(a).compose(&letter(b)).trace().abs() - 2.0);
            }
        }
    }
    m
}

fn triple_rates(ctx: &FieldContext, state: &TripleState, t: f64) -> Result<Vec<[f64; 3]>> {
    state
        .p
        .iter()
        .map(|row| {
            let mut out = [0.0; 3];
            for (j, &x) in row.iter().enumerate() {
                let p = ctx.eval(Complex64::new(x, 0.0)).map_err(|e| Error::GuardTripped {
                    t,
                    reason: format!("field undefined at boundary point {x}: {e}"),
                })?;
                out[j] = -p.value.re;
            }
            Ok(out)
        })
        .collect()
}

fn node_record(
    ctx: &FieldContext,
    state: &TripleState,
    c: f64,
    t: f64,
) -> Result<(f64, Vec<f64>, GuardMargins)> {
    let gens = state.reconstruct()?;
    let margins = GuardMargins {
        trace: trace_margin(&gens),
        c: ctx.snapshot().limit_set_margin(c),
        xi: ctx.snapshot().limit_set_margin(ctx.xi()),
    };
    if !(margins.trace > TRACE_GUARD) {
        return Err(Error::GuardTripped {
            t,
            reason: format!("a word of length ≤ 2 has |tr| - 2 = {:e}", margins.trace),
        });
    }
    if !(margins.c > MARGIN_GUARD && margins.xi > MARGIN_GUARD) {
        return Err(Error::GuardTripped {
            t,
            reason: format!("limit-set margin c: {:e}, ξ: {:e}", margins.c, margins.xi),
        });
    }
    Ok((ctx.sigma(), ctx.deltas().to_vec(), margins))
}

fn run_pass(problem: &Problem, initial: &TripleState, steps: &[f64], record: bool) -> Result<Pass> {
    let orientation: Vec<f64> = initial.p.iter().map(|r| orient(*r)).collect();
    let mut pass = Pass {
        triples: vec![initial.clone()],
        thetas: vec![0.0],
        plans: Vec::with_capacity(steps.len()),
        records: Vec::new(),
    };
    let (mut t, mut theta, mut state) = (0.0, 0.0, initial.clone());
    for &dt in steps {
        let mut plan = StepPlan {
            t,
            dt,
            theta: [theta; 4],
        };
        let mut k_theta = [0.0; 4];
        let mut k_p: Vec<Vec<[f64; 3]>> = Vec::with_capacity(4);
        for s in 0..4 {
            let (th, st) = if s == 0 {
                (theta, state.clone())
            } else {
                let h = STAGE_OFFSET[s] * dt;
                (theta + h * k_theta[s - 1], state.offset(h, &k_p[s - 1]))
            };
            plan.theta[s] = th;
            let ts = plan.time(s);
            let ctx = problem.context(ts, th)?;
            if s == 0 && record {
                pass.records.push(node_record(&ctx, &state, problem.c, t)?);
            }
            k_theta[s] = 2.0 * ctx.sigma();
            k_p.push(triple_rates(&ctx, &st, ts)?);
        }
        let mut next = state.clone();
        for s in 0..4 {
            theta += dt * STAGE_WEIGHT[s] * k_theta[s];
            next = next.offset(dt * STAGE_WEIGHT[s], &k_p[s]);
        }
        t += dt;
        next.check(t, &orientation)?;
        state = next;
        pass.plans.push(plan);
        pass.triples.push(state.clone());
        pass.thetas.push(theta);
    }
    if record {
        let ctx = problem.context(t, theta)?;
        pass.records.push(node_record(&ctx, &state, problem.c, t)?);
    }
    Ok(pass)
}

/// Step sizes of the fine mesh and of the doubled mesh whose nodes are the
/// even fine nodes plus the final one.
fn meshes(t_end: f64, mesh_dt: f64) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    if t_end == 0.0 {
        return (Vec::new(), Vec::new(), vec![0]);
    }
    let n = ((t_end / mesh_dt) - 1e-9).ceil().max(1.0) as usize;
    let dt = t_end / n as f64;
    let fine = vec![dt; n];
    let mut coarse = vec![2.0 * dt; n / 2];
    let mut map: Vec<usize> = (0..=n / 2).map(|j| 2 * j).collect();
    if n % 2 == 1 {
        coarse.push(dt);
        map.push(n);
    }
    (fine, coarse, map)
}

fn validate(s: &SurfaceSchedule) -> Result<()> {
    if !(s.t_end >= 0.0) || !s.t_end.is_finite() {
        return Err(Error::InvalidInput("t_end must be non-negative".into()));
    }
    if !(s.mesh_dt > 0.0) {
        return Err(Error::InvalidInput("mesh_dt must be positive".into()));
    }
    if !(s.tol > 0.0) {
        return Err(Error::InvalidInput("tol must be positive".into()));
    }
    if s.group.rank() == 0 {
        return Err(Error::InvalidGroup("surface flow needs at least one generator".into()));
    }
    let p = s.base_triple;
    if p.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("base triple must be finite".into()));
    }
    if (p[0] - p[1]).abs().min((p[1] - p[2]).abs()).min((p[0] - p[2]).abs()) <= COLLISION_TOL {
        return Err(Error::DegenerateTriple);
    }
    Ok(())
}

/// Integrates the base triple and its generator images up to `t_end`.
pub fn evolve_triples(s: &SurfaceSchedule) -> Result<(Vec<TripleState>, GroupTimeline)> {
    validate(s)?;
    s.xi.validate()?;
    let xi = s.xi.realize(s.t_end.max(s.mesh_dt))?;
    let lambda = s.lambda.realize()?;
    let xi0 = xi.value(0.0);

    let radius = s.policy.max_word_length;
    for &x in &s.base_triple {
        let (ok, margin) = s.group.is_second_kind_at(x, radius)?;
        if !ok {
            return Err(Error::NearLimitSet {
                point: x,
                distance: margin,
            });
        }
    }
    let ball = s.group.ball(&s.policy)?;
    let orbit: Vec<f64> = {
        let mut v: Vec<f64> = ball.entries().iter().filter_map(|e| e.map.apply_real(xi0)).collect();
        v.sort_by(f64::total_cmp);
        v
    };
    for &x in &s.base_triple {
        let d = crate::fuchsian::distance_to_sorted(&orbit, x);
        if d < 1e-8 * x.abs().max(1.0) {
            return Err(Error::InvalidInput(format!(
                "base point {x} lies on the orbit of ξ(0) (distance {d:e})"
            )));
        }
    }

    let initial = TripleState::initial(&s.group, s.base_triple)?;
    let problem = Problem {
        path: GroupPath::chordal(&s.group, s.base_triple, xi0)?,
        c: s.c,
        xi,
        lambda,
        policy: s.policy,
    };
    let (fine_steps, coarse_steps, map) = meshes(s.t_end, s.mesh_dt);
    let fine = run_pass(&problem, &initial, &fine_steps, true)?;
    let coarse = run_pass(&problem, &initial, &coarse_steps, false)?;

    let mut triple_error: f64 = 0.0;
    for (j, &i) in map.iter().enumerate() {
        for (a, b) in fine.triples[i].p.iter().zip(&coarse.triples[j].p) {
            for k in 0..3 {
                triple_error = triple_error.max((a[k] - b[k]).abs() / 15.0);
            }
        }
    }
    let scale = fine.triples.last().map_or(1.0, |s| s.max_abs().max(1.0));
    if triple_error > s.tol * scale {
        log::warn!(
            "triple error estimate {triple_error:e} exceeds tol {:e}; refine mesh_dt",
            s.tol
        );
    }

    let times: Vec<f64> = std::iter::once(0.0)
        .chain(fine.plans.iter().map(|p| p.t + p.dt))
        .collect();
    let mut recon: Vec<Vec<Moebius>> = fine
        .triples
        .iter()
        .map(|st| st.reconstruct())
        .collect::<Result<_>>()?;
    let start_gap = recon[0]
        .iter()
        .zip(s.group.generators())
        .map(|(a, b)| a.max_coeff_distance(b))
        .fold(0.0, f64::max);
    if start_gap > 1e-10 {
        return Err(Error::InvalidInput(format!(
            "base triple reconstructs the generators only to {start_gap:e}"
        )));
    }
    recon[0] = s.group.generators().to_vec();
    let velocities = fd_rates(&times, &recon);
    let mut nodes = Vec::with_capacity(times.len());
    for (i, &t) in times.iter().enumerate() {
        let (path_generators, _) = problem.path.at(fine.thetas[i])?;
        let path_drift = recon[i]
            .iter()
            .zip(&path_generators)
            .map(|(a, b)| a.max_coeff_distance(b))
            .fold(0.0, f64::max);
        let (sigma, deltas, margins) = fine.records[i].clone();
        nodes.push(TimelineNode {
            t,
            theta: fine.thetas[i],
            generators: recon[i].clone(),
            path_generators,
            velocities: velocities[i].clone(),
            deltas,
            sigma,
            margins,
            path_drift,
        });
    }
    let timeline = GroupTimeline {
        nodes,
        triples: fine.triples.clone(),
        triple_error,
        problem,
        fine: fine.plans,
        coarse: coarse.plans,
    };
    Ok((fine.triples, timeline))
}

/// Centered differences of coefficients, one-sided at the ends.
fn fd_rates(times: &[f64], gens: &[Vec<Moebius>]) -> Vec<Vec<[f64; 4]>> {
    let n = times.len();
    let rank = gens[0].len();
    (0..n)
        .map(|i| {
            if n < 2 {
                return vec![[0.0; 4]; rank];
            }
            let (a, b) = if i == 0 {
                (0, 1)
            } else if i == n - 1 {
                (n - 2, n - 1)
            } else {
                (i - 1, i + 1)
            };
            let h = times[b] - times[a];
            (0..rank)
                .map(|l| {
                    let (x, y) = (gens[a][l].coefficients(), gens[b][l].coefficients());
                    [0, 1, 2, 3].map(|k| (y[k] - x[k]) / h)
                })
                .collect()
        })
        .collect()
}

struct Track {
    values: Vec<Complex64>,
    swallow_time: Option<f64>,
}

fn replay(
    problem: &Problem,
    plans: &[StepPlan],
    seeds: &[Complex64],
    exec: Exec,
) -> Result<Vec<Track>> {
    let mut tracks: Vec<Track> = seeds
        .iter()
        .map(|&z| Track {
            values: vec![z],
            swallow_time: None,
        })
        .collect();
    for plan in plans {
        let alive: Vec<usize> = (0..tracks.len())
            .filter(|&i| tracks[i].swallow_time.is_none())
            .collect();
        if alive.is_empty() {
            break;
        }
        let start: Vec<Complex64> = alive
            .iter()
            .map(|&i| *tracks[i].values.last().expect("track is never empty"))
            .collect();
        // Per seed: accumulated update, previous stage slope, and the
        // distance to the pole set at the start of the step.
        let mut acc = vec![Complex64::new(0.0, 0.0); alive.len()];
        let mut prev = vec![Complex64::new(0.0, 0.0); alive.len()];
        let mut dist = vec![f64::INFINITY; alive.len()];
        let mut failed = vec![false; alive.len()];
        for s in 0..4 {
            let ctx = problem.context(plan.time(s), plan.theta[s])?;
            let orbit = if s == 0 { xi_orbit(&ctx) } else { Vec::new() };
            let h = STAGE_OFFSET[s] * plan.dt;
            let idx: Vec<usize> = (0..alive.len()).filter(|&j| !failed[j]).collect();
            let out = exec.map(&idx, |&j| {
                let z = start[j] + h * prev[j];
                let d = if s == 0 { orbit_distance(&orbit, z) } else { f64::INFINITY };
                (ctx.eval(z).ok().map(|p| -p.value), d)
            });
            for (&j, (k, d)) in idx.iter().zip(out) {
                if s == 0 {
                    dist[j] = d;
                }
                match k {
                    Some(k) if k.re.is_finite() && k.im.is_finite() => {
                        prev[j] = k;
                        acc[j] += STAGE_WEIGHT[s] * k;
                    }
                    _ => failed[j] = true,
                }
            }
        }
        let t_next = plan.t + plan.dt;
        for (j, &i) in alive.iter().enumerate() {
            let step = plan.dt * acc[j];
            let z = start[j] + step;
            if failed[j] || z.im < SWALLOW_IMAG || step.norm() > 0.25 * dist[j] {
                tracks[i].swallow_time = Some(t_next);
            } else {
                tracks[i].values.push(z);
            }
        }
    }
    Ok(tracks)
}

fn truncate(plans: &[StepPlan], t: f64) -> &[StepPlan] {
    let eps = 1e-9 * t.abs().max(1.0);
    let n = plans.iter().take_while(|p| p.t + p.dt <= t + eps).count();
    &plans[..n]
}

/// Flows seeds up to mesh time `t`.
pub fn integrate_seeds_until(
    timeline: &GroupTimeline,
    seeds: &[Complex64],
    t: f64,
    exec: Exec,
) -> Result<Vec<FlowResult>> {
    if let Some(z) = seeds.iter().find(|z| !(z.im > 0.0)) {
        return Err(Error::InvalidInput(format!("seed {z} is not in the upper half-plane")));
    }
    let end = timeline.node_at(t)?;
    let fine_plans = &timeline.fine[..end];
    let coarse_plans = truncate(&timeline.coarse, timeline.nodes[end].t);
    let fine = replay(&timeline.problem, fine_plans, seeds, exec)?;
    let coarse = replay(&timeline.problem, coarse_plans, seeds, exec)?;

    // Fine node index of each coarse node.
    let mut coarse_nodes = vec![0usize];
    for p in coarse_plans {
        let target = p.t + p.dt;
        let i = timeline.node_at(target)?;
        coarse_nodes.push(i);
    }

    let times = timeline.times();
    Ok(seeds
        .iter()
        .zip(fine.into_iter().zip(coarse))
        .map(|(&seed, (f, c))| {
            let n = f.values.len();
            let mut errors = vec![0.0; n];
            let mut running: f64 = 0.0;
            for (j, &i) in coarse_nodes.iter().enumerate() {
                if i < n && j < c.values.len() {
                    let g = (f.values[i] - c.values[j]).norm() / 15.0;
                    if g > running {
                        errors[i] = g - running;
                        running = g;
                    }
                }
            }
            FlowResult {
                seed,
                times: times[..n].to_vec(),
                values: f.values,
                error_estimates: errors,
                swallow_time: f.swallow_time,
                rejected_steps: 0,
            }
        })
        .collect())
}

/// Flows seeds over the whole timeline.
pub fn integrate_seeds(
    timeline: &GroupTimeline,
    seeds: &[Complex64],
    exec: Exec,
) -> Result<Vec<FlowResult>> {
    integrate_seeds_until(timeline, seeds, timeline.horizon(), exec)
}

pub fn integrate_seed(timeline: &GroupTimeline, z0: Complex64) -> Result<FlowResult> {
    Ok(integrate_seeds(timeline, &[z0], Exec::Sequential)?.remove(0))
}

fn image(g: &Moebius, z: Complex64) -> Result<Complex64> {
    g.apply(z).finite().ok_or_else(|| Error::InvalidInput(format!("{z} is sent to infinity")))
}

/// `|g_t(ψ_l(z)) - ψ_{l,t}(g_t(z))|` at every mesh node, with `l` 0-based.
pub fn conjugacy_residuals(
    timeline: &GroupTimeline,
    l: usize,
    z: Complex64,
    exec: Exec,
) -> Result<Vec<(f64, f64)>> {
    let psi = *timeline.problem.path.base.get(l).ok_or_else(|| {
        Error::InvalidInput(format!("generator index {l} out of range"))
    })?;
    let flows = integrate_seeds(timeline, &[z, image(&psi, z)?], exec)?;
    let n = flows[0].values.len().min(flows[1].values.len());
    if n < timeline.nodes.len() {
        let st = flows[0].swallow_time.or(flows[1].swallow_time).unwrap_or(0.0);
        return Err(Error::SeedSwallowed { swallow_time: st });
    }
    (0..n)
        .map(|i| {
            let node = &timeline.nodes[i];
            let moved = image(&node.generators[l], flows[0].values[i])?;
            Ok((node.t, (flows[1].values[i] - moved).norm()))
        })
        .collect()
}

/// The conjugacy residual at mesh time `t`.
pub fn conjugacy_residual(
    timeline: &GroupTimeline,
    t: f64,
    l: usize,
    z: Complex64,
) -> Result<f64> {
    let i = timeline.node_at(t)?;
    let psi = *timeline.problem.path.base.get(l).ok_or_else(|| {
        Error::InvalidInput(format!("generator index {l} out of range"))
    })?;
    let flows = integrate_seeds_until(timeline, &[z, image(&psi, z)?], t, Exec::Sequential)?;
    if let Some(st) = flows.iter().filter_map(|f| f.swallow_time).reduce(f64::min) {
        return Err(Error::SeedSwallowed { swallow_time: st });
    }
    let moved = image(&timeline.nodes[i].generators[l], flows[0].last())?;
    Ok((flows[1].last() - moved).norm())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantViolation {
    pub seed: Complex64,
    pub generator: usize,
    pub seed_swallow: Option<f64>,
    pub image_swallow: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub t: f64,
    pub pairs_checked: usize,
    pub tolerance: f64,
    pub violations: Vec<InvariantViolation>,
}

impl InvariantReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `z ∈ H_t ⇔ ψ_l(z) ∈ H_t` for every seed and generator, comparing
/// swallow times up to the larger of [`SWALLOW_TIME_TOL`] and one mesh step.
pub fn invariant_domain_check(
    timeline: &GroupTimeline,
    seeds: &[Complex64],
    t: f64,
    exec: Exec,
) -> Result<InvariantReport> {
    let tolerance = SWALLOW_TIME_TOL.max(timeline.mesh_dt()) * (1.0 + 1e-9);
    let gens = &timeline.problem.path.base;
    let mut all = seeds.to_vec();
    for g in gens {
        for &z in seeds {
            all.push(image(g, z)?);
        }
    }
    let flows = integrate_seeds_until(timeline, &all, t, exec)?;
    let n = seeds.len();
    let mut violations = Vec::new();
    for l in 0..gens.len() {
        for i in 0..n {
            let (a, b) = (flows[i].swallow_time, flows[n * (l + 1) + i].swallow_time);
            let ok = match (a, b) {
                (None, None) => true,
                (Some(x), Some(y)) => (x - y).abs() <= tolerance,
                _ => false,
            };
            if !ok {
                violations.push(InvariantViolation {
                    seed: seeds[i],
                    generator: l,
                    seed_swallow: a,
                    image_swallow: b,
                });
            }
        }
    }
    Ok(InvariantReport {
        t,
        pairs_checked: n * gens.len(),
        tolerance,
        violations,
    })
}

/// The two-generator group with fixed-point pairs `(-2, -1)` and `(1, 2)` and
/// multiplier 9, used by tests, benches and the `check` suites.
pub fn test_group() -> FuchsianGroup {
    FuchsianGroup::new(vec![
        Moebius::hyperbolic(-2.0, -1.0, 9.0).expect("valid generator"),
        Moebius::hyperbolic(1.0, 2.0, 9.0).expect("valid generator"),
    ])
    .expect("valid group")
}

/// Schedule on [`test_group`] with `ξ ≡ 0`, `λ ≡ 0` and `c = 5`.
pub fn test_schedule(t_end: f64, mesh_dt: f64, word_length: usize) -> SurfaceSchedule {
    SurfaceSchedule {
        group: test_group(),
        base_triple: [0.3, 0.6, 3.5],
        c: 5.0,
        xi: DrivingSpec::Constant { value: 0.0 },
        lambda: Schedule::default(),
        t_end,
        mesh_dt,
        tol: 1e-8,
        policy: EnumerationPolicy::with_length(word_length),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn zero_horizon_is_the_input() {
        let s = test_schedule(0.0, 1e-3, 4);
        let (triples, tl) = evolve_triples(&s).unwrap();
        assert_eq!(triples.len(), 1);
        assert_eq!(tl.nodes().len(), 1);
        for (a, b) in tl.nodes()[0].generators.iter().zip(s.group.generators()) {
            assert!(a.max_coeff_distance(b) < 1e-10);
        }
        let z = c(0.3, 0.7);
        assert_eq!(integrate_seed(&tl, z).unwrap().last(), z);
        assert_eq!(conjugacy_residual(&tl, 0.0, 0, z).unwrap(), 0.0);
        let rep = invariant_domain_check(&tl, &[z], 0.0, Exec::Sequential).unwrap();
        assert!(rep.passed());
    }

    #[test]
    fn exponential_is_a_group_path() {
        let x = [0.3, -1.2, 0.7, -0.3];
        let e = |s: f64| expm_traceless(x, s);
        let m = mat_mul(e(0.4), e(0.25));
        let n = e(0.65);
        for k in 0..4 {
            assert!((m[k] - n[k]).abs() < 1e-14);
        }
        let d = e(0.9);
        assert!((d[0] * d[3] - d[1] * d[2] - 1.0).abs() < 1e-14);
        // Elliptic direction and tiny parameter go through the other branches.
        let y = [0.0, 1.0, -1.0, 0.0];
        let r = expm_traceless(y, 0.5);
        assert!((r[0] - 0.5f64.cos()).abs() < 1e-15 && (r[1] - 0.5f64.sin()).abs() < 1e-15);
        let small = expm_traceless(x, 1e-6);
        assert!((small[1] - 1e-6 * x[1]).abs() < 1e-15);
    }

    #[test]
    fn chordal_direction_matches_the_triple_velocities() {
        let g = test_group().generators()[1];
        let base = [0.3, 0.6, 3.5];
        let x = chordal_direction(&g, base, 0.0).unwrap();
        assert!((x[0] + x[3]).abs() < 1e-12);
        let path = GroupPath {
            base: vec![g],
            directions: vec![x],
        };
        // θ-derivative of ψ(θ)(p) at θ = 0 against v(ψ(p)) - ψ'(p) v(p).
        let v = |p: f64| 2.0 / p;
        let h = 1e-6;
        for p in base {
            let at = |th: f64| path.at(th).unwrap().0[0].apply_real(p).unwrap();
            let fd = (at(h) - at(-h)) / (2.0 * h);
            let d = g.derivative(c(p, 0.0)).finite().unwrap().re;
            let want = v(g.apply_real(p).unwrap()) - d * v(p);
            assert!((fd - want).abs() < 1e-6 * want.abs().max(1.0), "{fd} {want}");
        }
    }

    #[test]
    fn reconstruction_tracks_the_path() {
        let (_, tl) = evolve_triples(&test_schedule(0.01, 1e-3, 6)).unwrap();
        for n in tl.nodes() {
            assert!(n.path_drift < 1e-4, "{}", n.path_drift);
            assert!(n.margins.trace > 1.0);
        }
        assert!(tl.nodes()[0].path_drift < 1e-12);
        // The gap is series truncation: it shrinks with the word length.
        let drift = |l| {
            let (_, tl) = evolve_triples(&test_schedule(0.004, 2e-3, l)).unwrap();
            tl.nodes().last().unwrap().path_drift
        };
        assert!(drift(5) < 0.3 * drift(4));
    }

    #[test]
    fn conjugacy_holds_on_a_short_run() {
        let (_, tl) = evolve_triples(&test_schedule(0.01, 1e-3, 5)).unwrap();
        for l in 0..2 {
            let r = conjugacy_residual(&tl, 0.01, l, c(0.0, 2.0)).unwrap();
            assert!(r < 1e-4, "{l}: {r}");
        }
    }

    #[test]
    fn far_seed_moves_within_the_field_bound() {
        let (_, tl) = evolve_triples(&test_schedule(0.01, 1e-3, 4)).unwrap();
        let z0 = c(0.0, 100.0);
        let f = integrate_seed(&tl, z0).unwrap();
        assert!(!f.swallowed());
        let bound = (0..tl.nodes().len())
            .map(|i| tl.field_at(i).unwrap().eval(f.values[i]).unwrap().value.norm())
            .fold(0.0, f64::max);
        let moved = (f.last() - z0).norm();
        assert!(moved <= 1.1 * 0.01 * bound, "{moved} {bound}");
        assert!(f.error_bound() < 1e-6 * moved);
    }

    #[test]
    fn seed_next_to_xi_and_its_image_are_swallowed_together() {
        let (_, tl) = evolve_triples(&test_schedule(0.004, 1e-3, 4)).unwrap();
        let z = c(0.0, 0.01);
        let rep = invariant_domain_check(&tl, &[z], 0.004, Exec::Sequential).unwrap();
        assert!(rep.passed(), "{rep:?}");
        let f = integrate_seed(&tl, z).unwrap();
        assert!(f.swallowed());
    }

    #[test]
    fn base_point_on_the_limit_set_is_rejected() {
        let mut s = test_schedule(0.01, 1e-3, 4);
        s.base_triple = [-2.0, 0.6, 3.5];
        assert!(matches!(evolve_triples(&s), Err(Error::NearLimitSet { .. })));
        s.base_triple = [0.6, 0.6, 3.5];
        assert!(matches!(evolve_triples(&s), Err(Error::DegenerateTriple)));
    }

    #[test]
    fn xi_in_the_limit_set_trips_the_guard() {
        let mut s = test_schedule(0.01, 1e-3, 4);
        s.xi = DrivingSpec::Constant { value: -2.0 };
        let e = evolve_triples(&s).unwrap_err();
        assert!(matches!(e, Error::GuardTripped { .. }), "{e:?}");
    }

    #[test]
    fn modes_agree() {
        let (_, tl) = evolve_triples(&test_schedule(0.004, 1e-3, 4)).unwrap();
        let seeds = [c(0.1, 1.0), c(-0.3, 0.5), c(2.0, 2.0)];
        assert_eq!(
            integrate_seeds(&tl, &seeds, Exec::Sequential).unwrap(),
            integrate_seeds(&tl, &seeds, Exec::Parallel).unwrap()
        );
    }
}
