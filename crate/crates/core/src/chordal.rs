//! Chordal Loewner flow in the upper half-plane, `ġ_t(z) = 2/(g_t(z) - ξ(t))`.

use crate::driving::{DrivingSpec, Realized};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::ode::{integrate, FlowResult, OdeOptions, WithPoles};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChordalRun {
    pub driving: DrivingSpec,
    pub seeds: Vec<Complex64>,
    pub t_end: f64,
    pub tol: f64,
}

impl ChordalRun {
    pub fn validate(&self) -> Result<()> {
        self.driving.validate()?;
        if !(self.t_end >= 0.0) {
            return Err(Error::InvalidInput("t_end must be non-negative".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidInput("tol must be positive".into()));
        }
        if let Some(z) = self.seeds.iter().find(|z| !(z.im > 0.0)) {
            return Err(Error::InvalidInput(format!("seed {z} is not in the upper half-plane")));
        }
        Ok(())
    }
}

/// Flow of a single seed under a realized driving function.
pub fn flow_seed(driving: &Realized, z0: Complex64, t_end: f64, opts: &OdeOptions) -> Result<FlowResult> {
    let field = WithPoles {
        field: |t: f64, g: Complex64| {
            let d = g - driving.value(t);
            if d.norm() == 0.0 {
                return Err(Error::PoleEncountered { word: "e".into() });
            }
            Ok(2.0 / d)
        },
        distance: |t: f64, g: Complex64| (g - driving.value(t)).norm(),
    };
    integrate(&field, z0, 0.0, t_end, opts)
}

pub fn chordal_flow(run: &ChordalRun, exec: Exec) -> Result<Vec<FlowResult>> {
    run.validate()?;
    let driving = run.driving.realize(run.t_end)?;
    let opts = OdeOptions::with_tol(run.tol);
    exec.map(&run.seeds, |&z| flow_seed(&driving, z, run.t_end, &opts))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(seeds: Vec<Complex64>, t_end: f64) -> Vec<FlowResult> {
        chordal_flow(
            &ChordalRun {
                driving: DrivingSpec::Constant { value: 0.0 },
                seeds,
                t_end,
                tol: 1e-10,
            },
            Exec::Sequential,
        )
        .unwrap()
    }

    #[test]
    fn analytic_solution() {
        let r = run(vec![Complex64::new(0.0, 3.0)], 1.0);
        let exact = Complex64::new(0.0, 5f64.sqrt());
        assert!((r[0].last() - exact).norm() < 1e-6);
        // Residual check of the oracle: g = sqrt(z^2 + 4t) solves ġ = 2/g.
        let z = Complex64::new(0.3, 1.1);
        let g = |t: f64| (z * z + 4.0 * t).sqrt();
        let h = 1e-6;
        let dg = (g(0.5 + h) - g(0.5 - h)) / (2.0 * h);
        assert!((dg - 2.0 / g(0.5)).norm() < 1e-8);
    }

    #[test]
    fn slit_tip_swallow_time() {
        let r = run(vec![Complex64::new(0.0, 2.0)], 2.0);
        let ts = r[0].swallow_time.unwrap();
        assert!((0.999..=1.001).contains(&ts), "{ts}");
    }

    #[test]
    fn initial_value() {
        let z = Complex64::new(0.7, 0.2);
        let r = run(vec![z], 0.0);
        assert_eq!(r[0].last(), z);
    }

    #[test]
    fn hydrodynamic_normalization() {
        let z = Complex64::new(0.0, 100.0);
        let r = run(vec![z], 1.0);
        assert!((r[0].last() - z - 2.0 / z).norm() < 1e-3);
    }

    #[test]
    fn imaginary_part_decreases() {
        let r = run(vec![Complex64::new(0.0, 1.5), Complex64::new(0.0, 4.0)], 0.5);
        for f in &r {
            for w in f.values.windows(2) {
                assert!(w[1].im < w[0].im);
            }
        }
    }

    #[test]
    fn modes_agree() {
        let spec = ChordalRun {
            driving: DrivingSpec::Sle {
                kappa: 2.0,
                drift: Default::default(),
                seed: 5,
                dt: 1e-3,
                start: 0.0,
            },
            seeds: (1..6).map(|k| Complex64::new(0.2 * k as f64, 1.0)).collect(),
            t_end: 0.3,
            tol: 1e-8,
        };
        assert_eq!(
            chordal_flow(&spec, Exec::Sequential).unwrap(),
            chordal_flow(&spec, Exec::Parallel).unwrap()
        );
    }
}
