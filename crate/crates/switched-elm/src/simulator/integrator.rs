//! Fixed-step integrators for one affine mode over one sampling period.
//!
//! Each integrator is a strategy behind the [`Integrator`] trait, looked up
//! by name. `prepare` does the per-(mode, step) work once; the returned
//! [`ModeStepper`] then advances the state sample by sample.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::LinearMode;
use crate::error::{Error, Result};

/// Advances the state by one sampling period under a fixed mode.
pub trait ModeStepper: Send + Sync {
    fn step(&self, x: &DVector<f64>) -> DVector<f64>;
}

/// A fixed-step integration scheme for `x' = A x + B`.
pub trait Integrator: Send + Sync {
    /// Registry name, as written in config files and on the CLI.
    fn name(&self) -> &'static str;

    /// Precompute whatever the scheme needs for this mode and step size.
    fn prepare(&self, mode: &LinearMode, dt: f64, substeps: usize) -> Box<dyn ModeStepper>;
}

/// Exact discretization of the affine system over one period.
///
/// Both the state transition matrix and the forced response come out of one
/// exponential of the augmented matrix `[[A, B], [0, 0]] * dt`, which also
/// covers singular `A` without a special case.
pub struct ExactExponential;

struct AffineStep {
    phi: DMatrix<f64>,
    gamma: DVector<f64>,
}

impl ModeStepper for AffineStep {
    fn step(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.phi * x + &self.gamma
    }
}

impl Integrator for ExactExponential {
    fn name(&self) -> &'static str {
        "exact-exponential"
    }

    fn prepare(&self, mode: &LinearMode, dt: f64, _substeps: usize) -> Box<dyn ModeStepper> {
        let n = mode.dim();
        let mut aug = DMatrix::zeros(n + 1, n + 1);
        aug.view_mut((0, 0), (n, n)).copy_from(&(&mode.a * dt));
        aug.view_mut((0, n), (n, 1)).copy_from(&(&mode.b * dt));
        let e = aug.exp();
        Box::new(AffineStep {
            phi: e.view((0, 0), (n, n)).into_owned(),
            gamma: DVector::from_iterator(n, e.view((0, n), (n, 1)).iter().cloned()),
        })
    }
}

/// Classical fourth-order Runge-Kutta with `substeps` steps per period.
pub struct RungeKutta4;

struct Rk4Step {
    a: DMatrix<f64>,
    b: DVector<f64>,
    h: f64,
    substeps: usize,
}

impl ModeStepper for Rk4Step {
    fn step(&self, x: &DVector<f64>) -> DVector<f64> {
        let f = |x: &DVector<f64>| &self.a * x + &self.b;
        let mut x = x.clone();
        for _ in 0..self.substeps {
            let k1 = f(&x);
            let k2 = f(&(&x + &k1 * (self.h / 2.0)));
            let k3 = f(&(&x + &k2 * (self.h / 2.0)));
            let k4 = f(&(&x + &k3 * self.h));
            x += (k1 + 2.0 * k2 + 2.0 * k3 + k4) * (self.h / 6.0);
        }
        x
    }
}

impl Integrator for RungeKutta4 {
    fn name(&self) -> &'static str {
        "rk4"
    }

    fn prepare(&self, mode: &LinearMode, dt: f64, substeps: usize) -> Box<dyn ModeStepper> {
        let substeps = substeps.max(1);
        Box::new(Rk4Step {
            a: mode.a.clone(),
            b: mode.b.clone(),
            h: dt / substeps as f64,
            substeps,
        })
    }
}

static REGISTRY: &[&dyn Integrator] = &[&ExactExponential, &RungeKutta4];

/// Names of all registered integrators.
pub fn names() -> impl Iterator<Item = &'static str> {
    REGISTRY.iter().map(|i| i.name())
}

/// A handle to a registered integrator, cheap to copy and compare.
#[derive(Clone, Copy)]
pub struct IntegratorKind(&'static dyn Integrator);

impl IntegratorKind {
    pub const EXACT_EXPONENTIAL: IntegratorKind = IntegratorKind(&ExactExponential);
    pub const RK4: IntegratorKind = IntegratorKind(&RungeKutta4);

    pub fn by_name(name: &str) -> Result<Self> {
        REGISTRY
            .iter()
            .find(|i| i.name() == name)
            .map(|i| IntegratorKind(*i))
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "integrator",
                name: name.to_string(),
                known: names().collect::<Vec<_>>().join(", "),
            })
    }

    pub fn name(&self) -> &'static str {
        self.0.name()
    }

    pub fn prepare(&self, mode: &LinearMode, dt: f64, substeps: usize) -> Box<dyn ModeStepper> {
        self.0.prepare(mode, dt, substeps)
    }
}

impl fmt::Debug for IntegratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl PartialEq for IntegratorKind {
    fn eq(&self, other: &Self) -> bool {
        self.name() == other.name()
    }
}

impl Eq for IntegratorKind {}

impl Serialize for IntegratorKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for IntegratorKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(deserializer)?;
        IntegratorKind::by_name(&name).map_err(D::Error::custom)
    }
}
