//! Explicit time stepping for autonomous systems `u' = f(u)`.
//!
//! The schemes are written once against [`System`], which supplies the
//! right-hand side and linear combinations of states. Plain tensors use
//! [`TensorSystem`]; training drives the same code through a tape-backed
//! system so gradients flow through every stage.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::BoundaryMask;
use crate::tensor::Tensor;

pub trait System {
    type State;

    /// Right-hand side at `u`. Time never enters: the dynamics are autonomous.
    fn eval(&mut self, u: &Self::State) -> Result<Self::State>;

    /// `base + Σ c_k · term_k`, accumulated in the order given.
    fn combine(&mut self, base: &Self::State, terms: &[(f64, &Self::State)]) -> Result<Self::State>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Scheme {
    #[default]
    Rk4_38,
    Euler,
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rk4_38" | "rk4" => Ok(Scheme::Rk4_38),
            "euler" => Ok(Scheme::Euler),
            other => Err(Error::config(format!(
                "unknown scheme {other:?} (expected rk4_38|euler)"
            ))),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Rk4_38 => "rk4_38",
            Scheme::Euler => "euler",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorConfig {
    pub scheme: Scheme,
    pub dt: f64,
    pub steps: usize,
}

impl IntegratorConfig {
    pub fn new(scheme: Scheme, dt: f64, steps: usize) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::config(format!("time step must be positive, got {dt}")));
        }
        Ok(IntegratorConfig { scheme, dt, steps })
    }
}

/// Fourth-order Runge–Kutta, 3/8 rule.
pub fn rk4_38_step<S: System>(sys: &mut S, u: &S::State, dt: f64) -> Result<S::State> {
    let k1 = sys.eval(u)?;
    let s2 = sys.combine(u, &[(dt / 3.0, &k1)])?;
    let k2 = sys.eval(&s2)?;
    let s3 = sys.combine(u, &[(-dt / 3.0, &k1), (dt, &k2)])?;
    let k3 = sys.eval(&s3)?;
    let s4 = sys.combine(u, &[(dt, &k1), (-dt, &k2), (dt, &k3)])?;
    let k4 = sys.eval(&s4)?;
    sys.combine(
        u,
        &[
            (dt / 8.0, &k1),
            (3.0 * dt / 8.0, &k2),
            (3.0 * dt / 8.0, &k3),
            (dt / 8.0, &k4),
        ],
    )
}

pub fn euler_step<S: System>(sys: &mut S, u: &S::State, dt: f64) -> Result<S::State> {
    let k1 = sys.eval(u)?;
    sys.combine(u, &[(dt, &k1)])
}

pub fn step<S: System>(sys: &mut S, u: &S::State, dt: f64, scheme: Scheme) -> Result<S::State> {
    match scheme {
        Scheme::Rk4_38 => rk4_38_step(sys, u, dt),
        Scheme::Euler => euler_step(sys, u, dt),
    }
}

/// Wraps a closure `f(u) -> u'` over plain tensors. Rows flagged in the
/// optional mask have their time derivative forced to zero.
pub struct TensorSystem<'m, F> {
    f: F,
    mask: Option<&'m BoundaryMask>,
}

impl<'m, F> TensorSystem<'m, F>
where
    F: FnMut(&Tensor) -> Result<Tensor>,
{
    pub fn new(f: F) -> Self {
        TensorSystem { f, mask: None }
    }

    pub fn with_mask(f: F, mask: &'m BoundaryMask) -> Self {
        TensorSystem { f, mask: Some(mask) }
    }
}

impl<F> System for TensorSystem<'_, F>
where
    F: FnMut(&Tensor) -> Result<Tensor>,
{
    type State = Tensor;

    fn eval(&mut self, u: &Tensor) -> Result<Tensor> {
        let mut out = (self.f)(u)?;
        out.same_shape(u, "dynamics")?;
        if let Some(mask) = self.mask {
            clamp_rows(&mut out, mask);
        }
        out.check_finite("stage evaluation")
    }

    fn combine(&mut self, base: &Tensor, terms: &[(f64, &Tensor)]) -> Result<Tensor> {
        let mut out = base.clone();
        for (c, t) in terms {
            out.axpy(*c, t)?;
        }
        out.check_finite("stage update")
    }
}

pub(crate) fn clamp_rows(t: &mut Tensor, mask: &BoundaryMask) {
    let d = t.cols();
    for node in mask.nodes() {
        if node < t.rows() {
            t.data_mut()[node * d..(node + 1) * d].fill(0.0);
        }
    }
}

/// States `u_0, u_1, …, u_steps` at uniform spacing `dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Tensor>,
    pub dt: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> &Tensor {
        self.states.last().expect("trajectory holds the initial state")
    }
}

/// Iterate the configured scheme from `u0`, recording every state.
pub fn rollout<S>(sys: &mut S, u0: &Tensor, config: &IntegratorConfig) -> Result<Trajectory>
where
    S: System<State = Tensor>,
{
    let mut states = Vec::with_capacity(config.steps + 1);
    states.push(u0.clone());
    for k in 0..config.steps {
        let next = step(sys, &states[k], config.dt, config.scheme)
            .map_err(|e| e.with_context(format!("rollout step {}", k + 1)))?;
        states.push(next);
    }
    Ok(Trajectory {
        states,
        dt: config.dt,
    })
}
