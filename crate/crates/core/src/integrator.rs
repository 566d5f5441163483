//! Semi-implicit two-stage midpoint scheme for sphere-valued SDEs.
//!
//! Each stage solves, per spin,
//!
//! ```text
//! e = m + ((e + m) / 2) × (τ a + ν ξ)
//! ```
//!
//! which is the linear system `(Id + σ(c)) e = (Id − σ(c)) m` with
//! `c = (τ a + ν ξ) / 2`. Its solution is the Cayley rotation of `m`, so the
//! spin norm is preserved up to roundoff. Stage 1 evaluates the drift at the
//! current state, stage 2 at the average of the current state and the stage-1
//! output. The midpoint structure encodes the Stratonovich interpretation.

use crate::error::{Error, Result};
use crate::manifold::{block, cross, dot, norm, set_block, SpinConfiguration, Vec3};
use crate::model::{a_ctrl_block, abar_block, ModelParams};
use crate::rng::WalkIncrements;

/// Uniform grid `t_j = j τ`, `τ = T / J`, restricted to `[t_start, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Partition {
    pub horizon: f64,
    pub steps: usize,
    pub start: usize,
}

impl Partition {
    pub fn new(horizon: f64, steps: usize, start: usize) -> Result<Self> {
        if !(horizon > 0.0) || steps == 0 {
            return Err(Error::InvalidParameter(format!(
                "partition needs T > 0 and J >= 1 (got T = {horizon}, J = {steps})"
            )));
        }
        if start > steps {
            return Err(Error::InvalidParameter(format!("start index {start} beyond J = {steps}")));
        }
        Ok(Self { horizon, steps, start })
    }

    /// Partition of `[0, T]` with step `tau`; `T / tau` must be an integer up to 1e-9 relative.
    pub fn from_tau(horizon: f64, tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::InvalidParameter(format!("tau must be > 0, got {tau}")));
        }
        let j = (horizon / tau).round();
        if j < 1.0 || (j * tau - horizon).abs() > 1e-9 * horizon {
            return Err(Error::InvalidParameter(format!(
                "T = {horizon} is not an integer multiple of tau = {tau}"
            )));
        }
        Self::new(horizon, j as usize, 0)
    }

    pub fn tau(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, j: usize) -> f64 {
        if j == self.steps {
            self.horizon
        } else {
            j as f64 * self.tau()
        }
    }

    /// Number of steps from `t_start` to `T`.
    pub fn remaining(&self) -> usize {
        self.steps - self.start
    }

    /// The sub-partition starting at grid index `start`.
    pub fn from_index(&self, start: usize) -> Result<Self> {
        Self::new(self.horizon, self.steps, start)
    }
}

/// Cayley rotation `(Id + σ(c))⁻¹ (Id − σ(c)) m` in closed form.
#[inline]
pub fn cayley(m: &Vec3, c: &Vec3) -> Vec3 {
    let cc = dot(c, c);
    let cm = dot(c, m);
    let cxm = cross(c, m);
    let inv = 1.0 / (1.0 + cc);
    [
        ((1.0 - cc) * m[0] - 2.0 * cxm[0] + 2.0 * cm * c[0]) * inv,
        ((1.0 - cc) * m[1] - 2.0 * cxm[1] + 2.0 * cm * c[1]) * inv,
        ((1.0 - cc) * m[2] - 2.0 * cxm[2] + 2.0 * cm * c[2]) * inv,
    ]
}

#[inline]
fn stage_vector(a: &Vec3, xi: &[f64], tau: f64, nu: f64) -> Vec3 {
    [
        0.5 * (tau * a[0] + nu * xi[0]),
        0.5 * (tau * a[1] + nu * xi[1]),
        0.5 * (tau * a[2] + nu * xi[2]),
    ]
}

/// One implicit midpoint stage for a single spin with frozen drift vector `a`.
pub fn midpoint_stage(m: &Vec3, a: &Vec3, xi: &Vec3, tau: f64, nu: f64) -> Vec3 {
    debug_assert!((norm(m) - 1.0).abs() < 1e-10, "stage input off the sphere");
    let c = stage_vector(a, xi, tau, nu);
    let e = cayley(m, &c);
    if cfg!(debug_assertions) {
        // (Id + σ(c)) e − (Id − σ(c)) m
        let lhs = [e[0] + cross(&c, &e)[0], e[1] + cross(&c, &e)[1], e[2] + cross(&c, &e)[2]];
        let cm = cross(&c, m);
        let rhs = [m[0] - cm[0], m[1] - cm[1], m[2] - cm[2]];
        let res = norm(&[lhs[0] - rhs[0], lhs[1] - rhs[1], lhs[2] - rhs[2]]);
        debug_assert!(res < 1e-12 * (1.0 + dot(&c, &c)), "stage residual {res}");
    }
    e
}

/// Reusable buffers for stepping without allocation.
#[derive(Debug, Clone, Default)]
pub struct StepScratch {
    qm: Vec<f64>,
    e: Vec<f64>,
    mid: Vec<f64>,
}

impl StepScratch {
    pub fn new(dim: usize) -> Self {
        Self { qm: vec![0.0; dim], e: vec![0.0; dim], mid: vec![0.0; dim] }
    }

    fn ensure(&mut self, dim: usize) {
        if self.qm.len() != dim {
            *self = Self::new(dim);
        }
    }

    /// Stage-1 output of the last step.
    pub fn intermediate(&self) -> &[f64] {
        &self.e
    }
}

/// One auxiliary step `m^j → m^{j+1}` (drift `ā`), writing into `out`.
pub fn step_auxiliary_into(
    params: &ModelParams,
    m: &[f64],
    xi: &[f64],
    xi_sign: f64,
    tau: f64,
    scratch: &mut StepScratch,
    out: &mut [f64],
) {
    let n = m.len() / 3;
    scratch.ensure(m.len());
    let alpha = params.alpha;
    let nu = params.nu * xi_sign;
    params.q_apply_into(m, &mut scratch.qm);
    for i in 0..n {
        let mi = block(m, i);
        let a = abar_block(alpha, &mi, &block(&scratch.qm, i));
        let c = stage_vector(&a, &xi[3 * i..3 * i + 3], tau, nu);
        set_block(&mut scratch.e, i, &cayley(&mi, &c));
    }
    for k in 0..m.len() {
        scratch.mid[k] = 0.5 * (m[k] + scratch.e[k]);
    }
    params.q_apply_into(&scratch.mid, &mut scratch.qm);
    for i in 0..n {
        let a = abar_block(alpha, &block(&scratch.mid, i), &block(&scratch.qm, i));
        let c = stage_vector(&a, &xi[3 * i..3 * i + 3], tau, nu);
        set_block(out, i, &cayley(&block(m, i), &c));
    }
}

/// Result of one scheme step, with the stage-1 intermediate.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub intermediate: Vec<f64>,
    pub next: SpinConfiguration,
}

pub fn step_auxiliary(params: &ModelParams, m: &SpinConfiguration, xi: &[f64], tau: f64) -> StepRecord {
    assert_eq!(xi.len(), m.dim(), "increment dimension mismatch");
    let mut scratch = StepScratch::new(m.dim());
    let mut out = vec![0.0; m.dim()];
    step_auxiliary_into(params, m.as_slice(), xi, 1.0, tau, &mut scratch, &mut out);
    StepRecord { intermediate: scratch.e, next: SpinConfiguration::from_trusted(out) }
}

/// Stage 1 of the controlled step: returns `e^j` from drift `a(m^j, u)`.
pub fn controlled_stage1(
    params: &ModelParams,
    m: &SpinConfiguration,
    u: &[f64],
    xi: &[f64],
    tau: f64,
) -> Vec<f64> {
    let qm = params.q_apply(m.as_slice());
    let mut e = vec![0.0; m.dim()];
    for i in 0..m.n_spins() {
        let mi = m.spin(i);
        let a = a_ctrl_block(params.alpha, params.c_ext, &mi, &block(&qm, i), &block(u, i));
        let c = stage_vector(&a, &xi[3 * i..3 * i + 3], tau, params.nu);
        set_block(&mut e, i, &cayley(&mi, &c));
    }
    e
}

/// `g^j`: the blockwise-renormalized midpoint `(m^j + e^j) / 2`.
pub fn renormalized_midpoint(m: &SpinConfiguration, e: &[f64]) -> Result<SpinConfiguration> {
    let mid: Vec<f64> = m.as_slice().iter().zip(e).map(|(a, b)| 0.5 * (a + b)).collect();
    SpinConfiguration::normalized(mid)
}

/// Stage 2 of the controlled step: drift `a((m^j + e^j)/2, u_mid)`, returns `m^{j+1}`.
pub fn controlled_stage2(
    params: &ModelParams,
    m: &SpinConfiguration,
    e: &[f64],
    u_mid: &[f64],
    xi: &[f64],
    tau: f64,
) -> SpinConfiguration {
    let mid: Vec<f64> = m.as_slice().iter().zip(e).map(|(a, b)| 0.5 * (a + b)).collect();
    let qm = params.q_apply(&mid);
    let mut out = vec![0.0; m.dim()];
    for i in 0..m.n_spins() {
        let a = a_ctrl_block(params.alpha, params.c_ext, &block(&mid, i), &block(&qm, i), &block(u_mid, i));
        let c = stage_vector(&a, &xi[3 * i..3 * i + 3], tau, params.nu);
        set_block(&mut out, i, &cayley(&m.spin(i), &c));
    }
    SpinConfiguration::from_trusted(out)
}

/// Feedback law `(t, m) ↦ ū(t, m)` evaluated by the controlled stepper.
pub trait ControlProvider {
    fn control(&mut self, t: f64, m: &SpinConfiguration) -> Result<Vec<f64>>;
}

impl<F> ControlProvider for F
where
    F: FnMut(f64, &SpinConfiguration) -> Result<Vec<f64>>,
{
    fn control(&mut self, t: f64, m: &SpinConfiguration) -> Result<Vec<f64>> {
        self(t, m)
    }
}

/// One controlled step. The stage-2 control is evaluated at the renormalized midpoint.
pub fn step_controlled(
    params: &ModelParams,
    m: &SpinConfiguration,
    provider: &mut dyn ControlProvider,
    t: f64,
    xi: &[f64],
    tau: f64,
) -> Result<SpinConfiguration> {
    let u = provider.control(t, m)?;
    check_control(&u, m.dim())?;
    let e = controlled_stage1(params, m, &u, xi, tau);
    let g = renormalized_midpoint(m, &e)?;
    let u_mid = provider.control(t, &g)?;
    check_control(&u_mid, m.dim())?;
    Ok(controlled_stage2(params, m, &e, &u_mid, xi, tau))
}

fn check_control(u: &[f64], dim: usize) -> Result<()> {
    if u.len() != dim {
        return Err(Error::Control(format!("control has {} entries, expected {dim}", u.len())));
    }
    if u.iter().any(|x| !x.is_finite()) {
        return Err(Error::Control("control is not finite".into()));
    }
    Ok(())
}

/// The iterates `m^start, …, m^J` of one path.
#[derive(Debug, Clone)]
pub struct PathSample {
    pub partition: Partition,
    pub states: Vec<SpinConfiguration>,
}

impl PathSample {
    pub fn max_norm_deviation(&self) -> f64 {
        self.states.iter().map(SpinConfiguration::max_norm_deviation).fold(0.0, f64::max)
    }

    pub fn last(&self) -> &SpinConfiguration {
        self.states.last().expect("path is never empty")
    }
}

pub enum PathMode<'a> {
    Auxiliary,
    Controlled(&'a mut dyn ControlProvider),
}

/// Iterates the chosen stepper from `t_start` to `T`. Row `r` of `walk` drives step `start + r`.
pub fn simulate_path(
    params: &ModelParams,
    start: &SpinConfiguration,
    partition: Partition,
    walk: &WalkIncrements,
    mode: PathMode<'_>,
) -> Result<PathSample> {
    let steps = partition.remaining();
    if walk.steps() < steps || (steps > 0 && walk.dims() != start.dim()) {
        return Err(Error::Dimension(format!(
            "walk has {} steps of dimension {}, path needs {} of dimension {}",
            walk.steps(),
            walk.dims(),
            steps,
            start.dim()
        )));
    }
    let tau = partition.tau();
    let mut states = Vec::with_capacity(steps + 1);
    states.push(start.clone());
    match mode {
        PathMode::Auxiliary => {
            let mut scratch = StepScratch::new(start.dim());
            for r in 0..steps {
                let mut out = vec![0.0; start.dim()];
                step_auxiliary_into(params, states[r].as_slice(), walk.step(r), 1.0, tau, &mut scratch, &mut out);
                states.push(SpinConfiguration::from_trusted(out));
            }
        }
        PathMode::Controlled(provider) => {
            for r in 0..steps {
                let t = partition.time(partition.start + r);
                let next = step_controlled(params, &states[r], provider, t, walk.step(r), tau).map_err(|e| {
                    Error::StepFailure { step: partition.start + r, time: t, source: Box::new(e) }
                })?;
                states.push(next);
            }
        }
    }
    Ok(PathSample { partition, states })
}

/// Drives an auxiliary path without storing it; `visit(r, state)` sees `r = 0..=steps`.
pub(crate) fn run_auxiliary_path<F: FnMut(usize, &[f64])>(
    params: &ModelParams,
    start: &[f64],
    steps: usize,
    walk: &WalkIncrements,
    xi_sign: f64,
    tau: f64,
    cur: &mut Vec<f64>,
    next: &mut Vec<f64>,
    scratch: &mut StepScratch,
    mut visit: F,
) {
    cur.clear();
    cur.extend_from_slice(start);
    next.resize(start.len(), 0.0);
    visit(0, cur);
    for r in 0..steps {
        step_auxiliary_into(params, cur, walk.step(r), xi_sign, tau, scratch, next);
        std::mem::swap(cur, next);
        visit(r + 1, cur);
    }
}
