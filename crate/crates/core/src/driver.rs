//! The closed-loop controller: at each grid time the gradient of `W` is
//! estimated at the current state and again at the renormalized stage-1
//! midpoint, each turned into a feedback control that drives one stage of the
//! controlled midpoint step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feynman_kac::{EstimatorConfig, FeynmanKac, WEstimate};
use crate::gradient::feedback_control;
use crate::integrator::{controlled_stage1, controlled_stage2, renormalized_midpoint, Partition, PathSample};
use crate::manifold::{block, dist_sq, dot, norm, norm_sq, SpinConfiguration};
use crate::model::{ModelParams, TargetProfile, TerminalPayoff};
use crate::rng::WalkIncrements;

/// Which of the two gradient evaluations of a step is requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalPoint {
    State,
    Midpoint,
}

impl EvalPoint {
    fn call(self) -> u64 {
        match self {
            EvalPoint::State => 0,
            EvalPoint::Midpoint => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    pub grad_big_w: Vec<f64>,
    pub w: Option<WEstimate>,
    pub flagged_fraction: f64,
}

/// Provider of `∇_ℳ W(t_ℓ, m)`.
pub trait GradientSource {
    fn gradient(&mut self, l: usize, at: EvalPoint, t: f64, m: &SpinConfiguration) -> Result<GradientSample>;
}

/// Nested Feynman-Kac estimation with the method selected in `cfg`.
pub struct MonteCarloGradient<'a> {
    pub fk: FeynmanKac<'a>,
    pub cfg: EstimatorConfig,
    pub partition: Partition,
}

impl GradientSource for MonteCarloGradient<'_> {
    fn gradient(&mut self, l: usize, at: EvalPoint, _t: f64, m: &SpinConfiguration) -> Result<GradientSample> {
        let part = self.partition.from_index(l)?;
        let g = self.fk.gradient(m, &part, &self.cfg, at.call())?;
        Ok(GradientSample {
            flagged_fraction: g.flagged_fraction(),
            w: Some(g.w_at_point),
            grad_big_w: g.grad_big_w,
        })
    }
}

/// A closed-form `(t, m) ↦ ∇W` (test problems with known solution).
pub struct ExactGradient<F>(pub F);

impl<F: FnMut(f64, &SpinConfiguration) -> Vec<f64>> GradientSource for ExactGradient<F> {
    fn gradient(&mut self, _l: usize, _at: EvalPoint, t: f64, m: &SpinConfiguration) -> Result<GradientSample> {
        Ok(GradientSample { grad_big_w: (self.0)(t, m), w: None, flagged_fraction: 0.0 })
    }
}

/// `∇W ≡ 0`, i.e. the uncontrolled system.
pub struct ZeroGradient;

impl GradientSource for ZeroGradient {
    fn gradient(&mut self, _l: usize, _at: EvalPoint, _t: f64, m: &SpinConfiguration) -> Result<GradientSample> {
        Ok(GradientSample { grad_big_w: vec![0.0; m.dim()], w: None, flagged_fraction: 0.0 })
    }
}

#[derive(Debug, Clone)]
pub struct ControlledRun {
    pub trajectory: PathSample,
    /// `ū(t_j, m^j)` for `j < J`.
    pub controls: Vec<Vec<f64>>,
    /// `ū(t_j, g^j)` for `j < J`.
    pub midpoint_controls: Vec<Vec<f64>>,
    /// `w(t_j, m^j)` where estimated.
    pub w_estimates: Vec<Option<WEstimate>>,
    pub flagged_fractions: Vec<f64>,
}

impl ControlledRun {
    pub fn states(&self) -> &[SpinConfiguration] {
        &self.trajectory.states
    }

    /// Largest `|⟨m_i, u_i⟩|` over both recorded control sets (unnormalized).
    pub fn max_control_inner_product(&self) -> f64 {
        let n = self.trajectory.states[0].n_spins();
        let mut worst: f64 = 0.0;
        for (j, u) in self.controls.iter().enumerate() {
            let m = &self.trajectory.states[j];
            for i in 0..n {
                worst = worst.max(dot(&block(u, i), &m.spin(i)).abs());
            }
        }
        worst
    }

    /// Largest orthogonality angle `≪m_i, u_i≫` over all spins and times with nonzero control.
    pub fn max_orthogonality_angle(&self) -> f64 {
        let n = self.trajectory.states[0].n_spins();
        (0..n)
            .flat_map(|i| orthogonality_angle(self, i))
            .flatten()
            .fold(0.0, f64::max)
    }
}

/// Runs the controlled scheme from `m0` over `partition`, driven by `outer_walk`.
pub fn run_algorithm(
    params: &ModelParams,
    m0: &SpinConfiguration,
    partition: Partition,
    source: &mut dyn GradientSource,
    outer_walk: &WalkIncrements,
) -> Result<ControlledRun> {
    params.validate()?;
    if m0.n_spins() != params.n_spins {
        return Err(Error::Dimension("initial configuration does not match the model".into()));
    }
    let steps = partition.remaining();
    if outer_walk.steps() < steps || outer_walk.dims() != m0.dim() {
        return Err(Error::Dimension(format!(
            "outer walk has {} steps of dimension {}, run needs {steps} of dimension {}",
            outer_walk.steps(),
            outer_walk.dims(),
            m0.dim()
        )));
    }
    let tau = partition.tau();
    let mut states = vec![m0.clone()];
    let mut controls = Vec::with_capacity(steps);
    let mut midpoint_controls = Vec::with_capacity(steps);
    let mut w_estimates = Vec::with_capacity(steps + 1);
    let mut flagged_fractions = Vec::with_capacity(steps + 1);
    for r in 0..steps {
        let l = partition.start + r;
        let t = partition.time(l);
        let fail = |e: Error| Error::StepFailure { step: l, time: t, source: Box::new(e) };
        let m = &states[r];
        let xi = outer_walk.step(r);

        let at_state = source.gradient(l, EvalPoint::State, t, m).map_err(fail)?;
        let u = feedback_control(params, m, &at_state.grad_big_w).components;
        let e = controlled_stage1(params, m, &u, xi, tau);
        let g = renormalized_midpoint(m, &e).map_err(fail)?;
        let at_mid = source.gradient(l, EvalPoint::Midpoint, t, &g).map_err(fail)?;
        let u_mid = feedback_control(params, &g, &at_mid.grad_big_w).components;
        let next = controlled_stage2(params, m, &e, &u_mid, xi, tau);

        w_estimates.push(at_state.w);
        flagged_fractions.push(0.5 * (at_state.flagged_fraction + at_mid.flagged_fraction));
        controls.push(u);
        midpoint_controls.push(u_mid);
        states.push(next);
    }
    w_estimates.push(None);
    flagged_fractions.push(0.0);
    Ok(ControlledRun {
        trajectory: PathSample { partition, states },
        controls,
        midpoint_controls,
        w_estimates,
        flagged_fractions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    /// `δ ∫ ‖m − m̃‖²`.
    pub running: f64,
    /// `(λ/2) ∫ ‖u‖²`, controls piecewise constant per step.
    pub control: f64,
    /// `h(m(T))`.
    pub terminal: f64,
    pub total: f64,
}

/// Realized cost of a single controlled trajectory.
pub fn realized_cost(
    params: &ModelParams,
    run: &ControlledRun,
    target: &TargetProfile,
    payoff: &TerminalPayoff,
    quad_points: usize,
) -> Result<CostBreakdown> {
    let fk = FeynmanKac::new(params, payoff, target, quad_points)?;
    let part = run.trajectory.partition;
    let running = params.delta * fk.running_cost_integral(&run.trajectory);
    let control = 0.5 * params.lambda * part.tau() * run.controls.iter().map(|u| norm_sq(u)).sum::<f64>();
    let end = target.at(part.horizon, part.horizon);
    let terminal = payoff.value(fk.beta, run.trajectory.last().as_slice(), end.as_slice());
    Ok(CostBreakdown { running, control, terminal, total: running + control + terminal })
}

/// `err(t_j) = ‖a^j − b^j‖²`.
pub fn err_metric(a: &PathSample, b: &PathSample) -> Result<Vec<f64>> {
    if a.partition != b.partition || a.states.len() != b.states.len() {
        return Err(Error::Dimension("trajectories live on different partitions".into()));
    }
    Ok(a.states.iter().zip(&b.states).map(|(x, y)| dist_sq(x.as_slice(), y.as_slice())).collect())
}

/// Time average `(1/(J+1)) Σ_j err(t_j)`.
pub fn time_average(err: &[f64]) -> f64 {
    err.iter().sum::<f64>() / err.len() as f64
}

/// `|⟨m_i, u_i⟩| / (‖m_i‖ ‖u_i‖)` at each step with a control; `None` where `u_i = 0`.
pub fn orthogonality_angle(run: &ControlledRun, i: usize) -> Vec<Option<f64>> {
    run.controls
        .iter()
        .enumerate()
        .map(|(j, u)| {
            let ui = block(u, i);
            let mi = run.trajectory.states[j].spin(i);
            let nu = norm(&ui);
            if nu == 0.0 {
                None
            } else {
                Some(dot(&mi, &ui).abs() / (norm(&mi) * nu))
            }
        })
        .collect()
}
