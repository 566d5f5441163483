//! Tangential gradients of `w` by renormalized central differences, and the
//! feedback law built from them.
//!
//! Method A estimates `w` separately at every stencil point (independent
//! streams) and differences the estimates. Method B differences the path
//! functionals sample by sample, driving all `6N` perturbed starts and the
//! centre with one common walk.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feynman_kac::{
    antithetic_pairs, grid_index, EstimatorConfig, FeynmanKac, GradientMethod, PathFunctional, WEstimate,
};
use crate::integrator::Partition;
use crate::manifold::{block, cross, perturb_renormalized, set_block, tangent_project, Sign, SpinConfiguration, TangentVector};
use crate::model::{ModelParams, TargetProfile, TerminalPayoff};
use crate::rng::{namespace, SeedPolicy, StreamKey};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimate {
    /// Raw quotients `d_{l,i}`, ambient axes.
    pub grad_w_raw: Vec<f64>,
    /// Standard errors of the raw quotients.
    pub grad_w_std_error: Vec<f64>,
    pub w_at_point: WEstimate,
    /// `−P(grad_w_raw) / (β w)`, blockwise tangent.
    pub grad_big_w: Vec<f64>,
    /// Flagged samples over all stencil and centre evaluations.
    pub flagged: usize,
    /// Total path evaluations.
    pub evaluations: usize,
}

impl GradientEstimate {
    pub fn flagged_fraction(&self) -> f64 {
        self.flagged as f64 / self.evaluations.max(1) as f64
    }

    /// `max_i ‖normal part of raw_i‖ / ‖tangent part of raw_i‖`; 0 where the tangent part vanishes.
    pub fn normal_ratio(&self, m: &SpinConfiguration) -> f64 {
        let tangent = tangent_project(m, &self.grad_w_raw);
        (0..m.n_spins())
            .map(|i| {
                let t = crate::manifold::norm(&tangent.block(i));
                let n = crate::manifold::dot(&block(&self.grad_w_raw, i), &m.spin(i)).abs();
                if t > 0.0 {
                    n / t
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Central differences `[f(m⁺_{i,l}) − f(m⁻_{i,l})] / (2h̄)` of any function on the manifold.
pub fn stencil_gradient<F: FnMut(&SpinConfiguration) -> f64>(m: &SpinConfiguration, hbar: f64, mut f: F) -> Vec<f64> {
    let mut out = vec![0.0; m.dim()];
    for i in 0..m.n_spins() {
        for l in 0..3 {
            let plus = f(&perturb_renormalized(m, i, l, hbar, Sign::Plus));
            let minus = f(&perturb_renormalized(m, i, l, hbar, Sign::Minus));
            out[3 * i + l] = (plus - minus) / (2.0 * hbar);
        }
    }
    out
}

/// `∇W = −P(∇w) / (β w)`.
pub fn grad_big_w_from(m: &SpinConfiguration, grad_w: &[f64], w: f64, beta: f64) -> Result<Vec<f64>> {
    if !(w > 0.0) {
        return Err(Error::NonPositiveEstimate(w));
    }
    let mut g = tangent_project(m, grad_w).components;
    for x in g.iter_mut() {
        *x *= -1.0 / (beta * w);
    }
    Ok(g)
}

/// Stream of the centre estimate (`slot = 0`) or of stencil point `slot ≥ 1`
/// for gradient call `call` at grid index `l`.
pub fn estimator_stream(seed: &SeedPolicy, l: usize, call: u64, slot: u64) -> StreamKey {
    seed.stream(&[namespace::ESTIMATOR, l as u64, call, slot])
}

fn stencil_slot(i: usize, l: usize, sign: Sign) -> u64 {
    1 + (6 * i + 2 * l) as u64 + u64::from(sign == Sign::Minus)
}

impl FeynmanKac<'_> {
    /// Method A at `m`, time `t_{partition.start}`.
    pub fn gradient_method_a(
        &self,
        m: &SpinConfiguration,
        partition: &Partition,
        cfg: &EstimatorConfig,
        call: u64,
    ) -> Result<GradientEstimate> {
        let l = partition.start;
        let n = cfg.samples;
        let centre = self.estimate_on_stream(m, partition, n, estimator_stream(&cfg.seed, l, call, 0))?;
        let dim = m.dim();
        let mut raw = vec![0.0; dim];
        let mut se = vec![0.0; dim];
        let mut flagged = centre.flagged;
        for i in 0..m.n_spins() {
            for ax in 0..3 {
                let side = |sign: Sign| -> Result<WEstimate> {
                    let p = perturb_renormalized(m, i, ax, cfg.hbar, sign);
                    let key = estimator_stream(&cfg.seed, l, call, stencil_slot(i, ax, sign));
                    self.estimate_on_stream(&p, partition, n, key)
                };
                let plus = side(Sign::Plus)?;
                let minus = side(Sign::Minus)?;
                flagged += plus.flagged + minus.flagged;
                raw[3 * i + ax] = (plus.value - minus.value) / (2.0 * cfg.hbar);
                se[3 * i + ax] = plus.std_error.hypot(minus.std_error) / (2.0 * cfg.hbar);
            }
        }
        let grad_big_w = grad_big_w_from(m, &raw, centre.value, self.beta)?;
        Ok(GradientEstimate {
            grad_w_raw: raw,
            grad_w_std_error: se,
            w_at_point: centre,
            grad_big_w,
            flagged,
            evaluations: n * (1 + 2 * dim),
        })
    }

    /// Method B at `m`, time `t_{partition.start}`.
    pub fn gradient_method_b(
        &self,
        m: &SpinConfiguration,
        partition: &Partition,
        cfg: &EstimatorConfig,
        call: u64,
    ) -> Result<GradientEstimate> {
        let n = cfg.samples;
        if n < 2 || !n.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!("sample count must be even and >= 2, got {n}")));
        }
        let dim = m.dim();
        let stencil: Vec<(SpinConfiguration, SpinConfiguration)> = (0..dim)
            .map(|k| {
                (
                    perturb_renormalized(m, k / 3, k % 3, cfg.hbar, Sign::Plus),
                    perturb_renormalized(m, k / 3, k % 3, cfg.hbar, Sign::Minus),
                )
            })
            .collect();
        let grid = self.target_grid(partition);
        let key = estimator_stream(&cfg.seed, partition.start, call, 0);
        let inv = 1.0 / (2.0 * cfg.hbar);
        let s = antithetic_pairs(key, n / 2, partition.remaining(), dim, partition.tau(), 2 + dim, |ws, walk, sign, out| {
            let mut eval = |start: &SpinConfiguration| {
                PathFunctional::from_log(self.log_h_streaming(ws, &grid, partition, start.as_slice(), walk, sign))
            };
            let c = eval(m);
            out[0] = c.value;
            out[1 + dim] = if c.flagged { 1.0 } else { 0.0 };
            let mut flagged = usize::from(c.flagged);
            for (k, (p, q)) in stencil.iter().enumerate() {
                let a = eval(p);
                let b = eval(q);
                flagged += usize::from(a.flagged) + usize::from(b.flagged);
                out[1 + k] = (a.value - b.value) * inv;
            }
            flagged
        });
        let evaluations = n * (1 + 2 * dim);
        let centre_flagged = (s.mean[1 + dim] * n as f64).round() as usize;
        if centre_flagged == n {
            return Err(Error::ValueVanished {
                context: format!("gradient at t = {}, all {n} centre samples", partition.time(partition.start)),
            });
        }
        let centre = WEstimate { value: s.mean[0], std_error: s.std_error[0], samples_used: n, flagged: centre_flagged };
        let raw = s.mean[1..1 + dim].to_vec();
        let grad_big_w = grad_big_w_from(m, &raw, centre.value, self.beta)?;
        Ok(GradientEstimate {
            grad_w_raw: raw,
            grad_w_std_error: s.std_error[1..1 + dim].to_vec(),
            w_at_point: centre,
            grad_big_w,
            flagged: s.flagged,
            evaluations,
        })
    }

    pub fn gradient(
        &self,
        m: &SpinConfiguration,
        partition: &Partition,
        cfg: &EstimatorConfig,
        call: u64,
    ) -> Result<GradientEstimate> {
        match cfg.method {
            GradientMethod::A => self.gradient_method_a(m, partition, cfg, call),
            GradientMethod::B => self.gradient_method_b(m, partition, cfg, call),
        }
    }
}

fn standalone(
    params: &ModelParams,
    t: f64,
    m: &SpinConfiguration,
    cfg: &EstimatorConfig,
    payoff: &TerminalPayoff,
    target: &TargetProfile,
    partition: &Partition,
    method: GradientMethod,
) -> Result<GradientEstimate> {
    cfg.validate()?;
    let fk = FeynmanKac::new(params, payoff, target, cfg.quad_points)?;
    let part = partition.from_index(grid_index(partition, t)?)?;
    match method {
        GradientMethod::A => fk.gradient_method_a(m, &part, cfg, u64::MAX),
        GradientMethod::B => fk.gradient_method_b(m, &part, cfg, u64::MAX),
    }
}

/// Method A gradient of `w(t, ·)` at `m`; `t` must be a grid time of `partition`.
pub fn grad_w_method_a(
    params: &ModelParams,
    t: f64,
    m: &SpinConfiguration,
    cfg: &EstimatorConfig,
    payoff: &TerminalPayoff,
    target: &TargetProfile,
    partition: &Partition,
) -> Result<GradientEstimate> {
    standalone(params, t, m, cfg, payoff, target, partition, GradientMethod::A)
}

/// Method B gradient of `w(t, ·)` at `m`; `t` must be a grid time of `partition`.
pub fn grad_w_method_b(
    params: &ModelParams,
    t: f64,
    m: &SpinConfiguration,
    cfg: &EstimatorConfig,
    payoff: &TerminalPayoff,
    target: &TargetProfile,
    partition: &Partition,
) -> Result<GradientEstimate> {
    standalone(params, t, m, cfg, payoff, target, partition, GradientMethod::B)
}

/// `ū_i = (C/λ)(m_i × g_i − α g_i)` with `g = P(∇W)`.
pub fn feedback_control(params: &ModelParams, m: &SpinConfiguration, grad_big_w: &[f64]) -> TangentVector {
    let g = tangent_project(m, grad_big_w);
    let k = params.c_ext / params.lambda;
    let mut out = vec![0.0; m.dim()];
    for i in 0..m.n_spins() {
        let gi = g.block(i);
        let c = cross(&m.spin(i), &gi);
        set_block(&mut out, i, &[k * (c[0] - params.alpha * gi[0]), k * (c[1] - params.alpha * gi[1]), k * (c[2] - params.alpha * gi[2])]);
    }
    TangentVector { components: out }
}
