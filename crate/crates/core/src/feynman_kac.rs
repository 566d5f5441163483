//! Monte-Carlo evaluation of `w(t, m)` through its Feynman-Kac representation
//!
//! ```text
//! w(t, m) = E[ exp(−β h(𝔪(T))) · exp(−βδ ∫_t^T ‖𝔪(r) − m̃(r)‖² dr) ]
//! ```
//!
//! where `𝔪` is the auxiliary process started at `(t, m)`. The running
//! integral uses composite Gauss-Legendre quadrature on the piecewise-affine
//! interpolants of the iterates and of the target. The expectation is taken
//! over antithetic pairs `(ξ, −ξ)`; the exponent is accumulated in log-space.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{run_auxiliary_path, Partition, PathSample, StepScratch};
use crate::manifold::SpinConfiguration;
use crate::model::{ModelParams, TargetProfile, TerminalPayoff};
use crate::rng::{namespace, SeedPolicy, StreamKey, WalkIncrements};

/// `ln` of the smallest positive normal double; path weights below it are flagged.
pub const LOG_UNDERFLOW: f64 = -708.396_418_532_264_1;

/// Gauss-Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// `n`-point rule from Newton iteration on `P_n`.
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || n > 64 {
            return Err(Error::InvalidParameter(format!("quadrature points must be in 1..=64, got {n}")));
        }
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Ok(Self { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped to `[0, 1]`.
    pub fn unit_interval(&self) -> Vec<(f64, f64)> {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| (0.5 * (x + 1.0), 0.5 * w)).collect()
    }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GradientMethod {
    /// Expectation first, then central difference quotient.
    A,
    /// Central difference quotient inside the expectation, common random numbers.
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Monte-Carlo samples; antithetic pairs count as two.
    pub samples: usize,
    /// Stencil width of the difference quotients.
    pub hbar: f64,
    pub quad_points: usize,
    pub method: GradientMethod,
    pub seed: SeedPolicy,
}

impl EstimatorConfig {
    /// `h̄ = 1/√M`, two-point quadrature, Method B.
    pub fn with_samples(samples: usize, seed: u64) -> Self {
        Self {
            samples,
            hbar: 1.0 / (samples as f64).sqrt(),
            quad_points: 2,
            method: GradientMethod::B,
            seed: SeedPolicy::new(seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 || !self.samples.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "sample count must be even and >= 2 for antithetic pairing, got {}",
                self.samples
            )));
        }
        if !(self.hbar > 0.0 && self.hbar < 1.0) {
            return Err(Error::InvalidParameter(format!("hbar must lie in (0, 1), got {}", self.hbar)));
        }
        GaussLegendre::new(self.quad_points).map(|_| ())
    }

    pub fn pairs(&self) -> usize {
        self.samples / 2
    }

    /// True when `h̄ ≪ 1/√M` with `M ≤ 10^4`, where difference quotients oscillate strongly.
    pub fn hbar_too_small(&self) -> bool {
        self.samples <= 10_000 && self.hbar < 0.1 / (self.samples as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples_used: usize,
    /// Samples whose weight underflowed and entered the mean as 0.
    pub flagged: usize,
}

impl WEstimate {
    pub fn flagged_fraction(&self) -> f64 {
        self.flagged as f64 / self.samples_used as f64
    }
}

/// `W = −log(w) / β`.
pub fn value_function_w(estimate: &WEstimate, beta: f64) -> Result<f64> {
    if !(estimate.value > 0.0) {
        return Err(Error::NonPositiveEstimate(estimate.value));
    }
    Ok(-estimate.value.ln() / beta)
}

/// Value of the path functional `H` of one path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathFunctional {
    pub log_value: f64,
    /// `exp(log_value)`, or 0 when flagged.
    pub value: f64,
    pub flagged: bool,
}

impl PathFunctional {
    pub(crate) fn from_log(log_value: f64) -> Self {
        if log_value.is_nan() || log_value < LOG_UNDERFLOW {
            Self { log_value, value: 0.0, flagged: true }
        } else {
            Self { log_value, value: log_value.exp(), flagged: false }
        }
    }
}

/// Everything needed to evaluate `H` along auxiliary paths.
#[derive(Debug, Clone)]
pub struct FeynmanKac<'a> {
    pub params: &'a ModelParams,
    pub payoff: &'a TerminalPayoff,
    pub target: &'a TargetProfile,
    pub beta: f64,
    quad: Vec<(f64, f64)>,
}

impl<'a> FeynmanKac<'a> {
    pub fn new(
        params: &'a ModelParams,
        payoff: &'a TerminalPayoff,
        target: &'a TargetProfile,
        quad_points: usize,
    ) -> Result<Self> {
        let beta = params.beta()?;
        if target.n_spins() != params.n_spins {
            return Err(Error::Dimension(format!(
                "target has {} spins, model has {}",
                target.n_spins(),
                params.n_spins
            )));
        }
        payoff.validate(params.n_spins)?;
        let quad = GaussLegendre::new(quad_points)?.unit_interval();
        Ok(Self { params, payoff, target, beta, quad })
    }

    /// Target values `m̃(t_j)` on the grid of `partition`, indexed by absolute `j`.
    pub fn target_grid(&self, partition: &Partition) -> TargetGrid {
        TargetGrid {
            values: (0..=partition.steps)
                .map(|j| self.target.at(partition.time(j), partition.horizon).into_inner())
                .collect(),
        }
    }

    /// Contribution of `[t_j, t_{j+1}]` given `d_j = m^j − m̃^j` and `d_{j+1}`.
    fn interval_integral(&self, d0: &[f64], d1: &[f64], tau: f64) -> f64 {
        let mut acc = 0.0;
        for &(s, w) in &self.quad {
            let mut sq = 0.0;
            for (a, b) in d0.iter().zip(d1) {
                let v = (1.0 - s) * a + s * b;
                sq += v * v;
            }
            acc += w * sq;
        }
        acc * tau
    }

    /// `∫ ‖𝔪(r) − m̃(r)‖² dr` over the path's partition.
    pub fn running_cost_integral(&self, path: &PathSample) -> f64 {
        let part = path.partition;
        let grid = self.target_grid(&part);
        let tau = part.tau();
        let diff = |k: usize| -> Vec<f64> {
            let j = part.start + k;
            path.states[k].as_slice().iter().zip(&grid.values[j]).map(|(a, b)| a - b).collect()
        };
        (0..path.states.len() - 1).map(|k| self.interval_integral(&diff(k), &diff(k + 1), tau)).sum()
    }

    /// `H = exp(−β h(𝔪(T))) exp(−βδ ∫ ‖𝔪 − m̃‖²)` of a stored path.
    pub fn path_functional(&self, path: &PathSample) -> PathFunctional {
        let part = path.partition;
        let end = self.target.at(part.horizon, part.horizon);
        let integral = if self.params.delta == 0.0 { 0.0 } else { self.running_cost_integral(path) };
        let log_w = self.payoff.log_terminal_w(self.beta, path.last().as_slice(), end.as_slice());
        PathFunctional::from_log(log_w - self.beta * self.params.delta * integral)
    }

    /// `log H` along the auxiliary path from `start`, driven by `sign · walk`, without storing it.
    pub(crate) fn log_h_streaming(
        &self,
        ws: &mut PathWorkspace,
        grid: &TargetGrid,
        partition: &Partition,
        start: &[f64],
        walk: &WalkIncrements,
        sign: f64,
    ) -> f64 {
        let tau = partition.tau();
        let steps = partition.remaining();
        let track = self.params.delta != 0.0;
        let mut integral = 0.0;
        let PathWorkspace { cur, next, scratch, prev, diff } = ws;
        prev.resize(start.len(), 0.0);
        diff.resize(start.len(), 0.0);
        run_auxiliary_path(self.params, start, steps, walk, sign, tau, cur, next, scratch, |r, state| {
            if !track {
                return;
            }
            let target = &grid.values[partition.start + r];
            for ((d, s), t) in diff.iter_mut().zip(state).zip(target) {
                *d = s - t;
            }
            if r > 0 {
                integral += self.interval_integral(prev, diff, tau);
            }
            std::mem::swap(prev, diff);
        });
        let end = &grid.values[partition.steps];
        self.payoff.log_terminal_w(self.beta, cur, end) - self.beta * self.params.delta * integral
    }

    /// Antithetic Monte-Carlo estimate of `w(t_start, m)` on `stream`.
    pub fn estimate_on_stream(
        &self,
        m: &SpinConfiguration,
        partition: &Partition,
        samples: usize,
        stream: StreamKey,
    ) -> Result<WEstimate> {
        if samples < 2 || !samples.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!("sample count must be even and >= 2, got {samples}")));
        }
        if m.n_spins() != self.params.n_spins {
            return Err(Error::Dimension("start configuration does not match the model".into()));
        }
        let grid = self.target_grid(partition);
        let summary = antithetic_pairs(stream, samples / 2, partition.remaining(), m.dim(), partition.tau(), 1, |ws, walk, sign, out| {
            let f = PathFunctional::from_log(self.log_h_streaming(ws, &grid, partition, m.as_slice(), walk, sign));
            out[0] = f.value;
            usize::from(f.flagged)
        });
        let est = WEstimate {
            value: summary.mean[0],
            std_error: summary.std_error[0],
            samples_used: samples,
            flagged: summary.flagged,
        };
        if est.flagged == samples {
            return Err(Error::ValueVanished {
                context: format!("t = {}, all {samples} samples", partition.time(partition.start)),
            });
        }
        Ok(est)
    }
}

/// Grid values of the target profile.
#[derive(Debug, Clone)]
pub struct TargetGrid {
    pub values: Vec<Vec<f64>>,
}

/// Per-thread buffers for streaming path evaluation.
#[derive(Debug, Clone, Default)]
pub struct PathWorkspace {
    cur: Vec<f64>,
    next: Vec<f64>,
    scratch: StepScratch,
    prev: Vec<f64>,
    diff: Vec<f64>,
}

/// Pair-averaged Monte-Carlo statistics.
#[derive(Debug, Clone)]
pub struct PairSummary {
    pub mean: Vec<f64>,
    /// Sample standard deviation of the pair averages over `√pairs`.
    pub std_error: Vec<f64>,
    pub pairs: usize,
    pub flagged: usize,
}

/// Runs `sample(ws, walk, ±1, out)` on both members of `pairs` antithetic pairs.
///
/// Pair `k` uses the walk of sample index `k` on `stream`. Results are reduced
/// in sample order by pairwise summation, so they do not depend on the number
/// of worker threads.
pub fn antithetic_pairs<F>(
    stream: StreamKey,
    pairs: usize,
    steps: usize,
    dims: usize,
    tau: f64,
    width: usize,
    sample: F,
) -> PairSummary
where
    F: Fn(&mut PathWorkspace, &WalkIncrements, f64, &mut [f64]) -> usize + Sync,
{
    let per_pair: Vec<(Vec<f64>, usize)> = (0..pairs)
        .into_par_iter()
        .map_init(
            || (PathWorkspace::default(), WalkIncrements::zeros(0, dims, tau), vec![0.0; width]),
            |(ws, walk, minus), k| {
                walk.fill(stream, k as u64, steps, dims, tau);
                let mut plus = vec![0.0; width];
                let mut flagged = sample(ws, walk, 1.0, &mut plus);
                flagged += sample(ws, walk, -1.0, minus);
                for (p, m) in plus.iter_mut().zip(minus.iter()) {
                    *p = 0.5 * (*p + *m);
                }
                (plus, flagged)
            },
        )
        .collect();
    let flagged = per_pair.iter().map(|(_, f)| f).sum();
    let mut mean = vec![0.0; width];
    let mut std_error = vec![0.0; width];
    let mut column = vec![0.0; pairs];
    for c in 0..width {
        for (dst, (v, _)) in column.iter_mut().zip(&per_pair) {
            *dst = v[c];
        }
        let mu = pairwise_sum(&column) / pairs as f64;
        for x in column.iter_mut() {
            *x = (*x - mu) * (*x - mu);
        }
        mean[c] = mu;
        std_error[c] = if pairs > 1 {
            (pairwise_sum(&column) / (pairs - 1) as f64 / pairs as f64).sqrt()
        } else {
            f64::INFINITY
        };
    }
    PairSummary { mean, std_error, pairs, flagged }
}

/// Fixed-order pairwise (tree) summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        xs.iter().sum()
    } else {
        let (a, b) = xs.split_at(xs.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

/// Index `ℓ` with `t = t_ℓ`, or an error if `t` is off the grid.
pub fn grid_index(partition: &Partition, t: f64) -> Result<usize> {
    let tau = partition.tau();
    let l = (t / tau).round();
    if l < 0.0 || l > partition.steps as f64 || (l * tau - t).abs() > 1e-9 * tau.max(1.0) {
        return Err(Error::InvalidParameter(format!("t = {t} is not a grid time (tau = {tau})")));
    }
    Ok(l as usize)
}

/// Estimates `w(t, m)` at grid time `t` of `partition` with the estimator stream of `cfg`.
pub fn estimate_w(
    params: &ModelParams,
    t: f64,
    m: &SpinConfiguration,
    cfg: &EstimatorConfig,
    payoff: &TerminalPayoff,
    target: &TargetProfile,
    partition: &Partition,
) -> Result<WEstimate> {
    cfg.validate()?;
    let fk = FeynmanKac::new(params, payoff, target, cfg.quad_points)?;
    let l = grid_index(partition, t)?;
    let part = partition.from_index(l)?;
    let stream = cfg.seed.stream(&[namespace::ESTIMATOR, l as u64, u64::MAX]);
    fk.estimate_on_stream(m, &part, cfg.samples, stream)
}
