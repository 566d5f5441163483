//! Physical model and cost data.
//!
//! The effective field of spin `i` is `H_i = −(Q m)_i + C_ext u_i` with
//! `Q = J + D`, where `J` is the exchange matrix and `D` is block-diagonal
//! (anisotropy plus stray field, one diagonal 3×3 block per spin).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{
    add, block, cross, dist_sq, mat_vec, norm, norm_sq, scale, set_block, sigma_block, sub,
    SpinConfiguration, Vec3,
};
use crate::rng::SplitMix64;

/// The symmetric positive semi-definite exchange matrix `J`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExchangeMatrix {
    Zero,
    /// Two spins coupled by `μ (m_1 − m_2, m_2 − m_1)`.
    TwoSpin { mu: f64 },
    /// Periodic chain: `(J m)_i = s (2 m_i − m_{i+1} − m_{i−1})`.
    Ring {
        #[serde(default = "one")]
        strength: f64,
    },
    /// Explicit `3N × 3N` matrix, row-major rows.
    Dense { rows: Vec<Vec<f64>> },
}

fn one() -> f64 {
    1.0
}

impl ExchangeMatrix {
    /// Accumulates `J m` into `out` (which is overwritten).
    pub fn apply_into(&self, m: &[f64], out: &mut [f64]) {
        let n = m.len() / 3;
        match self {
            ExchangeMatrix::Zero => out.fill(0.0),
            ExchangeMatrix::TwoSpin { mu } => {
                for k in 0..3 {
                    let d = m[k] - m[3 + k];
                    out[k] = mu * d;
                    out[3 + k] = -mu * d;
                }
            }
            ExchangeMatrix::Ring { strength } => {
                for i in 0..n {
                    let next = (i + 1) % n;
                    let prev = (i + n - 1) % n;
                    for k in 0..3 {
                        out[3 * i + k] = strength
                            * (2.0 * m[3 * i + k] - m[3 * next + k] - m[3 * prev + k]);
                    }
                }
            }
            ExchangeMatrix::Dense { rows } => {
                for (o, row) in out.iter_mut().zip(rows) {
                    *o = row.iter().zip(m).map(|(a, b)| a * b).sum();
                }
            }
        }
    }

    /// Materializes the matrix for `n_spins` spins, row-major.
    pub fn to_dense(&self, n_spins: usize) -> Vec<f64> {
        let d = 3 * n_spins;
        let mut out = vec![0.0; d * d];
        let mut e = vec![0.0; d];
        let mut col = vec![0.0; d];
        for c in 0..d {
            e.fill(0.0);
            e[c] = 1.0;
            self.apply_into(&e, &mut col);
            for r in 0..d {
                out[r * d + c] = col[r];
            }
        }
        out
    }

    fn validate(&self, n_spins: usize) -> Result<()> {
        let d = 3 * n_spins;
        match self {
            ExchangeMatrix::TwoSpin { mu } => {
                if n_spins != 2 {
                    return Err(Error::Config(format!(
                        "two-spin exchange matrix requires N = 2, got N = {n_spins}"
                    )));
                }
                if !(*mu >= 0.0) {
                    return Err(Error::InvalidParameter(format!("exchange mu must be >= 0, got {mu}")));
                }
            }
            ExchangeMatrix::Ring { strength } => {
                if !(*strength >= 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "ring exchange strength must be >= 0, got {strength}"
                    )));
                }
            }
            ExchangeMatrix::Dense { rows } => {
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(Error::Dimension(format!("dense exchange matrix must be {d}x{d}")));
                }
            }
            ExchangeMatrix::Zero => {}
        }
        let dense = self.to_dense(n_spins);
        for r in 0..d {
            for c in 0..r {
                if (dense[r * d + c] - dense[c * d + r]).abs() > 1e-12 {
                    return Err(Error::InvalidParameter(format!(
                        "exchange matrix is not symmetric at ({r}, {c})"
                    )));
                }
            }
        }
        let min_eig = if n_spins <= 16 {
            let mat = nalgebra::DMatrix::from_row_slice(d, d, &dense);
            nalgebra::SymmetricEigen::new(mat).eigenvalues.min()
        } else {
            sampled_min_rayleigh(&dense, d)
        };
        if min_eig < -1e-10 {
            return Err(Error::InvalidParameter(format!(
                "exchange matrix is not positive semi-definite (eigenvalue {min_eig:e})"
            )));
        }
        Ok(())
    }
}

/// Smallest Rayleigh quotient over a fixed set of pseudo-random directions.
fn sampled_min_rayleigh(dense: &[f64], d: usize) -> f64 {
    let mut rng = SplitMix64::new(0x005e_ed0f_9d5d);
    let mut v = vec![0.0; d];
    let mut best = f64::INFINITY;
    for _ in 0..256 {
        for x in v.iter_mut() {
            *x = rng.next_f64() * 2.0 - 1.0;
        }
        let nn = norm_sq(&v);
        let q: f64 = (0..d)
            .map(|r| v[r] * (0..d).map(|c| dense[r * d + c] * v[c]).sum::<f64>())
            .sum();
        best = best.min(q / nn);
    }
    best
}

/// Physical and cost constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n_spins: usize,
    /// Gilbert damping.
    pub alpha: f64,
    /// Noise intensity.
    pub nu: f64,
    /// Control penalty.
    pub lambda: f64,
    /// Tracking weight.
    pub delta: f64,
    /// External-field coupling.
    pub c_ext: f64,
    /// Time horizon `T`.
    pub horizon: f64,
    /// Diagonals of the blocks `D_i = B_i − A`.
    pub d_blocks: Vec<Vec3>,
    pub exchange: ExchangeMatrix,
}

impl ModelParams {
    /// Isotropic (D = 0), uncoupled (J = 0) model with all constants 1 except those overridden.
    pub fn isotropic(n_spins: usize) -> Self {
        Self {
            n_spins,
            alpha: 1.0,
            nu: 1.0,
            lambda: 1.0,
            delta: 0.0,
            c_ext: 1.0,
            horizon: 1.0,
            d_blocks: vec![[0.0; 3]; n_spins],
            exchange: ExchangeMatrix::Zero,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = |ok: bool, msg: String| if ok { Ok(()) } else { Err(Error::InvalidParameter(msg)) };
        p(self.n_spins >= 1, "need at least one spin".into())?;
        p(self.alpha >= 0.0, format!("alpha must be >= 0, got {}", self.alpha))?;
        p(self.nu >= 0.0, format!("nu must be >= 0, got {}", self.nu))?;
        p(self.lambda > 0.0, format!("lambda must be > 0, got {}", self.lambda))?;
        p(self.delta >= 0.0, format!("delta must be >= 0, got {}", self.delta))?;
        p(self.c_ext > 0.0, format!("c_ext must be > 0, got {}", self.c_ext))?;
        p(self.horizon > 0.0, format!("horizon T must be > 0, got {}", self.horizon))?;
        if self.d_blocks.len() != self.n_spins {
            return Err(Error::Dimension(format!(
                "{} D-blocks given for {} spins",
                self.d_blocks.len(),
                self.n_spins
            )));
        }
        let finite = [self.alpha, self.nu, self.lambda, self.delta, self.c_ext, self.horizon]
            .iter()
            .chain(self.d_blocks.iter().flatten())
            .all(|x| x.is_finite());
        p(finite, "parameters must be finite".into())?;
        self.exchange.validate(self.n_spins)
    }

    /// Hopf-Cole constant `β = C_ext² (1 + α²) / (λ ν²)`.
    pub fn beta(&self) -> Result<f64> {
        if self.nu == 0.0 {
            return Err(Error::NoNoise);
        }
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidParameter(format!("lambda must be > 0, got {}", self.lambda)));
        }
        Ok(self.c_ext * self.c_ext * (1.0 + self.alpha * self.alpha) / (self.lambda * self.nu * self.nu))
    }

    /// True in the regime `λν² ≪ min(δ, 1) C_ext² (1 + α²)` where the Feynman-Kac weights underflow.
    pub fn in_overflow_regime(&self) -> bool {
        let rhs = self.delta.min(1.0) * self.c_ext * self.c_ext * (1.0 + self.alpha * self.alpha);
        self.lambda * self.nu * self.nu < 1e-3 * rhs
    }

    pub fn dim(&self) -> usize {
        3 * self.n_spins
    }

    /// `Q m = J m + D m` into `out`.
    pub fn q_apply_into(&self, m: &[f64], out: &mut [f64]) {
        self.exchange.apply_into(m, out);
        for (i, d) in self.d_blocks.iter().enumerate() {
            for k in 0..3 {
                out[3 * i + k] += d[k] * m[3 * i + k];
            }
        }
    }

    pub fn q_apply(&self, m: &[f64]) -> Vec<f64> {
        assert_eq!(m.len(), self.dim(), "q_apply dimension mismatch");
        let mut out = vec![0.0; m.len()];
        self.q_apply_into(m, &mut out);
        out
    }

    /// Controlled drift `f(m, u) = Σ(m)(−Q m + C_ext u)`.
    pub fn drift_f(&self, m: &SpinConfiguration, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.dim(), "control dimension mismatch");
        let qm = self.q_apply(m.as_slice());
        let mut out = vec![0.0; self.dim()];
        for i in 0..self.n_spins {
            let h = add(&scale(-1.0, &block(&qm, i)), &scale(self.c_ext, &block(u, i)));
            set_block(&mut out, i, &mat_vec(&sigma_block(&m.spin(i), self.alpha), &h));
        }
        out
    }

    /// Auxiliary drift `b(m) = m × Qm − α m × (m × Qm)`.
    pub fn drift_b(&self, m: &SpinConfiguration) -> Vec<f64> {
        let qm = self.q_apply(m.as_slice());
        let mut out = vec![0.0; self.dim()];
        for i in 0..self.n_spins {
            let mi = m.spin(i);
            let p = cross(&mi, &block(&qm, i));
            set_block(&mut out, i, &sub(&p, &scale(self.alpha, &cross(&mi, &p))));
        }
        out
    }

    /// `b(m) = Σ(m) Q m`, evaluated blockwise through the matrix form.
    pub fn drift_b_matrix_form(&self, m: &SpinConfiguration) -> Vec<f64> {
        let qm = self.q_apply(m.as_slice());
        let mut out = vec![0.0; self.dim()];
        for i in 0..self.n_spins {
            set_block(&mut out, i, &mat_vec(&sigma_block(&m.spin(i), self.alpha), &block(&qm, i)));
        }
        out
    }

    /// `ā_i(m) = −(Qm)_i + α m_i × (Qm)_i` at an arbitrary point of (R^3)^N.
    pub fn abar(&self, m: &[f64], i: usize) -> Vec3 {
        let qm = self.q_apply(m);
        abar_block(self.alpha, &block(m, i), &block(&qm, i))
    }

    /// `a_i(m, u) = H_i − α m_i × H_i` with `H_i = −(Qm)_i + C_ext u_i`.
    pub fn a_ctrl(&self, m: &[f64], u: &[f64], i: usize) -> Vec3 {
        let qm = self.q_apply(m);
        a_ctrl_block(self.alpha, self.c_ext, &block(m, i), &block(&qm, i), &block(u, i))
    }

    /// `L(m, u) = δ ‖m − m̃‖² + (λ/2) ‖u‖²`.
    pub fn lagrangian(&self, m: &SpinConfiguration, u: &[f64], mtilde: &SpinConfiguration) -> f64 {
        self.delta * dist_sq(m.as_slice(), mtilde.as_slice()) + 0.5 * self.lambda * norm_sq(u)
    }
}

#[inline]
pub(crate) fn abar_block(alpha: f64, mi: &Vec3, qmi: &Vec3) -> Vec3 {
    let c = cross(mi, qmi);
    [
        -qmi[0] + alpha * c[0],
        -qmi[1] + alpha * c[1],
        -qmi[2] + alpha * c[2],
    ]
}

#[inline]
pub(crate) fn a_ctrl_block(alpha: f64, c_ext: f64, mi: &Vec3, qmi: &Vec3, ui: &Vec3) -> Vec3 {
    let h = [
        -qmi[0] + c_ext * ui[0],
        -qmi[1] + c_ext * ui[1],
        -qmi[2] + c_ext * ui[2],
    ];
    sub(&h, &scale(alpha, &cross(mi, &h)))
}

/// Per-spin component of a switching target profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpinTarget {
    Fixed(Vec3),
    /// `(−cos(πt/T), sin(πt/T), 0)`: rotation from `−e_1` to `e_1` through `e_2`.
    Switch,
}

/// Deterministic reference profile `m̃(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TargetProfile {
    Constant { spins: Vec<Vec3> },
    RotatingSwitch { spins: Vec<SpinTarget> },
    /// Piecewise-affine in time between the given states, renormalized per spin.
    Tabulated { times: Vec<f64>, states: Vec<Vec<Vec3>> },
}

impl TargetProfile {
    pub fn n_spins(&self) -> usize {
        match self {
            TargetProfile::Constant { spins } => spins.len(),
            TargetProfile::RotatingSwitch { spins } => spins.len(),
            TargetProfile::Tabulated { states, .. } => states.first().map_or(0, Vec::len),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |spins: &[Vec3]| SpinConfiguration::from_spins(spins).map(|_| ());
        match self {
            TargetProfile::Constant { spins } => check(spins),
            TargetProfile::RotatingSwitch { spins } => {
                for s in spins {
                    if let SpinTarget::Fixed(v) = s {
                        check(&[*v])?;
                    }
                }
                Ok(())
            }
            TargetProfile::Tabulated { times, states } => {
                if times.is_empty() || times.len() != states.len() {
                    return Err(Error::Config("tabulated target needs one state per time".into()));
                }
                if times.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::Config("tabulated target times must increase".into()));
                }
                let n = states[0].len();
                for s in states {
                    if s.len() != n {
                        return Err(Error::Dimension("tabulated target states differ in N".into()));
                    }
                    check(s)?;
                }
                Ok(())
            }
        }
    }

    /// `m̃(t)` for a problem with horizon `horizon`.
    pub fn at(&self, t: f64, horizon: f64) -> SpinConfiguration {
        match self {
            TargetProfile::Constant { spins } => {
                SpinConfiguration::from_trusted(spins.iter().flatten().copied().collect())
            }
            TargetProfile::RotatingSwitch { spins } => {
                let phase = std::f64::consts::PI * t / horizon;
                let data = spins
                    .iter()
                    .flat_map(|s| match s {
                        SpinTarget::Fixed(v) => *v,
                        SpinTarget::Switch => [-phase.cos(), phase.sin(), 0.0],
                    })
                    .collect();
                SpinConfiguration::from_trusted(data)
            }
            TargetProfile::Tabulated { times, states } => {
                let flat = |k: usize| -> Vec<f64> { states[k].iter().flatten().copied().collect() };
                if t <= times[0] {
                    return SpinConfiguration::from_trusted(flat(0));
                }
                let last = times.len() - 1;
                if t >= times[last] {
                    return SpinConfiguration::from_trusted(flat(last));
                }
                let k = times.partition_point(|&s| s <= t) - 1;
                let theta = (t - times[k]) / (times[k + 1] - times[k]);
                let a = flat(k);
                let b = flat(k + 1);
                let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (1.0 - theta) * x + theta * y).collect();
                // antipodal neighbours would make the chord pass through 0
                SpinConfiguration::normalized(mix).expect("tabulated target passes through the origin")
            }
        }
    }
}

/// Terminal payoff `h`, or equivalently the terminal datum `w(T, ·) = exp(−β h)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TerminalPayoff {
    /// `h ≡ 0`.
    Zero,
    /// `h(m) = weight ‖m − m̃(T)‖²`.
    QuadraticTracking { weight: f64 },
    /// `w(T, m) = scale (m_{1,3} + 2)`.
    LogSphericalHarmonic1Spin {
        #[serde(default = "one")]
        scale: f64,
    },
    /// `w(T, m) = scale (m_{1,3} + m_{2,3} + 2)`.
    LogSphericalHarmonic2Spin {
        #[serde(default = "one")]
        scale: f64,
    },
    /// `w(T, m) = offset + ⟨coeffs, m⟩`, positive on the whole manifold.
    AffineW { offset: f64, coeffs: Vec<f64> },
}

impl TerminalPayoff {
    pub fn validate(&self, n_spins: usize) -> Result<()> {
        match self {
            TerminalPayoff::Zero => Ok(()),
            TerminalPayoff::QuadraticTracking { weight } => {
                if *weight >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!("tracking weight must be >= 0, got {weight}")))
                }
            }
            TerminalPayoff::LogSphericalHarmonic1Spin { scale }
            | TerminalPayoff::LogSphericalHarmonic2Spin { scale } => {
                let need = if matches!(self, TerminalPayoff::LogSphericalHarmonic1Spin { .. }) { 1 } else { 2 };
                if n_spins != need {
                    return Err(Error::Config(format!("payoff requires N = {need}, got {n_spins}")));
                }
                if *scale > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!("payoff scale must be > 0, got {scale}")))
                }
            }
            TerminalPayoff::AffineW { offset, coeffs } => {
                if coeffs.len() != 3 * n_spins {
                    return Err(Error::Dimension(format!("affine payoff needs {} coefficients", 3 * n_spins)));
                }
                let worst: f64 = (0..n_spins).map(|i| norm(&block(coeffs, i))).sum();
                if offset - worst > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "affine payoff must stay positive on the manifold (min value {})",
                        offset - worst
                    )))
                }
            }
        }
    }

    /// `log w(T, m) = −β h(m)`. May be `−∞` where the terminal datum vanishes.
    pub fn log_terminal_w(&self, beta: f64, m: &[f64], mtilde_end: &[f64]) -> f64 {
        match self {
            TerminalPayoff::Zero => 0.0,
            TerminalPayoff::QuadraticTracking { weight } => -beta * weight * dist_sq(m, mtilde_end),
            TerminalPayoff::LogSphericalHarmonic1Spin { scale } => (scale * (m[2] + 2.0)).ln(),
            TerminalPayoff::LogSphericalHarmonic2Spin { scale } => (scale * (m[2] + m[5] + 2.0)).ln(),
            TerminalPayoff::AffineW { offset, coeffs } => {
                (offset + coeffs.iter().zip(m).map(|(a, b)| a * b).sum::<f64>()).ln()
            }
        }
    }

    /// `h(m)`; for kinds given through `w(T, ·)` this is `−log(w(T, m)) / β`.
    pub fn value(&self, beta: f64, m: &[f64], mtilde_end: &[f64]) -> f64 {
        match self {
            TerminalPayoff::QuadraticTracking { weight } => weight * dist_sq(m, mtilde_end),
            TerminalPayoff::Zero => 0.0,
            _ => -self.log_terminal_w(beta, m, mtilde_end) / beta,
        }
    }
}

/// Convenience: `⟨a, b⟩` over flat vectors.
pub fn inner(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
