//! Dense algebra on (R^3)^N and on the product of spheres (S^2)^N.
//!
//! Spin configurations are stored as one flat array of `3N` reals; spin `i`
//! occupies `[3i, 3i + 3)`. The block-diagonal operator `Σ(m)` is never
//! materialized as a `3N × 3N` matrix, only its 3×3 blocks.

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

/// Tolerance on `|‖m_i‖ − 1|` for membership in S^2.
pub const UNIT_TOL: f64 = 1e-12;

#[inline]
pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn add(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(s: f64, a: &Vec3) -> Vec3 {
    [s * a[0], s * a[1], s * a[2]]
}

#[inline]
pub fn mat_vec(m: &Mat3, v: &Vec3) -> Vec3 {
    [dot(&m[0], v), dot(&m[1], v), dot(&m[2], v)]
}

/// Block `i` of a flat `(R^3)^N` slice.
#[inline]
pub fn block(v: &[f64], i: usize) -> Vec3 {
    [v[3 * i], v[3 * i + 1], v[3 * i + 2]]
}

#[inline]
pub fn set_block(v: &mut [f64], i: usize, b: &Vec3) {
    v[3 * i..3 * i + 3].copy_from_slice(b);
}

/// Squared Euclidean norm of a flat `(R^3)^N` vector.
pub fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Squared distance `‖a − b‖²` of two flat vectors of equal length.
pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The skew matrix `σ(m)` with `σ(m) v = m × v`.
pub fn cross_matrix(m: &Vec3) -> Mat3 {
    [
        [0.0, -m[2], m[1]],
        [m[2], 0.0, -m[0]],
        [-m[1], m[0], 0.0],
    ]
}

/// The drift block `Σ(m) = (Id − α σ(m)) σ(m)`.
///
/// For unit `m` this equals `σ(m) + α (Id − m ⊗ m)`.
pub fn sigma_block(m: &Vec3, alpha: f64) -> Mat3 {
    let s = cross_matrix(m);
    let mut out = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            let mut ss = 0.0;
            for k in 0..3 {
                ss += s[r][k] * s[k][c];
            }
            out[r][c] = s[r][c] - alpha * ss;
        }
    }
    out
}

/// A point on (S^2)^N.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinConfiguration {
    data: Vec<f64>,
}

impl SpinConfiguration {
    /// Builds a configuration from a flat array, checking every block is a unit vector.
    pub fn new(data: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(data, UNIT_TOL)
    }

    pub fn with_tolerance(data: Vec<f64>, tol: f64) -> Result<Self> {
        if data.is_empty() || !data.len().is_multiple_of(3) {
            return Err(Error::Dimension(format!(
                "spin configuration needs a positive multiple of 3 entries, got {}",
                data.len()
            )));
        }
        if let Some(x) = data.iter().find(|x| !x.is_finite()) {
            return Err(Error::NotOnManifold(format!("non-finite component {x}")));
        }
        let cfg = Self { data };
        let dev = cfg.max_norm_deviation();
        if dev > tol {
            return Err(Error::NotOnManifold(format!(
                "spin norm deviates from 1 by {dev:e} (tolerance {tol:e})"
            )));
        }
        Ok(cfg)
    }

    pub fn from_spins(spins: &[Vec3]) -> Result<Self> {
        Self::new(spins.iter().flatten().copied().collect())
    }

    /// Normalizes every block explicitly. Fails on a (near) zero block.
    pub fn normalized(mut data: Vec<f64>) -> Result<Self> {
        if data.is_empty() || !data.len().is_multiple_of(3) {
            return Err(Error::Dimension(format!(
                "spin configuration needs a positive multiple of 3 entries, got {}",
                data.len()
            )));
        }
        for i in 0..data.len() / 3 {
            let b = block(&data, i);
            let n = norm(&b);
            if !(n > 1e-8) || !n.is_finite() {
                return Err(Error::NotOnManifold(format!(
                    "block {i} has norm {n:e}, cannot renormalize"
                )));
            }
            set_block(&mut data, i, &scale(1.0 / n, &b));
        }
        Ok(Self { data })
    }

    /// Wraps data produced by a norm-preserving map. Checked in debug builds only.
    pub(crate) fn from_trusted(data: Vec<f64>) -> Self {
        let cfg = Self { data };
        debug_assert!(cfg.max_norm_deviation() < 1e-9, "left the manifold");
        cfg
    }

    /// All spins equal to `v` (normalized).
    pub fn uniform(n: usize, v: Vec3) -> Result<Self> {
        Self::normalized(std::iter::repeat_n(v, n).flatten().collect())
    }

    pub fn n_spins(&self) -> usize {
        self.data.len() / 3
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn spin(&self, i: usize) -> Vec3 {
        block(&self.data, i)
    }

    pub fn spins(&self) -> impl Iterator<Item = Vec3> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.data
    }

    /// `max_i |‖m_i‖ − 1|`.
    pub fn max_norm_deviation(&self) -> f64 {
        self.spins().map(|s| (norm(&s) - 1.0).abs()).fold(0.0, f64::max)
    }
}

/// A vector in the tangent space at some configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub components: Vec<f64>,
}

impl TangentVector {
    pub fn block(&self, i: usize) -> Vec3 {
        block(&self.components, i)
    }

    /// `max_i |⟨v_i, m_i⟩|` against a base configuration.
    pub fn max_normal_component(&self, base: &SpinConfiguration) -> f64 {
        (0..base.n_spins())
            .map(|i| dot(&self.block(i), &base.spin(i)).abs())
            .fold(0.0, f64::max)
    }
}

/// Blockwise `v_i − ⟨v_i, m_i⟩ m_i`.
pub fn tangent_project(m: &SpinConfiguration, v: &[f64]) -> TangentVector {
    assert_eq!(m.dim(), v.len(), "dimension mismatch in tangent_project");
    let mut out = v.to_vec();
    for i in 0..m.n_spins() {
        let mi = m.spin(i);
        let vi = block(v, i);
        let p = sub(&vi, &scale(dot(&vi, &mi), &mi));
        set_block(&mut out, i, &p);
    }
    TangentVector { components: out }
}

/// Sign of a one-sided stencil perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn as_f64(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// Replaces spin `i` by `(m_i ± h̄ e_l) / ‖m_i ± h̄ e_l‖`; indices are zero-based.
pub fn perturb_renormalized(
    m: &SpinConfiguration,
    i: usize,
    l: usize,
    hbar: f64,
    sign: Sign,
) -> SpinConfiguration {
    assert!(i < m.n_spins() && l < 3, "stencil index out of range");
    assert!(hbar > 0.0 && hbar < 1.0, "stencil width must lie in (0, 1)");
    let mut data = m.as_slice().to_vec();
    let mut b = m.spin(i);
    b[l] += sign.as_f64() * hbar;
    let n = norm(&b);
    assert!(n >= 1e-8, "degenerate stencil point");
    set_block(&mut data, i, &scale(1.0 / n, &b));
    SpinConfiguration { data }
}
