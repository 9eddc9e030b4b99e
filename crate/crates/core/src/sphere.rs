//! Unit vectors on S^(N-1) and the numerical primitives built on them.
//!
//! Everything here runs in double precision. Seeded randomness goes through
//! [`rng_for`] so that a `(base_seed, index)` pair always names the same stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms below this are treated as zero by [`normalize`].
pub const ZERO_NORM: f64 = 1e-300;

/// Weighted sums below this norm have no well-defined maximiser on the sphere.
pub const DEGENERATE_NORM: f64 = 1e-10;

/// Mixes a base seed with a task index (splitmix64 finaliser).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED69));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_for(base: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, index))
}

/// Standard-normal vector of length `n`.
pub fn gaussian<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `acc += w * v`
pub fn axpy(acc: &mut [f64], w: f64, v: &[f64]) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += w * x;
    }
}

/// A point on the unit sphere in `N >= 2` dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Cosine similarity; see [`cosine`].
    pub fn cos(&self, other: &UnitVector) -> Result<f64> {
        cosine(self, other)
    }

    pub fn antipode(&self) -> UnitVector {
        UnitVector(self.0.iter().map(|x| -x).collect())
    }

    /// Standard basis vector `e_axis`.
    pub fn basis(n: usize, axis: usize) -> Result<UnitVector> {
        if n < 2 {
            return Err(Error::DimensionTooSmall(format!("unit vectors need N >= 2, got {n}")));
        }
        if axis >= n {
            return Err(Error::DimensionMismatch { left: axis + 1, right: n });
        }
        let mut v = vec![0.0; n];
        v[axis] = 1.0;
        Ok(UnitVector(v))
    }
}

impl TryFrom<Vec<f64>> for UnitVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        normalize(&v)
    }
}

impl From<UnitVector> for Vec<f64> {
    fn from(v: UnitVector) -> Self {
        v.0
    }
}

impl AsRef<[f64]> for UnitVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub fn normalize(v: &[f64]) -> Result<UnitVector> {
    if v.len() < 2 {
        return Err(Error::DimensionTooSmall(format!("unit vectors need N >= 2, got {}", v.len())));
    }
    // Scale first so huge or tiny inputs do not over/underflow in the square.
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if !(scale >= ZERO_NORM) || !scale.is_finite() {
        return Err(Error::ZeroVector);
    }
    let scaled: Vec<f64> = v.iter().map(|x| x / scale).collect();
    let n = norm(&scaled);
    if n * scale < ZERO_NORM {
        return Err(Error::ZeroVector);
    }
    Ok(UnitVector(scaled.into_iter().map(|x| x / n).collect()))
}

/// Dot product of two unit vectors, clamped to [-1, 1].
pub fn cosine(a: &UnitVector, b: &UnitVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { left: a.dim(), right: b.dim() });
    }
    Ok(dot(&a.0, &b.0).clamp(-1.0, 1.0))
}

/// Isotropic random direction: a standard-normal draw, normalised.
pub fn random_unit(seed: u64, n: usize) -> Result<UnitVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_unit_from(&mut rng, n)
}

pub fn random_unit_from<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Result<UnitVector> {
    if n < 2 {
        return Err(Error::DimensionTooSmall(format!("unit vectors need N >= 2, got {n}")));
    }
    loop {
        let v = gaussian(rng, n);
        if let Ok(u) = normalize(&v) {
            return Ok(u);
        }
    }
}

/// `M` equiangular unit vectors with pairwise cosine `-1/(M-1)`.
#[derive(Debug, Clone)]
pub struct SimplexFrame {
    pub vertices: Vec<UnitVector>,
    pub pairwise_cosine: f64,
}

impl SimplexFrame {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertex_sum(&self) -> Vec<f64> {
        let n = self.vertices.first().map_or(0, UnitVector::dim);
        let mut sum = vec![0.0; n];
        for v in &self.vertices {
            axpy(&mut sum, 1.0, v.as_slice());
        }
        sum
    }
}

/// Regular simplex from the centred standard basis of R^M.
///
/// The centred vertex `e_j - 1/M` is expressed in the Helmert basis of the
/// hyperplane orthogonal to the all-ones vector, which gives `M - 1`
/// coordinates in closed form; those are padded with zeros up to `n`.
pub fn regular_simplex(m: usize, n: usize) -> Result<SimplexFrame> {
    if m < 2 {
        return Err(Error::ConfigInvalid(format!("a simplex needs at least 2 vertices, got {m}")));
    }
    if n < 2 || m > n + 1 {
        return Err(Error::DimensionTooSmall(format!("{m} simplex vertices do not fit in dimension {n}")));
    }
    let mut vertices = Vec::with_capacity(m);
    for j in 0..m {
        let mut coords = vec![0.0; n];
        // Helmert row k (1-based) has 1/sqrt(k(k+1)) on its first k entries and
        // -k/sqrt(k(k+1)) on entry k; vertex j reads column j of those rows.
        for k in 1..m {
            let s = 1.0 / ((k * (k + 1)) as f64).sqrt();
            coords[k - 1] = if j < k {
                s
            } else if j == k {
                -(k as f64) * s
            } else {
                0.0
            };
        }
        vertices.push(normalize(&coords)?);
    }
    Ok(SimplexFrame { vertices, pairwise_cosine: -1.0 / (m as f64 - 1.0) })
}

/// Linear objective `x . sum_i w_i v_i` over the unit sphere.
#[derive(Debug, Clone, Default)]
pub struct SphereObjective {
    pub terms: Vec<(f64, UnitVector)>,
}

impl SphereObjective {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, weight: f64, v: UnitVector) -> Self {
        self.terms.push((weight, v));
        self
    }

    pub fn dim(&self) -> Option<usize> {
        self.terms.first().map(|(_, v)| v.dim())
    }

    pub fn weighted_sum(&self) -> Result<Vec<f64>> {
        let n = self.dim().ok_or(Error::DegenerateObjective(0.0))?;
        let mut sum = vec![0.0; n];
        for (w, v) in &self.terms {
            if v.dim() != n {
                return Err(Error::DimensionMismatch { left: n, right: v.dim() });
            }
            axpy(&mut sum, *w, v.as_slice());
        }
        Ok(sum)
    }

    pub fn value(&self, x: &UnitVector) -> Result<f64> {
        let sum = self.weighted_sum()?;
        if sum.len() != x.dim() {
            return Err(Error::DimensionMismatch { left: sum.len(), right: x.dim() });
        }
        Ok(dot(&sum, x.as_slice()))
    }

    /// Closed-form maximiser `normalize(sum_i w_i v_i)`.
    pub fn analytic_optimum(&self) -> Result<UnitVector> {
        let sum = self.weighted_sum()?;
        let n = norm(&sum);
        if n < DEGENERATE_NORM {
            return Err(Error::DegenerateObjective(n));
        }
        normalize(&sum)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AscentConfig {
    pub restarts: usize,
    pub steps: usize,
    pub step_size: f64,
    pub seed: u64,
}

impl Default for AscentConfig {
    fn default() -> Self {
        Self { restarts: 4, steps: 2000, step_size: 0.1, seed: 0 }
    }
}

/// Projected gradient ascent: step along the Euclidean gradient, renormalise,
/// keep the best of several seeded restarts.
pub fn sphere_argmax(obj: &SphereObjective, cfg: &AscentConfig) -> Result<UnitVector> {
    let grad = obj.weighted_sum()?;
    let gnorm = norm(&grad);
    if gnorm < DEGENERATE_NORM {
        return Err(Error::DegenerateObjective(gnorm));
    }
    let n = grad.len();
    let mut best: Option<(f64, UnitVector)> = None;
    for r in 0..cfg.restarts.max(1) {
        let mut x = random_unit(derive_seed(cfg.seed, r as u64), n)?.into_inner();
        for _ in 0..cfg.steps {
            axpy(&mut x, cfg.step_size, &grad);
            x = normalize(&x)?.into_inner();
        }
        let x = UnitVector(x);
        let val = dot(&grad, x.as_slice());
        if best.as_ref().is_none_or(|(b, _)| val > *b) {
            best = Some((val, x));
        }
    }
    Ok(best.expect("at least one restart").1)
}
