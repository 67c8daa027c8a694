//! Points of the probability simplex, tangent vectors, weighted inner
//! products and the coordinate charts used for Jacobians.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the coordinate sum of simplex points and tangent vectors.
pub const SUM_TOL: f64 = 1e-12;

/// A probability vector over `n` strategies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexPoint {
    coords: DVector<f64>,
}

impl SimplexPoint {
    /// Validates nonnegativity and a unit coordinate sum.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        Self::from_vector(DVector::from_vec(coords))
    }

    pub fn from_vector(coords: DVector<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::NotInSimplex("empty vector".into()));
        }
        if let Some((i, v)) = coords
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::NotInSimplex(format!("coordinate {i} is {v}")));
        }
        let sum = coords.sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::NotInSimplex(format!("coordinates sum to {sum}")));
        }
        Ok(Self { coords })
    }

    /// Clamps negative roundoff of magnitude at most `clamp_tol` to zero and
    /// renormalizes. Larger excursions are rejected.
    pub fn project_roundoff(mut v: DVector<f64>, clamp_tol: f64) -> Result<Self> {
        for (i, c) in v.iter_mut().enumerate() {
            if !c.is_finite() {
                return Err(Error::NotInSimplex(format!("coordinate {i} is {c}")));
            }
            if *c < 0.0 {
                if *c < -clamp_tol {
                    return Err(Error::NotInSimplex(format!("coordinate {i} is {c:e}")));
                }
                *c = 0.0;
            }
        }
        let s = v.sum();
        if s <= 0.0 {
            return Err(Error::NotInSimplex("zero vector".into()));
        }
        v /= s;
        Ok(Self { coords: v })
    }

    /// Normalizes an arbitrary positive weight vector.
    pub fn from_weights(w: DVector<f64>) -> Result<Self> {
        Self::project_roundoff(w, 0.0)
    }

    pub(crate) fn from_vector_unchecked(coords: DVector<f64>) -> Self {
        Self { coords }
    }

    pub fn barycenter(n: usize) -> Self {
        Self {
            coords: DVector::from_element(n, 1.0 / n as f64),
        }
    }

    pub fn vertex(n: usize, i: usize) -> Self {
        let mut coords = DVector::zeros(n);
        coords[i] = 1.0;
        Self { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }

    pub fn as_slice(&self) -> &[f64] {
        self.coords.as_slice()
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.coords
    }

    /// Indices of strictly positive coordinates.
    pub fn support(&self) -> Vec<usize> {
        self.coords
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn is_interior(&self) -> bool {
        self.coords.iter().all(|v| *v > 0.0)
    }

    pub fn min_coord(&self) -> f64 {
        self.coords.min()
    }

    /// Fails with `BoundaryPoint` on the first zero coordinate.
    pub fn require_interior(&self) -> Result<()> {
        match self.coords.iter().enumerate().find(|(_, v)| **v <= 0.0) {
            Some((index, value)) => Err(Error::BoundaryPoint {
                index,
                value: *value,
            }),
            None => Ok(()),
        }
    }

    pub fn distance(&self, other: &SimplexPoint) -> f64 {
        (&self.coords - &other.coords).norm()
    }
}

impl TryFrom<Vec<f64>> for SimplexPoint {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        SimplexPoint::new(v)
    }
}

impl From<SimplexPoint> for Vec<f64> {
    fn from(p: SimplexPoint) -> Vec<f64> {
        p.coords.as_slice().to_vec()
    }
}

/// A vector with zero coordinate sum.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    coords: DVector<f64>,
}

impl TangentVector {
    pub fn new(coords: DVector<f64>) -> Result<Self> {
        let scale = coords.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        let sum = coords.sum();
        if !sum.is_finite() || sum.abs() > SUM_TOL * scale {
            return Err(Error::NotTangent(sum));
        }
        Ok(Self { coords })
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.coords
    }

    pub fn norm(&self) -> f64 {
        self.coords.norm()
    }
}

/// `<f, g>_w = sum_i f_i g_i w_i` for strictly positive finite weights.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedInnerProduct {
    weights: DVector<f64>,
}

impl WeightedInnerProduct {
    pub fn new(weights: DVector<f64>) -> Result<Self> {
        if let Some((i, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(w.is_finite() && **w > 0.0))
        {
            return Err(Error::InvalidParameter(format!(
                "weight {i} must be positive and finite, got {w}"
            )));
        }
        Ok(Self { weights })
    }

    /// `<,>_pi`.
    pub fn pi(pi: &SimplexPoint) -> Result<Self> {
        pi.require_interior()?;
        Self::new(pi.coords().clone())
    }

    /// `<,>_{1/pi}`.
    pub fn inverse_pi(pi: &SimplexPoint) -> Result<Self> {
        pi.require_interior()?;
        Self::new(pi.coords().map(|v| 1.0 / v))
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn inner(&self, f: &DVector<f64>, g: &DVector<f64>) -> f64 {
        f.iter()
            .zip(g.iter())
            .zip(self.weights.iter())
            .map(|((a, b), w)| a * b * w)
            .sum()
    }

    /// `Var_w(f) = <f - <f,1>_w, f - <f,1>_w>_w` (weights summing to one).
    pub fn variance(&self, f: &DVector<f64>) -> f64 {
        let mean = self.inner(f, &DVector::from_element(f.len(), 1.0));
        f.iter()
            .zip(self.weights.iter())
            .map(|(v, w)| (v - mean).powi(2) * w)
            .sum()
    }
}

/// Linear chart of the tangent space obtained by omitting one coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChartProjection {
    pub n: usize,
    pub drop_index: usize,
}

impl ChartProjection {
    pub fn new(n: usize, drop_index: usize) -> Result<Self> {
        if n < 2 || drop_index >= n {
            return Err(Error::InvalidParameter(format!(
                "chart drop index {drop_index} invalid for n = {n}"
            )));
        }
        Ok(Self { n, drop_index })
    }

    /// Omits the last coordinate, the convention `(u1, u2, u3) -> (u1, u2)`.
    pub fn last(n: usize) -> Self {
        Self {
            n,
            drop_index: n - 1,
        }
    }

    pub fn chart_dim(&self) -> usize {
        self.n - 1
    }

    /// Maps a tangent vector to chart coordinates.
    pub fn project(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.n - 1,
            (0..self.n).filter(|&i| i != self.drop_index).map(|i| u[i]),
        )
    }

    /// Inverse of `project` on the tangent space.
    pub fn lift(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut u = DVector::zeros(self.n);
        let mut k = 0;
        for i in 0..self.n {
            if i != self.drop_index {
                u[i] = y[k];
                k += 1;
            }
        }
        u[self.drop_index] = -y.sum();
        u
    }

    /// Tangent basis vector `e_a - e_drop` for chart index `a`.
    pub fn basis_vector(&self, a: usize) -> DVector<f64> {
        let mut y = DVector::zeros(self.n - 1);
        y[a] = 1.0;
        self.lift(&y)
    }

    /// n x (n-1) matrix whose columns are the tangent basis vectors.
    pub fn lift_matrix(&self) -> DMatrix<f64> {
        let mut e = DMatrix::zeros(self.n, self.n - 1);
        for a in 0..self.n - 1 {
            e.set_column(a, &self.basis_vector(a));
        }
        e
    }

    /// (n-1) x n coordinate selection matrix.
    pub fn project_matrix(&self) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(self.n - 1, self.n);
        let mut k = 0;
        for i in 0..self.n {
            if i != self.drop_index {
                p[(k, i)] = 1.0;
                k += 1;
            }
        }
        p
    }

    /// Chart matrix of a linear map `T` of R^n that preserves the tangent space.
    pub fn restrict(&self, t: &DMatrix<f64>) -> DMatrix<f64> {
        self.project_matrix() * t * self.lift_matrix()
    }
}

/// Euclidean projection onto the simplex (sorted-threshold algorithm).
pub fn project_onto_simplex(v: &DVector<f64>) -> SimplexPoint {
    let n = v.len();
    let mut sorted: Vec<f64> = v.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    let mut x = v.map(|c| (c - theta).max(0.0));
    let s = x.sum();
    if s > 0.0 {
        x /= s;
    } else {
        x = DVector::from_element(n, 1.0 / n as f64);
    }
    SimplexPoint::from_vector_unchecked(x)
}

/// Maps a point of the unit cube `[0,1)^{n-1}` to the simplex using sorted
/// spacings. Uniform inputs give uniform simplex points.
pub fn cube_to_simplex(u: &[f64]) -> DVector<f64> {
    let n = u.len() + 1;
    let mut cuts: Vec<f64> = u.to_vec();
    cuts.sort_by(|a, b| a.total_cmp(b));
    let mut x = DVector::zeros(n);
    let mut prev = 0.0;
    for (i, c) in cuts.iter().enumerate() {
        x[i] = c - prev;
        prev = *c;
    }
    x[n - 1] = 1.0 - prev;
    x
}

/// Radical inverse of `index` in the given prime base.
fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += (index % base) as f64 * f;
        index /= base;
        f *= inv;
    }
    r
}

const PRIMES: [u64; 10] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29];

/// `count` low-discrepancy interior points of the n-simplex (Halton points
/// pushed through `cube_to_simplex`, then shrunk towards the barycenter by
/// `shrink` so that every coordinate is positive).
pub fn halton_simplex_points(n: usize, count: usize, shrink: f64) -> Vec<SimplexPoint> {
    assert!(n >= 2 && n - 1 <= PRIMES.len(), "unsupported dimension {n}");
    let bary = DVector::from_element(n, 1.0 / n as f64);
    (1..=count as u64)
        .map(|k| {
            let u: Vec<f64> = PRIMES[..n - 1]
                .iter()
                .map(|&b| radical_inverse(k, b))
                .collect();
            let x = cube_to_simplex(&u) * (1.0 - shrink) + &bary * shrink;
            SimplexPoint::project_roundoff(x, 1e-15).expect("convex combination stays in simplex")
        })
        .collect()
}

/// Uniform random point of the simplex.
pub fn random_simplex_point<R: rand::Rng + ?Sized>(rng: &mut R, n: usize) -> SimplexPoint {
    let u: Vec<f64> = (0..n - 1).map(|_| rng.random::<f64>()).collect();
    SimplexPoint::project_roundoff(cube_to_simplex(&u), 1e-15).expect("spacings are nonnegative")
}

/// Uniform random point of `{x in simplex : min_i x_i >= delta}`.
pub fn random_point_with_margin<R: rand::Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    delta: f64,
) -> SimplexPoint {
    assert!(delta * n as f64 <= 1.0);
    let y = random_simplex_point(rng, n);
    let x = y.coords() * (1.0 - n as f64 * delta) + DVector::from_element(n, delta);
    SimplexPoint::project_roundoff(x, 1e-15).expect("affine image stays in simplex")
}
