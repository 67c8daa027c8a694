//! Finite-state continuous-time Markov chain algebra.
//!
//! Conventions: a rate matrix `L` acts on row vectors from the right, so the
//! forward equation is `dx/dt = x L` and an invariant probability solves
//! `pi L = 0`. Functions `f` are column vectors and `L f` is the backward
//! action.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix_io::SquareMatrixJson;
use crate::simplex::{SimplexPoint, WeightedInnerProduct};
use crate::transforms::{ConvexFunction, MonotoneTransform};

/// Default tolerance for algebraic identities.
pub const IDENTITY_TOL: f64 = 1e-10;

/// Generator: nonnegative off-diagonal entries and zero row sums.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SquareMatrixJson", into = "SquareMatrixJson")]
pub struct RateMatrix {
    entries: DMatrix<f64>,
}

impl RateMatrix {
    /// Validates `raw`, absorbing row sums of magnitude at most `tol` into
    /// the diagonal.
    pub fn validate(raw: DMatrix<f64>, tol: f64) -> Result<Self> {
        validate_rate_matrix(raw, tol)
    }

    /// Builds a generator from off-diagonal rates; the diagonal of `rates`
    /// is ignored and refilled.
    pub fn from_off_diagonal(rates: DMatrix<f64>) -> Result<Self> {
        let n = square_dim(&rates)?;
        let mut m = rates;
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                if i != j {
                    if !(m[(i, j)] >= 0.0) || !m[(i, j)].is_finite() {
                        return Err(Error::NegativeOffDiagonal(i, j));
                    }
                    s += m[(i, j)];
                }
            }
            m[(i, i)] = -s;
        }
        Ok(Self { entries: m })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            entries: DMatrix::zeros(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    /// `(x L)_i = sum_j x_j L_ji`.
    pub fn left_apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.entries.tr_mul(x)
    }

    /// Largest exit rate `max_i -L_ii`.
    pub fn max_exit_rate(&self) -> f64 {
        (0..self.dim())
            .map(|i| -self.entries[(i, i)])
            .fold(0.0, f64::max)
    }
}

impl TryFrom<SquareMatrixJson> for RateMatrix {
    type Error = Error;

    fn try_from(j: SquareMatrixJson) -> Result<Self> {
        validate_rate_matrix(j.to_matrix()?, 1e-12)
    }
}

impl From<RateMatrix> for SquareMatrixJson {
    fn from(l: RateMatrix) -> Self {
        SquareMatrixJson::from_matrix(&l.entries)
    }
}

/// Row-stochastic matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SquareMatrixJson", into = "SquareMatrixJson")]
pub struct MarkovMatrix {
    entries: DMatrix<f64>,
}

impl MarkovMatrix {
    /// Entries must be nonnegative with rows summing to 1 within `tol`.
    pub fn validate(raw: DMatrix<f64>, tol: f64) -> Result<Self> {
        let n = square_dim(&raw)?;
        for i in 0..n {
            for j in 0..n {
                if !(raw[(i, j)] >= 0.0) || !raw[(i, j)].is_finite() {
                    return Err(Error::NegativeEntry(i, j));
                }
            }
            let s = raw.row(i).sum();
            if (s - 1.0).abs() > tol {
                return Err(Error::RowSumViolation { row: i, sum: s - 1.0 });
            }
        }
        Ok(Self { entries: raw })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            entries: DMatrix::identity(n, n),
        }
    }

    pub(crate) fn from_matrix_unchecked(entries: DMatrix<f64>) -> Self {
        Self { entries }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.entries.row(i).iter().copied().collect()
    }
}

impl TryFrom<SquareMatrixJson> for MarkovMatrix {
    type Error = Error;

    fn try_from(j: SquareMatrixJson) -> Result<Self> {
        MarkovMatrix::validate(j.to_matrix()?, 1e-12)
    }
}

impl From<MarkovMatrix> for SquareMatrixJson {
    fn from(k: MarkovMatrix) -> Self {
        SquareMatrixJson::from_matrix(&k.entries)
    }
}

fn square_dim(m: &DMatrix<f64>) -> Result<usize> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(m.nrows())
}

fn require_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

pub fn validate_rate_matrix(raw: DMatrix<f64>, tol: f64) -> Result<RateMatrix> {
    let n = square_dim(&raw)?;
    let mut m = raw;
    for i in 0..n {
        for j in 0..n {
            if !m[(i, j)].is_finite() {
                return Err(Error::RowSumViolation {
                    row: i,
                    sum: m[(i, j)],
                });
            }
            if i != j && m[(i, j)] < 0.0 {
                return Err(Error::NegativeOffDiagonal(i, j));
            }
        }
        let s = m.row(i).sum();
        if s.abs() > tol {
            return Err(Error::RowSumViolation { row: i, sum: s });
        }
        m[(i, i)] -= s;
    }
    Ok(RateMatrix { entries: m })
}

/// Strong connectivity of the graph with an edge `i -> j` whenever `L_ij > 0`.
pub fn is_irreducible(l: &RateMatrix) -> bool {
    let n = l.dim();
    let m = l.entries();
    let reach_all = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let w = if forward { m[(i, j)] } else { m[(j, i)] };
                if j != i && w > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach_all(true) && reach_all(false)
}

/// Unique `pi` with `pi L = 0`, by a direct solve of the transposed balance
/// equations with the last one replaced by the normalization.
pub fn invariant_probability(l: &RateMatrix) -> Result<SimplexPoint> {
    if !is_irreducible(l) {
        return Err(Error::NotIrreducible);
    }
    solve_invariant(l)
}

/// Invariant probability without the irreducibility precheck; used on hot
/// paths where irreducibility holds by construction.
pub(crate) fn solve_invariant(l: &RateMatrix) -> Result<SimplexPoint> {
    let n = l.dim();
    let mut a = l.entries().transpose();
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let lu = a.clone().lu();
    let mut pi = lu.solve(&b).ok_or(Error::SingularSystem)?;
    // one step of iterative refinement
    let r = &b - &a * &pi;
    if let Some(d) = lu.solve(&r) {
        pi += d;
    }
    if pi.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    SimplexPoint::project_roundoff(pi, 1e-9).map_err(|_| Error::SingularSystem)
}

/// Detailed balance `|pi_i L_ij - pi_j L_ji| <= tol` for all pairs.
pub fn is_reversible(l: &RateMatrix, pi: &SimplexPoint, tol: f64) -> Result<bool> {
    Ok(reversibility_defect(l, pi)? <= tol)
}

pub fn reversibility_defect(l: &RateMatrix, pi: &SimplexPoint) -> Result<f64> {
    require_dim(l.dim(), pi.dim())?;
    pi.require_interior()?;
    let n = l.dim();
    let m = l.entries();
    let p = pi.coords();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((p[i] * m[(i, j)] - p[j] * m[(j, i)]).abs());
        }
    }
    Ok(worst)
}

/// Adjoint in `<,>_pi`: `L*_ij = pi_j L_ji / pi_i`.
pub fn adjoint(l: &RateMatrix, pi: &SimplexPoint) -> Result<RateMatrix> {
    require_dim(l.dim(), pi.dim())?;
    pi.require_interior()?;
    let p = pi.coords();
    let m = l.entries();
    let n = l.dim();
    let adj = DMatrix::from_fn(n, n, |i, j| p[j] * m[(j, i)] / p[i]);
    // off-diagonal entries are nonnegative by construction; refill the
    // diagonal so rows sum to zero exactly
    RateMatrix::from_off_diagonal(adj)
}

/// `E(f) = -<f, L f>_pi`, cross-checked against
/// `1/2 sum_{i,j} (f_i - f_j)^2 L_ij pi_i`.
pub fn dirichlet_form(l: &RateMatrix, pi: &SimplexPoint, f: &DVector<f64>) -> Result<f64> {
    let (quadratic, inner) = dirichlet_form_routes(l, pi, f)?;
    let scale = l
        .entries()
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max)
        .max(1.0)
        * f.amax().max(1.0).powi(2);
    if (quadratic - inner).abs() > IDENTITY_TOL * scale {
        return Err(Error::FormulaMismatch(format!(
            "Dirichlet form: pairwise {quadratic:e} vs inner product {inner:e}"
        )));
    }
    Ok(quadratic)
}

/// Both evaluation routes of the Dirichlet form: (pairwise sum, `-<f,Lf>_pi`).
pub fn dirichlet_form_routes(
    l: &RateMatrix,
    pi: &SimplexPoint,
    f: &DVector<f64>,
) -> Result<(f64, f64)> {
    require_dim(l.dim(), pi.dim())?;
    require_dim(l.dim(), f.len())?;
    let n = l.dim();
    let m = l.entries();
    let p = pi.coords();
    let mut quadratic = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                quadratic += 0.5 * (f[i] - f[j]).powi(2) * m[(i, j)] * p[i];
            }
        }
    }
    let lf = m * f;
    let inner = -f.iter().zip(lf.iter()).zip(p.iter()).map(|((a, b), w)| a * b * w).sum::<f64>();
    Ok((quadratic, inner))
}

/// Symmetric matrix `D^{-1/2} (D A) D^{-1/2}` with `A = -(L + L*)/2`, whose
/// spectrum is that of the Dirichlet form relative to `<,>_pi`.
fn symmetrized_generator(l: &RateMatrix, pi: &SimplexPoint) -> DMatrix<f64> {
    let n = l.dim();
    let m = l.entries();
    let p = pi.coords();
    DMatrix::from_fn(n, n, |i, j| {
        -(p[i] * m[(i, j)] + p[j] * m[(j, i)]) / (2.0 * (p[i] * p[j]).sqrt())
    })
}

/// Smallest nonzero eigenvalue of the pi-symmetrized generator, the best
/// constant in `E(f) >= lambda Var_pi(f)`.
pub fn spectral_gap(l: &RateMatrix, pi: &SimplexPoint) -> Result<f64> {
    require_dim(l.dim(), pi.dim())?;
    if !is_irreducible(l) {
        return Err(Error::NotIrreducible);
    }
    pi.require_interior()?;
    let n = l.dim();
    if n == 1 {
        return Ok(0.0);
    }
    let eig = SymmetricEigen::new(symmetrized_generator(l, pi));
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.total_cmp(b));
    // the smallest eigenvalue is the zero mode carried by sqrt(pi)
    Ok(vals[1])
}

/// `(lhs, rhs)` of `<x L, s(f)> <= -c_f lambda(L) Var_pi(f)` with
/// `pi = invariant_probability(L)` and `f = x / pi`.
pub fn poincare_inequality_check(
    l: &RateMatrix,
    x: &SimplexPoint,
    s: MonotoneTransform,
) -> Result<(f64, f64)> {
    require_dim(l.dim(), x.dim())?;
    s.validate()?;
    if s.needs_positive() {
        x.require_interior()?;
    }
    let pi = invariant_probability(l)?;
    let lambda = spectral_gap(l, &pi)?;
    let f = x.coords().component_div(pi.coords());
    let c_f = f.iter().map(|&t| s.derivative(t)).fold(f64::INFINITY, f64::min);
    let sf = f.map(|t| s.eval(t));
    let lhs = l.left_apply(x.coords()).dot(&sf);
    let var = WeightedInnerProduct::pi(&pi)?.variance(&f);
    Ok((lhs, -c_f * lambda * var))
}

/// `H^S_pi(x) = sum_i pi_i S(x_i / pi_i)`.
pub fn entropy_functional(pi: &SimplexPoint, s: ConvexFunction, x: &SimplexPoint) -> Result<f64> {
    require_dim(pi.dim(), x.dim())?;
    pi.require_interior()?;
    if s.needs_positive() {
        x.require_interior()?;
    }
    Ok(pi
        .coords()
        .iter()
        .zip(x.coords().iter())
        .map(|(p, xi)| p * s.eval(xi / p))
        .sum())
}

/// Chart-free solve of `w L = u` on the tangent space: returns the unique
/// tangent `w`. Requires irreducible `L`.
pub fn solve_left_tangent(l: &RateMatrix, u: &DVector<f64>) -> Result<DVector<f64>> {
    let n = l.dim();
    require_dim(n, u.len())?;
    // (L^T restricted to the tangent space) in the chart omitting the last
    // coordinate
    let chart = crate::simplex::ChartProjection::last(n);
    let lt = chart.restrict(&l.entries().transpose());
    let y = lt.lu().solve(&chart.project(u)).ok_or(Error::SingularSystem)?;
    Ok(chart.lift(&y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> DMatrix<f64> {
        let n = rows.len();
        DMatrix::from_fn(n, rows[0].len(), |i, j| rows[i][j])
    }

    fn random_generator(rng: &mut ChaCha8Rng, n: usize) -> RateMatrix {
        loop {
            let raw = DMatrix::from_fn(n, n, |i, j| {
                if i != j && rng.random::<f64>() > 0.3 {
                    rng.random::<f64>() * 2.0
                } else {
                    0.0
                }
            });
            let l = RateMatrix::from_off_diagonal(raw).unwrap();
            if is_irreducible(&l) {
                return l;
            }
        }
    }

    fn cycle3() -> RateMatrix {
        RateMatrix::from_off_diagonal(m(&[&[0., 1., 0.], &[0., 0., 1.], &[1., 0., 0.]])).unwrap()
    }

    #[test]
    fn validate_accepts_and_clamps() {
        let l = validate_rate_matrix(m(&[&[-1., 1.], &[1., -1.]]), 1e-12).unwrap();
        assert_eq!(l.entries()[(0, 0)], -1.0);
        let l = validate_rate_matrix(m(&[&[-1., 0.999999999999], &[1., -1.]]), 1e-9).unwrap();
        assert_eq!(l.entries().row(0).sum(), 0.0);
        assert_eq!(l.entries()[(0, 1)], 0.999999999999);
    }

    #[test]
    fn validate_rejects() {
        assert_eq!(
            validate_rate_matrix(m(&[&[-1., -0.5], &[1., -1.]]), 1e-12),
            Err(Error::NegativeOffDiagonal(0, 1))
        );
        assert!(matches!(
            validate_rate_matrix(m(&[&[-1., 0.5], &[1., -1.]]), 1e-12),
            Err(Error::RowSumViolation { row: 0, .. })
        ));
        assert!(matches!(
            validate_rate_matrix(DMatrix::zeros(2, 3), 1e-12),
            Err(Error::NotSquare { .. })
        ));
    }

    #[test]
    fn irreducibility_examples() {
        let two = validate_rate_matrix(m(&[&[-1., 1.], &[1., -1.]]), 0.0).unwrap();
        assert!(is_irreducible(&two));
        let absorbing = validate_rate_matrix(m(&[&[0., 0.], &[1., -1.]]), 0.0).unwrap();
        assert!(!is_irreducible(&absorbing));
        let mut c = DMatrix::zeros(4, 4);
        for i in 0..4 {
            c[(i, (i + 1) % 4)] = 1.0;
        }
        assert!(is_irreducible(&RateMatrix::from_off_diagonal(c).unwrap()));
        assert_eq!(invariant_probability(&absorbing), Err(Error::NotIrreducible));
    }

    #[test]
    fn invariant_probability_examples() {
        let l = validate_rate_matrix(m(&[&[-1., 1.], &[2., -2.]]), 0.0).unwrap();
        let pi = invariant_probability(&l).unwrap();
        assert!((pi.coords()[0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((pi.coords()[1] - 1.0 / 3.0).abs() < 1e-14);

        let sym = RateMatrix::from_off_diagonal(m(&[
            &[0., 0.3, 1.2],
            &[0.3, 0., 0.7],
            &[1.2, 0.7, 0.],
        ]))
        .unwrap();
        let pi = invariant_probability(&sym).unwrap();
        for v in pi.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn reversibility_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let target = crate::simplex::random_simplex_point(&mut rng, 4);
        let w = DMatrix::from_fn(4, 4, |i, j| 1.0 + (i + j) as f64);
        let l = RateMatrix::from_off_diagonal(DMatrix::from_fn(4, 4, |i, j| {
            w[(i, j)] * target.coords()[j]
        }))
        .unwrap();
        assert!(is_reversible(&l, &target, 1e-14).unwrap());

        let c = cycle3();
        let pi = invariant_probability(&c).unwrap();
        assert!(!is_reversible(&c, &pi, 1e-6).unwrap());
        let boundary = SimplexPoint::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            is_reversible(&c, &boundary, 1e-6),
            Err(Error::BoundaryPoint { .. })
        ));
    }

    #[test]
    fn adjoint_of_cycle_is_reversed_cycle() {
        let c = cycle3();
        let adj = adjoint(&c, &SimplexPoint::barycenter(3)).unwrap();
        let expected =
            RateMatrix::from_off_diagonal(m(&[&[0., 0., 1.], &[1., 0., 0.], &[0., 1., 0.]])).unwrap();
        assert!((adj.entries() - expected.entries()).norm() < 1e-15);
    }

    #[test]
    fn adjoint_preserves_invariant_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 2..=6 {
            let l = random_generator(&mut rng, n);
            let pi = invariant_probability(&l).unwrap();
            let adj = adjoint(&l, &pi).unwrap();
            // pi L* = 0 algebraically: (pi L*)_j = sum_i pi_j L_ji = 0
            assert!(adj.left_apply(pi.coords()).amax() < 1e-10);
            let pi2 = invariant_probability(&adj).unwrap();
            assert!(pi.distance(&pi2) < 1e-10);
            // the adjoint of a reversible chain is itself
            let rev = RateMatrix::from_off_diagonal(DMatrix::from_fn(n, n, |i, j| {
                (1.0 + (i * j) as f64) * pi.coords()[j]
            }))
            .unwrap();
            let rev_adj = adjoint(&rev, &pi).unwrap();
            assert!((rev_adj.entries() - rev.entries()).amax() < 1e-12);
        }
    }

    #[test]
    fn dirichlet_form_examples() {
        let l = validate_rate_matrix(m(&[&[-1., 1.], &[1., -1.]]), 0.0).unwrap();
        let pi = SimplexPoint::barycenter(2);
        let e = dirichlet_form(&l, &pi, &DVector::from_vec(vec![1.0, -1.0])).unwrap();
        assert!((e - 2.0).abs() < 1e-15);
        let zero = dirichlet_form(&l, &pi, &DVector::from_element(2, 3.5)).unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn spectral_gap_examples() {
        let l = validate_rate_matrix(m(&[&[-1., 1.], &[1., -1.]]), 0.0).unwrap();
        let gap = spectral_gap(&l, &SimplexPoint::barycenter(2)).unwrap();
        assert!((gap - 2.0).abs() < 1e-12);

        // complete jump to pi: L = -Id + 1 pi^T
        let pi = SimplexPoint::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let jump = DMatrix::from_fn(4, 4, |i, j| pi.coords()[j] - if i == j { 1.0 } else { 0.0 });
        let l = validate_rate_matrix(jump, 1e-14).unwrap();
        assert!((spectral_gap(&l, &pi).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn poincare_at_equilibrium_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let l = random_generator(&mut rng, 4);
        let pi = invariant_probability(&l).unwrap();
        let (lhs, rhs) = poincare_inequality_check(&l, &pi, MonotoneTransform::Log).unwrap();
        assert!(lhs.abs() < 1e-12 && rhs.abs() < 1e-12);
        let boundary = SimplexPoint::new(vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        assert!(matches!(
            poincare_inequality_check(&l, &boundary, MonotoneTransform::Log),
            Err(Error::BoundaryPoint { .. })
        ));
    }

    #[test]
    fn entropy_functional_examples() {
        let half = SimplexPoint::barycenter(2);
        let x = SimplexPoint::new(vec![0.75, 0.25]).unwrap();
        let v = entropy_functional(&half, ConvexFunction::Quadratic, &x).unwrap();
        assert!((v - 0.25).abs() < 1e-15);
        for s in [ConvexFunction::EntropyTLogT, ConvexFunction::Quadratic, ConvexFunction::NegLog] {
            assert!(entropy_functional(&half, s, &half).unwrap().abs() < 1e-15);
        }
        // t log t with uniform pi is KL(x || pi)
        let n = 3;
        let pi = SimplexPoint::barycenter(n);
        let x = SimplexPoint::new(vec![0.98, 0.01, 0.01]).unwrap();
        let kl: f64 = x.as_slice().iter().map(|v| v * (v * n as f64).ln()).sum();
        let h = entropy_functional(&pi, ConvexFunction::EntropyTLogT, &x).unwrap();
        assert!((h - kl).abs() < 1e-14);
        let vertex = SimplexPoint::vertex(3, 0);
        assert!(entropy_functional(&pi, ConvexFunction::NegLog, &vertex).is_err());
        assert!(entropy_functional(&pi, ConvexFunction::EntropyTLogT, &vertex).is_ok());
    }

    #[test]
    fn left_tangent_solve_inverts() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let l = random_generator(&mut rng, 5);
        let u = DVector::from_vec(vec![0.3, -0.1, 0.2, -0.6, 0.2]);
        let w = solve_left_tangent(&l, &u).unwrap();
        assert!(w.sum().abs() < 1e-12);
        assert!((l.left_apply(&w) - &u).amax() < 1e-10);
    }

    #[test]
    fn rate_matrix_json_round_trip() {
        let l = cycle3();
        let s = serde_json::to_string(&l).unwrap();
        assert!(s.starts_with(r#"{"n":3,"entries":"#));
        let back: RateMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, l);
        let bad = r#"{"n":2,"entries":[[-1,-1],[1,-1]]}"#;
        assert!(serde_json::from_str::<RateMatrix>(bad).is_err());
    }
}
