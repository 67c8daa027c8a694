//! Nash equilibria of single-population games: certificates, support
//! enumeration for linear payoffs, classification, and the comparison
//! between logit equilibria at large `beta` and the Nash set.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{find_equilibria, NewtonOptions, Stability};
use crate::error::{Error, Result};
use crate::matrix_io::{self, csv_number};
use crate::numdiff::directional_derivative;
use crate::protocols::{MeasureMap, PayoffSpec, TargetSpec};
use crate::simplex::{random_simplex_point, SimplexPoint};

/// Coordinates at or below this count as zero when reading off a support.
pub const SUPPORT_TOL: f64 = 1e-12;
/// Default tolerance for the Nash inequalities and for strictness.
pub const NASH_TOL: f64 = 1e-9;
/// Condition number above which the extrinsic matrix counts as singular.
pub const NONDEGENERACY_COND: f64 = 1e10;
/// Largest strategy count accepted by [`enumerate_nash`].
pub const MAX_ENUMERATION_DIM: usize = 6;
pub const DEFAULT_BETA_LADDER: [f64; 6] = [1.0, 5.0, 10.0, 25.0, 50.0, 100.0];

const FD_STEP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NashKind {
    Pure,
    FullyMixed,
    PartiallyMixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NashCertificate {
    pub is_nash: bool,
    /// `<U(x), x>`.
    pub average_payoff: f64,
    /// `max_i U_i(x) - <U(x), x>`; positive means a profitable deviation.
    pub max_violation: f64,
    pub best_deviation: usize,
    pub support: Vec<usize>,
    /// `max_{i in support} |U_i(x) - <U(x), x>|`.
    pub support_spread: f64,
    /// `min_{i not in support} <U(x), x> - U_i(x)`, absent for full support.
    pub off_support_gap: Option<f64>,
}

/// `U_i(x) <= <U(x), x> + tol` for every strategy.
pub fn is_nash(payoff: &PayoffSpec, x: &SimplexPoint, tol: f64) -> NashCertificate {
    let u = payoff.eval(x.coords());
    let avg = u.dot(x.coords());
    let (best_deviation, max_u) = u
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc });
    let support = support_of(x);
    let support_spread = support.iter().map(|&i| (u[i] - avg).abs()).fold(0.0, f64::max);
    let off_support_gap = (0..x.dim())
        .filter(|i| !support.contains(i))
        .map(|i| avg - u[i])
        .reduce(f64::min);
    NashCertificate {
        is_nash: max_u - avg <= tol,
        average_payoff: avg,
        max_violation: max_u - avg,
        best_deviation,
        support,
        support_spread,
        off_support_gap,
    }
}

fn support_of(x: &SimplexPoint) -> Vec<usize> {
    (0..x.dim()).filter(|&i| x.coords()[i] > SUPPORT_TOL).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NashPoint {
    pub location: SimplexPoint,
    pub support: Vec<usize>,
    pub kind: NashKind,
    pub strict: bool,
    /// Invertibility of the extrinsic matrix; absent for pure points.
    pub nondegenerate: Option<bool>,
    pub condition_number: Option<f64>,
    /// `[d h_i / d x_j]` with `h_i = U_{s_i} - U_{s_r}` on the support face,
    /// `s_r` the last support index, derivatives along `e_{s_j} - e_{s_r}`.
    #[serde(with = "matrix_io::rows_opt")]
    pub extrinsic_matrix: Option<DMatrix<f64>>,
    /// Number of negative directions of the potential restricted to the
    /// support face, for potential games.
    pub potential_index: Option<usize>,
}

impl NashPoint {
    /// Unstable dimensions allowed for the matching logit equilibrium at
    /// large `beta` in a potential game: `k <= dim <= min(n - r + k, r - 1)`.
    pub fn unstable_dim_bounds(&self) -> Option<(usize, usize)> {
        let k = self.potential_index?;
        let n = self.location.dim();
        let r = self.support.len();
        Some((k, (n - r + k).min(r - 1)))
    }

    /// Whether the large-`beta` results apply: strict pure points and
    /// strict nondegenerate mixed points.
    pub fn is_regular(&self) -> bool {
        self.strict && self.nondegenerate.unwrap_or(true)
    }
}

/// Kind, strictness, nondegeneracy and (for potential games) the
/// restricted potential index of a Nash point.
pub fn classify_nash(payoff: &PayoffSpec, x: &SimplexPoint) -> NashPoint {
    let cert = is_nash(payoff, x, NASH_TOL);
    let n = x.dim();
    let support = cert.support.clone();
    let r = support.len();
    let kind = if r == 1 {
        NashKind::Pure
    } else if r == n {
        NashKind::FullyMixed
    } else {
        NashKind::PartiallyMixed
    };
    let strict = cert.off_support_gap.is_none_or(|g| g >= NASH_TOL);
    let extrinsic = (r > 1).then(|| extrinsic_matrix(payoff, x, &support));
    let condition_number = extrinsic.as_ref().map(condition_number);
    let potential_index = payoff.is_potential().then(|| match &extrinsic {
        // Hess W = -DU, so the restricted Hessian is minus the symmetrized
        // extrinsic matrix.
        Some(e) => {
            let sym = (e + e.transpose()) * 0.5;
            sym.symmetric_eigenvalues().iter().filter(|v| **v > 0.0).count()
        }
        None => 0,
    });
    NashPoint {
        location: x.clone(),
        support,
        kind,
        strict,
        nondegenerate: condition_number.map(|c| c < NONDEGENERACY_COND),
        condition_number,
        extrinsic_matrix: extrinsic,
        potential_index,
    }
}

fn extrinsic_matrix(payoff: &PayoffSpec, x: &SimplexPoint, support: &[usize]) -> DMatrix<f64> {
    let r = support.len();
    let last = support[r - 1];
    let n = x.dim();
    let mut m = DMatrix::zeros(r - 1, r - 1);
    for j in 0..r - 1 {
        let mut d = DVector::zeros(n);
        d[support[j]] = 1.0;
        d[last] = -1.0;
        let du = (payoff.eval(&(x.coords() + &d * FD_STEP)) - payoff.eval(&(x.coords() - &d * FD_STEP))) / (2.0 * FD_STEP);
        for i in 0..r - 1 {
            m[(i, j)] = du[support[i]] - du[last];
        }
    }
    m
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let (lo, hi) = (sv.min(), sv.max());
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// A support whose indifference system is singular. Its solution set is a
/// polytope of Nash points; vertices are listed when its dimension is at
/// most 2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegenerateSupport {
    pub support: Vec<usize>,
    pub dimension: usize,
    pub vertices: Vec<SimplexPoint>,
    pub resolved: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NashEnumeration {
    pub points: Vec<NashPoint>,
    pub degenerate_supports: Vec<DegenerateSupport>,
}

impl NashEnumeration {
    pub fn locations(&self) -> Vec<SimplexPoint> {
        self.points.iter().map(|p| p.location.clone()).collect()
    }

    /// Supports whose solution set was too large to enumerate.
    pub fn unresolved(&self) -> Vec<&DegenerateSupport> {
        self.degenerate_supports.iter().filter(|d| !d.resolved).collect()
    }
}

/// Support enumeration for `U(x) = M x` with at most six strategies.
pub fn enumerate_nash(payoff: &PayoffSpec) -> Result<NashEnumeration> {
    let m = payoff
        .linear_matrix()
        .ok_or_else(|| Error::InvalidParameter("Nash enumeration needs a linear payoff".into()))?;
    let n = m.nrows();
    if n == 0 || n > MAX_ENUMERATION_DIM || m.ncols() != n {
        return Err(Error::InvalidParameter(format!(
            "Nash enumeration supports square payoffs with 1..={MAX_ENUMERATION_DIM} strategies, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let mut candidates = Vec::new();
    let mut degenerate_supports = Vec::new();
    for mask in 1u32..(1 << n) {
        let support: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        match solve_support(&m, &support) {
            SupportSolution::Unique(x) => candidates.push(x),
            SupportSolution::Empty => {}
            SupportSolution::Polytope { dimension, vertices } => {
                let resolved = vertices.is_some();
                let vertices = vertices.unwrap_or_default();
                candidates.extend(vertices.iter().map(|v| v.coords().clone()));
                degenerate_supports.push(DegenerateSupport {
                    support,
                    dimension,
                    vertices,
                    resolved,
                });
            }
        }
    }
    let mut points: Vec<NashPoint> = Vec::new();
    for x in candidates {
        let Ok(x) = SimplexPoint::project_roundoff(x, 1e-10) else {
            continue;
        };
        if !is_nash(payoff, &x, NASH_TOL).is_nash {
            continue;
        }
        if points.iter().all(|p| p.location.distance(&x) > 1e-9) {
            points.push(classify_nash(payoff, &x));
        }
    }
    points.sort_by(|a, b| {
        a.support
            .len()
            .cmp(&b.support.len())
            .then_with(|| a.support.cmp(&b.support))
    });
    Ok(NashEnumeration {
        points,
        degenerate_supports,
    })
}

enum SupportSolution {
    Unique(DVector<f64>),
    Empty,
    /// `vertices` is `None` above dimension 2.
    Polytope {
        dimension: usize,
        vertices: Option<Vec<SimplexPoint>>,
    },
}

/// Solves `(M x)_i = v` for `i` in the support and `sum x = 1`, keeping
/// solutions with `x >= 0` on the support and `(M x)_j <= v` off it.
fn solve_support(m: &DMatrix<f64>, support: &[usize]) -> SupportSolution {
    let n = m.nrows();
    let k = support.len();
    let mut a = DMatrix::zeros(k + 1, k + 1);
    let mut b = DVector::zeros(k + 1);
    for (r, &i) in support.iter().enumerate() {
        for (c, &j) in support.iter().enumerate() {
            a[(r, c)] = m[(i, j)];
        }
        a[(r, k)] = -1.0;
        a[(k, r)] = 1.0;
    }
    b[k] = 1.0;

    // Constraint rows g(z) = c + a.z >= 0 in the variables z = (x_T, v).
    let off: Vec<usize> = (0..n).filter(|j| !support.contains(j)).collect();
    let mut g = DMatrix::zeros(k + off.len(), k + 1);
    for r in 0..k {
        g[(r, r)] = 1.0;
    }
    for (row, &j) in off.iter().enumerate() {
        for (c, &i) in support.iter().enumerate() {
            g[(k + row, c)] = -m[(j, i)];
        }
        g[(k + row, k)] = 1.0;
    }
    let embed = |z: &DVector<f64>| {
        let mut x = DVector::zeros(n);
        for (c, &i) in support.iter().enumerate() {
            x[i] = z[c];
        }
        x
    };

    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let rank_tol = 1e-10 * smax.max(1.0);
    let rank = svd.rank(rank_tol);
    if rank == k + 1 {
        let z = svd.solve(&b, rank_tol).expect("u and v were computed");
        return if (&g * &z).min() >= -1e-12 {
            SupportSolution::Unique(embed(&z))
        } else {
            SupportSolution::Empty
        };
    }
    let z0 = svd.solve(&b, rank_tol).expect("u and v were computed");
    if (&a * &z0 - &b).amax() > 1e-9 {
        return SupportSolution::Empty;
    }
    let v_t = svd.v_t.as_ref().expect("v was computed");
    let null: Vec<DVector<f64>> = (0..k + 1)
        .filter(|&s| svd.singular_values[s] <= rank_tol)
        .map(|s| v_t.row(s).transpose())
        .collect();
    let dimension = null.len();
    if dimension > 2 {
        return SupportSolution::Polytope {
            dimension,
            vertices: None,
        };
    }
    let basis = DMatrix::from_columns(&null);
    let c = &g * &z0;
    let gn = &g * &basis;
    let rows = c.len();
    let mut vertices: Vec<SimplexPoint> = Vec::new();
    let mut try_t = |t: DVector<f64>| {
        if (&c + &gn * &t).min() < -1e-10 {
            return;
        }
        let x = embed(&(&z0 + &basis * &t));
        if let Ok(p) = SimplexPoint::project_roundoff(x, 1e-10) {
            if vertices.iter().all(|q| q.distance(&p) > 1e-9) {
                vertices.push(p);
            }
        }
    };
    for r1 in 0..rows {
        if dimension == 1 {
            if gn[(r1, 0)].abs() > 1e-12 {
                try_t(DVector::from_element(1, -c[r1] / gn[(r1, 0)]));
            }
            continue;
        }
        for r2 in r1 + 1..rows {
            let sys = DMatrix::from_rows(&[gn.row(r1).into_owned(), gn.row(r2).into_owned()]);
            if sys.determinant().abs() <= 1e-12 {
                continue;
            }
            if let Some(t) = sys.lu().solve(&DVector::from_vec(vec![-c[r1], -c[r2]])) {
                try_t(t);
            }
        }
    }
    if vertices.is_empty() {
        SupportSolution::Empty
    } else {
        SupportSolution::Polytope {
            dimension,
            vertices: Some(vertices),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestReplySet {
    pub strategies: Vec<usize>,
    pub max_payoff: f64,
    /// Vertices spanning the face.
    pub face: Vec<SimplexPoint>,
}

/// `{i : U_i(x) >= max_j U_j(x) - tol}` and the face it spans.
pub fn best_reply_set(payoff: &PayoffSpec, x: &SimplexPoint, tol: f64) -> BestReplySet {
    let u = payoff.eval(x.coords());
    let max_payoff = u.max();
    let strategies: Vec<usize> = (0..u.len()).filter(|&i| u[i] >= max_payoff - tol).collect();
    let face = strategies.iter().map(|&i| SimplexPoint::vertex(x.dim(), i)).collect();
    BestReplySet {
        strategies,
        max_payoff,
        face,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrespondenceOptions {
    pub matching_radius: f64,
    /// Radius of the ball on which `sup |D pi_beta|` is sampled around
    /// strict pure Nash points.
    pub contraction_radius: f64,
    pub contraction_samples: usize,
    pub seed: u64,
    pub newton: NewtonOptions,
}

impl Default for CorrespondenceOptions {
    fn default() -> Self {
        Self {
            matching_radius: 0.1,
            contraction_radius: 0.1,
            contraction_samples: 200,
            seed: 0,
            newton: NewtonOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceRow {
    pub beta: f64,
    pub root: SimplexPoint,
    pub residual: f64,
    pub classification: Stability,
    pub unstable_dim: usize,
    /// Index of the nearest Nash point within the matching radius.
    pub nash_id: Option<usize>,
    /// Distance to the nearest Nash point, matched or not.
    pub distance: f64,
    /// Another Nash point also lies within the matching radius.
    pub tie: bool,
    /// Whether `unstable_dim` falls within the bounds predicted by the
    /// restricted potential index; only for hyperbolic roots matched to a
    /// regular Nash point of a potential game.
    pub index_consistent: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionDiagnostic {
    pub beta: f64,
    pub nash_id: usize,
    pub radius: f64,
    /// Largest operator norm of `D pi_beta` on tangent vectors over the
    /// sampled ball.
    pub sup_norm: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceTable {
    pub nash: Vec<NashPoint>,
    pub rows: Vec<CorrespondenceRow>,
    pub contraction: Vec<ContractionDiagnostic>,
}

impl CorrespondenceTable {
    pub fn rows_for(&self, beta: f64) -> impl Iterator<Item = &CorrespondenceRow> {
        self.rows.iter().filter(move |r| r.beta == beta)
    }

    pub fn unmatched(&self) -> usize {
        self.rows.iter().filter(|r| r.nash_id.is_none()).count()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("table serializes")
    }

    /// Header `beta,x1..xn,nash_id,distance,classification`.
    pub fn to_csv(&self) -> String {
        let n = self.rows.first().map_or(0, |r| r.root.dim());
        let mut out = String::from("beta");
        for i in 1..=n {
            out.push_str(&format!(",x{i}"));
        }
        out.push_str(",nash_id,distance,classification\n");
        for r in &self.rows {
            out.push_str(&csv_number(r.beta));
            for v in r.root.as_slice() {
                out.push(',');
                out.push_str(&csv_number(*v));
            }
            let id = r.nash_id.map_or(String::new(), |i| i.to_string());
            let class = serde_json::to_value(r.classification).expect("enum serializes");
            out.push_str(&format!(
                ",{id},{},{}\n",
                csv_number(r.distance),
                class.as_str().unwrap_or_default()
            ));
        }
        out
    }
}

/// For every `beta` in the increasing ladder, finds the zeros of the
/// relaxation field of `factory(beta)` and matches each one to the nearest
/// of the given Nash points.
pub fn beta_correspondence<F, M>(
    nash: &[NashPoint],
    ladder: &[f64],
    factory: F,
    opts: &CorrespondenceOptions,
) -> Result<CorrespondenceTable>
where
    F: Fn(f64) -> Result<M> + Sync,
    M: MeasureMap,
{
    if ladder.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("beta ladder must be increasing".into()));
    }
    // Nash points nudged into the interior supplement the seed grid.
    let seeds: Vec<SimplexPoint> = nash
        .iter()
        .map(|p| {
            let n = p.location.dim();
            let bary = DVector::from_element(n, 1.0 / n as f64);
            SimplexPoint::project_roundoff(p.location.coords() * (1.0 - 1e-3) + bary * 1e-3, 0.0)
                .expect("convex combination")
        })
        .collect();
    let per_beta: Vec<Result<(Vec<CorrespondenceRow>, Vec<ContractionDiagnostic>)>> = ladder
        .par_iter()
        .enumerate()
        .map(|(slot, &beta)| {
            let pi = factory(beta)?;
            let search = find_equilibria(&pi, &seeds, &opts.newton);
            let rows = search.roots.iter().map(|root| {
                let (nash_id, distance, tie) = nearest(nash, &root.location, opts.matching_radius);
                let hyperbolic = root.classification != Stability::Nonhyperbolic;
                let index_consistent = nash_id.and_then(|id| {
                    let p = &nash[id];
                    let (lo, hi) = p.unstable_dim_bounds()?;
                    (hyperbolic && p.is_regular()).then_some(lo <= root.unstable_dim && root.unstable_dim <= hi)
                });
                CorrespondenceRow {
                    beta,
                    root: root.location.clone(),
                    residual: root.residual,
                    classification: root.classification,
                    unstable_dim: root.unstable_dim,
                    nash_id,
                    distance,
                    tie,
                    index_consistent,
                }
            });
            let mut contraction = Vec::new();
            for (id, p) in nash.iter().enumerate() {
                if p.kind == NashKind::Pure && p.strict {
                    let seed = opts.seed ^ ((slot as u64) << 32) ^ id as u64;
                    let sup_norm = sup_derivative_norm(&pi, &p.location, opts.contraction_radius, opts.contraction_samples, seed)?;
                    contraction.push(ContractionDiagnostic {
                        beta,
                        nash_id: id,
                        radius: opts.contraction_radius,
                        sup_norm,
                        samples: opts.contraction_samples,
                    });
                }
            }
            Ok((rows.collect(), contraction))
        })
        .collect();
    let mut table = CorrespondenceTable {
        nash: nash.to_vec(),
        rows: Vec::new(),
        contraction: Vec::new(),
    };
    for entry in per_beta {
        let (rows, contraction) = entry?;
        table.rows.extend(rows);
        table.contraction.extend(contraction);
    }
    Ok(table)
}

/// Enumerates the Nash points of a linear payoff and compares them with
/// the logit equilibria `pi_i ~ exp(beta U_i(x))`.
pub fn logit_correspondence(
    payoff: &PayoffSpec,
    ladder: &[f64],
    opts: &CorrespondenceOptions,
) -> Result<CorrespondenceTable> {
    let enumeration = enumerate_nash(payoff)?;
    let n = enumeration
        .points
        .first()
        .map(|p| p.location.dim())
        .ok_or_else(|| Error::InvalidParameter("payoff has no Nash point".into()))?;
    let factory = |beta: f64| {
        TargetSpec::Logit {
            payoff: payoff.clone(),
            beta,
            factor: Default::default(),
        }
        .build(n)
    };
    beta_correspondence(&enumeration.points, ladder, factory, opts)
}

fn nearest(nash: &[NashPoint], x: &SimplexPoint, radius: f64) -> (Option<usize>, f64, bool) {
    let mut best: Option<(usize, f64)> = None;
    let mut within = 0;
    for (i, p) in nash.iter().enumerate() {
        let d = p.location.distance(x);
        if d <= radius {
            within += 1;
        }
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    match best {
        Some((i, d)) => ((d <= radius).then_some(i), d, within > 1),
        None => (None, f64::INFINITY, false),
    }
}

/// Samples `B(center, radius)` intersected with the simplex and returns the
/// largest operator norm of `D pi` on tangent vectors.
fn sup_derivative_norm(pi: &dyn MeasureMap, center: &SimplexPoint, radius: f64, samples: usize, seed: u64) -> Result<f64> {
    let n = center.dim();
    let f = |x: &SimplexPoint| -> Result<DVector<f64>> { Ok(pi.measure(x)?.into_vector()) };
    // Orthonormal basis of the tangent space.
    let lift = DMatrix::from_fn(n, n - 1, |i, a| {
        if i == a {
            1.0
        } else if i == n - 1 {
            -1.0
        } else {
            0.0
        }
    });
    let q = lift.qr().q();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sup: f64 = 0.0;
    for s in 0..samples.max(1) {
        let x = if s == 0 {
            center.coords().clone()
        } else {
            let y = random_simplex_point(&mut rng, n);
            let dir = y.coords() - center.coords();
            let len = dir.norm();
            let r = radius * rand::Rng::random::<f64>(&mut rng).powf(1.0 / (n - 1) as f64);
            center.coords() + dir * (r / len).min(1.0)
        };
        let mut d = DMatrix::zeros(n, n - 1);
        for a in 0..n - 1 {
            d.set_column(a, &directional_derivative(&f, &x, &q.column(a).into_owned(), FD_STEP)?);
        }
        sup = sup.max(d.singular_values().max());
    }
    Ok(sup)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(rows: usize, entries: &[f64]) -> PayoffSpec {
        PayoffSpec::LinearMatrix {
            matrix: DMatrix::from_row_slice(rows, rows, entries),
        }
    }

    fn pt(v: &[f64]) -> SimplexPoint {
        SimplexPoint::new(v.to_vec()).unwrap()
    }

    #[test]
    fn certificates() {
        let rps = PayoffSpec::rock_paper_scissors();
        let c = is_nash(&rps, &SimplexPoint::barycenter(3), NASH_TOL);
        assert!(c.is_nash && c.support_spread < 1e-15 && c.off_support_gap.is_none());

        let coord = linear(2, &[1., 0., 0., 1.]);
        let c = is_nash(&coord, &pt(&[1.0, 0.0]), NASH_TOL);
        assert!(c.is_nash);
        assert_eq!(c.off_support_gap, Some(1.0));

        // strategy 1 earns 1 against the mix, the mix earns 0.5
        let c = is_nash(&coord, &pt(&[0.0, 1.0]), NASH_TOL);
        assert!(c.is_nash);
        let c = is_nash(&coord, &pt(&[0.25, 0.75]), NASH_TOL);
        assert!(!c.is_nash);
        assert!((c.max_violation - (0.75 - 0.625)).abs() < 1e-15);
        assert_eq!(c.best_deviation, 1);
    }

    #[test]
    fn rps_has_only_the_barycenter() {
        let e = enumerate_nash(&PayoffSpec::rock_paper_scissors()).unwrap();
        assert_eq!(e.points.len(), 1);
        let p = &e.points[0];
        assert!(p.location.distance(&SimplexPoint::barycenter(3)) < 1e-12);
        assert_eq!(p.kind, NashKind::FullyMixed);
        assert_eq!(p.nondegenerate, Some(true));
        // h_0 = x0 - 2 x1 + x2, h_1 = 2 x0 - x1 - x2 along e_j - e_2
        let m = p.extrinsic_matrix.as_ref().unwrap();
        let oracle = DMatrix::from_row_slice(2, 2, &[0., -3., 3., 0.]);
        assert!((m - oracle).amax() < 1e-8);
        assert!(p.potential_index.is_none());
        assert!(e.degenerate_supports.is_empty());
    }

    #[test]
    fn coordination_game() {
        let coord = linear(2, &[1., 0., 0., 1.]);
        let e = enumerate_nash(&coord).unwrap();
        let locs = e.locations();
        assert_eq!(locs.len(), 3);
        for target in [pt(&[1.0, 0.0]), pt(&[0.0, 1.0]), pt(&[0.5, 0.5])] {
            assert!(locs.iter().any(|l| l.distance(&target) < 1e-12));
        }
        for p in &e.points[..2] {
            assert_eq!(p.kind, NashKind::Pure);
            assert!(p.strict);
            assert_eq!(p.nondegenerate, None);
            assert_eq!(p.potential_index, Some(0));
        }
        let mixed = &e.points[2];
        assert_eq!(mixed.kind, NashKind::FullyMixed);
        assert_eq!(mixed.nondegenerate, Some(true));
        // h = U_0 - U_1 = x0 - x1 has derivative 2 along e_0 - e_1
        let m = mixed.extrinsic_matrix.as_ref().unwrap();
        assert!((m[(0, 0)] - 2.0).abs() < 1e-8);
        assert_eq!(mixed.potential_index, Some(1));
        assert_eq!(mixed.unstable_dim_bounds(), Some((1, 1)));
    }

    #[test]
    fn dominant_strategy() {
        // strategy 2 beats everything by at least 1
        let g = linear(3, &[0., 0., 0., 1., 1., 1., 2., 2., 3.]);
        let e = enumerate_nash(&g).unwrap();
        assert_eq!(e.points.len(), 1);
        let p = &e.points[0];
        assert_eq!(p.support, vec![2]);
        assert!(p.strict);
    }

    #[test]
    fn degenerate_supports_use_vertex_enumeration() {
        // constant payoff: the whole simplex is Nash
        let zero = linear(3, &[0.0; 9]);
        let e = enumerate_nash(&zero).unwrap();
        assert!(e.unresolved().is_empty());
        let full = e.degenerate_supports.iter().find(|d| d.support.len() == 3).unwrap();
        assert_eq!(full.dimension, 2);
        assert_eq!(full.vertices.len(), 3);
        assert!(e.points.iter().all(|p| !p.strict || p.kind == NashKind::FullyMixed));

        let big = linear(5, &[0.0; 25]);
        let e = enumerate_nash(&big).unwrap();
        assert!(e.unresolved().iter().any(|d| d.support.len() == 5 && d.dimension == 4));
    }

    #[test]
    fn enumeration_rejects_unsupported_payoffs() {
        assert!(enumerate_nash(&linear(7, &[0.0; 49])).is_err());
        let p = PayoffSpec::from_fn(|x: &DVector<f64>| -x.map(|v| v * v));
        assert!(enumerate_nash(&p).is_err());
    }

    #[test]
    fn best_replies() {
        let rps = PayoffSpec::rock_paper_scissors();
        let b = best_reply_set(&rps, &SimplexPoint::barycenter(3), 1e-12);
        assert_eq!(b.strategies, vec![0, 1, 2]);
        let b = best_reply_set(&rps, &pt(&[1.0, 0.0, 0.0]), 1e-12);
        assert_eq!(b.strategies, vec![1]);
        assert_eq!(b.face, vec![SimplexPoint::vertex(3, 1)]);
        let coord = linear(2, &[1., 0., 0., 1.]);
        let b = best_reply_set(&coord, &pt(&[0.5 + 1e-10, 0.5 - 1e-10]), 1e-9);
        assert_eq!(b.strategies, vec![0, 1]);
    }

    #[test]
    fn ladder_must_increase() {
        let coord = linear(2, &[1., 0., 0., 1.]);
        assert!(logit_correspondence(&coord, &[5.0, 1.0], &CorrespondenceOptions::default()).is_err());
    }
}
