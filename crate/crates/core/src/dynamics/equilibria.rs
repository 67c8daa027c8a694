//! Interior equilibria, tangent-space Jacobians and linear stability.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::VectorFieldSpec;
use crate::error::{Error, Result};
use crate::matrix_io;
use crate::numdiff::{chart_for, chart_jacobian, default_step};
use crate::protocols::MeasureMap;
use crate::simplex::{halton_simplex_points, ChartProjection, SimplexPoint};

/// Eigenvalues with `|Re| <=` this are treated as zero.
pub const HYPERBOLICITY_THRESHOLD: f64 = 1e-7;
/// Residual above which a point is not accepted as an equilibrium.
pub const EQUILIBRIUM_RESIDUAL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stability {
    Sink,
    Source,
    Saddle,
    Nonhyperbolic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub location: SimplexPoint,
    /// `|x - pi(x)|_inf`, or `|F(x)|_inf` for fields without a measure.
    pub residual: f64,
    pub chart: ChartProjection,
    #[serde(with = "matrix_io::rows")]
    pub jacobian: DMatrix<f64>,
    pub jacobian_spectrum: Vec<Eigenvalue>,
    pub unstable_dim: usize,
    pub classification: Stability,
    pub hessian_index: Option<usize>,
}

impl EquilibriumReport {
    pub fn max_imaginary_part(&self) -> f64 {
        self.jacobian_spectrum.iter().map(|e| e.im.abs()).fold(0.0, f64::max)
    }

    pub fn is_hyperbolic(&self) -> bool {
        self.classification != Stability::Nonhyperbolic
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonOptions {
    /// Target `|x - pi(x)|_inf`.
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Roots closer than this are merged.
    pub dedup_radius: f64,
    /// Size of the low-discrepancy seed grid; `10^(n-1)` when absent.
    pub grid_points: Option<usize>,
    pub hyperbolicity_threshold: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 100,
            max_halvings: 30,
            dedup_radius: 1e-6,
            grid_points: None,
            hyperbolicity_threshold: HYPERBOLICITY_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSearch {
    pub roots: Vec<EquilibriumReport>,
    pub seeds_tried: usize,
    pub failed_seeds: usize,
}

impl EquilibriumSearch {
    pub fn locations(&self) -> Vec<SimplexPoint> {
        self.roots.iter().map(|r| r.location.clone()).collect()
    }
}

fn residual_vec(pi: &dyn MeasureMap, x: &SimplexPoint) -> Result<DVector<f64>> {
    Ok(pi.measure(x)?.coords() - x.coords())
}

/// Damped Newton iteration for `pi(x) = x` in the chart dropping the
/// largest coordinate. `None` when the seed does not converge.
fn newton(pi: &dyn MeasureMap, seed: &SimplexPoint, opts: &NewtonOptions) -> Option<(SimplexPoint, f64)> {
    let phi = |x: &SimplexPoint| residual_vec(pi, x);
    let mut x = seed.clone();
    let mut r = phi(&x).ok()?;
    let mut res = r.amax();
    for _ in 0..opts.max_iter {
        if res <= opts.tol {
            return Some((x, res));
        }
        let chart = chart_for(&x);
        let j = chart_jacobian(&phi, &x, &chart, default_step(x.coords())).ok()?;
        let dy = j.lu().solve(&(-chart.project(&r)))?;
        let dx = chart.lift(&dy);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let cand = x.coords() + &dx * t;
            if cand.iter().all(|v| *v > 0.0) {
                let cand = SimplexPoint::from_vector_unchecked(&cand / cand.sum());
                if let Ok(rc) = phi(&cand) {
                    let rn = rc.amax();
                    if rn < res {
                        accepted = Some((cand, rc, rn));
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        let (xn, rn, resn) = accepted?;
        x = xn;
        r = rn;
        res = resn;
    }
    (res <= opts.tol).then_some((x, res))
}

/// Interior zeros of `F_pi(x) = -x + pi(x)` from the given seeds plus a
/// low-discrepancy grid, each classified for the relaxation field.
pub fn find_equilibria(pi: &dyn MeasureMap, seeds: &[SimplexPoint], opts: &NewtonOptions) -> EquilibriumSearch {
    let n = pi.dim();
    if n == 1 {
        let p = SimplexPoint::barycenter(1);
        let f = VectorFieldSpec::explicit(1, false, |_: &SimplexPoint| Ok(DVector::zeros(1)));
        let roots = classify_equilibrium(&f, &p, opts.hyperbolicity_threshold).into_iter().collect();
        return EquilibriumSearch {
            roots,
            seeds_tried: 1,
            failed_seeds: 0,
        };
    }
    let grid = opts
        .grid_points
        .unwrap_or_else(|| 10usize.saturating_pow((n - 1) as u32).min(100_000));
    let mut all: Vec<SimplexPoint> = seeds.iter().filter(|s| s.is_interior()).cloned().collect();
    all.extend(halton_simplex_points(n, grid, 1e-3));
    let results: Vec<Option<(SimplexPoint, f64)>> = all.par_iter().map(|s| newton(pi, s, opts)).collect();

    let failed_seeds = results.iter().filter(|r| r.is_none()).count();
    let mut found: Vec<SimplexPoint> = Vec::new();
    for (x, _) in results.into_iter().flatten() {
        if found.iter().all(|y| y.distance(&x) > opts.dedup_radius) {
            found.push(x);
        }
    }
    let field = PiField(pi);
    let roots = found
        .iter()
        .filter_map(|x| classify_with(&field, x, opts.hyperbolicity_threshold).ok())
        .collect();
    EquilibriumSearch {
        roots,
        seeds_tried: all.len(),
        failed_seeds,
    }
}

/// Borrowed relaxation field, avoiding an `Arc` round trip.
struct PiField<'a>(&'a dyn MeasureMap);

trait Field {
    fn eval(&self, x: &SimplexPoint) -> Result<DVector<f64>>;
    fn residual(&self, x: &SimplexPoint) -> Result<f64>;
}

impl Field for PiField<'_> {
    fn eval(&self, x: &SimplexPoint) -> Result<DVector<f64>> {
        residual_vec(self.0, x)
    }

    fn residual(&self, x: &SimplexPoint) -> Result<f64> {
        Ok(residual_vec(self.0, x)?.amax())
    }
}

impl Field for VectorFieldSpec {
    fn eval(&self, x: &SimplexPoint) -> Result<DVector<f64>> {
        self.eval_raw(x)
    }

    fn residual(&self, x: &SimplexPoint) -> Result<f64> {
        match self.measure(x) {
            Some(pi) => Ok((pi?.coords() - x.coords()).amax()),
            None => Ok(self.eval_raw(x)?.amax()),
        }
    }
}

/// Chart matrix of `DF(p)` by central differences with
/// `h = 1e-6 max(1, |p|)`.
pub fn jacobian(spec: &VectorFieldSpec, p: &SimplexPoint, chart: &ChartProjection) -> Result<DMatrix<f64>> {
    let f = |x: &SimplexPoint| spec.eval_raw(x);
    chart_jacobian(&f, p, chart, default_step(p.coords()))
}

/// Finite-difference Jacobian of a generator field at an equilibrium,
/// together with the factorized form `-L^T(p) DF_pi(p)` on the chart.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianPair {
    pub finite_difference: DMatrix<f64>,
    pub factorized: DMatrix<f64>,
    /// Chart matrix of `-L^T(p)`.
    pub transfer: DMatrix<f64>,
    /// Chart Jacobian of the relaxation field.
    pub relaxation: DMatrix<f64>,
    pub defect: f64,
}

/// Both Jacobian routes at an equilibrium of a generator field; fails with
/// `FormulaMismatch` when they differ by more than `1e-5`.
pub fn jacobian_factorized(spec: &VectorFieldSpec, p: &SimplexPoint, chart: &ChartProjection) -> Result<JacobianPair> {
    let l = spec
        .rate_matrix(p)
        .ok_or_else(|| Error::InvalidParameter("factorized Jacobian needs a generator field".into()))??;
    let pi_field = spec.companion_pi_field().expect("generator fields have a measure");
    let res = Field::residual(spec, p)?;
    if res > EQUILIBRIUM_RESIDUAL {
        return Err(Error::NotAnEquilibrium(res));
    }
    let finite_difference = jacobian(spec, p, chart)?;
    let relaxation = jacobian(&pi_field, p, chart)?;
    let transfer = -chart.restrict(&l.entries().transpose());
    let factorized = &transfer * &relaxation;
    let defect = (&finite_difference - &factorized).amax();
    let scale = finite_difference.amax().max(1.0);
    if defect > 1e-5 * scale {
        return Err(Error::FormulaMismatch(format!(
            "finite-difference and factorized Jacobians differ by {defect:e}"
        )));
    }
    Ok(JacobianPair {
        finite_difference,
        factorized,
        transfer,
        relaxation,
        defect,
    })
}

fn spectrum(j: &DMatrix<f64>) -> Vec<Eigenvalue> {
    if j.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<Eigenvalue> = j
        .complex_eigenvalues()
        .iter()
        .map(|c| Eigenvalue { re: c.re, im: c.im })
        .collect();
    ev.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    ev
}

fn classify_with<F: Field + ?Sized>(field: &F, p: &SimplexPoint, threshold: f64) -> Result<EquilibriumReport> {
    let residual = field.residual(p)?;
    if residual > EQUILIBRIUM_RESIDUAL {
        return Err(Error::NotAnEquilibrium(residual));
    }
    let n = p.dim();
    let chart = if n >= 2 {
        chart_for(p)
    } else {
        ChartProjection { n, drop_index: 0 }
    };
    let j = if n >= 2 {
        let f = |x: &SimplexPoint| field.eval(x);
        chart_jacobian(&f, p, &chart, default_step(p.coords()))?
    } else {
        DMatrix::zeros(0, 0)
    };
    let jacobian_spectrum = spectrum(&j);
    let unstable_dim = jacobian_spectrum.iter().filter(|e| e.re > threshold).count();
    let stable = jacobian_spectrum.iter().filter(|e| e.re < -threshold).count();
    let classification = if unstable_dim + stable < jacobian_spectrum.len() {
        Stability::Nonhyperbolic
    } else if unstable_dim == 0 {
        Stability::Sink
    } else if stable == 0 {
        Stability::Source
    } else {
        Stability::Saddle
    };
    Ok(EquilibriumReport {
        location: p.clone(),
        residual,
        chart,
        jacobian: j,
        jacobian_spectrum,
        unstable_dim,
        classification,
        hessian_index: None,
    })
}

/// Linear stability of `spec` at the equilibrium `p`.
pub fn classify_equilibrium(spec: &VectorFieldSpec, p: &SimplexPoint, threshold: f64) -> Result<EquilibriumReport> {
    classify_with(spec, p, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::is_reversible;
    use crate::protocols::{gibbs_measure, MeasureFromFn, ProtocolSpec, TargetSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gibbs_target(u0: &[f64], u: DMatrix<f64>, beta: f64) -> TargetSpec {
        TargetSpec::Gibbs {
            baseline: DVector::from_vec(u0.to_vec()),
            coupling: u,
            beta,
        }
    }

    #[test]
    fn constant_measure_has_one_sink() {
        let pi = SimplexPoint::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let t = TargetSpec::Constant { pi: pi.clone() }.build(4).unwrap();
        let search = find_equilibria(&t, &[], &NewtonOptions::default());
        assert_eq!(search.roots.len(), 1);
        let r = &search.roots[0];
        assert!(r.location.distance(&pi) < 1e-12);
        assert_eq!(r.classification, Stability::Sink);
        assert_eq!(r.unstable_dim, 0);
        for e in &r.jacobian_spectrum {
            assert!((e.re + 1.0).abs() < 1e-8 && e.im.abs() < 1e-8);
        }
        let f = VectorFieldSpec::pi_field(t);
        let j = jacobian(&f, &pi, &ChartProjection::last(4)).unwrap();
        assert!((j + DMatrix::identity(3, 3)).amax() < 1e-8);
    }

    #[test]
    fn zero_temperature_gibbs_has_softmax_root() {
        let u0 = [0.5, -1.0, 0.2];
        let u = DMatrix::from_row_slice(3, 3, &[1., -2., 0.5, -2., 0., 1., 0.5, 1., 3.]);
        let t = gibbs_target(&u0, u.clone(), 0.0).build(3).unwrap();
        let search = find_equilibria(&t, &[], &NewtonOptions::default());
        assert_eq!(search.roots.len(), 1);
        let expected = gibbs_measure(&DVector::from_vec(u0.to_vec()), &u, 0.0, &SimplexPoint::barycenter(3)).unwrap();
        assert!(search.roots[0].location.distance(&expected) < 1e-12);
    }

    #[test]
    fn generator_and_relaxation_fields_share_roots() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 3;
        let mut u = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = 4.0 * (rng.random::<f64>() - 0.5);
                u[(i, j)] = v;
                u[(j, i)] = v;
            }
        }
        let target = gibbs_target(&[0.0, 0.1, -0.1], u, 5.0);
        let w = DMatrix::from_row_slice(3, 3, &[0., 1., 2., 1., 0., 0.5, 2., 0.5, 0.]);
        let protocol = ProtocolSpec::ReversibleFromTarget {
            weights: w,
            target: target.clone(),
        }
        .build(n)
        .unwrap();
        let gen = VectorFieldSpec::generator(protocol.clone());
        let search = find_equilibria(&protocol, &[], &NewtonOptions::default());
        assert!(!search.roots.is_empty());
        for r in &search.roots {
            let p = &r.location;
            assert!(eval_norm(&gen, p) < 1e-10);
            let pair = jacobian_factorized(&gen, p, &r.chart).unwrap();
            assert!(pair.defect < 1e-6);
            let l = protocol.rate_matrix(p).unwrap();
            assert!(is_reversible(&l, p, 1e-12).unwrap());
            let rep = classify_equilibrium(&gen, p, HYPERBOLICITY_THRESHOLD).unwrap();
            assert!(rep.max_imaginary_part() <= 1e-8);
            assert_eq!(rep.unstable_dim, r.unstable_dim);
        }
    }

    fn eval_norm(f: &VectorFieldSpec, p: &SimplexPoint) -> f64 {
        f.eval_raw(p).unwrap().amax()
    }

    #[test]
    fn factorized_path_requires_equilibrium() {
        let target = gibbs_target(&[0.0, 0.0, 0.0], DMatrix::identity(3, 3), 1.0);
        let p = ProtocolSpec::GibbsDirect { target }.build(3).unwrap();
        let gen = VectorFieldSpec::generator(p);
        let x = SimplexPoint::new(vec![0.7, 0.2, 0.1]).unwrap();
        assert!(matches!(
            jacobian_factorized(&gen, &x, &ChartProjection::last(3)),
            Err(Error::NotAnEquilibrium(_))
        ));
        assert!(matches!(
            classify_equilibrium(&gen, &x, HYPERBOLICITY_THRESHOLD),
            Err(Error::NotAnEquilibrium(_))
        ));
    }

    #[test]
    fn nonconvergent_seeds_are_counted() {
        // pi(x) = x: every point is a fixed point, so Newton converges at
        // once; shifting the residual by a constant has no root at all
        let pi = MeasureFromFn {
            n: 2,
            f: |x: &SimplexPoint| {
                let v = DVector::from_vec(vec![0.5 + 0.4 * x.coords()[0], 0.5 - 0.4 * x.coords()[0]]);
                Ok(SimplexPoint::from_vector_unchecked(v))
            },
        };
        let search = find_equilibria(&pi, &[], &NewtonOptions::default());
        assert_eq!(search.roots.len(), 1);
        assert!((search.roots[0].location.coords()[0] - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(search.failed_seeds, 0);
        assert_eq!(search.seeds_tried, 10);
    }
}
