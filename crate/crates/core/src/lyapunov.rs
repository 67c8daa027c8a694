//! Lyapunov functions `V` with `alpha(x) <h^s(x), u> = <grad V(x), u>` on
//! the tangent space, where `h^s(x) = s(x / pi(x))`, together with the
//! numerical checks that go with them.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{classify_equilibrium, Stability, VectorFieldSpec, HYPERBOLICITY_THRESHOLD};
use crate::error::{Error, Result};
use crate::markov::{is_irreducible, reversibility_defect, solve_left_tangent, RateMatrix};
use crate::matrix_io;
use crate::numdiff::{chart_for, directional_derivative, mixed_second_derivative};
use crate::protocols::{Callable, MeasureMap, PayoffSpec, StrategyFactor, TargetSpec};
use crate::simplex::{ChartProjection, SimplexPoint};
use crate::transforms::{smooth_step, MonotoneTransform};

/// Step for derivatives of `pi` and of `V` used by the Hessian routes.
pub const HESSIAN_STEP: f64 = 1e-5;
/// Finite-difference step for second derivatives of `V`.
const SECOND_DIFF_STEP: f64 = 1e-4;
/// Agreement required between finite-difference checks and closed forms.
pub const FD_CHECK_TOL: f64 = 1e-5;

pub type ScalarFn = dyn Fn(&SimplexPoint) -> Result<f64> + Send + Sync;
pub type GradientFn = dyn Fn(&SimplexPoint) -> Result<DVector<f64>> + Send + Sync;

/// First-difference step, shrunk near faces where derivatives blow up.
fn local_step(x: &SimplexPoint) -> f64 {
    HESSIAN_STEP.min(1e-3 * x.min_coord())
}

fn tangent_part(v: DVector<f64>) -> DVector<f64> {
    let mean = v.mean();
    v.map(|c| c - mean)
}

/// `s(x_i / pi_i(x))` componentwise.
pub fn transform_h(pi: &dyn MeasureMap, s: MonotoneTransform, x: &SimplexPoint) -> Result<DVector<f64>> {
    x.require_interior()?;
    let p = pi.measure(x)?;
    p.require_interior()?;
    Ok(x.coords().zip_map(p.coords(), |a, b| s.eval(a / b)))
}

/// `sum x_i log x_i + <U0, x> + beta/2 x^T U x`.
pub fn free_energy(baseline: &DVector<f64>, coupling: &DMatrix<f64>, beta: f64, x: &SimplexPoint) -> Result<f64> {
    x.require_interior()?;
    let c = x.coords();
    Ok(entropy(c) + baseline.dot(c) + 0.5 * beta * c.dot(&(coupling * c)))
}

fn entropy(c: &DVector<f64>) -> f64 {
    c.iter().map(|v| v * v.ln()).sum()
}

/// `sum x_i log x_i - sum int_1^{x_i} log f_i + beta W(x)` for a potential
/// game with potential `W`, `U = -grad W`.
pub fn potential_game_v(
    factor: &StrategyFactor,
    payoff: &PayoffSpec,
    beta: f64,
    x: &SimplexPoint,
) -> Result<f64> {
    x.require_interior()?;
    let c = x.coords();
    let w = payoff
        .potential_value(c)
        .ok_or_else(|| Error::InvalidParameter("payoff has no known potential".into()))?;
    let integrals: f64 = (0..c.len()).map(|i| factor.log_integral(i, c[i])).sum();
    Ok(entropy(c) - integrals + beta * w)
}

/// `-sum_ij A_ij x_i^g x_j^g`, defined on the whole simplex.
pub fn reinforcement_v(a: &DMatrix<f64>, gamma: f64, x: &SimplexPoint) -> f64 {
    let xg = x.coords().map(|v| v.max(0.0).powf(gamma));
    -xg.dot(&(a * &xg))
}

/// Companion `alpha` of the reinforcement function: `sum_j x_j dW/dx_j`,
/// which equals `2 gamma W(x)`.
pub fn reinforcement_alpha(a: &DMatrix<f64>, gamma: f64, x: &SimplexPoint) -> f64 {
    -2.0 * gamma * reinforcement_v(a, gamma, x)
}

/// User-supplied Lyapunov data. A missing gradient is replaced by finite
/// differences of `value`; a missing `alpha` means `alpha = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct CustomLyapunov {
    pub value: Callable<ScalarFn>,
    pub gradient: Option<Callable<GradientFn>>,
    pub alpha: Option<Callable<ScalarFn>>,
    pub transform: MonotoneTransform,
    pub target: TargetSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LyapunovSpec {
    /// Free energy of a Gibbs target; `s = log`, `alpha = 1`.
    FreeEnergy {
        #[serde(with = "matrix_io::vector")]
        baseline: DVector<f64>,
        #[serde(with = "matrix_io::rows")]
        coupling: DMatrix<f64>,
        beta: f64,
    },
    /// Logit target of a potential game; `s = log`, `alpha = 1`.
    PotentialGame {
        payoff: PayoffSpec,
        beta: f64,
        #[serde(default)]
        factor: StrategyFactor,
    },
    /// Fixed target `pi`: `V = sum pi_i S(x_i / pi_i)` with `S' = s`.
    ConstantTarget { pi: SimplexPoint, transform: MonotoneTransform },
    /// `V = -sum A_ij x_i^g x_j^g`, `s(t) = -1/t`, `alpha = 2 g W`.
    Reinforcement {
        #[serde(with = "matrix_io::rows")]
        a: DMatrix<f64>,
        gamma: f64,
    },
    #[serde(skip)]
    Custom(CustomLyapunov),
}

impl LyapunovSpec {
    /// The Lyapunov function attached to a target family, when one is known.
    pub fn from_target(target: &TargetSpec) -> Option<Self> {
        match target {
            TargetSpec::Gibbs {
                baseline,
                coupling,
                beta,
            } => Some(LyapunovSpec::FreeEnergy {
                baseline: baseline.clone(),
                coupling: coupling.clone(),
                beta: *beta,
            }),
            TargetSpec::Logit { payoff, beta, factor } if payoff.is_potential() => Some(LyapunovSpec::PotentialGame {
                payoff: payoff.clone(),
                beta: *beta,
                factor: factor.clone(),
            }),
            TargetSpec::Constant { pi } => Some(LyapunovSpec::ConstantTarget {
                pi: pi.clone(),
                transform: MonotoneTransform::Log,
            }),
            TargetSpec::VertexReinforcement { a, gamma } => Some(LyapunovSpec::Reinforcement {
                a: a.clone(),
                gamma: *gamma,
            }),
            _ => None,
        }
    }

    pub fn target(&self) -> TargetSpec {
        match self {
            LyapunovSpec::FreeEnergy {
                baseline,
                coupling,
                beta,
            } => TargetSpec::Gibbs {
                baseline: baseline.clone(),
                coupling: coupling.clone(),
                beta: *beta,
            },
            LyapunovSpec::PotentialGame { payoff, beta, factor } => TargetSpec::Logit {
                payoff: payoff.clone(),
                beta: *beta,
                factor: factor.clone(),
            },
            LyapunovSpec::ConstantTarget { pi, .. } => TargetSpec::Constant { pi: pi.clone() },
            LyapunovSpec::Reinforcement { a, gamma } => TargetSpec::VertexReinforcement {
                a: a.clone(),
                gamma: *gamma,
            },
            LyapunovSpec::Custom(c) => c.target.clone(),
        }
    }

    pub fn transform(&self) -> MonotoneTransform {
        match self {
            LyapunovSpec::FreeEnergy { .. } | LyapunovSpec::PotentialGame { .. } => MonotoneTransform::Log,
            LyapunovSpec::ConstantTarget { transform, .. } => *transform,
            LyapunovSpec::Reinforcement { .. } => MonotoneTransform::NegReciprocal,
            LyapunovSpec::Custom(c) => c.transform,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        self.target().validate(n)?;
        self.transform().validate()?;
        if let LyapunovSpec::PotentialGame { payoff, .. } = self {
            if !payoff.is_potential() {
                return Err(Error::InvalidParameter("payoff has no known potential".into()));
            }
        }
        Ok(())
    }

    pub fn measure(&self, x: &SimplexPoint) -> Result<SimplexPoint> {
        self.target().measure(x)
    }

    pub fn value(&self, x: &SimplexPoint) -> Result<f64> {
        match self {
            LyapunovSpec::FreeEnergy {
                baseline,
                coupling,
                beta,
            } => free_energy(baseline, coupling, *beta, x),
            LyapunovSpec::PotentialGame { payoff, beta, factor } => potential_game_v(factor, payoff, *beta, x),
            LyapunovSpec::ConstantTarget { pi, transform } => {
                x.require_interior()?;
                Ok((0..x.dim())
                    .map(|i| pi.coords()[i] * antiderivative(*transform, x.coords()[i] / pi.coords()[i]))
                    .sum())
            }
            LyapunovSpec::Reinforcement { a, gamma } => Ok(reinforcement_v(a, *gamma, x)),
            LyapunovSpec::Custom(c) => c.value.0(x),
        }
    }

    /// Tangent-space gradient of `V` (coordinates sum to zero).
    pub fn gradient(&self, x: &SimplexPoint) -> Result<DVector<f64>> {
        let c = x.coords();
        let full = match self {
            LyapunovSpec::FreeEnergy {
                baseline,
                coupling,
                beta,
            } => {
                x.require_interior()?;
                c.map(|v| v.ln() + 1.0) + baseline + (coupling * c) * *beta
            }
            LyapunovSpec::PotentialGame { payoff, beta, factor } => {
                x.require_interior()?;
                let grad_w = payoff
                    .potential_gradient(c)
                    .ok_or_else(|| Error::InvalidParameter("payoff has no known potential".into()))?;
                DVector::from_fn(c.len(), |i, _| c[i].ln() + 1.0 - factor.ln_eval(i, c[i]) + beta * grad_w[i])
            }
            LyapunovSpec::ConstantTarget { pi, transform } => {
                x.require_interior()?;
                c.zip_map(pi.coords(), |a, b| transform.eval(a / b))
            }
            LyapunovSpec::Reinforcement { a, gamma } => {
                let xg = c.map(|v| v.max(0.0).powf(*gamma));
                let axg = a * &xg;
                DVector::from_fn(c.len(), |i, _| {
                    -2.0 * gamma * c[i].max(0.0).powf(gamma - 1.0) * axg[i]
                })
            }
            LyapunovSpec::Custom(cl) => match &cl.gradient {
                Some(g) => g.0(x)?,
                None => fd_gradient(&|y: &SimplexPoint| cl.value.0(y), x)?,
            },
        };
        Ok(tangent_part(full))
    }

    pub fn alpha(&self, x: &SimplexPoint) -> Result<f64> {
        match self {
            LyapunovSpec::Reinforcement { a, gamma } => Ok(reinforcement_alpha(a, *gamma, x)),
            LyapunovSpec::Custom(CustomLyapunov { alpha: Some(f), .. }) => f.0(x),
            _ => Ok(1.0),
        }
    }

    /// `h^s(x) = s(x / pi(x))`.
    pub fn h(&self, x: &SimplexPoint) -> Result<DVector<f64>> {
        x.require_interior()?;
        let p = self.measure(x)?;
        p.require_interior()?;
        let s = self.transform();
        Ok(x.coords().zip_map(p.coords(), |a, b| s.eval(a / b)))
    }
}

/// `S` with `S' = s`.
fn antiderivative(s: MonotoneTransform, t: f64) -> f64 {
    match s {
        MonotoneTransform::Log => t * t.ln(),
        MonotoneTransform::Identity => 0.5 * t * t,
        MonotoneTransform::NegReciprocal => -t.ln(),
        MonotoneTransform::NegPower { beta } => {
            let e = 1.0 - 1.0 / beta;
            if e.abs() < 1e-12 {
                -t.ln()
            } else {
                -t.powf(e) / e
            }
        }
    }
}

/// Tangent gradient from chart finite differences of a scalar map.
fn fd_gradient(f: &dyn Fn(&SimplexPoint) -> Result<f64>, x: &SimplexPoint) -> Result<DVector<f64>> {
    let n = x.dim();
    let chart = chart_for(x);
    let g = |y: &SimplexPoint| f(y).map(|v| DVector::from_element(1, v));
    let h = local_step(x);
    let d: Vec<f64> = (0..n - 1)
        .map(|a| directional_derivative(&g, x.coords(), &chart.basis_vector(a), h).map(|v| v[0]))
        .collect::<Result<_>>()?;
    // <g, e_i - e_d> = d_a with sum g = 0
    let gd = -d.iter().sum::<f64>() / n as f64;
    let mut out = DVector::from_element(n, gd);
    let mut k = 0;
    for i in 0..n {
        if i != chart.drop_index {
            out[i] = d[k] + gd;
            k += 1;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckStatus {
    Consistent,
    Violated,
    NotApplicable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuasigradientViolation {
    pub sample: usize,
    /// Index `a` of the tangent direction `e_a - e_n`.
    pub direction: usize,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuasigradientReport {
    pub samples: usize,
    pub skipped: usize,
    pub tol: f64,
    /// `max |alpha <h, u> - <grad V, u>|`.
    pub max_violation: f64,
    pub violations: Vec<QuasigradientViolation>,
    /// `max |<grad V, u> - dV/du|` with the derivative by finite differences.
    pub gradient_fd_defect: f64,
    /// Largest cyclic sum `d_j g_i + d_k g_j + d_i g_k - d_k g_i - d_j g_k
    /// - d_i g_j` of `g = alpha h`, relative to the size of its derivatives.
    pub cyclic_defect: f64,
    pub integrability: CheckStatus,
    pub passed: bool,
}

struct SampleCheck {
    worst: f64,
    violations: Vec<QuasigradientViolation>,
    fd_defect: f64,
    cyclic: f64,
}

fn check_sample(spec: &LyapunovSpec, x: &SimplexPoint, idx: usize, tol: f64) -> Result<SampleCheck> {
    let n = x.dim();
    let alpha = spec.alpha(x)?;
    let h = spec.h(x)?;
    let grad = spec.gradient(x)?;
    let chart = ChartProjection::last(n);
    let v = |y: &SimplexPoint| spec.value(y).map(|v| DVector::from_element(1, v));
    let mut worst = 0.0f64;
    let mut fd_defect = 0.0f64;
    let mut violations = Vec::new();
    for a in 0..n - 1 {
        let u = chart.basis_vector(a);
        let lhs = alpha * h.dot(&u);
        let rhs = grad.dot(&u);
        let d = (lhs - rhs).abs();
        worst = worst.max(d);
        if !(d <= tol) {
            violations.push(QuasigradientViolation {
                sample: idx,
                direction: a,
                lhs,
                rhs,
            });
        }
        let dv = directional_derivative(&v, x.coords(), &u, local_step(x))?[0];
        fd_defect = fd_defect.max((dv - rhs).abs() / rhs.abs().max(1.0));
    }
    let cyclic = if n >= 3 { cyclic_defect(spec, x)? } else { 0.0 };
    Ok(SampleCheck {
        worst,
        violations,
        fd_defect,
        cyclic,
    })
}

/// The cyclic identity only involves differences of partial derivatives,
/// which are derivatives along the edge directions `e_j - e_k`:
/// `(D_{e_j-e_k} g)_i + (D_{e_k-e_i} g)_j + (D_{e_i-e_j} g)_k`.
fn cyclic_defect(spec: &LyapunovSpec, x: &SimplexPoint) -> Result<f64> {
    let n = x.dim();
    let g = |y: &SimplexPoint| Ok(spec.h(y)? * spec.alpha(y)?);
    let mut edge = vec![vec![DVector::zeros(n); n]; n];
    let mut scale = 0.0f64;
    for j in 0..n {
        for k in j + 1..n {
            let mut dir = DVector::zeros(n);
            dir[j] = 1.0;
            dir[k] = -1.0;
            let d = directional_derivative(&g, x.coords(), &dir, local_step(x))?;
            scale = scale.max(d.amax());
            edge[k][j] = -&d;
            edge[j][k] = d;
        }
    }
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let c = edge[j][k][i] + edge[k][i][j] + edge[i][j][k];
                worst = worst.max(c.abs());
            }
        }
    }
    Ok(worst / scale.max(1.0))
}

/// Checks `alpha <h^s, u> = <grad V, u>` along the chart basis at every
/// interior sample, the supplied gradient against finite differences of
/// `V`, and the cyclic integrability criterion for `alpha h^s`.
pub fn quasigradient_check(spec: &LyapunovSpec, samples: &[SimplexPoint], tol: f64) -> QuasigradientReport {
    let results: Vec<Option<SampleCheck>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            if x.is_interior() && x.dim() >= 2 {
                check_sample(spec, x, i, tol).ok()
            } else {
                None
            }
        })
        .collect();
    let mut report = QuasigradientReport {
        samples: samples.len(),
        skipped: 0,
        tol,
        max_violation: 0.0,
        violations: Vec::new(),
        gradient_fd_defect: 0.0,
        cyclic_defect: 0.0,
        integrability: CheckStatus::NotApplicable,
        passed: true,
    };
    for r in results {
        match r {
            Some(c) => {
                report.max_violation = report.max_violation.max(c.worst);
                report.gradient_fd_defect = report.gradient_fd_defect.max(c.fd_defect);
                report.cyclic_defect = report.cyclic_defect.max(c.cyclic);
                report.violations.extend(c.violations);
            }
            None => report.skipped += 1,
        }
    }
    let n = samples.first().map_or(0, |s| s.dim());
    if n >= 3 && report.skipped < report.samples {
        report.integrability = if report.cyclic_defect <= FD_CHECK_TOL {
            CheckStatus::Consistent
        } else {
            CheckStatus::Violated
        };
    }
    report.passed = report.violations.is_empty()
        && report.gradient_fd_defect <= FD_CHECK_TOL
        && report.integrability != CheckStatus::Violated
        && report.skipped < report.samples;
    report
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleReport {
    pub delta: f64,
    pub samples_in_compact: usize,
    /// Samples with `|F| <= 1e-9`, excluded from the estimates.
    pub near_equilibria: usize,
    /// Minimum of `-<grad V, F>` over the remaining samples.
    pub min_decrease_margin: f64,
    /// Minimum of `-<grad V, F> / (|grad V| |F|)`.
    pub angle_constant: f64,
    /// Samples where `<grad V, F> >= 0` although `F != 0`.
    pub increases: usize,
    pub worst_point: Option<SimplexPoint>,
}

impl AngleReport {
    pub fn passed(&self) -> bool {
        self.increases == 0 && self.angle_constant > 0.0
    }
}

/// Uniform points of `{x : min_i x_i >= delta}`.
pub fn sample_compact<R: rand::Rng + ?Sized>(rng: &mut R, n: usize, delta: f64, count: usize) -> Vec<SimplexPoint> {
    let shrink = 1.0 - n as f64 * delta;
    (0..count)
        .map(|_| {
            let y = crate::simplex::random_simplex_point(rng, n);
            SimplexPoint::from_vector_unchecked(y.coords().map(|v| delta + shrink * v))
        })
        .collect()
}

/// Decrease and angle condition of `V` along `field` over the samples lying
/// in `{min_i x_i >= delta}`.
pub fn decrease_and_angle(
    spec: &LyapunovSpec,
    field: &VectorFieldSpec,
    delta: f64,
    samples: &[SimplexPoint],
) -> Result<AngleReport> {
    let inside: Vec<&SimplexPoint> = samples.iter().filter(|x| x.min_coord() >= delta).collect();
    let vals: Vec<(f64, f64, f64)> = inside
        .par_iter()
        .map(|x| {
            let g = spec.gradient(x)?;
            let f = field.eval_raw(x)?;
            Ok((g.dot(&f), g.norm(), f.norm()))
        })
        .collect::<Result<_>>()?;
    let mut report = AngleReport {
        delta,
        samples_in_compact: inside.len(),
        near_equilibria: 0,
        min_decrease_margin: f64::INFINITY,
        angle_constant: f64::INFINITY,
        increases: 0,
        worst_point: None,
    };
    for (x, (dot, ng, nf)) in inside.iter().zip(vals) {
        if nf <= 1e-9 {
            report.near_equilibria += 1;
            continue;
        }
        if dot >= 0.0 {
            report.increases += 1;
        }
        report.min_decrease_margin = report.min_decrease_margin.min(-dot);
        let cos = if ng > 0.0 { -dot / (ng * nf) } else { 0.0 };
        if cos < report.angle_constant {
            report.angle_constant = cos;
            report.worst_point = Some((*x).clone());
        }
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

/// Bilinear form on the tangent space in the basis `e_i - e_d` of a chart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BilinearFormReport {
    pub chart: ChartProjection,
    #[serde(with = "matrix_io::rows")]
    pub matrix: DMatrix<f64>,
    /// `max |M - M^T|`; the matrix itself is left as computed.
    pub symmetry_defect: f64,
    /// Eigenvalues of the symmetric part, ascending.
    pub eigenvalues: Vec<f64>,
    pub signature: Signature,
    /// Largest gap to an independently computed matrix, when one exists.
    pub cross_check_defect: Option<f64>,
}

impl BilinearFormReport {
    fn from_matrix(chart: ChartProjection, matrix: DMatrix<f64>) -> Self {
        let symmetry_defect = (&matrix - matrix.transpose()).amax();
        let sym = (&matrix + matrix.transpose()) * 0.5;
        let mut eigenvalues: Vec<f64> = if sym.nrows() == 0 {
            Vec::new()
        } else {
            sym.symmetric_eigenvalues().iter().copied().collect()
        };
        eigenvalues.sort_by(f64::total_cmp);
        let zero_tol = HYPERBOLICITY_THRESHOLD * eigenvalues.iter().fold(1.0f64, |m, e| m.max(e.abs()));
        let signature = Signature {
            positive: eigenvalues.iter().filter(|e| **e > zero_tol).count(),
            negative: eigenvalues.iter().filter(|e| **e < -zero_tol).count(),
            zero: eigenvalues.iter().filter(|e| e.abs() <= zero_tol).count(),
        };
        Self {
            chart,
            matrix,
            symmetry_defect,
            eigenvalues,
            signature,
            cross_check_defect: None,
        }
    }

    /// Number of negative directions.
    pub fn index(&self) -> usize {
        self.signature.negative
    }

    pub fn is_nondegenerate(&self) -> bool {
        self.signature.zero == 0
    }

    pub fn is_positive_definite(&self) -> bool {
        self.signature.positive == self.matrix.nrows()
    }

    /// `B(u, v)` for tangent vectors given in full coordinates.
    pub fn eval(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        self.chart.project(u).dot(&(&self.matrix * self.chart.project(v)))
    }
}

fn equilibrium_residual(spec: &LyapunovSpec, p: &SimplexPoint) -> Result<f64> {
    Ok((spec.measure(p)?.coords() - p.coords()).amax())
}

/// `Hess V(p)(u, v) = alpha(p) s'(1) <(I - D pi(p)) u, v>_{1/p}` on the
/// chart, cross-checked against second differences of `V`.
pub fn hessian_v(spec: &LyapunovSpec, p: &SimplexPoint) -> Result<BilinearFormReport> {
    p.require_interior()?;
    let res = equilibrium_residual(spec, p)?;
    if res > 1e-8 {
        return Err(Error::NotAnEquilibrium(res));
    }
    let n = p.dim();
    let chart = chart_for(p);
    let m = n - 1;
    let scale = spec.alpha(p)? * spec.transform().derivative(1.0);
    let pi = |y: &SimplexPoint| spec.measure(y).map(SimplexPoint::into_vector);
    let basis: Vec<DVector<f64>> = (0..m).map(|a| chart.basis_vector(a)).collect();
    let mut dpi = Vec::with_capacity(m);
    for u in &basis {
        dpi.push(directional_derivative(&pi, p.coords(), u, local_step(p))?);
    }
    let pc = p.coords();
    let formula = DMatrix::from_fn(m, m, |a, b| {
        let w = &basis[a] - &dpi[a];
        scale * (0..n).map(|i| w[i] * basis[b][i] / pc[i]).sum::<f64>()
    });

    let v = |y: &SimplexPoint| spec.value(y);
    let second = |h: f64| -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(m, m);
        for a in 0..m {
            for b in a..m {
                let d = mixed_second_derivative(&v, pc, &basis[a], &basis[b], h)?;
                out[(a, b)] = d;
                out[(b, a)] = d;
            }
        }
        Ok(out)
    };
    let tol = 1e-4 * formula.amax().max(1.0);
    // second differences reach 2h away from p along two basis vectors
    let h = SECOND_DIFF_STEP.min(0.02 * p.min_coord());
    let coarse = second(h)?;
    let mut defect = (&coarse - &formula).amax();
    if defect > tol {
        let fine = second(0.5 * h)?;
        let refined = (fine * 4.0 - coarse) / 3.0;
        defect = (&refined - &formula).amax();
    }
    if defect > tol {
        return Err(Error::FormulaMismatch(format!(
            "Hessian formula and second differences of V differ by {defect:e}"
        )));
    }
    let mut report = BilinearFormReport::from_matrix(chart, formula);
    report.cross_check_defect = Some(defect);
    Ok(report)
}

/// `g0(u, v) = -<(L^T)^{-1} u, v>_{1/p}` on the tangent space, where
/// `L^T u = u L`.
pub fn reversible_metric(l: &RateMatrix, p: &SimplexPoint) -> Result<BilinearFormReport> {
    p.require_interior()?;
    if !is_irreducible(l) {
        return Err(Error::NotIrreducible);
    }
    let defect = reversibility_defect(l, p)?;
    if defect > 1e-10 {
        return Err(Error::NotReversible(defect));
    }
    reversible_metric_in_chart(l, p, ChartProjection::last(p.dim()))
}

/// As `reversible_metric`, in a chosen chart.
pub fn reversible_metric_in_chart(l: &RateMatrix, p: &SimplexPoint, chart: ChartProjection) -> Result<BilinearFormReport> {
    let n = p.dim();
    let m = n - 1;
    let basis: Vec<DVector<f64>> = (0..m).map(|a| chart.basis_vector(a)).collect();
    let pre: Vec<DVector<f64>> = basis.iter().map(|u| solve_left_tangent(l, u)).collect::<Result<_>>()?;
    let pc = p.coords();
    let g = DMatrix::from_fn(m, m, |a, b| -(0..n).map(|i| pre[a][i] * basis[b][i] / pc[i]).sum::<f64>());
    let report = BilinearFormReport::from_matrix(chart, g);
    if report.symmetry_defect > 1e-10 * report.matrix.amax().max(1.0) || !report.is_positive_definite() {
        return Err(Error::FormulaMismatch(format!(
            "metric is not a positive definite symmetric form (symmetry defect {:e}, signature {:?})",
            report.symmetry_defect, report.signature
        )));
    }
    Ok(report)
}

/// The field `G = (1 - lambda) G0 + lambda F` with `G0 = -grad V` for the
/// metric built from `L(x)`, rescaled so that `DG0 = DF` at equilibria, and
/// `lambda = psi(dist(x, E) / eps)`.
#[derive(Clone, Debug)]
pub struct GradientApproximation {
    pub epsilon: f64,
    pub equilibria: Vec<SimplexPoint>,
    /// `-grad V` for the rescaled metric.
    pub gradient_field: VectorFieldSpec,
    pub blended: VectorFieldSpec,
}

/// Bump with `psi = 0` on `[0, 1]`, `psi = 1` on `[3, inf)` and
/// `0 <= psi' <= 1`.
pub fn plateau_bump(t: f64) -> f64 {
    smooth_step(0.5 * (t - 1.0))
}

fn metric_gradient_field(field: &VectorFieldSpec, spec: &LyapunovSpec, x: &SimplexPoint) -> Result<DVector<f64>> {
    let l = field
        .rate_matrix(x)
        .ok_or_else(|| Error::InvalidParameter("gradient approximation needs a generator field".into()))??;
    let pi = field.measure(x).expect("generator fields have a measure")?;
    let grad = spec.gradient(x)?;
    let mean = pi.coords().dot(&grad);
    let z = pi.coords().component_mul(&grad.map(|g| g - mean));
    let kappa = spec.alpha(x)? * spec.transform().derivative(1.0);
    Ok(l.left_apply(&z) / kappa)
}

pub fn build_gradient_approximation(
    field: &VectorFieldSpec,
    spec: &LyapunovSpec,
    equilibria: &[SimplexPoint],
    epsilon: f64,
) -> Result<GradientApproximation> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
    }
    if field.rate_matrix(&SimplexPoint::barycenter(field.dim())).is_none() {
        return Err(Error::InvalidParameter("gradient approximation needs a generator field".into()));
    }
    for (index, p) in equilibria.iter().enumerate() {
        if !p.is_interior() {
            return Err(Error::EquilibriaNotHyperbolic { index });
        }
        let report = classify_equilibrium(field, p, HYPERBOLICITY_THRESHOLD)?;
        if report.classification == Stability::Nonhyperbolic {
            return Err(Error::EquilibriaNotHyperbolic { index });
        }
        let l = field.rate_matrix(p).expect("generator")?;
        let defect = reversibility_defect(&l, p)?;
        if defect > 1e-8 {
            return Err(Error::NotReversible(defect));
        }
    }
    let n = field.dim();
    let (f0, s0) = (field.clone(), spec.clone());
    let gradient_field = VectorFieldSpec::explicit(n, true, move |x: &SimplexPoint| metric_gradient_field(&f0, &s0, x));
    let (f1, s1, eqs) = (field.clone(), spec.clone(), equilibria.to_vec());
    let blended = VectorFieldSpec::explicit(n, true, move |x: &SimplexPoint| {
        let v = eqs.iter().map(|p| x.distance(p)).fold(f64::INFINITY, f64::min);
        let lambda = plateau_bump(v / epsilon);
        let f = f1.eval_raw(x)?;
        if lambda >= 1.0 {
            return Ok(f);
        }
        let g0 = metric_gradient_field(&f1, &s1, x)?;
        Ok(g0 * (1.0 - lambda) + f * lambda)
    });
    Ok(GradientApproximation {
        epsilon,
        equilibria: equilibria.to_vec(),
        gradient_field,
        blended,
    })
}

impl GradientApproximation {
    /// Distance to the nearest listed equilibrium.
    pub fn distance_to_equilibria(&self, x: &SimplexPoint) -> f64 {
        self.equilibria.iter().map(|p| x.distance(p)).fold(f64::INFINITY, f64::min)
    }
}

/// Convenience wrapper turning a scalar closure into a custom spec.
pub fn custom_lyapunov<V>(value: V, transform: MonotoneTransform, target: TargetSpec) -> LyapunovSpec
where
    V: Fn(&SimplexPoint) -> Result<f64> + Send + Sync + 'static,
{
    LyapunovSpec::Custom(CustomLyapunov {
        value: Callable(Arc::new(value)),
        gradient: None,
        alpha: None,
        transform,
        target,
    })
}
