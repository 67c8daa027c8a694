//! Revision protocols: state-dependent Markov kernels `K(x)`, the rate
//! matrices `L(x)` they induce and the target measures `pi(x)` that make
//! them reversible.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::{solve_invariant, MarkovMatrix, RateMatrix};
use crate::matrix_io;
use crate::simplex::{halton_simplex_points, SimplexPoint};
use crate::transforms::smooth_step;

/// Below this a row normalizer is treated as zero.
pub const DENOMINATOR_FLOOR: f64 = 1e-300;
/// Slack allowed on comparison row sums before `RowOverflow`.
pub const ROW_SUM_SLACK: f64 = 1e-12;
/// Number of grid points used to calibrate and check comparison rates.
pub const CALIBRATION_POINTS: usize = 1000;

/// Shared handle to caller-supplied code. Compares by identity and is
/// skipped by serialization.
pub struct Callable<F: ?Sized>(pub Arc<F>);

impl<F: ?Sized> Clone for Callable<F> {
    fn clone(&self) -> Self {
        Callable(Arc::clone(&self.0))
    }
}

impl<F: ?Sized> fmt::Debug for Callable<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Callable(..)")
    }
}

impl<F: ?Sized> PartialEq for Callable<F> {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

pub type VectorMap = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
pub type MatrixMap = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;
pub type MeasureFn = dyn Fn(&SimplexPoint) -> Result<SimplexPoint> + Send + Sync;

/// Scalar potential `W` on `R^n` with its gradient.
pub trait Potential: Send + Sync {
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
}

fn check_square(m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: m.nrows(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("matrix has non-finite entries".into()));
    }
    Ok(())
}

fn check_len(len: usize, n: usize) -> Result<()> {
    if len != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: len,
        });
    }
    Ok(())
}

/// `max |M - M^T|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

fn check_symmetric(m: &DMatrix<f64>, tol: f64) -> Result<()> {
    let d = asymmetry(m);
    if d > tol {
        return Err(Error::AsymmetricMatrix(d));
    }
    Ok(())
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "inverse temperature must be finite and nonnegative, got {beta}"
        )));
    }
    Ok(())
}

/// Payoff function `U : simplex -> R^n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PayoffSpec {
    /// `U(x) = M x`.
    LinearMatrix {
        #[serde(with = "matrix_io::rows")]
        matrix: DMatrix<f64>,
    },
    /// Potential game with `W(x) = x^T C x / 2`, hence `U(x) = -C x`.
    QuadraticPotential {
        #[serde(with = "matrix_io::rows")]
        coupling: DMatrix<f64>,
    },
    /// Potential game `U = -grad W` for a caller-supplied `W`.
    #[serde(skip)]
    Potential(Callable<dyn Potential>),
    /// Arbitrary payoff callable.
    #[serde(skip)]
    Table(Callable<VectorMap>),
}

impl PayoffSpec {
    /// Rock-paper-scissors: win +1, loss -1.
    pub fn rock_paper_scissors() -> Self {
        PayoffSpec::LinearMatrix {
            matrix: DMatrix::from_row_slice(3, 3, &[0., -1., 1., 1., 0., -1., -1., 1., 0.]),
        }
    }

    pub fn linear(matrix: DMatrix<f64>) -> Self {
        PayoffSpec::LinearMatrix { matrix }
    }

    pub fn from_potential<P: Potential + 'static>(p: P) -> Self {
        PayoffSpec::Potential(Callable(Arc::new(p)))
    }

    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        PayoffSpec::Table(Callable(Arc::new(f)))
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            PayoffSpec::LinearMatrix { matrix } => check_square(matrix, n),
            PayoffSpec::QuadraticPotential { coupling } => {
                check_square(coupling, n)?;
                check_symmetric(coupling, 1e-12)
            }
            PayoffSpec::Potential(p) => {
                for x in halton_simplex_points(n, 20, 0.1) {
                    let x = x.coords();
                    let g = p.0.gradient(x);
                    check_len(g.len(), n)?;
                    for i in 0..n {
                        let h = 1e-6;
                        let mut xp = x.clone();
                        let mut xm = x.clone();
                        xp[i] += h;
                        xm[i] -= h;
                        let fd = (p.0.value(&xp) - p.0.value(&xm)) / (2.0 * h);
                        if (fd - g[i]).abs() > 1e-5 * g[i].abs().max(1.0) {
                            return Err(Error::InvalidParameter(format!(
                                "potential gradient component {i} is {} but finite differences give {fd}",
                                g[i]
                            )));
                        }
                    }
                }
                Ok(())
            }
            PayoffSpec::Table(f) => {
                let u = f.0(SimplexPoint::barycenter(n).coords());
                check_len(u.len(), n)
            }
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            PayoffSpec::LinearMatrix { matrix } => matrix * x,
            PayoffSpec::QuadraticPotential { coupling } => -(coupling * x),
            PayoffSpec::Potential(p) => -p.0.gradient(x),
            PayoffSpec::Table(f) => f.0(x),
        }
    }

    /// `W(x)` when the game is a potential game with a known potential.
    /// A symmetric linear payoff `U = M x` has `W = -x^T M x / 2`.
    pub fn potential_value(&self, x: &DVector<f64>) -> Option<f64> {
        match self {
            PayoffSpec::LinearMatrix { matrix } if asymmetry(matrix) <= 1e-12 => {
                Some(-0.5 * x.dot(&(matrix * x)))
            }
            PayoffSpec::QuadraticPotential { coupling } => Some(0.5 * x.dot(&(coupling * x))),
            PayoffSpec::Potential(p) => Some(p.0.value(x)),
            _ => None,
        }
    }

    /// `grad W(x) = -U(x)` for potential games.
    pub fn potential_gradient(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        self.potential_value(x).map(|_| -self.eval(x))
    }

    pub fn is_potential(&self) -> bool {
        match self {
            PayoffSpec::LinearMatrix { matrix } => asymmetry(matrix) <= 1e-12,
            PayoffSpec::QuadraticPotential { .. } | PayoffSpec::Potential(_) => true,
            PayoffSpec::Table(_) => false,
        }
    }

    /// Matrix `M` with `U(x) = M x`, when payoffs are linear.
    pub fn linear_matrix(&self) -> Option<DMatrix<f64>> {
        match self {
            PayoffSpec::LinearMatrix { matrix } => Some(matrix.clone()),
            PayoffSpec::QuadraticPotential { coupling } => Some(-coupling),
            _ => None,
        }
    }
}

/// Per-strategy factors `f_i(x_i)` multiplying imitative attachments and
/// target measures.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StrategyFactor {
    /// `f_i = 1`
    #[default]
    Unit,
    /// `f_i(t) = t^a`, `a > 0`
    Power { exponent: f64 },
    /// `f_i(t) = exp(-c_i)`
    ExpConstant { offsets: Vec<f64> },
    /// `f_i(t) = a + b t`, positive on `(0, 1]`
    Affine { intercept: f64, slope: f64 },
}

impl StrategyFactor {
    /// `f_i(t) = t`, the plain imitative factor.
    pub fn imitative() -> Self {
        StrategyFactor::Power { exponent: 1.0 }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            StrategyFactor::Unit => Ok(()),
            StrategyFactor::Power { exponent } => {
                if exponent.is_finite() && *exponent > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "power factor exponent must be positive, got {exponent}"
                    )))
                }
            }
            StrategyFactor::ExpConstant { offsets } => {
                check_len(offsets.len(), n)?;
                if offsets.iter().all(|c| c.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter("non-finite offset".into()))
                }
            }
            StrategyFactor::Affine { intercept, slope } => {
                if intercept.is_finite() && slope.is_finite() && *intercept >= 0.0 && intercept + slope > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "affine factor {intercept} + {slope} t is not positive on (0, 1]"
                    )))
                }
            }
        }
    }

    pub fn eval(&self, i: usize, t: f64) -> f64 {
        match self {
            StrategyFactor::Unit => 1.0,
            StrategyFactor::Power { exponent } => t.powf(*exponent),
            StrategyFactor::ExpConstant { offsets } => (-offsets[i]).exp(),
            StrategyFactor::Affine { intercept, slope } => intercept + slope * t,
        }
    }

    /// `log f_i(t)`, exact for the exponential family.
    pub fn ln_eval(&self, i: usize, t: f64) -> f64 {
        match self {
            StrategyFactor::Unit => 0.0,
            StrategyFactor::Power { exponent } => exponent * t.ln(),
            StrategyFactor::ExpConstant { offsets } => -offsets[i],
            StrategyFactor::Affine { .. } => self.eval(i, t).ln(),
        }
    }

    /// `int_1^x log f_i(u) du`; closed form except for the affine family,
    /// which is integrated by double-exponential quadrature.
    pub fn log_integral(&self, i: usize, x: f64) -> f64 {
        match self {
            StrategyFactor::Unit => 0.0,
            StrategyFactor::Power { exponent } => {
                let xlogx = if x == 0.0 { 0.0 } else { x * x.ln() };
                exponent * (xlogx - x + 1.0)
            }
            StrategyFactor::ExpConstant { offsets } => -offsets[i] * (x - 1.0),
            StrategyFactor::Affine { .. } => {
                if x == 1.0 {
                    return 0.0;
                }
                let out = quadrature::integrate(|u| self.ln_eval(i, u), x.min(1.0), x.max(1.0), 1e-12);
                if x < 1.0 {
                    -out.integral
                } else {
                    out.integral
                }
            }
        }
    }
}

/// Attachment weights `w_ij(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AttachmentSpec {
    Constant {
        #[serde(with = "matrix_io::rows")]
        weights: DMatrix<f64>,
    },
    /// `w_ij(x) = f_j(x_j) w~_ij`.
    Imitative {
        #[serde(default = "StrategyFactor::imitative")]
        factor: StrategyFactor,
        #[serde(with = "matrix_io::rows")]
        base: DMatrix<f64>,
    },
    #[serde(skip)]
    Custom(Callable<MatrixMap>),
}

impl AttachmentSpec {
    pub fn uniform(n: usize) -> Self {
        AttachmentSpec::Constant {
            weights: DMatrix::from_element(n, n, 1.0),
        }
    }

    pub fn imitative(base: DMatrix<f64>) -> Self {
        AttachmentSpec::Imitative {
            factor: StrategyFactor::imitative(),
            base,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let check_nonneg = |m: &DMatrix<f64>| -> Result<()> {
            check_square(m, n)?;
            for i in 0..n {
                for j in 0..n {
                    if m[(i, j)] < 0.0 {
                        return Err(Error::NegativeEntry(i, j));
                    }
                }
            }
            Ok(())
        };
        match self {
            AttachmentSpec::Constant { weights } => check_nonneg(weights),
            AttachmentSpec::Imitative { factor, base } => {
                factor.validate(n)?;
                check_nonneg(base)
            }
            AttachmentSpec::Custom(f) => check_nonneg(&f.0(SimplexPoint::barycenter(n).coords())),
        }
    }

    pub fn weights(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match self {
            AttachmentSpec::Constant { weights } => weights.clone(),
            AttachmentSpec::Imitative { factor, base } => {
                let n = x.len();
                DMatrix::from_fn(n, n, |i, j| factor.eval(j, x[j]) * base[(i, j)])
            }
            AttachmentSpec::Custom(f) => f.0(x),
        }
    }

    /// The `x`-independent symmetric part `w~` and factor `f` when the
    /// weights have the reversible form `w_ij = f_j(x_j) w~_ij`.
    fn reversible_form(&self) -> Option<StrategyFactor> {
        match self {
            AttachmentSpec::Constant { weights } if asymmetry(weights) <= 1e-12 => {
                Some(StrategyFactor::Unit)
            }
            AttachmentSpec::Imitative { factor, base } if asymmetry(base) <= 1e-12 => {
                Some(factor.clone())
            }
            _ => None,
        }
    }

    /// Factor `f` when all rows of `w~` are constant, so that sampling
    /// kernels have identical rows.
    fn constant_rows_form(&self) -> Option<StrategyFactor> {
        let flat = |m: &DMatrix<f64>| {
            let v = m[(0, 0)];
            m.iter().all(|e| *e == v) && v > 0.0
        };
        match self {
            AttachmentSpec::Constant { weights } if flat(weights) => Some(StrategyFactor::Unit),
            AttachmentSpec::Imitative { factor, base } if flat(base) => Some(factor.clone()),
            _ => None,
        }
    }
}

/// Increasing `f` in sampling protocols.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SamplingRule {
    /// `f(u) = exp(beta u)`
    Exponential { beta: f64 },
    /// `f(u) = (u + shift)^beta`, requires `u + shift >= 0`
    ShiftedPower { beta: f64, shift: f64 },
    /// `f(u) = max(u, 0)`
    PositivePart,
}

impl SamplingRule {
    pub fn validate(&self) -> Result<()> {
        match self {
            SamplingRule::Exponential { beta } => check_beta(*beta),
            SamplingRule::ShiftedPower { beta, shift } => {
                if !(beta.is_finite() && *beta > 0.0 && shift.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "shifted power needs beta > 0 and finite shift, got {beta}, {shift}"
                    )));
                }
                Ok(())
            }
            SamplingRule::PositivePart => Ok(()),
        }
    }

    /// `log f(u)`; `-inf` where `f` vanishes.
    fn ln_f(&self, u: f64) -> Result<f64> {
        match self {
            SamplingRule::Exponential { beta } => Ok(beta * u),
            SamplingRule::ShiftedPower { beta, shift } => {
                let base = u + shift;
                if base < 0.0 {
                    return Err(Error::DomainViolation(format!(
                        "payoff {u} below the shift -{shift} of the sampling rule"
                    )));
                }
                Ok(beta * base.ln())
            }
            SamplingRule::PositivePart => Ok(if u > 0.0 { u.ln() } else { f64::NEG_INFINITY }),
        }
    }
}

/// Comparison function `g(u, v)`: decreasing in the current payoff `u`,
/// increasing in the candidate payoff `v`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ComparisonRule {
    /// `e^{beta(v-u)} / (1 + e^{beta(v-u)})`
    Logistic { beta: f64 },
    /// `min(1, e^{beta(v-u)})`
    Metropolis { beta: f64 },
    /// `e^{-beta u}`
    Dissatisfaction { beta: f64 },
    /// `e^{beta v}`
    Success { beta: f64 },
    /// `max(0, v - u)`
    Replicator,
    /// `g = c`
    Constant { value: f64 },
}

impl ComparisonRule {
    pub fn validate(&self) -> Result<()> {
        match self {
            ComparisonRule::Logistic { beta }
            | ComparisonRule::Metropolis { beta }
            | ComparisonRule::Dissatisfaction { beta }
            | ComparisonRule::Success { beta } => check_beta(*beta),
            ComparisonRule::Replicator => Ok(()),
            ComparisonRule::Constant { value } => {
                if value.is_finite() && *value >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!("constant comparison rate {value}")))
                }
            }
        }
    }

    pub fn g(&self, u: f64, v: f64) -> f64 {
        match self {
            ComparisonRule::Logistic { beta } => 1.0 / (1.0 + (-beta * (v - u)).exp()),
            ComparisonRule::Metropolis { beta } => (beta * (v - u)).min(0.0).exp(),
            ComparisonRule::Dissatisfaction { beta } => (-beta * u).exp(),
            ComparisonRule::Success { beta } => (beta * v).exp(),
            ComparisonRule::Replicator => (v - u).max(0.0),
            ComparisonRule::Constant { value } => *value,
        }
    }

    /// Inverse temperature `beta` such that `w~ g` is symmetric after
    /// weighting by `e^{beta U}`, making the kernel reversible with respect
    /// to the logit measure.
    pub fn logit_reversible_beta(&self) -> Option<f64> {
        match self {
            ComparisonRule::Logistic { beta }
            | ComparisonRule::Metropolis { beta }
            | ComparisonRule::Dissatisfaction { beta }
            | ComparisonRule::Success { beta } => Some(*beta),
            ComparisonRule::Constant { .. } => Some(0.0),
            ComparisonRule::Replicator => None,
        }
    }
}

/// Families of target invariant measures `pi(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TargetSpec {
    Constant { pi: SimplexPoint },
    /// `pi_i ~ exp(-(U0_i + beta (U x)_i))`
    Gibbs {
        #[serde(with = "matrix_io::vector")]
        baseline: DVector<f64>,
        #[serde(with = "matrix_io::rows")]
        coupling: DMatrix<f64>,
        beta: f64,
    },
    /// `pi_i ~ f_i(x_i) exp(beta U_i(x))`
    Logit {
        payoff: PayoffSpec,
        beta: f64,
        #[serde(default)]
        factor: StrategyFactor,
    },
    /// `pi_i ~ x_i^g (A x^g)_i`
    VertexReinforcement {
        #[serde(with = "matrix_io::rows")]
        a: DMatrix<f64>,
        gamma: f64,
    },
    /// `pi = x + eps G(x)` with `G` the damped spiral around the
    /// barycenter of the 2-simplex.
    Spiral { eta: f64, epsilon: f64 },
    #[serde(skip)]
    Custom(Callable<MeasureFn>),
}

impl TargetSpec {
    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&SimplexPoint) -> Result<SimplexPoint> + Send + Sync + 'static,
    {
        TargetSpec::Custom(Callable(Arc::new(f)))
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            TargetSpec::Constant { pi } => {
                check_len(pi.dim(), n)?;
                pi.require_interior()
            }
            TargetSpec::Gibbs {
                baseline,
                coupling,
                beta,
            } => {
                check_len(baseline.len(), n)?;
                check_square(coupling, n)?;
                check_symmetric(coupling, 1e-12)?;
                check_beta(*beta)
            }
            TargetSpec::Logit {
                payoff,
                beta,
                factor,
            } => {
                payoff.validate(n)?;
                factor.validate(n)?;
                check_beta(*beta)
            }
            TargetSpec::VertexReinforcement { a, gamma } => validate_reinforcement(a, *gamma, n, true),
            TargetSpec::Spiral { eta, epsilon } => validate_spiral(*eta, *epsilon, n),
            TargetSpec::Custom(f) => {
                let p = f.0(&SimplexPoint::barycenter(n))?;
                check_len(p.dim(), n)
            }
        }
    }

    pub fn measure(&self, x: &SimplexPoint) -> Result<SimplexPoint> {
        match self {
            TargetSpec::Constant { pi } => Ok(pi.clone()),
            TargetSpec::Gibbs {
                baseline,
                coupling,
                beta,
            } => gibbs_measure(baseline, coupling, *beta, x),
            TargetSpec::Logit {
                payoff,
                beta,
                factor,
            } => logit_measure_with_factor(payoff, *beta, factor, x),
            TargetSpec::VertexReinforcement { a, gamma } => vertex_reinforcement_invariant(a, *gamma, x),
            TargetSpec::Spiral { eta, epsilon } => spiral_target(*eta, *epsilon, x),
            TargetSpec::Custom(f) => f.0(x),
        }
    }

    /// Validates the family for dimension `n`.
    pub fn build(self, n: usize) -> Result<Target> {
        self.validate(n)?;
        Ok(Target { spec: self, n })
    }
}

/// A validated target measure family.
#[derive(Clone, Debug, PartialEq)]
pub struct Target {
    spec: TargetSpec,
    n: usize,
}

impl Target {
    pub fn spec(&self) -> &TargetSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn measure(&self, x: &SimplexPoint) -> Result<SimplexPoint> {
        check_len(x.dim(), self.n)?;
        self.spec.measure(x)
    }
}

/// Declarative revision protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProtocolSpec {
    /// `K_ij = w_ij f(U_j) / sum_k w_ik f(U_k)`
    Sampling {
        payoff: PayoffSpec,
        attachment: AttachmentSpec,
        rule: SamplingRule,
    },
    /// `K_ij = R w_ij g(U_i, U_j)` off the diagonal.
    Comparison {
        payoff: PayoffSpec,
        attachment: AttachmentSpec,
        rule: ComparisonRule,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rate_scale: Option<f64>,
    },
    /// Every row of `K(x)` equals `pi(x)`, so `x L(x) = -x + pi(x)`.
    GibbsDirect { target: TargetSpec },
    /// `K_ij = A_ij x_j^g / sum_k A_ik x_k^g`
    VertexReinforcement {
        #[serde(with = "matrix_io::rows")]
        a: DMatrix<f64>,
        gamma: f64,
    },
    /// `L_ij = W_ij pi_j(x)`
    ReversibleFromTarget {
        #[serde(with = "matrix_io::rows")]
        weights: DMatrix<f64>,
        target: TargetSpec,
    },
    /// `K_ij = R x_j max(0, U_j - U_i)`; the mean field is the replicator
    /// equation slowed down by `R`.
    Replicator {
        payoff: PayoffSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rate_scale: Option<f64>,
    },
}

impl ProtocolSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ProtocolSpec::Sampling { .. } => "sampling",
            ProtocolSpec::Comparison { .. } => "comparison",
            ProtocolSpec::GibbsDirect { .. } => "gibbs-direct",
            ProtocolSpec::VertexReinforcement { .. } => "vertex-reinforcement",
            ProtocolSpec::ReversibleFromTarget { .. } => "reversible-from-target",
            ProtocolSpec::Replicator { .. } => "replicator",
        }
    }

    /// Checks dimensions and parameters, calibrates comparison rate scales
    /// and freezes the result.
    pub fn build(self, n: usize) -> Result<Protocol> {
        if n == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        let spec = match self {
            ProtocolSpec::Sampling {
                payoff,
                attachment,
                rule,
            } => {
                payoff.validate(n)?;
                attachment.validate(n)?;
                rule.validate()?;
                ProtocolSpec::Sampling {
                    payoff,
                    attachment,
                    rule,
                }
            }
            ProtocolSpec::Comparison {
                payoff,
                attachment,
                rule,
                rate_scale,
            } => {
                payoff.validate(n)?;
                attachment.validate(n)?;
                rule.validate()?;
                let r = calibrate_comparison(&payoff, &attachment, &rule, rate_scale, n)?;
                ProtocolSpec::Comparison {
                    payoff,
                    attachment,
                    rule,
                    rate_scale: Some(r),
                }
            }
            ProtocolSpec::GibbsDirect { target } => {
                target.validate(n)?;
                ProtocolSpec::GibbsDirect { target }
            }
            ProtocolSpec::VertexReinforcement { a, gamma } => {
                validate_reinforcement(&a, gamma, n, false)?;
                ProtocolSpec::VertexReinforcement { a, gamma }
            }
            ProtocolSpec::ReversibleFromTarget { weights, target } => {
                check_square(&weights, n)?;
                check_symmetric(&weights, 1e-12)?;
                for i in 0..n {
                    for j in 0..n {
                        if i != j && !(weights[(i, j)] > 0.0) {
                            return Err(Error::InvalidParameter(format!(
                                "off-diagonal weight ({i}, {j}) must be positive"
                            )));
                        }
                    }
                }
                target.validate(n)?;
                ProtocolSpec::ReversibleFromTarget { weights, target }
            }
            ProtocolSpec::Replicator { payoff, rate_scale } => {
                payoff.validate(n)?;
                let attachment = AttachmentSpec::imitative(DMatrix::from_element(n, n, 1.0));
                let r = calibrate_comparison(
                    &payoff,
                    &attachment,
                    &ComparisonRule::Replicator,
                    rate_scale,
                    n,
                )?;
                ProtocolSpec::Replicator {
                    payoff,
                    rate_scale: Some(r),
                }
            }
        };
        Ok(Protocol { spec, n })
    }
}

fn validate_reinforcement(a: &DMatrix<f64>, gamma: f64, n: usize, symmetric: bool) -> Result<()> {
    check_square(a, n)?;
    if a.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParameter(
            "reinforcement matrix must have positive entries".into(),
        ));
    }
    if symmetric {
        check_symmetric(a, 1e-12)?;
    }
    if !(gamma.is_finite() && gamma >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "reinforcement exponent must be at least 1, got {gamma}"
        )));
    }
    Ok(())
}

fn calibration_grid(n: usize) -> Vec<SimplexPoint> {
    let mut pts: Vec<SimplexPoint> = if n >= 2 {
        halton_simplex_points(n, CALIBRATION_POINTS - n, 0.0)
    } else {
        Vec::new()
    };
    pts.extend((0..n).map(|i| SimplexPoint::vertex(n, i)));
    pts
}

/// Picks `R = 1 / (n max g max w)` over the calibration grid unless given,
/// then checks that every grid row keeps off-diagonal mass at most 1.
fn calibrate_comparison(
    payoff: &PayoffSpec,
    attachment: &AttachmentSpec,
    rule: &ComparisonRule,
    given: Option<f64>,
    n: usize,
) -> Result<f64> {
    let grid = calibration_grid(n);
    let r = match given {
        Some(r) => {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::InvalidParameter(format!("rate scale must be positive, got {r}")));
            }
            r
        }
        None => {
            let mut max_g: f64 = 0.0;
            let mut max_w: f64 = 0.0;
            for x in &grid {
                let u = payoff.eval(x.coords());
                let w = attachment.weights(x.coords());
                for i in 0..n {
                    for j in 0..n {
                        if i != j {
                            max_g = max_g.max(rule.g(u[i], u[j]));
                            max_w = max_w.max(w[(i, j)]);
                        }
                    }
                }
            }
            let denom = n as f64 * max_g * max_w;
            if !denom.is_finite() {
                return Err(Error::InvalidParameter(
                    "comparison rates overflow on the calibration grid".into(),
                ));
            }
            if denom > 0.0 {
                1.0 / denom
            } else {
                1.0
            }
        }
    };
    for x in &grid {
        comparison_kernel(payoff, attachment, rule, r, x.coords())?;
    }
    Ok(r)
}

/// A validated protocol of fixed dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Protocol {
    spec: ProtocolSpec,
    n: usize,
}

impl Protocol {
    pub fn spec(&self) -> &ProtocolSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Calibrated rate scale of comparison-type protocols.
    pub fn rate_scale(&self) -> Option<f64> {
        match &self.spec {
            ProtocolSpec::Comparison { rate_scale, .. } | ProtocolSpec::Replicator { rate_scale, .. } => {
                *rate_scale
            }
            _ => None,
        }
    }

    pub fn markov_kernel(&self, x: &SimplexPoint) -> Result<MarkovMatrix> {
        markov_kernel(self, x)
    }

    /// `L(x)`; equal to `-Id + K(x)` except for reversible-from-target
    /// protocols, which define `L` directly.
    pub fn rate_matrix(&self, x: &SimplexPoint) -> Result<RateMatrix> {
        check_len(x.dim(), self.n)?;
        match &self.spec {
            ProtocolSpec::ReversibleFromTarget { weights, target } => {
                reversible_rate_from_target(weights, &target.measure(x)?)
            }
            ProtocolSpec::GibbsDirect { target } => {
                let pi = target.measure(x)?;
                Ok(jump_to(&pi))
            }
            _ => Ok(rate_from_kernel(&self.markov_kernel(x)?)),
        }
    }

    /// A closed-form family `pi(x)` with respect to which `L(x)` is
    /// reversible (or, for identical-row kernels, invariant), when known.
    pub fn target(&self) -> Option<TargetSpec> {
        match &self.spec {
            ProtocolSpec::GibbsDirect { target } | ProtocolSpec::ReversibleFromTarget { target, .. } => {
                Some(target.clone())
            }
            ProtocolSpec::VertexReinforcement { a, gamma } if asymmetry(a) <= 1e-12 => {
                Some(TargetSpec::VertexReinforcement {
                    a: a.clone(),
                    gamma: *gamma,
                })
            }
            ProtocolSpec::Comparison {
                payoff,
                attachment,
                rule,
                ..
            } => {
                let beta = rule.logit_reversible_beta()?;
                let factor = attachment.reversible_form()?;
                Some(TargetSpec::Logit {
                    payoff: payoff.clone(),
                    beta,
                    factor,
                })
            }
            ProtocolSpec::Sampling {
                payoff,
                attachment,
                rule: SamplingRule::Exponential { beta },
            } => {
                let factor = attachment.constant_rows_form()?;
                Some(TargetSpec::Logit {
                    payoff: payoff.clone(),
                    beta: *beta,
                    factor,
                })
            }
            _ => None,
        }
    }

    /// `pi(x)` from the closed-form family when available, otherwise by a
    /// linear solve of `pi L(x) = 0`.
    pub fn invariant(&self, x: &SimplexPoint) -> Result<SimplexPoint> {
        match self.target() {
            Some(t) => t.measure(x),
            None => {
                let l = self.rate_matrix(x)?;
                if !crate::markov::is_irreducible(&l) {
                    return Err(Error::NotIrreducible);
                }
                solve_invariant(&l)
            }
        }
    }
}

/// `L = -Id + 1 pi^T`.
fn jump_to(pi: &SimplexPoint) -> RateMatrix {
    let n = pi.dim();
    let p = pi.coords();
    let off = DMatrix::from_fn(n, n, |_, j| p[j]);
    RateMatrix::from_off_diagonal(off).expect("probabilities are nonnegative")
}

fn comparison_kernel(
    payoff: &PayoffSpec,
    attachment: &AttachmentSpec,
    rule: &ComparisonRule,
    r: f64,
    x: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let n = x.len();
    let u = payoff.eval(x);
    let w = attachment.weights(x);
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..n {
            if i != j {
                let v = r * w[(i, j)] * rule.g(u[i], u[j]);
                k[(i, j)] = v;
                s += v;
            }
        }
        if !(s <= 1.0 + ROW_SUM_SLACK) {
            return Err(Error::RowOverflow { row: i, sum: s });
        }
        k[(i, i)] = (1.0 - s).max(0.0);
    }
    Ok(k)
}

/// Normalizes `exp(l)` with a max shift; `-inf` entries get weight 0.
fn softmax(l: &DVector<f64>) -> Result<DVector<f64>> {
    let m = l.max();
    if !m.is_finite() {
        return Err(Error::DegenerateDenominator { row: 0, value: 0.0 });
    }
    let e = l.map(|v| (v - m).exp());
    let s = e.sum();
    Ok(e / s)
}

pub fn markov_kernel(protocol: &Protocol, x: &SimplexPoint) -> Result<MarkovMatrix> {
    let n = protocol.n;
    check_len(x.dim(), n)?;
    let xc = x.coords();
    let k = match &protocol.spec {
        ProtocolSpec::Sampling {
            payoff,
            attachment,
            rule,
        } => {
            let u = payoff.eval(xc);
            let w = attachment.weights(xc);
            let ln_f = u
                .iter()
                .map(|&uj| rule.ln_f(uj))
                .collect::<Result<Vec<f64>>>()?;
            let mut k = DMatrix::zeros(n, n);
            for i in 0..n {
                let logs: Vec<f64> = (0..n)
                    .map(|j| {
                        if w[(i, j)] > 0.0 {
                            w[(i, j)].ln() + ln_f[j]
                        } else {
                            f64::NEG_INFINITY
                        }
                    })
                    .collect();
                let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if !m.is_finite() {
                    return Err(Error::DegenerateDenominator { row: i, value: 0.0 });
                }
                let e: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
                let z: f64 = e.iter().sum();
                // the unshifted normalizer is z * e^m
                let unshifted = m + z.ln();
                if unshifted < DENOMINATOR_FLOOR.ln() {
                    return Err(Error::DegenerateDenominator {
                        row: i,
                        value: unshifted.exp(),
                    });
                }
                for j in 0..n {
                    k[(i, j)] = e[j] / z;
                }
            }
            k
        }
        ProtocolSpec::Comparison {
            payoff,
            attachment,
            rule,
            rate_scale,
        } => comparison_kernel(payoff, attachment, rule, rate_scale.unwrap_or(1.0), xc)?,
        ProtocolSpec::Replicator { payoff, rate_scale } => {
            let attachment = AttachmentSpec::imitative(DMatrix::from_element(n, n, 1.0));
            comparison_kernel(
                payoff,
                &attachment,
                &ComparisonRule::Replicator,
                rate_scale.unwrap_or(1.0),
                xc,
            )?
        }
        ProtocolSpec::GibbsDirect { target } => {
            let pi = target.measure(x)?;
            DMatrix::from_fn(n, n, |_, j| pi.coords()[j])
        }
        ProtocolSpec::VertexReinforcement { a, gamma } => {
            return vertex_reinforcement_kernel(a, *gamma, x);
        }
        ProtocolSpec::ReversibleFromTarget { .. } => {
            let l = protocol.rate_matrix(x)?;
            let mut k = l.entries().clone();
            for i in 0..n {
                let off = -l.entries()[(i, i)];
                if off > 1.0 + ROW_SUM_SLACK {
                    return Err(Error::RowOverflow { row: i, sum: off });
                }
                k[(i, i)] = (1.0 - off).max(0.0);
            }
            k
        }
    };
    Ok(MarkovMatrix::from_matrix_unchecked(k))
}

/// `L = -Id + K`, with the diagonal set to minus the off-diagonal row mass.
pub fn rate_from_kernel(k: &MarkovMatrix) -> RateMatrix {
    RateMatrix::from_off_diagonal(k.entries().clone()).expect("Markov entries are nonnegative")
}

/// `pi_i ~ exp(-(U0_i + beta (U x)_i))`.
pub fn gibbs_measure(
    baseline: &DVector<f64>,
    coupling: &DMatrix<f64>,
    beta: f64,
    x: &SimplexPoint,
) -> Result<SimplexPoint> {
    let n = x.dim();
    check_len(baseline.len(), n)?;
    check_square(coupling, n)?;
    check_symmetric(coupling, 1e-12)?;
    check_beta(beta)?;
    let l = -(baseline + coupling * x.coords() * beta);
    Ok(SimplexPoint::from_vector_unchecked(softmax(&l)?))
}

/// `pi_i ~ exp(beta U_i(x))`.
pub fn logit_measure(payoff: &PayoffSpec, beta: f64, x: &SimplexPoint) -> Result<SimplexPoint> {
    logit_measure_with_factor(payoff, beta, &StrategyFactor::Unit, x)
}

/// `pi_i ~ f_i(x_i) exp(beta U_i(x))`.
pub fn logit_measure_with_factor(
    payoff: &PayoffSpec,
    beta: f64,
    factor: &StrategyFactor,
    x: &SimplexPoint,
) -> Result<SimplexPoint> {
    check_beta(beta)?;
    let u = payoff.eval(x.coords());
    check_len(u.len(), x.dim())?;
    let l = DVector::from_fn(x.dim(), |i, _| {
        let lf = factor.ln_eval(i, x.coords()[i]);
        if beta == 0.0 {
            lf
        } else {
            lf + beta * u[i]
        }
    });
    Ok(SimplexPoint::from_vector_unchecked(softmax(&l)?))
}

/// `K_ij = A_ij x_j^g / sum_k A_ik x_k^g`; a row with vanishing normalizer
/// is made absorbing.
pub fn vertex_reinforcement_kernel(a: &DMatrix<f64>, gamma: f64, x: &SimplexPoint) -> Result<MarkovMatrix> {
    let n = x.dim();
    check_square(a, n)?;
    let xg = x.coords().map(|v| v.powf(gamma));
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        let z: f64 = (0..n).map(|j| a[(i, j)] * xg[j]).sum();
        if z <= DENOMINATOR_FLOOR {
            k[(i, i)] = 1.0;
            continue;
        }
        for j in 0..n {
            k[(i, j)] = a[(i, j)] * xg[j] / z;
        }
    }
    Ok(MarkovMatrix::from_matrix_unchecked(k))
}

/// `pi_i = x_i^g (A x^g)_i / sum_jk A_jk x_j^g x_k^g`.
pub fn vertex_reinforcement_invariant(a: &DMatrix<f64>, gamma: f64, x: &SimplexPoint) -> Result<SimplexPoint> {
    let n = x.dim();
    check_square(a, n)?;
    let xg = x.coords().map(|v| v.powf(gamma));
    let num = xg.component_mul(&(a * &xg));
    let z = num.sum();
    if !(z > DENOMINATOR_FLOOR) {
        return Err(Error::DegenerateDenominator { row: 0, value: z });
    }
    Ok(SimplexPoint::from_vector_unchecked(num / z))
}

/// `L_ij = W_ij pi_j` off the diagonal, reversible with respect to `pi`.
pub fn reversible_rate_from_target(w: &DMatrix<f64>, pi: &SimplexPoint) -> Result<RateMatrix> {
    let n = pi.dim();
    check_square(w, n)?;
    pi.require_interior()?;
    let p = pi.coords();
    RateMatrix::from_off_diagonal(DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { w[(i, j)] * p[j] }))
}

/// Chart-norm radius beyond which the spiral is fully replaced by the
/// inward field: the distance, in the first two coordinates, from the
/// barycenter to the nearest point of the edge `x_3 = 0`.
pub const SPIRAL_OUTER_RADIUS: f64 = 0.235_702_260_395_515_8; // 1 / (3 sqrt 2)
pub const SPIRAL_INNER_RADIUS: f64 = 0.5 * SPIRAL_OUTER_RADIUS;

/// Vector field on the 2-simplex: in the chart `(u1, u2, u3) -> (u1, u2)`
/// it is `M y` with `M = [[-eta, -1], [1, -eta]]` and `y` the offset from
/// the barycenter, blended into the inward field `p - x` outside radius
/// `SPIRAL_INNER_RADIUS` of the chart norm. Both pieces shrink the chart
/// norm, so every trajectory tends to the barycenter.
pub fn spiral_field(eta: f64, x: &DVector<f64>) -> DVector<f64> {
    let third = 1.0 / 3.0;
    let y1 = x[0] - third;
    let y2 = x[1] - third;
    let rho = (y1 * y1 + y2 * y2).sqrt();
    let chi = smooth_step((rho - SPIRAL_INNER_RADIUS) / (SPIRAL_OUTER_RADIUS - SPIRAL_INNER_RADIUS));
    let g1 = (1.0 - chi) * (-eta * y1 - y2) - chi * y1;
    let g2 = (1.0 - chi) * (y1 - eta * y2) - chi * y2;
    DVector::from_vec(vec![g1, g2, -g1 - g2])
}

fn spiral_target(eta: f64, epsilon: f64, x: &SimplexPoint) -> Result<SimplexPoint> {
    check_len(x.dim(), 3)?;
    let v = x.coords() + spiral_field(eta, x.coords()) * epsilon;
    if v.iter().any(|c| !(*c > 0.0)) {
        return Err(Error::EpsilonTooLarge(x.as_slice().to_vec()));
    }
    let s = v.sum();
    Ok(SimplexPoint::from_vector_unchecked(v / s))
}

/// Interior Halton points plus samples of the three edges.
pub(crate) fn spiral_validation_grid() -> Vec<SimplexPoint> {
    let mut pts = halton_simplex_points(3, 2000, 0.0);
    for k in 0..=200 {
        let t = k as f64 / 200.0;
        for (a, b) in [(0, 1), (1, 2), (0, 2)] {
            let mut v = DVector::zeros(3);
            v[a] = t;
            v[b] = 1.0 - t;
            pts.push(SimplexPoint::from_vector_unchecked(v));
        }
    }
    pts
}

fn validate_spiral(eta: f64, epsilon: f64, n: usize) -> Result<()> {
    check_len(n, 3)?;
    if !(eta.is_finite() && eta > 0.0 && epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "spiral needs eta > 0 and epsilon > 0, got {eta}, {epsilon}"
        )));
    }
    for x in spiral_validation_grid() {
        spiral_target(eta, epsilon, &x)?;
    }
    Ok(())
}

/// State-dependent generator `x -> L(x)`.
pub trait RateField: Send + Sync {
    fn dim(&self) -> usize;
    fn rate_matrix(&self, x: &SimplexPoint) -> Result<RateMatrix>;

    /// Invariant probability of `L(x)`.
    fn invariant(&self, x: &SimplexPoint) -> Result<SimplexPoint> {
        let l = self.rate_matrix(x)?;
        if !crate::markov::is_irreducible(&l) {
            return Err(Error::NotIrreducible);
        }
        solve_invariant(&l)
    }
}

/// State-dependent probability `x -> pi(x)`.
pub trait MeasureMap: Send + Sync {
    fn dim(&self) -> usize;
    fn measure(&self, x: &SimplexPoint) -> Result<SimplexPoint>;
}

impl RateField for Protocol {
    fn dim(&self) -> usize {
        self.n
    }

    fn rate_matrix(&self, x: &SimplexPoint) -> Result<RateMatrix> {
        Protocol::rate_matrix(self, x)
    }

    fn invariant(&self, x: &SimplexPoint) -> Result<SimplexPoint> {
        Protocol::invariant(self, x)
    }
}

/// `pi(x)` of a protocol: closed form when known, linear solve otherwise.
impl MeasureMap for Protocol {
    fn dim(&self) -> usize {
        self.n
    }

    fn measure(&self, x: &SimplexPoint) -> Result<SimplexPoint> {
        self.invariant(x)
    }
}

impl MeasureMap for Target {
    fn dim(&self) -> usize {
        self.n
    }

    fn measure(&self, x: &SimplexPoint) -> Result<SimplexPoint> {
        Target::measure(self, x)
    }
}

/// Adapter turning a closure into a `MeasureMap`.
pub struct MeasureFromFn<F> {
    pub n: usize,
    pub f: F,
}

impl<F> MeasureMap for MeasureFromFn<F>
where
    F: Fn(&SimplexPoint) -> Result<SimplexPoint> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.n
    }

    fn measure(&self, x: &SimplexPoint) -> Result<SimplexPoint> {
        (self.f)(x)
    }
}

/// Adapter turning a closure into a `RateField`.
pub struct RatesFromFn<F> {
    pub n: usize,
    pub f: F,
}

impl<F> RateField for RatesFromFn<F>
where
    F: Fn(&SimplexPoint) -> Result<RateMatrix> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.n
    }

    fn rate_matrix(&self, x: &SimplexPoint) -> Result<RateMatrix> {
        (self.f)(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::{invariant_probability, is_reversible};
    use crate::simplex::random_point_with_margin;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sym_random(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = lo + (hi - lo) * rng.random::<f64>();
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    #[test]
    fn zero_comparison_gives_identity() {
        let p = ProtocolSpec::Comparison {
            payoff: PayoffSpec::rock_paper_scissors(),
            attachment: AttachmentSpec::uniform(3),
            rule: ComparisonRule::Constant { value: 0.0 },
            rate_scale: None,
        }
        .build(3)
        .unwrap();
        let k = p.markov_kernel(&SimplexPoint::new(vec![0.2, 0.3, 0.5]).unwrap()).unwrap();
        assert_eq!(k.entries(), &DMatrix::identity(3, 3));
        assert_eq!(p.rate_matrix(&SimplexPoint::barycenter(3)).unwrap(), RateMatrix::zeros(3));
    }

    #[test]
    fn uniform_exponential_sampling_rows_are_logit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let payoff = PayoffSpec::linear(DMatrix::from_fn(4, 4, |_, _| rng.random::<f64>() - 0.5));
        let p = ProtocolSpec::Sampling {
            payoff: payoff.clone(),
            attachment: AttachmentSpec::uniform(4),
            rule: SamplingRule::Exponential { beta: 3.0 },
        }
        .build(4)
        .unwrap();
        let x = random_point_with_margin(&mut rng, 4, 0.01);
        let k = p.markov_kernel(&x).unwrap();
        let pi = logit_measure(&payoff, 3.0, &x).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((k.entries()[(i, j)] - pi.coords()[j]).abs() < 1e-15);
            }
        }
        assert!(matches!(p.target(), Some(TargetSpec::Logit { .. })));
    }

    #[test]
    fn sampling_degenerate_row_is_rejected() {
        let p = ProtocolSpec::Sampling {
            payoff: PayoffSpec::linear(DMatrix::from_element(2, 2, -1.0)),
            attachment: AttachmentSpec::uniform(2),
            rule: SamplingRule::PositivePart,
        }
        .build(2)
        .unwrap();
        assert!(matches!(
            p.markov_kernel(&SimplexPoint::barycenter(2)),
            Err(Error::DegenerateDenominator { row: 0, .. })
        ));
        let tiny = ProtocolSpec::Sampling {
            payoff: PayoffSpec::linear(DMatrix::from_element(2, 2, -1e4)),
            attachment: AttachmentSpec::uniform(2),
            rule: SamplingRule::Exponential { beta: 1.0 },
        }
        .build(2)
        .unwrap();
        assert!(matches!(
            tiny.markov_kernel(&SimplexPoint::barycenter(2)),
            Err(Error::DegenerateDenominator { .. })
        ));
    }

    #[test]
    fn rate_from_kernel_examples() {
        assert_eq!(rate_from_kernel(&MarkovMatrix::identity(3)), RateMatrix::zeros(3));
        let pi = SimplexPoint::new(vec![0.5, 0.3, 0.2]).unwrap();
        let k = MarkovMatrix::validate(DMatrix::from_fn(3, 3, |_, j| pi.coords()[j]), 1e-12).unwrap();
        let l = rate_from_kernel(&k);
        for i in 0..3 {
            assert!(l.entries().row(i).sum().abs() < 1e-15);
            assert!((l.entries()[(i, i)] - (pi.coords()[i] - 1.0)).abs() < 1e-15);
        }
        let got = invariant_probability(&l).unwrap();
        assert!(got.distance(&pi) < 1e-14);
    }

    #[test]
    fn gibbs_measure_examples() {
        let u0 = DVector::from_vec(vec![0.0, 1.0, 2.0]);
        let u = DMatrix::from_row_slice(3, 3, &[1., 2., 0., 2., -1., 3., 0., 3., 0.5]);
        let x = SimplexPoint::new(vec![0.1, 0.6, 0.3]).unwrap();
        let a = gibbs_measure(&u0, &u, 0.0, &x).unwrap();
        let b = gibbs_measure(&u0, &u, 0.0, &SimplexPoint::barycenter(3)).unwrap();
        assert_eq!(a, b);
        let z: f64 = (0..3).map(|i| (-u0[i]).exp()).sum();
        assert!((a.coords()[2] - (-2.0f64).exp() / z).abs() < 1e-15);

        let flat = gibbs_measure(&DVector::zeros(3), &DMatrix::zeros(3, 3), 7.0, &x).unwrap();
        assert_eq!(flat, SimplexPoint::barycenter(3));

        let hot = gibbs_measure(&u0, &u, 1e4, &x).unwrap();
        assert!(hot.is_interior() || hot.min_coord() >= 0.0);
        assert!((hot.coords().sum() - 1.0).abs() < 1e-15);
        assert!(hot.coords().iter().all(|v| v.is_finite()));

        // moderate beta: max-shift result equals the naive formula
        let beta = 2.0;
        let naive = (-(u0.clone() + &u * x.coords() * beta)).map(f64::exp);
        let naive = &naive / naive.sum();
        let shifted = gibbs_measure(&u0, &u, beta, &x).unwrap();
        assert!((shifted.coords() - naive).amax() < 1e-15);

        let asym = DMatrix::from_row_slice(3, 3, &[0., 1., 0., 0., 0., 0., 0., 0., 0.]);
        assert!(matches!(gibbs_measure(&u0, &asym, 1.0, &x), Err(Error::AsymmetricMatrix(_))));
    }

    #[test]
    fn logit_measure_examples() {
        let rps = PayoffSpec::rock_paper_scissors();
        let x = SimplexPoint::new(vec![0.7, 0.2, 0.1]).unwrap();
        assert_eq!(logit_measure(&rps, 0.0, &x).unwrap(), SimplexPoint::barycenter(3));
        for beta in [0.5, 5.0, 500.0] {
            let p = logit_measure(&rps, beta, &SimplexPoint::barycenter(3)).unwrap();
            assert!(p.distance(&SimplexPoint::barycenter(3)) < 1e-15);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = sym_random(&mut rng, 4, -1.0, 1.0);
        let pot = PayoffSpec::QuadraticPotential { coupling: u.clone() };
        let x = random_point_with_margin(&mut rng, 4, 0.0);
        let a = logit_measure(&pot, 2.5, &x).unwrap();
        let b = gibbs_measure(&DVector::zeros(4), &u, 2.5, &x).unwrap();
        assert!(a.distance(&b) < 1e-15);
    }

    #[test]
    fn vertex_reinforcement_examples() {
        let ones = DMatrix::from_element(3, 3, 1.0);
        let k = vertex_reinforcement_kernel(&ones, 1.0, &SimplexPoint::barycenter(3)).unwrap();
        assert!(k.entries().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let a = sym_random(&mut rng, 4, 0.2, 2.0);
            let gamma = 1.0 + 2.0 * rng.random::<f64>();
            let x = random_point_with_margin(&mut rng, 4, 0.01);
            let k = vertex_reinforcement_kernel(&a, gamma, &x).unwrap();
            for i in 0..4 {
                assert!((k.entries().row(i).sum() - 1.0).abs() < 1e-14);
            }
            let pi = vertex_reinforcement_invariant(&a, gamma, &x).unwrap();
            assert!(is_reversible(&rate_from_kernel(&k), &pi, 1e-14).unwrap());

            // pi = x for all-ones A and gamma = 1
            let same = vertex_reinforcement_invariant(&DMatrix::from_element(4, 4, 1.0), 1.0, &x).unwrap();
            assert!(same.distance(&x) < 1e-15);
        }

        // constant row sums at the barycenter give the uniform measure
        let a = DMatrix::from_row_slice(3, 3, &[1., 2., 3., 2., 3., 1., 3., 1., 2.]);
        let pi = vertex_reinforcement_invariant(&a, 2.0, &SimplexPoint::barycenter(3)).unwrap();
        assert!(pi.distance(&SimplexPoint::barycenter(3)) < 1e-15);

        let edge = SimplexPoint::new(vec![0.4, 0.0, 0.6]).unwrap();
        assert_eq!(vertex_reinforcement_invariant(&a, 1.5, &edge).unwrap().support(), vec![0, 2]);
    }

    #[test]
    fn reversible_rate_from_target_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let w = sym_random(&mut rng, 5, 0.5, 1.5);
        let pi = random_point_with_margin(&mut rng, 5, 0.02);
        let l = reversible_rate_from_target(&w, &pi).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let lhs = pi.coords()[i] * l.entries()[(i, j)];
                let rhs = pi.coords()[j] * l.entries()[(j, i)];
                if i != j {
                    assert!((lhs - rhs).abs() <= 1e-16);
                }
            }
        }
        assert!(invariant_probability(&l).unwrap().distance(&pi) < 1e-10);

        let l = reversible_rate_from_target(&DMatrix::from_element(4, 4, 1.0), &SimplexPoint::barycenter(4)).unwrap();
        for i in 0..4 {
            assert!((l.entries()[(i, i)] + 0.75).abs() < 1e-15);
        }
        let boundary = SimplexPoint::new(vec![0.5, 0.5, 0.0]).unwrap();
        assert!(matches!(
            reversible_rate_from_target(&DMatrix::from_element(3, 3, 1.0), &boundary),
            Err(Error::BoundaryPoint { .. })
        ));
    }

    #[test]
    fn reversible_comparison_families() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 4;
        let coupling = sym_random(&mut rng, n, -1.0, 1.0);
        let payoff = PayoffSpec::QuadraticPotential { coupling };
        let rules = [
            ComparisonRule::Logistic { beta: 2.0 },
            ComparisonRule::Metropolis { beta: 2.0 },
            ComparisonRule::Dissatisfaction { beta: 2.0 },
            ComparisonRule::Success { beta: 2.0 },
        ];
        let attachments = [
            AttachmentSpec::Constant {
                weights: sym_random(&mut rng, n, 0.1, 1.0),
            },
            AttachmentSpec::Imitative {
                factor: StrategyFactor::Power { exponent: 1.5 },
                base: sym_random(&mut rng, n, 0.1, 1.0),
            },
        ];
        for rule in rules {
            for att in &attachments {
                let p = ProtocolSpec::Comparison {
                    payoff: payoff.clone(),
                    attachment: att.clone(),
                    rule,
                    rate_scale: None,
                }
                .build(n)
                .unwrap();
                let target = p.target().expect("reversible family");
                for _ in 0..10 {
                    let x = random_point_with_margin(&mut rng, n, 0.01);
                    let l = p.rate_matrix(&x).unwrap();
                    let pi = target.measure(&x).unwrap();
                    assert!(is_reversible(&l, &pi, 1e-14).unwrap(), "{rule:?} {att:?}");
                    for i in 0..n {
                        assert!(l.entries()[(i, i)] >= -1.0 - 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn imitative_rates_vanish_towards_extinct_strategies() {
        let p = ProtocolSpec::Replicator {
            payoff: PayoffSpec::rock_paper_scissors(),
            rate_scale: None,
        }
        .build(3)
        .unwrap();
        let x = SimplexPoint::new(vec![0.3, 0.7, 0.0]).unwrap();
        let l = p.rate_matrix(&x).unwrap();
        for j in 0..3 {
            if j != 2 {
                assert_eq!(l.entries()[(j, 2)], 0.0);
            }
        }
        // mean field is the replicator equation scaled by R
        let r = p.rate_scale().unwrap();
        let x = SimplexPoint::new(vec![0.2, 0.5, 0.3]).unwrap();
        let f = l_apply(&p, &x);
        let u = PayoffSpec::rock_paper_scissors().eval(x.coords());
        let avg = u.dot(x.coords());
        for i in 0..3 {
            let rep = x.coords()[i] * (u[i] - avg);
            assert!((f[i] - r * rep).abs() < 1e-15);
        }
    }

    fn l_apply(p: &Protocol, x: &SimplexPoint) -> DVector<f64> {
        p.rate_matrix(x).unwrap().left_apply(x.coords())
    }

    #[test]
    fn explicit_rate_scale_is_checked() {
        let err = ProtocolSpec::Comparison {
            payoff: PayoffSpec::rock_paper_scissors(),
            attachment: AttachmentSpec::uniform(3),
            rule: ComparisonRule::Success { beta: 1.0 },
            rate_scale: Some(10.0),
        }
        .build(3);
        assert!(matches!(err, Err(Error::RowOverflow { .. })));
    }

    #[test]
    fn factor_integrals_match_quadrature() {
        let factors = [
            StrategyFactor::Power { exponent: 2.0 },
            StrategyFactor::ExpConstant {
                offsets: vec![0.3, -1.2],
            },
        ];
        for f in factors {
            for &x in &[0.05, 0.4, 1.0] {
                let q = quadrature::integrate(|u| f.ln_eval(1, u), x, 1.0, 1e-13).integral;
                assert!((f.log_integral(1, x) + q).abs() < 1e-10, "{f:?} {x}");
            }
        }
        // affine f = 1 + t: int_1^x log(1+u) du in closed form
        let aff = StrategyFactor::Affine {
            intercept: 1.0,
            slope: 1.0,
        };
        let closed = |x: f64| (1.0 + x) * (1.0 + x).ln() - x - (2.0 * 2f64.ln() - 1.0);
        for &x in &[0.01, 0.5, 0.9] {
            assert!((aff.log_integral(0, x) - closed(x)).abs() < 1e-10);
        }
    }

    #[test]
    fn custom_potential_gradient_is_verified() {
        struct Cubic;
        impl Potential for Cubic {
            fn value(&self, x: &DVector<f64>) -> f64 {
                x.iter().map(|v| v.powi(3)).sum()
            }
            fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
                x.map(|v| 3.0 * v * v)
            }
        }
        struct Wrong;
        impl Potential for Wrong {
            fn value(&self, x: &DVector<f64>) -> f64 {
                x.iter().map(|v| v.powi(3)).sum()
            }
            fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
                x.map(|v| 2.0 * v)
            }
        }
        assert!(PayoffSpec::from_potential(Cubic).validate(3).is_ok());
        assert!(PayoffSpec::from_potential(Wrong).validate(3).is_err());
    }

    #[test]
    fn spiral_target_stays_inside() {
        assert!(TargetSpec::Spiral { eta: 0.05, epsilon: 0.1 }.validate(3).is_ok());
        assert!(matches!(
            TargetSpec::Spiral { eta: 0.05, epsilon: 5.0 }.validate(3),
            Err(Error::EpsilonTooLarge(_))
        ));
        let g = spiral_field(0.05, SimplexPoint::barycenter(3).coords());
        assert!(g.amax() < 1e-16);
        // on the boundary the field points straight at the barycenter
        let x = DVector::from_vec(vec![0.6, 0.4, 0.0]);
        let g = spiral_field(0.05, &x);
        assert!((g - (DVector::from_element(3, 1.0 / 3.0) - &x)).amax() < 1e-15);
    }

    #[test]
    fn protocol_spec_json_round_trip() {
        let spec = ProtocolSpec::Comparison {
            payoff: PayoffSpec::QuadraticPotential {
                coupling: DMatrix::from_row_slice(2, 2, &[0.1, -0.3, -0.3, 2.5]),
            },
            attachment: AttachmentSpec::imitative(DMatrix::from_element(2, 2, 1.0)),
            rule: ComparisonRule::Metropolis { beta: 1.7 },
            rate_scale: Some(0.125),
        };
        let s = serde_json::to_string(&spec).unwrap();
        let back: ProtocolSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, spec);
        assert!(serde_json::from_str::<ProtocolSpec>(r#"{"kind":"teleport"}"#).is_err());
    }
}
