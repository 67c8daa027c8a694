//! Mean-field vector fields on the simplex and their flows.
//!
//! Two fields are attached to a state-dependent generator `L(x)` with
//! invariant probability `pi(x)`: the generator field `F(x) = x L(x)` and
//! the relaxation field `F_pi(x) = -x + pi(x)`. They share their interior
//! zeros.

mod counterexample;
mod equilibria;
mod integrate;
mod limit;

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::markov::RateMatrix;
use crate::protocols::{MeasureMap, PayoffSpec, Protocol, RateField, Target};
use crate::simplex::{project_onto_simplex, SimplexPoint, TangentVector};

pub use counterexample::{build_counterexample, Counterexample};
pub use equilibria::{
    classify_equilibrium, find_equilibria, jacobian, jacobian_factorized, Eigenvalue, EquilibriumReport,
    EquilibriumSearch, JacobianPair, NewtonOptions, Stability, HYPERBOLICITY_THRESHOLD,
};
pub use integrate::{integrate, SampleGrid, StepperOptions, Trajectory};
pub use limit::{omega_limit_summary, OmegaLimit, OmegaOptions};

pub type FieldFn = dyn Fn(&SimplexPoint) -> Result<DVector<f64>> + Send + Sync;

/// A vector field on the simplex.
#[derive(Clone)]
pub enum VectorFieldSpec {
    /// `F(x) = x L(x)`
    Generator(Arc<dyn RateField>),
    /// `F_pi(x) = -x + pi(x)`
    Pi(Arc<dyn MeasureMap>),
    /// `F_i(x) = x_i (U_i(x) - <x, U(x)>)`
    Replicator { payoff: PayoffSpec, n: usize },
    /// Caller-supplied field; `interior_only` rejects boundary points.
    Explicit {
        n: usize,
        interior_only: bool,
        field: Arc<FieldFn>,
    },
}

impl fmt::Debug for VectorFieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VectorFieldSpec::Generator(r) => write!(f, "Generator(n = {})", r.dim()),
            VectorFieldSpec::Pi(m) => write!(f, "Pi(n = {})", m.dim()),
            VectorFieldSpec::Replicator { n, .. } => write!(f, "Replicator(n = {n})"),
            VectorFieldSpec::Explicit { n, .. } => write!(f, "Explicit(n = {n})"),
        }
    }
}

impl VectorFieldSpec {
    pub fn generator(protocol: Protocol) -> Self {
        VectorFieldSpec::Generator(Arc::new(protocol))
    }

    /// `-x + pi(x)` with `pi` the invariant probability of the protocol.
    pub fn pi_of_protocol(protocol: Protocol) -> Self {
        VectorFieldSpec::Pi(Arc::new(protocol))
    }

    pub fn pi_field(target: Target) -> Self {
        VectorFieldSpec::Pi(Arc::new(target))
    }

    pub fn replicator(payoff: PayoffSpec, n: usize) -> Result<Self> {
        payoff.validate(n)?;
        Ok(VectorFieldSpec::Replicator { payoff, n })
    }

    pub fn explicit<F>(n: usize, interior_only: bool, f: F) -> Self
    where
        F: Fn(&SimplexPoint) -> Result<DVector<f64>> + Send + Sync + 'static,
    {
        VectorFieldSpec::Explicit {
            n,
            interior_only,
            field: Arc::new(f),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            VectorFieldSpec::Generator(r) => r.dim(),
            VectorFieldSpec::Pi(m) => m.dim(),
            VectorFieldSpec::Replicator { n, .. } | VectorFieldSpec::Explicit { n, .. } => *n,
        }
    }

    /// Field value without the tangency check. Accepts points slightly
    /// outside the simplex when the underlying formulas do.
    pub fn eval_raw(&self, x: &SimplexPoint) -> Result<DVector<f64>> {
        match self {
            VectorFieldSpec::Generator(r) => Ok(r.rate_matrix(x)?.left_apply(x.coords())),
            VectorFieldSpec::Pi(m) => Ok(m.measure(x)?.coords() - x.coords()),
            VectorFieldSpec::Replicator { payoff, .. } => {
                let u = payoff.eval(x.coords());
                let avg = u.dot(x.coords());
                Ok(x.coords().component_mul(&u.map(|v| v - avg)))
            }
            VectorFieldSpec::Explicit {
                interior_only, field, ..
            } => {
                if *interior_only && !x.is_interior() {
                    return Err(Error::DomainViolation(format!(
                        "field is defined on the interior only; min coordinate {:e}",
                        x.min_coord()
                    )));
                }
                field(x)
            }
        }
    }

    /// Evaluates the field at a point whose negative roundoff has been
    /// clipped by the Euclidean retraction onto the simplex.
    pub(crate) fn eval_retracted(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.iter().all(|v| *v >= 0.0) {
            self.eval_raw(&SimplexPoint::from_vector_unchecked(y.clone()))
        } else {
            self.eval_raw(&project_onto_simplex(y))
        }
    }

    /// `pi(x)` for generator and relaxation fields.
    pub fn measure(&self, x: &SimplexPoint) -> Option<Result<SimplexPoint>> {
        match self {
            VectorFieldSpec::Generator(r) => Some(r.invariant(x)),
            VectorFieldSpec::Pi(m) => Some(m.measure(x)),
            _ => None,
        }
    }

    /// `L(x)` for generator fields.
    pub fn rate_matrix(&self, x: &SimplexPoint) -> Option<Result<RateMatrix>> {
        match self {
            VectorFieldSpec::Generator(r) => Some(r.rate_matrix(x)),
            _ => None,
        }
    }

    /// Relaxation field `-x + pi(x)` sharing `pi` with this field.
    pub fn companion_pi_field(&self) -> Option<VectorFieldSpec> {
        match self {
            VectorFieldSpec::Generator(r) => {
                let r = Arc::clone(r);
                let n = r.dim();
                Some(VectorFieldSpec::Pi(Arc::new(crate::protocols::MeasureFromFn {
                    n,
                    f: move |x: &SimplexPoint| r.invariant(x),
                })))
            }
            VectorFieldSpec::Pi(_) => Some(self.clone()),
            _ => None,
        }
    }
}

/// `F(x)` as a tangent vector.
pub fn eval_field(spec: &VectorFieldSpec, x: &SimplexPoint) -> Result<TangentVector> {
    if x.dim() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            found: x.dim(),
        });
    }
    let v = spec.eval_raw(x).map_err(|e| match e {
        Error::BoundaryPoint { index, value } => Error::DomainViolation(format!(
            "coordinate {index} is {value:e} but the field needs interior points"
        )),
        other => other,
    })?;
    TangentVector::new(v)
}

/// CSV with header `t,x1,..,xn` and 17 significant digits.
pub fn trajectory_to_csv(traj: &Trajectory) -> String {
    let n = traj.states.first().map_or(0, |s| s.dim());
    let mut out = String::from("t");
    for i in 1..=n {
        out.push_str(&format!(",x{i}"));
    }
    out.push('\n');
    for (t, x) in traj.times.iter().zip(&traj.states) {
        out.push_str(&format!("{t:.16e}"));
        for v in x.as_slice() {
            out.push_str(&format!(",{v:.16e}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::{AttachmentSpec, ComparisonRule, ProtocolSpec, TargetSpec};
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fields_vanish_at_fixed_points_and_are_tangent() {
        let pi = SimplexPoint::new(vec![0.2, 0.5, 0.3]).unwrap();
        let f = VectorFieldSpec::pi_field(TargetSpec::Constant { pi: pi.clone() }.build(3).unwrap());
        assert!(eval_field(&f, &pi).unwrap().norm() == 0.0);

        let p = ProtocolSpec::Comparison {
            payoff: PayoffSpec::rock_paper_scissors(),
            attachment: AttachmentSpec::uniform(3),
            rule: ComparisonRule::Logistic { beta: 2.0 },
            rate_scale: None,
        }
        .build(3)
        .unwrap();
        let g = VectorFieldSpec::generator(p);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let x = crate::simplex::random_simplex_point(&mut rng, 3);
            let v = eval_field(&g, &x).unwrap();
            assert!(v.coords().sum().abs() < 1e-15);
        }
    }

    #[test]
    fn replicator_rps_barycenter_is_zero() {
        let f = VectorFieldSpec::replicator(PayoffSpec::rock_paper_scissors(), 3).unwrap();
        let v = eval_field(&f, &SimplexPoint::barycenter(3)).unwrap();
        assert_eq!(v.norm(), 0.0);
        // the interior zero is unique: elsewhere the field is nonzero
        let x = SimplexPoint::new(vec![0.3, 0.3, 0.4]).unwrap();
        assert!(eval_field(&f, &x).unwrap().norm() > 1e-3);
    }

    #[test]
    fn interior_only_field_rejects_boundary() {
        let f = VectorFieldSpec::explicit(2, true, |x: &SimplexPoint| Ok(x.coords().map(|v| v.ln()) * 0.0));
        let b = SimplexPoint::vertex(2, 0);
        assert!(matches!(eval_field(&f, &b), Err(Error::DomainViolation(_))));
        let w = DMatrix::from_element(2, 2, 1.0);
        let l = crate::protocols::reversible_rate_from_target(&w, &SimplexPoint::barycenter(2)).unwrap();
        assert_eq!(l.dim(), 2);
    }

    #[test]
    fn csv_has_header_and_full_precision() {
        let traj = Trajectory {
            times: vec![0.0, 0.5],
            states: vec![SimplexPoint::barycenter(2), SimplexPoint::new(vec![0.1, 0.9]).unwrap()],
            ..Trajectory::default()
        };
        let csv = trajectory_to_csv(&traj);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("t,x1,x2"));
        let row: Vec<f64> = lines.nth(1).unwrap().split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(row, vec![0.5, 0.1, 0.9]);
    }
}
