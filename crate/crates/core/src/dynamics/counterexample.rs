//! A reversible generator on the 2-simplex whose relaxation field has a
//! globally attracting barycenter while the generator field spirals out of
//! it onto a limit cycle.

use nalgebra::DMatrix;

use super::VectorFieldSpec;
use crate::error::Result;
use crate::protocols::{Protocol, ProtocolSpec, TargetSpec};
use crate::simplex::SimplexPoint;

#[derive(Clone, Debug)]
pub struct Counterexample {
    pub eta: f64,
    pub epsilon: f64,
    pub weights: DMatrix<f64>,
    pub protocol: Protocol,
    /// `x L(x)` with `L_ij = W_ij pi_j(x)`.
    pub field: VectorFieldSpec,
    /// `-x + pi(x) = epsilon G(x)`.
    pub pi_field: VectorFieldSpec,
}

impl Counterexample {
    pub fn equilibrium(&self) -> SimplexPoint {
        SimplexPoint::barycenter(3)
    }

    /// Closed-form trace of the chart Jacobian of the generator field at
    /// the barycenter.
    pub fn predicted_trace(&self) -> f64 {
        let s = self.epsilon / 3.0;
        let (b, c, d) = (s * self.weights[(0, 1)], s * self.weights[(0, 2)], s * self.weights[(1, 2)]);
        (c - d) - 2.0 * self.eta * (b + c + d)
    }
}

/// `pi(x) = x + epsilon G(x)` with `G` the blended spiral; fails with
/// `EpsilonTooLarge` when `pi` leaves the open simplex on the validation grid.
pub fn build_counterexample(eta: f64, epsilon: f64, weights: DMatrix<f64>) -> Result<Counterexample> {
    let target = TargetSpec::Spiral { eta, epsilon };
    let protocol = ProtocolSpec::ReversibleFromTarget {
        weights: weights.clone(),
        target: target.clone(),
    }
    .build(3)?;
    let field = VectorFieldSpec::generator(protocol.clone());
    let pi_field = VectorFieldSpec::pi_field(target.build(3)?);
    Ok(Counterexample {
        eta,
        epsilon,
        weights,
        protocol,
        field,
        pi_field,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{classify_equilibrium, jacobian, Stability, HYPERBOLICITY_THRESHOLD};
    use crate::error::Error;
    use crate::simplex::ChartProjection;

    fn weights() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[0., 1., 2., 1., 0., 1., 2., 1., 0.])
    }

    #[test]
    fn linearization_of_the_spiral_is_exact() {
        let ce = build_counterexample(0.05, 0.1, weights()).unwrap();
        let p = ce.equilibrium();
        let j = jacobian(&ce.pi_field, &p, &ChartProjection::last(3)).unwrap() / ce.epsilon;
        let m = DMatrix::from_row_slice(2, 2, &[-0.05, -1.0, 1.0, -0.05]);
        assert!((j - m).amax() < 1e-8);
    }

    #[test]
    fn generator_trace_matches_the_product_form() {
        let ce = build_counterexample(0.05, 0.1, weights()).unwrap();
        let p = ce.equilibrium();
        let j = jacobian(&ce.field, &p, &ChartProjection::last(3)).unwrap();
        // independent oracle: -(eps/3) W restricted to the chart times eps M
        let s = 0.1 / 3.0;
        let (b, c, d) = (s, 2.0 * s, s);
        let a = DMatrix::from_row_slice(2, 2, &[b + 2.0 * c, c - b, d - b, b + 2.0 * d]);
        let m = DMatrix::from_row_slice(2, 2, &[-0.05, -1.0, 1.0, -0.05]);
        let oracle = &a * &m;
        assert!((j.trace() - oracle.trace()).abs() < 1e-8);
        assert!((ce.predicted_trace() - 0.02).abs() < 1e-15);
        assert!((j.trace() - 0.02).abs() < 1e-8);
    }

    #[test]
    fn relaxation_is_stable_and_generator_is_not() {
        let ce = build_counterexample(0.05, 0.1, weights()).unwrap();
        let p = ce.equilibrium();
        let rp = classify_equilibrium(&ce.pi_field, &p, HYPERBOLICITY_THRESHOLD).unwrap();
        assert_eq!(rp.classification, Stability::Sink);
        let rf = classify_equilibrium(&ce.field, &p, HYPERBOLICITY_THRESHOLD).unwrap();
        assert_eq!(rf.classification, Stability::Source);
        assert!(rf.jacobian_spectrum.iter().all(|e| e.re > 0.0 && e.im.abs() > 0.0));
    }

    #[test]
    fn oversized_epsilon_is_rejected() {
        assert!(matches!(
            build_counterexample(0.05, 10.0, weights()),
            Err(Error::EpsilonTooLarge(_))
        ));
    }
}
