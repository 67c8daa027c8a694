//! Finite differences for maps defined on (a neighborhood of) the simplex.
//!
//! Maps are probed at `p +- h d` along tangent directions `d`. Points just
//! outside the simplex are passed through when the map accepts them;
//! otherwise the stencil falls back to one-sided second-order formulas and
//! finally to smaller steps.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::simplex::{ChartProjection, SimplexPoint};

/// Default relative step for first derivatives.
pub const FD_STEP: f64 = 1e-6;

fn probe<F>(f: &F, p: &DVector<f64>, dir: &DVector<f64>, s: f64) -> Result<DVector<f64>>
where
    F: Fn(&SimplexPoint) -> Result<DVector<f64>>,
{
    let x = SimplexPoint::from_vector_unchecked(p + dir * s);
    let v = f(&x)?;
    if v.iter().all(|c| c.is_finite()) {
        Ok(v)
    } else {
        Err(Error::DomainViolation("non-finite value".into()))
    }
}

/// Derivative of `f` at `p` along `dir`.
///
/// Central differences; when the stencil leaves the domain of `f` the step
/// is halved until it fits and then shrunk by a further factor 16 so that it
/// stays small against the distance to the boundary. One-sided second-order
/// stencils are the last resort.
pub fn directional_derivative<F>(f: &F, p: &DVector<f64>, dir: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: Fn(&SimplexPoint) -> Result<DVector<f64>>,
{
    let central = |h: f64| -> Result<DVector<f64>> { Ok((probe(f, p, dir, h)? - probe(f, p, dir, -h)?) / (2.0 * h)) };
    let mut last_err = match central(h) {
        Ok(d) => return Ok(d),
        Err(e) => e,
    };
    let mut hk = h;
    for _ in 0..40 {
        hk *= 0.5;
        if central(hk).is_ok() {
            let mut best = central(hk)?;
            for _ in 0..4 {
                hk *= 0.5;
                match central(hk) {
                    Ok(d) => best = d,
                    Err(_) => break,
                }
            }
            return Ok(best);
        }
    }
    for sign in [1.0, -1.0] {
        let one_sided = (|| {
            let f0 = probe(f, p, dir, 0.0)?;
            let f1 = probe(f, p, dir, sign * h)?;
            let f2 = probe(f, p, dir, sign * 2.0 * h)?;
            Ok::<_, Error>((f1 * 4.0 - f0 * 3.0 - f2) / (2.0 * h * sign))
        })();
        match one_sided {
            Ok(d) => return Ok(d),
            Err(e) => last_err = e,
        }
    }
    Err(last_err)
}

/// `h = FD_STEP * max(1, |p|)`.
pub fn default_step(p: &DVector<f64>) -> f64 {
    FD_STEP * p.norm().max(1.0)
}

/// Columns are derivatives of `f` along the chart basis vectors.
pub fn chart_derivatives<F>(f: &F, p: &SimplexPoint, chart: &ChartProjection, h: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&SimplexPoint) -> Result<DVector<f64>>,
{
    let m = chart.chart_dim();
    let mut cols = Vec::with_capacity(m);
    for a in 0..m {
        cols.push(directional_derivative(f, p.coords(), &chart.basis_vector(a), h)?);
    }
    let rows = cols.first().map_or(p.dim(), |c| c.len());
    Ok(DMatrix::from_fn(rows, m, |i, a| cols[a][i]))
}

/// Chart matrix of the derivative of a tangent-valued map.
pub fn chart_jacobian<F>(f: &F, p: &SimplexPoint, chart: &ChartProjection, h: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&SimplexPoint) -> Result<DVector<f64>>,
{
    Ok(chart.project_matrix() * chart_derivatives(f, p, chart, h)?)
}

/// Second derivative of a scalar map along tangent directions `u`, `v`.
pub fn mixed_second_derivative<F>(f: &F, p: &DVector<f64>, u: &DVector<f64>, v: &DVector<f64>, h: f64) -> Result<f64>
where
    F: Fn(&SimplexPoint) -> Result<f64>,
{
    let at = |a: f64, b: f64| -> Result<f64> {
        let x = SimplexPoint::from_vector_unchecked(p + u * a + v * b);
        let y = f(&x)?;
        if y.is_finite() {
            Ok(y)
        } else {
            Err(Error::DomainViolation("non-finite value".into()))
        }
    };
    Ok((at(h, h)? - at(h, -h)? - at(-h, h)? + at(-h, -h)?) / (4.0 * h * h))
}

/// Chart index omitting the largest coordinate of `p`; keeps stencils well
/// inside the simplex near faces.
pub fn chart_for(p: &SimplexPoint) -> ChartProjection {
    let n = p.dim();
    let drop = p.coords().imax();
    ChartProjection { n, drop_index: drop }
}
