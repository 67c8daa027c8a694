//! Dormand-Prince 5(4) with dense output, projected onto the simplex after
//! every accepted step.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::VectorFieldSpec;
use crate::error::{Error, Result};
use crate::simplex::SimplexPoint;

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
/// Dense output weights.
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

/// Where the trajectory records states.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SampleGrid {
    /// Every accepted step.
    #[default]
    Steps,
    /// `0, dt, 2 dt, ..` up to the final time (inclusive).
    Every { dt: f64 },
    /// Explicit increasing times in `[0, T]`.
    Times { times: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepperOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: Option<f64>,
    pub h_min: f64,
    pub h_max: f64,
    pub max_steps: usize,
    /// Negative coordinates of at most this size are clipped after a step.
    pub clamp_tol: f64,
    pub samples: SampleGrid,
}

impl Default for StepperOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            h_init: None,
            h_min: 1e-13,
            h_max: f64::INFINITY,
            max_steps: 5_000_000,
            clamp_tol: 1e-12,
            samples: SampleGrid::Steps,
        }
    }
}

impl StepperOptions {
    pub fn sampled_every(dt: f64) -> Self {
        Self {
            samples: SampleGrid::Every { dt },
            ..Self::default()
        }
    }

    pub fn with_tolerances(mut self, rtol: f64, atol: f64) -> Self {
        self.rtol = rtol;
        self.atol = atol;
        self
    }
}

/// Sampled solution `x(t)` with stepper statistics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SimplexPoint>,
    /// Accepted step sizes.
    pub step_sizes: Vec<f64>,
    /// Scaled error estimates of the accepted steps.
    pub error_estimates: Vec<f64>,
    pub rejected_steps: usize,
    pub evaluations: usize,
}

impl Trajectory {
    pub fn last(&self) -> Option<&SimplexPoint> {
        self.states.last()
    }

    pub fn final_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }
}

fn sample_times(grid: &SampleGrid, t_end: f64) -> Result<Vec<f64>> {
    match grid {
        SampleGrid::Steps => Ok(Vec::new()),
        SampleGrid::Every { dt } => {
            if !(dt.is_finite() && *dt > 0.0) {
                return Err(Error::InvalidParameter(format!("sample spacing {dt}")));
            }
            let m = (t_end / dt * (1.0 + 1e-12)).floor() as usize;
            let mut ts: Vec<f64> = (0..=m).map(|k| k as f64 * dt).collect();
            if (t_end - ts[m]).abs() > 1e-9 * dt {
                ts.push(t_end);
            }
            *ts.last_mut().expect("nonempty") = ts.last().copied().expect("nonempty").min(t_end);
            Ok(ts)
        }
        SampleGrid::Times { times } => {
            if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| *t < 0.0 || *t > t_end) {
                return Err(Error::InvalidParameter(
                    "sample times must increase within [0, T]".into(),
                ));
            }
            Ok(times.clone())
        }
    }
}

/// Clips roundoff-sized negatives and renormalizes; `None` on a larger
/// excursion.
fn project_step(y: &DVector<f64>, clamp_tol: f64) -> Option<DVector<f64>> {
    if y.iter().any(|v| !v.is_finite() || *v < -clamp_tol) {
        return None;
    }
    let mut z = y.map(|v| v.max(0.0));
    let s = z.sum();
    if s <= 0.0 {
        return None;
    }
    z /= s;
    Some(z)
}

fn dense_point(y0: &DVector<f64>, cont: &[DVector<f64>; 4], theta: f64) -> SimplexPoint {
    let th1 = 1.0 - theta;
    let y = y0 + (&cont[0] + (&cont[1] + (&cont[2] + &cont[3] * th1) * theta) * th1) * theta;
    let mut z = y.map(|v| v.max(0.0));
    z /= z.sum();
    SimplexPoint::from_vector_unchecked(z)
}

/// Integrates `x' = F(x)` on `[0, t_end]` from `x0`.
pub fn integrate(spec: &VectorFieldSpec, x0: &SimplexPoint, t_end: f64, opts: &StepperOptions) -> Result<Trajectory> {
    let n = spec.dim();
    if x0.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: x0.dim(),
        });
    }
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(Error::InvalidParameter(format!("final time must be positive, got {t_end}")));
    }
    let samples = sample_times(&opts.samples, t_end)?;
    let mut next_sample = 0;
    let mut traj = Trajectory::default();
    let record_steps = matches!(opts.samples, SampleGrid::Steps);
    if record_steps || samples.first() == Some(&0.0) {
        traj.times.push(0.0);
        traj.states.push(x0.clone());
        next_sample = usize::from(!record_steps);
    }

    let mut t = 0.0;
    let mut y = x0.coords().clone();
    let mut k: Vec<DVector<f64>> = vec![DVector::zeros(n); 7];
    k[0] = spec.eval_retracted(&y)?;
    traj.evaluations += 1;

    let scale = |a: &DVector<f64>, b: &DVector<f64>| -> DVector<f64> {
        DVector::from_fn(n, |i, _| opts.atol + opts.rtol * a[i].abs().max(b[i].abs()))
    };
    let mut h = match opts.h_init {
        Some(h) => h,
        None => {
            // standard starting-step heuristic
            let sc = scale(&y, &y);
            let d0 = (y.component_div(&sc)).norm() / (n as f64).sqrt();
            let d1 = (k[0].component_div(&sc)).norm() / (n as f64).sqrt();
            let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
            h0.min(t_end).min(opts.h_max)
        }
    };
    let mut last_rejected = false;

    while t < t_end {
        if traj.step_sizes.len() + traj.rejected_steps >= opts.max_steps {
            return Err(Error::StepsizeUnderflow { t, h });
        }
        if h < opts.h_min {
            return Err(Error::StepsizeUnderflow { t, h });
        }
        let h_step = h.min(t_end - t);
        let mut stage_failed = false;
        for s in 1..7 {
            let mut ys = y.clone();
            for (j, kj) in k.iter().enumerate().take(s) {
                if A[s][j] != 0.0 {
                    ys += kj * (h_step * A[s][j]);
                }
            }
            match spec.eval_retracted(&ys) {
                Ok(v) if v.iter().all(|c| c.is_finite()) => k[s] = v,
                _ => {
                    stage_failed = true;
                    break;
                }
            }
            traj.evaluations += 1;
        }
        if stage_failed {
            h *= 0.5;
            traj.rejected_steps += 1;
            last_rejected = true;
            continue;
        }
        let mut y_new = y.clone();
        let mut err_vec = DVector::zeros(n);
        for s in 0..7 {
            if s < 6 && A[6][s] != 0.0 {
                y_new += &k[s] * (h_step * A[6][s]);
            }
            if E[s] != 0.0 {
                err_vec += &k[s] * (h_step * E[s]);
            }
        }
        let sc = scale(&y, &y_new);
        let err = (err_vec.component_div(&sc)).norm() / (n as f64).sqrt();
        if !err.is_finite() || err > 1.0 {
            let fac = if err.is_finite() {
                (0.9 * err.powf(-0.2)).max(0.2)
            } else {
                0.2
            };
            h *= fac;
            traj.rejected_steps += 1;
            last_rejected = true;
            continue;
        }
        let projected = match project_step(&y_new, opts.clamp_tol) {
            Some(p) => p,
            None => {
                h *= 0.5;
                traj.rejected_steps += 1;
                last_rejected = true;
                continue;
            }
        };
        let clipped = y_new.iter().any(|v| *v < 0.0);
        let t_new = if h_step == t_end - t { t_end } else { t + h_step };

        // dense output on the unprojected polynomial
        if !record_steps {
            let c1 = &y_new - &y;
            let c2 = &k[0] * h_step - &c1;
            let c3 = &c1 - &k[6] * h_step - &c2;
            let mut c4 = DVector::zeros(n);
            for s in 0..7 {
                if D[s] != 0.0 {
                    c4 += &k[s] * (h_step * D[s]);
                }
            }
            let cont = [c1, c2, c3, c4];
            while next_sample < samples.len() && samples[next_sample] <= t_new {
                let ts = samples[next_sample];
                let theta = ((ts - t) / h_step).clamp(0.0, 1.0);
                traj.times.push(ts);
                traj.states.push(if ts == t_new {
                    SimplexPoint::from_vector_unchecked(projected.clone())
                } else {
                    dense_point(&y, &cont, theta)
                });
                next_sample += 1;
            }
        }

        t = t_new;
        y = projected;
        traj.step_sizes.push(h_step);
        traj.error_estimates.push(err);
        if record_steps {
            traj.times.push(t);
            traj.states.push(SimplexPoint::from_vector_unchecked(y.clone()));
        }
        if clipped {
            k[0] = spec.eval_retracted(&y)?;
            traj.evaluations += 1;
        } else {
            k[0] = k[6].clone();
        }

        let mut fac = if err == 0.0 { 10.0 } else { 0.9 * err.powf(-0.2) };
        fac = fac.clamp(0.2, 10.0);
        if last_rejected {
            fac = fac.min(1.0);
        }
        last_rejected = false;
        h = (h_step * fac).min(opts.h_max);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::TargetSpec;

    #[test]
    fn constant_target_has_exponential_solution() {
        let pi = SimplexPoint::new(vec![0.2, 0.3, 0.5]).unwrap();
        let f = VectorFieldSpec::pi_field(TargetSpec::Constant { pi: pi.clone() }.build(3).unwrap());
        let x0 = SimplexPoint::new(vec![0.9, 0.05, 0.05]).unwrap();
        let opts = StepperOptions {
            samples: SampleGrid::Times {
                times: vec![0.5, 1.0, 5.0],
            },
            ..StepperOptions::default()
        };
        let traj = integrate(&f, &x0, 5.0, &opts).unwrap();
        assert_eq!(traj.times, vec![0.5, 1.0, 5.0]);
        for (t, x) in traj.times.iter().zip(&traj.states) {
            let exact = pi.coords() + (x0.coords() - pi.coords()) * (-t).exp();
            assert!((x.coords() - exact).amax() < 1e-8, "t = {t}");
        }
    }

    #[test]
    fn uniform_grid_includes_endpoints() {
        let ts = sample_times(&SampleGrid::Every { dt: 0.1 }, 1.0).unwrap();
        assert_eq!(ts.len(), 11);
        assert_eq!(*ts.last().unwrap(), 1.0);
        let ts = sample_times(&SampleGrid::Every { dt: 0.3 }, 1.0).unwrap();
        assert_eq!(ts.len(), 5);
        assert!(sample_times(&SampleGrid::Times { times: vec![0.5, 0.2] }, 1.0).is_err());
    }

    #[test]
    fn rejects_bad_horizon() {
        let f = VectorFieldSpec::pi_field(
            TargetSpec::Constant {
                pi: SimplexPoint::barycenter(2),
            }
            .build(2)
            .unwrap(),
        );
        assert!(integrate(&f, &SimplexPoint::barycenter(2), -1.0, &StepperOptions::default()).is_err());
    }
}
