//! Classification of the tail of a trajectory: fixed point, periodic orbit
//! or undecided.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::simplex::SimplexPoint;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OmegaOptions {
    /// Initial transient ignored by the analysis.
    pub burn_in: f64,
    /// Length of the analysed tail.
    pub window: f64,
    /// Tail diameter below which the trajectory has settled.
    pub fixed_tol: f64,
    /// Spread allowed between successive section crossings.
    pub return_tol: f64,
    /// The same spread relative to the tail diameter; rejects slowly
    /// contracting or expanding spirals whose crossings drift.
    pub relative_return_tol: f64,
    /// Relative spread allowed between successive return times.
    pub period_rel_tol: f64,
    /// Minimum number of section crossings for a periodic verdict.
    pub min_returns: usize,
}

impl Default for OmegaOptions {
    fn default() -> Self {
        Self {
            burn_in: 0.0,
            window: 50.0,
            fixed_tol: 1e-6,
            return_tol: 1e-4,
            relative_return_tol: 1e-2,
            period_rel_tol: 0.01,
            min_returns: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum OmegaLimit {
    FixedPoint {
        point: SimplexPoint,
        diameter: f64,
    },
    Periodic {
        period: f64,
        /// Section crossings, one per revolution.
        orbit_sample: Vec<SimplexPoint>,
        return_spread: f64,
        period_spread: f64,
    },
    Undecided {
        reason: String,
    },
}

impl OmegaLimit {
    pub fn verdict(&self) -> &'static str {
        match self {
            OmegaLimit::FixedPoint { .. } => "fixed-point",
            OmegaLimit::Periodic { .. } => "periodic",
            OmegaLimit::Undecided { .. } => "undecided",
        }
    }

    pub fn period(&self) -> Option<f64> {
        match self {
            OmegaLimit::Periodic { period, .. } => Some(*period),
            _ => None,
        }
    }
}

/// Max over coordinates of the range of values in the tail.
fn sup_diameter(states: &[&DVector<f64>]) -> f64 {
    let n = states[0].len();
    (0..n)
        .map(|i| {
            let (lo, hi) = states
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s[i]), hi.max(s[i])));
            hi - lo
        })
        .fold(0.0, f64::max)
}

/// Looks at the part of `traj` after `t_end - window`.
///
/// A small tail diameter gives a fixed point. Otherwise a Poincare section
/// is placed through the tail mean with normal equal to the velocity at the
/// last tail sample; upward crossings that agree in position and return time
/// give a periodic orbit.
pub fn omega_limit_summary(traj: &Trajectory, opts: &OmegaOptions) -> OmegaLimit {
    let t_end = traj.final_time();
    if traj.states.len() < 3 || t_end < opts.burn_in + opts.window {
        return OmegaLimit::Undecided {
            reason: format!(
                "trajectory ends at {t_end} before burn-in {} plus window {}",
                opts.burn_in, opts.window
            ),
        };
    }
    let start = t_end - opts.window;
    let first = traj.times.iter().position(|t| *t >= start).unwrap_or(0);
    let times = &traj.times[first..];
    let tail: Vec<&DVector<f64>> = traj.states[first..].iter().map(|s| s.coords()).collect();
    if tail.len() < 3 {
        return OmegaLimit::Undecided {
            reason: "too few samples in the window".into(),
        };
    }
    let diameter = sup_diameter(&tail);
    if diameter <= opts.fixed_tol {
        return OmegaLimit::FixedPoint {
            point: traj.states.last().expect("nonempty").clone(),
            diameter,
        };
    }

    let m = tail.len();
    let n = tail[0].len();
    let mean = tail.iter().fold(DVector::zeros(n), |acc, s| acc + *s) / m as f64;
    let normal = (tail[m - 1] - tail[m - 2]) / (times[m - 1] - times[m - 2]);
    if normal.norm() == 0.0 {
        return OmegaLimit::Undecided {
            reason: "trajectory is stationary at the end but not over the window".into(),
        };
    }
    let side: Vec<f64> = tail.iter().map(|s| (*s - &mean).dot(&normal)).collect();
    let mut cross_t = Vec::new();
    let mut cross_x = Vec::new();
    for k in 1..m {
        if side[k - 1] < 0.0 && side[k] >= 0.0 {
            let a = side[k - 1] / (side[k - 1] - side[k]);
            cross_t.push(times[k - 1] + a * (times[k] - times[k - 1]));
            cross_x.push(tail[k - 1] + (tail[k] - tail[k - 1]) * a);
        }
    }
    if cross_x.len() < opts.min_returns {
        return OmegaLimit::Undecided {
            reason: format!("{} section crossings in the window", cross_x.len()),
        };
    }
    let periods: Vec<f64> = cross_t.windows(2).map(|w| w[1] - w[0]).collect();
    let mean_period = periods.iter().sum::<f64>() / periods.len() as f64;
    let (pmin, pmax) = periods
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(*p), hi.max(*p)));
    let period_spread = (pmax - pmin) / mean_period;
    let crossings: Vec<&DVector<f64>> = cross_x.iter().collect();
    let return_spread = sup_diameter(&crossings);
    let settled = return_spread <= opts.return_tol && return_spread <= opts.relative_return_tol * diameter;
    if settled && period_spread <= opts.period_rel_tol {
        OmegaLimit::Periodic {
            period: mean_period,
            orbit_sample: cross_x
                .into_iter()
                .map(SimplexPoint::from_vector_unchecked)
                .collect(),
            return_spread,
            period_spread,
        }
    } else {
        OmegaLimit::Undecided {
            reason: format!(
                "returns spread {return_spread:e} (tail diameter {diameter:e}), period spread {period_spread:e}"
            ),
        }
    }
}
