//! Finite-population revision chains and the single-agent process with
//! reinforcement, plus their comparison with the mean-field flow.
//!
//! One chain step moves one agent, so `N` steps correspond to one unit of
//! mean-field time: step `k` sits at `t = k / N`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate, SampleGrid, StepperOptions, VectorFieldSpec};
use crate::error::{Error, Result};
use crate::markov::MarkovMatrix;
use crate::matrix_io::csv_number;
use crate::protocols::Protocol;
use crate::simplex::SimplexPoint;

/// RNG words reserved per step; each step draws two 64-bit values.
const WORDS_PER_STEP: u128 = 16;
const ROW_SUM_TOL: f64 = 1e-9;

/// A state-dependent Markov kernel `K(x)`.
pub trait KernelSource: Send + Sync {
    fn dim(&self) -> usize;
    fn kernel(&self, x: &SimplexPoint) -> Result<MarkovMatrix>;

    /// Mean-field drift `x (K(x) - Id)`.
    fn drift(&self, x: &SimplexPoint) -> Result<DVector<f64>> {
        let k = self.kernel(x)?;
        Ok(k.entries().tr_mul(x.coords()) - x.coords())
    }
}

impl KernelSource for Protocol {
    fn dim(&self) -> usize {
        Protocol::dim(self)
    }

    fn kernel(&self, x: &SimplexPoint) -> Result<MarkovMatrix> {
        self.markov_kernel(x)
    }
}

/// A kernel that does not depend on the state.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedKernel(pub MarkovMatrix);

impl KernelSource for FixedKernel {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn kernel(&self, _: &SimplexPoint) -> Result<MarkovMatrix> {
        Ok(self.0.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopulationState {
    pub agents: u64,
    pub counts: Vec<u64>,
}

impl PopulationState {
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        let agents: u64 = counts.iter().sum();
        if counts.is_empty() || agents == 0 {
            return Err(Error::InvalidParameter("population needs at least one agent".into()));
        }
        Ok(Self { agents, counts })
    }

    /// Rounds `x N` to integer counts summing to `N` (largest remainders).
    pub fn from_point(x: &SimplexPoint, agents: u64) -> Result<Self> {
        if agents == 0 {
            return Err(Error::InvalidParameter("population needs at least one agent".into()));
        }
        let scaled: Vec<f64> = x.as_slice().iter().map(|v| v * agents as f64).collect();
        let mut counts: Vec<u64> = scaled.iter().map(|v| v.floor() as u64).collect();
        let mut missing = agents - counts.iter().sum::<u64>();
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| (scaled[b] - scaled[b].floor()).total_cmp(&(scaled[a] - scaled[a].floor())));
        for i in order.into_iter().cycle() {
            if missing == 0 {
                break;
            }
            counts[i] += 1;
            missing -= 1;
        }
        Self::new(counts)
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn point(&self) -> SimplexPoint {
        let n = self.agents as f64;
        SimplexPoint::from_vector_unchecked(DVector::from_iterator(
            self.counts.len(),
            self.counts.iter().map(|c| *c as f64 / n),
        ))
    }
}

/// `P_ij = x_i K_ij(x)`, the law of one revision (agent type, destination).
pub fn transition_probabilities(source: &dyn KernelSource, x: &SimplexPoint) -> Result<DMatrix<f64>> {
    let k = source.kernel(x)?;
    Ok(DMatrix::from_fn(x.dim(), x.dim(), |i, j| x.coords()[i] * k.entries()[(i, j)]))
}

/// Inverse-CDF draw from row `i`; fails on rows that are not
/// probability vectors.
fn draw_from_row(k: &MarkovMatrix, i: usize, u: f64) -> Result<usize> {
    let row = k.entries().row(i);
    let sum: f64 = row.iter().sum();
    if !sum.is_finite() || (sum - 1.0).abs() > ROW_SUM_TOL || row.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::DegenerateKernelRow { row: i });
    }
    let target = u * sum;
    let mut acc = 0.0;
    let mut last = i;
    for (j, v) in row.iter().enumerate() {
        if *v > 0.0 {
            acc += v;
            last = j;
            if target < acc {
                return Ok(j);
            }
        }
    }
    Ok(last)
}

fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_word_pos(step as u128 * WORDS_PER_STEP);
    rng
}

/// Draws the revising agent's type `i` with probability `counts_i / N` and
/// its destination from row `i` of `K`.
fn revise(k: &MarkovMatrix, state: &PopulationState, rng: &mut ChaCha8Rng) -> Result<(usize, usize)> {
    let agent = rng.random_range(0..state.agents);
    let mut acc = 0;
    let mut i = 0;
    for (idx, c) in state.counts.iter().enumerate() {
        acc += c;
        if agent < acc {
            i = idx;
            break;
        }
    }
    let j = draw_from_row(k, i, rng.random::<f64>())?;
    Ok((i, j))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationPath {
    pub agents: u64,
    /// `counts[k]` is the state after `k` revisions.
    pub counts: Vec<Vec<u64>>,
}

impl PopulationPath {
    pub fn steps(&self) -> usize {
        self.counts.len() - 1
    }

    pub fn state(&self, k: usize) -> PopulationState {
        PopulationState {
            agents: self.agents,
            counts: self.counts[k].clone(),
        }
    }

    /// Mean-field time of step `k`.
    pub fn time(&self, k: usize) -> f64 {
        k as f64 / self.agents as f64
    }

    /// Columns `k,t,c1..cn`.
    pub fn to_csv(&self) -> String {
        let n = self.counts[0].len();
        let mut out = String::from("k,t");
        for i in 1..=n {
            out.push_str(&format!(",c{i}"));
        }
        out.push('\n');
        for (k, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{k},{}", csv_number(self.time(k))));
            for v in c {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// `steps` revisions of the `N`-agent chain. Step `k` reads its random
/// numbers from a fixed block of the ChaCha stream keyed by `seed`, so runs
/// are reproducible bit for bit.
pub fn simulate_population(
    source: &dyn KernelSource,
    x0: &PopulationState,
    steps: usize,
    seed: u64,
) -> Result<PopulationPath> {
    if x0.dim() != source.dim() {
        return Err(Error::DimensionMismatch {
            expected: source.dim(),
            found: x0.dim(),
        });
    }
    let mut state = x0.clone();
    let mut counts = Vec::with_capacity(steps + 1);
    counts.push(state.counts.clone());
    for k in 0..steps {
        let kernel = source.kernel(&state.point())?;
        let mut rng = step_rng(seed, k as u64);
        let (i, j) = revise(&kernel, &state, &mut rng)?;
        if i != j {
            state.counts[i] -= 1;
            state.counts[j] += 1;
        }
        counts.push(state.counts.clone());
    }
    Ok(PopulationPath {
        agents: x0.agents,
        counts,
    })
}

/// Revision counts `C_ij` from `draws` independent revisions at the frozen
/// state `x` (the state is not updated).
pub fn frozen_transition_counts(
    source: &dyn KernelSource,
    x: &PopulationState,
    draws: usize,
    seed: u64,
) -> Result<DMatrix<u64>> {
    let kernel = source.kernel(&x.point())?;
    let n = x.dim();
    let mut c = DMatrix::zeros(n, n);
    for k in 0..draws {
        let mut rng = step_rng(seed, k as u64);
        let (i, j) = revise(&kernel, x, &mut rng)?;
        c[(i, j)] += 1;
    }
    Ok(c)
}

/// `sup_{k <= N T} |X_k / N - x(k / N)|_inf` with `x` the mean-field
/// solution from the path's initial state.
pub fn meanfield_deviation<K>(path: &PopulationPath, source: &K, horizon: f64) -> Result<f64>
where
    K: KernelSource + Clone + 'static,
{
    if !(horizon > 0.0) {
        return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
    }
    let last = ((horizon * path.agents as f64).floor() as usize).min(path.steps());
    let x0 = path.state(0).point();
    let src = source.clone();
    let field = VectorFieldSpec::explicit(source.dim(), false, move |x: &SimplexPoint| src.drift(x));
    let times: Vec<f64> = (0..=last).map(|k| path.time(k)).collect();
    let t_end = times[last];
    if t_end == 0.0 {
        return Ok(0.0);
    }
    let opts = StepperOptions {
        samples: SampleGrid::Times { times },
        ..StepperOptions::default().with_tolerances(1e-9, 1e-12)
    };
    let traj = integrate(&field, &x0, t_end, &opts)?;
    let mut sup: f64 = 0.0;
    for (k, x) in traj.states.iter().enumerate().take(last + 1) {
        let xn = path.state(k).point();
        sup = sup.max((xn.coords() - x.coords()).amax());
    }
    Ok(sup)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupationPath {
    /// `X_0, X_1, ..`
    pub visits: Vec<usize>,
    /// `mu_0` is the prior; `mu_k` averages the prior and `X_1..X_k`.
    pub measures: Vec<SimplexPoint>,
}

impl OccupationPath {
    pub fn steps(&self) -> usize {
        self.visits.len() - 1
    }

    /// Columns `k,X_k,mu1..mun`.
    pub fn to_csv(&self) -> String {
        let n = self.measures[0].dim();
        let mut out = String::from("k,state");
        for i in 1..=n {
            out.push_str(&format!(",mu{i}"));
        }
        out.push('\n');
        for (k, (x, mu)) in self.visits.iter().zip(&self.measures).enumerate() {
            out.push_str(&format!("{k},{x}"));
            for v in mu.as_slice() {
                out.push(',');
                out.push_str(&csv_number(*v));
            }
            out.push('\n');
        }
        out
    }
}

/// The process with `P(X_{k+1} = j | X_k = i) = K_ij(mu_k)`. The prior
/// counts as one observation, so `mu_k = (prior + sum_{l <= k} e_{X_l}) / (k + 1)`
/// and `mu_{k+1} = mu_k + (e_{X_{k+1}} - mu_k) / (k + 2)`.
pub fn simulate_reinforcement(
    source: &dyn KernelSource,
    steps: usize,
    seed: u64,
    start: usize,
    prior: &SimplexPoint,
) -> Result<OccupationPath> {
    let n = source.dim();
    if prior.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: prior.dim(),
        });
    }
    if start >= n {
        return Err(Error::InvalidParameter(format!("start state {start} out of range")));
    }
    prior.require_interior()?;
    let mut visits = Vec::with_capacity(steps + 1);
    let mut measures = Vec::with_capacity(steps + 1);
    visits.push(start);
    measures.push(prior.clone());
    let mut x = start;
    let mut mu = prior.coords().clone();
    for k in 0..steps {
        let kernel = source.kernel(&SimplexPoint::from_vector_unchecked(mu.clone()))?;
        let mut rng = step_rng(seed, k as u64);
        x = draw_from_row(&kernel, x, rng.random::<f64>())?;
        let w = 1.0 / (k + 2) as f64;
        mu *= 1.0 - w;
        mu[x] += w;
        visits.push(x);
        measures.push(SimplexPoint::from_vector_unchecked(mu.clone()));
    }
    Ok(OccupationPath { visits, measures })
}

/// Runs `f` for every seed in parallel; results come back sorted by seed.
pub fn replicate<T, F>(seeds: &[u64], f: F) -> Vec<(u64, T)>
where
    T: Send,
    F: Fn(u64) -> T + Sync,
{
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    sorted.par_iter().map(|&s| (s, f(s))).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl ReplicationSummary {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let m = v.len();
        let median = if m % 2 == 1 {
            v[m / 2]
        } else {
            0.5 * (v[m / 2 - 1] + v[m / 2])
        };
        Some(Self {
            count: m,
            mean: v.iter().sum::<f64>() / m as f64,
            median,
            min: v[0],
            max: v[m - 1],
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("summary serializes")
    }
}
