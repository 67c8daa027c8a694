//! Executes the analyses of a scenario and writes artifacts plus
//! `report.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use simplexflow::dynamics::{
    build_counterexample, find_equilibria, integrate, jacobian, jacobian_factorized, omega_limit_summary,
    OmegaOptions, StepperOptions, Trajectory, VectorFieldSpec,
};
use simplexflow::games::logit_correspondence;
use simplexflow::lyapunov::{decrease_and_angle, quasigradient_check, sample_compact, CustomLyapunov, LyapunovSpec};
use simplexflow::matrix_io::csv_number;
use simplexflow::protocols::{Callable, Protocol};
use simplexflow::stochastic::{
    meanfield_deviation, replicate, simulate_population, simulate_reinforcement, PopulationState,
    ReplicationSummary,
};
use simplexflow::{ChartProjection, Error, SimplexPoint};

use crate::error::{CliError, EXIT_VERIFICATION};
use crate::scenario::{counterexample_parameters, default_lyapunov, Analysis, FieldKind, Scenario, StochasticMode};

/// Command-line overrides.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Replaces sampling sizes: Lyapunov samples, contraction samples and
    /// stochastic replicates.
    pub samples: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub index: usize,
    pub kind: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub artifacts: Vec<String>,
    pub summary: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub format_version: u32,
    pub seed: u64,
    pub passed: bool,
    pub analyses: Vec<AnalysisReport>,
}

impl Report {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            EXIT_VERIFICATION
        }
    }

    pub fn checks(&self) -> impl Iterator<Item = (&AnalysisReport, &Check)> {
        self.analyses.iter().flat_map(|a| a.checks.iter().map(move |c| (a, c)))
    }
}

struct Ctx<'a> {
    dir: &'a Path,
    index: usize,
    kind: &'static str,
    artifacts: Vec<String>,
}

impl Ctx<'_> {
    fn write(&mut self, suffix: &str, contents: &str) -> Result<(), CliError> {
        let name = format!("{:02}_{}_{suffix}", self.index, self.kind);
        let path = self.dir.join(&name);
        fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        self.artifacts.push(name);
        Ok(())
    }

    fn write_json(&mut self, suffix: &str, value: &impl Serialize) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).expect("artifacts serialize");
        self.write(suffix, &text)
    }

    fn numeric(&self, e: Error) -> CliError {
        CliError::numeric(&format!("analysis {} ({})", self.index, self.kind), e)
    }
}

/// Runs every analysis in declaration order. Artifacts go to
/// `opts.output`, or the scenario's `output` directory.
pub fn run_scenario(scenario: &Scenario, opts: &RunOptions) -> Result<Report, CliError> {
    scenario.validate()?;
    let protocol = scenario.build_protocol()?;
    let dir = opts.output.clone().unwrap_or_else(|| scenario.output.clone());
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let seed = opts.seed.unwrap_or(scenario.seed);

    let mut analyses = Vec::new();
    for (index, analysis) in scenario.analyses.iter().enumerate() {
        let mut ctx = Ctx {
            dir: &dir,
            index,
            kind: analysis.kind(),
            artifacts: Vec::new(),
        };
        let (checks, summary) = run_analysis(analysis, &protocol, scenario.n, seed, opts, &mut ctx)?;
        analyses.push(AnalysisReport {
            index,
            kind: analysis.kind().into(),
            passed: checks.iter().all(|c| c.passed),
            checks,
            artifacts: ctx.artifacts,
            summary,
        });
    }
    let report = Report {
        scenario: scenario.name.clone(),
        format_version: scenario.format_version,
        seed,
        passed: analyses.iter().all(|a| a.passed),
        analyses,
    };
    let path = dir.join("report.json");
    let text = serde_json::to_string_pretty(&report).expect("reports serialize");
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(report)
}

type Outcome = (Vec<Check>, Value);

fn run_analysis(
    analysis: &Analysis,
    protocol: &Protocol,
    n: usize,
    seed: u64,
    opts: &RunOptions,
    ctx: &mut Ctx,
) -> Result<Outcome, CliError> {
    match analysis {
        Analysis::Integrate {
            x0,
            t_end,
            dt,
            field,
            omega,
            expect,
        } => run_integrate(protocol, x0, *t_end, *dt, *field, omega.as_ref(), expect.as_deref(), ctx),
        Analysis::Equilibria { newton } => {
            let search = find_equilibria(protocol, &[], newton);
            ctx.write_json("roots.json", &search)?;
            let generator = VectorFieldSpec::generator(protocol.clone());
            let mut shared: f64 = 0.0;
            let mut factorization = Vec::new();
            for root in &search.roots {
                let f = generator.eval_raw(&root.location).map_err(|e| ctx.numeric(e))?;
                shared = shared.max(f.amax());
                match jacobian_factorized(&generator, &root.location, &root.chart) {
                    Ok(pair) => factorization.push(Ok(pair.defect)),
                    Err(e @ (Error::FormulaMismatch(_) | Error::NotAnEquilibrium(_))) => {
                        factorization.push(Err(e.to_string()))
                    }
                    Err(e) => return Err(ctx.numeric(e)),
                }
            }
            let failures: Vec<&String> = factorization.iter().filter_map(|r| r.as_ref().err()).collect();
            let checks = vec![
                Check::new("roots-found", !search.roots.is_empty(), format!("{} roots", search.roots.len())),
                Check::new(
                    "shared-zeros",
                    shared <= 1e-8,
                    format!("max |x L(x)| at the roots {shared:e}"),
                ),
                Check::new(
                    "jacobian-factorization",
                    failures.is_empty(),
                    if failures.is_empty() {
                        "finite-difference and factorized Jacobians agree".into()
                    } else {
                        failures.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("; ")
                    },
                ),
            ];
            let summary = json!({
                "roots": search.roots.iter().map(|r| json!({
                    "location": r.location,
                    "classification": r.classification,
                    "unstable_dim": r.unstable_dim,
                })).collect::<Vec<_>>(),
                "seeds_tried": search.seeds_tried,
                "failed_seeds": search.failed_seeds,
            });
            Ok((checks, summary))
        }
        Analysis::LyapunovCheck {
            lyapunov,
            scale,
            field,
            samples,
            delta,
            tol,
        } => {
            let base = match lyapunov {
                Some(l) => l.clone(),
                None => default_lyapunov(protocol).expect("validated"),
            };
            let spec = if *scale == 1.0 { base } else { scaled(base, *scale) };
            let count = opts.samples.unwrap_or(*samples);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ctx.index as u64);
            let points = sample_compact(&mut rng, n, *delta, count);
            let quasi = quasigradient_check(&spec, &points, *tol);
            let angle = decrease_and_angle(&spec, &field_of(protocol, *field), *delta, &points)
                .map_err(|e| ctx.numeric(e))?;
            ctx.write_json("checks.json", &json!({ "quasigradient": quasi, "angle": angle }))?;
            let checks = vec![
                Check::new(
                    "quasigradient",
                    quasi.passed,
                    format!("max violation {:e} over {} samples", quasi.max_violation, quasi.samples),
                ),
                Check::new(
                    "decrease",
                    angle.passed(),
                    format!(
                        "{} increases, angle constant {:e}, min margin {:e}",
                        angle.increases, angle.angle_constant, angle.min_decrease_margin
                    ),
                ),
            ];
            let summary = json!({
                "samples": count,
                "angle_constant": angle.angle_constant,
                "increases": angle.increases,
                "max_violation": quasi.max_violation,
                "integrability": quasi.integrability,
            });
            Ok((checks, summary))
        }
        Analysis::BetaLadder {
            payoff,
            ladder,
            options,
        } => {
            let mut o = options.clone();
            o.seed = seed;
            if let Some(s) = opts.samples {
                o.contraction_samples = s;
            }
            let table = logit_correspondence(payoff, ladder, &o).map_err(|e| ctx.numeric(e))?;
            ctx.write("table.csv", &table.to_csv())?;
            ctx.write_json("table.json", &table)?;
            let top = ladder.last().copied().expect("validated");
            let unmatched_top = table.rows_for(top).filter(|r| r.nash_id.is_none()).count();
            let inconsistent = table.rows.iter().filter(|r| r.index_consistent == Some(false)).count();
            let checks = vec![
                Check::new(
                    "largest-beta-matched",
                    unmatched_top == 0,
                    format!("{unmatched_top} unmatched roots at beta = {top}"),
                ),
                Check::new(
                    "index-consistency",
                    inconsistent == 0,
                    format!("{inconsistent} roots outside the potential-index bounds"),
                ),
            ];
            let summary = json!({
                "nash_points": table.nash.len(),
                "rows": table.rows.len(),
                "unmatched": table.unmatched(),
                "contraction": table.contraction,
            });
            Ok((checks, summary))
        }
        Analysis::Stochastic {
            mode,
            x0,
            agents,
            horizon,
            steps,
            start,
            replicates,
        } => {
            let count = opts.samples.unwrap_or(*replicates) as u64;
            let seeds: Vec<u64> = (0..count).map(|k| seed.wrapping_add(k)).collect();
            let x0 = SimplexPoint::new(x0.clone()).expect("validated");
            match mode {
                StochasticMode::Population => {
                    let start_state = PopulationState::from_point(&x0, *agents).map_err(|e| ctx.numeric(e))?;
                    let len = (horizon * *agents as f64).floor() as usize;
                    let runs = replicate(&seeds, |s| -> Result<(bool, f64), Error> {
                        let path = simulate_population(protocol, &start_state, len, s)?;
                        let conserved = path.counts.iter().all(|c| c.iter().sum::<u64>() == *agents);
                        Ok((conserved, meanfield_deviation(&path, protocol, *horizon)?))
                    });
                    let mut deviations = Vec::new();
                    let mut conserved = true;
                    for (_, r) in runs {
                        let (c, d) = r.map_err(|e| ctx.numeric(e))?;
                        conserved &= c;
                        deviations.push(d);
                    }
                    let first = simulate_population(protocol, &start_state, len, seeds[0]).map_err(|e| ctx.numeric(e))?;
                    ctx.write("path.csv", &first.to_csv())?;
                    let stats = ReplicationSummary::from_values(&deviations).expect("at least one replicate");
                    let summary = json!({
                        "agents": agents,
                        "steps": len,
                        "seeds": seeds,
                        "deviations": deviations,
                        "deviation": stats,
                    });
                    ctx.write_json("summary.json", &summary)?;
                    let finite = deviations.iter().all(|d| d.is_finite() && *d >= 0.0);
                    let checks = vec![
                        Check::new("conservation", conserved, format!("counts sum to {agents} at every step")),
                        Check::new("finite-deviation", finite, format!("median deviation {:e}", stats.median)),
                    ];
                    Ok((checks, summary))
                }
                StochasticMode::Reinforcement => {
                    let runs = replicate(&seeds, |s| simulate_reinforcement(protocol, *steps, s, *start, &x0));
                    let mut finals = Vec::new();
                    let mut in_simplex = true;
                    let mut first = None;
                    for (_, r) in runs {
                        let path = r.map_err(|e| ctx.numeric(e))?;
                        in_simplex &= path
                            .measures
                            .iter()
                            .all(|m| (m.coords().sum() - 1.0).abs() <= 1e-12 && m.min_coord() > 0.0);
                        finals.push(path.measures.last().expect("nonempty").clone());
                        if first.is_none() {
                            first = Some(path);
                        }
                    }
                    ctx.write("occupation.csv", &first.expect("at least one replicate").to_csv())?;
                    let summary = json!({ "steps": steps, "seeds": seeds, "final_measures": finals });
                    ctx.write_json("summary.json", &summary)?;
                    let checks = vec![Check::new(
                        "occupation-in-simplex",
                        in_simplex,
                        "occupation measures stay in the open simplex".into(),
                    )];
                    Ok((checks, summary))
                }
            }
        }
        Analysis::Counterexample {
            x0,
            t_end,
            window,
            dt,
            relaxation_t_end,
        } => {
            let (eta, epsilon, weights) = counterexample_parameters(protocol.spec()).expect("validated");
            let ce = build_counterexample(eta, epsilon, weights).map_err(|e| CliError::input("protocol", e))?;
            let x0 = SimplexPoint::new(x0.clone()).expect("validated");
            let stepper = StepperOptions::sampled_every(*dt).with_tolerances(1e-10, 1e-12);
            let omega = OmegaOptions {
                window: *window,
                ..OmegaOptions::default()
            };
            let gen = integrate(&ce.field, &x0, *t_end, &stepper).map_err(|e| ctx.numeric(e))?;
            let rel = integrate(&ce.pi_field, &x0, *relaxation_t_end, &stepper).map_err(|e| ctx.numeric(e))?;
            let stride = ((0.5 / dt).round() as usize).max(1);
            ctx.write("generator.csv", &trajectory_csv(&gen, stride))?;
            ctx.write("relaxation.csv", &trajectory_csv(&rel, stride))?;
            let gen_limit = omega_limit_summary(&gen, &omega);
            let rel_limit = omega_limit_summary(&rel, &omega);
            let chart = ChartProjection::last(3);
            let j = jacobian(&ce.field, &ce.equilibrium(), &chart).map_err(|e| ctx.numeric(e))?;
            let trace = j.trace();
            let predicted = ce.predicted_trace();
            let checks = vec![
                Check::new(
                    "generator-periodic",
                    gen_limit.verdict() == "periodic",
                    format!("verdict {}", gen_limit.verdict()),
                ),
                Check::new(
                    "relaxation-fixed-point",
                    rel_limit.verdict() == "fixed-point",
                    format!("verdict {}", rel_limit.verdict()),
                ),
                Check::new(
                    "trace",
                    (trace - predicted).abs() <= 1e-6,
                    format!("trace {trace:e}, closed form {predicted:e}"),
                ),
            ];
            let summary = json!({
                "generator": omega_json(&gen_limit),
                "relaxation": omega_json(&rel_limit),
                "trace": trace,
                "predicted_trace": predicted,
            });
            ctx.write_json("summary.json", &summary)?;
            Ok((checks, summary))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_integrate(
    protocol: &Protocol,
    x0: &[f64],
    t_end: f64,
    dt: f64,
    field: FieldKind,
    omega: Option<&OmegaOptions>,
    expect: Option<&str>,
    ctx: &mut Ctx,
) -> Result<Outcome, CliError> {
    let x0 = SimplexPoint::new(x0.to_vec()).expect("validated");
    let traj = integrate(&field_of(protocol, field), &x0, t_end, &StepperOptions::sampled_every(dt))
        .map_err(|e| ctx.numeric(e))?;
    ctx.write("trajectory.csv", &trajectory_csv(&traj, 1))?;
    let drift = traj
        .states
        .iter()
        .map(|s| (s.coords().sum() - 1.0).abs().max(-s.min_coord()))
        .fold(0.0, f64::max);
    let mut checks = vec![Check::new(
        "stays-in-simplex",
        drift <= 1e-12,
        format!("max distance from the simplex {drift:e}"),
    )];
    let limit = omega.map(|o| omega_limit_summary(&traj, o));
    if let Some(want) = expect {
        let got = limit.as_ref().map_or("none", |l| l.verdict());
        checks.push(Check::new("omega-verdict", got == want, format!("expected {want}, found {got}")));
    }
    let summary = json!({
        "final_state": traj.last(),
        "samples": traj.states.len(),
        "evaluations": traj.evaluations,
        "omega": limit.as_ref().map(omega_json),
    });
    Ok((checks, summary))
}

fn field_of(protocol: &Protocol, kind: FieldKind) -> VectorFieldSpec {
    match kind {
        FieldKind::Generator => VectorFieldSpec::generator(protocol.clone()),
        FieldKind::Relaxation => VectorFieldSpec::pi_of_protocol(protocol.clone()),
    }
}

/// `s V`, with gradient and `alpha` scaled alike so that the quasigradient
/// identity is preserved.
fn scaled(base: LyapunovSpec, s: f64) -> LyapunovSpec {
    let transform = base.transform();
    let target = base.target();
    let base = Arc::new(base);
    let (b1, b2, b3) = (Arc::clone(&base), Arc::clone(&base), base);
    LyapunovSpec::Custom(CustomLyapunov {
        value: Callable(Arc::new(move |x: &SimplexPoint| Ok(s * b1.value(x)?))),
        gradient: Some(Callable(Arc::new(move |x: &SimplexPoint| Ok(b2.gradient(x)? * s)))),
        alpha: Some(Callable(Arc::new(move |x: &SimplexPoint| Ok(s * b3.alpha(x)?)))),
        transform,
        target,
    })
}

/// The period and verdict without the orbit sample.
fn omega_json(limit: &simplexflow::dynamics::OmegaLimit) -> Value {
    let mut v = serde_json::to_value(limit).expect("verdicts serialize");
    if let Some(obj) = v.as_object_mut() {
        obj.remove("orbit_sample");
    }
    v
}

/// Columns `t,x1..xn`, every `stride`-th sample plus the last one.
fn trajectory_csv(traj: &Trajectory, stride: usize) -> String {
    let n = traj.states.first().map_or(0, |s| s.dim());
    let mut out = String::from("t");
    for i in 1..=n {
        out.push_str(&format!(",x{i}"));
    }
    out.push('\n');
    let last = traj.states.len().saturating_sub(1);
    for (k, (t, x)) in traj.times.iter().zip(&traj.states).enumerate() {
        if k % stride != 0 && k != last {
            continue;
        }
        out.push_str(&csv_number(*t));
        for v in x.as_slice() {
            out.push(',');
            out.push_str(&csv_number(*v));
        }
        out.push('\n');
    }
    out
}
