//! Executes a parsed experiment config: dispatches solvers and
//! verifiers over the n-grid, writes results/claims CSVs, and prints a
//! summary table. All CSV output is a pure function of (config, seed):
//! rows are emitted in (n, rep) order and every replication draws from
//! the substream seeded by `hash64(master_seed, instance_label, n, rep)`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DVector;

use vrpg_core::baselines::{run_projected_sgd_pr, solve_m_estimator, SgdPlan, StepSchedule};
use vrpg_core::benchmark::estimate_delta_sq;
use vrpg_core::exec::map_replications;
use vrpg_core::instances::{solve_population, Noise, ProblemInstance};
use vrpg_core::prox::Regularizer;
use vrpg_core::seeding::{hash64, rng_from_seed, substream_rng};
use vrpg_core::verify::{
    feasible_point_at_distance, verify_epoch_contraction, verify_solution_lipschitz,
    verify_theorem, ClaimReport,
};
use vrpg_core::vrpg::{derive_plan_doubling, derive_plan_with_log_base, run_vrpg};

use crate::config::{ConfigError, ExperimentConfig, Method, ScheduleSpec};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("config: {0}")]
    Build(String),
    #[error(transparent)]
    Core(#[from] vrpg_core::error::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Solve,
    BenchmarkDelta,
    VerifyLemma1,
    VerifyLipschitz,
    VerifyTheorem,
    Sweep,
}

impl Action {
    fn file_stem(self) -> &'static str {
        match self {
            Self::Solve => "solve",
            Self::BenchmarkDelta => "benchmark",
            Self::VerifyLemma1 => "lemma1",
            Self::VerifyLipschitz => "lipschitz",
            Self::VerifyTheorem => "theorem",
            Self::Sweep => "sweep",
        }
    }
}

/// Command-line overrides; each wins over the config when present.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub quiet: bool,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub all_pass: bool,
    pub csv_paths: Vec<PathBuf>,
}

// ------------------------------------------------------------- CSV writing

/// 17 significant digits: round-trips f64 exactly.
fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

struct ResultRow {
    n: usize,
    rep: usize,
    seed: u64,
    scaled_error_sq: Option<f64>,
    solver_iters: usize,
    error: Option<String>,
}

const RESULTS_HEADER: &str =
    "schema_version=1,instance_id,reg_id,n,rep,seed,scaled_error_sq,solver_iters,error\n";
const CLAIMS_HEADER: &str =
    "schema_version=1,claim_id,instance_id,reg_id,n,observed,bound,std_err,pass,seed\n";

fn csv_escape(msg: &str) -> String {
    msg.replace(['\n', ','], ";")
}

fn render_results(instance_id: &str, reg_id: &str, rows: &[ResultRow]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    for r in rows {
        let val = r.scaled_error_sq.map(fmt_float).unwrap_or_default();
        let err = r.error.as_deref().map(csv_escape).unwrap_or_default();
        let _ = writeln!(
            out,
            "1,{instance_id},{reg_id},{},{},{},{val},{},{err}",
            r.n, r.rep, r.seed, r.solver_iters
        );
    }
    out
}

struct ClaimRow {
    n: usize,
    report: ClaimReport,
}

fn render_claims(instance_id: &str, reg_id: &str, seed: u64, rows: &[ClaimRow]) -> String {
    let mut out = String::from(CLAIMS_HEADER);
    for r in rows {
        let _ = writeln!(
            out,
            "1,{},{instance_id},{reg_id},{},{},{},{},{},{seed}",
            r.report.claim_id,
            r.n,
            fmt_float(r.report.observed),
            fmt_float(r.report.bound),
            fmt_float(r.report.std_err),
            r.report.pass
        );
    }
    out
}

fn write_file(dir: &Path, name: &str, content: &str) -> Result<PathBuf, RunError> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, content.as_bytes())?;
    Ok(path)
}

// ---------------------------------------------------------------- actions

struct Context {
    instance: ProblemInstance,
    reg: Regularizer,
    reg_id: &'static str,
    x_star: DVector<f64>,
    seed: u64,
    out_dir: PathBuf,
    quiet: bool,
}

impl Context {
    fn new(config: &ExperimentConfig, overrides: &Overrides) -> Result<Self, RunError> {
        let instance = crate::config::build_instance(&config.instance).map_err(RunError::Build)?;
        let reg = crate::config::build_regularizer(&config.regularizer, instance.dim())
            .map_err(RunError::Build)?;
        let x_star = solve_population(&instance, &reg, config.run.tol)?;
        let seed = overrides.seed.unwrap_or(config.run.master_seed);
        let out_dir = overrides
            .out
            .clone()
            .or_else(|| config.run.out.as_ref().map(PathBuf::from))
            .or_else(|| std::env::var_os("VRPG_BENCH_OUT").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Context {
            instance,
            reg,
            reg_id: config.regularizer.id(),
            x_star,
            seed,
            out_dir,
            quiet: overrides.quiet,
        })
    }

    fn say(&self, line: &str) {
        if !self.quiet {
            println!("{line}");
        }
    }
}

fn solve_rows(ctx: &Context, config: &ExperimentConfig) -> Result<Vec<ResultRow>, RunError> {
    let run = &config.run;
    let inst = &ctx.instance;
    let mut rows = Vec::new();
    for &n in &run.n_grid {
        let per_rep: Vec<(Option<f64>, usize, Option<String>)> =
            map_replications(run.replications, |rep| {
                let mut rng = substream_rng(ctx.seed, &inst.label, n, rep);
                let outcome: Result<(DVector<f64>, usize), vrpg_core::error::Error> =
                    (|| match run.method {
                        Method::Vrpg => {
                            let plan = match &run.schedule {
                                ScheduleSpec::Constant => derive_plan_with_log_base(
                                    n,
                                    inst.mu(),
                                    inst.smoothness(),
                                    run.log_base.unwrap_or(std::f64::consts::E),
                                )?,
                                ScheduleSpec::Doubling { t0 } => {
                                    derive_plan_doubling(n, inst.mu(), inst.smoothness(), *t0)?
                                }
                            };
                            let init = vrpg_core::baselines::default_init(&ctx.reg, inst.dim())?;
                            let trace = run_vrpg(inst, &ctx.reg, &plan, &init, &mut rng, None)?;
                            Ok((trace.final_point, trace.samples_drawn))
                        }
                        Method::SgdPr => {
                            let plan = SgdPlan {
                                n_steps: n,
                                schedule: StepSchedule::Polynomial {
                                    c: run.sgd_step_c,
                                    omega: run.sgd_omega,
                                },
                                burn_in: run.sgd_burn_in,
                            };
                            let init = vrpg_core::baselines::default_init(&ctx.reg, inst.dim())?;
                            let out = run_projected_sgd_pr(inst, &ctx.reg, &plan, &init, &mut rng)?;
                            Ok((out.averaged, n))
                        }
                        Method::MEstimator => {
                            let samples: Vec<Noise> =
                                (0..n).map(|_| inst.sample(&mut rng)).collect();
                            let sol = solve_m_estimator(inst, &ctx.reg, &samples, run.tol)?;
                            Ok((sol.point, sol.iterations))
                        }
                    })();
                match outcome {
                    Ok((point, iters)) => {
                        let scaled = n as f64 * (point - &ctx.x_star).norm_squared();
                        (Some(scaled), iters, None)
                    }
                    Err(e) => (None, 0, Some(e.to_string())),
                }
            });
        for (rep, (scaled, iters, error)) in per_rep.into_iter().enumerate() {
            rows.push(ResultRow {
                n,
                rep,
                seed: hash64(ctx.seed, &inst.label, n, rep),
                scaled_error_sq: scaled,
                solver_iters: iters,
                error,
            });
        }
    }
    Ok(rows)
}

fn benchmark_rows(
    ctx: &Context,
    config: &ExperimentConfig,
) -> Result<Vec<ResultRow>, RunError> {
    let run = &config.run;
    let mut rows = Vec::new();
    for &n in &run.n_grid {
        let est = estimate_delta_sq(
            &ctx.instance,
            &ctx.reg,
            &ctx.x_star,
            n,
            run.replications,
            ctx.seed,
            run.tol,
        )?;
        ctx.say(&format!(
            "delta_sq(n={n}) = {:.6e} +- {:.2e} ({} reps)",
            est.delta_sq, est.std_err, est.replications
        ));
        for rep in 0..run.replications {
            rows.push(ResultRow {
                n,
                rep,
                seed: hash64(ctx.seed, &ctx.instance.label, n, rep),
                scaled_error_sq: Some(est.per_rep_values[rep]),
                solver_iters: est.per_rep_iters[rep],
                error: None,
            });
        }
    }
    Ok(rows)
}

fn verifier_rows(
    ctx: &Context,
    config: &ExperimentConfig,
    action: Action,
) -> Result<(Vec<ResultRow>, Vec<ClaimRow>), RunError> {
    let run = &config.run;
    let inst = &ctx.instance;
    let mut results = Vec::new();
    let mut claims = Vec::new();
    for &n in &run.n_grid {
        let report = match action {
            Action::VerifyLemma1 => verify_epoch_contraction(
                inst,
                &ctx.reg,
                &ctx.x_star,
                n,
                run.anchor_dist,
                run.replications,
                ctx.seed,
                run.tol,
            )?,
            Action::VerifyLipschitz => {
                // Anchor direction from a dedicated deterministic stream;
                // the grid value is the recentering sample count.
                let mut rng = rng_from_seed(hash64(ctx.seed, &inst.label, n, usize::MAX));
                let anchor =
                    feasible_point_at_distance(&ctx.reg, &ctx.x_star, run.anchor_dist, &mut rng)?;
                verify_solution_lipschitz(
                    inst,
                    &ctx.reg,
                    &ctx.x_star,
                    &anchor,
                    n,
                    run.replications,
                    ctx.seed,
                    run.tol,
                )?
            }
            Action::VerifyTheorem => verify_theorem(
                inst,
                &ctx.reg,
                &ctx.x_star,
                n,
                run.replications,
                run.benchmark_reps,
                ctx.seed,
                run.tol,
            )?,
            _ => unreachable!("verifier_rows only handles verify actions"),
        };
        for (rep, &v) in report.per_rep_observed.iter().enumerate() {
            results.push(ResultRow {
                n,
                rep,
                seed: hash64(ctx.seed, &inst.label, n, rep),
                scaled_error_sq: Some(v),
                solver_iters: 0,
                error: None,
            });
        }
        claims.push(ClaimRow { n, report });
    }
    Ok((results, claims))
}

fn print_claim_table(ctx: &Context, claims: &[ClaimRow]) {
    if ctx.quiet || claims.is_empty() {
        return;
    }
    println!(
        "{:<20} {:>8} {:>14} {:>14} {:>6}",
        "claim", "n", "observed", "bound", "pass"
    );
    for c in claims {
        println!(
            "{:<20} {:>8} {:>14.6e} {:>14.6e} {:>6}",
            c.report.claim_id, c.n, c.report.observed, c.report.bound, c.report.pass
        );
    }
}

fn run_one(
    ctx: &Context,
    config: &ExperimentConfig,
    action: Action,
) -> Result<(bool, Vec<PathBuf>), RunError> {
    let mut paths = Vec::new();
    let mut all_pass = true;
    match action {
        Action::Solve => {
            let rows = solve_rows(ctx, config)?;
            paths.push(write_file(
                &ctx.out_dir,
                &format!("{}_results.csv", action.file_stem()),
                &render_results(&ctx.instance.label, ctx.reg_id, &rows),
            )?);
        }
        Action::BenchmarkDelta => {
            let rows = benchmark_rows(ctx, config)?;
            paths.push(write_file(
                &ctx.out_dir,
                &format!("{}_results.csv", action.file_stem()),
                &render_results(&ctx.instance.label, ctx.reg_id, &rows),
            )?);
        }
        Action::VerifyLemma1 | Action::VerifyLipschitz | Action::VerifyTheorem => {
            let (rows, claims) = verifier_rows(ctx, config, action)?;
            all_pass = claims.iter().all(|c| c.report.pass);
            print_claim_table(ctx, &claims);
            paths.push(write_file(
                &ctx.out_dir,
                &format!("{}_results.csv", action.file_stem()),
                &render_results(&ctx.instance.label, ctx.reg_id, &rows),
            )?);
            paths.push(write_file(
                &ctx.out_dir,
                &format!("{}_claims.csv", action.file_stem()),
                &render_claims(&ctx.instance.label, ctx.reg_id, ctx.seed, &claims),
            )?);
        }
        Action::Sweep => {
            for sub in [
                Action::BenchmarkDelta,
                Action::VerifyLemma1,
                Action::VerifyLipschitz,
                Action::VerifyTheorem,
            ] {
                let (pass, mut p) = run_one(ctx, config, sub)?;
                all_pass &= pass;
                paths.append(&mut p);
            }
        }
    }
    Ok((all_pass, paths))
}

/// Runs one action over the config's grid. Exit contract: `all_pass` is
/// true iff every emitted claim passed (actions without claims pass
/// vacuously).
pub fn run_experiment(
    action: Action,
    config: &ExperimentConfig,
    overrides: &Overrides,
) -> Result<RunOutcome, RunError> {
    let ctx = Context::new(config, overrides)?;
    let (all_pass, csv_paths) = run_one(&ctx, config, action)?;
    if !ctx.quiet {
        for p in &csv_paths {
            println!("wrote {}", p.display());
        }
    }
    Ok(RunOutcome {
        all_pass,
        csv_paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn small_config(method: &str, grid: &str, out: &Path) -> ExperimentConfig {
        let text = format!(
            "[instance]\n\
             label = small\n\
             a = diag: 1,1\n\
             theta = 0.3,-0.4\n\
             sigma = diag: 0.01,0.01\n\
             \n\
             [regularizer]\n\
             kind = orthant\n\
             \n\
             [run]\n\
             method = {method}\n\
             n_grid = {grid}\n\
             replications = 4\n\
             master_seed = 11\n\
             out = {}\n",
            out.display()
        );
        parse_config(&text).unwrap()
    }

    fn tmpdir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("vrpg-runner-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        dir
    }

    #[test]
    fn solve_writes_rows_for_each_grid_point_and_rep() {
        let dir = tmpdir("solve");
        let config = small_config("m_estimator", "50,100", &dir);
        let outcome = run_experiment(
            Action::Solve,
            &config,
            &Overrides {
                quiet: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(outcome.all_pass);
        let text = std::fs::read_to_string(&outcome.csv_paths[0]).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], RESULTS_HEADER.trim_end());
        assert_eq!(lines.len(), 1 + 2 * 4);
        assert!(lines[1].starts_with("1,small,orthant,50,0,"));
        assert!(text.ends_with('\n') && !text.contains('\r'));
    }

    #[test]
    fn rerun_is_byte_identical() {
        let dir = tmpdir("determinism");
        let config = small_config("vrpg", "20000", &dir);
        let quiet = Overrides {
            quiet: true,
            ..Default::default()
        };
        let first = run_experiment(Action::Solve, &config, &quiet).unwrap();
        let bytes_a = std::fs::read(&first.csv_paths[0]).unwrap();
        let second = run_experiment(Action::Solve, &config, &quiet).unwrap();
        let bytes_b = std::fs::read(&second.csv_paths[0]).unwrap();
        assert_eq!(bytes_a, bytes_b);
    }

    #[test]
    fn seed_override_changes_rows() {
        let dir = tmpdir("seed-override");
        let config = small_config("m_estimator", "50", &dir);
        let quiet = Overrides {
            quiet: true,
            ..Default::default()
        };
        let a = run_experiment(Action::Solve, &config, &quiet).unwrap();
        let bytes_a = std::fs::read(&a.csv_paths[0]).unwrap();
        let b = run_experiment(
            Action::Solve,
            &config,
            &Overrides {
                seed: Some(999),
                quiet: true,
                ..Default::default()
            },
        )
        .unwrap();
        let bytes_b = std::fs::read(&b.csv_paths[0]).unwrap();
        assert_ne!(bytes_a, bytes_b);
    }

    #[test]
    fn verifier_writes_claims_with_pass_column() {
        let dir = tmpdir("lemma1");
        let config = small_config("vrpg", "20000", &dir);
        let outcome = run_experiment(
            Action::VerifyLemma1,
            &config,
            &Overrides {
                quiet: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(outcome.all_pass);
        let claims = std::fs::read_to_string(&outcome.csv_paths[1]).unwrap();
        let lines: Vec<&str> = claims.lines().collect();
        assert_eq!(lines[0], CLAIMS_HEADER.trim_end());
        assert!(lines[1].starts_with("1,epoch-contraction,small,orthant,20000,"));
        assert!(lines[1].ends_with(",true,11"));
    }

    #[test]
    fn solver_failure_is_recorded_per_row_without_aborting() {
        // Budget 2 is too small for any plan: derivation fails, every
        // row for that n carries the error, and the larger grid point
        // still runs.
        let dir = tmpdir("row-error");
        let config = small_config("vrpg", "2,20000", &dir);
        let outcome = run_experiment(
            Action::Solve,
            &config,
            &Overrides {
                quiet: true,
                ..Default::default()
            },
        )
        .unwrap();
        let text = std::fs::read_to_string(&outcome.csv_paths[0]).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 2 * 4);
        let first = lines[1];
        let fields: Vec<&str> = first.split(',').collect();
        assert_eq!(fields[6], ""); // no value
        assert!(!fields[8].is_empty()); // error message present
        let later = lines[5];
        assert!(later.split(',').nth(6).map(|f| !f.is_empty()).unwrap());
    }

    #[test]
    fn floats_round_trip_through_the_csv() {
        let v = 0.1234567890123456789;
        let s = fmt_float(v);
        assert_eq!(s.parse::<f64>().unwrap(), v);
    }
}
