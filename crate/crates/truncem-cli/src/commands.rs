//! The five experiment commands and their file outputs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use truncem::model::{builtin_problem, ProbeCheck, SdeProblem};
use truncem::subordinator::SubordinatorPath;
use truncem::truncated_em::{SchemeMode, TruncationPolicy};
use truncem::{
    generate_brownian_span, invert_subordinator, moment_sweep, probe_monotonicity,
    simulate_subordinator, solve_time_changed_with_walk, solve_truncated_em,
    solve_truncated_em_continuous, strong_error_sweep, write_error_report_csv, write_moment_csv,
    ErrorReport, ReferenceKind, SubordinatorSpec, SweepConfig,
};

use crate::config::{CliError, Settings};

fn create_output(path: &str) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = Path::new(path).parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn load_problem(settings: &Settings) -> Result<SdeProblem, CliError> {
    let name = settings.require_problem()?;
    builtin_problem(name).map_err(|_| {
        CliError::Config(format!(
            "unknown problem `{name}`; available: {}",
            truncem::BUILTIN_NAMES.join(", ")
        ))
    })
}

fn build_policy(settings: &Settings, problem: &SdeProblem, default_eps: f64) -> Result<TruncationPolicy, CliError> {
    let epsilon = settings.epsilon.unwrap_or(default_eps);
    if !(epsilon > 0.0 && epsilon < 0.25) {
        return Err(CliError::Config(format!(
            "epsilon {epsilon} must lie in (0, 1/4)"
        )));
    }
    let mut policy = TruncationPolicy::for_problem(problem, epsilon);
    if settings.bare_kappa {
        policy = policy.without_kappa_floor();
    }
    match settings.mode.as_deref() {
        None | Some("truncated") => {}
        Some("classical") => policy = policy.with_mode(SchemeMode::Classical),
        Some(other) => {
            return Err(CliError::Config(format!(
                "unknown mode `{other}`; use truncated or classical"
            )))
        }
    }
    Ok(policy)
}

fn reference_kind(settings: &Settings) -> Result<ReferenceKind, CliError> {
    match settings.oracle.as_deref() {
        None | Some("fine") => Ok(ReferenceKind::FineSolve),
        Some("exact") => Ok(ReferenceKind::ExactTerminal),
        Some(other) => Err(CliError::Config(format!(
            "unknown oracle `{other}`; use fine or exact"
        ))),
    }
}

fn in_pool<T: Send>(workers: usize, body: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(body))
}

fn write_rate_files(prefix: &str, report: &ErrorReport) -> Result<(), CliError> {
    let errors_path = format!("{prefix}_errors.csv");
    let mut w = create_output(&errors_path)?;
    write_error_report_csv(&mut w, report)?;
    w.flush()?;

    let rate_path = format!("{prefix}_rate.txt");
    let mut w = create_output(&rate_path)?;
    writeln!(w, "slope={}", report.regression.slope)?;
    writeln!(w, "intercept={}", report.regression.intercept)?;
    writeln!(w, "r2={}", report.regression.r_squared)?;
    w.flush()?;

    println!(
        "wrote {errors_path} and {rate_path} (slope = {})",
        report.regression.slope
    );
    Ok(())
}

fn read_walk_file(path: &Path, dt: f64, horizon: f64) -> Result<SubordinatorPath, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut increments = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let value: f64 = line.parse().map_err(|_| {
            CliError::Config(format!(
                "{}:{}: `{line}` is not a decimal increment",
                path.display(),
                lineno + 1
            ))
        })?;
        increments.push(value);
    }
    Ok(SubordinatorPath::from_increments(dt, horizon, &increments)?)
}

pub fn run_rates(settings: &Settings) -> Result<(), CliError> {
    let problem = load_problem(settings)?;
    let policy = build_policy(settings, &problem, 0.1)?;
    let cfg = SweepConfig::new(
        settings.require_dts()?.to_vec(),
        settings.require_ref_dt()?,
        settings.q.unwrap_or(1.0),
        settings.paths.unwrap_or(1000),
        settings.seed,
    )
    .with_reference(reference_kind(settings)?);

    let report = in_pool(settings.workers, || strong_error_sweep(&problem, &policy, &cfg))??;
    write_rate_files(&settings.out_prefix("rates"), &report)
}

pub fn run_timechanged(settings: &Settings) -> Result<(), CliError> {
    let problem = load_problem(settings)?;
    let policy = build_policy(settings, &problem, 0.01)?;
    let alpha_s = settings.alpha_s.unwrap_or(0.9);
    let spec = SubordinatorSpec::stable(alpha_s)?;
    let horizon = settings.horizon.unwrap_or(problem.horizon);
    let dts = settings.require_dts()?.to_vec();
    let dt_ref = settings.require_ref_dt()?;

    let mut cfg = SweepConfig::new(
        dts.clone(),
        dt_ref,
        settings.q.unwrap_or(1.0),
        settings.paths.unwrap_or(100),
        settings.seed,
    )
    .with_time_change(spec, horizon);

    let injected = match &settings.subordinator_file {
        Some(path) => {
            let walk = Arc::new(read_walk_file(path, dt_ref, horizon)?);
            cfg = cfg.with_injected_walk(Arc::clone(&walk));
            Some(walk)
        }
        None => None,
    };

    let report = in_pool(settings.workers, || strong_error_sweep(&problem, &policy, &cfg))??;
    let prefix = settings.out_prefix("timechanged");
    write_rate_files(&prefix, &report)?;

    if settings.emit_paths {
        let dt_emit = dts.iter().cloned().fold(f64::INFINITY, f64::min);
        let walk = match &injected {
            Some(walk) => {
                let factor = (dt_emit / dt_ref).round() as usize;
                truncem::coarsen_subordinator(walk, factor.max(1))?
            }
            None => simulate_subordinator(&spec, dt_emit, horizon, settings.seed, 0)?,
        };
        emit_sample_paths(&prefix, &problem, &policy, &walk, dt_emit, horizon, settings.seed)?;
    }
    Ok(())
}

/// One realisation of D, E and each state coordinate as two-column CSVs,
/// ready for any plotting tool.
fn emit_sample_paths(
    prefix: &str,
    problem: &SdeProblem,
    policy: &TruncationPolicy,
    walk: &SubordinatorPath,
    dt: f64,
    horizon: f64,
    seed: u64,
) -> Result<(), CliError> {
    let path = format!("{prefix}_subordinator.csv");
    let mut w = create_output(&path)?;
    writeln!(w, "t,D")?;
    for (i, v) in walk.values().iter().enumerate() {
        writeln!(w, "{},{}", i as f64 * walk.dt(), v)?;
    }
    w.flush()?;
    println!("wrote {path}");

    let n_emit = (horizon / dt).floor() as usize;
    let times: Vec<f64> = (0..=n_emit).map(|j| j as f64 * dt).collect();

    let path = format!("{prefix}_inverse.csv");
    let mut w = create_output(&path)?;
    writeln!(w, "t,E")?;
    for &t in &times {
        writeln!(w, "{},{}", t, invert_subordinator(walk, t)?)?;
    }
    w.flush()?;
    println!("wrote {path}");

    let states = solve_time_changed_with_walk(problem, policy, dt, walk, seed, 0, &times)?;
    #[allow(clippy::needless_range_loop)] // coord picks a column of `states`
    for coord in 0..problem.state_dim {
        let path = format!("{prefix}_y{}.csv", coord + 1);
        let mut w = create_output(&path)?;
        writeln!(w, "t,y{}", coord + 1)?;
        for (j, &t) in times.iter().enumerate() {
            writeln!(w, "{},{}", t, states[j][coord])?;
        }
        w.flush()?;
        println!("wrote {path}");
    }
    Ok(())
}

pub fn run_moments(settings: &Settings) -> Result<(), CliError> {
    let problem = load_problem(settings)?;
    let policy = build_policy(settings, &problem, 0.1)?;
    let dts = settings.require_dts()?.to_vec();
    let p = settings.p.unwrap_or(2.0);
    let n_paths = settings.paths.unwrap_or(1000);
    let rows = in_pool(settings.workers, || {
        moment_sweep(&problem, &policy, &dts, p, n_paths, settings.seed)
    })??;

    let path = format!("{}_moments.csv", settings.out_prefix("moments"));
    let mut w = create_output(&path)?;
    write_moment_csv(&mut w, &rows)?;
    w.flush()?;
    println!("wrote {path}");
    Ok(())
}

pub fn run_probe(settings: &Settings) -> Result<(), CliError> {
    let problem = load_problem(settings)?;
    let q = settings.q.unwrap_or(4.0);
    if q <= 2.0 {
        return Err(CliError::Config(format!("probe moment q {q} must exceed 2")));
    }
    let samples = settings.samples.unwrap_or(10_000);
    let box_radius = settings.box_radius.unwrap_or(5.0);
    let report = probe_monotonicity(&problem, q, samples, box_radius, settings.seed);

    let path = format!("{}_probe.csv", settings.out_prefix("probe"));
    let mut w = create_output(&path)?;
    writeln!(w, "samples,n_violations,max_ratio")?;
    writeln!(w, "{},{},{}", report.samples_tested, report.violations.len(), report.max_ratio)?;
    for v in report.violations.iter().take(1000) {
        let check = match v.check {
            ProbeCheck::Monotonicity => "monotonicity",
            ProbeCheck::Coercivity => "coercivity",
        };
        writeln!(
            w,
            "# violation check={check} t={} x={:?} y={:?} lhs={} rhs={}",
            v.t, v.x, v.y, v.lhs, v.rhs
        )?;
    }
    w.flush()?;
    println!(
        "wrote {path} ({} violations, max ratio {})",
        report.violations.len(),
        report.max_ratio
    );
    Ok(())
}

pub fn run_simulate(settings: &Settings) -> Result<(), CliError> {
    let problem = load_problem(settings)?;
    let policy = build_policy(settings, &problem, 0.1)?;
    let dt = settings.require_dt()?;
    let span = problem.horizon - problem.t0;
    let prefix = settings.out_prefix("simulate");

    if settings.emit_continuous {
        let fine = generate_brownian_span(problem.noise_dim, dt / 2.0, span, settings.seed, 0);
        let (grid, cont) = solve_truncated_em_continuous(&problem, &policy, dt, &fine)?;
        write_trajectory(&format!("{prefix}_trajectory.csv"), &grid.t_grid, |k| {
            grid.state(k)
        })?;
        let path = format!("{prefix}_continuous.csv");
        let mut w = create_output(&path)?;
        write!(w, "t")?;
        for i in 0..problem.state_dim {
            write!(w, ",x{}", i + 1)?;
        }
        for i in 0..problem.state_dim {
            write!(w, ",step_x{}", i + 1)?;
        }
        writeln!(w)?;
        for k in 0..cont.n_nodes() {
            write!(w, "{}", cont.t[k])?;
            for v in cont.state(k) {
                write!(w, ",{v}")?;
            }
            for v in cont.step_state(k) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        println!("wrote {path}");
    } else {
        let path = generate_brownian_span(problem.noise_dim, dt, span, settings.seed, 0);
        let grid = solve_truncated_em(&problem, &policy, dt, &path)?;
        write_trajectory(&format!("{prefix}_trajectory.csv"), &grid.t_grid, |k| {
            grid.state(k)
        })?;
    }
    Ok(())
}

fn write_trajectory<'a>(
    path: &str,
    t_grid: &[f64],
    state: impl Fn(usize) -> &'a [f64],
) -> Result<(), CliError> {
    let mut w = create_output(path)?;
    let dim = state(0).len();
    write!(w, "t")?;
    for i in 0..dim {
        write!(w, ",x{}", i + 1)?;
    }
    writeln!(w)?;
    for (k, t) in t_grid.iter().enumerate() {
        write!(w, "{t}")?;
        for v in state(k) {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    println!("wrote {path}");
    Ok(())
}
