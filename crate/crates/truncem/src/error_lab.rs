//! Strong-error estimation with common-path coupling, moment sweeps, the
//! step-process gap estimator, and log-log rate regression.
//!
//! All step sizes of one sweep are driven by a single realisation of the
//! finest noise per Monte Carlo path: every level consumes block sums of the
//! same fine Wiener increments (and, for time-changed runs, subsampled
//! values of the same subordinator walk), so error differences reflect
//! discretization only. The engine streams the fine increments instead of
//! materialising them, which keeps memory flat; it reproduces the
//! array-based solver bit-for-bit because both read increments as
//! differences of the identical left-to-right cumulative fold.

use rayon::prelude::*;
use std::io::{self, Write};
use std::sync::Arc;

use crate::errors::{SimError, SimResult};
use crate::model::{norm, SdeProblem};
use crate::rng::{standard_normal, DrawKey, STREAM_SUBORDINATOR, STREAM_WIENER};
use crate::subordinator::{
    coarsen_subordinator, invert_subordinator, sample_stable_increment, SubordinatorPath,
    SubordinatorSpec, DEFAULT_MAX_WALK_STEPS,
};
use crate::truncated_em::{
    solve_truncated_em, solve_truncated_em_continuous, EmStepper, StepGrid, TruncationPolicy,
};
use crate::noise::generate_brownian_span;

/// Ordinary least squares fit of log(error) against log(dt).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Regression {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// One step size of an error sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorRow {
    pub dt: f64,
    /// Sample mean of |x_ref(T) - x_dt(T)|^q_bar over surviving paths.
    pub error: f64,
    /// Standard error of that mean.
    pub std_error: f64,
    pub n_paths: usize,
    pub n_failed: usize,
}

/// Full sweep outcome.
#[derive(Clone, Debug)]
pub struct ErrorReport {
    pub rows: Vec<ErrorRow>,
    pub q_bar: f64,
    pub regression: Regression,
}

/// What stands in for the exact solution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReferenceKind {
    /// Truncated EM at the reference step size on the same noise.
    FineSolve,
    /// The problem's closed-form terminal value on the same noise (GBM).
    ExactTerminal,
}

/// Sweep configuration shared by the classical and time-changed estimators.
#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub dts: Vec<f64>,
    pub dt_ref: f64,
    pub q_bar: f64,
    pub n_paths: usize,
    pub base_seed: u64,
    pub reference: ReferenceKind,
    /// Subordinator of the time-changed protocol; `None` runs the classical
    /// protocol.
    pub time_change: Option<SubordinatorSpec>,
    /// Real-time horizon of the time change; defaults to the problem window.
    pub horizon: Option<f64>,
    /// Test hook: a fixed subordinator walk (at dt_ref) shared by every
    /// Monte Carlo path instead of freshly simulated clocks.
    pub injected_walk: Option<Arc<SubordinatorPath>>,
}

impl SweepConfig {
    pub fn new(dts: Vec<f64>, dt_ref: f64, q_bar: f64, n_paths: usize, base_seed: u64) -> Self {
        Self {
            dts,
            dt_ref,
            q_bar,
            n_paths,
            base_seed,
            reference: ReferenceKind::FineSolve,
            time_change: None,
            horizon: None,
            injected_walk: None,
        }
    }

    pub fn with_reference(mut self, reference: ReferenceKind) -> Self {
        self.reference = reference;
        self
    }

    pub fn with_time_change(mut self, spec: SubordinatorSpec, horizon: f64) -> Self {
        self.time_change = Some(spec);
        self.horizon = Some(horizon);
        self
    }

    pub fn with_injected_walk(mut self, walk: Arc<SubordinatorPath>) -> Self {
        self.injected_walk = Some(walk);
        self
    }
}

fn level_ratios(dts: &[f64], dt_ref: f64) -> SimResult<Vec<usize>> {
    if dts.is_empty() {
        return Err(SimError::InvalidData("no step sizes given".into()));
    }
    dts.iter()
        .map(|&dt| {
            if !(dt > 0.0 && dt <= 1.0) {
                return Err(SimError::InvalidStepSize(dt));
            }
            let ratio = dt / dt_ref;
            let rounded = ratio.round();
            if rounded < 1.0 || (ratio - rounded).abs() > 1e-6 * ratio.max(1.0) {
                return Err(SimError::GridMismatch(format!(
                    "dt {dt} is not an integer multiple of dt_ref {dt_ref}"
                )));
            }
            Ok(rounded as usize)
        })
        .collect()
}

fn validate_sweep(problem: &SdeProblem, cfg: &SweepConfig) -> SimResult<Vec<usize>> {
    if cfg.q_bar < 1.0 {
        return Err(SimError::InvalidData(format!("q_bar {} must be >= 1", cfg.q_bar)));
    }
    if cfg.n_paths < 2 {
        return Err(SimError::InvalidData("need at least 2 paths".into()));
    }
    if cfg.reference == ReferenceKind::ExactTerminal {
        if problem.exact_terminal().is_none() {
            return Err(SimError::InvalidData(format!(
                "problem `{}` has no closed-form terminal solution",
                problem.name
            )));
        }
        if cfg.time_change.is_some() {
            return Err(SimError::InvalidData(
                "exact-terminal reference is not defined for time-changed runs".into(),
            ));
        }
    }
    if cfg.time_change.is_some() && problem.t0 != 0.0 {
        return Err(SimError::InvalidData(format!(
            "time-changed sweeps need t0 = 0, problem starts at {}",
            problem.t0
        )));
    }
    if let Some(walk) = &cfg.injected_walk {
        if cfg.time_change.is_none() {
            return Err(SimError::InvalidData(
                "an injected subordinator walk needs a time-changed sweep".into(),
            ));
        }
        if (walk.dt() - cfg.dt_ref).abs() > 1e-12 * cfg.dt_ref {
            return Err(SimError::GridMismatch(format!(
                "injected walk has dt {}, sweep reference dt is {}",
                walk.dt(),
                cfg.dt_ref
            )));
        }
    }
    level_ratios(&cfg.dts, cfg.dt_ref)
}

/// Per-path, per-level error contributions; `None` marks an overflowed path.
type LevelOutcomes = Vec<Option<f64>>;

/// Advances one solver level inside the streaming engine.
struct LevelState<'a> {
    grid: StepGrid,
    ratio: usize,
    stepper: EmStepper<'a>,
    state: Vec<f64>,
    steps_done: usize,
    /// cum value per channel at the last completed node
    cum_mark: Vec<f64>,
    failed: bool,
    /// stop advancing once this many steps are done (time-changed snapshots)
    stop_after: Option<usize>,
}

impl<'a> LevelState<'a> {
    fn new(
        problem: &'a SdeProblem,
        policy: &TruncationPolicy,
        dt: f64,
        ratio: usize,
        horizon: f64,
    ) -> SimResult<Self> {
        let grid = StepGrid::new(problem.t0, horizon, dt)?;
        let radius = policy.truncation_radius(dt)?;
        Ok(Self {
            grid,
            ratio,
            stepper: EmStepper::new(problem, radius),
            state: problem.x0.clone(),
            steps_done: 0,
            cum_mark: vec![0.0; problem.noise_dim],
            failed: false,
            stop_after: None,
        })
    }

    fn done(&self) -> bool {
        self.failed
            || self.steps_done >= self.stop_after.unwrap_or(self.grid.n_steps())
    }

    /// Fine-node index at which this level's next step completes.
    fn next_boundary(&self, n_fine_uniform: usize, last_fine_node: usize) -> usize {
        let next = self.steps_done + 1;
        let uniform_end = next * self.ratio;
        if next == self.grid.n_steps() && uniform_end >= n_fine_uniform {
            // final (possibly short) step closes on the last fine node
            last_fine_node
        } else {
            uniform_end
        }
    }

    fn advance(&mut self, cum: &[f64], dw: &mut [f64]) {
        for (r, inc) in dw.iter_mut().enumerate() {
            *inc = cum[r] - self.cum_mark[r];
        }
        self.cum_mark.copy_from_slice(cum);
        let t = self.grid.node_time(self.steps_done);
        let len = self.grid.step_len(self.steps_done);
        if self
            .stepper
            .step_in_place(t, &mut self.state, len, dw, self.steps_done)
            .is_err()
        {
            self.failed = true;
        }
        self.steps_done += 1;
    }
}

fn error_power(a: &[f64], b: &[f64], q_bar: f64) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    d.sqrt().powf(q_bar)
}

/// One Monte Carlo path of the classical coupled sweep: the reference level
/// and all coarse levels consume one fine increment stream.
fn classical_path(
    problem: &SdeProblem,
    policy: &TruncationPolicy,
    cfg: &SweepConfig,
    ratios: &[usize],
    path_index: u64,
) -> SimResult<LevelOutcomes> {
    let horizon = problem.horizon;
    let fine_grid = StepGrid::new(problem.t0, horizon, cfg.dt_ref)?;
    let n_fine = fine_grid.n_steps();
    let n_fine_uniform = n_fine - usize::from(fine_grid.step_len(n_fine - 1) != cfg.dt_ref);
    let last_fine_node = n_fine;
    let m = problem.noise_dim;

    let mut reference = LevelState::new(problem, policy, cfg.dt_ref, 1, horizon)?;
    let mut levels = ratios
        .iter()
        .zip(&cfg.dts)
        .map(|(&r, &dt)| LevelState::new(problem, policy, dt, r, horizon))
        .collect::<SimResult<Vec<_>>>()?;

    let mut cum = vec![0.0; m];
    let mut dw = vec![0.0; m];
    for k in 0..n_fine {
        let std = fine_grid.step_len(k).sqrt();
        for (r, c) in cum.iter_mut().enumerate() {
            let key = DrawKey::new(STREAM_WIENER, path_index, r as u64, k as u64);
            *c += std * standard_normal(cfg.base_seed, key);
        }
        let node = k + 1;
        if !reference.done() && node == reference.next_boundary(n_fine_uniform, last_fine_node)
        {
            reference.advance(&cum, &mut dw);
        }
        for level in levels.iter_mut() {
            if !level.done() && node == level.next_boundary(n_fine_uniform, last_fine_node) {
                level.advance(&cum, &mut dw);
            }
        }
    }

    let ref_state: Option<Vec<f64>> = match cfg.reference {
        ReferenceKind::FineSolve => {
            if reference.failed {
                None
            } else {
                Some(reference.state.clone())
            }
        }
        ReferenceKind::ExactTerminal => {
            let exact = problem.exact_terminal().expect("validated");
            Some(exact(horizon - problem.t0, &cum))
        }
    };

    Ok(levels
        .iter()
        .map(|level| match (&ref_state, level.failed) {
            (Some(r), false) => Some(error_power(r, &level.state, cfg.q_bar)),
            _ => None,
        })
        .collect())
}

/// One Monte Carlo path of the time-changed coupled sweep.
///
/// The subordinator walk is streamed once at the fine step; each level's
/// clock reading E(T) is the first walk value above T seen at that level's
/// stride. The dual SDE levels then advance on one fine Wiener stream and
/// are snapshotted at their clock node, reproducing x_dt(E_dt(T)).
fn time_changed_path(
    problem: &SdeProblem,
    policy: &TruncationPolicy,
    cfg: &SweepConfig,
    ratios: &[usize],
    spec: &SubordinatorSpec,
    path_index: u64,
) -> SimResult<LevelOutcomes> {
    let horizon = cfg.horizon.unwrap_or(problem.horizon);
    let m = problem.noise_dim;

    // stride 1 is the reference clock
    let mut strides: Vec<usize> = Vec::with_capacity(ratios.len() + 1);
    strides.push(1);
    strides.extend_from_slice(ratios);

    let snaps: Vec<usize> = match &cfg.injected_walk {
        Some(walk) => {
            // fixed clock shared by all paths: subsample and invert it
            strides
                .iter()
                .map(|&stride| {
                    let coarse = coarsen_subordinator(walk, stride)?;
                    let e = invert_subordinator(&coarse, horizon)?;
                    Ok((e / coarse.dt()).round() as usize)
                })
                .collect::<SimResult<Vec<_>>>()?
        }
        None => {
            let mut snap_steps: Vec<Option<usize>> = vec![None; strides.len()];
            let mut d = 0.0;
            let mut n: usize = 0;
            while snap_steps.iter().any(Option::is_none) {
                if n >= DEFAULT_MAX_WALK_STEPS {
                    return Err(SimError::HorizonNotReached {
                        horizon,
                        max_steps: DEFAULT_MAX_WALK_STEPS,
                    });
                }
                let key = DrawKey::new(STREAM_SUBORDINATOR, path_index, 0, n as u64);
                d += sample_stable_increment(spec.alpha(), cfg.dt_ref, cfg.base_seed, key)?;
                n += 1;
                if d > horizon {
                    for (slot, &stride) in strides.iter().enumerate() {
                        if snap_steps[slot].is_none() && n.is_multiple_of(stride) {
                            // first crossing at this stride:
                            // E = (n/stride - 1) coarse steps
                            snap_steps[slot] = Some(n / stride - 1);
                        }
                    }
                }
            }
            snap_steps.into_iter().map(Option::unwrap).collect()
        }
    };

    // dual solve horizons: snapshot node + one spare step, in fine units
    let mut n_fine = 0usize;
    for (slot, &stride) in strides.iter().enumerate() {
        n_fine = n_fine.max((snaps[slot] + 1) * stride);
    }
    let dual_horizon = n_fine as f64 * cfg.dt_ref;

    let mut reference =
        LevelState::new(problem, policy, cfg.dt_ref, 1, dual_horizon)?;
    reference.stop_after = Some(snaps[0]);
    let mut levels = ratios
        .iter()
        .zip(&cfg.dts)
        .enumerate()
        .map(|(i, (&r, &dt))| {
            let level_horizon = (snaps[i + 1] + 1) as f64 * dt;
            let mut level = LevelState::new(problem, policy, dt, r, level_horizon)?;
            level.stop_after = Some(snaps[i + 1]);
            Ok(level)
        })
        .collect::<SimResult<Vec<_>>>()?;

    let mut cum = vec![0.0; m];
    let mut dw = vec![0.0; m];
    for k in 0..n_fine {
        let std = cfg.dt_ref.sqrt();
        for (r, c) in cum.iter_mut().enumerate() {
            let key = DrawKey::new(STREAM_WIENER, path_index, r as u64, k as u64);
            *c += std * standard_normal(cfg.base_seed, key);
        }
        let node = k + 1;
        if !reference.done() && node == (reference.steps_done + 1) * reference.ratio {
            reference.advance(&cum, &mut dw);
        }
        for level in levels.iter_mut() {
            if !level.done() && node == (level.steps_done + 1) * level.ratio {
                level.advance(&cum, &mut dw);
            }
        }
    }

    let ref_state = if reference.failed { None } else { Some(reference.state.clone()) };
    Ok(levels
        .iter()
        .map(|level| match (&ref_state, level.failed) {
            (Some(r), false) => Some(error_power(r, &level.state, cfg.q_bar)),
            _ => None,
        })
        .collect())
}

/// Estimates the strong L^q_bar error at the terminal time for every step
/// size against the coupled reference, with per-level Monte Carlo standard
/// errors and the log-log regression over the levels.
pub fn strong_error_sweep(
    problem: &SdeProblem,
    policy: &TruncationPolicy,
    cfg: &SweepConfig,
) -> SimResult<ErrorReport> {
    let ratios = validate_sweep(problem, cfg)?;

    let outcomes: Vec<SimResult<LevelOutcomes>> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|path_index| match &cfg.time_change {
            None => classical_path(problem, policy, cfg, &ratios, path_index),
            Some(spec) => {
                time_changed_path(problem, policy, cfg, &ratios, spec, path_index)
            }
        })
        .collect();

    // deterministic reduction in path order
    let mut per_level: Vec<Vec<f64>> = vec![Vec::new(); cfg.dts.len()];
    let mut failed = vec![0usize; cfg.dts.len()];
    for outcome in outcomes {
        let outcome = outcome?;
        for (i, value) in outcome.into_iter().enumerate() {
            match value {
                Some(v) => per_level[i].push(v),
                None => failed[i] += 1,
            }
        }
    }

    let mut rows = Vec::with_capacity(cfg.dts.len());
    for (i, &dt) in cfg.dts.iter().enumerate() {
        let values = &per_level[i];
        if values.is_empty() {
            return Err(SimError::EstimatorDegenerate { dt, n_paths: cfg.n_paths });
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        rows.push(ErrorRow {
            dt,
            error: mean,
            std_error: (var / n).sqrt(),
            n_paths: cfg.n_paths,
            n_failed: failed[i],
        });
    }

    let usable: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.error > 0.0 && r.error.is_finite())
        .map(|r| (r.dt, r.error))
        .collect();
    let regression = if usable.len() >= 2 {
        regress_rate(&usable)?
    } else {
        Regression { slope: f64::NAN, intercept: f64::NAN, r_squared: f64::NAN }
    };

    Ok(ErrorReport { rows, q_bar: cfg.q_bar, regression })
}

/// Least squares of log error on log dt; the slope is the empirical strong
/// order.
pub fn regress_rate(rows: &[(f64, f64)]) -> SimResult<Regression> {
    if rows.len() < 2 {
        return Err(SimError::InvalidData("regression needs at least 2 rows".into()));
    }
    if rows.iter().any(|&(dt, err)| dt <= 0.0 || err <= 0.0) {
        return Err(SimError::InvalidData(
            "regression rows must have positive dt and error".into(),
        ));
    }
    let n = rows.len() as f64;
    let xs: Vec<f64> = rows.iter().map(|r| r.0.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.1.ln()).collect();
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    if sxx == 0.0 {
        return Err(SimError::InvalidData("all step sizes identical".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let ss_tot: f64 = ys.iter().map(|y| (y - ybar) * (y - ybar)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let fit = intercept + slope * x;
            (y - fit) * (y - fit)
        })
        .sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(Regression { slope, intercept, r_squared })
}

/// One step size of a moment sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentRow {
    pub dt: f64,
    /// max over grid nodes of the Monte Carlo estimate of E |x(t_k)|^p
    pub max_moment: f64,
    pub n_paths: usize,
    pub n_failed: usize,
}

/// Grid-maximum p-th moment of the scheme per step size; a well-behaved
/// scheme keeps these bounded uniformly in the step size.
pub fn moment_sweep(
    problem: &SdeProblem,
    policy: &TruncationPolicy,
    dts: &[f64],
    p: f64,
    n_paths: usize,
    base_seed: u64,
) -> SimResult<Vec<MomentRow>> {
    if p < 2.0 {
        return Err(SimError::InvalidData(format!("moment order {p} must be >= 2")));
    }
    if n_paths < 1 {
        return Err(SimError::InvalidData("need at least one path".into()));
    }
    let span = problem.horizon - problem.t0;
    let mut out = Vec::with_capacity(dts.len());
    for &dt in dts {
        let per_path: Vec<Option<Vec<f64>>> = (0..n_paths as u64)
            .into_par_iter()
            .map(|path_index| {
                let path = generate_brownian_span(
                    problem.noise_dim,
                    dt,
                    span,
                    base_seed,
                    path_index,
                );
                match solve_truncated_em(problem, policy, dt, &path) {
                    Ok(traj) => Some(
                        (0..traj.n_nodes())
                            .map(|k| norm(traj.state(k)).powf(p))
                            .collect(),
                    ),
                    Err(_) => None,
                }
            })
            .collect();

        let mut n_failed = 0usize;
        let mut sums: Vec<f64> = Vec::new();
        let mut n_ok = 0usize;
        for path_moments in per_path {
            match path_moments {
                Some(ms) => {
                    if sums.is_empty() {
                        sums = vec![0.0; ms.len()];
                    }
                    for (s, v) in sums.iter_mut().zip(&ms) {
                        *s += v;
                    }
                    n_ok += 1;
                }
                None => n_failed += 1,
            }
        }
        if n_ok == 0 {
            return Err(SimError::EstimatorDegenerate { dt, n_paths });
        }
        let max_moment = sums
            .iter()
            .map(|s| s / n_ok as f64)
            .fold(f64::NEG_INFINITY, f64::max);
        out.push(MomentRow { dt, max_moment, n_paths, n_failed });
    }
    Ok(out)
}

/// Monte Carlo estimate of max over step midpoints of
/// E |x_dt(t) - step process(t)|^p_bar, with the continuous version emitted
/// on a twice-finer driving grid.
pub fn step_gap_estimate(
    problem: &SdeProblem,
    policy: &TruncationPolicy,
    dt: f64,
    n_paths: usize,
    base_seed: u64,
    p_bar: f64,
) -> SimResult<f64> {
    if n_paths < 1 {
        return Err(SimError::InvalidData("need at least one path".into()));
    }
    let span = problem.horizon - problem.t0;
    let fine_dt = dt / 2.0;
    let per_path: Vec<Option<Vec<f64>>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|path_index| {
            let path = generate_brownian_span(
                problem.noise_dim,
                fine_dt,
                span,
                base_seed,
                path_index,
            );
            match solve_truncated_em_continuous(problem, policy, dt, &path) {
                Ok((_, cont)) => {
                    let n_mid = cont.n_nodes() / 2;
                    Some(
                        (0..n_mid)
                            .map(|k| {
                                let node = 2 * k + 1;
                                let gap: f64 = cont
                                    .state(node)
                                    .iter()
                                    .zip(cont.step_state(node))
                                    .map(|(a, b)| (a - b) * (a - b))
                                    .sum();
                                gap.sqrt().powf(p_bar)
                            })
                            .collect(),
                    )
                }
                Err(_) => None,
            }
        })
        .collect();

    let mut sums: Vec<f64> = Vec::new();
    let mut n_ok = 0usize;
    for gaps in per_path.into_iter().flatten() {
        if sums.is_empty() {
            sums = vec![0.0; gaps.len()];
        }
        for (s, v) in sums.iter_mut().zip(&gaps) {
            *s += v;
        }
        n_ok += 1;
    }
    if n_ok == 0 {
        return Err(SimError::EstimatorDegenerate { dt, n_paths });
    }
    Ok(sums
        .iter()
        .map(|s| s / n_ok as f64)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Writes the pinned CSV format: full-precision rows, regression as trailing
/// comment lines.
pub fn write_error_report_csv<W: Write>(w: &mut W, report: &ErrorReport) -> io::Result<()> {
    writeln!(w, "dt,error,stderr,n_paths,n_failed")?;
    for row in &report.rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            row.dt, row.error, row.std_error, row.n_paths, row.n_failed
        )?;
    }
    writeln!(w, "# slope={}", report.regression.slope)?;
    writeln!(w, "# intercept={}", report.regression.intercept)?;
    writeln!(w, "# r2={}", report.regression.r_squared)?;
    Ok(())
}

pub fn write_moment_csv<W: Write>(w: &mut W, rows: &[MomentRow]) -> io::Result<()> {
    writeln!(w, "dt,max_moment,n_paths,n_failed")?;
    for row in rows {
        writeln!(w, "{},{},{},{}", row.dt, row.max_moment, row.n_paths, row.n_failed)?;
    }
    Ok(())
}
