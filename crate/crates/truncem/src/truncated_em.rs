//! Truncation machinery and the truncated Euler-Maruyama integrator.
//!
//! For a step size `dt` the scheme clips the *argument* of the coefficients
//! to the ball of radius f^{-1}(kappa(dt)) before every evaluation; the state
//! itself is never clipped. With kappa respecting the codomain requirement
//! kappa(dt) >= f(1), the clipped coefficients are bounded by kappa(dt),
//! which is what keeps the explicit scheme from the blow-ups the classical
//! method suffers on super-linear problems.

use crate::errors::{SimError, SimResult};
use crate::model::{norm, PowerLawBound, SdeProblem};
use crate::noise::BrownianPath;

/// Whether coefficient arguments are clipped (`Truncated`) or the scheme
/// degenerates to classical Euler-Maruyama (`Classical`, baseline runs).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchemeMode {
    Truncated,
    Classical,
}

/// Truncation schedule: dominating bound f, exponent of the kappa power law,
/// schedule cap, and the scheme mode.
///
/// `kappa(dt) = dt^-epsilon`, floored at f(1) unless the floor is disabled.
/// The floor realises the codomain requirement kappa: (0,1] -> [f(1), inf);
/// without it the clipped-coefficient bound |mu_dt| v |sigma_dt| <= kappa(dt)
/// can fail at large dt because f only dominates the coefficients for
/// arguments >= 1. The bare power law remains available for studying the
/// schedule itself.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncationPolicy {
    pub bound: PowerLawBound,
    pub epsilon: f64,
    pub h_hat: f64,
    pub mode: SchemeMode,
    pub kappa_floor: bool,
}

impl TruncationPolicy {
    /// Truncated-mode policy with the kappa floor engaged and
    /// h_hat = max(1, f(1)) so that dt^{1/4} kappa(dt) <= h_hat on (0, 1].
    pub fn new(bound: PowerLawBound, epsilon: f64) -> Self {
        assert!(
            epsilon > 0.0 && epsilon < 0.25,
            "epsilon must lie in (0, 1/4), got {epsilon}"
        );
        Self {
            bound,
            epsilon,
            h_hat: bound.at_one().max(1.0),
            mode: SchemeMode::Truncated,
            kappa_floor: true,
        }
    }

    /// Policy using the problem's own dominating bound.
    pub fn for_problem(problem: &SdeProblem, epsilon: f64) -> Self {
        Self::new(problem.dominating, epsilon)
    }

    /// Classical Euler-Maruyama baseline: no clipping at all.
    pub fn classical() -> Self {
        Self {
            bound: PowerLawBound::new(1.0, 1.0),
            epsilon: 0.1,
            h_hat: 1.0,
            mode: SchemeMode::Classical,
            kappa_floor: false,
        }
    }

    /// Disables the f(1) floor, leaving the bare power law
    /// kappa(dt) = dt^-epsilon.
    pub fn without_kappa_floor(mut self) -> Self {
        self.kappa_floor = false;
        self
    }

    pub fn with_mode(mut self, mode: SchemeMode) -> Self {
        self.mode = mode;
        self
    }

    /// kappa(dt) for dt in (0, 1].
    pub fn kappa(&self, dt: f64) -> f64 {
        let raw = dt.powf(-self.epsilon);
        if self.kappa_floor {
            raw.max(self.bound.at_one())
        } else {
            raw
        }
    }

    /// Truncation radius f^{-1}(kappa(dt)); infinite in classical mode.
    pub fn truncation_radius(&self, dt: f64) -> SimResult<f64> {
        if !(dt > 0.0 && dt <= 1.0) {
            return Err(SimError::InvalidStepSize(dt));
        }
        match self.mode {
            SchemeMode::Classical => Ok(f64::INFINITY),
            SchemeMode::Truncated => Ok(self.bound.inverse(self.kappa(dt))),
        }
    }
}

/// Radially clips `x` to the closed ball of the given radius:
/// (|x| ^ radius) x / |x|, with 0 mapped to 0.
///
/// A state already inside the ball is returned bit-identical; a clipped
/// state is rescaled until its norm is <= radius in floating point, so the
/// map is exactly idempotent.
pub fn truncate_state(x: &[f64], radius: f64) -> Vec<f64> {
    let mut out = x.to_vec();
    truncate_state_in_place(&mut out, radius);
    out
}

pub fn truncate_state_in_place(x: &mut [f64], radius: f64) {
    assert!(radius > 0.0, "radius must be positive");
    let mut n = norm(x);
    // One rescale lands within an ulp of the sphere; repeat in the rare case
    // rounding left the norm a hair above the radius.
    while n > radius {
        let s = radius / n;
        for v in x.iter_mut() {
            *v *= s;
        }
        n = norm(x);
    }
}

/// One truncated EM update:
/// x + mu(t, pi(x)) dt + sum_r sigma^r(t, pi(x)) dW^r,
/// where pi clips at the policy's nominal-step radius (identity in
/// classical mode). The spelled-out radius form is what the solvers use
/// internally with the radius hoisted out of the loop.
pub fn step_truncated_em(
    problem: &SdeProblem,
    policy: &TruncationPolicy,
    nominal_dt: f64,
    t: f64,
    x: &[f64],
    step_len: f64,
    dw: &[f64],
) -> SimResult<Vec<f64>> {
    let radius = policy.truncation_radius(nominal_dt)?;
    let mut stepper = EmStepper::new(problem, radius);
    let mut state = x.to_vec();
    stepper.step_in_place(t, &mut state, step_len, dw, 0)?;
    Ok(state)
}

/// Reusable stepping kernel: owns the scratch buffers so the hot loop does
/// not allocate, and pins the coefficient-argument radius for a whole run.
pub(crate) struct EmStepper<'a> {
    problem: &'a SdeProblem,
    radius: f64,
    clipped: Vec<f64>,
    drift: Vec<f64>,
    column: Vec<f64>,
}

impl<'a> EmStepper<'a> {
    pub fn new(problem: &'a SdeProblem, radius: f64) -> Self {
        let d = problem.state_dim;
        Self {
            problem,
            radius,
            clipped: vec![0.0; d],
            drift: vec![0.0; d],
            column: vec![0.0; d],
        }
    }

    /// Advances `x` over [t, t + step_len] with increments `dw` (one per
    /// channel). Fails if the result is non-finite.
    #[inline]
    pub fn step_in_place(
        &mut self,
        t: f64,
        x: &mut [f64],
        step_len: f64,
        dw: &[f64],
        step_index: usize,
    ) -> SimResult<()> {
        self.freeze_at(t, x);
        self.advance_frozen(x, step_len, dw, t, step_index)
    }

    /// Evaluates and caches the clipped-argument coefficients at (t, x).
    #[inline]
    pub fn freeze_at(&mut self, t: f64, x: &[f64]) {
        self.clipped.copy_from_slice(x);
        if self.radius.is_finite() {
            truncate_state_in_place(&mut self.clipped, self.radius);
        }
        self.problem.drift_into(t, &self.clipped, &mut self.drift);
    }

    /// Applies the frozen coefficients: x += mu dt + sum_r sigma^r dW^r.
    /// The frozen time is needed again because diffusion columns are
    /// evaluated lazily per channel.
    #[inline]
    pub fn advance_frozen(
        &mut self,
        x: &mut [f64],
        step_len: f64,
        dw: &[f64],
        frozen_t: f64,
        step_index: usize,
    ) -> SimResult<()> {
        for (xi, di) in x.iter_mut().zip(&self.drift) {
            *xi += di * step_len;
        }
        for (r, &inc) in dw.iter().enumerate() {
            self.problem.diffusion_into(frozen_t, &self.clipped, r, &mut self.column);
            for (xi, ci) in x.iter_mut().zip(&self.column) {
                *xi += ci * inc;
            }
        }
        if x.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(SimError::NumericOverflow {
                t: frozen_t,
                state_norm: norm(&self.clipped),
                step: step_index,
            })
        }
    }

    /// Value of the continuous version inside the current step: the state at
    /// the last node advanced with the frozen coefficients over a partial
    /// step — exactly the integrand frozen at (tau(s), step process).
    #[inline]
    pub fn continuous_value(
        &mut self,
        node_state: &[f64],
        partial_len: f64,
        partial_dw: &[f64],
        frozen_t: f64,
        out: &mut [f64],
    ) {
        out.copy_from_slice(node_state);
        for (oi, di) in out.iter_mut().zip(&self.drift) {
            *oi += di * partial_len;
        }
        for (r, &inc) in partial_dw.iter().enumerate() {
            self.problem.diffusion_into(frozen_t, &self.clipped, r, &mut self.column);
            for (oi, ci) in out.iter_mut().zip(&self.column) {
                *oi += ci * inc;
            }
        }
    }
}

/// Uniform grid t_k = t0 + k dt with the final node forced to the horizon;
/// the last step may be shorter than dt.
#[derive(Clone, Copy, Debug)]
pub struct StepGrid {
    pub t0: f64,
    pub horizon: f64,
    pub dt: f64,
    n_whole: usize,
    trailing: Option<f64>,
}

impl StepGrid {
    pub fn new(t0: f64, horizon: f64, dt: f64) -> SimResult<Self> {
        if !(dt > 0.0 && dt <= 1.0) {
            return Err(SimError::InvalidStepSize(dt));
        }
        let span = horizon - t0;
        if span <= 0.0 {
            return Err(SimError::InvalidData(format!(
                "window [{t0}, {horizon}] is empty"
            )));
        }
        let ratio = span / dt;
        let mut n_whole = (ratio + 1e-9).floor() as usize;
        let rem = span - n_whole as f64 * dt;
        let trailing = if (ratio - n_whole as f64).abs() <= 1e-9 {
            None
        } else if rem > 0.0 {
            Some(rem)
        } else {
            // dt overshoots the horizon: single short step
            n_whole = 0;
            Some(span)
        };
        Ok(Self { t0, horizon, dt, n_whole, trailing })
    }

    /// Number of steps, trailing short one included.
    pub fn n_steps(&self) -> usize {
        self.n_whole + usize::from(self.trailing.is_some())
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps() + 1
    }

    /// Grid node time; the last node is the horizon exactly.
    pub fn node_time(&self, k: usize) -> f64 {
        debug_assert!(k < self.n_nodes());
        if k == self.n_nodes() - 1 {
            self.horizon
        } else {
            self.t0 + k as f64 * self.dt
        }
    }

    /// Length of step k (from node k to node k+1).
    pub fn step_len(&self, k: usize) -> f64 {
        debug_assert!(k < self.n_steps());
        if k == self.n_whole {
            self.trailing.unwrap()
        } else {
            self.dt
        }
    }
}

/// Snapshot of the policy parameters a trajectory was produced under.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicySnapshot {
    pub epsilon: f64,
    pub radius: f64,
}

/// Discrete truncated EM solution on its step grid.
#[derive(Clone, Debug)]
pub struct TrajectoryGrid {
    pub t_grid: Vec<f64>,
    states: Vec<f64>,
    pub state_dim: usize,
    pub dt: f64,
    pub policy_snapshot: PolicySnapshot,
}

impl TrajectoryGrid {
    pub fn n_nodes(&self) -> usize {
        self.t_grid.len()
    }

    pub fn state(&self, node: usize) -> &[f64] {
        &self.states[node * self.state_dim..(node + 1) * self.state_dim]
    }

    pub fn terminal(&self) -> &[f64] {
        self.state(self.n_nodes() - 1)
    }
}

/// Step-function and stochastic-integral views of a solution sampled on the
/// driving path's finer grid.
#[derive(Clone, Debug)]
pub struct ContinuousVersion {
    pub t: Vec<f64>,
    /// Continuous version x_dt(s): coefficients frozen at the last grid
    /// node, fine Brownian increments accumulated.
    states: Vec<f64>,
    /// Step process: the last grid node's state, held constant.
    step_states: Vec<f64>,
    pub state_dim: usize,
}

impl ContinuousVersion {
    pub fn n_nodes(&self) -> usize {
        self.t.len()
    }

    pub fn state(&self, node: usize) -> &[f64] {
        &self.states[node * self.state_dim..(node + 1) * self.state_dim]
    }

    pub fn step_state(&self, node: usize) -> &[f64] {
        &self.step_states[node * self.state_dim..(node + 1) * self.state_dim]
    }
}

fn path_ratio(grid: &StepGrid, path: &BrownianPath) -> SimResult<(usize, usize)> {
    let ratio = grid.dt / path.dt();
    let rounded = ratio.round();
    if rounded < 1.0 || (ratio - rounded).abs() > 1e-6 {
        return Err(SimError::GridMismatch(format!(
            "path dt {} does not divide solver dt {}",
            path.dt(),
            grid.dt
        )));
    }
    let ratio = rounded as usize;
    // Every solver node, including the forced final one, must sit on the
    // path grid.
    if grid.n_whole * ratio > path.n_steps() {
        return Err(SimError::GridMismatch(format!(
            "path covers {} uniform steps, solver needs {}",
            path.n_steps(),
            grid.n_whole * ratio
        )));
    }
    let final_node = path.node_at_offset(grid.horizon - grid.t0).ok_or_else(|| {
        SimError::GridMismatch(format!(
            "horizon {} is not a node of the driving path",
            grid.horizon
        ))
    })?;
    Ok((ratio, final_node))
}

/// Runs the truncated EM scheme at step `dt` driven by `path`, which may be
/// finer than `dt` (integer ratio); the solver then consumes block sums of
/// the fine increments through the path's cumulative values, so coarse and
/// fine runs on one path are exactly coupled.
pub fn solve_truncated_em(
    problem: &SdeProblem,
    policy: &TruncationPolicy,
    dt: f64,
    path: &BrownianPath,
) -> SimResult<TrajectoryGrid> {
    solve_impl(problem, policy, dt, path, false).map(|(grid, _)| grid)
}

/// Same as [`solve_truncated_em`] but also emits the continuous version
/// x_dt(s) and the step process at every node of the (finer) driving path.
pub fn solve_truncated_em_continuous(
    problem: &SdeProblem,
    policy: &TruncationPolicy,
    dt: f64,
    path: &BrownianPath,
) -> SimResult<(TrajectoryGrid, ContinuousVersion)> {
    let (grid, cont) = solve_impl(problem, policy, dt, path, true)?;
    Ok((grid, cont.expect("continuous emission requested")))
}

fn solve_impl(
    problem: &SdeProblem,
    policy: &TruncationPolicy,
    dt: f64,
    path: &BrownianPath,
    emit_continuous: bool,
) -> SimResult<(TrajectoryGrid, Option<ContinuousVersion>)> {
    if path.channels() != problem.noise_dim {
        return Err(SimError::GridMismatch(format!(
            "path has {} channels, problem needs {}",
            path.channels(),
            problem.noise_dim
        )));
    }
    let grid = StepGrid::new(problem.t0, problem.horizon, dt)?;
    let (ratio, final_node) = path_ratio(&grid, path)?;
    let radius = policy.truncation_radius(dt)?;
    let d = problem.state_dim;
    let m = problem.noise_dim;

    let mut stepper = EmStepper::new(problem, radius);
    let mut state = problem.x0.clone();
    let mut t_grid = Vec::with_capacity(grid.n_nodes());
    let mut states = Vec::with_capacity(grid.n_nodes() * d);
    t_grid.push(grid.node_time(0));
    states.extend_from_slice(&state);

    let mut cont = if emit_continuous {
        let nodes = final_node + 1;
        let mut c = ContinuousVersion {
            t: Vec::with_capacity(nodes),
            states: Vec::with_capacity(nodes * d),
            step_states: Vec::with_capacity(nodes * d),
            state_dim: d,
        };
        c.t.push(grid.t0);
        c.states.extend_from_slice(&state);
        c.step_states.extend_from_slice(&state);
        Some(c)
    } else {
        None
    };

    let mut dw = vec![0.0; m];
    let mut partial = vec![0.0; m];
    let mut cont_buf = vec![0.0; d];

    for k in 0..grid.n_steps() {
        let t_k = grid.node_time(k);
        let node_lo = k * ratio;
        let node_hi = if k == grid.n_steps() - 1 { final_node } else { (k + 1) * ratio };
        for (r, inc) in dw.iter_mut().enumerate() {
            *inc = path.value(r, node_hi) - path.value(r, node_lo);
        }
        stepper.freeze_at(t_k, &state);
        if let Some(c) = cont.as_mut() {
            // interior fine nodes of this step, coefficients frozen at t_k
            for node in node_lo + 1..node_hi {
                for (r, inc) in partial.iter_mut().enumerate() {
                    *inc = path.value(r, node) - path.value(r, node_lo);
                }
                let s = grid.t0 + path.node_offset(node);
                stepper.continuous_value(
                    &state,
                    s - t_k,
                    &partial,
                    t_k,
                    &mut cont_buf,
                );
                c.t.push(s);
                c.states.extend_from_slice(&cont_buf);
                c.step_states.extend_from_slice(&state);
            }
        }
        let step_len = grid.step_len(k);
        stepper.advance_frozen(&mut state, step_len, &dw, t_k, k)?;
        t_grid.push(grid.node_time(k + 1));
        states.extend_from_slice(&state);
        if let Some(c) = cont.as_mut() {
            c.t.push(grid.node_time(k + 1));
            c.states.extend_from_slice(&state);
            c.step_states.extend_from_slice(&state);
        }
    }

    Ok((
        TrajectoryGrid {
            t_grid,
            states,
            state_dim: d,
            dt,
            policy_snapshot: PolicySnapshot { epsilon: policy.epsilon, radius },
        },
        cont,
    ))
}
