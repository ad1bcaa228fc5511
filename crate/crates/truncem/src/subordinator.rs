//! One-sided stable subordinators, their discretized inverses, and the
//! composed solution of time-changed SDEs.
//!
//! The subordinator D is approximated by the random walk
//! D(t_i) = D(t_{i-1}) + xi_i with iid increments distributed as D(dt),
//! stopped once the walk exceeds the real-time horizon. Its inverse is the
//! step function E(t) = (min{n : D(t_n) > t} - 1) dt. The time-changed
//! solution is the composition x(E(t)) of the dual truncated EM solution
//! with that clock (duality principle), which requires no interpolation
//! because E(t) is always a node of the dual grid.

use crate::errors::{SimError, SimResult};
use crate::model::SdeProblem;
use crate::noise::generate_brownian;
use crate::rng::{uniform_open01, DrawKey, STREAM_SUBORDINATOR};
use crate::truncated_em::{solve_truncated_em, TruncationPolicy};

/// Stable subordinator with Laplace transform
/// E exp(-lambda D(t)) = exp(-t lambda^alpha), alpha strictly in (0, 1) so
/// the Levy measure is infinite and paths are strictly increasing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubordinatorSpec {
    alpha: f64,
}

impl SubordinatorSpec {
    pub fn stable(alpha: f64) -> SimResult<Self> {
        if alpha > 0.0 && alpha < 1.0 {
            Ok(Self { alpha })
        } else {
            Err(SimError::InvalidIndex(alpha))
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Laplace exponent phi(lambda) = lambda^alpha.
    pub fn laplace_exponent(&self, lambda: f64) -> f64 {
        lambda.powf(self.alpha)
    }
}

/// Walk values D(t_i) on the grid t_i = i dt, starting at 0 and covering the
/// requested real-time horizon (last value exceeds it).
#[derive(Clone, Debug)]
pub struct SubordinatorPath {
    dt: f64,
    values: Vec<f64>,
    horizon: f64,
}

impl SubordinatorPath {
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn horizon_covered(&self) -> f64 {
        self.horizon
    }

    pub fn n_increments(&self) -> usize {
        self.values.len() - 1
    }

    /// Builds a walk from explicit increments (the file-based test hook).
    /// Fails unless the accumulated walk exceeds the horizon.
    pub fn from_increments(dt: f64, horizon: f64, increments: &[f64]) -> SimResult<Self> {
        assert!(dt > 0.0 && horizon > 0.0);
        let mut values = Vec::with_capacity(increments.len() + 1);
        let mut d = 0.0;
        values.push(d);
        for (i, &inc) in increments.iter().enumerate() {
            if inc <= 0.0 || !inc.is_finite() {
                return Err(SimError::InvalidData(format!(
                    "increment {i} is {inc}; walk increments must be positive"
                )));
            }
            d += inc;
            values.push(d);
        }
        if d <= horizon {
            return Err(SimError::HorizonNotReached { horizon, max_steps: increments.len() });
        }
        Ok(Self { dt, values, horizon })
    }
}

/// Default cap on walk length before giving up on the horizon.
pub const DEFAULT_MAX_WALK_STEPS: usize = 1_000_000_000;

/// One draw of the totally positively skewed alpha-stable increment with
/// Laplace transform exp(-dt lambda^alpha); Kanter's representation from
/// one uniform angle and one exponential variate, scaled by dt^{1/alpha}.
pub fn sample_stable_increment(
    alpha: f64,
    dt: f64,
    seed: u64,
    key: DrawKey,
) -> SimResult<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(SimError::InvalidIndex(alpha));
    }
    assert!(dt > 0.0);
    let u = uniform_open01(seed, key.with_slot(0)) * std::f64::consts::PI;
    let w = -uniform_open01(seed, key.with_slot(1)).ln();
    let s1 = (alpha * u).sin() / u.sin().powf(1.0 / alpha);
    let s2 = (((1.0 - alpha) * u).sin() / w).powf((1.0 - alpha) / alpha);
    Ok(dt.powf(1.0 / alpha) * s1 * s2)
}

/// Simulates the walk until the horizon lies in [D(t_n), D(t_{n+1})),
/// returning all values including the overshooting one.
pub fn simulate_subordinator(
    spec: &SubordinatorSpec,
    dt: f64,
    horizon: f64,
    base_seed: u64,
    path_index: u64,
) -> SimResult<SubordinatorPath> {
    simulate_subordinator_aligned(spec, dt, horizon, base_seed, path_index, 1)
}

/// Like [`simulate_subordinator`] but keeps walking until the number of
/// increments is a multiple of `align`, so the walk can be coarsened by any
/// factor dividing `align` and the coarse walk still crosses the horizon.
pub fn simulate_subordinator_aligned(
    spec: &SubordinatorSpec,
    dt: f64,
    horizon: f64,
    base_seed: u64,
    path_index: u64,
    align: usize,
) -> SimResult<SubordinatorPath> {
    assert!(dt > 0.0 && horizon > 0.0 && align >= 1);
    let mut values = vec![0.0];
    let mut d = 0.0;
    let mut n: usize = 0;
    loop {
        if n >= DEFAULT_MAX_WALK_STEPS {
            return Err(SimError::HorizonNotReached {
                horizon,
                max_steps: DEFAULT_MAX_WALK_STEPS,
            });
        }
        let key = DrawKey::new(STREAM_SUBORDINATOR, path_index, 0, n as u64);
        d += sample_stable_increment(spec.alpha, dt, base_seed, key)?;
        values.push(d);
        n += 1;
        if d > horizon && n.is_multiple_of(align) {
            return Ok(SubordinatorPath { dt, values, horizon });
        }
    }
}

/// Coarse walk whose increments are sums of `factor` consecutive fine
/// increments — exact in distribution for stable increments. The values are
/// the fine walk's values at every `factor`-th index, trimmed at the first
/// coarse crossing, so the result is exactly what simulating at the coarse
/// step on the same noise would have produced.
pub fn coarsen_subordinator(
    path: &SubordinatorPath,
    factor: usize,
) -> SimResult<SubordinatorPath> {
    if factor == 0 {
        return Err(SimError::GridMismatch("factor must be at least 1".into()));
    }
    if factor == 1 {
        return Ok(path.clone());
    }
    let mut values = vec![0.0];
    let mut crossed = false;
    let mut idx = factor;
    while idx < path.values.len() {
        let v = path.values[idx];
        values.push(v);
        if v > path.horizon {
            crossed = true;
            break;
        }
        idx += factor;
    }
    if !crossed {
        return Err(SimError::GridMismatch(format!(
            "walk of {} increments cannot be coarsened by {factor} and still cross {}",
            path.n_increments(),
            path.horizon
        )));
    }
    Ok(SubordinatorPath {
        dt: factor as f64 * path.dt,
        values,
        horizon: path.horizon,
    })
}

/// E(t) = (min{n : D(t_n) > t} - 1) dt; equivalently i dt while t sits in
/// [D(t_i), D(t_{i+1})).
pub fn invert_subordinator(path: &SubordinatorPath, t: f64) -> SimResult<f64> {
    if !(0.0..=path.horizon).contains(&t) {
        return Err(SimError::OutOfRange { t, horizon: path.horizon });
    }
    let idx = path.values.partition_point(|&v| v <= t);
    debug_assert!(idx >= 1 && idx < path.values.len());
    Ok((idx - 1) as f64 * path.dt)
}

/// The discretized inverse subordinator as a step function: right-continuous,
/// nondecreasing, jumping by exactly dt at each walk value.
#[derive(Clone, Copy, Debug)]
pub struct InverseSubordinatorPath<'a> {
    walk: &'a SubordinatorPath,
}

impl<'a> InverseSubordinatorPath<'a> {
    pub fn of(walk: &'a SubordinatorPath) -> Self {
        Self { walk }
    }

    /// Jump locations on the real-time axis: the walk values D(t_i).
    pub fn jump_times(&self) -> &[f64] {
        &self.walk.values
    }

    /// Level reached after the i-th jump.
    pub fn level(&self, i: usize) -> f64 {
        i as f64 * self.walk.dt
    }

    /// E(t); queries are supported on [0, horizon].
    pub fn value(&self, t: f64) -> SimResult<f64> {
        invert_subordinator(self.walk, t)
    }
}

/// Solves the time-changed SDE by the four-step protocol: simulate the
/// subordinator, invert it, solve the dual SDE over Brownian time
/// [0, E(horizon) + dt], and return the composition x(E(t)) at the output
/// times. Wiener and subordinator draws come from disjoint streams.
#[allow(clippy::too_many_arguments)]
pub fn solve_time_changed(
    problem: &SdeProblem,
    policy: &TruncationPolicy,
    sub: &SubordinatorSpec,
    dt: f64,
    horizon: f64,
    base_seed: u64,
    path_index: u64,
    output_times: &[f64],
) -> SimResult<Vec<Vec<f64>>> {
    let walk = simulate_subordinator(sub, dt, horizon, base_seed, path_index)?;
    solve_time_changed_with_walk(problem, policy, dt, &walk, base_seed, path_index, output_times)
}

/// Same protocol with an injected subordinator walk (test hook / file input).
pub fn solve_time_changed_with_walk(
    problem: &SdeProblem,
    policy: &TruncationPolicy,
    dt: f64,
    walk: &SubordinatorPath,
    base_seed: u64,
    path_index: u64,
    output_times: &[f64],
) -> SimResult<Vec<Vec<f64>>> {
    if problem.t0 != 0.0 {
        return Err(SimError::InvalidData(format!(
            "time-changed solves need t0 = 0, problem starts at {}",
            problem.t0
        )));
    }
    let e_horizon = invert_subordinator(walk, walk.horizon_covered())?;
    let clock_nodes = (e_horizon / dt).round() as usize;
    // one spare step so E(horizon) is an interior node of the dual grid
    let n_steps = clock_nodes + 1;
    let dual_horizon = n_steps as f64 * dt;
    let path = generate_brownian(problem.noise_dim, dt, n_steps, base_seed, path_index);
    let dual = problem.with_horizon(dual_horizon);
    let traj = solve_truncated_em(&dual, policy, dt, &path)?;

    let mut out = Vec::with_capacity(output_times.len());
    for &t in output_times {
        let e = invert_subordinator(walk, t)?;
        let node = (e / dt).round() as usize;
        out.push(traj.state(node).to_vec());
    }
    Ok(out)
}
