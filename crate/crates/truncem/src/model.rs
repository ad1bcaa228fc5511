//! SDE problem definitions: coefficients, time window, growth metadata,
//! the built-in example problems, and numeric probes of the structural
//! assumptions (one-sided Lipschitz monotonicity and coercivity).

use std::fmt;
use std::sync::Arc;

use crate::errors::{SimError, SimResult};
use crate::rng::{uniform_open01, DrawKey, STREAM_PROBE};

/// Coefficient callback: writes mu(t, x) (or one diffusion column) into `out`.
pub type CoeffFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// Closed-form terminal value given the elapsed span and the terminal Wiener
/// values on the same path; available only for problems with an explicit
/// strong solution (GBM).
pub type ExactTerminalFn = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;

/// Power-law dominating bound f(u) = coefficient * u^exponent with its
/// closed-form inverse. This is the problem's growth-bound metadata: f must
/// dominate sup_{|x| <= u} (|mu| v |sigma^r|) for u >= 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerLawBound {
    pub coefficient: f64,
    pub exponent: f64,
}

impl PowerLawBound {
    pub fn new(coefficient: f64, exponent: f64) -> Self {
        assert!(coefficient > 0.0 && exponent > 0.0, "bound must be strictly increasing");
        Self { coefficient, exponent }
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        self.coefficient * u.powf(self.exponent)
    }

    #[inline]
    pub fn inverse(&self, v: f64) -> f64 {
        (v / self.coefficient).powf(1.0 / self.exponent)
    }

    /// f(1), the smallest admissible truncation threshold.
    pub fn at_one(&self) -> f64 {
        self.coefficient
    }
}

/// An SDE dx = mu(t, x) dt + sum_r sigma^r(t, x) dW^r on [t0, horizon].
///
/// Values are immutable after construction and cheap to clone (coefficients
/// are shared), so one problem may be used from any number of workers.
#[derive(Clone)]
pub struct SdeProblem {
    pub name: String,
    pub state_dim: usize,
    pub noise_dim: usize,
    pub t0: f64,
    pub horizon: f64,
    pub x0: Vec<f64>,
    /// Polynomial-growth exponent beta of the coefficients.
    pub beta: f64,
    /// Temporal Hoelder index of the drift.
    pub gamma: f64,
    /// Temporal Hoelder index of the diffusion.
    pub alpha: f64,
    /// Dominating bound used to build truncation policies.
    pub dominating: PowerLawBound,
    drift: CoeffFn,
    diffusion: Vec<CoeffFn>,
    exact_terminal: Option<ExactTerminalFn>,
}

impl fmt::Debug for SdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeProblem")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("noise_dim", &self.noise_dim)
            .field("t0", &self.t0)
            .field("horizon", &self.horizon)
            .field("x0", &self.x0)
            .field("beta", &self.beta)
            .field("gamma", &self.gamma)
            .field("alpha", &self.alpha)
            .finish_non_exhaustive()
    }
}

impl SdeProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        t0: f64,
        horizon: f64,
        x0: Vec<f64>,
        drift: CoeffFn,
        diffusion: Vec<CoeffFn>,
    ) -> Self {
        assert!(horizon > t0, "horizon must exceed t0");
        assert!(!x0.is_empty() && x0.iter().all(|v| v.is_finite()), "x0 must be finite");
        assert!(!diffusion.is_empty(), "need at least one diffusion column");
        let state_dim = x0.len();
        Self {
            name: name.into(),
            state_dim,
            noise_dim: diffusion.len(),
            t0,
            horizon,
            x0,
            beta: 0.0,
            gamma: 1.0,
            alpha: 1.0,
            dominating: PowerLawBound::new(1.0, 1.0),
            drift,
            diffusion,
            exact_terminal: None,
        }
    }

    pub fn with_growth(mut self, beta: f64, gamma: f64, alpha: f64) -> Self {
        assert!(beta >= 0.0 && gamma > 0.0 && gamma <= 1.0 && alpha > 0.0 && alpha <= 1.0);
        self.beta = beta;
        self.gamma = gamma;
        self.alpha = alpha;
        self
    }

    pub fn with_dominating_bound(mut self, bound: PowerLawBound) -> Self {
        self.dominating = bound;
        self
    }

    pub fn with_exact_terminal(mut self, f: ExactTerminalFn) -> Self {
        self.exact_terminal = Some(f);
        self
    }

    /// Same problem on a different window end (used for dual solves whose
    /// horizon is only known once the time change is realised).
    pub fn with_horizon(&self, horizon: f64) -> Self {
        assert!(horizon > self.t0);
        let mut p = self.clone();
        p.horizon = horizon;
        p
    }

    pub fn exact_terminal(&self) -> Option<&ExactTerminalFn> {
        self.exact_terminal.as_ref()
    }

    /// Raw drift evaluation into a caller buffer; no finiteness check.
    #[inline]
    pub fn drift_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.state_dim);
        debug_assert_eq!(out.len(), self.state_dim);
        (self.drift)(t, x, out);
    }

    /// Raw diffusion-column evaluation into a caller buffer.
    #[inline]
    pub fn diffusion_into(&self, t: f64, x: &[f64], channel: usize, out: &mut [f64]) {
        debug_assert!(channel < self.noise_dim);
        (self.diffusion[channel])(t, x, out);
    }
}

/// Evaluates mu(t, x), rejecting non-finite output.
pub fn evaluate_drift(problem: &SdeProblem, t: f64, x: &[f64]) -> SimResult<Vec<f64>> {
    let mut out = vec![0.0; problem.state_dim];
    problem.drift_into(t, x, &mut out);
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(SimError::NumericOverflow { t, state_norm: norm(x), step: 0 })
    }
}

/// Evaluates the diffusion column sigma^channel(t, x), 0-based channel.
pub fn evaluate_diffusion(
    problem: &SdeProblem,
    t: f64,
    x: &[f64],
    channel: usize,
) -> SimResult<Vec<f64>> {
    assert!(channel < problem.noise_dim, "channel out of range");
    let mut out = vec![0.0; problem.state_dim];
    problem.diffusion_into(t, x, channel, &mut out);
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(SimError::NumericOverflow { t, state_norm: norm(x), step: 0 })
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Builds one of the built-in problems:
///
/// * `example1` — scalar, [t(1-t)]^{1/4} x^2 - 2x^5 drift, matching diffusion
///   factor, window [0, 1], x0 = 2, beta = 4, gamma = alpha = 1/4.
/// * `example2` — scalar, [(t-1)(2-t)]^{1/5} x^2 - 2x^5 drift, diffusion
///   temporal power 2/5, window [1, 2], x0 = 2, beta = 4, gamma = 1/5,
///   alpha = 2/5.
/// * `timechanged2d` — the 2-D system dy1 = -2 y1^4 dt + y2^2 dW,
///   dy2 = -2 y2^4 dt + y1^2 dW, y(0) = (1, 2); the dual SDE of the
///   time-changed study.
/// * `gbm` — linear test problem dx = 0.1 x dt + 0.2 x dW, x0 = 1, with its
///   closed-form terminal solution attached.
/// * `ou` — Ornstein-Uhlenbeck dx = -(x) dt + 0.3 dW, x0 = 1.
pub fn builtin_problem(name: &str) -> SimResult<SdeProblem> {
    match name {
        "example1" => {
            let drift: CoeffFn = Arc::new(|t: f64, x: &[f64], out: &mut [f64]| {
                let tf = (t * (1.0 - t)).max(0.0).powf(0.25);
                let v = x[0];
                out[0] = tf * v * v - 2.0 * v.powi(5);
            });
            let diff: CoeffFn = Arc::new(|t: f64, x: &[f64], out: &mut [f64]| {
                let tf = (t * (1.0 - t)).max(0.0).powf(0.25);
                out[0] = tf * x[0] * x[0];
            });
            Ok(SdeProblem::new("example1", 0.0, 1.0, vec![2.0], drift, vec![diff])
                .with_growth(4.0, 0.25, 0.25)
                .with_dominating_bound(PowerLawBound::new(3.0, 5.0)))
        }
        "example2" => {
            let drift: CoeffFn = Arc::new(|t: f64, x: &[f64], out: &mut [f64]| {
                let tf = ((t - 1.0) * (2.0 - t)).max(0.0).powf(0.2);
                let v = x[0];
                out[0] = tf * v * v - 2.0 * v.powi(5);
            });
            let diff: CoeffFn = Arc::new(|t: f64, x: &[f64], out: &mut [f64]| {
                let tf = ((t - 1.0) * (2.0 - t)).max(0.0).powf(0.4);
                out[0] = tf * x[0] * x[0];
            });
            Ok(SdeProblem::new("example2", 1.0, 2.0, vec![2.0], drift, vec![diff])
                .with_growth(4.0, 0.2, 0.4)
                .with_dominating_bound(PowerLawBound::new(3.0, 5.0)))
        }
        "timechanged2d" => {
            let drift: CoeffFn = Arc::new(|_t: f64, x: &[f64], out: &mut [f64]| {
                out[0] = -2.0 * x[0].powi(4);
                out[1] = -2.0 * x[1].powi(4);
            });
            let diff: CoeffFn = Arc::new(|_t: f64, x: &[f64], out: &mut [f64]| {
                out[0] = x[1] * x[1];
                out[1] = x[0] * x[0];
            });
            Ok(SdeProblem::new("timechanged2d", 0.0, 1.0, vec![1.0, 2.0], drift, vec![diff])
                .with_growth(3.0, 1.0, 1.0)
                .with_dominating_bound(PowerLawBound::new(3.0, 4.0)))
        }
        "gbm" => {
            let (a, b) = (0.1, 0.2);
            let drift: CoeffFn = Arc::new(move |_t, x: &[f64], out: &mut [f64]| {
                out[0] = a * x[0];
            });
            let diff: CoeffFn = Arc::new(move |_t, x: &[f64], out: &mut [f64]| {
                out[0] = b * x[0];
            });
            let x0 = 1.0;
            let exact: ExactTerminalFn = Arc::new(move |span: f64, w: &[f64]| {
                vec![x0 * ((a - 0.5 * b * b) * span + b * w[0]).exp()]
            });
            Ok(SdeProblem::new("gbm", 0.0, 1.0, vec![x0], drift, vec![diff])
                .with_growth(0.0, 1.0, 1.0)
                .with_dominating_bound(PowerLawBound::new(b.max(a), 1.0))
                .with_exact_terminal(exact))
        }
        "ou" => {
            let (theta, sigma) = (1.0, 0.3);
            let drift: CoeffFn = Arc::new(move |_t, x: &[f64], out: &mut [f64]| {
                out[0] = -theta * x[0];
            });
            let diff: CoeffFn = Arc::new(move |_t, _x: &[f64], out: &mut [f64]| {
                out[0] = sigma;
            });
            Ok(SdeProblem::new("ou", 0.0, 1.0, vec![1.0], drift, vec![diff])
                .with_growth(0.0, 1.0, 1.0)
                .with_dominating_bound(PowerLawBound::new(theta + sigma, 1.0)))
        }
        other => Err(SimError::UnknownProblem(other.to_string())),
    }
}

/// Names accepted by [`builtin_problem`], in CLI order.
pub const BUILTIN_NAMES: [&str; 5] = ["example1", "example2", "timechanged2d", "gbm", "ou"];

/// Which structural inequality a probe sample violated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeCheck {
    /// (x-y)^T (mu(t,x)-mu(t,y)) + (q-1)/2 sum_r |sigma^r(t,x)-sigma^r(t,y)|^2
    /// against L |x-y|^2.
    Monotonicity,
    /// x^T mu(t,x) + (q-1)/2 sum_r |sigma^r(t,x)|^2 against L (1+|x|^2).
    Coercivity,
}

/// One sampled point whose left-hand side exceeded the reference bound.
#[derive(Clone, Debug)]
pub struct ProbeViolation {
    pub check: ProbeCheck,
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Option<Vec<f64>>,
    pub lhs: f64,
    pub rhs: f64,
}

/// Outcome of a randomized assumption probe.
#[derive(Clone, Debug)]
pub struct AssumptionProbeReport {
    pub samples_tested: usize,
    pub violations: Vec<ProbeViolation>,
    /// Largest sampled ratio lhs / normalizer over both checks.
    pub max_ratio: f64,
}

/// Reference constant against which sampled ratios are compared; no sharp
/// constants are known for the example problems, so the probe reports any
/// sample whose ratio exceeds this as a violation.
pub const DEFAULT_PROBE_RATIO_BOUND: f64 = 10.0;

/// Samples (t, x, y) uniformly in [t0, T] x box^2 and evaluates the
/// monotonicity and coercivity inequalities at each sample with the given
/// moment parameter `q` standing in for both q and p.
pub fn probe_monotonicity(
    problem: &SdeProblem,
    q: f64,
    n_samples: usize,
    box_radius: f64,
    rng_seed: u64,
) -> AssumptionProbeReport {
    probe_monotonicity_with_bound(
        problem,
        q,
        n_samples,
        box_radius,
        rng_seed,
        DEFAULT_PROBE_RATIO_BOUND,
    )
}

pub fn probe_monotonicity_with_bound(
    problem: &SdeProblem,
    q: f64,
    n_samples: usize,
    box_radius: f64,
    rng_seed: u64,
    ratio_bound: f64,
) -> AssumptionProbeReport {
    assert!(q > 2.0, "q must exceed 2");
    assert!(n_samples >= 1 && box_radius > 0.0);
    let d = problem.state_dim;
    let m = problem.noise_dim;
    let span = problem.horizon - problem.t0;
    let half = (q - 1.0) / 2.0;

    let mut violations = Vec::new();
    let mut max_ratio: f64 = 0.0;
    let mut mu_x = vec![0.0; d];
    let mut mu_y = vec![0.0; d];
    let mut sig_x = vec![0.0; d];
    let mut sig_y = vec![0.0; d];

    for sample in 0..n_samples {
        let mut slot = 0u64;
        let mut draw = || {
            let u = uniform_open01(
                rng_seed,
                DrawKey::new(STREAM_PROBE, sample as u64, 0, 0).with_slot(slot),
            );
            slot += 1;
            u
        };
        let t = problem.t0 + span * draw();
        let x: Vec<f64> = (0..d).map(|_| box_radius * (2.0 * draw() - 1.0)).collect();
        let y: Vec<f64> = (0..d).map(|_| box_radius * (2.0 * draw() - 1.0)).collect();

        problem.drift_into(t, &x, &mut mu_x);
        problem.drift_into(t, &y, &mut mu_y);

        // Monotonicity (one-sided Lipschitz) check.
        let mut lhs = (0..d).map(|i| (x[i] - y[i]) * (mu_x[i] - mu_y[i])).sum::<f64>();
        for r in 0..m {
            problem.diffusion_into(t, &x, r, &mut sig_x);
            problem.diffusion_into(t, &y, r, &mut sig_y);
            lhs += half * (0..d).map(|i| (sig_x[i] - sig_y[i]).powi(2)).sum::<f64>();
        }
        let normalizer = (0..d).map(|i| (x[i] - y[i]).powi(2)).sum::<f64>();
        if normalizer > 0.0 {
            max_ratio = max_ratio.max(lhs / normalizer);
            let rhs = ratio_bound * normalizer;
            if lhs > rhs {
                violations.push(ProbeViolation {
                    check: ProbeCheck::Monotonicity,
                    t,
                    x: x.clone(),
                    y: Some(y.clone()),
                    lhs,
                    rhs,
                });
            }
        }

        // Coercivity check at x alone.
        let mut lhs = (0..d).map(|i| x[i] * mu_x[i]).sum::<f64>();
        for r in 0..m {
            problem.diffusion_into(t, &x, r, &mut sig_x);
            lhs += half * (0..d).map(|i| sig_x[i] * sig_x[i]).sum::<f64>();
        }
        let normalizer = 1.0 + (0..d).map(|i| x[i] * x[i]).sum::<f64>();
        max_ratio = max_ratio.max(lhs / normalizer);
        let rhs = ratio_bound * normalizer;
        if lhs > rhs {
            violations.push(ProbeViolation {
                check: ProbeCheck::Coercivity,
                t,
                x,
                y: None,
                lhs,
                rhs,
            });
        }
    }

    AssumptionProbeReport { samples_tested: n_samples, violations, max_ratio }
}
