//! Seed-addressed Brownian increment grids with exact coarsening.
//!
//! The authoritative data of a path is the cumulative sum W(t_k) of the raw
//! Gaussian draws, folded left to right once at generation time. Increments
//! are differences of those grid values and coarsening merely subsamples
//! them, so a coarse path agrees with its parent bit-for-bit at every shared
//! node, factors compose exactly, and a solver driven by a finer path
//! consumes the identical noise as one driven by the coarse view. That is
//! the coupling the strong-error estimator relies on.

use crate::errors::{SimError, SimResult};
use crate::rng::{standard_normal, DrawKey, STREAM_WIENER};

/// Identifies the counter stream a path was generated from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedLineage {
    pub base_seed: u64,
    pub path_index: u64,
}

/// Brownian increments for `channels` independent Wiener coordinates on a
/// uniform grid of step `dt`, with an optional short trailing step so a
/// window whose span is not a multiple of `dt` can still end on a node.
#[derive(Clone, Debug)]
pub struct BrownianPath {
    dt: f64,
    n_steps: usize,
    trailing: Option<f64>,
    channels: usize,
    /// Channel-major cumulative values, `channels * n_nodes` entries,
    /// `cum[c * n_nodes] == 0`.
    cum: Vec<f64>,
    lineage: SeedLineage,
}

impl BrownianPath {
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of uniform steps (excludes the trailing short step).
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn trailing_step(&self) -> Option<f64> {
        self.trailing
    }

    /// Total number of increments, trailing one included.
    pub fn n_increments(&self) -> usize {
        self.n_steps + usize::from(self.trailing.is_some())
    }

    pub fn n_nodes(&self) -> usize {
        self.n_increments() + 1
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn lineage(&self) -> SeedLineage {
        self.lineage
    }

    /// Time offset of a node from the window start.
    pub fn node_offset(&self, node: usize) -> f64 {
        debug_assert!(node < self.n_nodes());
        if node <= self.n_steps {
            node as f64 * self.dt
        } else {
            self.n_steps as f64 * self.dt + self.trailing.unwrap_or(0.0)
        }
    }

    /// Time span covered by the whole path.
    pub fn span(&self) -> f64 {
        self.node_offset(self.n_nodes() - 1)
    }

    /// W value at a grid node (cumulative sum of increments, W(0) = 0).
    #[inline]
    pub fn value(&self, channel: usize, node: usize) -> f64 {
        debug_assert!(channel < self.channels && node < self.n_nodes());
        self.cum[channel * self.n_nodes() + node]
    }

    /// Increment over [node k, node k+1].
    #[inline]
    pub fn increment(&self, channel: usize, k: usize) -> f64 {
        self.value(channel, k + 1) - self.value(channel, k)
    }

    /// Maps a time offset to the grid node sitting there, if any.
    pub fn node_at_offset(&self, offset: f64) -> Option<usize> {
        let idx = (offset / self.dt).round();
        if idx >= 0.0 && (idx as usize) <= self.n_steps {
            let idx = idx as usize;
            if (idx as f64 * self.dt - offset).abs() <= 1e-9 * self.dt.max(offset.abs()) {
                return Some(idx);
            }
        }
        let last = self.n_nodes() - 1;
        if (self.span() - offset).abs() <= 1e-9 * self.dt.max(offset.abs()) {
            return Some(last);
        }
        None
    }
}

/// Generates a path of `n_steps` increments, each Normal(0, dt), from the
/// counter stream keyed by `(base_seed, path_index, channel, step)`.
pub fn generate_brownian(
    channels: usize,
    dt: f64,
    n_steps: usize,
    base_seed: u64,
    path_index: u64,
) -> BrownianPath {
    assert!(dt > 0.0, "dt must be positive");
    assert!(n_steps >= 1, "n_steps must be at least 1");
    assert!(channels >= 1, "need at least one channel");
    build_path(channels, dt, n_steps, None, base_seed, path_index)
}

/// Generates a path covering exactly `span` time units: whole steps of `dt`
/// plus, when `span` is not an integer multiple of `dt`, one short trailing
/// increment drawn with the matching variance.
pub fn generate_brownian_span(
    channels: usize,
    dt: f64,
    span: f64,
    base_seed: u64,
    path_index: u64,
) -> BrownianPath {
    assert!(dt > 0.0 && span > 0.0);
    let ratio = span / dt;
    let n_whole = (ratio + 1e-9).floor() as usize;
    let rem = span - n_whole as f64 * dt;
    let trailing = if rem > 1e-9 * dt { Some(rem) } else { None };
    if n_whole == 0 {
        // span shorter than one step: a single short increment
        return build_path(channels, dt, 0, Some(span), base_seed, path_index);
    }
    build_path(channels, dt, n_whole, trailing, base_seed, path_index)
}

fn build_path(
    channels: usize,
    dt: f64,
    n_steps: usize,
    trailing: Option<f64>,
    base_seed: u64,
    path_index: u64,
) -> BrownianPath {
    let n_incs = n_steps + usize::from(trailing.is_some());
    let n_nodes = n_incs + 1;
    let sqrt_dt = dt.sqrt();
    let mut cum = Vec::with_capacity(channels * n_nodes);
    for channel in 0..channels {
        let mut w = 0.0;
        cum.push(w);
        for step in 0..n_incs {
            let std = if step < n_steps { sqrt_dt } else { trailing.unwrap().sqrt() };
            let key = DrawKey::new(STREAM_WIENER, path_index, channel as u64, step as u64);
            w += std * standard_normal(base_seed, key);
            cum.push(w);
        }
    }
    BrownianPath {
        dt,
        n_steps,
        trailing,
        channels,
        cum,
        lineage: SeedLineage { base_seed, path_index },
    }
}

impl BrownianPath {
    /// All-zero path on a uniform grid; degenerate noise for deterministic
    /// reductions of the scheme.
    pub fn zeroed(channels: usize, dt: f64, n_steps: usize) -> Self {
        assert!(dt > 0.0 && n_steps >= 1 && channels >= 1);
        Self {
            dt,
            n_steps,
            trailing: None,
            channels,
            cum: vec![0.0; channels * (n_steps + 1)],
            lineage: SeedLineage { base_seed: 0, path_index: 0 },
        }
    }
}

/// Merges consecutive blocks of `factor` increments into one. The coarse
/// cumulative values are the parent's values at every `factor`-th node, so
/// shared partial sums match exactly. A trailing short step carries over
/// unchanged.
pub fn coarsen_brownian(path: &BrownianPath, factor: usize) -> SimResult<BrownianPath> {
    if factor == 0 || !path.n_steps.is_multiple_of(factor) {
        return Err(SimError::GridMismatch(format!(
            "coarsening factor {factor} does not divide {} uniform steps",
            path.n_steps
        )));
    }
    if factor == 1 {
        return Ok(path.clone());
    }
    let coarse_steps = path.n_steps / factor;
    let coarse_nodes = coarse_steps + usize::from(path.trailing.is_some()) + 1;
    let fine_nodes = path.n_nodes();
    let mut cum = Vec::with_capacity(path.channels * coarse_nodes);
    for channel in 0..path.channels {
        for node in 0..=coarse_steps {
            cum.push(path.cum[channel * fine_nodes + node * factor]);
        }
        if path.trailing.is_some() {
            cum.push(path.cum[channel * fine_nodes + fine_nodes - 1]);
        }
    }
    Ok(BrownianPath {
        dt: factor as f64 * path.dt,
        n_steps: coarse_steps,
        trailing: path.trailing,
        channels: path.channels,
        cum,
        lineage: path.lineage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn same_lineage_reproduces_identical_path() {
        let a = generate_brownian(2, 0.01, 500, 42, 3);
        let b = generate_brownian(2, 0.01, 500, 42, 3);
        assert_eq!(a.cum, b.cum);
        let c = generate_brownian(2, 0.01, 500, 42, 4);
        assert_ne!(a.cum, c.cum);
    }

    #[test]
    fn increment_moments_match_normal_law() {
        // 10^6 increments with dt = 0.01: variance within 1% relative,
        // mean within 4 * sqrt(dt) * 1e-3 (about four standard errors).
        let dt = 0.01;
        let n = 1_000_000usize;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for path in 0..100u64 {
            let p = generate_brownian(1, dt, n / 100, 2024, path);
            for k in 0..p.n_increments() {
                let g = p.increment(0, k);
                sum += g;
                sumsq += g * g;
            }
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!((var - dt).abs() / dt < 0.01, "variance {var} vs {dt}");
        assert!(mean.abs() < 4.0 * dt.sqrt() * 1e-3, "mean {mean}");
    }

    #[test]
    fn exact_block_sums_on_dyadic_values() {
        // [a,b,c,d] with factor 2 -> [a+b, c+d]; dyadic inputs make the
        // floating-point sums exact so the equality is bitwise.
        let mut p = generate_brownian(1, 0.25, 4, 1, 1);
        p.cum = vec![0.0, 1.0, 3.0, 6.0, 10.0]; // increments 1,2,3,4
        let c = coarsen_brownian(&p, 2).unwrap();
        assert_eq!(c.increment(0, 0), 3.0);
        assert_eq!(c.increment(0, 1), 7.0);
        assert_eq!(c.dt(), 0.5);
    }

    #[test]
    fn factor_one_is_identity() {
        let p = generate_brownian(1, 0.1, 12, 5, 0);
        let c = coarsen_brownian(&p, 1).unwrap();
        assert_eq!(p.cum, c.cum);
        assert_eq!(p.dt(), c.dt());
    }

    #[test]
    fn coarsening_composes_exactly() {
        let p = generate_brownian(2, 0.01, 64, 9, 2);
        let twice = coarsen_brownian(&coarsen_brownian(&p, 2).unwrap(), 2).unwrap();
        let once = coarsen_brownian(&p, 4).unwrap();
        assert_eq!(twice.cum, once.cum);
    }

    #[test]
    fn mismatched_factor_is_rejected() {
        let p = generate_brownian(1, 0.1, 10, 1, 0);
        assert!(matches!(coarsen_brownian(&p, 3), Err(SimError::GridMismatch(_))));
    }

    #[test]
    fn span_generation_places_final_node_on_span() {
        let p = generate_brownian_span(1, 0.3, 1.0, 7, 0);
        assert_eq!(p.n_steps(), 3);
        assert!(p.trailing_step().is_some());
        assert!((p.span() - 1.0).abs() < 1e-12);
        let q = generate_brownian_span(1, 0.25, 1.0, 7, 0);
        assert_eq!(q.n_steps(), 4);
        assert!(q.trailing_step().is_none());
    }

    #[test]
    fn independence_across_path_indices() {
        // empirical correlation of increments between two path indices over
        // 1e5 steps stays below 0.01 in absolute value
        let n = 100_000;
        let a = generate_brownian(1, 1.0, n, 77, 0);
        let b = generate_brownian(1, 1.0, n, 77, 1);
        let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for k in 0..n {
            let (x, y) = (a.increment(0, k), b.increment(0, k));
            sa += x;
            sb += y;
            saa += x * x;
            sbb += y * y;
            sab += x * y;
        }
        let nf = n as f64;
        let cov = sab / nf - sa / nf * (sb / nf);
        let va = saa / nf - (sa / nf) * (sa / nf);
        let vb = sbb / nf - (sb / nf) * (sb / nf);
        let corr = cov / (va * vb).sqrt();
        assert!(corr.abs() < 0.01, "corr = {corr}");
    }

    proptest! {
        #[test]
        fn coarse_partial_sums_match_fine_bit_for_bit(
            steps_pow in 1usize..6,
            factor_pow in 0usize..4,
            seed in 0u64..1000,
        ) {
            let factor = 1usize << factor_pow;
            let n = factor * (1usize << steps_pow);
            let fine = generate_brownian(2, 0.5, n, seed, 0);
            let coarse = coarsen_brownian(&fine, factor).unwrap();
            for ch in 0..2 {
                for j in 0..coarse.n_nodes() {
                    let fine_node = (j * factor).min(fine.n_nodes() - 1);
                    prop_assert_eq!(coarse.value(ch, j), fine.value(ch, fine_node));
                }
            }
        }
    }
}
