//! Acceptance suite: one test per criterion, each printing a pass/fail line
//! (run with `cargo test --test acceptance -- --nocapture` to see them).

use truncem::errors::SimResult;
use truncem::model::{builtin_problem, evaluate_diffusion, evaluate_drift};
use truncem::rng::{uniform_open01, DrawKey};
use truncem::subordinator::{
    coarsen_subordinator, invert_subordinator, sample_stable_increment,
    simulate_subordinator_aligned, SubordinatorSpec,
};
use truncem::truncated_em::{truncate_state, TruncationPolicy};
use truncem::{
    moment_sweep, regress_rate, step_gap_estimate, strong_error_sweep, write_error_report_csv,
    ErrorReport, ReferenceKind, SweepConfig,
};

const SEED: u64 = 42;

fn report_line(criterion: &str, pass: bool, detail: &str) {
    println!(
        "criterion {criterion}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn rate_sweep(problem_name: &str, dts: Vec<f64>, dt_ref: f64, n_paths: usize, epsilon: f64) -> ErrorReport {
    let problem = builtin_problem(problem_name).unwrap();
    let policy = TruncationPolicy::for_problem(&problem, epsilon);
    let cfg = SweepConfig::new(dts, dt_ref, 1.0, n_paths, SEED);
    strong_error_sweep(&problem, &policy, &cfg).unwrap()
}

#[test]
fn criterion_1_example1_rate_reproduction() {
    let report = rate_sweep("example1", vec![1e-1, 1e-2, 1e-3], 1e-5, 1000, 0.1);
    let slope = report.regression.slope;
    let errors: Vec<f64> = report.rows.iter().map(|r| r.error).collect();
    report_line(
        "1 (example1 strong L1 rate)",
        (0.17..=0.33).contains(&slope),
        &format!("slope = {slope:.5}, window [0.17, 0.33], errors {errors:?}"),
    );
}

#[test]
fn criterion_2_example2_rate_reproduction() {
    let report = rate_sweep("example2", vec![1e-1, 1e-2, 1e-3], 1e-5, 1000, 0.1);
    let slope = report.regression.slope;
    let errors: Vec<f64> = report.rows.iter().map(|r| r.error).collect();
    report_line(
        "2 (example2 strong L1 rate)",
        (0.12..=0.28).contains(&slope),
        &format!("slope = {slope:.5}, window [0.12, 0.28], errors {errors:?}"),
    );
}

#[test]
fn criterion_3_time_changed_rate() {
    let problem = builtin_problem("timechanged2d").unwrap();
    let policy = TruncationPolicy::for_problem(&problem, 0.01);
    let spec = SubordinatorSpec::stable(0.9).unwrap();
    let cfg = SweepConfig::new(vec![1e-2, 1e-3, 1e-4], 1e-6, 1.0, 100, SEED)
        .with_time_change(spec, 1.0);
    let report = strong_error_sweep(&problem, &policy, &cfg).unwrap();
    let slope = report.regression.slope;
    let errors: Vec<f64> = report.rows.iter().map(|r| r.error).collect();
    report_line(
        "3 (time-changed 2-D strong L1 rate)",
        (0.35..=0.65).contains(&slope),
        &format!("slope = {slope:.5}, window [0.35, 0.65], errors {errors:?}"),
    );
}

#[test]
fn criterion_4_gbm_exact_solution_oracle() {
    let problem = builtin_problem("gbm").unwrap();
    let policy = TruncationPolicy::for_problem(&problem, 0.1);
    let dts: Vec<f64> = (3..=7).map(|k| 0.5f64.powi(k)).collect();
    let cfg = SweepConfig::new(dts, 0.5f64.powi(7), 1.0, 1000, SEED)
        .with_reference(ReferenceKind::ExactTerminal);
    let report = strong_error_sweep(&problem, &policy, &cfg).unwrap();
    let slope = report.regression.slope;
    let first = report.rows.first().unwrap().error;
    let last = report.rows.last().unwrap().error;
    let pass = (0.4..=0.6).contains(&slope) && last < first;
    report_line(
        "4 (GBM vs closed form)",
        pass,
        &format!("slope = {slope:.5} in [0.4, 0.6]; error({:.6}) = {last:.3e} < error(0.125) = {first:.3e}",
            0.5f64.powi(7)),
    );
}

#[test]
fn criterion_5_truncation_invariant_suite() {
    const N: usize = 10_000;
    let probe_seed = 1001;

    // randomized pi invariants: norm bound, idempotence, direction
    // preservation, identity inside the ball
    let mut checked = 0usize;
    for sample in 0..N as u64 {
        let mut slot = 0u64;
        let mut draw = |range: f64| {
            let u = uniform_open01(probe_seed, DrawKey::new(9, sample, 0, 0).with_slot(slot));
            slot += 1;
            range * (2.0 * u - 1.0)
        };
        let dim = 1 + (sample % 3) as usize;
        let x: Vec<f64> = (0..dim).map(|_| draw(10.0)).collect();
        let radius = draw(1.0).abs() * 5.0 + 1e-3;

        let y = truncate_state(&x, radius);
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(ny <= radius, "norm bound violated: {ny} > {radius}");
        assert_eq!(truncate_state(&y, radius), y, "idempotence violated");
        if nx <= radius {
            assert_eq!(y, x, "identity inside ball violated");
        }
        let dot: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        assert!(dot >= 0.0, "direction flipped");
        assert!(
            nx * ny == 0.0 || (dot - nx * ny).abs() <= 1e-9 * nx * ny,
            "direction not preserved"
        );
        checked += 1;
    }

    // clipped-coefficient bound |mu_dt| v |sigma_dt| <= kappa(dt) on the
    // super-linear examples, 10^4 samples per step size
    let mut bound_checked = 0usize;
    for name in ["example1", "example2"] {
        let problem = builtin_problem(name).unwrap();
        let policy = TruncationPolicy::for_problem(&problem, 0.1);
        for &dt in &[1e-1, 1e-2, 1e-3] {
            let kappa = policy.kappa(dt);
            let radius = policy.truncation_radius(dt).unwrap();
            for sample in 0..N as u64 {
                let key = DrawKey::new(8, sample, 0, 0);
                let t = problem.t0
                    + (problem.horizon - problem.t0)
                        * uniform_open01(probe_seed, key.with_slot(0));
                let x = [10.0 * (2.0 * uniform_open01(probe_seed, key.with_slot(1)) - 1.0)];
                let clipped = truncate_state(&x, radius);
                let mu = evaluate_drift(&problem, t, &clipped).unwrap();
                let sigma = evaluate_diffusion(&problem, t, &clipped, 0).unwrap();
                let magnitude = mu[0].abs().max(sigma[0].abs());
                assert!(
                    magnitude <= kappa,
                    "{name} dt={dt}: |coefficient| {magnitude} exceeds kappa {kappa}"
                );
                bound_checked += 1;
            }
        }
    }
    report_line(
        "5 (truncation invariants)",
        checked == N && bound_checked == 6 * N,
        &format!("{checked} map assertions, {bound_checked} coefficient-bound assertions, zero failures"),
    );
}

#[test]
fn criterion_6_inverse_subordinator_suite() {
    // formula equivalence against a linear-scan oracle on 10^3 random walks
    let mut equivalence_checks = 0usize;
    for walk_idx in 0..1000u64 {
        let dt = 0.005 + 0.001 * (walk_idx % 7) as f64;
        let horizon = 0.5 + 0.05 * (walk_idx % 5) as f64;
        let alpha = 0.5 + 0.1 * (walk_idx % 4) as f64;
        let spec = SubordinatorSpec::stable(alpha).unwrap();
        let walk = truncem::simulate_subordinator(&spec, dt, horizon, 7000, walk_idx).unwrap();
        for q in 0..5 {
            let t = horizon * q as f64 / 4.0;
            let e = invert_subordinator(&walk, t).unwrap();
            // independent oracle: linear scan of the formula
            let mut n = walk.values().len();
            for (i, &v) in walk.values().iter().enumerate() {
                if v > t {
                    n = i;
                    break;
                }
            }
            let oracle = (n - 1) as f64 * walk.dt();
            assert_eq!(e, oracle, "walk {walk_idx} t {t}");
            equivalence_checks += 1;
        }
    }

    // coupled-refinement sandwich on 10^3 (walk, t) pairs, plus
    // monotonicity and level-quantization on every query
    let spec = SubordinatorSpec::stable(0.8).unwrap();
    let factor = 16usize;
    let mut sandwich_checks = 0usize;
    for walk_idx in 0..100u64 {
        let dt_fine = 1e-3;
        let fine =
            simulate_subordinator_aligned(&spec, dt_fine, 1.0, 8080, walk_idx, factor).unwrap();
        let coarse = coarsen_subordinator(&fine, factor).unwrap();
        let dt_coarse = coarse.dt();
        let mut last = (0.0, 0.0);
        for q in 0..10 {
            let t = q as f64 / 9.0;
            let ef = invert_subordinator(&fine, t).unwrap();
            let ec = invert_subordinator(&coarse, t).unwrap();
            assert!((ec - ef).abs() <= dt_coarse, "sandwich violated at t={t}");
            assert!(ec <= ef, "coarse clock ran ahead at t={t}");
            assert!(ef >= last.0 && ec >= last.1, "monotonicity violated");
            let (kf, kc) = ((ef / dt_fine).round(), (ec / dt_coarse).round());
            assert_eq!(kf * dt_fine, ef, "fine clock not quantized");
            assert_eq!(kc * dt_coarse, ec, "coarse clock not quantized");
            last = (ef, ec);
            sandwich_checks += 1;
        }
    }
    report_line(
        "6 (inverse-subordinator suite)",
        equivalence_checks == 5000 && sandwich_checks == 1000,
        &format!("{equivalence_checks} oracle equalities, {sandwich_checks} sandwich/monotonicity checks, zero failures"),
    );
}

#[test]
fn criterion_7_laplace_transform_check() {
    let mut detail = String::new();
    let mut pass = true;
    for &alpha in &[0.5, 0.7, 0.9] {
        let n = 1_000_000u64;
        let mut acc = 0.0;
        for step in 0..n {
            let xi = sample_stable_increment(
                alpha,
                1.0,
                SEED,
                DrawKey::new(2, 900 + alpha.to_bits() % 17, 0, step),
            )
            .unwrap();
            acc += (-xi).exp();
        }
        let estimate = acc / n as f64;
        let target = (-1.0f64).exp();
        let rel = (estimate - target).abs() / target;
        pass &= rel < 0.01;
        detail.push_str(&format!("alpha={alpha}: rel err {rel:.4e}; "));
    }
    report_line("7 (stable sampler Laplace transform)", pass, detail.trim_end());
}

#[test]
fn criterion_8_determinism_across_worker_counts() {
    let problem = builtin_problem("gbm").unwrap();
    let policy = TruncationPolicy::for_problem(&problem, 0.1);
    let dts: Vec<f64> = (3..=5).map(|k| 0.5f64.powi(k)).collect();
    let cfg = SweepConfig::new(dts, 0.5f64.powi(7), 1.0, 300, SEED)
        .with_reference(ReferenceKind::ExactTerminal);

    let csv_with_workers = |threads: usize| -> SimResult<Vec<u8>> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("pool");
        let report = pool.install(|| strong_error_sweep(&problem, &policy, &cfg))?;
        let mut buf = Vec::new();
        write_error_report_csv(&mut buf, &report).expect("csv");
        Ok(buf)
    };
    let one = csv_with_workers(1).unwrap();
    let four = csv_with_workers(4).unwrap();
    report_line(
        "8 (worker-count determinism)",
        one == four,
        &format!("CSV bytes identical across 1 and 4 workers ({} bytes)", one.len()),
    );
}

#[test]
fn criterion_9_lemma_level_statistical_checks() {
    let problem = builtin_problem("example1").unwrap();
    let policy = TruncationPolicy::for_problem(&problem, 0.1);

    // grid-maximum second moment stays within a factor 3 across step sizes
    let rows = moment_sweep(&problem, &policy, &[1e-1, 1e-2, 1e-3], 2.0, 1000, SEED).unwrap();
    let max = rows.iter().map(|r| r.max_moment).fold(f64::NEG_INFINITY, f64::max);
    let min = rows.iter().map(|r| r.max_moment).fold(f64::INFINITY, f64::min);
    let moment_ok = max / min < 3.0;

    // step-process gap E|x_dt(t) - step(t)|^2 at midpoints: log-log slope
    let gaps: Vec<(f64, f64)> = [1e-1, 1e-2, 1e-3]
        .iter()
        .map(|&dt| {
            let gap = step_gap_estimate(&problem, &policy, dt, 1000, SEED, 2.0).unwrap();
            (dt, gap)
        })
        .collect();
    let slope = regress_rate(&gaps).unwrap().slope;
    let gap_ok = (0.7..=1.3).contains(&slope);

    report_line(
        "9 (moment boundedness + step-process gap)",
        moment_ok && gap_ok,
        &format!(
            "moment spread factor {:.3} < 3; gap slope {slope:.4} in [0.7, 1.3]",
            max / min
        ),
    );
}
