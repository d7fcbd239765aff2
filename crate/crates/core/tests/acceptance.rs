//! The twelve acceptance criteria. Each test prints one PASS/FAIL line and
//! checks the library against values computed independently here.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use sgsim::experiment::{sweep_lr, default_grid, ExperimentConfig, Summary};
use sgsim::metrics::{bound_d, bound_rhs, comm_time, theorem_check, BoundConstants, CommParams};
use sgsim::problems::{partition, Dataset, GradientOracle, LeastSquaresProblem, MlpProblem, QuadraticProblem, SyntheticLeastSquares};
use sgsim::protocol::{run_training, Mode, ProtocolConfig, Schedule, TrainingLog};
use sgsim::{compress, rng, CompressorSpec, DenseVector};

fn report(criterion: u8, name: &str, passed: bool, detail: String) {
    let verdict = if passed { "PASS" } else { "FAIL" };
    println!("criterion {criterion:>2} [{verdict}] {name}: {detail}");
    assert!(passed, "criterion {criterion} ({name}) failed: {detail}");
}

fn config(json: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(json, Path::new("acceptance.json")).unwrap()
}

fn toy(mode: &str, steps: usize) -> ExperimentConfig {
    let k = if mode == "vanilla" { "" } else { r#""k_uplink": 1,"# };
    let snapshot = if steps >= 210 { r#", "snapshot_step": 210"# } else { "" };
    config(&format!(
        r#"{{
            "mode": "{mode}",
            "problem": {{"kind": "quadratic", "dim": 100, "centers": [1, 5, 10]}},
            "workers": 3, {k}
            "schedule": {{"kind": "constant", "alpha0": 0.01}},
            "steps": {steps},
            "seed": 10,
            "init": {{"kind": "normal", "mean": 20, "std": 1}}{snapshot}
        }}"#
    ))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// `F*` of the toy problem as a reduced fraction, from
/// `F* = Σ_q p_q · ½ · d · (c̄ − c_q)²` with `c̄ = Σ_q p_q c_q`.
fn toy_f_star_fraction() -> (i128, i128) {
    let (d, centers) = (100i128, [1i128, 5, 10]);
    let n = centers.len() as i128;
    // c̄ = s / n; (c̄ − c_q)² = (s − n c_q)² / n²; each term carries p_q = 1/n and ½.
    let s: i128 = centers.iter().sum();
    let num: i128 = centers.iter().map(|c| (s - n * c).pow(2)).sum::<i128>() * d;
    let den = n * n * n * 2;
    let g = gcd(num, den);
    (num / g, den / g)
}

/// Top-K by full sort: largest magnitude first, lower index on ties, zeros dropped.
fn top_k_ref(v: &[f64], k: usize) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].abs().partial_cmp(&v[a].abs()).unwrap().then(a.cmp(&b)));
    let mut out = vec![0.0; v.len()];
    for &i in &idx[..k] {
        out[i] = v[i];
    }
    out
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Per-step quantities of the plain-vector reference implementation.
struct RefStep {
    loss: f64,
    lemma_ratio: f64,
    slack: f64,
}

/// Bidirectional/unidirectional/vanilla top-K SGD on the toy quadratic,
/// written directly from the algorithm with dense `Vec<f64>` state.
fn reference_toy(mode: Mode, init: &[f64], steps: usize) -> Vec<RefStep> {
    let centers = [1.0, 5.0, 10.0];
    let p = 1.0 / 3.0;
    let (d, k, alpha) = (init.len(), 1, 0.01);
    let mut w = init.to_vec();
    let mut eps = vec![vec![0.0; d]; 3];
    let mut delta = vec![0.0; d];
    let tilde = |w: &[f64], eps: &[Vec<f64>], delta: &[f64]| -> Vec<f64> {
        (0..d).map(|i| w[i] - p * (eps[0][i] + eps[1][i] + eps[2][i]) - delta[i]).collect()
    };
    let mut tilde_prev = tilde(&w, &eps, &delta);
    let mut gap_prev = 0.0;
    let mut out = Vec::new();
    for _ in 0..steps {
        let grads: Vec<Vec<f64>> = centers.iter().map(|c| w.iter().map(|x| x - c).collect()).collect();
        let mean_update: Vec<f64> = (0..d).map(|i| alpha * p * (grads[0][i] + grads[1][i] + grads[2][i])).collect();
        let a: Vec<Vec<f64>> = (0..3).map(|q| (0..d).map(|i| eps[q][i] + alpha * grads[q][i]).collect()).collect();
        let sum_a: Vec<f64> = (0..d).map(|i| p * (a[0][i] + a[1][i] + a[2][i])).collect();
        let (update, one_minus_gamma, distributed) = match mode {
            Mode::Vanilla => (mean_update.clone(), 0.0, 0.0),
            _ => {
                let msgs: Vec<Vec<f64>> = a.iter().map(|aq| top_k_ref(aq, k)).collect();
                for q in 0..3 {
                    eps[q] = sub(&a[q], &msgs[q]);
                }
                let agg: Vec<f64> = (0..d).map(|i| p * (msgs[0][i] + msgs[1][i] + msgs[2][i])).collect();
                if mode == Mode::Bidirectional {
                    let g = add(&delta, &agg);
                    let down = top_k_ref(&g, k);
                    let s = add(&delta, &sum_a);
                    let top_s = top_k_ref(&s, k);
                    let om = norm(&sub(&s, &top_s)).powi(2) / norm(&s).powi(2);
                    let dist = norm(&sub(&top_s, &down));
                    delta = sub(&g, &down);
                    (down, om, dist)
                } else {
                    let top_s = top_k_ref(&sum_a, k);
                    let om = norm(&sub(&sum_a, &top_s)).powi(2) / norm(&sum_a).powi(2);
                    let dist = norm(&sub(&top_s, &agg));
                    (agg, om, dist)
                }
            }
        };
        w = sub(&w, &update);
        let t_now = tilde(&w, &eps, &delta);
        let expected = sub(&tilde_prev, &mean_update);
        let lemma_ratio = norm(&sub(&t_now, &expected)) / norm(&tilde_prev).max(1.0);
        let gap = norm(&sub(&w, &t_now));
        let rho = distributed / norm(&mean_update);
        let tilde_step = norm(&sub(&t_now, &tilde_prev));
        let root = one_minus_gamma.sqrt();
        let slack = root * gap_prev + (root + rho) * tilde_step - gap;
        let loss: f64 = centers
            .iter()
            .map(|c| p * 0.5 * w.iter().map(|x| (x - c).powi(2)).sum::<f64>())
            .sum();
        out.push(RefStep { loss, lemma_ratio, slack });
        tilde_prev = t_now;
        gap_prev = gap;
    }
    out
}

fn lemma_ratio(log: &TrainingLog) -> f64 {
    log.records
        .iter()
        .map(|r| r.lemma1_residual / log.tilde_norms[r.t - 1].max(1.0))
        .fold(0.0, f64::max)
}

#[test]
fn criterion_01_toy_optimum() {
    let (num, den) = toy_f_star_fraction();
    let (w_star, f_star) = QuadraticProblem::toy().optimum();
    let exact = num as f64 / den as f64;
    let rel = (f_star - exact).abs() / exact;
    let w_err = w_star.as_slice().iter().map(|x| (x - 16.0 / 3.0).abs()).fold(0.0, f64::max);
    report(
        1,
        "toy optimum",
        (num, den) == (6100, 9) && rel <= 1e-12 && w_err <= 1e-12,
        format!("oracle F* = {num}/{den}, library {f_star} (rel err {rel:.1e}); max |w* - 16/3| = {w_err:.1e}"),
    );
}

#[test]
fn criterion_02_toy_convergence() {
    let (num, den) = toy_f_star_fraction();
    let f_star = num as f64 / den as f64;
    let mut tails = Vec::new();
    let mut ok = true;
    let mut bi_snapshot = None;
    for mode in ["unidirectional", "bidirectional"] {
        let exp = toy(mode, 2000).build().unwrap();
        let (log, _) = exp.run(1).unwrap();
        let losses: Vec<f64> = log.records.iter().map(|r| r.loss).collect();
        let tail = &losses[1800..];
        let within = tail.iter().all(|&l| l <= 1.05 * f_star && l >= f_star);
        let oscillates = tail.windows(2).any(|w| w[1] > w[0]) && tail.windows(2).any(|w| w[1] < w[0]);
        ok &= within && oscillates;
        tails.push(mean(tail));
        if mode == "bidirectional" {
            bi_snapshot = log.snapshot;
        }
    }
    let snap = bi_snapshot.expect("snapshot recorded");
    ok &= tails[1] <= tails[0] && snap.bidirectional <= snap.unidirectional;
    report(
        2,
        "toy convergence",
        ok,
        format!(
            "final-200 mean F: uni {:.4}, bi {:.4}, F* {f_star:.4}; distances at t={}: uni {:.3}, bi {:.3}",
            tails[0], tails[1], snap.t, snap.unidirectional, snap.bidirectional
        ),
    );
}

#[test]
fn criterion_03_lemma1_identity() {
    let mut worst: f64 = 0.0;
    let mut ref_worst: f64 = 0.0;
    let mut trajectories_agree = true;
    for mode in Mode::ALL {
        let exp = toy(mode.name(), 1000).build().unwrap();
        let reference = reference_toy(mode, exp.init.as_slice(), 1000);
        let (log, _) = exp.run(1).unwrap();
        worst = worst.max(lemma_ratio(&log));
        ref_worst = ref_worst.max(reference.iter().map(|s| s.lemma_ratio).fold(0.0, f64::max));
        trajectories_agree &= log
            .records
            .iter()
            .zip(&reference)
            .all(|(r, s)| (r.loss - s.loss).abs() <= 1e-9 * s.loss);

        let ls = config(&format!(
            r#"{{
                "mode": "{}",
                "problem": {{"kind": "least_squares", "dim": 300, "samples_per_worker": 25, "batch": 5, "noise": 0.1}},
                "workers": 6, "k_uplink": 6,
                "schedule": {{"kind": "constant", "alpha0": 0.1}},
                "steps": 1000, "seed": 3,
                "init": {{"kind": "normal", "mean": 0, "std": 1}}
            }}"#,
            mode.name()
        ));
        let (log, _) = ls.build().unwrap().run(1).unwrap();
        worst = worst.max(lemma_ratio(&log));
    }
    report(
        3,
        "corrected iterate identity",
        worst <= 1e-9 && ref_worst <= 1e-9 && trajectories_agree,
        format!(
            "max residual/max(1,|w~|) = {worst:.2e} (reference implementation {ref_worst:.2e}); toy losses match reference: {trajectories_agree}"
        ),
    );
}

#[test]
fn criterion_04_compressor_bound() {
    let mut r = rng::stream(2024, rng::STREAM_VERIFY);
    let mut worst_excess = f64::NEG_INFINITY;
    let mut oracle_gap: f64 = 0.0;
    let mut equality_gap: f64 = 0.0;
    let mut count = 0;
    for d in [10usize, 100, 1000] {
        for k in [1, d / 10, d / 2, d] {
            let floor = (d - k) as f64 / d as f64;
            for i in 0..84 {
                let scale = 10f64.powi(i % 7 - 3);
                let v: Vec<f64> = (0..d)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut r);
                        scale * z
                    })
                    .collect();
                let mut sq: Vec<f64> = v.iter().map(|x| x * x).collect();
                sq.sort_by(|a, b| b.partial_cmp(a).unwrap());
                let oracle = sq[k..].iter().sum::<f64>() / sq.iter().sum::<f64>();
                let measured = compress(CompressorSpec::TopK { k }, &DenseVector::new(v).unwrap())
                    .unwrap()
                    .measured_one_minus_gamma
                    .unwrap();
                oracle_gap = oracle_gap.max((measured - oracle).abs());
                worst_excess = worst_excess.max(measured - floor);
                count += 1;
            }
            let flat: Vec<f64> = (0..d).map(|i| if i % 2 == 0 { 0.7 } else { -0.7 }).collect();
            let measured = compress(CompressorSpec::TopK { k }, &DenseVector::new(flat).unwrap())
                .unwrap()
                .measured_one_minus_gamma
                .unwrap();
            equality_gap = equality_gap.max((measured - floor).abs());
        }
    }
    report(
        4,
        "compressor bound",
        worst_excess <= 1e-12 && equality_gap <= 1e-12 && oracle_gap <= 1e-12,
        format!(
            "{count} vectors: max excess over (d-K)/d {worst_excess:.1e}, max |measured - sorted oracle| {oracle_gap:.1e}, equal-magnitude gap {equality_gap:.1e}"
        ),
    );
}

#[test]
fn criterion_05_mode_reduction() {
    let spec = SyntheticLeastSquares {
        dim: 50,
        workers: 4,
        samples_per_worker: 40,
        batch: 4,
        noise: 0.2,
        heavy_coords: 5,
        heavy_scale: 3.0,
    };
    let p = LeastSquaresProblem::synthetic(&spec, &mut rng::stream(8, rng::STREAM_DATA)).unwrap();
    let schedule = Schedule::Constant { alpha0: 0.05 };
    let init = DenseVector::new((0..50).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let seed = 8;

    // Plain minibatch SGD, one sampler stream per worker.
    let mut streams: Vec<_> = (0..4).map(|q| rng::worker_stream(seed, q)).collect();
    let mut w = init.as_slice().to_vec();
    let mut sgd = Vec::new();
    for t in 0..500 {
        let alpha = schedule.step_size(t);
        let wv = DenseVector::new(w.clone()).unwrap();
        let mut step = vec![0.0; 50];
        for (q, s) in streams.iter_mut().enumerate() {
            let g = p.stochastic_gradient(q, &wv, s).unwrap();
            for (x, gi) in step.iter_mut().zip(g.as_slice()) {
                *x += p.weights()[q] * gi;
            }
        }
        for (wi, x) in w.iter_mut().zip(&step) {
            *wi -= alpha * x;
        }
        sgd.push(w.clone());
    }

    let mut worst: f64 = 0.0;
    for t in [1usize, 2, 10, 100, 250, 500] {
        for mode in [Mode::Vanilla, Mode::Bidirectional] {
            let log = run_training(&p, &ProtocolConfig::new(mode, 50, 50, schedule, t), init.clone(), seed).unwrap();
            let diff = log
                .final_model
                .as_slice()
                .iter()
                .zip(&sgd[t - 1])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst = worst.max(diff);
        }
    }
    report(
        5,
        "mode reduction",
        worst <= 1e-12,
        format!("bidirectional K=d and vanilla vs reference SGD at t in {{1,2,10,100,250,500}}: max coordinate difference {worst:.1e}"),
    );
}

#[test]
fn criterion_06_gap_inequality() {
    let exp = toy("bidirectional", 1000).build().unwrap();
    let reference = reference_toy(Mode::Bidirectional, exp.init.as_slice(), 1000);
    let (log, _) = exp.run(1).unwrap();
    let lib_min = log.records.iter().map(|r| r.gap_inequality_slack).fold(f64::INFINITY, f64::min);
    let ref_min = reference.iter().map(|s| s.slack).fold(f64::INFINITY, f64::min);
    let agree = log
        .records
        .iter()
        .zip(&reference)
        .map(|(r, s)| (r.gap_inequality_slack - s.slack).abs())
        .fold(0.0, f64::max);
    report(
        6,
        "gap inequality",
        lib_min >= -1e-9 && ref_min >= -1e-9 && agree <= 1e-6,
        format!("min slack over 1000 steps: library {lib_min:.2e}, reference {ref_min:.2e}; max per-step disagreement {agree:.1e}"),
    );
}

#[test]
fn criterion_07_theorem_consistency() {
    let (num, den) = toy_f_star_fraction();
    let f_star = num as f64 / den as f64;
    let p = QuadraticProblem::toy();
    let mut ok = true;
    let mut details = Vec::new();
    for (label, schedule) in [
        ("alpha=0.01", Schedule::Constant { alpha0: 0.01 }),
        ("alpha=1/(t+1)", Schedule::InversePoly { alpha0: 1.0, theta: 1.0 }),
    ] {
        for mode in [Mode::Unidirectional, Mode::Bidirectional] {
            let init = toy(mode.name(), 1).build().unwrap().init;
            let mut cfg = ProtocolConfig::new(mode, 1, 1, schedule, 2000);
            cfg.track_full_gradient = true;
            let log = run_training(&p, &cfg, init, 10).unwrap();
            let t_max = log.records.len();
            let full = log.full_grad_norm_sq.as_ref().unwrap();

            // Independent evaluation of both sides.
            let m = log.records.iter().map(|r| r.grad_norm_sq).chain(full.iter().copied()).fold(0.0, f64::max);
            let omg = log
                .records
                .iter()
                .flat_map(|r| [r.one_minus_gamma_uplink_max, r.one_minus_gamma_downlink])
                .flatten()
                .fold(0.0, f64::max);
            let gamma = 1.0 - omg;
            let lambda = 0.5 * gamma / omg;
            let rho = log
                .records
                .iter()
                .filter_map(|r| if mode == Mode::Bidirectional { r.rho } else { r.rho_hat })
                .fold(0.0, f64::max);
            let ratio = (1.0 + lambda) * omg;
            let d = (1..=t_max)
                .map(|t| {
                    let s: f64 = (1..=t).map(|i| ratio.powi(i as i32) * schedule.step_size(t - i).powi(2)).sum();
                    s / schedule.step_size(t) / omg
                })
                .fold(0.0, f64::max);
            let alphas: Vec<f64> = (0..=t_max).map(|t| schedule.step_size(t)).collect();
            let sum_a: f64 = alphas.iter().sum();
            let sum_a2: f64 = alphas.iter().map(|a| a * a).sum();
            let spread = omg.sqrt() + rho;
            let rhs = 2.0 / sum_a * (log.initial_loss - f_star) + (m + m * d * spread * spread / lambda) * sum_a2 / sum_a;
            let lhs = alphas.iter().zip(full).map(|(a, g)| a * g).sum::<f64>() / sum_a;

            let lib = theorem_check(&log, &schedule, 1.0, f_star).unwrap();
            let lib_rhs = bound_rhs(&lib.constants, &schedule, t_max).unwrap();
            let agree = (lib.rhs - rhs).abs() <= 1e-9 * rhs && (lib_rhs - rhs).abs() <= 1e-9 * rhs && (lib.lhs - lhs).abs() <= 1e-9 * lhs;
            ok &= lhs <= rhs && lib.holds && agree;
            details.push(format!("{label} {}: lhs {lhs:.3e} <= rhs {rhs:.3e}", mode.name()));
        }
    }
    report(7, "theorem consistency", ok, details.join("; "));
}

#[test]
fn criterion_08_bound_condition() {
    let (alpha, gamma, lambda) = (0.1, 0.5, 0.5);
    let r = (1.0 + lambda) * (1.0 - gamma);
    let closed_form = alpha * r / (1.0 - r) / (1.0 - gamma);
    let s = Schedule::Constant { alpha0: alpha };
    let d = bound_d(&s, gamma, lambda, 1000).unwrap();
    let rejects = bound_d(&s, 0.5, 1.0, 10).is_err()
        && bound_d(&s, 0.25, 0.5, 10).is_err()
        && bound_rhs(
            &BoundConstants {
                lipschitz: 1.0,
                m: 1.0,
                gamma: 0.5,
                lambda: 1.5,
                f0: 1.0,
                f_star: 0.0,
                rho: 0.0,
            },
            &s,
            10,
        )
        .is_err();
    report(
        8,
        "bound condition",
        (closed_form - 0.6).abs() < 1e-15 && (d - closed_form).abs() <= 1e-6 && rejects,
        format!("D = {d:.10} vs closed form {closed_form}; rejects (1+lambda)(1-gamma) >= 1: {rejects}"),
    );
}

#[test]
fn criterion_09_nonzero_fraction() {
    let d = 10_000usize;
    let k = d - (0.999 * d as f64).floor() as usize;
    let mut ok = true;
    let mut details = Vec::new();
    for workers in [20usize, 50] {
        let cfg = config(&format!(
            r#"{{
                "mode": "bidirectional",
                "problem": {{"kind": "least_squares", "dim": {d}, "samples_per_worker": 4, "batch": 2,
                            "noise": 0, "heavy_coords": 100, "heavy_scale": 10}},
                "workers": {workers}, "sparsity": 0.001,
                "schedule": {{"kind": "constant", "alpha0": 0.1}},
                "steps": 2000, "seed": 1
            }}"#
        ));
        let exp = cfg.build().unwrap();
        assert_eq!(exp.protocol.k_uplink, k);
        let (log, _) = exp.run(1).unwrap();
        let f: Vec<f64> = log.records.iter().map(|r| r.nonzero_fraction).collect();
        let n = f.len() as f64;
        let t_mean = (n + 1.0) / 2.0;
        let f_mean = mean(&f);
        let slope = f.iter().enumerate().map(|(i, y)| (i as f64 + 1.0 - t_mean) * (y - f_mean)).sum::<f64>()
            / f.iter().enumerate().map(|(i, _)| (i as f64 + 1.0 - t_mean).powi(2)).sum::<f64>();
        let head = mean(&f[..200]);
        let tail = mean(&f[1800..]);
        let end = mean(&f[1900..]);
        let target = (workers * k).min(d) as f64 / d as f64;
        let pass = slope >= 0.0 && tail >= head && (end - target).abs() <= 0.15 * target;
        ok &= pass;
        details.push(format!(
            "N={workers}: first 200 {head:.4}, last 200 {tail:.4}, slope {slope:.2e}, final 100 {end:.4} vs {target:.4}"
        ));
    }
    report(9, "non-zero fraction", ok, details.join("; "));
}

#[test]
fn criterion_10_comm_model() {
    let oracle = |mode: Mode, p: &CommParams| {
        let up = p.alpha1 + 2.0 * p.k_uplink as f64 * p.beta1 + p.alpha2;
        match mode {
            Mode::Unidirectional => up + 2.0 * (p.workers * p.k_uplink) as f64 * p.beta2,
            _ => up + 2.0 * p.k_downlink as f64 * p.beta2,
        }
    };
    let worked = CommParams {
        alpha1: 0.0,
        alpha2: 0.0,
        beta1: 1.0,
        beta2: 1.0,
        workers: 10,
        k_uplink: 5,
        k_downlink: 5,
    };
    let uni = comm_time(Mode::Unidirectional, &worked).unwrap();
    let bi = comm_time(Mode::Bidirectional, &worked).unwrap();
    let mut r = rng::stream(99, rng::STREAM_VERIFY);
    let (mut violations, mut mismatches) = (0, 0);
    for _ in 0..100 {
        let workers = r.random_range(1..=100);
        let k_uplink = r.random_range(1..=500);
        let p = CommParams {
            alpha1: r.random_range(0.0..0.1),
            alpha2: r.random_range(0.0..0.1),
            beta1: r.random_range(0.0..1e-4),
            beta2: r.random_range(0.0..1e-4),
            workers,
            k_uplink,
            k_downlink: r.random_range(1..=workers * k_uplink),
        };
        let (u, b) = (comm_time(Mode::Unidirectional, &p).unwrap(), comm_time(Mode::Bidirectional, &p).unwrap());
        violations += usize::from(b > u);
        mismatches += usize::from(u != oracle(Mode::Unidirectional, &p) || b != oracle(Mode::Bidirectional, &p));
    }
    report(
        10,
        "comm-time model",
        uni == 110.0 && bi == 20.0 && violations == 0 && mismatches == 0,
        format!("worked example uni {uni}, bi {bi}; random sweep: {violations} ordering violations, {mismatches} formula mismatches"),
    );
}

fn mlp_config(mode: &str) -> ExperimentConfig {
    config(&format!(
        r#"{{
            "mode": "{mode}",
            "problem": {{"kind": "mlp", "layers": [64, 32, 10], "batch": 10,
                        "dataset": {{"format": "synthetic", "samples": 2000, "classes": 10, "separation": 2}}}},
            "workers": 20, "sparsity": 0.001,
            "schedule": {{"kind": "constant", "alpha0": 0.1}},
            "epochs": 10, "seed": 0
        }}"#
    ))
}

fn best_summary(mode: &str, root: &Path) -> (f64, Summary) {
    let report = sweep_lr(&mlp_config(mode), &default_grid(), &root.join(mode), 1).unwrap();
    let rate = report.best_rate.expect("some rate converged");
    let cell = report.cells.iter().find(|c| c.rate == rate).unwrap();
    let text = std::fs::read_to_string(cell.dir.join("summary.json")).unwrap();
    (rate, serde_json::from_str(&text).unwrap())
}

#[test]
fn criterion_11_rho_ordering() {
    let root = tempfile::tempdir().unwrap();
    let (rate_uni, uni) = best_summary("unidirectional", root.path());
    let (rate_bi, bi) = best_summary("bidirectional", root.path());
    assert_eq!(bi.resolved.dim, 2410);
    let rho: Vec<f64> = bi.epoch_maxima.iter().map(|e| e.rho.unwrap()).collect();
    let rho_hat: Vec<f64> = uni.epoch_maxima.iter().map(|e| e.rho_hat.unwrap()).collect();
    let wins = rho.iter().zip(&rho_hat).filter(|(r, h)| r < h).count();
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(" ");
    report(
        11,
        "rho vs rho-hat",
        rho.len() == 10 && rho_hat.len() == 10 && wins >= 8,
        format!(
            "rho < rho-hat in {wins}/10 epochs; tuned rates uni {rate_uni}, bi {rate_bi}; rho [{}], rho-hat [{}]",
            fmt(&rho),
            fmt(&rho_hat)
        ),
    );
}

#[test]
fn criterion_12_unbiasedness() {
    let mut r = rng::stream(5, rng::STREAM_VERIFY);
    let (n, d) = (6usize, 9usize);
    let rows: Vec<f64> = (0..n * d).map(|_| r.random_range(-2.0..2.0)).collect();
    let targets: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
    let w: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
    // ∇ of (1/2n) Σ (x_i·w − y_i)².
    let mut full = vec![0.0; d];
    for i in 0..n {
        let x = &rows[i * d..(i + 1) * d];
        let res: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() - targets[i];
        for j in 0..d {
            full[j] += res * x[j] / n as f64;
        }
    }
    let wv = DenseVector::new(w).unwrap();
    let mut enum_worst: f64 = 0.0;
    for batch in 1..=n {
        let p = LeastSquaresProblem::new(d, vec![(rows.clone(), targets.clone())], vec![1.0], batch).unwrap();
        let subsets: Vec<Vec<usize>> = (0u32..1 << n)
            .filter(|m| m.count_ones() as usize == batch)
            .map(|m| (0..n).filter(|i| m & (1 << i) != 0).collect())
            .collect();
        let mut avg = vec![0.0; d];
        for s in &subsets {
            let g = p.minibatch_gradient(0, &wv, s).unwrap();
            for j in 0..d {
                avg[j] += g[j] / subsets.len() as f64;
            }
        }
        enum_worst = enum_worst.max(norm(&sub(&avg, &full)));
    }

    let data = Dataset::synthetic(80, 7, 3, 1.5, &mut rng::stream(5, rng::STREAM_DATA)).unwrap();
    let part = partition(data.len(), 4, &mut rng::stream(5, rng::STREAM_PARTITION)).unwrap();
    let mlp = MlpProblem::new(vec![7, 9, 3], std::sync::Arc::new(data), part, 10).unwrap();
    let theta = mlp.init_params(&mut rng::stream(5, rng::STREAM_INIT));
    let batch: Vec<usize> = (0..30).collect();
    let (_, grad) = mlp.loss_grad(&theta, &batch).unwrap();
    let h = 1e-5;
    let mut fd_worst: f64 = 0.0;
    for i in 0..50 {
        let j = i * theta.dim() / 50;
        let mut plus = theta.as_slice().to_vec();
        let mut minus = plus.clone();
        plus[j] += h;
        minus[j] -= h;
        let fd = (mlp.loss(&DenseVector::new(plus).unwrap(), &batch).unwrap()
            - mlp.loss(&DenseVector::new(minus).unwrap(), &batch).unwrap())
            / (2.0 * h);
        fd_worst = fd_worst.max((fd - grad[j]).abs());
    }
    report(
        12,
        "unbiasedness",
        enum_worst <= 1e-12 && fd_worst <= 1e-5,
        format!("6-sample enumeration vs full gradient {enum_worst:.1e}; MLP central differences on 50 coordinates {fd_worst:.1e}"),
    );
}
