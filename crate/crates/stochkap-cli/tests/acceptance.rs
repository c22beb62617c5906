//! End-to-end acceptance gates for the delivered stack. Each test prints a
//! single `criterion N: PASS/FAIL` line with the measured numbers (visible
//! under `--nocapture`, and in the failure dump otherwise), then asserts.
//!
//! Criteria 6, 7, and 8 share one full-size polynomial-chaos run at the
//! default configuration and a 10,000-sample Monte Carlo reference; both
//! are computed once and reused.

use std::process::Command;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use stochkap::basis::enumerate_total_degree;
use stochkap::chaos::{
    coefficient_stats, reduce, ChaosExpansion, ModeSelector, WeightingMatrix,
};
use stochkap::driver::{
    cross_compare, run_monte_carlo, run_pc_solver, variance_decomposition, McStore,
    PcRunResult, SolverSettings,
};
use stochkap::field::{kl_decompose, FieldSpec};
use stochkap::linalg::SymMatrix;
use stochkap::quadrature::{
    integrate, smolyak_rule, tensor_gauss_legendre, uniform_monomial_moment, GrowthRule,
};
use stochkap::reactor::{h1_gram, solve_coupled, ReactorConfig};

fn verdict(criterion: usize, ok: bool, detail: &str) {
    println!("criterion {criterion:2}: {} - {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {criterion} failed: {detail}");
}

/// The full-size run shared by criteria 6-8: default configuration, default
/// solver settings.
fn full_run() -> &'static Result<PcRunResult, String> {
    static RUN: OnceLock<Result<PcRunResult, String>> = OnceLock::new();
    RUN.get_or_init(|| {
        run_pc_solver(&ReactorConfig::default(), &SolverSettings::default())
            .map_err(|e| e.to_string())
    })
}

/// The 10,000-sample Monte Carlo reference shared with criterion 8.
fn full_mc() -> &'static Result<McStore, String> {
    static MC: OnceLock<Result<McStore, String>> = OnceLock::new();
    MC.get_or_init(|| {
        let cfg = ReactorConfig::default();
        let settings = SolverSettings::default();
        run_monte_carlo(&cfg, settings.mc_samples, settings.max_outer_iters, settings.rng_seed)
            .map_err(|e| e.to_string())
    })
}

#[test]
fn criterion_01_basis_cardinalities() {
    let big = enumerate_total_degree(12, 4).len();
    let small = enumerate_total_degree(4, 2).len();
    verdict(
        1,
        big == 1820 && small == 15,
        &format!("enumeration counts (12,4) -> {big} (want 1820), (4,2) -> {small} (want 15)"),
    );
}

#[test]
fn criterion_02_quadrature_exactness() {
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for dim in 1..=4usize {
        for level in 1..=4usize {
            for growth in [GrowthRule::Linear, GrowthRule::Exponential] {
                let rule = smolyak_rule(dim, level, growth).unwrap();
                for mono in enumerate_total_degree(dim, 2 * level - 1) {
                    let got = integrate(&rule, |x| {
                        mono.iter().zip(x).map(|(&e, v)| v.powi(e as i32)).product()
                    });
                    let want = uniform_monomial_moment(&mono);
                    worst = worst.max((got - want).abs());
                    checked += 1;
                }
            }
            let tensor = tensor_gauss_legendre(dim, level).unwrap();
            for mono in enumerate_total_degree(dim, 2 * level - 1) {
                let got = integrate(&tensor, |x| {
                    mono.iter().zip(x).map(|(&e, v)| v.powi(e as i32)).product()
                });
                let want = uniform_monomial_moment(&mono);
                worst = worst.max((got - want).abs());
                checked += 1;
            }
        }
    }
    verdict(
        2,
        worst < 1e-10,
        &format!("{checked} monomial moments, worst error {worst:.3e} (tolerance 1e-10)"),
    );
}

#[test]
fn criterion_03_sparse_grid_node_count() {
    let rule = smolyak_rule(12, 5, GrowthRule::Exponential).unwrap();
    let count_matches = rule.len() == 34_065;

    // Hard gate: exactness through total degree 9 on 50 random sparse
    // polynomials. The node count is advisory.
    let monomials = enumerate_total_degree(12, 9);
    let mut rng = ChaCha12Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let terms: Vec<(usize, f64)> = (0..400)
            .map(|_| (rng.gen_range(0..monomials.len()), rng.gen_range(-1.0f64..1.0)))
            .collect();
        let got = integrate(&rule, |x| {
            terms
                .iter()
                .map(|&(mi, c)| {
                    c * monomials[mi].iter().zip(x).map(|(&e, v)| v.powi(e as i32)).product::<f64>()
                })
                .sum()
        });
        let want: f64 =
            terms.iter().map(|&(mi, c)| c * uniform_monomial_moment(&monomials[mi])).sum();
        worst = worst.max((got - want).abs());
    }
    let exact = worst <= 1e-8;
    verdict(
        3,
        exact,
        &format!(
            "{} nodes ({}), degree-9 exactness worst error {worst:.3e} (tolerance 1e-8)",
            rule.len(),
            if count_matches { "expected 34065" } else { "expected 34065: count differs" },
        ),
    );
}

/// Energy captured by a stacked, W-orthonormal direction set under the
/// coefficient covariance: sum over directions of vᵀ (I⊗W) C (I⊗W) v.
fn captured_energy(cov: &SymMatrix, wm: &WeightingMatrix, dirs: &[Vec<f64>], w: usize) -> f64 {
    let order = cov.order();
    let nb = order / w;
    let mut total = 0.0;
    for v in dirs {
        let mut wv = vec![0.0; order];
        for b in 0..nb {
            let block = wm.matrix().mul_vec(&v[b * w..(b + 1) * w]);
            wv[b * w..(b + 1) * w].copy_from_slice(&block);
        }
        let mut s = 0.0;
        for i in 0..order {
            for j in 0..order {
                s += wv[i] * cov.get(i, j) * wv[j];
            }
        }
        total += s;
    }
    total
}

/// W-orthonormalizes random stacked directions (block inner product
/// sum_b uᵀ_b W v_b) by modified Gram-Schmidt with one repass.
fn random_w_orthonormal_dirs(
    d: usize,
    nb: usize,
    w: usize,
    wm: &WeightingMatrix,
    rng: &mut ChaCha12Rng,
) -> Vec<Vec<f64>> {
    let inner = |u: &[f64], v: &[f64]| -> f64 {
        (0..nb).map(|b| wm.inner(&u[b * w..(b + 1) * w], &v[b * w..(b + 1) * w])).sum()
    };
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(d);
    while dirs.len() < d {
        let mut v: Vec<f64> = (0..nb * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for _ in 0..2 {
            for u in &dirs {
                let r = inner(&v, u);
                for (vi, ui) in v.iter_mut().zip(u) {
                    *vi -= r * ui;
                }
            }
        }
        let norm = inner(&v, &v).sqrt();
        if norm < 1e-8 {
            continue;
        }
        for vi in v.iter_mut() {
            *vi /= norm;
        }
        dirs.push(v);
    }
    dirs
}

#[test]
fn criterion_04_reduction_identity_suite() {
    let mut rng = ChaCha12Rng::seed_from_u64(40_400);
    let mut worst_gram = 0.0f64;
    let mut worst_white = 0.0f64;
    let mut worst_identity = 0.0f64;
    let mut worst_optimality = 0.0f64;
    for instance in 0..20 {
        let m = rng.gen_range(1..=3usize);
        let n = rng.gen_range(1..=3usize);
        let p = rng.gen_range(1..=3usize);
        let w = rng.gen_range(1..=5usize);
        let pair = enumerate_total_degree(m + n, p);
        let coeffs: Vec<Vec<f64>> = pair
            .iter()
            .map(|idx| {
                let damp = 1.0 / (1.0 + idx.iter().sum::<u32>() as f64);
                (0..w).map(|_| damp * rng.gen_range(-1.0..1.0)).collect()
            })
            .collect();
        let q = ChaosExpansion::from_coeffs(m, n, p, coeffs).unwrap();
        let wm = if instance % 2 == 0 {
            WeightingMatrix::identity(w)
        } else {
            let r: Vec<f64> = (0..w * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut entries = vec![0.0; w * w];
            for i in 0..w {
                for j in 0..w {
                    let mut s = 0.0;
                    for k in 0..w {
                        s += r[k * w + i] * r[k * w + j];
                    }
                    entries[i * w + j] = s + if i == j { 1.0 } else { 0.0 };
                }
            }
            WeightingMatrix::new(SymMatrix::new(w, entries).unwrap()).unwrap()
        };
        let red = reduce(&q, &wm, ModeSelector::Tolerance(0.3)).unwrap();
        let d = red.d();

        // W-orthonormality of the retained basis vectors.
        for i in 0..d {
            for j in 0..d {
                let s: f64 = red.basis_vectors[i]
                    .iter()
                    .zip(&red.basis_vectors[j])
                    .map(|(a, b)| wm.inner(a, b))
                    .sum();
                let want = if i == j { 1.0 } else { 0.0 };
                worst_gram = worst_gram.max((s - want).abs());
            }
        }

        // Whiteness of the reduced variables.
        for i in 0..d {
            for j in 0..d {
                let s: f64 = red.reduced_coeffs[i]
                    .iter()
                    .zip(&red.reduced_coeffs[j])
                    .map(|(a, b)| a * b)
                    .sum();
                let want = if i == j { 1.0 } else { 0.0 };
                worst_white = worst_white.max((s - want).abs());
            }
        }

        // Truncation identity: quadrature of the squared W-distance between
        // the expansion and its reduced form equals the discarded energy.
        let oracle = tensor_gauss_legendre(m + n, p + 1).unwrap();
        let mean_square = integrate(&oracle, |x| {
            let (xi, zeta) = x.split_at(m);
            let a = q.evaluate(xi, zeta).unwrap();
            let b = red.evaluate(xi, zeta).unwrap();
            let diff: Vec<f64> = a.iter().zip(&b).map(|(u, v)| u - v).collect();
            wm.norm_sq(&diff)
        });
        let total: f64 = red.spectrum.iter().sum();
        worst_identity =
            worst_identity.max((mean_square - red.residual_energy).abs() / (1.0 + total));

        // Optimality: no other rank-d W-orthonormal direction set captures
        // more energy than the retained spectrum head.
        if d > 0 {
            let stats = coefficient_stats(&q);
            let nb = stats.block_basis.len();
            let kept: f64 = red.eigenvalues.iter().sum();
            for _ in 0..20 {
                let dirs = random_w_orthonormal_dirs(d, nb, w, &wm, &mut rng);
                let cap = captured_energy(&stats.cov, &wm, &dirs, w);
                worst_optimality = worst_optimality.max(cap - kept);
            }
        }
    }
    let ok = worst_gram < 1e-8
        && worst_white < 1e-8
        && worst_identity < 1e-9
        && worst_optimality < 1e-10;
    verdict(
        4,
        ok,
        &format!(
            "20 instances: basis gram residual {worst_gram:.3e}, whiteness residual \
             {worst_white:.3e}, truncation identity residual {worst_identity:.3e}, \
             optimality slack {worst_optimality:.3e}"
        ),
    );
}

#[test]
fn criterion_05_constant_field_fixed_point() {
    // Closed-form fixed point of the zero-variance coupled pair.
    let t_star = 610.588_235_294_117_6;
    let phi_star = 2.085_406_195_287_412_7e14;
    let mut cfg = ReactorConfig::default();
    cfg.h_spec.cov = 0.0;
    cfg.sigma_spec.cov = 0.0;
    let mesh = cfg.mesh().unwrap();
    let w = h1_gram(&mesh).unwrap();
    let kl_h = kl_decompose(&cfg.h_spec, &mesh).unwrap();
    let kl_s = kl_decompose(&cfg.sigma_spec, &mesh).unwrap();
    let xi = vec![0.0; cfg.h_spec.n_terms];
    let zeta = vec![0.0; cfg.sigma_spec.n_terms];
    let sol = solve_coupled(&cfg, &mesh, &kl_h, &kl_s, &xi, &zeta, 200, &w).unwrap();

    let rel = |vals: &[f64], star: f64| -> f64 {
        vals.iter().map(|v| (v - star).abs() / star).fold(0.0, f64::max)
    };
    let spread = |vals: &[f64]| -> f64 {
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (hi - lo) / hi.abs().max(1e-300)
    };
    let t_err = rel(&sol.temperature, t_star);
    let p_err = rel(&sol.flux, phi_star);
    let t_spread = spread(&sol.temperature);
    let p_spread = spread(&sol.flux);
    let ok = sol.temperature.len() == 41
        && t_err < 1e-8
        && p_err < 1e-8
        && t_spread < 1e-10
        && p_spread < 1e-10;
    verdict(
        5,
        ok,
        &format!(
            "{} nodes; T error {t_err:.3e}, flux error {p_err:.3e} (tolerance 1e-8); \
             spreads {t_spread:.3e} / {p_spread:.3e} (tolerance 1e-10)",
            sol.temperature.len()
        ),
    );
}

#[test]
fn criterion_06_full_run_dimensions_and_decay() {
    match full_run() {
        Err(e) => verdict(6, false, &format!("full-size run aborted: {e}")),
        Ok(res) => {
            let last = res.records.last().unwrap();
            let d_ok = last.d == 2 || last.d == 3;
            if last.d == 3 {
                println!("criterion  6: note - converged d = 3 (2 preferred, 3 tolerated)");
            }
            let q_ok = last.q == 2;
            let updates: Vec<f64> =
                res.records.iter().map(|r| r.t_update.max(r.phi_update)).collect();
            // The opening iteration relaxes from the cold start and reports
            // a null update; monotonicity is judged from the first real one.
            let start = updates.iter().position(|&u| u > 1e-12).unwrap_or(0);
            let through = 7.min(updates.len());
            let monotone =
                updates[start..through].windows(2).all(|p| p[1] <= p[0] * (1.0 + 1e-12));
            let plateau = *updates.last().unwrap() < 1e-6;
            verdict(
                6,
                d_ok && q_ok && monotone && plateau,
                &format!(
                    "d = {} (want 2, 3 tolerated), q = {} (want 2), monotone decay {}, \
                     final update {:.3e} (want < 1e-6)",
                    last.d,
                    last.q,
                    monotone,
                    updates.last().unwrap()
                ),
            );
        }
    }
}

#[test]
fn criterion_07_variance_fraction_table() {
    match full_run() {
        Err(e) => verdict(7, false, &format!("no surrogate, full-size run aborted: {e}")),
        Ok(res) => {
            let mesh = ReactorConfig::default().mesh().unwrap();
            let w = h1_gram(&mesh).unwrap();
            let (tf, pf) = variance_decomposition(&res.temperature, &res.flux, &w).unwrap();
            let got = [
                100.0 * tf.xi_only,
                100.0 * tf.zeta_only,
                100.0 * tf.mixed,
                100.0 * pf.xi_only,
                100.0 * pf.zeta_only,
                100.0 * pf.mixed,
            ];
            let want = [55.45, 44.40, 0.02, 2.15, 97.83, 0.08];
            let worst = got
                .iter()
                .zip(&want)
                .map(|(g, t)| (g - t).abs())
                .fold(0.0, f64::max);
            verdict(
                7,
                worst <= 2.0,
                &format!(
                    "variance fractions [{:.2} {:.2} {:.2} | {:.2} {:.2} {:.2}] vs \
                     [55.45 44.40 0.02 | 2.15 97.83 0.08] %, worst gap {worst:.2} \
                     points (tolerance 2.0)",
                    got[0], got[1], got[2], got[3], got[4], got[5]
                ),
            );
        }
    }
}

#[test]
fn criterion_08_monte_carlo_cross_validation() {
    let mc = match full_mc() {
        Err(e) => {
            verdict(8, false, &format!("Monte Carlo reference failed: {e}"));
            return;
        }
        Ok(store) => store,
    };
    match full_run() {
        Err(e) => verdict(
            8,
            false,
            &format!(
                "no surrogate to compare ({} of {} MC samples succeeded): full-size run \
                 aborted: {e}",
                mc.samples.len(),
                mc.n_requested
            ),
        ),
        Ok(res) => {
            let mesh = ReactorConfig::default().mesh().unwrap();
            let w = h1_gram(&mesh).unwrap();
            let report = cross_compare(mc, res, &w, mc.samples.len()).unwrap();
            verdict(
                8,
                report.t_distance <= 0.03 && report.phi_distance <= 0.03,
                &format!(
                    "relative mean-square W-distance T {:.4}, flux {:.4} over {} shared \
                     draws (tolerance 0.03)",
                    report.t_distance, report.phi_distance, report.n_used
                ),
            );
        }
    }
}

#[test]
fn criterion_09_correlation_length_spectra() {
    let mesh = ReactorConfig::default().mesh().unwrap();
    let short = FieldSpec { mean: 0.17, cov: 0.1, corr_length: 15.0, n_terms: 10 };
    let long = FieldSpec { mean: 0.0195, cov: 0.1, corr_length: 50.0, n_terms: 10 };
    let kl_short = kl_decompose(&short, &mesh).unwrap();
    let kl_long = kl_decompose(&long, &mesh).unwrap();
    // Shorter correlation spreads energy across more modes: past the two
    // dominant modes its spectrum decays strictly slower.
    let dominated = (2..10).all(|j| kl_short.eigenvalues[j] > kl_long.eigenvalues[j]);
    let traces_ok = [kl_short.spectrum_sum, kl_long.spectrum_sum]
        .iter()
        .all(|&t| t > 0.99 && t <= 1.0 + 1e-12);
    verdict(
        9,
        dominated && traces_ok,
        &format!(
            "eigenvalues 2..10 dominated by the 15 cm field: {dominated}; traces \
             {:.6} / {:.6} (want within [0.99, 1.0])",
            kl_short.spectrum_sum, kl_long.spectrum_sum
        ),
    );
}

#[test]
fn criterion_10_cli_determinism_across_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    // A configuration small enough to converge in seconds but exercising
    // the whole pipeline, including the reduced-variable exports.
    std::fs::write(
        &cfg_path,
        r#"{
  "reactor": {
    "h_spec": {"mean": 0.17, "cov": 0.1, "corr_length": 15.0, "n_terms": 3},
    "sigma_spec": {"mean": 0.0195, "cov": 0.04, "corr_length": 50.0, "n_terms": 2}
  },
  "solver": {"p": 3, "eps2": 0.02, "q_cap": 5, "max_outer_iters": 8, "mc_samples": 8}
}"#,
    )
    .unwrap();
    let bin = env!("CARGO_BIN_EXE_stochkap");
    let run = |out: &std::path::Path, threads: &str| {
        let status = Command::new(bin)
            .args([
                "pce",
                "--config",
                cfg_path.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--seed",
                "42",
                "--threads",
                threads,
            ])
            .status()
            .unwrap();
        assert!(status.success(), "pce run with --threads {threads} failed");
    };
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    run(&out_a, "1");
    run(&out_b, "4");

    let mut names: Vec<String> = std::fs::read_dir(&out_a)
        .unwrap()
        .filter_map(|e| {
            let name = e.unwrap().file_name().into_string().unwrap();
            name.ends_with(".csv").then_some(name)
        })
        .collect();
    names.sort();
    let mut mismatches = Vec::new();
    for name in &names {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        if a != b {
            mismatches.push(name.clone());
        }
    }
    verdict(
        10,
        !names.is_empty() && mismatches.is_empty(),
        &format!(
            "{} CSV files compared across --threads 1 vs 4, mismatches: {:?}",
            names.len(),
            mismatches
        ),
    );
}
