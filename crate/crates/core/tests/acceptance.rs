//! Acceptance gate for the library: nine numbered criteria covering the
//! geometry, the rate/WMMSE and fractional-transform identities, filter
//! optimality, optimizer monotonicity and convergence, covariance-solution
//! reduction, and cross-scheme ordering properties. Each test prints one
//! `criterion N PASS: ...` line on success.
//!
//! Criterion 9 exercises the full-scale profile (64-antenna arrays) and is
//! ignored by default; run it with `cargo test --test acceptance -- --ignored`.

use std::f64::consts::{LN_2, PI};
use std::sync::OnceLock;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use nfisac::channel::rayleigh_distance;
use nfisac::config::SystemConfig;
use nfisac::experiments::{gen_scenario, run_baseline, Scheme};
use nfisac::optimizer::{
    optimize, sensing_surrogate, update_equalizers, update_qt_aux, update_receive_filters,
    update_weights, PddOptions, Solution,
};
use nfisac::rates::{power_terms, sensing_sinr, Precoder, ReceiveFilters};
use nfisac::reconstruct::{synthesize_reducible_solution, verify_no_sensing_beams};
use nfisac::{C64, CMat, CVec};

fn complex_gaussian(rng: &mut ChaCha8Rng) -> C64 {
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    let r = (-2.0 * u1.ln()).sqrt();
    C64::new(r * (2.0 * PI * u2).cos(), r * (2.0 * PI * u2).sin())
}

/// Random precoder drawing a uniform power level in (0.1, 1.0) of budget.
fn random_precoder(rng: &mut ChaCha8Rng, cfg: &SystemConfig) -> Precoder {
    let m = CMat::from_fn(cfg.n_tx, cfg.n_users + 1, |_, _| complex_gaussian(rng));
    let power = rng.random_range(0.1..1.0) * cfg.power_max_mw;
    let scale = (power / m.norm_squared()).sqrt();
    Precoder::new(m * C64::new(scale, 0.0))
}

fn random_unit_filter(rng: &mut ChaCha8Rng, n: usize) -> CVec {
    let v = CVec::from_fn(n, |_, _| complex_gaussian(rng));
    let norm = v.norm();
    v / C64::new(norm, 0.0)
}

#[test]
fn criterion_1_rayleigh_distance_is_exactly_50m() {
    for cfg in [SystemConfig::desk(), SystemConfig::paper()] {
        let d = rayleigh_distance(cfg.aperture_tx(), cfg.wavelength_m).unwrap();
        assert_eq!(d, 50.0, "aperture {} m", cfg.aperture_tx());
    }
    println!("criterion 1 PASS: 0.5 m aperture at 30 GHz gives a 50 m Rayleigh distance exactly");
}

#[test]
fn criterion_2_rate_wmmse_identity_on_100_instances() {
    let cfg = SystemConfig::desk();
    let tau = 1.0 / LN_2 + LN_2.log2();
    let mut worst = 0.0_f64;
    for i in 0..100u64 {
        let scenario = gen_scenario(&cfg, 2000 + i).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + i);
        let p = random_precoder(&mut rng, &cfg);
        let (_, _, mmse_c, mmse_p) = update_equalizers(&p, &scenario, &cfg).unwrap();
        let (wt_c, wt_p) = update_weights(&mmse_c, &mmse_p).unwrap();
        for (k, h) in scenario.comm_channels.iter().enumerate() {
            let pt = power_terms(&p, h, k, cfg.noise_comm_mw, cfg.sic_residual).unwrap();
            let rate_c = (1.0 + pt.s_c / pt.i_c).log2();
            let rate_p = (1.0 + pt.s_p / pt.i_p).log2();
            for (eta, delta, rate) in
                [(wt_c[k], mmse_c[k], rate_c), (wt_p[k], mmse_p[k], rate_p)]
            {
                let gap = (eta * delta - eta.log2() - (tau - rate)).abs();
                worst = worst.max(gap);
                assert!(gap <= 1e-9, "identity gap {gap} at instance {i} user {k}");
            }
        }
    }
    println!(
        "criterion 2 PASS: weight*mse - log2(weight) = tau - rate to 1e-9 on 100 instances \
         (worst gap {worst:.2e})"
    );
}

#[test]
fn criterion_3_quadratic_transform_tight_on_100_instances() {
    let cfg = SystemConfig::desk();
    let mut worst = 0.0_f64;
    for i in 0..100u64 {
        let scenario = gen_scenario(&cfg, 2000 + i).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3100 + i);
        let p = random_precoder(&mut rng, &cfg);
        let filters = update_receive_filters(&p, &scenario, &cfg).unwrap();
        let sinrs = sensing_sinr(&p, &filters, &scenario, &cfg).unwrap();
        let aux = update_qt_aux(&p, &filters, &scenario, &cfg);
        for (m, x) in aux.iter().enumerate() {
            let gap = (sensing_surrogate(x, &p, &filters, &scenario, &cfg, m) - sinrs[m]).abs();
            worst = worst.max(gap);
            assert!(gap <= 1e-10, "surrogate gap {gap} at instance {i} target {m}");
        }
    }
    println!(
        "criterion 3 PASS: surrogate at the transform point equals the sensing SINR to 1e-10 \
         on 100 instances (worst gap {worst:.2e})"
    );
}

#[test]
fn criterion_4_eigenvector_filter_beats_10000_random_filters() {
    let cfg = SystemConfig::desk();
    for i in 0..20u64 {
        let scenario = gen_scenario(&cfg, 4000 + i).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + i);
        let p = random_precoder(&mut rng, &cfg);
        let filters = update_receive_filters(&p, &scenario, &cfg).unwrap();
        let optimal = sensing_sinr(&p, &filters, &scenario, &cfg).unwrap();

        // Quadratic-form evaluation through precomputed echo forms; agrees
        // with the rates module on the optimal filters, then prices each
        // random filter cheaply.
        let r_cov = p.covariance();
        let echo_forms: Vec<CMat> = scenario
            .sense_channels
            .iter()
            .zip(&cfg.reflect_coeffs)
            .map(|(g, &a)| g * &r_cov * g.adjoint() * C64::new(a, 0.0))
            .collect();
        let sinr_of = |u: &CVec| -> Vec<f64> {
            let q: Vec<f64> = echo_forms.iter().map(|e| (e * u).dotc(u).re).collect();
            (0..q.len())
                .map(|m| {
                    let interference: f64 =
                        q.iter().enumerate().filter(|(j, _)| *j != m).map(|(_, v)| v).sum();
                    q[m] / (cfg.noise_sense_mw * u.norm_squared() + interference)
                })
                .collect()
        };
        for (m, u) in filters.filters.iter().enumerate() {
            let direct = sinr_of(u)[m];
            assert!(
                (direct - optimal[m]).abs() <= 1e-9 * optimal[m].max(1.0),
                "evaluation paths disagree: {direct} vs {}",
                optimal[m]
            );
        }
        for _ in 0..10_000 {
            let u = random_unit_filter(&mut rng, cfg.n_rx);
            for (m, sinr) in sinr_of(&u).into_iter().enumerate() {
                assert!(
                    optimal[m] >= sinr,
                    "random filter beat the eigenvector filter at instance {i} target {m}: \
                     {sinr} > {}",
                    optimal[m]
                );
            }
        }
    }
    println!(
        "criterion 4 PASS: generalized-eigenvector filters dominate 10000 random unit filters \
         on all 20 instances"
    );
}

/// Twenty seeded desk-profile runs shared by criteria 5 and 6.
fn desk_runs() -> &'static [(u64, Solution)] {
    static RUNS: OnceLock<Vec<(u64, Solution)>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let cfg = SystemConfig::desk();
        (0..20u64)
            .map(|seed| {
                let scenario = gen_scenario(&cfg, 1000 + seed).unwrap();
                let opts = PddOptions { seed, ..Default::default() };
                (seed, optimize(&scenario, &cfg, &opts).unwrap())
            })
            .collect()
    })
}

#[test]
fn criterion_5_block_updates_never_decrease_the_objective() {
    for (seed, sol) in desk_runs() {
        let mut last = f64::NEG_INFINITY;
        for row in &sol.diagnostics.trace {
            if row.inner_iter == 1 && row.outer_iter > 1 {
                // Dual/penalty updates between outer iterations reset the
                // objective level.
                last = f64::NEG_INFINITY;
            }
            for v in row.blocks.as_array() {
                assert!(
                    v >= last - 1e-6,
                    "seed {seed}: objective dropped {last} -> {v} at outer {} inner {}",
                    row.outer_iter,
                    row.inner_iter
                );
                last = v;
            }
        }
    }
    println!(
        "criterion 5 PASS: augmented objective non-decreasing (slack 1e-6) across every block \
         update of 20 desk runs"
    );
}

#[test]
fn criterion_6_pdd_converges_on_20_desk_runs() {
    let cfg = SystemConfig::desk();
    let mut outers: Vec<usize> = Vec::new();
    for (seed, sol) in desk_runs() {
        let d = &sol.diagnostics;
        assert!(d.final_residual_inf <= 1e-4, "seed {seed}: residual {}", d.final_residual_inf);
        assert!(d.outer_iterations <= 60, "seed {seed}: {} outer iterations", d.outer_iterations);
        for (m, r) in sol.report.sensing_rates.iter().enumerate() {
            assert!(
                *r >= cfg.sense_rate_min_bps - 1e-6,
                "seed {seed}: sensing rate {r} below floor at target {m}"
            );
        }
        outers.push(d.outer_iterations);
    }
    outers.sort_unstable();
    let median = outers[outers.len() / 2];
    println!(
        "criterion 6 PASS: 20/20 desk runs reach residual <= 1e-4 with sensing floors met; \
         outer iterations median {median} (range {}..={})",
        outers[0],
        outers[outers.len() - 1]
    );
}

#[test]
fn criterion_7_merge_and_rank_reduction_preserve_performance() {
    let cfg = SystemConfig::desk();
    let mut worst_cov = 0.0_f64;
    let mut worst_power = 0.0_f64;
    for i in 0..20u64 {
        let scenario = gen_scenario(&cfg, 6000 + i).unwrap();
        let sol = synthesize_reducible_solution(&scenario, &cfg, 7000 + i).unwrap();
        assert!(sol.sense_cov.iter().any(|c| c.norm() > 0.0), "instance {i} has no sensing part");
        let report = verify_no_sensing_beams(&sol, &scenario, &cfg).unwrap();
        assert!(!report.identical);
        assert!(
            report.merge_covariance_drift <= 1e-8,
            "instance {i}: covariance drift {}",
            report.merge_covariance_drift
        );
        let power_drift = (report.power_after_mw - report.power_before_mw).abs()
            / report.power_before_mw.max(1.0);
        assert!(power_drift <= 1e-10, "instance {i}: power drift {power_drift}");
        assert!(report.stream_sinrs_non_decreased, "instance {i}: a stream SINR decreased");
        assert!(
            report.reduced_ranks.iter().all(|&r| r == 1),
            "instance {i}: ranks {:?}",
            report.reduced_ranks
        );
        worst_cov = worst_cov.max(report.merge_covariance_drift);
        worst_power = worst_power.max(power_drift);
    }
    println!(
        "criterion 7 PASS: 20 sensing-covariance merges + rank reductions keep the covariance \
         (drift <= {worst_cov:.2e}), power (drift <= {worst_power:.2e}), and every user SINR, \
         with rank-one outputs"
    );
}

#[test]
fn criterion_8_scheme_orderings_hold_on_20_paired_seeds() {
    let cfg = SystemConfig::desk();
    let schemes = Scheme::ALL;
    let mut rates: Vec<Vec<f64>> = vec![Vec::new(); schemes.len()];
    for seed in 0..20u64 {
        let scenario = gen_scenario(&cfg, seed).unwrap();
        for (si, &scheme) in schemes.iter().enumerate() {
            let sol = run_baseline(scheme, &scenario, &cfg, seed)
                .unwrap_or_else(|e| panic!("{scheme} failed on seed {seed}: {e}"));
            rates[si].push(sol.report.min_total);
        }
    }
    let idx = |s: Scheme| schemes.iter().position(|&x| x == s).unwrap();
    let rsma = &rates[idx(Scheme::RsmaHybridNf)];
    let sdma = &rates[idx(Scheme::SdmaHybridNf)];
    let digital = &rates[idx(Scheme::RsmaFulldigitalNf)];
    let commonly = &rates[idx(Scheme::RsmaCommonlyNf)];
    let ff = &rates[idx(Scheme::RsmaHybridFf)];

    let violations = |hi: &[f64], lo: &[f64]| hi.iter().zip(lo).filter(|(h, l)| h < l).count();
    let v_digital = violations(digital, rsma);
    let v_commonly = violations(commonly, rsma);
    let v_rsma = violations(rsma, sdma);
    assert_eq!(v_digital, 0, "fully digital fell below hybrid");
    assert_eq!(v_commonly, 0, "communication-only fell below the sensing-constrained design");
    assert_eq!(v_rsma, 0, "rate splitting fell below its own no-common-stream start");

    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let (m_nf, m_ff) = (mean(rsma), mean(ff));
    assert!(m_nf >= m_ff, "near-field mean {m_nf} below far-field-designed mean {m_ff}");
    println!(
        "criterion 8 PASS: on 20 paired seeds, fully-digital >= hybrid, communication-only >= \
         sensing-constrained, and rate-splitting >= no-common-stream with 0 violations each; \
         near-field mean {m_nf:.3} >= far-field-designed mean {m_ff:.3}"
    );
}

#[test]
#[ignore = "full-scale profile: hours of compute; run with `cargo test --test acceptance -- --ignored`"]
fn criterion_9_communication_only_rate_flat_in_target_count_at_full_scale() {
    let mut means = Vec::new();
    for m_targets in 2..=6usize {
        let cfg = SystemConfig::with_arrays(64, 64, 8, 6, m_targets, 6.0);
        let mut rates = Vec::new();
        for seed in 0..5u64 {
            let scenario = gen_scenario(&cfg, 8000 + seed).unwrap();
            let sol = run_baseline(Scheme::RsmaCommonlyNf, &scenario, &cfg, seed)
                .unwrap_or_else(|e| panic!("{m_targets} targets, seed {seed}: {e}"));
            rates.push(sol.report.min_total);
        }
        means.push(rates.iter().sum::<f64>() / rates.len() as f64);
    }
    let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
    let center = means.iter().sum::<f64>() / means.len() as f64;
    let spread = (hi - lo) / center;
    assert!(
        spread < 0.05,
        "communication-only rate varies {:.1}% across 2..=6 targets: {means:?}",
        100.0 * spread
    );
    println!(
        "criterion 9 PASS: communication-only full-scale rate varies {:.2}% (< 5%) across \
         2..=6 targets (means {means:?})",
        100.0 * spread
    );
}
