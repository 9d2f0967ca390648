//! The bound chain against ground truth: the closed form at full Bitcoin
//! widths, the optimized split point, exhaustive enumeration at small widths,
//! and the Monte Carlo pipeline against exact enumeration.

use bfsim_core::analysis::{
    enumerate_preimage_counts, epsilon_bound, epsilon_exact, k_objective, monte_carlo_evidence,
    optimize_k,
};
use bfsim_core::crypto::ModelParams;

fn narrow(b_sec: u32, b_addr: u32) -> ModelParams {
    ModelParams::new(b_sec, b_addr)
        .unwrap()
        .with_digest_bits(1)
        .unwrap()
}

#[test]
fn closed_form_bound_at_full_bitcoin_widths() {
    let p = ModelParams::new(256, 160).unwrap();
    let bound = epsilon_bound(&p, 0.36).unwrap().bound_f64();
    let reference = 5.22 * (-96f64).exp2();
    assert!(
        (bound / reference - 1.0).abs() <= 5e-3,
        "bound {bound:e} vs reference {reference:e}"
    );
    assert!(bound < 7e-29);
    assert!(bound < 1e-28);
}

#[test]
fn optimized_split_point_beats_fixed_grid() {
    let p = ModelParams::new(256, 160).unwrap();
    let (k_star, _) = optimize_k(&p);
    assert!(
        (k_star - 0.36).abs() <= 0.01,
        "k* = {k_star}, expected within 0.01 of 0.36"
    );
    let f_star = k_objective(k_star);
    for k in [0.2, 0.3, 0.36, 0.4, 0.5] {
        assert!(
            f_star <= k_objective(k) + 1e-12,
            "f({k_star}) = {f_star} loses to f({k}) = {}",
            k_objective(k)
        );
    }
}

#[test]
fn exhaustive_epsilon_never_exceeds_the_bound() {
    for (b_sec, b_addr) in [(12, 4), (16, 8), (20, 8)] {
        let p = narrow(b_sec, b_addr);
        let exact = epsilon_exact(&p).unwrap();
        let bound = epsilon_bound(&p, 0.36).unwrap().bound_f64();
        assert!(
            exact <= bound,
            "({b_sec},{b_addr}): exact {exact:e} above bound {bound:e}"
        );
        assert!(exact > 0.0, "a full enumeration cannot miss every address");
    }
}

#[test]
fn bound_scales_exactly_with_the_width_gap() {
    // Both terms are linear in N_addr/N_sec, so widening the keyspace by w
    // bits at fixed address width divides the bound by exactly 2^w.
    let wide = epsilon_bound(&narrow(24, 8), 0.36).unwrap();
    let narrow_b = epsilon_bound(&narrow(20, 8), 0.36).unwrap();
    let ratio = narrow_b.bound / wide.bound;
    assert_eq!(ratio, num_rational::BigRational::from_integer(16.into()));
}

#[test]
fn monte_carlo_same_key_rate_matches_enumeration() {
    let p = narrow(14, 10);
    let counts = enumerate_preimage_counts(&p).unwrap();
    let occupied = counts.iter().filter(|&&c| c > 0).count() as f64;
    let eps = epsilon_exact(&p).unwrap();
    assert_eq!(eps, occupied / (14f64).exp2());

    let trials = 2000u64;
    let (evidence_ok, same_key) = monte_carlo_evidence(&p, trials, 99).unwrap();
    assert_eq!(evidence_ok + same_key, trials);

    let expect = trials as f64 * eps;
    let sigma = (trials as f64 * eps * (1.0 - eps)).sqrt();
    assert!(
        (same_key as f64 - expect).abs() <= 4.0 * sigma,
        "same-key count {same_key} vs expected {expect:.1} +- {:.1}",
        4.0 * sigma
    );
}
