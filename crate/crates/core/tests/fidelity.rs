mod common;

use common::*;
use xmodal_core::contrastive::DenominatorMode;

#[test]
fn standard_scalar_case_is_log_one_plus_inverse_e() {
    let want = (1.0 + (-1.0f64).exp()).ln();
    let got = contrastive_scalar_case(DenominatorMode::Standard);
    assert!((got - want).abs() <= 1e-9, "{got} vs {want}");
}

#[test]
fn paper_literal_scalar_case_is_minus_one() {
    let got = contrastive_scalar_case(DenominatorMode::PaperLiteral);
    assert!((got + 1.0).abs() <= 1e-9, "{got}");
}

#[test]
fn temperature_rescaling_is_exact() {
    for seed in 0..20 {
        let (a, b) = tau_rescaled_pair(seed);
        assert_eq!(a, b, "seed {seed}");
    }
}

#[test]
fn attention_matches_loop_formula() {
    for seed in 0..20 {
        let gap = attention_formula_gap(seed);
        assert!(gap <= 1e-12, "seed {seed}: {gap:e}");
    }
}

#[test]
fn attention_rows_are_distributions() {
    for seed in 0..5 {
        let gap = attention_row_sum_gap(seed);
        assert!(gap <= 1e-9, "seed {seed}: {gap:e}");
    }
}

#[test]
fn zero_layer_refiner_passes_tokens_through() {
    for seed in 0..5 {
        assert!(zero_layer_refiner_is_identity(seed));
    }
}
