mod common;

use common::criteria;

fn assert_pass(v: criteria::Verdict) {
    assert!(v.pass, "{}", v.detail);
}

#[test]
fn analytic_gradients_match_finite_differences() {
    assert_pass(criteria::gradient_correctness());
}

#[test]
fn pgd_norm_bound_zero_radius_and_closed_form() {
    assert_pass(criteria::pgd_contract());
}

#[test]
fn full_rank_substitution_and_truncation_error() {
    assert_pass(criteria::svd_contract());
}

#[test]
fn symmetrized_kl_zero_symmetric_and_exact() {
    assert_pass(criteria::kl_contract());
}
