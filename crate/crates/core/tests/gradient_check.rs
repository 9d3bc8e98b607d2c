//! Analytic input gradients against central finite differences.

mod common;

#[test]
fn input_gradient_matches_finite_differences() {
    let worst = common::gradient_check_suite();
    println!("max relative error {worst:e}");
    assert!(worst <= 1e-4, "max relative error {worst}");
}
