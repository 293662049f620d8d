mod common;

use common::gradient::{run_gradient_check, MAX_REL_ERR};

#[test]
fn analytic_gradient_matches_finite_differences() {
    let s = run_gradient_check(120, 20240611);
    println!(
        "{} configs ({} with active triplets, {} redrawn near kinks), worst relative error {:.3e}",
        s.checked, s.with_triplets, s.redrawn, s.worst_rel_err
    );
    assert!(s.worst_loss_gap < 1e-10, "loss mismatch {:.3e}", s.worst_loss_gap);
    assert!(s.worst_rel_err < MAX_REL_ERR, "relative error {:.3e}", s.worst_rel_err);
    assert!(s.with_triplets >= 60);
    assert!(s.elapsed.as_secs() < 60);
}
