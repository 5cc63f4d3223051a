mod common;

use common::{gradient_cases, run_gradient_case, FD_SAMPLES, FD_TOLERANCE};

#[test]
fn analytic_gradients_match_central_differences() {
    for (name, store, f, filter) in gradient_cases() {
        let report = run_gradient_case(&store, &f, filter, 0);
        assert!(
            report.checked >= FD_SAMPLES,
            "{name}: only {} entries",
            report.checked
        );
        assert!(
            report.max_rel_err < FD_TOLERANCE,
            "{name}: max relative error {:.3e} at {:?}",
            report.max_rel_err,
            report.worst
        );
    }
}
