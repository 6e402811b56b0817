//! Tape gradients against central finite differences for every
//! differentiable block and the full pipeline.

use pointclu_core::gradcheck::{run_suite, FdConfig};

#[test]
fn every_case_matches_finite_differences() {
    let cfg = FdConfig::default();
    let cases = run_suite(&cfg).unwrap();
    assert_eq!(cases.len(), 14);
    for case in &cases {
        for r in &case.reports {
            assert!(
                r.passed(&cfg),
                "{} / {}: rel error {:.3e} at entry {} (analytic {}, numeric {}), {} checked, {} skipped",
                case.case,
                r.name,
                r.max_rel_error,
                r.worst_entry,
                r.analytic,
                r.numeric,
                r.checked,
                r.skipped
            );
        }
    }
}

#[test]
fn a_second_seed_also_passes() {
    let cfg = FdConfig {
        seed: 77,
        max_entries: 8,
        ..FdConfig::default()
    };
    for case in run_suite(&cfg).unwrap() {
        assert!(case.passed(&cfg), "{}: {:.3e}", case.case, case.max_rel_error());
    }
}
