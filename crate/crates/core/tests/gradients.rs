use edgesr_core::gradcheck::{run_suite, GradCheckOptions};

#[test]
fn every_case_passes_on_three_seeds() {
    let reports = run_suite(None, &[1, 2, 3], &GradCheckOptions::default()).unwrap();
    let mut failed = Vec::new();
    for r in &reports {
        println!("{} {:.2}s", r.summary(), r.seconds);
        if !r.passed() {
            failed.push(format!("{} seed {}: {:?}", r.name, r.seed, &r.failures[..r.failures.len().min(3)]));
        }
    }
    assert!(failed.is_empty(), "{failed:#?}");
}
