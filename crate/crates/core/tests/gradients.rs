mod support;

use support::grad_suite;

#[test]
fn every_gradient_matches_central_differences() {
    let mut failures = Vec::new();
    let mut worst_abs = 0.0f64;
    for (name, report) in grad_suite::run_all() {
        match report {
            Ok(r) if r.passed() && r.checked > 0 => worst_abs = worst_abs.max(r.max_abs_error),
            Ok(r) => failures.push(format!("{name}: {r:?}")),
            Err(e) => failures.push(format!("{name}: {e}")),
        }
    }
    eprintln!("largest absolute gradient error: {worst_abs:.2e}");
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}

#[test]
fn checker_flags_a_wrong_gradient() {
    // sum(x * stop(x)) has value sum(x^2) but a tape gradient of x, not 2x.
    let x = dfl_core::autodiff::Tensor::new(vec![5], vec![0.3, -1.2, 0.8, 2.0, -0.5]).unwrap();
    let r = dfl_core::autodiff::gradcheck::check_inputs(&[x], 1e-5, |g, v| {
        let held = g.detach(v[0]);
        let y = g.mul(v[0], held)?;
        Ok(g.sum(y))
    })
    .unwrap();
    assert!(!r.passed());
    assert!(r.max_rel_error > 0.4, "{r:?}");
}
