mod common;

#[test]
fn neumann_problem_converges_at_second_order() {
    let start = std::time::Instant::now();
    let (errs, rates) = common::neumann_rates(&[6, 12, 24]);
    assert!(errs.windows(2).all(|e| e[1] < e[0]), "{errs:?}");
    assert!(rates.iter().all(|&r| r >= 1.8), "rates {rates:?}");
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn straight_vessel_pressure_is_linear() {
    let err = common::poiseuille_error();
    assert!(err < 1e-10, "max nodal error {err}");
}

#[test]
fn y_junction_satisfies_kirchhoff() {
    let err = common::y_junction_error();
    assert!(err < 1e-10, "max nodal error {err}");
}
