mod common;

#[test]
fn critic_reaches_geometric_value() {
    let (updates, err) = common::td_chain(0.9, 1e-2, 5000);
    assert!(err <= 1e-2, "after {updates} updates max |Q - 10| = {err}");
}

#[test]
fn actor_reaches_quadratic_optimum() {
    for a_star in [0.5, -0.3, 0.0, 0.9] {
        let (updates, err) = common::quadratic_ascent(a_star, 1e-3, 2000);
        assert!(
            err <= 1e-3,
            "a* {a_star}: after {updates} updates |mu - a*| = {err}"
        );
    }
}
