mod common;

#[test]
fn five_hundred_updates_halve_mse() {
    for (k, (initial, last)) in common::ae_training(500).into_iter().enumerate() {
        assert!(
            last <= 0.5 * initial,
            "agent {}: {last} vs initial {initial}",
            k + 1
        );
    }
}
