mod common;

use common::{augmentation_audit, huber_examples, huber_knee_gap, reward_range_violations};

#[test]
fn huber_worked_examples() {
    for (name, got, want) in huber_examples() {
        assert!((got - want).abs() < 1e-12, "{name}: {got} vs {want}");
    }
}

#[test]
fn huber_is_continuous_at_the_knee() {
    assert!(huber_knee_gap() <= 1e-7);
}

#[test]
fn reward_stays_in_unit_interval() {
    assert_eq!(reward_range_violations(100_000, 1), 0);
}

#[test]
fn augmented_copies_launch_from_rest() {
    let a = augmentation_audit(4);
    assert_eq!(a.output, 2 * a.input);
    assert_eq!(a.violations, 0);
    assert!((a.mean_speed - 1.5).abs() < 0.1, "mean speed {}", a.mean_speed);
}
