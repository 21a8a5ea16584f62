mod common;

use std::time::Duration;

use common::checks::{concurrent_sum, force_stress, guard_samples, queue_oracle, slope_ci};

#[test]
fn queue_matches_sorted_oracle() {
    for seed in 0..5 {
        queue_oracle(4000, seed).unwrap();
    }
}

#[test]
fn concurrent_sum_has_one_completer() {
    let r = concurrent_sum(100, 8, 8, 3);
    assert_eq!(r.bad_completions, 0);
    assert!(r.worst_rel < 1e-12, "{}", r.worst_rel);
}

#[test]
fn force_covers_all_cases_and_never_waits() {
    let r = force_stress(11, 6, 5, 12, Duration::from_millis(8));
    assert_eq!(r.misrun, 0);
    assert_eq!(r.out_of_order, 0);
    assert_eq!(r.attached, r.attached_run);
    assert!(r.max_force < r.update_time, "{:?}", r.max_force);
    assert_eq!(r.completed + r.queued + r.executing, r.subtasks as u64);
}

#[test]
fn slope_of_flat_data_is_zero() {
    let pts: Vec<(f64, f64)> = (0..100).map(|i| ((i % 10) as f64, 5.0 + if i % 2 == 0 { 0.1 } else { -0.1 })).collect();
    let (s, ci) = slope_ci(&pts);
    assert!(s.abs() <= ci + 1e-12);
    let rising: Vec<(f64, f64)> = (0..50).map(|i| (i as f64, 2.0 * i as f64 + (i % 3) as f64)).collect();
    let (s, ci) = slope_ci(&rising);
    assert!((s - 2.0).abs() < 0.1 && s.abs() > ci);
}

#[test]
fn guard_samples_cover_every_size() {
    let pts = guard_samples(&[8, 16], 3, 16, 0, 1);
    assert_eq!(pts.len(), 6);
    assert!(pts.iter().all(|p| p.1 > 0.0));
}
