mod common;

use nightshift::geoeval::{pose_error, threshold_accuracy, Pose, ThresholdSpec};
use proptest::prelude::*;
use rand::Rng;

fn pose() -> impl Strategy<Value = Pose> {
    (
        prop::array::uniform3(-50.0f64..50.0),
        prop::array::uniform4(-1.0f64..1.0).prop_filter("non-degenerate", |q| {
            q.iter().map(|v| v * v).sum::<f64>() > 1e-3
        }),
    )
        .prop_map(|(t, q)| {
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            Pose::new(t, q.map(|v| v / n)).unwrap()
        })
}

#[test]
fn pythagoras_and_quarter_turn() {
    let origin = Pose::identity();
    let shifted = Pose::new([3.0, 4.0, 0.0], [1.0, 0.0, 0.0, 0.0]).unwrap();
    assert_eq!(pose_error(&shifted, &origin).unwrap(), (5.0, 0.0));
    let h = std::f64::consts::FRAC_PI_4;
    let turned = Pose::new([0.0; 3], [h.cos(), 0.0, 0.0, h.sin()]).unwrap();
    let (m, deg) = pose_error(&turned, &origin).unwrap();
    assert_eq!(m, 0.0);
    assert!((deg - 90.0).abs() < 1e-9);
}

#[test]
fn hand_counted_thresholds() {
    let errors = [(0.1, 1.0), (0.4, 4.0), (4.0, 9.0), (20.0, 20.0)];
    let acc = threshold_accuracy(&errors, &ThresholdSpec::standard()).unwrap();
    assert_eq!(acc, vec![75.0, 50.0, 25.0]);
}

#[test]
fn monotone_in_looseness_over_1000_error_sets() {
    let mut r = common::rng(77);
    let spec = ThresholdSpec::new(vec![(10.0, 20.0), (5.0, 10.0), (0.5, 5.0), (0.25, 2.0), (0.1, 1.0)]).unwrap();
    for set in 0..1000 {
        let n = r.gen_range(1..40);
        let errors: Vec<(f64, f64)> = (0..n)
            .map(|_| (r.gen_range(0.0..12.0f64).powi(2) / 12.0, r.gen_range(0.0..25.0)))
            .collect();
        let acc = threshold_accuracy(&errors, &spec).unwrap();
        for w in acc.windows(2) {
            assert!(w[0] >= w[1], "error set {set}: {acc:?}");
        }
        assert!(acc.iter().all(|a| (0.0..=100.0).contains(a)));
    }
}

proptest! {
    #[test]
    fn double_cover_is_respected(p in pose()) {
        let neg = Pose::new(p.t, p.q.map(|v| -v)).unwrap();
        let (m, deg) = pose_error(&p, &neg).unwrap();
        prop_assert_eq!(m, 0.0);
        prop_assert!(deg.abs() < 1e-6);
    }

    #[test]
    fn error_is_symmetric_and_bounded(a in pose(), b in pose()) {
        let (m1, d1) = pose_error(&a, &b).unwrap();
        let (m2, d2) = pose_error(&b, &a).unwrap();
        prop_assert_eq!(m1, m2);
        prop_assert!((d1 - d2).abs() < 1e-9);
        prop_assert!((0.0..=180.0).contains(&d1));
    }
}
