mod common;

use nightshift::retrieval::RetrievalIndex;
use nightshift::vlad::DescriptorDb;
use proptest::prelude::*;

fn db(n: usize, dim: usize, seed: u64) -> DescriptorDb {
    let mut r = common::rng(seed);
    let mut db = DescriptorDb::new(dim);
    for i in 0..n {
        db.push(format!("ref{i:04}"), common::unit_vector(&mut r, dim)).unwrap();
    }
    db
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn query_matches_exhaustive_scan_100_by_1000() {
    let refs = db(1000, 32, 11);
    let index = RetrievalIndex::without_poses(&refs).unwrap();
    let mut r = common::rng(12);
    for q in 0..100 {
        let v = common::unit_vector(&mut r, 32);
        let (best, dist) = refs
            .entries()
            .iter()
            .map(|(id, e)| (id, l2(&v, e)))
            .fold((None, f64::INFINITY), |acc, (id, d)| if d < acc.1 { (Some(id), d) } else { acc });
        let m = index.query(&format!("q{q}"), &v).unwrap();
        assert_eq!(Some(&m.reference_id), best, "query {q}");
        assert!((m.distance - dist).abs() < 1e-12);
        assert!(!m.used_flip);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn l2_argmin_equals_dot_argmax(n in 1usize..200, dim in 2usize..24, seed in any::<u64>()) {
        let refs = db(n, dim, seed);
        let index = RetrievalIndex::without_poses(&refs).unwrap();
        let q = common::unit_vector(&mut common::rng(seed ^ 5), dim);
        let by_dot = refs
            .entries()
            .iter()
            .map(|(id, e)| (id, e.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>()))
            .fold((None, f64::NEG_INFINITY), |acc, (id, d)| if d > acc.1 { (Some(id.clone()), d) } else { acc });
        let m = index.query("q", &q).unwrap();
        prop_assert_eq!(Some(m.reference_id), by_dot.0);
    }

    #[test]
    fn dual_is_never_worse(n in 1usize..100, seed in any::<u64>()) {
        let refs = db(n, 16, seed);
        let index = RetrievalIndex::without_poses(&refs).unwrap();
        let mut r = common::rng(seed ^ 9);
        let plain = common::unit_vector(&mut r, 16);
        let flipped = common::unit_vector(&mut r, 16);
        let single = index.query("q", &plain).unwrap();
        let dual = index.query_pair("q", &plain, &flipped).unwrap();
        prop_assert!(dual.distance <= single.distance);
        prop_assert_eq!(dual.used_flip, dual.distance < single.distance);
    }

    #[test]
    fn repeated_queries_are_identical(seed in any::<u64>()) {
        let refs = db(50, 8, seed);
        let index = RetrievalIndex::without_poses(&refs).unwrap();
        let q = common::unit_vector(&mut common::rng(seed ^ 1), 8);
        prop_assert_eq!(index.query("q", &q).unwrap(), index.query("q", &q).unwrap());
    }
}
