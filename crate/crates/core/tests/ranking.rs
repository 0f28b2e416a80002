mod common;

use common::{entry, random_descriptor, random_index};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wordspot_core::retrieval::{minkowski_distance, similarity_rate};
use wordspot_core::{rank, CorpusIndex, QueryVector, DESCRIPTOR_LEN};

/// Sequential sum, full sort on exact distances, rates from the sorted tail.
fn brute_force(query: &[f64], index: &CorpusIndex) -> Vec<(u64, f64, f64)> {
    let mut scored: Vec<(u64, f64)> = index
        .entries()
        .iter()
        .map(|e| {
            let mut d = 0.0;
            for k in 0..DESCRIPTOR_LEN {
                d += (query[k] - e.descriptor.as_slice()[k]).abs();
            }
            (e.word_id, d)
        })
        .collect();
    scored.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    let max = scored.last().unwrap().1;
    scored.into_iter().map(|(id, d)| (id, d, 100.0 * (1.0 - d / max))).collect()
}

#[test]
fn ranking_matches_brute_force_on_random_indices() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..20 {
        let index = random_index(200, seed);
        for _ in 0..10 {
            let q = random_descriptor(&mut rng);
            let got = rank(&QueryVector::original(&q).unwrap(), &index).unwrap();
            let want = brute_force(&q, &index);
            assert_eq!(got.len(), want.len());
            for (r, (id, d, rate)) in got.results.iter().zip(&want) {
                assert_eq!(r.word_id, *id);
                assert!((r.distance - d).abs() <= 1e-12 * d.max(1.0));
                assert!((r.rate - rate).abs() <= 1e-9);
                assert!((0.0..=100.0).contains(&r.rate));
            }
            assert_eq!(got.results.last().unwrap().rate, 0.0);
        }
    }
}

#[test]
fn indexed_query_ranks_itself_first_at_rate_100() {
    let index = random_index(200, 3);
    for e in index.entries().iter().step_by(17) {
        let got = rank(&QueryVector::original(e.descriptor.as_slice()).unwrap(), &index).unwrap();
        assert_eq!(got.results[0].word_id, e.word_id);
        assert_eq!(got.results[0].rate, 100.0);
        assert_eq!(got.results[0].distance, 0.0);
    }
}

#[test]
fn ties_break_by_ascending_word_id() {
    let v = vec![0.5; DESCRIPTOR_LEN];
    let far = vec![1.0; DESCRIPTOR_LEN];
    let entries = vec![
        entry(9, 0, &v, None),
        entry(2, 0, &far, None),
        entry(4, 0, &v, None),
        entry(1, 1, &v, None),
    ];
    let index = CorpusIndex::new(entries).unwrap();
    let got = rank(&QueryVector::original(&v).unwrap(), &index).unwrap();
    let ids: Vec<u64> = got.results.iter().map(|r| r.word_id).collect();
    assert_eq!(ids, vec![1, 4, 9, 2]);
}

#[test]
fn all_zero_distances_rate_100() {
    let v = vec![0.25; DESCRIPTOR_LEN];
    let index = CorpusIndex::new(vec![entry(0, 0, &v, None), entry(1, 0, &v, None)]).unwrap();
    let got = rank(&QueryVector::original(&v).unwrap(), &index).unwrap();
    assert!(got.results.iter().all(|r| r.rate == 100.0));
}

fn unit_vec() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.0f64..=1.0, DESCRIPTOR_LEN)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn l1_is_a_metric(a in unit_vec(), b in unit_vec(), c in unit_vec()) {
        let ab = minkowski_distance(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(minkowski_distance(&a, &a).unwrap(), 0.0);
        prop_assert!((ab - minkowski_distance(&b, &a).unwrap()).abs() <= 1e-12);
        let ac = minkowski_distance(&a, &c).unwrap();
        let cb = minkowski_distance(&c, &b).unwrap();
        prop_assert!(ab <= ac + cb + 1e-12);
    }

    #[test]
    fn rate_is_bounded_and_monotone(max in 0.0f64..100.0, f1 in 0.0f64..=1.0, f2 in 0.0f64..=1.0) {
        let (lo, hi) = if f1 <= f2 { (f1 * max, f2 * max) } else { (f2 * max, f1 * max) };
        let r_lo = similarity_rate(lo, max).unwrap();
        let r_hi = similarity_rate(hi, max).unwrap();
        prop_assert!((0.0..=100.0).contains(&r_lo) && (0.0..=100.0).contains(&r_hi));
        prop_assert!(r_lo >= r_hi);
    }

    #[test]
    fn ranking_ignores_insertion_order(seed in 0u64..1000, q in unit_vec()) {
        let index = random_index(60, seed);
        let mut reversed: Vec<_> = index.entries().to_vec();
        reversed.reverse();
        let other = CorpusIndex::new(reversed).unwrap();
        let query = QueryVector::original(&q).unwrap();
        prop_assert_eq!(rank(&query, &index).unwrap(), rank(&query, &other).unwrap());
    }

    #[test]
    fn ranking_is_sorted_with_unit_range_rates(seed in 0u64..1000, q in unit_vec()) {
        let index = random_index(50, seed);
        let got = rank(&QueryVector::original(&q).unwrap(), &index).unwrap();
        for w in got.results.windows(2) {
            prop_assert!(w[0].distance < w[1].distance
                || (w[0].distance == w[1].distance && w[0].word_id < w[1].word_id));
        }
        prop_assert!(got.results.iter().all(|r| (0.0..=100.0).contains(&r.rate)));
    }
}
