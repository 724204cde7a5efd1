mod common;

use anonaudit::anonymizer::{
    anonymize_with_tree, build_adt, build_blind_adt, compute_root_hash, AdtNode,
};
use anonaudit::fingerprint::wasserstein_1d;
use anonaudit::stats::{cohens_d_paired, wilcoxon_exact, PairedSeries};
use anonaudit::traps::{compute_tracker_id, OutsourcedDataset, Role};
use anonaudit::util::{canonical_f64, seeded_rng};
use anonaudit::verifier::evasion_probability;
use proptest::prelude::*;

/// Two-sided exact p by listing all sign patterns of integer ranks (no ties).
fn enumerate_wilcoxon(d: &[f64]) -> (f64, f64) {
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&i, &j| d[i].abs().total_cmp(&d[j].abs()));
    let mut rank = vec![0u32; d.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r as u32 + 1;
    }
    let total: u32 = rank.iter().sum();
    let t_plus: u32 = (0..d.len()).filter(|&i| d[i] > 0.0).map(|i| rank[i]).sum();
    let w = t_plus.min(total - t_plus);
    let n = d.len();
    let at_most = (0u32..(1 << n))
        .filter(|mask| {
            (0..n)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| rank[i])
                .sum::<u32>()
                <= w
        })
        .count();
    (
        w as f64,
        (2.0 * at_most as f64 / f64::from(1u32 << n)).min(1.0),
    )
}

fn distinct_abs(v: &[f64]) -> bool {
    let mut a: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    a.sort_by(f64::total_cmp);
    a.windows(2).all(|w| w[1] - w[0] > 1e-9) && a.iter().all(|x| *x > 1e-9)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wilcoxon_matches_enumeration(d in prop::collection::vec(-10.0f64..10.0, 1..12)) {
        prop_assume!(distinct_abs(&d));
        let zeros = vec![0.0; d.len()];
        let r = wilcoxon_exact(&PairedSeries::new(d.clone(), zeros).unwrap()).unwrap();
        let (w, p) = enumerate_wilcoxon(&d);
        prop_assert_eq!(r.statistic, w);
        prop_assert!((r.p_value - p).abs() < 1e-12);
    }

    #[test]
    fn cohens_d_flips_sign_on_swap(
        a in prop::collection::vec(-5.0f64..5.0, 3..20),
        seed in any::<u64>(),
    ) {
        let mut rng = seeded_rng(seed, "prop-d");
        let b: Vec<f64> = a.iter().map(|x| x + rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
        let fwd = cohens_d_paired(&PairedSeries::new(a.clone(), b.clone()).unwrap());
        let back = cohens_d_paired(&PairedSeries::new(b, a).unwrap());
        if let (Ok(x), Ok(y)) = (fwd, back) {
            prop_assert!((x + y).abs() < 1e-9);
        }
    }

    #[test]
    fn wasserstein_shift_equals_offset(
        p in prop::collection::vec(-50.0f64..50.0, 1..40),
        c in -20.0f64..20.0,
    ) {
        let q: Vec<f64> = p.iter().map(|x| x + c).collect();
        let w = wasserstein_1d(&p, &q).unwrap();
        prop_assert!((w - c.abs()).abs() < 1e-9);
    }

    #[test]
    fn wasserstein_agrees_with_quantile_form(
        p in prop::collection::vec(-5.0f64..5.0, 1..30),
        q in prop::collection::vec(-5.0f64..5.0, 1..30),
    ) {
        let w = wasserstein_1d(&p, &q).unwrap();
        prop_assert!((w - common::quantile_w1(&p, &q)).abs() < 1e-9);
    }

    #[test]
    fn evasion_is_a_probability_and_shrinks_with_more_sentinels(
        n in 100usize..50_000,
        s in 0usize..100,
        delta in 0.0f64..0.5,
    ) {
        let s = s.min(n - 1);
        let e = evasion_probability(s, n, delta).unwrap();
        let e_more = evasion_probability(s + 1, n, delta).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
        prop_assert!(e_more <= e);
    }

    #[test]
    fn canonical_rendering_is_fixed_six_decimals(x in 0.0f64..1e6) {
        let s = canonical_f64(x);
        let (_, frac) = s.split_once('.').unwrap();
        prop_assert_eq!(frac.len(), 6);
        prop_assert!((s.parse::<f64>().unwrap() - x).abs() <= 5e-7 + 1e-9 * x);
    }

    #[test]
    fn tracker_ids_depend_on_salt_and_index(
        salt in prop::collection::vec(any::<u8>(), 1..32),
        row in prop::collection::vec(0.0f64..100.0, 1..6),
        i in 0usize..10_000,
    ) {
        let a = compute_tracker_id(&salt, Role::Genuine, i, &row);
        prop_assert_eq!(&a, &compute_tracker_id(&salt, Role::Genuine, i, &row));
        prop_assert_ne!(&a, &compute_tracker_id(&salt, Role::Genuine, i + 1, &row));
        let mut other = salt.clone();
        other[0] ^= 1;
        prop_assert_ne!(&a, &compute_tracker_id(&other, Role::Genuine, i, &row));
        prop_assert_eq!(a.as_str().len(), 64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn trees_keep_two_k_and_survive_json(seed in any::<u64>(), k in 2usize..8, blind in any::<bool>()) {
        let mut rng = seeded_rng(seed, "prop-tree");
        let n = rand::Rng::gen_range(&mut rng, 4 * k..400);
        let t = common::random_table(&mut rng, n);
        let tree = if blind { build_blind_adt(&t, k, seed) } else { build_adt(&t, k) }.unwrap();
        prop_assert!(tree.leaf_counts().iter().all(|&c| c >= 2 * k));
        prop_assert_eq!(tree.leaf_counts().iter().sum::<usize>(), n);
        tree.validate().unwrap();

        let back = AdtNode::from_json(&tree.to_json().unwrap()).unwrap();
        prop_assert_eq!(compute_root_hash(&back), compute_root_hash(&tree));

        let d = OutsourcedDataset::untrapped(&t, b"prop").unwrap();
        let res = anonymize_with_tree(&d, tree).unwrap();
        prop_assert_eq!(res.leaf_map.len(), n);
        // every generalized range contains the outsourced value
        for (r, ranges) in res.anonymized.ranges.iter().enumerate() {
            for (j, (lo, hi)) in ranges.iter().enumerate() {
                let v = d.table.features(r)[j];
                prop_assert!(*lo <= v && v <= *hi);
            }
        }
    }

    #[test]
    fn same_seed_same_blind_tree(seed in any::<u64>()) {
        let mut rng = seeded_rng(seed, "prop-blind");
        let t = common::random_table(&mut rng, 200);
        let a = build_blind_adt(&t, 3, seed).unwrap();
        let b = build_blind_adt(&t, 3, seed).unwrap();
        prop_assert_eq!(compute_root_hash(&a), compute_root_hash(&b));
    }
}
