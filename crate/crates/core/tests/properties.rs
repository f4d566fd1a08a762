mod common;

use ndarray::Array2;
use proptest::prelude::*;
use restoretime::eval::{mape, split_indices, threshold_coverage};
use restoretime::features::{apply_standardization, coinciding_counts, coinciding_counts_intervals, Standardization};
use restoretime::neural::MlpArchitecture;
use restoretime::sdesc::{adjusted_rand_index, encode, Bandwidth, Dictionary};
use restoretime::transfer::{filter_learning_data, similarity, transfer_init, KnowledgeMatrix, OMEGA_FALLBACK};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-5.0..5.0f64, rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn intervals() -> impl Strategy<Value = Vec<(i64, i64, u64)>> {
    prop::collection::vec((0..50i64, 1..20i64, 1..100u64), 1..60)
        .prop_map(|v| v.into_iter().map(|(s, len, c)| (s * 60, (s + len) * 60, c)).collect())
}

fn knowledge(features: Array2<f64>) -> KnowledgeMatrix {
    let n = features.nrows();
    KnowledgeMatrix {
        source_cluster: 0,
        features,
        actual_rt: vec![1.0; n],
        architecture: MlpArchitecture::new(2, vec![2]).unwrap(),
        params: vec![0.5; 9],
    }
}

proptest! {
    #[test]
    fn sweep_matches_pairwise_count(iv in intervals()) {
        prop_assert_eq!(coinciding_counts_intervals(&iv), common::brute_coinciding(&iv));
        let records: Vec<_> = iv.iter().enumerate().map(|(i, &(s, e, c))| common::record(i, s, e, c)).collect();
        prop_assert_eq!(coinciding_counts(&records), common::brute_coinciding(&iv));
    }

    #[test]
    fn sweep_ignores_input_order(iv in intervals(), rot in 0usize..60) {
        let r = rot % iv.len();
        let mut shifted = iv.clone();
        shifted.rotate_left(r);
        let mut expect = coinciding_counts_intervals(&iv);
        expect.rotate_left(r);
        prop_assert_eq!(coinciding_counts_intervals(&shifted), expect);
    }

    #[test]
    fn similarity_is_symmetric_and_bounded(a in matrix(6, 3), b in matrix(4, 3)) {
        let ab = similarity(a.view(), b.view()).unwrap();
        let ba = similarity(b.view(), a.view()).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!(ab > 0.0 && ab <= 1.0);
        prop_assert_eq!(similarity(a.view(), a.view()).unwrap(), 1.0);
    }

    #[test]
    fn filter_removes_ceiling_share(x in matrix(23, 2), k in matrix(7, 2), pct in 0.0..50.0f64) {
        let out = filter_learning_data(x.view(), &knowledge(k), pct).unwrap();
        let expect = (pct / 100.0 * 23.0).ceil() as usize;
        prop_assert_eq!(out.removed.len(), expect);
        prop_assert_eq!(out.retained.len() + out.removed.len(), 23);
        let kept_min = out.retained.iter().map(|&i| out.scores[i]).fold(f64::INFINITY, f64::min);
        prop_assert!(out.removed.iter().all(|&i| out.scores[i] <= kept_min));
    }

    #[test]
    fn filter_is_order_invariant(x in matrix(15, 2), k in matrix(5, 2), pct in 1.0..40.0f64, rot in 1usize..15) {
        let kn = knowledge(k);
        let a = filter_learning_data(x.view(), &kn, pct).unwrap();
        let mut perm: Vec<usize> = (0..15).collect();
        perm.rotate_left(rot);
        let xp = x.select(ndarray::Axis(0), &perm);
        let b = filter_learning_data(xp.view(), &kn, pct).unwrap();
        let rows = |m: &Array2<f64>, idx: &[usize]| {
            let mut v: Vec<Vec<u64>> = idx.iter().map(|&i| m.row(i).iter().map(|f| f.to_bits()).collect()).collect();
            v.sort();
            v
        };
        prop_assert_eq!(rows(&x, &a.removed), rows(&xp, &b.removed));
    }

    #[test]
    fn transfer_init_is_linear_in_omega(params in prop::collection::vec(-3.0..3.0f64, 9), w in OMEGA_FALLBACK..0.5f64) {
        let mut kn = knowledge(Array2::zeros((1, 2)));
        kn.params = params.clone();
        let arch = kn.architecture.clone();
        let (a, used_a) = transfer_init(&kn, &arch, w, 0).unwrap();
        let (b, used_b) = transfer_init(&kn, &arch, 2.0 * w, 0).unwrap();
        prop_assert!(used_a && used_b);
        for ((pa, pb), p) in a.iter().zip(&b).zip(&params) {
            prop_assert_eq!(*pa, w * p);
            prop_assert!((pb - 2.0 * pa).abs() <= 1e-12 * p.abs().max(1.0));
        }
        let (_, used) = transfer_init(&kn, &arch, OMEGA_FALLBACK * 0.99, 0).unwrap();
        prop_assert!(!used);
    }

    #[test]
    fn mape_is_scale_invariant(
        pairs in prop::collection::vec((1.0..1e4f64, 0.0..1e4f64), 1..40),
        c in 1e-3..1e3f64,
    ) {
        let (a, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let base = mape(&a, &p).unwrap().value;
        let scaled_a: Vec<f64> = a.iter().map(|v| v * c).collect();
        let scaled_p: Vec<f64> = p.iter().map(|v| v * c).collect();
        let scaled = mape(&scaled_a, &scaled_p).unwrap().value;
        prop_assert!((base - scaled).abs() <= 1e-9 * base.max(1.0));
    }

    #[test]
    fn coverage_grows_with_threshold(
        pairs in prop::collection::vec((0.0..500.0f64, 0.0..500.0f64), 1..40),
        mut t in prop::collection::vec(0.0..300.0f64, 1..6),
    ) {
        t.sort_by(f64::total_cmp);
        let (a, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let cov = threshold_coverage(&a, &p, &t).unwrap();
        prop_assert!(cov.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(cov.iter().all(|c| (0.0..=100.0).contains(c)));
    }

    #[test]
    fn codes_are_row_stochastic(x in matrix(30, 3), atoms in matrix(6, 3), s in 2usize..6) {
        let dict = Dictionary::from_atoms(atoms).unwrap();
        let codes = encode(x.view(), &dict, s, Bandwidth::Median).unwrap();
        for i in 0..codes.nrows() {
            let row: Vec<(usize, f64)> = codes.row(i).collect();
            prop_assert!(!row.is_empty() && row.len() <= s);
            prop_assert!(row.iter().all(|&(_, w)| w >= 0.0));
            prop_assert!((row.iter().map(|&(_, w)| w).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ari_ignores_label_names(labels in prop::collection::vec(0usize..4, 2..50), shift in 1usize..4) {
        let renamed: Vec<usize> = labels.iter().map(|l| (l + shift) % 4 + 10).collect();
        prop_assert!((adjusted_rand_index(&labels, &renamed) - 1.0).abs() < 1e-12
            || labels.iter().all(|&l| l == labels[0]));
    }

    #[test]
    fn standardization_inverts(x in matrix(8, 3), mean in prop::collection::vec(-5.0..5.0f64, 3), std in prop::collection::vec(0.1..5.0f64, 3)) {
        let s = Standardization { columns: vec!["a".into(), "b".into(), "c".into()], mean, std };
        let z = apply_standardization(x.view(), &s).unwrap();
        let back = s.invert(z.view()).unwrap();
        for (u, v) in back.iter().zip(x.iter()) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn split_partitions_every_row(m in 10usize..400, seed in any::<u64>()) {
        let s = split_indices(m, seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..m).collect::<Vec<_>>());
        prop_assert!(!s.test.is_empty() && !s.validation.is_empty());
    }
}
