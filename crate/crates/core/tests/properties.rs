//! Property tests over randomly generated inputs.

use earlybranch::autodiff::checkpoint::{decode_checkpoint, encode_checkpoint};
use earlybranch::autodiff::Graph;
use earlybranch::data::{generate_synthetic, leave_one_out_partition, DomainDataset, SyntheticConfig};
use earlybranch::harness::{mean_std, predict, select_checkpoint, ValidationRecord};
use earlybranch::independence::{hsic_linear, FeatureBatch};
use earlybranch::objectives::{LossBreakdown, LossWeights};
use earlybranch::style::{adain_transfer, compute_style_stats, StyleStats};
use earlybranch::Array;
use proptest::prelude::*;
use std::sync::OnceLock;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |v| Array::new(vec![rows, cols], v).unwrap())
}

fn pair() -> impl Strategy<Value = (Array, Array)> {
    (2usize..12, 1usize..6, 1usize..6).prop_flat_map(|(b, p, q)| (matrix(b, p), matrix(b, q)))
}

fn dataset() -> &'static DomainDataset {
    static D: OnceLock<DomainDataset> = OnceLock::new();
    D.get_or_init(|| {
        generate_synthetic(&SyntheticConfig {
            samples_per_class: 5,
            height: 8,
            width: 8,
            ..SyntheticConfig::default()
        })
        .unwrap()
    })
}

proptest! {
    #[test]
    fn hsic_is_symmetric_and_nonnegative((a, b) in pair()) {
        let (fa, fb) = (FeatureBatch::new(a).unwrap(), FeatureBatch::new(b).unwrap());
        let ab = hsic_linear(&fa, &fb).unwrap();
        let ba = hsic_linear(&fb, &fa).unwrap();
        prop_assert!(ab >= -1e-12);
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.abs().max(1.0));
    }

    #[test]
    fn row_normalize_gives_unit_rows(a in (1usize..8, 1usize..8).prop_flat_map(|(r, c)| matrix(r, c))) {
        prop_assume!((0..a.rows()).all(|i| a.row(i).iter().any(|v| v.abs() > 1e-3)));
        let mut g = Graph::new();
        let x = g.constant(a.clone());
        let y = g.row_normalize(x).unwrap();
        let out = g.value(y);
        for i in 0..out.rows() {
            let n: f64 = out.row(i).iter().map(|v| v * v).sum();
            prop_assert!((n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn checkpoint_round_trips(shapes in prop::collection::vec(prop::collection::vec(1usize..4, 0..4), 1..5), seed in any::<u64>()) {
        let arrays: Vec<(String, Array)> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| (format!("p{i}"), Array::from_fn(s, |j| (seed as f64).sin() + j as f64 * 0.37)))
            .collect();
        let bytes = encode_checkpoint(arrays.iter().map(|(n, a)| (n.as_str(), a)));
        let back = decode_checkpoint(&bytes).unwrap();
        prop_assert_eq!(back, arrays);
    }

    #[test]
    fn truncated_checkpoints_are_rejected(cut in 1usize..60) {
        let a = Array::from_fn(&[2, 3], |i| i as f64);
        let bytes = encode_checkpoint([("w", &a)]);
        let cut = cut.min(bytes.len() - 1);
        prop_assert!(decode_checkpoint(&bytes[..bytes.len() - cut]).is_err());
    }

    #[test]
    fn partitions_are_disjoint_and_cover(target in 0usize..6, seed in any::<u64>(), frac in 0.05f64..0.5) {
        let ds = dataset();
        let p = leave_one_out_partition(ds, target, frac, seed).unwrap();
        let mut seen = vec![0u8; ds.len()];
        for &i in p.train.iter().chain(&p.val).chain(&p.test) {
            seen[i] += 1;
        }
        prop_assert!(seen.iter().all(|&s| s == 1));
        prop_assert!(p.test.iter().all(|&i| ds.domains()[i] == target));
        prop_assert!(p.train.iter().chain(&p.val).all(|&i| ds.domains()[i] != target));
    }

    #[test]
    fn selection_picks_first_maximum(accs in prop::collection::vec(0u8..5, 1..20)) {
        let recs: Vec<ValidationRecord> = accs
            .iter()
            .enumerate()
            .map(|(i, &a)| ValidationRecord { step: i * 10, val_acc: a as f64 / 4.0 })
            .collect();
        let best = select_checkpoint(&recs).unwrap();
        let max = *accs.iter().max().unwrap();
        prop_assert_eq!(best, accs.iter().position(|&a| a == max).unwrap());
    }

    #[test]
    fn predict_breaks_ties_low(rows in 1usize..6, cols in 1usize..6, v in -2i32..2) {
        let logits = Array::full(&[rows, cols], v as f64);
        prop_assert!(predict(&logits).iter().all(|&p| p == 0));
    }

    #[test]
    fn mean_std_matches_definition(xs in prop::collection::vec(-10.0f64..10.0, 1..30)) {
        let (m, s) = mean_std(&xs);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        prop_assert!((m - mean).abs() < 1e-12);
        prop_assert!((s - var.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn composition_identity(cls in 0.0f64..10.0, indp in 0.0f64..1.0, cons in 0.0f64..5.0, inv in 0.0f64..5.0,
                            alpha in 0.0f64..1.0, beta in 0.0f64..1.0) {
        let w = LossWeights { alpha, beta, ..LossWeights::default() };
        let t = LossBreakdown::compose(cls, indp, cons, inv, &w);
        prop_assert_eq!(t, cls + alpha * indp + beta * (cons + inv));
    }

    #[test]
    fn adain_hits_target_statistics(b in 1usize..3, c in 1usize..4, seed in any::<u32>()) {
        let f = Array::from_fn(&[b, c, 4, 4], |i| ((i as f64 + seed as f64) * 0.7).sin());
        let mu = Array::from_fn(&[b, c], |i| i as f64 - 1.0);
        let sigma = Array::from_fn(&[b, c], |i| 0.5 + i as f64 * 0.25);
        let out = adain_transfer(&f, &StyleStats::new(mu.clone(), sigma.clone()).unwrap()).unwrap();
        let got = compute_style_stats(&out).unwrap();
        prop_assert!(got.mu.max_abs_diff(&mu) < 1e-5);
        prop_assert!(got.sigma.max_abs_diff(&sigma) < 1e-5);
    }
}
