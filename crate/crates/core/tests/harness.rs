//! End-to-end training and protocol checks on small synthetic data.

use earlybranch::data::{generate_synthetic, SyntheticConfig};
use earlybranch::data::DomainDataset;
use earlybranch::harness::{
    ablation_configs, hyperparameter_search, mean_std, run_leave_one_out, train, ExperimentConfig, Method,
    ResultTable, SearchSpace,
};
use earlybranch::network::NetworkConfig;
use earlybranch::style::AugmenterKind;
use std::sync::OnceLock;

fn small_data() -> &'static DomainDataset {
    static DATA: OnceLock<DomainDataset> = OnceLock::new();
    DATA.get_or_init(|| {
        generate_synthetic(&SyntheticConfig {
            samples_per_class: 20,
            height: 16,
            width: 16,
            ..SyntheticConfig::default()
        })
        .unwrap()
    })
}

fn full_data() -> &'static DomainDataset {
    static DATA: OnceLock<DomainDataset> = OnceLock::new();
    DATA.get_or_init(|| generate_synthetic(&SyntheticConfig::default()).unwrap())
}

fn tiny(steps: usize) -> ExperimentConfig {
    ExperimentConfig {
        steps,
        eval_interval: 10,
        batch_size: 16,
        network: NetworkConfig {
            channels: vec![4, 4, 4, 4],
            feature_dim: 8,
            ..NetworkConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

#[test]
fn zero_steps_selects_initialization() {
    let r = train(&tiny(0), small_data()).unwrap().result;
    assert_eq!(r.validation.len(), 1);
    assert_eq!(r.selected_step(), 0);
    assert_eq!(r.trained_samples, 0);
    assert!(r.test_acc < 0.3, "untrained accuracy {}", r.test_acc);
}

#[test]
fn same_seed_same_digest() {
    let c = tiny(20);
    let a = train(&c, small_data()).unwrap().result;
    let b = train(&c, small_data()).unwrap().result;
    assert_eq!(a.digest, b.digest);
    let other = train(&ExperimentConfig { seed: 1, ..c }, small_data()).unwrap().result;
    assert_ne!(a.digest, other.digest);
}

#[test]
fn no_test_domain_sample_is_trained_on() {
    for method in [Method::Erm, Method::ErmPlus, Method::Full] {
        let c = ExperimentConfig {
            method,
            target_domain: 3,
            ..tiny(30)
        };
        let r = train(&c, small_data()).unwrap().result;
        assert_eq!(r.test_samples_in_training, 0);
        assert_eq!(r.trained_samples, 30 * 16);
    }
}

#[test]
fn classification_loss_decreases() {
    for method in [Method::Erm, Method::Full] {
        let c = ExperimentConfig {
            method,
            learning_rate: 3e-3,
            ..tiny(150)
        };
        let r = train(&c, small_data()).unwrap().result;
        let first: f64 = r.loss_trace[..10].iter().map(|p| p.loss.cls).sum();
        let last: f64 = r.loss_trace[r.loss_trace.len() - 10..].iter().map(|p| p.loss.cls).sum();
        assert!(last < first, "{method}: {first} -> {last}");
    }
}

#[test]
fn erm_learns_the_training_domains() {
    // Regression bound from a one-off smoke run.
    let c = ExperimentConfig {
        method: Method::Erm,
        steps: 1000,
        eval_interval: 100,
        network: NetworkConfig {
            channels: vec![8, 8, 8, 8],
            ..NetworkConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let r = train(&c, full_data()).unwrap().result;
    assert!(r.val_acc > 0.9, "validation accuracy {}", r.val_acc);
}

#[test]
fn domains_are_learnably_distinct() {
    let data = full_data();
    let relabeled = data.with_labels(data.domains().to_vec()).unwrap();
    let c = ExperimentConfig {
        method: Method::Erm,
        steps: 300,
        eval_interval: 100,
        network: NetworkConfig {
            channels: vec![8, 8, 8, 8],
            ..NetworkConfig::default()
        },
        ..ExperimentConfig::default()
    };
    // Validation covers held-out samples of the five training domains.
    let r = train(&c, &relabeled).unwrap().result;
    assert!(r.val_acc > 0.8, "domain accuracy {}", r.val_acc);
}

#[test]
fn leave_one_out_counts_and_aggregates() {
    let study = run_leave_one_out(&tiny(2), small_data(), &[0, 1, 2, 3, 4, 5], &[0, 1, 2]).unwrap();
    assert_eq!(study.table.len(), 18);
    let summary = study.table.summary();
    assert_eq!(summary.cells.len(), 6);
    let means: Vec<f64> = summary.cells.iter().map(|c| c.mean).collect();
    assert_eq!(summary.methods[0].average, means.iter().sum::<f64>() / 6.0);
    for cell in &summary.cells {
        assert_eq!(cell.seeds, 3);
        let accs: Vec<f64> = study
            .table
            .rows
            .iter()
            .filter(|r| r.target_domain == cell.target_domain)
            .map(|r| r.test_acc)
            .collect();
        assert_eq!((cell.mean, cell.std), mean_std(&accs));
    }

    // Dropping a seed touches only that seed's rows.
    let mut kept = study.table.clone();
    kept.rows.retain(|r| r.seed != 2);
    let mut rebuilt = kept.clone();
    let redo = run_leave_one_out(&tiny(2), small_data(), &[0, 1, 2, 3, 4, 5], &[2]).unwrap();
    rebuilt.merge(redo.table);
    assert_eq!(rebuilt.rows_digest(), study.table.rows_digest());
    assert_eq!(kept.len(), 12);
}

#[test]
fn ablation_disables_augmentation() {
    let base = ExperimentConfig {
        augmenter: AugmenterKind::Rds,
        ..tiny(1)
    };
    let cs = ablation_configs(&base, &[0, 4], &[1], &[0, 1, 2]).unwrap();
    assert_eq!(cs.len(), 6);
    assert!(cs.iter().all(|c| c.augmenter == AugmenterKind::None));
}

#[test]
fn search_never_reads_test_labels() {
    let data = small_data();
    let base = ExperimentConfig {
        target_domain: 2,
        ..tiny(15)
    };
    let mut labels = data.labels().to_vec();
    for (i, l) in labels.iter_mut().enumerate() {
        if data.domains()[i] == 2 {
            *l = (*l + 3) % data.num_classes();
        }
    }
    let scrambled = data.with_labels(labels).unwrap();
    let space = SearchSpace::default();
    let a = hyperparameter_search(&base, data, &space, 3, 9).unwrap();
    let b = hyperparameter_search(&base, &scrambled, &space, 3, 9).unwrap();
    assert_eq!(a.best_index, b.best_index);
    assert_eq!(a.best, b.best);
    let va: Vec<f64> = a.study.trials.iter().map(|t| t.val_acc).collect();
    let vb: Vec<f64> = b.study.trials.iter().map(|t| t.val_acc).collect();
    assert_eq!(va, vb);

    let one = hyperparameter_search(&base, data, &space, 1, 9).unwrap();
    assert_eq!(one.best_index, 0);
}

#[test]
fn rows_round_trip_through_csv() {
    let study = run_leave_one_out(&tiny(2), small_data(), &[1], &[0, 1]).unwrap();
    let mut buf = Vec::new();
    study.table.write_csv(&mut buf).unwrap();
    let back = ResultTable::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back.rows_digest(), study.table.rows_digest());
}
