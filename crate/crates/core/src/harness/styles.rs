use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use crate::autodiff::Graph;
use crate::data::{leave_one_out_partition, DomainDataset};
use crate::error::{Error, Result};
use crate::network::{build_network, BranchingNetwork};
use crate::style::{compute_style_stats, AugmenterKind, StyleAugmenter, StyleStats};

pub const DUMP_AUGMENTERS: [AugmenterKind; 3] = [AugmenterKind::Rds, AugmenterKind::MixStyle, AugmenterKind::Dsu];

/// Original and augmented trunk styles of one training batch for each
/// augmenter, as `(augmenter, original, sampled)`. Uses `network` when
/// given, otherwise a fresh initialization from the config seed.
pub fn collect_style_dump(
    config: &ExperimentConfig,
    dataset: &DomainDataset,
    network: Option<&BranchingNetwork>,
) -> Result<Vec<(String, StyleStats, StyleStats)>> {
    let plan = config.plan(dataset)?;
    let fresh;
    let net = match network {
        Some(n) => n,
        None => {
            fresh = build_network(&plan.network, &mut ChaCha8Rng::seed_from_u64(config.seed))?;
            &fresh
        }
    };
    let part = leave_one_out_partition(dataset, config.target_domain, config.val_fraction, config.seed)?;
    if part.train.len() < config.batch_size {
        return Err(Error::Config("batch_size exceeds the training split".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(3);
    let idx: Vec<usize> = sample(&mut rng, part.train.len(), config.batch_size)
        .into_iter()
        .map(|i| part.train[i])
        .collect();
    let batch = dataset.gather(&idx);
    let mut g = Graph::new();
    let out = net.forward(&mut g, &batch.images, None, &mut rng)?;
    let z = g.value(out.trunk);
    let original = compute_style_stats(z)?;
    DUMP_AUGMENTERS
        .iter()
        .map(|&kind| {
            let aug = StyleAugmenter::from_kind(kind, config.rds_epsilon, config.mixstyle_omega)
                .expect("dump augmenters are not none");
            Ok((kind.to_string(), original.clone(), aug.targets(z, &mut rng)?))
        })
        .collect()
}
