//! Train briefly, save every checkpoint to disk, then reload the pruned
//! selected model and evaluate it on the held-out domain.
//!
//! cargo run --release --example checkpoint -- [out_dir]

use earlybranch::data::{generate_synthetic, SyntheticConfig};
use earlybranch::harness::{evaluate, train_with, ExperimentConfig, TrainOptions};
use earlybranch::network::{InferenceModel, NetworkConfig};
use earlybranch::objectives::LossWeights;
use std::path::PathBuf;

fn main() -> earlybranch::Result<()> {
    let dir: PathBuf = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("earlybranch-ckpt"), PathBuf::from);
    let data = generate_synthetic(&SyntheticConfig {
        samples_per_class: 40,
        ..SyntheticConfig::default()
    })?;
    let cfg = ExperimentConfig {
        steps: 300,
        eval_interval: 100,
        target_domain: 2,
        network: NetworkConfig {
            channels: vec![8; 4],
            ..NetworkConfig::default()
        },
        loss: LossWeights {
            beta: 0.1,
            ..LossWeights::default()
        },
        ..ExperimentConfig::default()
    };
    let opts = TrainOptions {
        checkpoint_dir: Some(dir.clone()),
        log_every: None,
    };
    let out = train_with(&cfg, &data, &opts)?;
    let mut files: Vec<_> = std::fs::read_dir(&dir)
        .map_err(|e| earlybranch::Error::Io { path: dir.clone(), source: e })?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect();
    files.sort();
    println!("{}: {}", dir.display(), files.join(" "));

    let pruned = InferenceModel::load(out.network.config().clone(), &dir.join("selected.pruned.ceb1"))?;
    let acc = evaluate(&pruned, &data, &out.partition.test, cfg.eval_chunk)?;
    println!(
        "selected step {}: recorded test {:.3}, reloaded test {:.3}",
        out.result.selected_step(),
        out.result.test_acc,
        acc
    );
    assert_eq!(acc, out.result.test_acc);
    Ok(())
}
