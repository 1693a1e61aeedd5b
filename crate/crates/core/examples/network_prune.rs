//! Build the dual-branch network at every branch point, run a forward pass
//! and prune it to the inference path.
//!
//! cargo run --release --example network_prune

use earlybranch::autodiff::Graph;
use earlybranch::network::{build_network, Architecture, InferenceModel, NetworkConfig};
use earlybranch::Array;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> earlybranch::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Array::from_fn(&[4, 1, 28, 28], |_| rng.random_range(0.0..1.0));
    let dir = std::env::temp_dir().join("earlybranch-prune-example");
    std::fs::create_dir_all(&dir).map_err(|e| earlybranch::Error::Io {
        path: dir.clone(),
        source: e,
    })?;

    println!("{:<14} {:>8} {:>10} {:>10}", "network", "params", "inference", "identical");
    let mut configs: Vec<(String, NetworkConfig)> = (0..=4)
        .map(|k| {
            (
                format!("k={k}"),
                NetworkConfig {
                    branch_point: k,
                    ..NetworkConfig::default()
                },
            )
        })
        .collect();
    configs.push((
        "single-branch".into(),
        NetworkConfig {
            architecture: Architecture::SingleBranch,
            ..NetworkConfig::default()
        },
    ));
    for (name, cfg) in configs {
        let net = build_network(&cfg, &mut rng)?;
        let mut g = Graph::new();
        let out = net.forward(&mut g, &x, None, &mut rng)?;
        let full = g.value(out.logits_o).clone();

        let path = dir.join("model.ceb1");
        net.inference_model().save(&path)?;
        let pruned = InferenceModel::load(cfg.clone(), &path)?;
        let logits = pruned.logits(&x)?;
        let same = full.data().iter().zip(logits.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        println!("{:<14} {:>8} {:>10} {:>10}", name, net.num_params(), pruned.params().num_scalars(), same);
    }
    Ok(())
}
