//! Shared helpers for the integration and acceptance targets.
#![allow(dead_code)]

use earlybranch::autodiff::{Gradients, Graph, ParamId, ParamStore, Var};
use earlybranch::gradcheck::{check_gradients, GradCheckReport};
use earlybranch::network::{build_network, NetworkConfig};
use earlybranch::objectives::{total_loss, LossWeights};
use earlybranch::style::StyleAugmenter;
use earlybranch::{Array, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SEEDS: u64 = 20;
pub const TOL: f64 = 1e-4;
pub const H: f64 = 1e-5;

pub fn rand_array(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array {
    Array::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Builds `loss = sum(op(inputs) * r)` for a fixed random `r`, then compares
/// its gradient against central differences on every input coordinate.
pub fn check_op(
    seed: u64,
    shapes: &[Vec<usize>],
    op: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| store.add(format!("in{i}"), rand_array(&mut rng, s)).unwrap())
        .collect();
    let mut weights: Option<Array> = None;
    let mut eval = |store: &ParamStore, grads: bool| -> Result<(f64, Option<Gradients>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ids.iter().map(|&id| g.param(store, id)).collect();
        let y = op(&mut g, &vars)?;
        let r = weights
            .get_or_insert_with(|| {
                let mut wr = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
                rand_array(&mut wr, g.shape(y))
            })
            .clone();
        let rv = g.constant(r);
        let prod = g.mul(y, rv)?;
        let loss = g.sum(prod);
        let value = g.value(loss).item();
        Ok((value, grads.then(|| g.backward(loss)).transpose()?))
    };
    let (_, grads) = eval(&store, true).unwrap();
    let grads = grads.unwrap();
    check_gradients(&store, &grads, None, H, &mut rng, |s| eval(s, false).map(|v| v.0)).unwrap()
}

/// Full objective with RDS styles and the margin frozen after a first pass.
pub fn full_objective_report(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = NetworkConfig {
        branch_point: 1,
        channels: vec![3, 3, 4, 4],
        feature_dim: 5,
        num_classes: 3,
        num_domains: 2,
        input: [1, 8, 8],
        ..NetworkConfig::default()
    };
    let net = build_network(&cfg, &mut rng).unwrap();
    let b = 6;
    let x = Array::from_fn(&[b, 1, 8, 8], |_| rng.random_range(0.0..1.0));
    let y: Vec<usize> = (0..b).map(|i| i % 3).collect();
    let d: Vec<usize> = (0..b).map(|i| i % 2).collect();
    let weights = LossWeights {
        alpha: 0.3,
        beta: 1.0,
        ..LossWeights::default()
    };
    let rds = StyleAugmenter::Rds {
        epsilon: 1e-4,
        max_tries: 64,
    };
    let mut g = Graph::new();
    let out = net.forward(&mut g, &x, Some(&rds), &mut rng).unwrap();
    let frozen = StyleAugmenter::Fixed(out.augmented.as_ref().unwrap().style_targets.clone());
    let obj = total_loss(&mut g, &out, &y, &d, &weights, None).unwrap();
    // The argmax distance sits exactly on the hinge kink; shift off it.
    let margin = Some(obj.breakdown.margin_n + 0.05);
    let mut g = Graph::new();
    let out = net.forward(&mut g, &x, Some(&frozen), &mut rng).unwrap();
    let obj = total_loss(&mut g, &out, &y, &d, &weights, margin).unwrap();
    let grads = g.backward(obj.total).unwrap();
    check_gradients(net.params(), &grads, Some(6), H, &mut rng, |s| {
        let mut g = Graph::new();
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        let out = net.forward_with_store(&mut g, s, &x, Some(&frozen), &mut unused)?;
        Ok(total_loss(&mut g, &out, &y, &d, &weights, margin)?.breakdown.total)
    })
    .unwrap()
}

