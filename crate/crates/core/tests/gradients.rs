//! Finite-difference checks for every graph operation and the composed
//! training objective.

mod common;

use common::*;
use earlybranch::autodiff::{Graph, ParamStore, Var};
use earlybranch::gradcheck::{check_gradients, GradCheckReport};
use earlybranch::independence::{penalty_graph, IndependenceKind};
use earlybranch::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn assert_op(name: &str, shapes: impl Fn(&mut ChaCha8Rng) -> Vec<Vec<usize>>, op: impl Fn(&mut Graph, &[Var]) -> Result<Var> + Copy) {
    let mut total = GradCheckReport::default();
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let s = shapes(&mut rng);
        total.merge(check_op(seed, &s, op));
    }
    assert!(total.checked > 0, "{name}: nothing checked");
    assert!(
        total.max_rel_error < TOL,
        "{name}: max relative error {} at {:?}",
        total.max_rel_error,
        total.worst
    );
}

fn dims(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

#[test]
fn matmul_and_transpose() {
    assert_op("matmul", |r| {
        let (m, k, n) = (dims(r, 1, 4), dims(r, 1, 4), dims(r, 1, 4));
        vec![vec![m, k], vec![k, n]]
    }, |g, v| g.matmul(v[0], v[1]));
    assert_op("transpose", |r| vec![vec![dims(r, 1, 5), dims(r, 1, 5)]], |g, v| g.transpose(v[0]));
}

#[test]
fn affine() {
    assert_op("affine", |r| {
        let (b, i, o) = (dims(r, 1, 5), dims(r, 1, 4), dims(r, 1, 4));
        vec![vec![b, i], vec![i, o], vec![o]]
    }, |g, v| g.affine(v[0], v[1], v[2]));
}

#[test]
fn conv3x3() {
    assert_op("conv3x3", |r| {
        let (b, ci, co, h, w) = (dims(r, 1, 2), dims(r, 1, 3), dims(r, 1, 3), dims(r, 1, 5), dims(r, 1, 5));
        vec![vec![b, ci, h, w], vec![co, ci, 3, 3], vec![co]]
    }, |g, v| g.conv3x3(v[0], v[1], v[2]));
}

#[test]
fn pointwise_and_pooling() {
    let map = |r: &mut ChaCha8Rng| vec![vec![dims(r, 1, 2), dims(r, 1, 3), 2 * dims(r, 1, 3), 2 * dims(r, 1, 3)]];
    assert_op("relu", map, |g, v| Ok(g.relu(v[0])));
    assert_op("max_pool2", map, |g, v| g.max_pool2(v[0]));
    assert_op("global_avg_pool", map, |g, v| g.global_avg_pool(v[0]));
    assert_op("channel_mean", map, |g, v| g.channel_mean(v[0]));
    assert_op("channel_var", map, |g, v| g.channel_var(v[0]));
}

#[test]
fn elementwise() {
    let pair = |r: &mut ChaCha8Rng| {
        let s = vec![dims(r, 1, 4), dims(r, 1, 4)];
        vec![s.clone(), s]
    };
    assert_op("add", pair, |g, v| g.add(v[0], v[1]));
    assert_op("sub", pair, |g, v| g.sub(v[0], v[1]));
    assert_op("mul", pair, |g, v| g.mul(v[0], v[1]));
    assert_op("scale", pair, |g, v| Ok(g.scale(v[0], -1.7)));
    assert_op("add_scalar", pair, |g, v| Ok(g.add_scalar(v[0], 0.3)));
    assert_op("l1_rows", pair, |g, v| g.l1_rows(v[0], v[1]));
}

#[test]
fn reductions_and_normalization() {
    let mat = |r: &mut ChaCha8Rng| vec![vec![dims(r, 2, 6), dims(r, 1, 5)]];
    assert_op("sum", mat, |g, v| Ok(g.sum(v[0])));
    assert_op("mean", mat, |g, v| g.mean(v[0]));
    assert_op("row_normalize", mat, |g, v| g.row_normalize(v[0]));
    assert_op("standardize_columns", mat, |g, v| g.standardize_columns(v[0], 1e-8));
    assert_op("trace", |r| {
        let n = dims(r, 1, 5);
        vec![vec![n, n]]
    }, |g, v| g.trace(v[0]));
}

#[test]
fn softmax_cross_entropy() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (b, c) = (dims(&mut rng, 1, 6), dims(&mut rng, 2, 5));
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();
        let r = check_op(seed, &[vec![b, c]], |g, v| g.softmax_cross_entropy(v[0], &labels));
        assert!(r.max_rel_error < TOL, "softmax_ce: {:?}", r.worst);
    }
}

#[test]
fn restyle() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (b, c) = (dims(&mut rng, 1, 3), dims(&mut rng, 1, 3));
        let mu = rand_array(&mut rng, &[b, c]);
        let sigma = rand_array(&mut rng, &[b, c]).map(|v| v.abs() + 0.1);
        let r = check_op(seed, &[vec![b, c, 3, 4]], |g, v| g.restyle(v[0], &mu, &sigma));
        assert!(r.max_rel_error < TOL, "restyle: {:?}", r.worst);
    }
}

#[test]
fn independence_penalties() {
    for kind in [IndependenceKind::Hsic, IndependenceKind::Orthogonal, IndependenceKind::Correlation] {
        assert_op(&kind.to_string(), |r| {
            let b = dims(r, 2, 8);
            vec![vec![b, dims(r, 1, 5)], vec![b, dims(r, 1, 5)]]
        }, move |g, v| penalty_graph(g, kind, v[0], v[1]));
    }
}

#[test]
fn two_layer_net_tight() {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let w1 = store.add("w1", rand_array(&mut rng, &[4, 5])).unwrap();
        let b1 = store.add("b1", rand_array(&mut rng, &[5])).unwrap();
        let w2 = store.add("w2", rand_array(&mut rng, &[5, 3])).unwrap();
        let b2 = store.add("b2", rand_array(&mut rng, &[3])).unwrap();
        let x = rand_array(&mut rng, &[6, 4]);
        let y: Vec<usize> = (0..6).map(|_| rng.random_range(0..3)).collect();
        let forward = |s: &ParamStore, grads: bool| {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let (a, ab, c, cb) = (g.param(s, w1), g.param(s, b1), g.param(s, w2), g.param(s, b2));
            let h = g.affine(xv, a, ab).unwrap();
            let h = g.relu(h);
            let o = g.affine(h, c, cb).unwrap();
            let l = g.softmax_cross_entropy(o, &y).unwrap();
            (g.value(l).item(), grads.then(|| g.backward(l).unwrap()))
        };
        let grads = forward(&store, true).1.unwrap();
        let r = check_gradients(&store, &grads, None, 1e-4, &mut rng, |s| Ok(forward(s, false).0)).unwrap();
        worst = worst.max(r.max_rel_error);
    }
    assert!(worst < 1e-6, "two-layer net: {worst}");
}

#[test]
fn backward_is_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let id = store.add("p", rand_array(&mut rng, &[5, 4])).unwrap();
    let grad_of = |which: u8| {
        let mut g = Graph::new();
        let p = g.param(&store, id);
        let n = g.row_normalize(p).unwrap();
        let l1 = g.sum(n);
        let sq = g.mul(p, p).unwrap();
        let l2 = g.mean(sq).unwrap();
        let loss = match which {
            0 => l1,
            1 => l2,
            _ => g.add(l1, l2).unwrap(),
        };
        g.backward(loss).unwrap().get(id).unwrap().clone()
    };
    let (a, b, ab) = (grad_of(0), grad_of(1), grad_of(2));
    for i in 0..ab.len() {
        assert!((ab.data()[i] - a.data()[i] - b.data()[i]).abs() < 1e-12);
    }
}

#[test]
fn full_objective_matches_finite_differences() {
    let mut total = GradCheckReport::default();
    for seed in 0..SEEDS {
        total.merge(full_objective_report(seed));
    }
    assert!(total.checked > 500, "checked only {}", total.checked);
    assert!(total.max_rel_error < TOL, "{:?}", total.worst);
}

