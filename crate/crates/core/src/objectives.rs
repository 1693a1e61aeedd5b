//! Training objective: classification, cross-branch independence and
//! augmentation consistency terms.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::independence::{penalty_graph, IndependenceKind};
use crate::network::ForwardOutputs;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub independence_kind: IndependenceKind,
    /// L2-normalize rows before the consistency distances. Without it the
    /// inverse hinge can be lowered indefinitely by inflating the domain
    /// features.
    pub normalize_consistency: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            beta: 1.0,
            independence_kind: IndependenceKind::Hsic,
            normalize_consistency: true,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) || !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::invalid(format!(
                "loss weights must be finite and non-negative, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// Scalar values of every term for one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls: f64,
    pub indp: f64,
    pub cons: f64,
    pub cons_inverse: f64,
    pub total: f64,
    pub margin_n: f64,
}

impl LossBreakdown {
    /// `cls + alpha * indp + beta * (cons + cons_inverse)`, evaluated in
    /// the same order as the graph.
    pub fn compose(cls: f64, indp: f64, cons: f64, cons_inverse: f64, w: &LossWeights) -> f64 {
        cls + w.alpha * indp + w.beta * (cons + cons_inverse)
    }

    pub fn is_finite(&self) -> bool {
        [self.cls, self.indp, self.cons, self.cons_inverse, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

impl std::fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "cls={} indp={} cons={} cons_inverse={} total={} n={}",
            self.cls, self.indp, self.cons, self.cons_inverse, self.total, self.margin_n
        )
    }
}

/// Graph handle of the total loss together with its value breakdown.
#[derive(Clone, Copy, Debug)]
pub struct Objective {
    pub total: Var,
    pub breakdown: LossBreakdown,
}

/// Class cross-entropy on both streams plus domain cross-entropy on the
/// original stream. Absent streams or heads are skipped.
pub fn classification_loss(g: &mut Graph, out: &ForwardOutputs, y: &[usize], d: &[usize]) -> Result<Var> {
    let mut loss = g.softmax_cross_entropy(out.logits_o, y)?;
    if let Some(aug) = &out.augmented {
        let t = g.softmax_cross_entropy(aug.logits_o_aug, y)?;
        loss = g.add(loss, t)?;
    }
    if let Some(ld) = out.logits_d {
        let t = g.softmax_cross_entropy(ld, d)?;
        loss = g.add(loss, t)?;
    }
    Ok(loss)
}

/// Sum of the penalty over every (causal stream, domain stream) pair.
pub fn independence_loss(g: &mut Graph, out: &ForwardOutputs, kind: IndependenceKind) -> Result<Var> {
    let feat_d = out
        .feat_d
        .ok_or_else(|| Error::invalid("independence loss needs the domain branch"))?;
    let mut os = vec![out.feat_o];
    let mut ds = vec![feat_d];
    if let Some(aug) = &out.augmented {
        os.push(aug.feat_o_aug);
        ds.extend(aug.feat_d_aug);
    }
    let mut total: Option<Var> = None;
    for &o in &os {
        for &dv in &ds {
            let t = penalty_graph(g, kind, o, dv)?;
            total = Some(match total {
                None => t,
                Some(acc) => g.add(acc, t)?,
            });
        }
    }
    Ok(total.expect("at least one pair"))
}

#[derive(Clone, Copy, Debug)]
pub struct Consistency {
    pub cons: Var,
    pub cons_inverse: Var,
    pub margin_n: f64,
}

/// Consistency between original and augmented features through the causal
/// projector, and the inverse hinge on the domain branch. `margin` fixes
/// `n` instead of taking the batch maximum; `n` never carries gradient.
/// With `normalize`, every row is scaled to unit L2 norm first.
pub fn consistency_loss(
    g: &mut Graph,
    out: &ForwardOutputs,
    margin: Option<f64>,
    normalize: bool,
) -> Result<Consistency> {
    let aug = out
        .augmented
        .as_ref()
        .ok_or_else(|| Error::invalid("consistency loss needs the augmented stream"))?;
    let missing = || Error::invalid("consistency loss needs both branches and projectors");
    let (po, poa) = (aug.proj_o.ok_or_else(missing)?, aug.proj_o_aug.ok_or_else(missing)?);
    let fd = out.feat_d.ok_or_else(missing)?;
    let fda = aug.feat_d_aug.ok_or_else(missing)?;
    let (pd, pda) = (aug.proj_d.ok_or_else(missing)?, aug.proj_d_aug.ok_or_else(missing)?);
    let mut prep = |v: Var| if normalize { g.row_normalize(v) } else { Ok(v) };
    let [fo, foa, po, poa, fd, fda, pd, pda] =
        [out.feat_o, aug.feat_o_aug, po, poa, fd, fda, pd, pda].map(&mut prep);
    let [fo, foa, po, poa, fd, fda, pd, pda] = [fo?, foa?, po?, poa?, fd?, fda?, pd?, pda?];

    let a = g.l1_rows(fo, poa)?;
    let b = g.l1_rows(po, foa)?;
    let ab = g.add(a, b)?;
    let cons = g.mean(ab)?;

    let d1 = g.l1_rows(fd, pda)?;
    let d2 = g.l1_rows(pd, fda)?;
    let n = margin.unwrap_or_else(|| {
        g.value(d1)
            .data()
            .iter()
            .chain(g.value(d2).data())
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    });
    // relu(n - d) == -min(d - n, 0)
    let mut hinge = |d: Var| {
        let neg = g.scale(d, -1.0);
        let shifted = g.add_scalar(neg, n);
        g.relu(shifted)
    };
    let h1 = hinge(d1);
    let h2 = hinge(d2);
    let h = g.add(h1, h2)?;
    let cons_inverse = g.mean(h)?;
    Ok(Consistency {
        cons,
        cons_inverse,
        margin_n: n,
    })
}

/// Full objective. The independence term is included when the domain
/// branch exists; the consistency group when the augmented stream and
/// projectors exist. Missing terms report as zero.
pub fn total_loss(
    g: &mut Graph,
    out: &ForwardOutputs,
    y: &[usize],
    d: &[usize],
    weights: &LossWeights,
    margin: Option<f64>,
) -> Result<Objective> {
    weights.validate()?;
    let cls = classification_loss(g, out, y, d)?;
    let mut total = cls;
    let mut bd = LossBreakdown {
        cls: g.value(cls).item(),
        ..LossBreakdown::default()
    };
    if out.feat_d.is_some() {
        let indp = independence_loss(g, out, weights.independence_kind)?;
        bd.indp = g.value(indp).item();
        let t = g.scale(indp, weights.alpha);
        total = g.add(total, t)?;
    }
    let has_projectors = out
        .augmented
        .as_ref()
        .is_some_and(|a| a.proj_o.is_some() && a.proj_d.is_some());
    if has_projectors {
        let c = consistency_loss(g, out, margin, weights.normalize_consistency)?;
        bd.cons = g.value(c.cons).item();
        bd.cons_inverse = g.value(c.cons_inverse).item();
        bd.margin_n = c.margin_n;
        let group = g.add(c.cons, c.cons_inverse)?;
        let t = g.scale(group, weights.beta);
        total = g.add(total, t)?;
    }
    bd.total = g.value(total).item();
    Ok(Objective { total, breakdown: bd })
}

#[derive(Serialize)]
struct LossRecord {
    step: usize,
    cls: f64,
    indp: f64,
    cons: f64,
    cons_inverse: f64,
    total: f64,
    n: f64,
}

/// Writes `step,cls,indp,cons,cons_inverse,total,n` rows.
pub fn write_loss_trace<W: std::io::Write>(out: W, trace: &[(usize, LossBreakdown)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if trace.is_empty() {
        w.write_record(["step", "cls", "indp", "cons", "cons_inverse", "total", "n"])?;
    }
    for &(step, b) in trace {
        w.serialize(LossRecord {
            step,
            cls: b.cls,
            indp: b.indp,
            cons: b.cons,
            cons_inverse: b.cons_inverse,
            total: b.total,
            n: b.margin_n,
        })?;
    }
    w.flush().map_err(|e| Error::io("<loss trace>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::Array;
    use crate::independence::{hsic_linear, FeatureBatch};
    use crate::network::AugmentedOutputs;
    use crate::style::StyleStats;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Fake {
        feat_o: Array,
        feat_d: Array,
        feat_o_aug: Array,
        feat_d_aug: Array,
        proj: [Array; 4],
        logits: [Array; 3],
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Array {
        Array::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    impl Fake {
        fn random(b: usize, p: usize, rng: &mut ChaCha8Rng) -> Self {
            Self {
                feat_o: random(&[b, p], rng),
                feat_d: random(&[b, p], rng),
                feat_o_aug: random(&[b, p], rng),
                feat_d_aug: random(&[b, p], rng),
                proj: [0; 4].map(|_| random(&[b, p], rng)),
                logits: [random(&[b, 3], rng), random(&[b, 3], rng), random(&[b, 2], rng)],
            }
        }

        fn build(&self, g: &mut Graph, augmented: bool) -> ForwardOutputs {
            let b = self.feat_o.rows();
            let mut c = |a: &Array| g.constant(a.clone());
            let feat_o = c(&self.feat_o);
            let feat_d = Some(c(&self.feat_d));
            let logits_o = c(&self.logits[0]);
            let logits_d = Some(c(&self.logits[2]));
            let augmented = augmented.then(|| AugmentedOutputs {
                style_targets: StyleStats::new(Array::zeros(&[b, 1]), Array::ones(&[b, 1])).unwrap(),
                feat_o_aug: c(&self.feat_o_aug),
                logits_o_aug: c(&self.logits[1]),
                feat_d_aug: Some(c(&self.feat_d_aug)),
                proj_o: Some(c(&self.proj[0])),
                proj_o_aug: Some(c(&self.proj[1])),
                proj_d: Some(c(&self.proj[2])),
                proj_d_aug: Some(c(&self.proj[3])),
            });
            ForwardOutputs {
                trunk: feat_o,
                feat_o,
                logits_o,
                feat_d,
                logits_d,
                augmented,
            }
        }
    }

    fn fb(a: &Array) -> FeatureBatch {
        FeatureBatch::new(a.clone()).unwrap()
    }

    fn ce(logits: &Array, labels: &[usize]) -> f64 {
        let mut s = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = logits.row(i);
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            s += z.ln() - row[y];
        }
        s / labels.len() as f64
    }

    #[test]
    fn perfect_and_uniform_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut f = Fake::random(4, 3, &mut rng);
        let y = [0, 1, 2, 1];
        let d = [1, 0, 0, 1];
        let onehot = |labels: &[usize], c: usize| {
            Array::from_fn(&[4, c], |k| if labels[k / c] == k % c { 100.0 } else { 0.0 })
        };
        f.logits = [onehot(&y, 3), onehot(&y, 3), onehot(&d, 2)];
        let mut g = Graph::new();
        let out = f.build(&mut g, true);
        let l = classification_loss(&mut g, &out, &y, &d).unwrap();
        assert!(g.value(l).item() < 1e-8);

        f.logits = [Array::zeros(&[4, 3]), Array::zeros(&[4, 3]), Array::zeros(&[4, 2])];
        let mut g = Graph::new();
        let out = f.build(&mut g, true);
        let l = classification_loss(&mut g, &out, &y, &d).unwrap();
        let want = 2.0 * 3f64.ln() + 2f64.ln();
        assert!((g.value(l).item() - want).abs() < 1e-12);

        let mut g = Graph::new();
        let out = f.build(&mut g, false);
        assert!(classification_loss(&mut g, &out, &[0, 1, 3, 0], &d).is_err());
    }

    #[test]
    fn classification_without_augmentation_is_two_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = Fake::random(5, 4, &mut rng);
        let y = [0, 2, 1, 1, 0];
        let d = [0, 1, 1, 0, 1];
        let mut g = Graph::new();
        let out = f.build(&mut g, false);
        let l = classification_loss(&mut g, &out, &y, &d).unwrap();
        let want = ce(&f.logits[0], &y) + ce(&f.logits[2], &d);
        assert!((g.value(l).item() - want).abs() < 1e-12);
    }

    #[test]
    fn independence_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut f = Fake::random(6, 4, &mut rng);
        let mut g = Graph::new();
        let out = f.build(&mut g, false);
        let v = independence_loss(&mut g, &out, IndependenceKind::Hsic).unwrap();
        assert_eq!(g.value(v).item(), hsic_linear(&fb(&f.feat_o), &fb(&f.feat_d)).unwrap());

        let mut g = Graph::new();
        let out = f.build(&mut g, true);
        let v = independence_loss(&mut g, &out, IndependenceKind::Hsic).unwrap();
        let mut want = 0.0;
        for o in [&f.feat_o, &f.feat_o_aug] {
            for d in [&f.feat_d, &f.feat_d_aug] {
                want += hsic_linear(&fb(o), &fb(d)).unwrap();
            }
        }
        assert!((g.value(v).item() - want).abs() < 1e-12);

        let row = [0.3, -0.2, 0.5, 0.1];
        f.feat_d = Array::from_fn(&[6, 4], |k| row[k % 4]);
        f.feat_d_aug = f.feat_d.clone();
        let mut g = Graph::new();
        let out = f.build(&mut g, true);
        let v = independence_loss(&mut g, &out, IndependenceKind::Hsic).unwrap();
        assert!(g.value(v).item().abs() < 1e-9);

        let one = Fake::random(1, 4, &mut rng);
        let mut g = Graph::new();
        let out = one.build(&mut g, false);
        assert!(independence_loss(&mut g, &out, IndependenceKind::Hsic).is_err());
    }

    #[test]
    fn degenerate_consistency_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut f = Fake::random(4, 3, &mut rng);
        f.feat_o_aug = f.feat_o.clone();
        f.feat_d_aug = f.feat_d.clone();
        f.proj = [f.feat_o.clone(), f.feat_o.clone(), f.feat_d.clone(), f.feat_d.clone()];
        let mut g = Graph::new();
        let out = f.build(&mut g, true);
        let c = consistency_loss(&mut g, &out, None, false).unwrap();
        assert_eq!(g.value(c.cons).item(), 0.0);
        assert_eq!(g.value(c.cons_inverse).item(), 0.0);
        assert_eq!(c.margin_n, 0.0);

        let mut g = Graph::new();
        let out = f.build(&mut g, false);
        assert!(consistency_loss(&mut g, &out, None, false).is_err());
    }

    #[test]
    fn inverse_hinge_hand_example() {
        // Domain distances: sample 0 has d1=1, d2=3; sample 1 has d1=2, d2=3.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut f = Fake::random(2, 1, &mut rng);
        f.feat_d = Array::from_rows(&[vec![0.0], vec![0.0]]);
        f.proj[3] = Array::from_rows(&[vec![1.0], vec![2.0]]);
        f.proj[2] = Array::from_rows(&[vec![3.0], vec![3.0]]);
        f.feat_d_aug = Array::from_rows(&[vec![0.0], vec![0.0]]);
        let mut g = Graph::new();
        let out = f.build(&mut g, true);
        let c = consistency_loss(&mut g, &out, None, false).unwrap();
        assert_eq!(c.margin_n, 3.0);
        assert_eq!(g.value(c.cons_inverse).item(), 1.5);
    }

    #[test]
    fn max_sample_contributes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut f = Fake::random(3, 2, &mut rng);
        // Only sample 2 is non-trivial and it attains the maximum for both distances.
        f.feat_d = Array::zeros(&[3, 2]);
        f.feat_d_aug = Array::zeros(&[3, 2]);
        f.proj[2] = Array::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 1.0]]);
        f.proj[3] = f.proj[2].clone();
        let mut g = Graph::new();
        let out = f.build(&mut g, true);
        let c = consistency_loss(&mut g, &out, None, false).unwrap();
        assert_eq!(c.margin_n, 2.0);
        // Samples 0 and 1 contribute 2 + 2 each; sample 2 contributes 0.
        assert!((g.value(c.cons_inverse).item() - 8.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn composition_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let y = [0, 1, 2, 0];
        let d = [0, 1, 0, 1];
        for (alpha, beta) in [(0.0, 0.0), (0.3, 1.0), (0.1, 0.03)] {
            let f = Fake::random(4, 3, &mut rng);
            let w = LossWeights {
                alpha,
                beta,
                ..LossWeights::default()
            };
            let mut g = Graph::new();
            let out = f.build(&mut g, true);
            let obj = total_loss(&mut g, &out, &y, &d, &w, None).unwrap();
            let b = obj.breakdown;
            let want = LossBreakdown::compose(b.cls, b.indp, b.cons, b.cons_inverse, &w);
            assert!((b.total - want).abs() <= 1e-15 * want.abs().max(1.0));
            if alpha == 0.0 && beta == 0.0 {
                assert_eq!(b.total, b.cls);
            }
            assert!(b.cons >= 0.0 && b.cons_inverse >= 0.0);
        }
        let bad = LossWeights {
            alpha: -1.0,
            ..LossWeights::default()
        };
        let f = Fake::random(4, 3, &mut rng);
        let mut g = Graph::new();
        let out = f.build(&mut g, true);
        assert!(total_loss(&mut g, &out, &y, &d, &bad, None).is_err());
    }

    #[test]
    fn loss_trace_csv() {
        let b = LossBreakdown {
            cls: 1.0,
            indp: 0.5,
            cons: 0.25,
            cons_inverse: 0.0,
            total: 1.4,
            margin_n: 2.0,
        };
        let mut buf = Vec::new();
        write_loss_trace(&mut buf, &[(0, b), (50, b)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "step,cls,indp,cons,cons_inverse,total,n");
        assert_eq!(lines[2], "50,1.0,0.5,0.25,0.0,1.4,2.0");
    }
}
