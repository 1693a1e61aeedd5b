use crate::array::Array;
use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::network::InferenceModel;

/// Row-wise argmax; ties go to the lowest class id.
pub fn predict(logits: &Array) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy_from_logits(logits: &Array, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() || logits.rows() != labels.len() {
        return Err(Error::invalid(format!(
            "accuracy needs one logit row per label, got {} rows and {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    let hits = predict(logits).iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Accuracy of the pruned classifier on `indices`, evaluated in chunks.
pub fn evaluate(model: &InferenceModel, dataset: &DomainDataset, indices: &[usize], chunk: usize) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    let mut hits = 0;
    for part in indices.chunks(chunk.max(1)) {
        let batch = dataset.gather(part);
        let pred = predict(&model.logits(&batch.images)?);
        hits += pred.iter().zip(&batch.labels).filter(|(p, y)| p == y).count();
    }
    Ok(hits as f64 / indices.len() as f64)
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_hot_logits_are_perfect() {
        let y = [2, 0, 1, 1];
        let logits = Array::from_fn(&[4, 3], |k| if y[k / 3] == k % 3 { 1.0 } else { 0.0 });
        assert_eq!(accuracy_from_logits(&logits, &y).unwrap(), 1.0);
    }

    #[test]
    fn constant_logits_predict_class_zero() {
        let y = [0, 1, 0, 2, 0];
        let logits = Array::full(&[5, 3], 0.7);
        assert_eq!(accuracy_from_logits(&logits, &y).unwrap(), 0.6);
    }

    #[test]
    fn matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let n = rng.random_range(1..40);
            let logits = Array::from_fn(&[n, 4], |_| (rng.random_range(0..5) as f64) / 2.0);
            let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
            let mut hits = 0;
            for i in 0..n {
                let mut arg = 0;
                let mut best = f64::NEG_INFINITY;
                for c in 0..4 {
                    if logits.at(&[i, c]) > best {
                        best = logits.at(&[i, c]);
                        arg = c;
                    }
                }
                hits += usize::from(arg == y[i]);
            }
            assert_eq!(accuracy_from_logits(&logits, &y).unwrap(), hits as f64 / n as f64);
        }
        assert!(accuracy_from_logits(&Array::zeros(&[0, 3]), &[]).is_err());
    }
}
