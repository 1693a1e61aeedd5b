use std::path::PathBuf;
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method};
use super::eval::evaluate;
use crate::autodiff::{Graph, Optimizer};
use crate::data::{leave_one_out_partition, sha256_hex, DomainDataset, Partition};
use crate::error::{Error, Result};
use crate::network::{build_network, BranchingNetwork};
use crate::objectives::{total_loss, LossBreakdown};

/// Validation accuracy of one checkpoint. Deliberately carries no test
/// information so selection cannot depend on it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub step: usize,
    pub val_acc: f64,
}

/// Index of the best validation accuracy; ties go to the earliest.
pub fn select_checkpoint(records: &[ValidationRecord]) -> Result<usize> {
    if records.is_empty() {
        return Err(Error::invalid("no checkpoints to select from"));
    }
    let mut best = 0;
    for (i, r) in records.iter().enumerate() {
        if r.val_acc > records[best].val_acc {
            best = i;
        }
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainAccuracy {
    pub domain: usize,
    pub split: String,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub label: String,
    pub method: Method,
    pub branch_point: usize,
    pub target_domain: usize,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub config_digest: String,
    pub validation: Vec<ValidationRecord>,
    pub selected: usize,
    pub val_acc: f64,
    pub test_acc: f64,
    pub per_domain: Vec<DomainAccuracy>,
    pub loss_trace: Vec<LossPoint>,
    /// Test-domain samples found in training minibatches; always zero for
    /// a completed run.
    pub test_samples_in_training: usize,
    pub trained_samples: usize,
    pub wall_time_s: f64,
    /// Hash of every field except this one and `wall_time_s`.
    pub digest: String,
}

impl TrialResult {
    pub fn selected_step(&self) -> usize {
        self.validation[self.selected].step
    }

    /// File stem used for per-trial artifacts.
    pub fn trial_id(&self) -> String {
        format!("{}_k{}_d{}_s{}", self.label, self.branch_point, self.target_domain, self.seed)
    }

    fn compute_digest(&self) -> String {
        let mut c = self.clone();
        c.digest = String::new();
        c.wall_time_s = 0.0;
        sha256_hex(&serde_json::to_vec(&c).expect("serializable"))
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Write every checkpoint and the pruned selected model here.
    pub checkpoint_dir: Option<PathBuf>,
    /// Log progress at info level every this many steps.
    pub log_every: Option<usize>,
}

pub struct TrainOutcome {
    pub result: TrialResult,
    /// The network restored to the selected checkpoint.
    pub network: BranchingNetwork,
    pub partition: Partition,
}

pub fn train(config: &ExperimentConfig, dataset: &DomainDataset) -> Result<TrainOutcome> {
    train_with(config, dataset, &TrainOptions::default())
}

pub fn train_with(config: &ExperimentConfig, dataset: &DomainDataset, opts: &TrainOptions) -> Result<TrainOutcome> {
    let start = Instant::now();
    let plan = config.plan(dataset)?;
    let partition = leave_one_out_partition(dataset, config.target_domain, config.val_fraction, config.seed)?;
    if partition.train.len() < config.batch_size {
        return Err(Error::Config(format!(
            "batch_size {} exceeds the {} training samples",
            config.batch_size,
            partition.train.len()
        )));
    }
    let stream = |s: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(config.seed);
        r.set_stream(s);
        r
    };
    let (mut init_rng, mut batch_rng, mut aug_rng) = (stream(0), stream(1), stream(2));
    let mut net = build_network(&plan.network, &mut init_rng)?;
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate, net.params())?;
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut validation = Vec::new();
    let mut snapshots = Vec::new();
    let mut checkpoint = |step: usize, net: &BranchingNetwork| -> Result<()> {
        let val_acc = evaluate(&net.inference_model(), dataset, &partition.val, config.eval_chunk)?;
        log::debug!("{} step {step}: val_acc={val_acc:.4}", config.label());
        validation.push(ValidationRecord { step, val_acc });
        snapshots.push(net.params().snapshot());
        if let Some(dir) = &opts.checkpoint_dir {
            net.save(&dir.join(format!("step-{step:06}.ceb1")))?;
        }
        Ok(())
    };
    checkpoint(0, &net)?;

    let mut trace = Vec::with_capacity(config.steps);
    let mut test_seen = 0;
    for step in 0..config.steps {
        let idx: Vec<usize> = sample(&mut batch_rng, partition.train.len(), config.batch_size)
            .into_iter()
            .map(|i| partition.train[i])
            .collect();
        let batch = dataset.gather(&idx);
        test_seen += batch.domains.iter().filter(|&&d| d == config.target_domain).count();
        if test_seen > 0 {
            return Err(Error::invalid(format!("test-domain sample in training batch at step {step}")));
        }
        let mut g = Graph::new();
        let out = net.forward(&mut g, &batch.images, plan.augmenter.as_ref(), &mut aug_rng)?;
        let obj = total_loss(&mut g, &out, &batch.labels, &batch.domains, &plan.weights, None)?;
        if !obj.breakdown.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                breakdown: obj.breakdown.to_string(),
            });
        }
        let grads = g.backward(obj.total)?;
        opt.step(net.params_mut(), &grads)?;
        trace.push(LossPoint { step, loss: obj.breakdown });
        if opts.log_every.is_some_and(|n| (step + 1) % n == 0) {
            log::info!("{} step {}: {}", config.label(), step + 1, obj.breakdown);
        }
        if (step + 1) % config.eval_interval == 0 || step + 1 == config.steps {
            checkpoint(step + 1, &net)?;
        }
    }

    let selected = select_checkpoint(&validation)?;
    net.params_mut().restore(snapshots.swap_remove(selected))?;
    let model = net.inference_model();
    if let Some(dir) = &opts.checkpoint_dir {
        model.save(&dir.join("selected.pruned.ceb1"))?;
    }
    let test_acc = evaluate(&model, dataset, &partition.test, config.eval_chunk)?;
    let mut per_domain = vec![DomainAccuracy {
        domain: config.target_domain,
        split: "test".into(),
        accuracy: test_acc,
    }];
    for d in 0..dataset.num_domains() {
        let ids: Vec<usize> = partition.val.iter().copied().filter(|&i| dataset.domains()[i] == d).collect();
        if !ids.is_empty() {
            per_domain.push(DomainAccuracy {
                domain: d,
                split: "val".into(),
                accuracy: evaluate(&model, dataset, &ids, config.eval_chunk)?,
            });
        }
    }
    let mut result = TrialResult {
        label: config.label(),
        method: config.method,
        branch_point: plan.network.branch_point,
        target_domain: config.target_domain,
        seed: config.seed,
        alpha: plan.weights.alpha,
        beta: plan.weights.beta,
        learning_rate: config.learning_rate,
        config_digest: config.digest()?,
        val_acc: validation[selected].val_acc,
        validation,
        selected,
        test_acc,
        per_domain,
        loss_trace: trace,
        test_samples_in_training: test_seen,
        trained_samples: config.steps * config.batch_size,
        wall_time_s: 0.0,
        digest: String::new(),
    };
    result.digest = result.compute_digest();
    result.wall_time_s = start.elapsed().as_secs_f64();
    Ok(TrainOutcome {
        result,
        network: net,
        partition,
    })
}
