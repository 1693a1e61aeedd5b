use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::results::ResultTable;
use super::train::{train, TrialResult};
use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::style::AugmenterKind;

/// Rows plus the full per-trial records.
#[derive(Clone, Debug)]
pub struct Study {
    pub table: ResultTable,
    pub trials: Vec<TrialResult>,
}

/// Trains every config in parallel; results come back in input order.
pub fn run_trials(configs: &[ExperimentConfig], dataset: &DomainDataset) -> Result<Study> {
    let trials = configs
        .par_iter()
        .map(|c| train(c, dataset).map(|o| o.result))
        .collect::<Result<Vec<_>>>()?;
    Ok(Study {
        table: ResultTable::from_trials(&trials),
        trials,
    })
}

/// One config per `(target domain, seed)`.
pub fn leave_one_out_configs(base: &ExperimentConfig, domains: &[usize], seeds: &[u64]) -> Vec<ExperimentConfig> {
    let mut out = Vec::with_capacity(domains.len() * seeds.len());
    for &d in domains {
        for &s in seeds {
            out.push(ExperimentConfig {
                target_domain: d,
                seed: s,
                ..base.clone()
            });
        }
    }
    out
}

pub fn run_leave_one_out(
    base: &ExperimentConfig,
    dataset: &DomainDataset,
    domains: &[usize],
    seeds: &[u64],
) -> Result<Study> {
    if dataset.num_domains() < 2 {
        return Err(Error::invalid("leave-one-out needs at least two domains"));
    }
    if domains.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("need at least one target domain and one seed"));
    }
    run_trials(&leave_one_out_configs(base, domains, seeds), dataset)
}

/// Leave-one-out configs for each branch point with augmentation off.
pub fn ablation_configs(base: &ExperimentConfig, ks: &[usize], domains: &[usize], seeds: &[u64]) -> Result<Vec<ExperimentConfig>> {
    let mut out = Vec::new();
    for &k in ks {
        let mut c = base.clone();
        c.network.branch_point = k;
        c.augmenter = AugmenterKind::None;
        c.network.validate()?;
        out.extend(leave_one_out_configs(&c, domains, seeds));
    }
    Ok(out)
}

pub fn ablate_branch_points(
    base: &ExperimentConfig,
    dataset: &DomainDataset,
    ks: &[usize],
    domains: &[usize],
    seeds: &[u64],
) -> Result<Study> {
    if ks.is_empty() {
        return Err(Error::invalid("need at least one branch point"));
    }
    run_trials(&ablation_configs(base, ks, domains, seeds)?, dataset)
}

/// Log-uniform ranges for the random search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub alpha: (f64, f64),
    pub beta: (f64, f64),
    pub learning_rate: (f64, f64),
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            alpha: (0.1, 1.0),
            beta: (0.03, 0.3),
            learning_rate: (1e-4, 3e-3),
        }
    }
}

pub const DEFAULT_SEARCH_TRIALS: usize = 20;

fn log_uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        return lo;
    }
    rng.random_range(lo.ln()..hi.ln()).exp()
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("alpha", self.alpha), ("beta", self.beta), ("learning_rate", self.learning_rate)] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::Config(format!("search range for {name} must satisfy 0 < lo <= hi")));
            }
        }
        Ok(())
    }

    /// `trials` configs derived from `base` with sampled alpha, beta and
    /// learning rate.
    pub fn sample_configs(&self, base: &ExperimentConfig, trials: usize, seed: u64) -> Result<Vec<ExperimentConfig>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..trials)
            .map(|i| {
                let mut c = base.clone();
                c.loss.alpha = log_uniform(&mut rng, self.alpha);
                c.loss.beta = log_uniform(&mut rng, self.beta);
                c.learning_rate = log_uniform(&mut rng, self.learning_rate);
                c.name = Some(format!("{}-trial{i:02}", base.label()));
                c
            })
            .collect())
    }
}

/// Only what selection may see.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelectionInput {
    pub val_acc: f64,
}

/// Index of the highest validation accuracy; ties go to the earliest.
pub fn select_best(inputs: &[SelectionInput]) -> Result<usize> {
    if inputs.is_empty() {
        return Err(Error::invalid("nothing to select from"));
    }
    Ok(inputs
        .iter()
        .enumerate()
        .fold(0, |best, (i, x)| if x.val_acc > inputs[best].val_acc { i } else { best }))
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub best: ExperimentConfig,
    pub best_index: usize,
    pub study: Study,
}

pub fn hyperparameter_search(
    base: &ExperimentConfig,
    dataset: &DomainDataset,
    space: &SearchSpace,
    trials: usize,
    seed: u64,
) -> Result<SearchOutcome> {
    if trials == 0 {
        return Err(Error::invalid("search needs at least one trial"));
    }
    let configs = space.sample_configs(base, trials, seed)?;
    let study = run_trials(&configs, dataset)?;
    let inputs: Vec<SelectionInput> = study.trials.iter().map(|t| SelectionInput { val_acc: t.val_acc }).collect();
    let best_index = select_best(&inputs)?;
    Ok(SearchOutcome {
        best: configs[best_index].clone(),
        best_index,
        study,
    })
}
