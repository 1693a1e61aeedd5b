//! Feature-level style augmentation.
//!
//! A feature map's "style" is its per-sample, per-channel spatial mean and
//! standard deviation. Augmenters produce target styles for a batch, and
//! [`adain_transfer`] (or [`Graph::restyle`] during training) swaps them in
//! while keeping the channelwise standardized content.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::autodiff::{kernels, Graph};
use crate::error::{Error, Result};

/// Ridge added to every fitted style variance.
pub const STYLE_RIDGE: f64 = 1e-8;
/// Lower clamp for sampled standard deviations.
pub const SIGMA_HAT_FLOOR: f64 = 1e-5;
/// Default density threshold for random domain sampling.
pub const RDS_EPSILON: f64 = 1e-4;
pub const RDS_MAX_TRIES: usize = 64;
pub const MIXSTYLE_OMEGA: f64 = 0.1;

/// Per-sample per-channel style statistics, both `b x c`.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleStats {
    pub mu: Array,
    pub sigma: Array,
}

impl StyleStats {
    pub fn new(mu: Array, sigma: Array) -> Result<Self> {
        if mu.rank() != 2 || mu.shape() != sigma.shape() {
            return Err(Error::shape("style_stats", mu.shape(), sigma.shape()));
        }
        if sigma.data().iter().any(|&s| s < 0.0 || s.is_nan()) {
            return Err(Error::invalid("style sigma must be non-negative"));
        }
        Ok(Self { mu, sigma })
    }

    pub fn batch(&self) -> usize {
        self.mu.rows()
    }

    pub fn channels(&self) -> usize {
        self.mu.cols()
    }

    /// One sampled style per row.
    pub fn from_samples(samples: &[SampledStyle]) -> Result<Self> {
        let c = samples.first().map_or(0, |s| s.mu_hat.len());
        if samples.iter().any(|s| s.mu_hat.len() != c || s.sigma_hat.len() != c) {
            return Err(Error::invalid("sampled styles differ in channel count"));
        }
        let mu = samples.iter().flat_map(|s| s.mu_hat.iter().copied()).collect();
        let sigma = samples.iter().flat_map(|s| s.sigma_hat.iter().copied()).collect();
        Self::new(
            Array::new(vec![samples.len(), c], mu)?,
            Array::new(vec![samples.len(), c], sigma)?,
        )
    }

    /// Row `i` as the concatenation `[mu..., sigma...]`.
    pub fn concat_row(&self, i: usize) -> Vec<f64> {
        let mut v = self.mu.row(i).to_vec();
        v.extend_from_slice(self.sigma.row(i));
        v
    }
}

/// Diagonal Gaussian models of the batch's style means and deviations.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleDistribution {
    pub mean_mu: Vec<f64>,
    pub var_mu: Vec<f64>,
    pub mean_sigma: Vec<f64>,
    pub var_sigma: Vec<f64>,
    pub ridge: f64,
}

impl StyleDistribution {
    pub fn channels(&self) -> usize {
        self.mean_mu.len()
    }

    fn validate(&self) -> Result<()> {
        let c = self.mean_mu.len();
        if [self.var_mu.len(), self.mean_sigma.len(), self.var_sigma.len()]
            .iter()
            .any(|&n| n != c)
        {
            return Err(Error::invalid("style distribution vectors differ in length"));
        }
        if !(self.ridge > 0.0) {
            return Err(Error::invalid("style distribution ridge must be positive"));
        }
        if self
            .var_mu
            .iter()
            .chain(&self.var_sigma)
            .any(|&v| !(v > 0.0) || !v.is_finite())
        {
            return Err(Error::invalid("style distribution variances must be positive"));
        }
        Ok(())
    }
}

/// A style drawn by [`sample_rds_style`].
#[derive(Clone, Debug, PartialEq)]
pub struct SampledStyle {
    pub mu_hat: Vec<f64>,
    /// Clamped to at least [`SIGMA_HAT_FLOOR`].
    pub sigma_hat: Vec<f64>,
    pub log_density_mu: f64,
    /// Density of the sigma draw before clamping.
    pub log_density_sigma: f64,
    pub tries: usize,
    pub accepted: bool,
}

impl SampledStyle {
    /// The larger of the two log-densities; below `ln(epsilon)` iff both draws are.
    pub fn log_density(&self) -> f64 {
        self.log_density_mu.max(self.log_density_sigma)
    }
}

pub fn compute_style_stats(features: &Array) -> Result<StyleStats> {
    let s = features.shape();
    if s.len() != 4 {
        return Err(Error::shape("compute_style_stats", s, &[0, 0, 0, 0]));
    }
    if s[2] * s[3] == 0 {
        return Err(Error::invalid("style statistics need a non-empty spatial extent"));
    }
    let (mean, var) = kernels::channel_moments(features);
    let bc = vec![s[0], s[1]];
    StyleStats::new(
        Array::new(bc.clone(), mean)?,
        Array::new(bc, var.into_iter().map(f64::sqrt).collect())?,
    )
}

fn column_moments(a: &Array) -> (Vec<f64>, Vec<f64>) {
    let (b, c) = (a.rows(), a.cols());
    let n = b as f64;
    let mut mean = vec![0.0; c];
    for i in 0..b {
        for (m, v) in mean.iter_mut().zip(a.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; c];
    for i in 0..b {
        for ((s, v), m) in var.iter_mut().zip(a.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= n);
    (mean, var)
}

/// Batch mean and population variance (plus ridge) of the style statistics.
pub fn fit_style_distribution(stats: &StyleStats) -> Result<StyleDistribution> {
    if stats.batch() < 2 {
        return Err(Error::invalid(format!(
            "fitting a style distribution needs b >= 2, got {}",
            stats.batch()
        )));
    }
    let (mean_mu, var_mu) = column_moments(&stats.mu);
    let (mean_sigma, var_sigma) = column_moments(&stats.sigma);
    let ridge = STYLE_RIDGE;
    Ok(StyleDistribution {
        mean_mu,
        var_mu: var_mu.into_iter().map(|v| v + ridge).collect(),
        mean_sigma,
        var_sigma: var_sigma.into_iter().map(|v| v + ridge).collect(),
        ridge,
    })
}

/// `ln N(x; mean, diag(var))`.
pub fn gaussian_log_density(x: &[f64], mean: &[f64], var: &[f64]) -> Result<f64> {
    if x.len() != mean.len() || x.len() != var.len() {
        return Err(Error::shape("gaussian_log_density", &[x.len()], &[mean.len(), var.len()]));
    }
    let mut acc = 0.0;
    for ((&xi, &m), &v) in x.iter().zip(mean).zip(var) {
        if !(v > 0.0) {
            return Err(Error::invalid(format!("variance must be positive, got {v}")));
        }
        let d = xi - m;
        acc += (2.0 * std::f64::consts::PI * v).ln() + d * d / v;
    }
    Ok(-0.5 * acc)
}

fn draw(mean: &[f64], var: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    mean.iter()
        .zip(var)
        .map(|(&m, &v)| {
            let z: f64 = rng.sample(StandardNormal);
            m + v.sqrt() * z
        })
        .collect()
}

/// Rejection-samples a style whose mean and deviation draws both have
/// density below `epsilon`. Falls back to the lowest combined density seen
/// after `max_tries` draws.
pub fn sample_rds_style(
    dist: &StyleDistribution,
    epsilon: f64,
    rng: &mut impl Rng,
    max_tries: usize,
) -> Result<SampledStyle> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if max_tries == 0 {
        return Err(Error::invalid("max_tries must be at least 1"));
    }
    dist.validate()?;
    let log_eps = epsilon.ln();
    let mut best: Option<(f64, SampledStyle)> = None;
    for tries in 1..=max_tries {
        let mu = draw(&dist.mean_mu, &dist.var_mu, rng);
        let sigma = draw(&dist.mean_sigma, &dist.var_sigma, rng);
        let ld_mu = gaussian_log_density(&mu, &dist.mean_mu, &dist.var_mu)?;
        let ld_sigma = gaussian_log_density(&sigma, &dist.mean_sigma, &dist.var_sigma)?;
        if ld_mu < log_eps && ld_sigma < log_eps {
            return Ok(finish(mu, sigma, ld_mu, ld_sigma, tries, true));
        }
        let total = ld_mu + ld_sigma;
        if best.as_ref().is_none_or(|b| total < b.0) {
            best = Some((total, finish(mu, sigma, ld_mu, ld_sigma, max_tries, false)));
        }
    }
    Ok(best.expect("at least one draw").1)
}

fn finish(
    mu_hat: Vec<f64>,
    sigma: Vec<f64>,
    log_density_mu: f64,
    log_density_sigma: f64,
    tries: usize,
    accepted: bool,
) -> SampledStyle {
    SampledStyle {
        mu_hat,
        sigma_hat: sigma.into_iter().map(|s| s.max(SIGMA_HAT_FLOOR)).collect(),
        log_density_mu,
        log_density_sigma,
        tries,
        accepted,
    }
}

/// AdaIN: gives every channel of `features` the target mean and deviation.
pub fn adain_transfer(features: &Array, target: &StyleStats) -> Result<Array> {
    let mut g = Graph::new();
    let x = g.constant(features.clone());
    let y = g.restyle(x, &target.mu, &target.sigma)?;
    Ok(g.value(y).clone())
}

/// MixStyle targets: `lambda_i * s_i + (1 - lambda_i) * s_perm(i)`.
pub fn mixstyle_targets(stats: &StyleStats, lambdas: &[f64], perm: &[usize]) -> Result<StyleStats> {
    let (b, c) = (stats.batch(), stats.channels());
    if lambdas.len() != b || perm.len() != b || perm.iter().any(|&p| p >= b) {
        return Err(Error::invalid("mixstyle needs one lambda and one partner per sample"));
    }
    let mix = |a: &Array| {
        Array::from_fn(&[b, c], |k| {
            let (i, j) = (k / c, k % c);
            let l = lambdas[i];
            l * a.data()[i * c + j] + (1.0 - l) * a.data()[perm[i] * c + j]
        })
    };
    StyleStats::new(mix(&stats.mu), mix(&stats.sigma))
}

pub fn mixstyle_with(features: &Array, lambdas: &[f64], perm: &[usize]) -> Result<Array> {
    let stats = compute_style_stats(features)?;
    adain_transfer(features, &mixstyle_targets(&stats, lambdas, perm)?)
}

fn mixstyle_draws(b: usize, omega: f64, rng: &mut impl Rng) -> Result<(Vec<f64>, Vec<usize>)> {
    if b < 2 {
        return Err(Error::invalid(format!("mixstyle needs b >= 2, got {b}")));
    }
    let beta = Beta::new(omega, omega)
        .map_err(|e| Error::invalid(format!("mixstyle omega {omega}: {e}")))?;
    let lambdas = (0..b).map(|_| beta.sample(rng)).collect();
    let mut perm: Vec<usize> = (0..b).collect();
    perm.shuffle(rng);
    Ok((lambdas, perm))
}

pub fn mixstyle(features: &Array, omega: f64, rng: &mut impl Rng) -> Result<Array> {
    let (lambdas, perm) = mixstyle_draws(features.shape()[0], omega, rng)?;
    mixstyle_with(features, &lambdas, &perm)
}

/// DSU targets: `mu + phi * var_mu` and `sigma + phi' * var_sigma` per
/// sample and channel, with sigma clamped at [`SIGMA_HAT_FLOOR`].
pub fn dsu_targets(
    stats: &StyleStats,
    dist: &StyleDistribution,
    phi_mu: &Array,
    phi_sigma: &Array,
) -> Result<StyleStats> {
    let (b, c) = (stats.batch(), stats.channels());
    if phi_mu.shape() != [b, c] || phi_sigma.shape() != [b, c] || dist.channels() != c {
        return Err(Error::shape("dsu", stats.mu.shape(), phi_mu.shape()));
    }
    let mu = Array::from_fn(&[b, c], |k| {
        stats.mu.data()[k] + phi_mu.data()[k] * dist.var_mu[k % c]
    });
    let sigma = Array::from_fn(&[b, c], |k| {
        (stats.sigma.data()[k] + phi_sigma.data()[k] * dist.var_sigma[k % c]).max(SIGMA_HAT_FLOOR)
    });
    StyleStats::new(mu, sigma)
}

pub fn dsu_with(features: &Array, phi_mu: &Array, phi_sigma: &Array) -> Result<Array> {
    let stats = compute_style_stats(features)?;
    if stats.batch() < 2 {
        return Err(Error::invalid(format!("dsu needs b >= 2, got {}", stats.batch())));
    }
    let dist = fit_style_distribution(&stats)?;
    adain_transfer(features, &dsu_targets(&stats, &dist, phi_mu, phi_sigma)?)
}

fn normal_array(shape: &[usize], rng: &mut impl Rng) -> Array {
    Array::from_fn(shape, |_| rng.sample::<f64, _>(StandardNormal))
}

pub fn dsu(features: &Array, rng: &mut impl Rng) -> Result<Array> {
    let s = features.shape();
    if s.len() != 4 {
        return Err(Error::shape("dsu", s, &[0, 0, 0, 0]));
    }
    let phi_mu = normal_array(&s[..2], rng);
    let phi_sigma = normal_array(&s[..2], rng);
    dsu_with(features, &phi_mu, &phi_sigma)
}

/// Which augmenter a training run uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmenterKind {
    None,
    #[default]
    Rds,
    MixStyle,
    Dsu,
}

impl std::str::FromStr for AugmenterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "rds" => Ok(Self::Rds),
            "mixstyle" => Ok(Self::MixStyle),
            "dsu" => Ok(Self::Dsu),
            other => Err(Error::invalid(format!("unknown augmenter `{other}`"))),
        }
    }
}

impl std::fmt::Display for AugmenterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Rds => "rds",
            Self::MixStyle => "mixstyle",
            Self::Dsu => "dsu",
        })
    }
}

/// Produces target styles for a feature batch.
#[derive(Clone, Debug, PartialEq)]
pub enum StyleAugmenter {
    Rds { epsilon: f64, max_tries: usize },
    MixStyle { omega: f64 },
    Dsu,
    /// Each sample keeps its own style.
    Identity,
    /// Pre-drawn targets, e.g. to freeze the randomness for gradient checks.
    Fixed(StyleStats),
}

impl StyleAugmenter {
    pub fn from_kind(kind: AugmenterKind, epsilon: f64, omega: f64) -> Option<Self> {
        match kind {
            AugmenterKind::None => None,
            AugmenterKind::Rds => Some(Self::Rds {
                epsilon,
                max_tries: RDS_MAX_TRIES,
            }),
            AugmenterKind::MixStyle => Some(Self::MixStyle { omega }),
            AugmenterKind::Dsu => Some(Self::Dsu),
        }
    }

    pub fn targets(&self, features: &Array, rng: &mut impl Rng) -> Result<StyleStats> {
        let stats = compute_style_stats(features)?;
        match self {
            Self::Identity => Ok(stats),
            Self::Fixed(t) => {
                if t.mu.shape() != stats.mu.shape() {
                    return Err(Error::shape("fixed_style", stats.mu.shape(), t.mu.shape()));
                }
                Ok(t.clone())
            }
            Self::Rds { epsilon, max_tries } => {
                let dist = fit_style_distribution(&stats)?;
                let samples = (0..stats.batch())
                    .map(|_| sample_rds_style(&dist, *epsilon, rng, *max_tries))
                    .collect::<Result<Vec<_>>>()?;
                StyleStats::from_samples(&samples)
            }
            Self::MixStyle { omega } => {
                let (lambdas, perm) = mixstyle_draws(stats.batch(), *omega, rng)?;
                mixstyle_targets(&stats, &lambdas, &perm)
            }
            Self::Dsu => {
                let dist = fit_style_distribution(&stats)?;
                let shape = [stats.batch(), stats.channels()];
                let phi_mu = normal_array(&shape, rng);
                let phi_sigma = normal_array(&shape, rng);
                dsu_targets(&stats, &dist, &phi_mu, &phi_sigma)
            }
        }
    }

    /// Targets plus the transferred batch.
    pub fn apply(&self, features: &Array, rng: &mut impl Rng) -> Result<(StyleStats, Array)> {
        let t = self.targets(features, rng)?;
        let out = adain_transfer(features, &t)?;
        Ok((t, out))
    }
}

/// For each sampled style, the Euclidean distance in `[mu, sigma]` space to
/// the nearest batch style.
pub fn nearest_style_distances(sampled: &StyleStats, batch: &StyleStats) -> Result<Vec<f64>> {
    if sampled.channels() != batch.channels() || batch.batch() == 0 {
        return Err(Error::shape("nearest_style_distances", sampled.mu.shape(), batch.mu.shape()));
    }
    let rows: Vec<Vec<f64>> = (0..batch.batch()).map(|i| batch.concat_row(i)).collect();
    Ok((0..sampled.batch())
        .map(|i| {
            let q = sampled.concat_row(i);
            rows.iter()
                .map(|r| r.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .collect())
}

/// Writes `method,kind,sample,mu_0..,sigma_0..` rows; `kind` is
/// `original` or `sampled`.
pub fn write_style_dump<W: std::io::Write>(
    out: W,
    entries: &[(String, StyleStats, StyleStats)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let c = entries.first().map_or(0, |e| e.1.channels());
    let mut header = vec!["method".to_string(), "kind".into(), "sample".into()];
    header.extend((0..c).map(|j| format!("mu_{j}")));
    header.extend((0..c).map(|j| format!("sigma_{j}")));
    w.write_record(&header)?;
    for (method, original, sampled) in entries {
        for (kind, stats) in [("original", original), ("sampled", sampled)] {
            if stats.channels() != c {
                return Err(Error::invalid("style dump entries differ in channel count"));
            }
            for i in 0..stats.batch() {
                let mut rec = vec![method.clone(), kind.to_string(), i.to_string()];
                rec.extend(stats.concat_row(i).iter().map(|v| format!("{v:e}")));
                w.write_record(&rec)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("<style dump>", e))?;
    Ok(())
}
