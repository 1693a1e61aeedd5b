//! Central finite-difference checks against analytic gradients.
//!
//! The numeric side only ever calls the supplied loss closure on perturbed
//! copies of the parameters; it shares nothing with the backward pass.

use rand::seq::index::sample;
use rand::Rng;

use crate::autodiff::{Gradients, ParamStore};
use crate::error::Result;

/// Elements whose gradient magnitude is below this are not compared.
pub const GRAD_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Coordinates skipped because the two step sizes disagreed, i.e. the
    /// perturbation crossed a ReLU/max/abs kink.
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    /// `(parameter, flat index, analytic, numeric)` of the worst element.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.skipped_kinks += other.skipped_kinks;
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Central difference of `loss` along one coordinate.
pub fn central_difference(
    store: &ParamStore,
    id: crate::autodiff::ParamId,
    index: usize,
    h: f64,
    loss: &mut impl FnMut(&ParamStore) -> Result<f64>,
) -> Result<f64> {
    let mut probe = store.clone();
    let x0 = probe.get(id).data()[index];
    probe.get_mut(id).data_mut()[index] = x0 + h;
    let up = loss(&probe)?;
    probe.get_mut(id).data_mut()[index] = x0 - h;
    let down = loss(&probe)?;
    Ok((up - down) / (2.0 * h))
}

/// Compares `analytic` with central differences on up to `per_param`
/// randomly chosen coordinates of every parameter (all when `None`).
pub fn check_gradients(
    store: &ParamStore,
    analytic: &Gradients,
    per_param: Option<usize>,
    h: f64,
    rng: &mut impl Rng,
    mut loss: impl FnMut(&ParamStore) -> Result<f64>,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport::default();
    for (id, name, value) in store.iter() {
        let n = value.len();
        let coords: Vec<usize> = match per_param {
            Some(k) if k < n => sample(rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let g = analytic.get_or_zeros(store, id);
        for i in coords {
            let a = g.data()[i];
            let num = central_difference(store, id, i, h, &mut loss)?;
            if a.abs().max(num.abs()) <= GRAD_FLOOR {
                continue;
            }
            let half = central_difference(store, id, i, h / 2.0, &mut loss)?;
            if relative_error(num, half) > 1e-3 && relative_error(a, num) > 1e-4 {
                report.skipped_kinks += 1;
                continue;
            }
            report.checked += 1;
            let e = relative_error(a, num);
            if e > report.max_rel_error {
                report.max_rel_error = e;
                report.worst = Some((name.to_string(), i, a, num));
            }
        }
    }
    Ok(report)
}
