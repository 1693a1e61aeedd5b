//! Dependence penalties between the causal and domain feature batches.
//!
//! All three measures work on `b x p` / `b x q` batches whose rows line up
//! sample by sample. Each has a graph form (differentiable, used in training)
//! and a plain form that evaluates the graph form on constants.

use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

/// Ridge inside the per-column standard deviation of the correlation penalty.
pub const CORRELATION_RIDGE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndependenceKind {
    #[default]
    Hsic,
    Orthogonal,
    Correlation,
}

impl std::str::FromStr for IndependenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hsic" => Ok(Self::Hsic),
            "orthogonal" => Ok(Self::Orthogonal),
            "correlation" => Ok(Self::Correlation),
            other => Err(Error::invalid(format!("unknown independence measure `{other}`"))),
        }
    }
}

impl std::fmt::Display for IndependenceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Hsic => "hsic",
            Self::Orthogonal => "orthogonal",
            Self::Correlation => "correlation",
        })
    }
}

/// A `b x p` matrix of finite feature rows.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBatch(Array);

impl FeatureBatch {
    pub fn new(matrix: Array) -> Result<Self> {
        if matrix.rank() != 2 {
            return Err(Error::shape("feature_batch", matrix.shape(), &[0, 0]));
        }
        if !matrix.all_finite() {
            return Err(Error::invalid("feature batch has non-finite entries"));
        }
        Ok(Self(matrix))
    }

    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &Array {
        &self.0
    }
}

impl TryFrom<Array> for FeatureBatch {
    type Error = Error;

    fn try_from(a: Array) -> Result<Self> {
        Self::new(a)
    }
}

/// `H = I - J / b`, the HSIC centering operator.
pub fn centering_matrix(b: usize) -> Result<Array> {
    if b < 2 {
        return Err(Error::invalid(format!("centering matrix needs b >= 2, got {b}")));
    }
    let inv = 1.0 / b as f64;
    Ok(Array::from_fn(&[b, b], |k| {
        if k / b == k % b {
            1.0 - inv
        } else {
            -inv
        }
    }))
}

fn check_rows(op: &'static str, g: &Graph, a: Var, b: Var) -> Result<usize> {
    let (sa, sb) = (g.shape(a), g.shape(b));
    if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
        return Err(Error::shape(op, sa, sb));
    }
    Ok(sa[0])
}

/// `tr(K H L H) / (b - 1)^2` with linear kernels on already-normalized rows.
pub fn hsic_normalized_graph(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let rows = check_rows("hsic_linear", g, a, b)?;
    if rows < 2 {
        return Err(Error::invalid(format!("HSIC needs at least 2 samples, got {rows}")));
    }
    let h = g.constant(centering_matrix(rows)?);
    let at = g.transpose(a)?;
    let k = g.matmul(a, at)?;
    let bt = g.transpose(b)?;
    let l = g.matmul(b, bt)?;
    let kh = g.matmul(k, h)?;
    let lh = g.matmul(l, h)?;
    let prod = g.matmul(kh, lh)?;
    let tr = g.trace(prod)?;
    let denom = ((rows - 1) * (rows - 1)) as f64;
    Ok(g.scale(tr, 1.0 / denom))
}

/// Linear-kernel HSIC between row-L2-normalized feature batches.
pub fn hsic_linear_graph(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    check_rows("hsic_linear", g, a, b)?;
    let an = g.row_normalize(a)?;
    let bn = g.row_normalize(b)?;
    hsic_normalized_graph(g, an, bn)
}

/// Mean squared entry of `A'^T B'` on row-normalized inputs.
pub fn orthogonality_graph(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    check_rows("orthogonality_penalty", g, a, b)?;
    let an = g.row_normalize(a)?;
    let bn = g.row_normalize(b)?;
    let at = g.transpose(an)?;
    let cross = g.matmul(at, bn)?;
    let sq = g.mul(cross, cross)?;
    g.mean(sq)
}

/// Mean squared entry of the `p x q` cross-correlation matrix of
/// column-standardized inputs. The target is the zero matrix.
pub fn cross_correlation_graph(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let rows = check_rows("cross_correlation_penalty", g, a, b)?;
    if rows < 2 {
        return Err(Error::invalid(format!(
            "cross-correlation needs at least 2 samples, got {rows}"
        )));
    }
    let az = g.standardize_columns(a, CORRELATION_RIDGE)?;
    let bz = g.standardize_columns(b, CORRELATION_RIDGE)?;
    let at = g.transpose(az)?;
    let c = g.matmul(at, bz)?;
    let c = g.scale(c, 1.0 / rows as f64);
    let sq = g.mul(c, c)?;
    g.mean(sq)
}

pub fn penalty_graph(g: &mut Graph, kind: IndependenceKind, a: Var, b: Var) -> Result<Var> {
    match kind {
        IndependenceKind::Hsic => hsic_linear_graph(g, a, b),
        IndependenceKind::Orthogonal => orthogonality_graph(g, a, b),
        IndependenceKind::Correlation => cross_correlation_graph(g, a, b),
    }
}

fn eval(
    a: &FeatureBatch,
    b: &FeatureBatch,
    f: impl FnOnce(&mut Graph, Var, Var) -> Result<Var>,
) -> Result<f64> {
    let mut g = Graph::new();
    let va = g.constant(a.0.clone());
    let vb = g.constant(b.0.clone());
    let out = f(&mut g, va, vb)?;
    Ok(g.value(out).item())
}

pub fn hsic_linear(a: &FeatureBatch, b: &FeatureBatch) -> Result<f64> {
    eval(a, b, hsic_linear_graph)
}

/// HSIC on inputs that are taken as already normalized (no row scaling).
pub fn hsic_from_normalized(a: &FeatureBatch, b: &FeatureBatch) -> Result<f64> {
    eval(a, b, hsic_normalized_graph)
}

pub fn orthogonality_penalty(a: &FeatureBatch, b: &FeatureBatch) -> Result<f64> {
    eval(a, b, orthogonality_graph)
}

pub fn cross_correlation_penalty(a: &FeatureBatch, b: &FeatureBatch) -> Result<f64> {
    eval(a, b, cross_correlation_graph)
}

pub fn penalty(kind: IndependenceKind, a: &FeatureBatch, b: &FeatureBatch) -> Result<f64> {
    eval(a, b, |g, x, y| penalty_graph(g, kind, x, y))
}
