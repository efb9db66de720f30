//! Symmetric Jensen-Shannon style feature alignment.
//!
//! Raw feature rows are mapped to probability vectors with a softmax, then
//! `0.5 * (KL(p || q) + KL(q || p))` is averaged over the batch, using
//! `KL(p || q) = sum_t p_t * ln((p_t + 1e-8) / (q_t + 1e-8))`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::LossGrad;
use crate::error::{Error, Result};

pub const KL_LOG_FLOOR: f64 = 1e-8;

pub fn softmax(row: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = row.mapv(|v| (v - max).exp());
    let sum = out.sum();
    out /= sum;
    out
}

pub fn kl_divergence(p: ArrayView1<'_, f64>, q: ArrayView1<'_, f64>) -> f64 {
    p.iter()
        .zip(q.iter())
        .map(|(&pt, &qt)| pt * ((pt + KL_LOG_FLOOR) / (qt + KL_LOG_FLOOR)).ln())
        .sum()
}

/// KL exactly as sometimes printed, without the `p_t` weight.
///
/// Used only to demonstrate that the symmetric combination of this form
/// collapses to zero.
pub fn kl_divergence_unweighted(p: ArrayView1<'_, f64>, q: ArrayView1<'_, f64>) -> f64 {
    p.iter()
        .zip(q.iter())
        .map(|(&pt, &qt)| ((pt + KL_LOG_FLOOR) / (qt + KL_LOG_FLOOR)).ln())
        .sum()
}

/// Gradients of the loss with respect to both feature stacks.
#[derive(Clone, Debug)]
pub struct JsLoss {
    pub value: f64,
    pub grad_online: Array2<f64>,
    pub grad_momentum: Array2<f64>,
}

impl JsLoss {
    pub fn into_online(self) -> LossGrad<Array2<f64>> {
        LossGrad {
            value: self.value,
            grad: self.grad_online,
        }
    }
}

fn check_shapes(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!(
            "feature stacks {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    if a.ncols() < 2 {
        return Err(Error::invalid("feature alignment needs at least 2 features"));
    }
    if a.nrows() == 0 {
        return Err(Error::invalid("feature alignment over an empty batch"));
    }
    Ok(())
}

/// Gradient of `0.5 * (KL(p||q) + KL(q||p))` with respect to `p`.
fn grad_wrt_first(p: &Array1<f64>, q: &Array1<f64>) -> Array1<f64> {
    let mut g = Array1::zeros(p.len());
    for t in 0..p.len() {
        let pt = p[t] + KL_LOG_FLOOR;
        let qt = q[t] + KL_LOG_FLOOR;
        g[t] = 0.5 * ((pt / qt).ln() + p[t] / pt - q[t] / pt);
    }
    g
}

/// Backpropagates a gradient on probabilities through the softmax.
fn through_softmax(p: &Array1<f64>, g: &Array1<f64>) -> Array1<f64> {
    let dot: f64 = p.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
    Array1::from_shape_fn(p.len(), |t| p[t] * (g[t] - dot))
}

pub fn js_feature_loss(
    z_online: ArrayView2<'_, f64>,
    z_momentum: ArrayView2<'_, f64>,
) -> Result<JsLoss> {
    check_shapes(z_online, z_momentum)?;
    let (b, f) = z_online.dim();
    let mut value = 0.0;
    let mut grad_online = Array2::zeros((b, f));
    let mut grad_momentum = Array2::zeros((b, f));
    for i in 0..b {
        let p = softmax(z_online.row(i));
        let q = softmax(z_momentum.row(i));
        value += 0.5 * (kl_divergence(p.view(), q.view()) + kl_divergence(q.view(), p.view()));
        let gp = through_softmax(&p, &grad_wrt_first(&p, &q)) / b as f64;
        let gq = through_softmax(&q, &grad_wrt_first(&q, &p)) / b as f64;
        grad_online.row_mut(i).assign(&gp);
        grad_momentum.row_mut(i).assign(&gq);
    }
    Ok(JsLoss {
        value: value / b as f64,
        grad_online,
        grad_momentum,
    })
}

/// The symmetric combination built from [`kl_divergence_unweighted`].
pub fn js_feature_loss_unweighted(
    z_online: ArrayView2<'_, f64>,
    z_momentum: ArrayView2<'_, f64>,
) -> Result<f64> {
    check_shapes(z_online, z_momentum)?;
    let b = z_online.nrows();
    let mut value = 0.0;
    for i in 0..b {
        let p = softmax(z_online.row(i));
        let q = softmax(z_momentum.row(i));
        value += 0.5
            * (kl_divergence_unweighted(p.view(), q.view())
                + kl_divergence_unweighted(q.view(), p.view()));
    }
    Ok(value / b as f64)
}
