//! Slide-level NB loss with the consistency regularizer, and the patch-level
//! correlation loss.

use log::warn;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{CpnnError, Result};
use crate::metrics::CorrelationAxis;
use crate::model::ForwardTrace;
use crate::nb::{nb_nll_batch, nb_nll_grads};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Regularization weight for slide-level training.
    pub lambda: f64,
    /// Correlate `log1p` of prediction and observation in the patch loss.
    pub patch_log1p: bool,
    /// Prototype-anchor weight for patch-level training.
    pub patch_lambda: f64,
    /// `PerSample` correlates each spot across genes; `PerGene` each gene across spots.
    pub patch_axis: CorrelationAxis,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 1e3,
            patch_log1p: true,
            patch_lambda: 1.0,
            patch_axis: CorrelationAxis::PerSample,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    /// NB term (slide) or mean correlation term (patch).
    pub fit: f64,
    pub reg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlideLossGrads {
    /// `∂L/∂μ̄` per slide
    pub d_mu_bar: Vec<Array1<f64>>,
    /// `∂L/∂W̄` per slide
    pub d_mean_weight: Vec<Array1<f64>>,
    pub d_theta: Array1<f64>,
    pub d_proto: Array2<f64>,
}

/// `‖T̄⁰ − T̄‖²_F`
pub fn prototype_penalty(proto: ArrayView2<f64>, proto0: ArrayView2<f64>) -> f64 {
    proto
        .iter()
        .zip(proto0.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

fn check_slide_inputs(
    traces: &[ForwardTrace],
    targets: &[ArrayView1<u64>],
    wref: &[ArrayView1<f64>],
    proto: ArrayView2<f64>,
    proto0: ArrayView2<f64>,
) -> Result<()> {
    if traces.is_empty() {
        return Err(CpnnError::data("empty mini-batch"));
    }
    if traces.len() != targets.len() || traces.len() != wref.len() {
        return Err(CpnnError::shape(format!(
            "{} traces, {} targets, {} reference proportions",
            traces.len(),
            targets.len(),
            wref.len()
        )));
    }
    if proto.dim() != proto0.dim() {
        return Err(CpnnError::shape(
            "prototype and initial prototype differ in shape",
        ));
    }
    let (c_n, g_n) = proto.dim();
    for ((t, y), w) in traces.iter().zip(targets).zip(wref) {
        if t.mu_bar.len() != g_n || y.len() != g_n || w.len() != c_n || t.mean_weight.len() != c_n {
            return Err(CpnnError::shape(
                "slide tensors do not match the prototype dimensions",
            ));
        }
    }
    Ok(())
}

/// `L = L_NB + λ (‖T̄⁰ − T̄‖²_F + mean_n ‖W^(n) − W̄^(n)‖²)` with its gradients.
///
/// `wref[n]` is the reference proportion vector of the slide behind `traces[n]`.
pub fn loss_slide(
    traces: &[ForwardTrace],
    targets: &[ArrayView1<u64>],
    theta: ArrayView1<f64>,
    wref: &[ArrayView1<f64>],
    proto: ArrayView2<f64>,
    proto0: ArrayView2<f64>,
    lambda: f64,
) -> Result<(LossParts, SlideLossGrads)> {
    check_slide_inputs(traces, targets, wref, proto, proto0)?;
    if !(lambda >= 0.0) {
        return Err(CpnnError::Config(format!(
            "lambda must be nonnegative, got {lambda}"
        )));
    }
    let n = traces.len();
    let g_n = proto.ncols();
    let mut counts = Array2::<u64>::zeros((n, g_n));
    let mut mu = Array2::<f64>::zeros((n, g_n));
    for (i, (t, y)) in traces.iter().zip(targets).enumerate() {
        counts.row_mut(i).assign(y);
        mu.row_mut(i).assign(&t.mu_bar);
    }
    let nb = nb_nll_batch(counts.view(), mu.view(), theta)?;
    let (d_mu, d_theta) = nb_nll_grads(counts.view(), mu.view(), theta)?;

    let proto_term = prototype_penalty(proto, proto0);
    let mut weight_term = 0.0;
    let mut d_mean_weight = Vec::with_capacity(n);
    for (t, w) in traces.iter().zip(wref) {
        let diff = &t.mean_weight - w;
        weight_term += diff.dot(&diff);
        d_mean_weight.push(diff * (2.0 * lambda / n as f64));
    }
    let reg = proto_term + weight_term / n as f64;
    let total = if lambda == 0.0 { nb } else { nb + lambda * reg };
    if !total.is_finite() {
        return Err(CpnnError::numeric("slide loss is non-finite"));
    }
    let d_proto = (&proto - &proto0) * (2.0 * lambda);
    Ok((
        LossParts {
            total,
            fit: nb,
            reg,
        },
        SlideLossGrads {
            d_mu_bar: d_mu.rows().into_iter().map(|r| r.to_owned()).collect(),
            d_mean_weight,
            d_theta,
            d_proto,
        },
    ))
}

/// Pearson correlation of two centred-able vectors and `∂r/∂x`; `None` if either is constant.
fn pearson_with_grad(x: &[f64], y: &[f64]) -> Option<(f64, Vec<f64>)> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    let norm = (sxx * syy).sqrt();
    let r = sxy / norm;
    // centring terms cancel because Σ(y − ȳ) = Σ(x − x̄) = 0
    let grad = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - my) / norm - r * (a - mx) / sxx)
        .collect();
    Some((r, grad))
}

/// Mean of `1 − PCC` over spots (or genes) plus `patch_lambda ‖T̄⁰ − T̄‖²_F`.
///
/// Returns the loss, `∂L/∂pred` and `∂L/∂T̄`. Units with zero variance in
/// either argument are skipped.
pub fn loss_patch(
    pred: ArrayView2<f64>,
    obs: ArrayView2<u64>,
    proto: ArrayView2<f64>,
    proto0: ArrayView2<f64>,
    cfg: &LossConfig,
) -> Result<(LossParts, Array2<f64>, Array2<f64>)> {
    if pred.dim() != obs.dim() {
        return Err(CpnnError::shape(format!(
            "predictions are {:?} but observations are {:?}",
            pred.dim(),
            obs.dim()
        )));
    }
    if proto.dim() != proto0.dim() {
        return Err(CpnnError::shape(
            "prototype and initial prototype differ in shape",
        ));
    }
    let axis = match cfg.patch_axis {
        CorrelationAxis::PerSample => Axis(0),
        CorrelationAxis::PerGene => Axis(1),
    };
    let transform = |v: f64| if cfg.patch_log1p { v.ln_1p() } else { v };
    let transform_grad = |v: f64| {
        if cfg.patch_log1p {
            1.0 / (1.0 + v)
        } else {
            1.0
        }
    };
    let mut d_pred = Array2::<f64>::zeros(pred.dim());
    let mut terms = Vec::new();
    let mut skipped = 0usize;
    let mut used = Vec::new();
    for (u, (p, o)) in pred.axis_iter(axis).zip(obs.axis_iter(axis)).enumerate() {
        let x: Vec<f64> = p.iter().map(|&v| transform(v)).collect();
        let y: Vec<f64> = o.iter().map(|&v| transform(v as f64)).collect();
        match pearson_with_grad(&x, &y) {
            Some((r, g)) => {
                terms.push(1.0 - r);
                used.push((u, g));
            }
            None => skipped += 1,
        }
    }
    if terms.is_empty() {
        return Err(CpnnError::data(
            "every spot has zero variance in prediction or observation",
        ));
    }
    if skipped > 0 {
        warn!("patch loss skipped {skipped} zero-variance unit(s)");
    }
    let m = terms.len() as f64;
    for (u, g) in used {
        let mut lane = d_pred.index_axis_mut(axis, u);
        let p = pred.index_axis(axis, u);
        for (j, dr) in g.into_iter().enumerate() {
            lane[j] = -dr * transform_grad(p[j]) / m;
        }
    }
    let fit = terms.iter().sum::<f64>() / m;
    let reg = prototype_penalty(proto, proto0);
    let total = fit + cfg.patch_lambda * reg;
    if !total.is_finite() {
        return Err(CpnnError::numeric("patch loss is non-finite"));
    }
    let d_proto = (&proto - &proto0) * (2.0 * cfg.patch_lambda);
    Ok((LossParts { total, fit, reg }, d_pred, d_proto))
}
