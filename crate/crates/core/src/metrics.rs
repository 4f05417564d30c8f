//! Pearson/Spearman correlation and the per-gene evaluation report.

use ndarray::{ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{CpnnError, Result};

/// Sample Pearson correlation. `None` when lengths differ, fewer than two
/// points are given, or either input is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of the positions they occupy.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Spearman correlation: Pearson of average-rank transforms.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Which axis the correlations run along.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationAxis {
    /// One correlation per gene, across samples (or spots).
    #[default]
    PerGene,
    /// One correlation per sample, across genes.
    PerSample,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub axis: CorrelationAxis,
    pub log1p: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Labels of the evaluated units (genes or samples, depending on axis).
    pub labels: Vec<String>,
    pub per_unit_pcc: Vec<f64>,
    pub per_unit_scc: Vec<f64>,
    pub mean_pcc: f64,
    pub mean_scc: f64,
    pub n_evaluated: usize,
    pub n_excluded: usize,
}

impl EvalReport {
    pub fn summary_line(&self) -> String {
        format!(
            "mean_pcc={} mean_scc={} n_genes={}",
            self.mean_pcc, self.mean_scc, self.n_evaluated
        )
    }
}

/// Correlate predictions with truth along `opts.axis`.
///
/// Units whose truth or prediction is constant are excluded and counted.
pub fn evaluate(
    pred: ArrayView2<f64>,
    truth: ArrayView2<f64>,
    labels: &[String],
    opts: EvalOptions,
) -> Result<EvalReport> {
    if pred.dim() != truth.dim() {
        return Err(CpnnError::shape(format!(
            "predictions are {:?} but truth is {:?}",
            pred.dim(),
            truth.dim()
        )));
    }
    let axis = match opts.axis {
        CorrelationAxis::PerGene => Axis(1),
        CorrelationAxis::PerSample => Axis(0),
    };
    if labels.len() != pred.len_of(axis) {
        return Err(CpnnError::shape(format!(
            "{} labels for {} evaluated units",
            labels.len(),
            pred.len_of(axis)
        )));
    }
    let other = Axis(1 - axis.index());
    if pred.len_of(other) < 2 {
        return Err(CpnnError::data(
            "correlations need at least 2 observations per unit",
        ));
    }
    let transform = |v: ArrayView1<f64>| -> Vec<f64> {
        if opts.log1p {
            v.iter().map(|x| x.ln_1p()).collect()
        } else {
            v.to_vec()
        }
    };
    let mut report = EvalReport {
        labels: Vec::new(),
        per_unit_pcc: Vec::new(),
        per_unit_scc: Vec::new(),
        mean_pcc: 0.0,
        mean_scc: 0.0,
        n_evaluated: 0,
        n_excluded: 0,
    };
    for ((p, t), label) in pred.axis_iter(axis).zip(truth.axis_iter(axis)).zip(labels) {
        let (p, t) = (transform(p), transform(t));
        match (pearson(&p, &t), spearman(&p, &t)) {
            (Some(r), Some(s)) => {
                report.labels.push(label.clone());
                report.per_unit_pcc.push(r);
                report.per_unit_scc.push(s);
            }
            _ => report.n_excluded += 1,
        }
    }
    report.n_evaluated = report.labels.len();
    if report.n_evaluated == 0 {
        return Err(CpnnError::data(
            "every unit has constant truth or prediction",
        ));
    }
    let n = report.n_evaluated as f64;
    report.mean_pcc = report.per_unit_pcc.iter().sum::<f64>() / n;
    report.mean_scc = report.per_unit_scc.iter().sum::<f64>() / n;
    Ok(report)
}

/// Per-unit metrics as CSV: `<key>,pcc,scc`, floats in shortest round-trip form.
pub fn metrics_csv(report: &EvalReport, key: &str) -> String {
    let mut out = format!("{key},pcc,scc\n");
    for ((label, r), s) in report
        .labels
        .iter()
        .zip(&report.per_unit_pcc)
        .zip(&report.per_unit_scc)
    {
        out.push_str(&format!("{label},{r:?},{s:?}\n"));
    }
    out
}

/// Mean and (population) standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
