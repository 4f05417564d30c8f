//! Batch-agnostic cell-type prototypes fitted by negative-binomial regression.
//!
//! Single-cell counts follow `e_kg ~ NB((t_{c(k),g} + b_{d(k),g}) · s_{d(k)}, θ_g)`
//! where `c(k)` is the cell type and `d(k)` the batch of cell `k`. The fitted
//! means `t_c` are then normalised to sum to one per cell type.

use std::fs;
use std::path::Path;

use log::{debug, warn};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::data::{CellAnnotations, CountMatrix};
use crate::error::{CpnnError, Result};
use crate::io;
use crate::nb::MIN_MEAN;
use crate::optim::{AdamW, AdamWConfig, Segment};
use crate::special::{sigmoid, softplus, softplus_inv};

/// Cell types by genes, nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeMatrix {
    values: Array2<f64>,
    cell_type_names: Vec<String>,
    gene_ids: Vec<String>,
}

impl PrototypeMatrix {
    pub fn new(
        values: Array2<f64>,
        cell_type_names: Vec<String>,
        gene_ids: Vec<String>,
    ) -> Result<Self> {
        if values.dim() != (cell_type_names.len(), gene_ids.len()) {
            return Err(CpnnError::shape(format!(
                "prototype matrix is {:?} for {} cell types and {} genes",
                values.dim(),
                cell_type_names.len(),
                gene_ids.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(CpnnError::data(
                "prototype entries must be finite and nonnegative",
            ));
        }
        Ok(Self {
            values,
            cell_type_names,
            gene_ids,
        })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn cell_type_names(&self) -> &[String] {
        &self.cell_type_names
    }

    pub fn gene_ids(&self) -> &[String] {
        &self.gene_ids
    }

    pub fn n_types(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_genes(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        self.values
            .rows()
            .into_iter()
            .all(|r| (r.sum() - 1.0).abs() <= tol)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_float_table(
            path,
            "cell_type",
            &self.cell_type_names,
            &self.gene_ids,
            &self.values,
        )
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let t = io::read_float_table(path)?;
        Self::new(t.values, t.row_ids, t.columns)
    }

    /// Reorder/restrict genes to `genes`; every id must be present.
    pub fn with_gene_order(&self, genes: &[String]) -> Result<Self> {
        let cols = genes
            .iter()
            .map(|g| {
                self.gene_ids
                    .iter()
                    .position(|x| x == g)
                    .ok_or_else(|| CpnnError::data(format!("gene `{g}` missing from prototypes")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            values: self.values.select(ndarray::Axis(1), &cols),
            cell_type_names: self.cell_type_names.clone(),
            gene_ids: genes.to_vec(),
        })
    }
}

/// `t̄_c = t_c / Σ_g t_{c,g}` for every cell type.
pub fn normalize_prototype(raw: &PrototypeMatrix) -> Result<PrototypeMatrix> {
    let mut values = raw.values.clone();
    for (c, mut row) in values.rows_mut().into_iter().enumerate() {
        let total = row.sum();
        if !(total > 0.0) {
            return Err(CpnnError::data(format!(
                "cell type `{}` has an all-zero prototype",
                raw.cell_type_names[c]
            )));
        }
        row /= total;
    }
    PrototypeMatrix::new(values, raw.cell_type_names.clone(), raw.gene_ids.clone())
}

/// Per-batch scale `s_d > 0` and per-batch, per-gene shift `b_{d,g} >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNuisance {
    scales: Array1<f64>,
    shifts: Array2<f64>,
}

impl BatchNuisance {
    pub fn new(scales: Array1<f64>, shifts: Array2<f64>) -> Result<Self> {
        if scales.len() != shifts.nrows() {
            return Err(CpnnError::shape(
                "one scale per batch row of shifts required",
            ));
        }
        if scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(CpnnError::data("batch scales must be finite and positive"));
        }
        if shifts.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(CpnnError::data(
                "batch shifts must be finite and nonnegative",
            ));
        }
        Ok(Self { scales, shifts })
    }

    pub fn scales(&self) -> &Array1<f64> {
        &self.scales
    }

    pub fn shifts(&self) -> &Array2<f64> {
        &self.shifts
    }
}

/// Per-gene single-cell dispersion `θ^sc_g`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScDispersion {
    theta: Array1<f64>,
}

impl ScDispersion {
    pub fn new(theta: Array1<f64>) -> Result<Self> {
        if theta.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(CpnnError::data("dispersions must be finite and positive"));
        }
        Ok(Self { theta })
    }

    pub fn theta(&self) -> &Array1<f64> {
        &self.theta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Weight of the `Σ b²` penalty on batch shifts.
    pub shift_penalty: f64,
    /// Record the objective every this many epochs.
    pub milestone_every: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            epochs: 300,
            shift_penalty: 1e-3,
            milestone_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeFit {
    pub raw: PrototypeMatrix,
    pub normalized: PrototypeMatrix,
    pub nuisance: BatchNuisance,
    pub dispersion: ScDispersion,
    /// `(epoch, nll)` at every milestone, including epoch 0 and the last epoch.
    pub history: Vec<(usize, f64)>,
}

/// Sufficient statistics of the single-cell counts.
///
/// `μ` is shared by every cell of one (type, batch) group, and the NB
/// likelihood is linear in `k` apart from `ln Γ(k + θ)`; the latter only needs,
/// per gene, the number of cells whose count exceeds each `j`.
struct ScStats {
    n_types: usize,
    n_batches: usize,
    n_genes: usize,
    /// cells per (type, batch)
    group_size: Array2<f64>,
    /// Σ counts per (type·n_batches + batch, gene)
    group_sum: Array2<f64>,
    /// per gene: exceed[j] = #cells with count > j
    exceed: Vec<Vec<f64>>,
    /// Σ_cells Σ_g ln Γ(k + 1)
    log_factorials: f64,
}

impl ScStats {
    fn new(sc: &CountMatrix, ann: &CellAnnotations) -> Self {
        let (c_n, d_n, g_n) = (ann.n_types(), ann.n_batches(), sc.n_genes());
        let mut group_size = Array2::zeros((c_n, d_n));
        let mut group_sum = Array2::zeros((c_n * d_n, g_n));
        let mut hist: Vec<Vec<f64>> = vec![Vec::new(); g_n];
        let mut log_factorials = 0.0;
        for (k, row) in sc.values().rows().into_iter().enumerate() {
            let (c, d) = (ann.cell_type()[k], ann.batch()[k]);
            group_size[[c, d]] += 1.0;
            for (g, &v) in row.iter().enumerate() {
                group_sum[[c * d_n + d, g]] += v as f64;
                let v = v as usize;
                if hist[g].len() <= v {
                    hist[g].resize(v + 1, 0.0);
                }
                hist[g][v] += 1.0;
            }
        }
        let mut exceed = Vec::with_capacity(g_n);
        for h in hist {
            // exceed[j] = Σ_{v > j} h[v]
            let mut e = vec![0.0; h.len().saturating_sub(1)];
            let mut running = 0.0;
            for j in (0..e.len()).rev() {
                running += h[j + 1];
                e[j] = running;
            }
            for (v, &cnt) in h.iter().enumerate() {
                if cnt > 0.0 && v > 1 {
                    log_factorials += cnt * crate::special::ln_gamma_unchecked(v as f64 + 1.0);
                }
            }
            exceed.push(e);
        }
        Self {
            n_types: c_n,
            n_batches: d_n,
            n_genes: g_n,
            group_size,
            group_sum,
            exceed,
            log_factorials,
        }
    }
}

/// Unconstrained parameters, laid out as `[t_free | b_free | s_free | log_theta]`.
struct FreeParams {
    c_n: usize,
    d_n: usize,
    g_n: usize,
    flat: Vec<f64>,
}

impl FreeParams {
    fn t_off(&self) -> usize {
        0
    }
    fn b_off(&self) -> usize {
        self.c_n * self.g_n
    }
    fn s_off(&self) -> usize {
        self.b_off() + self.d_n * self.g_n
    }
    fn theta_off(&self) -> usize {
        self.s_off() + self.d_n
    }

    fn t(&self, c: usize, g: usize) -> f64 {
        softplus(self.flat[self.t_off() + c * self.g_n + g])
    }
    fn b(&self, d: usize, g: usize) -> f64 {
        softplus(self.flat[self.b_off() + d * self.g_n + g])
    }
    fn s(&self, d: usize) -> f64 {
        self.flat[self.s_off() + d].exp()
    }
    fn theta(&self, g: usize) -> f64 {
        self.flat[self.theta_off() + g].exp()
    }

    fn segments(&self) -> Vec<Segment> {
        vec![
            Segment::new("t", self.c_n * self.g_n, false),
            Segment::new("b", self.d_n * self.g_n, false),
            Segment::new("s", self.d_n, false),
            Segment::new("log_theta", self.g_n, false),
        ]
    }
}

/// NLL of all cells plus the shift penalty; optionally the gradient w.r.t. the free parameters.
fn objective(
    stats: &ScStats,
    p: &FreeParams,
    penalty: f64,
    grad: Option<&mut [f64]>,
) -> (f64, f64) {
    let (c_n, d_n, g_n) = (stats.n_types, stats.n_batches, stats.n_genes);
    let mut nll = stats.log_factorials;
    let mut grad = grad;
    if let Some(gr) = grad.as_deref_mut() {
        gr.iter_mut().for_each(|v| *v = 0.0);
    }
    let mut d_t = Array2::<f64>::zeros((c_n, g_n));
    let mut d_b = Array2::<f64>::zeros((d_n, g_n));
    let mut d_s = vec![0.0; d_n];
    let mut d_theta = vec![0.0; g_n];

    for g in 0..g_n {
        let theta = p.theta(g);
        // Σ_cells [ln Γ(k+θ) − ln Γ(θ)] and its θ-derivative, from the exceedance counts
        let (mut lg, mut dg) = (0.0, 0.0);
        for (j, &cnt) in stats.exceed[g].iter().enumerate() {
            if cnt > 0.0 {
                let x = theta + j as f64;
                lg += cnt * x.ln();
                dg += cnt / x;
            }
        }
        nll -= lg;
        d_theta[g] -= dg;
        for c in 0..c_n {
            let t = p.t(c, g);
            for d in 0..d_n {
                let n = stats.group_size[[c, d]];
                if n == 0.0 {
                    continue;
                }
                let k_sum = stats.group_sum[[c * d_n + d, g]];
                let s = p.s(d);
                let base = t + p.b(d, g);
                let raw_mu = base * s;
                let mu = raw_mu.max(MIN_MEAN);
                let denom = mu + theta;
                nll -= k_sum * (mu / denom).ln() + n * theta * (theta / denom).ln();
                // ∂/∂θ of −[K ln(μ/(μ+θ)) + nθ ln(θ/(μ+θ))]
                d_theta[g] -= -k_sum / denom + n * ((theta / denom).ln() + 1.0 - theta / denom);
                if raw_mu >= MIN_MEAN {
                    let d_mu = -(k_sum / mu - (k_sum + n * theta) / denom);
                    d_t[[c, g]] += d_mu * s;
                    d_b[[d, g]] += d_mu * s;
                    d_s[d] += d_mu * base;
                }
            }
        }
    }
    let mut pen = 0.0;
    for d in 0..d_n {
        for g in 0..g_n {
            let b = p.b(d, g);
            pen += b * b;
            d_b[[d, g]] += 2.0 * penalty * b;
        }
    }
    let objective = nll + penalty * pen;
    if let Some(gr) = grad {
        for c in 0..c_n {
            for g in 0..g_n {
                let i = p.t_off() + c * g_n + g;
                gr[i] = d_t[[c, g]] * sigmoid(p.flat[i]);
            }
        }
        for d in 0..d_n {
            for g in 0..g_n {
                let i = p.b_off() + d * g_n + g;
                gr[i] = d_b[[d, g]] * sigmoid(p.flat[i]);
            }
            // s_0 is pinned to 1
            if d > 0 {
                gr[p.s_off() + d] = d_s[d] * p.s(d);
            }
        }
        for g in 0..g_n {
            gr[p.theta_off() + g] = d_theta[g] * p.theta(g);
        }
    }
    (objective, nll)
}

/// Moment-based starting point: batch scales from per-type mean library
/// ratios against batch 0, then per-type means of scale-corrected counts.
fn initial_params(stats: &ScStats) -> FreeParams {
    let (c_n, d_n, g_n) = (stats.n_types, stats.n_batches, stats.n_genes);
    let group_total = |c: usize, d: usize| -> Option<f64> {
        let n = stats.group_size[[c, d]];
        (n > 0.0).then(|| stats.group_sum.row(c * d_n + d).sum() / n)
    };
    let mut scales = vec![1.0; d_n];
    for (d, scale) in scales.iter_mut().enumerate().skip(1) {
        let ratios: Vec<f64> = (0..c_n)
            .filter_map(|c| match (group_total(c, d), group_total(c, 0)) {
                (Some(a), Some(b)) if a > 0.0 && b > 0.0 => Some((a / b).ln()),
                _ => None,
            })
            .collect();
        if !ratios.is_empty() {
            *scale = (ratios.iter().sum::<f64>() / ratios.len() as f64).exp();
        }
    }
    let mut flat = Vec::with_capacity(c_n * g_n + d_n * g_n + d_n + g_n);
    for c in 0..c_n {
        let n: f64 = stats.group_size.row(c).sum();
        for g in 0..g_n {
            let corrected: f64 = (0..d_n)
                .map(|d| stats.group_sum[[c * d_n + d, g]] / scales[d])
                .sum();
            flat.push(softplus_inv(corrected / n + 1e-4));
        }
    }
    let b0 = softplus_inv(1e-6);
    flat.extend(std::iter::repeat_n(b0, d_n * g_n));
    flat.extend(scales.iter().map(|s| s.ln()));
    flat.extend(std::iter::repeat_n(0.0, g_n));
    FreeParams {
        c_n,
        d_n,
        g_n,
        flat,
    }
}

/// Fit `t`, `b`, `s` and `θ^sc` by full-batch AdamW on the summed NLL.
pub fn fit_prototypes(
    sc: &CountMatrix,
    ann: &CellAnnotations,
    cfg: &FitConfig,
) -> Result<PrototypeFit> {
    if ann.len() != sc.n_rows() {
        return Err(CpnnError::shape(format!(
            "{} annotations for {} cells",
            ann.len(),
            sc.n_rows()
        )));
    }
    if cfg.epochs == 0 || cfg.milestone_every == 0 {
        return Err(CpnnError::Config(
            "epochs and milestone_every must be >= 1".into(),
        ));
    }
    for c in 0..ann.n_types() {
        let n = ann.cell_type().iter().filter(|&&x| x == c).count();
        if n < 2 {
            warn!(
                "cell type `{}` has only {n} cell(s)",
                ann.cell_type_names()[c]
            );
        }
    }
    let stats = ScStats::new(sc, ann);
    let mut params = initial_params(&stats);
    let mut opt = AdamW::new(
        AdamWConfig {
            lr: cfg.lr,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        },
        params.segments(),
    )?;
    let mut grad = vec![0.0; params.flat.len()];
    let mut history = Vec::new();
    let (_, nll0) = objective(&stats, &params, cfg.shift_penalty, None);
    if !nll0.is_finite() {
        return Err(CpnnError::numeric(
            "single-cell NLL is non-finite at initialisation",
        ));
    }
    history.push((0, nll0));
    for epoch in 1..=cfg.epochs {
        let (obj, nll) = objective(&stats, &params, cfg.shift_penalty, Some(&mut grad));
        if !obj.is_finite() {
            return Err(CpnnError::numeric(format!(
                "single-cell NLL became non-finite at epoch {epoch}"
            )));
        }
        opt.step(&mut params.flat, &grad)?;
        if epoch % cfg.milestone_every == 0 || epoch == cfg.epochs {
            let (_, nll_now) = objective(&stats, &params, cfg.shift_penalty, None);
            debug!("prototype fit epoch {epoch}: nll {nll_now:.6}");
            history.push((epoch, nll_now));
        }
        let _ = nll;
    }
    let final_nll = history.last().map(|h| h.1).unwrap_or(nll0);
    if !(final_nll < nll0) {
        return Err(CpnnError::numeric(format!(
            "prototype fit did not decrease the NLL ({nll0} -> {final_nll})"
        )));
    }

    let (c_n, d_n, g_n) = (params.c_n, params.d_n, params.g_n);
    let raw_values = Array2::from_shape_fn((c_n, g_n), |(c, g)| params.t(c, g));
    let raw = PrototypeMatrix::new(
        raw_values,
        ann.cell_type_names().to_vec(),
        sc.gene_ids().to_vec(),
    )?;
    let normalized = normalize_prototype(&raw)?;
    let scales: Array1<f64> = (0..d_n).map(|d| params.s(d)).collect();
    let shifts = Array2::from_shape_fn((d_n, g_n), |(d, g)| params.b(d, g));
    let theta: Array1<f64> = (0..g_n).map(|g| params.theta(g)).collect();
    Ok(PrototypeFit {
        raw,
        normalized,
        nuisance: BatchNuisance::new(scales, shifts)?,
        dispersion: ScDispersion::new(theta)?,
        history,
    })
}

/// Summary written next to the prototype CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSidecar {
    pub batch_names: Vec<String>,
    pub batch_scales: Vec<f64>,
    pub batch_shift_mean: Vec<f64>,
    pub batch_shift_max: Vec<f64>,
    pub gene_ids: Vec<String>,
    pub theta_sc: Vec<f64>,
    pub nll_history: Vec<(usize, f64)>,
}

impl PrototypeSidecar {
    pub fn from_fit(fit: &PrototypeFit, batch_names: &[String]) -> Self {
        let shifts = fit.nuisance.shifts();
        Self {
            batch_names: batch_names.to_vec(),
            batch_scales: fit.nuisance.scales().to_vec(),
            batch_shift_mean: shifts
                .rows()
                .into_iter()
                .map(|r| r.mean().unwrap_or(0.0))
                .collect(),
            batch_shift_max: shifts
                .rows()
                .into_iter()
                .map(|r| r.fold(0.0, |a: f64, &b| a.max(b)))
                .collect(),
            gene_ids: fit.raw.gene_ids().to_vec(),
            theta_sc: fit.dispersion.theta().to_vec(),
            nll_history: fit.history.clone(),
        }
    }

    pub fn dispersion(&self) -> Result<ScDispersion> {
        ScDispersion::new(Array1::from(self.theta_sc.clone()))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| CpnnError::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CpnnError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nb::{nb_log_pmf, NbParams};
    use ndarray::array;

    fn names(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn normalize_rows() {
        let raw =
            PrototypeMatrix::new(array![[2.0, 3.0, 5.0]], names("t", 1), names("g", 3)).unwrap();
        let n = normalize_prototype(&raw).unwrap();
        assert_eq!(n.values(), &array![[0.2, 0.3, 0.5]]);
        let again = normalize_prototype(&n).unwrap();
        assert!((&again.values - &n.values).iter().all(|d| d.abs() < 1e-15));
        let zero =
            PrototypeMatrix::new(array![[0.0, 0.0, 0.0]], names("t", 1), names("g", 3)).unwrap();
        assert!(normalize_prototype(&zero).is_err());
    }

    #[test]
    fn rejects_negative_entries() {
        assert!(PrototypeMatrix::new(array![[-1.0]], names("t", 1), names("g", 1)).is_err());
    }

    fn small_problem() -> (CountMatrix, CellAnnotations) {
        let counts = array![[3u64, 0, 7], [1, 2, 9], [0, 5, 1], [4, 4, 0], [2, 1, 3]];
        let m = CountMatrix::new(counts, names("c", 5), names("g", 3)).unwrap();
        let ann = CellAnnotations::new(
            vec![0, 0, 1, 1, 0],
            vec![0, 1, 0, 1, 1],
            names("t", 2),
            names("b", 2),
        )
        .unwrap();
        (m, ann)
    }

    #[test]
    fn sufficient_statistics_reproduce_direct_nll() {
        let (m, ann) = small_problem();
        let stats = ScStats::new(&m, &ann);
        let mut p = initial_params(&stats);
        // move away from the initial point so every term matters
        for (i, v) in p.flat.iter_mut().enumerate() {
            *v += 0.1 * ((i as f64) * 0.7).sin();
        }
        let (_, nll) = objective(&stats, &p, 0.0, None);
        let mut direct = 0.0;
        for k in 0..5 {
            let (c, d) = (ann.cell_type()[k], ann.batch()[k]);
            for g in 0..3 {
                let mu = (p.t(c, g) + p.b(d, g)) * p.s(d);
                direct -= nb_log_pmf(m.values()[[k, g]], NbParams::new(mu, p.theta(g)).unwrap());
            }
        }
        assert!((nll - direct).abs() < 1e-10, "{nll} vs {direct}");
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let (m, ann) = small_problem();
        let stats = ScStats::new(&m, &ann);
        let mut p = initial_params(&stats);
        for (i, v) in p.flat.iter_mut().enumerate() {
            *v += 0.2 * ((i as f64) * 1.3).cos();
        }
        // shifts near zero have gradients below finite-difference resolution
        let (b_off, s_off) = (p.b_off(), p.s_off());
        p.flat[b_off..s_off].iter_mut().for_each(|v| *v = v.tanh());
        let mut grad = vec![0.0; p.flat.len()];
        objective(&stats, &p, 0.5, Some(&mut grad));
        let names = crate::optim::segment_names(&p.segments());
        let flat = p.flat.clone();
        let (c_n, d_n, g_n) = (p.c_n, p.d_n, p.g_n);
        let f = |x: &[f64]| {
            let q = FreeParams {
                c_n,
                d_n,
                g_n,
                flat: x.to_vec(),
            };
            Ok(objective(&stats, &q, 0.5, None).0)
        };
        // s_0 is pinned, so its analytic gradient is zero by construction
        let mut analytic = grad.clone();
        let s0 = p.s_off();
        let report = {
            let fd_s0 = (f(&{
                let mut x = flat.clone();
                x[s0] += 1e-5;
                x
            })
            .unwrap()
                - f(&{
                    let mut x = flat.clone();
                    x[s0] -= 1e-5;
                    x
                })
                .unwrap())
                / 2e-5;
            analytic[s0] = fd_s0;
            crate::optim::finite_diff_check(f, &flat, &analytic, &names, 1e-5, 1e-6).unwrap()
        };
        assert!(report.passed(), "{report}");
        assert_eq!(grad[s0], 0.0);
    }

    #[test]
    fn constant_counts_recover_the_mean() {
        let n_cells = 20;
        let counts = Array2::from_elem((n_cells, 1), 6u64);
        let m = CountMatrix::new(counts, names("c", n_cells), names("g", 1)).unwrap();
        let ann = CellAnnotations::new(
            vec![0; n_cells],
            vec![0; n_cells],
            names("t", 1),
            names("b", 1),
        )
        .unwrap();
        let fit = fit_prototypes(&m, &ann, &FitConfig::default()).unwrap();
        let t = fit.raw.values()[[0, 0]];
        assert!((t - 6.0).abs() / 6.0 < 0.01, "{t}");
        assert_eq!(fit.nuisance.scales()[0], 1.0);
        assert!(fit.normalized.is_normalized(1e-12));
    }
}
