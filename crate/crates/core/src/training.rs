//! Slide- and patch-level training loops, early stopping and cross-validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::{debug, info};
use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CountMatrix, PatchFeatureSet, SampleRecord, SplitPlan};
use crate::deconv::ProportionMatrix;
use crate::error::{CpnnError, Result};
use crate::losses::{loss_patch, loss_slide, LossConfig, LossParts};
use crate::metrics::{evaluate, mean_std, CorrelationAxis, EvalOptions, EvalReport};
use crate::model::{
    backward_patch, backward_slide, compute_weights, forward_patch, forward_slide, AblationFlags,
    CpnnGradients, CpnnParameters, ModelConfig,
};
use crate::optim::{AdamW, AdamWConfig};
use crate::prototype::PrototypeMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub patience: usize,
    pub seed: u64,
    pub folds: usize,
    pub validation_count: usize,
    /// Include the regularizer in the early-stopping loss.
    pub val_includes_reg: bool,
    pub flags: AblationFlags,
    pub model: ModelConfig,
    pub patch_log1p: bool,
    pub patch_lambda: f64,
    pub patch_axis: CorrelationAxis,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let loss = LossConfig::default();
        Self {
            lr: 1e-3,
            weight_decay: 0.01,
            epochs: 500,
            batch_size: 16,
            lambda: loss.lambda,
            patience: 20,
            seed: 0,
            folds: 4,
            validation_count: 30,
            val_includes_reg: false,
            flags: AblationFlags::full(),
            model: ModelConfig::default(),
            patch_log1p: loss.patch_log1p,
            patch_lambda: loss.patch_lambda,
            patch_axis: loss.patch_axis,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(CpnnError::Config(
                "epochs, batch_size and patience must be >= 1".into(),
            ));
        }
        if self.folds < 2 {
            return Err(CpnnError::Config(format!(
                "folds must be >= 2, got {}",
                self.folds
            )));
        }
        if !(self.lambda >= 0.0 && self.patch_lambda >= 0.0) {
            return Err(CpnnError::Config(
                "regularization weights must be nonnegative".into(),
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(CpnnError::Config(format!(
                "invalid learning rate {}",
                self.lr
            )));
        }
        Ok(())
    }

    /// Loss settings after applying the regularizer flag.
    pub fn loss_config(&self) -> LossConfig {
        let on = self.flags.regularize;
        LossConfig {
            lambda: if on { self.lambda } else { 0.0 },
            patch_log1p: self.patch_log1p,
            patch_lambda: if on { self.patch_lambda } else { 0.0 },
            patch_axis: self.patch_axis,
        }
    }

    fn optimizer(&self, params: &CpnnParameters) -> Result<AdamW> {
        AdamW::new(
            AdamWConfig {
                lr: self.lr,
                weight_decay: self.weight_decay,
                ..AdamWConfig::default()
            },
            params.segments(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Mean fit term (NB or correlation) over the epoch's mini-batches.
    pub fit: f64,
    pub reg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: CpnnParameters,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub optimizer_steps: u64,
    /// How many mini-batch gradients each slide contributed to.
    pub gradient_contributions: BTreeMap<String, usize>,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,nb,reg\n");
    for r in history {
        let _ = writeln!(
            s,
            "{},{:?},{:?},{:?},{:?}",
            r.epoch, r.train_loss, r.val_loss, r.fit, r.reg
        );
    }
    s
}

pub fn write_history(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, history_csv(history)).map_err(|e| CpnnError::io(path, e))
}

/// One training slide with its reference proportions.
struct SlideItem<'a> {
    record: &'a SampleRecord,
    wref: ArrayView1<'a, f64>,
}

fn slide_items<'a>(
    records: &'a [SampleRecord],
    wref: &'a ProportionMatrix,
) -> Result<Vec<SlideItem<'a>>> {
    records
        .iter()
        .map(|r| {
            let w = wref.row(r.slide_id()).ok_or_else(|| {
                CpnnError::data(format!(
                    "no reference proportions for slide `{}`",
                    r.slide_id()
                ))
            })?;
            Ok(SlideItem { record: r, wref: w })
        })
        .collect()
}

fn finish_grads(params: &CpnnParameters, mut grads: CpnnGradients) -> CpnnGradients {
    params.mask_gradients(&mut grads);
    grads
}

/// Slide-level loss of one mini-batch and its gradient, in flat parameter order.
pub fn slide_batch_loss(
    params: &CpnnParameters,
    batch: &[&SampleRecord],
    wref: &[ArrayView1<f64>],
    lambda: f64,
) -> Result<(LossParts, CpnnGradients)> {
    let traces = batch
        .par_iter()
        .map(|r| forward_slide(params, r.features(), r.total_count() as f64))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<_> = batch.iter().map(|r| r.target_counts().view()).collect();
    let proto = params.prototype();
    let theta = params.theta();
    let (parts, up) = loss_slide(
        &traces,
        &targets,
        theta.view(),
        wref,
        proto.view(),
        params.proto_init.view(),
        lambda,
    )?;
    let per_slide = (0..batch.len())
        .into_par_iter()
        .map(|i| {
            backward_slide(
                params,
                &traces[i],
                up.d_mu_bar[i].view(),
                up.d_mean_weight[i].view(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grads = CpnnGradients::zeros(params.dims());
    for g in &per_slide {
        grads.add_assign(g);
    }
    grads.add_prototype_grad(params, up.d_proto.view());
    grads.add_theta_grad(params, up.d_theta.view());
    Ok((parts, finish_grads(params, grads)))
}

/// Early-stopping loss over all validation slides.
fn slide_validation_loss(
    params: &CpnnParameters,
    val: &[SlideItem],
    lambda: f64,
    include_reg: bool,
) -> Result<f64> {
    let batch: Vec<&SampleRecord> = val.iter().map(|v| v.record).collect();
    let wref: Vec<_> = val.iter().map(|v| v.wref).collect();
    let (parts, _) = slide_batch_loss(params, &batch, &wref, lambda)?;
    Ok(if include_reg { parts.total } else { parts.fit })
}

/// Generic loop: shuffled mini-batches, AdamW, per-epoch validation, patience.
fn run_training<F, V>(
    mut params: CpnnParameters,
    train_ids: &[String],
    cfg: &TrainConfig,
    mut batch_loss: F,
    mut val_loss: V,
) -> Result<TrainOutcome>
where
    F: FnMut(&CpnnParameters, &[usize]) -> Result<(LossParts, CpnnGradients)>,
    V: FnMut(&CpnnParameters) -> Result<f64>,
{
    let n = train_ids.len();
    let mut opt = cfg.optimizer(&params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut flat = params.to_flat();
    let mut history = Vec::new();
    let mut contributions: BTreeMap<String, usize> =
        train_ids.iter().map(|s| (s.clone(), 0)).collect();
    let mut best = (f64::INFINITY, 0usize, params.clone());
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut fit, mut reg) = (0.0, 0.0, 0.0);
        let n_batches = order.chunks(cfg.batch_size).len();
        for chunk in order.chunks(cfg.batch_size) {
            let (parts, grads) = batch_loss(&params, chunk)?;
            for &i in chunk {
                *contributions.get_mut(&train_ids[i]).expect("known id") += 1;
            }
            opt.step(&mut flat, &grads.to_flat())?;
            params.set_flat(&flat)?;
            total += parts.total;
            fit += parts.fit;
            reg += parts.reg;
        }
        let m = n_batches as f64;
        let v = val_loss(&params)?;
        if !v.is_finite() {
            return Err(CpnnError::numeric(format!(
                "validation loss is non-finite at epoch {epoch}"
            )));
        }
        history.push(EpochRecord {
            epoch,
            train_loss: total / m,
            val_loss: v,
            fit: fit / m,
            reg: reg / m,
        });
        debug!("epoch {epoch}: train {:.6} val {v:.6}", total / m);
        if v < best.0 {
            best = (v, epoch, params.clone());
        } else if epoch - best.1 >= cfg.patience {
            info!("early stop at epoch {epoch}, best epoch {}", best.1);
            break;
        }
    }
    Ok(TrainOutcome {
        params: best.2,
        history,
        best_epoch: best.1,
        optimizer_steps: opt.step_count(),
        gradient_contributions: contributions,
    })
}

/// Train on slide-level counts with the NB loss.
pub fn train_slide(
    train: &[SampleRecord],
    val: &[SampleRecord],
    proto0: &PrototypeMatrix,
    wref: &ProportionMatrix,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(CpnnError::data("empty training set"));
    }
    if val.is_empty() {
        return Err(CpnnError::data("validation set is empty"));
    }
    check_genes(
        train.iter().chain(val).map(|r| r.target_counts().len()),
        proto0,
    )?;
    let items = slide_items(train, wref)?;
    let val_items = slide_items(val, wref)?;
    let params = CpnnParameters::init(
        proto0,
        train[0].features().dim(),
        &cfg.model,
        cfg.flags,
        cfg.seed,
    )?;
    let lambda = cfg.loss_config().lambda;
    let ids: Vec<String> = train.iter().map(|r| r.slide_id().to_string()).collect();
    run_training(
        params,
        &ids,
        cfg,
        |p, idx| {
            let batch: Vec<&SampleRecord> = idx.iter().map(|&i| items[i].record).collect();
            let w: Vec<_> = idx.iter().map(|&i| items[i].wref).collect();
            slide_batch_loss(p, &batch, &w, lambda)
        },
        |p| slide_validation_loss(p, &val_items, lambda, cfg.val_includes_reg),
    )
}

fn check_genes(lens: impl Iterator<Item = usize>, proto0: &PrototypeMatrix) -> Result<()> {
    for len in lens {
        if len != proto0.n_genes() {
            return Err(CpnnError::shape(format!(
                "targets have {len} genes but prototypes have {}",
                proto0.n_genes()
            )));
        }
    }
    Ok(())
}

/// One slide of patch-level data: features and spot counts, row-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample {
    features: PatchFeatureSet,
    spots: CountMatrix,
}

impl PatchSample {
    pub fn new(features: PatchFeatureSet, spots: CountMatrix) -> Result<Self> {
        if features.patch_ids() != spots.row_ids() {
            return Err(CpnnError::data(format!(
                "spot rows of slide `{}` do not match its patch ids",
                features.slide_id()
            )));
        }
        Ok(Self { features, spots })
    }

    pub fn slide_id(&self) -> &str {
        self.features.slide_id()
    }

    pub fn features(&self) -> &PatchFeatureSet {
        &self.features
    }

    pub fn spots(&self) -> &CountMatrix {
        &self.spots
    }
}

/// Patch-level loss averaged over the slides of a mini-batch.
pub fn patch_batch_loss(
    params: &CpnnParameters,
    batch: &[&PatchSample],
    cfg: &LossConfig,
) -> Result<(LossParts, CpnnGradients)> {
    let proto = params.prototype();
    let per_slide = batch
        .par_iter()
        .map(|s| {
            let trace = forward_patch(params, s.features())?;
            let (parts, d_pred, d_proto) = loss_patch(
                trace.pred.view(),
                s.spots().values().view(),
                proto.view(),
                params.proto_init.view(),
                cfg,
            )?;
            let mut g = backward_patch(params, &trace, d_pred.view())?;
            g.add_prototype_grad(params, d_proto.view());
            Ok((parts, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let m = batch.len() as f64;
    let mut grads = CpnnGradients::zeros(params.dims());
    let (mut total, mut fit, mut reg) = (0.0, 0.0, 0.0);
    for (parts, g) in &per_slide {
        grads.add_assign(g);
        total += parts.total;
        fit += parts.fit;
        reg += parts.reg;
    }
    grads.scale(1.0 / m);
    Ok((
        LossParts {
            total: total / m,
            fit: fit / m,
            reg: reg / m,
        },
        finish_grads(params, grads),
    ))
}

/// Train on spot-level counts with the correlation loss.
pub fn train_patch(
    train: &[PatchSample],
    val: &[PatchSample],
    proto0: &PrototypeMatrix,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(CpnnError::data("empty training set"));
    }
    if val.is_empty() {
        return Err(CpnnError::data("validation set is empty"));
    }
    check_genes(train.iter().chain(val).map(|s| s.spots().n_genes()), proto0)?;
    let params = CpnnParameters::init(
        proto0,
        train[0].features().dim(),
        &cfg.model,
        cfg.flags,
        cfg.seed,
    )?;
    let loss_cfg = cfg.loss_config();
    let ids: Vec<String> = train.iter().map(|s| s.slide_id().to_string()).collect();
    let val_refs: Vec<&PatchSample> = val.iter().collect();
    run_training(
        params,
        &ids,
        cfg,
        |p, idx| {
            let batch: Vec<&PatchSample> = idx.iter().map(|&i| &train[i]).collect();
            patch_batch_loss(p, &batch, &loss_cfg)
        },
        |p| {
            let (parts, _) = patch_batch_loss(p, &val_refs, &loss_cfg)?;
            Ok(if cfg.val_includes_reg {
                parts.total
            } else {
                parts.fit
            })
        },
    )
}

/// Expected counts `μ̄` for each slide at the given library sizes.
pub fn predict_slides(
    params: &CpnnParameters,
    features: &[&PatchFeatureSet],
    libraries: &[f64],
) -> Result<Array2<f64>> {
    if features.len() != libraries.len() {
        return Err(CpnnError::shape("one library size per slide required"));
    }
    let rows = features
        .par_iter()
        .zip(libraries.par_iter())
        .map(|(f, &l)| forward_slide(params, f, l).map(|t| t.mu_bar))
        .collect::<Result<Vec<_>>>()?;
    stack_rows(&rows, params.dims().n_genes)
}

fn stack_rows(rows: &[Array1<f64>], width: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((rows.len(), width));
    for (i, r) in rows.iter().enumerate() {
        out.row_mut(i).assign(r);
    }
    Ok(out)
}

/// Mean patch weights `W̄` per slide.
pub fn export_weights(
    params: &CpnnParameters,
    features: &[PatchFeatureSet],
) -> Result<ProportionMatrix> {
    let rows = features
        .par_iter()
        .map(|f| {
            let w = compute_weights(&params.head, f)?;
            Ok(w.mean_axis(ndarray::Axis(0)).expect("at least one patch"))
        })
        .collect::<Result<Vec<_>>>()?;
    let ids = features.iter().map(|f| f.slide_id().to_string()).collect();
    ProportionMatrix::new(
        stack_rows(&rows, params.dims().n_types)?,
        ids,
        params.cell_type_names.clone(),
    )
}

/// Validation slides for one training fold: the configured ids that fall in
/// the fold if any, otherwise a seeded sample of `min(count, ⌈20%⌉)` groups
/// (never all of them). A fold with one slide validates on itself.
pub fn choose_validation(
    train_ids: &[String],
    preset: &[String],
    patients: Option<&BTreeMap<String, String>>,
    count: usize,
    seed: u64,
) -> (Vec<String>, Vec<String>) {
    let preset: Vec<String> = preset
        .iter()
        .filter(|v| train_ids.contains(v))
        .cloned()
        .collect();
    if !preset.is_empty() && preset.len() < train_ids.len() {
        let fit = train_ids
            .iter()
            .filter(|s| !preset.contains(s))
            .cloned()
            .collect();
        return (fit, preset);
    }
    if train_ids.len() == 1 {
        return (train_ids.to_vec(), train_ids.to_vec());
    }
    let group_of = |s: &String| {
        patients
            .and_then(|p| p.get(s))
            .cloned()
            .unwrap_or_else(|| s.clone())
    };
    let mut groups: Vec<String> = train_ids
        .iter()
        .map(group_of)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if groups.len() == 1 {
        return (train_ids.to_vec(), train_ids.to_vec());
    }
    let cap = groups.len().div_ceil(5);
    let k = count.min(cap).clamp(1, groups.len() - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    groups.shuffle(&mut rng);
    let chosen: BTreeSet<String> = groups.into_iter().take(k).collect();
    let (val, fit): (Vec<String>, Vec<String>) = train_ids
        .iter()
        .cloned()
        .partition(|s| chosen.contains(&group_of(s)));
    (fit, val)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvMode {
    Slide,
    Patch,
}

/// Everything `run_cv` needs besides the split and config.
pub enum CvData<'a> {
    Slide {
        samples: &'a [SampleRecord],
        wref: &'a ProportionMatrix,
    },
    Patch {
        samples: &'a [PatchSample],
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub train_ids: Vec<String>,
    pub validation_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub outcome: TrainOutcome,
    pub report: EvalReport,
    /// Held-out predictions, rows in `test_ids` order (slide mode) or stacked spots (patch mode).
    pub predictions: Array2<f64>,
    pub truth: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
    pub mean_pcc: f64,
    pub std_pcc: f64,
    pub mean_scc: f64,
    pub std_scc: f64,
}

impl CvReport {
    pub fn summary_line(&self) -> String {
        format!(
            "folds={} mean_pcc={} std_pcc={} mean_scc={} std_scc={}",
            self.folds.len(),
            self.mean_pcc,
            self.std_pcc,
            self.mean_scc,
            self.std_scc
        )
    }
}

/// Train, predict and evaluate every fold of `split`.
pub fn run_cv(
    data: CvData,
    proto0: &PrototypeMatrix,
    split: &SplitPlan,
    cfg: &TrainConfig,
    eval: EvalOptions,
) -> Result<CvReport> {
    cfg.validate()?;
    let patients: Option<BTreeMap<String, String>> = split.patients().map(|p| {
        split
            .slide_ids()
            .iter()
            .cloned()
            .zip(p.iter().cloned())
            .collect()
    });
    let ids_in_data: Vec<String> = match &data {
        CvData::Slide { samples, .. } => samples.iter().map(|s| s.slide_id().to_string()).collect(),
        CvData::Patch { samples } => samples.iter().map(|s| s.slide_id().to_string()).collect(),
    };
    let index: BTreeMap<&str, usize> = ids_in_data
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    for id in split.slide_ids() {
        if !index.contains_key(id.as_str()) {
            return Err(CpnnError::data(format!(
                "split names slide `{id}` which has no data"
            )));
        }
    }
    let mut folds = Vec::with_capacity(split.n_folds());
    for fold in 0..split.n_folds() {
        let test_ids = split.test_ids(fold);
        if test_ids.is_empty() {
            return Err(CpnnError::data(format!("fold {fold} has no test slides")));
        }
        let (fit_ids, val_ids) = choose_validation(
            &split.train_ids(fold),
            split.validation_ids(),
            patients.as_ref(),
            cfg.validation_count,
            cfg.seed.wrapping_add(fold as u64),
        );
        info!(
            "fold {fold}: {} train, {} validation, {} test",
            fit_ids.len(),
            val_ids.len(),
            test_ids.len()
        );
        let fold_cfg = TrainConfig {
            seed: cfg.seed.wrapping_add(fold as u64),
            ..cfg.clone()
        };
        let pick = |ids: &[String]| ids.iter().map(|s| index[s.as_str()]).collect::<Vec<_>>();
        let result = match &data {
            CvData::Slide { samples, wref } => {
                let take = |ids: &[String]| {
                    pick(ids)
                        .into_iter()
                        .map(|i| samples[i].clone())
                        .collect::<Vec<_>>()
                };
                let (train, val, test) = (take(&fit_ids), take(&val_ids), take(&test_ids));
                let outcome = train_slide(&train, &val, proto0, wref, &fold_cfg)?;
                let feats: Vec<&PatchFeatureSet> = test.iter().map(|s| s.features()).collect();
                let libs: Vec<f64> = test.iter().map(|s| s.total_count() as f64).collect();
                let pred = predict_slides(&outcome.params, &feats, &libs)?;
                let mut truth = Array2::zeros(pred.dim());
                for (i, s) in test.iter().enumerate() {
                    truth
                        .row_mut(i)
                        .assign(&s.target_counts().mapv(|v| v as f64));
                }
                (outcome, pred, truth)
            }
            CvData::Patch { samples } => {
                let take = |ids: &[String]| {
                    pick(ids)
                        .into_iter()
                        .map(|i| samples[i].clone())
                        .collect::<Vec<_>>()
                };
                let (train, val, test) = (take(&fit_ids), take(&val_ids), take(&test_ids));
                let outcome = train_patch(&train, &val, proto0, &fold_cfg)?;
                let mut preds = Vec::new();
                let mut truths = Vec::new();
                for s in &test {
                    let t = forward_patch(&outcome.params, s.features())?;
                    preds.extend(t.pred.rows().into_iter().map(|r| r.to_owned()));
                    truths.extend(
                        s.spots()
                            .values()
                            .rows()
                            .into_iter()
                            .map(|r| r.mapv(|v| v as f64)),
                    );
                }
                let g = proto0.n_genes();
                (outcome, stack_rows(&preds, g)?, stack_rows(&truths, g)?)
            }
        };
        let (outcome, predictions, truth) = result;
        let labels: Vec<String> = match eval.axis {
            CorrelationAxis::PerGene => proto0.gene_ids().to_vec(),
            CorrelationAxis::PerSample => (0..predictions.nrows())
                .map(|i| format!("row{i}"))
                .collect(),
        };
        let report = evaluate(predictions.view(), truth.view(), &labels, eval)?;
        info!("fold {fold}: {}", report.summary_line());
        folds.push(FoldResult {
            fold,
            train_ids: fit_ids,
            validation_ids: val_ids,
            test_ids,
            outcome,
            report,
            predictions,
            truth,
        });
    }
    let pcc: Vec<f64> = folds.iter().map(|f| f.report.mean_pcc).collect();
    let scc: Vec<f64> = folds.iter().map(|f| f.report.mean_scc).collect();
    let (mean_pcc, std_pcc) = mean_std(&pcc);
    let (mean_scc, std_scc) = mean_std(&scc);
    Ok(CvReport {
        folds,
        mean_pcc,
        std_pcc,
        mean_scc,
        std_scc,
    })
}
