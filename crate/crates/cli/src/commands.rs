use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use ndarray::{Array1, Array2};

use cpnn::checkpoint;
use cpnn::data::{assemble_samples, CountMatrix, PatchFeatureSet, SplitPlan};
use cpnn::deconv::{self, DeconvConfig, ProportionMatrix};
use cpnn::gradcheck::{gradcheck_patch, gradcheck_slide};
use cpnn::io;
use cpnn::metrics::{self, metrics_csv, CorrelationAxis, EvalOptions};
use cpnn::model::forward_patch;
use cpnn::prototype::{self, FitConfig, PrototypeMatrix, PrototypeSidecar, ScDispersion};
use cpnn::synth::{self, SynthConfig};
use cpnn::training::{self, run_cv, write_history, CvData, CvReport, PatchSample, TrainConfig};
use cpnn::CpnnError;

use crate::{
    AxisArg, CliError, CliResult, DeconvArgs, EvaluateArgs, ExportArgs, FitArgs, GradcheckArgs,
    GradcheckMode, PredictArgs, SynthArgs, TrainOptions, TrainPatchArgs, TrainSlideArgs,
};

fn create_dir(path: &Path) -> CliResult {
    fs::create_dir_all(path).map_err(|e| {
        CliError::Core(CpnnError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn write_text(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| {
        CliError::Core(CpnnError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<(T, serde_json::Value)> {
    let text = fs::read_to_string(path).map_err(|e| {
        CliError::Core(CpnnError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(CpnnError::from)?;
    let parsed = serde_json::from_value(raw.clone())
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok((parsed, raw))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("counts");
    path.with_file_name(format!("{stem}{suffix}"))
}

fn now_unix() -> Option<u64> {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .ok()
        .map(|d| d.as_secs())
}

pub fn synth(args: SynthArgs) -> CliResult {
    let mut cfg = match &args.config {
        Some(p) => read_json::<SynthConfig>(p)?.0,
        None => SynthConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let data = synth::generate(&cfg)?;
    synth::write_dataset(&args.out, &data, &cfg)?;
    println!(
        "wrote {} cells, {} slides, {} genes to {}",
        cfg.n_cells,
        cfg.n_slides,
        cfg.n_genes,
        args.out.display()
    );
    Ok(())
}

pub fn fit_prototypes(args: FitArgs) -> CliResult {
    let rows = args.rows.unwrap_or_else(|| sibling(&args.sc, "_rows.txt"));
    let genes = args
        .genes
        .unwrap_or_else(|| sibling(&args.sc, "_genes.txt"));
    let sc = io::read_sparse_counts(&args.sc, &rows, &genes)?;
    let (cell_ids, ann) = io::read_annotations(&args.annotations)?;
    let ann = if cell_ids == sc.row_ids() {
        ann
    } else {
        let index: BTreeMap<&str, usize> = cell_ids
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect();
        let order = sc
            .row_ids()
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| CpnnError::Data(format!("cell `{id}` has no annotation")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        ann.select_rows(&order)?
    };
    let cfg = FitConfig {
        lr: args.lr,
        epochs: args.epochs,
        ..FitConfig::default()
    };
    let fit = prototype::fit_prototypes(&sc, &ann, &cfg)?;
    create_dir(&args.out)?;
    fit.normalized.write_csv(args.out.join("prototypes.csv"))?;
    fit.raw.write_csv(args.out.join("raw_prototypes.csv"))?;
    PrototypeSidecar::from_fit(&fit, ann.batch_names())
        .write(args.out.join("prototype_fit.json"))?;
    let (first, last) = (fit.history[0].1, fit.history[fit.history.len() - 1].1);
    println!(
        "fitted {} types × {} genes; nll {first} -> {last}",
        fit.normalized.n_types(),
        fit.normalized.n_genes()
    );
    Ok(())
}

pub fn deconvolve(args: DeconvArgs) -> CliResult {
    let proto = PrototypeMatrix::read_csv(&args.prototypes)?;
    let bulk = io::read_dense_counts(&args.bulk)?.with_gene_order(proto.gene_ids())?;
    let mut cfg = DeconvConfig {
        lr: args.lr,
        steps: args.steps,
        ..DeconvConfig::default()
    };
    let disp = match args.fixed_theta {
        Some(theta) => {
            cfg.reuse_sc_dispersion = false;
            cfg.fixed_theta = theta;
            ScDispersion::new(Array1::from_elem(proto.n_genes(), theta))?
        }
        None => {
            let path = args
                .fit
                .unwrap_or_else(|| args.prototypes.with_file_name("prototype_fit.json"));
            let sidecar = PrototypeSidecar::read(&path)?;
            if sidecar.gene_ids != proto.gene_ids() {
                return Err(CliError::Core(CpnnError::Data(format!(
                    "{} and {} list different genes",
                    path.display(),
                    args.prototypes.display()
                ))));
            }
            sidecar.dispersion()?
        }
    };
    let props = deconv::deconvolve(&bulk, &proto, &disp, &cfg)?;
    props.write_csv(&args.out)?;
    println!("deconvolved {} samples", props.row_ids().len());
    Ok(())
}

/// Effective configuration: defaults, then `--config`, then flags.
/// Returns whether the fold count was set explicitly.
fn train_config(o: &TrainOptions, patch: bool) -> CliResult<(TrainConfig, bool)> {
    let (mut cfg, folds_set) = match &o.config {
        Some(p) => {
            let (cfg, raw) = read_json::<TrainConfig>(p)?;
            (cfg, raw.get("folds").is_some())
        }
        None => (TrainConfig::default(), false),
    };
    cfg.seed = o.seed;
    if let Some(v) = o.lr {
        cfg.lr = v;
    }
    if let Some(v) = o.weight_decay {
        cfg.weight_decay = v;
    }
    if let Some(v) = o.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = o.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = o.lambda {
        if patch {
            cfg.patch_lambda = v;
        } else {
            cfg.lambda = v;
        }
    }
    if let Some(v) = o.patience {
        cfg.patience = v;
    }
    if let Some(v) = o.folds {
        cfg.folds = v;
    }
    if let Some(v) = o.validation_count {
        cfg.validation_count = v;
    }
    if o.hidden.is_some() {
        cfg.model.hidden = o.hidden;
    }
    if o.no_activation {
        cfg.model.activation = false;
    }
    if o.no_prototype_init {
        cfg.flags.prototype_init = false;
    }
    if o.no_modality_correction {
        cfg.flags.modality_correction = false;
    }
    if o.freeze_prototype {
        cfg.flags.update_prototype = false;
    }
    if o.no_regularize {
        cfg.flags.regularize = false;
    }
    if o.val_includes_reg {
        cfg.val_includes_reg = true;
    }
    Ok((cfg, folds_set || o.folds.is_some()))
}

fn split_plan(
    o: &TrainOptions,
    slide_ids: Vec<String>,
    cfg: &mut TrainConfig,
) -> CliResult<SplitPlan> {
    let plan = match &o.splits {
        Some(p) => io::read_splits(p, o.validation.as_deref())?,
        None => {
            let plan = SplitPlan::random(slide_ids, cfg.folds, cfg.seed, None)?;
            match &o.validation {
                Some(v) => plan.with_validation_ids(io::read_validation_ids(v)?)?,
                None => plan,
            }
        }
    };
    cfg.folds = plan.n_folds();
    Ok(plan)
}

fn eval_options(o: &TrainOptions) -> EvalOptions {
    EvalOptions {
        axis: CorrelationAxis::PerGene,
        log1p: o.eval_log1p,
    }
}

/// Persist configuration, folds, per-fold models and metrics, then print the summary.
fn write_cv(
    o: &TrainOptions,
    cfg: &TrainConfig,
    plan: &SplitPlan,
    report: &CvReport,
    genes: &[String],
    row_key: &str,
    row_labels: impl Fn(&[String]) -> Vec<String>,
) -> CliResult {
    create_dir(&o.out)?;
    let cfg_json = serde_json::to_string_pretty(cfg).map_err(CpnnError::from)?;
    write_text(&o.out.join("config.json"), &(cfg_json + "\n"))?;
    io::write_splits(o.out.join("splits.csv"), plan)?;
    let created = if o.no_timestamp { None } else { now_unix() };
    let mut summary = String::from("fold,pcc,scc,best_epoch,n_test\n");
    for fold in &report.folds {
        let dir = o.out.join(format!("fold{}", fold.fold));
        create_dir(&dir)?;
        checkpoint::save(
            dir.join("checkpoint.json"),
            &fold.outcome.params,
            cfg.seed,
            created,
        )?;
        write_history(dir.join("history.csv"), &fold.outcome.history)?;
        io::write_float_table(
            dir.join("predictions.csv"),
            row_key,
            &row_labels(&fold.test_ids),
            genes,
            &fold.predictions,
        )?;
        write_text(&dir.join("metrics.csv"), &metrics_csv(&fold.report, "gene"))?;
        summary.push_str(&format!(
            "{},{:?},{:?},{},{}\n",
            fold.fold,
            fold.report.mean_pcc,
            fold.report.mean_scc,
            fold.outcome.best_epoch,
            fold.test_ids.len()
        ));
    }
    write_text(&o.out.join("cv_metrics.csv"), &summary)?;
    println!("{}", report.summary_line());
    Ok(())
}

pub fn train_slide(args: TrainSlideArgs) -> CliResult {
    let o = &args.common;
    let (mut cfg, _) = train_config(o, false)?;
    let proto0 = PrototypeMatrix::read_csv(&o.prototypes)?;
    let counts = io::read_dense_counts(&args.bulk)?.with_gene_order(proto0.gene_ids())?;
    let samples = assemble_samples(&counts, io::read_feature_dir(&o.features)?)?;
    let wref = ProportionMatrix::read_csv(&args.wref)?;
    let ids: Vec<String> = samples.iter().map(|s| s.slide_id().to_string()).collect();
    let plan = split_plan(o, ids, &mut cfg)?;
    let report = run_cv(
        CvData::Slide {
            samples: &samples,
            wref: &wref,
        },
        &proto0,
        &plan,
        &cfg,
        eval_options(o),
    )?;
    write_cv(
        o,
        &cfg,
        &plan,
        &report,
        proto0.gene_ids(),
        "slide_id",
        |ids| ids.to_vec(),
    )
}

pub fn train_patch(args: TrainPatchArgs) -> CliResult {
    let o = &args.common;
    let (mut cfg, folds_set) = train_config(o, true)?;
    let proto0 = PrototypeMatrix::read_csv(&o.prototypes)?;
    let mut spots: BTreeMap<String, CountMatrix> =
        io::read_count_dir(&args.spots)?.into_iter().collect();
    let samples = io::read_feature_dir(&o.features)?
        .into_iter()
        .map(|f| {
            let s = spots.remove(f.slide_id()).ok_or_else(|| {
                CpnnError::Data(format!("no spot counts for slide `{}`", f.slide_id()))
            })?;
            PatchSample::new(f, s.with_gene_order(proto0.gene_ids())?)
        })
        .collect::<Result<Vec<_>, CpnnError>>()?;
    if !folds_set && o.splits.is_none() {
        cfg.folds = samples.len();
    }
    let ids: Vec<String> = samples.iter().map(|s| s.slide_id().to_string()).collect();
    let plan = split_plan(o, ids, &mut cfg)?;
    let report = run_cv(
        CvData::Patch { samples: &samples },
        &proto0,
        &plan,
        &cfg,
        eval_options(o),
    )?;
    let patch_ids: BTreeMap<&str, &[String]> = samples
        .iter()
        .map(|s| (s.slide_id(), s.features().patch_ids()))
        .collect();
    write_cv(
        o,
        &cfg,
        &plan,
        &report,
        proto0.gene_ids(),
        "spot_id",
        |ids| {
            ids.iter()
                .flat_map(|id| {
                    patch_ids[id.as_str()]
                        .iter()
                        .map(move |p| format!("{id}/{p}"))
                })
                .collect()
        },
    )
}

pub fn predict(args: PredictArgs) -> CliResult {
    let (params, _) = checkpoint::load(&args.checkpoint)?;
    let features = io::read_feature_dir(&args.features)?;
    if args.patch {
        create_dir(&args.out)?;
        for f in &features {
            let trace = forward_patch(&params, f)?;
            io::write_float_table(
                args.out.join(format!("{}.csv", f.slide_id())),
                "patch_id",
                f.patch_ids(),
                &params.gene_ids,
                &trace.pred,
            )?;
        }
        println!("wrote per-patch predictions for {} slides", features.len());
        return Ok(());
    }
    let libraries: Vec<f64> = match (&args.bulk, args.library) {
        (Some(path), _) => {
            let bulk = io::read_dense_counts(path)?;
            let totals = bulk.row_totals();
            features
                .iter()
                .map(|f| {
                    bulk.row_index(f.slide_id())
                        .map(|r| totals[r] as f64)
                        .ok_or_else(|| {
                            CpnnError::Data(format!(
                                "slide `{}` is not in {}",
                                f.slide_id(),
                                path.display()
                            ))
                        })
                })
                .collect::<Result<_, _>>()?
        }
        (None, Some(l)) => vec![l; features.len()],
        (None, None) => {
            return Err(CliError::Usage(
                "slide predictions need --bulk or --library".into(),
            ))
        }
    };
    let refs: Vec<&PatchFeatureSet> = features.iter().collect();
    let pred = training::predict_slides(&params, &refs, &libraries)?;
    let ids: Vec<String> = features.iter().map(|f| f.slide_id().to_string()).collect();
    io::write_float_table(&args.out, "slide_id", &ids, &params.gene_ids, &pred)?;
    println!("wrote predictions for {} slides", ids.len());
    Ok(())
}

pub fn evaluate(args: EvaluateArgs) -> CliResult {
    let pred = io::read_float_table(&args.pred)?;
    let truth = io::read_float_table(&args.truth)?;
    let row_of: BTreeMap<&str, usize> = truth
        .row_ids
        .iter()
        .enumerate()
        .map(|(i, r)| (r.as_str(), i))
        .collect();
    let col_of: BTreeMap<&str, usize> = truth
        .columns
        .iter()
        .enumerate()
        .map(|(j, c)| (c.as_str(), j))
        .collect();
    let missing = |what: &str, id: &str| {
        CpnnError::Data(format!(
            "{what} `{id}` is missing from {}",
            args.truth.display()
        ))
    };
    let rows = pred
        .row_ids
        .iter()
        .map(|r| {
            row_of
                .get(r.as_str())
                .copied()
                .ok_or_else(|| missing("row", r))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let cols = pred
        .columns
        .iter()
        .map(|c| {
            col_of
                .get(c.as_str())
                .copied()
                .ok_or_else(|| missing("column", c))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let aligned =
        Array2::from_shape_fn(pred.values.dim(), |(i, j)| truth.values[[rows[i], cols[j]]]);
    let (axis, labels, key) = match args.axis {
        AxisArg::PerGene => (CorrelationAxis::PerGene, &pred.columns, "gene"),
        AxisArg::PerSample => (CorrelationAxis::PerSample, &pred.row_ids, "sample"),
    };
    let opts = EvalOptions {
        axis,
        log1p: args.log1p,
    };
    let report = metrics::evaluate(pred.values.view(), aligned.view(), labels, opts)?;
    write_text(&args.out, &metrics_csv(&report, key))?;
    println!("{}", report.summary_line());
    Ok(())
}

pub fn gradcheck(args: GradcheckArgs) -> CliResult {
    let mut runs = Vec::new();
    if matches!(args.mode, GradcheckMode::Slide | GradcheckMode::Both) {
        runs.push(("slide", gradcheck_slide(args.seed)?));
    }
    if matches!(args.mode, GradcheckMode::Patch | GradcheckMode::Both) {
        runs.push(("patch", gradcheck_patch(args.seed)?));
    }
    let mut ok = true;
    for (mode, report) in &runs {
        println!("{report} mode={mode}");
        ok &= report.passed();
    }
    if ok {
        Ok(())
    } else {
        Err(CliError::Check)
    }
}

pub fn export_weights(args: ExportArgs) -> CliResult {
    let (params, _) = checkpoint::load(&args.checkpoint)?;
    let features = io::read_feature_dir(&args.features)?;
    let weights = training::export_weights(&params, &features)?;
    weights.write_csv(&args.out)?;
    println!("wrote mean weights for {} slides", features.len());
    Ok(())
}
