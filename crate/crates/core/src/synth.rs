//! Synthetic datasets sampled from the model's own generative assumptions.
//!
//! Every recovery test in the crate runs against data from [`generate`]:
//! prototypes, batch nuisances, slide proportions, patch weights, modality
//! correction and counts are all drawn from one seeded generator, and the
//! drawn values are returned as [`SynthTruth`].

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{CellAnnotations, CountMatrix, PatchFeatureSet, SampleRecord};
use crate::error::{CpnnError, Result};
use crate::io;
use crate::prototype::{BatchNuisance, PrototypeMatrix};
use crate::special::softmax_in_place;

/// Draw one negative-binomial count as a gamma-Poisson mixture:
/// `rate ~ Gamma(θ, μ/θ)`, `k ~ Poisson(rate)`.
pub fn nb_sample<R: Rng + ?Sized>(mu: f64, theta: f64, rng: &mut R) -> Result<u64> {
    if !(mu.is_finite() && mu > 0.0 && theta.is_finite() && theta > 0.0) {
        return Err(CpnnError::numeric(format!(
            "invalid NB parameters mu={mu} theta={theta}"
        )));
    }
    let rate = Gamma::new(theta, mu / theta)
        .map_err(|e| CpnnError::numeric(format!("gamma({theta}, {}): {e}", mu / theta)))?
        .sample(rng);
    poisson_sample(rate, rng)
}

fn poisson_sample<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> Result<u64> {
    if rate <= 0.0 {
        return Ok(0);
    }
    let k: f64 = Poisson::new(rate)
        .map_err(|e| CpnnError::numeric(format!("poisson({rate}): {e}")))?
        .sample(rng);
    Ok(k as u64)
}

/// Dirichlet draw with a symmetric concentration, via normalised gamma draws.
pub fn dirichlet_sample<R: Rng + ?Sized>(alpha: f64, dim: usize, rng: &mut R) -> Array1<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("validated concentration");
    loop {
        let draw: Array1<f64> = (0..dim).map(|_| gamma.sample(rng)).collect();
        let total = draw.sum();
        if total > 0.0 && total.is_finite() {
            return draw / total;
        }
    }
}

/// Gap between single-cell-derived prototypes and slide-level measurements:
/// `α*_g = exp(N(0, alpha_spread²))`, `β*_g = beta_level · U(0,1) · N_p / G`
/// (so `beta_level` is relative to the mean per-gene mixture mass).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModalityGap {
    pub alpha_spread: f64,
    pub beta_level: f64,
}

impl ModalityGap {
    pub fn identity() -> Self {
        Self {
            alpha_spread: 0.0,
            beta_level: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_types: usize,
    pub n_genes: usize,
    pub feature_dim: usize,
    pub n_batches: usize,
    pub n_cells: usize,
    pub n_slides: usize,
    pub patches_per_slide: usize,
    /// Target total count `l` of each slide.
    pub library_size: f64,
    /// Expected total count of a single cell before batch effects.
    pub cell_library: f64,
    /// Expected total count of one spatial spot.
    pub spot_library: f64,
    pub dirichlet_alpha: f64,
    pub feature_noise_sigma: f64,
    pub batch_scale_sigma: f64,
    /// Batch shifts are `U(0, batch_shift_level) · cell_library / G`.
    pub batch_shift_level: f64,
    /// Explicit batch scales; overrides `batch_scale_sigma` when set.
    pub batch_scales: Option<Vec<f64>>,
    /// Log-normal spread of raw prototype entries before normalisation.
    pub prototype_sigma: f64,
    /// Gaussian logit noise turning slide proportions into patch weights.
    pub patch_logit_sigma: f64,
    pub sc_theta: f64,
    pub bulk_theta: f64,
    pub modality_gap: ModalityGap,
    /// Log-normal per-(type, gene) drift between the single-cell prototypes
    /// and the profiles that generate bulk and spot counts.
    pub prototype_drift_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_types: 5,
            n_genes: 200,
            feature_dim: 16,
            n_batches: 3,
            n_cells: 2000,
            n_slides: 120,
            patches_per_slide: 32,
            library_size: 1e5,
            cell_library: 1000.0,
            spot_library: 2000.0,
            dirichlet_alpha: 1.0,
            feature_noise_sigma: 0.1,
            batch_scale_sigma: 0.3,
            batch_shift_level: 0.05,
            batch_scales: None,
            prototype_sigma: 1.0,
            patch_logit_sigma: 0.3,
            sc_theta: 10.0,
            bulk_theta: 50.0,
            modality_gap: ModalityGap {
                alpha_spread: 0.3,
                beta_level: 0.1,
            },
            prototype_drift_sigma: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_types", self.n_types),
            ("n_genes", self.n_genes),
            ("feature_dim", self.feature_dim),
            ("n_batches", self.n_batches),
            ("n_cells", self.n_cells),
            ("n_slides", self.n_slides),
            ("patches_per_slide", self.patches_per_slide),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(CpnnError::Config(format!("{name} must be at least 1")));
            }
        }
        if self.n_cells < self.n_types.max(self.n_batches) {
            return Err(CpnnError::Config(
                "need at least one cell per type and per batch".into(),
            ));
        }
        let sigmas = [
            ("feature_noise_sigma", self.feature_noise_sigma),
            ("batch_scale_sigma", self.batch_scale_sigma),
            ("batch_shift_level", self.batch_shift_level),
            ("prototype_sigma", self.prototype_sigma),
            ("patch_logit_sigma", self.patch_logit_sigma),
            ("alpha_spread", self.modality_gap.alpha_spread),
            ("beta_level", self.modality_gap.beta_level),
            ("prototype_drift_sigma", self.prototype_drift_sigma),
        ];
        for (name, v) in sigmas {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CpnnError::Config(format!("{name} must be finite and >= 0")));
            }
        }
        let positive = [
            ("dirichlet_alpha", self.dirichlet_alpha),
            ("library_size", self.library_size),
            ("cell_library", self.cell_library),
            ("spot_library", self.spot_library),
            ("sc_theta", self.sc_theta),
            ("bulk_theta", self.bulk_theta),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(CpnnError::Config(format!("{name} must be finite and > 0")));
            }
        }
        if let Some(s) = &self.batch_scales {
            if s.len() != self.n_batches || s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(CpnnError::Config(format!(
                    "batch_scales needs {} positive values",
                    self.n_batches
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    /// Normalised prototypes `T*` (rows sum to 1).
    pub prototypes: PrototypeMatrix,
    /// Raw single-cell means `t* = T* · cell_library`.
    pub raw_prototypes: PrototypeMatrix,
    /// Column means of the true patch weights, one row per slide.
    pub slide_proportions: Array2<f64>,
    /// The Dirichlet draw each slide's patch weights were perturbed from.
    pub slide_dirichlet: Array2<f64>,
    pub patch_weights: Vec<Array2<f64>>,
    pub alpha: Array1<f64>,
    pub beta: Array1<f64>,
    pub nuisance: BatchNuisance,
    /// The linear map from weights to features (`D_feat × C`).
    pub feature_map: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub sc: CountMatrix,
    pub annotations: CellAnnotations,
    pub bulk: CountMatrix,
    pub slides: Vec<SampleRecord>,
    /// Per-slide spot counts, rows aligned with the slide's patches.
    pub spots: Vec<CountMatrix>,
    pub truth: SynthTruth,
}

pub fn gene_ids(n: usize) -> Vec<String> {
    (0..n).map(|g| format!("gene{g:04}")).collect()
}

pub fn cell_type_names(n: usize) -> Vec<String> {
    (0..n).map(|c| format!("type{c}")).collect()
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (c_n, g_n) = (cfg.n_types, cfg.n_genes);
    let genes = gene_ids(g_n);
    let types = cell_type_names(c_n);

    // prototypes
    let lognormal = Normal::new(0.0, cfg.prototype_sigma).expect("validated sigma");
    let mut proto = Array2::from_shape_fn((c_n, g_n), |_| lognormal.sample(&mut rng).exp());
    for mut row in proto.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    let raw = &proto * cfg.cell_library;

    // single-cell batch nuisance
    let scales: Array1<f64> = match &cfg.batch_scales {
        Some(s) => Array1::from(s.clone()),
        None => {
            let n = Normal::new(0.0, cfg.batch_scale_sigma).expect("validated sigma");
            (0..cfg.n_batches)
                .map(|_| n.sample(&mut rng).exp())
                .collect()
        }
    };
    let shift_unit = cfg.batch_shift_level * cfg.cell_library / g_n as f64;
    let shifts = Array2::from_shape_fn((cfg.n_batches, g_n), |_| rng.random::<f64>() * shift_unit);

    // cell labels: round-robin so every category is populated, then shuffled
    let mut cell_types: Vec<usize> = (0..cfg.n_cells).map(|k| k % c_n).collect();
    let mut batches: Vec<usize> = (0..cfg.n_cells).map(|k| k % cfg.n_batches).collect();
    cell_types.shuffle(&mut rng);
    batches.shuffle(&mut rng);
    let mut sc_values = Array2::zeros((cfg.n_cells, g_n));
    for k in 0..cfg.n_cells {
        let (c, d) = (cell_types[k], batches[k]);
        for g in 0..g_n {
            let mu = (raw[[c, g]] + shifts[[d, g]]) * scales[d];
            sc_values[[k, g]] = nb_sample(mu, cfg.sc_theta, &mut rng)?;
        }
    }
    let cell_ids: Vec<String> = (0..cfg.n_cells).map(|k| format!("cell{k:05}")).collect();
    let sc = CountMatrix::new(sc_values, cell_ids, genes.clone())?;
    let batch_names = (0..cfg.n_batches).map(|d| format!("batch{d}")).collect();
    let annotations = CellAnnotations::new(cell_types, batches, types.clone(), batch_names)?;

    // modality gap
    let n_p = cfg.patches_per_slide as f64;
    let alpha_dist = Normal::new(0.0, cfg.modality_gap.alpha_spread).expect("validated sigma");
    let alpha: Array1<f64> = (0..g_n)
        .map(|_| alpha_dist.sample(&mut rng).exp())
        .collect();
    let beta: Array1<f64> = (0..g_n)
        .map(|_| cfg.modality_gap.beta_level * rng.random::<f64>() * n_p / g_n as f64)
        .collect();

    // spatial-side prototypes; drawn after the gap so zero drift keeps the stream
    let spatial_proto = if cfg.prototype_drift_sigma > 0.0 {
        let drift = Normal::new(0.0, cfg.prototype_drift_sigma).expect("validated sigma");
        let mut t = proto.mapv(|v| v * drift.sample(&mut rng).exp());
        for mut row in t.rows_mut() {
            let s = row.sum();
            row /= s;
        }
        t
    } else {
        proto.clone()
    };

    // features: h = M w + eps
    let feature_map = Array2::from_shape_fn((cfg.feature_dim, c_n), |_| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z
    });
    let logit_noise = Normal::new(0.0, cfg.patch_logit_sigma).expect("validated sigma");
    let feature_noise = Normal::new(0.0, cfg.feature_noise_sigma).expect("validated sigma");

    let mut slides = Vec::with_capacity(cfg.n_slides);
    let mut spots = Vec::with_capacity(cfg.n_slides);
    let mut patch_weights = Vec::with_capacity(cfg.n_slides);
    let mut slide_dirichlet = Array2::zeros((cfg.n_slides, c_n));
    let mut slide_props = Array2::zeros((cfg.n_slides, c_n));
    let mut bulk_values = Array2::zeros((cfg.n_slides, g_n));
    let slide_ids: Vec<String> = (0..cfg.n_slides).map(|n| format!("slide{n:04}")).collect();
    let patch_ids: Vec<String> = (0..cfg.patches_per_slide)
        .map(|i| format!("p{i:03}"))
        .collect();

    for n in 0..cfg.n_slides {
        let p = dirichlet_sample(cfg.dirichlet_alpha, c_n, &mut rng);
        slide_dirichlet.row_mut(n).assign(&p);
        let mut w = Array2::zeros((cfg.patches_per_slide, c_n));
        for mut row in w.rows_mut() {
            let mut logits: Vec<f64> = p
                .iter()
                .map(|v| v.max(1e-300).ln() + logit_noise.sample(&mut rng))
                .collect();
            softmax_in_place(&mut logits);
            row.assign(&Array1::from(logits));
        }
        let mut feats = w.dot(&feature_map.t());
        feats.mapv_inplace(|v| v + feature_noise.sample(&mut rng));
        slide_props
            .row_mut(n)
            .assign(&w.mean_axis(Axis(0)).expect("patches present"));

        // per-patch expression α ⊙ (w_i T*) + β / N_p; the slide sums it
        let patch_expr = &w.dot(&spatial_proto) * &alpha + &(&beta / n_p);
        let slide_mu = patch_expr.sum_axis(Axis(0));
        let z = slide_mu.sum();
        let mut counts = Array1::zeros(g_n);
        for g in 0..g_n {
            let mu = (cfg.library_size * slide_mu[g] / z).max(1e-8);
            counts[g] = nb_sample(mu, cfg.bulk_theta, &mut rng)?;
        }
        bulk_values.row_mut(n).assign(&counts);

        let mut spot_values = Array2::zeros((cfg.patches_per_slide, g_n));
        for (i, row) in patch_expr.rows().into_iter().enumerate() {
            let zi = row.sum();
            for g in 0..g_n {
                let mu = (cfg.spot_library * row[g] / zi).max(1e-8);
                spot_values[[i, g]] = nb_sample(mu, cfg.bulk_theta, &mut rng)?;
            }
        }
        spots.push(CountMatrix::new(
            spot_values,
            patch_ids.clone(),
            genes.clone(),
        )?);

        let fs = PatchFeatureSet::new(slide_ids[n].clone(), feats, patch_ids.clone())?;
        slides.push(SampleRecord::new(fs, counts)?);
        patch_weights.push(w);
    }
    let bulk = CountMatrix::new(bulk_values, slide_ids, genes.clone())?;

    let truth = SynthTruth {
        prototypes: PrototypeMatrix::new(proto, types.clone(), genes.clone())?,
        raw_prototypes: PrototypeMatrix::new(raw, types, genes)?,
        slide_proportions: slide_props,
        slide_dirichlet,
        patch_weights,
        alpha,
        beta,
        nuisance: BatchNuisance::new(scales, shifts)?,
        feature_map,
    };
    Ok(SynthData {
        sc,
        annotations,
        bulk,
        slides,
        spots,
        truth,
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    generator: &'static str,
    seed: u64,
    config: &'a SynthConfig,
}

/// Write a generated dataset in the pipeline's input formats:
///
/// ```text
/// sc.mtx, sc_rows.txt, sc_genes.txt, sc_annotations.csv
/// bulk.csv, features/<slide>.csv, spots/<slide>.csv
/// truth/{prototypes,raw_prototypes,proportions,dirichlet,modality,batch_scales,batch_shifts}.csv
/// truth/patch_weights/<slide>.csv
/// manifest.json
/// ```
pub fn write_dataset(dir: impl AsRef<Path>, data: &SynthData, cfg: &SynthConfig) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| CpnnError::io(dir, e))?;
    io::write_sparse_counts(
        dir.join("sc.mtx"),
        dir.join("sc_rows.txt"),
        dir.join("sc_genes.txt"),
        &data.sc,
    )?;
    io::write_annotations(
        dir.join("sc_annotations.csv"),
        data.sc.row_ids(),
        &data.annotations,
    )?;
    io::write_dense_counts(dir.join("bulk.csv"), &data.bulk)?;
    let feats: Vec<PatchFeatureSet> = data.slides.iter().map(|s| s.features().clone()).collect();
    io::write_feature_dir(dir.join("features"), &feats)?;
    let spots_dir = dir.join("spots");
    for (s, spot) in data.slides.iter().zip(&data.spots) {
        io::write_dense_counts(spots_dir.join(format!("{}.csv", s.slide_id())), spot)?;
    }

    let truth_dir = dir.join("truth");
    let t = &data.truth;
    t.prototypes.write_csv(truth_dir.join("prototypes.csv"))?;
    t.raw_prototypes
        .write_csv(truth_dir.join("raw_prototypes.csv"))?;
    let types = t.prototypes.cell_type_names();
    let slide_ids = data.bulk.row_ids();
    io::write_float_table(
        truth_dir.join("proportions.csv"),
        "slide_id",
        slide_ids,
        types,
        &t.slide_proportions,
    )?;
    io::write_float_table(
        truth_dir.join("dirichlet.csv"),
        "slide_id",
        slide_ids,
        types,
        &t.slide_dirichlet,
    )?;
    let modality = ndarray::stack![Axis(1), t.alpha, t.beta];
    io::write_float_table(
        truth_dir.join("modality.csv"),
        "gene",
        data.bulk.gene_ids(),
        &["alpha".to_string(), "beta".to_string()],
        &modality,
    )?;
    let batch_names = data.annotations.batch_names();
    io::write_float_table(
        truth_dir.join("batch_scales.csv"),
        "batch",
        batch_names,
        &["scale".to_string()],
        &t.nuisance.scales().clone().insert_axis(Axis(1)),
    )?;
    io::write_float_table(
        truth_dir.join("batch_shifts.csv"),
        "batch",
        batch_names,
        data.bulk.gene_ids(),
        t.nuisance.shifts(),
    )?;
    let pw_dir = truth_dir.join("patch_weights");
    for (s, w) in data.slides.iter().zip(&t.patch_weights) {
        io::write_float_table(
            pw_dir.join(format!("{}.csv", s.slide_id())),
            "patch_id",
            s.features().patch_ids(),
            types,
            w,
        )?;
    }
    let manifest = Manifest {
        generator: "cpnn-synth",
        seed: cfg.seed,
        config: cfg,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text + "\n").map_err(|e| CpnnError::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_types: 3,
            n_genes: 12,
            feature_dim: 6,
            n_batches: 2,
            n_cells: 60,
            n_slides: 8,
            patches_per_slide: 5,
            seed: 42,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn nb_sampler_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| nb_sample(5.0, 2.0, &mut rng).unwrap() as f64)
            .collect();
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((4.9..=5.1).contains(&mean), "{mean}");
        assert!((var - 17.5).abs() / 17.5 < 0.05, "{var}");
    }

    #[test]
    fn nb_sampler_poisson_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| nb_sample(5.0, 1e6, &mut rng).unwrap() as f64)
            .collect();
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 5.0).abs() / 5.0 < 0.1, "{var}");
    }

    #[test]
    fn nb_sampler_rejects_bad_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(nb_sample(0.0, 1.0, &mut rng).is_err());
        assert!(nb_sample(1.0, -2.0, &mut rng).is_err());
    }

    #[test]
    fn deterministic_for_seed() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate(&SynthConfig {
            seed: 43,
            ..small()
        })
        .unwrap();
        assert_ne!(a.bulk, c.bulk);
    }

    #[test]
    fn truth_invariants() {
        let d = generate(&small()).unwrap();
        for row in d.truth.prototypes.values().rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        for row in d.truth.slide_proportions.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
        assert_eq!(d.slides.len(), 8);
        assert_eq!(d.spots[0].n_rows(), 5);
    }

    #[test]
    fn drift_changes_spatial_side_only() {
        let a = generate(&small()).unwrap();
        let b = generate(&SynthConfig {
            prototype_drift_sigma: 0.5,
            ..small()
        })
        .unwrap();
        assert_eq!(a.sc, b.sc);
        assert_eq!(a.truth.prototypes, b.truth.prototypes);
        assert_ne!(a.bulk, b.bulk);
    }

    #[test]
    fn noiseless_features_are_linear_in_weights() {
        let cfg = SynthConfig {
            feature_noise_sigma: 0.0,
            ..small()
        };
        let d = generate(&cfg).unwrap();
        for (s, w) in d.slides.iter().zip(&d.truth.patch_weights) {
            let expect = w.dot(&d.truth.feature_map.t());
            let diff = (&expect - s.features().features()).mapv(f64::abs);
            assert!(diff.iter().all(|&v| v < 1e-12));
        }
    }

    #[test]
    fn concentrated_dirichlet_is_near_uniform() {
        let cfg = SynthConfig {
            dirichlet_alpha: 1e4,
            n_slides: 40,
            ..small()
        };
        let d = generate(&cfg).unwrap();
        let max_dev = d
            .truth
            .slide_dirichlet
            .iter()
            .map(|v| (v - 1.0 / 3.0).abs())
            .fold(0.0, f64::max);
        assert!(max_dev < 0.02, "{max_dev}");
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(generate(&SynthConfig {
            n_types: 0,
            ..small()
        })
        .is_err());
        assert!(generate(&SynthConfig {
            dirichlet_alpha: 0.0,
            ..small()
        })
        .is_err());
        assert!(generate(&SynthConfig {
            batch_scales: Some(vec![1.0]),
            ..small()
        })
        .is_err());
    }
}
