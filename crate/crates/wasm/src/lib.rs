//! In-browser demo: NB probability curves, patch-to-expression mixing and
//! deconvolution of a sampled mixture, all on a small random prototype.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

use cpnn::data::PatchFeatureSet;
use cpnn::deconv::{deconvolve_sample, DeconvConfig};
use cpnn::model::{forward_slide, AblationFlags, CpnnParameters, ModelConfig};
use cpnn::nb::{nb_log_pmf, NbParams};
use cpnn::prototype::PrototypeMatrix;
use cpnn::synth::{dirichlet_sample, nb_sample};
use cpnn::CpnnError;

fn js(e: CpnnError) -> JsError {
    JsError::new(&e.to_string())
}

/// `Pr(k)` for `k = 0..=k_max`.
#[wasm_bindgen(js_name = nbPmf)]
pub fn nb_pmf(mu: f64, theta: f64, k_max: u32) -> Result<Vec<f64>, JsError> {
    let p = NbParams::new(mu, theta).map_err(js)?;
    Ok((0..=u64::from(k_max))
        .map(|k| nb_log_pmf(k, p).exp())
        .collect())
}

/// A random prototype with a two-dimensional patch feature space.
#[wasm_bindgen]
pub struct Demo {
    proto: PrototypeMatrix,
    params: CpnnParameters,
    seed: u64,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(n_types: usize, n_genes: usize, seed: u32) -> Result<Demo, JsError> {
        if n_types == 0 || n_genes == 0 {
            return Err(JsError::new("need at least one cell type and one gene"));
        }
        let seed = u64::from(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Array2::zeros((n_types, n_genes));
        for mut row in values.rows_mut() {
            row.assign(&dirichlet_sample(0.3, n_genes, &mut rng));
        }
        let proto = PrototypeMatrix::new(
            values,
            (0..n_types).map(|c| format!("type{c}")).collect(),
            (0..n_genes).map(|g| format!("g{g}")).collect(),
        )
        .map_err(js)?;
        let cfg = ModelConfig {
            hidden: Some(8),
            ..ModelConfig::default()
        };
        let mut params =
            CpnnParameters::init(&proto, 2, &cfg, AblationFlags::full(), seed).map_err(js)?;
        // steeper head so the weights move visibly across the canvas
        params.head.w2 *= 4.0;
        Ok(Demo {
            proto,
            params,
            seed,
        })
    }

    #[wasm_bindgen(getter, js_name = nTypes)]
    pub fn n_types(&self) -> usize {
        self.proto.n_types()
    }

    #[wasm_bindgen(getter, js_name = nGenes)]
    pub fn n_genes(&self) -> usize {
        self.proto.n_genes()
    }

    /// Row-major `n_types × n_genes` prototype.
    pub fn prototype(&self) -> Vec<f64> {
        self.proto.values().iter().copied().collect()
    }

    /// Cell-type weights of one patch at feature `(x, y)`, followed by the
    /// expected expression profile (summing to `library`) of a slide made
    /// of that patch.
    pub fn mix(&self, x: f64, y: f64, library: f64) -> Result<Vec<f64>, JsError> {
        let features = PatchFeatureSet::new(
            "demo",
            Array2::from_shape_vec((1, 2), vec![x, y])?,
            vec!["p0".into()],
        )
        .map_err(js)?;
        let trace = forward_slide(&self.params, &features, library).map_err(js)?;
        Ok(trace
            .mean_weight
            .iter()
            .chain(trace.mu_bar.iter())
            .copied()
            .collect())
    }

    /// Sample NB counts from the mixture `Σ_c props_c T̄_c` and estimate the
    /// proportions back; returns the counts followed by the estimate.
    pub fn deconvolve(
        &mut self,
        props: Vec<f64>,
        library: f64,
        theta: f64,
        steps: usize,
    ) -> Result<Vec<f64>, JsError> {
        let c_n = self.proto.n_types();
        if props.len() != c_n {
            return Err(JsError::new(&format!(
                "expected {c_n} proportions, got {}",
                props.len()
            )));
        }
        let total: f64 = props.iter().sum();
        if !(total > 0.0) || props.iter().any(|p| *p < 0.0) {
            return Err(JsError::new(
                "proportions must be nonnegative with a positive sum",
            ));
        }
        let w = Array1::from(props) / total;
        let mean = w.dot(self.proto.values()) * library;
        self.seed = self.seed.wrapping_add(1);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let counts = mean
            .iter()
            .map(|&m| nb_sample(m.max(1e-12), theta, &mut rng))
            .collect::<Result<Array1<u64>, _>>()
            .map_err(js)?;
        let cfg = DeconvConfig {
            steps,
            ..DeconvConfig::default()
        };
        let theta = vec![theta; self.proto.n_genes()];
        let est = deconvolve_sample(counts.view(), self.proto.values().view(), &theta, &cfg)
            .map_err(js)?;
        Ok(counts.iter().map(|&k| k as f64).chain(est).collect())
    }
}
