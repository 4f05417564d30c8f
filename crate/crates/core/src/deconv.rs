//! Maximum-likelihood reference deconvolution of bulk counts onto prototypes.

use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::CountMatrix;
use crate::error::{CpnnError, Result};
use crate::io;
use crate::nb::{nb_nll_term, nb_nll_term_grads, MIN_MEAN};
use crate::optim::{AdamW, AdamWConfig, Segment};
use crate::prototype::{PrototypeMatrix, ScDispersion};
use crate::special::softmax_in_place;

const SIMPLEX_TOL: f64 = 1e-9;

/// Samples by cell types; every row lies on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ProportionMatrix {
    values: Array2<f64>,
    row_ids: Vec<String>,
    cell_type_names: Vec<String>,
}

impl ProportionMatrix {
    pub fn new(
        values: Array2<f64>,
        row_ids: Vec<String>,
        cell_type_names: Vec<String>,
    ) -> Result<Self> {
        if values.dim() != (row_ids.len(), cell_type_names.len()) {
            return Err(CpnnError::shape(format!(
                "proportions are {:?} for {} rows and {} cell types",
                values.dim(),
                row_ids.len(),
                cell_type_names.len()
            )));
        }
        for (i, row) in values.rows().into_iter().enumerate() {
            if row.iter().any(|v| !(v.is_finite() && *v >= 0.0))
                || (row.sum() - 1.0).abs() > SIMPLEX_TOL
            {
                return Err(CpnnError::data(format!(
                    "row `{}` is not on the simplex",
                    row_ids[i]
                )));
            }
        }
        Ok(Self {
            values,
            row_ids,
            cell_type_names,
        })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn cell_type_names(&self) -> &[String] {
        &self.cell_type_names
    }

    pub fn row(&self, id: &str) -> Option<ArrayView1<'_, f64>> {
        self.row_ids
            .iter()
            .position(|r| r == id)
            .map(|i| self.values.row(i))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_float_table(
            path,
            "slide_id",
            &self.row_ids,
            &self.cell_type_names,
            &self.values,
        )
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let t = io::read_float_table(path)?;
        Self::new(t.values, t.row_ids, t.columns)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeconvConfig {
    pub lr: f64,
    pub steps: usize,
    /// Use the single-cell dispersions; otherwise every gene gets `fixed_theta`.
    pub reuse_sc_dispersion: bool,
    pub fixed_theta: f64,
}

impl Default for DeconvConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            steps: 500,
            reuse_sc_dispersion: true,
            fixed_theta: 10.0,
        }
    }
}

/// NLL of one sample at logits `z` and log-scale `zeta`, with its gradient.
fn sample_objective(
    counts: ArrayView1<u64>,
    proto: ArrayView2<f64>,
    theta: &[f64],
    library: f64,
    params: &[f64],
    grad: &mut [f64],
) -> f64 {
    let c_n = proto.nrows();
    let mut p = params[..c_n].to_vec();
    softmax_in_place(&mut p);
    let scale = params[c_n].exp() * library;
    let mut loss = 0.0;
    let mut d_p = vec![0.0; c_n];
    let mut d_zeta = 0.0;
    for (g, (&k, &th)) in counts.iter().zip(theta).enumerate() {
        let q: f64 = (0..c_n).map(|c| p[c] * proto[[c, g]]).sum();
        let raw = scale * q;
        let mu = raw.max(MIN_MEAN);
        let k = k as f64;
        loss += nb_nll_term(k, mu, th);
        if raw >= MIN_MEAN {
            let (d_mu, _) = nb_nll_term_grads(k, mu, th);
            d_zeta += d_mu * mu;
            for c in 0..c_n {
                d_p[c] += d_mu * scale * proto[[c, g]];
            }
        }
    }
    let dot: f64 = p.iter().zip(&d_p).map(|(a, b)| a * b).sum();
    for c in 0..c_n {
        grad[c] = p[c] * (d_p[c] - dot);
    }
    grad[c_n] = d_zeta;
    loss
}

/// Proportions for a single count vector; `theta` holds one dispersion per gene.
pub fn deconvolve_sample(
    counts: ArrayView1<u64>,
    proto: ArrayView2<f64>,
    theta: &[f64],
    cfg: &DeconvConfig,
) -> Result<Vec<f64>> {
    let c_n = proto.nrows();
    if counts.len() != proto.ncols() || theta.len() != proto.ncols() {
        return Err(CpnnError::shape(format!(
            "{} counts, {} dispersions, prototypes over {} genes",
            counts.len(),
            theta.len(),
            proto.ncols()
        )));
    }
    if c_n == 1 {
        return Ok(vec![1.0]);
    }
    let library = counts.iter().sum::<u64>() as f64;
    if library == 0.0 {
        return Err(CpnnError::data("sample has zero total count"));
    }
    let mut opt = AdamW::new(
        AdamWConfig {
            lr: cfg.lr,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        },
        vec![
            Segment::new("logits", c_n, false),
            Segment::new("log_scale", 1, false),
        ],
    )?;
    let mut params = vec![0.0; c_n + 1];
    let mut grad = vec![0.0; c_n + 1];
    for step in 0..cfg.steps {
        let loss = sample_objective(counts, proto, theta, library, &params, &mut grad);
        if !loss.is_finite() {
            return Err(CpnnError::numeric(format!(
                "deconvolution loss is non-finite at step {step}"
            )));
        }
        opt.step(&mut params, &grad)?;
    }
    let mut p = params[..c_n].to_vec();
    softmax_in_place(&mut p);
    Ok(p)
}

/// Deconvolve every row of `bulk`; genes must match the prototypes in order.
pub fn deconvolve(
    bulk: &CountMatrix,
    proto: &PrototypeMatrix,
    disp: &ScDispersion,
    cfg: &DeconvConfig,
) -> Result<ProportionMatrix> {
    if bulk.gene_ids() != proto.gene_ids() {
        return Err(CpnnError::data(
            "bulk and prototype genes differ; align them first",
        ));
    }
    let theta: Vec<f64> = if cfg.reuse_sc_dispersion {
        if disp.theta().len() != proto.n_genes() {
            return Err(CpnnError::shape(
                "one dispersion per prototype gene required",
            ));
        }
        disp.theta().to_vec()
    } else {
        if !(cfg.fixed_theta.is_finite() && cfg.fixed_theta > 0.0) {
            return Err(CpnnError::Config("fixed_theta must be positive".into()));
        }
        vec![cfg.fixed_theta; proto.n_genes()]
    };
    let rows: Vec<Vec<f64>> = (0..bulk.n_rows())
        .into_par_iter()
        .map(|i| {
            deconvolve_sample(bulk.values().row(i), proto.values().view(), &theta, cfg)
                .map_err(|e| CpnnError::numeric(format!("sample `{}`: {e}", bulk.row_ids()[i])))
        })
        .collect::<Result<_>>()?;
    let mut values = Array2::zeros((rows.len(), proto.n_types()));
    for (i, r) in rows.iter().enumerate() {
        values.row_mut(i).assign(&ArrayView1::from(r));
    }
    ProportionMatrix::new(
        values,
        bulk.row_ids().to_vec(),
        proto.cell_type_names().to_vec(),
    )
}
