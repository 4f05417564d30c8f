//! End-to-end finite-difference checks of the slide and patch objectives on
//! small random instances.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{CountMatrix, PatchFeatureSet, SampleRecord};
use crate::error::Result;
use crate::losses::LossConfig;
use crate::model::{AblationFlags, CpnnParameters, ModelConfig};
use crate::optim::{finite_diff_check, segment_names, GradCheckReport};
use crate::prototype::PrototypeMatrix;
use crate::training::{patch_batch_loss, slide_batch_loss, PatchSample};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

fn ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    let v: Array1<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s = v.sum();
    v / s
}

fn random_features(rng: &mut ChaCha8Rng, slide: usize, n_p: usize, d: usize) -> PatchFeatureSet {
    let x = Array2::from_shape_simple_fn((n_p, d), || rng.random_range(-1.5..1.5));
    PatchFeatureSet::new(format!("s{slide}"), x, ids("p", n_p)).expect("finite features")
}

/// Random parameters away from their initial values, with every flag on.
fn random_params(
    rng: &mut ChaCha8Rng,
    c: usize,
    g: usize,
    d: usize,
    h: usize,
    seed: u64,
) -> Result<CpnnParameters> {
    let mut proto = Array2::zeros((c, g));
    for mut row in proto.rows_mut() {
        row.assign(&random_simplex(rng, g));
    }
    let p0 = PrototypeMatrix::new(proto, ids("t", c), ids("g", g))?;
    let cfg = ModelConfig {
        hidden: Some(h),
        ..ModelConfig::default()
    };
    let mut params = CpnnParameters::init(&p0, d, &cfg, AblationFlags::full(), seed)?;
    params
        .proto_free
        .mapv_inplace(|v| v + rng.random_range(-0.3..0.3));
    params
        .correction
        .a
        .mapv_inplace(|_| rng.random_range(-0.5..0.5));
    params
        .correction
        .c
        .mapv_inplace(|_| rng.random_range(-2.0..0.5));
    params.rho.mapv_inplace(|_| rng.random_range(-0.5..1.5));
    Ok(params)
}

fn check(
    params: &CpnnParameters,
    loss: impl Fn(&CpnnParameters) -> Result<(f64, Vec<f64>)> + Sync,
) -> Result<GradCheckReport> {
    let flat = params.to_flat();
    let (_, analytic) = loss(params)?;
    let names = segment_names(&params.segments());
    finite_diff_check(
        |x| {
            let mut p = params.clone();
            p.set_flat(x)?;
            Ok(loss(&p)?.0)
        },
        &flat,
        &analytic,
        &names,
        STEP,
        TOLERANCE,
    )
}

/// Slide objective (NB + regularizer) composed with the forward model.
pub fn gradcheck_slide(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, g, d, h) = (
        rng.random_range(2..=3),
        rng.random_range(3..=6),
        rng.random_range(2..=5),
        rng.random_range(2..=4),
    );
    let params = random_params(&mut rng, c, g, d, h, seed)?;
    let n_slides = 2;
    let mut records = Vec::new();
    let mut wref = Vec::new();
    for s in 0..n_slides {
        let n_p = rng.random_range(1..=4);
        let features = random_features(&mut rng, s, n_p, d);
        let counts: Array1<u64> = (0..g).map(|_| rng.random_range(0..30)).collect();
        let counts = if counts.sum() == 0 {
            Array1::ones(g)
        } else {
            counts
        };
        records.push(SampleRecord::new(features, counts)?);
        wref.push(random_simplex(&mut rng, c));
    }
    let lambda = rng.random_range(0.5..3.0);
    let batch: Vec<&SampleRecord> = records.iter().collect();
    let views: Vec<_> = wref.iter().map(|w| w.view()).collect();
    check(&params, |p| {
        let (parts, grads) = slide_batch_loss(p, &batch, &views, lambda)?;
        Ok((parts.total, grads.to_flat()))
    })
}

/// Patch objective (correlation + prototype anchor) composed with the forward model.
pub fn gradcheck_patch(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let (c, g, d, h) = (
        rng.random_range(2..=3),
        rng.random_range(4..=6),
        rng.random_range(2..=5),
        rng.random_range(2..=4),
    );
    let params = random_params(&mut rng, c, g, d, h, seed)?;
    let n_p = rng.random_range(3..=4);
    let features = random_features(&mut rng, 0, n_p, d);
    let mut counts = Array2::from_shape_simple_fn((n_p, g), || rng.random_range(0..40u64));
    // keep every spot non-constant
    for (i, mut row) in counts.rows_mut().into_iter().enumerate() {
        row[0] = 50 + i as u64;
        row[1] = 0;
    }
    let spots = CountMatrix::new(counts, ids("p", n_p), ids("g", g))?;
    let sample = PatchSample::new(features, spots)?;
    let cfg = LossConfig {
        patch_lambda: rng.random_range(0.5..2.0),
        ..LossConfig::default()
    };
    check(&params, |p| {
        let (parts, grads) = patch_batch_loss(p, &[&sample], &cfg)?;
        Ok((parts.total, grads.to_flat()))
    })
}
