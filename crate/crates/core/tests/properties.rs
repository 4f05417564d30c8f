use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use cpnn::data::{CountMatrix, PatchFeatureSet};
use cpnn::io;
use cpnn::metrics::{pearson, spearman};
use cpnn::model::{
    compute_weights, forward_patch, forward_slide, AblationFlags, CpnnParameters, ModelConfig,
};
use cpnn::nb::{nb_log_pmf, NbParams};
use cpnn::prototype::PrototypeMatrix;
use cpnn::synth::dirichlet_sample;

fn random_model(seed: u64, c_n: usize, g_n: usize, d: usize) -> CpnnParameters {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Array2::zeros((c_n, g_n));
    for mut row in values.rows_mut() {
        row.assign(&dirichlet_sample(0.5, g_n, &mut rng));
    }
    let proto = PrototypeMatrix::new(
        values,
        (0..c_n).map(|c| format!("t{c}")).collect(),
        (0..g_n).map(|g| format!("g{g}")).collect(),
    )
    .unwrap();
    CpnnParameters::init(
        &proto,
        d,
        &ModelConfig::default(),
        AblationFlags::full(),
        seed,
    )
    .unwrap()
}

fn features(seed: u64, n: usize, d: usize) -> PatchFeatureSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let x = Array2::from_shape_simple_fn((n, d), || rand::Rng::random_range(&mut rng, -3.0..3.0));
    PatchFeatureSet::new("s", x, (0..n).map(|i| format!("p{i}")).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weights_lie_on_the_simplex(seed in 0u64..10_000, c_n in 1usize..6, n in 1usize..12, d in 1usize..6) {
        let params = random_model(seed, c_n, 8, d);
        let w = compute_weights(&params.head, &features(seed, n, d)).unwrap();
        for row in w.rows() {
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn slide_prediction_conserves_library(seed in 0u64..10_000, library in 1.0f64..1e7) {
        let params = random_model(seed, 3, 15, 4);
        let trace = forward_slide(&params, &features(seed, 7, 4), library).unwrap();
        prop_assert!((trace.mu_bar.sum() - library).abs() <= 1e-9 * library);
        prop_assert!((trace.mean_weight.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn slide_shape_ignores_joint_correction_scale(seed in 0u64..10_000, k in 0.05f64..20.0) {
        let params = random_model(seed, 3, 12, 3);
        let x = features(seed, 5, 3);
        let mut scaled = params.clone();
        scaled.correction.a.mapv_inplace(|a| a + k.ln());
        let beta = params.correction.beta();
        scaled.correction.c = beta.mapv(|b| cpnn::special::softplus_inv(k * b));
        let a = forward_slide(&params, &x, 1e4).unwrap().mu_bar;
        let b = forward_slide(&scaled, &x, 1e4).unwrap().mu_bar;
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() <= 1e-9 * u.abs().max(1.0));
        }
    }

    #[test]
    fn patch_predictions_are_nonnegative(seed in 0u64..10_000, n in 1usize..10) {
        let params = random_model(seed, 4, 10, 2);
        let trace = forward_patch(&params, &features(seed, n, 2)).unwrap();
        prop_assert_eq!(trace.pred.dim(), (n, 10));
        prop_assert!(trace.pred.iter().all(|&v| v >= 0.0 && v.is_finite()));
    }

    #[test]
    fn spearman_ignores_monotone_transforms(xs in prop::collection::vec(-50i32..50, 3..40), seed in 0u64..1000) {
        let x: Vec<f64> = xs.iter().map(|&v| f64::from(v)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = x.iter().map(|v| v + rand::Rng::random_range(&mut rng, -20.0..20.0)).collect();
        let fx: Vec<f64> = x.iter().map(|v| (v / 10.0).exp() + 3.0 * v).collect();
        prop_assert_eq!(spearman(&x, &y), spearman(&fx, &y));
        if let (Some(a), Some(b)) = (pearson(&x, &y), pearson(&y, &x)) {
            prop_assert!((a - b).abs() < 1e-14);
            prop_assert!(a.abs() <= 1.0);
        }
    }

    #[test]
    fn nb_pmf_sums_to_one(mu in 0.01f64..80.0, theta in 0.05f64..200.0) {
        let p = NbParams::new(mu, theta).unwrap();
        let mut total = 0.0;
        let mut k = 0u64;
        loop {
            let v = nb_log_pmf(k, p).exp();
            total += v;
            if (k as f64) > mu && v < 1e-18 {
                break;
            }
            k += 1;
        }
        prop_assert!((total - 1.0).abs() < 1e-9, "total {total}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dense_and_sparse_counts_round_trip(
        rows in 1usize..6,
        genes in 1usize..7,
        cells in prop::collection::vec(prop_oneof![3 => Just(0u64), 1 => 0u64..1_000_000], 42),
    ) {
        let values = Array2::from_shape_fn((rows, genes), |(r, g)| cells[r * genes + g]);
        let m = CountMatrix::new(
            values,
            (0..rows).map(|r| format!("cell-{r}")).collect(),
            (0..genes).map(|g| format!("G{g}")).collect(),
        )
        .unwrap();
        let dir = TempDir::new().unwrap();
        let d = dir.path();
        io::write_dense_counts(d.join("dense.csv"), &m).unwrap();
        prop_assert_eq!(&io::read_dense_counts(d.join("dense.csv")).unwrap(), &m);
        io::write_sparse_counts(d.join("m.mtx"), d.join("r.txt"), d.join("g.txt"), &m).unwrap();
        prop_assert_eq!(&io::read_sparse_counts(d.join("m.mtx"), d.join("r.txt"), d.join("g.txt")).unwrap(), &m);
    }

    #[test]
    fn features_round_trip_bit_exactly(
        values in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, 12),
    ) {
        let set = PatchFeatureSet::new(
            "slide_a",
            Array2::from_shape_vec((4, 3), values).unwrap(),
            vec!["x".into(), "y".into(), "z".into(), "w".into()],
        )
        .unwrap();
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("slide_a.csv");
        io::write_feature_set(&path, &set).unwrap();
        let back = io::read_feature_set(&path).unwrap();
        prop_assert_eq!(back.slide_id(), "slide_a");
        prop_assert_eq!(back.patch_ids(), set.patch_ids());
        let same = back.features().iter().zip(set.features()).all(|(a, b)| a.to_bits() == b.to_bits() || (*a == 0.0 && *b == 0.0));
        prop_assert!(same);
    }
}

#[test]
fn duplicated_patches_do_not_move_slide_shape() {
    let params = random_model(3, 3, 9, 2);
    let x = features(3, 4, 2);
    let doubled = ndarray::concatenate![ndarray::Axis(0), *x.features(), *x.features()];
    let ids = (0..8).map(|i| format!("p{i}")).collect();
    let y = PatchFeatureSet::new("s", doubled, ids).unwrap();
    let mut no_beta = params.clone();
    no_beta.correction.c = Array1::from_elem(9, -1e3);
    let a = forward_slide(&no_beta, &x, 500.0).unwrap().mu_bar;
    let b = forward_slide(&no_beta, &y, 500.0).unwrap().mu_bar;
    for (u, v) in a.iter().zip(&b) {
        assert!((u - v).abs() < 1e-10);
    }
}
