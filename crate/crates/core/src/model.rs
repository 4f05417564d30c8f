//! The CPNN forward model and its analytic backward pass.
//!
//! Each patch feature vector `h_i` is mapped to cell-type weights
//! `w_i = softmax(W2 · act(W1 h_i + b1) + b2)`. A slide's expected expression is
//! `μ_g = α_g Σ_i Σ_c w_ic T̄_cg + β_g`, rescaled to the observed library size
//! `l` as `μ̄_g = l μ_g / Σ_g' μ_g'`. At patch level the per-patch mixture
//! `ê_ig = α_g Σ_c w_ic T̄_cg + β_g` is the prediction.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::PatchFeatureSet;
use crate::error::{CpnnError, Result};
use crate::nb::MIN_MEAN;
use crate::optim::Segment;
use crate::prototype::PrototypeMatrix;
use crate::special::{gelu, gelu_grad, sigmoid, softmax_in_place, softplus, softplus_inv};

/// Which parts of the model are active. All `true` is the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    /// Initialise the trainable prototype from the single-cell prototype.
    pub prototype_init: bool,
    /// Learn the per-gene scale α and shift β; otherwise α ≡ 1, β ≡ 0.
    pub modality_correction: bool,
    /// Update the prototype during training.
    pub update_prototype: bool,
    /// Apply the consistency regularizer.
    pub regularize: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self::full()
    }
}

impl AblationFlags {
    pub fn full() -> Self {
        Self {
            prototype_init: true,
            modality_correction: true,
            update_prototype: true,
            regularize: true,
        }
    }

    /// Frozen prototype, no modality correction, no regularizer.
    pub fn baseline() -> Self {
        Self {
            prototype_init: true,
            modality_correction: false,
            update_prototype: false,
            regularize: false,
        }
    }
}

/// Two linear layers with an optional GELU between them.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightHead {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub activation: bool,
}

impl WeightHead {
    pub fn zeros(n_types: usize, feature_dim: usize, hidden: usize, activation: bool) -> Self {
        Self {
            w1: Array2::zeros((hidden, feature_dim)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((n_types, hidden)),
            b2: Array1::zeros(n_types),
            activation,
        }
    }

    /// Uniform fan-in initialisation `U(−1/√fan_in, 1/√fan_in)`.
    pub fn init<R: Rng + ?Sized>(
        n_types: usize,
        feature_dim: usize,
        hidden: usize,
        activation: bool,
        rng: &mut R,
    ) -> Self {
        let mut uniform = |shape: (usize, usize), fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Array2::from_shape_simple_fn(shape, || rng.random_range(-bound..=bound))
        };
        let w1 = uniform((hidden, feature_dim), feature_dim);
        let b1 = uniform((1, hidden), feature_dim).remove_axis(Axis(0));
        let w2 = uniform((n_types, hidden), hidden);
        let b2 = uniform((1, n_types), hidden).remove_axis(Axis(0));
        Self {
            w1,
            b1,
            w2,
            b2,
            activation,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn n_types(&self) -> usize {
        self.w2.nrows()
    }

    fn forward(&self, x: ArrayView2<f64>) -> Result<HeadTrace> {
        if x.ncols() != self.feature_dim() {
            return Err(CpnnError::shape(format!(
                "features have dimension {} but the head expects {}",
                x.ncols(),
                self.feature_dim()
            )));
        }
        let pre = x.dot(&self.w1.t()) + &self.b1;
        let hidden = if self.activation {
            pre.mapv(gelu)
        } else {
            pre.clone()
        };
        let logits = hidden.dot(&self.w2.t()) + &self.b2;
        // the product can come back column-major for degenerate shapes
        let mut weights = logits.as_standard_layout().into_owned();
        for mut row in weights.rows_mut() {
            softmax_in_place(row.as_slice_mut().expect("standard layout"));
        }
        Ok(HeadTrace {
            features: x.to_owned(),
            pre,
            hidden,
            weights,
        })
    }

    /// Gradients of the head given `dL/dw` for every patch.
    fn backward(&self, trace: &HeadTrace, d_weights: ArrayView2<f64>, grads: &mut CpnnGradients) {
        let w = &trace.weights;
        // softmax: dz_ic = w_ic (dw_ic − Σ_c' w_ic' dw_ic')
        let dots = (w * &d_weights).sum_axis(Axis(1));
        let mut d_logits = d_weights.to_owned() - &dots.insert_axis(Axis(1));
        d_logits *= w;
        grads.b2 += &d_logits.sum_axis(Axis(0));
        grads.w2 += &d_logits.t().dot(&trace.hidden);
        let mut d_pre = d_logits.dot(&self.w2);
        if self.activation {
            Zip::from(&mut d_pre)
                .and(&trace.pre)
                .for_each(|d, &p| *d *= gelu_grad(p));
        }
        grads.b1 += &d_pre.sum_axis(Axis(0));
        grads.w1 += &d_pre.t().dot(&trace.features);
    }
}

/// Per-gene `α_g = exp(a_g)` and `β_g = softplus(c_g)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityCorrection {
    pub a: Array1<f64>,
    pub c: Array1<f64>,
}

impl ModalityCorrection {
    pub fn alpha(&self) -> Array1<f64> {
        self.a.mapv(f64::exp)
    }

    pub fn beta(&self) -> Array1<f64> {
        self.c.mapv(softplus)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub n_types: usize,
    pub n_genes: usize,
    pub feature_dim: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Hidden width of the head; `None` uses the feature dimension.
    pub hidden: Option<usize>,
    /// GELU between the two linear layers.
    pub activation: bool,
    /// Initial value of every `β_g`.
    pub beta_init: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: None,
            activation: true,
            beta_init: 1e-3,
        }
    }
}

/// Everything the model learns, plus the frozen initial prototype.
#[derive(Debug, Clone, PartialEq)]
pub struct CpnnParameters {
    pub head: WeightHead,
    pub correction: ModalityCorrection,
    /// `θ^b_g = exp(rho_g)`
    pub rho: Array1<f64>,
    /// `T̄ = softplus(proto_free)`
    pub proto_free: Array2<f64>,
    pub proto_init: Array2<f64>,
    pub flags: AblationFlags,
    pub gene_ids: Vec<String>,
    pub cell_type_names: Vec<String>,
}

/// Gradients with the same layout as the trainable parts of [`CpnnParameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct CpnnGradients {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub a: Array1<f64>,
    pub c: Array1<f64>,
    pub rho: Array1<f64>,
    pub proto_free: Array2<f64>,
}

impl CpnnGradients {
    pub fn zeros(dims: ModelDims) -> Self {
        let ModelDims {
            n_types: c,
            n_genes: g,
            feature_dim: d,
            hidden: h,
        } = dims;
        Self {
            w1: Array2::zeros((h, d)),
            b1: Array1::zeros(h),
            w2: Array2::zeros((c, h)),
            b2: Array1::zeros(c),
            a: Array1::zeros(g),
            c: Array1::zeros(g),
            rho: Array1::zeros(g),
            proto_free: Array2::zeros((c, g)),
        }
    }

    pub fn add_assign(&mut self, other: &CpnnGradients) {
        self.w1 += &other.w1;
        self.b1 += &other.b1;
        self.w2 += &other.w2;
        self.b2 += &other.b2;
        self.a += &other.a;
        self.c += &other.c;
        self.rho += &other.rho;
        self.proto_free += &other.proto_free;
    }

    pub fn scale(&mut self, k: f64) {
        self.w1 *= k;
        self.b1 *= k;
        self.w2 *= k;
        self.b2 *= k;
        self.a *= k;
        self.c *= k;
        self.rho *= k;
        self.proto_free *= k;
    }

    /// Concatenate in [`CpnnParameters::segments`] order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(self.w1.iter());
        out.extend(self.b1.iter());
        out.extend(self.w2.iter());
        out.extend(self.b2.iter());
        out.extend(self.a.iter());
        out.extend(self.c.iter());
        out.extend(self.rho.iter());
        out.extend(self.proto_free.iter());
        out
    }

    /// Add `∂L/∂T̄` coming from outside the forward model (regularizers).
    pub fn add_prototype_grad(&mut self, params: &CpnnParameters, d_proto: ArrayView2<f64>) {
        if params.flags.update_prototype {
            Zip::from(&mut self.proto_free)
                .and(d_proto)
                .and(&params.proto_free)
                .for_each(|g, &d, &f| *g += d * sigmoid(f));
        }
    }

    /// Add `∂L/∂θ` for the bulk dispersions.
    pub fn add_theta_grad(&mut self, params: &CpnnParameters, d_theta: ArrayView1<f64>) {
        Zip::from(&mut self.rho)
            .and(d_theta)
            .and(&params.rho)
            .for_each(|g, &d, &r| *g += d * r.exp());
    }
}

impl CpnnParameters {
    /// Initialise from a normalised prototype matrix.
    ///
    /// With `flags.prototype_init` the trainable prototype starts at `T̄⁰`;
    /// otherwise at random rows on the simplex. The head is drawn from `seed`.
    pub fn init(
        proto0: &PrototypeMatrix,
        feature_dim: usize,
        cfg: &ModelConfig,
        flags: AblationFlags,
        seed: u64,
    ) -> Result<Self> {
        if !proto0.is_normalized(1e-6) {
            return Err(CpnnError::data("initial prototype rows must sum to 1"));
        }
        if feature_dim == 0 {
            return Err(CpnnError::shape("feature dimension must be positive"));
        }
        if !(cfg.beta_init > 0.0 && cfg.beta_init.is_finite()) {
            return Err(CpnnError::Config("beta_init must be positive".into()));
        }
        let (c_n, g_n) = proto0.values().dim();
        let hidden = cfg.hidden.unwrap_or(feature_dim);
        if hidden == 0 {
            return Err(CpnnError::Config("hidden width must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head = WeightHead::init(c_n, feature_dim, hidden, cfg.activation, &mut rng);
        let start = if flags.prototype_init {
            proto0.values().clone()
        } else {
            let mut r = Array2::from_shape_simple_fn((c_n, g_n), || rng.random::<f64>());
            for mut row in r.rows_mut() {
                let s = row.sum();
                row /= s;
            }
            r
        };
        Ok(Self {
            head,
            correction: ModalityCorrection {
                a: Array1::zeros(g_n),
                c: Array1::from_elem(g_n, softplus_inv(cfg.beta_init)),
            },
            rho: Array1::zeros(g_n),
            proto_free: start.mapv(|v| softplus_inv(v.max(1e-12))),
            proto_init: proto0.values().clone(),
            flags,
            gene_ids: proto0.gene_ids().to_vec(),
            cell_type_names: proto0.cell_type_names().to_vec(),
        })
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            n_types: self.proto_free.nrows(),
            n_genes: self.proto_free.ncols(),
            feature_dim: self.head.feature_dim(),
            hidden: self.head.hidden(),
        }
    }

    /// Check that every tensor agrees with the declared dimensions.
    pub fn validate(&self) -> Result<()> {
        let d = self.dims();
        let ok = self.head.b1.len() == d.hidden
            && self.head.w2.dim() == (d.n_types, d.hidden)
            && self.head.b2.len() == d.n_types
            && self.correction.a.len() == d.n_genes
            && self.correction.c.len() == d.n_genes
            && self.rho.len() == d.n_genes
            && self.proto_init.dim() == (d.n_types, d.n_genes)
            && self.gene_ids.len() == d.n_genes
            && self.cell_type_names.len() == d.n_types;
        if !ok {
            return Err(CpnnError::shape(
                "model tensors have inconsistent dimensions",
            ));
        }
        Ok(())
    }

    pub fn prototype(&self) -> Array2<f64> {
        self.proto_free.mapv(softplus)
    }

    pub fn theta(&self) -> Array1<f64> {
        self.rho.mapv(f64::exp)
    }

    /// `(α, β)` after applying the modality-correction flag.
    pub fn alpha_beta(&self) -> (Array1<f64>, Array1<f64>) {
        if self.flags.modality_correction {
            (self.correction.alpha(), self.correction.beta())
        } else {
            let g = self.dims().n_genes;
            (Array1::ones(g), Array1::zeros(g))
        }
    }

    /// Named flat blocks in the fixed order used by the optimizer and checkpoints.
    pub fn segments(&self) -> Vec<Segment> {
        let d = self.dims();
        vec![
            Segment::new("head.w1", d.hidden * d.feature_dim, true),
            Segment::new("head.b1", d.hidden, true),
            Segment::new("head.w2", d.n_types * d.hidden, true),
            Segment::new("head.b2", d.n_types, true),
            Segment::new("correction.a", d.n_genes, false),
            Segment::new("correction.c", d.n_genes, false),
            Segment::new("rho", d.n_genes, false),
            Segment::new("proto_free", d.n_types * d.n_genes, false),
        ]
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(self.head.w1.iter());
        out.extend(self.head.b1.iter());
        out.extend(self.head.w2.iter());
        out.extend(self.head.b2.iter());
        out.extend(self.correction.a.iter());
        out.extend(self.correction.c.iter());
        out.extend(self.rho.iter());
        out.extend(self.proto_free.iter());
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let expected: usize = self.segments().iter().map(|s| s.len).sum();
        if flat.len() != expected {
            return Err(CpnnError::shape(format!(
                "flat vector has {} values, model has {expected}",
                flat.len()
            )));
        }
        let mut it = flat.iter().copied();
        let mut fill = |dst: &mut dyn Iterator<Item = &mut f64>| {
            for v in dst {
                *v = it.next().expect("length checked");
            }
        };
        fill(&mut self.head.w1.iter_mut());
        fill(&mut self.head.b1.iter_mut());
        fill(&mut self.head.w2.iter_mut());
        fill(&mut self.head.b2.iter_mut());
        fill(&mut self.correction.a.iter_mut());
        fill(&mut self.correction.c.iter_mut());
        fill(&mut self.rho.iter_mut());
        fill(&mut self.proto_free.iter_mut());
        Ok(())
    }

    /// Zero the gradients of tensors the flags freeze.
    pub fn mask_gradients(&self, grads: &mut CpnnGradients) {
        if !self.flags.modality_correction {
            grads.a.fill(0.0);
            grads.c.fill(0.0);
        }
        if !self.flags.update_prototype {
            grads.proto_free.fill(0.0);
        }
    }
}

/// Intermediates of the weight head for one slide.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadTrace {
    features: Array2<f64>,
    pre: Array2<f64>,
    hidden: Array2<f64>,
    weights: Array2<f64>,
}

/// Slide-level forward results and cached intermediates.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub weights: Array2<f64>,
    pub mean_weight: Array1<f64>,
    pub mu: Array1<f64>,
    pub mu_bar: Array1<f64>,
    pub library: f64,
    head: HeadTrace,
    /// `Σ_i w_i` per cell type
    weight_sum: Array1<f64>,
    /// `Σ_c S_c T̄_cg`
    mix: Array1<f64>,
    /// `μ` before clamping
    mu_raw: Array1<f64>,
    prototype: Array2<f64>,
    alpha: Array1<f64>,
}

/// Per-patch forward results and cached intermediates.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchTrace {
    pub weights: Array2<f64>,
    /// `N_p × G` predictions, clamped at zero.
    pub pred: Array2<f64>,
    head: HeadTrace,
    mix: Array2<f64>,
    pred_raw: Array2<f64>,
    prototype: Array2<f64>,
    alpha: Array1<f64>,
}

/// Per-patch cell-type weights, one simplex row per patch.
pub fn compute_weights(head: &WeightHead, features: &PatchFeatureSet) -> Result<Array2<f64>> {
    Ok(head.forward(features.features().view())?.weights)
}

/// Slide-level expected counts for library size `library`.
pub fn forward_slide(
    params: &CpnnParameters,
    features: &PatchFeatureSet,
    library: f64,
) -> Result<ForwardTrace> {
    if !(library > 0.0 && library.is_finite()) {
        return Err(CpnnError::data(format!(
            "library size must be positive, got {library} for slide `{}`",
            features.slide_id()
        )));
    }
    let head = params.head.forward(features.features().view())?;
    if head.weights.ncols() != params.dims().n_types {
        return Err(CpnnError::shape(
            "head output does not match the number of cell types",
        ));
    }
    let prototype = params.prototype();
    let (alpha, beta) = params.alpha_beta();
    let weight_sum = head.weights.sum_axis(Axis(0));
    let mix = weight_sum.dot(&prototype);
    let mu_raw = &alpha * &mix + &beta;
    let mu = mu_raw.mapv(|m| m.max(MIN_MEAN));
    let total = mu.sum();
    let mu_bar = mu.mapv(|m| library * m / total);
    if mu_bar.iter().any(|v| !v.is_finite()) {
        return Err(CpnnError::numeric(format!(
            "non-finite expected counts for slide `{}`",
            features.slide_id()
        )));
    }
    let mean_weight = &weight_sum / head.weights.nrows() as f64;
    Ok(ForwardTrace {
        weights: head.weights.clone(),
        mean_weight,
        mu,
        mu_bar,
        library,
        head,
        weight_sum,
        mix,
        mu_raw,
        prototype,
        alpha,
    })
}

/// Backpropagate `dL/dμ̄` and `dL/dW̄` through one slide's forward pass.
pub fn backward_slide(
    params: &CpnnParameters,
    trace: &ForwardTrace,
    d_mu_bar: ArrayView1<f64>,
    d_mean_weight: ArrayView1<f64>,
) -> Result<CpnnGradients> {
    let dims = params.dims();
    if d_mu_bar.len() != dims.n_genes
        || d_mean_weight.len() != dims.n_types
        || trace.mu.len() != dims.n_genes
    {
        return Err(CpnnError::shape(
            "upstream gradients do not match the trace",
        ));
    }
    let mut grads = CpnnGradients::zeros(dims);
    let total = trace.mu.sum();
    // quotient rule of μ̄ = l μ / Σμ
    let weighted: f64 = d_mu_bar
        .iter()
        .zip(&trace.mu)
        .map(|(u, m)| u * m)
        .sum::<f64>()
        / total;
    let scale = trace.library / total;
    let d_mu = Array1::from_shape_fn(dims.n_genes, |g| {
        if trace.mu_raw[g] < MIN_MEAN {
            0.0
        } else {
            scale * (d_mu_bar[g] - weighted)
        }
    });
    if params.flags.modality_correction {
        for g in 0..dims.n_genes {
            grads.a[g] = d_mu[g] * trace.mix[g] * trace.alpha[g];
            grads.c[g] = d_mu[g] * sigmoid(params.correction.c[g]);
        }
    }
    let d_mix = &d_mu * &trace.alpha;
    if params.flags.update_prototype {
        for c in 0..dims.n_types {
            for g in 0..dims.n_genes {
                grads.proto_free[[c, g]] =
                    trace.weight_sum[c] * d_mix[g] * sigmoid(params.proto_free[[c, g]]);
            }
        }
    }
    let n_p = trace.weights.nrows() as f64;
    let d_sum = trace.prototype.dot(&d_mix) + &(&d_mean_weight / n_p);
    let d_weights = Array2::from_shape_fn(trace.weights.dim(), |(_, c)| d_sum[c]);
    params
        .head
        .backward(&trace.head, d_weights.view(), &mut grads);
    Ok(grads)
}

/// Per-patch predictions `ê_ig = α_g Σ_c w_ic T̄_cg + β_g`, clamped at zero.
pub fn forward_patch(params: &CpnnParameters, features: &PatchFeatureSet) -> Result<PatchTrace> {
    let head = params.head.forward(features.features().view())?;
    if head.weights.ncols() != params.dims().n_types {
        return Err(CpnnError::shape(
            "head output does not match the number of cell types",
        ));
    }
    let prototype = params.prototype();
    let (alpha, beta) = params.alpha_beta();
    let mix = head.weights.dot(&prototype);
    let pred_raw = &mix * &alpha + &beta;
    let pred = pred_raw.mapv(|v| v.max(0.0));
    if pred.iter().any(|v| !v.is_finite()) {
        return Err(CpnnError::numeric(format!(
            "non-finite patch predictions for slide `{}`",
            features.slide_id()
        )));
    }
    Ok(PatchTrace {
        weights: head.weights.clone(),
        pred,
        head,
        mix,
        pred_raw,
        prototype,
        alpha,
    })
}

/// Backpropagate `dL/dê` through the patch-level forward pass.
pub fn backward_patch(
    params: &CpnnParameters,
    trace: &PatchTrace,
    d_pred: ArrayView2<f64>,
) -> Result<CpnnGradients> {
    let dims = params.dims();
    if d_pred.dim() != trace.pred.dim() {
        return Err(CpnnError::shape(
            "upstream gradient does not match the trace",
        ));
    }
    let mut grads = CpnnGradients::zeros(dims);
    let mut d = d_pred.to_owned();
    Zip::from(&mut d).and(&trace.pred_raw).for_each(|v, &raw| {
        if raw < 0.0 {
            *v = 0.0
        }
    });
    if params.flags.modality_correction {
        let d_alpha = (&d * &trace.mix).sum_axis(Axis(0));
        let d_beta = d.sum_axis(Axis(0));
        for g in 0..dims.n_genes {
            grads.a[g] = d_alpha[g] * trace.alpha[g];
            grads.c[g] = d_beta[g] * sigmoid(params.correction.c[g]);
        }
    }
    let d_mix = d * &trace.alpha;
    if params.flags.update_prototype {
        let d_proto = trace.weights.t().dot(&d_mix);
        Zip::from(&mut grads.proto_free)
            .and(&d_proto)
            .and(&params.proto_free)
            .for_each(|g, &dp, &f| *g = dp * sigmoid(f));
    }
    let d_weights = d_mix.dot(&trace.prototype.t());
    params
        .head
        .backward(&trace.head, d_weights.view(), &mut grads);
    Ok(grads)
}
