//! Negative-binomial likelihood in the mean/dispersion parameterisation.
//!
//! `Pr(k | μ, θ) = Γ(k+θ) / (Γ(θ) Γ(k+1)) · (μ/(μ+θ))^k · (θ/(μ+θ))^θ`,
//! with variance `μ + μ²/θ`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{CpnnError, Result};
use crate::special::{
    digamma_unchecked, ln_gamma_diff, ln_gamma_unchecked, stirling_error, HALF_LN_2PI,
};

/// Lower bound applied to every mean before the likelihood is evaluated.
pub const MIN_MEAN: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NbParams {
    mu: f64,
    theta: f64,
}

impl NbParams {
    pub fn new(mu: f64, theta: f64) -> Result<Self> {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(CpnnError::numeric(format!(
                "NB mean must be finite and > 0, got {mu}"
            )));
        }
        if !(theta.is_finite() && theta > 0.0) {
            return Err(CpnnError::numeric(format!(
                "NB dispersion must be finite and > 0, got {theta}"
            )));
        }
        Ok(Self { mu, theta })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn variance(&self) -> f64 {
        self.mu + self.mu * self.mu / self.theta
    }
}

/// Deviance term `x ln(x/m) + m − x`, summed as a series when `x ≈ m`.
fn deviance(x: f64, m: f64) -> f64 {
    if (x - m).abs() < 0.1 * (x + m) {
        let v = (x - m) / (x + m);
        let v2 = v * v;
        let mut s = (x - m) * v;
        let mut ej = 2.0 * x * v;
        let mut j = 1.0;
        loop {
            ej *= v2;
            let next = s + ej / (2.0 * j + 1.0);
            if next == s {
                return s;
            }
            s = next;
            j += 1.0;
        }
    }
    x * (x / m).ln() + m - x
}

/// Log probability mass at count `k`.
///
/// Evaluated in saddle-point form (Stirling remainders plus deviance terms),
/// which avoids the cancellation between `ln Γ(k+θ)` and `ln Γ(θ)` when `θ`
/// or `k` is large.
pub fn nb_log_pmf(k: u64, p: NbParams) -> f64 {
    let (mu, theta) = (p.mu, p.theta);
    // θ·ln(θ/(μ+θ)) = −θ·ln(1 + μ/θ); the log1p form stays accurate for θ ≫ μ.
    if k == 0 {
        return -theta * (mu / theta).ln_1p();
    }
    let x = k as f64;
    if x < 1e-10 * theta {
        let lp = if theta < mu {
            (theta / (1.0 + theta / mu)).ln()
        } else {
            (mu / (1.0 + mu / theta)).ln()
        };
        return x * lp - mu - ln_gamma_unchecked(x + 1.0) + (x * (x - 1.0) / (2.0 * theta)).ln_1p();
    }
    // θ/(k+θ) · Binom(θ; k+θ, θ/(θ+μ))
    let n = x + theta;
    let (pr, qr) = (theta / (theta + mu), mu / (theta + mu));
    let lc = stirling_error(n)
        - stirling_error(theta)
        - stirling_error(x)
        - deviance(theta, n * pr)
        - deviance(x, n * qr);
    let lf = 2.0 * HALF_LN_2PI + theta.ln() + (x / n).ln();
    (theta / n).ln() + lc - 0.5 * lf
}

/// ψ(k + θ) − ψ(θ) for integer `k`, summed directly when `k` is small.
#[inline]
pub(crate) fn digamma_shift(k: f64, theta: f64) -> f64 {
    if k < 16.0 {
        let mut acc = 0.0;
        let mut j = 0.0;
        while j < k {
            acc += 1.0 / (theta + j);
            j += 1.0;
        }
        acc
    } else {
        digamma_unchecked(k + theta) - digamma_unchecked(theta)
    }
}

/// Negative log pmf of one observation, written as the five-term expansion.
/// `mu` must already be clamped. The gamma terms are grouped so that the
/// large `ln Γ` values cancel analytically rather than in floating point.
#[inline]
pub(crate) fn nb_nll_term(k: f64, mu: f64, theta: f64) -> f64 {
    let gamma_terms = if k < 16.0 {
        let mut acc = -ln_gamma_unchecked(k + 1.0);
        let mut j = 0.0;
        while j < k {
            acc += (theta + j).ln();
            j += 1.0;
        }
        acc
    } else if theta <= k + 1.0 {
        ln_gamma_diff(k + 1.0, theta - 1.0) - ln_gamma_unchecked(theta)
    } else {
        ln_gamma_diff(theta, k) - ln_gamma_unchecked(k + 1.0)
    };
    let mut ll = gamma_terms - theta * (mu / theta).ln_1p();
    if k > 0.0 {
        ll -= k * (theta / mu).ln_1p();
    }
    -ll
}

/// Partial derivatives of `-log pmf` with respect to `(mu, theta)`.
#[inline]
pub(crate) fn nb_nll_term_grads(k: f64, mu: f64, theta: f64) -> (f64, f64) {
    let denom = mu + theta;
    let d_mu = -(k / mu - (k + theta) / denom);
    let d_theta = -(digamma_shift(k, theta) + (theta / denom).ln() + 1.0 - (k + theta) / denom);
    (d_mu, d_theta)
}

fn check_batch(
    counts: &ArrayView2<u64>,
    mu: &ArrayView2<f64>,
    theta: &ArrayView1<f64>,
) -> Result<()> {
    if counts.dim() != mu.dim() {
        return Err(CpnnError::shape(format!(
            "counts are {:?} but means are {:?}",
            counts.dim(),
            mu.dim()
        )));
    }
    if theta.len() != counts.ncols() {
        return Err(CpnnError::shape(format!(
            "{} dispersions for {} genes",
            theta.len(),
            counts.ncols()
        )));
    }
    if counts.nrows() == 0 {
        return Err(CpnnError::shape("empty mini-batch"));
    }
    if let Some(bad) = mu.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
        return Err(CpnnError::numeric(format!(
            "NB mean must be finite and > 0, got {bad}"
        )));
    }
    if let Some(bad) = theta.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(CpnnError::numeric(format!(
            "NB dispersion must be finite and > 0, got {bad}"
        )));
    }
    Ok(())
}

/// Mini-batch NLL `−(1/N_m) Σ_n Σ_g log Pr(e_ng | μ_ng, θ_g)`.
///
/// Rows are reduced in order and each row total is added in order, so the
/// result is independent of thread count.
pub fn nb_nll_batch(
    counts: ArrayView2<u64>,
    mu: ArrayView2<f64>,
    theta: ArrayView1<f64>,
) -> Result<f64> {
    check_batch(&counts, &mu, &theta)?;
    let n_rows = counts.nrows() as f64;
    let mut total = 0.0;
    for (krow, mrow) in counts.rows().into_iter().zip(mu.rows()) {
        let mut row = 0.0;
        for ((&k, &m), &t) in krow.iter().zip(mrow.iter()).zip(theta.iter()) {
            row += nb_nll_term(k as f64, m.max(MIN_MEAN), t);
        }
        total += row;
    }
    Ok(total / n_rows)
}

/// Analytic gradients of [`nb_nll_batch`] with respect to the means and the
/// per-gene dispersions. Means below [`MIN_MEAN`] receive zero gradient.
pub fn nb_nll_grads(
    counts: ArrayView2<u64>,
    mu: ArrayView2<f64>,
    theta: ArrayView1<f64>,
) -> Result<(Array2<f64>, Array1<f64>)> {
    check_batch(&counts, &mu, &theta)?;
    let scale = 1.0 / counts.nrows() as f64;
    let mut d_mu = Array2::zeros(mu.dim());
    let mut d_theta = Array1::zeros(theta.len());
    for ((krow, mrow), mut drow) in counts
        .rows()
        .into_iter()
        .zip(mu.rows())
        .zip(d_mu.rows_mut())
    {
        for (g, ((&k, &m), &t)) in krow.iter().zip(mrow.iter()).zip(theta.iter()).enumerate() {
            let clamped = m < MIN_MEAN;
            let (dm, dt) = nb_nll_term_grads(k as f64, m.max(MIN_MEAN), t);
            drow[g] = if clamped { 0.0 } else { dm * scale };
            d_theta[g] += dt * scale;
        }
    }
    Ok((d_mu, d_theta))
}
