//! AdamW over flat parameter vectors, and a central-difference gradient checker.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CpnnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// A named contiguous block of the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub name: String,
    pub len: usize,
    /// Whether the optimizer's weight decay applies to this block.
    pub decay: bool,
}

impl Segment {
    pub fn new(name: impl Into<String>, len: usize, decay: bool) -> Self {
        Self {
            name: name.into(),
            len,
            decay,
        }
    }
}

/// Optimizer state: step counter and first/second moment buffers.
#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: AdamWConfig,
    segments: Vec<Segment>,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, segments: Vec<Segment>) -> Result<Self> {
        if !(cfg.lr >= 0.0 && cfg.eps > 0.0 && cfg.weight_decay >= 0.0) {
            return Err(CpnnError::Config(format!(
                "invalid AdamW hyperparameters {cfg:?}"
            )));
        }
        if !(0.0..1.0).contains(&cfg.beta1) || !(0.0..1.0).contains(&cfg.beta2) {
            return Err(CpnnError::Config("AdamW betas must lie in [0, 1)".into()));
        }
        let n: usize = segments.iter().map(|s| s.len).sum();
        Ok(Self {
            cfg,
            segments,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        })
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    fn locate(&self, mut idx: usize) -> String {
        for s in &self.segments {
            if idx < s.len {
                return format!("{}[{idx}]", s.name);
            }
            idx -= s.len;
        }
        format!("param[{idx}]")
    }

    /// One decoupled-weight-decay Adam update.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(CpnnError::shape(format!(
                "optimizer holds {} parameters, got {} values and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(CpnnError::numeric(format!(
                "non-finite gradient for {}",
                self.locate(i)
            )));
        }
        self.step += 1;
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.cfg;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let mut offset = 0;
        for seg in &self.segments {
            let wd = if seg.decay { weight_decay } else { 0.0 };
            let range = offset..offset + seg.len;
            for i in range {
                let g = grads[i];
                self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                let m_hat = self.m[i] / bc1;
                let v_hat = self.v[i] / bc2;
                params[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * params[i]);
            }
            offset += seg.len;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "max_rel_err={:e} worst={} pass={}",
            self.max_rel_err,
            self.worst_param,
            self.passed()
        )
    }
}

/// Compare `analytic` against central differences of `loss_fn` at `params`.
///
/// Relative error uses the denominator `max(|analytic|, |numeric|, 1e-8)`.
/// Coordinates with `|p| > 1e3` use a step scaled by `|p| / 1e3`.
/// `names` labels each coordinate for the report.
pub fn finite_diff_check<F>(
    loss_fn: F,
    params: &[f64],
    analytic: &[f64],
    names: &[String],
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if analytic.len() != params.len() || names.len() != params.len() {
        return Err(CpnnError::shape(format!(
            "{} parameters, {} gradients, {} names",
            params.len(),
            analytic.len(),
            names.len()
        )));
    }
    if params.is_empty() {
        return Err(CpnnError::shape("no parameters to check"));
    }
    let errs: Vec<f64> = (0..params.len())
        .into_par_iter()
        .map(|i| {
            let step = if params[i].abs() > 1e3 {
                h * params[i].abs() / 1e3
            } else {
                h
            };
            let mut probe = params.to_vec();
            probe[i] = params[i] + step;
            let up = loss_fn(&probe)?;
            probe[i] = params[i] - step;
            let down = loss_fn(&probe)?;
            if !(up.is_finite() && down.is_finite()) {
                return Err(CpnnError::numeric(format!(
                    "non-finite loss when perturbing {}",
                    names[i]
                )));
            }
            let numeric = (up - down) / (2.0 * step);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
            Ok((analytic[i] - numeric).abs() / denom)
        })
        .collect::<Result<_>>()?;
    // first index wins ties so the report is deterministic
    let (worst_index, max_rel_err) =
        errs.iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, e)| {
                if e > best.1 {
                    (i, e)
                } else {
                    best
                }
            });
    Ok(GradCheckReport {
        max_rel_err,
        worst_param: names[worst_index].clone(),
        worst_index,
        tol,
    })
}

/// Labels `name[i]` for every coordinate of the given segments.
pub fn segment_names(segments: &[Segment]) -> Vec<String> {
    segments
        .iter()
        .flat_map(|s| (0..s.len).map(move |i| format!("{}[{i}]", s.name)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(cfg: AdamWConfig) -> AdamW {
        AdamW::new(cfg, vec![Segment::new("p", 1, true)]).unwrap()
    }

    #[test]
    fn zero_gradient_no_decay_is_a_no_op() {
        let mut opt = AdamW::new(
            AdamWConfig {
                weight_decay: 0.0,
                ..AdamWConfig::default()
            },
            vec![Segment::new("p", 3, true)],
        )
        .unwrap();
        let mut p = vec![1.0, -2.0, 3.0];
        opt.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_closed_form() {
        let mut opt = scalar(AdamWConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        });
        let mut p = vec![1.0];
        opt.step(&mut p, &[1.0]).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn quadratic_descends_monotonically() {
        let mut opt = scalar(AdamWConfig::with_lr(0.1));
        let mut p = vec![5.0f64];
        let mut prev = p[0].abs();
        for _ in 0..10 {
            let g = 2.0 * p[0];
            opt.step(&mut p, &[g]).unwrap();
            assert!(p[0].abs() < prev);
            prev = p[0].abs();
        }
    }

    #[test]
    fn zero_lr_freezes_parameters() {
        let mut opt = scalar(AdamWConfig::with_lr(0.0));
        let mut p = vec![2.5];
        for g in [1.0, -40.0, 3e5] {
            opt.step(&mut p, &[g]).unwrap();
        }
        assert_eq!(p, vec![2.5]);
    }

    #[test]
    fn decay_only_on_flagged_segments() {
        let mut opt = AdamW::new(
            AdamWConfig {
                lr: 0.1,
                weight_decay: 0.5,
                ..AdamWConfig::default()
            },
            vec![Segment::new("w", 1, true), Segment::new("alpha", 1, false)],
        )
        .unwrap();
        let mut p = vec![1.0, 1.0];
        opt.step(&mut p, &[0.0, 0.0]).unwrap();
        assert!((p[0] - 0.95).abs() < 1e-15);
        assert_eq!(p[1], 1.0);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut opt = AdamW::new(
            AdamWConfig::default(),
            vec![
                Segment::new("head.w1", 2, true),
                Segment::new("theta", 2, false),
            ],
        )
        .unwrap();
        let mut p = vec![0.0; 4];
        let err = opt.step(&mut p, &[0.0, 0.0, f64::NAN, 0.0]).unwrap_err();
        assert!(err.to_string().contains("theta[0]"), "{err}");
        assert!(opt.step(&mut p, &[0.0; 3]).is_err());
    }

    fn quad(p: &[f64]) -> Result<f64> {
        Ok(p.iter()
            .enumerate()
            .map(|(i, x)| (i as f64 + 1.0) * x * x)
            .sum())
    }

    fn quad_grad(p: &[f64]) -> Vec<f64> {
        p.iter()
            .enumerate()
            .map(|(i, x)| 2.0 * (i as f64 + 1.0) * x)
            .collect()
    }

    #[test]
    fn quadratic_gradient_check_is_exact() {
        let p = vec![0.3, -0.7, 0.5];
        let names = segment_names(&[Segment::new("q", 3, true)]);
        let r = finite_diff_check(quad, &p, &quad_grad(&p), &names, 1e-5, 1e-6).unwrap();
        assert!(r.max_rel_err < 1e-10, "{r}");
        assert!(r.passed());
    }

    #[test]
    fn corrupted_coordinate_is_identified() {
        let p = vec![0.3, -1.2, 2.0, 4.0];
        let mut g = quad_grad(&p);
        g[2] *= 2.0;
        let names = segment_names(&[Segment::new("q", 4, true)]);
        let r = finite_diff_check(quad, &p, &g, &names, 1e-5, 1e-6).unwrap();
        assert_eq!(r.worst_param, "q[2]");
        assert!(!r.passed());
        assert!(r.to_string().starts_with("max_rel_err="));
        assert!(r.to_string().ends_with("worst=q[2] pass=false"));
    }
}
