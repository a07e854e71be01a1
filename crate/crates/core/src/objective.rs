//! Class-weighted focal loss over softmax probabilities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassWeightPolicy {
    pub min: f64,
    pub max: f64,
}

impl Default for ClassWeightPolicy {
    fn default() -> Self {
        ClassWeightPolicy { min: 0.2, max: 20.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub gamma: f64,
    pub weights: Vec<f64>,
}

impl FocalParams {
    pub fn new(gamma: f64, weights: Vec<f64>) -> Result<Self> {
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::Config(format!("focal gamma must be a finite value >= 0, got {gamma}")));
        }
        if weights.is_empty() || weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::Config("class weights must be positive".into()));
        }
        Ok(FocalParams { gamma, weights })
    }

    pub fn unweighted(gamma: f64, classes: usize) -> Self {
        FocalParams {
            gamma,
            weights: vec![1.0; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.weights.len()
    }
}

/// Inverse-frequency weights `N / (C·N_y)`, clipped.
pub fn class_weights_from_counts(counts: &[usize], policy: &ClassWeightPolicy) -> Result<Vec<f64>> {
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::MissingClass(format!("class index {i}")));
    }
    let total: usize = counts.iter().sum();
    let c = counts.len() as f64;
    Ok(counts
        .iter()
        .map(|&n| (total as f64 / (c * n as f64)).clamp(policy.min, policy.max))
        .collect())
}

/// Weights for a list of class indices in `[0, classes)`.
pub fn compute_class_weights(labels: &[usize], classes: usize, policy: &ClassWeightPolicy) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; classes];
    for &l in labels {
        if l >= classes {
            return Err(Error::LabelOutOfRange { label: l, classes });
        }
        counts[l] += 1;
    }
    class_weights_from_counts(&counts, policy)
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= classes) {
        Some(&l) => Err(Error::LabelOutOfRange { label: l, classes }),
        None => Ok(()),
    }
}

/// Per-sample focal loss for one probability.
pub fn focal_term(p: f64, gamma: f64, weight: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -weight * (1.0 - p).powf(gamma) * p.ln()
}

/// Mean and per-sample losses for row-major `batch × C` probabilities.
pub fn focal_loss(probs: &[f64], labels: &[usize], params: &FocalParams) -> Result<(f64, Vec<f64>)> {
    let c = params.classes();
    if probs.len() != labels.len() * c {
        return Err(Error::ShapeMismatch(format!(
            "{} probabilities for {} labels x {c} classes",
            probs.len(),
            labels.len()
        )));
    }
    check_labels(labels, c)?;
    let per: Vec<f64> = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| focal_term(probs[i * c + y], params.gamma, params.weights[y]))
        .collect();
    let mean = if per.is_empty() { 0.0 } else { per.iter().sum::<f64>() / per.len() as f64 };
    Ok((mean, per))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(classes) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|z| (z - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / s));
    }
    out
}

/// Gradient of the mean focal loss with respect to the logits, through the softmax.
pub fn focal_loss_grad(logits: &[f64], labels: &[usize], params: &FocalParams) -> Result<Vec<f64>> {
    let c = params.classes();
    if logits.len() != labels.len() * c {
        return Err(Error::ShapeMismatch(format!("{} logits for {} labels x {c} classes", logits.len(), labels.len())));
    }
    check_labels(labels, c)?;
    let probs = softmax_rows(logits, c);
    Ok(focal_grad_from_probs(&probs, labels, params))
}

pub(crate) fn focal_grad_from_probs(probs: &[f64], labels: &[usize], params: &FocalParams) -> Vec<f64> {
    let c = params.classes();
    let b = labels.len() as f64;
    let g = params.gamma;
    let mut grad = vec![0.0; probs.len()];
    for (i, &y) in labels.iter().enumerate() {
        let row = &probs[i * c..(i + 1) * c];
        let p = row[y].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let q = 1.0 - p;
        let mut coef = -q.powf(g);
        if g != 0.0 {
            coef += g * q.powf(g - 1.0) * p * p.ln();
        }
        coef *= params.weights[y] / b;
        for (j, (out, &pj)) in grad[i * c..(i + 1) * c].iter_mut().zip(row).enumerate() {
            let delta = if j == y { 1.0 } else { 0.0 };
            *out = coef * (delta - pj);
        }
    }
    grad
}

/// Default focusing parameter per task family.
pub fn default_gamma(task: crate::eval::TaskId) -> f64 {
    use crate::eval::TaskId;
    match task {
        TaskId::Task1_1 | TaskId::Task1_2 => 4.0,
        TaskId::Task2_1 => 5.0,
        TaskId::Task2_2 => 3.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_and_imbalanced_weights() {
        let p = ClassWeightPolicy::default();
        assert_eq!(class_weights_from_counts(&[5, 5, 5], &p).unwrap(), vec![1.0; 3]);
        let w = class_weights_from_counts(&[9000, 1000], &ClassWeightPolicy { min: 0.0, max: f64::MAX }).unwrap();
        assert!((w[0] - 10000.0 / 18000.0).abs() < 1e-12 && (w[1] - 5.0).abs() < 1e-12);
        assert!(matches!(class_weights_from_counts(&[3, 0], &p), Err(Error::MissingClass(_))));
    }

    #[test]
    fn event_training_counts_clip_stridor() {
        // Event-level training counts: Normal, Rhonchi, Wheeze, Stridor, CC, FC, W&C.
        let counts = [5159usize, 39, 452, 15, 49, 912, 30];
        assert_eq!(counts.iter().sum::<usize>(), 6656);
        let raw: f64 = 6656.0 / (7.0 * 15.0);
        assert!((raw - 63.39).abs() < 0.01);
        let w = class_weights_from_counts(&counts, &ClassWeightPolicy::default()).unwrap();
        assert_eq!(w[3], 20.0);
    }

    #[test]
    fn reductions() {
        let ce = FocalParams::unweighted(0.0, 3);
        let probs = [0.2, 0.5, 0.3, 0.6, 0.3, 0.1];
        let (mean, per) = focal_loss(&probs, &[1, 0], &ce).unwrap();
        assert!((per[0] + 0.5f64.ln()).abs() < 1e-12);
        assert!((mean - (-(0.5f64.ln()) - 0.6f64.ln()) / 2.0).abs() < 1e-12);
        assert!((focal_term(0.5, 2.0, 1.0) - 0.25 * 2f64.ln()).abs() < 1e-7);
        assert!(focal_term(1.0, 2.0, 1.0) < 1e-6);
        assert!(focal_term(0.0, 2.0, 1.0).is_finite());
        assert!(matches!(focal_loss(&probs, &[3, 0], &ce), Err(Error::LabelOutOfRange { .. })));
    }

    #[test]
    fn ce_gradient_closed_form() {
        let z = [0.3, -1.2, 2.0, 0.1, 0.0, 0.5];
        let p = FocalParams::unweighted(0.0, 3);
        let g = focal_loss_grad(&z, &[2, 0], &p).unwrap();
        let sm = softmax_rows(&z, 3);
        for i in 0..2 {
            let y = [2, 0][i];
            for j in 0..3 {
                let expect = (sm[i * 3 + j] - if j == y { 1.0 } else { 0.0 }) / 2.0;
                assert!((g[i * 3 + j] - expect).abs() < 1e-15);
            }
            assert!(g[i * 3..i * 3 + 3].iter().sum::<f64>().abs() < 1e-12);
        }
    }

    fn mean_loss(z: &[f64], labels: &[usize], p: &FocalParams) -> f64 {
        focal_loss(&softmax_rows(z, p.classes()), labels, p).unwrap().0
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut r = crate::autodiff::Rng::new(11);
        for gamma in [0.0, 0.5, 1.0, 2.0, 4.0, 5.0] {
            let weights: Vec<f64> = (0..7).map(|_| r.range(0.2, 3.0)).collect();
            let p = FocalParams::new(gamma, weights).unwrap();
            let z: Vec<f64> = (0..28).map(|_| r.range(-2.0, 2.0)).collect();
            let labels: Vec<usize> = (0..4).map(|_| r.below(7)).collect();
            let g = focal_loss_grad(&z, &labels, &p).unwrap();
            let eps = 1e-5;
            for i in 0..z.len() {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[i] += eps;
                zm[i] -= eps;
                let fd = (mean_loss(&zp, &labels, &p) - mean_loss(&zm, &labels, &p)) / (2.0 * eps);
                let rel = (fd - g[i]).abs() / (fd.abs() + g[i].abs()).max(1e-8);
                assert!(rel < 1e-4, "gamma {gamma} index {i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn focusing_is_monotone_and_emphasises_hard_examples() {
        for pi in 1..=9 {
            let p = pi as f64 / 10.0;
            for g in 0..5 {
                assert!(focal_term(p, g as f64 + 1.0, 1.0) <= focal_term(p, g as f64, 1.0));
            }
        }
        let ratio = |g: f64| focal_term(0.1, g, 1.0) / focal_term(0.9, g, 1.0);
        for g in [0.5, 1.0, 2.0, 5.0] {
            assert!(ratio(g) > ratio(0.0));
        }
    }

    #[test]
    fn weight_linearity() {
        let z = [0.3, -0.2, 0.9];
        let a = FocalParams::new(2.0, vec![1.0, 1.5, 0.7]).unwrap();
        let b = FocalParams::new(2.0, vec![1.0, 3.0, 0.7]).unwrap();
        assert_eq!(2.0 * mean_loss(&z, &[1], &a), mean_loss(&z, &[1], &b));
        let ga = focal_loss_grad(&z, &[1], &a).unwrap();
        let gb = focal_loss_grad(&z, &[1], &b).unwrap();
        for (x, y) in ga.iter().zip(&gb) {
            assert_eq!(2.0 * x, *y);
        }
    }
}
