//! Loss functions and their class/hospital weighting.
//!
//! Probabilities are clamped to `[1e-12, 1 - 1e-12]` before taking logs, so
//! saturated scores yield large finite losses instead of infinities.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{DatasetManifest, InfectionTask};
use crate::error::{Error, Result};

/// Clamp bound for probabilities entering a logarithm.
pub const PROB_EPS: f64 = 1e-12;

/// Default per-infection medicine prices (bacteria, fungi, amoeba).
pub const DEFAULT_PRICES: [f64; 3] = [45.2, 203.0, 95.5];

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Weighting of the combined clinical loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    /// Per-task positive-class weights applied inside the BCE.
    pub class_weights: Vec<f64>,
    /// Per-task simplex weighting each task's plain BCE contribution.
    pub hospital_weights: Vec<f64>,
    /// Mix of (class-weighted term, hospital-weighted term).
    pub mix: (f64, f64),
}

impl LossSpec {
    pub fn new(class_weights: Vec<f64>, hospital_weights: Vec<f64>) -> Result<Self> {
        let spec = LossSpec {
            class_weights,
            hospital_weights,
            mix: (0.8, 0.2),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Uniform weights over `tasks` tasks.
    pub fn uniform(tasks: usize) -> Self {
        LossSpec {
            class_weights: vec![1.0; tasks],
            hospital_weights: vec![1.0 / tasks as f64; tasks],
            mix: (0.8, 0.2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_weights.len() != self.hospital_weights.len() {
            return Err(Error::Argument(
                "class_weights and hospital_weights must cover the same tasks".into(),
            ));
        }
        if self.class_weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::Argument("class weights must be positive".into()));
        }
        let hsum: f64 = self.hospital_weights.iter().sum();
        if (hsum - 1.0).abs() > 1e-9 || self.hospital_weights.iter().any(|&w| w < 0.0) {
            return Err(Error::Argument(format!(
                "hospital weights must form a simplex, sum = {hsum}"
            )));
        }
        Ok(())
    }
}

/// Normalized per-infection treatment costs: price * flasks * months over
/// (bacteria, fungi, amoeba), divided by the total.
pub fn hospital_weights(prices: &[f64; 3], flasks: &[u32; 3], months: &[f64; 3]) -> Result<[f64; 3]> {
    let mut costs = [0.0; 3];
    for i in 0..3 {
        if prices[i] <= 0.0 || flasks[i] == 0 || months[i] <= 0.0 {
            return Err(Error::Argument(format!(
                "hospital cost inputs must be positive ({} price {}, flasks {}, months {})",
                InfectionTask::ALL[i].name(),
                prices[i],
                flasks[i],
                months[i]
            )));
        }
        costs[i] = prices[i] * flasks[i] as f64 * months[i];
    }
    let total: f64 = costs.iter().sum();
    Ok([costs[0] / total, costs[1] / total, costs[2] / total])
}

/// Per-task positive-class weights `N_neg / N_pos` from a manifest.
pub fn class_weights(manifest: &DatasetManifest) -> Result<[f64; 3]> {
    let mut out = [0.0; 3];
    let n = manifest.len();
    for task in InfectionTask::ALL {
        let pos = manifest
            .cases
            .iter()
            .filter(|c| c.labels.get(task))
            .count();
        if pos == 0 {
            return Err(Error::Argument(format!(
                "task {} has zero positive cases; class weight undefined",
                task.name()
            )));
        }
        out[task.index()] = (n - pos) as f64 / pos as f64;
    }
    Ok(out)
}

/// Balanced multiclass weights `N / (4 * N_c)` for the age head.
pub fn age_class_weights(manifest: &DatasetManifest) -> Result<[f64; 4]> {
    let mut counts = [0usize; 4];
    for case in &manifest.cases {
        counts[case.age_bin.as_index()] += 1;
    }
    let n = manifest.len() as f64;
    let mut out = [0.0; 4];
    for (bin, &c) in counts.iter().enumerate() {
        if c == 0 {
            return Err(Error::Argument(format!(
                "age bin {bin} has no cases; class weight undefined"
            )));
        }
        out[bin] = n / (4.0 * c as f64);
    }
    Ok(out)
}

fn check_bce_args(scores: &[f64], labels: &[f64], tasks: usize, weights: &[f64]) -> Result<()> {
    if tasks == 0 || scores.is_empty() {
        return Err(Error::Argument("empty loss input".into()));
    }
    if scores.len() != labels.len() || scores.len() % tasks != 0 {
        return Err(Error::ShapeMismatch(format!(
            "scores {} / labels {} do not form [N, {tasks}]",
            scores.len(),
            labels.len()
        )));
    }
    if weights.len() != tasks {
        return Err(Error::ShapeMismatch(format!(
            "{} weights for {tasks} tasks",
            weights.len()
        )));
    }
    Ok(())
}

/// Class-weighted binary cross-entropy, averaged over samples and tasks.
///
/// The weight multiplies the positive-label term only:
/// `-(w_t * y * ln p + (1 - y) * ln(1 - p))`.
pub fn weighted_bce(scores: &[f64], labels: &[f64], tasks: usize, class_weights: &[f64]) -> Result<f64> {
    check_bce_args(scores, labels, tasks, class_weights)?;
    let mut total = 0.0;
    for (i, (&s, &y)) in scores.iter().zip(labels.iter()).enumerate() {
        let p = clamp_prob(s);
        let w = class_weights[i % tasks];
        total -= w * y * libm::log(p) + (1.0 - y) * libm::log(1.0 - p);
    }
    Ok(total / scores.len() as f64)
}

/// Gradient of [`weighted_bce`] with respect to the logits feeding a sigmoid.
pub(crate) fn weighted_bce_grad_logits(
    probs: &[f64],
    labels: &[f64],
    tasks: usize,
    class_weights: &[f64],
    dlogits: &mut [f64],
) {
    let scale = 1.0 / probs.len() as f64;
    for (i, (&p, &y)) in probs.iter().zip(labels.iter()).enumerate() {
        let w = class_weights[i % tasks];
        dlogits[i] = scale * ((1.0 - y) * p - w * y * (1.0 - p));
    }
}

/// Combined clinical loss:
/// `mix.0 * (class-weighted BCE) + mix.1 * (hospital-weighted BCE)`,
/// where the hospital term weights each task's plain per-sample BCE by the
/// task's share of treatment cost.
pub fn clinical_loss(scores: &[f64], labels: &[f64], tasks: usize, spec: &LossSpec) -> Result<f64> {
    spec.validate()?;
    check_bce_args(scores, labels, tasks, &spec.class_weights)?;
    let n = scores.len() / tasks;
    let cw_term = weighted_bce(scores, labels, tasks, &spec.class_weights)?;
    let mut hw_term = 0.0;
    for t in 0..tasks {
        let mut task_bce = 0.0;
        for i in 0..n {
            let p = clamp_prob(scores[i * tasks + t]);
            let y = labels[i * tasks + t];
            task_bce -= y * libm::log(p) + (1.0 - y) * libm::log(1.0 - p);
        }
        hw_term += spec.hospital_weights[t] * task_bce / n as f64;
    }
    Ok(spec.mix.0 * cw_term + spec.mix.1 * hw_term)
}

/// Gradient of [`clinical_loss`] with respect to sigmoid logits.
pub(crate) fn clinical_grad_logits(
    probs: &[f64],
    labels: &[f64],
    tasks: usize,
    spec: &LossSpec,
    dlogits: &mut [f64],
) {
    let n = probs.len() / tasks;
    let cw_scale = spec.mix.0 / probs.len() as f64;
    for (i, (&p, &y)) in probs.iter().zip(labels.iter()).enumerate() {
        let t = i % tasks;
        let w = spec.class_weights[t];
        let cw = cw_scale * ((1.0 - y) * p - w * y * (1.0 - p));
        let hw = spec.mix.1 * spec.hospital_weights[t] / n as f64 * ((1.0 - y) * p - y * (1.0 - p));
        dlogits[i] = cw + hw;
    }
}

/// Class-weighted multiclass cross-entropy: `-w_y * ln p_y` averaged over
/// the batch.
pub fn cross_entropy(probs: &[f64], labels: &[usize], classes: usize, class_weights: &[f64]) -> Result<f64> {
    if classes == 0 || probs.is_empty() {
        return Err(Error::Argument("empty loss input".into()));
    }
    if probs.len() != labels.len() * classes || class_weights.len() != classes {
        return Err(Error::ShapeMismatch(format!(
            "probs {} labels {} classes {classes}",
            probs.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::Argument(format!("label {label} out of range")));
        }
        let p = clamp_prob(probs[i * classes + label]);
        total -= class_weights[label] * libm::log(p);
    }
    Ok(total / labels.len() as f64)
}

/// Gradient of [`cross_entropy`] with respect to softmax logits.
pub(crate) fn cross_entropy_grad_logits(
    probs: &[f64],
    labels: &[usize],
    classes: usize,
    class_weights: &[f64],
    dlogits: &mut [f64],
) {
    let n = labels.len() as f64;
    for (i, &label) in labels.iter().enumerate() {
        let w = class_weights[label];
        for c in 0..classes {
            let p = probs[i * classes + c];
            let indicator = if c == label { 1.0 } else { 0.0 };
            dlogits[i * classes + c] = w / n * (p - indicator);
        }
    }
}
