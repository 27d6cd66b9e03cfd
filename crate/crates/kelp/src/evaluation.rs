//! Error metrics and the masked completion protocol: relative Frobenius error,
//! Procrustes-aligned factor error, rank-based AuROC, and the hold-out AuROC
//! evaluation of a fitted model.

use std::path::Path;

use ndarray::Array2;

use crate::error::{KelpError, Result};
use crate::kernel::{KernelSpec, KpcaBasis};
use crate::matrix::{sample_holdout_mask, BinaryMatrix, EmbeddingTable};
use crate::model::sigmoid;
use crate::optimizer::{pgd_fit, FitConfig};
use crate::textio::{fmt_f64, write_file};

/// Scalar metrics of a fit; absent fields were not applicable to the run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub rel_theta_error: Option<f64>,
    pub rel_u_error: Option<f64>,
    pub rel_v_error: Option<f64>,
    pub auroc: Option<f64>,
    /// Fraction of ones in the observation matrix.
    pub sparsity: Option<f64>,
}

impl MetricsReport {
    /// Flat `key value` lines, one per present metric.
    pub fn to_kv_lines(&self) -> String {
        let mut out = String::new();
        let mut push = |key: &str, v: &Option<f64>| {
            if let Some(x) = v {
                out.push_str(key);
                out.push(' ');
                out.push_str(&fmt_f64(*x));
                out.push('\n');
            }
        };
        push("rel_theta_error", &self.rel_theta_error);
        push("rel_u_error", &self.rel_u_error);
        push("rel_v_error", &self.rel_v_error);
        push("auroc", &self.auroc);
        push("sparsity", &self.sparsity);
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_kv_lines())
    }
}

/// Relative estimation error ||est - truth||_F / ||truth||_F.
pub fn relative_theta_error(est: &Array2<f64>, truth: &Array2<f64>) -> Result<f64> {
    if est.dim() != truth.dim() {
        return Err(KelpError::DimensionMismatch(format!(
            "estimate is {:?}, truth is {:?}",
            est.dim(),
            truth.dim()
        )));
    }
    let denom = truth.iter().map(|x| x * x).sum::<f64>().sqrt();
    if denom == 0.0 {
        return Err(KelpError::InvalidArgument(
            "truth matrix is zero; relative error undefined".into(),
        ));
    }
    let num = est
        .iter()
        .zip(truth.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(num / denom)
}

/// Factor error minimized over the orthogonal group:
/// min_O ||est - truth O||_F / ||truth||_F, with the optimum O = W Z' from the
/// SVD truth' est = W S Z'. Reflections are allowed.
pub fn procrustes_error(est: &Array2<f64>, truth: &Array2<f64>) -> Result<f64> {
    if est.dim() != truth.dim() {
        return Err(KelpError::DimensionMismatch(format!(
            "estimate is {:?}, truth is {:?}",
            est.dim(),
            truth.dim()
        )));
    }
    let denom = truth.iter().map(|x| x * x).sum::<f64>().sqrt();
    if denom == 0.0 {
        return Err(KelpError::InvalidArgument(
            "truth factor is zero; relative error undefined".into(),
        ));
    }
    let cross = truth.t().dot(est);
    let (w, _, zt) = crate::linalg::thin_svd(&cross)?;
    let rotation = w.dot(&zt);
    let aligned = truth.dot(&rotation);
    let num = est
        .iter()
        .zip(aligned.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(num / denom)
}

/// Area under the ROC curve via the rank-sum formulation with midranks, so
/// ties count half. Needs at least one positive and one negative label.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(KelpError::DimensionMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(KelpError::InvalidArgument(
            "AuROC needs both a positive and a negative label".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Midranks over tie groups (1-based ranks).
    let mut rank_sum_pos = 0.0;
    let mut idx = 0;
    while idx < order.len() {
        let mut end = idx + 1;
        while end < order.len() && scores[order[end]] == scores[order[idx]] {
            end += 1;
        }
        let midrank = (idx + 1 + end) as f64 / 2.0;
        for &item in &order[idx..end] {
            if labels[item] {
                rank_sum_pos += midrank;
            }
        }
        idx = end;
    }
    let m = positives as f64;
    let u = rank_sum_pos - m * (m + 1.0) / 2.0;
    Ok(u / (m * negatives as f64))
}

/// Hold out a fraction of the entries, fit on the complement, and score the
/// held-out entries with the fitted probabilities. Resamples the mask (up to
/// 10 attempts) if the held-out labels are single-class.
pub fn completion_eval(
    y: &BinaryMatrix,
    embeddings: Option<&EmbeddingTable>,
    spec: KernelSpec,
    mask_frac: f64,
    config: &FitConfig,
    seed: u64,
) -> Result<MetricsReport> {
    if !(mask_frac > 0.0 && mask_frac < 1.0) {
        return Err(KelpError::InvalidArgument(format!(
            "mask fraction must lie in (0, 1), got {mask_frac}"
        )));
    }
    let mut config = config.clone();
    config.kernel = spec;
    config.validate()?;

    const ATTEMPTS: usize = 10;
    let mut mask = None;
    for attempt in 0..ATTEMPTS as u64 {
        let candidate = sample_holdout_mask(y.n(), y.p(), mask_frac, seed.wrapping_add(attempt))?;
        let mut saw_one = false;
        let mut saw_zero = false;
        for &(i, j) in candidate.held_out() {
            if y.get(i, j) {
                saw_one = true;
            } else {
                saw_zero = true;
            }
            if saw_one && saw_zero {
                break;
            }
        }
        if saw_one && saw_zero {
            mask = Some(candidate);
            break;
        }
    }
    let mask = mask.ok_or(KelpError::SingleClassHoldout { attempts: ATTEMPTS })?;

    let basis = if spec.is_baseline() {
        None
    } else {
        let e = embeddings.ok_or_else(|| {
            KelpError::InvalidArgument("kernel completion needs an embedding table".into())
        })?;
        Some(KpcaBasis::build(spec, e, config.selector)?)
    };
    let fit = pgd_fit(y, basis.as_ref(), &config, Some(&mask))?;

    let mut scores = Vec::with_capacity(mask.len());
    let mut labels = Vec::with_capacity(mask.len());
    for &(i, j) in mask.held_out() {
        scores.push(sigmoid(fit.params.logit_at(i, j)));
        labels.push(y.get(i, j));
    }
    Ok(MetricsReport {
        auroc: Some(auroc(&scores, &labels)?),
        sparsity: Some(y.one_fraction()),
        ..MetricsReport::default()
    })
}
