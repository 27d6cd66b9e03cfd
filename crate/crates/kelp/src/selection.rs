//! Data-driven kernel selection: hold out entries once, fit every candidate on
//! the rest, and pick the candidate with the lowest held-out negative
//! log-likelihood. The unconstrained baseline competes on equal footing, which
//! guards against fusing misaligned side information.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{KelpError, Result};
use crate::kernel::{kernel_to_token, KernelSpec, KpcaBasis};
use crate::matrix::{sample_holdout_mask, BinaryMatrix, EmbeddingTable, EntryMask};
use crate::model::holdout_nll;
use crate::optimizer::{pgd_fit, FitConfig, FitResult};
use crate::textio::{fmt_f64, write_file};

/// One fitted candidate: its kernel, the selected basis dimension (none for
/// the baseline), the held-out loss, and fit diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateReport {
    pub kernel: KernelSpec,
    pub q: Option<usize>,
    pub holdout_nll: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// The outcome of a selection run. `chosen` indexes the candidate with the
/// minimum held-out loss; ties break toward the earlier list position.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionReport {
    pub candidates: Vec<CandidateReport>,
    pub chosen: usize,
    pub pi: f64,
    pub seed: u64,
}

impl SelectionReport {
    pub fn chosen_kernel(&self) -> KernelSpec {
        self.candidates[self.chosen].kernel
    }

    /// Structured text document: one line per candidate plus the chosen index.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("kelp-selection 1\n");
        let _ = writeln!(out, "pi {}", fmt_f64(self.pi));
        let _ = writeln!(out, "seed {}", self.seed);
        let _ = writeln!(out, "candidates {}", self.candidates.len());
        for (idx, c) in self.candidates.iter().enumerate() {
            let q = c.q.map_or("-".to_string(), |q| q.to_string());
            let _ = writeln!(
                out,
                "candidate {idx} {} q {} holdout_nll {} iterations {} converged {}",
                kernel_to_token(&c.kernel),
                q,
                fmt_f64(c.holdout_nll),
                c.iterations,
                u8::from(c.converged),
            );
        }
        let _ = writeln!(out, "chosen {}", self.chosen);
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_text())
    }
}

/// The candidate grid used by default: the linear kernel, three Gaussian
/// widths, and the unconstrained baseline.
pub fn default_candidate_grid() -> Vec<KernelSpec> {
    vec![
        KernelSpec::Linear,
        KernelSpec::Gaussian { gamma: 0.001 },
        KernelSpec::Gaussian { gamma: 0.01 },
        KernelSpec::Gaussian { gamma: 0.1 },
        KernelSpec::Baseline,
    ]
}

fn sample_nonempty_mask(n: usize, p: usize, pi: f64, seed: u64) -> Result<EntryMask> {
    const ATTEMPTS: usize = 10;
    for attempt in 0..ATTEMPTS as u64 {
        let mask = sample_holdout_mask(n, p, pi, seed.wrapping_add(attempt))?;
        if !mask.is_empty() {
            return Ok(mask);
        }
    }
    Err(KelpError::EmptyHoldout { attempts: ATTEMPTS })
}

fn fit_candidate(
    y: &BinaryMatrix,
    embeddings: &EmbeddingTable,
    candidate: KernelSpec,
    config: &FitConfig,
    mask: &EntryMask,
) -> Result<CandidateReport> {
    let mut config = config.clone();
    config.kernel = candidate;
    let (basis, q) = if candidate.is_baseline() {
        (None, None)
    } else {
        let basis = KpcaBasis::build(candidate, embeddings, config.selector)?;
        let q = basis.q();
        (Some(basis), Some(q))
    };
    let fit = pgd_fit(y, basis.as_ref(), &config, Some(mask))?;
    let loss = holdout_nll(&fit.params, y, mask)?;
    Ok(CandidateReport {
        kernel: candidate,
        q,
        holdout_nll: loss,
        iterations: fit.iterations_run,
        converged: fit.converged,
    })
}

/// Run hold-out selection over the candidate list. All candidates are
/// evaluated on the same mask; candidates may be fitted concurrently and the
/// report order follows the input list.
pub fn select_kernel(
    y: &BinaryMatrix,
    embeddings: &EmbeddingTable,
    candidates: &[KernelSpec],
    pi: f64,
    config: &FitConfig,
    seed: u64,
) -> Result<SelectionReport> {
    if candidates.is_empty() {
        return Err(KelpError::InvalidArgument(
            "candidate list must be nonempty".into(),
        ));
    }
    if embeddings.p() != y.p() {
        return Err(KelpError::DimensionMismatch(format!(
            "embedding table has {} rows, matrix has {} columns",
            embeddings.p(),
            y.p()
        )));
    }
    let mask = sample_nonempty_mask(y.n(), y.p(), pi, seed)?;

    let reports: Vec<CandidateReport> = candidates
        .par_iter()
        .map(|&candidate| fit_candidate(y, embeddings, candidate, config, &mask))
        .collect::<Result<_>>()?;

    let mut chosen = 0;
    for (idx, report) in reports.iter().enumerate() {
        if report.holdout_nll < reports[chosen].holdout_nll {
            chosen = idx;
        }
    }
    Ok(SelectionReport {
        candidates: reports,
        chosen,
        pi,
        seed,
    })
}

/// Selection followed by a fit of the chosen candidate on all entries; the
/// convenience path for production use.
pub fn select_kernel_and_refit(
    y: &BinaryMatrix,
    embeddings: &EmbeddingTable,
    candidates: &[KernelSpec],
    pi: f64,
    config: &FitConfig,
    seed: u64,
) -> Result<(SelectionReport, FitResult, Option<KpcaBasis>)> {
    let report = select_kernel(y, embeddings, candidates, pi, config, seed)?;
    let chosen = report.chosen_kernel();
    let mut config = config.clone();
    config.kernel = chosen;
    let basis = if chosen.is_baseline() {
        None
    } else {
        Some(KpcaBasis::build(chosen, embeddings, config.selector)?)
    };
    let fit = pgd_fit(y, basis.as_ref(), &config, None)?;
    Ok((report, fit, basis))
}
