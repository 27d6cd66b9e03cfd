//! Model parameters and the regularized Bernoulli likelihood: logits, masked
//! negative log-likelihood, balance penalty, gradients, and the latent-space
//! extension of unseen columns.

use std::path::Path;

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::error::{KelpError, Result};
use crate::kernel::{KernelSpec, KpcaBasis};
use crate::matrix::{BinaryMatrix, EntryMask};
use crate::textio::{push_matrix, push_scalar, push_vector, read_file, write_file, DocReader};

/// Logistic function, stable on both tails.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(x)) with the standard large-|x| branches at 30.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Both link quantities from a single exponential; agrees with [`softplus`]
/// branch for branch.
#[inline]
fn sigmoid_softplus(t: f64) -> (f64, f64) {
    if t > 30.0 {
        (1.0, t)
    } else if t < -30.0 {
        let e = t.exp();
        (e, e)
    } else if t >= 0.0 {
        let e = (-t).exp();
        (1.0 / (1.0 + e), t + e.ln_1p())
    } else {
        let e = t.exp();
        (e / (1.0 + e), e.ln_1p())
    }
}

/// Parameters of the latent projection model. The logit matrix is
/// `rho + alpha_i + <u_i, v_j>`; `gamma` carries the basis coefficients of `v`
/// when the model was fitted with a kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub rho: f64,
    /// Row effects, centered: 1'alpha = 0.
    pub alpha: Array1<f64>,
    /// n x r row embeddings.
    pub u: Array2<f64>,
    /// p x r column embeddings; lies in the kernel-PCA column space (and sums
    /// to zero columnwise) when fitted with a kernel.
    pub v: Array2<f64>,
    /// q x r basis coefficients, present iff fitted with a kernel.
    pub gamma: Option<Array2<f64>>,
    /// The kernel the model was fitted with, if any.
    pub kernel: Option<KernelSpec>,
}

impl ModelParams {
    pub fn new(
        rho: f64,
        alpha: Array1<f64>,
        u: Array2<f64>,
        v: Array2<f64>,
        gamma: Option<Array2<f64>>,
        kernel: Option<KernelSpec>,
    ) -> Result<Self> {
        if alpha.len() != u.nrows() {
            return Err(KelpError::DimensionMismatch(format!(
                "alpha has length {}, u has {} rows",
                alpha.len(),
                u.nrows()
            )));
        }
        if u.ncols() != v.ncols() {
            return Err(KelpError::DimensionMismatch(format!(
                "u has rank {}, v has rank {}",
                u.ncols(),
                v.ncols()
            )));
        }
        if let Some(g) = &gamma {
            if g.ncols() != u.ncols() {
                return Err(KelpError::DimensionMismatch(format!(
                    "gamma has rank {}, u has rank {}",
                    g.ncols(),
                    u.ncols()
                )));
            }
        }
        Ok(ModelParams {
            rho,
            alpha,
            u,
            v,
            gamma,
            kernel,
        })
    }

    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    pub fn p(&self) -> usize {
        self.v.nrows()
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    /// The full n x p logit matrix `rho + alpha_i + <u_i, v_j>`.
    pub fn logits(&self) -> Array2<f64> {
        // Accumulate into a C-order target; the BLAS-backed `dot` may hand
        // back a column-major result for rank-1 factors.
        let mut theta = Array2::zeros((self.n(), self.p()));
        ndarray::linalg::general_mat_mul(1.0, &self.u, &self.v.t(), 0.0, &mut theta);
        for (i, mut row) in theta.rows_mut().into_iter().enumerate() {
            let shift = self.rho + self.alpha[i];
            row.mapv_inplace(|x| x + shift);
        }
        theta
    }

    /// One logit entry without materializing the full matrix.
    pub fn logit_at(&self, i: usize, j: usize) -> f64 {
        self.rho + self.alpha[i] + self.u.row(i).dot(&self.v.row(j))
    }

    fn check_against(&self, y: &BinaryMatrix) -> Result<()> {
        if self.n() != y.n() || self.p() != y.p() {
            return Err(KelpError::DimensionMismatch(format!(
                "model is {}x{}, matrix is {}x{}",
                self.n(),
                self.p(),
                y.n(),
                y.p()
            )));
        }
        Ok(())
    }

    /// Persist to the structured decimal-text document.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        out.push_str("kelp-model 1\n");
        out.push_str(&format!("r {}\n", self.rank()));
        push_scalar(&mut out, "rho", self.rho);
        push_vector(&mut out, "alpha", &self.alpha);
        push_matrix(&mut out, "u", &self.u);
        push_matrix(&mut out, "v", &self.v);
        if let Some(g) = &self.gamma {
            push_matrix(&mut out, "gamma", g);
        }
        if let Some(k) = &self.kernel {
            out.push_str(&format!("kernel {k}\n"));
        }
        write_file(path.as_ref(), &out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let content = read_file(path)?;
        let mut doc = DocReader::new(path, &content);
        doc.header("kelp-model")?;
        let r = doc.scalar_usize("r")?;
        let rho = doc.scalar_f64("rho")?;
        let alpha = doc.vector("alpha")?;
        let u = doc.matrix("u")?;
        let v = doc.matrix("v")?;
        let gamma = if doc.peek_key() == Some("gamma") {
            Some(doc.matrix("gamma")?)
        } else {
            None
        };
        let kernel = if doc.peek_key() == Some("kernel") {
            let toks = doc.header("kernel")?;
            if toks.len() != 1 {
                return Err(KelpError::parse(path, 1, "kernel line expects one token"));
            }
            Some(toks[0].parse::<KernelSpec>()?)
        } else {
            None
        };
        if u.ncols() != r || v.ncols() != r {
            return Err(KelpError::parse(path, 1, "factor rank does not match r"));
        }
        let params = ModelParams::new(rho, alpha, u, v, gamma, kernel)
            .map_err(|e| KelpError::parse(path, 1, e.to_string()))?;
        if !params.rho.is_finite()
            || params.alpha.iter().any(|x| !x.is_finite())
            || params.u.iter().any(|x| !x.is_finite())
            || params.v.iter().any(|x| !x.is_finite())
        {
            return Err(KelpError::parse(path, 1, "non-finite parameter value"));
        }
        Ok(params)
    }
}

/// Residual and loss terms shared by the likelihood and its gradients, fused
/// into a single pass over the entries. Rows are processed in parallel with a
/// fixed per-row summation order and combined sequentially, so the result is
/// bitwise reproducible.
pub(crate) struct ResidualPass {
    /// sigma(theta) - y, with entries under the mask zeroed.
    pub residual: Array2<f64>,
    /// Negative log-likelihood over entries not in the mask.
    pub nll: f64,
    /// Sum of the residual (gradient of rho).
    pub grad_rho: f64,
    /// Row sums of the residual (gradient of alpha).
    pub grad_alpha: Array1<f64>,
}

pub(crate) fn residual_pass(
    theta: &Array2<f64>,
    y: &BinaryMatrix,
    mask: Option<&EntryMask>,
) -> ResidualPass {
    let (n, p) = theta.dim();
    debug_assert_eq!((n, p), (y.n(), y.p()));
    let theta_slice = theta.as_slice().expect("standard layout");
    let mut residual = Array2::zeros((n, p));
    let residual_slice = residual.as_slice_mut().expect("standard layout");
    let partials: Vec<(f64, f64)> = residual_slice
        .par_chunks_mut(p)
        .enumerate()
        .map(|(i, r_row)| {
            let t_row = &theta_slice[i * p..(i + 1) * p];
            let y_words = y.row_words(i);
            let mask_words = mask.map(|m| m.row_words(i));
            let mut nll_i = 0.0;
            let mut rsum_i = 0.0;
            for (j, slot) in r_row.iter_mut().enumerate() {
                if let Some(words) = mask_words {
                    if (words[j / 64] >> (j % 64)) & 1 == 1 {
                        *slot = 0.0;
                        continue;
                    }
                }
                let t = t_row[j];
                let one = (y_words[j / 64] >> (j % 64)) & 1 == 1;
                let (sig, sp) = sigmoid_softplus(t);
                let resid = sig - if one { 1.0 } else { 0.0 };
                *slot = resid;
                rsum_i += resid;
                nll_i += sp - if one { t } else { 0.0 };
            }
            (nll_i, rsum_i)
        })
        .collect();
    let mut grad_alpha = Array1::zeros(n);
    let mut nll = 0.0;
    let mut grad_rho = 0.0;
    for (i, (nll_i, rsum_i)) in partials.into_iter().enumerate() {
        nll += nll_i;
        grad_rho += rsum_i;
        grad_alpha[i] = rsum_i;
    }
    ResidualPass {
        residual,
        nll,
        grad_rho,
        grad_alpha,
    }
}

/// Negative Bernoulli log-likelihood over all entries not held out by `mask`.
pub fn nll(params: &ModelParams, y: &BinaryMatrix, mask: Option<&EntryMask>) -> Result<f64> {
    params.check_against(y)?;
    check_mask(y, mask)?;
    Ok(residual_pass(&params.logits(), y, mask).nll)
}

/// Negative log-likelihood restricted to the held-out entries of `mask`.
pub fn holdout_nll(params: &ModelParams, y: &BinaryMatrix, mask: &EntryMask) -> Result<f64> {
    params.check_against(y)?;
    check_mask(y, Some(mask))?;
    let mut total = 0.0;
    for &(i, j) in mask.held_out() {
        let t = params.logit_at(i, j);
        total += softplus(t) - if y.get(i, j) { t } else { 0.0 };
    }
    Ok(total)
}

fn check_mask(y: &BinaryMatrix, mask: Option<&EntryMask>) -> Result<()> {
    if let Some(m) = mask {
        if m.dims() != (y.n(), y.p()) {
            return Err(KelpError::DimensionMismatch(format!(
                "mask dims {:?} do not match matrix {}x{}",
                m.dims(),
                y.n(),
                y.p()
            )));
        }
    }
    Ok(())
}

/// Squared Frobenius norm of u'u - v'v, the scale-imbalance penalty.
pub fn balance_penalty(u: &Array2<f64>, v: &Array2<f64>) -> Result<f64> {
    let gap = balance_gap(u, v)?;
    Ok(gap.iter().map(|x| x * x).sum())
}

/// u'u - v'v (r x r, symmetric).
pub(crate) fn balance_gap(u: &Array2<f64>, v: &Array2<f64>) -> Result<Array2<f64>> {
    if u.ncols() != v.ncols() {
        return Err(KelpError::DimensionMismatch(format!(
            "balance penalty needs matching ranks, got {} and {}",
            u.ncols(),
            v.ncols()
        )));
    }
    Ok(u.t().dot(u) - v.t().dot(v))
}

/// The fitted objective: masked negative log-likelihood plus a quarter of the
/// balance penalty. The penalty is a parameter regularizer and is never
/// masked.
pub fn regularized_objective(
    params: &ModelParams,
    y: &BinaryMatrix,
    mask: Option<&EntryMask>,
) -> Result<f64> {
    Ok(nll(params, y, mask)? + balance_penalty(&params.u, &params.v)? / 4.0)
}

/// Gradient blocks of the regularized objective.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub rho: f64,
    pub alpha: Array1<f64>,
    pub u: Array2<f64>,
    pub v: Array2<f64>,
}

/// Analytic gradients: with residual R = sigma(theta) - y (masked entries
/// zeroed) and G = u'u - v'v,
/// d/drho = sum R, d/dalpha = R 1, d/du = R v + u G, d/dv = R' u - v G.
pub fn gradients(
    params: &ModelParams,
    y: &BinaryMatrix,
    mask: Option<&EntryMask>,
) -> Result<Gradients> {
    params.check_against(y)?;
    check_mask(y, mask)?;
    let pass = residual_pass(&params.logits(), y, mask);
    let gap = balance_gap(&params.u, &params.v)?;
    Ok(Gradients {
        rho: pass.grad_rho,
        alpha: pass.grad_alpha,
        u: pass.residual.dot(&params.v) + params.u.dot(&gap),
        v: pass.residual.t().dot(&params.u) - params.v.dot(&gap),
    })
}

/// Latent embedding of an unseen column from its kernel-PCA features:
/// gamma' psi_new with gamma the closed-form least-squares coefficients of the
/// fitted column embeddings on the basis.
pub fn extend_embedding(
    params: &ModelParams,
    basis: &KpcaBasis,
    psi_new: &Array1<f64>,
) -> Result<Array1<f64>> {
    let kernel = params.kernel.ok_or_else(|| {
        KelpError::InvalidArgument("model was fitted without a kernel; nothing to extend".into())
    })?;
    if kernel != basis.kernel() {
        return Err(KelpError::InvalidArgument(format!(
            "model was fitted with kernel {kernel}, basis holds {}",
            basis.kernel()
        )));
    }
    if psi_new.len() != basis.q() {
        return Err(KelpError::DimensionMismatch(format!(
            "feature vector has length {}, basis has q = {}",
            psi_new.len(),
            basis.q()
        )));
    }
    if params.p() != basis.p() {
        return Err(KelpError::DimensionMismatch(format!(
            "model has p = {}, basis has p = {}",
            params.p(),
            basis.p()
        )));
    }
    let gamma = basis.coefficients(&params.v);
    Ok(gamma.t().dot(psi_new))
}
