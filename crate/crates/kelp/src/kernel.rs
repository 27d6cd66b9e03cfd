//! Kernels over semantic embeddings, Gram matrix construction, the kernel-PCA
//! basis, and the Nystrom extension to unseen embeddings.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;

use crate::error::{KelpError, Result};
use crate::linalg::sym_eigen_desc;
use crate::matrix::EmbeddingTable;
use crate::textio::{fmt_f64, push_matrix, push_scalar, push_vector, read_file, write_file, DocReader};

/// Relative floor below which eigenvalues of the centered Gram matrix are
/// treated as zero. Doubly centered Gram matrices always carry an exact zero
/// eigenvalue along the all-ones direction, plus numerical negatives near it.
const EIGENVALUE_CLAMP: f64 = 1e-10;

/// A candidate kernel over semantic embeddings. `Baseline` means no kernel at
/// all: column embeddings are left unconstrained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    Linear,
    /// Gaussian kernel exp(-gamma ||a - b||^2); gamma is the inverse squared
    /// radius 1/(2 r^2).
    Gaussian { gamma: f64 },
    /// Polynomial kernel (a.b + offset)^degree.
    Polynomial { degree: u32, offset: f64 },
    Baseline,
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Gaussian { gamma } if !(gamma > 0.0) => Err(KelpError::InvalidArgument(
                format!("gaussian gamma must be positive, got {gamma}"),
            )),
            KernelSpec::Polynomial { degree, offset } if degree < 1 || !(offset >= 0.0) => {
                Err(KelpError::InvalidArgument(format!(
                    "polynomial kernel needs degree >= 1 and offset >= 0, got degree {degree}, offset {offset}"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn is_baseline(&self) -> bool {
        matches!(self, KernelSpec::Baseline)
    }

    /// Kernel value for one pair of embeddings. Not defined for `Baseline`.
    pub(crate) fn eval(&self, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
        match *self {
            KernelSpec::Linear => a.dot(&b),
            KernelSpec::Gaussian { gamma } => {
                let mut d2 = 0.0;
                for (x, y) in a.iter().zip(b.iter()) {
                    let diff = x - y;
                    d2 += diff * diff;
                }
                (-gamma * d2).exp()
            }
            KernelSpec::Polynomial { degree, offset } => (a.dot(&b) + offset).powi(degree as i32),
            KernelSpec::Baseline => unreachable!("baseline has no kernel function"),
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            KernelSpec::Linear => write!(f, "linear"),
            KernelSpec::Gaussian { gamma } => write!(f, "gaussian:{gamma}"),
            KernelSpec::Polynomial { degree, offset } => write!(f, "poly:{degree}:{offset}"),
            KernelSpec::Baseline => write!(f, "baseline"),
        }
    }
}

impl FromStr for KernelSpec {
    type Err = KelpError;

    /// Grammar: `linear | gaussian:<gamma> | poly:<degree>:<offset> | baseline`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: String| KelpError::InvalidArgument(msg);
        let spec = match s.trim() {
            "linear" => KernelSpec::Linear,
            "baseline" => KernelSpec::Baseline,
            other => {
                let parts: Vec<&str> = other.split(':').collect();
                match parts.as_slice() {
                    ["gaussian", g] => KernelSpec::Gaussian {
                        gamma: g
                            .parse()
                            .map_err(|_| bad(format!("bad gaussian gamma `{g}`")))?,
                    },
                    ["poly", d, o] => KernelSpec::Polynomial {
                        degree: d
                            .parse()
                            .map_err(|_| bad(format!("bad polynomial degree `{d}`")))?,
                        offset: o
                            .parse()
                            .map_err(|_| bad(format!("bad polynomial offset `{o}`")))?,
                    },
                    _ => {
                        return Err(bad(format!(
                            "unknown kernel `{other}`; expected linear | gaussian:<gamma> | poly:<degree>:<offset> | baseline"
                        )))
                    }
                }
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// How to pick the retained dimension of the kernel-PCA basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BasisSelector {
    /// Keep exactly `q` components (capped at the positive-eigenvalue count).
    FixedQ(usize),
    /// Keep the smallest q whose cumulative spectral fraction reaches
    /// `1 - delta`.
    EnergyThreshold(f64),
}

impl BasisSelector {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BasisSelector::FixedQ(q) if q == 0 => Err(KelpError::InvalidArgument(
                "fixed q must be at least 1".into(),
            )),
            BasisSelector::EnergyThreshold(delta) if !(delta > 0.0 && delta < 1.0) => Err(
                KelpError::InvalidArgument(format!("energy delta must lie in (0, 1), got {delta}")),
            ),
            _ => Ok(()),
        }
    }
}

/// Gram matrix of a kernel over the embedding rows: entry (j, j') is the
/// kernel value of (e_j, e_j'). Each unordered pair is computed once, so the
/// output is exactly symmetric.
pub fn gram(spec: &KernelSpec, embeddings: &EmbeddingTable) -> Result<Array2<f64>> {
    if spec.is_baseline() {
        return Err(KelpError::InvalidArgument(
            "baseline has no Gram matrix".into(),
        ));
    }
    spec.validate()?;
    let p = embeddings.p();
    // Upper triangle rows in parallel, then mirror.
    let rows: Vec<Vec<f64>> = (0..p)
        .into_par_iter()
        .map(|j| {
            let ej = embeddings.row(j);
            (j..p).map(|j2| spec.eval(ej, embeddings.row(j2))).collect()
        })
        .collect();
    let mut k = Array2::zeros((p, p));
    for (j, row) in rows.into_iter().enumerate() {
        for (off, value) in row.into_iter().enumerate() {
            let j2 = j + off;
            k[[j, j2]] = value;
            k[[j2, j]] = value;
        }
    }
    Ok(k)
}

/// Doubly centered matrix J K J with J = I - (1/p) 11'. Every row and column
/// of the result sums to zero; the operation is idempotent.
pub fn double_center(k: &Array2<f64>) -> Result<Array2<f64>> {
    let p = k.nrows();
    if k.ncols() != p {
        return Err(KelpError::DimensionMismatch(format!(
            "double centering needs a square matrix, got {}x{}",
            p,
            k.ncols()
        )));
    }
    let row_means: Vec<f64> = k.rows().into_iter().map(|r| r.sum() / p as f64).collect();
    let col_means: Vec<f64> = k
        .columns()
        .into_iter()
        .map(|c| c.sum() / p as f64)
        .collect();
    let grand = row_means.iter().sum::<f64>() / p as f64;
    let mut out = Array2::zeros((p, p));
    for i in 0..p {
        for j in 0..p {
            out[[i, j]] = k[[i, j]] - row_means[i] - col_means[j] + grand;
        }
    }
    Ok(out)
}

/// The kernel-PCA basis: eigenpairs of the doubly centered Gram matrix and the
/// derived feature basis, plus the raw column means needed by the Nystrom
/// extension.
#[derive(Debug, Clone, PartialEq)]
pub struct KpcaBasis {
    spec: KernelSpec,
    q: usize,
    /// Top-q eigenvalues of K_c, strictly positive, nonincreasing.
    mu: Array1<f64>,
    /// p x q orthonormal eigenvectors of K_c.
    phi: Array2<f64>,
    /// p x q basis phi * diag(sqrt(mu)).
    psi: Array2<f64>,
    /// Column means of the raw Gram matrix K_p.
    kbar: Array1<f64>,
    /// Retained fraction of the positive spectrum.
    energy: f64,
}

impl KpcaBasis {
    /// Build the basis from embeddings: Gram matrix, double centering,
    /// eigendecomposition, truncation.
    pub fn build(
        spec: KernelSpec,
        embeddings: &EmbeddingTable,
        selector: BasisSelector,
    ) -> Result<Self> {
        let k = gram(&spec, embeddings)?;
        KpcaBasis::from_gram(spec, &k, selector)
    }

    /// Kernel-PCA of a Gram matrix. The matrix is double-centered internally
    /// (a no-op when it is already centered) and the full spectrum is computed
    /// with a dense symmetric solver. Eigenvalues below
    /// `1e-10 * max(mu_1, 1)` are treated as zero and excluded; a fixed q
    /// larger than the positive-eigenvalue count is capped, which the caller
    /// can observe by comparing `q()` with the request.
    pub fn from_gram(spec: KernelSpec, k: &Array2<f64>, selector: BasisSelector) -> Result<Self> {
        selector.validate()?;
        let p = k.nrows();
        let kbar = Array1::from_iter(k.columns().into_iter().map(|c| c.sum() / p as f64));
        let kc = double_center(k)?;
        let (vals, vecs) = sym_eigen_desc(&kc)?;

        let clamp = EIGENVALUE_CLAMP * vals[0].max(1.0);
        let positive: Vec<f64> = vals.iter().copied().take_while(|&v| v > clamp).collect();
        if positive.is_empty() {
            return Err(KelpError::DegenerateKernel);
        }
        let total: f64 = positive.iter().sum();
        let q = match selector {
            BasisSelector::FixedQ(q) => q.min(positive.len()),
            BasisSelector::EnergyThreshold(delta) => {
                let target = 1.0 - delta;
                let mut cum = 0.0;
                let mut q = positive.len();
                for (idx, v) in positive.iter().enumerate() {
                    cum += v;
                    if cum / total >= target {
                        q = idx + 1;
                        break;
                    }
                }
                q
            }
        };

        let mu = Array1::from_iter(positive[..q].iter().copied());
        let phi = crate::linalg::take_columns(&vecs, q);
        let energy = mu.sum() / total;
        let psi = scale_columns(&phi, &mu.mapv(f64::sqrt));
        Ok(KpcaBasis {
            spec,
            q,
            mu,
            phi,
            psi,
            kbar,
            energy,
        })
    }

    pub fn kernel(&self) -> KernelSpec {
        self.spec
    }

    pub fn p(&self) -> usize {
        self.phi.nrows()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn mu(&self) -> &Array1<f64> {
        &self.mu
    }

    pub fn phi(&self) -> &Array2<f64> {
        &self.phi
    }

    pub fn psi(&self) -> &Array2<f64> {
        &self.psi
    }

    pub fn kbar(&self) -> &Array1<f64> {
        &self.kbar
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    /// Orthogonal projection onto the basis column space: phi phi' v.
    pub fn project(&self, v: &Array2<f64>) -> Array2<f64> {
        self.phi.dot(&self.phi.t().dot(v))
    }

    /// Least-squares coefficients of `v` on the basis:
    /// gamma = diag(mu)^{-1/2} phi' v, the closed form of regressing `v`
    /// on psi (since psi'psi = diag(mu)).
    pub fn coefficients(&self, v: &Array2<f64>) -> Array2<f64> {
        let proj = self.phi.t().dot(v);
        scale_rows(&proj, &self.mu.mapv(|m| 1.0 / m.sqrt()))
    }

    /// Kernel-PCA features of an unseen embedding: with k_new the vector of
    /// kernel values against the training embeddings,
    /// psi_new = diag(mu)^{-1/2} phi' (k_new - kbar). Extending a training
    /// embedding reproduces the corresponding row of psi.
    pub fn nystrom_features(
        &self,
        train: &EmbeddingTable,
        e_new: ArrayView1<'_, f64>,
    ) -> Result<Array1<f64>> {
        if train.p() != self.p() {
            return Err(KelpError::DimensionMismatch(format!(
                "basis was built over {} embeddings, table has {}",
                self.p(),
                train.p()
            )));
        }
        if e_new.len() != train.d() {
            return Err(KelpError::DimensionMismatch(format!(
                "new embedding has dimension {}, expected {}",
                e_new.len(),
                train.d()
            )));
        }
        let k_new = Array1::from_iter((0..train.p()).map(|j| self.spec.eval(e_new, train.row(j))));
        let centered = &k_new - &self.kbar;
        let proj = self.phi.t().dot(&centered);
        Ok(&proj * &self.mu.mapv(|m| 1.0 / m.sqrt()))
    }

    /// Persist q, mu, phi (row-major), kbar, the kernel spec, and the retained
    /// energy in the decimal-text convention.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        out.push_str("kelp-basis 1\n");
        out.push_str(&format!("kernel {}\n", self.spec));
        out.push_str(&format!("q {}\n", self.q));
        push_scalar(&mut out, "energy", self.energy);
        push_vector(&mut out, "mu", &self.mu);
        push_matrix(&mut out, "phi", &self.phi);
        push_vector(&mut out, "kbar", &self.kbar);
        write_file(path.as_ref(), &out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let content = read_file(path)?;
        let mut doc = DocReader::new(path, &content);
        doc.header("kelp-basis")?;
        let spec_tok = doc.header("kernel")?;
        if spec_tok.len() != 1 {
            return Err(KelpError::parse(path, 2, "kernel line expects one token"));
        }
        let spec: KernelSpec = spec_tok[0].parse()?;
        let q = doc.scalar_usize("q")?;
        let energy = doc.scalar_f64("energy")?;
        let mu = doc.vector("mu")?;
        let phi = doc.matrix("phi")?;
        let kbar = doc.vector("kbar")?;
        if mu.len() != q || phi.ncols() != q || phi.nrows() != kbar.len() {
            return Err(KelpError::parse(path, 1, "inconsistent basis dimensions"));
        }
        let psi = scale_columns(&phi, &mu.mapv(f64::sqrt));
        Ok(KpcaBasis {
            spec,
            q,
            mu,
            phi,
            psi,
            kbar,
            energy,
        })
    }

    #[cfg(test)]
    pub(crate) fn from_parts(
        spec: KernelSpec,
        mu: Array1<f64>,
        phi: Array2<f64>,
        kbar: Array1<f64>,
        energy: f64,
    ) -> Self {
        let psi = scale_columns(&phi, &mu.mapv(f64::sqrt));
        let q = mu.len();
        KpcaBasis {
            spec,
            q,
            mu,
            phi,
            psi,
            kbar,
            energy,
        }
    }
}

fn scale_columns(a: &Array2<f64>, scale: &Array1<f64>) -> Array2<f64> {
    let mut out = a.clone();
    for (mut col, s) in out.columns_mut().into_iter().zip(scale.iter()) {
        col.mapv_inplace(|x| x * s);
    }
    out
}

fn scale_rows(a: &Array2<f64>, scale: &Array1<f64>) -> Array2<f64> {
    let mut out = a.clone();
    for (mut row, s) in out.rows_mut().into_iter().zip(scale.iter()) {
        row.mapv_inplace(|x| x * s);
    }
    out
}

/// Formatted kernel spec for report files; kept next to the grammar parser.
pub fn kernel_to_token(spec: &KernelSpec) -> String {
    match *spec {
        KernelSpec::Gaussian { gamma } => format!("gaussian:{}", fmt_f64(gamma)),
        KernelSpec::Polynomial { degree, offset } => {
            format!("poly:{degree}:{}", fmt_f64(offset))
        }
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    fn table(rows: Array2<f64>) -> EmbeddingTable {
        EmbeddingTable::new(rows).unwrap()
    }

    #[test]
    fn linear_gram_of_orthonormal_rows_is_identity() {
        let e = table(array![[1.0, 0.0], [0.0, 1.0]]);
        let k = gram(&KernelSpec::Linear, &e).unwrap();
        assert_eq!(k, array![[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn gaussian_diagonal_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = table(Array2::from_shape_fn((5, 3), |_| rng.random::<f64>()));
        for gamma in [0.01, 1.0, 50.0] {
            let k = gram(&KernelSpec::Gaussian { gamma }, &e).unwrap();
            for j in 0..5 {
                assert_abs_diff_eq!(k[[j, j]], 1.0, epsilon = 0.0);
            }
        }
    }

    #[test]
    fn polynomial_by_hand() {
        let e = table(array![[1.0, 0.0], [0.0, 1.0]]);
        let k = gram(
            &KernelSpec::Polynomial {
                degree: 2,
                offset: 1.0,
            },
            &e,
        )
        .unwrap();
        assert_abs_diff_eq!(k[[0, 0]], 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(k[[0, 1]], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(k[[1, 0]], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(k[[1, 1]], 4.0, epsilon = 1e-15);
    }

    #[test]
    fn gram_rejects_baseline() {
        let e = table(array![[1.0]]);
        assert!(gram(&KernelSpec::Baseline, &e).is_err());
    }

    #[test]
    fn double_center_examples() {
        let k = array![[1.0, 0.0], [0.0, 1.0]];
        let c = double_center(&k).unwrap();
        assert_abs_diff_eq!(c[[0, 0]], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(c[[0, 1]], -0.5, epsilon = 1e-15);

        let ones = Array2::from_elem((3, 3), 1.0);
        let c = double_center(&ones).unwrap();
        assert!(c.iter().all(|x| x.abs() < 1e-15));

        let k = array![[2.0, 0.0], [0.0, 0.0]];
        let c = double_center(&k).unwrap();
        assert_abs_diff_eq!(c[[0, 0]], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(c[[1, 0]], -0.5, epsilon = 1e-15);

        assert!(double_center(&Array2::zeros((2, 3))).is_err());
    }

    /// Symmetric matrix with prescribed positive spectrum on directions
    /// orthogonal to the all-ones vector, so it is already doubly centered.
    fn centered_matrix_with_spectrum(evals: &[f64]) -> Array2<f64> {
        let p = evals.len() + 1;
        // Orthonormalize [1, basis...] via Gram-Schmidt starting from 1_p.
        let mut basis: Vec<Array1<f64>> = vec![Array1::from_elem(p, 1.0 / (p as f64).sqrt())];
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        while basis.len() < p {
            let mut v = Array1::from_shape_fn(p, |_| rng.random::<f64>() - 0.5);
            for b in &basis {
                let c = v.dot(b);
                v = &v - &(b * c);
            }
            let n = v.dot(&v).sqrt();
            if n > 1e-6 {
                basis.push(v / n);
            }
        }
        let mut k = Array2::zeros((p, p));
        for (idx, &ev) in evals.iter().enumerate() {
            let b = &basis[idx + 1];
            for i in 0..p {
                for j in 0..p {
                    k[[i, j]] += ev * b[i] * b[j];
                }
            }
        }
        k
    }

    #[test]
    fn energy_selection_arithmetic() {
        let k = centered_matrix_with_spectrum(&[4.0, 3.0, 2.0, 1.0]);
        let b = KpcaBasis::from_gram(KernelSpec::Linear, &k, BasisSelector::EnergyThreshold(0.05))
            .unwrap();
        assert_eq!(b.q(), 4);
        let b = KpcaBasis::from_gram(KernelSpec::Linear, &k, BasisSelector::EnergyThreshold(0.3))
            .unwrap();
        assert_eq!(b.q(), 2);
        assert_abs_diff_eq!(b.energy(), 0.7, epsilon = 1e-10);
        assert_abs_diff_eq!(b.mu()[0], 4.0, epsilon = 1e-10);
        assert_abs_diff_eq!(b.mu()[1], 3.0, epsilon = 1e-10);
    }

    #[test]
    fn centered_identity_has_single_positive_eigenvalue() {
        let e = table(array![[1.0, 0.0], [0.0, 1.0]]);
        let k = gram(&KernelSpec::Linear, &e).unwrap();
        for delta in [0.01, 0.3, 0.9] {
            let b =
                KpcaBasis::from_gram(KernelSpec::Linear, &k, BasisSelector::EnergyThreshold(delta))
                    .unwrap();
            assert_eq!(b.q(), 1);
            assert_abs_diff_eq!(b.mu()[0], 1.0, epsilon = 1e-12);
            let v = 1.0 / 2f64.sqrt();
            assert_abs_diff_eq!(b.phi()[[0, 0]].abs(), v, epsilon = 1e-12);
            assert_abs_diff_eq!(b.phi()[[1, 0]].abs(), v, epsilon = 1e-12);
            assert!(b.phi()[[0, 0]] * b.phi()[[1, 0]] < 0.0);
        }
    }

    #[test]
    fn fixed_q_caps_at_positive_count() {
        let k = centered_matrix_with_spectrum(&[2.0, 1.0]);
        let b = KpcaBasis::from_gram(KernelSpec::Linear, &k, BasisSelector::FixedQ(10)).unwrap();
        assert_eq!(b.q(), 2);
    }

    #[test]
    fn degenerate_kernel_errors() {
        let ones = Array2::from_elem((4, 4), 1.0);
        let err = KpcaBasis::from_gram(KernelSpec::Linear, &ones, BasisSelector::FixedQ(1));
        assert!(matches!(err, Err(KelpError::DegenerateKernel)));
    }

    #[test]
    fn basis_invariants_on_random_embeddings() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = table(Array2::from_shape_fn((12, 4), |_| {
            rng.random::<f64>() * 2.0 - 1.0
        }));
        for spec in [
            KernelSpec::Linear,
            KernelSpec::Gaussian { gamma: 0.7 },
            KernelSpec::Polynomial {
                degree: 2,
                offset: 0.5,
            },
        ] {
            let b = KpcaBasis::build(spec, &e, BasisSelector::EnergyThreshold(0.05)).unwrap();
            // phi' phi = I
            let g = b.phi().t().dot(b.phi());
            for i in 0..b.q() {
                for j in 0..b.q() {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(g[[i, j]], expect, epsilon = 1e-8);
                }
            }
            // phi' 1 = 0
            let colsums = b.phi().t().dot(&Array1::from_elem(12, 1.0));
            assert!(colsums.iter().all(|x| x.abs() < 1e-8));
            // psi' psi = diag(mu)
            let g = b.psi().t().dot(b.psi());
            for i in 0..b.q() {
                for j in 0..b.q() {
                    let expect = if i == j { b.mu()[i] } else { 0.0 };
                    assert_abs_diff_eq!(g[[i, j]], expect, epsilon = 1e-8);
                }
            }
            // mu positive nonincreasing
            assert!(b.mu().iter().all(|&m| m > 0.0));
            assert!(b.mu().windows(2).into_iter().all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn psd_kernels_have_nonnegative_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let e = table(Array2::from_shape_fn((15, 6), |_| {
            rng.random::<f64>() * 2.0 - 1.0
        }));
        for spec in [KernelSpec::Linear, KernelSpec::Gaussian { gamma: 0.3 }] {
            let k = gram(&spec, &e).unwrap();
            let (vals, _) = sym_eigen_desc(&k).unwrap();
            let floor = -1e-8 * vals[0].max(1.0);
            assert!(vals.iter().all(|&v| v >= floor), "spectrum dipped: {vals}");
        }
    }

    #[test]
    fn reconstruction_from_full_positive_spectrum() {
        let k = centered_matrix_with_spectrum(&[4.0, 2.5, 1.0]);
        let b = KpcaBasis::from_gram(KernelSpec::Linear, &k, BasisSelector::FixedQ(3)).unwrap();
        let recon = b
            .phi()
            .dot(&Array2::from_diag(b.mu()))
            .dot(&b.phi().t());
        let err = crate::linalg::fro_norm(&(&recon - &k));
        assert!(err <= 1e-6 * crate::linalg::fro_norm(&k));
    }

    #[test]
    fn nystrom_reproduces_training_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let e = table(Array2::from_shape_fn((10, 3), |_| {
            rng.random::<f64>() * 2.0 - 1.0
        }));
        for spec in [
            KernelSpec::Linear,
            KernelSpec::Gaussian { gamma: 0.5 },
            KernelSpec::Polynomial {
                degree: 3,
                offset: 1.0,
            },
        ] {
            let b = KpcaBasis::build(spec, &e, BasisSelector::EnergyThreshold(1e-9)).unwrap();
            for j in 0..e.p() {
                let psi_new = b.nystrom_features(&e, e.row(j)).unwrap();
                let psi_row = b.psi().row(j);
                let diff: f64 = psi_new
                    .iter()
                    .zip(psi_row.iter())
                    .map(|(a, c)| (a - c) * (a - c))
                    .sum::<f64>()
                    .sqrt();
                let norm: f64 = psi_row.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!(
                    diff <= 1e-8 * norm.max(1e-9),
                    "kernel {spec}: row {j} diff {diff} vs norm {norm}"
                );
            }
        }
    }

    #[test]
    fn nystrom_of_zero_embedding_is_centering_term() {
        let e = table(array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        let b = KpcaBasis::build(KernelSpec::Linear, &e, BasisSelector::EnergyThreshold(1e-9))
            .unwrap();
        let zero = Array1::zeros(2);
        let psi_new = b.nystrom_features(&e, zero.view()).unwrap();
        // k_new = 0, so psi_new = -diag(mu)^{-1/2} phi' kbar.
        let expect = -(b.phi().t().dot(b.kbar())) * &b.mu().mapv(|m| 1.0 / m.sqrt());
        for (a, c) in psi_new.iter().zip(expect.iter()) {
            assert_abs_diff_eq!(a, c, epsilon = 1e-12);
        }
        let bad = Array1::zeros(3);
        assert!(b.nystrom_features(&e, bad.view()).is_err());
    }

    #[test]
    fn energy_monotone_in_delta() {
        let k = centered_matrix_with_spectrum(&[5.0, 2.0, 1.0, 0.5, 0.25]);
        let mut last_q = 0;
        for delta in [0.5, 0.3, 0.2, 0.1, 0.05, 0.01] {
            let b =
                KpcaBasis::from_gram(KernelSpec::Linear, &k, BasisSelector::EnergyThreshold(delta))
                    .unwrap();
            assert!(b.q() >= last_q, "q dropped as delta shrank");
            last_q = b.q();
        }
    }

    #[test]
    fn basis_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let e = table(Array2::from_shape_fn((7, 3), |_| {
            rng.random::<f64>() * 2.0 - 1.0
        }));
        let b = KpcaBasis::build(
            KernelSpec::Gaussian { gamma: 0.25 },
            &e,
            BasisSelector::EnergyThreshold(0.1),
        )
        .unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("basis.txt");
        b.save(&path).unwrap();
        let back = KpcaBasis::load(&path).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn kernel_grammar_round_trip() {
        for s in ["linear", "baseline", "gaussian:0.01", "poly:2:1"] {
            let spec: KernelSpec = s.parse().unwrap();
            let again: KernelSpec = spec.to_string().parse().unwrap();
            assert_eq!(spec, again);
        }
        assert!("gaussian:-1".parse::<KernelSpec>().is_err());
        assert!("poly:0:1".parse::<KernelSpec>().is_err());
        assert!("rbf".parse::<KernelSpec>().is_err());
    }

    proptest! {
        #[test]
        fn double_center_idempotent(seed in 0u64..500, p in 2usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Array2::from_shape_fn((p, p), |_| rng.random::<f64>() * 4.0 - 2.0);
            let k = &a + &a.t();
            let once = double_center(&k).unwrap();
            let twice = double_center(&once).unwrap();
            for (x, y) in once.iter().zip(twice.iter()) {
                prop_assert!((x - y).abs() < 1e-10);
            }
            // Row and column sums vanish.
            for row in once.rows() {
                prop_assert!(row.sum().abs() < 1e-10);
            }
            for col in once.columns() {
                prop_assert!(col.sum().abs() < 1e-10);
            }
        }
    }
}
