//! Spectral initialization and the projected gradient descent loop: scale-aware
//! gradient steps on (rho, alpha, u, v), centering and subspace projections
//! every iteration, and optional box projections onto the bounded parameter
//! space.

use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{KelpError, Result};
use crate::kernel::{BasisSelector, KernelSpec, KpcaBasis};
use crate::linalg::{balanced_rank_r_factors, stacked_spectral_norm_sq, thin_svd};
use crate::matrix::{centered, mean, BinaryMatrix, EntryMask};
use crate::model::{balance_gap, residual_pass, ModelParams};
use crate::textio::{fmt_f64, write_file};

/// Optional box projections from the bounded feasible space: `m` bounds the
/// row effects, row embeddings, and coefficient scale; the intercept is kept
/// in [-m1, -m2].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxBounds {
    pub m: f64,
    pub m1: f64,
    pub m2: f64,
}

impl BoxBounds {
    pub fn validate(&self) -> Result<()> {
        if !(self.m > 0.0 && self.m1 > self.m2 && self.m2 > 0.0) {
            return Err(KelpError::InvalidArgument(format!(
                "box bounds need m > 0 and m1 > m2 > 0, got m={}, m1={}, m2={}",
                self.m, self.m1, self.m2
            )));
        }
        Ok(())
    }
}

/// Fitting configuration. Defaults: energy selector 0.95, eta 0.5, 2000
/// iterations, relative objective tolerance 1e-7, box projections off.
#[derive(Debug, Clone)]
pub struct FitConfig {
    pub rank: usize,
    pub kernel: KernelSpec,
    pub selector: BasisSelector,
    /// Base step-size scale; the per-block step sizes divide it by the block
    /// scale.
    pub eta: f64,
    pub max_iters: usize,
    /// Relative objective-change tolerance for early stopping.
    pub tol: f64,
    pub box_bounds: Option<BoxBounds>,
    /// Scale constant of the universal singular value threshold
    /// tau = usvt_scale * sqrt(max(n, p)).
    pub usvt_scale: f64,
    /// Probability clip applied before the logit transform at initialization.
    pub init_clip: f64,
    /// Reserved for randomized components; the default pipeline is
    /// deterministic.
    pub seed: u64,
}

impl FitConfig {
    pub fn new(rank: usize, kernel: KernelSpec) -> Self {
        FitConfig {
            rank,
            kernel,
            selector: BasisSelector::EnergyThreshold(0.95),
            eta: 0.5,
            max_iters: 2000,
            tol: 1e-7,
            box_bounds: None,
            usvt_scale: 2.02,
            init_clip: 1e-3,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(KelpError::InvalidArgument("rank must be at least 1".into()));
        }
        if !(self.eta > 0.0) {
            return Err(KelpError::InvalidArgument(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        if self.max_iters == 0 {
            return Err(KelpError::InvalidArgument(
                "max_iters must be at least 1".into(),
            ));
        }
        if !(self.tol >= 0.0) {
            return Err(KelpError::InvalidArgument(format!(
                "tol must be nonnegative, got {}",
                self.tol
            )));
        }
        if !(self.init_clip > 0.0 && self.init_clip < 0.5) {
            return Err(KelpError::InvalidArgument(format!(
                "init_clip must lie in (0, 0.5), got {}",
                self.init_clip
            )));
        }
        self.kernel.validate()?;
        self.selector.validate()?;
        if let Some(b) = &self.box_bounds {
            b.validate()?;
        }
        Ok(())
    }
}

/// Per-block step sizes tau = (tau_rho, tau_alpha, tau_u, tau_v).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSizes {
    pub rho: f64,
    pub alpha: f64,
    pub u: f64,
    pub v: f64,
}

/// A finished fit: final parameters, the per-iteration objective trace
/// (including the initial value), and convergence diagnostics.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ModelParams,
    pub objective_trace: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
    pub step_sizes: StepSizes,
}

impl FitResult {
    pub fn final_objective(&self) -> f64 {
        *self
            .objective_trace
            .last()
            .expect("trace holds the initial value")
    }

    /// One objective value per line.
    pub fn save_trace(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        for v in &self.objective_trace {
            out.push_str(&fmt_f64(*v));
            out.push('\n');
        }
        write_file(path.as_ref(), &out)
    }
}

/// Subtract the mean: J_n alpha. Idempotent.
pub fn project_centering(alpha: &Array1<f64>) -> Array1<f64> {
    centered(alpha)
}

/// Orthogonal projection of the column embeddings onto the basis span:
/// phi phi' v. Idempotent; the output has zero column sums because the basis
/// is orthogonal to the all-ones vector.
pub fn project_subspace(v: &Array2<f64>, basis: &KpcaBasis) -> Result<Array2<f64>> {
    if v.nrows() != basis.p() {
        return Err(KelpError::DimensionMismatch(format!(
            "v has {} rows, basis spans {} columns entities",
            v.nrows(),
            basis.p()
        )));
    }
    Ok(basis.project(v))
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Spectral initialization: universal singular value thresholding of the raw
/// binary matrix, probability clipping, logit transform, extraction of the
/// intercept and row effects, and a balanced rank-r split of the residual.
/// In kernel mode the column factor is projected onto the basis span last.
pub fn initialize(
    y: &BinaryMatrix,
    basis: Option<&KpcaBasis>,
    config: &FitConfig,
) -> Result<ModelParams> {
    config.validate()?;
    let (n, p) = (y.n(), y.p());
    if config.rank > n.min(p) {
        return Err(KelpError::InvalidArgument(format!(
            "rank {} exceeds min(n, p) = {}",
            config.rank,
            n.min(p)
        )));
    }
    if let Some(b) = basis {
        if b.p() != p {
            return Err(KelpError::DimensionMismatch(format!(
                "basis spans {} column entities, matrix has {}",
                b.p(),
                p
            )));
        }
    }

    // USVT estimate of the probability matrix.
    let dense = y.to_dense();
    let (u_svd, s, vt) = thin_svd(&dense)?;
    let tau = config.usvt_scale * (n.max(p) as f64).sqrt();
    let kept = s.iter().take_while(|&&sv| sv > tau).count();
    let mut phat = Array2::zeros((n, p));
    for c in 0..kept {
        let uc = u_svd.column(c);
        let vc = vt.row(c);
        let sv = s[c];
        for i in 0..n {
            let scale = sv * uc[i];
            for j in 0..p {
                phat[[i, j]] += scale * vc[j];
            }
        }
    }

    // Clip and transform to logits.
    let clip = config.init_clip;
    let theta0 = phat.mapv(|x: f64| logit(x.clamp(clip, 1.0 - clip)));

    let rho0 = theta0.sum() / (n * p) as f64;
    let mut alpha0 = Array1::from_iter(theta0.rows().into_iter().map(|r| mean(r) - rho0));
    alpha0 = centered(&alpha0);

    let mut resid = theta0;
    for (i, mut row) in resid.rows_mut().into_iter().enumerate() {
        let shift = rho0 + alpha0[i];
        row.mapv_inplace(|x| x - shift);
    }
    let (u0, mut v0) = balanced_rank_r_factors(&resid, config.rank)?;

    let (gamma, kernel) = match basis {
        Some(b) => {
            v0 = b.project(&v0);
            (Some(b.coefficients(&v0)), Some(b.kernel()))
        }
        None => (None, None),
    };
    ModelParams::new(rho0, alpha0, u0, v0, gamma, kernel)
}

/// Project the row effects onto the centered box: center, clip to [-m, m],
/// re-center. The final centering can violate the clip by at most m/n, which
/// is accepted.
fn project_alpha_box(alpha: &Array1<f64>, m: f64) -> Array1<f64> {
    centered(&centered(alpha).mapv(|x| x.clamp(-m, m)))
}

/// Clip each row of u to squared norm at most m.
fn project_row_norms(u: &mut Array2<f64>, m: f64) {
    let cap = m.sqrt();
    for mut row in u.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > cap {
            let scale = cap / norm;
            row.mapv_inplace(|x| x * scale);
        }
    }
}

fn apply_box(
    params: &mut ModelParams,
    basis: Option<&KpcaBasis>,
    bounds: &BoxBounds,
) {
    params.alpha = project_alpha_box(&params.alpha, bounds.m);
    project_row_norms(&mut params.u, bounds.m);
    // Coefficient scale: with v = psi gamma the feasible set bounds
    // ||gamma||_F^2; rescaling gamma rescales v by the same factor. Without a
    // basis the bound is applied to v directly.
    let coeff_sq = match basis {
        Some(b) => {
            let gamma = b.coefficients(&params.v);
            gamma.iter().map(|x| x * x).sum::<f64>()
        }
        None => params.v.iter().map(|x| x * x).sum::<f64>(),
    };
    if coeff_sq > bounds.m {
        let scale = (bounds.m / coeff_sq).sqrt();
        params.v.mapv_inplace(|x| x * scale);
    }
    params.rho = params.rho.clamp(-bounds.m1, -bounds.m2);
}

struct Evaluated {
    pass: crate::model::ResidualPass,
    gap: Array2<f64>,
    objective: f64,
}

fn evaluate(params: &ModelParams, y: &BinaryMatrix, mask: Option<&EntryMask>) -> Evaluated {
    let theta = params.logits();
    let pass = residual_pass(&theta, y, mask);
    let gap = balance_gap(&params.u, &params.v).expect("ranks agree by construction");
    let objective = pass.nll + gap.iter().map(|x| x * x).sum::<f64>() / 4.0;
    Evaluated {
        pass,
        gap,
        objective,
    }
}

/// Fit by projected gradient descent from the spectral initializer. When a
/// mask is supplied the held-out entries are excluded everywhere: they are
/// zeroed before initialization and contribute nothing to the loss or
/// residual.
pub fn pgd_fit(
    y: &BinaryMatrix,
    basis: Option<&KpcaBasis>,
    config: &FitConfig,
    mask: Option<&EntryMask>,
) -> Result<FitResult> {
    let init = match mask {
        Some(m) => initialize(&y.without_entries(m)?, basis, config)?,
        None => initialize(y, basis, config)?,
    };
    pgd_fit_from(y, basis, config, mask, init)
}

/// Fit by projected gradient descent from explicit starting parameters.
pub fn pgd_fit_from(
    y: &BinaryMatrix,
    basis: Option<&KpcaBasis>,
    config: &FitConfig,
    mask: Option<&EntryMask>,
    init: ModelParams,
) -> Result<FitResult> {
    config.validate()?;
    if config.kernel.is_baseline() != basis.is_none() {
        return Err(KelpError::InvalidArgument(
            "a basis must be supplied exactly when the kernel is not baseline".into(),
        ));
    }
    let (n, p) = (y.n(), y.p());
    if init.n() != n || init.p() != p {
        return Err(KelpError::DimensionMismatch(format!(
            "initializer is {}x{}, matrix is {}x{}",
            init.n(),
            init.p(),
            n,
            p
        )));
    }
    if let Some(m) = mask {
        if m.dims() != (n, p) {
            return Err(KelpError::DimensionMismatch(format!(
                "mask dims {:?} do not match matrix {}x{}",
                m.dims(),
                n,
                p
            )));
        }
    }

    let mut params = init;
    let mut cur = evaluate(&params, y, mask);

    // Scale-aware step sizes from the initial factor stack. When the
    // initializer keeps nothing beyond the constant component the stack is
    // numerically tiny and the raw rule diverges, so the denominator is
    // floored by an estimate of the equilibrium factor scale: the spectral
    // norm of the initial residual divided by the sigmoid slope at the
    // observed one-fraction (residuals live on the probability scale, factors
    // on the logit scale). The floor is inactive whenever the initializer
    // carries the signal scale itself.
    let stack_sq = stacked_spectral_norm_sq(&params.u, &params.v)?;
    let residual_norm = crate::linalg::spectral_norm_est(&cur.pass.residual);
    let observed = (n * p - mask.map_or(0, |m| m.len())) as f64;
    let one_fraction = if observed > 0.0 {
        let held_out_ones = mask.map_or(0, |m| {
            m.held_out().iter().filter(|&&(i, j)| y.get(i, j)).count()
        });
        (((y.count_ones() - held_out_ones) as f64) / observed).clamp(1e-6, 1.0 - 1e-6)
    } else {
        0.5
    };
    let slope = one_fraction * (1.0 - one_fraction);
    let factor_step = config.eta
        / stack_sq
            .max(residual_norm / slope)
            .max(f64::EPSILON);
    let tau = StepSizes {
        rho: config.eta / (n * p) as f64,
        alpha: config.eta / p as f64,
        u: factor_step,
        v: factor_step,
    };
    let mut trace = Vec::with_capacity(config.max_iters + 1);
    trace.push(cur.objective);
    let mut iterations_run = 0;
    let mut converged = false;

    for t in 0..config.max_iters {
        // Gradient step on all blocks from the current iterate.
        let grad_u = cur.pass.residual.dot(&params.v) + params.u.dot(&cur.gap);
        let grad_v = cur.pass.residual.t().dot(&params.u) - params.v.dot(&cur.gap);
        params.rho -= tau.rho * cur.pass.grad_rho;
        params.alpha.scaled_add(-tau.alpha, &cur.pass.grad_alpha);
        params.u.scaled_add(-tau.u, &grad_u);
        params.v.scaled_add(-tau.v, &grad_v);

        // Projections: centering, then the basis span, then optional boxes.
        params.alpha = project_centering(&params.alpha);
        if let Some(b) = basis {
            params.v = b.project(&params.v);
        }
        if let Some(bounds) = &config.box_bounds {
            apply_box(&mut params, basis, bounds);
        }

        iterations_run = t + 1;
        let next = evaluate(&params, y, mask);
        if !next.objective.is_finite() {
            return Err(KelpError::Diverged {
                iteration: iterations_run,
                trace,
            });
        }
        let prev = *trace.last().unwrap();
        trace.push(next.objective);
        if (next.objective - prev).abs() <= config.tol * (1.0 + prev.abs()) {
            converged = true;
            break;
        }
        cur = next;
    }

    if let Some(b) = basis {
        params.gamma = Some(b.coefficients(&params.v));
        params.kernel = Some(b.kernel());
    }

    Ok(FitResult {
        params,
        objective_trace: trace,
        iterations_run,
        converged,
        step_sizes: tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::gram;
    use crate::matrix::EmbeddingTable;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, p: usize, frac: f64, seed: u64) -> BinaryMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ones = Vec::new();
        for i in 0..n {
            for j in 0..p {
                if rng.random::<f64>() < frac {
                    ones.push((i, j));
                }
            }
        }
        BinaryMatrix::new(n, p, ones).unwrap()
    }

    fn random_embeddings(p: usize, d: usize, seed: u64) -> EmbeddingTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EmbeddingTable::new(Array2::from_shape_fn((p, d), |_| {
            rng.random::<f64>() * 2.0 - 1.0
        }))
        .unwrap()
    }

    #[test]
    fn centering_projection_examples() {
        let a = array![1.0, -1.0];
        assert_eq!(project_centering(&a), a);
        let b = project_centering(&array![2.0, 0.0]);
        assert_abs_diff_eq!(b[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b[1], -1.0, epsilon = 1e-15);
        let c = project_centering(&Array1::from_elem(5, 3.7));
        assert!(c.iter().all(|x| x.abs() < 1e-15));
        // Idempotent.
        let x = array![0.3, 1.9, -4.0];
        let once = project_centering(&x);
        let twice = project_centering(&once);
        for (a, b) in once.iter().zip(twice.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn subspace_projection_properties() {
        let e = random_embeddings(8, 3, 40);
        let basis = KpcaBasis::build(
            KernelSpec::Linear,
            &e,
            BasisSelector::EnergyThreshold(1e-9),
        )
        .unwrap();
        // In-span matrices are unchanged.
        let coeffs = Array2::from_shape_fn((basis.q(), 2), |(i, j)| ((i + j) as f64).sin());
        let v = basis.psi().dot(&coeffs);
        let proj = project_subspace(&v, &basis).unwrap();
        for (a, b) in proj.iter().zip(v.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
        // Constant columns are annihilated.
        let ones = Array2::from_elem((8, 2), 1.3);
        let proj = project_subspace(&ones, &basis).unwrap();
        assert!(proj.iter().all(|x| x.abs() < 1e-10));
        // Idempotent to machine precision, with zero column sums.
        let w = Array2::from_shape_fn((8, 2), |(i, j)| ((2 * i + j) as f64).cos());
        let once = project_subspace(&w, &basis).unwrap();
        let twice = project_subspace(&once, &basis).unwrap();
        for (a, b) in once.iter().zip(twice.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        for col in once.columns() {
            assert!(col.sum().abs() < 1e-8);
        }
        assert!(project_subspace(&Array2::zeros((5, 2)), &basis).is_err());
    }

    #[test]
    fn full_centered_span_projection_is_identity() {
        // With q = p - 1 the basis spans the whole centered space, so any
        // column-centered matrix is fixed.
        let e = random_embeddings(6, 8, 41);
        let k = gram(&KernelSpec::Gaussian { gamma: 0.8 }, &e).unwrap();
        let basis =
            KpcaBasis::from_gram(KernelSpec::Gaussian { gamma: 0.8 }, &k, BasisSelector::FixedQ(5))
                .unwrap();
        assert_eq!(basis.q(), 5);
        let mut v = Array2::from_shape_fn((6, 2), |(i, j)| ((i * 3 + j) as f64).sin());
        for mut col in v.columns_mut() {
            let m = col.sum() / 6.0;
            col.mapv_inplace(|x| x - m);
        }
        let proj = project_subspace(&v, &basis).unwrap();
        for (a, b) in proj.iter().zip(v.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn initialize_all_zero_matrix() {
        let y = BinaryMatrix::new(6, 9, vec![]).unwrap();
        let config = FitConfig::new(1, KernelSpec::Baseline);
        let params = initialize(&y, None, &config).unwrap();
        assert_abs_diff_eq!(params.rho, logit(1e-3), epsilon = 1e-12);
        assert!(params.alpha.iter().all(|x| x.abs() < 1e-12));
        let prod = params.u.dot(&params.v.t());
        assert!(prod.iter().all(|x| x.abs() < 1e-9));
    }

    #[test]
    fn initialize_balanced_rows_gives_zero_alpha() {
        // Equal row sums: each row has exactly half ones.
        let mut ones = Vec::new();
        for i in 0..4 {
            for j in 0..4 {
                if (i + j) % 2 == 0 {
                    ones.push((i, j));
                }
            }
        }
        let y = BinaryMatrix::new(4, 4, ones).unwrap();
        let config = FitConfig::new(1, KernelSpec::Baseline);
        let params = initialize(&y, None, &config).unwrap();
        assert!(params.alpha.iter().all(|x| x.abs() < 1e-10));
    }

    #[test]
    fn initialize_projects_into_span() {
        let y = random_matrix(12, 10, 0.4, 7);
        let e = random_embeddings(10, 4, 8);
        let basis = KpcaBasis::build(
            KernelSpec::Linear,
            &e,
            BasisSelector::EnergyThreshold(0.05),
        )
        .unwrap();
        let mut config = FitConfig::new(2, KernelSpec::Linear);
        config.selector = BasisSelector::EnergyThreshold(0.05);
        let params = initialize(&y, Some(&basis), &config).unwrap();
        let proj = basis.project(&params.v);
        for (a, b) in proj.iter().zip(params.v.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(params.gamma.is_some());
    }

    #[test]
    fn initialize_rejects_oversized_rank() {
        let y = random_matrix(3, 5, 0.4, 9);
        let config = FitConfig::new(4, KernelSpec::Baseline);
        assert!(initialize(&y, None, &config).is_err());
    }

    #[test]
    fn masked_balanced_start_is_a_fixed_point() {
        let y = random_matrix(3, 3, 0.5, 10);
        let mask = EntryMask::new(
            3,
            3,
            (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).collect(),
        )
        .unwrap();
        let u = array![[0.7, 0.1], [0.2, -0.4], [0.0, 1.0]];
        let init = ModelParams::new(
            -0.3,
            project_centering(&array![0.2, -0.1, 0.4]),
            u.clone(),
            u,
            None,
            None,
        )
        .unwrap();
        let mut config = FitConfig::new(2, KernelSpec::Baseline);
        config.max_iters = 25;
        config.tol = 0.0;
        let fit = pgd_fit_from(&y, None, &config, Some(&mask), init.clone()).unwrap();
        // Gradients vanish (all entries masked, balanced factors), so every
        // iterate equals the start.
        assert_eq!(fit.params.rho, init.rho);
        assert_eq!(fit.params.u, init.u);
        assert_eq!(fit.params.v, init.v);
        for (a, b) in fit.params.alpha.iter().zip(init.alpha.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        assert!(fit.converged);
        assert_eq!(fit.objective_trace.len(), fit.iterations_run + 1);
    }

    #[test]
    fn fit_descends_and_respects_constraints() {
        let y = random_matrix(30, 40, 0.3, 11);
        let e = random_embeddings(40, 6, 12);
        let basis = KpcaBasis::build(
            KernelSpec::Linear,
            &e,
            BasisSelector::EnergyThreshold(0.05),
        )
        .unwrap();
        let mut config = FitConfig::new(3, KernelSpec::Linear);
        config.max_iters = 300;
        let fit = pgd_fit(&y, Some(&basis), &config, None).unwrap();
        assert_eq!(fit.objective_trace.len(), fit.iterations_run + 1);
        assert!(fit.final_objective() < fit.objective_trace[0]);
        // Centering and subspace membership at the solution.
        assert!(fit.params.alpha.sum().abs() < 1e-8 * 30.0);
        let proj = basis.project(&fit.params.v);
        for (a, b) in proj.iter().zip(fit.params.v.iter()) {
            assert!((a - b).abs() < 1e-8);
        }
        for col in fit.params.v.columns() {
            assert!(col.sum().abs() < 1e-8);
        }
        // Gamma was refreshed at exit.
        let gamma = fit.params.gamma.as_ref().unwrap();
        let recon = basis.psi().dot(gamma);
        for (a, b) in recon.iter().zip(fit.params.v.iter()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn baseline_fit_skips_subspace() {
        let y = random_matrix(20, 15, 0.35, 13);
        let mut config = FitConfig::new(2, KernelSpec::Baseline);
        config.max_iters = 200;
        let fit = pgd_fit(&y, None, &config, None).unwrap();
        assert!(fit.params.gamma.is_none());
        assert!(fit.params.kernel.is_none());
        assert!(fit.final_objective() < fit.objective_trace[0]);
        assert!(fit.params.alpha.sum().abs() < 1e-8 * 20.0);
    }

    #[test]
    fn basis_presence_must_match_kernel() {
        let y = random_matrix(5, 5, 0.4, 14);
        let e = random_embeddings(5, 2, 15);
        let basis = KpcaBasis::build(
            KernelSpec::Linear,
            &e,
            BasisSelector::EnergyThreshold(0.05),
        )
        .unwrap();
        let config = FitConfig::new(1, KernelSpec::Baseline);
        assert!(pgd_fit(&y, Some(&basis), &config, None).is_err());
        let config = FitConfig::new(1, KernelSpec::Linear);
        assert!(pgd_fit(&y, None, &config, None).is_err());
    }

    #[test]
    fn box_projections_bound_the_iterates() {
        let y = random_matrix(25, 20, 0.3, 16);
        let mut config = FitConfig::new(2, KernelSpec::Baseline);
        config.max_iters = 60;
        config.box_bounds = Some(BoxBounds {
            m: 0.5,
            m1: 4.0,
            m2 : 0.05,
        });
        let fit = pgd_fit(&y, None, &config, None).unwrap();
        let b = config.box_bounds.unwrap();
        // Row effects: clipping then re-centering can spill by at most m/n.
        let spill = b.m / 25.0 + 1e-12;
        assert!(fit
            .params
            .alpha
            .iter()
            .all(|x| x.abs() <= b.m + spill));
        for row in fit.params.u.rows() {
            assert!(row.dot(&row) <= b.m + 1e-9);
        }
        assert!(fit.params.v.iter().map(|x| x * x).sum::<f64>() <= b.m + 1e-9);
        assert!(fit.params.rho >= -b.m1 - 1e-12 && fit.params.rho <= -b.m2 + 1e-12);
    }

    #[test]
    fn masked_fit_ignores_heldout_values() {
        let y = random_matrix(15, 12, 0.4, 17);
        let mask = crate::matrix::sample_holdout_mask(15, 12, 0.2, 18).unwrap();
        let y_zeroed = y.without_entries(&mask).unwrap();
        let mut config = FitConfig::new(2, KernelSpec::Baseline);
        config.max_iters = 80;
        let a = pgd_fit(&y, None, &config, Some(&mask)).unwrap();
        let b = pgd_fit(&y_zeroed, None, &config, Some(&mask)).unwrap();
        // Bitwise identical: the held-out values never enter the fit.
        assert_eq!(a.params, b.params);
        assert_eq!(a.objective_trace, b.objective_trace);
    }

    #[test]
    fn trace_to_file() {
        let y = random_matrix(8, 8, 0.4, 19);
        let mut config = FitConfig::new(1, KernelSpec::Baseline);
        config.max_iters = 10;
        config.tol = 0.0;
        let fit = pgd_fit(&y, None, &config, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.txt");
        fit.save_trace(&path).unwrap();
        let content = std::fs::read_to_string(&path).unwrap();
        let values: Vec<f64> = content
            .lines()
            .map(|l| l.parse::<f64>().unwrap())
            .collect();
        assert_eq!(values.len(), fit.objective_trace.len());
        assert_eq!(values[0], fit.objective_trace[0]);
    }
}
