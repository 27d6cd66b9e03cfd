//! Synthetic data generators: cluster-structured semantic embeddings, linear
//! or nonlinear mappings to column embeddings, identifiability normalization,
//! and Bernoulli sampling of the observation matrix.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{KelpError, Result};
use crate::linalg::factored_svd;
use crate::matrix::{centered, BinaryMatrix, EmbeddingTable};
use crate::model::sigmoid;
use crate::textio::{push_matrix, push_scalar, push_vector, read_file, write_file, DocReader};

// Distinct RNG streams so resampling one stage never disturbs the others.
const STREAM_EMBEDDINGS: u64 = 1;
const STREAM_TRUTH: u64 = 2;
const STREAM_SAMPLING: u64 = 3;

/// The map from semantic embeddings to column embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mapping {
    /// v_k = <w_k, e> with w_k ~ N(0, 2 I_d).
    Linear,
    /// v_k = tanh(<w2_k, (W1_k' e)^2>) with the square taken elementwise on
    /// the 2r-dimensional hidden vector.
    NonlinearTanh,
}

/// Generator configuration. Defaults mirror the simulation design: 50-d
/// embeddings in 10 clusters, rank 8, intercept -1.5, perturbation 0.05.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    /// Semantic embedding dimension d.
    pub semantic_dim: usize,
    /// Number of cluster centers on the unit sphere.
    pub clusters: usize,
    /// Latent rank r.
    pub rank: usize,
    pub mapping: Mapping,
    /// Global intercept controlling the one-fraction.
    pub rho_star: f64,
    /// Cluster noise scale.
    pub perturb: f64,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(n: usize, p: usize) -> Self {
        SimConfig {
            n,
            p,
            semantic_dim: 50,
            clusters: 10,
            rank: 8,
            mapping: Mapping::Linear,
            rho_star: -1.5,
            perturb: 0.05,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(KelpError::InvalidArgument(
                "dimensions must be positive".into(),
            ));
        }
        if self.clusters == 0 || self.clusters > self.p {
            return Err(KelpError::InvalidArgument(format!(
                "cluster count {} must lie in [1, p = {}]",
                self.clusters, self.p
            )));
        }
        if self.rank == 0 || self.rank > self.n.min(self.p) {
            return Err(KelpError::InvalidArgument(format!(
                "rank {} exceeds min(n, p) = {}",
                self.rank,
                self.n.min(self.p)
            )));
        }
        if self.semantic_dim == 0 {
            return Err(KelpError::InvalidArgument(
                "semantic dimension must be positive".into(),
            ));
        }
        if !(self.perturb >= 0.0) {
            return Err(KelpError::InvalidArgument(format!(
                "perturbation must be nonnegative, got {}",
                self.perturb
            )));
        }
        Ok(())
    }
}

/// True parameters underlying a generated dataset, satisfying the
/// identifiability constraints: centered alpha and v, balanced factors, and
/// ||u v'||_F^2 = n p.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub rho_star: f64,
    pub alpha_star: Array1<f64>,
    pub u_star: Array2<f64>,
    pub v_star: Array2<f64>,
    pub theta_star: Array2<f64>,
}

impl GroundTruth {
    pub fn n(&self) -> usize {
        self.u_star.nrows()
    }

    pub fn p(&self) -> usize {
        self.v_star.nrows()
    }

    pub fn rank(&self) -> usize {
        self.u_star.ncols()
    }

    /// Expected fraction of ones: the mean Bernoulli probability.
    pub fn expected_one_fraction(&self) -> f64 {
        self.theta_star.iter().map(|&t| sigmoid(t)).sum::<f64>()
            / (self.n() * self.p()) as f64
    }

    /// The same truth with a different intercept (alpha and the factors are
    /// untouched; theta is rebuilt).
    pub fn with_intercept(&self, rho_star: f64) -> GroundTruth {
        let mut out = self.clone();
        let shift = rho_star - self.rho_star;
        out.rho_star = rho_star;
        out.theta_star.mapv_inplace(|t| t + shift);
        out
    }

    /// Persist the truth bundle (rho*, alpha*, U*, V*, Theta*) as decimal text.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        out.push_str("kelp-truth 1\n");
        push_scalar(&mut out, "rho_star", self.rho_star);
        push_vector(&mut out, "alpha_star", &self.alpha_star);
        push_matrix(&mut out, "u_star", &self.u_star);
        push_matrix(&mut out, "v_star", &self.v_star);
        push_matrix(&mut out, "theta_star", &self.theta_star);
        write_file(path.as_ref(), &out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let content = read_file(path)?;
        let mut doc = DocReader::new(path, &content);
        doc.header("kelp-truth")?;
        let rho_star = doc.scalar_f64("rho_star")?;
        let alpha_star = doc.vector("alpha_star")?;
        let u_star = doc.matrix("u_star")?;
        let v_star = doc.matrix("v_star")?;
        let theta_star = doc.matrix("theta_star")?;
        if u_star.nrows() != alpha_star.len()
            || u_star.ncols() != v_star.ncols()
            || theta_star.dim() != (u_star.nrows(), v_star.nrows())
        {
            return Err(KelpError::parse(path, 1, "inconsistent truth dimensions"));
        }
        Ok(GroundTruth {
            rho_star,
            alpha_star,
            u_star,
            v_star,
            theta_star,
        })
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Cluster-structured semantic embeddings: centers uniform on the unit sphere,
/// uniform cluster assignments, Gaussian perturbation, and row normalization.
/// Returns the table and the cluster assignment of each column entity.
pub fn gen_semantic_embeddings(config: &SimConfig) -> Result<(EmbeddingTable, Vec<usize>)> {
    config.validate()?;
    let d = config.semantic_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(STREAM_EMBEDDINGS);

    // Uniform sphere points as normalized Gaussians.
    let mut centers = Array2::zeros((config.clusters, d));
    for mut row in centers.rows_mut() {
        loop {
            for x in row.iter_mut() {
                *x = standard_normal(&mut rng);
            }
            let norm = row.dot(&row).sqrt();
            if norm > 1e-12 {
                row.mapv_inplace(|x| x / norm);
                break;
            }
        }
    }

    let assignments: Vec<usize> = (0..config.p)
        .map(|_| rng.random_range(0..config.clusters))
        .collect();

    let mut rows = Array2::zeros((config.p, d));
    for (j, mut row) in rows.rows_mut().into_iter().enumerate() {
        let center = centers.row(assignments[j]);
        for (k, x) in row.iter_mut().enumerate() {
            *x = center[k] + config.perturb * standard_normal(&mut rng);
        }
        let norm = row.dot(&row).sqrt();
        if norm > 1e-12 {
            row.mapv_inplace(|x| x / norm);
        }
    }
    Ok((EmbeddingTable::new(rows)?, assignments))
}

fn column_centered(mut a: Array2<f64>) -> Array2<f64> {
    let n = a.nrows() as f64;
    for mut col in a.columns_mut() {
        let m = col.sum() / n;
        col.mapv_inplace(|x| x - m);
    }
    a
}

fn map_embeddings(
    config: &SimConfig,
    embeddings: &EmbeddingTable,
    rng: &mut ChaCha8Rng,
) -> Array2<f64> {
    let (p, d, r) = (config.p, config.semantic_dim, config.rank);
    match config.mapping {
        Mapping::Linear => {
            // w_k ~ N(0, 2 I_d), so entries have standard deviation sqrt(2).
            let scale = 2f64.sqrt();
            let w = Array2::from_shape_fn((d, r), |_| scale * standard_normal(rng));
            embeddings.as_array().dot(&w)
        }
        Mapping::NonlinearTanh => {
            let mut v = Array2::zeros((p, r));
            for k in 0..r {
                let w1 = Array2::from_shape_fn((d, 2 * r), |_| standard_normal(rng));
                let w2 = Array1::from_shape_fn(2 * r, |_| standard_normal(rng));
                let hidden = embeddings.as_array().dot(&w1).mapv(|x| x * x);
                for j in 0..p {
                    v[[j, k]] = hidden.row(j).dot(&w2).tanh();
                }
            }
            v
        }
    }
}

/// Generate the true parameters: Gaussian row embeddings, mapped column
/// embeddings, column centering, a balanced SVD split, the global rescale to
/// ||u v'||_F^2 = n p, and centered uniform row effects.
pub fn gen_ground_truth(config: &SimConfig, embeddings: &EmbeddingTable) -> Result<GroundTruth> {
    config.validate()?;
    if embeddings.p() != config.p {
        return Err(KelpError::DimensionMismatch(format!(
            "embedding table has {} rows, config expects {}",
            embeddings.p(),
            config.p
        )));
    }
    let (n, p, r) = (config.n, config.p, config.rank);

    let mut attempt = 0;
    loop {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(attempt));
        rng.set_stream(STREAM_TRUTH);

        let u_raw =
            column_centered(Array2::from_shape_fn((n, r), |_| standard_normal(&mut rng)));
        let v_raw = column_centered(map_embeddings(config, embeddings, &mut rng));

        let (left, s, right) = factored_svd(&u_raw, &v_raw)?;
        let rank_ok = s.len() >= r && s[r - 1] > 1e-12 * s[0].max(1e-300);
        if !rank_ok {
            attempt += 1;
            if attempt >= 5 {
                return Err(KelpError::InvalidArgument(format!(
                    "generated factors are rank deficient below {r} after 5 attempts"
                )));
            }
            continue;
        }

        // Balanced split, then one global scalar to hit ||u v'||_F^2 = n p.
        // The scalar multiplies both factors, preserving balance and centering.
        let fro_sq: f64 = s.iter().take(r).map(|x| x * x).sum();
        let c = ((n * p) as f64 / fro_sq).powf(0.25);
        let mut u_star = Array2::zeros((n, r));
        let mut v_star = Array2::zeros((p, r));
        for k in 0..r {
            let scale = c * s[k].sqrt();
            u_star.column_mut(k).assign(&(&left.column(k) * scale));
            v_star.column_mut(k).assign(&(&right.column(k) * scale));
        }

        let alpha_raw = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0));
        let alpha_star = centered(&alpha_raw);

        let mut theta_star = u_star.dot(&v_star.t());
        for (i, mut row) in theta_star.rows_mut().into_iter().enumerate() {
            let shift = config.rho_star + alpha_star[i];
            row.mapv_inplace(|x| x + shift);
        }

        return Ok(GroundTruth {
            rho_star: config.rho_star,
            alpha_star,
            u_star,
            v_star,
            theta_star,
        });
    }
}

/// Draw the binary matrix: independent Bernoulli entries with probabilities
/// sigma(theta*). The sampling stream is separate from the generation streams,
/// so resampling never changes the truth.
pub fn sample_matrix(truth: &GroundTruth, seed: u64) -> BinaryMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_SAMPLING);
    let (n, p) = truth.theta_star.dim();
    let mut ones = Vec::new();
    for i in 0..n {
        for j in 0..p {
            if rng.random::<f64>() < sigmoid(truth.theta_star[[i, j]]) {
                ones.push((i, j));
            }
        }
    }
    BinaryMatrix::new(n, p, ones).expect("sampled coordinates are in range")
}
