//! Command-line pipeline: simulate data, fit models, select kernels, evaluate
//! against a known truth, extend to unseen columns, and score masked
//! completion. Every subcommand is deterministic given its flags and inputs,
//! writes its outputs under `--out-dir`, and echoes flat `key value` lines on
//! standard output.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kelp::evaluation::{completion_eval, procrustes_error, relative_theta_error, MetricsReport};
use kelp::kernel::{BasisSelector, KernelSpec, KpcaBasis};
use kelp::matrix::{BinaryMatrix, EmbeddingTable};
use kelp::model::{extend_embedding, ModelParams};
use kelp::optimizer::{pgd_fit, BoxBounds, FitConfig};
use kelp::selection::{default_candidate_grid, select_kernel, select_kernel_and_refit};
use kelp::simulation::{gen_ground_truth, gen_semantic_embeddings, sample_matrix, GroundTruth, Mapping, SimConfig};
use kelp::textio::fmt_f64;
use kelp::{KelpError, Result};

#[derive(Parser)]
#[command(
    name = "kelp",
    about = "Knowledge-embedded latent projection models for binary matrices",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Shared {
    /// Seed for every randomized step of the subcommand.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory the outputs are written into.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Cap on worker-thread parallelism (defaults to the core count).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Clone)]
struct FitFlags {
    /// Latent rank r.
    #[arg(long, default_value_t = 8)]
    rank: usize,
    /// Energy threshold: keep the smallest q reaching this spectral fraction.
    #[arg(long, default_value_t = 0.95)]
    energy: f64,
    /// Fixed basis dimension; overrides --energy when given.
    #[arg(long)]
    q: Option<usize>,
    /// Base step-size scale.
    #[arg(long, default_value_t = 0.5)]
    eta: f64,
    /// Iteration cap.
    #[arg(long, default_value_t = 2000)]
    iters: usize,
    /// Relative objective-change tolerance for early stopping.
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    /// Box projections `M,M1,M2` onto the bounded parameter space (off by default).
    #[arg(long, value_parser = parse_box_bounds)]
    box_bounds: Option<BoxBounds>,
}

impl FitFlags {
    fn to_config(&self, kernel: KernelSpec, seed: u64) -> Result<FitConfig> {
        let mut config = FitConfig::new(self.rank, kernel);
        config.selector = match self.q {
            Some(q) => BasisSelector::FixedQ(q),
            None => {
                let delta = 1.0 - self.energy;
                BasisSelector::EnergyThreshold(delta)
            }
        };
        config.eta = self.eta;
        config.max_iters = self.iters;
        config.tol = self.tol;
        config.box_bounds = self.box_bounds;
        config.seed = seed;
        config.validate()?;
        Ok(config)
    }
}

fn parse_box_bounds(s: &str) -> std::result::Result<BoxBounds, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err("expected M,M1,M2".into());
    }
    let parse = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("bad number `{t}`"));
    let bounds = BoxBounds {
        m: parse(parts[0])?,
        m1: parse(parts[1])?,
        m2: parse(parts[2])?,
    };
    bounds.validate().map_err(|e| e.to_string())?;
    Ok(bounds)
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset: matrix, embeddings, and truth bundle.
    Simulate {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        p: usize,
        /// Semantic embedding dimension d.
        #[arg(long, default_value_t = 50)]
        semantic_dim: usize,
        /// Number of cluster centers.
        #[arg(long, default_value_t = 10)]
        clusters: usize,
        #[arg(long, default_value_t = 8)]
        rank: usize,
        /// Mapping from semantic to column embeddings: linear | nonlinear.
        #[arg(long, default_value = "linear", value_parser = parse_mapping)]
        mapping: Mapping,
        /// Intercept controlling sparsity.
        #[arg(long, default_value_t = -1.5, allow_hyphen_values = true)]
        rho_star: f64,
        /// Cluster noise scale.
        #[arg(long, default_value_t = 0.05)]
        perturb: f64,
    },
    /// Fit a model to a matrix file, with or without a kernel.
    Fit {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        matrix: PathBuf,
        /// Embedding table; required unless --kernel baseline.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// linear | gaussian:<gamma> | poly:<degree>:<offset> | baseline
        #[arg(long)]
        kernel: KernelSpec,
        #[command(flatten)]
        fit: FitFlags,
    },
    /// Hold-out selection across candidate kernels plus the baseline.
    SelectKernel {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        /// Comma-separated candidate list; defaults to linear, three
        /// Gaussians, and the baseline.
        #[arg(long, value_delimiter = ',')]
        kernels: Option<Vec<KernelSpec>>,
        /// Hold-out probability.
        #[arg(long, default_value_t = 0.1)]
        pi: f64,
        /// Also fit the chosen candidate on all entries.
        #[arg(long)]
        refit: bool,
        #[command(flatten)]
        fit: FitFlags,
    },
    /// Compare a fitted model against a simulation truth bundle.
    Evaluate {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Nystrom-extend a fitted kernel model to unseen column embeddings.
    Extend {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        basis: PathBuf,
        /// The training embedding table the basis was built from.
        #[arg(long)]
        embeddings: PathBuf,
        /// Embeddings of the new column entities, one CSV row each.
        #[arg(long)]
        new_embeddings: PathBuf,
    },
    /// Mask a fraction of entries, fit on the rest, and report hold-out AuROC.
    Complete {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        kernel: KernelSpec,
        #[arg(long, default_value_t = 0.2)]
        mask_frac: f64,
        #[command(flatten)]
        fit: FitFlags,
    },
}

fn parse_mapping(s: &str) -> std::result::Result<Mapping, String> {
    match s {
        "linear" => Ok(Mapping::Linear),
        "nonlinear" => Ok(Mapping::NonlinearTanh),
        other => Err(format!("unknown mapping `{other}`; expected linear | nonlinear")),
    }
}

fn configure_threads(shared: &Shared) {
    if let Some(threads) = shared.threads {
        // Ignore failure: the global pool can only be set once per process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global();
    }
}

fn ensure_out_dir(shared: &Shared) -> Result<()> {
    std::fs::create_dir_all(&shared.out_dir)
        .map_err(|e| KelpError::io(shared.out_dir.clone(), e))
}

fn kv(key: &str, value: impl std::fmt::Display) {
    println!("{key} {value}");
}

fn kv_f64(key: &str, value: f64) {
    println!("{key} {}", fmt_f64(value));
}

fn load_inputs(
    matrix: &Path,
    embeddings: Option<&Path>,
) -> Result<(BinaryMatrix, Option<EmbeddingTable>)> {
    let y = BinaryMatrix::load(matrix)?;
    let e = embeddings.map(EmbeddingTable::load).transpose()?;
    Ok((y, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            shared,
            n,
            p,
            semantic_dim,
            clusters,
            rank,
            mapping,
            rho_star,
            perturb,
        } => {
            configure_threads(&shared);
            let mut config = SimConfig::new(n, p);
            config.semantic_dim = semantic_dim;
            config.clusters = clusters;
            config.rank = rank;
            config.mapping = mapping;
            config.rho_star = rho_star;
            config.perturb = perturb;
            config.seed = shared.seed;
            config.validate()?;
            ensure_out_dir(&shared)?;

            let (embeddings, _) = gen_semantic_embeddings(&config)?;
            let truth = gen_ground_truth(&config, &embeddings)?;
            let y = sample_matrix(&truth, shared.seed);

            y.save(shared.out_dir.join("matrix.txt"))?;
            embeddings.save(shared.out_dir.join("embeddings.csv"))?;
            truth.save(shared.out_dir.join("truth.txt"))?;

            kv("n", n);
            kv("p", p);
            kv("rank", rank);
            kv("ones", y.count_ones());
            kv_f64("one_fraction", y.one_fraction());
            kv_f64("expected_one_fraction", truth.expected_one_fraction());
            Ok(())
        }
        Command::Fit {
            shared,
            matrix,
            embeddings,
            kernel,
            fit,
        } => {
            configure_threads(&shared);
            let config = fit.to_config(kernel, shared.seed)?;
            let (y, e) = load_inputs(&matrix, embeddings.as_deref())?;
            let basis = if kernel.is_baseline() {
                None
            } else {
                let e = e.ok_or_else(|| {
                    KelpError::InvalidArgument(
                        "--embeddings is required unless --kernel baseline".into(),
                    )
                })?;
                Some(KpcaBasis::build(kernel, &e, config.selector)?)
            };
            ensure_out_dir(&shared)?;
            let result = pgd_fit(&y, basis.as_ref(), &config, None)?;

            result.params.save(shared.out_dir.join("model.txt"))?;
            result.save_trace(shared.out_dir.join("trace.txt"))?;
            if let Some(b) = &basis {
                b.save(shared.out_dir.join("basis.txt"))?;
                if let Some(q) = fit.q {
                    if b.q() < q {
                        eprintln!(
                            "warning: requested q {q} capped at {} positive eigenvalues",
                            b.q()
                        );
                    }
                }
                kv("q", b.q());
                kv_f64("energy", b.energy());
            }
            kv("kernel", kernel);
            kv("iterations", result.iterations_run);
            kv("converged", u8::from(result.converged));
            kv_f64("final_objective", result.final_objective());
            Ok(())
        }
        Command::SelectKernel {
            shared,
            matrix,
            embeddings,
            kernels,
            pi,
            refit,
            fit,
        } => {
            configure_threads(&shared);
            let config = fit.to_config(KernelSpec::Baseline, shared.seed)?;
            let y = BinaryMatrix::load(&matrix)?;
            let e = EmbeddingTable::load(&embeddings)?;
            let candidates = kernels.unwrap_or_else(default_candidate_grid);
            ensure_out_dir(&shared)?;

            let report = if refit {
                let (report, fit_result, basis) =
                    select_kernel_and_refit(&y, &e, &candidates, pi, &config, shared.seed)?;
                fit_result.params.save(shared.out_dir.join("model.txt"))?;
                fit_result.save_trace(shared.out_dir.join("trace.txt"))?;
                if let Some(b) = &basis {
                    b.save(shared.out_dir.join("basis.txt"))?;
                }
                report
            } else {
                select_kernel(&y, &e, &candidates, pi, &config, shared.seed)?
            };
            report.save(shared.out_dir.join("selection.txt"))?;

            for (idx, c) in report.candidates.iter().enumerate() {
                let q = c.q.map_or("-".into(), |q| q.to_string());
                println!(
                    "candidate {idx} {} q {q} holdout_nll {}",
                    c.kernel,
                    fmt_f64(c.holdout_nll)
                );
            }
            kv("chosen", report.chosen_kernel());
            Ok(())
        }
        Command::Evaluate {
            shared,
            model,
            truth,
        } => {
            configure_threads(&shared);
            let params = ModelParams::load(&model)?;
            let truth = GroundTruth::load(&truth)?;
            ensure_out_dir(&shared)?;

            let mut report = MetricsReport {
                rel_theta_error: Some(relative_theta_error(
                    &params.logits(),
                    &truth.theta_star,
                )?),
                ..MetricsReport::default()
            };
            if params.rank() == truth.rank() {
                report.rel_u_error = Some(procrustes_error(&params.u, &truth.u_star)?);
                report.rel_v_error = Some(procrustes_error(&params.v, &truth.v_star)?);
            }
            report.save(shared.out_dir.join("metrics.txt"))?;
            print!("{}", report.to_kv_lines());
            Ok(())
        }
        Command::Extend {
            shared,
            model,
            basis,
            embeddings,
            new_embeddings,
        } => {
            configure_threads(&shared);
            let params = ModelParams::load(&model)?;
            let basis = KpcaBasis::load(&basis)?;
            let train = EmbeddingTable::load(&embeddings)?;
            let new = EmbeddingTable::load(&new_embeddings)?;
            ensure_out_dir(&shared)?;

            let mut rows = ndarray::Array2::zeros((new.p(), params.rank()));
            for j in 0..new.p() {
                let psi = basis.nystrom_features(&train, new.row(j))?;
                let v_new = extend_embedding(&params, &basis, &psi)?;
                rows.row_mut(j).assign(&v_new);
            }
            let out = EmbeddingTable::new(rows)?;
            out.save(shared.out_dir.join("extended.csv"))?;
            kv("rows", new.p());
            kv("rank", params.rank());
            Ok(())
        }
        Command::Complete {
            shared,
            matrix,
            embeddings,
            kernel,
            mask_frac,
            fit,
        } => {
            configure_threads(&shared);
            let config = fit.to_config(kernel, shared.seed)?;
            let (y, e) = load_inputs(&matrix, embeddings.as_deref())?;
            if !kernel.is_baseline() && e.is_none() {
                return Err(KelpError::InvalidArgument(
                    "--embeddings is required unless --kernel baseline".into(),
                ));
            }
            ensure_out_dir(&shared)?;
            let report =
                completion_eval(&y, e.as_ref(), kernel, mask_frac, &config, shared.seed)?;
            report.save(shared.out_dir.join("metrics.txt"))?;
            print!("{}", report.to_kv_lines());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Single-line, machine-parseable failure report.
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
