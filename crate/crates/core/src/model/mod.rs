//! Bayesian random-intercept model with between and within ilr predictors:
//!
//! `y_ij ~ N(γ0 + z_b_j·β_b + z_w_ij·β_w + c_ij·β_c + u_j, σ_ε²)`,
//! `u_j ~ N(0, σ_u²)`.

pub mod density;
pub mod design;
pub mod draws;
pub mod nuts;
pub mod priors;
pub mod summary;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CodaError, Result};

pub use density::{Parameterization, LOG_PRIOR_COMPONENTS};
pub use design::{build_design, membership_matrix, Design, ModelSpec};
pub use draws::{parameter_names, PosteriorDraws};
pub use nuts::{LogDensity, NutsSettings};
pub use priors::{default_priors, CoefficientPrior, HalfStudentT, InterceptPrior, PriorSpec};
pub use summary::{quantile_sorted, summarize, PosteriorSummary, MIN_SUMMARY_DRAWS};

use density::RandomInterceptDensity;

/// Attempts at finding a finite starting point per chain.
pub const MAX_INIT_ATTEMPTS: usize = 100;

/// Sampler settings shared by all chains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    /// Post-warmup iterations per chain.
    pub iter: usize,
    pub seed: u64,
    pub adapt_delta: f64,
    pub max_depth: usize,
    pub parameterization: Parameterization,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            chains: 4,
            warmup: 500,
            iter: 2500,
            seed: 1,
            adapt_delta: 0.8,
            max_depth: 10,
            parameterization: Parameterization::Noncentered,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(CodaError::Config("chains must be at least 1".into()));
        }
        if self.iter == 0 {
            return Err(CodaError::Config("iterations must be at least 1".into()));
        }
        if !(self.adapt_delta > 0.0 && self.adapt_delta < 1.0) {
            return Err(CodaError::Config(format!(
                "adapt_delta must lie in (0, 1), got {}",
                self.adapt_delta
            )));
        }
        if self.max_depth == 0 {
            return Err(CodaError::Config("max_depth must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-chain random stream: the master seed with the chain index as stream
/// number, so adding chains leaves existing ones untouched.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

struct ChainOutput {
    values: Vec<f64>,
    divergent: Vec<bool>,
    log_prior: Vec<[f64; 4]>,
}

fn run_one_chain(
    target: &RandomInterceptDensity<'_>,
    design: &Design,
    cfg: &SamplerConfig,
    chain: usize,
) -> Result<ChainOutput> {
    let mut rng = chain_rng(cfg.seed, chain);
    let dim = target.dim();
    let mut grad = vec![0.0; dim];
    let mut init = None;
    for _ in 0..MAX_INIT_ATTEMPTS {
        let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        if target.logp_and_grad(&q, &mut grad).is_finite() && grad.iter().all(|g| g.is_finite()) {
            init = Some(q);
            break;
        }
    }
    let init = init.ok_or(CodaError::Initialization {
        attempts: MAX_INIT_ATTEMPTS,
    })?;
    let settings = NutsSettings {
        warmup: cfg.warmup,
        draws: cfg.iter,
        target_accept: cfg.adapt_delta,
        max_depth: cfg.max_depth,
    };
    let run = nuts::run_chain(target, &init, &settings, &mut rng)?;

    let p = design.n_cols();
    let n_params = p + 2 + design.n_clusters();
    let mut values = Vec::with_capacity(cfg.iter * n_params);
    let mut log_prior = Vec::with_capacity(cfg.iter);
    for q in run.positions.chunks(dim) {
        log_prior.push(target.log_prior_components(q));
        let start = values.len();
        values.extend_from_slice(&q[..p]);
        design.rotate_to_user(&mut values[start..start + p]);
        values.push(q[p].exp());
        values.push(q[p + 1].exp());
        values.extend(target.cluster_effects(q));
    }
    Ok(ChainOutput {
        values,
        divergent: run.stats.iter().map(|s| s.divergent).collect(),
        log_prior,
    })
}

/// Samples the posterior with independent, individually adapted chains.
/// Output is a deterministic function of the inputs and `cfg.seed`.
pub fn fit(
    spec: &ModelSpec,
    design: &Design,
    priors: &PriorSpec,
    cfg: &SamplerConfig,
) -> Result<PosteriorDraws> {
    cfg.validate()?;
    priors.validate()?;
    if design.n_cols() != 1 + spec.n_predictors() {
        return Err(CodaError::DimensionMismatch {
            expected: 1 + spec.n_predictors(),
            found: design.n_cols(),
        });
    }
    let target = RandomInterceptDensity {
        x: design.x_pivot(),
        y: design.y(),
        cluster_of_row: design.cluster_of_row(),
        n_cols: design.n_cols(),
        n_clusters: design.n_clusters(),
        priors: *priors,
        parameterization: cfg.parameterization,
    };
    let outputs: Vec<ChainOutput> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| run_one_chain(&target, design, cfg, c))
        .collect::<Result<_>>()?;

    let mut values = Vec::new();
    let mut divergent = Vec::new();
    let mut log_prior = Vec::new();
    for out in outputs {
        values.extend(out.values);
        divergent.extend(out.divergent);
        log_prior.extend(out.log_prior);
    }
    PosteriorDraws::new(
        spec.n_coords(),
        spec.covariates.clone(),
        design.cluster_ids().to_vec(),
        cfg.chains,
        cfg.iter,
        values,
        divergent,
        log_prior,
    )
}

/// Population-level expected outcome per draw,
/// `γ0 + z_b·β_b + z_w·β_w + c·β_c` (cluster intercepts omitted).
pub fn predict_expectation(
    draws: &PosteriorDraws,
    z_b: &[f64],
    z_w: &[f64],
    covariates: &[f64],
) -> Result<Vec<f64>> {
    for (found, expected) in [
        (z_b.len(), draws.n_coords()),
        (z_w.len(), draws.n_coords()),
        (covariates.len(), draws.covariates().len()),
    ] {
        if found != expected {
            return Err(CodaError::DimensionMismatch { expected, found });
        }
    }
    let (rb, rw, rc) = (
        draws.between_range(),
        draws.within_range(),
        draws.covariate_range(),
    );
    Ok((0..draws.n_draws())
        .map(|d| {
            let row = draws.draw(d);
            let mut y = row[0];
            for (b, z) in row[rb.clone()].iter().zip(z_b) {
                y += b * z;
            }
            for (b, z) in row[rw.clone()].iter().zip(z_w) {
                y += b * z;
            }
            for (b, c) in row[rc.clone()].iter().zip(covariates) {
                y += b * c;
            }
            y
        })
        .collect())
}
