//! Simulation-based calibration of the fitted model.
//!
//! Each replication draws parameters from the (proper) prior, generates data
//! from them, fits the model with that same prior and records the rank of
//! each true value among thinned posterior draws. Under a correct sampler
//! the ranks are uniform.

use rand::Rng;
use rand_distr::{Normal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{CodaError, Result};
use crate::ilr::{build_basis, default_sbp, OrthonormalBasis};
use crate::model::{
    build_design, fit, CoefficientPrior, HalfStudentT, InterceptPrior, ModelSpec, PriorSpec,
    SamplerConfig,
};
use crate::multilevel::between_within_split;

use super::dgp::{data_rng, generate_with, DgpParams};
use super::study::replication_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbcConfig {
    pub clusters: usize,
    pub cluster_size: usize,
    pub parts: usize,
    pub n_sim: usize,
    pub seed: u64,
    pub sampler: SamplerConfig,
    pub priors: PriorSpec,
    /// Posterior draws kept per replication; ranks lie in `0..=thin_to`.
    pub thin_to: usize,
}

impl Default for SbcConfig {
    fn default() -> Self {
        SbcConfig {
            clusters: 30,
            cluster_size: 3,
            parts: 3,
            n_sim: 200,
            seed: 1,
            sampler: SamplerConfig {
                chains: 2,
                warmup: 500,
                iter: 500,
                ..SamplerConfig::default()
            },
            priors: PriorSpec {
                intercept: InterceptPrior::StudentT {
                    df: 3.0,
                    location: 0.0,
                    scale: 1.0,
                },
                coefficients: CoefficientPrior::Normal { scale: 1.0 },
                sd_intercept: HalfStudentT { df: 3.0, scale: 1.0 },
                sd_residual: HalfStudentT { df: 3.0, scale: 1.0 },
            },
            thin_to: 99,
        }
    }
}

/// Ranks and posterior means per parameter across replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbcOutcome {
    pub parameters: Vec<String>,
    /// `ranks[p][r]`: rank of the truth of parameter `p` in replication `r`.
    pub ranks: Vec<Vec<usize>>,
    pub truths: Vec<Vec<f64>>,
    pub posterior_means: Vec<Vec<f64>>,
    pub failed: usize,
}

struct Replicate {
    ranks: Vec<usize>,
    truths: Vec<f64>,
    means: Vec<f64>,
}

fn half_t(rng: &mut impl Rng, p: HalfStudentT) -> Result<f64> {
    let t = StudentT::new(p.df).map_err(|e| CodaError::Config(e.to_string()))?;
    Ok((rng.sample(t) * p.scale).abs())
}

fn replicate(cfg: &SbcConfig, params: &DgpParams, rep: usize) -> Result<(Vec<String>, Replicate)> {
    let seed = replication_seed(cfg.seed, 0, rep);
    let mut rng = data_rng(seed);
    let k = cfg.parts - 1;
    let intercept = match cfg.priors.intercept {
        InterceptPrior::StudentT {
            df,
            location,
            scale,
        } => {
            let t = StudentT::new(df).map_err(|e| CodaError::Config(e.to_string()))?;
            location + scale * rng.sample(t)
        }
        InterceptPrior::Flat => {
            return Err(CodaError::Config("calibration needs a proper intercept prior".into()))
        }
    };
    let CoefficientPrior::Normal { scale } = cfg.priors.coefficients else {
        return Err(CodaError::Config("calibration needs a proper coefficient prior".into()));
    };
    let normal = Normal::new(0.0, scale).map_err(|e| CodaError::Config(e.to_string()))?;
    let between: Vec<f64> = (0..k).map(|_| rng.sample(normal)).collect();
    let within: Vec<f64> = (0..k).map(|_| rng.sample(normal)).collect();
    let mut params = params.clone();
    params.sigma_u = half_t(&mut rng, cfg.priors.sd_intercept)?;
    params.sigma_e = half_t(&mut rng, cfg.priors.sd_residual)?;
    let sim = generate_with(&params, &between, &within, intercept, cfg.clusters, cfg.cluster_size, cfg.parts, &mut rng)?;

    let sbp = default_sbp(cfg.parts)?;
    let basis: OrthonormalBasis<f64> = build_basis(&sbp);
    let coords = between_within_split(&sim.table, &basis)?;
    let spec = ModelSpec::for_table(&sim.table, sbp)?;
    let design = build_design(&coords, &sim.table, &spec)?;
    let sampler = SamplerConfig {
        seed,
        ..cfg.sampler
    };
    let draws = fit(&spec, &design, &cfg.priors, &sampler)?;

    let n = draws.n_draws();
    if n < cfg.thin_to {
        return Err(CodaError::TooFewDraws {
            needed: cfg.thin_to,
            have: n,
        });
    }
    let keep: Vec<usize> = (0..cfg.thin_to).map(|i| i * n / cfg.thin_to).collect();
    let named = sim.truth.named_values();
    let mut out = Replicate {
        ranks: Vec::new(),
        truths: Vec::new(),
        means: Vec::new(),
    };
    let mut names = Vec::new();
    for (name, truth) in named {
        let idx = draws
            .index_of(&name)
            .ok_or_else(|| CodaError::Sampling(format!("missing parameter {name}")))?;
        let col = draws.column(idx);
        out.ranks.push(keep.iter().filter(|&&i| col[i] < truth).count());
        out.means.push(col.iter().sum::<f64>() / n as f64);
        out.truths.push(truth);
        names.push(name);
    }
    Ok((names, out))
}

/// Runs all replications in parallel on the current rayon pool.
pub fn run_sbc(cfg: &SbcConfig, params: &DgpParams) -> Result<SbcOutcome> {
    cfg.sampler.validate()?;
    cfg.priors.validate()?;
    if cfg.thin_to == 0 || cfg.n_sim == 0 {
        return Err(CodaError::Config("thin_to and n_sim must be positive".into()));
    }
    let results: Vec<Result<(Vec<String>, Replicate)>> = (0..cfg.n_sim)
        .into_par_iter()
        .map(|rep| replicate(cfg, params, rep))
        .collect();
    let mut outcome = SbcOutcome {
        parameters: Vec::new(),
        ranks: Vec::new(),
        truths: Vec::new(),
        posterior_means: Vec::new(),
        failed: 0,
    };
    for r in results {
        match r {
            Ok((names, rep)) => {
                if outcome.parameters.is_empty() {
                    outcome.ranks = vec![Vec::new(); names.len()];
                    outcome.truths = vec![Vec::new(); names.len()];
                    outcome.posterior_means = vec![Vec::new(); names.len()];
                    outcome.parameters = names;
                }
                for p in 0..outcome.parameters.len() {
                    outcome.ranks[p].push(rep.ranks[p]);
                    outcome.truths[p].push(rep.truths[p]);
                    outcome.posterior_means[p].push(rep.means[p]);
                }
            }
            Err(_) => outcome.failed += 1,
        }
    }
    Ok(outcome)
}

/// Chi-square goodness-of-fit p-value of ranks in `0..=max_rank` against
/// the discrete uniform, using `bins` equal-width bins.
pub fn rank_uniformity_pvalue(ranks: &[usize], max_rank: usize, bins: usize) -> Result<f64> {
    let levels = max_rank + 1;
    if bins < 2 || levels % bins != 0 {
        return Err(CodaError::InvalidValue(format!(
            "{levels} rank values cannot be split into {bins} equal bins"
        )));
    }
    if ranks.is_empty() {
        return Err(CodaError::TooFewDraws { needed: 1, have: 0 });
    }
    let width = levels / bins;
    let mut counts = vec![0usize; bins];
    for &r in ranks {
        if r > max_rank {
            return Err(CodaError::InvalidValue(format!("rank {r} exceeds {max_rank}")));
        }
        counts[r / width] += 1;
    }
    let expected = ranks.len() as f64 / bins as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let chi = ChiSquared::new((bins - 1) as f64).map_err(|e| CodaError::InvalidValue(e.to_string()))?;
    Ok(1.0 - chi.cdf(stat))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfectly_uniform_ranks_have_p_one() {
        let ranks: Vec<usize> = (0..200).map(|i| i % 100).collect();
        let p = rank_uniformity_pvalue(&ranks, 99, 10).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn piled_up_ranks_are_rejected() {
        let ranks = vec![0usize; 200];
        assert!(rank_uniformity_pvalue(&ranks, 99, 10).unwrap() < 1e-10);
        assert!(rank_uniformity_pvalue(&ranks, 99, 7).is_err());
    }
}
