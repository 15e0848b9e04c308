#![allow(dead_code)]

use mlcoda::model::{build_design, default_priors, Design, ModelSpec, PosteriorDraws, PriorSpec, SamplerConfig};
use mlcoda::sim::{generate, DgpParams, Simulated};
use mlcoda::{between_within_split, build_basis, closure, Basis64, Composition64, LongTable64, Sbp};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random composition with log-parts spread `spread` around zero.
pub fn random_composition(rng: &mut ChaCha8Rng, dim: usize, spread: f64, total: f64) -> Composition64 {
    let raw: Vec<f64> = (0..dim)
        .map(|_| (spread * rng.sample::<f64, _>(StandardNormal)).exp())
        .collect();
    closure(&raw, total).unwrap()
}

/// Centred log-ratio, computed directly.
pub fn clr(x: &[f64]) -> Vec<f64> {
    let logs: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let mean = logs.iter().sum::<f64>() / logs.len() as f64;
    logs.iter().map(|l| l - mean).collect()
}

pub fn aitchison_inner(x: &[f64], y: &[f64]) -> f64 {
    clr(x).iter().zip(clr(y)).map(|(a, b)| a * b).sum()
}

/// Unbalanced random table: cluster sizes drawn from `1..=max_size`.
pub fn random_table(rng: &mut ChaCha8Rng, dim: usize, clusters: usize, max_size: usize) -> LongTable64 {
    let mut rows = Vec::new();
    for j in 0..clusters {
        let size = rng.random_range(1..=max_size);
        let centre = random_composition(rng, dim, 1.0, 1.0);
        for _ in 0..size {
            let noise = random_composition(rng, dim, 0.4, 1.0);
            let x = centre.perturb(&noise).unwrap();
            let x = closure(x.parts(), 1440.0).unwrap();
            rows.push((format!("g{j}"), x, Some(rng.sample::<f64, _>(StandardNormal)), vec![]));
        }
    }
    let names = (1..=dim).map(|d| format!("p{d}")).collect();
    LongTable64::from_rows(names, Some("y".into()), vec![], 1440.0, rows).unwrap()
}

pub struct Fitted {
    pub sim: Simulated,
    pub basis: Basis64,
    pub design: Design,
    pub spec: ModelSpec,
    pub priors: PriorSpec,
    pub draws: PosteriorDraws,
}

pub fn quick_sampler(seed: u64) -> SamplerConfig {
    SamplerConfig {
        chains: 2,
        warmup: 300,
        iter: 300,
        seed,
        ..SamplerConfig::default()
    }
}

/// Simulates a data set and fits it in the given partition.
pub fn fit_simulated(parts: usize, clusters: usize, size: usize, sbp: Sbp, sampler: &SamplerConfig) -> Fitted {
    let sim = generate(&DgpParams::default(), clusters, size, parts, 11).unwrap();
    let basis: Basis64 = build_basis(&sbp);
    let coords = between_within_split(&sim.table, &basis).unwrap();
    let spec = ModelSpec::for_table(&sim.table, sbp).unwrap();
    let design = build_design(&coords, &sim.table, &spec).unwrap();
    let priors = default_priors(design.y()).unwrap();
    let draws = mlcoda::model::fit(&spec, &design, &priors, sampler).unwrap();
    Fitted {
        sim,
        basis,
        design,
        spec,
        priors,
        draws,
    }
}
