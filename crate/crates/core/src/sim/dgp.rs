//! Data generation for the simulation study.
//!
//! Between and within ilr coordinates of a five-part composition are drawn
//! from multivariate normals, mapped back to the simplex, optionally collapsed
//! to fewer parts, and re-decomposed in the pivot basis of the final parts.
//! The outcome is generated from those coordinates.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::aitchison::Composition;
use crate::error::{CodaError, Result};
use crate::ilr::{build_basis, default_sbp, IlrCoords, OrthonormalBasis};
use crate::multilevel::{between_within_split, LongTable};

/// Parts of the generating composition.
pub const GENERATING_PARTS: usize = 5;

const DEFAULT_DGP: &str = include_str!("../../assets/default_dgp.toml");

/// Slopes used when the data have `parts` parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub parts: usize,
    pub between: Vec<f64>,
    pub within: Vec<f64>,
}

/// Generating values. Means and covariances live in the pivot ilr basis of
/// the five generating parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpParams {
    pub total: f64,
    pub part_names: Vec<String>,
    pub mu_between: Vec<f64>,
    pub sigma_between: Vec<Vec<f64>>,
    pub mu_within: Vec<f64>,
    pub sigma_within: Vec<Vec<f64>>,
    pub intercept: f64,
    pub sigma_u: f64,
    pub sigma_e: f64,
    pub coefficients: Vec<CoefficientSet>,
}

impl Default for DgpParams {
    fn default() -> Self {
        toml::from_str(DEFAULT_DGP).expect("bundled generating values parse")
    }
}

impl DgpParams {
    pub fn from_toml(text: &str) -> Result<Self> {
        let p: DgpParams = toml::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let k = GENERATING_PARTS - 1;
        if self.part_names.len() != GENERATING_PARTS {
            return Err(CodaError::Config(format!(
                "need {GENERATING_PARTS} part names, got {}",
                self.part_names.len()
            )));
        }
        for (name, v) in [("mu_between", &self.mu_between), ("mu_within", &self.mu_within)] {
            if v.len() != k {
                return Err(CodaError::Config(format!("{name} needs {k} values")));
            }
        }
        cholesky(&self.sigma_between, "sigma_between")?;
        cholesky(&self.sigma_within, "sigma_within")?;
        if !(self.total > 0.0) {
            return Err(CodaError::Config("total must be > 0".into()));
        }
        if !(self.sigma_u >= 0.0 && self.sigma_e >= 0.0) {
            return Err(CodaError::Config("standard deviations must be >= 0".into()));
        }
        for c in &self.coefficients {
            if c.between.len() + 1 != c.parts || c.within.len() + 1 != c.parts {
                return Err(CodaError::Config(format!(
                    "coefficients for {} parts need {} between and within values",
                    c.parts,
                    c.parts - 1
                )));
            }
        }
        Ok(())
    }

    pub fn coefficients_for(&self, parts: usize) -> Result<&CoefficientSet> {
        self.coefficients
            .iter()
            .find(|c| c.parts == parts)
            .ok_or_else(|| CodaError::Config(format!("no coefficients for {parts} parts")))
    }

    /// Mean between composition, collapsed to `parts` parts.
    pub fn reference_composition(&self, parts: usize) -> Result<Composition<f64>> {
        let basis: OrthonormalBasis<f64> = build_basis(&default_sbp(GENERATING_PARTS)?);
        let x = basis.ilr_inverse(&IlrCoords::new(self.mu_between.clone())?, self.total)?;
        let mapping = PartMapping::standard(parts, &self.part_names)?;
        mapping.apply(&x)
    }
}

fn cholesky(m: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let k = GENERATING_PARTS - 1;
    if m.len() != k || m.iter().any(|r| r.len() != k) {
        return Err(CodaError::Config(format!("{name} must be {k}×{k}")));
    }
    for i in 0..k {
        for j in 0..i {
            if m[i][j] != m[j][i] {
                return Err(CodaError::Config(format!("{name} is not symmetric")));
            }
        }
    }
    let dm = DMatrix::from_fn(k, k, |i, j| m[i][j]);
    dm.cholesky()
        .map(|c| c.l())
        .ok_or_else(|| CodaError::Config(format!("{name} is not positive definite")))
}

/// Grouping of parts into fewer parts by summation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartMapping {
    pub groups: Vec<Vec<usize>>,
    pub names: Vec<String>,
}

impl PartMapping {
    /// Validates that `groups` partition `0..dim`.
    pub fn new(groups: Vec<Vec<usize>>, names: Vec<String>, dim: usize) -> Result<Self> {
        if groups.len() != names.len() {
            return Err(CodaError::Config("one name per group required".into()));
        }
        let mut seen = vec![false; dim];
        for &p in groups.iter().flatten() {
            if p >= dim || seen[p] {
                return Err(CodaError::Config(format!(
                    "mapping is not a partition of {dim} parts"
                )));
            }
            seen[p] = true;
        }
        if seen.iter().any(|s| !s) || groups.iter().any(Vec::is_empty) {
            return Err(CodaError::Config(format!(
                "mapping is not a partition of {dim} parts"
            )));
        }
        Ok(PartMapping { groups, names })
    }

    /// Five generating parts kept (5), with the first two merged (4), or
    /// additionally with the third and fourth merged (3).
    pub fn standard(parts: usize, names: &[String]) -> Result<Self> {
        let groups: Vec<Vec<usize>> = match parts {
            5 => vec![vec![0], vec![1], vec![2], vec![3], vec![4]],
            4 => vec![vec![0, 1], vec![2], vec![3], vec![4]],
            3 => vec![vec![0, 1], vec![2, 3], vec![4]],
            _ => {
                return Err(CodaError::Config(format!(
                    "number of parts must be 3, 4 or 5, got {parts}"
                )))
            }
        };
        let group_names = groups
            .iter()
            .map(|g| g.iter().map(|&i| names[i].as_str()).collect::<Vec<_>>().join("+"))
            .collect();
        PartMapping::new(groups, group_names, GENERATING_PARTS)
    }

    pub fn apply(&self, x: &Composition<f64>) -> Result<Composition<f64>> {
        let parts = x.parts();
        let summed = self
            .groups
            .iter()
            .map(|g| g.iter().map(|&i| parts[i]).sum())
            .collect();
        Composition::new(summed, x.total())
    }
}

/// Sums grouped parts of every row. The total is unchanged.
pub fn collapse(table: &LongTable<f64>, mapping: &PartMapping) -> Result<LongTable<f64>> {
    let mapping = PartMapping::new(mapping.groups.clone(), mapping.names.clone(), table.dim())?;
    let rows = table
        .rows()
        .iter()
        .map(|r| {
            Ok((
                table.cluster_ids()[r.cluster].clone(),
                mapping.apply(&r.composition)?,
                r.outcome,
                r.covariates.clone(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    LongTable::from_rows(
        mapping.names,
        table.outcome_name().map(str::to_string),
        table.covariate_names().to_vec(),
        table.total(),
        rows,
    )
}

/// True parameter values of one generated data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub intercept: f64,
    pub between: Vec<f64>,
    pub within: Vec<f64>,
    pub sigma_u: f64,
    pub sigma_e: f64,
    pub cluster_effects: Vec<f64>,
}

impl GroundTruth {
    /// Values keyed by the posterior parameter names.
    pub fn named_values(&self) -> Vec<(String, f64)> {
        let mut out = vec![("intercept".to_string(), self.intercept)];
        out.extend(self.between.iter().enumerate().map(|(i, v)| (format!("bilr{}", i + 1), *v)));
        out.extend(self.within.iter().enumerate().map(|(i, v)| (format!("wilr{}", i + 1), *v)));
        out.push(("sd_cluster".into(), self.sigma_u));
        out.push(("sigma".into(), self.sigma_e));
        out
    }
}

/// A generated data set with its generating values.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    pub table: LongTable<f64>,
    pub truth: GroundTruth,
    /// Drawn five-part between coordinates, one per cluster.
    pub latent_between: Vec<Vec<f64>>,
    /// Drawn five-part within coordinates, one per row.
    pub latent_within: Vec<Vec<f64>>,
}

fn mvn(rng: &mut ChaCha8Rng, mu: &[f64], l: &DMatrix<f64>) -> Vec<f64> {
    let e = DVector::from_fn(mu.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let v = l * e;
    mu.iter().zip(v.iter()).map(|(m, x)| m + x).collect()
}

/// Random stream for data generation from a replication seed, kept apart
/// from the sampler's per-chain streams.
pub fn data_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 << 63);
    rng
}

/// Generates `clusters × cluster_size` rows with `parts` parts and outcome
/// `y`. Slopes come from `params.coefficients_for(parts)`.
pub fn generate(
    params: &DgpParams,
    clusters: usize,
    cluster_size: usize,
    parts: usize,
    seed: u64,
) -> Result<Simulated> {
    let coefs = params.coefficients_for(parts)?.clone();
    generate_with(params, &coefs.between, &coefs.within, params.intercept, clusters, cluster_size, parts, &mut data_rng(seed))
}

/// As [`generate`] with explicit population values and random stream.
#[allow(clippy::too_many_arguments)]
pub fn generate_with(
    params: &DgpParams,
    between: &[f64],
    within: &[f64],
    intercept: f64,
    clusters: usize,
    cluster_size: usize,
    parts: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Simulated> {
    params.validate()?;
    if clusters == 0 || cluster_size == 0 {
        return Err(CodaError::Config("clusters and cluster size must be >= 1".into()));
    }
    if between.len() + 1 != parts || within.len() + 1 != parts {
        return Err(CodaError::DimensionMismatch {
            expected: parts - 1,
            found: between.len(),
        });
    }
    let lb = cholesky(&params.sigma_between, "sigma_between")?;
    let lw = cholesky(&params.sigma_within, "sigma_within")?;
    let gen_basis: OrthonormalBasis<f64> = build_basis(&default_sbp(GENERATING_PARTS)?);
    let mapping = PartMapping::standard(parts, &params.part_names)?;

    let mut latent_between = Vec::with_capacity(clusters);
    let mut latent_within = Vec::with_capacity(clusters * cluster_size);
    let mut cluster_effects = Vec::with_capacity(clusters);
    let mut rows = Vec::with_capacity(clusters * cluster_size);
    let width = clusters.to_string().len();
    for j in 0..clusters {
        let zb = mvn(rng, &params.mu_between, &lb);
        let n: f64 = rng.sample(StandardNormal);
        cluster_effects.push(params.sigma_u * n);
        let id = format!("c{:0width$}", j + 1);
        for _ in 0..cluster_size {
            let zw = mvn(rng, &params.mu_within, &lw);
            let z: Vec<f64> = zb.iter().zip(&zw).map(|(a, b)| a + b).collect();
            let x = gen_basis.ilr_inverse(&IlrCoords::new(z)?, params.total)?;
            rows.push((id.clone(), mapping.apply(&x)?, None, Vec::new()));
            latent_within.push(zw);
        }
        latent_between.push(zb);
    }
    let table = LongTable::from_rows(mapping.names.clone(), None, Vec::new(), params.total, rows)?;

    let basis: OrthonormalBasis<f64> = build_basis(&default_sbp(parts)?);
    let coords = between_within_split(&table, &basis)?;
    let mut out_rows = Vec::with_capacity(table.len());
    for (i, row) in table.rows().iter().enumerate() {
        let mut y = intercept;
        for (b, z) in between.iter().zip(coords.between_of_row(i).values()) {
            y += b * z;
        }
        for (b, z) in within.iter().zip(coords.within[i].values()) {
            y += b * z;
        }
        y += cluster_effects[row.cluster];
        let n: f64 = rng.sample(StandardNormal);
        y += params.sigma_e * n;
        out_rows.push((
            table.cluster_ids()[row.cluster].clone(),
            row.composition.clone(),
            Some(y),
            Vec::new(),
        ));
    }
    let table = LongTable::from_rows(
        mapping.names,
        Some("y".into()),
        Vec::new(),
        params.total,
        out_rows,
    )?;
    Ok(Simulated {
        table,
        truth: GroundTruth {
            intercept,
            between: between.to_vec(),
            within: within.to_vec(),
            sigma_u: params.sigma_u,
            sigma_e: params.sigma_e,
            cluster_effects,
        },
        latent_between,
        latent_within,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_values_are_valid() {
        let p = DgpParams::default();
        p.validate().unwrap();
        for d in 3..=5 {
            assert_eq!(p.coefficients_for(d).unwrap().between.len(), d - 1);
        }
        let r = p.reference_composition(3).unwrap();
        let expected = [480.0, 340.0, 620.0];
        for (a, b) in r.parts().iter().zip(expected) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn standard_mappings() {
        let names: Vec<String> = ["a", "b", "c", "d", "e"].iter().map(|s| s.to_string()).collect();
        let x = Composition::new(vec![420.0, 60.0, 40.0, 300.0, 620.0], 1440.0).unwrap();
        let m4 = PartMapping::standard(4, &names).unwrap();
        assert_eq!(m4.apply(&x).unwrap().parts(), [480.0, 40.0, 300.0, 620.0]);
        assert_eq!(m4.names[0], "a+b");
        let m3 = PartMapping::standard(3, &names).unwrap();
        assert_eq!(m3.apply(&x).unwrap().parts(), [480.0, 340.0, 620.0]);
        assert!(PartMapping::standard(6, &names).is_err());
        assert!(PartMapping::new(vec![vec![0, 1], vec![1, 2]], vec!["x".into(), "y".into()], 3).is_err());
        assert!(PartMapping::new(vec![vec![0]], vec!["x".into()], 2).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let p = DgpParams::default();
        let a = generate(&p, 4, 3, 3, 11).unwrap();
        let b = generate(&p, 4, 3, 3, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.table, generate(&p, 4, 3, 3, 12).unwrap().table);
        assert_eq!(a.table.len(), 12);
        assert_eq!(a.table.n_clusters(), 4);
    }

    #[test]
    fn non_pd_covariance_is_rejected() {
        let mut p = DgpParams::default();
        p.sigma_within[0][0] = -1.0;
        assert!(generate(&p, 2, 2, 3, 1).is_err());
    }
}
