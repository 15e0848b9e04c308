//! Substitution analysis: posterior differences in the expected outcome when
//! `t` units move from one part to another at a reference composition.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aitchison::{closure, geometric_mean_composition, Composition};
use crate::error::{CodaError, Result};
use crate::ilr::{IlrCoords, OrthonormalBasis};
use crate::model::{predict_expectation, summarize, PosteriorDraws, PosteriorSummary};
use crate::multilevel::{between_within_split, LongTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    SampleMean,
    UserSupplied,
}

/// Reference composition and its between coordinates. Within coordinates at
/// the reference are zero by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceComposition {
    pub composition: Composition<f64>,
    pub z_b: IlrCoords<f64>,
    pub provenance: Provenance,
}

impl ReferenceComposition {
    pub fn z_w(&self) -> IlrCoords<f64> {
        IlrCoords::zeros(self.z_b.len())
    }
}

/// Compositional mean of the cluster-level compositions.
pub fn reference_from_table(
    table: &LongTable<f64>,
    basis: &OrthonormalBasis<f64>,
) -> Result<ReferenceComposition> {
    let coords = between_within_split(table, basis)?;
    let composition = geometric_mean_composition(&coords.between_compositions)?;
    Ok(ReferenceComposition {
        z_b: basis.ilr(&composition)?,
        composition,
        provenance: Provenance::SampleMean,
    })
}

/// A user-chosen reference, taken as given.
pub fn reference_from_composition(
    composition: Composition<f64>,
    basis: &OrthonormalBasis<f64>,
) -> Result<ReferenceComposition> {
    Ok(ReferenceComposition {
        z_b: basis.ilr(&composition)?,
        composition,
        provenance: Provenance::UserSupplied,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Between,
    Within,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Between => "between",
            Level::Within => "within",
        }
    }
}

/// How a within-level reallocation is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WithinMode {
    /// `±t` on the part scale, attributed to the within coordinates.
    #[default]
    Absolute,
    /// Within deviate `(1, .., 1 − t, .., 1 + t, ..)` closed; `0 ≤ t < 1`.
    Multiplicative,
}

/// A reallocated composition and the coordinates fed to the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Reallocation {
    pub composition: Composition<f64>,
    pub z_b: IlrCoords<f64>,
    pub z_w: IlrCoords<f64>,
}

fn check_pair(dim: usize, from: usize, to: usize) -> Result<()> {
    if from >= dim || to >= dim {
        return Err(CodaError::Reallocation(format!(
            "part index out of range for {dim} parts: {from} -> {to}"
        )));
    }
    if from == to {
        return Err(CodaError::Reallocation(format!(
            "cannot reallocate part {from} to itself"
        )));
    }
    Ok(())
}

/// Moves `t` from part `from` to part `to` at the reference.
pub fn reallocate(
    reference: &ReferenceComposition,
    basis: &OrthonormalBasis<f64>,
    from: usize,
    to: usize,
    t: f64,
    level: Level,
    within_mode: WithinMode,
) -> Result<Reallocation> {
    let x0 = &reference.composition;
    check_pair(x0.dim(), from, to)?;
    if !t.is_finite() || t < 0.0 {
        return Err(CodaError::Reallocation(format!("t must be >= 0, got {t}")));
    }
    let parts = x0.parts();
    let multiplicative = level == Level::Within && within_mode == WithinMode::Multiplicative;
    let composition = if multiplicative {
        if t >= 1.0 {
            return Err(CodaError::Reallocation(format!(
                "multiplicative within reallocation needs t < 1, got {t}"
            )));
        }
        if t == 0.0 {
            x0.clone()
        } else {
            let mut raw = parts.to_vec();
            raw[from] *= 1.0 - t;
            raw[to] *= 1.0 + t;
            closure(&raw, x0.total())?
        }
    } else {
        let limit = parts[from].min(x0.total() - parts[to]);
        if t > 0.0 && t >= limit {
            return Err(CodaError::Reallocation(format!(
                "t = {t} must be below {limit} for parts {from} -> {to}"
            )));
        }
        let mut raw = parts.to_vec();
        raw[from] -= t;
        raw[to] += t;
        Composition::new(raw, x0.total())?
    };
    let z_new = basis.ilr(&composition)?;
    let (z_b, z_w) = match level {
        Level::Between => (z_new.clone(), IlrCoords::zeros(z_new.len())),
        Level::Within => (reference.z_b.clone(), z_new.sub(&reference.z_b)),
    };
    Ok(Reallocation {
        composition,
        z_b,
        z_w,
    })
}

/// Ordered part pairs, reallocation amounts and levels to evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstitutionGrid {
    pub pairs: Vec<(usize, usize)>,
    pub t_values: Vec<f64>,
    pub levels: Vec<Level>,
    #[serde(default)]
    pub within_mode: WithinMode,
}

impl SubstitutionGrid {
    /// Every ordered pair of distinct parts.
    pub fn all_pairs(dim: usize, t_values: Vec<f64>, levels: Vec<Level>) -> Self {
        let pairs = (0..dim)
            .flat_map(|a| (0..dim).filter(move |&b| b != a).map(move |b| (a, b)))
            .collect();
        SubstitutionGrid {
            pairs,
            t_values,
            levels,
            within_mode: WithinMode::Absolute,
        }
    }

    /// `t = 1, 2, .., 30` at both levels.
    pub fn default_for(dim: usize) -> Self {
        Self::all_pairs(
            dim,
            (1..=30).map(f64::from).collect(),
            vec![Level::Between, Level::Within],
        )
    }

    /// Cells in output order: level, then pair, then `t`.
    pub fn cells(&self) -> Vec<(Level, usize, usize, f64)> {
        let mut out = Vec::new();
        for &level in &self.levels {
            for &(a, b) in &self.pairs {
                for &t in &self.t_values {
                    out.push((level, a, b, t));
                }
            }
        }
        out
    }
}

/// Summary of one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SubstitutionRow {
    pub level: Level,
    pub from: usize,
    pub to: usize,
    pub t: f64,
    pub summary: PosteriorSummary,
    pub deltas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubstitutionResult {
    pub rows: Vec<SubstitutionRow>,
}

fn check_compatible(draws: &PosteriorDraws, basis: &OrthonormalBasis<f64>, reference: &ReferenceComposition) -> Result<()> {
    if draws.n_coords() != basis.n_coords() {
        return Err(CodaError::DimensionMismatch {
            expected: draws.n_coords() + 1,
            found: basis.dim(),
        });
    }
    if reference.composition.dim() != basis.dim() {
        return Err(CodaError::DimensionMismatch {
            expected: basis.dim(),
            found: reference.composition.dim(),
        });
    }
    Ok(())
}

/// Per-draw `Δ` as the difference of two population-level predictions.
pub fn delta_draws(
    draws: &PosteriorDraws,
    reference: &ReferenceComposition,
    realloc: &Reallocation,
) -> Result<Vec<f64>> {
    let covs = vec![0.0; draws.covariates().len()];
    let base = predict_expectation(
        draws,
        reference.z_b.values(),
        reference.z_w().values(),
        &covs,
    )?;
    let new = predict_expectation(draws, realloc.z_b.values(), realloc.z_w.values(), &covs)?;
    Ok(new.iter().zip(&base).map(|(a, b)| a - b).collect())
}

/// Per-draw `Δ` from the slopes directly: `β_b·(z_b' − z_b)` at the between
/// level, `β_w·z_w'` at the within level.
pub fn delta_draws_formula(
    draws: &PosteriorDraws,
    reference: &ReferenceComposition,
    realloc: &Reallocation,
    level: Level,
) -> Result<Vec<f64>> {
    let k = draws.n_coords();
    if realloc.z_b.len() != k || reference.z_b.len() != k {
        return Err(CodaError::DimensionMismatch {
            expected: k,
            found: realloc.z_b.len(),
        });
    }
    let (range, dz): (_, Vec<f64>) = match level {
        Level::Between => (
            draws.between_range(),
            realloc.z_b.sub(&reference.z_b).into_values(),
        ),
        Level::Within => (draws.within_range(), realloc.z_w.values().to_vec()),
    };
    Ok((0..draws.n_draws())
        .map(|d| {
            draws.draw(d)[range.clone()]
                .iter()
                .zip(&dz)
                .map(|(b, z)| b * z)
                .sum()
        })
        .collect())
}

/// Summarizes `Δ` for every grid cell. Draws must come from a model fitted
/// in `basis`.
pub fn estimate_delta(
    draws: &PosteriorDraws,
    grid: &SubstitutionGrid,
    reference: &ReferenceComposition,
    basis: &OrthonormalBasis<f64>,
    keep_draws: bool,
) -> Result<SubstitutionResult> {
    check_compatible(draws, basis, reference)?;
    let rows = grid
        .cells()
        .into_par_iter()
        .map(|(level, from, to, t)| {
            let realloc = reallocate(reference, basis, from, to, t, level, grid.within_mode)?;
            let deltas = delta_draws(draws, reference, &realloc)?;
            Ok(SubstitutionRow {
                level,
                from,
                to,
                t,
                summary: summarize(&deltas)?,
                deltas: keep_draws.then_some(deltas),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SubstitutionResult { rows })
}

impl SubstitutionResult {
    /// Plot-ready CSV: `level,from_part,to_part,t,mean,ci_low,ci_high,significant`.
    pub fn write_csv<W: Write>(&self, writer: W, part_names: &[String]) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "level",
            "from_part",
            "to_part",
            "t",
            "mean",
            "ci_low",
            "ci_high",
            "significant",
        ])?;
        for r in &self.rows {
            let name = |i: usize| part_names.get(i).cloned().unwrap_or_else(|| format!("part{}", i + 1));
            w.write_record([
                r.level.as_str().to_string(),
                name(r.from),
                name(r.to),
                r.t.to_string(),
                r.summary.mean.to_string(),
                r.summary.ci_low.to_string(),
                r.summary.ci_high.to_string(),
                r.summary.significant.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
