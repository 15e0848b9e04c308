//! Condition grids, replication farming and study output files.

use std::io::{Read, Write};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{convergence, ESS_THRESHOLD, RHAT_THRESHOLD};
use crate::error::{CodaError, Result};
use crate::ilr::{build_basis, default_sbp, OrthonormalBasis};
use crate::model::{build_design, default_priors, fit, summarize, ModelSpec, SamplerConfig};
use crate::multilevel::between_within_split;
use crate::substitution::{
    estimate_delta, reallocate, reference_from_composition, Level, SubstitutionGrid, WithinMode,
};

use super::dgp::{generate, DgpParams};
use super::metrics::{metrics, MetricsSummary};

/// Factor levels crossed into simulation cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionGrid {
    pub clusters: Vec<usize>,
    pub cluster_sizes: Vec<usize>,
    pub parts: Vec<usize>,
    /// `(σ²_u, σ²_ε)` pairs.
    pub variances: Vec<[f64; 2]>,
}

impl ConditionGrid {
    pub fn validate(&self) -> Result<()> {
        if self.clusters.is_empty()
            || self.cluster_sizes.is_empty()
            || self.parts.is_empty()
            || self.variances.is_empty()
        {
            return Err(CodaError::Config("every grid factor needs at least one level".into()));
        }
        if self.clusters.iter().chain(&self.cluster_sizes).any(|v| *v == 0) {
            return Err(CodaError::Config("cluster counts and sizes must be positive".into()));
        }
        if self.parts.iter().any(|d| !(3..=5).contains(d)) {
            return Err(CodaError::Config("parts must be 3, 4 or 5".into()));
        }
        if self.variances.iter().flatten().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(CodaError::Config("variances must be positive".into()));
        }
        Ok(())
    }

    /// All cells in a fixed order: clusters, then sizes, parts, variances.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &clusters in &self.clusters {
            for &cluster_size in &self.cluster_sizes {
                for &parts in &self.parts {
                    for &[var_u, var_e] in &self.variances {
                        out.push(Cell {
                            index: out.len(),
                            clusters,
                            cluster_size,
                            parts,
                            var_u,
                            var_e,
                        });
                    }
                }
            }
        }
        out
    }
}

/// One combination of factor levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub index: usize,
    pub clusters: usize,
    pub cluster_size: usize,
    pub parts: usize,
    pub var_u: f64,
    pub var_e: f64,
}

/// Study definition, readable from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub seed: u64,
    pub n_sim: usize,
    pub grid: ConditionGrid,
    pub sampler: SamplerConfig,
    pub dgp: DgpParams,
    /// Reallocation amount for the substitution estimands.
    pub substitution_t: f64,
    /// Also drop replications with divergent transitions from the metrics.
    pub exclude_divergent: bool,
}

impl Default for StudyConfig {
    /// Desk scale: one cell (50 clusters of 5, three parts, unit variances),
    /// 200 replications, 2 chains of 500 + 500 iterations.
    fn default() -> Self {
        StudyConfig {
            seed: 1,
            n_sim: 200,
            grid: ConditionGrid {
                clusters: vec![50],
                cluster_sizes: vec![5],
                parts: vec![3],
                variances: vec![[1.0, 1.0]],
            },
            sampler: SamplerConfig {
                chains: 2,
                warmup: 500,
                iter: 500,
                ..SamplerConfig::default()
            },
            dgp: DgpParams::default(),
            substitution_t: 30.0,
            exclude_divergent: false,
        }
    }
}

impl StudyConfig {
    /// Full factorial design: 4 × 4 × 3 × 5 cells, 2000 replications,
    /// 4 chains of 500 + 2500 iterations.
    pub fn paper_scale() -> Self {
        StudyConfig {
            n_sim: 2000,
            grid: ConditionGrid {
                clusters: vec![30, 50, 360, 1200],
                cluster_sizes: vec![3, 5, 7, 14],
                parts: vec![3, 4, 5],
                variances: vec![[1.0, 1.0], [1.5, 0.5], [0.5, 1.5], [1.0, 0.5], [1.0, 1.5]],
            },
            sampler: SamplerConfig {
                chains: 4,
                warmup: 500,
                iter: 2500,
                ..SamplerConfig::default()
            },
            ..StudyConfig::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: StudyConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sim == 0 {
            return Err(CodaError::Config("n_sim must be at least 1".into()));
        }
        if !(self.substitution_t > 0.0) {
            return Err(CodaError::Config("substitution_t must be > 0".into()));
        }
        self.grid.validate()?;
        self.sampler.validate()?;
        self.dgp.validate()?;
        for &d in &self.grid.parts {
            self.dgp.coefficients_for(d)?;
        }
        Ok(())
    }
}

/// Seed of replication `rep` in cell `cell`, reproducible in isolation.
pub fn replication_seed(master: u64, cell: usize, rep: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((cell as u64) << 32) | rep as u64);
    rng.next_u64()
}

/// One estimand of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub parameter: String,
    pub truth: f64,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Outcome of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub cell: usize,
    pub rep: usize,
    pub seed: u64,
    pub error: Option<String>,
    pub max_rhat: Option<f64>,
    pub min_ess_bulk: Option<f64>,
    pub min_ess_tail: Option<f64>,
    pub divergences: usize,
    pub excluded: bool,
    pub estimates: Vec<EstimateRecord>,
}

impl ReplicationRecord {
    pub fn rhat_failed(&self) -> bool {
        self.max_rhat.is_some_and(|r| r >= RHAT_THRESHOLD)
    }

    pub fn low_ess(&self) -> bool {
        [self.min_ess_bulk, self.min_ess_tail]
            .iter()
            .any(|e| e.is_some_and(|v| v < ESS_THRESHOLD))
    }
}

/// Name of a substitution estimand.
pub fn delta_name(level: Level, from: &str, to: &str) -> String {
    format!("delta_{}[{from}->{to}]", level.as_str())
}

struct Estimated {
    max_rhat: Option<f64>,
    min_ess_bulk: Option<f64>,
    min_ess_tail: Option<f64>,
    divergences: usize,
    estimates: Vec<EstimateRecord>,
}

fn estimate_replication(cell: &Cell, cfg: &StudyConfig, seed: u64) -> crate::error::Result<Estimated> {
    let mut params = cfg.dgp.clone();
    params.sigma_u = cell.var_u.sqrt();
    params.sigma_e = cell.var_e.sqrt();
    let sim = generate(&params, cell.clusters, cell.cluster_size, cell.parts, seed)?;
    let sbp = default_sbp(cell.parts)?;
    let basis: OrthonormalBasis<f64> = build_basis(&sbp);
    let coords = between_within_split(&sim.table, &basis)?;
    let spec = ModelSpec::for_table(&sim.table, sbp)?;
    let design = build_design(&coords, &sim.table, &spec)?;
    let priors = default_priors(design.y())?;
    let sampler = SamplerConfig {
        seed,
        ..cfg.sampler
    };
    let draws = fit(&spec, &design, &priors, &sampler)?;
    let report = convergence(&draws)?;

    let mut estimates = Vec::new();
    for (name, truth) in sim.truth.named_values() {
        let idx = draws
            .index_of(&name)
            .ok_or_else(|| CodaError::Sampling(format!("missing parameter {name}")))?;
        let s = summarize(&draws.column(idx))?;
        estimates.push(EstimateRecord {
            parameter: name,
            truth,
            estimate: s.mean,
            ci_low: s.ci_low,
            ci_high: s.ci_high,
        });
    }

    // substitution estimands at the generating mean composition
    let reference = reference_from_composition(params.reference_composition(cell.parts)?, &basis)?;
    let grid = SubstitutionGrid::all_pairs(
        cell.parts,
        vec![cfg.substitution_t],
        vec![Level::Between, Level::Within],
    );
    let result = estimate_delta(&draws, &grid, &reference, &basis, false)?;
    let names = sim.table.part_names();
    for row in &result.rows {
        let realloc = reallocate(&reference, &basis, row.from, row.to, row.t, row.level, WithinMode::Absolute)?;
        let truth: f64 = match row.level {
            Level::Between => realloc
                .z_b
                .sub(&reference.z_b)
                .values()
                .iter()
                .zip(&sim.truth.between)
                .map(|(z, b)| z * b)
                .sum(),
            Level::Within => realloc
                .z_w
                .values()
                .iter()
                .zip(&sim.truth.within)
                .map(|(z, b)| z * b)
                .sum(),
        };
        estimates.push(EstimateRecord {
            parameter: delta_name(row.level, &names[row.from], &names[row.to]),
            truth,
            estimate: row.summary.mean,
            ci_low: row.summary.ci_low,
            ci_high: row.summary.ci_high,
        });
    }
    Ok(Estimated {
        max_rhat: report.max_rhat(),
        min_ess_bulk: report.parameters.iter().filter_map(|p| p.ess_bulk).reduce(f64::min),
        min_ess_tail: report.parameters.iter().filter_map(|p| p.ess_tail).reduce(f64::min),
        divergences: report.divergences,
        estimates,
    })
}

/// Generate → decompose → fit → summarize → substitution for one
/// replication. Failures are recorded in the returned record.
pub fn run_replication(cell: &Cell, cfg: &StudyConfig, rep: usize) -> ReplicationRecord {
    let seed = replication_seed(cfg.seed, cell.index, rep);
    match estimate_replication(cell, cfg, seed) {
        Ok(e) => {
            let mut record = ReplicationRecord {
                cell: cell.index,
                rep,
                seed,
                error: None,
                max_rhat: e.max_rhat,
                min_ess_bulk: e.min_ess_bulk,
                min_ess_tail: e.min_ess_tail,
                divergences: e.divergences,
                excluded: false,
                estimates: e.estimates,
            };
            record.excluded =
                record.rhat_failed() || (cfg.exclude_divergent && record.divergences > 0);
            record
        }
        Err(err) => ReplicationRecord {
            cell: cell.index,
            rep,
            seed,
            error: Some(err.to_string()),
            max_rhat: None,
            min_ess_bulk: None,
            min_ess_tail: None,
            divergences: 0,
            excluded: true,
            estimates: Vec::new(),
        },
    }
}

/// All `cfg.n_sim` replications of one cell, run in parallel on the current
/// rayon pool.
pub fn run_condition(cell: &Cell, cfg: &StudyConfig) -> Vec<ReplicationRecord> {
    (0..cfg.n_sim)
        .into_par_iter()
        .map(|rep| run_replication(cell, cfg, rep))
        .collect()
}

/// Metrics of one cell; `None` with a message when too few replications
/// survived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub cell: Cell,
    pub summary: Option<MetricsSummary>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyOutput {
    pub cells: Vec<Cell>,
    pub records: Vec<ReplicationRecord>,
    pub metrics: Vec<CellMetrics>,
}

impl StudyOutput {
    pub fn excluded_count(&self) -> usize {
        self.records.iter().filter(|r| r.excluded).count()
    }
}

pub fn run_study(cfg: &StudyConfig) -> Result<StudyOutput> {
    cfg.validate()?;
    let cells = cfg.grid.cells();
    let mut records = Vec::new();
    let mut cell_metrics = Vec::new();
    for cell in &cells {
        let recs = run_condition(cell, cfg);
        let (summary, note) = match metrics(&recs) {
            Ok(m) => (Some(m), None),
            Err(e) => (None, Some(e.to_string())),
        };
        cell_metrics.push(CellMetrics {
            cell: *cell,
            summary,
            note,
        });
        records.extend(recs);
    }
    Ok(StudyOutput {
        cells,
        records,
        metrics: cell_metrics,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s == "NA" {
        Ok(None)
    } else {
        parse_f64(s).map(Some)
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| CodaError::Data(format!("not a number: {s:?}")))
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| CodaError::Data(format!("not a count: {s:?}")))
}

const REPLICATION_HEADER: [&str; 14] = [
    "cell",
    "rep",
    "seed",
    "status",
    "excluded",
    "max_rhat",
    "min_ess_bulk",
    "min_ess_tail",
    "divergences",
    "parameter",
    "truth",
    "estimate",
    "ci_low",
    "ci_high",
];

/// Long per-replication CSV, one row per estimand (one row with empty
/// estimand fields for a failed replication).
pub fn write_replications_csv<W: Write>(records: &[ReplicationRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(REPLICATION_HEADER)?;
    for r in records {
        let status = match &r.error {
            None => "ok".to_string(),
            Some(e) => format!("failed: {e}"),
        };
        let head = [
            r.cell.to_string(),
            r.rep.to_string(),
            r.seed.to_string(),
            status,
            r.excluded.to_string(),
            opt(r.max_rhat),
            opt(r.min_ess_bulk),
            opt(r.min_ess_tail),
            r.divergences.to_string(),
        ];
        if r.estimates.is_empty() {
            let mut row = head.to_vec();
            row.extend(std::iter::repeat_n(String::new(), 5));
            w.write_record(&row)?;
        }
        for e in &r.estimates {
            let mut row = head.to_vec();
            row.extend([
                e.parameter.clone(),
                e.truth.to_string(),
                e.estimate.to_string(),
                e.ci_low.to_string(),
                e.ci_high.to_string(),
            ]);
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads the format written by [`write_replications_csv`].
pub fn read_replications_csv<R: Read>(reader: R) -> Result<Vec<ReplicationRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    if rdr.headers()?.iter().collect::<Vec<_>>() != REPLICATION_HEADER {
        return Err(CodaError::Data("unexpected replication CSV header".into()));
    }
    let mut out: Vec<ReplicationRecord> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let cell = parse_usize(&rec[0])?;
        let rep = parse_usize(&rec[1])?;
        let same = out.last().is_some_and(|r| r.cell == cell && r.rep == rep);
        if !same {
            let error = match &rec[3] {
                "ok" => None,
                s => Some(s.strip_prefix("failed: ").unwrap_or(s).to_string()),
            };
            out.push(ReplicationRecord {
                cell,
                rep,
                seed: rec[2]
                    .parse()
                    .map_err(|_| CodaError::Data(format!("bad seed {:?}", &rec[2])))?,
                error,
                excluded: &rec[4] == "true",
                max_rhat: parse_opt(&rec[5])?,
                min_ess_bulk: parse_opt(&rec[6])?,
                min_ess_tail: parse_opt(&rec[7])?,
                divergences: parse_usize(&rec[8])?,
                estimates: Vec::new(),
            });
        }
        if !rec[9].is_empty() {
            let last = out.last_mut().expect("record pushed above");
            last.estimates.push(EstimateRecord {
                parameter: rec[9].to_string(),
                truth: parse_f64(&rec[10])?,
                estimate: parse_f64(&rec[11])?,
                ci_low: parse_f64(&rec[12])?,
                ci_high: parse_f64(&rec[13])?,
            });
        }
    }
    Ok(out)
}

/// Metrics CSV with one row per cell and estimand.
pub fn write_metrics_csv<W: Write>(metrics: &[CellMetrics], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "cell",
        "clusters",
        "cluster_size",
        "parts",
        "var_u",
        "var_e",
        "parameter",
        "n",
        "bias",
        "bias_mcse",
        "coverage",
        "coverage_mcse",
        "be_coverage",
        "be_coverage_mcse",
    ])?;
    for m in metrics {
        let c = &m.cell;
        let Some(summary) = &m.summary else { continue };
        for p in &summary.parameters {
            w.write_record([
                c.index.to_string(),
                c.clusters.to_string(),
                c.cluster_size.to_string(),
                c.parts.to_string(),
                c.var_u.to_string(),
                c.var_e.to_string(),
                p.parameter.clone(),
                p.n.to_string(),
                p.bias.to_string(),
                p.bias_mcse.to_string(),
                p.coverage.to_string(),
                p.coverage_mcse.to_string(),
                p.be_coverage.to_string(),
                p.be_coverage_mcse.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_grid_has_240_cells() {
        assert_eq!(StudyConfig::paper_scale().grid.cells().len(), 240);
        assert_eq!(StudyConfig::default().grid.cells().len(), 1);
    }

    #[test]
    fn seeds_depend_on_cell_and_rep() {
        let a = replication_seed(5, 0, 0);
        assert_eq!(a, replication_seed(5, 0, 0));
        assert_ne!(a, replication_seed(5, 0, 1));
        assert_ne!(a, replication_seed(5, 1, 0));
        assert_ne!(a, replication_seed(6, 0, 0));
    }

    #[test]
    fn toml_overrides_defaults() {
        let cfg = StudyConfig::from_toml(
            "seed = 9\nn_sim = 3\n[grid]\nclusters = [30]\ncluster_sizes = [3]\nparts = [4]\nvariances = [[1.5, 0.5]]\n[sampler]\nchains = 1\nwarmup = 50\niter = 100\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.sampler.chains, 1);
        assert_eq!(cfg.sampler.adapt_delta, 0.8);
        assert_eq!(cfg.substitution_t, 30.0);
        assert!(StudyConfig::from_toml("[grid]\nclusters=[1]\ncluster_sizes=[1]\nparts=[6]\nvariances=[[1.0,1.0]]\n").is_err());
    }
}
