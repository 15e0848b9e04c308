//! Clustered long-format data and the between/within decomposition.
//!
//! Each cluster's between composition is the closed per-part geometric mean
//! of its rows; each row's within composition is the closed ratio of the row
//! to that mean. Because ilr maps the geometric mean to the arithmetic mean of
//! coordinates, the total coordinates split additively:
//! `z_ij = z_b_j + z_w_ij`.

use std::collections::HashMap;
use std::io::Read;

use serde::Serialize;

use crate::aitchison::{closure, geometric_mean_composition, Composition};
use crate::error::{CodaError, Result};
use crate::ilr::{IlrCoords, OrthonormalBasis};
use crate::scalar::Scalar;

/// Relative deviation from the total up to which a row is silently re-closed
/// (with a warning) instead of rejected.
pub const RECLOSE_TOLERANCE: f64 = 0.005;

/// One observation: a composition measured on one occasion in one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation<T: Scalar> {
    /// Internal cluster index, `0..J`.
    pub cluster: usize,
    /// Position of the row within its cluster, starting at 1.
    pub occasion: usize,
    pub composition: Composition<T>,
    pub outcome: Option<T>,
    pub covariates: Vec<T>,
}

/// Clustered observations with their metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct LongTable<T: Scalar> {
    rows: Vec<Observation<T>>,
    cluster_ids: Vec<String>,
    part_names: Vec<String>,
    outcome_name: Option<String>,
    covariate_names: Vec<String>,
    total: T,
}

impl<T: Scalar> LongTable<T> {
    /// Assembles a table from cluster labels and observations. Cluster
    /// indices are assigned in order of first appearance.
    pub fn from_rows(
        part_names: Vec<String>,
        outcome_name: Option<String>,
        covariate_names: Vec<String>,
        total: T,
        rows: Vec<(String, Composition<T>, Option<T>, Vec<T>)>,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(CodaError::Data("table has no rows".into()));
        }
        let dim = part_names.len();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut cluster_ids = Vec::new();
        let mut sizes: Vec<usize> = Vec::new();
        let mut out = Vec::with_capacity(rows.len());
        for (id, composition, outcome, covariates) in rows {
            if composition.dim() != dim {
                return Err(CodaError::DimensionMismatch {
                    expected: dim,
                    found: composition.dim(),
                });
            }
            if covariates.len() != covariate_names.len() {
                return Err(CodaError::DimensionMismatch {
                    expected: covariate_names.len(),
                    found: covariates.len(),
                });
            }
            if outcome.is_some() != outcome_name.is_some() {
                return Err(CodaError::Data(
                    "outcome values must be present exactly when an outcome is named".into(),
                ));
            }
            let cluster = *index.entry(id.clone()).or_insert_with(|| {
                cluster_ids.push(id);
                sizes.push(0);
                sizes.len() - 1
            });
            sizes[cluster] += 1;
            out.push(Observation {
                cluster,
                occasion: sizes[cluster],
                composition,
                outcome,
                covariates,
            });
        }
        Ok(LongTable {
            rows: out,
            cluster_ids,
            part_names,
            outcome_name,
            covariate_names,
            total,
        })
    }

    pub fn rows(&self) -> &[Observation<T>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_clusters(&self) -> usize {
        self.cluster_ids.len()
    }

    pub fn cluster_ids(&self) -> &[String] {
        &self.cluster_ids
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_clusters()];
        for row in &self.rows {
            sizes[row.cluster] += 1;
        }
        sizes
    }

    pub fn part_names(&self) -> &[String] {
        &self.part_names
    }

    pub fn dim(&self) -> usize {
        self.part_names.len()
    }

    pub fn outcome_name(&self) -> Option<&str> {
        self.outcome_name.as_deref()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn total(&self) -> T {
        self.total
    }

    /// Outcome column; errors if the table was built without one.
    pub fn outcomes(&self) -> Result<Vec<T>> {
        self.rows
            .iter()
            .map(|r| {
                r.outcome
                    .ok_or_else(|| CodaError::Data("table has no outcome column".into()))
            })
            .collect()
    }

    /// Row indices grouped by cluster.
    pub fn cluster_members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.n_clusters()];
        for (i, row) in self.rows.iter().enumerate() {
            members[row.cluster].push(i);
        }
        members
    }
}

/// Column selection for [`ingest`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Schema {
    pub id: String,
    pub parts: Vec<String>,
    pub outcome: Option<String>,
    pub covariates: Vec<String>,
}

/// Why a row was dropped at ingest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    ZeroPart,
    MissingPart,
    MissingOutcome,
    MissingCovariate,
    MissingId,
    SumMismatch,
}

impl DropReason {
    fn label(self) -> &'static str {
        match self {
            DropReason::ZeroPart => "zero part",
            DropReason::MissingPart => "missing part",
            DropReason::MissingOutcome => "missing outcome",
            DropReason::MissingCovariate => "missing covariate",
            DropReason::MissingId => "missing id",
            DropReason::SumMismatch => "parts do not sum to total",
        }
    }
}

/// Row-level screening outcome of [`ingest`].
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_kept: usize,
    /// `(1-based data row, reason)` for every dropped row.
    pub dropped: Vec<(usize, DropReason)>,
    /// `(1-based data row, relative deviation)` for every re-closed row.
    pub reclosed: Vec<(usize, f64)>,
}

impl IngestReport {
    pub fn dropped_count(&self, reason: DropReason) -> usize {
        self.dropped.iter().filter(|(_, r)| *r == reason).count()
    }

    /// Human-readable summary lines, e.g. `1 row dropped (zero part)`.
    pub fn summary_lines(&self) -> Vec<String> {
        let mut lines = Vec::new();
        for reason in [
            DropReason::ZeroPart,
            DropReason::MissingPart,
            DropReason::MissingOutcome,
            DropReason::MissingCovariate,
            DropReason::MissingId,
            DropReason::SumMismatch,
        ] {
            let n = self.dropped_count(reason);
            if n > 0 {
                let noun = if n == 1 { "row" } else { "rows" };
                lines.push(format!("{n} {noun} dropped ({})", reason.label()));
            }
        }
        if !self.reclosed.is_empty() {
            let n = self.reclosed.len();
            let noun = if n == 1 { "row" } else { "rows" };
            lines.push(format!(
                "warning: {n} {noun} re-closed to the total (deviation <= {:.1}%)",
                RECLOSE_TOLERANCE * 100.0
            ));
        }
        lines
    }
}

fn parse_cell(cell: Option<&str>) -> Option<f64> {
    let s = cell?.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| CodaError::Data(format!("unknown column '{name}'")))
}

/// Reads a CSV with a header row and screens it into a [`LongTable`].
///
/// Rows with a zero or missing part, a missing outcome or a missing
/// covariate are dropped and counted. Rows whose parts sum to within
/// [`RECLOSE_TOLERANCE`] of `total` are re-closed with a warning; larger
/// deviations are rejected.
pub fn ingest<T: Scalar, R: Read>(
    reader: R,
    schema: &Schema,
    total: T,
) -> Result<(LongTable<T>, IngestReport)> {
    if schema.parts.len() < 2 {
        return Err(CodaError::Data(format!(
            "need at least 2 part columns, got {}",
            schema.parts.len()
        )));
    }
    if !(total.is_finite() && total > T::zero()) {
        return Err(CodaError::InvalidValue(format!("total must be > 0, got {total}")));
    }
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = csv.headers()?.clone();
    let id_col = column_index(&headers, &schema.id)?;
    let part_cols = schema
        .parts
        .iter()
        .map(|p| column_index(&headers, p))
        .collect::<Result<Vec<_>>>()?;
    let outcome_col = schema
        .outcome
        .as_deref()
        .map(|o| column_index(&headers, o))
        .transpose()?;
    let cov_cols = schema
        .covariates
        .iter()
        .map(|c| column_index(&headers, c))
        .collect::<Result<Vec<_>>>()?;

    let mut report = IngestReport::default();
    let mut kept = Vec::new();
    let total_f = total.to_f64_lossy();
    for (i, record) in csv.records().enumerate() {
        let record = record?;
        let row_no = i + 1;
        report.rows_read += 1;

        let id = record.get(id_col).map(str::trim).unwrap_or("");
        if id.is_empty() {
            report.dropped.push((row_no, DropReason::MissingId));
            continue;
        }
        let raw: Vec<Option<f64>> = part_cols.iter().map(|&c| parse_cell(record.get(c))).collect();
        if raw.iter().any(Option::is_none) {
            report.dropped.push((row_no, DropReason::MissingPart));
            continue;
        }
        let raw: Vec<f64> = raw.into_iter().flatten().collect();
        if raw.iter().any(|&v| v <= 0.0) {
            report.dropped.push((row_no, DropReason::ZeroPart));
            continue;
        }
        let outcome = match outcome_col {
            Some(c) => match parse_cell(record.get(c)) {
                Some(v) => Some(T::lit(v)),
                None => {
                    report.dropped.push((row_no, DropReason::MissingOutcome));
                    continue;
                }
            },
            None => None,
        };
        let covs: Vec<Option<f64>> = cov_cols.iter().map(|&c| parse_cell(record.get(c))).collect();
        if covs.iter().any(Option::is_none) {
            report.dropped.push((row_no, DropReason::MissingCovariate));
            continue;
        }
        let covariates: Vec<T> = covs.into_iter().flatten().map(T::lit).collect();

        let sum: f64 = raw.iter().sum();
        let deviation = (sum - total_f).abs() / total_f;
        if deviation > RECLOSE_TOLERANCE {
            report.dropped.push((row_no, DropReason::SumMismatch));
            continue;
        }
        let parts: Vec<T> = raw.iter().map(|&v| T::lit(v)).collect();
        // parts already on the simplex are kept verbatim, so re-ingesting
        // written output gives identical coordinates
        let composition = if deviation > T::sum_tolerance().to_f64_lossy() {
            report.reclosed.push((row_no, deviation));
            closure(&parts, total)?
        } else {
            Composition::new(parts, total)?
        };
        kept.push((id.to_string(), composition, outcome, covariates));
    }
    report.rows_kept = kept.len();
    if kept.is_empty() {
        return Err(CodaError::Data(format!(
            "no rows left after screening ({} read)",
            report.rows_read
        )));
    }
    let table = LongTable::from_rows(
        schema.parts.clone(),
        schema.outcome.clone(),
        schema.covariates.clone(),
        total,
        kept,
    )?;
    Ok((table, report))
}

/// Total, between and within ilr coordinates of a [`LongTable`].
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedCoords<T: Scalar> {
    /// `z_ij` per row.
    pub total: Vec<IlrCoords<T>>,
    /// `z_b_j` per cluster.
    pub between: Vec<IlrCoords<T>>,
    /// `z_w_ij` per row.
    pub within: Vec<IlrCoords<T>>,
    /// `x_b_j` per cluster.
    pub between_compositions: Vec<Composition<T>>,
    /// `x_w_ij` per row.
    pub within_compositions: Vec<Composition<T>>,
    /// Cluster index of each row.
    pub cluster_of_row: Vec<usize>,
}

impl<T: Scalar> DecomposedCoords<T> {
    /// `z_b` of the cluster that row `i` belongs to.
    pub fn between_of_row(&self, i: usize) -> &IlrCoords<T> {
        &self.between[self.cluster_of_row[i]]
    }

    pub fn n_coords(&self) -> usize {
        self.total.first().map_or(0, IlrCoords::len)
    }
}

/// Splits every row of `table` into between- and within-cluster parts.
pub fn between_within_split<T: Scalar>(
    table: &LongTable<T>,
    basis: &OrthonormalBasis<T>,
) -> Result<DecomposedCoords<T>> {
    if table.is_empty() {
        return Err(CodaError::Data("cannot decompose an empty table".into()));
    }
    if basis.dim() != table.dim() {
        return Err(CodaError::DimensionMismatch {
            expected: table.dim(),
            found: basis.dim(),
        });
    }
    let total = table.total();
    let members = table.cluster_members();
    let mut between_compositions = Vec::with_capacity(members.len());
    let mut between = Vec::with_capacity(members.len());
    for (j, rows) in members.iter().enumerate() {
        if rows.is_empty() {
            return Err(CodaError::Data(format!("cluster {j} has no rows")));
        }
        let comps: Vec<Composition<T>> = rows
            .iter()
            .map(|&i| table.rows[i].composition.clone())
            .collect();
        let xb = geometric_mean_composition(&comps)?;
        between.push(basis.ilr(&xb)?);
        between_compositions.push(xb);
    }

    let n = table.len();
    let mut total_coords = Vec::with_capacity(n);
    let mut within = Vec::with_capacity(n);
    let mut within_compositions = Vec::with_capacity(n);
    let mut cluster_of_row = Vec::with_capacity(n);
    for row in &table.rows {
        let xb = &between_compositions[row.cluster];
        let ratio: Vec<T> = row
            .composition
            .parts()
            .iter()
            .zip(xb.parts())
            .map(|(&x, &b)| x / b)
            .collect();
        let xw = closure(&ratio, total)?;
        total_coords.push(basis.ilr(&row.composition)?);
        within.push(basis.ilr(&xw)?);
        within_compositions.push(xw);
        cluster_of_row.push(row.cluster);
    }
    Ok(DecomposedCoords {
        total: total_coords,
        between,
        within,
        between_compositions,
        within_compositions,
        cluster_of_row,
    })
}

/// Between and within coordinates of `x` relative to a given between-level
/// composition: `z_b = ilr(reference)`, `z_w = ilr(x) − z_b`.
pub fn coordinates_of<T: Scalar>(
    x: &Composition<T>,
    reference_between: &Composition<T>,
    basis: &OrthonormalBasis<T>,
) -> Result<(IlrCoords<T>, IlrCoords<T>)> {
    if x.dim() != reference_between.dim() {
        return Err(CodaError::DimensionMismatch {
            expected: reference_between.dim(),
            found: x.dim(),
        });
    }
    let zb = basis.ilr(reference_between)?;
    let zw = basis.ilr(x)?.sub(&zb);
    Ok((zb, zw))
}
