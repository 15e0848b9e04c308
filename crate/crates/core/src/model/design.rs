//! Model specification and design matrices.

use nalgebra::DMatrix;

use crate::error::{CodaError, Result};
use crate::ilr::{build_basis, default_sbp, OrthonormalBasis, Sbp};
use crate::multilevel::{between_within_split, DecomposedCoords, LongTable};

/// Relative singular-value threshold below which `X` counts as rank deficient.
const RANK_TOLERANCE: f64 = 1e-10;

/// Random-intercept normal model with between and within ilr predictors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub outcome: String,
    pub dim: usize,
    pub sbp: Sbp,
    pub covariates: Vec<String>,
}

impl ModelSpec {
    /// Spec matching a table's outcome, parts and covariates.
    pub fn for_table(table: &LongTable<f64>, sbp: Sbp) -> Result<Self> {
        let outcome = table
            .outcome_name()
            .ok_or_else(|| CodaError::Data("table has no outcome column".into()))?
            .to_string();
        if sbp.dim() != table.dim() {
            return Err(CodaError::DimensionMismatch {
                expected: table.dim(),
                found: sbp.dim(),
            });
        }
        Ok(ModelSpec {
            outcome,
            dim: table.dim(),
            sbp,
            covariates: table.covariate_names().to_vec(),
        })
    }

    pub fn n_coords(&self) -> usize {
        self.dim - 1
    }

    /// Number of population-level slopes, `2(D−1) + C`.
    pub fn n_predictors(&self) -> usize {
        2 * self.n_coords() + self.covariates.len()
    }

    /// Column names of `X`, intercept first.
    pub fn column_names(&self) -> Vec<String> {
        let k = self.n_coords();
        let mut names = vec!["intercept".to_string()];
        names.extend((1..=k).map(|i| format!("bilr{i}")));
        names.extend((1..=k).map(|i| format!("wilr{i}")));
        names.extend(self.covariates.iter().map(|c| format!("b_{c}")));
        names
    }
}

/// Dense cluster-membership indicator `Z` (rows × clusters).
pub fn membership_matrix(cluster_of_row: &[usize], n_clusters: usize) -> Vec<Vec<f64>> {
    cluster_of_row
        .iter()
        .map(|&j| {
            let mut row = vec![0.0; n_clusters];
            row[j] = 1.0;
            row
        })
        .collect()
}

/// Design matrices and outcome for one table.
///
/// `x` is expressed in the coordinates of the spec's basis. Sampling happens
/// in a fixed pivot basis recomputed from the compositions (`x_pivot`) so
/// that fits on the same data and seed agree across partitions; slopes are
/// rotated back afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    n_rows: usize,
    n_cols: usize,
    x: Vec<f64>,
    x_pivot: Vec<f64>,
    /// `coords_user = rotation · coords_pivot`; `None` when the bases coincide.
    rotation: Option<Vec<Vec<f64>>>,
    y: Vec<f64>,
    cluster_of_row: Vec<usize>,
    n_clusters: usize,
    cluster_ids: Vec<String>,
    column_names: Vec<String>,
}

fn fill_rows(
    coords: &DecomposedCoords<f64>,
    table: &LongTable<f64>,
    n_cols: usize,
) -> Vec<f64> {
    let mut x = Vec::with_capacity(table.len() * n_cols);
    for (i, row) in table.rows().iter().enumerate() {
        x.push(1.0);
        x.extend_from_slice(coords.between_of_row(i).values());
        x.extend_from_slice(coords.within[i].values());
        x.extend_from_slice(&row.covariates);
    }
    x
}

fn check_rank(x: &[f64], n_rows: usize, n_cols: usize, names: &[String]) -> Result<()> {
    if n_rows < n_cols {
        return Err(CodaError::DegenerateDesign(format!(
            "{n_rows} rows for {n_cols} columns"
        )));
    }
    let m = DMatrix::from_row_slice(n_rows, n_cols, x);
    for (j, name) in names.iter().enumerate() {
        if m.column(j).iter().all(|v| *v == 0.0) {
            return Err(CodaError::DegenerateDesign(format!("column {name} is zero")));
        }
    }
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if !(min > RANK_TOLERANCE * max) {
        return Err(CodaError::DegenerateDesign(format!(
            "X is rank deficient (singular values {min:e} .. {max:e})"
        )));
    }
    Ok(())
}

/// Builds `X = [1, z_b, z_w, covariates]` and the membership structure.
pub fn build_design(
    coords: &DecomposedCoords<f64>,
    table: &LongTable<f64>,
    spec: &ModelSpec,
) -> Result<Design> {
    if coords.total.len() != table.len() {
        return Err(CodaError::Shape(format!(
            "coordinates have {} rows, table has {}",
            coords.total.len(),
            table.len()
        )));
    }
    if spec.dim != table.dim() || coords.n_coords() != spec.n_coords() {
        return Err(CodaError::DimensionMismatch {
            expected: spec.dim,
            found: table.dim(),
        });
    }
    if spec.covariates != table.covariate_names() {
        return Err(CodaError::Data(format!(
            "spec covariates {:?} differ from table covariates {:?}",
            spec.covariates,
            table.covariate_names()
        )));
    }
    let y = table.outcomes()?;
    let n_cols = 1 + spec.n_predictors();
    let column_names = spec.column_names();
    let x = fill_rows(coords, table, n_cols);

    let pivot_sbp = default_sbp(spec.dim)?;
    let (x_pivot, rotation) = if pivot_sbp.signs() == spec.sbp.signs() {
        (x.clone(), None)
    } else {
        let pivot: OrthonormalBasis<f64> = build_basis(&pivot_sbp);
        let user: OrthonormalBasis<f64> = build_basis(&spec.sbp);
        let pivot_coords = between_within_split(table, &pivot)?;
        (
            fill_rows(&pivot_coords, table, n_cols),
            Some(pivot.change_of_basis(&user)?),
        )
    };
    check_rank(&x_pivot, table.len(), n_cols, &column_names)?;

    Ok(Design {
        n_rows: table.len(),
        n_cols,
        x,
        x_pivot,
        rotation,
        y,
        cluster_of_row: coords.cluster_of_row.clone(),
        n_clusters: table.n_clusters(),
        cluster_ids: table.cluster_ids().to_vec(),
        column_names,
    })
}

impl Design {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// Row-major `X` in the spec's basis.
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub(crate) fn x_pivot(&self) -> &[f64] {
        &self.x_pivot
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn cluster_of_row(&self) -> &[usize] {
        &self.cluster_of_row
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn cluster_ids(&self) -> &[String] {
        &self.cluster_ids
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn z(&self) -> Vec<Vec<f64>> {
        membership_matrix(&self.cluster_of_row, self.n_clusters)
    }

    /// Maps slopes from pivot coordinates to the spec's basis in place.
    /// `coefs` holds the `n_cols` fixed effects in column order.
    pub(crate) fn rotate_to_user(&self, coefs: &mut [f64]) {
        let Some(m) = &self.rotation else { return };
        let k = m.len();
        for block in [1, 1 + k] {
            let src: Vec<f64> = coefs[block..block + k].to_vec();
            for (i, row) in m.iter().enumerate() {
                coefs[block + i] = row.iter().zip(&src).map(|(a, b)| a * b).sum();
            }
        }
    }
}
