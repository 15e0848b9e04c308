//! Sequential binary partitions, the orthonormal bases they induce, and the
//! isometric log-ratio (ilr) transform.
//!
//! A partition is a `D × (D−1)` sign matrix. Column `k` splits one group left
//! over from earlier columns into a `+1` set of `r_k` parts and a `−1` set of
//! `s_k` parts. The matching contrast column carries
//! `a_k = sqrt(s_k / (r_k (r_k + s_k)))` on the `+1` parts and
//! `b_k = −sqrt(r_k / (s_k (r_k + s_k)))` on the `−1` parts, and the ilr
//! coordinate is that column dotted with the log-parts.

use std::fmt;
use std::path::Path;

use crate::aitchison::{closure, Composition};
use crate::error::{CodaError, Result};
use crate::scalar::Scalar;

/// A validated sequential binary partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sbp {
    /// `signs[d][k]` is the sign of part `d` in partition step `k`.
    signs: Vec<Vec<i8>>,
    part_names: Option<Vec<String>>,
}

impl Sbp {
    pub fn dim(&self) -> usize {
        self.signs.len()
    }

    pub fn signs(&self) -> &[Vec<i8>] {
        &self.signs
    }

    pub fn part_names(&self) -> Option<&[String]> {
        self.part_names.as_deref()
    }

    /// Attaches part labels; there must be exactly one per part.
    pub fn with_part_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.dim() {
            return Err(CodaError::DimensionMismatch {
                expected: self.dim(),
                found: names.len(),
            });
        }
        self.part_names = Some(names);
        Ok(self)
    }

    /// Reads a partition from a text file; see [`Sbp::parse`].
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Parses a plain-text partition: `D` rows of `D−1` entries from
    /// `{−1, 0, 1}` separated by whitespace and/or commas, optionally preceded
    /// by a header row holding the `D` part names. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut header: Option<Vec<String>> = None;
        let mut rows: Vec<Vec<i8>> = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let tokens: Vec<&str> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .collect();
            let parsed: std::result::Result<Vec<i8>, _> = tokens
                .iter()
                .map(|t| t.trim_start_matches('+').parse::<i8>())
                .collect();
            match parsed {
                Ok(row) => rows.push(row),
                Err(_) if rows.is_empty() && header.is_none() => {
                    header = Some(tokens.iter().map(|t| t.trim_matches('"').to_string()).collect());
                }
                Err(_) => {
                    return Err(CodaError::InvalidSbp(format!(
                        "non-numeric entry in row '{line}'"
                    )))
                }
            }
        }
        let sbp = validate_sbp(&rows)?;
        match header {
            Some(names) => sbp.with_part_names(names),
            None => Ok(sbp),
        }
    }

    /// Serializes in the same format [`Sbp::parse`] accepts.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(names) = &self.part_names {
            out.push_str(&names.join(","));
            out.push('\n');
        }
        for row in &self.signs {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for Sbp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// Checks the recursive-partition rules and returns the partition.
///
/// `matrix` has one row per part and one column per partition step.
pub fn validate_sbp(matrix: &[Vec<i8>]) -> Result<Sbp> {
    let dim = matrix.len();
    if dim < 2 {
        return Err(CodaError::InvalidSbp(format!(
            "need at least 2 parts, got {dim}"
        )));
    }
    for (d, row) in matrix.iter().enumerate() {
        if row.len() != dim - 1 {
            return Err(CodaError::InvalidSbp(format!(
                "row {} has {} entries, expected {}",
                d + 1,
                row.len(),
                dim - 1
            )));
        }
        if let Some(bad) = row.iter().find(|v| !matches!(v, -1..=1)) {
            return Err(CodaError::InvalidSbp(format!(
                "entry {bad} in row {} is not one of -1, 0, 1",
                d + 1
            )));
        }
    }

    // Groups still awaiting a split, as sorted part-index lists.
    let mut groups: Vec<Vec<usize>> = vec![(0..dim).collect()];
    for k in 0..dim - 1 {
        let plus: Vec<usize> = (0..dim).filter(|&d| matrix[d][k] == 1).collect();
        let minus: Vec<usize> = (0..dim).filter(|&d| matrix[d][k] == -1).collect();
        if plus.is_empty() || minus.is_empty() {
            return Err(CodaError::InvalidSbp(format!(
                "column {} has an empty {} set",
                k + 1,
                if plus.is_empty() { "+1" } else { "-1" }
            )));
        }
        let mut support: Vec<usize> = plus.iter().chain(&minus).copied().collect();
        support.sort_unstable();
        let position = groups.iter().position(|g| *g == support).ok_or_else(|| {
            CodaError::InvalidSbp(format!(
                "column {} does not split exactly one group left by earlier columns",
                k + 1
            ))
        })?;
        groups.swap_remove(position);
        groups.push(plus);
        groups.push(minus);
    }
    if groups.iter().any(|g| g.len() != 1) {
        return Err(CodaError::InvalidSbp("some parts are never isolated".into()));
    }
    Ok(Sbp {
        signs: matrix.to_vec(),
        part_names: None,
    })
}

/// Pivot-style partition: part 1 against the rest, then part 2 against the
/// remaining parts, and so on. The choice is arbitrary; substitution results
/// do not depend on it.
pub fn default_sbp(dim: usize) -> Result<Sbp> {
    if dim < 2 {
        return Err(CodaError::InvalidSbp(format!(
            "need at least 2 parts, got {dim}"
        )));
    }
    let signs = (0..dim)
        .map(|d| {
            (0..dim - 1)
                .map(|k| match d.cmp(&k) {
                    std::cmp::Ordering::Less => 0,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Greater => -1,
                })
                .collect()
        })
        .collect::<Vec<Vec<i8>>>();
    validate_sbp(&signs)
}

/// ilr coordinates of one composition, `D−1` finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct IlrCoords<T: Scalar>(Vec<T>);

impl<T: Scalar> IlrCoords<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(CodaError::InvalidValue(format!(
                "ilr coordinate {v} is not finite"
            )));
        }
        Ok(IlrCoords(values))
    }

    pub fn zeros(len: usize) -> Self {
        IlrCoords(vec![T::zero(); len])
    }

    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn into_values(self) -> Vec<T> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn add(&self, other: &Self) -> Self {
        IlrCoords(self.0.iter().zip(&other.0).map(|(&a, &b)| a + b).collect())
    }

    pub fn sub(&self, other: &Self) -> Self {
        IlrCoords(self.0.iter().zip(&other.0).map(|(&a, &b)| a - b).collect())
    }

    pub fn scale(&self, factor: T) -> Self {
        IlrCoords(self.0.iter().map(|&a| a * factor).collect())
    }

    pub fn dot(&self, other: &Self) -> T {
        self.0
            .iter()
            .zip(&other.0)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
    }
}

/// Orthonormal basis of the simplex induced by an [`Sbp`].
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalBasis<T: Scalar> {
    sbp: Sbp,
    /// Row-major `D × (D−1)` contrast matrix.
    contrast: Vec<T>,
    plus_counts: Vec<usize>,
    minus_counts: Vec<usize>,
}

/// Builds the contrast matrix of a validated partition.
pub fn build_basis<T: Scalar>(sbp: &Sbp) -> OrthonormalBasis<T> {
    let dim = sbp.dim();
    let cols = dim - 1;
    let mut contrast = vec![T::zero(); dim * cols];
    let mut plus_counts = Vec::with_capacity(cols);
    let mut minus_counts = Vec::with_capacity(cols);
    for k in 0..cols {
        let r = sbp.signs.iter().filter(|row| row[k] == 1).count();
        let s = sbp.signs.iter().filter(|row| row[k] == -1).count();
        let (rf, sf) = (T::from_count(r), T::from_count(s));
        let a = (sf / (rf * (rf + sf))).sqrt();
        let b = -(rf / (sf * (rf + sf))).sqrt();
        for d in 0..dim {
            contrast[d * cols + k] = match sbp.signs[d][k] {
                1 => a,
                -1 => b,
                _ => T::zero(),
            };
        }
        plus_counts.push(r);
        minus_counts.push(s);
    }
    OrthonormalBasis {
        sbp: sbp.clone(),
        contrast,
        plus_counts,
        minus_counts,
    }
}

impl<T: Scalar> OrthonormalBasis<T> {
    /// Number of parts `D`.
    pub fn dim(&self) -> usize {
        self.sbp.dim()
    }

    /// Number of coordinates `D−1`.
    pub fn n_coords(&self) -> usize {
        self.sbp.dim() - 1
    }

    pub fn sbp(&self) -> &Sbp {
        &self.sbp
    }

    pub fn part_names(&self) -> Option<&[String]> {
        self.sbp.part_names()
    }

    /// Contrast coefficient for part `d` in column `k`.
    #[inline]
    pub fn coefficient(&self, d: usize, k: usize) -> T {
        self.contrast[d * self.n_coords() + k]
    }

    /// `(r_k, s_k)`: sizes of the `+1` and `−1` sets of column `k`.
    pub fn group_sizes(&self, k: usize) -> (usize, usize) {
        (self.plus_counts[k], self.minus_counts[k])
    }

    /// Contrast matrix as rows (one per part).
    pub fn contrast_rows(&self) -> Vec<Vec<T>> {
        self.contrast
            .chunks(self.n_coords())
            .map(|c| c.to_vec())
            .collect()
    }

    fn check_dim(&self, found: usize) -> Result<()> {
        if found != self.dim() {
            return Err(CodaError::DimensionMismatch {
                expected: self.dim(),
                found,
            });
        }
        Ok(())
    }

    /// Forward transform: `z_k = Σ_d V[d,k] ln x_d`.
    pub fn ilr(&self, x: &Composition<T>) -> Result<IlrCoords<T>> {
        self.check_dim(x.dim())?;
        let cols = self.n_coords();
        let mut z = vec![T::zero(); cols];
        for (d, &part) in x.parts().iter().enumerate() {
            let log = part.ln();
            let row = &self.contrast[d * cols..(d + 1) * cols];
            for (zk, &v) in z.iter_mut().zip(row) {
                *zk = *zk + v * log;
            }
        }
        Ok(IlrCoords(z))
    }

    /// Inverse transform: `closure(exp(V z))` scaled to `total`.
    pub fn ilr_inverse(&self, z: &IlrCoords<T>, total: T) -> Result<Composition<T>> {
        let cols = self.n_coords();
        if z.len() != cols {
            return Err(CodaError::DimensionMismatch {
                expected: cols,
                found: z.len(),
            });
        }
        if let Some(v) = z.values().iter().find(|v| !v.is_finite()) {
            return Err(CodaError::InvalidValue(format!(
                "ilr coordinate {v} is not finite"
            )));
        }
        let logs: Vec<T> = self
            .contrast
            .chunks(cols)
            .map(|row| {
                row.iter()
                    .zip(z.values())
                    .fold(T::zero(), |acc, (&v, &zk)| acc + v * zk)
            })
            .collect();
        let max = logs
            .iter()
            .copied()
            .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
        let raw: Vec<T> = logs.iter().map(|&l| (l - max).exp()).collect();
        closure(&raw, total)
    }

    /// Matrix `M` with `coords_in_other = M · coords_in_self`, i.e.
    /// `otherᵀ · self`. Both bases must span the same `D`.
    pub fn change_of_basis(&self, other: &OrthonormalBasis<T>) -> Result<Vec<Vec<T>>> {
        self.check_dim(other.dim())?;
        let cols = self.n_coords();
        let dim = self.dim();
        Ok((0..cols)
            .map(|i| {
                (0..cols)
                    .map(|j| {
                        (0..dim).fold(T::zero(), |acc, d| {
                            acc + other.coefficient(d, i) * self.coefficient(d, j)
                        })
                    })
                    .collect()
            })
            .collect())
    }
}
