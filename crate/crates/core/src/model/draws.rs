//! Posterior draw store and its long-format CSV form.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{CodaError, Result};

use super::density::LOG_PRIOR_COMPONENTS;

const DIVERGENT: &str = "divergent__";

fn log_prior_column(component: &str) -> String {
    format!("log_prior_{component}__")
}

/// Draws indexed by `(chain, iteration, parameter)`.
///
/// Parameters are stored in a fixed order: `intercept`, `bilr1..`,
/// `wilr1..`, `b_<covariate>..`, `sd_cluster`, `sigma`, `u[<cluster>]..`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    names: Vec<String>,
    n_coords: usize,
    covariates: Vec<String>,
    cluster_ids: Vec<String>,
    n_chains: usize,
    n_iter: usize,
    values: Vec<f64>,
    divergent: Vec<bool>,
    log_prior: Vec<[f64; 4]>,
}

/// Parameter names in storage order.
pub fn parameter_names(n_coords: usize, covariates: &[String], cluster_ids: &[String]) -> Vec<String> {
    let mut names = vec!["intercept".to_string()];
    names.extend((1..=n_coords).map(|i| format!("bilr{i}")));
    names.extend((1..=n_coords).map(|i| format!("wilr{i}")));
    names.extend(covariates.iter().map(|c| format!("b_{c}")));
    names.push("sd_cluster".into());
    names.push("sigma".into());
    names.extend(cluster_ids.iter().map(|c| format!("u[{c}]")));
    names
}

impl PosteriorDraws {
    /// Assembles a store. `values` is `[chain][iteration][parameter]`
    /// flattened; `divergent` and `log_prior` are `[chain][iteration]`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_coords: usize,
        covariates: Vec<String>,
        cluster_ids: Vec<String>,
        n_chains: usize,
        n_iter: usize,
        values: Vec<f64>,
        divergent: Vec<bool>,
        log_prior: Vec<[f64; 4]>,
    ) -> Result<Self> {
        let names = parameter_names(n_coords, &covariates, &cluster_ids);
        let n = n_chains * n_iter;
        if n_chains == 0 || n_iter == 0 {
            return Err(CodaError::Shape("draw store needs at least one draw".into()));
        }
        if values.len() != n * names.len() || divergent.len() != n || log_prior.len() != n {
            return Err(CodaError::Shape(format!(
                "expected {} values and {n} per-draw records, got {}, {} and {}",
                n * names.len(),
                values.len(),
                divergent.len(),
                log_prior.len()
            )));
        }
        let draws = PosteriorDraws {
            names,
            n_coords,
            covariates,
            cluster_ids,
            n_chains,
            n_iter,
            values,
            divergent,
            log_prior,
        };
        for idx in [draws.sd_cluster_index(), draws.sigma_index()] {
            if let Some(v) = draws.column(idx).into_iter().find(|v| !(*v > 0.0)) {
                return Err(CodaError::InvalidValue(format!(
                    "{} draw {v} is not positive",
                    draws.names[idx]
                )));
            }
        }
        Ok(draws)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    pub fn n_chains(&self) -> usize {
        self.n_chains
    }

    pub fn n_iter(&self) -> usize {
        self.n_iter
    }

    pub fn n_draws(&self) -> usize {
        self.n_chains * self.n_iter
    }

    pub fn n_coords(&self) -> usize {
        self.n_coords
    }

    pub fn covariates(&self) -> &[String] {
        &self.covariates
    }

    pub fn cluster_ids(&self) -> &[String] {
        &self.cluster_ids
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn between_range(&self) -> std::ops::Range<usize> {
        1..1 + self.n_coords
    }

    pub fn within_range(&self) -> std::ops::Range<usize> {
        1 + self.n_coords..1 + 2 * self.n_coords
    }

    pub fn covariate_range(&self) -> std::ops::Range<usize> {
        let start = 1 + 2 * self.n_coords;
        start..start + self.covariates.len()
    }

    /// Number of population-level coefficients including the intercept.
    pub fn n_fixed(&self) -> usize {
        1 + 2 * self.n_coords + self.covariates.len()
    }

    pub fn sd_cluster_index(&self) -> usize {
        self.n_fixed()
    }

    pub fn sigma_index(&self) -> usize {
        self.n_fixed() + 1
    }

    /// All parameter values of draw `d` (chain-major numbering).
    pub fn draw(&self, d: usize) -> &[f64] {
        let p = self.names.len();
        &self.values[d * p..(d + 1) * p]
    }

    /// Draws of one parameter, chains concatenated.
    pub fn column(&self, idx: usize) -> Vec<f64> {
        let p = self.names.len();
        self.values.iter().skip(idx).step_by(p).copied().collect()
    }

    /// Draws of one parameter split by chain.
    pub fn chains(&self, idx: usize) -> Vec<Vec<f64>> {
        self.column(idx)
            .chunks(self.n_iter)
            .map(<[f64]>::to_vec)
            .collect()
    }

    pub fn divergent(&self) -> &[bool] {
        &self.divergent
    }

    pub fn n_divergent(&self) -> usize {
        self.divergent.iter().filter(|d| **d).count()
    }

    /// Per-draw log-prior components, see [`LOG_PRIOR_COMPONENTS`].
    pub fn log_prior_components(&self) -> &[[f64; 4]] {
        &self.log_prior
    }

    /// Per-draw joint log prior of the scaled priors.
    pub fn log_prior(&self) -> Vec<f64> {
        self.log_prior.iter().map(|c| c.iter().sum()).collect()
    }

    /// Long-format CSV: `chain,iteration,parameter,value`, chains and
    /// iterations numbered from 1. Divergence flags and log-prior components
    /// follow each draw's parameters as `__`-suffixed pseudo-parameters.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = std::io::BufWriter::new(writer);
        writeln!(w, "chain,iteration,parameter,value")?;
        let lp_names: Vec<String> = LOG_PRIOR_COMPONENTS.iter().map(|c| log_prior_column(c)).collect();
        for c in 0..self.n_chains {
            for t in 0..self.n_iter {
                let d = c * self.n_iter + t;
                for (name, v) in self.names.iter().zip(self.draw(d)) {
                    writeln!(w, "{},{},{},{}", c + 1, t + 1, csv_field(name), v)?;
                }
                writeln!(w, "{},{},{DIVERGENT},{}", c + 1, t + 1, u8::from(self.divergent[d]))?;
                for (name, v) in lp_names.iter().zip(&self.log_prior[d]) {
                    writeln!(w, "{},{},{name},{}", c + 1, t + 1, v)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format produced by [`PosteriorDraws::write_csv`]. The
    /// parameter layout is inferred from the names.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["chain", "iteration", "parameter", "value"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(CodaError::Data(format!(
                "draws header must be {expected:?}, got {headers:?}"
            )));
        }
        let mut names: Vec<String> = Vec::new();
        let mut seen_names = false;
        let mut cells: BTreeMap<(usize, usize), Vec<(String, f64)>> = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse_idx = |i: usize| -> Result<usize> {
                rec[i]
                    .parse::<usize>()
                    .ok()
                    .filter(|v| *v >= 1)
                    .ok_or_else(|| CodaError::Data(format!("bad index {:?}", &rec[i])))
            };
            let key = (parse_idx(0)?, parse_idx(1)?);
            let value: f64 = rec[3]
                .parse()
                .map_err(|_| CodaError::Data(format!("bad value {:?}", &rec[3])))?;
            let name = rec[2].to_string();
            if key != (1, 1) && !seen_names {
                seen_names = true;
            }
            if !seen_names && !name.ends_with("__") {
                names.push(name.clone());
            }
            cells.entry(key).or_default().push((name, value));
        }
        let n_chains = cells.keys().map(|k| k.0).max().unwrap_or(0);
        let n_iter = cells.keys().map(|k| k.1).max().unwrap_or(0);
        if n_chains * n_iter != cells.len() || cells.is_empty() {
            return Err(CodaError::Data("draws CSV has missing iterations".into()));
        }
        let (n_coords, covariates, cluster_ids) = infer_layout(&names)?;
        let lp_names: Vec<String> = LOG_PRIOR_COMPONENTS.iter().map(|c| log_prior_column(c)).collect();
        let mut values = Vec::with_capacity(cells.len() * names.len());
        let mut divergent = Vec::with_capacity(cells.len());
        let mut log_prior = Vec::with_capacity(cells.len());
        for ((c, t), entries) in cells {
            let lookup: BTreeMap<&str, f64> = entries.iter().map(|(n, v)| (n.as_str(), *v)).collect();
            if lookup.len() != entries.len() {
                return Err(CodaError::Data(format!("duplicate parameter at chain {c}, iteration {t}")));
            }
            for name in &names {
                values.push(*lookup.get(name.as_str()).ok_or_else(|| {
                    CodaError::Data(format!("missing {name} at chain {c}, iteration {t}"))
                })?);
            }
            divergent.push(lookup.get(DIVERGENT).copied().unwrap_or(0.0) != 0.0);
            let mut lp = [0.0; 4];
            for (slot, name) in lp.iter_mut().zip(&lp_names) {
                *slot = lookup.get(name.as_str()).copied().unwrap_or(0.0);
            }
            log_prior.push(lp);
        }
        PosteriorDraws::new(
            n_coords,
            covariates,
            cluster_ids,
            n_chains,
            n_iter,
            values,
            divergent,
            log_prior,
        )
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn infer_layout(names: &[String]) -> Result<(usize, Vec<String>, Vec<String>)> {
    let n_coords = names
        .iter()
        .filter(|n| n.strip_prefix("bilr").is_some_and(|r| r.parse::<usize>().is_ok()))
        .count();
    let covariates: Vec<String> = names
        .iter()
        .filter_map(|n| n.strip_prefix("b_").map(str::to_string))
        .collect();
    let cluster_ids: Vec<String> = names
        .iter()
        .filter_map(|n| n.strip_prefix("u[").and_then(|r| r.strip_suffix(']')).map(str::to_string))
        .collect();
    if parameter_names(n_coords, &covariates, &cluster_ids) != names {
        return Err(CodaError::Data(format!(
            "unrecognized parameter layout in draws CSV: {names:?}"
        )));
    }
    Ok((n_coords, covariates, cluster_ids))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PosteriorDraws {
        // 2 chains × 2 iterations, D=3, one covariate, two clusters
        let p = parameter_names(2, &["age".into()], &["a".into(), "b,c".into()]).len();
        let values: Vec<f64> = (0..4 * p).map(|i| 0.1 + i as f64 / 7.0).collect();
        PosteriorDraws::new(
            2,
            vec!["age".into()],
            vec!["a".into(), "b,c".into()],
            2,
            2,
            values,
            vec![false, true, false, false],
            vec![[-1.0, 0.0, -2.5, -0.125]; 4],
        )
        .unwrap()
    }

    #[test]
    fn names_follow_layout() {
        let d = small();
        assert_eq!(
            d.names(),
            [
                "intercept", "bilr1", "bilr2", "wilr1", "wilr2", "b_age", "sd_cluster", "sigma",
                "u[a]", "u[b,c]"
            ]
        );
        assert_eq!(d.sigma_index(), 7);
        assert_eq!(d.chains(0).len(), 2);
        assert_eq!(d.n_divergent(), 1);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let d = small();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = PosteriorDraws::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, d);
        let mut again = Vec::new();
        back.write_csv(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn non_positive_sd_is_rejected() {
        let p = parameter_names(1, &[], &["a".into()]).len();
        let mut values = vec![1.0; p];
        values[3] = 0.0;
        assert!(PosteriorDraws::new(1, vec![], vec!["a".into()], 1, 1, values, vec![false], vec![[0.0; 4]]).is_err());
    }
}
