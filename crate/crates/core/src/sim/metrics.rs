//! Bias, coverage and bias-eliminated coverage with Monte Carlo standard
//! errors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{CodaError, Result};

use super::study::ReplicationRecord;

/// Performance of one estimand across replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterMetrics {
    pub parameter: String,
    pub n: usize,
    pub bias: f64,
    pub bias_mcse: f64,
    pub coverage: f64,
    pub coverage_mcse: f64,
    pub be_coverage: f64,
    pub be_coverage_mcse: f64,
}

/// Replication bookkeeping for one condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConvergenceCounts {
    pub replications: usize,
    pub failed: usize,
    pub divergent: usize,
    pub rhat_failures: usize,
    pub low_ess: usize,
    pub excluded: usize,
    pub used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub parameters: Vec<ParameterMetrics>,
    pub counts: ConvergenceCounts,
}

impl MetricsSummary {
    pub fn get(&self, parameter: &str) -> Option<&ParameterMetrics> {
        self.parameters.iter().find(|p| p.parameter == parameter)
    }
}

/// One estimate with its interval and the value it targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatePoint {
    pub truth: f64,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

fn proportion_mcse(c: f64, n: f64) -> f64 {
    (c * (1.0 - c) / n).sqrt()
}

/// Metrics for one estimand from its per-replication estimates.
pub fn parameter_metrics(parameter: &str, points: &[EstimatePoint]) -> Result<ParameterMetrics> {
    let n = points.len();
    if n < 2 {
        return Err(CodaError::TooFewDraws { needed: 2, have: n });
    }
    let nf = n as f64;
    let mean_est = points.iter().map(|p| p.estimate).sum::<f64>() / nf;
    let bias = points.iter().map(|p| p.estimate - p.truth).sum::<f64>() / nf;
    let var = points.iter().map(|p| (p.estimate - mean_est).powi(2)).sum::<f64>() / (nf - 1.0);
    let covered = |v: f64, p: &EstimatePoint| p.ci_low <= v && v <= p.ci_high;
    let coverage = points.iter().filter(|p| covered(p.truth, p)).count() as f64 / nf;
    let be_coverage = points.iter().filter(|p| covered(mean_est, p)).count() as f64 / nf;
    Ok(ParameterMetrics {
        parameter: parameter.to_string(),
        n,
        bias,
        bias_mcse: (var / nf).sqrt(),
        coverage,
        coverage_mcse: proportion_mcse(coverage, nf),
        be_coverage,
        be_coverage_mcse: proportion_mcse(be_coverage, nf),
    })
}

/// Summarizes the replications of one condition. Failed and excluded
/// replications are counted but not evaluated.
pub fn metrics(records: &[ReplicationRecord]) -> Result<MetricsSummary> {
    let mut counts = ConvergenceCounts {
        replications: records.len(),
        ..Default::default()
    };
    let mut order: Vec<String> = Vec::new();
    let mut by_param: BTreeMap<String, Vec<EstimatePoint>> = BTreeMap::new();
    for r in records {
        if r.error.is_some() {
            counts.failed += 1;
            counts.excluded += 1;
            continue;
        }
        if r.divergences > 0 {
            counts.divergent += 1;
        }
        if r.rhat_failed() {
            counts.rhat_failures += 1;
        }
        if r.low_ess() {
            counts.low_ess += 1;
        }
        if r.excluded {
            counts.excluded += 1;
            continue;
        }
        counts.used += 1;
        for e in &r.estimates {
            if !by_param.contains_key(&e.parameter) {
                order.push(e.parameter.clone());
            }
            by_param.entry(e.parameter.clone()).or_default().push(EstimatePoint {
                truth: e.truth,
                estimate: e.estimate,
                ci_low: e.ci_low,
                ci_high: e.ci_high,
            });
        }
    }
    if counts.used < 2 {
        return Err(CodaError::TooFewDraws {
            needed: 2,
            have: counts.used,
        });
    }
    let parameters = order
        .iter()
        .map(|p| parameter_metrics(p, &by_param[p]))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsSummary { parameters, counts })
}
