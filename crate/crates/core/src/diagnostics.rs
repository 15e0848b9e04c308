//! Convergence and prior-sensitivity diagnostics.
//!
//! R̂ and ESS follow the rank-normalized split-chain estimators: draws are
//! split into half-chains, pooled ranks are mapped through the normal
//! quantile function, and autocorrelations are summed with Geyer's initial
//! monotone sequence. Sensitivity uses importance weights from power-scaling
//! one prior at a time and a cumulative Jensen–Shannon distance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{CodaError, Result};
use crate::model::PosteriorDraws;

pub const RHAT_THRESHOLD: f64 = 1.05;
pub const ESS_THRESHOLD: f64 = 400.0;
pub const SENSITIVITY_THRESHOLD: f64 = 0.05;
pub const DEFAULT_ALPHAS: [f64; 2] = [0.5, 2.0];
const TAIL_PROBS: [f64; 2] = [0.05, 0.95];
/// Minimum effective number of importance weights, absolute and as a
/// fraction of the draws.
const MIN_EFFECTIVE_WEIGHTS: f64 = 10.0;
const MIN_EFFECTIVE_FRACTION: f64 = 0.01;

fn check_chains(chains: &[Vec<f64>]) -> Result<usize> {
    let n = chains.first().map_or(0, Vec::len);
    if chains.is_empty() || n < 4 {
        return Err(CodaError::TooFewDraws {
            needed: 4,
            have: n,
        });
    }
    if chains.iter().any(|c| c.len() != n) {
        return Err(CodaError::Shape("chains have unequal lengths".into()));
    }
    Ok(n)
}

/// True when the estimators are undefined: non-finite or constant draws.
fn not_applicable(chains: &[Vec<f64>]) -> bool {
    let first = chains[0][0];
    chains.iter().flatten().any(|v| !v.is_finite()) || chains.iter().flatten().all(|v| *v == first)
}

/// Splits each chain into halves; with an odd length the middle draw is
/// dropped.
pub fn split_chains(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let n = c.len();
        let half = n / 2;
        out.push(c[..half].to_vec());
        out.push(c[n - half..].to_vec());
    }
    out
}

/// Normal scores of pooled average ranks, `Φ⁻¹((r − 3/8) / (S + 1/4))`.
pub fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let flat: Vec<f64> = chains.iter().flatten().copied().collect();
    let s = flat.len();
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| flat[a].total_cmp(&flat[b]));
    let mut ranks = vec![0.0; s];
    let mut i = 0;
    while i < s {
        let mut j = i;
        while j + 1 < s && flat[order[j + 1]] == flat[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let normal = Normal::standard();
    let denom = s as f64 + 0.25;
    let z: Vec<f64> = ranks
        .iter()
        .map(|r| normal.inverse_cdf((r - 0.375) / denom))
        .collect();
    let n = chains[0].len();
    z.chunks(n).map(<[f64]>::to_vec).collect()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Plain potential scale reduction over the given (already split) chains.
fn rhat_basic(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let var_between = n * sample_var(&means);
    let var_within = mean(&chains.iter().map(|c| sample_var(c)).collect::<Vec<_>>());
    ((var_between / var_within + n - 1.0) / n).sqrt()
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Rank-normalized split R̂: the larger of the bulk value and the value for
/// draws folded around the median. `None` for constant draws.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<Option<f64>> {
    check_chains(chains)?;
    if not_applicable(chains) {
        return Ok(None);
    }
    let split = split_chains(chains);
    let bulk = rhat_basic(&rank_normalize(&split));
    let med = median(&split.concat());
    let folded: Vec<Vec<f64>> = split
        .iter()
        .map(|c| c.iter().map(|v| (v - med).abs()).collect())
        .collect();
    let tail = rhat_basic(&rank_normalize(&folded));
    Ok(Some(bulk.max(tail)))
}

/// Biased autocovariance of `x` at `lag`.
fn autocov(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum::<f64>() / n as f64
}

/// Effective sample size of the given chains (no splitting or ranking).
fn ess_raw(chains: &[Vec<f64>]) -> Option<f64> {
    let m = chains.len();
    let n = chains[0].len();
    if n < 3 || not_applicable(chains) {
        return None;
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let mean_acov = |lag: usize| -> f64 {
        chains
            .iter()
            .zip(&means)
            .map(|(c, &mu)| autocov(c, mu, lag))
            .sum::<f64>()
            / m as f64
    };
    let nf = n as f64;
    let mean_var = mean_acov(0) * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += sample_var(&means);
    }
    let rho = |lag: usize| 1.0 - (mean_var - mean_acov(lag)) / var_plus;

    let mut rho_hat = vec![0.0; n];
    let mut t = 0;
    let mut even = 1.0;
    let mut odd = rho(1);
    rho_hat[0] = even;
    rho_hat[1] = odd;
    while t + 5 < n && !(even + odd).is_nan() && even + odd > 0.0 {
        t += 2;
        even = rho(t);
        odd = rho(t + 1);
        if even + odd >= 0.0 {
            rho_hat[t] = even;
            rho_hat[t + 1] = odd;
        }
    }
    let max_t = t;
    if even > 0.0 {
        rho_hat[max_t] = even;
    }
    // initial monotone sequence
    let mut t = 0;
    while t + 4 <= max_t {
        t += 2;
        if rho_hat[t] + rho_hat[t + 1] > rho_hat[t - 2] + rho_hat[t - 1] {
            rho_hat[t] = (rho_hat[t - 2] + rho_hat[t - 1]) / 2.0;
            rho_hat[t + 1] = rho_hat[t];
        }
    }
    let total = (m * n) as f64;
    let tau = -1.0 + 2.0 * rho_hat[..max_t].iter().sum::<f64>() + rho_hat[max_t];
    let tau = tau.max(1.0 / total.log10());
    Some(total / tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EssKind {
    Bulk,
    Tail,
}

/// Type-7 quantile of all draws.
fn pooled_quantile(chains: &[Vec<f64>], p: f64) -> f64 {
    let mut v: Vec<f64> = chains.iter().flatten().copied().collect();
    v.sort_by(f64::total_cmp);
    crate::model::quantile_sorted(&v, p)
}

/// Bulk ESS (rank-normalized split chains) or tail ESS (minimum over the
/// 5% and 95% quantile indicators). `None` for constant draws.
pub fn ess(chains: &[Vec<f64>], kind: EssKind) -> Result<Option<f64>> {
    check_chains(chains)?;
    if not_applicable(chains) {
        return Ok(None);
    }
    let split = split_chains(chains);
    Ok(match kind {
        EssKind::Bulk => ess_raw(&rank_normalize(&split)),
        EssKind::Tail => {
            let mut out: Option<f64> = None;
            for p in TAIL_PROBS {
                let q = pooled_quantile(chains, p);
                let ind: Vec<Vec<f64>> = split
                    .iter()
                    .map(|c| c.iter().map(|&v| f64::from(u8::from(v <= q))).collect())
                    .collect();
                let Some(e) = ess_raw(&ind) else {
                    return Ok(None);
                };
                out = Some(out.map_or(e, |o: f64| o.min(e)));
            }
            out
        }
    })
}

/// Normalized importance weights for raising a prior with per-draw log
/// density `log_prior` to the power `alpha`.
pub fn power_scale_weights(log_prior: &[f64], alpha: f64) -> Vec<f64> {
    let lw: Vec<f64> = log_prior.iter().map(|lp| (alpha - 1.0) * lp).collect();
    let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = lw.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

fn effective_weights(w: &[f64]) -> f64 {
    1.0 / w.iter().map(|v| v * v).sum::<f64>()
}

/// Weighted empirical CDF of `(x, w)` (sorted by `x`) evaluated at `at`.
fn ecdf_at(xs: &[f64], cum: &[f64], at: f64) -> f64 {
    let k = xs.partition_point(|v| *v <= at);
    if k == 0 {
        0.0
    } else {
        cum[k - 1]
    }
}

fn plogp_term(p: f64, q: f64) -> f64 {
    if p > 0.0 {
        p * (p.log2() - (0.5 * p + 0.5 * q).log2())
    } else {
        0.0
    }
}

/// Cumulative Jensen–Shannon distance between two weighted samples,
/// normalized to `[0, 1]`.
pub fn cjs_distance(x: &[f64], wx: &[f64], y: &[f64], wy: &[f64]) -> f64 {
    fn prep(v: &[f64], w: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let xs: Vec<f64> = idx.iter().map(|&i| v[i]).collect();
        let mut acc = 0.0;
        let cum: Vec<f64> = idx
            .iter()
            .map(|&i| {
                acc += w[i];
                acc
            })
            .collect();
        let n = xs.len();
        let end = xs[n - 1] + (xs[n - 1] - xs[n - 2]);
        let diffs: Vec<f64> = (0..n)
            .map(|i| if i + 1 < n { xs[i + 1] - xs[i] } else { end - xs[i] })
            .collect();
        (xs, cum, diffs)
    }
    if x.len() < 2 || y.len() < 2 {
        return 0.0;
    }
    let (xs, cx, dx) = prep(x, wx);
    let (ys, cy, dy) = prep(y, wy);
    let mut pq = 0.0;
    let mut p_int = 0.0;
    for (i, &v) in xs.iter().enumerate() {
        let p = ecdf_at(&xs, &cx, v);
        let q = ecdf_at(&ys, &cy, v);
        pq += dx[i] * plogp_term(p, q);
        p_int += dx[i] * p;
    }
    let mut qp = 0.0;
    let mut q_int = 0.0;
    for (i, &v) in ys.iter().enumerate() {
        let q = ecdf_at(&ys, &cy, v);
        let p = ecdf_at(&xs, &cx, v);
        qp += dy[i] * plogp_term(q, p);
        q_int += dy[i] * q;
    }
    let bound = p_int + q_int;
    if !(bound > 0.0) {
        return 0.0;
    }
    ((pq + qp).max(0.0) / bound).sqrt()
}

/// Power-scaling sensitivity of one parameter to one prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sensitivity {
    /// Mean over `alphas` of `CJS(base, scaled) / |log2 α|`.
    pub index: f64,
    pub informative: bool,
    /// Importance weights were too concentrated for a trustworthy value.
    pub unreliable: bool,
}

/// Sensitivity of `draws` to raising the prior with per-draw log density
/// `log_prior` to each power in `alphas`.
pub fn power_scale_sensitivity(draws: &[f64], log_prior: &[f64], alphas: &[f64]) -> Result<Sensitivity> {
    if draws.len() != log_prior.len() {
        return Err(CodaError::DimensionMismatch {
            expected: draws.len(),
            found: log_prior.len(),
        });
    }
    if alphas.is_empty() || alphas.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
        return Err(CodaError::InvalidValue(format!("power-scaling alphas must be > 0, got {alphas:?}")));
    }
    if log_prior.iter().any(|v| !v.is_finite()) {
        return Err(CodaError::InvalidValue("log prior is not finite".into()));
    }
    let n = draws.len();
    let base = vec![1.0 / n as f64; n];
    let min_eff = MIN_EFFECTIVE_WEIGHTS.max(MIN_EFFECTIVE_FRACTION * n as f64);
    let mut total = 0.0;
    let mut counted = 0usize;
    let mut unreliable = false;
    for &alpha in alphas {
        if alpha == 1.0 {
            continue;
        }
        let w = power_scale_weights(log_prior, alpha);
        if effective_weights(&w) < min_eff {
            unreliable = true;
        }
        let d = if w.iter().all(|v| *v == w[0]) {
            0.0
        } else {
            cjs_distance(draws, &base, draws, &w)
        };
        total += d / alpha.log2().abs();
        counted += 1;
    }
    let index = if counted == 0 { 0.0 } else { total / counted as f64 };
    Ok(Sensitivity {
        index,
        informative: index > SENSITIVITY_THRESHOLD,
        unreliable,
    })
}

/// Diagnostics for one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDiagnostics {
    pub parameter: String,
    pub rhat: Option<f64>,
    pub ess_bulk: Option<f64>,
    pub ess_tail: Option<f64>,
    /// Absent for the cluster intercepts, whose prior is not scaled.
    pub sensitivity: Option<Sensitivity>,
}

impl ParameterDiagnostics {
    pub fn rhat_ok(&self) -> bool {
        self.rhat.is_none_or(|r| r < RHAT_THRESHOLD)
    }

    pub fn ess_ok(&self) -> bool {
        [self.ess_bulk, self.ess_tail]
            .iter()
            .all(|e| e.is_none_or(|v| v > ESS_THRESHOLD))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub parameters: Vec<ParameterDiagnostics>,
    pub divergences: usize,
    pub total_draws: usize,
}

impl DiagnosticsReport {
    pub fn max_rhat(&self) -> Option<f64> {
        self.parameters.iter().filter_map(|p| p.rhat).reduce(f64::max)
    }

    pub fn min_ess(&self) -> Option<f64> {
        self.parameters
            .iter()
            .flat_map(|p| [p.ess_bulk, p.ess_tail])
            .flatten()
            .reduce(f64::min)
    }

    /// Any R̂ at or above 1.05 or any ESS at or below 400.
    pub fn has_breach(&self) -> bool {
        self.parameters.iter().any(|p| !p.rhat_ok() || !p.ess_ok())
    }

    pub fn get(&self, name: &str) -> Option<&ParameterDiagnostics> {
        self.parameters.iter().find(|p| p.parameter == name)
    }
}

/// Which recorded log-prior component governs parameter `idx`.
fn prior_component(draws: &PosteriorDraws, idx: usize) -> Option<usize> {
    if idx == 0 {
        Some(0)
    } else if idx < draws.n_fixed() {
        Some(1)
    } else if idx == draws.sd_cluster_index() {
        Some(2)
    } else if idx == draws.sigma_index() {
        Some(3)
    } else {
        None
    }
}

/// Full report over every stored parameter. Each parameter's sensitivity
/// comes from power-scaling its own prior.
pub fn diagnose(draws: &PosteriorDraws, alphas: &[f64]) -> Result<DiagnosticsReport> {
    report(draws, Some(alphas))
}

/// R̂, ESS and divergences only.
pub fn convergence(draws: &PosteriorDraws) -> Result<DiagnosticsReport> {
    report(draws, None)
}

fn report(draws: &PosteriorDraws, alphas: Option<&[f64]>) -> Result<DiagnosticsReport> {
    let components = draws.log_prior_components();
    let parameters = (0..draws.n_params())
        .into_par_iter()
        .map(|idx| {
            let chains = draws.chains(idx);
            let sensitivity = match (alphas, prior_component(draws, idx)) {
                (Some(alphas), Some(c)) => {
                    let lp: Vec<f64> = components.iter().map(|v| v[c]).collect();
                    Some(power_scale_sensitivity(&draws.column(idx), &lp, alphas)?)
                }
                _ => None,
            };
            Ok(ParameterDiagnostics {
                parameter: draws.names()[idx].clone(),
                rhat: split_rhat(&chains)?,
                ess_bulk: ess(&chains, EssKind::Bulk)?,
                ess_tail: ess(&chains, EssKind::Tail)?,
                sensitivity,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DiagnosticsReport {
        parameters,
        divergences: draws.n_divergent(),
        total_draws: draws.n_draws(),
    })
}
