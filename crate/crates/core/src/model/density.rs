//! Log posterior of the random-intercept model on the unconstrained scale.
//!
//! Parameter vector: `[γ0, β (P), log σ_u, log σ_ε, η or u (J)]`.

use serde::{Deserialize, Serialize};

use super::nuts::LogDensity;
use super::priors::{student_t_lpdf, CoefficientPrior, HalfStudentT, InterceptPrior, PriorSpec};

/// How the cluster intercepts enter the sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parameterization {
    /// `u_j = σ_u · η_j` with `η_j ~ N(0, 1)`.
    #[default]
    #[serde(alias = "non-centered", alias = "non_centered")]
    Noncentered,
    /// `u_j ~ N(0, σ_u²)` sampled directly.
    Centered,
}

/// Names of the recorded log-prior components, in storage order.
pub const LOG_PRIOR_COMPONENTS: [&str; 4] =
    ["intercept", "coefficients", "sd_intercept", "sd_residual"];

pub(crate) struct RandomInterceptDensity<'a> {
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub cluster_of_row: &'a [usize],
    pub n_cols: usize,
    pub n_clusters: usize,
    pub priors: PriorSpec,
    pub parameterization: Parameterization,
}

fn half_t_on_log(prior: HalfStudentT, log_sigma: f64) -> (f64, f64) {
    let sigma = log_sigma.exp();
    let (lp, d) = student_t_lpdf(sigma, prior.df, 0.0, prior.scale);
    // Jacobian of σ = exp(log σ)
    (lp + log_sigma, d * sigma + 1.0)
}

impl RandomInterceptDensity<'_> {
    pub fn sd_offset(&self) -> usize {
        self.n_cols
    }

    pub fn effects_offset(&self) -> usize {
        self.n_cols + 2
    }

    /// Cluster intercepts `u_j` implied by a position.
    pub fn cluster_effects(&self, q: &[f64]) -> Vec<f64> {
        let raw = &q[self.effects_offset()..];
        match self.parameterization {
            Parameterization::Noncentered => {
                let sd = q[self.sd_offset()].exp();
                raw.iter().map(|e| sd * e).collect()
            }
            Parameterization::Centered => raw.to_vec(),
        }
    }

    /// Prior log densities on the constrained scale (no Jacobians, up to
    /// constants), one per entry of [`LOG_PRIOR_COMPONENTS`].
    pub fn log_prior_components(&self, q: &[f64]) -> [f64; 4] {
        let intercept = match self.priors.intercept {
            InterceptPrior::StudentT {
                df,
                location,
                scale,
            } => student_t_lpdf(q[0], df, location, scale).0,
            InterceptPrior::Flat => 0.0,
        };
        let coefficients = match self.priors.coefficients {
            CoefficientPrior::Flat => 0.0,
            CoefficientPrior::Normal { scale } => q[1..self.n_cols]
                .iter()
                .map(|b| -0.5 * (b / scale).powi(2))
                .sum(),
        };
        let sd_u = q[self.sd_offset()].exp();
        let sd_e = q[self.sd_offset() + 1].exp();
        let p = &self.priors;
        [
            intercept,
            coefficients,
            student_t_lpdf(sd_u, p.sd_intercept.df, 0.0, p.sd_intercept.scale).0,
            student_t_lpdf(sd_e, p.sd_residual.df, 0.0, p.sd_residual.scale).0,
        ]
    }
}

impl LogDensity for RandomInterceptDensity<'_> {
    fn dim(&self) -> usize {
        self.n_cols + 2 + self.n_clusters
    }

    fn logp_and_grad(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let p = self.n_cols;
        let (iu, ie, off) = (p, p + 1, p + 2);
        let log_sd_u = q[iu];
        let log_sd_e = q[ie];
        let sd_u = log_sd_u.exp();
        let sd_e = log_sd_e.exp();
        if !(sd_u > 0.0 && sd_e > 0.0 && sd_u.is_finite() && sd_e.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let inv_var = 1.0 / (sd_e * sd_e);
        let raw = &q[off..];

        let mut u = vec![0.0; self.n_clusters];
        match self.parameterization {
            Parameterization::Noncentered => {
                for (uj, e) in u.iter_mut().zip(raw) {
                    *uj = sd_u * e;
                }
            }
            Parameterization::Centered => u.copy_from_slice(raw),
        }

        // likelihood
        let beta = &q[..p];
        let mut sse = 0.0;
        let mut du = vec![0.0; self.n_clusters];
        for (i, (&yi, &j)) in self.y.iter().zip(self.cluster_of_row).enumerate() {
            let row = &self.x[i * p..(i + 1) * p];
            let mu: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>() + u[j];
            let r = yi - mu;
            sse += r * r;
            let w = r * inv_var;
            for (g, &xv) in grad[..p].iter_mut().zip(row) {
                *g += w * xv;
            }
            du[j] += w;
        }
        let n = self.y.len() as f64;
        let mut lp = -n * log_sd_e - 0.5 * sse * inv_var;
        grad[ie] += -n + sse * inv_var;

        // group-level effects
        match self.parameterization {
            Parameterization::Noncentered => {
                for j in 0..self.n_clusters {
                    let eta = raw[j];
                    lp -= 0.5 * eta * eta;
                    grad[off + j] = du[j] * sd_u - eta;
                    grad[iu] += du[j] * u[j];
                }
            }
            Parameterization::Centered => {
                let inv_var_u = 1.0 / (sd_u * sd_u);
                let mut ss = 0.0;
                for j in 0..self.n_clusters {
                    ss += u[j] * u[j];
                    grad[off + j] = du[j] - u[j] * inv_var_u;
                }
                let jf = self.n_clusters as f64;
                lp += -jf * log_sd_u - 0.5 * ss * inv_var_u;
                grad[iu] += -jf + ss * inv_var_u;
            }
        }

        // priors
        if let InterceptPrior::StudentT {
            df,
            location,
            scale,
        } = self.priors.intercept
        {
            let (l, d) = student_t_lpdf(q[0], df, location, scale);
            lp += l;
            grad[0] += d;
        }
        if let CoefficientPrior::Normal { scale } = self.priors.coefficients {
            let inv = 1.0 / (scale * scale);
            for k in 1..p {
                lp -= 0.5 * q[k] * q[k] * inv;
                grad[k] -= q[k] * inv;
            }
        }
        let (l, d) = half_t_on_log(self.priors.sd_intercept, log_sd_u);
        lp += l;
        grad[iu] += d;
        let (l, d) = half_t_on_log(self.priors.sd_residual, log_sd_e);
        lp += l;
        grad[ie] += d;
        lp
    }
}
