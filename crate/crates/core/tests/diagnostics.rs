mod common;

use mlcoda::diagnostics::{
    convergence, cjs_distance, diagnose, ess, power_scale_sensitivity, power_scale_weights,
    split_chains, split_rhat, EssKind, DEFAULT_ALPHAS,
};
use mlcoda::model::{CoefficientPrior, PriorSpec};
use mlcoda::default_sbp;
use rand::Rng;
use rand_distr::StandardNormal;

use common::{fit_simulated, quick_sampler, rng};

fn iid_chains(seed: u64, chains: usize, n: usize) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..chains)
        .map(|_| (0..n).map(|_| r.sample(StandardNormal)).collect())
        .collect()
}

#[test]
fn iid_draws_look_converged() {
    let c = iid_chains(1, 4, 1000);
    assert!(split_rhat(&c).unwrap().unwrap() < 1.01);
    for kind in [EssKind::Bulk, EssKind::Tail] {
        let ratio = ess(&c, kind).unwrap().unwrap() / 4000.0;
        assert!((0.7..1.3).contains(&ratio), "{kind:?}: {ratio}");
    }
}

#[test]
fn shifted_chains_are_flagged() {
    let mut c = iid_chains(2, 4, 500);
    for v in &mut c[3] {
        *v += 2.0;
    }
    assert!(split_rhat(&c).unwrap().unwrap() > 1.05);
}

#[test]
fn trending_chain_is_flagged_by_splitting() {
    let c: Vec<Vec<f64>> = vec![(0..400).map(|i| i as f64 / 100.0).collect()];
    assert_eq!(split_chains(&c).len(), 2);
    assert!(split_rhat(&c).unwrap().unwrap() > 1.05);
}

#[test]
fn autocorrelation_lowers_ess() {
    let mut r = rng(3);
    let chains: Vec<Vec<f64>> = (0..4)
        .map(|_| {
            let mut x = 0.0;
            (0..1000)
                .map(|_| {
                    x = 0.9 * x + r.sample::<f64, _>(StandardNormal);
                    x
                })
                .collect()
        })
        .collect();
    let e = ess(&chains, EssKind::Bulk).unwrap().unwrap();
    // an AR(1) with rho = 0.9 has ESS/n near (1 - 0.9) / (1 + 0.9)
    assert!(e / 4000.0 > 0.025 && e / 4000.0 < 0.11, "{e}");
}

#[test]
fn constant_and_short_chains() {
    assert_eq!(split_rhat(&[vec![1.0; 20], vec![1.0; 20]]).unwrap(), None);
    assert!(split_rhat(&[vec![1.0, 2.0]]).is_err());
}

#[test]
fn weights_and_distance_basics() {
    let lp = [0.0, 1.0, 2.0];
    let w = power_scale_weights(&lp, 1.0);
    assert!(w.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    let w2 = power_scale_weights(&lp, 2.0);
    assert!(w2[2] > w2[1] && w2[1] > w2[0]);
    let x = [0.0, 1.0, 2.0, 3.0];
    let u = [0.25; 4];
    assert_eq!(cjs_distance(&x, &u, &x, &u), 0.0);
    let skewed = [0.1, 0.2, 0.3, 0.4];
    assert!(cjs_distance(&x, &u, &x, &skewed) > 0.0);
}

#[test]
fn constant_log_prior_means_no_sensitivity() {
    let draws: Vec<f64> = iid_chains(4, 1, 500).remove(0);
    let s = power_scale_sensitivity(&draws, &[0.0; 500], &DEFAULT_ALPHAS).unwrap();
    assert_eq!(s.index, 0.0);
    assert!(!s.informative);
}

#[test]
fn informative_prior_is_detected() {
    let f = fit_simulated(3, 15, 3, default_sbp(3).unwrap(), &quick_sampler(5));
    let tight = PriorSpec {
        coefficients: CoefficientPrior::Normal { scale: 0.05 },
        ..f.priors
    };
    let d = mlcoda::model::fit(&f.spec, &f.design, &tight, &quick_sampler(5)).unwrap();
    let report = diagnose(&d, &DEFAULT_ALPHAS).unwrap();
    let s = report.get("bilr1").unwrap().sensitivity.unwrap();
    assert!(s.informative, "{s:?}");
    let flat = diagnose(&f.draws, &DEFAULT_ALPHAS).unwrap();
    assert_eq!(flat.get("bilr1").unwrap().sensitivity.unwrap().index, 0.0);
    assert!(flat.get("u[c01]").unwrap().sensitivity.is_none());
}

#[test]
fn convergence_report_covers_every_parameter() {
    let f = fit_simulated(3, 12, 3, default_sbp(3).unwrap(), &quick_sampler(7));
    let r = convergence(&f.draws).unwrap();
    assert_eq!(r.parameters.len(), f.draws.n_params());
    assert_eq!(r.total_draws, f.draws.n_draws());
    assert!(r.parameters.iter().all(|p| p.sensitivity.is_none()));
    assert!(r.max_rhat().unwrap() < 1.1);
}
