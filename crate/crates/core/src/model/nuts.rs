//! Dynamic Hamiltonian Monte Carlo (no-U-turn sampler).
//!
//! Multinomial trajectory sampling with the generalized no-U-turn criterion
//! checked across merged subtrees, dual-averaging step-size adaptation and a
//! diagonal inverse metric estimated over doubling warmup windows
//! (75-iteration initial buffer, 25-iteration first slow window, 50-iteration
//! terminal buffer; shrunk proportionally for short warmups).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{CodaError, Result};

/// Energy error beyond which a trajectory is declared divergent.
const MAX_DELTA_H: f64 = 1000.0;

/// Unnormalized log density with gradient, on an unconstrained space.
pub trait LogDensity {
    fn dim(&self) -> usize;

    /// Writes the gradient into `grad` and returns the log density. Returns a
    /// non-finite value (and leaves `grad` unspecified) outside the support.
    fn logp_and_grad(&self, position: &[f64], grad: &mut [f64]) -> f64;
}

/// Tuning knobs for one chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NutsSettings {
    pub warmup: usize,
    pub draws: usize,
    pub target_accept: f64,
    pub max_depth: usize,
}

/// Per-iteration sampler statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionStats {
    pub divergent: bool,
    pub depth: usize,
    pub n_leapfrog: usize,
    pub accept_stat: f64,
    pub step_size: f64,
    pub energy: f64,
}

/// Post-warmup output of one chain.
#[derive(Debug, Clone)]
pub struct ChainRun {
    /// Row-major `draws × dim` positions.
    pub positions: Vec<f64>,
    pub stats: Vec<TransitionStats>,
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
}

#[derive(Clone)]
struct Point {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

struct Hamiltonian<'a, D: LogDensity> {
    target: &'a D,
    inv_metric: Vec<f64>,
}

impl<D: LogDensity> Hamiltonian<'_, D> {
    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p
            .iter()
            .zip(&self.inv_metric)
            .map(|(&pi, &m)| pi * pi * m)
            .sum::<f64>()
    }

    fn energy(&self, z: &Point) -> f64 {
        let h = -z.logp + self.kinetic(&z.p);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn velocity(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.inv_metric).map(|(&pi, &m)| pi * m).collect()
    }

    fn sample_momentum(&self, z: &mut Point, rng: &mut ChaCha8Rng) {
        for (pi, &m) in z.p.iter_mut().zip(&self.inv_metric) {
            let n: f64 = rng.sample(StandardNormal);
            *pi = n / m.sqrt();
        }
    }

    fn evaluate(&self, z: &mut Point) {
        z.logp = self.target.logp_and_grad(&z.q, &mut z.grad);
        if !z.logp.is_finite() || z.grad.iter().any(|g| !g.is_finite()) {
            z.logp = f64::NEG_INFINITY;
        }
    }

    fn leapfrog(&self, z: &mut Point, epsilon: f64) {
        let half = 0.5 * epsilon;
        for (pi, &g) in z.p.iter_mut().zip(&z.grad) {
            *pi += half * g;
        }
        for ((qi, &pi), &m) in z.q.iter_mut().zip(&z.p).zip(&self.inv_metric) {
            *qi += epsilon * m * pi;
        }
        self.evaluate(z);
        if z.logp.is_finite() {
            for (pi, &g) in z.p.iter_mut().zip(&z.grad) {
                *pi += half * g;
            }
        }
    }
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn no_u_turn(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

/// Mutable bookkeeping threaded through one transition.
struct TreeState {
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
    h0: f64,
}

/// Boundary momenta and summed momentum of a (sub)trajectory.
struct Span {
    p_sharp_beg: Vec<f64>,
    p_sharp_end: Vec<f64>,
    p_beg: Vec<f64>,
    p_end: Vec<f64>,
    rho: Vec<f64>,
}

struct Nuts<'a, D: LogDensity> {
    ham: Hamiltonian<'a, D>,
    epsilon: f64,
    max_depth: usize,
}

impl<D: LogDensity> Nuts<'_, D> {
    /// Extends the trajectory from `z` by `2^depth` leapfrog steps in
    /// direction `sign`. Returns `None` if the subtree is invalid (divergence
    /// or U-turn), otherwise its span, proposal and log weight.
    fn build_tree(
        &self,
        depth: usize,
        z: &mut Point,
        sign: f64,
        state: &mut TreeState,
        rng: &mut ChaCha8Rng,
    ) -> Option<(Span, Point, f64)> {
        if depth == 0 {
            self.ham.leapfrog(z, sign * self.epsilon);
            state.n_leapfrog += 1;
            let h = self.ham.energy(z);
            if h - state.h0 > MAX_DELTA_H {
                state.divergent = true;
            }
            let log_w = state.h0 - h;
            state.sum_metro_prob += if log_w > 0.0 { 1.0 } else { log_w.exp() };
            if state.divergent {
                return None;
            }
            let p_sharp = self.ham.velocity(&z.p);
            let span = Span {
                p_sharp_beg: p_sharp.clone(),
                p_sharp_end: p_sharp,
                p_beg: z.p.clone(),
                p_end: z.p.clone(),
                rho: z.p.clone(),
            };
            return Some((span, z.clone(), log_w));
        }

        let (init, propose_init, lsw_init) = self.build_tree(depth - 1, z, sign, state, rng)?;
        let (fin, propose_final, lsw_final) = self.build_tree(depth - 1, z, sign, state, rng)?;

        let lsw_subtree = log_sum_exp(lsw_init, lsw_final);
        let accept_final = if lsw_final > lsw_subtree {
            true
        } else {
            rng.random::<f64>() < (lsw_final - lsw_subtree).exp()
        };
        let proposal = if accept_final { propose_final } else { propose_init };

        let rho = add(&init.rho, &fin.rho);
        let mut persist = no_u_turn(&init.p_sharp_beg, &fin.p_sharp_end, &rho);
        let rho_ext = add(&init.rho, &fin.p_beg);
        persist &= no_u_turn(&init.p_sharp_beg, &fin.p_sharp_beg, &rho_ext);
        let rho_ext = add(&fin.rho, &init.p_end);
        persist &= no_u_turn(&init.p_sharp_end, &fin.p_sharp_end, &rho_ext);
        if !persist {
            return None;
        }
        Some((
            Span {
                p_sharp_beg: init.p_sharp_beg,
                p_sharp_end: fin.p_sharp_end,
                p_beg: init.p_beg,
                p_end: fin.p_end,
                rho,
            },
            proposal,
            lsw_subtree,
        ))
    }

    fn transition(&self, current: &Point, rng: &mut ChaCha8Rng) -> (Point, TransitionStats) {
        let mut z0 = current.clone();
        self.ham.sample_momentum(&mut z0, rng);
        let h0 = self.ham.energy(&z0);
        let mut state = TreeState {
            n_leapfrog: 0,
            sum_metro_prob: 0.0,
            divergent: false,
            h0,
        };

        let p_sharp0 = self.ham.velocity(&z0.p);
        // Backward (bck) and forward (fwd) ends of the trajectory.
        let mut z_fwd = z0.clone();
        let mut z_bck = z0.clone();
        let mut p_sharp_fwd_bck = p_sharp0.clone();
        let mut p_sharp_fwd_fwd = p_sharp0.clone();
        let mut p_sharp_bck_fwd = p_sharp0.clone();
        let mut p_sharp_bck_bck = p_sharp0;
        let mut p_fwd_bck = z0.p.clone();
        let mut p_bck_fwd = z0.p.clone();
        let mut rho = z0.p.clone();
        let mut log_sum_weight = 0.0;
        let mut sample = z0;
        let mut depth = 0;

        while depth < self.max_depth {
            let forward = rng.random::<f64>() > 0.5;
            let (rho_fwd, rho_bck, subtree) = if forward {
                let rho_bck = rho.clone();
                p_bck_fwd = p_fwd_bck.clone();
                p_sharp_bck_fwd = p_sharp_fwd_bck.clone();
                let sub = self.build_tree(depth, &mut z_fwd, 1.0, &mut state, rng);
                match sub {
                    Some((span, proposal, lsw)) => {
                        p_sharp_fwd_bck = span.p_sharp_beg;
                        p_sharp_fwd_fwd = span.p_sharp_end;
                        p_fwd_bck = span.p_beg;
                        (span.rho, rho_bck, Some((proposal, lsw)))
                    }
                    None => (Vec::new(), rho_bck, None),
                }
            } else {
                let rho_fwd = rho.clone();
                p_fwd_bck = p_bck_fwd.clone();
                p_sharp_fwd_bck = p_sharp_bck_fwd.clone();
                let sub = self.build_tree(depth, &mut z_bck, -1.0, &mut state, rng);
                match sub {
                    Some((span, proposal, lsw)) => {
                        p_sharp_bck_fwd = span.p_sharp_beg;
                        p_sharp_bck_bck = span.p_sharp_end;
                        p_bck_fwd = span.p_beg;
                        (rho_fwd, span.rho, Some((proposal, lsw)))
                    }
                    None => (rho_fwd, Vec::new(), None),
                }
            };
            let Some((proposal, lsw_subtree)) = subtree else {
                break;
            };
            depth += 1;

            if lsw_subtree > log_sum_weight {
                sample = proposal;
            } else if rng.random::<f64>() < (lsw_subtree - log_sum_weight).exp() {
                sample = proposal;
            }
            log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);

            rho = add(&rho_bck, &rho_fwd);
            let mut persist = no_u_turn(&p_sharp_bck_bck, &p_sharp_fwd_fwd, &rho);
            let rho_ext = add(&rho_bck, &p_fwd_bck);
            persist &= no_u_turn(&p_sharp_bck_bck, &p_sharp_fwd_bck, &rho_ext);
            let rho_ext = add(&rho_fwd, &p_bck_fwd);
            persist &= no_u_turn(&p_sharp_bck_fwd, &p_sharp_fwd_fwd, &rho_ext);
            if !persist {
                break;
            }
        }
        let accept_stat = if state.n_leapfrog > 0 {
            state.sum_metro_prob / state.n_leapfrog as f64
        } else {
            0.0
        };
        let energy = self.ham.energy(&sample);
        (
            sample,
            TransitionStats {
                divergent: state.divergent,
                depth,
                n_leapfrog: state.n_leapfrog,
                accept_stat,
                step_size: self.epsilon,
                energy,
            },
        )
    }

    /// Doubles or halves the step size until a single leapfrog step crosses
    /// an acceptance probability of 0.8.
    fn init_step_size(&mut self, current: &Point, rng: &mut ChaCha8Rng) -> Result<()> {
        let target = 0.8f64.ln();
        let mut z = current.clone();
        self.ham.sample_momentum(&mut z, rng);
        let h0 = self.ham.energy(&z);
        self.ham.leapfrog(&mut z, self.epsilon);
        let delta = h0 - self.ham.energy(&z);
        let direction = if delta > target { 1 } else { -1 };
        loop {
            let mut z = current.clone();
            self.ham.sample_momentum(&mut z, rng);
            let h0 = self.ham.energy(&z);
            self.ham.leapfrog(&mut z, self.epsilon);
            let delta = h0 - self.ham.energy(&z);
            if direction == 1 && !(delta > target) {
                break;
            }
            if direction == -1 && !(delta < target) {
                break;
            }
            self.epsilon = if direction == 1 {
                2.0 * self.epsilon
            } else {
                0.5 * self.epsilon
            };
            if self.epsilon > 1e7 {
                return Err(CodaError::Sampling(
                    "step size diverged during initialization; posterior may be improper".into(),
                ));
            }
            if self.epsilon == 0.0 {
                return Err(CodaError::Sampling(
                    "step size collapsed to zero during initialization".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Nesterov dual averaging of the log step size.
#[derive(Debug, Clone)]
struct DualAveraging {
    mu: f64,
    x_bar: f64,
    s_bar: f64,
    counter: f64,
    delta: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const KAPPA: f64 = 0.75;
    const T0: f64 = 10.0;

    fn new(delta: f64, epsilon: f64) -> Self {
        DualAveraging {
            mu: (10.0 * epsilon).ln(),
            x_bar: 0.0,
            s_bar: 0.0,
            counter: 0.0,
            delta,
        }
    }

    fn restart(&mut self, epsilon: f64) {
        self.mu = (10.0 * epsilon).ln();
        self.x_bar = 0.0;
        self.s_bar = 0.0;
        self.counter = 0.0;
    }

    fn learn(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let stat = accept_stat.min(1.0);
        let eta = 1.0 / (self.counter + Self::T0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - stat);
        let x = self.mu - self.s_bar * self.counter.sqrt() / Self::GAMMA;
        let x_eta = self.counter.powf(-Self::KAPPA);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    fn final_step_size(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Warmup schedule for the diagonal metric.
#[derive(Debug, Clone)]
struct Windows {
    warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    #[cfg_attr(not(test), allow(dead_code))]
    base_window: usize,
    counter: usize,
    window_size: usize,
    next_window: usize,
    enabled: bool,
}

impl Windows {
    fn new(warmup: usize) -> Self {
        let (mut init_buffer, mut term_buffer, mut base_window) = (75, 50, 25);
        let enabled = warmup >= 20;
        if enabled && init_buffer + base_window + term_buffer > warmup {
            init_buffer = (0.15 * warmup as f64) as usize;
            term_buffer = (0.1 * warmup as f64) as usize;
            base_window = warmup - (init_buffer + term_buffer);
        }
        Windows {
            warmup,
            init_buffer,
            term_buffer,
            base_window,
            counter: 0,
            window_size: base_window,
            next_window: init_buffer + base_window - 1,
            enabled,
        }
    }

    fn in_window(&self) -> bool {
        self.enabled
            && self.counter >= self.init_buffer
            && self.counter < self.warmup - self.term_buffer
            && self.counter != self.warmup
    }

    fn at_window_end(&self) -> bool {
        self.enabled && self.counter == self.next_window && self.counter != self.warmup
    }

    fn compute_next_window(&mut self) {
        let last = self.warmup - self.term_buffer - 1;
        if self.next_window == last {
            return;
        }
        self.window_size *= 2;
        self.next_window = self.counter + self.window_size;
        if self.next_window != last {
            let boundary = self.next_window + 2 * self.window_size;
            if boundary >= self.warmup - self.term_buffer {
                self.next_window = last;
            }
        }
    }
}

/// Welford accumulator for per-coordinate variances.
#[derive(Debug, Clone)]
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Welford {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn add(&mut self, q: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(q) {
            let delta = x - *m;
            *m += delta / n;
            *s += delta * (x - *m);
        }
    }

    /// Regularized variance estimate, shrunk towards `1e-3`.
    fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2
            .iter()
            .map(|&s| {
                let var = if self.n > 1 { s / (n - 1.0) } else { 1.0 };
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

/// Runs one chain from `init`: `warmup` adaptive iterations followed by
/// `draws` iterations with frozen step size and metric.
pub fn run_chain<D: LogDensity>(
    target: &D,
    init: &[f64],
    settings: &NutsSettings,
    rng: &mut ChaCha8Rng,
) -> Result<ChainRun> {
    let dim = target.dim();
    if init.len() != dim {
        return Err(CodaError::DimensionMismatch {
            expected: dim,
            found: init.len(),
        });
    }
    let ham = Hamiltonian {
        target,
        inv_metric: vec![1.0; dim],
    };
    let mut nuts = Nuts {
        ham,
        epsilon: 1.0,
        max_depth: settings.max_depth,
    };
    let mut current = Point {
        q: init.to_vec(),
        p: vec![0.0; dim],
        grad: vec![0.0; dim],
        logp: 0.0,
    };
    nuts.ham.evaluate(&mut current);
    if !current.logp.is_finite() {
        return Err(CodaError::Sampling(
            "log density is not finite at the initial point".into(),
        ));
    }
    nuts.init_step_size(&current, rng)?;

    let mut dual = DualAveraging::new(settings.target_accept, nuts.epsilon);
    let mut windows = Windows::new(settings.warmup);
    let mut welford = Welford::new(dim);
    for _ in 0..settings.warmup {
        let (next, stats) = nuts.transition(&current, rng);
        current = next;
        nuts.epsilon = dual.learn(stats.accept_stat);
        if windows.in_window() {
            welford.add(&current.q);
        }
        if windows.at_window_end() {
            windows.compute_next_window();
            nuts.ham.inv_metric = welford.regularized_variance();
            welford = Welford::new(dim);
            windows.counter += 1;
            nuts.init_step_size(&current, rng)?;
            dual.restart(nuts.epsilon);
        } else {
            windows.counter += 1;
        }
    }
    if settings.warmup > 0 {
        nuts.epsilon = dual.final_step_size();
    }

    let mut positions = Vec::with_capacity(settings.draws * dim);
    let mut stats = Vec::with_capacity(settings.draws);
    for _ in 0..settings.draws {
        let (next, s) = nuts.transition(&current, rng);
        current = next;
        positions.extend_from_slice(&current.q);
        stats.push(s);
    }
    Ok(ChainRun {
        positions,
        stats,
        step_size: nuts.epsilon,
        inv_metric: nuts.ham.inv_metric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    /// Independent normals with given scales.
    struct Gaussian {
        scales: Vec<f64>,
    }

    impl LogDensity for Gaussian {
        fn dim(&self) -> usize {
            self.scales.len()
        }
        fn logp_and_grad(&self, q: &[f64], grad: &mut [f64]) -> f64 {
            let mut lp = 0.0;
            for ((g, &x), &s) in grad.iter_mut().zip(q).zip(&self.scales) {
                lp -= 0.5 * x * x / (s * s);
                *g = -x / (s * s);
            }
            lp
        }
    }

    fn settings() -> NutsSettings {
        NutsSettings {
            warmup: 500,
            draws: 2000,
            target_accept: 0.8,
            max_depth: 10,
        }
    }

    #[test]
    fn recovers_gaussian_moments() {
        let target = Gaussian {
            scales: vec![1.0, 10.0, 0.1],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let run = run_chain(&target, &[0.5, -1.0, 0.2], &settings(), &mut rng).unwrap();
        let n = run.stats.len() as f64;
        for (d, &s) in target.scales.iter().enumerate() {
            let xs: Vec<f64> = run.positions.iter().skip(d).step_by(3).copied().collect();
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            assert!(mean.abs() < 0.15 * s, "mean {mean} scale {s}");
            assert!((var.sqrt() / s - 1.0).abs() < 0.1, "sd {} scale {s}", var.sqrt());
        }
        // the adapted metric should track the variances
        assert!(run.inv_metric[1] > 50.0 && run.inv_metric[2] < 0.05);
        assert!(run.stats.iter().all(|s| !s.divergent));
        let mean_accept = run.stats.iter().map(|s| s.accept_stat).sum::<f64>() / n;
        // averaged step sizes run slightly conservative on low-dimensional
        // targets, so realized acceptance sits at or a little above target
        assert!(mean_accept > 0.7 && mean_accept < 0.97, "accept {mean_accept}");
        assert!(run.step_size > 0.3 && run.step_size < 1.6, "step {}", run.step_size);
    }

    #[test]
    fn deterministic_for_a_seed() {
        let target = Gaussian {
            scales: vec![1.0, 2.0],
        };
        let s = NutsSettings {
            warmup: 100,
            draws: 100,
            ..settings()
        };
        let a = run_chain(&target, &[0.1, 0.2], &s, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = run_chain(&target, &[0.1, 0.2], &s, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a.positions, b.positions);
    }

    #[test]
    fn window_schedule_matches_reference_layout() {
        let mut w = Windows::new(1000);
        let mut ends = Vec::new();
        for _ in 0..1000 {
            if w.at_window_end() {
                ends.push(w.counter);
                w.compute_next_window();
            }
            w.counter += 1;
        }
        assert_eq!(ends, vec![99, 149, 249, 449, 949]);
        let short = Windows::new(100);
        assert_eq!((short.init_buffer, short.term_buffer, short.base_window), (15, 10, 75));
    }

    #[test]
    fn rejects_non_finite_start() {
        struct Bad;
        impl LogDensity for Bad {
            fn dim(&self) -> usize {
                1
            }
            fn logp_and_grad(&self, _: &[f64], g: &mut [f64]) -> f64 {
                g[0] = 0.0;
                f64::NEG_INFINITY
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(run_chain(&Bad, &[0.0], &settings(), &mut rng).is_err());
    }
}
