//! Forward-in-time simulation of the seed-bank diffusion.
//!
//! Two independent routes to the same active-frequency law:
//!
//! * the coupled SDE/ODE system for a discretized measure, advanced by
//!   Euler–Maruyama in `x` and an exact exponential integrator in each `y_i`
//!   (the seed-bank equation is linear in `y` given the active path, so the
//!   integrator is exact for `x` frozen over a step);
//! * the stochastic Volterra equation for `x` alone, discretized with the
//!   full-history convolution, where the kernel is integrated exactly over
//!   every step so that constant states stay fixed to machine precision.
//!
//! The first moments solve a closed linear ODE, which serves as an oracle for
//! both simulators.

use crate::measure::{DiscretizedMeasure, SeedBankMeasure};
use crate::streams::{stream_rng, StreamPurpose};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ForwardError {
    #[error("step size must be positive and at most the horizon")]
    NonpositiveDt,
    #[error("state has {got} seed-bank frequencies but the measure has {expected} atoms")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid state: {0}")]
    InvalidState(String),
}

/// Active frequency plus one dormant frequency per atom of the associated
/// discretized measure. All coordinates live in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    pub t: f64,
    pub x: f64,
    pub y: Vec<f64>,
}

impl DiffusionState {
    pub fn new(x: f64, y: Vec<f64>) -> Result<Self, ForwardError> {
        if !(0.0..=1.0).contains(&x) || !x.is_finite() {
            return Err(ForwardError::InvalidState(format!(
                "active frequency {x} outside [0, 1]"
            )));
        }
        if let Some(bad) = y.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ForwardError::InvalidState(format!(
                "seed-bank frequency {bad} outside [0, 1]"
            )));
        }
        Ok(DiffusionState { t: 0.0, x, y })
    }

    /// All coordinates equal to `p` (an equilibrium of the drift).
    pub fn uniform(p: f64, banks: usize) -> Result<Self, ForwardError> {
        Self::new(p, vec![p; banks])
    }

    fn check_dims(&self, measure: &DiscretizedMeasure) -> Result<(), ForwardError> {
        if self.y.len() != measure.len() {
            return Err(ForwardError::DimensionMismatch {
                expected: measure.len(),
                got: self.y.len(),
            });
        }
        Ok(())
    }
}

/// Step size, horizon, seed and recording stride for a path simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct PathConfig {
    pub dt: f64,
    pub t_max: f64,
    pub seed: u64,
    pub record_stride: usize,
}

impl PathConfig {
    pub fn validate(&self) -> Result<(), ForwardError> {
        if !(self.dt > 0.0) || !(self.t_max > 0.0) || self.dt > self.t_max {
            return Err(ForwardError::NonpositiveDt);
        }
        if self.record_stride == 0 {
            return Err(ForwardError::InvalidState(
                "record_stride must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_max / self.dt).ceil() as usize
    }
}

/// Drift of the active frequency: `Σ c_i y_i - c x`.
pub fn drift_x(state: &DiffusionState, measure: &DiscretizedMeasure) -> Result<f64, ForwardError> {
    state.check_dims(measure)?;
    let inflow: f64 = measure
        .atoms()
        .iter()
        .zip(&state.y)
        .map(|(a, y)| a.mass * y)
        .sum();
    Ok(inflow - measure.total_mass() * state.x)
}

/// One Euler–Maruyama step of `x` (with the supplied Gaussian increment of
/// variance `dt`) and one exact exponential-integrator step of each `y_i`
/// against the pre-step `x`. The new `x` is clamped back into `[0, 1]`.
pub fn em_step(
    state: &DiffusionState,
    measure: &DiscretizedMeasure,
    dt: f64,
    dw: f64,
) -> Result<DiffusionState, ForwardError> {
    if !(dt > 0.0) {
        return Err(ForwardError::NonpositiveDt);
    }
    let drift = drift_x(state, measure)?;
    let sigma = (state.x * (1.0 - state.x)).max(0.0).sqrt();
    let x_new = (state.x + drift * dt + sigma * dw).clamp(0.0, 1.0);
    let y_new = measure
        .atoms()
        .iter()
        .zip(&state.y)
        .map(|(a, &y)| {
            let decay = (-a.rate * dt).exp();
            // Algebraically y' = e^{-λΔ} y + (1 - e^{-λΔ}) x; this form keeps
            // y' == x exact when y == x, which makes the absorbing states of
            // the whole system exact fixed points.
            state.x + decay * (y - state.x)
        })
        .collect();
    Ok(DiffusionState {
        t: state.t + dt,
        x: x_new,
        y: y_new,
    })
}

/// Gaussian increments with variance `dt` for one replicate's noise stream.
pub fn gaussian_increments(seed: u64, replicate: u64, steps: usize, dt: f64) -> Vec<f64> {
    let mut rng = stream_rng(seed, replicate, StreamPurpose::ForwardNoise);
    let scale = dt.sqrt();
    (0..steps)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Sum consecutive groups of `factor` fine increments into coarse ones
/// (Brownian refinement: the same path viewed on a coarser grid).
pub fn aggregate_increments(fine: &[f64], factor: usize) -> Vec<f64> {
    assert!(factor >= 1 && fine.len() % factor == 0);
    fine.chunks(factor).map(|c| c.iter().sum()).collect()
}

/// A recorded path: times plus the full state at each recorded step.
#[derive(Debug, Clone)]
pub struct Path {
    pub times: Vec<f64>,
    pub xs: Vec<f64>,
    pub ys: Vec<Vec<f64>>,
}

impl Path {
    pub fn final_state(&self) -> DiffusionState {
        DiffusionState {
            t: *self.times.last().expect("path has at least the start"),
            x: *self.xs.last().expect("path has at least the start"),
            y: self.ys.last().expect("path has at least the start").clone(),
        }
    }
}

/// Drive a path with explicit noise increments, recording every
/// `record_stride`-th step (plus start and end).
pub fn simulate_path_with_noise(
    z0: &DiffusionState,
    measure: &DiscretizedMeasure,
    dt: f64,
    noise: &[f64],
    record_stride: usize,
) -> Result<Path, ForwardError> {
    z0.check_dims(measure)?;
    if !(dt > 0.0) {
        return Err(ForwardError::NonpositiveDt);
    }
    let steps = noise.len();
    let atoms = measure.atoms();
    let c = measure.total_mass();
    let decay: Vec<f64> = atoms.iter().map(|a| (-a.rate * dt).exp()).collect();

    let mut x = z0.x;
    let mut y = z0.y.clone();
    let mut path = Path {
        times: Vec::with_capacity(steps / record_stride + 2),
        xs: Vec::new(),
        ys: Vec::new(),
    };
    let mut record = |k: usize, x: f64, y: &[f64]| {
        path.times.push(k as f64 * dt);
        path.xs.push(x);
        path.ys.push(y.to_vec());
    };
    record(0, x, &y);
    for (k, &dw) in noise.iter().enumerate() {
        let inflow: f64 = atoms.iter().zip(&y).map(|(a, yv)| a.mass * yv).sum();
        let sigma = (x * (1.0 - x)).max(0.0).sqrt();
        let x_new = (x + (inflow - c * x) * dt + sigma * dw).clamp(0.0, 1.0);
        for (yv, d) in y.iter_mut().zip(&decay) {
            *yv = x + d * (*yv - x);
        }
        x = x_new;
        if (k + 1) % record_stride == 0 || k + 1 == steps {
            record(k + 1, x, &y);
        }
    }
    Ok(path)
}

/// Simulate one path from the config's seed (replicate stream 0).
pub fn simulate_path(
    z0: &DiffusionState,
    measure: &DiscretizedMeasure,
    cfg: &PathConfig,
) -> Result<Path, ForwardError> {
    cfg.validate()?;
    let noise = gaussian_increments(cfg.seed, 0, cfg.steps(), cfg.dt);
    simulate_path_with_noise(z0, measure, cfg.dt, &noise, cfg.record_stride)
}

/// Explicit discretization of the stochastic Volterra equation
/// `X_t = g(t) + c∫K(t-s)X_s ds - c∫X_s ds + ∫√(X(1-X)) dW`:
/// `X` is frozen at the left point of each step while the kernel term
/// `-c(1 - K)` is integrated exactly over the step, so the convolution weight
/// on `X_j` is `-∫ (e^{-λ(t_{k+1}-t_{j+1})} - e^{-λ(t_{k+1}-t_j)})/λ μ(dλ)`.
/// Full-history cost O(steps²) is accepted; this is a correctness route, not
/// a performance path.
pub fn simulate_sve_path<F: Fn(f64) -> f64>(
    x0: f64,
    y0: F,
    measure: &SeedBankMeasure,
    dt: f64,
    noise: &[f64],
) -> Result<Vec<f64>, ForwardError> {
    if !(dt > 0.0) {
        return Err(ForwardError::NonpositiveDt);
    }
    let steps = noise.len();
    // Convolution weights by lag: weight[m] = ∫ over ((m-1)dt, m·dt] of c(1-K).
    let weights: Vec<f64> = (1..=steps)
        .map(|m| measure.kernel_tail_integral((m - 1) as f64 * dt, m as f64 * dt))
        .collect();
    let offsets: Vec<f64> = (0..=steps)
        .map(|k| measure.initial_offset(x0, &y0, k as f64 * dt))
        .collect();

    let mut xs = Vec::with_capacity(steps + 1);
    xs.push(x0.clamp(0.0, 1.0));
    let mut noise_acc = 0.0;
    for k in 0..steps {
        let xk = xs[k];
        noise_acc += (xk * (1.0 - xk)).max(0.0).sqrt() * noise[k];
        let mut conv = 0.0;
        for (j, &xj) in xs.iter().enumerate() {
            conv += weights[k - j] * xj;
        }
        xs.push((offsets[k + 1] - conv + noise_acc).clamp(0.0, 1.0));
    }
    Ok(xs)
}

/// Exact first moments `E[X_t], E[Y_t(λ_i)]`: the generator applied to linear
/// functionals closes into the linear system
/// `dE[X]/dt = Σ c_i E[Y_i] - c E[X]`, `dE[Y_i]/dt = λ_i (E[X] - E[Y_i])`,
/// solved here with RK4 at step 1e-4.
pub fn moment_ode(
    z0: &DiffusionState,
    measure: &DiscretizedMeasure,
    t: f64,
) -> Result<Vec<f64>, ForwardError> {
    z0.check_dims(measure)?;
    let n = measure.len();
    let atoms = measure.atoms();
    let c = measure.total_mass();
    let rhs = |v: &[f64], out: &mut [f64]| {
        let x = v[0];
        let mut inflow = 0.0;
        for (a, &y) in atoms.iter().zip(&v[1..]) {
            inflow += a.mass * y;
        }
        out[0] = inflow - c * x;
        for (i, a) in atoms.iter().enumerate() {
            out[i + 1] = a.rate * (x - v[i + 1]);
        }
    };

    let mut v = Vec::with_capacity(n + 1);
    v.push(z0.x);
    v.extend_from_slice(&z0.y);
    let h: f64 = 1e-4;
    let mut remaining = t;
    let (mut k1, mut k2, mut k3, mut k4) = (
        vec![0.0; n + 1],
        vec![0.0; n + 1],
        vec![0.0; n + 1],
        vec![0.0; n + 1],
    );
    let mut tmp = vec![0.0; n + 1];
    while remaining > 0.0 {
        let step = h.min(remaining);
        rhs(&v, &mut k1);
        for i in 0..=n {
            tmp[i] = v[i] + 0.5 * step * k1[i];
        }
        rhs(&tmp, &mut k2);
        for i in 0..=n {
            tmp[i] = v[i] + 0.5 * step * k2[i];
        }
        rhs(&tmp, &mut k3);
        for i in 0..=n {
            tmp[i] = v[i] + step * k3[i];
        }
        rhs(&tmp, &mut k4);
        for i in 0..=n {
            v[i] += step / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        remaining -= step;
    }
    Ok(v)
}

/// Mean/variance/standard-error of `x` at one recorded time.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct EnsembleRow {
    pub t: f64,
    pub mean_x: f64,
    pub var_x: f64,
    pub se_x: f64,
}

const ENSEMBLE_BLOCK: u64 = 256;

/// Monte Carlo ensemble of independent paths; records `x` statistics at the
/// step indices in `record_steps`. Replicate `r` always consumes stream
/// `(seed, r, ForwardNoise)` and partial sums are combined in block order, so
/// the output is bit-identical however rayon schedules the work.
pub fn simulate_ensemble(
    z0: &DiffusionState,
    measure: &DiscretizedMeasure,
    dt: f64,
    seed: u64,
    reps: u64,
    record_steps: &[usize],
) -> Result<Vec<EnsembleRow>, ForwardError> {
    z0.check_dims(measure)?;
    if !(dt > 0.0) {
        return Err(ForwardError::NonpositiveDt);
    }
    if record_steps.windows(2).any(|w| w[0] > w[1]) {
        return Err(ForwardError::InvalidState(
            "record steps must be nondecreasing".into(),
        ));
    }
    let steps = *record_steps.iter().max().unwrap_or(&0);
    let atoms = measure.atoms();
    let c = measure.total_mass();
    let decay: Vec<f64> = atoms.iter().map(|a| (-a.rate * dt).exp()).collect();
    let n_times = record_steps.len();

    let n_blocks = reps.div_ceil(ENSEMBLE_BLOCK);
    let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..n_blocks)
        .into_par_iter()
        .map(|block| {
            let mut sums = vec![0.0; n_times];
            let mut sumsqs = vec![0.0; n_times];
            let lo = block * ENSEMBLE_BLOCK;
            let hi = ((block + 1) * ENSEMBLE_BLOCK).min(reps);
            let scale = dt.sqrt();
            let mut y = vec![0.0; atoms.len()];
            for r in lo..hi {
                let mut rng = stream_rng(seed, r, StreamPurpose::ForwardNoise);
                let mut x = z0.x;
                y.copy_from_slice(&z0.y);
                let mut slot = 0;
                if record_steps[0] == 0 {
                    sums[0] += x;
                    sumsqs[0] += x * x;
                    slot = 1;
                }
                for k in 1..=steps {
                    let dw: f64 = scale * rng.sample::<f64, _>(StandardNormal);
                    let mut inflow = 0.0;
                    for (a, yv) in atoms.iter().zip(&y) {
                        inflow += a.mass * yv;
                    }
                    let sigma = (x * (1.0 - x)).max(0.0).sqrt();
                    let x_new = (x + (inflow - c * x) * dt + sigma * dw).clamp(0.0, 1.0);
                    for (yv, d) in y.iter_mut().zip(&decay) {
                        *yv = x + d * (*yv - x);
                    }
                    x = x_new;
                    while slot < n_times && record_steps[slot] == k {
                        sums[slot] += x;
                        sumsqs[slot] += x * x;
                        slot += 1;
                    }
                }
            }
            (sums, sumsqs)
        })
        .collect();

    let mut sums = vec![0.0; n_times];
    let mut sumsqs = vec![0.0; n_times];
    for (s, q) in partials {
        for i in 0..n_times {
            sums[i] += s[i];
            sumsqs[i] += q[i];
        }
    }
    let n = reps as f64;
    Ok(record_steps
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let mean = sums[i] / n;
            let var = if reps > 1 {
                ((sumsqs[i] - sums[i] * sums[i] / n) / (n - 1.0)).max(0.0)
            } else {
                0.0
            };
            EnsembleRow {
                t: k as f64 * dt,
                mean_x: mean,
                var_x: var,
                se_x: (var / n).sqrt(),
            }
        })
        .collect())
}

/// Terminal `(x, y)` of `reps` independent paths at `steps·dt`, one stream per
/// replicate, in replicate order.
pub fn terminal_states(
    z0: &DiffusionState,
    measure: &DiscretizedMeasure,
    dt: f64,
    steps: usize,
    seed: u64,
    reps: u64,
) -> Result<Vec<(f64, Vec<f64>)>, ForwardError> {
    z0.check_dims(measure)?;
    if !(dt > 0.0) {
        return Err(ForwardError::NonpositiveDt);
    }
    let atoms = measure.atoms();
    let c = measure.total_mass();
    let decay: Vec<f64> = atoms.iter().map(|a| (-a.rate * dt).exp()).collect();
    Ok((0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r, StreamPurpose::ForwardNoise);
            let scale = dt.sqrt();
            let mut x = z0.x;
            let mut y = z0.y.clone();
            for _ in 0..steps {
                let dw: f64 = scale * rng.sample::<f64, _>(StandardNormal);
                let mut inflow = 0.0;
                for (a, yv) in atoms.iter().zip(&y) {
                    inflow += a.mass * yv;
                }
                let sigma = (x * (1.0 - x)).max(0.0).sqrt();
                let x_new = (x + (inflow - c * x) * dt + sigma * dw).clamp(0.0, 1.0);
                for (yv, d) in y.iter_mut().zip(&decay) {
                    *yv = x + d * (*yv - x);
                }
                x = x_new;
            }
            (x, y)
        })
        .collect())
}
