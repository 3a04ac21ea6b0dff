//! Python bindings: the rate measure, the forward simulators and moment ODE,
//! the dual jump process with its exact small-chain solver, and the duality
//! check.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use seedbank::dual;
use seedbank::duality;
use seedbank::forward;
use seedbank::measure::{DiscretizedMeasure, SeedBankMeasure};
use seedbank::streams::{stream_rng, StreamPurpose};
use seedbank::wright_fisher;

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A finite dormancy-rate measure: discrete atoms or a gamma continuum.
#[pyclass(frozen)]
struct Measure {
    inner: SeedBankMeasure,
}

impl Measure {
    fn atoms(&self) -> PyResult<DiscretizedMeasure> {
        match &self.inner {
            SeedBankMeasure::Discrete { atoms } => {
                let pairs: Vec<(f64, f64)> = atoms.iter().map(|a| (a.rate, a.mass)).collect();
                DiscretizedMeasure::from_atoms(&pairs).map_err(value_err)
            }
            SeedBankMeasure::Gamma { .. } => Err(PyValueError::new_err(
                "this operation needs a discrete measure; call discretize() first",
            )),
        }
    }
}

#[pymethods]
impl Measure {
    /// Measure from `(rate, mass)` atom pairs.
    #[staticmethod]
    fn discrete(atoms: Vec<(f64, f64)>) -> PyResult<Self> {
        Ok(Measure {
            inner: SeedBankMeasure::discrete(&atoms).map_err(value_err)?,
        })
    }

    /// Gamma measure with the given shape, scale and total mass.
    #[staticmethod]
    fn gamma(shape: f64, scale: f64, mass: f64) -> PyResult<Self> {
        Ok(Measure {
            inner: SeedBankMeasure::gamma(shape, scale, mass).map_err(value_err)?,
        })
    }

    /// `(total mass c, first moment c')`.
    fn moments(&self) -> (f64, f64) {
        self.inner.moments()
    }

    /// Dormancy-time CDF `K(t)`.
    fn kernel_cdf(&self, t: f64) -> f64 {
        self.inner.kernel_cdf(t)
    }

    /// Volterra offset `g(t)` for a constant initial dormant frequency.
    fn initial_offset(&self, x: f64, y: f64, t: f64) -> f64 {
        self.inner.initial_offset(x, |_| y, t)
    }

    /// Bin onto `λ_i = i·cutoff/bins`; returns `(atoms, tail_first_moment)`.
    fn discretize(&self, bins: usize, cutoff: f64) -> PyResult<(Vec<(f64, f64)>, f64)> {
        let d = self.inner.discretize(bins, cutoff).map_err(value_err)?;
        Ok((
            d.atoms().iter().map(|a| (a.rate, a.mass)).collect(),
            d.tail_first_moment(),
        ))
    }

    /// Draw `n` flag rates `λ ~ μ/c`.
    fn sample_rates(&self, seed: u64, n: usize) -> Vec<f64> {
        let mut rng = stream_rng(seed, 0, StreamPurpose::DualChain);
        (0..n).map(|_| self.inner.sample_rate(&mut rng)).collect()
    }

    fn __repr__(&self) -> String {
        match &self.inner {
            SeedBankMeasure::Discrete { atoms } => format!("Measure.discrete({} atoms)", atoms.len()),
            SeedBankMeasure::Gamma { shape, scale, mass } => {
                format!("Measure.gamma(shape={shape}, scale={scale}, mass={mass})")
            }
        }
    }
}

/// One Euler path of the coupled diffusion; returns `(times, xs, ys)`.
#[pyfunction]
#[pyo3(signature = (measure, x0, y0, dt, t_max, seed, record_stride = 1))]
fn simulate_forward(
    measure: &Measure,
    x0: f64,
    y0: Vec<f64>,
    dt: f64,
    t_max: f64,
    seed: u64,
    record_stride: usize,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<Vec<f64>>)> {
    let atoms = measure.atoms()?;
    let z0 = forward::DiffusionState::new(x0, y0).map_err(value_err)?;
    let steps = (t_max / dt).ceil() as usize;
    let noise = forward::gaussian_increments(seed, 0, steps, dt);
    let path = forward::simulate_path_with_noise(&z0, &atoms, dt, &noise, record_stride)
        .map_err(value_err)?;
    Ok((path.times, path.xs, path.ys))
}

/// Ensemble mean/variance/standard error of `x` at the given step indices;
/// returns rows `(t, mean_x, var_x, se_x)`.
#[pyfunction]
fn forward_ensemble(
    measure: &Measure,
    x0: f64,
    y0: Vec<f64>,
    dt: f64,
    seed: u64,
    reps: u64,
    record_steps: Vec<usize>,
) -> PyResult<Vec<(f64, f64, f64, f64)>> {
    let atoms = measure.atoms()?;
    let z0 = forward::DiffusionState::new(x0, y0).map_err(value_err)?;
    let rows = forward::simulate_ensemble(&z0, &atoms, dt, seed, reps, &record_steps)
        .map_err(value_err)?;
    Ok(rows
        .iter()
        .map(|r| (r.t, r.mean_x, r.var_x, r.se_x))
        .collect())
}

/// Exact first moments `[E[X_t], E[Y_t(λ_1)], ...]`.
#[pyfunction]
fn moment_ode(measure: &Measure, x0: f64, y0: Vec<f64>, t: f64) -> PyResult<Vec<f64>> {
    let atoms = measure.atoms()?;
    let z0 = forward::DiffusionState::new(x0, y0).map_err(value_err)?;
    forward::moment_ode(&z0, &atoms, t).map_err(value_err)
}

/// One path of the stochastic Volterra equation with constant initial dormant
/// frequency; returns `(times, xs)`.
#[pyfunction]
fn simulate_sve(
    measure: &Measure,
    x0: f64,
    y0: f64,
    dt: f64,
    t_max: f64,
    seed: u64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let steps = (t_max / dt).ceil() as usize;
    let noise = forward::gaussian_increments(seed, 0, steps, dt);
    let xs = forward::simulate_sve_path(x0, |_| y0, &measure.inner, dt, &noise)
        .map_err(value_err)?;
    let times = (0..=steps).map(|k| k as f64 * dt).collect();
    Ok((times, xs))
}

/// Run the block-counting dual to time `t`; returns `(n, [(rate, mult)..])`.
#[pyfunction]
fn simulate_dual(
    measure: &Measure,
    n: u64,
    flags: Vec<(f64, u64)>,
    t: f64,
    seed: u64,
) -> PyResult<(u64, Vec<(f64, u64)>)> {
    let s0 = dual::DualState::new(n, &flags).map_err(value_err)?;
    let mut rng = stream_rng(seed, 0, StreamPurpose::DualChain);
    let (s, _) = dual::simulate_dual(&s0, &measure.inner, t, &mut rng);
    Ok((s.active(), s.dormant().to_vec()))
}

/// Exact `E[x^{N_t} ∏ y_i^{m_i}]` for a small dual chain on a discrete
/// measure; `y` is indexed like the measure's atoms.
#[pyfunction]
fn dual_moment_exact(
    measure: &Measure,
    n: u64,
    flags: Vec<(f64, u64)>,
    x: f64,
    y: Vec<f64>,
    t: f64,
) -> PyResult<f64> {
    let atoms = measure.atoms()?;
    if y.len() != atoms.len() {
        return Err(PyValueError::new_err(format!(
            "{} y-values for {} atoms",
            y.len(),
            atoms.len()
        )));
    }
    let s0 = dual::DualState::new(n, &flags).map_err(value_err)?;
    let lookup = move |rate: f64| {
        atoms
            .rate_index(rate)
            .map(|i| y[i])
            .unwrap_or(f64::NAN)
    };
    dual::dual_moment_exact(&s0, x, lookup, &measure.inner, t).map_err(value_err)
}

/// Monte Carlo duality check; returns a dict with both sides, the z-score and
/// the 3σ verdict.
#[pyfunction]
#[pyo3(signature = (measure, x0, y0, n, flags, t, reps, dt, seed))]
#[allow(clippy::too_many_arguments)]
fn duality_check<'py>(
    py: Python<'py>,
    measure: &Measure,
    x0: f64,
    y0: Vec<f64>,
    n: u64,
    flags: Vec<(f64, u64)>,
    t: f64,
    reps: u64,
    dt: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let atoms = measure.atoms()?;
    if y0.len() != atoms.len() {
        return Err(PyValueError::new_err(format!(
            "{} y-values for {} atoms",
            y0.len(),
            atoms.len()
        )));
    }
    let z0 = forward::DiffusionState::new(x0, y0.clone()).map_err(value_err)?;
    let s0 = dual::DualState::new(n, &flags).map_err(value_err)?;
    let fwd = duality::forward_side(&z0, &s0, &atoms, t, reps, dt, seed).map_err(value_err)?;
    let rates: Vec<f64> = atoms.atoms().iter().map(|a| a.rate).collect();
    let y_at = move |rate: f64| {
        rates
            .iter()
            .position(|r| *r == rate)
            .map(|i| y0[i])
            .unwrap_or(f64::NAN)
    };
    let dual_est = duality::dual_side(x0, y_at, &s0, &measure.inner, t, reps, seed);
    let gap = duality::duality_gap(&fwd, &dual_est).map_err(value_err)?;
    let out = PyDict::new(py);
    out.set_item("forward", fwd.value)?;
    out.set_item("forward_se", fwd.se)?;
    out.set_item("dual", dual_est.value)?;
    out.set_item("dual_se", dual_est.se)?;
    out.set_item("z", gap.z)?;
    out.set_item("pass", gap.pass)?;
    Ok(out)
}

/// Size the discrete Wright-Fisher model for a measure; returns
/// `(c, [(size, mass, rate)..])`.
#[pyfunction]
#[pyo3(signature = (measure, active_size, bins = None, cutoff = None))]
fn build_wf_model(
    measure: &Measure,
    active_size: u64,
    bins: Option<usize>,
    cutoff: Option<f64>,
) -> PyResult<(u64, Vec<(u64, f64, f64)>)> {
    let params = wright_fisher::build_model(&measure.inner, active_size, bins.zip(cutoff))
        .map_err(value_err)?;
    Ok((
        params.migration_count,
        params
            .banks
            .iter()
            .map(|b| (b.size, b.mass, b.rate))
            .collect(),
    ))
}

/// Mean embedded active frequency of the rescaled Wright-Fisher chain at
/// `t_max`; returns `(mean, se)`.
#[pyfunction]
#[pyo3(signature = (measure, active_size, x0, y0, t_max, reps, seed, bins = None, cutoff = None))]
#[allow(clippy::too_many_arguments)]
fn wf_rescaled_mean(
    measure: &Measure,
    active_size: u64,
    x0: f64,
    y0: f64,
    t_max: f64,
    reps: u64,
    seed: u64,
    bins: Option<usize>,
    cutoff: Option<f64>,
) -> PyResult<(f64, f64)> {
    let params = wright_fisher::build_model(&measure.inner, active_size, bins.zip(cutoff))
        .map_err(value_err)?;
    let y = vec![y0; params.banks.len()];
    let z0 = wright_fisher::WfState::from_frequencies_rounded(x0, &y, &params)
        .map_err(value_err)?;
    let total = (active_size as f64 * t_max).floor() as u64;
    let rows = wright_fisher::rescaled_ensemble(&params, &z0, t_max, reps, seed, &[total])
        .map_err(value_err)?;
    Ok((rows[0].mean_x, rows[0].se_x))
}

#[pymodule]
fn seedbank_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Measure>()?;
    m.add_function(wrap_pyfunction!(simulate_forward, m)?)?;
    m.add_function(wrap_pyfunction!(forward_ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(moment_ode, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_sve, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_dual, m)?)?;
    m.add_function(wrap_pyfunction!(dual_moment_exact, m)?)?;
    m.add_function(wrap_pyfunction!(duality_check, m)?)?;
    m.add_function(wrap_pyfunction!(build_wf_model, m)?)?;
    m.add_function(wrap_pyfunction!(wf_rescaled_mean, m)?)?;
    Ok(())
}
