//! The discrete-time Wright–Fisher model with finitely many seed-banks.
//!
//! A fixed active population of size `N` exchanges exactly `c` individuals per
//! generation with the banks: the `c` emigrants pick banks multinomially with
//! weights `c_i/c`, an equal number of dormant individuals (sampled without
//! replacement) wakes up from each chosen bank. Bank `i` has size
//! `M_i = c_i N / λ_i`, which ties the wake-up rate `λ_i` of the embedded
//! diffusion to the bank geometry. Sped up by a factor `N`, the embedded
//! frequency process approaches the seed-bank diffusion for the binned
//! measure.

use crate::forward::DiffusionState;
use crate::measure::{DiscretizedMeasure, MeasureError, SeedBankMeasure};
use crate::sampling::{hypergeometric, multinomial_counts};
use crate::streams::{stream_rng, StreamPurpose};
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WfError {
    #[error("total measure mass {0} is not a positive integer migration count")]
    NonIntegerMass(f64),
    #[error(
        "bank too small: bins {rates:?} would get fewer than c = {c} members \
         (dropped mass {dropped_mass})"
    )]
    BankTooSmall {
        rates: Vec<f64>,
        dropped_mass: f64,
        c: u64,
    },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// One seed-bank: `size` dormant slots, migration share `mass`, and the
/// wake-up rate `rate = mass · N / size` (held exactly by construction).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bank {
    pub size: u64,
    pub mass: f64,
    pub rate: f64,
}

/// Model geometry: active size `N`, integer migration count `c = Σ c_i`, and
/// the banks.
#[derive(Debug, Clone, PartialEq)]
pub struct WfParams {
    pub active_size: u64,
    pub migration_count: u64,
    pub banks: Vec<Bank>,
}

impl WfParams {
    /// Assemble a model from explicit `(mass, size)` bank specs; rates are
    /// derived as `mass·N/size`.
    pub fn new(active_size: u64, specs: &[(f64, u64)]) -> Result<Self, WfError> {
        if specs.is_empty() {
            return Err(WfError::InvalidParams("model needs at least one bank".into()));
        }
        let mass_total: f64 = specs.iter().map(|s| s.0).sum();
        let c = mass_total.round();
        if c < 1.0 || (mass_total - c).abs() > 1e-9 {
            return Err(WfError::NonIntegerMass(mass_total));
        }
        let c = c as u64;
        if active_size < c {
            return Err(WfError::InvalidParams(format!(
                "active size {active_size} smaller than migration count {c}"
            )));
        }
        let mut banks = Vec::with_capacity(specs.len());
        for &(mass, size) in specs {
            if mass <= 0.0 || size == 0 {
                return Err(WfError::InvalidParams(format!(
                    "bank with mass {mass} and size {size}"
                )));
            }
            if size < c {
                return Err(WfError::BankTooSmall {
                    rates: vec![mass * active_size as f64 / size as f64],
                    dropped_mass: mass,
                    c,
                });
            }
            banks.push(Bank {
                size,
                mass,
                rate: mass * active_size as f64 / size as f64,
            });
        }
        Ok(WfParams {
            active_size,
            migration_count: c,
            banks,
        })
    }

    /// The atoms `(λ_i, c_i)` this model embeds into.
    pub fn discretized_measure(&self) -> Result<DiscretizedMeasure, WfError> {
        let pairs: Vec<(f64, f64)> = self.banks.iter().map(|b| (b.rate, b.mass)).collect();
        Ok(DiscretizedMeasure::from_atoms(&pairs)?)
    }
}

/// Bin a measure and size the banks: `M_i = round(c_i N / λ_i)`, with `λ_i`
/// recomputed as `c_i N / M_i` so the embedding identity holds exactly. For a
/// discrete measure, `grid = None` uses its atoms directly. Bins whose bank
/// would end up smaller than `c` are rejected with their mass reported.
pub fn build_model(
    mu: &SeedBankMeasure,
    active_size: u64,
    grid: Option<(usize, f64)>,
) -> Result<WfParams, WfError> {
    let mass_total = mu.total_mass();
    let c = mass_total.round();
    if c < 1.0 || (mass_total - c).abs() > 1e-9 {
        return Err(WfError::NonIntegerMass(mass_total));
    }
    let c_int = c as u64;
    if active_size < c_int {
        return Err(WfError::InvalidParams(format!(
            "active size {active_size} smaller than migration count {c_int}"
        )));
    }
    let mut atoms: Vec<(f64, f64)> = match (grid, mu) {
        (Some((n_bins, cutoff)), _) => mu
            .discretize(n_bins, cutoff)?
            .atoms()
            .iter()
            .map(|a| (a.rate, a.mass))
            .collect(),
        (None, SeedBankMeasure::Discrete { atoms }) => {
            atoms.iter().map(|a| (a.rate, a.mass)).collect()
        }
        (None, SeedBankMeasure::Gamma { .. }) => {
            return Err(WfError::InvalidParams(
                "a gamma measure needs a discretization grid (bins, cutoff)".into(),
            ));
        }
    };
    // Exactly c individuals migrate, so the bin masses are multinomial
    // weights and must sum to c. Truncating a continuum measure at the
    // cutoff loses tail mass; rescale what is kept (a no-op when the
    // discretization is lossless).
    let kept: f64 = atoms.iter().map(|a| a.1).sum();
    if kept <= 0.0 {
        return Err(WfError::InvalidParams(
            "discretization kept no mass below the cutoff".into(),
        ));
    }
    let scale = c / kept;
    for atom in &mut atoms {
        atom.1 *= scale;
    }
    let mut too_small: Vec<f64> = Vec::new();
    let mut dropped_mass = 0.0;
    let mut specs = Vec::with_capacity(atoms.len());
    for &(rate, mass) in &atoms {
        let size = (mass * active_size as f64 / rate).round();
        if size < c || size < 1.0 {
            too_small.push(rate);
            dropped_mass += mass;
        } else {
            specs.push((mass, size as u64));
        }
    }
    if !too_small.is_empty() {
        return Err(WfError::BankTooSmall {
            rates: too_small,
            dropped_mass,
            c: c_int,
        });
    }
    WfParams::new(active_size, &specs)
}

/// Lattice state: type-A counts in the active population and in each bank.
#[derive(Debug, Clone, PartialEq)]
pub struct WfState {
    pub active_a: u64,
    pub bank_a: Vec<u64>,
}

impl WfState {
    pub fn new(active_a: u64, bank_a: Vec<u64>, params: &WfParams) -> Result<Self, WfError> {
        let s = WfState { active_a, bank_a };
        s.validate(params)?;
        Ok(s)
    }

    /// Map frequencies onto the lattice; each must sit on its grid exactly.
    pub fn from_frequencies(x: f64, y: &[f64], params: &WfParams) -> Result<Self, WfError> {
        let to_count = |freq: f64, size: u64, what: &str| -> Result<u64, WfError> {
            let count = (freq * size as f64).round();
            if !(0.0..=1.0).contains(&freq) || (freq - count / size as f64).abs() > 1e-9 {
                return Err(WfError::InvalidState(format!(
                    "{what} frequency {freq} is not a multiple of 1/{size}"
                )));
            }
            Ok(count as u64)
        };
        if y.len() != params.banks.len() {
            return Err(WfError::InvalidState(format!(
                "{} bank frequencies for {} banks",
                y.len(),
                params.banks.len()
            )));
        }
        let active_a = to_count(x, params.active_size, "active")?;
        let bank_a = y
            .iter()
            .zip(&params.banks)
            .map(|(&f, b)| to_count(f, b.size, "bank"))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(WfState { active_a, bank_a })
    }

    /// Nearest lattice state to the given frequencies (the CLI entry point;
    /// exact embedding then starts from the rounded state).
    pub fn from_frequencies_rounded(x: f64, y: &[f64], params: &WfParams) -> Result<Self, WfError> {
        if y.len() != params.banks.len() {
            return Err(WfError::InvalidState(format!(
                "{} bank frequencies for {} banks",
                y.len(),
                params.banks.len()
            )));
        }
        if !(0.0..=1.0).contains(&x) || y.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(WfError::InvalidState(
                "frequencies must lie in [0, 1]".into(),
            ));
        }
        let active_a = (x * params.active_size as f64).round() as u64;
        let bank_a = y
            .iter()
            .zip(&params.banks)
            .map(|(&f, b)| (f * b.size as f64).round() as u64)
            .collect();
        Ok(WfState { active_a, bank_a })
    }

    pub fn validate(&self, params: &WfParams) -> Result<(), WfError> {
        if self.active_a > params.active_size {
            return Err(WfError::InvalidState(format!(
                "active count {} exceeds population size {}",
                self.active_a, params.active_size
            )));
        }
        if self.bank_a.len() != params.banks.len() {
            return Err(WfError::InvalidState(format!(
                "{} bank counts for {} banks",
                self.bank_a.len(),
                params.banks.len()
            )));
        }
        for (count, bank) in self.bank_a.iter().zip(&params.banks) {
            if *count > bank.size {
                return Err(WfError::InvalidState(format!(
                    "bank count {count} exceeds bank size {}",
                    bank.size
                )));
            }
        }
        Ok(())
    }

    pub fn x(&self, params: &WfParams) -> f64 {
        self.active_a as f64 / params.active_size as f64
    }
}

/// One generation: emigrant bank choices `C ~ Multinomial(c; c_i/c)`, then
/// `U ~ Bin(N-c, x)`, `V_i ~ Bin(C_i, x)`, `Z_i ~ Hyp(M_i, y_i M_i, C_i)`,
/// and the bookkeeping `x' = (U + ΣZ_i)/N`, `y_i' = (y_i M_i - Z_i + V_i)/M_i`.
/// Banks with `C_i = 0` consume no randomness.
pub fn wf_step<R: Rng + ?Sized>(
    state: &WfState,
    params: &WfParams,
    rng: &mut R,
) -> Result<WfState, WfError> {
    state.validate(params)?;
    let n = params.active_size;
    let c = params.migration_count;
    let x = state.active_a as f64 / n as f64;

    let weights: Vec<f64> = params.banks.iter().map(|b| b.mass).collect();
    let entrants = multinomial_counts(rng, c, &weights);

    let active_offspring = Binomial::new(n - c, x)
        .expect("frequency is a probability")
        .sample(rng);

    let mut active_a = active_offspring;
    let mut bank_a = Vec::with_capacity(params.banks.len());
    for ((&count, bank), &dormant_a) in entrants.iter().zip(&params.banks).zip(&state.bank_a) {
        if count == 0 {
            bank_a.push(dormant_a);
            continue;
        }
        let new_dormant_a = Binomial::new(count, x)
            .expect("frequency is a probability")
            .sample(rng);
        let woken_a = hypergeometric(rng, bank.size, dormant_a, count);
        active_a += woken_a;
        bank_a.push(dormant_a - woken_a + new_dormant_a);
    }
    Ok(WfState { active_a, bank_a })
}

/// Map the lattice state onto diffusion coordinates aligned with the banks'
/// `(λ_i, c_i)` atoms.
pub fn embed(state: &WfState, params: &WfParams) -> DiffusionState {
    DiffusionState {
        t: 0.0,
        x: state.x(params),
        y: state
            .bank_a
            .iter()
            .zip(&params.banks)
            .map(|(&a, b)| a as f64 / b.size as f64)
            .collect(),
    }
}

/// Ensemble of chains run for `⌊N·t_max⌋` generations; records the embedded
/// active frequency at the requested generation indices (diffusion time
/// `k/N`). Deterministic for fixed `(seed, replicate)` regardless of
/// scheduling.
pub fn rescaled_ensemble(
    params: &WfParams,
    z0: &WfState,
    t_max: f64,
    reps: u64,
    seed: u64,
    record_generations: &[u64],
) -> Result<Vec<crate::forward::EnsembleRow>, WfError> {
    z0.validate(params)?;
    if !(t_max > 0.0) || reps == 0 {
        return Err(WfError::InvalidParams(
            "need a positive horizon and at least one replicate".into(),
        ));
    }
    if record_generations.windows(2).any(|w| w[0] > w[1]) {
        return Err(WfError::InvalidParams(
            "record generations must be nondecreasing".into(),
        ));
    }
    let total_steps = (params.active_size as f64 * t_max).floor() as u64;
    let n_times = record_generations.len();
    const BLOCK: u64 = 64;
    let n_blocks = reps.div_ceil(BLOCK);
    let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..n_blocks)
        .into_par_iter()
        .map(|block| {
            let mut sums = vec![0.0; n_times];
            let mut sumsqs = vec![0.0; n_times];
            for r in block * BLOCK..((block + 1) * BLOCK).min(reps) {
                let mut rng = stream_rng(seed, r, StreamPurpose::WfChain);
                let mut state = z0.clone();
                let mut slot = 0;
                while slot < n_times && record_generations[slot] == 0 {
                    let x = state.x(params);
                    sums[slot] += x;
                    sumsqs[slot] += x * x;
                    slot += 1;
                }
                for k in 1..=total_steps {
                    state = wf_step(&state, params, &mut rng)
                        .expect("step preserves state validity");
                    while slot < n_times && record_generations[slot] == k {
                        let x = state.x(params);
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
    Ok(record_generations
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let mean = sums[i] / n;
            let var = if reps > 1 {
                ((sumsqs[i] - sums[i] * sums[i] / n) / (n - 1.0)).max(0.0)
            } else {
                0.0
            };
            crate::forward::EnsembleRow {
                t: k as f64 / params.active_size as f64,
                mean_x: mean,
                var_x: var,
                se_x: (var / n).sqrt(),
            }
        })
        .collect())
}
