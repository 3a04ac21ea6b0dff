//! Dormancy-rate measures and their finite discretizations.
//!
//! A seed-bank measure `μ` is a finite Borel measure on `(0, ∞)` weighting a
//! continuum of wake-up rates. Everything downstream (diffusion drift, Volterra
//! kernel, dual jump rates) is driven by its total mass `c`, its first moment
//! `c'`, and the mixture-of-exponentials kernel
//! `K(t) = ∫ (1 - e^{-λt}) μ(dλ) / c`.

use rand::Rng;
use rand_distr::Distribution;
use thiserror::Error;

/// Absolute tolerance for adaptive quadrature of gamma bin masses and moments.
/// Bin masses enter exchange rates linearly, so quadrature error propagates
/// linearly as well.
pub const QUAD_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("degenerate grid: need n_bins >= 1 and a positive finite cutoff")]
    DegenerateGrid,
}

/// One atom of a discrete measure: mass `mass` sitting at wake-up rate `rate`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Atom {
    pub rate: f64,
    pub mass: f64,
}

/// A finite measure on `(0, ∞)`: either finitely many atoms or a
/// gamma-distributed continuum (shape/scale parametrization) with the given
/// total mass.
#[derive(Debug, Clone, PartialEq)]
pub enum SeedBankMeasure {
    Discrete { atoms: Vec<Atom> },
    Gamma { shape: f64, scale: f64, mass: f64 },
}

impl SeedBankMeasure {
    /// Discrete measure from `(rate, mass)` pairs. Atoms are sorted by rate;
    /// rates must be strictly positive, finite and pairwise distinct, masses
    /// strictly positive.
    pub fn discrete(pairs: &[(f64, f64)]) -> Result<Self, MeasureError> {
        if pairs.is_empty() {
            return Err(MeasureError::InvalidMeasure(
                "measure needs at least one atom".into(),
            ));
        }
        let mut atoms: Vec<Atom> = pairs
            .iter()
            .map(|&(rate, mass)| Atom { rate, mass })
            .collect();
        for a in &atoms {
            if !a.rate.is_finite() || a.rate <= 0.0 {
                return Err(MeasureError::InvalidMeasure(format!(
                    "atom rate {} must be positive and finite",
                    a.rate
                )));
            }
            if !a.mass.is_finite() || a.mass <= 0.0 {
                return Err(MeasureError::InvalidMeasure(format!(
                    "atom mass {} must be positive and finite",
                    a.mass
                )));
            }
        }
        atoms.sort_by(|a, b| a.rate.total_cmp(&b.rate));
        if atoms.windows(2).any(|w| w[0].rate == w[1].rate) {
            return Err(MeasureError::InvalidMeasure(
                "atom rates must be pairwise distinct".into(),
            ));
        }
        Ok(SeedBankMeasure::Discrete { atoms })
    }

    /// Gamma measure with density `mass · λ^{a-1} e^{-λ/b} / (Γ(a) b^a)`.
    pub fn gamma(shape: f64, scale: f64, mass: f64) -> Result<Self, MeasureError> {
        for (name, v) in [("shape", shape), ("scale", scale), ("mass", mass)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(MeasureError::InvalidMeasure(format!(
                    "gamma {name} {v} must be positive and finite"
                )));
            }
        }
        Ok(SeedBankMeasure::Gamma { shape, scale, mass })
    }

    /// Total mass `c = μ(0, ∞)`.
    pub fn total_mass(&self) -> f64 {
        match self {
            SeedBankMeasure::Discrete { atoms } => atoms.iter().map(|a| a.mass).sum(),
            SeedBankMeasure::Gamma { mass, .. } => *mass,
        }
    }

    /// First moment `c' = ∫ λ μ(dλ)`.
    pub fn first_moment(&self) -> f64 {
        match self {
            SeedBankMeasure::Discrete { atoms } => atoms.iter().map(|a| a.rate * a.mass).sum(),
            SeedBankMeasure::Gamma { shape, scale, mass } => mass * shape * scale,
        }
    }

    /// `(c, c')` in one call.
    pub fn moments(&self) -> (f64, f64) {
        (self.total_mass(), self.first_moment())
    }

    /// Dormancy-time CDF `K(t) = ∫ (1 - e^{-λt}) μ(dλ) / c`.
    ///
    /// For the gamma family this is the Pareto-type CDF `1 - (1 + bt)^{-a}`.
    pub fn kernel_cdf(&self, t: f64) -> f64 {
        assert!(t >= 0.0, "kernel_cdf needs t >= 0, got {t}");
        match self {
            SeedBankMeasure::Discrete { atoms } => {
                let c = self.total_mass();
                atoms
                    .iter()
                    .map(|a| a.mass * (-(-a.rate * t).exp_m1()))
                    .sum::<f64>()
                    / c
            }
            SeedBankMeasure::Gamma { shape, scale, .. } => {
                -((-shape) * (scale * t).ln_1p()).exp_m1()
            }
        }
    }

    /// `∫_lo^hi c (1 - K(u)) du = ∫ (e^{-λ·lo} - e^{-λ·hi}) / λ μ(dλ)`.
    ///
    /// This is the exact integral of the survival part of the kernel over one
    /// interval; the Volterra scheme uses it as its convolution weight and the
    /// offset `g` is its `y`-weighted sibling.
    pub fn kernel_tail_integral(&self, lo: f64, hi: f64) -> f64 {
        debug_assert!(0.0 <= lo && lo <= hi);
        match self {
            SeedBankMeasure::Discrete { atoms } => atoms
                .iter()
                .map(|a| a.mass * exp_diff_over_rate(a.rate, lo, hi))
                .sum(),
            SeedBankMeasure::Gamma { shape, scale, mass } => {
                // c ∫_lo^hi (1 + b u)^{-a} du, closed form.
                let (a, b) = (*shape, *scale);
                if (a - 1.0).abs() < 1e-12 {
                    mass * ((b * hi).ln_1p() - (b * lo).ln_1p()) / b
                } else {
                    mass * (((1.0 + b * lo).powf(1.0 - a)) - ((1.0 + b * hi).powf(1.0 - a)))
                        / (b * (a - 1.0))
                }
            }
        }
    }

    /// Offset `g(t) = x + ∫ y(λ) (1 - e^{-λt}) / λ μ(dλ)` of the Volterra
    /// equation: the contribution of the initial condition `(x, y)` to the
    /// active frequency at time `t`.
    pub fn initial_offset<F: Fn(f64) -> f64>(&self, x: f64, y: F, t: f64) -> f64 {
        match self {
            SeedBankMeasure::Discrete { atoms } => {
                x + atoms
                    .iter()
                    .map(|a| a.mass * y(a.rate) * exp_diff_over_rate(a.rate, 0.0, t))
                    .sum::<f64>()
            }
            SeedBankMeasure::Gamma { .. } => {
                let f = |lam: f64| y(lam) * one_minus_exp_over(lam, t);
                x + self.gamma_integral_to_infinity(&f)
            }
        }
    }

    /// `μ((lo, hi])` for `0 <= lo < hi`.
    pub fn mass_between(&self, lo: f64, hi: f64) -> f64 {
        match self {
            SeedBankMeasure::Discrete { atoms } => atoms
                .iter()
                .filter(|a| a.rate > lo && a.rate <= hi)
                .map(|a| a.mass)
                .sum(),
            SeedBankMeasure::Gamma { .. } => self.gamma_integral(&|_| 1.0, lo, hi),
        }
    }

    /// Bin `μ` onto the uniform grid `λ_i = i·cutoff/n_bins`, with mass
    /// `c_i = μ((λ_{i-1}, λ_i])` placed at the right endpoint. Zero-mass bins
    /// are dropped. The part of `μ` beyond the cutoff is reported through
    /// `tail_first_moment`.
    pub fn discretize(
        &self,
        n_bins: usize,
        cutoff: f64,
    ) -> Result<DiscretizedMeasure, MeasureError> {
        if n_bins == 0 || !cutoff.is_finite() || cutoff <= 0.0 {
            return Err(MeasureError::DegenerateGrid);
        }
        let mut atoms = Vec::with_capacity(n_bins);
        let mut lo = 0.0;
        for i in 1..=n_bins {
            let hi = (i as f64) * cutoff / (n_bins as f64);
            let mass = self.mass_between(lo, hi);
            if mass > 0.0 {
                atoms.push(Atom { rate: hi, mass });
            }
            lo = hi;
        }
        let covered_first_moment = match self {
            SeedBankMeasure::Discrete { atoms } => atoms
                .iter()
                .filter(|a| a.rate <= cutoff)
                .map(|a| a.rate * a.mass)
                .sum(),
            SeedBankMeasure::Gamma { .. } => self.gamma_integral(&|lam| lam, 0.0, cutoff),
        };
        Ok(DiscretizedMeasure {
            atoms,
            tail_cutoff: cutoff,
            tail_first_moment: (self.first_moment() - covered_first_moment).max(0.0),
        })
    }

    /// Draw a rate `λ ~ μ / c` (the flag distribution of a deactivation).
    pub fn sample_rate<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            SeedBankMeasure::Discrete { atoms } => {
                let c = self.total_mass();
                let u = rng.random::<f64>() * c;
                let mut acc = 0.0;
                for a in atoms {
                    acc += a.mass;
                    if u < acc {
                        return a.rate;
                    }
                }
                atoms.last().expect("measure has atoms").rate
            }
            SeedBankMeasure::Gamma { shape, scale, .. } => {
                rand_distr::Gamma::new(*shape, *scale)
                    .expect("validated gamma parameters")
                    .sample(rng)
            }
        }
    }

    /// `∫_lo^hi f(λ) μ(dλ)` for a gamma measure, by adaptive Simpson quadrature
    /// with absolute tolerance [`QUAD_TOL`]. For shape < 1 the substitution
    /// `λ = v^{1/a}` removes the density singularity at the origin.
    fn gamma_integral(&self, f: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
        let SeedBankMeasure::Gamma { shape, scale, mass } = self else {
            unreachable!("gamma_integral called on a discrete measure");
        };
        let (a, b) = (*shape, *scale);
        if hi <= lo {
            return 0.0;
        }
        let norm = mass * (-ln_gamma(a) - a * b.ln()).exp();
        if a >= 1.0 {
            let g = |lam: f64| {
                if lam <= 0.0 && a > 1.0 {
                    0.0
                } else {
                    f(lam) * lam.powf(a - 1.0) * (-lam / b).exp()
                }
            };
            norm * adaptive_simpson(&g, lo, hi, QUAD_TOL / norm.max(1.0))
        } else {
            // λ = v^{1/a}: λ^{a-1} dλ = dv / a, so the transformed integrand
            // is bounded at the origin.
            let g = |v: f64| {
                let lam = v.powf(1.0 / a);
                f(lam) * (-lam / b).exp() / a
            };
            norm * adaptive_simpson(&g, lo.powf(a), hi.powf(a), QUAD_TOL / norm.max(1.0))
        }
    }

    /// `∫_(0,∞) f(λ) μ(dλ)` for a gamma measure and bounded `f`, by quadrature
    /// up to a tail point where the remaining gamma mass is negligible.
    fn gamma_integral_to_infinity(&self, f: &dyn Fn(f64) -> f64) -> f64 {
        let SeedBankMeasure::Gamma { shape, scale, .. } = self else {
            unreachable!("gamma_integral_to_infinity called on a discrete measure");
        };
        let mut hi = scale * (shape + 40.0 + 12.0 * shape.sqrt());
        let mut total = self.gamma_integral(f, 0.0, hi);
        for _ in 0..16 {
            let segment = self.gamma_integral(f, hi, 2.0 * hi);
            total += segment;
            hi *= 2.0;
            if segment.abs() < QUAD_TOL / 4.0 {
                break;
            }
        }
        total
    }
}

/// `(e^{-λ·lo} - e^{-λ·hi}) / λ`, stable as `λ·t → 0`.
fn exp_diff_over_rate(rate: f64, lo: f64, hi: f64) -> f64 {
    (-rate * lo).exp() * one_minus_exp_over(rate, hi - lo)
}

/// `(1 - e^{-λ t}) / λ`, stable as `λ·t → 0`.
fn one_minus_exp_over(rate: f64, t: f64) -> f64 {
    -(-rate * t).exp_m1() / rate
}

/// The finite surrogate for `μ`: atoms `(λ_i, c_i)` on a grid, plus a record
/// of how much first moment was truncated beyond the cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedMeasure {
    atoms: Vec<Atom>,
    tail_cutoff: f64,
    tail_first_moment: f64,
}

impl DiscretizedMeasure {
    /// Wrap explicit atoms (already distinct and positive) as a discretized
    /// measure with no truncated tail.
    pub fn from_atoms(pairs: &[(f64, f64)]) -> Result<Self, MeasureError> {
        let SeedBankMeasure::Discrete { atoms } = SeedBankMeasure::discrete(pairs)? else {
            unreachable!();
        };
        let tail_cutoff = atoms.last().map(|a| a.rate).unwrap_or(0.0);
        Ok(DiscretizedMeasure {
            atoms,
            tail_cutoff,
            tail_first_moment: 0.0,
        })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }

    pub fn first_moment(&self) -> f64 {
        self.atoms.iter().map(|a| a.rate * a.mass).sum()
    }

    pub fn tail_cutoff(&self) -> f64 {
        self.tail_cutoff
    }

    pub fn tail_first_moment(&self) -> f64 {
        self.tail_first_moment
    }

    /// Index of the atom whose rate equals `rate` exactly (flags are exact
    /// binary marks, so lookup is an exact match).
    pub fn rate_index(&self, rate: f64) -> Option<usize> {
        self.atoms.iter().position(|a| a.rate == rate)
    }

    /// View the atoms as a discrete [`SeedBankMeasure`].
    pub fn to_measure(&self) -> SeedBankMeasure {
        SeedBankMeasure::Discrete {
            atoms: self.atoms.clone(),
        }
    }
}

/// Lanczos approximation of `ln Γ(x)` for `x > 0` (g = 7, 9 coefficients).
pub(crate) fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    debug_assert!(x > 0.0);
    if x < 0.5 {
        // Reflection: Γ(x) Γ(1-x) = π / sin(πx)
        return std::f64::consts::PI.ln()
            - (std::f64::consts::PI * x).sin().ln()
            - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, &c) in COEF.iter().enumerate() {
        acc += c / (x + (i as f64) + 1.0);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
fn adaptive_simpson(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    fn simpson(a: f64, fa: f64, b: f64, fb: f64, fm: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(a, fa, m, fm, flm);
        let right = simpson(m, fm, b, fb, frm);
        let err = left + right - whole;
        if depth == 0 || err.abs() <= 15.0 * tol {
            left + right + err / 15.0
        } else {
            recurse(f, a, fa, m, fm, flm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, fm, b, fb, frm, right, 0.5 * tol, depth - 1)
        }
    }
    if hi <= lo {
        return 0.0;
    }
    let (fa, fb) = (f(lo), f(hi));
    let fm = f(0.5 * (lo + hi));
    let whole = simpson(lo, fa, hi, fb, fm);
    recurse(f, lo, fa, hi, fb, fm, whole, tol, 48)
}
