//! The dual side: the block-counting jump process `(N_t, M_t)`, the marked
//! partition coalescent it counts, the discrete-time ancestral chain of the
//! Wright–Fisher model, and an exact transient solver for small dual chains.
//!
//! Transition rates of `(n, m)`:
//!
//! * deactivation `(n-1, m+δ_λ)` at total rate `c·n`, the flag drawn from
//!   `μ/c`;
//! * reactivation `(n+1, m-δ_λ)` at rate `λ·m({λ})` per held flag;
//! * pairwise coalescence `(n-1, m)` at rate `n(n-1)/2`.
//!
//! Flags are exact binary `f64` marks: reactivating "a λ becomes 0" and the
//! multiplicity lookups are exact key matches.

use crate::measure::SeedBankMeasure;
use crate::wright_fisher::WfParams;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DualError {
    #[error("state is absorbing: total jump rate is zero")]
    AbsorbingState,
    #[error("invalid dual state: {0}")]
    InvalidState(String),
    #[error("state space too large for the exact solver: {0}")]
    StateSpaceTooLarge(String),
    #[error("flag {0} is not an atom of the measure")]
    FlagNotInMeasure(f64),
    #[error("flag {0} is not a bank rate of the model")]
    FlagNotInModel(f64),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// `(n, m)`: active block count plus a finite integer-valued measure of
/// dormant blocks keyed by their wake-up rate. Multiplicities are at least 1;
/// zero entries are removed.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    active: u64,
    dormant: Vec<(f64, u64)>,
}

impl DualState {
    pub fn new(active: u64, dormant: &[(f64, u64)]) -> Result<Self, DualError> {
        let mut d: Vec<(f64, u64)> = Vec::with_capacity(dormant.len());
        for &(rate, mult) in dormant {
            if !rate.is_finite() || rate <= 0.0 {
                return Err(DualError::InvalidState(format!(
                    "flag rate {rate} must be positive and finite"
                )));
            }
            if mult == 0 {
                return Err(DualError::InvalidState(
                    "zero multiplicities must be removed".into(),
                ));
            }
            d.push((rate, mult));
        }
        d.sort_by(|a, b| a.0.total_cmp(&b.0));
        if d.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(DualError::InvalidState(
                "flag rates must be unique keys".into(),
            ));
        }
        Ok(DualState { active, dormant: d })
    }

    pub fn active(&self) -> u64 {
        self.active
    }

    pub fn dormant(&self) -> &[(f64, u64)] {
        &self.dormant
    }

    /// `n + Σ m`: never increases along a trajectory, and drops by exactly
    /// one at coalescence events.
    pub fn total_count(&self) -> u64 {
        self.active + self.dormant.iter().map(|d| d.1).sum::<u64>()
    }

    fn add_flag(&mut self, rate: f64) {
        match self.dormant.iter_mut().find(|d| d.0 == rate) {
            Some(entry) => entry.1 += 1,
            None => {
                self.dormant.push((rate, 1));
                self.dormant.sort_by(|a, b| a.0.total_cmp(&b.0));
            }
        }
    }

    fn remove_flag(&mut self, rate: f64) {
        let idx = self
            .dormant
            .iter()
            .position(|d| d.0 == rate)
            .expect("flag present");
        if self.dormant[idx].1 == 1 {
            self.dormant.remove(idx);
        } else {
            self.dormant[idx].1 -= 1;
        }
    }
}

/// `c_{n,m} = c·n + ∫λ m(dλ) + n(n-1)/2`, the holding-rate of the state.
pub fn total_rate(state: &DualState, mu: &SeedBankMeasure) -> f64 {
    let n = state.active as f64;
    mu.total_mass() * n
        + state
            .dormant
            .iter()
            .map(|&(rate, mult)| rate * mult as f64)
            .sum::<f64>()
        + n * (n - 1.0) / 2.0
}

/// What a dual jump did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DualEventKind {
    Deactivate,
    Reactivate,
    Coalesce,
}

#[derive(Debug, Clone, Copy)]
pub struct DualEvent {
    pub time: f64,
    pub kind: DualEventKind,
    /// Flag rate for (de)activations.
    pub rate: Option<f64>,
}

/// One jump: exponential holding time at rate `c_{n,m}`, event chosen with
/// probabilities `(c·n, λ·m(λ), n(n-1)/2)/c_{n,m}` in that order, and the
/// deactivation flag drawn from `μ/c`.
pub fn dual_step<R: Rng + ?Sized>(
    state: &DualState,
    mu: &SeedBankMeasure,
    rng: &mut R,
) -> Result<(f64, DualState, DualEvent), DualError> {
    let rate = total_rate(state, mu);
    if rate <= 0.0 {
        return Err(DualError::AbsorbingState);
    }
    let holding = -(1.0 - rng.random::<f64>()).ln() / rate;
    let mut next = state.clone();
    let pick = rng.random::<f64>() * rate;

    let deactivation = mu.total_mass() * state.active as f64;
    if pick < deactivation {
        let flag = mu.sample_rate(rng);
        next.active -= 1;
        next.add_flag(flag);
        return Ok((
            holding,
            next,
            DualEvent {
                time: holding,
                kind: DualEventKind::Deactivate,
                rate: Some(flag),
            },
        ));
    }
    let mut acc = deactivation;
    for &(flag, mult) in &state.dormant {
        acc += flag * mult as f64;
        if pick < acc {
            next.active += 1;
            next.remove_flag(flag);
            return Ok((
                holding,
                next,
                DualEvent {
                    time: holding,
                    kind: DualEventKind::Reactivate,
                    rate: Some(flag),
                },
            ));
        }
    }
    next.active -= 1;
    Ok((
        holding,
        next,
        DualEvent {
            time: holding,
            kind: DualEventKind::Coalesce,
            rate: None,
        },
    ))
}

/// Gillespie simulation until the clock passes `t` or the state absorbs.
/// Returns the state at `t` and the event log.
pub fn simulate_dual<R: Rng + ?Sized>(
    s0: &DualState,
    mu: &SeedBankMeasure,
    t: f64,
    rng: &mut R,
) -> (DualState, Vec<DualEvent>) {
    let mut state = s0.clone();
    let mut clock = 0.0;
    let mut log = Vec::new();
    loop {
        match dual_step(&state, mu, rng) {
            Err(DualError::AbsorbingState) => break,
            Err(_) => unreachable!("dual_step only fails on absorption"),
            Ok((holding, next, mut event)) => {
                if clock + holding > t {
                    break;
                }
                clock += holding;
                event.time = clock;
                log.push(event);
                state = next;
            }
        }
    }
    (state, log)
}

/// Exact `E[x^{N_t} ∏ y(λ)^{m_t(λ)}]` for a discrete measure, by enumerating
/// the reachable states (flags on the atoms, total count bounded by the
/// initial one) and applying the uniformized matrix exponential of the rate
/// matrix. Guarded to at most 4 atoms and initial total count 6.
pub fn dual_moment_exact<F: Fn(f64) -> f64>(
    s0: &DualState,
    x: f64,
    y: F,
    mu: &SeedBankMeasure,
    t: f64,
) -> Result<f64, DualError> {
    let SeedBankMeasure::Discrete { atoms } = mu else {
        return Err(DualError::InvalidParams(
            "the exact solver needs a discrete measure".into(),
        ));
    };
    if atoms.len() > 4 {
        return Err(DualError::StateSpaceTooLarge(format!(
            "{} atoms (max 4)",
            atoms.len()
        )));
    }
    let total = s0.total_count();
    if total > 6 {
        return Err(DualError::StateSpaceTooLarge(format!(
            "initial total count {total} (max 6)"
        )));
    }
    for &(flag, _) in &s0.dormant {
        if !atoms.iter().any(|a| a.rate == flag) {
            return Err(DualError::FlagNotInMeasure(flag));
        }
    }

    // Enumerate states (n, multiplicity vector over atoms) with
    // n + Σm ≤ total, ordered lexicographically by (n, m).
    let k = atoms.len();
    let mut states: Vec<(u64, Vec<u64>)> = Vec::new();
    let mut mults = vec![0u64; k];
    loop {
        let used: u64 = mults.iter().sum();
        if used <= total {
            for n in 0..=(total - used) {
                states.push((n, mults.clone()));
            }
        }
        // Odometer over multiplicity vectors bounded by the total count.
        let mut pos = 0;
        loop {
            if pos == k {
                break;
            }
            mults[pos] += 1;
            if mults.iter().sum::<u64>() <= total {
                break;
            }
            mults[pos] = 0;
            pos += 1;
        }
        if pos == k {
            break;
        }
    }
    states.sort();
    let index = |n: u64, m: &[u64]| -> usize {
        states
            .binary_search_by(|s| (s.0, s.1.as_slice()).cmp(&(n, m)))
            .expect("state enumerated")
    };

    let dim = states.len();
    let mut q = vec![0.0f64; dim * dim];
    for (row, (n, m)) in states.iter().enumerate() {
        let mut out_rate = 0.0;
        if *n >= 1 {
            for (i, atom) in atoms.iter().enumerate() {
                let mut m2 = m.clone();
                m2[i] += 1;
                let col = index(n - 1, &m2);
                let rate = atom.mass * *n as f64;
                q[row * dim + col] += rate;
                out_rate += rate;
            }
            if *n >= 2 {
                let col = index(n - 1, m);
                let rate = (*n * (*n - 1)) as f64 / 2.0;
                q[row * dim + col] += rate;
                out_rate += rate;
            }
        }
        for (i, atom) in atoms.iter().enumerate() {
            if m[i] >= 1 {
                let mut m2 = m.clone();
                m2[i] -= 1;
                let col = index(n + 1, &m2);
                let rate = atom.rate * m[i] as f64;
                q[row * dim + col] += rate;
                out_rate += rate;
            }
        }
        q[row * dim + row] = -out_rate;
    }

    let f: Vec<f64> = states
        .iter()
        .map(|(n, m)| {
            let mut v = pow_count(x, *n);
            for (i, atom) in atoms.iter().enumerate() {
                v *= pow_count(y(atom.rate), m[i]);
            }
            v
        })
        .collect();

    let mut m0 = vec![0u64; k];
    for &(flag, mult) in &s0.dormant {
        let i = atoms.iter().position(|a| a.rate == flag).expect("checked");
        m0[i] = mult;
    }
    let start = index(s0.active, &m0);
    Ok(expm_action(&q, dim, t, &f)[start])
}

/// `base^count` with the `0^0 = 1` convention.
pub(crate) fn pow_count(base: f64, count: u64) -> f64 {
    if count == 0 {
        1.0
    } else {
        base.powi(count as i32)
    }
}

/// `e^{tQ} f` by uniformization: with `Λ = max |q_ii|` and `P = I + Q/Λ`,
/// `e^{tQ} f = Σ_k e^{-Λt} (Λt)^k / k! · P^k f`, truncated when the Poisson
/// tail drops below 1e-12.
fn expm_action(q: &[f64], dim: usize, t: f64, f: &[f64]) -> Vec<f64> {
    let lambda = (0..dim)
        .map(|i| -q[i * dim + i])
        .fold(0.0f64, f64::max);
    if lambda * t <= 0.0 {
        return f.to_vec();
    }
    let lt = lambda * t;
    let mut weight = (-lt).exp();
    let mut covered = weight;
    let mut v = f.to_vec();
    let mut result: Vec<f64> = v.iter().map(|x| weight * x).collect();
    let mut k = 0u64;
    while covered < 1.0 - 1e-12 && k < 100_000 {
        // v <- P v with P = I + Q/Λ
        let mut next = vec![0.0; dim];
        for row in 0..dim {
            let mut acc = v[row];
            for col in 0..dim {
                acc += q[row * dim + col] * v[col] / lambda;
            }
            next[row] = acc;
        }
        v = next;
        k += 1;
        weight *= lt / k as f64;
        covered += weight;
        for (r, x) in result.iter_mut().zip(&v) {
            *r += weight * x;
        }
    }
    result
}

/// A partition of `{1..K}` with one flag per block; flag `0` is active, a
/// positive flag is the wake-up rate of the bank the block lies dormant in.
/// Blocks are kept sorted by smallest element, members ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkedPartition {
    blocks: Vec<Vec<u32>>,
    flags: Vec<f64>,
}

impl MarkedPartition {
    /// Singletons `{1}, .., {k}`, all active.
    pub fn all_active(k: u32) -> Self {
        MarkedPartition {
            blocks: (1..=k).map(|i| vec![i]).collect(),
            flags: vec![0.0; k as usize],
        }
    }

    pub fn new(blocks: Vec<Vec<u32>>, flags: Vec<f64>) -> Result<Self, DualError> {
        if blocks.len() != flags.len() {
            return Err(DualError::InvalidState(format!(
                "{} blocks but {} flags",
                blocks.len(),
                flags.len()
            )));
        }
        if flags.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(DualError::InvalidState(
                "flags must be 0 (active) or a positive rate".into(),
            ));
        }
        let mut seen: Vec<u32> = blocks.iter().flatten().copied().collect();
        let total = seen.len() as u32;
        seen.sort_unstable();
        seen.dedup();
        if blocks.iter().any(|b| b.is_empty())
            || seen.len() as u32 != total
            || seen.first() != Some(&1)
            || seen.last() != Some(&total)
        {
            return Err(DualError::InvalidState(
                "blocks must partition {1..K} into disjoint nonempty sets".into(),
            ));
        }
        let mut p = MarkedPartition { blocks, flags };
        p.canonicalize();
        Ok(p)
    }

    fn canonicalize(&mut self) {
        for b in &mut self.blocks {
            b.sort_unstable();
        }
        let mut order: Vec<usize> = (0..self.blocks.len()).collect();
        order.sort_by_key(|&i| self.blocks[i][0]);
        self.blocks = order.iter().map(|&i| self.blocks[i].clone()).collect();
        self.flags = order.iter().map(|&i| self.flags[i]).collect();
    }

    pub fn blocks(&self) -> &[Vec<u32>] {
        &self.blocks
    }

    pub fn flags(&self) -> &[f64] {
        &self.flags
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    fn active_indices(&self) -> Vec<usize> {
        (0..self.flags.len())
            .filter(|&i| self.flags[i] == 0.0)
            .collect()
    }

    fn merge(&self, i: usize, j: usize) -> MarkedPartition {
        debug_assert!(i < j);
        let mut blocks = self.blocks.clone();
        let mut flags = self.flags.clone();
        let absorbed = blocks.remove(j);
        flags.remove(j);
        blocks[i].extend(absorbed);
        flags[i] = 0.0;
        let mut p = MarkedPartition { blocks, flags };
        p.canonicalize();
        p
    }
}

/// Project a marked partition onto its block-counting state: the number of
/// 0-blocks and the multiset of positive flags.
pub fn block_counting(partition: &MarkedPartition) -> DualState {
    let active = partition.flags.iter().filter(|f| **f == 0.0).count() as u64;
    let mut dormant: Vec<(f64, u64)> = Vec::new();
    for &f in partition.flags.iter().filter(|f| **f > 0.0) {
        match dormant.iter_mut().find(|d| d.0 == f) {
            Some(e) => e.1 += 1,
            None => dormant.push((f, 1)),
        }
    }
    DualState::new(active, &dormant).expect("projection of a valid partition")
}

/// One jump of the K-coalescent: each 0-block acquires a flag in `B` at rate
/// `μ(B)`, each flagged block drops its flag at rate `λ`, and every pair of
/// 0-blocks merges at rate 1.
pub fn coalescent_step<R: Rng + ?Sized>(
    partition: &MarkedPartition,
    mu: &SeedBankMeasure,
    rng: &mut R,
) -> Result<(f64, MarkedPartition), DualError> {
    let c = mu.total_mass();
    let active = partition.active_indices();
    let n0 = active.len() as f64;
    let flagged_rate: f64 = partition.flags.iter().sum();
    let total = c * n0 + flagged_rate + n0 * (n0 - 1.0) / 2.0;
    if total <= 0.0 {
        return Err(DualError::AbsorbingState);
    }
    let holding = -(1.0 - rng.random::<f64>()).ln() / total;
    let pick = rng.random::<f64>() * total;

    let mut acc = 0.0;
    for &i in &active {
        acc += c;
        if pick < acc {
            let mut next = partition.clone();
            next.flags[i] = mu.sample_rate(rng);
            return Ok((holding, next));
        }
    }
    for (i, &f) in partition.flags.iter().enumerate() {
        if f > 0.0 {
            acc += f;
            if pick < acc {
                let mut next = partition.clone();
                next.flags[i] = 0.0;
                return Ok((holding, next));
            }
        }
    }
    for (a, &i) in active.iter().enumerate() {
        for &j in &active[a + 1..] {
            acc += 1.0;
            if pick < acc {
                return Ok((holding, partition.merge(i.min(j), i.max(j))));
            }
        }
    }
    // Rounding pushed the pick past the last segment; take the last pair.
    let (i, j) = (active[active.len() - 2], active[active.len() - 1]);
    Ok((holding, partition.merge(i, j)))
}

/// Run the K-coalescent until time `t`.
pub fn simulate_coalescent<R: Rng + ?Sized>(
    p0: &MarkedPartition,
    mu: &SeedBankMeasure,
    t: f64,
    rng: &mut R,
) -> (MarkedPartition, Vec<DualEvent>) {
    let mut state = p0.clone();
    let mut clock = 0.0;
    let mut log = Vec::new();
    loop {
        match coalescent_step(&state, mu, rng) {
            Err(_) => break,
            Ok((holding, next)) => {
                if clock + holding > t {
                    break;
                }
                clock += holding;
                let kind = match next.block_count().cmp(&state.block_count()) {
                    std::cmp::Ordering::Less => DualEventKind::Coalesce,
                    _ => {
                        if block_counting(&next).active() > block_counting(&state).active() {
                            DualEventKind::Reactivate
                        } else {
                            DualEventKind::Deactivate
                        }
                    }
                };
                log.push(DualEvent {
                    time: clock,
                    kind,
                    rate: None,
                });
                state = next;
            }
        }
    }
    (state, log)
}

/// Per-generation event probabilities of the discrete ancestral chain, listed
/// in the canonical order shared with the coupled window stepper: for each
/// 0-block each bank's flag gain at `c_i/N`, each flagged block's flag loss at
/// `λ_i/N`, each 0-block pair's merge at `(1-c/N)²/N`; anything else is
/// "no event" (those transitions are O(1/N²) and the scaling test only needs
/// the limit law).
fn ancestral_events(
    partition: &MarkedPartition,
    params: &WfParams,
) -> Result<(Vec<(f64, AncestralEvent)>, f64), DualError> {
    let n = params.active_size as f64;
    let c = params.migration_count as f64;
    for &f in &partition.flags {
        if f > 0.0 && !params.banks.iter().any(|b| b.rate == f) {
            return Err(DualError::FlagNotInModel(f));
        }
    }
    let active = partition.active_indices();
    let mut events = Vec::new();
    for &i in &active {
        for bank in &params.banks {
            events.push((bank.mass / n, AncestralEvent::Deactivate(i, bank.rate)));
        }
    }
    for (i, &f) in partition.flags.iter().enumerate() {
        if f > 0.0 {
            events.push((f / n, AncestralEvent::Reactivate(i)));
        }
    }
    let merge_p = (1.0 - c / n) * (1.0 - c / n) / n;
    for (a, &i) in active.iter().enumerate() {
        for &j in &active[a + 1..] {
            events.push((merge_p, AncestralEvent::Merge(i, j)));
        }
    }
    let total: f64 = events.iter().map(|e| e.0).sum();
    if total > 1.0 {
        return Err(DualError::InvalidParams(format!(
            "one-generation event probabilities sum to {total} > 1; N too small"
        )));
    }
    Ok((events, total))
}

#[derive(Debug, Clone, Copy)]
enum AncestralEvent {
    Deactivate(usize, f64),
    Reactivate(usize),
    Merge(usize, usize),
}

fn apply_ancestral(partition: &MarkedPartition, event: AncestralEvent) -> MarkedPartition {
    match event {
        AncestralEvent::Deactivate(i, rate) => {
            let mut next = partition.clone();
            next.flags[i] = rate;
            next
        }
        AncestralEvent::Reactivate(i) => {
            let mut next = partition.clone();
            next.flags[i] = 0.0;
            next
        }
        AncestralEvent::Merge(i, j) => partition.merge(i.min(j), i.max(j)),
    }
}

/// One generation of the ancestral chain, event selected by the supplied
/// uniform through the canonical ordering. Exactly one uniform per
/// generation, so runs can be coupled to a window-stepped coalescent.
pub fn ancestral_step_with_uniform(
    partition: &MarkedPartition,
    params: &WfParams,
    u: f64,
) -> Result<MarkedPartition, DualError> {
    let (events, _) = ancestral_events(partition, params)?;
    let mut acc = 0.0;
    for (p, event) in events {
        acc += p;
        if u < acc {
            return Ok(apply_ancestral(partition, event));
        }
    }
    Ok(partition.clone())
}

/// One generation of the ancestral chain.
pub fn ancestral_step<R: Rng + ?Sized>(
    partition: &MarkedPartition,
    params: &WfParams,
    rng: &mut R,
) -> Result<MarkedPartition, DualError> {
    let u = rng.random::<f64>();
    ancestral_step_with_uniform(partition, params, u)
}

/// Exact coalescent over a window of length `delta`: the first event (or
/// none) is selected by `u` through the same canonical ordering as the
/// ancestral chain, each event taking the share `(rate_k / r)(1 - e^{-rΔ})`;
/// any remainder of the window after the first event is finished with plain
/// Gillespie draws from `rng`. Marginally this is the exact coalescent law;
/// driven with a shared `u` stream it stays pathwise-coupled to the ancestral
/// chain up to O(1/N²) per generation.
pub fn coalescent_window_step<R: Rng + ?Sized>(
    partition: &MarkedPartition,
    mu: &SeedBankMeasure,
    delta: f64,
    u: f64,
    rng: &mut R,
) -> Result<MarkedPartition, DualError> {
    let c = mu.total_mass();
    let active = partition.active_indices();
    let n0 = active.len() as f64;
    let flagged_rate: f64 = partition.flags.iter().sum();
    let total = c * n0 + flagged_rate + n0 * (n0 - 1.0) / 2.0;
    if total <= 0.0 {
        return Ok(partition.clone());
    }
    let p_event = -(-total * delta).exp_m1();

    // Canonical segments, each scaled by p_event/total.
    let mut events: Vec<(f64, AncestralEvent)> = Vec::new();
    for &i in &active {
        for atom_rate_mass in measure_atoms(mu) {
            events.push((
                atom_rate_mass.1,
                AncestralEvent::Deactivate(i, atom_rate_mass.0),
            ));
        }
    }
    for (i, &f) in partition.flags.iter().enumerate() {
        if f > 0.0 {
            events.push((f, AncestralEvent::Reactivate(i)));
        }
    }
    for (a, &i) in active.iter().enumerate() {
        for &j in &active[a + 1..] {
            events.push((1.0, AncestralEvent::Merge(i, j)));
        }
    }

    let mut acc = 0.0;
    let mut chosen = None;
    for (rate, event) in events {
        acc += rate / total * p_event;
        if u < acc {
            chosen = Some(event);
            break;
        }
    }
    let Some(event) = chosen else {
        return Ok(partition.clone());
    };
    // Time of the first event, conditioned on landing inside the window:
    // τ = -ln(1 - u·p_event) / r.
    let tau = (-(-(rng.random::<f64>() * p_event)).ln_1p() / total).min(delta);
    let event = match event {
        // A continuous measure has one deactivation segment per block; the
        // flag itself is sampled here.
        AncestralEvent::Deactivate(i, rate) if rate.is_nan() => {
            AncestralEvent::Deactivate(i, mu.sample_rate(rng))
        }
        other => other,
    };
    let mut state = apply_ancestral(partition, event);
    let mut remaining = delta - tau;
    loop {
        match coalescent_step(&state, mu, rng) {
            Err(_) => break,
            Ok((holding, next)) => {
                if holding > remaining {
                    break;
                }
                remaining -= holding;
                state = next;
            }
        }
    }
    Ok(state)
}

/// Deactivation sub-segments: one per atom for a discrete measure, a single
/// segment with a sampled flag for a continuous one.
fn measure_atoms(mu: &SeedBankMeasure) -> Vec<(f64, f64)> {
    match mu {
        SeedBankMeasure::Discrete { atoms } => {
            atoms.iter().map(|a| (a.rate, a.mass)).collect()
        }
        SeedBankMeasure::Gamma { mass, .. } => vec![(f64::NAN, *mass)],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::streams::{stream_rng, StreamPurpose};

    fn unit_measure() -> SeedBankMeasure {
        SeedBankMeasure::discrete(&[(1.0, 1.0)]).unwrap()
    }

    #[test]
    fn total_rate_examples() {
        let mu = unit_measure();
        let s = DualState::new(2, &[]).unwrap();
        assert_eq!(total_rate(&s, &mu), 3.0);
        let s = DualState::new(0, &[(2.0, 1)]).unwrap();
        assert_eq!(total_rate(&s, &mu), 2.0);
        let s = DualState::new(0, &[]).unwrap();
        assert_eq!(total_rate(&s, &mu), 0.0);
    }

    #[test]
    fn dual_step_forced_transitions() {
        let mu = unit_measure();
        let mut rng = stream_rng(1, 0, StreamPurpose::DualChain);
        // (1, ∅): only deactivation; single atom forces the flag.
        let s = DualState::new(1, &[]).unwrap();
        let (_, next, event) = dual_step(&s, &mu, &mut rng).unwrap();
        assert_eq!(next, DualState::new(0, &[(1.0, 1)]).unwrap());
        assert_eq!(event.kind, DualEventKind::Deactivate);

        // (0, {2 -> 1}): only reactivation, holding ~ Exp(2).
        let s = DualState::new(0, &[(2.0, 1)]).unwrap();
        let (_, next, event) = dual_step(&s, &mu, &mut rng).unwrap();
        assert_eq!(next, DualState::new(1, &[]).unwrap());
        assert_eq!(event.kind, DualEventKind::Reactivate);

        // (0, ∅) is absorbing.
        let s = DualState::new(0, &[]).unwrap();
        assert!(matches!(
            dual_step(&s, &mu, &mut rng),
            Err(DualError::AbsorbingState)
        ));
    }

    #[test]
    fn dual_step_event_split_from_two_blocks() {
        // (2, ∅) with c = 1: coalescence w.p. 1/3, deactivation w.p. 2/3.
        let mu = unit_measure();
        let s = DualState::new(2, &[]).unwrap();
        let mut rng = stream_rng(5, 0, StreamPurpose::DualChain);
        let reps = 100_000;
        let mut coalescences = 0u64;
        for _ in 0..reps {
            let (_, _, event) = dual_step(&s, &mu, &mut rng).unwrap();
            if event.kind == DualEventKind::Coalesce {
                coalescences += 1;
            }
        }
        let p = coalescences as f64 / reps as f64;
        let se = (1.0 / 3.0 * 2.0 / 3.0 / reps as f64).sqrt();
        assert!((p - 1.0 / 3.0).abs() < 3.0 * se, "p = {p}");
    }

    #[test]
    fn simulate_dual_absorbing_start() {
        let mu = unit_measure();
        let s0 = DualState::new(0, &[]).unwrap();
        let mut rng = stream_rng(2, 0, StreamPurpose::DualChain);
        let (s, log) = simulate_dual(&s0, &mu, 10.0, &mut rng);
        assert_eq!(s, s0);
        assert!(log.is_empty());
    }

    #[test]
    fn simulate_dual_two_state_occupancy_matches_ctmc() {
        // From (1, ∅) the chain alternates with the single flag state at
        // rates (1, 1): P(N_1 = 1) = (1 + e^{-2})/2 (matrix-exponential
        // oracle, frozen).
        let mu = unit_measure();
        let s0 = DualState::new(1, &[]).unwrap();
        let reps = 100_000u64;
        let mut hits = 0u64;
        for r in 0..reps {
            let mut rng = stream_rng(3, r, StreamPurpose::DualChain);
            let (s, _) = simulate_dual(&s0, &mu, 1.0, &mut rng);
            if s.active() == 1 {
                hits += 1;
            }
        }
        let p = hits as f64 / reps as f64;
        let want = 0.5676676416183064;
        let se = (want * (1.0 - want) / reps as f64).sqrt();
        assert!((p - want).abs() < 3.0 * se, "p = {p} vs {want}");
    }

    #[test]
    fn mean_holding_time_at_two_blocks() {
        let mu = unit_measure();
        let s = DualState::new(2, &[]).unwrap();
        let mut rng = stream_rng(4, 0, StreamPurpose::DualChain);
        let reps = 100_000;
        let sum: f64 = (0..reps)
            .map(|_| dual_step(&s, &mu, &mut rng).unwrap().0)
            .sum();
        let mean = sum / reps as f64;
        // Exp(3): mean 1/3, sd 1/3.
        let se = (1.0 / 3.0) / (reps as f64).sqrt();
        assert!((mean - 1.0 / 3.0).abs() < 3.0 * se, "mean = {mean}");
    }

    #[test]
    fn dual_moment_exact_trivial_cases() {
        let mu = unit_measure();
        let s = DualState::new(2, &[(1.0, 3)]).unwrap();
        assert!((dual_moment_exact(&s, 1.0, |_| 1.0, &mu, 2.0).unwrap() - 1.0).abs() < 1e-12);

        // Total count 1 with x = y ≡ p: the exponent is conserved, so the
        // moment stays p for all t.
        let s = DualState::new(1, &[]).unwrap();
        let v = dual_moment_exact(&s, 0.3, |_| 0.3, &mu, 1.7).unwrap();
        assert!((v - 0.3).abs() < 1e-10);
    }

    #[test]
    fn dual_moment_exact_matches_frozen_oracle() {
        // 6-state chain from (2, ∅), x = y = 0.5, t = 1; value frozen from an
        // independent matrix-exponential computation.
        let mu = unit_measure();
        let s = DualState::new(2, &[]).unwrap();
        let v = dual_moment_exact(&s, 0.5, |_| 0.5, &mu, 1.0).unwrap();
        assert!((v - 0.3449650767656297).abs() < 1e-9, "got {v}");
    }

    #[test]
    fn dual_moment_exact_guards() {
        let mu = unit_measure();
        let s = DualState::new(7, &[]).unwrap();
        assert!(matches!(
            dual_moment_exact(&s, 0.5, |_| 0.5, &mu, 1.0),
            Err(DualError::StateSpaceTooLarge(_))
        ));
        let s = DualState::new(1, &[(0.25, 1)]).unwrap();
        assert!(matches!(
            dual_moment_exact(&s, 0.5, |_| 0.5, &mu, 1.0),
            Err(DualError::FlagNotInMeasure(_))
        ));
    }

    #[test]
    fn block_counting_examples() {
        let p = MarkedPartition::all_active(2);
        assert_eq!(block_counting(&p), DualState::new(2, &[]).unwrap());

        // The worked six-element example: {1}^0 {2}^0.1 {5}^1 {3,4}^10 {6}^0.
        let p = MarkedPartition::new(
            vec![vec![1], vec![2], vec![5], vec![3, 4], vec![6]],
            vec![0.0, 0.1, 1.0, 10.0, 0.0],
        )
        .unwrap();
        assert_eq!(
            block_counting(&p),
            DualState::new(2, &[(0.1, 1), (1.0, 1), (10.0, 1)]).unwrap()
        );

        let single = MarkedPartition::new(vec![(1..=6).collect()], vec![0.0]).unwrap();
        assert_eq!(block_counting(&single), DualState::new(1, &[]).unwrap());
    }

    #[test]
    fn merging_the_worked_example() {
        let p = MarkedPartition::new(
            vec![vec![1], vec![2], vec![5], vec![3, 4], vec![6]],
            vec![0.0, 0.1, 1.0, 10.0, 0.0],
        )
        .unwrap();
        // Blocks in canonical order: {1}^0 {2}^0.1 {3,4}^10 {5}^1 {6}^0;
        // merging the only 0-block pair joins 1 and 6.
        let merged = p.merge(0, 4);
        assert_eq!(
            merged.blocks(),
            &[vec![1, 6], vec![2], vec![3, 4], vec![5]]
        );
        assert_eq!(merged.flags(), &[0.0, 0.1, 10.0, 1.0]);
    }

    #[test]
    fn coalescent_step_two_singletons_split() {
        // {{1}^0 {2}^0} with μ = δ_1: merge w.p. 1/3, two deactivations
        // w.p. 1/3 each.
        let mu = unit_measure();
        let p = MarkedPartition::all_active(2);
        let mut rng = stream_rng(6, 0, StreamPurpose::Coalescent);
        let reps = 90_000;
        let mut merges = 0u64;
        for _ in 0..reps {
            let (_, next) = coalescent_step(&p, &mu, &mut rng).unwrap();
            if next.block_count() == 1 {
                merges += 1;
            }
        }
        let share = merges as f64 / reps as f64;
        let se = (share * (1.0 - share) / reps as f64).sqrt();
        assert!((share - 1.0 / 3.0).abs() < 3.0 * se, "merge share {share}");
    }

    #[test]
    fn coalescent_all_flagged_only_reactivates() {
        let mu = unit_measure();
        let p = MarkedPartition::new(
            vec![vec![1], vec![2]],
            vec![0.5, 3.0],
        )
        .unwrap();
        let mut rng = stream_rng(7, 0, StreamPurpose::Coalescent);
        for _ in 0..50 {
            let (_, next) = coalescent_step(&p, &mu, &mut rng).unwrap();
            assert_eq!(next.block_count(), 2);
            let gained_active = next.flags().iter().filter(|f| **f == 0.0).count();
            assert_eq!(gained_active, 1);
        }
    }

    #[test]
    fn projection_consistency_exact_rates_up_to_four_blocks() {
        // Rate-by-rate identity: for every marked partition of {1..4} with
        // flags drawn from {0, 0.5, 2}, the per-class jump rates of the
        // coalescent (deactivations per atom, reactivations per flag, merges)
        // equal the dual rates from the projected block-counting state.
        let mu = SeedBankMeasure::discrete(&[(0.5, 0.8), (2.0, 1.7)]).unwrap();
        let atom_masses = [(0.5, 0.8), (2.0, 1.7)];
        let flag_choices = [0.0, 0.5, 2.0];

        // Set partitions of {1,2,3,4} via restricted growth strings.
        let mut rgs = vec![vec![0usize]];
        for _ in 1..4 {
            let mut next = Vec::new();
            for s in &rgs {
                let max = *s.iter().max().unwrap();
                for v in 0..=max + 1 {
                    let mut t = s.clone();
                    t.push(v);
                    next.push(t);
                }
            }
            rgs = next;
        }
        assert_eq!(rgs.len(), 15);

        let mut checked = 0;
        for assignment in &rgs {
            let n_blocks = assignment.iter().max().unwrap() + 1;
            let mut blocks: Vec<Vec<u32>> = vec![Vec::new(); n_blocks];
            for (elem, &b) in assignment.iter().enumerate() {
                blocks[b].push(elem as u32 + 1);
            }
            for mask in 0..3usize.pow(n_blocks as u32) {
                let mut m = mask;
                let flags: Vec<f64> = (0..n_blocks)
                    .map(|_| {
                        let f = flag_choices[m % 3];
                        m /= 3;
                        f
                    })
                    .collect();
                let p = MarkedPartition::new(blocks.clone(), flags.clone()).unwrap();
                let s = block_counting(&p);

                let n0 = flags.iter().filter(|f| **f == 0.0).count() as f64;
                assert_eq!(s.active(), n0 as u64);
                // Deactivation classes: one per atom, partition rate n0·c_i.
                for &(_, mass) in &atom_masses {
                    let partition_rate = n0 * mass;
                    let dual_rate = s.active() as f64 * mass;
                    assert_eq!(partition_rate, dual_rate);
                }
                // Reactivation classes: per distinct flag λ, rate λ·(#blocks).
                for &lam in &flag_choices[1..] {
                    let count = flags.iter().filter(|f| **f == lam).count() as u64;
                    let mult = s
                        .dormant()
                        .iter()
                        .find(|(r, _)| *r == lam)
                        .map(|(_, m)| *m)
                        .unwrap_or(0);
                    assert_eq!(count, mult);
                }
                // Merge class and the total holding rate.
                let partition_total = mu.total_mass() * n0
                    + flags.iter().sum::<f64>()
                    + n0 * (n0 - 1.0) / 2.0;
                assert_eq!(total_rate(&s, &mu), partition_total);
                checked += 1;
            }
        }
        assert_eq!(checked, 309);
    }

    #[test]
    fn projection_consistency_one_step_law() {
        // block_counting ∘ coalescent_step has the one-step law of dual_step
        // from the projected state.
        let mu = unit_measure();
        let p = MarkedPartition::new(
            vec![vec![1], vec![2], vec![3], vec![4]],
            vec![0.0, 0.0, 0.5, 0.5],
        )
        .unwrap();
        let projected = block_counting(&p);
        let mut rng = stream_rng(8, 0, StreamPurpose::Coalescent);
        let reps = 60_000;
        let (mut merges_p, mut deact_p) = (0u64, 0u64);
        for _ in 0..reps {
            let (_, next) = coalescent_step(&p, &mu, &mut rng).unwrap();
            let bc = block_counting(&next);
            if next.block_count() == 3 {
                merges_p += 1;
            }
            if bc.active() == 1 && next.block_count() == 4 {
                deact_p += 1;
            }
        }
        let (mut merges_d, mut deact_d) = (0u64, 0u64);
        for _ in 0..reps {
            let (_, next, event) = dual_step(&projected, &mu, &mut rng).unwrap();
            match event.kind {
                DualEventKind::Coalesce => merges_d += 1,
                DualEventKind::Deactivate if next.active() == 1 => deact_d += 1,
                _ => {}
            }
        }
        for (a, b) in [(merges_p, merges_d), (deact_p, deact_d)] {
            let (pa, pb) = (a as f64 / reps as f64, b as f64 / reps as f64);
            let se = ((pa * (1.0 - pa) + pb * (1.0 - pb)) / reps as f64).sqrt();
            assert!((pa - pb).abs() < 4.0 * se, "{pa} vs {pb}");
        }
    }

    #[test]
    fn monotone_total_count_along_trajectories() {
        let mu = SeedBankMeasure::discrete(&[(0.5, 1.0), (2.0, 1.0)]).unwrap();
        for r in 0..200 {
            let mut rng = stream_rng(9, r, StreamPurpose::DualChain);
            let mut s = DualState::new(4, &[(0.5, 1)]).unwrap();
            let mut count = s.total_count();
            for _ in 0..60 {
                match dual_step(&s, &mu, &mut rng) {
                    Err(_) => break,
                    Ok((_, next, event)) => {
                        let next_count = next.total_count();
                        match event.kind {
                            DualEventKind::Coalesce => assert_eq!(next_count, count - 1),
                            _ => assert_eq!(next_count, count),
                        }
                        count = next_count;
                        s = next;
                    }
                }
            }
        }
    }

    #[test]
    fn ancestral_step_probabilities() {
        // Two 0-blocks, c = 2 in one bank, N = 100: merge probability per
        // generation is (1 - 0.02)² / 100 = 0.009604.
        let params = WfParams::new(100, &[(2.0, 100)]).unwrap();
        let p = MarkedPartition::all_active(2);
        let (events, total) = ancestral_events(&p, &params).unwrap();
        let merge_p: f64 = events
            .iter()
            .filter(|(_, e)| matches!(e, AncestralEvent::Merge(_, _)))
            .map(|(p, _)| p)
            .sum();
        assert!((merge_p - 0.009604).abs() < 1e-15);
        // Deactivations: 2 blocks × c_1/N = 0.02 each.
        assert!((total - (0.04 + 0.009604)).abs() < 1e-15);

        // All-flagged partition: only reactivations, each at λ_i/N.
        let p = MarkedPartition::new(vec![vec![1], vec![2]], vec![2.0, 2.0]).unwrap();
        let (events, total) = ancestral_events(&p, &params).unwrap();
        assert_eq!(events.len(), 2);
        assert!((total - 2.0 * 2.0 / 100.0).abs() < 1e-15);

        // Unknown flag is rejected.
        let p = MarkedPartition::new(vec![vec![1], vec![2]], vec![0.0, 3.3]).unwrap();
        assert!(matches!(
            ancestral_events(&p, &params),
            Err(DualError::FlagNotInModel(_))
        ));
    }

    #[test]
    fn ancestral_no_event_probability_grows_with_n() {
        let p = MarkedPartition::all_active(3);
        let mut last_total = f64::INFINITY;
        for n in [100u64, 1000, 10000] {
            let params = WfParams::new(n, &[(1.0, n)]).unwrap();
            let (_, total) = ancestral_events(&p, &params).unwrap();
            assert!(total < last_total);
            last_total = total;
        }
        assert!(last_total < 1e-3);
    }

    #[test]
    fn coalescent_window_step_marginal_law() {
        // Chopping [0, t] into windows must reproduce the jump-chain law:
        // compare P(block count at t = 1) against direct Gillespie runs.
        let mu = unit_measure();
        let reps = 40_000u64;
        let windows = 50;
        let delta = 1.0 / windows as f64;
        let mut counts_window = [0u64; 4];
        let mut counts_direct = [0u64; 4];
        for r in 0..reps {
            let mut shared = stream_rng(10, r, StreamPurpose::CoupledEvents);
            let mut extra = stream_rng(10, r, StreamPurpose::Coalescent);
            let mut p = MarkedPartition::all_active(3);
            for _ in 0..windows {
                let u = shared.random::<f64>();
                p = coalescent_window_step(&p, &mu, delta, u, &mut extra).unwrap();
            }
            counts_window[p.block_count()] += 1;

            let mut rng = stream_rng(11, r, StreamPurpose::Coalescent);
            let (q, _) = simulate_coalescent(&MarkedPartition::all_active(3), &mu, 1.0, &mut rng);
            counts_direct[q.block_count()] += 1;
        }
        for k in 1..=3 {
            let (pa, pb) = (
                counts_window[k] as f64 / reps as f64,
                counts_direct[k] as f64 / reps as f64,
            );
            let se = ((pa * (1.0 - pa) + pb * (1.0 - pb)) / reps as f64).sqrt();
            assert!(
                (pa - pb).abs() < 4.0 * se.max(1e-4),
                "block count {k}: {pa} vs {pb}"
            );
        }
    }
}
