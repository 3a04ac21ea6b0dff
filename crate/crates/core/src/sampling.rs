//! Exact integer sampling used by the discrete-time model: multinomial counts
//! via sequential conditional binomials, and hypergeometric draws via inverse
//! transform on the counting pmf. The draw counts here are at most the
//! migration count `c` (a handful), so the O(support) inverse transform is
//! cheap and exact.

use rand::Rng;
use rand_distr::{Binomial, Distribution};

/// Multinomial(n; weights) counts. Weights need not be normalized.
pub fn multinomial_counts<R: Rng + ?Sized>(rng: &mut R, n: u64, weights: &[f64]) -> Vec<u64> {
    debug_assert!(weights.iter().all(|&w| w >= 0.0));
    let mut counts = vec![0u64; weights.len()];
    let mut remaining = n;
    let mut weight_left: f64 = weights.iter().sum();
    for (i, &w) in weights.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if i + 1 == weights.len() || w >= weight_left {
            counts[i] = remaining;
            break;
        }
        let p = (w / weight_left).clamp(0.0, 1.0);
        let draw = Binomial::new(remaining, p)
            .expect("valid binomial parameters")
            .sample(rng);
        counts[i] = draw;
        remaining -= draw;
        weight_left -= w;
    }
    counts
}

/// Hypergeometric(population, successes, draws) pmf at `k`, computed as
/// products of at most `draws` factors (no large factorials needed).
pub fn hypergeometric_pmf(population: u64, successes: u64, draws: u64, k: u64) -> f64 {
    debug_assert!(successes <= population && draws <= population);
    let lo = draws.saturating_sub(population - successes);
    if k < lo || k > draws.min(successes) {
        return 0.0;
    }
    // C(n, k) · ∏_{j<k} (K-j)/(N-j) · ∏_{j<n-k} (N-K-j)/(N-k-j)
    let mut p = 1.0;
    for j in 0..k {
        p *= (draws - j) as f64 / (j + 1) as f64;
        p *= (successes - j) as f64 / (population - j) as f64;
    }
    for j in 0..(draws - k) {
        p *= (population - successes - j) as f64 / (population - k - j) as f64;
    }
    p
}

/// Draw from Hypergeometric(population, successes, draws) by scanning the pmf.
pub fn hypergeometric<R: Rng + ?Sized>(
    rng: &mut R,
    population: u64,
    successes: u64,
    draws: u64,
) -> u64 {
    debug_assert!(successes <= population && draws <= population);
    let lo = draws.saturating_sub(population - successes);
    let hi = draws.min(successes);
    if lo == hi {
        return lo;
    }
    let u = rng.random::<f64>();
    let mut k = lo;
    let mut pmf = hypergeometric_pmf(population, successes, draws, lo);
    let mut cdf = pmf;
    while cdf < u && k < hi {
        // pmf(k+1)/pmf(k) = (K-k)(n-k) / ((k+1)(N-K-n+k+1)); the divisor is
        // ordered so the intermediate never underflows (k >= lo keeps
        // N+k+1 > K+n).
        pmf *= ((successes - k) * (draws - k)) as f64
            / (((k + 1) * (population + k + 1 - successes - draws)) as f64);
        k += 1;
        cdf += pmf;
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::streams::{stream_rng, StreamPurpose};

    #[test]
    fn pmf_sums_to_one() {
        for (pop, succ, draws) in [(10, 4, 3), (100, 25, 10), (7, 7, 3), (12, 3, 9)] {
            let total: f64 = (0..=draws)
                .map(|k| hypergeometric_pmf(pop, succ, draws, k))
                .sum();
            assert!((total - 1.0).abs() < 1e-12, "{pop},{succ},{draws}: {total}");
        }
    }

    #[test]
    fn hypergeometric_respects_support() {
        let mut rng = stream_rng(1, 0, StreamPurpose::WfChain);
        for _ in 0..2000 {
            let k = hypergeometric(&mut rng, 10, 6, 8);
            assert!((4..=6).contains(&k), "k = {k} outside support");
        }
    }

    #[test]
    fn hypergeometric_mean_matches() {
        let mut rng = stream_rng(2, 0, StreamPurpose::WfChain);
        let (pop, succ, draws) = (200u64, 50u64, 10u64);
        let n = 100_000;
        let sum: u64 = (0..n).map(|_| hypergeometric(&mut rng, pop, succ, draws)).sum();
        let mean = sum as f64 / n as f64;
        let want = draws as f64 * succ as f64 / pop as f64; // 2.5
        let var = want * (1.0 - succ as f64 / pop as f64) * (pop - draws) as f64
            / (pop - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - want).abs() < 3.0 * se, "mean {mean} vs {want}");
    }

    #[test]
    fn multinomial_counts_sum_to_n() {
        let mut rng = stream_rng(3, 0, StreamPurpose::WfChain);
        for _ in 0..500 {
            let counts = multinomial_counts(&mut rng, 7, &[1.0, 2.0, 0.5]);
            assert_eq!(counts.iter().sum::<u64>(), 7);
        }
    }

    #[test]
    fn multinomial_marginals_are_binomial_means() {
        let mut rng = stream_rng(4, 0, StreamPurpose::WfChain);
        let weights = [1.0, 3.0];
        let n = 100_000;
        let mut sum0 = 0u64;
        for _ in 0..n {
            sum0 += multinomial_counts(&mut rng, 4, &weights)[0];
        }
        let mean = sum0 as f64 / n as f64; // Bin(4, 1/4) mean = 1
        let se = (4.0 * 0.25 * 0.75 / n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean}");
    }
}
