//! Collision-resolution cycle analysis: per-slot success probability, the
//! phase-type law of the cycle length, optimal retransmission probabilities
//! and the collider-count belief used by DELTA+.
//!
//! A cycle starting from `c` colliders runs CR rounds `1..=c`. Round `i` has
//! `c - i + 1` members left and ends with an ACK; each ACK is followed by one
//! CE slot. Round `c` is only reached when the last member's CE transmission
//! is erased.

use std::collections::HashMap;
use std::io::Write;
use std::sync::{OnceLock, RwLock};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numeric::{binomial_pmf, bisect};

const P_TOL: f64 = 1e-8;
const P_MAX_ITER: usize = 200;
/// Transient mass below which a chain counts as absorbed.
const TRANSIENT_FLOOR: f64 = 1e-16;

/// `σ(c, p, ε)`: probability that exactly one of `c` members transmits and
/// the packet survives the channel.
pub fn success_prob(c: usize, p: f64, epsilon: f64) -> f64 {
    if c == 0 {
        return 0.0;
    }
    (1.0 - epsilon) * c as f64 * p * (1.0 - p).powi(c as i32 - 1)
}

/// Closed-form mean cycle length for `c` colliders, CE slots included.
pub fn expected_cycle_duration(c: usize, p: &[f64], epsilon: f64) -> Result<f64> {
    if c == 0 {
        return Err(Error::invalid("cycle needs at least one collider"));
    }
    if p.len() < c {
        return Err(Error::invalid(format!("need {c} probabilities, got {}", p.len())));
    }
    let recip = |index: usize, s: f64| {
        if s > 0.0 {
            Ok(1.0 / s)
        } else {
            Err(Error::InfiniteDuration { index })
        }
    };
    if c == 1 {
        return Ok(1.0 + recip(0, (1.0 - epsilon) * p[0])?);
    }
    let mut total = (c - 1) as f64 + epsilon;
    if epsilon > 0.0 {
        total += epsilon * recip(c - 1, (1.0 - epsilon) * p[c - 1])?;
    }
    for i in 0..c - 1 {
        total += recip(i, success_prob(c - i, p[i], epsilon))?;
    }
    Ok(total)
}

/// Absorbing chain over the CR rounds of one cycle: states `0..c` are rounds
/// `1..=c`, state `c` is absorption.
#[derive(Debug, Clone)]
pub struct PhaseTypeModel {
    c: usize,
    epsilon: f64,
    advance: Vec<f64>,
}

impl PhaseTypeModel {
    pub fn new(c: usize, p: &[f64], epsilon: f64) -> Result<Self> {
        if c == 0 || p.len() < c {
            return Err(Error::invalid(format!("phase-type model needs c >= 1 and {c} probabilities")));
        }
        let advance: Vec<f64> = (0..c).map(|i| success_prob(c - i, p[i], epsilon)).collect();
        Ok(Self { c, epsilon, advance })
    }

    pub fn colliders(&self) -> usize {
        self.c
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let c = self.c;
        let mut matrix = DMatrix::zeros(c + 1, c + 1);
        for (i, &a) in self.advance.iter().enumerate() {
            matrix[(i, i)] = 1.0 - a;
            matrix[(i, i + 1)] = a;
        }
        matrix[(c, c)] = 1.0;
        matrix
    }

    pub fn transition_power(&self, t: u32) -> DMatrix<f64> {
        let mut out = DMatrix::identity(self.c + 1, self.c + 1);
        let matrix = self.matrix();
        for _ in 0..t {
            out = &out * &matrix;
        }
        out
    }

    /// `(P(S <= t), P(A <= t))` for `t = 0..=steps`, where `S` is the number of
    /// CR slots before round `c` starts and `A` the number before absorption.
    fn round_series(&self, steps: usize) -> (Vec<f64>, Vec<f64>) {
        let c = self.c;
        let mut dist = vec![0.0; c + 1];
        dist[0] = 1.0;
        let mut hit = Vec::with_capacity(steps + 1);
        let mut absorbed = Vec::with_capacity(steps + 1);
        for t in 0..=steps {
            hit.push(dist[c - 1..].iter().sum::<f64>());
            absorbed.push(dist[c]);
            if t == steps {
                break;
            }
            if dist[..c].iter().sum::<f64>() < TRANSIENT_FLOOR {
                hit.resize(steps + 1, 1.0);
                absorbed.resize(steps + 1, 1.0);
                break;
            }
            dist[c] += dist[c - 1] * self.advance[c - 1];
            for i in (1..c).rev() {
                dist[i] = dist[i] * (1.0 - self.advance[i]) + dist[i - 1] * self.advance[i - 1];
            }
            dist[0] *= 1.0 - self.advance[0];
        }
        (hit, absorbed)
    }

    /// Cycle-length CDF at `t = 0..=t_max`.
    pub fn duration_cdf(&self, t_max: usize) -> Vec<f64> {
        let (hit, absorbed) = self.round_series(t_max);
        let at = |v: &[f64], t: isize| if t < 0 { 0.0 } else { v[t as usize] };
        let c = self.c as isize;
        (0..=t_max as isize)
            .map(|t| {
                if c == 1 {
                    at(&absorbed, t - 1)
                } else {
                    (1.0 - self.epsilon) * at(&hit, t - c + 1) + self.epsilon * at(&absorbed, t - c)
                }
            })
            .collect()
    }

    pub fn duration_pmf(&self, t_max: usize) -> Vec<f64> {
        cdf_to_pmf(&self.duration_cdf(t_max))
    }

    /// Mean cycle length summed from the tail of the CDF.
    pub fn mean_duration(&self) -> f64 {
        let mut t_max = 256;
        loop {
            let cdf = self.duration_cdf(t_max);
            if 1.0 - cdf[t_max] < 1e-13 || t_max > 1 << 24 {
                return cdf.iter().map(|f| 1.0 - f).sum();
            }
            t_max *= 4;
        }
    }
}

pub fn cdf_to_pmf(cdf: &[f64]) -> Vec<f64> {
    let mut prev = 0.0;
    cdf.iter()
        .map(|&f| {
            let d = (f - prev).max(0.0);
            prev = f;
            d
        })
        .collect()
}

pub fn cycle_duration_cdf(c: usize, p: &[f64], epsilon: f64, t: usize) -> Result<f64> {
    Ok(PhaseTypeModel::new(c, p, epsilon)?.duration_cdf(t)[t])
}

/// Unnormalized collider-count mass after a NACK out of ZW, indexed by `c`,
/// and its total (the ZW failure probability).
pub fn collider_count_pmf_zw(n: usize, lambda: f64, epsilon: f64) -> (Vec<f64>, f64) {
    let mut mass = binomial_pmf(n, lambda);
    mass[0] = 0.0;
    if n >= 1 {
        mass[1] *= epsilon;
    }
    let total = mass.iter().sum();
    (mass, total)
}

/// Cycle-length law for a cycle opened by a ZW collision, mixing over the
/// collider count.
#[derive(Debug, Clone)]
pub struct CycleMixture {
    weights: Vec<(f64, PhaseTypeModel)>,
}

impl CycleMixture {
    pub fn new(n: usize, lambda: f64, epsilon: f64, p: &[f64]) -> Result<Self> {
        let (mass, total) = collider_count_pmf_zw(n, lambda, epsilon);
        if total <= 0.0 {
            return Err(Error::invalid("no collision is possible with these parameters"));
        }
        let weights = mass
            .iter()
            .enumerate()
            // components this light cannot move any probability we report
            .filter(|&(_, &w)| w / total > 1e-15)
            .map(|(c, &w)| Ok((w / total, PhaseTypeModel::new(c, p, epsilon)?)))
            .collect::<Result<_>>()?;
        Ok(Self { weights })
    }

    /// Mixture using the static optimal probabilities, solving only for the
    /// rounds that a retained collider count can reach.
    pub fn with_static_p(n: usize, lambda: f64, epsilon: f64) -> Result<Self> {
        let (mass, total) = collider_count_pmf_zw(n, lambda, epsilon);
        let rounds = mass.iter().rposition(|&w| total > 0.0 && w / total > 1e-15).unwrap_or(0);
        let p: Vec<f64> = (1..=rounds).map(|i| optimal_p_round(n - i + 1, lambda, epsilon)).collect();
        Self::new(n, lambda, epsilon, &p)
    }

    /// Posterior collider-count weights.
    pub fn collider_weights(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.weights.iter().map(|(w, m)| (m.colliders(), *w))
    }

    pub fn models(&self) -> impl Iterator<Item = (f64, &PhaseTypeModel)> {
        self.weights.iter().map(|(w, m)| (*w, m))
    }

    pub fn cdf(&self, t_max: usize) -> Vec<f64> {
        let mut out = vec![0.0; t_max + 1];
        for (w, model) in &self.weights {
            for (o, f) in out.iter_mut().zip(model.duration_cdf(t_max)) {
                *o += w * f;
            }
        }
        out
    }

    pub fn pmf(&self, t_max: usize) -> Vec<f64> {
        cdf_to_pmf(&self.cdf(t_max))
    }
}

pub fn cycle_cdf_mixture(n: usize, lambda: f64, epsilon: f64, p: &[f64], t: usize) -> Result<f64> {
    Ok(CycleMixture::new(n, lambda, epsilon, p)?.cdf(t)[t])
}

/// Root in `(0, 1)` of `w_1 + Σ_{c≥2} w_c (1 - c p) / (c (1 - p)^c)`, i.e. the
/// minimizer of `Σ_c w_c / σ(c, p, ε)`. Returns 1 when no weight sits on `c ≥ 2`.
pub fn optimal_p_for_weights(weights: &[f64]) -> f64 {
    let w1 = weights.get(1).copied().unwrap_or(0.0);
    if weights.iter().skip(2).all(|&w| w <= 0.0) {
        return 1.0;
    }
    let g = |p: f64| {
        let q = 1.0 / (1.0 - p);
        let mut inv_pow = q;
        let mut total = w1;
        for (c, &w) in weights.iter().enumerate().skip(2) {
            inv_pow *= q;
            if w > 0.0 {
                total += w * (1.0 - c as f64 * p) * inv_pow / c as f64;
            }
        }
        total
    };
    bisect(g, 0.0, 1.0, P_TOL, P_MAX_ITER)
}

/// Expected-duration objective minimized by [`optimal_p_for_weights`], up to
/// a positive factor.
pub fn duration_objective(weights: &[f64], p: f64) -> f64 {
    weights
        .iter()
        .enumerate()
        .skip(1)
        .filter(|&(_, &w)| w > 0.0)
        .map(|(c, &w)| w / (c as f64 * p * (1.0 - p).powi(c as i32 - 1)))
        .sum()
}

fn static_weights(n_i: usize, lambda: f64, epsilon: f64) -> Vec<f64> {
    let mut w = binomial_pmf(n_i, lambda);
    w[0] = 0.0;
    if n_i >= 1 {
        w[1] *= epsilon;
    }
    w
}

type PKey = (usize, i64, i64);

fn p_cache() -> &'static RwLock<HashMap<PKey, f64>> {
    static CACHE: OnceLock<RwLock<HashMap<PKey, f64>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

fn key_of(x: f64) -> i64 {
    (x * 1e6).round() as i64
}

/// Optimal CR probability when up to `n_i` nodes may still collide. Inputs
/// are rounded to 1e-6 before solving so the cache is order independent.
pub fn optimal_p_round(n_i: usize, lambda: f64, epsilon: f64) -> f64 {
    let key = (n_i, key_of(lambda), key_of(epsilon));
    if let Some(&p) = p_cache().read().expect("p cache poisoned").get(&key) {
        return p;
    }
    let p = optimal_p_for_weights(&static_weights(n_i, key.1 as f64 * 1e-6, key.2 as f64 * 1e-6));
    p_cache().write().expect("p cache poisoned").entry(key).or_insert(p);
    p
}

/// Per-round optimal probabilities `p*_1..p*_N` for symmetric nodes.
pub fn optimal_p_static(n: usize, lambda: f64, epsilon: f64) -> Vec<f64> {
    (1..=n).map(|i| optimal_p_round(n - i + 1, lambda, epsilon)).collect()
}

/// Writes every cached `p*` entry as whitespace-separated columns
/// `N_i lambda epsilon p`, sorted by key.
pub fn export_p_table<W: Write>(mut out: W) -> std::io::Result<()> {
    let cache = p_cache().read().expect("p cache poisoned");
    let mut rows: Vec<_> = cache.iter().map(|(k, v)| (*k, *v)).collect();
    rows.sort_by_key(|(k, _)| *k);
    writeln!(out, "n_i\tlambda\tepsilon\tp_star")?;
    for ((n_i, l, e), p) in rows {
        writeln!(out, "{n_i}\t{:.6}\t{:.6}\t{p:.10}", l as f64 * 1e-6, e as f64 * 1e-6)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BeliefEvent {
    AckCr,
    SilentCr,
    NackCr,
    NackCe,
}

/// Posterior over the number of collision-set members still unresolved.
#[derive(Debug, Clone, PartialEq)]
pub struct ColliderBelief {
    pub phi: Vec<f64>,
    pub round: usize,
}

impl ColliderBelief {
    pub fn point_mass(n: usize, c: usize) -> Self {
        let mut phi = vec![0.0; n + 1];
        phi[c] = 1.0;
        Self { phi, round: 0 }
    }

    pub fn mean(&self) -> f64 {
        self.phi.iter().enumerate().map(|(c, w)| c as f64 * w).sum()
    }
}

/// Collider-count distribution right after a NACK out of ZW.
pub fn deltaplus_prior(n: usize, lambda: f64, epsilon: f64) -> ColliderBelief {
    let (mass, total) = collider_count_pmf_zw(n, lambda, epsilon);
    let phi = if total > 0.0 {
        mass.iter().map(|m| m / total).collect()
    } else {
        // only reachable through an erased singleton when lambda rounds to zero
        let mut phi = vec![0.0; n + 1];
        phi[1.min(n)] = 1.0;
        phi
    };
    ColliderBelief { phi, round: 0 }
}

pub fn nack_likelihood(c: usize, p: f64, epsilon: f64) -> f64 {
    1.0 - (1.0 - p).powi(c as i32) - success_prob(c, p, epsilon)
}

pub fn deltaplus_update(
    belief: &ColliderBelief,
    event: BeliefEvent,
    p: f64,
    epsilon: f64,
) -> Result<ColliderBelief> {
    let n = belief.phi.len();
    let phi = &belief.phi;
    let mut next: Vec<f64> = match event {
        BeliefEvent::AckCr => (0..n)
            .map(|c| phi.get(c + 1).map_or(0.0, |&w| w * success_prob(c + 1, p, epsilon)))
            .collect(),
        BeliefEvent::SilentCr => phi.iter().enumerate().map(|(c, w)| w * (1.0 - p).powi(c as i32)).collect(),
        BeliefEvent::NackCr => phi.iter().enumerate().map(|(c, w)| w * nack_likelihood(c, p, epsilon)).collect(),
        BeliefEvent::NackCe => phi
            .iter()
            .enumerate()
            .map(|(c, w)| match c {
                0 => 0.0,
                1 => w * epsilon,
                _ => *w,
            })
            .collect(),
    };
    let total: f64 = next.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::DegenerateBelief { event });
    }
    next.iter_mut().for_each(|w| *w /= total);
    Ok(ColliderBelief {
        phi: next,
        round: belief.round + 1,
    })
}

pub fn deltaplus_optimal_p(belief: &ColliderBelief) -> f64 {
    optimal_p_for_weights(&belief.phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    /// Plays one cycle node by node: CR slots with per-member Bernoulli draws,
    /// then a CE slot where every remaining member transmits.
    fn simulate_cycle(c: usize, p: &[f64], eps: f64, rng: &mut ChaCha8Rng) -> u64 {
        let mut left = c;
        let mut round = 0;
        let mut slots = 0;
        loop {
            // CR round
            loop {
                slots += 1;
                let tx = (0..left).filter(|_| rng.random::<f64>() < p[round]).count();
                if tx == 1 && rng.random::<f64>() >= eps {
                    left -= 1;
                    break;
                }
            }
            // CE slot
            slots += 1;
            match left {
                0 => return slots,
                1 if rng.random::<f64>() >= eps => return slots,
                _ => round += 1,
            }
        }
    }

    #[test]
    fn success_prob_examples() {
        assert_eq!(success_prob(1, 1.0, 0.0), 1.0);
        assert!(close(success_prob(2, 0.5, 0.0), 0.5, 1e-15));
        let oracle = 0.95 * binomial_pmf(3, 0.5)[1];
        assert!(close(success_prob(3, 0.5, 0.05), oracle, 1e-15));
        assert!(close(success_prob(3, 0.5, 0.05), 0.35625, 1e-12));
    }

    #[test]
    fn expected_duration_examples() {
        assert!(close(expected_cycle_duration(1, &[1.0], 0.0).unwrap(), 2.0, 1e-12));
        assert!(close(expected_cycle_duration(2, &[0.5, 1.0], 0.0).unwrap(), 3.0, 1e-12));
        assert!(matches!(
            expected_cycle_duration(2, &[0.0, 1.0], 0.0),
            Err(Error::InfiniteDuration { index: 0 })
        ));
    }

    #[test]
    fn expected_duration_matches_simulation() {
        let p = optimal_p_static(20, 0.025, 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cycles = 200_000;
        let total: u64 = (0..cycles).map(|_| simulate_cycle(3, &p, 0.05, &mut rng)).sum();
        let mc = total as f64 / cycles as f64;
        let exact = expected_cycle_duration(3, &p, 0.05).unwrap();
        assert!((mc - exact).abs() / exact < 0.01, "mc {mc} exact {exact}");
    }

    #[test]
    fn phase_type_mean_matches_closed_form() {
        for eps in [0.0, 0.05, 0.3] {
            let p = optimal_p_static(8, 0.05, eps);
            for c in 1..=6 {
                let model = PhaseTypeModel::new(c, &p, eps).unwrap();
                let exact = expected_cycle_duration(c, &p, eps).unwrap();
                assert!(close(model.mean_duration(), exact, 1e-6), "c={c} eps={eps}");
            }
        }
    }

    #[test]
    fn matrix_rows_and_power_agree_with_stepping() {
        let p = [0.4, 0.6, 0.9];
        let model = PhaseTypeModel::new(3, &p, 0.1).unwrap();
        for r in 0..4 {
            assert!(close(model.matrix().row(r).sum(), 1.0, 1e-15));
        }
        let (hit, absorbed) = model.round_series(9);
        let pow = model.transition_power(9);
        assert!(close(absorbed[9], pow[(0, 3)], 1e-14));
        assert!(close(hit[9], pow[(0, 2)] + pow[(0, 3)], 1e-14));
    }

    #[test]
    fn cdf_examples() {
        let cdf = PhaseTypeModel::new(1, &[1.0], 0.0).unwrap().duration_cdf(5);
        assert_eq!(cdf[1], 0.0);
        assert!(close(cdf[2], 1.0, 1e-15));
        let cdf = PhaseTypeModel::new(4, &optimal_p_static(10, 0.1, 0.05), 0.05)
            .unwrap()
            .duration_cdf(300);
        assert!(cdf.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(cdf[5], 0.0, "four colliders need at least 6 slots");
        assert!(cdf[6] > 0.0);
    }

    #[test]
    fn collider_pmf_examples() {
        let (mass, total) = collider_count_pmf_zw(2, 0.5, 0.0);
        assert_eq!(mass[1], 0.0);
        assert!(close(mass[2], 0.25, 1e-15));
        assert!(close(total, 0.25, 1e-15));
        let (mass, total) = collider_count_pmf_zw(20, 0.025, 0.05);
        assert!(close(mass.iter().map(|m| m / total).sum::<f64>(), 1.0, 1e-12));
    }

    #[test]
    fn mixture_is_a_proper_distribution() {
        let p = optimal_p_static(20, 0.025, 0.05);
        let mix = CycleMixture::new(20, 0.025, 0.05, &p).unwrap();
        let cdf = mix.cdf(2000);
        assert_eq!(cdf[0], 0.0);
        assert!(close(cdf[2000], 1.0, 1e-9));
    }

    #[test]
    fn optimal_p_boundaries() {
        let p = optimal_p_static(20, 0.025, 0.05);
        assert_eq!(p.len(), 20);
        assert_eq!(p[19], 1.0);
        assert_eq!(optimal_p_round(1, 0.3, 0.1), 1.0);
        let w = static_weights(20, 0.025, 0.05);
        let f = |x: f64| duration_objective(&w, x);
        assert!(f(p[0]) <= f(p[0] + 0.05) && f(p[0]) <= f(p[0] - 0.05));
    }

    #[test]
    fn optimal_p_matches_fine_grid() {
        for n_i in [2usize, 5, 13] {
            let w = static_weights(n_i, 0.025, 0.05);
            let best = (1..10_000)
                .map(|k| k as f64 * 1e-4)
                .min_by(|a, b| duration_objective(&w, *a).total_cmp(&duration_objective(&w, *b)))
                .unwrap();
            assert!(close(optimal_p_round(n_i, 0.025, 0.05), best, 1e-3), "n_i={n_i}");
        }
    }

    #[test]
    fn derivative_changes_sign_once() {
        for n_i in 2..=20 {
            let w = static_weights(n_i, 0.005, 0.05);
            let g = |p: f64| {
                w[1] + (2..=n_i)
                    .map(|c| w[c] * (1.0 - c as f64 * p) / (c as f64 * (1.0 - p).powi(c as i32)))
                    .sum::<f64>()
            };
            let signs: Vec<bool> = (1..1000).map(|k| g(k as f64 / 1000.0) > 0.0).collect();
            let flips = signs.windows(2).filter(|s| s[0] != s[1]).count();
            assert_eq!(flips, 1, "n_i={n_i}");
        }
    }

    #[test]
    fn p_table_export_lists_cached_rows() {
        optimal_p_round(4, 0.123, 0.0);
        let mut buf = Vec::new();
        export_p_table(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().any(|l| l.starts_with("4\t0.123000\t0.000000\t")));
    }

    #[test]
    fn belief_examples() {
        let prior = deltaplus_prior(20, 0.025, 0.05);
        assert_eq!(prior.phi[0], 0.0);
        assert!(close(prior.phi.iter().sum(), 1.0, 1e-12));
        assert_eq!(deltaplus_prior(20, 0.025, 0.0).phi[1], 0.0);

        let two = ColliderBelief::point_mass(5, 2);
        let after = deltaplus_update(&two, BeliefEvent::AckCr, 0.5, 0.1).unwrap();
        assert!(close(after.phi[1], 1.0, 1e-15));

        let one = ColliderBelief::point_mass(5, 1);
        assert!(matches!(
            deltaplus_update(&one, BeliefEvent::NackCe, 0.5, 0.0),
            Err(Error::DegenerateBelief { event: BeliefEvent::NackCe })
        ));
    }

    #[test]
    fn belief_optimal_p_examples() {
        assert_eq!(deltaplus_optimal_p(&ColliderBelief::point_mass(4, 1)), 1.0);
        assert!(close(deltaplus_optimal_p(&ColliderBelief::point_mass(4, 2)), 0.5, 1e-7));
        let prior = deltaplus_prior(20, 0.025, 0.05);
        assert!(close(deltaplus_optimal_p(&prior), optimal_p_static(20, 0.025, 0.05)[0], 1e-6));
    }

    proptest! {
        #[test]
        fn belief_updates_stay_normalized(
            raw in proptest::collection::vec(0.0f64..1.0, 6),
            p in 0.05f64..0.95,
            eps in 0.0f64..0.5,
            which in 0usize..4,
        ) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 1e-3);
            let belief = ColliderBelief { phi: raw.iter().map(|w| w / total).collect(), round: 0 };
            let event = [BeliefEvent::AckCr, BeliefEvent::SilentCr, BeliefEvent::NackCr, BeliefEvent::NackCe][which];
            if let Ok(next) = deltaplus_update(&belief, event, p, eps) {
                prop_assert!((next.phi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(next.phi.iter().all(|&w| w >= 0.0));
            }
        }

        #[test]
        fn cdf_is_monotone(c in 1usize..6, eps in 0.0f64..0.3, seed in 0.2f64..0.9) {
            let p: Vec<f64> = (0..c).map(|i| (seed + 0.1 * i as f64).min(1.0)).collect();
            let cdf = PhaseTypeModel::new(c, &p, eps).unwrap().duration_cdf(200);
            prop_assert!(cdf.windows(2).all(|w| w[1] >= w[0] - 1e-15));
        }
    }
}
