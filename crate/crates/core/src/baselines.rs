//! Benchmark protocols: Round Robin and Maximum Age First polling, and the
//! Zero-Wait random-access family (ZW, LZW, GZW) with its grid search.

use rand::Rng;
use rayon::prelude::*;

use crate::channel::{FeedbackModel, Observed};
use crate::domain::SystemParams;
use crate::error::{Error, Result};
use crate::sim::{run_episode, EpisodeConfig, ProtocolSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BaselineKind {
    Rr,
    Maf,
    Zw,
    Lzw,
    Gzw,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 5] = [
        BaselineKind::Rr,
        BaselineKind::Maf,
        BaselineKind::Zw,
        BaselineKind::Lzw,
        BaselineKind::Gzw,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Rr => "RR",
            BaselineKind::Maf => "MAF",
            BaselineKind::Zw => "ZW",
            BaselineKind::Lzw => "LZW",
            BaselineKind::Gzw => "GZW",
        }
    }

    pub fn is_polled(self) -> bool {
        matches!(self, BaselineKind::Rr | BaselineKind::Maf)
    }

    /// Number of tunable probabilities.
    pub fn tunables(self) -> usize {
        match self {
            BaselineKind::Rr | BaselineKind::Maf => 0,
            BaselineKind::Zw => 1,
            BaselineKind::Lzw | BaselineKind::Gzw => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub p1: f64,
    pub p2: f64,
}

impl BaselineConfig {
    pub fn new(kind: BaselineKind, p1: f64, p2: f64) -> Result<Self> {
        for p in [p1, p2] {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::invalid(format!("{} probability {p} outside (0, 1]", kind.name())));
            }
        }
        Ok(Self { kind, p1, p2 })
    }

    pub fn polled(kind: BaselineKind) -> Self {
        Self { kind, p1: 1.0, p2: 1.0 }
    }
}

/// Node polled in slot `t` (1-based ids and slots).
pub fn rr_poll(t: u64, n: usize) -> usize {
    ((t - 1) % n as u64) as usize + 1
}

/// Node with the largest gateway-side AoI (0-based, lowest id on ties), or the
/// node whose answer was just lost.
pub fn maf_poll(gateway_aoi: &[u64], lost: Option<usize>) -> usize {
    if let Some(n) = lost {
        return n;
    }
    let mut best = 0;
    for (n, &a) in gateway_aoi.iter().enumerate() {
        if a > gateway_aoi[best] {
            best = n;
        }
    }
    best
}

/// Private flags of a Zero-Wait family node.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ZwFlags {
    /// LZW: own last transmission failed.
    pub failed_local: bool,
    /// GZW: a NACK was heard since the last ACK.
    pub backoff_global: bool,
}

pub fn zw_family_decide<R: Rng + ?Sized>(
    kind: BaselineKind,
    x: bool,
    flags: ZwFlags,
    p1: f64,
    p2: f64,
    rng: &mut R,
) -> bool {
    if !x {
        return false;
    }
    let p = match kind {
        BaselineKind::Lzw if flags.failed_local => p2,
        BaselineKind::Gzw if flags.backoff_global => p2,
        _ => p1,
    };
    rng.random::<f64>() < p
}

/// Flag update after the slot. ZW and LZW nodes only listen after they
/// transmit; GZW nodes listen every slot.
pub fn zw_family_update(kind: BaselineKind, flags: ZwFlags, x_after: bool, did_transmit: bool, fb: Observed, node: usize) -> ZwFlags {
    let mut next = flags;
    match kind {
        BaselineKind::Lzw => {
            if did_transmit {
                match fb {
                    Observed::AckFor(id) if id == node => next.failed_local = false,
                    Observed::Nack => next.failed_local = true,
                    _ => {}
                }
            }
            if !x_after {
                next.failed_local = false;
            }
        }
        BaselineKind::Gzw => match fb {
            Observed::Nack => next.backoff_global = true,
            Observed::AckFor(_) => next.backoff_global = false,
            Observed::Silent | Observed::Missing => {}
        },
        _ => {}
    }
    next
}

/// Scenario a baseline is tuned for.
#[derive(Debug, Clone)]
pub struct TuneScenario {
    pub params: SystemParams,
    pub feedback: FeedbackModel,
    pub threshold: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct TuneBudget {
    /// Slots per grid point.
    pub grid_slots: u64,
    /// Slots for re-running the best candidates.
    pub final_slots: u64,
    pub finalists: usize,
}

impl Default for TuneBudget {
    fn default() -> Self {
        Self {
            grid_slots: 100_000,
            final_slots: 1_000_000,
            finalists: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TunedBaseline {
    pub config: BaselineConfig,
    /// Violation probability of the winner at the final budget.
    pub objective: f64,
}

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let (a, b) = ((lo / step).round() as i64, (hi / step).round() as i64);
    (a..=b).map(|i| i as f64 * step).filter(|&p| p > 0.0 && p <= 1.0 + 1e-12).map(|p| p.min(1.0)).collect()
}

fn evaluate(scenario: &TuneScenario, cfg: BaselineConfig, slots: u64) -> Result<f64> {
    let episode = EpisodeConfig {
        slots,
        seed: scenario.seed,
        thresholds: vec![scenario.threshold],
        ..EpisodeConfig::new(scenario.params.clone(), ProtocolSpec::Baseline(cfg), scenario.feedback)
    };
    Ok(run_episode(&episode)?.violation[0])
}

fn rank(scenario: &TuneScenario, cands: Vec<BaselineConfig>, slots: u64) -> Result<Vec<(BaselineConfig, f64)>> {
    let mut scored = cands
        .into_par_iter()
        .map(|c| Ok((c, evaluate(scenario, c, slots)?)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.p1.total_cmp(&b.0.p1)).then(a.0.p2.total_cmp(&b.0.p2)));
    Ok(scored)
}

fn candidates(kind: BaselineKind, p1s: &[f64], p2s: &[f64]) -> Vec<BaselineConfig> {
    match kind.tunables() {
        0 => vec![BaselineConfig::polled(kind)],
        1 => p1s.iter().map(|&p1| BaselineConfig { kind, p1, p2: p1 }).collect(),
        _ => p1s
            .iter()
            .flat_map(|&p1| p2s.iter().map(move |&p2| BaselineConfig { kind, p1, p2 }))
            .collect(),
    }
}

/// Grid search for the probabilities minimizing `V(threshold)`. A 0.05 grid
/// locates the basin, a 0.01 grid refines it, and the best few candidates
/// are re-run at the final budget. All points share one seed.
pub fn grid_search_params(kind: BaselineKind, scenario: &TuneScenario, budget: TuneBudget) -> Result<TunedBaseline> {
    if kind.tunables() == 0 {
        let config = BaselineConfig::polled(kind);
        return Ok(TunedBaseline {
            config,
            objective: evaluate(scenario, config, budget.final_slots)?,
        });
    }
    let coarse = grid(0.05, 1.0, 0.05);
    let coarse_scores = rank(scenario, candidates(kind, &coarse, &coarse), budget.grid_slots)?;
    let best = coarse_scores[0].0;
    let window = |c: f64| grid((c - 0.05).max(0.01), (c + 0.05).min(1.0), 0.01);
    let fine = candidates(kind, &window(best.p1), &window(best.p2));
    let fine_scores = rank(scenario, fine, budget.grid_slots)?;
    let finalists: Vec<_> = fine_scores.iter().take(budget.finalists.max(1)).map(|(c, _)| *c).collect();
    let (config, objective) = rank(scenario, finalists, budget.final_slots)?[0];
    Ok(TunedBaseline { config, objective })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rr_examples() {
        assert_eq!(rr_poll(1, 20), 1);
        assert_eq!(rr_poll(21, 20), 1);
        assert_eq!(rr_poll(20, 20), 20);
        let polls: Vec<usize> = (1..=60).map(|t| rr_poll(t, 20)).collect();
        for id in 1..=20 {
            let at: Vec<usize> = polls.iter().enumerate().filter(|(_, &p)| p == id).map(|(i, _)| i).collect();
            assert!(at.windows(2).all(|w| w[1] - w[0] == 20));
        }
    }

    #[test]
    fn maf_examples() {
        assert_eq!(maf_poll(&[3, 7, 2], None), 1);
        assert_eq!(maf_poll(&[3, 7, 2], Some(2)), 2);
        assert_eq!(maf_poll(&[5, 5, 5], None), 0);
    }

    #[test]
    fn zw_family_decisions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for kind in [BaselineKind::Zw, BaselineKind::Lzw, BaselineKind::Gzw] {
            assert!(!zw_family_decide(kind, false, ZwFlags::default(), 1.0, 1.0, &mut rng));
        }
        let failed = ZwFlags { failed_local: true, backoff_global: false };
        assert!(zw_family_decide(BaselineKind::Lzw, true, failed, 1e-9, 1.0, &mut rng));
        let backoff = ZwFlags { failed_local: false, backoff_global: true };
        assert!(zw_family_decide(BaselineKind::Gzw, true, backoff, 1e-9, 1.0, &mut rng));
    }

    #[test]
    fn gzw_flag_follows_public_feedback() {
        let f = ZwFlags::default();
        let f = zw_family_update(BaselineKind::Gzw, f, true, false, Observed::Nack, 3);
        assert!(f.backoff_global);
        let f = zw_family_update(BaselineKind::Gzw, f, true, false, Observed::Silent, 3);
        assert!(f.backoff_global);
        let f = zw_family_update(BaselineKind::Gzw, f, true, false, Observed::AckFor(7), 3);
        assert!(!f.backoff_global);
    }

    #[test]
    fn lzw_flag_is_private() {
        let f = ZwFlags::default();
        assert!(!zw_family_update(BaselineKind::Lzw, f, true, false, Observed::Nack, 0).failed_local);
        let f = zw_family_update(BaselineKind::Lzw, f, true, true, Observed::Nack, 0);
        assert!(f.failed_local);
        assert!(!zw_family_update(BaselineKind::Lzw, f, false, false, Observed::Silent, 0).failed_local);
    }

    #[test]
    fn grid_values() {
        let g = grid(0.05, 1.0, 0.05);
        assert_eq!(g.len(), 20);
        assert_eq!(*g.last().unwrap(), 1.0);
        let w = grid(0.01, 0.06, 0.01);
        assert_eq!(w.len(), 6);
    }

    #[test]
    fn single_node_zero_wait_tunes_to_one() {
        let scenario = TuneScenario {
            params: SystemParams::symmetric(1, 0.3, 0.0).unwrap(),
            feedback: FeedbackModel::Ideal,
            threshold: 0,
            seed: 5,
        };
        let budget = TuneBudget { grid_slots: 2_000, final_slots: 5_000, finalists: 3 };
        let tuned = grid_search_params(BaselineKind::Zw, &scenario, budget).unwrap();
        assert_eq!(tuned.config.p1, 1.0);
        assert_eq!(tuned.objective, 0.0);
    }
}
