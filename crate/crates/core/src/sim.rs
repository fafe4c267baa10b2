//! Slot-level Monte Carlo driver.
//!
//! Random streams are derived from the episode seed: one anomaly stream and
//! one decision stream per node, plus channel and feedback streams, so that
//! different protocols run on the same anomaly sample paths.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::baselines::{maf_poll, rr_poll, zw_family_decide, zw_family_update, BaselineConfig, BaselineKind, ZwFlags};
use crate::channel::{feedback_broadcast_into, noisy_id, uplink_resolve, FeedbackModel, ObservedFeedback, OutcomeKind, Piggyback, SlotOutcome};
use crate::domain::{step_anomaly, update_ages, violation_indicator, NodeRecord, SystemParams};
use crate::error::{Error, Result};
use crate::protocol::{decide_transmit, DeltaConfig, DeltaContext, Phase, ProtocolState, PublicView, ViewUpdater};

pub const DEFAULT_SLOTS: u64 = 1_000_000;
const BATCHES: u64 = 50;

const DECISION_STREAM: u64 = 1 << 32;
const CHANNEL_STREAM: u64 = 1 << 40;
const FEEDBACK_STREAM: u64 = CHANNEL_STREAM + 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProtocolSpec {
    Delta(DeltaConfig),
    Baseline(BaselineConfig),
}

impl ProtocolSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ProtocolSpec::Delta(c) => match c.variant {
                crate::protocol::Variant::Delta => "DELTA",
                crate::protocol::Variant::DeltaPlus => "DELTA+",
            },
            ProtocolSpec::Baseline(b) => b.kind.name(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeConfig {
    pub params: SystemParams,
    /// Parameters the protocol is configured with, when they differ from the
    /// true ones.
    pub assumed_params: Option<SystemParams>,
    pub protocol: ProtocolSpec,
    pub feedback: FeedbackModel,
    pub slots: u64,
    pub seed: u64,
    pub thresholds: Vec<u64>,
    pub debug_assertions: bool,
}

impl EpisodeConfig {
    pub fn new(params: SystemParams, protocol: ProtocolSpec, feedback: FeedbackModel) -> Self {
        Self {
            params,
            assumed_params: None,
            protocol,
            feedback,
            slots: DEFAULT_SLOTS,
            seed: 0,
            thresholds: vec![0, 5],
            debug_assertions: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.slots == 0 {
            return Err(Error::invalid("episode needs at least one slot"));
        }
        if self.thresholds.is_empty() {
            return Err(Error::invalid("at least one AoII threshold is required"));
        }
        if let Some(assumed) = &self.assumed_params {
            if assumed.n() != self.params.n() {
                return Err(Error::invalid("assumed parameters have a different node count"));
            }
        }
        self.feedback.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLedger {
    pub slots: u64,
    pub nodes: usize,
    pub thresholds: Vec<u64>,
    /// Fraction of node-slots with AoII above each threshold.
    pub violation: Vec<f64>,
    /// Batch-means standard error of each violation estimate.
    pub violation_se: Vec<f64>,
    /// `[threshold][node]` violation fractions.
    pub per_node_violation: Vec<Vec<f64>>,
    pub mean_aoii: f64,
    pub mean_aoi: f64,
    /// Fraction of slots spent in each DELTA phase, indexed by [`Phase::index`].
    pub phase_occupancy: Option<[f64; 4]>,
    pub collisions: u64,
    pub successes: u64,
    pub silent: u64,
    /// Fraction of slots in ZW, comparable with the model's π(ZW).
    pub psi_zw_fraction: Option<f64>,
}

impl MetricsLedger {
    pub fn violation_at(&self, threshold: u64) -> Option<f64> {
        self.thresholds.iter().position(|&t| t == threshold).map(|i| self.violation[i])
    }
}

/// Per-slot information handed to an observer after ages are updated.
#[derive(Debug)]
pub struct SlotInfo<'a> {
    pub slot: u64,
    pub poll: Option<usize>,
    pub transmitted: &'a [bool],
    pub outcome: SlotOutcome,
    pub records: &'a [NodeRecord],
    pub phase: Option<Phase>,
}

pub trait SlotObserver {
    fn on_slot(&mut self, info: &SlotInfo<'_>);
}

impl<F: FnMut(&SlotInfo<'_>)> SlotObserver for F {
    fn on_slot(&mut self, info: &SlotInfo<'_>) {
        self(info)
    }
}

struct DeltaRun {
    ctx: DeltaContext,
    states: Vec<ProtocolState>,
    updater: ViewUpdater,
    gateway: PublicView,
}

enum Driver {
    Delta(Box<DeltaRun>),
    Polled { kind: BaselineKind, aoi: Vec<u64>, lost: Option<usize> },
    ZeroWait { cfg: BaselineConfig, flags: Vec<ZwFlags> },
}

struct Streams {
    anomaly: Vec<ChaCha8Rng>,
    decision: Vec<ChaCha8Rng>,
    channel: ChaCha8Rng,
    feedback: ChaCha8Rng,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl Streams {
    fn new(seed: u64, n: usize) -> Self {
        Self {
            anomaly: (0..n as u64).map(|i| stream(seed, i)).collect(),
            decision: (0..n as u64).map(|i| stream(seed, DECISION_STREAM + i)).collect(),
            channel: stream(seed, CHANNEL_STREAM),
            feedback: stream(seed, FEEDBACK_STREAM),
        }
    }
}

pub fn run_episode(config: &EpisodeConfig) -> Result<MetricsLedger> {
    run_episode_observed(config, &mut |_: &SlotInfo<'_>| {})
}

pub fn run_episode_observed(config: &EpisodeConfig, observer: &mut dyn SlotObserver) -> Result<MetricsLedger> {
    config.validate()?;
    let params = &config.params;
    let n = params.n();
    let mut streams = Streams::new(config.seed, n);
    let mut driver = match config.protocol {
        ProtocolSpec::Delta(dc) => {
            let ctx = DeltaContext::new(config.assumed_params.as_ref().unwrap_or(params), dc, config.feedback)?;
            let shared = Rc::new(ctx.initial_view());
            let states = (0..n).map(|_| ProtocolState { member: false, view: Rc::clone(&shared) }).collect();
            let gateway = ctx.initial_view();
            let share = !(config.debug_assertions && config.feedback == FeedbackModel::Ideal);
            Driver::Delta(Box::new(DeltaRun { ctx, states, updater: ViewUpdater::new(share), gateway }))
        }
        ProtocolSpec::Baseline(cfg) if cfg.kind.is_polled() => Driver::Polled {
            kind: cfg.kind,
            aoi: vec![0; n],
            lost: None,
        },
        ProtocolSpec::Baseline(cfg) => Driver::ZeroWait { cfg, flags: vec![ZwFlags::default(); n] },
    };
    let check_lockstep = config.debug_assertions
        && config.feedback == FeedbackModel::Ideal
        && matches!(driver, Driver::Delta(_));
    let poll_noise = match config.feedback {
        FeedbackModel::Noisy { sigma } if sigma > 0.0 => Some(Normal::new(0.0, sigma).expect("validated sigma")),
        _ => None,
    };

    let mut records: Vec<NodeRecord> = (0..n).map(NodeRecord::new).collect();
    let mut transmitted = vec![false; n];
    let mut senders = Vec::with_capacity(n);
    let mut feedback: Vec<ObservedFeedback> = Vec::with_capacity(n);

    let thresholds = &config.thresholds;
    let mut over = vec![vec![0u64; n]; thresholds.len()];
    let batch_len = (config.slots / BATCHES).max(1);
    let mut batch_over = vec![0u64; thresholds.len()];
    let mut batch_means: Vec<Vec<f64>> = vec![Vec::new(); thresholds.len()];
    let (mut sum_aoii, mut sum_aoi) = (0u128, 0u128);
    let mut phase_slots = [0u64; 4];
    let (mut collisions, mut successes, mut silent) = (0u64, 0u64, 0u64);

    for slot in 1..=config.slots {
        for (rec, rng) in records.iter_mut().zip(&mut streams.anomaly) {
            rec.x = step_anomaly(rec.x, params.lambda()[rec.id], rng);
        }

        senders.clear();
        let mut poll = None;
        let mut phase = None;
        match &mut driver {
            Driver::Delta(run) => {
                phase = Some(run.gateway.phase);
                phase_slots[run.gateway.phase.index()] += 1;
                for (i, rec) in records.iter().enumerate() {
                    transmitted[i] = decide_transmit(&run.ctx, &run.states[i], rec.x, rec.theta, i, &mut streams.decision[i]);
                }
            }
            Driver::Polled { kind, aoi, lost } => {
                let target = match kind {
                    BaselineKind::Rr => rr_poll(slot, n) - 1,
                    _ => maf_poll(aoi, *lost),
                };
                poll = Some(target);
                for (i, rec) in records.iter().enumerate() {
                    let heard = match config.feedback {
                        FeedbackModel::Ideal => target,
                        FeedbackModel::Noisy { .. } => match &poll_noise {
                            Some(d) => noisy_id(target + 1, n, d.sample(&mut streams.feedback)) - 1,
                            None => target,
                        },
                        FeedbackModel::Erasure { prob } | FeedbackModel::Deletion { prob } => {
                            if streams.feedback.random::<f64>() < prob {
                                usize::MAX
                            } else {
                                target
                            }
                        }
                    };
                    transmitted[i] = heard == i && (rec.x || *kind == BaselineKind::Maf);
                }
            }
            Driver::ZeroWait { cfg, flags } => {
                for (i, rec) in records.iter().enumerate() {
                    transmitted[i] = zw_family_decide(cfg.kind, rec.x, flags[i], cfg.p1, cfg.p2, &mut streams.decision[i]);
                }
            }
        }
        senders.extend(transmitted.iter().enumerate().filter(|(_, &t)| t).map(|(i, _)| i));

        let outcome = uplink_resolve(&senders, params.epsilon(), &mut streams.channel);
        match outcome.kind {
            OutcomeKind::Silent => silent += 1,
            OutcomeKind::Success(_) => successes += 1,
            OutcomeKind::Failure => collisions += 1,
        }
        let winner = outcome.winner();

        match &mut driver {
            Driver::Delta(run) => {
                let (gateway_next, piggyback) = run.ctx.gateway_step(&run.gateway, &outcome);
                run.gateway = gateway_next;
                feedback_broadcast_into(&outcome, &config.feedback, piggyback, &transmitted, &mut streams.feedback, &mut feedback);
                for i in 0..n {
                    run.states[i] = run.updater.advance(&run.ctx, &run.states[i], &feedback[i], transmitted[i], i)?;
                }
                run.updater.end_slot();
            }
            Driver::Polled { aoi, lost, kind } => {
                for a in aoi.iter_mut() {
                    *a += 1;
                }
                if let Some(w) = winner {
                    aoi[w] = 0;
                }
                *lost = match (*kind, poll) {
                    (BaselineKind::Maf, Some(p)) if winner != Some(p) => Some(p),
                    _ => None,
                };
            }
            Driver::ZeroWait { cfg, flags } => {
                feedback_broadcast_into(&outcome, &config.feedback, Piggyback::default(), &transmitted, &mut streams.feedback, &mut feedback);
                for (i, rec) in records.iter().enumerate() {
                    let x_after = rec.x && winner != Some(i);
                    flags[i] = zw_family_update(cfg.kind, flags[i], x_after, transmitted[i], feedback[i].kind, i);
                }
            }
        }

        for rec in records.iter_mut() {
            *rec = update_ages(*rec, winner == Some(rec.id));
        }

        for rec in &records {
            sum_aoii += rec.theta as u128;
            sum_aoi += rec.delta as u128;
            for (k, &thr) in thresholds.iter().enumerate() {
                if violation_indicator(rec.theta, thr) {
                    over[k][rec.id] += 1;
                    batch_over[k] += 1;
                }
            }
        }
        if slot % batch_len == 0 {
            for (k, count) in batch_over.iter_mut().enumerate() {
                batch_means[k].push(*count as f64 / (batch_len * n as u64) as f64);
                *count = 0;
            }
        }

        if config.debug_assertions {
            debug_checks(slot, &records, &driver, check_lockstep)?;
        }
        observer.on_slot(&SlotInfo {
            slot,
            poll,
            transmitted: &transmitted,
            outcome,
            records: &records,
            phase,
        });
    }

    let slots = config.slots as f64;
    let node_slots = slots * n as f64;
    let per_node_violation: Vec<Vec<f64>> = over.iter().map(|row| row.iter().map(|&c| c as f64 / slots).collect()).collect();
    let violation = over.iter().map(|row| row.iter().sum::<u64>() as f64 / node_slots).collect();
    let violation_se = batch_means.iter().map(|b| standard_error(b)).collect();
    let delta_run = matches!(driver, Driver::Delta(_));
    Ok(MetricsLedger {
        slots: config.slots,
        nodes: n,
        thresholds: thresholds.clone(),
        violation,
        violation_se,
        per_node_violation,
        mean_aoii: sum_aoii as f64 / node_slots,
        mean_aoi: sum_aoi as f64 / node_slots,
        phase_occupancy: delta_run.then(|| phase_slots.map(|c| c as f64 / slots)),
        collisions,
        successes,
        silent,
        psi_zw_fraction: delta_run.then(|| phase_slots[Phase::Zw.index()] as f64 / slots),
    })
}

fn standard_error(batches: &[f64]) -> f64 {
    let b = batches.len();
    if b < 2 {
        return f64::NAN;
    }
    let mean = batches.iter().sum::<f64>() / b as f64;
    let var = batches.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (b - 1) as f64;
    (var / b as f64).sqrt()
}

fn debug_checks(slot: u64, records: &[NodeRecord], driver: &Driver, lockstep: bool) -> Result<()> {
    if let Some(r) = records.iter().find(|r| r.theta > r.delta) {
        return Err(Error::Invariant {
            slot,
            detail: format!("node {} has AoII {} above AoI {}", r.id, r.theta, r.delta),
        });
    }
    let Driver::Delta(run) = driver else { return Ok(()) };
    if !lockstep {
        return Ok(());
    }
    let reference = &run.gateway;
    let divergent: Vec<usize> = run
        .states
        .iter()
        .enumerate()
        .filter(|(_, s)| *s.view != *reference)
        .map(|(i, _)| i)
        .collect();
    if !divergent.is_empty() {
        return Err(Error::Invariant {
            slot,
            detail: format!("views of nodes {divergent:?} diverge from the common view"),
        });
    }
    if let Some(r) = records.iter().find(|r| r.theta > reference.psi[r.id] as u64) {
        return Err(Error::Invariant {
            slot,
            detail: format!("node {} has AoII {} above its bound {}", r.id, r.theta, reference.psi[r.id]),
        });
    }
    Ok(())
}

/// Aggregate of DELTA runs over randomly drawn activation vectors.
#[derive(Debug, Clone)]
pub struct HeterogeneityResult {
    pub thresholds: Vec<u64>,
    pub mean: Vec<f64>,
    pub spread: Vec<f64>,
    pub samples: Vec<MetricsLedger>,
}

/// Draws `samples` activation vectors with `λ_n ~ U((1-ν)ρ/N, (1+ν)ρ/N)` and
/// runs `base` on each. The protocol keeps the homogeneous parameters of
/// `base`. Sample `i` uses episode seed `base.seed + i`.
pub fn run_heterogeneity_sweep(rho: f64, nu: f64, samples: usize, base: &EpisodeConfig) -> Result<HeterogeneityResult> {
    if !(0.0..1.0).contains(&nu) || samples == 0 {
        return Err(Error::invalid(format!("bad heterogeneity sweep ν={nu} samples={samples}")));
    }
    let n = base.params.n();
    let eps = base.params.epsilon().to_vec();
    let assumed = SystemParams::symmetric(n, rho, base.params.mean_epsilon())?;
    let mut rng = stream(base.seed, CHANNEL_STREAM + 7);
    let centre = rho / n as f64;
    let vectors: Vec<Vec<f64>> = (0..samples)
        .map(|_| {
            (0..n)
                .map(|_| if nu == 0.0 { centre } else { rng.random_range((1.0 - nu) * centre..(1.0 + nu) * centre) })
                .collect()
        })
        .collect();
    let runs = vectors
        .into_par_iter()
        .enumerate()
        .map(|(i, lambda)| {
            let cfg = EpisodeConfig {
                params: SystemParams::new(lambda, eps.clone())?,
                assumed_params: Some(assumed.clone()),
                seed: base.seed.wrapping_add(i as u64),
                ..base.clone()
            };
            run_episode(&cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let k = base.thresholds.len();
    let mean: Vec<f64> = (0..k).map(|t| runs.iter().map(|r| r.violation[t]).sum::<f64>() / runs.len() as f64).collect();
    let spread = (0..k)
        .map(|t| {
            let m = mean[t];
            let var = runs.iter().map(|r| (r.violation[t] - m).powi(2)).sum::<f64>() / (runs.len().max(2) - 1) as f64;
            var.sqrt()
        })
        .collect();
    Ok(HeterogeneityResult {
        thresholds: base.thresholds.clone(),
        mean,
        spread,
        samples: runs,
    })
}
