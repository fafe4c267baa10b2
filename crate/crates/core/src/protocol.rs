//! Per-node DELTA / DELTA+ state machine.
//!
//! Everything a node derives from public announcements lives in a
//! [`PublicView`]: the phase, the maximum-possible-AoII vector ψ, the CR round
//! and the DELTA+ collider belief. Under ideal feedback every node holds an
//! identical view, so views are shared behind `Rc` and updated once per
//! distinct observation. The only private protocol bit is the collision-set
//! membership flag.
//!
//! ψ always bounds the AoII at the end of the last processed slot. During a
//! CR/CE cycle ψ grows by one per slot (and drops to 0 for acknowledged
//! nodes); the cycle also remembers the bound each node had when it opened,
//! so the BT entry can tighten ψ to `min(live, start + elapsed)`.

use std::rc::Rc;

use rand::Rng;

use crate::channel::{FeedbackModel, Observed, ObservedFeedback, Piggyback, SlotOutcome, OutcomeKind};
use crate::cr::{deltaplus_optimal_p, deltaplus_prior, deltaplus_update, optimal_p_static, BeliefEvent, ColliderBelief};
use crate::domain::SystemParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Zw,
    Cr,
    Ce,
    Bt,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Zw, Phase::Cr, Phase::Ce, Phase::Bt];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Zw => "ZW",
            Phase::Cr => "CR",
            Phase::Ce => "CE",
            Phase::Bt => "BT",
        }
    }

    fn in_cycle(self) -> bool {
        matches!(self, Phase::Cr | Phase::Ce)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Delta,
    DeltaPlus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaConfig {
    /// Slot budget `K`; node `n` transmits in BT when its chance of holding the
    /// highest AoII exceeds `F_n = (1 - λ_n)^K`.
    pub k: f64,
    pub variant: Variant,
    /// Re-optimize the CR probabilities of cycles opened in BT.
    pub bt_p_adjust: bool,
}

impl DeltaConfig {
    pub fn new(k: f64, variant: Variant) -> Self {
        Self {
            k,
            variant,
            bt_p_adjust: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CycleOrigin {
    Zw,
    Bt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleBook {
    pub origin: CycleOrigin,
    /// Bound on each node's AoII at the end of the opening collision slot,
    /// assuming it stayed silent.
    pub start_psi: Vec<u32>,
    /// CR/CE slots since the opening collision.
    pub elapsed: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PublicView {
    pub phase: Phase,
    pub psi: Vec<u32>,
    pub cr_round: usize,
    pub cycle: Option<CycleBook>,
    pub belief: Option<ColliderBelief>,
    /// Transmission probability for collision-set members in the next CR slot.
    pub cr_p: f64,
}

impl PublicView {
    pub fn max_psi(&self) -> u32 {
        self.psi.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
pub struct ProtocolState {
    pub member: bool,
    pub view: Rc<PublicView>,
}

impl ProtocolState {
    pub fn phase(&self) -> Phase {
        self.view.phase
    }
}

/// What a node takes the slot outcome to have been, after applying the
/// missed-feedback rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PublicEvent {
    Silent,
    Ack(usize),
    Nack,
    Lost,
}

/// Read-only protocol parameters shared by every node of an episode.
#[derive(Debug, Clone)]
pub struct DeltaContext {
    config: DeltaConfig,
    feedback: FeedbackModel,
    lambda: Vec<f64>,
    ln_q: Vec<f64>,
    ln_threshold: Vec<f64>,
    p_zw: Vec<f64>,
    p_bt: Vec<f64>,
    prior_zw: ColliderBelief,
    prior_bt: ColliderBelief,
    /// Common erasure probability assumed by the belief model.
    epsilon: f64,
    homogeneous: bool,
}

const TIE_TOL: f64 = 1e-12;

fn exceeds(ln_f: f64, ln_threshold: f64) -> bool {
    ln_f - ln_threshold > TIE_TOL * ln_threshold.abs().max(1.0)
}

/// `Σ_m [ψ_m - θ + 1]⁺` in `O(log N)` per query.
struct ExcessIndex {
    desc: Vec<u32>,
    prefix: Vec<i64>,
}

impl ExcessIndex {
    fn new(psi: &[u32]) -> Self {
        let mut desc = psi.to_vec();
        desc.sort_unstable_by(|a, b| b.cmp(a));
        let mut prefix = Vec::with_capacity(desc.len() + 1);
        prefix.push(0i64);
        for &p in &desc {
            prefix.push(prefix.last().unwrap() + p as i64);
        }
        Self { desc, prefix }
    }

    fn excess(&self, theta: i64) -> i64 {
        let k = self.desc.partition_point(|&p| p as i64 >= theta);
        self.prefix[k] + k as i64 * (1 - theta)
    }
}

impl DeltaContext {
    pub fn new(params: &SystemParams, config: DeltaConfig, feedback: FeedbackModel) -> Result<Self> {
        if !(config.k.is_finite() && config.k > 0.0) {
            return Err(Error::invalid(format!("slot budget K must be positive, got {}", config.k)));
        }
        let n = params.n();
        let lambda_bar = params.mean_lambda();
        let eps_bar = params.mean_epsilon();
        let ln_q: Vec<f64> = params.lambda().iter().map(|l| (-l).ln_1p()).collect();
        let ln_threshold = ln_q.iter().map(|q| config.k * q).collect();
        let p_zw = optimal_p_static(n, lambda_bar, eps_bar);
        let prior_zw = deltaplus_prior(n, lambda_bar, eps_bar);
        let (p_bt, prior_bt) = if config.bt_p_adjust {
            let alpha = bt_activation(lambda_bar, config.k, n as f64);
            (optimal_p_static(n, alpha, eps_bar), deltaplus_prior(n, alpha, eps_bar))
        } else {
            (p_zw.clone(), prior_zw.clone())
        };
        Ok(Self {
            config,
            feedback,
            lambda: params.lambda().to_vec(),
            ln_q: ln_q.clone(),
            ln_threshold,
            p_zw,
            p_bt,
            prior_zw,
            prior_bt,
            epsilon: eps_bar,
            homogeneous: ln_q.windows(2).all(|w| w[0] == w[1]),
        })
    }

    pub fn n(&self) -> usize {
        self.lambda.len()
    }

    pub fn config(&self) -> &DeltaConfig {
        &self.config
    }

    pub fn p_zw(&self) -> &[f64] {
        &self.p_zw
    }

    pub fn p_bt(&self) -> &[f64] {
        &self.p_bt
    }

    pub fn initial_view(&self) -> PublicView {
        PublicView {
            phase: Phase::Zw,
            psi: vec![0; self.n()],
            cr_round: 0,
            cycle: None,
            belief: None,
            cr_p: self.p_zw[0],
        }
    }

    pub fn initial_state(&self) -> ProtocolState {
        ProtocolState {
            member: false,
            view: Rc::new(self.initial_view()),
        }
    }

    /// `ln f_n(θ, ψ)` for node `n`.
    fn ln_highest(&self, n: usize, theta: i64, psi: &[u32]) -> f64 {
        if self.homogeneous {
            let count: i64 = psi
                .iter()
                .enumerate()
                .filter(|&(m, _)| m != n)
                .map(|(_, &p)| (p as i64 - theta + 1).max(0))
                .sum();
            return count as f64 * self.ln_q[0];
        }
        psi.iter()
            .zip(&self.ln_q)
            .enumerate()
            .filter(|&(m, _)| m != n)
            .map(|(_, (&p, &q))| (p as i64 - theta + 1).max(0) as f64 * q)
            .sum()
    }

    /// The BT transmission rule `f_n(θ, ψ) > F_n`; equality counts as silence.
    pub fn bt_transmits(&self, n: usize, theta: u64, psi: &[u32]) -> bool {
        exceeds(self.ln_highest(n, theta as i64, psi), self.ln_threshold[n])
    }

    /// Bound on node `n`'s AoII after a BT slot in which it stayed silent.
    fn silent_bound(&self, n: usize, psi: &[u32], transmits: impl Fn(u64) -> bool) -> u32 {
        if self.lambda[n] <= 0.0 || transmits(0) {
            return 0;
        }
        // largest θ in 0..=ψ_n at which node n would have stayed silent
        let (mut lo, mut hi) = (0u32, psi[n]);
        while lo < hi {
            let mid = lo + (hi - lo).div_ceil(2);
            if transmits(mid as u64) {
                hi = mid - 1;
            } else {
                lo = mid;
            }
        }
        lo + 1
    }

    /// ψ after one BT slot; `acked` is the node whose report was acknowledged.
    pub fn update_max_possible_aoii(&self, psi: &[u32], acked: Option<usize>) -> Vec<u32> {
        if !self.homogeneous {
            return (0..psi.len())
                .map(|n| match acked {
                    Some(a) if a == n => 0,
                    _ => self.silent_bound(n, psi, |theta| self.bt_transmits(n, theta, psi)),
                })
                .collect();
        }
        // equal λ: the exponent sum is an integer count times ln(1-λ)
        let index = ExcessIndex::new(psi);
        let (q, thr) = (self.ln_q[0], self.ln_threshold[0]);
        (0..psi.len())
            .map(|n| match acked {
                Some(a) if a == n => 0,
                _ => self.silent_bound(n, psi, |theta| {
                    let own = (psi[n] as i64 - theta as i64 + 1).max(0);
                    let others = index.excess(theta as i64) - own;
                    exceeds(others as f64 * q, thr)
                }),
            })
            .collect()
    }

    fn cycle_p(&self, view: &PublicView) -> f64 {
        if let Some(belief) = &view.belief {
            return deltaplus_optimal_p(belief);
        }
        let p = match view.cycle.as_ref().map(|c| c.origin) {
            Some(CycleOrigin::Bt) => &self.p_bt,
            _ => &self.p_zw,
        };
        p[view.cr_round.min(p.len() - 1)]
    }

    fn prior(&self, origin: CycleOrigin) -> Option<ColliderBelief> {
        (self.config.variant == Variant::DeltaPlus).then(|| match origin {
            CycleOrigin::Zw => self.prior_zw.clone(),
            CycleOrigin::Bt => self.prior_bt.clone(),
        })
    }

    fn open_cycle(&self, view: &mut PublicView, origin: CycleOrigin, start_psi: Vec<u32>) {
        for p in view.psi.iter_mut() {
            *p = p.saturating_add(1);
        }
        view.phase = Phase::Cr;
        view.cr_round = 0;
        view.belief = self.prior(origin);
        view.cycle = Some(CycleBook {
            origin,
            start_psi,
            elapsed: 0,
        });
        view.cr_p = self.cycle_p(view);
    }

    /// Leaves a CR/CE cycle, tightening ψ with the cycle's public slot count.
    fn close_cycle(&self, view: &mut PublicView) {
        if let Some(book) = view.cycle.take() {
            for (p, s) in view.psi.iter_mut().zip(&book.start_psi) {
                *p = (*p).min(s.saturating_add(book.elapsed));
            }
        }
        view.belief = None;
        view.cr_round = 0;
        view.phase = Phase::Bt;
        if view.max_psi() == 0 {
            self.reset_to_zw(view);
        }
    }

    fn reset_to_zw(&self, view: &mut PublicView) {
        view.phase = Phase::Zw;
        view.psi.iter_mut().for_each(|p| *p = 0);
        view.cycle = None;
        view.belief = None;
        view.cr_round = 0;
        view.cr_p = self.p_zw[0];
    }

    fn tick_cycle(&self, view: &mut PublicView, acked: Option<usize>) {
        for p in view.psi.iter_mut() {
            *p = p.saturating_add(1);
        }
        if let Some(id) = acked {
            view.psi[id] = 0;
        }
        if let Some(book) = view.cycle.as_mut() {
            book.elapsed += 1;
        }
    }

    fn update_belief(&self, view: &mut PublicView, event: BeliefEvent, p: f64, epsilon: f64) {
        let Some(belief) = view.belief.as_ref() else { return };
        view.belief = Some(match deltaplus_update(belief, event, p, epsilon) {
            Ok(b) => b,
            Err(err) => {
                log::debug!("{err}; restarting from the prior");
                let origin = view.cycle.as_ref().map_or(CycleOrigin::Zw, |c| c.origin);
                self.prior(origin).expect("belief only exists for DELTA+")
            }
        });
    }

    /// Maps a node's observation to the event it acts upon.
    pub fn interpret(&self, phase: Phase, fb: &ObservedFeedback, did_transmit: bool, node: usize) -> Result<PublicEvent> {
        Ok(match fb.kind {
            Observed::AckFor(id) if id >= self.n() => {
                return Err(Error::ImpossibleFeedback {
                    observed: "ACK for an unknown node",
                    model: self.feedback.name(),
                })
            }
            Observed::AckFor(id) => PublicEvent::Ack(id),
            Observed::Nack => PublicEvent::Nack,
            Observed::Silent => PublicEvent::Silent,
            Observed::Missing => {
                if !matches!(self.feedback, FeedbackModel::Erasure { .. }) {
                    return Err(Error::ImpossibleFeedback {
                        observed: "missing",
                        model: self.feedback.name(),
                    });
                }
                handle_missed_feedback(phase, did_transmit, node)
            }
        })
    }

    /// Applies one slot's public event to a view.
    pub fn next_view(&self, view: &PublicView, event: PublicEvent) -> PublicView {
        let mut next = view.clone();
        match (view.phase, event) {
            (Phase::Zw, PublicEvent::Nack) => {
                let zeros = vec![0; self.n()];
                self.open_cycle(&mut next, CycleOrigin::Zw, zeros);
            }
            (Phase::Zw, _) => {}
            (Phase::Cr, _) => {
                let acked = match event {
                    PublicEvent::Ack(id) => Some(id),
                    _ => None,
                };
                self.tick_cycle(&mut next, acked);
                let belief_event = match event {
                    PublicEvent::Ack(_) => Some(BeliefEvent::AckCr),
                    PublicEvent::Silent => Some(BeliefEvent::SilentCr),
                    PublicEvent::Nack => Some(BeliefEvent::NackCr),
                    PublicEvent::Lost => None,
                };
                if let Some(be) = belief_event {
                    self.update_belief(&mut next, be, view.cr_p, self.epsilon);
                }
                if acked.is_some() {
                    next.phase = Phase::Ce;
                } else {
                    next.cr_p = self.cycle_p(&next);
                }
            }
            (Phase::Ce, PublicEvent::Nack | PublicEvent::Lost) => {
                self.tick_cycle(&mut next, None);
                if event == PublicEvent::Nack {
                    self.update_belief(&mut next, BeliefEvent::NackCe, view.cr_p, self.epsilon);
                }
                next.phase = Phase::Cr;
                next.cr_round += 1;
                next.cr_p = self.cycle_p(&next);
            }
            (Phase::Ce, PublicEvent::Ack(id)) => {
                self.tick_cycle(&mut next, Some(id));
                self.close_cycle(&mut next);
            }
            (Phase::Ce, PublicEvent::Silent) => {
                self.tick_cycle(&mut next, None);
                self.close_cycle(&mut next);
            }
            (Phase::Bt, PublicEvent::Nack) => {
                let start = self.update_max_possible_aoii(&view.psi, None);
                self.open_cycle(&mut next, CycleOrigin::Bt, start);
            }
            (Phase::Bt, PublicEvent::Ack(id)) => {
                next.psi = self.update_max_possible_aoii(&view.psi, Some(id));
            }
            (Phase::Bt, PublicEvent::Silent | PublicEvent::Lost) => {
                next.psi = self.update_max_possible_aoii(&view.psi, None);
            }
        }
        if next.phase == Phase::Bt && next.max_psi() == 0 {
            self.reset_to_zw(&mut next);
        }
        next
    }

    /// Aligns a view with the gateway's piggybacked phase and max ψ.
    pub fn resync_view(&self, view: &PublicView, phase: Option<Phase>, max_psi: Option<u32>) -> PublicView {
        let mut next = view.clone();
        if let Some(g) = phase {
            if g != next.phase {
                match (next.phase, g) {
                    (_, Phase::Zw) => self.reset_to_zw(&mut next),
                    (Phase::Zw | Phase::Bt, Phase::Cr | Phase::Ce) => {
                        let origin = if next.phase == Phase::Bt { CycleOrigin::Bt } else { CycleOrigin::Zw };
                        let start = next.psi.clone();
                        self.open_cycle(&mut next, origin, start);
                        next.phase = g;
                    }
                    (Phase::Cr | Phase::Ce, Phase::Bt) => {
                        self.close_cycle(&mut next);
                        next.phase = Phase::Bt;
                    }
                    (Phase::Ce, Phase::Cr) => {
                        next.phase = Phase::Cr;
                        next.cr_round += 1;
                        next.cr_p = self.cycle_p(&next);
                    }
                    (Phase::Cr, Phase::Ce) => next.phase = Phase::Ce,
                    (Phase::Zw, Phase::Bt) => next.phase = Phase::Bt,
                    _ => unreachable!("phases differ"),
                }
            }
        }
        if let (Phase::Bt, Some(m)) = (next.phase, max_psi) {
            if m == 0 {
                self.reset_to_zw(&mut next);
            } else if next.max_psi() == 0 {
                next.psi.iter_mut().for_each(|p| *p = m);
            } else {
                next.psi.iter_mut().for_each(|p| *p = (*p).min(m));
            }
        }
        next
    }

    /// Gateway-side view update from the true outcome; returns the new view and
    /// the piggyback to attach to this slot's feedback.
    pub fn gateway_step(&self, view: &PublicView, outcome: &SlotOutcome) -> (PublicView, Piggyback) {
        let event = match outcome.kind {
            OutcomeKind::Silent => PublicEvent::Silent,
            OutcomeKind::Success(w) => PublicEvent::Ack(w),
            OutcomeKind::Failure => PublicEvent::Nack,
        };
        let next = self.next_view(view, event);
        let in_bt = view.phase == Phase::Bt || next.phase == Phase::Bt;
        let piggyback = Piggyback {
            phase: Some(next.phase),
            max_psi: in_bt.then(|| next.max_psi()),
        };
        (next, piggyback)
    }
}

/// Activation probability of a node over `K / L` slots.
pub fn bt_activation(lambda: f64, k: f64, active: f64) -> f64 {
    -((k / active.max(1.0)) * (-lambda).ln_1p()).exp_m1()
}

/// `Π_{m≠n} (1 - λ_m)^{[ψ_m - θ + 1]⁺}`: chance that node `n` holds the highest AoII.
pub fn highest_aoii_prob(theta: u64, psi: &[u32], lambda: &[f64], node: usize) -> f64 {
    psi.iter()
        .zip(lambda)
        .enumerate()
        .filter(|&(m, _)| m != node)
        .map(|(_, (&p, &l))| (1.0 - l).powi((p as i64 - theta as i64 + 1).max(0) as i32))
        .product()
}

pub fn decide_transmit<R: Rng + ?Sized>(
    ctx: &DeltaContext,
    state: &ProtocolState,
    x: bool,
    theta: u64,
    node: usize,
    rng: &mut R,
) -> bool {
    if !x {
        return false;
    }
    match state.view.phase {
        Phase::Zw => true,
        Phase::Cr => state.member && rng.random::<f64>() < state.view.cr_p,
        Phase::Ce => state.member,
        Phase::Bt => ctx.bt_transmits(node, theta, &state.view.psi),
    }
}

/// Event a node assumes when an ACK/NACK was sent but not decoded: success
/// in ZW and BT (own success if it transmitted), a loss otherwise. A lost
/// event counts as a failure in CR and as a collision in CE.
pub fn handle_missed_feedback(phase: Phase, did_transmit: bool, node: usize) -> PublicEvent {
    match phase {
        Phase::Zw => PublicEvent::Silent,
        Phase::Bt if did_transmit => PublicEvent::Ack(node),
        Phase::Bt => PublicEvent::Silent,
        Phase::Cr | Phase::Ce => PublicEvent::Lost,
    }
}

fn next_member(before: Phase, after: Phase, member: bool, event: PublicEvent, did_transmit: bool, node: usize) -> bool {
    if !after.in_cycle() {
        return false;
    }
    if !before.in_cycle() {
        return did_transmit;
    }
    member && !(did_transmit && event == PublicEvent::Ack(node))
}

/// Advances node states, sharing the update work between nodes whose views
/// are the same object and who observed the same thing.
#[derive(Debug, Default)]
pub struct ViewUpdater {
    share: bool,
    memo: Vec<(Rc<PublicView>, MemoKey, Phase, Rc<PublicView>)>,
}

type MemoKey = (PublicEvent, Option<Phase>, Option<u32>);

impl ViewUpdater {
    /// With `share = false` every node recomputes its view independently,
    /// which makes cross-node agreement checks meaningful.
    pub fn new(share: bool) -> Self {
        Self { share, memo: Vec::new() }
    }

    pub fn advance(
        &mut self,
        ctx: &DeltaContext,
        state: &ProtocolState,
        fb: &ObservedFeedback,
        did_transmit: bool,
        node: usize,
    ) -> Result<ProtocolState> {
        let before = state.view.phase;
        let event = ctx.interpret(before, fb, did_transmit, node)?;
        let key = (event, fb.piggyback_phase, fb.piggyback_max_psi);
        let cached = self
            .memo
            .iter()
            .find(|(old, k, _, _)| *k == key && (Rc::ptr_eq(old, &state.view) || **old == *state.view))
            .map(|(_, _, phase, new)| (*phase, Rc::clone(new)));
        let (own_phase, view) = match cached {
            Some(hit) => hit,
            None => {
                let own = ctx.next_view(&state.view, event);
                let own_phase = own.phase;
                let synced = ctx.resync_view(&own, fb.piggyback_phase, fb.piggyback_max_psi);
                // views that resynchronized to the same content share storage again
                let synced = match self.memo.iter().find(|(_, _, _, new)| **new == synced) {
                    Some((_, _, _, new)) => Rc::clone(new),
                    None => Rc::new(synced),
                };
                if self.share {
                    self.memo.push((Rc::clone(&state.view), key, own_phase, Rc::clone(&synced)));
                }
                (own_phase, synced)
            }
        };
        let mut member = next_member(before, own_phase, state.member, event, did_transmit, node);
        if !own_phase.in_cycle() && view.phase.in_cycle() {
            member = did_transmit;
        } else if !view.phase.in_cycle() {
            member = false;
        }
        Ok(ProtocolState { member, view })
    }

    pub fn end_slot(&mut self) {
        self.memo.clear();
    }
}

/// Single-node transition: own event first, then piggyback resynchronization.
pub fn advance_phase(
    ctx: &DeltaContext,
    state: &ProtocolState,
    fb: &ObservedFeedback,
    did_transmit: bool,
    node: usize,
) -> Result<ProtocolState> {
    ViewUpdater::new(false).advance(ctx, state, fb, did_transmit, node)
}

pub fn resync_from_piggyback(ctx: &DeltaContext, state: &ProtocolState, fb: &ObservedFeedback, did_transmit: bool) -> ProtocolState {
    let view = ctx.resync_view(&state.view, fb.piggyback_phase, fb.piggyback_max_psi);
    let member = match (state.view.phase.in_cycle(), view.phase.in_cycle()) {
        (_, false) => false,
        (false, true) => did_transmit,
        (true, true) => state.member,
    };
    ProtocolState {
        member,
        view: Rc::new(view),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ctx(n: usize, rho: f64, k: f64, variant: Variant) -> DeltaContext {
        let params = SystemParams::symmetric(n, rho, 0.05).unwrap();
        DeltaContext::new(&params, DeltaConfig::new(k, variant), FeedbackModel::Ideal).unwrap()
    }

    fn delivered(kind: Observed) -> ObservedFeedback {
        ObservedFeedback::bare(kind)
    }

    /// Largest silent θ by direct scan of the product form, plus one.
    fn scan_bound(n: usize, psi: &[u32], lambda: &[f64], k: f64) -> u32 {
        let threshold = (1.0 - lambda[n]).powf(k);
        let silent: Vec<u32> = (0..=psi[n])
            .filter(|&t| highest_aoii_prob(t as u64, psi, lambda, n) <= threshold)
            .collect();
        match silent.last() {
            Some(&t) if lambda[n] > 0.0 && silent.contains(&0) => t + 1,
            _ => 0,
        }
    }

    #[test]
    fn highest_aoii_examples() {
        let psi = vec![4u32; 20];
        let f = highest_aoii_prob(4, &psi, &[0.025; 20], 0);
        assert!((f - 0.975f64.powi(19)).abs() < 1e-15);
        let psi = vec![7u32; 11];
        let f = highest_aoii_prob(7, &psi, &[0.1; 11], 3);
        assert!((f - 0.9f64.powi(10)).abs() < 1e-15);
        // no competitor can beat an AoII two above every bound
        assert_eq!(highest_aoii_prob(9, &psi, &[0.1; 11], 3), 1.0);
    }

    #[test]
    fn silent_bt_slot_lowers_uniform_bounds() {
        // 19 competitors: K=50 leaves θ ≤ ψ-2 silent, K=60 leaves θ ≤ ψ-3
        let c = ctx(20, 0.5, 50.0, Variant::Delta);
        assert_eq!(c.update_max_possible_aoii(&[10; 20], None), vec![9; 20]);
        let c = ctx(20, 0.5, 60.0, Variant::Delta);
        assert_eq!(c.update_max_possible_aoii(&[10; 20], None), vec![8; 20]);
        let mut expected = vec![8; 20];
        expected[4] = 0;
        assert_eq!(c.update_max_possible_aoii(&[10; 20], Some(4)), expected);
    }

    #[test]
    fn tie_counts_as_silence() {
        // 19·(ψ-θ+1) = 57 at θ = ψ-2 equals K exactly
        let c = ctx(20, 0.5, 57.0, Variant::Delta);
        assert!(!c.bt_transmits(0, 8, &[10; 20]));
        assert!(c.bt_transmits(0, 9, &[10; 20]));
    }

    proptest! {
        #[test]
        fn silent_bound_matches_scan(
            psi in prop::collection::vec(0u32..30, 2..8),
            k_half in 3u32..80,
            hetero in any::<bool>(),
        ) {
            let n = psi.len();
            let k = k_half as f64 + 0.5;
            let lambda: Vec<f64> = (0..n)
                .map(|i| if hetero { 0.01 + 0.013 * i as f64 } else { 0.04 })
                .collect();
            let params = SystemParams::new(lambda.clone(), vec![0.05; n]).unwrap();
            let c = DeltaContext::new(&params, DeltaConfig::new(k, Variant::Delta), FeedbackModel::Ideal).unwrap();
            let next = c.update_max_possible_aoii(&psi, None);
            for i in 0..n {
                prop_assert_eq!(next[i], scan_bound(i, &psi, &lambda, k));
            }
        }

        #[test]
        fn transmission_is_monotone_in_aoii(psi in prop::collection::vec(0u32..40, 2..10), k in 1.0f64..200.0) {
            let c = ctx(psi.len(), 0.4, k, Variant::Delta);
            for node in 0..psi.len() {
                let decisions: Vec<bool> = (0..45).map(|t| c.bt_transmits(node, t, &psi)).collect();
                prop_assert!(decisions.windows(2).all(|w| !w[0] || w[1]));
            }
        }
    }

    #[test]
    fn decisions_per_phase() {
        let c = ctx(4, 0.4, 10.0, Variant::Delta);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut state = c.initial_state();
        assert!(!decide_transmit(&c, &state, false, 0, 0, &mut rng));
        assert!(decide_transmit(&c, &state, true, 0, 0, &mut rng));
        let mut view = c.initial_view();
        view.phase = Phase::Ce;
        state.view = Rc::new(view);
        assert!(!decide_transmit(&c, &state, true, 3, 0, &mut rng));
        state.member = true;
        assert!(decide_transmit(&c, &state, true, 3, 0, &mut rng));
        assert!(!decide_transmit(&c, &state, false, 3, 0, &mut rng));
    }

    #[test]
    fn cr_members_transmit_at_rate_p() {
        let c = ctx(20, 0.5, 50.0, Variant::Delta);
        let mut view = c.initial_view();
        view.phase = Phase::Cr;
        let p = view.cr_p;
        let state = ProtocolState { member: true, view: Rc::new(view) };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trials = 200_000;
        let hits = (0..trials).filter(|_| decide_transmit(&c, &state, true, 2, 0, &mut rng)).count();
        let se = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((hits as f64 / trials as f64 - p).abs() < 5.0 * se);
    }

    #[test]
    fn cycle_walkthrough() {
        let c = ctx(5, 0.5, 12.0, Variant::Delta);
        let v0 = c.initial_view();
        let v1 = c.next_view(&v0, PublicEvent::Nack);
        assert_eq!((v1.phase, v1.psi.clone(), v1.cr_round), (Phase::Cr, vec![1; 5], 0));
        assert_eq!(v1.cr_p, c.p_zw()[0]);
        let v2 = c.next_view(&v1, PublicEvent::Silent);
        assert_eq!((v2.phase, v2.psi.clone()), (Phase::Cr, vec![2; 5]));
        let v3 = c.next_view(&v2, PublicEvent::Ack(1));
        assert_eq!((v3.phase, v3.psi.clone()), (Phase::Ce, vec![3, 0, 3, 3, 3]));
        let v4 = c.next_view(&v3, PublicEvent::Nack);
        assert_eq!((v4.phase, v4.cr_round), (Phase::Cr, 1));
        assert_eq!(v4.cr_p, c.p_zw()[1]);
        let v5 = c.next_view(&v4, PublicEvent::Ack(3));
        let v6 = c.next_view(&v5, PublicEvent::Silent);
        // silent in the opening slot means no anomaly then: ψ = slots since;
        // acknowledged nodes count from their ACK
        assert_eq!(v6.phase, Phase::Bt);
        assert_eq!(v6.psi, vec![5, 3, 5, 1, 5]);
        assert!(v6.cycle.is_none());
    }

    #[test]
    fn single_collider_cycle_returns_to_zero_wait() {
        let c = ctx(3, 0.3, 6.0, Variant::Delta);
        let v = c.next_view(&c.initial_view(), PublicEvent::Nack);
        let v = c.next_view(&v, PublicEvent::Ack(2));
        let v = c.next_view(&v, PublicEvent::Silent);
        assert_eq!(v.phase, Phase::Bt);
        assert_eq!(v.psi, vec![2, 2, 1]);
        let mut w = v;
        for _ in 0..50 {
            if w.phase == Phase::Zw {
                break;
            }
            w = c.next_view(&w, PublicEvent::Silent);
        }
        assert_eq!(w.phase, Phase::Zw);
        assert_eq!(w.psi, vec![0; 3]);
    }

    #[test]
    fn missed_feedback_table() {
        assert_eq!(handle_missed_feedback(Phase::Zw, true, 2), PublicEvent::Silent);
        assert_eq!(handle_missed_feedback(Phase::Bt, true, 2), PublicEvent::Ack(2));
        assert_eq!(handle_missed_feedback(Phase::Bt, false, 2), PublicEvent::Silent);
        assert_eq!(handle_missed_feedback(Phase::Cr, true, 2), PublicEvent::Lost);
        assert_eq!(handle_missed_feedback(Phase::Ce, false, 2), PublicEvent::Lost);
    }

    #[test]
    fn lost_feedback_moves_ce_back_to_cr() {
        let params = SystemParams::symmetric(4, 0.4, 0.05).unwrap();
        let c = DeltaContext::new(&params, DeltaConfig::new(10.0, Variant::Delta), FeedbackModel::Erasure { prob: 0.1 }).unwrap();
        let mut view = c.next_view(&c.initial_view(), PublicEvent::Nack);
        view = c.next_view(&view, PublicEvent::Ack(0));
        let state = ProtocolState { member: true, view: Rc::new(view) };
        let next = advance_phase(&c, &state, &delivered(Observed::Missing), true, 1).unwrap();
        assert_eq!(next.phase(), Phase::Cr);
        assert_eq!(next.view.cr_round, 1);
        assert!(next.member);
    }

    #[test]
    fn missing_feedback_is_rejected_without_erasure() {
        let c = ctx(4, 0.4, 10.0, Variant::Delta);
        let err = c.interpret(Phase::Cr, &delivered(Observed::Missing), false, 0).unwrap_err();
        assert!(matches!(err, Error::ImpossibleFeedback { .. }));
        assert!(c.interpret(Phase::Cr, &delivered(Observed::AckFor(9)), false, 0).is_err());
    }

    #[test]
    fn membership_follows_the_opening_collision() {
        let c = ctx(4, 0.4, 10.0, Variant::Delta);
        let s = c.initial_state();
        let nack = delivered(Observed::Nack);
        let member = advance_phase(&c, &s, &nack, true, 0).unwrap();
        let bystander = advance_phase(&c, &s, &nack, false, 1).unwrap();
        assert!(member.member && !bystander.member);
        let done = advance_phase(&c, &member, &delivered(Observed::AckFor(0)), true, 0).unwrap();
        assert_eq!(done.phase(), Phase::Ce);
        assert!(!done.member);
        let other = advance_phase(&c, &member, &delivered(Observed::AckFor(2)), false, 0).unwrap();
        assert!(other.member);
    }

    #[test]
    fn piggyback_resynchronizes_a_stale_view() {
        let c = ctx(4, 0.4, 10.0, Variant::Delta);
        let mut cr = c.next_view(&c.initial_view(), PublicEvent::Nack);
        cr = c.next_view(&cr, PublicEvent::Silent);
        let synced = c.resync_view(&cr, Some(Phase::Bt), Some(1));
        assert_eq!(synced.phase, Phase::Bt);
        assert!(synced.psi.iter().all(|&p| p <= 1));
        let reset = c.resync_view(&cr, Some(Phase::Zw), None);
        assert_eq!(reset, c.initial_view());
        let state = ProtocolState { member: true, view: Rc::new(cr) };
        let fb = ObservedFeedback { kind: Observed::Silent, piggyback_phase: Some(Phase::Zw), piggyback_max_psi: Some(0) };
        assert!(!resync_from_piggyback(&c, &state, &fb, false).member);
    }

    #[test]
    fn gateway_announces_phase_and_bound() {
        let c = ctx(4, 0.4, 10.0, Variant::Delta);
        let outcome = SlotOutcome { kind: OutcomeKind::Failure, transmitters: 2 };
        let (view, pb) = c.gateway_step(&c.initial_view(), &outcome);
        assert_eq!(view.phase, Phase::Cr);
        assert_eq!(pb, Piggyback { phase: Some(Phase::Cr), max_psi: None });
    }

    #[test]
    fn deltaplus_belief_tracks_the_cycle() {
        let c = ctx(6, 0.5, 15.0, Variant::DeltaPlus);
        let v = c.next_view(&c.initial_view(), PublicEvent::Nack);
        let b = v.belief.clone().expect("DELTA+ opens with a prior");
        assert_eq!(b.phi[0], 0.0);
        assert_eq!(v.cr_p, deltaplus_optimal_p(&b));
        let after = c.next_view(&v, PublicEvent::Nack);
        assert!(after.belief.as_ref().unwrap().mean() > b.mean());
        let lost = c.next_view(&v, PublicEvent::Lost);
        assert_eq!(lost.belief, v.belief);
    }

    #[test]
    fn shared_updates_match_independent_ones() {
        let c = ctx(5, 0.5, 12.0, Variant::Delta);
        let mut shared = ViewUpdater::new(true);
        let s = c.initial_state();
        let fb = ObservedFeedback { kind: Observed::Nack, piggyback_phase: Some(Phase::Cr), piggyback_max_psi: None };
        let a = shared.advance(&c, &s, &fb, true, 0).unwrap();
        let b = shared.advance(&c, &s, &fb, false, 1).unwrap();
        assert!(Rc::ptr_eq(&a.view, &b.view));
        assert_eq!(*a.view, *advance_phase(&c, &s, &fb, false, 1).unwrap().view);
        assert!(a.member && !b.member);
    }
}
