//! Uplink collision channel and the downlink feedback models.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::protocol::Phase;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OutcomeKind {
    Silent,
    Success(usize),
    Failure,
}

/// What actually happened on the uplink in one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotOutcome {
    pub kind: OutcomeKind,
    pub transmitters: usize,
}

impl SlotOutcome {
    pub fn winner(&self) -> Option<usize> {
        match self.kind {
            OutcomeKind::Success(n) => Some(n),
            _ => None,
        }
    }
}

/// Resolves the collision channel. A lone transmitter `n` is erased with
/// probability `epsilon[n]`; the erasure draw is only taken for singletons.
pub fn uplink_resolve<R: Rng + ?Sized>(
    transmitters: &[usize],
    epsilon: &[f64],
    rng: &mut R,
) -> SlotOutcome {
    let kind = match transmitters {
        [] => OutcomeKind::Silent,
        [n] => {
            let u: f64 = rng.random();
            if u < epsilon[*n] {
                OutcomeKind::Failure
            } else {
                OutcomeKind::Success(*n)
            }
        }
        _ => OutcomeKind::Failure,
    };
    SlotOutcome {
        kind,
        transmitters: transmitters.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeedbackModel {
    Ideal,
    /// ACK recipient id perturbed by Gaussian noise with this standard deviation.
    Noisy { sigma: f64 },
    /// Each listener fails to decode a sent message, but knows one was sent.
    Erasure { prob: f64 },
    /// Each listener misses a sent message and hears silence instead.
    Deletion { prob: f64 },
}

impl FeedbackModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            FeedbackModel::Ideal => Ok(()),
            FeedbackModel::Noisy { sigma } if sigma >= 0.0 && sigma.is_finite() => Ok(()),
            FeedbackModel::Erasure { prob } | FeedbackModel::Deletion { prob }
                if (0.0..=1.0).contains(&prob) =>
            {
                Ok(())
            }
            other => Err(Error::invalid(format!("bad feedback model {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FeedbackModel::Ideal => "ideal",
            FeedbackModel::Noisy { .. } => "noisy",
            FeedbackModel::Erasure { .. } => "erasure",
            FeedbackModel::Deletion { .. } => "deletion",
        }
    }

    /// Whether every node always learns the outcome class (ACK/NACK/silence).
    pub fn preserves_outcome_class(&self) -> bool {
        matches!(self, FeedbackModel::Ideal | FeedbackModel::Noisy { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Observed {
    AckFor(usize),
    Nack,
    Silent,
    /// A message was sent but could not be decoded (erasure model only).
    Missing,
}

impl Observed {
    pub fn name(&self) -> &'static str {
        match self {
            Observed::AckFor(_) => "ACK",
            Observed::Nack => "NACK",
            Observed::Silent => "silence",
            Observed::Missing => "missing",
        }
    }
}

/// Extra fields the gateway appends to every ACK/NACK.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Piggyback {
    pub phase: Option<Phase>,
    pub max_psi: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ObservedFeedback {
    pub kind: Observed,
    pub piggyback_phase: Option<Phase>,
    pub piggyback_max_psi: Option<u32>,
}

impl ObservedFeedback {
    pub fn bare(kind: Observed) -> Self {
        Self {
            kind,
            piggyback_phase: None,
            piggyback_max_psi: None,
        }
    }

    fn delivered(kind: Observed, pb: Piggyback) -> Self {
        Self {
            kind,
            piggyback_phase: pb.phase,
            piggyback_max_psi: pb.max_psi,
        }
    }
}

/// Decodes a node id perturbed by noise `w`: `Mod(Int(m - 1 + w), n) + 1`,
/// with `Int` rounding to nearest (ties away from zero) and `Mod` returning
/// a value in `0..n`. Ids are 1-based.
pub fn noisy_id(m: usize, n: usize, w: f64) -> usize {
    let shifted = (m as f64 - 1.0 + w).round() as i64;
    shifted.rem_euclid(n as i64) as usize + 1
}

/// Per-listener observation of the slot outcome. `transmitted[n]` tells whether
/// node `n` sent in this slot. Results are written to `out`, one entry per node.
pub fn feedback_broadcast_into<R: Rng + ?Sized>(
    outcome: &SlotOutcome,
    model: &FeedbackModel,
    piggyback: Piggyback,
    transmitted: &[bool],
    rng: &mut R,
    out: &mut Vec<ObservedFeedback>,
) {
    let n = transmitted.len();
    out.clear();
    let sent = match outcome.kind {
        OutcomeKind::Silent => {
            out.resize(n, ObservedFeedback::bare(Observed::Silent));
            return;
        }
        OutcomeKind::Success(w) => Observed::AckFor(w),
        OutcomeKind::Failure => Observed::Nack,
    };
    match *model {
        FeedbackModel::Ideal => out.resize(n, ObservedFeedback::delivered(sent, piggyback)),
        FeedbackModel::Noisy { sigma } => {
            let noise = (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("sigma >= 0"));
            for (listener, &tx) in transmitted.iter().enumerate() {
                let kind = match (sent, &noise) {
                    (Observed::AckFor(_), _) if tx => Observed::AckFor(listener),
                    (Observed::AckFor(w), Some(dist)) => {
                        Observed::AckFor(noisy_id(w + 1, n, dist.sample(rng)) - 1)
                    }
                    (other, _) => other,
                };
                out.push(ObservedFeedback::delivered(kind, piggyback));
            }
        }
        FeedbackModel::Erasure { prob } => {
            for _ in 0..n {
                let lost = rng.random::<f64>() < prob;
                out.push(if lost {
                    ObservedFeedback::bare(Observed::Missing)
                } else {
                    ObservedFeedback::delivered(sent, piggyback)
                });
            }
        }
        FeedbackModel::Deletion { prob } => {
            for _ in 0..n {
                let lost = rng.random::<f64>() < prob;
                out.push(if lost {
                    ObservedFeedback::bare(Observed::Silent)
                } else {
                    ObservedFeedback::delivered(sent, piggyback)
                });
            }
        }
    }
}

pub fn feedback_broadcast<R: Rng + ?Sized>(
    outcome: &SlotOutcome,
    model: &FeedbackModel,
    piggyback: Piggyback,
    transmitted: &[bool],
    rng: &mut R,
) -> Vec<ObservedFeedback> {
    let mut out = Vec::with_capacity(transmitted.len());
    feedback_broadcast_into(outcome, model, piggyback, transmitted, rng, &mut out);
    out
}
