//! Ground-truth physical process: per-sensor anomaly chains and age accounting.
//!
//! Slot ordering used throughout the crate:
//! 1. anomalies are sampled,
//! 2. nodes decide whether to transmit,
//! 3. the uplink outcome is resolved,
//! 4. feedback is broadcast,
//! 5. ages are updated.
//!
//! A report that succeeds in the same slot its anomaly appeared therefore
//! leaves the AoII at zero.

use rand::Rng;

use crate::error::{Error, Result};

/// Population-level parameters: activation and uplink erasure probability per node.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemParams {
    lambda: Vec<f64>,
    epsilon: Vec<f64>,
}

impl SystemParams {
    pub fn new(lambda: Vec<f64>, epsilon: Vec<f64>) -> Result<Self> {
        if lambda.is_empty() {
            return Err(Error::invalid("at least one node is required"));
        }
        if lambda.len() != epsilon.len() {
            return Err(Error::invalid(format!(
                "lambda has {} entries but epsilon has {}",
                lambda.len(),
                epsilon.len()
            )));
        }
        for (n, &l) in lambda.iter().enumerate() {
            if !(0.0..1.0).contains(&l) {
                return Err(Error::invalid(format!("lambda[{n}] = {l} outside [0,1)")));
            }
        }
        for (n, &e) in epsilon.iter().enumerate() {
            if !(0.0..1.0).contains(&e) {
                return Err(Error::invalid(format!("epsilon[{n}] = {e} outside [0,1)")));
            }
        }
        Ok(Self { lambda, epsilon })
    }

    /// `n` nodes sharing the offered load `rho` evenly, all with erasure `epsilon`.
    pub fn symmetric(n: usize, rho: f64, epsilon: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("at least one node is required"));
        }
        Self::new(vec![rho / n as f64; n], vec![epsilon; n])
    }

    pub fn n(&self) -> usize {
        self.lambda.len()
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn epsilon(&self) -> &[f64] {
        &self.epsilon
    }

    /// Offered load, the sum of activation probabilities.
    pub fn rho(&self) -> f64 {
        self.lambda.iter().sum()
    }

    pub fn mean_lambda(&self) -> f64 {
        self.rho() / self.n() as f64
    }

    pub fn mean_epsilon(&self) -> f64 {
        self.epsilon.iter().sum::<f64>() / self.n() as f64
    }
}

/// Ground truth for one sensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NodeRecord {
    pub id: usize,
    /// Anomaly state; `true` is the absorbing alert state.
    pub x: bool,
    /// Age of information in slots.
    pub delta: u64,
    /// Age of incorrect information in slots.
    pub theta: u64,
}

impl NodeRecord {
    pub fn new(id: usize) -> Self {
        Self {
            id,
            ..Self::default()
        }
    }
}

/// One step of the two-state anomaly chain.
///
/// Always consumes exactly one uniform draw so that the anomaly stream of a
/// node stays aligned across protocols.
pub fn step_anomaly<R: Rng + ?Sized>(x: bool, lambda: f64, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    x || u < lambda
}

/// End-of-slot age update; `success` means this node's report got through.
pub fn update_ages(rec: NodeRecord, success: bool) -> NodeRecord {
    if success {
        NodeRecord {
            x: false,
            delta: 0,
            theta: 0,
            ..rec
        }
    } else {
        NodeRecord {
            delta: rec.delta + 1,
            theta: if rec.x { rec.theta + 1 } else { rec.theta },
            ..rec
        }
    }
}

pub fn violation_indicator(theta: u64, theta_max: u64) -> bool {
    theta > theta_max
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn anomaly_chain_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert!(!step_anomaly(false, 0.0, &mut rng));
            assert!(step_anomaly(true, 0.0, &mut rng));
            assert!(step_anomaly(true, 0.7, &mut rng));
        }
        // lambda = 1 is outside SystemParams but the step itself is total
        assert!(step_anomaly(false, 1.0, &mut rng));
    }

    #[test]
    fn age_update_examples() {
        let r = NodeRecord { id: 0, x: true, delta: 3, theta: 2 };
        let ok = update_ages(r, true);
        assert_eq!((ok.x, ok.delta, ok.theta), (false, 0, 0));
        let fail = update_ages(r, false);
        assert_eq!((fail.x, fail.delta, fail.theta), (true, 4, 3));
        let idle = update_ages(NodeRecord { id: 0, x: false, delta: 5, theta: 0 }, false);
        assert_eq!((idle.x, idle.delta, idle.theta), (false, 6, 0));
    }

    #[test]
    fn violation_is_strict() {
        assert!(!violation_indicator(0, 0));
        assert!(violation_indicator(1, 0));
        assert!(!violation_indicator(5, 5));
    }

    #[test]
    fn params_validation() {
        assert!(SystemParams::new(vec![], vec![]).is_err());
        assert!(SystemParams::new(vec![0.1], vec![0.1, 0.2]).is_err());
        assert!(SystemParams::new(vec![1.0], vec![0.0]).is_err());
        assert!(SystemParams::new(vec![0.1], vec![-0.1]).is_err());
        let p = SystemParams::symmetric(20, 0.5, 0.05).unwrap();
        assert_eq!(p.n(), 20);
        assert!((p.rho() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn activation_frequency_matches_lambda() {
        let lambda = 0.025;
        let slots = 1_000_000u64;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut x = false;
        let (mut zero_slots, mut activations) = (0u64, 0u64);
        for _ in 0..slots {
            let next = step_anomaly(x, lambda, &mut rng);
            if !x {
                zero_slots += 1;
                activations += u64::from(next);
            }
            // clear the anomaly every other slot, standing in for a report
            x = next && rng.random::<bool>();
        }
        let freq = activations as f64 / zero_slots as f64;
        let se = (lambda * (1.0 - lambda) / zero_slots as f64).sqrt();
        assert!((freq - lambda).abs() < 3.0 * se, "freq {freq} vs {lambda}");
    }
}
