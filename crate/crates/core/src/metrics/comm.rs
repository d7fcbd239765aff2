use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::Mode;

/// Latency/bandwidth model of one communication round.
///
/// `alpha*` are per-message latencies and `beta*` per-float transfer
/// times, in seconds; `1` is the uplink (worker to server), `2` the downlink.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommParams {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub workers: usize,
    pub k_uplink: usize,
    pub k_downlink: usize,
}

impl CommParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Seconds per round. Each sparse entry costs two floats (index and value).
///
/// * unidirectional: `α₁ + 2Kβ₁ + α₂ + 2NKβ₂` (the server relays up to `NK` entries)
/// * bidirectional: `α₁ + 2K_upβ₁ + α₂ + 2K_downβ₂`
///
/// Vanilla SGD is dense and has no sparse message sizes, so it is rejected.
pub fn comm_time(mode: Mode, p: &CommParams) -> Result<f64> {
    p.validate()?;
    let up = p.alpha1 + 2.0 * p.k_uplink as f64 * p.beta1 + p.alpha2;
    match mode {
        Mode::Unidirectional => Ok(up + 2.0 * p.workers as f64 * p.k_uplink as f64 * p.beta2),
        Mode::Bidirectional => Ok(up + 2.0 * p.k_downlink as f64 * p.beta2),
        Mode::Vanilla => Err(Error::invalid("the communication model covers the sparse modes only")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(workers: usize, k_up: usize, k_down: usize) -> CommParams {
        CommParams {
            alpha1: 0.0,
            alpha2: 0.0,
            beta1: 1.0,
            beta2: 1.0,
            workers,
            k_uplink: k_up,
            k_downlink: k_down,
        }
    }

    #[test]
    fn worked_example() {
        let p = params(10, 5, 5);
        assert_eq!(comm_time(Mode::Unidirectional, &p).unwrap(), 110.0);
        assert_eq!(comm_time(Mode::Bidirectional, &p).unwrap(), 20.0);
    }

    #[test]
    fn one_worker_modes_agree() {
        let p = CommParams {
            alpha1: 0.3,
            alpha2: 0.1,
            beta1: 2.0,
            beta2: 0.5,
            ..params(1, 7, 7)
        };
        assert_eq!(comm_time(Mode::Unidirectional, &p).unwrap(), comm_time(Mode::Bidirectional, &p).unwrap());
    }

    #[test]
    fn zero_latency_ratio() {
        let p = params(8, 3, 3);
        let ratio = comm_time(Mode::Unidirectional, &p).unwrap() / comm_time(Mode::Bidirectional, &p).unwrap();
        assert_eq!(ratio, (3.0 + 8.0 * 3.0) / (3.0 + 3.0));
    }

    #[test]
    fn rejects_negative_and_vanilla() {
        let p = CommParams { beta2: -1.0, ..params(2, 1, 1) };
        assert!(comm_time(Mode::Bidirectional, &p).is_err());
        assert!(comm_time(Mode::Vanilla, &params(2, 1, 1)).is_err());
    }

    proptest! {
        #[test]
        fn bidirectional_never_slower_when_downlink_fits(
            a1 in 0.0f64..1.0, a2 in 0.0f64..1.0, b1 in 0.0f64..1.0, b2 in 0.0f64..1.0,
            n in 1usize..100, k in 1usize..1000, frac in 0.0f64..=1.0,
        ) {
            let k_down = ((n * k) as f64 * frac) as usize;
            let p = CommParams { alpha1: a1, alpha2: a2, beta1: b1, beta2: b2, workers: n, k_uplink: k, k_downlink: k_down };
            prop_assert!(comm_time(Mode::Bidirectional, &p).unwrap() <= comm_time(Mode::Unidirectional, &p).unwrap());
        }
    }
}
