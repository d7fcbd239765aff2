use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::{Mode, Schedule, TrainingLog};

/// Constants of the convergence bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    /// Lipschitz constant `L` of `∇F`.
    pub lipschitz: f64,
    /// Second-moment bound `M` on `Σ p_q g^q`.
    pub m: f64,
    /// Compressor contraction `γ ∈ (0, 1]`.
    pub gamma: f64,
    pub lambda: f64,
    pub f0: f64,
    pub f_star: f64,
    /// `ρ` (or `ρ̂` for the unidirectional bound).
    pub rho: f64,
}

impl BoundConstants {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lipschitz, self.m, self.gamma, self.lambda, self.f0, self.f_star, self.rho];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("bound constants"));
        }
        if self.lipschitz < 0.0 || self.m < 0.0 || self.rho < 0.0 {
            return Err(Error::invalid("L, M and rho must be non-negative"));
        }
        check_gamma_lambda(self.gamma, self.lambda).map(|_| ())
    }
}

fn check_gamma_lambda(gamma: f64, lambda: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::invalid(format!("gamma must be in (0, 1], got {gamma}")));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    let r = (1.0 + lambda) * (1.0 - gamma);
    if r >= 1.0 {
        return Err(Error::invalid(format!(
            "(1+lambda)(1-gamma) = {r} >= 1: the step-size condition is unbounded"
        )));
    }
    Ok(r)
}

/// `max_{1≤t≤T} (1/(1−γ)) Σ_{i=1}^{t} ((1+λ)(1−γ))^i α_{t−i}² / α_t`.
///
/// The inner sums obey `S_t = r(α_{t−1}² + S_{t−1})`, so the whole
/// maximum costs `O(T)`. Returns 0 for a lossless compressor (`γ = 1`).
pub fn bound_d(schedule: &Schedule, gamma: f64, lambda: f64, t_max: usize) -> Result<f64> {
    schedule.validate()?;
    let r = check_gamma_lambda(gamma, lambda)?;
    if gamma == 1.0 {
        return Ok(0.0);
    }
    let scale = 1.0 / (1.0 - gamma);
    let mut s = 0.0;
    let mut best: f64 = 0.0;
    for t in 1..=t_max {
        let prev = schedule.step_size(t - 1);
        s = r * (prev * prev + s);
        best = best.max(scale * s / schedule.step_size(t));
    }
    Ok(best)
}

/// Right-hand side of the convergence bound for `T` iterations, with sums
/// of `α_t` and `α_t²` over `t = 0..=T`.
pub fn bound_rhs(c: &BoundConstants, schedule: &Schedule, t_max: usize) -> Result<f64> {
    c.validate()?;
    let d = bound_d(schedule, c.gamma, c.lambda, t_max)?;
    let (sum_a, sum_a2) = (0..=t_max).fold((0.0, 0.0), |(s1, s2), t| {
        let a = schedule.step_size(t);
        (s1 + a, s2 + a * a)
    });
    let l = c.lipschitz;
    let spread = (1.0 - c.gamma).sqrt() + c.rho;
    let second = l * c.m + l * l * c.m * d * spread * spread / c.lambda;
    Ok(2.0 / sum_a * (c.f0 - c.f_star) + second * sum_a2 / sum_a)
}

/// Both sides of the convergence bound evaluated on one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub constants: BoundConstants,
    pub d: f64,
    /// `Σ α_t ‖∇F(w_t)‖² / Σ α_t` over `t = 0..=T`.
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Evaluates the bound with constants measured on `log`.
///
/// `M` is the largest squared norm of the aggregated gradient seen along the
/// trajectory (a surrogate for the uniform bound, exact in sup-norm terms
/// only for deterministic problems). `1 − γ` is the largest measured
/// contraction, `λ = ½·γ/(1−γ)`, and `ρ` the largest measured `ρ`
/// (bidirectional) or `ρ̂` (unidirectional). Needs a log recorded with
/// full-gradient tracking.
pub fn theorem_check(log: &TrainingLog, schedule: &Schedule, lipschitz: f64, f_star: f64) -> Result<BoundReport> {
    let full = log
        .full_grad_norm_sq
        .as_ref()
        .ok_or_else(|| Error::InvalidState("the run did not track full gradients".into()))?;
    let t_max = log.records.len();
    if full.len() != t_max + 1 {
        return Err(Error::InvalidState("full-gradient track does not cover w_0..w_T".into()));
    }
    let max = |it: &mut dyn Iterator<Item = f64>| it.fold(0.0, f64::max);
    let m = max(&mut log.records.iter().map(|r| r.grad_norm_sq).chain(full.iter().copied()));
    let one_minus_gamma = match log.mode {
        Mode::Vanilla => 0.0,
        _ => max(&mut log
            .records
            .iter()
            .flat_map(|r| [r.one_minus_gamma_uplink_max, r.one_minus_gamma_downlink])
            .flatten()),
    };
    if one_minus_gamma >= 1.0 {
        return Err(Error::InvalidState("measured contraction is degenerate (1 - gamma = 1)".into()));
    }
    let gamma = 1.0 - one_minus_gamma;
    let lambda = if one_minus_gamma > 0.0 { 0.5 * gamma / one_minus_gamma } else { 1.0 };
    let rho = match log.mode {
        Mode::Vanilla => 0.0,
        Mode::Unidirectional => max(&mut log.records.iter().filter_map(|r| r.rho_hat)),
        Mode::Bidirectional => max(&mut log.records.iter().filter_map(|r| r.rho)),
    };
    let constants = BoundConstants {
        lipschitz,
        m,
        gamma,
        lambda,
        f0: log.initial_loss,
        f_star,
        rho,
    };
    let d = bound_d(schedule, gamma, lambda, t_max)?;
    let rhs = bound_rhs(&constants, schedule, t_max)?;
    let (num, den) = full.iter().enumerate().fold((0.0, 0.0), |(n, s), (t, g)| {
        let a = schedule.step_size(t);
        (n + a * g, s + a)
    });
    let lhs = num / den;
    Ok(BoundReport {
        constants,
        d,
        lhs,
        rhs,
        holds: lhs <= rhs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct `O(T²)` evaluation used as an independent oracle.
    fn bound_d_direct(s: &Schedule, gamma: f64, lambda: f64, t_max: usize) -> f64 {
        let r = (1.0 + lambda) * (1.0 - gamma);
        (1..=t_max)
            .map(|t| {
                let sum: f64 = (1..=t).map(|i| r.powi(i as i32) * s.step_size(t - i).powi(2)).sum();
                sum / s.step_size(t) / (1.0 - gamma)
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn constant_schedule_reaches_geometric_limit() {
        let s = Schedule::Constant { alpha0: 0.1 };
        let d = bound_d(&s, 0.5, 0.5, 200).unwrap();
        assert!((d - 0.6).abs() < 1e-6);
        assert!((d - bound_d_direct(&s, 0.5, 0.5, 200)).abs() < 1e-12);
    }

    #[test]
    fn recurrence_matches_direct_sum() {
        for s in [
            Schedule::InversePoly { alpha0: 1.0, theta: 1.0 },
            Schedule::InversePoly { alpha0: 0.5, theta: 0.6 },
            Schedule::Constant { alpha0: 0.03 },
        ] {
            for (g, l) in [(0.5, 0.5), (0.2, 0.1), (0.9, 5.0), (0.01, 0.005)] {
                let fast = bound_d(&s, g, l, 300).unwrap();
                let slow = bound_d_direct(&s, g, l, 300);
                assert!((fast - slow).abs() <= 1e-12 * slow.max(1.0), "{s:?} {g} {l}");
            }
        }
    }

    #[test]
    fn rejects_divergent_condition() {
        let s = Schedule::Constant { alpha0: 0.1 };
        assert!(matches!(bound_d(&s, 0.5, 1.0, 10), Err(Error::InvalidArgument(_))));
        assert!(bound_d(&s, 0.5, 2.0, 10).is_err());
        assert!(bound_d(&s, 0.0, 0.5, 10).is_err());
    }

    #[test]
    fn inverse_poly_maximum_stabilises() {
        let s = Schedule::InversePoly { alpha0: 1.0, theta: 1.0 };
        let d4 = bound_d(&s, 0.5, 0.5, 10_000).unwrap();
        let d5 = bound_d(&s, 0.5, 0.5, 100_000).unwrap();
        assert!(d4.is_finite() && d4 > 0.0);
        assert!(d5 >= d4);
        assert!(d5 - d4 < 1e-9);
    }

    #[test]
    fn rhs_limits() {
        let s = Schedule::Constant { alpha0: 0.1 };
        let lossless = BoundConstants {
            lipschitz: 2.0,
            m: 3.0,
            gamma: 1.0,
            lambda: 0.7,
            f0: 1.0,
            f_star: 1.0,
            rho: 0.0,
        };
        // F0 = F*, γ = 1, ρ = 0: only L·M·Σα²/Σα = 6·0.1 remains.
        assert!((bound_rhs(&lossless, &s, 50).unwrap() - 0.6).abs() < 1e-12);
        let c = BoundConstants {
            f0: 5.0,
            ..lossless
        };
        let first = 2.0 / (51.0 * 0.1) * 4.0;
        assert!((bound_rhs(&c, &s, 50).unwrap() - (first + 0.6)).abs() < 1e-12);
    }
}
