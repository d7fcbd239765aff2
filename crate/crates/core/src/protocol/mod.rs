//! Worker and server state machines for top-K SGD with error feedback.
//!
//! One step `t ≥ 1` runs, for every worker `q`,
//!
//! ```text
//! a_t^q = ε_{t−1}^q + α_{t−1} g^q(w_{t−1})
//! msg_q = Top_K(a_t^q)        ε_t^q = a_t^q − msg_q
//! ```
//!
//! then aggregates on the server. Unidirectional mode broadcasts
//! `Σ p_q msg_q` as is; bidirectional mode compresses it again with its own
//! memory `δ`: `g_t = Σ p_q msg_q + δ_{t−1}`, broadcast `Top_K(g_t)`,
//! `δ_t = g_t − Top_K(g_t)`. Every replica then applies `w_t = w_{t−1} − update`.
//! Vanilla mode is the same loop with an identity uplink and no server memory.

mod training;

pub use training::{run_training, ProtocolConfig, Snapshot, TrainingLog};

use serde::{Deserialize, Serialize};

use crate::compression::{compress, CompressorSpec};
use crate::error::{Error, Result};
use crate::linalg::{axpy, check_dims, sparse_accumulate, DenseVector, SparseVector, VectorOperand};
use crate::problems::GradientOracle;
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Vanilla,
    Unidirectional,
    Bidirectional,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Vanilla, Mode::Unidirectional, Mode::Bidirectional];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Vanilla => "vanilla",
            Mode::Unidirectional => "unidirectional",
            Mode::Bidirectional => "bidirectional",
        }
    }
}

/// Step-size schedule `α_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    Constant { alpha0: f64 },
    /// `α_t = alpha0 / (t+1)^θ` with `θ ∈ (1/2, 1]`.
    InversePoly { alpha0: f64, theta: f64 },
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        let alpha0 = match *self {
            Schedule::Constant { alpha0 } => alpha0,
            Schedule::InversePoly { alpha0, theta } => {
                if !(theta > 0.5 && theta <= 1.0) {
                    return Err(Error::invalid(format!("theta must be in (1/2, 1], got {theta}")));
                }
                alpha0
            }
        };
        if !(alpha0 > 0.0 && alpha0.is_finite()) {
            return Err(Error::invalid(format!("alpha0 must be positive, got {alpha0}")));
        }
        Ok(())
    }

    pub fn step_size(&self, t: usize) -> f64 {
        match *self {
            Schedule::Constant { alpha0 } => alpha0,
            Schedule::InversePoly { alpha0, theta } => alpha0 / ((t + 1) as f64).powf(theta),
        }
    }
}

/// Everything a worker produced in one step.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerStep {
    pub msg: SparseVector,
    /// `a_t^q`, before compression.
    pub a: DenseVector,
    /// The local stochastic gradient `g^q(w_{t−1})`.
    pub g: DenseVector,
    pub one_minus_gamma: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct WorkerState {
    q: usize,
    epsilon: DenseVector,
    model: DenseVector,
    uplink: CompressorSpec,
    rng: SimRng,
}

impl WorkerState {
    /// A worker with zero error memory holding a replica of `model`.
    pub fn new(q: usize, model: DenseVector, uplink: CompressorSpec, rng: SimRng) -> Result<Self> {
        uplink.validate(model.dim())?;
        Ok(WorkerState {
            q,
            epsilon: DenseVector::zeros(model.dim()),
            model,
            uplink,
            rng,
        })
    }

    pub fn index(&self) -> usize {
        self.q
    }

    pub fn epsilon(&self) -> &DenseVector {
        &self.epsilon
    }

    pub fn model(&self) -> &DenseVector {
        &self.model
    }

    /// Samples `g^q` at the worker's replica and runs the compression step.
    pub fn step(&mut self, oracle: &dyn GradientOracle, alpha: f64) -> Result<WorkerStep> {
        let g = oracle.stochastic_gradient(self.q, &self.model, &mut self.rng)?;
        self.step_with_gradient(g, alpha)
    }

    /// `a = ε + α·g`, `msg = Top_K(a)`, `ε ← a − msg`.
    pub fn step_with_gradient(&mut self, g: DenseVector, alpha: f64) -> Result<WorkerStep> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!("step size must be positive, got {alpha}")));
        }
        let a = axpy(alpha, &g, &self.epsilon)?;
        let out = compress(self.uplink, &a)?;
        self.epsilon = out.residual;
        Ok(WorkerStep {
            msg: out.kept,
            a,
            g,
            one_minus_gamma: out.measured_one_minus_gamma,
        })
    }

    /// Applies the broadcast update to this worker's replica.
    pub fn apply(&mut self, update: &impl VectorOperand) -> Result<()> {
        self.model.axpy_assign(-1.0, update)
    }
}

/// What the server broadcasts after aggregating one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerStep {
    /// `Σ p_q msg_q`.
    pub aggregate: SparseVector,
    /// `g_t = aggregate + δ_{t−1}`; present in bidirectional mode only.
    pub g: Option<DenseVector>,
    /// The update every replica subtracts.
    pub update: SparseVector,
    pub one_minus_gamma_downlink: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ServerState {
    delta: DenseVector,
    weights: Vec<f64>,
    downlink: Option<CompressorSpec>,
}

impl ServerState {
    /// `downlink = None` gives the unidirectional (or vanilla) server.
    pub fn new(dim: usize, weights: Vec<f64>, downlink: Option<CompressorSpec>) -> Result<Self> {
        crate::problems::validate_weights(&weights)?;
        if let Some(spec) = downlink {
            spec.validate(dim)?;
        }
        Ok(ServerState {
            delta: DenseVector::zeros(dim),
            weights,
            downlink,
        })
    }

    pub fn delta(&self) -> &DenseVector {
        &self.delta
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn aggregate(&self, msgs: &[SparseVector]) -> Result<SparseVector> {
        if msgs.len() != self.weights.len() {
            return Err(Error::invalid(format!(
                "expected {} messages, got {}",
                self.weights.len(),
                msgs.len()
            )));
        }
        for m in msgs {
            check_dims(m.dim(), self.delta.dim())?;
        }
        let terms: Vec<(f64, &SparseVector)> = self.weights.iter().copied().zip(msgs).collect();
        sparse_accumulate(&terms)
    }

    /// `Σ p_q msg_q`, densified. The server memory is left at zero.
    pub fn step_unidirectional(&self, msgs: &[SparseVector]) -> Result<DenseVector> {
        Ok(self.aggregate(msgs)?.densify())
    }

    /// `g = Σ p_q msg_q + δ`, returns `(Top_K(g), g)` and sets `δ ← g − Top_K(g)`.
    pub fn step_bidirectional(&mut self, msgs: &[SparseVector]) -> Result<(SparseVector, DenseVector)> {
        let out = self.step(msgs)?;
        Ok((out.update, out.g.expect("bidirectional server keeps g")))
    }

    /// One aggregation round in whichever mode the server was built for.
    pub fn step(&mut self, msgs: &[SparseVector]) -> Result<ServerStep> {
        let aggregate = self.aggregate(msgs)?;
        let Some(spec) = self.downlink else {
            return Ok(ServerStep {
                update: aggregate.clone(),
                aggregate,
                g: None,
                one_minus_gamma_downlink: None,
            });
        };
        let g = axpy(1.0, &aggregate, &self.delta)?;
        let out = compress(spec, &g)?;
        self.delta = out.residual;
        Ok(ServerStep {
            aggregate,
            g: Some(g),
            update: out.kept,
            one_minus_gamma_downlink: out.measured_one_minus_gamma,
        })
    }
}

/// `w − update`.
pub fn apply_update(w: &DenseVector, update: &impl VectorOperand) -> Result<DenseVector> {
    axpy(-1.0, update, w)
}

/// `Σ_q p_q ε^q + δ`, the distance between the model and its error-corrected twin.
pub fn memory_total(workers: &[WorkerState], server: &ServerState) -> Result<DenseVector> {
    let mut total = DenseVector::zeros(server.delta.dim());
    for (ws, &p) in workers.iter().zip(&server.weights) {
        total.axpy_assign(p, &ws.epsilon)?;
    }
    total.axpy_assign(1.0, &server.delta)?;
    Ok(total)
}

/// `w̃ = w − Σ_q p_q ε^q − δ`.
pub fn error_corrected_iterate(w: &DenseVector, workers: &[WorkerState], server: &ServerState) -> Result<DenseVector> {
    if workers.len() != server.weights.len() {
        return Err(Error::invalid("one worker state per weight is required"));
    }
    w.sub(&memory_total(workers, server)?)
}
