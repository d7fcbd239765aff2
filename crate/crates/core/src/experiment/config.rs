use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::compression::k_from_sparsity;
use crate::error::{Error, FilePosition, Result};
use crate::linalg::DenseVector;
use crate::metrics::CommParams;
use crate::problems::{
    load_dataset, mlp_param_count, partition, Dataset, DatasetSource, GradientOracle, LeastSquaresProblem, MlpProblem,
    QuadraticProblem, SyntheticLeastSquares,
};
use crate::protocol::{Mode, ProtocolConfig, Schedule};
use crate::rng;

/// Which objective to train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// One quadratic per worker centred at `centers[q] · 1⃗`.
    Quadratic { dim: usize, centers: Vec<f64> },
    /// Synthetic least squares; see [`SyntheticLeastSquares`].
    LeastSquares {
        dim: usize,
        samples_per_worker: usize,
        batch: usize,
        #[serde(default)]
        noise: f64,
        #[serde(default)]
        heavy_coords: usize,
        #[serde(default = "one")]
        heavy_scale: f64,
    },
    Mlp { layers: Vec<usize>, batch: usize, dataset: DataSpec },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    Csv {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        num_classes: Option<usize>,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        num_classes: Option<usize>,
        /// Use only the first `limit` samples.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        limit: Option<usize>,
    },
    /// Gaussian class clusters with as many features as the input layer.
    Synthetic {
        samples: usize,
        classes: usize,
        #[serde(default = "one")]
        separation: f64,
    },
}

/// Initial model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    Zeros,
    /// i.i.d. `N(mean, std²)` per coordinate.
    Normal { mean: f64, std: f64 },
    /// The problem's own initialiser (uniform fan-in scaling for MLPs, zeros otherwise).
    Default,
}

/// Latencies and per-float transfer times of the network model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkParams {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
}

/// A complete, JSON-serialisable experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub problem: ProblemSpec,
    /// `N`.
    pub workers: usize,
    /// `p_q`; uniform when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Fraction of coordinates kept; sets both `K`s unless given explicitly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparsity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_uplink: Option<usize>,
    /// Defaults to the uplink `K`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_downlink: Option<usize>,
    pub schedule: Schedule,
    /// Exactly one of `steps` and `epochs` must be set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_init")]
    pub init: InitSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comm: Option<LinkParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_step: Option<usize>,
    #[serde(default)]
    pub track_full_gradient: bool,
}

fn default_init() -> InitSpec {
    InitSpec::Default
}

/// A config turned into runnable parts.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub oracle: Box<dyn GradientOracle>,
    pub protocol: ProtocolConfig,
    pub init: DenseVector,
    /// Known minimum of the objective.
    pub f_star: Option<f64>,
    /// Known Lipschitz constant of `∇F`.
    pub lipschitz: Option<f64>,
    pub comm: Option<CommParams>,
}

impl ExperimentConfig {
    /// Parses JSON; syntax and type errors report the line.
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format {
            path: origin.to_path_buf(),
            position: FilePosition::Line(e.line() as u64),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::from_json(&text, path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Field-level checks that need no data. Dataset files are checked for
    /// existence here so that a missing file fails before any work is done.
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::config("workers", "must be >= 1"));
        }
        if let Some(w) = &self.weights {
            if w.len() != self.workers {
                return Err(Error::config("weights", format!("{} weights for {} workers", w.len(), self.workers)));
            }
            crate::problems::validate_weights(w).map_err(|e| Error::config("weights", e.to_string()))?;
        }
        self.schedule
            .validate()
            .map_err(|e| Error::config("schedule", e.to_string()))?;
        match (self.steps, self.epochs) {
            (Some(0), _) => return Err(Error::config("steps", "must be >= 1")),
            (_, Some(0)) => return Err(Error::config("epochs", "must be >= 1")),
            (Some(_), Some(_)) => return Err(Error::config("steps", "give either steps or epochs, not both")),
            (None, None) => return Err(Error::config("steps", "one of steps or epochs is required")),
            _ => {}
        }
        if let Some(f) = self.sparsity {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::config("sparsity", format!("must be in (0, 1], got {f}")));
            }
        }
        if self.mode != Mode::Vanilla && self.sparsity.is_none() && self.k_uplink.is_none() {
            return Err(Error::config("k_uplink", "compressed modes need k_uplink or sparsity"));
        }
        if let InitSpec::Normal { std, mean } = self.init {
            if !(std >= 0.0 && std.is_finite() && mean.is_finite()) {
                return Err(Error::config("init", "normal init needs finite mean and std >= 0"));
            }
        }
        if let Some(c) = &self.comm {
            for (name, v) in [("alpha1", c.alpha1), ("alpha2", c.alpha2), ("beta1", c.beta1), ("beta2", c.beta2)] {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::config(format!("comm.{name}"), "must be finite and non-negative"));
                }
            }
        }
        match &self.problem {
            ProblemSpec::Quadratic { dim, centers } => {
                if *dim == 0 {
                    return Err(Error::config("problem.dim", "must be >= 1"));
                }
                if centers.len() != self.workers {
                    return Err(Error::config(
                        "problem.centers",
                        format!("{} centres for {} workers", centers.len(), self.workers),
                    ));
                }
                if centers.iter().any(|c| !c.is_finite()) {
                    return Err(Error::config("problem.centers", "must be finite"));
                }
            }
            ProblemSpec::LeastSquares {
                dim,
                samples_per_worker,
                batch,
                heavy_coords,
                noise,
                heavy_scale,
            } => {
                if *dim == 0 {
                    return Err(Error::config("problem.dim", "must be >= 1"));
                }
                if *batch == 0 || batch > samples_per_worker {
                    return Err(Error::config("problem.batch", "must be in [1, samples_per_worker]"));
                }
                if heavy_coords > dim {
                    return Err(Error::config("problem.heavy_coords", "exceeds dim"));
                }
                if !(noise.is_finite() && heavy_scale.is_finite()) {
                    return Err(Error::config("problem.noise", "noise and heavy_scale must be finite"));
                }
            }
            ProblemSpec::Mlp { layers, batch, dataset } => {
                if layers.len() < 2 || layers.contains(&0) {
                    return Err(Error::config("problem.layers", "need at least two non-empty layers"));
                }
                if *batch == 0 {
                    return Err(Error::config("problem.batch", "must be >= 1"));
                }
                let paths: Vec<(&str, &PathBuf)> = match dataset {
                    DataSpec::Csv { path, .. } => vec![("problem.dataset.path", path)],
                    DataSpec::Idx { images, labels, .. } => {
                        vec![("problem.dataset.images", images), ("problem.dataset.labels", labels)]
                    }
                    DataSpec::Synthetic { samples, classes, .. } => {
                        if *samples < self.workers {
                            return Err(Error::config("problem.dataset.samples", "fewer samples than workers"));
                        }
                        if *classes < 2 {
                            return Err(Error::config("problem.dataset.classes", "must be >= 2"));
                        }
                        vec![]
                    }
                };
                for (field, path) in paths {
                    if !path.is_file() {
                        return Err(Error::config(field, format!("dataset file not found: {}", path.display())));
                    }
                }
            }
        }
        if self.track_full_gradient && self.epochs.is_some() && matches!(self.problem, ProblemSpec::Quadratic { .. }) {
            return Err(Error::config("epochs", "the quadratic problem has no epochs"));
        }
        Ok(())
    }

    /// Validates, builds the problem and resolves `K`, `T` and the initial model.
    pub fn build(&self) -> Result<Experiment> {
        self.validate()?;
        let seed = self.seed;
        let as_config = |field: &'static str| move |e: Error| match e {
            Error::InvalidArgument(m) => Error::config(field, m),
            other => other,
        };

        let (oracle, default_init, f_star, lipschitz): (Box<dyn GradientOracle>, Option<DenseVector>, _, _) =
            match &self.problem {
                ProblemSpec::Quadratic { dim, centers } => {
                    let centers = centers.iter().map(|&c| DenseVector::filled(*dim, c)).collect();
                    let weights = self.weights.clone().unwrap_or_else(|| crate::problems::uniform_weights(self.workers));
                    let p = QuadraticProblem::new(centers, weights).map_err(as_config("problem"))?;
                    let f_star = p.optimum().1;
                    (Box::new(p), None, Some(f_star), Some(QuadraticProblem::LIPSCHITZ))
                }
                ProblemSpec::LeastSquares {
                    dim,
                    samples_per_worker,
                    batch,
                    noise,
                    heavy_coords,
                    heavy_scale,
                } => {
                    let spec = SyntheticLeastSquares {
                        dim: *dim,
                        workers: self.workers,
                        samples_per_worker: *samples_per_worker,
                        batch: *batch,
                        noise: *noise,
                        heavy_coords: *heavy_coords,
                        heavy_scale: *heavy_scale,
                    };
                    let mut p = LeastSquaresProblem::synthetic(&spec, &mut rng::stream(seed, rng::STREAM_DATA))
                        .map_err(as_config("problem"))?;
                    if let Some(w) = &self.weights {
                        p = p.with_weights(w.clone()).map_err(as_config("weights"))?;
                    }
                    (Box::new(p), None, None, None)
                }
                ProblemSpec::Mlp { layers, batch, dataset } => {
                    let data = self.load_data(layers, dataset)?;
                    let part = partition(data.len(), self.workers, &mut rng::stream(seed, rng::STREAM_PARTITION))
                        .map_err(as_config("workers"))?;
                    let mut p =
                        MlpProblem::new(layers.clone(), Arc::new(data), part, *batch).map_err(as_config("problem"))?;
                    if let Some(w) = &self.weights {
                        p = p.with_weights(w.clone()).map_err(as_config("weights"))?;
                    }
                    let init = p.init_params(&mut rng::stream(seed, rng::STREAM_INIT));
                    debug_assert_eq!(init.dim(), mlp_param_count(layers));
                    (Box::new(p), Some(init), None, None)
                }
            };

        let d = oracle.dim();
        let k_from_fraction = self
            .sparsity
            .map(|f| k_from_sparsity(d, f))
            .transpose()
            .map_err(as_config("sparsity"))?;
        let k_uplink = self.k_uplink.or(k_from_fraction).unwrap_or(d);
        let k_downlink = self.k_downlink.or(k_from_fraction).unwrap_or(k_uplink);
        if self.mode != Mode::Vanilla && !(1..=d).contains(&k_uplink) {
            return Err(Error::config("k_uplink", format!("must be in [1, {d}], got {k_uplink}")));
        }
        if self.mode == Mode::Bidirectional && !(1..=d).contains(&k_downlink) {
            return Err(Error::config("k_downlink", format!("must be in [1, {d}], got {k_downlink}")));
        }

        let steps = match (self.steps, self.epochs) {
            (Some(s), _) => s,
            (None, Some(e)) => {
                let per = oracle
                    .steps_per_epoch()
                    .ok_or_else(|| Error::config("epochs", "this problem has no notion of an epoch; use steps"))?;
                e * per
            }
            (None, None) => unreachable!("validated"),
        };
        if let Some(s) = self.snapshot_step {
            if s == 0 || s > steps {
                return Err(Error::config("snapshot_step", format!("must be in [1, {steps}]")));
            }
        }

        let init = match self.init {
            InitSpec::Zeros => DenseVector::zeros(d),
            InitSpec::Normal { mean, std } => {
                let normal = Normal::new(mean, std).map_err(|e| Error::config("init", e.to_string()))?;
                let mut r = rng::stream(seed, rng::STREAM_INIT);
                DenseVector::new((0..d).map(|_| normal.sample(&mut r)).collect())?
            }
            InitSpec::Default => default_init.unwrap_or_else(|| DenseVector::zeros(d)),
        };

        let mut protocol = ProtocolConfig::new(self.mode, k_uplink, k_downlink, self.schedule, steps);
        protocol.snapshot_step = self.snapshot_step;
        protocol.track_full_gradient = self.track_full_gradient;
        let comm = self.comm.map(|c| CommParams {
            alpha1: c.alpha1,
            alpha2: c.alpha2,
            beta1: c.beta1,
            beta2: c.beta2,
            workers: self.workers,
            k_uplink,
            k_downlink,
        });
        Ok(Experiment {
            config: self.clone(),
            oracle,
            protocol,
            init,
            f_star,
            lipschitz,
            comm,
        })
    }

    fn load_data(&self, layers: &[usize], spec: &DataSpec) -> Result<Dataset> {
        match spec {
            DataSpec::Csv { path, num_classes } => load_dataset(&DatasetSource::Csv {
                path: path.clone(),
                num_classes: *num_classes,
            }),
            DataSpec::Idx {
                images,
                labels,
                num_classes,
                limit,
            } => {
                let full = load_dataset(&DatasetSource::Idx {
                    images: images.clone(),
                    labels: labels.clone(),
                    num_classes: *num_classes,
                })?;
                match limit {
                    Some(n) if *n < full.len() => full.head(*n),
                    _ => Ok(full),
                }
            }
            DataSpec::Synthetic {
                samples,
                classes,
                separation,
            } => Dataset::synthetic(
                *samples,
                layers[0],
                *classes,
                *separation,
                &mut rng::stream(self.seed, rng::STREAM_DATA),
            ),
        }
    }
}
