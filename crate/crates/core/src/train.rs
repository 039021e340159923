//! Joint SGD training of circuit angles and mitigation rates.
//!
//! One run consumes a single seeded RNG stream in a fixed order: the
//! train/validation split shuffle, then angle initialization, then one
//! shuffle per epoch. Batches are evaluated sample by sample (in parallel
//! when enabled) and reduced in sample order, so results do not depend on
//! scheduling.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::grad::{Gradients, Problem};
use crate::losses::LossWeights;
use crate::noise::{self, MitigationModel, NoiseModel};
use crate::par::{self, ExecMode};
use crate::pqc::{self, CircuitSpec, Design, ExecutionMode};
use crate::qsim::MAX_QUBITS;

/// Loss above which an epoch is aborted as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e4;

/// Half-width of the uniform angle initialization.
pub const INIT_ANGLE: f64 = 0.1;

// stream of the seeded generator that draws the true noise rates
const NOISE_STREAM: u64 = 1;

/// Where the simulated device noise comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSource {
    /// Rates drawn uniformly from the default range under the config seed.
    Seeded,
    /// No device noise.
    Noiseless,
    /// JSON file holding one noise model or a list with one per layer.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub step_size: usize,
    pub design: Design,
    pub layers: usize,
    pub qubits: usize,
    pub loss_weights: LossWeights,
    pub mode: ExecutionMode,
    pub noise: NoiseSource,
    /// Fraction of the training set held out for checkpoint selection.
    pub validation_fraction: f64,
    pub train_theta: bool,
    pub train_mitigation: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 0,
            step_size: 1,
            design: Design::U2,
            layers: 4,
            qubits: 4,
            loss_weights: LossWeights::default(),
            mode: ExecutionMode::LossOnly,
            noise: NoiseSource::Seeded,
            validation_fraction: 0.1,
            train_theta: true,
            train_mitigation: true,
        }
    }
}

fn config_err<T>(field: &str, message: impl Into<String>) -> Result<T> {
    Err(Error::Config { field: field.into(), message: message.into() })
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return config_err("batch_size", "must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return config_err("learning_rate", format!("{} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return config_err("momentum", format!("{} must lie in [0, 1)", self.momentum));
        }
        if self.qubits == 0 || self.qubits > MAX_QUBITS {
            return config_err("qubits", format!("{} outside 1..={MAX_QUBITS}", self.qubits));
        }
        if self.layers == 0 {
            return config_err("layers", "must be at least 1");
        }
        if self.step_size == 0 || !self.layers.is_multiple_of(self.step_size) {
            return config_err("step_size", format!("{} does not divide {} layers", self.step_size, self.layers));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return config_err("validation_fraction", format!("{} must lie in [0, 1)", self.validation_fraction));
        }
        self.loss_weights.validate()
    }

    /// Per-layer device noise.
    pub fn resolve_noise(&self) -> Result<Vec<NoiseModel>> {
        match &self.noise {
            NoiseSource::Seeded => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(NOISE_STREAM);
                noise::sample_true_noise(self.qubits, self.layers, &mut rng)
            }
            NoiseSource::Noiseless => (0..self.layers).map(|_| NoiseModel::identity(self.qubits)).collect(),
            NoiseSource::File(path) => load_noise_file(path, self.qubits, self.layers),
        }
    }
}

/// Reads one noise model (used for every layer) or a list of per-layer
/// models.
pub fn load_noise_file(path: &Path, qubits: usize, layers: usize) -> Result<Vec<NoiseModel>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Spec {
        One(NoiseModel),
        PerLayer(Vec<NoiseModel>),
    }
    let text = std::fs::read_to_string(path)?;
    let models = match serde_json::from_str::<Spec>(&text) {
        Ok(Spec::One(m)) => vec![m; layers],
        Ok(Spec::PerLayer(ms)) => ms,
        Err(e) => return config_err("noise", format!("{}: {e}", path.display())),
    };
    if models.len() != layers {
        return config_err("noise", format!("{} models for {layers} layers", models.len()));
    }
    if let Some(m) = models.iter().find(|m| m.n() != qubits) {
        return config_err("noise", format!("model acts on {} qubits, circuit has {qubits}", m.n()));
    }
    Ok(models)
}

/// Fixed parts of a training problem: the device noise, the class count and
/// how batches are scheduled.
#[derive(Debug, Clone)]
pub struct Environment {
    pub noise: Vec<NoiseModel>,
    pub classes: usize,
    pub exec: ExecMode,
}

impl Environment {
    pub fn new(config: &TrainConfig, classes: usize, exec: ExecMode) -> Result<Self> {
        if classes == 0 || classes > config.qubits {
            return config_err("qubits", format!("{} qubits cannot read out {classes} classes", config.qubits));
        }
        Ok(Self { noise: config.resolve_noise()?, classes, exec })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RngState {
    seed: [u8; 32],
    stream: u64,
    // u128 kept as a decimal string
    word_pos: String,
}

impl RngState {
    fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    fn restore(&self) -> Result<ChaCha8Rng> {
        let pos = self
            .word_pos
            .parse::<u128>()
            .map_err(|e| Error::Validation(format!("bad RNG position {:?}: {e}", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Trainable parameters, momentum buffers and the run's RNG.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub circuit: CircuitSpec,
    pub mitigation: MitigationModel,
    pub velocity_theta: Vec<Vec<f64>>,
    pub velocity_lambda: Vec<Vec<f64>>,
    pub epoch: usize,
    pub seed: u64,
    rng: ChaCha8Rng,
}

impl TrainState {
    /// Angles uniform in `±INIT_ANGLE`, rates zero, buffers zero.
    pub fn init(config: &TrainConfig, seed: u64) -> Result<Self> {
        Self::init_with(config, seed, ChaCha8Rng::seed_from_u64(seed))
    }

    fn init_with(config: &TrainConfig, seed: u64, mut rng: ChaCha8Rng) -> Result<Self> {
        let mut circuit = CircuitSpec::uniform(config.qubits, config.design, config.layers)?;
        let theta: Vec<Vec<f64>> = circuit
            .layers()
            .iter()
            .map(|l| (0..l.num_params()).map(|_| rng.random_range(-INIT_ANGLE..=INIT_ANGLE)).collect())
            .collect();
        circuit.set_params(&theta)?;
        let mitigation = MitigationModel::zeros(config.qubits, config.layers)?;
        let velocity_theta = theta.iter().map(|r| vec![0.0; r.len()]).collect();
        let velocity_lambda = mitigation.rates().iter().map(|r| vec![0.0; r.len()]).collect();
        Ok(Self { circuit, mitigation, velocity_theta, velocity_lambda, epoch: 0, seed, rng })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: crate::VERSION.to_string(),
            seed: self.seed,
            epoch: self.epoch,
            circuit: self.circuit.clone(),
            mitigation: self.mitigation.clone(),
            velocity_theta: self.velocity_theta.clone(),
            velocity_lambda: self.velocity_lambda.clone(),
            rng: RngState::capture(&self.rng),
        }
    }

    pub fn from_checkpoint(cp: &Checkpoint) -> Result<Self> {
        Ok(Self {
            circuit: cp.circuit.clone(),
            mitigation: cp.mitigation.clone(),
            velocity_theta: cp.velocity_theta.clone(),
            velocity_lambda: cp.velocity_lambda.clone(),
            epoch: cp.epoch,
            seed: cp.seed,
            rng: cp.rng.restore()?,
        })
    }
}

/// Serialized training state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: String,
    pub seed: u64,
    pub epoch: usize,
    pub circuit: CircuitSpec,
    pub mitigation: MitigationModel,
    pub velocity_theta: Vec<Vec<f64>>,
    pub velocity_lambda: Vec<Vec<f64>>,
    rng: RngState,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Mean losses and summed diagnostics of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    pub loss: f64,
    pub fb: f64,
    pub task: f64,
    pub correct: usize,
    pub clamped_mass: f64,
    pub capped: usize,
    pub gradients: Gradients,
}

fn problem<'a>(
    circuit: &CircuitSpec,
    mitigation: &'a [Vec<f64>],
    env: &'a Environment,
    config: &TrainConfig,
    weights: LossWeights,
) -> Result<Problem<'a>> {
    let n = circuit.n();
    if env.noise.len() != circuit.num_layers() || mitigation.len() != circuit.num_layers() {
        return Err(Error::Validation("noise, mitigation and circuit layer counts differ".into()));
    }
    let paulis = noise::default_generators(n)?;
    if mitigation.iter().any(|r| r.len() != paulis.len()) {
        return Err(Error::Validation(format!("expected {} mitigation rates per layer", paulis.len())));
    }
    if !circuit.num_layers().is_multiple_of(config.step_size) || config.step_size == 0 {
        return Err(Error::Validation("step size must divide the layer count".into()));
    }
    Ok(Problem {
        n,
        ops: circuit.layer_ops(),
        noise: &env.noise,
        mit_paulis: paulis,
        mit_rates: mitigation,
        mode: config.mode,
        step: config.step_size,
        weights,
        classes: env.classes,
    })
}

/// Mean total loss over `batch` and its gradient with respect to every angle
/// and every mitigation rate. Rates are taken as given, negative values
/// included.
pub fn loss_and_gradients(
    batch: &[Sample],
    circuit: &CircuitSpec,
    mitigation: &[Vec<f64>],
    env: &Environment,
    config: &TrainConfig,
) -> Result<BatchOutcome> {
    if batch.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    if let Some(s) = batch.iter().find(|s| s.label >= env.classes) {
        return Err(Error::Validation(format!("label {} outside 0..{}", s.label, env.classes)));
    }
    let problem = problem(circuit, mitigation, env, config, config.loss_weights)?;
    let results = par::map_collect(env.exec, batch, |s| -> Result<_> {
        let rho0 = pqc::encode(&s.features, circuit.encoder())?;
        Ok(problem.evaluate(rho0.data(), s.label, true))
    });
    let mut gradients = Gradients::zeros_like(&circuit.params(), mitigation);
    let mut out = BatchOutcome {
        loss: 0.0,
        fb: 0.0,
        task: 0.0,
        correct: 0,
        clamped_mass: 0.0,
        capped: 0,
        gradients: gradients.clone(),
    };
    let scale = 1.0 / batch.len() as f64;
    for (i, r) in results.into_iter().enumerate() {
        let (loss, grad) = r?;
        let grad = grad.expect("gradient requested");
        if !loss.total.is_finite() || !grad.is_finite() {
            return Err(Error::Training(format!(
                "non-finite loss at batch sample {i}: total {}, fb {}, task {}, z {:?}, clamped mass {}",
                loss.total, loss.fb, loss.task, loss.z, loss.clamped_mass
            )));
        }
        out.loss += loss.total * scale;
        out.fb += loss.fb * scale;
        out.task += loss.task * scale;
        out.clamped_mass += loss.clamped_mass;
        out.capped += usize::from(loss.fb_capped);
        if crate::losses::predict(&loss.z, env.classes)? == batch[i].label {
            out.correct += 1;
        }
        gradients.add_scaled(&grad, scale);
    }
    out.gradients = gradients;
    Ok(out)
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub fb: f64,
    pub task: f64,
    pub train_accuracy: f64,
    pub clamped_mass: f64,
    pub capped: usize,
}

fn momentum_step(params: &mut [Vec<f64>], velocity: &mut [Vec<f64>], grad: &[Vec<f64>], lr: f64, momentum: f64) {
    for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
            *v = momentum * *v + g;
            *p -= lr * *v;
        }
    }
}

/// One shuffled pass over `data` with a momentum update after every batch.
/// Losses and accuracy are those seen before each batch's update.
pub fn train_epoch(
    state: &mut TrainState,
    data: &Dataset,
    env: &Environment,
    config: &TrainConfig,
) -> Result<EpochMetrics> {
    if data.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    if config.batch_size == 0 || !(config.learning_rate >= 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::Validation("batch size must be ≥ 1 and learning rate finite and ≥ 0".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut state.rng);
    let (mut fb, mut task, mut mass) = (0.0, 0.0, 0.0);
    let (mut correct, mut capped) = (0, 0);
    for chunk in order.chunks(config.batch_size) {
        let batch: Vec<Sample> = chunk.iter().map(|&i| data.samples[i].clone()).collect();
        let rates = state.mitigation.rates();
        let out = loss_and_gradients(&batch, &state.circuit, &rates, env, config)?;
        if out.loss > DIVERGENCE_LIMIT {
            return Err(Error::Training(format!(
                "epoch {}: batch loss {} exceeds {DIVERGENCE_LIMIT}",
                state.epoch + 1,
                out.loss
            )));
        }
        let w = batch.len() as f64;
        fb += out.fb * w;
        task += out.task * w;
        mass += out.clamped_mass;
        correct += out.correct;
        capped += out.capped;
        if config.train_theta {
            let mut theta = state.circuit.params();
            momentum_step(
                &mut theta,
                &mut state.velocity_theta,
                &out.gradients.theta,
                config.learning_rate,
                config.momentum,
            );
            state.circuit.set_params(&theta)?;
        }
        if config.train_mitigation {
            let mut lambda = rates;
            momentum_step(
                &mut lambda,
                &mut state.velocity_lambda,
                &out.gradients.lambda,
                config.learning_rate,
                config.momentum,
            );
            state.mitigation.set_rates_projected(&lambda)?;
        }
    }
    state.epoch += 1;
    let n = data.len() as f64;
    Ok(EpochMetrics {
        epoch: state.epoch,
        fb: fb / n,
        task: task / n,
        train_accuracy: correct as f64 / n,
        clamped_mass: mass / n,
        capped,
    })
}

/// Accuracy and per-class tallies.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub correct_per_class: Vec<usize>,
    pub total_per_class: Vec<usize>,
}

/// Predicted class of every sample under the noisy, mitigated circuit.
pub fn predict_all(state: &TrainState, data: &Dataset, env: &Environment, config: &TrainConfig) -> Result<Vec<usize>> {
    let rates = state.mitigation.rates();
    let task_only = LossWeights { alpha_fb: 0.0, alpha_task: 1.0 };
    let problem = problem(&state.circuit, &rates, env, config, task_only)?;
    par::map_collect(env.exec, &data.samples, |s| -> Result<usize> {
        let rho0 = pqc::encode(&s.features, state.circuit.encoder())?;
        let (loss, _) = problem.evaluate(rho0.data(), s.label.min(env.classes - 1), false);
        crate::losses::predict(&loss.z, env.classes)
    })
    .into_iter()
    .collect()
}

pub fn evaluate(state: &TrainState, data: &Dataset, env: &Environment, config: &TrainConfig) -> Result<Evaluation> {
    let predictions = predict_all(state, data, env, config)?;
    let mut correct = vec![0; env.classes];
    let mut total = vec![0; env.classes];
    for (s, p) in data.samples.iter().zip(&predictions) {
        total[s.label] += 1;
        if *p == s.label {
            correct[s.label] += 1;
        }
    }
    let hits: usize = correct.iter().sum();
    let accuracy = if data.is_empty() { 0.0 } else { hits as f64 / data.len() as f64 };
    Ok(Evaluation { accuracy, correct_per_class: correct, total_per_class: total })
}

/// One row of a run's metric stream.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub fb: f64,
    pub task: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub clamped_mass: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub test: Evaluation,
    /// State at the best validation epoch.
    pub best: Checkpoint,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub runs: Vec<RunResult>,
    pub mean: f64,
    /// Sample standard deviation of the test accuracies; zero for one run.
    pub std: f64,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains one model with the given seed, keeping the state with the best
/// validation accuracy (earliest on ties, epoch 0 included).
pub fn run_single(
    config: &TrainConfig,
    seed: u64,
    train: &Dataset,
    test: &Dataset,
    env: &Environment,
) -> Result<RunResult> {
    if train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((train.len() as f64) * config.validation_fraction).round() as usize;
    let n_val = n_val.min(train.len() - 1);
    let pick = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        Dataset { classes: train.classes, samples: idx.iter().map(|&i| train.samples[i].clone()).collect() }
    };
    let (val, fit) = (pick(&order[..n_val]), pick(&order[n_val..]));
    let mut state = TrainState::init_with(config, seed, rng)?;

    let select = |state: &TrainState, train_acc: f64| -> Result<f64> {
        if val.is_empty() {
            Ok(train_acc)
        } else {
            Ok(evaluate(state, &val, env, config)?.accuracy)
        }
    };
    let initial_acc = evaluate(&state, &fit, env, config)?.accuracy;
    let initial = initial_losses(&state, &fit, env, config)?;
    let val0 = select(&state, initial_acc)?;
    let mut records = vec![EpochRecord {
        epoch: 0,
        fb: initial.0,
        task: initial.1,
        train_accuracy: initial_acc,
        val_accuracy: val0,
        clamped_mass: initial.2,
    }];
    let (mut best, mut best_epoch, mut best_val) = (state.checkpoint(), 0, val0);
    for _ in 0..config.epochs {
        let m = train_epoch(&mut state, &fit, env, config)?;
        let v = select(&state, m.train_accuracy)?;
        records.push(EpochRecord {
            epoch: m.epoch,
            fb: m.fb,
            task: m.task,
            train_accuracy: m.train_accuracy,
            val_accuracy: v,
            clamped_mass: m.clamped_mass,
        });
        if v > best_val {
            (best, best_epoch, best_val) = (state.checkpoint(), m.epoch, v);
        }
    }
    let test = evaluate(&TrainState::from_checkpoint(&best)?, test, env, config)?;
    Ok(RunResult { seed, records, best_epoch, best_val_accuracy: best_val, test, best })
}

fn initial_losses(
    state: &TrainState,
    data: &Dataset,
    env: &Environment,
    config: &TrainConfig,
) -> Result<(f64, f64, f64)> {
    let rates = state.mitigation.rates();
    let problem = problem(&state.circuit, &rates, env, config, config.loss_weights)?;
    let results = par::map_collect(env.exec, &data.samples, |s| -> Result<_> {
        let rho0 = pqc::encode(&s.features, state.circuit.encoder())?;
        Ok(problem.evaluate(rho0.data(), s.label, false).0)
    });
    let (mut fb, mut task, mut mass) = (0.0, 0.0, 0.0);
    for r in results {
        let l = r?;
        fb += l.fb;
        task += l.task;
        mass += l.clamped_mass;
    }
    let n = data.len() as f64;
    Ok((fb / n, task / n, mass / n))
}

/// Trains `repeats` models with seeds `seed, seed+1, …` and summarizes their
/// test accuracies.
pub fn run_experiment(
    config: &TrainConfig,
    repeats: usize,
    train: &Dataset,
    test: &Dataset,
    exec: ExecMode,
) -> Result<ExperimentResult> {
    config.validate()?;
    if repeats == 0 {
        return config_err("repeats", "must be at least 1");
    }
    let env = Environment::new(config, train.classes, exec)?;
    let runs = (0..repeats as u64)
        .map(|r| run_single(config, config.seed + r, train, test, &env))
        .collect::<Result<Vec<_>>>()?;
    let accs: Vec<f64> = runs.iter().map(|r| r.test.accuracy).collect();
    let (mean, std) = mean_std(&accs);
    Ok(ExperimentResult { runs, mean, std })
}
