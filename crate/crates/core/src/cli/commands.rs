//! Train, ablation and divergence-trace commands.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::config::{ExperimentConfig, TraceChannel, TraceConfig};
use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::losses::{self, LossWeights};
use crate::noise;
use crate::par::ExecMode;
use crate::qsim::{self, Axis, DensityMatrix};
use crate::train::{self, ExperimentResult, TrainConfig};
use crate::VERSION;

/// Comment lines opening every CSV output.
pub fn csv_header(config: &ExperimentConfig) -> String {
    format!("# qmit {VERSION}\n# config {}\n", config.echo())
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::write(dir.join(name), contents)?;
    Ok(())
}

fn write_json(dir: &Path, name: &str, value: &Value) -> Result<()> {
    write(dir, name, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn stamped(config: &ExperimentConfig, body: Value) -> Value {
    let mut out = json!({
        "version": VERSION,
        "config": serde_json::to_value(config).expect("config serializes"),
    });
    if let (Value::Object(o), Value::Object(b)) = (&mut out, body) {
        o.extend(b);
    }
    out
}

pub fn setting_label(alpha_fb: f64) -> &'static str {
    if alpha_fb == 0.0 {
        "baseline"
    } else {
        "fb"
    }
}

/// Metric stream of every run, one row per (seed, epoch).
pub fn metrics_csv(config: &ExperimentConfig, result: &ExperimentResult) -> String {
    let mut out = csv_header(config);
    out.push_str("seed,epoch,L_fb,L_task,train_acc,val_acc,clamped_mass\n");
    for run in &result.runs {
        for r in &run.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                run.seed, r.epoch, r.fb, r.task, r.train_accuracy, r.val_accuracy, r.clamped_mass
            )
            .expect("string write");
        }
    }
    out
}

fn runs_json(result: &ExperimentResult) -> Value {
    Value::Array(
        result
            .runs
            .iter()
            .map(|r| {
                json!({
                    "seed": r.seed,
                    "best_epoch": r.best_epoch,
                    "best_val_accuracy": r.best_val_accuracy,
                    "test_accuracy": r.test.accuracy,
                    "correct_per_class": r.test.correct_per_class,
                    "total_per_class": r.test.total_per_class,
                })
            })
            .collect(),
    )
}

pub fn cmd_train(config: &ExperimentConfig, out: &Path, exec: ExecMode) -> Result<()> {
    let data = config.data()?;
    let (train_set, test_set) = data.load()?;
    fs::create_dir_all(out)?;
    let result = train::run_experiment(&config.train, config.repeats, &train_set, &test_set, exec)?;
    write(out, "metrics.csv", &metrics_csv(config, &result))?;
    for run in &result.runs {
        let body = json!({
            "seed": run.seed,
            "best_epoch": run.best_epoch,
            "state": serde_json::to_value(&run.best)?,
        });
        write_json(out, &format!("checkpoint_seed{}.json", run.seed), &stamped(config, body))?;
    }
    let body = json!({
        "benchmark": data.name(),
        "label": setting_label(config.train.loss_weights.alpha_fb),
        "repeats": config.repeats,
        "mean_test_accuracy": result.mean,
        "std_test_accuracy": result.std,
        "runs": runs_json(&result),
    });
    write_json(out, "summary.json", &stamped(config, body))
}

fn with_alpha_fb(base: &TrainConfig, alpha_fb: f64) -> Result<TrainConfig> {
    let loss_weights = LossWeights::new(alpha_fb, base.loss_weights.alpha_task)?;
    Ok(TrainConfig { loss_weights, ..base.clone() })
}

pub fn cmd_ablation(config: &ExperimentConfig, out: &Path, exec: ExecMode) -> Result<()> {
    let grid = config
        .ablation
        .as_ref()
        .ok_or_else(|| Error::Config { field: "ablation".into(), message: "missing".into() })?;
    let data = config.data()?;
    let (train_set, test_set) = data.load()?;
    fs::create_dir_all(out)?;
    let run = |c: &TrainConfig| train::run_experiment(c, config.repeats, &train_set, &test_set, exec);

    let mut cells = Vec::new();
    let mut table = csv_header(config);
    table.push_str("design,step_size,alpha_fb,setting,repeats,mean_accuracy,std_accuracy\n");
    for &design in &grid.designs {
        for &step_size in &grid.step_sizes {
            for &a in &grid.alpha_fb {
                let c = TrainConfig { design, step_size, ..with_alpha_fb(&config.train, a)? };
                let r = run(&c)?;
                let label = setting_label(a);
                writeln!(table, "{},{step_size},{a},{label},{},{},{}", design.name(), config.repeats, r.mean, r.std)
                    .expect("string write");
                cells.push(json!({
                    "design": design.name(), "step_size": step_size, "alpha_fb": a, "setting": label,
                    "mean_test_accuracy": r.mean, "std_test_accuracy": r.std, "runs": runs_json(&r),
                }));
            }
        }
    }
    if grid.table_rows() > 0 {
        write(out, "table.csv", &table)?;
    }

    let mut sweep = Vec::new();
    let mut layers_csv = csv_header(config);
    layers_csv.push_str("layers,alpha_fb,setting,repeats,mean_accuracy,std_accuracy\n");
    for &layers in &grid.layer_sweep {
        for &a in &grid.alpha_fb {
            let c = TrainConfig { layers, ..with_alpha_fb(&config.train, a)? };
            let r = run(&c)?;
            let label = setting_label(a);
            writeln!(layers_csv, "{layers},{a},{label},{},{},{}", config.repeats, r.mean, r.std).expect("string write");
            sweep.push(json!({
                "layers": layers, "alpha_fb": a, "setting": label,
                "mean_test_accuracy": r.mean, "std_test_accuracy": r.std, "runs": runs_json(&r),
            }));
        }
    }
    if !grid.layer_sweep.is_empty() {
        write(out, "layers.csv", &layers_csv)?;
    }
    let body = json!({ "benchmark": data.name(), "table": cells, "layer_sweep": sweep });
    write_json(out, "ablation.json", &stamped(config, body))
}

const TRACE_AXES: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

/// Divergence `D_α(ρ ‖ I/d)` after each of `operations` noisy operations,
/// starting from `|0…0⟩` (index 0 is the initial state).
///
/// Operation `i` rotates qubit `i mod n` about a random axis by a random
/// angle, applies a CNOT to the next qubit on the ring (for `n > 1`), then
/// applies the channel. Gates and Pauli channels fix `I/d`, so for those the
/// deviation `ρ − I/d` is evolved directly and keeps full relative precision
/// as it decays.
pub fn divergence_trace(t: &TraceConfig) -> Result<Vec<f64>> {
    let n = t.qubits;
    let dim = 1usize << n;
    let mut rng = ChaCha8Rng::seed_from_u64(t.seed);
    let pauli_model = match t.channel {
        TraceChannel::Pauli => Some(noise::sample_true_noise(n, 1, &mut rng)?.remove(0)),
        TraceChannel::Depolarizing => Some(noise::depolarizing_model(n, t.rate)?),
        TraceChannel::AmplitudeDamping => None,
    };
    let mixed = linalg::identity(dim).unscale(dim as f64);
    let rho0 = qsim::basis_state(&vec![0; n])?;
    // the deviation for Pauli channels, the state itself otherwise
    let mut x = match pauli_model {
        Some(_) => rho0.data() - &mixed,
        None => rho0.data().clone(),
    };
    let divergence = |x: &CMat| match pauli_model {
        Some(_) => losses::divergence_from_deviation(x, t.alpha),
        None => losses::divergence_from_deviation(&(x - &mixed), t.alpha),
    };
    let mut trace = Vec::with_capacity(t.operations + 1);
    trace.push(divergence(&x));
    for i in 0..t.operations {
        let q = i % n;
        let axis = TRACE_AXES[rng.random_range(0..3)];
        let angle = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        x = qsim::conjugate(&x, qsim::rotation_gate(axis, angle, q, n)?.data());
        if n > 1 {
            x = qsim::conjugate(&x, qsim::cnot_gate(q, (q + 1) % n, n)?.data());
        }
        x = match &pauli_model {
            Some(m) => {
                // the exact deviation is traceless; drop the round-off
                // identity component, which no gate or Pauli channel damps
                let y = m.apply_raw(&x);
                let shift = linalg::trace(&y) / dim as f64;
                y - linalg::identity(dim) * shift
            }
            None => {
                let mut r = DensityMatrix::from_raw(n, x);
                for target in 0..n {
                    r = noise::amplitude_damping(&r, t.gamma, target)?;
                }
                r.into_data()
            }
        };
        trace.push(divergence(&x));
    }
    Ok(trace)
}

/// Shape statistics of a divergence trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSummary {
    pub initial: f64,
    pub last: f64,
    pub strictly_decreasing: bool,
    /// Divergence at the end of the window.
    pub window_end: f64,
    /// Fraction of steps inside the window that decrease the divergence.
    pub window_decrease_fraction: f64,
    pub min_index: usize,
}

pub fn summarize_trace(trace: &[f64], window: usize) -> TraceSummary {
    let window = window.min(trace.len() - 1);
    let decreasing = trace[..=window].windows(2).filter(|w| w[1] < w[0]).count();
    let min_index = trace.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(i, _)| i);
    TraceSummary {
        initial: trace[0],
        last: trace[trace.len() - 1],
        strictly_decreasing: trace.windows(2).all(|w| w[1] < w[0]),
        window_end: trace[window],
        window_decrease_fraction: if window == 0 { 0.0 } else { decreasing as f64 / window as f64 },
        min_index,
    }
}

pub fn cmd_trace_divergence(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let t = config.trace.as_ref().ok_or_else(|| Error::Config { field: "trace".into(), message: "missing".into() })?;
    let trace = divergence_trace(t)?;
    if let Some(i) = trace.iter().position(|d| !d.is_finite()) {
        return Err(Error::Computation(format!("non-finite divergence at operation {i}")));
    }
    fs::create_dir_all(out)?;
    let mut csv = csv_header(config);
    csv.push_str("operation,divergence\n");
    for (i, d) in trace.iter().enumerate() {
        writeln!(csv, "{i},{d}").expect("string write");
    }
    write(out, "trace.csv", &csv)?;
    let s = summarize_trace(&trace, t.window);
    let body = json!({
        "initial": s.initial,
        "final": s.last,
        "strictly_decreasing": s.strictly_decreasing,
        "window": t.window,
        "window_end": s.window_end,
        "window_decrease_fraction": s.window_decrease_fraction,
        "min_index": s.min_index,
    });
    write_json(out, "trace_summary.json", &stamped(config, body))
}
