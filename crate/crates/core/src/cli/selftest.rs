//! Fast invariant suite behind `qmit selftest`.

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::commands::{divergence_trace, summarize_trace};
use super::config::{TraceChannel, TraceConfig};
use crate::data::{self, Sample};
use crate::error::Result;
use crate::linalg::{self, frobenius};
use crate::losses;
use crate::noise::{self, MitigationModel, NoiseModel};
use crate::par::ExecMode;
use crate::pqc::{self, CircuitSpec, Design, ExecutionMode};
use crate::qsim::{self, DensityMatrix, Unitary};
use crate::train::{self, Environment, TrainConfig, TrainState};

/// Deliberate defects used to prove the suite can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Corruption {
    #[default]
    None,
    /// Inverse factors applied in reverse generator order while the rates
    /// are still read in forward order, so factors pair with wrong rates.
    InverseOrder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

type Check = fn(Corruption) -> Result<(bool, String)>;

const CHECKS: &[(&str, Check)] = &[
    ("channel_outputs_are_states", channel_outputs_are_states),
    ("inverse_channel_roundtrip", inverse_channel_roundtrip),
    ("sampling_overhead_dual_form", sampling_overhead_dual_form),
    ("noise_free_divergence_invariance", noise_free_divergence_invariance),
    ("depolarizing_divergence_decreases", depolarizing_divergence_decreases),
    ("perfect_mitigation_oracle", perfect_mitigation_oracle),
    ("fidelity_properties", fidelity_properties),
    ("gradient_matches_finite_differences", gradient_matches_finite_differences),
    ("training_is_deterministic", training_is_deterministic),
    ("rates_stay_nonnegative", rates_stay_nonnegative),
    ("checkpoint_roundtrip", checkpoint_roundtrip),
    ("idx_roundtrip", idx_roundtrip),
];

pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|(n, _)| *n).collect()
}

/// Runs every check; errors count as failures.
pub fn run(corruption: Corruption) -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .map(|(name, check)| {
            let start = Instant::now();
            let (passed, detail) = match check(corruption) {
                Ok(r) => r,
                Err(e) => (false, format!("error: {e}")),
            };
            CheckOutcome { name, passed, detail, seconds: start.elapsed().as_secs_f64() }
        })
        .collect()
}

pub fn render(outcomes: &[CheckOutcome]) -> String {
    let width = outcomes.iter().map(|o| o.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for o in outcomes {
        let status = if o.passed { "PASS" } else { "FAIL" };
        out.push_str(&format!("{status}  {:width$}  {:>7.3}s  {}\n", o.name, o.seconds, o.detail));
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    out.push_str(&format!("{} checks, {failed} failed\n", outcomes.len()));
    out
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_state(n: usize, rng: &mut ChaCha8Rng) -> Result<DensityMatrix> {
    DensityMatrix::new(linalg::random_mixed(1 << n, rng))
}

fn random_model(n: usize, max_rate: f64, rng: &mut ChaCha8Rng) -> Result<NoiseModel> {
    let rates: Vec<f64> = (0..3 * n).map(|_| rng.random_range(0.0..max_rate)).collect();
    NoiseModel::from_rates(n, &rates)
}

fn random_circuit(n: usize, design: Design, layers: usize, rng: &mut ChaCha8Rng) -> Result<CircuitSpec> {
    let mut c = CircuitSpec::uniform(n, design, layers)?;
    let params: Vec<Vec<f64>> =
        c.params().iter().map(|l| l.iter().map(|_| rng.random_range(-PI..PI)).collect()).collect();
    c.set_params(&params)?;
    Ok(c)
}

fn random_features(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..pqc::FEATURES).map(|_| rng.random()).collect()
}

fn channel_outputs_are_states(_: Corruption) -> Result<(bool, String)> {
    let mut r = rng(1);
    let mut worst: f64 = 0.0;
    for i in 0..30 {
        let n = 1 + i % 4;
        let out = noise::apply_channel(&random_state(n, &mut r)?, &random_model(n, 0.1, &mut r)?)?;
        worst = worst.max((out.trace().re - 1.0).abs()).max(-out.min_eigenvalue());
    }
    Ok((worst <= 1e-12, format!("worst trace/PSD defect {worst:.2e}")))
}

fn inverse_channel_roundtrip(corruption: Corruption) -> Result<(bool, String)> {
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let n = 1 + i % 4;
        let rho = random_state(n, &mut r)?;
        let model = random_model(n, 0.1, &mut r)?;
        let noisy = noise::apply_channel(&rho, &model)?;
        let inverse = match corruption {
            Corruption::None => model,
            Corruption::InverseOrder => {
                let mut rates = model.rates();
                rates.reverse();
                model.with_rates(&rates)?
            }
        };
        let back = noise::apply_inverse_channel(&noisy, &inverse)?;
        worst = worst.max(frobenius(&(back.data() - rho.data())));
    }
    Ok((worst <= 1e-10, format!("max ‖Λ⁻¹Λρ − ρ‖_F {worst:.2e}")))
}

fn sampling_overhead_dual_form(_: Corruption) -> Result<(bool, String)> {
    let mut r = rng(3);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let m = random_model(1 + i % 4, 0.1, &mut r)?;
        let (a, b) = (noise::sampling_overhead(&m), noise::sampling_overhead_product(&m));
        worst = worst.max((a - b).abs() / a);
    }
    Ok((worst <= 1e-12, format!("max relative gap {worst:.2e}")))
}

fn noise_free_divergence_invariance(_: Corruption) -> Result<(bool, String)> {
    let mut r = rng(4);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let circuit = random_circuit(4, Design::U3, 8, &mut r)?;
        let rho0 = random_state(4, &mut r)?;
        let d0 = losses::divergence_to_maximally_mixed(&rho0, 2.0)?;
        for s in pqc::forward_noise_free(&rho0, &circuit)? {
            worst = worst.max((losses::divergence_to_maximally_mixed(&s, 2.0)? - d0).abs());
        }
    }
    Ok((worst <= 1e-9, format!("max drift {worst:.2e}")))
}

fn depolarizing_divergence_decreases(_: Corruption) -> Result<(bool, String)> {
    let t = TraceConfig { channel: TraceChannel::Depolarizing, operations: 100, window: 100, ..TraceConfig::default() };
    let s = summarize_trace(&divergence_trace(&t)?, t.window);
    Ok((s.strictly_decreasing, format!("D from {:.4} to {:.3e} over 100 operations", s.initial, s.last)))
}

fn perfect_mitigation_oracle(_: Corruption) -> Result<(bool, String)> {
    let mut r = rng(5);
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        let design = [Design::RX, Design::U2, Design::U3][i % 3];
        let circuit = random_circuit(4, design, 4, &mut r)?;
        let models = noise::sample_true_noise(4, 4, &mut r)?;
        let rho0 = pqc::encode(&random_features(&mut r), circuit.encoder())?;
        let clean = pqc::readout(pqc::forward_noise_free(&rho0, &circuit)?.last().expect("layers"), &circuit)?;
        let mitigation = MitigationModel::new(models.clone())?;
        let fwd = pqc::forward_mitigated(&rho0, &circuit, &models, &mitigation, ExecutionMode::Cascaded)?;
        let z = pqc::readout(fwd.output(), &circuit)?;
        worst = z.iter().zip(&clean).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    Ok((worst <= 1e-8, format!("max readout gap {worst:.2e}")))
}

fn fidelity_properties(_: Corruption) -> Result<(bool, String)> {
    let mut r = rng(6);
    let mut worst: f64 = 0.0;
    let mut bounds_ok = true;
    for i in 0..50 {
        let n = 1 + i % 3;
        let (a, b) = (random_state(n, &mut r)?, random_state(n, &mut r)?);
        let f = losses::fidelity(&a, &b)?;
        bounds_ok &= (-1e-9..=1.0 + 1e-9).contains(&f);
        worst = worst.max((f - losses::fidelity(&b, &a)?).abs());
        let u = Unitary::new(linalg::random_unitary(1 << n, &mut r))?;
        let fu = losses::fidelity(&qsim::evolve(&a, &u)?, &qsim::evolve(&b, &u)?)?;
        worst = worst.max((f - fu).abs());
        let (kp, kq) = (linalg::random_ket(1 << n, &mut r), linalg::random_ket(1 << n, &mut r));
        let overlap: num_complex::Complex64 = kp.iter().zip(&kq).map(|(x, y)| x.conj() * y).sum();
        let fp = losses::fidelity(&qsim::pure_state(&kp)?, &qsim::pure_state(&kq)?)?;
        worst = worst.max((fp - overlap.norm_sqr()).abs());
    }
    Ok((bounds_ok && worst <= 1e-9, format!("bounds {bounds_ok}, max gap {worst:.2e}")))
}

fn gradient_matches_finite_differences(_: Corruption) -> Result<(bool, String)> {
    let mut r = rng(7);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (design, mode, step) in [(Design::U2, ExecutionMode::LossOnly, 1), (Design::U3, ExecutionMode::Cascaded, 2)] {
        let config = TrainConfig { qubits: 3, layers: 2, design, mode, step_size: step, ..TrainConfig::default() };
        let env = Environment::new(&config, 2, ExecMode::Sequential)?;
        let circuit = random_circuit(3, design, 2, &mut r)?;
        let truth: Vec<Vec<f64>> = env.noise.iter().map(NoiseModel::rates).collect();
        let rates: Vec<Vec<f64>> =
            truth.iter().map(|l| l.iter().map(|x| x * r.random_range(0.0..1.0)).collect()).collect();
        let batch: Vec<Sample> = (0..2).map(|label| Sample { features: random_features(&mut r), label }).collect();
        let g = train::loss_and_gradients(&batch, &circuit, &rates, &env, &config)?.gradients;
        let loss =
            |c: &CircuitSpec, m: &[Vec<f64>]| train::loss_and_gradients(&batch, c, m, &env, &config).map(|o| o.loss);
        let compare = |analytic: f64, fd: f64| {
            if fd.abs() < 1e-6 {
                (analytic - fd).abs() / 1e-6 * 1e-3
            } else {
                (analytic - fd).abs() / fd.abs()
            }
        };
        let params = circuit.params();
        for (l, layer) in params.iter().enumerate() {
            for p in 0..layer.len() {
                let shifted = |d: f64| -> Result<f64> {
                    let mut c = circuit.clone();
                    let mut q = params.clone();
                    q[l][p] += d;
                    c.set_params(&q)?;
                    loss(&c, &rates)
                };
                let fd = (shifted(h)? - shifted(-h)?) / (2.0 * h);
                worst = worst.max(compare(g.theta[l][p], fd));
            }
        }
        for l in 0..rates.len() {
            for p in 0..rates[l].len() {
                let shifted = |d: f64| -> Result<f64> {
                    let mut m = rates.clone();
                    m[l][p] += d;
                    loss(&circuit, &m)
                };
                let fd = (shifted(h)? - shifted(-h)?) / (2.0 * h);
                worst = worst.max(compare(g.lambda[l][p], fd));
            }
        }
    }
    Ok((worst <= 1e-3, format!("max relative error {worst:.2e} (h = {h:e})")))
}

fn tiny_run(exec: ExecMode) -> Result<Vec<(f64, f64, f64)>> {
    let data = data::synthetic_blobs(2, 8, 2.0, 8)?;
    let config = TrainConfig { epochs: 2, batch_size: 4, qubits: 3, layers: 2, ..TrainConfig::default() };
    let env = Environment::new(&config, 2, exec)?;
    let run = train::run_single(&config, 3, &data, &data, &env)?;
    Ok(run.records.iter().map(|r| (r.fb, r.task, r.train_accuracy)).collect())
}

fn training_is_deterministic(_: Corruption) -> Result<(bool, String)> {
    let a = tiny_run(ExecMode::Parallel)?;
    let b = tiny_run(ExecMode::Parallel)?;
    let c = tiny_run(ExecMode::Sequential)?;
    let same = |x: &[(f64, f64, f64)], y: &[(f64, f64, f64)]| {
        x.iter().zip(y).all(|(p, q)| p.0.to_bits() == q.0.to_bits() && p.1.to_bits() == q.1.to_bits() && p.2 == q.2)
    };
    let ok = same(&a, &b) && same(&a, &c);
    Ok((ok, format!("{} epochs compared bitwise across repeats and execution modes", a.len())))
}

fn rates_stay_nonnegative(_: Corruption) -> Result<(bool, String)> {
    let data = data::synthetic_blobs(2, 8, 2.0, 9)?;
    let config =
        TrainConfig { epochs: 1, batch_size: 4, qubits: 3, layers: 2, learning_rate: 0.5, ..TrainConfig::default() };
    let env = Environment::new(&config, 2, ExecMode::Parallel)?;
    let mut state = TrainState::init(&config, 4)?;
    let mut min = f64::INFINITY;
    for _ in 0..3 {
        train::train_epoch(&mut state, &data, &env, &config)?;
        min = state.mitigation.rates().iter().flatten().copied().fold(min, f64::min);
    }
    Ok((min >= 0.0, format!("smallest rate {min:e}")))
}

fn checkpoint_roundtrip(_: Corruption) -> Result<(bool, String)> {
    let data = data::synthetic_blobs(2, 4, 2.0, 10)?;
    let config = TrainConfig { epochs: 1, batch_size: 4, qubits: 2, layers: 2, ..TrainConfig::default() };
    let env = Environment::new(&config, 2, ExecMode::Sequential)?;
    let mut state = TrainState::init(&config, 5)?;
    train::train_epoch(&mut state, &data, &env, &config)?;
    let saved = state.checkpoint();
    let back: train::Checkpoint = serde_json::from_str(&serde_json::to_string(&saved)?)?;
    let mut restored = TrainState::from_checkpoint(&back)?;
    let m1 = train::train_epoch(&mut state, &data, &env, &config)?;
    let m2 = train::train_epoch(&mut restored, &data, &env, &config)?;
    let ok = back == saved && m1 == m2 && restored.checkpoint() == state.checkpoint();
    Ok((ok, "save, load and resume reproduce the next epoch".into()))
}

fn idx_roundtrip(_: Corruption) -> Result<(bool, String)> {
    let mut images = Vec::new();
    for v in [0x0000_0803u32, 2, 2, 3] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    images.extend(0u8..12);
    let mut labels = Vec::new();
    for v in [0x0000_0801u32, 2] {
        labels.extend_from_slice(&v.to_be_bytes());
    }
    labels.extend([7u8, 1]);
    let (count, rows, cols, pixels) = data::parse_idx_images(&images)?;
    let parsed = data::parse_idx_labels(&labels)?;
    let truncated = data::parse_idx_images(&images[..images.len() - 1]).is_err();
    let ok =
        (count, rows, cols) == (2, 2, 3) && pixels == (0u8..12).collect::<Vec<_>>() && parsed == [7, 1] && truncated;
    Ok((ok, "header, body and truncation".into()))
}
