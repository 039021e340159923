//! Acceptance criteria 1–12. Each test prints one PASS/FAIL line with the
//! measured quantity, then asserts.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, LazyLock, Mutex, OnceLock};
use std::time::{Duration, Instant};

use num_complex::Complex64;
use qmit::cli::commands::{divergence_trace, summarize_trace};
use qmit::cli::{TraceChannel, TraceConfig};
use qmit::data::{self, Benchmark, Dataset, Sample};
use qmit::linalg::{self, frobenius};
use qmit::losses::{self, LossWeights};
use qmit::noise::{self, MitigationModel, NoiseModel};
use qmit::par::ExecMode;
use qmit::pqc::{self, CircuitSpec, Design, ExecutionMode, FEATURES};
use qmit::qsim::{self, DensityMatrix, Unitary};
use qmit::train::{self, Environment, TrainConfig, TrainState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(criterion: u32, title: &str, passed: bool, detail: &str, elapsed: Duration) {
    let status = if passed { "PASS" } else { "FAIL" };
    let line = format!("criterion {criterion:>2} {status}  {title}: {detail} [{:.1}s]\n", elapsed.as_secs_f64());
    // written straight to the stream so the line shows even when output is captured
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(passed, "criterion {criterion} failed: {detail}");
}

fn random_state(n: usize, rng: &mut ChaCha8Rng) -> DensityMatrix {
    if rng.random_bool(0.25) {
        qsim::pure_state(&linalg::random_ket(1 << n, rng)).unwrap()
    } else {
        DensityMatrix::new(linalg::random_mixed(1 << n, rng)).unwrap()
    }
}

fn random_model(n: usize, max_rate: f64, rng: &mut ChaCha8Rng) -> NoiseModel {
    let rates: Vec<f64> = (0..3 * n).map(|_| rng.random_range(0.0..=max_rate)).collect();
    NoiseModel::from_rates(n, &rates).unwrap()
}

fn random_circuit(n: usize, design: Design, layers: usize, rng: &mut ChaCha8Rng) -> CircuitSpec {
    let mut c = CircuitSpec::uniform(n, design, layers).unwrap();
    let params: Vec<Vec<f64>> =
        c.params().iter().map(|l| l.iter().map(|_| rng.random_range(-PI..PI)).collect()).collect();
    c.set_params(&params).unwrap();
    c
}

fn random_features(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..FEATURES).map(|_| rng.random()).collect()
}

const DESIGNS: [Design; 3] = [Design::RX, Design::U2, Design::U3];

#[test]
fn criterion_01_channel_inversion() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let n = 1 + i % 4;
        let rho = random_state(n, &mut rng);
        let model = random_model(n, 0.1, &mut rng);
        let back = noise::apply_inverse_channel(&noise::apply_channel(&rho, &model).unwrap(), &model).unwrap();
        worst = worst.max(frobenius(&(back.data() - rho.data())));
    }
    let elapsed = start.elapsed();
    let passed = worst <= 1e-10 && elapsed < Duration::from_secs(10);
    report(1, "channel inversion", passed, &format!("max ‖Λ⁻¹(Λ(ρ)) − ρ‖_F = {worst:.3e} over 200 pairs"), elapsed);
}

#[test]
fn criterion_02_sampling_overhead_dual_form() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let m = random_model(1 + i % 4, 0.1, &mut rng);
        let (a, b) = (noise::sampling_overhead_product(&m), noise::sampling_overhead(&m));
        worst = worst.max((a - b).abs() / b);
    }
    report(
        2,
        "sampling overhead",
        worst <= 1e-12,
        &format!("max relative gap {worst:.3e} over 100 models"),
        start.elapsed(),
    );
}

#[test]
fn criterion_03_noise_free_divergence_invariance() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst: f64 = 0.0;
    for t in 0..20 {
        let circuit = random_circuit(4, DESIGNS[t % 3], 8, &mut rng);
        let rho0 = random_state(4, &mut rng);
        for alpha in [0.5, 2.0, 3.0] {
            let d0 = losses::divergence_to_maximally_mixed(&rho0, alpha).unwrap();
            for s in pqc::forward_noise_free(&rho0, &circuit).unwrap() {
                worst = worst.max((losses::divergence_to_maximally_mixed(&s, alpha).unwrap() - d0).abs());
            }
        }
    }
    report(
        3,
        "noise-free invariance",
        worst <= 1e-9,
        &format!("max drift {worst:.3e} (α ∈ {{0.5, 2, 3}}, 20 circuits)"),
        start.elapsed(),
    );
}

#[test]
fn criterion_04_noisy_divergence_monotonicity() {
    let start = Instant::now();
    let dep =
        TraceConfig { channel: TraceChannel::Depolarizing, rate: 0.01, operations: 500, ..TraceConfig::default() };
    let d = summarize_trace(&divergence_trace(&dep).unwrap(), dep.window);
    let dep_ok = d.strictly_decreasing && d.last < 0.01 * d.initial;
    let ad = TraceConfig {
        channel: TraceChannel::AmplitudeDamping,
        gamma: 0.01,
        operations: 500,
        window: 100,
        ..TraceConfig::default()
    };
    let a = summarize_trace(&divergence_trace(&ad).unwrap(), ad.window);
    let ad_ok = a.window_end < 0.9 * a.initial && a.window_decrease_fraction >= 0.8;
    let elapsed = start.elapsed();
    let passed = dep_ok && ad_ok && elapsed < Duration::from_secs(60);
    let detail = format!(
        "depolarizing {:.4} → {:.3e} (strict {}); amplitude damping {:.4} → {:.4} over {} ops, {:.0}% of steps decreasing",
        d.initial,
        d.last,
        d.strictly_decreasing,
        a.initial,
        a.window_end,
        ad.window,
        100.0 * a.window_decrease_fraction
    );
    report(4, "noisy monotonicity", passed, &detail, elapsed);
}

#[test]
fn criterion_05_perfect_mitigation_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let circuit = random_circuit(4, DESIGNS[i % 3], 4, &mut rng);
        let models = noise::sample_true_noise(4, 4, &mut rng).unwrap();
        let rho0 = pqc::encode(&random_features(&mut rng), circuit.encoder()).unwrap();
        let clean = pqc::readout(pqc::forward_noise_free(&rho0, &circuit).unwrap().last().unwrap(), &circuit).unwrap();
        let mitigation = MitigationModel::new(models.clone()).unwrap();
        let fwd = pqc::forward_mitigated(&rho0, &circuit, &models, &mitigation, ExecutionMode::Cascaded).unwrap();
        let z = pqc::readout(fwd.output(), &circuit).unwrap();
        worst = z.iter().zip(&clean).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    report(
        5,
        "perfect mitigation",
        worst <= 1e-8,
        &format!("max |z − z_clean| = {worst:.3e} over 50 circuits"),
        start.elapsed(),
    );
}

#[test]
fn criterion_06_fidelity_suite() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let (mut bounds, mut symmetry, mut invariance, mut overlap): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..500 {
        let n = 1 + i % 4;
        let (a, b) = (random_state(n, &mut rng), random_state(n, &mut rng));
        let f = losses::fidelity(&a, &b).unwrap();
        bounds = bounds.max(-f).max(f - 1.0);
        symmetry = symmetry.max((f - losses::fidelity(&b, &a).unwrap()).abs());
        let u = Unitary::new(linalg::random_unitary(1 << n, &mut rng)).unwrap();
        let fu = losses::fidelity(&qsim::evolve(&a, &u).unwrap(), &qsim::evolve(&b, &u).unwrap()).unwrap();
        invariance = invariance.max((f - fu).abs());
        let (p, q) = (linalg::random_ket(1 << n, &mut rng), linalg::random_ket(1 << n, &mut rng));
        let ip: Complex64 = p.iter().zip(&q).map(|(x, y)| x.conj() * y).sum();
        let fp = losses::fidelity(&qsim::pure_state(&p).unwrap(), &qsim::pure_state(&q).unwrap()).unwrap();
        overlap = overlap.max((fp - ip.norm_sqr()).abs());
    }
    let passed = bounds <= 1e-9 && symmetry <= 1e-9 && invariance <= 1e-9 && overlap <= 1e-9;
    let detail = format!(
        "bound excess {bounds:.2e}, symmetry {symmetry:.2e}, unitary invariance {invariance:.2e}, pure overlap {overlap:.2e}"
    );
    report(6, "fidelity suite", passed, &detail, start.elapsed());
}

#[test]
fn criterion_07_gradient_contract() {
    let start = Instant::now();
    let h = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let mut worst_rel: f64 = 0.0;
    let mut worst_small: f64 = 0.0;
    let mut failures = Vec::new();
    let mut components = 0;
    for cfg in 0..20usize {
        let design = DESIGNS[cfg % 3];
        let mode = if cfg % 2 == 0 { ExecutionMode::LossOnly } else { ExecutionMode::Cascaded };
        // cfg 0..18 covers every design × mode × step combination once
        let step = [1, 2, 4][(cfg / 6) % 3];
        let config = TrainConfig {
            qubits: 4,
            layers: 4,
            design,
            mode,
            step_size: step,
            seed: cfg as u64,
            ..TrainConfig::default()
        };
        let env = Environment::new(&config, 4, ExecMode::Parallel).unwrap();
        let circuit = random_circuit(4, design, 4, &mut rng);
        let rates: Vec<Vec<f64>> =
            env.noise.iter().map(|m| m.rates().iter().map(|r| r * rng.random_range(0.0..1.0)).collect()).collect();
        let batch: Vec<Sample> =
            (0..2).map(|_| Sample { features: random_features(&mut rng), label: rng.random_range(0..4) }).collect();
        let g = train::loss_and_gradients(&batch, &circuit, &rates, &env, &config).unwrap().gradients;
        let loss =
            |c: &CircuitSpec, m: &[Vec<f64>]| train::loss_and_gradients(&batch, c, m, &env, &config).unwrap().loss;
        // failing components are re-differenced at a smaller step as a
        // diagnostic; the verdict uses the prescribed step only
        let mut check = |analytic: f64, at: &dyn Fn(f64) -> f64, what: String| {
            components += 1;
            let fd = (at(h) - at(-h)) / (2.0 * h);
            let ok = if analytic.abs().max(fd.abs()) < 1e-6 {
                (analytic - fd).abs() <= 1e-6
            } else {
                let rel = (analytic - fd).abs() / fd.abs();
                worst_rel = worst_rel.max(rel);
                rel <= 1e-3
            };
            if !ok {
                let small = 1e-6;
                let fd_small = (at(small) - at(-small)) / (2.0 * small);
                let rel_small = (analytic - fd_small).abs() / fd_small.abs().max(1e-6);
                worst_small = worst_small.max(rel_small);
                failures.push(format!(
                    "cfg {cfg} ({design:?}, {mode:?}, k={step}) {what}: analytic {analytic:.6e}, fd {fd:.6e}; \
                     at h = 1e-6 fd {fd_small:.6e} (rel {rel_small:.1e})"
                ));
            }
        };
        let params = circuit.params();
        for (l, layer) in params.iter().enumerate() {
            for p in 0..layer.len() {
                let at = |d: f64| {
                    let mut q = params.clone();
                    q[l][p] += d;
                    let mut c = circuit.clone();
                    c.set_params(&q).unwrap();
                    loss(&c, &rates)
                };
                check(g.theta[l][p], &at, format!("θ[{l}][{p}]"));
            }
        }
        for l in 0..rates.len() {
            for p in 0..rates[l].len() {
                let at = |d: f64| {
                    let mut m = rates.clone();
                    m[l][p] += d;
                    loss(&circuit, &m)
                };
                check(g.lambda[l][p], &at, format!("λ̂[{l}][{p}]"));
            }
        }
    }
    let elapsed = start.elapsed();
    let passed = failures.is_empty() && elapsed < Duration::from_secs(300);
    let mut detail = format!(
        "{components} components, {} outside tolerance, worst relative error {worst_rel:.3e} (h = {h:e}); \
         those components agree to {worst_small:.1e} at h = 1e-6",
        failures.len()
    );
    for f in failures.iter().take(8) {
        detail.push_str(&format!("\n    {f}"));
    }
    report(7, "gradient contract", passed, &detail, elapsed);
}

/// Frozen angles, rates trained on the forward-backward loss alone.
#[test]
fn criterion_08_noise_rate_identifiability() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    let samples = (0..64).map(|_| Sample { features: random_features(&mut rng), label: 0 }).collect();
    let states = Dataset { classes: 2, samples };
    let config = TrainConfig {
        epochs: 200,
        batch_size: 64,
        learning_rate: 0.003,
        momentum: 0.9,
        seed: 0,
        step_size: 1,
        mode: ExecutionMode::LossOnly,
        loss_weights: LossWeights::new(1.0, 0.0).unwrap(),
        train_theta: false,
        train_mitigation: true,
        validation_fraction: 0.0,
        ..TrainConfig::default()
    };
    let env = Environment::new(&config, 2, ExecMode::Parallel).unwrap();
    let mut state = TrainState::init(&config, 81).unwrap();
    for _ in 0..200 {
        train::train_epoch(&mut state, &states, &env, &config).unwrap();
    }
    let truth: Vec<Vec<f64>> = env.noise.iter().map(NoiseModel::rates).collect();
    let per_layer: Vec<f64> = state
        .mitigation
        .rates()
        .iter()
        .zip(&truth)
        .map(|(e, t)| e.iter().zip(t).map(|(e, t)| ((e - t) / t).abs()).fold(0.0, f64::max))
        .collect();
    let worst = per_layer.iter().copied().fold(0.0, f64::max);
    let layers: Vec<String> = per_layer.iter().map(|w| format!("{:.1}%", 100.0 * w)).collect();
    let detail =
        format!("worst relative error {:.1}% after 200 steps; per layer [{}]", 100.0 * worst, layers.join(", "));
    report(8, "noise-rate identifiability", worst <= 0.2, &detail, start.elapsed());
}

fn mnist4() -> &'static (Dataset, Dataset) {
    static DATA: OnceLock<(Dataset, Dataset)> = OnceLock::new();
    DATA.get_or_init(|| {
        let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist5k");
        let raw = data::load_idx(&dir.join("images-idx3-ubyte"), &dir.join("labels-idx1-ubyte")).unwrap();
        data::make_benchmark(&raw, Benchmark::Mnist4, 1000, 500, 0).unwrap()
    })
}

type RunKey = (usize, usize, bool);
type RunCell = Arc<OnceLock<(f64, Vec<f64>)>>;

/// Mean test accuracy and per-seed accuracies over seeds 0, 1, 2; each
/// setting is trained once and shared between criteria.
fn desk_run(layers: usize, step_size: usize, with_fb: bool) -> (f64, Vec<f64>) {
    static RUNS: LazyLock<Mutex<HashMap<RunKey, RunCell>>> = LazyLock::new(Default::default);
    let cell = RUNS.lock().unwrap().entry((layers, step_size, with_fb)).or_default().clone();
    cell.get_or_init(|| {
        let (train_set, test_set) = mnist4();
        let config = TrainConfig {
            design: Design::U2,
            qubits: 4,
            layers,
            step_size,
            mode: ExecutionMode::LossOnly,
            loss_weights: LossWeights::new(if with_fb { 1.0 } else { 0.0 }, 1.0).unwrap(),
            ..TrainConfig::default()
        };
        let r = train::run_experiment(&config, 3, train_set, test_set, ExecMode::Parallel).unwrap();
        (r.mean, r.runs.iter().map(|run| run.test.accuracy).collect())
    })
    .clone()
}

fn pct(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{:.1}", 100.0 * x)).collect::<Vec<_>>().join("/")
}

#[test]
fn criterion_09_fb_loss_improves_accuracy() {
    let start = Instant::now();
    let (fb, fb_runs) = desk_run(4, 1, true);
    let (base, base_runs) = desk_run(4, 1, false);
    let elapsed = start.elapsed();
    let gain = fb - base;
    let passed = gain >= 0.02 && elapsed <= Duration::from_secs(1800);
    let detail = format!(
        "with L_fb {:.2}% ({}), baseline {:.2}% ({}), gain {:+.2} points (need ≥ +2)",
        100.0 * fb,
        pct(&fb_runs),
        100.0 * base,
        pct(&base_runs),
        100.0 * gain
    );
    report(9, "L_fb vs baseline", passed, &detail, elapsed);
}

#[test]
fn criterion_10_smaller_step_size_not_worse() {
    let start = Instant::now();
    let (k1, k1_runs) = desk_run(4, 1, true);
    let (k4, k4_runs) = desk_run(4, 4, true);
    let detail = format!("k=1 {:.2}% ({}), k=4 {:.2}% ({})", 100.0 * k1, pct(&k1_runs), 100.0 * k4, pct(&k4_runs));
    report(10, "step-size trend", k1 >= k4, &detail, start.elapsed());
}

#[test]
fn criterion_11_mitigation_softens_depth_drop() {
    let start = Instant::now();
    let (fb2, _) = desk_run(2, 1, true);
    let (fb8, _) = desk_run(8, 1, true);
    let (base2, _) = desk_run(2, 1, false);
    let (base8, _) = desk_run(8, 1, false);
    let (drop_fb, drop_base) = (fb2 - fb8, base2 - base8);
    let mut detail = format!(
        "with L_fb {:.2}% → {:.2}% (drop {:+.2}), baseline {:.2}% → {:.2}% (drop {:+.2})",
        100.0 * fb2,
        100.0 * fb8,
        100.0 * drop_fb,
        100.0 * base2,
        100.0 * base8,
        100.0 * drop_base
    );
    if drop_base <= 0.0 {
        detail.push_str("; note: the baseline does not lose accuracy with depth here");
    }
    report(11, "layer robustness", drop_fb < drop_base, &detail, start.elapsed());
}

#[test]
fn criterion_12_metrics_are_byte_identical() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist5k");
    let config = serde_json::json!({
        "data": {
            "source": "idx",
            "images": data_dir.join("images-idx3-ubyte"),
            "labels": data_dir.join("labels-idx1-ubyte"),
            "train_cap": 200,
            "test_cap": 100,
        },
        "train": {"epochs": 3, "seed": 5},
        "repeats": 2,
    });
    let config_path = dir.path().join("config.json");
    std::fs::write(&config_path, config.to_string()).unwrap();
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["qmit".to_string(), "train".into(), "--config".into(), config_path.display().to_string()];
        args.extend(["--out".to_string(), out.display().to_string()]);
        args.extend(extra.iter().map(|s| s.to_string()));
        let code = qmit::cli::main_with_args(args, &mut std::io::sink(), &mut std::io::sink());
        assert_eq!(code, 0, "train command failed");
        std::fs::read(out.join("metrics.csv")).unwrap()
    };
    let (a, b, c) = (run("a", &[]), run("b", &[]), run("c", &["--sequential"]));
    let passed = a == b && a == c;
    let detail = format!("{} bytes; repeat identical {}, sequential identical {}", a.len(), a == b, a == c);
    report(12, "determinism", passed, &detail, start.elapsed());
}
