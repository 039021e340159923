//! Reverse-mode differentiation of the per-sample training loss.
//!
//! A forward pass records every matrix-valued intermediate on a tape; the
//! backward pass walks it in reverse, carrying Hermitian adjoints `G` with
//! `dL = Re Tr(G dX)`. Every tape operation is linear in its input, and the
//! channels are self-adjoint under this pairing.

use crate::linalg::{self, CMat};
use crate::losses::{self, LossWeights};
use crate::noise::{self, NoiseModel, PauliString};
use crate::pqc::{self, ExecutionMode, LayerOp};

/// Everything needed to evaluate one sample, with mitigation rates as raw
/// slices so finite differences may step below zero.
pub(crate) struct Problem<'a> {
    pub n: usize,
    pub ops: Vec<LayerOp>,
    pub noise: &'a [NoiseModel],
    pub mit_paulis: Vec<PauliString>,
    pub mit_rates: &'a [Vec<f64>],
    pub mode: ExecutionMode,
    pub step: usize,
    pub weights: LossWeights,
    pub classes: usize,
}

/// Loss terms of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleLoss {
    pub total: f64,
    pub fb: f64,
    pub task: f64,
    pub z: Vec<f64>,
    pub fb_capped: bool,
    pub clamped_mass: f64,
}

/// Gradient of a loss with respect to `θ` (per layer, qubit-major) and `λ̂`
/// (per layer, generator order).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub theta: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(theta: &[Vec<f64>], lambda: &[Vec<f64>]) -> Self {
        Self {
            theta: theta.iter().map(|r| vec![0.0; r.len()]).collect(),
            lambda: lambda.iter().map(|r| vec![0.0; r.len()]).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, s: f64) {
        for (a, b) in self.theta.iter_mut().zip(&other.theta).chain(self.lambda.iter_mut().zip(&other.lambda)) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().chain(&self.lambda).flatten().all(|x| x.is_finite())
    }
}

enum Op {
    Leaf,
    Layer { input: usize, layer: usize },
    LayerAdjoint { input: usize, layer: usize },
    Noise { input: usize, layer: usize },
    Mitigate { input: usize, layer: usize },
}

struct Tape {
    ops: Vec<Op>,
    values: Vec<CMat>,
}

impl Tape {
    fn push(&mut self, op: Op, value: CMat) -> usize {
        self.ops.push(op);
        self.values.push(value);
        self.values.len() - 1
    }
}

impl Problem<'_> {
    fn mitigate(&self, layer: usize, x: &CMat) -> CMat {
        self.mit_paulis
            .iter()
            .zip(&self.mit_rates[layer])
            .fold(x.clone(), |acc, (p, &r)| noise::inverse_factor(&acc, p, r))
    }

    fn num_layers(&self) -> usize {
        self.ops.len()
    }

    /// Loss of one encoded sample and, when asked, its gradient.
    pub fn evaluate(&self, rho0: &CMat, label: usize, want_grad: bool) -> (SampleLoss, Option<Gradients>) {
        let layers = self.num_layers();
        let mut tape = Tape { ops: Vec::new(), values: Vec::new() };
        let leaf = tape.push(Op::Leaf, rho0.clone());

        let mut chain = Vec::with_capacity(layers + 1);
        let mut mitigated = 0;
        let mut x = leaf;
        chain.push(x);
        for i in 0..layers {
            let a = tape.push(Op::Layer { input: x, layer: i }, self.ops[i].conjugate(&tape.values[x]));
            let b = tape.push(Op::Noise { input: a, layer: i }, self.noise[i].apply_raw(&tape.values[a]));
            let m = tape.push(Op::Mitigate { input: b, layer: i }, self.mitigate(i, &tape.values[b]));
            x = match self.mode {
                ExecutionMode::LossOnly => b,
                ExecutionMode::Cascaded => m,
            };
            chain.push(x);
            mitigated = m;
        }

        // blocks are always evaluated so the loss is reported even when it
        // carries no weight
        let mut pairs = Vec::new();
        for s in (0..layers).step_by(self.step) {
            let mut y = chain[s];
            for j in s..s + self.step {
                y = tape.push(Op::Layer { input: y, layer: j }, self.ops[j].conjugate(&tape.values[y]));
                y = tape.push(Op::Noise { input: y, layer: j }, self.noise[j].apply_raw(&tape.values[y]));
            }
            for j in (s..s + self.step).rev() {
                y = tape.push(Op::Mitigate { input: y, layer: j }, self.mitigate(j, &tape.values[y]));
                y = tape.push(Op::LayerAdjoint { input: y, layer: j }, self.ops[j].conjugate_adjoint(&tape.values[y]));
            }
            pairs.push((chain[s], y));
        }

        let z = pqc::readout_raw(&tape.values[mitigated], self.n);
        let probs = losses::softmax(&z, self.classes).expect("class count checked at setup");
        let task = losses::task_loss(&z, label, self.classes).expect("label checked at setup");

        let mut adjoint: Vec<Option<CMat>> = vec![None; tape.values.len()];
        let mut fb = 0.0;
        let mut capped = false;
        let mut mass = 0.0;
        let blocks = pairs.len().max(1) as f64;
        for &(r, y) in &pairs {
            let (cr, cy) = (losses::clamp(&tape.values[r]), losses::clamp(&tape.values[y]));
            mass += cr.mass + cy.mass;
            let fb_grad = want_grad && self.weights.alpha_fb > 0.0;
            let rf = losses::root_fidelity(&cr.value, &cy.value, fb_grad && r != leaf, fb_grad);
            let (value, cap) = losses::fb_from_root(rf.root);
            fb += value;
            capped |= cap;
            if fb_grad && !cap && value > 0.0 {
                let coef = -2.0 / rf.root * self.weights.alpha_fb / blocks;
                if let Some(g) = rf.grad_rho {
                    accumulate(&mut adjoint[r], cr.backward(&g.scale(coef)));
                }
                accumulate(&mut adjoint[y], cy.backward(&rf.grad_sigma.expect("requested").scale(coef)));
            }
        }
        fb /= blocks;
        let total = losses::total_loss(fb, task, &self.weights);
        let loss = SampleLoss { total, fb, task, z, fb_capped: capped, clamped_mass: mass };
        if !want_grad {
            return (loss, None);
        }

        if self.weights.alpha_task > 0.0 {
            let d = 1usize << self.n;
            let mut diag = vec![0.0; d];
            for (j, p) in probs.iter().enumerate() {
                let coef = self.weights.alpha_task * (p - if j == label { 1.0 } else { 0.0 });
                for (k, v) in diag.iter_mut().enumerate() {
                    *v += if (k >> (self.n - 1 - j)) & 1 == 0 { coef } else { -coef };
                }
            }
            let g = CMat::from_fn(d, d, |a, b| if a == b { linalg::c(diag[a], 0.0) } else { linalg::ZERO });
            accumulate(&mut adjoint[mitigated], g);
        }

        let mut grads = Gradients {
            theta: self.ops.iter().map(|op| vec![0.0; op.generators.len()]).collect(),
            lambda: self.mit_rates.iter().map(|r| vec![0.0; r.len()]).collect(),
        };
        for node in (0..tape.ops.len()).rev() {
            let Some(g) = adjoint[node].take() else { continue };
            let y = &tape.values[node];
            match tape.ops[node] {
                Op::Leaf => {}
                Op::Layer { input, layer } => {
                    let op = &self.ops[layer];
                    let m = op.ring_backward(&(y * &g));
                    add_into(&mut grads.theta[layer], &op.parameter_traces(&m));
                    accumulate(&mut adjoint[input], op.conjugate_adjoint(&g));
                }
                Op::LayerAdjoint { input, layer } => {
                    let op = &self.ops[layer];
                    let m = op.rot_conjugate(&(&g * y));
                    add_into(&mut grads.theta[layer], &op.parameter_traces(&m));
                    accumulate(&mut adjoint[input], op.conjugate(&g));
                }
                Op::Noise { input, layer } => {
                    accumulate(&mut adjoint[input], self.noise[layer].apply_raw(&g));
                }
                Op::Mitigate { input, layer } => {
                    // ∂Λ̂^{-1}/∂λ_σ maps X to Y − σYσ with Y = Λ̂^{-1}(X)
                    for (p, dl) in self.mit_paulis.iter().zip(grads.lambda[layer].iter_mut()) {
                        *dl += linalg::re_trace_product(&g, &(y - p.conjugate(y)));
                    }
                    accumulate(&mut adjoint[input], self.mitigate(layer, &g));
                }
            }
        }
        (loss, Some(grads))
    }
}

fn accumulate(slot: &mut Option<CMat>, g: CMat) {
    match slot {
        Some(acc) => *acc += g,
        None => *slot = Some(g),
    }
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}
