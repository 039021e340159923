//! Parameterized circuits: encoder, rotation + CNOT-ring layers, and the
//! noise-free, noisy and mitigated forward passes.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{validation, Result};
use crate::linalg::{self, CMat, ONE};
use crate::noise::{MitigationModel, NoiseModel};
use crate::qsim::{self, Axis, DensityMatrix, Observable, Unitary, MAX_QUBITS};

/// Number of classical features fed to the encoder (an 8×8 image).
pub const FEATURES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Design {
    RX,
    U2,
    U3,
}

impl Design {
    pub const ALL: [Design; 3] = [Design::RX, Design::U2, Design::U3];

    /// Rotation axes per qubit, in application order.
    pub fn axes(self) -> &'static [Axis] {
        match self {
            Design::RX => &[Axis::X],
            Design::U2 => &[Axis::X, Axis::Y],
            Design::U3 => &[Axis::X, Axis::Y, Axis::Z],
        }
    }

    pub fn params_per_qubit(self) -> usize {
        self.axes().len()
    }

    pub fn name(self) -> &'static str {
        match self {
            Design::RX => "RX",
            Design::U2 => "U2",
            Design::U3 => "U3",
        }
    }
}

/// Execution regime for the mitigated forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionMode {
    /// The noisy chain propagates unmitigated; `ρ̂_i = Λ̂_i^{-1}(ρ̃_i)` feeds
    /// the losses and the readout uses `ρ̂_L`.
    LossOnly,
    /// Every layer consumes the previous mitigated state.
    Cascaded,
}

/// One parameterized layer: per-qubit rotations followed by a CNOT ring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub design: Design,
    /// `theta[q][a]` is the angle of the `a`-th axis of `design` on qubit `q`.
    pub theta: Vec<Vec<f64>>,
}

impl LayerSpec {
    pub fn new(design: Design, theta: Vec<Vec<f64>>) -> Result<Self> {
        let layer = Self { design, theta };
        layer.validate()?;
        Ok(layer)
    }

    pub fn zeros(design: Design, n: usize) -> Self {
        Self { design, theta: vec![vec![0.0; design.params_per_qubit()]; n] }
    }

    pub fn n(&self) -> usize {
        self.theta.len()
    }

    pub fn num_params(&self) -> usize {
        self.n() * self.design.params_per_qubit()
    }

    fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 || n > MAX_QUBITS {
            return validation(format!("layer acts on {n} qubits"));
        }
        let per = self.design.params_per_qubit();
        for (q, row) in self.theta.iter().enumerate() {
            if row.len() != per {
                return validation(format!(
                    "{} layer expects {per} angles on qubit {q}, got {}",
                    self.design.name(),
                    row.len()
                ));
            }
            if row.iter().any(|t| !t.is_finite()) {
                return validation(format!("non-finite angle on qubit {q}"));
            }
        }
        Ok(())
    }

    /// Flat parameter vector, qubit-major.
    pub fn flat(&self) -> Vec<f64> {
        self.theta.iter().flatten().copied().collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        let per = self.design.params_per_qubit();
        for (q, row) in self.theta.iter_mut().enumerate() {
            row.copy_from_slice(&values[q * per..(q + 1) * per]);
        }
    }
}

/// Phase encoder: `ceil(64/n)` sub-layers of single-qubit rotations by
/// `π·x`, sub-layer `t` using axis `axes[t mod len]` and feature `t·n + j`
/// on qubit `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderSpec {
    pub n: usize,
    pub axes: Vec<Axis>,
}

impl EncoderSpec {
    pub fn new(n: usize, axes: Vec<Axis>) -> Result<Self> {
        if n == 0 || n > MAX_QUBITS {
            return validation(format!("encoder qubit count {n} outside 1..={MAX_QUBITS}"));
        }
        if axes.is_empty() {
            return validation("encoder axis cycle is empty");
        }
        Ok(Self { n, axes })
    }

    pub fn standard(n: usize) -> Result<Self> {
        Self::new(n, Axis::ALL.to_vec())
    }

    pub fn sublayers(&self) -> usize {
        FEATURES.div_ceil(self.n)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EncoderJson {
    axes: String,
}

/// Encoder, layers and the `σ_z` observables on every qubit.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitSpec {
    n: usize,
    encoder: EncoderSpec,
    layers: Vec<LayerSpec>,
    observables: Vec<Observable>,
}

impl CircuitSpec {
    pub fn new(n: usize, encoder: EncoderSpec, layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return validation("circuit needs at least one layer");
        }
        if encoder.n != n {
            return validation("encoder and circuit qubit counts differ");
        }
        for (i, layer) in layers.iter().enumerate() {
            layer.validate()?;
            if layer.n() != n {
                return validation(format!("layer {i} acts on {} qubits, circuit has {n}", layer.n()));
            }
        }
        let observables = (0..n).map(|q| Observable::pauli_z(q, n)).collect::<Result<_>>()?;
        Ok(Self { n, encoder, layers, observables })
    }

    /// `layers` layers of `design`, angles all zero.
    pub fn uniform(n: usize, design: Design, layers: usize) -> Result<Self> {
        Self::new(n, EncoderSpec::standard(n)?, (0..layers).map(|_| LayerSpec::zeros(design, n)).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn encoder(&self) -> &EncoderSpec {
        &self.encoder
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn observables(&self) -> &[Observable] {
        &self.observables
    }

    pub fn params(&self) -> Vec<Vec<f64>> {
        self.layers.iter().map(LayerSpec::flat).collect()
    }

    pub fn set_params(&mut self, params: &[Vec<f64>]) -> Result<()> {
        if params.len() != self.layers.len() {
            return validation("parameter table has the wrong number of layers");
        }
        for (layer, p) in self.layers.iter_mut().zip(params) {
            if p.len() != layer.num_params() {
                return validation("parameter row has the wrong length");
            }
            if p.iter().any(|x| !x.is_finite()) {
                return validation("non-finite circuit parameter");
            }
            layer.set_flat(p);
        }
        Ok(())
    }

    pub(crate) fn layer_ops(&self) -> Vec<LayerOp> {
        self.layers.iter().map(LayerOp::new).collect()
    }

    #[cfg(test)]
    pub(crate) fn unitaries(&self) -> Vec<CMat> {
        self.layer_ops().iter().map(LayerOp::matrix).collect()
    }
}

impl Serialize for CircuitSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Out<'a> {
            n: usize,
            layers: &'a [LayerSpec],
            encoder: EncoderJson,
        }
        let axes = self
            .encoder
            .axes
            .iter()
            .map(|a| match a {
                Axis::X => 'X',
                Axis::Y => 'Y',
                Axis::Z => 'Z',
            })
            .collect();
        Out { n: self.n, layers: &self.layers, encoder: EncoderJson { axes } }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for CircuitSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct In {
            n: usize,
            layers: Vec<LayerSpec>,
            encoder: EncoderJson,
        }
        let raw = In::deserialize(d)?;
        let axes = raw
            .encoder
            .axes
            .chars()
            .map(|ch| match ch {
                'X' => Ok(Axis::X),
                'Y' => Ok(Axis::Y),
                'Z' => Ok(Axis::Z),
                other => Err(D::Error::custom(format!("invalid encoder axis {other:?}"))),
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let encoder = EncoderSpec::new(raw.n, axes).map_err(D::Error::custom)?;
        CircuitSpec::new(raw.n, encoder, raw.layers).map_err(D::Error::custom)
    }
}

type Gate = [Complex64; 4];

fn gate_of(m: &CMat) -> Gate {
    [m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]]
}

fn gate_dagger(g: &Gate) -> Gate {
    [g[0].conj(), g[2].conj(), g[1].conj(), g[3].conj()]
}

/// Per-qubit rotation product `G_q`, first axis applied first.
fn qubit_rotation(design: Design, angles: &[f64]) -> CMat {
    design.axes().iter().zip(angles).fold(linalg::identity(2), |acc, (&axis, &t)| qsim::rotation_matrix(axis, t) * acc)
}

/// Basis permutation of the CNOT ring: CNOT(j, j+1 mod n) for ascending
/// `j`, identity for one qubit.
fn ring_permutation(n: usize) -> Vec<usize> {
    let bit = |q: usize| 1usize << (n - 1 - q);
    (0..1usize << n)
        .map(|mut i| {
            if n >= 2 {
                for j in 0..n {
                    if i & bit(j) != 0 {
                        i ^= bit((j + 1) % n);
                    }
                }
            }
            i
        })
        .collect()
}

/// A layer `U = ring · (⊗_q G_q)` kept in factored form.
///
/// Conjugations cost `O(n d²)`: the rotations act qubit by qubit and the
/// ring is a basis permutation.
#[derive(Debug, Clone)]
pub(crate) struct LayerOp {
    n: usize,
    gates: Vec<Gate>,
    gates_dagger: Vec<Gate>,
    perm: Vec<usize>,
    /// For each parameter, its qubit and `k = (∂G_q/∂θ) G_q†`.
    pub generators: Vec<(usize, Gate)>,
}

impl LayerOp {
    pub fn new(layer: &LayerSpec) -> Self {
        let n = layer.n();
        let axes = layer.design.axes();
        let mut gates = Vec::with_capacity(n);
        let mut generators = Vec::with_capacity(layer.num_params());
        for (q, angles) in layer.theta.iter().enumerate() {
            let g = qubit_rotation(layer.design, angles);
            for a in 0..axes.len() {
                // ∂G/∂θ_a = (later factors) · (−i/2 σ_a) R_a · (earlier factors)
                let mut dg = linalg::identity(2);
                for (b, (&axis, &t)) in axes.iter().zip(angles).enumerate() {
                    let r = qsim::rotation_matrix(axis, t);
                    dg = if a == b { qsim::pauli_matrix(axis) * r * Complex64::new(0.0, -0.5) * dg } else { r * dg };
                }
                generators.push((q, gate_of(&(dg * g.adjoint()))));
            }
            gates.push(gate_of(&g));
        }
        let gates_dagger = gates.iter().map(gate_dagger).collect();
        Self { n, gates, gates_dagger, perm: ring_permutation(n), generators }
    }

    fn mask(&self, q: usize) -> usize {
        1 << (self.n - 1 - q)
    }

    /// `(⊗ g_q) X`.
    fn left(&self, x: &mut CMat, gates: &[Gate]) {
        let d = x.nrows();
        for (q, g) in gates.iter().enumerate() {
            let m = self.mask(q);
            for i0 in (0..d).filter(|i| i & m == 0) {
                let i1 = i0 | m;
                for c in 0..d {
                    let (a, b) = (x[(i0, c)], x[(i1, c)]);
                    x[(i0, c)] = g[0] * a + g[1] * b;
                    x[(i1, c)] = g[2] * a + g[3] * b;
                }
            }
        }
    }

    /// `X (⊗ g_q)†`.
    fn right_dagger(&self, x: &mut CMat, gates: &[Gate]) {
        let d = x.nrows();
        for (q, g) in gates.iter().enumerate() {
            let m = self.mask(q);
            for j0 in (0..d).filter(|j| j & m == 0) {
                let j1 = j0 | m;
                for r in 0..d {
                    let (a, b) = (x[(r, j0)], x[(r, j1)]);
                    x[(r, j0)] = a * g[0].conj() + b * g[1].conj();
                    x[(r, j1)] = a * g[2].conj() + b * g[3].conj();
                }
            }
        }
    }

    /// `ring X ring†`.
    fn ring_forward(&self, x: &CMat) -> CMat {
        let d = x.nrows();
        let mut out = CMat::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                out[(self.perm[i], self.perm[j])] = x[(i, j)];
            }
        }
        out
    }

    /// `ring† X ring`.
    pub fn ring_backward(&self, x: &CMat) -> CMat {
        let d = x.nrows();
        CMat::from_fn(d, d, |i, j| x[(self.perm[i], self.perm[j])])
    }

    /// `R X R†` with `R = ⊗ G_q`.
    pub fn rot_conjugate(&self, x: &CMat) -> CMat {
        let mut y = x.clone();
        self.left(&mut y, &self.gates);
        self.right_dagger(&mut y, &self.gates);
        y
    }

    /// `U X U†`.
    pub fn conjugate(&self, x: &CMat) -> CMat {
        self.ring_forward(&self.rot_conjugate(x))
    }

    /// `U† X U`.
    pub fn conjugate_adjoint(&self, x: &CMat) -> CMat {
        let mut y = self.ring_backward(x);
        self.left(&mut y, &self.gates_dagger);
        self.right_dagger(&mut y, &self.gates_dagger);
        y
    }

    pub fn matrix(&self) -> CMat {
        let d = 1 << self.n;
        let mut r = linalg::identity(d);
        self.left(&mut r, &self.gates);
        let mut u = CMat::zeros(d, d);
        for i in 0..d {
            u.set_row(self.perm[i], &r.row(i));
        }
        u
    }

    /// `Re Tr(M · embed_q(k))` for every parameter, scaled by 2.
    pub fn parameter_traces(&self, m: &CMat) -> Vec<f64> {
        let d = m.nrows();
        let partial: Vec<Gate> = (0..self.n)
            .map(|q| {
                let mask = self.mask(q);
                let mut p = [Complex64::new(0.0, 0.0); 4];
                for i0 in (0..d).filter(|i| i & mask == 0) {
                    let i1 = i0 | mask;
                    p[0] += m[(i0, i0)];
                    p[1] += m[(i0, i1)];
                    p[2] += m[(i1, i0)];
                    p[3] += m[(i1, i1)];
                }
                p
            })
            .collect();
        self.generators
            .iter()
            .map(|(q, k)| {
                let p = &partial[*q];
                // Tr(P k) with P[a][b] summed over matching spectator indices
                2.0 * (p[0] * k[0] + p[1] * k[2] + p[2] * k[1] + p[3] * k[3]).re
            })
            .collect()
    }
}

/// CNOT(j, j+1 mod n) for ascending `j` as a dense matrix.
#[cfg(test)]
pub(crate) fn cnot_ring(n: usize) -> CMat {
    let mut ring = linalg::identity(1 << n);
    if n < 2 {
        return ring;
    }
    for j in 0..n {
        let gate = qsim::cnot_gate(j, (j + 1) % n, n).expect("ring indices are in range");
        ring = gate.data() * ring;
    }
    ring
}

pub fn build_layer_unitary(layer: &LayerSpec) -> Result<Unitary> {
    layer.validate()?;
    Ok(Unitary::from_raw(layer.n(), LayerOp::new(layer).matrix()))
}

/// Encodes 64 features in `[0, 1]` into a pure product state.
pub fn encode(features: &[f64], spec: &EncoderSpec) -> Result<DensityMatrix> {
    if features.len() != FEATURES {
        return validation(format!("expected {FEATURES} features, got {}", features.len()));
    }
    if let Some((i, x)) = features.iter().enumerate().find(|(_, x)| !(0.0..=1.0).contains(*x)) {
        return validation(format!("feature {i} = {x} outside [0, 1]"));
    }
    let n = spec.n;
    // no entanglers in the encoder: the state stays a product of qubit states
    let mut qubits = vec![linalg::identity(2); n];
    for t in 0..spec.sublayers() {
        let axis = spec.axes[t % spec.axes.len()];
        for (j, g) in qubits.iter_mut().enumerate() {
            if let Some(&x) = features.get(t * n + j) {
                *g = qsim::rotation_matrix(axis, PI * x) * &*g;
            }
        }
    }
    let mut ket = vec![ONE];
    for g in &qubits {
        let (a, b) = (g[(0, 0)], g[(1, 0)]);
        ket = ket.iter().flat_map(|&z| [z * a, z * b]).collect();
    }
    let d = ket.len();
    let data = CMat::from_fn(d, d, |j, k| ket[j] * ket[k].conj());
    Ok(DensityMatrix::from_raw(n, data))
}

fn check_circuit_state(rho0: &DensityMatrix, circuit: &CircuitSpec) -> Result<()> {
    if rho0.n() != circuit.n {
        return validation(format!("state has {} qubits, circuit has {}", rho0.n(), circuit.n));
    }
    Ok(())
}

fn check_models(models: &[NoiseModel], circuit: &CircuitSpec, what: &str) -> Result<()> {
    if models.len() != circuit.num_layers() {
        return validation(format!("{} {what} models for {} layers", models.len(), circuit.num_layers()));
    }
    if let Some(m) = models.iter().find(|m| m.n() != circuit.n) {
        return validation(format!("{what} model acts on {} qubits, circuit has {}", m.n(), circuit.n));
    }
    Ok(())
}

/// `ρ_i = V_i ρ_{i−1} V_i†` for `i = 1..L`.
pub fn forward_noise_free(rho0: &DensityMatrix, circuit: &CircuitSpec) -> Result<Vec<DensityMatrix>> {
    check_circuit_state(rho0, circuit)?;
    let mut x = rho0.data().clone();
    Ok(circuit
        .layer_ops()
        .iter()
        .map(|op| {
            x = op.conjugate(&x);
            DensityMatrix::from_raw(circuit.n, x.clone())
        })
        .collect())
}

/// `ρ̃_i = Λ_i(V_i ρ̃_{i−1} V_i†)`.
pub fn forward_noisy(rho0: &DensityMatrix, circuit: &CircuitSpec, noise: &[NoiseModel]) -> Result<Vec<DensityMatrix>> {
    check_circuit_state(rho0, circuit)?;
    check_models(noise, circuit, "noise")?;
    let mut x = rho0.data().clone();
    Ok(circuit
        .layer_ops()
        .iter()
        .zip(noise)
        .map(|(op, model)| {
            x = model.apply_raw(&op.conjugate(&x));
            DensityMatrix::from_raw(circuit.n, x.clone())
        })
        .collect())
}

/// Noisy states and their mitigated counterparts, one per layer.
#[derive(Debug, Clone)]
pub struct MitigatedForward {
    /// Post-noise states before mitigation.
    pub noisy: Vec<DensityMatrix>,
    /// `ρ̂_i`; possibly quasi-states.
    pub mitigated: Vec<DensityMatrix>,
}

impl MitigatedForward {
    /// The state the readout measures.
    pub fn output(&self) -> &DensityMatrix {
        self.mitigated.last().expect("circuits have at least one layer")
    }
}

pub fn forward_mitigated(
    rho0: &DensityMatrix,
    circuit: &CircuitSpec,
    noise: &[NoiseModel],
    mitigation: &MitigationModel,
    mode: ExecutionMode,
) -> Result<MitigatedForward> {
    check_circuit_state(rho0, circuit)?;
    check_models(noise, circuit, "noise")?;
    check_models(mitigation.layers(), circuit, "mitigation")?;
    let mut x = rho0.data().clone();
    let mut noisy = Vec::with_capacity(circuit.num_layers());
    let mut mitigated = Vec::with_capacity(circuit.num_layers());
    for ((op, model), inv) in circuit.layer_ops().iter().zip(noise).zip(mitigation.layers()) {
        let n_i = model.apply_raw(&op.conjugate(&x));
        let m_i = inv.apply_inverse_raw(&n_i);
        x = match mode {
            ExecutionMode::LossOnly => n_i.clone(),
            ExecutionMode::Cascaded => m_i.clone(),
        };
        noisy.push(DensityMatrix::from_raw(circuit.n, n_i));
        mitigated.push(DensityMatrix::from_raw(circuit.n, m_i));
    }
    Ok(MitigatedForward { noisy, mitigated })
}

/// Reference and pulled-back states of every forward-backward block of `k`
/// layers.
///
/// Block `b` starts from the state entering layer `s = b·k` (the noisy chain
/// in loss-only mode, the cascaded mitigated chain otherwise), forwards it
/// through `k` noisy layers, then walks back with `ρ ↦ V_j† Λ̂_j^{-1}(ρ)` for
/// `j = s+k, …, s+1`.
pub fn forward_backward_pairs(
    rho0: &DensityMatrix,
    circuit: &CircuitSpec,
    noise: &[NoiseModel],
    mitigation: &MitigationModel,
    mode: ExecutionMode,
    step: usize,
) -> Result<Vec<(DensityMatrix, DensityMatrix)>> {
    let layers = circuit.num_layers();
    if step == 0 || !layers.is_multiple_of(step) {
        return validation(format!("step size {step} does not divide {layers} layers"));
    }
    let fwd = forward_mitigated(rho0, circuit, noise, mitigation, mode)?;
    let ops = circuit.layer_ops();
    let mut pairs = Vec::with_capacity(layers / step);
    for s in (0..layers).step_by(step) {
        let reference = if s == 0 {
            rho0.data().clone()
        } else {
            match mode {
                ExecutionMode::LossOnly => fwd.noisy[s - 1].data().clone(),
                ExecutionMode::Cascaded => fwd.mitigated[s - 1].data().clone(),
            }
        };
        let mut y = reference.clone();
        for j in s..s + step {
            y = noise[j].apply_raw(&ops[j].conjugate(&y));
        }
        for j in (s..s + step).rev() {
            y = ops[j].conjugate_adjoint(&mitigation.layers()[j].apply_inverse_raw(&y));
        }
        pairs.push((DensityMatrix::from_raw(circuit.n, reference), DensityMatrix::from_raw(circuit.n, y)));
    }
    Ok(pairs)
}

/// `z_q = ⟨σ_z^{(q)}⟩` read straight off the diagonal.
pub(crate) fn readout_raw(x: &CMat, n: usize) -> Vec<f64> {
    let mut z = vec![0.0; n];
    for k in 0..x.nrows() {
        let p = x[(k, k)].re;
        for (q, zq) in z.iter_mut().enumerate() {
            if qsim::bit(k, q, n) == 0 {
                *zq += p;
            } else {
                *zq -= p;
            }
        }
    }
    z
}

/// Classical vector `z = (Tr(H_q ρ))_q` with `H_q = σ_z` on qubit `q`.
pub fn readout(rho: &DensityMatrix, circuit: &CircuitSpec) -> Result<Vec<f64>> {
    check_circuit_state(rho, circuit)?;
    Ok(readout_raw(rho.data(), circuit.n))
}
