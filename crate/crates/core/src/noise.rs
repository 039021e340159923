//! Pauli-Lindblad noise channels and their quasi-probability inverses.
//!
//! A model holds Pauli generators `σ` with rates `λ_σ ≥ 0`. The product-form
//! channel applies `ρ ↦ w ρ + (1−w) σρσ` per generator with
//! `w = (1 + e^{−2λ})/2`; the inverse applies
//! `ρ ↦ (2w−1)^{−1} (w ρ − (1−w) σρσ)`. Both walk the generator list in
//! stored order. Single-Pauli conjugation channels commute, so the order
//! never changes the result beyond round-off.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{validation, Error, Result};
use crate::linalg::{self, c, CMat};
use crate::qsim::{self, Axis, DensityMatrix, MAX_QUBITS};

/// Range of the seeded synthetic per-generator noise rates.
pub const TRUE_RATE_RANGE: (f64, f64) = (0.002, 0.02);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    fn symbol(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }
}

impl From<Axis> for Pauli {
    fn from(axis: Axis) -> Self {
        match axis {
            Axis::X => Pauli::X,
            Axis::Y => Pauli::Y,
            Axis::Z => Pauli::Z,
        }
    }
}

/// Tensor product of single-qubit Paulis, qubit 0 first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PauliString {
    letters: Vec<Pauli>,
    // bits flipped by the string
    xmask: usize,
    // bits picking up a sign under conjugation (Y or Z)
    zmask: usize,
}

impl PauliString {
    pub fn new(letters: Vec<Pauli>) -> Result<Self> {
        let n = letters.len();
        if n == 0 || n > MAX_QUBITS {
            return validation(format!("Pauli string length {n} outside 1..={MAX_QUBITS}"));
        }
        let mut xmask = 0;
        let mut zmask = 0;
        for (q, p) in letters.iter().enumerate() {
            let b = 1 << (n - 1 - q);
            match p {
                Pauli::I => {}
                Pauli::X => xmask |= b,
                Pauli::Y => {
                    xmask |= b;
                    zmask |= b;
                }
                Pauli::Z => zmask |= b,
            }
        }
        Ok(Self { letters, xmask, zmask })
    }

    /// Single-qubit Pauli `axis` on qubit `q`.
    pub fn single(axis: Axis, q: usize, n: usize) -> Result<Self> {
        if q >= n {
            return validation(format!("qubit {q} out of range for {n} qubits"));
        }
        let mut letters = vec![Pauli::I; n];
        letters[q] = axis.into();
        Self::new(letters)
    }

    pub fn n(&self) -> usize {
        self.letters.len()
    }

    pub fn letters(&self) -> &[Pauli] {
        &self.letters
    }

    pub fn is_identity(&self) -> bool {
        self.xmask == 0 && self.zmask == 0
    }

    pub fn matrix(&self) -> CMat {
        self.letters.iter().fold(CMat::identity(1, 1), |acc, p| {
            let m = match p {
                Pauli::I => linalg::identity(2),
                Pauli::X => qsim::pauli_matrix(Axis::X),
                Pauli::Y => qsim::pauli_matrix(Axis::Y),
                Pauli::Z => qsim::pauli_matrix(Axis::Z),
            };
            linalg::kron(&acc, &m)
        })
    }

    /// `σ X σ†` in O(d²): the string permutes basis states and the phases
    /// reduce to real signs `(−1)^{|k ∧ zmask|}`.
    pub fn conjugate(&self, x: &CMat) -> CMat {
        let d = x.nrows();
        let sign = |k: usize| if (k & self.zmask).count_ones().is_multiple_of(2) { 1.0 } else { -1.0 };
        CMat::from_fn(d, d, |j, k| {
            let (jj, kk) = (j ^ self.xmask, k ^ self.xmask);
            x[(jj, kk)] * (sign(jj) * sign(kk))
        })
    }

    /// True when `σ` and `other` commute as operators.
    pub fn commutes_with(&self, other: &PauliString) -> bool {
        let anti = (self.xmask & other.zmask).count_ones() + (self.zmask & other.xmask).count_ones();
        anti.is_multiple_of(2)
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.letters {
            write!(f, "{}", p.symbol())?;
        }
        Ok(())
    }
}

impl FromStr for PauliString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let letters = s
            .chars()
            .map(|ch| match ch {
                'I' => Ok(Pauli::I),
                'X' => Ok(Pauli::X),
                'Y' => Ok(Pauli::Y),
                'Z' => Ok(Pauli::Z),
                other => validation(format!("invalid Pauli letter {other:?} in {s:?}")),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(letters)
    }
}

/// `w_σ = (1 + e^{−2λ})/2`.
pub fn weight(rate: f64) -> f64 {
    0.5 * (1.0 + (-2.0 * rate).exp())
}

/// One factor `w X + (1−w) σXσ`.
pub(crate) fn channel_factor(x: &CMat, pauli: &PauliString, rate: f64) -> CMat {
    let w = weight(rate);
    x.scale(w) + pauli.conjugate(x).scale(1.0 - w)
}

/// Coefficients `(a, b)` of one inverse factor `a X − b σXσ`, equal to
/// `w/(2w−1)` and `(1−w)/(2w−1)`.
pub(crate) fn inverse_coefficients(rate: f64) -> (f64, f64) {
    let g = (2.0 * rate).exp();
    (0.5 * (g + 1.0), 0.5 * (g - 1.0))
}

pub(crate) fn inverse_factor(x: &CMat, pauli: &PauliString, rate: f64) -> CMat {
    let (a, b) = inverse_coefficients(rate);
    x.scale(a) - pauli.conjugate(x).scale(b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub pauli: PauliString,
    pub rate: f64,
}

/// A Pauli-Lindblad noise model on `n` qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    n: usize,
    generators: Vec<Generator>,
}

impl NoiseModel {
    pub fn new(n: usize, generators: Vec<Generator>) -> Result<Self> {
        if n == 0 || n > MAX_QUBITS {
            return validation(format!("qubit count {n} outside 1..={MAX_QUBITS}"));
        }
        for g in &generators {
            if g.pauli.n() != n {
                return validation(format!("generator {} does not act on {n} qubits", g.pauli));
            }
            if g.pauli.is_identity() {
                return validation("identity is not a valid noise generator");
            }
            if !g.rate.is_finite() || g.rate < 0.0 {
                return validation(format!("rate {} for {} must be finite and ≥ 0", g.rate, g.pauli));
            }
        }
        Ok(Self { n, generators })
    }

    /// Default generator set with all rates zero.
    pub fn identity(n: usize) -> Result<Self> {
        Self::from_rates(n, &vec![0.0; 3 * n])
    }

    /// Default generators with the given rates, in generator order.
    pub fn from_rates(n: usize, rates: &[f64]) -> Result<Self> {
        let paulis = default_generators(n)?;
        if rates.len() != paulis.len() {
            return validation(format!("expected {} rates, got {}", paulis.len(), rates.len()));
        }
        let generators = paulis.into_iter().zip(rates).map(|(pauli, &rate)| Generator { pauli, rate }).collect();
        Self::new(n, generators)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn rates(&self) -> Vec<f64> {
        self.generators.iter().map(|g| g.rate).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.generators.iter().map(|g| weight(g.rate)).collect()
    }

    /// Same generators, new rates.
    pub fn with_rates(&self, rates: &[f64]) -> Result<Self> {
        if rates.len() != self.generators.len() {
            return validation(format!("expected {} rates, got {}", self.generators.len(), rates.len()));
        }
        let generators =
            self.generators.iter().zip(rates).map(|(g, &rate)| Generator { pauli: g.pauli.clone(), rate }).collect();
        Self::new(self.n, generators)
    }

    fn check_state(&self, rho: &DensityMatrix) -> Result<()> {
        if rho.n() != self.n {
            return validation(format!("state has {} qubits, noise model has {}", rho.n(), self.n));
        }
        Ok(())
    }

    pub(crate) fn apply_raw(&self, x: &CMat) -> CMat {
        self.generators.iter().fold(x.clone(), |acc, g| channel_factor(&acc, &g.pauli, g.rate))
    }

    pub(crate) fn apply_inverse_raw(&self, x: &CMat) -> CMat {
        self.generators.iter().fold(x.clone(), |acc, g| inverse_factor(&acc, &g.pauli, g.rate))
    }
}

/// Single-qubit X, Y, Z on every qubit, ordered by qubit then axis.
pub fn default_generators(n: usize) -> Result<Vec<PauliString>> {
    let mut out = Vec::with_capacity(3 * n);
    for q in 0..n {
        for axis in Axis::ALL {
            out.push(PauliString::single(axis, q, n)?);
        }
    }
    Ok(out)
}

/// `ρ + Σ λ_σ (σρσ† − ρ)`.
pub fn apply_linear_channel(rho: &DensityMatrix, model: &NoiseModel) -> Result<DensityMatrix> {
    model.check_state(rho)?;
    let x = rho.data();
    let mut out = x.clone();
    for g in &model.generators {
        out += (g.pauli.conjugate(x) - x).scale(g.rate);
    }
    Ok(DensityMatrix::from_raw(rho.n(), out))
}

/// Product-form channel `∏_σ (w_σ · + (1−w_σ) σ·σ†)`.
pub fn apply_channel(rho: &DensityMatrix, model: &NoiseModel) -> Result<DensityMatrix> {
    model.check_state(rho)?;
    Ok(DensityMatrix::from_raw(rho.n(), model.apply_raw(rho.data())))
}

/// Exact linear inverse of [`apply_channel`]. Trace preserving but not
/// completely positive: the result is a quasi-state.
pub fn apply_inverse_channel(rho: &DensityMatrix, model: &NoiseModel) -> Result<DensityMatrix> {
    model.check_state(rho)?;
    if let Some(g) = model.generators.iter().find(|g| !g.rate.is_finite()) {
        return validation(format!("rate for {} is not finite", g.pauli));
    }
    Ok(DensityMatrix::from_raw(rho.n(), model.apply_inverse_raw(rho.data())))
}

/// `γ = exp(2 Σ λ_σ)`.
pub fn sampling_overhead(model: &NoiseModel) -> f64 {
    (2.0 * model.generators.iter().map(|g| g.rate).sum::<f64>()).exp()
}

/// `γ = ∏ (2w_σ − 1)^{−1}`, the product form of [`sampling_overhead`].
pub fn sampling_overhead_product(model: &NoiseModel) -> f64 {
    model.generators.iter().map(|g| 1.0 / (2.0 * weight(g.rate) - 1.0)).product()
}

/// Amplitude damping on one qubit with Kraus operators
/// `K0 = diag(1, √(1−γ))` and `K1 = √γ |0⟩⟨1|`.
pub fn amplitude_damping(rho: &DensityMatrix, gamma: f64, target: usize) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&gamma) {
        return validation(format!("damping probability {gamma} outside [0, 1]"));
    }
    let n = rho.n();
    if target >= n {
        return validation(format!("target qubit {target} out of range for {n} qubits"));
    }
    let k0 = CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c((1.0 - gamma).sqrt(), 0.0)]);
    let k1 = CMat::from_row_slice(2, 2, &[c(0.0, 0.0), c(gamma.sqrt(), 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
    let k0 = qsim::embed(&k0, target, n);
    let k1 = qsim::embed(&k1, target, n);
    let x = rho.data();
    let out = &k0 * x * k0.adjoint() + &k1 * x * k1.adjoint();
    Ok(DensityMatrix::from_raw(n, out))
}

/// Uniform-rate model over every single-qubit Pauli.
pub fn depolarizing_model(n: usize, rate: f64) -> Result<NoiseModel> {
    if rate.is_nan() || rate < 0.0 {
        return validation(format!("depolarizing rate {rate} must be ≥ 0"));
    }
    NoiseModel::from_rates(n, &vec![rate; 3 * n])
}

/// Per-layer true noise with rates drawn uniformly from [`TRUE_RATE_RANGE`].
pub fn sample_true_noise<R: Rng + ?Sized>(n: usize, layers: usize, rng: &mut R) -> Result<Vec<NoiseModel>> {
    let (lo, hi) = TRUE_RATE_RANGE;
    (0..layers)
        .map(|_| {
            let rates: Vec<f64> = (0..3 * n).map(|_| rng.random_range(lo..hi)).collect();
            NoiseModel::from_rates(n, &rates)
        })
        .collect()
}

/// Learnable per-layer inverse-noise rates.
#[derive(Debug, Clone, PartialEq)]
pub struct MitigationModel {
    layers: Vec<NoiseModel>,
}

impl MitigationModel {
    pub fn new(layers: Vec<NoiseModel>) -> Result<Self> {
        if let Some(first) = layers.first() {
            let paulis: Vec<_> = first.generators.iter().map(|g| &g.pauli).collect();
            for m in &layers[1..] {
                let other: Vec<_> = m.generators.iter().map(|g| &g.pauli).collect();
                if other != paulis {
                    return validation("mitigation layers must share one generator set");
                }
            }
        }
        Ok(Self { layers })
    }

    /// Identity mitigation (all rates zero) on the default generator set.
    pub fn zeros(n: usize, layers: usize) -> Result<Self> {
        Self::new((0..layers).map(|_| NoiseModel::identity(n)).collect::<Result<_>>()?)
    }

    pub fn layers(&self) -> &[NoiseModel] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn rates(&self) -> Vec<Vec<f64>> {
        self.layers.iter().map(NoiseModel::rates).collect()
    }

    /// Replaces the rates, projecting negatives to zero.
    pub fn set_rates_projected(&mut self, rates: &[Vec<f64>]) -> Result<()> {
        if rates.len() != self.layers.len() {
            return validation("rate table has the wrong number of layers");
        }
        for (layer, r) in self.layers.iter_mut().zip(rates) {
            let projected: Vec<f64> = r.iter().map(|&x| x.max(0.0)).collect();
            *layer = layer.with_rates(&projected)?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeneratorJson {
    pauli: String,
    lambda: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseModelJson {
    n: usize,
    generators: Vec<GeneratorJson>,
}

impl Serialize for NoiseModel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        NoiseModelJson {
            n: self.n,
            generators: self
                .generators
                .iter()
                .map(|g| GeneratorJson { pauli: g.pauli.to_string(), lambda: g.rate })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for NoiseModel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = NoiseModelJson::deserialize(d)?;
        let generators = raw
            .generators
            .into_iter()
            .map(|g| Ok(Generator { pauli: g.pauli.parse()?, rate: g.lambda }))
            .collect::<Result<Vec<_>>>()
            .map_err(D::Error::custom)?;
        NoiseModel::new(raw.n, generators).map_err(D::Error::custom)
    }
}

impl Serialize for MitigationModel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.layers.serialize(s)
    }
}

impl<'de> Deserialize<'de> for MitigationModel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        MitigationModel::new(Vec::<NoiseModel>::deserialize(d)?).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frobenius, max_abs, random_mixed};
    use crate::qsim::{basis_state, maximally_mixed};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn diag2(a: f64, b: f64) -> CMat {
        CMat::from_row_slice(2, 2, &[c(a, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(b, 0.0)])
    }

    fn random_model<R: Rng>(n: usize, hi: f64, rng: &mut R) -> NoiseModel {
        let rates: Vec<f64> = (0..3 * n).map(|_| rng.random_range(0.0..hi)).collect();
        NoiseModel::from_rates(n, &rates).unwrap()
    }

    #[test]
    fn pauli_conjugation_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_mixed(8, &mut rng);
        for s in ["XYZ", "IYI", "ZZX", "YYY", "IIX"] {
            let p: PauliString = s.parse().unwrap();
            let m = p.matrix();
            assert!(max_abs(&(&m * &m - linalg::identity(8))) < 1e-12);
            assert!(max_abs(&(p.conjugate(&x) - &m * &x * m.adjoint())) < 1e-14);
            assert_eq!(p.to_string(), s);
        }
        assert!("XQ".parse::<PauliString>().is_err());
    }

    #[test]
    fn linear_channel_examples() {
        let zero = basis_state(&[0]).unwrap();
        let idle = NoiseModel::identity(1).unwrap();
        assert_eq!(apply_linear_channel(&zero, &idle).unwrap(), zero);

        let x = NoiseModel::new(1, vec![Generator { pauli: "X".parse().unwrap(), rate: 0.1 }]).unwrap();
        let out = apply_linear_channel(&zero, &x).unwrap();
        assert!(max_abs(&(out.data() - diag2(0.9, 0.1))) < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mixed = maximally_mixed(3).unwrap();
        let out = apply_linear_channel(&mixed, &random_model(3, 0.2, &mut rng)).unwrap();
        assert!(max_abs(&(out.data() - mixed.data())) < 1e-15);
    }

    #[test]
    fn product_channel_examples() {
        let zero = basis_state(&[0]).unwrap();
        assert_eq!(apply_channel(&zero, &NoiseModel::identity(1).unwrap()).unwrap(), zero);

        let x = NoiseModel::new(1, vec![Generator { pauli: "X".parse().unwrap(), rate: 0.5 }]).unwrap();
        let w = (1.0 + (-1.0f64).exp()) / 2.0;
        let out = apply_channel(&zero, &x).unwrap();
        assert!(max_abs(&(out.data() - diag2(w, 1.0 - w))) < 1e-15);
    }

    #[test]
    fn product_channel_is_second_order_close_to_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let rho = DensityMatrix::new(random_mixed(8, &mut rng)).unwrap();
            let model = random_model(3, 1e-3, &mut rng);
            let total: f64 = model.rates().iter().sum();
            let a = apply_channel(&rho, &model).unwrap();
            let b = apply_linear_channel(&rho, &model).unwrap();
            assert!(frobenius(&(a.data() - b.data())) <= 10.0 * total * total);
        }
    }

    #[test]
    fn inverse_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let zero = basis_state(&[0, 0]).unwrap();
        assert_eq!(apply_inverse_channel(&zero, &NoiseModel::identity(2).unwrap()).unwrap(), zero);
        for n in 1..=4 {
            let rho = DensityMatrix::new(random_mixed(1 << n, &mut rng)).unwrap();
            let model = random_model(n, 0.1, &mut rng);
            let noisy = apply_channel(&rho, &model).unwrap();
            let back = apply_inverse_channel(&noisy, &model).unwrap();
            assert!(frobenius(&(back.data() - rho.data())) <= 1e-10);
            assert!((back.trace().re - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn overhead_examples() {
        assert_eq!(sampling_overhead(&NoiseModel::identity(2).unwrap()), 1.0);
        let m = NoiseModel::new(
            1,
            vec![
                Generator { pauli: "X".parse().unwrap(), rate: 0.1 },
                Generator { pauli: "Z".parse().unwrap(), rate: 0.2 },
            ],
        )
        .unwrap();
        assert!((sampling_overhead(&m) - 0.6f64.exp()).abs() < 1e-14);
        assert!((sampling_overhead(&m) - 1.822_118_800_390_509).abs() < 1e-12);
        let half = NoiseModel::new(1, vec![Generator { pauli: "Y".parse().unwrap(), rate: 0.5 }]).unwrap();
        assert!((sampling_overhead(&half) - std::f64::consts::E).abs() < 1e-14);
        assert!((sampling_overhead_product(&half) - std::f64::consts::E).abs() < 1e-12);
    }

    #[test]
    fn amplitude_damping_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let rho = DensityMatrix::new(random_mixed(2, &mut rng)).unwrap();
        assert!(max_abs(&(amplitude_damping(&rho, 0.0, 0).unwrap().data() - rho.data())) < 1e-15);
        let full = amplitude_damping(&rho, 1.0, 0).unwrap();
        assert!(max_abs(&(full.data() - diag2(1.0, 0.0))) < 1e-15);
        let one = basis_state(&[1]).unwrap();
        let half = amplitude_damping(&one, 0.5, 0).unwrap();
        assert!(max_abs(&(half.data() - diag2(0.5, 0.5))) < 1e-15);
        assert!(amplitude_damping(&one, 1.5, 0).is_err());
        assert!(amplitude_damping(&one, -0.1, 0).is_err());
    }

    #[test]
    fn depolarizing_examples() {
        assert_eq!(depolarizing_model(3, 0.1).unwrap().generators().len(), 9);
        let plus = crate::qsim::pure_state(&[c(0.6, 0.0), c(0.8, 0.0)]).unwrap();
        assert_eq!(apply_channel(&plus, &depolarizing_model(1, 0.0).unwrap()).unwrap(), plus);

        let model = depolarizing_model(1, 0.05).unwrap();
        let mut state = plus;
        let mut prev = state.data()[(0, 1)].norm();
        for _ in 0..20 {
            state = apply_channel(&state, &model).unwrap();
            let off = state.data()[(0, 1)].norm();
            assert!(off < prev);
            prev = off;
        }
        assert!(depolarizing_model(1, -0.1).is_err());
    }

    #[test]
    fn generator_order_is_qubit_then_axis() {
        let names: Vec<String> = default_generators(2).unwrap().iter().map(|p| p.to_string()).collect();
        assert_eq!(names, ["XI", "YI", "ZI", "IX", "IY", "IZ"]);
    }

    #[test]
    fn invalid_models_rejected() {
        let x: PauliString = "XI".parse().unwrap();
        assert!(NoiseModel::new(2, vec![Generator { pauli: x.clone(), rate: -0.1 }]).is_err());
        assert!(NoiseModel::new(2, vec![Generator { pauli: x, rate: f64::NAN }]).is_err());
        assert!(NoiseModel::new(2, vec![Generator { pauli: "II".parse().unwrap(), rate: 0.1 }]).is_err());
        assert!(NoiseModel::new(3, vec![Generator { pauli: "XI".parse().unwrap(), rate: 0.1 }]).is_err());
    }

    #[test]
    fn json_shape() {
        let m = NoiseModel::new(4, vec![Generator { pauli: "XIIZ".parse().unwrap(), rate: 0.25 }]).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(text, r#"{"n":4,"generators":[{"pauli":"XIIZ","lambda":0.25}]}"#);
        let back: NoiseModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<NoiseModel>(r#"{"n":1,"generators":[{"pauli":"X","lambda":-1}]}"#).is_err());
        assert!(serde_json::from_str::<NoiseModel>(r#"{"n":1,"generators":[],"extra":1}"#).is_err());
    }

    #[test]
    fn mitigation_projection() {
        let mut m = MitigationModel::zeros(1, 2).unwrap();
        m.set_rates_projected(&[vec![0.1, -0.2, 0.3], vec![-1.0, 0.0, 0.5]]).unwrap();
        assert_eq!(m.rates(), vec![vec![0.1, 0.0, 0.3], vec![0.0, 0.0, 0.5]]);
    }
}
