//! Exact density-matrix simulation primitives.
//!
//! Qubit 0 is the most significant bit of a computational-basis index, so
//! `|q0 q1 … q_{n-1}⟩` maps to index `Σ q_j 2^{n-1-j}`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::linalg::{self, c, CMat, ONE, ZERO};

/// Largest register the dense backend accepts.
pub const MAX_QUBITS: usize = 10;

/// Tolerance for hermiticity, unit trace and unitarity checks.
pub const EXACT_TOL: f64 = 1e-10;
/// Lowest eigenvalue tolerated on a strict density matrix.
pub const PSD_TOL: f64 = 1e-10;
/// Lowest eigenvalue tolerated on a quasi-state (output of an inverse channel).
pub const QUASI_TOL: f64 = 0.05;

fn check_qubits(n: usize) -> Result<()> {
    if n == 0 || n > MAX_QUBITS {
        return validation(format!("qubit count {n} outside 1..={MAX_QUBITS}"));
    }
    Ok(())
}

fn qubits_for_dim(dim: usize) -> Result<usize> {
    if dim < 2 || !dim.is_power_of_two() {
        return validation(format!("dimension {dim} is not a power of two ≥ 2"));
    }
    let n = dim.trailing_zeros() as usize;
    check_qubits(n)?;
    Ok(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Validation {
    /// Hermitian, unit trace, PSD.
    Strict,
    /// Hermitian, unit trace, eigenvalues ≥ −[`QUASI_TOL`].
    Quasi,
}

/// A quantum state `ρ` on `n` qubits.
///
/// Values produced by [`crate::noise::apply_inverse_channel`] are quasi-states:
/// Hermitian with unit trace but possibly slightly non-positive.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    n: usize,
    data: CMat,
}

impl DensityMatrix {
    pub fn new(data: CMat) -> Result<Self> {
        Self::with_validation(data, Validation::Strict)
    }

    pub fn new_quasi(data: CMat) -> Result<Self> {
        Self::with_validation(data, Validation::Quasi)
    }

    pub fn with_validation(data: CMat, mode: Validation) -> Result<Self> {
        if data.nrows() != data.ncols() {
            return validation("density matrix must be square");
        }
        let n = qubits_for_dim(data.nrows())?;
        let state = Self { n, data };
        state.validate(mode)?;
        Ok(state)
    }

    pub(crate) fn from_raw(n: usize, data: CMat) -> Self {
        debug_assert_eq!(data.nrows(), 1 << n);
        Self { n, data }
    }

    pub fn validate(&self, mode: Validation) -> Result<()> {
        let herm = linalg::hermitian_defect(&self.data);
        if herm > EXACT_TOL {
            return validation(format!("state is not Hermitian (defect {herm:e})"));
        }
        let tr = linalg::trace(&self.data);
        if (tr - ONE).norm() > EXACT_TOL {
            return validation(format!("state trace {tr} differs from 1"));
        }
        let floor = match mode {
            Validation::Strict => -PSD_TOL,
            Validation::Quasi => -QUASI_TOL,
        };
        let min = self.min_eigenvalue();
        if min < floor {
            return validation(format!("state has eigenvalue {min:e} below {floor:e}"));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn data(&self) -> &CMat {
        &self.data
    }

    pub fn into_data(self) -> CMat {
        self.data
    }

    pub fn trace(&self) -> Complex64 {
        linalg::trace(&self.data)
    }

    pub fn purity(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        linalg::eigenvalues(&self.data)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }
}

/// A unitary on `n` qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct Unitary {
    n: usize,
    data: CMat,
}

impl Unitary {
    pub fn new(data: CMat) -> Result<Self> {
        if data.nrows() != data.ncols() {
            return validation("unitary must be square");
        }
        let n = qubits_for_dim(data.nrows())?;
        let defect = linalg::max_abs(&(&data * data.adjoint() - linalg::identity(data.nrows())));
        if defect > EXACT_TOL {
            return validation(format!("matrix is not unitary (defect {defect:e})"));
        }
        Ok(Self { n, data })
    }

    pub(crate) fn from_raw(n: usize, data: CMat) -> Self {
        Self { n, data }
    }

    pub fn identity(n: usize) -> Result<Self> {
        check_qubits(n)?;
        Ok(Self { n, data: linalg::identity(1 << n) })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &CMat {
        &self.data
    }

    pub fn dagger(&self) -> Self {
        Self { n: self.n, data: self.data.adjoint() }
    }

    /// `self · other`: `other` acts first.
    pub fn compose(&self, other: &Unitary) -> Result<Self> {
        if self.n != other.n {
            return validation("cannot compose unitaries on different registers");
        }
        Ok(Self { n: self.n, data: &self.data * &other.data })
    }
}

/// A Hermitian observable `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observable {
    n: usize,
    data: CMat,
}

impl Observable {
    pub fn new(data: CMat) -> Result<Self> {
        if data.nrows() != data.ncols() {
            return validation("observable must be square");
        }
        let n = qubits_for_dim(data.nrows())?;
        if linalg::hermitian_defect(&data) > EXACT_TOL {
            return validation("observable is not Hermitian");
        }
        Ok(Self { n, data })
    }

    /// `I^{⊗q} ⊗ σ_z ⊗ I^{⊗(n−q−1)}`.
    pub fn pauli_z(q: usize, n: usize) -> Result<Self> {
        check_qubits(n)?;
        if q >= n {
            return validation(format!("qubit {q} out of range for {n} qubits"));
        }
        Ok(Self { n, data: embed(&pauli_matrix(Axis::Z), q, n) })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &CMat {
        &self.data
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];
}

pub fn pauli_matrix(axis: Axis) -> CMat {
    match axis {
        Axis::X => CMat::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]),
        Axis::Y => CMat::from_row_slice(2, 2, &[ZERO, c(0.0, -1.0), c(0.0, 1.0), ZERO]),
        Axis::Z => CMat::from_row_slice(2, 2, &[ONE, ZERO, ZERO, c(-1.0, 0.0)]),
    }
}

/// `R_σ(θ) = exp(−iθσ/2)` as a 2×2 matrix.
pub fn rotation_matrix(axis: Axis, theta: f64) -> CMat {
    let (s, co) = (theta / 2.0).sin_cos();
    match axis {
        Axis::X => CMat::from_row_slice(2, 2, &[c(co, 0.0), c(0.0, -s), c(0.0, -s), c(co, 0.0)]),
        Axis::Y => CMat::from_row_slice(2, 2, &[c(co, 0.0), c(-s, 0.0), c(s, 0.0), c(co, 0.0)]),
        Axis::Z => CMat::from_row_slice(2, 2, &[c(co, -s), ZERO, ZERO, c(co, s)]),
    }
}

/// Embeds a 2×2 operator on qubit `q` of an `n`-qubit register.
pub(crate) fn embed(op: &CMat, q: usize, n: usize) -> CMat {
    let left = linalg::identity(1 << q);
    let right = linalg::identity(1 << (n - q - 1));
    linalg::kron(&linalg::kron(&left, op), &right)
}

pub(crate) fn bit(index: usize, q: usize, n: usize) -> usize {
    (index >> (n - 1 - q)) & 1
}

pub fn rotation_gate(axis: Axis, theta: f64, target: usize, n: usize) -> Result<Unitary> {
    check_qubits(n)?;
    if target >= n {
        return validation(format!("target qubit {target} out of range for {n} qubits"));
    }
    if !theta.is_finite() {
        return validation("rotation angle must be finite");
    }
    Ok(Unitary::from_raw(n, embed(&rotation_matrix(axis, theta), target, n)))
}

pub fn cnot_gate(control: usize, target: usize, n: usize) -> Result<Unitary> {
    check_qubits(n)?;
    if control >= n || target >= n {
        return validation(format!("CNOT({control},{target}) out of range for {n} qubits"));
    }
    if control == target {
        return validation("CNOT control and target must differ");
    }
    let dim = 1 << n;
    let tmask = 1 << (n - 1 - target);
    let mut m = CMat::zeros(dim, dim);
    for k in 0..dim {
        let out = if bit(k, control, n) == 1 { k ^ tmask } else { k };
        m[(out, k)] = ONE;
    }
    Ok(Unitary::from_raw(n, m))
}

pub fn pure_state(amplitudes: &[Complex64]) -> Result<DensityMatrix> {
    let n = qubits_for_dim(amplitudes.len())?;
    let norm = amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > EXACT_TOL {
        return validation(format!("state vector norm {norm} is not 1"));
    }
    let d = amplitudes.len();
    let data = CMat::from_fn(d, d, |j, k| amplitudes[j] * amplitudes[k].conj());
    Ok(DensityMatrix::from_raw(n, data))
}

/// Computational-basis state `|bits⟩`, qubit 0 first.
pub fn basis_state(bits: &[u8]) -> Result<DensityMatrix> {
    let n = bits.len();
    check_qubits(n)?;
    let mut index = 0;
    for &b in bits {
        if b > 1 {
            return validation("basis bits must be 0 or 1");
        }
        index = (index << 1) | b as usize;
    }
    let mut data = CMat::zeros(1 << n, 1 << n);
    data[(index, index)] = ONE;
    Ok(DensityMatrix::from_raw(n, data))
}

pub fn maximally_mixed(n: usize) -> Result<DensityMatrix> {
    check_qubits(n)?;
    let d = 1 << n;
    Ok(DensityMatrix::from_raw(n, linalg::identity(d).unscale(d as f64)))
}

pub fn evolve(rho: &DensityMatrix, u: &Unitary) -> Result<DensityMatrix> {
    if rho.n != u.n {
        return validation(format!("state has {} qubits, unitary has {}", rho.n, u.n));
    }
    Ok(DensityMatrix::from_raw(rho.n, conjugate(&rho.data, &u.data)))
}

/// `U X U†`.
pub(crate) fn conjugate(x: &CMat, u: &CMat) -> CMat {
    u * x * u.adjoint()
}

/// `Tr(Hρ)`, imaginary round-off discarded.
pub fn expectation(rho: &DensityMatrix, h: &Observable) -> Result<f64> {
    if rho.n != h.n {
        return validation(format!("state has {} qubits, observable has {}", rho.n, h.n));
    }
    Ok(linalg::re_trace_product(&h.data, &rho.data))
}

/// Von Neumann entropy in nats; `0 log 0 = 0`.
pub fn von_neumann_entropy(rho: &DensityMatrix) -> f64 {
    rho.eigenvalues().into_iter().filter(|&e| e > 0.0).map(|e| -e * e.ln()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs, random_mixed, random_unitary};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn approx(a: &CMat, b: &CMat, tol: f64) -> bool {
        max_abs(&(a - b)) <= tol
    }

    #[test]
    fn pure_state_examples() {
        let zero = pure_state(&[ONE, ZERO]).unwrap();
        assert!(approx(zero.data(), &CMat::from_row_slice(2, 2, &[ONE, ZERO, ZERO, ZERO]), 0.0));

        let h = c(FRAC_1_SQRT_2, 0.0);
        let plus = pure_state(&[h, h]).unwrap();
        assert!(plus.data().iter().all(|z| (z - c(0.5, 0.0)).norm() < 1e-15));

        let rho = pure_state(&[c(0.6, 0.0), c(0.0, 0.8)]).unwrap();
        let expected = CMat::from_row_slice(2, 2, &[c(0.36, 0.0), c(0.0, -0.48), c(0.0, 0.48), c(0.64, 0.0)]);
        assert!(approx(rho.data(), &expected, 1e-15));
        assert!((rho.trace() - ONE).norm() < 1e-15);
    }

    #[test]
    fn pure_state_rejects_bad_input() {
        assert!(pure_state(&[ONE, ONE]).is_err());
        assert!(pure_state(&[ONE, ZERO, ZERO]).is_err());
        assert!(pure_state(&[ONE]).is_err());
    }

    #[test]
    fn maximally_mixed_examples() {
        let m1 = maximally_mixed(1).unwrap();
        assert!(approx(m1.data(), &linalg::identity(2).scale(0.5), 0.0));
        let m4 = maximally_mixed(4).unwrap();
        assert!(m4.eigenvalues().iter().all(|&e| (e - 1.0 / 16.0).abs() < 1e-15));
        assert!(maximally_mixed(0).is_err());
    }

    #[test]
    fn rotation_examples() {
        let id = rotation_gate(Axis::X, 0.0, 1, 3).unwrap();
        assert!(approx(id.data(), &linalg::identity(8), 0.0));

        let zero = basis_state(&[0]).unwrap();
        let flipped = evolve(&zero, &rotation_gate(Axis::X, PI, 0, 1).unwrap()).unwrap();
        assert!(approx(flipped.data(), &CMat::from_row_slice(2, 2, &[ZERO, ZERO, ZERO, ONE]), 1e-15));

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let theta = rng.random_range(-PI..PI);
            let out = evolve(&zero, &rotation_gate(Axis::Z, theta, 0, 1).unwrap()).unwrap();
            assert!(approx(out.data(), zero.data(), 1e-15));
        }
        assert!(rotation_gate(Axis::Y, 0.1, 2, 2).is_err());
    }

    #[test]
    fn rotation_inverse_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let theta = rng.random_range(-10.0..10.0);
            for axis in Axis::ALL {
                let a = rotation_gate(axis, theta, 1, 2).unwrap();
                let b = rotation_gate(axis, -theta, 1, 2).unwrap();
                assert!(approx(&(a.data() * b.data()), &linalg::identity(4), 1e-10));
            }
        }
    }

    #[test]
    fn cnot_examples() {
        let cx = cnot_gate(0, 1, 2).unwrap();
        let s10 = basis_state(&[1, 0]).unwrap();
        assert_eq!(evolve(&s10, &cx).unwrap(), basis_state(&[1, 1]).unwrap());
        let s00 = basis_state(&[0, 0]).unwrap();
        assert_eq!(evolve(&s00, &cx).unwrap(), s00);
        assert!(approx(&(cx.data() * cx.data()), &linalg::identity(4), 0.0));
        assert!(cnot_gate(1, 1, 2).is_err());
        assert!(cnot_gate(0, 2, 2).is_err());
    }

    #[test]
    fn evolve_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rho = DensityMatrix::new(random_mixed(4, &mut rng)).unwrap();
        assert_eq!(evolve(&rho, &Unitary::identity(2).unwrap()).unwrap(), rho);

        let mixed = maximally_mixed(2).unwrap();
        let u = Unitary::new(random_unitary(4, &mut rng)).unwrap();
        assert!(approx(evolve(&mixed, &u).unwrap().data(), mixed.data(), 1e-15));

        let zero = basis_state(&[0]).unwrap();
        let out = evolve(&zero, &rotation_gate(Axis::X, PI / 2.0, 0, 1).unwrap()).unwrap();
        assert!((out.data()[(0, 0)].re - 0.5).abs() < 1e-15);
        assert!((out.data()[(1, 1)].re - 0.5).abs() < 1e-15);

        assert!(evolve(&zero, &u).is_err());
    }

    #[test]
    fn expectation_examples() {
        let z = Observable::pauli_z(0, 1).unwrap();
        assert_eq!(expectation(&basis_state(&[0]).unwrap(), &z).unwrap(), 1.0);
        assert_eq!(expectation(&maximally_mixed(1).unwrap(), &z).unwrap(), 0.0);

        let h = c(FRAC_1_SQRT_2, 0.0);
        let plus_zero = pure_state(&[h, ZERO, h, ZERO]).unwrap();
        let z0 = Observable::pauli_z(0, 2).unwrap();
        assert!(expectation(&plus_zero, &z0).unwrap().abs() < 1e-15);
        assert!(expectation(&plus_zero, &z).is_err());
    }

    #[test]
    fn entropy_examples() {
        assert!(von_neumann_entropy(&basis_state(&[0, 1]).unwrap()).abs() < 1e-12);
        for n in 1..=4 {
            let s = von_neumann_entropy(&maximally_mixed(n).unwrap());
            assert!((s - n as f64 * 2f64.ln()).abs() < 1e-12);
        }
        let diag = DensityMatrix::new(CMat::from_row_slice(2, 2, &[c(0.75, 0.0), ZERO, ZERO, c(0.25, 0.0)])).unwrap();
        // −0.75 ln 0.75 − 0.25 ln 0.25
        assert!((von_neumann_entropy(&diag) - 0.562_335_144_618_808_3).abs() < 1e-12);
    }

    #[test]
    fn quasi_validation_accepts_small_negatives() {
        let data = CMat::from_row_slice(2, 2, &[c(1.01, 0.0), ZERO, ZERO, c(-0.01, 0.0)]);
        assert!(DensityMatrix::new(data.clone()).is_err());
        assert!(DensityMatrix::new_quasi(data).is_ok());
    }
}
