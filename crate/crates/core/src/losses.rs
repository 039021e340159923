//! Fidelity, Petz-Rényi divergences and the training losses.
//!
//! Quasi-states (outputs of inverse channels) are clamped before any
//! fidelity: negative eigenvalues are zeroed and the result renormalized.
//! The discarded negative mass is reported alongside the value.

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::linalg::{self, CMat};
use crate::noise::{MitigationModel, NoiseModel};
use crate::pqc::{self, CircuitSpec, ExecutionMode};
use crate::qsim::DensityMatrix;

/// Upper bound on `−log F`; hit only for (numerically) orthogonal states.
pub const FB_LOSS_CAP: f64 = 50.0;

const HERMITIAN_TOL: f64 = 1e-8;
// eigenvalues below this are treated as round-off, not as a quasi-state
const CLAMP_TOL: f64 = 1e-12;
// relative cut-off for pseudo-inverse square roots
const PINV_TOL: f64 = 1e-10;
// relative cut-off for eigenvalues entering Tr √A
const ROOT_TOL: f64 = 1e-14;

/// Weights of the forward-backward and task losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub alpha_fb: f64,
    pub alpha_task: f64,
}

impl LossWeights {
    pub fn new(alpha_fb: f64, alpha_task: f64) -> Result<Self> {
        let w = Self { alpha_fb, alpha_task };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha_fb", self.alpha_fb), ("alpha_task", self.alpha_task)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config { field: name.into(), message: format!("{v} must be finite and ≥ 0") });
            }
        }
        if self.alpha_fb == 0.0 && self.alpha_task == 0.0 {
            return Err(Error::Config {
                field: "loss_weights".into(),
                message: "alpha_fb and alpha_task cannot both be zero".into(),
            });
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha_fb: 1.0, alpha_task: 1.0 }
    }
}

/// Positive part of a Hermitian matrix, renormalized to unit trace.
pub(crate) struct Clamped {
    pub value: CMat,
    /// Sum of the magnitudes of the discarded negative eigenvalues.
    pub mass: f64,
    scale: f64,
    // eigendecomposition kept for the backward pass when clamping was active
    spectrum: Option<(Vec<f64>, CMat)>,
}

pub(crate) fn clamp(x: &CMat) -> Clamped {
    let (e, v) = linalg::eigh(x);
    if e[0] >= -CLAMP_TOL {
        let scale = linalg::trace(x).re;
        return Clamped { value: x.unscale(scale), mass: 0.0, scale, spectrum: None };
    }
    let mass = e.iter().filter(|&&l| l < 0.0).map(|l| -l).sum();
    let positive = linalg::spectral_map(&e, &v, |l| l.max(0.0));
    let scale = linalg::trace(&positive).re;
    Clamped { value: positive.unscale(scale), mass, scale, spectrum: Some((e, v)) }
}

impl Clamped {
    /// Pulls a gradient with respect to `value` back to the input.
    pub fn backward(&self, g: &CMat) -> CMat {
        let d = g.nrows();
        let shift = linalg::re_trace_product(g, &self.value);
        let g_pos = (g - linalg::identity(d).scale(shift)).unscale(self.scale);
        let Some((e, v)) = &self.spectrum else {
            return g_pos;
        };
        // Daleckii-Krein: divided differences of max(·, 0)
        let f = |l: f64| l.max(0.0);
        let df = |l: f64| if l > 0.0 { 1.0 } else { 0.0 };
        let mut inner = v.adjoint() * g_pos * v;
        for i in 0..d {
            for j in 0..d {
                let gamma = if (e[i] - e[j]).abs() > 1e-14 { (f(e[i]) - f(e[j])) / (e[i] - e[j]) } else { df(e[i]) };
                inner[(i, j)] *= gamma;
            }
        }
        v * inner * v.adjoint()
    }
}

/// `Tr √(√σ ρ √σ)` (the square root of the fidelity) for PSD inputs, with
/// optional gradients with respect to `ρ` and `σ`.
pub(crate) struct RootFidelity {
    pub root: f64,
    pub grad_rho: Option<CMat>,
    pub grad_sigma: Option<CMat>,
}

fn half_inverse_sandwich(outer_sqrt: &CMat, inner: &CMat) -> CMat {
    // ½ √σ A^{-1/2} √σ with A = √σ ρ √σ, pseudo-inverse on the null space
    let a = outer_sqrt * inner * outer_sqrt;
    let (e, v) = linalg::eigh(&a);
    let cut = PINV_TOL * e.last().copied().unwrap_or(0.0).max(0.0);
    let inv_sqrt = linalg::spectral_map(&e, &v, |l| if l > cut && l > 0.0 { 0.5 / l.sqrt() } else { 0.0 });
    outer_sqrt * inv_sqrt * outer_sqrt
}

pub(crate) fn root_fidelity(rho: &CMat, sigma: &CMat, grad_rho: bool, grad_sigma: bool) -> RootFidelity {
    let sqrt_sigma = linalg::psd_sqrt(sigma);
    let a = &sqrt_sigma * rho * &sqrt_sigma;
    let e = linalg::eigenvalues(&a);
    // round-off eigenvalues of a rank-deficient A would add ~√ε each
    let cut = ROOT_TOL * e.last().copied().unwrap_or(0.0).max(0.0);
    let root = e.iter().filter(|&&l| l > cut).map(|l| l.sqrt()).sum();
    let grad_rho = grad_rho.then(|| half_inverse_sandwich(&sqrt_sigma, rho));
    let grad_sigma = grad_sigma.then(|| half_inverse_sandwich(&linalg::psd_sqrt(rho), sigma));
    RootFidelity { root, grad_rho, grad_sigma }
}

fn check_pair(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<()> {
    if rho.n() != sigma.n() {
        return validation(format!("states act on {} and {} qubits", rho.n(), sigma.n()));
    }
    for (name, s) in [("first", rho), ("second", sigma)] {
        let defect = linalg::hermitian_defect(s.data());
        if defect > HERMITIAN_TOL {
            return validation(format!("{name} state is not Hermitian (defect {defect:e})"));
        }
    }
    Ok(())
}

/// Uhlmann fidelity together with the total clamped negative mass.
pub fn fidelity_with_clamp(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<(f64, f64)> {
    check_pair(rho, sigma)?;
    let (a, b) = (clamp(rho.data()), clamp(sigma.data()));
    let r = root_fidelity(&a.value, &b.value, false, false).root;
    Ok((r * r, a.mass + b.mass))
}

/// Uhlmann fidelity `F = (Tr √(√σ ρ √σ))²`.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    fidelity_with_clamp(rho, sigma).map(|(f, _)| f)
}

/// `2 log Tr √(√σ ρ √σ)`, i.e. `log F`. Diagnostic only.
pub fn log_fidelity_root_form(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    check_pair(rho, sigma)?;
    let (a, b) = (clamp(rho.data()), clamp(sigma.data()));
    let root = root_fidelity(&a.value, &b.value, false, false).root;
    if root <= 0.0 {
        return Err(Error::Computation(format!("Tr √(√σ ρ √σ) = {root} is not positive")));
    }
    Ok(2.0 * root.ln())
}

fn check_order(alpha: f64) -> Result<()> {
    if !alpha.is_finite() || alpha <= 0.0 || alpha == 1.0 {
        return validation(format!("Rényi order {alpha} must be positive, finite and ≠ 1"));
    }
    Ok(())
}

/// `D_α(ρ‖σ) = (α−1)^{-1} log Tr[ρ^α σ^{1−α}]`.
pub fn petz_renyi_divergence(rho: &DensityMatrix, sigma: &DensityMatrix, alpha: f64) -> Result<f64> {
    check_order(alpha)?;
    check_pair(rho, sigma)?;
    let (es, vs) = linalg::eigh(sigma.data());
    if alpha > 1.0 && es[0] <= 0.0 {
        return validation("σ must be full rank for α > 1");
    }
    let rho_pow = linalg::psd_power(rho.data(), alpha);
    let sigma_pow = linalg::spectral_map(&es, &vs, |l| if l > 0.0 { l.powf(1.0 - alpha) } else { 0.0 });
    let q = linalg::re_trace_product(&rho_pow, &sigma_pow);
    Ok(q.ln() / (alpha - 1.0))
}

/// `D_α(ρ ‖ I/d)` from the spectrum of `ρ − I/d`, accurate when `ρ` is close
/// to maximally mixed. For `α = 2` this is `log(1 + d‖ρ − I/d‖²_F)`.
pub fn divergence_to_maximally_mixed(rho: &DensityMatrix, alpha: f64) -> Result<f64> {
    check_order(alpha)?;
    let delta = rho.data() - linalg::identity(rho.dim()).unscale(rho.dim() as f64);
    Ok(divergence_from_deviation(&delta, alpha))
}

/// Same as [`divergence_to_maximally_mixed`] given the traceless deviation
/// `δ = ρ − I/d` directly, so `δ` can be tracked without cancellation.
pub(crate) fn divergence_from_deviation(delta: &CMat, alpha: f64) -> f64 {
    let d = delta.nrows() as f64;
    if alpha == 2.0 {
        let norm = linalg::frobenius(delta);
        return (d * norm * norm).ln_1p();
    }
    // d^{α−1} Σ p^α = 1 + (1/d) Σ ((1 + d δ)^α − 1); eigenvalues p below
    // round-off count as zero so p^α with α < 1 cannot amplify them
    let sum: f64 = linalg::eigenvalues(delta)
        .iter()
        .map(|&l| {
            let p = 1.0 / d + l;
            if p <= ROOT_TOL {
                -1.0
            } else {
                (alpha * (d * l).ln_1p()).exp_m1()
            }
        })
        .sum();
    (sum / d).ln_1p() / (alpha - 1.0)
}

/// One forward-backward loss value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FbLoss {
    pub value: f64,
    /// True when `F` was too small and the value was capped.
    pub capped: bool,
    pub clamped_mass: f64,
}

pub(crate) fn fb_from_root(root: f64) -> (f64, bool) {
    let f = root * root;
    if f.is_nan() || f <= (-FB_LOSS_CAP).exp() {
        (FB_LOSS_CAP, true)
    } else {
        ((-f.ln()).max(0.0), false)
    }
}

/// `−log F(ρ̃, ρ̂)`, capped at [`FB_LOSS_CAP`].
pub fn forward_backward_loss(reference: &DensityMatrix, recovered: &DensityMatrix) -> Result<FbLoss> {
    check_pair(reference, recovered)?;
    let (a, b) = (clamp(reference.data()), clamp(recovered.data()));
    let (value, capped) = fb_from_root(root_fidelity(&a.value, &b.value, false, false).root);
    Ok(FbLoss { value, capped, clamped_mass: a.mass + b.mass })
}

/// Mean forward-backward loss over the `L/k` blocks of `k` layers.
pub fn total_fb_loss(
    rho0: &DensityMatrix,
    circuit: &CircuitSpec,
    noise: &[NoiseModel],
    mitigation: &MitigationModel,
    mode: ExecutionMode,
    step: usize,
) -> Result<FbLoss> {
    let pairs = pqc::forward_backward_pairs(rho0, circuit, noise, mitigation, mode, step)?;
    let mut total = FbLoss { value: 0.0, capped: false, clamped_mass: 0.0 };
    for (a, b) in &pairs {
        let l = forward_backward_loss(a, b)?;
        total.value += l.value;
        total.capped |= l.capped;
        total.clamped_mass += l.clamped_mass;
    }
    total.value /= pairs.len() as f64;
    Ok(total)
}

fn check_classes(z: &[f64], classes: usize) -> Result<()> {
    if classes == 0 || classes > z.len() {
        return validation(format!("class count {classes} must be in 1..={}", z.len()));
    }
    Ok(())
}

/// Softmax over the first `classes` readout components.
pub fn softmax(z: &[f64], classes: usize) -> Result<Vec<f64>> {
    check_classes(z, classes)?;
    let head = &z[..classes];
    let max = head.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = head.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    Ok(exp.into_iter().map(|v| v / sum).collect())
}

/// Index of the largest of the first `classes` components; ties go to the
/// lowest index.
pub fn predict(z: &[f64], classes: usize) -> Result<usize> {
    check_classes(z, classes)?;
    let mut best = 0;
    for j in 1..classes {
        if z[j] > z[best] {
            best = j;
        }
    }
    Ok(best)
}

/// Cross-entropy `−log softmax(z[..c])_label`.
pub fn task_loss(z: &[f64], label: usize, classes: usize) -> Result<f64> {
    check_classes(z, classes)?;
    if label >= classes {
        return validation(format!("label {label} outside 0..{classes}"));
    }
    let head = &z[..classes];
    let max = head.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + head.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(lse - z[label])
}

pub fn total_loss(fb: f64, task: f64, weights: &LossWeights) -> f64 {
    weights.alpha_fb * fb + weights.alpha_task * task
}
