//! Dense complex matrix helpers shared by the simulator, the losses and the
//! gradient engine.
//!
//! Hermitian matrix functions go through an eigendecomposition; fractional
//! powers clamp eigenvalues at zero first so round-off negatives never
//! produce complex roots.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub type CMat = DMatrix<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn identity(dim: usize) -> CMat {
    CMat::identity(dim, dim)
}

pub fn trace(m: &CMat) -> Complex64 {
    m.diagonal().iter().sum()
}

/// `Re Tr(a b)` without forming the product.
pub fn re_trace_product(a: &CMat, b: &CMat) -> f64 {
    let d = a.nrows();
    let mut acc = 0.0;
    for j in 0..d {
        for k in 0..d {
            let x = a[(j, k)] * b[(k, j)];
            acc += x.re;
        }
    }
    acc
}

pub fn frobenius(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn hermitian_defect(m: &CMat) -> f64 {
    max_abs(&(m - m.adjoint()))
}

pub fn hermitize(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

// nalgebra's solver can return NaN on strongly graded inputs (entries
// spanning a hundred orders of magnitude). Failed decompositions are retried
// with entries below `ratio · max|m|` flushed to zero; the last ratio is at
// round-off level.
const FLUSH_RATIOS: [f64; 4] = [0.0, 1e-30, 1e-22, f64::EPSILON];

const ORTHO_TOL: f64 = 1e-10;

fn flushed_hermitian(m: &CMat, ratio: f64) -> CMat {
    let mut h = hermitize(m);
    let floor = max_abs(&h) * ratio;
    for z in h.iter_mut() {
        if z.norm() < floor {
            *z = ZERO;
        }
    }
    h
}

fn all_finite<'a>(values: impl IntoIterator<Item = &'a f64>) -> bool {
    values.into_iter().all(|x| x.is_finite())
}

/// Hermitian eigendecomposition; eigenvalues ascending, eigenvectors as columns.
pub fn eigh(m: &CMat) -> (Vec<f64>, CMat) {
    let n = m.nrows();
    let mut eig = hermitize(m).symmetric_eigen();
    for &ratio in &FLUSH_RATIOS[1..] {
        let v = &eig.eigenvectors;
        let ok = all_finite(eig.eigenvalues.iter())
            && v.iter().all(|z| z.re.is_finite() && z.im.is_finite())
            && max_abs(&(v * v.adjoint() - identity(n))) < ORTHO_TOL;
        if ok {
            break;
        }
        eig = flushed_hermitian(m, ratio).symmetric_eigen();
    }
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMat::from_fn(n, n, |r, col| eig.eigenvectors[(r, order[col])]);
    (values, vectors)
}

pub fn eigenvalues(m: &CMat) -> Vec<f64> {
    let mut v: Vec<f64> = Vec::new();
    for &ratio in &FLUSH_RATIOS {
        v = flushed_hermitian(m, ratio).symmetric_eigenvalues().iter().copied().collect();
        if all_finite(&v) {
            break;
        }
    }
    v.sort_by(f64::total_cmp);
    v
}

/// `V diag(f(e)) V†` for the decomposition `(e, V)`.
pub fn spectral_map(values: &[f64], vectors: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let d = vectors.nrows();
    let mut scaled = vectors.clone();
    for (col, &e) in values.iter().enumerate() {
        let s = f(e);
        for r in 0..d {
            scaled[(r, col)] *= s;
        }
    }
    scaled * vectors.adjoint()
}

pub fn psd_sqrt(m: &CMat) -> CMat {
    let (e, v) = eigh(m);
    spectral_map(&e, &v, |x| x.max(0.0).sqrt())
}

/// `m^p` for Hermitian PSD `m`, eigenvalues clamped at zero. Zero eigenvalues
/// stay zero for negative `p` (pseudo-inverse convention).
pub fn psd_power(m: &CMat, p: f64) -> CMat {
    let (e, v) = eigh(m);
    spectral_map(&e, &v, |x| {
        let x = x.max(0.0);
        if x == 0.0 {
            0.0
        } else {
            x.powf(p)
        }
    })
}

/// Haar-random unitary via QR of a complex Ginibre matrix with the phases
/// of `R`'s diagonal folded back into `Q`.
pub fn random_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMat {
    let g =
        CMat::from_fn(dim, dim, |_, _| c(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)));
    let qr = g.qr();
    let (mut q, r) = qr.unpack();
    for col in 0..dim {
        let d = r[(col, col)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { ONE };
        for row in 0..dim {
            q[(row, col)] *= phase;
        }
    }
    q
}

/// Random full-rank mixed state `G G† / Tr(G G†)` from a Ginibre `G`.
pub fn random_mixed<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMat {
    let g =
        CMat::from_fn(dim, dim, |_, _| c(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)));
    let m = &g * g.adjoint();
    let t = trace(&m).re;
    hermitize(&m.unscale(t))
}

pub fn random_ket<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<Complex64> {
    let v: Vec<Complex64> =
        (0..dim).map(|_| c(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))).collect();
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|z| z / norm).collect()
}
