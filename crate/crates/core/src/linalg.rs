//! Dense complex linear algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

pub use num_complex::Complex64 as C64;

pub type CMatrix = DMatrix<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Standard complex Gaussian sample with E|z|² = 1.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Haar-random pure state of dimension `dim`.
pub fn random_state<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<C64> {
    let mut v: Vec<C64> = (0..dim).map(|_| complex_gaussian(rng)).collect();
    normalize(&mut v);
    v
}

pub fn norm_sqr(v: &[C64]) -> f64 {
    v.iter().map(|a| a.norm_sqr()).sum()
}

pub fn normalize(v: &mut [C64]) {
    let n = norm_sqr(v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|a| *a /= n);
    }
}

pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Maximum entrywise deviation of `U†U` from the identity.
pub fn unitarity_defect(u: &CMatrix) -> f64 {
    if !u.is_square() {
        return f64::INFINITY;
    }
    isometry_defect(u)
}

/// Maximum entrywise deviation of `V†V` from the identity (columns orthonormal).
pub fn isometry_defect(v: &CMatrix) -> f64 {
    let g = v.adjoint() * v;
    let mut worst = 0.0f64;
    for (idx, z) in g.iter().enumerate() {
        let (r, c) = (idx % g.nrows(), idx / g.nrows());
        let target = if r == c { ONE } else { ZERO };
        worst = worst.max((z - target).norm());
    }
    worst
}

pub fn is_power_of_two(n: usize) -> bool {
    n != 0 && n & (n - 1) == 0
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    CMatrix::from_fn(ar * br, ac * bc, |r, c| a[(r / br, c / bc)] * b[(r % br, c % bc)])
}

/// Projector `|v⟩⟨v|`.
pub fn outer(v: &[C64]) -> CMatrix {
    let n = v.len();
    CMatrix::from_fn(n, n, |r, c| v[r] * v[c].conj())
}

pub fn hermiticity_defect(m: &CMatrix) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    (m - m.adjoint()).iter().fold(0.0f64, |acc, z| acc.max(z.norm()))
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues in ascending order.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    hermitian_eigen(m).0
}

/// `max ‖V†V x − x‖` over two fixed probe vectors `x`. Zero for an isometry;
/// linear rather than quadratic in the column count.
pub fn isometry_probe_defect(v: &CMatrix) -> f64 {
    let n = v.ncols();
    [0.7f64, 1.9]
        .iter()
        .map(|&w| {
            let mut x: Vec<C64> =
                (0..n).map(|k| C64::from_polar(1.0 + (k % 3) as f64, w * k as f64)).collect();
            normalize(&mut x);
            let x = DVector::from_vec(x);
            let back = v.adjoint() * (v * &x);
            (back - x).norm()
        })
        .fold(0.0, f64::max)
}

fn symmetrize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).map(|z| z * 0.5)
}

/// Applies a real function to the spectrum of a Hermitian matrix.
pub fn hermitian_function(m: &CMatrix, f: impl Fn(f64) -> f64) -> CMatrix {
    let (vals, vecs) = hermitian_eigen(m);
    let d = DVector::from_iterator(vals.len(), vals.iter().map(|&x| C64::new(f(x), 0.0)));
    &vecs * CMatrix::from_diagonal(&d) * vecs.adjoint()
}

/// Principal square root of a positive semidefinite matrix; negative
/// round-off eigenvalues are clamped to zero.
pub fn psd_sqrt(m: &CMatrix) -> CMatrix {
    hermitian_function(m, |x| x.max(0.0).sqrt())
}

/// Unitary polar factor `W` of a square matrix `M`, the unitary maximizing
/// `Re Tr(W M)`, together with the singular values of `M` in descending
/// order. Built from the eigenvectors of `M†M`; the range of `M` is completed
/// to a basis from the spectrum of the complementary projector.
pub fn polar_factor(m: &CMatrix) -> (CMatrix, Vec<f64>) {
    let n = m.nrows();
    let (_, vecs) = hermitian_eigen(&(m.adjoint() * m));
    let right: Vec<DVector<C64>> = (0..n).rev().map(|c| vecs.column(c).into_owned()).collect();
    let images: Vec<DVector<C64>> = right.iter().map(|v| m * v).collect();
    let singular: Vec<f64> = images.iter().map(|x| x.norm()).collect();
    let floor = RANK_TOL * singular.iter().copied().fold(0.0, f64::max);
    let mut left: Vec<DVector<C64>> = Vec::with_capacity(n);
    for (mut e, &s) in images.into_iter().zip(&singular) {
        if s <= floor {
            break;
        }
        for _ in 0..2 {
            for u in &left {
                let p = u.dotc(&e);
                e -= u * p;
            }
        }
        let norm = e.norm();
        left.push(e / C64::new(norm, 0.0));
    }
    let mut complement = CMatrix::identity(n, n);
    for u in &left {
        complement -= u * u.adjoint();
    }
    let (_, basis) = hermitian_eigen(&complement);
    let missing = n - left.len();
    left.extend((n - missing..n).map(|c| basis.column(c).into_owned()));
    let mut w = CMatrix::zeros(n, n);
    for (u, v) in left.iter().zip(&right) {
        w += v * u.adjoint();
    }
    (w, singular)
}

/// Singular values below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-10;

pub fn trace(m: &CMatrix) -> C64 {
    m.diagonal().iter().sum()
}

/// Dense matrix-vector product on slices.
pub fn mat_vec(m: &CMatrix, v: &[C64]) -> Vec<C64> {
    let mut out = vec![ZERO; m.nrows()];
    for (c, &x) in v.iter().enumerate() {
        if x == ZERO {
            continue;
        }
        for (o, &u) in out.iter_mut().zip(m.column(c).iter()) {
            *o += u * x;
        }
    }
    out
}

/// Single-qubit and two-qubit gates used throughout.
pub mod gates {
    use super::{CMatrix, C64, ONE, ZERO};

    pub fn hadamard() -> CMatrix {
        let h = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        CMatrix::from_row_slice(2, 2, &[h, h, h, -h])
    }

    pub fn pauli_x() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
    }

    pub fn phase_s() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, C64::new(0.0, 1.0)])
    }

    pub fn phase_t() -> CMatrix {
        let w = C64::from_polar(1.0, std::f64::consts::FRAC_PI_4);
        CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, w])
    }

    /// CNOT with the first qubit as control.
    pub fn cnot() -> CMatrix {
        let mut m = CMatrix::zeros(4, 4);
        m[(0, 0)] = ONE;
        m[(1, 1)] = ONE;
        m[(2, 3)] = ONE;
        m[(3, 2)] = ONE;
        m
    }

    pub fn swap() -> CMatrix {
        let mut m = CMatrix::zeros(4, 4);
        m[(0, 0)] = ONE;
        m[(1, 2)] = ONE;
        m[(2, 1)] = ONE;
        m[(3, 3)] = ONE;
        m
    }
}
