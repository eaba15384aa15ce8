//! Small dense linear-algebra helpers on top of nalgebra.
//!
//! Tensors in this crate store data row-major, while nalgebra is
//! column-major, so the conversion helpers here are used everywhere a
//! tensor is reshaped into a matrix.
//!
//! SVDs and Hermitian eigendecompositions go through faer: nalgebra's
//! complex SVD can return orthonormal factors that do not reproduce the
//! input (errors of 1e-3 on well-conditioned 4x4 blocks).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn from_rowmajor(rows: usize, cols: usize, data: &[C64]) -> CMatrix {
    DMatrix::from_row_slice(rows, cols, data)
}

pub fn to_rowmajor(m: &CMatrix) -> Vec<C64> {
    m.transpose().as_slice().to_vec()
}

pub fn identity(dim: usize) -> CMatrix {
    DMatrix::identity(dim, dim)
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Singular value decomposition with truncation.
pub struct TruncatedSvd {
    pub u: CMatrix,
    pub s: Vec<f64>,
    pub vt: CMatrix,
    /// Sum of squared discarded singular values.
    pub discarded: f64,
}

/// Keeps at most `max_rank` singular values and drops those with
/// `s_i <= rel_tol * ||s||_2`. At least one value is always kept.
pub fn truncated_svd(m: CMatrix, max_rank: usize, rel_tol: f64) -> TruncatedSvd {
    let (rows, cols) = m.shape();
    let svd = to_faer(&m).thin_svd().expect("svd converges");
    let (u, s, v) = (svd.U(), svd.S(), svd.V());
    let s_all: Vec<f64> = (0..rows.min(cols)).map(|i| s[i].re).collect();
    let total: f64 = s_all.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut keep = s_all.len().min(max_rank.max(1));
    while keep > 1 && s_all[keep - 1] <= rel_tol * total {
        keep -= 1;
    }
    let discarded = s_all[keep..].iter().map(|x| x * x).sum();
    TruncatedSvd {
        u: CMatrix::from_fn(rows, keep, |i, j| u[(i, j)]),
        s: s_all[..keep].to_vec(),
        vt: CMatrix::from_fn(keep, cols, |i, j| v[(j, i)].conj()),
        discarded,
    }
}

fn to_faer(m: &CMatrix) -> faer::Mat<C64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Thin QR: `m = q * r` with `q` having orthonormal columns.
pub fn qr(m: CMatrix) -> (CMatrix, CMatrix) {
    let qr = m.qr();
    (qr.q(), qr.r())
}

/// Thin LQ: `m = l * q` with `q` having orthonormal rows.
pub fn lq(m: &CMatrix) -> (CMatrix, CMatrix) {
    let (q, r) = qr(m.adjoint());
    (r.adjoint(), q.adjoint())
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn eigh(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let herm = (m + m.adjoint()) * c(0.5, 0.0);
    let eig = to_faer(&herm).self_adjoint_eigen(faer::Side::Lower).expect("eigensolver converges");
    let (s, u) = (eig.S(), eig.U());
    let dim = m.nrows();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| s[a].re.total_cmp(&s[b].re));
    let vals = order.iter().map(|&i| s[i].re).collect();
    let vecs = CMatrix::from_fn(dim, dim, |i, j| u[(i, order[j])]);
    (vals, vecs)
}

pub fn eigvalsh(m: &CMatrix) -> Vec<f64> {
    eigh(m).0
}

/// `f(H)` for Hermitian `H` through its spectral decomposition.
pub fn hermitian_function(h: &CMatrix, f: impl Fn(f64) -> C64) -> CMatrix {
    let (vals, vecs) = eigh(h);
    let mut scaled = vecs.clone();
    for (j, &v) in vals.iter().enumerate() {
        let fv = f(v);
        for x in scaled.column_mut(j).iter_mut() {
            *x *= fv;
        }
    }
    scaled * vecs.adjoint()
}

/// Largest singular value.
pub fn op_norm(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let s = to_faer(m).singular_values().expect("svd converges");
    s.into_iter().fold(0.0, f64::max)
}

pub fn frobenius(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `min_lambda ||A - lambda 1||` for Hermitian `A`: half the spectral width.
pub fn spectral_half_width(m: &CMatrix) -> f64 {
    let vals = eigvalsh(m);
    (vals[vals.len() - 1] - vals[0]) / 2.0
}

pub fn random_complex_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| {
        c(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    })
}

/// Haar-random unitary from the QR decomposition of a Ginibre matrix.
pub fn random_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMatrix {
    let g = random_complex_matrix(dim, dim, rng);
    let (mut q, r) = qr(g);
    for j in 0..dim {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { ONE };
        for x in q.column_mut(j).iter_mut() {
            *x *= phase;
        }
    }
    q
}

pub fn random_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<C64> {
    let v = DVector::from_fn(dim, |_, _| {
        c(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    });
    let n = v.norm();
    v / c(n, 0.0)
}

pub fn is_unitary(m: &CMatrix, tol: f64) -> bool {
    m.is_square() && op_norm(&(m.adjoint() * m - identity(m.nrows()))) <= tol
}

pub fn pauli_x() -> CMatrix {
    from_rowmajor(2, 2, &[ZERO, ONE, ONE, ZERO])
}

pub fn pauli_y() -> CMatrix {
    from_rowmajor(2, 2, &[ZERO, -I, I, ZERO])
}

pub fn pauli_z() -> CMatrix {
    from_rowmajor(2, 2, &[ONE, ZERO, ZERO, -ONE])
}

pub fn hadamard() -> CMatrix {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    from_rowmajor(2, 2, &[c(h, 0.0), c(h, 0.0), c(h, 0.0), c(-h, 0.0)])
}

/// Dense embedding of single-site operators into an `n`-qubit operator,
/// site 0 being the most significant tensor factor.
pub fn embed_ops(n: usize, ops: &[(usize, CMatrix)]) -> CMatrix {
    let mut out = identity(1);
    for q in 0..n {
        let factor = ops
            .iter()
            .find(|(site, _)| *site == q)
            .map(|(_, m)| m.clone())
            .unwrap_or_else(|| identity(2));
        out = kron(&out, &factor);
    }
    out
}

/// Dense embedding of a 4x4 operator acting on qubits `(a, b)` of `n`,
/// with `a` the first tensor factor. `a` and `b` need not be adjacent or ordered.
pub fn embed_two_site(n: usize, a: usize, b: usize, g: &CMatrix) -> CMatrix {
    let dim = 1usize << n;
    let sa = n - 1 - a;
    let sb = n - 1 - b;
    let mut out = CMatrix::zeros(dim, dim);
    for col in 0..dim {
        let ia = (col >> sa) & 1;
        let ib = (col >> sb) & 1;
        let rest = col & !(1 << sa) & !(1 << sb);
        for oa in 0..2 {
            for ob in 0..2 {
                let v = g[(oa * 2 + ob, ia * 2 + ib)];
                if v != ZERO {
                    out[(rest | (oa << sa) | (ob << sb), col)] += v;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rowmajor_roundtrip() {
        let data: Vec<C64> = (0..6).map(|i| c(i as f64, -(i as f64))).collect();
        let m = from_rowmajor(2, 3, &data);
        assert_eq!(m[(0, 2)], c(2.0, -2.0));
        assert_eq!(m[(1, 0)], c(3.0, -3.0));
        assert_eq!(to_rowmajor(&m), data);
    }

    #[test]
    fn random_unitary_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_unitary(8, &mut rng);
        assert!(is_unitary(&u, 1e-12));
    }

    #[test]
    fn eigh_sorted_and_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_complex_matrix(5, 5, &mut rng);
        let h = &a + a.adjoint();
        let (vals, vecs) = eigh(&h);
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        let d = CMatrix::from_diagonal(&DVector::from_iterator(5, vals.iter().map(|&v| c(v, 0.0))));
        let back = &vecs * d * vecs.adjoint();
        assert!(frobenius(&(back - h)) < 1e-10);
    }

    #[test]
    fn truncated_svd_reports_discarded_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_complex_matrix(6, 4, &mut rng);
        let full = m.clone().singular_values();
        let t = truncated_svd(m, 2, 0.0);
        assert_eq!(t.s.len(), 2);
        let expected: f64 = full.iter().skip(2).map(|x| x * x).sum();
        assert!((t.discarded - expected).abs() < 1e-10);
    }

    #[test]
    fn half_width_of_projector() {
        let m = from_rowmajor(2, 2, &[ZERO, ZERO, ZERO, ONE]);
        assert!((spectral_half_width(&m) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn two_site_embedding_matches_kron_for_adjacent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = random_unitary(4, &mut rng);
        let direct = kron(&kron(&identity(2), &g), &identity(2));
        assert!(frobenius(&(embed_two_site(4, 1, 2, &g) - direct)) < 1e-14);
    }
}
