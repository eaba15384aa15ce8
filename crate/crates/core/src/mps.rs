//! Open-boundary matrix product states.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{self, c, from_rowmajor, to_rowmajor, CMatrix, C64, ONE, ZERO};

/// Largest chain that `to_dense` will expand for states.
pub const STATE_DENSE_CAP: usize = 20;

/// Rank-3 tensor `A[a, s, b]` stored row-major with shape `(left, phys, right)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    pub left: usize,
    pub phys: usize,
    pub right: usize,
    pub data: Vec<C64>,
}

impl Tensor3 {
    pub fn zeros(left: usize, phys: usize, right: usize) -> Self {
        Self { left, phys, right, data: vec![ZERO; left * phys * right] }
    }

    pub fn from_data(left: usize, phys: usize, right: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != left * phys * right {
            return Err(Error::Dimension(format!(
                "tensor ({left}, {phys}, {right}) needs {} entries, got {}",
                left * phys * right,
                data.len()
            )));
        }
        Ok(Self { left, phys, right, data })
    }

    #[inline]
    pub fn idx(&self, a: usize, s: usize, b: usize) -> usize {
        (a * self.phys + s) * self.right + b
    }

    #[inline]
    pub fn get(&self, a: usize, s: usize, b: usize) -> C64 {
        self.data[self.idx(a, s, b)]
    }

    /// Matrix with rows `(a, s)` and columns `b`.
    pub fn left_matrix(&self) -> CMatrix {
        from_rowmajor(self.left * self.phys, self.right, &self.data)
    }

    /// Matrix with rows `a` and columns `(s, b)`.
    pub fn right_matrix(&self) -> CMatrix {
        from_rowmajor(self.left, self.phys * self.right, &self.data)
    }

    pub fn from_left_matrix(m: &CMatrix, left: usize, phys: usize) -> Self {
        debug_assert_eq!(m.nrows(), left * phys);
        Self { left, phys, right: m.ncols(), data: to_rowmajor(m) }
    }

    pub fn from_right_matrix(m: &CMatrix, phys: usize, right: usize) -> Self {
        debug_assert_eq!(m.ncols(), phys * right);
        Self { left: m.nrows(), phys, right, data: to_rowmajor(m) }
    }

    /// The `left x right` matrix at physical index `s`.
    pub fn slice(&self, s: usize) -> CMatrix {
        CMatrix::from_fn(self.left, self.right, |a, b| self.get(a, s, b))
    }

    pub fn conj(&self) -> Self {
        Self { data: self.data.iter().map(|z| z.conj()).collect(), ..self.clone() }
    }

    pub fn scaled(&self, f: C64) -> Self {
        Self { data: self.data.iter().map(|z| z * f).collect(), ..self.clone() }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Canonical {
    None,
    Left,
    Right,
    Mixed(usize),
}

/// Bond-dimension and singular-value cutoffs for compression.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Truncation {
    pub max_bond: usize,
    /// Singular values `s_i <= svd_tol * ||s||_2` are dropped.
    pub svd_tol: f64,
}

impl Truncation {
    pub fn exact() -> Self {
        Self { max_bond: usize::MAX, svd_tol: 0.0 }
    }

    pub fn bond(max_bond: usize) -> Self {
        Self { max_bond, ..Self::default() }
    }
}

impl Default for Truncation {
    fn default() -> Self {
        Self { max_bond: usize::MAX, svd_tol: 1e-12 }
    }
}

/// Reduced density matrix of `width` consecutive sites starting at `start`.
#[derive(Clone, Debug)]
pub struct WindowDensityMatrix {
    pub start: usize,
    pub width: usize,
    pub matrix: CMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mps {
    tensors: Vec<Tensor3>,
    canonical: Canonical,
}

impl Mps {
    pub fn new(tensors: Vec<Tensor3>) -> Result<Self> {
        if tensors.is_empty() {
            return Err(Error::Invalid("an MPS needs at least one site".into()));
        }
        if tensors[0].left != 1 || tensors[tensors.len() - 1].right != 1 {
            return Err(Error::Dimension("boundary bonds must be 1".into()));
        }
        for (k, w) in tensors.windows(2).enumerate() {
            if w[0].right != w[1].left {
                return Err(Error::Dimension(format!(
                    "bond mismatch between sites {k} and {}: {} vs {}",
                    k + 1,
                    w[0].right,
                    w[1].left
                )));
            }
        }
        Ok(Self { tensors, canonical: Canonical::None })
    }

    pub(crate) fn from_parts(tensors: Vec<Tensor3>, canonical: Canonical) -> Self {
        Self { tensors, canonical }
    }

    pub fn product_state(states: &[[C64; 2]]) -> Self {
        let tensors = states
            .iter()
            .map(|v| Tensor3 { left: 1, phys: 2, right: 1, data: v.to_vec() })
            .collect();
        Self { tensors, canonical: Canonical::None }
    }

    /// Computational basis state; `bits[0]` is site 0.
    pub fn basis_state(bits: &[usize]) -> Self {
        let states: Vec<[C64; 2]> =
            bits.iter().map(|&b| if b == 0 { [ONE, ZERO] } else { [ZERO, ONE] }).collect();
        Self::product_state(&states)
    }

    /// Normalized random state with bonds `min(bond, 2^k, 2^(L-k))`.
    pub fn random<R: Rng + ?Sized>(len: usize, bond: usize, rng: &mut R) -> Self {
        let dims = max_bonds(len, 2, bond);
        let tensors = (0..len)
            .map(|k| {
                let (l, r) = (dims[k], dims[k + 1]);
                let data = (0..l * 2 * r)
                    .map(|_| c(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)))
                    .collect();
                Tensor3 { left: l, phys: 2, right: r, data }
            })
            .collect();
        let mut psi = Self { tensors, canonical: Canonical::None };
        psi.normalize();
        psi
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensors(&self) -> &[Tensor3] {
        &self.tensors
    }

    pub fn tensor(&self, k: usize) -> &Tensor3 {
        &self.tensors[k]
    }

    pub fn into_tensors(self) -> Vec<Tensor3> {
        self.tensors
    }

    pub fn canonical(&self) -> Canonical {
        self.canonical
    }

    pub fn phys_dim(&self) -> usize {
        self.tensors[0].phys
    }

    /// Internal bond dimensions, one per cut (`len - 1` entries).
    pub fn bond_dims(&self) -> Vec<usize> {
        self.tensors[..self.len() - 1].iter().map(|t| t.right).collect()
    }

    pub fn max_bond(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    pub fn inner(&self, other: &Mps) -> Result<C64> {
        inner(self, other)
    }

    pub fn norm_sqr(&self) -> f64 {
        match self.canonical {
            Canonical::Mixed(k) => self.tensors[k].norm_sqr(),
            _ => inner(self, self).map(|z| z.re).unwrap_or(0.0),
        }
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Scales to unit norm; the factor goes into the center tensor when
    /// the state is canonical, else into site 0.
    pub fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            let k = match self.canonical {
                Canonical::Mixed(k) => k,
                Canonical::Right => 0,
                Canonical::Left => self.len() - 1,
                Canonical::None => 0,
            };
            self.tensors[k] = self.tensors[k].scaled(c(1.0 / n, 0.0));
            if let Canonical::Mixed(k) = self.canonical {
                if k == 0 {
                    self.canonical = Canonical::Right;
                } else if k == self.len() - 1 {
                    self.canonical = Canonical::Left;
                }
            }
        }
    }

    pub fn normalized(mut self) -> Self {
        self.normalize();
        self
    }

    pub fn scaled(&self, f: C64) -> Self {
        let mut out = self.clone();
        let k = match self.canonical {
            Canonical::Mixed(k) => k,
            Canonical::Left => self.len() - 1,
            Canonical::Right | Canonical::None => 0,
        };
        out.tensors[k] = out.tensors[k].scaled(f);
        if f.norm() != 1.0 {
            out.canonical = match self.canonical {
                Canonical::Left => Canonical::Mixed(self.len() - 1),
                Canonical::Right => Canonical::Mixed(0),
                other => other,
            };
        }
        out
    }

    /// Returns the same state with every tensor left of `center` left-isometric
    /// and every tensor right of it right-isometric.
    pub fn canonicalized(&self, center: usize) -> Self {
        let mut out = self.clone();
        out.canonicalize(center);
        out
    }

    pub fn canonicalize(&mut self, center: usize) {
        assert!(center < self.len(), "center {center} out of range");
        for k in 0..center {
            let (q, r) = linalg::qr(self.tensors[k].left_matrix());
            let t = &self.tensors[k];
            let (l, d) = (t.left, t.phys);
            self.tensors[k] = Tensor3::from_left_matrix(&q, l, d);
            let next = &self.tensors[k + 1];
            let m = r * next.right_matrix();
            self.tensors[k + 1] = Tensor3::from_right_matrix(&m, next.phys, next.right);
        }
        for k in (center + 1..self.len()).rev() {
            let (lmat, q) = linalg::lq(&self.tensors[k].right_matrix());
            let t = &self.tensors[k];
            let (d, r) = (t.phys, t.right);
            self.tensors[k] = Tensor3::from_right_matrix(&q, d, r);
            let prev = &self.tensors[k - 1];
            let m = prev.left_matrix() * lmat;
            self.tensors[k - 1] = Tensor3::from_left_matrix(&m, prev.left, prev.phys);
        }
        let norm_one = (self.tensors[center].norm_sqr() - 1.0).abs() < 1e-12;
        self.canonical = if norm_one && center == 0 {
            Canonical::Right
        } else if norm_one && center == self.len() - 1 {
            Canonical::Left
        } else {
            Canonical::Mixed(center)
        };
    }

    /// Deviation of tensor `k` from the left-isometry condition.
    pub fn left_isometry_error(&self, k: usize) -> f64 {
        let m = self.tensors[k].left_matrix();
        linalg::frobenius(&(m.adjoint() * &m - linalg::identity(m.ncols())))
    }

    /// Deviation of tensor `k` from the right-isometry condition.
    pub fn right_isometry_error(&self, k: usize) -> f64 {
        let m = self.tensors[k].right_matrix();
        linalg::frobenius(&(&m * m.adjoint() - linalg::identity(m.nrows())))
    }

    /// Sweep of truncated SVDs; returns the compressed state in mixed-canonical
    /// form (center on the last site) and the 2-norm bound `sqrt(sum discarded)`.
    pub fn compress(&self, trunc: Truncation) -> (Mps, f64) {
        let caps = vec![trunc.max_bond; self.len().saturating_sub(1)];
        self.compress_bonds(&caps, trunc.svd_tol)
    }

    /// Like [`Mps::compress`] with a separate bond cap for every cut.
    pub fn compress_bonds(&self, caps: &[usize], svd_tol: f64) -> (Mps, f64) {
        assert_eq!(caps.len(), self.len() - 1, "one cap per cut");
        let mut t = self.canonicalized(0).tensors;
        let mut discarded = 0.0;
        for k in 0..t.len() - 1 {
            let svd = linalg::truncated_svd(t[k].left_matrix(), caps[k], svd_tol);
            discarded += svd.discarded;
            t[k] = Tensor3::from_left_matrix(&svd.u, t[k].left, t[k].phys);
            let mut sv = svd.vt;
            for (i, s) in svd.s.iter().enumerate() {
                for x in sv.row_mut(i).iter_mut() {
                    *x *= s;
                }
            }
            let next = &t[k + 1];
            let m = sv * next.right_matrix();
            t[k + 1] = Tensor3::from_right_matrix(&m, next.phys, next.right);
        }
        let last = t.len() - 1;
        (Mps::from_parts(t, Canonical::Mixed(last)), discarded.sqrt())
    }

    /// Dense state vector, site 0 most significant.
    pub fn to_dense(&self) -> Result<DVector<C64>> {
        if self.len() > STATE_DENSE_CAP {
            return Err(Error::CapExceeded(format!(
                "state has {} sites, dense cap is {STATE_DENSE_CAP}",
                self.len()
            )));
        }
        let mut m = self.tensors[0].left_matrix();
        for t in &self.tensors[1..] {
            let prod = m * t.right_matrix();
            let rows = prod.nrows() * t.phys;
            m = from_rowmajor(rows, t.right, &to_rowmajor(&prod));
        }
        Ok(DVector::from_column_slice(m.as_slice()))
    }

    /// Successive SVDs of a dense vector with `phys^len` entries.
    pub fn from_dense(v: &DVector<C64>, phys: usize, len: usize, trunc: Truncation) -> Result<(Mps, f64)> {
        if phys.pow(len as u32) != v.len() {
            return Err(Error::Dimension(format!(
                "vector of length {} is not {phys}^{len}",
                v.len()
            )));
        }
        let mut tensors = Vec::with_capacity(len);
        let mut rest = from_rowmajor(phys, v.len() / phys, v.as_slice());
        let mut left = 1;
        let mut discarded = 0.0;
        for _ in 0..len - 1 {
            let svd = linalg::truncated_svd(rest, trunc.max_bond, trunc.svd_tol);
            discarded += svd.discarded;
            tensors.push(Tensor3::from_left_matrix(&svd.u, left, phys));
            let k = svd.s.len();
            let mut sv = svd.vt;
            for (i, s) in svd.s.iter().enumerate() {
                for x in sv.row_mut(i).iter_mut() {
                    *x *= s;
                }
            }
            let cols = sv.ncols() / phys;
            rest = from_rowmajor(k * phys, cols, &to_rowmajor(&sv));
            left = k;
        }
        tensors.push(Tensor3::from_left_matrix(&rest, left, phys));
        let last = len - 1;
        Ok((Mps::from_parts(tensors, Canonical::Mixed(last)), discarded.sqrt()))
    }

    /// Exact reduced density matrix of sites `k..k+r`, normalized to unit trace.
    pub fn reduced_density(&self, k: usize, r: usize) -> Result<WindowDensityMatrix> {
        if r == 0 || k + r > self.len() {
            return Err(Error::OutOfRange(format!(
                "window ({k}, {r}) on a chain of {} sites",
                self.len()
            )));
        }
        let left = left_environment(&self.tensors[..k]);
        let right = right_environment(&self.tensors[k + r..]);
        let matrix = window_density(&self.tensors[k..k + r], &left, &right);
        Ok(WindowDensityMatrix { start: k, width: r, matrix })
    }

    /// All windows of width `r`, sharing the environment contractions.
    pub fn all_reduced_densities(&self, r: usize) -> Result<Vec<WindowDensityMatrix>> {
        if r == 0 || r > self.len() {
            return Err(Error::OutOfRange(format!("width {r} on {} sites", self.len())));
        }
        let lefts = left_environments(&self.tensors);
        let rights = right_environments(&self.tensors);
        Ok((0..=self.len() - r)
            .map(|k| WindowDensityMatrix {
                start: k,
                width: r,
                matrix: window_density(&self.tensors[k..k + r], &lefts[k], &rights[k + r]),
            })
            .collect())
    }
}

/// `<psi|phi>` by left-to-right transfer contraction.
pub fn inner(psi: &Mps, phi: &Mps) -> Result<C64> {
    if psi.len() != phi.len() {
        return Err(Error::Dimension(format!("lengths {} and {}", psi.len(), phi.len())));
    }
    let mut env = CMatrix::from_element(1, 1, ONE);
    for (a, b) in psi.tensors.iter().zip(&phi.tensors) {
        if a.phys != b.phys {
            return Err(Error::Dimension("physical dimensions differ".into()));
        }
        env = transfer_left(&env, a, b);
    }
    Ok(env[(0, 0)])
}

/// `env'[b, b'] = sum_s A_s^dag env B_s`, bra tensor `a`, ket tensor `b`.
pub(crate) fn transfer_left(env: &CMatrix, a: &Tensor3, b: &Tensor3) -> CMatrix {
    // env * B as rows a, columns (s, b').
    let eb = env * b.right_matrix();
    let eb = from_rowmajor(a.left * a.phys, b.right, &to_rowmajor(&eb));
    a.left_matrix().adjoint() * eb
}

/// `env'[a, a'] = sum_s A_s env B_s^dag`, ket tensor `a`, bra tensor `b`.
pub(crate) fn transfer_right(env: &CMatrix, a: &Tensor3, b: &Tensor3) -> CMatrix {
    let ae = a.left_matrix() * env;
    let ae = from_rowmajor(a.left, a.phys * b.right, &to_rowmajor(&ae));
    ae * b.right_matrix().adjoint()
}

fn left_environment(tensors: &[Tensor3]) -> CMatrix {
    let mut env = CMatrix::from_element(1, 1, ONE);
    for t in tensors {
        env = transfer_left(&env, t, t);
    }
    env
}

fn right_environment(tensors: &[Tensor3]) -> CMatrix {
    let mut env = CMatrix::from_element(1, 1, ONE);
    for t in tensors.iter().rev() {
        env = transfer_right(&env, t, t);
    }
    env
}

/// `out[k]` is the environment of sites `0..k` (`len + 1` entries).
pub(crate) fn left_environments(tensors: &[Tensor3]) -> Vec<CMatrix> {
    let mut out = Vec::with_capacity(tensors.len() + 1);
    out.push(CMatrix::from_element(1, 1, ONE));
    for t in tensors {
        let next = transfer_left(out.last().unwrap(), t, t);
        out.push(next);
    }
    out
}

/// `out[k]` is the environment of sites `k..len` (`len + 1` entries).
pub(crate) fn right_environments(tensors: &[Tensor3]) -> Vec<CMatrix> {
    let mut out = vec![CMatrix::from_element(1, 1, ONE); tensors.len() + 1];
    for k in (0..tensors.len()).rev() {
        out[k] = transfer_right(&out[k + 1], &tensors[k], &tensors[k]);
    }
    out
}

/// Contraction of consecutive tensors into a matrix with rows `(a, s_1..s_r)`
/// and columns `b`.
pub(crate) fn window_tensor(tensors: &[Tensor3]) -> CMatrix {
    let mut m = tensors[0].left_matrix();
    for t in &tensors[1..] {
        let prod = m * t.right_matrix();
        let rows = prod.nrows() * t.phys;
        m = from_rowmajor(rows, t.right, &to_rowmajor(&prod));
    }
    m
}

/// Density matrix of a window given the bra-ket left environment
/// (`sum conj(x) x'`) and the ket-bra right environment.
pub(crate) fn window_density(tensors: &[Tensor3], left: &CMatrix, right: &CMatrix) -> CMatrix {
    let dl = tensors[0].left;
    let dr = tensors[tensors.len() - 1].right;
    let dim: usize = tensors.iter().map(|t| t.phys).product();
    let w = window_tensor(tensors);
    // wmat[s, (a, b)] = W_s[a, b]
    let mut wmat = CMatrix::zeros(dim, dl * dr);
    let mut zmat = CMatrix::zeros(dim, dl * dr);
    for s in 0..dim {
        let ws = CMatrix::from_fn(dl, dr, |a, b| w[(a * dim + s, b)]);
        let zs = left * &ws * right;
        for a in 0..dl {
            for b in 0..dr {
                wmat[(s, a * dr + b)] = ws[(a, b)];
                zmat[(s, a * dr + b)] = zs[(a, b)];
            }
        }
    }
    let rho = zmat * wmat.adjoint();
    let tr: C64 = rho.trace();
    let rho = rho / tr;
    (&rho + rho.adjoint()) * c(0.5, 0.0)
}

/// Bond caps `min(bond, d^k, d^(L-k))` including the two boundary bonds.
pub(crate) fn max_bonds(len: usize, phys: usize, bond: usize) -> Vec<usize> {
    (0..=len)
        .map(|k| {
            let lhs = phys.checked_pow(k as u32).unwrap_or(usize::MAX);
            let rhs = phys.checked_pow((len - k) as u32).unwrap_or(usize::MAX);
            bond.min(lhs).min(rhs)
        })
        .collect()
}

/// Direct sum of two chains with equal length and physical dimension.
/// The result represents the sum of the two vectors.
pub(crate) fn direct_sum(a: &[Tensor3], b: &[Tensor3]) -> Vec<Tensor3> {
    let n = a.len();
    assert_eq!(n, b.len());
    if n == 1 {
        let data = a[0].data.iter().zip(&b[0].data).map(|(x, y)| x + y).collect();
        return vec![Tensor3 { data, ..a[0].clone() }];
    }
    (0..n)
        .map(|k| {
            let (ta, tb) = (&a[k], &b[k]);
            let d = ta.phys;
            let left = if k == 0 { 1 } else { ta.left + tb.left };
            let right = if k == n - 1 { 1 } else { ta.right + tb.right };
            let mut t = Tensor3::zeros(left, d, right);
            let (la, ra) = (if k == 0 { 0 } else { ta.left }, if k == n - 1 { 0 } else { ta.right });
            for x in 0..ta.left {
                for s in 0..d {
                    for y in 0..ta.right {
                        let i = t.idx(x, s, y);
                        t.data[i] = ta.get(x, s, y);
                    }
                }
            }
            for x in 0..tb.left {
                for s in 0..d {
                    for y in 0..tb.right {
                        let i = t.idx(x + la, s, y + ra);
                        t.data[i] = tb.get(x, s, y);
                    }
                }
            }
            t
        })
        .collect()
}

/// `a + b` as an MPS whose bond dimensions are the sums of the inputs'.
pub fn add(a: &Mps, b: &Mps) -> Result<Mps> {
    if a.len() != b.len() || a.phys_dim() != b.phys_dim() {
        return Err(Error::Dimension("sum of incompatible states".into()));
    }
    Ok(Mps::from_parts(direct_sum(&a.tensors, &b.tensors), Canonical::None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn basis_state_dense() {
        let psi = Mps::basis_state(&[0, 1]);
        let v = psi.to_dense().unwrap();
        assert_eq!(v[1], ONE);
        assert_eq!(v.iter().filter(|z| z.norm() > 0.0).count(), 1);
    }

    #[test]
    fn orthogonal_basis_states() {
        let a = Mps::basis_state(&[0, 0]);
        let b = Mps::basis_state(&[1, 1]);
        assert_eq!(a.inner(&b).unwrap(), ZERO);
    }

    #[test]
    fn random_state_is_normalized() {
        let psi = Mps::random(8, 3, &mut rng(1));
        assert!((psi.inner(&psi).unwrap().re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn canonical_form_isometries() {
        let psi = Mps::random(8, 4, &mut rng(2));
        let mixed = psi.canonicalized(3);
        for k in 0..3 {
            assert!(mixed.left_isometry_error(k) < 1e-10);
        }
        for k in 4..8 {
            assert!(mixed.right_isometry_error(k) < 1e-10);
        }
        let f = psi.inner(&mixed).unwrap().norm();
        assert!((f - 1.0).abs() < 1e-12);
    }

    #[test]
    fn product_state_compresses_losslessly() {
        let psi = Mps::basis_state(&[0, 1, 1, 0]);
        let (out, err) = psi.compress(Truncation::bond(1));
        assert_eq!(err, 0.0);
        assert!((psi.inner(&out).unwrap().norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn compression_error_bound_holds() {
        let psi = Mps::random(10, 8, &mut rng(3));
        let (out, bound) = psi.compress(Truncation { max_bond: 4, svd_tol: 0.0 });
        assert!(out.max_bond() <= 4);
        let diff = psi.to_dense().unwrap() - out.to_dense().unwrap();
        assert!(diff.norm_squared() <= 2.0 * bound * bound + 1e-14);
    }

    #[test]
    fn dense_roundtrip() {
        let v = linalg::random_vector(256, &mut rng(4));
        let (psi, err) = Mps::from_dense(&v, 2, 8, Truncation::exact()).unwrap();
        assert!(err < 1e-12);
        assert!((psi.to_dense().unwrap() - v).norm() < 1e-12);
    }

    #[test]
    fn dense_cap_is_enforced() {
        let psi = Mps::basis_state(&[0; 21]);
        assert!(matches!(psi.to_dense(), Err(Error::CapExceeded(_))));
    }

    #[test]
    fn bell_pair_marginal_is_maximally_mixed() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let v = DVector::from_vec(vec![c(h, 0.0), ZERO, ZERO, c(h, 0.0)]);
        let (psi, _) = Mps::from_dense(&v, 2, 2, Truncation::exact()).unwrap();
        for k in 0..2 {
            let rho = psi.reduced_density(k, 1).unwrap().matrix;
            assert!((rho[(0, 0)].re - 0.5).abs() < 1e-14);
            assert!(rho[(0, 1)].norm() < 1e-14);
        }
    }

    #[test]
    fn window_out_of_range() {
        let psi = Mps::basis_state(&[0, 0, 0]);
        assert!(psi.reduced_density(2, 2).is_err());
    }

    #[test]
    fn add_sums_vectors() {
        let a = Mps::random(5, 2, &mut rng(5));
        let b = Mps::random(5, 3, &mut rng(6));
        let s = add(&a, &b).unwrap();
        let diff = s.to_dense().unwrap() - (a.to_dense().unwrap() + b.to_dense().unwrap());
        assert!(diff.norm() < 1e-12);
    }
}
