//! Matrix product operators on qubit chains.
//!
//! Each site tensor has shape `(left, out, in, right)` with `out, in` in {0, 1}.
//! Storage is row-major, so a site is laid out exactly like an MPS tensor with
//! physical dimension 4 and physical index `2 * out + in`; compression and
//! inner products reuse the MPS code through that view.

use std::borrow::Cow;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{self, c, CMatrix, C64, ONE, ZERO};
use crate::mps::{self, Canonical, Mps, Tensor3, Truncation};

/// Largest operator that `to_dense` will expand.
pub const OPERATOR_DENSE_CAP: usize = 12;

#[derive(Clone, Debug, PartialEq)]
pub struct Mpo {
    sites: Vec<Tensor3>,
}

impl Mpo {
    pub fn new(sites: Vec<Tensor3>) -> Result<Self> {
        if sites.iter().any(|t| t.phys != 4) {
            return Err(Error::Dimension("MPO sites need (out, in) = (2, 2)".into()));
        }
        Mps::new(sites.clone())?;
        Ok(Self { sites })
    }

    pub fn identity(n: usize) -> Self {
        Self::from_site_ops(&vec![linalg::identity(2); n])
    }

    /// Tensor product of single-site 2x2 operators.
    pub fn from_site_ops(ops: &[CMatrix]) -> Self {
        let sites = ops
            .iter()
            .map(|m| {
                let data = (0..4).map(|p| m[(p / 2, p % 2)]).collect();
                Tensor3 { left: 1, phys: 4, right: 1, data }
            })
            .collect();
        Self { sites }
    }

    /// `g` acting on qubit `q` of `n`.
    pub fn single_site(n: usize, q: usize, g: &CMatrix) -> Self {
        let ops: Vec<CMatrix> =
            (0..n).map(|k| if k == q { g.clone() } else { linalg::identity(2) }).collect();
        Self::from_site_ops(&ops)
    }

    /// 4x4 operator `g` on qubits `(a, b)`, `a` the first tensor factor.
    /// The operator Schmidt decomposition gives bond <= 4 across the span
    /// and identities in between, without swap insertion.
    pub fn two_site(n: usize, a: usize, b: usize, g: &CMatrix) -> Result<Self> {
        if a == b || a >= n || b >= n {
            return Err(Error::OutOfRange(format!("two-site operator on ({a}, {b}) with n = {n}")));
        }
        let (l, r, g) = if a < b { (a, b, g.clone()) } else { (b, a, swap_factors(g)) };
        // m[(ol, il), (or, ir)] = g[(ol, or), (il, ir)]
        let m = CMatrix::from_fn(4, 4, |x, y| {
            let (ol, il, or, ir) = (x / 2, x % 2, y / 2, y % 2);
            g[(ol * 2 + or, il * 2 + ir)]
        });
        let svd = linalg::truncated_svd(m, 4, 1e-14);
        let k = svd.s.len();
        let mut sites = Vec::with_capacity(n);
        for q in 0..n {
            let t = if q == l {
                let mut t = Tensor3::zeros(1, 4, k);
                for p in 0..4 {
                    for j in 0..k {
                        let i = t.idx(0, p, j);
                        t.data[i] = svd.u[(p, j)] * svd.s[j].sqrt();
                    }
                }
                t
            } else if q == r {
                let mut t = Tensor3::zeros(k, 4, 1);
                for j in 0..k {
                    for p in 0..4 {
                        let i = t.idx(j, p, 0);
                        t.data[i] = svd.vt[(j, p)] * svd.s[j].sqrt();
                    }
                }
                t
            } else if q > l && q < r {
                identity_tensor(k)
            } else {
                identity_tensor(1)
            };
            sites.push(t);
        }
        Ok(Self { sites })
    }

    /// MPO from a dense `2^n x 2^n` matrix by successive SVDs.
    pub fn from_dense(m: &CMatrix, n: usize, trunc: Truncation) -> Result<(Self, f64)> {
        let dim = 1usize << n;
        if m.nrows() != dim || m.ncols() != dim {
            return Err(Error::Dimension(format!("matrix is {}x{}, expected {dim}", m.nrows(), m.ncols())));
        }
        let mut v = DVector::from_element(dim * dim, ZERO);
        for row in 0..dim {
            for col in 0..dim {
                v[interleave(row, col, n)] = m[(row, col)];
            }
        }
        let (psi, err) = Mps::from_dense(&v, 4, n, trunc)?;
        Ok((Self { sites: psi.into_tensors() }, err))
    }

    pub fn to_dense(&self) -> Result<CMatrix> {
        let n = self.len();
        if n > OPERATOR_DENSE_CAP {
            return Err(Error::CapExceeded(format!(
                "operator has {n} sites, dense cap is {OPERATOR_DENSE_CAP}"
            )));
        }
        let v = self.as_mps().to_dense()?;
        let dim = 1usize << n;
        Ok(CMatrix::from_fn(dim, dim, |row, col| v[interleave(row, col, n)]))
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[Tensor3] {
        &self.sites
    }

    #[inline]
    pub fn get(&self, k: usize, a: usize, out: usize, inp: usize, b: usize) -> C64 {
        self.sites[k].get(a, out * 2 + inp, b)
    }

    pub fn bond_dims(&self) -> Vec<usize> {
        self.as_mps().bond_dims()
    }

    pub fn max_bond(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    /// View as a chain with physical dimension 4.
    pub fn as_mps(&self) -> Mps {
        Mps::from_parts(self.sites.clone(), Canonical::None)
    }

    pub(crate) fn from_mps(psi: Mps) -> Self {
        Self { sites: psi.into_tensors() }
    }

    /// Compression in the Frobenius norm; the returned error is absolute.
    pub fn compress(&self, trunc: Truncation) -> (Self, f64) {
        let (psi, err) = self.as_mps().compress(trunc);
        (Self::from_mps(psi), err)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.as_mps().norm()
    }

    /// Hilbert-Schmidt inner product `tr(self^dag other)`.
    pub fn hs_inner(&self, other: &Mpo) -> Result<C64> {
        mps::inner(&self.as_mps(), &other.as_mps())
    }

    pub fn adjoint(&self) -> Self {
        let sites = self
            .sites
            .iter()
            .map(|t| {
                let mut out = Tensor3::zeros(t.left, 4, t.right);
                for a in 0..t.left {
                    for o in 0..2 {
                        for i in 0..2 {
                            for b in 0..t.right {
                                let k = out.idx(a, o * 2 + i, b);
                                out.data[k] = t.get(a, i * 2 + o, b).conj();
                            }
                        }
                    }
                }
                out
            })
            .collect();
        Self { sites }
    }

    /// Transpose in the computational basis.
    pub fn transpose(&self) -> Self {
        let adj = self.adjoint();
        Self { sites: adj.sites.iter().map(|t| t.conj()).collect() }
    }

    pub fn scaled(&self, f: C64) -> Self {
        let mut out = self.clone();
        out.sites[0] = out.sites[0].scaled(f);
        out
    }

    /// `tr(self)` by contracting the diagonal of every site.
    pub fn trace(&self) -> C64 {
        let mut env = CMatrix::from_element(1, 1, ONE);
        for t in &self.sites {
            let diag = CMatrix::from_fn(t.left, t.right, |a, b| t.get(a, 0, b) + t.get(a, 3, b));
            env = env * diag;
        }
        env[(0, 0)]
    }

    /// Operator sum without compression; bonds add.
    pub fn add(&self, other: &Mpo) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::Dimension(format!("lengths {} and {}", self.len(), other.len())));
        }
        Ok(Self { sites: mps::direct_sum(&self.sites, &other.sites) })
    }

    /// `(self + self^dag) / 2`, compressed.
    pub fn hermitian_part(&self, trunc: Truncation) -> Result<(Self, f64)> {
        let sum = self.add(&self.adjoint())?.scaled(c(0.5, 0.0));
        Ok(sum.compress(trunc))
    }
}

fn identity_tensor(bond: usize) -> Tensor3 {
    let mut t = Tensor3::zeros(bond, 4, bond);
    for w in 0..bond {
        for p in [0, 3] {
            let i = t.idx(w, p, w);
            t.data[i] = ONE;
        }
    }
    t
}

/// Swaps the two tensor factors of a 4x4 operator.
fn swap_factors(g: &CMatrix) -> CMatrix {
    let sw = |x: usize| (x % 2) * 2 + x / 2;
    CMatrix::from_fn(4, 4, |x, y| g[(sw(x), sw(y))])
}

/// Index of entry `(row, col)` in the site-interleaved `(out_k, in_k)` vector.
fn interleave(row: usize, col: usize, n: usize) -> usize {
    let mut idx = 0;
    for k in 0..n {
        let shift = n - 1 - k;
        let o = (row >> shift) & 1;
        let i = (col >> shift) & 1;
        idx = idx * 4 + o * 2 + i;
    }
    idx
}

/// Site-wise product `a * b` (apply `b` first); bond dimensions multiply.
pub fn multiply_uncompressed(a: &Mpo, b: &Mpo) -> Result<Mpo> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("lengths {} and {}", a.len(), b.len())));
    }
    let sites = a
        .sites
        .iter()
        .zip(&b.sites)
        .map(|(ta, tb)| {
            let (l, r) = (ta.left * tb.left, ta.right * tb.right);
            let mut t = Tensor3::zeros(l, 4, r);
            for a1 in 0..ta.left {
                for a2 in 0..ta.right {
                    for o in 0..2 {
                        for m in 0..2 {
                            let x = ta.get(a1, o * 2 + m, a2);
                            if x == ZERO {
                                continue;
                            }
                            for b1 in 0..tb.left {
                                for b2 in 0..tb.right {
                                    for i in 0..2 {
                                        let y = tb.get(b1, m * 2 + i, b2);
                                        let k = t.idx(a1 * tb.left + b1, o * 2 + i, a2 * tb.right + b2);
                                        t.data[k] += x * y;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            t
        })
        .collect();
    Ok(Mpo { sites })
}

/// `a * b` followed by compression; returns the absolute Frobenius error bound.
pub fn multiply_mpo(a: &Mpo, b: &Mpo, trunc: Truncation) -> Result<(Mpo, f64)> {
    Ok(multiply_uncompressed(a, b)?.compress(trunc))
}

/// Applies `op` to the chain sites listed in `sites` (strictly increasing),
/// acting as the identity elsewhere, then compresses.
pub fn apply_mpo(op: &Mpo, psi: &Mps, sites: &[usize], trunc: Truncation) -> Result<(Mps, f64)> {
    let out = apply_mpo_uncompressed(op, psi, sites)?;
    Ok(out.compress(trunc))
}

pub(crate) fn apply_mpo_uncompressed(op: &Mpo, psi: &Mps, sites: &[usize]) -> Result<Mps> {
    if sites.len() != op.len() {
        return Err(Error::Dimension(format!(
            "operator has {} sites but {} were mapped",
            op.len(),
            sites.len()
        )));
    }
    if sites.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Invalid("site mapping must be strictly increasing".into()));
    }
    if let Some(&last) = sites.last() {
        if last >= psi.len() {
            return Err(Error::OutOfRange(format!("site {last} on a chain of {}", psi.len())));
        }
    }
    if psi.phys_dim() != 2 {
        return Err(Error::Dimension("operators act on qubit chains".into()));
    }
    let mut embedded = Vec::with_capacity(psi.len());
    let mut q = 0;
    let mut bond = 1;
    for j in 0..psi.len() {
        if q < sites.len() && sites[q] == j {
            embedded.push(Cow::Borrowed(&op.sites[q]));
            bond = op.sites[q].right;
            q += 1;
        } else {
            embedded.push(Cow::Owned(identity_tensor(bond)));
        }
    }
    let tensors = embedded
        .iter()
        .zip(psi.tensors())
        .map(|(w, a)| {
            let (l, r) = (a.left * w.left, a.right * w.right);
            let mut t = Tensor3::zeros(l, 2, r);
            for a1 in 0..a.left {
                for a2 in 0..a.right {
                    for i in 0..2 {
                        let x = a.get(a1, i, a2);
                        if x == ZERO {
                            continue;
                        }
                        for w1 in 0..w.left {
                            for w2 in 0..w.right {
                                for o in 0..2 {
                                    let y = w.get(w1, o * 2 + i, w2);
                                    let k = t.idx(a1 * w.left + w1, o, a2 * w.right + w2);
                                    t.data[k] += x * y;
                                }
                            }
                        }
                    }
                }
            }
            t
        })
        .collect();
    Ok(Mps::from_parts(tensors, Canonical::None))
}
