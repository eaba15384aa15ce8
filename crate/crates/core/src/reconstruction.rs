//! Pure-state MPS estimates from local Pauli data.
//!
//! Both stages minimize a smooth function of the window density matrices:
//! the initializer fits the linearly inverted windows in Frobenius norm, the
//! main stage maximizes the log-likelihood of the recorded frequencies. All
//! tensors are updated together by L-BFGS; the gradient comes from one
//! environment sweep with the sum of window operators written as an MPO.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, c, CMatrix, C64, ZERO};
use crate::measurement::{MeasurementDataset, Pauli, Shots};
use crate::mpo::Mpo;
use crate::mps::{self, Canonical, Mps, Tensor3, Truncation, WindowDensityMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// Product of the dominant eigenvectors of the estimated pair windows.
    LocalInversion,
    /// Seeded random MPS at the target bond.
    Random(u64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructionConfig {
    pub target_bond: usize,
    /// Iteration budget of the likelihood stage.
    pub max_sweeps: usize,
    /// Relative objective change that counts as stalled.
    pub ll_tol: f64,
    pub init: InitKind,
    /// Eigenvalue floor of the inverted windows (sampled data only).
    pub regularization: f64,
    /// Iteration budget of the window-fitting initializer.
    pub init_iters: usize,
    pub probability_floor: f64,
    /// L-BFGS memory.
    pub history: usize,
    /// Seed for the entries added when bonds grow.
    pub growth_seed: u64,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            target_bond: 8,
            max_sweeps: 500,
            ll_tol: 1e-10,
            init: InitKind::LocalInversion,
            regularization: 1e-6,
            init_iters: 800,
            probability_floor: 1e-12,
            history: 12,
            growth_seed: 0,
        }
    }
}

impl ReconstructionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_bond == 0 {
            return Err(Error::Config("target_bond must be at least 1".into()));
        }
        if !(self.ll_tol > 0.0) {
            return Err(Error::Config("ll_tol must be positive".into()));
        }
        if self.regularization < 0.0 || self.probability_floor <= 0.0 {
            return Err(Error::Config("floors must be nonnegative (probability floor positive)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ReconstructionResult {
    pub state: Mps,
    pub final_log_likelihood: f64,
    /// L-BFGS iterations of the likelihood stage.
    pub sweeps_used: usize,
    pub converged: bool,
    /// Log-likelihood after every accepted step, starting with `psi0`.
    pub trace: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Setting probabilities through a basis-rotation tree.

fn bases() -> [CMatrix; 3] {
    Pauli::ALL.map(|p| p.eigenbasis())
}

/// `V_j^dag M V_j` with `V` acting on the index bit `bit` (counted from the LSB).
fn rotate_bit(m: &CMatrix, bit: usize, v: &CMatrix) -> CMatrix {
    let dim = m.nrows();
    let mask = 1usize << bit;
    let mut t = CMatrix::zeros(dim, dim);
    for y in 0..dim {
        for x in 0..dim {
            let xj = (x >> bit) & 1;
            let x0 = x & !mask;
            t[(x, y)] = v[(0, xj)].conj() * m[(x0, y)] + v[(1, xj)].conj() * m[(x0 | mask, y)];
        }
    }
    let mut out = CMatrix::zeros(dim, dim);
    for y in 0..dim {
        let yj = (y >> bit) & 1;
        let y0 = y & !mask;
        let (c0, c1) = (v[(0, yj)], v[(1, yj)]);
        for x in 0..dim {
            out[(x, y)] = t[(x, y0)] * c0 + t[(x, y0 | mask)] * c1;
        }
    }
    out
}

fn rotated_diagonal(m: &CMatrix, bit: usize, v: &CMatrix) -> Vec<f64> {
    let mask = 1usize << bit;
    (0..m.nrows())
        .map(|x| {
            let xj = (x >> bit) & 1;
            let x0 = x & !mask;
            let mut acc = ZERO;
            for a in 0..2 {
                for b in 0..2 {
                    acc += v[(a, xj)].conj() * v[(b, xj)] * m[(x0 | (a * mask), x0 | (b * mask))];
                }
            }
            acc.re
        })
        .collect()
}

/// Outcome distributions of all `3^r` settings on one window, in
/// `pauli_strings` order.
pub fn setting_probabilities(rho: &CMatrix, r: usize) -> Vec<Vec<f64>> {
    let b = bases();
    let mut out = vec![Vec::new(); 3usize.pow(r as u32)];
    forward(rho, 0, 0, r, &b, &mut out);
    out
}

fn forward(m: &CMatrix, level: usize, prefix: usize, r: usize, b: &[CMatrix; 3], out: &mut [Vec<f64>]) {
    let bit = r - 1 - level;
    for (a, v) in b.iter().enumerate() {
        if level == r - 1 {
            out[prefix * 3 + a] = rotated_diagonal(m, bit, v);
        } else {
            forward(&rotate_bit(m, bit, v), level + 1, prefix * 3 + a, r, b, out);
        }
    }
}

/// `sum_alpha V_alpha diag(w_alpha) V_alpha^dag`.
pub fn assemble_settings(weights: &[Vec<f64>], r: usize) -> CMatrix {
    let adj = bases().map(|v| v.adjoint());
    backward(0, 0, r, weights, &adj)
}

fn backward(level: usize, prefix: usize, r: usize, w: &[Vec<f64>], adj: &[CMatrix; 3]) -> CMatrix {
    let bit = r - 1 - level;
    let dim = 1usize << r;
    let mut acc = CMatrix::zeros(dim, dim);
    for (a, v) in adj.iter().enumerate() {
        let child = if level == r - 1 {
            let d = &w[prefix * 3 + a];
            CMatrix::from_fn(dim, dim, |i, j| if i == j { c(d[i], 0.0) } else { ZERO })
        } else {
            backward(level + 1, prefix * 3 + a, r, w, adj)
        };
        acc += rotate_bit(&child, bit, v);
    }
    acc
}

// ---------------------------------------------------------------------------
// Linear inversion.

struct WindowData {
    /// `freqs[k][alpha]` over outcomes.
    freqs: Vec<Vec<Vec<f64>>>,
    exact: bool,
}

fn window_data(ds: &MeasurementDataset) -> Result<WindowData> {
    ds.validate()?;
    let per = 3usize.pow(ds.r as u32);
    let windows = 2 * ds.n - ds.r + 1;
    let mut freqs = vec![vec![Vec::new(); per]; windows];
    for t in &ds.tables {
        let idx = t.spec.alphas.iter().fold(0, |acc, a| acc * 3 + *a as usize);
        freqs[t.spec.k][idx] = t.frequencies();
    }
    Ok(WindowData { freqs, exact: ds.shots == Shots::Exact })
}

/// Hermitian part with eigenvalues clipped at `floor`, then unit trace.
fn clip_density(m: &CMatrix, floor: f64) -> CMatrix {
    let (vals, vecs) = linalg::eigh(m);
    let clipped: Vec<f64> = vals.iter().map(|&x| x.max(floor)).collect();
    let total: f64 = clipped.iter().sum();
    let d = CMatrix::from_fn(vals.len(), vals.len(), |i, j| if i == j { c(clipped[i] / total, 0.0) } else { ZERO });
    let out = &vecs * d * vecs.adjoint();
    (&out + out.adjoint()) * c(0.5, 0.0)
}

/// Linear inversion of every window. Exact-mode data are clipped at zero
/// only; sampled data at `floor`.
pub fn estimate_windows(ds: &MeasurementDataset, floor: f64) -> Result<Vec<WindowDensityMatrix>> {
    let data = window_data(ds)?;
    let r = ds.r;
    let floor = if data.exact { 0.0 } else { floor };
    let scale = 1.0 / 3f64.powi(r as i32);
    Ok(data
        .freqs
        .par_iter()
        .enumerate()
        .map(|(k, settings)| {
            let weights: Vec<Vec<f64>> = settings
                .iter()
                .map(|f| {
                    let mut w = f.clone();
                    for bit in 0..r {
                        let mask = 1 << bit;
                        for i in 0..w.len() {
                            if i & mask == 0 {
                                let (a, b) = (w[i], w[i | mask]);
                                w[i] = 2.0 * a - b;
                                w[i | mask] = 2.0 * b - a;
                            }
                        }
                    }
                    w.iter().map(|x| x * scale).collect()
                })
                .collect();
            let raw = assemble_settings(&weights, r);
            WindowDensityMatrix { start: k, width: r, matrix: clip_density(&raw, floor) }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Sum of window operators as an MPO with explicit channel blocks.

/// One site of a block-sparse MPO: `(left channel, right channel, op)` with
/// `op[2 * out + in]`.
struct SiteBlocks {
    wl: usize,
    wr: usize,
    blocks: Vec<(usize, usize, [C64; 4])>,
}

struct CutChannels {
    start: Option<usize>,
    done: Option<usize>,
    /// `(window, offset)` for windows straddling the cut.
    windows: Vec<(usize, usize)>,
    dim: usize,
}

/// `sum_k O_k + shift * 1` with `O_k` on sites `k..k+r`.
fn window_sum(len: usize, r: usize, ops: &[CMatrix], shift: f64) -> Vec<SiteBlocks> {
    let trunc = Truncation { max_bond: usize::MAX, svd_tol: 1e-14 };
    let mpos: Vec<Mpo> = ops.iter().map(|o| Mpo::from_dense(o, r, trunc).expect("window operator").0).collect();
    let cuts: Vec<CutChannels> = (0..=len)
        .map(|cut| {
            let start = (cut < len).then_some(0);
            let done = (cut > 0).then(|| if cut < len { 1 } else { 0 });
            let mut dim = start.is_some() as usize + done.is_some() as usize;
            let mut windows = Vec::new();
            for (k, m) in mpos.iter().enumerate() {
                if k < cut && cut < k + r {
                    windows.push((k, dim));
                    dim += m.sites()[cut - k - 1].right;
                }
            }
            CutChannels { start, done, windows, dim }
        })
        .collect();
    let offset = |cut: usize, k: usize| cuts[cut].windows.iter().find(|w| w.0 == k).map(|w| w.1).unwrap();
    let ident = [c(1.0, 0.0), ZERO, ZERO, c(1.0, 0.0)];
    (0..len)
        .map(|j| {
            let (lc, rc) = (&cuts[j], &cuts[j + 1]);
            let mut blocks = Vec::new();
            if let (Some(a), Some(b)) = (lc.start, rc.start) {
                blocks.push((a, b, ident));
            }
            if let (Some(a), Some(b)) = (lc.done, rc.done) {
                blocks.push((a, b, ident));
            }
            if j == 0 && shift != 0.0 {
                let s = c(shift, 0.0);
                blocks.push((0, rc.done.unwrap(), [s, ZERO, ZERO, s]));
            }
            let op = |t: &Tensor3, a: usize, b: usize| [t.get(a, 0, b), t.get(a, 1, b), t.get(a, 2, b), t.get(a, 3, b)];
            if j + r <= len {
                let t = &mpos[j].sites()[0];
                if r == 1 {
                    blocks.push((lc.start.unwrap(), rc.done.unwrap(), op(t, 0, 0)));
                } else {
                    let off = offset(j + 1, j);
                    for beta in 0..t.right {
                        blocks.push((lc.start.unwrap(), off + beta, op(t, 0, beta)));
                    }
                }
            }
            for &(k, loff) in &lc.windows {
                let p = j - k;
                let t = &mpos[k].sites()[p];
                if p == r - 1 {
                    for alpha in 0..t.left {
                        blocks.push((loff + alpha, rc.done.unwrap(), op(t, alpha, 0)));
                    }
                } else {
                    let roff = offset(j + 1, k);
                    for alpha in 0..t.left {
                        for beta in 0..t.right {
                            let o = op(t, alpha, beta);
                            if o.iter().any(|z| *z != ZERO) {
                                blocks.push((loff + alpha, roff + beta, o));
                            }
                        }
                    }
                }
            }
            SiteBlocks { wl: lc.dim, wr: rc.dim, blocks }
        })
        .collect()
}

/// `env'[w'] = sum A_s^dag op[s,t] env[w] A_t` (bra, ket).
fn left_step(env: &[CMatrix], a: &Tensor3, site: &SiteBlocks) -> Vec<CMatrix> {
    let slices: Vec<CMatrix> = (0..2).map(|s| a.slice(s)).collect();
    let x: Vec<[CMatrix; 2]> = env.iter().map(|e| [e * &slices[0], e * &slices[1]]).collect();
    let mut y: Vec<[CMatrix; 2]> =
        (0..site.wr).map(|_| [CMatrix::zeros(a.left, a.right), CMatrix::zeros(a.left, a.right)]).collect();
    for (w, wp, op) in &site.blocks {
        for s in 0..2 {
            for t in 0..2 {
                let z = op[2 * s + t];
                if z != ZERO {
                    y[*wp][s].zip_apply(&x[*w][t], |acc, v| *acc += z * v);
                }
            }
        }
    }
    y.iter().map(|ys| slices[0].adjoint() * &ys[0] + slices[1].adjoint() * &ys[1]).collect()
}

/// `env[w] = sum op[s,t] A_t env'[w'] A_s^dag` (ket, bra).
fn right_step(env: &[CMatrix], a: &Tensor3, site: &SiteBlocks) -> Vec<CMatrix> {
    let slices: Vec<CMatrix> = (0..2).map(|s| a.slice(s)).collect();
    let x: Vec<[CMatrix; 2]> = env.iter().map(|e| [&slices[0] * e, &slices[1] * e]).collect();
    let mut y: Vec<[CMatrix; 2]> =
        (0..site.wl).map(|_| [CMatrix::zeros(a.left, a.right), CMatrix::zeros(a.left, a.right)]).collect();
    for (w, wp, op) in &site.blocks {
        for s in 0..2 {
            for t in 0..2 {
                let z = op[2 * s + t];
                if z != ZERO {
                    y[*w][s].zip_apply(&x[*wp][t], |acc, v| *acc += z * v);
                }
            }
        }
    }
    y.iter().map(|ys| &ys[0] * slices[0].adjoint() + &ys[1] * slices[1].adjoint()).collect()
}

/// `d <psi|G|psi> / d conj(A_j)` for every site.
fn operator_gradient(t: &[Tensor3], g: &[SiteBlocks]) -> Vec<Tensor3> {
    let len = t.len();
    let mut rights = vec![Vec::new(); len + 1];
    rights[len] = vec![CMatrix::from_element(1, 1, c(1.0, 0.0))];
    for j in (0..len).rev() {
        rights[j] = right_step(&rights[j + 1], &t[j], &g[j]);
    }
    let mut left = vec![CMatrix::from_element(1, 1, c(1.0, 0.0))];
    let mut out = Vec::with_capacity(len);
    for j in 0..len {
        let a = &t[j];
        let slices: Vec<CMatrix> = (0..2).map(|s| a.slice(s)).collect();
        let x: Vec<[CMatrix; 2]> = left.iter().map(|e| [e * &slices[0], e * &slices[1]]).collect();
        let mut y: Vec<[CMatrix; 2]> =
            (0..g[j].wr).map(|_| [CMatrix::zeros(a.left, a.right), CMatrix::zeros(a.left, a.right)]).collect();
        for (w, wp, op) in &g[j].blocks {
            for s in 0..2 {
                for tt in 0..2 {
                    let z = op[2 * s + tt];
                    if z != ZERO {
                        y[*wp][s].zip_apply(&x[*w][tt], |acc, v| *acc += z * v);
                    }
                }
            }
        }
        let mut grad = Tensor3::zeros(a.left, 2, a.right);
        for s in 0..2 {
            let mut gs = CMatrix::zeros(a.left, a.right);
            for (wp, ys) in y.iter().enumerate() {
                gs += &ys[s] * &rights[j + 1][wp];
            }
            for l in 0..a.left {
                for rr in 0..a.right {
                    let i = grad.idx(l, s, rr);
                    grad.data[i] = gs[(l, rr)];
                }
            }
        }
        out.push(grad);
        if j + 1 < len {
            left = left_step(&left, a, &g[j]);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Objectives.

enum Kind {
    /// `sum_k ||rho_k - target_k||_F^2`.
    Frobenius(Vec<CMatrix>),
    /// `-sum f log max(p, floor)`.
    Likelihood { freqs: Vec<Vec<Vec<f64>>>, floor: f64 },
}

struct Objective {
    r: usize,
    kind: Kind,
    /// Known lower bound of the objective (reached by exact data).
    lower_bound: Option<f64>,
}

impl Objective {
    fn windows(&self, t: &[Tensor3]) -> Vec<CMatrix> {
        let lefts = mps::left_environments(t);
        let rights = mps::right_environments(t);
        (0..=t.len() - self.r)
            .into_par_iter()
            .map(|k| mps::window_density(&t[k..k + self.r], &lefts[k], &rights[k + self.r]))
            .collect()
    }

    /// Value and `O_k = d f / d rho_k` for one window.
    fn window_term(&self, k: usize, rho: &CMatrix, want_op: bool) -> (f64, Option<CMatrix>) {
        match &self.kind {
            Kind::Frobenius(targets) => {
                let d = rho - &targets[k];
                let v = d.iter().map(|z| z.norm_sqr()).sum();
                (v, want_op.then(|| d * c(2.0, 0.0)))
            }
            Kind::Likelihood { freqs, floor } => {
                let probs = setting_probabilities(rho, self.r);
                let mut value = 0.0;
                let weights: Vec<Vec<f64>> = probs
                    .iter()
                    .zip(&freqs[k])
                    .map(|(p, f)| {
                        p.iter()
                            .zip(f)
                            .map(|(&pi, &fi)| {
                                if fi > 0.0 {
                                    let q = pi.max(*floor);
                                    value -= fi * q.ln();
                                    fi / q
                                } else {
                                    0.0
                                }
                            })
                            .collect()
                    })
                    .collect();
                (value, want_op.then(|| assemble_settings(&weights, self.r) * c(-1.0, 0.0)))
            }
        }
    }

    fn value(&self, t: &[Tensor3]) -> f64 {
        let w = self.windows(t);
        w.par_iter().enumerate().map(|(k, rho)| self.window_term(k, rho, false).0).sum()
    }

    /// Value and real gradient (`2 df/d conj(A)`) with respect to all tensors.
    fn value_and_gradient(&self, t: &[Tensor3]) -> (f64, Vec<Tensor3>) {
        let w = self.windows(t);
        let terms: Vec<(f64, CMatrix)> = w
            .par_iter()
            .enumerate()
            .map(|(k, rho)| {
                let (v, op) = self.window_term(k, rho, true);
                (v, op.unwrap())
            })
            .collect();
        let value = terms.iter().map(|x| x.0).sum();
        let shift: f64 = terms.iter().zip(&w).map(|((_, o), rho)| (o * rho).trace().re).sum();
        let ops: Vec<CMatrix> = terms.into_iter().map(|x| x.1).collect();
        let g = window_sum(t.len(), self.r, &ops, -shift);
        let norm = mps::left_environments(t).last().unwrap()[(0, 0)].re;
        let mut grad = operator_gradient(t, &g);
        let f = 2.0 / norm;
        for gj in &mut grad {
            gj.data.iter_mut().for_each(|z| *z *= f);
        }
        (value, grad)
    }

    fn at_bound(&self, f: f64) -> bool {
        self.lower_bound.is_some_and(|b| f - b <= 1e-14 * b.abs().max(1e-2))
    }
}

// ---------------------------------------------------------------------------
// L-BFGS on the tensor entries.

fn dot(a: &[Tensor3], b: &[Tensor3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.data.iter().zip(&y.data).map(|(p, q)| (p.conj() * q).re).sum::<f64>()).sum()
}

fn axpy(y: &mut [Tensor3], alpha: f64, x: &[Tensor3]) {
    for (ty, tx) in y.iter_mut().zip(x) {
        ty.data.iter_mut().zip(&tx.data).for_each(|(p, q)| *p += q * alpha);
    }
}

fn scaled(x: &[Tensor3], alpha: f64) -> Vec<Tensor3> {
    x.iter().map(|t| t.scaled(c(alpha, 0.0))).collect()
}

fn recanonicalize(t: Vec<Tensor3>) -> Vec<Tensor3> {
    let center = t.len() / 2;
    Mps::from_parts(t, Canonical::None).canonicalized(center).normalized().into_tensors()
}

struct StageOutcome {
    tensors: Vec<Tensor3>,
    value: f64,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
}

const RESTART_EVERY: usize = 60;

fn lbfgs(obj: &Objective, start: Vec<Tensor3>, max_iters: usize, tol: f64, history: usize) -> StageOutcome {
    let mut x = recanonicalize(start);
    let (mut f, mut g) = obj.value_and_gradient(&x);
    let mut trace = vec![f];
    let mut mem: VecDeque<(Vec<Tensor3>, Vec<Tensor3>, f64)> = VecDeque::new();
    let mut quiet = 0;
    let mut converged = obj.at_bound(f);
    let mut iterations = 0;
    let mut since_restart = 0;
    while !converged && iterations < max_iters {
        if since_restart >= RESTART_EVERY {
            x = recanonicalize(x);
            (f, g) = obj.value_and_gradient(&x);
            mem.clear();
            since_restart = 0;
        }
        // Two-loop recursion.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(mem.len());
        for (s, y, rho) in mem.iter().rev() {
            let a = rho * dot(s, &q);
            axpy(&mut q, -a, y);
            alphas.push(a);
        }
        let gnorm = dot(&g, &g).sqrt();
        if gnorm == 0.0 {
            converged = true;
            break;
        }
        let gamma = match mem.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => (0.1 / gnorm).min(1.0),
        };
        q = scaled(&q, gamma);
        for ((s, y, rho), a) in mem.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            axpy(&mut q, a - b, s);
        }
        let mut d = scaled(&q, -1.0);
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            d = scaled(&g, -(0.1 / gnorm).min(1.0));
            slope = dot(&g, &d);
            mem.clear();
        }
        let mut eta = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut cand = x.clone();
            axpy(&mut cand, eta, &d);
            let fc = obj.value(&cand);
            if fc.is_finite() && fc <= f + 1e-4 * eta * slope {
                accepted = Some((cand, fc));
                break;
            }
            eta *= 0.5;
        }
        let Some((cand, fc)) = accepted else {
            if mem.is_empty() {
                // Steepest descent failed too: numerically stationary.
                converged = true;
                break;
            }
            mem.clear();
            since_restart = 0;
            x = recanonicalize(x);
            (f, g) = obj.value_and_gradient(&x);
            continue;
        };
        let (fn_, gn) = obj.value_and_gradient(&cand);
        let _ = fc;
        let mut s = cand.clone();
        axpy(&mut s, -1.0, &x);
        let mut y = gn.clone();
        axpy(&mut y, -1.0, &g);
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            mem.push_back((s, y, 1.0 / sy));
            if mem.len() > history {
                mem.pop_front();
            }
        }
        let rel = (f - fn_).abs() / f.abs().max(1e-300);
        quiet = if rel < tol { quiet + 1 } else { 0 };
        x = cand;
        f = fn_;
        g = gn;
        trace.push(f);
        iterations += 1;
        since_restart += 1;
        if quiet >= 3 || obj.at_bound(f) {
            converged = true;
        }
    }
    StageOutcome { tensors: recanonicalize(x), value: f, trace, iterations, converged }
}

/// Pads every tensor to the new bonds. Blocks that connect an old left
/// channel to a new right channel are zero, so the state is unchanged while
/// the gradient in those blocks is generically nonzero.
fn grow(t: &[Tensor3], caps: &[usize], rng: &mut ChaCha8Rng) -> Vec<Tensor3> {
    t.iter()
        .enumerate()
        .map(|(j, a)| {
            let (l, r) = (caps[j].max(a.left), caps[j + 1].max(a.right));
            let eps = 1e-2 * (a.norm_sqr() / a.data.len() as f64).sqrt();
            let mut out = Tensor3::zeros(l, 2, r);
            for x in 0..l {
                for s in 0..2 {
                    for y in 0..r {
                        let i = out.idx(x, s, y);
                        out.data[i] = if x < a.left && y < a.right {
                            a.get(x, s, y)
                        } else if x < a.left {
                            ZERO
                        } else {
                            let re: f64 = StandardNormal.sample(rng);
                            let im: f64 = StandardNormal.sample(rng);
                            c(re, im) * eps
                        };
                    }
                }
            }
            out
        })
        .collect()
}

fn bond_profile(t: &[Tensor3]) -> Vec<usize> {
    let mut v: Vec<usize> = t.iter().map(|a| a.left).collect();
    v.push(1);
    v
}

/// Iterations allowed at a bond below the target before growing again.
const STAGE_ITERS: usize = 100;

/// L-BFGS stages separated by bond growth, doubling up to `target_bond`.
/// Only the final stage runs to convergence.
fn fit_with_growth(
    obj: &Objective,
    start: Vec<Tensor3>,
    target_bond: usize,
    budget: usize,
    tol: f64,
    history: usize,
    rng: &mut ChaCha8Rng,
) -> StageOutcome {
    let len = start.len();
    let target = mps::max_bonds(len, 2, target_bond);
    let mut x = start;
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        let dims0 = bond_profile(&x);
        let last = dims0.iter().zip(&target).all(|(a, b)| a >= b);
        let allowed = if last { budget - iterations } else { (budget - iterations).min(STAGE_ITERS) };
        let out = lbfgs(obj, x, allowed, tol, history);
        iterations += out.iterations;
        if trace.is_empty() {
            trace = out.trace;
        } else {
            trace.extend_from_slice(&out.trace[1..]);
        }
        x = out.tensors;
        let dims = bond_profile(&x);
        let done = dims.iter().zip(&target).all(|(a, b)| a >= b);
        if done || iterations >= budget || obj.at_bound(out.value) {
            return StageOutcome { tensors: x, value: out.value, trace, iterations, converged: out.converged };
        }
        let cur = dims.iter().copied().max().unwrap_or(1);
        let caps = mps::max_bonds(len, 2, (2 * cur).min(target_bond));
        x = grow(&x, &caps, rng);
    }
}

// ---------------------------------------------------------------------------
// Public stages.

fn dominant_pair_state(rho: &CMatrix) -> Vec<Tensor3> {
    let (_, vecs) = linalg::eigh(rho);
    let v = vecs.column(rho.nrows() - 1);
    if rho.nrows() == 2 {
        return vec![Tensor3::from_data(1, 2, 1, vec![v[0], v[1]]).unwrap()];
    }
    let m = CMatrix::from_fn(2, 2, |a, b| v[2 * a + b]);
    let svd = linalg::truncated_svd(m, 2, 1e-14);
    let k = svd.s.len();
    let us = CMatrix::from_fn(2, k, |a, j| svd.u[(a, j)] * c(svd.s[j], 0.0));
    vec![Tensor3::from_left_matrix(&us, 1, 2), Tensor3::from_right_matrix(&svd.vt, 2, 1)]
}

/// `tr` over all but window positions `keep` (ascending) of a window density.
fn partial_trace(rho: &CMatrix, r: usize, keep: &[usize]) -> CMatrix {
    let m = keep.len();
    let dim = 1usize << m;
    let mut out = CMatrix::zeros(dim, dim);
    let sub = |x: usize| keep.iter().fold(0, |acc, &p| (acc << 1) | ((x >> (r - 1 - p)) & 1));
    let rest_mask = (0..r).filter(|p| !keep.contains(p)).fold(0, |acc, p| acc | (1 << (r - 1 - p)));
    for x in 0..(1usize << r) {
        for y in 0..(1usize << r) {
            if x & rest_mask == y & rest_mask {
                out[(sub(x), sub(y))] += rho[(x, y)];
            }
        }
    }
    out
}

fn local_inversion_start(windows: &[WindowDensityMatrix], len: usize, r: usize) -> Vec<Tensor3> {
    if r == 1 {
        return windows.iter().flat_map(|w| dominant_pair_state(&w.matrix)).collect();
    }
    (0..len / 2)
        .flat_map(|q| {
            let site = 2 * q;
            let k = site.min(len - r);
            let rho = partial_trace(&windows[k].matrix, r, &[site - k, site + 1 - k]);
            dominant_pair_state(&rho)
        })
        .collect()
}

/// Relative size of the random kick added to the local-inversion start.
const START_NOISE: f64 = 0.05;

/// Window-fitting initializer: minimizes `sum_k ||rho_k(psi) - rho_hat_k||_F^2`
/// from the configured start, growing the bond up to `target_bond`.
pub fn initialize(ds: &MeasurementDataset, cfg: &ReconstructionConfig) -> Result<Mps> {
    cfg.validate()?;
    let windows = estimate_windows(ds, cfg.regularization)?;
    let len = 2 * ds.n;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.growth_seed);
    let start = match cfg.init {
        InitKind::LocalInversion => {
            // Pair marginals are often degenerate (GHZ), which leaves the
            // product start on a symmetric stationary point; a small seeded
            // kick breaks the tie.
            let mut t = local_inversion_start(&windows, len, ds.r);
            for a in &mut t {
                let sc = START_NOISE * (a.norm_sqr() / a.data.len() as f64).sqrt();
                for z in &mut a.data {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    *z += c(re, im) * sc;
                }
            }
            t
        }
        InitKind::Random(seed) => {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            Mps::random(len, cfg.target_bond, &mut r).into_tensors()
        }
    };
    let exact = ds.shots == Shots::Exact;
    let obj = Objective {
        r: ds.r,
        kind: Kind::Frobenius(windows.into_iter().map(|w| w.matrix).collect()),
        lower_bound: exact.then_some(0.0),
    };
    let out = fit_with_growth(&obj, start, cfg.target_bond, cfg.init_iters, cfg.ll_tol, cfg.history, &mut rng);
    Ok(Mps::from_parts(out.tensors, Canonical::Mixed(len / 2)).normalized())
}

fn likelihood_objective(ds: &MeasurementDataset, cfg: &ReconstructionConfig) -> Result<Objective> {
    let data = window_data(ds)?;
    let lower_bound = data.exact.then(|| {
        data.freqs
            .iter()
            .flatten()
            .flatten()
            .filter(|&&f| f > 0.0)
            .map(|&f| -f * f.max(cfg.probability_floor).ln())
            .sum()
    });
    Ok(Objective { r: ds.r, kind: Kind::Likelihood { freqs: data.freqs, floor: cfg.probability_floor }, lower_bound })
}

/// `sum_settings sum_s f(s) log p_psi(s)` with the probability floor.
pub fn log_likelihood(ds: &MeasurementDataset, psi: &Mps, floor: f64) -> Result<f64> {
    if psi.len() != 2 * ds.n {
        return Err(Error::Dimension(format!("state has {} sites, data {}", psi.len(), 2 * ds.n)));
    }
    let cfg = ReconstructionConfig { probability_floor: floor, ..Default::default() };
    Ok(-likelihood_objective(ds, &cfg)?.value(psi.tensors()))
}

/// Likelihood maximization at the bond dimensions of `psi0`, growing them
/// toward `target_bond` when they are smaller.
pub fn maximize_likelihood(
    ds: &MeasurementDataset,
    psi0: &Mps,
    cfg: &ReconstructionConfig,
) -> Result<ReconstructionResult> {
    cfg.validate()?;
    if psi0.len() != 2 * ds.n || psi0.phys_dim() != 2 {
        return Err(Error::Dimension(format!("start state has {} sites, data {}", psi0.len(), 2 * ds.n)));
    }
    let obj = likelihood_objective(ds, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.growth_seed ^ 0x9e37_79b9_7f4a_7c15);
    let out = fit_with_growth(
        &obj,
        psi0.tensors().to_vec(),
        cfg.target_bond,
        cfg.max_sweeps,
        cfg.ll_tol,
        cfg.history,
        &mut rng,
    );
    let len = psi0.len();
    let state = Mps::from_parts(out.tensors, Canonical::Mixed(len / 2)).normalized();
    Ok(ReconstructionResult {
        state,
        final_log_likelihood: -out.value,
        sweeps_used: out.iterations,
        converged: out.converged,
        trace: out.trace.iter().map(|v| -v).collect(),
    })
}

/// `initialize` followed by `maximize_likelihood`.
pub fn reconstruct(ds: &MeasurementDataset, cfg: &ReconstructionConfig) -> Result<ReconstructionResult> {
    let psi0 = initialize(ds, cfg)?;
    maximize_likelihood(ds, &psi0, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{distribution_from_density, pauli_strings};

    fn random_tensors(len: usize, bond: usize, seed: u64) -> Vec<Tensor3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mps::random(len, bond, &mut rng).into_tensors()
    }

    #[test]
    fn tree_matches_direct_probabilities() {
        let t = random_tensors(4, 3, 1);
        let rho = Mps::new(t).unwrap().reduced_density(0, 3).unwrap().matrix;
        let tree = setting_probabilities(&rho, 3);
        for (alphas, p) in pauli_strings(3).iter().zip(&tree) {
            let direct = distribution_from_density(&rho, alphas).unwrap();
            for (a, b) in p.iter().zip(&direct) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn assembly_is_adjoint_of_tree() {
        let t = random_tensors(3, 2, 2);
        let rho = Mps::new(t).unwrap().reduced_density(0, 2).unwrap().matrix;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w: Vec<Vec<f64>> = (0..9).map(|_| (0..4).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
        let lhs: f64 = setting_probabilities(&rho, 2).iter().flatten().zip(w.iter().flatten()).map(|(p, x)| p * x).sum();
        let rhs = (assemble_settings(&w, 2) * &rho).trace().re;
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn window_sum_expectation_matches_dense() {
        let len = 5;
        let r = 2;
        let t = random_tensors(len, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ops: Vec<CMatrix> = (0..=len - r)
            .map(|_| {
                let m = linalg::random_complex_matrix(4, 4, &mut rng);
                (&m + m.adjoint()) * c(0.5, 0.0)
            })
            .collect();
        let g = window_sum(len, r, &ops, 0.7);
        let grad = operator_gradient(&t, &g);
        let psi = Mps::new(t.clone()).unwrap().to_dense().unwrap();
        let mut dense = linalg::identity(1 << len) * c(0.7, 0.0);
        for (k, o) in ops.iter().enumerate() {
            let left = linalg::identity(1 << k);
            let right = linalg::identity(1 << (len - k - r));
            dense += linalg::kron(&linalg::kron(&left, o), &right);
        }
        let expect = (psi.adjoint() * dense * &psi)[(0, 0)];
        // Every site's gradient contracts back to the same expectation value.
        for (a, b) in t.iter().zip(&grad) {
            let v: C64 = a.data.iter().zip(&b.data).map(|(x, y)| x.conj() * y).sum();
            assert!((v - expect).norm() < 1e-10, "{v} vs {expect}");
        }
    }

    fn check_gradient(obj: &Objective, t: &[Tensor3]) {
        let (_, g) = obj.value_and_gradient(t);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dir: Vec<Tensor3> = t
            .iter()
            .map(|a| {
                let data = (0..a.data.len())
                    .map(|_| c(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)))
                    .collect();
                Tensor3::from_data(a.left, 2, a.right, data).unwrap()
            })
            .collect();
        let h = 1e-7;
        let mut plus = t.to_vec();
        axpy(&mut plus, h, &dir);
        let mut minus = t.to_vec();
        axpy(&mut minus, -h, &dir);
        let fd = (obj.value(&plus) - obj.value(&minus)) / (2.0 * h);
        let an = dot(&g, &dir);
        assert!((fd - an).abs() < 1e-6 * an.abs().max(1.0), "fd {fd} analytic {an}");
    }

    #[test]
    fn frobenius_gradient_matches_finite_differences() {
        let t = random_tensors(6, 3, 6);
        let targets: Vec<CMatrix> =
            Mps::new(random_tensors(6, 2, 7)).unwrap().all_reduced_densities(3).unwrap().into_iter().map(|w| w.matrix).collect();
        let obj = Objective { r: 3, kind: Kind::Frobenius(targets), lower_bound: None };
        check_gradient(&obj, &t);
    }

    #[test]
    fn likelihood_gradient_matches_finite_differences() {
        let truth = Mps::new(random_tensors(6, 2, 8)).unwrap();
        let freqs: Vec<Vec<Vec<f64>>> =
            truth.all_reduced_densities(2).unwrap().iter().map(|w| setting_probabilities(&w.matrix, 2)).collect();
        let obj = Objective { r: 2, kind: Kind::Likelihood { freqs, floor: 1e-12 }, lower_bound: None };
        let t = random_tensors(6, 3, 10);
        check_gradient(&obj, &t);
    }

    #[test]
    fn growth_keeps_the_state() {
        let t = random_tensors(6, 2, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let grown = grow(&t, &mps::max_bonds(6, 2, 4), &mut rng);
        let a = Mps::new(t).unwrap();
        let b = Mps::new(grown).unwrap();
        assert_eq!(b.max_bond(), 4);
        assert!((a.inner(&b).unwrap() - c(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn partial_trace_of_product() {
        let a = CMatrix::from_fn(2, 2, |i, j| c((i + 2 * j) as f64, 0.0));
        let b = linalg::identity(2) * c(0.5, 0.0);
        let cc = CMatrix::from_fn(2, 2, |i, j| c(0.0, (i * j) as f64));
        let rho = linalg::kron(&linalg::kron(&a, &b), &cc);
        let p = partial_trace(&rho, 3, &[0, 2]);
        assert!(linalg::frobenius(&(p - linalg::kron(&a, &cc))) < 1e-14);
    }
}
