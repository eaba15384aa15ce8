//! Nearest-neighbour Hamiltonians, their norms and time evolution.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{parse_err, Error, Result};
use crate::linalg::{self, c, CMatrix, C64, ZERO};
use crate::mpo::{multiply_uncompressed, Mpo, OPERATOR_DENSE_CAP};
use crate::mps::Truncation;

/// Largest `n` for which norms use a dense eigen-solve.
pub const DENSE_EIGEN_CAP: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    IsingCritical,
    Heisenberg,
    RandomNn,
    Custom,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::IsingCritical => "ising_critical",
            Family::Heisenberg => "heisenberg",
            Family::RandomNn => "random_nn",
            Family::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ising_critical" | "ising" => Some(Family::IsingCritical),
            "heisenberg" => Some(Family::Heisenberg),
            "random_nn" | "random" => Some(Family::RandomNn),
            "custom" => Some(Family::Custom),
            _ => None,
        }
    }
}

/// `H = sum_i h_i` with `h_i` acting on qubits `(i, i+1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NearestNeighbourHamiltonian {
    pub n: usize,
    pub terms: Vec<CMatrix>,
    pub family: Family,
    pub seed: Option<u64>,
    /// `max_i ||h_i||`.
    pub coupling_bound: f64,
}

/// Extremal spectrum data and the derived time unit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormInfo {
    pub norm: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// `1 / ||H||`.
    pub t_n: f64,
}

fn two_site_paulis(a: &CMatrix, b: &CMatrix) -> CMatrix {
    linalg::kron(a, b)
}

/// Weight of a single-site field on `site` inside the term on `(bond, bond+1)`:
/// split in half between the two bonds touching a site, full weight at chain ends.
fn field_weight(n: usize, site: usize) -> f64 {
    if site == 0 || site == n - 1 {
        1.0
    } else {
        0.5
    }
}

/// Folds the single-site field `f` on every qubit into the bond terms.
fn fold_field(n: usize, f: &CMatrix) -> Vec<CMatrix> {
    let id = linalg::identity(2);
    (0..n - 1)
        .map(|i| {
            let wl = c(field_weight(n, i), 0.0);
            let wr = c(field_weight(n, i + 1), 0.0);
            linalg::kron(f, &id) * wl + linalg::kron(&id, f) * wr
        })
        .collect()
}

pub fn build_family(family: Family, n: usize, seed: Option<u64>) -> Result<NearestNeighbourHamiltonian> {
    if n < 2 {
        return Err(Error::Invalid("nearest-neighbour Hamiltonians need n >= 2".into()));
    }
    let (x, y, z) = (linalg::pauli_x(), linalg::pauli_y(), linalg::pauli_z());
    let terms: Vec<CMatrix> = match family {
        Family::Heisenberg => {
            let h = two_site_paulis(&x, &x) + two_site_paulis(&y, &y) + two_site_paulis(&z, &z);
            vec![h; n - 1]
        }
        Family::IsingCritical => {
            let xx = two_site_paulis(&x, &x);
            fold_field(n, &z).into_iter().map(|f| -&xx - f).collect()
        }
        Family::RandomNn => {
            let seed = seed.ok_or_else(|| {
                Error::Invalid("the random family needs an explicit seed for reproducibility".into())
            })?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n - 1)
                .map(|_| {
                    let m = CMatrix::from_fn(4, 4, |_, _| {
                        c(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0))
                    });
                    (&m + m.adjoint()) * c(0.5, 0.0)
                })
                .collect()
        }
        Family::Custom => {
            return Err(Error::Invalid("custom Hamiltonians are built from explicit terms".into()))
        }
    };
    let mut h = NearestNeighbourHamiltonian::from_terms(n, terms)?;
    h.family = family;
    h.seed = if family == Family::RandomNn { seed } else { None };
    Ok(h)
}

impl NearestNeighbourHamiltonian {
    pub fn from_terms(n: usize, terms: Vec<CMatrix>) -> Result<Self> {
        if n < 2 || terms.len() != n - 1 {
            return Err(Error::Dimension(format!("{} terms for {n} qubits", terms.len())));
        }
        for (i, h) in terms.iter().enumerate() {
            if h.shape() != (4, 4) {
                return Err(Error::Dimension(format!("term {i} is not 4x4")));
            }
            if linalg::frobenius(&(h - h.adjoint())) > 1e-12 {
                return Err(Error::Invalid(format!("term {i} is not Hermitian")));
            }
        }
        let coupling_bound = terms.iter().map(linalg::op_norm).fold(0.0, f64::max);
        Ok(Self { n, terms, family: Family::Custom, seed: None, coupling_bound })
    }

    pub fn to_dense(&self) -> Result<CMatrix> {
        if self.n > OPERATOR_DENSE_CAP {
            return Err(Error::CapExceeded(format!("{} qubits exceeds the dense cap", self.n)));
        }
        let dim = 1usize << self.n;
        let mut out = CMatrix::zeros(dim, dim);
        for (i, h) in self.terms.iter().enumerate() {
            out += linalg::embed_two_site(self.n, i, i + 1, h);
        }
        Ok(out)
    }

    /// `H v` without forming `H`.
    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        let n = self.n;
        let mut out = vec![ZERO; v.len()];
        for (i, h) in self.terms.iter().enumerate() {
            let sa = n - 1 - i;
            let sb = sa - 1;
            for (idx, _) in v.iter().enumerate() {
                if (idx >> sa) & 1 != 0 || (idx >> sb) & 1 != 0 {
                    continue;
                }
                let base = [idx, idx | (1 << sb), idx | (1 << sa), idx | (1 << sa) | (1 << sb)];
                let xin = [v[base[0]], v[base[1]], v[base[2]], v[base[3]]];
                for (row, &dst) in base.iter().enumerate() {
                    let mut acc = ZERO;
                    for (col, x) in xin.iter().enumerate() {
                        acc += h[(row, col)] * x;
                    }
                    out[dst] += acc;
                }
            }
        }
        out
    }

    /// `||H||` and `t_n = 1/||H||`; dense eigen-solve up to
    /// [`DENSE_EIGEN_CAP`] qubits, Lanczos above.
    pub fn operator_norm(&self) -> Result<NormInfo> {
        let (lambda_min, lambda_max) = if self.n <= DENSE_EIGEN_CAP {
            let vals = linalg::eigvalsh(&self.to_dense()?);
            (vals[0], vals[vals.len() - 1])
        } else {
            self.extremal_eigenvalues()
        };
        let norm = lambda_min.abs().max(lambda_max.abs());
        if norm <= f64::EPSILON {
            return Err(Error::Invalid("H = 0 has no time unit 1/||H||".into()));
        }
        Ok(NormInfo { norm, lambda_min, lambda_max, t_n: 1.0 / norm })
    }

    /// Lanczos with full reorthogonalization.
    pub fn extremal_eigenvalues(&self) -> (f64, f64) {
        let dim = 1usize << self.n;
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let v0 = linalg::random_vector(dim, &mut rng);
        let mut basis: Vec<Vec<C64>> = vec![v0.as_slice().to_vec()];
        let (mut alphas, mut betas) = (Vec::new(), Vec::new());
        let max_steps = dim.min(300);
        let mut last = (f64::NAN, f64::NAN);
        for j in 0..max_steps {
            let mut w = self.apply(&basis[j]);
            for _ in 0..2 {
                for b in &basis {
                    let proj: C64 = b.iter().zip(&w).map(|(x, y)| x.conj() * y).sum();
                    for (wi, bi) in w.iter_mut().zip(b) {
                        *wi -= proj * bi;
                    }
                }
            }
            let hv = self.apply(&basis[j]);
            let alpha: f64 = basis[j].iter().zip(&hv).map(|(x, y)| (x.conj() * y).re).sum();
            alphas.push(alpha);
            let beta = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let done = beta < 1e-12 || j + 1 == max_steps;
            if (j + 1) % 10 == 0 || done {
                let k = alphas.len();
                let mut t = DMatrix::<f64>::zeros(k, k);
                for i in 0..k {
                    t[(i, i)] = alphas[i];
                    if i + 1 < k {
                        t[(i, i + 1)] = betas[i];
                        t[(i + 1, i)] = betas[i];
                    }
                }
                let ev = t.symmetric_eigenvalues();
                let cur = (ev.min(), ev.max());
                let scale = cur.0.abs().max(cur.1.abs()).max(1.0);
                if done || ((cur.0 - last.0).abs() < 1e-13 * scale && (cur.1 - last.1).abs() < 1e-13 * scale) {
                    return cur;
                }
                last = cur;
            }
            betas.push(beta);
            basis.push(w.iter().map(|z| z / beta).collect());
        }
        last
    }

    /// `H` as an MPO (sum of embedded bond terms, compressed).
    pub fn to_mpo(&self) -> Result<Mpo> {
        let mut total: Option<Mpo> = None;
        for (i, h) in self.terms.iter().enumerate() {
            let term = Mpo::two_site(self.n, i, i + 1, h)?;
            total = Some(match total {
                None => term,
                Some(acc) => acc.add(&term)?.compress(Truncation::default()).0,
            });
        }
        Ok(total.expect("n >= 2"))
    }

    /// Named families serialize as family, size and seed; custom ones as raw terms.
    pub fn to_text(&self) -> String {
        let mut out = format!("family {}\nqubits {}\n", self.family.name(), self.n);
        if let Some(seed) = self.seed {
            let _ = writeln!(out, "seed {seed}");
        }
        if self.family == Family::Custom {
            for h in &self.terms {
                out.push_str("term");
                for z in linalg::to_rowmajor(h) {
                    let _ = write!(out, " {:e} {:e}", z.re, z.im);
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (mut family, mut n, mut seed) = (None, None, None);
        let mut terms = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let key = it.next().unwrap();
            let rest: Vec<&str> = it.collect();
            let first = || rest.first().copied().ok_or_else(|| parse_err(lineno + 1, "missing value"));
            match key {
                "family" => {
                    family = Some(
                        Family::parse(first()?)
                            .ok_or_else(|| parse_err(lineno + 1, "unknown family"))?,
                    )
                }
                "qubits" => n = Some(first()?.parse().map_err(|_| parse_err(lineno + 1, "bad qubit count"))?),
                "seed" => seed = Some(first()?.parse().map_err(|_| parse_err(lineno + 1, "bad seed"))?),
                "term" => {
                    let vals = rest
                        .iter()
                        .map(|s| s.parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| parse_err(lineno + 1, e.to_string()))?;
                    if vals.len() != 32 {
                        return Err(parse_err(lineno + 1, "a term needs 16 complex entries"));
                    }
                    let data: Vec<C64> = vals.chunks(2).map(|p| c(p[0], p[1])).collect();
                    terms.push(linalg::from_rowmajor(4, 4, &data));
                }
                other => return Err(parse_err(lineno + 1, format!("unknown key `{other}`"))),
            }
        }
        let family = family.ok_or_else(|| parse_err(0, "missing `family`"))?;
        let n = n.ok_or_else(|| parse_err(0, "missing `qubits`"))?;
        match family {
            Family::Custom => NearestNeighbourHamiltonian::from_terms(n, terms),
            f => build_family(f, n, seed),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EvolutionMethod {
    /// Exact exponential through the eigendecomposition of the dense `H`.
    Dense,
    /// Second-order splitting of even and odd bonds with time step `step`.
    Trotter { order: usize, step: f64 },
}

#[derive(Clone, Debug)]
pub struct EvolutionSpec<'a> {
    pub hamiltonian: &'a NearestNeighbourHamiltonian,
    pub t: f64,
    pub method: EvolutionMethod,
    pub trunc: Truncation,
}

impl<'a> EvolutionSpec<'a> {
    /// Dense up to the operator cap, `trotter(2, t/200)` above.
    pub fn with_default_method(hamiltonian: &'a NearestNeighbourHamiltonian, t: f64) -> Self {
        let method = if hamiltonian.n <= OPERATOR_DENSE_CAP {
            EvolutionMethod::Dense
        } else {
            EvolutionMethod::Trotter { order: 2, step: t.abs().max(f64::MIN_POSITIVE) / 200.0 }
        };
        Self { hamiltonian, t, method, trunc: Truncation::default() }
    }
}

#[derive(Clone, Debug)]
pub struct Evolution {
    pub mpo: Mpo,
    /// Compression error (Frobenius, normalized by `2^{n/2}`) plus, for
    /// Trotter, the splitting error estimate in operator norm.
    pub error_estimate: f64,
}

pub fn evolve(spec: &EvolutionSpec<'_>) -> Result<Evolution> {
    if !spec.t.is_finite() {
        return Err(Error::Invalid("evolution time must be finite".into()));
    }
    let h = spec.hamiltonian;
    let n = h.n;
    let norm = (n as f64 / 2.0).exp2();
    match spec.method {
        EvolutionMethod::Dense => {
            if n > OPERATOR_DENSE_CAP {
                return Err(Error::CapExceeded(format!("dense evolution refused for {n} qubits")));
            }
            let u = dense_evolution(&h.to_dense()?, spec.t);
            let (mpo, err) = Mpo::from_dense(&u, n, spec.trunc)?;
            Ok(Evolution { mpo, error_estimate: err / norm })
        }
        EvolutionMethod::Trotter { order, step } => {
            if order != 2 {
                return Err(Error::Invalid(format!("only second-order splitting is implemented, got {order}")));
            }
            if step <= 0.0 {
                return Err(Error::Invalid("Trotter step must be positive".into()));
            }
            let steps = (spec.t.abs() / step).ceil().max(if spec.t == 0.0 { 0.0 } else { 1.0 }) as usize;
            let mut u = Mpo::identity(n);
            if steps == 0 {
                return Ok(Evolution { mpo: u, error_estimate: 0.0 });
            }
            let dt = spec.t / steps as f64;
            let half_even = bond_layer(h, 0, dt / 2.0)?;
            let full_odd = bond_layer(h, 1, dt)?;
            let mut err = 0.0;
            for _ in 0..steps {
                for layer in [&half_even, &full_odd, &half_even] {
                    let (next, e) = multiply_uncompressed(layer, &u)?.compress(spec.trunc);
                    err += e / norm;
                    u = next;
                }
            }
            let j = h.coupling_bound;
            let splitting = spec.t.abs() * dt * dt * (n.saturating_sub(2) as f64) * 1.5 * j.powi(3);
            Ok(Evolution { mpo: u, error_estimate: err + splitting })
        }
    }
}

/// `exp(-i H t)` for dense Hermitian `H`.
pub fn dense_evolution(h: &CMatrix, t: f64) -> CMatrix {
    linalg::hermitian_function(h, |e| C64::from_polar(1.0, -e * t))
}

/// Product of `exp(-i h_i dt)` over bonds `i = parity, parity + 2, ...`.
fn bond_layer(h: &NearestNeighbourHamiltonian, parity: usize, dt: f64) -> Result<Mpo> {
    let mut layer = Mpo::identity(h.n);
    for i in (parity..h.n - 1).step_by(2) {
        let g = dense_evolution(&h.terms[i], dt);
        layer = multiply_uncompressed(&Mpo::two_site(h.n, i, i + 1, &g)?, &layer)?;
    }
    Ok(layer)
}

/// Dense ground-truth vector `exp(-iHt) v` helper for small tests.
pub fn evolve_vector(h: &CMatrix, t: f64, v: &DVector<C64>) -> DVector<C64> {
    dense_evolution(h, t) * v
}
