//! Gate lists, depth profiles and circuit MPOs.
//!
//! Qubits are 0-based here. A circuit applies its gates first to last, so the
//! unitary is `U_N ... U_1`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::error::{parse_err, Error, Result};
use crate::linalg::{self, c, from_rowmajor, CMatrix, C64, I, ONE, ZERO};
use crate::mpo::{multiply_uncompressed, Mpo};
use crate::mps::Truncation;

#[derive(Clone, Debug, PartialEq)]
pub enum GateKind {
    H,
    X,
    Y,
    Z,
    S,
    T,
    Rx(f64),
    Ry(f64),
    Rz(f64),
    /// Control first, target second.
    Cnot,
    Cz,
    Swap,
    /// Controlled phase `diag(1, 1, 1, e^{i phi})`.
    Cr(f64),
    Unitary1(CMatrix),
    Unitary2(CMatrix),
}

impl GateKind {
    pub fn arity(&self) -> usize {
        match self {
            GateKind::Cnot | GateKind::Cz | GateKind::Swap | GateKind::Cr(_) | GateKind::Unitary2(_) => 2,
            _ => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GateKind::H => "h",
            GateKind::X => "x",
            GateKind::Y => "y",
            GateKind::Z => "z",
            GateKind::S => "s",
            GateKind::T => "t",
            GateKind::Rx(_) => "rx",
            GateKind::Ry(_) => "ry",
            GateKind::Rz(_) => "rz",
            GateKind::Cnot => "cnot",
            GateKind::Cz => "cz",
            GateKind::Swap => "swap",
            GateKind::Cr(_) => "cr",
            GateKind::Unitary1(_) => "u1",
            GateKind::Unitary2(_) => "u2",
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            GateKind::Rx(a) | GateKind::Ry(a) | GateKind::Rz(a) | GateKind::Cr(a) => vec![*a],
            GateKind::Unitary1(m) | GateKind::Unitary2(m) => {
                linalg::to_rowmajor(m).iter().flat_map(|z| [z.re, z.im]).collect()
            }
            _ => vec![],
        }
    }

    pub fn matrix(&self) -> CMatrix {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            GateKind::H => linalg::hadamard(),
            GateKind::X => linalg::pauli_x(),
            GateKind::Y => linalg::pauli_y(),
            GateKind::Z => linalg::pauli_z(),
            GateKind::S => from_rowmajor(2, 2, &[ONE, ZERO, ZERO, I]),
            GateKind::T => from_rowmajor(2, 2, &[ONE, ZERO, ZERO, c(h, h)]),
            GateKind::Rx(a) => {
                let (co, si) = ((a / 2.0).cos(), (a / 2.0).sin());
                from_rowmajor(2, 2, &[c(co, 0.0), c(0.0, -si), c(0.0, -si), c(co, 0.0)])
            }
            GateKind::Ry(a) => {
                let (co, si) = ((a / 2.0).cos(), (a / 2.0).sin());
                from_rowmajor(2, 2, &[c(co, 0.0), c(-si, 0.0), c(si, 0.0), c(co, 0.0)])
            }
            GateKind::Rz(a) => from_rowmajor(
                2,
                2,
                &[C64::from_polar(1.0, -a / 2.0), ZERO, ZERO, C64::from_polar(1.0, a / 2.0)],
            ),
            GateKind::Cnot => {
                let mut m = CMatrix::zeros(4, 4);
                m[(0, 0)] = ONE;
                m[(1, 1)] = ONE;
                m[(2, 3)] = ONE;
                m[(3, 2)] = ONE;
                m
            }
            GateKind::Cz => diag4([ONE, ONE, ONE, -ONE]),
            GateKind::Swap => {
                let mut m = CMatrix::zeros(4, 4);
                m[(0, 0)] = ONE;
                m[(1, 2)] = ONE;
                m[(2, 1)] = ONE;
                m[(3, 3)] = ONE;
                m
            }
            GateKind::Cr(phi) => diag4([ONE, ONE, ONE, C64::from_polar(1.0, *phi)]),
            GateKind::Unitary1(m) | GateKind::Unitary2(m) => m.clone(),
        }
    }

    fn from_name(name: &str, params: &[f64]) -> Option<Self> {
        let one = || params.first().copied();
        let matrix = |dim: usize| {
            (params.len() == 2 * dim * dim).then(|| {
                let data: Vec<C64> = params.chunks(2).map(|p| c(p[0], p[1])).collect();
                from_rowmajor(dim, dim, &data)
            })
        };
        let (kind, nparams) = match name {
            "h" => (GateKind::H, 0),
            "x" => (GateKind::X, 0),
            "y" => (GateKind::Y, 0),
            "z" => (GateKind::Z, 0),
            "s" => (GateKind::S, 0),
            "t" => (GateKind::T, 0),
            "rx" => (GateKind::Rx(one()?), 1),
            "ry" => (GateKind::Ry(one()?), 1),
            "rz" => (GateKind::Rz(one()?), 1),
            "cnot" => (GateKind::Cnot, 0),
            "cz" => (GateKind::Cz, 0),
            "swap" => (GateKind::Swap, 0),
            "cr" => (GateKind::Cr(one()?), 1),
            "u1" => (GateKind::Unitary1(matrix(2)?), 8),
            "u2" => (GateKind::Unitary2(matrix(4)?), 32),
            _ => return None,
        };
        (params.len() == nparams).then_some(kind)
    }
}

fn diag4(d: [C64; 4]) -> CMatrix {
    let mut m = CMatrix::zeros(4, 4);
    for (i, v) in d.into_iter().enumerate() {
        m[(i, i)] = v;
    }
    m
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gate {
    pub kind: GateKind,
    /// One site, or `[first factor, second factor]` for two-qubit gates.
    pub sites: Vec<usize>,
}

impl Gate {
    pub fn one(kind: GateKind, q: usize) -> Self {
        Self { kind, sites: vec![q] }
    }

    pub fn two(kind: GateKind, a: usize, b: usize) -> Self {
        Self { kind, sites: vec![a, b] }
    }

    /// `(l, r)` with `l <= r`.
    pub fn span(&self) -> (usize, usize) {
        let lo = *self.sites.iter().min().unwrap();
        let hi = *self.sites.iter().max().unwrap();
        (lo, hi)
    }

    pub fn mpo(&self, n: usize) -> Result<Mpo> {
        let m = self.kind.matrix();
        match self.sites.as_slice() {
            [q] => Ok(Mpo::single_site(n, *q, &m)),
            [a, b] => Mpo::two_site(n, *a, *b, &m),
            _ => Err(Error::Invalid("gates act on one or two qubits".into())),
        }
    }

    /// Dense `2^n x 2^n` embedding, built independently of the MPO path.
    pub fn dense(&self, n: usize) -> CMatrix {
        let m = self.kind.matrix();
        match self.sites.as_slice() {
            [q] => linalg::embed_ops(n, &[(*q, m)]),
            [a, b] => linalg::embed_two_site(n, *a, *b, &m),
            _ => unreachable!("validated on construction"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Circuit {
    n: usize,
    gates: Vec<Gate>,
}

/// Straddling-gate counts per cut.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DepthProfile {
    /// `d[i]` counts two-qubit gates with `l <= i < r` (cut between qubits i and i+1).
    pub d: Vec<usize>,
    pub d_max: usize,
}

/// MPO of a circuit with its compression bookkeeping.
#[derive(Clone, Debug)]
pub struct CircuitMpo {
    pub mpo: Mpo,
    /// Accumulated Frobenius error normalized by `2^{n/2}`.
    pub fro_error: f64,
    /// Largest bond seen at each cut before any compression step.
    pub peak_bonds: Vec<usize>,
}

impl Circuit {
    pub fn new(n: usize) -> Self {
        Self { n, gates: Vec::new() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn push(&mut self, gate: Gate) -> Result<()> {
        if gate.sites.len() != gate.kind.arity() {
            return Err(Error::Invalid(format!("{} takes {} sites", gate.kind.name(), gate.kind.arity())));
        }
        if gate.sites.iter().any(|&q| q >= self.n) {
            return Err(Error::OutOfRange(format!("gate {:?} on {} qubits", gate.sites, self.n)));
        }
        if gate.sites.len() == 2 && gate.sites[0] == gate.sites[1] {
            return Err(Error::Invalid("two-qubit gate on a single site".into()));
        }
        if !linalg::is_unitary(&gate.kind.matrix(), 1e-10) {
            return Err(Error::Invalid(format!("gate {} is not unitary", gate.kind.name())));
        }
        self.gates.push(gate);
        Ok(())
    }

    pub fn with(mut self, gate: Gate) -> Result<Self> {
        self.push(gate)?;
        Ok(self)
    }

    pub fn depth_profile(&self) -> DepthProfile {
        let cuts = self.n.saturating_sub(1);
        let mut d = vec![0; cuts];
        for g in self.gates.iter().filter(|g| g.sites.len() == 2) {
            let (l, r) = g.span();
            for x in d.iter_mut().take(r).skip(l) {
                *x += 1;
            }
        }
        let d_max = d.iter().copied().max().unwrap_or(0);
        DepthProfile { d, d_max }
    }

    /// Ordered dense product of the gates.
    pub fn to_dense(&self) -> Result<CMatrix> {
        if self.n > crate::mpo::OPERATOR_DENSE_CAP {
            return Err(Error::CapExceeded(format!("{} qubits exceeds the dense cap", self.n)));
        }
        let mut u = linalg::identity(1 << self.n);
        for g in &self.gates {
            u = g.dense(self.n) * u;
        }
        Ok(u)
    }

    /// One gate per line: `name sites... params...`, preceded by `qubits n`.
    pub fn to_text(&self) -> String {
        let mut out = format!("qubits {}\n", self.n);
        for g in &self.gates {
            out.push_str(g.kind.name());
            for q in &g.sites {
                let _ = write!(out, " {q}");
            }
            for p in g.kind.params() {
                let _ = write!(out, " {p:e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut circuit: Option<Circuit> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let name = fields.next().unwrap();
            let rest: Vec<&str> = fields.collect();
            if name == "qubits" {
                let n = rest
                    .first()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| parse_err(lineno + 1, "expected `qubits <n>`"))?;
                circuit = Some(Circuit::new(n));
                continue;
            }
            let c = circuit.as_mut().ok_or_else(|| parse_err(lineno + 1, "missing `qubits` header"))?;
            let arity = match name {
                "h" | "x" | "y" | "z" | "s" | "t" | "rx" | "ry" | "rz" | "u1" => 1,
                "cnot" | "cz" | "swap" | "cr" | "u2" => 2,
                _ => return Err(parse_err(lineno + 1, format!("unknown gate `{name}`"))),
            };
            if rest.len() < arity {
                return Err(parse_err(lineno + 1, "too few sites"));
            }
            let sites = rest[..arity]
                .iter()
                .map(|s| s.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(lineno + 1, e.to_string()))?;
            let params = rest[arity..]
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(lineno + 1, e.to_string()))?;
            let kind = GateKind::from_name(name, &params)
                .ok_or_else(|| parse_err(lineno + 1, format!("bad parameters for `{name}`")))?;
            c.push(Gate { kind, sites }).map_err(|e| parse_err(lineno + 1, e.to_string()))?;
        }
        circuit.ok_or_else(|| parse_err(0, "empty circuit file"))
    }
}

/// Sequential product of gate MPOs, compressing after every multiplication.
pub fn circuit_to_mpo(c: &Circuit, trunc: Truncation) -> Result<CircuitMpo> {
    let n = c.n();
    let norm = (n as f64 / 2.0).exp2();
    let mut u = Mpo::identity(n);
    let mut peak = vec![1; n.saturating_sub(1)];
    let mut err = 0.0;
    for g in c.gates() {
        let product = multiply_uncompressed(&g.mpo(n)?, &u)?;
        for (p, b) in peak.iter_mut().zip(product.bond_dims()) {
            *p = (*p).max(b);
        }
        let (compressed, step) = product.compress(trunc);
        // Later gates are unitary, so earlier errors keep their norm.
        err += step / norm;
        u = compressed;
    }
    Ok(CircuitMpo { mpo: u, fro_error: err, peak_bonds: peak })
}

/// `CN_{n-1,n} ... CN_{1,2} H_1`.
pub fn build_ghz(n: usize) -> Circuit {
    let mut c = Circuit::new(n);
    c.gates.push(Gate::one(GateKind::H, 0));
    for q in 0..n.saturating_sub(1) {
        c.gates.push(Gate::two(GateKind::Cnot, q, q + 1));
    }
    c
}

/// Quantum Fourier transform with qubit 0 most significant and no final swaps.
pub fn build_qft(n: usize) -> Circuit {
    build_qft_approx(n, n.saturating_sub(1))
}

/// QFT without the controlled rotations `CR_{k,k+j}` for `j > c`.
pub fn build_qft_approx(n: usize, c: usize) -> Circuit {
    let mut circuit = Circuit::new(n);
    for k in 0..n {
        circuit.gates.push(Gate::one(GateKind::H, k));
        for j in 1..n - k {
            if j <= c {
                circuit.gates.push(Gate::two(GateKind::Cr(PI / (1u64 << j) as f64), k, k + j));
            }
        }
    }
    circuit
}

/// Operator-norm bound `n pi / 2^c` on `||QFT - QFT_c||`.
pub fn qft_approx_error_bound(n: usize, c: usize) -> f64 {
    n as f64 * PI / (c as f64).exp2()
}
