//! Local Pauli measurements on Choi states, exact and sampled.
//!
//! Outcome vectors are indexed by the window's `r` bits with the first site most
//! significant; bit 0 is the `+1` eigenvector, bit 1 the `-1` one.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;

use crate::error::{parse_err, Error, Result};
use crate::linalg::{self, c, CMatrix, C64, ONE, ZERO};
use crate::mpo::{apply_mpo, Mpo};
use crate::mps::{Mps, Tensor3, Truncation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pauli {
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 3] = [Pauli::X, Pauli::Y, Pauli::Z];

    pub fn symbol(self) -> char {
        match self {
            Pauli::X => 'x',
            Pauli::Y => 'y',
            Pauli::Z => 'z',
        }
    }

    pub fn from_symbol(ch: char) -> Option<Self> {
        match ch {
            'x' | 'X' => Some(Pauli::X),
            'y' | 'Y' => Some(Pauli::Y),
            'z' | 'Z' => Some(Pauli::Z),
            _ => None,
        }
    }

    pub fn matrix(self) -> CMatrix {
        match self {
            Pauli::X => linalg::pauli_x(),
            Pauli::Y => linalg::pauli_y(),
            Pauli::Z => linalg::pauli_z(),
        }
    }

    /// Eigenvector for `s = +1` (`bit = 0`) or `s = -1` (`bit = 1`).
    pub fn eigenvector(self, bit: usize) -> [C64; 2] {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let sign = if bit == 0 { 1.0 } else { -1.0 };
        match self {
            Pauli::X => [c(h, 0.0), c(sign * h, 0.0)],
            Pauli::Y => [c(h, 0.0), c(0.0, sign * h)],
            Pauli::Z => {
                if bit == 0 {
                    [ONE, ZERO]
                } else {
                    [ZERO, ONE]
                }
            }
        }
    }

    /// Columns are the eigenvectors in outcome order.
    pub fn eigenbasis(self) -> CMatrix {
        let (p, m) = (self.eigenvector(0), self.eigenvector(1));
        linalg::from_rowmajor(2, 2, &[p[0], m[0], p[1], m[1]])
    }
}

/// Setting `P_{k; alpha_1 ... alpha_r}` on chain sites `k..k+r`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObservableSpec {
    pub k: usize,
    pub alphas: Vec<Pauli>,
}

impl ObservableSpec {
    pub fn new(k: usize, alphas: Vec<Pauli>) -> Self {
        Self { k, alphas }
    }

    pub fn r(&self) -> usize {
        self.alphas.len()
    }

    pub fn alpha_string(&self) -> String {
        self.alphas.iter().map(|a| a.symbol()).collect()
    }

    pub fn parse(k: usize, alphas: &str) -> Option<Self> {
        let alphas = alphas.chars().map(Pauli::from_symbol).collect::<Option<Vec<_>>>()?;
        (!alphas.is_empty()).then_some(Self { k, alphas })
    }
}

impl fmt::Display for ObservableSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.k, self.alpha_string())
    }
}

/// All `3^r` Pauli strings in lexicographic order (`x < y < z`).
pub fn pauli_strings(r: usize) -> Vec<Vec<Pauli>> {
    (0..3usize.pow(r as u32))
        .map(|mut idx| {
            let mut s = vec![Pauli::X; r];
            for slot in s.iter_mut().rev() {
                *slot = Pauli::ALL[idx % 3];
                idx /= 3;
            }
            s
        })
        .collect()
}

/// The `(2n - r + 1) 3^r` settings on a `2n`-site Choi state, `k` outermost.
pub fn all_specs(n: usize, r: usize) -> Result<Vec<ObservableSpec>> {
    if r == 0 || r > 2 * n {
        return Err(Error::OutOfRange(format!("window width {r} on {} sites", 2 * n)));
    }
    let strings = pauli_strings(r);
    Ok((0..=2 * n - r)
        .flat_map(|k| strings.iter().map(move |a| ObservableSpec::new(k, a.clone())))
        .collect())
}

/// `kron` of the eigenbases, first factor most significant.
pub fn setting_basis(alphas: &[Pauli]) -> CMatrix {
    alphas
        .iter()
        .fold(CMatrix::from_element(1, 1, ONE), |acc, a| linalg::kron(&acc, &a.eigenbasis()))
}

/// `p(s) = <b_s| rho |b_s>` for a window density matrix.
pub fn distribution_from_density(rho: &CMatrix, alphas: &[Pauli]) -> Result<Vec<f64>> {
    let dim = 1usize << alphas.len();
    if rho.shape() != (dim, dim) {
        return Err(Error::Dimension(format!("{}x{} window for {} Paulis", rho.nrows(), rho.ncols(), alphas.len())));
    }
    let v = setting_basis(alphas);
    let rv = rho * &v;
    Ok((0..dim)
        .map(|s| v.column(s).iter().zip(rv.column(s).iter()).map(|(a, b)| (a.conj() * b).re).sum())
        .collect())
}

fn bell_pair_tensors() -> (Tensor3, Tensor3) {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut a = Tensor3::zeros(1, 2, 2);
    let mut s = Tensor3::zeros(2, 2, 1);
    for b in 0..2 {
        let i = a.idx(0, b, b);
        a.data[i] = c(h, 0.0);
        let j = s.idx(b, b, 0);
        s.data[j] = ONE;
    }
    (a, s)
}

/// `2n`-site product of `(|00> + |11>)/sqrt 2` pairs, ancilla first in each pair.
pub fn bell_input(n: usize) -> Result<Mps> {
    if n == 0 {
        return Err(Error::Invalid("need at least one qubit".into()));
    }
    let (a, s) = bell_pair_tensors();
    let tensors = (0..n).flat_map(|_| [a.clone(), s.clone()]).collect();
    Mps::new(tensors)
}

/// Chain positions of the system qubits, `1, 3, 5, ...`.
pub fn system_sites(n: usize) -> Vec<usize> {
    (0..n).map(|q| 2 * q + 1).collect()
}

/// `(1 x U)|Phi>` as a normalized MPS, with the truncation error.
pub fn choi_state(u: &Mpo, trunc: Truncation) -> Result<(Mps, f64)> {
    let n = u.len();
    let (psi, err) = apply_mpo(u, &bell_input(n)?, &system_sites(n), trunc)?;
    Ok((psi.normalized(), err))
}

pub fn exact_distribution(psi: &Mps, spec: &ObservableSpec) -> Result<Vec<f64>> {
    let w = psi.reduced_density(spec.k, spec.r())?;
    distribution_from_density(&w.matrix, &spec.alphas)
}

/// Multinomial counts by sequential binomial draws.
pub fn sample<R: rand::Rng + ?Sized>(dist: &[f64], m: u64, rng: &mut R) -> Vec<u64> {
    let mut counts = vec![0; dist.len()];
    let mut remaining = m;
    let mut mass: f64 = dist.iter().map(|p| p.max(0.0)).sum();
    for (i, &p) in dist.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        let p = p.max(0.0);
        if i + 1 == dist.len() || mass <= 0.0 {
            counts[i] = remaining;
            break;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let k = Binomial::new(remaining, q).expect("probability in [0, 1]").sample(rng);
        counts[i] = k;
        remaining -= k;
        mass -= p;
    }
    counts
}

/// Per-setting generator: one seed, one stream per setting index.
pub fn setting_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shots {
    Finite(u64),
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    AncillaAssisted,
    AncillaFree,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::AncillaAssisted => "ancilla_assisted",
            Provenance::AncillaFree => "ancilla_free",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ancilla_assisted" => Some(Provenance::AncillaAssisted),
            "ancilla_free" => Some(Provenance::AncillaFree),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Outcomes {
    Counts(Vec<u64>),
    Exact(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeTable {
    pub spec: ObservableSpec,
    pub outcomes: Outcomes,
}

impl OutcomeTable {
    /// Empirical weights (or exact probabilities).
    pub fn frequencies(&self) -> Vec<f64> {
        match &self.outcomes {
            Outcomes::Counts(cnt) => {
                let total: u64 = cnt.iter().sum();
                cnt.iter().map(|&x| x as f64 / total.max(1) as f64).collect()
            }
            Outcomes::Exact(p) => p.clone(),
        }
    }

    pub fn counts(&self) -> Option<&[u64]> {
        match &self.outcomes {
            Outcomes::Counts(c) => Some(c),
            Outcomes::Exact(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementDataset {
    pub n: usize,
    pub r: usize,
    pub shots: Shots,
    pub provenance: Provenance,
    pub seed: Option<u64>,
    pub tables: Vec<OutcomeTable>,
}

impl MeasurementDataset {
    /// Checks coverage, outcome lengths and normalization.
    pub fn validate(&self) -> Result<()> {
        let expected = all_specs(self.n, self.r)?;
        let present: HashMap<&ObservableSpec, &OutcomeTable> = self.tables.iter().map(|t| (&t.spec, t)).collect();
        let missing: Vec<String> =
            expected.iter().filter(|s| !present.contains_key(s)).map(|s| s.to_string()).collect();
        if !missing.is_empty() {
            return Err(Error::IncompleteDataset(missing));
        }
        if present.len() != self.tables.len() || self.tables.len() != expected.len() {
            return Err(Error::Invalid("duplicate or foreign settings in dataset".into()));
        }
        let dim = 1usize << self.r;
        for t in &self.tables {
            match (&t.outcomes, self.shots) {
                (Outcomes::Counts(cnt), Shots::Finite(m)) if cnt.len() == dim => {
                    if cnt.iter().sum::<u64>() != m {
                        return Err(Error::Invalid(format!("counts of {} do not sum to {m}", t.spec)));
                    }
                }
                (Outcomes::Exact(p), Shots::Exact) if p.len() == dim => {
                    let total: f64 = p.iter().sum();
                    if (total - 1.0).abs() > 1e-12 || p.iter().any(|&x| x < -1e-12) {
                        return Err(Error::Invalid(format!("distribution of {} is not normalized", t.spec)));
                    }
                }
                _ => return Err(Error::Invalid(format!("outcomes of {} do not match the header", t.spec))),
            }
        }
        Ok(())
    }

    pub fn table(&self, spec: &ObservableSpec) -> Option<&OutcomeTable> {
        self.tables.iter().find(|t| &t.spec == spec)
    }

    /// Header lines, then `spec <k> <alphas> <values...>` per setting.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# outcome index: first site most significant, bit 0 is s = +1\n");
        let _ = writeln!(out, "n {}\nr {}", self.n, self.r);
        match self.shots {
            Shots::Finite(m) => {
                let _ = writeln!(out, "shots {m}");
            }
            Shots::Exact => out.push_str("shots exact\n"),
        }
        let _ = writeln!(out, "provenance {}", self.provenance.name());
        match self.seed {
            Some(s) => {
                let _ = writeln!(out, "seed {s}");
            }
            None => out.push_str("seed none\n"),
        }
        for t in &self.tables {
            let _ = write!(out, "spec {} {}", t.spec.k, t.spec.alpha_string());
            match &t.outcomes {
                Outcomes::Counts(cnt) => cnt.iter().for_each(|x| {
                    let _ = write!(out, " {x}");
                }),
                Outcomes::Exact(p) => p.iter().for_each(|x| {
                    let _ = write!(out, " {x:e}");
                }),
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (mut n, mut r, mut shots, mut provenance, mut seed) = (None, None, None, None, None);
        let mut tables = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let ln = lineno + 1;
            let fields: Vec<&str> = line.split_whitespace().collect();
            let value = || fields.get(1).copied().ok_or_else(|| parse_err(ln, "missing value"));
            match fields[0] {
                "n" => n = Some(value()?.parse::<usize>().map_err(|e| parse_err(ln, e.to_string()))?),
                "r" => r = Some(value()?.parse::<usize>().map_err(|e| parse_err(ln, e.to_string()))?),
                "shots" => {
                    shots = Some(match value()? {
                        "exact" => Shots::Exact,
                        v => Shots::Finite(v.parse().map_err(|_| parse_err(ln, "bad shot count"))?),
                    })
                }
                "provenance" => {
                    provenance = Some(Provenance::parse(value()?).ok_or_else(|| parse_err(ln, "unknown provenance"))?)
                }
                "seed" => {
                    seed = match value()? {
                        "none" => None,
                        v => Some(v.parse().map_err(|_| parse_err(ln, "bad seed"))?),
                    }
                }
                "spec" => {
                    let shots = shots.ok_or_else(|| parse_err(ln, "`shots` must precede the records"))?;
                    if fields.len() < 3 {
                        return Err(parse_err(ln, "expected `spec <k> <alphas> <values...>`"));
                    }
                    let k = fields[1].parse().map_err(|_| parse_err(ln, "bad offset"))?;
                    let spec = ObservableSpec::parse(k, fields[2]).ok_or_else(|| parse_err(ln, "bad Pauli string"))?;
                    let vals = &fields[3..];
                    let outcomes = match shots {
                        Shots::Finite(_) => Outcomes::Counts(
                            vals.iter()
                                .map(|v| v.parse())
                                .collect::<std::result::Result<_, _>>()
                                .map_err(|_| parse_err(ln, "bad count"))?,
                        ),
                        Shots::Exact => Outcomes::Exact(
                            vals.iter()
                                .map(|v| v.parse())
                                .collect::<std::result::Result<_, _>>()
                                .map_err(|_| parse_err(ln, "bad probability"))?,
                        ),
                    };
                    tables.push(OutcomeTable { spec, outcomes });
                }
                other => return Err(parse_err(ln, format!("unknown key `{other}`"))),
            }
        }
        let ds = MeasurementDataset {
            n: n.ok_or_else(|| parse_err(0, "missing `n`"))?,
            r: r.ok_or_else(|| parse_err(0, "missing `r`"))?,
            shots: shots.ok_or_else(|| parse_err(0, "missing `shots`"))?,
            provenance: provenance.ok_or_else(|| parse_err(0, "missing `provenance`"))?,
            seed,
            tables,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn check_shots(shots: Shots, seed: Option<u64>) -> Result<()> {
    match (shots, seed) {
        (Shots::Finite(0), _) => Err(Error::Invalid("at least one shot per setting".into())),
        (Shots::Finite(_), None) => Err(Error::Invalid("sampling needs a seed".into())),
        _ => Ok(()),
    }
}

fn outcomes_for(dist: Vec<f64>, shots: Shots, seed: Option<u64>, index: usize) -> Outcomes {
    match shots {
        Shots::Exact => Outcomes::Exact(dist),
        Shots::Finite(m) => {
            let mut rng = setting_rng(seed.expect("checked"), index as u64);
            Outcomes::Counts(sample(&dist, m, &mut rng))
        }
    }
}

/// Ancilla-assisted dataset: every setting measured directly on `psi`.
pub fn simulate_dataset(psi: &Mps, r: usize, shots: Shots, seed: Option<u64>) -> Result<MeasurementDataset> {
    check_shots(shots, seed)?;
    if psi.len() % 2 != 0 {
        return Err(Error::Dimension("Choi states have an even number of sites".into()));
    }
    let n = psi.len() / 2;
    let specs = all_specs(n, r)?;
    let windows = psi.all_reduced_densities(r)?;
    let tables = specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let dist = distribution_from_density(&windows[spec.k].matrix, &spec.alphas)?;
            Ok(OutcomeTable { spec: spec.clone(), outcomes: outcomes_for(dist, shots, seed, i) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MeasurementDataset { n, r, shots, provenance: Provenance::AncillaAssisted, seed, tables })
}

/// What to prepare on a system qubit in the ancilla-free scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preparation {
    /// Uniformly random computational basis state.
    MaximallyMixed,
    /// Complex conjugate of the Pauli eigenvector selected by a uniformly random sign.
    TransposedEigenstate(Pauli),
}

impl Preparation {
    /// State prepared for outcome bit `bit` of the replaced ancilla measurement.
    pub fn state(self, bit: usize) -> [C64; 2] {
        match self {
            Preparation::MaximallyMixed => Pauli::Z.eigenvector(bit),
            Preparation::TransposedEigenstate(p) => {
                let v = p.eigenvector(bit);
                [v[0].conj(), v[1].conj()]
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AncillaFreePlan {
    pub preparation: Vec<Preparation>,
    pub system_observable: Vec<Option<Pauli>>,
    /// Window positions that fall on ancilla sites, with their qubit.
    pub ancilla_positions: Vec<(usize, usize)>,
    /// Window positions that fall on system sites, with their qubit.
    pub system_positions: Vec<(usize, usize)>,
}

pub fn ancilla_free_plan(spec: &ObservableSpec, n: usize) -> Result<AncillaFreePlan> {
    if spec.r() == 0 || spec.k + spec.r() > 2 * n {
        return Err(Error::OutOfRange(format!("setting {spec} on {n} qubits")));
    }
    let mut plan = AncillaFreePlan {
        preparation: vec![Preparation::MaximallyMixed; n],
        system_observable: vec![None; n],
        ancilla_positions: Vec::new(),
        system_positions: Vec::new(),
    };
    for (pos, &alpha) in spec.alphas.iter().enumerate() {
        let site = spec.k + pos;
        let q = site / 2;
        if site % 2 == 0 {
            plan.preparation[q] = Preparation::TransposedEigenstate(alpha);
            plan.ancilla_positions.push((pos, q));
        } else {
            plan.system_observable[q] = Some(alpha);
            plan.system_positions.push((pos, q));
        }
    }
    Ok(plan)
}

/// Input state for one ancilla outcome pattern: prepared qubits carry a
/// dummy `|0>` ancilla, the others stay in Bell pairs (the maximally mixed
/// marginal).
fn prepared_input(plan: &AncillaFreePlan, bits: &[usize]) -> Result<Mps> {
    let (bell_a, bell_s) = bell_pair_tensors();
    let mut tensors = Vec::with_capacity(2 * plan.preparation.len());
    let mut by_qubit = HashMap::new();
    for (&(_, q), &b) in plan.ancilla_positions.iter().zip(bits) {
        by_qubit.insert(q, b);
    }
    for (q, prep) in plan.preparation.iter().enumerate() {
        match (prep, by_qubit.get(&q)) {
            (Preparation::TransposedEigenstate(_), Some(&b)) => {
                let v = prep.state(b);
                tensors.push(Tensor3::from_data(1, 2, 1, vec![ONE, ZERO])?);
                tensors.push(Tensor3::from_data(1, 2, 1, v.to_vec())?);
            }
            _ => {
                tensors.push(bell_a.clone());
                tensors.push(bell_s.clone());
            }
        }
    }
    Mps::new(tensors)
}

fn bits_of(idx: usize, width: usize) -> Vec<usize> {
    (0..width).map(|j| (idx >> (width - 1 - j)) & 1).collect()
}

/// Conditional system distributions `p(s_S | s_A)` for every ancilla pattern
/// `s_A`, each returned as a full window distribution with the ancilla bits
/// set to zero.
fn conditional_windows(
    u: &Mpo,
    spec: &ObservableSpec,
    plan: &AncillaFreePlan,
    trunc: Truncation,
) -> Result<Vec<Vec<f64>>> {
    let m_a = plan.ancilla_positions.len();
    let mut measured = spec.alphas.clone();
    for &(pos, _) in &plan.ancilla_positions {
        measured[pos] = Pauli::Z;
    }
    (0..1usize << m_a)
        .map(|pattern| {
            let input = prepared_input(plan, &bits_of(pattern, m_a))?;
            let (out, _) = apply_mpo(u, &input, &system_sites(u.len()), trunc)?;
            exact_distribution(&out, &ObservableSpec::new(spec.k, measured.clone()))
        })
        .collect()
}

fn assemble(spec: &ObservableSpec, plan: &AncillaFreePlan, pattern: usize, cond: &[f64], weight: f64, out: &mut [f64]) {
    let r = spec.r();
    let m_a = plan.ancilla_positions.len();
    let a_bits = bits_of(pattern, m_a);
    for (idx, &p) in cond.iter().enumerate() {
        let bits = bits_of(idx, r);
        if plan.ancilla_positions.iter().any(|&(pos, _)| bits[pos] != 0) {
            continue;
        }
        let mut target = idx;
        for (&(pos, _), &b) in plan.ancilla_positions.iter().zip(&a_bits) {
            target |= b << (r - 1 - pos);
        }
        out[target] += weight * p;
    }
}

/// Exact outcome distribution of `spec` obtained without ancillas:
/// `p(s_A, s_S) = 2^{-m_A} tr[U P_A^t U^dag P_S] / 2^{n - m_A}`.
pub fn ancilla_free_distribution(u: &Mpo, spec: &ObservableSpec, trunc: Truncation) -> Result<Vec<f64>> {
    let plan = ancilla_free_plan(spec, u.len())?;
    let m_a = plan.ancilla_positions.len();
    let weight = 1.0 / (1usize << m_a) as f64;
    let mut out = vec![0.0; 1 << spec.r()];
    for (pattern, cond) in conditional_windows(u, spec, &plan, trunc)?.iter().enumerate() {
        assemble(spec, &plan, pattern, cond, weight, &mut out);
    }
    Ok(out)
}

/// Ancilla-free dataset. Shots first pick the ancilla pattern uniformly,
/// then the system outcome from the conditional distribution.
pub fn simulate_ancilla_free_dataset(
    u: &Mpo,
    r: usize,
    shots: Shots,
    seed: Option<u64>,
    trunc: Truncation,
) -> Result<MeasurementDataset> {
    check_shots(shots, seed)?;
    let n = u.len();
    let specs = all_specs(n, r)?;
    let tables = specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let plan = ancilla_free_plan(spec, n)?;
            let conds = conditional_windows(u, spec, &plan, trunc)?;
            let m_a = plan.ancilla_positions.len();
            let outcomes = match shots {
                Shots::Exact => {
                    let mut out = vec![0.0; 1 << r];
                    let w = 1.0 / (1usize << m_a) as f64;
                    for (pattern, cond) in conds.iter().enumerate() {
                        assemble(spec, &plan, pattern, cond, w, &mut out);
                    }
                    Outcomes::Exact(out)
                }
                Shots::Finite(m) => {
                    let mut rng = setting_rng(seed.expect("checked"), i as u64);
                    let uniform = vec![1.0 / (1usize << m_a) as f64; 1 << m_a];
                    let per_pattern = sample(&uniform, m, &mut rng);
                    let mut counts = vec![0.0; 1 << r];
                    for (pattern, (&mp, cond)) in per_pattern.iter().zip(&conds).enumerate() {
                        let drawn: Vec<f64> = sample(cond, mp, &mut rng).iter().map(|&x| x as f64).collect();
                        assemble(spec, &plan, pattern, &drawn, 1.0, &mut counts);
                    }
                    Outcomes::Counts(counts.iter().map(|&x| x.round() as u64).collect())
                }
            };
            Ok(OutcomeTable { spec: spec.clone(), outcomes })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MeasurementDataset { n, r, shots, provenance: Provenance::AncillaFree, seed, tables })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_count() {
        for (n, r) in [(1, 1), (2, 2), (3, 3), (4, 2)] {
            assert_eq!(all_specs(n, r).unwrap().len(), (2 * n - r + 1) * 3usize.pow(r as u32));
        }
        assert!(all_specs(1, 3).is_err());
    }

    #[test]
    fn single_bell_pair() {
        let psi = bell_input(1).unwrap();
        let v = psi.to_dense().unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((v[0] - c(h, 0.0)).norm() < 1e-15 && (v[3] - c(h, 0.0)).norm() < 1e-15);
        let xx = exact_distribution(&psi, &ObservableSpec::parse(0, "xx").unwrap()).unwrap();
        let yy = exact_distribution(&psi, &ObservableSpec::parse(0, "yy").unwrap()).unwrap();
        let corr = |p: &[f64]| p[0] - p[1] - p[2] + p[3];
        assert!((corr(&xx) - 1.0).abs() < 1e-12);
        assert!((corr(&yy) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn x_on_zero_is_uniform() {
        let psi = Mps::basis_state(&[0]);
        let p = exact_distribution(&psi, &ObservableSpec::parse(0, "x").unwrap()).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn point_mass_sampling() {
        let mut rng = setting_rng(1, 0);
        assert_eq!(sample(&[0.0, 1.0, 0.0], 50, &mut rng), vec![0, 50, 0]);
    }

    #[test]
    fn pauli_x_channel() {
        let u = Mpo::single_site(1, 0, &linalg::pauli_x());
        let (psi, _) = choi_state(&u, Truncation::default()).unwrap();
        let v = psi.to_dense().unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((v[1] - c(h, 0.0)).norm() < 1e-14 && (v[2] - c(h, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn text_roundtrip() {
        let u = Mpo::single_site(1, 0, &linalg::hadamard());
        let (psi, _) = choi_state(&u, Truncation::default()).unwrap();
        for shots in [Shots::Exact, Shots::Finite(100)] {
            let ds = simulate_dataset(&psi, 2, shots, Some(9)).unwrap();
            ds.validate().unwrap();
            assert_eq!(MeasurementDataset::from_text(&ds.to_text()).unwrap(), ds);
        }
    }

    #[test]
    fn missing_settings_are_listed() {
        let psi = bell_input(1).unwrap();
        let mut ds = simulate_dataset(&psi, 1, Shots::Exact, None).unwrap();
        ds.tables.remove(2);
        match ds.validate() {
            Err(Error::IncompleteDataset(missing)) => assert_eq!(missing, vec!["0:z".to_string()]),
            other => panic!("{other:?}"),
        }
    }
}
