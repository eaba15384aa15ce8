//! From a Choi-state MPS to a unitary MPO and on to a Hamiltonian estimate.

use crate::error::{Error, Result};
use crate::hamiltonian::NearestNeighbourHamiltonian;
use crate::linalg::{self, c, CMatrix, C64, ONE, ZERO};
use crate::mpo::{multiply_mpo, Mpo, OPERATOR_DENSE_CAP};
use crate::mps::{self, Mps, Tensor3, Truncation};

/// How the global phase of a unitary estimate was fixed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhaseMethod {
    Trace,
    LargestEntry,
    Reference,
}

impl PhaseMethod {
    pub fn name(self) -> &'static str {
        match self {
            PhaseMethod::Trace => "trace",
            PhaseMethod::LargestEntry => "largest_entry",
            PhaseMethod::Reference => "reference",
        }
    }
}

/// Requested phase rule.
#[derive(Clone, Copy, Debug)]
pub enum PhaseFix<'a> {
    /// `U tr(U)^* / |tr U|`; fails when the trace is too small.
    Trace,
    /// Phase of the largest-magnitude dense entry (desk scale only).
    LargestEntry,
    /// Phase of `tr(U_ref^dag U)`.
    Reference(&'a Mpo),
    /// Trace rule, falling back to the reference if given, else the largest entry.
    Auto(Option<&'a Mpo>),
}

#[derive(Clone, Debug)]
pub struct UnitaryEstimate {
    pub mpo: Mpo,
    pub phase_fixed: bool,
    /// Trace before phase fixing.
    pub trace_value: C64,
    pub phase_method: Option<PhaseMethod>,
}

impl UnitaryEstimate {
    pub fn n(&self) -> usize {
        self.mpo.len()
    }
}

/// Groups Choi sites `(2q, 2q+1)` into one operator site with output index
/// from the system site and input index from the ancilla, scaled by `2^{n/2}`.
pub fn choi_to_unitary(psi: &Mps) -> Result<UnitaryEstimate> {
    if psi.len() % 2 != 0 || psi.is_empty() {
        return Err(Error::Dimension(format!("{} sites cannot be paired", psi.len())));
    }
    if psi.phys_dim() != 2 {
        return Err(Error::Dimension("Choi states are qubit chains".into()));
    }
    let t = psi.tensors();
    let sqrt2 = std::f64::consts::SQRT_2;
    let sites = t
        .chunks(2)
        .map(|pair| {
            let (a, s) = (&pair[0], &pair[1]);
            let mut w = Tensor3::zeros(a.left, 4, s.right);
            for l in 0..a.left {
                for inp in 0..2 {
                    for m in 0..a.right {
                        let x = a.get(l, inp, m) * sqrt2;
                        if x == ZERO {
                            continue;
                        }
                        for out in 0..2 {
                            for r in 0..s.right {
                                let k = w.idx(l, 2 * out + inp, r);
                                w.data[k] += x * s.get(m, out, r);
                            }
                        }
                    }
                }
            }
            w
        })
        .collect();
    let mpo = Mpo::new(sites)?;
    let trace_value = mpo.trace();
    Ok(UnitaryEstimate { mpo, phase_fixed: false, trace_value, phase_method: None })
}

fn apply_phase(u: &UnitaryEstimate, z: C64, method: PhaseMethod) -> UnitaryEstimate {
    let phase = z.conj() / z.norm();
    UnitaryEstimate {
        mpo: u.mpo.scaled(phase),
        phase_fixed: true,
        trace_value: u.trace_value,
        phase_method: Some(method),
    }
}

/// Relative trace threshold below which the trace rule is refused.
pub const PHASE_TRACE_THRESHOLD: f64 = 1e-8;

pub fn fix_phase(u: &UnitaryEstimate, mode: PhaseFix<'_>) -> Result<UnitaryEstimate> {
    let n = u.n();
    match mode {
        PhaseFix::Trace => {
            let tr = u.mpo.trace();
            let threshold = PHASE_TRACE_THRESHOLD * (n as f64).exp2();
            if tr.norm() < threshold {
                return Err(Error::DegeneratePhase { trace_abs: tr.norm(), threshold });
            }
            Ok(apply_phase(u, tr, PhaseMethod::Trace))
        }
        PhaseFix::LargestEntry => {
            let dense = u.mpo.to_dense()?;
            let z = dense.iter().copied().max_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap_or(ONE);
            if z.norm() == 0.0 {
                return Err(Error::DegeneratePhase { trace_abs: 0.0, threshold: 0.0 });
            }
            Ok(apply_phase(u, z, PhaseMethod::LargestEntry))
        }
        PhaseFix::Reference(r) => {
            let z = r.hs_inner(&u.mpo)?;
            if z.norm() == 0.0 {
                return Err(Error::DegeneratePhase { trace_abs: 0.0, threshold: 0.0 });
            }
            Ok(apply_phase(u, z, PhaseMethod::Reference))
        }
        PhaseFix::Auto(reference) => match fix_phase(u, PhaseFix::Trace) {
            Err(Error::DegeneratePhase { .. }) => match reference {
                Some(r) => fix_phase(u, PhaseFix::Reference(r)),
                None if n <= OPERATOR_DENSE_CAP => fix_phase(u, PhaseFix::LargestEntry),
                None => fix_phase(u, PhaseFix::Trace),
            },
            other => other,
        },
    }
}

/// `|<a|b>|^2 / (<a|a><b|b>)`.
pub fn process_fidelity(truth: &Mps, rec: &Mps) -> Result<f64> {
    let ov = mps::inner(truth, rec)?;
    Ok(ov.norm_sqr() / (truth.norm_sqr() * rec.norm_sqr()))
}

/// Truncation order of the arcsine-type series and its MPO compression.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeriesConfig {
    /// Number of terms `N`.
    pub order: usize,
    /// Compression after each operator product on the MPO path.
    pub trunc: Truncation,
    /// Two-time gaps below this are flagged as noise dominated.
    pub min_gap: f64,
}

impl Default for SeriesConfig {
    fn default() -> Self {
        Self { order: 3, trunc: Truncation::bond(64), min_gap: 1e-6 }
    }
}

impl SeriesConfig {
    pub fn with_order(order: usize) -> Self {
        Self { order, ..Self::default() }
    }

    /// `c_k = (-1)^k / 2^k prod_{j=1}^k j / (j + 1/2)`.
    pub fn coefficients(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.order);
        let mut ck = 1.0;
        for k in 0..self.order {
            if k > 0 {
                let j = k as f64;
                ck *= -0.5 * j / (j + 0.5);
            }
            out.push(ck);
        }
        out
    }
}

#[derive(Clone, Debug)]
pub enum HamiltonianForm {
    Dense(CMatrix),
    Mpo(Mpo),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExtractionMethod {
    SingleTime { t: f64 },
    TwoTime { t: f64, t2: f64 },
}

#[derive(Clone, Debug)]
pub struct HamiltonianEstimate {
    pub form: HamiltonianForm,
    pub method: ExtractionMethod,
    pub projected: bool,
    pub warnings: Vec<String>,
}

impl HamiltonianEstimate {
    pub fn dense(&self) -> Result<CMatrix> {
        match &self.form {
            HamiltonianForm::Dense(m) => Ok(m.clone()),
            HamiltonianForm::Mpo(m) => m.to_dense(),
        }
    }
}

/// Largest `n` for which extraction uses dense matrices.
pub const EXTRACTION_DENSE_CAP: usize = 10;

/// `(1/t) [ S P / 2 + h.c. ]` with `S = (U^dag - U)/2i`, `P = sum_k c_k (C - 1)^k`.
pub fn extract_dense(u: &CMatrix, t: f64, cfg: &SeriesConfig) -> CMatrix {
    let dim = u.nrows();
    let ud = u.adjoint();
    let sin = (&ud - u) * c(0.0, -0.5);
    let x = (&ud + u) * c(0.5, 0.0) - linalg::identity(dim);
    let mut poly = CMatrix::zeros(dim, dim);
    for &ck in cfg.coefficients().iter().rev() {
        poly = &poly * &x + linalg::identity(dim) * c(ck, 0.0);
    }
    let sp = &sin * &poly;
    (&sp + sp.adjoint()) * c(0.5 / t, 0.0)
}

/// MPO version of [`extract_dense`], compressing after every product.
pub fn extract_mpo(u: &Mpo, t: f64, cfg: &SeriesConfig) -> Result<Mpo> {
    let n = u.len();
    let ud = u.adjoint();
    let sin = ud.add(&u.scaled(-ONE))?.scaled(c(0.0, -0.5)).compress(cfg.trunc).0;
    let x = ud
        .add(u)?
        .scaled(c(0.5, 0.0))
        .add(&Mpo::identity(n).scaled(-ONE))?
        .compress(cfg.trunc)
        .0;
    let coeffs = cfg.coefficients();
    let mut poly: Option<Mpo> = None;
    for &ck in coeffs.iter().rev() {
        let id = Mpo::identity(n).scaled(c(ck, 0.0));
        poly = Some(match poly {
            None => id,
            Some(p) => multiply_mpo(&p, &x, cfg.trunc)?.0.add(&id)?.compress(cfg.trunc).0,
        });
    }
    let poly = poly.unwrap_or_else(|| Mpo::identity(n).scaled(ZERO));
    let sp = multiply_mpo(&sin, &poly, cfg.trunc)?.0;
    let (h, _) = sp.hermitian_part(cfg.trunc)?;
    Ok(h.scaled(c(1.0 / t, 0.0)))
}

pub fn extract_hamiltonian(u: &UnitaryEstimate, t: f64, cfg: &SeriesConfig) -> Result<HamiltonianEstimate> {
    if !(t > 0.0) {
        return Err(Error::Invalid(format!("extraction time must be positive, got {t}")));
    }
    let mut warnings = Vec::new();
    if !u.phase_fixed {
        warnings.push("global phase not fixed".to_string());
    }
    let form = series_form(&u.mpo, t, cfg)?;
    Ok(HamiltonianEstimate { form, method: ExtractionMethod::SingleTime { t }, projected: false, warnings })
}

fn series_form(u: &Mpo, t: f64, cfg: &SeriesConfig) -> Result<HamiltonianForm> {
    Ok(if u.len() <= EXTRACTION_DENSE_CAP {
        HamiltonianForm::Dense(extract_dense(&u.to_dense()?, t, cfg))
    } else {
        HamiltonianForm::Mpo(extract_mpo(u, t, cfg)?)
    })
}

/// Extraction from `U(t)^dag U(t2) = exp(-i H (t2 - t))`. The product's own
/// phase is fixed by its trace before the series is applied.
pub fn extract_two_time(
    u_t: &UnitaryEstimate,
    u_t2: &UnitaryEstimate,
    t: f64,
    t2: f64,
    cfg: &SeriesConfig,
) -> Result<HamiltonianEstimate> {
    if t2 == t {
        return Err(Error::Invalid("the two times must differ".into()));
    }
    if u_t.n() != u_t2.n() {
        return Err(Error::Dimension("unitaries act on different qubit counts".into()));
    }
    let dt = t2 - t;
    let mut warnings = Vec::new();
    if dt.abs() < cfg.min_gap {
        warnings.push(format!("time gap {dt:e} is below {:e}; estimate is noise dominated", cfg.min_gap));
    }
    let n = u_t.n();
    let product = if n <= EXTRACTION_DENSE_CAP {
        let (m, _) = Mpo::from_dense(&(u_t.mpo.to_dense()?.adjoint() * u_t2.mpo.to_dense()?), n, Truncation::exact())?;
        m
    } else {
        multiply_mpo(&u_t.mpo.adjoint(), &u_t2.mpo, cfg.trunc)?.0
    };
    let raw = UnitaryEstimate { trace_value: product.trace(), mpo: product, phase_fixed: false, phase_method: None };
    let fixed = match fix_phase(&raw, PhaseFix::Trace) {
        Ok(f) => f,
        Err(Error::DegeneratePhase { .. }) => {
            warnings.push("product trace vanishes; phase left as is".into());
            raw
        }
        Err(e) => return Err(e),
    };
    // A negative gap flips the sign of the sine and of 1/dt alike.
    let (op, eff) = if dt > 0.0 { (fixed.mpo, dt) } else { (fixed.mpo.adjoint(), -dt) };
    let form = series_form(&op, eff, cfg)?;
    Ok(HamiltonianEstimate { form, method: ExtractionMethod::TwoTime { t, t2 }, projected: false, warnings })
}

/// `min_lambda ||A - lambda||` for Hermitian `A`: half the spectral width.
pub fn centered_norm(a: &CMatrix) -> f64 {
    linalg::spectral_half_width(a)
}

/// Offset-free distance `min ||h - h2 - l|| / min ||h - l||`.
pub fn hamiltonian_distance(h: &CMatrix, h2: &CMatrix) -> Result<f64> {
    if h.shape() != h2.shape() {
        return Err(Error::Dimension("operators differ in size".into()));
    }
    let denom = centered_norm(h);
    if denom <= 1e-14 * linalg::op_norm(h).max(1.0) {
        return Err(Error::Invalid("reference Hamiltonian is proportional to the identity".into()));
    }
    Ok(centered_norm(&(h - h2)) / denom)
}

/// Distance between nearest-neighbour Hamiltonians from extremal eigenvalues
/// only; usable beyond the dense cap.
pub fn projected_distance(h: &NearestNeighbourHamiltonian, h2: &NearestNeighbourHamiltonian) -> Result<f64> {
    if h.n != h2.n {
        return Err(Error::Dimension("different qubit counts".into()));
    }
    let diff: Vec<CMatrix> = h.terms.iter().zip(&h2.terms).map(|(a, b)| a - b).collect();
    let diff = NearestNeighbourHamiltonian::from_terms(h.n, diff)?;
    let spread = |x: &NearestNeighbourHamiltonian| -> Result<f64> {
        let info = if x.n <= crate::hamiltonian::DENSE_EIGEN_CAP {
            let v = linalg::eigvalsh(&x.to_dense()?);
            (v[0], v[v.len() - 1])
        } else {
            x.extremal_eigenvalues()
        };
        Ok((info.1 - info.0) / 2.0)
    };
    let denom = spread(h)?;
    if denom <= 1e-14 {
        return Err(Error::Invalid("reference Hamiltonian is proportional to the identity".into()));
    }
    Ok(spread(&diff)? / denom)
}

/// `tr_{rest}` onto qubits `(i, i+1)`, divided by `2^{n-2}`.
fn bond_reduced(h: &CMatrix, n: usize, i: usize) -> CMatrix {
    let shift = n - 2 - i;
    let dim = 1usize << n;
    let mut out = CMatrix::zeros(4, 4);
    for row in 0..dim {
        let pr = (row >> shift) & 3;
        let rest = row & !(3 << shift);
        for pc in 0..4 {
            let col = rest | (pc << shift);
            out[(pr, pc)] += h[(row, col)];
        }
    }
    out / c(((n - 2) as f64).exp2(), 0.0)
}

/// Projection onto `span{1, sigma_q^a, sigma_i^a sigma_{i+1}^b}` in the trace
/// inner product, folded into bond terms with the same field split as the
/// model families.
pub fn project_nearest_neighbour(h: &CMatrix) -> Result<NearestNeighbourHamiltonian> {
    let dim = h.nrows();
    if dim < 4 || !dim.is_power_of_two() || h.ncols() != dim {
        return Err(Error::Dimension(format!("{}x{} is not a multi-qubit operator", h.nrows(), h.ncols())));
    }
    let n = dim.trailing_zeros() as usize;
    let paulis = [linalg::identity(2), linalg::pauli_x(), linalg::pauli_y(), linalg::pauli_z()];
    let id2 = linalg::identity(2);
    let reduced: Vec<CMatrix> = (0..n - 1).map(|i| bond_reduced(h, n, i)).collect();
    let coeff = |r: &CMatrix, p: &CMatrix| (r * p).trace() / c(4.0, 0.0);
    let offset = h.trace() / c(dim as f64, 0.0);
    // Single-site coefficients, read from any bond containing the site.
    let single: Vec<[C64; 3]> = (0..n)
        .map(|q| {
            let (r, left) = if q < n - 1 { (&reduced[q], true) } else { (&reduced[q - 1], false) };
            let mut out = [ZERO; 3];
            for (a, slot) in out.iter_mut().enumerate() {
                let p = if left { linalg::kron(&paulis[a + 1], &id2) } else { linalg::kron(&id2, &paulis[a + 1]) };
                *slot = coeff(r, &p);
            }
            out
        })
        .collect();
    let weight = |q: usize| if q == 0 || q == n - 1 { 1.0 } else { 0.5 };
    let terms = (0..n - 1)
        .map(|i| {
            let mut term = linalg::identity(4) * (offset / c((n - 1) as f64, 0.0));
            for a in 1..4 {
                for b in 1..4 {
                    let p = linalg::kron(&paulis[a], &paulis[b]);
                    term += &p * coeff(&reduced[i], &p);
                }
                term += linalg::kron(&paulis[a], &id2) * (single[i][a - 1] * weight(i));
                term += linalg::kron(&id2, &paulis[a]) * (single[i + 1][a - 1] * weight(i + 1));
            }
            (&term + term.adjoint()) * c(0.5, 0.0)
        })
        .collect();
    NearestNeighbourHamiltonian::from_terms(n, terms)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_coefficients() {
        let cf = SeriesConfig::with_order(3).coefficients();
        assert!((cf[0] - 1.0).abs() < 1e-15);
        assert!((cf[1] + 1.0 / 3.0).abs() < 1e-15);
        assert!((cf[2] - 2.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn identity_has_zero_hamiltonian() {
        let h = extract_dense(&linalg::identity(8), 0.7, &SeriesConfig::default());
        assert!(linalg::frobenius(&h) < 1e-15);
    }

    #[test]
    fn distance_basics() {
        let d = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(0.0, 0.0), c(1.0, 0.0)]));
        assert!((centered_norm(&d) - 0.5).abs() < 1e-15);
        let h = linalg::pauli_z();
        let shifted = &h + linalg::identity(2) * c(7.0, 0.0);
        assert!(hamiltonian_distance(&h, &h).unwrap() < 1e-15);
        assert!(hamiltonian_distance(&h, &shifted).unwrap() < 1e-12);
        assert!(hamiltonian_distance(&linalg::identity(2), &h).is_err());
    }

    #[test]
    fn phase_fix_of_scalar_unitary() {
        let u = Mpo::identity(3).scaled(C64::from_polar(1.0, 0.9));
        let est = UnitaryEstimate { trace_value: u.trace(), mpo: u, phase_fixed: false, phase_method: None };
        let fixed = fix_phase(&est, PhaseFix::Trace).unwrap();
        let d = fixed.mpo.to_dense().unwrap() - linalg::identity(8);
        assert!(linalg::frobenius(&d) < 1e-13);
    }

    #[test]
    fn traceless_unitary_needs_fallback() {
        let u = Mpo::single_site(2, 0, &linalg::pauli_x()).scaled(C64::from_polar(1.0, 0.3));
        let est = UnitaryEstimate { trace_value: u.trace(), mpo: u, phase_fixed: false, phase_method: None };
        assert!(matches!(fix_phase(&est, PhaseFix::Trace), Err(Error::DegeneratePhase { .. })));
        let fixed = fix_phase(&est, PhaseFix::Auto(None)).unwrap();
        assert_eq!(fixed.phase_method, Some(PhaseMethod::LargestEntry));
        let d = fixed.mpo.to_dense().unwrap() - linalg::kron(&linalg::pauli_x(), &linalg::identity(2));
        assert!(linalg::frobenius(&d) < 1e-13);
    }
}
