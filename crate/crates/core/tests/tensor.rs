use mpqpt::linalg::{self, CMatrix, C64, ZERO};
use mpqpt::{apply_mpo, inner, multiply_mpo, Mpo, Mps, Truncation};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-10;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_mpo(n: usize, seed: u64) -> (Mpo, CMatrix) {
    let m = linalg::random_complex_matrix(1 << n, 1 << n, &mut rng(seed));
    (Mpo::from_dense(&m, n, Truncation::exact()).unwrap().0, m)
}

fn bit(i: usize, site: usize, n: usize) -> usize {
    (i >> (n - 1 - site)) & 1
}

/// Dense action of `op` on the listed sites of an `n`-site vector.
fn dense_apply(op: &CMatrix, sites: &[usize], v: &DVector<C64>, n: usize) -> DVector<C64> {
    let m = sites.len();
    let mut out = DVector::from_element(v.len(), ZERO);
    for i in 0..v.len() {
        let sub = sites.iter().fold(0, |acc, &s| (acc << 1) | bit(i, s, n));
        for jsub in 0..1usize << m {
            let mut j = i;
            for (p, &s) in sites.iter().enumerate() {
                let b = (jsub >> (m - 1 - p)) & 1;
                j = (j & !(1 << (n - 1 - s))) | (b << (n - 1 - s));
            }
            out[j] += op[(jsub, sub)] * v[i];
        }
    }
    out
}

fn dense_reduced(v: &DVector<C64>, n: usize, k: usize, r: usize) -> CMatrix {
    let right = n - k - r;
    let mut rho = CMatrix::zeros(1 << r, 1 << r);
    for l in 0..1usize << k {
        for e in 0..1usize << right {
            for a in 0..1usize << r {
                for b in 0..1usize << r {
                    let ia = (l << (r + right)) | (a << right) | e;
                    let ib = (l << (r + right)) | (b << right) | e;
                    rho[(a, b)] += v[ia] * v[ib].conj();
                }
            }
        }
    }
    let tr = rho.trace();
    rho / tr
}

fn vec_dist(a: &DVector<C64>, b: &DVector<C64>) -> f64 {
    (a - b).norm()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn inner_matches_dense(n in 1usize..=6, bond in 1usize..=4, seed in any::<u64>()) {
        let a = Mps::random(n, bond, &mut rng(seed));
        let b = Mps::random(n, bond, &mut rng(seed ^ 1));
        let dense = a.to_dense().unwrap().dotc(&b.to_dense().unwrap());
        prop_assert!((inner(&a, &b).unwrap() - dense).norm() < TOL);
    }

    #[test]
    fn apply_matches_dense(n in 2usize..=6, seed in any::<u64>(), mask in 1u32..64) {
        let sites: Vec<usize> = (0..n).filter(|s| mask & (1 << s) != 0).collect();
        prop_assume!(!sites.is_empty());
        let (op, m) = random_mpo(sites.len(), seed);
        let psi = Mps::random(n, 3, &mut rng(seed ^ 7));
        let (out, err) = apply_mpo(&op, &psi, &sites, Truncation::exact()).unwrap();
        prop_assert!(err < TOL);
        let want = dense_apply(&m, &sites, &psi.to_dense().unwrap(), n);
        prop_assert!(vec_dist(&out.to_dense().unwrap(), &want) < TOL * want.norm().max(1.0));
    }

    #[test]
    fn multiply_matches_dense(n in 1usize..=5, seed in any::<u64>()) {
        let (a, ma) = random_mpo(n, seed);
        let (b, mb) = random_mpo(n, seed ^ 3);
        let (ab, _) = multiply_mpo(&a, &b, Truncation::exact()).unwrap();
        let want = &ma * &mb;
        prop_assert!(linalg::frobenius(&(ab.to_dense().unwrap() - &want)) < TOL * linalg::frobenius(&want));
    }

    #[test]
    fn reduced_density_matches_dense(n in 1usize..=6, seed in any::<u64>(), k in 0usize..6, r in 1usize..=3) {
        prop_assume!(k + r <= n);
        let psi = Mps::random(n, 3, &mut rng(seed));
        let got = psi.reduced_density(k, r).unwrap().matrix;
        let want = dense_reduced(&psi.to_dense().unwrap(), n, k, r);
        prop_assert!(linalg::frobenius(&(got - want)) < TOL);
    }

    #[test]
    fn compression_error_bounds_the_discarded_part(n in 3usize..=6, seed in any::<u64>(), cap in 1usize..=3) {
        let mut psi = Mps::random(n, 6, &mut rng(seed));
        psi.normalize();
        let (small, err) = psi.compress(Truncation::bond(cap));
        prop_assert!(small.max_bond() <= cap);
        let d = vec_dist(&psi.to_dense().unwrap(), &small.to_dense().unwrap());
        prop_assert!(d <= err + TOL, "distance {} above bound {}", d, err);
    }

    #[test]
    fn canonical_forms_keep_the_state(n in 2usize..=6, seed in any::<u64>(), c in 0usize..6) {
        prop_assume!(c < n);
        let psi = Mps::random(n, 4, &mut rng(seed));
        let can = psi.canonicalized(c);
        for k in 0..c {
            prop_assert!(can.left_isometry_error(k) < TOL);
        }
        for k in c + 1..n {
            prop_assert!(can.right_isometry_error(k) < TOL);
        }
        prop_assert!(vec_dist(&psi.to_dense().unwrap(), &can.to_dense().unwrap()) < TOL * psi.norm());
    }
}

#[test]
fn dense_round_trips() {
    let v = linalg::random_vector(1 << 5, &mut rng(4));
    let (psi, err) = Mps::from_dense(&v, 2, 5, Truncation::exact()).unwrap();
    assert!(err < TOL);
    assert!(vec_dist(&psi.to_dense().unwrap(), &v) < TOL);
    let (op, m) = random_mpo(3, 9);
    assert!(linalg::frobenius(&(op.to_dense().unwrap() - m)) < TOL);
}

#[test]
fn two_site_operator_on_distant_sites() {
    let g = linalg::random_unitary(4, &mut rng(2));
    let op = Mpo::two_site(5, 1, 4, &g).unwrap();
    let want = linalg::embed_two_site(5, 1, 4, &g);
    assert!(linalg::frobenius(&(op.to_dense().unwrap() - want)) < TOL);
    assert!(op.max_bond() <= 4);
}

#[test]
fn adjoint_trace_and_hermitian_part() {
    let (a, m) = random_mpo(3, 5);
    assert!(linalg::frobenius(&(a.adjoint().to_dense().unwrap() - m.adjoint())) < TOL);
    assert!((a.trace() - m.trace()).norm() < TOL);
    let (h, _) = a.hermitian_part(Truncation::exact()).unwrap();
    let want = (&m + m.adjoint()) * linalg::c(0.5, 0.0);
    assert!(linalg::frobenius(&(h.to_dense().unwrap() - want)) < TOL);
}

#[test]
fn shape_errors_are_reported() {
    let psi = Mps::random(3, 2, &mut rng(1));
    let op = Mpo::identity(2);
    assert!(apply_mpo(&op, &psi, &[0], Truncation::default()).is_err());
    assert!(apply_mpo(&op, &psi, &[2, 1], Truncation::default()).is_err());
    assert!(apply_mpo(&op, &psi, &[1, 3], Truncation::default()).is_err());
    assert!(psi.reduced_density(2, 2).is_err());
    assert!(inner(&psi, &Mps::random(4, 2, &mut rng(1))).is_err());
}
