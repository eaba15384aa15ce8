//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs under `cargo test` (harness = false). Failing criteria are reported
//! but only turn into a non-zero exit status with `MPQPT_ACCEPTANCE_STRICT=1`.
//! `MPQPT_ACCEPTANCE_ONLY=6,9` restricts the run to the listed criteria.

use std::f64::consts::PI;
use std::time::Instant;

use mpqpt::circuit::{build_ghz, build_qft, build_qft_approx, circuit_to_mpo, qft_approx_error_bound};
use mpqpt::extraction::{choi_to_unitary, extract_dense, hamiltonian_distance, process_fidelity, SeriesConfig};
use mpqpt::hamiltonian::{build_family, dense_evolution, Family};
use mpqpt::harness::{run, scaling_report, ExperimentConfig, PointResult, RunRecord};
use mpqpt::linalg::{self, c, CMatrix, C64, ZERO};
use mpqpt::measurement::{all_specs, ancilla_free_distribution, choi_state, exact_distribution};
use mpqpt::{apply_mpo, inner, multiply_mpo, Mpo, Mps, Truncation};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ORACLE_TOL: f64 = 1e-10;
const FAMILIES: [Family; 3] = [Family::IsingCritical, Family::Heisenberg, Family::RandomNn];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rel_err(a: &CMatrix, b: &CMatrix) -> f64 {
    linalg::frobenius(&(a - b)) / linalg::frobenius(b).max(1.0)
}

fn vec_err(a: &DVector<C64>, b: &DVector<C64>) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

fn experiment(text: &str) -> RunRecord {
    let cfg = ExperimentConfig::from_toml(text).expect("acceptance config is valid");
    run(&cfg, 1).expect("run completes")
}

fn describe(p: &PointResult) -> String {
    let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.5}"));
    format!(
        "n={} M={} t={} gap={} F={} D={} Dp={}",
        p.point.n,
        p.point.shots.label(),
        p.point.t_over_tn.map_or("-".into(), |x| x.to_string()),
        p.point.gap_over_tn.map_or("-".into(), |x| x.to_string()),
        f(p.fidelity),
        f(p.distance),
        f(p.distance_projected)
    )
}

fn log_points(record: &RunRecord) {
    for p in &record.results {
        match &p.error {
            Some(e) => println!("    repeat {} {} failed: {e}", p.repeat, describe(p)),
            None => println!("    repeat {} {}", p.repeat, describe(p)),
        }
    }
}

// ---------------------------------------------------------------------------
// Dense oracles.

fn bit(i: usize, site: usize, n: usize) -> usize {
    (i >> (n - 1 - site)) & 1
}

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
                    rho[(a, b)] += v[(l << (r + right)) | (a << right) | e] * v[(l << (r + right)) | (b << right) | e].conj();
                }
            }
        }
    }
    let tr = rho.trace();
    rho / tr
}

/// Choi vector: amplitude `U[s, a] / 2^{n/2}` at ancilla/system pairs `(a_q, s_q)`.
fn dense_choi(u: &CMatrix, n: usize) -> DVector<C64> {
    let dim = 1usize << n;
    let mut v = DVector::from_element(dim * dim, ZERO);
    let scale = 1.0 / (n as f64 / 2.0).exp2();
    for a in 0..dim {
        for s in 0..dim {
            let idx = (0..n).fold(0, |acc, q| (acc << 2) | (bit(a, q, n) << 1) | bit(s, q, n));
            v[idx] = u[(s, a)] * scale;
        }
    }
    v
}

fn random_mpo(n: usize, rng: &mut ChaCha8Rng) -> (Mpo, CMatrix) {
    let m = linalg::random_complex_matrix(1 << n, 1 << n, rng);
    (Mpo::from_dense(&m, n, Truncation::exact()).unwrap().0, m)
}

// ---------------------------------------------------------------------------
// Criteria.

fn oracle_equivalence() -> Outcome {
    const INSTANCES: usize = 50;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = [0.0f64; 6];
    for _ in 0..INSTANCES {
        let n = rng.random_range(1..=6);
        let bond = rng.random_range(1..=4);
        let a = Mps::random(n, bond, &mut rng);
        let b = Mps::random(n, bond, &mut rng);
        let (va, vb) = (a.to_dense().unwrap(), b.to_dense().unwrap());
        let want = va.dotc(&vb);
        worst[0] = worst[0].max((inner(&a, &b).unwrap() - want).norm() / want.norm().max(1.0));

        let sites: Vec<usize> = {
            let mut s: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.6)).collect();
            if s.is_empty() {
                s.push(rng.random_range(0..n));
            }
            s
        };
        let (op, m) = random_mpo(sites.len(), &mut rng);
        let (out, _) = apply_mpo(&op, &a, &sites, Truncation::exact()).unwrap();
        worst[1] = worst[1].max(vec_err(&out.to_dense().unwrap(), &dense_apply(&m, &sites, &va, n)));

        let (p, mp) = random_mpo(n, &mut rng);
        let (q, mq) = random_mpo(n, &mut rng);
        let (pq, _) = multiply_mpo(&p, &q, Truncation::exact()).unwrap();
        worst[2] = worst[2].max(rel_err(&pq.to_dense().unwrap(), &(&mp * &mq)));

        let r = rng.random_range(1..=n.min(3));
        let k = rng.random_range(0..=n - r);
        let rho = a.reduced_density(k, r).unwrap().matrix;
        worst[3] = worst[3].max(rel_err(&rho, &dense_reduced(&va, n, k, r)));

        let u = linalg::random_unitary(1 << n, &mut rng);
        let (umpo, _) = Mpo::from_dense(&u, n, Truncation::exact()).unwrap();
        let (choi, _) = choi_state(&umpo, Truncation::exact()).unwrap();
        worst[4] = worst[4].max(vec_err(&choi.to_dense().unwrap(), &dense_choi(&u, n)));
        let back = choi_to_unitary(&choi).unwrap().mpo.to_dense().unwrap();
        worst[5] = worst[5].max(rel_err(&back, &u));
    }
    let names = ["inner", "apply_mpo", "multiply_mpo", "reduced_density", "choi_state", "choi_to_unitary"];
    let detail = names.iter().zip(worst).map(|(n, w)| format!("{n} {w:.1e}")).collect::<Vec<_>>().join(", ");
    outcome(worst.iter().all(|&w| w <= ORACLE_TOL), format!("{INSTANCES} instances each, worst: {detail}"))
}

fn ancilla_free_agreement() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    let mut count = 0;
    for n in [2usize, 3] {
        for _ in 0..2 {
            let u = linalg::random_unitary(1 << n, &mut rng);
            let (mpo, _) = Mpo::from_dense(&u, n, Truncation::exact()).unwrap();
            let (psi, _) = choi_state(&mpo, Truncation::default()).unwrap();
            for r in 1..=2 * n {
                for spec in all_specs(n, r).unwrap() {
                    let a = exact_distribution(&psi, &spec).unwrap();
                    let f = ancilla_free_distribution(&mpo, &spec, Truncation::default()).unwrap();
                    worst = a.iter().zip(&f).fold(worst, |w, (x, y)| w.max((x - y).abs()));
                    count += 1;
                }
            }
        }
    }
    outcome(worst <= ORACLE_TOL, format!("{count} specs (r = 1..2n), worst |p_free - p_assisted| = {worst:.1e}"))
}

fn depth_and_bond_bounds() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for n in 2..=32 {
        let circ = build_ghz(n);
        let p = circ.depth_profile();
        let cm = circuit_to_mpo(&circ, Truncation::default()).unwrap();
        let bonds_ok = cm.peak_bonds.iter().zip(&p.d).all(|(&b, &d)| (b as f64) <= 4f64.powi(d as i32));
        ok &= p.d_max == 1 && bonds_ok;
    }
    notes.push("GHZ n=2..32 d_max = 1".to_string());
    for n in 2..=10 {
        let circ = build_qft(n);
        let p = circ.depth_profile();
        let want: Vec<usize> = (1..n).map(|i| i * (n - i)).collect();
        let cm = circuit_to_mpo(&circ, Truncation::default()).unwrap();
        let bonds_ok = cm.peak_bonds.iter().zip(&p.d).all(|(&b, &d)| (b as f64) <= 4f64.powi(d as i32));
        ok &= p.d == want && bonds_ok;
    }
    notes.push("QFT n=2..10 d_i = i(n-i), peak bonds <= 4^d_i".to_string());
    let n = 8;
    let exact = build_qft(n).to_dense().unwrap();
    let compressed = circuit_to_mpo(&build_qft(n), Truncation::bond(16)).unwrap().mpo;
    let overlap = (exact.adjoint() * compressed.to_dense().unwrap()).trace();
    let f = overlap.norm_sqr() / (1u64 << (2 * n)) as f64;
    let merit = (2.0 * (1.0 - f.sqrt())).max(0.0).sqrt();
    ok &= merit < 2e-5;
    notes.push(format!("QFT n=8 bond 16: 1-F = {:.1e}, [2(1-sqrt F)]^(1/2) = {merit:.2e} (< 2e-5)", 1.0 - f));
    outcome(ok, notes.join("; "))
}

fn approximate_qft_bound() -> Outcome {
    let mut worst_ratio = 0.0f64;
    for n in 1..=6 {
        let exact = build_qft(n).to_dense().unwrap();
        for cdeg in 0..n {
            let err = linalg::op_norm(&(build_qft_approx(n, cdeg).to_dense().unwrap() - &exact));
            worst_ratio = worst_ratio.max(err / qft_approx_error_bound(n, cdeg));
        }
    }
    outcome(worst_ratio <= 1.0 + 1e-12, format!("n <= 6, all c: max ||QFT - QFT_c|| / bound = {worst_ratio:.3}"))
}

fn fidelity_norm_inequality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst = f64::NEG_INFINITY;
    for i in 0..100 {
        let n = rng.random_range(1..=4);
        let dim = 1usize << n;
        let u = linalg::random_unitary(dim, &mut rng);
        // Half the pairs are near each other, where the inequality is tight.
        let v = if i % 2 == 0 {
            linalg::random_unitary(dim, &mut rng)
        } else {
            let k = linalg::random_complex_matrix(dim, dim, &mut rng);
            let herm = (&k + k.adjoint()) * c(rng.random_range(0.001..0.2), 0.0);
            &u * dense_evolution(&herm, 1.0)
        };
        let to_choi = |m: &CMatrix| choi_state(&Mpo::from_dense(m, n, Truncation::exact()).unwrap().0, Truncation::exact()).unwrap().0;
        let f = process_fidelity(&to_choi(&u), &to_choi(&v)).unwrap();
        let lhs = 2.0 * (1.0 - f.sqrt());
        let rhs = linalg::op_norm(&(&u - &v)).powi(2);
        worst = worst.max(lhs - rhs);
    }
    outcome(worst <= 1e-12, format!("100 pairs, n <= 4, max [2(1-sqrt F) - ||U-U'||^2] = {worst:.2e}"))
}

const GHZ_EXACT: &str = r#"
kind = "circuit_recon"
target = "ghz"
n = [4, 6, 8]
r = [3]
shots = ["exact"]
seed = 6001
[reconstruction]
target_bond = 8
"#;

fn circuit_reconstruction() -> (Outcome, RunRecord) {
    let ghz = experiment(GHZ_EXACT);
    log_points(&ghz);
    let ghz_min = ghz.results.iter().map(|p| p.fidelity.unwrap_or(0.0)).fold(1.0, f64::min);

    let qft = experiment(
        r#"
kind = "circuit_recon"
target = "qft"
n = [8]
r = [5]
shots = ["exact"]
seed = 6002
[reconstruction]
target_bond = 16
"#,
    );
    log_points(&qft);
    let qft_f = qft.results[0].fidelity.unwrap_or(0.0);

    let sampled = experiment(
        r#"
kind = "circuit_recon"
target = "ghz"
n = [4]
r = [3]
shots = [1000, 10000, 100000]
repeats = 5
seed = 6003
[reconstruction]
target_bond = 8
"#,
    );
    log_points(&sampled);
    let slope = scaling_report(&sampled)
        .ok()
        .and_then(|fits| fits.into_iter().find(|f| f.relation == "infidelity_vs_inverse_sqrt_shots"));
    let slope_ok = slope.as_ref().is_some_and(|f| (0.7..=1.3).contains(&f.slope));
    let slope_txt = slope.map_or("no fit".into(), |f| format!("{:.3} [{:.3}, {:.3}]", f.slope, f.ci_low, f.ci_high));
    let pass = ghz_min >= 0.999 && qft_f >= 0.99 && slope_ok;
    (
        outcome(
            pass,
            format!(
                "GHZ n=4,6,8 min F = {ghz_min:.6} (>= 0.999); QFT n=8 r=5 F = {qft_f:.5} (>= 0.99); \
                 (1-sqrt F)^(1/2) vs 1/sqrt M slope {slope_txt} (in [0.7, 1.3])"
            ),
        ),
        ghz,
    )
}

fn series_law() -> Outcome {
    let mut worst_ratio = 0.0f64;
    let mut min_fail = f64::INFINITY;
    for family in FAMILIES {
        for n in [2, 4, 6] {
            let h = build_family(family, n, Some(17)).unwrap();
            let hd = h.to_dense().unwrap();
            let norm = h.operator_norm().unwrap().norm;
            for x in [0.5f64, 1.0, 1.5] {
                let t = x / norm;
                let rec = extract_dense(&dense_evolution(&hd, t), t, &SeriesConfig::with_order(3));
                let err = linalg::op_norm(&(rec - &hd)) / norm;
                worst_ratio = worst_ratio.max(err / (1.5 * x.powi(6) / 140.0));
            }
            for x in [PI + 0.1, 4.0, 5.0] {
                let t = x / norm;
                let rec = extract_dense(&dense_evolution(&hd, t), t, &SeriesConfig::with_order(3));
                min_fail = min_fail.min(hamiltonian_distance(&hd, &rec).unwrap());
            }
        }
    }
    outcome(
        worst_ratio <= 1.0 && min_fail > 0.5,
        format!(
            "3 families, n = 2,4,6: max error / (1.5 ||Ht||^6/140) = {worst_ratio:.3}; \
             min D for ||Ht|| in {{pi+0.1, 4, 5}} = {min_fail:.3} (> 0.5)"
        ),
    )
}

fn shot_noise_scaling() -> Outcome {
    let shots = experiment(
        r#"
kind = "ham_single_time"
target = "heisenberg"
n = [6]
r = [4]
shots = [1000, 10000, 100000]
t_over_tn = [2.0]
repeats = 5
seed = 8001
[reconstruction]
target_bond = 16
"#,
    );
    log_points(&shots);
    let times = experiment(
        r#"
kind = "ham_single_time"
target = "heisenberg"
n = [6]
r = [4]
shots = [1000]
t_over_tn = [0.25, 0.5, 1.0]
repeats = 5
seed = 8002
[reconstruction]
target_bond = 16
"#,
    );
    log_points(&times);
    let fit = |rec: &RunRecord, rel: &str| {
        scaling_report(rec).ok().and_then(|fits| fits.into_iter().find(|f| f.relation == rel))
    };
    let m_fit = fit(&shots, "distance_vs_shots");
    let t_fit = fit(&times, "distance_vs_time");
    let m_ok = m_fit.as_ref().is_some_and(|f| (-0.65..=-0.35).contains(&f.slope));
    let t_ok = t_fit.as_ref().is_some_and(|f| (-1.4..=-0.6).contains(&f.slope));
    let show = |f: Option<mpqpt::harness::SlopeFit>| {
        f.map_or("no fit".into(), |f| format!("{:.3} [{:.3}, {:.3}]", f.slope, f.ci_low, f.ci_high))
    };
    outcome(
        m_ok && t_ok,
        format!(
            "Heisenberg n=6 r=4: D vs M slope {} (in [-0.65, -0.35]); D vs t/t_n slope at M=1e3 {} (in [-1.4, -0.6])",
            show(m_fit),
            show(t_fit)
        ),
    )
}

fn two_time_config(family: Family) -> String {
    format!(
        r#"
kind = "ham_two_time"
target = "{}"
n = [6]
r = [5]
shots = ["exact"]
t_over_tn = [3.51]
gap_over_tn = [0.5, 1.0, 2.0]
seed = 9001
series_order = 3
[reconstruction]
target_bond = 16
"#,
        family.name()
    )
}

fn two_time_scheme() -> (Outcome, Vec<RunRecord>) {
    let records: Vec<RunRecord> = FAMILIES.iter().map(|&f| experiment(&two_time_config(f))).collect();
    let mut pass = true;
    let mut notes = Vec::new();
    for (family, rec) in FAMILIES.iter().zip(&records) {
        log_points(rec);
        let ds: Vec<f64> = rec.results.iter().map(|p| p.distance.unwrap_or(f64::INFINITY)).collect();
        let single = rec.results.first().and_then(|p| p.distance_first_time).unwrap_or(0.0);
        pass &= ds.iter().all(|&d| d <= 0.1) && single > 0.5;
        let shown = ds.iter().map(|d| format!("{d:.3}")).collect::<Vec<_>>().join("/");
        notes.push(format!("{}: D = {shown}, single-time D = {single:.2}", family.name()));
    }
    (outcome(pass, format!("gaps 0.5/1/2 need D <= 0.1, single-time D > 0.5; {}", notes.join("; "))), records)
}

fn projection(records: &[RunRecord]) -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    let mut count = 0;
    let mut missing = 0;
    for p in records.iter().flat_map(|r| &r.results) {
        match (p.distance, p.distance_projected) {
            (Some(d), Some(dp)) => {
                worst = worst.max(dp - d);
                count += 1;
            }
            _ => missing += 1,
        }
    }
    outcome(
        count > 0 && missing == 0 && worst <= 1e-12,
        format!("{count} points, max (D_projected - D) = {worst:.3e}, missing {missing}"),
    )
}

fn reproducibility(first: Option<&RunRecord>) -> Outcome {
    let ghz_again = experiment(GHZ_EXACT);
    let ghz_first = first.cloned().unwrap_or_else(|| experiment(GHZ_EXACT));
    let ham = r#"
kind = "ham_single_time"
target = "random_nn"
n = [4]
r = [4]
shots = ["exact"]
t_over_tn = [1.0]
seed = 1101
[reconstruction]
target_bond = 8
"#;
    let (a, b) = (experiment(ham), experiment(ham));
    let ghz_same = ghz_first.same_numbers(&ghz_again);
    let ham_same = a.same_numbers(&b);
    outcome(
        ghz_same && ham_same,
        format!("GHZ n=4,6,8 rerun identical: {ghz_same}; random_nn n=4 rerun identical: {ham_same}"),
    )
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("MPQPT_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |k: usize| only.as_ref().is_none_or(|v| v.contains(&k));
    let strict = std::env::var("MPQPT_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");

    let mut results: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let mut timed = |k: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        if !wanted(k) {
            return;
        }
        let t0 = Instant::now();
        println!("[{k}] {name} ...");
        let o = f();
        let secs = t0.elapsed().as_secs_f64();
        println!("{} [{k}] {name}: {} ({secs:.1}s)", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((k, name, o, secs));
    };

    let mut ghz_record = None;
    let mut two_time_records = Vec::new();
    timed(1, "oracle equivalence", &mut oracle_equivalence);
    timed(2, "ancilla-free vs ancilla-assisted", &mut ancilla_free_agreement);
    timed(3, "depth and MPO bounds", &mut depth_and_bond_bounds);
    timed(4, "approximate QFT bound", &mut approximate_qft_bound);
    timed(5, "fidelity-norm inequality", &mut fidelity_norm_inequality);
    timed(6, "circuit reconstruction", &mut || {
        let (o, rec) = circuit_reconstruction();
        ghz_record = Some(rec);
        o
    });
    timed(7, "series law", &mut series_law);
    timed(8, "shot-noise scaling", &mut shot_noise_scaling);
    timed(9, "two-time scheme", &mut || {
        let (o, recs) = two_time_scheme();
        two_time_records = recs;
        o
    });
    timed(10, "nearest-neighbour projection", &mut || {
        if two_time_records.is_empty() {
            two_time_records = FAMILIES.iter().map(|&f| experiment(&two_time_config(f))).collect();
        }
        projection(&two_time_records)
    });
    timed(11, "reproducibility", &mut || reproducibility(ghz_record.as_ref()));

    println!();
    for (k, name, o, secs) in &results {
        println!("{} [{k}] {name} ({secs:.0}s)", if o.pass { "PASS" } else { "FAIL" });
    }
    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!("acceptance: {} of {} criteria passed", results.len() - failed, results.len());
    if strict && failed > 0 {
        std::process::exit(4);
    }
}
