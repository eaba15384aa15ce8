use mpqpt::harness::{load_record, plot_table, run, scaling_report, write_outputs, ExperimentConfig, RunRecord};

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(text).unwrap()
}

const GHZ: &str = r#"
kind = "circuit_recon"
target = "ghz"
n = [3]
r = [3]
shots = ["exact", 2000]
repeats = 2
seed = 11

[reconstruction]
target_bond = 4
max_sweeps = 60
"#;

#[test]
fn circuit_run_produces_records_and_files() {
    let cfg = config(GHZ);
    let rec = run(&cfg, 1).unwrap();
    // Exact points run once, sampled points once per repeat.
    assert_eq!(rec.results.len(), 3);
    assert!(rec.failures().is_empty(), "{:?}", rec.failures());
    assert!(rec.results[0].fidelity.unwrap() >= 0.999);
    assert!(rec.results[1].seed != rec.results[2].seed);
    assert!(rec.check_violations().is_empty());

    let dir = tempfile::tempdir().unwrap();
    let files = write_outputs(&rec, dir.path()).unwrap();
    assert_eq!(files.len(), 4);
    let back = load_record(&dir.path().join("record.json")).unwrap();
    assert!(back.same_numbers(&rec));
    let csv = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(plot_table(&rec).contains("# n = 3, r = 3"));
}

#[test]
fn identical_configs_give_identical_numbers() {
    let cfg = config(GHZ);
    let a = run(&cfg, 1).unwrap();
    let b = run(&cfg, 2).unwrap();
    assert!(a.same_numbers(&b));
    assert_eq!(a.config_hash, b.config_hash);
}

#[test]
fn hamiltonian_single_time_distance_is_small_at_short_times() {
    let cfg = config(
        r#"
kind = "ham_single_time"
target = "heisenberg"
n = [3]
r = [4]
shots = ["exact"]
t_over_tn = [0.5]
seed = 3
[reconstruction]
target_bond = 8
"#,
    );
    let rec = run(&cfg, 1).unwrap();
    let p = &rec.results[0];
    assert!(p.error.is_none(), "{:?}", p.error);
    let d = p.distance.unwrap();
    assert!(d < 0.05, "D = {d}");
    assert!(p.distance_projected.unwrap() <= d + 1e-12);
}

#[test]
fn per_point_failures_do_not_abort() {
    let cfg = config(
        r#"
kind = "circuit_recon"
target = "ghz"
n = [2]
r = [2]
shots = ["exact"]
seed = 1
[reconstruction]
target_bond = 2
"#,
    );
    let mut rec = run(&cfg, 1).unwrap();
    assert!(rec.failures().is_empty());
    rec.config.checks.min_fidelity = Some(2.0);
    assert_eq!(rec.check_violations().len(), 1);
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        "kind = \"circuit_recon\"\ntarget = \"ghz\"\nn = []\nr = [2]\nshots = [\"exact\"]\nseed = 1\n",
        "kind = \"circuit_recon\"\ntarget = \"heisenberg\"\nn = [3]\nr = [2]\nshots = [\"exact\"]\nseed = 1\n",
        "kind = \"ham_single_time\"\ntarget = \"heisenberg\"\nn = [3]\nr = [2]\nshots = [\"exact\"]\nseed = 1\n",
        "kind = \"ham_two_time\"\ntarget = \"heisenberg\"\nn = [3]\nr = [2]\nshots = [\"exact\"]\nt_over_tn = [1.0]\nseed = 1\n",
        "kind = \"circuit_recon\"\ntarget = \"ghz\"\nn = [3]\nr = [7]\nshots = [\"exact\"]\nseed = 1\n",
        "kind = \"circuit_recon\"\ntarget = \"ghz\"\nn = [3]\nr = [2]\nshots = [0]\nseed = 1\n",
        "kind = \"circuit_recon\"\ntarget = \"ghz\"\nn = [3]\nr = [2]\nshots = [\"many\"]\nseed = 1\n",
        "kind = \"circuit_recon\"\ntarget = \"ghz\"\nn = [3]\nr = [2]\nshots = [\"exact\"]\nseed = 1\nbogus = 2\n",
    ];
    for text in bad {
        assert!(ExperimentConfig::from_toml(text).is_err(), "accepted:\n{text}");
    }
}

#[test]
fn scaling_report_needs_three_values() {
    let rec: RunRecord = run(&config(GHZ), 1).unwrap();
    assert!(scaling_report(&rec).is_err());
}

#[test]
#[ignore]
fn calibration_run() {
    let path = std::env::var("CFG").unwrap();
    let cfg = ExperimentConfig::load(std::path::Path::new(&path)).unwrap();
    let t0 = std::time::Instant::now();
    let rec = run(&cfg, 1).unwrap();
    for p in &rec.results {
        eprintln!(
            "n={} t={:?} gap={:?} M={:?} F={:?} F2={:?} D={:?} Dp={:?} iters={} {:.1}s err={:?}",
            p.point.n,
            p.point.t_over_tn,
            p.point.gap_over_tn,
            p.point.shots,
            p.fidelity,
            p.fidelity_second,
            p.distance,
            p.distance_projected,
            p.iterations,
            p.wall_seconds,
            p.error
        );
    }
    if let Ok(fits) = scaling_report(&rec) {
        for f in fits {
            eprintln!("{} {} slope {:.3} [{:.3}, {:.3}]", f.relation, f.group, f.slope, f.ci_low, f.ci_high);
        }
    }
    eprintln!("total {:?}", t0.elapsed());
}
