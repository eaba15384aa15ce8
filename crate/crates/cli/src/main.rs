use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use mpqpt::circuit::{circuit_to_mpo, Circuit};
use mpqpt::extraction::{
    centered_norm, choi_to_unitary, extract_hamiltonian, extract_two_time, fix_phase, hamiltonian_distance,
    process_fidelity, project_nearest_neighbour, HamiltonianEstimate, HamiltonianForm, PhaseFix, SeriesConfig,
    UnitaryEstimate, EXTRACTION_DENSE_CAP,
};
use mpqpt::hamiltonian::{build_family, evolve, EvolutionSpec, Family, NearestNeighbourHamiltonian};
use mpqpt::harness::{self, ExperimentConfig, Target};
use mpqpt::measurement::{choi_state, simulate_ancilla_free_dataset, simulate_dataset, MeasurementDataset, Provenance, Shots};
use mpqpt::reconstruction::{reconstruct, ReconstructionConfig};
use mpqpt::{io, Error, Mpo, Mps, Truncation};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_POINT_FAILURES: u8 = 3;
const EXIT_CHECKS: u8 = 4;

#[derive(Parser)]
#[command(name = "mpqpt", version, about = "Matrix-product process tomography and Hamiltonian extraction")]
struct Cli {
    /// Master seed (overrides the config file for `run`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file, or directory for `run`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for `run`.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Depth profile and MPO bond profile of a circuit, as CSV.
    Circuit {
        /// ghz, qft or qft_approx:<c>.
        #[arg(long, required_unless_present = "file")]
        target: Option<String>,
        #[arg(long, required_unless_present = "file")]
        n: Option<usize>,
        /// Circuit in the one-gate-per-line text format.
        #[arg(long)]
        file: Option<PathBuf>,
        #[arg(long)]
        max_bond: Option<usize>,
        /// Print the gate list instead of the profile.
        #[arg(long)]
        gates: bool,
    },
    /// Simulates a measurement dataset for a circuit or a Hamiltonian evolution.
    Measure {
        #[arg(long)]
        target: String,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        r: usize,
        /// Shots per setting, or `exact`.
        #[arg(long, value_parser = parse_shots)]
        shots: Shots,
        /// Evolution time in units of 1/||H|| (Hamiltonian targets).
        #[arg(long)]
        t_over_tn: Option<f64>,
        #[arg(long, default_value = "ancilla_assisted", value_parser = parse_provenance)]
        provenance: Provenance,
        /// Couplings seed for random_nn (defaults to --seed).
        #[arg(long)]
        hamiltonian_seed: Option<u64>,
        /// Writes the true Choi state here.
        #[arg(long)]
        truth_out: Option<PathBuf>,
        /// Writes the Hamiltonian here (Hamiltonian targets).
        #[arg(long)]
        hamiltonian_out: Option<PathBuf>,
    },
    /// Maximum-likelihood MPS reconstruction of a dataset.
    Reconstruct {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        bond: Option<usize>,
        /// TOML file with reconstruction settings.
        #[arg(long)]
        config: Option<PathBuf>,
        /// True Choi state, for the fidelity in the report.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Hamiltonian estimate from one or two reconstructed channels.
    Extract {
        /// Choi MPS or unitary MPO container.
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        t: f64,
        #[arg(long, requires = "t2")]
        state2: Option<PathBuf>,
        #[arg(long, requires = "state2")]
        t2: Option<f64>,
        #[arg(long, default_value_t = 3)]
        series_order: usize,
        #[arg(long)]
        project_nn: bool,
        #[arg(long, value_enum, default_value_t = PhaseMode::Auto)]
        phase_fix_mode: PhaseMode,
        /// Reference unitary MPO for the reference phase rule.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// True Hamiltonian (text format), for the distance.
        #[arg(long)]
        hamiltonian: Option<PathBuf>,
        /// True Choi state, for the fidelity of `--state`.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Runs an experiment config and writes records, CSV and a manifest.
    Run { config: PathBuf },
    /// Gnuplot data blocks from a run record.
    Plot { record: PathBuf },
    /// Log-log scaling fits from a run record.
    Fit { record: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum PhaseMode {
    Trace,
    Largest,
    Reference,
    Auto,
}

fn parse_shots(s: &str) -> Result<Shots, String> {
    if s == "exact" {
        return Ok(Shots::Exact);
    }
    match s.parse::<u64>() {
        Ok(m) if m > 0 => Ok(Shots::Finite(m)),
        _ => Err(format!("expected a positive integer or 'exact', got '{s}'")),
    }
}

fn parse_provenance(s: &str) -> Result<Provenance, String> {
    Provenance::parse(s).ok_or_else(|| format!("unknown provenance '{s}'"))
}

/// Command failure carrying its exit code.
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if matches!(e, Error::Config(_)) { EXIT_CONFIG } else { EXIT_FAILURE };
        Failure { code, msg: e.to_string() }
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::from(e).into()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_circuit(
    cli: &Cli,
    target: Option<&str>,
    n: Option<usize>,
    file: Option<&Path>,
    max_bond: Option<usize>,
    gates: bool,
) -> CliResult {
    let circuit = match file {
        Some(f) => Circuit::from_text(&fs::read_to_string(f).map_err(Error::from)?)?,
        None => {
            let t = Target::parse(target.unwrap_or_default())?;
            t.circuit(n.unwrap_or_default()).ok_or_else(|| Error::Config("target is not a circuit".into()))?
        }
    };
    if gates {
        return emit(cli.out.as_deref(), &circuit.to_text());
    }
    let trunc = max_bond.map_or_else(Truncation::default, Truncation::bond);
    let cm = circuit_to_mpo(&circuit, trunc)?;
    let profile = circuit.depth_profile();
    let bonds = cm.mpo.bond_dims();
    let mut text = format!("# d_max = {}, fro_error = {:e}\ncut,depth,peak_bond,bond\n", profile.d_max, cm.fro_error);
    for (i, d) in profile.d.iter().enumerate() {
        text.push_str(&format!("{i},{d},{},{}\n", cm.peak_bonds.get(i).copied().unwrap_or(1), bonds.get(i).copied().unwrap_or(1)));
    }
    emit(cli.out.as_deref(), &text)
}

#[allow(clippy::too_many_arguments)]
fn cmd_measure(
    cli: &Cli,
    target: &str,
    n: usize,
    r: usize,
    shots: Shots,
    t_over_tn: Option<f64>,
    provenance: Provenance,
    hamiltonian_seed: Option<u64>,
    truth_out: Option<&Path>,
    hamiltonian_out: Option<&Path>,
) -> CliResult {
    let seed = cli.seed.unwrap_or(0);
    let target = Target::parse(target)?;
    let u = match target.circuit(n) {
        Some(c) => circuit_to_mpo(&c, Truncation::default())?.mpo,
        None => {
            let Target::Hamiltonian(family) = target else { unreachable!() };
            let x = t_over_tn.ok_or_else(|| Error::Config("Hamiltonian targets need --t-over-tn".into()))?;
            let couplings = (family == Family::RandomNn).then(|| hamiltonian_seed.unwrap_or(seed));
            let h = build_family(family, n, couplings)?;
            if let Some(p) = hamiltonian_out {
                fs::write(p, h.to_text()).map_err(Error::from)?;
            }
            let t = x * h.operator_norm()?.t_n;
            eprintln!("t = {t:.17e}");
            evolve(&EvolutionSpec::with_default_method(&h, t))?.mpo
        }
    };
    let seed = (shots != Shots::Exact).then_some(seed);
    let ds = match provenance {
        Provenance::AncillaAssisted => {
            let (choi, _) = choi_state(&u, Truncation::default())?;
            if let Some(p) = truth_out {
                io::save_mps(&choi, p)?;
            }
            simulate_dataset(&choi, r, shots, seed)?
        }
        Provenance::AncillaFree => {
            if let Some(p) = truth_out {
                io::save_mps(&choi_state(&u, Truncation::default())?.0, p)?;
            }
            simulate_ancilla_free_dataset(&u, r, shots, seed, Truncation::default())?
        }
    };
    emit(cli.out.as_deref(), &ds.to_text())
}

fn cmd_reconstruct(cli: &Cli, data: &Path, bond: Option<usize>, config: Option<&Path>, truth: Option<&Path>) -> CliResult {
    let ds = MeasurementDataset::load(data)?;
    let mut cfg: ReconstructionConfig = match config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(Error::from)?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => ReconstructionConfig::default(),
    };
    if let Some(b) = bond {
        cfg.target_bond = b;
    }
    if let Some(s) = cli.seed {
        cfg.growth_seed = s;
    }
    cfg.validate()?;
    let res = reconstruct(&ds, &cfg)?;
    let fidelity = match truth {
        Some(p) => Some(process_fidelity(&io::load_mps(p)?, &res.state)?),
        None => None,
    };
    let report = json!({
        "dataset": data.display().to_string(),
        "n": ds.n,
        "r": ds.r,
        "dataset_seed": ds.seed,
        "config": cfg,
        "log_likelihood": res.final_log_likelihood,
        "iterations": res.sweeps_used,
        "converged": res.converged,
        "bond_dims": res.state.bond_dims(),
        "fidelity": fidelity,
        "likelihood_trace": res.trace,
    });
    let report = serde_json::to_string_pretty(&report).expect("report serializes");
    match &cli.out {
        Some(p) => {
            io::save_mps(&res.state, p)?;
            fs::write(with_suffix(p, ".report.json"), &report).map_err(Error::from)?;
            eprintln!("wrote {} (F = {fidelity:?})", p.display());
        }
        None => println!("{report}"),
    }
    Ok(())
}

/// Reads a Choi MPS or a unitary MPO container.
fn load_unitary(path: &Path) -> CliResult<(UnitaryEstimate, Option<Mps>)> {
    let bytes = fs::read(path).map_err(Error::from)?;
    if let Ok(psi) = io::mps_from_bytes(&bytes) {
        return Ok((choi_to_unitary(&psi)?, Some(psi)));
    }
    let mpo = io::mpo_from_bytes(&bytes)?;
    let trace_value = mpo.trace();
    Ok((UnitaryEstimate { mpo, phase_fixed: false, trace_value, phase_method: None }, None))
}

fn estimate_dense(est: &HamiltonianEstimate) -> Option<mpqpt::linalg::CMatrix> {
    match &est.form {
        HamiltonianForm::Dense(m) => Some(m.clone()),
        HamiltonianForm::Mpo(_) => None,
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_extract(
    cli: &Cli,
    state: &Path,
    t: f64,
    second: Option<(&Path, f64)>,
    series_order: usize,
    project_nn: bool,
    mode: PhaseMode,
    reference: Option<&Path>,
    hamiltonian: Option<&Path>,
    truth: Option<&Path>,
) -> CliResult {
    let reference = reference.map(io::load_mpo).transpose()?;
    let fix = match (mode, reference.as_ref()) {
        (PhaseMode::Trace, _) => PhaseFix::Trace,
        (PhaseMode::Largest, _) => PhaseFix::LargestEntry,
        (PhaseMode::Reference, Some(r)) => PhaseFix::Reference(r),
        (PhaseMode::Reference, None) => return Err(Error::Config("reference phase rule needs --reference".into()).into()),
        (PhaseMode::Auto, r) => PhaseFix::Auto(r),
    };
    let (raw, choi) = load_unitary(state)?;
    let u = fix_phase(&raw, fix)?;
    let series = SeriesConfig::with_order(series_order);
    let est = match second {
        None => extract_hamiltonian(&u, t, &series)?,
        Some((p2, t2)) => {
            let u2 = fix_phase(&load_unitary(p2)?.0, fix)?;
            extract_two_time(&u, &u2, t, t2, &series)?
        }
    };
    let n = u.n();
    let dense = estimate_dense(&est);
    let fidelity = match (truth, &choi) {
        (Some(p), Some(psi)) => Some(process_fidelity(&io::load_mps(p)?, psi)?),
        _ => None,
    };
    let projected = match (&dense, project_nn) {
        (Some(m), true) => Some(project_nearest_neighbour(m)?),
        _ => None,
    };
    let (mut d, mut dp) = (None, None);
    if let (Some(p), Some(m)) = (hamiltonian, &dense) {
        let h = NearestNeighbourHamiltonian::from_text(&fs::read_to_string(p).map_err(Error::from)?)?;
        let truth = h.to_dense()?;
        d = Some(hamiltonian_distance(&truth, m)?);
        let proj = match &projected {
            Some(nn) => nn.clone(),
            None => project_nearest_neighbour(m)?,
        };
        dp = Some(hamiltonian_distance(&truth, &proj.to_dense()?)?);
    }
    let dt = second.map_or(t, |(_, t2)| (t2 - t).abs());
    let metrics = json!({
        "n": n,
        "t": t,
        "t2": second.map(|s| s.1),
        "series_order": series_order,
        "phase_method": u.phase_method.map(|m| m.name()),
        "fidelity": fidelity,
        "distance": d,
        "distance_projected": dp,
        "ht_proxy": dense.as_ref().map(|m| centered_norm(m) * dt),
        "warnings": est.warnings,
    });
    let metrics = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
    if n > EXTRACTION_DENSE_CAP {
        eprintln!("n = {n} is beyond the dense cap; distances are not computed");
    }
    match &cli.out {
        Some(p) => {
            match &projected {
                Some(nn) => fs::write(p, nn.to_text()).map_err(Error::from)?,
                None => {
                    let mpo = match &est.form {
                        HamiltonianForm::Dense(m) => Mpo::from_dense(m, n, Truncation::default())?.0,
                        HamiltonianForm::Mpo(m) => m.clone(),
                    };
                    io::save_mpo(&mpo, p)?;
                }
            }
            fs::write(with_suffix(p, ".metrics.json"), &metrics).map_err(Error::from)?;
        }
        None => println!("{metrics}"),
    }
    Ok(())
}

fn cmd_run(cli: &Cli, config: &Path) -> CliResult {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let dir = cli
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(&cfg.hash()[..12]));
    let record = harness::run(&cfg, cli.jobs.max(1))?;
    for f in harness::write_outputs(&record, &dir)? {
        eprintln!("wrote {}", f.display());
    }
    for a in &record.aggregates {
        let fmt = |s: Option<harness::Stats>| s.map_or("-".to_string(), |s| format!("{:.6} ± {:.2e}", s.mean, s.std));
        println!(
            "n={} r={} M={} t={:?} gap={:?}  F {}  D {}  Dp {}",
            a.point.n,
            a.point.r,
            a.point.shots.label(),
            a.point.t_over_tn,
            a.point.gap_over_tn,
            fmt(a.fidelity),
            fmt(a.distance),
            fmt(a.distance_projected)
        );
    }
    let failures = record.failures();
    if !failures.is_empty() {
        for p in &failures {
            eprintln!("point {} repeat {} failed: {}", p.point_index, p.repeat, p.error.as_deref().unwrap_or(""));
        }
        return Err(Failure { code: EXIT_POINT_FAILURES, msg: format!("{} point(s) failed", failures.len()) });
    }
    let violations = record.check_violations();
    if !violations.is_empty() {
        return Err(Failure { code: EXIT_CHECKS, msg: violations.join("\n") });
    }
    Ok(())
}

fn cmd_plot(cli: &Cli, record: &Path) -> CliResult {
    let rec = harness::load_record(record)?;
    emit(cli.out.as_deref(), &harness::plot_table(&rec))
}

fn cmd_fit(cli: &Cli, record: &Path) -> CliResult {
    let rec = harness::load_record(record)?;
    let fits = harness::scaling_report(&rec)?;
    let mut text = String::from("relation,group,slope,intercept,ci_low,ci_high,points\n");
    for f in fits {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            f.relation, f.group, f.slope, f.intercept, f.ci_low, f.ci_high, f.points
        ));
    }
    emit(cli.out.as_deref(), &text)
}

fn dispatch(cli: &Cli) -> CliResult {
    match &cli.cmd {
        Cmd::Circuit { target, n, file, max_bond, gates } => {
            cmd_circuit(cli, target.as_deref(), *n, file.as_deref(), *max_bond, *gates)
        }
        Cmd::Measure { target, n, r, shots, t_over_tn, provenance, hamiltonian_seed, truth_out, hamiltonian_out } => {
            cmd_measure(
                cli,
                target,
                *n,
                *r,
                *shots,
                *t_over_tn,
                *provenance,
                *hamiltonian_seed,
                truth_out.as_deref(),
                hamiltonian_out.as_deref(),
            )
        }
        Cmd::Reconstruct { data, bond, config, truth } => cmd_reconstruct(cli, data, *bond, config.as_deref(), truth.as_deref()),
        Cmd::Extract {
            state,
            t,
            state2,
            t2,
            series_order,
            project_nn,
            phase_fix_mode,
            reference,
            hamiltonian,
            truth,
        } => {
            let second = state2.as_deref().zip(*t2);
            cmd_extract(
                cli,
                state,
                *t,
                second,
                *series_order,
                *project_nn,
                *phase_fix_mode,
                reference.as_deref(),
                hamiltonian.as_deref(),
                truth.as_deref(),
            )
        }
        Cmd::Run { config } => cmd_run(cli, config),
        Cmd::Plot { record } => cmd_plot(cli, record),
        Cmd::Fit { record } => cmd_fit(cli, record),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
