//! Configuration-driven experiments: grids, repeats, records and fits.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::circuit::{build_ghz, build_qft, build_qft_approx, circuit_to_mpo, Circuit};
use crate::error::{Error, Result};
use crate::extraction::{
    choi_to_unitary, extract_hamiltonian, extract_two_time, fix_phase, hamiltonian_distance, process_fidelity,
    project_nearest_neighbour, HamiltonianEstimate, PhaseFix, SeriesConfig, UnitaryEstimate, EXTRACTION_DENSE_CAP,
};
use crate::hamiltonian::{build_family, evolve, EvolutionSpec, Family, NearestNeighbourHamiltonian};
use crate::measurement::{choi_state, simulate_ancilla_free_dataset, simulate_dataset, Provenance, Shots};
use crate::mpo::Mpo;
use crate::mps::{Mps, Truncation};
use crate::reconstruction::{reconstruct, ReconstructionConfig, ReconstructionResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    CircuitRecon,
    HamSingleTime,
    HamTwoTime,
    ScalingSweep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExactTag {
    Exact,
}

/// A shot count, or the string `"exact"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ShotSetting {
    Count(u64),
    Exact(ExactTag),
}

impl ShotSetting {
    pub fn shots(self) -> Shots {
        match self {
            ShotSetting::Count(m) => Shots::Finite(m),
            ShotSetting::Exact(_) => Shots::Exact,
        }
    }

    pub fn count(self) -> Option<u64> {
        match self {
            ShotSetting::Count(m) => Some(m),
            ShotSetting::Exact(_) => None,
        }
    }

    pub fn label(self) -> String {
        match self {
            ShotSetting::Count(m) => m.to_string(),
            ShotSetting::Exact(_) => "exact".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    Ghz,
    Qft,
    QftApprox(usize),
    Hamiltonian(Family),
}

impl Target {
    /// `ghz`, `qft`, `qft_approx:<c>` or a Hamiltonian family name.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(c) = s.strip_prefix("qft_approx:") {
            let c = c.parse().map_err(|_| Error::Config(format!("bad approximation degree in '{s}'")))?;
            return Ok(Target::QftApprox(c));
        }
        match s {
            "ghz" => Ok(Target::Ghz),
            "qft" => Ok(Target::Qft),
            other => match Family::parse(other) {
                Some(Family::Custom) | None => Err(Error::Config(format!("unknown target '{s}'"))),
                Some(f) => Ok(Target::Hamiltonian(f)),
            },
        }
    }

    pub fn is_circuit(self) -> bool {
        !matches!(self, Target::Hamiltonian(_))
    }

    pub fn circuit(self, n: usize) -> Option<Circuit> {
        match self {
            Target::Ghz => Some(build_ghz(n)),
            Target::Qft => Some(build_qft(n)),
            Target::QftApprox(c) => Some(build_qft_approx(n, c)),
            Target::Hamiltonian(_) => None,
        }
    }
}

/// Optional pass/fail thresholds checked after a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checks {
    pub min_fidelity: Option<f64>,
    pub max_distance: Option<f64>,
}

fn default_repeats() -> usize {
    5
}

fn default_order() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub target: String,
    pub n: Vec<usize>,
    pub r: Vec<usize>,
    pub shots: Vec<ShotSetting>,
    /// Evolution times in units of `t_n = 1 / ||H||`.
    #[serde(default)]
    pub t_over_tn: Vec<f64>,
    /// Second-time offsets `(t' - t) / t_n` for the two-time scheme.
    #[serde(default)]
    pub gap_over_tn: Vec<f64>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    pub seed: u64,
    /// Seed of the random family; the master seed when absent.
    #[serde(default)]
    pub hamiltonian_seed: Option<u64>,
    #[serde(default = "default_provenance")]
    pub provenance: Provenance,
    #[serde(default = "default_order")]
    pub series_order: usize,
    #[serde(default)]
    pub reconstruction: ReconstructionConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub checks: Checks,
}

fn default_provenance() -> Provenance {
    Provenance::AncillaAssisted
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn target(&self) -> Result<Target> {
        Target::parse(&self.target)
    }

    pub fn validate(&self) -> Result<()> {
        let target = self.target()?;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.n.is_empty() || self.r.is_empty() || self.shots.is_empty() {
            return bad("grids over n, r and shots must be nonempty");
        }
        if self.repeats == 0 {
            return bad("repeats must be at least 1");
        }
        if self.series_order == 0 {
            return bad("series_order must be at least 1");
        }
        if self.shots.iter().any(|s| s.count() == Some(0)) {
            return bad("shot counts must be positive");
        }
        for &n in &self.n {
            if n == 0 {
                return bad("n must be positive");
            }
            if !target.is_circuit() && n < 2 {
                return bad("Hamiltonian targets need n >= 2");
            }
            if self.r.iter().any(|&r| r == 0 || r > 2 * n) {
                return bad("every r must satisfy 1 <= r <= 2n");
            }
        }
        match self.kind {
            ExperimentKind::CircuitRecon => {
                if !target.is_circuit() {
                    return bad("circuit_recon needs a circuit target");
                }
            }
            ExperimentKind::HamSingleTime | ExperimentKind::HamTwoTime => {
                if target.is_circuit() {
                    return bad("Hamiltonian experiments need a Hamiltonian family target");
                }
            }
            ExperimentKind::ScalingSweep => {}
        }
        if !target.is_circuit() {
            if self.t_over_tn.is_empty() || self.t_over_tn.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                return bad("t_over_tn must be a nonempty grid of positive times");
            }
        }
        if self.kind == ExperimentKind::HamTwoTime
            && (self.gap_over_tn.is_empty() || self.gap_over_tn.iter().any(|&g| g == 0.0 || !g.is_finite()))
        {
            return bad("gap_over_tn must be a nonempty grid of nonzero offsets");
        }
        self.reconstruction.validate()
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn grid(&self) -> Result<Vec<GridPoint>> {
        let target = self.target()?;
        let times: Vec<Option<f64>> =
            if target.is_circuit() { vec![None] } else { self.t_over_tn.iter().map(|&x| Some(x)).collect() };
        let gaps: Vec<Option<f64>> = if self.kind == ExperimentKind::HamTwoTime {
            self.gap_over_tn.iter().map(|&g| Some(g)).collect()
        } else {
            vec![None]
        };
        let mut out = Vec::new();
        for &n in &self.n {
            for &r in &self.r {
                for &shots in &self.shots {
                    for &t in &times {
                        for &g in &gaps {
                            out.push(GridPoint { n, r, shots, t_over_tn: t, gap_over_tn: g });
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub n: usize,
    pub r: usize,
    pub shots: ShotSetting,
    pub t_over_tn: Option<f64>,
    pub gap_over_tn: Option<f64>,
}

/// Per point and repeat seed: the first eight bytes of
/// `SHA-256(master || point || repeat)`.
pub fn derive_seed(master: u64, point: usize, repeat: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((point as u64).to_le_bytes());
    h.update((repeat as u64).to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub point_index: usize,
    pub point: GridPoint,
    pub repeat: usize,
    pub seed: u64,
    pub fidelity: Option<f64>,
    /// Fidelity of the second reconstruction in the two-time scheme.
    pub fidelity_second: Option<f64>,
    pub distance: Option<f64>,
    pub distance_projected: Option<f64>,
    /// Two-time points: single-time extraction from the first reconstruction.
    pub distance_first_time: Option<f64>,
    /// Channel construction plus Choi-state truncation error.
    pub truncation_error: f64,
    pub log_likelihood: Option<f64>,
    pub likelihood_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub wall_seconds: f64,
    pub warnings: Vec<String>,
    pub error: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let m = values.len() as f64;
        let mean = values.iter().sum::<f64>() / m;
        let var = if values.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0) } else { 0.0 };
        Some(Self {
            mean,
            std: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            count: values.len(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub point_index: usize,
    pub point: GridPoint,
    pub fidelity: Option<Stats>,
    pub distance: Option<Stats>,
    pub distance_projected: Option<Stats>,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub results: Vec<PointResult>,
    pub aggregates: Vec<Aggregate>,
}

impl RunRecord {
    pub fn failures(&self) -> Vec<&PointResult> {
        self.results.iter().filter(|r| r.error.is_some()).collect()
    }

    /// Equality of everything except wall-clock times.
    pub fn same_numbers(&self, other: &RunRecord) -> bool {
        let strip = |r: &RunRecord| {
            let mut r = r.clone();
            r.results.iter_mut().for_each(|p| p.wall_seconds = 0.0);
            r
        };
        strip(self) == strip(other)
    }

    /// Threshold violations against `config.checks`, one message each.
    pub fn check_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let c = &self.config.checks;
        for p in &self.results {
            if let (Some(min), Some(f)) = (c.min_fidelity, p.fidelity) {
                if f < min {
                    out.push(format!("point {} repeat {}: F = {f:.6} < {min}", p.point_index, p.repeat));
                }
            }
            if let (Some(max), Some(d)) = (c.max_distance, p.distance) {
                if d > max {
                    out.push(format!("point {} repeat {}: D = {d:.6} > {max}", p.point_index, p.repeat));
                }
            }
        }
        out
    }
}

fn hamiltonian_for(cfg: &ExperimentConfig, family: Family, n: usize) -> Result<NearestNeighbourHamiltonian> {
    let seed = (family == Family::RandomNn).then(|| cfg.hamiltonian_seed.unwrap_or(cfg.seed));
    build_family(family, n, seed)
}

struct Channel {
    mpo: Mpo,
    choi: Mps,
    error: f64,
}

fn channel_at(h: &NearestNeighbourHamiltonian, t: f64) -> Result<Channel> {
    let ev = evolve(&EvolutionSpec::with_default_method(h, t))?;
    let (choi, err) = choi_state(&ev.mpo, Truncation::default())?;
    Ok(Channel { mpo: ev.mpo, choi, error: ev.error_estimate + err })
}

fn measure_and_reconstruct(
    cfg: &ExperimentConfig,
    ch: &Channel,
    r: usize,
    shots: Shots,
    seed: u64,
) -> Result<(ReconstructionResult, f64, UnitaryEstimate)> {
    let seed = (shots != Shots::Exact).then_some(seed);
    let ds = match cfg.provenance {
        Provenance::AncillaAssisted => simulate_dataset(&ch.choi, r, shots, seed)?,
        Provenance::AncillaFree => simulate_ancilla_free_dataset(&ch.mpo, r, shots, seed, Truncation::default())?,
    };
    let rec = reconstruct(&ds, &cfg.reconstruction)?;
    let f = process_fidelity(&ch.choi, &rec.state)?;
    let u = fix_phase(&choi_to_unitary(&rec.state)?, PhaseFix::Auto(None))?;
    Ok((rec, f, u))
}

fn distances(h: &NearestNeighbourHamiltonian, est: &HamiltonianEstimate, warnings: &mut Vec<String>) -> Result<(Option<f64>, Option<f64>)> {
    warnings.extend(est.warnings.iter().cloned());
    if h.n > EXTRACTION_DENSE_CAP {
        warnings.push(format!("n = {} is beyond the dense cap; no distance reported", h.n));
        return Ok((None, None));
    }
    let truth = h.to_dense()?;
    let rec = est.dense()?;
    let d = hamiltonian_distance(&truth, &rec)?;
    let proj = project_nearest_neighbour(&rec)?.to_dense()?;
    Ok((Some(d), Some(hamiltonian_distance(&truth, &proj)?)))
}

struct FirstStage {
    error: f64,
    rec: ReconstructionResult,
    fidelity: f64,
    unitary: UnitaryEstimate,
    hamiltonian: Option<(NearestNeighbourHamiltonian, f64)>,
}

fn first_stage(cfg: &ExperimentConfig, point: GridPoint, seed: u64) -> Result<FirstStage> {
    let target = cfg.target()?;
    let (channel, hamiltonian) = if let Some(circuit) = target.circuit(point.n) {
        let cm = circuit_to_mpo(&circuit, Truncation::default())?;
        let (choi, err) = choi_state(&cm.mpo, Truncation::default())?;
        (Channel { mpo: cm.mpo, choi, error: cm.fro_error + err }, None)
    } else {
        let Target::Hamiltonian(family) = target else { unreachable!() };
        let h = hamiltonian_for(cfg, family, point.n)?;
        let t_n = h.operator_norm()?.t_n;
        let t = point.t_over_tn.expect("Hamiltonian points carry a time") * t_n;
        (channel_at(&h, t)?, Some((h, t_n)))
    };
    let (rec, fidelity, unitary) = measure_and_reconstruct(cfg, &channel, point.r, point.shots.shots(), seed)?;
    Ok(FirstStage { error: channel.error, rec, fidelity, unitary, hamiltonian })
}

fn finish_point(cfg: &ExperimentConfig, first: &FirstStage, point: GridPoint, seed: u64, res: &mut PointResult) -> Result<()> {
    res.truncation_error = first.error;
    res.fidelity = Some(first.fidelity);
    res.log_likelihood = Some(first.rec.final_log_likelihood);
    res.likelihood_trace = first.rec.trace.clone();
    res.iterations = first.rec.sweeps_used;
    res.converged = first.rec.converged;
    let Some((h, t_n)) = &first.hamiltonian else { return Ok(()) };
    let t = point.t_over_tn.unwrap() * t_n;
    let series = SeriesConfig { min_gap: 1e-6 * t_n, ..SeriesConfig::with_order(cfg.series_order) };
    let est = match point.gap_over_tn {
        None => extract_hamiltonian(&first.unitary, t, &series)?,
        Some(g) => {
            let t2 = t + g * t_n;
            let second = channel_at(h, t2)?;
            res.truncation_error += second.error;
            let (rec2, f2, u2) = measure_and_reconstruct(cfg, &second, point.r, point.shots.shots(), seed)?;
            res.fidelity_second = Some(f2);
            res.iterations += rec2.sweeps_used;
            res.converged &= rec2.converged;
            // Informational; a failed single-time extraction must not sink the point.
            res.distance_first_time = extract_hamiltonian(&first.unitary, t, &series)
                .ok()
                .and_then(|single| distances(h, &single, &mut Vec::new()).ok()?.0);
            extract_two_time(&first.unitary, &u2, t, t2, &series)?
        }
    };
    let (d, dp) = distances(h, &est, &mut res.warnings)?;
    res.distance = d;
    res.distance_projected = dp;
    Ok(())
}

/// Grid points that share everything but the second time. The first
/// reconstruction is done once, with the seed of the group's first point;
/// second-time data use each point's own seed.
fn run_group(cfg: &ExperimentConfig, members: &[(usize, GridPoint)], repeat: usize) -> Vec<PointResult> {
    let start = Instant::now();
    let (i0, p0) = members[0];
    let seed = derive_seed(cfg.seed, i0, repeat);
    let first = first_stage(cfg, p0, seed);
    let shared = start.elapsed().as_secs_f64();
    members
        .iter()
        .enumerate()
        .map(|(j, &(index, point))| {
            let t0 = Instant::now();
            let mut res = PointResult {
                point_index: index,
                point,
                repeat,
                seed,
                fidelity: None,
                fidelity_second: None,
                distance: None,
                distance_projected: None,
                distance_first_time: None,
                truncation_error: 0.0,
                log_likelihood: None,
                likelihood_trace: Vec::new(),
                iterations: 0,
                converged: false,
                wall_seconds: 0.0,
                warnings: Vec::new(),
                error: None,
            };
            let outcome = match &first {
                Ok(fs) => finish_point(cfg, fs, point, derive_seed(cfg.seed, index, repeat) ^ SECOND_TIME_SALT, &mut res),
                Err(e) => Err(Error::Invalid(e.to_string())),
            };
            if let Err(e) = outcome {
                res.error = Some(e.to_string());
            }
            res.wall_seconds = t0.elapsed().as_secs_f64() + if j == 0 { shared } else { 0.0 };
            res
        })
        .collect()
}

const SECOND_TIME_SALT: u64 = 0x5bd1_e995_0000_0001;

/// Runs every grid point and repeat on a pool of `jobs` workers. Exact-mode
/// points are deterministic and run once. Failures of single points are
/// recorded, not propagated.
pub fn run(cfg: &ExperimentConfig, jobs: usize) -> Result<RunRecord> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let group_len = if cfg.kind == ExperimentKind::HamTwoTime { cfg.gap_over_tn.len() } else { 1 };
    let indexed: Vec<(usize, GridPoint)> = grid.iter().copied().enumerate().collect();
    let tasks: Vec<(&[(usize, GridPoint)], usize)> = indexed
        .chunks(group_len)
        .flat_map(|g| {
            let reps = if g[0].1.shots.count().is_none() { 1 } else { cfg.repeats };
            (0..reps).map(move |k| (g, k))
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    let mut results: Vec<PointResult> =
        pool.install(|| tasks.par_iter().flat_map_iter(|&(g, k)| run_group(cfg, g, k)).collect());
    results.sort_by_key(|r| (r.point_index, r.repeat));
    let aggregates = grid
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let rows: Vec<&PointResult> = results.iter().filter(|r| r.point_index == i).collect();
            let collect = |f: fn(&PointResult) -> Option<f64>| -> Option<Stats> {
                Stats::of(&rows.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
            };
            Aggregate {
                point_index: i,
                point: *p,
                fidelity: collect(|r| r.fidelity),
                distance: collect(|r| r.distance),
                distance_projected: collect(|r| r.distance_projected),
                failures: rows.iter().filter(|r| r.error.is_some()).count(),
            }
        })
        .collect();
    Ok(RunRecord { config_hash: cfg.hash(), config: cfg.clone(), results, aggregates })
}

// ---------------------------------------------------------------------------
// Output files.

#[derive(Serialize)]
struct ResultRow {
    point: usize,
    repeat: usize,
    n: usize,
    r: usize,
    shots: String,
    t_over_tn: Option<f64>,
    gap_over_tn: Option<f64>,
    seed: u64,
    fidelity: Option<f64>,
    fidelity_second: Option<f64>,
    distance: Option<f64>,
    distance_projected: Option<f64>,
    distance_first_time: Option<f64>,
    truncation_error: f64,
    log_likelihood: Option<f64>,
    iterations: usize,
    converged: bool,
    wall_seconds: f64,
    error: Option<String>,
}

#[derive(Serialize)]
struct SummaryRow {
    point: usize,
    n: usize,
    r: usize,
    shots: String,
    t_over_tn: Option<f64>,
    gap_over_tn: Option<f64>,
    f_mean: Option<f64>,
    f_std: Option<f64>,
    f_min: Option<f64>,
    f_max: Option<f64>,
    d_mean: Option<f64>,
    d_std: Option<f64>,
    d_min: Option<f64>,
    d_max: Option<f64>,
    dp_mean: Option<f64>,
    dp_std: Option<f64>,
    failures: usize,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Invalid(format!("csv: {e}"))
}

/// Writes `record.json`, `results.csv`, `summary.csv` and `manifest.json`.
pub fn write_outputs(record: &RunRecord, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let json = |v: &serde_json::Value| serde_json::to_string_pretty(v).expect("json");
    let rec_path = dir.join("record.json");
    fs::write(&rec_path, serde_json::to_string_pretty(record).expect("record serializes"))?;
    files.push(rec_path);

    let res_path = dir.join("results.csv");
    let mut w = csv::Writer::from_path(&res_path).map_err(csv_err)?;
    for p in &record.results {
        w.serialize(ResultRow {
            point: p.point_index,
            repeat: p.repeat,
            n: p.point.n,
            r: p.point.r,
            shots: p.point.shots.label(),
            t_over_tn: p.point.t_over_tn,
            gap_over_tn: p.point.gap_over_tn,
            seed: p.seed,
            fidelity: p.fidelity,
            fidelity_second: p.fidelity_second,
            distance: p.distance,
            distance_projected: p.distance_projected,
            distance_first_time: p.distance_first_time,
            truncation_error: p.truncation_error,
            log_likelihood: p.log_likelihood,
            iterations: p.iterations,
            converged: p.converged,
            wall_seconds: p.wall_seconds,
            error: p.error.clone(),
        })
        .map_err(csv_err)?;
    }
    w.flush()?;
    files.push(res_path);

    let sum_path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&sum_path).map_err(csv_err)?;
    for a in &record.aggregates {
        w.serialize(SummaryRow {
            point: a.point_index,
            n: a.point.n,
            r: a.point.r,
            shots: a.point.shots.label(),
            t_over_tn: a.point.t_over_tn,
            gap_over_tn: a.point.gap_over_tn,
            f_mean: a.fidelity.map(|s| s.mean),
            f_std: a.fidelity.map(|s| s.std),
            f_min: a.fidelity.map(|s| s.min),
            f_max: a.fidelity.map(|s| s.max),
            d_mean: a.distance.map(|s| s.mean),
            d_std: a.distance.map(|s| s.std),
            d_min: a.distance.map(|s| s.min),
            d_max: a.distance.map(|s| s.max),
            dp_mean: a.distance_projected.map(|s| s.mean),
            dp_std: a.distance_projected.map(|s| s.std),
            failures: a.failures,
        })
        .map_err(csv_err)?;
    }
    w.flush()?;
    files.push(sum_path);

    let manifest = serde_json::json!({
        "config_hash": record.config_hash,
        "seed": record.config.seed,
        "kind": record.config.kind,
        "target": record.config.target,
        "points": record.aggregates.len(),
        "runs": record.results.len(),
        "failures": record.failures().len(),
        "files": ["record.json", "results.csv", "summary.csv"],
    });
    let man_path = dir.join("manifest.json");
    fs::write(&man_path, json(&manifest))?;
    files.push(man_path);
    Ok(files)
}

pub fn load_record(path: &Path) -> Result<RunRecord> {
    serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| Error::Invalid(format!("record: {e}")))
}

/// Gnuplot data: one block per `(n, r)`, blocks separated by two blank
/// lines so they can be addressed with `index`.
pub fn plot_table(record: &RunRecord) -> String {
    let mut out = String::from(
        "# columns: shots (0 = exact) t_over_tn gap_over_tn F_mean F_std D_mean D_std Dproj_mean sqrt(1-sqrt(F))\n",
    );
    let mut keys: Vec<(usize, usize)> = record.aggregates.iter().map(|a| (a.point.n, a.point.r)).collect();
    keys.dedup();
    keys.sort_unstable();
    keys.dedup();
    let num = |v: Option<f64>| v.map_or("nan".to_string(), |x| format!("{x:.10e}"));
    for (bi, (n, r)) in keys.iter().enumerate() {
        if bi > 0 {
            out.push_str("\n\n");
        }
        let _ = writeln!(out, "# n = {n}, r = {r}");
        for a in record.aggregates.iter().filter(|a| a.point.n == *n && a.point.r == *r) {
            let f = a.fidelity.map(|s| s.mean);
            let _ = writeln!(
                out,
                "{} {} {} {} {} {} {} {} {}",
                a.point.shots.count().unwrap_or(0),
                num(a.point.t_over_tn),
                num(a.point.gap_over_tn),
                num(f),
                num(a.fidelity.map(|s| s.std)),
                num(a.distance.map(|s| s.mean)),
                num(a.distance.map(|s| s.std)),
                num(a.distance_projected.map(|s| s.mean)),
                num(f.map(|f| (1.0 - f.sqrt()).max(0.0).sqrt())),
            );
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Scaling fits.

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    /// What was fitted, e.g. `distance_vs_shots`.
    pub relation: String,
    /// The fixed grid coordinates of the group.
    pub group: String,
    pub slope: f64,
    pub intercept: f64,
    /// 95% Student-t interval of the slope.
    pub ci_low: f64,
    pub ci_high: f64,
    pub points: usize,
}

/// Least-squares fit of `log y` against `log x` with a 95% interval.
pub fn fit_loglog(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64, f64)> {
    let pts: Vec<(f64, f64)> =
        x.iter().zip(y).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (a.ln(), b.ln())).collect();
    let mut distinct: Vec<f64> = pts.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    if distinct.len() < 3 {
        return Err(Error::Invalid(format!("insufficient points: {} distinct positive x values, need 3", distinct.len())));
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let dof = m - 2.0;
    let se = (ssr / dof / sxx).sqrt();
    let q = StudentsT::new(0.0, 1.0, dof).expect("positive dof").inverse_cdf(0.975);
    Ok((slope, intercept, slope - q * se, slope + q * se))
}

fn push_fit(out: &mut Vec<SlopeFit>, relation: &str, group: String, x: &[f64], y: &[f64]) {
    if let Ok((slope, intercept, lo, hi)) = fit_loglog(x, y) {
        out.push(SlopeFit { relation: relation.into(), group, slope, intercept, ci_low: lo, ci_high: hi, points: x.len() });
    }
}

/// Log-log slopes of D against M, of D against `t / t_n` (only times below
/// pi, where the series converges) and of `(1 - sqrt F)^{1/2}` against
/// `1 / sqrt M`, for every group that covers at least three values of the
/// swept variable. Individual repeats enter the fits.
pub fn scaling_report(record: &RunRecord) -> Result<Vec<SlopeFit>> {
    let ok: Vec<&PointResult> = record.results.iter().filter(|r| r.error.is_none()).collect();
    let mut fits = Vec::new();
    let key_t = |v: Option<f64>| v.map_or("-".into(), |x| format!("{x}"));

    // Fixed (n, r, t, gap), swept M.
    let mut groups: Vec<(usize, usize, String, String)> = ok
        .iter()
        .filter(|r| r.point.shots.count().is_some())
        .map(|r| (r.point.n, r.point.r, key_t(r.point.t_over_tn), key_t(r.point.gap_over_tn)))
        .collect();
    groups.sort();
    groups.dedup();
    for g in &groups {
        let rows: Vec<&&PointResult> = ok
            .iter()
            .filter(|r| {
                r.point.shots.count().is_some()
                    && (r.point.n, r.point.r, key_t(r.point.t_over_tn), key_t(r.point.gap_over_tn)) == *g
            })
            .collect();
        let label = format!("n={} r={} t/t_n={} gap={}", g.0, g.1, g.2, g.3);
        let (xm, yd): (Vec<f64>, Vec<f64>) =
            rows.iter().filter_map(|r| Some((r.point.shots.count()? as f64, r.distance?))).unzip();
        push_fit(&mut fits, "distance_vs_shots", label.clone(), &xm, &yd);
        let (xi, yf): (Vec<f64>, Vec<f64>) = rows
            .iter()
            .filter_map(|r| {
                let m = r.point.shots.count()? as f64;
                let f = r.fidelity?;
                Some((1.0 / m.sqrt(), (1.0 - f.sqrt()).max(0.0).sqrt()))
            })
            .unzip();
        push_fit(&mut fits, "infidelity_vs_inverse_sqrt_shots", label, &xi, &yf);
    }

    // Fixed (n, r, M, gap), swept t below pi.
    let mut groups: Vec<(usize, usize, String, String)> = ok
        .iter()
        .filter(|r| r.point.t_over_tn.is_some())
        .map(|r| (r.point.n, r.point.r, r.point.shots.label(), key_t(r.point.gap_over_tn)))
        .collect();
    groups.sort();
    groups.dedup();
    for g in &groups {
        let (xt, yd): (Vec<f64>, Vec<f64>) = ok
            .iter()
            .filter(|r| (r.point.n, r.point.r, r.point.shots.label(), key_t(r.point.gap_over_tn)) == *g)
            .filter_map(|r| {
                let x = r.point.t_over_tn?;
                (x < std::f64::consts::PI).then_some((x, r.distance?))
            })
            .unzip();
        push_fit(&mut fits, "distance_vs_time", format!("n={} r={} M={} gap={}", g.0, g.1, g.2, g.3), &xt, &yd);
    }
    if fits.is_empty() {
        return Err(Error::Invalid("insufficient points: no group covers three values of a swept variable".into()));
    }
    Ok(fits)
}
