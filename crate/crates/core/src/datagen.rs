//! Training-data generation: random initial conditions, propagation,
//! truncation, canonical scaling and the on-disk dataset format.
//!
//! A dataset is a directory holding `meta.json` and one CSV per trajectory
//! (`traj_0000.csv`, ...). Two-body trajectories are stored in the canonical
//! units of their own orbit (distance unit = semi-major axis, μ = 1), so every
//! trajectory shares the scaled step `2π/dp`.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    cr3bp_derivative, make_2bp_ic, make_cr3bp_ic, propagate, two_body_derivative, Body,
    Cr3bpParams, GravParams, OrbitKind, OrbitSpec, Srp, StateVector, UnitSystem,
};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const DATASET_FORMAT_VERSION: u32 = 1;
const META_FILE: &str = "meta.json";

/// Distance and time units of a canonical two-body trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalScale {
    /// km
    pub du: f64,
    /// s
    pub tu: f64,
}

impl CanonicalScale {
    /// Scale of the Keplerian orbit through `state` (vis-viva semi-major axis).
    pub fn of_state(state: &[f64], mu: f64) -> Result<Self> {
        let r = state[0].hypot(state[1]);
        let v2 = state[2] * state[2] + state[3] * state[3];
        let inv_a = 2.0 / r - v2 / mu;
        if !(inv_a > 0.0) {
            return Err(Error::InvalidOrbit(format!(
                "state {state:?} is not on a bound orbit (1/a = {inv_a})"
            )));
        }
        let du = 1.0 / inv_a;
        Ok(CanonicalScale {
            du,
            tu: (du.powi(3) / mu).sqrt(),
        })
    }

    fn velocity_unit(&self) -> f64 {
        self.du / self.tu
    }
}

/// How a trajectory was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "problem", rename_all = "kebab-case")]
pub enum GenerationRecord {
    TwoBody {
        index: usize,
        seed: u64,
        orbit: OrbitSpec,
        params: GravParams,
        perturbed: bool,
        /// Initial condition in km, km/s.
        ic: Vec<f64>,
    },
    Cr3bp {
        index: usize,
        seed: u64,
        x_multiplier: f64,
        params: Cr3bpParams,
        ic: Vec<f64>,
    },
}

/// Uniformly sampled states of one trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub units: UnitSystem,
    /// Set while the trajectory is in canonical units.
    #[serde(default)]
    pub scale: Option<CanonicalScale>,
    #[serde(default)]
    pub record: Option<GenerationRecord>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<Vec<f64>>, units: UnitSystem) -> Result<Self> {
        if times.len() != states.len() {
            return Err(Error::Shape(format!(
                "{} times for {} states",
                times.len(),
                states.len()
            )));
        }
        if times.is_empty() {
            return Err(Error::Shape("trajectory has no samples".into()));
        }
        let n = states[0].len();
        if let Some(len) = units.state_len() {
            if n != len {
                return Err(Error::Shape(format!("{units} states need {len} components, got {n}")));
            }
        }
        for (k, s) in states.iter().enumerate() {
            if s.len() != n {
                return Err(Error::Shape(format!("state {k} has {} components, expected {n}", s.len())));
            }
            if s.iter().any(|c| !c.is_finite()) {
                return Err(Error::Numerical(format!("state {k} is not finite")));
            }
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Shape("trajectory times must be strictly increasing".into()));
        }
        Ok(Trajectory {
            times,
            states,
            units,
            scale: None,
            record: None,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    /// Step between consecutive samples (zero for a single sample).
    pub fn dt(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            self.times[1] - self.times[0]
        }
    }

    pub fn initial_state(&self) -> Result<StateVector> {
        StateVector::new(self.states[0].clone(), self.units)
    }

    /// Drops the last `count` samples.
    pub fn truncate_tail(&mut self, count: usize) -> Result<()> {
        if count >= self.len() {
            return Err(Error::Config(format!(
                "cannot drop {count} of {} samples",
                self.len()
            )));
        }
        let keep = self.len() - count;
        self.times.truncate(keep);
        self.states.truncate(keep);
        Ok(())
    }
}

/// Snapshot matrices with one state per column; `y` is `x` shifted by one step.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotPair {
    pub x: Matrix,
    pub y: Matrix,
}

pub fn snapshots(traj: &Trajectory) -> Result<SnapshotPair> {
    let m = traj.len();
    if m < 2 {
        return Err(Error::Shape(format!("snapshots need at least 2 states, got {m}")));
    }
    Ok(SnapshotPair {
        x: Matrix::from_columns(&traj.states[..m - 1])?,
        y: Matrix::from_columns(&traj.states[1..])?,
    })
}

/// Converts a physical two-body trajectory to the canonical units of its orbit.
///
/// The distance unit is the semi-major axis of the osculating orbit at the
/// first sample and the time unit makes μ = 1.
pub fn to_canonical(traj: &Trajectory, params: &GravParams) -> Result<Trajectory> {
    match traj.units {
        UnitSystem::Canonical2bp => {
            log::warn!("trajectory is already in canonical units; leaving it unchanged");
            return Ok(traj.clone());
        }
        UnitSystem::PhysicalKmS => {}
        other => {
            return Err(Error::Units(format!("cannot convert a {other} trajectory to canonical units")))
        }
    }
    let scale = CanonicalScale::of_state(&traj.states[0], params.effective_mu())?;
    let vu = scale.velocity_unit();
    let states = traj
        .states
        .iter()
        .map(|s| vec![s[0] / scale.du, s[1] / scale.du, s[2] / vu, s[3] / vu])
        .collect();
    Ok(Trajectory {
        times: traj.times.iter().map(|t| t / scale.tu).collect(),
        states,
        units: UnitSystem::Canonical2bp,
        scale: Some(scale),
        record: traj.record.clone(),
    })
}

/// Inverse of [`to_canonical`].
pub fn from_canonical(traj: &Trajectory) -> Result<Trajectory> {
    if traj.units != UnitSystem::Canonical2bp {
        return Err(Error::Units(format!("expected a canonical trajectory, got {}", traj.units)));
    }
    let scale = traj
        .scale
        .ok_or_else(|| Error::Units("canonical trajectory carries no unit scale".into()))?;
    let vu = scale.velocity_unit();
    Ok(Trajectory {
        times: traj.times.iter().map(|t| t * scale.tu).collect(),
        states: traj
            .states
            .iter()
            .map(|s| vec![s[0] * scale.du, s[1] * scale.du, s[2] * vu, s[3] * vu])
            .collect(),
        units: UnitSystem::PhysicalKmS,
        scale: None,
        record: traj.record.clone(),
    })
}

/// Per-trajectory seed: SplitMix64 finalizer of the master seed and index.
pub fn derive_seed(master: u64, index: usize) -> u64 {
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn uniform(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    range[0] + (range[1] - range[0]) * rng.random::<f64>()
}

fn check_range(name: &str, range: [f64; 2]) -> Result<()> {
    if !(range[0].is_finite() && range[1].is_finite() && range[0] <= range[1]) {
        return Err(Error::Config(format!("{name} must satisfy low <= high, got {range:?}")));
    }
    Ok(())
}

fn default_n_ic_2bp() -> usize {
    200
}
fn default_n_ic_cr3bp() -> usize {
    500
}
fn default_dp() -> usize {
    1000
}
fn default_alpha() -> usize {
    25
}
fn default_altitude_range() -> [f64; 2] {
    [200.0, 5000.0]
}
fn default_e_range() -> [f64; 2] {
    [0.1, 0.5]
}
fn default_duration_hours() -> f64 {
    90.0
}
fn default_multiplier_range() -> [f64; 2] {
    [1.0, 1.05]
}
fn default_mu_frac() -> f64 {
    Cr3bpParams::earth_moon().mu_frac
}
fn default_m_star() -> f64 {
    Cr3bpParams::earth_moon().m_star
}
fn default_l_star() -> f64 {
    Cr3bpParams::earth_moon().l_star
}
fn default_body() -> Body {
    Body::Earth
}
fn default_kind() -> OrbitKind {
    OrbitKind::Circular
}

/// Two-body dataset generation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoBodyDataConfig {
    #[serde(default = "default_n_ic_2bp")]
    pub n_ic: usize,
    /// Samples per orbital period.
    #[serde(default = "default_dp")]
    pub dp: usize,
    #[serde(default = "default_alpha")]
    pub alpha: usize,
    #[serde(default = "default_kind")]
    pub kind: OrbitKind,
    #[serde(default = "default_body")]
    pub body: Body,
    /// Perigee altitude range, km.
    #[serde(default = "default_altitude_range")]
    pub altitude_range: [f64; 2],
    /// Eccentricity range for elliptical orbits.
    #[serde(default = "default_e_range")]
    pub e_range: [f64; 2],
    /// SRP model used by perturbed orbits.
    #[serde(default)]
    pub srp: Srp,
    #[serde(default)]
    pub satellite_mass_kg: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TwoBodyDataConfig {
    fn default() -> Self {
        TwoBodyDataConfig {
            n_ic: default_n_ic_2bp(),
            dp: default_dp(),
            alpha: default_alpha(),
            kind: default_kind(),
            body: default_body(),
            altitude_range: default_altitude_range(),
            e_range: default_e_range(),
            srp: Srp::default(),
            satellite_mass_kg: 0.0,
            seed: 0,
        }
    }
}

impl TwoBodyDataConfig {
    pub fn grav_params(&self) -> GravParams {
        let mut p = self.body.params();
        p.satellite_mass_kg = self.satellite_mass_kg;
        if self.kind.perturbed() {
            p.srp = Some(self.srp);
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        validate_counts(self.n_ic, self.dp, self.alpha)?;
        check_range("altitude_range", self.altitude_range)?;
        if self.altitude_range[0] <= 0.0 {
            return Err(Error::Config("altitudes must be positive".into()));
        }
        if self.kind == OrbitKind::Elliptical {
            check_range("e_range", self.e_range)?;
            if self.e_range[0] < 0.0 || self.e_range[1] >= 1.0 {
                return Err(Error::Config(format!("e_range {:?} must lie in [0, 1)", self.e_range)));
            }
        }
        self.grav_params().validate()
    }
}

/// CR3BP dataset generation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cr3bpDataConfig {
    #[serde(default = "default_n_ic_cr3bp")]
    pub n_ic: usize,
    /// Samples per trajectory before truncation.
    #[serde(default = "default_dp")]
    pub dp: usize,
    #[serde(default = "default_alpha")]
    pub alpha: usize,
    #[serde(default = "default_duration_hours")]
    pub duration_hours: f64,
    #[serde(default = "default_multiplier_range")]
    pub multiplier_range: [f64; 2],
    #[serde(default = "default_mu_frac")]
    pub mu_frac: f64,
    /// Total mass M*, kg.
    #[serde(default = "default_m_star")]
    pub m_star: f64,
    /// Primary separation L*, km.
    #[serde(default = "default_l_star")]
    pub l_star: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for Cr3bpDataConfig {
    fn default() -> Self {
        Cr3bpDataConfig {
            n_ic: default_n_ic_cr3bp(),
            dp: default_dp(),
            alpha: default_alpha(),
            duration_hours: default_duration_hours(),
            multiplier_range: default_multiplier_range(),
            mu_frac: default_mu_frac(),
            m_star: default_m_star(),
            l_star: default_l_star(),
            seed: 0,
        }
    }
}

impl Cr3bpDataConfig {
    pub fn params(&self) -> Result<Cr3bpParams> {
        Cr3bpParams::new(self.m_star, self.l_star, self.mu_frac)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        validate_counts(self.n_ic, self.dp, self.alpha)?;
        check_range("multiplier_range", self.multiplier_range)?;
        if self.multiplier_range[0] < 1.0 || self.multiplier_range[1] > 1.05 {
            return Err(Error::Config(format!(
                "multiplier_range {:?} must lie in [1, 1.05]",
                self.multiplier_range
            )));
        }
        if !(self.duration_hours > 0.0) {
            return Err(Error::Config("duration_hours must be positive".into()));
        }
        self.params().map(|_| ())
    }
}

fn validate_counts(n_ic: usize, dp: usize, alpha: usize) -> Result<()> {
    if n_ic == 0 {
        return Err(Error::Config("n_ic must be at least 1".into()));
    }
    if alpha == 0 {
        return Err(Error::Config("alpha must be at least 1".into()));
    }
    if dp < alpha + 2 {
        return Err(Error::Config(format!("dp = {dp} must be at least alpha + 2 = {}", alpha + 2)));
    }
    Ok(())
}

/// Generation settings for either problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "problem")]
pub enum DataConfig {
    #[serde(rename = "2bp")]
    TwoBody(TwoBodyDataConfig),
    #[serde(rename = "cr3bp")]
    Cr3bp(Cr3bpDataConfig),
}

impl DataConfig {
    pub fn seed(&self) -> u64 {
        match self {
            DataConfig::TwoBody(c) => c.seed,
            DataConfig::Cr3bp(c) => c.seed,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            DataConfig::TwoBody(c) => c.seed = seed,
            DataConfig::Cr3bp(c) => c.seed = seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DataConfig::TwoBody(c) => c.validate(),
            DataConfig::Cr3bp(c) => c.validate(),
        }
    }

    pub fn generate(&self) -> Result<Dataset> {
        match self {
            DataConfig::TwoBody(c) => generate_2bp_dataset(c),
            DataConfig::Cr3bp(c) => generate_cr3bp_dataset(c),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub dt_scaled: f64,
    pub alpha: usize,
    pub n: usize,
    /// Samples per trajectory before truncation.
    pub dp: usize,
    pub unit_system: UnitSystem,
    pub master_seed: u64,
    pub config: Option<DataConfig>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        let first = self
            .trajectories
            .first()
            .ok_or_else(|| Error::Shape("dataset has no trajectories".into()))?;
        let len = first.len();
        if self.alpha == 0 || self.alpha >= len {
            return Err(Error::Shape(format!(
                "alpha = {} must lie in [1, {len})",
                self.alpha
            )));
        }
        for (i, t) in self.trajectories.iter().enumerate() {
            if t.len() != len {
                return Err(Error::Shape(format!(
                    "trajectory {i} has {} samples, expected {len}",
                    t.len()
                )));
            }
            if t.dim() != self.n {
                return Err(Error::Shape(format!(
                    "trajectory {i} has dimension {}, expected {}",
                    t.dim(),
                    self.n
                )));
            }
            if t.units != self.unit_system {
                return Err(Error::Units(format!(
                    "trajectory {i} is in {}, dataset is {}",
                    t.units, self.unit_system
                )));
            }
            if ((t.dt() - self.dt_scaled) / self.dt_scaled).abs() > 1e-9 {
                return Err(Error::Shape(format!(
                    "trajectory {i} step {} differs from dataset step {}",
                    t.dt(),
                    self.dt_scaled
                )));
            }
        }
        Ok(())
    }

    /// Samples per stored trajectory.
    pub fn trajectory_len(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.len())
    }
}

/// Generates one canonical two-body trajectory for IC `index`.
pub fn generate_2bp_trajectory(config: &TwoBodyDataConfig, index: usize) -> Result<Trajectory> {
    let seed = derive_seed(config.seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = config.grav_params();
    let altitude = uniform(&mut rng, config.altitude_range);
    let e = uniform(&mut rng, config.e_range);
    let e = if config.kind == OrbitKind::Elliptical { e } else { 0.0 };
    let orbit = OrbitSpec::from_perigee(config.kind, params.body_radius + altitude, e)?;
    let ic = make_2bp_ic(&orbit, &params)?;
    let dt = orbit.period(&params) / config.dp as f64;
    let perturbed = config.kind.perturbed();
    let physical = propagate(&ic, &two_body_derivative(params, perturbed), dt, config.dp - 1)?;
    let mut traj = to_canonical(&physical, &params)?;
    traj.truncate_tail(config.alpha)?;
    traj.record = Some(GenerationRecord::TwoBody {
        index,
        seed,
        orbit,
        params,
        perturbed,
        ic: ic.into_components(),
    });
    Ok(traj)
}

/// Random two-body training set; see [`TwoBodyDataConfig`].
pub fn generate_2bp_dataset(config: &TwoBodyDataConfig) -> Result<Dataset> {
    config.validate()?;
    let trajectories = (0..config.n_ic)
        .map(|i| generate_2bp_trajectory(config, i))
        .collect::<Result<Vec<_>>>()?;
    let ds = Dataset {
        trajectories,
        dt_scaled: 2.0 * PI / config.dp as f64,
        alpha: config.alpha,
        n: 4,
        dp: config.dp,
        unit_system: UnitSystem::Canonical2bp,
        master_seed: config.seed,
        config: Some(DataConfig::TwoBody(config.clone())),
    };
    ds.validate()?;
    Ok(ds)
}

pub fn generate_cr3bp_trajectory(config: &Cr3bpDataConfig, index: usize) -> Result<Trajectory> {
    let params = config.params()?;
    let seed = derive_seed(config.seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x_multiplier = uniform(&mut rng, config.multiplier_range);
    let ic = make_cr3bp_ic(&params, x_multiplier)?;
    let dt = params.hours_to_nondim(config.duration_hours) / config.dp as f64;
    let mut traj = propagate(&ic, &cr3bp_derivative(params.mu_frac), dt, config.dp - 1)?;
    traj.truncate_tail(config.alpha)?;
    traj.record = Some(GenerationRecord::Cr3bp {
        index,
        seed,
        x_multiplier,
        params,
        ic: ic.into_components(),
    });
    Ok(traj)
}

/// Random CR3BP training set near L1; see [`Cr3bpDataConfig`].
pub fn generate_cr3bp_dataset(config: &Cr3bpDataConfig) -> Result<Dataset> {
    config.validate()?;
    let params = config.params()?;
    let trajectories = (0..config.n_ic)
        .map(|i| generate_cr3bp_trajectory(config, i))
        .collect::<Result<Vec<_>>>()?;
    let ds = Dataset {
        trajectories,
        dt_scaled: params.hours_to_nondim(config.duration_hours) / config.dp as f64,
        alpha: config.alpha,
        n: 6,
        dp: config.dp,
        unit_system: UnitSystem::NondimCr3bp,
        master_seed: config.seed,
        config: Some(DataConfig::Cr3bp(config.clone())),
    };
    ds.validate()?;
    Ok(ds)
}

#[derive(Serialize, Deserialize)]
struct TrajectoryMeta {
    file: String,
    samples: usize,
    #[serde(default)]
    scale: Option<CanonicalScale>,
    #[serde(default)]
    record: Option<GenerationRecord>,
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    format_version: u32,
    unit_system: UnitSystem,
    n: usize,
    dp: usize,
    alpha: usize,
    dt_scaled: f64,
    master_seed: u64,
    #[serde(default)]
    config: Option<DataConfig>,
    trajectories: Vec<TrajectoryMeta>,
}

/// CSV header for a state of dimension `n`.
pub fn state_header(n: usize) -> Vec<String> {
    let names: Vec<String> = match n {
        4 => ["x", "y", "vx", "vy"].iter().map(|s| s.to_string()).collect(),
        6 => ["x", "y", "z", "vx", "vy", "vz"].iter().map(|s| s.to_string()).collect(),
        _ => (0..n).map(|i| format!("s{i}")).collect(),
    };
    std::iter::once("t".to_string()).chain(names).collect()
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn write_csv(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(header).map_err(|e| csv_io(path, e))?;
    for row in rows {
        w.write_record(row.iter().map(|v| fmt_f64(*v)))
            .map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            file: path.display().to_string(),
            record: 0,
            message: format!("{other:?}"),
        },
    }
}

pub fn write_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    let rows = traj.times.iter().zip(&traj.states).map(|(t, s)| {
        let mut row = Vec::with_capacity(s.len() + 1);
        row.push(*t);
        row.extend_from_slice(s);
        row
    });
    write_csv(path, &state_header(traj.dim()), rows)
}

/// Reads `t` and state columns; `n` is the expected state dimension.
pub fn read_trajectory_csv(path: &Path, n: usize, units: UnitSystem) -> Result<Trajectory> {
    let file = path.display().to_string();
    let parse_err = |record: u64, message: String| Error::Parse {
        file: file.clone(),
        record,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;
    let expected = state_header(n);
    let header = reader.headers().map_err(|e| csv_io(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(parse_err(0, format!("header {:?}, expected {:?}", header, expected)));
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let record = i as u64 + 1;
        let rec = rec.map_err(|e| parse_err(record, e.to_string()))?;
        if rec.len() != n + 1 {
            return Err(parse_err(
                record,
                format!("{} columns, expected {}", rec.len(), n + 1),
            ));
        }
        let values = rec
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(record, format!("bad number {f:?}: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        times.push(values[0]);
        states.push(values[1..].to_vec());
    }
    Trajectory::new(times, states, units).map_err(|e| parse_err(0, e.to_string()))
}

pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut metas = Vec::with_capacity(ds.trajectories.len());
    for (i, t) in ds.trajectories.iter().enumerate() {
        let file = format!("traj_{i:04}.csv");
        write_trajectory_csv(t, &dir.join(&file))?;
        metas.push(TrajectoryMeta {
            file,
            samples: t.len(),
            scale: t.scale,
            record: t.record.clone(),
        });
    }
    let meta = DatasetMeta {
        format_version: DATASET_FORMAT_VERSION,
        unit_system: ds.unit_system,
        n: ds.n,
        dp: ds.dp,
        alpha: ds.alpha,
        dt_scaled: ds.dt_scaled,
        master_seed: ds.master_seed,
        config: ds.config.clone(),
        trajectories: metas,
    };
    let path = dir.join(META_FILE);
    let text = serde_json::to_string_pretty(&meta).expect("dataset metadata serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: DatasetMeta = serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        record: e.line() as u64,
        message: e.to_string(),
    })?;
    if meta.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Version {
            found: meta.format_version,
            expected: DATASET_FORMAT_VERSION,
        });
    }
    let mut trajectories = Vec::with_capacity(meta.trajectories.len());
    for tm in meta.trajectories {
        let csv_path = dir.join(&tm.file);
        let mut t = read_trajectory_csv(&csv_path, meta.n, meta.unit_system)?;
        if t.len() != tm.samples {
            return Err(Error::Parse {
                file: csv_path.display().to_string(),
                record: t.len() as u64,
                message: format!("{} samples, metadata says {}", t.len(), tm.samples),
            });
        }
        t.scale = tm.scale;
        t.record = tm.record;
        trajectories.push(t);
    }
    let ds = Dataset {
        trajectories,
        dt_scaled: meta.dt_scaled,
        alpha: meta.alpha,
        n: meta.n,
        dp: meta.dp,
        unit_system: meta.unit_system,
        master_seed: meta.master_seed,
        config: meta.config,
    };
    ds.validate()?;
    Ok(ds)
}
