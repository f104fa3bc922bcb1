//! Batch pipeline behind the `orbkoop` binary: run configuration, bundled
//! presets, evaluation scenarios and the four commands.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{
    fmt_f64, read_dataset, state_header, to_canonical, write_dataset, DataConfig, Dataset,
    GenerationRecord, Trajectory,
};
use crate::dynamics::{
    cr3bp_derivative, make_2bp_ic, make_cr3bp_ic, propagate, two_body_derivative, Body,
    Cr3bpParams, OrbitKind, OrbitSpec, UnitSystem,
};
use crate::error::{Error, Result};
use crate::koopman::{
    load_model, save_model, train_with_progress, KoopmanModel, LossRecord, TrainConfig,
};
use crate::metrics::{
    circular_invariants, jacobi_comparison, rollout_errors_with, write_errors_csv,
    write_invariants_csv, write_jacobi_csv, ErrorSeries, InvariantReport, JacobiComparison,
};

/// Everything a run needs: data generation, training and evaluation scenarios.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
    #[serde(default, rename = "scenario")]
    pub scenarios: Vec<Scenario>,
}

fn default_body() -> Body {
    Body::Earth
}
fn default_periods() -> usize {
    1
}

/// A single evaluation case, propagated with the nonlinear model as reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "problem", deny_unknown_fields)]
pub enum Scenario {
    #[serde(rename = "2bp")]
    TwoBody {
        name: String,
        #[serde(default = "default_body")]
        body: Body,
        /// Perigee altitude, km.
        altitude_km: f64,
        #[serde(default)]
        eccentricity: f64,
        #[serde(default)]
        perturbed: bool,
        #[serde(default = "default_periods")]
        periods: usize,
    },
    #[serde(rename = "cr3bp")]
    Cr3bp { name: String, x_multiplier: f64, hours: f64 },
}

impl Scenario {
    pub fn name(&self) -> &str {
        match self {
            Scenario::TwoBody { name, .. } | Scenario::Cr3bp { name, .. } => name,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Scenario::TwoBody { altitude_km, eccentricity, perturbed, periods, .. } => {
                if !(*altitude_km > 0.0) || !(0.0..1.0).contains(eccentricity) || *periods == 0 {
                    return Err(Error::Config(format!(
                        "scenario {}: need altitude > 0, 0 <= e < 1, periods >= 1",
                        self.name()
                    )));
                }
                if *perturbed && *eccentricity != 0.0 {
                    return Err(Error::Config(format!(
                        "scenario {}: perturbed scenarios must be circular",
                        self.name()
                    )));
                }
            }
            Scenario::Cr3bp { x_multiplier, hours, .. } => {
                if !(1.0..=1.05).contains(x_multiplier) || !(*hours > 0.0) {
                    return Err(Error::Config(format!(
                        "scenario {}: need x_multiplier in [1, 1.05] and hours > 0",
                        self.name()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Bundled preset configurations by name.
pub const PRESETS: &[(&str, &str)] = &[
    ("earth-1p", include_str!("../presets/earth-1p.toml")),
    ("earth-10p", include_str!("../presets/earth-10p.toml")),
    ("moon", include_str!("../presets/moon.toml")),
    ("jupiter", include_str!("../presets/jupiter.toml")),
    ("perturbed", include_str!("../presets/perturbed.toml")),
    ("eccentric-e1", include_str!("../presets/eccentric-e1.toml")),
    ("eccentric-e2", include_str!("../presets/eccentric-e2.toml")),
    ("eccentric-e5", include_str!("../presets/eccentric-e5.toml")),
    ("cr3bp-l1", include_str!("../presets/cr3bp-l1.toml")),
    ("full-2bp", include_str!("../presets/full-2bp.toml")),
    ("full-cr3bp", include_str!("../presets/full-cr3bp.toml")),
];

/// Preset used when no configuration is given.
pub const DEFAULT_PRESET: &str = "full-2bp";

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn preset(name: &str) -> Result<Self> {
        let text = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| {
                let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
                Error::Config(format!("unknown preset {name:?}; available: {}", names.join(", ")))
            })?;
        Self::parse(text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate()?;
        let data_alpha = match &self.data {
            DataConfig::TwoBody(c) => c.alpha,
            DataConfig::Cr3bp(c) => c.alpha,
        };
        if data_alpha != self.train.alpha {
            return Err(Error::Config(format!(
                "data.alpha = {data_alpha} but train.alpha = {}",
                self.train.alpha
            )));
        }
        for s in &self.scenarios {
            s.validate()?;
        }
        Ok(())
    }

    /// Overrides both the data and the training seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.data.set_seed(seed);
        self.train.seed = seed;
    }

    /// Scenario by name, or the first one listed.
    pub fn scenario(&self, name: Option<&str>) -> Result<&Scenario> {
        match name {
            Some(n) => self
                .scenarios
                .iter()
                .find(|s| s.name() == n)
                .ok_or_else(|| Error::Config(format!("no scenario named {n:?} in the configuration"))),
            None => self
                .scenarios
                .first()
                .ok_or_else(|| Error::Config("the configuration lists no scenarios".into())),
        }
    }

    /// Three-body constants for CR3BP scenarios.
    pub fn cr3bp_params(&self) -> Result<Cr3bpParams> {
        match &self.data {
            DataConfig::Cr3bp(c) => c.params(),
            DataConfig::TwoBody(_) => Ok(Cr3bpParams::earth_moon()),
        }
    }
}

/// Nonlinear reference trajectory for `scenario` sampled at the model's step.
///
/// `n_steps` defaults to the scenario length.
pub fn scenario_reference(
    scenario: &Scenario,
    model: &KoopmanModel,
    cr3bp: &Cr3bpParams,
    n_steps: Option<usize>,
) -> Result<Trajectory> {
    scenario.validate()?;
    match scenario {
        Scenario::TwoBody { body, altitude_km, eccentricity, perturbed, periods, .. } => {
            if model.unit_system != UnitSystem::Canonical2bp {
                return Err(Error::Units(format!(
                    "scenario {} is two-body but the model works in {}",
                    scenario.name(),
                    model.unit_system
                )));
            }
            let per_period = (2.0 * PI / model.dt_scaled).round() as usize;
            let steps = n_steps.unwrap_or(periods * per_period);
            let kind = match (*perturbed, *eccentricity > 0.0) {
                (true, _) => OrbitKind::PerturbedCircular,
                (false, true) => OrbitKind::Elliptical,
                (false, false) => OrbitKind::Circular,
            };
            let mut params = body.params();
            if *perturbed {
                params.srp = Some(Default::default());
            }
            let orbit = OrbitSpec::from_perigee(kind, params.body_radius + altitude_km, *eccentricity)?;
            let ic = make_2bp_ic(&orbit, &params)?;
            let dt = orbit.period(&params) / per_period as f64;
            let physical = propagate(&ic, &two_body_derivative(params, *perturbed), dt, steps.max(1))?;
            let mut traj = keep_steps(to_canonical(&physical, &params)?, steps);
            traj.record = Some(GenerationRecord::TwoBody {
                index: 0,
                seed: 0,
                orbit,
                params,
                perturbed: *perturbed,
                ic: ic.into_components(),
            });
            Ok(traj)
        }
        Scenario::Cr3bp { x_multiplier, hours, .. } => {
            if model.unit_system != UnitSystem::NondimCr3bp {
                return Err(Error::Units(format!(
                    "scenario {} is CR3BP but the model works in {}",
                    scenario.name(),
                    model.unit_system
                )));
            }
            let steps = n_steps
                .unwrap_or_else(|| (cr3bp.hours_to_nondim(*hours) / model.dt_scaled).round() as usize);
            let ic = make_cr3bp_ic(cr3bp, *x_multiplier)?;
            let traj = propagate(&ic, &cr3bp_derivative(cr3bp.mu_frac), model.dt_scaled, steps.max(1))?;
            Ok(keep_steps(traj, steps))
        }
    }
}

fn keep_steps(mut traj: Trajectory, steps: usize) -> Trajectory {
    traj.times.truncate(steps + 1);
    traj.states.truncate(steps + 1);
    traj
}

#[derive(Clone, Debug)]
pub struct GenDataReport {
    pub dataset: Dataset,
    pub out_dir: PathBuf,
    /// Human-readable IC table.
    pub summary: String,
}

pub fn cmd_gen_data(config: &RunConfig, out_dir: &Path) -> Result<GenDataReport> {
    config.validate()?;
    let dataset = config.data.generate()?;
    write_dataset(&dataset, out_dir)?;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} trajectories of {} samples, dt = {:.6e} ({}), written to {}",
        dataset.trajectories.len(),
        dataset.trajectory_len(),
        dataset.dt_scaled,
        dataset.unit_system,
        out_dir.display()
    );
    for t in &dataset.trajectories {
        match &t.record {
            Some(GenerationRecord::TwoBody { index, seed, orbit, params, .. }) => {
                let _ = writeln!(
                    s,
                    "  {index:4}  seed {seed:20}  altitude {:10.3} km  e {:.4}",
                    orbit.perigee_radius - params.body_radius,
                    orbit.eccentricity
                );
            }
            Some(GenerationRecord::Cr3bp { index, seed, x_multiplier, .. }) => {
                let _ = writeln!(s, "  {index:4}  seed {seed:20}  x multiplier {x_multiplier:.6}");
            }
            None => {}
        }
    }
    Ok(GenDataReport { dataset, out_dir: out_dir.to_path_buf(), summary: s })
}

/// Path of the loss-history CSV written next to `model_path`.
pub fn loss_csv_path(model_path: &Path) -> PathBuf {
    let stem = model_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    model_path.with_file_name(format!("{stem}_loss.csv"))
}

pub fn write_loss_csv(history: &[LossRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["epoch", "total", "recon", "pred", "l1", "l2", "rv"])
        .map_err(|e| csv_err(path, e))?;
    for r in history {
        let l = &r.loss;
        let mut row = vec![r.epoch.to_string()];
        row.extend([l.total, l.recon, l.pred, l.l1, l.l2, l.rv].iter().map(|v| fmt_f64(*v)));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{}: {other:?}", path.display())),
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub model: KoopmanModel,
    pub history: Vec<LossRecord>,
    pub loss_csv: PathBuf,
    /// Frobenius norm of (final full-data K − last minibatch K).
    pub k_gap: f64,
    pub summary: String,
}

/// Checks that a dataset on disk was generated for this configuration.
pub fn check_dataset(ds: &Dataset, config: &RunConfig) -> Result<()> {
    let expected_n = match &config.data {
        DataConfig::TwoBody(_) => 4,
        DataConfig::Cr3bp(_) => 6,
    };
    if ds.n != expected_n {
        return Err(Error::Config(format!(
            "dataset has state dimension {} but the configuration describes {expected_n}",
            ds.n
        )));
    }
    if ds.alpha != config.train.alpha {
        return Err(Error::Config(format!(
            "dataset was generated with alpha = {} but train.alpha = {}",
            ds.alpha, config.train.alpha
        )));
    }
    Ok(())
}

pub fn cmd_train(dataset_dir: &Path, config: &RunConfig, model_out: &Path) -> Result<TrainReport> {
    config.validate()?;
    let ds = read_dataset(dataset_dir)?;
    check_dataset(&ds, config)?;
    let every = (config.train.epochs / 20).max(1);
    let outcome = train_with_progress(&ds, &config.train, |epoch, l| {
        if epoch % every == 0 || epoch + 1 == config.train.epochs {
            log::info!(
                "epoch {epoch:6}  total {:.6e}  recon {:.3e}  pred {:.3e}",
                l.total,
                l.recon,
                l.pred
            );
        }
    })?;
    save_model(&outcome.model, model_out)?;
    let loss_csv = loss_csv_path(model_out);
    write_loss_csv(&outcome.history, &loss_csv)?;
    let k_gap = match &outcome.last_batch_k {
        Some(kb) => outcome.model.k.sub(kb)?.frobenius_norm(),
        None => 0.0,
    };
    let first = outcome.history.first().map(|r| r.loss.total).unwrap_or(f64::NAN);
    let last = outcome.history.last().map(|r| r.loss.total).unwrap_or(f64::NAN);
    let side = outcome.model.lifted_dim();
    let summary = format!(
        "trained {} epochs on {} trajectories\nK: {side}x{side}\nloss: {first:.6e} -> {last:.6e}\n\
         |K_full - K_batch|_F = {k_gap:.3e}\nmodel: {}\nloss history: {}\n",
        config.train.epochs,
        ds.trajectories.len(),
        model_out.display(),
        loss_csv.display()
    );
    Ok(TrainReport { model: outcome.model, history: outcome.history, loss_csv, k_gap, summary })
}

#[derive(Clone, Debug)]
pub struct PredictReport {
    pub predicted: Trajectory,
    pub reference: Trajectory,
}

/// Corrected rollout and nonlinear reference for `scenario`.
pub fn predict_scenario(
    model: &KoopmanModel,
    scenario: &Scenario,
    cr3bp: &Cr3bpParams,
    n_steps: Option<usize>,
) -> Result<PredictReport> {
    let reference = scenario_reference(scenario, model, cr3bp, n_steps)?;
    let predicted = model.predict(&reference.initial_state()?, reference.len() - 1)?;
    Ok(PredictReport { predicted, reference })
}

pub fn write_prediction_csv(report: &PredictReport, path: &Path) -> Result<()> {
    let names: Vec<String> = state_header(report.reference.dim()).into_iter().skip(1).collect();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["t".to_string()];
    header.extend(names.iter().map(|n| format!("pred_{n}")));
    header.extend(names.iter().map(|n| format!("ref_{n}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for i in 0..report.reference.len() {
        let mut row = vec![fmt_f64(report.reference.times[i])];
        row.extend(report.predicted.states[i].iter().map(|v| fmt_f64(*v)));
        row.extend(report.reference.states[i].iter().map(|v| fmt_f64(*v)));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn cmd_predict(
    model_path: &Path,
    scenario: &Scenario,
    config: &RunConfig,
    n_steps: Option<usize>,
    out: &Path,
) -> Result<PredictReport> {
    let model = load_model(model_path)?;
    let report = predict_scenario(&model, scenario, &config.cr3bp_params()?, n_steps)?;
    write_prediction_csv(&report, out)?;
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub errors: ErrorSeries,
    /// Two-body only: invariants of the predicted trajectory.
    pub invariants: Option<InvariantReport>,
    /// CR3BP only.
    pub jacobi: Option<JacobiComparison>,
    pub summary: String,
}

/// Metrics for `model` on `scenario`, without touching the filesystem.
pub fn evaluate(
    model: &KoopmanModel,
    scenario: &Scenario,
    cr3bp: &Cr3bpParams,
    n_steps: Option<usize>,
) -> Result<(PredictReport, EvalReport)> {
    let pr = predict_scenario(model, scenario, cr3bp, n_steps)?;
    let errors = rollout_errors_with(model, &pr.reference, &pr.predicted, cr3bp.mu_frac)?;
    let mut s = String::new();
    let _ = writeln!(s, "scenario: {}", scenario.name());
    let _ = writeln!(s, "steps: {}", pr.reference.len() - 1);
    let _ = writeln!(s, "mean radius: {:.9e}", errors.mean_r);
    let _ = writeln!(
        s,
        "max global position error: {:.6e} ({:.6}% of mean radius)",
        crate::metrics::max_abs(&errors.global_position),
        errors.max_global_position_pct
    );
    let _ = writeln!(
        s,
        "max local position error: {:.6e} ({:.6}% of mean radius)",
        crate::metrics::max_abs(&errors.local_position),
        errors.max_local_position_pct
    );
    let (mut invariants, mut jacobi) = (None, None);
    match scenario {
        Scenario::TwoBody { .. } => {
            let inv = circular_invariants(&pr.predicted)?;
            let _ = writeln!(s, "max |xi_r|: {:.6e}", inv.max_xi_r);
            let _ = writeln!(s, "max |xi_v|: {:.6e}", inv.max_xi_v);
            let _ = writeln!(s, "max |xi_lz|: {:.6e}", inv.max_xi_lz);
            let _ = writeln!(s, "max |r.v|: {:.6e}", inv.max_rv);
            invariants = Some(inv);
        }
        Scenario::Cr3bp { .. } => {
            let cmp = jacobi_comparison(&pr.predicted, &pr.reference, cr3bp.mu_frac)?;
            let _ = writeln!(s, "max relative Jacobi deviation: {:.6e}", cmp.max_relative_error);
            let _ = writeln!(s, "reference Jacobi drift: {:.6e}", cmp.reference_drift);
            jacobi = Some(cmp);
        }
    }
    Ok((pr, EvalReport { errors, invariants, jacobi, summary: s }))
}

pub fn cmd_eval(
    model_path: &Path,
    scenario: &Scenario,
    config: &RunConfig,
    out_dir: &Path,
) -> Result<EvalReport> {
    let model = load_model(model_path)?;
    let (pr, report) = evaluate(&model, scenario, &config.cr3bp_params()?, None)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let times = &pr.reference.times;
    write_prediction_csv(&pr, &out_dir.join("prediction.csv"))?;
    write_errors_csv(&report.errors, times, &out_dir.join("errors.csv"))?;
    if let Some(inv) = &report.invariants {
        write_invariants_csv(inv, times, &out_dir.join("invariants.csv"))?;
    }
    if let Some(j) = &report.jacobi {
        write_jacobi_csv(j, times, &out_dir.join("jacobi.csv"))?;
    }
    let path = out_dir.join("summary.txt");
    fs::write(&path, &report.summary).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}
