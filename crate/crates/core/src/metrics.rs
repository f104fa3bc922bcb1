//! Accuracy metrics: orbit averages, relative variation of the circular-orbit
//! invariants, local/global rollout errors and the CR3BP Jacobi constant.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{write_csv, Trajectory};
use crate::dynamics::cr3bp_distances;
use crate::error::{Error, Result};
use crate::koopman::{KoopmanModel, ProblemKind};

/// Arithmetic mean over the samples of one orbit.
pub fn orbit_average(series: &[f64]) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::Domain("orbit average of an empty series".into()));
    }
    Ok(series.iter().sum::<f64>() / series.len() as f64)
}

/// `ξ(tᵢ) = χ(tᵢ)/⟨χ⟩ − 1`.
pub fn relative_variation(series: &[f64]) -> Result<Vec<f64>> {
    let mean = orbit_average(series)?;
    if mean == 0.0 {
        return Err(Error::Domain(
            "relative variation is undefined for a zero orbit average".into(),
        ));
    }
    Ok(series.iter().map(|c| c / mean - 1.0).collect())
}

pub fn max_abs(series: &[f64]) -> f64 {
    series.iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub xi_r: Vec<f64>,
    pub xi_v: Vec<f64>,
    /// Raw `x·ẋ + y·ẏ`.
    pub rv: Vec<f64>,
    pub xi_lz: Vec<f64>,
    pub mean_r: f64,
    pub mean_v: f64,
    pub mean_lz: f64,
    pub max_xi_r: f64,
    pub max_xi_v: f64,
    pub max_rv: f64,
    pub max_xi_lz: f64,
}

/// The four circular-motion invariants of a planar two-body trajectory.
pub fn circular_invariants(traj: &Trajectory) -> Result<InvariantReport> {
    if traj.dim() != 4 {
        return Err(Error::Shape(format!(
            "circular invariants need planar two-body states, got dimension {}",
            traj.dim()
        )));
    }
    let r: Vec<f64> = traj.states.iter().map(|s| s[0].hypot(s[1])).collect();
    let v: Vec<f64> = traj.states.iter().map(|s| s[2].hypot(s[3])).collect();
    let rv: Vec<f64> = traj.states.iter().map(|s| s[0] * s[2] + s[1] * s[3]).collect();
    let lz: Vec<f64> = traj.states.iter().map(|s| s[0] * s[3] - s[1] * s[2]).collect();
    let xi_r = relative_variation(&r)?;
    let xi_v = relative_variation(&v)?;
    let xi_lz = relative_variation(&lz)?;
    Ok(InvariantReport {
        mean_r: orbit_average(&r)?,
        mean_v: orbit_average(&v)?,
        mean_lz: orbit_average(&lz)?,
        max_xi_r: max_abs(&xi_r),
        max_xi_v: max_abs(&xi_v),
        max_rv: max_abs(&rv),
        max_xi_lz: max_abs(&xi_lz),
        xi_r,
        xi_v,
        rv,
        xi_lz,
    })
}

/// Local and global rollout errors; index `i` holds step `n = i + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorSeries {
    /// `e_n = Φ(x_n) − K·Φ(x_{n−1})`
    pub local: Vec<Vec<f64>>,
    /// `E_n = Φ(x_n) − K·Φ(x̂_{n−1})`, with `x̂` the corrected rollout.
    pub global: Vec<Vec<f64>>,
    pub local_norm: Vec<f64>,
    pub global_norm: Vec<f64>,
    /// Euclidean norm of the position part of `e_n`.
    pub local_position: Vec<f64>,
    /// Euclidean norm of the position part of `E_n`.
    pub global_position: Vec<f64>,
    /// Mean radius of the reference trajectory.
    pub mean_r: f64,
    pub max_local_position_pct: f64,
    pub max_global_position_pct: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Mean distance from the origin (two-body) or from the primary (CR3BP).
fn mean_radius(traj: &Trajectory, problem: ProblemKind, mu_frac: f64) -> Result<f64> {
    let r: Vec<f64> = traj
        .states
        .iter()
        .map(|s| match problem {
            ProblemKind::TwoBody => s[0].hypot(s[1]),
            ProblemKind::Cr3bp => cr3bp_distances(s, mu_frac).0,
            ProblemKind::Generic => norm(s),
        })
        .collect();
    orbit_average(&r)
}

/// Local and global errors of `model` along `reference`, starting from the
/// reference's first state.
///
/// `mu_frac` only matters for CR3BP models, where the percent denominators use
/// the mean distance to the primary.
pub fn rollout_errors(model: &KoopmanModel, reference: &Trajectory, mu_frac: f64) -> Result<ErrorSeries> {
    if reference.len() < 2 {
        return Err(Error::Shape("reference trajectory needs at least two samples".into()));
    }
    if reference.dim() != model.n {
        return Err(Error::Shape(format!(
            "reference dimension {} does not match model dimension {}",
            reference.dim(),
            model.n
        )));
    }
    let steps = reference.len() - 1;
    let pred = model.predict(&reference.initial_state()?, steps)?;
    rollout_errors_with(model, reference, &pred, mu_frac)
}

/// As [`rollout_errors`], reusing an existing corrected rollout `pred`.
pub fn rollout_errors_with(
    model: &KoopmanModel,
    reference: &Trajectory,
    pred: &Trajectory,
    mu_frac: f64,
) -> Result<ErrorSeries> {
    if pred.len() != reference.len() {
        return Err(Error::Shape(format!(
            "prediction has {} samples, reference {}",
            pred.len(),
            reference.len()
        )));
    }
    let problem = ProblemKind::of(model.unit_system);
    let pos = problem.position_dim(model.n);
    let mut local = Vec::with_capacity(reference.len() - 1);
    let mut global = Vec::with_capacity(reference.len() - 1);
    for n in 1..reference.len() {
        let lifted_true = model.lift(&reference.states[n])?;
        local.push(diff(&lifted_true, &model.advance_lifted(&reference.states[n - 1])?));
        global.push(diff(&lifted_true, &model.advance_lifted(&pred.states[n - 1])?));
    }
    let mean_r = mean_radius(reference, problem, mu_frac)?;
    let local_position: Vec<f64> = local.iter().map(|e| norm(&e[..pos])).collect();
    let global_position: Vec<f64> = global.iter().map(|e| norm(&e[..pos])).collect();
    Ok(ErrorSeries {
        local_norm: local.iter().map(|e| norm(e)).collect(),
        global_norm: global.iter().map(|e| norm(e)).collect(),
        max_local_position_pct: 100.0 * max_abs(&local_position) / mean_r,
        max_global_position_pct: 100.0 * max_abs(&global_position) / mean_r,
        local,
        global,
        local_position,
        global_position,
        mean_r,
    })
}

/// Jacobi constant `C = x² + y² + 2(1−μ)/r₁ + 2μ/r₂ − v²` (Ω = 1).
pub fn jacobi_constant(state: &[f64], mu_frac: f64) -> Result<f64> {
    if state.len() != 6 {
        return Err(Error::Shape(format!("Jacobi constant needs a 6-state, got {}", state.len())));
    }
    let (r1, r2) = cr3bp_distances(state, mu_frac);
    if r1 == 0.0 || r2 == 0.0 {
        return Err(Error::Singularity("Jacobi constant at a primary".into()));
    }
    let v2 = state[3] * state[3] + state[4] * state[4] + state[5] * state[5];
    Ok(state[0] * state[0] + state[1] * state[1] + 2.0 * (1.0 - mu_frac) / r1 + 2.0 * mu_frac / r2 - v2)
}

pub fn jacobi_series(traj: &Trajectory, mu_frac: f64) -> Result<Vec<f64>> {
    traj.states.iter().map(|s| jacobi_constant(s, mu_frac)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JacobiComparison {
    pub reference: Vec<f64>,
    pub predicted: Vec<f64>,
    /// `|C_pred − C_ref| / |C_ref|` per step.
    pub relative_error: Vec<f64>,
    pub max_relative_error: f64,
    /// Largest relative change of the reference from its initial value.
    pub reference_drift: f64,
}

pub fn jacobi_comparison(predicted: &Trajectory, reference: &Trajectory, mu_frac: f64) -> Result<JacobiComparison> {
    if predicted.len() != reference.len() {
        return Err(Error::Shape(format!(
            "prediction has {} samples, reference {}",
            predicted.len(),
            reference.len()
        )));
    }
    let r = jacobi_series(reference, mu_frac)?;
    let p = jacobi_series(predicted, mu_frac)?;
    let rel: Vec<f64> = r.iter().zip(&p).map(|(a, b)| (b - a).abs() / a.abs()).collect();
    Ok(JacobiComparison {
        max_relative_error: max_abs(&rel),
        reference_drift: r.iter().map(|c| ((c - r[0]) / r[0]).abs()).fold(0.0, f64::max),
        reference: r,
        predicted: p,
        relative_error: rel,
    })
}

fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

pub fn write_invariants_csv(report: &InvariantReport, times: &[f64], path: &Path) -> Result<()> {
    let rows = (0..report.xi_r.len())
        .map(|i| vec![times[i], report.xi_r[i], report.xi_v[i], report.rv[i], report.xi_lz[i]]);
    write_csv(path, &header(&["t", "xi_r", "xi_v", "rv", "xi_lz"]), rows)
}

pub fn write_errors_csv(errors: &ErrorSeries, times: &[f64], path: &Path) -> Result<()> {
    let rows = (0..errors.local.len()).map(|i| {
        vec![
            times[i + 1],
            errors.local_norm[i],
            errors.global_norm[i],
            errors.local_position[i],
            errors.global_position[i],
        ]
    });
    write_csv(
        path,
        &header(&["t", "local", "global", "local_position", "global_position"]),
        rows,
    )
}

pub fn write_jacobi_csv(cmp: &JacobiComparison, times: &[f64], path: &Path) -> Result<()> {
    let rows = (0..cmp.reference.len())
        .map(|i| vec![times[i], cmp.reference[i], cmp.predicted[i], cmp.relative_error[i]]);
    write_csv(path, &header(&["t", "jacobi_ref", "jacobi_pred", "relative_error"]), rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{
        cr3bp_accel, l1_point, make_2bp_ic, make_cr3bp_ic, propagate, two_body_derivative,
        cr3bp_derivative, Body, Cr3bpParams, OrbitKind, OrbitSpec, UnitSystem,
    };
    use crate::linalg::Matrix;
    use std::f64::consts::PI;

    const EM_MU: f64 = 0.012150585;

    fn analytic_circle(r: f64, w: f64, n: usize) -> Trajectory {
        let times: Vec<f64> = (0..n).map(|k| k as f64 * 0.01).collect();
        let states = times
            .iter()
            .map(|t| {
                let th = w * t;
                vec![r * th.cos(), r * th.sin(), -r * w * th.sin(), r * w * th.cos()]
            })
            .collect();
        Trajectory::new(times, states, UnitSystem::Canonical2bp).unwrap()
    }

    #[test]
    fn averages_and_variation() {
        assert_eq!(orbit_average(&[4.0; 7]).unwrap(), 4.0);
        assert_eq!(orbit_average(&[1.0, 2.0, 3.0]).unwrap(), 2.0);
        assert!(orbit_average(&[]).is_err());
        assert_eq!(relative_variation(&[2.5; 5]).unwrap(), vec![0.0; 5]);
        assert_eq!(relative_variation(&[1.0, 3.0]).unwrap(), vec![-0.5, 0.5]);
        assert!(matches!(relative_variation(&[1.0, -1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn eccentric_radius_average_matches_direct_sum() {
        let p = Body::Earth.params();
        let spec = OrbitSpec::from_perigee(OrbitKind::Elliptical, 7000.0, 0.2).unwrap();
        let ic = make_2bp_ic(&spec, &p).unwrap();
        let t = propagate(&ic, &two_body_derivative(p, false), spec.period(&p) / 1000.0, 999).unwrap();
        let r: Vec<f64> = t.states.iter().map(|s| (s[0] * s[0] + s[1] * s[1]).sqrt()).collect();
        let mut direct = 0.0;
        for v in &r {
            direct += v;
        }
        direct /= r.len() as f64;
        assert!((orbit_average(&r).unwrap() - direct).abs() < 1e-9);
        // Time average of r over a Kepler orbit is a(1 + e²/2).
        assert!((direct / (spec.semi_major_axis * 1.02) - 1.0).abs() < 1e-4);
    }

    #[test]
    fn analytic_circle_has_zero_invariant_variation() {
        let rep = circular_invariants(&analytic_circle(1.3, 0.7, 500)).unwrap();
        assert!(rep.max_xi_r < 1e-13);
        assert!(rep.max_xi_v < 1e-13);
        assert!(rep.max_xi_lz < 1e-13);
        assert!(rep.max_rv < 1e-13);
    }

    #[test]
    fn single_point_angular_momentum() {
        let t = Trajectory::new(vec![0.0], vec![vec![2.0, 0.0, 0.0, 3.0]], UnitSystem::Canonical2bp).unwrap();
        let rep = circular_invariants(&t).unwrap();
        assert_eq!(rep.mean_lz, 6.0);
    }

    #[test]
    fn eccentric_radius_variation_amplitude() {
        // Periapsis start: ξ_r < 0 initially, amplitude close to e.
        let e = 0.1;
        let p = Body::Earth.params();
        let spec = OrbitSpec::from_perigee(OrbitKind::Elliptical, 8000.0, e).unwrap();
        let ic = make_2bp_ic(&spec, &p).unwrap();
        let t = propagate(&ic, &two_body_derivative(p, false), spec.period(&p) / 1000.0, 999).unwrap();
        let rep = circular_invariants(&t).unwrap();
        // Kepler oracle: r_min = a(1 − e), ⟨r⟩ = a(1 + e²/2).
        let expected = (1.0 - e) / (1.0 + e * e / 2.0) - 1.0;
        assert!(rep.xi_r[0] < 0.0);
        assert!((rep.xi_r[0] - expected).abs() < 1e-4, "{} vs {expected}", rep.xi_r[0]);
        assert!((rep.max_xi_r - e).abs() < 0.02);
    }

    fn rotation_model(dth: f64) -> KoopmanModel {
        let (c, s) = (dth.cos(), dth.sin());
        let mut k = Matrix::zeros(4, 4);
        for (i, j, v) in [(0, 0, c), (0, 1, -s), (1, 0, s), (1, 1, c), (2, 2, c), (2, 3, -s), (3, 2, s), (3, 3, c)] {
            k[(i, j)] = v;
        }
        KoopmanModel::new(None, k, 4, UnitSystem::Canonical2bp, dth).unwrap()
    }

    fn unit_circle(dth: f64, n: usize) -> Trajectory {
        let times: Vec<f64> = (0..n).map(|k| k as f64 * dth).collect();
        let states = times.iter().map(|th| vec![th.cos(), th.sin(), -th.sin(), th.cos()]).collect();
        Trajectory::new(times, states, UnitSystem::Canonical2bp).unwrap()
    }

    #[test]
    fn perfect_model_has_zero_errors() {
        let dth = 2.0 * PI / 1000.0;
        let errs = rollout_errors(&rotation_model(dth), &unit_circle(dth, 200), 0.0).unwrap();
        assert!(max_abs(&errs.local_norm) < 1e-13);
        assert!(max_abs(&errs.global_norm) < 1e-12);
        assert_eq!(errs.local.len(), 199);
    }

    #[test]
    fn first_local_and_global_errors_coincide() {
        let dth = 2.0 * PI / 1000.0;
        let model = rotation_model(dth * 1.01);
        let errs = rollout_errors(&model, &unit_circle(dth, 50), 0.0).unwrap();
        assert_eq!(errs.local[0], errs.global[0]);
        assert!(errs.global_norm[40] > errs.local_norm[40]);
    }

    #[test]
    fn global_error_equals_lift_difference_on_state_rows() {
        let dth = 2.0 * PI / 1000.0;
        let model = rotation_model(dth * 1.02);
        let reference = unit_circle(dth, 60);
        let errs = rollout_errors(&model, &reference, 0.0).unwrap();
        let pred = model.predict(&reference.initial_state().unwrap(), 59).unwrap();
        for n in 1..60 {
            let a = model.lift(&reference.states[n]).unwrap();
            let b = model.lift(&pred.states[n]).unwrap();
            for i in 0..4 {
                assert!((errs.global[n - 1][i] - (a[i] - b[i])).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn jacobi_at_l1_matches_potential_terms() {
        let x = l1_point(EM_MU).unwrap();
        let s = [x, 0.0, 0.0, 0.0, 0.0, 0.0];
        let c = jacobi_constant(&s, EM_MU).unwrap();
        let oracle = x * x + 2.0 * (1.0 - EM_MU) / (x + EM_MU) + 2.0 * EM_MU / (1.0 - EM_MU - x);
        assert!((c - oracle).abs() < 1e-14);
        assert!(cr3bp_accel(&s, EM_MU).unwrap().iter().all(|a| a.abs() < 1e-10));
    }

    #[test]
    fn velocity_reduces_jacobi_by_v_squared() {
        let base = [0.8, 0.05, 0.0, 0.0, 0.0, 0.0];
        let moving = [0.8, 0.05, 0.0, 0.1, -0.2, 0.0];
        let d = jacobi_constant(&base, EM_MU).unwrap() - jacobi_constant(&moving, EM_MU).unwrap();
        assert!((d - 0.05).abs() < 1e-15);
    }

    #[test]
    fn jacobi_is_symmetric_in_y() {
        let a = [0.85, 0.02, 0.0, 0.03, -0.2, 0.0];
        let b = [0.85, -0.02, 0.0, 0.03, 0.2, 0.0];
        assert_eq!(jacobi_constant(&a, EM_MU).unwrap(), jacobi_constant(&b, EM_MU).unwrap());
    }

    #[test]
    fn jacobi_conserved_along_reference() {
        let p = Cr3bpParams::earth_moon();
        let ic = make_cr3bp_ic(&p, 1.03).unwrap();
        let dt = p.hours_to_nondim(90.0) / 1000.0;
        let t = propagate(&ic, &cr3bp_derivative(p.mu_frac), dt, 1000).unwrap();
        let cmp = jacobi_comparison(&t, &t, p.mu_frac).unwrap();
        assert_eq!(cmp.max_relative_error, 0.0);
        assert!(cmp.reference_drift < 1e-6, "{}", cmp.reference_drift);
    }

    #[test]
    fn constant_jacobi_series_is_flat() {
        let s = vec![0.85, 0.0, 0.0, 0.0, 0.1, 0.0];
        let t = Trajectory::new(vec![0.0, 1.0, 2.0], vec![s.clone(), s.clone(), s], UnitSystem::NondimCr3bp).unwrap();
        let series = jacobi_series(&t, EM_MU).unwrap();
        assert!(series.iter().all(|c| *c == series[0]));
    }
}
