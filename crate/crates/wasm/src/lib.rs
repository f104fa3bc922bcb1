//! Browser bindings: two-body and CR3BP propagation with their invariants, and
//! a small Koopman model trained in the page.
//!
//! Trajectories are returned as flat `[x0, y0, x1, y1, ...]` arrays.

use orbkoop::cli::{evaluate, Scenario};
use orbkoop::datagen::{generate_2bp_dataset, TwoBodyDataConfig};
use orbkoop::dynamics::{
    cr3bp_derivative, make_2bp_ic, make_cr3bp_ic, propagate, two_body_derivative, Body, Cr3bpParams,
    OrbitKind, OrbitSpec,
};
use orbkoop::koopman::{train, KoopmanModel, LossWeights, TrainConfig};
use orbkoop::metrics::{circular_invariants, jacobi_series};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn js_err(e: orbkoop::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn parse_body(name: &str) -> Result<Body, JsError> {
    match name {
        "earth" => Ok(Body::Earth),
        "moon" => Ok(Body::Moon),
        "jupiter" => Ok(Body::Jupiter),
        other => Err(JsError::new(&format!("unknown body {other:?}"))),
    }
}

fn xy(states: &[Vec<f64>]) -> Vec<f64> {
    states.iter().flat_map(|s| [s[0], s[1]]).collect()
}

/// Result of a nonlinear propagation: planar path plus a JSON metric summary.
#[wasm_bindgen]
pub struct Propagation {
    path: Vec<f64>,
    summary: String,
}

#[wasm_bindgen]
impl Propagation {
    pub fn path(&self) -> Vec<f64> {
        self.path.clone()
    }

    pub fn summary(&self) -> String {
        self.summary.clone()
    }
}

/// One orbit about `body` in km, 1000 samples per period.
#[wasm_bindgen]
pub fn two_body_orbit(
    body: &str,
    altitude_km: f64,
    eccentricity: f64,
    perturbed: bool,
    periods: u32,
) -> Result<Propagation, JsError> {
    let mut params = parse_body(body)?.params();
    let kind = match (perturbed, eccentricity > 0.0) {
        (true, _) => OrbitKind::PerturbedCircular,
        (false, true) => OrbitKind::Elliptical,
        (false, false) => OrbitKind::Circular,
    };
    if perturbed {
        params.srp = Some(Default::default());
    }
    let orbit = OrbitSpec::from_perigee(kind, params.body_radius + altitude_km, eccentricity).map_err(js_err)?;
    let ic = make_2bp_ic(&orbit, &params).map_err(js_err)?;
    let steps = 1000 * periods.max(1) as usize;
    let t = propagate(&ic, &two_body_derivative(params, perturbed), orbit.period(&params) / 1000.0, steps)
        .map_err(js_err)?;
    let inv = circular_invariants(&t).map_err(js_err)?;
    let summary = json!({
        "period_s": orbit.period(&params),
        "mean_r_km": inv.mean_r,
        "max_xi_r": inv.max_xi_r,
        "max_xi_v": inv.max_xi_v,
        "max_xi_lz": inv.max_xi_lz,
        "max_rv": inv.max_rv,
        "body_radius_km": params.body_radius,
    });
    Ok(Propagation { path: xy(&t.states), summary: summary.to_string() })
}

/// Earth-Moon trajectory near L1 in the rotating frame, nondimensional.
#[wasm_bindgen]
pub fn cr3bp_orbit(x_multiplier: f64, hours: f64) -> Result<Propagation, JsError> {
    let p = Cr3bpParams::earth_moon();
    let ic = make_cr3bp_ic(&p, x_multiplier).map_err(js_err)?;
    let t = propagate(&ic, &cr3bp_derivative(p.mu_frac), p.hours_to_nondim(hours) / 1000.0, 1000)
        .map_err(js_err)?;
    let c = jacobi_series(&t, p.mu_frac).map_err(js_err)?;
    let drift = c.iter().map(|v| ((v - c[0]) / c[0]).abs()).fold(0.0, f64::max);
    let summary = json!({ "jacobi": c[0], "jacobi_drift": drift, "l1_x": ic[0] / x_multiplier });
    Ok(Propagation { path: xy(&t.states), summary: summary.to_string() })
}

fn circular_scenario(body: &str, altitude_km: f64, periods: u32) -> Result<Scenario, JsError> {
    Ok(Scenario::TwoBody {
        name: "demo".into(),
        body: parse_body(body)?,
        altitude_km,
        eccentricity: 0.0,
        perturbed: false,
        periods: periods.max(1) as usize,
    })
}

/// A small circular-orbit Koopman model trained in the browser.
#[wasm_bindgen]
pub struct KoopmanDemo {
    model: KoopmanModel,
    final_loss: f64,
}

#[wasm_bindgen]
impl KoopmanDemo {
    /// Trains on `n_orbits` random circular Earth orbits.
    #[wasm_bindgen(constructor)]
    pub fn new(n_orbits: usize, epochs: usize, seed: u64) -> Result<KoopmanDemo, JsError> {
        let data = TwoBodyDataConfig { n_ic: n_orbits, dp: 200, alpha: 10, seed, ..Default::default() };
        let ds = generate_2bp_dataset(&data).map_err(js_err)?;
        let cfg = TrainConfig {
            epochs,
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            alpha: 10,
            hidden_layers: 2,
            neurons_per_layer: 12,
            lifted_size: 4,
            seed,
            loss: LossWeights { gamma: 0.8, beta: 1.0, lambda1: 0.0, lambda2: 0.0, lambda_rv: 1e-3 },
            rcond: orbkoop::linalg::DEFAULT_RCOND,
        };
        let out = train(&ds, &cfg).map_err(js_err)?;
        let final_loss = out.history.last().map(|r| r.loss.total).unwrap_or(f64::NAN);
        Ok(KoopmanDemo { model: out.model, final_loss })
    }

    pub fn final_loss(&self) -> f64 {
        self.final_loss
    }

    /// Corrected rollout next to the nonlinear reference, in canonical units:
    /// `[pred_x0, pred_y0, ..., ref_x0, ref_y0, ...]`.
    pub fn predict(&self, body: &str, altitude_km: f64, periods: u32) -> Result<Vec<f64>, JsError> {
        let scn = circular_scenario(body, altitude_km, periods)?;
        let (pr, _) = evaluate(&self.model, &scn, &Cr3bpParams::earth_moon(), None).map_err(js_err)?;
        let mut out = xy(&pr.predicted.states);
        out.extend(xy(&pr.reference.states));
        Ok(out)
    }

    /// JSON summary of the rollout errors for the same scenario as `predict`.
    pub fn errors(&self, body: &str, altitude_km: f64, periods: u32) -> Result<String, JsError> {
        let scn = circular_scenario(body, altitude_km, periods)?;
        let (_, rep) = evaluate(&self.model, &scn, &Cr3bpParams::earth_moon(), None).map_err(js_err)?;
        let inv = rep.invariants.unwrap_or_else(|| unreachable!("two-body scenarios report invariants"));
        Ok(json!({
            "max_global_position_pct": rep.errors.max_global_position_pct,
            "max_local_position_pct": rep.errors.max_local_position_pct,
            "max_xi_r": inv.max_xi_r,
            "max_rv": inv.max_rv,
        })
        .to_string())
    }
}
