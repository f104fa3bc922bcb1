//! Nonlinear reference dynamics: planar two-body motion (optionally with J2 and
//! solar radiation pressure), the circular restricted three-body problem, a
//! fixed-step RK4 integrator and initial-condition construction.
//!
//! Conventions: `μ > 0` and `r̈ = −μ r/|r|³`. Two-body states are
//! `[x, y, ẋ, ẏ]` in km and km/s; CR3BP states are
//! `[x, y, z, ẋ, ẏ, ż]` in the nondimensional rotating frame.

use std::f64::consts::PI;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::datagen::Trajectory;
use crate::error::{Error, Result};

/// Universal gravitational constant in km³/(kg·s²).
pub const GRAVITATIONAL_CONSTANT: f64 = 6.674e-20;

/// Unit system a state vector is expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnitSystem {
    /// km and km/s.
    PhysicalKmS,
    /// Per-orbit canonical units: distance unit = semi-major axis, μ = 1.
    Canonical2bp,
    /// Earth–Moon rotating frame scaled by L*, T*.
    NondimCr3bp,
    /// Synthetic systems with no physical interpretation.
    Dimensionless,
}

impl UnitSystem {
    /// Required state length, if the unit system pins one.
    pub fn state_len(self) -> Option<usize> {
        match self {
            UnitSystem::PhysicalKmS | UnitSystem::Canonical2bp => Some(4),
            UnitSystem::NondimCr3bp => Some(6),
            UnitSystem::Dimensionless => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            UnitSystem::PhysicalKmS => "physical-km-s",
            UnitSystem::Canonical2bp => "canonical-2bp",
            UnitSystem::NondimCr3bp => "nondim-cr3bp",
            UnitSystem::Dimensionless => "dimensionless",
        }
    }
}

impl std::fmt::Display for UnitSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An orbital state tagged with its unit system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    components: Vec<f64>,
    units: UnitSystem,
}

impl StateVector {
    pub fn new(components: Vec<f64>, units: UnitSystem) -> Result<Self> {
        if let Some(len) = units.state_len() {
            if components.len() != len {
                return Err(Error::Shape(format!(
                    "{units} state needs {len} components, got {}",
                    components.len()
                )));
            }
        }
        if components.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numerical(format!(
                "state {components:?} has non-finite components"
            )));
        }
        Ok(StateVector { components, units })
    }

    pub fn units(&self) -> UnitSystem {
        self.units
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn into_components(self) -> Vec<f64> {
        self.components
    }
}

impl Deref for StateVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.components
    }
}

/// Cannonball solar radiation pressure model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Srp {
    /// Solar pressure at 1 AU, N/m².
    pub pressure: f64,
    /// Reflectivity coefficient C_R.
    pub reflectivity: f64,
    /// Area-to-mass ratio, m²/kg.
    pub area_to_mass: f64,
    /// Unit vector from the central body towards the Sun.
    pub sun_dir: [f64; 2],
}

impl Default for Srp {
    fn default() -> Self {
        Srp {
            pressure: 4.56e-6,
            reflectivity: 1.3,
            area_to_mass: 0.01,
            sun_dir: [-1.0, 0.0],
        }
    }
}

impl Srp {
    /// Acceleration in km/s², pointing away from the Sun.
    pub fn acceleration(&self) -> [f64; 2] {
        // N/m² · m²/kg = m/s²
        let mag = self.pressure * self.reflectivity * self.area_to_mass / 1000.0;
        [-mag * self.sun_dir[0], -mag * self.sun_dir[1]]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GravParams {
    /// Gravitational parameter of the central body, km³/s².
    pub mu: f64,
    /// Equatorial radius, km.
    pub body_radius: f64,
    pub j2: f64,
    #[serde(default)]
    pub srp: Option<Srp>,
    /// Satellite mass added to the central mass in μ; zero by default.
    #[serde(default)]
    pub satellite_mass_kg: f64,
}

impl GravParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::Config(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.body_radius > 0.0 && self.body_radius.is_finite()) {
            return Err(Error::Config(format!(
                "body radius must be positive, got {}",
                self.body_radius
            )));
        }
        if self.satellite_mass_kg < 0.0 {
            return Err(Error::Config("satellite mass must be nonnegative".into()));
        }
        if let Some(srp) = &self.srp {
            let n = srp.sun_dir[0].hypot(srp.sun_dir[1]);
            if (n - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!("SRP sun direction has norm {n}, expected 1")));
            }
        }
        Ok(())
    }

    /// μ including the satellite mass.
    pub fn effective_mu(&self) -> f64 {
        self.mu + GRAVITATIONAL_CONSTANT * self.satellite_mass_kg
    }

    pub fn with_srp(mut self, srp: Srp) -> Self {
        self.srp = Some(srp);
        self
    }
}

/// Central bodies used by the data generator and evaluation scenarios.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Body {
    Earth,
    Moon,
    Jupiter,
}

impl Body {
    pub fn params(self) -> GravParams {
        let (mu, body_radius, j2) = match self {
            Body::Earth => (398_600.4418, 6378.14, 1.08263e-3),
            Body::Moon => (4902.800066, 1737.4, 2.0330e-4),
            Body::Jupiter => (126_686_534.0, 71_492.0, 1.4736e-2),
        };
        GravParams {
            mu,
            body_radius,
            j2,
            srp: None,
            satellite_mass_kg: 0.0,
        }
    }
}

/// Nondimensionalization of the Earth–Moon style CR3BP.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cr3bpParams {
    /// Total mass M*, kg.
    pub m_star: f64,
    /// Primary separation L*, km.
    pub l_star: f64,
    /// Time unit T* = sqrt(L*³ / (G·M*)), s.
    pub t_star: f64,
    /// Mass fraction μ of the secondary.
    pub mu_frac: f64,
}

impl Cr3bpParams {
    pub fn new(m_star: f64, l_star: f64, mu_frac: f64) -> Result<Self> {
        if !(mu_frac > 0.0 && mu_frac < 0.5) {
            return Err(Error::Domain(format!("mass fraction must lie in (0, 0.5), got {mu_frac}")));
        }
        if !(m_star > 0.0 && l_star > 0.0) {
            return Err(Error::Domain("M* and L* must be positive".into()));
        }
        let t_star = (l_star.powi(3) / (GRAVITATIONAL_CONSTANT * m_star)).sqrt();
        Ok(Cr3bpParams {
            m_star,
            l_star,
            t_star,
            mu_frac,
        })
    }

    pub fn earth_moon() -> Self {
        Cr3bpParams::new(5.9722e24 + 7.346e22, 384_400.0, 0.012150585)
            .expect("Earth-Moon constants are valid")
    }

    /// Converts a duration in hours to nondimensional time.
    pub fn hours_to_nondim(&self, hours: f64) -> f64 {
        hours * 3600.0 / self.t_star
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrbitKind {
    Circular,
    Elliptical,
    PerturbedCircular,
}

impl OrbitKind {
    pub fn perturbed(self) -> bool {
        self == OrbitKind::PerturbedCircular
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitSpec {
    pub kind: OrbitKind,
    /// km
    pub perigee_radius: f64,
    pub eccentricity: f64,
    /// km
    pub semi_major_axis: f64,
}

impl OrbitSpec {
    pub fn from_perigee(kind: OrbitKind, perigee_radius: f64, eccentricity: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&eccentricity) {
            return Err(Error::InvalidOrbit(format!(
                "eccentricity must lie in [0, 1), got {eccentricity}"
            )));
        }
        if kind != OrbitKind::Elliptical && eccentricity != 0.0 {
            return Err(Error::InvalidOrbit(format!(
                "{kind:?} orbits need zero eccentricity, got {eccentricity}"
            )));
        }
        Ok(OrbitSpec {
            kind,
            perigee_radius,
            eccentricity,
            semi_major_axis: perigee_radius / (1.0 - eccentricity),
        })
    }

    pub fn validate(&self, params: &GravParams) -> Result<()> {
        if self.perigee_radius <= params.body_radius {
            return Err(Error::InvalidOrbit(format!(
                "perigee radius {} km is inside the body (radius {} km)",
                self.perigee_radius, params.body_radius
            )));
        }
        let a = self.perigee_radius / (1.0 - self.eccentricity);
        if (a - self.semi_major_axis).abs() > 1e-9 * a {
            return Err(Error::InvalidOrbit("semi-major axis inconsistent with r_p and e".into()));
        }
        Ok(())
    }

    pub fn period(&self, params: &GravParams) -> f64 {
        orbital_period(self.semi_major_axis, params.effective_mu())
    }
}

/// Keplerian period `2π·sqrt(a³/μ)`.
pub fn orbital_period(semi_major_axis: f64, mu: f64) -> f64 {
    2.0 * PI * (semi_major_axis.powi(3) / mu).sqrt()
}

/// Planar two-body acceleration, km/s².
pub fn two_body_accel(
    state: &[f64],
    params: &GravParams,
    include_perturbations: bool,
) -> Result<[f64; 2]> {
    let (x, y) = (state[0], state[1]);
    let r2 = x * x + y * y;
    if r2 == 0.0 {
        return Err(Error::Singularity("two-body state at the origin".into()));
    }
    let r = r2.sqrt();
    let mu = params.effective_mu();
    let k = -mu / (r2 * r);
    let mut acc = [k * x, k * y];
    if include_perturbations {
        let r5 = r2 * r2 * r;
        let kj2 = -1.5 * params.j2 * mu * params.body_radius.powi(2) / r5;
        acc[0] += kj2 * x;
        acc[1] += kj2 * y;
        if let Some(srp) = &params.srp {
            let a = srp.acceleration();
            acc[0] += a[0];
            acc[1] += a[1];
        }
    }
    Ok(acc)
}

/// Distances to the primary and secondary of the CR3BP.
pub fn cr3bp_distances(state: &[f64], mu_frac: f64) -> (f64, f64) {
    let (x, y, z) = (state[0], state[1], state[2]);
    let d = ((x + mu_frac).powi(2) + y * y + z * z).sqrt();
    let r = ((x - 1.0 + mu_frac).powi(2) + y * y + z * z).sqrt();
    (d, r)
}

/// CR3BP acceleration `(ẍ, ÿ, z̈)` in the rotating frame.
pub fn cr3bp_accel(state: &[f64], mu_frac: f64) -> Result<[f64; 3]> {
    let (x, y, z, vx, vy) = (state[0], state[1], state[2], state[3], state[4]);
    let (d, r) = cr3bp_distances(state, mu_frac);
    if d == 0.0 || r == 0.0 {
        return Err(Error::Singularity(format!(
            "CR3BP state coincides with a primary (d = {d}, r = {r})"
        )));
    }
    let d3 = d * d * d;
    let r3 = r * r * r;
    let m1 = 1.0 - mu_frac;
    Ok([
        x + 2.0 * vy - m1 * (x + mu_frac) / d3 - mu_frac * (x - 1.0 + mu_frac) / r3,
        y - 2.0 * vx - m1 * y / d3 - mu_frac * y / r3,
        -m1 * z / d3 - mu_frac * z / r3,
    ])
}

/// State derivative of the planar two-body problem.
pub fn two_body_derivative(
    params: GravParams,
    include_perturbations: bool,
) -> impl Fn(&[f64]) -> Result<Vec<f64>> {
    move |s: &[f64]| {
        let a = two_body_accel(s, &params, include_perturbations)?;
        Ok(vec![s[2], s[3], a[0], a[1]])
    }
}

/// State derivative of the CR3BP.
pub fn cr3bp_derivative(mu_frac: f64) -> impl Fn(&[f64]) -> Result<Vec<f64>> {
    move |s: &[f64]| {
        let a = cr3bp_accel(s, mu_frac)?;
        Ok(vec![s[3], s[4], s[5], a[0], a[1], a[2]])
    }
}

/// One classical Runge–Kutta step of an autonomous system.
pub fn rk4_step<F>(derivative: &F, state: &[f64], dt: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + ?Sized,
{
    let check = |v: Vec<f64>, stage: usize| {
        if v.iter().all(|c| c.is_finite()) {
            Ok(v)
        } else {
            Err(Error::Propagation { stage })
        }
    };
    let offset = |k: &[f64], h: f64| -> Vec<f64> {
        state.iter().zip(k).map(|(s, k)| s + h * k).collect()
    };
    let k1 = check(derivative(state)?, 1)?;
    let k2 = check(derivative(&offset(&k1, 0.5 * dt))?, 2)?;
    let k3 = check(derivative(&offset(&k2, 0.5 * dt))?, 3)?;
    let k4 = check(derivative(&offset(&k3, dt))?, 4)?;
    let next = (0..state.len())
        .map(|i| state[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    check(next, 5)
}

/// Integrates `n_steps` RK4 steps from `ic`, returning `n_steps + 1` states.
pub fn propagate<F>(ic: &StateVector, derivative: &F, dt: f64, n_steps: usize) -> Result<Trajectory>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + ?Sized,
{
    if n_steps == 0 {
        return Err(Error::Config("propagate needs at least one step".into()));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(ic.components().to_vec());
    for k in 0..n_steps {
        let next = rk4_step(derivative, &states[k], dt)?;
        states.push(next);
    }
    let times = (0..=n_steps).map(|k| k as f64 * dt).collect();
    Trajectory::new(times, states, ic.units())
}

/// Periapsis initial condition `[r_p, 0, 0, sqrt(μ(2/r_p − 1/a))]`.
pub fn make_2bp_ic(spec: &OrbitSpec, params: &GravParams) -> Result<StateVector> {
    params.validate()?;
    spec.validate(params)?;
    let energy_term = 2.0 / spec.perigee_radius - 1.0 / spec.semi_major_axis;
    if energy_term <= 0.0 {
        return Err(Error::InvalidOrbit(format!(
            "2/r_p - 1/a = {energy_term} is not positive"
        )));
    }
    let vy = (params.effective_mu() * energy_term).sqrt();
    StateVector::new(vec![spec.perigee_radius, 0.0, 0.0, vy], UnitSystem::PhysicalKmS)
}

/// Collinear-point equation whose root between the primaries is L1.
pub fn l1_residual(x: f64, mu_frac: f64) -> f64 {
    let a = x + mu_frac;
    let b = x - 1.0 + mu_frac;
    -(1.0 - mu_frac) / (a * a.abs()) - mu_frac / (b * b.abs()) + x
}

/// x-coordinate of L1, by bisection on `(−μ, 1 − μ)`.
pub fn l1_point(mu_frac: f64) -> Result<f64> {
    if !(mu_frac > 0.0 && mu_frac < 0.5) {
        return Err(Error::Domain(format!("mass fraction must lie in (0, 0.5), got {mu_frac}")));
    }
    let mut lo = -mu_frac + 1e-9;
    let mut hi = 1.0 - mu_frac - 1e-9;
    let (flo, fhi) = (l1_residual(lo, mu_frac), l1_residual(hi, mu_frac));
    if flo.signum() == fhi.signum() {
        return Err(Error::Solver(format!(
            "L1 root not bracketed: f({lo}) = {flo}, f({hi}) = {fhi}"
        )));
    }
    let rising = flo < 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = l1_residual(mid, mu_frac);
        if fm == 0.0 {
            return Ok(mid);
        }
        if (fm < 0.0) == rising {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Linearized in-plane oscillation about L1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct L1Oscillation {
    pub x_l1: f64,
    /// In-plane (center) frequency ω.
    pub frequency: f64,
    /// Amplitude ratio: `x = x_L1 + A cos ωt`, `y = −k·A sin ωt`.
    pub k: f64,
}

impl L1Oscillation {
    pub fn new(mu_frac: f64) -> Result<Self> {
        let x_l1 = l1_point(mu_frac)?;
        let c2 = (1.0 - mu_frac) / (x_l1 + mu_frac).abs().powi(3)
            + mu_frac / (x_l1 - 1.0 + mu_frac).abs().powi(3);
        let uxx = 1.0 + 2.0 * c2;
        let uyy = 1.0 - c2;
        let b = 4.0 - uxx - uyy;
        let omega2 = 0.5 * (b + (b * b - 4.0 * uxx * uyy).sqrt());
        let frequency = omega2.sqrt();
        let k = (omega2 + uxx) / (2.0 * frequency);
        Ok(L1Oscillation { x_l1, frequency, k })
    }
}

/// Planar CR3BP initial condition near L1.
///
/// `x₀ = x_L1·multiplier`, `y₀ = 1/L*` (L* in km), and the velocity places
/// the state on the linearized center eigenspace: `ẋ₀ = 0`,
/// `ẏ₀ = −k·ω·(x₀ − x_L1)`.
pub fn make_cr3bp_ic(params: &Cr3bpParams, x_multiplier: f64) -> Result<StateVector> {
    if !(1.0..=1.05).contains(&x_multiplier) {
        return Err(Error::Domain(format!(
            "x multiplier must lie in [1, 1.05], got {x_multiplier}"
        )));
    }
    let osc = L1Oscillation::new(params.mu_frac)?;
    let x0 = osc.x_l1 * x_multiplier;
    let vy0 = -osc.k * osc.frequency * (x0 - osc.x_l1);
    StateVector::new(
        vec![x0, 1.0 / params.l_star, 0.0, 0.0, vy0, 0.0],
        UnitSystem::NondimCr3bp,
    )
}
