//! Deep-EDMD: lifting with a learned encoder, per-batch Koopman matrices,
//! the multi-term training loss, the training loop and corrected rollouts.
//!
//! The lift is `Φ(x) = [x; φ(x)]` with `φ` the encoder output. The top `n`
//! rows of `K` are `[A | B]`, so one corrected step is
//! `x ← P·K·Φ(x) = A·x + B·φ(x)`, followed by re-lifting the new state.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{derive_seed, Dataset, Trajectory};
use crate::dynamics::{StateVector, UnitSystem};
use crate::error::{Error, Result};
use crate::linalg::{lstsq_k, LstsqAccumulator, Matrix, DEFAULT_RCOND};
use crate::neuralnet::{adam_step, AdamState, Gradients, Network};

pub const MODEL_FORMAT: &str = "orbkoop-koopman-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;
/// Rollouts stop once any state component exceeds this magnitude.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub gamma: f64,
    pub beta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    #[serde(default)]
    pub lambda_rv: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.gamma, self.beta, self.lambda1, self.lambda2, self.lambda_rv];
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config(format!("loss weights must be nonnegative: {self:?}")));
        }
        Ok(())
    }
}

fn default_rcond() -> f64 {
    DEFAULT_RCOND
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub alpha: usize,
    pub hidden_layers: usize,
    pub neurons_per_layer: usize,
    /// Number of learned observables N.
    pub lifted_size: usize,
    #[serde(default)]
    pub seed: u64,
    pub loss: LossWeights,
    #[serde(default = "default_rcond")]
    pub rcond: f64,
}

impl TrainConfig {
    /// Two-body hyperparameters: 3×25 SELU encoder, N = 6.
    pub fn full_2bp() -> Self {
        TrainConfig {
            epochs: 80_000,
            batch_size: 128,
            learning_rate: 1e-4,
            weight_decay: 1e-5,
            alpha: 25,
            hidden_layers: 3,
            neurons_per_layer: 25,
            lifted_size: 6,
            seed: 0,
            loss: LossWeights {
                gamma: 0.8,
                beta: 1.0,
                lambda1: 0.04,
                lambda2: 0.01,
                lambda_rv: 0.001,
            },
            rcond: DEFAULT_RCOND,
        }
    }

    /// CR3BP hyperparameters: 13×105 SELU encoder, N = 100.
    pub fn full_cr3bp() -> Self {
        TrainConfig {
            epochs: 35_000,
            batch_size: 16,
            learning_rate: 1e-6,
            weight_decay: 1e-5,
            alpha: 25,
            hidden_layers: 13,
            neurons_per_layer: 105,
            lifted_size: 100,
            seed: 0,
            loss: LossWeights {
                gamma: 2.0,
                beta: 1.0,
                lambda1: 0.004,
                lambda2: 0.001,
                lambda_rv: 0.0,
            },
            rcond: DEFAULT_RCOND,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.alpha == 0 {
            return Err(Error::Config("epochs, batch_size and alpha must be positive".into()));
        }
        if self.lifted_size > 0 && (self.hidden_layers == 0) != (self.neurons_per_layer == 0) {
            return Err(Error::Config(
                "hidden_layers and neurons_per_layer must both be zero or both positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("learning_rate must be positive, weight_decay nonnegative".into()));
        }
        if !(self.rcond > 0.0 && self.rcond < 1.0) {
            return Err(Error::Config(format!("rcond must lie in (0, 1), got {}", self.rcond)));
        }
        self.loss.validate()
    }

    /// Encoder widths `[n, h, ..., h, N]`.
    pub fn encoder_dims(&self, n: usize) -> Vec<usize> {
        let mut dims = vec![n];
        dims.extend(std::iter::repeat_n(self.neurons_per_layer, self.hidden_layers));
        dims.push(self.lifted_size);
        dims
    }
}

/// Which physics-informed terms apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProblemKind {
    TwoBody,
    Cr3bp,
    Generic,
}

impl ProblemKind {
    pub fn of(units: UnitSystem) -> Self {
        match units {
            UnitSystem::PhysicalKmS | UnitSystem::Canonical2bp => ProblemKind::TwoBody,
            UnitSystem::NondimCr3bp => ProblemKind::Cr3bp,
            UnitSystem::Dimensionless => ProblemKind::Generic,
        }
    }

    /// Number of position components in the state.
    pub fn position_dim(self, n: usize) -> usize {
        match self {
            ProblemKind::TwoBody => 2,
            ProblemKind::Cr3bp => 3,
            ProblemKind::Generic => n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KoopmanModel {
    /// Absent when N = 0 (plain DMD).
    pub encoder: Option<Network>,
    /// `(n+N)×(n+N)`
    pub k: Matrix,
    pub n: usize,
    pub lifted_size: usize,
    pub unit_system: UnitSystem,
    pub dt_scaled: f64,
    #[serde(default)]
    pub config: Option<TrainConfig>,
}

impl KoopmanModel {
    pub fn new(
        encoder: Option<Network>,
        k: Matrix,
        n: usize,
        unit_system: UnitSystem,
        dt_scaled: f64,
    ) -> Result<Self> {
        let lifted_size = match &encoder {
            Some(net) => {
                if net.input_dim() != n {
                    return Err(Error::Shape(format!(
                        "encoder takes {} inputs, state has {n}",
                        net.input_dim()
                    )));
                }
                net.output_dim()
            }
            None => 0,
        };
        let side = n + lifted_size;
        if k.shape() != (side, side) {
            return Err(Error::Shape(format!("K is {:?}, expected {side}x{side}", k.shape())));
        }
        Ok(KoopmanModel {
            encoder,
            k,
            n,
            lifted_size,
            unit_system,
            dt_scaled,
            config: None,
        })
    }

    pub fn lifted_dim(&self) -> usize {
        self.n + self.lifted_size
    }

    /// `P = [Iₙ 0]`.
    pub fn projection(&self) -> Matrix {
        Matrix::from_fn(self.n, self.lifted_dim(), |i, j| if i == j { 1.0 } else { 0.0 })
    }

    /// Lifts the columns of `batch` (`n×m`) to `(n+N)×m`.
    pub fn lift_batch(&self, batch: &Matrix) -> Result<Matrix> {
        lift_with(self.encoder.as_ref(), batch, self.n)
    }

    pub fn lift(&self, state: &[f64]) -> Result<Vec<f64>> {
        let col = Matrix::from_vec(state.len(), 1, state.to_vec())?;
        Ok(self.lift_batch(&col)?.into_vec())
    }

    /// `K·Φ(x)` for one state.
    pub fn advance_lifted(&self, state: &[f64]) -> Result<Vec<f64>> {
        let phi = Matrix::from_vec(self.lifted_dim(), 1, self.lift(state)?)?;
        Ok(self.k.matmul(&phi)?.into_vec())
    }

    /// One corrected step `P·K·Φ(x)`.
    pub fn step(&self, state: &[f64]) -> Result<Vec<f64>> {
        let mut next = self.advance_lifted(state)?;
        next.truncate(self.n);
        Ok(next)
    }

    /// Corrected linear rollout: lift, apply K once, project, repeat.
    pub fn predict(&self, ic: &StateVector, n_steps: usize) -> Result<Trajectory> {
        if ic.len() != self.n {
            return Err(Error::Shape(format!("IC has {} components, model expects {}", ic.len(), self.n)));
        }
        if ic.units() != self.unit_system {
            return Err(Error::Units(format!(
                "IC is in {}, model was trained in {}",
                ic.units(),
                self.unit_system
            )));
        }
        let mut states = Vec::with_capacity(n_steps + 1);
        states.push(ic.components().to_vec());
        for step in 1..=n_steps {
            let next = self.step(&states[step - 1])?;
            if let Some(v) = next.iter().find(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
                return Err(Error::Divergence {
                    step,
                    reason: format!("state component {v} exceeds {DIVERGENCE_LIMIT:e}"),
                });
            }
            states.push(next);
        }
        let times = (0..=n_steps).map(|k| k as f64 * self.dt_scaled).collect();
        Trajectory::new(times, states, self.unit_system)
    }
}

fn lift_with(encoder: Option<&Network>, batch: &Matrix, n: usize) -> Result<Matrix> {
    if batch.rows() != n {
        return Err(Error::Shape(format!("expected {n}-row states, got {}", batch.rows())));
    }
    match encoder {
        Some(net) => Matrix::vstack(batch, &net.infer(batch)?),
        None => Ok(batch.clone()),
    }
}

/// `K = Φ(Y)·Φ(X)⁺` for column-aligned snapshot batches.
pub fn compute_k(model: &KoopmanModel, x: &Matrix, y: &Matrix, rcond: f64) -> Result<Matrix> {
    if x.shape() != y.shape() {
        return Err(Error::Shape(format!("X is {:?} but Y is {:?}", x.shape(), y.shape())));
    }
    lstsq_k(&model.lift_batch(x)?, &model.lift_batch(y)?, rcond)
}

/// Unweighted loss terms and the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub recon: f64,
    pub pred: f64,
    pub l1: f64,
    pub l2: f64,
    pub rv: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.total, self.recon, self.pred, self.l1, self.l2, self.rv]
            .iter()
            .all(|v| v.is_finite())
    }

    fn add_scaled(&mut self, o: &LossBreakdown, s: f64) {
        self.total += s * o.total;
        self.recon += s * o.recon;
        self.pred += s * o.pred;
        self.l1 += s * o.l1;
        self.l2 += s * o.l2;
        self.rv += s * o.rv;
    }
}

fn radial_velocity(col: &[f64]) -> f64 {
    col[0] * col[2] + col[1] * col[3]
}

/// Training loss on a batch of segments.
///
/// `segments[j]` holds state `j` of every segment as an `n×B` matrix, for
/// `j = 0..=α`. The rollout starts from `segments[0]`; `K` is treated as a
/// constant. Returns the loss terms and the encoder gradients (including the
/// L1/L2 terms on weights).
pub fn loss(
    encoder: Option<&Network>,
    k: &Matrix,
    segments: &[Matrix],
    weights: &LossWeights,
    problem: ProblemKind,
) -> Result<(LossBreakdown, Option<Gradients>)> {
    if segments.len() < 2 {
        return Err(Error::Shape("loss needs at least one rollout step".into()));
    }
    let alpha = segments.len() - 1;
    let (n, b) = segments[0].shape();
    let big_n = encoder.map_or(0, |e| e.output_dim());
    if k.shape() != (n + big_n, n + big_n) {
        return Err(Error::Shape(format!("K is {:?} for n = {n}, N = {big_n}", k.shape())));
    }
    if segments.iter().any(|s| s.shape() != (n, b)) {
        return Err(Error::Shape("segment matrices differ in shape".into()));
    }
    let use_rv = problem == ProblemKind::TwoBody && weights.lambda_rv != 0.0;
    let a = k.select_rows(0..n).select_columns(0..n);
    let bm = k.select_rows(0..n).select_columns(n..n + big_n);

    // Forward rollout.
    let mut z = segments[0].clone();
    let mut tapes = Vec::with_capacity(alpha);
    let mut preds = Vec::with_capacity(alpha);
    for _ in 0..alpha {
        let mut next = a.matmul(&z)?;
        if let Some(net) = encoder {
            let (phi, tape) = net.forward(&z)?;
            tapes.push(tape);
            next = next.add(&bm.matmul(&phi)?)?;
        }
        preds.push(next.clone());
        z = next;
    }

    let diffs: Vec<Matrix> = preds
        .iter()
        .zip(&segments[1..])
        .map(|(p, t)| p.sub(t))
        .collect::<Result<_>>()?;
    let sq = |m: &Matrix| m.as_slice().iter().map(|v| v * v).sum::<f64>();
    let recon = sq(&diffs[0]) / b as f64;
    let pred = diffs.iter().map(sq).sum::<f64>() / (b * alpha) as f64;
    let rv_vals: Vec<f64> = if problem == ProblemKind::TwoBody {
        (0..b).map(|j| radial_velocity(&preds[0].column(j))).collect()
    } else {
        Vec::new()
    };
    let rv = if rv_vals.is_empty() {
        0.0
    } else {
        rv_vals.iter().map(|v| v * v).sum::<f64>() / b as f64
    };
    let (l1, l2) = encoder.map_or((0.0, 0.0), |e| (e.weight_l1(), e.weight_sq()));
    let total = weights.gamma * pred
        + weights.beta * recon
        + weights.lambda1 * l1
        + weights.lambda2 * l2
        + if use_rv { weights.lambda_rv * rv } else { 0.0 };
    let breakdown = LossBreakdown {
        total,
        recon,
        pred,
        l1,
        l2,
        rv,
    };
    let Some(net) = encoder else {
        return Ok((breakdown, None));
    };

    // Backpropagation through time over the α-step rollout.
    let direct = |step: usize| -> Matrix {
        let mut g = diffs[step - 1].scale(2.0 * weights.gamma / (b * alpha) as f64);
        if step == 1 {
            let s = 2.0 * weights.beta / b as f64;
            for (gv, d) in g.as_mut_slice().iter_mut().zip(diffs[0].as_slice()) {
                *gv += s * d;
            }
            if use_rv {
                for (j, rvj) in rv_vals.iter().enumerate() {
                    let c = 2.0 * weights.lambda_rv * rvj / b as f64;
                    let p = &preds[0];
                    let (x, y, vx, vy) = (p[(0, j)], p[(1, j)], p[(2, j)], p[(3, j)]);
                    g[(0, j)] += c * vx;
                    g[(1, j)] += c * vy;
                    g[(2, j)] += c * x;
                    g[(3, j)] += c * y;
                }
            }
        }
        g
    };
    let mut grads = Gradients::zeros_like(net);
    let mut g = direct(alpha);
    for step in (1..=alpha).rev() {
        let tape = tapes.pop().expect("one tape per step");
        let (pg, gin) = net.backward(tape, &bm.t_matmul(&g)?)?;
        grads.accumulate(&pg);
        if step > 1 {
            g = direct(step - 1).add(&a.t_matmul(&g)?)?.add(&gin)?;
        }
    }
    net.add_regularization_grads(&mut grads, weights.lambda1, weights.lambda2);
    Ok((breakdown, Some(grads)))
}

/// Per-epoch mean loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

pub struct TrainOutcome {
    pub model: KoopmanModel,
    pub history: Vec<LossRecord>,
    /// K from the final mini-batch, kept for diagnostics.
    pub last_batch_k: Option<Matrix>,
}

/// Trailing moving average with the given window (`len − window + 1` values).
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || series.len() < window {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(series.len() - window + 1);
    let mut sum: f64 = series[..window].iter().sum();
    out.push(sum / window as f64);
    for i in window..series.len() {
        sum += series[i] - series[i - window];
        out.push(sum / window as f64);
    }
    out
}

/// Stacks the batch segments: `segments[j]` = state `j` of each draw.
fn gather_segments(ds: &Dataset, draws: &[(usize, usize)], alpha: usize) -> Result<Vec<Matrix>> {
    (0..=alpha)
        .map(|j| {
            let cols: Vec<Vec<f64>> = draws
                .iter()
                .map(|&(t, s)| ds.trajectories[t].states[s + j].clone())
                .collect();
            Matrix::from_columns(&cols)
        })
        .collect()
}

/// Solves the full-data EDMD problem for a fixed encoder.
pub fn full_data_k(encoder: Option<&Network>, ds: &Dataset, rcond: f64) -> Result<Matrix> {
    let dim = ds.n + encoder.map_or(0, |e| e.output_dim());
    let mut acc = LstsqAccumulator::new(dim, dim);
    for t in &ds.trajectories {
        let lifted = lift_with(encoder, &Matrix::from_columns(&t.states)?, ds.n)?;
        let m = t.len();
        acc.push(&lifted.select_columns(0..m - 1), &lifted.select_columns(1..m))?;
    }
    acc.solve(rcond)
}

/// Trains an encoder and Koopman matrix on `ds`.
///
/// Each epoch runs `ceil(n_traj / batch_size)` batches. A batch draws
/// `batch_size` (trajectory, start) pairs uniformly with replacement, lifts
/// every state of the resulting `α+1`-long segments, solves K on their
/// consecutive pairs, rolls out α corrected steps and takes one Adam step.
pub fn train(ds: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(ds, config, |_, _| {})
}

pub fn train_with_progress(
    ds: &Dataset,
    config: &TrainConfig,
    mut progress: impl FnMut(usize, &LossBreakdown),
) -> Result<TrainOutcome> {
    config.validate()?;
    ds.validate()?;
    if config.alpha != ds.alpha {
        return Err(Error::Config(format!(
            "training alpha {} does not match dataset alpha {}",
            config.alpha, ds.alpha
        )));
    }
    let len = ds.trajectory_len();
    if len < config.alpha + 2 {
        return Err(Error::Config(format!("trajectories of {len} samples are too short for alpha {}", config.alpha)));
    }
    let problem = ProblemKind::of(ds.unit_system);
    let mut encoder = if config.lifted_size > 0 {
        Some(Network::lecun(&config.encoder_dims(ds.n), derive_seed(config.seed, 0))?)
    } else {
        None
    };
    let mut adam = encoder
        .as_ref()
        .map(|e| AdamState::new(e, config.learning_rate, config.weight_decay));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1));
    let n_traj = ds.trajectories.len();
    let batches = n_traj.div_ceil(config.batch_size);
    let max_start = len - config.alpha - 1;
    let alpha = config.alpha;
    let mut history = Vec::with_capacity(config.epochs);
    let mut last_batch_k = None;

    for epoch in 0..config.epochs {
        let mut mean = LossBreakdown::default();
        for batch in 0..batches {
            let draws: Vec<(usize, usize)> = (0..config.batch_size)
                .map(|_| (rng.random_range(0..n_traj), rng.random_range(0..=max_start)))
                .collect();
            let segments = gather_segments(ds, &draws, alpha)?;
            let all = Matrix::hstack(&segments.iter().collect::<Vec<_>>())?;
            let lifted = lift_with(encoder.as_ref(), &all, ds.n)?;
            let bs = config.batch_size;
            let k = lstsq_k(
                &lifted.select_columns(0..alpha * bs),
                &lifted.select_columns(bs..(alpha + 1) * bs),
                config.rcond,
            )?;
            let (terms, grads) = loss(encoder.as_ref(), &k, &segments, &config.loss, problem)?;
            let grads_ok = grads.as_ref().is_none_or(|g| g.is_finite());
            if !terms.is_finite() || !grads_ok {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch,
                    terms: format!("{terms:?}"),
                });
            }
            if let (Some(net), Some(g), Some(st)) = (encoder.as_mut(), grads.as_ref(), adam.as_mut()) {
                adam_step(net, g, st)?;
            }
            mean.add_scaled(&terms, 1.0 / batches as f64);
            last_batch_k = Some(k);
        }
        progress(epoch, &mean);
        history.push(LossRecord { epoch, loss: mean });
    }

    let k = full_data_k(encoder.as_ref(), ds, config.rcond)?;
    if let Some(kb) = &last_batch_k {
        let rel = kb.sub(&k)?.frobenius_norm() / k.frobenius_norm().max(f64::MIN_POSITIVE);
        log::info!("last-batch K differs from full-data K by {:.3}% (Frobenius)", 100.0 * rel);
    }
    let mut model = KoopmanModel::new(encoder, k, ds.n, ds.unit_system, ds.dt_scaled)?;
    model.config = Some(config.clone());
    Ok(TrainOutcome {
        model,
        history,
        last_batch_k,
    })
}

#[derive(Serialize)]
struct ModelFileOut<'a> {
    format: &'static str,
    version: u32,
    model: &'a KoopmanModel,
}

#[derive(Deserialize)]
struct ModelHeader {
    format: String,
    version: u32,
}

#[derive(Deserialize)]
struct ModelFileIn {
    model: KoopmanModel,
}

pub fn save_model(model: &KoopmanModel, path: &Path) -> Result<()> {
    let text = serde_json::to_string(&ModelFileOut {
        format: MODEL_FORMAT,
        version: MODEL_FORMAT_VERSION,
        model,
    })
    .expect("model serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<KoopmanModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |message: String| Error::Corrupt {
        path: path.to_path_buf(),
        message,
    };
    let header: ModelHeader = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
    if header.format != MODEL_FORMAT {
        return Err(corrupt(format!("unknown format tag {:?}", header.format)));
    }
    if header.version != MODEL_FORMAT_VERSION {
        return Err(Error::Version {
            found: header.version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let file: ModelFileIn = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
    let m = file.model;
    let encoder = match m.encoder {
        Some(net) => Some(Network::new(net.layers().to_vec()).map_err(|e| corrupt(e.to_string()))?),
        None => None,
    };
    let mut model = KoopmanModel::new(encoder, m.k, m.n, m.unit_system, m.dt_scaled)
        .map_err(|e| corrupt(e.to_string()))?;
    if model.lifted_size != m.lifted_size {
        return Err(corrupt(format!(
            "metadata says N = {}, encoder emits {}",
            m.lifted_size, model.lifted_size
        )));
    }
    model.config = m.config;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_2bp_dataset, TwoBodyDataConfig};
    use crate::neuralnet::Layer;

    fn linear_dataset(a: &Matrix, n_traj: usize, len: usize, alpha: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trajectories = (0..n_traj)
            .map(|_| {
                let mut s = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let mut states = vec![s.clone()];
                for _ in 1..len {
                    s = vec![
                        a[(0, 0)] * s[0] + a[(0, 1)] * s[1],
                        a[(1, 0)] * s[0] + a[(1, 1)] * s[1],
                    ];
                    states.push(s.clone());
                }
                let times = (0..len).map(|k| k as f64 * 0.1).collect();
                Trajectory::new(times, states, UnitSystem::Dimensionless).unwrap()
            })
            .collect();
        Dataset {
            trajectories,
            dt_scaled: 0.1,
            alpha,
            n: 2,
            dp: len + alpha,
            unit_system: UnitSystem::Dimensionless,
            master_seed: 0,
            config: None,
        }
    }

    fn stable_a() -> Matrix {
        Matrix::from_rows(&[vec![0.9, 0.2], vec![-0.1, 0.8]]).unwrap()
    }

    fn tiny_config(lifted: usize) -> TrainConfig {
        TrainConfig {
            epochs: 5,
            batch_size: 8,
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            alpha: 4,
            hidden_layers: 2,
            neurons_per_layer: 8,
            lifted_size: lifted,
            seed: 3,
            loss: LossWeights {
                gamma: 0.8,
                beta: 1.0,
                lambda1: 1e-4,
                lambda2: 1e-4,
                lambda_rv: 1e-3,
            },
            rcond: DEFAULT_RCOND,
        }
    }

    fn toy_model(n: usize, big_n: usize, seed: u64) -> KoopmanModel {
        let enc = Network::lecun(&[n, 5, big_n], seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = Matrix::from_fn(n + big_n, n + big_n, |i, j| {
            let d = if i == j { 1.0 } else { 0.0 };
            d + 0.01 * rng.random_range(-1.0..1.0)
        });
        KoopmanModel::new(Some(enc), k, n, UnitSystem::Canonical2bp, 0.01).unwrap()
    }

    #[test]
    fn lift_keeps_state_and_has_right_size() {
        let m = toy_model(4, 6, 1);
        let x = [0.3, -1.2, 0.7, 0.05];
        let phi = m.lift(&x).unwrap();
        assert_eq!(phi.len(), 10);
        assert_eq!(&phi[..4], &x);
        let p = m.projection();
        let px = p.matmul(&Matrix::from_vec(10, 1, phi).unwrap()).unwrap();
        assert_eq!(px.as_slice(), &x);
    }

    #[test]
    fn zero_encoder_lifts_to_zero_padding() {
        let enc = Network::zeros(&[4, 3, 6]).unwrap();
        let m = KoopmanModel::new(Some(enc), Matrix::identity(10), 4, UnitSystem::Canonical2bp, 0.1).unwrap();
        assert_eq!(m.lift(&[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn compute_k_identity_on_span_and_shape() {
        let m = toy_model(4, 6, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Matrix::from_fn(4, 40, |_, _| rng.random_range(-1.0..1.0));
        let k = compute_k(&m, &x, &x, DEFAULT_RCOND).unwrap();
        assert_eq!(k.shape(), (10, 10));
        let phi = m.lift_batch(&x).unwrap();
        assert!(k.matmul(&phi).unwrap().sub(&phi).unwrap().max_abs() < 1e-9);
    }

    #[test]
    fn identity_lift_recovers_linear_system() {
        let a = stable_a();
        let ds = linear_dataset(&a, 1, 51, 1);
        let m = KoopmanModel::new(None, Matrix::identity(2), 2, UnitSystem::Dimensionless, 0.1).unwrap();
        let t = &ds.trajectories[0];
        let x = Matrix::from_columns(&t.states[..50]).unwrap();
        let y = Matrix::from_columns(&t.states[1..]).unwrap();
        let k = compute_k(&m, &x, &y, DEFAULT_RCOND).unwrap();
        assert!(k.sub(&a).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn predict_zero_steps_and_linear_closed_form() {
        let a = stable_a();
        let m = KoopmanModel::new(None, a.clone(), 2, UnitSystem::Dimensionless, 0.1).unwrap();
        let ic = StateVector::new(vec![1.0, -0.5], UnitSystem::Dimensionless).unwrap();
        let t0 = m.predict(&ic, 0).unwrap();
        assert_eq!(t0.states, vec![vec![1.0, -0.5]]);
        let t = m.predict(&ic, 30).unwrap();
        let mut power = Matrix::identity(2);
        for k in 0..=30 {
            let expect = power.matmul(&Matrix::from_vec(2, 1, vec![1.0, -0.5]).unwrap()).unwrap();
            for i in 0..2 {
                assert!((t.states[k][i] - expect.as_slice()[i]).abs() < 1e-12);
            }
            power = a.matmul(&power).unwrap();
        }
    }

    #[test]
    fn predict_applies_correction_every_step() {
        let m = toy_model(4, 3, 7);
        let ic = StateVector::new(vec![1.0, 0.0, 0.0, 1.0], UnitSystem::Canonical2bp).unwrap();
        let t = m.predict(&ic, 5).unwrap();
        for k in 0..5 {
            assert_eq!(t.states[k + 1], m.step(&t.states[k]).unwrap());
        }
    }

    #[test]
    fn predict_reports_divergence_step() {
        let k = Matrix::from_rows(&[vec![100.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let m = KoopmanModel::new(None, k, 2, UnitSystem::Dimensionless, 1.0).unwrap();
        let ic = StateVector::new(vec![1.0, 1.0], UnitSystem::Dimensionless).unwrap();
        match m.predict(&ic, 10) {
            Err(Error::Divergence { step, .. }) => assert_eq!(step, 4),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn predict_rejects_unit_mismatch() {
        let m = toy_model(4, 2, 1);
        let ic = StateVector::new(vec![7000.0, 0.0, 0.0, 7.5], UnitSystem::PhysicalKmS).unwrap();
        assert!(matches!(m.predict(&ic, 3), Err(Error::Units(_))));
    }

    /// Independent per-column evaluation of the loss terms.
    fn reference_terms(m: &KoopmanModel, segments: &[Matrix], w: &LossWeights) -> LossBreakdown {
        let (_, b) = segments[0].shape();
        let alpha = segments.len() - 1;
        let mut recon = 0.0;
        let mut pred = 0.0;
        let mut rv = 0.0;
        for j in 0..b {
            let mut z = segments[0].column(j);
            for step in 1..=alpha {
                z = m.step(&z).unwrap();
                let truth = segments[step].column(j);
                let e: f64 = z.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum();
                pred += e;
                if step == 1 {
                    recon += e;
                    rv += (z[0] * z[2] + z[1] * z[3]).powi(2);
                }
            }
        }
        let enc = m.encoder.as_ref().unwrap();
        let recon = recon / b as f64;
        let pred = pred / (b * alpha) as f64;
        let rv = rv / b as f64;
        let l1 = enc.weight_l1();
        let l2 = enc.weight_sq();
        LossBreakdown {
            total: w.gamma * pred + w.beta * recon + w.lambda1 * l1 + w.lambda2 * l2 + w.lambda_rv * rv,
            recon,
            pred,
            l1,
            l2,
            rv,
        }
    }

    fn random_segments(n: usize, b: usize, alpha: usize, seed: u64) -> Vec<Matrix> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..=alpha)
            .map(|_| Matrix::from_fn(n, b, |_, _| rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn loss_terms_decompose() {
        let m = toy_model(4, 6, 11);
        let segs = random_segments(4, 5, 3, 12);
        let w = tiny_config(6).loss;
        let (got, _) = loss(m.encoder.as_ref(), &m.k, &segs, &w, ProblemKind::TwoBody).unwrap();
        let want = reference_terms(&m, &segs, &w);
        for (a, b) in [
            (got.total, want.total),
            (got.recon, want.recon),
            (got.pred, want.pred),
            (got.l1, want.l1),
            (got.l2, want.l2),
            (got.rv, want.rv),
        ] {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn perfect_model_has_zero_data_loss() {
        let a = stable_a();
        let ds = linear_dataset(&a, 2, 12, 3);
        let m = KoopmanModel::new(None, a, 2, UnitSystem::Dimensionless, 0.1).unwrap();
        let segs = gather_segments(&ds, &[(0, 0), (1, 4)], 3).unwrap();
        let (terms, grads) = loss(None, &m.k, &segs, &tiny_config(0).loss, ProblemKind::Generic).unwrap();
        assert!(terms.recon < 1e-28 && terms.pred < 1e-28);
        assert!(grads.is_none());
    }

    #[test]
    fn zero_weights_have_zero_regularization() {
        let enc = Network::zeros(&[4, 5, 3]).unwrap();
        let segs = random_segments(4, 3, 2, 1);
        let (terms, _) = loss(Some(&enc), &Matrix::identity(7), &segs, &tiny_config(3).loss, ProblemKind::TwoBody).unwrap();
        assert_eq!((terms.l1, terms.l2), (0.0, 0.0));
    }

    #[test]
    fn exact_circular_prediction_has_tiny_rv_loss() {
        // Rotation by dθ is exact for a canonical circular orbit.
        let dth = 2.0 * std::f64::consts::PI / 1000.0;
        let (c, s) = (dth.cos(), dth.sin());
        let mut k = Matrix::zeros(4, 4);
        for (i, j, v) in [(0, 0, c), (0, 1, -s), (1, 0, s), (1, 1, c), (2, 2, c), (2, 3, -s), (3, 2, s), (3, 3, c)] {
            k[(i, j)] = v;
        }
        let circle = |th: f64| vec![th.cos(), th.sin(), -th.sin(), th.cos()];
        let segs: Vec<Matrix> = (0..=3)
            .map(|j| {
                Matrix::from_columns(&[circle(j as f64 * dth), circle(1.0 + j as f64 * dth)]).unwrap()
            })
            .collect();
        let (terms, _) = loss(None, &k, &segs, &tiny_config(0).loss, ProblemKind::TwoBody).unwrap();
        assert!(terms.rv < 1e-30, "{}", terms.rv);
        assert!(terms.pred < 1e-28);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let m = toy_model(4, 3, 21);
        let segs = random_segments(4, 4, 3, 22);
        let w = LossWeights {
            gamma: 0.8,
            beta: 1.0,
            lambda1: 0.0,
            lambda2: 0.01,
            lambda_rv: 0.3,
        };
        let enc = m.encoder.clone().unwrap();
        let (_, g) = loss(Some(&enc), &m.k, &segs, &w, ProblemKind::TwoBody).unwrap();
        let g = g.unwrap();
        let h = 1e-6;
        let mut worst = 0.0f64;
        for li in 0..enc.layers().len() {
            let nw = enc.layers()[li].weights.as_slice().len();
            for idx in 0..nw + enc.layers()[li].biases.len() {
                let eval = |d: f64| {
                    let mut layers: Vec<Layer> = enc.layers().to_vec();
                    if idx < nw {
                        layers[li].weights.as_mut_slice()[idx] += d;
                    } else {
                        layers[li].biases[idx - nw] += d;
                    }
                    let net = Network::new(layers).unwrap();
                    loss(Some(&net), &m.k, &segs, &w, ProblemKind::TwoBody).unwrap().0.total
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let an = if idx < nw {
                    g.layers[li].weights.as_slice()[idx]
                } else {
                    g.layers[li].biases[idx - nw]
                };
                worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-7));
            }
        }
        assert!(worst < 1e-5, "max relative error {worst}");
    }

    #[test]
    fn dmd_degenerate_training_recovers_system() {
        let a = stable_a();
        let ds = linear_dataset(&a, 3, 40, 4);
        let out = train(&ds, &tiny_config(0)).unwrap();
        assert!(out.model.k.sub(&a).unwrap().max_abs() < 1e-8);
        assert_eq!(out.history.len(), 5);
    }

    #[test]
    fn training_rejects_alpha_mismatch() {
        let ds = linear_dataset(&stable_a(), 2, 20, 3);
        assert!(matches!(train(&ds, &tiny_config(0)), Err(Error::Config(_))));
    }

    fn small_2bp() -> Dataset {
        generate_2bp_dataset(&TwoBodyDataConfig {
            n_ic: 6,
            dp: 100,
            alpha: 4,
            seed: 1,
            kind: crate::dynamics::OrbitKind::Elliptical,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn training_is_deterministic_and_sized() {
        let ds = small_2bp();
        let a = train(&ds, &tiny_config(6)).unwrap();
        let b = train(&ds, &tiny_config(6)).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.model.k.shape(), (10, 10));
        assert_eq!((a.model.n, a.model.lifted_size), (4, 6));
        assert!(a.history.iter().all(|r| r.loss.is_finite()));
    }

    #[test]
    fn model_round_trip_and_corruption() {
        let ds = small_2bp();
        let model = train(&ds, &tiny_config(6)).unwrap().model;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&model, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, model);
        let ic = ds.trajectories[0].initial_state().unwrap();
        assert_eq!(back.predict(&ic, 50).unwrap(), model.predict(&ic, 50).unwrap());

        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Corrupt { .. })));

        fs::write(&path, text.replacen("\"version\":1", "\"version\":9", 1)).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Version { found: 9, .. })));
    }

    #[test]
    fn table_presets() {
        let t1 = TrainConfig::full_2bp();
        assert_eq!(t1.encoder_dims(4), vec![4, 25, 25, 25, 6]);
        assert_eq!(4 + t1.lifted_size, 10);
        let t2 = TrainConfig::full_cr3bp();
        assert_eq!(6 + t2.lifted_size, 106);
        assert_eq!(t2.encoder_dims(6).len(), 15);
        assert_eq!(t2.loss.lambda_rv, 0.0);
    }

    #[test]
    fn moving_average_values() {
        assert_eq!(moving_average(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.5, 2.5, 3.5]);
        assert!(moving_average(&[1.0], 2).is_empty());
    }
}
