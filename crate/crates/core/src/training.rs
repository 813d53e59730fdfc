//! Loss assembly, Adam, the step-decay schedule, boundary-weight annealing and
//! the epoch loop.
//!
//! Every epoch draws a fresh [`SampleBatch`], evaluates the loss and its
//! gradient over fixed-size chunks (in parallel, reduced in chunk order so the
//! result does not depend on the thread count) and takes one Adam step.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{fmt_float, rel_l2};
use crate::diffengine::Adjoint;
use crate::error::{invalid, Error, Result};
use crate::models::{Model, ModelParams, ModelSpec};
use crate::problems::{sample, Operator, Problem, SampleBatch};
use crate::scalar::Scalar;

/// ChaCha stream used for point sampling; parameter initialization uses the
/// low stream indices, one per layer.
const SAMPLE_STREAM: u64 = 1 << 40;

/// Boundary weight of the fixed mode when none is given.
pub const FIXED_BETA: f64 = 1e4;

/// How the boundary weight `beta` evolves.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum BetaMode {
    Fixed { beta: f64 },
    /// Gradient-statistics annealing every `every` epochs with smoothing `alpha`.
    Annealed { initial: f64, alpha: f64, every: usize },
}

impl Default for BetaMode {
    fn default() -> Self {
        BetaMode::Annealed { initial: 1.0, alpha: 0.1, every: 10 }
    }
}

impl BetaMode {
    pub fn initial(&self) -> f64 {
        match *self {
            BetaMode::Fixed { beta } => beta,
            BetaMode::Annealed { initial, .. } => initial,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean squared error against the exact solution at interior points.
    FitMse,
    /// Operator residual plus weighted Dirichlet mismatch.
    PdeDirichlet,
}

impl LossKind {
    /// Natural loss for a problem.
    pub fn for_problem(problem: &Problem) -> Self {
        if problem.is_fit() {
            LossKind::FitMse
        } else {
            LossKind::PdeDirichlet
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    /// Multiplicative decay applied every `decay_every` epochs.
    pub decay: f64,
    pub decay_every: usize,
    pub n_f: usize,
    pub n_b: usize,
    pub beta_mode: BetaMode,
    pub adam: AdamConfig,
    pub seed: u64,
    pub loss_kind: LossKind,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
    /// Samples per gradient chunk. Changing it changes rounding, not results in exact arithmetic.
    pub chunk: usize,
    /// Epoch interval of grid evaluations.
    pub rel_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50_000,
            lr0: 4e-3,
            decay: 0.9,
            decay_every: 1000,
            n_f: 5000,
            n_b: 1000,
            beta_mode: BetaMode::default(),
            adam: AdamConfig::default(),
            seed: 0,
            loss_kind: LossKind::FitMse,
            threads: 1,
            chunk: 256,
            rel_every: 500,
        }
    }
}

impl TrainConfig {
    /// Defaults with the loss kind matched to `problem`.
    pub fn for_problem(problem: &Problem) -> Self {
        Self { loss_kind: LossKind::for_problem(problem), ..Self::default() }
    }

    /// `lr0 * decay^floor(epoch / decay_every)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 * self.decay.powi((epoch / self.decay_every) as i32)
    }

    pub fn validate(&self, problem: &Problem) -> Result<()> {
        if !(self.lr0 > 0.0) || !(self.decay > 0.0) || self.decay_every == 0 {
            return Err(invalid("lr0 and decay must be positive and decay_every >= 1"));
        }
        if self.chunk == 0 || self.rel_every == 0 {
            return Err(invalid("chunk and rel_every must be >= 1"));
        }
        if self.epochs > 0 && self.n_f == 0 {
            return Err(invalid("n_f must be >= 1"));
        }
        if self.loss_kind == LossKind::PdeDirichlet {
            if problem.is_fit() {
                return Err(invalid(format!("problem `{}` has no differential operator", problem.id)));
            }
            if self.epochs > 0 && self.n_b == 0 {
                return Err(invalid("n_b must be >= 1 for the Dirichlet loss"));
            }
        }
        if let BetaMode::Annealed { alpha, every, .. } = self.beta_mode {
            if !(0.0..=1.0).contains(&alpha) || every == 0 {
                return Err(invalid("annealing needs alpha in [0, 1] and every >= 1"));
            }
        }
        Ok(())
    }
}

/// Bias-corrected Adam state.
#[derive(Clone, Debug)]
pub struct Adam<T: Scalar> {
    config: AdamConfig,
    m: ModelParams<T>,
    v: ModelParams<T>,
    step: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, like: &ModelParams<T>) -> Self {
        Self { config, m: like.zeros_like(), v: like.zeros_like(), step: 0 }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// `theta -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &ModelParams<T>, lr: f64) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = T::cst(1.0 - beta1.powi(self.step));
        let c2 = T::cst(1.0 - beta2.powi(self.step));
        let (b1, b2, eps, lr) = (T::cst(beta1), T::cst(beta2), T::cst(eps), T::cst(lr));
        let one = T::one();
        let slots = params.slices_mut().zip(grads.slices()).zip(self.m.slices_mut().zip(self.v.slices_mut()));
        for ((p, g), (m, v)) in slots {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Gradient magnitudes feeding the annealing rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradStats {
    /// `max |grad L_f|`.
    pub max_f: f64,
    /// `mean |grad (beta L_b)|`.
    pub mean_b: f64,
}

impl GradStats {
    pub fn from_grads<T: Scalar>(grad_f: &ModelParams<T>, grad_b: &ModelParams<T>, beta: f64) -> Self {
        let max_f = grad_f.slices().flatten().fold(0.0f64, |m, g| m.max(g.to_f64_lossy().abs()));
        let (sum, count) = grad_b
            .slices()
            .flatten()
            .fold((0.0f64, 0usize), |(s, c), g| (s + (beta * g.to_f64_lossy()).abs(), c + 1));
        Self { max_f, mean_b: if count == 0 { 0.0 } else { sum / count as f64 } }
    }
}

/// `beta <- (1 - alpha) beta + alpha (max_f / mean_b) beta`; unchanged when `mean_b` is zero.
pub fn anneal_beta(beta: f64, stats: GradStats, alpha: f64) -> f64 {
    if stats.mean_b == 0.0 || !stats.mean_b.is_finite() {
        return beta;
    }
    (1.0 - alpha) * beta + alpha * (stats.max_f / stats.mean_b) * beta
}

/// Loss components of the Dirichlet objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PdeLoss<T> {
    pub total: T,
    pub l_f: T,
    pub l_b: T,
}

fn to_scalar<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::cst(x)).collect()
}

/// Per-sample residual of the operator at interior points and its adjoints.
#[derive(Clone, Copy)]
enum Residual {
    /// `u - f`.
    Value,
    /// `-Lap u - f`.
    Poisson,
    /// `Lap u + k^2 u - f`.
    Helmholtz(f64),
}

impl Residual {
    fn interior(kind: LossKind, problem: &Problem) -> Result<Self> {
        Ok(match (kind, problem.operator) {
            (LossKind::FitMse, _) => Residual::Value,
            (LossKind::PdeDirichlet, Operator::Poisson) => Residual::Poisson,
            (LossKind::PdeDirichlet, Operator::Helmholtz { k }) => Residual::Helmholtz(k),
            (LossKind::PdeDirichlet, Operator::Fit) => {
                return Err(invalid(format!("problem `{}` has no differential operator", problem.id)))
            }
        })
    }

    fn needs_laplacian(self) -> bool {
        !matches!(self, Residual::Value)
    }

    fn eval<T: Scalar>(self, u: T, lap: Option<T>, f: T) -> T {
        match self {
            Residual::Value => u - f,
            Residual::Poisson => -lap.expect("laplacian") - f,
            Residual::Helmholtz(k) => lap.expect("laplacian") + T::cst(k * k) * u - f,
        }
    }

    /// Adjoint of `sum r^2 * scale` for one chunk.
    fn adjoint<T: Scalar>(self, u: &[T], lap: Option<&[T]>, f: &[T], scale: T) -> Adjoint<T> {
        let two = T::cst(2.0);
        let mut loss = T::zero();
        let mut value = vec![T::zero(); u.len()];
        let mut laplacian = lap.map(|l| vec![T::zero(); l.len()]);
        for i in 0..u.len() {
            let r = self.eval(u[i], lap.map(|l| l[i]), f[i]);
            loss += r * r * scale;
            let g = two * r * scale;
            match self {
                Residual::Value => value[i] = g,
                Residual::Poisson => laplacian.as_mut().expect("laplacian")[i] = -g,
                Residual::Helmholtz(k) => {
                    value[i] = g * T::cst(k * k);
                    laplacian.as_mut().expect("laplacian")[i] = g;
                }
            }
        }
        Adjoint { loss, value, laplacian }
    }
}

/// `mean r^2` and its gradient over `xs`, split into chunks of `chunk` samples.
fn mse_grad<T: Scalar>(
    model: &Model<T>,
    xs: &[T],
    f: &[T],
    residual: Residual,
    chunk: usize,
) -> Result<(T, ModelParams<T>)> {
    let d = model.d();
    let n = f.len();
    if n == 0 {
        return Err(Error::EmptyBatch("loss samples"));
    }
    let scale = T::cst(1.0 / n as f64);
    let lap = residual.needs_laplacian();
    let parts: Vec<(T, ModelParams<T>)> = xs
        .par_chunks(chunk * d)
        .zip(f.par_chunks(chunk))
        .map(|(x, fc)| {
            let tape = model.forward_tape(x, lap)?;
            let adj = residual.adjoint(tape.values(), tape.laplacians(), fc, scale);
            let mut grads = model.params().zeros_like();
            model.backward(&tape, &adj.value, adj.laplacian.as_deref(), &mut grads);
            Ok((adj.loss, grads))
        })
        .collect::<Result<_>>()?;
    let mut iter = parts.into_iter();
    let (mut loss, mut grads) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        loss += l;
        grads.add_assign(&g);
    }
    Ok((loss, grads))
}

/// Losses of one batch with their parameter gradients.
#[derive(Clone, Debug)]
pub struct BatchGradient<T: Scalar> {
    pub l_f: T,
    /// Zero for fitting losses.
    pub l_b: T,
    pub grad_f: ModelParams<T>,
    /// `None` for fitting losses.
    pub grad_b: Option<ModelParams<T>>,
}

/// Gradients of `L_f` and `L_b` over `batch`, exactly as the training loop computes them.
pub fn batch_gradient<T: Scalar>(
    model: &Model<T>,
    problem: &Problem,
    kind: LossKind,
    batch: &SampleBatch,
    chunk: usize,
) -> Result<BatchGradient<T>> {
    if chunk == 0 {
        return Err(invalid("chunk must be positive"));
    }
    gradient_with(model, batch, Residual::interior(kind, problem)?, chunk)
}

fn gradient_with<T: Scalar>(model: &Model<T>, batch: &SampleBatch, interior: Residual, chunk: usize) -> Result<BatchGradient<T>> {
    let (l_f, grad_f) = mse_grad(model, &to_scalar(&batch.interior), &to_scalar(&batch.f), interior, chunk)?;
    if !interior.needs_laplacian() {
        return Ok(BatchGradient { l_f, l_b: T::zero(), grad_f, grad_b: None });
    }
    let (l_b, grad_b) = mse_grad(model, &to_scalar(&batch.boundary), &to_scalar(&batch.g), Residual::Value, chunk)?;
    Ok(BatchGradient { l_f, l_b, grad_f, grad_b: Some(grad_b) })
}

/// `mean r^2` without gradients.
fn mse<T: Scalar>(model: &Model<T>, xs: &[T], f: &[T], residual: Residual, chunk: usize) -> Result<T> {
    let d = model.d();
    if f.is_empty() {
        return Err(Error::EmptyBatch("loss samples"));
    }
    let lap = residual.needs_laplacian();
    let parts: Vec<T> = xs
        .par_chunks(chunk * d)
        .zip(f.par_chunks(chunk))
        .map(|(x, fc)| {
            let mut s = T::zero();
            if lap {
                let (u, l) = model.eval_batch_laplacian(x)?;
                for i in 0..fc.len() {
                    let r = residual.eval(u[i], Some(l[i]), fc[i]);
                    s += r * r;
                }
            } else {
                let u = model.eval_batch(x)?;
                for i in 0..fc.len() {
                    let r = residual.eval(u[i], None, fc[i]);
                    s += r * r;
                }
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().fold(T::zero(), |a, b| a + b) / T::cst(f.len() as f64))
}

const LOSS_CHUNK: usize = 1024;

/// `mean (f(x) - u(x))^2` over the interior points of `batch`.
pub fn fit_loss<T: Scalar>(model: &Model<T>, batch: &SampleBatch) -> Result<T> {
    mse(model, &to_scalar(&batch.interior), &to_scalar(&batch.f), Residual::Value, LOSS_CHUNK)
}

/// `(L_f + beta L_b, L_f, L_b)` of the Dirichlet objective.
pub fn pde_loss<T: Scalar>(model: &Model<T>, problem: &Problem, batch: &SampleBatch, beta: f64) -> Result<PdeLoss<T>> {
    let residual = Residual::interior(LossKind::PdeDirichlet, problem)?;
    let l_f = mse(model, &to_scalar(&batch.interior), &to_scalar(&batch.f), residual, LOSS_CHUNK)?;
    let l_b = mse(model, &to_scalar(&batch.boundary), &to_scalar(&batch.g), Residual::Value, LOSS_CHUNK)?;
    Ok(PdeLoss { total: l_f + T::cst(beta) * l_b, l_f, l_b })
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_f: f64,
    pub loss_b: f64,
    pub beta: f64,
    pub lr: f64,
    /// Grid error after this epoch's update, on logging epochs.
    pub rel: Option<f64>,
    /// Seconds since training started.
    pub elapsed: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epochs: Vec<EpochLog>,
    pub rel_final: Option<f64>,
    pub rel_min: Option<f64>,
    pub beta: f64,
    pub seconds: f64,
}

impl TrainRecord {
    fn note_rel(&mut self, rel: f64) {
        self.rel_final = Some(rel);
        self.rel_min = Some(self.rel_min.map_or(rel, |m| m.min(rel)));
    }
}

/// A training run that hit a non-finite loss or gradient. Parameters are
/// those before the offending update.
#[derive(Debug)]
pub struct TrainAbort<T: Scalar> {
    pub epoch: usize,
    pub reason: String,
    pub record: TrainRecord,
    pub model: Model<T>,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError<T: Scalar> {
    #[error(transparent)]
    Setup(#[from] Error),
    #[error("training aborted at epoch {}: {}", .0.epoch, .0.reason)]
    Aborted(Box<TrainAbort<T>>),
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T: Scalar> {
    pub model: Model<T>,
    pub record: TrainRecord,
}

/// Builds the model from `spec` with `config.seed` and trains it.
pub fn train<T: Scalar>(spec: &ModelSpec, problem: &Problem, config: &TrainConfig) -> Result<TrainOutcome<T>, TrainError<T>> {
    let model = Model::build(*spec, config.seed)?;
    train_model(model, problem, config)
}

/// Trains an existing model in place of a fresh build.
pub fn train_model<T: Scalar>(
    model: Model<T>,
    problem: &Problem,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>, TrainError<T>> {
    config.validate(problem)?;
    if model.d() != problem.d() {
        return Err(Error::Dimension { context: "model vs problem", expected: problem.d(), found: model.d() }.into());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| run(model, problem, config))
}

fn non_finite<T: Scalar>(g: &ModelParams<T>) -> bool {
    g.slices().flatten().any(|v| !v.is_finite())
}

fn run<T: Scalar>(mut model: Model<T>, problem: &Problem, config: &TrainConfig) -> Result<TrainOutcome<T>, TrainError<T>> {
    let start = Instant::now();
    let interior = Residual::interior(config.loss_kind, problem)?;
    let pde = interior.needs_laplacian();
    let mut beta = if pde { config.beta_mode.initial() } else { 0.0 };
    let mut record = TrainRecord { epochs: Vec::with_capacity(config.epochs), ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(SAMPLE_STREAM);
    let mut adam = Adam::new(config.adam, model.params());
    let n_b = if pde { config.n_b } else { 0 };

    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let batch = sample(problem, config.n_f, n_b, &mut rng);
        let BatchGradient { l_f, l_b, grad_f: mut grads, grad_b } = gradient_with(&model, &batch, interior, config.chunk)?;
        if let Some(grad_b) = grad_b {
            if let BetaMode::Annealed { alpha, every, .. } = config.beta_mode {
                if epoch % every == 0 {
                    beta = anneal_beta(beta, GradStats::from_grads(&grads, &grad_b, beta), alpha);
                }
            }
            let b = T::cst(beta);
            for (g, gb) in grads.slices_mut().zip(grad_b.slices()) {
                for (x, &y) in g.iter_mut().zip(gb) {
                    *x += b * y;
                }
            }
        }
        let (loss_f, loss_b) = (l_f.to_f64_lossy(), l_b.to_f64_lossy());
        let mut log = EpochLog { epoch, loss_f, loss_b, beta, lr, rel: None, elapsed: 0.0 };
        let bad = if !(loss_f + beta * loss_b).is_finite() || !beta.is_finite() {
            Some("non-finite loss")
        } else if non_finite(&grads) {
            Some("non-finite gradient")
        } else {
            None
        };
        if let Some(reason) = bad {
            log.elapsed = start.elapsed().as_secs_f64();
            record.epochs.push(log);
            record.beta = beta;
            record.seconds = log.elapsed;
            return Err(TrainError::Aborted(Box::new(TrainAbort { epoch, reason: reason.into(), record, model })));
        }
        adam.step(model.params_mut(), &grads, lr);
        if (epoch + 1) % config.rel_every == 0 || epoch + 1 == config.epochs {
            let rel = rel_l2(&model, problem)?;
            log.rel = Some(rel);
            record.note_rel(rel);
        }
        log.elapsed = start.elapsed().as_secs_f64();
        record.epochs.push(log);
    }
    if config.epochs == 0 {
        record.note_rel(rel_l2(&model, problem)?);
    }
    record.beta = beta;
    record.seconds = start.elapsed().as_secs_f64();
    Ok(TrainOutcome { model, record })
}

/// Writes `epoch,loss_f,loss_b,beta,lr,rel`; `rel` is empty on epochs without a grid evaluation.
pub fn write_train_csv(path: &Path, record: &TrainRecord) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "loss_f", "loss_b", "beta", "lr", "rel"])?;
    for e in &record.epochs {
        w.write_record([
            e.epoch.to_string(),
            fmt_float(e.loss_f),
            fmt_float(e.loss_b),
            fmt_float(e.beta),
            fmt_float(e.lr),
            e.rel.map(fmt_float).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffengine::Activation;
    use crate::problems::{Domain, ProblemOptions, RhsMode, Solution};

    fn quadratic_1d() -> Problem {
        Problem::new("quad1d", Operator::Fit, Domain::UnitCube(1), Solution::PowerSum { degree: 2 }, RhsMode::Analytic).unwrap()
    }

    #[test]
    fn schedule() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(0), 4e-3);
        assert_eq!(c.lr_at(999), 4e-3);
        assert!((c.lr_at(2500) - 3.24e-3).abs() < 1e-15);
    }

    #[test]
    fn anneal_examples() {
        let s = GradStats { max_f: 10.0, mean_b: 1.0 };
        assert!((anneal_beta(1.0, s, 0.1) - 1.9).abs() < 1e-15);
        assert_eq!(anneal_beta(3.0, GradStats { max_f: 2.0, mean_b: 2.0 }, 0.1), 3.0);
        assert_eq!(anneal_beta(3.0, GradStats { max_f: 2.0, mean_b: 0.0 }, 0.1), 3.0);
    }

    #[test]
    fn adam_matches_scalar_reference() {
        let spec = ModelSpec::pinn(1, 1, 1, Activation::Identity);
        let mut params = crate::models::build::<f64>(&spec, 0).unwrap();
        let mut grads = params.zeros_like();
        let mut adam = Adam::new(AdamConfig::default(), &params);
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.01);
        let mut theta = params.to_flat();
        let (mut m, mut v) = (vec![0.0; theta.len()], vec![0.0; theta.len()]);
        for t in 1..=3 {
            let g: Vec<f64> = theta.iter().enumerate().map(|(i, x)| 2.0 * x - 0.3 * (i as f64 + t as f64)).collect();
            for (slot, gv) in grads.slices_mut().flatten().zip(&g) {
                *slot = *gv;
            }
            adam.step(&mut params, &grads, lr);
            for i in 0..theta.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / (1.0 - b1.powi(t));
                let vh = v[i] / (1.0 - b2.powi(t));
                theta[i] -= lr * mh / (vh.sqrt() + eps);
            }
            for (a, b) in params.to_flat().iter().zip(&theta) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
        assert_eq!(adam.steps(), 3);
    }

    #[test]
    fn fit_loss_oracles() {
        let problem = Problem::from_id("fit2d_eq41", ProblemOptions { jmax: Some(2), ..Default::default() }).unwrap();
        let spec = ModelSpec::khorder(2, 2, 1, 3, 1, 4, Activation::Tanh);
        let mut model = Model::<f64>::build(spec, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = sample(&problem, 37, 0, &mut rng);
        let direct: f64 = batch
            .interior
            .chunks_exact(2)
            .zip(&batch.f)
            .map(|(x, f)| (f - model.eval(x).unwrap()).powi(2))
            .sum::<f64>()
            / 37.0;
        assert!((fit_loss(&model, &batch).unwrap() - direct).abs() <= 1e-12);

        // Zeroed outer network: constant output equal to the output bias.
        model.zero_outer();
        let c = 0.25;
        let last = model.params_mut().stacks[1].layers.last_mut().unwrap();
        last.dense.bias[0] = c;
        let t = SampleBatch { d: 2, interior: vec![0.1, 0.2, 0.3, 0.4], f: vec![1.5, 1.5], boundary: vec![], g: vec![] };
        assert!((fit_loss(&model, &t).unwrap() - (1.5 - c) * (1.5 - c)).abs() <= 1e-15);
        let empty = SampleBatch { d: 2, interior: vec![], f: vec![], boundary: vec![], g: vec![] };
        assert!(matches!(fit_loss(&model, &empty), Err(Error::EmptyBatch(_))));
    }

    #[test]
    fn pde_loss_oracles() {
        let problem = Problem::from_id("helmholtz2d_eq410", ProblemOptions::default()).unwrap();
        let spec = ModelSpec::pinn(2, 2, 5, Activation::Tanh);
        let model = Model::<f64>::build(spec, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let batch = sample(&problem, 20, 12, &mut rng);
        let k2 = 25.0;
        let l_f: f64 = batch
            .interior
            .chunks_exact(2)
            .zip(&batch.f)
            .map(|(x, f)| (model.eval_laplacian(x).unwrap() + k2 * model.eval(x).unwrap() - f).powi(2))
            .sum::<f64>()
            / 20.0;
        let l_b: f64 =
            batch.boundary.chunks_exact(2).zip(&batch.g).map(|(x, g)| (model.eval(x).unwrap() - g).powi(2)).sum::<f64>() / 12.0;
        let got = pde_loss(&model, &problem, &batch, 3.0).unwrap();
        assert!((got.l_f - l_f).abs() <= 1e-12 * l_f.max(1.0));
        assert!((got.l_b - l_b).abs() <= 1e-12);
        assert!((got.total - (l_f + 3.0 * l_b)).abs() <= 1e-12 * l_f.max(1.0));
        let zero = pde_loss(&model, &problem, &batch, 0.0).unwrap();
        assert_eq!(zero.total, zero.l_f);
    }

    #[test]
    fn affine_solution_has_zero_pde_loss() {
        // u = 1 + 2 x1 - x2 solves -Lap u = 0; an identity-activation PINN can represent it exactly.
        let problem = Problem::from_id("poisson2d_sin8", ProblemOptions::default()).unwrap();
        let spec = ModelSpec::pinn(2, 1, 1, Activation::Identity);
        let params = ModelParams {
            stacks: vec![crate::diffengine::Stack::new(vec![
                crate::diffengine::Layer {
                    dense: crate::diffengine::DenseLayer::new(2, 1, vec![2.0, -1.0], vec![0.0]).unwrap(),
                    activation: Activation::Identity,
                },
                crate::diffengine::Layer {
                    dense: crate::diffengine::DenseLayer::new(1, 1, vec![1.0], vec![1.0]).unwrap(),
                    activation: Activation::Identity,
                },
            ])
            .unwrap()],
        };
        let model = Model::from_params(spec, params).unwrap();
        let interior = vec![0.2, 0.3, 0.7, 0.1];
        let boundary = vec![0.0, 0.5, 1.0, 0.25];
        let affine = |x: &[f64]| 1.0 + 2.0 * x[0] - x[1];
        let batch = SampleBatch {
            d: 2,
            f: vec![0.0; 2],
            g: boundary.chunks_exact(2).map(affine).collect(),
            interior,
            boundary,
        };
        let loss = pde_loss(&model, &problem, &batch, 1.0).unwrap();
        assert_eq!((loss.l_f, loss.l_b), (0.0, 0.0));
    }

    #[test]
    fn zero_epochs_keep_initial_params() {
        let problem = quadratic_1d();
        let spec = ModelSpec::pinn(1, 1, 3, Activation::Tanh);
        let config = TrainConfig { epochs: 0, n_f: 10, ..TrainConfig::for_problem(&problem) };
        let out = train::<f64>(&spec, &problem, &config).unwrap();
        assert_eq!(out.model.params(), &crate::models::build::<f64>(&spec, 0).unwrap());
        assert!(out.record.epochs.is_empty());
        assert!(out.record.rel_final.is_some());
    }

    #[test]
    fn consecutive_batches_differ() {
        let problem = Problem::from_id("poisson2d_sin8", ProblemOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = sample(&problem, 50, 20, &mut rng);
        let b = sample(&problem, 50, 20, &mut rng);
        assert_ne!(a.interior, b.interior);
        assert_ne!(a.boundary, b.boundary);
    }

    #[test]
    fn pde_loss_rejected_for_fit_problem() {
        let problem = quadratic_1d();
        let spec = ModelSpec::pinn(1, 1, 3, Activation::Tanh);
        let config = TrainConfig { epochs: 1, loss_kind: LossKind::PdeDirichlet, ..TrainConfig::default() };
        assert!(matches!(train::<f64>(&spec, &problem, &config), Err(TrainError::Setup(_))));
    }

    #[test]
    fn non_finite_loss_aborts_before_update() {
        let problem = quadratic_1d();
        let spec = ModelSpec::pinn(1, 1, 3, Activation::Tanh);
        let config = TrainConfig { epochs: 5, n_f: 16, lr0: f64::MAX, ..TrainConfig::for_problem(&problem) };
        match train::<f64>(&spec, &problem, &config) {
            Err(TrainError::Aborted(a)) => {
                assert!(a.epoch >= 1);
                assert!(a.model.params().slices().flatten().all(|v| v.is_finite()));
                assert_eq!(a.record.epochs.len(), a.epoch + 1);
            }
            other => panic!("expected abort, got {other:?}"),
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let problem = Problem::from_id("poisson2d_sin8", ProblemOptions::default()).unwrap();
        let spec = ModelSpec::khorder(2, 2, 1, 4, 1, 6, Activation::Tanh);
        let base = TrainConfig { epochs: 3, n_f: 300, n_b: 80, chunk: 64, rel_every: 2, ..TrainConfig::for_problem(&problem) };
        let one = train::<f64>(&spec, &problem, &TrainConfig { threads: 1, ..base }).unwrap();
        let four = train::<f64>(&spec, &problem, &TrainConfig { threads: 4, ..base }).unwrap();
        assert_eq!(one.model.params(), four.model.params());
        let strip = |r: &TrainRecord| r.epochs.iter().map(|e| (e.loss_f, e.loss_b, e.beta, e.rel)).collect::<Vec<_>>();
        assert_eq!(strip(&one.record), strip(&four.record));
    }
}
