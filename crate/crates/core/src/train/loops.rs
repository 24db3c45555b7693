//! Plain, federated and differentially private federated SGD.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::data::{DatasetKind, FederatedDataset, Split, TargetScaler};
use super::federation::Federation;
use super::metrics::Trace;
use super::model::{mlp_layers, Model};
use super::{Task, TrainError};
use crate::chain::{Arg, CallArg, Chain, LocalObject};
use crate::dp::{compose_eps, MomentLedger, PrivacySpec};
use crate::net::exec::DP_LOT_GRADIENT;
use crate::net::WorkerId;
use crate::tensor::Tensor;

pub const DEFAULT_HIDDEN: usize = 32;
const LEADER_RNG_DOMAIN: u64 = 0x1ead_e500_0000_0002;
/// Phases and clipping norm used for DP runs unless overridden.
pub const DP_PHASES: usize = 800;
pub const DP_CLIP: f64 = 1.5;
const DP_LR_MAX: f64 = 0.05;
const DP_LR_NOISE: f64 = 0.2;

/// Step size for noisy updates: `min(0.05, 0.2 / sigma)`. Large steps push the
/// noisy hidden pre-activations past the range where the cubic sigmoid is
/// bounded.
pub fn dp_lr(sigma: f64) -> f64 {
    if sigma > 0.0 {
        DP_LR_MAX.min(DP_LR_NOISE / sigma)
    } else {
        DP_LR_MAX
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Batch size for plain and federated SGD.
    pub batch: usize,
    /// Lot size L for DP phases.
    pub lot: usize,
    /// Number of DP phases T.
    pub phases: usize,
    pub clip: f64,
    pub delta: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            epochs: 10,
            batch: 32,
            lot: 32,
            phases: 500,
            clip: 1.0,
            delta: 1e-5,
            hidden: DEFAULT_HIDDEN,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults tuned per dataset. With `dp_sigma`, the DP phase count,
    /// clipping norm and noise-scaled step size apply.
    pub fn preset(kind: DatasetKind, dp_sigma: Option<f64>) -> Self {
        let base = TrainConfig::default();
        match dp_sigma {
            Some(sigma) => TrainConfig {
                lr: dp_lr(sigma),
                phases: DP_PHASES,
                clip: DP_CLIP,
                ..base
            },
            None => TrainConfig {
                lr: match kind {
                    DatasetKind::Boston => 0.05,
                    DatasetKind::Pima => 0.5,
                },
                ..base
            },
        }
    }

    fn check(&self) -> Result<(), TrainError> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(TrainError::Config(format!(
                "learning rate must be >= 0, got {}",
                self.lr
            )));
        }
        if self.batch == 0 || self.lot == 0 || self.hidden == 0 {
            return Err(TrainError::Config(
                "batch, lot and hidden sizes must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn dims(&self, input: usize) -> Vec<usize> {
        vec![input, self.hidden, 1]
    }

    /// The seeded initial model.
    pub fn init_model(&self, input: usize, task: Task) -> Result<Model, TrainError> {
        let layers = mlp_layers(&self.dims(input), task)?;
        Model::init(layers, &mut ChaCha20Rng::seed_from_u64(self.seed))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Mse(f64),
    Accuracy(f64),
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Mse(_) => "mse",
            Metric::Accuracy(_) => "accuracy",
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            Metric::Mse(v) | Metric::Accuracy(v) => v,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub trace: Trace,
    /// Parameter updates applied.
    pub steps: usize,
    pub wall_ms: f64,
}

impl TrainOutcome {
    pub fn per_step_ms(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.wall_ms / self.steps as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct DpOutcome {
    pub run: TrainOutcome,
    pub q: f64,
    pub sigma: f64,
    pub delta: f64,
    pub epsilon: f64,
}

/// MSE in raw target units, or accuracy of the 0.5-thresholded output.
pub fn evaluate(
    model: &Model,
    split: &Split,
    task: Task,
    scaler: &TargetScaler,
) -> Result<Metric, TrainError> {
    let pred = scaler.decode(&model.predict(&split.x)?);
    let n = split.rows() as f64;
    Ok(match task {
        Task::Regression => Metric::Mse(
            pred.iter()
                .zip(&split.y)
                .map(|(p, y)| (p - y) * (p - y))
                .sum::<f64>()
                / n,
        ),
        Task::Binary => {
            let hits = pred
                .iter()
                .zip(&split.y)
                .filter(|(p, y)| (**p >= 0.5) == (**y >= 0.5))
                .count();
            Metric::Accuracy(hits as f64 / n)
        }
    })
}

/// Loss on the raw target scale.
fn raw_loss(loss: f64, scaler: &TargetScaler) -> f64 {
    loss * scaler.std * scaler.std
}

fn elapsed_ms(t0: Instant) -> f64 {
    t0.elapsed().as_secs_f64() * 1e3
}

/// `(start, len)` of every batch over `rows` rows, in order.
fn batches(rows: usize, batch: usize) -> Vec<(usize, usize)> {
    (0..rows)
        .step_by(batch)
        .map(|s| (s, batch.min(rows - s)))
        .collect()
}

/// Minibatch SGD on the whole training split, in one process.
pub fn train_plain(ds: &FederatedDataset, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.check()?;
    let mut model = cfg.init_model(ds.dim(), ds.task())?;
    let y = ds.scaler.encode(&ds.train.y);
    let t0 = Instant::now();
    let mut trace = Trace::default();
    let mut steps = 0;
    for _ in 0..cfg.epochs {
        for (start, len) in batches(ds.train.rows(), cfg.batch) {
            let b = ds.train.slice(start, len);
            let (loss, grad) = model.loss_and_grad(&b.x, &y[start..start + len])?;
            model.apply_update(&grad, cfg.lr)?;
            trace.push(steps, raw_loss(loss, &ds.scaler), elapsed_ms(t0));
            steps += 1;
        }
    }
    Ok(TrainOutcome {
        model,
        trace,
        steps,
        wall_ms: elapsed_ms(t0),
    })
}

/// Sends every partition to its worker; targets go on the training scale.
fn upload(
    fed: &mut Federation,
    ds: &FederatedDataset,
) -> Result<Vec<(WorkerId, Chain, Chain)>, TrainError> {
    if fed.workers().len() != ds.partitions.len() {
        return Err(TrainError::Config(format!(
            "{} partitions for {} workers",
            ds.partitions.len(),
            fed.workers().len()
        )));
    }
    let mut out = Vec::with_capacity(ds.partitions.len());
    for (w, p) in fed.workers().to_vec().into_iter().zip(&ds.partitions) {
        let mut x = fed.session.tensor(p.x.clone());
        let mut y = fed.session.tensor(Tensor::vector(ds.scaler.encode(&p.y)));
        fed.session.send(&mut x, &w)?;
        fed.session.send(&mut y, &w)?;
        out.push((w, x, y));
    }
    Ok(out)
}

fn params_object(model: &Model) -> LocalObject {
    LocalObject::Plain(Tensor::vector(model.params().to_vec()))
}

fn dims_arg(cfg: &TrainConfig, input: usize) -> String {
    cfg.dims(input)
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

/// Federated SGD: each epoch visits the workers' batches round-robin; the
/// worker computes the batch gradient and the leader applies the update.
pub fn train_federated(
    fed: &mut Federation,
    ds: &FederatedDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.check()?;
    let mut model = cfg.init_model(ds.dim(), ds.task())?;
    let data = upload(fed, ds)?;
    let dims = dims_arg(cfg, ds.dim());
    let plans: Vec<Vec<(usize, usize)>> = ds
        .partitions
        .iter()
        .map(|p| batches(p.rows(), cfg.batch))
        .collect();
    let rounds = plans.iter().map(Vec::len).max().unwrap_or(0);

    let t0 = Instant::now();
    let mut trace = Trace::default();
    let mut steps = 0;
    for epoch in 0..cfg.epochs {
        for r in 0..rounds {
            for ((w, x, y), plan) in data.iter().zip(&plans) {
                let Some(&(start, len)) = plan.get(r) else {
                    continue;
                };
                let out = fed.session.call(
                    w,
                    "batch_gradient",
                    vec![
                        CallArg::Upload(params_object(&model)),
                        CallArg::Remote(x),
                        CallArg::Remote(y),
                        CallArg::Lit(Arg::Str(dims.clone())),
                        CallArg::Lit(Arg::Str(ds.task().name().into())),
                        CallArg::Lit(Arg::Int(start as i64)),
                        CallArg::Lit(Arg::Int(len as i64)),
                    ],
                    Vec::new(),
                )?;
                let mut grad = out.into_tensor().into_f64()?;
                let loss = grad
                    .pop()
                    .ok_or_else(|| TrainError::Shape("empty gradient reply".into()))?;
                model.apply_update(&grad, cfg.lr)?;
                trace.push(steps, raw_loss(loss, &ds.scaler), elapsed_ms(t0));
                steps += 1;
            }
        }
        log::info!(
            "epoch {} done, last batch loss {:.4}",
            epoch + 1,
            trace.rows.last().map_or(f64::NAN, |r| r.loss)
        );
    }
    Ok(TrainOutcome {
        model,
        trace,
        steps,
        wall_ms: elapsed_ms(t0),
    })
}

/// DP federated SGD by phases. Each phase picks a worker uniformly; the
/// worker samples a lot of L rows, clips and noises the per-example
/// gradients itself and returns only their noisy sum. The trace records the
/// leader-side test loss after every phase.
pub fn train_federated_dp(
    fed: &mut Federation,
    ds: &FederatedDataset,
    cfg: &TrainConfig,
    sigma: f64,
) -> Result<DpOutcome, TrainError> {
    cfg.check()?;
    let n = ds.train_rows();
    let q = cfg.lot as f64 / n as f64;
    let spec = PrivacySpec {
        q,
        sigma,
        clip: cfg.clip,
        delta: cfg.delta,
        steps: cfg.phases as u64,
    };
    spec.validate()?;
    if let Some(p) = ds.partitions.iter().find(|p| p.rows() < cfg.lot) {
        return Err(TrainError::LotTooLarge {
            lot: cfg.lot,
            rows: p.rows(),
        });
    }
    let mut model = cfg.init_model(ds.dim(), ds.task())?;
    let data = upload(fed, ds)?;
    let dims = dims_arg(cfg, ds.dim());
    let test_y = ds.scaler.encode(&ds.test.y);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ LEADER_RNG_DOMAIN);
    let mut ledger = MomentLedger::new();

    let t0 = Instant::now();
    let mut trace = Trace::default();
    for phase in 0..cfg.phases {
        let (w, x, y) = &data[rng.random_range(0..data.len())];
        let out = fed.session.call(
            w,
            DP_LOT_GRADIENT,
            vec![
                CallArg::Upload(params_object(&model)),
                CallArg::Remote(x),
                CallArg::Remote(y),
            ],
            vec![
                ("dims".into(), Arg::Str(dims.clone())),
                ("task".into(), Arg::Str(ds.task().name().into())),
                ("lot".into(), Arg::Int(cfg.lot as i64)),
                ("clip".into(), Arg::Float(cfg.clip)),
                ("sigma".into(), Arg::Float(sigma)),
            ],
        )?;
        let noisy_sum = out.into_tensor().into_f64()?;
        let update: Vec<f64> = noisy_sum.iter().map(|v| v / cfg.lot as f64).collect();
        model.apply_update(&update, cfg.lr)?;
        if sigma > 0.0 {
            ledger.record(q, sigma)?;
        }
        let test_loss = model.loss(&ds.test.x, &test_y)?;
        trace.push(phase, raw_loss(test_loss, &ds.scaler), elapsed_ms(t0));
    }
    let wall_ms = elapsed_ms(t0);
    let epsilon = if sigma > 0.0 && cfg.phases > 0 {
        compose_eps(&ledger, cfg.delta)?
    } else {
        f64::INFINITY
    };
    Ok(DpOutcome {
        run: TrainOutcome {
            model,
            trace,
            steps: cfg.phases,
            wall_ms,
        },
        q,
        sigma,
        delta: cfg.delta,
        epsilon,
    })
}
