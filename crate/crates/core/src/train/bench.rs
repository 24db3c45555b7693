//! Wall-clock comparison of transports and of DP against plain federated SGD.

use serde::Serialize;

use super::data::FederatedDataset;
use super::federation::{Federation, TransportKind};
use super::loops::{train_federated, train_federated_dp, TrainConfig, TrainOutcome};
use super::TrainError;

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub train: TrainConfig,
    pub sigma: f64,
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeTiming {
    pub mode: String,
    /// Median over repeats.
    pub wall_ms: f64,
    pub per_batch_ms: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub modes: Vec<ModeTiming>,
    /// socket wall time / virtual wall time.
    pub socket_ratio: f64,
    /// DP per-batch time / federated per-batch time, both virtual.
    pub dp_overhead_ratio: f64,
}

impl BenchReport {
    pub fn mode(&self, name: &str) -> Option<&ModeTiming> {
        self.modes.iter().find(|m| m.mode == name)
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<12} {:>12} {:>14} {:>8}\n",
            "mode", "wall ms", "ms per batch", "steps"
        );
        for m in &self.modes {
            s.push_str(&format!(
                "{:<12} {:>12.1} {:>14.3} {:>8}\n",
                m.mode, m.wall_ms, m.per_batch_ms, m.steps
            ));
        }
        s.push_str(&format!("socket / virtual: {:.2}\n", self.socket_ratio));
        s.push_str(&format!(
            "dp / baseline per batch: {:.2}\n",
            self.dp_overhead_ratio
        ));
        s
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn timed<F>(name: &str, repeats: usize, mut run: F) -> Result<ModeTiming, TrainError>
where
    F: FnMut() -> Result<TrainOutcome, TrainError>,
{
    let mut walls = Vec::with_capacity(repeats);
    let mut per_batch = Vec::with_capacity(repeats);
    let mut steps = 0;
    for _ in 0..repeats {
        let out = run()?;
        walls.push(out.wall_ms);
        per_batch.push(out.per_step_ms());
        steps = out.steps;
    }
    Ok(ModeTiming {
        mode: name.to_string(),
        wall_ms: median(walls),
        per_batch_ms: median(per_batch),
        steps,
    })
}

/// Trains on `ds` in virtual, socket and virtual+DP modes, `repeats` times
/// each, and reports medians.
pub fn benchmark(ds: &FederatedDataset, cfg: &BenchConfig) -> Result<BenchReport, TrainError> {
    if cfg.repeats == 0 {
        return Err(TrainError::Config("repeats must be at least 1".into()));
    }
    let n = ds.partitions.len();
    let seed = cfg.train.seed;
    let plain = |kind| {
        move || -> Result<TrainOutcome, TrainError> {
            let mut fed = Federation::local(kind, n, seed, false, None)?;
            train_federated(&mut fed, ds, &cfg.train)
        }
    };
    let virt = timed("virtual", cfg.repeats, plain(TransportKind::Virtual))?;
    let sock = timed("socket", cfg.repeats, plain(TransportKind::Socket))?;
    let dp = timed("virtual+dp", cfg.repeats, || {
        let mut fed = Federation::local(TransportKind::Virtual, n, seed, false, None)?;
        Ok(train_federated_dp(&mut fed, ds, &cfg.train, cfg.sigma)?.run)
    })?;
    Ok(BenchReport {
        schema_version: super::SCHEMA_VERSION,
        socket_ratio: sock.wall_ms / virt.wall_ms,
        dp_overhead_ratio: dp.per_batch_ms / virt.per_batch_ms,
        modes: vec![virt, sock, dp],
    })
}
