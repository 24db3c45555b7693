//! CSV ingestion, train/test split, standardization and partitioning.

use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::{Task, TrainError};
use crate::tensor::Tensor;

pub const TEST_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Boston,
    Pima,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Boston => "boston",
            DatasetKind::Pima => "pima",
        }
    }

    pub fn parse(s: &str) -> Option<DatasetKind> {
        match s {
            "boston" => Some(DatasetKind::Boston),
            "pima" => Some(DatasetKind::Pima),
            _ => None,
        }
    }

    pub fn features(self) -> usize {
        match self {
            DatasetKind::Boston => 13,
            DatasetKind::Pima => 8,
        }
    }

    pub fn task(self) -> Task {
        match self {
            DatasetKind::Boston => Task::Regression,
            DatasetKind::Pima => Task::Binary,
        }
    }
}

/// Feature rows with their (raw) targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub x: Tensor,
    pub y: Vec<f64>,
}

pub type Partition = Split;

impl Split {
    pub fn new(x: Tensor, y: Vec<f64>) -> Result<Split, TrainError> {
        match *x.dims() {
            [n, _] if n == y.len() => Ok(Split { x, y }),
            _ => Err(TrainError::Shape(format!(
                "features {} do not match {} targets",
                x.shape(),
                y.len()
            ))),
        }
    }

    pub fn rows(&self) -> usize {
        self.y.len()
    }

    pub fn dim(&self) -> usize {
        self.x.dims()[1]
    }

    /// Rows `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> Split {
        let d = self.dim();
        let xs = self.x.as_f64().expect("float features");
        Split {
            x: Tensor::from_f64([len, d], xs[start * d..(start + len) * d].to_vec())
                .expect("in range"),
            y: self.y[start..start + len].to_vec(),
        }
    }
}

/// Affine map between raw targets and the scale the model trains on.
/// Regression targets are z-scored with training statistics; labels are
/// left alone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetScaler {
    pub mean: f64,
    pub std: f64,
}

impl TargetScaler {
    pub fn identity() -> Self {
        TargetScaler {
            mean: 0.0,
            std: 1.0,
        }
    }

    pub fn fit(task: Task, y: &[f64]) -> Self {
        match task {
            Task::Binary => TargetScaler::identity(),
            Task::Regression => {
                let (mean, std) = mean_std(y.iter().copied());
                TargetScaler { mean, std }
            }
        }
    }

    pub fn encode(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| (v - self.mean) / self.std).collect()
    }

    pub fn decode(&self, z: &[f64]) -> Vec<f64> {
        z.iter().map(|v| v * self.std + self.mean).collect()
    }
}

#[derive(Debug, Clone)]
pub struct FederatedDataset {
    pub kind: DatasetKind,
    /// The full standardized training split.
    pub train: Split,
    pub test: Split,
    /// Contiguous, evenly sized slices of `train`, one per worker.
    pub partitions: Vec<Partition>,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub scaler: TargetScaler,
}

impl FederatedDataset {
    pub fn task(&self) -> Task {
        self.kind.task()
    }

    pub fn dim(&self) -> usize {
        self.kind.features()
    }

    /// Rows across train and test.
    pub fn total_rows(&self) -> usize {
        self.train.rows() + self.test.rows()
    }

    /// N, the number of training rows across all partitions.
    pub fn train_rows(&self) -> usize {
        self.partitions.iter().map(Split::rows).sum()
    }
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 0.0 { std } else { 1.0 })
}

pub fn load_dataset(
    path: impl AsRef<Path>,
    kind: DatasetKind,
    split_seed: u64,
    workers: usize,
) -> Result<FederatedDataset, TrainError> {
    let file = std::fs::File::open(path.as_ref())?;
    parse_dataset(file, kind, split_seed, workers)
}

/// Reads a CSV with a header row, `features` columns and the target last.
pub fn parse_dataset<R: Read>(
    reader: R,
    kind: DatasetKind,
    split_seed: u64,
    workers: usize,
) -> Result<FederatedDataset, TrainError> {
    if workers == 0 {
        return Err(TrainError::Config("at least one worker is required".into()));
    }
    let d = kind.features();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let width = rdr
        .headers()
        .map_err(|e| TrainError::Parse(e.to_string()))?
        .len();
    if width != d + 1 {
        return Err(TrainError::Schema(format!(
            "{} expects {} columns, header has {width}",
            kind.name(),
            d + 1
        )));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { .. } => TrainError::Schema(e.to_string()),
            _ => TrainError::Parse(e.to_string()),
        })?;
        let row = rec
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| TrainError::Parse(format!("line {}: bad number {f:?}", i + 2)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    let n = rows.len();
    let n_test = (n as f64 * TEST_FRACTION).round() as usize;
    if n - n_test < workers {
        return Err(TrainError::Schema(format!(
            "{n} rows cannot feed {workers} workers"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha20Rng::seed_from_u64(split_seed));
    let (test_idx, train_idx) = order.split_at(n_test);

    let rows = &rows;
    let col = |idx: &[usize], j: usize| idx.iter().map(|&i| rows[i][j]).collect::<Vec<_>>();
    let (mut feature_mean, mut feature_std) = (Vec::with_capacity(d), Vec::with_capacity(d));
    for j in 0..d {
        let (m, s) = mean_std(col(train_idx, j).into_iter());
        feature_mean.push(m);
        feature_std.push(s);
    }
    let build = |idx: &[usize]| -> Result<Split, TrainError> {
        let mut xs = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            xs.extend((0..d).map(|j| (rows[i][j] - feature_mean[j]) / feature_std[j]));
        }
        Split::new(Tensor::from_f64([idx.len(), d], xs)?, col(idx, d))
    };
    let train = build(train_idx)?;
    let test = build(test_idx)?;

    let (base, extra) = (train.rows() / workers, train.rows() % workers);
    let mut partitions = Vec::with_capacity(workers);
    let mut start = 0;
    for w in 0..workers {
        let len = base + usize::from(w < extra);
        partitions.push(train.slice(start, len));
        start += len;
    }
    let scaler = TargetScaler::fit(kind.task(), &train.y);
    Ok(FederatedDataset {
        kind,
        train,
        test,
        partitions,
        feature_mean,
        feature_std,
        scaler,
    })
}
