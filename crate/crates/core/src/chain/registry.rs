//! Native command kernels, run wherever a chain bottoms out in a local
//! object: on the leader for local chains, on workers for remote ones.

use super::{ChainError, LocalObject};
use crate::fixedpoint::{from_signed, FixedPointConfig};
use crate::spdz::{self, TripleKind};
use crate::tensor::{DType, Tensor};
use crate::train::{mlp_layers, Model, Task};

/// A resolved command argument.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Object(LocalObject),
    Int(i64),
    Float(f64),
    Str(String),
}

pub type Kernel = fn(&[Value]) -> Result<LocalObject, ChainError>;

const KERNELS: &[(&str, Kernel)] = &[
    ("add", add),
    ("sub", sub),
    ("mul", mul),
    ("matmul", matmul),
    ("neg", neg),
    ("copy", copy),
    ("transpose", transpose),
    ("add_rows", add_rows),
    ("avg_pool2d", avg_pool2d),
    ("sum_pool2d", sum_pool2d),
    ("sigmoid_poly", sigmoid_poly),
    ("scale", scale),
    ("fix_precision", fix_precision),
    ("float_precision", float_precision),
    ("ring_scale", ring_scale),
    ("ring_offset", ring_offset),
    ("trunc_share", trunc_share),
    ("beaver_combine", beaver_combine),
    ("batch_gradient", batch_gradient),
];

pub fn lookup(name: &str) -> Option<Kernel> {
    KERNELS.iter().find(|(n, _)| *n == name).map(|(_, k)| *k)
}

pub fn command_names() -> impl Iterator<Item = &'static str> {
    KERNELS.iter().map(|(n, _)| *n)
}

pub fn run(name: &str, args: &[Value]) -> Result<LocalObject, ChainError> {
    let kernel = lookup(name).ok_or_else(|| ChainError::UnknownCommand(name.to_string()))?;
    kernel(args)
}

fn arg<'a>(args: &'a [Value], i: usize) -> Result<&'a Value, ChainError> {
    args.get(i)
        .ok_or_else(|| ChainError::BadArgument(format!("missing argument {i}")))
}

fn object(args: &[Value], i: usize) -> Result<&LocalObject, ChainError> {
    match arg(args, i)? {
        Value::Object(o) => Ok(o),
        other => Err(ChainError::BadArgument(format!(
            "argument {i} must be an object, got {other:?}"
        ))),
    }
}

fn int(args: &[Value], i: usize) -> Result<i64, ChainError> {
    match arg(args, i)? {
        Value::Int(v) => Ok(*v),
        other => Err(ChainError::BadArgument(format!(
            "argument {i} must be an integer, got {other:?}"
        ))),
    }
}

fn float(args: &[Value], i: usize) -> Result<f64, ChainError> {
    match arg(args, i)? {
        Value::Float(v) => Ok(*v),
        Value::Int(v) => Ok(*v as f64),
        other => Err(ChainError::BadArgument(format!(
            "argument {i} must be a number, got {other:?}"
        ))),
    }
}

fn string(args: &[Value], i: usize) -> Result<&str, ChainError> {
    match arg(args, i)? {
        Value::Str(s) => Ok(s),
        other => Err(ChainError::BadArgument(format!(
            "argument {i} must be a string, got {other:?}"
        ))),
    }
}

fn plain(args: &[Value], i: usize) -> Result<&Tensor, ChainError> {
    match object(args, i)? {
        LocalObject::Plain(t) => Ok(t),
        LocalObject::Fixed { .. } => Err(ChainError::KindMismatch(format!(
            "argument {i} must be a plain tensor, got a fixed-precision one"
        ))),
    }
}

fn float_tensor(args: &[Value], i: usize) -> Result<&Tensor, ChainError> {
    let t = plain(args, i)?;
    if t.dtype() != DType::Float64 {
        return Err(ChainError::KindMismatch(format!(
            "argument {i} must hold floats"
        )));
    }
    Ok(t)
}

fn ring_tensor(args: &[Value], i: usize) -> Result<&Tensor, ChainError> {
    let t = plain(args, i)?;
    if t.dtype() != DType::Ring64 {
        return Err(ChainError::KindMismatch(format!(
            "argument {i} must hold ring elements"
        )));
    }
    Ok(t)
}

fn usize_arg(args: &[Value], i: usize) -> Result<usize, ChainError> {
    let v = int(args, i)?;
    usize::try_from(v)
        .map_err(|_| ChainError::BadArgument(format!("argument {i} must be >= 0, got {v}")))
}

type TensorOp = fn(&Tensor, &Tensor) -> Result<Tensor, crate::tensor::TensorError>;

/// Applies `op` to two operands of the same kind. Fixed-precision products
/// carry twice the fractional bits and are truncated right away.
fn binary(args: &[Value], op: TensorOp, truncate: bool) -> Result<LocalObject, ChainError> {
    match (object(args, 0)?, object(args, 1)?) {
        (LocalObject::Plain(a), LocalObject::Plain(b)) => Ok(LocalObject::Plain(op(a, b)?)),
        (
            LocalObject::Fixed { cfg, payload: a },
            LocalObject::Fixed {
                cfg: cfg_b,
                payload: b,
            },
        ) if cfg == cfg_b => {
            let mut r = op(a, b)?;
            if truncate {
                r = cfg.truncate(&r)?;
            }
            Ok(LocalObject::Fixed {
                cfg: *cfg,
                payload: r,
            })
        }
        (a, b) => Err(ChainError::KindMismatch(format!(
            "operands differ in precision: {:?} vs {:?}",
            a.fixed_cfg(),
            b.fixed_cfg()
        ))),
    }
}

/// Applies a payload-level op, keeping any fixed-precision wrapper.
fn unary(
    args: &[Value],
    op: impl Fn(&Tensor) -> Result<Tensor, ChainError>,
) -> Result<LocalObject, ChainError> {
    Ok(match object(args, 0)? {
        LocalObject::Plain(t) => LocalObject::Plain(op(t)?),
        LocalObject::Fixed { cfg, payload } => LocalObject::Fixed {
            cfg: *cfg,
            payload: op(payload)?,
        },
    })
}

fn add(args: &[Value]) -> Result<LocalObject, ChainError> {
    binary(args, Tensor::add, false)
}

fn sub(args: &[Value]) -> Result<LocalObject, ChainError> {
    binary(args, Tensor::sub, false)
}

fn mul(args: &[Value]) -> Result<LocalObject, ChainError> {
    binary(args, Tensor::mul, true)
}

fn matmul(args: &[Value]) -> Result<LocalObject, ChainError> {
    binary(args, Tensor::matmul, true)
}

fn add_rows(args: &[Value]) -> Result<LocalObject, ChainError> {
    binary(args, Tensor::add_rows, false)
}

fn neg(args: &[Value]) -> Result<LocalObject, ChainError> {
    unary(args, |t| Ok(t.neg()))
}

fn copy(args: &[Value]) -> Result<LocalObject, ChainError> {
    unary(args, |t| Ok(t.clone()))
}

fn transpose(args: &[Value]) -> Result<LocalObject, ChainError> {
    unary(args, |t| Ok(t.transpose()?))
}

fn sum_pool2d(args: &[Value]) -> Result<LocalObject, ChainError> {
    let k = usize_arg(args, 1)?;
    unary(args, |t| Ok(t.sum_pool2d(k)?))
}

/// Window sums scaled by the encoded public constant 1/k^2, then truncated.
pub fn fixed_avg_pool2d(
    cfg: &FixedPointConfig,
    x: &Tensor,
    k: usize,
) -> Result<Tensor, ChainError> {
    if k == 0 {
        return Err(ChainError::BadArgument(
            "window size must be positive".into(),
        ));
    }
    let inv = cfg.encode_scalar(1.0 / (k * k) as f64)?;
    Ok(cfg.truncate(&x.sum_pool2d(k)?.ring_scale(inv)?)?)
}

fn avg_pool2d(args: &[Value]) -> Result<LocalObject, ChainError> {
    let k = usize_arg(args, 1)?;
    match object(args, 0)? {
        LocalObject::Plain(t) => Ok(LocalObject::Plain(t.avg_pool2d(k)?)),
        LocalObject::Fixed { cfg, payload } => Ok(LocalObject::Fixed {
            cfg: *cfg,
            payload: fixed_avg_pool2d(cfg, payload, k)?,
        }),
    }
}

/// Public coefficients of the degree-3 sigmoid, in the order
/// (constant, linear, cubic): 1/2 + x/4 - x^3/48.
pub const SIGMOID_COEFFS: (f64, f64, f64) = (0.5, 0.25, -1.0 / 48.0);

/// The polynomial sigmoid over fixed-point values, truncating after every
/// product. Shared evaluation follows the same steps.
pub fn fixed_sigmoid(cfg: &FixedPointConfig, x: &Tensor) -> Result<Tensor, ChainError> {
    let (c0, c1, c3) = SIGMOID_COEFFS;
    let x2 = cfg.truncate(&x.mul(x)?)?;
    let x3 = cfg.truncate(&x2.mul(x)?)?;
    let t1 = cfg.truncate(&x.ring_scale(cfg.encode_scalar(c1)?)?)?;
    let t3 = cfg.truncate(&x3.ring_scale(cfg.encode_scalar(c3)?)?)?;
    Ok(t1.add(&t3)?.ring_offset(cfg.encode_scalar(c0)?)?)
}

fn sigmoid_poly(args: &[Value]) -> Result<LocalObject, ChainError> {
    match object(args, 0)? {
        LocalObject::Plain(t) => Ok(LocalObject::Plain(t.sigmoid_poly()?)),
        LocalObject::Fixed { cfg, payload } => Ok(LocalObject::Fixed {
            cfg: *cfg,
            payload: fixed_sigmoid(cfg, payload)?,
        }),
    }
}

fn scale(args: &[Value]) -> Result<LocalObject, ChainError> {
    let c = float(args, 1)?;
    match object(args, 0)? {
        LocalObject::Plain(t) => Ok(LocalObject::Plain(t.scale(c)?)),
        LocalObject::Fixed { cfg, payload } => Ok(LocalObject::Fixed {
            cfg: *cfg,
            payload: cfg.truncate(&payload.ring_scale(cfg.encode_scalar(c)?)?)?,
        }),
    }
}

fn frac_bits(args: &[Value], i: usize) -> Result<FixedPointConfig, ChainError> {
    let bits = int(args, i)?;
    let bits = u32::try_from(bits)
        .map_err(|_| ChainError::BadArgument(format!("bad fractional bits {bits}")))?;
    Ok(FixedPointConfig::new(bits)?)
}

fn fix_precision(args: &[Value]) -> Result<LocalObject, ChainError> {
    let t = float_tensor(args, 0)?;
    let cfg = frac_bits(args, 1)?;
    Ok(LocalObject::Fixed {
        cfg,
        payload: cfg.encode(t)?,
    })
}

fn float_precision(args: &[Value]) -> Result<LocalObject, ChainError> {
    match object(args, 0)? {
        LocalObject::Fixed { cfg, payload } => Ok(LocalObject::Plain(cfg.decode(payload)?)),
        LocalObject::Plain(_) => Err(ChainError::KindMismatch(
            "float_precision needs a fixed-precision operand".into(),
        )),
    }
}

fn ring_scale(args: &[Value]) -> Result<LocalObject, ChainError> {
    let t = ring_tensor(args, 0)?;
    Ok(LocalObject::Plain(
        t.ring_scale(from_signed(int(args, 1)?))?,
    ))
}

fn ring_offset(args: &[Value]) -> Result<LocalObject, ChainError> {
    let t = ring_tensor(args, 0)?;
    Ok(LocalObject::Plain(
        t.ring_offset(from_signed(int(args, 1)?))?,
    ))
}

fn trunc_share(args: &[Value]) -> Result<LocalObject, ChainError> {
    let t = ring_tensor(args, 0)?;
    let party = usize_arg(args, 1)?;
    let cfg = frac_bits(args, 2)?;
    Ok(LocalObject::Plain(spdz::truncate_share(t, party, &cfg)?))
}

/// Args: c, a, b, eps, delta, party, kind.
fn beaver_combine(args: &[Value]) -> Result<LocalObject, ChainError> {
    let kind_name = string(args, 6)?;
    let kind = TripleKind::parse(kind_name)
        .ok_or_else(|| ChainError::BadArgument(format!("unknown triple kind {kind_name:?}")))?;
    let z = spdz::beaver_combine(
        kind,
        usize_arg(args, 5)?,
        ring_tensor(args, 0)?,
        ring_tensor(args, 1)?,
        ring_tensor(args, 2)?,
        ring_tensor(args, 3)?,
        ring_tensor(args, 4)?,
    )?;
    Ok(LocalObject::Plain(z))
}

pub fn parse_dims(s: &str) -> Result<Vec<usize>, ChainError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| ChainError::BadArgument(format!("bad dimension list {s:?}")))
        })
        .collect()
}

pub fn model_from_args(params: &Tensor, dims: &str, task: &str) -> Result<Model, ChainError> {
    let task = Task::parse(task)
        .ok_or_else(|| ChainError::BadArgument(format!("unknown task {task:?}")))?;
    let layers =
        mlp_layers(&parse_dims(dims)?, task).map_err(|e| ChainError::Kernel(e.to_string()))?;
    Model::new(layers, params.as_f64()?.to_vec()).map_err(|e| ChainError::Kernel(e.to_string()))
}

/// Rows `[start, start + len)` of a feature matrix and target vector.
pub fn row_slice(
    x: &Tensor,
    y: &Tensor,
    start: usize,
    len: usize,
) -> Result<(Tensor, Vec<f64>), ChainError> {
    let [n, d] = *x.dims() else {
        return Err(ChainError::BadArgument(format!(
            "features must be a matrix, got {}",
            x.shape()
        )));
    };
    let ys = y.as_f64()?;
    if ys.len() != n {
        return Err(ChainError::BadArgument(format!(
            "{n} rows but {} targets",
            ys.len()
        )));
    }
    if len == 0 || start + len > n {
        return Err(ChainError::BadArgument(format!(
            "rows {start}..{} out of 0..{n}",
            start + len
        )));
    }
    let xs = &x.as_f64()?[start * d..(start + len) * d];
    Ok((
        Tensor::from_f64([len, d], xs.to_vec())?,
        ys[start..start + len].to_vec(),
    ))
}

/// Args: params, X, y, dims, task, start, len. Returns the batch gradient
/// with the batch loss appended.
fn batch_gradient(args: &[Value]) -> Result<LocalObject, ChainError> {
    let model = model_from_args(float_tensor(args, 0)?, string(args, 3)?, string(args, 4)?)?;
    let (x, y) = row_slice(
        float_tensor(args, 1)?,
        float_tensor(args, 2)?,
        usize_arg(args, 5)?,
        usize_arg(args, 6)?,
    )?;
    let (loss, mut grad) = model
        .loss_and_grad(&x, &y)
        .map_err(|e| ChainError::Kernel(e.to_string()))?;
    grad.push(loss);
    Ok(LocalObject::Plain(Tensor::vector(grad)))
}
