//! Command execution on a worker.
//!
//! Pure commands go to the chain registry. A few commands need the worker
//! itself: its private random source or its connections to peers.

use rand::seq::index::sample;

use super::codec::{deserialize_object, serialize_object};
use super::{NetError, ObjectId, Request, Worker, WorkerClient, WorkerId};
use crate::chain::registry::{self, model_from_args, parse_dims, Value};
use crate::chain::{Arg, ChainError, Command, LocalObject};
use crate::dp::sanitize_lot;
use crate::spdz::{generate_triple_shares, share_tensor, TripleKey, TripleKind};
use crate::tensor::{DType, Tensor};

/// Splits an object into additive shares and pushes one to each party; the
/// result is the shape of the object as a float vector.
pub const SHARE_OUT: &str = "share_out";
/// Generates a Beaver triple and pushes its shares to the parties.
pub const DEALER_TRIPLE: &str = "dealer_triple";
/// Samples a lot, computes clipped per-example gradients and returns their
/// noisy sum.
pub const DP_LOT_GRADIENT: &str = "dp_lot_gradient";

/// Kwarg: bitmask over argument positions; the objects named there are
/// deleted once the command succeeds.
pub const CONSUME: &str = "consume";

pub fn is_worker_command(name: &str) -> bool {
    matches!(name, SHARE_OUT | DEALER_TRIPLE | DP_LOT_GRADIENT)
}

fn to_net(e: ChainError) -> NetError {
    match e {
        ChainError::UnknownCommand(n) => NetError::UnknownCommand(n),
        ChainError::Net(n) => n,
        other => NetError::Remote(other.to_string()),
    }
}

fn resolve(worker: &Worker, args: &[Arg]) -> Result<Vec<Value>, NetError> {
    args.iter()
        .map(|a| {
            Ok(match a {
                Arg::Object(id) => {
                    Value::Object(deserialize_object(&worker.store().fetch(*id, false)?)?)
                }
                Arg::Int(v) => Value::Int(*v),
                Arg::Float(v) => Value::Float(*v),
                Arg::Str(s) => Value::Str(s.clone()),
            })
        })
        .collect()
}

fn kw_str<'a>(cmd: &'a Command, key: &str) -> Result<&'a str, NetError> {
    match cmd.get_kwarg(key) {
        Some(Arg::Str(s)) => Ok(s),
        _ => Err(NetError::Remote(format!(
            "{}: missing string kwarg {key}",
            cmd.name
        ))),
    }
}

fn kw_int(cmd: &Command, key: &str) -> Result<i64, NetError> {
    match cmd.get_kwarg(key) {
        Some(Arg::Int(v)) => Ok(*v),
        _ => Err(NetError::Remote(format!(
            "{}: missing integer kwarg {key}",
            cmd.name
        ))),
    }
}

fn kw_float(cmd: &Command, key: &str) -> Result<f64, NetError> {
    match cmd.get_kwarg(key) {
        Some(Arg::Float(v)) => Ok(*v),
        Some(Arg::Int(v)) => Ok(*v as f64),
        _ => Err(NetError::Remote(format!(
            "{}: missing numeric kwarg {key}",
            cmd.name
        ))),
    }
}

pub fn parse_parties(s: &str) -> Result<Vec<WorkerId>, NetError> {
    s.split(',').map(WorkerId::new).collect()
}

pub fn parse_ids(s: &str) -> Result<Vec<ObjectId>, NetError> {
    s.split(',')
        .map(|p| {
            p.parse::<u64>()
                .map(ObjectId)
                .map_err(|_| NetError::Malformed(format!("bad object id list {s:?}")))
        })
        .collect()
}

pub fn format_list<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

pub fn format_ids(ids: &[ObjectId]) -> String {
    ids.iter()
        .map(|x| x.0.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Runs `cmd` on `worker`, storing any result under `cmd.result_id`.
pub fn execute(worker: &Worker, cmd: &Command) -> Result<(), NetError> {
    match cmd.name.as_str() {
        SHARE_OUT => share_out(worker, cmd)?,
        DEALER_TRIPLE => dealer_triple(worker, cmd)?,
        DP_LOT_GRADIENT => {
            let out = dp_lot_gradient(worker, cmd)?;
            worker
                .store()
                .insert(cmd.result_id, serialize_object(&out))?;
        }
        name => {
            let kernel =
                registry::lookup(name).ok_or_else(|| NetError::UnknownCommand(name.to_string()))?;
            let args = resolve(worker, &cmd.args)?;
            let out = kernel(&args).map_err(to_net)?;
            worker
                .store()
                .insert(cmd.result_id, serialize_object(&out))?;
        }
    }
    if let Some(Arg::Int(mask)) = cmd.get_kwarg(CONSUME) {
        for (i, a) in cmd.args.iter().enumerate().take(63) {
            if let Arg::Object(id) = a {
                if (mask >> i) & 1 == 1 {
                    // The same id may appear twice.
                    let _ = worker.store().remove(*id);
                }
            }
        }
    }
    Ok(())
}

/// Stores `obj` under `id` on `party`, locally when the party is this worker.
fn push(
    worker: &Worker,
    party: &WorkerId,
    id: ObjectId,
    obj: &LocalObject,
) -> Result<(), NetError> {
    let bytes = serialize_object(obj);
    if party == worker.id() {
        return worker.store().insert(id, bytes);
    }
    let mut client = WorkerClient::new(party.clone(), worker.connect_peer(party)?);
    client.request(Request::Store { id, bytes }).map(|_| ())
}

/// kwargs: parties, ids (one per party), frac_bits (0 for a raw ring tensor).
fn share_out(worker: &Worker, cmd: &Command) -> Result<(), NetError> {
    let parties = parse_parties(kw_str(cmd, "parties")?)?;
    let ids = parse_ids(kw_str(cmd, "ids")?)?;
    if ids.len() != parties.len() {
        return Err(NetError::Remote(
            "share_out: one id per party required".into(),
        ));
    }
    let expected_bits = kw_int(cmd, "frac_bits")?;
    let [Arg::Object(src)] = cmd.args.as_slice() else {
        return Err(NetError::Remote(
            "share_out takes exactly one object".into(),
        ));
    };
    let obj = deserialize_object(&worker.store().fetch(*src, false)?)?;
    let secret = match &obj {
        LocalObject::Fixed { cfg, payload } if i64::from(cfg.frac_bits()) == expected_bits => {
            payload
        }
        LocalObject::Plain(t) if expected_bits == 0 && t.dtype() == DType::Ring64 => t,
        _ => {
            return Err(NetError::Remote(format!(
                "share_out: object {src} does not have {expected_bits} fractional bits"
            )))
        }
    };
    let shares = share_tensor(secret, parties.len(), &mut *worker.rng())
        .map_err(|e| NetError::Remote(e.to_string()))?;
    for ((party, id), share) in parties.iter().zip(&ids).zip(shares) {
        push(worker, party, *id, &LocalObject::Plain(share))?;
    }
    let dims = secret.dims().iter().map(|&d| d as f64).collect();
    worker.store().insert(
        cmd.result_id,
        serialize_object(&LocalObject::Plain(Tensor::vector(dims))),
    )
}

/// kwargs: kind, a_shape, b_shape, parties, ids (a, b, c per party).
fn dealer_triple(worker: &Worker, cmd: &Command) -> Result<(), NetError> {
    let kind_name = kw_str(cmd, "kind")?;
    let kind = TripleKind::parse(kind_name)
        .ok_or_else(|| NetError::Remote(format!("unknown triple kind {kind_name:?}")))?;
    let dims = |key| parse_dims(kw_str(cmd, key)?).map_err(to_net);
    let key = TripleKey::new(kind, &dims("a_shape")?, &dims("b_shape")?)
        .map_err(|e| NetError::Remote(e.to_string()))?;
    let parties = parse_parties(kw_str(cmd, "parties")?)?;
    let ids = parse_ids(kw_str(cmd, "ids")?)?;
    if ids.len() != 3 * parties.len() {
        return Err(NetError::Remote(
            "dealer_triple: three ids per party required".into(),
        ));
    }
    let shares = generate_triple_shares(&key, parties.len(), &mut *worker.rng())
        .map_err(|e| NetError::Remote(e.to_string()))?;
    for (i, (party, triple)) in parties.iter().zip(shares).enumerate() {
        for (j, t) in triple.into_iter().enumerate() {
            push(worker, party, ids[3 * i + j], &LocalObject::Plain(t))?;
        }
    }
    Ok(())
}

/// args: params, X, y. kwargs: dims, task, lot, clip, sigma.
fn dp_lot_gradient(worker: &Worker, cmd: &Command) -> Result<LocalObject, NetError> {
    let args = resolve(worker, &cmd.args)?;
    let tensor = |i: usize| match args.get(i) {
        Some(Value::Object(LocalObject::Plain(t))) => Ok(t),
        _ => Err(NetError::Remote(format!(
            "dp_lot_gradient: argument {i} must be a plain tensor"
        ))),
    };
    let model =
        model_from_args(tensor(0)?, kw_str(cmd, "dims")?, kw_str(cmd, "task")?).map_err(to_net)?;
    let (x, y) = (tensor(1)?, tensor(2)?);
    let n = x.dims().first().copied().unwrap_or(0);
    let lot = usize::try_from(kw_int(cmd, "lot")?).unwrap_or(0);
    if lot == 0 || lot > n {
        return Err(NetError::Remote(format!(
            "lot size {lot} exceeds the {n} local rows"
        )));
    }
    let clip = kw_float(cmd, "clip")?;
    let sigma = kw_float(cmd, "sigma")?;
    let mut rng = worker.rng();
    let mut rows = sample(&mut *rng, n, lot).into_vec();
    rows.sort_unstable();
    let d = x.dims()[1];
    let xs = x.as_f64().map_err(|e| NetError::Remote(e.to_string()))?;
    let ys = y.as_f64().map_err(|e| NetError::Remote(e.to_string()))?;
    let mut lot_x = Vec::with_capacity(lot * d);
    let mut lot_y = Vec::with_capacity(lot);
    for &r in &rows {
        lot_x.extend_from_slice(&xs[r * d..(r + 1) * d]);
        lot_y.push(ys[r]);
    }
    let lot_x = Tensor::from_f64([lot, d], lot_x).map_err(|e| NetError::Remote(e.to_string()))?;
    let grads = model
        .per_example_grads(&lot_x, &lot_y)
        .map_err(|e| NetError::Remote(e.to_string()))?;
    let noisy = sanitize_lot(&grads, clip, sigma, &mut *rng)
        .map_err(|e| NetError::Remote(e.to_string()))?;
    Ok(LocalObject::Plain(Tensor::vector(noisy)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::codec::serialize_object;
    use crate::net::VirtualRegistry;

    fn id(s: &str) -> WorkerId {
        WorkerId::new(s).unwrap()
    }

    fn put(w: &Worker, oid: u64, t: Tensor) {
        w.store()
            .insert(ObjectId(oid), serialize_object(&LocalObject::Plain(t)))
            .unwrap();
    }

    fn get(w: &Worker, oid: u64) -> LocalObject {
        deserialize_object(&w.store().fetch(ObjectId(oid), false).unwrap()).unwrap()
    }

    #[test]
    fn add_executes_and_stores() {
        let w = Worker::new(id("w"), 0);
        put(&w, 1, Tensor::vector(vec![1.0, 2.0]));
        put(&w, 2, Tensor::vector(vec![3.0, 4.0]));
        execute(
            &w,
            &Command::new("add", ObjectId(3))
                .object(ObjectId(1))
                .object(ObjectId(2)),
        )
        .unwrap();
        assert_eq!(
            get(&w, 3),
            LocalObject::Plain(Tensor::vector(vec![4.0, 6.0]))
        );
    }

    #[test]
    fn missing_argument_and_unknown_command() {
        let w = Worker::new(id("w"), 0);
        let e = execute(
            &w,
            &Command::new("add", ObjectId(3))
                .object(ObjectId(1))
                .object(ObjectId(2)),
        );
        assert!(matches!(e, Err(NetError::ObjectNotFound(_))));
        let e = execute(&w, &Command::new("nope", ObjectId(3)));
        assert!(matches!(e, Err(NetError::UnknownCommand(_))));
    }

    #[test]
    fn consume_deletes_inputs() {
        let w = Worker::new(id("w"), 0);
        put(&w, 1, Tensor::vector(vec![1.0]));
        let cmd = Command::new("neg", ObjectId(2))
            .object(ObjectId(1))
            .kwarg(CONSUME, Arg::Int(1));
        execute(&w, &cmd).unwrap();
        assert!(!w.store().contains(ObjectId(1)));
        assert!(w.store().contains(ObjectId(2)));
    }

    #[test]
    fn share_out_pushes_to_peers() {
        let reg = VirtualRegistry::new();
        let owner = reg.spawn(id("owner"), 1).unwrap();
        let a = reg.spawn(id("a"), 2).unwrap();
        let b = reg.spawn(id("b"), 3).unwrap();
        let secret = Tensor::from_ring([2], vec![5, 7]).unwrap();
        put(&owner, 10, secret.clone());
        let cmd = Command::new(SHARE_OUT, ObjectId(0))
            .object(ObjectId(10))
            .kwarg("parties", Arg::Str("a,b".into()))
            .kwarg("ids", Arg::Str("11,12".into()))
            .kwarg("frac_bits", Arg::Int(0))
            .kwarg(CONSUME, Arg::Int(1));
        execute(&owner, &cmd).unwrap();
        assert_eq!(owner.store().ids(), vec![ObjectId(0)]);
        assert_eq!(get(&owner, 0).into_tensor().into_f64().unwrap(), vec![2.0]);
        let sa = get(&a, 11).into_tensor();
        let sb = get(&b, 12).into_tensor();
        assert_eq!(sa.add(&sb).unwrap(), secret);
    }

    #[test]
    fn dealer_pushes_valid_triples() {
        let reg = VirtualRegistry::new();
        let dealer = reg.spawn(id("dealer"), 1).unwrap();
        let a = reg.spawn(id("a"), 2).unwrap();
        let b = reg.spawn(id("b"), 3).unwrap();
        let cmd = Command::new(DEALER_TRIPLE, ObjectId(0))
            .kwarg("kind", Arg::Str("matmul".into()))
            .kwarg("a_shape", Arg::Str("2,3".into()))
            .kwarg("b_shape", Arg::Str("3,2".into()))
            .kwarg("parties", Arg::Str("a,b".into()))
            .kwarg("ids", Arg::Str("1,2,3,4,5,6".into()));
        execute(&dealer, &cmd).unwrap();
        let rec = |w1: &Worker, i1: u64, w2: &Worker, i2: u64| {
            get(w1, i1)
                .into_tensor()
                .add(&get(w2, i2).into_tensor())
                .unwrap()
        };
        let ta = rec(&a, 1, &b, 4);
        let tb = rec(&a, 2, &b, 5);
        let tc = rec(&a, 3, &b, 6);
        assert_eq!(ta.matmul(&tb).unwrap(), tc);
        assert!(dealer.store().is_empty());
    }
}
