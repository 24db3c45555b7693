use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap, VecDeque};
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::node::{GcQueue, Layout};
use super::registry::{self, SIGMOID_COEFFS};
use super::{Arg, Chain, ChainError, Command, LocalObject, Result};
use crate::chain::registry::Value;
use crate::fixedpoint::{to_signed, FixedPointConfig};
use crate::net::codec::{deserialize_object, serialize_object};
use crate::net::exec::{format_ids, format_list, CONSUME, DEALER_TRIPLE, SHARE_OUT};
use crate::net::{IdAllocator, NetError, ObjectId, Request, Response, WorkerClient, WorkerId};
use crate::spdz::{self, SpdzError, Transcript, TripleKey, TripleKind};
use crate::tensor::{DType, Tensor};

const RNG_DOMAIN: u64 = 0x5eed_1ead_0000_0001;

/// Remote shares of one secret: `ids[i]` lives on `parties[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShareRefs {
    pub parties: Vec<WorkerId>,
    pub ids: Vec<ObjectId>,
    pub shape: Vec<usize>,
}

/// Argument to [`Session::call`].
pub enum CallArg<'a> {
    /// Stored on the worker for the duration of the call.
    Upload(LocalObject),
    /// A pointer chain already resident on the worker.
    Remote(&'a Chain),
    Lit(Arg),
}

type TripleShelf = HashMap<(TripleKey, Vec<WorkerId>), VecDeque<Vec<[ObjectId; 3]>>>;

enum Operand {
    Shared(ShareRefs),
    Public(LocalObject),
}

/// The leader: owns connections to workers, allocates object ids, and turns
/// chain operations into worker requests.
pub struct Session {
    me: WorkerId,
    clients: BTreeMap<WorkerId, WorkerClient>,
    ids: IdAllocator,
    rng: ChaCha20Rng,
    gc: GcQueue,
    dealer: Option<WorkerId>,
    triples: TripleShelf,
    transcript: Transcript,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("me", &self.me)
            .field("workers", &self.clients.keys().collect::<Vec<_>>())
            .field("dealer", &self.dealer)
            .finish()
    }
}

fn ring_object(t: Tensor) -> Vec<u8> {
    serialize_object(&LocalObject::Plain(t))
}

impl Session {
    pub fn new(me: WorkerId, seed: u64) -> Self {
        Session {
            me,
            clients: BTreeMap::new(),
            ids: IdAllocator::new(seed),
            rng: ChaCha20Rng::seed_from_u64(seed ^ RNG_DOMAIN),
            gc: Rc::new(RefCell::new(Vec::new())),
            dealer: None,
            triples: HashMap::new(),
            transcript: Transcript::default(),
        }
    }

    pub fn me(&self) -> &WorkerId {
        &self.me
    }

    pub fn add_worker(&mut self, client: WorkerClient) {
        self.clients.insert(client.worker().clone(), client);
    }

    pub fn workers(&self) -> Vec<WorkerId> {
        self.clients.keys().cloned().collect()
    }

    /// Names the worker acting as trusted triple dealer.
    pub fn set_dealer(&mut self, id: WorkerId) {
        self.dealer = Some(id);
    }

    pub fn client(&mut self, id: &WorkerId) -> Result<&mut WorkerClient> {
        self.clients
            .get_mut(id)
            .ok_or_else(|| ChainError::Net(NetError::WorkerUnknown(id.to_string())))
    }

    pub fn fresh_id(&mut self) -> ObjectId {
        self.ids.fresh()
    }

    /// Values opened during shared multiplications so far.
    pub fn transcript(&self) -> Transcript {
        self.transcript
    }

    pub fn tensor(&self, t: Tensor) -> Chain {
        Chain::local(&self.me, t)
    }

    fn pointer_chain(&self, location: WorkerId, id: ObjectId) -> Chain {
        Chain::pointer(&self.me, location, id, Some(self.gc.clone()))
    }

    fn shared_chain(&self, cfg: Option<FixedPointConfig>, refs: &ShareRefs) -> Chain {
        Chain::shared(&self.me, cfg, refs, Some(self.gc.clone()))
    }

    /// Sends deletes for remote objects whose pointers were dropped.
    /// Failures are logged, not raised.
    pub fn collect_garbage(&mut self) {
        let pending: Vec<_> = self.gc.borrow_mut().drain(..).collect();
        if pending.is_empty() {
            return;
        }
        let mut by_worker: BTreeMap<WorkerId, Vec<Request>> = BTreeMap::new();
        for (w, id) in pending {
            by_worker.entry(w).or_default().push(Request::Delete { id });
        }
        for (w, reqs) in by_worker {
            let Some(client) = self.clients.get_mut(&w) else {
                log::warn!("cannot collect objects on unknown worker {w}");
                continue;
            };
            match client.pipeline(reqs) {
                Ok(replies) => {
                    for r in replies.into_iter().filter_map(|r| r.err()) {
                        log::debug!("delete on {w} failed: {r}");
                    }
                }
                Err(e) => log::warn!("delete on {w} failed: {e}"),
            }
        }
    }

    fn flight(&mut self, worker: &WorkerId, reqs: Vec<Request>) -> Result<Vec<Response>> {
        let replies = self.client(worker)?.pipeline(reqs)?;
        replies
            .into_iter()
            .map(|r| r.map_err(ChainError::from))
            .collect()
    }

    /// Moves a local chain to `to`; locally it becomes `head -> Pointer`.
    pub fn send(&mut self, chain: &mut Chain, to: &WorkerId) -> Result<()> {
        self.collect_garbage();
        let obj = chain.local_object().ok_or_else(|| {
            ChainError::KindMismatch(
                "send needs a local chain; pointers cannot be forwarded".into(),
            )
        })?;
        let id = self.fresh_id();
        self.client(to)?.store(id, serialize_object(&obj))?;
        chain.replace_with(self.pointer_chain(to.clone(), id));
        Ok(())
    }

    /// Brings a pointer or shared chain back: the remote objects are
    /// deleted and the chain becomes local again.
    pub fn get(&mut self, chain: &mut Chain) -> Result<()> {
        self.collect_garbage();
        let obj = match chain.layout() {
            Layout::Local { .. } => {
                return Err(ChainError::KindMismatch(
                    "get needs a pointer or shared chain".into(),
                ))
            }
            Layout::Pointer {
                location,
                remote_id,
                ..
            } => deserialize_object(&self.client(&location)?.fetch(remote_id, true)?)?,
            Layout::Shared { cfg, refs } => {
                let mut shares = Vec::with_capacity(refs.ids.len());
                for (p, id) in refs.parties.iter().zip(&refs.ids) {
                    shares.push(
                        deserialize_object(&self.client(p)?.fetch(*id, false)?)?.into_tensor(),
                    );
                }
                for (p, id) in refs.parties.iter().zip(&refs.ids) {
                    self.client(p)?.delete(*id)?;
                }
                let secret = spdz::reconstruct_shares(&shares)?;
                match cfg {
                    Some(cfg) => LocalObject::Fixed {
                        cfg,
                        payload: secret,
                    },
                    None => LocalObject::Plain(secret),
                }
            }
        };
        chain.replace_with(Chain::from_object(&self.me, obj));
        Ok(())
    }

    /// `head -> Local(float)` becomes `head -> FixedPrecision -> Local(ring)`.
    pub fn fix_precision(&mut self, chain: &mut Chain, cfg: FixedPointConfig) -> Result<()> {
        match chain.local_object() {
            Some(LocalObject::Plain(t)) if t.dtype() == DType::Float64 => {
                let payload = cfg.encode(&t)?;
                chain.replace_with(Chain::from_object(
                    &self.me,
                    LocalObject::Fixed { cfg, payload },
                ));
                Ok(())
            }
            _ => Err(ChainError::KindMismatch(
                "fix_precision needs a local float chain".into(),
            )),
        }
    }

    pub fn float_precision(&mut self, chain: &mut Chain) -> Result<()> {
        match chain.local_object() {
            Some(LocalObject::Fixed { cfg, payload }) => {
                chain.replace_with(Chain::local(&self.me, cfg.decode(&payload)?));
                Ok(())
            }
            _ => Err(ChainError::KindMismatch(
                "float_precision needs a local fixed-precision chain".into(),
            )),
        }
    }

    fn check_parties(parties: &[WorkerId]) -> Result<()> {
        if parties.len() < 2 {
            return Err(SpdzError::Config(format!(
                "sharing needs at least 2 parties, got {}",
                parties.len()
            ))
            .into());
        }
        for (i, p) in parties.iter().enumerate() {
            if parties[..i].contains(p) {
                return Err(SpdzError::Config(format!("party {p} listed twice")).into());
            }
        }
        Ok(())
    }

    /// Splits a local fixed-precision (or raw ring) chain into additive
    /// shares held by `parties`.
    pub fn share(&mut self, chain: &mut Chain, parties: &[WorkerId]) -> Result<()> {
        self.collect_garbage();
        Self::check_parties(parties)?;
        let (cfg, secret) = match chain.local_object() {
            Some(LocalObject::Fixed { cfg, payload }) => (Some(cfg), payload),
            Some(LocalObject::Plain(t)) if t.dtype() == DType::Ring64 => (None, t),
            _ => {
                return Err(ChainError::KindMismatch(
                    "share needs a local fixed-precision or ring chain".into(),
                ))
            }
        };
        let shares = spdz::share_tensor(&secret, parties.len(), &mut self.rng)?;
        let mut ids = Vec::with_capacity(parties.len());
        for (p, s) in parties.iter().zip(shares) {
            let id = self.fresh_id();
            self.client(p)?.store(id, ring_object(s))?;
            ids.push(id);
        }
        let refs = ShareRefs {
            parties: parties.to_vec(),
            ids,
            shape: secret.dims().to_vec(),
        };
        chain.replace_with(self.shared_chain(cfg, &refs));
        Ok(())
    }

    /// Shares data the leader cannot see. The owning worker splits the
    /// object itself and pushes the shares to the parties; the leader only
    /// learns the shape. `cfg` is the precision the remote object must have
    /// (`None` for a raw ring tensor).
    pub fn share_remote(
        &mut self,
        chain: &mut Chain,
        parties: &[WorkerId],
        cfg: Option<FixedPointConfig>,
    ) -> Result<()> {
        self.collect_garbage();
        Self::check_parties(parties)?;
        let Layout::Pointer {
            location,
            remote_id,
            ..
        } = chain.layout()
        else {
            return Err(ChainError::KindMismatch(
                "share_remote needs a pointer chain".into(),
            ));
        };
        let ids: Vec<ObjectId> = parties.iter().map(|_| self.fresh_id()).collect();
        let rid = self.fresh_id();
        let cmd = Command::new(SHARE_OUT, rid)
            .object(remote_id)
            .kwarg("parties", Arg::Str(format_list(parties)))
            .kwarg("ids", Arg::Str(format_ids(&ids)))
            .kwarg(
                "frac_bits",
                Arg::Int(cfg.map_or(0, |c| i64::from(c.frac_bits()))),
            )
            .kwarg(CONSUME, Arg::Int(1));
        let replies = self.flight(
            &location,
            vec![
                Request::Execute(cmd),
                Request::Get {
                    id: rid,
                    delete: true,
                },
            ],
        )?;
        let Some(Response::Bytes(b)) = replies.last() else {
            return Err(NetError::UnexpectedReply("share_out returned no shape".into()).into());
        };
        let shape = deserialize_object(b)?
            .into_tensor()
            .into_f64()?
            .into_iter()
            .map(|d| d as usize)
            .collect();
        let refs = ShareRefs {
            parties: parties.to_vec(),
            ids,
            shape,
        };
        chain.replace_with(self.shared_chain(cfg, &refs));
        Ok(())
    }

    /// Has the dealer generate `count` triples for operands of the given
    /// shapes and push their shares to `parties`.
    pub fn preprocess(
        &mut self,
        kind: TripleKind,
        a_shape: &[usize],
        b_shape: &[usize],
        parties: &[WorkerId],
        count: usize,
    ) -> Result<()> {
        Self::check_parties(parties)?;
        let dealer = self
            .dealer
            .clone()
            .ok_or_else(|| SpdzError::Config("no dealer configured".into()))?;
        if count == 0 {
            return Err(SpdzError::Config("triple count must be at least 1".into()).into());
        }
        let key = TripleKey::new(kind, a_shape, b_shape)?;
        let mut reqs = Vec::with_capacity(count);
        let mut handles = Vec::with_capacity(count);
        for _ in 0..count {
            let per_party: Vec<[ObjectId; 3]> = parties
                .iter()
                .map(|_| [self.fresh_id(), self.fresh_id(), self.fresh_id()])
                .collect();
            let flat: Vec<ObjectId> = per_party.iter().flatten().copied().collect();
            let rid = self.fresh_id();
            let cmd = Command::new(DEALER_TRIPLE, rid)
                .kwarg("kind", Arg::Str(kind.name().into()))
                .kwarg("a_shape", Arg::Str(format_list(a_shape)))
                .kwarg("b_shape", Arg::Str(format_list(b_shape)))
                .kwarg("parties", Arg::Str(format_list(parties)))
                .kwarg("ids", Arg::Str(format_ids(&flat)));
            reqs.push(Request::Execute(cmd));
            handles.push(per_party);
        }
        self.flight(&dealer, reqs)?;
        self.triples
            .entry((key, parties.to_vec()))
            .or_default()
            .extend(handles);
        Ok(())
    }

    pub fn triples_available(
        &self,
        kind: TripleKind,
        a_shape: &[usize],
        b_shape: &[usize],
        parties: &[WorkerId],
    ) -> usize {
        TripleKey::new(kind, a_shape, b_shape)
            .ok()
            .and_then(|k| self.triples.get(&(k, parties.to_vec())))
            .map_or(0, VecDeque::len)
    }

    /// Runs a registered command on chains of one kind: locally, on the
    /// owning worker, or as a protocol over shares.
    pub fn dispatch(&mut self, name: &str, operands: &[&Chain], literals: &[Arg]) -> Result<Chain> {
        if registry::lookup(name).is_none() {
            return Err(ChainError::UnknownCommand(name.to_string()));
        }
        if let Some(a) = literals.iter().find(|a| !a.is_literal()) {
            return Err(ChainError::BadArgument(format!("{a:?} is not a literal")));
        }
        self.collect_garbage();
        let layouts: Vec<Layout> = operands.iter().map(|c| c.layout()).collect();
        if layouts.iter().all(|l| matches!(l, Layout::Local { .. })) {
            let mut vals: Vec<Value> = operands
                .iter()
                .map(|c| Value::Object(c.local_object().expect("local layout")))
                .collect();
            vals.extend(literals.iter().map(literal_value));
            let out = registry::run(name, &vals)?;
            return Ok(Chain::from_object(&self.me, out));
        }
        if layouts.iter().all(|l| matches!(l, Layout::Pointer { .. })) {
            let mut location: Option<WorkerId> = None;
            let rid = self.fresh_id();
            let mut cmd = Command::new(name, rid);
            for l in &layouts {
                let Layout::Pointer {
                    location: loc,
                    remote_id,
                    ..
                } = l
                else {
                    unreachable!()
                };
                match &location {
                    Some(first) if first != loc => {
                        return Err(ChainError::KindMismatch(format!(
                            "operands live on {first} and {loc}; move them to one worker first"
                        )))
                    }
                    _ => location = Some(loc.clone()),
                }
                cmd = cmd.object(*remote_id);
            }
            for a in literals {
                cmd = cmd.arg(a.clone());
            }
            let location = location.ok_or_else(|| ChainError::BadArgument("no operands".into()))?;
            self.client(&location)?.execute(cmd)?;
            return Ok(self.pointer_chain(location, rid));
        }
        if layouts.iter().any(|l| matches!(l, Layout::Shared { .. })) {
            return self.shared_dispatch(name, operands, layouts, literals);
        }
        Err(ChainError::KindMismatch(
            "cannot combine local and remote operands; send the local one first".into(),
        ))
    }

    fn shared_dispatch(
        &mut self,
        name: &str,
        operands: &[&Chain],
        layouts: Vec<Layout>,
        literals: &[Arg],
    ) -> Result<Chain> {
        let mut cfg = None;
        let mut parties: Option<Vec<WorkerId>> = None;
        let mut ops = Vec::with_capacity(layouts.len());
        for (chain, l) in operands.iter().zip(layouts) {
            match l {
                Layout::Shared { cfg: c, refs } => {
                    if let Some(p) = &parties {
                        if *p != refs.parties {
                            return Err(SpdzError::PartyMismatch.into());
                        }
                        if c != cfg {
                            return Err(ChainError::KindMismatch(
                                "shared operands differ in precision".into(),
                            ));
                        }
                    }
                    cfg = c;
                    parties = Some(refs.parties.clone());
                    ops.push(Operand::Shared(refs));
                }
                Layout::Local { .. } => {
                    ops.push(Operand::Public(chain.local_object().expect("local layout")))
                }
                Layout::Pointer { .. } => {
                    return Err(ChainError::KindMismatch(
                        "cannot combine a pointer with a shared tensor".into(),
                    ))
                }
            }
        }
        let parties = parties.expect("at least one shared operand");
        for op in &ops {
            if let Operand::Public(obj) = op {
                let ok = match (obj, cfg) {
                    (LocalObject::Fixed { cfg: c, .. }, Some(cfg)) => *c == cfg,
                    (LocalObject::Plain(t), None) => t.dtype() == DType::Ring64,
                    _ => false,
                };
                if !ok {
                    return Err(ChainError::KindMismatch(
                        "public operand must match the shared operand's encoding".into(),
                    ));
                }
            }
        }

        // Dry run on zeros: validates arguments and yields the output shape.
        let mut probe: Vec<Value> = ops
            .iter()
            .map(|op| match op {
                Operand::Shared(r) => {
                    let z = Tensor::zeros(r.shape.clone(), DType::Ring64);
                    Value::Object(match cfg {
                        Some(cfg) => LocalObject::Fixed { cfg, payload: z },
                        None => LocalObject::Plain(z),
                    })
                }
                Operand::Public(obj) => Value::Object(obj.clone()),
            })
            .collect();
        probe.extend(literals.iter().map(literal_value));
        let shape = registry::run(name, &probe)?.tensor().dims().to_vec();

        use Operand::{Public as P, Shared as S};
        let ids = match (name, ops.as_slice()) {
            ("add" | "sub" | "add_rows", [S(x), S(y)]) => {
                self.per_party(&parties, |s, i, reqs| {
                    Ok(s.push_exec(
                        reqs,
                        name,
                        vec![Arg::Object(x.ids[i]), Arg::Object(y.ids[i])],
                        0,
                    ))
                })?
            }
            ("neg" | "copy" | "transpose" | "sum_pool2d", [S(x)]) => {
                self.per_party(&parties, |s, i, reqs| {
                    let mut args = vec![Arg::Object(x.ids[i])];
                    args.extend(literals.iter().cloned());
                    Ok(s.push_exec(reqs, name, args, 0))
                })?
            }
            ("add" | "sub" | "add_rows", [S(x), P(c)]) => {
                self.public_add(name, &parties, x, c, false)?
            }
            ("add" | "sub", [P(c), S(x)]) => self.public_add(name, &parties, x, c, true)?,
            ("mul", [S(x), S(y)]) => self.beaver(TripleKind::Elementwise, x, y, cfg)?,
            ("matmul", [S(x), S(y)]) => self.beaver(TripleKind::Matmul, x, y, cfg)?,
            ("mul" | "matmul", [S(x), P(c)]) => {
                self.public_mul(name, &parties, x, c, cfg, false)?
            }
            ("mul" | "matmul", [P(c), S(x)]) => self.public_mul(name, &parties, x, c, cfg, true)?,
            ("scale", [S(x)]) => {
                let cfg = need_fixed(cfg, name)?;
                let Some(Arg::Float(c)) = literals.first() else {
                    return Err(ChainError::BadArgument("scale needs a float factor".into()));
                };
                let enc = to_signed(cfg.encode_scalar(*c)?);
                self.per_party(&parties, |s, i, reqs| {
                    let r = s.push_exec(
                        reqs,
                        "ring_scale",
                        vec![Arg::Object(x.ids[i]), Arg::Int(enc)],
                        0,
                    );
                    Ok(s.push_trunc(reqs, r, i, cfg))
                })?
            }
            ("avg_pool2d", [S(x)]) => {
                let cfg = need_fixed(cfg, name)?;
                let Some(Arg::Int(k)) = literals.first() else {
                    return Err(ChainError::BadArgument(
                        "avg_pool2d needs a window size".into(),
                    ));
                };
                let k = *k;
                let inv = to_signed(cfg.encode_scalar(1.0 / (k * k) as f64)?);
                self.per_party(&parties, |s, i, reqs| {
                    let sum = s.push_exec(
                        reqs,
                        "sum_pool2d",
                        vec![Arg::Object(x.ids[i]), Arg::Int(k)],
                        0,
                    );
                    let r =
                        s.push_exec(reqs, "ring_scale", vec![Arg::Object(sum), Arg::Int(inv)], 1);
                    Ok(s.push_trunc(reqs, r, i, cfg))
                })?
            }
            ("sigmoid_poly", [S(x)]) => {
                let cfg = need_fixed(cfg, name)?;
                self.shared_sigmoid(x, cfg)?
            }
            _ => {
                return Err(ChainError::KindMismatch(format!(
                    "{name} is not supported with these operands on shared tensors"
                )))
            }
        };
        let refs = ShareRefs {
            parties,
            ids,
            shape,
        };
        Ok(self.shared_chain(cfg, &refs))
    }

    /// Builds and sends one pipelined flight per party; `build` returns the
    /// id of that party's output share.
    fn per_party<F>(&mut self, parties: &[WorkerId], mut build: F) -> Result<Vec<ObjectId>>
    where
        F: FnMut(&mut Self, usize, &mut Vec<Request>) -> Result<ObjectId>,
    {
        let mut out = Vec::with_capacity(parties.len());
        for (i, p) in parties.iter().enumerate() {
            let mut reqs = Vec::new();
            let id = build(self, i, &mut reqs)?;
            self.flight(p, reqs)?;
            out.push(id);
        }
        Ok(out)
    }

    fn push_exec(
        &mut self,
        reqs: &mut Vec<Request>,
        name: &str,
        args: Vec<Arg>,
        consume: i64,
    ) -> ObjectId {
        let rid = self.fresh_id();
        let mut cmd = Command::new(name, rid);
        cmd.args = args;
        if consume != 0 {
            cmd = cmd.kwarg(CONSUME, Arg::Int(consume));
        }
        reqs.push(Request::Execute(cmd));
        rid
    }

    fn push_trunc(
        &mut self,
        reqs: &mut Vec<Request>,
        id: ObjectId,
        party: usize,
        cfg: FixedPointConfig,
    ) -> ObjectId {
        let args = vec![
            Arg::Object(id),
            Arg::Int(party as i64),
            Arg::Int(i64::from(cfg.frac_bits())),
        ];
        self.push_exec(reqs, "trunc_share", args, 1)
    }

    fn push_store(&mut self, reqs: &mut Vec<Request>, bytes: Vec<u8>) -> ObjectId {
        let id = self.fresh_id();
        reqs.push(Request::Store { id, bytes });
        id
    }

    /// Public addend goes to party 0 only; the others pass their share on
    /// (negated for `c - x`).
    fn public_add(
        &mut self,
        name: &str,
        parties: &[WorkerId],
        x: &ShareRefs,
        c: &LocalObject,
        c_left: bool,
    ) -> Result<Vec<ObjectId>> {
        let bytes = ring_object(c.tensor().clone());
        self.per_party(parties, |s, i, reqs| {
            let xi = Arg::Object(x.ids[i]);
            if i == 0 {
                let cid = Arg::Object(s.push_store(reqs, bytes.clone()));
                let (args, mask) = if c_left {
                    (vec![cid, xi], 0b01)
                } else {
                    (vec![xi, cid], 0b10)
                };
                Ok(s.push_exec(reqs, name, args, mask))
            } else if name == "sub" && c_left {
                Ok(s.push_exec(reqs, "neg", vec![xi], 0))
            } else {
                Ok(s.push_exec(reqs, "copy", vec![xi], 0))
            }
        })
    }

    fn public_mul(
        &mut self,
        name: &str,
        parties: &[WorkerId],
        x: &ShareRefs,
        c: &LocalObject,
        cfg: Option<FixedPointConfig>,
        c_left: bool,
    ) -> Result<Vec<ObjectId>> {
        let bytes = ring_object(c.tensor().clone());
        self.per_party(parties, |s, i, reqs| {
            let xi = Arg::Object(x.ids[i]);
            let cid = Arg::Object(s.push_store(reqs, bytes.clone()));
            let (args, mask) = if c_left {
                (vec![cid, xi], 0b01)
            } else {
                (vec![xi, cid], 0b10)
            };
            let r = s.push_exec(reqs, name, args, mask);
            Ok(match cfg {
                Some(cfg) => s.push_trunc(reqs, r, i, cfg),
                None => r,
            })
        })
    }

    /// Beaver multiplication: each party masks its shares with the triple,
    /// the leader opens eps and delta, then every party combines locally.
    fn beaver(
        &mut self,
        kind: TripleKind,
        x: &ShareRefs,
        y: &ShareRefs,
        cfg: Option<FixedPointConfig>,
    ) -> Result<Vec<ObjectId>> {
        let key = TripleKey::new(kind, &x.shape, &y.shape)?;
        let triple = self
            .triples
            .get_mut(&(key.clone(), x.parties.clone()))
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| SpdzError::InsufficientTriples(key.describe()))?;

        let mut eps_parts = Vec::with_capacity(x.parties.len());
        let mut delta_parts = Vec::with_capacity(x.parties.len());
        for (i, p) in x.parties.iter().enumerate() {
            let [a, b, _] = triple[i];
            let mut reqs = Vec::with_capacity(4);
            let e = self.push_exec(
                &mut reqs,
                "sub",
                vec![Arg::Object(x.ids[i]), Arg::Object(a)],
                0,
            );
            let d = self.push_exec(
                &mut reqs,
                "sub",
                vec![Arg::Object(y.ids[i]), Arg::Object(b)],
                0,
            );
            reqs.push(Request::Get {
                id: e,
                delete: true,
            });
            reqs.push(Request::Get {
                id: d,
                delete: true,
            });
            let replies = self.flight(p, reqs)?;
            eps_parts.push(reply_tensor(&replies[2])?);
            delta_parts.push(reply_tensor(&replies[3])?);
        }
        let eps = ring_object(spdz::reconstruct_shares(&eps_parts)?);
        let delta = ring_object(spdz::reconstruct_shares(&delta_parts)?);
        self.transcript.openings += 2;
        self.transcript.rounds += 1;

        let parties = x.parties.clone();
        self.per_party(&parties, |s, i, reqs| {
            let [a, b, c] = triple[i];
            let eid = s.push_store(reqs, eps.clone());
            let did = s.push_store(reqs, delta.clone());
            let args = vec![
                Arg::Object(c),
                Arg::Object(a),
                Arg::Object(b),
                Arg::Object(eid),
                Arg::Object(did),
                Arg::Int(i as i64),
                Arg::Str(kind.name().into()),
            ];
            let z = s.push_exec(reqs, "beaver_combine", args, 0b11111);
            Ok(match cfg {
                Some(cfg) => s.push_trunc(reqs, z, i, cfg),
                None => z,
            })
        })
    }

    fn shared_sigmoid(&mut self, x: &ShareRefs, cfg: FixedPointConfig) -> Result<Vec<ObjectId>> {
        let (c0, c1, c3) = SIGMOID_COEFFS;
        let (c0, c1, c3) = (
            to_signed(cfg.encode_scalar(c0)?),
            to_signed(cfg.encode_scalar(c1)?),
            to_signed(cfg.encode_scalar(c3)?),
        );
        let x2 = ShareRefs {
            ids: self.beaver(TripleKind::Elementwise, x, x, Some(cfg))?,
            ..x.clone()
        };
        let x3 = ShareRefs {
            ids: self.beaver(TripleKind::Elementwise, &x2, x, Some(cfg))?,
            ..x.clone()
        };
        self.per_party(&x.parties, |s, i, reqs| {
            reqs.push(Request::Delete { id: x2.ids[i] });
            let t1 = s.push_exec(
                reqs,
                "ring_scale",
                vec![Arg::Object(x.ids[i]), Arg::Int(c1)],
                0,
            );
            let t1 = s.push_trunc(reqs, t1, i, cfg);
            let t3 = s.push_exec(
                reqs,
                "ring_scale",
                vec![Arg::Object(x3.ids[i]), Arg::Int(c3)],
                1,
            );
            let t3 = s.push_trunc(reqs, t3, i, cfg);
            let sum = s.push_exec(reqs, "add", vec![Arg::Object(t1), Arg::Object(t3)], 0b11);
            Ok(if i == 0 {
                s.push_exec(reqs, "ring_offset", vec![Arg::Object(sum), Arg::Int(c0)], 1)
            } else {
                sum
            })
        })
    }

    /// Runs `name` on `worker` in a single pipelined flight: uploads, the
    /// command (consuming the uploads), and a fetch of the result.
    pub fn call(
        &mut self,
        worker: &WorkerId,
        name: &str,
        args: Vec<CallArg<'_>>,
        kwargs: Vec<(String, Arg)>,
    ) -> Result<LocalObject> {
        self.collect_garbage();
        let mut reqs = Vec::with_capacity(args.len() + 2);
        let mut cmd_args = Vec::with_capacity(args.len());
        let mut uploads = Vec::new();
        let mut mask = 0i64;
        for (i, a) in args.into_iter().enumerate() {
            match a {
                CallArg::Upload(obj) => {
                    let id = self.push_store(&mut reqs, serialize_object(&obj));
                    uploads.push(id);
                    if i < 63 {
                        mask |= 1 << i;
                    }
                    cmd_args.push(Arg::Object(id));
                }
                CallArg::Remote(chain) => {
                    let Layout::Pointer {
                        location,
                        remote_id,
                        ..
                    } = chain.layout()
                    else {
                        return Err(ChainError::KindMismatch(
                            "remote argument must be a pointer chain".into(),
                        ));
                    };
                    if &location != worker {
                        return Err(ChainError::KindMismatch(format!(
                            "argument lives on {location}, not {worker}"
                        )));
                    }
                    cmd_args.push(Arg::Object(remote_id));
                }
                CallArg::Lit(a) => cmd_args.push(a),
            }
        }
        let rid = self.fresh_id();
        let mut cmd = Command::new(name, rid);
        cmd.args = cmd_args;
        for (k, v) in kwargs {
            cmd = cmd.kwarg(k, v);
        }
        if mask != 0 {
            cmd = cmd.kwarg(CONSUME, Arg::Int(mask));
        }
        let exec_at = reqs.len();
        reqs.push(Request::Execute(cmd));
        reqs.push(Request::Get {
            id: rid,
            delete: true,
        });
        let mut replies = self.client(worker)?.pipeline(reqs)?;
        if let Err(e) = &replies[exec_at] {
            let mut gc = self.gc.borrow_mut();
            gc.extend(uploads.into_iter().map(|id| (worker.clone(), id)));
            return Err(e.clone().into());
        }
        match replies.pop() {
            Some(Ok(Response::Bytes(b))) => Ok(deserialize_object(&b)?),
            Some(Err(e)) => Err(e.into()),
            _ => Err(NetError::UnexpectedReply(format!("{name} returned no object")).into()),
        }
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.collect_garbage();
        let shelf = std::mem::take(&mut self.triples);
        for ((_, parties), queue) in shelf {
            for handles in queue {
                for (p, ids) in parties.iter().zip(handles) {
                    self.gc
                        .borrow_mut()
                        .extend(ids.iter().map(|id| (p.clone(), *id)));
                }
            }
        }
        self.collect_garbage();
    }
}

fn need_fixed(cfg: Option<FixedPointConfig>, name: &str) -> Result<FixedPointConfig> {
    cfg.ok_or_else(|| {
        ChainError::KindMismatch(format!("shared {name} needs fixed-precision shares"))
    })
}

fn reply_tensor(r: &Response) -> Result<Tensor> {
    match r {
        Response::Bytes(b) => Ok(deserialize_object(b)?.into_tensor()),
        other => {
            Err(NetError::UnexpectedReply(format!("expected object bytes, got {other:?}")).into())
        }
    }
}

fn literal_value(a: &Arg) -> Value {
    match a {
        Arg::Object(id) => unreachable!("literal expected, got object {id}"),
        Arg::Int(v) => Value::Int(*v),
        Arg::Float(v) => Value::Float(*v),
        Arg::Str(s) => Value::Str(s.clone()),
    }
}
