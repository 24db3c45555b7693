//! Additive secret sharing over Z_{2^62} and the Beaver-triple protocols.
//!
//! The functions here are the protocol itself, run over in-memory share
//! vectors. The per-party steps ([`truncate_share`], [`beaver_combine`]) are
//! also what workers execute when the same protocol runs over the network
//! through the chain runtime.

mod dealer;

use rand::Rng;
use thiserror::Error;

use crate::fixedpoint::FixedPointConfig;
use crate::net::WorkerId;
use crate::tensor::{ring_reduce, Shape, Tensor, TensorError, RING_MODULUS};

pub use dealer::{dealer_generate, generate_triple_shares, Dealer, TripleKey};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpdzError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("share vectors are held by different parties")]
    PartyMismatch,
    #[error("triple does not fit the operands: {0}")]
    TripleShapeMismatch(String),
    #[error("no preprocessed triple left for {0}")]
    InsufficientTriples(String),
    #[error("no shares to reconstruct")]
    EmptyShares,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, SpdzError>;

/// One ring tensor per party; the secret is their sum mod Q.
#[derive(Debug, Clone, PartialEq)]
pub struct ShareVector {
    parties: Vec<WorkerId>,
    shares: Vec<Tensor>,
}

impl ShareVector {
    pub fn new(parties: Vec<WorkerId>, shares: Vec<Tensor>) -> Result<Self> {
        if parties.len() < 2 {
            return Err(SpdzError::Config(format!(
                "sharing needs at least 2 parties, got {}",
                parties.len()
            )));
        }
        if parties.len() != shares.len() {
            return Err(SpdzError::Config("one share per party required".into()));
        }
        let shape = shares[0].shape();
        for s in &shares {
            s.as_ring()?;
            if s.shape() != shape {
                return Err(SpdzError::Tensor(TensorError::ShapeMismatch {
                    op: "share",
                    left: shape.clone(),
                    right: s.shape().clone(),
                }));
            }
        }
        Ok(ShareVector { parties, shares })
    }

    pub fn parties(&self) -> &[WorkerId] {
        &self.parties
    }

    pub fn shares(&self) -> &[Tensor] {
        &self.shares
    }

    pub fn into_shares(self) -> Vec<Tensor> {
        self.shares
    }

    pub fn shape(&self) -> &Shape {
        self.shares[0].shape()
    }

    fn same_parties(&self, other: &ShareVector) -> Result<()> {
        if self.parties != other.parties {
            return Err(SpdzError::PartyMismatch);
        }
        Ok(())
    }

    fn map_shares(&self, f: impl Fn(usize, &Tensor) -> Result<Tensor>) -> Result<ShareVector> {
        let shares = self
            .shares
            .iter()
            .enumerate()
            .map(|(i, s)| f(i, s))
            .collect::<Result<Vec<_>>>()?;
        Ok(ShareVector {
            parties: self.parties.clone(),
            shares,
        })
    }
}

/// Counts values opened to all parties during a protocol run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Transcript {
    pub openings: usize,
    pub rounds: usize,
}

/// Splits a ring tensor into `n` shares: n-1 uniform, the last fixing the sum.
pub fn share_tensor<R: Rng + ?Sized>(x: &Tensor, n: usize, rng: &mut R) -> Result<Vec<Tensor>> {
    if n < 2 {
        return Err(SpdzError::Config(format!(
            "sharing needs at least 2 parties, got {n}"
        )));
    }
    let secret = x.as_ring()?;
    let mut last: Vec<u64> = secret.to_vec();
    let mut shares = Vec::with_capacity(n);
    for _ in 0..n - 1 {
        let s: Vec<u64> = (0..secret.len())
            .map(|_| rng.random_range(0..RING_MODULUS))
            .collect();
        for (l, &v) in last.iter_mut().zip(&s) {
            *l = ring_reduce(l.wrapping_sub(v));
        }
        shares.push(Tensor::from_ring(x.shape().clone(), s)?);
    }
    shares.push(Tensor::from_ring(x.shape().clone(), last)?);
    Ok(shares)
}

pub fn share<R: Rng + ?Sized>(
    x: &Tensor,
    parties: &[WorkerId],
    rng: &mut R,
) -> Result<ShareVector> {
    let shares = share_tensor(x, parties.len(), rng)?;
    ShareVector::new(parties.to_vec(), shares)
}

pub fn reconstruct_shares(shares: &[Tensor]) -> Result<Tensor> {
    let (first, rest) = shares.split_first().ok_or(SpdzError::EmptyShares)?;
    rest.iter()
        .try_fold(first.clone(), |acc, s| acc.add(s).map_err(SpdzError::from))
}

pub fn reconstruct(sv: &ShareVector) -> Result<Tensor> {
    reconstruct_shares(&sv.shares)
}

/// Local: every party adds its own shares.
pub fn add_shared(xs: &ShareVector, ys: &ShareVector) -> Result<ShareVector> {
    xs.same_parties(ys)?;
    xs.map_shares(|i, s| Ok(s.add(&ys.shares[i])?))
}

pub fn sub_shared(xs: &ShareVector, ys: &ShareVector) -> Result<ShareVector> {
    xs.same_parties(ys)?;
    xs.map_shares(|i, s| Ok(s.sub(&ys.shares[i])?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PublicOp {
    Add,
    Mul,
}

/// Combines shares with a public ring tensor. Addition touches only party 0;
/// multiplication scales every share.
pub fn public_op(op: PublicOp, xs: &ShareVector, c: &Tensor) -> Result<ShareVector> {
    match op {
        PublicOp::Add => xs.map_shares(|i, s| {
            if i == 0 {
                Ok(s.add(c)?)
            } else {
                if s.shape() != c.shape() {
                    return Err(SpdzError::Tensor(TensorError::ShapeMismatch {
                        op: "public_add",
                        left: s.shape().clone(),
                        right: c.shape().clone(),
                    }));
                }
                Ok(s.clone())
            }
        }),
        PublicOp::Mul => xs.map_shares(|_, s| Ok(s.mul(c)?)),
    }
}

/// Public scalar versions of [`public_op`].
pub fn public_scalar(op: PublicOp, xs: &ShareVector, c: u64) -> Result<ShareVector> {
    match op {
        PublicOp::Add => xs.map_shares(|i, s| {
            if i == 0 {
                Ok(s.ring_offset(c)?)
            } else {
                Ok(s.clone())
            }
        }),
        PublicOp::Mul => xs.map_shares(|_, s| Ok(s.ring_scale(c)?)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TripleKind {
    Elementwise,
    Matmul,
}

impl TripleKind {
    pub fn name(self) -> &'static str {
        match self {
            TripleKind::Elementwise => "mul",
            TripleKind::Matmul => "matmul",
        }
    }

    pub fn parse(s: &str) -> Option<TripleKind> {
        match s {
            "mul" | "elementwise" => Some(TripleKind::Elementwise),
            "matmul" => Some(TripleKind::Matmul),
            _ => None,
        }
    }

    fn product(self, x: &Tensor, y: &Tensor) -> std::result::Result<Tensor, TensorError> {
        match self {
            TripleKind::Elementwise => x.mul(y),
            TripleKind::Matmul => x.matmul(y),
        }
    }
}

/// Preprocessed (a, b, c) with c = a*b (elementwise) or c = a.b (matmul).
///
/// Protocols take triples by value, so a triple cannot be used twice.
#[derive(Debug, Clone, PartialEq)]
pub struct BeaverTriple {
    pub kind: TripleKind,
    pub a: ShareVector,
    pub b: ShareVector,
    pub c: ShareVector,
}

impl BeaverTriple {
    /// Checks the triple relation by reconstructing; for tests and audits.
    pub fn verify(&self) -> Result<bool> {
        let a = reconstruct(&self.a)?;
        let b = reconstruct(&self.b)?;
        let c = reconstruct(&self.c)?;
        Ok(self.kind.product(&a, &b)? == c)
    }
}

/// Party `party`'s output share of a Beaver multiplication given the opened
/// differences eps = x - a and delta = y - b:
/// z_i = c_i + eps*b_i + a_i*delta, plus eps*delta for party 0.
pub fn beaver_combine(
    kind: TripleKind,
    party: usize,
    c: &Tensor,
    a: &Tensor,
    b: &Tensor,
    eps: &Tensor,
    delta: &Tensor,
) -> Result<Tensor> {
    let mut z = c
        .add(&kind.product(eps, b)?)?
        .add(&kind.product(a, delta)?)?;
    if party == 0 {
        z = z.add(&kind.product(eps, delta)?)?;
    }
    Ok(z)
}

fn beaver(
    kind: TripleKind,
    xs: &ShareVector,
    ys: &ShareVector,
    t: BeaverTriple,
    tr: &mut Transcript,
) -> Result<ShareVector> {
    xs.same_parties(ys)?;
    if t.a.parties != xs.parties {
        return Err(SpdzError::PartyMismatch);
    }
    if t.kind != kind {
        return Err(SpdzError::TripleShapeMismatch(format!(
            "{} triple used for {}",
            t.kind.name(),
            kind.name()
        )));
    }
    if t.a.shape() != xs.shape() || t.b.shape() != ys.shape() {
        return Err(SpdzError::TripleShapeMismatch(format!(
            "triple {}x{} for operands {}x{}",
            t.a.shape(),
            t.b.shape(),
            xs.shape(),
            ys.shape()
        )));
    }
    let eps = reconstruct(&sub_shared(xs, &t.a)?)?;
    let delta = reconstruct(&sub_shared(ys, &t.b)?)?;
    tr.openings += 2;
    tr.rounds += 1;
    let shares = (0..xs.parties.len())
        .map(|i| {
            beaver_combine(
                kind,
                i,
                &t.c.shares[i],
                &t.a.shares[i],
                &t.b.shares[i],
                &eps,
                &delta,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    ShareVector::new(xs.parties.clone(), shares)
}

/// Elementwise product of two shared tensors, consuming one triple.
pub fn beaver_mul(
    xs: &ShareVector,
    ys: &ShareVector,
    t: BeaverTriple,
    tr: &mut Transcript,
) -> Result<ShareVector> {
    beaver(TripleKind::Elementwise, xs, ys, t, tr)
}

/// Matrix product of two shared matrices, consuming one matmul triple.
/// Opens exactly two values regardless of matrix size.
pub fn matmul_shared(
    xs: &ShareVector,
    ys: &ShareVector,
    t: BeaverTriple,
    tr: &mut Transcript,
) -> Result<ShareVector> {
    beaver(TripleKind::Matmul, xs, ys, t, tr)
}

/// Local truncation of one share by `p` bits. Party 0 shifts its share;
/// every other party shifts the negation of its share and negates back.
pub fn truncate_share(share: &Tensor, party: usize, cfg: &FixedPointConfig) -> Result<Tensor> {
    let p = cfg.frac_bits();
    let data = share
        .as_ring()?
        .iter()
        .map(|&s| {
            if party == 0 {
                s >> p
            } else {
                let neg = ring_reduce(s.wrapping_neg());
                ring_reduce((neg >> p).wrapping_neg())
            }
        })
        .collect();
    Ok(Tensor::from_ring(share.shape().clone(), data)?)
}

/// Divides a shared fixed-point value by 2^p without communication.
/// Exact up to one unit with probability about 1 - 2^(l+1-62) for l-bit secrets.
/// With more than two parties the same rule applies but the error grows.
pub fn trunc_shared(sv: &ShareVector, cfg: &FixedPointConfig) -> Result<ShareVector> {
    sv.map_shares(|i, s| truncate_share(s, i, cfg))
}
