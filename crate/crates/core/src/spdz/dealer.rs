use std::collections::{HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{share_tensor, BeaverTriple, Result, ShareVector, SpdzError, TripleKind};
use crate::net::WorkerId;
use crate::tensor::{Tensor, RING_MODULUS};

/// Inventory key: triple kind plus operand shapes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TripleKey {
    pub kind: TripleKind,
    pub a_shape: Vec<usize>,
    pub b_shape: Vec<usize>,
}

impl TripleKey {
    pub fn new(kind: TripleKind, a_shape: &[usize], b_shape: &[usize]) -> Result<Self> {
        match kind {
            TripleKind::Elementwise if a_shape != b_shape => {
                return Err(SpdzError::Config(format!(
                    "elementwise triple needs equal shapes, got {a_shape:?} and {b_shape:?}"
                )))
            }
            TripleKind::Matmul
                if a_shape.len() != 2 || b_shape.len() != 2 || a_shape[1] != b_shape[0] =>
            {
                return Err(SpdzError::Config(format!(
                    "matmul triple needs [m,k] and [k,n], got {a_shape:?} and {b_shape:?}"
                )))
            }
            _ => {}
        }
        Ok(TripleKey {
            kind,
            a_shape: a_shape.to_vec(),
            b_shape: b_shape.to_vec(),
        })
    }

    pub fn describe(&self) -> String {
        format!("{} {:?}x{:?}", self.kind.name(), self.a_shape, self.b_shape)
    }
}

fn random_ring<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(0..RING_MODULUS)).collect();
    Tensor::from_ring(shape, data).expect("residues drawn below Q")
}

/// Draws one triple and splits it into per-party (a, b, c) shares.
pub fn generate_triple_shares<R: Rng + ?Sized>(
    key: &TripleKey,
    n_parties: usize,
    rng: &mut R,
) -> Result<Vec<[Tensor; 3]>> {
    let a = random_ring(&key.a_shape, rng);
    let b = random_ring(&key.b_shape, rng);
    let c = key.kind.product(&a, &b)?;
    let a_sh = share_tensor(&a, n_parties, rng)?;
    let b_sh = share_tensor(&b, n_parties, rng)?;
    let c_sh = share_tensor(&c, n_parties, rng)?;
    Ok(a_sh
        .into_iter()
        .zip(b_sh)
        .zip(c_sh)
        .map(|((a, b), c)| [a, b, c])
        .collect())
}

pub fn dealer_generate<R: Rng + ?Sized>(
    key: &TripleKey,
    parties: &[WorkerId],
    count: usize,
    rng: &mut R,
) -> Result<Vec<BeaverTriple>> {
    if count == 0 {
        return Err(SpdzError::Config("triple count must be at least 1".into()));
    }
    (0..count)
        .map(|_| {
            let per_party = generate_triple_shares(key, parties.len(), rng)?;
            let mut a = Vec::new();
            let mut b = Vec::new();
            let mut c = Vec::new();
            for [ai, bi, ci] in per_party {
                a.push(ai);
                b.push(bi);
                c.push(ci);
            }
            Ok(BeaverTriple {
                kind: key.kind,
                a: ShareVector::new(parties.to_vec(), a)?,
                b: ShareVector::new(parties.to_vec(), b)?,
                c: ShareVector::new(parties.to_vec(), c)?,
            })
        })
        .collect()
}

/// In-memory trusted dealer with a per-key inventory. Triples leave the
/// inventory when taken, so none is handed out twice.
#[derive(Debug)]
pub struct Dealer {
    rng: ChaCha20Rng,
    inventory: HashMap<TripleKey, VecDeque<BeaverTriple>>,
}

impl Dealer {
    pub fn new(seed: u64) -> Self {
        Dealer {
            rng: ChaCha20Rng::seed_from_u64(seed),
            inventory: HashMap::new(),
        }
    }

    pub fn preprocess(
        &mut self,
        key: &TripleKey,
        parties: &[WorkerId],
        count: usize,
    ) -> Result<()> {
        let triples = dealer_generate(key, parties, count, &mut self.rng)?;
        self.inventory
            .entry(key.clone())
            .or_default()
            .extend(triples);
        Ok(())
    }

    pub fn available(&self, key: &TripleKey) -> usize {
        self.inventory.get(key).map_or(0, VecDeque::len)
    }

    pub fn take(&mut self, key: &TripleKey) -> Result<BeaverTriple> {
        self.inventory
            .get_mut(key)
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| SpdzError::InsufficientTriples(key.describe()))
    }

    /// Generates a triple on demand, bypassing the inventory.
    pub fn triple(
        &mut self,
        kind: TripleKind,
        a_shape: &[usize],
        b_shape: &[usize],
        parties: &[WorkerId],
    ) -> Result<BeaverTriple> {
        let key = TripleKey::new(kind, a_shape, b_shape)?;
        Ok(dealer_generate(&key, parties, 1, &mut self.rng)?.remove(0))
    }
}
