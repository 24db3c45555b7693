//! Inference on secret-shared weights and inputs.

use std::collections::BTreeMap;

use super::federation::{Federation, LEADER};
use super::model::{Layer, Model};
use super::TrainError;
use crate::chain::{Chain, Session};
use crate::fixedpoint::FixedPointConfig;
use crate::net::WorkerId;
use crate::spdz::{SpdzError, TripleKind};
use crate::tensor::Tensor;

/// Triples one forward pass over `rows` inputs consumes, with multiplicity.
pub fn triple_plan(model: &Model, rows: usize) -> Vec<(TripleKind, Vec<usize>, Vec<usize>, usize)> {
    let mut plan: BTreeMap<(u8, Vec<usize>, Vec<usize>), usize> = BTreeMap::new();
    let mut width = 0;
    for l in model.layers() {
        match *l {
            Layer::Linear { inp, out } => {
                *plan
                    .entry((1, vec![rows, inp], vec![inp, out]))
                    .or_default() += 1;
                width = out;
            }
            Layer::SigmoidPoly => {
                *plan
                    .entry((0, vec![rows, width], vec![rows, width]))
                    .or_default() += 2;
            }
        }
    }
    plan.into_iter()
        .map(|((k, a, b), n)| {
            let kind = if k == 1 {
                TripleKind::Matmul
            } else {
                TripleKind::Elementwise
            };
            (kind, a, b, n)
        })
        .collect()
}

/// Runs the model over `x` through chain dispatch. With `parties`, every
/// operand is secret-shared first; otherwise the chains stay local and the
/// same fixed-point kernels run in the clear.
fn forward_chains(
    session: &mut Session,
    model: &Model,
    x: &Tensor,
    cfg: FixedPointConfig,
    parties: Option<&[WorkerId]>,
) -> Result<Chain, TrainError> {
    let prepare = |session: &mut Session, t: Tensor| -> Result<Chain, TrainError> {
        let mut c = session.tensor(t);
        session.fix_precision(&mut c, cfg)?;
        if let Some(p) = parties {
            session.share(&mut c, p)?;
        }
        Ok(c)
    };
    let mut h = prepare(session, x.clone())?;
    let mut weights = model.linear_params().into_iter();
    for l in model.layers() {
        h = match l {
            Layer::Linear { .. } => {
                let (w, b) = weights.next().expect("one weight pair per linear layer");
                let w = prepare(session, w)?;
                let b = prepare(session, b)?;
                let z = session.dispatch("matmul", &[&h, &w], &[])?;
                session.dispatch("add_rows", &[&z, &b], &[])?
            }
            Layer::SigmoidPoly => session.dispatch("sigmoid_poly", &[&h], &[])?,
        };
    }
    Ok(h)
}

fn decode_output(session: &mut Session, mut out: Chain) -> Result<Vec<f64>, TrainError> {
    session.float_precision(&mut out)?;
    let t = out
        .payload()
        .ok_or_else(|| TrainError::Shape("forward pass produced no tensor".into()))?;
    Ok(t.as_f64()?.to_vec())
}

/// The plaintext fixed-point forward pass: same encoding, products and
/// truncations as the shared one, without sharing.
pub fn fixed_point_forward(
    model: &Model,
    x: &Tensor,
    cfg: FixedPointConfig,
) -> Result<Vec<f64>, TrainError> {
    let mut session = Session::new(WorkerId::new(LEADER).expect("valid worker name"), 0);
    let out = forward_chains(&mut session, model, x, cfg, None)?;
    decode_output(&mut session, out)
}

/// Forward pass with weights and inputs shared between the first two data
/// workers; the federation's dealer supplies the Beaver triples.
pub fn mpc_forward(
    fed: &mut Federation,
    model: &Model,
    x: &Tensor,
    cfg: FixedPointConfig,
) -> Result<Vec<f64>, TrainError> {
    if fed.workers().len() < 2 {
        return Err(SpdzError::Config("shared inference needs two workers".into()).into());
    }
    if fed.dealer().is_none() {
        return Err(SpdzError::Config("shared inference needs a dealer".into()).into());
    }
    let parties = fed.workers()[..2].to_vec();
    let rows = x.dims().first().copied().unwrap_or(0);
    for (kind, a, b, n) in triple_plan(model, rows) {
        fed.session.preprocess(kind, &a, &b, &parties, n)?;
    }
    let mut out = forward_chains(&mut fed.session, model, x, cfg, Some(&parties))?;
    fed.session.get(&mut out)?;
    decode_output(&mut fed.session, out)
}
