use crate::fixedpoint::FixedPointConfig;
use crate::tensor::Tensor;

/// A chain as it exists materialized on one machine: a plain tensor, or a
/// fixed-precision wrapper over a ring tensor. This is what workers store.
#[derive(Debug, Clone, PartialEq)]
pub enum LocalObject {
    Plain(Tensor),
    Fixed {
        cfg: FixedPointConfig,
        payload: Tensor,
    },
}

impl LocalObject {
    pub fn tensor(&self) -> &Tensor {
        match self {
            LocalObject::Plain(t) => t,
            LocalObject::Fixed { payload, .. } => payload,
        }
    }

    pub fn into_tensor(self) -> Tensor {
        match self {
            LocalObject::Plain(t) => t,
            LocalObject::Fixed { payload, .. } => payload,
        }
    }

    pub fn fixed_cfg(&self) -> Option<FixedPointConfig> {
        match self {
            LocalObject::Plain(_) => None,
            LocalObject::Fixed { cfg, .. } => Some(*cfg),
        }
    }

    pub fn bit_eq(&self, other: &LocalObject) -> bool {
        self.fixed_cfg() == other.fixed_cfg() && self.tensor().bit_eq(other.tensor())
    }
}

impl From<Tensor> for LocalObject {
    fn from(t: Tensor) -> Self {
        LocalObject::Plain(t)
    }
}
