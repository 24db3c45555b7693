use std::cell::RefCell;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::fixedpoint::FixedPointConfig;
use crate::net::{ObjectId, WorkerId};
use crate::tensor::Tensor;

use super::LocalObject;

/// Remote objects whose last local pointer was dropped, awaiting deletion.
pub(crate) type GcQueue = Rc<RefCell<Vec<(WorkerId, ObjectId)>>>;

static NEXT_NODE: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    /// The chain's entry point; holds the payload when the chain is local.
    Head,
    /// Native execution on the head's payload. Its child is the head.
    Local,
    Pointer {
        location: WorkerId,
        remote_id: ObjectId,
    },
    FixedPrecision {
        cfg: FixedPointConfig,
    },
    /// One pointer per party; `shape` is the shape of the shared secret.
    Shared {
        shares: Vec<usize>,
        shape: Vec<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeTag {
    Head,
    Local,
    Pointer,
    FixedPrecision,
    Shared,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainNode {
    pub id: u64,
    pub kind: NodeKind,
    pub parent: Option<usize>,
    pub child: Option<usize>,
    pub owner: WorkerId,
}

impl ChainNode {
    pub fn tag(&self) -> NodeTag {
        match self.kind {
            NodeKind::Head => NodeTag::Head,
            NodeKind::Local => NodeTag::Local,
            NodeKind::Pointer { .. } => NodeTag::Pointer,
            NodeKind::FixedPrecision { .. } => NodeTag::FixedPrecision,
            NodeKind::Shared { .. } => NodeTag::Shared,
        }
    }
}

/// Where a chain's data lives, as seen by the leader.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Layout {
    Local {
        cfg: Option<FixedPointConfig>,
    },
    Pointer {
        cfg: Option<FixedPointConfig>,
        location: WorkerId,
        remote_id: ObjectId,
    },
    Shared {
        cfg: Option<FixedPointConfig>,
        refs: super::ShareRefs,
    },
}

/// A head node plus the nodes below it, stored in an arena. Index 0 is the
/// head. Not `Clone`: a chain owns the remote objects its pointers name.
#[derive(Debug)]
pub struct Chain {
    nodes: Vec<ChainNode>,
    payload: Option<Tensor>,
    gc: Option<GcQueue>,
}

impl Chain {
    fn node(&mut self, kind: NodeKind, owner: &WorkerId) -> usize {
        self.nodes.push(ChainNode {
            id: NEXT_NODE.fetch_add(1, Ordering::Relaxed),
            kind,
            parent: None,
            child: None,
            owner: owner.clone(),
        });
        self.nodes.len() - 1
    }

    fn link(&mut self, parent: usize, child: usize) {
        self.nodes[parent].child = Some(child);
        self.nodes[child].parent = Some(parent);
    }

    fn empty(owner: &WorkerId, gc: Option<GcQueue>) -> Chain {
        let mut c = Chain {
            nodes: Vec::new(),
            payload: None,
            gc,
        };
        c.node(NodeKind::Head, owner);
        c
    }

    /// Adds a FixedPrecision node under the current tail when `cfg` is set.
    fn maybe_fixed(&mut self, cfg: Option<FixedPointConfig>, owner: &WorkerId) -> usize {
        match cfg {
            Some(cfg) => {
                let f = self.node(NodeKind::FixedPrecision { cfg }, owner);
                self.link(0, f);
                f
            }
            None => 0,
        }
    }

    /// `head -> Local`, with the Local node looping back to the head.
    pub fn local(owner: &WorkerId, t: Tensor) -> Chain {
        Self::from_object(owner, LocalObject::Plain(t))
    }

    pub fn from_object(owner: &WorkerId, obj: LocalObject) -> Chain {
        let mut c = Self::empty(owner, None);
        let (cfg, t) = match obj {
            LocalObject::Plain(t) => (None, t),
            LocalObject::Fixed { cfg, payload } => (Some(cfg), payload),
        };
        let above = c.maybe_fixed(cfg, owner);
        let l = c.node(NodeKind::Local, owner);
        c.link(above, l);
        c.link(l, 0);
        c.payload = Some(t);
        c
    }

    pub(crate) fn pointer(
        owner: &WorkerId,
        location: WorkerId,
        remote_id: ObjectId,
        gc: Option<GcQueue>,
    ) -> Chain {
        let mut c = Self::empty(owner, gc);
        let p = c.node(
            NodeKind::Pointer {
                location,
                remote_id,
            },
            owner,
        );
        c.link(0, p);
        c
    }

    pub(crate) fn shared(
        owner: &WorkerId,
        cfg: Option<FixedPointConfig>,
        refs: &super::ShareRefs,
        gc: Option<GcQueue>,
    ) -> Chain {
        let mut c = Self::empty(owner, gc);
        let above = c.maybe_fixed(cfg, owner);
        let s = c.node(
            NodeKind::Shared {
                shares: Vec::new(),
                shape: refs.shape.clone(),
            },
            owner,
        );
        c.link(above, s);
        let mut idx = Vec::new();
        for (location, remote_id) in refs.parties.iter().zip(&refs.ids) {
            let p = c.node(
                NodeKind::Pointer {
                    location: location.clone(),
                    remote_id: *remote_id,
                },
                owner,
            );
            c.nodes[p].parent = Some(s);
            idx.push(p);
        }
        if let NodeKind::Shared { shares, .. } = &mut c.nodes[s].kind {
            *shares = idx;
        }
        c
    }

    /// Replaces this chain's structure with `other`'s. Remote objects named
    /// by the old structure are not garbage-collected: the caller has
    /// already consumed them.
    pub(crate) fn replace_with(&mut self, mut other: Chain) {
        self.nodes = std::mem::take(&mut other.nodes);
        self.payload = other.payload.take();
        if other.gc.is_some() {
            self.gc = other.gc.take();
        }
    }

    pub fn nodes(&self) -> &[ChainNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn payload(&self) -> Option<&Tensor> {
        self.payload.as_ref()
    }

    /// Node kinds from the head downward; shared pointers follow their
    /// Shared node.
    pub fn tags(&self) -> Vec<NodeTag> {
        let mut out = vec![NodeTag::Head];
        let mut cur = self.nodes[0].child;
        while let Some(i) = cur {
            if i == 0 {
                break;
            }
            let n = &self.nodes[i];
            out.push(n.tag());
            if let NodeKind::Shared { shares, .. } = &n.kind {
                out.extend(shares.iter().map(|&s| self.nodes[s].tag()));
            }
            cur = n.child;
        }
        out
    }

    pub fn fixed_cfg(&self) -> Option<FixedPointConfig> {
        self.nodes.iter().find_map(|n| match n.kind {
            NodeKind::FixedPrecision { cfg } => Some(cfg),
            _ => None,
        })
    }

    /// The local object when the chain ends in a Local node.
    pub fn local_object(&self) -> Option<LocalObject> {
        let t = self.payload.clone()?;
        Some(match self.fixed_cfg() {
            Some(cfg) => LocalObject::Fixed { cfg, payload: t },
            None => LocalObject::Plain(t),
        })
    }

    /// Location and remote id when the chain ends in a single Pointer.
    pub fn pointer_target(&self) -> Option<(&WorkerId, ObjectId)> {
        let mut cur = self.nodes[0].child;
        while let Some(i) = cur {
            match &self.nodes[i].kind {
                NodeKind::Pointer {
                    location,
                    remote_id,
                } => return Some((location, *remote_id)),
                NodeKind::FixedPrecision { .. } => cur = self.nodes[i].child,
                _ => return None,
            }
        }
        None
    }

    pub(crate) fn layout(&self) -> Layout {
        let cfg = self.fixed_cfg();
        if self.payload.is_some() {
            return Layout::Local { cfg };
        }
        for n in &self.nodes {
            if let NodeKind::Shared { shares, shape } = &n.kind {
                let mut parties = Vec::new();
                let mut ids = Vec::new();
                for &s in shares {
                    if let NodeKind::Pointer {
                        location,
                        remote_id,
                    } = &self.nodes[s].kind
                    {
                        parties.push(location.clone());
                        ids.push(*remote_id);
                    }
                }
                return Layout::Shared {
                    cfg,
                    refs: super::ShareRefs {
                        parties,
                        ids,
                        shape: shape.clone(),
                    },
                };
            }
        }
        let (location, remote_id) = self
            .pointer_target()
            .expect("a chain without payload or shares ends in a pointer");
        Layout::Pointer {
            cfg,
            location: location.clone(),
            remote_id,
        }
    }

    /// Checks the structural invariants; returns a description of the first
    /// violation.
    pub fn validate(&self) -> Result<(), String> {
        let n = self.nodes.len();
        if n < 2 || self.nodes[0].kind != NodeKind::Head {
            return Err("chain must start with a head and have at least one node below it".into());
        }
        let in_range = |i: usize| i < n;
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(c) = node.child {
                if !in_range(c) || self.nodes[c].parent != Some(i) {
                    return Err(format!(
                        "node {i} names child {c} but it does not name {i} as parent"
                    ));
                }
            }
            if let Some(p) = node.parent {
                if !in_range(p) {
                    return Err(format!("node {i} has dangling parent {p}"));
                }
                let listed = match &self.nodes[p].kind {
                    NodeKind::Shared { shares, .. } => shares.contains(&i),
                    _ => false,
                };
                if self.nodes[p].child != Some(i) && !listed {
                    return Err(format!("node {i} names parent {p} but is not its child"));
                }
            }
            match &node.kind {
                NodeKind::Head if i != 0 => return Err(format!("second head at {i}")),
                NodeKind::Local => {
                    if node.child != Some(0) {
                        return Err("Local node must loop back to the head".into());
                    }
                    if self.payload.is_none() {
                        return Err("Local chain without payload".into());
                    }
                }
                NodeKind::Pointer { .. } => {
                    if node.child.is_some() {
                        return Err("a pointer has no child".into());
                    }
                }
                NodeKind::FixedPrecision { .. } => match node.child.map(|c| self.nodes[c].tag()) {
                    Some(NodeTag::Local | NodeTag::Pointer | NodeTag::Shared) => {}
                    other => return Err(format!("FixedPrecision over {other:?}")),
                },
                NodeKind::Shared { shares, .. } => {
                    if shares.len() < 2 {
                        return Err("Shared needs at least two pointers".into());
                    }
                    let mut seen = Vec::new();
                    for &s in shares {
                        let NodeKind::Pointer { location, .. } = &self.nodes[s].kind else {
                            return Err("Shared may only hold pointers".into());
                        };
                        if self.nodes[s].parent != Some(i) {
                            return Err("share pointer does not name its Shared parent".into());
                        }
                        if seen.contains(&location) {
                            return Err(format!("two shares on worker {location}"));
                        }
                        seen.push(location);
                    }
                }
                NodeKind::Head => {}
            }
        }
        let local = self.nodes.iter().any(|n| n.kind == NodeKind::Local);
        if local != self.payload.is_some() {
            return Err("payload present without a Local node or vice versa".into());
        }
        Ok(())
    }
}

impl Drop for Chain {
    fn drop(&mut self) {
        let Some(gc) = &self.gc else { return };
        let mut q = gc.borrow_mut();
        for n in &self.nodes {
            if let NodeKind::Pointer {
                location,
                remote_id,
            } = &n.kind
            {
                q.push((location.clone(), *remote_id));
            }
        }
    }
}
