//! The meta-tree model: a lazily allocated M-ary arena of nodes carrying
//! split probabilities and leaf-model states, plus routing and the
//! probability of explicit pruned subtrees.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::check_x;
use crate::error::{Error, Result};
use crate::leaf::{LeafPrior, LeafState};
use crate::shape::{FeatureAssignment, NodeAddress, NodeParam, PostOrder, TreeShape};

pub(crate) type NodeId = usize;

pub(crate) const ROOT: NodeId = 0;

/// Hyperparameters that fully determine the prior over a meta-tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaTreeSpec {
    pub shape: TreeShape,
    pub assignment: FeatureAssignment,
    /// Prior split probability `g_s`. Forced to 0 at the depth bound.
    pub split_prior: NodeParam<f64>,
    pub leaf_prior: NodeParam<LeafPrior>,
}

impl MetaTreeSpec {
    /// `g_s = 0.5` everywhere and a shared Beta(1, 1) leaf prior.
    pub fn new(shape: TreeShape, assignment: FeatureAssignment) -> Self {
        Self {
            shape,
            assignment,
            split_prior: NodeParam::shared(0.5),
            leaf_prior: NodeParam::shared(LeafPrior::default()),
        }
    }

    pub fn with_split_prior(mut self, split_prior: NodeParam<f64>) -> Self {
        self.split_prior = split_prior;
        self
    }

    pub fn with_leaf_prior(mut self, leaf_prior: NodeParam<LeafPrior>) -> Self {
        self.leaf_prior = leaf_prior;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        self.assignment.validate(&self.shape)?;
        for &g in self.split_prior.values() {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::InvalidHyperparameter(format!(
                    "split probability {g} outside [0, 1]"
                )));
            }
        }
        for prior in self.leaf_prior.values() {
            prior.validate()?;
        }
        let families: BTreeSet<_> = self.leaf_prior.values().map(|p| p.family()).collect();
        if families.len() > 1 {
            return Err(Error::InvalidHyperparameter(
                "all nodes must use the same leaf family".into(),
            ));
        }
        for address in self
            .split_prior
            .by_node
            .keys()
            .chain(self.leaf_prior.by_node.keys())
        {
            if !self.shape.contains(address) {
                return Err(Error::AddressOutOfShape(address.clone()));
            }
        }
        if !self.shape.is_bounded() && !self.leaf_prior.is_shared() {
            return Err(Error::InvalidShape(
                "an unbounded tree requires one leaf prior shared by all nodes".into(),
            ));
        }
        Ok(())
    }

    pub fn g_prior(&self, address: &NodeAddress) -> f64 {
        if self.shape.is_max_depth(address) {
            0.0
        } else {
            *self.split_prior.resolve(address)
        }
    }

    pub fn leaf_prior_at(&self, address: &NodeAddress) -> LeafPrior {
        *self.leaf_prior.resolve(address)
    }

    /// Feature index `k_s`, or `None` at the depth bound.
    pub fn feature_at(&self, address: &NodeAddress) -> Result<Option<u32>> {
        if self.shape.is_max_depth(address) {
            return Ok(None);
        }
        self.assignment
            .feature_at(address)
            .map(Some)
            .ok_or_else(|| {
                Error::InvalidAssignment(format!("no feature assigned to {address}"))
            })
    }

    pub fn shared_leaf_prior(&self) -> Option<LeafPrior> {
        self.leaf_prior
            .is_shared()
            .then_some(self.leaf_prior.default)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub address: NodeAddress,
    pub g_prior: f64,
    pub g_posterior: f64,
    pub leaf: LeafState,
    /// `None` at the depth bound.
    pub feature: Option<u32>,
    /// Set by the lazy engine where the data stopped varying: the single `x`
    /// every point reaching this node shares.
    pub concentrated_at: Option<Vec<u32>>,
    /// Cached `log q(y_s | x_s, s)` from the last batch sweep.
    pub log_q: f64,
}

/// A read-only view of a materialized node.
#[derive(Debug, Clone, Copy)]
pub struct NodeView<'a> {
    pub address: &'a NodeAddress,
    pub g_prior: f64,
    pub g_posterior: f64,
    pub leaf: &'a LeafState,
    pub data_count: u64,
    pub concentrated_at: Option<&'a [u32]>,
}

/// The representative tree with its prior and posterior parameterization.
///
/// Nodes live in an arena and appear on first touch, by data or by a batch
/// sweep. A node that has never been touched is in its prior state.
#[derive(Debug, Clone)]
pub struct MetaTreeModel {
    spec: MetaTreeSpec,
    pub(crate) nodes: Vec<Node>,
    // nodes.len() * arity slots
    pub(crate) children: Vec<Option<NodeId>>,
    pub(crate) observations: u64,
    pub(crate) log_evidence: f64,
    pub(crate) batch_fitted: bool,
}

impl MetaTreeModel {
    pub fn new(spec: MetaTreeSpec) -> Result<Self> {
        spec.validate()?;
        let mut model = Self {
            spec,
            nodes: Vec::new(),
            children: Vec::new(),
            observations: 0,
            log_evidence: 0.0,
            batch_fitted: false,
        };
        model.reset();
        Ok(model)
    }

    /// Drops all fitted state and returns to the prior.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.children.clear();
        self.observations = 0;
        self.log_evidence = 0.0;
        self.batch_fitted = false;
        let root = self.fresh_node(NodeAddress::root());
        self.push_node(root);
    }

    pub fn spec(&self) -> &MetaTreeSpec {
        &self.spec
    }

    pub fn shape(&self) -> &TreeShape {
        &self.spec.shape
    }

    /// Number of points absorbed so far.
    pub fn observations(&self) -> u64 {
        self.observations
    }

    /// No data absorbed and no batch fit run since construction or reset.
    pub fn is_fresh(&self) -> bool {
        self.observations == 0 && !self.batch_fitted
    }

    pub fn materialized_count(&self) -> usize {
        self.nodes.len()
    }

    /// `log p(y^n | x^n)` of all data absorbed so far.
    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_evidence
    }

    fn fresh_node(&self, address: NodeAddress) -> Node {
        // A missing assignment on an unbounded tree only fails once routing needs it.
        let feature = self.spec.feature_at(&address).ok().flatten();
        let g_prior = self.spec.g_prior(&address);
        Node {
            g_prior,
            g_posterior: g_prior,
            leaf: self.spec.leaf_prior_at(&address).empty_state(),
            feature,
            concentrated_at: None,
            log_q: 0.0,
            address,
        }
    }

    fn push_node(&mut self, node: Node) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(node);
        self.children
            .extend(std::iter::repeat_n(None, self.spec.shape.arity as usize));
        id
    }

    #[inline]
    pub(crate) fn child(&self, id: NodeId, m: u32) -> Option<NodeId> {
        self.children[id * self.spec.shape.arity as usize + (m - 1) as usize]
    }

    /// Feature split on at `id`, erroring on an unassigned node of an unbounded tree.
    pub(crate) fn feature_of(&self, id: NodeId) -> Result<u32> {
        match self.nodes[id].feature {
            Some(k) => Ok(k),
            None => self
                .spec
                .feature_at(&self.nodes[id].address)?
                .ok_or_else(|| Error::AddressOutOfShape(self.nodes[id].address.child(1))),
        }
    }

    /// Child `m` of `id`, created in its prior state if absent. Children of a
    /// node whose data concentrated at one `x` inherit that data along `x`'s path.
    pub(crate) fn materialize_child(&mut self, id: NodeId, m: u32) -> NodeId {
        if let Some(child) = self.child(id, m) {
            return child;
        }
        let parent = &self.nodes[id];
        let mut node = self.fresh_node(parent.address.child(m));
        if let (Some(x), Some(k)) = (&parent.concentrated_at, parent.feature) {
            if x[(k - 1) as usize] == m {
                node.leaf.merge_counts(parent.leaf.counts());
                node.concentrated_at = Some(x.clone());
            }
        }
        let child = self.push_node(node);
        self.children[id * self.spec.shape.arity as usize + (m - 1) as usize] = Some(child);
        child
    }

    pub(crate) fn find_id(&self, address: &NodeAddress) -> Option<NodeId> {
        let mut id = ROOT;
        for &m in &address.0 {
            if m < 1 || m > self.spec.shape.arity {
                return None;
            }
            id = self.child(id, m)?;
        }
        Some(id)
    }

    fn view(&self, id: NodeId) -> NodeView<'_> {
        let node = &self.nodes[id];
        NodeView {
            address: &node.address,
            g_prior: node.g_prior,
            g_posterior: node.g_posterior,
            leaf: &node.leaf,
            data_count: node.leaf.count(),
            concentrated_at: node.concentrated_at.as_deref(),
        }
    }

    pub fn node(&self, address: &NodeAddress) -> Option<NodeView<'_>> {
        self.find_id(address).map(|id| self.view(id))
    }

    /// Materialized nodes in address order.
    pub fn nodes(&self) -> Vec<NodeView<'_>> {
        let mut views: Vec<_> = (0..self.nodes.len()).map(|id| self.view(id)).collect();
        views.sort_by(|a, b| a.address.cmp(b.address));
        views
    }

    /// Posterior split probability at any address; untouched nodes are at their prior.
    pub fn g_posterior(&self, address: &NodeAddress) -> f64 {
        match self.find_id(address) {
            Some(id) => self.nodes[id].g_posterior,
            None => self.spec.g_prior(address),
        }
    }

    /// Root-to-leaf path `(s_λ, …, s_{T_max,k}(x))` of length `D_max + 1`.
    pub fn route(&self, x: &[u32]) -> Result<Vec<NodeAddress>> {
        let depth = self.spec.shape.require_bounded("routing")?;
        self.check_x(x, 1)?;
        let mut path = Vec::with_capacity(depth as usize + 1);
        let mut address = NodeAddress::root();
        while let Some(k) = self.spec.feature_at(&address)? {
            let next = address.child(x[(k - 1) as usize]);
            path.push(address);
            address = next;
        }
        path.push(address);
        Ok(path)
    }

    pub(crate) fn check_x(&self, x: &[u32], row: usize) -> Result<()> {
        check_x(
            x,
            self.spec.shape.arity,
            self.spec.shape.feature_count as usize,
            row,
        )
    }

    /// Every address of `S(T_max)`, children before parents.
    pub fn enumerate_addresses(&self) -> Result<PostOrder> {
        self.spec.shape.post_order()
    }

    /// Prior probability `Π_{inner} g_s Π_{leaf} (1 - g_s)` of `tree`.
    pub fn prior_prob(&self, tree: &PrunedSubtree) -> Result<f64> {
        self.subtree_prob(tree, |address| self.spec.g_prior(address))
    }

    /// Same product with the posterior split probabilities.
    pub fn posterior_prob(&self, tree: &PrunedSubtree) -> Result<f64> {
        self.subtree_prob(tree, |address| self.g_posterior(address))
    }

    fn subtree_prob(&self, tree: &PrunedSubtree, g: impl Fn(&NodeAddress) -> f64) -> Result<f64> {
        if tree.arity != self.spec.shape.arity {
            return Err(Error::InvalidSubtree(format!(
                "subtree arity {} does not match tree arity {}",
                tree.arity, self.spec.shape.arity
            )));
        }
        let mut log_p = 0.0;
        for address in &tree.nodes {
            if !self.spec.shape.contains(address) {
                return Err(Error::AddressOutOfShape(address.clone()));
            }
            let g = g(address);
            log_p += if tree.is_inner(address) {
                g.ln()
            } else {
                (-g).ln_1p()
            };
        }
        Ok(log_p.exp())
    }
}

/// An explicit element of the meta-tree: a full rooted subtree where every
/// node has either all `M` children or none.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PrunedSubtree {
    arity: u32,
    nodes: BTreeSet<NodeAddress>,
}

impl PrunedSubtree {
    pub fn new(arity: u32, nodes: BTreeSet<NodeAddress>) -> Result<Self> {
        if !nodes.contains(&NodeAddress::root()) {
            return Err(Error::InvalidSubtree("missing the root".into()));
        }
        for address in &nodes {
            if address.0.iter().any(|&m| m < 1 || m > arity) {
                return Err(Error::InvalidSubtree(format!(
                    "{address} has a child index outside 1..={arity}"
                )));
            }
            if let Some(parent) = address.parent() {
                if !nodes.contains(&parent) {
                    return Err(Error::InvalidSubtree(format!(
                        "{address} is present without its parent"
                    )));
                }
            }
            let present = address.children(arity).filter(|c| nodes.contains(c)).count();
            if present != 0 && present != arity as usize {
                return Err(Error::InvalidSubtree(format!(
                    "{address} has {present} of {arity} children"
                )));
            }
        }
        Ok(Self { arity, nodes })
    }

    pub fn root_only(arity: u32) -> Self {
        Self {
            arity,
            nodes: BTreeSet::from([NodeAddress::root()]),
        }
    }

    pub fn arity(&self) -> u32 {
        self.arity
    }

    pub fn nodes(&self) -> &BTreeSet<NodeAddress> {
        &self.nodes
    }

    pub fn contains(&self, address: &NodeAddress) -> bool {
        self.nodes.contains(address)
    }

    pub fn is_inner(&self, address: &NodeAddress) -> bool {
        self.nodes.contains(&address.child(1))
    }

    pub fn inner(&self) -> impl Iterator<Item = &NodeAddress> {
        self.nodes.iter().filter(|a| self.is_inner(a))
    }

    pub fn leaves(&self) -> impl Iterator<Item = &NodeAddress> {
        self.nodes.iter().filter(|a| !self.is_inner(a))
    }
}

// Serialized form. Absent nodes are omitted.

const FORMAT: &str = "metatree-model/1";

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    shape: TreeShape,
    assignment: FeatureAssignment,
    split_prior: NodeParam<f64>,
    leaf_prior: NodeParam<LeafPrior>,
    observations: u64,
    batch_fitted: bool,
    log_marginal_likelihood: f64,
    nodes: Vec<NodeRecord>,
}

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    address: NodeAddress,
    g_prior: f64,
    g_posterior: f64,
    leaf: LeafRecord,
    data_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    concentrated_x: Option<Vec<u32>>,
}

#[derive(Serialize, Deserialize)]
struct LeafRecord {
    prior: LeafPrior,
    posterior: LeafPrior,
    counts: [u64; 2],
}

impl MetaTreeModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        Self::from_document(doc)
    }

    fn to_document(&self) -> ModelDocument {
        let nodes = self
            .nodes()
            .into_iter()
            .map(|v| NodeRecord {
                address: v.address.clone(),
                g_prior: v.g_prior,
                g_posterior: v.g_posterior,
                leaf: LeafRecord {
                    prior: v.leaf.prior(),
                    posterior: v.leaf.posterior(),
                    counts: v.leaf.counts(),
                },
                data_count: v.data_count,
                concentrated_x: v.concentrated_at.map(<[u32]>::to_vec),
            })
            .collect();
        ModelDocument {
            format: FORMAT.into(),
            shape: self.spec.shape,
            assignment: self.spec.assignment.clone(),
            split_prior: self.spec.split_prior.clone(),
            leaf_prior: self.spec.leaf_prior.clone(),
            observations: self.observations,
            batch_fitted: self.batch_fitted,
            log_marginal_likelihood: self.log_evidence,
            nodes,
        }
    }

    fn from_document(doc: ModelDocument) -> Result<Self> {
        if doc.format != FORMAT {
            return Err(Error::Model(format!("unknown format {:?}", doc.format)));
        }
        let spec = MetaTreeSpec {
            shape: doc.shape,
            assignment: doc.assignment,
            split_prior: doc.split_prior,
            leaf_prior: doc.leaf_prior,
        };
        let mut model = Self::new(spec)?;
        model.observations = doc.observations;
        model.batch_fitted = doc.batch_fitted;
        model.log_evidence = doc.log_marginal_likelihood;

        let mut records = doc.nodes;
        records.sort_by(|a, b| a.address.cmp(&b.address));
        if records.first().map(|r| r.address.is_root()) != Some(true) {
            return Err(Error::Model("the root node record is missing".into()));
        }
        for (i, record) in records.into_iter().enumerate() {
            let address = &record.address;
            if !model.spec.shape.contains(address) {
                return Err(Error::AddressOutOfShape(address.clone()));
            }
            if i > 0 && model.find_id(address).is_some() {
                return Err(Error::Model(format!("duplicate record for {address}")));
            }
            if record.g_prior != model.spec.g_prior(address) {
                return Err(Error::Model(format!(
                    "g_prior at {address} disagrees with the split prior"
                )));
            }
            if !(0.0..=1.0).contains(&record.g_posterior) {
                return Err(Error::Model(format!(
                    "g_posterior {} at {address} outside [0, 1]",
                    record.g_posterior
                )));
            }
            if record.leaf.prior != model.spec.leaf_prior_at(address) {
                return Err(Error::Model(format!(
                    "leaf prior at {address} disagrees with the leaf prior table"
                )));
            }
            let leaf = LeafState::from_counts(record.leaf.prior, record.leaf.counts);
            if leaf.posterior() != record.leaf.posterior || leaf.count() != record.data_count {
                return Err(Error::Model(format!(
                    "leaf posterior or data count at {address} is inconsistent with its counts"
                )));
            }
            if let Some(x) = &record.concentrated_x {
                model.check_x(x, 1).map_err(|e| {
                    Error::Model(format!("concentrated_x at {address}: {e}"))
                })?;
            }
            let id = match address.parent() {
                None => ROOT,
                Some(parent) => {
                    let parent_id = model.find_id(&parent).ok_or_else(|| {
                        Error::Model(format!("{address} is present without its parent"))
                    })?;
                    let m = *address.0.last().expect("non-root address");
                    // Plain allocation: inherited state comes from the record itself.
                    let saved = model.nodes[parent_id].concentrated_at.take();
                    let id = model.materialize_child(parent_id, m);
                    model.nodes[parent_id].concentrated_at = saved;
                    id
                }
            };
            let node = &mut model.nodes[id];
            node.g_posterior = record.g_posterior;
            node.leaf = leaf;
            node.concentrated_at = record.concentrated_x;
        }
        Ok(model)
    }
}
