//! Tree geometry: shapes, node addresses, feature assignments and
//! per-node hyperparameter tables.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Arity, depth bound and feature count of the representative tree.
///
/// `max_depth == None` means the tree is unbounded, which only the lazy
/// engine can fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeShape {
    pub arity: u32,
    pub max_depth: Option<u32>,
    pub feature_count: u32,
}

impl TreeShape {
    pub fn bounded(arity: u32, max_depth: u32, feature_count: u32) -> Result<Self> {
        let shape = Self {
            arity,
            max_depth: Some(max_depth),
            feature_count,
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn unbounded(arity: u32, feature_count: u32) -> Result<Self> {
        let shape = Self {
            arity,
            max_depth: None,
            feature_count,
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        if self.arity < 2 {
            return Err(Error::InvalidShape(format!(
                "arity must be at least 2, got {}",
                self.arity
            )));
        }
        if self.feature_count < 1 {
            return Err(Error::InvalidShape(
                "feature count must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn is_bounded(&self) -> bool {
        self.max_depth.is_some()
    }

    pub(crate) fn require_bounded(&self, what: &str) -> Result<u32> {
        self.max_depth
            .ok_or_else(|| Error::Unsupported(format!("{what} needs a bounded max depth")))
    }

    /// `|S(T_max)|`, or `None` when unbounded or too large for `u64`.
    pub fn node_count(&self) -> Option<u64> {
        let depth = self.max_depth?;
        let mut total: u64 = 0;
        let mut level: u64 = 1;
        for _ in 0..=depth {
            total = total.checked_add(level)?;
            level = level.checked_mul(u64::from(self.arity))?;
        }
        Some(total)
    }

    /// Whether `address` names a node of the representative tree.
    pub fn contains(&self, address: &NodeAddress) -> bool {
        if let Some(depth) = self.max_depth {
            if address.depth() > depth as usize {
                return false;
            }
        }
        address.0.iter().all(|&m| m >= 1 && m <= self.arity)
    }

    /// True for nodes at the depth bound, whose split probability is pinned to 0.
    pub fn is_max_depth(&self, address: &NodeAddress) -> bool {
        self.max_depth == Some(address.depth() as u32)
    }

    /// Every address of the representative tree, children (ascending) before parents.
    pub fn post_order(&self) -> Result<PostOrder> {
        let depth = self.require_bounded("post-order enumeration")?;
        Ok(PostOrder::new(self.arity, depth))
    }
}

/// Path of 1-based child indices from the root. The empty path is the root.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeAddress(pub Vec<u32>);

impl NodeAddress {
    pub fn root() -> Self {
        Self(Vec::new())
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    pub fn child(&self, index: u32) -> Self {
        let mut path = Vec::with_capacity(self.0.len() + 1);
        path.extend_from_slice(&self.0);
        path.push(index);
        Self(path)
    }

    pub fn parent(&self) -> Option<Self> {
        if self.0.is_empty() {
            None
        } else {
            Some(Self(self.0[..self.0.len() - 1].to_vec()))
        }
    }

    /// Strict-prefix relation: `self` is a proper ancestor of `other`.
    pub fn is_ancestor_of(&self, other: &NodeAddress) -> bool {
        self.0.len() < other.0.len() && other.0.starts_with(&self.0)
    }

    pub fn children(&self, arity: u32) -> impl Iterator<Item = NodeAddress> + '_ {
        (1..=arity).map(move |m| self.child(m))
    }
}

impl fmt::Display for NodeAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "root");
        }
        write!(f, "root")?;
        for m in &self.0 {
            write!(f, "/{m}")?;
        }
        Ok(())
    }
}

impl From<Vec<u32>> for NodeAddress {
    fn from(path: Vec<u32>) -> Self {
        Self(path)
    }
}

/// Post-order walk over a perfect tree.
pub struct PostOrder {
    arity: u32,
    max_depth: u32,
    // (address, next child to descend into)
    stack: Vec<(NodeAddress, u32)>,
}

impl PostOrder {
    fn new(arity: u32, max_depth: u32) -> Self {
        Self {
            arity,
            max_depth,
            stack: vec![(NodeAddress::root(), 1)],
        }
    }
}

impl Iterator for PostOrder {
    type Item = NodeAddress;

    fn next(&mut self) -> Option<NodeAddress> {
        loop {
            let (address, next_child) = self.stack.last_mut()?;
            if (address.depth() as u32) < self.max_depth && *next_child <= self.arity {
                let child = address.child(*next_child);
                *next_child += 1;
                self.stack.push((child, 1));
            } else {
                return self.stack.pop().map(|(address, _)| address);
            }
        }
    }
}

/// Which feature `k_s` each inner node splits on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureAssignment {
    /// All nodes at depth `d` share `features[d]`. Past the end of the list the
    /// assignment wraps around, which is what an unbounded tree needs.
    ByDepth(Vec<u32>),
    /// Explicit feature per inner node.
    ByNode(#[serde(with = "address_map")] BTreeMap<NodeAddress, u32>),
}

impl FeatureAssignment {
    /// Depth `d` splits on feature `(d mod K) + 1`.
    pub fn cyclic(feature_count: u32, depth: u32) -> Self {
        let len = depth.max(1).max(feature_count);
        Self::ByDepth((0..len).map(|d| d % feature_count + 1).collect())
    }

    pub fn feature_at(&self, address: &NodeAddress) -> Option<u32> {
        match self {
            Self::ByDepth(features) if features.is_empty() => None,
            Self::ByDepth(features) => Some(features[address.depth() % features.len()]),
            Self::ByNode(map) => map.get(address).copied(),
        }
    }

    pub fn validate(&self, shape: &TreeShape) -> Result<()> {
        let in_range = |k: u32| k >= 1 && k <= shape.feature_count;
        match self {
            Self::ByDepth(features) => {
                if let Some(&bad) = features.iter().find(|&&k| !in_range(k)) {
                    return Err(Error::InvalidAssignment(format!(
                        "feature index {bad} outside 1..={}",
                        shape.feature_count
                    )));
                }
                match shape.max_depth {
                    Some(depth) if features.len() < depth as usize => {
                        Err(Error::InvalidAssignment(format!(
                            "depth-indexed assignment lists {} features but the tree has {depth} inner levels",
                            features.len()
                        )))
                    }
                    None if features.is_empty() => Err(Error::InvalidAssignment(
                        "an unbounded tree needs at least one feature per depth".into(),
                    )),
                    _ => Ok(()),
                }
            }
            Self::ByNode(map) => {
                for (address, &k) in map {
                    if !in_range(k) {
                        return Err(Error::InvalidAssignment(format!(
                            "feature index {k} at {address} outside 1..={}",
                            shape.feature_count
                        )));
                    }
                    if !shape.contains(address) || shape.is_max_depth(address) {
                        return Err(Error::InvalidAssignment(format!(
                            "{address} is not an inner node of the tree"
                        )));
                    }
                }
                if let Some(depth) = shape.max_depth {
                    let inner = shape.node_count().map(|n| n - u64::from(shape.arity).pow(depth));
                    if inner != Some(map.len() as u64) {
                        return Err(Error::InvalidAssignment(format!(
                            "per-node assignment covers {} nodes; every inner node needs one",
                            map.len()
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}

/// A hyperparameter with a default, optional per-depth values and per-node
/// overrides. Lookup order is node, then depth, then default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Serialize",
    deserialize = "T: Deserialize<'de>"
))]
pub struct NodeParam<T> {
    pub default: T,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub by_depth: Vec<T>,
    #[serde(default, with = "address_map", skip_serializing_if = "BTreeMap::is_empty")]
    pub by_node: BTreeMap<NodeAddress, T>,
}

impl<T: PartialEq> NodeParam<T> {
    pub fn shared(value: T) -> Self {
        Self {
            default: value,
            by_depth: Vec::new(),
            by_node: BTreeMap::new(),
        }
    }

    pub fn resolve(&self, address: &NodeAddress) -> &T {
        if let Some(value) = self.by_node.get(address) {
            return value;
        }
        self.by_depth
            .get(address.depth())
            .unwrap_or(&self.default)
    }

    /// Every node resolves to the same value.
    pub fn is_shared(&self) -> bool {
        self.by_depth
            .iter()
            .chain(self.by_node.values())
            .all(|v| *v == self.default)
    }

    pub fn values(&self) -> impl Iterator<Item = &T> {
        std::iter::once(&self.default)
            .chain(self.by_depth.iter())
            .chain(self.by_node.values())
    }
}

/// Serializes `BTreeMap<NodeAddress, T>` as a list of `{address, value}` records,
/// since JSON object keys must be strings.
pub(crate) mod address_map {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::NodeAddress;

    #[derive(Serialize, Deserialize)]
    struct Entry<T> {
        address: NodeAddress,
        value: T,
    }

    pub fn serialize<S, T>(map: &BTreeMap<NodeAddress, T>, serializer: S) -> Result<S::Ok, S::Error>
    where
        S: Serializer,
        T: Serialize,
    {
        let entries: Vec<Entry<&T>> = map
            .iter()
            .map(|(address, value)| Entry {
                address: address.clone(),
                value,
            })
            .collect();
        entries.serialize(serializer)
    }

    pub fn deserialize<'de, D, T>(deserializer: D) -> Result<BTreeMap<NodeAddress, T>, D::Error>
    where
        D: Deserializer<'de>,
        T: Deserialize<'de>,
    {
        let entries: Vec<Entry<T>> = Vec::deserialize(deserializer)?;
        let mut map = BTreeMap::new();
        for entry in entries {
            if map.insert(entry.address.clone(), entry.value).is_some() {
                return Err(serde::de::Error::custom(format!(
                    "duplicate entry for {}",
                    entry.address
                )));
            }
        }
        Ok(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn addr(path: &[u32]) -> NodeAddress {
        NodeAddress(path.to_vec())
    }

    #[test]
    fn post_order_counts() {
        for (m, d, expected) in [(2, 1, 3), (2, 2, 7), (3, 2, 13), (2, 0, 1)] {
            let shape = TreeShape::bounded(m, d, 1).unwrap();
            let all: Vec<_> = shape.post_order().unwrap().collect();
            assert_eq!(all.len(), expected);
            assert_eq!(shape.node_count(), Some(expected as u64));
            assert_eq!(all.last(), Some(&NodeAddress::root()));
        }
    }

    #[test]
    fn post_order_visits_children_first_ascending() {
        let shape = TreeShape::bounded(2, 2, 1).unwrap();
        let all: Vec<_> = shape.post_order().unwrap().collect();
        let expected = vec![
            addr(&[1, 1]),
            addr(&[1, 2]),
            addr(&[1]),
            addr(&[2, 1]),
            addr(&[2, 2]),
            addr(&[2]),
            addr(&[]),
        ];
        assert_eq!(all, expected);
    }

    #[test]
    fn post_order_rejects_unbounded() {
        let shape = TreeShape::unbounded(2, 3).unwrap();
        assert!(matches!(shape.post_order(), Err(Error::Unsupported(_))));
    }

    #[test]
    fn shape_validation() {
        assert!(TreeShape::bounded(1, 2, 1).is_err());
        assert!(TreeShape::bounded(2, 2, 0).is_err());
        assert!(TreeShape::bounded(2, 0, 1).is_ok());
    }

    #[test]
    fn ancestry() {
        assert!(addr(&[]).is_ancestor_of(&addr(&[1])));
        assert!(addr(&[1]).is_ancestor_of(&addr(&[1, 2])));
        assert!(!addr(&[1]).is_ancestor_of(&addr(&[1])));
        assert!(!addr(&[2]).is_ancestor_of(&addr(&[1, 2])));
        assert_eq!(addr(&[1, 2]).parent(), Some(addr(&[1])));
        assert_eq!(addr(&[]).parent(), None);
    }

    #[test]
    fn depth_assignment_wraps() {
        let a = FeatureAssignment::ByDepth(vec![2, 1]);
        assert_eq!(a.feature_at(&addr(&[])), Some(2));
        assert_eq!(a.feature_at(&addr(&[1])), Some(1));
        assert_eq!(a.feature_at(&addr(&[1, 1])), Some(2));
    }

    #[test]
    fn assignment_validation() {
        let shape = TreeShape::bounded(2, 2, 2).unwrap();
        assert!(FeatureAssignment::ByDepth(vec![1]).validate(&shape).is_err());
        assert!(FeatureAssignment::ByDepth(vec![1, 3]).validate(&shape).is_err());
        assert!(FeatureAssignment::ByDepth(vec![2, 1]).validate(&shape).is_ok());

        let mut map = BTreeMap::new();
        map.insert(addr(&[]), 1);
        map.insert(addr(&[1]), 2);
        assert!(FeatureAssignment::ByNode(map.clone()).validate(&shape).is_err());
        map.insert(addr(&[2]), 1);
        assert!(FeatureAssignment::ByNode(map.clone()).validate(&shape).is_ok());
        map.insert(addr(&[2, 2]), 1);
        assert!(FeatureAssignment::ByNode(map).validate(&shape).is_err());
    }

    #[test]
    fn node_param_lookup_order() {
        let mut p = NodeParam::shared(0.5);
        assert!(p.is_shared());
        p.by_depth = vec![0.9, 0.8];
        p.by_node.insert(addr(&[2]), 0.1);
        assert_eq!(*p.resolve(&addr(&[])), 0.9);
        assert_eq!(*p.resolve(&addr(&[1])), 0.8);
        assert_eq!(*p.resolve(&addr(&[2])), 0.1);
        assert_eq!(*p.resolve(&addr(&[1, 1])), 0.5);
        assert!(!p.is_shared());
    }

    #[test]
    fn assignment_json_shape() {
        let mut map = BTreeMap::new();
        map.insert(addr(&[]), 1);
        let json = serde_json::to_string(&FeatureAssignment::ByNode(map.clone())).unwrap();
        assert_eq!(json, r#"{"by_node":[{"address":[],"value":1}]}"#);
        let back: FeatureAssignment = serde_json::from_str(&json).unwrap();
        assert_eq!(back, FeatureAssignment::ByNode(map));
    }
}
