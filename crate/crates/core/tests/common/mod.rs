#![allow(dead_code)]

use metatree::{
    DataBatch, FeatureAssignment, LeafPrior, MetaTreeSpec, NodeAddress, NodeParam, TreeShape,
};
use rand::seq::IndexedRandom;
use rand::Rng;

pub struct Instance {
    pub spec: MetaTreeSpec,
    pub data: DataBatch,
}

pub struct Limits {
    pub max_k: u32,
    pub max_depth: u32,
    pub max_n: usize,
    pub shared_prior: bool,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_k: 4,
            max_depth: 3,
            max_n: 30,
            shared_prior: false,
        }
    }
}

fn beta_prior<R: Rng>(rng: &mut R) -> LeafPrior {
    LeafPrior::bernoulli_beta(rng.random_range(0.2..5.0), rng.random_range(0.2..5.0)).unwrap()
}

/// Random bounded instance: per-node g in (0, 1), per-node or shared Beta
/// priors, depth- or node-indexed assignment, and x drawn from a small pool
/// half the time so duplicated rows are common.
pub fn random_instance<R: Rng>(rng: &mut R, limits: &Limits) -> Instance {
    let arity = rng.random_range(2..=3u32);
    let k = rng.random_range(1..=limits.max_k);
    let depth = rng.random_range(0..=limits.max_depth);
    let shape = TreeShape::bounded(arity, depth, k).unwrap();

    let addresses: Vec<NodeAddress> = shape.post_order().unwrap().collect();
    let assignment = if rng.random_bool(0.5) {
        FeatureAssignment::ByDepth((0..depth).map(|_| rng.random_range(1..=k)).collect())
    } else {
        FeatureAssignment::ByNode(
            addresses
                .iter()
                .filter(|a| a.depth() < depth as usize)
                .map(|a| (a.clone(), rng.random_range(1..=k)))
                .collect(),
        )
    };

    let mut split = NodeParam::shared(rng.random_range(0.01..0.99));
    for a in &addresses {
        split.by_node.insert(a.clone(), rng.random_range(0.01..0.99));
    }
    let mut leaf = NodeParam::shared(beta_prior(rng));
    if !limits.shared_prior {
        for a in &addresses {
            leaf.by_node.insert(a.clone(), beta_prior(rng));
        }
    }
    let spec = MetaTreeSpec::new(shape, assignment)
        .with_split_prior(split)
        .with_leaf_prior(leaf);

    let n = rng.random_range(0..=limits.max_n);
    let pool: Vec<Vec<u32>> = (0..rng.random_range(1..=4))
        .map(|_| (0..k).map(|_| rng.random_range(1..=arity)).collect())
        .collect();
    let use_pool = rng.random_bool(0.5);
    let mut data = DataBatch::new(arity, k as usize);
    for _ in 0..n {
        let x: Vec<u32> = if use_pool {
            pool.choose(rng).unwrap().clone()
        } else {
            (0..k).map(|_| rng.random_range(1..=arity)).collect()
        };
        data.push(&x, rng.random_range(0..=1)).unwrap();
    }
    Instance { spec, data }
}

pub fn all_points(arity: u32, k: u32) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for _ in 0..k {
        out = out
            .into_iter()
            .flat_map(|p: Vec<u32>| {
                (1..=arity).map(move |m| {
                    let mut q = p.clone();
                    q.push(m);
                    q
                })
            })
            .collect();
    }
    out
}
