//! Synthetic data drawn from the model's own generative process: a tree from
//! the split prior, `θ` per leaf from its leaf prior, `x` uniform over
//! `{1..M}^K`, and `y` from the leaf that `x` reaches.

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

use crate::data::DataBatch;
use crate::error::{Error, Result};
use crate::leaf::LeafPrior;
use crate::model::{MetaTreeSpec, PrunedSubtree};
use crate::shape::NodeAddress;

/// Draws a tree: each node splits with probability `g_s`.
pub fn sample_tree<R: Rng + ?Sized>(spec: &MetaTreeSpec, rng: &mut R) -> Result<PrunedSubtree> {
    spec.shape.require_bounded("tree sampling")?;
    let mut nodes = BTreeSet::new();
    let mut stack = vec![NodeAddress::root()];
    while let Some(address) = stack.pop() {
        let g = spec.g_prior(&address);
        if g > 0.0 && rng.random_bool(g) {
            stack.extend(address.children(spec.shape.arity));
        }
        nodes.insert(address);
    }
    PrunedSubtree::new(spec.shape.arity, nodes)
}

pub fn generate<R: Rng + ?Sized>(spec: &MetaTreeSpec, n: usize, rng: &mut R) -> Result<DataBatch> {
    let tree = sample_tree(spec, rng)?;
    let mut theta: HashMap<NodeAddress, f64> = HashMap::new();
    for leaf in tree.leaves() {
        let value = match spec.leaf_prior_at(leaf) {
            LeafPrior::BernoulliBeta { alpha, beta } => Beta::new(alpha, beta)
                .map_err(|e| Error::InvalidHyperparameter(e.to_string()))?
                .sample(rng),
        };
        theta.insert(leaf.clone(), value);
    }

    let k = spec.shape.feature_count as usize;
    let mut batch = DataBatch::new(spec.shape.arity, k);
    let mut x = vec![0u32; k];
    for _ in 0..n {
        for v in x.iter_mut() {
            *v = rng.random_range(1..=spec.shape.arity);
        }
        let mut address = NodeAddress::root();
        while tree.is_inner(&address) {
            let feature = spec
                .feature_at(&address)?
                .expect("inner nodes of a sampled tree are above the depth bound");
            address = address.child(x[(feature - 1) as usize]);
        }
        let y = u32::from(rng.random_bool(theta[&address]));
        batch.push(&x, y)?;
    }
    Ok(batch)
}

/// [`generate`] with a ChaCha8 stream seeded from `seed`.
pub fn generate_seeded(spec: &MetaTreeSpec, n: usize, seed: u64) -> Result<DataBatch> {
    generate(spec, n, &mut ChaCha8Rng::seed_from_u64(seed))
}
