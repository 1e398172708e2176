//! Brute-force ground truth by explicit enumeration of every pruned subtree.
//!
//! Nothing here touches the inference engines: routing, marginals (Pólya-urn
//! products) and normalization are recomputed from the hyperparameters.

use std::collections::{BTreeSet, HashMap};

use crate::data::DataBatch;
use crate::error::{Error, Result};
use crate::leaf::{LeafPrior, Predictive};
use crate::model::{MetaTreeModel, MetaTreeSpec, PrunedSubtree};
use crate::shape::{NodeAddress, TreeShape};

pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

/// `N(0) = 1, N(d) = 1 + N(d-1)^M`, or `None` on overflow.
pub fn subtree_count(arity: u32, depth: u32) -> Option<u64> {
    let mut n: u64 = 1;
    for _ in 0..depth {
        n = n.checked_pow(arity)?.checked_add(1)?;
    }
    Some(n)
}

/// Every pruned subtree of the representative tree, in a fixed order.
pub fn enumerate_subtrees(shape: &TreeShape, cap: u64) -> Result<Vec<PrunedSubtree>> {
    let depth = shape.require_bounded("subtree enumeration")?;
    match subtree_count(shape.arity, depth) {
        Some(count) if count <= cap => {}
        Some(count) => {
            return Err(Error::EnumerationCap {
                count: count.to_string(),
                cap,
            })
        }
        None => {
            return Err(Error::EnumerationCap {
                count: "more than 2^64".into(),
                cap,
            })
        }
    }
    let sets = subtrees_below(&NodeAddress::root(), depth, shape.arity);
    sets.into_iter()
        .map(|nodes| PrunedSubtree::new(shape.arity, nodes.into_iter().collect()))
        .collect()
}

fn subtrees_below(address: &NodeAddress, remaining: u32, arity: u32) -> Vec<Vec<NodeAddress>> {
    let mut out = vec![vec![address.clone()]];
    if remaining == 0 {
        return out;
    }
    // Cartesian product of the children's options.
    let mut combos: Vec<Vec<NodeAddress>> = vec![vec![address.clone()]];
    for child in address.children(arity) {
        let options = subtrees_below(&child, remaining - 1, arity);
        let mut next = Vec::with_capacity(combos.len() * options.len());
        for partial in &combos {
            for option in &options {
                let mut nodes = partial.clone();
                nodes.extend(option.iter().cloned());
                next.push(nodes);
            }
        }
        combos = next;
    }
    out.extend(combos);
    out
}

/// `p(T | x^n, y^n)` for every subtree, and `log p(y^n | x^n)`.
#[derive(Debug, Clone)]
pub struct ExactPosterior {
    pub entries: Vec<(PrunedSubtree, f64)>,
    pub log_evidence: f64,
    ys_at: HashMap<NodeAddress, Vec<u32>>,
}

impl ExactPosterior {
    pub fn prob(&self, tree: &PrunedSubtree) -> Option<f64> {
        self.entries.iter().find(|(t, _)| t == tree).map(|(_, p)| *p)
    }

    /// `P(s is inner | s in T, data)`, the quantity a fitted model stores as
    /// `g_posterior`. `None` when no subtree of positive mass contains `s`.
    pub fn split_prob(&self, address: &NodeAddress) -> Option<f64> {
        let (mut present, mut inner) = (0.0, 0.0);
        for (tree, p) in &self.entries {
            if tree.contains(address) {
                present += p;
                if tree.is_inner(address) {
                    inner += p;
                }
            }
        }
        (present > 0.0).then(|| (inner / present).min(1.0))
    }
}

fn polya_log_marginal(prior: LeafPrior, ys: &[u32]) -> f64 {
    match prior {
        LeafPrior::BernoulliBeta { alpha, beta } => {
            let (mut zeros, mut ones) = (0.0, 0.0);
            let mut log_p = 0.0;
            for &y in ys {
                let hit = if y == 1 { alpha + ones } else { beta + zeros };
                log_p += (hit / (alpha + beta + zeros + ones)).ln();
                if y == 1 {
                    ones += 1.0;
                } else {
                    zeros += 1.0;
                }
            }
            log_p
        }
    }
}

fn posterior_predictive(prior: LeafPrior, ys: &[u32]) -> Predictive {
    match prior {
        LeafPrior::BernoulliBeta { alpha, beta } => {
            let ones = ys.iter().filter(|&&y| y == 1).count() as f64;
            Predictive::Bernoulli {
                p_one: (alpha + ones) / (alpha + beta + ys.len() as f64),
            }
        }
    }
}

/// Address reached by `x` at each depth, down to the depth bound.
fn full_path(spec: &MetaTreeSpec, x: &[u32]) -> Result<Vec<NodeAddress>> {
    let depth = spec.shape.require_bounded("the oracle")?;
    let mut path = vec![NodeAddress::root()];
    for _ in 0..depth {
        let here = path.last().expect("non-empty");
        let k = spec.assignment.feature_at(here).ok_or_else(|| {
            Error::InvalidAssignment(format!("no feature assigned to {here}"))
        })?;
        path.push(here.child(x[(k - 1) as usize]));
    }
    Ok(path)
}

fn validate(model: &MetaTreeModel, data: &DataBatch) -> Result<()> {
    let shape = model.shape();
    if data.arity() != shape.arity || data.feature_count() != shape.feature_count as usize {
        return Err(Error::InvalidShape(
            "data and model disagree on arity or feature count".into(),
        ));
    }
    let prior = model.spec().leaf_prior.default;
    for (row, &y) in data.ys().iter().enumerate() {
        if !prior.accepts(y) {
            return Err(Error::Observation {
                row: row + 1,
                value: i64::from(y),
                family: prior.family(),
            });
        }
    }
    Ok(())
}

/// Bayes' theorem over the explicit enumeration: prior times the product of
/// leaf marginals, normalized.
pub fn exact_posterior(model: &MetaTreeModel, data: &DataBatch) -> Result<ExactPosterior> {
    exact_posterior_capped(model, data, DEFAULT_ENUMERATION_CAP)
}

pub fn exact_posterior_capped(
    model: &MetaTreeModel,
    data: &DataBatch,
    cap: u64,
) -> Result<ExactPosterior> {
    validate(model, data)?;
    let spec = model.spec();
    let trees = enumerate_subtrees(&spec.shape, cap)?;

    let mut ys_at: HashMap<NodeAddress, Vec<u32>> = HashMap::new();
    for (x, y) in data.rows() {
        for address in full_path(spec, x)? {
            ys_at.entry(address).or_default().push(y);
        }
    }
    let no_data: Vec<u32> = Vec::new();

    let mut log_weights = Vec::with_capacity(trees.len());
    for tree in &trees {
        let mut log_w = 0.0;
        for address in tree.nodes() {
            let g = spec.g_prior(address);
            if tree.is_inner(address) {
                log_w += g.ln();
            } else {
                log_w += (1.0 - g).ln();
                let ys = ys_at.get(address).unwrap_or(&no_data);
                log_w += polya_log_marginal(spec.leaf_prior_at(address), ys);
            }
        }
        log_weights.push(log_w);
    }

    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateLikelihood {
            address: NodeAddress::root(),
        });
    }
    let sum: f64 = log_weights.iter().map(|w| (w - max).exp()).sum();
    let log_evidence = max + sum.ln();
    let entries = trees
        .into_iter()
        .zip(log_weights)
        .map(|(t, w)| (t, (w - log_evidence).exp()))
        .collect();
    Ok(ExactPosterior {
        entries,
        log_evidence,
        ys_at,
    })
}

/// `Σ_T p(T | data) p(y | x, T, data)` by direct summation.
pub fn exact_predictive(model: &MetaTreeModel, data: &DataBatch, x: &[u32]) -> Result<Predictive> {
    let posterior = exact_posterior(model, data)?;
    predictive_from(model, &posterior, x)
}

/// Tree-averaged predictive from an already computed [`ExactPosterior`].
pub fn predictive_from(
    model: &MetaTreeModel,
    posterior: &ExactPosterior,
    x: &[u32],
) -> Result<Predictive> {
    let spec = model.spec();
    crate::data::check_x(x, spec.shape.arity, spec.shape.feature_count as usize, 1)?;
    let path = full_path(spec, x)?;
    let no_data: Vec<u32> = Vec::new();
    let mut p_one = 0.0;
    for (tree, weight) in &posterior.entries {
        let leaf = path
            .iter()
            .find(|a| !tree.is_inner(a))
            .expect("every path ends at a leaf of the subtree");
        let ys = posterior.ys_at.get(leaf).unwrap_or(&no_data);
        p_one += weight * posterior_predictive(spec.leaf_prior_at(leaf), ys).prob(1);
    }
    Ok(Predictive::Bernoulli { p_one })
}

/// Largest absolute gap between the fitted model's factored subtree
/// posteriors and the enumeration.
pub fn max_subtree_discrepancy(model: &MetaTreeModel, exact: &ExactPosterior) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (tree, p) in &exact.entries {
        let gap = (model.posterior_prob(tree)? - p).abs();
        if gap.is_nan() {
            return Ok(f64::NAN);
        }
        worst = worst.max(gap);
    }
    Ok(worst)
}

/// Addresses whose reaching data all share one `x` (or none reach them).
pub fn concentrated_addresses(model: &MetaTreeModel, data: &DataBatch) -> Result<BTreeSet<NodeAddress>> {
    let spec = model.spec();
    let mut seen: HashMap<NodeAddress, Option<Vec<u32>>> = HashMap::new();
    // Some(x) while all rows agree, None once two differ.
    for (x, _) in data.rows() {
        for address in full_path(spec, x)? {
            match seen.get_mut(&address) {
                None => {
                    seen.insert(address, Some(x.to_vec()));
                }
                Some(state) => {
                    if state.as_deref() != Some(x) {
                        *state = None;
                    }
                }
            }
        }
    }
    let mut out = BTreeSet::new();
    for address in spec.shape.post_order()? {
        match seen.get(&address) {
            None | Some(Some(_)) => {
                out.insert(address);
            }
            Some(None) => {}
        }
    }
    Ok(out)
}
