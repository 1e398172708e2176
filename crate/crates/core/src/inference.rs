//! Posterior-update engines and Bayes-optimal prediction.
//!
//! All four engines produce the same parameterization of `p(T | x^n, y^n)`:
//! per-node posterior split probabilities plus per-node leaf states.
//!
//! - [`sequential_update`] absorbs one point, touching only its root-to-leaf path.
//! - [`batch_update`] runs one post-order sweep over every node of `T_max`.
//! - [`batch_update_sparse`] sweeps only nodes some data point reached.
//! - [`batch_update_lazy`] also stops at nodes whose data all share one `x`,
//!   which removes the need for a depth bound.
//!
//! Every quantity named `log_*` is a natural log. `q` is the marginal
//! likelihood of the data reaching a node under the sub-meta-tree rooted there.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize, Serializer};

use crate::data::DataBatch;
use crate::error::{Error, Result};
use crate::leaf::{LeafState, Predictive};
use crate::model::{MetaTreeModel, NodeId, ROOT};
use crate::shape::{FeatureAssignment, NodeAddress};

pub const DEFAULT_DEPTH_CAP: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Sequential,
    Batch,
    Sparse,
    Lazy,
}

impl Engine {
    pub const ALL: [Engine; 4] = [Engine::Sequential, Engine::Batch, Engine::Sparse, Engine::Lazy];

    pub fn name(&self) -> &'static str {
        match self {
            Engine::Sequential => "sequential",
            Engine::Batch => "batch",
            Engine::Sparse => "sparse",
            Engine::Lazy => "lazy",
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Engine {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Engine::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown engine {s:?} (expected sequential, batch, sparse or lazy)"))
    }
}

/// Outcome of one fit call.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub engine: Engine,
    pub n: usize,
    /// Number of `q` evaluations.
    pub nodes_visited: usize,
    /// `log p(y^n | x^n)` of all data the model has absorbed.
    pub log_marginal_likelihood: f64,
    #[serde(rename = "wall_time_ms", serialize_with = "as_millis")]
    pub wall_time: Duration,
}

fn as_millis<S: Serializer>(d: &Duration, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64() * 1e3)
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Deepest node the lazy engine may split before the data concentrates.
    pub depth_cap: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            depth_cap: DEFAULT_DEPTH_CAP,
        }
    }
}

/// Memo of leaf marginals keyed by prior hyperparameters and counts, so a
/// second meta-tree that shares ancestors' feature indices reuses them.
#[derive(Debug, Default, Clone)]
pub struct MarginalCache {
    map: HashMap<((u64, u64), [u64; 2]), f64>,
    hits: u64,
    misses: u64,
}

impl MarginalCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    fn get(&mut self, leaf: &LeafState) -> f64 {
        let key = (leaf.prior().key(), leaf.counts());
        if let Some(&v) = self.map.get(&key) {
            self.hits += 1;
            return v;
        }
        self.misses += 1;
        let v = leaf.absorbed_log_marginal();
        self.map.insert(key, v);
        v
    }
}

#[inline]
fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `log((1 - g) e^{stay} + g e^{split})`, kept between its two inputs.
#[inline]
fn log_mixture(g: f64, log_stay: f64, log_split: f64) -> f64 {
    let stay = if g == 1.0 {
        f64::NEG_INFINITY
    } else {
        (-g).ln_1p() + log_stay
    };
    let split = if g == 0.0 {
        f64::NEG_INFINITY
    } else {
        g.ln() + log_split
    };
    let mixed = log_add_exp(stay, split);
    if g > 0.0 && g < 1.0 {
        mixed.clamp(log_stay.min(log_split), log_stay.max(log_split))
    } else {
        mixed
    }
}

/// `g e^{split} / e^{q}`, clamped into [0, 1] against rounding.
#[inline]
fn split_posterior(g: f64, log_split: f64, log_q: f64) -> f64 {
    if g == 0.0 {
        return 0.0;
    }
    (g.ln() + log_split - log_q).exp().min(1.0)
}

fn check_q(model: &MetaTreeModel, id: NodeId, log_q: f64) -> Result<f64> {
    if log_q.is_finite() {
        Ok(log_q)
    } else {
        Err(Error::DegenerateLikelihood {
            address: model.nodes[id].address.clone(),
        })
    }
}

fn check_batch_shape(model: &MetaTreeModel, data: &DataBatch) -> Result<()> {
    let shape = model.shape();
    if data.arity() != shape.arity || data.feature_count() != shape.feature_count as usize {
        return Err(Error::InvalidShape(format!(
            "data has arity {} and {} features; the model expects {} and {}",
            data.arity(),
            data.feature_count(),
            shape.arity,
            shape.feature_count
        )));
    }
    let prior = model.nodes[ROOT].leaf.prior();
    for (row, &y) in data.ys().iter().enumerate() {
        prior.check(y, row + 1)?;
    }
    Ok(())
}

/// Splits a node whose data concentrated at one `x` into all its children,
/// so that it can absorb a point that may not share that `x`.
fn expand_concentrated(model: &mut MetaTreeModel, id: NodeId) {
    if model.nodes[id].concentrated_at.is_none() || model.nodes[id].feature.is_none() {
        return;
    }
    for m in 1..=model.shape().arity {
        model.materialize_child(id, m);
    }
    model.nodes[id].concentrated_at = None;
}

/// Absorbs one point along its path: `q` bottom-up from the path leaf, then
/// every on-path `g` from the frozen `q` values, then the counts.
pub fn sequential_update(model: &mut MetaTreeModel, x: &[u32], y: u32) -> Result<FitReport> {
    let start = Instant::now();
    model.shape().require_bounded("the sequential engine")?;
    model.check_x(x, 1)?;
    model.nodes[ROOT].leaf.prior().check(y, 1)?;
    let visited = sequential_step(model, x, y)?;
    Ok(FitReport {
        engine: Engine::Sequential,
        n: 1,
        nodes_visited: visited,
        log_marginal_likelihood: model.log_evidence,
        wall_time: start.elapsed(),
    })
}

fn sequential_step(model: &mut MetaTreeModel, x: &[u32], y: u32) -> Result<usize> {
    let mut path: Vec<NodeId> = Vec::with_capacity(16);
    let mut id = ROOT;
    loop {
        path.push(id);
        expand_concentrated(model, id);
        match model.nodes[id].feature {
            None => break,
            Some(k) => id = model.materialize_child(id, x[(k - 1) as usize]),
        }
    }

    let mut log_q = vec![0.0; path.len()];
    let last = path.len() - 1;
    log_q[last] = model.nodes[path[last]].leaf.log_predictive_unchecked(y);
    check_q(model, path[last], log_q[last])?;
    for j in (0..last).rev() {
        let node = &model.nodes[path[j]];
        let stay = node.leaf.log_predictive_unchecked(y);
        log_q[j] = check_q(model, path[j], log_mixture(node.g_posterior, stay, log_q[j + 1]))?;
    }
    for j in 0..last {
        let node = &mut model.nodes[path[j]];
        node.g_posterior = split_posterior(node.g_posterior, log_q[j + 1], log_q[j]);
    }
    for &id in &path {
        model.nodes[id].leaf.observe(y);
    }
    model.observations += 1;
    model.log_evidence += log_q[0];
    Ok(path.len())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Sweep {
    Full,
    Sparse,
}

/// Closed-form posterior from the prior in one post-order pass over all of `S(T_max)`.
pub fn batch_update(model: &mut MetaTreeModel, data: &DataBatch) -> Result<FitReport> {
    run_batch(model, data, Sweep::Full, None)
}

/// [`batch_update`] with leaf marginals memoized across calls and models.
pub fn batch_update_cached(
    model: &mut MetaTreeModel,
    data: &DataBatch,
    cache: &mut MarginalCache,
) -> Result<FitReport> {
    run_batch(model, data, Sweep::Full, Some(cache))
}

/// [`batch_update`] restricted to nodes reached by at least one point; an
/// empty subtree contributes `q = 1` and keeps `g` at its prior.
pub fn batch_update_sparse(model: &mut MetaTreeModel, data: &DataBatch) -> Result<FitReport> {
    run_batch(model, data, Sweep::Sparse, None)
}

fn prepare_batch(model: &MetaTreeModel, data: &DataBatch, engine: Engine) -> Result<()> {
    if !model.is_fresh() {
        return Err(Error::AlreadyFitted);
    }
    if engine != Engine::Lazy {
        model
            .shape()
            .require_bounded(&format!("the {engine} engine"))?;
    }
    check_batch_shape(model, data)
}

fn run_batch(
    model: &mut MetaTreeModel,
    data: &DataBatch,
    sweep: Sweep,
    mut cache: Option<&mut MarginalCache>,
) -> Result<FitReport> {
    let start = Instant::now();
    let engine = match sweep {
        Sweep::Full => Engine::Batch,
        Sweep::Sparse => Engine::Sparse,
    };
    prepare_batch(model, data, engine)?;

    // Route every row once, counting y at each node on its path.
    for (x, y) in data.rows() {
        let mut id = ROOT;
        loop {
            model.nodes[id].leaf.observe(y);
            match model.nodes[id].feature {
                None => break,
                Some(k) => id = model.materialize_child(id, x[(k - 1) as usize]),
            }
        }
    }

    let mut visited = 0;
    let log_q = match sweep {
        Sweep::Full => sweep_full(model, ROOT, &mut cache, &mut visited)?,
        Sweep::Sparse if data.is_empty() => 0.0,
        Sweep::Sparse => sweep_sparse(model, ROOT, &mut visited)?,
    };
    model.observations = data.len() as u64;
    model.log_evidence = log_q;
    model.batch_fitted = true;
    Ok(FitReport {
        engine,
        n: data.len(),
        nodes_visited: visited,
        log_marginal_likelihood: log_q,
        wall_time: start.elapsed(),
    })
}

fn leaf_marginal(leaf: &LeafState, cache: &mut Option<&mut MarginalCache>) -> f64 {
    match cache {
        Some(cache) => cache.get(leaf),
        None => leaf.absorbed_log_marginal(),
    }
}

fn sweep_full(
    model: &mut MetaTreeModel,
    id: NodeId,
    cache: &mut Option<&mut MarginalCache>,
    visited: &mut usize,
) -> Result<f64> {
    let log_stay = leaf_marginal(&model.nodes[id].leaf, cache);
    let log_q = match model.nodes[id].feature {
        None => log_stay,
        Some(_) => {
            let mut log_split = 0.0;
            for m in 1..=model.shape().arity {
                let child = model.materialize_child(id, m);
                log_split += sweep_full(model, child, cache, visited)?;
            }
            let g = model.nodes[id].g_prior;
            let log_q = check_q(model, id, log_mixture(g, log_stay, log_split))?;
            model.nodes[id].g_posterior = split_posterior(g, log_split, log_q);
            log_q
        }
    };
    let log_q = check_q(model, id, log_q)?;
    model.nodes[id].log_q = log_q;
    *visited += 1;
    Ok(log_q)
}

fn sweep_sparse(model: &mut MetaTreeModel, id: NodeId, visited: &mut usize) -> Result<f64> {
    let log_stay = model.nodes[id].leaf.absorbed_log_marginal();
    let log_q = match model.nodes[id].feature {
        None => log_stay,
        Some(_) => {
            let mut log_split = 0.0;
            for m in 1..=model.shape().arity {
                if let Some(child) = model.child(id, m) {
                    if model.nodes[child].leaf.count() > 0 {
                        log_split += sweep_sparse(model, child, visited)?;
                    }
                }
            }
            let g = model.nodes[id].g_prior;
            let log_q = check_q(model, id, log_mixture(g, log_stay, log_split))?;
            model.nodes[id].g_posterior = split_posterior(g, log_split, log_q);
            log_q
        }
    };
    let log_q = check_q(model, id, log_q)?;
    model.nodes[id].log_q = log_q;
    *visited += 1;
    Ok(log_q)
}

/// Sparse sweep that also stops wherever the reaching data share one `x`.
/// Needs one leaf prior shared by every node; works on unbounded trees.
pub fn batch_update_lazy(
    model: &mut MetaTreeModel,
    data: &DataBatch,
    options: &FitOptions,
) -> Result<FitReport> {
    let start = Instant::now();
    prepare_batch(model, data, Engine::Lazy)?;
    if model.spec().shared_leaf_prior().is_none() {
        return Err(Error::SharedPriorRequired);
    }
    let rows: Vec<usize> = (0..data.len()).collect();
    let mut visited = 0;
    let log_q = sweep_lazy(model, ROOT, data, &rows, options.depth_cap, &mut visited)?;
    model.observations = data.len() as u64;
    model.log_evidence = log_q;
    model.batch_fitted = true;
    Ok(FitReport {
        engine: Engine::Lazy,
        n: data.len(),
        nodes_visited: visited,
        log_marginal_likelihood: log_q,
        wall_time: start.elapsed(),
    })
}

fn sweep_lazy(
    model: &mut MetaTreeModel,
    id: NodeId,
    data: &DataBatch,
    rows: &[usize],
    depth_cap: usize,
    visited: &mut usize,
) -> Result<f64> {
    *visited += 1;
    for &r in rows {
        model.nodes[id].leaf.observe(data.y(r));
    }
    let log_stay = model.nodes[id].leaf.absorbed_log_marginal();
    let concentrated = rows
        .split_first()
        .is_none_or(|(&first, rest)| rest.iter().all(|&r| data.x(r) == data.x(first)));
    let at_bound = model.shape().is_max_depth(&model.nodes[id].address);

    if concentrated || at_bound {
        let node = &mut model.nodes[id];
        node.g_posterior = node.g_prior;
        if concentrated && !at_bound && !rows.is_empty() {
            node.concentrated_at = Some(data.x(rows[0]).to_vec());
        }
        let log_q = check_q(model, id, log_stay)?;
        model.nodes[id].log_q = log_q;
        return Ok(log_q);
    }

    let address = &model.nodes[id].address;
    if address.depth() >= depth_cap {
        return Err(Error::DepthCapExceeded {
            address: address.clone(),
            cap: depth_cap,
        });
    }
    let k = model.feature_of(id)? as usize;
    let arity = model.shape().arity as usize;
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); arity];
    for &r in rows {
        buckets[(data.x(r)[k - 1] - 1) as usize].push(r);
    }
    let mut log_split = 0.0;
    for (i, bucket) in buckets.iter().enumerate() {
        if bucket.is_empty() {
            continue;
        }
        let child = model.materialize_child(id, i as u32 + 1);
        log_split += sweep_lazy(model, child, data, bucket, depth_cap, visited)?;
    }
    let g = model.nodes[id].g_prior;
    let log_q = check_q(model, id, log_mixture(g, log_stay, log_split))?;
    let node = &mut model.nodes[id];
    node.g_posterior = split_posterior(g, log_split, log_q);
    node.log_q = log_q;
    Ok(log_q)
}

/// Fits `data` with the chosen engine. The sequential engine feeds rows in order.
pub fn fit(
    model: &mut MetaTreeModel,
    engine: Engine,
    data: &DataBatch,
    options: &FitOptions,
) -> Result<FitReport> {
    match engine {
        Engine::Batch => batch_update(model, data),
        Engine::Sparse => batch_update_sparse(model, data),
        Engine::Lazy => batch_update_lazy(model, data, options),
        Engine::Sequential => {
            let start = Instant::now();
            model.shape().require_bounded("the sequential engine")?;
            check_batch_shape(model, data)?;
            let mut visited = 0;
            for (x, y) in data.rows() {
                visited += sequential_step(model, x, y)?;
            }
            Ok(FitReport {
                engine,
                n: data.len(),
                nodes_visited: visited,
                log_marginal_likelihood: model.log_evidence,
                wall_time: start.elapsed(),
            })
        }
    }
}

/// `log p(y^n | x^n)`: the root `q` after a batch fit, or the sum of
/// one-step predictives after sequential updates. Zero for an unfitted model.
pub fn log_marginal_likelihood(model: &MetaTreeModel) -> f64 {
    model.log_marginal_likelihood()
}

/// Where the prediction walk currently is: a stored node, or a node that
/// was never materialized and is reconstructed from its parent.
enum Cursor {
    Stored(NodeId),
    Virtual {
        address: NodeAddress,
        leaf: LeafState,
        concentrated_at: Option<Vec<u32>>,
    },
}

/// Posterior-mixture predictive for a new point: along the path of `x`,
/// `v(s) = (1 - g_s) p_s(y) + g_s v(child)`, with `p_s` the node's posterior
/// predictive and `v` at the path leaf its own predictive.
pub fn predict(model: &MetaTreeModel, x: &[u32]) -> Result<Predictive> {
    model.check_x(x, 1)?;
    let spec = model.spec();
    let bounded = spec.shape.is_bounded();
    let mut chain: Vec<(f64, Predictive)> = Vec::new();
    let mut cursor = Cursor::Stored(ROOT);

    let terminal = loop {
        let (address, g, leaf, concentrated_at) = match &cursor {
            Cursor::Stored(id) => {
                let node = &model.nodes[*id];
                (
                    &node.address,
                    node.g_posterior,
                    node.leaf,
                    node.concentrated_at.as_deref(),
                )
            }
            Cursor::Virtual {
                address,
                leaf,
                concentrated_at,
            } => (address, spec.g_prior(address), *leaf, concentrated_at.as_deref()),
        };
        if spec.shape.is_max_depth(address) {
            break leaf.predictive();
        }
        if !bounded {
            // Every deeper node on this path holds exactly this leaf state
            // (or none, with the shared prior), so the mixture collapses.
            if leaf.count() == 0 {
                break leaf.predictive();
            }
            if let Some(point) = concentrated_at {
                if !path_diverges(&spec.assignment, x, point) {
                    break leaf.predictive();
                }
            }
        }
        chain.push((g, leaf.predictive()));

        let k = match &cursor {
            Cursor::Stored(id) => model.feature_of(*id)?,
            Cursor::Virtual { address, .. } => spec
                .feature_at(address)?
                .expect("inner node has a feature"),
        };
        let m = x[(k - 1) as usize];
        let stored_child = match &cursor {
            Cursor::Stored(id) => model.child(*id, m),
            Cursor::Virtual { .. } => None,
        };
        cursor = match stored_child {
            Some(child) => Cursor::Stored(child),
            None => {
                let child = address.child(m);
                let prior = spec.leaf_prior_at(&child);
                match concentrated_at {
                    Some(point) if point[(k - 1) as usize] == m => Cursor::Virtual {
                        leaf: LeafState::from_counts(prior, leaf.counts()),
                        concentrated_at: Some(point.to_vec()),
                        address: child,
                    },
                    _ => Cursor::Virtual {
                        leaf: prior.empty_state(),
                        concentrated_at: None,
                        address: child,
                    },
                }
            }
        };
    };

    Ok(chain
        .into_iter()
        .rev()
        .fold(terminal, |below, (g, here)| here.mix(below, g)))
}

/// Whether the path of `x` eventually leaves the path of `point` in an
/// unbounded tree. Only decidable up front for depth-indexed assignments;
/// per-node assignments are walked explicitly.
fn path_diverges(assignment: &FeatureAssignment, x: &[u32], point: &[u32]) -> bool {
    match assignment {
        FeatureAssignment::ByDepth(features) => features
            .iter()
            .any(|&k| x[(k - 1) as usize] != point[(k - 1) as usize]),
        FeatureAssignment::ByNode(_) => x != point,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::leaf::LeafPrior;
    use crate::model::{MetaTreeSpec, PrunedSubtree};
    use crate::shape::{NodeParam, TreeShape};

    fn addr(path: &[u32]) -> NodeAddress {
        NodeAddress(path.to_vec())
    }

    fn worked_model() -> MetaTreeModel {
        let shape = TreeShape::bounded(2, 1, 1).unwrap();
        MetaTreeModel::new(MetaTreeSpec::new(shape, FeatureAssignment::ByDepth(vec![1]))).unwrap()
    }

    fn worked_data() -> DataBatch {
        DataBatch::from_rows(2, 1, [([1], 1), ([2], 0)]).unwrap()
    }

    #[test]
    fn log_add_exp_handles_infinities() {
        assert_eq!(log_add_exp(f64::NEG_INFINITY, -1.0), -1.0);
        assert_eq!(log_add_exp(-2.0, f64::NEG_INFINITY), -2.0);
        assert!((log_add_exp(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((log_mixture(0.5, 0.0, 0.0)).abs() < 1e-15);
        assert_eq!(log_mixture(1.0, f64::NEG_INFINITY, -3.0), -3.0);
        assert_eq!(log_mixture(0.0, -3.0, f64::NEG_INFINITY), -3.0);
    }

    #[test]
    fn worked_instance_batch() {
        let mut model = worked_model();
        let report = batch_update(&mut model, &worked_data()).unwrap();
        assert!((model.g_posterior(&addr(&[])) - 0.6).abs() < 1e-14);
        assert!((report.log_marginal_likelihood - (5.0f64 / 24.0).ln()).abs() < 1e-14);
        assert_eq!(report.nodes_visited, 3);
        let p = predict(&model, &[1]).unwrap();
        assert!((p.prob(1) - 0.6).abs() < 1e-14);
        let p = predict(&model, &[2]).unwrap();
        assert!((p.prob(1) - 0.4).abs() < 1e-14);
        let split = PrunedSubtree::new(2, [addr(&[]), addr(&[1]), addr(&[2])].into()).unwrap();
        assert!((model.posterior_prob(&split).unwrap() - 0.6).abs() < 1e-14);
        assert!(
            (model.posterior_prob(&PrunedSubtree::root_only(2)).unwrap() - 0.4).abs() < 1e-14
        );
    }

    #[test]
    fn worked_instance_sequential() {
        let mut model = worked_model();
        sequential_update(&mut model, &[1], 1).unwrap();
        assert!((model.g_posterior(&addr(&[])) - 0.5).abs() < 1e-15);
        let report = sequential_update(&mut model, &[2], 0).unwrap();
        assert!((model.g_posterior(&addr(&[])) - 0.6).abs() < 1e-14);
        assert!((report.log_marginal_likelihood - (5.0f64 / 24.0).ln()).abs() < 1e-14);
        assert_eq!(report.nodes_visited, 2);
    }

    #[test]
    fn sequential_leaves_off_path_nodes_alone() {
        let shape = TreeShape::bounded(2, 2, 2).unwrap();
        let mut model =
            MetaTreeModel::new(MetaTreeSpec::new(shape, FeatureAssignment::ByDepth(vec![1, 2])))
                .unwrap();
        sequential_update(&mut model, &[1, 1], 1).unwrap();
        sequential_update(&mut model, &[1, 2], 0).unwrap();
        let before = model.node(&addr(&[1])).unwrap().g_posterior.to_bits();
        sequential_update(&mut model, &[2, 1], 1).unwrap();
        assert_eq!(model.node(&addr(&[1])).unwrap().g_posterior.to_bits(), before);
    }

    #[test]
    fn empty_batch_keeps_prior() {
        let shape = TreeShape::bounded(2, 2, 2).unwrap();
        let spec = MetaTreeSpec::new(shape, FeatureAssignment::ByDepth(vec![1, 2]))
            .with_split_prior(NodeParam::shared(0.3));
        for sweep in [Engine::Batch, Engine::Sparse, Engine::Lazy] {
            let mut model = MetaTreeModel::new(spec.clone()).unwrap();
            let report = fit(&mut model, sweep, &DataBatch::new(2, 2), &FitOptions::default()).unwrap();
            assert_eq!(report.log_marginal_likelihood, 0.0);
            for address in model.enumerate_addresses().unwrap() {
                let want = model.spec().g_prior(&address);
                assert!((model.g_posterior(&address) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn batch_twice_is_rejected() {
        let mut model = worked_model();
        batch_update(&mut model, &worked_data()).unwrap();
        assert!(matches!(
            batch_update(&mut model, &worked_data()),
            Err(Error::AlreadyFitted)
        ));
        assert!(matches!(
            batch_update_sparse(&mut model, &worked_data()),
            Err(Error::AlreadyFitted)
        ));
        model.reset();
        assert!(batch_update(&mut model, &worked_data()).is_ok());
    }

    #[test]
    fn batch_after_sequential_is_rejected() {
        let mut model = worked_model();
        sequential_update(&mut model, &[1], 1).unwrap();
        assert!(matches!(
            batch_update(&mut model, &worked_data()),
            Err(Error::AlreadyFitted)
        ));
    }

    #[test]
    fn sequential_after_batch_continues_posterior() {
        let mut chained = worked_model();
        batch_update(&mut chained, &DataBatch::from_rows(2, 1, [([1], 1)]).unwrap()).unwrap();
        sequential_update(&mut chained, &[2], 0).unwrap();
        let mut direct = worked_model();
        batch_update(&mut direct, &worked_data()).unwrap();
        assert!((chained.g_posterior(&addr(&[])) - direct.g_posterior(&addr(&[]))).abs() < 1e-14);
        assert!((chained.log_marginal_likelihood() - direct.log_marginal_likelihood()).abs() < 1e-14);
    }

    #[test]
    fn invalid_y_rejected_with_row() {
        let mut model = worked_model();
        let data = DataBatch::from_rows(2, 1, [([1], 1), ([2], 5)]).unwrap();
        assert!(matches!(
            batch_update(&mut model, &data),
            Err(Error::Observation { row: 2, .. })
        ));
        assert!(model.is_fresh());
        assert!(matches!(
            sequential_update(&mut model, &[1], 2),
            Err(Error::Observation { .. })
        ));
    }

    #[test]
    fn data_shape_mismatch_rejected() {
        let mut model = worked_model();
        let data = DataBatch::from_rows(2, 2, [([1, 1], 1)]).unwrap();
        assert!(matches!(batch_update(&mut model, &data), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn degenerate_likelihood_reported() {
        // g = 1 and a child whose subtree cannot generate anything is impossible
        // with positive Beta hyperparameters, so exercise the check directly.
        let model = worked_model();
        let err = check_q(&model, ROOT, f64::NEG_INFINITY).unwrap_err();
        assert!(matches!(err, Error::DegenerateLikelihood { .. }));
    }

    #[test]
    fn sparse_single_point_visits_one_path() {
        let shape = TreeShape::bounded(2, 3, 3).unwrap();
        let spec = MetaTreeSpec::new(shape, FeatureAssignment::ByDepth(vec![1, 2, 3]));
        let mut model = MetaTreeModel::new(spec.clone()).unwrap();
        let data = DataBatch::from_rows(2, 3, [([1, 2, 1], 1)]).unwrap();
        let report = batch_update_sparse(&mut model, &data).unwrap();
        assert_eq!(report.nodes_visited, 4);

        let mut dup = MetaTreeModel::new(spec).unwrap();
        let data = DataBatch::from_rows(2, 3, vec![([1, 2, 1], 1); 9]).unwrap();
        assert_eq!(batch_update_sparse(&mut dup, &data).unwrap().nodes_visited, 4);
    }

    #[test]
    fn full_batch_visits_every_node() {
        let shape = TreeShape::bounded(2, 5, 5).unwrap();
        let spec = MetaTreeSpec::new(shape, FeatureAssignment::cyclic(5, 5));
        for n in [0usize, 1, 10] {
            let mut model = MetaTreeModel::new(spec.clone()).unwrap();
            let data = DataBatch::from_rows(2, 5, vec![([1, 2, 1, 2, 1], 1); n]).unwrap();
            assert_eq!(batch_update(&mut model, &data).unwrap().nodes_visited, 63);
        }
    }

    #[test]
    fn lazy_identical_points_stay_at_root() {
        let shape = TreeShape::unbounded(2, 3).unwrap();
        let spec = MetaTreeSpec::new(shape, FeatureAssignment::ByDepth(vec![1, 2, 3]));
        let mut model = MetaTreeModel::new(spec).unwrap();
        let data = DataBatch::from_rows(2, 3, vec![([1, 2, 2], 1), ([1, 2, 2], 0), ([1, 2, 2], 1)]).unwrap();
        let report = batch_update_lazy(&mut model, &data, &FitOptions::default()).unwrap();
        assert_eq!(report.nodes_visited, 1);
        assert_eq!(model.materialized_count(), 1);
        assert_eq!(model.g_posterior(&NodeAddress::root()), 0.5);
        // All data sit on one point, so the mixture equals the root's posterior predictive.
        let p = predict(&model, &[1, 2, 2]).unwrap();
        assert!((p.prob(1) - 3.0 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn lazy_requires_shared_prior() {
        let shape = TreeShape::bounded(2, 2, 2).unwrap();
        let mut leaf = NodeParam::shared(LeafPrior::default());
        leaf.by_depth = vec![LeafPrior::default(), LeafPrior::bernoulli_beta(2.0, 1.0).unwrap()];
        let spec = MetaTreeSpec::new(shape, FeatureAssignment::ByDepth(vec![1, 2])).with_leaf_prior(leaf);
        let mut model = MetaTreeModel::new(spec).unwrap();
        assert!(matches!(
            batch_update_lazy(&mut model, &DataBatch::new(2, 2), &FitOptions::default()),
            Err(Error::SharedPriorRequired)
        ));
    }

    #[test]
    fn lazy_depth_cap_is_an_error() {
        // Splitting only on feature 1 never separates points that differ in feature 2.
        let shape = TreeShape::unbounded(2, 2).unwrap();
        let spec = MetaTreeSpec::new(shape, FeatureAssignment::ByDepth(vec![1]));
        let mut model = MetaTreeModel::new(spec).unwrap();
        let data = DataBatch::from_rows(2, 2, [([1, 1], 1), ([1, 2], 0)]).unwrap();
        let err = batch_update_lazy(&mut model, &data, &FitOptions { depth_cap: 8 }).unwrap_err();
        match err {
            Error::DepthCapExceeded { address, cap } => {
                assert_eq!(cap, 8);
                assert_eq!(address.depth(), 8);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unbounded_engines_rejected_except_lazy() {
        let shape = TreeShape::unbounded(2, 1).unwrap();
        let spec = MetaTreeSpec::new(shape, FeatureAssignment::ByDepth(vec![1]));
        let data = DataBatch::from_rows(2, 1, [([1], 1)]).unwrap();
        for engine in [Engine::Sequential, Engine::Batch, Engine::Sparse] {
            let mut model = MetaTreeModel::new(spec.clone()).unwrap();
            assert!(matches!(
                fit(&mut model, engine, &data, &FitOptions::default()),
                Err(Error::Unsupported(_))
            ));
        }
    }

    #[test]
    fn unfitted_prediction_is_symmetric() {
        let model = worked_model();
        assert_eq!(predict(&model, &[2]).unwrap().prob(1), 0.5);
        let shape = TreeShape::unbounded(2, 2).unwrap();
        let model = MetaTreeModel::new(MetaTreeSpec::new(shape, FeatureAssignment::ByDepth(vec![1, 2])))
            .unwrap();
        assert_eq!(predict(&model, &[2, 1]).unwrap().prob(1), 0.5);
    }

    #[test]
    fn cache_reuses_shared_ancestors() {
        let shape = TreeShape::bounded(2, 2, 3).unwrap();
        let data = DataBatch::from_rows(
            2,
            3,
            [([1, 1, 2], 1), ([1, 2, 1], 0), ([2, 2, 2], 1), ([2, 1, 1], 1)],
        )
        .unwrap();
        let mut cache = MarginalCache::new();
        let mut first = MetaTreeModel::new(MetaTreeSpec::new(shape, FeatureAssignment::ByDepth(vec![1, 2]))).unwrap();
        batch_update_cached(&mut first, &data, &mut cache).unwrap();
        let hits_before = cache.hits();
        let mut second = MetaTreeModel::new(MetaTreeSpec::new(shape, FeatureAssignment::ByDepth(vec![1, 3]))).unwrap();
        let cached = batch_update_cached(&mut second, &data, &mut cache).unwrap();
        assert!(cache.hits() >= hits_before + 3);

        let mut plain = MetaTreeModel::new(MetaTreeSpec::new(shape, FeatureAssignment::ByDepth(vec![1, 3]))).unwrap();
        let uncached = batch_update(&mut plain, &data).unwrap();
        assert_eq!(cached.log_marginal_likelihood, uncached.log_marginal_likelihood);
        for address in plain.enumerate_addresses().unwrap() {
            assert_eq!(plain.g_posterior(&address), second.g_posterior(&address));
        }
    }

    #[test]
    fn engine_names_round_trip() {
        for engine in Engine::ALL {
            assert_eq!(engine.name().parse::<Engine>().unwrap(), engine);
        }
        assert!("fast".parse::<Engine>().is_err());
    }
}
