//! Exact Bayesian posteriors over meta-trees.
//!
//! A meta-tree is the set of every pruned subtree of a representative M-ary
//! tree with one fixed feature assignment. Under the split prior
//! `p(T) = Π_{inner} g_s Π_{leaf} (1 - g_s)` and conjugate leaf models, the
//! posterior keeps the same product form, so fitting reduces to computing a
//! posterior split probability per node.
//!
//! ```
//! use metatree::{DataBatch, FeatureAssignment, MetaTreeModel, MetaTreeSpec, TreeShape};
//! use metatree::inference::{batch_update, predict};
//!
//! let shape = TreeShape::bounded(2, 1, 1).unwrap();
//! let mut model = MetaTreeModel::new(MetaTreeSpec::new(shape, FeatureAssignment::ByDepth(vec![1]))).unwrap();
//! let data = DataBatch::from_rows(2, 1, [([1], 1), ([2], 0)]).unwrap();
//! let report = batch_update(&mut model, &data).unwrap();
//! assert!((report.log_marginal_likelihood - (5.0f64 / 24.0).ln()).abs() < 1e-12);
//! assert!((predict(&model, &[1]).unwrap().prob(1) - 0.6).abs() < 1e-12);
//! ```

pub mod bench;
pub mod data;
pub mod error;
pub mod inference;
pub mod leaf;
pub mod model;
pub mod oracle;
pub mod shape;
pub mod synth;

pub use data::DataBatch;
pub use error::{Error, Result};
pub use inference::{Engine, FitOptions, FitReport};
pub use leaf::{LeafPrior, LeafState, Predictive};
pub use model::{MetaTreeModel, MetaTreeSpec, NodeView, PrunedSubtree};
pub use shape::{FeatureAssignment, NodeAddress, NodeParam, TreeShape};
