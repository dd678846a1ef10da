//! Survival modelling with Cox proportional hazards and gradient-boosted Cox
//! trees, plus hazard ratios derived from exact TreeSHAP attributions.
//!
//! The pipeline mirrors a common clinical workflow:
//!
//! 1. load a survival CSV ([`data::load_csv`]) and preprocess it
//!    ([`data::preprocess`]),
//! 2. fit a linear Cox model ([`cox::fit_coxph`]) and a boosted tree ensemble
//!    trained on the Cox partial likelihood ([`boost::train`]),
//! 3. explain the ensemble with path-dependent TreeSHAP ([`shap::tree_shap`]),
//! 4. turn attributions into subgroup hazard ratios with bootstrap percentile
//!    intervals ([`hazard::bootstrap_hr`]) and compare them against the Cox
//!    hazard ratios ([`cox::hazard_ratio_coxph`]).
//!
//! ```
//! use coxshap::sim::{simulate, SimConfig};
//! use coxshap::cox::fit_coxph;
//!
//! let ds = simulate(&SimConfig { n: 200, betas: vec![1.0, -1.0], ..SimConfig::default() }).unwrap();
//! let model = fit_coxph(&ds).unwrap();
//! assert!(model.converged);
//! assert_eq!(model.beta.len(), 2);
//! ```

pub mod boost;
pub mod cox;
pub mod data;
pub mod error;
pub mod hazard;
pub mod metrics;
pub mod seed;
pub mod shap;
pub mod sim;
pub mod tuning;

pub use boost::{Hyperparams, TreeEnsemble, TreeNode};
pub use cox::CoxModel;
pub use data::{FeatureKind, FeatureSpec, SignedTime, SurvivalDataset, SurvivalRecord};
pub use error::{Error, Result};
pub use hazard::{HrEstimate, SubgroupSplit};
pub use metrics::{CvResult, KmCurve};
pub use shap::ShapMatrix;
