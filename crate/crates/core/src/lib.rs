//! H-score guided linear ensembles of black-box feature extractors.
//!
//! Given few-shot target data pushed through `M` frozen source extractors,
//! the crate whitens each source, scores transferability with H-scores,
//! learns ensemble weights on the hyperplane `sum(alpha) = 1` by projected
//! gradient ascent, and builds the closed-form maximal-correlation classifier
//! on top of the mixed features.
//!
//! ```
//! use h_ensemble::features::{FeatureMatrix, LabelVector};
//! use h_ensemble::pipeline::{fit_ensemble, FitOptions};
//!
//! let informative = FeatureMatrix::from_rows(&[vec![1.0], vec![-1.0], vec![1.1], vec![-0.9]]).unwrap();
//! let labels = LabelVector::new(vec![0, 1, 0, 1], 2).unwrap();
//! let (model, _) = fit_ensemble(&[informative], &labels, &FitOptions::default()).unwrap();
//! assert_eq!(model.alpha.as_slice(), &[1.0]);
//! ```

pub mod cli;
pub mod error;
pub mod features;
pub mod hscore;
pub mod io;
pub mod mcr;
pub mod optimizer;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
pub use features::{FeatureMatrix, LabelVector, Ridge};
pub use mcr::FittedEnsembleModel;
pub use optimizer::{EnsembleWeights, Objective, OptimizerConfig};
