//! Detection of planted-feature (backdoor) training examples from a
//! datamodel weight matrix.
//!
//! The pipeline has five stages, each usable on its own:
//!
//! 1. [`subset_sim`] — synthetic data plane: sample fixed-size training
//!    subsets, plant a backdoor feature with known strength, and generate
//!    per-target model outputs for each subset.
//! 2. [`datamodel_fit`] — fit per-target linear datamodel weights from
//!    subset records and verify how well they predict held-out outputs.
//! 3. [`feature_math`] — closed-form feature-strength estimates from the
//!    weight matrix via the contrast transform `h(v)`, plus exact
//!    subset-count probabilities.
//! 4. [`maxsum`] — the optimization core: submatrix-sum objective, exact
//!    enumeration at small sizes, and greedy pair-swap local search.
//! 5. [`detect`] — score aggregation over local-search candidates,
//!    top-fraction flagging, and AUROC evaluation.
//!
//! File formats shared with the CLI live in [`formats`].

pub mod datamodel_fit;
pub mod detect;
pub mod error;
pub mod feature_math;
pub mod formats;
pub mod maxsum;
pub mod seeding;
pub mod subset_sim;

pub use error::{Error, Result};
pub use feature_math::{DatamodelMatrix, FeatureIndicator};
