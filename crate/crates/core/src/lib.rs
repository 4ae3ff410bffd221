//! Preference-alignment laboratory.
//!
//! Contrastive (DPO) and anchored (APO, KTO) alignment objectives with
//! analytic reward gradients, a small autoregressive policy to train them
//! on, a preference-data pipeline covering AI revisions, judged pairs and
//! stronger-model pairs, and the contrast metrics used to compare datasets.

pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod objectives;
pub mod pipeline;
pub mod policy;
pub mod seed;
pub mod trainer;
pub mod vocab;

pub use dataset::{read_dataset, write_dataset, LengthCaps, PreferenceTriple, Source, TokenizedTriple};
pub use error::{Error, Result};
pub use objectives::{LossGrad, ObjectiveKind, ObjectiveSpec, RewardPair};
pub use policy::{ParamGrad, PolicyParams};
pub use seed::SeedSplitter;
pub use vocab::{TokenId, Vocabulary};
