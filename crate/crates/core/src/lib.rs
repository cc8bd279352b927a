//! Human-in-the-loop topic modeling workbench.
//!
//! Three refinement backends share one model layer: informed priors with
//! collapsed Gibbs sampling (`info-gibbs`), constraint potentials with Gibbs
//! sampling (`const-gibbs`), and informed priors with variational EM
//! (`info-vb`). Each supports seven user refinements, scored by rank- and
//! set-based control metrics and NPMI coherence.

pub mod corpus;
pub mod error;
pub mod gibbs;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod refine;
pub mod sim;
pub mod special;
pub mod vb;

pub use corpus::{Corpus, Document, Vocabulary};
pub use error::{Error, Result};
pub use model::{Backend, Model, RefinementKind, RefinementOp, TopicSnapshot};
