//! Identification and estimation of path coefficients in latent-variable
//! structural equation models through latent-to-observed transformation and
//! model-implied instrumental variables.

pub mod estimate;
pub mod graph;
pub mod identify;
pub mod model;
pub mod numeric;
pub mod parser;
pub mod random;
pub mod report;
pub mod selfcheck;
pub mod transform;
