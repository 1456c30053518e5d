//! Exact small-scale computations on restricted Boltzmann machines:
//! information projections onto partition and mixture models, explicit
//! parameter constructions, closed-form approximation-error bounds and
//! reproducible training experiments over `{0,1}^n`.

pub mod bounds;
pub mod constructor;
pub mod distributions;
pub mod error;
pub mod experiments;
pub mod projections;
pub mod rbm;
pub mod statespace;

pub use distributions::{Distribution, MixtureComponent, MixtureOfProducts, ProductDistribution};
pub use error::{Error, Result};
pub use projections::{Divergence, ModelClass, ProjectionResult};
pub use rbm::{RbmParams, TrainConfig};
pub use statespace::{Face, Partition, State};
