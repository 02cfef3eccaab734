//! Second-stage estimators. Each returns its estimate bundled in a model
//! object that can rebuild the influence parts at any parameter value.

mod copula;
mod iv;
mod poisson;

pub use copula::{
    clayton_dlogpdf, clayton_logpdf, clayton_mle, constraint_check, copula_estimate, sample_clayton, ClaytonCopulaModel,
    CONSTRAINT_EXHAUSTED_SHARE, PIT_EPS,
};
pub use iv::{iv_estimate, IvFit, LinearIvModel};
pub use poisson::{poisson_estimate, PoissonPluginModel};
