//! Restoration of Poisson-corrupted images under a Gaussian Markov random
//! field prior.
//!
//! Counts `z ~ Poisson(λ)` are rewritten as `Binomial(K, λ/K)` over a logit
//! field `x`. A quadratic bound on `ln 2cosh x` makes the posterior Gaussian
//! in `x`, which is then solved by loopy Gaussian belief propagation inside an
//! EM loop over the smoothness `α` and the variational parameters `ξ`.
//!
//! ```
//! use poisson_denoise::{channel, image::{Grid, SourceField}, restore};
//!
//! let src = SourceField::new(Grid::from_fn(16, 16, |x, _| 2.0 + x as f64)).unwrap();
//! let z = channel::poisson_sample(&src, 7);
//! let out = restore::restore(&z, &restore::RestoreConfig::default()).unwrap();
//! assert_eq!(out.lambda.shape(), (16, 16));
//! ```

pub mod baselines;
pub mod channel;
pub mod error;
pub mod exact;
pub mod experiment;
pub mod fixtures;
pub mod fieldio;
pub mod grid;
pub mod image;
pub mod latent;
pub mod lbp;
pub mod metrics;
pub mod pgm;
pub mod restore;

pub use error::{Error, Result};
pub use image::{CountImage, Grid, IntensityImage, LogitField, SourceField};
pub use restore::{restore, Restoration, RestoreConfig};
