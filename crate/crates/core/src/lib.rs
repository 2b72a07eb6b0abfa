//! Certified element-wise bounds on the Jacobian of feed-forward networks
//! over ℓp-balls, and what follows from them: local and global Lipschitz
//! constants, robustness-certification radii, and radii within which the
//! gradient provably cannot vanish.
//!
//! The pipeline is: [`preact`] produces per-layer pre-activation intervals
//! for a ball, [`actbounds`] turns them into activation-derivative ranges,
//! [`jacbound`] propagates them into element-wise Jacobian bounds (the
//! recursive bound, a layer-by-layer baseline, and a norm-product bound),
//! and [`lipschitz`]/[`cert`] convert bounds into certificates. [`oracle`]
//! holds the independent brute-force machinery the other modules are
//! validated against.
//!
//! ```no_run
//! use jacobound::prelude::*;
//!
//! let net = jacobound::model::load_network("model.json")?;
//! let ball = Ball::new(ndarray::Array1::zeros(net.input_dim()), 0.1, Norm::LInf)?;
//! let result = jacobound::lipschitz::local_lipschitz(&net, &ball, BoundMethod::RecurjacBackward)?;
//! println!("certified local Lipschitz constant: {}", result.value);
//! # Ok::<(), jacobound::Error>(())
//! ```

pub mod actbounds;
pub mod cert;
pub mod cli;
pub mod error;
pub mod jacbound;
pub mod lipschitz;
pub mod model;
pub mod netgen;
pub mod oracle;
pub mod preact;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::cert::{certify_radius, exclusion_radius, margin_network};
    pub use crate::jacbound::{
        fastlip, naive_global_lipschitz, recurjac_backward, recurjac_forward, BoundMethod,
        ForwardVariant, JacobianBounds,
    };
    pub use crate::lipschitz::{local_lipschitz, worst_case_matrix, LipschitzResult};
    pub use crate::model::{Activation, Layer, Network};
    pub use crate::preact::{Ball, LayerIntervals, Norm};
}
