//! Derivative ranges of activation functions over pre-activation intervals.
//!
//! Given `x ∈ [l, u]`, [`derivative_range`] returns an interval certainly
//! containing σ′(x). These ranges are the only source of uncertainty in the
//! Jacobian bound recursion: the piecewise-linear kinds collapse to a point
//! whenever the interval does not straddle zero, while the sigmoid family
//! exploits that σ′ is even and peaks at the origin.

use crate::error::{Error, Result};
use crate::model::Activation;

/// Certified range of σ′ over some pre-activation interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradRange {
    pub lower: f64,
    pub upper: f64,
}

impl GradRange {
    pub fn new(lower: f64, upper: f64) -> Self {
        debug_assert!(lower <= upper);
        GradRange { lower, upper }
    }

    /// Width zero means the activation derivative is fixed on the interval.
    pub fn is_fixed(&self) -> bool {
        self.lower == self.upper
    }
}

/// σ′(x), using the right derivative at piecewise-linear kinks so that the
/// value is defined everywhere.
pub fn derivative_at(kind: Activation, x: f64) -> f64 {
    match kind {
        Activation::Relu => {
            if x >= 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::LeakyRelu { alpha } => {
            if x >= 0.0 {
                1.0
            } else {
                alpha
            }
        }
        Activation::Sigmoid => {
            let s = kind.apply(x);
            s * (1.0 - s)
        }
        Activation::Tanh => 1.0 - x.tanh().powi(2),
        Activation::Arctan => 1.0 / (1.0 + x * x),
        Activation::Elu { alpha } => {
            if x >= 0.0 {
                1.0
            } else {
                alpha * x.exp()
            }
        }
    }
}

/// Range of σ′ over `[l, u]`.
///
/// Piecewise-linear kinds use the slope case table; the sigmoid family
/// (sigmoid, tanh, arctan) uses that σ′ is even and unimodal with its peak
/// at zero; ELU's derivative is non-decreasing so the endpoints suffice.
pub fn derivative_range(kind: Activation, l: f64, u: f64) -> Result<GradRange> {
    if !l.is_finite() || !u.is_finite() {
        return Err(Error::NonFinite("derivative_range interval".into()));
    }
    if l > u {
        return Err(Error::InvalidInterval { lower: l, upper: u });
    }
    let range = match kind {
        Activation::Relu | Activation::LeakyRelu { .. } => {
            let alpha = match kind {
                Activation::LeakyRelu { alpha } => alpha,
                _ => 0.0,
            };
            if l >= 0.0 {
                GradRange::new(1.0, 1.0)
            } else if u <= 0.0 {
                GradRange::new(alpha, alpha)
            } else {
                GradRange::new(alpha, 1.0)
            }
        }
        Activation::Sigmoid | Activation::Tanh | Activation::Arctan => {
            if l >= 0.0 {
                // σ′ non-increasing right of the peak
                GradRange::new(derivative_at(kind, u), derivative_at(kind, l))
            } else if u <= 0.0 {
                GradRange::new(derivative_at(kind, l), derivative_at(kind, u))
            } else {
                // straddles the peak: max at 0, min at the farther endpoint
                GradRange::new(
                    derivative_at(kind, (-l).max(u)),
                    derivative_at(kind, 0.0),
                )
            }
        }
        Activation::Elu { .. } => GradRange::new(derivative_at(kind, l), derivative_at(kind, u)),
    };
    debug_assert!(range.lower >= 0.0 && range.upper <= kind.derivative_sup() + 1e-15);
    Ok(range)
}

/// Range of σ′ over the whole real line (the "all intervals unbounded"
/// regime). For the piecewise-linear kinds both endpoints are attained;
/// for the smooth kinds the infimum 0 is approached but never reached.
pub fn global_range(kind: Activation) -> GradRange {
    match kind {
        Activation::Relu => GradRange::new(0.0, 1.0),
        Activation::LeakyRelu { alpha } => GradRange::new(alpha, 1.0),
        Activation::Sigmoid => GradRange::new(0.0, 0.25),
        Activation::Tanh | Activation::Arctan | Activation::Elu { .. } => {
            GradRange::new(0.0, 1.0)
        }
    }
}
