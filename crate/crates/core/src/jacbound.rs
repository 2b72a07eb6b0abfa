//! Element-wise Jacobian bounds.
//!
//! For the factorization Y^(−l) = W^(H) Σ^(H−1) ⋯ Σ^(l) W^(l), this module
//! computes matrices L^(−l) ≤ Y^(−l)(x) ≤ U^(−l) valid for every x in the
//! input ball. Three families are provided:
//!
//! * the recursive bound (`recurjac_backward`, `recurjac_forward`): at each
//!   level, entries of the previous bound whose sign is fixed are absorbed
//!   into a merged weight matrix whose product is re-bounded recursively,
//!   leaving only the sign-uncertain entries to worst-case interval
//!   arithmetic;
//! * the layer-by-layer interval baseline (`fastlip`), which worst-cases
//!   every entry at every level;
//! * the norm-product bound (`naive_global_lipschitz`), which ignores the
//!   ball entirely.
//!
//! Each recursive call only ever needs one side of the bound, so the
//! recursion stays one-sided: computing all levels costs O(H) merged
//! products per level, O(H²) total.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::Network;
use crate::preact::{LayerIntervals, Norm};

/// Which bound algorithm produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundMethod {
    RecurjacBackward,
    RecurjacForward0,
    RecurjacForward1,
    FastLip,
    Naive,
}

impl BoundMethod {
    pub fn label(self) -> &'static str {
        match self {
            BoundMethod::RecurjacBackward => "recurjac-b",
            BoundMethod::RecurjacForward0 => "recurjac-f0",
            BoundMethod::RecurjacForward1 => "recurjac-f1",
            BoundMethod::FastLip => "fastlip",
            BoundMethod::Naive => "naive",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "recurjac-b" => Ok(BoundMethod::RecurjacBackward),
            "recurjac-f0" => Ok(BoundMethod::RecurjacForward0),
            "recurjac-f1" => Ok(BoundMethod::RecurjacForward1),
            "fastlip" => Ok(BoundMethod::FastLip),
            "naive" => Ok(BoundMethod::Naive),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

/// Lower/upper matrices sandwiching one partial Jacobian.
#[derive(Debug, Clone)]
pub struct LevelBounds {
    pub lower: Array2<f64>,
    pub upper: Array2<f64>,
}

impl LevelBounds {
    pub fn contains(&self, m: &Array2<f64>, tol: f64) -> bool {
        self.lower
            .iter()
            .zip(self.upper.iter())
            .zip(m.iter())
            .all(|((l, u), v)| *l - tol <= *v && *v <= *u + tol)
    }
}

/// Bounds on the partial Jacobians of a network over a ball.
///
/// `levels[i]` sandwiches Y^(−(i+1)) (shape n_H × n_i), so `levels[0]`
/// bounds the full Jacobian ∇f. The backward methods store every level;
/// the forward variants only produce the full-Jacobian level.
#[derive(Debug, Clone)]
pub struct JacobianBounds {
    pub method: BoundMethod,
    pub levels: Vec<LevelBounds>,
}

impl JacobianBounds {
    /// Bounds on ∇f itself.
    pub fn level1(&self) -> &LevelBounds {
        &self.levels[0]
    }

    /// Bounds on Y^(−l) if this method stored them.
    pub fn level(&self, l: usize) -> Option<&LevelBounds> {
        if l == 0 {
            return None;
        }
        self.levels.get(l - 1)
    }
}

/// Bound side selector for the one-sided recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Lower,
    Upper,
}

// ---------------------------------------------------------------------------
// Elementary bound steps
// ---------------------------------------------------------------------------

/// Worst-case bounds on A Σ B where the outer factor A is an exact matrix
/// and Σ has independent diagonal entries in the given ranges. Positive
/// products A_{j,r} B_{r,k} take the lower derivative for the lower bound
/// and vice versa.
pub fn bound_two_layer(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    grad_lo: ArrayView1<f64>,
    grad_hi: ArrayView1<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if a.ncols() != b.nrows() || grad_lo.len() != b.nrows() || grad_hi.len() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "bound_two_layer: a is {}x{}, b is {}x{}, ranges {}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols(),
            grad_lo.len()
        )));
    }
    Ok(interval_product_step(a, a, grad_lo, grad_hi, b))
}

/// One interval step bounding [L,U]·Σ·W with Σ diagonal in the derivative
/// ranges. This is the Fast-Lip iteration; with L = U it reduces to the
/// exact two-layer rule.
pub(crate) fn interval_product_step(
    lower: ArrayView2<f64>,
    upper: ArrayView2<f64>,
    grad_lo: ArrayView1<f64>,
    grad_hi: ArrayView1<f64>,
    w: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let (m, n) = (lower.nrows(), lower.ncols());
    let k = w.ncols();
    let mut out_lo = Array2::<f64>::zeros((m, k));
    let mut out_hi = Array2::<f64>::zeros((m, k));
    for j in 0..m {
        let mut lo_row = out_lo.row_mut(j);
        let mut hi_row = out_hi.row_mut(j);
        for r in 0..n {
            let (l, u) = (lower[[j, r]], upper[[j, r]]);
            // extreme values of y·σ′ over y ∈ [l,u], σ′ ∈ [gl,gu] ⊆ [0,∞)
            let pmin = if l >= 0.0 { l * grad_lo[r] } else { l * grad_hi[r] };
            let pmax = if u >= 0.0 { u * grad_hi[r] } else { u * grad_lo[r] };
            let w_row = w.row(r);
            for c in 0..k {
                let wv = w_row[c];
                if wv > 0.0 {
                    lo_row[c] += pmin * wv;
                    hi_row[c] += pmax * wv;
                } else if wv < 0.0 {
                    lo_row[c] += pmax * wv;
                    hi_row[c] += pmin * wv;
                }
            }
        }
    }
    (out_lo, out_hi)
}

/// Bounds on the sign-uncertain part of one recursion level. Every product
/// through an unstable entry is sign-definite once the weight sign is
/// known, so the largest derivative is always the worst case.
pub fn term_i_bounds(
    lout: ArrayView2<f64>,
    uout: ArrayView2<f64>,
    w: ArrayView2<f64>,
    grad_hi: ArrayView1<f64>,
    unstable: &[bool],
) -> (Array2<f64>, Array2<f64>) {
    let m = lout.nrows();
    let k = w.ncols();
    let mut out_lo = Array2::<f64>::zeros((m, k));
    let mut out_hi = Array2::<f64>::zeros((m, k));
    for j in 0..m {
        let lo = term_i_side_row(lout.row(j), uout.row(j), w, grad_hi, unstable, Side::Lower);
        let hi = term_i_side_row(lout.row(j), uout.row(j), w, grad_hi, unstable, Side::Upper);
        out_lo.row_mut(j).assign(&lo);
        out_hi.row_mut(j).assign(&hi);
    }
    (out_lo, out_hi)
}

fn term_i_side_row(
    l_row: ArrayView1<f64>,
    u_row: ArrayView1<f64>,
    w: ArrayView2<f64>,
    grad_hi: ArrayView1<f64>,
    unstable: &[bool],
    side: Side,
) -> Array1<f64> {
    let k = w.ncols();
    let mut out = Array1::<f64>::zeros(k);
    for r in 0..l_row.len() {
        if !unstable[r] {
            continue;
        }
        let g = grad_hi[r];
        // lower: w>0 pairs with L (non-positive product), w<0 with U
        let (pos_coef, neg_coef) = match side {
            Side::Lower => (g * l_row[r], g * u_row[r]),
            Side::Upper => (g * u_row[r], g * l_row[r]),
        };
        let w_row = w.row(r);
        for c in 0..k {
            let wv = w_row[c];
            if wv > 0.0 {
                out[c] += pos_coef * wv;
            } else if wv < 0.0 {
                out[c] += neg_coef * wv;
            }
        }
    }
    out
}

/// The merged matrices absorbing sign-fixed entries of output row `j`.
#[derive(Debug, Clone)]
pub struct MergedMatrices {
    pub w_check: Array2<f64>,
    pub w_hat: Array2<f64>,
}

/// Builds the merged weight matrices for output row `j`: over the
/// sign-fixed entries of [Lout, Uout], the derivative is pinned by the
/// product sign and the sum over those entries collapses into a single
/// n_l × n_{l−2} matrix per bound side.
pub fn merged_matrices(
    j: usize,
    lout: ArrayView2<f64>,
    uout: ArrayView2<f64>,
    w_l: ArrayView2<f64>,
    w_lm1: ArrayView2<f64>,
    grad_lo: ArrayView1<f64>,
    grad_hi: ArrayView1<f64>,
) -> MergedMatrices {
    let g_lower = merged_g(lout.row(j), uout.row(j), grad_lo, grad_hi, w_lm1, Side::Lower);
    let g_upper = merged_g(lout.row(j), uout.row(j), grad_lo, grad_hi, w_lm1, Side::Upper);
    MergedMatrices {
        w_check: w_l.dot(&g_lower),
        w_hat: w_l.dot(&g_upper),
    }
}

/// Derivative-pinned copy of `w` over the sign-fixed rows; rows whose sign
/// is uncertain are zeroed (they live in term I instead).
fn merged_g(
    l_row: ArrayView1<f64>,
    u_row: ArrayView1<f64>,
    grad_lo: ArrayView1<f64>,
    grad_hi: ArrayView1<f64>,
    w: ArrayView2<f64>,
    side: Side,
) -> Array2<f64> {
    let (n, k) = (w.nrows(), w.ncols());
    let mut g = Array2::<f64>::zeros((n, k));
    for r in 0..n {
        // closed inequalities: boundary zeros count as sign-fixed
        let (pos_pin, neg_pin) = if l_row[r] >= 0.0 {
            // y ≥ 0: product sign follows w
            match side {
                Side::Lower => (grad_lo[r], grad_hi[r]),
                Side::Upper => (grad_hi[r], grad_lo[r]),
            }
        } else if u_row[r] <= 0.0 {
            // y ≤ 0: product sign opposes w
            match side {
                Side::Lower => (grad_hi[r], grad_lo[r]),
                Side::Upper => (grad_lo[r], grad_hi[r]),
            }
        } else {
            continue;
        };
        let w_row = w.row(r);
        let mut g_row = g.row_mut(r);
        for c in 0..k {
            let wv = w_row[c];
            g_row[c] = if wv > 0.0 { pos_pin * wv } else { neg_pin * wv };
        }
    }
    g
}

// ---------------------------------------------------------------------------
// Per-output-row recursion
// ---------------------------------------------------------------------------

/// Recursion state for one output row: the weight chain, the derivative
/// ranges, and the already-computed row bounds of every deeper level.
///
/// Row bounds of level `l+1..H` must exist before level `l` can be bounded;
/// [`RowContext::for_output`] runs the full sweep so `compute_lu` can then
/// be called at any level, including with a replacement weight matrix.
pub struct RowContext<'a> {
    weights: Vec<ArrayView2<'a, f64>>,
    grad_lo: Vec<ArrayView1<'a, f64>>,
    grad_hi: Vec<ArrayView1<'a, f64>>,
    out_row: Array2<f64>,
    rows: Vec<(Array1<f64>, Array1<f64>)>,
}

impl<'a> RowContext<'a> {
    /// Runs the backward sweep for output row `j` of the chain.
    pub(crate) fn sweep(
        weights: &[ArrayView2<'a, f64>],
        grad_lo: &[ArrayView1<'a, f64>],
        grad_hi: &[ArrayView1<'a, f64>],
        j: usize,
    ) -> Self {
        let h = weights.len();
        let out_row = weights[h - 1]
            .row(j)
            .to_owned()
            .insert_axis(ndarray::Axis(0));
        let mut ctx = RowContext {
            weights: weights.to_vec(),
            grad_lo: grad_lo.to_vec(),
            grad_hi: grad_hi.to_vec(),
            out_row,
            rows: Vec::new(),
        };
        ctx.rows = vec![(Array1::zeros(0), Array1::zeros(0)); h];
        let row = ctx.out_row.row(0).to_owned();
        ctx.rows[h - 1] = (row.clone(), row);
        for l in (1..h).rev() {
            let bounds = ctx.compute_lu(l, ctx.weights[l - 1]);
            ctx.rows[l - 1] = bounds;
        }
        ctx
    }

    /// Rebuilds a context for output row `j` from already-computed level
    /// bounds (used by the ∞-norm refinement).
    pub(crate) fn from_levels(
        weights: &[ArrayView2<'a, f64>],
        grad_lo: &[ArrayView1<'a, f64>],
        grad_hi: &[ArrayView1<'a, f64>],
        levels: &[LevelBounds],
        j: usize,
    ) -> Self {
        let h = weights.len();
        let out_row = weights[h - 1]
            .row(j)
            .to_owned()
            .insert_axis(ndarray::Axis(0));
        let rows = levels
            .iter()
            .map(|lb| (lb.lower.row(j).to_owned(), lb.upper.row(j).to_owned()))
            .collect();
        RowContext {
            weights: weights.to_vec(),
            grad_lo: grad_lo.to_vec(),
            grad_hi: grad_hi.to_vec(),
            out_row,
            rows,
        }
    }

    fn depth(&self) -> usize {
        self.weights.len()
    }

    pub(crate) fn into_rows(self) -> Vec<(Array1<f64>, Array1<f64>)> {
        self.rows
    }

    pub fn level_rows(&self, l: usize) -> (&Array1<f64>, &Array1<f64>) {
        let b = &self.rows[l - 1];
        (&b.0, &b.1)
    }

    /// Both sides of the level-`l` bound with `weight` in place of W^(l).
    /// Deeper-level row bounds come from the context, so replacing the
    /// trailing weight does not invalidate them.
    pub fn compute_lu(&self, level: usize, weight: ArrayView2<f64>) -> (Array1<f64>, Array1<f64>) {
        let h = self.depth();
        debug_assert!(level >= 1 && level <= h);
        if level == h {
            let row = weight.row(0).to_owned();
            return (row.clone(), row);
        }
        let (lo, hi) = if level == h - 1 {
            let (lo, hi) = interval_product_step(
                self.out_row.view(),
                self.out_row.view(),
                self.grad_lo[level - 1],
                self.grad_hi[level - 1],
                weight,
            );
            (lo.row(0).to_owned(), hi.row(0).to_owned())
        } else {
            let term_lo = self.level_side(level, weight, Side::Lower);
            let term_hi = self.level_side(level, weight, Side::Upper);
            (term_lo, term_hi)
        };
        debug_assert!(
            lo.iter().zip(hi.iter()).all(|(l, u)| *l <= *u + 1e-9),
            "lower bound exceeded upper bound at level {level}"
        );
        (lo, hi)
    }

    /// One-sided bound at `level` with a replacement weight: term I from the
    /// context rows plus the recursive bound of the merged product.
    fn level_side(&self, level: usize, weight: ArrayView2<f64>, side: Side) -> Array1<f64> {
        let h = self.depth();
        if level == h - 1 {
            let (lo, hi) = interval_product_step(
                self.out_row.view(),
                self.out_row.view(),
                self.grad_lo[level - 1],
                self.grad_hi[level - 1],
                weight,
            );
            return match side {
                Side::Lower => lo.row(0).to_owned(),
                Side::Upper => hi.row(0).to_owned(),
            };
        }
        let (ctx_lo, ctx_hi) = self.level_rows(level + 1);
        let unstable: Vec<bool> = ctx_lo
            .iter()
            .zip(ctx_hi.iter())
            .map(|(l, u)| *l < 0.0 && *u > 0.0)
            .collect();
        let mut out = term_i_side_row(
            ctx_lo.view(),
            ctx_hi.view(),
            weight,
            self.grad_hi[level - 1],
            &unstable,
            side,
        );
        let g = merged_g(
            ctx_lo.view(),
            ctx_hi.view(),
            self.grad_lo[level - 1],
            self.grad_hi[level - 1],
            weight,
            side,
        );
        let merged = self.weights[level].dot(&g);
        out += &self.level_side(level + 1, merged.view(), side);
        out
    }
}

fn check_intervals(net: &Network, li: &LayerIntervals) -> Result<()> {
    if li.layers.len() + 1 != net.depth() {
        return Err(Error::DimensionMismatch(format!(
            "intervals cover {} hidden layers, network has {}",
            li.layers.len(),
            net.depth() - 1
        )));
    }
    if !li.has_grad_ranges() {
        return Err(Error::InvalidArgument(
            "derivative ranges not computed; call preact::grad_ranges first".into(),
        ));
    }
    Ok(())
}

/// Runs the recursion over a weight chain and assembles full matrices.
fn run_chain(
    weights: &[ArrayView2<f64>],
    grad_lo: &[ArrayView1<f64>],
    grad_hi: &[ArrayView1<f64>],
) -> Vec<LevelBounds> {
    let h = weights.len();
    let n_out = weights[h - 1].nrows();
    let per_row: Vec<Vec<(Array1<f64>, Array1<f64>)>> = (0..n_out)
        .into_par_iter()
        .map(|j| RowContext::sweep(weights, grad_lo, grad_hi, j).into_rows())
        .collect();
    (0..h)
        .map(|idx| {
            let cols = per_row[0][idx].0.len();
            let mut lower = Array2::<f64>::zeros((n_out, cols));
            let mut upper = Array2::<f64>::zeros((n_out, cols));
            for (j, rows) in per_row.iter().enumerate() {
                lower.row_mut(j).assign(&rows[idx].0);
                upper.row_mut(j).assign(&rows[idx].1);
            }
            LevelBounds { lower, upper }
        })
        .collect()
}

/// Recursive backward bound: levels H down to 1, each output row
/// independently (rows run in parallel).
pub fn recurjac_backward(net: &Network, li: &LayerIntervals) -> Result<JacobianBounds> {
    check_intervals(net, li)?;
    let weights: Vec<ArrayView2<f64>> = net.layers().iter().map(|l| l.weights.view()).collect();
    let grad_lo: Vec<ArrayView1<f64>> = li.layers.iter().map(|l| l.grad_lower.view()).collect();
    let grad_hi: Vec<ArrayView1<f64>> = li.layers.iter().map(|l| l.grad_upper.view()).collect();
    Ok(JacobianBounds {
        method: BoundMethod::RecurjacBackward,
        levels: run_chain(&weights, &grad_lo, &grad_hi),
    })
}

/// Forward-mode variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardVariant {
    /// Transpose the whole factorization; intermediate bounds have input width.
    F0,
    /// Start after the first layer (intermediate width n_1), then apply one
    /// interval step through Σ^(1) W^(1).
    F1,
}

/// Recursive bound applied to the transposed factorization. Produces the
/// full-Jacobian level only.
pub fn recurjac_forward(
    net: &Network,
    li: &LayerIntervals,
    variant: ForwardVariant,
) -> Result<JacobianBounds> {
    check_intervals(net, li)?;
    let h = net.depth();
    let method = match variant {
        ForwardVariant::F0 => BoundMethod::RecurjacForward0,
        ForwardVariant::F1 => BoundMethod::RecurjacForward1,
    };
    if h == 1 {
        let w = net.weight(1).clone();
        return Ok(JacobianBounds {
            method,
            levels: vec![LevelBounds {
                lower: w.clone(),
                upper: w,
            }],
        });
    }
    let level1 = match variant {
        ForwardVariant::F0 => {
            // [∇f]ᵀ = W^(1)ᵀ Σ^(1) W^(2)ᵀ ⋯ Σ^(H−1) W^(H)ᵀ: treat as a chain
            // of H layers with V^(i) = W^(H+1−i)ᵀ and grads g'^(i) = g^(H−i).
            let vweights: Vec<Array2<f64>> =
                (1..=h).map(|i| net.weight(h + 1 - i).t().to_owned()).collect();
            let views: Vec<ArrayView2<f64>> = vweights.iter().map(|w| w.view()).collect();
            let vg_lo: Vec<ArrayView1<f64>> = (1..h)
                .map(|i| li.layers[h - i - 1].grad_lower.view())
                .collect();
            let vg_hi: Vec<ArrayView1<f64>> = (1..h)
                .map(|i| li.layers[h - i - 1].grad_upper.view())
                .collect();
            let levels = run_chain(&views, &vg_lo, &vg_hi);
            LevelBounds {
                lower: levels[0].lower.t().to_owned(),
                upper: levels[0].upper.t().to_owned(),
            }
        }
        ForwardVariant::F1 => {
            // Bound Q = ∂f/∂h^(1) through the transposed sub-chain, then one
            // interval step through Σ^(1) W^(1).
            let (q_lo, q_hi) = if h == 2 {
                let w2 = net.weight(2);
                (w2.clone(), w2.clone())
            } else {
                let m = h - 1;
                let vweights: Vec<Array2<f64>> =
                    (1..=m).map(|i| net.weight(h + 1 - i).t().to_owned()).collect();
                let views: Vec<ArrayView2<f64>> = vweights.iter().map(|w| w.view()).collect();
                let vg_lo: Vec<ArrayView1<f64>> = (1..m)
                    .map(|i| li.layers[h - i - 1].grad_lower.view())
                    .collect();
                let vg_hi: Vec<ArrayView1<f64>> = (1..m)
                    .map(|i| li.layers[h - i - 1].grad_upper.view())
                    .collect();
                let levels = run_chain(&views, &vg_lo, &vg_hi);
                (
                    levels[0].lower.t().to_owned(),
                    levels[0].upper.t().to_owned(),
                )
            };
            let (lo, hi) = interval_product_step(
                q_lo.view(),
                q_hi.view(),
                li.layers[0].grad_lower.view(),
                li.layers[0].grad_upper.view(),
                net.weight(1).view(),
            );
            LevelBounds {
                lower: lo,
                upper: hi,
            }
        }
    };
    Ok(JacobianBounds {
        method,
        levels: vec![level1],
    })
}

/// Layer-by-layer interval baseline: every level is bounded from the
/// previous level's bounds alone, with no merged-matrix recursion.
pub fn fastlip(net: &Network, li: &LayerIntervals) -> Result<JacobianBounds> {
    check_intervals(net, li)?;
    let h = net.depth();
    let mut levels = vec![LevelBounds {
        lower: Array2::zeros((0, 0)),
        upper: Array2::zeros((0, 0)),
    }; h];
    let w_h = net.weight(h);
    levels[h - 1] = LevelBounds {
        lower: w_h.clone(),
        upper: w_h.clone(),
    };
    for l in (1..h).rev() {
        let lb = &li.layers[l - 1];
        let (lo, hi) = interval_product_step(
            levels[l].lower.view(),
            levels[l].upper.view(),
            lb.grad_lower.view(),
            lb.grad_upper.view(),
            net.weight(l).view(),
        );
        levels[l - 1] = LevelBounds {
            lower: lo,
            upper: hi,
        };
    }
    Ok(JacobianBounds {
        method: BoundMethod::FastLip,
        levels,
    })
}

/// Product of the weight matrices' induced norms times the activation
/// derivative suprema: the classical global Lipschitz bound.
pub fn naive_global_lipschitz(net: &Network, p: Norm) -> Result<f64> {
    let mut value = 1.0;
    for l in 1..=net.depth() {
        value *= crate::lipschitz::induced_norm(&net.weight(l).view(), p)?;
        if l < net.depth() {
            value *= net.hidden_activation(l).derivative_sup();
        }
    }
    Ok(value)
}
