//! L1 curvature penalty on a displacement component and its Charbonnier
//! smoothing.

use ndarray::{Array2, ArrayView2};

/// Second differences along axial lines (`[l, k-1] - 2[l, k] + [l, k+1]`)
/// and, when `lateral` is set, along the lateral direction. `visit` gets the
/// difference and its three stencil positions.
fn for_each_second_difference(
    u: ArrayView2<'_, f64>,
    lateral: bool,
    mut visit: impl FnMut(f64, [(usize, usize); 3]),
) {
    let (nl, na) = u.dim();
    for l in 0..nl {
        for k in 1..na.saturating_sub(1) {
            let d = u[[l, k - 1]] - 2.0 * u[[l, k]] + u[[l, k + 1]];
            visit(d, [(l, k - 1), (l, k), (l, k + 1)]);
        }
    }
    if lateral {
        for l in 1..nl.saturating_sub(1) {
            for k in 0..na {
                let d = u[[l - 1, k]] - 2.0 * u[[l, k]] + u[[l + 1, k]];
                visit(d, [(l - 1, k), (l, k), (l + 1, k)]);
            }
        }
    }
}

/// Sum of absolute second differences.
pub fn curvature_penalty(u: ArrayView2<'_, f64>, lateral: bool) -> f64 {
    let mut total = 0.0;
    for_each_second_difference(u, lateral, |d, _| total += d.abs());
    total
}

/// Smooth surrogate of `curvature_penalty` using `sqrt(d^2 + eps^2) - eps`
/// per difference, with its gradient.
pub fn charbonnier_penalty(u: ArrayView2<'_, f64>, eps: f64, lateral: bool) -> (f64, Array2<f64>) {
    let mut total = 0.0;
    let mut grad = Array2::zeros(u.dim());
    for_each_second_difference(u, lateral, |d, idx| {
        let r = (d * d + eps * eps).sqrt();
        total += r - eps;
        let s = if r > 0.0 { d / r } else { 0.0 };
        grad[idx[0]] += s;
        grad[idx[1]] -= 2.0 * s;
        grad[idx[2]] += s;
    });
    (total, grad)
}
