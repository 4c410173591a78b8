//! Bilinear sampling with edge clamping, shared by the simulators and the
//! image warp.

use ndarray::ArrayView2;

/// Linear interpolation weights along one axis of length `n` at fractional
/// index `x`. Positions outside `[0, n-1]` clamp to the edge node; the
/// returned `slope_active` is false there (the sample does not move with `x`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Lerp {
    pub i0: usize,
    pub i1: usize,
    pub frac: f64,
    pub slope_active: bool,
}

impl Lerp {
    pub fn new(x: f64, n: usize) -> Self {
        debug_assert!(n >= 1);
        if n == 1 {
            return Self {
                i0: 0,
                i1: 0,
                frac: 0.0,
                slope_active: false,
            };
        }
        let last = (n - 1) as f64;
        if x.is_nan() || x <= 0.0 {
            return Self {
                i0: 0,
                i1: 1,
                frac: 0.0,
                slope_active: x == 0.0,
            };
        }
        if x >= last {
            return Self {
                i0: n - 2,
                i1: n - 1,
                frac: 1.0,
                slope_active: x == last,
            };
        }
        let i0 = x.floor() as usize;
        Self {
            i0,
            i1: i0 + 1,
            frac: x - i0 as f64,
            slope_active: true,
        }
    }
}

/// Bilinear sample of a `[row][col]` array at fractional `(row, col)`.
pub fn bilinear_clamped(field: ArrayView2<'_, f64>, row: f64, col: f64) -> f64 {
    let (nr, nc) = field.dim();
    let r = Lerp::new(row, nr);
    let c = Lerp::new(col, nc);
    let top = field[[r.i0, c.i0]] * (1.0 - c.frac) + field[[r.i0, c.i1]] * c.frac;
    let bot = field[[r.i1, c.i0]] * (1.0 - c.frac) + field[[r.i1, c.i1]] * c.frac;
    top * (1.0 - r.frac) + bot * r.frac
}

/// Precomputed bilinear stencil: four node indices and weights.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BilinearTap {
    pub idx: [(usize, usize); 4],
    pub w: [f64; 4],
}

impl BilinearTap {
    pub fn new(row: f64, col: f64, dims: (usize, usize)) -> Self {
        let r = Lerp::new(row, dims.0);
        let c = Lerp::new(col, dims.1);
        Self {
            idx: [(r.i0, c.i0), (r.i0, c.i1), (r.i1, c.i0), (r.i1, c.i1)],
            w: [
                (1.0 - r.frac) * (1.0 - c.frac),
                (1.0 - r.frac) * c.frac,
                r.frac * (1.0 - c.frac),
                r.frac * c.frac,
            ],
        }
    }

    pub fn sample(&self, field: ArrayView2<'_, f64>) -> f64 {
        self.idx
            .iter()
            .zip(self.w.iter())
            .map(|(&(i, j), &w)| field[[i, j]] * w)
            .sum()
    }
}
