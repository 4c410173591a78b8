//! Local normalized cross-correlation over sliding windows.

use ndarray::{Array2, ArrayView2, Zip};

use crate::error::{Error, Result};

/// Windows whose per-sample variance falls below this fraction of the
/// image's mean square are treated as flat and contribute zero.
const VARIANCE_FLOOR_REL: f64 = 1e-10;

/// Window size in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LnccWindow {
    pub lateral: usize,
    pub axial: usize,
}

impl Default for LnccWindow {
    fn default() -> Self {
        Self {
            lateral: 9,
            axial: 9,
        }
    }
}

impl LnccWindow {
    pub fn len(&self) -> usize {
        self.lateral * self.axial
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fits(&self, dim: (usize, usize)) -> bool {
        !self.is_empty() && dim.0 >= self.lateral && dim.1 >= self.axial
    }
}

/// Sum over every window lying fully inside `img`.
fn box_valid(img: &Array2<f64>, w: LnccWindow) -> Array2<f64> {
    let (nl, na) = img.dim();
    let (ol, oa) = (nl + 1 - w.lateral, na + 1 - w.axial);
    let src = img.as_standard_layout();
    let src = src.as_slice().expect("standard layout");
    let mut rows = vec![0.0; nl * oa];
    for (line, dst) in src.chunks_exact(na).zip(rows.chunks_exact_mut(oa)) {
        for m in 0..w.axial {
            for (d, v) in dst.iter_mut().zip(&line[m..m + oa]) {
                *d += v;
            }
        }
    }
    let mut out = vec![0.0; ol * oa];
    for (l, dst) in out.chunks_exact_mut(oa).enumerate() {
        for row in rows[l * oa..(l + w.lateral) * oa].chunks_exact(oa) {
            for (d, v) in dst.iter_mut().zip(row) {
                *d += v;
            }
        }
    }
    Array2::from_shape_vec((ol, oa), out).expect("window grid shape")
}

/// Adjoint of `box_valid`: each pixel collects the values of all windows
/// that cover it.
fn box_adjoint(win: &Array2<f64>, w: LnccWindow, dim: (usize, usize)) -> Array2<f64> {
    let (ol, oa) = win.dim();
    let (nl, na) = dim;
    let src = win.as_standard_layout();
    let src = src.as_slice().expect("standard layout");
    let mut rows = vec![0.0; ol * na];
    for (line, dst) in src.chunks_exact(oa).zip(rows.chunks_exact_mut(na)) {
        for m in 0..w.axial {
            for (d, v) in dst[m..m + oa].iter_mut().zip(line) {
                *d += v;
            }
        }
    }
    let mut out = vec![0.0; nl * na];
    for (l, row) in rows.chunks_exact(na).enumerate() {
        for dst in out[l * na..(l + w.lateral) * na].chunks_exact_mut(na) {
            for (d, v) in dst.iter_mut().zip(row) {
                *d += v;
            }
        }
    }
    Array2::from_shape_vec((nl, na), out).expect("image shape")
}

fn centred(img: ArrayView2<'_, f64>) -> (Array2<f64>, f64) {
    let mean = img.mean().unwrap_or(0.0);
    let c = img.mapv(|v| v - mean);
    let ms = c.iter().map(|v| v * v).sum::<f64>() / c.len().max(1) as f64;
    (c, ms)
}

/// Per-window statistics shared by the value and the gradient.
struct Windows {
    fixed: Array2<f64>,
    warped: Array2<f64>,
    ncc: Array2<f64>,
    valid: Array2<bool>,
    sum_i: Array2<f64>,
    sum_j: Array2<f64>,
    var_i: Array2<f64>,
    var_j: Array2<f64>,
}

fn windows(fixed: ArrayView2<'_, f64>, warped: ArrayView2<'_, f64>, w: LnccWindow) -> Result<Windows> {
    if fixed.dim() != warped.dim() {
        return Err(Error::DimensionMismatch(format!(
            "fixed {:?} vs warped {:?}",
            fixed.dim(),
            warped.dim()
        )));
    }
    if !w.fits(fixed.dim()) {
        return Err(Error::InvalidParameter(format!(
            "window {}x{} does not fit image {:?}",
            w.lateral,
            w.axial,
            fixed.dim()
        )));
    }
    let (i, ms_i) = centred(fixed);
    let (j, ms_j) = centred(warped);
    let n = w.len() as f64;
    let sum_i = box_valid(&i, w);
    let sum_j = box_valid(&j, w);
    let sum_ii = box_valid(&(&i * &i), w);
    let sum_jj = box_valid(&(&j * &j), w);
    let sum_ij = box_valid(&(&i * &j), w);
    let var_i = &sum_ii - &(&sum_i * &sum_i / n);
    let var_j = &sum_jj - &(&sum_j * &sum_j / n);
    let floor_i = VARIANCE_FLOOR_REL * ms_i * n;
    let floor_j = VARIANCE_FLOOR_REL * ms_j * n;
    let mut ncc = Array2::zeros(sum_i.dim());
    let mut valid = Array2::from_elem(sum_i.dim(), false);
    for (idx, c) in ncc.indexed_iter_mut() {
        let (vi, vj) = (var_i[idx], var_j[idx]);
        if vi > floor_i && vj > floor_j {
            valid[idx] = true;
            *c = (sum_ij[idx] - sum_i[idx] * sum_j[idx] / n) / (vi * vj).sqrt();
        }
    }
    Ok(Windows {
        fixed: i,
        warped: j,
        ncc,
        valid,
        sum_i,
        sum_j,
        var_i,
        var_j,
    })
}

/// Negative mean of the zero-mean NCC over all windows fully inside the
/// image. Ranges over [-1, 1]; -1 is a perfect local match.
pub fn lncc_similarity(fixed: ArrayView2<'_, f64>, warped: ArrayView2<'_, f64>, w: LnccWindow) -> Result<f64> {
    let win = windows(fixed, warped, w)?;
    Ok(-win.ncc.mean().unwrap_or(0.0))
}

/// `lncc_similarity` and its gradient with respect to every pixel of
/// `warped`.
pub fn lncc_with_gradient(
    fixed: ArrayView2<'_, f64>,
    warped: ArrayView2<'_, f64>,
    w: LnccWindow,
) -> Result<(f64, Array2<f64>)> {
    let win = windows(fixed, warped, w)?;
    let n = w.len() as f64;
    let m = win.ncc.len() as f64;
    let dim = win.ncc.dim();
    let mut a = Array2::zeros(dim);
    let mut b = Array2::zeros(dim);
    let mut c = Array2::zeros(dim);
    for (idx, &ok) in win.valid.indexed_iter() {
        if ok {
            let ai = 1.0 / (win.var_i[idx] * win.var_j[idx]).sqrt();
            let bi = win.ncc[idx] / win.var_j[idx];
            a[idx] = ai;
            b[idx] = bi;
            c[idx] = (bi * win.sum_j[idx] - ai * win.sum_i[idx]) / n;
        }
    }
    let dim_img = win.fixed.dim();
    let at = box_adjoint(&a, w, dim_img);
    let bt = box_adjoint(&b, w, dim_img);
    let ct = box_adjoint(&c, w, dim_img);
    let mut grad = Array2::zeros(dim_img);
    Zip::from(&mut grad)
        .and(&win.fixed)
        .and(&win.warped)
        .and(&at)
        .and(&bt)
        .and(&ct)
        .for_each(|g, &i, &j, &a, &b, &c| {
            *g = -(i * a - j * b + c) / m;
        });
    Ok((-win.ncc.mean().unwrap_or(0.0), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(dim: (usize, usize), seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn(dim, || rng.gen::<f64>() - 0.5)
    }

    fn brute_ncc_mean(i: &Array2<f64>, j: &Array2<f64>, w: LnccWindow) -> f64 {
        let (nl, na) = i.dim();
        let mut total = 0.0;
        let mut count = 0;
        for l in 0..=nl - w.lateral {
            for k in 0..=na - w.axial {
                let a = i.slice(ndarray::s![l..l + w.lateral, k..k + w.axial]);
                let b = j.slice(ndarray::s![l..l + w.lateral, k..k + w.axial]);
                let (ma, mb) = (a.mean().unwrap(), b.mean().unwrap());
                let mut sab = 0.0;
                let mut saa = 0.0;
                let mut sbb = 0.0;
                for (x, y) in a.iter().zip(b.iter()) {
                    sab += (x - ma) * (y - mb);
                    saa += (x - ma) * (x - ma);
                    sbb += (y - mb) * (y - mb);
                }
                total += sab / (saa * sbb).sqrt();
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn matches_brute_force() {
        let i = noise((14, 20), 1);
        let j = &i * 0.5 + &noise((14, 20), 2);
        let w = LnccWindow {
            lateral: 5,
            axial: 7,
        };
        let s = lncc_similarity(i.view(), j.view(), w).unwrap();
        assert!((s + brute_ncc_mean(&i, &j, w)).abs() < 1e-12);
    }

    #[test]
    fn affine_copy_is_perfect() {
        let i = noise((12, 30), 3);
        let j = i.mapv(|v| 3.7 * v + 250.0);
        let s = lncc_similarity(i.view(), j.view(), LnccWindow::default()).unwrap();
        assert!((s + 1.0).abs() < 1e-9);
        let neg = i.mapv(|v| -2.0 * v + 1.0);
        let s = lncc_similarity(i.view(), neg.view(), LnccWindow::default()).unwrap();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn independent_noise_is_uncorrelated() {
        let i = noise((128, 128), 10);
        let j = noise((128, 128), 11);
        let s = lncc_similarity(i.view(), j.view(), LnccWindow::default()).unwrap();
        assert!(s.abs() <= 0.05, "{s}");
    }

    #[test]
    fn flat_windows_contribute_zero() {
        let i = noise((9, 9), 4);
        let j = Array2::from_elem((9, 9), 2.0);
        assert_eq!(lncc_similarity(i.view(), j.view(), LnccWindow::default()).unwrap(), 0.0);
    }

    #[test]
    fn window_must_fit() {
        let i = noise((8, 20), 5);
        assert!(lncc_similarity(i.view(), i.view(), LnccWindow::default()).is_err());
    }

    #[test]
    fn adjoint_identity() {
        let w = LnccWindow {
            lateral: 3,
            axial: 4,
        };
        let x = noise((7, 9), 6);
        let y = noise((5, 6), 7);
        let lhs = (&box_valid(&x, w) * &y).sum();
        let rhs = (&x * &box_adjoint(&y, w, x.dim())).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_difference_quotient() {
        let i = noise((11, 13), 8);
        let j = &i + &(noise((11, 13), 9) * 0.7);
        let w = LnccWindow {
            lateral: 4,
            axial: 5,
        };
        let (v, g) = lncc_with_gradient(i.view(), j.view(), w).unwrap();
        let h = 1e-6;
        for &(l, k) in &[(0, 0), (3, 7), (10, 12), (5, 2)] {
            let mut jp = j.clone();
            jp[[l, k]] += h;
            let mut jm = j.clone();
            jm[[l, k]] -= h;
            let fd = (lncc_similarity(i.view(), jp.view(), w).unwrap()
                - lncc_similarity(i.view(), jm.view(), w).unwrap())
                / (2.0 * h);
            assert!((fd - g[[l, k]]).abs() < 1e-8, "{fd} vs {}", g[[l, k]]);
        }
        assert!(v < 0.0);
    }
}
