//! Multi-resolution variational registration: LNCC similarity plus an L1
//! curvature penalty, minimised by L-BFGS with Armijo backtracking.

use std::collections::VecDeque;

use ndarray::{Array2, Array3, ArrayView2, Axis, Zip};

use super::lncc::{lncc_similarity, lncc_with_gradient, LnccWindow};
use super::penalty::{charbonnier_penalty, curvature_penalty};
use super::warp::{warp_image, warp_with_derivatives, Ddf, GridSpacing};
use crate::data::{DisplacementStack, FrameStack};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariationalConfig {
    /// Weight of the curvature penalty.
    pub alpha: f64,
    pub window: LnccWindow,
    pub pyramid_levels: usize,
    /// Iteration cap per pyramid level.
    pub max_iters: usize,
    /// First trial step of each line search, in pixels of largest update.
    pub initial_step: f64,
    /// Charbonnier smoothing constant in meters.
    pub charbonnier_eps: f64,
    /// Start each frame from the previous frame's field.
    pub warm_start: bool,
    pub estimate_lateral: bool,
    /// Include lateral second differences in the penalty.
    pub lateral_curvature: bool,
    /// Stop a level once the relative decrease of the loss drops below this.
    pub tolerance: f64,
    /// Gaussian width (pixels) of the gradient smoothing used for the
    /// first step and after a quasi-Newton reset.
    pub smoothing_sigma: f64,
    /// Backtracking gives up below this step.
    pub min_step: f64,
    pub armijo_c1: f64,
    /// Axial smoothing (pixels) of the rectified frames that feed the coarse
    /// pyramid levels; `None` decimates the frames directly.
    pub coarse_envelope_sigma: Option<f64>,
}

impl Default for VariationalConfig {
    fn default() -> Self {
        Self {
            alpha: 0.02,
            window: LnccWindow::default(),
            pyramid_levels: 3,
            max_iters: 100,
            initial_step: 1.0,
            charbonnier_eps: 1e-9,
            warm_start: true,
            estimate_lateral: false,
            lateral_curvature: true,
            tolerance: 1e-5,
            smoothing_sigma: 2.0,
            min_step: 1e-6,
            armijo_c1: 1e-4,
            coarse_envelope_sigma: Some(1.5),
        }
    }
}

impl VariationalConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("initial_step", self.initial_step),
            ("charbonnier_eps", self.charbonnier_eps),
            ("min_step", self.min_step),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.tolerance >= 0.0) || !(self.smoothing_sigma >= 0.0) {
            return Err(Error::InvalidParameter(
                "tolerance and smoothing_sigma must be >= 0".into(),
            ));
        }
        if let Some(sigma) = self.coarse_envelope_sigma {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "coarse_envelope_sigma must be positive, got {sigma}"
                )));
            }
        }
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0) {
            return Err(Error::InvalidParameter("armijo_c1 must lie in (0, 1)".into()));
        }
        if self.window.lateral % 2 == 0 || self.window.axial % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "LNCC window {}x{} must be odd in both directions",
                self.window.lateral, self.window.axial
            )));
        }
        if self.pyramid_levels == 0 || self.max_iters == 0 || self.window.is_empty() {
            return Err(Error::InvalidParameter(
                "pyramid_levels, max_iters and window must be non-zero".into(),
            ));
        }
        Ok(())
    }
}

/// Loss components at one displacement field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub similarity: f64,
    /// Exact L1 curvature penalty (unweighted).
    pub penalty: f64,
    pub smoothed_penalty: f64,
    /// `similarity + alpha * penalty`.
    pub total: f64,
    /// `similarity + alpha * smoothed_penalty`; the function being descended.
    pub smoothed_total: f64,
}

/// One row of the optimisation trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub frame: usize,
    /// Pyramid level, 0 is full resolution.
    pub level: usize,
    pub iter: usize,
    pub similarity: f64,
    pub penalty: f64,
    pub total: f64,
}

fn penalties(ddf: &Ddf, cfg: &VariationalConfig, with_grad: bool) -> (f64, f64, Option<Ddf>) {
    let mut exact = curvature_penalty(ddf.axial.view(), cfg.lateral_curvature);
    let (mut smooth, ga) = charbonnier_penalty(ddf.axial.view(), cfg.charbonnier_eps, cfg.lateral_curvature);
    let mut gl = Array2::zeros(ddf.dim());
    if cfg.estimate_lateral {
        exact += curvature_penalty(ddf.lateral.view(), cfg.lateral_curvature);
        let (s, g) = charbonnier_penalty(ddf.lateral.view(), cfg.charbonnier_eps, cfg.lateral_curvature);
        smooth += s;
        gl = g;
    }
    let grad = with_grad.then(|| Ddf {
        axial: ga,
        lateral: gl,
    });
    (exact, smooth, grad)
}

fn objective_value(similarity: f64, exact: f64, smooth: f64, alpha: f64) -> ObjectiveValue {
    ObjectiveValue {
        similarity,
        penalty: exact,
        smoothed_penalty: smooth,
        total: similarity + alpha * exact,
        smoothed_total: similarity + alpha * smooth,
    }
}

/// Loss of registering `moving` onto `fixed` through `ddf`.
pub fn evaluate_objective(
    fixed: ArrayView2<'_, f64>,
    moving: ArrayView2<'_, f64>,
    ddf: &Ddf,
    spacing: GridSpacing,
    cfg: &VariationalConfig,
) -> Result<ObjectiveValue> {
    let warped = warp_image(moving, ddf, spacing)?;
    let sim = lncc_similarity(fixed, warped.view(), cfg.window)?;
    let (exact, smooth, _) = penalties(ddf, cfg, false);
    Ok(objective_value(sim, exact, smooth, cfg.alpha))
}

/// Loss and the gradient of its smoothed form with respect to both
/// displacement components (per meter). The lateral gradient is zero unless
/// lateral motion is estimated.
pub fn objective_gradient(
    fixed: ArrayView2<'_, f64>,
    moving: ArrayView2<'_, f64>,
    ddf: &Ddf,
    spacing: GridSpacing,
    cfg: &VariationalConfig,
) -> Result<(ObjectiveValue, Ddf)> {
    let warp = warp_with_derivatives(moving, ddf, spacing)?;
    let (sim, dsim) = lncc_with_gradient(fixed, warp.image.view(), cfg.window)?;
    let (exact, smooth, pgrad) = penalties(ddf, cfg, true);
    let pgrad = pgrad.expect("gradient requested");
    let mut grad = Ddf::zeros(ddf.dim());
    Zip::from(&mut grad.axial)
        .and(&dsim)
        .and(&warp.d_axial)
        .and(&pgrad.axial)
        .for_each(|g, &s, &d, &p| *g = s * d + cfg.alpha * p);
    if cfg.estimate_lateral {
        Zip::from(&mut grad.lateral)
            .and(&dsim)
            .and(&warp.d_lateral)
            .and(&pgrad.lateral)
            .for_each(|g, &s, &d, &p| *g = s * d + cfg.alpha * p);
    }
    Ok((objective_value(sim, exact, smooth, cfg.alpha), grad))
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let half = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-half..=half)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

fn convolve_lane(src: ndarray::ArrayView1<'_, f64>, mut dst: ndarray::ArrayViewMut1<'_, f64>, kernel: &[f64]) {
    let half = (kernel.len() / 2) as isize;
    let n = src.len() as isize;
    for (i, d) in dst.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, &w) in kernel.iter().enumerate() {
            let p = i as isize + j as isize - half;
            if p >= 0 && p < n {
                acc += w * src[p as usize];
            }
        }
        *d = acc;
    }
}

/// Separable zero-padded convolution along both axes.
fn smooth(a: &Array2<f64>, kernel: &[f64]) -> Array2<f64> {
    if kernel.len() == 1 {
        return a.clone();
    }
    let mut tmp = Array2::zeros(a.dim());
    for (s, d) in a.lanes(Axis(1)).into_iter().zip(tmp.lanes_mut(Axis(1))) {
        convolve_lane(s, d, kernel);
    }
    let mut out = Array2::zeros(a.dim());
    for (s, d) in tmp.lanes(Axis(0)).into_iter().zip(out.lanes_mut(Axis(0))) {
        convolve_lane(s, d, kernel);
    }
    out
}

fn dot(a: &Ddf, b: &Ddf) -> f64 {
    (&a.axial * &b.axial).sum() + (&a.lateral * &b.lateral).sum()
}

fn axpy(x: &Ddf, s: f64, d: &Ddf) -> Ddf {
    Ddf {
        axial: &x.axial + &(&d.axial * s),
        lateral: &x.lateral + &(&d.lateral * s),
    }
}

/// Result of registering one image pair at one resolution.
#[derive(Debug, Clone)]
pub struct LevelResult {
    pub ddf: Ddf,
    pub value: ObjectiveValue,
    /// Loss after each accepted iterate, starting with the initial field.
    pub trace: Vec<ObjectiveValue>,
    /// Backtracking hit `min_step` before convergence; `ddf` is the best
    /// iterate found.
    pub step_underflow: bool,
}

fn preconditioned_descent(g: &Ddf, kernel: &[f64]) -> Ddf {
    let d = Ddf {
        axial: smooth(&g.axial, kernel).mapv(|v| -v),
        lateral: smooth(&g.lateral, kernel).mapv(|v| -v),
    };
    if dot(g, &d) < 0.0 {
        d
    } else {
        Ddf {
            axial: g.axial.mapv(|v| -v),
            lateral: g.lateral.mapv(|v| -v),
        }
    }
}

/// Curvature pairs kept by the quasi-Newton update.
const LBFGS_MEMORY: usize = 7;

/// Two-loop recursion: approximate inverse Hessian applied to `-g`.
fn lbfgs_direction(g: &Ddf, memory: &VecDeque<(Ddf, Ddf, f64)>) -> Ddf {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        q = axpy(&q, -a, y);
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.axial *= gamma;
        q.lateral *= gamma;
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q = axpy(&q, a - b, s);
    }
    q.axial.mapv_inplace(|v| -v);
    q.lateral.mapv_inplace(|v| -v);
    q
}

/// Descend the smoothed loss from `init` with limited-memory quasi-Newton
/// steps and Armijo backtracking. No trial moves any pixel by more than
/// `initial_step` pixels. A step is accepted only when it satisfies the
/// Armijo condition on the smoothed loss and does not increase the exact
/// loss, so the recorded totals never increase.
pub fn register_pair(
    fixed: ArrayView2<'_, f64>,
    moving: ArrayView2<'_, f64>,
    init: Ddf,
    spacing: GridSpacing,
    cfg: &VariationalConfig,
) -> Result<LevelResult> {
    cfg.validate()?;
    let kernel = gaussian_kernel(cfg.smoothing_sigma);
    let mut x = init;
    let (mut f, mut g) = objective_gradient(fixed, moving, &x, spacing, cfg)?;
    check_finite(&f)?;
    let mut trace = vec![f];
    let mut memory: VecDeque<(Ddf, Ddf, f64)> = VecDeque::with_capacity(LBFGS_MEMORY);
    let mut step_underflow = false;
    for _ in 0..cfg.max_iters {
        let mut d = if memory.is_empty() {
            preconditioned_descent(&g, &kernel)
        } else {
            lbfgs_direction(&g, &memory)
        };
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            memory.clear();
            d = preconditioned_descent(&g, &kernel);
            slope = dot(&g, &d);
        }
        let largest = d
            .axial
            .iter()
            .map(|v| v.abs() / spacing.axial)
            .chain(d.lateral.iter().map(|v| v.abs() / spacing.lateral))
            .fold(0.0, f64::max);
        if !(slope < 0.0) || largest == 0.0 {
            break;
        }
        // first and reset directions are scaled to a one-pixel move, later
        // ones only capped
        let scale = if memory.is_empty() || largest > 1.0 { largest } else { 1.0 };
        d.axial /= scale;
        d.lateral /= scale;
        slope /= scale;

        let mut s = cfg.initial_step;
        let accepted = loop {
            let trial = axpy(&x, s, &d);
            let v = evaluate_objective(fixed, moving, &trial, spacing, cfg)?;
            check_finite(&v)?;
            if v.smoothed_total <= f.smoothed_total + cfg.armijo_c1 * s * slope && v.total <= f.total {
                break Some(trial);
            }
            s *= 0.5;
            if s < cfg.min_step {
                break None;
            }
        };
        let Some(next) = accepted else {
            step_underflow = true;
            break;
        };
        let previous = f.total;
        let (f_next, g_next) = objective_gradient(fixed, moving, &next, spacing, cfg)?;
        let sk = axpy(&next, -1.0, &x);
        let yk = axpy(&g_next, -1.0, &g);
        let sy = dot(&sk, &yk);
        if sy > 0.0 && sy.is_finite() {
            if memory.len() == LBFGS_MEMORY {
                memory.pop_front();
            }
            memory.push_back((sk, yk, 1.0 / sy));
        }
        x = next;
        f = f_next;
        g = g_next;
        trace.push(f);
        let scale = previous.abs().max(f64::MIN_POSITIVE);
        if (previous - f.total) / scale < cfg.tolerance {
            break;
        }
    }
    Ok(LevelResult {
        ddf: x,
        value: f,
        trace,
        step_underflow,
    })
}

fn check_finite(v: &ObjectiveValue) -> Result<()> {
    if v.total.is_finite() && v.smoothed_total.is_finite() {
        Ok(())
    } else {
        Err(Error::Tracking {
            frame: 0,
            message: format!("non-finite loss {v:?}"),
        })
    }
}

/// 2x2 block mean; a trailing odd row or column averages what it has.
pub fn downsample(a: ArrayView2<'_, f64>) -> Array2<f64> {
    let (nl, na) = a.dim();
    let (ml, ma) = (nl.div_ceil(2), na.div_ceil(2));
    Array2::from_shape_fn((ml, ma), |(i, j)| {
        let mut s = 0.0;
        let mut n = 0;
        for l in 2 * i..(2 * i + 2).min(nl) {
            for k in 2 * j..(2 * j + 2).min(na) {
                s += a[[l, k]];
                n += 1;
            }
        }
        s / n as f64
    })
}

/// Bilinear interpolation of a coarse field onto the grid it was
/// downsampled from.
pub fn upsample(coarse: ArrayView2<'_, f64>, fine_dim: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_fn(fine_dim, |(l, k)| {
        crate::interp::bilinear_clamped(coarse, (l as f64 - 0.5) / 2.0, (k as f64 - 0.5) / 2.0)
    })
}

/// Rectified image smoothed along the axial direction: a cheap envelope of
/// an RF frame. Decimating raw RF aliases the carrier, so coarse levels are
/// built from this instead.
pub fn envelope_proxy(img: ArrayView2<'_, f64>, sigma: f64) -> Array2<f64> {
    let kernel = gaussian_kernel(sigma);
    let rect = img.mapv(f64::abs);
    let mut out = Array2::zeros(rect.dim());
    for (s, d) in rect.lanes(Axis(1)).into_iter().zip(out.lanes_mut(Axis(1))) {
        convolve_lane(s, d, &kernel);
    }
    out
}

/// Level 0 is the image itself; coarser levels decimate its envelope when
/// `envelope_sigma` is set.
fn image_pyramid(img: ArrayView2<'_, f64>, levels: usize, envelope_sigma: Option<f64>) -> Vec<Array2<f64>> {
    let mut out = vec![img.to_owned()];
    if levels > 1 {
        let base = match envelope_sigma {
            Some(sigma) => envelope_proxy(img, sigma),
            None => img.to_owned(),
        };
        let mut coarse = pyramid(base.view(), levels);
        out.extend(coarse.drain(1..));
    }
    out
}

fn pyramid(img: ArrayView2<'_, f64>, levels: usize) -> Vec<Array2<f64>> {
    let mut out = vec![img.to_owned()];
    for _ in 1..levels {
        let next = downsample(out.last().expect("non-empty").view());
        out.push(next);
    }
    out
}

/// Number of pyramid levels whose coarsest image still fits the window.
fn usable_levels(dim: (usize, usize), cfg: &VariationalConfig) -> usize {
    let mut levels = 1;
    let mut d = dim;
    while levels < cfg.pyramid_levels {
        d = (d.0.div_ceil(2), d.1.div_ceil(2));
        if !cfg.window.fits(d) {
            break;
        }
        levels += 1;
    }
    levels
}

/// Coarse-to-fine registration of one frame pair. Each level starts from
/// `warm` plus the correction found at the level below.
pub fn register_multilevel(
    fixed: ArrayView2<'_, f64>,
    moving: ArrayView2<'_, f64>,
    warm: &Ddf,
    spacing: GridSpacing,
    cfg: &VariationalConfig,
) -> Result<(Ddf, Vec<(usize, LevelResult)>)> {
    if !cfg.window.fits(fixed.dim()) {
        return Err(Error::InvalidParameter(format!(
            "LNCC window {}x{} larger than frame {:?}",
            cfg.window.lateral,
            cfg.window.axial,
            fixed.dim()
        )));
    }
    let levels = usable_levels(fixed.dim(), cfg);
    let fixed_p = image_pyramid(fixed, levels, cfg.coarse_envelope_sigma);
    let moving_p = image_pyramid(moving, levels, cfg.coarse_envelope_sigma);
    let warm_ax = pyramid(warm.axial.view(), levels);
    let warm_lat = pyramid(warm.lateral.view(), levels);
    let mut results = Vec::with_capacity(levels);
    let mut correction: Option<Ddf> = None;
    for level in (0..levels).rev() {
        let dim = fixed_p[level].dim();
        let mut init = Ddf {
            axial: warm_ax[level].clone(),
            lateral: warm_lat[level].clone(),
        };
        if let Some(c) = &correction {
            init.axial += &upsample(c.axial.view(), dim);
            init.lateral += &upsample(c.lateral.view(), dim);
        }
        let res = register_pair(
            fixed_p[level].view(),
            moving_p[level].view(),
            init,
            spacing.coarsened(level),
            cfg,
        )?;
        correction = Some(Ddf {
            axial: &res.ddf.axial - &warm_ax[level],
            lateral: &res.ddf.lateral - &warm_lat[level],
        });
        results.push((level, res));
    }
    let finest = results.last().expect("at least one level").1.ddf.clone();
    Ok((finest, results))
}

/// Displacements of a whole sequence plus the optimisation trace.
#[derive(Debug, Clone)]
pub struct VariationalOutput {
    pub displacements: DisplacementStack,
    pub trace: Vec<TraceRow>,
    /// `(frame, level)` pairs where backtracking underflowed.
    pub step_underflow: Vec<(usize, usize)>,
}

/// Register every frame onto frame 0.
pub fn variational_track_sequence(stack: &FrameStack, cfg: &VariationalConfig) -> Result<VariationalOutput> {
    cfg.validate()?;
    let geom = stack.geometry;
    if geom.n_frames < 2 {
        return Err(Error::InvalidParameter("tracking needs at least 2 frames".into()));
    }
    let spacing = GridSpacing::of(&geom);
    let fixed = stack.frame(0);
    let dims = geom.stack_dims();
    let mut axial = Array3::zeros(dims);
    let mut lateral = cfg.estimate_lateral.then(|| Array3::zeros(dims));
    let mut trace = Vec::new();
    let mut step_underflow = Vec::new();
    let mut warm = Ddf::zeros(geom.frame_dims());
    for t in 1..geom.n_frames {
        let start = if cfg.warm_start {
            warm.clone()
        } else {
            Ddf::zeros(geom.frame_dims())
        };
        let (ddf, levels) = register_multilevel(fixed, stack.frame(t), &start, spacing, cfg).map_err(|e| match e {
            Error::Tracking { message, .. } => Error::Tracking { frame: t, message },
            other => other,
        })?;
        for (level, res) in &levels {
            if res.step_underflow {
                step_underflow.push((t, *level));
            }
            trace.extend(res.trace.iter().enumerate().map(|(iter, v)| TraceRow {
                frame: t,
                level: *level,
                iter,
                similarity: v.similarity,
                penalty: v.penalty,
                total: v.total,
            }));
        }
        axial.index_axis_mut(Axis(0), t).assign(&ddf.axial);
        if let Some(lat) = lateral.as_mut() {
            lat.index_axis_mut(Axis(0), t).assign(&ddf.lateral);
        }
        warm = ddf;
    }
    let displacements = DisplacementStack::new(geom, axial, lateral).map_err(|e| Error::Tracking {
        frame: 0,
        message: format!("implausible displacement field: {e}"),
    })?;
    Ok(VariationalOutput {
        displacements,
        trace,
        step_underflow,
    })
}
