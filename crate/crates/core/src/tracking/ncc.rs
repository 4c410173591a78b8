//! Windowed normalized cross-correlation speckle tracking.

use ndarray::{Array3, ArrayView1, Axis};
use rayon::prelude::*;

use super::peak::subsample_peak;
use crate::data::{DisplacementStack, FrameStack};
use crate::error::{Error, Result};

/// A correlation this close to 1 is a perfect match of the window; its lag
/// is taken as exact and not refined.
const PERFECT_MATCH: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NccConfig {
    /// Correlation window length in samples (odd).
    pub window_len: usize,
    /// Distance between window centers in samples.
    pub window_hop: usize,
    /// Search range in samples on each side.
    pub max_lag: usize,
}

impl Default for NccConfig {
    fn default() -> Self {
        Self {
            window_len: 89,
            window_hop: 20,
            max_lag: 16,
        }
    }
}

impl NccConfig {
    pub fn validate(&self, n_axial: usize) -> Result<()> {
        if self.window_len % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "window_len {} must be odd",
                self.window_len
            )));
        }
        if self.max_lag == 0 || self.window_hop == 0 {
            return Err(Error::InvalidParameter(
                "max_lag and window_hop must be >= 1".into(),
            ));
        }
        if self.window_len + 2 * self.max_lag > n_axial {
            return Err(Error::InvalidParameter(format!(
                "window_len + 2 max_lag = {} exceeds {} axial samples",
                self.window_len + 2 * self.max_lag,
                n_axial
            )));
        }
        Ok(())
    }

    /// Window centers along an axial line of `n_axial` samples.
    pub fn centers(&self, n_axial: usize) -> Vec<usize> {
        let half = self.window_len / 2;
        let first = half + self.max_lag;
        let last = n_axial - 1 - half - self.max_lag;
        (first..=last).step_by(self.window_hop).collect()
    }
}

/// Correlation values for lags `-max_lag..=max_lag`.
#[derive(Debug, Clone, PartialEq)]
pub struct NccProfile {
    pub values: Vec<f64>,
    pub max_lag: usize,
    /// The reference window has zero variance; all values are zero.
    pub degenerate: bool,
}

impl NccProfile {
    pub fn at(&self, lag: isize) -> f64 {
        self.values[(lag + self.max_lag as isize) as usize]
    }
}

/// Zero-mean normalized correlation of `window` against `segment` at every
/// lag. `segment` starts `max_lag` samples before the window position, so
/// lag `j` compares `window` with `segment[max_lag + j ..]`.
pub fn ncc_profile(window: &[f64], segment: &[f64], max_lag: usize) -> Result<NccProfile> {
    let n = window.len();
    if n == 0 || segment.len() < n + 2 * max_lag {
        return Err(Error::InvalidParameter(format!(
            "search segment of {} samples too short for window {n} and max_lag {max_lag}",
            segment.len()
        )));
    }
    let mean_w = window.iter().sum::<f64>() / n as f64;
    let a: Vec<f64> = window.iter().map(|v| v - mean_w).collect();
    let saa: f64 = a.iter().map(|v| v * v).sum();
    let n_lags = 2 * max_lag + 1;
    if saa == 0.0 {
        return Ok(NccProfile {
            values: vec![0.0; n_lags],
            max_lag,
            degenerate: true,
        });
    }
    let values = (0..n_lags)
        .map(|j| {
            let b = &segment[j..j + n];
            let mean_b = b.iter().sum::<f64>() / n as f64;
            let mut sab = 0.0;
            let mut sbb = 0.0;
            for (x, y) in a.iter().zip(b.iter()) {
                let d = y - mean_b;
                sab += x * d;
                sbb += d * d;
            }
            if sbb == 0.0 {
                0.0
            } else {
                sab / (saa * sbb).sqrt()
            }
        })
        .collect();
    Ok(NccProfile {
        values,
        max_lag,
        degenerate: false,
    })
}

/// Lag of one window (samples), or `None` for a degenerate window.
fn window_lag(
    reference: ArrayView1<'_, f64>,
    moving: ArrayView1<'_, f64>,
    center: usize,
    cfg: &NccConfig,
) -> Option<f64> {
    let half = cfg.window_len / 2;
    let w = reference.slice(ndarray::s![center - half..=center + half]);
    let seg = moving.slice(ndarray::s![
        center - half - cfg.max_lag..=center + half + cfg.max_lag
    ]);
    let w = w.as_slice().map(|s| s.to_vec()).unwrap_or_else(|| w.to_vec());
    let seg = seg.as_slice().map(|s| s.to_vec()).unwrap_or_else(|| seg.to_vec());
    let profile = ncc_profile(&w, &seg, cfg.max_lag).ok()?;
    if profile.degenerate {
        return None;
    }
    let peak = subsample_peak(&profile.values).ok()?;
    let position = if peak.peak_value >= PERFECT_MATCH {
        peak.peak_index as f64
    } else {
        peak.position
    };
    Some(position - cfg.max_lag as f64)
}

/// Piecewise-linear interpolation of window estimates onto every axial
/// sample; constant beyond the first and last centers.
fn interpolate_centers(centers: &[usize], values: &[f64], out: &mut [f64]) {
    let mut seg = 0;
    for (k, o) in out.iter_mut().enumerate() {
        if k <= centers[0] {
            *o = values[0];
            continue;
        }
        if k >= centers[centers.len() - 1] {
            *o = values[values.len() - 1];
            continue;
        }
        while centers[seg + 1] < k {
            seg += 1;
        }
        let (c0, c1) = (centers[seg], centers[seg + 1]);
        let f = (k - c0) as f64 / (c1 - c0) as f64;
        *o = values[seg] + (values[seg + 1] - values[seg]) * f;
    }
}

/// Axial displacement of every frame relative to frame 0 by windowed NCC
/// with parabolic sub-sample refinement. Degenerate windows report zero.
pub fn ncc_track_sequence(stack: &FrameStack, cfg: &NccConfig) -> Result<DisplacementStack> {
    let geom = stack.geometry;
    if geom.n_frames < 2 {
        return Err(Error::InvalidParameter("tracking needs at least 2 frames".into()));
    }
    cfg.validate(geom.n_axial)?;
    let centers = cfg.centers(geom.n_axial);
    let dz = geom.axial_spacing();
    let reference = stack.frame(0);
    let mut axial = Array3::zeros(geom.stack_dims());
    axial
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .skip(1)
        .for_each(|(t, mut frame)| {
            let moving = stack.frame(t);
            let mut lags = vec![0.0; centers.len()];
            for (l, mut line) in frame.axis_iter_mut(Axis(0)).enumerate() {
                let r = reference.index_axis(Axis(0), l);
                let m = moving.index_axis(Axis(0), l);
                for (lag, &c) in lags.iter_mut().zip(centers.iter()) {
                    *lag = window_lag(r, m, c, cfg).unwrap_or(0.0) * dz;
                }
                interpolate_centers(
                    &centers,
                    &lags,
                    line.as_slice_mut().expect("contiguous line"),
                );
            }
        });
    DisplacementStack::new(geom, axial, None)
}
