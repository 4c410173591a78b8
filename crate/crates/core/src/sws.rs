//! Shear-wave speed by lateral time of flight, Young's modulus conversion,
//! median filtering and the focal exclusion zone.

use ndarray::{Array2, Axis};
use rayon::prelude::*;

use crate::data::{DisplacementStack, ElasticityMap, ScanGeometry};
use crate::error::{Error, Result};
use crate::tracking::subsample_peak;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TofConfig {
    /// Search range of the time-profile correlation, in frames.
    pub max_lag_frames: usize,
    /// Axial samples averaged on each side of a row.
    pub axial_average_halfwidth: usize,
    /// Lateral distance between the two profiles of a pair, in lines.
    pub lane_distance: usize,
    /// Accepted speeds (m/s), inclusive.
    pub valid_speed_range: (f64, f64),
    pub min_peak_corr: f64,
    /// Half-width of the excluded band around the push line (m).
    pub focal_exclusion_halfwidth: f64,
    /// Normalize with the first profile in both sums of the denominator.
    pub strict_denominator: bool,
    /// Half the axial baseline (samples) over which the arrival-time
    /// gradient along depth is measured. Zero uses the lateral delay alone.
    pub axial_halfspan: usize,
}

impl Default for TofConfig {
    fn default() -> Self {
        Self {
            max_lag_frames: 20,
            axial_average_halfwidth: 8,
            lane_distance: 1,
            valid_speed_range: (0.5, 10.0),
            min_peak_corr: 0.6,
            focal_exclusion_halfwidth: 1.5e-3,
            strict_denominator: false,
            axial_halfspan: 20,
        }
    }
}

impl TofConfig {
    pub fn validate(&self, n_frames: usize) -> Result<()> {
        if self.max_lag_frames >= n_frames {
            return Err(Error::InvalidParameter(format!(
                "max_lag_frames {} must be below the frame count {n_frames}",
                self.max_lag_frames
            )));
        }
        if self.lane_distance == 0 {
            return Err(Error::InvalidParameter("lane_distance must be >= 1".into()));
        }
        let (lo, hi) = self.valid_speed_range;
        if !(lo >= 0.0 && lo < hi) {
            return Err(Error::InvalidParameter(format!(
                "valid speed range [{lo}, {hi}] is empty or negative"
            )));
        }
        if !(self.focal_exclusion_halfwidth >= 0.0) || self.min_peak_corr.is_nan() {
            return Err(Error::InvalidParameter(
                "focal_exclusion_halfwidth must be >= 0 and min_peak_corr a number".into(),
            ));
        }
        Ok(())
    }
}

/// Correlation of two time profiles at lags `-max_lag..=max_lag`.
#[derive(Debug, Clone, PartialEq)]
pub struct XcorrProfile {
    pub values: Vec<f64>,
    pub max_lag: usize,
    /// One of the profiles is identically zero.
    pub degenerate: bool,
}

/// `C[j] = sum f(i) g(i+j) / sqrt(sum f(i)^2 * sum g(i+j)^2)`, all sums over
/// the indices where both samples exist. With `strict_denominator` the
/// second sum uses `f(i+j)^2` instead.
pub fn lateral_xcorr(f: &[f64], g: &[f64], max_lag: usize, strict_denominator: bool) -> Result<XcorrProfile> {
    let n = f.len();
    if g.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "time profiles of {} and {} samples",
            n,
            g.len()
        )));
    }
    if n < 3 || max_lag >= n {
        return Err(Error::InvalidParameter(format!(
            "profiles of {n} samples cannot be searched to lag {max_lag}"
        )));
    }
    let n_lags = 2 * max_lag + 1;
    if f.iter().all(|&v| v == 0.0) || g.iter().all(|&v| v == 0.0) {
        return Ok(XcorrProfile {
            values: vec![0.0; n_lags],
            max_lag,
            degenerate: true,
        });
    }
    let values = (0..n_lags)
        .map(|idx| {
            let j = idx as isize - max_lag as isize;
            let lo = 0.max(-j) as usize;
            let hi = (n as isize).min(n as isize - j) as usize;
            let mut num = 0.0;
            let mut ff = 0.0;
            let mut gg = 0.0;
            for i in lo..hi {
                let a = f[i];
                let b = g[(i as isize + j) as usize];
                num += a * b;
                ff += a * a;
                gg += if strict_denominator {
                    let c = f[(i as isize + j) as usize];
                    c * c
                } else {
                    b * b
                };
            }
            let den = (ff * gg).sqrt();
            if den > 0.0 {
                num / den
            } else {
                0.0
            }
        })
        .collect();
    Ok(XcorrProfile {
        values,
        max_lag,
        degenerate: false,
    })
}

/// Arrival delay between two profiles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeLag {
    /// Fractional lag in frames.
    pub lag: f64,
    /// Delay in seconds.
    pub dt: f64,
    /// Peak correlation.
    pub quality: f64,
    pub refined: bool,
    /// Degenerate or flat profile; the delay is meaningless.
    pub degenerate: bool,
}

/// Lag at the correlation maximum with parabolic refinement, converted to
/// seconds at frame rate `prf`.
pub fn estimate_time_lag(profile: &XcorrProfile, prf: f64) -> Result<TimeLag> {
    if !(prf > 0.0) {
        return Err(Error::InvalidParameter(format!("prf {prf} must be > 0")));
    }
    let peak = subsample_peak(&profile.values)?;
    let first = profile.values[0];
    let flat = profile.values.iter().all(|&v| v == first);
    let lag = peak.position - profile.max_lag as f64;
    Ok(TimeLag {
        lag,
        dt: lag / prf,
        quality: peak.peak_value,
        refined: peak.refined,
        degenerate: profile.degenerate || flat,
    })
}

/// Shear-wave speed per pixel `[lateral][axial]`. Invalid pixels hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct SwsMap {
    pub speed: Array2<f64>,
    pub peak_corr: Array2<f64>,
    pub valid: Array2<bool>,
}

impl SwsMap {
    pub fn dim(&self) -> (usize, usize) {
        self.speed.dim()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Axial displacement averaged over `[k - h, k + h]` (clipped), as a time
/// series per `[lateral][axial]` pixel: shape `(n_lateral, n_axial, n_frames)`.
fn time_profiles(disp: &DisplacementStack, h: usize) -> ndarray::Array3<f64> {
    let (nf, nl, na) = disp.axial.dim();
    let mut out = ndarray::Array3::zeros((nl, na, nf));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(l, mut line)| {
            let mut prefix = vec![0.0; na + 1];
            for t in 0..nf {
                let u = disp.axial.slice(ndarray::s![t, l, ..]);
                for k in 0..na {
                    prefix[k + 1] = prefix[k] + u[k];
                }
                for k in 0..na {
                    let lo = k.saturating_sub(h);
                    let hi = (k + h + 1).min(na);
                    line[[k, t]] = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
                }
            }
        });
    out
}

/// Time-of-flight speed map. Each pair of lines `(l, l + d)` on one side of
/// the push gives the delay of the outward-travelling wave; the estimate is
/// stored at the line farther from the push. The push line itself and pairs
/// straddling it stay invalid.
///
/// With a non-zero `axial_halfspan` the arrival-time gradient along depth is
/// measured on the outer line as well and the speed is `1 / |grad T|`; for a
/// wave travelling purely laterally this equals `d / dt`.
pub fn sws_map(disp: &DisplacementStack, cfg: &TofConfig) -> Result<SwsMap> {
    let geom = disp.geometry;
    let (nf, nl, na) = disp.axial.dim();
    if nf < 2 {
        return Err(Error::InvalidParameter("time of flight needs at least 2 frames".into()));
    }
    cfg.validate(nf)?;
    let push = geom.push_lateral_index;
    if push >= nl {
        return Err(Error::OutOfRange(format!(
            "push line {push} outside {nl} lateral lines"
        )));
    }
    let d = cfg.lane_distance;
    let distance = d as f64 * geom.lateral_pitch;
    let dz = geom.axial_spacing();
    let profiles = time_profiles(disp, cfg.axial_average_halfwidth);
    let profile = |l: usize, k: usize| profiles.slice(ndarray::s![l, k, ..]).to_vec();
    // (outer line, line nearer the push)
    let columns: Vec<(usize, usize)> = (0..nl)
        .filter_map(|outer| {
            if outer >= push + d {
                Some((outer, outer - d))
            } else if outer + d <= push {
                Some((outer, outer + d))
            } else {
                None
            }
        })
        .collect();
    let results: Vec<(usize, Vec<PixelEstimate>)> = columns
        .par_iter()
        .map(|&(outer, inner)| {
            let row = (0..na)
                .map(|k| {
                    let lateral = oriented_delay(&profile(inner, k), &profile(outer, k), geom.prf, cfg);
                    let axial = (cfg.axial_halfspan > 0).then(|| {
                        let lo = k.saturating_sub(cfg.axial_halfspan);
                        let hi = (k + cfg.axial_halfspan).min(na - 1);
                        let delay = oriented_delay(&profile(outer, lo), &profile(outer, hi), geom.prf, cfg);
                        (delay, (hi - lo) as f64 * dz)
                    });
                    pixel_speed(lateral, distance, axial, cfg)
                })
                .collect();
            (outer, row)
        })
        .collect();
    let mut speed = Array2::from_elem((nl, na), f64::NAN);
    let mut peak_corr = Array2::zeros((nl, na));
    let mut valid = Array2::from_elem((nl, na), false);
    for (outer, row) in results {
        for (k, px) in row.into_iter().enumerate() {
            peak_corr[[outer, k]] = px.quality;
            if px.valid {
                speed[[outer, k]] = px.speed;
                valid[[outer, k]] = true;
            }
        }
    }
    Ok(SwsMap {
        speed,
        peak_corr,
        valid,
    })
}

struct PixelEstimate {
    speed: f64,
    quality: f64,
    valid: bool,
}

/// Delay of `g` relative to `f`, or `None` when the correlation is
/// degenerate.
fn oriented_delay(f: &[f64], g: &[f64], prf: f64, cfg: &TofConfig) -> Option<TimeLag> {
    let profile = lateral_xcorr(f, g, cfg.max_lag_frames, cfg.strict_denominator).ok()?;
    let lag = estimate_time_lag(&profile, prf).ok()?;
    (!lag.degenerate).then_some(lag)
}

fn pixel_speed(
    lateral: Option<TimeLag>,
    distance: f64,
    axial: Option<(Option<TimeLag>, f64)>,
    cfg: &TofConfig,
) -> PixelEstimate {
    let invalid = |quality| PixelEstimate {
        speed: f64::NAN,
        quality,
        valid: false,
    };
    let Some(lat) = lateral else {
        return invalid(0.0);
    };
    if !(lat.dt > 1e-12) || lat.quality < cfg.min_peak_corr {
        return invalid(lat.quality);
    }
    let sx = lat.dt / distance;
    let sz = match axial {
        None => 0.0,
        Some((None, _)) => return invalid(lat.quality),
        Some((Some(ax), span)) => {
            if ax.quality < cfg.min_peak_corr || span <= 0.0 {
                return invalid(lat.quality);
            }
            ax.dt / span
        }
    };
    let c = 1.0 / sx.hypot(sz);
    let (lo, hi) = cfg.valid_speed_range;
    PixelEstimate {
        speed: c,
        quality: lat.quality,
        valid: c >= lo && c <= hi,
    }
}

/// `E = 3 rho c^2` on valid pixels.
pub fn young_from_sws(map: &SwsMap, density: f64) -> Result<ElasticityMap> {
    if !(density > 0.0 && density.is_finite()) {
        return Err(Error::InvalidParameter(format!("density {density} must be > 0")));
    }
    let mut values = Array2::from_elem(map.dim(), f64::NAN);
    for ((idx, v), &ok) in values.indexed_iter_mut().zip(map.valid.iter()) {
        if ok {
            let c = map.speed[idx];
            *v = 3.0 * density * c * c;
        }
    }
    ElasticityMap::new(values, map.valid.clone())
}

fn median_of(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (lower, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let below = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (below + upper) / 2.0
    }
}

/// Median over the valid pixels of each `k x k` neighbourhood (clipped at
/// the edges). Fewer than `k^2 / 4` valid neighbours leaves the pixel
/// invalid. Even counts take the mean of the two middle values.
pub fn median_filter(map: &ElasticityMap, k: usize) -> Result<ElasticityMap> {
    if k % 2 == 0 {
        return Err(Error::InvalidParameter(format!("median window {k} must be odd")));
    }
    let (nl, na) = map.dim();
    let h = k / 2;
    let rows: Vec<Vec<(f64, bool)>> = (0..nl)
        .into_par_iter()
        .map(|l| {
            let mut buf = Vec::with_capacity(k * k);
            (0..na)
                .map(|a| {
                    buf.clear();
                    for ll in l.saturating_sub(h)..(l + h + 1).min(nl) {
                        for aa in a.saturating_sub(h)..(a + h + 1).min(na) {
                            if map.valid[[ll, aa]] {
                                buf.push(map.values[[ll, aa]]);
                            }
                        }
                    }
                    if buf.is_empty() || buf.len() * 4 < k * k {
                        (f64::NAN, false)
                    } else {
                        (median_of(&mut buf), true)
                    }
                })
                .collect()
        })
        .collect();
    let mut values = Array2::from_elem((nl, na), f64::NAN);
    let mut valid = Array2::from_elem((nl, na), false);
    for (l, row) in rows.into_iter().enumerate() {
        for (a, (v, ok)) in row.into_iter().enumerate() {
            values[[l, a]] = v;
            valid[[l, a]] = ok;
        }
    }
    ElasticityMap::new(values, valid)
}

/// True on lines within `halfwidth` of the push line, for every depth.
pub fn focal_exclusion_mask(geom: &ScanGeometry, halfwidth: f64) -> Array2<bool> {
    let tol = 1e-9 * geom.lateral_pitch;
    Array2::from_shape_fn(geom.frame_dims(), |(l, _)| {
        geom.lateral_offset(l).abs() <= halfwidth + tol
    })
}

/// Mask for the configured half-width.
pub fn focal_exclusion(geom: &ScanGeometry, cfg: &TofConfig) -> Array2<bool> {
    focal_exclusion_mask(geom, cfg.focal_exclusion_halfwidth)
}
