//! RF speckle rendering from displaced point scatterers.
//!
//! Each scatterer contributes a separable Gaussian point-spread function:
//! a Gaussian beam profile across lateral lines times a Gaussian-windowed
//! cosine pulse in fast time, centered on the round-trip delay of its
//! (displaced) depth.

use std::f64::consts::PI;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::{DisplacementStack, FrameStack, PhantomSpec, ScanGeometry};
use crate::error::{Error, Result};
use crate::interp::bilinear_clamped;

/// 2D scatterer density (1/m^2): 1500 per cm^2.
pub const DEFAULT_SCATTERER_DENSITY: f64 = 1.5e7;

/// Lateral PSF support in beam sigmas.
const LATERAL_SUPPORT: f64 = 4.0;
/// Axial pulse support in temporal sigmas.
const PULSE_SUPPORT: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ScattererCloud {
    /// `(depth, lateral)` in the phantom frame (m).
    pub positions: Vec<(f64, f64)>,
    pub amplitudes: Vec<f64>,
    pub seed: u64,
}

impl ScattererCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseSpec {
    pub center_freq: f64,
    pub fractional_bandwidth: f64,
    /// Gaussian beam width across lateral lines (m).
    pub lateral_sigma: f64,
}

impl Default for PulseSpec {
    fn default() -> Self {
        Self {
            center_freq: 7e6,
            fractional_bandwidth: 0.6,
            lateral_sigma: 0.3e-3,
        }
    }
}

impl PulseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.center_freq > 0.0) {
            return Err(Error::InvalidParameter("pulse center frequency must be > 0".into()));
        }
        if !(self.fractional_bandwidth > 0.0 && self.fractional_bandwidth < 2.0) {
            return Err(Error::InvalidParameter(format!(
                "fractional bandwidth {} outside (0, 2)",
                self.fractional_bandwidth
            )));
        }
        if !(self.lateral_sigma > 0.0) {
            return Err(Error::InvalidParameter("beam width must be > 0".into()));
        }
        Ok(())
    }

    /// Temporal sigma of the pulse envelope, from the -6 dB bandwidth.
    pub fn temporal_sigma(&self) -> f64 {
        1.0 / (2.0 * PI * self.center_freq * self.fractional_bandwidth / 2.355)
    }
}

pub fn seed_scatterers(spec: &PhantomSpec, density_2d: f64, seed: u64) -> Result<ScattererCloud> {
    if !(density_2d > 0.0 && density_2d.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "scatterer density {density_2d} must be > 0"
        )));
    }
    let area = spec.extent_axial * spec.extent_lateral;
    if !(area > 0.0) {
        return Err(Error::Degenerate("phantom has zero area".into()));
    }
    let count = (density_2d * area).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = Vec::with_capacity(count);
    let mut amplitudes = Vec::with_capacity(count);
    for _ in 0..count {
        let z = rng.gen::<f64>() * spec.extent_axial;
        let x = rng.gen::<f64>() * spec.extent_lateral;
        positions.push((z, x));
        amplitudes.push(rng.sample::<f64, _>(StandardNormal));
    }
    Ok(ScattererCloud {
        positions,
        amplitudes,
        seed,
    })
}

/// Axial displacement of one frame (`[lateral][axial]` on the scan grid)
/// interpolated at phantom-frame positions. Points outside the scan grid
/// take the value of the nearest edge node.
pub fn sample_displacement(
    frame: ArrayView2<'_, f64>,
    geom: &ScanGeometry,
    lateral_center: f64,
    positions: &[(f64, f64)],
) -> Vec<f64> {
    let dz = geom.axial_spacing();
    positions
        .iter()
        .map(|&(z, x)| {
            let l = (x - lateral_center) / geom.lateral_pitch + geom.push_lateral_index as f64;
            bilinear_clamped(frame, l, z / dz)
        })
        .collect()
}

/// Renders one RF frame `[lateral][axial]` with every scatterer moved
/// axially by its entry in `displacement`.
pub fn render_rf_frame(
    cloud: &ScattererCloud,
    displacement: &[f64],
    pulse: &PulseSpec,
    geom: &ScanGeometry,
    lateral_center: f64,
) -> Result<Array2<f64>> {
    if displacement.len() != cloud.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} displacements for {} scatterers",
            displacement.len(),
            cloud.len()
        )));
    }
    pulse.validate()?;
    let order = lateral_order(cloud);
    let mut frame = Array2::zeros(geom.frame_dims());
    frame
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(l, mut line)| {
            let line = line.as_slice_mut().expect("contiguous line");
            render_line(cloud, &order, displacement, pulse, geom, lateral_center, l, line);
        });
    Ok(frame)
}

/// Scatterer indices sorted by lateral position (ties by index).
fn lateral_order(cloud: &ScattererCloud) -> Vec<usize> {
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    order.sort_by(|&a, &b| {
        cloud.positions[a]
            .1
            .total_cmp(&cloud.positions[b].1)
            .then(a.cmp(&b))
    });
    order
}

#[allow(clippy::too_many_arguments)]
fn render_line(
    cloud: &ScattererCloud,
    order: &[usize],
    displacement: &[f64],
    pulse: &PulseSpec,
    geom: &ScanGeometry,
    lateral_center: f64,
    l: usize,
    out: &mut [f64],
) {
    let x_line = lateral_center + geom.lateral_offset(l);
    let reach = LATERAL_SUPPORT * pulse.lateral_sigma;
    let start = order.partition_point(|&i| cloud.positions[i].1 < x_line - reach);
    let inv_2sl2 = 1.0 / (2.0 * pulse.lateral_sigma * pulse.lateral_sigma);
    let sigma_t = pulse.temporal_sigma();
    let inv_2st2 = 1.0 / (2.0 * sigma_t * sigma_t);
    let omega = 2.0 * PI * pulse.center_freq;
    let fs = geom.sampling_freq;
    let n = out.len() as i64;
    for &i in &order[start..] {
        let (z, x) = cloud.positions[i];
        if x > x_line + reach {
            break;
        }
        let dx = x - x_line;
        let weight = cloud.amplitudes[i] * (-dx * dx * inv_2sl2).exp();
        let tau0 = 2.0 * (z + displacement[i]) / geom.sound_speed;
        let k_lo = (((tau0 - PULSE_SUPPORT * sigma_t) * fs).ceil() as i64).max(0);
        let k_hi = (((tau0 + PULSE_SUPPORT * sigma_t) * fs).floor() as i64).min(n - 1);
        for k in k_lo..=k_hi {
            let dtau = k as f64 / fs - tau0;
            out[k as usize] += weight * (-dtau * dtau * inv_2st2).exp() * (omega * dtau).cos();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RfConfig {
    pub pulse: PulseSpec,
    pub density_2d: f64,
    pub seed: u64,
}

impl Default for RfConfig {
    fn default() -> Self {
        Self {
            pulse: PulseSpec::default(),
            density_2d: DEFAULT_SCATTERER_DENSITY,
            seed: 0,
        }
    }
}

/// Renders the full sequence: frame 0 from the undisplaced cloud, frame `k`
/// from the cloud displaced by `truth` frame `k`.
pub fn simulate_rf_sequence(
    spec: &PhantomSpec,
    truth: &DisplacementStack,
    cfg: &RfConfig,
    lateral_center: f64,
) -> Result<FrameStack> {
    let geom = truth.geometry;
    geom.validate()?;
    let cloud = seed_scatterers(spec, cfg.density_2d, cfg.seed)?;
    let mut data = Array3::zeros(geom.stack_dims());
    for t in 0..geom.n_frames {
        let disp = if t == 0 {
            vec![0.0; cloud.len()]
        } else {
            sample_displacement(truth.frame(t), &geom, lateral_center, &cloud.positions)
        };
        let frame = render_rf_frame(&cloud, &disp, &cfg.pulse, &geom, lateral_center)?;
        data.index_axis_mut(Axis(0), t).assign(&frame);
    }
    FrameStack::new(geom, data)
}

/// Adds white Gaussian noise of standard deviation `std` to every sample.
pub fn add_noise(stack: &mut FrameStack, std: f64, seed: u64) {
    if std <= 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in stack.data.iter_mut() {
        *v += std * rng.sample::<f64, _>(StandardNormal);
    }
}
