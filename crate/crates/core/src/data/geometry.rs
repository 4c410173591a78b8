use crate::error::{Error, Result};

/// Acquisition geometry of an RF sequence.
///
/// Lateral line `l` sits at `(l - push_lateral_index) * lateral_pitch`
/// relative to the push line; axial sample `k` sits at depth
/// `k * axial_spacing()` below the transducer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanGeometry {
    pub n_axial: usize,
    pub n_lateral: usize,
    pub n_frames: usize,
    /// RF sampling frequency (Hz).
    pub sampling_freq: f64,
    /// Transducer center frequency (Hz).
    pub center_freq: f64,
    /// Longitudinal sound speed used for beamforming (m/s).
    pub sound_speed: f64,
    /// Distance between lateral lines (m).
    pub lateral_pitch: f64,
    /// Frame rate of the tracking sequence (Hz).
    pub prf: f64,
    pub push_lateral_index: usize,
    /// Depth of the push focus (m).
    pub push_depth: f64,
}

impl Default for ScanGeometry {
    fn default() -> Self {
        Self {
            n_axial: 1552,
            n_lateral: 128,
            n_frames: 50,
            sampling_freq: 40e6,
            center_freq: 7e6,
            sound_speed: 1540.0,
            lateral_pitch: 2.0e-4,
            prf: 1.0e4,
            push_lateral_index: 64,
            push_depth: 1.9e-2,
        }
    }
}

impl ScanGeometry {
    /// Default physical parameters with the given dimensions; the push line
    /// is placed at `n_lateral / 2`.
    pub fn with_dims(n_frames: usize, n_lateral: usize, n_axial: usize) -> Self {
        Self {
            n_axial,
            n_lateral,
            n_frames,
            push_lateral_index: n_lateral / 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_axial == 0 || self.n_lateral == 0 || self.n_frames == 0 {
            return Err(Error::InvalidParameter(format!(
                "scan dimensions must be >= 1, got {}x{}x{}",
                self.n_frames, self.n_lateral, self.n_axial
            )));
        }
        for (name, v) in [
            ("sampling_freq", self.sampling_freq),
            ("center_freq", self.center_freq),
            ("sound_speed", self.sound_speed),
            ("lateral_pitch", self.lateral_pitch),
            ("prf", self.prf),
            ("push_depth", self.push_depth),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.push_lateral_index >= self.n_lateral {
            return Err(Error::InvalidParameter(format!(
                "push_lateral_index {} outside {} lateral lines",
                self.push_lateral_index, self.n_lateral
            )));
        }
        Ok(())
    }

    /// Axial distance between RF samples, c / (2 fs).
    pub fn axial_spacing(&self) -> f64 {
        self.sound_speed / (2.0 * self.sampling_freq)
    }

    /// Lateral offset of line `l` from the push line (m).
    pub fn lateral_offset(&self, l: usize) -> f64 {
        (l as f64 - self.push_lateral_index as f64) * self.lateral_pitch
    }

    pub fn depth(&self, k: usize) -> f64 {
        k as f64 * self.axial_spacing()
    }

    pub fn frame_interval(&self) -> f64 {
        1.0 / self.prf
    }

    pub fn frame_dims(&self) -> (usize, usize) {
        (self.n_lateral, self.n_axial)
    }

    pub fn stack_dims(&self) -> (usize, usize, usize) {
        (self.n_frames, self.n_lateral, self.n_axial)
    }
}
