use crate::error::{Error, Result};

/// Location of a correlation maximum within a sampled profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakEstimate {
    /// Fractional position in profile index units.
    pub position: f64,
    pub peak_index: usize,
    pub peak_value: f64,
    /// False when the maximum sits on the profile boundary and no parabolic
    /// refinement was possible.
    pub refined: bool,
}

/// Integer argmax of `profile` refined by the vertex of the parabola through
/// the maximum and its two neighbours. The sub-sample offset is clamped to
/// [-0.5, 0.5]: anything further belongs to the neighbouring sample.
pub fn subsample_peak(profile: &[f64]) -> Result<PeakEstimate> {
    let (peak_index, &peak_value) = profile
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, &f64)>, (i, v)| match best {
            Some((_, b)) if *v <= *b => best,
            _ => Some((i, v)),
        })
        .ok_or_else(|| Error::InvalidParameter("empty correlation profile".into()))?;
    if peak_index == 0 || peak_index + 1 == profile.len() {
        return Ok(PeakEstimate {
            position: peak_index as f64,
            peak_index,
            peak_value,
            refined: false,
        });
    }
    let (a, b, c) = (profile[peak_index - 1], peak_value, profile[peak_index + 1]);
    let curvature = a - 2.0 * b + c;
    let delta = if curvature < 0.0 {
        ((a - c) / (2.0 * curvature)).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    Ok(PeakEstimate {
        position: peak_index as f64 + delta,
        peak_index,
        peak_value,
        refined: true,
    })
}
