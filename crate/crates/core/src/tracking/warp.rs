use ndarray::{Array2, ArrayView2, Zip};

use crate::data::ScanGeometry;
use crate::error::{Error, Result};
use crate::interp::Lerp;

/// Pixel spacing of a tracking grid in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpacing {
    pub axial: f64,
    pub lateral: f64,
}

impl GridSpacing {
    pub fn of(geom: &ScanGeometry) -> Self {
        Self {
            axial: geom.axial_spacing(),
            lateral: geom.lateral_pitch,
        }
    }

    /// Spacing after `level` factor-2 downsamplings.
    pub fn coarsened(&self, level: usize) -> Self {
        let f = (1u64 << level) as f64;
        Self {
            axial: self.axial * f,
            lateral: self.lateral * f,
        }
    }
}

/// Dense displacement field on a frame grid `[lateral][axial]`, in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Ddf {
    pub axial: Array2<f64>,
    pub lateral: Array2<f64>,
}

impl Ddf {
    pub fn zeros(dim: (usize, usize)) -> Self {
        Self {
            axial: Array2::zeros(dim),
            lateral: Array2::zeros(dim),
        }
    }

    pub fn axial_only(axial: Array2<f64>) -> Self {
        let lateral = Array2::zeros(axial.dim());
        Self { axial, lateral }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.axial.dim()
    }
}

/// Warped image and its derivatives with respect to the displacement
/// components at each pixel (per meter).
#[derive(Debug, Clone)]
pub struct WarpResult {
    pub image: Array2<f64>,
    pub d_axial: Array2<f64>,
    pub d_lateral: Array2<f64>,
}

fn check_dims(moving: &ArrayView2<'_, f64>, ddf: &Ddf) -> Result<()> {
    if moving.dim() != ddf.dim() || ddf.lateral.dim() != ddf.dim() {
        return Err(Error::DimensionMismatch(format!(
            "image {:?} vs displacement field {:?}/{:?}",
            moving.dim(),
            ddf.axial.dim(),
            ddf.lateral.dim()
        )));
    }
    Ok(())
}

/// Resample `moving` at each pixel displaced by `ddf`, bilinear with edge
/// clamping: `out[l, k] = moving(l + u_lat / pitch, k + u_ax / dz)`.
pub fn warp_image(moving: ArrayView2<'_, f64>, ddf: &Ddf, spacing: GridSpacing) -> Result<Array2<f64>> {
    Ok(warp_with_derivatives(moving, ddf, spacing)?.image)
}

/// `warp_image` plus the exact derivative of the bilinear interpolant.
/// At a node the forward difference is used.
pub fn warp_with_derivatives(
    moving: ArrayView2<'_, f64>,
    ddf: &Ddf,
    spacing: GridSpacing,
) -> Result<WarpResult> {
    check_dims(&moving, ddf)?;
    let (nl, na) = moving.dim();
    let mut image = Array2::zeros((nl, na));
    let mut d_axial = Array2::zeros((nl, na));
    let mut d_lateral = Array2::zeros((nl, na));
    Zip::indexed(&mut image)
        .and(&mut d_axial)
        .and(&mut d_lateral)
        .and(&ddf.axial)
        .and(&ddf.lateral)
        .for_each(|(l, k), out, dax, dlat, &ua, &ul| {
            let r = Lerp::new(l as f64 + ul / spacing.lateral, nl);
            let c = Lerp::new(k as f64 + ua / spacing.axial, na);
            let m00 = moving[[r.i0, c.i0]];
            let m01 = moving[[r.i0, c.i1]];
            let m10 = moving[[r.i1, c.i0]];
            let m11 = moving[[r.i1, c.i1]];
            let top = m00 * (1.0 - c.frac) + m01 * c.frac;
            let bot = m10 * (1.0 - c.frac) + m11 * c.frac;
            *out = top * (1.0 - r.frac) + bot * r.frac;
            if c.slope_active {
                let s = (m01 - m00) * (1.0 - r.frac) + (m11 - m10) * r.frac;
                *dax = s / spacing.axial;
            }
            if r.slope_active {
                *dlat = (bot - top) / spacing.lateral;
            }
        });
    Ok(WarpResult {
        image,
        d_axial,
        d_lateral,
    })
}
