//! Region statistics and map quality scores (SNR, CNR, MAE).
//!
//! Regions are given in phantom coordinates (depth, lateral position in m)
//! and rasterized on the scan grid; pixel `(l, k)` sits at depth
//! `geom.depth(k)` and lateral position `lateral_center + geom.lateral_offset(l)`.
//! Invalid and excluded pixels never enter a statistic.

use ndarray::{Array2, Zip};

use crate::data::{ElasticityMap, PhantomSpec, ScanGeometry};
use crate::error::{Error, Result};

/// Erosion applied to the inclusion disk for the default inclusion region.
pub const DEFAULT_INCLUSION_EROSION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoiRole {
    Background,
    Inclusion,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RoiShape {
    Rect {
        axial: (f64, f64),
        lateral: (f64, f64),
    },
    Disk {
        center_axial: f64,
        center_lateral: f64,
        radius: f64,
    },
    /// Every pixel of the map.
    Whole,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Roi {
    pub shape: RoiShape,
    pub role: RoiRole,
}

impl Roi {
    pub fn global() -> Self {
        Self {
            shape: RoiShape::Whole,
            role: RoiRole::Global,
        }
    }

    pub fn contains(&self, z: f64, x: f64) -> bool {
        match self.shape {
            RoiShape::Rect { axial, lateral } => {
                z >= axial.0 && z <= axial.1 && x >= lateral.0 && x <= lateral.1
            }
            RoiShape::Disk {
                center_axial,
                center_lateral,
                radius,
            } => {
                let (dz, dx) = (z - center_axial, x - center_lateral);
                dz * dz + dx * dx <= radius * radius
            }
            RoiShape::Whole => true,
        }
    }

    pub fn mask(&self, geom: &ScanGeometry, lateral_center: f64) -> Array2<bool> {
        Array2::from_shape_fn(geom.frame_dims(), |(l, k)| {
            self.contains(geom.depth(k), lateral_center + geom.lateral_offset(l))
        })
    }
}

/// Default (background, inclusion) regions: the inclusion disk eroded by
/// `erosion`, and the same disk mirrored about the push line. `None` for a
/// homogeneous phantom.
pub fn default_rois(spec: &PhantomSpec, lateral_center: f64, erosion: f64) -> Result<Option<(Roi, Roi)>> {
    let Some(inc) = spec.inclusion else {
        return Ok(None);
    };
    let radius = inc.radius - erosion;
    if !(radius > 0.0) {
        return Err(Error::EmptyRegion(format!(
            "erosion {erosion} m removes the whole inclusion (radius {} m)",
            inc.radius
        )));
    }
    let inclusion = Roi {
        shape: RoiShape::Disk {
            center_axial: inc.center_axial,
            center_lateral: inc.center_lateral,
            radius,
        },
        role: RoiRole::Inclusion,
    };
    let background = Roi {
        shape: RoiShape::Disk {
            center_axial: inc.center_axial,
            center_lateral: 2.0 * lateral_center - inc.center_lateral,
            radius,
        },
        role: RoiRole::Background,
    };
    Ok(Some((background, inclusion)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub count: usize,
}

fn check_dims(what: &str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!("{what}: {a:?} vs {b:?}")))
    }
}

/// Pixels inside `region`, valid in `map` and not excluded.
pub fn qualifying(map: &ElasticityMap, region: &Array2<bool>, exclusion: &Array2<bool>) -> Result<Array2<bool>> {
    check_dims("region", map.dim(), region.dim())?;
    check_dims("exclusion", map.dim(), exclusion.dim())?;
    Ok(Zip::from(&map.valid)
        .and(region)
        .and(exclusion)
        .map_collect(|&v, &r, &e| v && r && !e))
}

pub fn roi_stats(map: &ElasticityMap, region: &Array2<bool>, exclusion: &Array2<bool>) -> Result<RoiStats> {
    let keep = qualifying(map, region, exclusion)?;
    let values: Vec<f64> = map
        .values
        .iter()
        .zip(keep.iter())
        .filter_map(|(&v, &k)| k.then_some(v))
        .collect();
    if values.is_empty() {
        return Err(Error::EmptyRegion("no valid pixels in region".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(RoiStats {
        mean,
        std: var.sqrt(),
        count: values.len(),
    })
}

pub fn snr(stats: &RoiStats) -> Result<f64> {
    if stats.std > 0.0 {
        Ok(stats.mean / stats.std)
    } else {
        Err(Error::Undefined("SNR with zero standard deviation".into()))
    }
}

pub fn cnr(background: &RoiStats, inclusion: &RoiStats) -> Result<f64> {
    let spread = background.std.powi(2) + inclusion.std.powi(2);
    if !(spread > 0.0) {
        return Err(Error::Undefined("CNR with zero standard deviations".into()));
    }
    Ok((2.0 * (background.mean - inclusion.mean).powi(2) / spread).sqrt())
}

/// Mean |pred - truth| over pixels valid in both maps, inside `region` and
/// not excluded. Returns the value and the pixel count.
pub fn mae(
    pred: &ElasticityMap,
    truth: &ElasticityMap,
    region: &Array2<bool>,
    exclusion: &Array2<bool>,
) -> Result<(f64, usize)> {
    check_dims("prediction vs truth", pred.dim(), truth.dim())?;
    let keep = qualifying(pred, region, exclusion)?;
    let mut sum = 0.0;
    let mut count = 0;
    Zip::from(&keep)
        .and(&truth.valid)
        .and(&pred.values)
        .and(&truth.values)
        .for_each(|&k, &tv, &p, &t| {
            if k && tv {
                sum += (p - t).abs();
                count += 1;
            }
        });
    if count == 0 {
        return Err(Error::EmptyRegion("no pixels for MAE".into()));
    }
    Ok((sum / count as f64, count))
}

/// Scores of one reconstructed map against its ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub snr: Option<f64>,
    pub cnr: Option<f64>,
    pub mae_background: f64,
    pub mae_inclusion: Option<f64>,
    pub background_count: usize,
    pub inclusion_count: usize,
}

/// SNR and MAE over the background region (the whole map for a homogeneous
/// phantom), CNR and inclusion MAE when `rois` is given. A zero spread
/// leaves SNR/CNR empty rather than failing.
pub fn evaluate(
    pred: &ElasticityMap,
    truth: &ElasticityMap,
    rois: Option<(Roi, Roi)>,
    geom: &ScanGeometry,
    lateral_center: f64,
    exclusion: &Array2<bool>,
) -> Result<Evaluation> {
    check_dims("prediction vs truth", pred.dim(), truth.dim())?;
    check_dims("prediction vs scan grid", pred.dim(), geom.frame_dims())?;
    let background = rois.map_or(Roi::global(), |(b, _)| b).mask(geom, lateral_center);
    let bg = roi_stats(pred, &background, exclusion)?;
    let (mae_background, _) = mae(pred, truth, &background, exclusion)?;
    let mut out = Evaluation {
        snr: snr(&bg).ok(),
        cnr: None,
        mae_background,
        mae_inclusion: None,
        background_count: bg.count,
        inclusion_count: 0,
    };
    if let Some((_, inc_roi)) = rois {
        let region = inc_roi.mask(geom, lateral_center);
        let inc = roi_stats(pred, &region, exclusion)?;
        out.cnr = cnr(&bg, &inc).ok();
        out.mae_inclusion = Some(mae(pred, truth, &region, exclusion)?.0);
        out.inclusion_count = inc.count;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Inclusion;

    fn map(values: &[f64]) -> ElasticityMap {
        ElasticityMap::fully_valid(Array2::from_shape_vec((1, values.len()), values.to_vec()).unwrap()).unwrap()
    }

    fn all(n: usize) -> Array2<bool> {
        Array2::from_elem((1, n), true)
    }

    fn none(n: usize) -> Array2<bool> {
        Array2::from_elem((1, n), false)
    }

    #[test]
    fn stats_by_hand() {
        let s = roi_stats(&map(&[20e3; 5]), &all(5), &none(5)).unwrap();
        assert_eq!((s.mean, s.std, s.count), (20e3, 0.0, 5));
        let s = roi_stats(&map(&[18e3, 22e3]), &all(2), &none(2)).unwrap();
        assert_eq!((s.mean, s.std), (20e3, 2e3));
    }

    #[test]
    fn excluded_region_is_an_error() {
        assert!(roi_stats(&map(&[1.0, 2.0]), &all(2), &all(2)).is_err());
        let mut m = map(&[1.0, 2.0]);
        m.valid.fill(false);
        assert!(roi_stats(&m, &all(2), &none(2)).is_err());
    }

    #[test]
    fn snr_and_cnr_by_hand() {
        let s = |mean, std| RoiStats { mean, std, count: 10 };
        assert_eq!(snr(&s(10.0, 2.0)).unwrap(), 5.0);
        assert!(snr(&s(10.0, 0.0)).is_err());
        assert_eq!(cnr(&s(20.0, 2.0), &s(40.0, 2.0)).unwrap(), 10.0);
        assert_eq!(cnr(&s(20.0, 2.0), &s(20.0, 3.0)).unwrap(), 0.0);
        assert!(cnr(&s(20.0, 0.0), &s(40.0, 0.0)).is_err());
    }

    #[test]
    fn mae_by_hand() {
        let (v, n) = mae(&map(&[10e3, 20e3]), &map(&[12e3, 16e3]), &all(2), &none(2)).unwrap();
        assert_eq!((v, n), (3e3, 2));
        let truth = map(&[5.0, 6.0, 7.0]);
        assert_eq!(mae(&truth, &truth, &all(3), &none(3)).unwrap().0, 0.0);
        assert!(mae(&map(&[1.0]), &map(&[1.0, 2.0]), &all(1), &none(1)).is_err());
    }

    #[test]
    fn default_regions_mirror_about_push() {
        let spec = PhantomSpec::homogeneous(20e3).with_inclusion(Inclusion {
            center_axial: 0.019,
            center_lateral: 0.0175,
            radius: 0.003,
            youngs: 60e3,
        });
        let (bg, inc) = default_rois(&spec, 0.0125, DEFAULT_INCLUSION_EROSION).unwrap().unwrap();
        assert_eq!(
            bg.shape,
            RoiShape::Disk {
                center_axial: 0.019,
                center_lateral: 0.0075,
                radius: 0.002
            }
        );
        assert_eq!(inc.role, RoiRole::Inclusion);
        assert!(default_rois(&spec, 0.0125, 0.003).is_err());
        assert!(default_rois(&PhantomSpec::homogeneous(20e3), 0.0125, 1e-3).unwrap().is_none());
    }
}
