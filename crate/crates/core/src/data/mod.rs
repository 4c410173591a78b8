//! Shared containers: scan geometry, RF and displacement stacks, phantom
//! descriptions and elasticity maps, plus their on-disk formats.

mod export;
mod geometry;
mod phantom;
mod stack;

pub use export::{export_elasticity_map, export_mask_csv, ExportFormat, PGM_FULL_SCALE_PA};
pub use geometry::ScanGeometry;
pub use phantom::{load_phantom_spec, parse_phantom_spec, Inclusion, PhantomSpec};
pub use stack::{
    read_stack, write_stack, DisplacementStack, FrameStack, StackHeader, STACK_HEADER_LEN,
    STACK_MAGIC, STACK_VERSION,
};

use ndarray::Array2;

use crate::error::{Error, Result};

/// Per-pixel Young's modulus in Pa, indexed `[lateral][axial]`, with a
/// validity mask of the same shape. Invalid pixels never enter statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ElasticityMap {
    pub values: Array2<f64>,
    pub valid: Array2<bool>,
}

impl ElasticityMap {
    pub fn new(values: Array2<f64>, valid: Array2<bool>) -> Result<Self> {
        if values.dim() != valid.dim() {
            return Err(Error::DimensionMismatch(format!(
                "values {:?} vs mask {:?}",
                values.dim(),
                valid.dim()
            )));
        }
        if values
            .iter()
            .zip(valid.iter())
            .any(|(v, &ok)| ok && !v.is_finite())
        {
            return Err(Error::InvalidParameter(
                "elasticity map has non-finite values on valid pixels".into(),
            ));
        }
        Ok(Self { values, valid })
    }

    /// A map where every pixel is valid.
    pub fn fully_valid(values: Array2<f64>) -> Result<Self> {
        let valid = Array2::from_elem(values.dim(), true);
        Self::new(values, valid)
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Packs the map into a two-frame stack: frame 0 holds values (zero on
    /// invalid pixels), frame 1 the mask as 0/1.
    pub fn to_stack_array(&self) -> ndarray::Array3<f64> {
        let (nl, na) = self.dim();
        let mut out = ndarray::Array3::zeros((2, nl, na));
        for ((l, a), &v) in self.values.indexed_iter() {
            let ok = self.valid[[l, a]];
            out[[0, l, a]] = if ok { v } else { 0.0 };
            out[[1, l, a]] = if ok { 1.0 } else { 0.0 };
        }
        out
    }

    pub fn from_stack_array(data: &ndarray::Array3<f64>) -> Result<Self> {
        let (nf, nl, na) = data.dim();
        if nf != 2 {
            return Err(Error::Format(format!(
                "elasticity map stack must have 2 frames, found {nf}"
            )));
        }
        let values = data.index_axis(ndarray::Axis(0), 0).to_owned();
        let mut valid = Array2::from_elem((nl, na), false);
        for ((l, a), m) in data.index_axis(ndarray::Axis(0), 1).indexed_iter() {
            valid[[l, a]] = *m != 0.0;
        }
        Self::new(values, valid)
    }
}
