//! Binary stack files.
//!
//! Layout (little-endian): magic `SWF1`, version `u32 = 1`, `n_frames`,
//! `n_lateral`, `n_axial` as `u32`, then `n_frames * n_lateral * n_axial`
//! IEEE-754 `f32` values, frame-major, then lateral, axial fastest.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array3, ArrayView3};

use super::ScanGeometry;
use crate::error::{Error, Result};

pub const STACK_MAGIC: [u8; 4] = *b"SWF1";
pub const STACK_VERSION: u32 = 1;
pub const STACK_HEADER_LEN: u64 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StackHeader {
    pub n_frames: u32,
    pub n_lateral: u32,
    pub n_axial: u32,
}

impl StackHeader {
    pub fn from_dims(dims: (usize, usize, usize)) -> Result<Self> {
        let conv = |name: &str, v: usize| {
            u32::try_from(v).map_err(|_| {
                Error::Format(format!("{name} = {v} does not fit a 32-bit header field"))
            })
        };
        Ok(Self {
            n_frames: conv("n_frames", dims.0)?,
            n_lateral: conv("n_lateral", dims.1)?,
            n_axial: conv("n_axial", dims.2)?,
        })
    }

    pub fn value_count(&self) -> u64 {
        self.n_frames as u64 * self.n_lateral as u64 * self.n_axial as u64
    }

    /// Total file length implied by the header.
    pub fn file_len(&self) -> u64 {
        STACK_HEADER_LEN + 4 * self.value_count()
    }

    fn encode(&self) -> [u8; 20] {
        let mut b = [0u8; 20];
        b[0..4].copy_from_slice(&STACK_MAGIC);
        b[4..8].copy_from_slice(&STACK_VERSION.to_le_bytes());
        b[8..12].copy_from_slice(&self.n_frames.to_le_bytes());
        b[12..16].copy_from_slice(&self.n_lateral.to_le_bytes());
        b[16..20].copy_from_slice(&self.n_axial.to_le_bytes());
        b
    }

    fn decode(b: &[u8; 20]) -> Result<Self> {
        if b[0..4] != STACK_MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected \"SWF1\"",
                String::from_utf8_lossy(&b[0..4])
            )));
        }
        let word = |i: usize| u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]]);
        let version = word(4);
        if version != STACK_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        Ok(Self {
            n_frames: word(8),
            n_lateral: word(12),
            n_axial: word(16),
        })
    }
}

/// Writes `data` as a stack file and returns the number of bytes written.
///
/// Values are stored as `f32`; any value that is not finite after the
/// conversion is rejected.
pub fn write_stack(data: ArrayView3<'_, f64>, path: impl AsRef<Path>) -> Result<u64> {
    let path = path.as_ref();
    let header = StackHeader::from_dims(data.dim())?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&header.encode()).map_err(|e| Error::io(path, e))?;
    for &v in data.iter() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::Format(format!(
                "value {v} is not representable as a finite f32"
            )));
        }
        w.write_all(&f.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(header.file_len())
}

pub fn read_stack(path: impl AsRef<Path>) -> Result<Array3<f64>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let actual = file.metadata().map_err(|e| Error::io(path, e))?.len();
    if actual < STACK_HEADER_LEN {
        return Err(Error::Truncated {
            expected: STACK_HEADER_LEN,
            actual,
        });
    }
    let mut r = BufReader::new(file);
    let mut hb = [0u8; 20];
    r.read_exact(&mut hb).map_err(|e| Error::io(path, e))?;
    let header = StackHeader::decode(&hb)?;
    let expected = header.file_len();
    if expected != actual {
        return Err(Error::Truncated { expected, actual });
    }
    let mut payload = vec![0u8; (expected - STACK_HEADER_LEN) as usize];
    r.read_exact(&mut payload).map_err(|e| Error::io(path, e))?;
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Format(format!("non-finite value at index {i}")));
    }
    let dims = (
        header.n_frames as usize,
        header.n_lateral as usize,
        header.n_axial as usize,
    );
    Array3::from_shape_vec(dims, values).map_err(|e| Error::Format(e.to_string()))
}

fn check_dims(geometry: &ScanGeometry, dims: (usize, usize, usize), what: &str) -> Result<()> {
    if geometry.stack_dims() != dims {
        return Err(Error::DimensionMismatch(format!(
            "{what} has dims {dims:?}, geometry expects {:?}",
            geometry.stack_dims()
        )));
    }
    Ok(())
}

/// RF frames `[frame][lateral][axial]`. Frame 0 is the pre-push reference.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    pub geometry: ScanGeometry,
    pub data: Array3<f64>,
}

impl FrameStack {
    pub fn new(geometry: ScanGeometry, data: Array3<f64>) -> Result<Self> {
        geometry.validate()?;
        check_dims(&geometry, data.dim(), "frame stack")?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("frame stack has non-finite values".into()));
        }
        Ok(Self { geometry, data })
    }

    pub fn frame(&self, t: usize) -> ndarray::ArrayView2<'_, f64> {
        self.data.index_axis(ndarray::Axis(0), t)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<u64> {
        write_stack(self.data.view(), path)
    }

    /// Reads a stack file; counts in `geometry` are replaced by the file's
    /// dimensions (the physical parameters are kept).
    pub fn read(path: impl AsRef<Path>, geometry: ScanGeometry) -> Result<Self> {
        let data = read_stack(path)?;
        let (f, l, a) = data.dim();
        let geometry = ScanGeometry {
            n_frames: f,
            n_lateral: l,
            n_axial: a,
            push_lateral_index: geometry.push_lateral_index.min(l.saturating_sub(1)),
            ..geometry
        };
        Self::new(geometry, data)
    }
}

/// Per-frame displacement fields in meters, `[frame][lateral][axial]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementStack {
    pub geometry: ScanGeometry,
    pub axial: Array3<f64>,
    pub lateral: Option<Array3<f64>>,
}

impl DisplacementStack {
    /// Sanity bound on axial displacement magnitude (m).
    pub const MAX_ABS_AXIAL: f64 = 1e-3;

    pub fn new(
        geometry: ScanGeometry,
        axial: Array3<f64>,
        lateral: Option<Array3<f64>>,
    ) -> Result<Self> {
        geometry.validate()?;
        check_dims(&geometry, axial.dim(), "axial displacement")?;
        if let Some(lat) = &lateral {
            check_dims(&geometry, lat.dim(), "lateral displacement")?;
        }
        if let Some(v) = axial
            .iter()
            .find(|v| !v.is_finite() || v.abs() >= Self::MAX_ABS_AXIAL)
        {
            return Err(Error::OutOfRange(format!(
                "axial displacement {v} violates |u| < 1 mm"
            )));
        }
        Ok(Self {
            geometry,
            axial,
            lateral,
        })
    }

    pub fn zeros(geometry: ScanGeometry) -> Self {
        Self {
            geometry,
            axial: Array3::zeros(geometry.stack_dims()),
            lateral: None,
        }
    }

    pub fn frame(&self, t: usize) -> ndarray::ArrayView2<'_, f64> {
        self.axial.index_axis(ndarray::Axis(0), t)
    }

    /// Writes the axial component; the lateral component, when present, is
    /// only persisted through [`DisplacementStack::write_lateral`].
    pub fn write(&self, path: impl AsRef<Path>) -> Result<u64> {
        write_stack(self.axial.view(), path)
    }

    pub fn write_lateral(&self, path: impl AsRef<Path>) -> Result<Option<u64>> {
        match &self.lateral {
            Some(lat) => write_stack(lat.view(), path).map(Some),
            None => Ok(None),
        }
    }

    pub fn read(path: impl AsRef<Path>, geometry: ScanGeometry) -> Result<Self> {
        let axial = read_stack(path)?;
        let (f, l, a) = axial.dim();
        let geometry = ScanGeometry {
            n_frames: f,
            n_lateral: l,
            n_axial: a,
            push_lateral_index: geometry.push_lateral_index.min(l.saturating_sub(1)),
            ..geometry
        };
        Self::new(geometry, axial, None)
    }
}
