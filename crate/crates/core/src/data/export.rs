use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::ElasticityMap;
use crate::error::{Error, Result};

/// Young's modulus mapped to the brightest 16-bit gray level.
pub const PGM_FULL_SCALE_PA: f64 = 100e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    /// One row per lateral line, invalid cells as `nan`.
    Csv,
    /// Binary 16-bit PGM, depth down, lateral across, linear over
    /// `[0, PGM_FULL_SCALE_PA]`.
    Pgm,
}

pub fn export_elasticity_map(
    map: &ElasticityMap,
    path: impl AsRef<Path>,
    format: ExportFormat,
) -> Result<()> {
    if map.valid_count() == 0 {
        return Err(Error::Degenerate("elasticity map has no valid pixels".into()));
    }
    let path = path.as_ref();
    let bytes = match format {
        ExportFormat::Csv => csv_bytes(map),
        ExportFormat::Pgm => pgm_bytes(map),
    };
    write_all(path, &bytes)
}

/// Validity mask as 0/1 CSV, same layout as the CSV map export.
pub fn export_mask_csv(mask: &ndarray::Array2<bool>, path: impl AsRef<Path>) -> Result<()> {
    let rows: Vec<String> = mask
        .outer_iter()
        .map(|row| {
            row.iter()
                .map(|&v| if v { "1" } else { "0" })
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect();
    write_all(path.as_ref(), rows.join("\n").as_bytes())
}

fn csv_bytes(map: &ElasticityMap) -> Vec<u8> {
    let rows: Vec<String> = map
        .values
        .outer_iter()
        .zip(map.valid.outer_iter())
        .map(|(vals, ok)| {
            vals.iter()
                .zip(ok.iter())
                .map(|(v, &ok)| if ok { format!("{v}") } else { "nan".to_string() })
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect();
    rows.join("\n").into_bytes()
}

pub(crate) fn pgm_level(value: f64) -> u16 {
    let scaled = (value / PGM_FULL_SCALE_PA).clamp(0.0, 1.0) * 65535.0;
    scaled.round() as u16
}

fn pgm_bytes(map: &ElasticityMap) -> Vec<u8> {
    let (n_lat, n_ax) = map.dim();
    let mut out = format!("P5\n{n_lat} {n_ax}\n65535\n").into_bytes();
    out.reserve(2 * n_lat * n_ax);
    for a in 0..n_ax {
        for l in 0..n_lat {
            let level = if map.valid[[l, a]] {
                pgm_level(map.values[[l, a]])
            } else {
                0
            };
            out.extend_from_slice(&level.to_be_bytes());
        }
    }
    out
}

fn write_all(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let map = ElasticityMap::fully_valid(Array2::from_elem((2, 2), 20000.0)).unwrap();
        export_elasticity_map(&map, &p, ExportFormat::Csv).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "20000,20000\n20000,20000");
    }

    #[test]
    fn csv_marks_invalid_as_nan() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let map = ElasticityMap::new(
            array![[1.5, 2.0], [3.0, 4.0]],
            array![[true, false], [true, true]],
        )
        .unwrap();
        export_elasticity_map(&map, &p, ExportFormat::Csv).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "1.5,nan\n3,4");
    }

    #[test]
    fn pgm_scale_and_clamp() {
        assert_eq!(pgm_level(100e3), 65535);
        assert_eq!(pgm_level(250e3), 65535);
        assert_eq!(pgm_level(0.0), 0);
        assert_eq!(pgm_level(-5.0), 0);
        assert_eq!(pgm_level(50e3), 32768);
    }

    #[test]
    fn pgm_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        let map = ElasticityMap::fully_valid(array![[100e3, 0.0, 100e3]]).unwrap();
        export_elasticity_map(&map, &p, ExportFormat::Pgm).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let header = b"P5\n1 3\n65535\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[0xff, 0xff, 0, 0, 0xff, 0xff]);
    }

    #[test]
    fn all_invalid_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let map = ElasticityMap::new(Array2::zeros((2, 2)), Array2::from_elem((2, 2), false)).unwrap();
        let err = export_elasticity_map(&map, dir.path().join("m.csv"), ExportFormat::Csv);
        assert!(matches!(err, Err(Error::Degenerate(_))));
    }

    #[test]
    fn unwritable_destination() {
        let map = ElasticityMap::fully_valid(Array2::from_elem((1, 1), 1.0)).unwrap();
        let err = export_elasticity_map(&map, "/nonexistent-dir/m.csv", ExportFormat::Csv);
        assert!(matches!(err, Err(Error::Io { .. })));
    }
}
