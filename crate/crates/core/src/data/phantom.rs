//! Phantom descriptions and their `key = value` text format.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Spherical inclusion; only its section through the imaging plane (a disk
/// centered in the plane) is modelled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inclusion {
    pub center_axial: f64,
    pub center_lateral: f64,
    pub radius: f64,
    pub youngs: f64,
}

impl Inclusion {
    pub fn contains(&self, z: f64, x: f64) -> bool {
        let dz = z - self.center_axial;
        let dx = x - self.center_lateral;
        dz * dz + dx * dx <= self.radius * self.radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomSpec {
    pub extent_axial: f64,
    pub extent_lateral: f64,
    pub background_youngs: f64,
    pub inclusion: Option<Inclusion>,
    pub poissons_ratio: f64,
    pub density: f64,
    /// Bulk attenuation (Np/m).
    pub attenuation: f64,
}

impl PhantomSpec {
    pub const BACKGROUND_YOUNGS_RANGE: (f64, f64) = (15e3, 30e3);
    pub const INCLUSION_RADIUS_RANGE: (f64, f64) = (1.5e-3, 5e-3);
    pub const STIFFNESS_RATIO_RANGE: (f64, f64) = (1.5, 4.0);

    pub fn homogeneous(background_youngs: f64) -> Self {
        Self {
            extent_axial: 0.035,
            extent_lateral: 0.025,
            background_youngs,
            inclusion: None,
            poissons_ratio: 0.495,
            density: 1000.0,
            attenuation: 0.45,
        }
    }

    pub fn with_inclusion(mut self, inclusion: Inclusion) -> Self {
        self.inclusion = Some(inclusion);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::OutOfRange(format!("{name} must be positive, got {v}")))
            }
        };
        positive("extent_axial", self.extent_axial)?;
        positive("extent_lateral", self.extent_lateral)?;
        positive("density", self.density)?;
        let (lo, hi) = Self::BACKGROUND_YOUNGS_RANGE;
        if !(lo..=hi).contains(&self.background_youngs) {
            return Err(Error::OutOfRange(format!(
                "background_youngs = {} Pa outside [{lo}, {hi}]",
                self.background_youngs
            )));
        }
        if !(self.poissons_ratio > 0.0 && self.poissons_ratio < 0.5) {
            return Err(Error::OutOfRange(format!(
                "poissons_ratio = {} outside (0, 0.5)",
                self.poissons_ratio
            )));
        }
        if !(self.attenuation.is_finite() && self.attenuation >= 0.0) {
            return Err(Error::OutOfRange(format!(
                "attenuation = {} must be >= 0",
                self.attenuation
            )));
        }
        if let Some(inc) = &self.inclusion {
            let (rlo, rhi) = Self::INCLUSION_RADIUS_RANGE;
            if !(rlo..=rhi).contains(&inc.radius) {
                return Err(Error::OutOfRange(format!(
                    "inclusion_radius = {} m outside [{rlo}, {rhi}]",
                    inc.radius
                )));
            }
            let ratio = inc.youngs / self.background_youngs;
            let (qlo, qhi) = Self::STIFFNESS_RATIO_RANGE;
            if !(qlo..=qhi).contains(&ratio) {
                return Err(Error::OutOfRange(format!(
                    "inclusion stiffness ratio {ratio:.3} outside [{qlo}, {qhi}]"
                )));
            }
        }
        Ok(())
    }

    /// Young's modulus at depth `z`, lateral position `x` (phantom frame).
    pub fn youngs_at(&self, z: f64, x: f64) -> f64 {
        match &self.inclusion {
            Some(inc) if inc.contains(z, x) => inc.youngs,
            _ => self.background_youngs,
        }
    }

    pub fn shear_modulus(&self, youngs: f64) -> f64 {
        youngs / (2.0 * (1.0 + self.poissons_ratio))
    }

    /// Canonical text form; parsing it yields the same spec.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "extent_axial = {}", self.extent_axial);
        let _ = writeln!(s, "extent_lateral = {}", self.extent_lateral);
        let _ = writeln!(s, "background_youngs = {}", self.background_youngs);
        let _ = writeln!(s, "poissons_ratio = {}", self.poissons_ratio);
        let _ = writeln!(s, "density = {}", self.density);
        let _ = writeln!(s, "attenuation = {}", self.attenuation);
        if let Some(inc) = &self.inclusion {
            let _ = writeln!(s, "inclusion_center_axial = {}", inc.center_axial);
            let _ = writeln!(s, "inclusion_center_lateral = {}", inc.center_lateral);
            let _ = writeln!(s, "inclusion_radius = {}", inc.radius);
            let _ = writeln!(s, "inclusion_youngs = {}", inc.youngs);
        }
        s
    }
}

const KEYS: [&str; 10] = [
    "extent_axial",
    "extent_lateral",
    "background_youngs",
    "poissons_ratio",
    "density",
    "attenuation",
    "inclusion_center_axial",
    "inclusion_center_lateral",
    "inclusion_radius",
    "inclusion_youngs",
];

pub fn load_phantom_spec(path: impl AsRef<Path>) -> Result<PhantomSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_phantom_spec(&text, path)
}

/// Parses the phantom text format. `origin` is only used in error messages.
pub fn parse_phantom_spec(text: &str, origin: &Path) -> Result<PhantomSpec> {
    let err = |line: usize, message: String| Error::Parse {
        path: PathBuf::from(origin),
        line,
        message,
    };
    let mut values: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(line_no, format!("expected `key = value`, got `{line}`")))?;
        let key = key.trim();
        let key = KEYS
            .iter()
            .copied()
            .find(|k| *k == key)
            .ok_or_else(|| err(line_no, format!("unknown key `{key}`")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| err(line_no, format!("`{}` is not a number", value.trim())))?;
        if !value.is_finite() {
            return Err(err(line_no, format!("{key} must be finite")));
        }
        if values.insert(key, (value, line_no)).is_some() {
            return Err(err(line_no, format!("duplicate key `{key}`")));
        }
    }

    let get = |k: &str| values.get(k).map(|&(v, _)| v);
    let last_line = text.lines().count().max(1);
    let background_youngs = get("background_youngs")
        .ok_or_else(|| err(last_line, "missing mandatory key `background_youngs`".into()))?;

    let inc_keys = [
        "inclusion_center_axial",
        "inclusion_center_lateral",
        "inclusion_radius",
        "inclusion_youngs",
    ];
    let present: Vec<_> = inc_keys.iter().filter(|k| values.contains_key(**k)).collect();
    let inclusion = match present.len() {
        0 => None,
        4 => Some(Inclusion {
            center_axial: get("inclusion_center_axial").unwrap(),
            center_lateral: get("inclusion_center_lateral").unwrap(),
            radius: get("inclusion_radius").unwrap(),
            youngs: get("inclusion_youngs").unwrap(),
        }),
        _ => {
            let line = values[*present[0]].1;
            return Err(err(
                line,
                "inclusion_* keys must be given all together or not at all".into(),
            ));
        }
    };

    let defaults = PhantomSpec::homogeneous(background_youngs);
    let spec = PhantomSpec {
        extent_axial: get("extent_axial").unwrap_or(defaults.extent_axial),
        extent_lateral: get("extent_lateral").unwrap_or(defaults.extent_lateral),
        background_youngs,
        inclusion,
        poissons_ratio: get("poissons_ratio").unwrap_or(defaults.poissons_ratio),
        density: get("density").unwrap_or(defaults.density),
        attenuation: get("attenuation").unwrap_or(defaults.attenuation),
    };
    spec.validate().map_err(|e| {
        // locate range errors on the offending key when possible
        let msg = e.to_string();
        let line = KEYS
            .iter()
            .find(|k| msg.contains(*k))
            .and_then(|k| values.get(k).map(|&(_, l)| l))
            .or_else(|| {
                msg.contains("stiffness ratio")
                    .then(|| values.get("inclusion_youngs").map(|&(_, l)| l))
                    .flatten()
            })
            .unwrap_or(last_line);
        err(line, msg)
    })?;
    Ok(spec)
}
