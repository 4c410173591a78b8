//! Run configuration: `key = value` lines with dotted section prefixes,
//! `#` comments. Relative paths resolve against the config file's directory.
//!
//! Every key is listed once in [`RunConfig::visit`]; parsing and the
//! manifest echo both go through it, so an echoed config parses back to the
//! same run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use shearwave::data::{load_phantom_spec, PhantomSpec, ScanGeometry};
use shearwave::elastic::{PushConfig, SimulationConfig};
use shearwave::metrics::{Roi, RoiRole, RoiShape, DEFAULT_INCLUSION_EROSION};
use shearwave::rf::RfConfig;
use shearwave::sws::TofConfig;
use shearwave::tracking::{NccConfig, VariationalConfig};

use crate::error::{CliError, CliResult};

/// Keys with this prefix are manifest metadata and ignored on input.
pub const MANIFEST_PREFIX: &str = "manifest.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TrackerKind {
    Ncc,
    Variational,
}

impl TrackerKind {
    pub fn name(self) -> &'static str {
        match self {
            TrackerKind::Ncc => "ncc",
            TrackerKind::Variational => "variational",
        }
    }
}

impl FromStr for TrackerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ncc" => Ok(TrackerKind::Ncc),
            "variational" => Ok(TrackerKind::Variational),
            other => Err(format!("unknown tracker `{other}` (expected ncc or variational)")),
        }
    }
}

/// A value that can appear on the right of `=`.
trait ConfigValue: Sized {
    fn parse(text: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse(text: &str) -> Result<Self, String> {
                text.parse().map_err(|_| format!("`{text}` is not a valid {}", stringify!($t)))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

plain_value!(usize, u64, bool);

impl ConfigValue for f64 {
    fn parse(text: &str) -> Result<Self, String> {
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(format!("`{text}` is not a finite number")),
        }
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for String {
    fn parse(text: &str) -> Result<Self, String> {
        Ok(text.to_string())
    }
    fn render(&self) -> String {
        self.clone()
    }
}

/// `none` for absent.
impl ConfigValue for Option<f64> {
    fn parse(text: &str) -> Result<Self, String> {
        match text {
            "none" | "auto" => Ok(None),
            _ => f64::parse(text).map(Some),
        }
    }
    fn render(&self) -> String {
        self.map_or_else(|| "none".into(), |v| v.to_string())
    }
}

impl ConfigValue for Vec<TrackerKind> {
    fn parse(text: &str) -> Result<Self, String> {
        let list: Vec<TrackerKind> = text
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<Result<_, _>>()?;
        if list.is_empty() {
            return Err("tracker list is empty".into());
        }
        Ok(list)
    }
    fn render(&self) -> String {
        self.iter().map(|t| t.name()).collect::<Vec<_>>().join(",")
    }
}

/// `auto`, `disk:z,x,r` or `rect:z0,z1,x0,x1` (meters, phantom frame).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RoiSetting {
    Auto,
    Shape(RoiShape),
}

impl ConfigValue for RoiSetting {
    fn parse(text: &str) -> Result<Self, String> {
        if text == "auto" {
            return Ok(RoiSetting::Auto);
        }
        let (kind, rest) = text
            .split_once(':')
            .ok_or_else(|| format!("`{text}`: expected auto, disk:z,x,r or rect:z0,z1,x0,x1"))?;
        let nums: Vec<f64> = rest
            .split(',')
            .map(|s| f64::parse(s.trim()))
            .collect::<Result<_, _>>()?;
        match (kind, nums.as_slice()) {
            ("disk", &[z, x, r]) if r > 0.0 => Ok(RoiSetting::Shape(RoiShape::Disk {
                center_axial: z,
                center_lateral: x,
                radius: r,
            })),
            ("rect", &[z0, z1, x0, x1]) if z0 < z1 && x0 < x1 => Ok(RoiSetting::Shape(RoiShape::Rect {
                axial: (z0, z1),
                lateral: (x0, x1),
            })),
            _ => Err(format!("`{text}`: malformed region")),
        }
    }
    fn render(&self) -> String {
        match self {
            RoiSetting::Auto => "auto".into(),
            RoiSetting::Shape(RoiShape::Disk {
                center_axial,
                center_lateral,
                radius,
            }) => format!("disk:{center_axial},{center_lateral},{radius}"),
            RoiSetting::Shape(RoiShape::Rect { axial, lateral }) => {
                format!("rect:{},{},{},{}", axial.0, axial.1, lateral.0, lateral.1)
            }
            RoiSetting::Shape(RoiShape::Whole) => "auto".into(),
        }
    }
}

trait Visitor {
    fn field<T: ConfigValue>(&mut self, key: &str, value: &mut T) -> CliResult<()>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Config file this run was read from.
    pub source: PathBuf,
    pub phantom_path: PathBuf,
    pub phantom: PhantomSpec,
    pub phantom_id: String,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub geometry: ScanGeometry,
    pub push: PushConfig,
    pub sim: SimulationConfig,
    pub rf: RfConfig,
    pub rf_noise_std: f64,
    pub trackers: Vec<TrackerKind>,
    pub ncc: NccConfig,
    pub variational: VariationalConfig,
    pub tof: TofConfig,
    pub median_size: usize,
    pub roi_erosion: f64,
    pub roi_background: RoiSetting,
    pub roi_inclusion: RoiSetting,
}

impl RunConfig {
    fn defaults(source: PathBuf, phantom_path: PathBuf, phantom: PhantomSpec) -> Self {
        let phantom_id = phantom_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "phantom".into());
        let push = PushConfig::centered(&phantom);
        Self {
            source,
            phantom_path,
            phantom,
            phantom_id,
            out_dir: PathBuf::from("out"),
            seed: 1,
            geometry: ScanGeometry {
                push_depth: push.focal_depth,
                ..ScanGeometry::default()
            },
            push,
            sim: SimulationConfig::default(),
            rf: RfConfig::default(),
            rf_noise_std: 0.0,
            trackers: vec![TrackerKind::Ncc],
            ncc: NccConfig::default(),
            variational: VariationalConfig::default(),
            tof: TofConfig::default(),
            median_size: 9,
            roi_erosion: DEFAULT_INCLUSION_EROSION,
            roi_background: RoiSetting::Auto,
            roi_inclusion: RoiSetting::Auto,
        }
    }

    fn visit<V: Visitor>(&mut self, v: &mut V) -> CliResult<()> {
        v.field("phantom_id", &mut self.phantom_id)?;
        v.field("seed", &mut self.seed)?;
        v.field("trackers", &mut self.trackers)?;

        let g = &mut self.geometry;
        v.field("geometry.n_frames", &mut g.n_frames)?;
        v.field("geometry.n_lateral", &mut g.n_lateral)?;
        v.field("geometry.n_axial", &mut g.n_axial)?;
        v.field("geometry.sampling_freq", &mut g.sampling_freq)?;
        v.field("geometry.center_freq", &mut g.center_freq)?;
        v.field("geometry.sound_speed", &mut g.sound_speed)?;
        v.field("geometry.lateral_pitch", &mut g.lateral_pitch)?;
        v.field("geometry.prf", &mut g.prf)?;
        v.field("geometry.push_lateral_index", &mut g.push_lateral_index)?;

        let p = &mut self.push;
        v.field("push.focal_depth", &mut p.focal_depth)?;
        v.field("push.lateral_center", &mut p.lateral_center)?;
        v.field("push.duration", &mut p.duration)?;
        v.field("push.lateral_sigma", &mut p.lateral_sigma)?;
        v.field("push.axial_sigma", &mut p.axial_sigma)?;
        v.field("push.peak_body_force", &mut p.peak_body_force)?;

        let s = &mut self.sim;
        v.field("sim.h", &mut s.h)?;
        v.field("sim.dt", &mut s.dt)?;
        v.field("sim.cfl_safety", &mut s.cfl_safety)?;
        v.field("sim.target_peak", &mut s.target_peak)?;

        v.field("rf.center_freq", &mut self.rf.pulse.center_freq)?;
        v.field("rf.fractional_bandwidth", &mut self.rf.pulse.fractional_bandwidth)?;
        v.field("rf.beam_sigma", &mut self.rf.pulse.lateral_sigma)?;
        v.field("rf.scatterer_density", &mut self.rf.density_2d)?;
        v.field("rf.noise_std", &mut self.rf_noise_std)?;

        v.field("ncc.window_len", &mut self.ncc.window_len)?;
        v.field("ncc.window_hop", &mut self.ncc.window_hop)?;
        v.field("ncc.max_lag", &mut self.ncc.max_lag)?;

        let t = &mut self.variational;
        v.field("tracker.alpha", &mut t.alpha)?;
        v.field("tracker.window_axial", &mut t.window.axial)?;
        v.field("tracker.window_lateral", &mut t.window.lateral)?;
        v.field("tracker.pyramid_levels", &mut t.pyramid_levels)?;
        v.field("tracker.max_iters", &mut t.max_iters)?;
        v.field("tracker.initial_step", &mut t.initial_step)?;
        v.field("tracker.charbonnier_eps", &mut t.charbonnier_eps)?;
        v.field("tracker.warm_start", &mut t.warm_start)?;
        v.field("tracker.estimate_lateral", &mut t.estimate_lateral)?;
        v.field("tracker.lateral_curvature", &mut t.lateral_curvature)?;
        v.field("tracker.tolerance", &mut t.tolerance)?;
        v.field("tracker.smoothing_sigma", &mut t.smoothing_sigma)?;
        v.field("tracker.min_step", &mut t.min_step)?;
        v.field("tracker.armijo_c1", &mut t.armijo_c1)?;
        v.field("tracker.coarse_envelope_sigma", &mut t.coarse_envelope_sigma)?;

        let f = &mut self.tof;
        v.field("tof.max_lag_frames", &mut f.max_lag_frames)?;
        v.field("tof.axial_average_halfwidth", &mut f.axial_average_halfwidth)?;
        v.field("tof.lane_distance", &mut f.lane_distance)?;
        v.field("tof.min_speed", &mut f.valid_speed_range.0)?;
        v.field("tof.max_speed", &mut f.valid_speed_range.1)?;
        v.field("tof.min_peak_corr", &mut f.min_peak_corr)?;
        v.field("tof.focal_exclusion_halfwidth", &mut f.focal_exclusion_halfwidth)?;
        v.field("tof.strict_denominator", &mut f.strict_denominator)?;
        v.field("tof.axial_halfspan", &mut f.axial_halfspan)?;
        v.field("tof.median_size", &mut self.median_size)?;

        v.field("roi.erosion", &mut self.roi_erosion)?;
        v.field("roi.background", &mut self.roi_background)?;
        v.field("roi.inclusion", &mut self.roi_inclusion)?;
        Ok(())
    }

    /// Reads and validates a config file. `phantom` and `out` paths resolve
    /// against the file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> CliResult<Self> {
        let mut entries = parse_entries(text, path)?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let (phantom_rel, _) = entries.remove("phantom").ok_or_else(|| CliError::Config {
            path: path.to_path_buf(),
            line: 0,
            message: "missing mandatory key `phantom`".into(),
        })?;
        let phantom_path = base.join(&phantom_rel);
        if !phantom_path.is_file() {
            return Err(CliError::Usage(format!(
                "phantom file {} does not exist",
                phantom_path.display()
            )));
        }
        let phantom = load_phantom_spec(&phantom_path).map_err(|e| CliError::Usage(e.to_string()))?;
        let mut cfg = Self::defaults(path.to_path_buf(), phantom_path, phantom);
        let out = entries.remove("out").map_or_else(|| "out".to_string(), |(v, _)| v);
        cfg.out_dir = base.join(out);

        let mut reader = Reader {
            entries: &mut entries,
            path,
        };
        cfg.visit(&mut reader)?;
        if let Some((key, (_, line))) = entries.into_iter().next() {
            return Err(CliError::Config {
                path: path.to_path_buf(),
                line,
                message: format!("unknown key `{key}`"),
            });
        }
        cfg.geometry.push_depth = cfg.push.focal_depth;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |e: shearwave::Error| CliError::Usage(format!("invalid config {}: {e}", self.source.display()));
        self.geometry.validate().map_err(bad)?;
        if self.geometry.push_lateral_index >= self.geometry.n_lateral {
            return Err(CliError::Usage(format!(
                "geometry.push_lateral_index {} outside {} lateral lines",
                self.geometry.push_lateral_index, self.geometry.n_lateral
            )));
        }
        self.push.validate().map_err(bad)?;
        self.rf.pulse.validate().map_err(bad)?;
        self.ncc.validate(self.geometry.n_axial).map_err(bad)?;
        self.variational.validate().map_err(bad)?;
        self.tof.validate(self.geometry.n_frames).map_err(bad)?;
        if self.median_size % 2 == 0 {
            return Err(CliError::Usage(format!("tof.median_size must be odd, got {}", self.median_size)));
        }
        if !(self.rf_noise_std >= 0.0) || !(self.roi_erosion >= 0.0) {
            return Err(CliError::Usage("rf.noise_std and roi.erosion must be >= 0".into()));
        }
        Ok(())
    }

    /// RF config with the run seed applied.
    pub fn rf_config(&self) -> RfConfig {
        RfConfig {
            seed: self.seed,
            ..self.rf
        }
    }

    pub fn noise_seed(&self) -> u64 {
        self.seed.wrapping_add(0x9e37_79b9)
    }

    /// Lateral position (phantom frame) of the push line.
    pub fn lateral_center(&self) -> f64 {
        self.push.lateral_center
    }

    /// (background, inclusion) regions; `None` for a homogeneous phantom
    /// without explicit regions.
    pub fn rois(&self) -> CliResult<Option<(Roi, Roi)>> {
        let auto = shearwave::metrics::default_rois(&self.phantom, self.lateral_center(), self.roi_erosion)
            .map_err(|e| CliError::runtime("region setup", e))?;
        let pick = |setting: RoiSetting, auto: Option<Roi>, role| match setting {
            RoiSetting::Shape(shape) => Some(Roi { shape, role }),
            RoiSetting::Auto => auto,
        };
        let bg = pick(self.roi_background, auto.map(|a| a.0), RoiRole::Background);
        let inc = pick(self.roi_inclusion, auto.map(|a| a.1), RoiRole::Inclusion);
        Ok(match (bg, inc) {
            (Some(b), Some(i)) => Some((b, i)),
            _ => None,
        })
    }

    /// Every effective setting as config lines (paths absolute).
    pub fn echo(&self) -> String {
        let mut w = Writer(String::new());
        let _ = writeln!(w.0, "phantom = {}", absolute(&self.phantom_path).display());
        let _ = writeln!(w.0, "out = {}", absolute(&self.out_dir).display());
        let mut copy = self.clone();
        copy.visit(&mut w).expect("writing never fails");
        w.0
    }
}

pub(crate) fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Raw `key -> (value, line)` pairs, duplicates rejected, manifest keys
/// dropped.
fn parse_entries(text: &str, path: &Path) -> CliResult<BTreeMap<String, (String, usize)>> {
    let mut entries = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |message: String| CliError::Config {
            path: path.to_path_buf(),
            line,
            message,
        };
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, got `{content}`")))?;
        let key = key.trim();
        if key.starts_with(MANIFEST_PREFIX) {
            continue;
        }
        if entries.insert(key.to_string(), (value.trim().to_string(), line)).is_some() {
            return Err(err(format!("duplicate key `{key}`")));
        }
    }
    Ok(entries)
}

struct Reader<'a> {
    entries: &'a mut BTreeMap<String, (String, usize)>,
    path: &'a Path,
}

impl Visitor for Reader<'_> {
    fn field<T: ConfigValue>(&mut self, key: &str, value: &mut T) -> CliResult<()> {
        if let Some((text, line)) = self.entries.remove(key) {
            *value = T::parse(&text).map_err(|message| CliError::Config {
                path: self.path.to_path_buf(),
                line,
                message: format!("{key}: {message}"),
            })?;
        }
        Ok(())
    }
}

struct Writer(String);

impl Visitor for Writer {
    fn field<T: ConfigValue>(&mut self, key: &str, value: &mut T) -> CliResult<()> {
        let _ = writeln!(self.0, "{key} = {}", value.render());
        Ok(())
    }
}
