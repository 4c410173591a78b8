//! Pipeline stages. Each stage reads its inputs from disk, writes its
//! artifacts plus a `<stage>.manifest` into the output directory, and can be
//! re-run from that manifest alone (it embeds the effective config).

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use sha2::{Digest, Sha256};
use shearwave::data::{
    export_elasticity_map, export_mask_csv, read_stack, write_stack, DisplacementStack, ElasticityMap, ExportFormat,
    FrameStack, ScanGeometry,
};
use shearwave::elastic::{phantom_youngs_map, simulate_displacements};
use shearwave::metrics::{evaluate, Evaluation};
use shearwave::rf::{add_noise, simulate_rf_sequence};
use shearwave::sws::{focal_exclusion_mask, median_filter, sws_map, young_from_sws, SwsMap};
use shearwave::tracking::{ncc_track_sequence, variational_track_sequence, TraceRow};

use crate::config::{RunConfig, TrackerKind, MANIFEST_PREFIX};
use crate::error::{CliError, CliResult};

pub const TRUTH_DISP_FILE: &str = "truth_disp.swf";
pub const RF_FILE: &str = "rf.swf";
pub const PHANTOM_ECHO_FILE: &str = "phantom.txt";
pub const TRUTH_MAP_FILE: &str = "truth_youngs.swf";
pub const EXCLUSION_MASK_FILE: &str = "exclusion_mask.csv";
pub const RESULTS_FILE: &str = "results.csv";
pub const RESULTS_HEADER: &str = "phantom_id,tracker,snr,cnr,mae_background,mae_inclusion,n_background,n_inclusion";

pub fn disp_file(label: &str) -> String {
    format!("disp_{label}.swf")
}

pub fn loss_file(label: &str) -> String {
    format!("loss_{label}.csv")
}

pub fn map_file(label: &str) -> String {
    format!("youngs_{label}.swf")
}

pub fn raw_map_file(label: &str) -> String {
    format!("youngs_raw_{label}.swf")
}

pub fn sws_file(label: &str) -> String {
    format!("sws_{label}.swf")
}

/// Label of a displacement or map file: `disp_ncc.swf` -> `ncc`.
pub fn label_of(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    ["disp_", "youngs_raw_", "youngs_"]
        .iter()
        .find_map(|p| stem.strip_prefix(p))
        .unwrap_or(&stem)
        .to_string()
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn require_input(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} does not exist", path.display())))
    }
}

pub fn phantom_hash(cfg: &RunConfig) -> String {
    format!("{:x}", Sha256::digest(cfg.phantom.to_text().as_bytes()))
}

/// `manifest.*` metadata followed by the effective config.
fn write_manifest(cfg: &RunConfig, stage: &str, status: &str, meta: &[(&str, String)]) -> CliResult<PathBuf> {
    let mut text = String::new();
    let mut line = |k: &str, v: &str| {
        let _ = writeln!(text, "{MANIFEST_PREFIX}{k} = {v}");
    };
    line("stage", stage);
    line("status", status);
    line("version", env!("CARGO_PKG_VERSION"));
    line("phantom_sha256", &phantom_hash(cfg));
    for (k, v) in meta {
        line(k, v);
    }
    text.push_str(&cfg.echo());
    let path = cfg.out_dir.join(format!("{stage}.manifest"));
    write_text(&path, &text)?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateReport {
    pub calibration_factor: f64,
    pub peak_displacement: f64,
    pub steps: usize,
}

pub fn cmd_simulate(cfg: &RunConfig) -> CliResult<SimulateReport> {
    create_dir(&cfg.out_dir)?;
    info!("simulating wave propagation ({} frames)", cfg.geometry.n_frames);
    let sim = simulate_displacements(&cfg.phantom, &cfg.push, &cfg.geometry, &cfg.sim)
        .map_err(|e| CliError::runtime("wave simulation", e))?;
    info!("rendering RF sequence (seed {})", cfg.seed);
    let mut rf = simulate_rf_sequence(&cfg.phantom, &sim.displacements, &cfg.rf_config(), cfg.lateral_center())
        .map_err(|e| CliError::runtime("RF simulation", e))?;
    add_noise(&mut rf, cfg.rf_noise_std, cfg.noise_seed());

    let out = |name: &str| cfg.out_dir.join(name);
    let write_err = |e| CliError::runtime("writing outputs", e);
    sim.displacements.write(out(TRUTH_DISP_FILE)).map_err(write_err)?;
    rf.write(out(RF_FILE)).map_err(write_err)?;
    let truth = phantom_youngs_map(&cfg.phantom, &cfg.geometry, cfg.lateral_center());
    write_stack(truth.to_stack_array().view(), out(TRUTH_MAP_FILE)).map_err(write_err)?;
    write_text(&out(PHANTOM_ECHO_FILE), &cfg.phantom.to_text())?;

    let peak = sim.displacements.axial.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    write_manifest(
        cfg,
        "simulate",
        "ok",
        &[
            ("calibration_factor", sim.calibration_factor.to_string()),
            ("peak_body_force", sim.peak_body_force.to_string()),
            ("peak_displacement", peak.to_string()),
            ("dt", sim.dt.to_string()),
            ("steps", sim.steps.to_string()),
            ("outputs", [TRUTH_DISP_FILE, RF_FILE, TRUTH_MAP_FILE, PHANTOM_ECHO_FILE].join(",")),
        ],
    )?;
    Ok(SimulateReport {
        calibration_factor: sim.calibration_factor,
        peak_displacement: peak,
        steps: sim.steps,
    })
}

fn loss_csv(trace: &[TraceRow]) -> String {
    let mut s = String::from("frame,level,iter,similarity,penalty,total\n");
    for r in trace {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.frame, r.level, r.iter, r.similarity, r.penalty, r.total
        );
    }
    s
}

/// Tracks `rf_path` and writes `disp_<tracker>.swf` (and the loss CSV for
/// the variational tracker). Returns the displacement path.
pub fn cmd_track(cfg: &RunConfig, rf_path: &Path, tracker: TrackerKind) -> CliResult<PathBuf> {
    require_input(rf_path, "RF stack")?;
    create_dir(&cfg.out_dir)?;
    let label = tracker.name();
    let rf = FrameStack::read(rf_path, cfg.geometry).map_err(|e| CliError::runtime("reading RF stack", e))?;
    info!("tracking {} frames with {label}", rf.geometry.n_frames);
    let fail = |e| CliError::runtime(format!("{label} tracker"), e);
    let mut meta = vec![
        ("tracker", label.to_string()),
        ("input", crate::config::absolute(rf_path).display().to_string()),
        ("output", disp_file(label)),
    ];
    let disp = match tracker {
        TrackerKind::Ncc => ncc_track_sequence(&rf, &cfg.ncc).map_err(fail)?,
        TrackerKind::Variational => {
            let out = variational_track_sequence(&rf, &cfg.variational).map_err(fail)?;
            write_text(&cfg.out_dir.join(loss_file(label)), &loss_csv(&out.trace))?;
            meta.push(("loss", loss_file(label)));
            meta.push(("step_underflows", out.step_underflow.len().to_string()));
            out.displacements
        }
    };
    let path = cfg.out_dir.join(disp_file(label));
    disp.write(&path).map_err(|e| CliError::runtime("writing displacements", e))?;
    write_manifest(cfg, &format!("track_{label}"), "ok", &meta)?;
    Ok(path)
}

/// Geometry of `cfg` with the grid counts of a `(lateral, axial)` map.
fn map_geometry(cfg: &RunConfig, dims: (usize, usize)) -> ScanGeometry {
    ScanGeometry {
        n_lateral: dims.0,
        n_axial: dims.1,
        ..cfg.geometry
    }
}

fn fraction_outside(map: &ElasticityMap, exclusion: &ndarray::Array2<bool>) -> f64 {
    let total = exclusion.iter().filter(|&&e| !e).count();
    let valid = map
        .valid
        .iter()
        .zip(exclusion.iter())
        .filter(|&(&v, &e)| v && !e)
        .count();
    valid as f64 / total.max(1) as f64
}

fn speed_as_map(map: &SwsMap) -> CliResult<ElasticityMap> {
    let values = ndarray::Zip::from(&map.speed)
        .and(&map.valid)
        .map_collect(|&s, &ok| if ok { s } else { 0.0 });
    ElasticityMap::new(values, map.valid.clone()).map_err(|e| CliError::runtime("packing speed map", e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructReport {
    pub raw_path: PathBuf,
    pub filtered_path: PathBuf,
    /// Valid-pixel fractions outside the focal exclusion.
    pub raw_valid_fraction: f64,
    pub filtered_valid_fraction: f64,
}

pub fn cmd_reconstruct(cfg: &RunConfig, disp_path: &Path, label: &str) -> CliResult<ReconstructReport> {
    require_input(disp_path, "displacement stack")?;
    create_dir(&cfg.out_dir)?;
    let disp = DisplacementStack::read(disp_path, cfg.geometry)
        .map_err(|e| CliError::runtime("reading displacements", e))?;
    info!("reconstructing {label}");
    let fail = |what: &str| {
        let what = what.to_string();
        move |e| CliError::runtime(what.clone(), e)
    };
    let speed = sws_map(&disp, &cfg.tof).map_err(fail("time of flight"))?;
    if speed.valid_count() == 0 {
        return Err(CliError::runtime(
            "time of flight",
            shearwave::Error::Degenerate("no valid pixels: no propagating wave could be timed".into()),
        ));
    }
    let raw = young_from_sws(&speed, cfg.phantom.density).map_err(fail("modulus conversion"))?;
    let filtered = median_filter(&raw, cfg.median_size).map_err(fail("median filter"))?;
    let geom = disp.geometry;
    let exclusion = focal_exclusion_mask(&geom, cfg.tof.focal_exclusion_halfwidth);

    let out = |name: String| cfg.out_dir.join(name);
    let write = fail("writing maps");
    write_stack(speed_as_map(&speed)?.to_stack_array().view(), out(sws_file(label))).map_err(&write)?;
    let raw_path = out(raw_map_file(label));
    let filtered_path = out(map_file(label));
    for (map, path) in [(&raw, &raw_path), (&filtered, &filtered_path)] {
        write_stack(map.to_stack_array().view(), path).map_err(&write)?;
        for (ext, format) in [("csv", ExportFormat::Csv), ("pgm", ExportFormat::Pgm)] {
            // an all-invalid filtered map has nothing to export
            if map.valid_count() > 0 {
                export_elasticity_map(map, path.with_extension(ext), format).map_err(&write)?;
            }
        }
    }
    export_mask_csv(&exclusion, out(EXCLUSION_MASK_FILE.into())).map_err(&write)?;

    let report = ReconstructReport {
        raw_valid_fraction: fraction_outside(&raw, &exclusion),
        filtered_valid_fraction: fraction_outside(&filtered, &exclusion),
        raw_path,
        filtered_path,
    };
    write_manifest(
        cfg,
        &format!("reconstruct_{label}"),
        "ok",
        &[
            ("input", crate::config::absolute(disp_path).display().to_string()),
            ("median_size", cfg.median_size.to_string()),
            ("focal_exclusion_halfwidth", cfg.tof.focal_exclusion_halfwidth.to_string()),
            ("focal_exclusion_mask", EXCLUSION_MASK_FILE.into()),
            ("valid_fraction_raw", report.raw_valid_fraction.to_string()),
            ("valid_fraction_filtered", report.filtered_valid_fraction.to_string()),
        ],
    )?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub phantom_id: String,
    pub tracker: String,
    pub evaluation: Evaluation,
}

impl ResultRow {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        let e = &self.evaluation;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.phantom_id,
            self.tracker,
            opt(e.snr),
            opt(e.cnr),
            e.mae_background,
            opt(e.mae_inclusion),
            e.background_count,
            e.inclusion_count
        )
    }
}

fn read_map(path: &Path, what: &str) -> CliResult<ElasticityMap> {
    require_input(path, what)?;
    read_stack(path)
        .and_then(|d| ElasticityMap::from_stack_array(&d))
        .map_err(|e| CliError::runtime(format!("reading {what}"), e))
}

/// Scores `map_path` against `truth_path` and appends a row to the results
/// table in the output directory.
pub fn cmd_evaluate(cfg: &RunConfig, map_path: &Path, truth_path: &Path, label: &str) -> CliResult<ResultRow> {
    let pred = read_map(map_path, "elasticity map")?;
    let truth = read_map(truth_path, "ground-truth map")?;
    create_dir(&cfg.out_dir)?;
    let geom = map_geometry(cfg, pred.dim());
    let exclusion = focal_exclusion_mask(&geom, cfg.tof.focal_exclusion_halfwidth);
    let evaluation = evaluate(&pred, &truth, cfg.rois()?, &geom, cfg.lateral_center(), &exclusion)
        .map_err(|e| CliError::runtime("evaluation", e))?;
    let row = ResultRow {
        phantom_id: cfg.phantom_id.clone(),
        tracker: label.to_string(),
        evaluation,
    };
    let path = cfg.out_dir.join(RESULTS_FILE);
    let fresh = !path.exists();
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| CliError::io(&path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str(RESULTS_HEADER);
        text.push('\n');
    }
    text.push_str(&row.to_csv());
    text.push('\n');
    file.write_all(text.as_bytes()).map_err(|e| CliError::io(&path, e))?;
    info!("{}", row.to_csv());
    Ok(row)
}

/// simulate -> (track -> reconstruct -> evaluate) per tracker. A fresh
/// results table is started; on failure the pipeline manifest is marked
/// FAILED and the artifacts written so far are kept.
pub fn cmd_pipeline(cfg: &RunConfig) -> CliResult<Vec<ResultRow>> {
    create_dir(&cfg.out_dir)?;
    let results = cfg.out_dir.join(RESULTS_FILE);
    if results.exists() {
        fs::remove_file(&results).map_err(|e| CliError::io(&results, e))?;
    }
    let trackers = cfg.trackers.iter().map(|t| t.name()).collect::<Vec<_>>().join(",");
    write_manifest(cfg, "pipeline", "running", &[("trackers", trackers.clone())])?;

    let mut stage = String::from("simulate");
    let outcome = (|| -> CliResult<Vec<ResultRow>> {
        cmd_simulate(cfg)?;
        let mut rows = Vec::new();
        for &tracker in &cfg.trackers {
            let label = tracker.name();
            stage = format!("track_{label}");
            let disp = cmd_track(cfg, &cfg.out_dir.join(RF_FILE), tracker)?;
            stage = format!("reconstruct_{label}");
            let rec = cmd_reconstruct(cfg, &disp, label)?;
            stage = format!("evaluate_{label}");
            rows.push(cmd_evaluate(cfg, &rec.filtered_path, &cfg.out_dir.join(TRUTH_MAP_FILE), label)?);
        }
        Ok(rows)
    })();
    match &outcome {
        Ok(rows) => {
            write_manifest(
                cfg,
                "pipeline",
                "ok",
                &[("trackers", trackers), ("results", RESULTS_FILE.into()), ("rows", rows.len().to_string())],
            )?;
        }
        Err(e) => {
            write_manifest(
                cfg,
                "pipeline",
                "FAILED",
                &[("trackers", trackers), ("failed_stage", stage), ("error", e.to_string().replace('\n', " "))],
            )?;
        }
    }
    outcome
}
