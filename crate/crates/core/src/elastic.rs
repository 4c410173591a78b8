//! Push-induced shear-wave propagation.
//!
//! A 2D scalar wave equation for the axial displacement `u(x, z, t)`,
//!
//! ```text
//! rho * u_tt = div(mu * grad u) - rho * damping * u_t + f(x, z, t)
//! ```
//!
//! is integrated with an explicit leapfrog scheme on a uniform grid. Shear
//! moduli on cell faces are harmonic means of the adjacent nodes. Graded
//! damping layers of [`SPONGE_CELLS`] cells surround the phantom and absorb
//! outgoing waves; the outermost nodes carry a first-order absorbing
//! boundary condition.

use ndarray::{Array2, Array3, Axis};
use rayon::prelude::*;

use crate::data::{DisplacementStack, ElasticityMap, PhantomSpec, ScanGeometry};
use crate::error::{Error, Result};
use crate::interp::BilinearTap;

pub const SPONGE_CELLS: usize = 15;
/// Coarsest grid spacing accepted by [`build_material_field`] (m).
pub const MAX_GRID_SPACING: f64 = 2.0e-4;
/// Nominal amplitude reflection setting the sponge strength. Kept mild: a
/// strongly damped layer acts like a clamped wall for the low-frequency wake
/// of the push and reflects it inverted.
const SPONGE_REFLECTION: f64 = 0.5;

/// Rasterized material properties on the simulation grid, indexed
/// `[lateral][axial]`, sponge included.
#[derive(Debug, Clone)]
pub struct MaterialField {
    pub h: f64,
    pub sponge_cells: usize,
    /// Phantom-frame lateral coordinate of node column 0 (m).
    pub x_origin: f64,
    /// Depth of node row 0 (m).
    pub z_origin: f64,
    pub density: f64,
    pub youngs: Array2<f64>,
    pub shear_modulus: Array2<f64>,
    pub shear_speed: Array2<f64>,
    /// Bulk attenuation plus sponge (1/s).
    pub damping: Array2<f64>,
}

impl MaterialField {
    pub fn dim(&self) -> (usize, usize) {
        self.shear_modulus.dim()
    }

    pub fn max_shear_speed(&self) -> f64 {
        self.shear_speed.iter().cloned().fold(0.0, f64::max)
    }

    /// Largest stable time step, h / (c_max * sqrt 2).
    pub fn cfl_limit(&self) -> f64 {
        self.h / (self.max_shear_speed() * std::f64::consts::SQRT_2)
    }

    pub fn lateral_position(&self, ix: usize) -> f64 {
        self.x_origin + ix as f64 * self.h
    }

    pub fn depth(&self, iz: usize) -> f64 {
        self.z_origin + iz as f64 * self.h
    }

    /// Fractional grid indices `(lateral, axial)` of a phantom-frame point.
    pub fn grid_position(&self, z: f64, x: f64) -> (f64, f64) {
        ((x - self.x_origin) / self.h, (z - self.z_origin) / self.h)
    }

    /// Phantom-frame bounds of the non-sponge region: `(z_max, x_min, x_max)`
    /// with depth starting at 0.
    pub fn interior_bounds(&self) -> (f64, f64, f64) {
        let (nx, nz) = self.dim();
        let s = self.sponge_cells;
        (
            self.depth(nz - 1 - s),
            self.lateral_position(s),
            self.lateral_position(nx - 1 - s),
        )
    }

    pub fn is_sponge(&self, ix: usize, iz: usize) -> bool {
        let (nx, nz) = self.dim();
        let s = self.sponge_cells;
        ix < s || iz < s || ix > nx - 1 - s || iz > nz - 1 - s
    }
}

/// Rasterizes `spec` on a grid of spacing `h`. The lateral grid is symmetric
/// about the phantom's lateral center; depth 0 is the transducer face.
pub fn build_material_field(spec: &PhantomSpec, h: f64) -> Result<MaterialField> {
    spec.validate()?;
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidParameter(format!("grid spacing {h} must be positive")));
    }
    if h > MAX_GRID_SPACING {
        return Err(Error::InvalidParameter(format!(
            "grid spacing {h} m coarser than {MAX_GRID_SPACING} m"
        )));
    }
    if let Some(inc) = &spec.inclusion {
        let inside = inc.center_axial - inc.radius >= 0.0
            && inc.center_axial + inc.radius <= spec.extent_axial
            && inc.center_lateral - inc.radius >= 0.0
            && inc.center_lateral + inc.radius <= spec.extent_lateral;
        if !inside {
            return Err(Error::OutOfRange(
                "inclusion disk extends outside the phantom".into(),
            ));
        }
    }

    let s = SPONGE_CELLS;
    let half_lat = (spec.extent_lateral / (2.0 * h) - 1e-9).ceil().max(1.0) as usize;
    let n_ax = (spec.extent_axial / h - 1e-9).ceil().max(1.0) as usize;
    let nx = 2 * half_lat + 1 + 2 * s;
    let nz = n_ax + 1 + 2 * s;
    let x_center = 0.5 * spec.extent_lateral;
    let x_origin = x_center - (half_lat + s) as f64 * h;
    let z_origin = -(s as f64) * h;

    let mut youngs = Array2::zeros((nx, nz));
    for ((ix, iz), e) in youngs.indexed_iter_mut() {
        let x = (x_center + (ix as f64 - (half_lat + s) as f64) * h).clamp(0.0, spec.extent_lateral);
        let z = (z_origin + iz as f64 * h).clamp(0.0, spec.extent_axial);
        *e = spec.youngs_at(z, x);
    }
    let shear_modulus = youngs.mapv(|e| spec.shear_modulus(e));
    let shear_speed = shear_modulus.mapv(|mu| (mu / spec.density).sqrt());
    let c_max = shear_speed.iter().cloned().fold(0.0, f64::max);

    let sponge_len = s as f64 * h;
    let d_max = 1.5 * c_max / sponge_len * (1.0 / SPONGE_REFLECTION).ln();
    let mut damping = Array2::zeros((nx, nz));
    for ((ix, iz), d) in damping.indexed_iter_mut() {
        let depth_cells = [
            s.saturating_sub(ix),
            (ix + s + 1).saturating_sub(nx),
            s.saturating_sub(iz),
            (iz + s + 1).saturating_sub(nz),
        ]
        .into_iter()
        .max()
        .unwrap_or(0) as f64;
        let r = depth_cells / s as f64;
        *d = 2.0 * spec.attenuation * shear_speed[[ix, iz]] + d_max * r * r;
    }

    Ok(MaterialField {
        h,
        sponge_cells: s,
        x_origin,
        z_origin,
        density: spec.density,
        youngs,
        shear_modulus,
        shear_speed,
        damping,
    })
}

/// Acoustic radiation force push parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PushConfig {
    pub focal_depth: f64,
    /// Phantom-frame lateral position of the push line (m).
    pub lateral_center: f64,
    pub duration: f64,
    pub lateral_sigma: f64,
    pub axial_sigma: f64,
    /// Body force at the focus (N/m^3).
    pub peak_body_force: f64,
}

impl PushConfig {
    /// Push wavelength times f-number for a 7 MHz, f/2 push in 1540 m/s.
    pub const DEFAULT_LATERAL_SIGMA: f64 = 1540.0 / 7e6 * 2.0;
    pub const DEFAULT_AXIAL_SIGMA: f64 = 2e-3;

    /// Default push aimed at the lateral center of `spec`.
    pub fn centered(spec: &PhantomSpec) -> Self {
        Self {
            focal_depth: 0.019,
            lateral_center: 0.5 * spec.extent_lateral,
            duration: 71e-6,
            lateral_sigma: Self::DEFAULT_LATERAL_SIGMA,
            axial_sigma: Self::DEFAULT_AXIAL_SIGMA,
            peak_body_force: 1e6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::InvalidParameter("push duration must be > 0".into()));
        }
        if !(self.lateral_sigma > 0.0 && self.axial_sigma > 0.0) {
            return Err(Error::InvalidParameter("push widths must be > 0".into()));
        }
        if !self.peak_body_force.is_finite() {
            return Err(Error::InvalidParameter("push amplitude must be finite".into()));
        }
        Ok(())
    }

    /// Body force at a phantom-frame point and time.
    pub fn evaluate(&self, z: f64, x: f64, t: f64) -> f64 {
        self.temporal(t) * self.spatial(z, x)
    }

    fn temporal(&self, t: f64) -> f64 {
        if (0.0..=self.duration).contains(&t) {
            self.peak_body_force
        } else {
            0.0
        }
    }

    fn spatial(&self, z: f64, x: f64) -> f64 {
        let dx = x - self.lateral_center;
        let dz = z - self.focal_depth;
        (-dx * dx / (2.0 * self.lateral_sigma * self.lateral_sigma)
            - dz * dz / (2.0 * self.axial_sigma * self.axial_sigma))
            .exp()
    }
}

/// Separable space-time force sampled on a material grid.
#[derive(Debug, Clone)]
pub struct PushForce {
    pub config: PushConfig,
    /// Unit-peak spatial profile on the grid nodes.
    pub profile: Array2<f64>,
}

impl PushForce {
    pub fn amplitude_at(&self, t: f64) -> f64 {
        self.config.temporal(t)
    }

    pub fn evaluate(&self, z: f64, x: f64, t: f64) -> f64 {
        self.config.evaluate(z, x, t)
    }
}

pub fn build_push_force(push: &PushConfig, field: &MaterialField) -> Result<PushForce> {
    push.validate()?;
    let (z_max, x_min, x_max) = field.interior_bounds();
    let inside = (0.0..=z_max).contains(&push.focal_depth)
        && (x_min..=x_max).contains(&push.lateral_center);
    if !inside {
        return Err(Error::OutOfRange(format!(
            "push focus (z = {}, x = {}) lies in the sponge region",
            push.focal_depth, push.lateral_center
        )));
    }
    let profile = Array2::from_shape_fn(field.dim(), |(ix, iz)| {
        push.spatial(field.depth(iz), field.lateral_position(ix))
    });
    Ok(PushForce {
        config: *push,
        profile,
    })
}

/// Displacement `u` at time `t` and velocity `v` half a step earlier.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveState {
    pub u: Array2<f64>,
    pub v: Array2<f64>,
    pub t: f64,
}

impl WaveState {
    pub fn at_rest(field: &MaterialField) -> Self {
        Self {
            u: Array2::zeros(field.dim()),
            v: Array2::zeros(field.dim()),
            t: 0.0,
        }
    }
}

fn check_cfl(field: &MaterialField, dt: f64) -> Result<()> {
    let limit = field.cfl_limit();
    if !(dt > 0.0 && dt <= limit) {
        return Err(Error::Cfl { dt, limit });
    }
    Ok(())
}

/// Advances `state` by one leapfrog step of length `dt`.
pub fn step_wave(
    state: &WaveState,
    field: &MaterialField,
    force: Option<&PushForce>,
    dt: f64,
) -> Result<WaveState> {
    check_cfl(field, dt)?;
    let mut next = state.clone();
    advance(&mut next, field, force, dt);
    ensure_finite(&next, 0)?;
    Ok(next)
}

#[inline]
fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * (a * b) / (a + b)
}

fn advance(state: &mut WaveState, field: &MaterialField, force: Option<&PushForce>, dt: f64) {
    let (nx, nz) = field.dim();
    let mu = &field.shear_modulus;
    let u = &state.u;
    let inv_h2 = 1.0 / (field.h * field.h);
    let inv_rho = 1.0 / field.density;
    let f_amp = force.map_or(0.0, |f| f.amplitude_at(state.t));
    let profile = force.map(|f| &f.profile);

    state
        .v
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut vrow)| {
            if i == 0 || i == nx - 1 {
                vrow.fill(0.0);
                return;
            }
            vrow[0] = 0.0;
            vrow[nz - 1] = 0.0;
            for j in 1..nz - 1 {
                let uc = u[[i, j]];
                let mc = mu[[i, j]];
                let flux = harmonic(mc, mu[[i + 1, j]]) * (u[[i + 1, j]] - uc)
                    - harmonic(mu[[i - 1, j]], mc) * (uc - u[[i - 1, j]])
                    + harmonic(mc, mu[[i, j + 1]]) * (u[[i, j + 1]] - uc)
                    - harmonic(mu[[i, j - 1]], mc) * (uc - u[[i, j - 1]]);
                let mut acc = flux * inv_h2 * inv_rho;
                if let Some(p) = profile {
                    acc += f_amp * p[[i, j]] * inv_rho;
                }
                let g = 0.5 * dt * field.damping[[i, j]];
                vrow[j] = ((1.0 - g) * vrow[j] + dt * acc) / (1.0 + g);
            }
        });
    let u_old = state.u.clone();
    state.u.scaled_add(dt, &state.v);
    absorb_edges(state, &u_old, field, dt);
    state.t += dt;
}

/// First-order Mur condition on the outermost nodes: outgoing waves leave
/// the grid instead of reflecting off a fixed edge.
fn absorb_edges(state: &mut WaveState, u_old: &Array2<f64>, field: &MaterialField, dt: f64) {
    let (nx, nz) = field.dim();
    let h = field.h;
    let coef = |c: f64| (c * dt - h) / (c * dt + h);
    let u = &mut state.u;
    // (edge, inner neighbour) pairs along both axes
    for j in 0..nz {
        for (e, n) in [(0, 1), (nx - 1, nx - 2)] {
            let k = coef(field.shear_speed[[e, j]]);
            u[[e, j]] = u_old[[n, j]] + k * (u[[n, j]] - u_old[[e, j]]);
        }
    }
    for i in 0..nx {
        for (e, n) in [(0, 1), (nz - 1, nz - 2)] {
            let k = coef(field.shear_speed[[i, e]]);
            u[[i, e]] = u_old[[i, n]] + k * (u[[i, n]] - u_old[[i, e]]);
        }
    }
    for i in 0..nx {
        for j in [0, nz - 1] {
            state.v[[i, j]] = (u[[i, j]] - u_old[[i, j]]) / dt;
        }
    }
    for j in 0..nz {
        for i in [0, nx - 1] {
            state.v[[i, j]] = (u[[i, j]] - u_old[[i, j]]) / dt;
        }
    }
}

fn ensure_finite(state: &WaveState, step: usize) -> Result<()> {
    if state.u.iter().chain(state.v.iter()).all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { t: state.t, step })
    }
}

/// Discrete energy per unit out-of-plane length (J/m) of a state produced
/// with time step `dt`: kinetic energy of the half-step velocity plus the
/// face strain energy taken between `u(t - dt)` and `u(t)`. This is the
/// quantity the leapfrog scheme conserves exactly without damping.
pub fn wave_energy(state: &WaveState, field: &MaterialField, dt: f64) -> f64 {
    let (nx, nz) = field.dim();
    let mu = &field.shear_modulus;
    let h2 = field.h * field.h;
    let prev = |i: usize, j: usize| state.u[[i, j]] - dt * state.v[[i, j]];
    let mut kinetic = 0.0;
    let mut strain = 0.0;
    for i in 0..nx {
        for j in 0..nz {
            let v = state.v[[i, j]];
            kinetic += v * v;
            if i + 1 < nx {
                let d = state.u[[i + 1, j]] - state.u[[i, j]];
                let dp = prev(i + 1, j) - prev(i, j);
                strain += harmonic(mu[[i, j]], mu[[i + 1, j]]) * d * dp;
            }
            if j + 1 < nz {
                let d = state.u[[i, j + 1]] - state.u[[i, j]];
                let dp = prev(i, j + 1) - prev(i, j);
                strain += harmonic(mu[[i, j]], mu[[i, j + 1]]) * d * dp;
            }
        }
    }
    0.5 * field.density * kinetic * h2 + 0.5 * strain
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationConfig {
    /// Grid spacing (m).
    pub h: f64,
    /// Time step (s); `None` picks the largest step dividing the frame
    /// interval with `cfl_safety` margin.
    pub dt: Option<f64>,
    pub cfl_safety: f64,
    /// Peak |u| after the linear push calibration; `None` keeps the
    /// configured push amplitude.
    pub target_peak: Option<f64>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            h: 1.5e-4,
            dt: None,
            cfl_safety: 0.6,
            target_peak: Some(20e-6),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub displacements: DisplacementStack,
    pub dt: f64,
    pub steps: usize,
    /// Multiplier applied to the configured push amplitude.
    pub calibration_factor: f64,
    /// Effective push amplitude after calibration (N/m^3).
    pub peak_body_force: f64,
    /// Largest |u| before calibration (m).
    pub raw_peak: f64,
}

/// Simulates the push and samples the axial displacement on the scan grid
/// once per frame interval. Frame 0 is the pre-push state.
pub fn simulate_displacements(
    spec: &PhantomSpec,
    push: &PushConfig,
    geom: &ScanGeometry,
    cfg: &SimulationConfig,
) -> Result<SimulationOutput> {
    geom.validate()?;
    let field = build_material_field(spec, cfg.h)?;
    let force = build_push_force(push, &field)?;
    let frame_dt = geom.frame_interval();
    let dt = match cfg.dt {
        Some(dt) => dt,
        None => {
            let n_sub = (frame_dt / (cfg.cfl_safety * field.cfl_limit())).ceil().max(1.0);
            frame_dt / n_sub
        }
    };
    check_cfl(&field, dt)?;

    let taps: Vec<BilinearTap> = (0..geom.n_lateral)
        .flat_map(|l| (0..geom.n_axial).map(move |k| (l, k)))
        .map(|(l, k)| {
            let x = push.lateral_center + geom.lateral_offset(l);
            let (gx, gz) = field.grid_position(geom.depth(k), x);
            BilinearTap::new(gx, gz, field.dim())
        })
        .collect();

    let frame_steps: Vec<usize> = (0..geom.n_frames)
        .map(|k| (k as f64 * frame_dt / dt).round() as usize)
        .collect();
    let total_steps = *frame_steps.last().unwrap_or(&0);

    let mut axial = Array3::zeros(geom.stack_dims());
    let mut state = WaveState::at_rest(&field);
    let mut next_frame = 0;
    for step in 0..=total_steps {
        while next_frame < geom.n_frames && frame_steps[next_frame] == step {
            let mut frame = axial.index_axis_mut(Axis(0), next_frame);
            let u = state.u.view();
            frame
                .as_slice_mut()
                .expect("standard layout")
                .par_iter_mut()
                .zip(taps.par_iter())
                .for_each(|(out, tap)| *out = tap.sample(u));
            next_frame += 1;
        }
        if step < total_steps {
            advance(&mut state, &field, Some(&force), dt);
            if step % 16 == 15 || step + 1 == total_steps {
                ensure_finite(&state, step + 1)?;
            }
        }
    }

    let raw_peak = axial.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let calibration_factor = match cfg.target_peak {
        Some(target) => {
            if raw_peak == 0.0 {
                return Err(Error::Calibration);
            }
            target / raw_peak
        }
        None => 1.0,
    };
    if calibration_factor != 1.0 {
        axial.mapv_inplace(|v| v * calibration_factor);
    }
    let displacements = DisplacementStack::new(*geom, axial, None)?;
    Ok(SimulationOutput {
        displacements,
        dt,
        steps: total_steps,
        calibration_factor,
        peak_body_force: push.peak_body_force * calibration_factor,
        raw_peak,
    })
}

/// True Young's modulus of `spec` sampled on the scan grid, all valid.
pub fn phantom_youngs_map(
    spec: &PhantomSpec,
    geom: &ScanGeometry,
    lateral_center: f64,
) -> ElasticityMap {
    let values = Array2::from_shape_fn(geom.frame_dims(), |(l, k)| {
        let x = lateral_center + geom.lateral_offset(l);
        spec.youngs_at(geom.depth(k), x)
    });
    ElasticityMap {
        valid: Array2::from_elem(values.dim(), true),
        values,
    }
}
