//! C ABI over the glfrac library: material-point evaluation and a steppable
//! scenario handle. Every function returns a [`GlfracStatus`]; on failure the
//! message is available from [`glfrac_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use glfrac::material::{self, MaterialParams, Sym2};
use glfrac::postprocess;
use glfrac::scenario::{self, ScenarioConfig, Simulation};
use glfrac::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GlfracStatus {
    Ok = 0,
    InvalidArgument = 1,
    Config = 2,
    Mesh = 3,
    Solver = 4,
    Io = 5,
    /// the load schedule is exhausted; no step was taken
    Finished = 6,
    /// the output buffer is too small; the required length was written
    BufferTooSmall = 7,
    Panic = 8,
}

/// Material parameters in kN/mm², kN/mm, mm and radians.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct GlfracMaterial {
    pub lambda: f64,
    pub mu: f64,
    pub chi: f64,
    pub xi: f64,
    pub alpha: f64,
    pub gc: f64,
    pub l: f64,
    pub kappa: f64,
    pub fiber_angle: f64,
}

impl From<GlfracMaterial> for MaterialParams {
    fn from(m: GlfracMaterial) -> Self {
        MaterialParams {
            lambda: m.lambda,
            mu: m.mu,
            chi: m.chi,
            xi: m.xi,
            alpha: m.alpha,
            gc: m.gc,
            l: m.l,
            kappa: m.kappa,
            fiber_angle: m.fiber_angle,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct GlfracStepResult {
    pub step: usize,
    pub ubar: f64,
    pub reaction: f64,
    pub strain_energy: f64,
    pub fracture_energy: f64,
    pub dofs: usize,
    pub gl_iterations: usize,
    pub staggers: usize,
    pub corrector_solves: usize,
    pub traction_mismatch: f64,
    pub min_interface_d: f64,
    pub converged: bool,
}

/// Opaque scenario handle.
pub struct GlfracSimulation {
    sim: Simulation,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> GlfracStatus {
    match e {
        Error::Config(_) | Error::Compare(_) => GlfracStatus::Config,
        Error::Mesh(_) | Error::Jacobian { .. } | Error::Projection { .. } => GlfracStatus::Mesh,
        Error::Io(_) => GlfracStatus::Io,
        _ => GlfracStatus::Solver,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (GlfracStatus, String)>) -> GlfracStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GlfracStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(&msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            GlfracStatus::Panic
        }
    }
}

fn fail<T>(e: Error) -> Result<T, (GlfracStatus, String)> {
    Err((status_of(&e), e.to_string()))
}

fn invalid<T>(msg: &str) -> Result<T, (GlfracStatus, String)> {
    Err((GlfracStatus::InvalidArgument, msg.to_string()))
}

unsafe fn read_material(m: *const GlfracMaterial) -> Result<MaterialParams, (GlfracStatus, String)> {
    if m.is_null() {
        return invalid("material is null");
    }
    let p: MaterialParams = (*m).into();
    p.validate().map_err(|e| (GlfracStatus::InvalidArgument, e))?;
    Ok(p)
}

unsafe fn read_strain(s: *const f64) -> Result<Sym2, (GlfracStatus, String)> {
    if s.is_null() {
        return invalid("strain is null");
    }
    let v = std::slice::from_raw_parts(s, 3);
    Ok(Sym2::new(v[0], v[1], v[2]))
}

unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, (GlfracStatus, String)> {
    if s.is_null() {
        return invalid(&format!("{what} is null"));
    }
    CStr::from_ptr(s).to_str().map_err(|_| (GlfracStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Message of the last failed call on this thread; empty if none. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn glfrac_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Isotropic parameters with no structural anisotropy and fibers along x.
#[no_mangle]
pub extern "C" fn glfrac_material_isotropic(lambda: f64, mu: f64, gc: f64, l: f64, kappa: f64) -> GlfracMaterial {
    GlfracMaterial {
        lambda,
        mu,
        chi: 0.0,
        xi: 0.0,
        alpha: 0.0,
        gc,
        l,
        kappa,
        fiber_angle: 0.0,
    }
}

/// # Safety
/// `material` must be null or point to a valid `GlfracMaterial`.
#[no_mangle]
pub unsafe extern "C" fn glfrac_material_validate(material: *const GlfracMaterial) -> GlfracStatus {
    guard(|| read_material(material).map(|_| ()))
}

/// Stress tensor components (xx, yy, xy) for strain tensor components (xx, yy, xy)
/// and crack phase-field `d` (1 intact).
///
/// # Safety
/// `strain` and `stress` must point to 3 doubles; `material` to a valid material.
#[no_mangle]
pub unsafe extern "C" fn glfrac_stress(material: *const GlfracMaterial, strain: *const f64, d: f64, stress: *mut f64) -> GlfracStatus {
    guard(|| {
        let p = read_material(material)?;
        let eps = read_strain(strain)?;
        if stress.is_null() {
            return invalid("stress is null");
        }
        let s = material::stress(&eps, d, &p).components();
        ptr::copy_nonoverlapping(s.as_ptr(), stress, 3);
        Ok(())
    })
}

/// Row-major 3x3 tangent mapping engineering strain (xx, yy, 2xy) to stress (xx, yy, xy).
///
/// # Safety
/// `strain` must point to 3 doubles, `tangent` to 9; `material` to a valid material.
#[no_mangle]
pub unsafe extern "C" fn glfrac_tangent(material: *const GlfracMaterial, strain: *const f64, d: f64, tangent: *mut f64) -> GlfracStatus {
    guard(|| {
        let p = read_material(material)?;
        let eps = read_strain(strain)?;
        if tangent.is_null() {
            return invalid("tangent is null");
        }
        let c = material::tangent(&eps, d, &p);
        let flat: Vec<f64> = c.iter().flatten().copied().collect();
        ptr::copy_nonoverlapping(flat.as_ptr(), tangent, 9);
        Ok(())
    })
}

/// Degraded bulk energy density.
///
/// # Safety
/// `strain` must point to 3 doubles, `out` to 1; `material` to a valid material.
#[no_mangle]
pub unsafe extern "C" fn glfrac_energy_density(material: *const GlfracMaterial, strain: *const f64, d: f64, out: *mut f64) -> GlfracStatus {
    guard(|| {
        let p = read_material(material)?;
        let eps = read_strain(strain)?;
        if out.is_null() {
            return invalid("out is null");
        }
        *out = material::bulk_energy_density(&eps, d, &p);
        Ok(())
    })
}

/// Dimensionless crack driving state of an undegraded strain.
///
/// # Safety
/// `strain` must point to 3 doubles, `out` to 1; `material` to a valid material.
#[no_mangle]
pub unsafe extern "C" fn glfrac_crack_driving_state(material: *const GlfracMaterial, strain: *const f64, out: *mut f64) -> GlfracStatus {
    guard(|| {
        let p = read_material(material)?;
        let eps = read_strain(strain)?;
        if out.is_null() {
            return invalid("out is null");
        }
        *out = material::crack_driving_state(&eps, &p);
        Ok(())
    })
}

/// Phase-field of a homogeneous state with history `h`.
///
/// # Safety
/// `out` must point to 1 double.
#[no_mangle]
pub unsafe extern "C" fn glfrac_homogeneous_phase_field(h: f64, kappa: f64, out: *mut f64) -> GlfracStatus {
    guard(|| {
        if out.is_null() {
            return invalid("out is null");
        }
        if !(h >= 0.0) {
            return invalid("history must be non-negative");
        }
        *out = postprocess::homogeneous_pf(h, kappa);
        Ok(())
    })
}

/// Critical stress and strain from Voigt and Reuss averaged Young's moduli.
///
/// # Safety
/// `sigma_c` and `eps_c` must point to 1 double each; `material` to a valid material.
#[no_mangle]
pub unsafe extern "C" fn glfrac_critical_stress(
    material: *const GlfracMaterial,
    e_voigt: f64,
    e_reuss: f64,
    sigma_c: *mut f64,
    eps_c: *mut f64,
) -> GlfracStatus {
    guard(|| {
        let p = read_material(material)?;
        if sigma_c.is_null() || eps_c.is_null() {
            return invalid("output is null");
        }
        if !(e_voigt > 0.0 && e_reuss > 0.0) {
            return invalid("moduli must be positive");
        }
        let c = postprocess::critical_from_averages(&p, e_voigt, e_reuss, 1.0);
        *sigma_c = c.sigma_c;
        *eps_c = c.eps_c;
        Ok(())
    })
}

/// Creates a simulation from TOML text, a config file path or a bundled config name,
/// applying `n_overrides` strings of the form `section.key=value`.
///
/// # Safety
/// `config` must be a NUL-terminated string; `overrides` must point to
/// `n_overrides` NUL-terminated strings (or be null when `n_overrides` is 0);
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn glfrac_simulation_create(
    config: *const c_char,
    overrides: *const *const c_char,
    n_overrides: usize,
    out: *mut *mut GlfracSimulation,
) -> GlfracStatus {
    guard(|| {
        if out.is_null() {
            return invalid("out is null");
        }
        *out = ptr::null_mut();
        let text = read_str(config, "config")?;
        if n_overrides > 0 && overrides.is_null() {
            return invalid("overrides is null");
        }
        let mut ov = Vec::with_capacity(n_overrides);
        for i in 0..n_overrides {
            ov.push(read_str(*overrides.add(i), "override")?.to_string());
        }
        let cfg = if text.contains('\n') || text.contains('[') {
            ScenarioConfig::from_toml(text, &ov)
        } else {
            ScenarioConfig::load(text, &ov)
        };
        let cfg = cfg.or_else(fail)?;
        let sim = Simulation::new(&cfg).or_else(fail)?;
        *out = Box::into_raw(Box::new(GlfracSimulation { sim }));
        Ok(())
    })
}

/// Commits one load step. Returns `Finished` once the schedule is exhausted.
///
/// # Safety
/// `sim` must come from `glfrac_simulation_create`; `result` may be null.
#[no_mangle]
pub unsafe extern "C" fn glfrac_simulation_step(sim: *mut GlfracSimulation, result: *mut GlfracStepResult) -> GlfracStatus {
    if !sim.is_null() && (*sim).sim.finished() {
        set_error("load schedule exhausted");
        return GlfracStatus::Finished;
    }
    guard(|| {
        let Some(h) = sim.as_mut() else {
            return invalid("simulation is null");
        };
        let Some(s) = h.sim.step().or_else(fail)? else {
            return Err((GlfracStatus::Finished, "load schedule exhausted".into()));
        };
        if let Some(r) = result.as_mut() {
            *r = GlfracStepResult {
                step: s.report.step,
                ubar: s.report.ubar,
                reaction: s.report.reaction,
                strain_energy: s.report.strain_energy,
                fracture_energy: s.report.fracture_energy,
                dofs: s.report.dofs,
                gl_iterations: s.convergence.gl_iterations,
                staggers: s.convergence.staggers,
                corrector_solves: s.convergence.corrector_solves,
                traction_mismatch: s.convergence.traction_mismatch,
                min_interface_d: s.convergence.min_interface_d,
                converged: s.convergence.converged,
            };
        }
        Ok(())
    })
}

/// Number of committed steps, or 0 for a null handle.
///
/// # Safety
/// `sim` must be null or come from `glfrac_simulation_create`.
#[no_mangle]
pub unsafe extern "C" fn glfrac_simulation_steps_done(sim: *const GlfracSimulation) -> usize {
    sim.as_ref().map_or(0, |h| h.sim.steps_done())
}

/// Copies the finest nodal phase-field into `buf`. `len` receives the node count;
/// if `capacity` is smaller, nothing is copied and `BufferTooSmall` is returned.
/// Before a local domain exists the field is empty.
///
/// # Safety
/// `buf` must hold `capacity` doubles (or be null with capacity 0); `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn glfrac_simulation_phase_field(sim: *const GlfracSimulation, buf: *mut f64, capacity: usize, len: *mut usize) -> GlfracStatus {
    guard(|| {
        let Some(h) = sim.as_ref() else {
            return invalid("simulation is null");
        };
        if len.is_null() {
            return invalid("len is null");
        }
        let d: &[f64] = h.sim.phase_field().map_or(&[], |(_, d)| d);
        *len = d.len();
        if d.len() > capacity {
            return Err((GlfracStatus::BufferTooSmall, format!("need {} values", d.len())));
        }
        if !d.is_empty() {
            if buf.is_null() {
                return invalid("buf is null");
            }
            ptr::copy_nonoverlapping(d.as_ptr(), buf, d.len());
        }
        Ok(())
    })
}

/// Copies the run manifest as NUL-terminated JSON; `len` receives the byte count
/// including the terminator.
///
/// # Safety
/// `buf` must hold `capacity` bytes (or be null with capacity 0); `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn glfrac_simulation_manifest(sim: *const GlfracSimulation, buf: *mut c_char, capacity: usize, len: *mut usize) -> GlfracStatus {
    guard(|| {
        let Some(h) = sim.as_ref() else {
            return invalid("simulation is null");
        };
        if len.is_null() {
            return invalid("len is null");
        }
        let json = serde_json::to_string(h.sim.manifest()).map_err(|e| (GlfracStatus::Config, e.to_string()))?;
        let c = CString::new(json).map_err(|e| (GlfracStatus::Config, e.to_string()))?;
        let bytes = c.as_bytes_with_nul();
        *len = bytes.len();
        if bytes.len() > capacity {
            return Err((GlfracStatus::BufferTooSmall, format!("need {} bytes", bytes.len())));
        }
        if buf.is_null() {
            return invalid("buf is null");
        }
        ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, bytes.len());
        Ok(())
    })
}

/// Writes legacy VTK snapshots of the current state into the existing directory `dir`.
///
/// # Safety
/// `sim` must come from `glfrac_simulation_create`; `dir` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn glfrac_simulation_write_vtk(sim: *const GlfracSimulation, dir: *const c_char) -> GlfracStatus {
    guard(|| {
        let Some(h) = sim.as_ref() else {
            return invalid("simulation is null");
        };
        let d = read_str(dir, "dir")?;
        h.sim.write_vtk(Path::new(d)).or_else(fail)
    })
}

/// Runs a whole scenario with artifacts, like `glfrac run`.
///
/// # Safety
/// `config` must be a NUL-terminated string; `output_dir` null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn glfrac_run(config: *const c_char, output_dir: *const c_char) -> GlfracStatus {
    guard(|| {
        let src = read_str(config, "config")?;
        let cfg = ScenarioConfig::load(src, &[]).or_else(fail)?;
        let dir = if output_dir.is_null() { None } else { Some(read_str(output_dir, "output_dir")?) };
        scenario::run(&cfg, dir.map(Path::new)).map(|_| ()).or_else(fail)
    })
}

/// # Safety
/// `sim` must be null or come from `glfrac_simulation_create`, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn glfrac_simulation_free(sim: *mut GlfracSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}
