use std::ffi::{CStr, CString};
use std::ptr;

use glfrac_ffi::*;

const TINY: &str = r#"
name = "ffi_tiny"

[geometry]
width_mm = 1.0
height_mm = 1.0
nx = 4
ny = 4
notches = [{ start_mm = [0.0, 0.5], end_mm = [0.5, 0.5] }]

[material]
lambda_kN_per_mm2 = 121.15
mu_kN_per_mm2 = 80.77
gc_kN_per_mm = 2.7e-3
length_scale_per_h = 2.0

[solver]
mode = "gl_static_local"
local_seed = "box"
local_box_mm = [0.25, 0.25, 0.75, 0.75]

[load]
increment_mm = 1e-4
steps = 2
dirichlet = [
    { boundary = "bottom", component = "x" },
    { boundary = "bottom", component = "y" },
    { boundary = "top", component = "x" },
    { boundary = "top", component = "y", factor = 1.0 },
]
reaction = { boundary = "top", component = "y" }

[output]
record_wall_time = false
"#;

fn last_error() -> String {
    unsafe { CStr::from_ptr(glfrac_last_error()).to_string_lossy().into_owned() }
}

fn iso() -> GlfracMaterial {
    glfrac_material_isotropic(121.15, 80.77, 2.7e-3, 0.0078, 1e-10)
}

#[test]
fn intact_isotropic_stress_is_linear_elastic() {
    let m = iso();
    let eps = [1e-3, -2e-4, 3e-4];
    let mut s = [0.0; 3];
    assert_eq!(unsafe { glfrac_stress(&m, eps.as_ptr(), 1.0, s.as_mut_ptr()) }, GlfracStatus::Ok);
    let tr = eps[0] + eps[1];
    let want = [m.lambda * tr + 2.0 * m.mu * eps[0], m.lambda * tr + 2.0 * m.mu * eps[1], 2.0 * m.mu * eps[2]];
    for k in 0..3 {
        assert!((s[k] - want[k]).abs() < 1e-12 * want[k].abs().max(1.0), "{k}: {} vs {}", s[k], want[k]);
    }
}

#[test]
fn tangent_matches_stress_difference() {
    let mut m = iso();
    m.chi = 50.0;
    m.alpha = 50.0;
    m.fiber_angle = 0.5;
    let eps = [8e-4, -3e-4, 2e-4];
    let d = 0.6;
    let mut c = [0.0; 9];
    assert_eq!(unsafe { glfrac_tangent(&m, eps.as_ptr(), d, c.as_mut_ptr()) }, GlfracStatus::Ok);
    let h = 1e-8;
    for j in 0..3 {
        let mut ep = eps;
        let mut em = eps;
        // engineering shear column perturbs the tensor component by half
        let step = if j == 2 { 0.5 * h } else { h };
        ep[j] += step;
        em[j] -= step;
        let (mut sp, mut sm) = ([0.0; 3], [0.0; 3]);
        unsafe {
            glfrac_stress(&m, ep.as_ptr(), d, sp.as_mut_ptr());
            glfrac_stress(&m, em.as_ptr(), d, sm.as_mut_ptr());
        }
        for i in 0..3 {
            let fd = (sp[i] - sm[i]) / (2.0 * h);
            assert!((c[3 * i + j] - fd).abs() < 1e-5 * (1.0 + fd.abs()), "C[{i}][{j}] {} vs {fd}", c[3 * i + j]);
        }
    }
}

#[test]
fn scalar_helpers() {
    let m = iso();
    let eps = [1e-3, 0.0, 0.0];
    let (mut w, mut h) = (0.0, 0.0);
    unsafe {
        assert_eq!(glfrac_energy_density(&m, eps.as_ptr(), 1.0, &mut w), GlfracStatus::Ok);
        assert_eq!(glfrac_crack_driving_state(&m, eps.as_ptr(), &mut h), GlfracStatus::Ok);
    }
    let want = 0.5 * (m.lambda + 2.0 * m.mu) * 1e-6;
    assert!((w - want).abs() < 1e-12 * want);
    assert!((h - m.l * want / m.gc).abs() < 1e-9 * h);
    let mut d = 0.0;
    assert_eq!(unsafe { glfrac_homogeneous_phase_field(0.5, 0.0, &mut d) }, GlfracStatus::Ok);
    assert!((d - 0.5).abs() < 1e-15);
    let (mut sc, mut ec) = (0.0, 0.0);
    assert_eq!(unsafe { glfrac_critical_stress(&m, 200.0, 200.0, &mut sc, &mut ec) }, GlfracStatus::Ok);
    assert!(sc > 0.0 && ec > 0.0);
}

#[test]
fn bad_arguments_report_errors() {
    let mut m = iso();
    let mut s = [0.0; 3];
    let eps = [0.0; 3];
    assert_eq!(unsafe { glfrac_stress(ptr::null(), eps.as_ptr(), 1.0, s.as_mut_ptr()) }, GlfracStatus::InvalidArgument);
    assert!(last_error().contains("null"));
    m.gc = -1.0;
    assert_eq!(unsafe { glfrac_material_validate(&m) }, GlfracStatus::InvalidArgument);
    assert!(!last_error().is_empty());
    let mut d = 0.0;
    assert_eq!(unsafe { glfrac_homogeneous_phase_field(-1.0, 0.0, &mut d) }, GlfracStatus::InvalidArgument);
}

#[test]
fn config_errors_map_to_config_status() {
    let text = CString::new(TINY.replace("nx = 4", "nx = 0")).unwrap();
    let mut sim = ptr::null_mut();
    let st = unsafe { glfrac_simulation_create(text.as_ptr(), ptr::null(), 0, &mut sim) };
    assert_eq!(st, GlfracStatus::Config);
    assert!(sim.is_null());
    assert!(last_error().contains("nx"), "{}", last_error());
    let name = CString::new("no_such_config").unwrap();
    assert_eq!(unsafe { glfrac_simulation_create(name.as_ptr(), ptr::null(), 0, &mut sim) }, GlfracStatus::Config);
}

#[test]
fn simulation_lifecycle() {
    let text = CString::new(TINY).unwrap();
    let ov = CString::new("load.steps=3").unwrap();
    let ovs = [ov.as_ptr()];
    let mut sim = ptr::null_mut();
    assert_eq!(unsafe { glfrac_simulation_create(text.as_ptr(), ovs.as_ptr(), 1, &mut sim) }, GlfracStatus::Ok, "{}", last_error());
    assert!(!sim.is_null());
    let mut r = GlfracStepResult::default();
    for n in 1..=3 {
        assert_eq!(unsafe { glfrac_simulation_step(sim, &mut r) }, GlfracStatus::Ok, "{}", last_error());
        assert_eq!(r.step, n);
        assert!((r.ubar - n as f64 * 1e-4).abs() < 1e-15);
        assert!(r.converged);
        assert!(r.reaction > 0.0 && r.strain_energy > 0.0);
    }
    assert_eq!(unsafe { glfrac_simulation_step(sim, &mut r) }, GlfracStatus::Finished);
    assert_eq!(unsafe { glfrac_simulation_steps_done(sim) }, 3);

    let mut len = 0;
    assert_eq!(unsafe { glfrac_simulation_phase_field(sim, ptr::null_mut(), 0, &mut len) }, GlfracStatus::BufferTooSmall);
    assert!(len > 0);
    let mut d = vec![0.0; len];
    assert_eq!(unsafe { glfrac_simulation_phase_field(sim, d.as_mut_ptr(), len, &mut len) }, GlfracStatus::Ok);
    assert!(d.iter().all(|&v| v > 0.0 && v <= 1.0 + 1e-12));

    let mut blen = 0;
    unsafe { glfrac_simulation_manifest(sim, ptr::null_mut(), 0, &mut blen) };
    let mut buf = vec![0 as std::ffi::c_char; blen];
    assert_eq!(unsafe { glfrac_simulation_manifest(sim, buf.as_mut_ptr(), blen, &mut blen) }, GlfracStatus::Ok);
    let json = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap();
    assert!(json.contains("\"ffi_tiny\""), "{json}");

    let dir = std::env::temp_dir().join(format!("glfrac_ffi_vtk_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let cdir = CString::new(dir.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { glfrac_simulation_write_vtk(sim, cdir.as_ptr()) }, GlfracStatus::Ok, "{}", last_error());
    assert!(std::fs::read_dir(&dir).unwrap().count() >= 2);
    std::fs::remove_dir_all(&dir).unwrap();

    unsafe { glfrac_simulation_free(sim) };
    unsafe { glfrac_simulation_free(ptr::null_mut()) };
    assert_eq!(unsafe { glfrac_simulation_steps_done(ptr::null()) }, 0);
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/glfrac.h")).unwrap();
    assert!(h.contains("#ifndef GLFRAC_H"));
    for f in [
        "glfrac_last_error",
        "glfrac_stress",
        "glfrac_tangent",
        "glfrac_simulation_create",
        "glfrac_simulation_step",
        "glfrac_simulation_free",
        "GLFRAC_STATUS_FINISHED",
    ] {
        assert!(h.contains(f), "{f}");
    }
}
