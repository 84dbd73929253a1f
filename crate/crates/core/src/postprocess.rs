//! Coarse crack indicator on the global mesh, energies and the stress-based
//! initiation criterion.

use serde::{Deserialize, Serialize};

use crate::assembly::{self, strain_at, Geometry};
use crate::error::Result;
use crate::material::{self, HistoryField, MaterialParams};
use crate::mesh::QuadMesh;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalPfMode {
    GlobalPf,
    #[default]
    Homogeneous,
}

/// `1/(1 + 2(1−κ)H)`: phase-field of a homogeneous state with history H.
pub fn homogeneous_pf(h: f64, kappa: f64) -> f64 {
    1.0 / (1.0 + 2.0 * (1.0 - kappa) * h)
}

/// Nodal average of the element-mean history.
fn nodal_history(mesh: &QuadMesh, h: &HistoryField) -> Vec<f64> {
    let mut sum = vec![0.0; mesh.n_nodes()];
    let mut cnt = vec![0usize; mesh.n_nodes()];
    for (e, c) in mesh.elements.iter().enumerate() {
        let mean = h.values[e].iter().sum::<f64>() / 4.0;
        for &n in c {
            sum[n] += mean;
            cnt[n] += 1;
        }
    }
    sum.iter().zip(&cnt).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect()
}

/// Crack indicator on the global mesh from the global displacement. The history
/// uses the material length scale; `l_g` enters only the gradient term.
pub fn homogenized_global_pf(
    mesh: &QuadMesh,
    geom: &Geometry,
    params: &MaterialParams,
    u_g: &[f64],
    l_g: f64,
    mode: GlobalPfMode,
) -> Result<Vec<f64>> {
    let h = assembly::driving_field(mesh, geom, params, u_g);
    match mode {
        GlobalPfMode::Homogeneous => Ok(nodal_history(mesh, &h).into_iter().map(|v| homogeneous_pf(v, params.kappa)).collect()),
        GlobalPfMode::GlobalPf => {
            let pg = MaterialParams { l: l_g, ..*params };
            assembly::assemble_phase_field(mesh, geom, &pg, &h, None).solve_spd()
        }
    }
}

/// `l_G = l_L · h_G / h_L`.
pub fn global_length_scale(l: f64, factor: usize) -> f64 {
    l * factor as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub strain_energy: f64,
    pub fracture_dissipation: f64,
    /// ∫ reaction dū by the trapezoidal rule
    pub external_work: f64,
}

/// Cumulative external work for a (ū, reaction) series.
pub fn external_work(series: &[(f64, f64)]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(series.len());
    let mut last = (0.0, 0.0);
    for &(u, r) in series {
        acc += 0.5 * (r + last.1) * (u - last.0);
        out.push(acc);
        last = (u, r);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitiationCriterion {
    pub sigma_c: f64,
    pub eps_c: f64,
    pub e_bar: f64,
    pub e_voigt: f64,
    pub e_reuss: f64,
    pub trigger_fraction: f64,
}

/// Area-weighted arithmetic and harmonic means of the element moduli.
pub fn voigt_reuss(moduli: &[f64], areas: &[f64]) -> (f64, f64) {
    let v: f64 = areas.iter().sum();
    let voigt = moduli.iter().zip(areas).map(|(e, a)| e * a).sum::<f64>() / v;
    let reuss = v / moduli.iter().zip(areas).map(|(e, a)| a / e).sum::<f64>();
    (voigt, reuss)
}

pub fn critical_from_averages(params: &MaterialParams, e_voigt: f64, e_reuss: f64, trigger_fraction: f64) -> InitiationCriterion {
    let e_bar = 0.5 * (e_voigt + e_reuss);
    let a = params.fiber_angle.sin();
    let stiff = params.chi * a.powi(4) + e_bar;
    InitiationCriterion {
        sigma_c: 3.0 * 3f64.sqrt() / 16.0 * (params.gc * stiff / params.l).sqrt(),
        eps_c: 3f64.sqrt() / 3.0 * (params.gc / (params.l * stiff)).sqrt(),
        e_bar,
        e_voigt,
        e_reuss,
        trigger_fraction,
    }
}

/// Criterion for a mesh whose elements carry stiffness scales of the base material.
pub fn critical_stress(params: &MaterialParams, mesh: &QuadMesh, trigger_fraction: f64) -> InitiationCriterion {
    let e0 = params.youngs_modulus();
    let moduli: Vec<f64> = mesh.stiffness_scale.iter().map(|s| s * e0).collect();
    let areas: Vec<f64> = (0..mesh.n_elements()).map(|e| mesh.element_area(e)).collect();
    let (v, r) = voigt_reuss(&moduli, &areas);
    critical_from_averages(params, v, r, trigger_fraction)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InitiationReport {
    pub triggered: bool,
    pub max_stress: f64,
    pub location: [f64; 2],
    pub candidates: Vec<usize>,
}

/// Maximum principal stress of the undamaged global state against the trigger level;
/// candidates are elements whose centers lie within `radius_elements` element sizes.
pub fn initiation_monitor(
    mesh: &QuadMesh,
    geom: &Geometry,
    params: &MaterialParams,
    u_g: &[f64],
    crit: &InitiationCriterion,
    radius_elements: f64,
) -> InitiationReport {
    let mut best = (f64::NEG_INFINITY, [0.0, 0.0]);
    for e in 0..mesh.n_elements() {
        let p = params.scaled(mesh.stiffness_scale[e]);
        let x = mesh.element_coords(e);
        for g in &geom.qp[e] {
            let s = material::stress(&strain_at(mesh, g, e, u_g), 1.0, &p);
            let smax = s.eigen().0[0];
            if smax > best.0 {
                let mut pos = [0.0; 2];
                for a in 0..4 {
                    pos[0] += g.n[a] * x[a][0];
                    pos[1] += g.n[a] * x[a][1];
                }
                best = (smax, pos);
            }
        }
    }
    let triggered = best.0 > 0.0 && best.0 >= crit.trigger_fraction * crit.sigma_c;
    let r = radius_elements * mesh.typical_size();
    let candidates = (0..mesh.n_elements())
        .filter(|&e| {
            let c = mesh.element_center(e);
            (c[0] - best.1[0]).hypot(c[1] - best.1[1]) <= r
        })
        .collect();
    InitiationReport {
        triggered,
        max_stress: best.0.max(0.0),
        location: best.1,
        candidates,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_structured_mesh;
    use proptest::prelude::*;

    fn params() -> MaterialParams {
        MaterialParams::isotropic(121.15, 80.77, 2.7e-3, 0.1, 0.0)
    }

    #[test]
    fn homogeneous_limits() {
        assert_eq!(homogeneous_pf(0.0, 1e-10), 1.0);
        assert_eq!(homogeneous_pf(0.5, 0.0), 0.5);
        assert!(homogeneous_pf(1e6, 0.0) < 1e-6);
    }

    #[test]
    fn zero_displacement_is_intact() {
        let m = build_structured_mesh(1.0, 1.0, 3, 3, &[]).unwrap();
        let g = Geometry::new(&m).unwrap();
        let u = vec![0.0; 2 * m.n_nodes()];
        for mode in [GlobalPfMode::GlobalPf, GlobalPfMode::Homogeneous] {
            let d = homogenized_global_pf(&m, &g, &params(), &u, 0.2, mode).unwrap();
            assert!(d.iter().all(|&v| (v - 1.0).abs() < 1e-14));
        }
    }

    #[test]
    fn modes_agree_on_uniform_element() {
        let m = build_structured_mesh(1.0, 1.0, 1, 1, &[]).unwrap();
        let g = Geometry::new(&m).unwrap();
        let u: Vec<f64> = m.nodes.iter().flat_map(|x| [0.01 * x[0], 0.02 * x[1]]).collect();
        let a = homogenized_global_pf(&m, &g, &params(), &u, 0.2, GlobalPfMode::GlobalPf).unwrap();
        let b = homogenized_global_pf(&m, &g, &params(), &u, 0.2, GlobalPfMode::Homogeneous).unwrap();
        assert!(a[0] < 1.0);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn paper_averages() {
        let p = params();
        let c = critical_from_averages(&p, 44.423, 27.850, 0.75);
        assert!((c.e_bar - 36.1365).abs() < 1e-12);
    }

    #[test]
    fn isotropic_branch() {
        let mut p = params();
        p.chi = 0.0;
        p.fiber_angle = 0.7;
        let c = critical_from_averages(&p, 30.0, 30.0, 0.75);
        let expect = 3.0 * 3f64.sqrt() / 16.0 * (p.gc * 30.0 / p.l).sqrt();
        assert!((c.sigma_c - expect).abs() < 1e-15 * expect);
    }

    #[test]
    fn homogeneous_field_has_equal_bounds() {
        let m = build_structured_mesh(2.0, 1.0, 4, 2, &[]).unwrap();
        let c = critical_stress(&params(), &m, 0.75);
        let e = params().youngs_modulus();
        assert!((c.e_voigt - e).abs() < 1e-12 * e && (c.e_reuss - e).abs() < 1e-12 * e && (c.e_bar - e).abs() < 1e-12 * e);
    }

    #[test]
    fn monitor_zero_load_and_zero_fraction() {
        let m = build_structured_mesh(1.0, 1.0, 4, 4, &[]).unwrap();
        let g = Geometry::new(&m).unwrap();
        let mut c = critical_stress(&params(), &m, 0.0);
        let u0 = vec![0.0; 2 * m.n_nodes()];
        assert!(!initiation_monitor(&m, &g, &params(), &u0, &c, 2.0).triggered);
        let u: Vec<f64> = m.nodes.iter().flat_map(|x| [0.0, 1e-9 * x[1]]).collect();
        assert!(initiation_monitor(&m, &g, &params(), &u, &c, 2.0).triggered);
        c.trigger_fraction = 0.75;
        assert!(!initiation_monitor(&m, &g, &params(), &u, &c, 2.0).triggered);
    }

    #[test]
    fn work_of_linear_response() {
        let w = external_work(&[(1.0, 2.0), (2.0, 4.0)]);
        assert_eq!(w, vec![1.0, 4.0]);
    }

    proptest! {
        #[test]
        fn homogeneous_pf_in_unit_interval_and_decreasing(h in 0.0f64..1e4, dh in 1e-6f64..10.0, kappa in 0.0f64..0.99) {
            let a = homogeneous_pf(h, kappa);
            let b = homogeneous_pf(h + dh, kappa);
            prop_assert!(a > 0.0 && a <= 1.0);
            prop_assert!(b < a);
        }

        #[test]
        fn reuss_below_voigt(e in proptest::collection::vec(1.0f64..300.0, 2..20)) {
            let areas = vec![1.0; e.len()];
            let (v, r) = voigt_reuss(&e, &areas);
            prop_assert!(r <= v * (1.0 + 1e-14));
        }

        #[test]
        fn stress_strain_ratio(gc in 1e-5f64..1e-2, l in 1e-3f64..10.0, chi in 0.0f64..100.0, phi in -3.0f64..3.0, e in 1.0f64..300.0) {
            let p = MaterialParams { gc, l, chi, fiber_angle: phi, ..params() };
            let c = critical_from_averages(&p, e, e, 0.75);
            let stiff = chi * phi.sin().powi(4) + c.e_bar;
            let ratio = c.sigma_c / (c.eps_c * stiff);
            let expect = (3.0 * 3f64.sqrt() / 16.0) / (3f64.sqrt() / 3.0);
            prop_assert!((ratio - expect).abs() < 1e-12);
        }
    }
}
