//! Declarative scenarios: TOML configuration, run orchestration, artifacts and
//! run-to-run comparison.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adaptivity::{self, AdaptConfig, AdaptEvent, Restart};
use crate::assembly::{self, BoundaryConditions, DirichletCondition, Geometry, Selector};
use crate::coupling::RobinMode;
use crate::error::{Error, Result};
use crate::gl::{self, GLConfig, GLIterLog, GLProblem, GLState, Heterogeneity};
use crate::material::{HistoryField, MaterialParams};
use crate::mesh::{self, NodeKey, QuadMesh, Seam};
use crate::postprocess::{self, GlobalPfMode, InitiationCriterion, InitiationReport};
use crate::single_scale::{self, SingleScaleProblem, SingleScaleState, StaggeredConfig, StepReport};
use crate::vtk::{self, Field};

const BUNDLED: &[(&str, &str)] = &[
    ("example1_shear", include_str!("../configs/example1_shear.toml")),
    ("example2_tension_p30", include_str!("../configs/example2_tension_p30.toml")),
    ("example2_tension_m30", include_str!("../configs/example2_tension_m30.toml")),
    ("example2_case_a", include_str!("../configs/example2_case_a.toml")),
    ("example3_lpanel", include_str!("../configs/example3_lpanel.toml")),
    ("example4_den", include_str!("../configs/example4_den.toml")),
];

/// TOL_d values of the shear study, available as `example1_shear_tol_d_<value>`.
pub const EXAMPLE1_TOL_D: [f64; 4] = [0.9, 0.85, 0.8, 0.7];

pub fn bundled_names() -> Vec<String> {
    let mut v: Vec<String> = BUNDLED.iter().map(|(n, _)| n.to_string()).collect();
    v.extend(EXAMPLE1_TOL_D.iter().map(|t| format!("example1_shear_tol_d_{t}")));
    v
}

/// Text of a bundled config.
pub fn bundled(name: &str) -> Option<String> {
    if let Some((_, s)) = BUNDLED.iter().find(|(n, _)| *n == name) {
        return Some(s.to_string());
    }
    let t: f64 = name.strip_prefix("example1_shear_tol_d_")?.parse().ok()?;
    if !EXAMPLE1_TOL_D.contains(&t) {
        return None;
    }
    let base = BUNDLED[0].1;
    Some(base.replace("tol_d = 0.85", &format!("tol_d = {t}")).replace("name = \"example1_shear\"", &format!("name = \"{name}\"")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub geometry: GeometryConfig,
    pub material: MaterialConfig,
    pub solver: SolverConfig,
    pub load: LoadConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub width_mm: f64,
    pub height_mm: f64,
    pub nx: usize,
    pub ny: usize,
    /// rectangle removed from the domain (x0, y0, x1, y1)
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutout_mm: Option<[f64; 4]>,
    #[serde(default)]
    pub notches: Vec<NotchConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inclusions: Option<InclusionConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NotchConfig {
    pub start_mm: [f64; 2],
    pub end_mm: [f64; 2],
}

/// Circular hard inclusions placed uniformly at random inside `region_mm`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InclusionConfig {
    pub region_mm: [f64; 4],
    pub count: usize,
    pub radius_mm: f64,
    pub modulus_ratio: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialConfig {
    #[serde(rename = "lambda_kN_per_mm2")]
    pub lambda: f64,
    #[serde(rename = "mu_kN_per_mm2")]
    pub mu: f64,
    #[serde(rename = "chi_kN_per_mm2", default)]
    pub chi: f64,
    #[serde(rename = "alpha_kN_per_mm2", default)]
    pub alpha: f64,
    #[serde(rename = "xi_kN_per_mm2", default)]
    pub xi: f64,
    #[serde(rename = "gc_kN_per_mm")]
    pub gc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_scale_mm: Option<f64>,
    /// length scale as a multiple of the finest element size
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_scale_per_h: Option<f64>,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default)]
    pub fiber_angle_deg: f64,
}

fn default_kappa() -> f64 {
    1e-10
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    SingleScale,
    GlStaticLocal,
    GlAdaptive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalSeed {
    /// elements around interior notch tips
    Notch,
    Elements,
    /// elements whose centres lie in `local_box_mm`
    Box,
    Initiation,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingleScalePf {
    #[default]
    Everywhere,
    /// phase-field only where the GL modes would place the local domain
    SeedRegion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub mode: SolverMode,
    #[serde(default = "one")]
    pub refinement_factor: usize,
    #[serde(default)]
    pub robin_mode: RobinMode,
    #[serde(default = "d_newton_tol")]
    pub newton_tol: f64,
    #[serde(default = "d_stagger_tol")]
    pub stagger_tol: f64,
    #[serde(default = "d_max_stagger")]
    pub max_stagger: usize,
    #[serde(default = "d_max_newton")]
    pub max_newton: usize,
    #[serde(default = "d_gl_tol")]
    pub gl_tol: f64,
    #[serde(default = "d_gl_max")]
    pub gl_max_iterations: usize,
    #[serde(default = "d_tol_d")]
    pub tol_d: f64,
    #[serde(default = "d_max_corrector")]
    pub max_corrector: usize,
    #[serde(default)]
    pub halo: usize,
    #[serde(default)]
    pub restart: Restart,
    #[serde(default)]
    pub global_pf: GlobalPfMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_seed: Option<LocalSeed>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub local_elements: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_box_mm: Option<[f64; 4]>,
    /// radius in global element sizes; 1 for notch seeds, 2 for initiation seeds
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_radius_elements: Option<f64>,
    #[serde(default = "d_trigger")]
    pub trigger_fraction: f64,
    #[serde(default)]
    pub single_scale_phase_field: SingleScalePf,
}

fn one() -> usize {
    1
}
fn d_newton_tol() -> f64 {
    1e-10
}
fn d_stagger_tol() -> f64 {
    1e-6
}
fn d_max_stagger() -> usize {
    2000
}
fn d_max_newton() -> usize {
    40
}
fn d_gl_tol() -> f64 {
    1e-6
}
fn d_gl_max() -> usize {
    100
}
fn d_tol_d() -> f64 {
    0.85
}
fn d_max_corrector() -> usize {
    50
}
fn d_trigger() -> f64 {
    0.75
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Bottom,
    Top,
    Left,
    Right,
    Segment,
    Point,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    X,
    Y,
}

impl Component {
    fn index(self) -> usize {
        match self {
            Component::X => 0,
            Component::Y => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirichletSpec {
    pub boundary: Boundary,
    pub component: Component,
    /// prescribed value is `factor · ū`
    #[serde(default)]
    pub factor: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_mm: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to_mm: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at_mm: Option<[f64; 2]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactionSpec {
    pub boundary: Boundary,
    pub component: Component,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_mm: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to_mm: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at_mm: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadConfig {
    pub increment_mm: f64,
    pub steps: usize,
    pub dirichlet: Vec<DirichletSpec>,
    pub reaction: ReactionSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directory: Option<PathBuf>,
    /// VTK snapshot every n steps; 0 disables snapshots
    #[serde(default)]
    pub vtk_every: usize,
    /// false writes 0 in the wall_time column so CSVs are bit-reproducible
    #[serde(default = "yes")]
    pub record_wall_time: bool,
}

fn yes() -> bool {
    true
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: None,
            vtk_every: 0,
            record_wall_time: true,
        }
    }
}

fn selector(b: Boundary, from: Option<[f64; 2]>, to: Option<[f64; 2]>, at: Option<[f64; 2]>, field: &str) -> Result<Selector> {
    Ok(match b {
        Boundary::Bottom => Selector::Bottom,
        Boundary::Top => Selector::Top,
        Boundary::Left => Selector::Left,
        Boundary::Right => Selector::Right,
        Boundary::Segment => match (from, to) {
            (Some(from), Some(to)) => Selector::Segment { from, to },
            _ => return Err(Error::Config(format!("{field}: boundary \"segment\" needs from_mm and to_mm"))),
        },
        Boundary::Point => match at {
            Some(p) => Selector::Segment { from: p, to: p },
            None => return Err(Error::Config(format!("{field}: boundary \"point\" needs at_mm"))),
        },
    })
}

fn bad(field: &str, msg: &str) -> Error {
    Error::Config(format!("{field}: {msg}"))
}

impl ScenarioConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: ScenarioConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a file, or a bundled config when `source` names one and no such file exists.
    pub fn load(source: &str, overrides: &[String]) -> Result<Self> {
        let path = Path::new(source);
        let text = if path.exists() {
            std::fs::read_to_string(path)?
        } else if let Some(t) = bundled(source) {
            t
        } else {
            return Err(Error::Config(format!("{source}: no such file or bundled config (bundled: {})", bundled_names().join(", "))));
        };
        Self::from_toml(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        if !(g.width_mm > 0.0 && g.height_mm > 0.0) {
            return Err(bad("geometry.width_mm/height_mm", "must be positive"));
        }
        if g.nx == 0 || g.ny == 0 {
            return Err(bad("geometry.nx/ny", "must be at least 1"));
        }
        if let Some(inc) = &g.inclusions {
            if !(inc.radius_mm > 0.0 && inc.modulus_ratio > 0.0) {
                return Err(bad("geometry.inclusions", "radius_mm and modulus_ratio must be positive"));
            }
        }
        let m = &self.material;
        match (m.length_scale_mm, m.length_scale_per_h) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(bad("material", "give exactly one of length_scale_mm and length_scale_per_h"));
            }
            (Some(l), None) | (None, Some(l)) if !(l > 0.0) => return Err(bad("material.length_scale", "must be positive")),
            _ => {}
        }
        self.params().validate().map_err(|e| bad("material", &e))?;
        let s = &self.solver;
        if s.refinement_factor == 0 {
            return Err(bad("solver.refinement_factor", "must be at least 1"));
        }
        if !(s.tol_d > 0.0 && s.tol_d < 1.0) {
            return Err(bad("solver.tol_d", "must lie in (0, 1)"));
        }
        if !(s.gl_tol > 0.0 && s.stagger_tol > 0.0 && s.newton_tol > 0.0) {
            return Err(bad("solver", "tolerances must be positive"));
        }
        if !(0.0..=1.0).contains(&s.trigger_fraction) {
            return Err(bad("solver.trigger_fraction", "must lie in [0, 1]"));
        }
        let needs_seed = s.mode != SolverMode::SingleScale || s.single_scale_phase_field == SingleScalePf::SeedRegion;
        if needs_seed {
            match self.seed_kind() {
                None => return Err(bad("solver.local_seed", "required for Global-Local modes when no notch is given")),
                Some(LocalSeed::Elements) if s.local_elements.is_empty() => {
                    return Err(bad("solver.local_elements", "required by local_seed = \"elements\""));
                }
                Some(LocalSeed::Box) if s.local_box_mm.is_none() => {
                    return Err(bad("solver.local_box_mm", "required by local_seed = \"box\""));
                }
                Some(LocalSeed::Notch) if self.geometry.notches.is_empty() => {
                    return Err(bad("solver.local_seed", "\"notch\" needs at least one notch"));
                }
                Some(LocalSeed::Initiation) if s.single_scale_phase_field == SingleScalePf::SeedRegion => {
                    return Err(bad("solver.single_scale_phase_field", "\"seed_region\" cannot use an initiation seed"));
                }
                _ => {}
            }
        }
        let l = &self.load;
        if !(l.increment_mm.is_finite() && l.increment_mm >= 0.0) {
            return Err(bad("load.increment_mm", "must be finite and non-negative"));
        }
        if l.steps == 0 {
            return Err(bad("load.steps", "must be at least 1"));
        }
        for (i, d) in l.dirichlet.iter().enumerate() {
            selector(d.boundary, d.from_mm, d.to_mm, d.at_mm, &format!("load.dirichlet[{i}]"))?;
        }
        let r = &l.reaction;
        selector(r.boundary, r.from_mm, r.to_mm, r.at_mm, "load.reaction")?;
        Ok(())
    }

    pub fn seed_kind(&self) -> Option<LocalSeed> {
        self.solver.local_seed.or((!self.geometry.notches.is_empty()).then_some(LocalSeed::Notch))
    }

    /// Size of the finest elements (local mesh, or the single-scale mesh).
    pub fn fine_h(&self) -> f64 {
        let g = &self.geometry;
        (g.width_mm / g.nx as f64).min(g.height_mm / g.ny as f64) / self.solver.refinement_factor as f64
    }

    pub fn length_scale(&self) -> f64 {
        let m = &self.material;
        m.length_scale_mm.unwrap_or_else(|| m.length_scale_per_h.unwrap_or(0.0) * self.fine_h())
    }

    pub fn params(&self) -> MaterialParams {
        let m = &self.material;
        MaterialParams {
            lambda: m.lambda,
            mu: m.mu,
            chi: m.chi,
            xi: m.xi,
            alpha: m.alpha,
            gc: m.gc,
            l: self.length_scale(),
            kappa: m.kappa,
            fiber_angle: m.fiber_angle_deg.to_radians(),
        }
    }

    pub fn boundary_conditions(&self) -> Result<BoundaryConditions> {
        let conditions = self
            .load
            .dirichlet
            .iter()
            .enumerate()
            .map(|(i, d)| {
                Ok(DirichletCondition {
                    selector: selector(d.boundary, d.from_mm, d.to_mm, d.at_mm, &format!("load.dirichlet[{i}]"))?,
                    component: d.component.index(),
                    factor: d.factor,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let r = &self.load.reaction;
        Ok(BoundaryConditions {
            domain: [0.0, 0.0, self.geometry.width_mm, self.geometry.height_mm],
            conditions,
            loaded: Some((selector(r.boundary, r.from_mm, r.to_mm, r.at_mm, "load.reaction")?, r.component.index())),
        })
    }

    pub fn stagger(&self) -> StaggeredConfig {
        let s = &self.solver;
        StaggeredConfig {
            newton_tol: s.newton_tol,
            stagger_tol: s.stagger_tol,
            max_stagger: s.max_stagger,
            max_newton: s.max_newton,
        }
    }

    pub fn gl_config(&self) -> GLConfig {
        GLConfig {
            tol_gl: self.solver.gl_tol,
            max_iterations: self.solver.gl_max_iterations,
            robin_mode: self.solver.robin_mode,
            stagger: self.stagger(),
        }
    }

    pub fn adapt_config(&self) -> AdaptConfig {
        AdaptConfig {
            tol_d: self.solver.tol_d,
            max_corrector: self.solver.max_corrector,
            halo: self.solver.halo,
            restart: self.solver.restart,
        }
    }

    pub fn inclusion_centers(&self) -> Vec<[f64; 2]> {
        let Some(inc) = &self.geometry.inclusions else {
            return Vec::new();
        };
        let mut rng = ChaCha8Rng::seed_from_u64(inc.seed);
        let r = inc.region_mm;
        (0..inc.count).map(|_| [rng.random_range(r[0]..=r[2]), rng.random_range(r[1]..=r[3])]).collect()
    }

    /// Young's-modulus scale as a function of position, if inclusions are present.
    pub fn heterogeneity(&self) -> Option<Heterogeneity> {
        let inc = self.geometry.inclusions?;
        let centers = self.inclusion_centers();
        Some(Arc::new(move |p: [f64; 2]| {
            if centers.iter().any(|c| (p[0] - c[0]).hypot(p[1] - c[1]) <= inc.radius_mm) {
                inc.modulus_ratio
            } else {
                1.0
            }
        }))
    }

    /// Global mesh refined `refine` times in each direction.
    pub fn build_mesh(&self, refine: usize) -> Result<QuadMesh> {
        let g = &self.geometry;
        let seams: Vec<Seam> = g.notches.iter().map(|n| Seam { start: n.start_mm, end: n.end_mm }).collect();
        let cut = g.cutout_mm;
        let keep = move |c: [f64; 2]| match cut {
            Some(b) => !(c[0] > b[0] && c[0] < b[2] && c[1] > b[1] && c[1] < b[3]),
            None => true,
        };
        let mut m = mesh::build_structured_mesh_masked(g.width_mm, g.height_mm, g.nx * refine, g.ny * refine, &seams, &keep)?;
        if let Some(h) = self.heterogeneity() {
            m.stiffness_scale = (0..m.n_elements()).map(|e| h(m.element_center(e))).collect();
        }
        Ok(m)
    }

    /// Seed region on the global mesh for the non-initiation seeds.
    pub fn static_seed(&self, global: &QuadMesh) -> Result<Vec<usize>> {
        let s = &self.solver;
        let h = global.typical_size();
        let region: Vec<usize> = match self.seed_kind() {
            Some(LocalSeed::Elements) => {
                if let Some(&e) = s.local_elements.iter().find(|&&e| e >= global.n_elements()) {
                    return Err(bad("solver.local_elements", &format!("element {e} outside the global mesh")));
                }
                s.local_elements.clone()
            }
            Some(LocalSeed::Box) => {
                let b = s.local_box_mm.unwrap_or_default();
                (0..global.n_elements())
                    .filter(|&e| {
                        let c = global.element_center(e);
                        c[0] >= b[0] && c[0] <= b[2] && c[1] >= b[1] && c[1] <= b[3]
                    })
                    .collect()
            }
            Some(LocalSeed::Notch) => {
                let r = s.seed_radius_elements.unwrap_or(1.0) * h;
                let tips = notch_tips(self);
                (0..global.n_elements())
                    .filter(|&e| {
                        let c = global.element_center(e);
                        tips.iter().any(|t| (c[0] - t[0]).hypot(c[1] - t[1]) <= r)
                    })
                    .collect()
            }
            Some(LocalSeed::Initiation) | None => return Err(bad("solver.local_seed", "no static seed available")),
        };
        if region.is_empty() {
            return Err(bad("solver.local_seed", "seed selects no elements"));
        }
        Ok(region)
    }
}

/// Seam end points that lie inside the domain.
fn notch_tips(cfg: &ScenarioConfig) -> Vec<[f64; 2]> {
    let (w, h) = (cfg.geometry.width_mm, cfg.geometry.height_mm);
    let tol = 1e-9 * w.hypot(h);
    let inside = |p: [f64; 2]| p[0] > tol && p[0] < w - tol && p[1] > tol && p[1] < h - tol;
    cfg.geometry
        .notches
        .iter()
        .flat_map(|n| [n.start_mm, n.end_mm])
        .filter(|&p| inside(p))
        .collect()
}

/// `section.key=value`; the value is parsed as TOML, falling back to a bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?}: expected key=value")))?;
    let value = match format!("v = {}", raw.trim()).parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or(toml::Value::String(raw.trim().to_string())),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let keys: Vec<&str> = path.trim().split('.').collect();
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        cur = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {spec:?}: {k} is not a section")))?;
    }
    cur.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// Per-step irreversibility and bounds diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Bounds {
    pub step: usize,
    pub d_min: f64,
    pub d_max: f64,
    /// largest nodal increase of d against the previous step (≤ 0 when irreversible)
    pub d_rise: f64,
    /// largest quadrature-point decrease of H
    pub h_drop: f64,
}

fn bounds_of(step: usize, d: &[f64], d_prev: &[Option<f64>], h: &HistoryField, h_prev: &[Option<[f64; 4]>]) -> Bounds {
    let mut b = Bounds {
        step,
        d_min: f64::INFINITY,
        d_max: f64::NEG_INFINITY,
        d_rise: f64::NEG_INFINITY,
        h_drop: f64::NEG_INFINITY,
    };
    for (i, &v) in d.iter().enumerate() {
        b.d_min = b.d_min.min(v);
        b.d_max = b.d_max.max(v);
        if let Some(o) = d_prev[i] {
            b.d_rise = b.d_rise.max(v - o);
        }
    }
    for (e, q) in h.values.iter().enumerate() {
        if let Some(o) = h_prev[e] {
            for k in 0..4 {
                b.h_drop = b.h_drop.max(o[k] - q[k]);
            }
        }
    }
    if b.d_rise == f64::NEG_INFINITY {
        b.d_rise = 0.0;
    }
    if b.h_drop == f64::NEG_INFINITY {
        b.h_drop = 0.0;
    }
    b
}

/// Local fields addressed by mesh-independent keys, to compare across domain growth.
struct LocalSnapshot {
    d: HashMap<NodeKey, f64>,
    h: HashMap<(usize, usize), [f64; 4]>,
}

impl LocalSnapshot {
    fn of(p: &GLProblem, s: &GLState) -> Self {
        let f2 = p.local.factor * p.local.factor;
        LocalSnapshot {
            d: p.local.keys.iter().cloned().zip(s.d_l.iter().copied()).collect(),
            h: (0..p.local.mesh.n_elements()).map(|e| ((p.local.parent[e], e % f2), s.h_l.values[e])).collect(),
        }
    }

    fn bounds(&self, p: &GLProblem, s: &GLState) -> Bounds {
        let f2 = p.local.factor * p.local.factor;
        let d_prev: Vec<Option<f64>> = p.local.keys.iter().map(|k| self.d.get(k).copied()).collect();
        let h_prev: Vec<Option<[f64; 4]>> = (0..p.local.mesh.n_elements()).map(|e| self.h.get(&(p.local.parent[e], e % f2)).copied()).collect();
        bounds_of(s.step, &s.d_l, &d_prev, &s.h_l, &h_prev)
    }
}

struct Csv {
    w: BufWriter<File>,
}

impl Csv {
    fn create(path: &Path, header: &str) -> Result<Self> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{header}")?;
        w.flush()?;
        Ok(Csv { w })
    }

    fn row(&mut self, fields: &[String]) -> Result<()> {
        writeln!(self.w, "{}", fields.join(","))?;
        self.w.flush()?;
        Ok(())
    }
}

/// Per-step solver summary written to convergence.csv.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepConvergence {
    pub step: usize,
    pub gl_iterations: usize,
    pub staggers: usize,
    pub corrector_solves: usize,
    pub traction_mismatch: f64,
    /// minimum local phase-field over the interface nodes (1 when there is no local domain)
    pub min_interface_d: f64,
    pub converged: bool,
}

struct Artifacts {
    series: Csv,
    convergence: Csv,
    iterations: Csv,
    adapt: Csv,
    bounds: Csv,
    wall_time: bool,
}

impl Artifacts {
    fn create(dir: &Path, wall_time: bool) -> Result<Self> {
        std::fs::create_dir_all(dir.join("vtk"))?;
        Ok(Artifacts {
            series: Csv::create(&dir.join("series.csv"), "step,ubar,reaction,strain_energy,fracture_energy,dofs,wall_time")?,
            convergence: Csv::create(
                &dir.join("convergence.csv"),
                "step,gl_iterations,staggers,corrector_solves,traction_mismatch,min_interface_d,converged",
            )?,
            iterations: Csv::create(&dir.join("gl_iterations.csv"), "step,iteration,du_gamma,dlambda,staggers,wall_time")?,
            adapt: Csv::create(&dir.join("adapt.csv"), "step,cycle,promoted_count,local_dofs,promoted")?,
            bounds: Csv::create(&dir.join("bounds.csv"), "step,d_min,d_max,d_rise,h_drop")?,
            wall_time,
        })
    }

    fn wall(&self, t: f64) -> f64 {
        if self.wall_time {
            t
        } else {
            0.0
        }
    }

    fn step(&mut self, r: &StepReport, c: &StepConvergence, b: Option<&Bounds>) -> Result<()> {
        let wall = self.wall(r.wall_time);
        self.series.row(&[
            r.step.to_string(),
            r.ubar.to_string(),
            r.reaction.to_string(),
            r.strain_energy.to_string(),
            r.fracture_energy.to_string(),
            r.dofs.to_string(),
            wall.to_string(),
        ])?;
        self.convergence.row(&[
            c.step.to_string(),
            c.gl_iterations.to_string(),
            c.staggers.to_string(),
            c.corrector_solves.to_string(),
            c.traction_mismatch.to_string(),
            c.min_interface_d.to_string(),
            c.converged.to_string(),
        ])?;
        if let Some(b) = b {
            self.bounds.row(&[b.step.to_string(), b.d_min.to_string(), b.d_max.to_string(), b.d_rise.to_string(), b.h_drop.to_string()])?;
        }
        Ok(())
    }

    fn gl_log(&mut self, log: &[GLIterLog]) -> Result<()> {
        for l in log {
            let wall = self.wall(l.wall_time);
            self.iterations.row(&[
                l.step.to_string(),
                l.k.to_string(),
                l.du_gamma.to_string(),
                l.dlambda.to_string(),
                l.staggers.to_string(),
                wall.to_string(),
            ])?;
        }
        Ok(())
    }

    fn adapt(&mut self, events: &[AdaptEvent]) -> Result<()> {
        for e in events {
            let ids: Vec<String> = e.promoted.iter().map(|i| i.to_string()).collect();
            self.adapt.row(&[
                e.step.to_string(),
                e.cycle.to_string(),
                e.promoted.len().to_string(),
                e.local_dofs.to_string(),
                ids.join(" "),
            ])?;
        }
        Ok(())
    }

}

fn element_mean(h: &HistoryField) -> Vec<f64> {
    h.values.iter().map(|q| q.iter().sum::<f64>() / 4.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InitiationInfo {
    pub criterion: InitiationCriterion,
    /// monitor evaluated at ū = 1 mm; the global problem is linear so stress scales with ū
    pub unit_load: InitiationReport,
    pub trigger_step: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Manifest {
    pub name: String,
    pub version: String,
    pub status: String,
    pub steps_completed: usize,
    pub config: ScenarioConfig,
    pub length_scale_mm: f64,
    pub fine_h_mm: f64,
    pub global_nodes: usize,
    pub global_elements: usize,
    pub seed_elements: Vec<usize>,
    pub inclusion_centers_mm: Vec<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initiation: Option<InitiationInfo>,
    pub final_local_elements: Vec<usize>,
}

pub struct RunOutcome {
    pub dir: PathBuf,
    pub reports: Vec<StepReport>,
    pub convergence: Vec<StepConvergence>,
    pub bounds: Vec<Bounds>,
    pub adapt_events: Vec<AdaptEvent>,
    pub manifest: Manifest,
}

/// Everything produced by one committed load step.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub report: StepReport,
    pub convergence: StepConvergence,
    /// absent for purely elastic global steps, which carry no phase-field
    pub bounds: Option<Bounds>,
    pub events: Vec<AdaptEvent>,
    pub log: Vec<GLIterLog>,
}

enum Engine {
    Single {
        problem: Box<SingleScaleProblem>,
        state: SingleScaleState,
    },
    /// linear global steps before the initiation trigger
    Elastic {
        global: QuadMesh,
        u1: Vec<f64>,
        r1: f64,
        w1: f64,
        trigger: Option<usize>,
        region: Vec<usize>,
    },
    Gl {
        problem: Box<GLProblem>,
        state: GLState,
    },
    Spent,
}

/// A scenario advanced one load step at a time.
pub struct Simulation {
    cfg: ScenarioConfig,
    engine: Engine,
    step: usize,
    start: Instant,
    manifest: Manifest,
}

/// Elements of the refined mesh whose centres fall in the given global elements.
fn refined_mask(global: &QuadMesh, region: &[usize], fine: &QuadMesh) -> Vec<bool> {
    let boxes: Vec<[f64; 4]> = region
        .iter()
        .map(|&e| {
            let x = global.element_coords(e);
            let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
            for p in x {
                b = [b[0].min(p[0]), b[1].min(p[1]), b[2].max(p[0]), b[3].max(p[1])];
            }
            b
        })
        .collect();
    (0..fine.n_elements())
        .map(|e| {
            let c = fine.element_center(e);
            boxes.iter().any(|b| c[0] > b[0] && c[0] < b[2] && c[1] > b[1] && c[1] < b[3])
        })
        .collect()
}

/// Linear global solution at ū = 1 on the whole global mesh.
fn unit_global_solution(cfg: &ScenarioConfig, global: &QuadMesh) -> Result<(Geometry, Vec<f64>)> {
    let geom = Geometry::new(global)?;
    let bcs = cfg.boundary_conditions()?;
    let mut u = vec![0.0; 2 * global.n_nodes()];
    single_scale::newton_displacement(global, &geom, &cfg.params(), None, &bcs.constraints(global, 1.0), &mut u, &cfg.stagger())?;
    Ok((geom, u))
}

/// GL engine on `region`, optionally warm-started from a global field at step `step`.
fn gl_engine(cfg: &ScenarioConfig, global: QuadMesh, region: &[usize], warm: Option<(Vec<f64>, f64, usize)>) -> Result<Engine> {
    let problem = GLProblem::new(
        global,
        cfg.params(),
        cfg.boundary_conditions()?,
        region,
        cfg.solver.refinement_factor,
        cfg.heterogeneity(),
        cfg.solver.robin_mode,
        0,
    )?;
    let mut state = GLState::initial(&problem);
    if let Some((u0, ubar0, step)) = warm {
        state.step = step;
        state.ubar = ubar0;
        state.u_l = adaptivity::interpolate_global(&problem.global, &u0, &problem.local);
        state.u_gamma = assembly::gather(&u0, &problem.im.g_nodes);
        state.u_g = u0;
    }
    Ok(Engine::Gl {
        problem: Box::new(problem),
        state,
    })
}

impl Simulation {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let global = cfg.build_mesh(1)?;
        let mut manifest = Manifest {
            name: cfg.name.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            status: "running".into(),
            steps_completed: 0,
            config: cfg.clone(),
            length_scale_mm: cfg.length_scale(),
            fine_h_mm: cfg.fine_h(),
            global_nodes: global.n_nodes(),
            global_elements: global.n_elements(),
            seed_elements: Vec::new(),
            inclusion_centers_mm: cfg.inclusion_centers(),
            initiation: None,
            final_local_elements: Vec::new(),
        };
        let engine = match cfg.solver.mode {
            SolverMode::SingleScale => {
                let fine = cfg.build_mesh(cfg.solver.refinement_factor)?;
                let mut problem = SingleScaleProblem::new(fine, cfg.params(), cfg.boundary_conditions()?)?;
                if cfg.solver.single_scale_phase_field == SingleScalePf::SeedRegion {
                    let seed = cfg.static_seed(&global)?;
                    problem.pf_region = Some(refined_mask(&global, &seed, &problem.mesh));
                    manifest.seed_elements = seed;
                }
                let state = SingleScaleState::initial(&problem);
                Engine::Single {
                    problem: Box::new(problem),
                    state,
                }
            }
            _ if cfg.seed_kind() == Some(LocalSeed::Initiation) => {
                let params = cfg.params();
                let (geom, u1) = unit_global_solution(cfg, &global)?;
                let crit = postprocess::critical_stress(&params, &global, cfg.solver.trigger_fraction);
                let unit = postprocess::initiation_monitor(&global, &geom, &params, &u1, &crit, cfg.solver.seed_radius_elements.unwrap_or(2.0));
                let level = crit.trigger_fraction * crit.sigma_c;
                let trigger = (1..=cfg.load.steps).find(|&n| {
                    let s = unit.max_stress * cfg.load.increment_mm * n as f64;
                    s > 0.0 && s >= level
                });
                if trigger.is_some() && unit.candidates.is_empty() {
                    return Err(bad("solver.seed_radius_elements", "initiation candidate region is empty"));
                }
                let bcs = cfg.boundary_conditions()?;
                let f1 = assembly::assemble_displacement(&global, &geom, &params, None, &u1, None, false).rhs;
                let r1 = bcs.loaded_dofs(&global).iter().map(|&i| f1[i]).sum();
                let w1 = assembly::strain_energy(&global, &geom, &params, None, &u1, None);
                manifest.seed_elements = unit.candidates.clone();
                manifest.initiation = Some(InitiationInfo {
                    criterion: crit,
                    unit_load: unit.clone(),
                    trigger_step: trigger,
                });
                Engine::Elastic {
                    global,
                    u1,
                    r1,
                    w1,
                    trigger,
                    region: unit.candidates,
                }
            }
            _ => {
                let region = cfg.static_seed(&global)?;
                manifest.seed_elements = region.clone();
                gl_engine(cfg, global, &region, None)?
            }
        };
        Ok(Simulation {
            cfg: cfg.clone(),
            engine,
            step: 0,
            start: Instant::now(),
            manifest,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    /// Number of committed load steps.
    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn finished(&self) -> bool {
        self.step >= self.cfg.load.steps
    }

    /// Mesh and nodal values of the finest phase-field (the local mesh in GL modes);
    /// `None` while the run is still purely elastic.
    pub fn phase_field(&self) -> Option<(&QuadMesh, &[f64])> {
        match &self.engine {
            Engine::Single { problem, state } => Some((&problem.mesh, &state.d)),
            Engine::Gl { problem, state } => Some((&problem.local.mesh, &state.d_l)),
            _ => None,
        }
    }

    /// Problem and committed state of a single-scale run.
    pub fn single_scale(&self) -> Option<(&SingleScaleProblem, &SingleScaleState)> {
        match &self.engine {
            Engine::Single { problem, state } => Some((problem, state)),
            _ => None,
        }
    }

    /// Problem and committed state of a GL run once the local domain exists.
    pub fn global_local(&self) -> Option<(&GLProblem, &GLState)> {
        match &self.engine {
            Engine::Gl { problem, state } => Some((problem, state)),
            _ => None,
        }
    }

    /// Global elements currently replaced by the local domain.
    pub fn local_region(&self) -> &[usize] {
        match &self.engine {
            Engine::Gl { problem, .. } => problem.region(),
            _ => &[],
        }
    }

    /// Commits the next load step; `None` once the schedule is exhausted.
    pub fn step(&mut self) -> Result<Option<StepOutput>> {
        if self.finished() {
            return Ok(None);
        }
        let n = self.step + 1;
        let ubar = self.cfg.load.increment_mm * n as f64;
        if let Engine::Elastic { trigger: Some(t), .. } = &self.engine {
            if *t == n {
                let Engine::Elastic { global, u1, region, .. } = std::mem::replace(&mut self.engine, Engine::Spent) else {
                    unreachable!()
                };
                info!("initiation triggered at step {n}, seed {region:?}");
                let ubar0 = self.cfg.load.increment_mm * (n - 1) as f64;
                let u0: Vec<f64> = u1.iter().map(|v| v * ubar0).collect();
                self.engine = gl_engine(&self.cfg, global, &region, Some((u0, ubar0, n - 1)))?;
            }
        }
        let wall = || self.start.elapsed().as_secs_f64();
        let out = match &mut self.engine {
            Engine::Single { problem, state } => {
                let (next, sweeps, ok) = single_scale::solve_load_step(problem, state, ubar, &self.cfg.stagger())?;
                let report = single_scale::report(problem, &next, wall(), sweeps, ok);
                let d_prev: Vec<Option<f64>> = state.d.iter().map(|&v| Some(v)).collect();
                let h_prev: Vec<Option<[f64; 4]>> = state.history.values.iter().map(|&v| Some(v)).collect();
                let bounds = bounds_of(n, &next.d, &d_prev, &next.history, &h_prev);
                *state = next;
                StepOutput {
                    report,
                    convergence: StepConvergence {
                        step: n,
                        gl_iterations: 0,
                        staggers: sweeps,
                        corrector_solves: 0,
                        traction_mismatch: 0.0,
                        min_interface_d: 1.0,
                        converged: ok,
                    },
                    bounds: Some(bounds),
                    events: Vec::new(),
                    log: Vec::new(),
                }
            }
            Engine::Elastic { global, r1, w1, .. } => StepOutput {
                report: StepReport {
                    step: n,
                    ubar,
                    reaction: ubar * *r1,
                    strain_energy: ubar * ubar * *w1,
                    fracture_energy: 0.0,
                    dofs: 2 * global.n_nodes(),
                    wall_time: wall(),
                    staggers: 0,
                    converged: true,
                },
                convergence: StepConvergence {
                    step: n,
                    gl_iterations: 0,
                    staggers: 0,
                    corrector_solves: 0,
                    traction_mismatch: 0.0,
                    min_interface_d: 1.0,
                    converged: true,
                },
                bounds: None,
                events: Vec::new(),
                log: Vec::new(),
            },
            Engine::Gl { problem, state } => {
                let snap = LocalSnapshot::of(problem, state);
                let mut log = Vec::new();
                let gl_cfg = self.cfg.gl_config();
                let (next, events, solves) = if self.cfg.solver.mode == SolverMode::GlAdaptive {
                    let adapt = self.cfg.adapt_config();
                    adapt.validate()?;
                    let o = adaptivity::predictor_corrector_step(problem, state, ubar, &gl_cfg, &adapt, &mut log)?;
                    (o.state, o.events, o.solves)
                } else {
                    (gl::gl_load_step(problem, state, ubar, &gl_cfg, &mut log)?, Vec::new(), 1)
                };
                let (w, f) = gl::energies(problem, &next);
                let report = StepReport {
                    step: n,
                    ubar,
                    reaction: gl::reaction(problem, &next),
                    strain_energy: w,
                    fracture_energy: f,
                    dofs: problem.dofs(),
                    wall_time: wall(),
                    staggers: log.last().map_or(0, |l| l.staggers),
                    converged: next.converged,
                };
                let convergence = StepConvergence {
                    step: n,
                    gl_iterations: next.iterations,
                    staggers: log.iter().map(|l| l.staggers).sum(),
                    corrector_solves: solves,
                    traction_mismatch: gl::traction_mismatch(problem, &next),
                    min_interface_d: problem.im.l_nodes.iter().map(|&i| next.d_l[i]).fold(1.0, f64::min),
                    converged: next.converged,
                };
                let bounds = snap.bounds(problem, &next);
                *state = next;
                self.manifest.final_local_elements = problem.region().to_vec();
                StepOutput {
                    report,
                    convergence,
                    bounds: Some(bounds),
                    events,
                    log,
                }
            }
            Engine::Spent => unreachable!(),
        };
        self.step = n;
        self.manifest.steps_completed = n;
        Ok(Some(out))
    }

    /// Legacy VTK snapshots of the current state into `dir`.
    pub fn write_vtk(&self, dir: &Path) -> Result<()> {
        let n = self.step;
        let title = format!("{} step {n}", self.cfg.name);
        let path = |kind: &str| dir.join(format!("{kind}_{n:05}.vtk"));
        match &self.engine {
            Engine::Single { problem, state } => {
                let h = element_mean(&state.history);
                vtk::write(
                    &path("single"),
                    &problem.mesh,
                    &title,
                    &[Field::vector("u", &state.u), Field::scalar("d", &state.d)],
                    &[Field::scalar("H", &h), Field::scalar("stiffness_scale", &problem.mesh.stiffness_scale)],
                )
            }
            Engine::Elastic { global, u1, .. } => {
                let u: Vec<f64> = u1.iter().map(|v| v * self.cfg.load.increment_mm * n as f64).collect();
                vtk::write(&path("global"), global, &title, &[Field::vector("u", &u)], &[Field::scalar("stiffness_scale", &global.stiffness_scale)])
            }
            Engine::Gl { problem, state } => {
                let l_g = postprocess::global_length_scale(problem.params.l, self.cfg.solver.refinement_factor);
                let dg = postprocess::homogenized_global_pf(&problem.global, &problem.ggeom, &problem.params, &state.u_g, l_g, self.cfg.solver.global_pf)?;
                let fict: Vec<f64> = problem.fictitious.iter().map(|&f| f as u8 as f64).collect();
                vtk::write(
                    &path("global"),
                    &problem.global,
                    &title,
                    &[Field::vector("u", &state.u_g), Field::scalar("d_G", &dg)],
                    &[Field::scalar("fictitious", &fict), Field::scalar("stiffness_scale", &problem.global.stiffness_scale)],
                )?;
                let h = element_mean(&state.h_l);
                vtk::write(
                    &path("local"),
                    &problem.local.mesh,
                    &title,
                    &[Field::vector("u", &state.u_l), Field::scalar("d", &state.d_l)],
                    &[Field::scalar("H", &h), Field::scalar("stiffness_scale", &problem.local.mesh.stiffness_scale)],
                )
            }
            Engine::Spent => Ok(()),
        }
    }
}

/// Executes the scenario and writes its artifacts to `dir` (the config's directory,
/// or `runs/<name>` when neither is given). On solver failure the manifest records
/// the error and the rows of every committed step remain on disk.
pub fn run(cfg: &ScenarioConfig, dir: Option<&Path>) -> Result<RunOutcome> {
    let dir = dir
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.directory.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name));
    let mut art = Artifacts::create(&dir, cfg.output.record_wall_time)?;
    let mut sim = Simulation::new(cfg)?;
    write_manifest(&dir, sim.manifest())?;
    info!("scenario {} ({:?}) -> {}", cfg.name, cfg.solver.mode, dir.display());
    let mut out = RunOutcome {
        dir: dir.clone(),
        reports: Vec::new(),
        convergence: Vec::new(),
        bounds: Vec::new(),
        adapt_events: Vec::new(),
        manifest: sim.manifest().clone(),
    };
    let result = (|| -> Result<()> {
        while let Some(s) = sim.step()? {
            art.gl_log(&s.log)?;
            art.adapt(&s.events)?;
            art.step(&s.report, &s.convergence, s.bounds.as_ref())?;
            let n = s.report.step;
            if snapshot_due(cfg, n) {
                sim.write_vtk(&dir.join("vtk"))?;
            }
            info!(
                "step {n} ubar={:.4e} reaction={:.6e} gl_iter={} local_elements={} min_interface_d={:.3}",
                s.report.ubar,
                s.report.reaction,
                s.convergence.gl_iterations,
                sim.local_region().len(),
                s.convergence.min_interface_d
            );
            out.reports.push(s.report);
            out.convergence.push(s.convergence);
            out.bounds.extend(s.bounds);
            out.adapt_events.extend(s.events);
        }
        Ok(())
    })();
    let mut manifest = sim.manifest().clone();
    manifest.status = match &result {
        Ok(()) => "completed".into(),
        Err(e) => {
            warn!("run failed after {} steps: {e}", sim.steps_done());
            format!("failed: {e}")
        }
    };
    write_manifest(&dir, &manifest)?;
    out.manifest = manifest;
    result.map(|_| out)
}

fn write_manifest(dir: &Path, m: &Manifest) -> Result<()> {
    let text = serde_json::to_string_pretty(m).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(())
}

fn snapshot_due(cfg: &ScenarioConfig, step: usize) -> bool {
    let n = cfg.output.vtk_every;
    n > 0 && (step % n == 0 || step == cfg.load.steps)
}

/// One row of series.csv.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SeriesRow {
    pub step: usize,
    pub ubar: f64,
    pub reaction: f64,
    pub strain_energy: f64,
    pub fracture_energy: f64,
    pub dofs: usize,
    pub wall_time: f64,
}

fn csv_rows(path: &Path) -> Result<Vec<BTreeMap<String, String>>> {
    let f = File::open(path).map_err(|e| Error::Compare(format!("{}: {e}", path.display())))?;
    let mut lines = BufReader::new(f).lines();
    let header: Vec<String> = match lines.next() {
        Some(h) => h?.split(',').map(str::to_string).collect(),
        None => return Err(Error::Compare(format!("{}: empty file", path.display()))),
    };
    let mut out = Vec::new();
    for l in lines {
        let l = l?;
        if l.is_empty() {
            continue;
        }
        out.push(header.iter().cloned().zip(l.split(',').map(str::to_string)).collect());
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(row: &BTreeMap<String, String>, key: &str, path: &Path) -> Result<T> {
    row.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Compare(format!("{}: missing or invalid {key}", path.display())))
}

pub fn read_series(dir: &Path) -> Result<Vec<SeriesRow>> {
    let path = dir.join("series.csv");
    csv_rows(&path)?
        .iter()
        .map(|r| {
            Ok(SeriesRow {
                step: num(r, "step", &path)?,
                ubar: num(r, "ubar", &path)?,
                reaction: num(r, "reaction", &path)?,
                strain_energy: num(r, "strain_energy", &path)?,
                fracture_energy: num(r, "fracture_energy", &path)?,
                dofs: num(r, "dofs", &path)?,
                wall_time: num(r, "wall_time", &path)?,
            })
        })
        .collect()
}

fn read_mismatch(dir: &Path) -> Result<BTreeMap<usize, f64>> {
    let path = dir.join("convergence.csv");
    if !path.exists() {
        return Ok(BTreeMap::new());
    }
    csv_rows(&path)?
        .iter()
        .map(|r| Ok((num(r, "step", &path)?, num(r, "traction_mismatch", &path)?)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Deviation {
    pub max_abs: f64,
    /// max |a − b| over max |a|, |b|; 0 when both series vanish
    pub relative: f64,
    pub worst_step: usize,
}

fn deviation(pairs: &[(usize, f64, f64)]) -> Deviation {
    let mut d = Deviation {
        max_abs: 0.0,
        relative: 0.0,
        worst_step: pairs.first().map_or(0, |p| p.0),
    };
    let mut scale: f64 = 0.0;
    for &(s, a, b) in pairs {
        scale = scale.max(a.abs()).max(b.abs());
        if (a - b).abs() > d.max_abs {
            d.max_abs = (a - b).abs();
            d.worst_step = s;
        }
    }
    if d.max_abs > 0.0 {
        d.relative = d.max_abs / scale;
    }
    d
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareReport {
    pub steps_compared: usize,
    pub reaction: Deviation,
    pub strain_energy: Deviation,
    pub fracture_energy: Deviation,
    /// largest interface traction mismatch of each run over the compared steps
    pub interface_mismatch: [f64; 2],
    pub tolerance: f64,
    pub pass: bool,
}

impl std::fmt::Display for CompareReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "steps_compared = {}", self.steps_compared)?;
        for (name, d) in [("reaction", &self.reaction), ("strain_energy", &self.strain_energy), ("fracture_energy", &self.fracture_energy)] {
            writeln!(f, "{name}.max_abs = {:e}", d.max_abs)?;
            writeln!(f, "{name}.relative = {:e}", d.relative)?;
            writeln!(f, "{name}.worst_step = {}", d.worst_step)?;
        }
        writeln!(f, "interface_mismatch.a = {:e}", self.interface_mismatch[0])?;
        writeln!(f, "interface_mismatch.b = {:e}", self.interface_mismatch[1])?;
        writeln!(f, "tolerance = {:e}", self.tolerance)?;
        write!(f, "result = {}", if self.pass { "PASS" } else { "FAIL" })
    }
}

/// Compares the steps both runs completed. Differing load levels at a common step
/// are a schedule mismatch.
pub fn compare(a: &Path, b: &Path, tolerance: f64) -> Result<CompareReport> {
    let sa = read_series(a)?;
    let sb = read_series(b)?;
    let by_step: BTreeMap<usize, SeriesRow> = sb.iter().map(|r| (r.step, *r)).collect();
    let mut pairs = Vec::new();
    for ra in &sa {
        if let Some(rb) = by_step.get(&ra.step) {
            let scale = ra.ubar.abs().max(rb.ubar.abs());
            if (ra.ubar - rb.ubar).abs() > 1e-12 * scale {
                return Err(Error::Compare(format!("mismatched schedules at step {}: ubar {} vs {}", ra.step, ra.ubar, rb.ubar)));
            }
            pairs.push((*ra, *rb));
        }
    }
    if pairs.is_empty() {
        return Err(Error::Compare("runs share no load steps".into()));
    }
    let pick = |f: fn(&SeriesRow) -> f64| -> Vec<(usize, f64, f64)> { pairs.iter().map(|(x, y)| (x.step, f(x), f(y))).collect() };
    let reaction = deviation(&pick(|r| r.reaction));
    let strain_energy = deviation(&pick(|r| r.strain_energy));
    let fracture_energy = deviation(&pick(|r| r.fracture_energy));
    let steps: Vec<usize> = pairs.iter().map(|p| p.0.step).collect();
    let mm = |m: BTreeMap<usize, f64>| steps.iter().filter_map(|s| m.get(s)).fold(0.0, |acc: f64, &v| acc.max(v));
    let interface_mismatch = [mm(read_mismatch(a)?), mm(read_mismatch(b)?)];
    let pass = [reaction, strain_energy, fracture_energy].iter().all(|d| d.relative <= tolerance);
    Ok(CompareReport {
        steps_compared: pairs.len(),
        reaction,
        strain_energy,
        fracture_energy,
        interface_mismatch,
        tolerance,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(mode: &str) -> String {
        format!(
            r#"
name = "tiny"
[geometry]
width_mm = 1.0
height_mm = 1.0
nx = 4
ny = 4
[material]
lambda_kN_per_mm2 = 121.15
mu_kN_per_mm2 = 80.77
gc_kN_per_mm = 2.7e-3
length_scale_mm = 0.5
[solver]
mode = "{mode}"
local_seed = "elements"
local_elements = [5, 6, 9, 10]
[load]
increment_mm = 1e-4
steps = 2
dirichlet = [
    {{ boundary = "bottom", component = "x" }},
    {{ boundary = "bottom", component = "y" }},
    {{ boundary = "top", component = "y", factor = 1.0 }},
]
reaction = {{ boundary = "top", component = "y" }}
[output]
record_wall_time = false
"#
        )
    }

    #[test]
    fn bundled_configs_parse() {
        for name in bundled_names() {
            let c = ScenarioConfig::from_toml(&bundled(&name).unwrap(), &[]).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(c.name, name);
        }
        let c = ScenarioConfig::load("example1_shear_tol_d_0.7", &[]).unwrap();
        assert_eq!(c.solver.tol_d, 0.7);
        assert!(bundled("example1_shear_tol_d_0.5").is_none());
    }

    #[test]
    fn example_parameters() {
        let c = ScenarioConfig::load("example1_shear", &[]).unwrap();
        let p = c.params();
        assert_eq!((p.lambda, p.mu, p.gc, p.kappa), (121.15, 80.77, 2.7e-3, 1e-10));
        assert_eq!((p.chi, p.alpha, p.xi), (0.0, 0.0, 0.0));
        assert_eq!(c.load.increment_mm, 5e-5);
        assert!((p.l - 2.0 * c.fine_h()).abs() < 1e-15);
        let d = ScenarioConfig::load("example4_den", &[]).unwrap();
        let p = d.params();
        assert_eq!((d.geometry.width_mm, d.geometry.height_mm), (20.0, 10.0));
        assert_eq!((p.lambda, p.mu, p.gc, p.chi, p.alpha, p.xi), (12.0, 8.0, 1e-3, 50.0, 50.0, 0.0));
        assert!((p.fiber_angle + 15f64.to_radians()).abs() < 1e-15);
        assert!((d.load.increment_mm * d.load.steps as f64 - 0.0145).abs() < 1e-12);
        let tips = notch_tips(&d);
        assert_eq!(tips, vec![[5.0, 5.5], [15.0, 3.5]]);
    }

    #[test]
    fn overrides_and_diagnostics() {
        let c = ScenarioConfig::from_toml(&tiny("single_scale"), &["solver.tol_d=0.7".into(), "solver.robin_mode=robin".into()]).unwrap();
        assert_eq!(c.solver.tol_d, 0.7);
        assert_eq!(c.solver.robin_mode, RobinMode::Robin);
        let e = ScenarioConfig::from_toml(&tiny("single_scale"), &["solver.tol_d=1.5".into()]).unwrap_err();
        assert!(e.to_string().contains("solver.tol_d"), "{e}");
        let e = ScenarioConfig::from_toml(&tiny("single_scale"), &["material.bogus=1".into()]).unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
        let e = ScenarioConfig::from_toml(&tiny("multi_scale"), &[]).unwrap_err();
        assert!(e.to_string().contains("multi_scale"), "{e}");
        assert!(ScenarioConfig::from_toml(&tiny("gl_adaptive"), &["solver.local_seed=\"notch\"".into()]).is_err());
        assert!(ScenarioConfig::from_toml(&tiny("single_scale"), &["nonsense".into()]).is_err());
    }

    #[test]
    fn notch_seed_surrounds_tip() {
        let c = ScenarioConfig::load("example2_tension_p30", &[]).unwrap();
        let g = c.build_mesh(1).unwrap();
        let seed = c.static_seed(&g).unwrap();
        assert_eq!(seed.len(), 4);
        for e in seed {
            let x = g.element_center(e);
            assert!((x[0] - 0.5).abs() < 0.05 && (x[1] - 0.5).abs() < 0.05);
        }
    }

    #[test]
    fn l_panel_mesh_and_inclusions() {
        let c = ScenarioConfig::load("example3_lpanel", &[]).unwrap();
        let g = c.build_mesh(1).unwrap();
        assert_eq!(g.n_elements(), 2500 - 625);
        let hard = g.stiffness_scale.iter().filter(|&&s| s == 10.0).count();
        assert!(hard > 0 && hard < g.n_elements() / 3);
        let bcs = c.boundary_conditions().unwrap();
        assert_eq!(bcs.loaded_dofs(&g).len(), 1);
        assert_eq!(c.inclusion_centers(), c.inclusion_centers());
    }

    #[test]
    fn zero_load_run_and_self_compare() {
        let dir = tempfile::tempdir().unwrap();
        let c = ScenarioConfig::from_toml(&tiny("gl_static_local"), &["load.increment_mm=0.0".into(), "load.steps=1".into()]).unwrap();
        let out = run(&c, Some(dir.path())).unwrap();
        assert_eq!(out.reports.len(), 1);
        assert!(out.reports[0].reaction.abs() < 1e-20);
        assert!(out.reports[0].fracture_energy.abs() < 1e-20);
        assert!(out.bounds[0].d_min > 1.0 - 1e-12);
        for f in ["manifest.json", "series.csv", "convergence.csv", "adapt.csv", "bounds.csv", "gl_iterations.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let r = compare(dir.path(), dir.path(), 0.0).unwrap();
        assert!(r.pass);
        assert_eq!(r.reaction.max_abs, 0.0);
    }

    #[test]
    fn mismatched_schedules_rejected() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let c = ScenarioConfig::from_toml(&tiny("single_scale"), &[]).unwrap();
        run(&c, Some(a.path())).unwrap();
        let c2 = ScenarioConfig::from_toml(&tiny("single_scale"), &["load.increment_mm=2e-4".into()]).unwrap();
        run(&c2, Some(b.path())).unwrap();
        assert!(matches!(compare(a.path(), b.path(), 1.0), Err(Error::Compare(_))));
    }

    #[test]
    fn deviation_metric() {
        let d = deviation(&[(1, 1.0, 1.0), (2, 2.0, 2.5), (3, 4.0, 4.0)]);
        assert_eq!(d.max_abs, 0.5);
        assert_eq!(d.worst_step, 2);
        assert!((d.relative - 0.125).abs() < 1e-15);
        assert_eq!(deviation(&[(1, 0.0, 0.0)]).relative, 0.0);
    }
}
